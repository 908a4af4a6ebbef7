//! Randomized invariants across the numeric, model, loss and metric layers.

use kdcollab::distillation::{combined_loss, relation_kd_grad, relation_kd_loss, response_kd_grad, response_kd_loss};
use kdcollab::harness::topk_accuracy;
use kdcollab::models::{count_params, deserialize, init_model, serialize, serialized_len, ModelSpec};
use kdcollab::numerics::{argmax, grad_check, kl_divergence, softmax_t, Rng, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn sized_matrix(scale: f64) -> impl Strategy<Value = Tensor> {
    (1usize..6, 2usize..7).prop_flat_map(move |(r, c)| matrix(r, c, scale))
}

fn spec() -> impl Strategy<Value = ModelSpec> {
    (1usize..6, prop::collection::vec(1usize..6, 1..4), 1usize..4, 2usize..6).prop_flat_map(|(d, trunk, h, b)| {
        let depth = trunk.len();
        (0..depth).prop_map(move |tap| ModelSpec::new(d, trunk.clone(), h, b).with_tap(tap))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_sum_to_one(z in sized_matrix(50.0), t in prop_oneof![1e-3..1.0, 1.0..1e3, 1e3..1e9]) {
        let p = softmax_t(&z, t).unwrap();
        for r in 0..p.rows() {
            let s: f64 = p.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12, "row sums to {}", s);
        }
    }

    #[test]
    fn softmax_ignores_row_shifts(z in sized_matrix(20.0), shift in -100.0..100.0f64, t in 0.1..10.0f64) {
        let mut shifted = z.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v += shift);
        let (a, b) = (softmax_t(&z, t).unwrap(), softmax_t(&shifted, t).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_equal_inputs(a in sized_matrix(5.0), t in 0.5..5.0f64) {
        let b = Tensor::matrix(a.rows(), a.cols(), a.data().iter().rev().copied().collect()).unwrap();
        let (p, q) = (softmax_t(&a, t).unwrap(), softmax_t(&b, t).unwrap());
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
        prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn softening_keeps_the_argmax(z in sized_matrix(10.0), t in 1e-2..1e3f64) {
        let p = softmax_t(&z, t).unwrap();
        for r in 0..z.rows() {
            prop_assert_eq!(argmax(p.row(r)), argmax(z.row(r)));
        }
    }

    #[test]
    fn allocated_parameters_match_the_count(s in spec(), seed in any::<u64>()) {
        let m = init_model(&s, &mut Rng::new(seed, 0)).unwrap();
        let n: usize = m.params().iter().map(|p| p.len()).sum();
        prop_assert_eq!(n, count_params(&s));
        prop_assert_eq!(serialize(&m).len(), serialized_len(&s));
        let once = deserialize(&serialize(&m)).unwrap();
        prop_assert!(deserialize(&serialize(&once)).unwrap().bitwise_eq(&once));
    }

    #[test]
    fn forward_is_row_independent(s in spec(), seed in any::<u64>(), rows in 2usize..6) {
        let mut rng = Rng::new(seed, 1);
        let m = init_model(&s, &mut rng).unwrap();
        let x = Tensor::matrix(rows, s.input_dim, (0..rows * s.input_dim).map(|_| rng.normal()).collect()).unwrap();
        let perm = rng.permutation(rows);
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x.select_rows(&perm)).unwrap();
        for (za, zb) in a.logits_per_slot.iter().zip(&b.logits_per_slot) {
            let moved = za.select_rows(&perm);
            prop_assert_eq!(moved.data(), zb.data());
        }
    }

    #[test]
    fn response_loss_is_nonnegative_and_zero_at_identity(z in matrix(4, 5, 4.0), t in matrix(4, 5, 4.0), temp in 0.5..8.0f64) {
        prop_assert!(response_kd_loss(&[z.clone()], &[t], temp, &[1.0]).unwrap() >= -1e-12);
        prop_assert!(response_kd_loss(&[z.clone()], &[z], temp, &[1.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn response_gradient_matches_finite_differences(z in matrix(3, 4, 3.0), t in matrix(3, 4, 3.0), temp in 0.5..6.0f64, w in 0.1..2.0f64) {
        let (_, g) = response_kd_grad(&[z.clone()], &[t.clone()], temp, &[w]).unwrap();
        let err = grad_check(|p| response_kd_loss(p, &[t.clone()], temp, &[w]).unwrap(), &[z], &g, 1e-5).unwrap();
        prop_assert!(err < 1e-4, "error {}", err);
    }

    #[test]
    fn relation_loss_is_permutation_and_scale_invariant(
        s in matrix(5, 3, 2.0), t in matrix(5, 6, 2.0), seed in any::<u64>(), a in 0.01..100.0f64, b in 0.01..100.0f64,
    ) {
        let base = relation_kd_loss(&s, &t, true).unwrap();
        let perm = Rng::new(seed, 0).permutation(5);
        let permuted = relation_kd_loss(&s.select_rows(&perm), &t.select_rows(&perm), true).unwrap();
        prop_assert!((base - permuted).abs() < 1e-10);
        let scale = |x: &Tensor, f: f64| Tensor::matrix(x.rows(), x.cols(), x.data().iter().map(|v| v * f).collect()).unwrap();
        let scaled = relation_kd_loss(&scale(&s, a), &scale(&t, b), true).unwrap();
        prop_assert!((base - scaled).abs() < 1e-10 * (1.0 + base));
        prop_assert!(relation_kd_loss(&s, &s, true).unwrap().abs() < 1e-12);
    }

    #[test]
    fn relation_gradient_matches_finite_differences(s in matrix(4, 3, 2.0), t in matrix(4, 5, 2.0), normalize in any::<bool>()) {
        let (_, g) = relation_kd_grad(&s, &t, normalize).unwrap();
        let err = grad_check(|p| relation_kd_loss(&p[0], &t, normalize).unwrap(), &[s], &[g], 1e-5).unwrap();
        prop_assert!(err < 1e-4, "error {}", err);
    }

    #[test]
    fn combined_loss_is_linear_in_alpha(task in 0.0..10.0f64, kd in 0.0..10.0f64, a in 0.0..1.0f64, b in 0.0..1.0f64, lam in 0.0..1.0f64) {
        let mix = combined_loss(task, kd, lam * a + (1.0 - lam) * b);
        let sep = lam * combined_loss(task, kd, a) + (1.0 - lam) * combined_loss(task, kd, b);
        prop_assert!((mix - sep).abs() < 1e-12);
    }

    #[test]
    fn topk_is_monotone_in_k(z in matrix(8, 5, 3.0), labels in prop::collection::vec(0usize..5, 8)) {
        let acc: Vec<f64> = (1..=5).map(|k| topk_accuracy(&z, &labels, k).unwrap()).collect();
        prop_assert!(acc.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(acc[4], 1.0);
    }
}
