use super::Tensor;
use crate::{Error, Result};

fn check_dense(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<(usize, usize, usize)> {
    if w.shape().len() != 2 {
        return Err(Error::dim("dense weights", w.shape(), &[0, 0]));
    }
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    if b.shape() != [out] {
        return Err(Error::dim("dense bias", b.shape(), &[out]));
    }
    if x.shape().len() != 2 || x.shape()[1] != inp {
        return Err(Error::dim("dense input", x.shape(), w.shape()));
    }
    Ok((x.shape()[0], inp, out))
}

/// `y = x·Wᵀ + b` for `W: [out × in]`, `x: [batch × in]`.
///
/// Each output accumulates `Σ_i x[i]·W[o][i]` from `i = 0` upward starting
/// at `0.0`, then adds the bias. The loop is arranged as row-wise axpy over
/// a transposed weight copy, which keeps that per-element order.
pub fn dense_forward(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (batch, inp, out) = check_dense(w, b, x)?;
    let wd = w.data();
    let mut wt = vec![0.0; inp * out];
    for o in 0..out {
        for i in 0..inp {
            wt[i * out + o] = wd[o * inp + i];
        }
    }
    let bias = b.data();
    let mut y = vec![0.0; batch * out];
    for (xr, yr) in x.data().chunks_exact(inp).zip(y.chunks_exact_mut(out)) {
        for (&xi, wrow) in xr.iter().zip(wt.chunks_exact(out)) {
            for (yo, &wv) in yr.iter_mut().zip(wrow) {
                *yo += xi * wv;
            }
        }
        for (yo, &bo) in yr.iter_mut().zip(bias) {
            *yo += bo;
        }
    }
    Ok(Tensor::from_parts(vec![batch, out], y))
}

/// Gradients of a dense layer given the upstream gradient `dy = ∂L/∂y`.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weights: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
}

pub fn dense_backward(w: &Tensor, x: &Tensor, dy: &Tensor) -> Result<DenseGrads> {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    if x.cols() != inp || dy.cols() != out || x.rows() != dy.rows() {
        return Err(Error::dim("dense_backward", x.shape(), dy.shape()));
    }
    let wd = w.data();
    let mut dw = vec![0.0; out * inp];
    let mut db = vec![0.0; out];
    let mut dx = vec![0.0; x.rows() * inp];
    for ((xr, dyr), dxr) in x
        .data()
        .chunks_exact(inp)
        .zip(dy.data().chunks_exact(out))
        .zip(dx.chunks_exact_mut(inp))
    {
        for (o, &g) in dyr.iter().enumerate() {
            db[o] += g;
            let wrow = &wd[o * inp..(o + 1) * inp];
            let dwrow = &mut dw[o * inp..(o + 1) * inp];
            for ((dxi, dwi), (&wv, &xv)) in dxr.iter_mut().zip(dwrow.iter_mut()).zip(wrow.iter().zip(xr)) {
                *dxi += g * wv;
                *dwi += g * xv;
            }
        }
    }
    Ok(DenseGrads {
        weights: Tensor::from_parts(vec![out, inp], dw),
        bias: Tensor::from_parts(vec![out], db),
        input: Tensor::from_parts(x.shape().to_vec(), dx),
    })
}

pub fn tanh_inplace(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = v.tanh();
    }
}

/// `θ ← θ − lr·g` for every tensor pair.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
    if lr < 0.0 || !lr.is_finite() {
        return Err(Error::param("lr", format!("{lr} must be finite and non-negative")));
    }
    if params.len() != grads.len() {
        return Err(Error::dim("sgd_step", &[params.len()], &[grads.len()]));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::dim("sgd_step", p.shape(), g.shape()));
        }
    }
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn naive(w: &Tensor, b: &Tensor, x: &Tensor) -> Vec<f64> {
        let (out, inp) = (w.shape()[0], w.shape()[1]);
        let mut y = Vec::new();
        for r in 0..x.rows() {
            for o in 0..out {
                let mut acc = 0.0;
                for i in 0..inp {
                    acc += x.get(r, i) * w.get(o, i);
                }
                y.push(acc + b.data()[o]);
            }
        }
        y
    }

    fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn identity_and_hand_sum() {
        let w = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let b = Tensor::vector(vec![0.0, 0.0]).unwrap();
        let x = Tensor::from_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(dense_forward(&w, &b, &x).unwrap().data(), &[3.0, 4.0]);

        let w = Tensor::from_rows(&[[1.0, 1.0]]).unwrap();
        let b = Tensor::vector(vec![1.0]).unwrap();
        let x = Tensor::from_rows(&[[2.0, 3.0]]).unwrap();
        assert_eq!(dense_forward(&w, &b, &x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn matches_naive_triple_loop_bitwise() {
        let mut rng = Rng::new(11, 0);
        for _ in 0..20 {
            let w = random(&mut rng, &[4, 3]);
            let b = random(&mut rng, &[4]);
            let x = random(&mut rng, &[5, 3]);
            let y = dense_forward(&w, &b, &x).unwrap();
            let want = naive(&w, &b, &x);
            for (a, e) in y.data().iter().zip(&want) {
                assert_eq!(a.to_bits(), e.to_bits());
            }
        }
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let w = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2]);
        let x = Tensor::zeros(&[1, 4]);
        let msg = dense_forward(&w, &b, &x).unwrap_err().to_string();
        assert!(msg.contains("[1, 4]") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn backward_matches_closed_form() {
        let mut rng = Rng::new(5, 0);
        let w = random(&mut rng, &[3, 4]);
        let x = random(&mut rng, &[2, 4]);
        let dy = random(&mut rng, &[2, 3]);
        // L = Σ dy ⊙ y is linear, so ∂L/∂W = dyᵀx exactly.
        let g = dense_backward(&w, &x, &dy).unwrap();
        for o in 0..3 {
            for i in 0..4 {
                let want: f64 = (0..2).map(|r| dy.get(r, o) * x.get(r, i)).sum();
                assert!((g.weights.get(o, i) - want).abs() < 1e-12);
            }
        }
        for r in 0..2 {
            for i in 0..4 {
                let want: f64 = (0..3).map(|o| dy.get(r, o) * w.get(o, i)).sum();
                assert!((g.input.get(r, i) - want).abs() < 1e-12);
            }
        }
        assert!((g.bias.data()[1] - (dy.get(0, 1) + dy.get(1, 1))).abs() < 1e-12);
    }

    #[test]
    fn sgd_cases() {
        let mut p = vec![Tensor::vector(vec![1.0]).unwrap()];
        sgd_step(&mut p, &[Tensor::vector(vec![2.0]).unwrap()], 0.5).unwrap();
        assert_eq!(p[0].data(), &[0.0]);

        let mut rng = Rng::new(3, 0);
        let orig = random(&mut rng, &[3, 3]);
        let mut p = vec![orig.clone()];
        sgd_step(&mut p, &[Tensor::zeros(&[3, 3])], 0.1).unwrap();
        for (a, b) in p[0].data().iter().zip(orig.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let g = random(&mut rng, &[3, 3]);
        let mut p = vec![orig.clone()];
        sgd_step(&mut p, std::slice::from_ref(&g), 0.01).unwrap();
        for k in 0..9 {
            assert_eq!(p[0].data()[k], orig.data()[k] - 0.01 * g.data()[k]);
        }

        let mut p = vec![Tensor::zeros(&[2])];
        assert!(sgd_step(&mut p, &[Tensor::zeros(&[3])], 0.1).is_err());
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
