use crate::numerics::{softmax_t, Tensor, KL_CLAMP};
use crate::{Error, Result};

/// `(1 − alpha)·task + alpha·kd`.
pub fn combined_loss(task_loss: f64, kd_loss: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * task_loss + alpha * kd_loss
}

fn check_slots(student: &[Tensor], teacher: &[Tensor], weights: &[f64]) -> Result<()> {
    if student.len() != teacher.len() || weights.len() != student.len() {
        return Err(Error::dim(
            "response KD slots",
            &[student.len(), weights.len()],
            &[teacher.len(), weights.len()],
        ));
    }
    for (s, t) in student.iter().zip(teacher) {
        if s.shape() != t.shape() {
            return Err(Error::dim("response KD logits", s.shape(), t.shape()));
        }
    }
    Ok(())
}

/// `Σ_s w_s · T² · KL(softmax(teacher/T) ‖ softmax(student/T))`, batch mean.
pub fn response_kd_loss(student: &[Tensor], teacher: &[Tensor], temperature: f64, weights: &[f64]) -> Result<f64> {
    response_kd_grad(student, teacher, temperature, weights).map(|(l, _)| l)
}

/// Response loss and its gradient with respect to each slot's student logits.
pub fn response_kd_grad(
    student: &[Tensor],
    teacher: &[Tensor],
    temperature: f64,
    weights: &[f64],
) -> Result<(f64, Vec<Tensor>)> {
    check_slots(student, teacher, weights)?;
    let probs = teacher
        .iter()
        .map(|t| softmax_t(t, temperature))
        .collect::<Result<Vec<_>>>()?;
    response_grad_from_probs(student, &probs, temperature, weights)
}

/// Response term against already-softened targets.
///
/// With `p` the target and `q = softmax(z/T)`, the per-row gradient is
/// `w·T·(q_j·Σ_{i∈A} p_i − p_j·[j∈A]) / B`, where `A` holds the classes whose
/// `q` sits above the clamp.
pub(crate) fn response_grad_from_probs(
    student: &[Tensor],
    target: &[Tensor],
    temperature: f64,
    weights: &[f64],
) -> Result<(f64, Vec<Tensor>)> {
    check_slots(student, target, weights)?;
    let t = temperature;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(student.len());
    for ((z, p), &w) in student.iter().zip(target).zip(weights) {
        let b = z.rows();
        let c = z.cols();
        let mut g = Tensor::zeros(z.shape());
        if w == 0.0 {
            grads.push(g);
            continue;
        }
        let q = softmax_t(z, t)?;
        let mut kl = 0.0;
        let scale = w * t / b as f64;
        for r in 0..b {
            let (pr, qr) = (p.row(r), q.row(r));
            let mut active = 0.0;
            for j in 0..c {
                if pr[j] != 0.0 && pr[j].to_bits() != qr[j].to_bits() {
                    kl += pr[j] * (pr[j].ln() - qr[j].max(KL_CLAMP).ln());
                }
                if qr[j] >= KL_CLAMP {
                    active += pr[j];
                }
            }
            let gr = g.row_mut(r);
            for j in 0..c {
                let own = if qr[j] >= KL_CLAMP { pr[j] } else { 0.0 };
                gr[j] = scale * (qr[j] * active - own);
            }
        }
        total += w * t * t * kl / b as f64;
        grads.push(g);
    }
    Ok((total, grads))
}

fn distances(f: &Tensor) -> Vec<f64> {
    let b = f.rows();
    let mut d = vec![0.0; b * b];
    for i in 0..b {
        for j in i + 1..b {
            let s: f64 = f.row(i).iter().zip(f.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            d[i * b + j] = s.sqrt();
            d[j * b + i] = d[i * b + j];
        }
    }
    d
}

fn off_diagonal_mean(d: &[f64], b: usize) -> f64 {
    d.iter().sum::<f64>() / (b * (b - 1)) as f64
}

fn check_relation(s: &Tensor, t: &Tensor) -> Result<()> {
    if s.rows() != t.rows() {
        return Err(Error::dim("relation KD batch", s.shape(), t.shape()));
    }
    if s.rows() < 2 {
        return Err(Error::Contract("relation KD needs at least two samples".into()));
    }
    Ok(())
}

fn normalizer(d: &[f64], b: usize, normalize: bool, which: &str) -> Result<f64> {
    if !normalize {
        return Ok(1.0);
    }
    let mu = off_diagonal_mean(d, b);
    if mu == 0.0 {
        return Err(Error::Degenerate(format!("{which} batch has zero mean pairwise distance")));
    }
    Ok(mu)
}

/// Mean squared difference between the off-diagonal entries of the two
/// batches' Euclidean distance matrices, each optionally divided by its
/// mean off-diagonal distance.
pub fn relation_kd_loss(student: &Tensor, teacher: &Tensor, normalize: bool) -> Result<f64> {
    relation_kd_grad(student, teacher, normalize).map(|(l, _)| l)
}

/// Relation loss and its gradient with respect to the student features.
pub fn relation_kd_grad(student: &Tensor, teacher: &Tensor, normalize: bool) -> Result<(f64, Tensor)> {
    check_relation(student, teacher)?;
    let b = student.rows();
    let m = (b * (b - 1)) as f64;
    let ds = distances(student);
    let dt = distances(teacher);
    let mu_s = normalizer(&ds, b, normalize, "student")?;
    let mu_t = normalizer(&dt, b, normalize, "teacher")?;
    let mut loss = 0.0;
    let mut resid = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            if i != j {
                let r = ds[i * b + j] / mu_s - dt[i * b + j] / mu_t;
                resid[i * b + j] = r;
                loss += r * r;
            }
        }
    }
    loss /= m;
    // dL/dD_kl = (2/M)(r_kl/μ − c), with c from μ's dependence on every entry.
    let c = if normalize {
        resid.iter().zip(&ds).map(|(r, d)| r * d).sum::<f64>() / (m * mu_s * mu_s)
    } else {
        0.0
    };
    let d = student.cols();
    let mut g = Tensor::zeros(student.shape());
    for k in 0..b {
        for l in 0..b {
            let dist = ds[k * b + l];
            if k == l || dist == 0.0 {
                continue;
            }
            let coef = 2.0 * (2.0 / m) * (resid[k * b + l] / mu_s - c) / dist;
            for q in 0..d {
                let diff = student.get(k, q) - student.get(l, q);
                g.row_mut(k)[q] += coef * diff;
            }
        }
    }
    Ok((loss, g))
}

/// Mean squared error between (optionally projected) student features and
/// teacher features. `projection` is `[d_t × d_s]` and maps `f ↦ P·f`.
pub fn feature_kd_loss(student: &Tensor, teacher: &Tensor, projection: Option<&Tensor>) -> Result<f64> {
    feature_kd_grad(student, teacher, projection).map(|(l, _, _)| l)
}

/// Feature loss with gradients for the student features and the projection.
pub fn feature_kd_grad(
    student: &Tensor,
    teacher: &Tensor,
    projection: Option<&Tensor>,
) -> Result<(f64, Tensor, Option<Tensor>)> {
    if student.rows() != teacher.rows() {
        return Err(Error::dim("feature KD batch", student.shape(), teacher.shape()));
    }
    let (b, ds, dt) = (student.rows(), student.cols(), teacher.cols());
    let mapped = match projection {
        Some(p) => {
            if p.shape() != [dt, ds] {
                return Err(Error::dim("feature KD projection", p.shape(), &[dt, ds]));
            }
            let mut out = Tensor::zeros(&[b, dt]);
            for r in 0..b {
                let f = student.row(r);
                for (o, v) in out.row_mut(r).iter_mut().enumerate() {
                    *v = p.row(o).iter().zip(f).map(|(a, x)| a * x).sum();
                }
            }
            out
        }
        None => {
            if ds != dt {
                return Err(Error::config(
                    "kd.feature_projection",
                    format!("student tap width {ds} differs from teacher width {dt} and no projection is trained"),
                ));
            }
            student.clone()
        }
    };
    let n = (b * dt) as f64;
    let mut loss = 0.0;
    let mut dmapped = Tensor::zeros(&[b, dt]);
    for ((g, m), t) in dmapped.data_mut().iter_mut().zip(mapped.data()).zip(teacher.data()) {
        let r = m - t;
        loss += r * r;
        *g = 2.0 * r / n;
    }
    loss /= n;
    match projection {
        None => Ok((loss, dmapped, None)),
        Some(p) => {
            let mut dstudent = Tensor::zeros(student.shape());
            let mut dp = Tensor::zeros(p.shape());
            for r in 0..b {
                let gm = dmapped.row(r);
                let f = student.row(r);
                for (o, &go) in gm.iter().enumerate() {
                    let prow = p.row(o);
                    for (ds_v, &a) in dstudent.row_mut(r).iter_mut().zip(prow) {
                        *ds_v += go * a;
                    }
                    for (dp_v, &x) in dp.row_mut(o).iter_mut().zip(f) {
                        *dp_v += go * x;
                    }
                }
            }
            Ok((loss, dstudent, Some(dp)))
        }
    }
}
