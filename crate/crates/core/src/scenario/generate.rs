use std::f64::consts::{FRAC_PI_2, PI};

use super::config::{Modality, ScenarioConfig, TrajectoryConfig};
use super::dataset::{Dataset, FeatureLayout};
use crate::numerics::{Rng, Tensor};
use crate::{Error, Result};

/// Origin tag for samples drawn from the server distribution.
pub const SERVER_ORIGIN: u16 = u16::MAX;

/// Walk parameters of one party after heterogeneity/staleness shifts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionParams {
    pub drift: f64,
    pub center: f64,
}

/// Fixed seeded lift `θ ↦ sin(ω_d·θ + φ_d)` standing in for camera
/// embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageLift {
    freq: Vec<f64>,
    phase: Vec<f64>,
}

impl ImageLift {
    pub fn new(dim: usize, rng: &mut Rng) -> Self {
        let freq = (0..dim).map(|_| rng.uniform_range(1.0, 4.0)).collect();
        let phase = (0..dim).map(|_| rng.uniform_range(0.0, 2.0 * PI)).collect();
        Self { freq, phase }
    }

    pub fn dim(&self) -> usize {
        self.freq.len()
    }

    fn apply(&self, theta: f64, out: &mut Vec<f64>) {
        out.extend(self.freq.iter().zip(&self.phase).map(|(w, p)| (w * theta + p).sin()));
    }
}

/// Bounded angular random walk `θ_{t+1} = clamp(θ_t + drift + ε)` with
/// `ε ~ N(0, step_std²)`, started uniformly within `start_spread` of the
/// party's centre.
pub fn simulate_trajectory(
    traj: &TrajectoryConfig,
    params: &DistributionParams,
    rng: &mut Rng,
    length: usize,
) -> Vec<f64> {
    let b = traj.bound;
    let mut theta = (params.center + traj.start_spread * rng.uniform_range(-1.0, 1.0)).clamp(-b, b);
    let mut out = Vec::with_capacity(length);
    for t in 0..length {
        if t > 0 {
            theta = (theta + params.drift + traj.step_std * rng.normal()).clamp(-b, b);
        }
        out.push(theta);
    }
    out
}

/// Uniform quantization of `[−π/2, π/2]` into `num_beams` half-open bins
/// `[lo, hi)`; `+π/2` belongs to the last bin.
pub fn beam_label(theta: f64, num_beams: usize) -> Result<usize> {
    if !(-FRAC_PI_2..=FRAC_PI_2).contains(&theta) {
        return Err(Error::Contract(format!("angle {theta} outside [-π/2, π/2]")));
    }
    let width = PI / num_beams as f64;
    let bin = ((theta + FRAC_PI_2) / width).floor() as usize;
    Ok(bin.min(num_beams - 1))
}

/// Features for one observation window.
///
/// `window` holds `history_len + 1` angles: one leading angle used only for
/// the first rate estimate, then the observed history. Per step the image
/// block is the lift plus `N(0, img_noise²)` noise and the radar block is
/// `[sin θ, cos θ, θ̇]` zero-padded to `radar_dim` plus `N(0, radar_noise²)`;
/// steps are concatenated in time order with img before radar.
pub fn render_modalities(window: &[f64], cfg: &ScenarioConfig, lift: &ImageLift, rng: &mut Rng) -> Result<Vec<f64>> {
    if window.len() != cfg.history_len + 1 {
        return Err(Error::dim("render_modalities window", &[window.len()], &[cfg.history_len + 1]));
    }
    let mut out = Vec::with_capacity(cfg.input_dim());
    for t in 1..window.len() {
        let theta = window[t];
        if cfg.has(Modality::Img) {
            let start = out.len();
            lift.apply(theta, &mut out);
            for v in &mut out[start..] {
                *v += cfg.img_noise * rng.normal();
            }
        }
        if cfg.has(Modality::Radar) {
            let rate = theta - window[t - 1];
            let start = out.len();
            out.extend_from_slice(&[theta.sin(), theta.cos(), rate]);
            out.resize(start + cfg.radar_dim, 0.0);
            for v in &mut out[start..] {
                *v += cfg.radar_noise * rng.normal();
            }
        }
    }
    Ok(out)
}

/// Server set, per-node sets and a global hold-out generated from one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub server_set: Dataset,
    pub node_sets: Vec<Dataset>,
    /// Drawn round-robin from the current node distributions; sample `i`
    /// comes from node `i mod num_nodes`.
    pub holdout: Dataset,
    pub server_params: DistributionParams,
    pub node_params: Vec<DistributionParams>,
}

impl Scenario {
    /// Hold-out samples drawn from node `k`'s distribution.
    pub fn node_holdout(&self, k: usize) -> Result<Dataset> {
        self.holdout.node_slice(k)
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim()
    }
}

fn layout(cfg: &ScenarioConfig) -> FeatureLayout {
    FeatureLayout {
        history_len: cfg.history_len,
        blocks: cfg
            .canonical_modalities()
            .into_iter()
            .map(|m| (m, cfg.modality_dim(m)))
            .collect(),
    }
}

fn draw_set<F>(cfg: &ScenarioConfig, lift: &ImageLift, n: usize, rng: &mut Rng, mut party: F) -> Result<Dataset>
where
    F: FnMut(usize) -> (DistributionParams, u16),
{
    let (l, h) = (cfg.history_len, cfg.num_slots);
    let d = cfg.input_dim();
    let mut feats = Vec::with_capacity(n * d);
    let mut labels = vec![Vec::with_capacity(n); h];
    let mut angles = Vec::with_capacity(n * h);
    let mut origin = Vec::with_capacity(n);
    for i in 0..n {
        let (params, tag) = party(i);
        let traj = simulate_trajectory(&cfg.trajectory, &params, rng, l + h);
        feats.extend(render_modalities(&traj[..=l], cfg, lift, rng)?);
        for (s, slot) in labels.iter_mut().enumerate() {
            let theta = traj[l + s];
            slot.push(beam_label(theta, cfg.num_beams)?);
            angles.push(theta);
        }
        origin.push(tag);
    }
    let features = Tensor::new(vec![n, d], feats)?;
    Ok(Dataset::new(features, labels, cfg.num_beams)?.with_meta(angles, origin, Some(layout(cfg))))
}

/// Node and server walk parameters for a config and seed.
///
/// Node `k` shifts the base drift and centre by `heterogeneity` times its
/// own seeded draws in `[−1, 1]`; the server takes the mean node shift and
/// is displaced further by `staleness`. Shifts are added to the base values
/// so zero heterogeneity and staleness reproduce the base exactly.
pub fn distribution_params(cfg: &ScenarioConfig, seed: u64) -> (DistributionParams, Vec<DistributionParams>) {
    let root = Rng::new(seed, 0);
    let t = &cfg.trajectory;
    let mut drift_shifts = Vec::with_capacity(cfg.num_nodes);
    let mut center_shifts = Vec::with_capacity(cfg.num_nodes);
    for k in 0..cfg.num_nodes {
        let mut r = root.child("node-params", k as u64);
        let u_drift = r.uniform_range(-1.0, 1.0);
        let u_center = r.uniform_range(-1.0, 1.0);
        drift_shifts.push(cfg.heterogeneity * u_drift * t.node_drift_scale);
        center_shifts.push(cfg.heterogeneity * u_center * t.node_center_scale);
    }
    let nodes = drift_shifts
        .iter()
        .zip(&center_shifts)
        .map(|(&dd, &dc)| DistributionParams {
            drift: t.drift + dd,
            center: t.start_center + dc,
        })
        .collect();
    let n = cfg.num_nodes as f64;
    let mean_drift = drift_shifts.iter().sum::<f64>() / n;
    let mean_center = center_shifts.iter().sum::<f64>() / n;
    let server = DistributionParams {
        drift: t.drift + (mean_drift + cfg.staleness * t.stale_drift_scale),
        center: t.start_center + (mean_center + cfg.staleness * t.stale_center_scale),
    };
    (server, nodes)
}

pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let root = Rng::new(seed, 0);
    let (server_params, node_params) = distribution_params(cfg, seed);
    let lift = ImageLift::new(cfg.img_dim, &mut root.child("img-lift", 0));

    let server_set = draw_set(cfg, &lift, cfg.samples_server, &mut root.child("server", 0), |_| {
        (server_params, SERVER_ORIGIN)
    })?;
    let node_sets = node_params
        .iter()
        .enumerate()
        .map(|(k, p)| draw_set(cfg, &lift, cfg.samples_per_node, &mut root.child("node", k as u64), |_| (*p, k as u16)))
        .collect::<Result<Vec<_>>>()?;
    let holdout = draw_set(cfg, &lift, cfg.samples_holdout, &mut root.child("holdout", 0), |i| {
        let k = i % cfg.num_nodes;
        (node_params[k], k as u16)
    })?;

    Ok(Scenario {
        config: cfg.clone(),
        seed,
        server_set,
        node_sets,
        holdout,
        server_params,
        node_params,
    })
}
