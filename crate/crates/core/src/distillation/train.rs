use super::config::{KdConfig, Knowledge, TrainConfig};
use super::losses::{combined_loss, feature_kd_grad, relation_kd_grad, response_grad_from_probs};
use crate::harness::evaluate_inputs;
use crate::models::{init_model, Model, ModelSpec, Trace};
use crate::numerics::{cross_entropy_grad, sgd_step, softmax_t, Rng, Tensor};
use crate::scenario::Dataset;
use crate::{Error, Result};

/// Per-epoch record of a training run plus the work it performed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    /// Mean minibatch loss of each epoch.
    pub train_loss: Vec<f64>,
    /// Slot-averaged hold-out top-k after each epoch, when monitored.
    pub holdout_topk: Vec<f64>,
    /// Rows that went through a student forward and backward pass.
    pub samples_processed: u64,
    /// Rows that went through a frozen teacher (or snapshot, or peer) forward.
    pub teacher_samples: u64,
}

/// Hold-out set evaluated after every epoch.
#[derive(Debug, Clone, Copy)]
pub struct Monitor<'a> {
    pub holdout: &'a Dataset,
    pub k: usize,
}

impl Monitor<'_> {
    fn record(&self, model: &Model, history: &mut History) -> Result<()> {
        let ev = evaluate_inputs(model, self.holdout.features(), self.holdout, &[self.k])?;
        history.holdout_topk.push(ev.mean_over_slots(0));
        Ok(())
    }
}

/// KD target for one minibatch.
enum BatchTarget {
    /// Softened distributions per slot.
    Probs(Vec<Tensor>),
    /// Teacher activations at its feature tap.
    Tap(Tensor),
}

/// Frozen-model outputs over a whole dataset, sliced per minibatch.
enum Cached {
    Probs(Vec<Tensor>),
    Tap(Tensor),
}

impl Cached {
    fn compute(model: &Model, x: &Tensor, cfg: &KdConfig) -> Result<Cached> {
        let out = model.forward(x)?;
        Ok(match cfg.knowledge {
            Knowledge::Response => Cached::Probs(
                out.logits_per_slot
                    .iter()
                    .map(|z| softmax_t(z, cfg.temperature))
                    .collect::<Result<_>>()?,
            ),
            _ => Cached::Tap(out.tap_features),
        })
    }

    fn slice(&self, idx: &[usize]) -> BatchTarget {
        match self {
            Cached::Probs(p) => BatchTarget::Probs(p.iter().map(|t| t.select_rows(idx)).collect()),
            Cached::Tap(t) => BatchTarget::Tap(t.select_rows(idx)),
        }
    }
}

/// Source of KD targets during an epoch loop.
trait Guide {
    fn target(&mut self, idx: &[usize], x: &Tensor, history: &mut History) -> Result<Option<BatchTarget>>;

    fn end_epoch(&mut self, _epoch: usize, _model: &Model, _history: &mut History) -> Result<()> {
        Ok(())
    }
}

struct Unguided;

impl Guide for Unguided {
    fn target(&mut self, _: &[usize], _: &Tensor, _: &mut History) -> Result<Option<BatchTarget>> {
        Ok(None)
    }
}

struct Fixed(Cached);

impl Guide for Fixed {
    fn target(&mut self, idx: &[usize], _: &Tensor, _: &mut History) -> Result<Option<BatchTarget>> {
        Ok(Some(self.0.slice(idx)))
    }
}

/// Targets from a snapshot of the model itself, refreshed every `every`
/// epochs.
struct Snapshot<'a> {
    every: usize,
    epochs: usize,
    inputs: &'a Tensor,
    cfg: &'a KdConfig,
    cached: Option<Cached>,
}

impl Guide for Snapshot<'_> {
    fn target(&mut self, idx: &[usize], _: &Tensor, _: &mut History) -> Result<Option<BatchTarget>> {
        Ok(self.cached.as_ref().map(|c| c.slice(idx)))
    }

    fn end_epoch(&mut self, epoch: usize, model: &Model, history: &mut History) -> Result<()> {
        let done = epoch + 1;
        if done.is_multiple_of(self.every) && done < self.epochs {
            self.cached = Some(Cached::compute(model, self.inputs, self.cfg)?);
            history.teacher_samples += self.inputs.rows() as u64;
        }
        Ok(())
    }
}

/// Average softened output of frozen peers on the current minibatch.
struct PeerAverage<'a> {
    peers: Vec<&'a Model>,
    temperature: f64,
}

impl Guide for PeerAverage<'_> {
    fn target(&mut self, _: &[usize], x: &Tensor, history: &mut History) -> Result<Option<BatchTarget>> {
        let mut avg: Option<Vec<Tensor>> = None;
        for peer in &self.peers {
            let out = peer.forward(x)?;
            history.teacher_samples += x.rows() as u64;
            let probs = out
                .logits_per_slot
                .iter()
                .map(|z| softmax_t(z, self.temperature))
                .collect::<Result<Vec<_>>>()?;
            avg = Some(match avg {
                None => probs,
                Some(mut acc) => {
                    for (a, p) in acc.iter_mut().zip(&probs) {
                        a.add_scaled(p, 1.0);
                    }
                    acc
                }
            });
        }
        let mut avg = avg.expect("at least one peer");
        let inv = 1.0 / self.peers.len() as f64;
        for a in &mut avg {
            a.scale_inplace(inv);
        }
        Ok(Some(BatchTarget::Probs(avg)))
    }
}

/// The KD term's configuration plus any trainable projection.
struct KdTerm<'a> {
    cfg: &'a KdConfig,
    weights: Vec<f64>,
    projection: Option<Tensor>,
}

impl KdTerm<'_> {
    /// KD loss times `kd_weight`, with gradients at the logits, the student
    /// tap and the projection.
    #[allow(clippy::type_complexity)]
    fn eval(
        &self,
        spec: &ModelSpec,
        trace: &Trace,
        target: &BatchTarget,
    ) -> Result<(f64, Option<Vec<Tensor>>, Option<Tensor>, Option<Tensor>)> {
        let (l, gl, gt, gp) = self.eval_raw(spec, trace, target)?;
        let w = self.cfg.kd_weight;
        if w == 1.0 {
            return Ok((l, gl, gt, gp));
        }
        let scale = |mut g: Tensor| {
            g.scale_inplace(w);
            g
        };
        Ok((
            w * l,
            gl.map(|v| v.into_iter().map(scale).collect()),
            gt.map(scale),
            gp.map(scale),
        ))
    }

    #[allow(clippy::type_complexity)]
    fn eval_raw(
        &self,
        spec: &ModelSpec,
        trace: &Trace,
        target: &BatchTarget,
    ) -> Result<(f64, Option<Vec<Tensor>>, Option<Tensor>, Option<Tensor>)> {
        match (self.cfg.knowledge, target) {
            (Knowledge::Response, BatchTarget::Probs(p)) => {
                let (l, g) = response_grad_from_probs(&trace.logits, p, self.cfg.temperature, &self.weights)?;
                Ok((l, Some(g), None, None))
            }
            (Knowledge::Relation, BatchTarget::Tap(t)) => {
                let (l, g) = relation_kd_grad(trace.tap(spec), t, self.cfg.relation_normalize)?;
                Ok((l, None, Some(g), None))
            }
            (Knowledge::Feature, BatchTarget::Tap(t)) => {
                let (l, g, gp) = feature_kd_grad(trace.tap(spec), t, self.projection.as_ref())?;
                Ok((l, None, Some(g), gp))
            }
            _ => Err(Error::Contract("KD target does not match knowledge type".into())),
        }
    }
}

/// Loss `(1 − α)·Σ_slots CE + α·KD` (plain CE without a target) and its
/// gradients for the model parameters and the projection.
fn objective(
    model: &Model,
    x: &Tensor,
    labels: &[Vec<usize>],
    target: Option<&BatchTarget>,
    kd: &KdTerm,
) -> Result<(f64, Vec<Tensor>, Option<Tensor>)> {
    let trace = model.trace(x)?;
    let mut task = 0.0;
    let mut dlogits = Vec::with_capacity(labels.len());
    for (z, y) in trace.logits.iter().zip(labels) {
        let (l, g) = cross_entropy_grad(z, y)?;
        task += l;
        dlogits.push(g);
    }
    let (loss, dtap, dproj) = match target {
        None => (task, None, None),
        Some(t) => {
            let a = kd.cfg.alpha;
            let (kl, gk, dtap, dproj) = kd.eval(model.spec(), &trace, t)?;
            for (d, g) in dlogits.iter_mut().enumerate() {
                g.scale_inplace(1.0 - a);
                if let Some(gk) = &gk {
                    g.add_scaled(&gk[d], a);
                }
            }
            let scale = |mut g: Tensor| {
                g.scale_inplace(a);
                g
            };
            (combined_loss(task, kl, a), dtap.map(scale), dproj.map(scale))
        }
    };
    let grads = model.backward(x, &trace, &dlogits, dtap.as_ref())?;
    Ok((loss, grads, dproj))
}

fn step(
    model: &mut Model,
    x: &Tensor,
    labels: &[Vec<usize>],
    target: Option<BatchTarget>,
    kd: &mut KdTerm,
    lr: f64,
) -> Result<f64> {
    let (loss, grads, dproj) = objective(model, x, labels, target.as_ref(), kd)?;
    sgd_step(model.params_mut(), &grads, lr)?;
    if let (Some(p), Some(gp)) = (kd.projection.as_mut(), dproj) {
        sgd_step(std::slice::from_mut(p), std::slice::from_ref(&gp), lr)?;
    }
    Ok(loss)
}

/// One pass over shuffled full minibatches; the trailing partial batch is
/// dropped.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    model: &mut Model,
    inputs: &Tensor,
    data: &Dataset,
    cfg: &TrainConfig,
    shuffle: &mut Rng,
    kd: &mut KdTerm,
    guide: &mut dyn Guide,
    history: &mut History,
) -> Result<()> {
    let n = data.len();
    let bs = cfg.batch_size;
    let order = shuffle.permutation(n);
    let mut total = 0.0;
    let batches = n / bs;
    for b in 0..batches {
        let idx = &order[b * bs..(b + 1) * bs];
        let (_, labels) = data.batch(idx);
        let x = inputs.select_rows(idx);
        let target = guide.target(idx, &x, history)?;
        total += step(model, &x, &labels, target, kd, cfg.lr)?;
        history.samples_processed += bs as u64;
    }
    history.train_loss.push(total / batches as f64);
    Ok(())
}

struct Streams {
    init: Rng,
    shuffle: Rng,
    projection: Rng,
}

fn streams(rng: &Rng, cfg: &TrainConfig) -> Streams {
    let base = rng.child("train", cfg.stream);
    Streams {
        init: base.child("init", 0),
        shuffle: base.child("shuffle", 0),
        projection: base.child("projection", 0),
    }
}

fn check_data(spec: &ModelSpec, inputs: &Tensor, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Contract("training on an empty dataset".into()));
    }
    spec.validate()?;
    cfg.validate(data.len())?;
    if inputs.rows() != data.len() || inputs.cols() != spec.input_dim {
        return Err(Error::dim("training inputs", inputs.shape(), &[data.len(), spec.input_dim]));
    }
    if data.num_slots() != spec.num_slots || data.num_beams() != spec.num_beams {
        return Err(Error::config(
            "student",
            format!(
                "spec has {} slots × {} beams, data has {} × {}",
                spec.num_slots,
                spec.num_beams,
                data.num_slots(),
                data.num_beams()
            ),
        ));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_loop(
    model: &mut Model,
    inputs: &Tensor,
    data: &Dataset,
    cfg: &TrainConfig,
    shuffle: &mut Rng,
    kd: &mut KdTerm,
    guide: &mut dyn Guide,
    monitor: Option<Monitor>,
) -> Result<History> {
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        run_epoch(model, inputs, data, cfg, shuffle, kd, guide, &mut history)?;
        if let Some(m) = monitor {
            m.record(model, &mut history)?;
        }
        guide.end_epoch(epoch, model, &mut history)?;
    }
    Ok(history)
}

/// Minibatch SGD on cross-entropy summed over slots.
pub fn train_supervised(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig, rng: &Rng) -> Result<(Model, History)> {
    train_supervised_monitored(spec, data, cfg, rng, None)
}

pub fn train_supervised_monitored(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &Rng,
    monitor: Option<Monitor>,
) -> Result<(Model, History)> {
    check_data(spec, data.features(), data, cfg)?;
    let mut s = streams(rng, cfg);
    let mut model = init_model(spec, &mut s.init)?;
    let none = KdConfig::none();
    let mut kd = KdTerm {
        cfg: &none,
        weights: Vec::new(),
        projection: None,
    };
    let h = train_loop(&mut model, data.features(), data, cfg, &mut s.shuffle, &mut kd, &mut Unguided, monitor)?;
    Ok((model, h))
}

fn check_kd(teacher: &ModelSpec, student: &ModelSpec, kd: &KdConfig) -> Result<()> {
    kd.validate(student.num_slots)?;
    if teacher.num_slots != student.num_slots || teacher.num_beams != student.num_beams {
        return Err(Error::config(
            "student",
            format!(
                "teacher predicts {} slots × {} beams, student {} × {}",
                teacher.num_slots, teacher.num_beams, student.num_slots, student.num_beams
            ),
        ));
    }
    if kd.knowledge == Knowledge::Feature && teacher.tap_width() != student.tap_width() && !kd.feature_projection {
        return Err(Error::config(
            "kd.feature_projection",
            format!(
                "tap widths differ ({} vs {}) and no projection is allowed",
                student.tap_width(),
                teacher.tap_width()
            ),
        ));
    }
    Ok(())
}

/// Xavier-initialised `[d_t × d_s]` map, only when feature KD needs one.
fn projection_for(teacher: &ModelSpec, student: &ModelSpec, kd: &KdConfig, rng: &mut Rng) -> Option<Tensor> {
    let (dt, ds) = (teacher.tap_width(), student.tap_width());
    if kd.knowledge != Knowledge::Feature || dt == ds {
        return None;
    }
    let a = (6.0 / (dt + ds) as f64).sqrt();
    let w = (0..dt * ds).map(|_| rng.uniform_range(-a, a)).collect();
    Some(Tensor::from_parts(vec![dt, ds], w))
}

/// Trains a student against a frozen teacher on `data`.
///
/// Teacher outputs for every row are computed once before training; rows
/// are independent, so this equals evaluating the teacher per minibatch.
pub fn distill_offline(
    teacher: &Model,
    student_spec: &ModelSpec,
    data: &Dataset,
    kd: &KdConfig,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<(Model, History)> {
    distill_offline_inputs(teacher, data.features(), student_spec, data, kd, cfg, rng, None)
}

/// General form: the teacher reads `teacher_inputs` (row-aligned with
/// `data`) while the student reads `data`'s own features, which allows a
/// student restricted to fewer modalities.
#[allow(clippy::too_many_arguments)]
pub fn distill_offline_inputs(
    teacher: &Model,
    teacher_inputs: &Tensor,
    student_spec: &ModelSpec,
    data: &Dataset,
    kd: &KdConfig,
    cfg: &TrainConfig,
    rng: &Rng,
    monitor: Option<Monitor>,
) -> Result<(Model, History)> {
    check_data(student_spec, data.features(), data, cfg)?;
    check_kd(teacher.spec(), student_spec, kd)?;
    if teacher_inputs.rows() != data.len() {
        return Err(Error::dim("teacher inputs", teacher_inputs.shape(), &[data.len(), teacher.spec().input_dim]));
    }
    let mut s = streams(rng, cfg);
    let mut model = init_model(student_spec, &mut s.init)?;
    let mut term = KdTerm {
        cfg: kd,
        weights: kd.weights(student_spec.num_slots),
        projection: projection_for(teacher.spec(), student_spec, kd, &mut s.projection),
    };
    let mut history;
    if kd.active() {
        let cached = Cached::compute(teacher, teacher_inputs, kd)?;
        let mut guide = Fixed(cached);
        history = train_loop(&mut model, data.features(), data, cfg, &mut s.shuffle, &mut term, &mut guide, monitor)?;
        history.teacher_samples += data.len() as u64;
    } else {
        history = train_loop(&mut model, data.features(), data, cfg, &mut s.shuffle, &mut term, &mut Unguided, monitor)?;
    }
    Ok((model, history))
}

/// Self-distillation across epochs.
///
/// The first `k = self_kd_snapshot_every` epochs are supervised. After every
/// `k`-th epoch the current model is frozen and guides the next `k` epochs.
pub fn self_distill(
    spec: &ModelSpec,
    data: &Dataset,
    kd: &KdConfig,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<(Model, History)> {
    check_data(spec, data.features(), data, cfg)?;
    check_kd(spec, spec, kd)?;
    let mut s = streams(rng, cfg);
    let mut model = init_model(spec, &mut s.init)?;
    let mut term = KdTerm {
        cfg: kd,
        weights: kd.weights(spec.num_slots),
        projection: None,
    };
    let history = if kd.active() {
        let mut guide = Snapshot {
            every: cfg.self_kd_snapshot_every,
            epochs: cfg.epochs,
            inputs: data.features(),
            cfg: kd,
            cached: None,
        };
        train_loop(&mut model, data.features(), data, cfg, &mut s.shuffle, &mut term, &mut guide, None)?
    } else {
        train_loop(&mut model, data.features(), data, cfg, &mut s.shuffle, &mut term, &mut Unguided, None)?
    };
    Ok((model, history))
}

/// One participant in mutual learning.
#[derive(Debug, Clone, Copy)]
pub struct Peer<'a> {
    pub spec: &'a ModelSpec,
    pub data: &'a Dataset,
    /// Stream id for this peer's initialisation and shuffling.
    pub stream: u64,
}

/// Synchronous deep mutual learning.
///
/// Each round freezes every peer, then each peer takes one epoch on its own
/// data with the averaged softened outputs of the other frozen peers as KD
/// target. Peer `i` draws from the streams `train_supervised` would use with
/// `stream = peers[i].stream`, so `alpha = 0` reproduces independent runs.
pub fn mutual_learn(peers: &[Peer], kd: &KdConfig, cfg: &TrainConfig, rng: &Rng) -> Result<Vec<(Model, History)>> {
    if peers.len() < 2 {
        return Err(Error::config("peers", "mutual learning needs at least two peers"));
    }
    if !matches!(kd.knowledge, Knowledge::Response | Knowledge::None) {
        return Err(Error::config("kd.knowledge", "mutual learning exchanges responses only"));
    }
    let first = peers[0].spec;
    let mut models = Vec::with_capacity(peers.len());
    let mut shuffles = Vec::with_capacity(peers.len());
    for p in peers {
        let c = cfg.with_stream(p.stream);
        check_data(p.spec, p.data.features(), p.data, &c)?;
        check_kd(first, p.spec, kd)?;
        let mut s = streams(rng, &c);
        models.push(init_model(p.spec, &mut s.init)?);
        shuffles.push(s.shuffle);
    }
    let mut histories = vec![History::default(); peers.len()];
    let weights = kd.weights(first.num_slots);
    for _round in 0..cfg.epochs {
        let frozen = models.clone();
        for (i, p) in peers.iter().enumerate() {
            let mut term = KdTerm {
                cfg: kd,
                weights: weights.clone(),
                projection: None,
            };
            let c = cfg.with_stream(p.stream);
            if kd.active() {
                let others = frozen.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, m)| m).collect();
                let mut guide = PeerAverage {
                    peers: others,
                    temperature: kd.temperature,
                };
                run_epoch(&mut models[i], p.data.features(), p.data, &c, &mut shuffles[i], &mut term, &mut guide, &mut histories[i])?;
            } else {
                run_epoch(&mut models[i], p.data.features(), p.data, &c, &mut shuffles[i], &mut term, &mut Unguided, &mut histories[i])?;
            }
        }
    }
    Ok(models.into_iter().zip(histories).collect())
}

/// Server samples with cached teacher logits, shipped alongside a student.
#[derive(Debug, Clone, PartialEq)]
pub struct Rehearsal {
    pub data: Dataset,
    /// Raw teacher logits per slot, row-aligned with `data`.
    pub teacher_logits: Vec<Tensor>,
}

impl Rehearsal {
    /// `⌈fraction·local_len⌉` server rows (at most all of them) drawn without
    /// replacement, or `None` when the fraction is zero.
    pub fn build(teacher: &Model, server: &Dataset, fraction: f64, local_len: usize, rng: &mut Rng) -> Result<Option<Self>> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::config("rehearsal_fraction", format!("{fraction} outside [0, 1]")));
        }
        if fraction == 0.0 {
            return Ok(None);
        }
        if server.is_empty() {
            return Err(Error::Contract("rehearsal requested but the server set is empty".into()));
        }
        let want = (fraction * local_len as f64).ceil() as usize;
        let idx = rng.sample_indices(server.len(), want.min(server.len()));
        let data = server.subset(&idx)?;
        let teacher_logits = teacher.forward(data.features())?.logits_per_slot;
        Ok(Some(Self { data, teacher_logits }))
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Wire size: each row carries its features and cached logits at
    /// `bytes_per_value` bytes each, plus one 16-bit label per slot.
    pub fn payload_bytes(&self, bytes_per_value: usize) -> u64 {
        let d = self.data.input_dim();
        let h = self.data.num_slots();
        let c = self.data.num_beams();
        (self.len() * (d * bytes_per_value + 2 * h + h * c * bytes_per_value)) as u64
    }
}

/// Local fine-tuning of a deployed student.
///
/// With a rehearsal set each step minimises
/// `(1 − α)·CE(local batch) + α·response-KD(rehearsal batch)`, the rehearsal
/// batches cycling through a shuffled order; without one the loss is the
/// local cross-entropy alone. Zero epochs return the student unchanged.
pub fn finetune(
    student: &Model,
    local: &Dataset,
    rehearsal: Option<&Rehearsal>,
    kd: &KdConfig,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<(Model, History)> {
    let mut model = student.clone();
    let mut history = History::default();
    if cfg.epochs == 0 {
        return Ok((model, history));
    }
    let spec = student.spec().clone();
    if local.is_empty() {
        return Err(Error::Contract("fine-tuning on an empty dataset".into()));
    }
    check_data(&spec, local.features(), local, cfg)?;
    let response = KdConfig {
        knowledge: Knowledge::Response,
        ..kd.clone()
    };
    response.validate(spec.num_slots)?;
    let weights = response.weights(spec.num_slots);
    let base = rng.child("finetune", cfg.stream);
    let mut shuffle = base.child("shuffle", 0);
    let mut reh_rng = base.child("rehearsal", 0);
    let reh = match rehearsal {
        Some(r) => Some((
            r,
            r.teacher_logits
                .iter()
                .map(|z| softmax_t(z, response.temperature))
                .collect::<Result<Vec<_>>>()?,
        )),
        None => None,
    };
    let mut reh_order: Vec<usize> = Vec::new();
    let mut reh_pos = 0;
    let a = response.alpha;
    let bs = cfg.batch_size;
    for _ in 0..cfg.epochs {
        let order = shuffle.permutation(local.len());
        let batches = local.len() / bs;
        let mut total = 0.0;
        for b in 0..batches {
            let idx = &order[b * bs..(b + 1) * bs];
            let (x, labels) = local.batch(idx);
            let trace = model.trace(&x)?;
            let mut task = 0.0;
            let mut dlogits = Vec::with_capacity(labels.len());
            for (z, y) in trace.logits.iter().zip(&labels) {
                let (l, g) = cross_entropy_grad(z, y)?;
                task += l;
                dlogits.push(g);
            }
            history.samples_processed += bs as u64;
            let grads = match &reh {
                None => {
                    total += task;
                    model.backward(&x, &trace, &dlogits, None)?
                }
                Some((r, probs)) => {
                    let rb = bs.min(r.len());
                    let mut ridx = Vec::with_capacity(rb);
                    while ridx.len() < rb {
                        if reh_pos == reh_order.len() {
                            reh_order = reh_rng.permutation(r.len());
                            reh_pos = 0;
                        }
                        ridx.push(reh_order[reh_pos]);
                        reh_pos += 1;
                    }
                    let rx = r.data.features().select_rows(&ridx);
                    let rtrace = model.trace(&rx)?;
                    let target: Vec<Tensor> = probs.iter().map(|p| p.select_rows(&ridx)).collect();
                    let (kl, mut gk) = response_grad_from_probs(&rtrace.logits, &target, response.temperature, &weights)?;
                    history.samples_processed += rb as u64;
                    total += combined_loss(task, response.kd_weight * kl, a);
                    for g in &mut dlogits {
                        g.scale_inplace(1.0 - a);
                    }
                    for g in &mut gk {
                        g.scale_inplace(a * response.kd_weight);
                    }
                    let mut gl = model.backward(&x, &trace, &dlogits, None)?;
                    let gr = model.backward(&rx, &rtrace, &gk, None)?;
                    for (p, q) in gl.iter_mut().zip(&gr) {
                        p.add_scaled(q, 1.0);
                    }
                    gl
                }
            };
            sgd_step(model.params_mut(), &grads, cfg.lr)?;
        }
        history.train_loss.push(total / batches as f64);
    }
    Ok((model, history))
}
