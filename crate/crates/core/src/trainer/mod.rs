//! Maximum-likelihood training: loss, Adam, clipping, schedules, metrics.

mod optim;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use optim::{adam_step, clip_gradients, global_norm, AdamConfig, AdamState, ClipMode, LrSchedule};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::{FlowModel, Tape};
use crate::rng::RngState;

/// Consecutive steps above the loss ceiling before a run counts as diverged.
pub const DIVERGENCE_PATIENCE: usize = 100;
/// Loss ceiling as a multiple of `|initial loss|`.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub clip: ClipMode,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Evaluate on at most this many rows of each split (`None` = all).
    #[serde(default)]
    pub eval_rows: Option<usize>,
    /// Rows used for data-dependent ActNorm initialization.
    #[serde(default = "default_init_rows")]
    pub init_rows: usize,
    /// Fill the `seconds` metrics column. Off by default so metrics files
    /// are reproducible bit for bit.
    #[serde(default)]
    pub record_time: bool,
}

fn default_init_rows() -> usize {
    512
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_schedule: LrSchedule::Constant { lr: 1e-3 },
            adam: AdamConfig::default(),
            clip: ClipMode::None,
            batch_size: 256,
            max_steps: 1000,
            eval_every: 100,
            seed: 0,
            eval_rows: None,
            init_rows: default_init_rows(),
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.lr_schedule.validate()?;
        self.clip.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("train.eval_every", "must be >= 1"));
        }
        if self.init_rows < 2 {
            return Err(Error::config("train.init_rows", "must be >= 2"));
        }
        if self.eval_rows == Some(0) {
            return Err(Error::config("train.eval_rows", "must be >= 1 when set"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::config("train.adam", "betas must lie in [0, 1)"));
        }
        if !(a.eps > 0.0) {
            return Err(Error::config("train.adam.eps", "must be > 0"));
        }
        Ok(())
    }
}

/// Reporting units for NLL values.
///
/// Losses are computed in nats per dimension. For data dequantized from
/// `bits`-bit integers to `[0, 1)`, the density on the original integer grid
/// differs by the Jacobian `2^bits` per dimension, so
/// `bits/dim = nats/dim / ln 2 + bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Units {
    NatsPerDim,
    BitsPerDim { bits: u32 },
}

impl Units {
    pub fn for_dataset(ds: &Dataset) -> Self {
        if ds.meta.dequantized {
            Units::BitsPerDim { bits: ds.meta.bits.unwrap_or(8) }
        } else {
            Units::NatsPerDim
        }
    }

    pub fn convert(self, nats_per_dim: f64) -> f64 {
        match self {
            Units::NatsPerDim => nats_per_dim,
            Units::BitsPerDim { bits } => nats_per_dim / std::f64::consts::LN_2 + f64::from(bits),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Units::NatsPerDim => "nats/dim",
            Units::BitsPerDim { .. } => "bits/dim",
        }
    }
}

/// Mean negative log-likelihood per dimension of `batch` in nats, with a
/// tape for [`FlowModel::backward`].
pub fn nll_loss(model: &FlowModel, batch: &[f64]) -> Result<(f64, Tape)> {
    let (ll, tape) = match model.log_likelihood_with_tape(batch) {
        Ok(v) => v,
        Err(Error::NonFinite { .. }) => return Err(Error::NonFiniteLoss { row: first_bad_row(model, batch) }),
        Err(e) => return Err(e),
    };
    if let Some(row) = ll.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss { row });
    }
    let loss = -ll.iter().sum::<f64>() / (ll.len() * model.dim()) as f64;
    Ok((loss, tape))
}

fn first_bad_row(model: &FlowModel, batch: &[f64]) -> usize {
    batch
        .chunks(model.dim())
        .position(|row| !matches!(model.log_likelihood(row), Ok(v) if v[0].is_finite()))
        .unwrap_or(0)
}

/// Mean NLL per dimension of `rows` in the given units. Reads the model only.
pub fn evaluate(model: &FlowModel, rows: &[f64], units: Units) -> Result<f64> {
    let d = model.dim();
    let n = rows.len() / d;
    let mut total = 0.0;
    for (k, chunk) in rows.chunks(EVAL_CHUNK * d).enumerate() {
        let ll = model.log_likelihood(chunk)?;
        if let Some(i) = ll.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { row: k * EVAL_CHUNK + i });
        }
        total += ll.iter().sum::<f64>();
    }
    Ok(units.convert(-total / (n * d) as f64))
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub step: usize,
    pub train_nll: f64,
    pub val_nll: Option<f64>,
    /// Pre-clip global gradient norm of the most recent update.
    pub grad_norm: Option<f64>,
    pub lr: f64,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    Diverged { step: usize, reason: String },
}

impl RunStatus {
    pub fn is_diverged(&self) -> bool {
        matches!(self, RunStatus::Diverged { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::Diverged { .. } => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainMetrics {
    pub units: Units,
    pub records: Vec<EvalRecord>,
    pub status: RunStatus,
    /// Loss of the first training batch, in nats/dim.
    pub initial_loss: Option<f64>,
    pub steps_run: usize,
}

impl TrainMetrics {
    /// Validation NLL at the last evaluation, if any was finite.
    pub fn final_val(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.val_nll)
    }

    /// `(step, val NLL)` of the lowest validation NLL seen.
    pub fn best_val(&self) -> Option<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.val_nll.map(|v| (r.step, v)))
            .fold(None, |best, (s, v)| match best {
                Some((_, b)) if b <= v => best,
                _ => Some((s, v)),
            })
    }

    pub fn final_train(&self) -> Option<f64> {
        self.records.last().map(|r| r.train_nll)
    }
}

pub const METRICS_HEADER: &str = "step,train_nll,val_nll,grad_norm,lr,seconds";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write `step,train_nll,val_nll,grad_norm,lr,seconds` with a header row.
/// Missing values are empty fields.
pub fn write_metrics_csv(w: &mut impl Write, metrics: &TrainMetrics) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in &metrics.records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.step,
            r.train_nll,
            opt(r.val_nll),
            opt(r.grad_norm),
            r.lr,
            opt(r.seconds)
        )?;
    }
    Ok(())
}

/// Train `model` on the training split of `ds`.
pub fn train(model: &mut FlowModel, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainMetrics> {
    train_with(model, ds, cfg, |_, _| Ok(()))
}

/// As [`train`], calling `on_eval` after every evaluation (for checkpoints
/// or streaming logs). An error from the callback aborts training.
pub fn train_with(
    model: &mut FlowModel,
    ds: &Dataset,
    cfg: &TrainConfig,
    mut on_eval: impl FnMut(&FlowModel, &EvalRecord) -> Result<()>,
) -> Result<TrainMetrics> {
    cfg.validate()?;
    if ds.dim() != model.dim() {
        return Err(Error::shape(format!("data of dimension {}", model.dim()), ds.dim()));
    }
    if ds.splits.train.is_empty() {
        return Err(Error::domain("dataset has no training rows"));
    }
    let units = Units::for_dataset(ds);
    let root = RngState::new(cfg.seed);
    let mut batches = BatchStream::new(ds.splits.train.clone(), cfg.batch_size, root.fork(1));

    if !model.is_initialized() {
        let mut idx = ds.splits.train.clone();
        root.fork(2).shuffle(&mut idx);
        idx.truncate(cfg.init_rows.max(2));
        if idx.len() < 2 {
            return Err(Error::domain("ActNorm initialization needs at least 2 training rows"));
        }
        model.data_init(&ds.gather(&idx))?;
    }

    let take = |rows: &[usize]| -> Vec<usize> { rows.iter().copied().take(cfg.eval_rows.unwrap_or(usize::MAX)).collect() };
    let train_eval = ds.gather(&take(&ds.splits.train));
    let val_eval = ds.gather(&take(&ds.splits.val));

    let start = Instant::now();
    let mut metrics = TrainMetrics {
        units,
        records: Vec::new(),
        status: RunStatus::Converged,
        initial_loss: None,
        steps_run: 0,
    };
    let mut adam = AdamState::new(model.param_count());
    let mut params = model.params();
    let mut last_norm = None;
    let mut over = 0usize;

    for step in 0..=cfg.max_steps {
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let seconds = cfg.record_time.then(|| start.elapsed().as_secs_f64());
            let evals = evaluate(model, &train_eval, units).and_then(|t| {
                let v = if val_eval.is_empty() { None } else { Some(evaluate(model, &val_eval, units)?) };
                Ok((t, v))
            });
            match evals {
                Ok((train_nll, val_nll)) => {
                    let rec = EvalRecord {
                        step,
                        train_nll,
                        val_nll,
                        grad_norm: last_norm,
                        lr: cfg.lr_schedule.lr_at(step),
                        seconds,
                    };
                    on_eval(model, &rec)?;
                    metrics.records.push(rec);
                }
                Err(Error::NonFinite { .. } | Error::NonFiniteLoss { .. }) => {
                    diverge(&mut metrics, step, f64::NAN, last_norm, cfg, seconds, "non-finite evaluation loss");
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if step == cfg.max_steps {
            break;
        }

        let lr = cfg.lr_schedule.lr_at(step);
        let batch = ds.gather(batches.next_indices());
        let seconds = || cfg.record_time.then(|| start.elapsed().as_secs_f64());
        let (loss, tape) = match nll_loss(model, &batch) {
            Ok(v) => v,
            Err(Error::NonFiniteLoss { row }) => {
                let why = format!("non-finite training loss at batch row {row}");
                diverge(&mut metrics, step, f64::NAN, last_norm, cfg, seconds(), &why);
                break;
            }
            Err(e) => return Err(e),
        };
        let initial = *metrics.initial_loss.get_or_insert(loss);
        if loss > DIVERGENCE_FACTOR * initial.abs() {
            over += 1;
            if over >= DIVERGENCE_PATIENCE {
                let why = format!("loss above {DIVERGENCE_FACTOR}x |initial| for {DIVERGENCE_PATIENCE} steps");
                diverge(&mut metrics, step, loss, last_norm, cfg, seconds(), &why);
                break;
            }
        } else {
            over = 0;
        }

        let n = tape.rows();
        let dloglik = vec![-1.0 / (n * model.dim()) as f64; n];
        let mut grads = model.backward(&tape, &dloglik)?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            let why = format!("non-finite gradient for parameter {i}");
            diverge(&mut metrics, step, loss, last_norm, cfg, seconds(), &why);
            break;
        }
        last_norm = Some(clip_gradients(&mut grads, &cfg.clip));
        if let Err(e) = adam_step(&mut params, &grads, &mut adam, lr, &cfg.adam) {
            diverge(&mut metrics, step, loss, last_norm, cfg, seconds(), &e.to_string());
            break;
        }
        model.set_params(&params)?;
        metrics.steps_run = step + 1;
    }
    Ok(metrics)
}

fn diverge(
    metrics: &mut TrainMetrics,
    step: usize,
    loss: f64,
    grad_norm: Option<f64>,
    cfg: &TrainConfig,
    seconds: Option<f64>,
    reason: &str,
) {
    log::warn!("run diverged at step {step}: {reason}");
    metrics.records.push(EvalRecord {
        step,
        train_nll: metrics.units.convert(loss),
        val_nll: None,
        grad_norm,
        lr: cfg.lr_schedule.lr_at(step),
        seconds,
    });
    metrics.status = RunStatus::Diverged { step, reason: reason.to_string() };
}

// Epoch-wise shuffled minibatches; a batch never straddles two epochs.
struct BatchStream {
    order: Vec<usize>,
    batch: usize,
    cursor: usize,
    rng: RngState,
    buf: Vec<usize>,
}

impl BatchStream {
    fn new(order: Vec<usize>, batch: usize, rng: RngState) -> Self {
        let batch = batch.min(order.len());
        let cursor = order.len();
        Self { order, batch, cursor, rng, buf: Vec::new() }
    }

    fn next_indices(&mut self) -> &[usize] {
        if self.cursor + self.batch > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        self.buf.clear();
        self.buf.extend_from_slice(&self.order[self.cursor..self.cursor + self.batch]);
        self.cursor += self.batch;
        &self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::BaseKind;
    use crate::data::{gen_two_moons, split_dataset};
    use crate::flow::ModelSpec;

    fn identity(base: BaseKind) -> FlowModel {
        let mut m = FlowModel::new(&ModelSpec::flat(1, 1, 2, base), 0).unwrap();
        m.mark_initialized();
        m
    }

    #[test]
    fn loss_of_identity_models() {
        let (g, _) = nll_loss(&identity(BaseKind::Gaussian), &[0.0]).unwrap();
        assert!((g - 0.918_938_533_204_672_7).abs() < 1e-12);
        let (c, _) = nll_loss(&identity(BaseKind::StudentT { nu: 1.0 }), &[0.0]).unwrap();
        assert!((c - std::f64::consts::PI.ln()).abs() < 1e-12);
    }

    #[test]
    fn units_convert() {
        assert_eq!(Units::NatsPerDim.convert(1.5), 1.5);
        let b = Units::BitsPerDim { bits: 8 }.convert(std::f64::consts::LN_2);
        assert!((b - 9.0).abs() < 1e-12);
    }

    fn moons() -> Dataset {
        let mut rng = RngState::new(11);
        let ds = gen_two_moons(2000, 0.05, &mut rng).unwrap();
        split_dataset(&ds, (0.8, 0.1, 0.1), &mut rng).unwrap()
    }

    #[test]
    fn zero_steps_records_only_the_initial_evaluation() {
        let ds = moons();
        let mut m = FlowModel::new(&ModelSpec::flat(2, 2, 8, BaseKind::Gaussian), 1).unwrap();
        let cfg = TrainConfig { max_steps: 0, ..Default::default() };
        let metrics = train(&mut m, &ds, &cfg).unwrap();
        assert_eq!(metrics.records.len(), 1);
        assert_eq!(metrics.records[0].step, 0);
        assert_eq!(metrics.status, RunStatus::Converged);
        assert!(m.is_initialized());
    }

    #[test]
    fn evaluation_is_pure() {
        let ds = moons();
        let m = FlowModel::new(&ModelSpec::flat(2, 2, 8, BaseKind::StudentT { nu: 5.0 }), 1).unwrap();
        let mut m2 = m.clone();
        m2.mark_initialized();
        let rows = ds.split_rows(crate::data::SplitName::Val);
        let a = evaluate(&m2, &rows, Units::NatsPerDim).unwrap();
        let b = evaluate(&m2, &rows, Units::NatsPerDim).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(m2.params(), m.params());
    }

    #[test]
    fn two_moons_loss_drops_and_replays() {
        let ds = moons();
        let spec = ModelSpec::flat(2, 4, 32, BaseKind::Gaussian);
        let cfg = TrainConfig { max_steps: 500, eval_every: 100, ..Default::default() };
        let run = || {
            let mut m = FlowModel::new(&spec, 3).unwrap();
            let metrics = train(&mut m, &ds, &cfg).unwrap();
            (m, metrics)
        };
        let (m1, r1) = run();
        let first = r1.records[0].train_nll;
        let last = r1.final_train().unwrap();
        assert_eq!(r1.status, RunStatus::Converged);
        assert!(last <= 0.8 * first, "{first} -> {last}");
        let (m2, r2) = run();
        assert_eq!(m1.params(), m2.params());
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_metrics_csv(&mut a, &r1).unwrap();
        write_metrics_csv(&mut b, &r2).unwrap();
        assert_eq!(a, b);
        assert!(String::from_utf8(a).unwrap().starts_with(METRICS_HEADER));
    }

    #[test]
    fn non_finite_input_reports_row() {
        let m = identity(BaseKind::Gaussian);
        match nll_loss(&m, &[0.0, 1.0, f64::INFINITY]) {
            Err(Error::NonFiniteLoss { row }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }
}
