//! Experiment templates: single training run, the stability matrix, the
//! contamination grid and the penalty-curve figure.
//!
//! Every runner writes into its output directory the resolved
//! `config.json`, a plain-text `run.log`, and its CSV/SVG/checkpoint
//! outputs. Runs are deterministic functions of the config.

mod config;

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{
    Contamination, DataConfig, DataSource, ExperimentConfig, ExperimentKind, GridConfig, ModelConfig, StabilityConfig,
    StabilityVariant,
};

use crate::base::BaseKind;
use crate::data::{
    self, dequantize, downsample, inject_outliers, split_dataset, Dataset, SplitName,
};
use crate::error::{Error, Result};
use crate::flow::{save_checkpoint, FlowModel};
use crate::robust::{emit_fig1_curves, PenaltyCurve};
use crate::rng::RngState;
use crate::svg::{self, Panel, Series, Stroke};
use crate::trainer::{self, evaluate, write_metrics_csv, ClipMode, LrSchedule, RunStatus, TrainMetrics, Units};

/// Append-only plain-text log that also forwards to the `log` facade.
pub struct RunLog {
    file: BufWriter<File>,
}

impl RunLog {
    pub fn create(dir: &Path) -> Result<Self> {
        Ok(Self { file: BufWriter::new(File::create(dir.join("run.log"))?) })
    }

    pub fn line(&mut self, msg: impl AsRef<str>) -> Result<()> {
        log::info!("{}", msg.as_ref());
        writeln!(self.file, "{}", msg.as_ref())?;
        self.file.flush()?;
        Ok(())
    }
}

fn prepare_dir(dir: &Path, cfg: &ExperimentConfig) -> Result<RunLog> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(cfg).map_err(|e| Error::config("config", e.to_string()))?;
    fs::write(dir.join("config.json"), json + "\n")?;
    let mut log = RunLog::create(dir)?;
    log.line(format!("experiment {} seed {}", cfg.experiment.name(), cfg.seed))?;
    Ok(log)
}

fn data_rng(seed: u64) -> RngState {
    RngState::new(seed).fork(0xda7a)
}

/// Generate or load the base dataset and split it (no contamination).
pub fn build_clean_dataset(cfg: &DataConfig, seed: u64) -> Result<Dataset> {
    let mut rng = data_rng(seed);
    let ds = match &cfg.source {
        DataSource::TwoMoons { n, noise_sd } => data::gen_two_moons(*n, *noise_sd, &mut rng)?,
        DataSource::Rings { n, radii, noise_sd } => data::gen_rings(*n, radii, *noise_sd, &mut rng)?,
        DataSource::Idx { path, max_rows, downsample: ds_to } => {
            let mut ds = data::load_idx(path)?;
            if let Some(m) = max_rows {
                let keep: Vec<usize> = (0..ds.len().min(*m)).collect();
                let mut cut = Dataset::new(ds.gather(&keep), ds.shape, ds.meta.source.clone())?;
                cut.meta.bits = ds.meta.bits;
                ds = cut;
            }
            if let Some([h, w]) = ds_to {
                ds = downsample(&ds, *h, *w)?;
            }
            dequantize(&ds, 8, &mut rng)?
        }
        DataSource::Cache { path } => return data::load_dataset(path),
    };
    let [a, b, c] = cfg.split;
    split_dataset(&ds, (a, b, c), &mut rng)
}

/// [`build_clean_dataset`] followed by the configured contamination.
pub fn build_dataset(cfg: &DataConfig, seed: u64) -> Result<Dataset> {
    let ds = build_clean_dataset(cfg, seed)?;
    match &cfg.contamination {
        Some(c) => inject_outliers(&ds, c.fraction, &c.outlier, &c.targets, &mut data_rng(seed).fork(1)),
        None => Ok(ds),
    }
}

fn run_one(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    base: BaseKind,
    train_cfg: &trainer::TrainConfig,
    dir: &Path,
    model_seed: u64,
) -> Result<(FlowModel, TrainMetrics)> {
    fs::create_dir_all(dir)?;
    let mut model = FlowModel::new(&cfg.model.spec(ds.shape, base), model_seed)?;
    let every = cfg.checkpoint_every;
    let metrics = trainer::train_with(&mut model, ds, train_cfg, |m, rec| {
        if let Some(k) = every {
            if k > 0 && rec.step % k == 0 {
                save_checkpoint(dir.join(format!("step_{}.ckpt", rec.step)), m, rec.step as u64)?;
            }
        }
        Ok(())
    })?;
    let mut w = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    write_metrics_csv(&mut w, &metrics)?;
    w.flush()?;
    save_checkpoint(dir.join("model.ckpt"), &model, metrics.steps_run as u64)?;
    Ok((model, metrics))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Outcome of a single training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub status: RunStatus,
    pub units: Units,
    pub steps_run: usize,
    pub final_train_nll: Option<f64>,
    pub final_val_nll: Option<f64>,
    pub best_val: Option<(usize, f64)>,
    pub test_nll: Option<f64>,
    pub checkpoint: PathBuf,
}

/// Train one model; writes `metrics.csv`, `model.ckpt` and `summary.json`.
pub fn run_train_single(cfg: &ExperimentConfig, out: &Path) -> Result<TrainReport> {
    let mut log = prepare_dir(out, cfg)?;
    let ds = build_dataset(&cfg.data, cfg.seed)?;
    log.line(format!(
        "data {}: {} rows (train {}, val {}, test {}), {} contaminated",
        ds.meta.source,
        ds.len(),
        ds.splits.train.len(),
        ds.splits.val.len(),
        ds.splits.test.len(),
        ds.contaminated_count()
    ))?;
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    let (model, metrics) = run_one(cfg, &ds, cfg.model.base, &tc, out, cfg.seed)?;
    let test_rows = ds.split_rows(SplitName::Test);
    let test_nll = if test_rows.is_empty() || metrics.status.is_diverged() {
        None
    } else {
        evaluate(&model, &test_rows, metrics.units).ok()
    };
    let report = TrainReport {
        status: metrics.status.clone(),
        units: metrics.units,
        steps_run: metrics.steps_run,
        final_train_nll: metrics.final_train(),
        final_val_nll: metrics.final_val(),
        best_val: metrics.best_val(),
        test_nll,
        checkpoint: out.join("model.ckpt"),
    };
    log.line(format!(
        "{} after {} steps; final val {} {}; test {}",
        report.status.label(),
        report.steps_run,
        opt(report.final_val_nll),
        report.units.label(),
        opt(report.test_nll)
    ))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::config("report", e.to_string()))?;
    fs::write(out.join("summary.json"), json + "\n")?;
    Ok(report)
}

/// One cell of the stability matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRun {
    pub variant: String,
    pub base: BaseKind,
    pub clip: ClipMode,
    pub lr: f64,
    pub seed: u64,
    pub status: RunStatus,
    pub final_train_nll: Option<f64>,
    pub final_val_nll: Option<f64>,
    pub best_val: Option<(usize, f64)>,
    /// `(step, train NLL)` at every evaluation.
    pub curve: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub runs: Vec<StabilityRun>,
}

impl StabilityReport {
    pub fn any_diverged(&self) -> bool {
        self.runs.iter().any(|r| r.status.is_diverged())
    }

    pub fn runs_for<'a>(&'a self, variant: &'a str, lr: f64) -> impl Iterator<Item = &'a StabilityRun> + 'a {
        self.runs.iter().filter(move |r| r.variant == variant && r.lr == lr)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "variant,base,nu,clip,lr,seed,status,diverged_step,final_train_nll,final_val_nll,best_val_step,best_val_nll\n",
        );
        for r in &self.runs {
            let diverged_step = match &r.status {
                RunStatus::Diverged { step, .. } => step.to_string(),
                RunStatus::Converged => String::new(),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.variant,
                r.base.name(),
                r.base.nu().map(|v| v.to_string()).unwrap_or_default(),
                clip_label(&r.clip),
                r.lr,
                r.seed,
                r.status.label(),
                diverged_step,
                opt(r.final_train_nll),
                opt(r.final_val_nll),
                r.best_val.map(|b| b.0.to_string()).unwrap_or_default(),
                opt(r.best_val.map(|b| b.1)),
            );
        }
        s
    }
}

pub fn clip_label(c: &ClipMode) -> String {
    match c {
        ClipMode::None => "none".into(),
        ClipMode::Norm { threshold } => format!("norm({threshold})"),
        ClipMode::Element { threshold } => format!("element({threshold})"),
        ClipMode::Both { norm, element } => format!("both({norm};{element})"),
    }
}

/// Train every variant at every learning rate for every seed on
/// contaminated data. Writes `summary.csv`, `losses.svg`, and
/// `runs/<variant>_lr<lr>_seed<seed>/{metrics.csv,model.ckpt}`.
/// Diverged runs are reported, not raised.
pub fn run_stability(cfg: &ExperimentConfig, out: &Path) -> Result<StabilityReport> {
    let mut log = prepare_dir(out, cfg)?;
    let st = &cfg.stability;
    if st.variants.is_empty() || st.lrs.is_empty() || st.seeds == 0 {
        return Err(Error::config("stability", "need at least one variant, learning rate and seed"));
    }
    let mut runs = Vec::new();
    for k in 0..st.seeds as u64 {
        let seed = cfg.seed + k;
        let ds = build_dataset(&cfg.data, seed)?;
        log.line(format!("seed {seed}: {} rows, {} contaminated", ds.len(), ds.contaminated_count()))?;
        for &lr in &st.lrs {
            for v in &st.variants {
                let mut tc = cfg.train.clone();
                tc.lr_schedule = LrSchedule::Constant { lr };
                tc.clip = v.clip;
                tc.seed = seed;
                let dir = out.join("runs").join(format!("{}_lr{}_seed{}", v.name, lr, seed));
                let (_, m) = run_one(cfg, &ds, v.base, &tc, &dir, seed)?;
                log.line(format!(
                    "{} lr={lr} seed={seed}: {} final val {}",
                    v.name,
                    m.status.label(),
                    opt(m.final_val())
                ))?;
                runs.push(StabilityRun {
                    variant: v.name.clone(),
                    base: v.base,
                    clip: v.clip,
                    lr,
                    seed,
                    status: m.status.clone(),
                    final_train_nll: m.final_train(),
                    final_val_nll: m.final_val(),
                    best_val: m.best_val(),
                    curve: m.records.iter().map(|r| (r.step, r.train_nll)).collect(),
                });
            }
        }
    }
    let report = StabilityReport { runs };
    fs::write(out.join("summary.csv"), report.summary_csv())?;
    fs::write(out.join("losses.svg"), stability_svg(cfg, &report))?;
    Ok(report)
}

fn stability_svg(cfg: &ExperimentConfig, report: &StabilityReport) -> String {
    let strokes = [Stroke::Dashed, Stroke::Solid, Stroke::Dotted];
    let panels: Vec<Panel> = cfg
        .stability
        .lrs
        .iter()
        .map(|&lr| Panel {
            title: format!("training NLL, lr={lr}, seed {}", cfg.seed),
            x_label: "step".into(),
            series: cfg
                .stability
                .variants
                .iter()
                .enumerate()
                .filter_map(|(i, v)| {
                    let run = report.runs_for(&v.name, lr).find(|r| r.seed == cfg.seed)?;
                    Some(Series {
                        label: v.name.clone(),
                        points: run.curve.iter().map(|(s, l)| (*s as f64, *l)).collect(),
                        stroke: strokes[i % strokes.len()],
                        color: svg::PALETTE[i % svg::PALETTE.len()],
                    })
                })
                .collect(),
            y_range: None,
        })
        .collect();
    svg::render(&panels)
}

/// Train and test conditions of the contamination grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Clean,
    Outliers,
}

impl Condition {
    pub fn label(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Outliers => "outliers",
        }
    }
}

/// Test NLL of one (train condition, test condition, ν, seed) combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub train: Condition,
    pub test: Condition,
    pub nu: f64,
    pub seed: u64,
    pub status: RunStatus,
    pub nll: Option<f64>,
}

/// Seed-averaged NLL and its difference to the Gaussian column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub train: Condition,
    pub test: Condition,
    pub nu: f64,
    pub mean_nll: Option<f64>,
    /// Mean over seeds of `nll(ν) − nll(∞)`; zero for the Gaussian column.
    pub delta: Option<f64>,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub units: Units,
    pub cells: Vec<GridCell>,
    pub table: Vec<GridRow>,
}

impl GridReport {
    pub fn any_diverged(&self) -> bool {
        self.cells.iter().any(|c| c.status.is_diverged())
    }

    pub fn row(&self, train: Condition, test: Condition, nu: f64) -> Option<&GridRow> {
        self.table.iter().find(|r| r.train == train && r.test == test && same_nu(r.nu, nu))
    }

    pub fn table_csv(&self) -> String {
        let mut s = String::from("train,test,nu,mean_nll,delta,diverged_runs,units\n");
        for r in &self.table {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.train.label(),
                r.test.label(),
                nu_label(r.nu),
                opt(r.mean_nll),
                opt(r.delta),
                r.diverged,
                self.units.label()
            );
        }
        s
    }

    pub fn cells_csv(&self) -> String {
        let mut s = String::from("train,test,nu,seed,status,nll\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.train.label(),
                c.test.label(),
                nu_label(c.nu),
                c.seed,
                c.status.label(),
                opt(c.nll)
            );
        }
        s
    }
}

fn same_nu(a: f64, b: f64) -> bool {
    a == b || (a.is_infinite() && b.is_infinite())
}

pub fn nu_label(nu: f64) -> String {
    if nu.is_infinite() {
        "inf".into()
    } else {
        nu.to_string()
    }
}

fn mask_csv(ds: &Dataset) -> String {
    let mut s = String::from("row,split,contaminated\n");
    for (name, rows) in [("train", &ds.splits.train), ("val", &ds.splits.val), ("test", &ds.splits.test)] {
        for &i in rows.iter() {
            let _ = writeln!(s, "{i},{name},{}", ds.contaminated[i] as u8);
        }
    }
    s
}

/// Train on clean and on contaminated (train + val) data for each ν and
/// seed, then evaluate on clean and contaminated test sets. Writes
/// `table.csv` (seed means and Δ against ν = ∞), `cells.csv`, per-seed
/// contamination masks and the per-run metrics and checkpoints.
pub fn run_contamination_grid(cfg: &ExperimentConfig, out: &Path) -> Result<GridReport> {
    let mut log = prepare_dir(out, cfg)?;
    let g = &cfg.grid;
    if g.nus.is_empty() || g.seeds == 0 {
        return Err(Error::config("grid", "need at least one nu and one seed"));
    }
    if let Some(nu) = g.nus.iter().find(|n| !(**n > 0.0)) {
        return Err(Error::config("grid.nus", format!("nu must be > 0 or \"inf\", got {nu}")));
    }
    fs::create_dir_all(out.join("masks"))?;
    let mut cells = Vec::new();
    let mut units = Units::NatsPerDim;
    for k in 0..g.seeds as u64 {
        let seed = cfg.seed + k;
        let clean = build_clean_dataset(&cfg.data, seed)?;
        let rng = data_rng(seed);
        let train_bad = inject_outliers(&clean, g.fraction, &g.outlier, &[SplitName::Train, SplitName::Val], &mut rng.fork(1))?;
        let test_bad = inject_outliers(&clean, g.fraction, &g.outlier, &[SplitName::Test], &mut rng.fork(2))?;
        fs::write(out.join("masks").join(format!("seed{seed}_train.csv")), mask_csv(&train_bad))?;
        fs::write(out.join("masks").join(format!("seed{seed}_test.csv")), mask_csv(&test_bad))?;
        let tests = [
            (Condition::Clean, clean.split_rows(SplitName::Test)),
            (Condition::Outliers, test_bad.split_rows(SplitName::Test)),
        ];
        log.line(format!(
            "seed {seed}: {} train outliers, {} test outliers",
            train_bad.contaminated_count(),
            test_bad.contaminated_count()
        ))?;
        for (cond, ds) in [(Condition::Clean, &clean), (Condition::Outliers, &train_bad)] {
            for &nu in &g.nus {
                let base = BaseKind::from_nu(nu);
                let mut tc = cfg.train.clone();
                tc.seed = seed;
                tc.clip = if matches!(base, BaseKind::Gaussian) { g.gaussian_clip } else { cfg.train.clip };
                let dir = out.join("runs").join(format!("train_{}_nu{}_seed{}", cond.label(), nu_label(nu), seed));
                let (model, m) = run_one(cfg, ds, base, &tc, &dir, seed)?;
                units = m.units;
                for (test_cond, rows) in &tests {
                    let nll = if m.status.is_diverged() { None } else { evaluate(&model, rows, m.units).ok() };
                    log.line(format!(
                        "train {} nu={} seed={seed} test {}: {} {}",
                        cond.label(),
                        nu_label(nu),
                        test_cond.label(),
                        m.status.label(),
                        opt(nll)
                    ))?;
                    cells.push(GridCell { train: cond, test: *test_cond, nu, seed, status: m.status.clone(), nll });
                }
            }
        }
    }
    let table = grid_table(&cells, &g.nus);
    let report = GridReport { units, cells, table };
    fs::write(out.join("table.csv"), report.table_csv())?;
    fs::write(out.join("cells.csv"), report.cells_csv())?;
    Ok(report)
}

fn grid_table(cells: &[GridCell], nus: &[f64]) -> Vec<GridRow> {
    let mut rows = Vec::new();
    for train in [Condition::Clean, Condition::Outliers] {
        for test in [Condition::Clean, Condition::Outliers] {
            let pick = |nu: f64| -> Vec<&GridCell> {
                cells.iter().filter(|c| c.train == train && c.test == test && same_nu(c.nu, nu)).collect()
            };
            let gauss = pick(f64::INFINITY);
            for &nu in nus {
                let these = pick(nu);
                let vals: Option<Vec<f64>> = these.iter().map(|c| c.nll).collect();
                let mean_nll = vals.as_ref().map(|v| v.iter().sum::<f64>() / v.len() as f64);
                let delta = if nu.is_infinite() {
                    mean_nll.map(|_| 0.0)
                } else {
                    // paired by seed
                    let diffs: Option<Vec<f64>> = these
                        .iter()
                        .map(|c| {
                            let g = gauss.iter().find(|x| x.seed == c.seed)?;
                            Some(c.nll? - g.nll?)
                        })
                        .collect();
                    diffs.filter(|d| !d.is_empty()).map(|d| d.iter().sum::<f64>() / d.len() as f64)
                };
                rows.push(GridRow {
                    train,
                    test,
                    nu,
                    mean_nll,
                    delta,
                    diverged: these.iter().filter(|c| c.status.is_diverged()).count(),
                });
            }
        }
    }
    rows
}

/// Write the penalty-curve CSVs and SVG.
pub fn run_fig1(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PenaltyCurve>> {
    let mut log = prepare_dir(out, cfg)?;
    let (curves, paths) = emit_fig1_curves(&cfg.fig1, out)?;
    for p in paths {
        log.line(format!("wrote {}", p.display()))?;
    }
    Ok(curves)
}
