//! Experiment configuration, sweeps over perturbation levels, and the CSV
//! artifacts they produce.
//!
//! Record files have the header
//! `b,trial,seed,J,cost,md,alpha,gain_lo,gain_hi,phase_deg,theta1,…,thetaN`.
//! Floats are written with 17 significant digits, infinities as `inf`/`-inf`,
//! and undefined values as empty fields. `J` is the nominal (δ = 0) reward of
//! the trained policy.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lqg::{lqg_cost, lqg_gains, to_companion};
use crate::margins::{analyze, MarginReport};
use crate::plant::PlantModel;
use crate::policy::{PolicyForm, PolicyParams};
use crate::reward::{exact_reward, PerturbationSpec, DEFAULT_QUADRATURE_ORDER};
use crate::trainer::{train, Hypercube, StepPolicy, TrainConfig};

/// Plant matrices as flat row-major arrays with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_w: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub bw: Vec<f64>,
    pub c: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

fn row_major(m: &Matrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl PlantSpec {
    pub fn from_model(p: &PlantModel) -> Self {
        Self {
            n_x: p.n_x(),
            n_u: p.n_u(),
            n_y: p.n_y(),
            n_w: p.bw.ncols(),
            a: row_major(&p.a),
            b: row_major(&p.b),
            bw: row_major(&p.bw),
            c: row_major(&p.c),
            q: row_major(&p.q),
            r: row_major(&p.r),
            w: row_major(&p.w),
            v: row_major(&p.v),
        }
    }

    pub fn to_model(&self) -> Result<PlantModel> {
        let m = |name: &str, data: &[f64], rows: usize, cols: usize| -> Result<Matrix> {
            if data.len() != rows * cols {
                return Err(Error::Config(format!(
                    "plant.{name}: expected {} entries ({rows}x{cols}), got {}",
                    rows * cols,
                    data.len()
                )));
            }
            Ok(Matrix::from_row_slice(rows, cols, data))
        };
        let (nx, nu, ny, nw) = (self.n_x, self.n_u, self.n_y, self.n_w);
        PlantModel::new(
            m("a", &self.a, nx, nx)?,
            m("b", &self.b, nx, nu)?,
            m("bw", &self.bw, nx, nw)?,
            m("c", &self.c, ny, nx)?,
            m("q", &self.q, nx, nx)?,
            m("r", &self.r, nu, nu)?,
            m("w", &self.w, nw, nw)?,
            m("v", &self.v, ny, ny)?,
        )
        .map_err(|e| Error::Config(format!("plant: {e}")))
    }
}

fn default_quadrature_order() -> usize {
    DEFAULT_QUADRATURE_ORDER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub hypercube: Hypercube,
    pub n_ri: usize,
    pub n_ga: usize,
    #[serde(default)]
    pub step: StepPolicy,
    #[serde(default = "default_quadrature_order")]
    pub quadrature_order: usize,
    /// Perturbation level used by `train`.
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub levels: Vec<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub plant: PlantSpec,
    pub policy: PolicyForm,
    pub train: TrainSpec,
    pub sweep: SweepSpec,
}

impl ExperimentConfig {
    pub fn doyle() -> Self {
        Self {
            name: "doyle".into(),
            plant: PlantSpec::from_model(&PlantModel::doyle()),
            policy: PolicyForm::Companion2,
            train: TrainSpec {
                hypercube: Hypercube::doyle(),
                n_ri: 500,
                n_ga: 100,
                step: StepPolicy::default(),
                quadrature_order: DEFAULT_QUADRATURE_ORDER,
                b: 0.0,
            },
            sweep: SweepSpec { levels: vec![0.0, 0.1, 0.2, 0.3, 0.4], trials: 20 },
        }
    }

    pub fn flexible() -> Self {
        Self {
            name: "flexible".into(),
            plant: PlantSpec::from_model(&PlantModel::flexible()),
            policy: PolicyForm::CtrbCanonical(3),
            train: TrainSpec {
                hypercube: Hypercube::flexible(),
                n_ri: 500,
                n_ga: 100,
                step: StepPolicy::default(),
                quadrature_order: DEFAULT_QUADRATURE_ORDER,
                b: 0.0,
            },
            sweep: SweepSpec { levels: vec![0.0, 0.1, 0.2, 0.3, 0.4], trials: 25 },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "doyle" => Ok(Self::doyle()),
            "flexible" => Ok(Self::flexible()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected `doyle` or `flexible`)"
            ))),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let plant = self.plant_model()?;
        if plant.n_u() != 1 || plant.n_y() != 1 {
            return Err(Error::Config(
                "policy: the parameterized forms are single-input single-output".into(),
            ));
        }
        self.train_config(0, self.train.b)
            .validate(self.policy)
            .map_err(|e| Error::Config(format!("train: {e}")))?;
        let levels = &self.sweep.levels;
        if levels.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config("sweep.levels: each level must lie in [0, 1)".into()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sweep.levels: must be strictly ascending".into()));
        }
        if self.sweep.trials == 0 {
            return Err(Error::Config("sweep.trials: must be at least 1".into()));
        }
        Ok(())
    }

    pub fn plant_model(&self) -> Result<PlantModel> {
        self.plant.to_model()
    }

    pub fn train_config(&self, seed: u64, b: f64) -> TrainConfig {
        let mut cfg = TrainConfig::new(self.train.hypercube.clone(), self.train.n_ri, self.train.n_ga, seed)
            .with_perturbation(PerturbationSpec::uniform(b).with_order(self.train.quadrature_order));
        cfg.step = self.train.step;
        cfg
    }
}

/// One trained policy at one perturbation level.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub b: f64,
    pub trial: usize,
    pub seed: u64,
    pub j: f64,
    pub cost: f64,
    pub md: Option<f64>,
    pub alpha: Option<f64>,
    pub gain_lo: Option<f64>,
    pub gain_hi: Option<f64>,
    pub phase_deg: Option<f64>,
    pub theta: Vec<f64>,
}

impl SweepRecord {
    fn new(b: f64, trial: usize, seed: u64, j: f64, theta: Vec<f64>, margins: Option<MarginReport>) -> Self {
        Self {
            b,
            trial,
            seed,
            j,
            cost: -j,
            md: margins.map(|m| m.disk.m_d),
            alpha: margins.map(|m| m.disk.alpha),
            gain_lo: margins.map(|m| m.gain_interval.0),
            gain_hi: margins.map(|m| m.gain_interval.1),
            phase_deg: margins.map(|m| m.phase.degrees),
            theta,
        }
    }

    pub fn is_stable(&self) -> bool {
        self.j.is_finite()
    }
}

/// Seed of trial `trial`; shared across perturbation levels.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    master.wrapping_add(trial as u64)
}

/// Trains `trials` policies at level `b` and analyzes each at δ = 0.
pub fn run_trials(cfg: &ExperimentConfig, master_seed: u64, b: f64, trials: usize) -> Result<Vec<SweepRecord>> {
    let plant = cfg.plant_model()?;
    (0..trials)
        .map(|trial| {
            let seed = trial_seed(master_seed, trial);
            let result = train(&plant, cfg.policy, &cfg.train_config(seed, b))?;
            if !result.found_stable() {
                return Ok(SweepRecord::new(b, trial, seed, f64::NEG_INFINITY, result.theta_opt, None));
            }
            let policy = result.policy()?;
            let j = exact_reward(&plant, &policy, &[0.0])?.value;
            // A loop that fails the disk-margin verification keeps its reward
            // but gets empty margin fields.
            let margins = analyze(&plant, &policy.realize()).ok();
            Ok(SweepRecord::new(b, trial, seed, j, result.theta_opt, margins))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub records: Vec<SweepRecord>,
    pub summary: Vec<SummaryRow>,
}

pub fn run_sweep(cfg: &ExperimentConfig, master_seed: u64) -> Result<SweepOutput> {
    let mut records = Vec::new();
    for &b in &cfg.sweep.levels {
        records.extend(run_trials(cfg, master_seed, b, cfg.sweep.trials)?);
    }
    records.sort_by(|x, y| x.b.total_cmp(&y.b).then(x.trial.cmp(&y.trial)));
    let lqg = lqg_reference(&cfg.plant_model()?)?;
    let summary = summarize(&records, &cfg.sweep.levels, Some(lqg));
    Ok(SweepOutput { records, summary })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqgReport {
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub cost: f64,
    pub margins: MarginReport,
    pub theta: Option<Vec<f64>>,
}

pub fn run_lqg(cfg: &ExperimentConfig) -> Result<LqgReport> {
    let plant = cfg.plant_model()?;
    let ctrl = lqg_gains(&plant)?;
    let realization = ctrl.realization();
    let cost = lqg_cost(&plant, &realization)?;
    let margins = analyze(&plant, &realization)?;
    let theta = if plant.n_x() == 2 {
        to_companion(&ctrl).ok().map(|p| p.theta().to_vec())
    } else {
        None
    };
    Ok(LqgReport {
        k: row_major(&ctrl.k),
        l: row_major(&ctrl.l),
        cost,
        margins,
        theta,
    })
}

/// `(cost, m_d)` of the LQG controller, the flat reference line in sweeps.
pub fn lqg_reference(plant: &PlantModel) -> Result<(f64, f64)> {
    let ctrl = lqg_gains(plant)?.realization();
    Ok((lqg_cost(plant, &ctrl)?, analyze(plant, &ctrl)?.disk.m_d))
}

pub fn policy_from_theta(cfg: &ExperimentConfig, theta: Vec<f64>) -> Result<PolicyParams> {
    PolicyParams::new(cfg.policy, theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryKind {
    Level,
    Lqg,
}

/// Per-level statistics over stable trials; the `Lqg` row carries the
/// reference cost and disk margin with zero spread.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub kind: SummaryKind,
    pub b: Option<f64>,
    pub trials: usize,
    pub stable: usize,
    pub md_mean: Option<f64>,
    pub md_std: Option<f64>,
    pub cost_mean: Option<f64>,
    pub cost_std: Option<f64>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

pub fn summarize(records: &[SweepRecord], levels: &[f64], lqg: Option<(f64, f64)>) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = levels
        .iter()
        .map(|&b| {
            let at: Vec<&SweepRecord> = records.iter().filter(|r| r.b == b).collect();
            let costs: Vec<f64> = at.iter().filter(|r| r.is_stable()).map(|r| r.cost).collect();
            let mds: Vec<f64> = at.iter().filter_map(|r| r.md).collect();
            let md = mean_std(&mds);
            let cost = mean_std(&costs);
            SummaryRow {
                kind: SummaryKind::Level,
                b: Some(b),
                trials: at.len(),
                stable: costs.len(),
                md_mean: md.map(|m| m.0),
                md_std: md.map(|m| m.1),
                cost_mean: cost.map(|c| c.0),
                cost_std: cost.map(|c| c.1),
            }
        })
        .collect();
    if let Some((cost, md)) = lqg {
        rows.push(SummaryRow {
            kind: SummaryKind::Lqg,
            b: None,
            trials: 1,
            stable: 1,
            md_mean: Some(md),
            md_std: Some(0.0),
            cost_mean: Some(cost),
            cost_std: Some(0.0),
        });
    }
    rows
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn parse_f64(field: &str, name: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("line {line}: `{name}` is not a number: `{field}`")))
}

fn parse_opt(field: &str, name: &str, line: u64) -> Result<Option<f64>> {
    if field.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(field, name, line).map(Some)
    }
}

fn parse_int<T: std::str::FromStr>(field: &str, name: &str, line: u64) -> Result<T> {
    field
        .trim()
        .parse::<T>()
        .map_err(|_| Error::InvalidInput(format!("line {line}: `{name}` is not an integer: `{field}`")))
}

const RECORD_FIXED: [&str; 10] = ["b", "trial", "seed", "J", "cost", "md", "alpha", "gain_lo", "gain_hi", "phase_deg"];

pub fn record_header(n_params: usize) -> Vec<String> {
    RECORD_FIXED
        .iter()
        .map(|s| s.to_string())
        .chain((1..=n_params).map(|k| format!("theta{k}")))
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn write_records<W: Write>(out: W, n_params: usize, records: &[SweepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(record_header(n_params)).map_err(csv_err)?;
    for r in records {
        if r.theta.len() != n_params {
            return Err(Error::DimensionMismatch(format!(
                "record has {} parameters, header has {n_params}",
                r.theta.len()
            )));
        }
        let mut row = vec![
            fmt_f64(r.b),
            r.trial.to_string(),
            r.seed.to_string(),
            fmt_f64(r.j),
            fmt_f64(r.cost),
            fmt_opt(r.md),
            fmt_opt(r.alpha),
            fmt_opt(r.gain_lo),
            fmt_opt(r.gain_hi),
            fmt_opt(r.phase_deg),
        ];
        row.extend(r.theta.iter().map(|t| fmt_f64(*t)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<SweepRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let n_params = header.len().saturating_sub(RECORD_FIXED.len());
    if header != record_header(n_params) {
        return Err(Error::InvalidInput(format!("unexpected record header: {}", header.join(","))));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let f = |i: usize| row.get(i).unwrap_or("");
        out.push(SweepRecord {
            b: parse_f64(f(0), "b", line)?,
            trial: parse_int(f(1), "trial", line)?,
            seed: parse_int(f(2), "seed", line)?,
            j: parse_f64(f(3), "J", line)?,
            cost: parse_f64(f(4), "cost", line)?,
            md: parse_opt(f(5), "md", line)?,
            alpha: parse_opt(f(6), "alpha", line)?,
            gain_lo: parse_opt(f(7), "gain_lo", line)?,
            gain_hi: parse_opt(f(8), "gain_hi", line)?,
            phase_deg: parse_opt(f(9), "phase_deg", line)?,
            theta: (0..n_params)
                .map(|k| parse_f64(f(10 + k), &header[10 + k], line))
                .collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

const SUMMARY_HEADER: [&str; 8] = ["kind", "b", "trials", "stable", "md_mean", "md_std", "cost_mean", "cost_std"];

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for r in rows {
        let kind = match r.kind {
            SummaryKind::Level => "level",
            SummaryKind::Lqg => "lqg",
        };
        w.write_record([
            kind.to_string(),
            fmt_opt(r.b),
            r.trials.to_string(),
            r.stable.to_string(),
            fmt_opt(r.md_mean),
            fmt_opt(r.md_std),
            fmt_opt(r.cost_mean),
            fmt_opt(r.cost_std),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != SUMMARY_HEADER {
        return Err(Error::InvalidInput(format!("unexpected summary header: {}", header.join(","))));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let f = |i: usize| row.get(i).unwrap_or("");
        let kind = match f(0) {
            "level" => SummaryKind::Level,
            "lqg" => SummaryKind::Lqg,
            other => return Err(Error::InvalidInput(format!("line {line}: unknown row kind `{other}`"))),
        };
        out.push(SummaryRow {
            kind,
            b: parse_opt(f(1), "b", line)?,
            trials: parse_int(f(2), "trials", line)?,
            stable: parse_int(f(3), "stable", line)?,
            md_mean: parse_opt(f(4), "md_mean", line)?,
            md_std: parse_opt(f(5), "md_std", line)?,
            cost_mean: parse_opt(f(6), "cost_mean", line)?,
            cost_std: parse_opt(f(7), "cost_std", line)?,
        });
    }
    Ok(out)
}

/// `results.csv` → `results.summary.csv`.
pub fn summary_path(records_path: &Path) -> PathBuf {
    let stem = records_path.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    records_path.with_file_name(format!("{stem}.summary.csv"))
}

pub fn save_records(path: &Path, n_params: usize, records: &[SweepRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_records(file, n_params, records)
}

pub fn save_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_summary(file, rows)
}

/// Parses `"a, b c"`-style lists of numbers (commas and/or whitespace).
pub fn parse_theta(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("`{s}` is not a number")))
        })
        .collect()
}
