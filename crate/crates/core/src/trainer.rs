//! Gradient ascent with random initialization over a parameter hypercube.
//!
//! Each initialization is ascended with accept-on-non-decrease backtracking,
//! so the reward along a trajectory never drops. Unstable starting points are
//! scored `−∞` and left alone.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::plant::PlantModel;
use crate::policy::{PolicyForm, PolicyParams};
use crate::reward::{averaged_reward, PerturbationSpec, RewardEval};

/// Below this gradient norm ascent stops where it is.
pub const MIN_GRADIENT_NORM: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypercube {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Hypercube {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let h = Self { lower, upper };
        h.validate()?;
        Ok(h)
    }

    /// Degenerate cube containing only `point`.
    pub fn point(point: Vec<f64>) -> Self {
        Self { lower: point.clone(), upper: point }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::DimensionMismatch("hypercube bounds must have equal, non-zero length".into()));
        }
        let ok = self
            .lower
            .iter()
            .zip(&self.upper)
            .all(|(l, u)| l.is_finite() && u.is_finite() && l <= u);
        if !ok {
            return Err(Error::InvalidInput("hypercube needs finite bounds with lower <= upper".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + (u - l) * rng.gen::<f64>())
            .collect()
    }

    /// The sampling box used for Doyle's example.
    pub fn doyle() -> Self {
        Self {
            lower: vec![-0.2, -0.2, -40.0, 0.0],
            upper: vec![0.0, 0.0, 0.0, 40.0],
        }
    }

    /// The sampling box for the third-order controllable-canonical policy on
    /// the flexible plant.
    pub fn flexible() -> Self {
        Self {
            lower: vec![0.0, -2.0, 0.0, -0.1, 0.0, -0.3],
            upper: vec![1.0, 0.0, 2.0, 0.0, 0.3, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `θ + η̃ g/(‖g‖ + ε)` in raw parameter units.
    NormalizedGradient,
    /// BFGS direction in coordinates scaled by the hypercube widths, first
    /// trial step clipped to `max_scaled_step`.
    QuasiNewton,
}

/// Step rule plus backtracking: the trial step is halved (at most
/// `max_halvings` times) until the reward does not decrease.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub rule: StepRule,
    pub eta: f64,
    pub max_scaled_step: f64,
    pub max_halvings: usize,
    pub epsilon: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            rule: StepRule::QuasiNewton,
            eta: 0.1,
            max_scaled_step: 0.5,
            max_halvings: 30,
            epsilon: 1e-12,
        }
    }
}

impl StepPolicy {
    pub fn normalized_gradient(eta: f64) -> Self {
        Self { rule: StepRule::NormalizedGradient, eta, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hypercube: Hypercube,
    pub n_ri: usize,
    pub n_ga: usize,
    pub step: StepPolicy,
    pub perturbation: PerturbationSpec,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(hypercube: Hypercube, n_ri: usize, n_ga: usize, seed: u64) -> Self {
        Self {
            hypercube,
            n_ri,
            n_ga,
            step: StepPolicy::default(),
            perturbation: PerturbationSpec::none(),
            seed,
        }
    }

    pub fn with_perturbation(mut self, perturbation: PerturbationSpec) -> Self {
        self.perturbation = perturbation;
        self
    }

    pub fn validate(&self, form: PolicyForm) -> Result<()> {
        self.hypercube.validate()?;
        if self.hypercube.dim() != form.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "hypercube has dimension {}, {form} needs {}",
                self.hypercube.dim(),
                form.n_params()
            )));
        }
        if self.n_ri == 0 || self.n_ga == 0 {
            return Err(Error::InvalidInput("N_ri and N_ga must be at least 1".into()));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.step.eta) || !positive(self.step.max_scaled_step) || !(self.step.epsilon >= 0.0) {
            return Err(Error::InvalidInput("step size must be positive and finite".into()));
        }
        self.perturbation.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ascent {
    pub theta: Vec<f64>,
    pub reward: f64,
    pub stable: bool,
    pub accepted_steps: usize,
    /// Reward at the start and after every accepted step.
    pub rewards: Vec<f64>,
}

fn eval(plant: &PlantModel, form: PolicyForm, theta: &[f64], spec: &PerturbationSpec) -> Result<RewardEval> {
    let policy = PolicyParams::new(form, theta.to_vec())?;
    averaged_reward(plant, &policy, spec, true)
}

/// Backtracks along `dir` (raw θ units) from length multiplier `first`.
fn line_search(
    plant: &PlantModel,
    form: PolicyForm,
    theta: &[f64],
    dir: &[f64],
    first: f64,
    current: f64,
    config: &TrainConfig,
) -> Result<Option<(Vec<f64>, RewardEval)>> {
    let mut t = first;
    for _ in 0..=config.step.max_halvings {
        let trial: Vec<f64> = theta.iter().zip(dir).map(|(x, d)| x + t * d).collect();
        let next = eval(plant, form, &trial, &config.perturbation)?;
        if next.stable && next.value >= current {
            return Ok(Some((trial, next)));
        }
        t *= 0.5;
    }
    Ok(None)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Inverse-Hessian approximation of `−J` in scaled coordinates.
struct Bfgs {
    h: Matrix,
}

impl Bfgs {
    fn new(n: usize) -> Self {
        Self { h: Matrix::identity(n, n) }
    }

    fn reset(&mut self) {
        self.h.fill_with_identity();
    }

    /// Ascent direction `H g`, falling back to `g` if it is not uphill.
    fn direction(&mut self, g: &DVector<f64>) -> DVector<f64> {
        let d = &self.h * g;
        if d.dot(g) > 0.0 {
            d
        } else {
            self.reset();
            g.clone()
        }
    }

    fn update(&mut self, s: &DVector<f64>, g_old: &DVector<f64>, g_new: &DVector<f64>) {
        let y = g_old - g_new;
        let sy = s.dot(&y);
        if sy <= 1e-12 * s.norm() * y.norm() {
            return;
        }
        let rho = 1.0 / sy;
        let n = s.len();
        let id = Matrix::identity(n, n);
        let left = &id - rho * s * y.transpose();
        let right = &id - rho * &y * s.transpose();
        self.h = &left * &self.h * &right + rho * s * s.transpose();
    }
}

pub fn ascend(plant: &PlantModel, form: PolicyForm, theta0: &[f64], config: &TrainConfig) -> Result<Ascent> {
    let mut theta = theta0.to_vec();
    let mut current = eval(plant, form, &theta, &config.perturbation)?;
    let mut out = Ascent {
        theta: theta.clone(),
        reward: current.value,
        stable: current.stable,
        accepted_steps: 0,
        rewards: vec![current.value],
    };
    if !current.stable {
        return Ok(out);
    }
    let step = config.step;
    let n = theta.len();
    let scale: Vec<f64> = config
        .hypercube
        .lower
        .iter()
        .zip(&config.hypercube.upper)
        .map(|(l, u)| if u > l { u - l } else { 1.0 })
        .collect();
    let scaled = |g: &[f64]| DVector::from_iterator(n, g.iter().zip(&scale).map(|(g, s)| g * s));
    let mut bfgs = Bfgs::new(n);

    for _ in 0..config.n_ga {
        let g = current.gradient.clone().expect("gradient requested");
        if !(norm(&g) >= MIN_GRADIENT_NORM) {
            break;
        }
        let accepted = match step.rule {
            StepRule::NormalizedGradient => {
                let gn = norm(&g) + step.epsilon;
                let dir: Vec<f64> = g.iter().map(|v| v / gn).collect();
                line_search(plant, form, &theta, &dir, step.eta, current.value, config)?
            }
            StepRule::QuasiNewton => {
                let gu = scaled(&g);
                let mut found = None;
                // Second pass retries along the scaled gradient after a reset.
                for _ in 0..2 {
                    let du = bfgs.direction(&gu);
                    let first = (step.max_scaled_step / du.norm()).min(1.0);
                    let dir: Vec<f64> = du.iter().zip(&scale).map(|(d, s)| d * s).collect();
                    found = line_search(plant, form, &theta, &dir, first, current.value, config)?;
                    if found.is_some() {
                        break;
                    }
                    bfgs.reset();
                }
                if let Some((trial, next)) = &found {
                    let s = DVector::from_iterator(n, (0..n).map(|i| (trial[i] - theta[i]) / scale[i]));
                    let g_new = scaled(next.gradient.as_ref().expect("gradient requested"));
                    bfgs.update(&s, &gu, &g_new);
                }
                found
            }
        };
        let Some((trial, next)) = accepted else { break };
        theta = trial;
        current = next;
        out.accepted_steps += 1;
        out.rewards.push(current.value);
    }
    out.theta = theta;
    out.reward = current.value;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitTrace {
    pub initial: Vec<f64>,
    pub final_theta: Vec<f64>,
    pub final_reward: f64,
    pub stable: bool,
    pub accepted_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub theta_opt: Vec<f64>,
    pub j_opt: f64,
    pub form: PolicyForm,
    pub traces: Vec<InitTrace>,
    pub seed: u64,
}

impl TrainResult {
    pub fn found_stable(&self) -> bool {
        self.j_opt > f64::NEG_INFINITY
    }

    pub fn policy(&self) -> Result<PolicyParams> {
        PolicyParams::new(self.form, self.theta_opt.clone())
    }
}

/// Initial point of initialization `index`, drawn from its own stream.
pub fn initial_point(config: &TrainConfig, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    config.hypercube.sample(&mut rng)
}

fn run_one(plant: &PlantModel, form: PolicyForm, config: &TrainConfig, index: usize) -> Result<InitTrace> {
    let initial = initial_point(config, index);
    let a = ascend(plant, form, &initial, config)?;
    Ok(InitTrace {
        initial,
        final_theta: a.theta,
        final_reward: a.reward,
        stable: a.stable,
        accepted_steps: a.accepted_steps,
    })
}

fn worker_count(jobs: usize) -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs)
        .max(1)
}

/// Runs `job(i)` for `i in 0..n`, in parallel when cores are available, and
/// returns results in index order.
pub(crate) fn run_indexed<T: Send>(n: usize, job: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = worker_count(n);
    if workers <= 1 {
        return (0..n).map(job).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let job = &job;
        let chunks: Vec<_> = slots
            .chunks_mut(n.div_ceil(workers))
            .enumerate()
            .map(|(c, chunk)| {
                let start = c * n.div_ceil(workers);
                scope.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(job(start + k));
                    }
                })
            })
            .collect();
        for handle in chunks {
            handle.join().expect("worker panicked");
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

pub fn train(plant: &PlantModel, form: PolicyForm, config: &TrainConfig) -> Result<TrainResult> {
    plant.validate()?;
    config.validate(form)?;
    let traces = run_indexed(config.n_ri, |i| run_one(plant, form, config, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    // Strictly greater keeps the lowest index among ties.
    let mut best = 0;
    for (i, t) in traces.iter().enumerate() {
        if t.final_reward > traces[best].final_reward {
            best = i;
        }
    }
    Ok(TrainResult {
        theta_opt: traces[best].final_theta.clone(),
        j_opt: traces[best].final_reward,
        form,
        traces,
        seed: config.seed,
    })
}
