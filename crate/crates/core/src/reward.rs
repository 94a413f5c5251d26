//! Expected average reward of a policy and its gradient.
//!
//! For a Schur closed loop `x̄⁺ = Ā x̄ + w̄`, the average of `x̄ᵀ M x̄` equals
//! `trace(M X)` with `X = Ā X Āᵀ + W̄`. The reward is the negative of that
//! cost. Unstable loops score [`f64::NEG_INFINITY`].
//!
//! Gradients use the adjoint `Y = Āᵀ Y Ā + M`: for a parameter entering
//! through `∂Ā`, `∂M`, `∂W̄`, the cost derivative is
//! `trace(∂M X) + 2 trace(Āᵀ Y ∂Ā X) + trace(Y ∂W̄)`, which equals
//! `trace(∂M X + M ∂X)` with `∂X = Ā ∂X Āᵀ + ∂Ā X Āᵀ + Ā X ∂Āᵀ + ∂W̄`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{is_schur_stable, solve_dlyap, trace_product, Matrix};
use crate::plant::PlantModel;
use crate::policy::{assemble, ClosedLoop, PolicyParams};
use crate::quadrature::gauss_legendre;

pub const DEFAULT_QUADRATURE_ORDER: usize = 7;
pub const DEFAULT_MC_FALLBACK_SAMPLES: usize = 64;
const MC_FALLBACK_SEED: u64 = 0x5eed0fde17a;
/// Rollouts whose state norm passes this are reported as diverged.
pub const ROLLOUT_OVERFLOW: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct RewardEval {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
    pub stable: bool,
}

impl RewardEval {
    pub fn unstable() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            gradient: None,
            stable: false,
        }
    }

    pub fn cost(&self) -> f64 {
        -self.value
    }
}

/// Uniform multiplicative input perturbation `Δᵢ = 1 + δᵢ`,
/// `δᵢ ~ U[-bᵢ, bᵢ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    /// One half-width per input channel, or a single value shared by all.
    pub b: Vec<f64>,
    pub quadrature_order: usize,
    pub mc_fallback_samples: usize,
}

impl PerturbationSpec {
    pub fn uniform(b: f64) -> Self {
        Self {
            b: vec![b],
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
            mc_fallback_samples: DEFAULT_MC_FALLBACK_SAMPLES,
        }
    }

    pub fn none() -> Self {
        Self::uniform(0.0)
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.quadrature_order = order;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.b.is_empty() {
            return Err(Error::InvalidInput("perturbation needs at least one half-width".into()));
        }
        if self.b.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::InvalidInput(
                "perturbation half-widths must lie in [0, 1)".into(),
            ));
        }
        if self.quadrature_order == 0 || self.quadrature_order.is_multiple_of(2) {
            return Err(Error::InvalidInput("quadrature order must be odd and >= 1".into()));
        }
        if self.mc_fallback_samples == 0 {
            return Err(Error::InvalidInput("mc_fallback_samples must be >= 1".into()));
        }
        Ok(())
    }

    /// Half-widths expanded to `n_u` channels.
    pub fn channel_widths(&self, n_u: usize) -> Result<Vec<f64>> {
        match self.b.len() {
            1 => Ok(vec![self.b[0]; n_u]),
            n if n == n_u => Ok(self.b.clone()),
            n => Err(Error::DimensionMismatch(format!(
                "perturbation has {n} half-widths for {n_u} input channels"
            ))),
        }
    }

    pub fn is_nominal(&self) -> bool {
        self.b.iter().all(|b| *b == 0.0)
    }
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self::none()
    }
}

fn closed_loop_solution(cl: &ClosedLoop) -> Result<Option<Matrix>> {
    if !is_schur_stable(&cl.a_bar)?.stable {
        return Ok(None);
    }
    match solve_dlyap(&cl.a_bar, &cl.w_bar) {
        Ok(x) => Ok(Some(x)),
        Err(Error::NonStable) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Cost gradient given the closed loop and its covariance `X`.
fn cost_gradient(plant: &PlantModel, policy: &PolicyParams, cl: &ClosedLoop, x: &Matrix) -> Result<Vec<f64>> {
    let y = solve_dlyap(&cl.a_bar.transpose(), &cl.m).map_err(|e| match e {
        Error::NonStable => Error::UnstableLoop,
        other => other,
    })?;
    let nx = plant.n_x();
    let realization = policy.realize();
    let nk = realization.order();
    // Only the controller-dependent blocks of Ā, M, W̄ move with θ.
    let ay = cl.a_bar.transpose() * &y;
    let mut b_delta = plant.b.clone();
    for (j, d) in cl.delta.iter().enumerate() {
        b_delta.column_mut(j).scale_mut(1.0 + d);
    }
    let r_ck = &plant.r * &realization.c_k;
    let v_bk = &plant.v * realization.b_k.transpose();
    let x_kk = x.view((nx, nx), (nk, nk)).clone_owned();
    let y_kk = y.view((nx, nx), (nk, nk)).clone_owned();

    let mut grad = Vec::with_capacity(policy.theta().len());
    for part in policy.partials() {
        let mut d_a = Matrix::zeros(nx + nk, nx + nk);
        d_a.view_mut((0, nx), (nx, nk))
            .copy_from(&(&b_delta * &part.c_k));
        d_a.view_mut((nx, 0), (nk, nx))
            .copy_from(&(&part.b_k * &plant.c));
        d_a.view_mut((nx, nx), (nk, nk)).copy_from(&part.a_k);

        let d_m = part.c_k.transpose() * &r_ck;
        let d_w = &part.b_k * &v_bk;
        // trace((D + Dᵀ) S) = 2 trace(D S) for symmetric S.
        let effort = 2.0 * trace_product(&d_m, &x_kk);
        let noise = 2.0 * trace_product(&d_w, &y_kk);
        let dynamics = 2.0 * trace_product(&(&ay * &d_a), x);
        grad.push(effort + dynamics + noise);
    }
    Ok(grad)
}

fn evaluate(plant: &PlantModel, policy: &PolicyParams, delta: &[f64], with_gradient: bool) -> Result<RewardEval> {
    let cl = assemble(plant, policy, delta)?;
    let Some(x) = closed_loop_solution(&cl)? else {
        return Ok(RewardEval::unstable());
    };
    let value = -trace_product(&cl.m, &x);
    let gradient = if with_gradient {
        let g = cost_gradient(plant, policy, &cl, &x)?;
        Some(g.into_iter().map(|v| -v).collect())
    } else {
        None
    };
    Ok(RewardEval {
        value,
        gradient,
        stable: true,
    })
}

/// `−trace(M X)` at a fixed input perturbation; `stable = false` and `−∞`
/// when the loop is not Schur.
pub fn exact_reward(plant: &PlantModel, policy: &PolicyParams, delta: &[f64]) -> Result<RewardEval> {
    evaluate(plant, policy, delta, false)
}

/// Reward and gradient in one pass.
pub fn exact_reward_and_gradient(
    plant: &PlantModel,
    policy: &PolicyParams,
    delta: &[f64],
) -> Result<RewardEval> {
    evaluate(plant, policy, delta, true)
}

/// `∇θ` of the reward at a fixed perturbation.
pub fn exact_gradient(plant: &PlantModel, policy: &PolicyParams, delta: &[f64]) -> Result<Vec<f64>> {
    let eval = evaluate(plant, policy, delta, true)?;
    eval.gradient.ok_or(Error::UnstableLoop)
}

/// Perturbation nodes and normalized weights (summing to 1) for the
/// expectation over `δ ~ U[-b, b]^{n_u}`.
pub fn perturbation_nodes(spec: &PerturbationSpec, n_u: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    spec.validate()?;
    let widths = spec.channel_widths(n_u)?;
    if n_u <= 2 {
        let (x, w) = gauss_legendre(spec.quadrature_order);
        let mut nodes: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
        for width in &widths {
            let mut next = Vec::with_capacity(nodes.len() * x.len());
            for (point, weight) in &nodes {
                for (xi, wi) in x.iter().zip(&w) {
                    let mut p = point.clone();
                    p.push(width * xi);
                    next.push((p, weight * wi * 0.5));
                }
            }
            nodes = next;
        }
        Ok(nodes)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(MC_FALLBACK_SEED);
        let weight = 1.0 / spec.mc_fallback_samples as f64;
        Ok((0..spec.mc_fallback_samples)
            .map(|_| {
                let point = widths
                    .iter()
                    .map(|b| b * (2.0 * rand::Rng::gen::<f64>(&mut rng) - 1.0))
                    .collect();
                (point, weight)
            })
            .collect())
    }
}

/// `E_δ[exact_reward]` over uniform input perturbations. Any unstable node
/// makes the whole expectation `−∞`. `b = 0` is exactly [`exact_reward`].
pub fn averaged_reward(
    plant: &PlantModel,
    policy: &PolicyParams,
    spec: &PerturbationSpec,
    with_gradient: bool,
) -> Result<RewardEval> {
    spec.validate()?;
    let n_u = plant.n_u();
    if spec.is_nominal() {
        spec.channel_widths(n_u)?;
        return evaluate(plant, policy, &vec![0.0; n_u], with_gradient);
    }
    let nodes = perturbation_nodes(spec, n_u)?;
    let mut value = 0.0;
    let mut gradient = with_gradient.then(|| vec![0.0; policy.theta().len()]);
    for (delta, weight) in &nodes {
        let eval = evaluate(plant, policy, delta, with_gradient)?;
        if !eval.stable {
            return Ok(RewardEval::unstable());
        }
        value += weight * eval.value;
        if let (Some(acc), Some(g)) = (gradient.as_mut(), eval.gradient.as_ref()) {
            for (a, gi) in acc.iter_mut().zip(g) {
                *a += weight * gi;
            }
        }
    }
    Ok(RewardEval {
        value,
        gradient,
        stable: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub episodes: usize,
}

fn cholesky_factor(name: &str, m: &Matrix) -> Result<Matrix> {
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidInput(format!("{name} must be positive definite")))
}

/// Monte-Carlo estimate of the average reward from `episodes` independent
/// rollouts of the plant and policy, each starting from zero state and
/// averaging `r = −(xᵀQx + uᵀRu)` over `horizon` steps.
///
/// Episode `i` draws its noise from a ChaCha stream `i` under `seed`, so the
/// estimate is a pure function of its arguments.
pub fn mc_reward(
    plant: &PlantModel,
    policy: &PolicyParams,
    delta: &[f64],
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<McEstimate> {
    if horizon == 0 || episodes == 0 {
        return Err(Error::InvalidInput("horizon and episodes must be >= 1".into()));
    }
    // Validates shapes and the perturbation.
    assemble(plant, policy, delta)?;
    let ctrl = policy.realize();
    let w_chol = cholesky_factor("W", &plant.w)?;
    let v_chol = cholesky_factor("V", &plant.v)?;
    let bw_w = &plant.bw * &w_chol;
    let mut b_delta = plant.b.clone();
    for (j, d) in delta.iter().enumerate() {
        b_delta.column_mut(j).scale_mut(1.0 + d);
    }
    let (nx, nk, nw, ny, nu) = (plant.n_x(), ctrl.order(), plant.bw.ncols(), plant.n_y(), plant.n_u());

    let mut means = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(episode as u64);
        let mut x = nalgebra::DVector::<f64>::zeros(nx);
        let mut z = nalgebra::DVector::<f64>::zeros(nk);
        let mut x_next = x.clone();
        let mut z_next = z.clone();
        let mut u = nalgebra::DVector::<f64>::zeros(nu);
        let mut y = nalgebra::DVector::<f64>::zeros(ny);
        let mut xi_w = nalgebra::DVector::<f64>::zeros(nw);
        let mut xi_v = nalgebra::DVector::<f64>::zeros(ny);
        let mut total = 0.0;
        for step in 0..horizon {
            u.gemv(1.0, &ctrl.c_k, &z, 0.0);
            total -= x.dot(&(&plant.q * &x)) + u.dot(&(&plant.r * &u));

            for v in xi_w.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            for v in xi_v.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            y.gemv(1.0, &plant.c, &x, 0.0);
            y.gemv(1.0, &v_chol, &xi_v, 1.0);

            x_next.gemv(1.0, &plant.a, &x, 0.0);
            x_next.gemv(1.0, &b_delta, &u, 1.0);
            x_next.gemv(1.0, &bw_w, &xi_w, 1.0);
            z_next.gemv(1.0, &ctrl.a_k, &z, 0.0);
            z_next.gemv(1.0, &ctrl.b_k, &y, 1.0);
            std::mem::swap(&mut x, &mut x_next);
            std::mem::swap(&mut z, &mut z_next);

            let norm = (x.norm_squared() + z.norm_squared()).sqrt();
            if !(norm <= ROLLOUT_OVERFLOW) {
                return Err(Error::Overflow {
                    step,
                    limit: ROLLOUT_OVERFLOW,
                });
            }
        }
        means.push(total / horizon as f64);
    }

    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let std_error = if means.len() > 1 {
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        std_error,
        episodes,
    })
}

/// Expected shortfall of a zero-initial-state rollout average relative to
/// the stationary reward: `trace(M Z) / horizon` with `Z = Ā Z Āᵀ + X`.
/// The finite-horizon expected cost is `trace(M X) − (1/N) trace(M Σₜ<ₙ ĀᵗXĀᵗᵀ)`,
/// bounded by this value.
pub fn mc_bias_allowance(
    plant: &PlantModel,
    policy: &PolicyParams,
    delta: &[f64],
    horizon: usize,
) -> Result<f64> {
    let cl = assemble(plant, policy, delta)?;
    let x = closed_loop_solution(&cl)?.ok_or(Error::UnstableLoop)?;
    let z = solve_dlyap(&cl.a_bar, &x)?;
    Ok(trace_product(&cl.m, &z) / horizon as f64)
}
