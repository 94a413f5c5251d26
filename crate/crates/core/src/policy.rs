//! Fixed-order linear output-feedback policies and the closed loops they
//! form with a plant.
//!
//! A policy is `z⁺ = A_K z + B_K y`, `u = C_K z` with no direct feedthrough.
//! Two parameterizations are supported:
//!
//! * [`PolicyForm::Companion2`]: `A_K = [0 θ₁; 1 θ₂]`, `B_K = [1; 0]`,
//!   `C_K = [θ₃ θ₄]`.
//! * [`PolicyForm::CtrbCanonical`]`(n)`: `A_K` is the upward shift with bottom
//!   row `[θ₁ … θₙ]`, `B_K = eₙ`, `C_K = [θₙ₊₁ … θ₂ₙ]`.
//!
//! Both are affine in θ, so partial derivatives of the realization are
//! constant matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, symmetrize, Matrix};
use crate::plant::PlantModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "order", rename_all = "snake_case")]
pub enum PolicyForm {
    Companion2,
    CtrbCanonical(usize),
}

impl PolicyForm {
    pub fn n_params(self) -> usize {
        2 * self.order()
    }

    pub fn order(self) -> usize {
        match self {
            PolicyForm::Companion2 => 2,
            PolicyForm::CtrbCanonical(n) => n,
        }
    }

    /// Realization of an arbitrary parameter slice; `theta.len()` must equal
    /// [`n_params`](Self::n_params).
    fn build(self, theta: &[f64]) -> ControllerRealization {
        let n = self.order();
        let mut a_k = Matrix::zeros(n, n);
        let mut b_k = Matrix::zeros(n, 1);
        let mut c_k = Matrix::zeros(1, n);
        match self {
            PolicyForm::Companion2 => {
                a_k[(1, 0)] = 1.0;
                a_k[(0, 1)] = theta[0];
                a_k[(1, 1)] = theta[1];
                b_k[(0, 0)] = 1.0;
                c_k[(0, 0)] = theta[2];
                c_k[(0, 1)] = theta[3];
            }
            PolicyForm::CtrbCanonical(_) => {
                for i in 0..n - 1 {
                    a_k[(i, i + 1)] = 1.0;
                }
                for j in 0..n {
                    a_k[(n - 1, j)] = theta[j];
                    c_k[(0, j)] = theta[n + j];
                }
                b_k[(n - 1, 0)] = 1.0;
            }
        }
        ControllerRealization { a_k, b_k, c_k }
    }
}

impl std::fmt::Display for PolicyForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicyForm::Companion2 => write!(f, "companion2"),
            PolicyForm::CtrbCanonical(n) => write!(f, "ctrb_canonical({n})"),
        }
    }
}

/// A parameter vector together with the form that gives it meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    form: PolicyForm,
    theta: Vec<f64>,
}

impl PolicyParams {
    pub fn new(form: PolicyForm, theta: Vec<f64>) -> Result<Self> {
        if form.order() == 0 {
            return Err(Error::InvalidInput("policy order must be positive".into()));
        }
        if theta.len() != form.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "{form} needs {} parameters, got {}",
                form.n_params(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("policy parameters must be finite".into()));
        }
        Ok(Self { form, theta })
    }

    pub fn form(&self) -> PolicyForm {
        self.form
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn realize(&self) -> ControllerRealization {
        self.form.build(&self.theta)
    }

    /// `∂(A_K, B_K, C_K)/∂θₖ` for every k.
    pub fn partials(&self) -> Vec<ControllerRealization> {
        let base = self.form.build(&vec![0.0; self.theta.len()]);
        (0..self.theta.len())
            .map(|k| {
                let mut unit = vec![0.0; self.theta.len()];
                unit[k] = 1.0;
                let r = self.form.build(&unit);
                ControllerRealization {
                    a_k: r.a_k - &base.a_k,
                    b_k: r.b_k - &base.b_k,
                    c_k: r.c_k - &base.c_k,
                }
            })
            .collect()
    }
}

/// State-space matrices of a strictly proper LTI controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerRealization {
    pub a_k: Matrix,
    pub b_k: Matrix,
    pub c_k: Matrix,
}

impl ControllerRealization {
    pub fn order(&self) -> usize {
        self.a_k.nrows()
    }

    /// Same transfer function under the state change `z = T ẑ`.
    pub fn similarity(&self, t: &Matrix) -> Result<Self> {
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("similarity transform is singular".into()))?;
        Ok(Self {
            a_k: &t_inv * &self.a_k * t,
            b_k: &t_inv * &self.b_k,
            c_k: &self.c_k * t,
        })
    }

    fn check_against(&self, plant: &PlantModel) -> Result<()> {
        let nk = self.order();
        if self.a_k.ncols() != nk
            || self.b_k.shape() != (nk, plant.n_y())
            || self.c_k.shape() != (plant.n_u(), nk)
        {
            return Err(Error::DimensionMismatch(format!(
                "controller with A_K {:?}, B_K {:?}, C_K {:?} does not fit a plant with n_u={}, n_y={}",
                self.a_k.shape(),
                self.b_k.shape(),
                self.c_k.shape(),
                plant.n_u(),
                plant.n_y()
            )));
        }
        Ok(())
    }
}

/// The interconnection of plant, input perturbation `Δ = diag(1 + δ)` and
/// controller, driven by `[B_w w; B_K v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub a_bar: Matrix,
    pub w_bar: Matrix,
    pub m: Matrix,
    pub delta: Vec<f64>,
}

/// `Ā = [A, B Δ C_K; B_K C, A_K]`, `W̄ = blockdiag(B_w W B_wᵀ, B_K V B_Kᵀ)`,
/// `M = blockdiag(Q, C_Kᵀ R C_K)`.
///
/// The cost weights the commanded action `u = C_K z`, not the perturbed plant
/// input `Δu`.
pub fn assemble_realization(
    plant: &PlantModel,
    controller: &ControllerRealization,
    delta: &[f64],
) -> Result<ClosedLoop> {
    controller.check_against(plant)?;
    if delta.len() != plant.n_u() {
        return Err(Error::DimensionMismatch(format!(
            "perturbation has {} entries, plant has {} inputs",
            delta.len(),
            plant.n_u()
        )));
    }
    if delta.iter().any(|d| !(*d > -1.0) || !d.is_finite()) {
        return Err(Error::InvalidInput(
            "input perturbations must be finite and > -1".into(),
        ));
    }
    let nx = plant.n_x();
    let nk = controller.order();

    let mut b_delta = plant.b.clone();
    for (j, d) in delta.iter().enumerate() {
        b_delta.column_mut(j).scale_mut(1.0 + d);
    }

    let mut a_bar = Matrix::zeros(nx + nk, nx + nk);
    a_bar.view_mut((0, 0), (nx, nx)).copy_from(&plant.a);
    a_bar
        .view_mut((0, nx), (nx, nk))
        .copy_from(&(&b_delta * &controller.c_k));
    a_bar
        .view_mut((nx, 0), (nk, nx))
        .copy_from(&(&controller.b_k * &plant.c));
    a_bar.view_mut((nx, nx), (nk, nk)).copy_from(&controller.a_k);

    let sensor = symmetrize(&(&controller.b_k * &plant.v * controller.b_k.transpose()));
    let w_bar = block_diag(&plant.process_noise(), &sensor);
    let effort = symmetrize(&(controller.c_k.transpose() * &plant.r * &controller.c_k));
    let m = block_diag(&plant.q, &effort);

    Ok(ClosedLoop {
        a_bar,
        w_bar,
        m,
        delta: delta.to_vec(),
    })
}

pub fn assemble(plant: &PlantModel, policy: &PolicyParams, delta: &[f64]) -> Result<ClosedLoop> {
    assemble_realization(plant, &policy.realize(), delta)
}

/// Closed loop with every plant input scaled by the same real `gain`.
pub fn assemble_with_gain(
    plant: &PlantModel,
    controller: &ControllerRealization,
    gain: f64,
) -> Result<ClosedLoop> {
    assemble_realization(plant, controller, &vec![gain - 1.0; plant.n_u()])
}

/// Coefficients of a SISO strictly proper transfer function
/// `(n₁ zⁿ⁻¹ + … + nₙ) / (zⁿ + d₁ zⁿ⁻¹ + … + dₙ)`, returned as
/// `(numerator [n₁..nₙ], denominator [d₁..dₙ])`.
///
/// The denominator comes from Faddeev–LeVerrier; the numerator from Markov
/// parameters `hⱼ = C Aʲ⁻¹ B` via `nₖ = Σᵢ₌₀ᵏ⁻¹ dᵢ hₖ₋ᵢ` with `d₀ = 1`.
pub fn transfer_coefficients(c: &ControllerRealization) -> Result<(Vec<f64>, Vec<f64>)> {
    if c.b_k.ncols() != 1 || c.c_k.nrows() != 1 {
        return Err(Error::DimensionMismatch(
            "transfer coefficients require a SISO controller".into(),
        ));
    }
    let n = c.order();
    let ident = Matrix::identity(n, n);
    let mut den = Vec::with_capacity(n);
    let mut mk = Matrix::zeros(n, n);
    for k in 1..=n {
        mk = &c.a_k * &mk + &ident * den.last().copied().unwrap_or(1.0);
        let coeff = -(&c.a_k * &mk).trace() / k as f64;
        den.push(coeff);
    }

    let mut markov = Vec::with_capacity(n);
    let mut power_b = c.b_k.clone();
    for _ in 0..n {
        markov.push((&c.c_k * &power_b)[(0, 0)]);
        power_b = &c.a_k * power_b;
    }
    let num = (1..=n)
        .map(|k| {
            (0..k)
                .map(|i| {
                    let d = if i == 0 { 1.0 } else { den[i - 1] };
                    d * markov[k - i - 1]
                })
                .sum()
        })
        .collect();
    Ok((num, den))
}

fn controllable(c: &ControllerRealization) -> bool {
    let n = c.order();
    let mut ctrb = Matrix::zeros(n, n * c.b_k.ncols());
    let mut block = c.b_k.clone();
    let m = c.b_k.ncols();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = &c.a_k * block;
    }
    let sv = ctrb.singular_values();
    let max = sv.max();
    max > 0.0 && sv.min() > 1e-10 * max
}

/// Parameters of `form` whose realization has the same transfer function as
/// `controller`. Requires a SISO controller of the form's order that is
/// controllable, so that a state transformation between the two exists.
pub fn to_form(controller: &ControllerRealization, form: PolicyForm) -> Result<PolicyParams> {
    let n = form.order();
    if controller.order() != n {
        return Err(Error::NotRepresentable(format!(
            "controller has order {}, {form} has order {n}",
            controller.order()
        )));
    }
    if controller.b_k.ncols() != 1 || controller.c_k.nrows() != 1 {
        return Err(Error::NotRepresentable(
            "only single-input single-output controllers are supported".into(),
        ));
    }
    if !controllable(controller) {
        return Err(Error::NotRepresentable(
            "controller realization is not controllable; no state transformation exists".into(),
        ));
    }
    let (num, den) = transfer_coefficients(controller)?;
    let theta = match form {
        PolicyForm::Companion2 => {
            // z² − θ₂z − θ₁ and numerator θ₃z + (θ₄ − θ₃θ₂).
            let t2 = -den[0];
            let t1 = -den[1];
            let t3 = num[0];
            let t4 = num[1] + t3 * t2;
            vec![t1, t2, t3, t4]
        }
        PolicyForm::CtrbCanonical(_) => {
            // zⁿ − θₙzⁿ⁻¹ − … − θ₁ and numerator θ₂ₙzⁿ⁻¹ + … + θₙ₊₁.
            let mut theta = vec![0.0; 2 * n];
            for j in 0..n {
                theta[j] = -den[n - 1 - j];
                theta[n + j] = num[n - 1 - j];
            }
            theta
        }
    };
    PolicyParams::new(form, theta)
}
