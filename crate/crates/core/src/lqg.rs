//! Model-based LQG baseline: Riccati gains, the observer-based controller,
//! its steady-state cost, and its coordinates in a policy parameterization.

use crate::error::{Error, Result};
use crate::linalg::{is_schur_stable, riccati_gain, solve_dare, solve_dlyap, trace_product, Matrix};
use crate::plant::PlantModel;
use crate::policy::{assemble_realization, to_form, ControllerRealization, PolicyForm, PolicyParams};

/// Optimal LQR gain `K` and Kalman gain `L` together with the Riccati
/// solutions they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LqgController {
    pub k: Matrix,
    pub l: Matrix,
    pub p_c: Matrix,
    pub p_e: Matrix,
    a_ctrl: Matrix,
}

impl LqgController {
    /// Delayed-measurement realization: `x̂⁺ = (A − BK − LC) x̂ + L y`,
    /// `u = −K x̂`.
    pub fn realization(&self) -> ControllerRealization {
        ControllerRealization {
            a_k: self.a_ctrl.clone(),
            b_k: self.l.clone(),
            c_k: -&self.k,
        }
    }
}

pub fn lqg_gains(plant: &PlantModel) -> Result<LqgController> {
    plant.validate()?;
    let p_c = solve_dare(&plant.a, &plant.b, &plant.q, &plant.r)?;
    let k = riccati_gain(&plant.a, &plant.b, &plant.r, &p_c)?;

    let a_t = plant.a.transpose();
    let c_t = plant.c.transpose();
    let p_e = solve_dare(&a_t, &c_t, &plant.process_noise(), &plant.v)?;
    // L = A P_e Cᵀ (C P_e Cᵀ + V)⁻¹, computed through the transposed solve.
    let innovation = &plant.c * &p_e * &c_t + &plant.v;
    let rhs = &plant.c * &p_e * &a_t;
    let l = innovation
        .cholesky()
        .map(|ch| ch.solve(&rhs).transpose())
        .ok_or_else(|| Error::NoStabilizingSolution("C P_e Cᵀ + V is not positive definite".into()))?;

    let a_ctrl = &plant.a - &plant.b * &k - &l * &plant.c;
    Ok(LqgController { k, l, p_c, p_e, a_ctrl })
}

/// Steady-state average cost `trace(M X)` of `plant` in feedback with any
/// strictly proper controller.
pub fn lqg_cost(plant: &PlantModel, controller: &ControllerRealization) -> Result<f64> {
    let cl = assemble_realization(plant, controller, &vec![0.0; plant.n_u()])?;
    if !is_schur_stable(&cl.a_bar)?.stable {
        return Err(Error::UnstableLoop);
    }
    let x = solve_dlyap(&cl.a_bar, &cl.w_bar).map_err(|e| match e {
        Error::NonStable => Error::UnstableLoop,
        other => other,
    })?;
    Ok(trace_product(&cl.m, &x))
}

/// The LQG controller written in the second-order companion coordinates.
pub fn to_companion(controller: &LqgController) -> Result<PolicyParams> {
    to_form(&controller.realization(), PolicyForm::Companion2)
}
