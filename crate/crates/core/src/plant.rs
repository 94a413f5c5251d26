//! Discrete-time linear-Gaussian plants with quadratic cost weights.

use nalgebra::dmatrix;

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Matrix};

const SYMMETRY_TOL: f64 = 1e-12;

/// `x⁺ = A x + B u + B_w w`, `y = C x + v`, with `w ~ N(0, W)`, `v ~ N(0, V)`
/// and per-step cost `xᵀQx + uᵀRu`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: Matrix,
    pub b: Matrix,
    pub bw: Matrix,
    pub c: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub w: Matrix,
    pub v: Matrix,
}

fn check_symmetric(name: &str, m: &Matrix) -> Result<()> {
    let asym = (m - m.transpose()).norm();
    if asym > SYMMETRY_TOL * (1.0 + m.norm()) {
        return Err(Error::InvalidInput(format!("{name} is not symmetric")));
    }
    Ok(())
}

fn check_definite(name: &str, m: &Matrix, strict: bool) -> Result<()> {
    check_symmetric(name, m)?;
    let min_eig = symmetrize(m).symmetric_eigenvalues().min();
    let floor = -1e-12 * (1.0 + m.norm());
    let ok = if strict { min_eig > 0.0 } else { min_eig >= floor };
    if !ok {
        let kind = if strict { "positive definite" } else { "positive semidefinite" };
        return Err(Error::InvalidInput(format!(
            "{name} must be {kind} (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

impl PlantModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Matrix,
        b: Matrix,
        bw: Matrix,
        c: Matrix,
        q: Matrix,
        r: Matrix,
        w: Matrix,
        v: Matrix,
    ) -> Result<Self> {
        let plant = Self { a, b, bw, c, q, r, w, v };
        plant.validate()?;
        Ok(plant)
    }

    pub fn validate(&self) -> Result<()> {
        let nx = self.a.nrows();
        let dim = |name: &str, m: &Matrix, rows: usize, cols: usize| {
            if m.shape() != (rows, cols) {
                Err(Error::DimensionMismatch(format!(
                    "{name} must be {rows}x{cols}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )))
            } else {
                Ok(())
            }
        };
        if nx == 0 {
            return Err(Error::DimensionMismatch("A must be non-empty".into()));
        }
        dim("A", &self.a, nx, nx)?;
        let (nu, nw, ny) = (self.b.ncols(), self.bw.ncols(), self.c.nrows());
        if nu == 0 || nw == 0 || ny == 0 {
            return Err(Error::DimensionMismatch(
                "B, B_w and C must have at least one column/row".into(),
            ));
        }
        dim("B", &self.b, nx, nu)?;
        dim("B_w", &self.bw, nx, nw)?;
        dim("C", &self.c, ny, nx)?;
        dim("Q", &self.q, nx, nx)?;
        dim("R", &self.r, nu, nu)?;
        dim("W", &self.w, nw, nw)?;
        dim("V", &self.v, ny, ny)?;
        let all = [&self.a, &self.b, &self.bw, &self.c, &self.q, &self.r, &self.w, &self.v];
        if all.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("plant matrices must be finite".into()));
        }
        check_definite("Q", &self.q, false)?;
        check_definite("R", &self.r, true)?;
        check_definite("W", &self.w, true)?;
        check_definite("V", &self.v, true)?;
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    /// `B_w W B_wᵀ`, the process-noise covariance seen by the state.
    pub fn process_noise(&self) -> Matrix {
        symmetrize(&(&self.bw * &self.w * self.bw.transpose()))
    }

    /// Doyle's LQG counterexample, zero-order-hold discretized at 0.1 s.
    ///
    /// The entries are the exact hold-equivalent values (`e^0.1` and its
    /// integrals), which round to `A = [1.1052 0.1105; 0 1.1052]`,
    /// `B = [0.0053; 0.1052]`, `B_w = [0.1105; 0.1052]`. Rounding `B₁` to two
    /// significant digits alone shifts the LQR gain by about 2e-3.
    pub fn doyle() -> Self {
        let e = 0.1_f64.exp();
        Self {
            a: dmatrix![e, 0.1 * e; 0.0, e],
            b: dmatrix![1.0 - 0.9 * e; e - 1.0],
            bw: dmatrix![0.1 * e; e - 1.0],
            c: dmatrix![1.0, 0.0],
            q: dmatrix![1e3, 1e3; 1e3, 1e3],
            r: dmatrix![1.0],
            w: dmatrix![1e3],
            v: dmatrix![1.0],
        }
    }

    /// Rigid-body plus lightly damped flexible mode with a coloured process
    /// noise filter, zero-order-hold discretized at 0.09 s.
    pub fn flexible() -> Self {
        Self {
            a: dmatrix![
                0.9139, 0.0, 0.0, 0.0823;
                0.0, 0.6238, 0.0776, 0.0;
                0.0, -7.7632, 0.6083, 0.0;
                0.0, 0.0, 0.0, 0.9139
            ],
            b: dmatrix![0.0861; 0.3762; 7.7632; 0.0],
            bw: dmatrix![0.0017; 0.0; 0.0; 0.0387],
            c: dmatrix![1.0, 10.0, 0.0, 1.0],
            q: dmatrix![
                4.0, 0.0, 0.0, 0.0;
                0.0, 0.0, 0.0, 0.0;
                0.0, 0.0, 0.0, 0.0;
                0.0, 0.0, 0.0, 0.0
            ],
            r: dmatrix![1.0],
            w: dmatrix![1.0],
            v: dmatrix![0.01],
        }
    }
}
