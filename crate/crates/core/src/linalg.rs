//! Small dense matrix numerics shared by every other module.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`: the systems in this
//! crate are at most a handful of states, so no attempt is made at blocking or
//! sparsity. Solvers return the covariance-form Lyapunov solution
//! `X = A X Aᵀ + W`, which is the steady-state second moment of
//! `x⁺ = A x + w` with `E[w wᵀ] = W`.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type CMatrix = DMatrix<Complex64>;

/// Relative update size at which squared-Smith iteration stops.
pub const DLYAP_TOL: f64 = 1e-13;
/// Doubling cap for squared-Smith iteration.
pub const DLYAP_MAX_DOUBLINGS: usize = 200;
/// Norm growth that signals a non-Schur matrix.
pub const DIVERGENCE_LIMIT: f64 = 1e12;
/// Relative change at which the structured doubling Riccati iteration stops.
pub const DARE_TOL: f64 = 1e-12;
pub const DARE_MAX_ITER: usize = 200;
/// Spectral radii within this distance of 1 are reported unstable.
pub const UNIT_CIRCLE_TOL: f64 = 1e-9;
/// Smallest resolvent pivot, relative to ‖zI − A‖, accepted by `freq_response`.
pub const RESOLVENT_PIVOT_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub spectral_radius: f64,
}

fn require_square(name: &str, a: &Matrix) -> Result<usize> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be square and non-empty, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.nrows())
}

fn require_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn trace_product(a: &Matrix, b: &Matrix) -> f64 {
    // trace(A B) without forming the product.
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Block-diagonal concatenation of two matrices.
pub fn block_diag(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = Matrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

/// Solves `X = A X Aᵀ + W` by squared-Smith iteration.
///
/// `X₀ = W, A₀ = A`; each doubling adds `Aₖ Xₖ Aₖᵀ` and squares `Aₖ`, so after
/// `k` doublings `X` holds the first `2ᵏ` terms of `Σ Aⁱ W (Aᵀ)ⁱ`. Growth of
/// `Aₖ` past [`DIVERGENCE_LIMIT`] means `A` is not Schur.
pub fn solve_dlyap(a: &Matrix, w: &Matrix) -> Result<Matrix> {
    let n = require_square("A", a)?;
    require_shape("W", w, n, n)?;

    let mut x = w.clone();
    let mut ak = a.clone();
    let mut scratch = Matrix::zeros(n, n);
    let mut update = Matrix::zeros(n, n);
    for _ in 0..DLYAP_MAX_DOUBLINGS {
        ak.mul_to(&x, &mut scratch);
        scratch.mul_to(&ak.transpose(), &mut update);
        x += &update;
        let x_norm = x.norm();
        if !x_norm.is_finite() {
            return Err(Error::NonStable);
        }
        if update.norm() <= DLYAP_TOL * x_norm {
            return Ok(symmetrize(&x));
        }
        ak.mul_to(&ak.clone(), &mut scratch);
        std::mem::swap(&mut ak, &mut scratch);
        if !(ak.norm() <= DIVERGENCE_LIMIT) {
            return Err(Error::NonStable);
        }
    }
    Err(Error::NonStable)
}

/// Stabilizing solution of `X = AᵀXA − AᵀXB(R + BᵀXB)⁻¹BᵀXA + Q`.
///
/// Structured doubling: with `G = B R⁻¹ Bᵀ`, iterate
/// `Aₖ₊₁ = Aₖ(I + GₖHₖ)⁻¹Aₖ`, `Gₖ₊₁ = Gₖ + Aₖ(I + GₖHₖ)⁻¹GₖAₖᵀ`,
/// `Hₖ₊₁ = Hₖ + AₖᵀHₖ(I + GₖHₖ)⁻¹Aₖ` from `(A, G, Q)`; `Hₖ` converges
/// quadratically to `X`.
pub fn solve_dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let n = require_square("A", a)?;
    if b.nrows() != n || b.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "B must have {n} rows, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    let m = b.ncols();
    require_shape("Q", q, n, n)?;
    require_shape("R", r, m, m)?;

    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("R must be positive definite".into()))?
        .inverse();
    let ident = Matrix::identity(n, n);

    let mut ak = a.clone();
    let mut gk = symmetrize(&(b * &r_inv * b.transpose()));
    let mut hk = symmetrize(q);
    let mut converged = false;
    for _ in 0..DARE_MAX_ITER {
        let inv = (&ident + &gk * &hk).try_inverse().ok_or_else(|| {
            Error::NoStabilizingSolution("singular I + G H in doubling step".into())
        })?;
        let ak_inv = &ak * &inv;
        let g_next = symmetrize(&(&gk + &ak_inv * &gk * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &inv * &ak));
        let a_next = &ak_inv * &ak;

        let change = (&h_next - &hk).norm();
        let scale = h_next.norm();
        gk = g_next;
        hk = h_next;
        ak = a_next;
        if !scale.is_finite() {
            return Err(Error::NoStabilizingSolution("iteration diverged".into()));
        }
        if change <= DARE_TOL * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoStabilizingSolution(format!(
            "no convergence within {DARE_MAX_ITER} iterations"
        )));
    }

    let gain = riccati_gain(a, b, r, &hk)?;
    if !is_schur_stable(&(a - b * &gain))?.stable {
        return Err(Error::NoStabilizingSolution(
            "limit does not stabilize A - B K".into(),
        ));
    }
    Ok(newton_polish(a, b, q, r, hk))
}

fn dare_residual_norm(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, x: &Matrix) -> Option<f64> {
    let k = riccati_gain(a, b, r, x).ok()?;
    Some((a.transpose() * x * a - a.transpose() * x * b * k + q - x).norm())
}

/// A few Newton-Kleinman steps `X ← dlyap((A − BK)ᵀ, Q + KᵀRK)` to recover
/// accuracy lost by doubling on badly conditioned problems. Keeps whichever
/// iterate has the smallest residual.
fn newton_polish(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, x: Matrix) -> Matrix {
    let Some(mut best_res) = dare_residual_norm(a, b, q, r, &x) else {
        return x;
    };
    let mut best = x;
    for _ in 0..3 {
        let Ok(k) = riccati_gain(a, b, r, &best) else {
            break;
        };
        let closed_t = (a - b * &k).transpose();
        let forcing = symmetrize(&(q + k.transpose() * r * &k));
        let Ok(candidate) = solve_dlyap(&closed_t, &forcing) else {
            break;
        };
        match dare_residual_norm(a, b, q, r, &candidate) {
            Some(res) if res < best_res => {
                best_res = res;
                best = candidate;
            }
            _ => break,
        }
    }
    best
}

/// `(R + BᵀXB)⁻¹BᵀXA`, the state-feedback gain implied by a Riccati solution.
pub fn riccati_gain(a: &Matrix, b: &Matrix, r: &Matrix, x: &Matrix) -> Result<Matrix> {
    let bt_x = b.transpose() * x;
    let lhs = r + &bt_x * b;
    let rhs = &bt_x * a;
    lhs.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::InvalidInput("R + BᵀXB is not positive definite".into()))
}

pub fn eigenvalues(a: &Matrix) -> Option<Vec<Complex64>> {
    // Schur::try_new gives up on the zero matrix, so work on A / ‖A‖.
    let scale = a.norm();
    if scale == 0.0 {
        return Some(vec![Complex64::new(0.0, 0.0); a.nrows()]);
    }
    let schur = Schur::try_new(a / scale, f64::EPSILON, 10_000)?;
    Some(
        schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z * scale)
            .collect(),
    )
}

pub fn spectral_radius(a: &Matrix) -> Option<f64> {
    eigenvalues(a).map(|ev| ev.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Schur stability from eigenvalue magnitudes (Hessenberg reduction plus
/// shifted QR). Radii within [`UNIT_CIRCLE_TOL`] of 1 count as unstable.
pub fn is_schur_stable(a: &Matrix) -> Result<StabilityVerdict> {
    require_square("A", a)?;
    if a.iter().any(|v| !v.is_finite()) {
        return Ok(StabilityVerdict {
            stable: false,
            spectral_radius: f64::INFINITY,
        });
    }
    Ok(match spectral_radius(a) {
        Some(radius) => StabilityVerdict {
            stable: radius < 1.0 - UNIT_CIRCLE_TOL,
            spectral_radius: radius,
        },
        None => StabilityVerdict {
            stable: false,
            spectral_radius: f64::INFINITY,
        },
    })
}

fn to_complex(m: &Matrix) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

/// `C (e^{jω} I − A)⁻¹ B + D`.
pub fn freq_response(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix, omega: f64) -> Result<CMatrix> {
    let n = require_square("A", a)?;
    if b.nrows() != n || c.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "B must have {n} rows and C {n} columns"
        )));
    }
    require_shape("D", d, c.nrows(), b.ncols())?;

    let z = Complex64::from_polar(1.0, omega);
    let mut resolvent = -to_complex(a);
    for i in 0..n {
        resolvent[(i, i)] += z;
    }
    let scale = resolvent.norm();
    let lu = resolvent.lu();
    let u = lu.u();
    let min_pivot = (0..n).map(|i| u[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    if !(min_pivot > RESOLVENT_PIVOT_TOL * scale) {
        return Err(Error::SingularResolvent { omega });
    }
    let x = lu
        .solve(&to_complex(b))
        .ok_or(Error::SingularResolvent { omega })?;
    Ok(to_complex(c) * x + to_complex(d))
}

/// Single-input single-output shortcut for [`freq_response`].
pub fn siso_response(a: &Matrix, b: &Matrix, c: &Matrix, omega: f64) -> Result<Complex64> {
    let d = Matrix::zeros(c.nrows(), b.ncols());
    let g = freq_response(a, b, c, &d, omega)?;
    if g.shape() != (1, 1) {
        return Err(Error::DimensionMismatch(format!(
            "expected a SISO system, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    Ok(g[(0, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn lyap_residual(a: &Matrix, w: &Matrix, x: &Matrix) -> f64 {
        (a * x * a.transpose() - x + w).norm()
    }

    fn dare_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, x: &Matrix) -> f64 {
        let k = riccati_gain(a, b, r, x).unwrap();
        let rhs = a.transpose() * x * a - a.transpose() * x * b * k + q;
        (rhs - x).norm()
    }

    #[test]
    fn dlyap_zero_dynamics_returns_noise() {
        let x = solve_dlyap(&Matrix::zeros(2, 2), &Matrix::identity(2, 2)).unwrap();
        assert_relative_eq!(x, Matrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn dlyap_scalar_geometric_series() {
        let x = solve_dlyap(&dmatrix![0.5], &dmatrix![1.0]).unwrap();
        assert_relative_eq!(x[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn dlyap_rejects_unstable() {
        let a = dmatrix![1.1052, 0.1105; 0.0, 1.1052];
        assert_eq!(solve_dlyap(&a, &Matrix::identity(2, 2)), Err(Error::NonStable));
        assert_eq!(solve_dlyap(&dmatrix![1.0], &dmatrix![1.0]), Err(Error::NonStable));
    }

    #[test]
    fn dlyap_dimension_mismatch() {
        let err = solve_dlyap(&Matrix::zeros(2, 2), &Matrix::identity(3, 3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
        let err = solve_dlyap(&Matrix::zeros(2, 3), &Matrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn dlyap_near_unit_radius() {
        let a = dmatrix![0.999, 0.5; 0.0, -0.998];
        let w = dmatrix![1.0, 0.2; 0.2, 2.0];
        let x = solve_dlyap(&a, &w).unwrap();
        assert!(lyap_residual(&a, &w, &x) <= 1e-10 * (1.0 + x.norm()));
    }

    #[test]
    fn dare_zero_cost_needs_no_feedback() {
        let a = dmatrix![0.5, 0.1; 0.0, -0.3];
        let b = dmatrix![1.0; 0.5];
        let x = solve_dare(&a, &b, &Matrix::zeros(2, 2), &dmatrix![2.0]).unwrap();
        assert_relative_eq!(x, Matrix::zeros(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn dare_scalar_matches_fixed_point_iteration() {
        // Oracle: plain Riccati recursion from X₀ = Q run to a 1e-12 fixed point.
        let (a, b, q, r) = (1.1052_f64, 0.1052_f64, 1.0_f64, 1.0_f64);
        let mut x = q;
        loop {
            let next = a * x * a - (a * x * b).powi(2) / (r + b * x * b) + q;
            if (next - x).abs() <= 1e-12 * next.abs() {
                x = next;
                break;
            }
            x = next;
        }
        let sol = solve_dare(&dmatrix![a], &dmatrix![b], &dmatrix![q], &dmatrix![r]).unwrap();
        assert_relative_eq!(sol[(0, 0)], x, max_relative = 1e-10);
    }

    #[test]
    fn dare_rejects_unstabilizable() {
        // Unstable mode 1.5 is not reachable from B.
        let a = dmatrix![1.5, 0.0; 0.0, 0.5];
        let b = dmatrix![0.0; 1.0];
        let err = solve_dare(&a, &b, &Matrix::identity(2, 2), &dmatrix![1.0]).unwrap_err();
        assert!(matches!(err, Error::NoStabilizingSolution(_)));
    }

    #[test]
    fn dare_residual_and_stabilizing() {
        let a = dmatrix![1.1052, 0.1105; 0.0, 1.1052];
        let b = dmatrix![0.0053; 0.1052];
        let q = dmatrix![1e3, 1e3; 1e3, 1e3];
        let r = dmatrix![1.0];
        let x = solve_dare(&a, &b, &q, &r).unwrap();
        assert!(dare_residual(&a, &b, &q, &r, &x) <= 1e-9 * (1.0 + x.norm()));
        let k = riccati_gain(&a, &b, &r, &x).unwrap();
        assert!(is_schur_stable(&(&a - &b * k)).unwrap().stable);
        assert_relative_eq!(x.clone(), x.transpose(), epsilon = 1e-12 * x.norm());
    }

    #[test]
    fn schur_trivial_and_doyle() {
        let v = is_schur_stable(&Matrix::zeros(3, 3)).unwrap();
        assert!(v.stable);
        assert_eq!(v.spectral_radius, 0.0);

        let doyle = dmatrix![1.1052, 0.1105; 0.0, 1.1052];
        let v = is_schur_stable(&doyle).unwrap();
        assert!(!v.stable);
        assert!((v.spectral_radius - 1.1052).abs() < 1e-6);
    }

    #[test]
    fn schur_boundary_is_unstable() {
        let v = is_schur_stable(&dmatrix![1.0 - 1e-12]).unwrap();
        assert!(!v.stable);
        let v = is_schur_stable(&dmatrix![0.0, -1.0; 1.0, 0.0]).unwrap();
        assert!(!v.stable);
        assert!(matches!(
            is_schur_stable(&Matrix::zeros(2, 3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn freq_response_trivial() {
        let one = dmatrix![1.0];
        let g = freq_response(&dmatrix![0.0], &one, &one, &dmatrix![0.0], 0.0).unwrap();
        assert_relative_eq!(g[(0, 0)].re, 1.0, epsilon = 1e-15);
        let g = freq_response(&dmatrix![0.5], &one, &one, &dmatrix![0.0], 0.0).unwrap();
        assert_relative_eq!(g[(0, 0)].re, 2.0, epsilon = 1e-14);
        assert_relative_eq!(g[(0, 0)].im, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn freq_response_singular() {
        let one = dmatrix![1.0];
        let err = freq_response(&one, &one, &one, &dmatrix![0.0], 0.0).unwrap_err();
        assert!(matches!(err, Error::SingularResolvent { .. }));
    }

    #[test]
    fn freq_response_matches_backward_sinusoid() {
        // The Doyle plant is unstable forward in time, so the sinusoidal
        // steady state is reached by running x_t = A⁻¹(x_{t+1} − B u_t)
        // backwards, which contracts at rate 1/1.1052.
        let a = dmatrix![1.1052, 0.1105; 0.0, 1.1052];
        let b = dmatrix![0.0053; 0.1052];
        let c = dmatrix![1.0, 0.0];
        let omega = 0.1;
        let a_inv = a.clone().try_inverse().unwrap();
        let steady = |phase: f64| {
            let horizon = 4000;
            let mut x = Matrix::zeros(2, 1);
            for t in (0..horizon).rev() {
                let u = (omega * t as f64 + phase).cos();
                x = &a_inv * (x - &b * u);
            }
            (&c * x)[(0, 0)]
        };
        let re = steady(0.0);
        let im = steady(-std::f64::consts::FRAC_PI_2);
        let g = siso_response(&a, &b, &c, omega).unwrap();
        assert_relative_eq!(g.re, re, max_relative = 1e-9);
        assert_relative_eq!(g.im, im, max_relative = 1e-9);
    }

    /// Roots of the characteristic polynomial for n ≤ 3, from closed-form
    /// quadratic and trigonometric/Cardano cubic formulas.
    fn analytic_radius(a: &Matrix) -> f64 {
        match a.nrows() {
            1 => a[(0, 0)].abs(),
            2 => {
                let tr = a.trace();
                let det = a.determinant();
                let disc = tr * tr - 4.0 * det;
                if disc >= 0.0 {
                    let s = disc.sqrt();
                    ((tr + s) / 2.0).abs().max(((tr - s) / 2.0).abs())
                } else {
                    det.sqrt()
                }
            }
            3 => {
                // z³ + p2 z² + p1 z + p0
                let p2 = -a.trace();
                let minors = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)]
                    + a[(0, 0)] * a[(2, 2)]
                    - a[(0, 2)] * a[(2, 0)]
                    + a[(1, 1)] * a[(2, 2)]
                    - a[(1, 2)] * a[(2, 1)];
                let p1 = minors;
                let p0 = -a.determinant();
                let shift = p2 / 3.0;
                let p = p1 - p2 * p2 / 3.0;
                let q = 2.0 * p2.powi(3) / 27.0 - p2 * p1 / 3.0 + p0;
                let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
                let roots: Vec<Complex64> = if disc > 0.0 {
                    let s = disc.sqrt();
                    let u = (-q / 2.0 + s).cbrt();
                    let v = (-q / 2.0 - s).cbrt();
                    let w = Complex64::new(-0.5, 3f64.sqrt() / 2.0);
                    let (u, v) = (Complex64::new(u, 0.0), Complex64::new(v, 0.0));
                    vec![u + v, w * u + w.conj() * v, w.conj() * u + w * v]
                } else {
                    let r = (-p / 3.0).sqrt();
                    let phi = if r == 0.0 {
                        0.0
                    } else {
                        (-q / (2.0 * r.powi(3))).clamp(-1.0, 1.0).acos()
                    };
                    (0..3)
                        .map(|k| {
                            let ang = (phi + 2.0 * std::f64::consts::PI * k as f64) / 3.0;
                            Complex64::new(2.0 * r * ang.cos(), 0.0)
                        })
                        .collect()
                };
                roots
                    .iter()
                    .map(|z| (z - shift).norm())
                    .fold(0.0, f64::max)
            }
            _ => unreachable!(),
        }
    }

    fn square_matrix(max_n: usize) -> impl Strategy<Value = Matrix> {
        (1..=max_n).prop_flat_map(|n| {
            proptest::collection::vec(-2.0..2.0f64, n * n)
                .prop_map(move |v| Matrix::from_row_slice(n, n, &v))
        })
    }

    fn stable_matrix(n: usize) -> impl Strategy<Value = Matrix> {
        (proptest::collection::vec(-1.0..1.0f64, n * n), 0.05..0.97f64).prop_map(
            move |(v, target)| {
                let m = Matrix::from_row_slice(n, n, &v);
                let rho = spectral_radius(&m).unwrap().max(1e-3);
                m * (target / rho)
            },
        )
    }

    fn psd_matrix(n: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| {
            let f = Matrix::from_row_slice(n, n, &v);
            &f * f.transpose()
        })
    }

    proptest! {
        #[test]
        fn schur_agrees_with_analytic_roots(a in square_matrix(3)) {
            let verdict = is_schur_stable(&a).unwrap();
            let radius = analytic_radius(&a);
            prop_assert!((verdict.spectral_radius - radius).abs() <= 1e-6 * (1.0 + radius));
            if (radius - 1.0).abs() > 1e-6 {
                prop_assert_eq!(verdict.stable, radius < 1.0);
            }
        }

        #[test]
        fn dlyap_solution_is_symmetric_psd_with_small_residual(
            (a, w) in (1usize..=5).prop_flat_map(|n| (stable_matrix(n), psd_matrix(n)))
        ) {
            let x = solve_dlyap(&a, &w).unwrap();
            let xn = x.norm();
            prop_assert!(lyap_residual(&a, &w, &x) <= 1e-10 * (1.0 + xn));
            prop_assert!((&x - x.transpose()).norm() <= 1e-12 * (1.0 + xn));
            let min_eig = x.clone().symmetric_eigenvalues().min();
            prop_assert!(min_eig >= -1e-10 * xn.max(1e-300));
        }

        #[test]
        fn dlyap_duality_trace_identity(
            (a, w, m) in (1usize..=6).prop_flat_map(|n| (stable_matrix(n), psd_matrix(n), psd_matrix(n)))
        ) {
            let x = solve_dlyap(&a, &w).unwrap();
            let y = solve_dlyap(&a.transpose(), &m).unwrap();
            let lhs = trace_product(&m, &x);
            let rhs = trace_product(&w, &y);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()).max(1e-300));
        }

        #[test]
        fn dare_solution_is_stabilizing_psd(
            (a, b) in (1usize..=4).prop_flat_map(|n| (
                (proptest::collection::vec(-1.0..1.0f64, n * n), 0.1..1.5f64).prop_map(move |(v, target)| {
                    let m = Matrix::from_row_slice(n, n, &v);
                    let rho = spectral_radius(&m).unwrap().max(1e-3);
                    m * (target / rho)
                }),
                proptest::collection::vec(-1.0..1.0f64, n).prop_map(move |v| Matrix::from_column_slice(n, 1, &v)),
            )),
        ) {
            let n = a.nrows();
            let q = Matrix::identity(n, n);
            let r = Matrix::identity(1, 1);
            // Random (A, B) may be unstabilizable; only check solutions that are returned.
            if let Ok(x) = solve_dare(&a, &b, &q, &r) {
                let xn = x.norm();
                prop_assert!(dare_residual(&a, &b, &q, &r, &x) <= 1e-9 * (1.0 + xn));
                prop_assert!(x.clone().symmetric_eigenvalues().min() >= -1e-9 * (1.0 + xn));
                let k = riccati_gain(&a, &b, &r, &x).unwrap();
                prop_assert!(is_schur_stable(&(&a - &b * k)).unwrap().stable);
            }
        }

        #[test]
        fn freq_response_conjugate_symmetry(
            a in stable_matrix(3),
            bc in proptest::collection::vec(-1.0..1.0f64, 6),
            omega in 0.01..3.1f64,
        ) {
            let b = Matrix::from_column_slice(3, 1, &bc[..3]);
            let c = Matrix::from_row_slice(1, 3, &bc[3..]);
            let pos = siso_response(&a, &b, &c, omega).unwrap();
            let neg = siso_response(&a, &b, &c, -omega).unwrap();
            prop_assert!((pos - neg.conj()).norm() <= 1e-12 * (1.0 + pos.norm()));
        }
    }
}
