//! Classical gain/phase margins and the symmetric disk margin, with the loop
//! broken at a plant input.
//!
//! For input channel `j` the remaining channels stay closed and the loop is
//! written as `(A_o, b_o, c_o)` so that a real gain `k` in channel `j` gives
//! the closed loop `A_o + k b_o c_o`, and `L(z) = −c_o (zI − A_o)⁻¹ b_o`
//! makes the nominal characteristic equation `1 + L = 0`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{is_schur_stable, siso_response, Matrix};
use crate::plant::PlantModel;
use crate::policy::ControllerRealization;

pub const DEFAULT_GRID_POINTS: usize = 10_000;
const GRID_MIN_FREQ: f64 = 1e-5;
const CROSSOVER_TOL: f64 = 1e-10;
const GOLDEN_TOL: f64 = 1e-8;
const GAIN_TOL: f64 = 1e-10;
const VERIFY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginOptions {
    pub grid_points: usize,
}

impl Default for MarginOptions {
    fn default() -> Self {
        Self { grid_points: DEFAULT_GRID_POINTS }
    }
}

/// Single-channel loop opened at a plant input.
#[derive(Debug, Clone, PartialEq)]
pub struct BrokenLoop {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    channel: usize,
}

impl BrokenLoop {
    /// Plant `(A, B, C)` with a strictly proper controller, opened at input
    /// `channel`.
    pub fn at_plant_input(plant: &PlantModel, controller: &ControllerRealization, channel: usize) -> Result<Self> {
        let d_k = Matrix::zeros(plant.n_u(), plant.n_y());
        Self::from_parts(
            &plant.a,
            &plant.b,
            &plant.c,
            &controller.a_k,
            &controller.b_k,
            &controller.c_k,
            &d_k,
            channel,
        )
    }

    /// General positive-feedback interconnection `u = C_K z + D_K y`,
    /// `z⁺ = A_K z + B_K y`. `A_K` may be empty (static feedback).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        a: &Matrix,
        b: &Matrix,
        c: &Matrix,
        a_k: &Matrix,
        b_k: &Matrix,
        c_k: &Matrix,
        d_k: &Matrix,
        channel: usize,
    ) -> Result<Self> {
        let nx = a.nrows();
        let (nu, ny, nk) = (b.ncols(), c.nrows(), a_k.nrows());
        let shapes_ok = a.is_square()
            && b.nrows() == nx
            && c.ncols() == nx
            && a_k.is_square()
            && b_k.shape() == (nk, ny)
            && c_k.shape() == (nu, nk)
            && d_k.shape() == (nu, ny);
        if !shapes_ok {
            return Err(Error::DimensionMismatch("inconsistent loop dimensions".into()));
        }
        if channel >= nu {
            return Err(Error::InvalidInput(format!("channel {channel} out of range (n_u = {nu})")));
        }
        let mut b_rest = b.clone();
        b_rest.column_mut(channel).fill(0.0);

        let n = nx + nk;
        let mut a_o = Matrix::zeros(n, n);
        a_o.view_mut((0, 0), (nx, nx)).copy_from(&(a + &b_rest * d_k * c));
        a_o.view_mut((0, nx), (nx, nk)).copy_from(&(&b_rest * c_k));
        a_o.view_mut((nx, 0), (nk, nx)).copy_from(&(b_k * c));
        a_o.view_mut((nx, nx), (nk, nk)).copy_from(a_k);

        let mut b_o = Matrix::zeros(n, 1);
        b_o.view_mut((0, 0), (nx, 1)).copy_from(&b.column(channel));

        let mut c_o = Matrix::zeros(1, n);
        c_o.view_mut((0, 0), (1, nx)).copy_from(&(d_k.row(channel) * c));
        c_o.view_mut((0, nx), (1, nk)).copy_from(&c_k.row(channel));

        Ok(Self { a: a_o, b: b_o, c: c_o, channel })
    }

    pub fn channel(&self) -> usize {
        self.channel
    }

    /// `L(e^{jω})`.
    pub fn loop_gain(&self, omega: f64) -> Result<Complex64> {
        Ok(-siso_response(&self.a, &self.b, &self.c, omega)?)
    }

    /// Sensitivity `S = 1/(1+L)` and complementary sensitivity `T = L/(1+L)`.
    pub fn sensitivities(&self, omega: f64) -> Result<(Complex64, Complex64)> {
        let l = self.loop_gain(omega)?;
        let s = (Complex64::new(1.0, 0.0) + l).inv();
        Ok((s, l * s))
    }

    /// Closed-loop state matrix with real gain `k` in the opened channel.
    pub fn closed_loop(&self, k: f64) -> Matrix {
        &self.a + &self.b * &self.c * k
    }

    pub fn is_stable_at(&self, k: f64) -> bool {
        is_schur_stable(&self.closed_loop(k)).map(|v| v.stable).unwrap_or(false)
    }

    fn require_nominal(&self) -> Result<()> {
        if self.is_stable_at(1.0) {
            Ok(())
        } else {
            Err(Error::UnstableNominal)
        }
    }
}

fn log_grid(points: usize) -> Vec<f64> {
    let points = points.max(2);
    let span = (std::f64::consts::PI / GRID_MIN_FREQ).ln();
    let mut grid: Vec<f64> = (0..points)
        .map(|i| GRID_MIN_FREQ * (span * i as f64 / (points - 1) as f64).exp())
        .collect();
    grid[points - 1] = std::f64::consts::PI;
    grid
}

/// Finds a root of `f` on `[lo, hi]` given a sign change, to width `tol`.
fn bisect_root(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> Option<f64>) -> Option<f64> {
    let mut f_lo = f(lo)?;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Largest interval of real gains `k` around 1 with `A_o + k b_o c_o` Schur.
///
/// Stability can only change at gains `k = −1/L(e^{jω})` where `L` is real, so
/// those candidates are collected from the frequency grid (plus ω = 0, π),
/// stability is probed between consecutive candidates, and the first
/// destabilizing boundary on each side is refined by bisection on the
/// state-space test.
pub fn gain_margin_interval(lp: &BrokenLoop, opts: &MarginOptions) -> Result<(f64, f64)> {
    lp.require_nominal()?;
    let mut freqs = vec![0.0];
    freqs.extend(log_grid(opts.grid_points));
    let evals: Vec<(f64, Option<Complex64>)> =
        freqs.iter().map(|&w| (w, lp.loop_gain(w).ok())).collect();

    let mut candidates = Vec::new();
    let mut push = |l: Complex64| {
        if l.re != 0.0 && l.re.is_finite() {
            candidates.push(-1.0 / l.re);
        }
    };
    for (w, l) in &evals {
        if let Some(l) = l {
            if *w == 0.0 || *w == std::f64::consts::PI || l.im == 0.0 {
                push(*l);
            }
        }
    }
    for pair in evals.windows(2) {
        let ((w0, Some(l0)), (w1, Some(l1))) = (pair[0], pair[1]) else { continue };
        if (l0.im > 0.0) != (l1.im > 0.0) && l0.im != 0.0 && l1.im != 0.0 {
            let root = bisect_root(w0, w1, 1e-14 * w1.max(1e-3), |w| lp.loop_gain(w).ok().map(|l| l.im));
            if let Some(w) = root {
                if let Ok(l) = lp.loop_gain(w) {
                    push(l);
                }
            }
        }
    }
    candidates.retain(|k| k.is_finite());
    candidates.sort_by(|a, b| a.total_cmp(b));
    candidates.dedup();

    let upper: Vec<f64> = candidates.iter().copied().filter(|&k| k > 1.0).collect();
    let lower: Vec<f64> = candidates.iter().rev().copied().filter(|&k| k < 1.0).collect();
    Ok((edge(lp, &lower, -1.0), edge(lp, &upper, 1.0)))
}

/// Walks candidate boundaries outward from 1 in direction `dir`, returning
/// the first one past which the loop is unstable.
fn edge(lp: &BrokenLoop, candidates: &[f64], dir: f64) -> f64 {
    let mut stable_at = 1.0;
    for (i, &c) in candidates.iter().enumerate() {
        let probe = match candidates.get(i + 1) {
            Some(&next) => 0.5 * (c + next),
            None => c + dir * (1.0 + c.abs()),
        };
        if lp.is_stable_at(probe) {
            stable_at = probe;
            continue;
        }
        let (mut inside, mut outside) = (stable_at, probe);
        while (outside - inside).abs() > GAIN_TOL * (1.0 + inside.abs()) {
            let mid = 0.5 * (inside + outside);
            if lp.is_stable_at(mid) {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        return inside;
    }
    dir * f64::INFINITY
}

/// Phase margin in degrees; `frequency` is `None` when `|L|` never crosses 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMargin {
    pub degrees: f64,
    pub frequency: Option<f64>,
}

impl PhaseMargin {
    pub fn has_crossover(&self) -> bool {
        self.frequency.is_some()
    }
}

pub fn phase_margin(lp: &BrokenLoop, opts: &MarginOptions) -> Result<PhaseMargin> {
    lp.require_nominal()?;
    let grid = log_grid(opts.grid_points);
    let excess = |w: f64| lp.loop_gain(w).ok().map(|l| l.norm() - 1.0);
    let values: Vec<Option<f64>> = grid.iter().map(|&w| excess(w)).collect();

    let mut best = PhaseMargin { degrees: f64::INFINITY, frequency: None };
    for i in 0..grid.len() - 1 {
        let (Some(e0), Some(e1)) = (values[i], values[i + 1]) else { continue };
        let crossing = if e0 == 0.0 {
            Some(grid[i])
        } else if (e0 > 0.0) != (e1 > 0.0) && e1 != 0.0 {
            bisect_root(grid[i], grid[i + 1], CROSSOVER_TOL, excess)
        } else {
            None
        };
        let Some(w) = crossing else { continue };
        let l = lp.loop_gain(w)?;
        let degrees = (std::f64::consts::PI - l.arg().abs()).to_degrees();
        if degrees < best.degrees {
            best = PhaseMargin { degrees, frequency: Some(w) };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskMargin {
    pub alpha: f64,
    pub m_d: f64,
    /// Frequency of the `|S − T|` peak.
    pub peak_frequency: f64,
}

fn golden_max(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > GOLDEN_TOL * (1.0 + lo.abs()) {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 > f2 { (x1, f1) } else { (x2, f2) }
}

/// `α = 2/‖S − T‖_∞`, `m_d = (2+α)/(2−α)`, verified against real gains just
/// inside `[1/m_d, m_d]`.
pub fn disk_margin(lp: &BrokenLoop, opts: &MarginOptions) -> Result<DiskMargin> {
    lp.require_nominal()?;
    // A singular resolvent means a loop pole on the circle: |S − T| → 1 there.
    let diff = |w: f64| match lp.sensitivities(w) {
        Ok((s, t)) => (s - t).norm(),
        Err(_) => 1.0,
    };
    let mut grid = vec![0.0];
    grid.extend(log_grid(opts.grid_points));
    let values: Vec<f64> = grid.iter().map(|&w| diff(w)).collect();

    let (mut peak_w, mut peak) = (0.0, f64::NEG_INFINITY);
    for i in 0..grid.len() {
        let left = if i > 0 { values[i - 1] } else { f64::NEG_INFINITY };
        let right = values.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if values[i] < left || values[i] < right {
            continue;
        }
        let lo = if i > 0 { grid[i - 1] } else { grid[0] };
        let hi = grid.get(i + 1).copied().unwrap_or(grid[i]);
        let (w, v) = if hi > lo { golden_max(lo, hi, diff) } else { (grid[i], values[i]) };
        let (w, v) = if values[i] >= v { (grid[i], values[i]) } else { (w, v) };
        if v > peak {
            peak = v;
            peak_w = w;
        }
    }
    if !peak.is_finite() {
        return Err(Error::MarginVerification("‖S − T‖∞ is not finite".into()));
    }
    let alpha = 2.0 / peak;
    let m_d = if alpha < 2.0 { (2.0 + alpha) / (2.0 - alpha) } else { f64::INFINITY };

    if m_d.is_finite() {
        for k in [(1.0 / m_d) * (1.0 + VERIFY_EPS), m_d * (1.0 - VERIFY_EPS)] {
            if !lp.is_stable_at(k) {
                return Err(Error::MarginVerification(format!(
                    "loop unstable at gain {k} inside the disk margin {m_d}"
                )));
            }
        }
    }
    Ok(DiskMargin { alpha, m_d, peak_frequency: peak_w })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginReport {
    pub channel: usize,
    pub gain_interval: (f64, f64),
    pub phase: PhaseMargin,
    pub disk: DiskMargin,
}

impl MarginReport {
    pub fn m_d(&self) -> f64 {
        self.disk.m_d
    }

    pub fn phase_deg(&self) -> f64 {
        self.phase.degrees
    }
}

/// Caps the disk's real segment `[1/m_d, m_d]` at the certified gain
/// interval. The two can disagree by the unit-circle tolerance of the Schur
/// test when the `|S − T|` peak sits where `L` is real.
fn clamp_to_interval(disk: DiskMargin, (lo, hi): (f64, f64)) -> DiskMargin {
    let m_d = disk.m_d.min(hi).min(if lo > 0.0 { 1.0 / lo } else { f64::INFINITY });
    if m_d >= disk.m_d {
        return disk;
    }
    DiskMargin { alpha: 2.0 * (m_d - 1.0) / (m_d + 1.0), m_d, ..disk }
}

pub fn analyze_loop(lp: &BrokenLoop, opts: &MarginOptions) -> Result<MarginReport> {
    let gain_interval = gain_margin_interval(lp, opts)?;
    Ok(MarginReport {
        channel: lp.channel(),
        gain_interval,
        phase: phase_margin(lp, opts)?,
        disk: clamp_to_interval(disk_margin(lp, opts)?, gain_interval),
    })
}

/// Loop-at-a-time margins, one report per plant input.
pub fn analyze_channels(
    plant: &PlantModel,
    controller: &ControllerRealization,
    opts: &MarginOptions,
) -> Result<Vec<MarginReport>> {
    (0..plant.n_u())
        .map(|j| analyze_loop(&BrokenLoop::at_plant_input(plant, controller, j)?, opts))
        .collect()
}

/// Margins of the channel with the smallest disk margin (the only channel for
/// single-input plants).
pub fn analyze(plant: &PlantModel, controller: &ControllerRealization) -> Result<MarginReport> {
    let reports = analyze_channels(plant, controller, &MarginOptions::default())?;
    Ok(reports
        .into_iter()
        .min_by(|a, b| a.disk.m_d.total_cmp(&b.disk.m_d))
        .expect("plant has at least one input"))
}
