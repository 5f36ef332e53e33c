//! Wigner functions on a rectangular grid of the quadratures
//! `X = (a + a^dagger)/sqrt(2)` and `P = i(a^dagger - a)/sqrt(2)`, so that
//! `[X, P] = i`, the vacuum is `exp(-X^2 - P^2)/pi` and `x = X / sqrt(aleph)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::fock::DensityMatrix;

/// Boundary values above this fraction of `max |W|` mean the grid clips the
/// state.
pub const BOUNDARY_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum WignerError {
    #[error("grid too small: boundary |W| = {boundary:.3e} exceeds {BOUNDARY_TOL:e} of max |W| = {max:.3e}")]
    GridTooSmall { boundary: f64, max: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grids differ in shape or extent")]
    GridMismatch,
}

/// Square-ish uniform grid specification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub np: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::symmetric(8.0, 201)
    }
}

impl GridSpec {
    pub fn symmetric(half_width: f64, points: usize) -> Self {
        GridSpec {
            x_min: -half_width,
            x_max: half_width,
            nx: points,
            p_min: -half_width,
            p_max: half_width,
            np: points,
        }
    }

    fn validate(&self) -> Result<(), WignerError> {
        if self.nx < 3 || self.np < 3 {
            return Err(WignerError::InvalidGrid("need at least 3 points per axis".into()));
        }
        if !(self.x_max > self.x_min && self.p_max > self.p_min) {
            return Err(WignerError::InvalidGrid("empty range".into()));
        }
        Ok(())
    }

    pub fn x_axis(&self) -> Vec<f64> {
        axis(self.x_min, self.x_max, self.nx)
    }

    pub fn p_axis(&self) -> Vec<f64> {
        axis(self.p_min, self.p_max, self.np)
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + h * i as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WignerGrid {
    pub x_axis: Vec<f64>,
    pub p_axis: Vec<f64>,
    /// `values[(i, j)] = W(x_axis[i], p_axis[j])`.
    pub values: DMatrix<f64>,
    pub cell_area: f64,
    /// Largest imaginary part of the kernel sum.
    pub max_imag: f64,
}

impl WignerGrid {
    pub fn total(&self) -> f64 {
        self.values.sum() * self.cell_area
    }

    pub fn min(&self) -> f64 {
        self.values.min()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.amax()
    }

    /// Largest `|W|` on the outer ring of the grid.
    pub fn boundary_max(&self) -> f64 {
        let (nx, np) = self.values.shape();
        let mut m = 0.0f64;
        for i in 0..nx {
            m = m.max(self.values[(i, 0)].abs()).max(self.values[(i, np - 1)].abs());
        }
        for j in 0..np {
            m = m.max(self.values[(0, j)].abs()).max(self.values[(nx - 1, j)].abs());
        }
        m
    }

    /// `int W dP` on the x axis.
    pub fn x_marginal(&self) -> Vec<f64> {
        let dp = self.p_axis[1] - self.p_axis[0];
        (0..self.x_axis.len()).map(|i| self.values.row(i).sum() * dp).collect()
    }

    /// Nearest-grid-point value.
    pub fn value_at(&self, x: f64, p: f64) -> f64 {
        let idx = |axis: &[f64], v: f64| {
            let h = axis[1] - axis[0];
            (((v - axis[0]) / h).round().max(0.0) as usize).min(axis.len() - 1)
        };
        self.values[(idx(&self.x_axis, x), idx(&self.p_axis, p))]
    }

    fn same_grid(&self, other: &WignerGrid) -> bool {
        self.values.shape() == other.values.shape() && self.x_axis == other.x_axis && self.p_axis == other.p_axis
    }

    /// Rows of `x, p, W`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,p,W\n");
        for (i, x) in self.x_axis.iter().enumerate() {
            for (j, p) in self.p_axis.iter().enumerate() {
                out.push_str(&format!("{x:.6},{p:.6},{:.12e}\n", self.values[(i, j)]));
            }
        }
        out
    }
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Kernel sum at one phase-space point; `ln_fact[k] = ln k!`.
fn wigner_point(rho: &DMatrix<C64>, ln_fact: &[f64], x: f64, p: f64) -> C64 {
    let dim = rho.nrows();
    let r2 = x * x + p * p;
    let s = 2.0 * r2;
    let phi = p.atan2(x);
    let ln_rho = if r2 > 0.0 { (2.0 * r2).sqrt().ln() } else { f64::NEG_INFINITY };
    let mut acc = C64::new(0.0, 0.0);
    let mut lag = vec![0.0; dim];
    for k in 0..dim {
        // generalized Laguerre L_n^{(k)}(2 r^2), n = 0 .. dim-k-1
        let kf = k as f64;
        let len = dim - k;
        lag[0] = 1.0;
        if len > 1 {
            lag[1] = 1.0 + kf - s;
        }
        for j in 1..len.saturating_sub(1) {
            let jf = j as f64;
            lag[j + 1] = ((2.0 * jf + 1.0 + kf - s) * lag[j] - (jf + kf) * lag[j - 1]) / (jf + 1.0);
        }
        // (sqrt(2)(X - iP))^k = (sqrt(2) r)^k e^{-i k phi}
        let phase = C64::from_polar(1.0, -kf * phi);
        let mut sum = C64::new(0.0, 0.0);
        for (n, l) in lag.iter().enumerate().take(len) {
            let m = n + k;
            let pow = if k == 0 { 0.0 } else { kf * ln_rho };
            let mag = (0.5 * (ln_fact[n] - ln_fact[m]) + pow - r2).exp();
            if mag == 0.0 {
                continue;
            }
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let w = sign * mag * l;
            if k == 0 {
                sum += rho[(n, n)] * w;
            } else {
                // rho_{nm} |n><m| + rho_{mn} |m><n|, the second kernel the
                // conjugate of the first
                let kern = phase * w;
                sum += rho[(n, m)] * kern.conj() + rho[(m, n)] * kern;
            }
        }
        acc += sum;
    }
    acc / PI
}

/// Wigner function of `rho` with the Laguerre-kernel expansion.
pub fn wigner(rho: &DensityMatrix, spec: &GridSpec) -> Result<WignerGrid, WignerError> {
    let grid = wigner_unchecked(rho, spec)?;
    let max = grid.max_abs();
    let boundary = grid.boundary_max();
    if boundary > BOUNDARY_TOL * max {
        return Err(WignerError::GridTooSmall { boundary, max });
    }
    Ok(grid)
}

/// As [`wigner`] without the boundary check.
pub fn wigner_unchecked(rho: &DensityMatrix, spec: &GridSpec) -> Result<WignerGrid, WignerError> {
    spec.validate()?;
    let m = rho.matrix();
    let ln_fact: Vec<f64> = (0..=m.nrows()).map(ln_factorial).collect();
    let xs = spec.x_axis();
    let ps = spec.p_axis();
    let rows: Vec<Vec<C64>> = xs
        .par_iter()
        .map(|&x| ps.iter().map(|&p| wigner_point(m, &ln_fact, x, p)).collect())
        .collect();
    let mut values = DMatrix::zeros(xs.len(), ps.len());
    let mut max_imag = 0.0f64;
    for (i, row) in rows.iter().enumerate() {
        for (j, w) in row.iter().enumerate() {
            values[(i, j)] = w.re;
            max_imag = max_imag.max(w.im.abs());
        }
    }
    let cell_area = (xs[1] - xs[0]) * (ps[1] - ps[0]);
    Ok(WignerGrid {
        x_axis: xs,
        p_axis: ps,
        values,
        cell_area,
        max_imag,
    })
}

/// Occupations of the small- and large-amplitude attractors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AttractorWeights {
    pub p_s: f64,
    pub p_l: f64,
}

/// Least-squares projection of `w` onto `w_s`; the remaining mass is
/// attributed to the other attractor.
pub fn attractor_decomposition(w: &WignerGrid, w_s: &WignerGrid) -> Result<AttractorWeights, WignerError> {
    if !w.same_grid(w_s) {
        return Err(WignerError::GridMismatch);
    }
    let cross = w.values.dot(&w_s.values);
    let norm = w_s.values.dot(&w_s.values);
    let p_s = cross / norm;
    Ok(AttractorWeights {
        p_s,
        p_l: w.total() - p_s,
    })
}

/// Full width at half maximum of a coherent-state lobe along either
/// quadrature.
pub fn coherent_lobe_fwhm() -> f64 {
    2.0 * std::f64::consts::LN_2.sqrt()
}

/// A local maximum of `W` with its centroid over the surrounding disc.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Lobe {
    pub x: f64,
    pub p: f64,
    pub height: f64,
    /// Integrated `W` within the centroid disc.
    pub mass: f64,
}

/// Local maxima higher than `min_rel_height * max W`, tallest first. The
/// reported centre is the `W`-weighted centroid within `radius` of the peak.
pub fn find_lobes(w: &WignerGrid, min_rel_height: f64, radius: f64) -> Vec<Lobe> {
    let (nx, np) = w.values.shape();
    let top = w.values.max();
    let mut lobes = Vec::new();
    for i in 1..nx - 1 {
        for j in 1..np - 1 {
            let v = w.values[(i, j)];
            if v < min_rel_height * top {
                continue;
            }
            let mut is_max = true;
            'nb: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if (di, dj) != (0, 0) && w.values[((i as i64 + di) as usize, (j as i64 + dj) as usize)] > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let (x0, p0) = (w.x_axis[i], w.p_axis[j]);
            let (mut sx, mut sp, mut sw) = (0.0, 0.0, 0.0);
            for (a, x) in w.x_axis.iter().enumerate() {
                for (b, p) in w.p_axis.iter().enumerate() {
                    if (x - x0).powi(2) + (p - p0).powi(2) <= radius * radius {
                        let val = w.values[(a, b)].max(0.0);
                        sx += val * x;
                        sp += val * p;
                        sw += val;
                    }
                }
            }
            lobes.push(Lobe {
                x: sx / sw,
                p: sp / sw,
                height: v,
                mass: sw * w.cell_area,
            });
        }
    }
    lobes.sort_by(|a, b| b.height.total_cmp(&a.height));
    // plateaus can produce neighbouring duplicates
    let mut out: Vec<Lobe> = Vec::new();
    for l in lobes {
        if out.iter().all(|o| (o.x - l.x).hypot(o.p - l.p) > radius) {
            out.push(l);
        }
    }
    out
}

/// Quadrature centre `(X, P)` of the coherent state `|alpha>`.
pub fn coherent_center(alpha: C64) -> (f64, f64) {
    (std::f64::consts::SQRT_2 * alpha.re, std::f64::consts::SQRT_2 * alpha.im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{self, FockOperator};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    /// Oscillator eigenfunctions in `X` by the stable normalized recurrence.
    fn hermite_functions(x: f64, count: usize) -> Vec<f64> {
        let mut psi = vec![0.0; count];
        psi[0] = PI.powf(-0.25) * (-0.5 * x * x).exp();
        if count > 1 {
            psi[1] = std::f64::consts::SQRT_2 * x * psi[0];
        }
        for n in 2..count {
            psi[n] = ((2.0 / n as f64).sqrt() * x * psi[n - 1]) - (((n - 1) as f64 / n as f64).sqrt() * psi[n - 2]);
        }
        psi
    }

    /// `W(X, P) = (1/pi) int <X+y|rho|X-y> e^{-2iPy} dy` by the trapezoid rule.
    fn direct_wigner(rho: &DMatrix<C64>, x: f64, p: f64) -> f64 {
        let dim = rho.nrows();
        let (lim, steps) = (10.0, 4000);
        let h = 2.0 * lim / steps as f64;
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..=steps {
            let y = -lim + h * k as f64;
            let a = hermite_functions(x + y, dim);
            let b = hermite_functions(x - y, dim);
            let mut kernel = C64::new(0.0, 0.0);
            for m in 0..dim {
                for n in 0..dim {
                    kernel += rho[(m, n)] * a[m] * b[n];
                }
            }
            let wgt = if k == 0 || k == steps { 0.5 } else { 1.0 };
            acc += kernel * C64::from_polar(1.0, -2.0 * p * y) * wgt;
        }
        (acc * h / PI).re
    }

    #[test]
    fn vacuum_is_gaussian() {
        let w = wigner(&DensityMatrix::ground(20), &GridSpec::default()).unwrap();
        assert_relative_eq!(w.value_at(0.0, 0.0), 1.0 / PI, epsilon = 1e-12);
        assert_relative_eq!(w.value_at(0.96, -0.64), (-(0.96f64 * 0.96 + 0.64 * 0.64)).exp() / PI, epsilon = 1e-12);
        assert_relative_eq!(w.total(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn first_fock_state_is_negative_at_origin() {
        let rho = DensityMatrix::fock(1, 10);
        let w = wigner(&rho, &GridSpec::symmetric(8.0, 81)).unwrap();
        assert_relative_eq!(w.value_at(0.0, 0.0), -1.0 / PI, epsilon = 1e-12);
        assert_relative_eq!(direct_wigner(rho.matrix(), 0.0, 0.0), -1.0 / PI, epsilon = 1e-6);
        assert!(w.min() >= -1.0 / PI - 1e-6);
    }

    #[test]
    fn coherent_state_is_displaced_vacuum() {
        let alpha = C64::new(1.3, -0.8);
        let rho = fock::coherent_state(alpha, 30).unwrap();
        let w = wigner(&rho, &GridSpec::symmetric(8.0, 161)).unwrap();
        let (xc, pc) = coherent_center(alpha);
        for (i, x) in w.x_axis.iter().enumerate().step_by(7) {
            for (j, p) in w.p_axis.iter().enumerate().step_by(7) {
                let want = (-(x - xc).powi(2) - (p - pc).powi(2)).exp() / PI;
                assert!((w.values[(i, j)] - want).abs() < 1e-9, "({x}, {p})");
            }
        }
        // independent oracle from the defining integral
        for (x, p) in [(0.4, -0.3), (xc, pc), (2.5, 0.0)] {
            let direct = direct_wigner(rho.matrix(), x, p);
            let kern = wigner_point(rho.matrix(), &(0..=30).map(ln_factorial).collect::<Vec<_>>(), x, p).re;
            assert!((direct - kern).abs() < 1e-8, "({x}, {p}): {direct} vs {kern}");
        }
    }

    #[test]
    fn mixed_state_matches_direct_integral() {
        let psi = fock::coherent_amplitudes(C64::new(-0.7, 0.9), 16).unwrap();
        let mut m = DensityMatrix::pure(&psi).matrix() * C64::new(0.6, 0.0);
        m[(3, 3)] += C64::new(0.4, 0.0);
        // a superposition of |1> and |3> supplies off-diagonal elements
        let mut v = DVector::zeros(16);
        v[1] = C64::new(0.6, 0.0);
        v[3] = C64::new(0.0, 0.8);
        m = m * C64::new(0.7, 0.0) + (&v * v.adjoint()) * C64::new(0.3, 0.0);
        let rho = DensityMatrix::new(FockOperator::from_matrix(m)).unwrap();
        let ln_fact: Vec<f64> = (0..=16).map(ln_factorial).collect();
        for (x, p) in [(0.0, 0.0), (-1.1, 0.7), (0.3, 2.0), (1.5, -1.5)] {
            let direct = direct_wigner(rho.matrix(), x, p);
            let kern = wigner_point(rho.matrix(), &ln_fact, x, p);
            assert!((direct - kern.re).abs() < 1e-8);
            assert!(kern.im.abs() < 1e-12);
        }
    }

    #[test]
    fn position_marginal() {
        let psi = fock::coherent_amplitudes(C64::new(1.0, 0.5), 24).unwrap();
        let mut m = DensityMatrix::pure(&psi).matrix() * C64::new(0.5, 0.0);
        m[(2, 2)] += C64::new(0.5, 0.0);
        let rho = DensityMatrix::new(FockOperator::from_matrix(m)).unwrap();
        let w = wigner(&rho, &GridSpec::symmetric(8.0, 161)).unwrap();
        let marginal = w.x_marginal();
        let dx = w.x_axis[1] - w.x_axis[0];
        let mut l1 = 0.0;
        for (i, &x) in w.x_axis.iter().enumerate() {
            let h = hermite_functions(x, 24);
            let mut density = 0.0;
            for a in 0..24 {
                for b in 0..24 {
                    density += (rho.matrix()[(a, b)] * h[a] * h[b]).re;
                }
            }
            l1 += (marginal[i] - density).abs() * dx;
        }
        assert!(l1 < 1e-3, "L1 {l1}");
    }

    #[test]
    fn high_fock_states_do_not_overflow() {
        let rho = DensityMatrix::fock(59, 60);
        let w = wigner(&rho, &GridSpec::symmetric(14.0, 141)).unwrap();
        assert!(w.values.iter().all(|v| v.is_finite()));
        assert_relative_eq!(w.total(), 1.0, epsilon = 1e-3);
        assert!(w.min() >= -1.0 / PI - 1e-6);
    }

    #[test]
    fn small_grid_is_rejected() {
        let rho = fock::coherent_state(C64::new(2.0, 0.0), 30).unwrap();
        assert!(matches!(
            wigner(&rho, &GridSpec::symmetric(2.0, 41)),
            Err(WignerError::GridTooSmall { .. })
        ));
    }

    #[test]
    fn decomposition() {
        let spec = GridSpec::symmetric(8.0, 121);
        let s = fock::coherent_state(C64::new(-0.9, 0.0), 40).unwrap();
        let l = fock::coherent_state(C64::new(2.5, -0.8), 40).unwrap();
        let ws = wigner(&s, &spec).unwrap();
        let d = attractor_decomposition(&ws, &ws).unwrap();
        assert_relative_eq!(d.p_s, 1.0, epsilon = 1e-12);
        assert!(d.p_l.abs() < 1e-6);

        let mix = DensityMatrix::new(FockOperator::from_matrix((s.matrix() + l.matrix()) * C64::new(0.5, 0.0))).unwrap();
        let wm = wigner(&mix, &spec).unwrap();
        let d = attractor_decomposition(&wm, &ws).unwrap();
        // overlap of the two coherent states is exp(-|a - b|^2) ~ 1e-5
        assert!((d.p_s - 0.5).abs() < 1e-3 && (d.p_l - 0.5).abs() < 1e-3, "{d:?}");
        // agrees with the overlap formula
        let overlap = mix.overlap_with(&fock::coherent_amplitudes(C64::new(-0.9, 0.0), 40).unwrap());
        assert_relative_eq!(d.p_s, overlap, epsilon = 1e-6);

        let lobes = find_lobes(&wm, 0.05, 1.0);
        assert_eq!(lobes.len(), 2);
        let (xs, ps) = coherent_center(C64::new(-0.9, 0.0));
        assert!(lobes.iter().any(|lb| (lb.x - xs).hypot(lb.p - ps) < 0.05));
    }

    #[test]
    fn mismatched_grids() {
        let g = DensityMatrix::ground(10);
        let a = wigner(&g, &GridSpec::symmetric(8.0, 41)).unwrap();
        let b = wigner(&g, &GridSpec::symmetric(8.0, 43)).unwrap();
        assert!(matches!(attractor_decomposition(&a, &b), Err(WignerError::GridMismatch)));
    }
}
