//! Slow-amplitude analysis of the driven Duffing oscillator.
//!
//! The scaled amplitude obeys
//! `2i dx/dtau = [(Delta - i)/Q + 3|x|^2/4] x - f`.
//! Replacing `Delta` by the quantum-shifted detuning gives the mean-field
//! dynamics of a coherent state in the rotating frame, which is how the
//! quantum evolutions are initialised.

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::params::{derived_unchecked, SystemParams};

/// `Delta_c = -sqrt(3)`: no bistability for `|Delta| <= sqrt(3)`.
pub const CRITICAL_DETUNING: f64 = -1.732_050_807_568_877_2;

#[derive(Debug, thiserror::Error)]
pub enum ClassicalError {
    #[error("no bistability at detuning {detuning:.4} (need Delta / Delta_c > 1)")]
    NoBistability { detuning: f64 },
    #[error("nonlinearity gamma_tilde = 0 has no critical force")]
    Harmonic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Lower,
    Middle,
    Upper,
}

/// A stationary solution of the amplitude equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AmplitudeState {
    #[serde(skip)]
    pub x_tilde: C64,
    /// `|x_tilde|^2`.
    pub r: f64,
    pub branch: Branch,
    pub stable: bool,
}

/// Right-hand side `dx/dtau` of the amplitude equation.
pub fn amplitude_rhs(x: C64, f: f64, detuning: f64, q: f64) -> C64 {
    let g = (C64::new(detuning, -1.0) / q + 0.75 * x.norm_sqr()) * x - f;
    C64::new(0.0, -0.5) * g
}

/// Jacobian of the amplitude flow in `(Re x, Im x)` coordinates.
pub fn amplitude_jacobian(x: C64, detuning: f64, q: f64) -> [[f64; 2]; 2] {
    let a = detuning / q + 0.75 * x.norm_sqr();
    let gu = C64::new(a, -1.0 / q) + 1.5 * x.re * x;
    let gv = C64::new(1.0 / q, a) + 1.5 * x.im * x;
    let du = C64::new(0.0, -0.5) * gu;
    let dv = C64::new(0.0, -0.5) * gv;
    [[du.re, dv.re], [du.im, dv.im]]
}

fn is_stable(x: C64, detuning: f64, q: f64) -> bool {
    let j = amplitude_jacobian(x, detuning, q);
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    tr < 0.0 && det > 0.0
}

/// Coefficients `[a, b, c, d]` of `a r^3 + b r^2 + c r + d = 0`, the
/// stationary condition `r [(Delta/Q + 3r/4)^2 + 1/Q^2] = f^2`.
pub fn stationary_cubic(f: f64, detuning: f64, q: f64) -> [f64; 4] {
    let dq = detuning / q;
    [9.0 / 16.0, 1.5 * dq, dq * dq + 1.0 / (q * q), -f * f]
}

pub fn cubic_residual(r: f64, f: f64, detuning: f64, q: f64) -> f64 {
    let [a, b, c, d] = stationary_cubic(f, detuning, q);
    ((a * r + b) * r + c) * r + d
}

fn polish(mut r: f64, coeffs: [f64; 4]) -> f64 {
    let [a, b, c, d] = coeffs;
    for _ in 0..50 {
        let val = ((a * r + b) * r + c) * r + d;
        let der = (3.0 * a * r + 2.0 * b) * r + c;
        if der == 0.0 {
            break;
        }
        let step = val / der;
        r -= step;
        if step.abs() <= 1e-16 * r.abs().max(1e-300) {
            break;
        }
    }
    r
}

/// Real roots of a cubic with positive leading coefficient, ascending.
fn real_cubic_roots(coeffs: [f64; 4]) -> Vec<f64> {
    let [a, b, c, d] = coeffs;
    let (b, c, d) = (b / a, c / a, d / a);
    // t^3 + p t + q with r = t - b/3
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let shift = -b / 3.0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut roots = if disc < 0.0 {
        let m = 2.0 * (-p / 3.0).sqrt();
        let theta = (3.0 * q / (p * m)).clamp(-1.0, 1.0).acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
            .collect::<Vec<_>>()
    } else {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() + shift]
    };
    for r in roots.iter_mut() {
        *r = polish(*r, coeffs);
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// `|x|^2` at the local maximum and minimum of `r [(D + 3r/4)^2 + 1/Q^2]`,
/// if the detuning is bistable.
fn turning_points(detuning: f64, q: f64) -> Option<(f64, f64)> {
    let dq = detuning / q;
    let disc = dq * dq - 3.0 / (q * q);
    if detuning >= 0.0 || disc <= 0.0 {
        return None;
    }
    let y_max = (-2.0 * dq - disc.sqrt()) / 3.0;
    let y_min = (-2.0 * dq + disc.sqrt()) / 3.0;
    Some((4.0 * y_max / 3.0, 4.0 * y_min / 3.0))
}

/// All stationary solutions for drive `f`, ascending in `|x|^2`.
pub fn stationary_roots(f: f64, detuning: f64, q: f64) -> Vec<AmplitudeState> {
    if f == 0.0 {
        return vec![AmplitudeState {
            x_tilde: C64::new(0.0, 0.0),
            r: 0.0,
            branch: Branch::Lower,
            stable: true,
        }];
    }
    let coeffs = stationary_cubic(f, detuning, q);
    let rs: Vec<f64> = real_cubic_roots(coeffs).into_iter().filter(|&r| r >= 0.0).collect();
    let branches: Vec<Branch> = if rs.len() == 3 {
        vec![Branch::Lower, Branch::Middle, Branch::Upper]
    } else {
        rs.iter()
            .map(|&r| match turning_points(detuning, q) {
                Some((_, r_min)) if r > r_min => Branch::Upper,
                _ => Branch::Lower,
            })
            .collect()
    };
    rs.iter()
        .zip(branches)
        .map(|(&r, branch)| {
            let x = f / (C64::new(detuning, -1.0) / q + 0.75 * r);
            AmplitudeState {
                x_tilde: x,
                r,
                branch,
                stable: is_stable(x, detuning, q),
            }
        })
        .collect()
}

/// Closed-form fold drives of the amplitude equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CriticalForces {
    /// Upper fold: the lower branch disappears above it.
    pub f_b: f64,
    /// Lower fold: the upper branch disappears below it.
    pub f_bbar: f64,
    /// Fold drive at the critical detuning, `2^{5/2} / (3^{5/4} Q^{3/2})`.
    pub f_c: f64,
}

/// `f_{B,Bbar} = f_c / (2 s^{3/2}) sqrt(1 + 3 s^2 +- (1 - s^2)^{3/2})` with
/// `s = Delta_c / Delta`.
pub fn critical_forces(detuning: f64, q: f64) -> Result<CriticalForces, ClassicalError> {
    let s = CRITICAL_DETUNING / detuning;
    if !(detuning < 0.0 && s <= 1.0) {
        return Err(ClassicalError::NoBistability { detuning });
    }
    let f_c = 2f64.powf(2.5) / (3f64.powf(1.25) * q.powf(1.5));
    let pre = f_c / (2.0 * s.powf(1.5));
    let w = (1.0 - s * s).powf(1.5);
    let base = 1.0 + 3.0 * s * s;
    Ok(CriticalForces {
        f_b: pre * (base + w).sqrt(),
        f_bbar: pre * (base - w).max(0.0).sqrt(),
        f_c,
    })
}

/// Natural-units force per unit scaled drive:
/// `F_0 = sqrt(m^3 Omega^6 / (16 gamma)) f = aleph f / (4 sqrt(gamma_tilde))`.
pub fn force_per_scaled_drive(p: &SystemParams) -> Result<f64, ClassicalError> {
    if p.gamma_tilde == 0.0 {
        return Err(ClassicalError::Harmonic);
    }
    Ok(p.aleph / (4.0 * p.gamma_tilde.sqrt()))
}

/// `F_c` in natural units: the classical upper critical force at the
/// configured detuning and quality factor.
pub fn critical_force_unit(p: &SystemParams) -> Result<f64, ClassicalError> {
    let d = derived_unchecked(p);
    Ok(critical_forces(d.detuning, d.q)?.f_b * force_per_scaled_drive(p)?)
}

/// Scaled drive `f` for a drive given as a fraction of `F_c`.
pub fn scaled_drive(p: &SystemParams, drive_ratio: f64) -> Result<f64, ClassicalError> {
    let d = derived_unchecked(p);
    Ok(drive_ratio * critical_forces(d.detuning, d.q)?.f_b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShiftedBifurcation {
    pub classical: CriticalForces,
    pub shifted: CriticalForces,
    /// `F_B(Delta~) / F_c`.
    pub ratio: f64,
    /// `F_Bbar(Delta~) / F_c`.
    pub lower_ratio: f64,
}

/// Upper fold of the quantum-shifted amplitude equation in units of `F_c`.
pub fn quantum_shifted_bifurcation(p: &SystemParams) -> Result<ShiftedBifurcation, ClassicalError> {
    let d = derived_unchecked(p);
    let classical = critical_forces(d.detuning, d.q)?;
    let shifted = critical_forces(d.shifted_detuning, d.q)?;
    Ok(ShiftedBifurcation {
        classical,
        shifted,
        ratio: shifted.f_b / classical.f_b,
        lower_ratio: shifted.f_bbar / classical.f_b,
    })
}

/// `sqrt(8 gamma_tilde / aleph)`, the scale between `|alpha|` and `|x_tilde|`.
pub fn amplitude_scale(p: &SystemParams) -> f64 {
    (8.0 * p.gamma_tilde / p.aleph).sqrt()
}

/// Coherent amplitude of a slow amplitude. The lab-frame `x(t)` carries
/// `x_tilde e^{i nu t}` while `<a(t)>` carries `alpha e^{-i nu t}`, hence the
/// conjugate.
pub fn amplitude_to_alpha(p: &SystemParams, x_tilde: C64) -> C64 {
    x_tilde.conj() / amplitude_scale(p)
}

pub fn alpha_to_amplitude(p: &SystemParams, alpha: C64) -> C64 {
    alpha.conj() * amplitude_scale(p)
}

/// Coherent amplitudes of the small- and large-amplitude attractors at the
/// quantum-shifted detuning. A slot is `None` when that branch does not exist
/// at this drive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttractorAmplitudes {
    pub sas: Option<C64>,
    pub las: Option<C64>,
}

pub fn attractor_coherent_amplitudes(p: &SystemParams, drive_ratio: f64) -> Result<AttractorAmplitudes, ClassicalError> {
    let d = derived_unchecked(p);
    let f = if drive_ratio == 0.0 {
        0.0
    } else {
        scaled_drive(p, drive_ratio)?
    };
    let mut out = AttractorAmplitudes { sas: None, las: None };
    for root in stationary_roots(f, d.shifted_detuning, d.q) {
        if !root.stable {
            continue;
        }
        let alpha = amplitude_to_alpha(p, root.x_tilde);
        match root.branch {
            Branch::Lower => out.sas = Some(alpha),
            Branch::Upper => out.las = Some(alpha),
            Branch::Middle => {}
        }
    }
    Ok(out)
}

/// Fixed-step RK4 integration of the amplitude equation.
pub fn integrate_amplitude(x0: C64, f: f64, detuning: f64, q: f64, tau_end: f64, dtau: f64) -> C64 {
    let steps = (tau_end / dtau).ceil() as usize;
    let h = tau_end / steps as f64;
    let mut x = x0;
    for _ in 0..steps {
        let k1 = amplitude_rhs(x, f, detuning, q);
        let k2 = amplitude_rhs(x + k1 * (h / 2.0), f, detuning, q);
        let k3 = amplitude_rhs(x + k2 * (h / 2.0), f, detuning, q);
        let k4 = amplitude_rhs(x + k3 * h, f, detuning, q);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// One drive of a bifurcation diagram.
#[derive(Clone, Debug, Serialize)]
pub struct DiagramRow {
    pub drive_ratio: f64,
    pub roots: Vec<AmplitudeState>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BifurcationDiagram {
    pub detuning: f64,
    pub q: f64,
    pub rows: Vec<DiagramRow>,
    /// Fold drives in units of `F_c`.
    pub f_b_ratio: f64,
    pub f_bbar_ratio: f64,
}

/// Stationary solutions over a grid of drives (in units of `F_c`) at the
/// given detuning.
pub fn bifurcation_diagram(
    p: &SystemParams,
    detuning: f64,
    drive_grid: &[f64],
) -> Result<BifurcationDiagram, ClassicalError> {
    let d = derived_unchecked(p);
    let unit = critical_forces(d.detuning, d.q)?.f_b;
    let folds = critical_forces(detuning, d.q)?;
    let rows = drive_grid
        .iter()
        .map(|&ratio| DiagramRow {
            drive_ratio: ratio,
            roots: stationary_roots(ratio * unit, detuning, d.q),
        })
        .collect();
    Ok(BifurcationDiagram {
        detuning,
        q: d.q,
        rows,
        f_b_ratio: folds.f_b / unit,
        f_bbar_ratio: folds.f_bbar / unit,
    })
}
