//! Escape-rate extraction from `P_S(t)` and the scaling of the rate with the
//! drive distance to the shifted bifurcation point.

use log::info;
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::classical::{self, ClassicalError};
use crate::fock::{self, DensityMatrix};
use crate::params::SystemParams;
use crate::propagate::{self, Attractor, EarlyStop, EvolutionRecord, Model, PropagateError, Schedule};

/// Fits with a lower coefficient of determination are reported but flagged.
pub const R_SQUARED_ACCEPT: f64 = 0.99;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("evolution record has no P_S series (no reference state)")]
    MissingReference,
    #[error(
        "P_S fell only to {reached:.4} of its value at t = {t_transient} periods (need < {required}); extend t_final"
    )]
    InsufficientDecay {
        t_transient: f64,
        reached: f64,
        required: f64,
    },
    #[error("fit window holds {0} samples; at least 3 are needed")]
    TooFewPoints(usize),
    #[error("P_S is non-positive inside the fit window")]
    NonPositive,
    #[error("drive {ratio} F_c is not below the shifted bifurcation point {shifted:.4} F_c")]
    AboveBifurcation { ratio: f64, shifted: f64 },
    #[error("scaling fit needs at least {need} drives, got {got}")]
    TooFewDrives { need: usize, got: usize },
    #[error("nonlinear fit did not converge: {0}")]
    FitFailed(String),
    #[error(transparent)]
    Propagate(#[from] PropagateError),
    #[error(transparent)]
    Classical(#[from] ClassicalError),
}

/// Where the exponential fit of `ln P_S` starts and stops.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WindowPolicy {
    /// Start of the fit, in periods.
    pub t_transient: f64,
    /// Fit until `P_S` first drops below this fraction of `P_S(t_transient)`.
    pub end_fraction: f64,
    /// `P_S` must drop below this fraction for the rate to be resolved.
    pub min_decay: f64,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy {
            t_transient: 20.0,
            end_fraction: 0.5,
            min_decay: 0.9,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RateFitResult {
    /// Per drive period.
    pub gamma_t: f64,
    /// `(t1, t2)` in periods.
    pub window: (f64, f64),
    pub r_squared: f64,
    pub accepted: bool,
    /// Intercept `ln P_0`.
    pub ln_p0: f64,
    pub times: Vec<f64>,
    pub p_s: Vec<f64>,
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, r^2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (intercept, slope, r2)
}

/// Exponential fit of a `P_S(t)` series on the policy window.
pub fn fit_decay(times: &[f64], p_s: &[f64], policy: &WindowPolicy) -> Result<RateFitResult, AnalysisError> {
    let start = times
        .iter()
        .position(|&t| t >= policy.t_transient - 1e-9)
        .ok_or(AnalysisError::TooFewPoints(0))?;
    let ps0 = p_s[start];
    let mut end = times.len() - 1;
    let mut lowest = ps0;
    for k in start..times.len() {
        lowest = lowest.min(p_s[k]);
        if p_s[k] < policy.end_fraction * ps0 {
            end = k;
            break;
        }
    }
    if lowest >= policy.min_decay * ps0 {
        return Err(AnalysisError::InsufficientDecay {
            t_transient: policy.t_transient,
            reached: lowest / ps0,
            required: policy.min_decay,
        });
    }
    let t = &times[start..=end];
    let ps = &p_s[start..=end];
    if t.len() < 3 {
        return Err(AnalysisError::TooFewPoints(t.len()));
    }
    if ps.iter().any(|&v| v <= 0.0) {
        return Err(AnalysisError::NonPositive);
    }
    let ln: Vec<f64> = ps.iter().map(|v| v.ln()).collect();
    let (a, b, r2) = linear_fit(t, &ln);
    Ok(RateFitResult {
        gamma_t: -b,
        window: (t[0], t[t.len() - 1]),
        r_squared: r2,
        accepted: r2 > R_SQUARED_ACCEPT && b < 0.0,
        ln_p0: a,
        times: t.to_vec(),
        p_s: ps.to_vec(),
    })
}

/// Tunneling rate from an evolution started in the small-amplitude attractor.
pub fn tunneling_rate(record: &EvolutionRecord, policy: &WindowPolicy) -> Result<RateFitResult, AnalysisError> {
    if record.p_s.len() != record.times.len() || record.p_s.is_empty() {
        return Err(AnalysisError::MissingReference);
    }
    fit_decay(&record.times, &record.p_s, policy)
}

/// Evolves from the small-amplitude coherent state at `drive_ratio` and
/// records `P_S` against that same state, stopping once the fit window is
/// complete.
pub fn escape_record(
    p: &SystemParams,
    drive_ratio: f64,
    model: Model,
    policy: &WindowPolicy,
    record_stride: usize,
) -> Result<EvolutionRecord, AnalysisError> {
    let (sys, diss) = propagate::prepare(p, drive_ratio, model)?;
    let alpha = propagate::attractor_alpha(p, drive_ratio, Attractor::Sas)?;
    let psi = fock::coherent_amplitudes(alpha, p.n_trunc).map_err(PropagateError::from)?;
    let rho0 = DensityMatrix::pure(&psi);
    let schedule = Schedule {
        record_stride,
        snapshot_periods: Vec::new(),
        reference: Some(psi),
        stop: Some(EarlyStop {
            after_periods: policy.t_transient,
            fraction: policy.end_fraction,
        }),
    };
    Ok(propagate::evolve(&rho0, &sys, &diss, p, &schedule)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingPoint {
    pub drive_ratio: f64,
    pub eta: f64,
    pub gamma_t: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingFitResult {
    pub etas: Vec<f64>,
    pub log_rates: Vec<f64>,
    /// Stage 1: `ln Gamma = c0_linear - c1_linear eta`.
    pub c0_linear: f64,
    pub c1_linear: f64,
    pub r_squared_linear: f64,
    pub linear_residuals: Vec<f64>,
    /// Lower-tail probability of the observed number of sign runs in the
    /// stage-1 residuals; small values mean systematic curvature.
    pub runs_p_value: f64,
    /// Stage 2: `ln Gamma = c0 - c1 eta^alpha`.
    pub alpha: f64,
    pub alpha_stderr: f64,
    pub c0: f64,
    pub c1: f64,
}

/// Exact lower-tail probability `P(R <= runs)` for the number of runs in a
/// random arrangement of `n1` and `n2` symbols.
pub fn runs_lower_tail(n1: usize, n2: usize, runs: usize) -> f64 {
    if n1 == 0 || n2 == 0 {
        return 1.0;
    }
    let ln_choose = |n: usize, k: usize| -> f64 {
        if k > n {
            return f64::NEG_INFINITY;
        }
        let lf = |m: usize| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
        lf(n) - lf(k) - lf(n - k)
    };
    let total = ln_choose(n1 + n2, n1);
    let count = |r: usize| -> f64 {
        if r < 2 {
            return 0.0;
        }
        if r % 2 == 0 {
            let k = r / 2;
            2.0 * (ln_choose(n1 - 1, k - 1) + ln_choose(n2 - 1, k - 1) - total).exp()
        } else {
            let k = (r - 1) / 2;
            let a = (ln_choose(n1 - 1, k) + ln_choose(n2 - 1, k - 1) - total).exp();
            let b = (ln_choose(n1 - 1, k - 1) + ln_choose(n2 - 1, k) - total).exp();
            a + b
        }
    };
    (2..=runs).map(count).sum::<f64>().min(1.0)
}

/// Runs test on the signs of `residuals` (zeros dropped).
pub fn residual_runs_p_value(residuals: &[f64]) -> f64 {
    let signs: Vec<bool> = residuals.iter().filter(|r| **r != 0.0).map(|r| *r > 0.0).collect();
    let n1 = signs.iter().filter(|s| **s).count();
    let n2 = signs.len() - n1;
    let runs = 1 + signs.windows(2).filter(|w| w[0] != w[1]).count();
    runs_lower_tail(n1, n2, runs)
}

/// Levenberg-Marquardt for `y = c0 - c1 x^alpha`; returns the parameters and
/// the covariance estimate.
fn power_law_fit(x: &[f64], y: &[f64], start: Vector3<f64>) -> Result<(Vector3<f64>, Matrix3<f64>), AnalysisError> {
    let model = |q: &Vector3<f64>, xi: f64| q[0] - q[1] * xi.powf(q[2]);
    let rss = |q: &Vector3<f64>| x.iter().zip(y).map(|(xi, yi)| (yi - model(q, *xi)).powi(2)).sum::<f64>();
    let normal = |q: &Vector3<f64>| {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (xi, yi) in x.iter().zip(y) {
            let xa = xi.powf(q[2]);
            let j = Vector3::new(1.0, -xa, -q[1] * xa * xi.ln());
            jtj += j * j.transpose();
            jtr += j * (yi - model(q, *xi));
        }
        (jtj, jtr)
    };
    let mut q = start;
    let mut lambda = 1e-3;
    let mut cost = rss(&q);
    for _ in 0..500 {
        let (jtj, jtr) = normal(&q);
        let mut damped = jtj;
        for i in 0..3 {
            damped[(i, i)] *= 1.0 + lambda;
        }
        let Some(step) = damped.lu().solve(&jtr) else {
            lambda *= 10.0;
            continue;
        };
        let trial = q + step;
        let trial_cost = rss(&trial);
        if trial_cost.is_finite() && trial_cost <= cost {
            let converged = (cost - trial_cost) <= 1e-15 * cost.max(1e-300) || step.norm() < 1e-12 * (1.0 + q.norm());
            q = trial;
            cost = trial_cost;
            lambda = (lambda / 10.0).max(1e-12);
            if converged {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    if !q.iter().all(|v| v.is_finite()) {
        return Err(AnalysisError::FitFailed("non-finite parameters".into()));
    }
    let dof = x.len().saturating_sub(3).max(1) as f64;
    let (jtj, _) = normal(&q);
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| AnalysisError::FitFailed("singular normal matrix".into()))?
        * (cost / dof);
    Ok((q, cov))
}

/// Two-stage fit of `ln Gamma` against `eta`.
pub fn fit_scaling(etas: &[f64], rates: &[f64]) -> Result<ScalingFitResult, AnalysisError> {
    if etas.len() < 4 {
        return Err(AnalysisError::TooFewDrives { need: 4, got: etas.len() });
    }
    if rates.iter().any(|r| *r <= 0.0) {
        return Err(AnalysisError::NonPositive);
    }
    let log_rates: Vec<f64> = rates.iter().map(|r| r.ln()).collect();
    let (a, b, r2) = linear_fit(etas, &log_rates);
    let residuals: Vec<f64> = etas.iter().zip(&log_rates).map(|(e, l)| l - (a + b * e)).collect();
    let runs_p = residual_runs_p_value(&residuals);
    let (q, cov) = power_law_fit(etas, &log_rates, Vector3::new(a, -b, 1.0))?;
    Ok(ScalingFitResult {
        etas: etas.to_vec(),
        log_rates,
        c0_linear: a,
        c1_linear: -b,
        r_squared_linear: r2,
        linear_residuals: residuals,
        runs_p_value: runs_p,
        alpha: q[2],
        alpha_stderr: cov[(2, 2)].max(0.0).sqrt(),
        c0: q[0],
        c1: q[1],
    })
}

/// `eta = ratio_B^2 - (F0/F_c)^2` in units of `F_c^2`.
pub fn eta(shifted_ratio: f64, drive_ratio: f64) -> f64 {
    shifted_ratio * shifted_ratio - drive_ratio * drive_ratio
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub shifted_bifurcation_ratio: f64,
    pub points: Vec<ScalingPoint>,
    pub fit: ScalingFitResult,
}

impl ScalingReport {
    pub const CSV_HEADER: &'static str = "F0_over_Fc,eta,gamma_t,r_squared";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for pt in &self.points {
            out.push_str(&format!(
                "{:.6},{:.12e},{:.12e},{:.8}\n",
                pt.drive_ratio, pt.eta, pt.gamma_t, pt.r_squared
            ));
        }
        out
    }
}

/// Runs one escape evolution per drive (concurrently on the rayon pool),
/// extracts the rates and fits their scaling.
pub fn scaling_fit(
    p: &SystemParams,
    drive_grid: &[f64],
    model: Model,
    policy: &WindowPolicy,
) -> Result<ScalingReport, AnalysisError> {
    let shifted = classical::quantum_shifted_bifurcation(p)?.ratio;
    if let Some(&bad) = drive_grid.iter().find(|&&r| r >= shifted) {
        return Err(AnalysisError::AboveBifurcation { ratio: bad, shifted });
    }
    let points: Vec<ScalingPoint> = drive_grid
        .par_iter()
        .map(|&ratio| {
            let rec = escape_record(p, ratio, model, policy, propagate::DEFAULT_RECORD_STRIDE)?;
            let fit = tunneling_rate(&rec, policy)?;
            info!(
                "F0/Fc = {ratio:.4}: gamma_t = {:.5e} per period, r^2 = {:.5}",
                fit.gamma_t, fit.r_squared
            );
            Ok(ScalingPoint {
                drive_ratio: ratio,
                eta: eta(shifted, ratio),
                gamma_t: fit.gamma_t,
                r_squared: fit.r_squared,
                window: fit.window,
            })
        })
        .collect::<Result<_, AnalysisError>>()?;
    let etas: Vec<f64> = points.iter().map(|pt| pt.eta).collect();
    let rates: Vec<f64> = points.iter().map(|pt| pt.gamma_t).collect();
    let fit = fit_scaling(&etas, &rates)?;
    Ok(ScalingReport {
        shifted_bifurcation_ratio: shifted,
        points,
        fit,
    })
}

/// Where a hysteresis branch jumps: the neighbouring drives with the largest
/// rise of the recorded amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BranchJump {
    pub below: f64,
    pub above: f64,
    pub rise: f64,
}

impl BranchJump {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.below + self.above)
    }
}

pub fn largest_rise(drives: &[f64], values: &[f64]) -> Option<BranchJump> {
    drives
        .windows(2)
        .zip(values.windows(2))
        .map(|(d, v)| BranchJump {
            below: d[0],
            above: d[1],
            rise: v[1] - v[0],
        })
        .max_by(|a, b| a.rise.total_cmp(&b.rise))
}
