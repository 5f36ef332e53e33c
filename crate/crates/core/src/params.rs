//! Dimensionless parameters of the driven Duffing oscillator.
//!
//! Units: `hbar = 1`, `Omega = 1` and `m = aleph`, so that `m Omega / hbar`
//! equals `aleph` exactly. Energies are in `hbar Omega`, times in `1/Omega`
//! and lengths in the unit for which `gamma_tilde = gamma / (m Omega^2)` is a
//! pure number. The zero-point length is `x_zpf = sqrt(1 / (2 aleph))`.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ParamsError {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    Invalid {
        name: &'static str,
        value: f64,
        reason: String,
    },
    #[error("resonant level n* = {n_star:.3} does not fit in a truncation of {n_trunc} states (need n* < n_trunc/2)")]
    TruncationTooSmall { n_star: f64, n_trunc: usize },
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
}

/// Every tunable physical and numerical parameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystemParams {
    /// `m Omega / hbar`, the quantum-size parameter.
    pub aleph: f64,
    /// `gamma / (m Omega^2)`.
    pub gamma_tilde: f64,
    /// `1 - nu / Omega`.
    pub delta: f64,
    /// `kappa / Omega`.
    pub kappa: f64,
    /// `hbar Omega / (k_B T)`.
    pub beta_omega: f64,
    /// Ohmic cutoff `omega_c / Omega`.
    pub omega_cutoff: f64,
    /// Drive amplitude as a fraction of the classical upper critical force.
    pub drive_ratio: f64,
    /// Number of Fock states kept.
    pub n_trunc: usize,
    /// Integrator step in `1/Omega`.
    pub dt: f64,
    /// Evolution length in periods `2 pi / Omega`.
    pub t_final: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            aleph: 12.0,
            gamma_tilde: 1.0 / 24.0,
            delta: 0.065,
            kappa: 0.01,
            beta_omega: 14.4,
            omega_cutoff: 10.0,
            drive_ratio: 0.7,
            n_trunc: 60,
            dt: 2.0 * PI / 200.0,
            t_final: 160.0,
        }
    }
}

/// Quantities derived from [`SystemParams`]; always recomputed, never stored
/// on the parameter set itself.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivedParams {
    /// Quality factor `1 / kappa`.
    pub q: f64,
    /// Classical scaled detuning `-2 Q delta`.
    pub detuning: f64,
    /// Quantum-shifted detuning `-2 Q (delta - 3 gamma_tilde / aleph)`.
    pub shifted_detuning: f64,
    /// Resonant Fock level `aleph delta / (3 gamma_tilde)`; infinite for a
    /// harmonic oscillator.
    pub n_star: f64,
    /// Bound-state estimate `aleph / (16 gamma_tilde)`.
    pub n_bound: f64,
    /// Bose occupation at the oscillator frequency.
    pub n_thermal: f64,
    /// Zero-point length `sqrt(1 / (2 aleph))`.
    pub x_zpf: f64,
    /// Drive frequency `nu / Omega = 1 - delta`.
    pub nu: f64,
}

pub const KEYS: [&str; 10] = [
    "aleph",
    "gamma_tilde",
    "delta",
    "kappa",
    "beta_omega",
    "omega_cutoff",
    "drive_ratio",
    "n_trunc",
    "dt",
    "t_final",
];

fn invalid(name: &'static str, value: f64, reason: impl Into<String>) -> ParamsError {
    ParamsError::Invalid {
        name,
        value,
        reason: reason.into(),
    }
}

/// Bose-Einstein occupation `1 / (e^{beta w} - 1)` for `w > 0`.
pub fn bose_occupation(beta_omega: f64, omega: f64) -> f64 {
    if beta_omega.is_infinite() {
        return 0.0;
    }
    1.0 / (beta_omega * omega).exp_m1()
}

impl SystemParams {
    /// Minimum truncation `2 ceil(3 aleph / 2)`.
    pub fn min_truncation(&self) -> usize {
        2 * (1.5 * self.aleph).ceil() as usize
    }

    /// Checks every invariant. `gamma_tilde = 0` is accepted as the harmonic
    /// limit, in which case the bound-state and resonant-level guards do not
    /// apply.
    pub fn validate(&self) -> Result<(), ParamsError> {
        let finite = [
            ("aleph", self.aleph),
            ("gamma_tilde", self.gamma_tilde),
            ("delta", self.delta),
            ("kappa", self.kappa),
            ("drive_ratio", self.drive_ratio),
            ("dt", self.dt),
            ("t_final", self.t_final),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(invalid(name, v, "must be finite"));
            }
        }
        if self.aleph <= 0.0 {
            return Err(invalid("aleph", self.aleph, "must be positive"));
        }
        if self.gamma_tilde < 0.0 {
            return Err(invalid("gamma_tilde", self.gamma_tilde, "must be non-negative"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", self.delta, "must lie in (0, 1)"));
        }
        if self.kappa <= 0.0 {
            return Err(invalid("kappa", self.kappa, "must be positive"));
        }
        if self.beta_omega.is_nan() || self.beta_omega <= 0.0 {
            return Err(invalid("beta_omega", self.beta_omega, "must be positive"));
        }
        // +inf is a pure Ohmic bath without cutoff
        if self.omega_cutoff.is_nan() || self.omega_cutoff <= 0.0 {
            return Err(invalid("omega_cutoff", self.omega_cutoff, "must be positive"));
        }
        if self.drive_ratio < 0.0 {
            return Err(invalid("drive_ratio", self.drive_ratio, "must be non-negative"));
        }
        if self.dt <= 0.0 {
            return Err(invalid("dt", self.dt, "must be positive"));
        }
        if self.t_final <= 0.0 {
            return Err(invalid("t_final", self.t_final, "must be positive"));
        }
        let min = self.min_truncation();
        if self.n_trunc < min {
            return Err(invalid(
                "n_trunc",
                self.n_trunc as f64,
                format!("must be at least 2 ceil(3 aleph / 2) = {min}"),
            ));
        }
        if self.gamma_tilde > 0.0 {
            let n_bound = self.aleph / (16.0 * self.gamma_tilde);
            if n_bound < 4.0 {
                return Err(invalid(
                    "gamma_tilde",
                    self.gamma_tilde,
                    format!("bound-state estimate {n_bound:.3} < 4 leaves the mesoscopic regime"),
                ));
            }
        }
        Ok(())
    }

    /// Validates and computes the derived quantities.
    pub fn derived(&self) -> Result<DerivedParams, ParamsError> {
        self.validate()?;
        let d = derived_unchecked(self);
        if d.n_star.is_finite() && d.n_star >= self.n_trunc as f64 / 2.0 {
            return Err(ParamsError::TruncationTooSmall {
                n_star: d.n_star,
                n_trunc: self.n_trunc,
            });
        }
        Ok(d)
    }

    /// Drive frequency `nu / Omega`.
    pub fn nu(&self) -> f64 {
        1.0 - self.delta
    }

    /// Zero-point length `sqrt(1 / (2 aleph))`.
    pub fn x_zpf(&self) -> f64 {
        (0.5 / self.aleph).sqrt()
    }

    /// Number of integrator steps covering `t_final`.
    pub fn n_steps(&self) -> usize {
        (self.t_final * 2.0 * PI / self.dt).round() as usize
    }

    /// Parses a flat `key = value` config. Absent keys keep their defaults;
    /// unknown or repeated keys are rejected. `#` starts a comment.
    pub fn from_config_str(text: &str) -> Result<Self, ParamsError> {
        let mut p = SystemParams::default();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ParamsError::Syntax {
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !KEYS.contains(&key) {
                return Err(ParamsError::UnknownKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ParamsError::DuplicateKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            let bad = |e: &dyn fmt::Display| ParamsError::Syntax {
                line: line_no,
                msg: format!("bad value for `{key}`: {e}"),
            };
            if key == "n_trunc" {
                p.n_trunc = value.parse().map_err(|e| bad(&e))?;
                continue;
            }
            let v: f64 = value.parse().map_err(|e| bad(&e))?;
            match key {
                "aleph" => p.aleph = v,
                "gamma_tilde" => p.gamma_tilde = v,
                "delta" => p.delta = v,
                "kappa" => p.kappa = v,
                "beta_omega" => p.beta_omega = v,
                "omega_cutoff" => p.omega_cutoff = v,
                "drive_ratio" => p.drive_ratio = v,
                "dt" => p.dt = v,
                "t_final" => p.t_final = v,
                _ => unreachable!("key list and match arms out of sync"),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn from_config_file(path: &Path) -> Result<Self, ParamsError> {
        let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_config_str(&text)
    }

    /// Renders the parameters in the config format, round-trippable through
    /// [`SystemParams::from_config_str`].
    pub fn to_config_string(&self) -> String {
        format!(
            "aleph = {:?}\ngamma_tilde = {:?}\ndelta = {:?}\nkappa = {:?}\nbeta_omega = {:?}\n\
             omega_cutoff = {:?}\ndrive_ratio = {:?}\nn_trunc = {}\ndt = {:?}\nt_final = {:?}\n",
            self.aleph,
            self.gamma_tilde,
            self.delta,
            self.kappa,
            self.beta_omega,
            self.omega_cutoff,
            self.drive_ratio,
            self.n_trunc,
            self.dt,
            self.t_final,
        )
    }
}

/// Derived quantities without the validity checks; used where only closed
/// forms are needed (e.g. classical-limit scans at very large `aleph`).
pub fn derived_unchecked(p: &SystemParams) -> DerivedParams {
    let q = 1.0 / p.kappa;
    let shift = if p.gamma_tilde == 0.0 {
        0.0
    } else {
        3.0 * p.gamma_tilde / p.aleph
    };
    let (n_star, n_bound) = if p.gamma_tilde == 0.0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (
            p.aleph * p.delta / (3.0 * p.gamma_tilde),
            p.aleph / (16.0 * p.gamma_tilde),
        )
    };
    DerivedParams {
        q,
        detuning: -2.0 * q * p.delta,
        shifted_detuning: -2.0 * q * (p.delta - shift),
        n_star,
        n_bound,
        n_thermal: bose_occupation(p.beta_omega, 1.0),
        x_zpf: p.x_zpf(),
        nu: p.nu(),
    }
}

/// Convenience wrapper around [`SystemParams::derived`].
pub fn derived_quantities(p: &SystemParams) -> Result<DerivedParams, ParamsError> {
    p.derived()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn defaults_are_valid() {
        SystemParams::default().validate().unwrap();
    }

    #[test]
    fn default_derived_values() {
        let d = SystemParams::default().derived().unwrap();
        assert_relative_eq!(d.n_star, 6.24, max_relative = 1e-12);
        assert_relative_eq!(d.n_bound, 18.0, max_relative = 1e-12);
        assert_relative_eq!(d.q, 100.0, max_relative = 1e-12);
        assert_relative_eq!(d.detuning, -13.0, max_relative = 1e-12);
        assert_relative_eq!(d.shifted_detuning, -10.916_666_666_666_666, max_relative = 1e-12);
        assert_relative_eq!(d.x_zpf, (1.0f64 / 24.0).sqrt(), max_relative = 1e-12);
        assert!(d.n_thermal < 1e-6);
    }

    #[test]
    fn harmonic_limit_has_no_shift() {
        let p = SystemParams {
            gamma_tilde: 0.0,
            ..Default::default()
        };
        let d = p.derived().unwrap();
        assert_eq!(d.detuning, d.shifted_detuning);
        assert!(d.n_star.is_infinite());
    }

    #[test]
    fn shift_vanishes_in_classical_limit() {
        let p = SystemParams {
            aleph: 1e6,
            n_trunc: 4_000_000,
            ..Default::default()
        };
        let d = p.derived().unwrap();
        assert!((d.shifted_detuning - d.detuning).abs() < 1e-3);
    }

    #[test]
    fn thermal_occupation_decreases_with_beta() {
        let mut last = f64::INFINITY;
        for i in 1..50 {
            let n = bose_occupation(i as f64 * 0.5, 1.0);
            assert!(n < last);
            last = n;
        }
        assert_eq!(bose_occupation(f64::INFINITY, 1.0), 0.0);
    }

    #[test]
    fn rejects_small_truncation() {
        let p = SystemParams {
            n_trunc: 30,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(ParamsError::Invalid { name: "n_trunc", .. })));
    }

    #[test]
    fn rejects_resonant_level_beyond_half_truncation() {
        // n* = 12 * 0.5 / 0.125 = 48 >= 60/2
        let p = SystemParams {
            delta: 0.5,
            ..Default::default()
        };
        assert!(matches!(p.derived(), Err(ParamsError::TruncationTooSmall { .. })));
    }

    #[test]
    fn rejects_non_mesoscopic_nonlinearity() {
        let p = SystemParams {
            gamma_tilde: 0.5,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn config_parsing() {
        let p = SystemParams::from_config_str("# comment\naleph = 10\n\nkappa=0.02 # trailing\nn_trunc = 40\n")
            .unwrap();
        assert_eq!(p.aleph, 10.0);
        assert_eq!(p.kappa, 0.02);
        assert_eq!(p.n_trunc, 40);
        assert_eq!(p.delta, 0.065);

        assert!(matches!(
            SystemParams::from_config_str("alef = 3"),
            Err(ParamsError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            SystemParams::from_config_str("aleph = 3\naleph = 4"),
            Err(ParamsError::DuplicateKey { line: 2, .. })
        ));
        assert!(matches!(
            SystemParams::from_config_str("aleph 3"),
            Err(ParamsError::Syntax { .. })
        ));
        assert!(matches!(
            SystemParams::from_config_str("n_trunc = 4.5"),
            Err(ParamsError::Syntax { .. })
        ));
    }

    #[test]
    fn config_roundtrip() {
        let p = SystemParams {
            aleph: 11.5,
            dt: 0.0123,
            ..Default::default()
        };
        let q = SystemParams::from_config_str(&p.to_config_string()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn step_count() {
        assert_eq!(SystemParams::default().n_steps(), 32_000);
    }
}
