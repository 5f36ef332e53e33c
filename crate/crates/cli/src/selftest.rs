use std::f64::consts::PI;
use std::fmt::Write as _;

use duffing::bath::{build_dissipator, lindblad_dissipator};
use duffing::classical;
use duffing::fock::{self, DensityMatrix, FockOperator};
use duffing::params::SystemParams;
use duffing::propagate::{self, Dissipation, Generator, Model, Schedule};
use duffing::spectra;
use duffing::wigner::{self, GridSpec};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::commands::{CliError, Output, Result};

struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
}

impl Check {
    fn passed(&self) -> bool {
        self.value.is_finite() && self.value <= self.tolerance
    }
}

fn commutator_defect() -> Result<f64> {
    let a = fock::annihilation(20)?;
    let c = a.commutator(&a.adjoint());
    let mut worst = 0.0f64;
    for i in 0..19 {
        for j in 0..19 {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((c.get(i, j) - C64::new(want, 0.0)).norm());
        }
    }
    Ok(worst)
}

fn harmonic_limit() -> Result<f64> {
    let p = SystemParams {
        gamma_tilde: 0.0,
        omega_cutoff: f64::INFINITY,
        beta_omega: 3.0,
        n_trunc: 36,
        ..Default::default()
    };
    let sys = spectra::rwa_hamiltonian_force(&p, 0.0)?;
    let d = build_dissipator(&sys, &p, false)?;
    let l = lindblad_dissipator(&p)?;
    let rho = fock::coherent_state(C64::new(1.1, -0.4), 36)?;
    let a = d.apply(rho.op(), 0.0);
    let b = l.apply(rho.op());
    Ok(a.max_abs_diff(&b) / b.matrix().iter().map(|z| z.norm()).fold(1e-300, f64::max))
}

/// Upper fold of the stationary cubic by bisection on the number of real
/// roots, relative to the closed form.
fn fold_bisection() -> Result<f64> {
    let q = 100.0;
    let mut worst = 0.0f64;
    for detuning in [-5.0, -10.0, -13.0, -20.0] {
        let closed = classical::critical_forces(detuning, q)?;
        let count = |f: f64| classical::stationary_roots(f, detuning, q).len();
        let (mut lo, mut hi) = (closed.f_bbar * 1.0001, closed.f_b * 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count(mid) == 3 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        worst = worst.max((0.5 * (lo + hi) - closed.f_b).abs() / closed.f_b);
    }
    Ok(worst)
}

fn fast_generator() -> Result<f64> {
    let p = SystemParams {
        n_trunc: 36,
        ..Default::default()
    };
    let sys = spectra::rwa_hamiltonian(&p, 0.7)?;
    let diss = Dissipation::build(&sys, &p, Model::default())?;
    let mut gen = Generator::new(&sys, &diss, p.nu())?;
    let rho = fock::coherent_state(C64::new(-0.8, 0.3), 36)?;
    let mut out = DMatrix::zeros(36, 72);
    gen.eval(1.7, &propagate::split(rho.matrix()), &mut out);
    let fast = FockOperator::from_matrix(propagate::join(&out));
    let slow = propagate::reference_generator(&sys, &diss, rho.op(), 1.7);
    Ok(fast.max_abs_diff(&slow))
}

fn short_evolution() -> Result<(f64, f64)> {
    let p = SystemParams {
        n_trunc: 40,
        t_final: 5.0,
        ..Default::default()
    };
    let (sys, diss) = propagate::prepare(&p, 0.7, Model::default())?;
    let alpha = propagate::attractor_alpha(&p, 0.7, propagate::Attractor::Sas)?;
    let rec = propagate::evolve(&fock::coherent_state(alpha, 40)?, &sys, &diss, &p, &Schedule::default())?;
    let drift = rec.trace_drift.iter().cloned().fold(0.0, f64::max);
    let herm = rec.hermiticity.iter().cloned().fold(0.0, f64::max);
    Ok((drift, herm))
}

pub fn run(out: &mut Output) -> Result<String> {
    let vacuum = wigner::wigner(&DensityMatrix::ground(20), &GridSpec::symmetric(6.0, 61))?;
    let one = wigner::wigner(&DensityMatrix::fock(1, 20), &GridSpec::symmetric(6.0, 61))?;
    let shifted = classical::quantum_shifted_bifurcation(&SystemParams::default())?.ratio;
    let (drift, herm) = short_evolution()?;
    let checks = [
        Check {
            name: "ladder commutator away from the truncation corner",
            value: commutator_defect()?,
            tolerance: 1e-12,
        },
        Check {
            name: "vacuum Wigner peak equals 1/pi",
            value: (vacuum.value_at(0.0, 0.0) - 1.0 / PI).abs(),
            tolerance: 1e-10,
        },
        Check {
            name: "first Fock state Wigner origin equals -1/pi",
            value: (one.value_at(0.0, 0.0) + 1.0 / PI).abs(),
            tolerance: 1e-10,
        },
        Check {
            name: "harmonic Redfield dissipator equals Lindblad",
            value: harmonic_limit()?,
            tolerance: 1e-6,
        },
        Check {
            name: "closed-form upper fold equals bisection",
            value: fold_bisection()?,
            tolerance: 1e-4,
        },
        Check {
            name: "shifted bifurcation ratio near 0.77",
            value: (shifted - 0.77).abs(),
            tolerance: 0.01,
        },
        Check {
            name: "split generator equals dense operator algebra",
            value: fast_generator()?,
            tolerance: 1e-12,
        },
        Check {
            name: "trace drift over 5 periods",
            value: drift,
            tolerance: 1e-6,
        },
        Check {
            name: "hermiticity over 5 periods",
            value: herm,
            tolerance: 1e-8,
        },
    ];
    let mut report = String::new();
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        if !c.passed() {
            failed += 1;
        }
        let _ = writeln!(report, "{status} {} ({:.3e} <= {:.0e})", c.name, c.value, c.tolerance);
    }
    print!("{report}");
    out.write("selftest.txt", &report)?;
    if failed > 0 {
        return Err(CliError::SelftestFailed(failed));
    }
    Ok(format!("selftest: {} of {} checks passed", checks.len(), checks.len()))
}
