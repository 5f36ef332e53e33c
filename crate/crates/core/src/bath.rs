//! Ohmic bath: spectral density, correlation spectrum and the spectrally
//! filtered coupling operators of the rotating-frame Redfield equation.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::fock::{self, FockError, FockOperator};
use crate::params::{bose_occupation, SystemParams};
use crate::spectra::RotatingFrameSystem;

/// Ohmic spectral density `aleph kappa w exp(-|w|/w_c)`, extended as an odd
/// function of `w`.
pub fn spectral_density(omega: f64, p: &SystemParams) -> f64 {
    p.aleph * p.kappa * omega * (-omega.abs() / p.omega_cutoff).exp()
}

/// `C(w) = 2 [1 + n(w)] J(w)`; satisfies `C(-w) = exp(-beta w) C(w)`.
pub fn correlation_spectrum(omega: f64, p: &SystemParams) -> f64 {
    if omega == 0.0 {
        return 2.0 * p.aleph * p.kappa / p.beta_omega;
    }
    // 1 + n(w) = 1 / (1 - exp(-beta w)) for either sign of w
    let denom = -(-p.beta_omega * omega).exp_m1();
    2.0 * spectral_density(omega, p) / denom
}

/// The filtered operators `C(-L_S + nu) a` and `C(-L_S - nu) a^dagger` in the
/// Fock basis.
#[derive(Clone, Debug)]
pub struct DissipatorSet {
    /// `C(-L_S + nu) a`, paired with `a^dagger` in the secular term.
    pub a_minus: FockOperator,
    /// `C(-L_S - nu) a^dagger`, paired with `a` in the secular term.
    pub adag_plus: FockOperator,
    /// `C(-L_S - nu) a^dagger`, paired with `a^dagger` under `e^{+i 2 nu t}`.
    pub adag_minus: FockOperator,
    /// `C(-L_S + nu) a`, paired with `a` under `e^{-i 2 nu t}`.
    pub a_plus: FockOperator,
    pub nu: f64,
    pub include_counter_rotating: bool,
    /// `1 / (4 aleph)`.
    pub prefactor: f64,
}

/// Multiplies element `(m, n)` of an eigenbasis operator by
/// `C(-(E_m - E_n) + shift)`.
fn filter(eig_op: &DMatrix<f64>, energies: &[f64], shift: f64, p: &SystemParams) -> DMatrix<f64> {
    DMatrix::from_fn(eig_op.nrows(), eig_op.ncols(), |m, n| {
        let c = correlation_spectrum(-(energies[m] - energies[n]) + shift, p);
        debug_assert!(c.is_finite());
        eig_op[(m, n)] * c
    })
}

pub fn build_dissipator(
    sys: &RotatingFrameSystem,
    p: &SystemParams,
    include_counter_rotating: bool,
) -> Result<DissipatorSet, FockError> {
    let dim = sys.dim();
    let a = fock::annihilation(dim)?.real_part();
    let adag = a.transpose();
    let nu = p.nu();
    let a_eig = sys.to_eigenbasis(&a);
    let adag_eig = sys.to_eigenbasis(&adag);
    let fa = FockOperator::from_real(&sys.from_eigenbasis(&filter(&a_eig, &sys.eigenvalues, nu, p)));
    let fad = FockOperator::from_real(&sys.from_eigenbasis(&filter(&adag_eig, &sys.eigenvalues, -nu, p)));
    Ok(DissipatorSet {
        a_minus: fa.clone(),
        adag_plus: fad.clone(),
        adag_minus: fad,
        a_plus: fa,
        nu,
        include_counter_rotating,
        prefactor: 1.0 / (4.0 * p.aleph),
    })
}

impl DissipatorSet {
    pub fn dim(&self) -> usize {
        self.a_minus.dim()
    }

    /// Dissipative part of the generator acting on `rho` at time `t` (in
    /// `1/Omega`), evaluated term by term with dense products.
    pub fn apply(&self, rho: &FockOperator, t: f64) -> FockOperator {
        let dim = self.dim();
        let a = fock::annihilation(dim).expect("dim >= 2");
        let adag = a.adjoint();
        let comm = |outer: &FockOperator, inner: &FockOperator| {
            let ir = inner * rho;
            &(outer * &ir) - &(&ir * outer)
        };
        let mut x = &comm(&adag, &self.a_minus) + &comm(&a, &self.adag_plus);
        if self.include_counter_rotating {
            let phase = C64::from_polar(1.0, 2.0 * self.nu * t);
            x = &x + &comm(&adag, &self.adag_minus).scale(phase);
            x = &x + &comm(&a, &self.a_plus).scale(phase.conj());
        }
        (&x + &x.adjoint()).scale(C64::new(-self.prefactor, 0.0))
    }
}

/// Lindblad limit: `kappa [1 + n] D[a] + kappa n D[a^dagger]`.
#[derive(Clone, Debug)]
pub struct LindbladDissipator {
    pub rate_down: f64,
    pub rate_up: f64,
    pub a: FockOperator,
    pub adag: FockOperator,
}

pub fn lindblad_dissipator(p: &SystemParams) -> Result<LindbladDissipator, FockError> {
    let n = bose_occupation(p.beta_omega, 1.0);
    let a = fock::annihilation(p.n_trunc)?;
    Ok(LindbladDissipator {
        rate_down: p.kappa * (1.0 + n),
        rate_up: p.kappa * n,
        adag: a.adjoint(),
        a,
    })
}

fn lindblad_term(l: &FockOperator, rho: &FockOperator) -> FockOperator {
    let ld = l.adjoint();
    let ldl = &ld * l;
    let sandwich = &(&(l * rho) * &ld);
    let anti = &(&ldl * rho) + &(rho * &ldl);
    sandwich - &anti.scale(C64::new(0.5, 0.0))
}

impl LindbladDissipator {
    pub fn apply(&self, rho: &FockOperator) -> FockOperator {
        let down = lindblad_term(&self.a, rho).scale(C64::new(self.rate_down, 0.0));
        let up = lindblad_term(&self.adag, rho).scale(C64::new(self.rate_up, 0.0));
        &down + &up
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{rwa_hamiltonian, rwa_hamiltonian_force};
    use approx::assert_relative_eq;

    fn test_state(dim: usize) -> FockOperator {
        // a mixed, non-diagonal state: a coherent state blended with a Fock mixture
        let coh = fock::coherent_state(C64::new(1.1, 0.6), dim).unwrap();
        let mut m = coh.matrix() * C64::new(0.6, 0.0);
        for n in 0..4 {
            m[(n, n)] += C64::new(0.1, 0.0);
        }
        m[(1, 3)] += C64::new(0.01, 0.02);
        m[(3, 1)] += C64::new(0.01, -0.02);
        FockOperator::from_matrix(m)
    }

    #[test]
    fn spectral_density_values() {
        let p = SystemParams::default();
        assert_eq!(spectral_density(0.0, &p), 0.0);
        assert_relative_eq!(spectral_density(1.0, &p), 0.12 * (-0.1f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(spectral_density(1.0, &p), 0.10858, epsilon = 1e-5);
        assert_eq!(spectral_density(-1.0, &p), -spectral_density(1.0, &p));
    }

    #[test]
    fn correlation_spectrum_limits() {
        let p = SystemParams::default();
        let cold = SystemParams {
            beta_omega: f64::INFINITY,
            ..Default::default()
        };
        for w in [0.3, 1.0, 2.5] {
            assert_relative_eq!(correlation_spectrum(w, &cold), 2.0 * spectral_density(w, &cold), max_relative = 1e-15);
            assert_eq!(correlation_spectrum(-w, &cold), 0.0);
        }
        let w = 0.5;
        assert_relative_eq!(
            correlation_spectrum(-w, &p),
            (-p.beta_omega * w).exp() * correlation_spectrum(w, &p),
            max_relative = 1e-12
        );
        let c0 = correlation_spectrum(0.0, &p);
        assert_relative_eq!(c0, 2.0 * 12.0 * 0.01 / 14.4, max_relative = 1e-14);
        // continuity at the origin
        assert_relative_eq!(correlation_spectrum(1e-7, &p), c0, max_relative = 1e-6);
        assert_relative_eq!(correlation_spectrum(-1e-7, &p), c0, max_relative = 1e-6);
    }

    #[test]
    fn harmonic_filter_is_exact() {
        let p = SystemParams {
            gamma_tilde: 0.0,
            n_trunc: 36,
            ..Default::default()
        };
        let sys = rwa_hamiltonian(&p, 0.0).unwrap();
        let d = build_dissipator(&sys, &p, true).unwrap();
        let a = fock::annihilation(36).unwrap();
        let want = a.scale(C64::new(correlation_spectrum(1.0, &p), 0.0));
        assert!(d.a_minus.max_abs_diff(&want) < 1e-14);
        let want = a.adjoint().scale(C64::new(correlation_spectrum(-1.0, &p), 0.0));
        assert!(d.adag_plus.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn zero_friction_gives_zero_operators() {
        let p = SystemParams {
            kappa: 0.0,
            ..Default::default()
        };
        // kappa = 0 is outside the validated range; the filter itself is defined
        let sys = rwa_hamiltonian_force(&p, 0.05).unwrap();
        let d = build_dissipator(&sys, &p, true).unwrap();
        for op in [&d.a_minus, &d.adag_plus, &d.adag_minus, &d.a_plus] {
            assert!(op.matrix().iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn downhill_transitions_dominate() {
        let p = SystemParams::default();
        let sys = rwa_hamiltonian(&p, 0.7).unwrap();
        let d = build_dissipator(&sys, &p, true).unwrap();
        // reorder the eigenbasis by Fock label
        let eig = sys.to_eigenbasis(&d.a_minus.real_part());
        let (mut down, mut up) = (0.0, 0.0);
        for k in 0..sys.dim() {
            for l in 0..sys.dim() {
                let w = eig[(k, l)].powi(2);
                if sys.fock_map[k] < sys.fock_map[l] {
                    down += w;
                } else {
                    up += w;
                }
            }
        }
        assert!(down > 0.9 * (down + up), "downhill weight {}", down / (down + up));
        // among the bound levels the uphill filter is Boltzmann suppressed;
        // states near the truncation edge have quasienergy gaps beyond nu
        let n_bound = p.derived().unwrap().n_bound as usize;
        let block = |m: &DMatrix<f64>| {
            let mut acc = 0.0;
            for k in 0..sys.dim() {
                for l in 0..sys.dim() {
                    if sys.fock_map[k] < n_bound && sys.fock_map[l] < n_bound {
                        acc += m[(k, l)].powi(2);
                    }
                }
            }
            acc.sqrt()
        };
        let ratio = block(&sys.to_eigenbasis(&d.adag_plus.real_part())) / block(&eig);
        assert!(ratio < 1e-4, "ratio {ratio}");
        assert!(d.a_minus.matrix().iter().all(|z| z.re.is_finite() && z.im == 0.0));
    }

    #[test]
    fn lindblad_rates() {
        let p = SystemParams::default();
        let l = lindblad_dissipator(&p).unwrap();
        assert_relative_eq!(l.rate_down, 0.01 * (1.0 + 1.0 / (14.4f64.exp() - 1.0)), max_relative = 1e-14);
        assert_relative_eq!(l.rate_down, 0.01, max_relative = 1e-6);
        assert_relative_eq!(l.rate_down / l.rate_up, 14.4f64.exp(), max_relative = 1e-10);
        let cold = SystemParams {
            beta_omega: f64::INFINITY,
            ..Default::default()
        };
        assert_eq!(lindblad_dissipator(&cold).unwrap().rate_up, 0.0);
    }

    #[test]
    fn harmonic_redfield_equals_lindblad() {
        let p = SystemParams {
            gamma_tilde: 0.0,
            omega_cutoff: f64::INFINITY,
            beta_omega: 3.0,
            n_trunc: 36,
            ..Default::default()
        };
        let sys = rwa_hamiltonian(&p, 0.0).unwrap();
        let d = build_dissipator(&sys, &p, false).unwrap();
        let l = lindblad_dissipator(&p).unwrap();
        let rho = test_state(36);
        let lhs = d.apply(&rho, 0.37);
        let rhs = l.apply(&rho);
        let scale = rhs.matrix().iter().fold(0.0f64, |m, z| m.max(z.norm()));
        for (x, y) in lhs.matrix().iter().zip(rhs.matrix().iter()) {
            assert!((x - y).norm() <= 1e-6 * y.norm() + 1e-13 * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn finite_cutoff_rescales_rates() {
        let p = SystemParams {
            gamma_tilde: 0.0,
            n_trunc: 36,
            ..Default::default()
        };
        let sys = rwa_hamiltonian(&p, 0.0).unwrap();
        let d = build_dissipator(&sys, &p, false).unwrap();
        let mut l = lindblad_dissipator(&p).unwrap();
        let cut = (-1.0 / p.omega_cutoff).exp();
        l.rate_down *= cut;
        l.rate_up *= cut;
        let rho = test_state(36);
        assert!(d.apply(&rho, 0.0).max_abs_diff(&l.apply(&rho)) < 1e-14);
    }

    #[test]
    fn generator_is_traceless() {
        let p = SystemParams::default();
        let sys = rwa_hamiltonian(&p, 0.7).unwrap();
        let d = build_dissipator(&sys, &p, true).unwrap();
        let rho = test_state(p.n_trunc);
        for t in [0.0, 1.3, 17.9] {
            let tr = d.apply(&rho, t).trace();
            assert!(tr.norm() < 1e-10, "trace {tr}");
            assert!(d.apply(&rho, t).hermiticity_error() < 1e-12);
        }
    }

    #[test]
    fn cutoff_sensitivity() {
        // relative change of the filtered operator on the lowest 18 levels
        // when the cutoff doubles
        let change = |wc: f64| {
            let p1 = SystemParams {
                omega_cutoff: wc,
                ..Default::default()
            };
            let p2 = SystemParams {
                omega_cutoff: 2.0 * wc,
                ..Default::default()
            };
            let sys = rwa_hamiltonian(&p1, 0.7).unwrap();
            let d1 = build_dissipator(&sys, &p1, true).unwrap().a_minus.real_part();
            let d2 = build_dissipator(&sys, &p2, true).unwrap().a_minus.real_part();
            let diff = (d1.view((0, 0), (18, 18)) - d2.view((0, 0), (18, 18))).norm();
            diff / d2.view((0, 0), (18, 18)).norm()
        };
        // the relevant transitions sit near w = 1, so the change tracks the
        // cutoff factor exp(-1/wc) / exp(-1/(2 wc))
        let at_10 = change(10.0);
        assert!((at_10 - (1.0 - (-0.05f64).exp())).abs() < 0.01, "{at_10}");
        assert!(change(100.0) < 0.01);
    }
}
