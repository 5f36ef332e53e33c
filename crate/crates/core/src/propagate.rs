//! Fixed-step RK4 propagation of the rotating-frame master equation.
//!
//! Every operator in the generator is real in the Fock basis (the drive is
//! real and the filter is real), so the density matrix is stored split as
//! `[Re rho | Im rho]` and the dense part of one generator evaluation is a
//! single real matrix product `[K_r; K_i; F_a; F_ad] [Re rho | Im rho]`.
//! The remaining terms multiply by the bidiagonal ladder operators and cost
//! `O(n^2)`.

use std::f64::consts::PI;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::bath::{build_dissipator, lindblad_dissipator, DissipatorSet, LindbladDissipator};
use crate::classical::{self, ClassicalError};
use crate::fock::{self, DensityMatrix, FockError, FockOperator};
use crate::params::{ParamsError, SystemParams};
use crate::spectra::{self, RotatingFrameSystem, SpectraError};

/// Largest `|Tr rho - 1|` tolerated during an evolution.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;
/// Steps between recorded observables by default (a tenth of a period at the
/// default step).
pub const DEFAULT_RECORD_STRIDE: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum PropagateError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Classical(#[from] ClassicalError),
    #[error("trace drift {drift:.3e} at t = {t_periods:.3} periods exceeds {TRACE_DRIFT_LIMIT:e}")]
    TraceDrift { t_periods: f64, drift: f64 },
    #[error("generator operator has imaginary part {0:.3e} in the Fock basis")]
    ComplexOperator(f64),
    #[error("dimension mismatch: state {state} vs system {system}")]
    DimensionMismatch { state: usize, system: usize },
}

impl From<PropagateError> for FockError {
    fn from(e: PropagateError) -> Self {
        match e {
            PropagateError::Fock(f) => f,
            other => FockError::TruncationOverflow(other.to_string()),
        }
    }
}

/// Which dissipator drives the evolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Model {
    /// Redfield filtered operators; `counter_rotating` keeps the
    /// `e^{+-i 2 nu t}` terms.
    Redfield { counter_rotating: bool },
    Lindblad,
}

impl Default for Model {
    fn default() -> Self {
        Model::Redfield {
            counter_rotating: true,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Dissipation {
    Redfield(DissipatorSet),
    Lindblad(LindbladDissipator),
}

impl Dissipation {
    pub fn build(sys: &RotatingFrameSystem, p: &SystemParams, model: Model) -> Result<Self, FockError> {
        Ok(match model {
            Model::Redfield { counter_rotating } => Dissipation::Redfield(build_dissipator(sys, p, counter_rotating)?),
            Model::Lindblad => Dissipation::Lindblad(lindblad_dissipator(p)?),
        })
    }

    /// Dissipative generator evaluated with dense operator algebra; the
    /// reference the fast split generator is checked against.
    pub fn apply(&self, rho: &FockOperator, t: f64) -> FockOperator {
        match self {
            Dissipation::Redfield(d) => d.apply(rho, t),
            Dissipation::Lindblad(l) => l.apply(rho),
        }
    }
}

/// Full generator `-i[H, rho] + D_t(rho)` by dense operator algebra.
pub fn reference_generator(sys: &RotatingFrameSystem, diss: &Dissipation, rho: &FockOperator, t: f64) -> FockOperator {
    let coherent = sys.h_rwa.commutator(rho).scale(C64::new(0.0, -1.0));
    &coherent + &diss.apply(rho, t)
}

fn real_or_err(op: &FockOperator) -> Result<DMatrix<f64>, PropagateError> {
    let im = op.max_imag();
    if im > 1e-12 {
        return Err(PropagateError::ComplexOperator(im));
    }
    Ok(op.real_part())
}

enum Terms {
    Redfield {
        m0: DMatrix<f64>,
        m_sum: DMatrix<f64>,
        m_diff: DMatrix<f64>,
        counter_rotating: bool,
        g: f64,
    },
    Lindblad {
        down: f64,
        up: f64,
    },
}

/// Fast evaluation of the master-equation right-hand side on split storage.
pub struct Generator {
    n: usize,
    two_nu: f64,
    h: DMatrix<f64>,
    terms: Terms,
    stack: DMatrix<f64>,
    prod: DMatrix<f64>,
    wr: Vec<f64>,
    wi: Vec<f64>,
    sqrt: Vec<f64>,
}

impl Generator {
    pub fn new(sys: &RotatingFrameSystem, diss: &Dissipation, nu: f64) -> Result<Self, PropagateError> {
        let n = sys.dim();
        let h = real_or_err(&sys.h_rwa)?;
        let sqrt: Vec<f64> = (0..=n).map(|k| (k as f64).sqrt()).collect();
        let (terms, stack) = match diss {
            Dissipation::Redfield(d) => {
                if d.dim() != n {
                    return Err(PropagateError::DimensionMismatch { state: d.dim(), system: n });
                }
                let fa = real_or_err(&d.a_minus)?;
                let fad = real_or_err(&d.adag_plus)?;
                let a = fock::annihilation(n)?.real_part();
                let ad = a.transpose();
                let m0 = &ad * &fa + &a * &fad;
                let m1 = &ad * &fad;
                let m2 = &a * &fa;
                let mut stack = DMatrix::zeros(4 * n, n);
                stack.view_mut((2 * n, 0), (n, n)).copy_from(&fa);
                stack.view_mut((3 * n, 0), (n, n)).copy_from(&fad);
                (
                    Terms::Redfield {
                        m0,
                        m_sum: &m1 + &m2,
                        m_diff: &m1 - &m2,
                        counter_rotating: d.include_counter_rotating,
                        g: d.prefactor,
                    },
                    stack,
                )
            }
            Dissipation::Lindblad(l) => {
                if l.a.dim() != n {
                    return Err(PropagateError::DimensionMismatch { state: l.a.dim(), system: n });
                }
                (
                    Terms::Lindblad {
                        down: l.rate_down,
                        up: l.rate_up,
                    },
                    DMatrix::zeros(2 * n, n),
                )
            }
        };
        let rows = stack.nrows();
        let mut gen = Generator {
            n,
            two_nu: 2.0 * nu,
            h,
            terms,
            stack,
            prod: DMatrix::zeros(rows, 2 * n),
            wr: vec![0.0; n * n],
            wi: vec![0.0; n * n],
            sqrt,
        };
        gen.update_stack(0.0);
        Ok(gen)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Writes `K_r(t)` and `K_i(t)` into the first `2n` rows of the stack,
    /// where `K = -iH - g M(t)` (Redfield) or `-iH - L^dagger L / 2`
    /// (Lindblad).
    fn update_stack(&mut self, t: f64) {
        let n = self.n;
        match &self.terms {
            Terms::Redfield {
                m0,
                m_sum,
                m_diff,
                counter_rotating,
                g,
            } => {
                let (c, s) = if *counter_rotating {
                    let th = self.two_nu * t;
                    (th.cos(), th.sin())
                } else {
                    (0.0, 0.0)
                };
                for j in 0..n {
                    for i in 0..n {
                        self.stack[(i, j)] = -g * (m0[(i, j)] + c * m_sum[(i, j)]);
                        self.stack[(n + i, j)] = -self.h[(i, j)] - g * s * m_diff[(i, j)];
                    }
                }
            }
            Terms::Lindblad { down, up } => {
                for j in 0..n {
                    for i in 0..n {
                        self.stack[(i, j)] = if i == j {
                            -0.5 * (down * i as f64 + up * (i + 1) as f64)
                        } else {
                            0.0
                        };
                        self.stack[(n + i, j)] = -self.h[(i, j)];
                    }
                }
            }
        }
    }

    fn time_dependent(&self) -> bool {
        matches!(
            self.terms,
            Terms::Redfield {
                counter_rotating: true,
                ..
            }
        )
    }

    /// `out = L_t(state)` with `state = [Re rho | Im rho]` (`n x 2n`).
    pub fn eval(&mut self, t: f64, state: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let n = self.n;
        if self.time_dependent() {
            self.update_stack(t);
        }
        self.prod.gemm(1.0, &self.stack, state, 0.0);
        let rows = self.prod.nrows();
        let p = self.prod.as_slice();
        let at = |r: usize, c: usize| p[c * rows + r];
        let st = state.as_slice();
        let rho = |i: usize, j: usize| (st[j * n + i], st[(n + j) * n + i]);
        let sq = &self.sqrt;

        // W = K rho (+ dissipative extras); the generator is W + W^dagger
        for j in 0..n {
            for i in 0..n {
                let zr = at(i, j) - at(n + i, n + j);
                let zi = at(i, n + j) + at(n + i, j);
                self.wr[j * n + i] = zr;
                self.wi[j * n + i] = zi;
            }
        }
        match &self.terms {
            Terms::Redfield {
                counter_rotating, g, ..
            } => {
                let (c, s) = if *counter_rotating {
                    let th = self.two_nu * t;
                    (th.cos(), th.sin())
                } else {
                    (0.0, 0.0)
                };
                let cr = *counter_rotating;
                // Y = (F_a rho)(a^dag + e^{-i th} a) + (F_ad rho)(a + e^{i th} a^dag)
                for j in 0..n {
                    for i in 0..n {
                        let (mut yr, mut yi) = (0.0, 0.0);
                        if j + 1 < n {
                            let w = sq[j + 1];
                            let (ur, ui) = (at(2 * n + i, j + 1), at(2 * n + i, n + j + 1));
                            yr += w * ur;
                            yi += w * ui;
                            if cr {
                                let (vr, vi) = (at(3 * n + i, j + 1), at(3 * n + i, n + j + 1));
                                yr += w * (c * vr - s * vi);
                                yi += w * (c * vi + s * vr);
                            }
                        }
                        if j >= 1 {
                            let w = sq[j];
                            let (vr, vi) = (at(3 * n + i, j - 1), at(3 * n + i, n + j - 1));
                            yr += w * vr;
                            yi += w * vi;
                            if cr {
                                let (ur, ui) = (at(2 * n + i, j - 1), at(2 * n + i, n + j - 1));
                                yr += w * (c * ur + s * ui);
                                yi += w * (c * ui - s * ur);
                            }
                        }
                        self.wr[j * n + i] += g * yr;
                        self.wi[j * n + i] += g * yi;
                    }
                }
            }
            Terms::Lindblad { down, up } => {
                // sandwich terms are Hermitian: add half so that W + W^dag has them once
                for j in 0..n {
                    for i in 0..n {
                        let (mut sr, mut si) = (0.0, 0.0);
                        if i + 1 < n && j + 1 < n {
                            let (r, im) = rho(i + 1, j + 1);
                            let w = down * sq[i + 1] * sq[j + 1];
                            sr += w * r;
                            si += w * im;
                        }
                        if i >= 1 && j >= 1 {
                            let (r, im) = rho(i - 1, j - 1);
                            let w = up * sq[i] * sq[j];
                            sr += w * r;
                            si += w * im;
                        }
                        self.wr[j * n + i] += 0.5 * sr;
                        self.wi[j * n + i] += 0.5 * si;
                    }
                }
            }
        }
        let o = out.as_mut_slice();
        for j in 0..n {
            for i in 0..n {
                o[j * n + i] = self.wr[j * n + i] + self.wr[i * n + j];
                o[(n + j) * n + i] = self.wi[j * n + i] - self.wi[i * n + j];
            }
        }
    }
}

/// Splits a complex matrix into `[Re | Im]`.
pub fn split(rho: &DMatrix<C64>) -> DMatrix<f64> {
    let n = rho.nrows();
    DMatrix::from_fn(n, 2 * n, |i, j| if j < n { rho[(i, j)].re } else { rho[(i, j - n)].im })
}

pub fn join(state: &DMatrix<f64>) -> DMatrix<C64> {
    let n = state.nrows();
    DMatrix::from_fn(n, n, |i, j| C64::new(state[(i, j)], state[(i, n + j)]))
}

fn stage(out: &mut DMatrix<f64>, base: &DMatrix<f64>, h: f64, k: &DMatrix<f64>) {
    for ((o, b), k) in out.as_mut_slice().iter_mut().zip(base.as_slice()).zip(k.as_slice()) {
        *o = b + h * k;
    }
}

/// Classical fourth-order Runge-Kutta with preallocated stages.
pub struct Rk4 {
    k1: DMatrix<f64>,
    k2: DMatrix<f64>,
    k3: DMatrix<f64>,
    k4: DMatrix<f64>,
    tmp: DMatrix<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        let z = DMatrix::zeros(n, 2 * n);
        Rk4 {
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            tmp: z,
        }
    }

    pub fn step(&mut self, gen: &mut Generator, t: f64, dt: f64, state: &mut DMatrix<f64>) {
        gen.eval(t, state, &mut self.k1);
        stage(&mut self.tmp, state, 0.5 * dt, &self.k1);
        gen.eval(t + 0.5 * dt, &self.tmp, &mut self.k2);
        stage(&mut self.tmp, state, 0.5 * dt, &self.k2);
        gen.eval(t + 0.5 * dt, &self.tmp, &mut self.k3);
        stage(&mut self.tmp, state, dt, &self.k3);
        gen.eval(t + dt, &self.tmp, &mut self.k4);
        let s = state.as_mut_slice();
        let (k1, k2, k3, k4) = (self.k1.as_slice(), self.k2.as_slice(), self.k3.as_slice(), self.k4.as_slice());
        let h = dt / 6.0;
        for idx in 0..s.len() {
            s[idx] += h * (k1[idx] + 2.0 * (k2[idx] + k3[idx]) + k4[idx]);
        }
    }
}

/// Observables of a split state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observables {
    pub trace: f64,
    /// `Tr[a rho]`.
    pub a_mean: C64,
    /// `Tr[x rho]` (complex so a broken hermiticity shows up).
    pub x_mean: C64,
    pub p_mean: f64,
    pub n_mean: f64,
    pub hermiticity: f64,
    pub top_two: f64,
}

pub fn observe(state: &DMatrix<f64>, x_zpf: f64, aleph: f64) -> Observables {
    let n = state.nrows();
    let r = |i: usize, j: usize| state[(i, j)];
    let im = |i: usize, j: usize| state[(i, n + j)];
    let mut trace = 0.0;
    let mut n_mean = 0.0;
    let mut a_mean = C64::new(0.0, 0.0);
    let mut x_mean = C64::new(0.0, 0.0);
    let mut herm = 0.0f64;
    for i in 0..n {
        trace += r(i, i);
        n_mean += i as f64 * r(i, i);
        herm = herm.max(im(i, i).abs());
        if i + 1 < n {
            let s = ((i + 1) as f64).sqrt();
            a_mean += C64::new(r(i + 1, i), im(i + 1, i)) * s;
            x_mean += C64::new(r(i + 1, i) + r(i, i + 1), im(i + 1, i) + im(i, i + 1)) * (s * x_zpf);
        }
        for j in (i + 1)..n {
            herm = herm.max((r(i, j) - r(j, i)).abs()).max((im(i, j) + im(j, i)).abs());
        }
    }
    let top_two = (n.saturating_sub(2)..n).map(|i| r(i, i)).sum();
    Observables {
        trace,
        a_mean,
        x_mean,
        p_mean: (2.0 * aleph).sqrt() * a_mean.im,
        n_mean,
        hermiticity: herm,
        top_two,
    }
}

/// `<psi|rho|psi>` on a split state.
pub fn overlap(state: &DMatrix<f64>, psi: &DVector<C64>) -> f64 {
    let n = state.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..n {
        let mut col = C64::new(0.0, 0.0);
        for i in 0..n {
            col += psi[i].conj() * C64::new(state[(i, j)], state[(i, n + j)]);
        }
        acc += col * psi[j];
    }
    acc.re
}

/// Stops an evolution once `P_S` has fallen to `fraction` of its value at
/// `after_periods`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStop {
    pub after_periods: f64,
    pub fraction: f64,
}

/// Recording plan for [`evolve`].
#[derive(Clone, Debug)]
pub struct Schedule {
    /// Integrator steps between recorded samples.
    pub record_stride: usize,
    /// Times (periods) at which the full state is kept.
    pub snapshot_periods: Vec<f64>,
    /// Reference state `|alpha_S>` for `P_S(t)`.
    pub reference: Option<DVector<C64>>,
    pub stop: Option<EarlyStop>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            record_stride: DEFAULT_RECORD_STRIDE,
            snapshot_periods: Vec::new(),
            reference: None,
            stop: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvolutionRecord {
    /// In periods `2 pi / Omega`.
    pub times: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub x_bar_im: Vec<f64>,
    pub p_bar: Vec<f64>,
    pub n_mean: Vec<f64>,
    /// Empty unless the schedule has a reference state.
    pub p_s: Vec<f64>,
    pub trace_drift: Vec<f64>,
    pub hermiticity: Vec<f64>,
    pub top_two: Vec<f64>,
    pub snapshots: Vec<(f64, DensityMatrix)>,
    pub final_state: DensityMatrix,
    pub stopped_early: bool,
}

impl EvolutionRecord {
    fn with_capacity(cap: usize, dim: usize) -> Self {
        EvolutionRecord {
            times: Vec::with_capacity(cap),
            x_bar: Vec::with_capacity(cap),
            x_bar_im: Vec::with_capacity(cap),
            p_bar: Vec::with_capacity(cap),
            n_mean: Vec::with_capacity(cap),
            p_s: Vec::with_capacity(cap),
            trace_drift: Vec::with_capacity(cap),
            hermiticity: Vec::with_capacity(cap),
            top_two: Vec::with_capacity(cap),
            snapshots: Vec::new(),
            final_state: DensityMatrix::ground(dim),
            stopped_early: false,
        }
    }

    pub fn final_x_bar(&self) -> f64 {
        *self.x_bar.last().expect("records always contain t = 0")
    }

    /// CSV with columns `t_periods, x_bar_re, x_bar_im, p_s, trace_drift`;
    /// `p_s` is empty when no reference state was given.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_periods,x_bar_re,x_bar_im,p_s,trace_drift\n");
        for k in 0..self.times.len() {
            let ps = self.p_s.get(k).map(|v| format!("{v:.12e}")).unwrap_or_default();
            out.push_str(&format!(
                "{:.6},{:.12e},{:.12e},{},{:.6e}\n",
                self.times[k], self.x_bar[k], self.x_bar_im[k], ps, self.trace_drift[k]
            ));
        }
        out
    }
}

/// Integrates from `rho0` for `p.t_final` periods with step `p.dt`.
pub fn evolve(
    rho0: &DensityMatrix,
    sys: &RotatingFrameSystem,
    diss: &Dissipation,
    p: &SystemParams,
    schedule: &Schedule,
) -> Result<EvolutionRecord, PropagateError> {
    let n = sys.dim();
    if rho0.dim() != n {
        return Err(PropagateError::DimensionMismatch {
            state: rho0.dim(),
            system: n,
        });
    }
    let mut gen = Generator::new(sys, diss, p.nu())?;
    let mut rk = Rk4::new(n);
    let mut state = split(rho0.matrix());
    let steps = p.n_steps();
    let stride = schedule.record_stride.max(1);
    let period = 2.0 * PI;
    let x_zpf = p.x_zpf();
    let snapshot_steps: Vec<usize> = schedule
        .snapshot_periods
        .iter()
        .map(|&tp| (tp * period / p.dt).round() as usize)
        .collect();
    let mut rec = EvolutionRecord::with_capacity(steps / stride + 2, n);
    let mut stop_reference: Option<f64> = None;

    for step in 0..=steps {
        let t = step as f64 * p.dt;
        let t_periods = t / period;
        if snapshot_steps.contains(&step) {
            rec.snapshots.push((t_periods, DensityMatrix::new_unchecked(FockOperator::from_matrix(join(&state)))));
        }
        if step % stride == 0 || step == steps {
            let obs = observe(&state, x_zpf, p.aleph);
            let drift = (obs.trace - 1.0).abs();
            rec.times.push(t_periods);
            rec.x_bar.push(obs.x_mean.re);
            rec.x_bar_im.push(obs.x_mean.im);
            rec.p_bar.push(obs.p_mean);
            rec.n_mean.push(obs.n_mean);
            rec.trace_drift.push(drift);
            rec.hermiticity.push(obs.hermiticity);
            rec.top_two.push(obs.top_two);
            if drift > TRACE_DRIFT_LIMIT {
                return Err(PropagateError::TraceDrift { t_periods, drift });
            }
            if obs.top_two > fock::WATCHDOG_LIMIT {
                return Err(FockError::TruncationOverflow(format!(
                    "top-two-level occupation {:.3e} at t = {t_periods:.3} periods exceeds {:e}; increase n_trunc",
                    obs.top_two,
                    fock::WATCHDOG_LIMIT
                ))
                .into());
            }
            if let Some(psi) = &schedule.reference {
                let ps = overlap(&state, psi);
                rec.p_s.push(ps);
                if let Some(stop) = schedule.stop {
                    if stop_reference.is_none() && t_periods >= stop.after_periods {
                        stop_reference = Some(ps);
                    }
                    if let Some(ps0) = stop_reference {
                        if ps < stop.fraction * ps0 {
                            rec.stopped_early = step < steps;
                            break;
                        }
                    }
                }
            }
        }
        if step == steps {
            break;
        }
        rk.step(&mut gen, t, p.dt, &mut state);
    }
    rec.final_state = DensityMatrix::new_unchecked(FockOperator::from_matrix(join(&state)));
    debug!(
        "evolution finished at t = {:.2} periods, x_bar = {:.6}",
        rec.times.last().copied().unwrap_or(0.0),
        rec.final_x_bar()
    );
    Ok(rec)
}

/// Rotating-frame system and dissipator for a drive in units of `F_c`.
pub fn prepare(
    p: &SystemParams,
    drive_ratio: f64,
    model: Model,
) -> Result<(RotatingFrameSystem, Dissipation), PropagateError> {
    p.derived()?;
    let sys = spectra::rwa_hamiltonian(p, drive_ratio)?;
    let diss = Dissipation::build(&sys, p, model)?;
    Ok((sys, diss))
}

/// Initial attractor for sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Attractor {
    Sas,
    Las,
}

impl std::str::FromStr for Attractor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sas" => Ok(Attractor::Sas),
            "las" => Ok(Attractor::Las),
            other => Err(format!("unknown attractor `{other}` (expected sas or las)")),
        }
    }
}

/// Relative offset from a fold used when the requested branch does not exist
/// at the given drive.
const FOLD_OFFSET: f64 = 1e-6;

/// Coherent amplitude of the requested attractor at the quantum-shifted
/// detuning. Outside that branch's existence window the amplitude at the
/// nearest fold is used.
pub fn attractor_alpha(p: &SystemParams, drive_ratio: f64, which: Attractor) -> Result<C64, ClassicalError> {
    let amps = classical::attractor_coherent_amplitudes(p, drive_ratio)?;
    let found = match which {
        Attractor::Sas => amps.sas,
        Attractor::Las => amps.las,
    };
    if let Some(alpha) = found {
        return Ok(alpha);
    }
    let sb = classical::quantum_shifted_bifurcation(p)?;
    let edge = match which {
        Attractor::Sas => sb.ratio * (1.0 - FOLD_OFFSET),
        Attractor::Las => sb.lower_ratio * (1.0 + FOLD_OFFSET),
    };
    let amps = classical::attractor_coherent_amplitudes(p, edge)?;
    let alpha = match which {
        Attractor::Sas => amps.sas,
        Attractor::Las => amps.las,
    };
    Ok(alpha.expect("branch exists just inside its fold"))
}

/// One point of a hysteresis sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub drive_ratio: f64,
    pub alpha_re: f64,
    pub alpha_im: f64,
    /// `Re Tr[x rho]` at `t_final`.
    pub x_bar: f64,
    pub x_bar_im: f64,
    pub p_bar: f64,
    /// `2 x_zpf |Tr[a rho]|`, the phase-independent oscillation amplitude.
    pub amplitude: f64,
    pub n_mean: f64,
}

impl SweepPoint {
    pub const CSV_HEADER: &'static str = "F0_over_Fc,alpha_re,alpha_im,x_bar_re,x_bar_im,p_bar,amplitude,n_mean";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.drive_ratio, self.alpha_re, self.alpha_im, self.x_bar, self.x_bar_im, self.p_bar, self.amplitude, self.n_mean
        )
    }
}

/// Steady amplitude at `t_final` for one drive, starting from an attractor.
pub fn sweep_point(p: &SystemParams, drive_ratio: f64, init: Attractor, model: Model) -> Result<SweepPoint, PropagateError> {
    let (sys, diss) = prepare(p, drive_ratio, model)?;
    let alpha = attractor_alpha(p, drive_ratio, init)?;
    let rho0 = fock::coherent_state(alpha, p.n_trunc)?;
    let schedule = Schedule {
        record_stride: 200,
        ..Default::default()
    };
    let rec = evolve(&rho0, &sys, &diss, p, &schedule)?;
    let obs = observe(&split(rec.final_state.matrix()), p.x_zpf(), p.aleph);
    info!(
        "sweep {:?} F0/Fc = {drive_ratio:.4}: x_bar = {:.5}, <n> = {:.3}",
        init, obs.x_mean.re, obs.n_mean
    );
    Ok(SweepPoint {
        drive_ratio,
        alpha_re: alpha.re,
        alpha_im: alpha.im,
        x_bar: obs.x_mean.re,
        x_bar_im: obs.x_mean.im,
        p_bar: obs.p_mean,
        amplitude: 2.0 * p.x_zpf() * obs.a_mean.norm(),
        n_mean: obs.n_mean,
    })
}

/// Evolves every drive of an ascending grid from the requested attractor;
/// drives are independent and run on the current rayon pool.
pub fn hysteresis_sweep(
    p: &SystemParams,
    drive_grid: &[f64],
    init: Attractor,
    model: Model,
) -> Result<Vec<SweepPoint>, PropagateError> {
    if drive_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ParamsError::Invalid {
            name: "drive_grid",
            value: f64::NAN,
            reason: "must be strictly ascending".into(),
        }
        .into());
    }
    drive_grid
        .par_iter()
        .map(|&ratio| sweep_point(p, ratio, init, model))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mixed_state(dim: usize) -> DensityMatrix {
        let coh = fock::coherent_state(C64::new(0.9, -0.7), dim).unwrap();
        let mut m = coh.matrix() * C64::new(0.7, 0.0);
        m[(0, 0)] += C64::new(0.2, 0.0);
        m[(2, 2)] += C64::new(0.1, 0.0);
        m[(0, 2)] += C64::new(0.03, 0.01);
        m[(2, 0)] += C64::new(0.03, -0.01);
        DensityMatrix::new(FockOperator::from_matrix(m)).unwrap()
    }

    fn check_generator(p: &SystemParams, ratio: f64, model: Model) {
        let (sys, diss) = prepare(p, ratio, model).unwrap();
        let mut gen = Generator::new(&sys, &diss, p.nu()).unwrap();
        let rho = mixed_state(p.n_trunc);
        let s = split(rho.matrix());
        let mut out = DMatrix::zeros(p.n_trunc, 2 * p.n_trunc);
        for t in [0.0, 0.77, 5.3] {
            gen.eval(t, &s, &mut out);
            let fast = join(&out);
            let slow = reference_generator(&sys, &diss, rho.op(), t);
            let err = FockOperator::from_matrix(fast).max_abs_diff(&slow);
            assert!(err < 1e-13, "{model:?} t={t}: {err}");
        }
    }

    #[test]
    fn fast_generator_matches_dense_algebra() {
        let p = SystemParams {
            n_trunc: 40,
            beta_omega: 2.0,
            ..Default::default()
        };
        check_generator(&p, 0.7, Model::Redfield { counter_rotating: true });
        check_generator(&p, 0.7, Model::Redfield { counter_rotating: false });
        check_generator(&p, 0.7, Model::Lindblad);
    }

    #[test]
    fn unitary_limit_preserves_purity() {
        let p = SystemParams {
            n_trunc: 40,
            t_final: 5.0,
            ..Default::default()
        };
        let (sys, _) = prepare(&p, 0.7, Model::default()).unwrap();
        let zero = Dissipation::Lindblad(LindbladDissipator {
            rate_down: 0.0,
            rate_up: 0.0,
            a: fock::annihilation(40).unwrap(),
            adag: fock::creation(40).unwrap(),
        });
        let rho0 = fock::coherent_state(C64::new(0.5, 0.2), 40).unwrap();
        let rec = evolve(&rho0, &sys, &zero, &p, &Schedule::default()).unwrap();
        assert_relative_eq!(rec.final_state.purity(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn records_and_snapshots() {
        let p = SystemParams {
            n_trunc: 40,
            t_final: 2.0,
            ..Default::default()
        };
        let (sys, diss) = prepare(&p, 0.5, Model::default()).unwrap();
        let alpha = attractor_alpha(&p, 0.5, Attractor::Sas).unwrap();
        let schedule = Schedule {
            record_stride: 50,
            snapshot_periods: vec![1.0],
            reference: Some(fock::coherent_amplitudes(alpha, 40).unwrap()),
            stop: None,
        };
        let rho0 = fock::coherent_state(alpha, 40).unwrap();
        let rec = evolve(&rho0, &sys, &diss, &p, &schedule).unwrap();
        assert_eq!(rec.times.len(), 9);
        assert!(rec.times.windows(2).all(|w| w[1] > w[0]));
        assert_relative_eq!(rec.p_s[0], 1.0, epsilon = 1e-12);
        assert_eq!(rec.snapshots.len(), 1);
        assert_relative_eq!(rec.snapshots[0].0, 1.0, epsilon = 1e-12);
        let csv = rec.to_csv();
        assert!(csv.starts_with("t_periods,x_bar_re,x_bar_im,p_s,trace_drift\n"));
        assert_eq!(csv.lines().count(), 10);
    }

    #[test]
    fn watchdog_fires_on_small_truncation() {
        let p = SystemParams {
            n_trunc: 36,
            t_final: 1.0,
            ..Default::default()
        };
        let (sys, diss) = prepare(&p, 0.7, Model::default()).unwrap();
        let rho0 = DensityMatrix::fock(35, 36);
        let err = evolve(&rho0, &sys, &diss, &p, &Schedule::default()).unwrap_err();
        assert!(matches!(err, PropagateError::Fock(FockError::TruncationOverflow(_))));
    }

    #[test]
    fn sweep_rejects_unsorted_grid() {
        let p = SystemParams::default();
        assert!(hysteresis_sweep(&p, &[0.8, 0.7], Attractor::Sas, Model::default()).is_err());
    }

    #[test]
    fn fold_fallback_amplitudes() {
        let p = SystemParams::default();
        // above the shifted upper fold only the large-amplitude branch exists
        let sas = attractor_alpha(&p, 0.9, Attractor::Sas).unwrap();
        let las = attractor_alpha(&p, 0.9, Attractor::Las).unwrap();
        assert!(sas.norm() < las.norm());
        // below the shifted lower fold only the small-amplitude branch exists
        let las_low = attractor_alpha(&p, 0.05, Attractor::Las).unwrap();
        assert!(las_low.norm_sqr() > 1.0);
    }
}
