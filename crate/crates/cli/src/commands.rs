use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use duffing::analysis::{self, WindowPolicy};
use duffing::classical::{self, BifurcationDiagram, Branch};
use duffing::fock::{self, DensityMatrix};
use duffing::params::SystemParams;
use duffing::propagate::{self, Attractor, Schedule};
use duffing::spectra;
use duffing::wigner::{self, GridSpec};
use num_complex::Complex64 as C64;
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{Cli, Command, InitState, SweepInit};

#[derive(Debug)]
pub enum CliError {
    Core(duffing::Error),
    Config(String),
    Io { path: PathBuf, source: std::io::Error },
    SelftestFailed(usize),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Io { path, source } => write!(f, "cannot write {}: {source}", path.display()),
            CliError::SelftestFailed(n) => write!(f, "{n} self-test check(s) failed"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => e.exit_code(),
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::SelftestFailed(_) => 2,
        }
    }
}

impl<E: Into<duffing::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Core(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub struct Output {
    dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Output {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| CliError::Io { path, source })?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("json values serialize");
        self.write(name, &(text + "\n"))
    }
}

fn load_params(cli: &Cli) -> Result<SystemParams> {
    let p = match &cli.config {
        Some(path) => SystemParams::from_config_file(path)?,
        None => SystemParams::default(),
    };
    p.validate()?;
    Ok(p)
}

fn configure_threads(threads: Option<usize>) -> Result<usize> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // a second initialisation in the same process (tests) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

fn linspace(from: f64, to: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(to > from) {
        return Err(CliError::Config(format!(
            "drive grid needs from < to and at least 2 points (got {from}..{to}, {points})"
        )));
    }
    let h = (to - from) / (points - 1) as f64;
    Ok((0..points).map(|k| from + h * k as f64).collect())
}

fn initial_state(p: &SystemParams, drive: f64, init: InitState) -> Result<(DensityMatrix, C64)> {
    let alpha = match init {
        InitState::Sas => propagate::attractor_alpha(p, drive, Attractor::Sas)?,
        InitState::Las => propagate::attractor_alpha(p, drive, Attractor::Las)?,
        InitState::Vacuum => C64::new(0.0, 0.0),
    };
    Ok((fock::coherent_state(alpha, p.n_trunc)?, alpha))
}

pub fn run(cli: &Cli) -> Result<String> {
    let start = Instant::now();
    let params = load_params(cli)?;
    let threads = configure_threads(cli.threads)?;
    let mut out = Output::new(&cli.out)?;
    let (name, summary) = match &cli.command {
        Command::Spectrum { drive } => ("spectrum", spectrum(&params, drive.unwrap_or(params.drive_ratio), &mut out)?),
        Command::Bifurcation { from, to, points } => ("bifurcation", bifurcation(&params, *from, *to, *points, &mut out)?),
        Command::Evolve { drive, init, stride } => (
            "evolve",
            evolve(cli, &params, drive.unwrap_or(params.drive_ratio), *init, *stride, &mut out)?,
        ),
        Command::Sweep {
            from,
            to,
            points,
            init,
        } => ("sweep", sweep(cli, &params, linspace(*from, *to, *points)?, *init, &mut out)?),
        Command::Wigner {
            drive,
            at,
            init,
            half_width,
            grid_points,
        } => (
            "wigner",
            wigner_cmd(
                cli,
                &params,
                drive.unwrap_or(params.drive_ratio),
                at,
                *init,
                GridSpec::symmetric(*half_width, *grid_points),
                &mut out,
            )?,
        ),
        Command::Rate { drive, t_transient } => (
            "rate",
            rate(cli, &params, drive.unwrap_or(params.drive_ratio), *t_transient, &mut out)?,
        ),
        Command::Scaling { drives, t_transient } => ("scaling", scaling(cli, &params, drives, *t_transient, &mut out)?),
        Command::Selftest => ("selftest", crate::selftest::run(&mut out)?),
    };
    let manifest = RunManifest::new(name, &params, cli.model(), threads, out.written.clone(), start.elapsed());
    out.write_json(&format!("{name}.manifest.json"), &serde_json::to_value(&manifest).expect("manifest serializes"))?;
    Ok(summary)
}

fn spectrum(p: &SystemParams, drive: f64, out: &mut Output) -> Result<String> {
    let sys = spectra::rwa_hamiltonian(p, drive)?;
    let d = p.derived()?;
    let mut csv = String::from("index,fock_label,quasienergy,undriven_level\n");
    for (k, e) in sys.eigenvalues.iter().enumerate() {
        let label = sys.fock_map[k];
        let _ = writeln!(csv, "{k},{label},{e:.12e},{:.12e}", spectra::rwa_level(p, label));
    }
    out.write("spectrum.csv", &csv)?;
    let peak = (0..p.n_trunc)
        .max_by(|a, b| spectra::rwa_level(p, *a).total_cmp(&spectra::rwa_level(p, *b)))
        .unwrap_or(0);
    out.write_json(
        "spectrum.json",
        &json!({
            "drive_ratio": drive,
            "force": sys.force,
            "n_star": d.n_star,
            "n_bound": d.n_bound,
            "undriven_peak_level": peak,
            "unitarity_error": sys.unitarity_error(),
        }),
    )?;
    Ok(format!(
        "spectrum: {} levels at F0/Fc = {drive}; undriven peak at n = {peak} (n* = {:.3})",
        p.n_trunc, d.n_star
    ))
}

fn diagram_csv(csv: &mut String, frame: &str, diagram: &BifurcationDiagram) {
    for row in &diagram.rows {
        for root in &row.roots {
            let branch = match root.branch {
                Branch::Lower => "lower",
                Branch::Middle => "middle",
                Branch::Upper => "upper",
            };
            let _ = writeln!(
                csv,
                "{frame},{:.6},{branch},{:.12e},{:.12e},{:.12e},{}",
                row.drive_ratio, root.r, root.x_tilde.re, root.x_tilde.im, root.stable
            );
        }
    }
}

fn bifurcation(p: &SystemParams, from: f64, to: f64, points: usize, out: &mut Output) -> Result<String> {
    let d = p.derived()?;
    let sb = classical::quantum_shifted_bifurcation(p)?;
    let grid = linspace(from, to, points)?;
    let classical_diagram = classical::bifurcation_diagram(p, d.detuning, &grid)?;
    let shifted_diagram = classical::bifurcation_diagram(p, d.shifted_detuning, &grid)?;
    let mut csv = String::from("frame,F0_over_Fc,branch,r,x_re,x_im,stable\n");
    diagram_csv(&mut csv, "classical", &classical_diagram);
    diagram_csv(&mut csv, "shifted", &shifted_diagram);
    out.write("bifurcation.csv", &csv)?;
    out.write_json(
        "bifurcation.json",
        &json!({
            "detuning": d.detuning,
            "shifted_detuning": d.shifted_detuning,
            "q": d.q,
            "classical": sb.classical,
            "shifted": sb.shifted,
            "shifted_bifurcation_ratio": sb.ratio,
            "shifted_lower_ratio": sb.lower_ratio,
            "classical_lower_ratio": classical_diagram.f_bbar_ratio,
            "critical_force_unit": classical::critical_force_unit(p)?,
        }),
    )?;
    Ok(format!(
        "bifurcation: shifted F_B/F_c = {:.4} (Delta = {:.3}, shifted Delta = {:.4})",
        sb.ratio, d.detuning, d.shifted_detuning
    ))
}

fn evolve(cli: &Cli, p: &SystemParams, drive: f64, init: InitState, stride: usize, out: &mut Output) -> Result<String> {
    let (sys, diss) = propagate::prepare(p, drive, cli.model())?;
    let (rho0, alpha) = initial_state(p, drive, init)?;
    let sas = propagate::attractor_alpha(p, drive, Attractor::Sas)?;
    let schedule = Schedule {
        record_stride: stride,
        reference: Some(fock::coherent_amplitudes(sas, p.n_trunc)?),
        ..Default::default()
    };
    let rec = propagate::evolve(&rho0, &sys, &diss, p, &schedule)?;
    out.write("evolve.csv", &rec.to_csv())?;
    let last = rec.times.len() - 1;
    out.write_json(
        "evolve.json",
        &json!({
            "drive_ratio": drive,
            "initial_alpha": [alpha.re, alpha.im],
            "t_final_periods": rec.times[last],
            "x_bar": rec.x_bar[last],
            "p_bar": rec.p_bar[last],
            "n_mean": rec.n_mean[last],
            "p_s": rec.p_s[last],
            "purity": rec.final_state.purity(),
            "max_trace_drift": rec.trace_drift.iter().cloned().fold(0.0, f64::max),
            "max_hermiticity_error": rec.hermiticity.iter().cloned().fold(0.0, f64::max),
            "max_x_bar_imag": rec.x_bar_im.iter().map(|v| v.abs()).fold(0.0, f64::max),
            "max_top_two_occupation": rec.top_two.iter().cloned().fold(0.0, f64::max),
        }),
    )?;
    Ok(format!(
        "evolve: F0/Fc = {drive}, x_bar({:.1}) = {:.6}, P_S = {:.4}",
        rec.times[last], rec.x_bar[last], rec.p_s[last]
    ))
}

fn sweep(cli: &Cli, p: &SystemParams, grid: Vec<f64>, init: SweepInit, out: &mut Output) -> Result<String> {
    let which: &[(Attractor, &str)] = match init {
        SweepInit::Sas => &[(Attractor::Sas, "sas")],
        SweepInit::Las => &[(Attractor::Las, "las")],
        SweepInit::Both => &[(Attractor::Sas, "sas"), (Attractor::Las, "las")],
    };
    let shifted = classical::quantum_shifted_bifurcation(p)?.ratio;
    let mut summary = format!("sweep over {} drives:", grid.len());
    let mut meta = serde_json::Map::new();
    meta.insert("shifted_bifurcation_ratio".into(), json!(shifted));
    for (attractor, tag) in which {
        let points = propagate::hysteresis_sweep(p, &grid, *attractor, cli.model())?;
        let mut csv = format!("{}\n", propagate::SweepPoint::CSV_HEADER);
        for pt in &points {
            csv.push_str(&pt.csv_row());
            csv.push('\n');
        }
        out.write(&format!("sweep_{tag}.csv"), &csv)?;
        let amps: Vec<f64> = points.iter().map(|pt| pt.amplitude).collect();
        if let Some(jump) = analysis::largest_rise(&grid, &amps) {
            meta.insert(format!("{tag}_largest_rise"), json!(jump));
            if *attractor == Attractor::Sas {
                let _ = write!(summary, " SAS branch jumps between {:.4} and {:.4} F_c", jump.below, jump.above);
            }
        }
    }
    out.write_json("sweep.json", &serde_json::Value::Object(meta))?;
    Ok(summary)
}

fn wigner_cmd(
    cli: &Cli,
    p: &SystemParams,
    drive: f64,
    at: &[f64],
    init: InitState,
    spec: GridSpec,
    out: &mut Output,
) -> Result<String> {
    if at.is_empty() || at.iter().any(|t| !(*t >= 0.0)) {
        return Err(CliError::Config("--at needs non-negative snapshot times".into()));
    }
    let t_max = at.iter().cloned().fold(0.0, f64::max);
    let run = SystemParams {
        t_final: t_max,
        ..p.clone()
    };
    let (sys, diss) = propagate::prepare(&run, drive, cli.model())?;
    let (rho0, _) = initial_state(&run, drive, init)?;
    let sas = propagate::attractor_alpha(&run, drive, Attractor::Sas)?;
    let sas_psi = fock::coherent_amplitudes(sas, run.n_trunc)?;
    let schedule = Schedule {
        record_stride: 200,
        snapshot_periods: at.to_vec(),
        reference: Some(sas_psi.clone()),
        stop: None,
    };
    let rec = propagate::evolve(&rho0, &sys, &diss, &run, &schedule)?;
    let w_sas = wigner::wigner(&DensityMatrix::pure(&sas_psi), &spec)?;
    // the unshifted classical small-amplitude solution, for comparison
    let d = run.derived()?;
    let f = classical::scaled_drive(&run, drive)?;
    let classical_sas = classical::stationary_roots(f, d.detuning, d.q)
        .into_iter()
        .find(|r| r.branch == Branch::Lower)
        .map(|r| wigner::coherent_center(classical::amplitude_to_alpha(&run, r.x_tilde)));
    let mut summary = format!("wigner: F0/Fc = {drive}");
    for (t, rho) in &rec.snapshots {
        let grid = wigner::wigner(rho, &spec)?;
        let tag = format!("{t:.0}");
        out.write(&format!("wigner_t{tag}.csv"), &grid.to_csv())?;
        let dec = wigner::attractor_decomposition(&grid, &w_sas)?;
        let lobes = wigner::find_lobes(&grid, 0.05, 1.0);
        out.write_json(
            &format!("wigner_t{tag}.json"),
            &json!({
                "t_periods": t,
                "grid": spec,
                "cell_area": grid.cell_area,
                "total": grid.total(),
                "min": grid.min(),
                "max_imag": grid.max_imag,
                "quadratures": "X = sqrt(aleph) x, P = p / sqrt(aleph)",
                "decomposition": dec,
                "overlap_p_s": rho.overlap_with(&sas_psi),
                "lobes": lobes,
                "shifted_sas_center": wigner::coherent_center(sas),
                "classical_sas_center": classical_sas,
                "coherent_lobe_fwhm": wigner::coherent_lobe_fwhm(),
            }),
        )?;
        let _ = write!(summary, "; t = {t:.0}: {} lobe(s), P_S = {:.3}", lobes.len(), dec.p_s);
    }
    Ok(summary)
}

fn rate(cli: &Cli, p: &SystemParams, drive: f64, t_transient: f64, out: &mut Output) -> Result<String> {
    let policy = WindowPolicy {
        t_transient,
        ..Default::default()
    };
    let rec = analysis::escape_record(p, drive, cli.model(), &policy, propagate::DEFAULT_RECORD_STRIDE)?;
    out.write("rate.csv", &rec.to_csv())?;
    let fit = analysis::tunneling_rate(&rec, &policy)?;
    out.write_json(
        "rate.json",
        &json!({
            "drive_ratio": drive,
            "gamma_t": fit.gamma_t,
            "window": fit.window,
            "r_squared": fit.r_squared,
            "accepted": fit.accepted,
            "ln_p0": fit.ln_p0,
            "policy": policy,
        }),
    )?;
    Ok(format!(
        "rate: F0/Fc = {drive}, gamma_t = {:.5e} per period, r^2 = {:.5}",
        fit.gamma_t, fit.r_squared
    ))
}

fn scaling(cli: &Cli, p: &SystemParams, drives: &[f64], t_transient: f64, out: &mut Output) -> Result<String> {
    let policy = WindowPolicy {
        t_transient,
        ..Default::default()
    };
    let report = analysis::scaling_fit(p, drives, cli.model(), &policy)?;
    out.write("scaling.csv", &report.to_csv())?;
    let f = &report.fit;
    out.write_json(
        "scaling.json",
        &json!({
            "alpha": f.alpha,
            "alpha_stderr": f.alpha_stderr,
            "c0": f.c0,
            "c1": f.c1,
            "shifted_bifurcation_ratio": report.shifted_bifurcation_ratio,
            "c0_linear": f.c0_linear,
            "c1_linear": f.c1_linear,
            "r_squared_linear": f.r_squared_linear,
            "linear_residuals": f.linear_residuals,
            "runs_p_value": f.runs_p_value,
        }),
    )?;
    Ok(format!(
        "scaling: alpha = {:.4} +- {:.4} over {} drives (runs-test p = {:.3})",
        f.alpha,
        f.alpha_stderr,
        drives.len(),
        f.runs_p_value
    ))
}
