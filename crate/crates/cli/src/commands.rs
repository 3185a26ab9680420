use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use kam_core::diophantine::{excluded_measure_sweep, write_measure_csv, DiophantineSpec};
use kam_core::dynamics::{energy_drift, integrate_symplectic, ExtendedState, IntegrateOptions};
use kam_core::fourier_taylor::Series;
use kam_core::freq_analysis::{extract_frequencies_with, persistence_scan, PersistenceLabel};
use kam_core::hamiltonian::{from_integrable_with, InitOptions, ScaleParams};
use kam_core::kam_engine::{
    build_schedule, iterate, Classification, IterationConfig, ScheduleInit, StallReason, StepConfig,
};
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::config::{Mode, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_EXCLUDED: i32 = 2;
pub const EXIT_STALLED: i32 = 3;

/// What a command produced: the exit code and the module output for the report.
pub struct Outcome {
    pub code: i32,
    pub result: Value,
}

/// Resolved locations for one run.
pub struct RunContext {
    pub config_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl RunContext {
    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::KamRun => "kam-run",
        Mode::Measure => "measure",
        Mode::Simulate => "simulate",
        Mode::Freqs => "freqs",
        Mode::Scan => "scan",
    }
}

/// Artifact file names a mode will write, besides the report.
pub fn artifacts(cfg: &RunConfig, mode: Mode) -> Vec<String> {
    match mode {
        Mode::KamRun => vec![],
        Mode::Measure => vec![cfg.measure.as_ref().and_then(|m| m.csv.clone()).unwrap_or_else(|| "measure.csv".into())],
        Mode::Simulate => {
            vec![cfg.simulate.as_ref().and_then(|m| m.csv.clone()).unwrap_or_else(|| "trajectory.csv".into())]
        }
        Mode::Freqs => {
            vec![cfg.freqs.as_ref().and_then(|m| m.spectra.clone()).unwrap_or_else(|| "spectra.json".into())]
        }
        Mode::Scan => vec![cfg.scan.as_ref().and_then(|m| m.csv.clone()).unwrap_or_else(|| "persistence.csv".into())],
    }
}

/// Creates the output directory and opens every target for writing.
pub fn check_writable(dir: &Path, names: &[String]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    for n in names {
        let p = dir.join(n);
        fs::OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&p)
            .with_context(|| format!("output path {} is not writable", p.display()))?;
    }
    Ok(())
}

pub fn dispatch(cfg: &RunConfig, mode: Mode, ctx: &RunContext) -> Result<Outcome> {
    match mode {
        Mode::KamRun => kam_run(cfg, ctx),
        Mode::Measure => measure(cfg, ctx),
        Mode::Simulate => simulate(cfg, ctx),
        Mode::Freqs => freqs(cfg, ctx),
        Mode::Scan => scan(cfg, ctx),
    }
}

fn scales(cfg: &RunConfig) -> Result<ScaleParams> {
    cfg.scales.as_ref().map(|s| s.params()).ok_or_else(|| anyhow!("config has no `scales` block"))
}

fn kam_run(cfg: &RunConfig, ctx: &RunContext) -> Result<Outcome> {
    let params = scales(cfg)?;
    let mode = cfg.scale_mode();
    let violations = params.validate(mode);
    for v in &violations {
        log::warn!("scale parameter check: {} ({})", v.code, v.message);
    }
    let sys = cfg.system(&ctx.config_dir)?;
    let scaling = params.scaling();
    let h = Series::from_json(sys.integrable.as_ref().ok_or_else(|| anyhow!("system.integrable is required"))?, scaling)
        .context("system.integrable")?;
    let p = match &sys.perturbation {
        Some(js) => Series::from_json(js, scaling).context("system.perturbation")?,
        None => Series::zero(scaling),
    };
    let xi = sys.xi.clone().unwrap_or_else(|| vec![0.0; 3 * params.d]);
    let kam = cfg.kam.clone().unwrap_or_default();
    let ov = cfg.schedule.unwrap_or_default();
    let r0 = ov.r0.unwrap_or(1.0);
    let mut state = from_integrable_with(&h, params.eps, &p, &params, &xi, InitOptions { r0, taylor_cap: kam.taylor_cap })
        .context("building the initial state")?;

    let mut init = ScheduleInit::from_eps(&params, r0);
    init.s0 = ov.s0.unwrap_or(init.s0);
    init.beta0 = ov.beta0.unwrap_or(init.beta0);
    init.gamma0 = ov.gamma0.unwrap_or(init.gamma0);
    init.mu0 = ov.mu0.unwrap_or(init.mu0);
    init.c0 = ov.c0.unwrap_or(init.c0);
    state.s = init.s0;
    state.gamma = init.gamma0;
    state.mu = init.mu0;
    let schedule = build_schedule(&params, init, ov.nu_max.unwrap_or(kam.nu_max + 4).max(kam.nu_max));
    if !schedule.decreasing {
        log::warn!("mu schedule is not decreasing for these parameters");
    }
    let mut step = StepConfig::new(mode, kam.step_mode);
    step.lie_order = kam.lie_order;
    step.taylor_cap = kam.taylor_cap;
    step.newton_tol = kam.newton_tol;
    step.minor_size = kam.minor_size;
    step.drop_tol = kam.drop_tol;
    step.gamma_diagnostic = kam.gamma_diagnostic;
    let icfg = IterationConfig { stop_tol: kam.stop_tol, nu_max: kam.nu_max, step, rebuild_schedule: kam.rebuild_schedule };
    let (report, last) = iterate(&state, &schedule, &icfg);

    let (code, converged, nu, witness) = match &report.classification {
        Classification::Converged { step } => (EXIT_OK, true, *step, Value::Null),
        Classification::Stalled { step, reason: StallReason::NuMax } => (EXIT_OK, false, *step, Value::Null),
        Classification::Excluded { step, k, value, bound } => {
            (EXIT_EXCLUDED, false, *step, json!({ "k": k, "value": value, "bound": bound }))
        }
        Classification::Stalled { step, .. } => (EXIT_STALLED, false, *step, Value::Null),
    };
    log::info!("kam-run finished: {:?}", report.classification);
    Ok(Outcome {
        code,
        result: json!({
            "converged": converged,
            "nu": nu,
            "witness": witness,
            "scale_violations": violations,
            "schedule": {
                "decreasing": schedule.decreasing,
                "init": schedule.init,
                "mu": schedule.mu,
                "gamma": schedule.gamma,
                "k_fast": schedule.k_fast,
                "k_slow": schedule.k_slow,
            },
            "iteration": report,
            "final_state": last.to_json(),
        }),
    })
}

fn measure(cfg: &RunConfig, ctx: &RunContext) -> Result<Outcome> {
    let m = cfg.measure.as_ref().ok_or_else(|| anyhow!("config has no `measure` block"))?;
    if m.domain.is_empty() || m.domain.iter().any(|(lo, hi)| !(lo < hi)) {
        bail!("measure.domain: need at least one interval with lo < hi");
    }
    if m.samples == 0 || m.gammas.is_empty() {
        bail!("measure: samples and gammas must be nonempty");
    }
    m.map.check(m.domain.len())?;
    let tau = m.tau.or(cfg.scales.as_ref().map(|s| s.tau)).ok_or_else(|| anyhow!("measure.tau or scales.tau is required"))?;
    let params = match &cfg.scales {
        Some(s) => s.params(),
        None => ScaleParams::new(1.0, 0.0, 0.0, 1, 1, tau),
    };
    let spec = DiophantineSpec { gamma: m.gammas[0], tau, k_max: m.k_max, scale_mode: cfg.scale_mode(), scales: params };
    let map = m.map.clone();
    let rows = excluded_measure_sweep(&m.domain, |xi| map.apply(xi), &spec, &m.gammas, m.samples, ctx.seed);
    let csv_path = ctx.artifact(&artifacts(cfg, Mode::Measure)[0]);
    write_measure_csv(BufWriter::new(File::create(&csv_path)?), &rows)?;
    Ok(Outcome { code: EXIT_OK, result: json!({ "estimates": rows, "csv": csv_path }) })
}

fn simulate(cfg: &RunConfig, ctx: &RunContext) -> Result<Outcome> {
    let sim = cfg.simulate.as_ref().ok_or_else(|| anyhow!("config has no `simulate` block"))?;
    let chain = cfg.system(&ctx.config_dir)?.chain.ok_or_else(|| anyhow!("system.chain is required"))?;
    let init = ExtendedState::at_rest(sim.x.clone(), sim.p.clone());
    let traj = integrate_symplectic(&chain, &init, sim.dt, sim.t_end, IntegrateOptions { stride: sim.stride, scheme: sim.scheme })
        .context("integration")?;
    let csv_path = ctx.artifact(&artifacts(cfg, Mode::Simulate)[0]);
    traj.write_csv(BufWriter::new(File::create(&csv_path)?))?;
    let last = traj.final_state();
    Ok(Outcome {
        code: EXIT_OK,
        result: json!({
            "samples": traj.states.len(),
            "energy_initial": chain.energy(&traj.states[0]),
            "energy_final": chain.energy(last),
            "energy_drift": energy_drift(&chain, &traj),
            "final_state": last,
            "csv": csv_path,
        }),
    })
}

/// `(dt, per-site x − ip signals)` read from a trajectory CSV.
fn read_trajectory(path: &Path, sites: Option<&[usize]>) -> Result<(f64, Vec<(usize, Vec<Complex64>)>)> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = rd.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let n = (1..).take_while(|i| col(&format!("x{i}")).is_some()).count();
    if n == 0 || col("t").is_none() {
        bail!("{}: expected columns t, x1.., p1..", path.display());
    }
    let chosen: Vec<usize> = match sites {
        Some(s) => s.to_vec(),
        None => (1..=n).collect(),
    };
    let mut cols = Vec::new();
    for &i in &chosen {
        match (col(&format!("x{i}")), col(&format!("p{i}"))) {
            (Some(a), Some(b)) => cols.push((i, a, b)),
            _ => bail!("freqs.sites: site {i} not in {}", path.display()),
        }
    }
    let tcol = col("t").unwrap();
    let mut t = Vec::new();
    let mut sig = vec![Vec::new(); cols.len()];
    for rec in rd.records() {
        let rec = rec?;
        let get = |c: usize| -> Result<f64> { Ok(rec[c].trim().parse::<f64>()?) };
        t.push(get(tcol)?);
        for (s, &(_, a, b)) in sig.iter_mut().zip(&cols) {
            s.push(Complex64::new(get(a)?, -get(b)?));
        }
    }
    if t.len() < 2 {
        bail!("{}: too few rows", path.display());
    }
    let dt = t[1] - t[0];
    Ok((dt, cols.iter().map(|c| c.0).zip(sig).collect()))
}

fn freqs(cfg: &RunConfig, ctx: &RunContext) -> Result<Outcome> {
    let f = cfg.freqs.as_ref().ok_or_else(|| anyhow!("config has no `freqs` block"))?;
    let (dt, signals) = match (&f.trajectory, &f.signal) {
        (Some(p), None) => {
            let full = if p.is_absolute() { p.clone() } else { ctx.config_dir.join(p) };
            read_trajectory(&full, f.sites.as_deref())?
        }
        (None, Some(s)) => {
            if !s.im.is_empty() && s.im.len() != s.re.len() {
                bail!("freqs.signal.im: length differs from re");
            }
            let z = s.re.iter().enumerate().map(|(i, &r)| Complex64::new(r, s.im.get(i).copied().unwrap_or(0.0)));
            (s.dt, vec![(1, z.collect())])
        }
        _ => bail!("freqs: give exactly one of `trajectory` or `signal`"),
    };
    let mut spectra = Vec::new();
    for (site, sig) in &signals {
        let sp = extract_frequencies_with(sig, dt, f.n_freq, f.window).with_context(|| format!("site {site}"))?;
        spectra.push(json!({ "site": site, "dominant": sp.dominant(), "spectrum": sp }));
    }
    let path = ctx.artifact(&artifacts(cfg, Mode::Freqs)[0]);
    serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &spectra)?;
    Ok(Outcome { code: EXIT_OK, result: json!({ "spectra": spectra, "json": path }) })
}

fn scan(cfg: &RunConfig, ctx: &RunContext) -> Result<Outcome> {
    let s = cfg.scan.as_ref().ok_or_else(|| anyhow!("config has no `scan` block"))?;
    let chain = cfg.system(&ctx.config_dir)?.chain.ok_or_else(|| anyhow!("system.chain is required"))?;
    let map = persistence_scan(&chain, &s.grid, &s.eps_list, s.windows, &s.persistence).context("persistence scan")?;
    let path = ctx.artifact(&artifacts(cfg, Mode::Scan)[0]);
    map.write_csv(BufWriter::new(File::create(&path)?))?;
    let summary: Vec<Value> = s
        .eps_list
        .iter()
        .map(|&e| {
            json!({
                "eps": e,
                "median_drift": map.median_drift(e),
                "persistent": map.fraction(e, PersistenceLabel::Persistent),
                "diffusing": map.fraction(e, PersistenceLabel::Diffusing),
                "resonant": map.fraction(e, PersistenceLabel::Resonant),
                "escaped": map.fraction(e, PersistenceLabel::Escaped),
            })
        })
        .collect();
    Ok(Outcome { code: EXIT_OK, result: json!({ "summary": summary, "map": map, "csv": path }) })
}

/// Scale-parameter diagnostics without running anything.
pub fn validate(cfg: &RunConfig) -> Value {
    let mode = cfg.scale_mode();
    let violations = cfg.scales.as_ref().map(|s| s.params().validate(mode)).unwrap_or_default();
    let bounds = cfg.scales.as_ref().map(|s| {
        let p = s.params();
        json!({
            "beta_mixed": p.beta_bound_mixed(),
            "beta_slow": p.beta_bound_slow(),
            "tau": p.tau_bound(),
            "sigma": ScaleParams::sigma_for(p.m),
        })
    });
    json!({ "valid": violations.is_empty(), "scale_mode": mode, "violations": violations, "bounds": bounds })
}
