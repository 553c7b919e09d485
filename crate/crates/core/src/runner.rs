//! Scenario execution and output files.

use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::config::{Config, Scenario, TaskKind};
use crate::constants::to_hz;
use crate::cooling::{
    occupation_approx, solve_steady_state_n, steady_state, sympathetic_rate_modes, DissipationRates,
};
use crate::diagnostics::Warning;
use crate::equilibrium::{
    find_equilibria, two_body_equilibrium, ChainTopology, EquilibriumConfiguration, Layout, SearchSettings, SystemSpec,
};
use crate::floquet::{
    build_time_dependent_system, particle_occupation, screen_configuration, single_particle_stable, FloquetSettings,
};
use crate::linear_system::{dynamical_stability, normal_modes, two_body_couplings, LinearizedSystem};
use crate::trap_model::{compute_mathieu_params, rwa_validity_report, secular_spectrum, Axis};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot build thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Replaces the configuration seed.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointFailure {
    pub index: usize,
    pub value: Option<f64>,
    pub error: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioStatus {
    pub name: String,
    pub task: TaskKind,
    /// `ok`, `partial` or `failed`.
    pub status: String,
    pub output: String,
    pub extra_outputs: Vec<String>,
    pub rows: usize,
    pub failures: Vec<PointFailure>,
    pub warnings: Vec<Warning>,
    /// Human-readable result lines.
    pub summary: Vec<String>,
}

impl ScenarioStatus {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub version: String,
    pub timestamp_unix: u64,
    pub seed: u64,
    pub scenarios: Vec<ScenarioStatus>,
}

impl RunManifest {
    pub fn all_ok(&self) -> bool {
        self.scenarios.iter().all(ScenarioStatus::ok)
    }
}

/// One CSV value.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Bool(bool),
}

impl Cell {
    /// Scientific notation with nine significant digits.
    pub fn render(&self) -> String {
        match self {
            Cell::Num(x) if x.is_nan() => "nan".into(),
            Cell::Num(x) if x.is_infinite() => if *x > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::Num(x) => format!("{x:.8e}"),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.replace([',', '\n', '"'], " "),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Bool(b)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

pub fn render_csv(header: &[String], rows: &[Vec<Cell>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(Cell::render).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Result of one sweep point.
#[derive(Clone, Debug, Default)]
pub struct PointOutput {
    pub rows: Vec<Vec<Cell>>,
    pub warnings: Vec<Warning>,
    pub summary: Vec<String>,
    /// Additional files as `(suffix, header, rows)`.
    pub extra: Vec<(String, Vec<String>, Vec<Vec<Cell>>)>,
}

fn header(task: TaskKind, sweep: Option<&str>) -> Vec<String> {
    let mut h: Vec<String> = Vec::new();
    if let Some(p) = sweep {
        h.push(p.to_string());
    }
    let xyz = |prefix: &str, suffix: &str| -> Vec<String> {
        Axis::ALL.iter().map(|a| format!("{prefix}_{a}{suffix}")).collect()
    };
    match task {
        TaskKind::Frequencies => {
            h.extend(xyz("omega_particle", "_hz"));
            h.extend(xyz("omega_ion", "_hz"));
        }
        TaskKind::Equilibria => {
            h.extend(
                ["configuration", "layout", "topology", "dynamically_stable", "floquet_stable", "residual_n", "hits", "body", "x_m", "y_m", "z_m"]
                    .map(String::from),
            );
        }
        TaskKind::Couplings => {
            h.extend(["layout_axis", "separation_m"].map(String::from));
            h.extend(xyz("g", "_hz"));
            h.extend(xyz("omega_prime_particle", "_hz"));
            h.extend(xyz("omega_prime_ion", "_hz"));
            h.extend(["dynamically_stable", "floquet_stable"].map(String::from));
        }
        TaskKind::SteadyState => {
            h.push("gamma_particle_hz".into());
            h.extend(xyz("n", ""));
            h.extend(xyz("temperature", "_k"));
            h.extend(xyz("n_approx", ""));
            h.extend(xyz("rwa_valid", ""));
        }
        TaskKind::Floquet => {
            h.push("gamma_particle_hz".into());
            for a in Axis::ALL {
                for q in ["purity", "n_eff", "n_secular", "ratio", "max_multiplier"] {
                    h.push(format!("{q}_{a}"));
                }
            }
        }
        TaskKind::NIonSweep => {
            h.extend(
                ["n_ions", "stable_configurations", "topology", "n_ss", "temperature_k", "g1_hz", "nu1_hz", "g_com_hz", "cooling_rate_hz"]
                    .map(String::from),
            );
        }
    }
    h
}

/// The two-body layout along the axis of weakest ion confinement that is
/// dynamically stable, falling back to the weakest axis.
pub fn two_body_layout(spec: &SystemSpec) -> Result<EquilibriumConfiguration, String> {
    let mut axes = Axis::ALL;
    axes.sort_by(|a, b| spec.omega_ion[a.index()].total_cmp(&spec.omega_ion[b.index()]));
    let mut first = None;
    for axis in axes {
        let eq = two_body_equilibrium(spec, axis).map_err(|e| e.to_string())?;
        if eq.dynamically_stable {
            return Ok(eq);
        }
        first.get_or_insert(eq);
    }
    first.ok_or_else(|| "no two-body layout".to_string())
}

fn layout_name(layout: Layout) -> String {
    match layout {
        Layout::OnAxis(a) => format!("on-axis-{a}"),
        Layout::OffAxis => "off-axis".into(),
    }
}

fn topology_name(t: Option<ChainTopology>) -> String {
    match t {
        None => "none".into(),
        Some(ChainTopology::OneSided) => "one-sided".into(),
        Some(ChainTopology::Split { below, above }) => format!("split-{below}-{above}"),
    }
}

fn hz3(w: [f64; 3]) -> Vec<Cell> {
    w.iter().map(|x| Cell::Num(to_hz(*x))).collect()
}

fn build_spec(config: &Config) -> Result<(SystemSpec, Vec<Warning>), String> {
    SystemSpec::new(
        config.trap.clone(),
        config.nanoparticle.clone(),
        config.ion.clone(),
        config.n_ions,
        config.secular_method,
    )
    .map_err(|e| e.to_string())
}

fn search_settings(scenario: &Scenario, n_ions: usize, seed: u64) -> SearchSettings {
    let mut s = SearchSettings::default_for(n_ions);
    if let Some(r) = scenario.restarts {
        s.restarts = if scenario.task == TaskKind::NIonSweep { r * n_ions.max(1) } else { r };
    }
    if let Some(a) = scenario.axis_restricted {
        s.axis_restricted = a;
    }
    if let Some(f) = scenario.floquet_check {
        s.floquet_check = f;
    }
    s.seed = seed;
    s
}

fn task_frequencies(config: &Config) -> Result<PointOutput, String> {
    let (spec, mut warnings) = build_spec(config)?;
    for (label, particle) in [("nanoparticle", &spec.nanoparticle), ("ion", &spec.ion)] {
        let spectrum = secular_spectrum(&spec.trap, particle, config.secular_method).map_err(|e| e.to_string())?;
        for entry in spectrum.entries {
            let p = compute_mathieu_params(&spec.trap, particle, entry.axis).map_err(|e| e.to_string())?;
            let report = rwa_validity_report(&p, &entry, particle.species());
            for c in report.conditions.iter().filter(|c| !c.pass) {
                warnings.push(Warning::new(
                    "rwa",
                    format!("{label} axis {}: {} = {:.3e} is not small", entry.axis, c.name, c.ratio),
                ));
            }
        }
    }
    let mut row = hz3(spec.omega_particle);
    row.extend(hz3(spec.omega_ion));
    let summary = vec![
        format!(
            "nanoparticle secular frequencies (Hz): {:.6e} {:.6e} {:.6e}",
            to_hz(spec.omega_particle[0]),
            to_hz(spec.omega_particle[1]),
            to_hz(spec.omega_particle[2])
        ),
        format!(
            "ion secular frequencies (Hz): {:.6e} {:.6e} {:.6e}",
            to_hz(spec.omega_ion[0]),
            to_hz(spec.omega_ion[1]),
            to_hz(spec.omega_ion[2])
        ),
    ];
    Ok(PointOutput {
        rows: vec![row],
        warnings,
        summary,
        extra: Vec::new(),
    })
}

fn task_equilibria(config: &Config, scenario: &Scenario, seed: u64) -> Result<PointOutput, String> {
    let (spec, mut warnings) = build_spec(config)?;
    let settings = search_settings(scenario, config.n_ions, seed);
    let outcome = find_equilibria(&spec, &settings).map_err(|e| e.to_string())?;
    warnings.extend(outcome.warnings.iter().cloned());
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (i, c) in outcome.configurations.iter().enumerate() {
        let positions = c.positions();
        for (b, r) in positions.iter().enumerate() {
            let body = if b == config.n_ions { "nanoparticle".to_string() } else { format!("ion{b}") };
            rows.push(vec![
                Cell::from(i),
                layout_name(c.layout).into(),
                topology_name(c.topology).into(),
                c.dynamically_stable.into(),
                c.floquet_stable.map_or(Cell::Text("unchecked".into()), Cell::Bool),
                c.residual_norm.into(),
                c.hits.into(),
                body.into(),
                r[0].into(),
                r[1].into(),
                r[2].into(),
            ]);
        }
        summary.push(format!(
            "configuration {i}: {} {} {}",
            layout_name(c.layout),
            topology_name(c.topology),
            if c.is_stable() { "stable" } else { "unstable" }
        ));
    }
    let stable = outcome.stable().len();
    if stable == 0 {
        summary.push(format!("no stable equilibrium found for N = {}", config.n_ions));
    } else {
        summary.push(format!("{stable} stable configuration(s) for N = {}", config.n_ions));
    }
    Ok(PointOutput {
        rows,
        warnings,
        summary,
        extra: Vec::new(),
    })
}

struct TwoBody {
    spec: SystemSpec,
    eq: EquilibriumConfiguration,
    system: LinearizedSystem,
    warnings: Vec<Warning>,
}

fn two_body(config: &Config) -> Result<TwoBody, String> {
    if config.n_ions != 1 {
        return Err(format!("task needs n_ions = 1 (got {})", config.n_ions));
    }
    let (spec, warnings) = build_spec(config)?;
    let eq = two_body_layout(&spec)?;
    let system = LinearizedSystem::from_positions(&eq.positions(), &spec).map_err(|e| e.to_string())?;
    Ok(TwoBody {
        spec,
        eq,
        system,
        warnings,
    })
}

fn task_couplings(config: &Config) -> Result<PointOutput, String> {
    let settings = FloquetSettings::default();
    for particle in [&config.nanoparticle, &config.ion] {
        if !single_particle_stable(&config.trap, particle, &settings).map_err(|e| e.to_string())? {
            let mut row = vec![Cell::from("none"), Cell::Num(f64::NAN)];
            row.extend(std::iter::repeat_n(Cell::Num(f64::NAN), 9));
            row.push(false.into());
            row.push(false.into());
            return Ok(PointOutput {
                rows: vec![row],
                warnings: Vec::new(),
                summary: vec!["single-particle motion is Floquet-unstable".into()],
                extra: Vec::new(),
            });
        }
    }
    let tb = two_body(config)?;
    let g = two_body_couplings(&tb.system).map_err(|e| e.to_string())?;
    let stable = dynamical_stability(&tb.system).stable;
    let floquet = screen_configuration(&tb.spec, &tb.eq.positions()).map_err(|e| e.to_string())?;
    let sep = tb.eq.min_particle_separation();
    let wp = [0, 1, 2].map(|j| tb.system.omega_prime(1, Axis::from_index(j)).unwrap_or(f64::NAN));
    let wi = [0, 1, 2].map(|j| tb.system.omega_prime(0, Axis::from_index(j)).unwrap_or(f64::NAN));
    let axis = tb.system.on_axis().map_or("none".to_string(), |a| a.to_string());
    let mut row = vec![Cell::from(axis.clone()), sep.into()];
    row.extend(hz3(g));
    row.extend(hz3(wp));
    row.extend(hz3(wi));
    row.push(stable.into());
    row.push(floquet.into());
    let summary = vec![format!(
        "layout along {axis}, separation {:.5e} m, g (Hz) {:.4e} {:.4e} {:.4e}, {}",
        sep,
        to_hz(g[0]),
        to_hz(g[1]),
        to_hz(g[2]),
        if stable && floquet { "stable" } else { "unstable" }
    )];
    Ok(PointOutput {
        rows: vec![row],
        warnings: tb.warnings,
        summary,
        extra: Vec::new(),
    })
}

fn task_steady_state(config: &Config) -> Result<PointOutput, String> {
    let tb = two_body(config)?;
    let (rates, mut warnings) =
        DissipationRates::evaluate(&config.dissipation, &tb.system, &tb.spec.nanoparticle).map_err(|e| e.to_string())?;
    let mut all = tb.warnings;
    all.append(&mut warnings);
    let ss = steady_state(&tb.system, &rates).map_err(|e| e.to_string())?;
    let mut row = vec![Cell::Num(to_hz(rates.gamma_particle()))];
    row.extend(ss.axes.iter().map(|a| Cell::Num(a.n_particle)));
    row.extend(ss.axes.iter().map(|a| Cell::Num(a.temperature_particle)));
    for a in &ss.axes {
        match occupation_approx(&a.model) {
            Ok((n, w)) => {
                row.push(n.into());
                all.extend(w.into_iter().map(|w| Warning::new(&w.code, format!("axis {}: {}", a.axis, w.message))));
            }
            Err(e) => {
                row.push(f64::NAN.into());
                all.push(Warning::new("cooling-regime", format!("axis {}: {e}", a.axis)));
            }
        }
    }
    row.extend(rates.rwa_valid.iter().map(|b| Cell::Bool(*b)));
    let summary = ss
        .axes
        .iter()
        .map(|a| {
            format!(
                "axis {}: n = {:.4e}, T = {:.4e} K (gamma_p = 2pi x {:.3e} Hz)",
                a.axis,
                a.n_particle,
                a.temperature_particle,
                to_hz(rates.gamma_particle())
            )
        })
        .collect();
    Ok(PointOutput {
        rows: vec![row],
        warnings: all,
        summary,
        extra: Vec::new(),
    })
}

fn task_floquet(config: &Config, traces: bool) -> Result<PointOutput, String> {
    let tb = two_body(config)?;
    let (rates, mut warnings) =
        DissipationRates::evaluate(&config.dissipation, &tb.system, &tb.spec.nanoparticle).map_err(|e| e.to_string())?;
    let mut all = tb.warnings;
    all.append(&mut warnings);
    let tds = build_time_dependent_system(&tb.system, &tb.spec, Some(&rates)).map_err(|e| e.to_string())?;
    all.extend(tds.warnings.iter().cloned());
    let settings = FloquetSettings::default();
    let p = tb.system.particle();
    let results: Vec<_> = Axis::ALL
        .par_iter()
        .map(|&axis| {
            let mm = particle_occupation(&tds, p, axis, &settings).map_err(|e| format!("axis {axis}: {e}"))?;
            let sec = particle_occupation(&tds.secular(), p, axis, &settings).map_err(|e| format!("axis {axis}: {e}"))?;
            Ok::<_, String>((axis, mm, sec))
        })
        .collect::<Result<_, _>>()?;
    let mut row = vec![Cell::Num(to_hz(rates.gamma_particle()))];
    let mut summary = Vec::new();
    let mut trace_rows = Vec::new();
    for (axis, (mm, sol), (sec, _)) in &results {
        let ratio = mm.n_eff / sec.n_eff;
        row.extend([
            Cell::Num(mm.purity),
            Cell::Num(mm.n_eff),
            Cell::Num(sec.n_eff),
            Cell::Num(ratio),
            Cell::Num(sol.monodromy.max_modulus),
        ]);
        summary.push(format!(
            "axis {axis}: n_eff = {:.4e} with micromotion, {:.4e} secular, ratio {:.4}",
            mm.n_eff, sec.n_eff, ratio
        ));
        if traces {
            let m = sol.system.len();
            let k = sol.system.coords.iter().position(|c| c.is_particle && c.axis == *axis).unwrap_or(0);
            for (i, t) in mm.times.iter().enumerate() {
                let cov = &sol.covariance[i];
                let det = cov[(k, k)] * cov[(m + k, m + k)] - cov[(k, m + k)].powi(2);
                trace_rows.push(vec![
                    Cell::Num(*t),
                    Cell::from(axis.to_string()),
                    Cell::Num(mm.kinetic[i]),
                    Cell::Num(mm.potential[i]),
                    Cell::Num(1.0 / det.sqrt()),
                ]);
            }
        }
    }
    let extra = if traces {
        vec![(
            "traces".to_string(),
            ["t_s", "axis", "kinetic_j", "potential_j", "purity_integrand"].map(String::from).to_vec(),
            trace_rows,
        )]
    } else {
        Vec::new()
    };
    Ok(PointOutput {
        rows: vec![row],
        warnings: all,
        summary,
        extra,
    })
}

fn task_n_ion(config: &Config, scenario: &Scenario, seed: u64) -> Result<PointOutput, String> {
    let n = config.n_ions;
    if n == 0 {
        return Err("n-ion sweep needs at least one ion".into());
    }
    let (spec, mut warnings) = build_spec(config)?;
    let settings = search_settings(scenario, n, seed);
    let outcome = find_equilibria(&spec, &settings).map_err(|e| e.to_string())?;
    warnings.extend(outcome.warnings.iter().cloned());
    let mut best: Option<(f64, &EquilibriumConfiguration, LinearizedSystem, f64, DissipationRates)> = None;
    let stable = outcome.stable();
    for c in &stable {
        if c.layout != Layout::OnAxis(Axis::Z) {
            continue;
        }
        let system = LinearizedSystem::from_positions(&c.positions(), &spec).map_err(|e| e.to_string())?;
        let (rates, _) =
            DissipationRates::evaluate(&config.dissipation, &system, &spec.nanoparticle).map_err(|e| e.to_string())?;
        let ss = solve_steady_state_n(&system, &rates).map_err(|e| e.to_string())?;
        if best.as_ref().is_none_or(|b| ss.n_particle < b.0) {
            best = Some((ss.n_particle, c, system, ss.temperature_particle, rates));
        }
    }
    let Some((n_ss, c, system, temp, rates)) = best else {
        return Ok(PointOutput {
            rows: vec![vec![
                n.into(),
                stable.len().into(),
                "none".into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
            ]],
            warnings,
            summary: vec![format!("N = {n}: no stable equilibrium found")],
            extra: Vec::new(),
        });
    };
    let (g1, nu1, g_com, rate, modes_rows) = if n == 1 {
        let g = two_body_couplings(&system).map_err(|e| e.to_string())?[2];
        let wi = system.omega_prime(0, Axis::Z).map_err(|e| e.to_string())?;
        let row = vec![n.into(), Cell::from(1usize), Cell::Num(to_hz(wi)), Cell::Num(to_hz(g))];
        (g, wi, g.abs(), f64::NAN, vec![row])
    } else {
        let modes = normal_modes(&system).map_err(|e| e.to_string())?;
        let wi = system.omega_prime(0, Axis::Z).map_err(|e| e.to_string())?;
        let rate = match sympathetic_rate_modes(&modes, rates.gamma_dop, wi) {
            Ok((r, w)) => {
                warnings.extend(w);
                r
            }
            Err(e) => {
                warnings.push(Warning::new("cooling-regime", e.to_string()));
                f64::NAN
            }
        };
        let rows = modes
            .nu
            .iter()
            .zip(&modes.g)
            .enumerate()
            .map(|(a, (nu, g))| vec![n.into(), Cell::from(a + 1), Cell::Num(to_hz(*nu)), Cell::Num(to_hz(*g))])
            .collect();
        (modes.g[0], modes.nu[0], modes.com_coupling_squared().sqrt(), rate, rows)
    };
    let row = vec![
        n.into(),
        stable.len().into(),
        topology_name(c.topology).into(),
        n_ss.into(),
        temp.into(),
        Cell::Num(to_hz(g1.abs())),
        Cell::Num(to_hz(nu1)),
        Cell::Num(to_hz(g_com)),
        Cell::Num(to_hz(rate)),
    ];
    Ok(PointOutput {
        rows: vec![row],
        warnings,
        summary: vec![format!(
            "N = {n}: {} stable, n_ss = {n_ss:.4e}, T = {temp:.4e} K, |g1| = 2pi x {:.4e} Hz",
            stable.len(),
            to_hz(g1.abs())
        )],
        extra: vec![(
            "modes".to_string(),
            ["n_ions", "mode", "nu_hz", "g_hz"].map(String::from).to_vec(),
            modes_rows,
        )],
    })
}

fn run_point(config: &Config, scenario: &Scenario, seed: u64) -> Result<PointOutput, String> {
    match scenario.task {
        TaskKind::Frequencies => task_frequencies(config),
        TaskKind::Equilibria => task_equilibria(config, scenario, seed),
        TaskKind::Couplings => task_couplings(config),
        TaskKind::SteadyState => task_steady_state(config),
        TaskKind::Floquet => task_floquet(config, scenario.traces),
        TaskKind::NIonSweep => task_n_ion(config, scenario, seed),
    }
}

fn write(path: &Path, contents: &str) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| RunError::Io {
            path: parent.display().to_string(),
            message: e.to_string(),
        })?;
    }
    fs::write(path, contents).map_err(|e| RunError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn with_suffix(output: &str, suffix: &str) -> String {
    match output.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}_{suffix}.{ext}"),
        None => format!("{output}_{suffix}"),
    }
}

/// Runs one scenario and writes its CSV files. Point failures are recorded
/// and do not stop the remaining points.
pub fn run_scenario(config: &Config, scenario: &Scenario, seed: u64, out_dir: &Path) -> Result<ScenarioStatus, RunError> {
    let mut base = config.clone();
    let mut failures = Vec::new();
    for (k, v) in &scenario.overrides {
        if let Err(e) = base.set_parameter(k, *v) {
            failures.push(PointFailure {
                index: 0,
                value: None,
                error: e.to_string(),
            });
        }
    }
    let values: Vec<Option<f64>> = match &scenario.sweep {
        Some(s) => s.values().into_iter().map(Some).collect(),
        None => vec![None],
    };
    let results: Vec<Result<PointOutput, String>> = if failures.is_empty() {
        values
            .par_iter()
            .map(|v| {
                let mut c = base.clone();
                if let (Some(v), Some(s)) = (v, &scenario.sweep) {
                    c.set_parameter(&s.parameter, *v).map_err(|e| e.to_string())?;
                }
                run_point(&c, scenario, seed)
            })
            .collect()
    } else {
        Vec::new()
    };
    let sweep_name = scenario.sweep.as_ref().map(|s| s.parameter.as_str());
    // The n-ion table already leads with n_ions.
    let sweep_column = sweep_name.filter(|p| !(scenario.task == TaskKind::NIonSweep && *p == "n_ions"));
    let mut rows = Vec::new();
    let mut warnings: Vec<Warning> = Vec::new();
    let mut summary = Vec::new();
    let mut extras: Vec<(String, Vec<String>, Vec<Vec<Cell>>)> = Vec::new();
    for (i, (v, r)) in values.iter().zip(results).enumerate() {
        match r {
            Ok(out) => {
                for mut row in out.rows {
                    if let (Some(v), Some(_)) = (v, sweep_column) {
                        row.insert(0, Cell::Num(*v));
                    }
                    rows.push(row);
                }
                for w in out.warnings {
                    if !warnings.contains(&w) {
                        warnings.push(w);
                    }
                }
                let prefix = v.map(|v| format!("[{} = {v:.4e}] ", sweep_name.unwrap_or(""))).unwrap_or_default();
                summary.extend(out.summary.into_iter().map(|s| format!("{prefix}{s}")));
                for (suffix, h, erows) in out.extra {
                    let erows: Vec<Vec<Cell>> = if scenario.sweep.is_some() && suffix != "modes" {
                        erows
                            .into_iter()
                            .map(|mut r| {
                                r.insert(0, Cell::from(i));
                                r
                            })
                            .collect()
                    } else {
                        erows
                    };
                    match extras.iter_mut().find(|e| e.0 == suffix) {
                        Some(e) => e.2.extend(erows),
                        None => {
                            let mut h = h;
                            if scenario.sweep.is_some() && suffix != "modes" {
                                h.insert(0, "point".into());
                            }
                            extras.push((suffix, h, erows));
                        }
                    }
                }
            }
            Err(error) => failures.push(PointFailure {
                index: i,
                value: *v,
                error,
            }),
        }
    }
    let path = out_dir.join(&scenario.output);
    write(&path, &render_csv(&header(scenario.task, sweep_column), &rows))?;
    let mut extra_outputs = Vec::new();
    for (suffix, h, erows) in extras {
        let name = with_suffix(&scenario.output, &suffix);
        write(&out_dir.join(&name), &render_csv(&h, &erows))?;
        extra_outputs.push(name);
    }
    let status = if failures.is_empty() {
        "ok"
    } else if rows.is_empty() {
        "failed"
    } else {
        "partial"
    };
    Ok(ScenarioStatus {
        name: scenario.name.clone(),
        task: scenario.task,
        status: status.into(),
        output: scenario.output.clone(),
        extra_outputs,
        rows: rows.len(),
        failures,
        warnings,
        summary,
    })
}

/// Runs every scenario and writes CSV files, `manifest.json`, `report.txt`
/// and the normalized configuration `config.toml` into the output directory.
pub fn run_scenarios(config: &Config, options: &RunOptions) -> Result<RunManifest, RunError> {
    let seed = options.seed.unwrap_or(config.seed);
    let run = || -> Result<Vec<ScenarioStatus>, RunError> {
        config
            .scenarios
            .iter()
            .map(|s| run_scenario(config, s, seed, &options.out_dir))
            .collect()
    };
    let scenarios = match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| RunError::ThreadPool(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    let manifest = RunManifest {
        config_digest: config.digest.clone(),
        version: VERSION.to_string(),
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        seed,
        scenarios,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&options.out_dir.join("manifest.json"), &json)?;
    write(&options.out_dir.join("report.txt"), &crate::report::emit_report(&manifest))?;
    write(&options.out_dir.join("config.toml"), &config.to_toml_string())?;
    Ok(manifest)
}

/// Formats a short status line per scenario.
pub fn status_lines(manifest: &RunManifest) -> String {
    let mut s = String::new();
    for sc in &manifest.scenarios {
        let _ = writeln!(s, "{:<40} {:<8} {} rows -> {}", sc.name, sc.status, sc.rows, sc.output);
    }
    s
}
