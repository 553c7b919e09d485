//! Scenario files.
//!
//! A configuration is a TOML document (JSON is accepted too) with the tables
//! `trap`, `nanoparticle`, `ion`, `dissipation`, an optional `run` table and
//! a list of `scenario` tables. Physical quantities are either bare numbers
//! in SI base units (rad/s for rates and frequencies) or strings of the form
//! `"<value> <unit>"`. Frequencies given in Hz are stored as angular
//! frequencies.
//!
//! ```toml
//! n_ions = 1
//!
//! [trap]
//! electrode_distance = ["0.9 mm", "0.9 mm", "1.7 mm"]
//! geometric_factor = [0.93, 0.93, 0.38]
//! u_dc = ["3.2 V", "-3.2 V", "56.5 V"]
//! u_slow = ["80 V", "-80 V", "0 V"]
//! u_fast = ["1350 V", "-1350 V", "0 V"]
//! omega_slow = "7 kHz"
//! omega_fast = "17.5 MHz"
//!
//! [[scenario]]
//! name = "cooling"
//! task = "steady-state"
//! sweep = { parameter = "particle_damping", scale = "log", start = "1e-8 Hz", stop = "1 kHz", points = 50 }
//! ```

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

use crate::cooling::DissipationParams;
use crate::trap_model::{ParticleSpec, SecularMethod, TrapConfiguration};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unit error: {0}")]
    Unit(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

/// Physical dimension of a configuration value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Voltage,
    /// Stored in rad/s.
    Frequency,
    Mass,
    Charge,
    Pressure,
    Temperature,
    Power,
    Dimensionless,
}

impl Dimension {
    fn si_unit(self) -> &'static str {
        match self {
            Dimension::Length => "m",
            Dimension::Voltage => "V",
            Dimension::Frequency => "rad/s",
            Dimension::Mass => "kg",
            Dimension::Charge => "C",
            Dimension::Pressure => "Pa",
            Dimension::Temperature => "K",
            Dimension::Power => "W",
            Dimension::Dimensionless => "",
        }
    }

    fn scale(self, unit: &str) -> Option<f64> {
        let s = match (self, unit) {
            (Dimension::Length, "m") => 1.0,
            (Dimension::Length, "mm") => 1e-3,
            (Dimension::Length, "um" | "µm" | "μm") => 1e-6,
            (Dimension::Length, "nm") => 1e-9,
            (Dimension::Voltage, "V") => 1.0,
            (Dimension::Voltage, "mV") => 1e-3,
            (Dimension::Voltage, "kV") => 1e3,
            (Dimension::Frequency, "rad/s") => 1.0,
            (Dimension::Frequency, "nHz") => 2.0 * PI * 1e-9,
            (Dimension::Frequency, "uHz" | "µHz" | "μHz") => 2.0 * PI * 1e-6,
            (Dimension::Frequency, "mHz") => 2.0 * PI * 1e-3,
            (Dimension::Frequency, "Hz") => 2.0 * PI,
            (Dimension::Frequency, "kHz") => 2.0 * PI * 1e3,
            (Dimension::Frequency, "MHz") => 2.0 * PI * 1e6,
            (Dimension::Frequency, "GHz") => 2.0 * PI * 1e9,
            (Dimension::Mass, "kg") => 1.0,
            (Dimension::Mass, "g") => 1e-3,
            (Dimension::Mass, "u" | "amu") => 1.660_539_066_60e-27,
            (Dimension::Charge, "C") => 1.0,
            (Dimension::Charge, "e") => crate::constants::ELEMENTARY_CHARGE,
            (Dimension::Pressure, "Pa") => 1.0,
            (Dimension::Pressure, "mbar") => 100.0,
            (Dimension::Pressure, "bar") => 1e5,
            (Dimension::Pressure, "Torr") => 101_325.0 / 760.0,
            (Dimension::Temperature, "K") => 1.0,
            (Dimension::Power, "W" | "J/s") => 1.0,
            _ => return None,
        };
        Some(s)
    }
}

/// Parses a number or a `"<value> <unit>"` string into SI units.
pub fn parse_quantity(value: &Value, dim: Dimension, key: &str) -> Result<f64, ConfigError> {
    match value {
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| ConfigError::Schema(format!("{key}: not a finite number"))),
        Value::String(s) => {
            let s = s.trim();
            let (num, unit) = match s.find(|c: char| c.is_whitespace()) {
                Some(i) => (&s[..i], s[i..].trim()),
                None => (s, ""),
            };
            let x: f64 = num
                .parse()
                .map_err(|_| ConfigError::Unit(format!("{key}: cannot parse number in {s:?}")))?;
            if unit.is_empty() {
                return Ok(x);
            }
            let scale = dim
                .scale(unit)
                .ok_or_else(|| ConfigError::Unit(format!("{key}: unit {unit:?} is not valid for a {dim:?} value")))?;
            Ok(x * scale)
        }
        _ => Err(ConfigError::Schema(format!("{key}: expected a number or a quantity string"))),
    }
}

fn format_quantity(x: f64, dim: Dimension) -> String {
    match dim {
        Dimension::Dimensionless => format!("{x:e}"),
        _ => format!("\"{x:e} {}\"", dim.si_unit()),
    }
}

/// Sweep spacing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sweep {
    pub parameter: String,
    pub scale: Scale,
    /// Bounds in SI units of the parameter.
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let n = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                let f = i as f64 / n;
                match self.scale {
                    Scale::Linear => self.start + f * (self.stop - self.start),
                    Scale::Log => (self.start.ln() + f * (self.stop.ln() - self.start.ln())).exp(),
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Frequencies,
    Equilibria,
    Couplings,
    SteadyState,
    Floquet,
    NIonSweep,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Frequencies => "frequencies",
            TaskKind::Equilibria => "equilibria",
            TaskKind::Couplings => "couplings",
            TaskKind::SteadyState => "steady-state",
            TaskKind::Floquet => "floquet",
            TaskKind::NIonSweep => "n-ion-sweep",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            TaskKind::Frequencies,
            TaskKind::Equilibria,
            TaskKind::Couplings,
            TaskKind::SteadyState,
            TaskKind::Floquet,
            TaskKind::NIonSweep,
        ]
        .into_iter()
        .find(|t| t.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub task: TaskKind,
    pub sweep: Option<Sweep>,
    /// Output file name relative to the output directory.
    pub output: String,
    /// Parameter overrides applied before the sweep, in SI units.
    pub overrides: Vec<(String, f64)>,
    /// Restart count for equilibrium searches.
    pub restarts: Option<usize>,
    pub axis_restricted: Option<bool>,
    /// Run the Floquet screen on candidate equilibria (default true).
    pub floquet_check: Option<bool>,
    /// Write per-point periodic traces (floquet task).
    pub traces: bool,
}

/// Fully validated configuration in SI units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Config {
    pub trap: TrapConfiguration,
    pub nanoparticle: ParticleSpec,
    pub ion: ParticleSpec,
    pub n_ions: usize,
    pub secular_method: SecularMethod,
    pub dissipation: DissipationParams,
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
    /// SHA-256 of the key-sorted input document.
    pub digest: String,
}

/// Parameters addressable by sweeps and overrides.
pub const PARAMETERS: &[(&str, Dimension)] = &[
    ("nanoparticle.mass", Dimension::Mass),
    ("nanoparticle.charge", Dimension::Charge),
    ("nanoparticle.radius", Dimension::Length),
    ("nanoparticle.permittivity", Dimension::Dimensionless),
    ("ion.mass", Dimension::Mass),
    ("ion.charge", Dimension::Charge),
    ("n_ions", Dimension::Dimensionless),
    ("trap.omega_slow", Dimension::Frequency),
    ("trap.omega_fast", Dimension::Frequency),
    ("trap.u_dc.x", Dimension::Voltage),
    ("trap.u_dc.y", Dimension::Voltage),
    ("trap.u_dc.z", Dimension::Voltage),
    ("trap.u_slow.x", Dimension::Voltage),
    ("trap.u_slow.y", Dimension::Voltage),
    ("trap.u_fast.x", Dimension::Voltage),
    ("trap.u_fast.y", Dimension::Voltage),
    ("dissipation.temperature", Dimension::Temperature),
    ("dissipation.pressure", Dimension::Pressure),
    ("dissipation.gas_damping", Dimension::Frequency),
    ("dissipation.feedback_damping", Dimension::Frequency),
    ("dissipation.doppler_damping", Dimension::Frequency),
    ("dissipation.doppler_heating_power", Dimension::Power),
    ("dissipation.trap_heating_power", Dimension::Power),
    ("dissipation.zeta", Dimension::Dimensionless),
    ("particle_damping", Dimension::Frequency),
];

pub fn parameter_dimension(name: &str) -> Option<Dimension> {
    PARAMETERS.iter().find(|(n, _)| *n == name).map(|(_, d)| *d)
}

impl Config {
    /// Sets a named parameter (SI units).
    ///
    /// `particle_damping` sets the total nanoparticle damping: feedback
    /// supplies `γ_p - γ_gas`; below the gas rate, feedback is off and the
    /// gas rate itself is set to `γ_p`.
    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<(), ConfigError> {
        fn axis_of(s: &str) -> usize {
            match s {
                "x" => 0,
                "y" => 1,
                _ => 2,
            }
        }
        let d = &mut self.dissipation;
        match name {
            "nanoparticle.mass" => self.nanoparticle.mass = value,
            "nanoparticle.charge" => self.nanoparticle.charge = value,
            "nanoparticle.radius" => self.nanoparticle.radius = value,
            "nanoparticle.permittivity" => self.nanoparticle.permittivity = value,
            "ion.mass" => self.ion.mass = value,
            "ion.charge" => self.ion.charge = value,
            "n_ions" => {
                if !(value >= 0.0 && value.fract() == 0.0) {
                    return Err(ConfigError::Schema(format!("n_ions must be a non-negative integer (got {value})")));
                }
                self.n_ions = value as usize;
            }
            "trap.omega_slow" => self.trap.omega_slow = value,
            "trap.omega_fast" => self.trap.omega_fast = value,
            "dissipation.temperature" => d.temperature = value,
            "dissipation.pressure" => d.pressure = value,
            "dissipation.gas_damping" => d.gas_damping_override = Some(value),
            "dissipation.feedback_damping" => d.feedback_damping = value,
            "dissipation.doppler_damping" => d.doppler_damping = value,
            "dissipation.doppler_heating_power" => d.doppler_heating_power = value,
            "dissipation.trap_heating_power" => d.trap_heating_power = value,
            "dissipation.zeta" => d.zeta = value,
            "particle_damping" => {
                let gas = match d.gas_damping_override {
                    Some(g) => g,
                    None => crate::cooling::gas_damping_rate(&self.nanoparticle, d.temperature, d.pressure)
                        .map_err(|e| ConfigError::Schema(e.to_string()))?,
                };
                if value >= gas {
                    d.feedback_damping = value - gas;
                } else {
                    d.feedback_damping = 0.0;
                    d.gas_damping_override = Some(value);
                }
            }
            other => {
                let parts: Vec<&str> = other.split('.').collect();
                match parts.as_slice() {
                    ["trap", "u_dc", a] => self.trap.u_dc[axis_of(a)] = value,
                    ["trap", "u_slow", a] => self.trap.u_slow[axis_of(a)] = value,
                    ["trap", "u_fast", a] => self.trap.u_fast[axis_of(a)] = value,
                    _ => return Err(ConfigError::Schema(format!("unknown parameter {other:?}"))),
                }
            }
        }
        Ok(())
    }

    /// Re-emits the configuration as TOML with explicit SI units.
    pub fn to_toml_string(&self) -> String {
        let mut s = String::new();
        let arr = |v: &[f64; 3], dim| {
            let parts: Vec<String> = v.iter().map(|x| format_quantity(*x, dim)).collect();
            format!("[{}]", parts.join(", "))
        };
        let method = match self.secular_method {
            SecularMethod::Auto => "auto",
            SecularMethod::NanoparticleLimit => "nanoparticle-limit",
            SecularMethod::IonBranch => "ion-branch",
            SecularMethod::FullQuartic => "full-quartic",
        };
        let _ = writeln!(s, "n_ions = {}", self.n_ions);
        let _ = writeln!(s, "secular_method = \"{method}\"");
        let _ = writeln!(s, "\n[run]\nseed = {}", self.seed);
        let t = &self.trap;
        let _ = writeln!(s, "\n[trap]");
        let _ = writeln!(s, "electrode_distance = {}", arr(&t.electrode_distance, Dimension::Length));
        let _ = writeln!(s, "geometric_factor = {}", arr(&t.geometric_factor, Dimension::Dimensionless));
        let _ = writeln!(s, "u_dc = {}", arr(&t.u_dc, Dimension::Voltage));
        let _ = writeln!(s, "u_slow = {}", arr(&t.u_slow, Dimension::Voltage));
        let _ = writeln!(s, "u_fast = {}", arr(&t.u_fast, Dimension::Voltage));
        let _ = writeln!(s, "omega_slow = {}", format_quantity(t.omega_slow, Dimension::Frequency));
        let _ = writeln!(s, "omega_fast = {}", format_quantity(t.omega_fast, Dimension::Frequency));
        for (name, p) in [("nanoparticle", &self.nanoparticle), ("ion", &self.ion)] {
            let _ = writeln!(s, "\n[{name}]");
            let _ = writeln!(s, "mass = {}", format_quantity(p.mass, Dimension::Mass));
            let _ = writeln!(s, "charge = {}", format_quantity(p.charge, Dimension::Charge));
            let _ = writeln!(s, "radius = {}", format_quantity(p.radius, Dimension::Length));
            let _ = writeln!(s, "permittivity = {}", format_quantity(p.permittivity, Dimension::Dimensionless));
        }
        let d = &self.dissipation;
        let _ = writeln!(s, "\n[dissipation]");
        let _ = writeln!(s, "temperature = {}", format_quantity(d.temperature, Dimension::Temperature));
        let _ = writeln!(s, "pressure = {}", format_quantity(d.pressure, Dimension::Pressure));
        if let Some(g) = d.gas_damping_override {
            let _ = writeln!(s, "gas_damping = {}", format_quantity(g, Dimension::Frequency));
        }
        let _ = writeln!(s, "feedback_damping = {}", format_quantity(d.feedback_damping, Dimension::Frequency));
        let _ = writeln!(s, "doppler_damping = {}", format_quantity(d.doppler_damping, Dimension::Frequency));
        let _ = writeln!(s, "doppler_heating_power = {}", format_quantity(d.doppler_heating_power, Dimension::Power));
        let _ = writeln!(s, "trap_heating_power = {}", format_quantity(d.trap_heating_power, Dimension::Power));
        let _ = writeln!(s, "probe_wavelength = {}", format_quantity(d.probe_wavelength, Dimension::Length));
        let _ = writeln!(s, "feedback_constant = {}", format_quantity(d.feedback_constant, Dimension::Dimensionless));
        let _ = writeln!(s, "zeta = {}", format_quantity(d.zeta, Dimension::Dimensionless));
        for sc in &self.scenarios {
            let _ = writeln!(s, "\n[[scenario]]");
            let _ = writeln!(s, "name = {:?}", sc.name);
            let _ = writeln!(s, "task = \"{}\"", sc.task.name());
            let _ = writeln!(s, "output = {:?}", sc.output);
            if let Some(r) = sc.restarts {
                let _ = writeln!(s, "restarts = {r}");
            }
            if let Some(a) = sc.axis_restricted {
                let _ = writeln!(s, "axis_restricted = {a}");
            }
            if let Some(f) = sc.floquet_check {
                let _ = writeln!(s, "floquet_check = {f}");
            }
            if sc.traces {
                let _ = writeln!(s, "traces = true");
            }
            if let Some(sw) = &sc.sweep {
                let dim = parameter_dimension(&sw.parameter).unwrap_or(Dimension::Dimensionless);
                let scale = match sw.scale {
                    Scale::Linear => "linear",
                    Scale::Log => "log",
                };
                let _ = writeln!(
                    s,
                    "sweep = {{ parameter = {:?}, scale = \"{scale}\", start = {}, stop = {}, points = {} }}",
                    sw.parameter,
                    format_quantity(sw.start, dim),
                    format_quantity(sw.stop, dim),
                    sw.points
                );
            }
            if !sc.overrides.is_empty() {
                let items: Vec<String> = sc
                    .overrides
                    .iter()
                    .map(|(k, v)| {
                        let dim = parameter_dimension(k).unwrap_or(Dimension::Dimensionless);
                        format!("{k:?} = {}", format_quantity(*v, dim))
                    })
                    .collect();
                let _ = writeln!(s, "overrides = {{ {} }}", items.join(", "));
            }
        }
        s
    }
}

/// SHA-256 of the document serialized as key-sorted compact JSON.
pub fn digest(doc: &Value) -> String {
    let canonical = serde_json::to_string(doc).expect("JSON values serialize");
    let hash = Sha256::digest(canonical.as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Parses TOML, or JSON when the text starts with `{`.
pub fn parse_document(text: &str) -> Result<Value, ConfigError> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    } else {
        let table: toml::Table = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ConfigError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        serde_json::to_value(table).map_err(|e| ConfigError::Schema(e.to_string()))
    }
}

struct Table<'a> {
    map: &'a Map<String, Value>,
    path: String,
}

impl<'a> Table<'a> {
    fn new(value: &'a Value, path: &str) -> Result<Self, ConfigError> {
        value
            .as_object()
            .map(|map| Table {
                map,
                path: path.to_string(),
            })
            .ok_or_else(|| ConfigError::Schema(format!("{path}: expected a table")))
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for k in self.map.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(ConfigError::Schema(format!("unknown key {:?}", self.key(k))));
            }
        }
        Ok(())
    }

    fn get(&self, k: &str) -> Option<&'a Value> {
        self.map.get(k)
    }

    fn require(&self, k: &str) -> Result<&'a Value, ConfigError> {
        self.get(k)
            .ok_or_else(|| ConfigError::Schema(format!("missing key {:?}", self.key(k))))
    }

    fn quantity(&self, k: &str, dim: Dimension) -> Result<f64, ConfigError> {
        parse_quantity(self.require(k)?, dim, &self.key(k))
    }

    fn quantity_or(&self, k: &str, dim: Dimension, default: f64) -> Result<f64, ConfigError> {
        match self.get(k) {
            Some(v) => parse_quantity(v, dim, &self.key(k)),
            None => Ok(default),
        }
    }

    fn triple(&self, k: &str, dim: Dimension) -> Result<[f64; 3], ConfigError> {
        let key = self.key(k);
        let arr = self
            .require(k)?
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| ConfigError::Schema(format!("{key}: expected an array of three values")))?;
        let mut out = [0.0; 3];
        for (o, v) in out.iter_mut().zip(arr) {
            *o = parse_quantity(v, dim, &key)?;
        }
        Ok(out)
    }

    fn string(&self, k: &str) -> Result<Option<&'a str>, ConfigError> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(ConfigError::Schema(format!("{}: expected a string", self.key(k)))),
        }
    }

    fn uint(&self, k: &str) -> Result<Option<u64>, ConfigError> {
        match self.get(k) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| ConfigError::Schema(format!("{}: expected a non-negative integer", self.key(k)))),
        }
    }

    fn boolean(&self, k: &str) -> Result<Option<bool>, ConfigError> {
        match self.get(k) {
            None => Ok(None),
            Some(v) => v
                .as_bool()
                .map(Some)
                .ok_or_else(|| ConfigError::Schema(format!("{}: expected a boolean", self.key(k)))),
        }
    }
}

fn particle(t: &Table) -> Result<ParticleSpec, ConfigError> {
    t.check_keys(&["mass", "charge", "radius", "permittivity"])?;
    Ok(ParticleSpec {
        mass: t.quantity("mass", Dimension::Mass)?,
        charge: t.quantity("charge", Dimension::Charge)?,
        radius: t.quantity_or("radius", Dimension::Length, 0.0)?,
        permittivity: t.quantity_or("permittivity", Dimension::Dimensionless, 1.0)?,
    })
}

fn scenario(value: &Value, index: usize) -> Result<Scenario, ConfigError> {
    let t = Table::new(value, &format!("scenario[{index}]"))?;
    t.check_keys(&["name", "task", "sweep", "output", "overrides", "restarts", "axis_restricted", "floquet_check", "traces"])?;
    let name = t.string("name")?.map_or_else(|| format!("scenario{index}"), str::to_string);
    let task_name = t
        .string("task")?
        .ok_or_else(|| ConfigError::Schema(format!("missing key {:?}", t.key("task"))))?;
    let task = TaskKind::parse(task_name)
        .ok_or_else(|| ConfigError::Schema(format!("{}: unknown task {task_name:?}", t.key("task"))))?;
    let sweep = match t.get("sweep") {
        None => None,
        Some(v) => {
            let s = Table::new(v, &t.key("sweep"))?;
            s.check_keys(&["parameter", "scale", "start", "stop", "points"])?;
            let parameter = s
                .string("parameter")?
                .ok_or_else(|| ConfigError::Schema(format!("missing key {:?}", s.key("parameter"))))?
                .to_string();
            let dim = parameter_dimension(&parameter)
                .ok_or_else(|| ConfigError::Schema(format!("{}: unknown parameter {parameter:?}", s.key("parameter"))))?;
            let scale = match s.string("scale")?.unwrap_or("linear") {
                "linear" => Scale::Linear,
                "log" => Scale::Log,
                other => return Err(ConfigError::Schema(format!("{}: unknown scale {other:?}", s.key("scale")))),
            };
            let start = s.quantity("start", dim)?;
            let stop = s.quantity("stop", dim)?;
            let points = s.uint("points")?.unwrap_or(1) as usize;
            if !(start.is_finite() && stop.is_finite()) || start > stop {
                return Err(ConfigError::Schema(format!("{}: bounds must be finite and ordered", s.key("start"))));
            }
            if points == 0 {
                return Err(ConfigError::Schema(format!("{}: at least one point is required", s.key("points"))));
            }
            if scale == Scale::Log && start <= 0.0 {
                return Err(ConfigError::Schema(format!("{}: log sweeps need positive bounds", s.key("start"))));
            }
            Some(Sweep {
                parameter,
                scale,
                start,
                stop,
                points,
            })
        }
    };
    let mut overrides = Vec::new();
    if let Some(v) = t.get("overrides") {
        let o = Table::new(v, &t.key("overrides"))?;
        for (k, v) in o.map {
            let dim = parameter_dimension(k)
                .ok_or_else(|| ConfigError::Schema(format!("{}: unknown parameter", o.key(k))))?;
            overrides.push((k.clone(), parse_quantity(v, dim, &o.key(k))?));
        }
    }
    let output = t.string("output")?.map_or_else(|| format!("{name}.csv"), str::to_string);
    if output.contains("..") || Path::new(&output).is_absolute() {
        return Err(ConfigError::Schema(format!("{}: must be a relative path inside the output directory", t.key("output"))));
    }
    Ok(Scenario {
        name,
        task,
        sweep,
        output,
        overrides,
        restarts: t.uint("restarts")?.map(|r| r as usize),
        axis_restricted: t.boolean("axis_restricted")?,
        floquet_check: t.boolean("floquet_check")?,
        traces: t.boolean("traces")?.unwrap_or(false),
    })
}

/// Validates a parsed document.
pub fn from_document(doc: &Value) -> Result<Config, ConfigError> {
    let root = Table::new(doc, "")?;
    root.check_keys(&["n_ions", "secular_method", "run", "trap", "nanoparticle", "ion", "dissipation", "scenario"])?;
    let t = Table::new(root.require("trap")?, "trap")?;
    t.check_keys(&["electrode_distance", "geometric_factor", "u_dc", "u_slow", "u_fast", "omega_slow", "omega_fast"])?;
    let trap = TrapConfiguration {
        electrode_distance: t.triple("electrode_distance", Dimension::Length)?,
        geometric_factor: t.triple("geometric_factor", Dimension::Dimensionless)?,
        u_dc: t.triple("u_dc", Dimension::Voltage)?,
        u_slow: t.triple("u_slow", Dimension::Voltage)?,
        u_fast: t.triple("u_fast", Dimension::Voltage)?,
        omega_slow: t.quantity("omega_slow", Dimension::Frequency)?,
        omega_fast: t.quantity("omega_fast", Dimension::Frequency)?,
    };
    let nanoparticle = particle(&Table::new(root.require("nanoparticle")?, "nanoparticle")?)?;
    let ion = particle(&Table::new(root.require("ion")?, "ion")?)?;
    let d = Table::new(root.require("dissipation")?, "dissipation")?;
    d.check_keys(&[
        "temperature",
        "pressure",
        "gas_damping",
        "feedback_damping",
        "doppler_damping",
        "doppler_heating_power",
        "trap_heating_power",
        "probe_wavelength",
        "feedback_constant",
        "zeta",
    ])?;
    let dissipation = DissipationParams {
        temperature: d.quantity("temperature", Dimension::Temperature)?,
        pressure: d.quantity("pressure", Dimension::Pressure)?,
        gas_damping_override: match d.get("gas_damping") {
            Some(v) => Some(parse_quantity(v, Dimension::Frequency, "dissipation.gas_damping")?),
            None => None,
        },
        feedback_damping: d.quantity_or("feedback_damping", Dimension::Frequency, 0.0)?,
        doppler_damping: d.quantity("doppler_damping", Dimension::Frequency)?,
        doppler_heating_power: d.quantity("doppler_heating_power", Dimension::Power)?,
        trap_heating_power: d.quantity_or("trap_heating_power", Dimension::Power, 0.0)?,
        probe_wavelength: d.quantity_or("probe_wavelength", Dimension::Length, 780e-9)?,
        feedback_constant: d.quantity_or("feedback_constant", Dimension::Dimensionless, 1.57e-6)?,
        zeta: d.quantity_or("zeta", Dimension::Dimensionless, 7.0)?,
    };
    let secular_method = match root.string("secular_method")?.unwrap_or("auto") {
        "auto" => SecularMethod::Auto,
        "nanoparticle-limit" => SecularMethod::NanoparticleLimit,
        "ion-branch" => SecularMethod::IonBranch,
        "full-quartic" => SecularMethod::FullQuartic,
        other => return Err(ConfigError::Schema(format!("secular_method: unknown method {other:?}"))),
    };
    let mut seed = 0;
    if let Some(v) = root.get("run") {
        let r = Table::new(v, "run")?;
        r.check_keys(&["seed"])?;
        seed = r.uint("seed")?.unwrap_or(0);
    }
    let scenarios = match root.get("scenario") {
        None => Vec::new(),
        Some(Value::Array(items)) => items.iter().enumerate().map(|(i, v)| scenario(v, i)).collect::<Result<_, _>>()?,
        Some(_) => return Err(ConfigError::Schema("scenario: expected an array of tables".into())),
    };
    let config = Config {
        trap,
        nanoparticle,
        ion,
        n_ions: root.uint("n_ions")?.unwrap_or(1) as usize,
        secular_method,
        dissipation,
        seed,
        scenarios,
        digest: digest(doc),
    };
    config.trap.validate().map_err(|e| ConfigError::Schema(format!("trap: {e}")))?;
    config.nanoparticle.validate().map_err(|e| ConfigError::Schema(format!("nanoparticle: {e}")))?;
    config.ion.validate().map_err(|e| ConfigError::Schema(format!("ion: {e}")))?;
    config
        .dissipation
        .validate()
        .map_err(|e| ConfigError::Schema(format!("dissipation: {e}")))?;
    Ok(config)
}

pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    from_document(&parse_document(text)?)
}

pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

/// Bundled presets as `(name, TOML text)`.
pub const PRESETS: &[(&str, &str)] = &[
    ("table1", include_str!("../presets/table1.toml")),
    ("fig2_sweep", include_str!("../presets/fig2_sweep.toml")),
    ("fig3_sweep", include_str!("../presets/fig3_sweep.toml")),
    ("fig4_micromotion", include_str!("../presets/fig4_micromotion.toml")),
    ("fig5_nion", include_str!("../presets/fig5_nion.toml")),
];

pub fn preset(name: &str) -> Result<Config, ConfigError> {
    let name = name.trim_end_matches(".toml").trim_end_matches(".cfg");
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))
        .and_then(|(_, text)| parse_config(text))
}
