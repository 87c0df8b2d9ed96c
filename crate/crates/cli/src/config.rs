use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, ValueEnum};
use sha2::{Digest, Sha256};
use unravel_core::benchmark::{Example, DEFAULT_GAMMA_DT, DEFAULT_RECORD_NODES, DEFAULT_STATES};
use unravel_core::validators::{Condition, Method, DEFAULT_GRID};
use unravel_core::MapKind;

use crate::CliError;

pub const SEED_ENV: &str = "UNRAVEL_SEED";

#[derive(Parser, Debug)]
#[command(name = "unravel", version, about = "Validate and benchmark finite-step measurement maps")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Order-of-accuracy matrix with expected orders
    Validate,
    /// Complete positivity of the averaged maps and the averaged SME
    CpCheck,
    /// Raw defects over the step grid
    OrderScan,
    /// Haar-averaged single-step trace distances
    TraceDistance,
    /// One trajectory, or an ensemble mean
    Trajectory,
    /// Trace-distance prefactors against their reference values
    Table2,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::CpCheck => "cp-check",
            Command::OrderScan => "order-scan",
            Command::TraceDistance => "trace-distance",
            Command::Trajectory => "trajectory",
            Command::Table2 => "table2",
        }
    }
}

/// Every option may also be set as `key = value` in the config file, using
/// the long flag name as the key. Flags win over the file.
#[derive(Args, Debug, Default)]
pub struct Options {
    /// Flat key-value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated map kinds
    #[arg(long, alias = "kind")]
    pub kinds: Option<String>,
    /// Comma-separated conditions (B, C1, C2, C3)
    #[arg(long)]
    pub conditions: Option<String>,
    /// z or flu; selects the Lindblad operator
    #[arg(long)]
    pub example: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    /// γΔt values for the scaling checks
    #[arg(long)]
    pub dt_grid: Option<String>,
    /// γΔt values for benchmarks; the first one sets the trajectory step
    #[arg(long)]
    pub gamma_dt: Option<String>,
    /// Haar states per estimate
    #[arg(long)]
    pub states: Option<String>,
    /// Record draws per Haar state
    #[arg(long)]
    pub record_nodes: Option<String>,
    #[arg(long)]
    pub steps: Option<String>,
    /// Trajectories in an ensemble; 1 prints the trajectory itself
    #[arg(long)]
    pub trajectories: Option<String>,
    /// I or II
    #[arg(long)]
    pub method: Option<String>,
    /// Initial state: e, g, plus, minus or mixed
    #[arg(long)]
    pub initial: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub threads: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// csv or json
    #[arg(long)]
    pub format: Option<String>,
}

const KEYS: [&str; 16] = [
    "kinds",
    "conditions",
    "example",
    "gamma",
    "dt-grid",
    "gamma-dt",
    "states",
    "record-nodes",
    "steps",
    "trajectories",
    "method",
    "initial",
    "seed",
    "threads",
    "out",
    "format",
];

impl Options {
    fn flags(&self) -> BTreeMap<&'static str, String> {
        let values = [
            &self.kinds,
            &self.conditions,
            &self.example,
            &self.gamma,
            &self.dt_grid,
            &self.gamma_dt,
            &self.states,
            &self.record_nodes,
            &self.steps,
            &self.trajectories,
            &self.method,
            &self.initial,
            &self.seed,
            &self.threads,
            &self.out,
            &self.format,
        ];
        KEYS.iter()
            .zip(values)
            .filter_map(|(k, v)| v.clone().map(|v| (*k, v)))
            .collect()
    }
}

/// Parses `key = value` lines; `#` and `;` start comments and `[section]`
/// headers are ignored.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<&'static str, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
        let key = key.trim().to_ascii_lowercase().replace('_', "-");
        let known = KEYS
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| CliError::Config(format!("line {}: unknown key `{key}`", n + 1)))?;
        out.insert(*known, value.trim().to_string());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Initial {
    Excited,
    Ground,
    Plus,
    Minus,
    Mixed,
}

impl FromStr for Initial {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "e" | "excited" => Ok(Initial::Excited),
            "g" | "ground" => Ok(Initial::Ground),
            "plus" | "+" => Ok(Initial::Plus),
            "minus" | "-" => Ok(Initial::Minus),
            "mixed" => Ok(Initial::Mixed),
            other => Err(CliError::Config(format!("unknown initial state `{other}`"))),
        }
    }
}

impl fmt::Display for Initial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Initial::Excited => "e",
            Initial::Ground => "g",
            Initial::Plus => "plus",
            Initial::Minus => "minus",
            Initial::Mixed => "mixed",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub kinds: Vec<MapKind>,
    pub conditions: Vec<Condition>,
    pub examples: Vec<Example>,
    pub gamma: f64,
    pub dt_grid: Vec<f64>,
    pub gamma_dt: Vec<f64>,
    pub states: usize,
    pub record_nodes: usize,
    pub steps: usize,
    pub trajectories: usize,
    pub method: Method,
    pub initial: Initial,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Format,
}

fn list<T>(raw: &str, parse: impl Fn(&str) -> Result<T, CliError>) -> Result<Vec<T>, CliError> {
    let items = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect::<Result<Vec<_>, _>>()?;
    if items.is_empty() {
        return Err(CliError::Config(format!("empty list `{raw}`")));
    }
    Ok(items)
}

fn positive_f64(key: &str, raw: &str) -> Result<f64, CliError> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(CliError::Config(format!("{key}: `{raw}` is not a positive number"))),
    }
}

fn count(key: &str, raw: &str, min: usize) -> Result<usize, CliError> {
    match raw.trim().parse::<usize>() {
        Ok(v) if v >= min => Ok(v),
        _ => Err(CliError::Config(format!("{key}: `{raw}` is not an integer ≥ {min}"))),
    }
}

fn core<T>(r: unravel_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Config(e.to_string()))
}

impl RunConfig {
    /// Merges the config file, the flags and the seed environment variable.
    pub fn resolve(cli: &Cli, env_seed: Option<String>) -> Result<Self, CliError> {
        let mut settings = match &cli.options.config {
            Some(path) => parse_config_file(&read(path)?)?,
            None => BTreeMap::new(),
        };
        settings.extend(cli.options.flags());
        if !settings.contains_key("seed") {
            if let Some(seed) = env_seed {
                settings.insert("seed", seed);
            }
        }
        Self::from_settings(cli.command, &settings)
    }

    pub fn from_settings(command: Command, s: &BTreeMap<&'static str, String>) -> Result<Self, CliError> {
        let get = |k: &str| s.get(k).map(String::as_str);

        let seed = get("seed")
            .ok_or_else(|| CliError::Config(format!("no seed given (use --seed, the config file or {SEED_ENV})")))?;
        let seed = seed
            .trim()
            .parse::<u64>()
            .map_err(|_| CliError::Config(format!("seed: `{seed}` is not an unsigned integer")))?;

        let default_kinds = match command {
            Command::Trajectory => "w".to_string(),
            _ => MapKind::APPROXIMATE.map(|k| k.to_string()).join(","),
        };
        let kinds = list(get("kinds").unwrap_or(&default_kinds), |k| core(k.parse()))?;
        let conditions = list(get("conditions").unwrap_or("B,C1,C2,C3"), |c| core(c.parse()))?;
        let examples = match get("example") {
            Some(raw) => list(raw, |e| core(e.parse()))?,
            None => match command {
                Command::TraceDistance | Command::Table2 => vec![Example::ZMeasurement, Example::Fluorescence],
                _ => vec![Example::Fluorescence],
            },
        };
        let gamma = get("gamma").map_or(Ok(1.0), |g| positive_f64("gamma", g))?;
        let grid = |key: &str, default: &[f64]| -> Result<Vec<f64>, CliError> {
            match get(key) {
                Some(raw) => list(raw, |v| positive_f64(key, v)),
                None => Ok(default.to_vec()),
            }
        };
        let dt_grid = grid("dt-grid", &DEFAULT_GRID)?;
        let gamma_dt = grid("gamma-dt", &DEFAULT_GAMMA_DT)?;
        let states = get("states").map_or(Ok(DEFAULT_STATES), |v| count("states", v, 1))?;
        let record_nodes = get("record-nodes").map_or(Ok(DEFAULT_RECORD_NODES), |v| count("record-nodes", v, 1))?;
        let steps = get("steps").map_or(Ok(10), |v| count("steps", v, 0))?;
        let trajectories = get("trajectories").map_or(Ok(1), |v| count("trajectories", v, 1))?;
        let method = core(get("method").unwrap_or("I").parse())?;
        let initial = get("initial").unwrap_or("plus").parse()?;
        let threads = get("threads").map(|v| count("threads", v, 1)).transpose()?;
        let out = get("out").map(PathBuf::from);
        let format = match get("format").unwrap_or("csv").trim().to_ascii_lowercase().as_str() {
            "csv" => Format::Csv,
            "json" => Format::Json,
            other => return Err(CliError::Config(format!("unknown format `{other}`"))),
        };
        if command == Command::Trajectory && kinds.len() != 1 {
            return Err(CliError::Config("trajectory takes exactly one kind".into()));
        }
        Ok(Self {
            command,
            kinds,
            conditions,
            examples,
            gamma,
            dt_grid,
            gamma_dt,
            states,
            record_nodes,
            steps,
            trajectories,
            method,
            initial,
            seed,
            threads,
            out,
            format,
        })
    }

    /// Hash of every setting that affects the results; thread count, output
    /// path and format are excluded.
    pub fn hash(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        let canonical = format!(
            "command={}\nkinds={}\nconditions={}\nexamples={}\ngamma={:e}\ndt-grid={}\ngamma-dt={}\nstates={}\nrecord-nodes={}\nsteps={}\ntrajectories={}\nmethod={}\ninitial={}\nseed={}\n",
            self.command.name(),
            self.kinds.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
            self.conditions.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
            self.examples.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(","),
            self.gamma,
            join(&self.dt_grid),
            join(&self.gamma_dt),
            self.states,
            self.record_nodes,
            self.steps,
            self.trajectories,
            self.method,
            self.initial,
            self.seed,
        );
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
