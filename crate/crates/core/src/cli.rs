//! Command-line front end.
//!
//! Parses flags into a [`RunSpec`], runs it and writes one table as CSV or
//! JSON. Every row carries the config hash, the grid parameters and the
//! library version, so emitted files are self-describing.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::operators::{EvalOptions, ModelConfig, Validation, DEFAULT_TARGET_EPS};
use crate::pearcey::{asymptotic, envelope, pearcey_p, pearcey_q, Branch};
use crate::quadrature::{build_contours, discretize, ContourSpec, Grid, GridParams};
use crate::rhp::Gamma1Record;
use crate::verify::{
    check_asymptotics, converges_until_noise, occupancy_table, FdScheme, OccupancyOptions,
    ResidualReport, Verifier,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit status of a run.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_PRECISION: i32 = 3;

/// s-values used by the asymptotic suite.
pub const ASYMPTOTIC_S: [f64; 3] = [4.0, 6.0, 8.0];

/// Room around the requested (s, τ) for finite-difference stencils.
const GRID_MARGIN: f64 = 0.6;

#[derive(Parser, Debug)]
#[command(
    name = "pearcey-lab",
    version,
    about = "Pearcey generating function and Riemann-Hilbert checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArg,

    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Subcommand, Debug, Clone)]
pub enum CommandArg {
    /// Tabulate Q, P, their first three s-derivatives and the large-s asymptotics.
    Special,
    /// Tabulate F and log F.
    Genfun,
    /// Emit δ, p, q and Δ.
    Gamma,
    /// Run identity checks; exits 1 if any fails.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
    /// Joint occupancy probabilities from Cauchy circles in k.
    Occupancy {
        /// Highest occupancy number per interval.
        #[arg(long, default_value_t = 12)]
        m_max: usize,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long, default_value_t = 32)]
        circle_nodes: usize,
    },
    /// Tabulate F, δ, pᵀq and the reduced-KP residual over an (s, τ) grid.
    Scan,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Ode3,
    Heat,
    Pde,
    Tw,
    Delta,
    #[value(name = "tau-id")]
    TauId,
    Asym,
    All,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Model configuration (JSON with keys a, k, tau, s). Defaults to
    /// a = (−1, 1), k = (0, 0.5, 0), τ = 1, s = 0.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// s values as lo:hi:n.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub s_grid: Option<Range>,
    /// τ values as lo:hi:n.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tau_grid: Option<Range>,
    /// Output file; stdout if absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format; inferred from the --out extension, else CSV
    /// (JSON for `gamma`).
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Uniform panels per ray beyond the unit disc.
    #[arg(long, global = true)]
    pub panels: Option<usize>,
    #[arg(long, global = true)]
    pub nodes_per_panel: Option<usize>,
    /// Contour truncation radius.
    #[arg(long, global = true)]
    pub truncation: Option<f64>,
    /// Smallest graded panel near the origin.
    #[arg(long, global = true)]
    pub min_panel: Option<f64>,
    /// s finite-difference step; the τ step is twice this, capped at 0.1.
    #[arg(long, global = true)]
    pub fd_step: Option<f64>,
    /// Evaluate with the SigmaPlus rays reversed.
    #[arg(long, global = true)]
    pub branch_flip: bool,
    /// Accept configurations with k_j = k_{j+1}.
    #[arg(long, global = true)]
    pub allow_degenerate: bool,
}

/// Arithmetic range `lo:hi:n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Range {
    pub fn single(x: f64) -> Self {
        Range { lo: x, hi: x, n: 1 }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let h = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n)
            .map(|i| {
                if i + 1 == self.n {
                    self.hi
                } else {
                    self.lo + i as f64 * h
                }
            })
            .collect()
    }
}

impl FromStr for Range {
    type Err = String;

    fn from_str(text: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected lo:hi:n, got `{text}`"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
        let (lo, hi) = (num(parts[0])?, num(parts[1])?);
        let n: usize = parts[2]
            .trim()
            .parse()
            .map_err(|e| format!("`{}`: {e}", parts[2]))?;
        if !(lo.is_finite() && hi.is_finite()) {
            return Err("range bounds must be finite".into());
        }
        if n == 0 {
            return Err("range must have at least one point".into());
        }
        if hi < lo || (n == 1 && hi != lo) {
            return Err(format!("empty range `{text}`"));
        }
        Ok(Range { lo, hi, n })
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.n)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GridOverrides {
    pub panels: Option<usize>,
    pub nodes_per_panel: Option<usize>,
    pub truncation: Option<f64>,
    pub min_panel: Option<f64>,
}

impl GridOverrides {
    pub fn apply(&self, spec: &mut ContourSpec) {
        if let Some(p) = self.panels {
            spec.panels_per_ray = p;
        }
        if let Some(n) = self.nodes_per_panel {
            spec.nodes_per_panel = n;
        }
        if let Some(r) = self.truncation {
            spec.set_truncation(r);
        }
        if let Some(m) = self.min_panel {
            spec.min_panel = m;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Special,
    Genfun,
    Gamma,
    Verify(Suite),
    Occupancy { m_max: usize },
    Scan,
}

/// Everything a run needs, after parsing and config loading.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub command: Command,
    pub config: ModelConfig,
    pub grid: GridOverrides,
    pub s_grid: Option<Range>,
    pub tau_grid: Option<Range>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub fd_step: Option<f64>,
    pub options: EvalOptions,
    pub occupancy: OccupancyOptions,
}

/// Columnar result of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Value>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    fn with_meta(mut self, meta: &[(&str, Value)]) -> Self {
        for (k, _) in meta {
            self.columns.push(k.to_string());
        }
        for row in &mut self.rows {
            row.extend(meta.iter().map(|(_, v)| v.clone()));
        }
        self
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(csv_cell)).map_err(io)?;
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let obj: Map<String, Value> = self
                    .columns
                    .iter()
                    .cloned()
                    .zip(r.iter().cloned())
                    .collect();
                Value::Object(obj)
            })
            .collect();
        let mut bytes = serde_json::to_vec_pretty(&rows)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        other => other.to_string(),
    }
}

fn num(x: f64) -> Value {
    // NaN and ±inf become null
    json!(x)
}

/// Outcome of [`run`]: the table plus whether every check passed.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub table: Table,
    pub all_pass: bool,
}

fn grid_meta(config_hash: &str, p: &GridParams) -> Vec<(&'static str, Value)> {
    vec![
        ("config_hash", json!(config_hash)),
        ("truncation", num(p.truncation)),
        ("panels", json!(p.panels_per_ray)),
        ("nodes_per_panel", json!(p.nodes_per_panel)),
        ("grid_nodes", json!(p.nodes)),
        ("version", json!(VERSION)),
    ]
}

fn make_grid(tau_max: f64, s_max: f64, overrides: &GridOverrides, flip: bool) -> Result<Grid> {
    let mut spec = build_contours(tau_max, s_max, DEFAULT_TARGET_EPS)?;
    overrides.apply(&mut spec);
    if flip {
        spec.flip(crate::quadrature::ContourTag::SigmaPlus);
    }
    discretize(&spec)
}

impl RunSpec {
    fn s_values(&self) -> Vec<f64> {
        self.s_grid.unwrap_or(Range::single(self.config.s)).values()
    }

    fn tau_values(&self) -> Vec<f64> {
        self.tau_grid
            .unwrap_or(Range::single(self.config.tau))
            .values()
    }

    fn points(&self) -> Vec<(f64, f64)> {
        let taus = self.tau_values();
        let mut pts = Vec::new();
        for &t in &taus {
            for &s in &self.s_values() {
                pts.push((s, t));
            }
        }
        pts
    }

    fn model_grid(&self, margin: f64) -> Result<Grid> {
        let tau_max = self.tau_values().iter().fold(0.0f64, |m, t| m.max(t.abs()));
        let s_max = self
            .s_values()
            .iter()
            .map(|&s| self.config.with_s(s).max_shift())
            .fold(0.0, f64::max);
        // the branch flip acts through the kernel parameters, not the grid
        make_grid(tau_max + margin, s_max + margin, &self.grid, false)
    }

    fn quartic_scheme(&self) -> FdScheme {
        let sc = FdScheme::s_default(4);
        match self.fd_step {
            Some(h) => sc.with_step(h),
            None => sc,
        }
    }

    fn schemes(&self) -> Result<(FdScheme, FdScheme)> {
        let (mut ss, mut st) = (FdScheme::s_default(1), FdScheme::tau_default(1));
        if let Some(h) = self.fd_step {
            ss.step = h;
            st.step = (2.0 * h).min(0.1);
        }
        ss.validate()?;
        st.validate()?;
        Ok((ss, st))
    }
}

/// Executes a parsed run.
pub fn run(spec: &RunSpec) -> Result<RunOutput> {
    if !matches!(spec.command, Command::Special) {
        spec.config.validate(spec.options.validation)?;
    }
    match spec.command {
        Command::Special => run_special(spec),
        Command::Genfun => run_genfun(spec),
        Command::Gamma => run_gamma(spec),
        Command::Verify(suite) => run_verify(spec, suite),
        Command::Occupancy { m_max } => run_occupancy(spec, m_max),
        Command::Scan => run_scan(spec),
    }
}

fn run_special(spec: &RunSpec) -> Result<RunOutput> {
    let s_vals = spec
        .s_grid
        .unwrap_or(Range {
            lo: -5.0,
            hi: 5.0,
            n: 41,
        })
        .values();
    let t_vals = spec.tau_grid.unwrap_or(Range::single(0.0)).values();
    let s_max = s_vals.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let t_max = t_vals.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let grid = make_grid(t_max, s_max, &spec.grid, false)?;
    let mut table = Table::new(&[
        "s",
        "tau",
        "Q",
        "Q_s",
        "Q_ss",
        "Q_sss",
        "P",
        "P_s",
        "P_ss",
        "P_sss",
        "Q_asym",
        "P_asym",
        "envelope_Q",
        "envelope_P",
    ]);
    for &t in &t_vals {
        for &s in &s_vals {
            let q = pearcey_q(s, t, &grid, 3)?;
            let p = pearcey_p(s, t, &grid, 3)?;
            let opt = |r: Result<f64>| r.map(num).unwrap_or(Value::Null);
            let mut row = vec![num(s), num(t)];
            row.extend((0..4).map(|d| num(q.value(d))));
            row.extend((0..4).map(|d| num(p.value(d))));
            row.push(opt(asymptotic(s, t, Branch::Q)));
            row.push(opt(asymptotic(s, t, Branch::P)));
            row.push(opt(envelope(s, t, Branch::Q)));
            row.push(opt(envelope(s, t, Branch::P)));
            table.push(row);
        }
    }
    let mut meta = grid_meta("", &grid.params());
    meta.remove(0);
    Ok(RunOutput {
        table: table.with_meta(&meta),
        all_pass: true,
    })
}

fn run_genfun(spec: &RunSpec) -> Result<RunOutput> {
    let grid = Arc::new(spec.model_grid(0.0)?);
    let v = Verifier::new(spec.config.clone(), grid.clone(), spec.options)?;
    let pts = spec.points();
    v.prefetch(&pts)?;
    let mut table = Table::new(&["s", "tau", "F", "log_F"]);
    for (s, t) in pts {
        let st = v.state(s, t)?;
        table.push(vec![
            num(s),
            num(t),
            num(st.det.value),
            num(st.det.log_value),
        ]);
    }
    let meta = grid_meta(&spec.config.config_hash(), &grid.params());
    Ok(RunOutput {
        table: table.with_meta(&meta),
        all_pass: true,
    })
}

fn run_gamma(spec: &RunSpec) -> Result<RunOutput> {
    let grid = Arc::new(spec.model_grid(0.0)?);
    let v = Verifier::new(spec.config.clone(), grid.clone(), spec.options)?;
    let pts = spec.points();
    v.prefetch(&pts)?;
    let mut table = Table::new(&["s", "tau", "delta", "p", "q", "Delta", "trace_residual"]);
    for (s, t) in pts {
        let st = v.state(s, t)?;
        let rec = serde_json::to_value(Gamma1Record::from(&st.gamma1))?;
        let field = |k: &str| rec.get(k).cloned().unwrap_or(Value::Null);
        table.push(vec![
            num(s),
            num(t),
            field("delta"),
            field("p"),
            field("q"),
            field("Delta"),
            field("trace_residual"),
        ]);
    }
    let meta = grid_meta(&spec.config.config_hash(), &grid.params());
    Ok(RunOutput {
        table: table.with_meta(&meta),
        all_pass: true,
    })
}

fn report_table(reports: &[ResidualReport]) -> Table {
    let mut table = Table::new(&[
        "identity",
        "s",
        "tau",
        "residual",
        "scale",
        "relative",
        "tolerance",
        "pass",
    ]);
    for r in reports {
        table.push(vec![
            json!(r.identity),
            num(r.s),
            num(r.tau),
            num(r.residual),
            num(r.scale),
            num(r.relative),
            num(r.tolerance),
            json!(r.pass),
        ]);
    }
    table
}

/// Steps of the ODE3 convergence study.
pub const ODE3_STUDY_STEPS: [f64; 3] = [0.1, 0.05, 0.025];

fn run_verify(spec: &RunSpec, suite: Suite) -> Result<RunOutput> {
    let grid = Arc::new(spec.model_grid(GRID_MARGIN)?);
    let v = Verifier::new(spec.config.clone(), grid.clone(), spec.options)?;
    let (ss, st) = spec.schemes()?;
    let wide = FdScheme { width: 7, ..ss };
    let want = |x: Suite| suite == Suite::All || suite == x;
    let mut reports = Vec::new();
    if want(Suite::Delta) {
        reports.push(v.check_logf_delta(&ss)?);
        reports.push(v.check_delta_s(&ss)?);
    }
    if want(Suite::Tw) {
        reports.push(v.check_tw_formula(&ss)?);
    }
    if want(Suite::Ode3) {
        reports.extend(v.check_ode3(&wide)?);
        let study = v.ode3_step_study(7, &ODE3_STUDY_STEPS)?;
        let worst = study
            .windows(2)
            .map(|w| (w[1].p_relative / w[0].p_relative).max(w[1].q_relative / w[0].q_relative))
            .fold(0.0, f64::max);
        let hash = spec.config.config_hash();
        let mut rep = ResidualReport::new(
            "ode3-convergence",
            (spec.config.s, spec.config.tau, &hash),
            worst,
            1.0,
            0.3,
        );
        rep.pass = converges_until_noise(&study, 0.3, 1.0);
        reports.push(rep);
    }
    if want(Suite::Heat) {
        reports.extend(v.check_heat(&ss, &st)?);
    }
    if want(Suite::Pde) {
        reports.push(v.check_pde(&spec.quartic_scheme(), &st)?);
    }
    if want(Suite::TauId) {
        reports.push(v.check_tau_identity(&ss, &st)?);
    }
    if want(Suite::Asym) {
        let shift = spec
            .config
            .a
            .iter()
            .map(|a| (a + ASYMPTOTIC_S[2]).abs())
            .fold(0.0, f64::max);
        let agrid = make_grid(spec.config.tau.abs(), shift, &spec.grid, false)?;
        reports.extend(check_asymptotics(
            &spec.config,
            &agrid,
            &ASYMPTOTIC_S,
            &spec.options,
        )?);
    }
    let all_pass = reports.iter().all(|r| r.pass);
    let meta = grid_meta(&spec.config.config_hash(), &grid.params());
    Ok(RunOutput {
        table: report_table(&reports).with_meta(&meta),
        all_pass,
    })
}

fn run_occupancy(spec: &RunSpec, m_max: usize) -> Result<RunOutput> {
    let grid = spec.model_grid(0.0)?;
    let rows = occupancy_table(&spec.config, m_max, &spec.occupancy, &grid)?;
    let d = spec.config.n() - 1;
    let mut cols: Vec<String> = (1..=d).map(|j| format!("m{j}")).collect();
    cols.extend(["probability", "imag"].map(String::from));
    let mut table = Table {
        columns: cols,
        rows: Vec::new(),
    };
    for r in rows {
        let mut row: Vec<Value> = r.m.iter().map(|&m| json!(m)).collect();
        row.push(num(r.probability));
        row.push(num(r.imag));
        table.push(row);
    }
    let meta = grid_meta(&spec.config.config_hash(), &grid.params());
    Ok(RunOutput {
        table: table.with_meta(&meta),
        all_pass: true,
    })
}

fn run_scan(spec: &RunSpec) -> Result<RunOutput> {
    let grid = Arc::new(spec.model_grid(GRID_MARGIN)?);
    let v = Verifier::new(spec.config.clone(), grid.clone(), spec.options)?;
    let (_, st) = spec.schemes()?;
    let ss4 = spec.quartic_scheme();
    let pts = spec.points();
    let mut needed = Vec::new();
    for &(s, t) in &pts {
        needed.extend(v.pde_stencil(s, t, &ss4, &st));
    }
    v.prefetch(&needed)?;
    let mut table = Table::new(&["s", "tau", "F", "log_F", "delta", "ptq", "pde_relative"]);
    for (s, t) in pts {
        let state = v.state(s, t)?;
        let pde = v.check_pde_at(s, t, &ss4, &st)?;
        table.push(vec![
            num(s),
            num(t),
            num(state.det.value),
            num(state.det.log_value),
            num(state.gamma1.delta),
            num(state.gamma1.ptq().re),
            num(pde.relative),
        ]);
    }
    let meta = grid_meta(&spec.config.config_hash(), &grid.params());
    Ok(RunOutput {
        table: table.with_meta(&meta),
        all_pass: true,
    })
}

/// Line of the first occurrence of `"field"` in a JSON text, 1-based.
fn field_line(text: &str, field: &str) -> Option<usize> {
    let key = format!("\"{field}\"");
    text.lines().position(|l| l.contains(&key)).map(|i| i + 1)
}

/// Reads and validates a config file; errors carry the offending line.
pub fn load_config(path: &Path, mode: Validation) -> Result<ModelConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    let cfg = ModelConfig::from_json(&text).map_err(|e| {
        Error::InvalidArgument(format!("{}: {}", path.display(), strip_invalid(&e)))
    })?;
    let mode = if cfg.is_trivial() {
        Validation::AllowDegenerate
    } else {
        mode
    };
    cfg.validate(mode).map_err(|e| {
        let msg = strip_invalid(&e);
        let field = msg.split(':').next().unwrap_or("");
        match field_line(&text, field) {
            Some(line) => Error::InvalidArgument(format!("{}: line {line}: {msg}", path.display())),
            None => Error::InvalidArgument(format!("{}: {msg}", path.display())),
        }
    })?;
    Ok(cfg)
}

fn strip_invalid(e: &Error) -> String {
    match e {
        Error::InvalidArgument(m) => m.clone(),
        other => other.to_string(),
    }
}

/// The configuration used when `--config` is absent.
pub fn standard_config() -> ModelConfig {
    ModelConfig::new(vec![-1.0, 1.0], vec![0.0, 0.5, 0.0], 1.0, 0.0)
}

impl Cli {
    /// Loads the config and resolves defaults.
    pub fn into_spec(self) -> Result<RunSpec> {
        let c = self.common;
        let requested = if c.allow_degenerate {
            Validation::AllowDegenerate
        } else {
            Validation::Strict
        };
        let config = match &c.config {
            Some(p) => load_config(p, requested)?,
            None => standard_config(),
        };
        let validation = if config.is_trivial() {
            Validation::AllowDegenerate
        } else {
            requested
        };
        let command = match self.command {
            CommandArg::Special => Command::Special,
            CommandArg::Genfun => Command::Genfun,
            CommandArg::Gamma => Command::Gamma,
            CommandArg::Verify { suite } => Command::Verify(suite),
            CommandArg::Occupancy { m_max, .. } => Command::Occupancy { m_max },
            CommandArg::Scan => Command::Scan,
        };
        let occupancy = match self.command {
            CommandArg::Occupancy {
                rho, circle_nodes, ..
            } => OccupancyOptions {
                rho,
                nodes: circle_nodes,
            },
            _ => OccupancyOptions::default(),
        };
        let format = c.format.unwrap_or_else(|| {
            match c
                .out
                .as_ref()
                .and_then(|p| p.extension())
                .and_then(|e| e.to_str())
            {
                Some("json") => Format::Json,
                Some("csv") => Format::Csv,
                _ if command == Command::Gamma => Format::Json,
                _ => Format::Csv,
            }
        });
        Ok(RunSpec {
            command,
            config,
            grid: GridOverrides {
                panels: c.panels,
                nodes_per_panel: c.nodes_per_panel,
                truncation: c.truncation,
                min_panel: c.min_panel,
            },
            s_grid: c.s_grid,
            tau_grid: c.tau_grid,
            out: c.out,
            format,
            fd_step: c.fd_step,
            options: EvalOptions {
                validation,
                branch_flip: c.branch_flip,
            },
            occupancy,
        })
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_PRECISION
    } else {
        EXIT_INVALID
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PEARCEY_LAB_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::invalid(format!(
                "PEARCEY_LAB_THREADS must be a positive integer, got `{v}`"
            ))
        })?;
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn emit(spec: &RunSpec, out: &RunOutput) -> Result<()> {
    let bytes = match spec.format {
        Format::Csv => out.table.to_csv()?,
        Format::Json => out.table.to_json()?,
    };
    match &spec.out {
        Some(p) => fs::write(p, bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

/// Parses `args`, runs and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    let result = configure_threads()
        .and_then(|_| cli.into_spec())
        .and_then(|spec| {
            let out = run(&spec)?;
            emit(&spec, &out)?;
            Ok(out.all_pass)
        });
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => {
            eprintln!("verification failed: see the rows with pass = false");
            EXIT_VERIFICATION
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        let r: Range = "-2:2:21".parse().unwrap();
        let v = r.values();
        assert_eq!(v.len(), 21);
        assert_eq!(v[0], -2.0);
        assert_eq!(v[20], 2.0);
        assert!((v[10]).abs() < 1e-15);
        assert_eq!("1:1:1".parse::<Range>().unwrap().values(), vec![1.0]);
        assert!("1:0:3".parse::<Range>().is_err());
        assert!("0:1:0".parse::<Range>().is_err());
        assert!("0:1".parse::<Range>().is_err());
        assert!("0:1:1".parse::<Range>().is_err());
        assert_eq!(r.to_string().parse::<Range>().unwrap(), r);
    }

    #[test]
    fn config_errors_reference_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(
            &p,
            "{\n  \"a\": [-1, 1],\n  \"k\": [0, 1.5, 0],\n  \"tau\": 1,\n  \"s\": 0\n}\n",
        )
        .unwrap();
        let e = load_config(&p, Validation::Strict).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        fs::write(&p, "{\n  \"a\": [-1, 1],\n  \"k\": [0, 0.5, 0\n}\n").unwrap();
        let e = load_config(&p, Validation::Strict).unwrap_err().to_string();
        assert!(e.contains("line"), "{e}");
        fs::write(
            &p,
            "{\"a\": [-1, 1], \"k\": [0, 0, 0], \"tau\": 1, \"s\": 0}",
        )
        .unwrap();
        assert!(load_config(&p, Validation::Strict).is_ok());
    }

    #[test]
    fn table_serialization_is_stable() {
        let mut t = Table::new(&["x", "name", "v"]);
        t.push(vec![num(0.1), json!("a,b"), num(f64::NAN)]);
        let csv = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(csv, "x,name,v\n0.1,\"a,b\",\n");
        let js: Value = serde_json::from_slice(&t.to_json().unwrap()).unwrap();
        assert_eq!(js[0]["x"], json!(0.1));
        assert!(js[0]["v"].is_null());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(main_with_args(["pearcey-lab", "bogus"]), EXIT_INVALID);
        assert_eq!(
            main_with_args(["pearcey-lab", "scan", "--s-grid", "1:0:3"]),
            EXIT_INVALID
        );
        assert_eq!(
            main_with_args(["pearcey-lab", "verify", "--suite", "nope"]),
            EXIT_INVALID
        );
    }
}
