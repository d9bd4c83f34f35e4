//! Command-line campaigns for the bubble-tower laboratory.
//!
//! Every subcommand builds a [`CampaignConfig`]; `report --config` reads one
//! from TOML. Exit codes: 0 success, 1 malformed input, 2 numerical
//! non-convergence, 3 failed check under `--assert`.

pub mod campaign;
pub mod commands;

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use campaign::{CampaignConfig, CommandKind, Format};
pub use commands::{execute, Check, Outcome};

pub const SCHEMA: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Malformed(String),
    #[error(transparent)]
    Numerical(btl_core::Error),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl From<btl_core::Error> for CliError {
    fn from(e: btl_core::Error) -> Self {
        use btl_core::Error as E;
        match e {
            E::NoBracket { .. } | E::BlowUp { .. } | E::InsufficientData(_) | E::Singular | E::CoincidentPoints => {
                CliError::Numerical(e)
            }
            other => CliError::Malformed(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Malformed(_) | CliError::Io { .. } => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "btl", version, about = "Numerical laboratory for sign-changing bubble towers in perforated balls")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Output options shared by the subcommands.
#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write the report here (atomically) instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format; defaults to the `--out` extension, else text (json for --json).
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Shorthand for `--format json`.
    #[arg(long)]
    pub json: bool,
    /// Exit with code 3 when a reported check fails.
    #[arg(long)]
    pub assert: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Quadrature overrides.
#[derive(Debug, Clone, Args)]
pub struct QuadratureArgs {
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub abs_tol: Option<f64>,
    #[arg(long)]
    pub max_evals: Option<usize>,
}

/// Domain geometry: ball of radius `R` at the origin with a hole at `xi0`.
#[derive(Debug, Clone, Args)]
pub struct DomainArgs {
    #[arg(long = "R", visible_alias = "radius")]
    pub radius: Option<f64>,
    #[arg(long, value_parser = campaign::parse_vector)]
    pub xi0: Option<::std::vec::Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dimensional constants.
    Constants {
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Bubble, asymptotic projection and defect on a point grid.
    Project {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        /// Bubble centre; defaults to xi0.
        #[arg(long, value_parser = campaign::parse_vector)]
        xi: Option<::std::vec::Vec<f64>>,
        /// CSV of points, one `x1,...,xn` per line; defaults to a ray from the hole.
        #[arg(long)]
        grid_file: Option<PathBuf>,
        /// Use the exact concentric projection instead of the asymptotic one.
        #[arg(long)]
        exact: bool,
        #[command(flatten)]
        domain: DomainArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Closed-form critical point of the reduced energy and its certificate.
    CriticalPoint {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        a0: f64,
        #[arg(long, value_parser = campaign::parse_vector, allow_hyphen_values = true)]
        grad_a: ::std::vec::Vec<f64>,
        /// Random starts of the ascent check.
        #[arg(long, default_value_t = 20)]
        starts: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Small-hole expansion of the tower energy.
    Expansion {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        /// `constant[:a0]`, `affine:g1,...,gn` or `product:l1,...,lm`.
        #[arg(long)]
        weight: String,
        /// Offset of affine and constant weights.
        #[arg(long)]
        a0: Option<f64>,
        #[arg(long, value_parser = campaign::parse_vector)]
        eps_grid: Option<::std::vec::Vec<f64>>,
        #[command(flatten)]
        domain: DomainArgs,
        #[command(flatten)]
        quadrature: QuadratureArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Interaction integrals against their leading terms.
    LemmaCheck {
        /// `i`..`vi`, or `gradient` for the gradient-kernel integrals.
        #[arg(long)]
        item: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, value_parser = campaign::parse_vector)]
        eps_grid: Option<::std::vec::Vec<f64>>,
        #[arg(long, default_value = "constant")]
        weight: String,
        #[arg(long)]
        a0: Option<f64>,
        #[arg(long)]
        l: Option<usize>,
        #[arg(long)]
        i: Option<usize>,
        /// Kernel index for the gradient item; 0 selects the scale kernel.
        #[arg(long)]
        j: Option<usize>,
        #[arg(long, value_parser = campaign::parse_vector)]
        d: Option<::std::vec::Vec<f64>>,
        /// `;`-separated vectors, one per layer.
        #[arg(long, value_parser = campaign::parse_vectors, allow_hyphen_values = true)]
        sigma: Option<::std::vec::Vec<Vec<f64>>>,
        #[arg(long)]
        exact: bool,
        #[command(flatten)]
        domain: DomainArgs,
        #[command(flatten)]
        quadrature: QuadratureArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Radial shooting on the annulus and layer-exponent regression.
    Shoot {
        #[arg(long)]
        n: f64,
        /// Number of layers; the solution has k - 1 interior zeros.
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, value_parser = campaign::parse_vector)]
        eps_grid: Option<::std::vec::Vec<f64>>,
        #[arg(long)]
        ode_rel_tol: Option<f64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run a campaign described by a TOML file.
    Report {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the file's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        assert: bool,
    },
}

fn apply_output(cfg: &mut CampaignConfig, o: OutputArgs) {
    cfg.output = o.out;
    cfg.format = if o.json { Some(Format::Json) } else { o.format };
    cfg.assert = o.assert;
    cfg.seed = o.seed;
}

fn apply_quadrature(cfg: &mut CampaignConfig, q: QuadratureArgs) {
    cfg.quadrature.rel_tol = q.rel_tol;
    cfg.quadrature.abs_tol = q.abs_tol;
    cfg.quadrature.max_evals = q.max_evals;
}

fn apply_domain(cfg: &mut CampaignConfig, d: DomainArgs) {
    cfg.radius = d.radius;
    cfg.xi0 = d.xi0;
}

fn weight(spec: &str, a0: Option<f64>) -> Result<btl_core::energy::WeightSpec, CliError> {
    campaign::parse_weight(spec, a0).map_err(|e| CliError::Malformed(format!("--weight: {e}")))
}

fn projection(exact: bool) -> Option<btl_core::energy::ProjectionKind> {
    exact.then_some(btl_core::energy::ProjectionKind::ExactConcentric)
}

/// Translates parsed arguments into a campaign.
pub fn campaign_from_command(cmd: Command) -> Result<CampaignConfig, CliError> {
    Ok(match cmd {
        Command::Constants { n, output } => {
            let mut c = CampaignConfig::new(CommandKind::Constants, n as f64);
            apply_output(&mut c, output);
            c
        }
        Command::Project { n, eps, delta, xi, grid_file, exact, domain, output } => {
            let mut c = CampaignConfig::new(CommandKind::Project, n as f64);
            c.epsilon = Some(eps);
            c.delta = Some(delta);
            c.xi = xi;
            c.grid_file = grid_file;
            c.projection = projection(exact);
            apply_domain(&mut c, domain);
            apply_output(&mut c, output);
            c
        }
        Command::CriticalPoint { n, k, a0, grad_a, starts, output } => {
            let mut c = CampaignConfig::new(CommandKind::CriticalPoint, n as f64);
            c.k = Some(k);
            c.a0 = Some(a0);
            c.grad_a = Some(grad_a);
            c.starts = Some(starts);
            apply_output(&mut c, output);
            c
        }
        Command::Expansion { n, k, weight: w, a0, eps_grid, domain, quadrature, output } => {
            let mut c = CampaignConfig::new(CommandKind::Expansion, n as f64);
            c.k = Some(k);
            c.weight = Some(weight(&w, a0)?);
            c.eps_grid = eps_grid;
            apply_domain(&mut c, domain);
            apply_quadrature(&mut c, quadrature);
            apply_output(&mut c, output);
            c
        }
        Command::LemmaCheck {
            item,
            n,
            k,
            eps,
            eps_grid,
            weight: w,
            a0,
            l,
            i,
            j,
            d,
            sigma,
            exact,
            domain,
            quadrature,
            output,
        } => {
            let mut c = CampaignConfig::new(CommandKind::LemmaCheck, n as f64);
            c.item = Some(item);
            c.k = Some(k);
            c.epsilon = eps;
            c.eps_grid = eps_grid;
            c.weight = Some(weight(&w, a0)?);
            c.l = l;
            c.i = i;
            c.j = j;
            c.d = d;
            c.sigma = sigma;
            c.projection = projection(exact);
            apply_domain(&mut c, domain);
            apply_quadrature(&mut c, quadrature);
            apply_output(&mut c, output);
            c
        }
        Command::Shoot { n, k, eps, eps_grid, ode_rel_tol, output } => {
            let mut c = CampaignConfig::new(CommandKind::Shoot, n);
            c.k = Some(k);
            c.epsilon = eps;
            c.eps_grid = eps_grid;
            c.quadrature.ode_rel_tol = ode_rel_tol;
            apply_output(&mut c, output);
            c
        }
        Command::Report { config, out, assert } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| CliError::Malformed(format!("config {}: {e}", config.display())))?;
            let mut c = CampaignConfig::from_toml(&text)?;
            if out.is_some() {
                c.output = out;
            }
            c.assert |= assert;
            c
        }
    })
}

#[derive(Serialize)]
struct Report<'a> {
    schema: u32,
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a CampaignConfig,
    provenance: &'a std::collections::BTreeMap<String, String>,
    converged: bool,
    checks: &'a [Check],
    result: &'a serde_json::Value,
}

/// The JSON report for a finished run.
pub fn render_json(cfg: &CampaignConfig, outcome: &Outcome) -> String {
    let report = Report {
        schema: SCHEMA,
        tool: "btl",
        version: env!("CARGO_PKG_VERSION"),
        command: cfg.command.name(),
        config: cfg,
        provenance: &outcome.provenance,
        converged: outcome.converged,
        checks: &outcome.checks,
        result: &outcome.result,
    };
    let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
    s.push('\n');
    s
}

fn resolve_format(cfg: &CampaignConfig) -> Format {
    if let Some(f) = cfg.format {
        return f;
    }
    match cfg.output.as_ref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
        Some("csv") => Format::Csv,
        Some("json") => Format::Json,
        Some(_) => Format::Json,
        None if cfg.output.is_some() => Format::Json,
        None => Format::Text,
    }
}

/// Formats the outcome. `constants` in JSON on stdout prints the bare
/// constants object.
pub fn render(cfg: &CampaignConfig, outcome: &Outcome) -> String {
    match resolve_format(cfg) {
        Format::Json if cfg.command == CommandKind::Constants && cfg.output.is_none() => {
            let mut s = serde_json::to_string_pretty(&outcome.result).expect("constants serialize");
            s.push('\n');
            s
        }
        Format::Json => render_json(cfg, outcome),
        Format::Csv => outcome.csv.clone(),
        Format::Text => {
            let mut s = outcome.text.clone();
            for c in &outcome.checks {
                s.push_str(&format!("{} {} {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
            }
            s
        }
    }
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Runs a campaign and returns the exit code; the report goes to
/// `cfg.output` or stdout, diagnostics to stderr.
pub fn run(cfg: &CampaignConfig) -> i32 {
    match run_inner(cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("BTL_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Malformed(format!("BTL_THREADS must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Malformed(format!("thread pool: {e}")))
}

fn run_inner(cfg: &CampaignConfig) -> Result<i32, CliError> {
    let pool = thread_pool()?;
    let outcome = pool.install(|| execute(cfg))?;
    let rendered = render(cfg, &outcome);
    match &cfg.output {
        Some(path) => write_atomic(path, &rendered)?,
        None => print!("{rendered}"),
    }
    for c in outcome.checks.iter().filter(|c| !c.passed) {
        eprintln!("check failed: {} {}", c.name, c.detail);
    }
    if !outcome.converged {
        eprintln!("warning: some points failed or did not converge");
        return Ok(2);
    }
    if cfg.assert && outcome.checks.iter().any(|c| !c.passed) {
        return Ok(3);
    }
    Ok(0)
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match campaign_from_command(cli.command) {
        Ok(cfg) => run(&cfg),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
