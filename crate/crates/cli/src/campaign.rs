//! Campaign configuration shared by the subcommands and `report --config`.

use std::path::PathBuf;

use btl_core::energy::{ProjectionKind, WeightSpec};
use btl_core::quadrature::{Method, QuadratureSpec};
use btl_core::shooting::ShootingSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Constants,
    Project,
    CriticalPoint,
    Expansion,
    LemmaCheck,
    Shoot,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Constants => "constants",
            CommandKind::Project => "project",
            CommandKind::CriticalPoint => "critical-point",
            CommandKind::Expansion => "expansion",
            CommandKind::LemmaCheck => "lemma-check",
            CommandKind::Shoot => "shoot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Text,
}

/// Overrides of the quadrature defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_evals: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angular_degree: Option<usize>,
    /// Relative tolerance of the radial ODE integrator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ode_rel_tol: Option<f64>,
}

/// Everything a run needs. Fields a command does not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub command: CommandKind,
    /// Dimension; `shoot` accepts non-integer values.
    pub n: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightSpec>,
    /// Outer ball radius; the ball is centred at the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_a: Option<Vec<f64>>,
    /// Random starts of the ascent check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionKind>,
    /// Interaction item: `i`..`vi`, or `gradient` for the gradient-kernel integrals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub quadrature: QuadratureSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default)]
    pub assert: bool,
}

fn is_default(q: &QuadratureSettings) -> bool {
    *q == QuadratureSettings::default()
}

impl CampaignConfig {
    pub fn new(command: CommandKind, n: f64) -> Self {
        Self {
            command,
            n,
            k: None,
            epsilon: None,
            eps_grid: None,
            weight: None,
            radius: None,
            xi0: None,
            a0: None,
            grad_a: None,
            starts: None,
            delta: None,
            xi: None,
            grid_file: None,
            projection: None,
            item: None,
            l: None,
            i: None,
            j: None,
            d: None,
            sigma: None,
            quadrature: QuadratureSettings::default(),
            seed: 0,
            output: None,
            format: None,
            assert: false,
        }
    }

    /// Parses a TOML campaign file; errors carry the line, column and field.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Malformed(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, msg: String| Err(CliError::Malformed(format!("field `{name}`: {msg}")));
        if !(self.n >= 3.0) || !self.n.is_finite() {
            return field("n", format!("must be at least 3, got {}", self.n));
        }
        if self.command != CommandKind::Shoot && self.n.fract() != 0.0 {
            return field("n", format!("must be an integer for {}, got {}", self.command.name(), self.n));
        }
        if let Some(grid) = &self.eps_grid {
            if grid.is_empty() {
                return field("eps_grid", "must not be empty".into());
            }
            if let Some(e) = grid.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
                return field("eps_grid", format!("entries must lie in (0, 1), got {e}"));
            }
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e < 1.0) {
                return field("epsilon", format!("must lie in (0, 1), got {e}"));
            }
        }
        if self.epsilon.is_some() && self.eps_grid.is_some() {
            return field("epsilon", "give either epsilon or eps_grid, not both".into());
        }
        let need = |name: &str, present: bool| -> Result<(), CliError> {
            if present {
                Ok(())
            } else {
                Err(CliError::Malformed(format!("field `{name}`: required for {}", self.command.name())))
            }
        };
        match self.command {
            CommandKind::Constants => {}
            CommandKind::Project => {
                need("epsilon", self.epsilon.is_some())?;
                need("delta", self.delta.is_some())?;
            }
            CommandKind::CriticalPoint => {
                need("k", self.k.is_some())?;
                need("grad_a", self.grad_a.is_some())?;
            }
            CommandKind::Expansion => {
                need("k", self.k.is_some())?;
                need("weight", self.weight.is_some())?;
            }
            CommandKind::LemmaCheck => {
                need("item", self.item.is_some())?;
                need("epsilon or eps_grid", self.epsilon.is_some() || self.eps_grid.is_some())?;
            }
            CommandKind::Shoot => {
                need("epsilon or eps_grid", self.epsilon.is_some() || self.eps_grid.is_some())?;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n as usize
    }

    pub fn quadrature_spec(&self) -> Result<QuadratureSpec, CliError> {
        let mut spec = QuadratureSpec::for_dimension(self.dim());
        let q = &self.quadrature;
        if let Some(v) = q.rel_tol {
            spec.rel_tol = v;
        }
        if let Some(v) = q.abs_tol {
            spec.abs_tol = v;
        }
        if let Some(v) = q.method {
            spec.method = v;
        }
        if let Some(v) = q.max_evals {
            spec.max_evals = v;
        }
        if let Some(v) = q.angular_degree {
            spec.angular_degree = v;
        }
        spec.seed = self.seed;
        spec.validate().map_err(|e| CliError::Malformed(format!("field `quadrature`: {e}")))?;
        Ok(spec)
    }

    pub fn shooting_spec(&self) -> ShootingSpec {
        let mut spec = ShootingSpec::default();
        if let Some(v) = self.quadrature.ode_rel_tol {
            spec.rel_tol = v;
        }
        spec
    }

    pub fn projection_kind(&self) -> ProjectionKind {
        self.projection.unwrap_or_default()
    }

    /// Origin-centred `xi0`, defaulting to the origin.
    pub fn xi0_or_origin(&self) -> Vec<f64> {
        self.xi0.clone().unwrap_or_else(|| vec![0.0; self.dim()])
    }

    pub fn radius_or_unit(&self) -> f64 {
        self.radius.unwrap_or(1.0)
    }

    /// The explicit grid, the single `epsilon`, or `default`.
    pub fn grid_or(&self, default: Vec<f64>) -> Vec<f64> {
        if let Some(g) = &self.eps_grid {
            g.clone()
        } else if let Some(e) = self.epsilon {
            vec![e]
        } else {
            default
        }
    }
}

/// `1,0,0` into numbers.
pub fn parse_vector(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>().map_err(|_| format!("'{t}' is not a number"))
        })
        .collect()
}

/// `0.5,0;0,0` into one vector per `;`-separated group.
pub fn parse_vectors(s: &str) -> Result<Vec<Vec<f64>>, String> {
    s.split(';').map(parse_vector).collect()
}

/// `constant[:a0]`, `affine:g1,...,gn` or `product:l1,...,lm`. The affine
/// offset is 1 unless `a0` is given.
pub fn parse_weight(s: &str, a0: Option<f64>) -> Result<WeightSpec, String> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind.trim() {
        "constant" => {
            let value = if rest.is_empty() {
                a0.unwrap_or(1.0)
            } else {
                rest.trim().parse().map_err(|_| format!("'{rest}' is not a number"))?
            };
            Ok(WeightSpec::Constant { a0: value })
        }
        "affine" => Ok(WeightSpec::Affine { a0: a0.unwrap_or(1.0), g: parse_vector(rest)? }),
        "product" => {
            let exponents = rest
                .split(',')
                .map(|t| t.trim().parse::<u32>().map_err(|_| format!("'{t}' is not a nonnegative integer")))
                .collect::<Result<_, _>>()?;
            Ok(WeightSpec::Product { exponents })
        }
        other => Err(format!("unknown weight kind '{other}' (expected constant, affine or product)")),
    }
}

/// Parses `x1,...,xn` rows; blank lines and `#` comments are skipped and a
/// non-numeric first line is taken as a header.
pub fn parse_grid(text: &str, n: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rows = Vec::new();
    let mut first = true;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = parse_vector(line);
        if first && parsed.is_err() {
            first = false;
            continue;
        }
        first = false;
        let row = parsed.map_err(|e| CliError::Malformed(format!("grid file line {}: {e}", idx + 1)))?;
        if row.len() != n {
            return Err(CliError::Malformed(format!(
                "grid file line {}: expected {n} coordinates, got {}",
                idx + 1,
                row.len()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Malformed("grid file has no points".into()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_parse() {
        assert_eq!(parse_weight("constant", None).unwrap(), WeightSpec::Constant { a0: 1.0 });
        assert_eq!(parse_weight("constant:2.5", None).unwrap(), WeightSpec::Constant { a0: 2.5 });
        assert_eq!(
            parse_weight("affine:0.25,0,0,0", Some(2.0)).unwrap(),
            WeightSpec::Affine { a0: 2.0, g: vec![0.25, 0.0, 0.0, 0.0] }
        );
        assert_eq!(parse_weight("product:1,0,2", None).unwrap(), WeightSpec::Product { exponents: vec![1, 0, 2] });
        assert!(parse_weight("cubic:1", None).is_err());
        assert!(parse_weight("affine:1,x", None).is_err());
    }

    #[test]
    fn grids_parse_with_header_and_comments() {
        let g = parse_grid("x1,x2,x3\n# note\n0.1,0,0\n\n0.2, 0.1, 0\n", 3).unwrap();
        assert_eq!(g, vec![vec![0.1, 0.0, 0.0], vec![0.2, 0.1, 0.0]]);
        let e = parse_grid("0.1,0,0\n0.2,0\n", 3).unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn toml_errors_name_the_line() {
        let e = CampaignConfig::from_toml("command = \"expansion\"\nn = 4\nk = \"two\"\n").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        let e = CampaignConfig::from_toml("command = \"expansion\"\nn = 4\nkk = 2\n").unwrap_err().to_string();
        assert!(e.contains("kk"), "{e}");
        let e = CampaignConfig::from_toml("command = \"expansion\"\nn = 4\n").unwrap_err().to_string();
        assert!(e.contains("`k`"), "{e}");
    }
}
