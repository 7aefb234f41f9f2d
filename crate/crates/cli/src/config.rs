use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use alterstrip::homogenized::ModeCutoff;
use alterstrip::validate::CheckParams;
use alterstrip::MeshParams;
use clap::Args;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config file line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("'{key}': cannot parse '{value}'")]
    Parse { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// key = value file; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Window half-width in radians, 0 < eta <= pi/2
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub mesh_h: Option<f64>,
    #[arg(long)]
    pub grading_levels: Option<u32>,
    /// Bulk transverse mesh spacing; defaults to mesh_h / 5
    #[arg(long)]
    pub transverse_h: Option<f64>,
    /// Truncation height of the half-strip
    #[arg(long = "L", visible_alias = "height")]
    pub height: Option<f64>,
    /// Expansion order
    #[arg(long = "M", visible_alias = "order")]
    pub order: Option<usize>,
    #[arg(long)]
    pub n_bands: Option<usize>,
    #[arg(long)]
    pub tau_points: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mesh refinements for the bottom eigenvalue
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub eps: f64,
    pub eta: f64,
    pub mesh: MeshParams,
    pub height: f64,
    pub order: usize,
    pub n_bands: usize,
    pub tau_points: usize,
    pub delta: f64,
    pub seed: u64,
    pub levels: usize,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

const KEYS: [&str; 14] = [
    "eps",
    "eta",
    "mesh_h",
    "grading_levels",
    "transverse_h",
    "L",
    "M",
    "n_bands",
    "tau_points",
    "delta",
    "seed",
    "levels",
    "out",
    "format",
];

fn read_file(path: &Path) -> Result<HashMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    let mut map = HashMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: k + 1 })?;
        let key = key.trim().replace('-', "_");
        let key = match key.as_str() {
            "height" => "L".to_owned(),
            "order" => "M".to_owned(),
            _ => key,
        };
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        map.insert(key, value.trim().to_owned());
    }
    Ok(map)
}

fn pick<T: std::str::FromStr>(flag: Option<T>, file: &HashMap<String, String>, key: &str, default: T) -> Result<T, ConfigError> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(s) => s.parse().map_err(|_| ConfigError::Parse { key: key.to_owned(), value: s.clone() }),
        None => Ok(default),
    }
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let file = match &self.config {
            Some(p) => read_file(p)?,
            None => HashMap::new(),
        };
        let mesh_h = pick(self.mesh_h, &file, "mesh_h", 0.1)?;
        let format = match (self.format, file.get("format").map(String::as_str)) {
            (Some(f), _) => Some(f),
            (None, Some("csv")) => Some(Format::Csv),
            (None, Some("json")) => Some(Format::Json),
            (None, Some(other)) => return Err(ConfigError::Parse { key: "format".into(), value: other.into() }),
            (None, None) => None,
        };
        let cfg = RunConfig {
            eps: pick(self.eps, &file, "eps", 0.1)?,
            eta: pick(self.eta, &file, "eta", std::f64::consts::FRAC_PI_4)?,
            mesh: MeshParams::new(mesh_h, pick(self.grading_levels, &file, "grading_levels", 8)?).with_transverse(pick(
                self.transverse_h,
                &file,
                "transverse_h",
                mesh_h / 5.0,
            )?),
            height: pick(self.height, &file, "L", 10.0)?,
            order: pick(self.order, &file, "M", 2)?,
            n_bands: pick(self.n_bands, &file, "n_bands", 3)?,
            tau_points: pick(self.tau_points, &file, "tau_points", 33)?,
            delta: pick(self.delta, &file, "delta", 0.5)?,
            seed: pick(self.seed, &file, "seed", 1)?,
            levels: pick(self.levels, &file, "levels", 1)?,
            out: self.out.clone().or_else(|| file.get("out").map(PathBuf::from)),
            format,
        };
        cfg.check()?;
        Ok(cfg)
    }
}

impl RunConfig {
    fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return bad(format!("--eps must lie in (0, 1], got {}", self.eps));
        }
        if !(self.eta > 0.0 && self.eta <= FRAC_PI_2 + 1e-12) {
            return bad(format!("--eta must lie in (0, pi/2] (radians), got {}", self.eta));
        }
        if !(self.mesh.h > 0.0 && self.mesh.transverse_h > 0.0) {
            return bad("--mesh-h and --transverse-h must be positive".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("--delta must lie in (0, 1), got {}", self.delta));
        }
        if self.height.is_nan() || self.height <= 0.0 {
            return bad(format!("--L must be positive, got {}", self.height));
        }
        if self.order == 0 || self.n_bands == 0 || self.tau_points == 0 || self.levels == 0 {
            return bad("--M, --n-bands, --tau-points and --levels must be at least 1".into());
        }
        Ok(())
    }

    pub fn check_params(&self) -> CheckParams {
        CheckParams {
            epsilon: self.eps,
            eta: self.eta,
            delta: self.delta,
            mesh: self.mesh,
            tau_points: self.tau_points,
            n_bands: self.n_bands,
            seed: self.seed,
            height: self.height,
            probes: ModeCutoff { m_max: 2, n_max: 6 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# comment\neps = 0.2\nn-bands = 4\nheight = 7\n").unwrap();
        let c = Common { config: Some(p), eps: Some(0.05), ..Default::default() }.resolve().unwrap();
        assert_eq!(c.eps, 0.05);
        assert_eq!(c.n_bands, 4);
        assert_eq!(c.height, 7.0);
    }

    #[test]
    fn bad_file_entries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "colour = red\n").unwrap();
        assert!(matches!(Common { config: Some(p.clone()), ..Default::default() }.resolve(), Err(ConfigError::UnknownKey(_))));
        std::fs::write(&p, "eps 0.1\n").unwrap();
        assert!(matches!(Common { config: Some(p.clone()), ..Default::default() }.resolve(), Err(ConfigError::Syntax { line: 1 })));
        std::fs::write(&p, "eps = x\n").unwrap();
        assert!(matches!(Common { config: Some(p), ..Default::default() }.resolve(), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn domains_are_checked() {
        assert!(Common { eta: Some(2.0), ..Default::default() }.resolve().is_err());
        assert!(Common { delta: Some(1.0), ..Default::default() }.resolve().is_err());
        assert!(Common { tau_points: Some(0), ..Default::default() }.resolve().is_err());
    }
}
