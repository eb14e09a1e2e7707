//! Experiment configuration: TOML file values overridden by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use kornet::corpus::by_name;
use kornet::metrics::QuadratureConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Lp,
    W1p,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Flags shared by `interp` and `build`.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// Target function: sine, bubble, zero, aniso:<w1,...,wd>
    #[arg(long = "fn")]
    pub function: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Smoothness order (2 or 3)
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    /// lp or w1p
    #[arg(long)]
    pub norm: Option<String>,
    /// Comma-separated WxL pairs, e.g. 1x1,2x1,3x1
    #[arg(long)]
    pub sweep: Option<String>,
    /// Levels n for `interp`: `2..8` (inclusive) or `2,4,6`
    #[arg(long)]
    pub levels: Option<String>,
    /// Monte Carlo quadrature with this many samples
    #[arg(long)]
    pub samples: Option<usize>,
    /// Tensor-grid quadrature with this many midpoints per axis
    #[arg(long = "per-axis")]
    pub per_axis: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv or json
    #[arg(long)]
    pub format: Option<String>,
    /// TOML file; flags take precedence over its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write 0 in the seconds column so reruns are byte-identical
    #[arg(long = "no-timing")]
    pub no_timing: bool,
    /// Test hook: leave the checkpoint after this many new rows, as if interrupted
    #[arg(long = "stop-after", hide = true)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(rename = "fn")]
    function: Option<String>,
    d: Option<usize>,
    m: Option<usize>,
    p: Option<f64>,
    norm: Option<String>,
    sweep: Option<StrOrList>,
    levels: Option<StrOrList>,
    seed: Option<u64>,
    quadrature: Option<QuadFile>,
    output: Option<OutFile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum StrOrList {
    Str(String),
    List(Vec<String>),
    Ints(Vec<usize>),
}

impl StrOrList {
    fn joined(&self) -> String {
        match self {
            StrOrList::Str(s) => s.clone(),
            StrOrList::List(v) => v.join(","),
            StrOrList::Ints(v) => v.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadFile {
    mode: Option<String>,
    per_axis: Option<usize>,
    samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutFile {
    path: Option<PathBuf>,
    format: Option<String>,
    timing: Option<bool>,
}

/// Fully resolved and validated settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub function: String,
    pub d: usize,
    pub m: usize,
    pub p: f64,
    pub norm: Norm,
    pub sweep: Vec<(usize, usize)>,
    pub levels: Vec<usize>,
    pub quadrature: QuadratureConfig,
    pub seed: u64,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub format: Format,
    pub timing: bool,
    #[serde(skip)]
    pub stop_after: Option<usize>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

pub fn parse_sweep(s: &str) -> Result<Vec<(usize, usize)>, ConfigError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let (w, l) = t
                .split_once(['x', 'X'])
                .ok_or_else(|| bad(format!("sweep entry `{t}` is not WxL")))?;
            let w: usize = w.trim().parse().map_err(|_| bad(format!("bad width in `{t}`")))?;
            let l: usize = l.trim().parse().map_err(|_| bad(format!("bad depth in `{t}`")))?;
            if w == 0 || l == 0 {
                return Err(bad(format!("sweep entry `{t}` must be at least 1x1")));
            }
            Ok((w, l))
        })
        .collect()
}

pub fn parse_levels(s: &str) -> Result<Vec<usize>, ConfigError> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad(format!("bad level range `{s}`")))?;
        let b: usize = b.trim().parse().map_err(|_| bad(format!("bad level range `{s}`")))?;
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| bad(format!("bad level `{t}`"))))
        .collect()
}

fn load_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
}

impl ExperimentConfig {
    /// Merge file and flags, then validate. `levels_mode` selects which sweep must be nonempty.
    pub fn resolve(args: &ExperimentArgs, levels_mode: bool) -> Result<Self, ConfigError> {
        let file = match &args.config {
            Some(p) => load_file(p)?,
            None => FileConfig::default(),
        };
        let quad_file = file.quadrature.clone().unwrap_or_default();
        let out_file = file.output.clone().unwrap_or_default();

        let function = args.function.clone().or(file.function).unwrap_or_else(|| "sine".into());
        let d = args.d.or(file.d).unwrap_or(1);
        let m = args.m.or(file.m).unwrap_or(2);
        let p = args.p.or(file.p).unwrap_or(2.0);
        let seed = args.seed.or(file.seed).unwrap_or(0);
        let norm = match args.norm.clone().or(file.norm).as_deref().unwrap_or("lp") {
            "lp" => Norm::Lp,
            "w1p" => Norm::W1p,
            other => return Err(bad(format!("unknown norm `{other}` (expected lp or w1p)"))),
        };
        let format = match args.format.clone().or(out_file.format).as_deref().unwrap_or("csv") {
            "csv" => Format::Csv,
            "json" => Format::Json,
            other => return Err(bad(format!("unknown format `{other}` (expected csv or json)"))),
        };
        let sweep = match args.sweep.clone().or(file.sweep.map(|s| s.joined())) {
            Some(s) => parse_sweep(&s)?,
            None => Vec::new(),
        };
        let levels = match args.levels.clone().or(file.levels.map(|s| s.joined())) {
            Some(s) => parse_levels(&s)?,
            None => Vec::new(),
        };

        // flags pick the mode directly; the file may name it
        let quadrature = if let Some(n) = args.samples {
            QuadratureConfig::monte_carlo(n, seed)
        } else if let Some(n) = args.per_axis {
            QuadratureConfig::tensor(n)
        } else {
            match quad_file.mode.as_deref() {
                Some("mc") => QuadratureConfig::monte_carlo(quad_file.samples.unwrap_or(1_000_000), seed),
                Some("tensor") => match quad_file.per_axis {
                    Some(n) => QuadratureConfig::tensor(n),
                    None => QuadratureConfig::default_for(d),
                },
                None => match (quad_file.samples, quad_file.per_axis) {
                    (Some(n), _) => QuadratureConfig::monte_carlo(n, seed),
                    (None, Some(n)) => QuadratureConfig::tensor(n),
                    (None, None) => QuadratureConfig::default_for(d),
                },
                Some(other) => return Err(bad(format!("unknown quadrature mode `{other}` (expected tensor or mc)"))),
            }
        };
        let out = args.out.clone().or(out_file.path);
        let timing = !args.no_timing && out_file.timing.unwrap_or(true);

        let cfg = Self {
            function,
            d,
            m,
            p,
            norm,
            sweep,
            levels,
            quadrature,
            seed,
            out,
            format,
            timing,
            stop_after: args.stop_after,
        };
        cfg.validate(levels_mode)?;
        Ok(cfg)
    }

    fn validate(&self, levels_mode: bool) -> Result<(), ConfigError> {
        if self.d == 0 {
            return Err(bad("d must be at least 1"));
        }
        if !(self.m == 2 || self.m == 3) {
            return Err(bad(format!("m must be 2 or 3, got {}", self.m)));
        }
        if !(self.p.is_finite() && self.p >= 1.0) {
            return Err(bad(format!("p must be a finite value >= 1, got {}", self.p)));
        }
        let f = by_name(&self.function, self.d).map_err(|e| bad(e.to_string()))?;
        if !f.usable_for(self.m) {
            return Err(bad(format!("`{}` lacks the smoothness needed for m = {}", self.function, self.m)));
        }
        self.quadrature.validate().map_err(|e| bad(e.to_string()))?;
        if levels_mode {
            if self.levels.is_empty() {
                return Err(bad("level sweep is empty (use --levels)"));
            }
            if self.levels.iter().any(|&n| n == 0 || n > 24) {
                return Err(bad("levels must lie in 1..=24"));
            }
            if self.norm != Norm::Lp {
                return Err(bad("interp measures L_p errors only"));
            }
        } else if self.sweep.is_empty() {
            return Err(bad("sweep is empty (use --sweep WxL,...)"));
        }
        Ok(())
    }

    /// Identity of a run for checkpoint matching.
    pub fn fingerprint(&self, kind: &str) -> String {
        format!("{kind} {}", serde_json::to_string(self).expect("serializable config"))
    }
}
