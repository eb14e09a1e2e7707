mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kornet::construct::{build_theorem1, build_theorem2, BuildOptions};
use kornet::corpus::{by_name, TestFunction};
use kornet::gadgets::suite::{run_suite, SuiteConfig, SuiteRow};
use kornet::grid::{hierarchize, interp_eval};
use kornet::metrics::{fit_rate, lp_distance, lp_error, w1p_error};
use rayon::prelude::*;

use config::{ConfigError, ExperimentArgs, ExperimentConfig, Format, Norm};
use report::{Checkpoint, Row};

#[derive(Parser)]
#[command(name = "kornet", version, about = "ReLU network constructions for mixed-smoothness functions")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sparse-grid interpolation errors over a level sweep
    Interp(ExperimentArgs),
    /// Build networks over a WxL sweep and measure their errors
    Build(ExperimentArgs),
    /// Gadget contract suite
    Gadgets(GadgetArgs),
    /// Refit convergence slopes from existing reports
    Rates(RatesArgs),
}

#[derive(Args)]
struct GadgetArgs {
    #[arg(long, default_value_t = 3)]
    max_w: usize,
    #[arg(long, default_value_t = 3)]
    max_l: usize,
    #[arg(long, default_value_t = 3)]
    max_d: usize,
    /// Monte Carlo points per multi-input gadget
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb this gadget's output before checking (harness self-test)
    #[arg(long)]
    fault: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct RatesArgs {
    /// Report files written by `interp` or `build`
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Fail (exit 2) if any fitted slope is above this value
    #[arg(long, allow_hyphen_values = true)]
    max_slope: Option<f64>,
    #[arg(long, default_value = "csv")]
    format: String,
}

enum Failure {
    Config(anyhow::Error),
    Contract(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.cmd {
        Cmd::Interp(a) => run_interp(&a),
        Cmd::Build(a) => run_build(&a),
        Cmd::Gadgets(a) => run_gadgets(&a),
        Cmd::Rates(a) => run_rates(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Contract(msg)) => {
            eprintln!("contract failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn target(cfg: &ExperimentConfig) -> Result<TestFunction> {
    by_name(&cfg.function, cfg.d).map_err(|e| anyhow!(e))
}

/// Runs `work` for every key not already checkpointed; results come back in key order.
/// `None` when the run stopped early through the test hook.
fn sweep_rows<K, F>(
    cfg: &ExperimentConfig,
    kind: &str,
    keys: &[K],
    label: impl Fn(&K) -> String + Sync,
    work: F,
) -> Result<Option<Vec<Row>>>
where
    K: Sync,
    F: Fn(&K) -> Row + Sync,
{
    let ckpt = match &cfg.out {
        Some(out) => Some(Checkpoint::open(out, &cfg.fingerprint(kind))?),
        None => None,
    };
    let one = |k: &K| -> Result<(Row, bool)> {
        let key = label(k);
        if let Some(r) = ckpt.as_ref().and_then(|c| c.get(&key)) {
            return Ok((r.clone(), false));
        }
        let t = Instant::now();
        let mut row = work(k);
        row.seconds = if cfg.timing { t.elapsed().as_secs_f64() } else { 0.0 };
        if let Some(c) = &ckpt {
            c.record(&key, &row)?;
        }
        eprintln!("{kind} {key}: error {}", row.error.map(|e| format!("{e:.4e}")).unwrap_or_else(|| "-".into()));
        Ok((row, true))
    };
    let rows: Vec<Row> = match cfg.stop_after {
        Some(limit) => {
            let mut rows = Vec::new();
            let mut fresh = 0;
            for k in keys {
                if fresh == limit {
                    eprintln!("stopped after {limit} new rows; rerun to resume");
                    return Ok(None);
                }
                let (row, new) = one(k)?;
                fresh += new as usize;
                rows.push(row);
            }
            rows
        }
        None => keys.par_iter().map(|k| one(k).map(|r| r.0)).collect::<Result<_>>()?,
    };
    if let Some(c) = ckpt {
        c.finish()?;
    }
    Ok(Some(rows))
}

fn run_interp(args: &ExperimentArgs) -> Result<(), Failure> {
    let cfg = ExperimentConfig::resolve(args, true)?;
    let f = target(&cfg)?;
    let rows = sweep_rows(&cfg, "interp", &cfg.levels, |n| format!("n={n}"), |&n| {
        let mut row = Row::blank(&cfg);
        row.n = Some(n);
        match hierarchize(|x: &[f64]| f.eval(x), n, cfg.m, cfg.d) {
            Ok(interp) => {
                row.params = Some(interp.len());
                match lp_distance(|x| f.eval(x), |x| interp_eval(&interp, x), cfg.d, cfg.p, &cfg.quadrature) {
                    Ok(e) => row.error = Some(e.value),
                    Err(e) => row.failure = Some(e.to_string()),
                }
            }
            Err(e) => row.failure = Some(e.to_string()),
        }
        row
    })?;
    let Some(rows) = rows else { return Ok(()) };
    let fit = report::fit_rows(&rows, |r| r.n.map(|n| 2f64.powi(n as i32)));
    finish(&cfg, &rows, fit.as_ref())
}

fn build_row(cfg: &ExperimentConfig, f: &TestFunction, w: usize, l: usize) -> Row {
    let mut row = Row::blank(cfg);
    row.w = Some(w);
    row.l = Some(l);
    let opts = BuildOptions::default();
    let built = match cfg.norm {
        Norm::Lp => build_theorem1(f, cfg.m, w, l, cfg.p, &opts).map(|(net, rep)| (net, rep.n, rep.eps, rep.budget_ok)),
        Norm::W1p => build_theorem2(f, cfg.m, w, l, cfg.p, &opts).map(|(net, rep, _)| (net, rep.n, rep.eps, rep.budget_ok)),
    };
    match built {
        Ok((net, n, eps, budget_ok)) => {
            row.n = Some(n);
            row.epsilon = Some(eps);
            row.width = Some(net.width());
            row.depth = Some(net.depth());
            row.params = Some(net.param_count());
            row.budget_ok = Some(budget_ok && net.assert_budget().is_ok());
            let err = match cfg.norm {
                Norm::Lp => lp_error(f, &net, cfg.p, &cfg.quadrature),
                Norm::W1p => w1p_error(f, &net, cfg.p, &cfg.quadrature),
            };
            match err {
                Ok(e) => row.error = Some(e.value),
                Err(e) => row.failure = Some(e.to_string()),
            }
        }
        Err(e) => row.failure = Some(e.to_string()),
    }
    row
}

fn run_build(args: &ExperimentArgs) -> Result<(), Failure> {
    let cfg = ExperimentConfig::resolve(args, false)?;
    let f = target(&cfg)?;
    let rows = sweep_rows(&cfg, "build", &cfg.sweep, |(w, l)| format!("{w}x{l}"), |&(w, l)| build_row(&cfg, &f, w, l))?;
    let Some(rows) = rows else { return Ok(()) };
    let fit = report::fit_rows(&rows, |r| Some((r.w? * r.l?) as f64));
    finish(&cfg, &rows, fit.as_ref())?;
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| r.failed())
        .map(|r| {
            let why = r.failure.clone().unwrap_or_else(|| "size budget exceeded".into());
            format!("{}x{}: {why}", opt(r.w), opt(r.l))
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Contract(failed.join("; ")))
    }
}

fn opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish(cfg: &ExperimentConfig, rows: &[Row], fit: Option<&kornet::metrics::RateFit>) -> Result<(), Failure> {
    match fit {
        Some(f) => eprintln!("fitted slope {:.4} (R2 {:.4})", f.slope, f.r2),
        None => eprintln!("fewer than three usable rows; no slope fitted"),
    }
    let text = report::render(rows, fit, cfg)?;
    report::emit(&text, cfg.out.as_deref())?;
    Ok(())
}

fn format_arg(s: &str) -> Result<Format, Failure> {
    match s {
        "csv" => Ok(Format::Csv),
        "json" => Ok(Format::Json),
        other => Err(Failure::Config(anyhow!("unknown format `{other}` (expected csv or json)"))),
    }
}

fn run_gadgets(a: &GadgetArgs) -> Result<(), Failure> {
    let format = format_arg(&a.format)?;
    if a.max_w == 0 || a.max_l == 0 || a.max_d == 0 || a.samples == 0 {
        return Err(Failure::Config(anyhow!("matrix bounds and samples must be positive")));
    }
    let known = ["step", "point-fitter", "product2", "product-multi", "partition"];
    if let Some(f) = &a.fault {
        if !known.contains(&f.as_str()) {
            return Err(Failure::Config(anyhow!("unknown gadget `{f}`; one of {}", known.join(", "))));
        }
    }
    let rows = run_suite(&SuiteConfig {
        max_w: a.max_w,
        max_l: a.max_l,
        max_d: a.max_d,
        mc_points: a.samples,
        seed: a.seed,
        fault: a.fault.clone(),
    });
    let text = match format {
        Format::Csv => gadget_csv(&rows).map_err(Failure::Config)?,
        Format::Json => serde_json::to_string_pretty(&rows).map_err(|e| Failure::Config(e.into()))? + "\n",
    };
    report::emit(&text, a.out.as_deref())?;
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} [{}] margin {:.3e}", r.gadget, r.params, r.margin()))
        .collect();
    eprintln!("{} rows, {} failed", rows.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Contract(failed.join("; ")))
    }
}

fn gadget_csv(rows: &[SuiteRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "gadget", "params", "width", "depth", "budget_width", "budget_depth", "measured", "bound", "margin", "pass",
    ])?;
    for r in rows {
        w.write_record([
            r.gadget.clone(),
            r.params.clone(),
            r.width.to_string(),
            r.depth.to_string(),
            r.budget.width.to_string(),
            r.budget.depth.to_string(),
            report::num(r.measured),
            report::num(r.bound),
            report::num(r.margin()),
            r.pass.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// `(size, error)` records from a CSV or JSON report, skipping the fit row and failed rows.
fn read_records(path: &PathBuf) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let rows: Vec<Row> = if text.trim_start().starts_with('{') {
        #[derive(serde::Deserialize)]
        struct Doc {
            rows: Vec<Row>,
        }
        serde_json::from_str::<Doc>(&text).with_context(|| format!("{} is not a report", path.display()))?.rows
    } else {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        if header != report::HEADER {
            bail!("{} does not carry the report header", path.display());
        }
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            if &rec[3] == "fit" {
                continue;
            }
            let num = |i: usize| -> Option<f64> { rec[i].parse().ok() };
            let int = |i: usize| -> Option<usize> { rec[i].parse().ok() };
            rows.push(Row {
                d: int(0).context("bad d")?,
                m: int(1).context("bad m")?,
                p: num(2).context("bad p")?,
                w: int(3),
                l: int(4),
                n: int(5),
                epsilon: num(6),
                width: int(7),
                depth: int(8),
                params: int(9),
                error: num(10).filter(|e| e.is_finite()),
                seconds: num(11).unwrap_or(0.0),
                budget_ok: None,
                failure: None,
            });
        }
        rows
    };
    Ok(rows
        .iter()
        .filter(|r| !r.failed())
        .filter_map(|r| {
            let size = match (r.w, r.l, r.n) {
                (Some(w), Some(l), _) => (w * l) as f64,
                (_, _, Some(n)) => 2f64.powi(n as i32),
                _ => return None,
            };
            Some((size, r.error?))
        })
        .collect())
}

fn run_rates(a: &RatesArgs) -> Result<(), Failure> {
    let format = format_arg(&a.format)?;
    #[derive(serde::Serialize)]
    struct Fitted {
        report: String,
        records: usize,
        slope: f64,
        r2: f64,
    }
    let mut out = Vec::new();
    for p in &a.reports {
        let recs = read_records(p)?;
        let fit = fit_rate(&recs).map_err(|e| Failure::Config(anyhow!("{}: {e}", p.display())))?;
        out.push(Fitted {
            report: p.display().to_string(),
            records: recs.len(),
            slope: fit.slope,
            r2: fit.r2,
        });
    }
    let text = match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for f in &out {
                w.serialize(f).map_err(|e| Failure::Config(e.into()))?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Failure::Config(anyhow!("{e}")))?)
                .map_err(|e| Failure::Config(e.into()))?
        }
        Format::Json => serde_json::to_string_pretty(&out).map_err(|e| Failure::Config(e.into()))? + "\n",
    };
    print!("{text}");
    if let Some(max) = a.max_slope {
        let bad: Vec<String> = out
            .iter()
            .filter(|f| f.slope > max)
            .map(|f| format!("{} slope {:.4} > {max}", f.report, f.slope))
            .collect();
        if !bad.is_empty() {
            return Err(Failure::Contract(bad.join("; ")));
        }
    }
    Ok(())
}
