//! Report rows, per-row checkpoints and CSV/JSON output.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};
use kornet::metrics::{fit_rate, RateFit};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Format};

pub const HEADER: [&str; 12] = [
    "d", "m", "p", "W", "L", "n", "epsilon", "width", "depth", "params", "error", "seconds",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub d: usize,
    pub m: usize,
    pub p: f64,
    #[serde(rename = "W")]
    pub w: Option<usize>,
    #[serde(rename = "L")]
    pub l: Option<usize>,
    pub n: Option<usize>,
    pub epsilon: Option<f64>,
    pub width: Option<usize>,
    pub depth: Option<usize>,
    pub params: Option<usize>,
    pub error: Option<f64>,
    pub seconds: f64,
    pub budget_ok: Option<bool>,
    pub failure: Option<String>,
}

impl Row {
    pub fn blank(cfg: &ExperimentConfig) -> Self {
        Self {
            d: cfg.d,
            m: cfg.m,
            p: cfg.p,
            w: None,
            l: None,
            n: None,
            epsilon: None,
            width: None,
            depth: None,
            params: None,
            error: None,
            seconds: 0.0,
            budget_ok: None,
            failure: None,
        }
    }

    /// Contract failure: construction error or budget overrun.
    pub fn failed(&self) -> bool {
        self.failure.is_some() || self.budget_ok == Some(false)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointLine {
    key: String,
    row: Row,
}

/// Append-only JSON-lines log next to the output; the first line is the run fingerprint.
pub struct Checkpoint {
    path: PathBuf,
    file: Mutex<File>,
    done: BTreeMap<String, Row>,
}

impl Checkpoint {
    pub fn path_for(out: &Path) -> PathBuf {
        let mut s = out.as_os_str().to_owned();
        s.push(".partial");
        PathBuf::from(s)
    }

    pub fn open(out: &Path, fingerprint: &str) -> Result<Self> {
        let path = Self::path_for(out);
        let mut done = BTreeMap::new();
        let mut reuse = false;
        if let Ok(f) = File::open(&path) {
            let mut lines = BufReader::new(f).lines();
            if let Some(Ok(first)) = lines.next() {
                if first == fingerprint {
                    reuse = true;
                    for line in lines.map_while(|l| l.ok()) {
                        // a torn final line from an interrupted write is dropped
                        if let Ok(c) = serde_json::from_str::<CheckpointLine>(&line) {
                            done.insert(c.key, c.row);
                        }
                    }
                }
            }
        }
        let file = if reuse {
            OpenOptions::new().append(true).open(&path)
        } else {
            done.clear();
            File::create(&path).and_then(|mut f| writeln!(f, "{fingerprint}").map(|_| f))
        }
        .with_context(|| format!("cannot write checkpoint {}", path.display()))?;
        Ok(Self {
            path,
            file: Mutex::new(file),
            done,
        })
    }

    pub fn get(&self, key: &str) -> Option<&Row> {
        self.done.get(key)
    }

    pub fn record(&self, key: &str, row: &Row) -> Result<()> {
        let line = serde_json::to_string(&CheckpointLine {
            key: key.into(),
            row: row.clone(),
        })?;
        let mut f = self.file.lock().expect("checkpoint lock");
        writeln!(f, "{line}")?;
        f.flush()?;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        drop(self.file);
        fs::remove_file(&self.path).with_context(|| format!("cannot remove {}", self.path.display()))
    }
}

/// Least-squares slope of the rows' errors against `size(row)`.
pub fn fit_rows(rows: &[Row], size: impl Fn(&Row) -> Option<f64>) -> Option<RateFit> {
    let recs: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| !r.failed())
        .filter_map(|r| Some((size(r)?, r.error?)))
        .collect();
    fit_rate(&recs).ok()
}

/// Shortest round-trip form; scientific outside `[1e-4, 1e15)`.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

pub fn to_csv(rows: &[Row], fit: Option<&RateFit>, cfg: &ExperimentConfig) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.d.to_string(),
            r.m.to_string(),
            r.p.to_string(),
            opt(&r.w),
            opt(&r.l),
            opt(&r.n),
            r.epsilon.map(num).unwrap_or_default(),
            opt(&r.width),
            opt(&r.depth),
            opt(&r.params),
            r.error.map(num).unwrap_or_else(|| "NaN".into()),
            num(r.seconds),
        ])?;
    }
    if let Some(f) = fit {
        // trailing fit row: W = "fit", error column = slope
        let mut rec = vec![cfg.d.to_string(), cfg.m.to_string(), cfg.p.to_string(), "fit".into()];
        rec.extend(std::iter::repeat(String::new()).take(6));
        rec.push(num(f.slope));
        rec.push(String::new());
        w.write_record(rec)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[derive(Serialize)]
struct JsonReport<'a> {
    config: &'a ExperimentConfig,
    rows: &'a [Row],
    fit: Option<&'a RateFit>,
}

pub fn to_json(rows: &[Row], fit: Option<&RateFit>, cfg: &ExperimentConfig) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&JsonReport { config: cfg, rows, fit })?;
    s.push('\n');
    Ok(s)
}

pub fn render(rows: &[Row], fit: Option<&RateFit>, cfg: &ExperimentConfig) -> Result<String> {
    match cfg.format {
        Format::Csv => to_csv(rows, fit, cfg),
        Format::Json => to_json(rows, fit, cfg),
    }
}

pub fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
