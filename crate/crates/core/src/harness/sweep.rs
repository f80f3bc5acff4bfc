//! Grids of runs: named config variants times a seed range.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::metrics::{fmt_sig9, RoundMetrics};
use crate::harness::sim::{run, run_to_dir};

/// A named set of overrides deep-merged into the base config.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub overrides: toml::Table,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub variants: Vec<Variant>,
}

impl SweepSpec {
    /// Parse an overrides file made of `[[variant]]` tables, each with a
    /// `name` and any config keys to change.
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map_or(1, |s| text[..s.start].matches('\n').count() + 1);
            parse_err(line, e.message().to_owned())
        })?;
        let raw = match doc.remove("variant") {
            Some(toml::Value::Array(items)) => items,
            Some(_) => return Err(parse_err(1, "`variant` must be an array of tables".into())),
            None => return Err(parse_err(1, "no [[variant]] tables".into())),
        };
        if let Some(key) = doc.keys().next() {
            return Err(parse_err(1, format!("unknown top-level key `{key}`")));
        }
        let mut variants = Vec::with_capacity(raw.len());
        for (i, item) in raw.into_iter().enumerate() {
            let toml::Value::Table(mut table) = item else {
                return Err(parse_err(1, format!("variant {i} is not a table")));
            };
            let name = match table.remove("name") {
                Some(toml::Value::String(s)) if !s.is_empty() => s,
                _ => return Err(parse_err(1, format!("variant {i} needs a non-empty `name`"))),
            };
            if variants.iter().any(|v: &Variant| v.name == name) {
                return Err(parse_err(1, format!("duplicate variant name `{name}`")));
            }
            variants.push(Variant { name, overrides: table });
        }
        Ok(SweepSpec { variants })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?, path)
    }
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

impl Variant {
    /// The base config with this variant's overrides applied and validated.
    pub fn apply(&self, base: &ExperimentConfig) -> Result<ExperimentConfig> {
        let toml::Value::Table(mut table) = base.to_value() else {
            unreachable!("config serializes to a table")
        };
        merge(&mut table, &self.overrides);
        let cfg = ExperimentConfig::from_value(toml::Value::Table(table)).map_err(|e| match e {
            Error::Parse { message, .. } => Error::config(format!("variant.{}", self.name), message),
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse `A..B` (inclusive) or a single seed.
pub fn parse_seed_range(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::config("seeds", format!("expected A..B or N, got `{s}`"));
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![s.trim().parse().map_err(|_| bad())?]),
    }
}

/// Final-round summary of one (variant, seed) run, or why it failed.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub variant: String,
    pub seed: u64,
    pub final_round: Option<RoundMetrics>,
    pub error: Option<String>,
}

pub const SUMMARY_HEADER: &str = "variant,seed,test_acc,test_loss,uplink_scalars,uplink_vectors,rejected,error";

impl SweepRow {
    fn csv_row(&self) -> String {
        match (&self.final_round, &self.error) {
            (Some(m), _) => format!(
                "{},{},{},{},{},{},{},",
                self.variant,
                self.seed,
                fmt_sig9(m.test_accuracy),
                fmt_sig9(m.test_loss),
                m.uplink_scalars,
                m.uplink_vectors,
                m.rejected
            ),
            (None, err) => format!(
                "{},{},nan,nan,,,,{}",
                self.variant,
                self.seed,
                err.as_deref().unwrap_or("").replace([',', '\n'], ";")
            ),
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Run every variant for every seed in parallel. Per-run failures become
/// rows with an error; the sweep itself fails only on bad overrides. With
/// `out`, each run writes `out/<variant>/seed_<n>/` and a `summary.csv`
/// with per-seed rows followed by per-variant medians.
pub fn run_sweep(
    base: &ExperimentConfig,
    spec: &SweepSpec,
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    let mut jobs: Vec<(String, ExperimentConfig, Option<PathBuf>)> = Vec::new();
    for v in &spec.variants {
        let cfg = v.apply(base)?;
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            let dir = out.map(|o| o.join(&v.name).join(format!("seed_{seed}")));
            jobs.push((v.name.clone(), c, dir));
        }
    }
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|(name, cfg, dir)| {
            let result = match dir {
                Some(d) => run_to_dir(cfg, d),
                None => run(cfg),
            };
            match result {
                Ok(mut metrics) => SweepRow {
                    variant: name.clone(),
                    seed: cfg.seed,
                    final_round: metrics.pop(),
                    error: None,
                },
                Err(e) => SweepRow {
                    variant: name.clone(),
                    seed: cfg.seed,
                    final_round: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    if let Some(o) = out {
        fs::create_dir_all(o)?;
        fs::write(o.join("summary.csv"), summary_csv(spec, &rows))?;
    }
    Ok(rows)
}

/// Per-seed rows plus one `median` row per variant.
pub fn summary_csv(spec: &SweepSpec, rows: &[SweepRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    for v in &spec.variants {
        let ok: Vec<&RoundMetrics> = rows
            .iter()
            .filter(|r| r.variant == v.name)
            .filter_map(|r| r.final_round.as_ref())
            .collect();
        let acc = median(ok.iter().map(|m| m.test_accuracy).collect());
        let loss = median(ok.iter().map(|m| m.test_loss).collect());
        s.push_str(&format!("{},median,{},{},,,,\n", v.name, fmt_sig9(acc), fmt_sig9(loss)));
    }
    s
}
