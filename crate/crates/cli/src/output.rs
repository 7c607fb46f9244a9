//! Result files: atomic writes, CSV layouts and the config fingerprint.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cilforge_core::trainer::ExperimentOutput;
use cilforge_core::{RunConfig, VERSION};
use sha2::{Digest, Sha256};

pub const ACCURACY_MATRIX: &str = "accuracy_matrix.csv";
pub const METRICS: &str = "metrics.csv";
pub const RUN_META: &str = "run_meta.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const SUMMARY: &str = "summary.csv";

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CILFORGE_OUT";
const DEFAULT_ROOT: &str = "results";

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Renders `header` plus `rows` as CSV.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner()
        .map_err(|e| anyhow::anyhow!("flushing csv: {e}"))
}

/// SHA-256 of the canonical config JSON with the output location removed,
/// so the same experiment hashes identically wherever it is written.
pub fn config_hash(cfg: &RunConfig) -> String {
    let canonical = RunConfig {
        output_dir: None,
        ..cfg.clone()
    };
    let digest = Sha256::digest(serde_json::to_vec(&canonical).expect("config serialises"));
    hex::encode(digest)[..16].to_string()
}

/// `--out`, then the config's `output_dir`, then `$CILFORGE_OUT/<prefix>-<hash>`.
pub fn resolve_out_dir(cli_out: Option<&Path>, cfg: &RunConfig, prefix: &str) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return PathBuf::from(p);
    }
    let root = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT));
    root.join(format!("{prefix}-{}", config_hash(cfg)))
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes the four per-run files into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, out: &ExperimentOutput) -> Result<()> {
    let matrix = out.matrix.rows().iter().enumerate().flat_map(|(i, row)| {
        row.iter()
            .enumerate()
            .map(move |(j, a)| vec![(i + 1).to_string(), (j + 1).to_string(), fmt_f64(*a)])
    });
    write_atomic(
        &dir.join(ACCURACY_MATRIX),
        &csv_bytes(&["after_task", "eval_task", "accuracy_percent"], matrix)?,
    )?;

    let m = &out.metrics;
    let metrics = vec![vec![
        fmt_f64(m.acc),
        fmt_f64(m.bwf),
        m.bwf_defined.to_string(),
        fmt_f64(m.gaa),
        out.multiplies_per_step.to_string(),
        config_hash(cfg),
    ]];
    write_atomic(
        &dir.join(METRICS),
        &csv_bytes(
            &[
                "acc",
                "bwf",
                "bwf_defined",
                "gaa",
                "multiplies_per_step",
                "config_hash",
            ],
            metrics,
        )?,
    )?;

    let log = out.logs.iter().map(|l| {
        vec![
            (l.task + 1).to_string(),
            (l.epoch + 1).to_string(),
            fmt_f64(l.mean_loss),
            l.replay_kept.to_string(),
        ]
    });
    write_atomic(
        &dir.join(TRAIN_LOG),
        &csv_bytes(&["task", "epoch", "mean_loss", "replay_kept"], log)?,
    )?;

    let meta = serde_json::json!({
        "version": VERSION,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "eval_delta": out.eval_delta,
        "memory_sizes": out.memory_sizes,
        "memory_payload_values": out.memory_payload_values,
        "config": cfg,
    });
    write_atomic(
        &dir.join(RUN_META),
        serde_json::to_string_pretty(&meta)?.as_bytes(),
    )?;
    Ok(())
}

/// Parsed `metrics.csv`: (column, value) pairs in file order.
pub fn read_metrics(dir: &Path) -> Result<Vec<(String, String)>> {
    let path = dir.join(METRICS);
    let mut r =
        csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let row = r
        .records()
        .next()
        .ok_or_else(|| anyhow::anyhow!("{} has no data row", path.display()))??;
    Ok(header
        .into_iter()
        .zip(row.iter().map(str::to_string))
        .collect())
}
