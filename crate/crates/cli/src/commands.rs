//! Subcommand implementations.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use cilforge_core::audit::{audit_suite, AuditGeometry, Fault, FD_TOLERANCE};
use cilforge_core::config::parse_override;
use cilforge_core::datagen::generate_stream;
use cilforge_core::losses::{check_table1, table1_diagnostic, table1_rows, TABLE1_TOLERANCE};
use cilforge_core::trainer::{run_experiment, ExperimentOutput};
use cilforge_core::{Error as CoreError, RunConfig};
use rayon::prelude::*;

use crate::output::{self, csv_bytes, fmt_f64, write_atomic, SUMMARY};
use crate::{Cli, Command, ConfigArgs, ConventionArg, FaultArg};

/// Axes accepted by `sweep`.
pub const SWEEP_AXES: [&str; 6] = [
    "replay.mode",
    "input.delta",
    "memory.multiplier",
    "stream.tasks",
    "model.hidden",
    "replay.alpha",
];

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Invalid configuration or arguments: exit 2.
    Config(anyhow::Error),
    /// Anything that went wrong while running: exit 1.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn runtime(e: anyhow::Error) -> Self {
        match e.downcast_ref::<CoreError>() {
            Some(CoreError::Config(_)) => Failure::Config(e),
            _ => Failure::Runtime(e),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config error: {e:#}"),
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::runtime(e)
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

/// Runs a parsed command; `Ok` carries the exit code of a completed check.
pub fn execute(cli: Cli) -> CmdResult<u8> {
    match cli.command {
        Command::Run { config, out } => cmd_run(&config, out.as_deref()).map(|_| 0),
        Command::Sweep {
            config,
            axis,
            values,
            out,
            jobs,
        } => cmd_sweep(&config, &axis, &values, out.as_deref(), jobs).map(|_| 0),
        Command::Gradcheck {
            config,
            cases,
            inject_fault,
        } => cmd_gradcheck(&config, cases, inject_fault),
        Command::Table1 { convention } => Ok(cmd_table1(convention)),
        Command::Compare { first, second, out } => {
            cmd_compare(&first, &second, out.as_deref()).map(|_| 0)
        }
    }
}

/// Reads the config file (or `{}`), applies `--override`s then `--seed`, validates.
pub fn load_config(args: &ConfigArgs, extra: &[(String, String)]) -> CmdResult<RunConfig> {
    let text = match &args.config {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("reading config {}", p.display()))
            .map_err(Failure::Config)?,
        None => "{}".to_string(),
    };
    let mut overrides = args
        .overrides
        .iter()
        .map(|o| parse_override(o))
        .collect::<cilforge_core::Result<Vec<_>>>()
        .map_err(|e| Failure::Config(e.into()))?;
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(n) = args.keyframes {
        overrides.push(("memory.keyframes".into(), n.to_string()));
    }
    if let Some(g) = args.gamma {
        overrides.push(("memory.gamma".into(), format!("{g:?}")));
    }
    overrides.extend_from_slice(extra);
    RunConfig::from_json_with_overrides(&text, &overrides).map_err(|e| Failure::Config(e.into()))
}

/// Generates the stream and runs the full pipeline.
pub fn execute_config(cfg: &RunConfig) -> anyhow::Result<ExperimentOutput> {
    let stream = generate_stream(&cfg.resolved_stream())?;
    Ok(run_experiment(&stream, cfg.model_spec(), &cfg.session())?)
}

pub fn cmd_run(args: &ConfigArgs, out: Option<&Path>) -> CmdResult<PathBuf> {
    let cfg = load_config(args, &[])?;
    let dir = output::resolve_out_dir(out, &cfg, "run");
    let result = execute_config(&cfg)?;
    output::write_run(&dir, &cfg, &result)?;
    let m = &result.metrics;
    println!(
        "acc {:.3}  bwf {:.3}  gaa {:.3}  multiplies/step {}  -> {}",
        m.acc,
        m.bwf,
        m.gaa,
        result.multiplies_per_step,
        dir.display()
    );
    Ok(dir)
}

/// Directory-safe name for one sweep point.
fn point_dir(axis: &str, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{axis}={clean}")
}

/// One row per value and metric in `summary.csv`.
pub struct SweepPoint {
    pub value: String,
    pub output: ExperimentOutput,
}

pub fn cmd_sweep(
    args: &ConfigArgs,
    axis: &str,
    values: &[String],
    out: Option<&Path>,
    jobs: Option<usize>,
) -> CmdResult<Vec<SweepPoint>> {
    if !SWEEP_AXES.contains(&axis) {
        return Err(Failure::Config(anyhow!(
            "unknown sweep axis `{axis}`; expected one of {}",
            SWEEP_AXES.join(", ")
        )));
    }
    if values.is_empty() {
        return Err(Failure::Config(anyhow!("sweep needs at least one value")));
    }
    // every point is validated before anything runs
    let configs = values
        .iter()
        .map(|v| {
            load_config(args, &[(axis.to_string(), v.trim().to_string())])
                .map(|c| (v.trim().to_string(), c))
        })
        .collect::<CmdResult<Vec<_>>>()?;
    let base = load_config(args, &[])?;
    let root = output::resolve_out_dir(out, &base, &format!("sweep-{axis}"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Runtime(e.into()))?;
    let results: Vec<anyhow::Result<SweepPoint>> = pool.install(|| {
        configs
            .par_iter()
            .map(|(value, cfg)| {
                let result = execute_config(cfg).with_context(|| format!("{axis}={value}"))?;
                output::write_run(&root.join(point_dir(axis, value)), cfg, &result)?;
                Ok(SweepPoint {
                    value: value.clone(),
                    output: result,
                })
            })
            .collect()
    });
    let points = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for p in &points {
        let m = &p.output.metrics;
        for (metric, score) in [
            ("acc", fmt_f64(m.acc)),
            ("bwf", fmt_f64(m.bwf)),
            ("gaa", fmt_f64(m.gaa)),
            ("step_mults", p.output.multiplies_per_step.to_string()),
        ] {
            rows.push(vec![
                axis.to_string(),
                p.value.clone(),
                metric.to_string(),
                score,
            ]);
        }
        println!(
            "{axis}={:<10} acc {:8.3}  bwf {:8.3}  gaa {:8.3}",
            p.value, m.acc, m.bwf, m.gaa
        );
    }
    write_atomic(
        &root.join(SUMMARY),
        &csv_bytes(&["axis", "value", "metric", "score"], rows)?,
    )?;
    println!("summary -> {}", root.join(SUMMARY).display());
    Ok(points)
}

pub fn cmd_gradcheck(args: &ConfigArgs, cases: usize, fault: FaultArg) -> CmdResult<u8> {
    let cfg = load_config(args, &[])?;
    if cases == 0 {
        return Err(Failure::Config(anyhow!("--cases must be at least 1")));
    }
    let geometry = AuditGeometry {
        hidden: if cfg.model.hidden == 0 {
            0
        } else {
            AuditGeometry::default().hidden
        },
        ..AuditGeometry::default()
    };
    let fault = match fault {
        FaultArg::None => Fault::None,
        FaultArg::FlipSign => Fault::FlipSign,
    };
    let reports =
        audit_suite(cfg.seed, cases, geometry, fault).map_err(|e| Failure::runtime(e.into()))?;
    println!(
        "{:<22} {:>14} {:>10}  result",
        "mode", "max_rel_error", "params"
    );
    let mut worst: f64 = 0.0;
    for r in &reports {
        let pass = r.max_rel_error <= FD_TOLERANCE;
        println!(
            "{:<22} {:>14.3e} {:>10}  {}",
            r.mode.to_string(),
            r.max_rel_error,
            r.params_checked,
            if pass { "pass" } else { "FAIL" }
        );
        worst = worst.max(r.max_rel_error);
    }
    println!(
        "worst relative error {worst:.3e} over {cases} configurations (tolerance {FD_TOLERANCE:e})"
    );
    Ok(if worst <= FD_TOLERANCE { 0 } else { 1 })
}

pub fn cmd_table1(convention: ConventionArg) -> u8 {
    let rows = match convention {
        ConventionArg::Affine => table1_diagnostic(),
        ConventionArg::Identity => table1_rows(|conf| conf),
    };
    let checks = check_table1(&rows);
    println!(
        "{:>5} {:>10} {:>10} {:>10} {:>10} {:>10}  result",
        "conf", "ce_grad", "ce_err", "ls_grad", "ls_err", "comb_err"
    );
    for c in &checks {
        println!(
            "{:>5.1} {:>10.6} {:>10.2e} {:>10.6} {:>10.2e} {:>10.2e}  {}",
            c.row.conf,
            c.row.ce_grad,
            c.ce_error,
            c.row.ls_grad,
            c.ls_error,
            c.combination_error,
            if c.pass { "pass" } else { "MISMATCH" }
        );
    }
    let ok = checks.iter().all(|c| c.pass);
    println!(
        "{} (tolerance {TABLE1_TOLERANCE:e})",
        if ok { "all rows match" } else { "mismatch" }
    );
    if ok {
        0
    } else {
        1
    }
}

/// Numeric metric deltas `second − first`.
pub fn cmd_compare(
    first: &Path,
    second: &Path,
    out: Option<&Path>,
) -> CmdResult<Vec<(String, f64, f64)>> {
    let a = output::read_metrics(first)?;
    let b = output::read_metrics(second)?;
    let mut rows = Vec::new();
    for (key, va) in &a {
        let Some((_, vb)) = b.iter().find(|(k, _)| k == key) else {
            continue;
        };
        if let (Ok(x), Ok(y)) = (va.parse::<f64>(), vb.parse::<f64>()) {
            rows.push((key.clone(), x, y));
        }
    }
    println!(
        "{:<22} {:>14} {:>14} {:>14}",
        "metric", "first", "second", "delta"
    );
    for (k, x, y) in &rows {
        println!("{k:<22} {x:>14.4} {y:>14.4} {:>14.4}", y - x);
    }
    if let Some(path) = out {
        let csv_rows = rows
            .iter()
            .map(|(k, x, y)| vec![k.clone(), fmt_f64(*x), fmt_f64(*y), fmt_f64(y - x)]);
        write_atomic(
            path,
            &csv_bytes(&["metric", "first", "second", "delta"], csv_rows)?,
        )?;
    }
    Ok(rows)
}
