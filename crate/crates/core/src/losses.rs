//! Supervision signals for base training and replay.
//!
//! Replay on an exemplar combines `λ·CE` over all classes with `(1 − λ)·X`
//! over the old classes, where `X` is one of:
//!
//! - KD: `−Σ σ(t_c) log σ(o_c)` against a frozen teacher's logits `t`;
//! - KD with EPE: the same, dropped for exemplars the teacher misclassifies;
//! - LS: the self-correction loss against a label-smoothed target;
//! - SC: the self-correction loss `−Σ χ_c log σ(o_c)` against the
//!   teacher-agent label `χ = (ŷ + p)^α / Σ (ŷ + p)^α`.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::Clip;
use crate::error::{Error, Result};
use crate::nn::{ModelState, Params};

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln σ(x)`.
fn log_logistic(x: f64) -> f64 {
    -softplus(-x)
}

/// A probability vector over the old classes.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabel(Vec<f64>);

impl TryFrom<Vec<f64>> for SoftLabel {
    type Error = Error;

    /// Accepts finite non-negative entries summing to 1 (within 1e−9).
    fn try_from(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(
                "soft label entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("soft label sums to {sum}, not 1")));
        }
        Ok(SoftLabel(values))
    }
}

impl SoftLabel {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// How the calibration input `p` of the teacher agent is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Constant vector `u`.
    Uniform,
    /// `σ(z)` with fresh `z ~ N(0, 1)` per exemplar.
    Random,
    /// `σ(teacher logits)`.
    Teacher,
    /// `σ(raw)` with `raw` trained alongside the model.
    Learnable,
    /// `σ(raw)` with `raw` fixed at its random initialisation.
    Frozen,
}

impl fmt::Display for CalibrationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CalibrationMode::Uniform => "uniform",
            CalibrationMode::Random => "random",
            CalibrationMode::Teacher => "teacher",
            CalibrationMode::Learnable => "learnable",
            CalibrationMode::Frozen => "frozen",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub alpha: f64,
    pub calibration: CalibrationMode,
    /// Value of every entry of `p` in uniform mode.
    pub uniform_u: f64,
    /// Pre-logistic calibration parameters for learnable / frozen modes, one
    /// per old class.
    pub learnable_raw: Vec<f64>,
    pub ls_epsilon: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            alpha: 0.2,
            calibration: CalibrationMode::Frozen,
            uniform_u: 0.5,
            learnable_raw: Vec::new(),
            ls_epsilon: 0.1,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "replay.alpha: {} is outside (0, 1]",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.uniform_u) {
            return Err(Error::Config(format!(
                "replay.uniform_u: {} is outside [0, 1]",
                self.uniform_u
            )));
        }
        if !(0.0..1.0).contains(&self.ls_epsilon) {
            return Err(Error::Config(format!(
                "replay.ls_epsilon: {} is outside [0, 1)",
                self.ls_epsilon
            )));
        }
        Ok(())
    }

    /// Extends the raw calibration vector to `dims` entries. The first call
    /// draws `0.01 · U[0, 1)`; later growth appends zeros.
    pub fn grow_learnable<R: Rng + ?Sized>(&mut self, dims: usize, rng: &mut R) {
        if self.learnable_raw.is_empty() {
            self.learnable_raw = (0..dims).map(|_| 0.01 * rng.random::<f64>()).collect();
        } else if self.learnable_raw.len() < dims {
            self.learnable_raw.resize(dims, 0.0);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    /// No replay at all.
    Finetune,
    Kd,
    KdEpe,
    Ls,
    ScAgent,
}

impl ReplayMode {
    pub const ALL: [ReplayMode; 5] = [
        ReplayMode::Finetune,
        ReplayMode::Kd,
        ReplayMode::KdEpe,
        ReplayMode::Ls,
        ReplayMode::ScAgent,
    ];

    pub fn needs_teacher(self, calibration: CalibrationMode) -> bool {
        match self {
            ReplayMode::Kd | ReplayMode::KdEpe => true,
            ReplayMode::ScAgent => calibration == CalibrationMode::Teacher,
            _ => false,
        }
    }
}

impl fmt::Display for ReplayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ReplayMode::Finetune => "finetune",
            ReplayMode::Kd => "kd",
            ReplayMode::KdEpe => "kd_epe",
            ReplayMode::Ls => "ls",
            ReplayMode::ScAgent => "sc_agent",
        };
        f.write_str(s)
    }
}

/// The calibration vector `p ∈ [0, 1]^dims`.
pub fn calibration_input<R: Rng + ?Sized>(
    cfg: &AgentConfig,
    dims: usize,
    teacher_logits: Option<&[f64]>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match cfg.calibration {
        CalibrationMode::Uniform => Ok(vec![cfg.uniform_u; dims]),
        CalibrationMode::Random => Ok((0..dims)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                logistic(z)
            })
            .collect()),
        CalibrationMode::Teacher => {
            let t = teacher_logits.ok_or_else(|| {
                Error::Config("teacher calibration requires teacher logits".into())
            })?;
            if t.len() != dims {
                return Err(Error::Shape(format!(
                    "teacher logits have {} entries, expected {dims}",
                    t.len()
                )));
            }
            Ok(t.iter().map(|&x| logistic(x)).collect())
        }
        CalibrationMode::Learnable | CalibrationMode::Frozen => {
            if cfg.learnable_raw.len() < dims {
                return Err(Error::Shape(format!(
                    "learnable calibration has {} entries, expected {dims}",
                    cfg.learnable_raw.len()
                )));
            }
            Ok(cfg.learnable_raw[..dims]
                .iter()
                .map(|&x| logistic(x))
                .collect())
        }
    }
}

fn check_calibration(p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Config(
            "calibration input entries must lie in [0, 1]".into(),
        ));
    }
    Ok(())
}

/// Teacher-agent label for true class `class` and calibration `p`.
pub fn teacher_agent_label_for(class: usize, p: &[f64], alpha: f64) -> Result<SoftLabel> {
    if class >= p.len() {
        return Err(Error::Shape(format!(
            "class {class} outside {} calibration entries",
            p.len()
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("alpha {alpha} is outside (0, 1]")));
    }
    check_calibration(p)?;
    let z: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(c, &pc)| (if c == class { 1.0 + pc } else { pc }).powf(alpha))
        .collect();
    let sum: f64 = z.iter().sum();
    Ok(SoftLabel(z.into_iter().map(|v| v / sum).collect()))
}

/// Teacher-agent label from an explicit one-hot vector.
pub fn teacher_agent_label(y_onehot: &[f64], p: &[f64], alpha: f64) -> Result<SoftLabel> {
    if y_onehot.len() != p.len() {
        return Err(Error::Shape(
            "one-hot and calibration lengths differ".into(),
        ));
    }
    let ones: Vec<usize> = (0..y_onehot.len())
        .filter(|&i| y_onehot[i] == 1.0)
        .collect();
    if ones.len() != 1 || y_onehot.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Config("ground-truth label is not one-hot".into()));
    }
    teacher_agent_label_for(ones[0], p, alpha)
}

/// `dL/dp` given `dL/dχ` for the teacher-agent label.
pub fn teacher_agent_backward(class: usize, p: &[f64], alpha: f64, dchi: &[f64]) -> Vec<f64> {
    let base: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(c, &pc)| if c == class { 1.0 + pc } else { pc })
        .collect();
    let z: Vec<f64> = base.iter().map(|b| b.powf(alpha)).collect();
    let sum: f64 = z.iter().sum();
    let chi: Vec<f64> = z.iter().map(|v| v / sum).collect();
    let weighted: f64 = dchi.iter().zip(&chi).map(|(d, c)| d * c).sum();
    base.iter()
        .zip(dchi)
        .map(|(&b, &d)| (d - weighted) / sum * alpha * b.powf(alpha - 1.0))
        .collect()
}

/// `(1 − ε)·onehot + ε/C`.
pub fn ls_label(classes: usize, class: usize, epsilon: f64) -> Result<SoftLabel> {
    if class >= classes {
        return Err(Error::Shape(format!(
            "class {class} outside {classes} classes"
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!(
            "label smoothing epsilon {epsilon} is outside [0, 1)"
        )));
    }
    let off = epsilon / classes as f64;
    Ok(SoftLabel(
        (0..classes)
            .map(|c| if c == class { 1.0 - epsilon + off } else { off })
            .collect(),
    ))
}

/// Softmax cross-entropy and its gradient `softmax(o) − onehot`.
pub fn ce_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Shape(format!(
            "label {label} outside {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|o| (o - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Self-correction loss `−Σ χ_c log σ(o_c)`; returns the loss, `dL/do` and `dL/dχ`.
pub fn sc_loss(logits: &[f64], chi: &SoftLabel) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if logits.len() != chi.0.len() {
        return Err(Error::Shape(format!(
            "{} logits vs {} soft-label entries",
            logits.len(),
            chi.0.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    let mut dchi = Vec::with_capacity(logits.len());
    for (&o, &x) in logits.iter().zip(&chi.0) {
        let nll = -log_logistic(o);
        loss += x * nll;
        grad.push(x * (logistic(o) - 1.0));
        dchi.push(nll);
    }
    Ok((loss, grad, dchi))
}

/// Logistic distillation `−Σ σ(t_c) log σ(s_c)`; the teacher is constant.
pub fn kd_loss(student: &[f64], teacher: &[f64]) -> Result<(f64, Vec<f64>)> {
    if student.len() != teacher.len() {
        return Err(Error::Shape(format!(
            "{} student vs {} teacher logits",
            student.len(),
            teacher.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(student.len());
    for (&s, &t) in student.iter().zip(teacher) {
        let q = logistic(t);
        loss -= q * log_logistic(s);
        grad.push(q * (logistic(s) - 1.0));
    }
    Ok((loss, grad))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// True where the teacher's prediction agrees with the stored label.
pub fn epe_filter(teacher_logits: &[Vec<f64>], labels: &[usize]) -> Result<Vec<bool>> {
    if teacher_logits.len() != labels.len() {
        return Err(Error::Shape(
            "teacher batch and label batch differ in length".into(),
        ));
    }
    Ok(teacher_logits
        .iter()
        .zip(labels)
        .map(|(t, &l)| !t.is_empty() && argmax(t) == l)
        .collect())
}

/// Loss and logit gradient for one exemplar, plus `dL/dp` when requested.
#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarLoss {
    pub loss: f64,
    pub dlogits: Vec<f64>,
    pub dcalibration: Option<Vec<f64>>,
}

/// Everything needed to score one exemplar.
pub struct ExemplarInputs<'a> {
    pub logits: &'a [f64],
    pub label: usize,
    pub old_classes: usize,
    pub teacher_logits: Option<&'a [f64]>,
    /// `p` for the teacher agent; required in `sc_agent` mode.
    pub calibration: Option<&'a [f64]>,
    /// Whether EPE keeps this exemplar; only read in `kd_epe` mode.
    pub keep: bool,
}

/// `λ·CE(all logits) + (1 − λ)·X(old logits)` for one exemplar.
pub fn exemplar_loss(
    mode: ReplayMode,
    lambda: f64,
    agent: &AgentConfig,
    x: &ExemplarInputs,
) -> Result<ExemplarLoss> {
    let n = x.logits.len();
    if mode == ReplayMode::Finetune {
        return Ok(ExemplarLoss {
            loss: 0.0,
            dlogits: vec![0.0; n],
            dcalibration: None,
        });
    }
    if x.old_classes > n || x.label >= x.old_classes {
        return Err(Error::Shape(format!(
            "exemplar label {} must be an old class (< {}) within {n} logits",
            x.label, x.old_classes
        )));
    }
    let (ce, ce_grad) = ce_loss(x.logits, x.label)?;
    let mut loss = lambda * ce;
    let mut dlogits: Vec<f64> = ce_grad.iter().map(|g| lambda * g).collect();
    let old = &x.logits[..x.old_classes];
    let w = 1.0 - lambda;
    let mut dcalibration = None;
    let (term, grad) = match mode {
        ReplayMode::Finetune => unreachable!(),
        ReplayMode::Kd | ReplayMode::KdEpe => {
            let t = x.teacher_logits.ok_or_else(|| {
                Error::Config(format!("{mode} replay requires a teacher snapshot"))
            })?;
            if mode == ReplayMode::KdEpe && !x.keep {
                (0.0, vec![0.0; x.old_classes])
            } else {
                kd_loss(old, t)?
            }
        }
        ReplayMode::Ls => {
            let chi = ls_label(x.old_classes, x.label, agent.ls_epsilon)?;
            let (l, g, _) = sc_loss(old, &chi)?;
            (l, g)
        }
        ReplayMode::ScAgent => {
            let p = x.calibration.ok_or_else(|| {
                Error::Config("sc_agent replay requires a calibration input".into())
            })?;
            let chi = teacher_agent_label_for(x.label, p, agent.alpha)?;
            let (l, g, dchi) = sc_loss(old, &chi)?;
            let scaled: Vec<f64> = dchi.iter().map(|d| w * d).collect();
            dcalibration = Some(teacher_agent_backward(x.label, p, agent.alpha, &scaled));
            (l, g)
        }
    };
    loss += w * term;
    dlogits.iter_mut().zip(&grad).for_each(|(d, g)| *d += w * g);
    Ok(ExemplarLoss {
        loss,
        dlogits,
        dcalibration,
    })
}

/// Mean replay loss over a rehearsal batch and its gradients.
#[derive(Clone, Debug)]
pub struct ReplayOutcome {
    pub loss: f64,
    pub grads: Params,
    /// Gradient for `AgentConfig::learnable_raw` in learnable mode.
    pub calibration_grad: Option<Vec<f64>>,
    pub kept: usize,
}

/// Replay objective for a batch of exemplars already at the model's input
/// resolution. `old_classes` is the number of classes before the current task.
#[allow(clippy::too_many_arguments)]
pub fn replay_loss<R: Rng + ?Sized>(
    mode: ReplayMode,
    lambda: f64,
    batch: &[&Clip],
    model: &ModelState,
    agent: &AgentConfig,
    teacher: Option<&ModelState>,
    old_classes: usize,
    segments: usize,
    rng: &mut R,
) -> Result<ReplayOutcome> {
    if mode == ReplayMode::Finetune {
        return Ok(ReplayOutcome {
            loss: 0.0,
            grads: model.params.zeros_like(),
            calibration_grad: None,
            kept: 0,
        });
    }
    if batch.is_empty() {
        return Err(Error::EmptyMemory);
    }
    if mode.needs_teacher(agent.calibration) && teacher.is_none() {
        return Err(Error::Config(format!(
            "{mode} replay requires a teacher snapshot"
        )));
    }
    let shape = batch[0].shape();
    let view = model.view(shape)?;
    let teacher_view = teacher.map(|t| t.view(shape)).transpose()?;
    let mut grads = view.zero_grads();
    let mut total = 0.0;
    let mut kept = 0;
    let learnable = mode == ReplayMode::ScAgent && agent.calibration == CalibrationMode::Learnable;
    let mut calibration_grad = learnable.then(|| vec![0.0; agent.learnable_raw.len()]);
    let scale = 1.0 / batch.len() as f64;
    for clip in batch {
        let trace = view.forward(clip, segments)?;
        let teacher_logits = match &teacher_view {
            Some(tv) => Some(tv.forward(clip, segments)?.logits),
            None => None,
        };
        let keep = match (&teacher_logits, mode) {
            (Some(t), ReplayMode::KdEpe) => epe_filter(std::slice::from_ref(t), &[clip.label])?[0],
            _ => true,
        };
        kept += keep as usize;
        let calibration = if mode == ReplayMode::ScAgent {
            Some(calibration_input(
                agent,
                old_classes,
                teacher_logits.as_deref(),
                rng,
            )?)
        } else {
            None
        };
        let out = exemplar_loss(
            mode,
            lambda,
            agent,
            &ExemplarInputs {
                logits: &trace.logits,
                label: clip.label,
                old_classes,
                teacher_logits: teacher_logits.as_deref(),
                calibration: calibration.as_deref(),
                keep,
            },
        )?;
        total += out.loss * scale;
        let dl: Vec<f64> = out.dlogits.iter().map(|g| g * scale).collect();
        view.backward(&trace, &dl, &mut grads)?;
        if let (Some(acc), Some(dp), Some(p)) =
            (&mut calibration_grad, &out.dcalibration, &calibration)
        {
            for k in 0..dp.len() {
                // dp/draw = σ'(raw) = p(1 − p)
                acc[k] += scale * dp[k] * p[k] * (1.0 - p[k]);
            }
        }
    }
    Ok(ReplayOutcome {
        loss: total,
        grads: view.lift(grads),
        calibration_grad,
        kept,
    })
}

/// One row of the binary-unit gradient comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Table1Row {
    pub conf: f64,
    pub ce_grad: f64,
    pub ls_grad: f64,
}

/// Reference rows `(conf, CE, CE & SC, SC, LS)`.
pub const TABLE1_REFERENCE: [(f64, f64, f64, f64, f64); 4] = [
    (0.9, -0.3100, -0.1503, 0.0095, -0.2100),
    (0.8, -0.3543, -0.1740, 0.0063, -0.2543),
    (0.2, -0.6457, -0.3317, -0.0178, -0.5457),
    (0.1, -0.6900, -0.3560, -0.0221, -0.5900),
];

/// Gradients of a single-logit binary unit with target 1 under a
/// confidence-to-logit convention: CE gives `σ(o) − 1`, and a 0.9 smoothed
/// target gives `σ(o) − 0.9`.
pub fn table1_rows(convention: impl Fn(f64) -> f64) -> Vec<Table1Row> {
    TABLE1_REFERENCE
        .iter()
        .map(|&(conf, ..)| {
            let s = logistic(convention(conf));
            Table1Row {
                conf,
                ce_grad: s - 1.0,
                ls_grad: s - 0.9,
            }
        })
        .collect()
}

/// Rows under the convention `o = 2·conf − 1`.
pub fn table1_diagnostic() -> Vec<Table1Row> {
    table1_rows(|conf| 2.0 * conf - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Table1Check {
    pub row: Table1Row,
    pub ce_error: f64,
    pub ls_error: f64,
    /// `|CE&SC − ½(CE + SC)|` on the reference values.
    pub combination_error: f64,
    pub pass: bool,
}

pub const TABLE1_TOLERANCE: f64 = 5e-5;

/// Compares computed rows against the reference columns. The combination
/// check is a 4-decimal rounding test, so it allows half a unit in the last place.
pub fn check_table1(rows: &[Table1Row]) -> Vec<Table1Check> {
    rows.iter()
        .zip(TABLE1_REFERENCE.iter())
        .map(|(row, &(_, ce, ce_sc, sc, ls))| {
            let ce_error = (row.ce_grad - ce).abs();
            let ls_error = (row.ls_grad - ls).abs();
            let combination_error = (ce_sc - 0.5 * (ce + sc)).abs();
            let pass = ce_error <= TABLE1_TOLERANCE
                && ls_error <= TABLE1_TOLERANCE
                && combination_error <= 0.5e-4 + 1e-12;
            Table1Check {
                row: *row,
                ce_error,
                ls_error,
                combination_error,
                pass,
            }
        })
        .collect()
}
