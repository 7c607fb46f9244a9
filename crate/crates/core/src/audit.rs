//! Finite-difference audit of every analytic gradient path.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datagen::{Clip, FrameShape};
use crate::error::{Error, Result};
use crate::losses::{ce_loss, replay_loss, AgentConfig, CalibrationMode, ReplayMode};
use crate::nn::{backward, expand_head, ModelSpec, ModelState, Params};
use crate::seed::{tag, SeedTree};

/// Loss paths covered by the audit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditMode {
    Ce,
    Kd,
    KdEpe,
    Ls,
    ScAgent(CalibrationMode),
}

impl AuditMode {
    pub const ALL: [AuditMode; 9] = [
        AuditMode::Ce,
        AuditMode::Kd,
        AuditMode::KdEpe,
        AuditMode::Ls,
        AuditMode::ScAgent(CalibrationMode::Uniform),
        AuditMode::ScAgent(CalibrationMode::Random),
        AuditMode::ScAgent(CalibrationMode::Teacher),
        AuditMode::ScAgent(CalibrationMode::Learnable),
        AuditMode::ScAgent(CalibrationMode::Frozen),
    ];

    fn replay(self) -> Option<(ReplayMode, Option<CalibrationMode>)> {
        match self {
            AuditMode::Ce => None,
            AuditMode::Kd => Some((ReplayMode::Kd, None)),
            AuditMode::KdEpe => Some((ReplayMode::KdEpe, None)),
            AuditMode::Ls => Some((ReplayMode::Ls, None)),
            AuditMode::ScAgent(c) => Some((ReplayMode::ScAgent, Some(c))),
        }
    }
}

impl fmt::Display for AuditMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuditMode::Ce => f.write_str("ce"),
            AuditMode::Kd => f.write_str("kd"),
            AuditMode::KdEpe => f.write_str("kd_epe"),
            AuditMode::Ls => f.write_str("ls"),
            AuditMode::ScAgent(c) => write!(f, "sc_agent/{c}"),
        }
    }
}

/// Deliberate gradient corruption, for negative controls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Negates the analytic gradient.
    FlipSign,
}

/// One audited configuration: student, frozen teacher, exemplar and agent.
#[derive(Clone, Debug)]
pub struct AuditCase {
    pub model: ModelState,
    pub teacher: ModelState,
    pub clip: Clip,
    pub old_classes: usize,
    pub lambda: f64,
    pub agent: AgentConfig,
    pub segments: usize,
    pub calibration_seed: u64,
}

/// Geometry of a seeded audit case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditGeometry {
    pub frame_shape: FrameShape,
    pub frames: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub old_classes: usize,
    pub new_classes: usize,
    pub segments: usize,
}

impl Default for AuditGeometry {
    fn default() -> Self {
        AuditGeometry {
            frame_shape: FrameShape::new(2, 2, 2),
            frames: 6,
            hidden: 5,
            embed_dim: 4,
            old_classes: 3,
            new_classes: 2,
            segments: 4,
        }
    }
}

impl AuditCase {
    /// Random student and teacher with O(1) head weights, a random clip of
    /// an old class, and random learnable calibration parameters.
    pub fn seeded(seed: u64, geometry: AuditGeometry) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ModelSpec {
            frame_shape: geometry.frame_shape,
            hidden: geometry.hidden,
            embed_dim: geometry.embed_dim,
        };
        let mut teacher = ModelState::new(spec, &mut rng)?;
        expand_head(&mut teacher, geometry.old_classes, &mut rng);
        jitter(&mut teacher.params, 1.0, &mut rng, true);
        let mut model = teacher.clone();
        expand_head(&mut model, geometry.new_classes, &mut rng);
        jitter(&mut model.params, 0.3, &mut rng, false);
        let data = (0..geometry.frames * geometry.frame_shape.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            })
            .collect();
        let label = rng.random_range(0..geometry.old_classes);
        let clip = Clip::new(label, seed, geometry.frame_shape, data)?;
        let agent = AgentConfig {
            alpha: 0.1 + 0.9 * rng.random::<f64>(),
            learnable_raw: (0..geometry.old_classes)
                .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                .collect(),
            ..AgentConfig::default()
        };
        Ok(AuditCase {
            model,
            teacher,
            clip,
            old_classes: geometry.old_classes,
            lambda: 0.5,
            agent,
            segments: geometry.segments,
            calibration_seed: seed ^ 0xA5A5,
        })
    }

    fn agent_for(&self, mode: AuditMode) -> AgentConfig {
        let mut agent = self.agent.clone();
        if let AuditMode::ScAgent(c) = mode {
            agent.calibration = c;
        }
        agent
    }

    /// Loss and analytic gradients (model, learnable calibration).
    fn evaluate(
        &self,
        mode: AuditMode,
        model: &ModelState,
        agent: &AgentConfig,
    ) -> Result<(f64, Params, Vec<f64>)> {
        match mode.replay() {
            None => {
                let view = model.view(self.clip.shape())?;
                let trace = view.forward(&self.clip, self.segments)?;
                let (loss, dl) = ce_loss(&trace.logits, self.clip.label)?;
                let grads = backward(model, &self.clip, self.segments, &dl)?;
                Ok((loss, grads, Vec::new()))
            }
            Some((replay, _)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.calibration_seed);
                let out = replay_loss(
                    replay,
                    self.lambda,
                    &[&self.clip],
                    model,
                    agent,
                    Some(&self.teacher),
                    self.old_classes,
                    self.segments,
                    &mut rng,
                )?;
                Ok((
                    out.loss,
                    out.grads,
                    out.calibration_grad.unwrap_or_default(),
                ))
            }
        }
    }
}

/// Gives the head O(1) weights (replacing them when `reset_head`, otherwise
/// perturbing) and nudges every bias off zero.
fn jitter<R: Rng + ?Sized>(params: &mut Params, head_std: f64, rng: &mut R, reset_head: bool) {
    let gauss = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
    for w in params.head.weights.iter_mut() {
        let z = gauss(rng) * head_std;
        *w = if reset_head { z } else { *w + z };
    }
    for b in params.head.bias.iter_mut() {
        *b += 0.3 * gauss(rng);
    }
    for layer in &mut params.layers {
        for b in layer.bias.iter_mut() {
            *b += 0.1 * gauss(rng);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub mode: AuditMode,
    /// Max over parameters of `|analytic − numeric| / max(1e−12, |numeric|)`.
    pub max_rel_error: f64,
    pub params_checked: usize,
}

/// Step of the five-point central stencil.
pub const FD_STEP: f64 = 1e-3;

/// Pass threshold on the worst relative error.
pub const FD_TOLERANCE: f64 = 1e-5;

/// Fourth-order central difference `(8(f₊₁ − f₋₁) − (f₊₂ − f₋₂)) / 12h`.
/// Its O(h⁴) truncation error allows a step large enough that roundoff in the
/// loss stays negligible even for very small gradients.
fn central_difference(mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let h = FD_STEP;
    let d1 = f(h)? - f(-h)?;
    let d2 = f(2.0 * h)? - f(-2.0 * h)?;
    Ok((8.0 * d1 - d2) / (12.0 * h))
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-12)
}

/// Compares analytic gradients with fourth-order central differences for every model
/// parameter, and for the raw calibration parameters in learnable mode.
pub fn finite_diff_audit(case: &AuditCase, mode: AuditMode, fault: Fault) -> Result<AuditReport> {
    let agent = case.agent_for(mode);
    let (_, mut grads, mut cal_grad) = case.evaluate(mode, &case.model, &agent)?;
    if fault == Fault::FlipSign {
        grads.scale(-1.0);
        cal_grad.iter_mut().for_each(|g| *g = -*g);
    }
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe = case.model.clone();
    let analytic = grads
        .slices()
        .into_iter()
        .map(<[f64]>::to_vec)
        .collect::<Vec<_>>();
    for (s, analytic_slice) in analytic.iter().enumerate() {
        for (i, &analytic_value) in analytic_slice.iter().enumerate() {
            let original = probe.params.slices()[s][i];
            let numeric = central_difference(|dx| {
                probe.params.slices_mut()[s][i] = original + dx;
                case.evaluate(mode, &probe, &agent).map(|r| r.0)
            })?;
            probe.params.slices_mut()[s][i] = original;
            worst = worst.max(relative_error(analytic_value, numeric));
            checked += 1;
        }
    }
    if mode == AuditMode::ScAgent(CalibrationMode::Learnable) {
        if cal_grad.len() != agent.learnable_raw.len() {
            return Err(Error::Invariant(
                "missing calibration gradient in learnable mode".into(),
            ));
        }
        let mut probe_agent = agent.clone();
        for (i, &analytic_value) in cal_grad.iter().enumerate() {
            let original = probe_agent.learnable_raw[i];
            let numeric = central_difference(|dx| {
                probe_agent.learnable_raw[i] = original + dx;
                case.evaluate(mode, &case.model, &probe_agent).map(|r| r.0)
            })?;
            probe_agent.learnable_raw[i] = original;
            worst = worst.max(relative_error(analytic_value, numeric));
            checked += 1;
        }
    }
    Ok(AuditReport {
        mode,
        max_rel_error: worst,
        params_checked: checked,
    })
}

/// Runs every audit mode on one case.
pub fn audit_all(case: &AuditCase, fault: Fault) -> Result<Vec<AuditReport>> {
    AuditMode::ALL
        .iter()
        .map(|&m| finite_diff_audit(case, m, fault))
        .collect()
}

/// Worst result per mode over `cases` seeded configurations derived from `seed`.
pub fn audit_suite(
    seed: u64,
    cases: usize,
    geometry: AuditGeometry,
    fault: Fault,
) -> Result<Vec<AuditReport>> {
    let mut worst: Vec<AuditReport> = AuditMode::ALL
        .iter()
        .map(|&mode| AuditReport {
            mode,
            max_rel_error: 0.0,
            params_checked: 0,
        })
        .collect();
    let root = SeedTree::new(seed).child(tag::AUDIT);
    for i in 0..cases {
        let case = AuditCase::seeded(root.child(i as u64).value(), geometry)?;
        for (acc, r) in worst.iter_mut().zip(audit_all(&case, fault)?) {
            acc.max_rel_error = acc.max_rel_error.max(r.max_rel_error);
            acc.params_checked += r.params_checked;
        }
    }
    Ok(worst)
}
