//! Base and incremental sessions, evaluation, and the full experiment.
//!
//! Sessions run single-threaded; every random choice flows from the run seed
//! through named sub-streams (initialisation, batching, calibration).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datagen::{downsample, Clip, TaskDataset};
use crate::error::{Error, Result};
use crate::losses::{ce_loss, replay_loss, AgentConfig, CalibrationMode, ReplayMode};
use crate::memory::EpisodicMemory;
use crate::metrics::{AccuracyMatrix, MetricsReport};
use crate::nn::{adam_step, expand_head, AdamVec, InputView, ModelSpec, ModelState, Params};
use crate::sampler::SamplerConfig;
use crate::seed::{tag, SeedTree};

#[derive(Clone, Debug, PartialEq)]
pub struct SessionConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub mode: ReplayMode,
    pub agent: AgentConfig,
    /// Resolution scale of incremental sessions.
    pub delta: f64,
    /// Apply `delta` to the base session too.
    pub delta_everywhere: bool,
    pub sampler: SamplerConfig,
    pub per_class: usize,
    pub multiplier: usize,
    pub segments: usize,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        crate::config::RunConfig::default().session()
    }
}

impl SessionConfig {
    pub fn base_delta(&self) -> f64 {
        if self.delta_everywhere {
            self.delta
        } else {
            1.0
        }
    }
}

/// Mean training loss of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub task: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    /// Exemplars that contributed a replay term (all of them except under EPE).
    pub replay_kept: usize,
}

/// Random sub-streams of one run.
pub struct RunRngs {
    pub init: ChaCha8Rng,
    pub batching: ChaCha8Rng,
    pub calibration: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let root = SeedTree::new(seed);
        RunRngs {
            init: root.child(tag::INIT).rng(),
            batching: root.child(tag::BATCHING).rng(),
            calibration: root.child(tag::CALIBRATION).rng(),
        }
    }
}

fn scale_clips(clips: &[Clip], delta: f64) -> Result<Vec<Clip>> {
    clips.iter().map(|c| downsample(c, delta)).collect()
}

/// Mean CE over `clips`, accumulating `scale`-weighted gradients.
fn ce_batch(view: &InputView, clips: &[&Clip], segments: usize, grads: &mut Params) -> Result<f64> {
    let scale = 1.0 / clips.len() as f64;
    let mut total = 0.0;
    for clip in clips {
        let trace = view.forward(clip, segments)?;
        let (loss, mut dl) = ce_loss(&trace.logits, clip.label)?;
        dl.iter_mut().for_each(|g| *g *= scale);
        view.backward(&trace, &dl, grads)?;
        total += loss * scale;
    }
    Ok(total)
}

fn check_finite(loss: f64, task: usize, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "loss at task {task}, epoch {epoch}, batch {batch}"
        )))
    }
}

/// CE-only training on the base task.
pub fn train_base<R: Rng + ?Sized>(
    model: &mut ModelState,
    task: &TaskDataset,
    cfg: &SessionConfig,
    rng: &mut R,
) -> Result<Vec<EpochLog>> {
    if model.num_classes() != task.label_set.len() {
        return Err(Error::Config(format!(
            "base head has {} outputs for {} base classes",
            model.num_classes(),
            task.label_set.len()
        )));
    }
    let clips = scale_clips(&task.train, cfg.base_delta())?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Clip> = chunk.iter().map(|&i| &clips[i]).collect();
            let view = model.view(batch[0].shape())?;
            let mut grads = view.zero_grads();
            let loss = ce_batch(&view, &batch, cfg.segments, &mut grads)?;
            check_finite(loss, task.task_index, epoch, b)?;
            let grads = view.lift(grads);
            adam_step(model, &grads, cfg.lr)?;
            epoch_loss += loss;
            batches += 1;
        }
        logs.push(EpochLog {
            task: task.task_index,
            epoch,
            mean_loss: epoch_loss / batches.max(1) as f64,
            replay_kept: 0,
        });
    }
    Ok(logs)
}

/// Frozen copy of the model used as the distillation teacher.
pub fn snapshot_teacher(model: &ModelState) -> ModelState {
    model.clone()
}

/// Mutable state carried across incremental sessions besides the model.
pub struct IncrementalState<'a> {
    pub memory: &'a EpisodicMemory,
    pub teacher: Option<&'a ModelState>,
    pub agent: &'a mut AgentConfig,
    pub calibration_adam: &'a mut AdamVec,
    /// Classes learned before this task.
    pub old_classes: usize,
}

/// One incremental session: per step a new-data batch (CE over all classes)
/// plus an equally sized rehearsal batch scored by the replay objective.
pub fn train_incremental(
    model: &mut ModelState,
    task: &TaskDataset,
    state: IncrementalState<'_>,
    cfg: &SessionConfig,
    rngs: &mut RunRngs,
) -> Result<Vec<EpochLog>> {
    let IncrementalState {
        memory,
        teacher,
        agent,
        calibration_adam,
        old_classes,
    } = state;
    let replaying = cfg.mode != ReplayMode::Finetune;
    if replaying && memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    if cfg.mode.needs_teacher(agent.calibration) && teacher.is_none() {
        return Err(Error::Config(format!(
            "{} replay requires a teacher snapshot",
            cfg.mode
        )));
    }
    let learnable =
        cfg.mode == ReplayMode::ScAgent && agent.calibration == CalibrationMode::Learnable;
    let clips = scale_clips(&task.train, cfg.delta)?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rngs.batching);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        let mut kept = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Clip> = chunk.iter().map(|&i| &clips[i]).collect();
            let view = model.view(batch[0].shape())?;
            let mut grads = view.zero_grads();
            let mut loss = ce_batch(&view, &batch, cfg.segments, &mut grads)?;
            let mut grads = view.lift(grads);
            let mut calibration_grad = None;
            if replaying {
                let replay: Vec<Clip> = memory
                    .rehearsal_batch(cfg.batch_size, &mut rngs.batching)?
                    .into_iter()
                    .map(|c| downsample(c, cfg.delta))
                    .collect::<Result<_>>()?;
                let refs: Vec<&Clip> = replay.iter().collect();
                let out = replay_loss(
                    cfg.mode,
                    cfg.lambda,
                    &refs,
                    model,
                    agent,
                    teacher,
                    old_classes,
                    cfg.segments,
                    &mut rngs.calibration,
                )?;
                loss += out.loss;
                kept += out.kept;
                grads.add_scaled(&out.grads, 1.0);
                calibration_grad = out.calibration_grad;
            }
            check_finite(loss, task.task_index, epoch, b)?;
            adam_step(model, &grads, cfg.lr)?;
            if let (true, Some(g)) = (learnable, calibration_grad) {
                calibration_adam.step(&mut agent.learnable_raw, &g, cfg.lr)?;
            }
            epoch_loss += loss;
            batches += 1;
        }
        logs.push(EpochLog {
            task: task.task_index,
            epoch,
            mean_loss: epoch_loss / batches.max(1) as f64,
            replay_kept: kept,
        });
    }
    Ok(logs)
}

/// Percentage of correctly classified test clips, per task.
pub fn evaluate(
    model: &ModelState,
    tasks: &[TaskDataset],
    delta: f64,
    segments: usize,
) -> Result<Vec<f64>> {
    tasks
        .iter()
        .map(|task| {
            if task.test.is_empty() {
                return Err(Error::Config(format!(
                    "task {} has no test clips",
                    task.task_index
                )));
            }
            let mut correct = 0;
            for clip in &task.test {
                let clip = downsample(clip, delta)?;
                let logits = model.view(clip.shape())?.forward(&clip, segments)?.logits;
                let mut best = 0;
                for (i, &v) in logits.iter().enumerate() {
                    if v > logits[best] {
                        best = i;
                    }
                }
                correct += (best == clip.label) as usize;
            }
            Ok(100.0 * correct as f64 / task.test.len() as f64)
        })
        .collect()
}

/// Everything a run produces.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentOutput {
    pub matrix: AccuracyMatrix,
    pub metrics: MetricsReport,
    pub logs: Vec<EpochLog>,
    /// Forward multiplies per incremental training step at the incremental
    /// resolution and the final head width.
    pub multiplies_per_step: u64,
    /// Resolution used for incremental training and evaluation.
    pub eval_delta: f64,
    /// Stored exemplars after each task.
    pub memory_sizes: Vec<usize>,
    pub memory_payload_values: usize,
}

/// Full pipeline: base session, then for each incremental task expand the
/// head, snapshot the teacher, train, refresh memory and evaluate.
pub fn run_experiment(
    stream: &[TaskDataset],
    spec: ModelSpec,
    cfg: &SessionConfig,
) -> Result<ExperimentOutput> {
    let (base, rest) = stream
        .split_first()
        .ok_or_else(|| Error::Config("stream has no tasks".into()))?;
    let mut rngs = RunRngs::new(cfg.seed);
    let mut model = ModelState::new(spec, &mut rngs.init)?;
    expand_head(&mut model, base.label_set.len(), &mut rngs.init);
    let mut logs = train_base(&mut model, base, cfg, &mut rngs.batching)?;

    let mut matrix = AccuracyMatrix::new(stream.len());
    matrix.push_row(evaluate(
        &model,
        &stream[..1],
        cfg.base_delta(),
        cfg.segments,
    )?)?;
    let mut memory = EpisodicMemory::new(cfg.per_class, cfg.multiplier);
    memory.update(base, &model, cfg.segments, cfg.sampler)?;
    let mut memory_sizes = vec![memory.len()];

    let mut agent = cfg.agent.clone();
    let mut calibration_adam = AdamVec::default();
    for (offset, task) in rest.iter().enumerate() {
        let old_classes = model.num_classes();
        if matches!(
            agent.calibration,
            CalibrationMode::Learnable | CalibrationMode::Frozen
        ) {
            agent.grow_learnable(old_classes, &mut rngs.calibration);
            calibration_adam.grow(old_classes);
        }
        let teacher = cfg
            .mode
            .needs_teacher(agent.calibration)
            .then(|| snapshot_teacher(&model));
        expand_head(&mut model, task.label_set.len(), &mut rngs.init);
        let state = IncrementalState {
            memory: &memory,
            teacher: teacher.as_ref(),
            agent: &mut agent,
            calibration_adam: &mut calibration_adam,
            old_classes,
        };
        logs.extend(train_incremental(&mut model, task, state, cfg, &mut rngs)?);
        memory.update(task, &model, cfg.segments, cfg.sampler)?;
        memory_sizes.push(memory.len());
        let seen = &stream[..offset + 2];
        matrix.push_row(evaluate(&model, seen, cfg.delta, cfg.segments)?)?;
    }

    let eval_delta = if rest.is_empty() {
        cfg.base_delta()
    } else {
        cfg.delta
    };
    let shape = downsample(&base.train[0], eval_delta)?.shape();
    let per_clip = model.view(shape)?.multiplies_per_clip(cfg.segments);
    let clips_per_step = if cfg.mode == ReplayMode::Finetune {
        cfg.batch_size
    } else {
        2 * cfg.batch_size
    };
    let metrics = MetricsReport::from_matrix(&matrix)?;
    Ok(ExperimentOutput {
        matrix,
        metrics,
        logs,
        multiplies_per_step: per_clip * clips_per_step as u64,
        eval_delta,
        memory_sizes,
        memory_payload_values: memory.payload_values(),
    })
}
