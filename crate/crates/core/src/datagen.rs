//! Synthetic clip streams, spatial resolution scaling and the binary clip file format.
//!
//! Every class owns a static prototype grid plus an intensity blob that
//! oscillates along a class-specific axis at a class-specific frequency.
//! Clips of one class differ by the oscillation phase and additive noise, so
//! both fine spatial detail and temporal structure carry label information.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedTree;

/// Dimensions of one frame: channels × height × width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FrameShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        FrameShape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Integer pooling factor mapping `native` onto `self`, if `self` is a
    /// block-average of `native`.
    pub fn pooling_factor_from(&self, native: &FrameShape) -> Option<usize> {
        if self.channels != native.channels || self.height == 0 || self.width == 0 {
            return None;
        }
        if !native.height.is_multiple_of(self.height) || !native.width.is_multiple_of(self.width) {
            return None;
        }
        let k = native.height / self.height;
        (native.width / self.width == k).then_some(k)
    }
}

/// A labelled sequence of frames stored contiguously, frame-major, then
/// channel, row, column.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub label: usize,
    pub clip_id: u64,
    shape: FrameShape,
    frames: usize,
    data: Vec<f64>,
}

impl Clip {
    pub fn new(label: usize, clip_id: u64, shape: FrameShape, data: Vec<f64>) -> Result<Self> {
        let frame_len = shape.len();
        if frame_len == 0 {
            return Err(Error::Shape("frame shape has a zero dimension".into()));
        }
        if data.is_empty() || !data.len().is_multiple_of(frame_len) {
            return Err(Error::Shape(format!(
                "clip payload of {} values is not a positive multiple of frame size {frame_len}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "clip {clip_id} value at offset {pos}"
            )));
        }
        Ok(Clip {
            label,
            clip_id,
            shape,
            frames: data.len() / frame_len,
            data,
        })
    }

    /// Builds a clip of scalar (1×1×1) frames; handy for sampler work.
    pub fn from_scalars(label: usize, values: &[f64]) -> Result<Self> {
        Clip::new(label, 0, FrameShape::new(1, 1, 1), values.to_vec())
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn frame(&self, index: usize) -> &[f64] {
        let n = self.shape.len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.shape.len())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Sub-clip made of the given frame indices, in the given order.
    pub fn select_frames(&self, indices: &[usize]) -> Result<Clip> {
        if indices.is_empty() {
            return Err(Error::Shape("cannot build a clip with no frames".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * self.shape.len());
        for &i in indices {
            if i >= self.frames {
                return Err(Error::Shape(format!(
                    "frame index {i} out of range for {} frames",
                    self.frames
                )));
            }
            data.extend_from_slice(self.frame(i));
        }
        Ok(Clip {
            label: self.label,
            clip_id: self.clip_id,
            shape: self.shape,
            frames: indices.len(),
            data,
        })
    }

    /// Multiplies every value by `factor`.
    pub fn scaled(&self, factor: f64) -> Clip {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }
}

/// Geometry and difficulty of a synthetic stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub total_classes: usize,
    pub base_classes: usize,
    pub classes_per_task: usize,
    pub train_clips_per_class: usize,
    pub test_clips_per_class: usize,
    pub frames_per_clip: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub prototype_scale: f64,
    pub motion_amplitude: f64,
    pub noise_std: f64,
    /// Derived from the run seed; never read from or written to config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            total_classes: 20,
            base_classes: 2,
            classes_per_task: 2,
            train_clips_per_class: 30,
            test_clips_per_class: 20,
            frames_per_clip: 32,
            channels: 3,
            height: 8,
            width: 8,
            prototype_scale: 1.0,
            motion_amplitude: 2.0,
            noise_std: 3.0,
            seed: 0,
        }
    }
}

impl StreamConfig {
    pub fn frame_shape(&self) -> FrameShape {
        FrameShape::new(self.channels, self.height, self.width)
    }

    /// Number of tasks including the base task.
    pub fn num_tasks(&self) -> usize {
        if self.classes_per_task == 0 || self.total_classes < self.base_classes {
            return 0;
        }
        1 + (self.total_classes - self.base_classes) / self.classes_per_task
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("stream.total_classes", self.total_classes),
            ("stream.base_classes", self.base_classes),
            ("stream.classes_per_task", self.classes_per_task),
            ("stream.train_clips_per_class", self.train_clips_per_class),
            ("stream.test_clips_per_class", self.test_clips_per_class),
            ("stream.frames_per_clip", self.frames_per_clip),
            ("stream.channels", self.channels),
            ("stream.height", self.height),
            ("stream.width", self.width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name}: must be positive")));
            }
        }
        if self.total_classes <= self.base_classes
            || !(self.total_classes - self.base_classes).is_multiple_of(self.classes_per_task)
        {
            return Err(Error::Config(format!(
                "stream: base_classes ({}) + k·classes_per_task ({}) must equal total_classes ({}) for some k ≥ 1",
                self.base_classes, self.classes_per_task, self.total_classes
            )));
        }
        for (name, v) in [
            ("stream.prototype_scale", self.prototype_scale),
            ("stream.motion_amplitude", self.motion_amplitude),
            ("stream.noise_std", self.noise_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name}: must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }

    /// Re-splits the same classes into `tasks` sessions. The base size is kept
    /// when the remainder divides evenly, otherwise every task gets
    /// `total / tasks` classes.
    pub fn with_task_count(&self, tasks: usize) -> Result<StreamConfig> {
        if tasks < 2 {
            return Err(Error::Config("stream.tasks: need at least 2 tasks".into()));
        }
        let mut out = self.clone();
        let rest = self.total_classes.saturating_sub(self.base_classes);
        if rest > 0 && rest.is_multiple_of(tasks - 1) {
            out.classes_per_task = rest / (tasks - 1);
        } else if self.total_classes.is_multiple_of(tasks) {
            out.classes_per_task = self.total_classes / tasks;
            out.base_classes = out.classes_per_task;
        } else {
            return Err(Error::Config(format!(
                "stream.tasks: {} classes cannot be split into {tasks} tasks",
                self.total_classes
            )));
        }
        out.validate()?;
        Ok(out)
    }
}

/// The classes introduced by one session, with their train and test clips.
#[derive(Clone, Debug)]
pub struct TaskDataset {
    pub task_index: usize,
    pub label_set: Vec<usize>,
    pub train: Vec<Clip>,
    pub test: Vec<Clip>,
}

/// Closed-form description of one class's clips.
#[derive(Clone, Debug)]
pub struct ClassPattern {
    pub prototype: Vec<f64>,
    pub channel_gain: Vec<f64>,
    pub center: (f64, f64),
    pub axis: (f64, f64),
    /// Oscillation cycles over the length of a clip.
    pub cycles: f64,
    pub amplitude: f64,
    pub blob_sigma: f64,
}

const SPLIT_TRAIN: u64 = 0;
const SPLIT_TEST: u64 = 1;

impl ClassPattern {
    pub fn for_class(cfg: &StreamConfig, class: usize) -> Self {
        let mut rng = SeedTree::new(cfg.seed).path(&[0xC1A55, class as u64]).rng();
        let shape = cfg.frame_shape();
        let prototype = (0..shape.len())
            .map(|_| {
                cfg.prototype_scale
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        let channel_gain = (0..cfg.channels)
            .map(|_| 1.0 + rng.random::<f64>())
            .collect();
        let h = cfg.height as f64;
        let w = cfg.width as f64;
        let center = (
            (h - 1.0) * (0.3 + 0.4 * rng.random::<f64>()),
            (w - 1.0) * (0.3 + 0.4 * rng.random::<f64>()),
        );
        let angle = PI * rng.random::<f64>();
        let cycles = 0.5 + 3.5 * rng.random::<f64>();
        ClassPattern {
            prototype,
            channel_gain,
            center,
            axis: (angle.sin(), angle.cos()),
            cycles,
            amplitude: cfg.motion_amplitude,
            blob_sigma: 1.0,
        }
    }

    /// Noise-free frame `t` of a clip with `frames` frames and phase `phase`.
    pub fn render(&self, shape: FrameShape, t: usize, frames: usize, phase: f64) -> Vec<f64> {
        let theta = 2.0 * PI * self.cycles * t as f64 / frames as f64 + phase;
        let offset = self.amplitude * theta.sin();
        let py = self.center.0 + offset * self.axis.0;
        let px = self.center.1 + offset * self.axis.1;
        let two_s2 = 2.0 * self.blob_sigma * self.blob_sigma;
        let mut out = self.prototype.clone();
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    let d2 = (y as f64 - py).powi(2) + (x as f64 - px).powi(2);
                    out[(c * shape.height + y) * shape.width + x] +=
                        self.channel_gain[c] * (-d2 / two_s2).exp();
                }
            }
        }
        out
    }
}

/// Phase and noise of one clip are drawn from this generator.
fn clip_rng(cfg: &StreamConfig, class: usize, split: u64, index: usize) -> rand_chacha::ChaCha8Rng {
    SeedTree::new(cfg.seed)
        .path(&[0xC11B, class as u64, split, index as u64])
        .rng()
}

/// Phase of the oscillation for one clip.
pub fn clip_phase(cfg: &StreamConfig, class: usize, test_split: bool, index: usize) -> f64 {
    let split = if test_split { SPLIT_TEST } else { SPLIT_TRAIN };
    2.0 * PI * clip_rng(cfg, class, split, index).random::<f64>()
}

fn generate_clip(
    cfg: &StreamConfig,
    pattern: &ClassPattern,
    class: usize,
    split: u64,
    index: usize,
) -> Clip {
    let mut rng = clip_rng(cfg, class, split, index);
    let phase = 2.0 * PI * rng.random::<f64>();
    let shape = cfg.frame_shape();
    let t_total = cfg.frames_per_clip;
    let mut data = Vec::with_capacity(t_total * shape.len());
    for t in 0..t_total {
        let frame = pattern.render(shape, t, t_total, phase);
        for v in frame {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(v + cfg.noise_std * noise);
        }
    }
    let per_class = (cfg.train_clips_per_class + cfg.test_clips_per_class) as u64;
    let id = class as u64 * per_class + split * cfg.train_clips_per_class as u64 + index as u64;
    Clip {
        label: class,
        clip_id: id,
        shape,
        frames: t_total,
        data,
    }
}

/// Generates every task of the stream. Task 0 is the base task.
pub fn generate_stream(cfg: &StreamConfig) -> Result<Vec<TaskDataset>> {
    cfg.validate()?;
    let mut tasks = Vec::with_capacity(cfg.num_tasks());
    let mut next_class = 0;
    for task_index in 0..cfg.num_tasks() {
        let width = if task_index == 0 {
            cfg.base_classes
        } else {
            cfg.classes_per_task
        };
        let label_set: Vec<usize> = (next_class..next_class + width).collect();
        next_class += width;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for &class in &label_set {
            let pattern = ClassPattern::for_class(cfg, class);
            train.extend(
                (0..cfg.train_clips_per_class)
                    .map(|i| generate_clip(cfg, &pattern, class, SPLIT_TRAIN, i)),
            );
            test.extend(
                (0..cfg.test_clips_per_class)
                    .map(|i| generate_clip(cfg, &pattern, class, SPLIT_TEST, i)),
            );
        }
        tasks.push(TaskDataset {
            task_index,
            label_set,
            train,
            test,
        });
    }
    Ok(tasks)
}

/// Pooling factor for a resolution scale; `delta` must be `1/k` for an integer `k`.
pub fn pooling_factor(delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Config(format!(
            "input.delta: {delta} is outside (0, 1]"
        )));
    }
    let k = (1.0 / delta).round();
    if ((1.0 / delta) - k).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "input.delta: 1/{delta} is not an integer pooling window"
        )));
    }
    Ok(k as usize)
}

/// Average-pools every frame with a `1/delta` window per spatial axis.
pub fn downsample(clip: &Clip, delta: f64) -> Result<Clip> {
    let k = pooling_factor(delta)?;
    if k == 1 {
        return Ok(clip.clone());
    }
    let s = clip.shape;
    if !s.height.is_multiple_of(k) || !s.width.is_multiple_of(k) {
        return Err(Error::Config(format!(
            "downsample by delta={delta} requires height and width divisible by {k}, got {}x{}",
            s.height, s.width
        )));
    }
    let out_shape = FrameShape::new(s.channels, s.height / k, s.width / k);
    let norm = 1.0 / (k * k) as f64;
    let mut data = Vec::with_capacity(clip.frames * out_shape.len());
    for frame in clip.frames() {
        for c in 0..s.channels {
            for oy in 0..out_shape.height {
                for ox in 0..out_shape.width {
                    let mut acc = 0.0;
                    for dy in 0..k {
                        let row = (c * s.height + oy * k + dy) * s.width + ox * k;
                        acc += frame[row..row + k].iter().sum::<f64>();
                    }
                    data.push(acc * norm);
                }
            }
        }
    }
    Ok(Clip {
        label: clip.label,
        clip_id: clip.clip_id,
        shape: out_shape,
        frames: clip.frames,
        data,
    })
}

const MAGIC: &[u8; 4] = b"CILF";
const FORMAT_VERSION: u32 = 1;

/// Serialises clips to the little-endian `CILF` v1 layout.
pub fn encode_clips(clips: &[Clip]) -> Vec<u8> {
    let payload: usize = clips.iter().map(|c| 20 + 8 * c.data.len()).sum();
    let mut buf = Vec::with_capacity(12 + payload);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(clips.len() as u32).to_le_bytes());
    for clip in clips {
        for v in [
            clip.label,
            clip.frames,
            clip.shape.channels,
            clip.shape.height,
            clip.shape.width,
        ] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &clip.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

fn read_u32(bytes: &[u8], at: &mut usize, what: &str) -> Result<u32> {
    let end = *at + 4;
    let chunk = bytes
        .get(*at..end)
        .ok_or_else(|| Error::TruncatedPayload(format!("missing {what} at byte {at}")))?;
    *at = end;
    Ok(u32::from_le_bytes(chunk.try_into().expect("4-byte slice")))
}

/// Parses the `CILF` layout. Clip ids are the clip's position in the file.
pub fn decode_clips(bytes: &[u8]) -> Result<Vec<Clip>> {
    if bytes.len() < 12 {
        return Err(Error::MalformedHeader(format!(
            "need 12 header bytes, found {}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::MalformedHeader(
            "bad magic, expected \"CILF\"".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4-byte slice"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4-byte slice")) as usize;
    let mut at = 12;
    let mut clips = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        let label = read_u32(bytes, &mut at, "label")? as usize;
        let frames = read_u32(bytes, &mut at, "frame count")? as usize;
        let c = read_u32(bytes, &mut at, "channels")? as usize;
        let h = read_u32(bytes, &mut at, "height")? as usize;
        let w = read_u32(bytes, &mut at, "width")? as usize;
        let n = frames
            .checked_mul(c)
            .and_then(|v| v.checked_mul(h))
            .and_then(|v| v.checked_mul(w))
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                Error::MalformedHeader(format!(
                    "clip {index} has invalid dimensions {frames}x{c}x{h}x{w}"
                ))
            })?;
        let byte_len = n.checked_mul(8).ok_or_else(|| {
            Error::TruncatedPayload(format!("clip {index} payload length overflows"))
        })?;
        let end = at
            .checked_add(byte_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::TruncatedPayload(format!(
                    "clip {index} needs {byte_len} bytes at offset {at}, file has {}",
                    bytes.len()
                ))
            })?;
        let data = bytes[at..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte slice")))
            .collect();
        at = end;
        clips.push(Clip::new(
            label,
            index as u64,
            FrameShape::new(c, h, w),
            data,
        )?);
    }
    if at != bytes.len() {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after {count} clips",
            bytes.len() - at
        )));
    }
    Ok(clips)
}

pub fn save_clips(path: &Path, clips: &[Clip]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_clips(clips))?;
    file.sync_all()?;
    Ok(())
}

pub fn load_clips(path: &Path) -> Result<Vec<Clip>> {
    decode_clips(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_cfg() -> StreamConfig {
        StreamConfig {
            train_clips_per_class: 3,
            test_clips_per_class: 2,
            frames_per_clip: 4,
            seed: 11,
            ..StreamConfig::default()
        }
    }

    #[test]
    fn ten_tasks_with_disjoint_labels() {
        let tasks = generate_stream(&small_cfg()).unwrap();
        assert_eq!(tasks.len(), 10);
        for (i, a) in tasks.iter().enumerate() {
            assert!(a
                .train
                .iter()
                .chain(&a.test)
                .all(|c| a.label_set.contains(&c.label)));
            for b in &tasks[i + 1..] {
                let sa: HashSet<_> = a.label_set.iter().collect();
                assert!(b.label_set.iter().all(|l| !sa.contains(l)));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_stream(&small_cfg()).unwrap();
        let b = generate_stream(&small_cfg()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.train, y.train);
            assert_eq!(x.test, y.test);
        }
        let other = generate_stream(&StreamConfig {
            seed: 12,
            ..small_cfg()
        })
        .unwrap();
        assert_ne!(a[0].train[0], other[0].train[0]);
    }

    #[test]
    fn noiseless_clips_follow_closed_form() {
        let cfg = StreamConfig {
            noise_std: 0.0,
            ..small_cfg()
        };
        let tasks = generate_stream(&cfg).unwrap();
        let shape = cfg.frame_shape();
        for task in &tasks[..2] {
            for (split, clips) in [(false, &task.train), (true, &task.test)] {
                let per = if split {
                    cfg.test_clips_per_class
                } else {
                    cfg.train_clips_per_class
                };
                for (i, clip) in clips.iter().enumerate() {
                    let pattern = ClassPattern::for_class(&cfg, clip.label);
                    let phase = clip_phase(&cfg, clip.label, split, i % per);
                    // independent evaluation of prototype + moving blob
                    for t in 0..cfg.frames_per_clip {
                        let theta = 2.0 * PI * pattern.cycles * t as f64
                            / cfg.frames_per_clip as f64
                            + phase;
                        let py =
                            pattern.center.0 + cfg.motion_amplitude * theta.sin() * pattern.axis.0;
                        let px =
                            pattern.center.1 + cfg.motion_amplitude * theta.sin() * pattern.axis.1;
                        for c in 0..shape.channels {
                            for y in 0..shape.height {
                                for x in 0..shape.width {
                                    let idx = (c * shape.height + y) * shape.width + x;
                                    let d2 = (y as f64 - py).powi(2) + (x as f64 - px).powi(2);
                                    let want = pattern.prototype[idx]
                                        + pattern.channel_gain[c] * (-d2 / 2.0).exp();
                                    assert!((clip.frame(t)[idx] - want).abs() < 1e-12);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn inconsistent_class_arithmetic_rejected() {
        let cfg = StreamConfig {
            total_classes: 21,
            ..StreamConfig::default()
        };
        assert!(matches!(generate_stream(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn task_count_resplit() {
        let cfg = StreamConfig::default();
        assert_eq!(cfg.with_task_count(10).unwrap().classes_per_task, 2);
        let twenty = cfg.with_task_count(20).unwrap();
        assert_eq!(
            (
                twenty.base_classes,
                twenty.classes_per_task,
                twenty.num_tasks()
            ),
            (1, 1, 20)
        );
        assert_eq!(cfg.with_task_count(5).unwrap().num_tasks(), 5);
        assert_eq!(cfg.with_task_count(7).unwrap().classes_per_task, 3);
        assert!(cfg.with_task_count(8).is_err());
    }

    #[test]
    fn downsample_cases() {
        let clip = Clip::new(0, 0, FrameShape::new(1, 2, 2), vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(downsample(&clip, 1.0).unwrap(), clip);
        let pooled = downsample(&clip, 0.5).unwrap();
        assert_eq!(pooled.data(), &[4.0]);
        assert_eq!(pooled.shape(), FrameShape::new(1, 1, 1));

        let constant = Clip::new(0, 0, FrameShape::new(1, 8, 8), vec![2.5; 64]).unwrap();
        let pooled = downsample(&constant, 0.25).unwrap();
        assert_eq!(pooled.shape(), FrameShape::new(1, 2, 2));
        assert!(pooled.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn downsample_rejects_bad_windows() {
        let clip = Clip::new(0, 0, FrameShape::new(1, 6, 6), vec![0.0; 36]).unwrap();
        let err = downsample(&clip, 0.25).unwrap_err();
        assert!(err.to_string().contains("divisible by 4"), "{err}");
        assert!(downsample(&clip, 0.4).is_err());
        assert!(downsample(&clip, 0.0).is_err());
    }

    #[test]
    fn header_errors() {
        assert!(matches!(decode_clips(&[]), Err(Error::MalformedHeader(_))));
        let mut bytes = encode_clips(&generate_stream(&small_cfg()).unwrap()[0].train);
        let mut bad_version = bytes.clone();
        bad_version[4] = 2;
        assert!(matches!(
            decode_clips(&bad_version),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
        // corrupt the frame count of the first clip
        bytes[16..20].copy_from_slice(&1000u32.to_le_bytes());
        assert!(matches!(
            decode_clips(&bytes),
            Err(Error::TruncatedPayload(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clips.cilf");
        let clips = generate_stream(&small_cfg()).unwrap().remove(1).train;
        save_clips(&path, &clips).unwrap();
        let back = load_clips(&path).unwrap();
        assert_eq!(back.len(), clips.len());
        for (i, (a, b)) in clips.iter().zip(&back).enumerate() {
            assert_eq!(b.clip_id, i as u64);
            assert_eq!(
                (a.label, a.shape(), a.data()),
                (b.label, b.shape(), b.data())
            );
        }
        std::fs::write(&path, b"").unwrap();
        assert!(matches!(load_clips(&path), Err(Error::MalformedHeader(_))));
    }
}
