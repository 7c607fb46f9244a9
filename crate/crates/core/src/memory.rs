//! Episodic memory: herding exemplar selection over clip embeddings and a
//! per-class store of key-frame-refined exemplars.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::datagen::{save_clips, Clip, TaskDataset};
use crate::error::{Error, Result};
use crate::nn::{clip_embed, ModelState};
use crate::sampler::{refine_exemplar, SamplerConfig};

/// Greedy herding without replacement.
///
/// Step `k` picks the unchosen embedding that brings the running exemplar
/// mean closest (Euclidean) to the mean of all embeddings. Ties go to the
/// lowest index. The returned order is the selection order, so any prefix is
/// the herding selection for that smaller budget.
pub fn herding_select(embeddings: &[Vec<f64>], m: usize) -> Result<Vec<usize>> {
    if m > embeddings.len() {
        return Err(Error::Insufficient {
            requested: m,
            available: embeddings.len(),
        });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::Shape(
            "herding embeddings have differing lengths".into(),
        ));
    }
    if embeddings.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("herding embedding".into()));
    }
    let n = embeddings.len() as f64;
    let mut mean = vec![0.0; dim];
    for e in embeddings {
        mean.iter_mut().zip(e).for_each(|(m, x)| *m += x / n);
    }
    let mut chosen = vec![false; embeddings.len()];
    let mut running = vec![0.0; dim];
    let mut order = Vec::with_capacity(m);
    for k in 1..=m {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in embeddings.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let dist: f64 = (0..dim)
                .map(|d| {
                    let diff = mean[d] - (running[d] + e[d]) / k as f64;
                    diff * diff
                })
                .sum();
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        let (pick, _) = best.expect("m ≤ len leaves a candidate");
        chosen[pick] = true;
        running
            .iter_mut()
            .zip(&embeddings[pick])
            .for_each(|(r, x)| *r += x);
        order.push(pick);
    }
    Ok(order)
}

/// Fixed per-class budget store of refined exemplars.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodicMemory {
    classes: BTreeMap<usize, Vec<Clip>>,
    per_class: usize,
    multiplier: usize,
}

impl EpisodicMemory {
    pub fn new(per_class: usize, multiplier: usize) -> Self {
        EpisodicMemory {
            classes: BTreeMap::new(),
            per_class,
            multiplier,
        }
    }

    /// Maximum exemplars kept for one class.
    pub fn class_budget(&self) -> usize {
        self.per_class * self.multiplier
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.keys().copied()
    }

    pub fn exemplars(&self, class: usize) -> &[Clip] {
        self.classes.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Clip> {
        self.classes.values().flatten()
    }

    /// Stored frame values across all exemplars.
    pub fn payload_values(&self) -> usize {
        self.iter().map(|c| c.data().len()).sum()
    }

    /// Adds herded, key-frame-refined exemplars for every class of `task`
    /// that is not stored yet. Classes with fewer clips than the budget keep
    /// all of them.
    pub fn update(
        &mut self,
        task: &TaskDataset,
        model: &ModelState,
        segments: usize,
        sampler: SamplerConfig,
    ) -> Result<()> {
        let budget = self.class_budget();
        for &class in &task.label_set {
            if self.classes.contains_key(&class) {
                continue;
            }
            let clips: Vec<&Clip> = task.train.iter().filter(|c| c.label == class).collect();
            let embeddings = clips
                .iter()
                .map(|c| clip_embed(model, c, segments))
                .collect::<Result<Vec<_>>>()?;
            let order = herding_select(&embeddings, budget.min(clips.len()))?;
            let stored = order
                .into_iter()
                .map(|i| refine_exemplar(clips[i], sampler.keyframes, sampler.gamma))
                .collect::<Result<Vec<_>>>()?;
            if stored.len() > budget {
                return Err(Error::Invariant(format!(
                    "class {class} holds {} > {budget}",
                    stored.len()
                )));
            }
            self.classes.insert(class, stored);
        }
        Ok(())
    }

    /// Uniform draw with replacement over every stored exemplar.
    pub fn rehearsal_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<&Clip>> {
        let all: Vec<&Clip> = self.iter().collect();
        if all.is_empty() {
            return Err(Error::EmptyMemory);
        }
        Ok((0..batch_size)
            .map(|_| all[rng.random_range(0..all.len())])
            .collect())
    }

    /// Writes `memory.cilf` plus `memory_index.json` mapping class → source clip ids.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        let clips: Vec<Clip> = self.iter().cloned().collect();
        save_clips(&dir.join("memory.cilf"), &clips)?;
        let index: BTreeMap<String, Vec<u64>> = self
            .classes
            .iter()
            .map(|(c, v)| (c.to_string(), v.iter().map(|clip| clip.clip_id).collect()))
            .collect();
        let json =
            serde_json::to_string_pretty(&index).map_err(|e| Error::Invariant(e.to_string()))?;
        std::fs::write(dir.join("memory_index.json"), json)?;
        Ok(())
    }
}
