//! Shared fixtures for the kernel benchmarks: the default synthetic stream
//! and a model with a head sized for its base task.

use cilforge_core::datagen::{downsample, generate_stream, Clip, TaskDataset};
use cilforge_core::nn::{clip_embed, expand_head, ModelState};
use cilforge_core::{RunConfig, SessionConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub cfg: RunConfig,
    pub session: SessionConfig,
    pub stream: Vec<TaskDataset>,
    pub model: ModelState,
}

impl Fixture {
    /// Default configuration at seed 0; the model is untrained.
    pub fn new() -> Self {
        let cfg = RunConfig::default();
        let session = cfg.session();
        let stream = generate_stream(&cfg.resolved_stream()).expect("default stream");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model = ModelState::new(cfg.model_spec(), &mut rng).expect("default model");
        expand_head(&mut model, stream[0].label_set.len(), &mut rng);
        Fixture {
            cfg,
            session,
            stream,
            model,
        }
    }

    pub fn clip(&self) -> &Clip {
        &self.stream[0].train[0]
    }

    /// The first training clip at input resolution `delta`.
    pub fn clip_at(&self, delta: f64) -> Clip {
        downsample(self.clip(), delta).expect("supported resolution")
    }

    /// Embeddings of every training clip of the first base class.
    pub fn class_embeddings(&self) -> Vec<Vec<f64>> {
        let class = self.stream[0].label_set[0];
        self.stream[0]
            .train
            .iter()
            .filter(|c| c.label == class)
            .map(|c| clip_embed(&self.model, c, self.cfg.model.segments).expect("embedding"))
            .collect()
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
