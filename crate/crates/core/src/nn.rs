//! Segment-consensus clip classifier with hand-derived gradients.
//!
//! A clip is embedded by sampling one frame per temporal segment, passing each
//! flattened frame through a small MLP extractor (tanh on hidden layers, linear
//! output) and averaging. A linear head maps the embedding to logits; its width
//! grows as classes arrive.
//!
//! The extractor is defined on a native frame grid. A frame pooled by an
//! integer factor is treated as the nearest-neighbour upsampling of itself,
//! which folds into summing first-layer weight rows over each pooling block.
//! Smaller inputs therefore cost proportionally fewer multiplies.

use std::borrow::Cow;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datagen::{Clip, FrameShape};
use crate::error::{Error, Result};

/// Standard deviation of freshly added head columns.
pub const HEAD_INIT_STD: f64 = 0.01;

/// Affine layer `x ↦ xW + b` with `W` stored as inputs × outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn gaussian<R: Rng + ?Sized>(inputs: usize, outputs: usize, std: f64, rng: &mut R) -> Self {
        let weights = Array2::from_shape_simple_fn((inputs, outputs), || {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        });
        Dense {
            weights,
            bias: Array1::zeros(outputs),
        }
    }
}

/// Every trainable tensor of the classifier. Also used for gradients and
/// optimizer moments, which share the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    /// Extractor layers; tanh follows every layer but the last.
    pub layers: Vec<Dense>,
    pub head: Dense,
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
            head: Dense::zeros(self.head.inputs(), self.head.outputs()),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in self.layers.iter().chain(std::iter::once(&self.head)) {
            out.push(l.weights.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in self
            .layers
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
        {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn same_shapes(&self, other: &Params) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .chain(std::iter::once(&self.head))
                .zip(other.layers.iter().chain(std::iter::once(&other.head)))
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.len() == b.bias.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// One bias-corrected Adam update on a flat slice. `step` is the 1-based
    /// step index after incrementing.
    pub fn update(
        &self,
        params: &mut [f64],
        grads: &[f64],
        m: &mut [f64],
        v: &mut [f64],
        step: u64,
        lr: f64,
    ) {
        let c1 = 1.0 - self.beta1.powi(step as i32);
        let c2 = 1.0 - self.beta2.powi(step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Adam state for a flat parameter vector, e.g. learnable calibration inputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamVec {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamVec {
    pub fn new(len: usize) -> Self {
        AdamVec {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn grow(&mut self, len: usize) {
        self.m.resize(len, 0.0);
        self.v.resize(len, 0.0);
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Shape("adam vector lengths disagree".into()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("calibration gradient".into()));
        }
        self.step += 1;
        AdamConfig::default().update(params, grads, &mut self.m, &mut self.v, self.step, lr);
        Ok(())
    }
}

/// Architecture of the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub frame_shape: FrameShape,
    /// Width of the optional tanh hidden layer; 0 means a single linear extractor.
    pub hidden: usize,
    pub embed_dim: usize,
}

/// Parameters θ = {extractor, head} plus Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub params: Params,
    moment1: Params,
    moment2: Params,
    step: u64,
    frame_shape: FrameShape,
}

impl ModelState {
    /// Extractor weights ~ N(0, 1/fan_in), zero biases, and an empty head.
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        if spec.embed_dim == 0 || spec.frame_shape.is_empty() {
            return Err(Error::Config(
                "model: embed_dim and frame dimensions must be positive".into(),
            ));
        }
        let input = spec.frame_shape.len();
        let mut layers = Vec::new();
        let mut fan_in = input;
        if spec.hidden > 0 {
            layers.push(Dense::gaussian(
                fan_in,
                spec.hidden,
                (1.0 / fan_in as f64).sqrt(),
                rng,
            ));
            fan_in = spec.hidden;
        }
        layers.push(Dense::gaussian(
            fan_in,
            spec.embed_dim,
            (1.0 / fan_in as f64).sqrt(),
            rng,
        ));
        let params = Params {
            layers,
            head: Dense::zeros(spec.embed_dim, 0),
        };
        ModelState::from_params(spec.frame_shape, params)
    }

    /// Wraps explicit parameters, checking that the layer chain is consistent.
    pub fn from_params(frame_shape: FrameShape, params: Params) -> Result<Self> {
        let first = params
            .layers
            .first()
            .ok_or_else(|| Error::Config("model has no extractor layer".into()))?;
        if first.inputs() != frame_shape.len() {
            return Err(Error::Config(format!(
                "extractor expects {} inputs but frames have {} values",
                first.inputs(),
                frame_shape.len()
            )));
        }
        for pair in params.layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Config("extractor layer widths do not chain".into()));
            }
        }
        let embed = params.layers.last().expect("non-empty").outputs();
        if embed == 0 || params.head.inputs() != embed {
            return Err(Error::Config(
                "head input width must equal a positive embed_dim".into(),
            ));
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("initial parameters".into()));
        }
        Ok(ModelState {
            moment1: params.zeros_like(),
            moment2: params.zeros_like(),
            params,
            step: 0,
            frame_shape,
        })
    }

    pub fn frame_shape(&self) -> FrameShape {
        self.frame_shape
    }

    pub fn embed_dim(&self) -> usize {
        self.params.head.inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.params.head.outputs()
    }

    pub fn adam_steps(&self) -> u64 {
        self.step
    }

    /// Prepares the extractor for frames of `input` shape, which must equal
    /// the native grid or be an integer block-average of it.
    pub fn view(&self, input: FrameShape) -> Result<InputView<'_>> {
        let factor = input
            .pooling_factor_from(&self.frame_shape)
            .ok_or_else(|| {
                Error::Config(format!(
                    "frame shape {}x{}x{} is not an integer pooling of the extractor grid {}x{}x{}",
                    input.channels,
                    input.height,
                    input.width,
                    self.frame_shape.channels,
                    self.frame_shape.height,
                    self.frame_shape.width
                ))
            })?;
        let first = &self.params.layers[0].weights;
        let first = if factor == 1 {
            Cow::Borrowed(first)
        } else {
            let mut pooled = Array2::zeros((input.len(), first.ncols()));
            for q in 0..self.frame_shape.len() {
                let p = pooled_index(q, &self.frame_shape, &input, factor);
                let mut row = pooled.row_mut(p);
                row += &first.row(q);
            }
            Cow::Owned(pooled)
        };
        Ok(InputView {
            model: self,
            first,
            factor,
            input,
        })
    }

    /// Logits `o = Wᵀy + b` for an embedding.
    pub fn logits(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        if embedding.len() != self.embed_dim() {
            return Err(Error::Shape(format!(
                "embedding has length {} but the head expects {}",
                embedding.len(),
                self.embed_dim()
            )));
        }
        let y = ndarray::ArrayView1::from(embedding);
        Ok((y.dot(&self.params.head.weights) + &self.params.head.bias).to_vec())
    }
}

fn pooled_index(q: usize, native: &FrameShape, input: &FrameShape, factor: usize) -> usize {
    let per_channel = native.height * native.width;
    let c = q / per_channel;
    let y = (q % per_channel) / native.width;
    let x = q % native.width;
    (c * input.height + y / factor) * input.width + x / factor
}

/// Frame index sampled from each of `segments` equal temporal segments: the
/// middle frame of the segment, or frames taken cyclically when the clip is
/// shorter than the segment count.
pub fn segment_indices(frames: usize, segments: usize) -> Vec<usize> {
    if frames < segments {
        (0..segments).map(|k| k % frames).collect()
    } else {
        (0..segments)
            .map(|k| ((2 * k + 1) * frames) / (2 * segments))
            .collect()
    }
}

/// Intermediate values of one clip's forward pass.
#[derive(Clone, Debug)]
pub struct ClipTrace {
    /// Input to each extractor layer, one row per sampled frame.
    inputs: Vec<Array2<f64>>,
    /// Output of the final extractor layer, before averaging.
    output: Array2<f64>,
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Model bound to an input resolution.
pub struct InputView<'a> {
    model: &'a ModelState,
    first: Cow<'a, Array2<f64>>,
    factor: usize,
    input: FrameShape,
}

impl<'a> InputView<'a> {
    pub fn model(&self) -> &ModelState {
        self.model
    }

    pub fn input_shape(&self) -> FrameShape {
        self.input
    }

    fn layer_weights(&self, l: usize) -> &Array2<f64> {
        if l == 0 {
            &self.first
        } else {
            &self.model.params.layers[l].weights
        }
    }

    pub fn forward(&self, clip: &Clip, segments: usize) -> Result<ClipTrace> {
        if clip.shape() != self.input {
            return Err(Error::Config(format!(
                "clip frame shape {:?} does not match prepared input {:?}",
                clip.shape(),
                self.input
            )));
        }
        if segments == 0 {
            return Err(Error::Config("segments must be at least 1".into()));
        }
        let picks = segment_indices(clip.num_frames(), segments);
        let mut x = Array2::zeros((picks.len(), self.input.len()));
        for (row, &f) in picks.iter().enumerate() {
            x.row_mut(row)
                .assign(&ndarray::ArrayView1::from(clip.frame(f)));
        }
        let layers = &self.model.params.layers;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut a = x;
        for (l, layer) in layers.iter().enumerate() {
            let mut z = a.dot(self.layer_weights(l)) + &layer.bias;
            if l + 1 < layers.len() {
                z.mapv_inplace(f64::tanh);
            }
            inputs.push(a);
            a = z;
        }
        let embedding = a.mean_axis(Axis(0)).expect("at least one segment").to_vec();
        let logits = self.model.logits(&embedding)?;
        Ok(ClipTrace {
            inputs,
            output: a,
            embedding,
            logits,
        })
    }

    /// Accumulates `dL/dθ` into `grads` given `dL/do`. `grads` must come from
    /// [`InputView::zero_grads`] so the first layer is at input resolution.
    pub fn backward(&self, trace: &ClipTrace, dlogits: &[f64], grads: &mut Params) -> Result<()> {
        let head = &self.model.params.head;
        if dlogits.len() != head.outputs() {
            return Err(Error::Shape(format!(
                "loss gradient has length {} but the head has {} outputs",
                dlogits.len(),
                head.outputs()
            )));
        }
        let g = ndarray::ArrayView1::from(dlogits);
        let y = ndarray::ArrayView1::from(&trace.embedding[..]);
        let y_col = y.insert_axis(Axis(1));
        let g_row = g.insert_axis(Axis(0));
        grads.head.weights += &y_col.dot(&g_row);
        grads.head.bias += &g;

        let demb = head.weights.dot(&g);
        let frames = trace.output.nrows();
        let mut delta =
            Array2::from_shape_fn((frames, demb.len()), |(_, j)| demb[j] / frames as f64);
        let layers = &self.model.params.layers;
        for l in (0..layers.len()).rev() {
            if l + 1 < layers.len() {
                // tanh'(z) = 1 − tanh(z)², and the tanh output is the next layer's input
                let act = &trace.inputs[l + 1];
                delta.zip_mut_with(act, |d, &a| *d *= 1.0 - a * a);
            }
            grads.layers[l].weights += &trace.inputs[l].t().dot(&delta);
            grads.layers[l].bias += &delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&self.layer_weights(l).t());
            }
        }
        Ok(())
    }

    /// Zero gradient buffer whose first layer matches the input resolution.
    pub fn zero_grads(&self) -> Params {
        let mut g = self.model.params.zeros_like();
        g.layers[0] = Dense::zeros(self.input.len(), self.model.params.layers[0].outputs());
        g
    }

    /// Maps input-resolution gradients back onto the native parameters.
    pub fn lift(&self, local: Params) -> Params {
        if self.factor == 1 {
            return local;
        }
        let native = self.model.frame_shape;
        let mut out = local.clone();
        let mut first = Array2::zeros(self.model.params.layers[0].weights.dim());
        for q in 0..native.len() {
            let p = pooled_index(q, &native, &self.input, self.factor);
            first.row_mut(q).assign(&local.layers[0].weights.row(p));
        }
        out.layers[0].weights = first;
        out
    }

    /// Multiplies in one clip's forward pass at this resolution.
    pub fn multiplies_per_clip(&self, segments: usize) -> u64 {
        let params = &self.model.params;
        let per_frame: usize = (0..params.layers.len())
            .map(|l| self.layer_weights(l).len())
            .sum();
        (segments * per_frame + params.head.weights.len()) as u64
    }
}

/// Segment-consensus embedding of a clip at its own resolution.
pub fn clip_embed(model: &ModelState, clip: &Clip, segments: usize) -> Result<Vec<f64>> {
    Ok(model.view(clip.shape())?.forward(clip, segments)?.embedding)
}

pub fn forward(model: &ModelState, embedding: &[f64]) -> Result<Vec<f64>> {
    model.logits(embedding)
}

/// Gradients of every parameter for a given `dL/do` on one clip.
pub fn backward(
    model: &ModelState,
    clip: &Clip,
    segments: usize,
    dlogits: &[f64],
) -> Result<Params> {
    let view = model.view(clip.shape())?;
    let trace = view.forward(clip, segments)?;
    let mut grads = view.zero_grads();
    view.backward(&trace, dlogits, &mut grads)?;
    Ok(view.lift(grads))
}

/// Adam with β1 = 0.9, β2 = 0.999, ε = 1e−8.
pub fn adam_step(model: &mut ModelState, grads: &Params, lr: f64) -> Result<()> {
    if !model.params.same_shapes(grads) {
        return Err(Error::Shape(
            "gradient shapes do not match parameters".into(),
        ));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite(format!(
            "gradient at optimizer step {}",
            model.step + 1
        )));
    }
    model.step += 1;
    let cfg = AdamConfig::default();
    let step = model.step;
    let ModelState {
        params,
        moment1,
        moment2,
        ..
    } = model;
    for (((p, g), m), v) in params
        .slices_mut()
        .into_iter()
        .zip(grads.slices())
        .zip(moment1.slices_mut())
        .zip(moment2.slices_mut())
    {
        cfg.update(p, g, m, v, step, lr);
    }
    Ok(())
}

fn append_columns(layer: &mut Dense, extra: Array2<f64>) {
    let mut weights = Array2::zeros((layer.inputs(), layer.outputs() + extra.ncols()));
    weights
        .slice_mut(ndarray::s![.., ..layer.outputs()])
        .assign(&layer.weights);
    weights
        .slice_mut(ndarray::s![.., layer.outputs()..])
        .assign(&extra);
    let mut bias = layer.bias.to_vec();
    bias.resize(weights.ncols(), 0.0);
    layer.weights = weights;
    layer.bias = Array1::from(bias);
}

/// Adds `new_classes` output nodes drawn from N(0, 0.01²) with zero bias.
/// Existing columns and their optimizer moments are left untouched.
pub fn expand_head<R: Rng + ?Sized>(model: &mut ModelState, new_classes: usize, rng: &mut R) {
    if new_classes == 0 {
        return;
    }
    let embed = model.embed_dim();
    let fresh = Dense::gaussian(embed, new_classes, HEAD_INIT_STD, rng).weights;
    append_columns(&mut model.params.head, fresh);
    append_columns(&mut model.moment1.head, Array2::zeros((embed, new_classes)));
    append_columns(&mut model.moment2.head, Array2::zeros((embed, new_classes)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_model(dim: usize, classes: usize) -> ModelState {
        let mut layer = Dense::zeros(dim, dim);
        layer.weights = Array2::eye(dim);
        let mut head = Dense::zeros(dim, classes);
        for i in 0..dim.min(classes) {
            head.weights[[i, i]] = 1.0;
        }
        ModelState::from_params(
            FrameShape::new(1, 1, dim),
            Params {
                layers: vec![layer],
                head,
            },
        )
        .unwrap()
    }

    fn random_model(seed: u64, hidden: usize, classes: usize) -> ModelState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ModelSpec {
            frame_shape: FrameShape::new(2, 4, 4),
            hidden,
            embed_dim: 5,
        };
        let mut m = ModelState::new(spec, &mut rng).unwrap();
        expand_head(&mut m, classes, &mut rng);
        // larger head weights give more informative checks than the 0.01 init
        m.params.head.weights.mapv_inplace(|w| w * 50.0);
        m
    }

    fn random_clip(seed: u64, frames: usize, shape: FrameShape) -> Clip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * shape.len())
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        Clip::new(1, 0, shape, data).unwrap()
    }

    #[test]
    fn segment_sampling() {
        assert_eq!(segment_indices(8, 8), (0..8).collect::<Vec<_>>());
        assert_eq!(segment_indices(2, 2), vec![0, 1]);
        assert_eq!(segment_indices(32, 8), vec![2, 6, 10, 14, 18, 22, 26, 30]);
        assert_eq!(segment_indices(3, 8), vec![0, 1, 2, 0, 1, 2, 0, 1]);
    }

    #[test]
    fn identity_embedding() {
        let m = identity_model(3, 3);
        let v = [0.5, -1.0, 2.0];
        let clip = Clip::new(0, 0, FrameShape::new(1, 1, 3), v.to_vec()).unwrap();
        assert_eq!(clip_embed(&m, &clip, 8).unwrap(), v.to_vec());

        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let two = Clip::new(0, 0, FrameShape::new(1, 1, 3), [v.to_vec(), neg].concat()).unwrap();
        assert_eq!(clip_embed(&m, &two, 2).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn embedding_is_mean_of_frame_embeddings() {
        let m = random_model(3, 6, 4);
        let shape = m.frame_shape();
        let clip = random_clip(4, 8, shape);
        let emb = clip_embed(&m, &clip, 8).unwrap();
        let mut mean = vec![0.0; emb.len()];
        for t in 0..8 {
            let single = clip.select_frames(&[t]).unwrap();
            let e = clip_embed(&m, &single, 1).unwrap();
            mean.iter_mut().zip(&e).for_each(|(m, x)| *m += x / 8.0);
        }
        for (a, b) in emb.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_cases() {
        let m = identity_model(2, 2);
        assert_eq!(forward(&m, &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);

        let mut zero = identity_model(2, 3);
        zero.params.head.weights.fill(0.0);
        zero.params.head.bias = Array1::from(vec![0.1, -0.2, 0.3]);
        assert_eq!(forward(&zero, &[4.0, 5.0]).unwrap(), vec![0.1, -0.2, 0.3]);

        let r = random_model(9, 0, 3);
        let y = [0.3, -0.7, 1.1, 0.2, -0.4];
        let got = forward(&r, &y).unwrap();
        for (c, &g) in got.iter().enumerate() {
            let want: f64 = (0..5)
                .map(|i| y[i] * r.params.head.weights[[i, c]])
                .sum::<f64>()
                + r.params.head.bias[c];
            assert!((g - want).abs() < 1e-12);
        }
        assert!(matches!(forward(&r, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_cases() {
        let m = random_model(5, 4, 3);
        let clip = random_clip(6, 5, m.frame_shape());
        let g = backward(&m, &clip, 4, &[0.0; 3]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(matches!(
            backward(&m, &clip, 4, &[1.0; 2]),
            Err(Error::Shape(_))
        ));

        let id = identity_model(2, 2);
        let clip = Clip::new(0, 0, FrameShape::new(1, 1, 2), vec![3.0, -1.0]).unwrap();
        let g = backward(&id, &clip, 8, &[0.5, 2.0]).unwrap();
        assert_eq!(g.head.weights, ndarray::array![[1.5, 6.0], [-0.5, -2.0]]);
        assert_eq!(g.head.bias, ndarray::array![0.5, 2.0]);
    }

    #[test]
    fn backward_is_linear_in_loss_gradient() {
        let m = random_model(7, 4, 3);
        let clip = random_clip(8, 6, m.frame_shape());
        let a = backward(&m, &clip, 3, &[1.0, -2.0, 0.5]).unwrap();
        let b = backward(&m, &clip, 3, &[0.2, 0.3, -1.0]).unwrap();
        let ab = backward(&m, &clip, 3, &[1.2, -1.7, -0.5]).unwrap();
        let mut sum = a.clone();
        sum.add_scaled(&b, 1.0);
        sum.add_scaled(&ab, -1.0);
        assert!(sum.max_abs() < 1e-12);
    }

    #[test]
    fn pooled_input_matches_upsampled_native_input() {
        let m = random_model(12, 6, 4);
        let native = m.frame_shape();
        let small = FrameShape::new(native.channels, native.height / 2, native.width / 2);
        let low = random_clip(13, 5, small);
        // nearest-neighbour upsample of `low` back to the native grid
        let mut data = Vec::new();
        for f in low.frames() {
            for c in 0..native.channels {
                for y in 0..native.height {
                    for x in 0..native.width {
                        data.push(f[(c * small.height + y / 2) * small.width + x / 2]);
                    }
                }
            }
        }
        let up = Clip::new(low.label, 0, native, data).unwrap();
        let e_low = clip_embed(&m, &low, 4).unwrap();
        let e_up = clip_embed(&m, &up, 4).unwrap();
        e_low
            .iter()
            .zip(&e_up)
            .for_each(|(a, b)| assert!((a - b).abs() < 1e-12));

        let dl = [0.3, -0.1, 0.7, -0.9];
        let g_low = backward(&m, &low, 4, &dl).unwrap();
        let mut diff = backward(&m, &up, 4, &dl).unwrap();
        diff.add_scaled(&g_low, -1.0);
        assert!(diff.max_abs() < 1e-12);

        let v_full = m.view(native).unwrap();
        let v_small = m.view(small).unwrap();
        assert!(v_small.multiplies_per_clip(8) < v_full.multiplies_per_clip(8));
        assert!(m.view(FrameShape::new(native.channels, 3, 3)).is_err());
    }

    #[test]
    fn adam_zero_gradient_and_first_step() {
        let mut m = random_model(1, 0, 2);
        let before = m.params.clone();
        let zeros = m.params.zeros_like();
        adam_step(&mut m, &zeros, 1e-3).unwrap();
        assert_eq!(m.params, before);
        assert_eq!(m.adam_steps(), 1);

        let (mut w, mut mm, mut vv) = ([0.0], [0.0], [0.0]);
        AdamConfig::default().update(&mut w, &[1.0], &mut mm, &mut vv, 1, 1e-3);
        assert!((w[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let (mut w, mut mm, mut vv) = ([0.0], [0.0], [0.0]);
        for step in 1..=100 {
            let g = 2.0 * (w[0] - 3.0);
            AdamConfig::default().update(&mut w, &[g], &mut mm, &mut vv, step, 0.1);
        }
        assert!((w[0] - 3.0).abs() < 0.1, "w = {}", w[0]);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut m = random_model(1, 0, 2);
        let mut g = m.params.zeros_like();
        g.head.bias[0] = f64::NAN;
        assert!(matches!(
            adam_step(&mut m, &g, 1e-3),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn head_expansion_preserves_old_logits() {
        let mut m = random_model(2, 4, 2);
        let before = m.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        expand_head(&mut m, 0, &mut rng);
        assert_eq!(m, before);

        expand_head(&mut m, 2, &mut rng);
        assert_eq!(m.num_classes(), 4);
        let y = [0.1, 0.2, -0.3, 0.4, 0.5];
        let old = forward(&before, &y).unwrap();
        let new = forward(&m, &y).unwrap();
        assert_eq!(&new[..2], &old[..]);

        let mut again = before.clone();
        expand_head(&mut again, 2, &mut ChaCha8Rng::seed_from_u64(0));
        let mut twice = before.clone();
        expand_head(&mut twice, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(again, twice);
    }
}
