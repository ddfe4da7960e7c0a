//! Toy detectors with a uniform layer registry.
//!
//! Every layer output passes through [`HookSet`] in a fixed order: the fault
//! hook first, then the mitigation hook, then trace statistics. Layer ids are
//! dense and follow execution order, so hooks and traces can address layers
//! by id alone.

mod cnn;
mod detr;
mod io;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{mean_variance, Tensor};

pub use cnn::CnnParams;
pub use detr::DetrParams;

/// The four linear layers of a deformable attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    /// Sampling offsets.
    A,
    /// Attention weights (pre-softmax logits).
    B,
    /// Value projection.
    C,
    /// Output projection.
    D,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::A, Stage::B, Stage::C, Stage::D];

    pub fn label(self) -> &'static str {
        match self {
            Stage::A => "A",
            Stage::B => "B",
            Stage::C => "C",
            Stage::D => "D",
        }
    }

    pub fn role(self) -> &'static str {
        match self {
            Stage::A => "sampling_offsets",
            Stage::B => "attention_weights",
            Stage::C => "value_proj",
            Stage::D => "output_proj",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        match s.trim() {
            "A" | "a" => Some(Stage::A),
            "B" | "b" => Some(Stage::B),
            "C" | "c" => Some(Stage::C),
            "D" | "d" => Some(Stage::D),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Activation,
    Softmax,
    LayerNorm,
    AttentionLinear(Stage),
    Linear,
    Other,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Activation => "activation",
            LayerKind::Softmax => "softmax",
            LayerKind::LayerNorm => "layernorm",
            LayerKind::AttentionLinear(_) => "attention_linear",
            LayerKind::Linear => "linear",
            LayerKind::Other => "other",
        }
    }

    pub fn stage(self) -> Option<Stage> {
        match self {
            LayerKind::AttentionLinear(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_attention_linear(self) -> bool {
        matches!(self, LayerKind::AttentionLinear(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerEntry {
    pub id: usize,
    pub name: String,
    pub kind: LayerKind,
    pub weight_shapes: Vec<Vec<usize>>,
    pub output_shape: Vec<usize>,
}

impl LayerEntry {
    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }

    pub fn weight_len(&self) -> usize {
        self.weight_shapes
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Serialize, Deserialize)]
struct RegistryRow {
    layer_id: usize,
    name: String,
    kind: String,
    stage: Option<Stage>,
    weight_shapes: Vec<Vec<usize>>,
    output_shape: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerRegistry {
    entries: Vec<LayerEntry>,
}

impl LayerRegistry {
    pub fn entries(&self) -> &[LayerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&LayerEntry> {
        self.entries.get(id)
    }

    pub fn entry(&self, id: usize) -> Result<&LayerEntry> {
        self.get(id)
            .ok_or_else(|| Error::Config(format!("unknown layer id {id}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &LayerEntry> {
        self.entries.iter()
    }

    pub fn ids_where(&self, pred: impl Fn(&LayerEntry) -> bool) -> Vec<usize> {
        self.entries.iter().filter(|e| pred(e)).map(|e| e.id).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<RegistryRow> = self
            .entries
            .iter()
            .map(|e| RegistryRow {
                layer_id: e.id,
                name: e.name.clone(),
                kind: e.kind.name().to_string(),
                stage: e.kind.stage(),
                weight_shapes: e.weight_shapes.clone(),
                output_shape: e.output_shape.clone(),
            })
            .collect();
        serde_json::to_value(rows).expect("registry rows are plain data")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum Architecture {
    ToyDetr(DetrParams),
    ToyCnn(CnnParams),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub arch: Architecture,
    pub seed: u64,
}

impl ModelSpec {
    pub fn toy_detr(params: DetrParams, seed: u64) -> Self {
        Self {
            arch: Architecture::ToyDetr(params),
            seed,
        }
    }

    pub fn toy_cnn(params: CnnParams, seed: u64) -> Self {
        Self {
            arch: Architecture::ToyCnn(params),
            seed,
        }
    }

    pub fn image_size(&self) -> usize {
        match &self.arch {
            Architecture::ToyDetr(p) => p.image_size,
            Architecture::ToyCnn(p) => p.image_size,
        }
    }

    pub fn num_classes(&self) -> usize {
        match &self.arch {
            Architecture::ToyDetr(p) => p.num_classes,
            Architecture::ToyCnn(p) => p.num_classes,
        }
    }

    pub fn build(&self) -> Result<Model> {
        match &self.arch {
            Architecture::ToyDetr(p) => build_toy_detr(p, self.seed),
            Architecture::ToyCnn(p) => build_toy_cnn(p, self.seed),
        }
    }
}

/// Number of input channels every model expects.
pub const IMAGE_CHANNELS: usize = 3;

/// Default confidence threshold turning raw query outputs into predicted
/// objects.
pub const DEFAULT_SCORE_THRESHOLD: f32 = 0.5;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Detection {
    /// `(x_min, y_min, x_max, y_max)` in normalized image coordinates.
    #[serde(rename = "box")]
    pub bbox: [f32; 4],
    pub class_id: usize,
    pub score: f32,
}

impl Detection {
    pub fn is_finite(&self) -> bool {
        self.score.is_finite() && self.bbox.iter().all(|v| v.is_finite())
    }

    pub fn bit_eq(&self, other: &Detection) -> bool {
        self.class_id == other.class_id
            && self.score.to_bits() == other.score.to_bits()
            && self
                .bbox
                .iter()
                .zip(&other.bbox)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Summary statistics of one layer's output for one inference.
#[derive(Clone, Copy, Debug)]
pub struct LayerStats {
    pub layer_id: usize,
    pub mean: f32,
    pub variance: f32,
    pub min: f32,
    pub max: f32,
}

impl LayerStats {
    fn of(layer_id: usize, values: &[f32]) -> Self {
        let (mean, variance) = mean_variance(values);
        let mut min = f32::INFINITY;
        let mut max = f32::NEG_INFINITY;
        for &v in values {
            if v.is_nan() {
                min = f32::NAN;
                max = f32::NAN;
                break;
            }
            min = min.min(v);
            max = max.max(v);
        }
        Self {
            layer_id,
            mean,
            variance,
            min,
            max,
        }
    }

    pub fn bit_eq(&self, other: &LayerStats) -> bool {
        self.layer_id == other.layer_id
            && [self.mean, self.variance, self.min, self.max]
                .iter()
                .zip([other.mean, other.variance, other.min, other.max])
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Clone, Debug, Default)]
pub struct LayerTrace {
    pub layers: Vec<LayerStats>,
}

impl LayerTrace {
    pub fn get(&self, layer_id: usize) -> Option<&LayerStats> {
        self.layers.iter().find(|s| s.layer_id == layer_id)
    }

    pub fn bit_eq(&self, other: &LayerTrace) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.bit_eq(b))
    }
}

/// Fires first at every layer output. Used for neuron fault injection.
pub trait FaultHook {
    fn validate(&self, registry: &LayerRegistry) -> Result<()>;
    fn on_output(&mut self, layer: &LayerEntry, output: &mut Tensor);
}

/// Fires after the fault hook. Must be a pure function of the layer output.
pub trait MitigationHook: Sync {
    fn validate(&self, registry: &LayerRegistry) -> Result<()>;
    fn on_output(&self, layer: &LayerEntry, output: &mut Tensor);
}

#[derive(Default)]
pub struct HookSet<'a> {
    pub fault: Option<&'a mut dyn FaultHook>,
    pub mitigation: Option<&'a dyn MitigationHook>,
}

impl<'a> HookSet<'a> {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_mitigation(mitigation: &'a dyn MitigationHook) -> Self {
        Self {
            fault: None,
            mitigation: Some(mitigation),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Every query / cell output, before score thresholding.
    pub raw: Vec<Detection>,
    /// Raw outputs whose score reaches the model's threshold.
    pub detections: Vec<Detection>,
    pub trace: LayerTrace,
    /// True when any raw head output (logits or box terms) is NaN or ±Inf.
    pub has_nan_inf: bool,
}

impl ForwardOutput {
    pub fn bit_eq(&self, other: &ForwardOutput) -> bool {
        self.has_nan_inf == other.has_nan_inf
            && self.raw.len() == other.raw.len()
            && self.raw.iter().zip(&other.raw).all(|(a, b)| a.bit_eq(b))
            && self.trace.bit_eq(&other.trace)
    }
}

/// Substitute weights for one layer during a single forward pass.
pub(crate) struct WeightOverride<'w> {
    pub layer_id: usize,
    pub tensors: &'w [Tensor],
}

#[derive(Clone, Debug)]
enum Layout {
    Detr(detr::DetrLayout),
    Cnn(cnn::CnnLayout),
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    registry: LayerRegistry,
    weights: Vec<Vec<Tensor>>,
    layout: Layout,
    score_threshold: f32,
}

pub fn build_toy_detr(params: &DetrParams, seed: u64) -> Result<Model> {
    detr::build(params, seed)
}

pub fn build_toy_cnn(params: &CnnParams, seed: u64) -> Result<Model> {
    cnn::build(params, seed)
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn registry(&self) -> &LayerRegistry {
        &self.registry
    }

    pub fn weights(&self, layer_id: usize) -> &[Tensor] {
        self.weights.get(layer_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all_weights(&self) -> &[Vec<Tensor>] {
        &self.weights
    }

    pub fn score_threshold(&self) -> f32 {
        self.score_threshold
    }

    pub fn set_score_threshold(&mut self, threshold: f32) {
        self.score_threshold = threshold;
    }

    pub fn input_shape(&self) -> [usize; 3] {
        let s = self.spec.image_size();
        [IMAGE_CHANNELS, s, s]
    }

    pub fn weights_bit_eq(&self, other: &Model) -> bool {
        self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bit_eq(y)))
    }

    pub fn forward(&self, image: &Tensor, hooks: HookSet<'_>) -> Result<ForwardOutput> {
        self.forward_with(image, hooks, None)
    }

    pub(crate) fn forward_with(
        &self,
        image: &Tensor,
        mut hooks: HookSet<'_>,
        override_weights: Option<WeightOverride<'_>>,
    ) -> Result<ForwardOutput> {
        if image.shape() != self.input_shape() {
            return Err(Error::Dimension(format!(
                "image shape {:?}, model expects {:?}",
                image.shape(),
                self.input_shape()
            )));
        }
        if let Some(f) = hooks.fault.as_deref() {
            f.validate(&self.registry)?;
        }
        if let Some(m) = hooks.mitigation {
            m.validate(&self.registry)?;
        }
        if let Some(o) = &override_weights {
            let entry = self.registry.entry(o.layer_id)?;
            let shapes: Vec<&[usize]> = o.tensors.iter().map(Tensor::shape).collect();
            if shapes.len() != entry.weight_shapes.len()
                || shapes.iter().zip(&entry.weight_shapes).any(|(a, b)| *a != &b[..])
            {
                return Err(Error::Config(format!(
                    "weight override for layer {} does not match registry shapes",
                    o.layer_id
                )));
            }
        }
        let mut exec = Exec {
            model: self,
            hooks: &mut hooks,
            override_weights,
            trace: Vec::with_capacity(self.registry.len()),
        };
        let head = match &self.layout {
            Layout::Detr(l) => detr::forward(l, &mut exec, image)?,
            Layout::Cnn(l) => cnn::forward(l, &mut exec, image)?,
        };
        let detections = head
            .raw
            .iter()
            .filter(|d| d.score >= self.score_threshold)
            .copied()
            .collect();
        Ok(ForwardOutput {
            raw: head.raw,
            detections,
            trace: LayerTrace { layers: exec.trace },
            has_nan_inf: head.has_nan_inf,
        })
    }
}

pub(crate) struct HeadOutput {
    raw: Vec<Detection>,
    has_nan_inf: bool,
}

/// One forward pass in flight: resolves weights and runs hooks.
pub(crate) struct Exec<'e, 'a> {
    model: &'e Model,
    hooks: &'e mut HookSet<'a>,
    override_weights: Option<WeightOverride<'e>>,
    trace: Vec<LayerStats>,
}

impl Exec<'_, '_> {
    fn w(&self, layer_id: usize) -> &[Tensor] {
        match &self.override_weights {
            Some(o) if o.layer_id == layer_id => o.tensors,
            _ => self.model.weights(layer_id),
        }
    }

    /// Publishes a layer output: fault hook, mitigation hook, trace.
    fn emit(&mut self, layer_id: usize, mut output: Tensor) -> Result<Tensor> {
        let entry = self.model.registry.entry(layer_id)?;
        if output.shape() != entry.output_shape {
            return Err(Error::Dimension(format!(
                "layer {} ({}) produced {:?}, registry says {:?}",
                layer_id,
                entry.name,
                output.shape(),
                entry.output_shape
            )));
        }
        if let Some(last) = self.trace.last() {
            debug_assert!(last.layer_id < layer_id, "layers out of registry order");
        }
        if let Some(f) = self.hooks.fault.as_deref_mut() {
            f.on_output(entry, &mut output);
        }
        if let Some(m) = self.hooks.mitigation {
            m.on_output(entry, &mut output);
        }
        self.trace.push(LayerStats::of(layer_id, output.data()));
        Ok(output)
    }
}

/// Accumulates registry entries and initial weights in execution order.
struct Builder {
    entries: Vec<LayerEntry>,
    weights: Vec<Vec<Tensor>>,
    rng: Rng,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            weights: Vec::new(),
            rng: Rng::new(seed),
        }
    }

    fn push(&mut self, name: String, kind: LayerKind, weights: Vec<Tensor>, output_shape: Vec<usize>) -> usize {
        let id = self.entries.len();
        self.entries.push(LayerEntry {
            id,
            name,
            kind,
            weight_shapes: weights.iter().map(|t| t.shape().to_vec()).collect(),
            output_shape,
        });
        self.weights.push(weights);
        id
    }

    fn op(&mut self, name: impl Into<String>, kind: LayerKind, output_shape: &[usize]) -> usize {
        self.push(name.into(), kind, Vec::new(), output_shape.to_vec())
    }

    fn uniform(&mut self, shape: &[usize], bound: f32) -> Tensor {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| rng.uniform(-bound, bound))
    }

    /// Weight `[out×in]` and bias `[out]`, both uniform in
    /// `±gain/sqrt(fan_in)`.
    fn linear(
        &mut self,
        name: impl Into<String>,
        kind: LayerKind,
        fan_in: usize,
        fan_out: usize,
        rows: usize,
        gain: f32,
    ) -> usize {
        let bound = gain / (fan_in as f32).sqrt();
        let w = self.uniform(&[fan_out, fan_in], bound);
        let b = self.uniform(&[fan_out], bound);
        self.push(name.into(), kind, vec![w, b], vec![rows, fan_out])
    }

    /// Kaiming-uniform kernels (`±sqrt(6/fan_in)`), zero bias.
    fn conv(&mut self, name: impl Into<String>, cin: usize, cout: usize, k: usize, out_hw: usize) -> usize {
        let fan_in = cin * k * k;
        let bound = (6.0 / fan_in as f32).sqrt();
        let w = self.uniform(&[cout, cin, k, k], bound);
        let b = Tensor::zeros(&[cout]);
        self.push(name.into(), LayerKind::Conv, vec![w, b], vec![cout, out_hw, out_hw])
    }

    fn layernorm(&mut self, name: impl Into<String>, rows: usize, width: usize) -> usize {
        let weights = vec![Tensor::full(&[width], 1.0), Tensor::zeros(&[width])];
        self.push(name.into(), LayerKind::LayerNorm, weights, vec![rows, width])
    }

    fn finish(self, spec: ModelSpec, layout: Layout) -> Model {
        Model {
            spec,
            registry: LayerRegistry {
                entries: self.entries,
            },
            weights: self.weights,
            layout,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
        }
    }
}

/// Turns per-query class logits and box terms into a detection. Box terms
/// are `(cx, cy, w, h)` after the caller's sigmoid / cell decoding.
fn decode_detection(class_logits: &[f32], cx: f32, cy: f32, w: f32, h: f32) -> Detection {
    let mut best = 0usize;
    let mut best_logit = f32::NEG_INFINITY;
    let mut saw_nan = false;
    for (i, &l) in class_logits.iter().enumerate() {
        if l.is_nan() {
            saw_nan = true;
        } else if l > best_logit {
            best = i;
            best_logit = l;
        }
    }
    let score = if saw_nan {
        f32::NAN
    } else {
        crate::tensor::sigmoid(best_logit)
    };
    let clamp = |v: f32| v.clamp(0.0, 1.0);
    Detection {
        bbox: [
            clamp(cx - w / 2.0),
            clamp(cy - h / 2.0),
            clamp(cx + w / 2.0),
            clamp(cy + h / 2.0),
        ],
        class_id: best,
        score,
    }
}

pub use io::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
