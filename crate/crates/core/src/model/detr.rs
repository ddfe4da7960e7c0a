//! DETR-style detector with single-scale deformable attention.
//!
//! Backbone: two stride-2 3×3 convolutions with ReLU. The feature map is
//! flattened into tokens (plus a fixed sinusoidal position code) and passed
//! through encoder blocks; learned queries then cross-attend the encoder
//! memory through decoder blocks. Every block has the same shape:
//!
//! ```text
//! A  sampling_offsets   query -> heads·points·2 offsets (feature pixels)
//! B  attention_weights  query -> heads·points logits
//!    softmax            over points, per head
//! C  value_proj         memory -> values
//!    bilinear sampling at reference + offset, weighted sum over points
//! D  output_proj        aggregated -> embed
//!    residual + layernorm, FFN (linear, ReLU, linear), residual + layernorm
//! ```
//!
//! Sampling follows the multi-scale deformable attention kernel: a location
//! outside `(-1, side)` (including NaN) contributes nothing, and each
//! bilinear corner is read only when it lies on the map.

use serde::{Deserialize, Serialize};

use super::{decode_detection, Builder, Exec, HeadOutput, Layout, LayerKind, Model, ModelSpec, Stage, IMAGE_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetrParams {
    pub image_size: usize,
    pub backbone_channels: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub points: usize,
    pub encoders: usize,
    pub decoders: usize,
    pub queries: usize,
    pub ffn_dim: usize,
    pub num_classes: usize,
}

impl Default for DetrParams {
    fn default() -> Self {
        Self {
            image_size: 32,
            backbone_channels: 16,
            embed_dim: 32,
            heads: 4,
            points: 4,
            encoders: 2,
            decoders: 2,
            queries: 8,
            ffn_dim: 64,
            num_classes: 3,
        }
    }
}

impl DetrParams {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("toy_detr: {msg}")));
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad("embed_dim must be a positive multiple of heads");
        }
        if self.encoders == 0 || self.decoders == 0 {
            return bad("encoders and decoders must be >= 1");
        }
        if self.image_size < 8 || self.image_size % 4 != 0 {
            return bad("image_size must be a multiple of 4 and >= 8");
        }
        if self.points == 0 || self.queries == 0 || self.num_classes == 0 {
            return bad("points, queries and num_classes must be >= 1");
        }
        if self.backbone_channels == 0 || self.ffn_dim == 0 || self.embed_dim % 2 != 0 {
            return bad("backbone_channels and ffn_dim must be >= 1, embed_dim even");
        }
        Ok(())
    }

    fn side(&self) -> usize {
        self.image_size / 4
    }
}

/// Class-head init gain. Spreads untrained logits so most queries sit well
/// clear of the score threshold.
const CLASS_HEAD_GAIN: f32 = 6.0;
/// Class-head bias shift; a low prior so only some queries fire.
const CLASS_PRIOR_BIAS: f32 = -2.0;
const LN_EPS: f32 = 1e-5;

#[derive(Clone, Debug)]
pub(crate) struct BlockLayout {
    offsets: usize,
    attn_logits: usize,
    attn_softmax: usize,
    value: usize,
    output: usize,
    norm1: usize,
    ffn1: usize,
    ffn_relu: usize,
    ffn2: usize,
    norm2: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct DetrLayout {
    params: DetrParams,
    conv1: usize,
    relu1: usize,
    conv2: usize,
    relu2: usize,
    encoders: Vec<BlockLayout>,
    query_embed: usize,
    ref_points: usize,
    decoders: Vec<BlockLayout>,
    class_head: usize,
    box_head: usize,
}

fn build_block(b: &mut Builder, p: &DetrParams, prefix: &str, rows: usize, memory_rows: usize) -> BlockLayout {
    let d = p.embed_dim;
    let hp = p.heads * p.points;
    let offsets = b.linear(
        format!("{prefix}.sampling_offsets"),
        LayerKind::AttentionLinear(Stage::A),
        d,
        hp * 2,
        rows,
        1.0,
    );
    // Deformable-attention style offset bias: head h looks along angle
    // 2πh/heads, point k at distance k+1.
    let bias = &mut b.weights[offsets][1];
    for h in 0..p.heads {
        let theta = 2.0 * std::f64::consts::PI * h as f64 / p.heads as f64;
        let (sin, cos) = (libm::sin(theta) as f32, libm::cos(theta) as f32);
        for k in 0..p.points {
            let at = (h * p.points + k) * 2;
            bias.data_mut()[at] = cos * (k + 1) as f32;
            bias.data_mut()[at + 1] = sin * (k + 1) as f32;
        }
    }
    let attn_logits = b.linear(
        format!("{prefix}.attention_weights"),
        LayerKind::AttentionLinear(Stage::B),
        d,
        hp,
        rows,
        1.0,
    );
    let attn_softmax = b.op(format!("{prefix}.attention_softmax"), LayerKind::Softmax, &[rows, p.heads, p.points]);
    let value = b.linear(
        format!("{prefix}.value_proj"),
        LayerKind::AttentionLinear(Stage::C),
        d,
        d,
        memory_rows,
        1.0,
    );
    let output = b.linear(
        format!("{prefix}.output_proj"),
        LayerKind::AttentionLinear(Stage::D),
        d,
        d,
        rows,
        1.0,
    );
    let norm1 = b.layernorm(format!("{prefix}.norm1"), rows, d);
    let ffn1 = b.linear(format!("{prefix}.ffn1"), LayerKind::Linear, d, p.ffn_dim, rows, 1.0);
    let ffn_relu = b.op(format!("{prefix}.ffn_relu"), LayerKind::Activation, &[rows, p.ffn_dim]);
    let ffn2 = b.linear(format!("{prefix}.ffn2"), LayerKind::Linear, p.ffn_dim, d, rows, 1.0);
    let norm2 = b.layernorm(format!("{prefix}.norm2"), rows, d);
    BlockLayout {
        offsets,
        attn_logits,
        attn_softmax,
        value,
        output,
        norm1,
        ffn1,
        ffn_relu,
        ffn2,
        norm2,
    }
}

pub(super) fn build(p: &DetrParams, seed: u64) -> Result<Model> {
    p.validate()?;
    let mut b = Builder::new(seed);
    let (half, side) = (p.image_size / 2, p.side());
    let tokens = side * side;
    let d = p.embed_dim;

    let conv1 = b.conv("backbone.conv1", IMAGE_CHANNELS, p.backbone_channels, 3, half);
    let relu1 = b.op("backbone.relu1", LayerKind::Activation, &[p.backbone_channels, half, half]);
    let conv2 = b.conv("backbone.conv2", p.backbone_channels, d, 3, side);
    let relu2 = b.op("backbone.relu2", LayerKind::Activation, &[d, side, side]);

    let encoders = (0..p.encoders)
        .map(|i| build_block(&mut b, p, &format!("encoder{i}"), tokens, tokens))
        .collect();

    let query_embed = {
        let w = b.uniform(&[p.queries, d], 1.0);
        b.push("decoder.query_embed".into(), LayerKind::Other, vec![w], vec![p.queries, d])
    };
    let ref_points = b.linear("decoder.ref_points", LayerKind::Linear, d, 2, p.queries, 1.0);
    let decoders = (0..p.decoders)
        .map(|i| build_block(&mut b, p, &format!("decoder{i}"), p.queries, tokens))
        .collect();

    let class_head = b.linear("head.class", LayerKind::Linear, d, p.num_classes, p.queries, CLASS_HEAD_GAIN);
    for v in b.weights[class_head][1].data_mut() {
        *v += CLASS_PRIOR_BIAS;
    }
    let box_head = b.linear("head.box", LayerKind::Linear, d, 4, p.queries, 1.0);

    let layout = DetrLayout {
        params: p.clone(),
        conv1,
        relu1,
        conv2,
        relu2,
        encoders,
        query_embed,
        ref_points,
        decoders,
        class_head,
        box_head,
    };
    Ok(b.finish(ModelSpec::toy_detr(p.clone(), seed), Layout::Detr(layout)))
}

/// Fixed 2-D sinusoidal position code, `tokens × d`. First half of the
/// channels encodes the row, second half the column.
fn position_code(side: usize, d: usize) -> Tensor {
    let half = d / 2;
    Tensor::from_fn(&[side * side, d], |i| {
        let (tok, ch) = (i / d, i % d);
        let (pos, j) = if ch < half { (tok / side, ch) } else { (tok % side, ch - half) };
        let freq = libm::pow(10_000.0, -((j / 2 * 2) as f64) / half as f64);
        let angle = pos as f64 * freq;
        (if j % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) }) as f32
    })
}

/// Weighted bilinear sampling of `value` (`side²×d`) at reference points
/// displaced by `offsets`. Returns `rows × d`.
fn deform_sample(
    value: &Tensor,
    side: usize,
    refs: &[[f32; 2]],
    offsets: &Tensor,
    weights: &Tensor,
    heads: usize,
    points: usize,
) -> Tensor {
    let d = value.shape()[1];
    let hd = d / heads;
    let rows = refs.len();
    let (v, off, att) = (value.data(), offsets.data(), weights.data());
    let sidef = side as f32;
    let mut out = vec![0.0f32; rows * d];
    let mut sample = vec![0.0f32; hd];
    for (q, r) in refs.iter().enumerate() {
        for h in 0..heads {
            for k in 0..points {
                let o = (q * heads + h) * points + k;
                let lx = r[0] + off[o * 2] / sidef;
                let ly = r[1] + off[o * 2 + 1] / sidef;
                let px = lx * sidef - 0.5;
                let py = ly * sidef - 0.5;
                if !(px > -1.0 && py > -1.0 && px < sidef && py < sidef) {
                    continue;
                }
                let (x0, y0) = (px.floor(), py.floor());
                let (fx, fy) = (px - x0, py - y0);
                let (x0, y0) = (x0 as isize, y0 as isize);
                let corners = [
                    (y0, x0, (1.0 - fy) * (1.0 - fx)),
                    (y0, x0 + 1, (1.0 - fy) * fx),
                    (y0 + 1, x0, fy * (1.0 - fx)),
                    (y0 + 1, x0 + 1, fy * fx),
                ];
                sample.iter_mut().for_each(|s| *s = 0.0);
                for (cy, cx, cw) in corners {
                    if cy < 0 || cx < 0 || cy >= side as isize || cx >= side as isize {
                        continue;
                    }
                    let base = (cy as usize * side + cx as usize) * d + h * hd;
                    for (s, &val) in sample.iter_mut().zip(&v[base..base + hd]) {
                        *s += cw * val;
                    }
                }
                let a = att[o];
                let dst = &mut out[q * d + h * hd..q * d + (h + 1) * hd];
                for (acc, &s) in dst.iter_mut().zip(&sample) {
                    *acc += a * s;
                }
            }
        }
    }
    Tensor::new(vec![rows, d], out).expect("shape computed above")
}

fn run_block(
    exec: &mut Exec<'_, '_>,
    blk: &BlockLayout,
    p: &DetrParams,
    query: Tensor,
    refs: &[[f32; 2]],
    memory: &Tensor,
) -> Result<Tensor> {
    let rows = query.shape()[0];
    let w = exec.w(blk.offsets);
    let offsets = exec.emit(blk.offsets, query.linear(&w[0], &w[1])?)?;
    let w = exec.w(blk.attn_logits);
    let logits = exec.emit(blk.attn_logits, query.linear(&w[0], &w[1])?)?;
    let attn = exec.emit(
        blk.attn_softmax,
        logits.reshape(&[rows, p.heads, p.points])?.softmax(2)?,
    )?;
    let w = exec.w(blk.value);
    let value = exec.emit(blk.value, memory.linear(&w[0], &w[1])?)?;
    let aggregated = deform_sample(&value, p.side(), refs, &offsets, &attn, p.heads, p.points);
    let w = exec.w(blk.output);
    let out = exec.emit(blk.output, aggregated.linear(&w[0], &w[1])?)?;
    let w = exec.w(blk.norm1);
    let x = exec.emit(blk.norm1, query.add(&out)?.layernorm(&w[0], &w[1], LN_EPS)?)?;
    let w = exec.w(blk.ffn1);
    let h = exec.emit(blk.ffn1, x.linear(&w[0], &w[1])?)?;
    let h = exec.emit(blk.ffn_relu, h.relu())?;
    let w = exec.w(blk.ffn2);
    let h = exec.emit(blk.ffn2, h.linear(&w[0], &w[1])?)?;
    let w = exec.w(blk.norm2);
    exec.emit(blk.norm2, x.add(&h)?.layernorm(&w[0], &w[1], LN_EPS)?)
}

fn inverse_sigmoid(x: f32) -> f32 {
    let x = x.clamp(1e-5, 1.0 - 1e-5);
    libm::logf(x / (1.0 - x))
}

pub(super) fn forward(l: &DetrLayout, exec: &mut Exec<'_, '_>, image: &Tensor) -> Result<HeadOutput> {
    let p = &l.params;
    let (side, d) = (p.side(), p.embed_dim);

    let w = exec.w(l.conv1);
    let x = exec.emit(l.conv1, image.conv2d(&w[0], 2, 1)?.add_channel_bias(&w[1])?)?;
    let x = exec.emit(l.relu1, x.relu())?;
    let w = exec.w(l.conv2);
    let x = exec.emit(l.conv2, x.conv2d(&w[0], 2, 1)?.add_channel_bias(&w[1])?)?;
    let x = exec.emit(l.relu2, x.relu())?;

    let mut memory = x
        .reshape(&[d, side * side])?
        .transpose()?
        .add(&position_code(side, d))?;
    let grid: Vec<[f32; 2]> = (0..side * side)
        .map(|t| {
            [
                ((t % side) as f32 + 0.5) / side as f32,
                ((t / side) as f32 + 0.5) / side as f32,
            ]
        })
        .collect();
    for blk in &l.encoders {
        let src = memory.clone();
        memory = run_block(exec, blk, p, src, &grid, &memory)?;
    }

    let w = exec.w(l.query_embed);
    let mut tgt = exec.emit(l.query_embed, w[0].clone())?;
    let w = exec.w(l.ref_points);
    let ref_logits = exec.emit(l.ref_points, tgt.linear(&w[0], &w[1])?)?;
    let refs: Vec<[f32; 2]> = ref_logits
        .data()
        .chunks(2)
        .map(|c| [sigmoid(c[0]), sigmoid(c[1])])
        .collect();
    for blk in &l.decoders {
        tgt = run_block(exec, blk, p, tgt, &refs, &memory)?;
    }

    let w = exec.w(l.class_head);
    let class_logits = exec.emit(l.class_head, tgt.linear(&w[0], &w[1])?)?;
    let w = exec.w(l.box_head);
    let box_terms = exec.emit(l.box_head, tgt.linear(&w[0], &w[1])?)?;

    let c = p.num_classes;
    let raw = (0..p.queries)
        .map(|q| {
            let t = &box_terms.data()[q * 4..q * 4 + 4];
            let r = refs[q];
            let cx = sigmoid(t[0] + inverse_sigmoid(r[0]));
            let cy = sigmoid(t[1] + inverse_sigmoid(r[1]));
            decode_detection(&class_logits.data()[q * c..(q + 1) * c], cx, cy, sigmoid(t[2]), sigmoid(t[3]))
        })
        .collect();
    Ok(HeadOutput {
        raw,
        has_nan_inf: class_logits.has_non_finite() || box_terms.has_non_finite(),
    })
}
