//! Plain convolutional detector: `layers` 3×3 conv + ReLU pairs followed by
//! a per-cell linear head (anchor-free, single scale). Each grid cell emits
//! one detection.

use serde::{Deserialize, Serialize};

use super::{decode_detection, Builder, Exec, HeadOutput, Layout, LayerKind, Model, ModelSpec, IMAGE_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnParams {
    pub image_size: usize,
    pub layers: usize,
    pub channels: usize,
    /// How many of the leading conv layers use stride 2.
    pub downsample: usize,
    pub num_classes: usize,
}

impl Default for CnnParams {
    fn default() -> Self {
        Self {
            image_size: 32,
            layers: 6,
            channels: 16,
            downsample: 3,
            num_classes: 3,
        }
    }
}

const CLASS_HEAD_GAIN: f32 = 6.0;
const CLASS_PRIOR_BIAS: f32 = -2.0;

#[derive(Clone, Debug)]
pub(crate) struct CnnLayout {
    params: CnnParams,
    convs: Vec<(usize, usize)>,
    head: usize,
    grid: usize,
}

pub(super) fn build(p: &CnnParams, seed: u64) -> Result<Model> {
    if p.layers == 0 || p.channels == 0 || p.num_classes == 0 {
        return Err(Error::Config("toy_cnn: layers, channels, num_classes must be >= 1".into()));
    }
    if p.downsample > p.layers || p.image_size == 0 || p.image_size % (1 << p.downsample) != 0 {
        return Err(Error::Config(format!(
            "toy_cnn: image_size {} not divisible by 2^{} (or downsample > layers)",
            p.image_size, p.downsample
        )));
    }
    let mut b = Builder::new(seed);
    let mut hw = p.image_size;
    let mut convs = Vec::with_capacity(p.layers);
    for i in 0..p.layers {
        let cin = if i == 0 { IMAGE_CHANNELS } else { p.channels };
        if i < p.downsample {
            hw /= 2;
        }
        let conv = b.conv(format!("conv{i}"), cin, p.channels, 3, hw);
        let relu = b.op(format!("relu{i}"), LayerKind::Activation, &[p.channels, hw, hw]);
        convs.push((conv, relu));
    }
    let cells = hw * hw;
    let head = b.linear("head", LayerKind::Linear, p.channels, 4 + p.num_classes, cells, CLASS_HEAD_GAIN);
    for v in &mut b.weights[head][1].data_mut()[4..] {
        *v += CLASS_PRIOR_BIAS;
    }
    let layout = CnnLayout {
        params: p.clone(),
        convs,
        head,
        grid: hw,
    };
    Ok(b.finish(ModelSpec::toy_cnn(p.clone(), seed), Layout::Cnn(layout)))
}

pub(super) fn forward(l: &CnnLayout, exec: &mut Exec<'_, '_>, image: &Tensor) -> Result<HeadOutput> {
    let p = &l.params;
    let mut x = image.clone();
    for (i, &(conv, relu)) in l.convs.iter().enumerate() {
        let stride = if i < p.downsample { 2 } else { 1 };
        let w = exec.w(conv);
        let y = exec.emit(conv, x.conv2d(&w[0], stride, 1)?.add_channel_bias(&w[1])?)?;
        x = exec.emit(relu, y.relu())?;
    }
    let g = l.grid;
    let cells = x.reshape(&[p.channels, g * g])?.transpose()?;
    let w = exec.w(l.head);
    let out = exec.emit(l.head, cells.linear(&w[0], &w[1])?)?;
    let width = 4 + p.num_classes;
    let raw = out
        .data()
        .chunks(width)
        .enumerate()
        .map(|(cell, t)| {
            let (gx, gy) = ((cell % g) as f32, (cell / g) as f32);
            let cx = (gx + sigmoid(t[0])) / g as f32;
            let cy = (gy + sigmoid(t[1])) / g as f32;
            decode_detection(&t[4..], cx, cy, sigmoid(t[2]), sigmoid(t[3]))
        })
        .collect();
    Ok(HeadOutput {
        raw,
        has_nan_inf: out.has_non_finite(),
    })
}
