//! Detection matching, IVMOD vulnerability rates, AP50 and trace deltas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mitigation::BoundsProfile;
use crate::model::{Detection, LayerTrace};

pub const DEFAULT_IOU_THRESHOLD: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    #[serde(rename = "box")]
    pub bbox: [f32; 4],
    pub class_id: usize,
}

/// Ground truth for a set of images, indexed by image.
pub type GroundTruth = Vec<Vec<GtBox>>;

/// Intersection over union of two `(x_min, y_min, x_max, y_max)` boxes.
/// Any NaN coordinate gives 0.
pub fn iou(a: &[f32; 4], b: &[f32; 4]) -> f32 {
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return 0.0;
    }
    let area = |r: &[f32; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if !(union > 0.0) || !inter.is_finite() {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `(prediction index, ground-truth index)` in input order.
    pub pairs: Vec<(usize, usize)>,
}

/// Indices of `preds` with a score at or above `threshold`, by descending
/// score; ties keep input order. NaN scores are dropped.
fn ranked(preds: &[Detection], threshold: f32) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len())
        .filter(|&i| preds[i].score >= threshold)
        .collect();
    idx.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    idx
}

/// Best still-unmatched ground truth of the same class with IoU at or above
/// the threshold (highest IoU, lowest index on ties).
fn best_gt(pred: &Detection, gts: &[GtBox], taken: &[bool], iou_threshold: f32) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (g, gt) in gts.iter().enumerate() {
        if taken[g] || gt.class_id != pred.class_id {
            continue;
        }
        let o = iou(&pred.bbox, &gt.bbox);
        if o >= iou_threshold && best.map_or(true, |(_, b)| o > b) {
            best = Some((g, o));
        }
    }
    best.map(|(g, _)| g)
}

/// Greedy matching: predictions by descending score each take the best
/// unmatched same-class ground truth. Leftover predictions are false
/// positives, leftover ground truths false negatives.
pub fn match_detections(
    preds: &[Detection],
    gts: &[GtBox],
    iou_threshold: f32,
    score_threshold: f32,
) -> MatchOutcome {
    let mut taken = vec![false; gts.len()];
    let mut out = MatchOutcome::default();
    for p in ranked(preds, score_threshold) {
        match best_gt(&preds[p], gts, &taken, iou_threshold) {
            Some(g) => {
                taken[g] = true;
                out.tp += 1;
                out.pairs.push((p, g));
            }
            None => out.fp += 1,
        }
    }
    out.fn_ = gts.len() - out.tp;
    out
}

/// Per-inference outcome classification.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceFlags {
    pub sdc: bool,
    pub due: bool,
    pub fd: bool,
}

impl InferenceFlags {
    pub fn classify(golden: &MatchOutcome, faulty: &MatchOutcome, has_nan_inf: bool) -> Self {
        let sdc = golden.fp != faulty.fp || golden.fn_ != faulty.fn_;
        Self {
            sdc,
            due: has_nan_inf,
            fd: sdc || has_nan_inf,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IvmodReport {
    pub sdc_rate: f64,
    pub due_rate: f64,
    pub fd_rate: f64,
    pub n: usize,
}

impl IvmodReport {
    pub fn from_flags<'a>(flags: impl IntoIterator<Item = &'a InferenceFlags>) -> Self {
        let (mut n, mut sdc, mut due, mut fd) = (0usize, 0usize, 0usize, 0usize);
        for f in flags {
            n += 1;
            sdc += f.sdc as usize;
            due += f.due as usize;
            fd += f.fd as usize;
        }
        if n == 0 {
            return Self::default();
        }
        let rate = |k: usize| k as f64 / n as f64;
        Self {
            sdc_rate: rate(sdc),
            due_rate: rate(due),
            fd_rate: rate(fd),
            n,
        }
    }
}

/// IVMOD rates over paired golden / faulty inferences. The fd indicator is
/// the per-inference OR of the SDC and DUE conditions, averaged.
pub fn ivmod(golden: &[MatchOutcome], faulty: &[(MatchOutcome, bool)]) -> Result<IvmodReport> {
    if golden.len() != faulty.len() {
        return Err(Error::Pairing(format!(
            "{} golden vs {} faulty inferences",
            golden.len(),
            faulty.len()
        )));
    }
    let flags: Vec<InferenceFlags> = golden
        .iter()
        .zip(faulty)
        .map(|(g, (f, nan))| InferenceFlags::classify(g, f, *nan))
        .collect();
    Ok(IvmodReport::from_flags(&flags))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ap50 {
    pub value: f64,
    /// Set when there were no ground-truth boxes; `value` is then 0.
    pub no_ground_truth: bool,
}

/// AP at IoU 0.5 with all-point interpolation. Predictions from every
/// image are pooled and ranked by score (ties: image order, then index).
pub fn ap50(preds: &[Vec<Detection>], gts: &[Vec<GtBox>]) -> Result<Ap50> {
    average_precision(preds, gts, DEFAULT_IOU_THRESHOLD)
}

pub fn average_precision(preds: &[Vec<Detection>], gts: &[Vec<GtBox>], iou_threshold: f32) -> Result<Ap50> {
    if preds.len() != gts.len() {
        return Err(Error::Pairing(format!(
            "{} prediction lists vs {} ground-truth lists",
            preds.len(),
            gts.len()
        )));
    }
    let total_gt: usize = gts.iter().map(Vec::len).sum();
    if total_gt == 0 {
        return Ok(Ap50 {
            value: 0.0,
            no_ground_truth: true,
        });
    }
    let mut pooled: Vec<(usize, usize)> = preds
        .iter()
        .enumerate()
        .flat_map(|(img, ds)| (0..ds.len()).map(move |i| (img, i)))
        .filter(|&(img, i)| !preds[img][i].score.is_nan())
        .collect();
    pooled.sort_by(|a, b| preds[b.0][b.1].score.total_cmp(&preds[a.0][a.1].score));

    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(pooled.len());
    let mut recall = Vec::with_capacity(pooled.len());
    for (k, &(img, i)) in pooled.iter().enumerate() {
        if let Some(g) = best_gt(&preds[img][i], &gts[img], &taken[img], iou_threshold) {
            taken[img][g] = true;
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / total_gt as f64);
    }
    // Precision envelope from the right, then sum over recall steps.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut value = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        if *r > prev_recall {
            value += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    Ok(Ap50 {
        value,
        no_ground_truth: false,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct TraceDelta {
    pub layer_id: usize,
    pub mean_delta: f32,
    pub var_delta: f32,
    /// The faulty output left the profiled `[lower, upper]` range (or
    /// contained NaN). Always false when no bounds are supplied.
    pub out_of_bounds: bool,
}

pub fn compare_traces(
    golden: &LayerTrace,
    faulty: &LayerTrace,
    bounds: Option<&BoundsProfile>,
) -> Result<Vec<TraceDelta>> {
    if golden.layers.len() != faulty.layers.len() {
        return Err(Error::Pairing(format!(
            "traces cover {} vs {} layers",
            golden.layers.len(),
            faulty.layers.len()
        )));
    }
    golden
        .layers
        .iter()
        .zip(&faulty.layers)
        .map(|(g, f)| {
            if g.layer_id != f.layer_id {
                return Err(Error::Pairing(format!(
                    "layer id {} paired with {}",
                    g.layer_id, f.layer_id
                )));
            }
            let out_of_bounds = bounds.and_then(|b| b.get(f.layer_id)).is_some_and(|b| {
                f.min.is_nan() || f.max.is_nan() || f.min < b.lower || f.max > b.upper
            });
            Ok(TraceDelta {
                layer_id: g.layer_id,
                mean_delta: f.mean - g.mean,
                var_delta: f.variance - g.variance,
                out_of_bounds,
            })
        })
        .collect()
}
