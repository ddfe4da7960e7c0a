//! Fault-free reference runs, cached by content.
//!
//! The cache key hashes the model weights, the dataset, the mitigation
//! placement with its bounds, and the metric thresholds, so any change to
//! those inputs misses. On disk a golden set is JSON with every float
//! stored as its `u32` bit pattern.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::dataset::SyntheticDataset;
use crate::error::{Error, Result};
use crate::metrics::{match_detections, MatchOutcome};
use crate::mitigation::{resolve_placement, BoundsProfile, MitigationPolicy, Mitigator};
use crate::model::{Detection, HookSet, LayerStats, LayerTrace, MitigationHook, Model};

const GOLDEN_FORMAT: u32 = 1;

#[derive(Clone, Debug)]
pub struct GoldenImage {
    pub image_id: usize,
    /// All head outputs, before score thresholding.
    pub raw: Vec<Detection>,
    pub outcome: MatchOutcome,
    pub trace: LayerTrace,
    pub has_nan_inf: bool,
}

impl GoldenImage {
    pub fn detections(&self, score_threshold: f32) -> Vec<Detection> {
        self.raw.iter().filter(|d| d.score >= score_threshold).copied().collect()
    }
}

#[derive(Clone, Debug)]
pub struct GoldenSet {
    pub key: String,
    pub policy: String,
    /// One entry per evaluation image, in order.
    pub images: Vec<GoldenImage>,
}

/// Inputs that determine a golden set.
pub struct GoldenRequest<'a> {
    pub model: &'a Model,
    pub dataset: &'a SyntheticDataset,
    pub policy: &'a MitigationPolicy,
    pub bounds: &'a BoundsProfile,
    pub iou_threshold: f32,
}

impl GoldenRequest<'_> {
    pub fn key(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let placement = resolve_placement(self.policy, self.model.registry())?;
        let mut h = Sha256::new();
        h.update(GOLDEN_FORMAT.to_le_bytes());
        h.update(self.model.content_hash());
        h.update(self.dataset.content_hash());
        h.update(self.policy.name());
        for (&id, rule) in &placement {
            h.update((id as u64).to_le_bytes());
            h.update([*rule as u8]);
            if let Some(b) = self.bounds.get(id) {
                h.update(b.lower.to_bits().to_le_bytes());
                h.update(b.upper.to_bits().to_le_bytes());
            }
        }
        h.update(self.model.score_threshold().to_bits().to_le_bytes());
        h.update(self.iou_threshold.to_bits().to_le_bytes());
        Ok(hex::encode(h.finalize()))
    }

    fn compute(&self, key: String) -> Result<GoldenSet> {
        let mitigator = match self.policy {
            MitigationPolicy::None => None,
            p => Some(Mitigator::new(p, self.model.registry(), self.bounds)?),
        };
        let images = self
            .dataset
            .eval_images()
            .iter()
            .zip(self.dataset.eval_annotations())
            .enumerate()
            .map(|(image_id, (img, gts))| {
                let hooks = HookSet {
                    fault: None,
                    mitigation: mitigator.as_ref().map(|m| m as &dyn MitigationHook),
                };
                let out = self.model.forward(img, hooks)?;
                let outcome = match_detections(&out.raw, gts, self.iou_threshold, self.model.score_threshold());
                Ok(GoldenImage {
                    image_id,
                    raw: out.raw,
                    outcome,
                    trace: out.trace,
                    has_nan_inf: out.has_nan_inf,
                })
            })
            .collect::<Result<_>>()?;
        Ok(GoldenSet {
            key,
            policy: self.policy.name(),
            images,
        })
    }
}

/// In-memory cache, optionally backed by a directory.
#[derive(Debug, Default)]
pub struct GoldenCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, Arc<GoldenSet>>>,
    computed: Mutex<usize>,
}

impl GoldenCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Self::default()
        }
    }

    /// How many golden sets were computed rather than served from cache.
    pub fn computed(&self) -> usize {
        *self.computed.lock().expect("cache lock")
    }

    pub fn get(&self, req: &GoldenRequest<'_>) -> Result<Arc<GoldenSet>> {
        let key = req.key()?;
        if let Some(hit) = self.mem.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let path = self.dir.as_ref().map(|d| d.join(format!("golden-{key}.json")));
        let loaded = match &path {
            Some(p) if p.exists() => read_golden(p, &key, req).ok(),
            _ => None,
        };
        let set = match loaded {
            Some(set) => set,
            None => {
                let set = req.compute(key.clone())?;
                *self.computed.lock().expect("cache lock") += 1;
                if let Some(p) = &path {
                    write_golden(p, &set)?;
                }
                set
            }
        };
        let set = Arc::new(set);
        self.mem.lock().expect("cache lock").insert(key, set.clone());
        Ok(set)
    }
}

type DetBits = ([u32; 4], usize, u32);
type StatBits = (usize, u32, u32, u32, u32);

#[derive(Serialize, Deserialize)]
struct DiskImage {
    image_id: usize,
    raw: Vec<DetBits>,
    trace: Vec<StatBits>,
    has_nan_inf: bool,
}

#[derive(Serialize, Deserialize)]
struct DiskSet {
    format: u32,
    key: String,
    policy: String,
    images: Vec<DiskImage>,
}

fn write_golden(path: &Path, set: &GoldenSet) -> Result<()> {
    let disk = DiskSet {
        format: GOLDEN_FORMAT,
        key: set.key.clone(),
        policy: set.policy.clone(),
        images: set
            .images
            .iter()
            .map(|g| DiskImage {
                image_id: g.image_id,
                raw: g
                    .raw
                    .iter()
                    .map(|d| (d.bbox.map(f32::to_bits), d.class_id, d.score.to_bits()))
                    .collect(),
                trace: g
                    .trace
                    .layers
                    .iter()
                    .map(|s| (s.layer_id, s.mean.to_bits(), s.variance.to_bits(), s.min.to_bits(), s.max.to_bits()))
                    .collect(),
                has_nan_inf: g.has_nan_inf,
            })
            .collect(),
    };
    let bytes = serde_json::to_vec(&disk)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a cached set, rejecting it if its key or shape does not match the
/// request (the caller then recomputes).
fn read_golden(path: &Path, key: &str, req: &GoldenRequest<'_>) -> Result<GoldenSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let disk: DiskSet = serde_json::from_slice(&bytes)?;
    let gts = req.dataset.eval_annotations();
    if disk.format != GOLDEN_FORMAT || disk.key != key || disk.images.len() != gts.len() {
        return Err(Error::format("golden cache", "stale entry"));
    }
    let images = disk
        .images
        .into_iter()
        .zip(gts)
        .map(|(d, gts)| {
            let raw: Vec<Detection> = d
                .raw
                .into_iter()
                .map(|(b, class_id, score)| Detection {
                    bbox: b.map(f32::from_bits),
                    class_id,
                    score: f32::from_bits(score),
                })
                .collect();
            let trace = LayerTrace {
                layers: d
                    .trace
                    .into_iter()
                    .map(|(layer_id, m, v, lo, hi)| LayerStats {
                        layer_id,
                        mean: f32::from_bits(m),
                        variance: f32::from_bits(v),
                        min: f32::from_bits(lo),
                        max: f32::from_bits(hi),
                    })
                    .collect(),
            };
            let outcome = match_detections(&raw, gts, req.iou_threshold, req.model.score_threshold());
            GoldenImage {
                image_id: d.image_id,
                raw,
                outcome,
                trace,
                has_nan_inf: d.has_nan_inf,
            }
        })
        .collect();
    Ok(GoldenSet {
        key: disk.key,
        policy: disk.policy,
        images,
    })
}
