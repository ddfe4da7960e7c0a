//! Synthetic detection data: filled shapes on textured backgrounds.
//!
//! Class 0 is a rectangle, 1 an ellipse, 2 a triangle. Boxes are pixel
//! aligned, so the annotation is exactly the extent of the painted region.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{GroundTruth, GtBox};
use crate::model::IMAGE_CHANNELS;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const SHAPE_NAMES: [&str; 3] = ["rectangle", "ellipse", "triangle"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub seed: u64,
    /// Images in the training-role split (bounds profiling draws from here).
    pub n_train: usize,
    /// Images in the evaluation split (campaigns run on these).
    pub n_eval: usize,
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub num_classes: usize,
    /// Share of the training split used to profile bounds.
    pub profile_fraction: f64,
    /// Also profile over the evaluation split.
    pub profile_includes_eval: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            n_train: 100,
            n_eval: 100,
            image_size: 32,
            min_objects: 1,
            max_objects: 3,
            num_classes: 3,
            profile_fraction: 0.2,
            profile_includes_eval: false,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("dataset: {m}")));
        if self.n_train + self.n_eval == 0 {
            return fail("need at least one image".into());
        }
        if self.image_size < 8 {
            return fail(format!("image_size {} is below the minimum of 8", self.image_size));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > 8 {
            return fail(format!(
                "objects per image range ({}, {}) must satisfy 1 <= min <= max <= 8",
                self.min_objects, self.max_objects
            ));
        }
        if !(2..=SHAPE_NAMES.len()).contains(&self.num_classes) {
            return fail(format!("num_classes {} must be 2 or 3", self.num_classes));
        }
        if !(self.profile_fraction > 0.0 && self.profile_fraction <= 1.0) {
            return fail(format!("profile_fraction {} must be in (0, 1]", self.profile_fraction));
        }
        if self.n_train == 0 && !self.profile_includes_eval {
            return fail("no training images to profile bounds on".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    spec: DatasetSpec,
    /// Training split first, then evaluation split.
    images: Vec<Tensor>,
    annotations: GroundTruth,
}

/// Shorthand for a dataset whose images all sit in the evaluation split.
pub fn generate_dataset(
    seed: u64,
    n_images: usize,
    image_size: usize,
    objects_per_image: (usize, usize),
) -> Result<SyntheticDataset> {
    SyntheticDataset::generate(&DatasetSpec {
        seed,
        n_train: 0,
        n_eval: n_images,
        image_size,
        min_objects: objects_per_image.0,
        max_objects: objects_per_image.1,
        profile_includes_eval: true,
        ..DatasetSpec::default()
    })
}

impl SyntheticDataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n_train + spec.n_eval;
        let (images, annotations) = (0..n)
            .map(|i| draw_image(spec, &mut Rng::with_stream(spec.seed, i as u64)))
            .unzip();
        Ok(Self {
            spec: spec.clone(),
            images,
            annotations,
        })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn train_images(&self) -> &[Tensor] {
        &self.images[..self.spec.n_train]
    }

    pub fn eval_images(&self) -> &[Tensor] {
        &self.images[self.spec.n_train..]
    }

    pub fn eval_annotations(&self) -> &[Vec<GtBox>] {
        &self.annotations[self.spec.n_train..]
    }

    pub fn train_annotations(&self) -> &[Vec<GtBox>] {
        &self.annotations[..self.spec.n_train]
    }

    /// Indices (into the full image list) used for bounds profiling: the
    /// first `ceil(fraction · n_train)` training images, plus the whole
    /// evaluation split when configured.
    pub fn profile_indices(&self) -> Vec<usize> {
        let s = &self.spec;
        let k = ((s.profile_fraction * s.n_train as f64).ceil() as usize).min(s.n_train);
        let mut idx: Vec<usize> = (0..k).collect();
        if s.profile_includes_eval {
            idx.extend(s.n_train..s.n_train + s.n_eval);
        }
        idx
    }

    pub fn profile_images(&self) -> Vec<&Tensor> {
        self.profile_indices().into_iter().map(|i| &self.images[i]).collect()
    }

    /// SHA-256 over the spec, every image's bits, and every annotation.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.spec).expect("dataset spec serializes"));
        for (img, ann) in self.images.iter().zip(&self.annotations) {
            h.update(img.to_bytes());
            h.update((ann.len() as u64).to_le_bytes());
            for g in ann {
                h.update((g.class_id as u64).to_le_bytes());
                for v in g.bbox {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let split = |i: usize| if i < self.spec.n_train { "train" } else { "eval" };
        let images: Vec<_> = self
            .annotations
            .iter()
            .enumerate()
            .map(|(i, ann)| {
                serde_json::json!({
                    "index": i,
                    "split": split(i),
                    "annotations": ann,
                })
            })
            .collect();
        serde_json::json!({
            "spec": self.spec,
            "hash": self.content_hash(),
            "profile_indices": self.profile_indices(),
            "images": images,
        })
    }
}

fn draw_image(spec: &DatasetSpec, rng: &mut Rng) -> (Tensor, Vec<GtBox>) {
    let s = spec.image_size;
    let mut img = Tensor::zeros(&[IMAGE_CHANNELS, s, s]);

    // Background: per-channel base tone, a diagonal stripe pattern, and
    // per-pixel noise, all kept below the shape intensities.
    let base: Vec<f32> = (0..IMAGE_CHANNELS).map(|_| rng.uniform(0.05, 0.3)).collect();
    let period = rng.range_inclusive(3, 7);
    let phase = rng.below(period);
    let data = img.data_mut();
    for c in 0..IMAGE_CHANNELS {
        for y in 0..s {
            for x in 0..s {
                let stripe = if (x + y + phase) % period == 0 { 0.08 } else { 0.0 };
                data[(c * s + y) * s + x] = base[c] + stripe + rng.uniform(0.0, 0.05);
            }
        }
    }

    let n = rng.range_inclusive(spec.min_objects, spec.max_objects);
    let mut boxes = Vec::with_capacity(n);
    let (lo, hi) = ((s / 5).max(3), (s / 2).max(4));
    for _ in 0..n {
        let class_id = rng.below(spec.num_classes);
        let w = rng.range_inclusive(lo, hi);
        let h = rng.range_inclusive(lo, hi);
        let x0 = rng.below(s - w + 1);
        let y0 = rng.below(s - h + 1);
        let color: Vec<f32> = (0..IMAGE_CHANNELS).map(|_| rng.uniform(0.6, 1.0)).collect();
        paint(img.data_mut(), s, class_id, (x0, y0, w, h), &color);
        let inv = 1.0 / s as f32;
        boxes.push(GtBox {
            bbox: [
                x0 as f32 * inv,
                y0 as f32 * inv,
                (x0 + w) as f32 * inv,
                (y0 + h) as f32 * inv,
            ],
            class_id,
        });
    }
    (img, boxes)
}

/// Fills the pixels of shape `class_id` inside the box. Every shape
/// touches all four box edges.
fn paint(data: &mut [f32], s: usize, class_id: usize, (x0, y0, w, h): (usize, usize, usize, usize), color: &[f32]) {
    for py in 0..h {
        for px in 0..w {
            // pixel centre relative to the box, in [0, 1]
            let u = (px as f32 + 0.5) / w as f32;
            let v = (py as f32 + 0.5) / h as f32;
            let inside = match class_id {
                0 => true,
                1 => {
                    let (du, dv) = (u - 0.5, v - 0.5);
                    // include edge-touching pixels on the axes
                    du * du + dv * dv <= 0.25 || px == w / 2 || py == h / 2
                }
                _ => (u - 0.5).abs() <= 0.5 * v || py == h - 1 || (py == 0 && px == w / 2),
            };
            if inside {
                for (c, &col) in color.iter().enumerate() {
                    data[(c * s + y0 + py) * s + x0 + px] = col;
                }
            }
        }
    }
}
