//! The computations behind the page, as plain Rust returning JSON values.

use serde_json::{json, Value};

use rangeguard::campaign::{profile_dataset, DatasetSpec, SyntheticDataset};
use rangeguard::fault::{flip_bits, run_with_fault, FaultPlan, FaultTarget, FlipSite, SiteLocation};
use rangeguard::metrics::compare_traces;
use rangeguard::mitigation::{restrict, BoundsProfile, MitigationPolicy, Mitigator, RestrictionRule};
use rangeguard::model::{DetrParams, HookSet, MitigationHook, Model, ModelSpec};
use rangeguard::{Error, Result, Tensor};

fn fields(v: f32) -> Value {
    let b = v.to_bits();
    json!({
        "value": format!("{v:e}"),
        "hex": format!("{b:#010x}"),
        "binary": format!("{b:032b}"),
        "sign": b >> 31,
        "exponent": (b >> 23) & 0xff,
        "mantissa": b & 0x7f_ffff,
        "finite": v.is_finite(),
    })
}

pub fn flip(value: f32, bit: u32) -> Result<Value> {
    let flipped = flip_bits(value, &[bit])?;
    Ok(json!({ "bit": bit, "before": fields(value), "after": fields(flipped) }))
}

pub fn restriction_curve(lower: f32, upper: f32, xmin: f32, xmax: f32, n: usize) -> Result<Value> {
    if !(lower <= upper && xmin < xmax && (2..=4096).contains(&n)) {
        return Err(Error::Config(format!(
            "need lower <= upper, xmin < xmax and 2 <= n <= 4096 (got {lower}, {upper}, {xmin}, {xmax}, {n})"
        )));
    }
    let xs: Vec<f32> = (0..n).map(|i| xmin + (xmax - xmin) * i as f32 / (n - 1) as f32).collect();
    let apply = |rule| xs.iter().map(|&x| restrict(x, rule, lower, upper)).collect::<Vec<_>>();
    Ok(json!({
        "x": xs,
        "clip_to_zero": apply(RestrictionRule::ClipToZero),
        "clamp": apply(RestrictionRule::ClampToBounds),
    }))
}

pub struct Session {
    model: Model,
    images: Vec<Tensor>,
    bounds: BoundsProfile,
}

impl Session {
    pub fn new(model_seed: u64, dataset_seed: u64) -> Result<Self> {
        let model = ModelSpec::toy_detr(DetrParams::default(), model_seed).build()?;
        let data = SyntheticDataset::generate(&DatasetSpec {
            seed: dataset_seed,
            n_train: 10,
            n_eval: 4,
            ..DatasetSpec::default()
        })?;
        let bounds = profile_dataset(&model, &data)?;
        Ok(Self {
            images: data.eval_images().to_vec(),
            model,
            bounds,
        })
    }

    pub fn layers(&self) -> Value {
        self.model.registry().to_json()
    }

    pub fn images(&self) -> usize {
        self.images.len()
    }

    pub fn inject(&self, image: usize, layer_id: usize, element: usize, bit: u32, policy: &str) -> Result<Value> {
        let img = self.images.get(image).ok_or(Error::Index {
            index: image,
            len: self.images.len(),
        })?;
        if bit > 31 {
            return Err(Error::BitRange(bit));
        }
        let entry = self.model.registry().entry(layer_id)?;
        let plan = FaultPlan {
            target: FaultTarget::Neurons,
            layer_id,
            sites: vec![FlipSite {
                location: SiteLocation::Neuron {
                    index: element % entry.output_len().max(1),
                },
                bit: bit as u8,
            }],
        };
        let policy = MitigationPolicy::parse(policy)?;
        let mitigator = match policy {
            MitigationPolicy::None => None,
            ref p => Some(Mitigator::new(p, self.model.registry(), &self.bounds)?),
        };
        let hook = mitigator.as_ref().map(|m| m as &dyn MitigationHook);

        let golden = self.model.forward(img, HookSet::none())?;
        let raw = run_with_fault(&self.model, img, &plan, None)?;
        let guarded = run_with_fault(&self.model, img, &plan, hook)?;
        let raw_delta = compare_traces(&golden.trace, &raw.output.trace, Some(&self.bounds))?;
        let layers: Vec<Value> = golden
            .trace
            .layers
            .iter()
            .zip(&raw.output.trace.layers)
            .zip(&guarded.output.trace.layers)
            .zip(&raw_delta)
            .map(|(((g, r), p), d)| {
                let name = self.model.registry().get(g.layer_id).map(|e| e.name.as_str());
                let protected = mitigator.as_ref().is_some_and(|m| m.protected_layers().any(|(id, _, _)| id == g.layer_id));
                json!({
                    "layer_id": g.layer_id,
                    "name": name,
                    "golden": g.mean,
                    "faulty": r.mean,
                    "mitigated": p.mean,
                    "faulty_out_of_bounds": d.out_of_bounds,
                    "protected": protected,
                })
            })
            .collect();
        Ok(json!({
            "fault": raw.record.to_json(),
            "policy": policy.name(),
            "detections": {
                "golden": golden.detections.len(),
                "faulty": raw.output.detections.len(),
                "mitigated": guarded.output.detections.len(),
            },
            "nan_inf": {
                "faulty": raw.output.has_nan_inf,
                "mitigated": guarded.output.has_nan_inf,
            },
            "layers": layers,
        }))
    }
}
