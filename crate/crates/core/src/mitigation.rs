//! Range restriction: per-layer bounds profiling, restriction rules, and
//! placement policies.
//!
//! | policy                  | activations   | attention linears |
//! |-------------------------|---------------|-------------------|
//! | `Ranger`                | clamp         | -                 |
//! | `Clipper`               | clip to zero  | -                 |
//! | `GlobalRanger`          | clamp         | clamp             |
//! | `GlobalClipper`         | clip to zero  | clip to zero      |
//! | `GlobalHybridClipper`   | clip to zero  | clamp             |
//!
//! Softmax layers are never protected.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HookSet, LayerEntry, LayerKind, LayerRegistry, MitigationHook, Model, Stage};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestrictionRule {
    /// Out-of-range or non-finite values become 0.
    ClipToZero,
    /// Values are saturated to the nearest bound; NaN becomes 0.
    ClampToBounds,
}

pub fn restrict(x: f32, rule: RestrictionRule, lower: f32, upper: f32) -> f32 {
    match rule {
        RestrictionRule::ClipToZero => {
            if !x.is_finite() || x < lower || x > upper {
                0.0
            } else {
                x
            }
        }
        RestrictionRule::ClampToBounds => {
            if x.is_nan() {
                0.0
            } else if x < lower {
                lower
            } else if x > upper {
                upper
            } else {
                x
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerBounds {
    pub lower: f32,
    pub upper: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub description: String,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsProfile {
    pub bounds: BTreeMap<usize, LayerBounds>,
    pub names: BTreeMap<usize, String>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct BoundsRow {
    layer_id: usize,
    name: String,
    lower: f32,
    upper: f32,
    lower_hex: String,
    upper_hex: String,
}

#[derive(Serialize, Deserialize)]
struct BoundsFile {
    provenance: Provenance,
    layers: Vec<BoundsRow>,
}

fn parse_hex(field: &str, s: &str) -> Result<f32> {
    let digits = s.strip_prefix("0x").unwrap_or(s);
    u32::from_str_radix(digits, 16)
        .map(f32::from_bits)
        .map_err(|e| Error::format(field, format!("{s:?}: {e}")))
}

impl BoundsProfile {
    pub fn get(&self, layer_id: usize) -> Option<LayerBounds> {
        self.bounds.get(&layer_id).copied()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let layers = self
            .bounds
            .iter()
            .map(|(&id, b)| BoundsRow {
                layer_id: id,
                name: self.names.get(&id).cloned().unwrap_or_default(),
                lower: b.lower,
                upper: b.upper,
                lower_hex: format!("{:#010x}", b.lower.to_bits()),
                upper_hex: format!("{:#010x}", b.upper.to_bits()),
            })
            .collect();
        serde_json::to_value(BoundsFile {
            provenance: self.provenance.clone(),
            layers,
        })
        .expect("bounds are finite")
    }

    /// Parses the JSON form. Hex bit patterns are authoritative; the decimal
    /// fields are informational.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let file: BoundsFile = serde_json::from_value(value.clone())
            .map_err(|e| Error::format("bounds", e.to_string()))?;
        let mut bounds = BTreeMap::new();
        let mut names = BTreeMap::new();
        for row in file.layers {
            let lower = parse_hex(&format!("layer {} lower_hex", row.layer_id), &row.lower_hex)?;
            let upper = parse_hex(&format!("layer {} upper_hex", row.layer_id), &row.upper_hex)?;
            if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
                return Err(Error::format(
                    format!("layer {} bounds", row.layer_id),
                    format!("need finite lower <= upper, got ({lower}, {upper})"),
                ));
            }
            bounds.insert(row.layer_id, LayerBounds { lower, upper });
            names.insert(row.layer_id, row.name);
        }
        Ok(Self {
            bounds,
            names,
            provenance: file.provenance,
        })
    }

    /// SHA-256 over layer ids and bound bit patterns.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (&id, b) in &self.bounds {
            h.update((id as u64).to_le_bytes());
            h.update(b.lower.to_bits().to_le_bytes());
            h.update(b.upper.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Min/max of every layer's output over fault-free inferences of `images`.
pub fn profile_bounds(model: &Model, images: &[&Tensor], description: &str) -> Result<BoundsProfile> {
    if images.is_empty() {
        return Err(Error::Config("bounds profiling needs at least one image".into()));
    }
    let mut bounds: BTreeMap<usize, LayerBounds> = BTreeMap::new();
    for image in images {
        let out = model.forward(image, HookSet::none())?;
        for s in &out.trace.layers {
            let b = bounds.entry(s.layer_id).or_insert(LayerBounds {
                lower: f32::INFINITY,
                upper: f32::NEG_INFINITY,
            });
            b.lower = b.lower.min(s.min);
            b.upper = b.upper.max(s.max);
        }
    }
    for (&id, b) in &bounds {
        if !(b.lower.is_finite() && b.upper.is_finite()) {
            return Err(Error::Config(format!(
                "layer {id} produced non-finite values during profiling"
            )));
        }
    }
    let names = bounds
        .keys()
        .map(|&id| (id, model.registry().get(id).map(|e| e.name.clone()).unwrap_or_default()))
        .collect();
    Ok(BoundsProfile {
        bounds,
        names,
        provenance: Provenance {
            description: description.to_string(),
            samples: images.len(),
        },
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationPolicy {
    None,
    Ranger,
    Clipper,
    GlobalRanger,
    GlobalClipper,
    GlobalHybridClipper,
    Custom {
        /// Label used in reports, e.g. `"CD"`.
        label: String,
        rules: BTreeMap<usize, RestrictionRule>,
    },
}

impl MitigationPolicy {
    pub fn name(&self) -> String {
        match self {
            MitigationPolicy::None => "none".into(),
            MitigationPolicy::Ranger => "ranger".into(),
            MitigationPolicy::Clipper => "clipper".into(),
            MitigationPolicy::GlobalRanger => "global_ranger".into(),
            MitigationPolicy::GlobalClipper => "global_clipper".into(),
            MitigationPolicy::GlobalHybridClipper => "global_hybrid_clipper".into(),
            MitigationPolicy::Custom { label, .. } => format!("custom:{label}"),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "none" => MitigationPolicy::None,
            "ranger" => MitigationPolicy::Ranger,
            "clipper" => MitigationPolicy::Clipper,
            "global_ranger" => MitigationPolicy::GlobalRanger,
            "global_clipper" => MitigationPolicy::GlobalClipper,
            "global_hybrid_clipper" => MitigationPolicy::GlobalHybridClipper,
            other => return Err(Error::Config(format!("unknown mitigation policy {other:?}"))),
        })
    }

    pub const NAMED: [MitigationPolicy; 6] = [
        MitigationPolicy::None,
        MitigationPolicy::Ranger,
        MitigationPolicy::Clipper,
        MitigationPolicy::GlobalRanger,
        MitigationPolicy::GlobalClipper,
        MitigationPolicy::GlobalHybridClipper,
    ];
}

/// Which rule applies at which layer.
pub type Placement = BTreeMap<usize, RestrictionRule>;

pub fn resolve_placement(policy: &MitigationPolicy, registry: &LayerRegistry) -> Result<Placement> {
    use RestrictionRule::{ClampToBounds as Clamp, ClipToZero as Clip};
    let (act, attn) = match policy {
        MitigationPolicy::None => (None, None),
        MitigationPolicy::Ranger => (Some(Clamp), None),
        MitigationPolicy::Clipper => (Some(Clip), None),
        MitigationPolicy::GlobalRanger => (Some(Clamp), Some(Clamp)),
        MitigationPolicy::GlobalClipper => (Some(Clip), Some(Clip)),
        MitigationPolicy::GlobalHybridClipper => (Some(Clip), Some(Clamp)),
        MitigationPolicy::Custom { rules, .. } => {
            for &id in rules.keys() {
                let entry = registry
                    .get(id)
                    .ok_or_else(|| Error::Placement(format!("unknown layer id {id}")))?;
                if entry.kind == LayerKind::Softmax {
                    return Err(Error::Placement(format!(
                        "layer {id} ({}) is a softmax and cannot be protected",
                        entry.name
                    )));
                }
            }
            return Ok(rules.clone());
        }
    };
    Ok(registry
        .iter()
        .filter_map(|e| {
            let rule = match e.kind {
                LayerKind::Activation => act,
                LayerKind::AttentionLinear(_) => attn,
                _ => None,
            };
            rule.map(|r| (e.id, r))
        })
        .collect())
}

/// Every activation plus only the attention linears of the given stages,
/// all with [`RestrictionRule::ClipToZero`].
pub fn minimal_placement(stages: &BTreeSet<Stage>, registry: &LayerRegistry) -> Result<MitigationPolicy> {
    if stages.is_empty() {
        return Err(Error::Config("minimal placement needs at least one stage".into()));
    }
    let rules = registry
        .iter()
        .filter(|e| match e.kind {
            LayerKind::Activation => true,
            LayerKind::AttentionLinear(s) => stages.contains(&s),
            _ => false,
        })
        .map(|e| (e.id, RestrictionRule::ClipToZero))
        .collect();
    Ok(MitigationPolicy::Custom {
        label: stages.iter().map(|s| s.label()).collect(),
        rules,
    })
}

/// The mitigation hook: applies resolved rules with profiled bounds.
#[derive(Clone, Debug)]
pub struct Mitigator {
    policy_name: String,
    /// Indexed by layer id.
    slots: Vec<Option<(RestrictionRule, LayerBounds)>>,
}

impl Mitigator {
    pub fn new(policy: &MitigationPolicy, registry: &LayerRegistry, bounds: &BoundsProfile) -> Result<Self> {
        let placement = resolve_placement(policy, registry)?;
        let mut slots = vec![None; registry.len()];
        for (id, rule) in placement {
            let b = bounds.get(id).ok_or_else(|| {
                Error::Config(format!("no profiled bounds for protected layer {id}"))
            })?;
            slots[id] = Some((rule, b));
        }
        Ok(Self {
            policy_name: policy.name(),
            slots,
        })
    }

    pub fn policy_name(&self) -> &str {
        &self.policy_name
    }

    pub fn protected_layers(&self) -> impl Iterator<Item = (usize, RestrictionRule, LayerBounds)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(id, s)| s.map(|(r, b)| (id, r, b)))
    }
}

impl MitigationHook for Mitigator {
    fn validate(&self, registry: &LayerRegistry) -> Result<()> {
        if self.slots.len() != registry.len() {
            return Err(Error::Config(format!(
                "mitigator built for {} layers, model has {}",
                self.slots.len(),
                registry.len()
            )));
        }
        Ok(())
    }

    fn on_output(&self, layer: &LayerEntry, output: &mut Tensor) {
        if let Some(Some((rule, b))) = self.slots.get(layer.id) {
            for v in output.data_mut() {
                *v = restrict(*v, *rule, b.lower, b.upper);
            }
        }
    }
}
