//! End-to-end experiments: synthetic data, golden runs, fault campaigns,
//! layer sweeps, placement ablations and reports.
//!
//! A [`CampaignConfig`] fully determines every output byte. Each scheduled
//! injection draws its plan from its own RNG stream of `fault.seed`, so the
//! schedule does not depend on the policy under test (runs with different
//! policies are paired) nor on execution order. Execution may fan out over
//! threads; rows are always emitted in schedule order.

mod dataset;
mod golden;
mod report;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use dataset::{generate_dataset, DatasetSpec, SyntheticDataset, SHAPE_NAMES};
pub use golden::{GoldenCache, GoldenImage, GoldenRequest, GoldenSet};
pub use report::{
    build_bundle, csv_bytes, read_csv, read_csv_file, report, traces_path, write_csv, CampaignRow, BUNDLE_FORMAT,
    CSV_HEADER,
};

use crate::error::{Error, Result};
use crate::fault::{run_with_fault, sample_plan, FaultPlan, FaultSpec, KindSelector, LayerSelection};
use crate::metrics::{ap50, compare_traces, match_detections, Ap50, InferenceFlags, IvmodReport};
use crate::mitigation::{minimal_placement, profile_bounds, BoundsProfile, MitigationPolicy, Mitigator};
use crate::model::{Architecture, DetrParams, LayerKind, MitigationHook, Model, ModelSpec, Stage};
use crate::rng::{Rng, RNG_ALGORITHM};

pub const SIDECAR_FORMAT: u32 = 1;

fn default_name() -> String {
    "campaign".into()
}

fn default_model() -> ModelSpec {
    ModelSpec::toy_detr(DetrParams::default(), 0)
}

fn default_policy() -> MitigationPolicy {
    MitigationPolicy::None
}

fn default_images() -> usize {
    100
}

fn default_injections() -> usize {
    10
}

fn default_per_layer() -> usize {
    200
}

fn default_threshold() -> f32 {
    0.5
}

/// Everything a campaign, sweep or ablation needs. See the README for the
/// JSON schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub fault: FaultSpec,
    #[serde(default = "default_policy")]
    pub policy: MitigationPolicy,
    /// Evaluation images used, from the start of the evaluation split.
    #[serde(default = "default_images")]
    pub images_per_campaign: usize,
    #[serde(default = "default_injections")]
    pub injections_per_image: usize,
    /// Injections per targeted layer in a sweep.
    #[serde(default = "default_per_layer")]
    pub per_layer_inferences: usize,
    #[serde(default = "default_threshold")]
    pub score_threshold: f32,
    #[serde(default = "default_threshold")]
    pub iou_threshold: f32,
    /// Number of leading injections whose golden and faulty layer traces
    /// are kept for the trace report.
    #[serde(default)]
    pub trace_samples: usize,
    /// Load weights from this file instead of initializing from
    /// `model.seed`. The file's model spec must equal `model`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_file: Option<PathBuf>,
    /// Load bounds from this file instead of profiling the dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden_cache_dir: Option<PathBuf>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl CampaignConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        self.dataset.validate()?;
        for (name, t) in [("score_threshold", self.score_threshold), ("iou_threshold", self.iou_threshold)] {
            if !(t > 0.0 && t <= 1.0) {
                return fail(format!("{name} {t} must be in (0, 1]"));
            }
        }
        if self.images_per_campaign == 0 || self.images_per_campaign > self.dataset.n_eval {
            return fail(format!(
                "images_per_campaign {} must be between 1 and dataset.n_eval ({})",
                self.images_per_campaign, self.dataset.n_eval
            ));
        }
        if self.injections_per_image == 0 || self.per_layer_inferences == 0 {
            return fail("injections_per_image and per_layer_inferences must be >= 1".into());
        }
        if self.model.image_size() != self.dataset.image_size {
            return fail(format!(
                "model image_size {} differs from dataset image_size {}",
                self.model.image_size(),
                self.dataset.image_size
            ));
        }
        if self.model.num_classes() < self.dataset.num_classes {
            return fail(format!(
                "model predicts {} classes, dataset has {}",
                self.model.num_classes(),
                self.dataset.num_classes
            ));
        }
        Ok(())
    }

    pub fn total_injections(&self) -> usize {
        self.images_per_campaign * self.injections_per_image
    }
}

/// One scheduled faulty inference.
#[derive(Clone, Debug)]
pub struct ScheduledFault {
    pub image_id: usize,
    /// Position in the schedule.
    pub injection: usize,
    pub plan: FaultPlan,
}

/// Random-fault schedule: every evaluation image in turn receives
/// `injections_per_image` plans; injection `k` uses stream `k` of
/// `fault.seed`.
pub fn schedule(config: &CampaignConfig, fault: &FaultSpec, model: &Model) -> Result<Vec<ScheduledFault>> {
    (0..config.total_injections())
        .map(|k| {
            let mut rng = Rng::with_stream(fault.seed, k as u64);
            Ok(ScheduledFault {
                image_id: k / config.injections_per_image,
                injection: k,
                plan: sample_plan(fault, model, &mut rng)?,
            })
        })
        .collect()
}

/// Targeted schedule for one layer: `per_layer_inferences` plans cycling
/// over the campaign images.
pub fn layer_schedule(config: &CampaignConfig, model: &Model, layer_id: usize) -> Result<Vec<ScheduledFault>> {
    let entry = model.registry().entry(layer_id)?;
    let fault = FaultSpec {
        layer_selection: LayerSelection::Targeted(layer_id),
        eligible_kinds: Some(vec![selector_for(entry.kind)]),
        ..config.fault.clone()
    };
    (0..config.per_layer_inferences)
        .map(|k| {
            let stream = ((layer_id as u64) << 32) | k as u64;
            let mut rng = Rng::with_stream(fault.seed, stream);
            Ok(ScheduledFault {
                image_id: k % config.images_per_campaign,
                injection: k,
                plan: sample_plan(&fault, model, &mut rng)?,
            })
        })
        .collect()
}

fn selector_for(kind: LayerKind) -> KindSelector {
    match kind {
        LayerKind::Conv => KindSelector::Conv,
        LayerKind::Activation => KindSelector::Activation,
        LayerKind::Softmax => KindSelector::Softmax,
        LayerKind::LayerNorm => KindSelector::LayerNorm,
        LayerKind::AttentionLinear(s) => KindSelector::Stage(s),
        LayerKind::Linear => KindSelector::Linear,
        LayerKind::Other => KindSelector::Other,
    }
}

#[cfg(feature = "parallel")]
fn ordered_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn ordered_map<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Golden and faulty layer statistics for one injection.
#[derive(Clone, Debug)]
pub struct TraceSample {
    pub image_id: usize,
    pub injection: usize,
    pub fault: serde_json::Value,
    pub golden: crate::model::LayerTrace,
    pub faulty: crate::model::LayerTrace,
}

impl TraceSample {
    fn to_json(&self, model: &Model, bounds: &BoundsProfile) -> Result<serde_json::Value> {
        let deltas = compare_traces(&self.golden, &self.faulty, Some(bounds))?;
        let layers: Vec<_> = self
            .golden
            .layers
            .iter()
            .zip(&self.faulty.layers)
            .zip(&deltas)
            .map(|((g, f), d)| {
                serde_json::json!({
                    "layer_id": g.layer_id,
                    "name": model.registry().get(g.layer_id).map(|e| e.name.as_str()),
                    "golden_mean": g.mean,
                    "golden_variance": g.variance,
                    "faulty_mean": f.mean,
                    "faulty_variance": f.variance,
                    "out_of_bounds": d.out_of_bounds,
                })
            })
            .collect();
        Ok(serde_json::json!({
            "image_id": self.image_id,
            "injection": self.injection,
            "fault": self.fault,
            "layers": layers,
        }))
    }
}

/// Hashes identifying the inputs of a run.
#[derive(Clone, Debug, Serialize)]
pub struct RunInputs {
    pub model_hash: String,
    pub dataset_hash: String,
    pub bounds_hash: String,
    pub rng: &'static str,
}

#[derive(Clone, Debug)]
pub struct CampaignResult {
    pub policy: String,
    pub rows: Vec<CampaignRow>,
    pub report: IvmodReport,
    pub ap50_golden: Ap50,
    pub ap50_faulty: Ap50,
    pub golden_key: String,
    pub traces: Vec<TraceSample>,
}

impl CampaignResult {
    pub fn csv_bytes(&self) -> Vec<u8> {
        csv_bytes(&self.rows)
    }
}

/// A prepared model, dataset and bounds shared by several runs, with a
/// golden cache.
pub struct Bench {
    model: Model,
    dataset: SyntheticDataset,
    bounds: BoundsProfile,
    cache: GoldenCache,
    iou_threshold: f32,
    images: usize,
}

impl Bench {
    /// Builds the model, generates the dataset, and profiles (or loads)
    /// bounds as the config describes.
    pub fn prepare(config: &CampaignConfig) -> Result<Self> {
        config.validate()?;
        let mut model = match &config.weights_file {
            Some(path) => {
                let m = crate::model::load_weights(path)?;
                if m.spec() != &config.model {
                    return Err(Error::Config(format!(
                        "{} holds a different model spec than the config",
                        path.display()
                    )));
                }
                m
            }
            None => config.model.build()?,
        };
        model.set_score_threshold(config.score_threshold);
        let dataset = SyntheticDataset::generate(&config.dataset)?;
        let bounds = match &config.bounds_file {
            Some(path) => {
                let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                BoundsProfile::from_json(&serde_json::from_slice(&text)?)?
            }
            None => profile_dataset(&model, &dataset)?,
        };
        let cache = match &config.golden_cache_dir {
            Some(dir) => GoldenCache::on_disk(dir),
            None => GoldenCache::new(),
        };
        Ok(Self {
            model,
            dataset,
            bounds,
            cache,
            iou_threshold: config.iou_threshold,
            images: config.images_per_campaign,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn dataset(&self) -> &SyntheticDataset {
        &self.dataset
    }

    pub fn bounds(&self) -> &BoundsProfile {
        &self.bounds
    }

    pub fn cache(&self) -> &GoldenCache {
        &self.cache
    }

    pub fn inputs(&self) -> RunInputs {
        RunInputs {
            model_hash: self.model.content_hash(),
            dataset_hash: self.dataset.content_hash(),
            bounds_hash: self.bounds.content_hash(),
            rng: RNG_ALGORITHM,
        }
    }

    fn mitigator(&self, policy: &MitigationPolicy) -> Result<Option<Mitigator>> {
        Ok(match policy {
            MitigationPolicy::None => None,
            p => Some(Mitigator::new(p, self.model.registry(), &self.bounds)?),
        })
    }

    /// Fault-free run of every evaluation image under `policy`.
    pub fn golden(&self, policy: &MitigationPolicy) -> Result<Arc<GoldenSet>> {
        self.cache.get(&GoldenRequest {
            model: &self.model,
            dataset: &self.dataset,
            policy,
            bounds: &self.bounds,
            iou_threshold: self.iou_threshold,
        })
    }

    /// Runs `plans` under `policy`, pairing each faulty inference with the
    /// golden run of its image under the same policy.
    pub fn run(&self, policy: &MitigationPolicy, plans: &[ScheduledFault], trace_samples: usize) -> Result<CampaignResult> {
        let golden = self.golden(policy)?;
        let mitigator = self.mitigator(policy)?;
        let hook = mitigator.as_ref().map(|m| m as &dyn MitigationHook);
        let images = self.dataset.eval_images();
        let gts = self.dataset.eval_annotations();
        let policy_name = policy.name();
        let threshold = self.model.score_threshold();

        let outcomes = ordered_map(plans, |s| -> Result<_> {
            let image = images.get(s.image_id).ok_or(Error::Index {
                index: s.image_id,
                len: images.len(),
            })?;
            let run = run_with_fault(&self.model, image, &s.plan, hook)?;
            let g = &golden.images[s.image_id];
            let outcome = match_detections(&run.output.raw, &gts[s.image_id], self.iou_threshold, threshold);
            let flags = InferenceFlags::classify(&g.outcome, &outcome, run.output.has_nan_inf);
            let entry = self.model.registry().entry(s.plan.layer_id)?;
            let row = CampaignRow {
                image_id: s.image_id,
                layer_id: s.plan.layer_id,
                layer_kind: entry.kind.name().to_string(),
                stage: entry.kind.stage(),
                target: s.plan.target,
                bits: s.plan.bits(),
                flags,
                fp_orig: g.outcome.fp,
                fn_orig: g.outcome.fn_,
                fp_corr: outcome.fp,
                fn_corr: outcome.fn_,
                policy: policy_name.clone(),
            };
            let trace = (s.injection < trace_samples).then(|| TraceSample {
                image_id: s.image_id,
                injection: s.injection,
                fault: run.record.to_json(),
                golden: g.trace.clone(),
                faulty: run.output.trace.clone(),
            });
            Ok((row, run.output.detections, trace))
        });

        let mut rows = Vec::with_capacity(plans.len());
        let mut faulty_dets = Vec::with_capacity(plans.len());
        let mut faulty_gts = Vec::with_capacity(plans.len());
        let mut traces = Vec::new();
        for (s, r) in plans.iter().zip(outcomes) {
            let (row, dets, trace) = r.map_err(|e| Error::Campaign {
                image_id: s.image_id,
                injection: s.injection,
                source: Box::new(e),
            })?;
            rows.push(row);
            faulty_dets.push(dets);
            faulty_gts.push(gts[s.image_id].clone());
            traces.extend(trace);
        }
        let flags: Vec<InferenceFlags> = rows.iter().map(|r| r.flags).collect();

        let golden_dets: Vec<_> = golden.images[..self.images]
            .iter()
            .map(|g| g.detections(threshold))
            .collect();
        Ok(CampaignResult {
            policy: policy_name,
            report: IvmodReport::from_flags(&flags),
            ap50_golden: ap50(&golden_dets, &gts[..self.images])?,
            ap50_faulty: ap50(&faulty_dets, &faulty_gts)?,
            golden_key: golden.key.clone(),
            rows,
            traces,
        })
    }

    /// Random-fault campaign as configured.
    pub fn campaign(&self, config: &CampaignConfig) -> Result<CampaignResult> {
        let plans = schedule(config, &config.fault, &self.model)?;
        self.run(&config.policy, &plans, config.trace_samples)
    }

    /// Layers swept by default: attention linears and activations for the
    /// transformer, convolutions and activations for the CNN.
    pub fn default_sweep_layers(&self) -> Vec<usize> {
        let detr = matches!(self.model.spec().arch, Architecture::ToyDetr(_));
        self.model.registry().ids_where(|e| match e.kind {
            LayerKind::AttentionLinear(_) => detr,
            LayerKind::Conv => !detr,
            LayerKind::Activation => true,
            _ => false,
        })
    }

    /// Targeted campaign per layer with `per_layer_inferences` injections
    /// each.
    pub fn sweep(&self, config: &CampaignConfig, layers: &[usize]) -> Result<SweepResult> {
        if layers.is_empty() {
            return Err(Error::Config("layer sweep needs at least one layer".into()));
        }
        let mut all_rows = Vec::new();
        let mut table = Vec::with_capacity(layers.len());
        for &id in layers {
            let plans = layer_schedule(config, &self.model, id)?;
            let res = self.run(&config.policy, &plans, 0)?;
            let entry = self.model.registry().entry(id)?;
            table.push(LayerRates {
                layer_id: id,
                name: entry.name.clone(),
                kind: entry.kind.name().to_string(),
                stage: entry.kind.stage(),
                report: res.report,
            });
            all_rows.extend(res.rows);
        }
        let stages = stage_aggregate(&table);
        Ok(SweepResult {
            policy: config.policy.name(),
            rows: all_rows,
            layers: table,
            stages,
        })
    }

    /// Injects only into stage-A attention linears and compares protection
    /// sets on the same schedule. The first row (`{}`) protects activations
    /// only; each further row adds the attention linears of one subset.
    pub fn ablation(&self, config: &CampaignConfig, subsets: &[BTreeSet<Stage>]) -> Result<AblationResult> {
        let fault = FaultSpec {
            layer_selection: LayerSelection::RandomEligible,
            eligible_kinds: Some(vec![KindSelector::Stage(Stage::A)]),
            ..config.fault.clone()
        };
        let plans = schedule(config, &fault, &self.model)?;
        let mut policies = vec![("{}".to_string(), MitigationPolicy::Clipper)];
        for s in subsets {
            let label = format!("{{{}}}", s.iter().map(|s| s.label()).collect::<Vec<_>>().join(","));
            policies.push((label, minimal_placement(s, self.model.registry())?));
        }
        let mut rows = Vec::new();
        let mut table = Vec::with_capacity(policies.len());
        for (label, policy) in policies {
            let res = self.run(&policy, &plans, 0)?;
            table.push(AblationRow {
                subset: label,
                policy: res.policy.clone(),
                report: res.report,
                ap50_faulty: res.ap50_faulty,
            });
            rows.extend(res.rows);
        }
        Ok(AblationResult { rows, table })
    }
}

/// Bounds over the dataset's profiling subset.
pub fn profile_dataset(model: &Model, dataset: &SyntheticDataset) -> Result<BoundsProfile> {
    let idx = dataset.profile_indices();
    let s = dataset.spec();
    let desc = format!(
        "dataset seed {}: first {} of {} training images{}",
        s.seed,
        idx.iter().filter(|&&i| i < s.n_train).count(),
        s.n_train,
        if s.profile_includes_eval { " plus the evaluation split" } else { "" }
    );
    profile_bounds(model, &dataset.profile_images(), &desc)
}

#[derive(Clone, Debug)]
pub struct LayerRates {
    pub layer_id: usize,
    pub name: String,
    pub kind: String,
    pub stage: Option<Stage>,
    pub report: IvmodReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageRates {
    pub stage: Stage,
    /// Number of layers averaged.
    pub layers: usize,
    pub sdc_rate: f64,
    pub due_rate: f64,
    pub fd_rate: f64,
}

/// Mean rates over the attention linears of each stage; always four rows.
pub fn stage_aggregate(table: &[LayerRates]) -> Vec<StageRates> {
    Stage::ALL
        .iter()
        .map(|&stage| {
            let members: Vec<&IvmodReport> = table.iter().filter(|r| r.stage == Some(stage)).map(|r| &r.report).collect();
            let n = members.len();
            let mean = |f: fn(&IvmodReport) -> f64| {
                if n == 0 {
                    0.0
                } else {
                    members.iter().map(|r| f(r)).sum::<f64>() / n as f64
                }
            };
            StageRates {
                stage,
                layers: n,
                sdc_rate: mean(|r| r.sdc_rate),
                due_rate: mean(|r| r.due_rate),
                fd_rate: mean(|r| r.fd_rate),
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub policy: String,
    pub rows: Vec<CampaignRow>,
    pub layers: Vec<LayerRates>,
    pub stages: Vec<StageRates>,
}

impl SweepResult {
    pub fn to_json(&self) -> serde_json::Value {
        let layers: Vec<_> = self
            .layers
            .iter()
            .map(|r| {
                serde_json::json!({
                    "layer_id": r.layer_id,
                    "name": r.name,
                    "kind": r.kind,
                    "stage": r.stage,
                    "n": r.report.n,
                    "sdc_rate": r.report.sdc_rate,
                    "due_rate": r.report.due_rate,
                    "fd_rate": r.report.fd_rate,
                })
            })
            .collect();
        serde_json::json!({ "policy": self.policy, "layers": layers, "stages": self.stages })
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub subset: String,
    pub policy: String,
    pub report: IvmodReport,
    pub ap50_faulty: Ap50,
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub rows: Vec<CampaignRow>,
    pub table: Vec<AblationRow>,
}

impl AblationResult {
    pub fn row(&self, subset: &str) -> Option<&AblationRow> {
        self.table.iter().find(|r| r.subset == subset)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<_> = self
            .table
            .iter()
            .map(|r| {
                serde_json::json!({
                    "subset": r.subset,
                    "policy": r.policy,
                    "n": r.report.n,
                    "sdc_rate": r.report.sdc_rate,
                    "due_rate": r.report.due_rate,
                    "fd_rate": r.report.fd_rate,
                    "ap50_faulty": r.ap50_faulty.value,
                })
            })
            .collect();
        serde_json::json!({ "rows": rows })
    }
}

/// Files written by one run.
#[derive(Clone, Debug)]
pub struct Outputs {
    pub csv: PathBuf,
    pub sidecar: PathBuf,
    pub traces: Option<PathBuf>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes(value: &serde_json::Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("JSON values serialize");
    out.push(b'\n');
    out
}

fn write_run(
    dir: &Path,
    name: &str,
    kind: &str,
    config: &CampaignConfig,
    bench: &Bench,
    rows: &[CampaignRow],
    results: serde_json::Value,
    traces: Option<serde_json::Value>,
) -> Result<Outputs> {
    let csv = csv_bytes(rows);
    let sidecar = serde_json::json!({
        "format": SIDECAR_FORMAT,
        "kind": kind,
        "config": config,
        "inputs": bench.inputs(),
        "csv_header": CSV_HEADER.join(","),
        "csv_sha256": sha256_hex(&csv),
        "rows": rows.len(),
        "results": results,
    });
    let out = Outputs {
        csv: dir.join(format!("{name}.csv")),
        sidecar: dir.join(format!("{name}.json")),
        traces: traces.as_ref().map(|_| dir.join(format!("{name}.traces.json"))),
    };
    write_file(&out.csv, &csv)?;
    write_file(&out.sidecar, &json_bytes(&sidecar))?;
    if let (Some(path), Some(t)) = (&out.traces, &traces) {
        write_file(path, &json_bytes(t))?;
    }
    Ok(out)
}

impl CampaignResult {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "policy": self.policy,
            "golden_key": self.golden_key,
            "ivmod": self.report,
            "ap50_golden": self.ap50_golden,
            "ap50_faulty": self.ap50_faulty,
        })
    }

    pub fn traces_json(&self, bench: &Bench) -> Result<serde_json::Value> {
        let samples = self
            .traces
            .iter()
            .map(|t| t.to_json(&bench.model, &bench.bounds))
            .collect::<Result<Vec<_>>>()?;
        Ok(serde_json::Value::Array(samples))
    }

    /// Writes `<name>.csv`, `<name>.json` and, when traces were kept,
    /// `<name>.traces.json` into `dir`.
    pub fn write(&self, dir: &Path, config: &CampaignConfig, bench: &Bench) -> Result<Outputs> {
        let traces = if self.traces.is_empty() {
            None
        } else {
            Some(self.traces_json(bench)?)
        };
        write_run(dir, &config.name, "campaign", config, bench, &self.rows, self.summary_json(), traces)
    }
}

impl SweepResult {
    pub fn write(&self, dir: &Path, config: &CampaignConfig, bench: &Bench) -> Result<Outputs> {
        write_run(dir, &config.name, "sweep", config, bench, &self.rows, self.to_json(), None)
    }
}

impl AblationResult {
    pub fn write(&self, dir: &Path, config: &CampaignConfig, bench: &Bench) -> Result<Outputs> {
        write_run(dir, &config.name, "ablation", config, bench, &self.rows, self.to_json(), None)
    }
}

/// Prepares a bench and runs the configured random-fault campaign.
pub fn run_campaign(config: &CampaignConfig) -> Result<(Bench, CampaignResult)> {
    let bench = Bench::prepare(config)?;
    let result = bench.campaign(config)?;
    Ok((bench, result))
}

/// The two stage subsets every ablation reports.
pub fn default_ablation_subsets() -> Vec<BTreeSet<Stage>> {
    vec![
        [Stage::C, Stage::D].into_iter().collect(),
        Stage::ALL.into_iter().collect(),
    ]
}
