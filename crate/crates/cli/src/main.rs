//! `rangeguard` command-line tool.
//!
//! Exit codes: 0 success, 1 configuration error (bad flags, config file or
//! input format), 2 runtime error.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use rangeguard::campaign::{default_ablation_subsets, json_bytes, report, Bench, CampaignConfig};
use rangeguard::fault::{BitPolicy, FaultTarget, FlipCount, KindSelector, LayerSelection};
use rangeguard::metrics::{average_precision, match_detections, GtBox};
use rangeguard::mitigation::{minimal_placement, MitigationPolicy};
use rangeguard::model::{save_weights, CnnParams, Detection, DetrParams, ModelSpec, Stage};
use rangeguard::{Error, Tensor};

#[derive(Parser)]
#[command(name = "rangeguard", version, about = "Bit-flip fault campaigns on toy detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (annotations JSON + image tensor)
    GenData {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Profile per-layer output bounds over the profiling subset
    ProfileBounds {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "bounds.json")]
        out: PathBuf,
    },
    /// Fault-free run of the evaluation images
    Golden {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "golden.json")]
        out: PathBuf,
    },
    /// Random-fault campaign
    Campaign {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Targeted campaign per layer
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated layer ids (default: attention linears or convs, plus activations)
        #[arg(long, value_delimiter = ',')]
        layers: Vec<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Stage-A injections under different protection sets
    Ablation {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated stage sets, e.g. `CD,ABCD` (default)
        #[arg(long, value_delimiter = ',')]
        subsets: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Aggregate campaign CSVs into a plot-data bundle
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Write the bundle here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AP50 and per-image matches for stored predictions and ground truth
    Metrics {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        score_threshold: f32,
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f32,
    },
    /// Print the model's layer registry
    Registry {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write the model weights file
    SaveWeights {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "model.rgwt")]
        out: PathBuf,
    },
}

/// Config file plus per-field overrides.
#[derive(Args, Default)]
struct RunArgs {
    /// Campaign config JSON; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    /// toy_detr or toy_cnn (default hyperparameters)
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    model_seed: Option<u64>,
    #[arg(long)]
    dataset_seed: Option<u64>,
    /// none, ranger, clipper, global_ranger, global_clipper,
    /// global_hybrid_clipper, or minimal:<stages> (e.g. minimal:CD)
    #[arg(long)]
    policy: Option<String>,
    /// neurons or weights
    #[arg(long)]
    target: Option<String>,
    /// 1 or 10
    #[arg(long)]
    flips: Option<u32>,
    /// high_order9 or any_bit
    #[arg(long)]
    bit_policy: Option<String>,
    #[arg(long)]
    fault_seed: Option<u64>,
    /// Inject only into this layer id
    #[arg(long)]
    layer: Option<usize>,
    /// Comma-separated eligible kinds, e.g. `attention_linear:A,activation`
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<String>,
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    injections: Option<usize>,
    #[arg(long)]
    per_layer: Option<usize>,
    #[arg(long)]
    score_threshold: Option<f32>,
    #[arg(long)]
    iou_threshold: Option<f32>,
    #[arg(long)]
    trace_samples: Option<usize>,
    /// Load weights from a file written by `save-weights`
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Load bounds from a file written by `profile-bounds`
    #[arg(long)]
    bounds: Option<PathBuf>,
    #[arg(long)]
    golden_cache: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

/// A config or input file that cannot be read is a usage problem, not a
/// runtime failure.
fn unreadable_is_config(e: Error) -> Error {
    match e {
        Error::Io { .. } => Error::Config(e.to_string()),
        e => e,
    }
}

fn parse_stages(s: &str) -> anyhow::Result<BTreeSet<Stage>> {
    s.trim_matches(|c| c == '{' || c == '}')
        .chars()
        .filter(|c| *c != ',')
        .map(|c| Stage::parse(&c.to_string()).ok_or_else(|| config_err(format!("unknown stage {c:?} in {s:?}"))))
        .collect()
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<CampaignConfig> {
        let mut c = match &self.config {
            Some(p) => CampaignConfig::load(p).map_err(unreadable_is_config)?,
            None => CampaignConfig::default(),
        };
        if let Some(n) = &self.name {
            c.name = n.clone();
        }
        let seed = self.model_seed.unwrap_or(c.model.seed);
        c.model = match self.arch.as_deref() {
            None => ModelSpec { seed, ..c.model },
            Some("toy_detr") => ModelSpec::toy_detr(DetrParams::default(), seed),
            Some("toy_cnn") => ModelSpec::toy_cnn(CnnParams::default(), seed),
            Some(a) => return Err(config_err(format!("unknown architecture {a:?}"))),
        };
        if let Some(s) = self.dataset_seed {
            c.dataset.seed = s;
        }
        if let Some(t) = &self.target {
            c.fault.target = match t.as_str() {
                "neurons" => FaultTarget::Neurons,
                "weights" => FaultTarget::Weights,
                _ => return Err(config_err(format!("target must be neurons or weights, got {t:?}"))),
            };
        }
        if let Some(n) = self.flips {
            c.fault.num_bit_flips = FlipCount::try_from(n).map_err(config_err)?;
        }
        if let Some(b) = &self.bit_policy {
            c.fault.bit_policy = match b.as_str() {
                "high_order9" => BitPolicy::HighOrder9,
                "any_bit" => BitPolicy::AnyBit,
                _ => return Err(config_err(format!("bit policy must be high_order9 or any_bit, got {b:?}"))),
            };
        }
        if let Some(s) = self.fault_seed {
            c.fault.seed = s;
        }
        if let Some(l) = self.layer {
            c.fault.layer_selection = LayerSelection::Targeted(l);
        }
        if !self.kinds.is_empty() {
            let kinds = self
                .kinds
                .iter()
                .map(|k| k.parse::<KindSelector>().map_err(config_err))
                .collect::<anyhow::Result<_>>()?;
            c.fault.eligible_kinds = Some(kinds);
        }
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field.clone() { c.$target = v; })*
            };
        }
        set!(images => images_per_campaign, injections => injections_per_image,
             per_layer => per_layer_inferences, score_threshold => score_threshold,
             iou_threshold => iou_threshold, trace_samples => trace_samples);
        if self.weights.is_some() {
            c.weights_file = self.weights.clone();
        }
        if self.bounds.is_some() {
            c.bounds_file = self.bounds.clone();
        }
        if self.golden_cache.is_some() {
            c.golden_cache_dir = self.golden_cache.clone();
        }
        if let Some(p) = &self.policy {
            c.policy = match p.strip_prefix("minimal:") {
                Some(stages) => {
                    let model = c.model.build()?;
                    minimal_placement(&parse_stages(stages)?, model.registry())?
                }
                None => MitigationPolicy::parse(p)?,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn print_json(v: &serde_json::Value) {
    print!("{}", String::from_utf8_lossy(&json_bytes(v)));
}

#[derive(Deserialize)]
struct PredRow {
    image_id: usize,
    #[serde(rename = "box")]
    bbox: [f32; 4],
    class_id: usize,
    score: f32,
}

#[derive(Deserialize)]
struct GtRow {
    image_id: usize,
    #[serde(rename = "box")]
    bbox: [f32; 4],
    class_id: usize,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let bytes = fs::read(path).map_err(|e| unreadable_is_config(Error::Io { path: path.into(), source: e }))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| anyhow::Error::from(Error::from(e)).context(format!("parsing {}", path.display())))
}

fn metrics(preds: &Path, gts: &Path, score_threshold: f32, iou_threshold: f32) -> anyhow::Result<serde_json::Value> {
    for t in [score_threshold, iou_threshold] {
        if !(t > 0.0 && t <= 1.0) {
            return Err(config_err(format!("thresholds must be in (0, 1], got {t}")));
        }
    }
    let preds: Vec<PredRow> = read_json(preds)?;
    let gts: Vec<GtRow> = read_json(gts)?;
    let n = preds.iter().map(|p| p.image_id + 1).chain(gts.iter().map(|g| g.image_id + 1)).max().unwrap_or(0);
    let mut p_img: Vec<Vec<Detection>> = vec![Vec::new(); n];
    let mut g_img: Vec<Vec<GtBox>> = vec![Vec::new(); n];
    for p in preds {
        p_img[p.image_id].push(Detection { bbox: p.bbox, class_id: p.class_id, score: p.score });
    }
    for g in gts {
        g_img[g.image_id].push(GtBox { bbox: g.bbox, class_id: g.class_id });
    }
    let ap = average_precision(&p_img, &g_img, iou_threshold)?;
    let per_image: Vec<_> = p_img
        .iter()
        .zip(&g_img)
        .enumerate()
        .map(|(i, (p, g))| {
            let m = match_detections(p, g, iou_threshold, score_threshold);
            serde_json::json!({ "image_id": i, "tp": m.tp, "fp": m.fp, "fn": m.fn_ })
        })
        .collect();
    if ap.no_ground_truth {
        eprintln!("warning: no ground-truth boxes; AP50 reported as 0");
    }
    Ok(serde_json::json!({
        "ap50": ap.value,
        "no_ground_truth": ap.no_ground_truth,
        "images": per_image,
    }))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { run, out } => {
            let cfg = run.config()?;
            let data = rangeguard::campaign::SyntheticDataset::generate(&cfg.dataset)?;
            let s = cfg.dataset.image_size;
            let n = cfg.dataset.n_train + cfg.dataset.n_eval;
            let mut flat = Vec::with_capacity(n * 3 * s * s);
            for img in data.train_images().iter().chain(data.eval_images()) {
                flat.extend_from_slice(img.data());
            }
            let images = Tensor::new(vec![n, 3, s, s], flat)?;
            write(&out.join("images.rgt"), &images.to_bytes())?;
            write(&out.join("dataset.json"), &json_bytes(&data.to_json()))?;
            println!("wrote {n} images to {}", out.display());
        }
        Command::ProfileBounds { run, out } => {
            let bench = Bench::prepare(&run.config()?)?;
            write(&out, &json_bytes(&bench.bounds().to_json()))?;
            println!("wrote bounds for {} layers to {}", bench.bounds().bounds.len(), out.display());
        }
        Command::Golden { run, out } => {
            let cfg = run.config()?;
            let bench = Bench::prepare(&cfg)?;
            let golden = bench.golden(&cfg.policy)?;
            let gts = &bench.dataset().eval_annotations()[..cfg.images_per_campaign];
            let images = &golden.images[..cfg.images_per_campaign];
            let dets: Vec<Vec<Detection>> = images.iter().map(|g| g.detections(cfg.score_threshold)).collect();
            let ap = rangeguard::metrics::ap50(&dets, gts)?;
            let rows: Vec<_> = images
                .iter()
                .zip(&dets)
                .map(|(g, d)| {
                    serde_json::json!({
                        "image_id": g.image_id,
                        "detections": d,
                        "tp": g.outcome.tp,
                        "fp": g.outcome.fp,
                        "fn": g.outcome.fn_,
                        "has_nan_inf": g.has_nan_inf,
                    })
                })
                .collect();
            let doc = serde_json::json!({
                "policy": golden.policy,
                "key": golden.key,
                "inputs": bench.inputs(),
                "ap50": ap,
                "images": rows,
            });
            write(&out, &json_bytes(&doc))?;
            println!("golden AP50 {:.4} over {} images -> {}", ap.value, rows.len(), out.display());
        }
        Command::Campaign { run, out } => {
            let cfg = run.config()?;
            let bench = Bench::prepare(&cfg)?;
            let res = bench.campaign(&cfg)?;
            let files = res.write(&out, &cfg, &bench)?;
            print_json(&res.summary_json());
            eprintln!("wrote {} and {}", files.csv.display(), files.sidecar.display());
        }
        Command::Sweep { run, layers, out } => {
            let cfg = run.config()?;
            let bench = Bench::prepare(&cfg)?;
            let layers = if layers.is_empty() { bench.default_sweep_layers() } else { layers };
            let res = bench.sweep(&cfg, &layers)?;
            let files = res.write(&out, &cfg, &bench)?;
            print_json(&res.to_json());
            eprintln!("wrote {} and {}", files.csv.display(), files.sidecar.display());
        }
        Command::Ablation { run, subsets, out } => {
            let cfg = run.config()?;
            let subsets = if subsets.is_empty() {
                default_ablation_subsets()
            } else {
                subsets.iter().map(|s| parse_stages(s)).collect::<anyhow::Result<_>>()?
            };
            let bench = Bench::prepare(&cfg)?;
            let res = bench.ablation(&cfg, &subsets)?;
            let files = res.write(&out, &cfg, &bench)?;
            print_json(&res.to_json());
            eprintln!("wrote {} and {}", files.csv.display(), files.sidecar.display());
        }
        Command::Report { csv, out } => {
            let bundle = report(&csv)?;
            match out {
                Some(p) => write(&p, &json_bytes(&bundle))?,
                None => print_json(&bundle),
            }
        }
        Command::Metrics { preds, gts, score_threshold, iou_threshold } => {
            print_json(&metrics(&preds, &gts, score_threshold, iou_threshold)?);
        }
        Command::Registry { run } => {
            let model = run.config()?.model.build()?;
            print_json(&model.registry().to_json());
        }
        Command::SaveWeights { run, out } => {
            let model = run.config()?.model.build()?;
            save_weights(&model, &out)?;
            println!("wrote {} (sha256 {})", out.display(), model.content_hash());
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(err) if err.is_config() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
