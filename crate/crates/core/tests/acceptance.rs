//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rangeguard::campaign::{
    csv_bytes, default_ablation_subsets, json_bytes, report, Bench, CampaignConfig, DatasetSpec,
};
use rangeguard::fault::{flip_bits, run_with_fault, FaultPlan, FaultTarget, FlipSite, SiteLocation};
use rangeguard::metrics::{ap50, iou, ivmod, GtBox, MatchOutcome};
use rangeguard::mitigation::{
    resolve_placement, restrict, MitigationPolicy, Mitigator, RestrictionRule,
};
use rangeguard::model::{Detection, HookSet, LayerKind, MitigationHook, Stage};
use rangeguard::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn ac1_ivmod_worked_example() -> Check {
    let golden = vec![MatchOutcome { tp: 2, fp: 1, fn_: 0, pairs: vec![] }; 100];
    let faulty: Vec<(MatchOutcome, bool)> = (0..100)
        .map(|i| {
            let mut m = golden[i].clone();
            // 30 discrepant inferences: 12 ghost objects, 10 lost objects,
            // 8 NaN outputs
            match i {
                0..=11 => m.fp += 1,
                12..=21 => {
                    m.tp -= 1;
                    m.fn_ += 1
                }
                22..=29 => return (m, true),
                _ => {}
            }
            (m, false)
        })
        .collect();
    let r = ivmod(&golden, &faulty).map_err(err)?;
    ensure(r.fd_rate == 0.30, || format!("fd_rate {}", r.fd_rate))?;
    ensure(r.sdc_rate == 0.22 && r.due_rate == 0.08, || format!("{r:?}"))?;
    Ok(format!("fd_rate = {}", r.fd_rate))
}

fn ac2_clip_to_zero() -> Check {
    let pairs: [(f32, f32); 5] = [(-1.0, 1.0), (0.0, 6.25), (-1234.5, -0.001), (1e-3, 3e4), (-0.0, 0.0)];
    let specials = [
        f32::NAN,
        -f32::NAN,
        f32::from_bits(0x7fc0_0001),
        f32::INFINITY,
        f32::NEG_INFINITY,
        0.0,
        -0.0,
        f32::MAX,
        f32::MIN,
        f32::MIN_POSITIVE,
        f32::from_bits(1),
        f32::from_bits(0x8000_0001),
    ];
    let mut checked = 0usize;
    for (lo, hi) in pairs {
        let span = (hi - lo).max(1.0);
        let (a, b) = (lo - span, hi + span);
        let mut values: Vec<f32> = (0..10_000).map(|i| a + (b - a) * (i as f32 / 9_999.0)).collect();
        values.extend(specials);
        for edge in [lo, hi] {
            values.extend([edge, f32::from_bits(edge.to_bits() + 1), f32::from_bits(edge.to_bits().wrapping_sub(1))]);
        }
        for x in values {
            let expected = if x.is_nan() || x.is_infinite() || x < lo || x > hi { 0.0f32 } else { x };
            let got = restrict(x, RestrictionRule::ClipToZero, lo, hi);
            if got.to_bits() != expected.to_bits() {
                return Err(format!("x={x:e} ({:#010x}) bounds ({lo}, {hi}): got {got:e}", x.to_bits()));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} values over {} bounds pairs", pairs.len()))
}

/// Decodes to a 32-character binary string, flips one character, encodes.
fn oracle_flip(value: f32, bit: u32) -> u32 {
    let mut s: Vec<u8> = format!("{:032b}", value.to_bits()).into_bytes();
    let i = 31 - bit as usize;
    s[i] = if s[i] == b'0' { b'1' } else { b'0' };
    u32::from_str_radix(std::str::from_utf8(&s).unwrap(), 2).unwrap()
}

fn ac3_flip_oracle() -> Check {
    let mut rng = Rng::new(3);
    let specials = [f32::NAN, f32::INFINITY, f32::NEG_INFINITY, 0.0, -0.0, f32::MAX, f32::from_bits(1)];
    let n = 120_000;
    for k in 0..n {
        let value = if k % 10 == 0 {
            specials[(k / 10) % specials.len()]
        } else {
            f32::from_bits(rng.next_u32())
        };
        let bit = rng.below(32) as u32;
        let got = flip_bits(value, &[bit]).map_err(err)?.to_bits();
        if got != oracle_flip(value, bit) {
            return Err(format!("value {:#010x} bit {bit}", value.to_bits()));
        }
    }
    Ok(format!("{n} (value, bit) pairs bit-exact"))
}

fn ac4_transparency() -> Check {
    let cfg = CampaignConfig {
        dataset: DatasetSpec {
            profile_includes_eval: true,
            ..DatasetSpec::default()
        },
        ..CampaignConfig::default()
    };
    let bench = Bench::prepare(&cfg).map_err(err)?;
    let gts = bench.dataset().eval_annotations();
    let base = bench.golden(&MitigationPolicy::None).map_err(err)?;
    let dets = |g: &rangeguard::campaign::GoldenSet| -> Vec<Vec<Detection>> {
        g.images.iter().map(|i| i.detections(cfg.score_threshold)).collect()
    };
    let base_ap = ap50(&dets(&base), gts).map_err(err)?;
    for policy in &MitigationPolicy::NAMED[1..] {
        let g = bench.golden(policy).map_err(err)?;
        for (a, b) in base.images.iter().zip(&g.images) {
            let same = a.raw.len() == b.raw.len() && a.raw.iter().zip(&b.raw).all(|(x, y)| x.bit_eq(y));
            ensure(same, || format!("{}: image {} detections differ", policy.name(), a.image_id))?;
        }
        let ap = ap50(&dets(&g), gts).map_err(err)?;
        ensure(ap.value.to_bits() == base_ap.value.to_bits(), || {
            format!("{}: AP50 {} vs {}", policy.name(), ap.value, base_ap.value)
        })?;
    }
    let n_det: usize = base.images.iter().map(|i| i.detections(cfg.score_threshold).len()).sum();
    Ok(format!(
        "{} policies x {} images, {n_det} detections, AP50 {:.4}",
        MitigationPolicy::NAMED.len() - 1,
        base.images.len(),
        base_ap.value
    ))
}

fn ac5_efficacy() -> Check {
    let cfg = CampaignConfig::default();
    ensure(cfg.total_injections() == 1000, || "expected 1000 injections".into())?;
    let bench = Bench::prepare(&cfg).map_err(err)?;
    let none = bench.campaign(&cfg).map_err(err)?;
    let gc_cfg = CampaignConfig {
        policy: MitigationPolicy::GlobalClipper,
        ..cfg.clone()
    };
    let gc = bench.campaign(&gc_cfg).map_err(err)?;
    let paired = none
        .rows
        .iter()
        .zip(&gc.rows)
        .all(|(a, b)| a.image_id == b.image_id && a.layer_id == b.layer_id && a.bits == b.bits);
    ensure(paired, || "schedules differ".into())?;
    let (n, g) = (none.report, gc.report);
    let summary = format!(
        "none fd={:.3} (sdc {:.3}, due {:.3}); global_clipper fd={:.3} (sdc {:.3}, due {:.3})",
        n.fd_rate, n.sdc_rate, n.due_rate, g.fd_rate, g.sdc_rate, g.due_rate
    );
    ensure(g.fd_rate < n.fd_rate && g.due_rate == 0.0 && g.fd_rate <= 0.02, || summary.clone())?;
    Ok(summary)
}

fn ac6_hybrid_placement() -> Check {
    let model = CampaignConfig::default().model.build().map_err(err)?;
    let reg = model.registry();
    let placement = resolve_placement(&MitigationPolicy::GlobalHybridClipper, reg).map_err(err)?;
    let (mut act, mut attn) = (0, 0);
    for e in reg.iter() {
        let expected = match e.kind {
            LayerKind::Activation => {
                act += 1;
                Some(RestrictionRule::ClipToZero)
            }
            LayerKind::AttentionLinear(_) => {
                attn += 1;
                Some(RestrictionRule::ClampToBounds)
            }
            _ => None,
        };
        ensure(placement.get(&e.id).copied() == expected, || {
            format!("layer {} ({}) got {:?}", e.id, e.name, placement.get(&e.id))
        })?;
    }
    Ok(format!("{act} activations clip, {attn} attention linears clamp"))
}

/// Exhaustive precision/recall over every score cutoff, then the area
/// under the upper envelope computed interval by interval.
fn oracle_ap(preds: &[Vec<Detection>], gts: &[Vec<GtBox>]) -> f64 {
    let total: usize = gts.iter().map(Vec::len).sum();
    let mut pooled: Vec<(usize, Detection)> = preds
        .iter()
        .enumerate()
        .flat_map(|(i, ds)| ds.iter().map(move |d| (i, *d)))
        .collect();
    pooled.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap());
    let mut points = Vec::new();
    for k in 1..=pooled.len() {
        // match the top-k from scratch
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut tp = 0;
        for (img, d) in &pooled[..k] {
            let mut best: Option<(usize, f32)> = None;
            for (j, g) in gts[*img].iter().enumerate() {
                let o = iou(&d.bbox, &g.bbox);
                if !used[*img][j] && g.class_id == d.class_id && o >= 0.5 && best.map_or(true, |b| o > b.1) {
                    best = Some((j, o));
                }
            }
            if let Some((j, _)) = best {
                used[*img][j] = true;
                tp += 1;
            }
        }
        points.push((tp as f64 / total as f64, tp as f64 / k as f64));
    }
    let mut levels: Vec<f64> = points.iter().map(|p| p.0).filter(|&r| r > 0.0).collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let p = points.iter().filter(|q| q.0 >= r).map(|q| q.1).fold(0.0, f64::max);
        area += (r - prev) * p;
        prev = r;
    }
    area
}

fn ac7_ap_oracle() -> Check {
    let mut rng = Rng::new(7);
    let boxed = |rng: &mut Rng| {
        let (x, y) = (rng.uniform(0.0, 0.7), rng.uniform(0.0, 0.7));
        [x, y, x + rng.uniform(0.05, 0.3), y + rng.uniform(0.05, 0.3)]
    };
    let instances = 500;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let images = rng.range_inclusive(1, 3);
        let mut gts: Vec<Vec<GtBox>> = vec![Vec::new(); images];
        for _ in 0..rng.range_inclusive(1, 5) {
            let img = rng.below(images);
            gts[img].push(GtBox { bbox: boxed(&mut rng), class_id: rng.below(2) });
        }
        let mut preds: Vec<Vec<Detection>> = vec![Vec::new(); images];
        let mut scores: Vec<f32> = (1..=10).map(|k| k as f32 / 11.0).collect();
        for _ in 0..rng.range_inclusive(0, 10) {
            let img = rng.below(images);
            let bbox = match gts[img].get(rng.below(gts[img].len() + 1)) {
                Some(g) => {
                    let j = rng.uniform(-0.04, 0.04);
                    [g.bbox[0] + j, g.bbox[1] + j, g.bbox[2], g.bbox[3]]
                }
                None => boxed(&mut rng),
            };
            let score = scores.swap_remove(rng.below(scores.len()));
            preds[img].push(Detection { bbox, class_id: rng.below(2), score });
        }
        let got = ap50(&preds, &gts).map_err(err)?.value;
        let want = oracle_ap(&preds, &gts);
        let d = (got - want).abs();
        worst = worst.max(d);
        ensure(d <= 1e-9, || format!("ap50 {got} vs oracle {want}"))?;
    }
    Ok(format!("{instances} instances, max |diff| {worst:e}"))
}

fn ac8_trace_property() -> Check {
    let cfg = CampaignConfig::default();
    let bench = Bench::prepare(&cfg).map_err(err)?;
    let model = bench.model();
    let reg = model.registry();
    let layer = reg
        .iter()
        .find(|e| e.name == "encoder1.ffn1")
        .ok_or("no encoder1.ffn1 layer")?;
    let image = &bench.dataset().eval_images()[0];
    let golden = model.forward(image, HookSet::none()).map_err(err)?;

    // capture the layer's fault-free output to pick a positive element
    // whose exponent MSB is clear, so the flip scales it by 2^128 and the
    // following ReLU passes it on
    struct Grab(usize, Option<Vec<f32>>);
    impl rangeguard::model::FaultHook for Grab {
        fn validate(&self, _: &rangeguard::model::LayerRegistry) -> rangeguard::Result<()> {
            Ok(())
        }
        fn on_output(&mut self, l: &rangeguard::model::LayerEntry, t: &mut rangeguard::Tensor) {
            if l.id == self.0 {
                self.1 = Some(t.data().to_vec());
            }
        }
    }
    let mut grab = Grab(layer.id, None);
    model
        .forward(image, HookSet { fault: Some(&mut grab), mitigation: None })
        .map_err(err)?;
    let values = grab.1.ok_or("layer never fired")?;
    let index = values
        .iter()
        .position(|&v| v > 0.1 && v.to_bits() & (1 << 30) == 0)
        .ok_or("no candidate element")?;
    let plan = FaultPlan {
        target: FaultTarget::Neurons,
        layer_id: layer.id,
        sites: vec![FlipSite { location: SiteLocation::Neuron { index }, bit: 30 }],
    };

    let raw = run_with_fault(model, image, &plan, None).map_err(err)?;
    let mut blowup = None;
    for (g, f) in golden.trace.layers.iter().zip(&raw.output.trace.layers) {
        if g.layer_id <= layer.id {
            continue;
        }
        let ratio = f.mean.abs() / g.mean.abs();
        if f.mean.abs() > 1e3 * g.mean.abs() {
            blowup = Some((g.layer_id, ratio));
            break;
        }
    }
    let (blown, ratio) = blowup.ok_or("no downstream layer exceeded 1e3x its golden mean")?;

    let gc = Mitigator::new(&MitigationPolicy::GlobalClipper, reg, bench.bounds()).map_err(err)?;
    let protected = run_with_fault(model, image, &plan, Some(&gc as &dyn MitigationHook)).map_err(err)?;
    let mut count = 0;
    for (id, _, b) in gc.protected_layers() {
        let s = protected.output.trace.get(id).ok_or("missing trace")?;
        ensure(s.min >= b.lower && s.max <= b.upper, || {
            format!("layer {id}: [{}, {}] outside [{}, {}]", s.min, s.max, b.lower, b.upper)
        })?;
        count += 1;
    }
    Ok(format!(
        "flip bit 30 at {}[{index}]: {} mean x{ratio:.3e}; {count} protected layers in bounds",
        layer.name,
        reg.get(blown).map(|e| e.name.as_str()).unwrap_or("?"),
    ))
}

fn sha(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

fn ac9_determinism() -> Check {
    let cfg = CampaignConfig {
        name: "det".into(),
        dataset: DatasetSpec { n_train: 20, n_eval: 10, ..DatasetSpec::default() },
        images_per_campaign: 10,
        injections_per_image: 10,
        per_layer_inferences: 20,
        trace_samples: 3,
        ..CampaignConfig::default()
    };
    let mut hashes = Vec::new();
    let mut campaign_csv = String::new();
    for kind in ["campaign", "sweep", "ablation"] {
        let mut seen = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(err)?;
            let bench = Bench::prepare(&cfg).map_err(err)?;
            let out = match kind {
                "campaign" => bench.campaign(&cfg).and_then(|r| r.write(dir.path(), &cfg, &bench)),
                "sweep" => {
                    let layers = bench.default_sweep_layers();
                    bench.sweep(&cfg, &layers).and_then(|r| r.write(dir.path(), &cfg, &bench))
                }
                _ => bench
                    .ablation(&cfg, &default_ablation_subsets())
                    .and_then(|r| r.write(dir.path(), &cfg, &bench)),
            }
            .map_err(err)?;
            let csv = std::fs::read(&out.csv).map_err(err)?;
            let bundle = json_bytes(&report(&[out.csv.clone()]).map_err(err)?);
            seen.push((sha(&csv), sha(&bundle), sha(&std::fs::read(&out.sidecar).map_err(err)?)));
        }
        ensure(seen[0] == seen[1], || format!("{kind}: hashes differ {seen:?}"))?;
        if kind == "campaign" {
            campaign_csv = seen[0].0.clone();
        }
        hashes.push(format!("{kind} {}", &seen[0].0[..12]));
    }
    // the in-memory CSV bytes agree with the file written above
    let bench = Bench::prepare(&cfg).map_err(err)?;
    let r = bench.campaign(&cfg).map_err(err)?;
    ensure(sha(&csv_bytes(&r.rows)) == campaign_csv, || "in-memory CSV differs from file".into())?;
    Ok(hashes.join(", "))
}

fn ac10_placement_ablation() -> Check {
    let cfg = CampaignConfig::default();
    let bench = Bench::prepare(&cfg).map_err(err)?;
    let cd: BTreeSet<Stage> = [Stage::C, Stage::D].into_iter().collect();
    let all: BTreeSet<Stage> = Stage::ALL.into_iter().collect();
    let res = bench.ablation(&cfg, &[cd, all]).map_err(err)?;
    let fd = |s: &str| res.row(s).map(|r| r.report.fd_rate).ok_or(format!("missing row {s}"));
    let (base, cd, all) = (fd("{}")?, fd("{C,D}")?, fd("{A,B,C,D}")?);
    let summary = format!("fd {{}}={base:.3}, {{C,D}}={cd:.3}, {{A,B,C,D}}={all:.3}");
    ensure((cd - all).abs() <= 0.02 && all <= base, || summary.clone())?;
    Ok(summary)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check, Duration); 10] = [
        ("AC1 IVMOD worked example", ac1_ivmod_worked_example, Duration::from_secs(1)),
        ("AC2 clip-to-zero unit suite", ac2_clip_to_zero, Duration::from_secs(1)),
        ("AC3 bit-flip oracle", ac3_flip_oracle, Duration::from_secs(60)),
        ("AC4 mitigation transparency", ac4_transparency, Duration::from_secs(30)),
        ("AC5 mitigation efficacy", ac5_efficacy, Duration::from_secs(600)),
        ("AC6 hybrid placement", ac6_hybrid_placement, Duration::from_secs(1)),
        ("AC7 AP50 oracle", ac7_ap_oracle, Duration::from_secs(60)),
        ("AC8 trace property", ac8_trace_property, Duration::from_secs(10)),
        ("AC9 determinism", ac9_determinism, Duration::from_secs(600)),
        ("AC10 placement ablation", ac10_placement_ablation, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > limit => Err(format!("{detail}; took {took:.2?}, limit {limit:?}")),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{took:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{took:.2?}]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
