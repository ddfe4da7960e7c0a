//! Campaign CSV rows and the plot-data bundle built from them.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fault::FaultTarget;
use crate::metrics::{InferenceFlags, IvmodReport};
use crate::model::Stage;

pub const CSV_HEADER: [&str; 14] = [
    "image_id", "layer_id", "layer_kind", "stage", "target", "bits", "sdc", "due", "fd", "fp_orig",
    "fn_orig", "fp_corr", "fn_corr", "policy",
];

pub const BUNDLE_FORMAT: u32 = 1;

/// One faulty inference.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CampaignRow {
    pub image_id: usize,
    pub layer_id: usize,
    pub layer_kind: String,
    pub stage: Option<Stage>,
    pub target: FaultTarget,
    pub bits: Vec<u8>,
    pub flags: InferenceFlags,
    pub fp_orig: usize,
    pub fn_orig: usize,
    pub fp_corr: usize,
    pub fn_corr: usize,
    pub policy: String,
}

impl CampaignRow {
    fn record(&self) -> [String; 14] {
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        let bits: Vec<String> = self.bits.iter().map(u8::to_string).collect();
        [
            self.image_id.to_string(),
            self.layer_id.to_string(),
            self.layer_kind.clone(),
            self.stage.map(|s| s.label().to_string()).unwrap_or_default(),
            self.target.name().to_string(),
            bits.join(";"),
            flag(self.flags.sdc),
            flag(self.flags.due),
            flag(self.flags.fd),
            self.fp_orig.to_string(),
            self.fn_orig.to_string(),
            self.fp_corr.to_string(),
            self.fn_corr.to_string(),
            self.policy.clone(),
        ]
    }

    fn parse(rec: &csv::StringRecord, line: u64) -> Result<Self> {
        let err = |reason: String| Error::Parse { line, reason };
        if rec.len() != CSV_HEADER.len() {
            return Err(err(format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len())));
        }
        let num = |i: usize| -> Result<usize> {
            rec[i]
                .parse()
                .map_err(|_| err(format!("{}: {:?} is not a count", CSV_HEADER[i], &rec[i])))
        };
        let flag = |i: usize| -> Result<bool> {
            match &rec[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                v => Err(err(format!("{}: {v:?} is not 0 or 1", CSV_HEADER[i]))),
            }
        };
        let stage = match &rec[3] {
            "" => None,
            s => Some(Stage::parse(s).ok_or_else(|| err(format!("stage: {s:?} is not A-D")))?),
        };
        let target = match &rec[4] {
            "neurons" => FaultTarget::Neurons,
            "weights" => FaultTarget::Weights,
            t => return Err(err(format!("target: {t:?} is not neurons or weights"))),
        };
        let bits = if rec[5].is_empty() {
            Vec::new()
        } else {
            rec[5]
                .split(';')
                .map(|b| match b.parse::<u8>() {
                    Ok(v) if v <= 31 => Ok(v),
                    _ => Err(err(format!("bits: {b:?} is not a bit position"))),
                })
                .collect::<Result<_>>()?
        };
        let flags = InferenceFlags {
            sdc: flag(6)?,
            due: flag(7)?,
            fd: flag(8)?,
        };
        if flags.fd != (flags.sdc || flags.due) {
            return Err(err("fd must equal sdc OR due".into()));
        }
        Ok(Self {
            image_id: num(0)?,
            layer_id: num(1)?,
            layer_kind: rec[2].to_string(),
            stage,
            target,
            bits,
            flags,
            fp_orig: num(9)?,
            fn_orig: num(10)?,
            fp_corr: num(11)?,
            fn_corr: num(12)?,
            policy: rec[13].to_string(),
        })
    }
}

pub fn write_csv(rows: &[CampaignRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.write_record(r.record())?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn csv_bytes(rows: &[CampaignRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// Reads rows back. The header must match [`CSV_HEADER`]; an empty input
/// (not even a header) is an empty campaign.
pub fn read_csv(r: impl Read) -> Result<Vec<CampaignRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r);
    let mut rows = Vec::new();
    let mut rec = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = rdr.read_record(&mut rec).map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = rec.position().map_or(0, |p| p.line());
        if first {
            first = false;
            if rec.iter().ne(CSV_HEADER) {
                return Err(Error::Parse {
                    line,
                    reason: format!("header must be {}", CSV_HEADER.join(",")),
                });
            }
            continue;
        }
        rows.push(CampaignRow::parse(&rec, line)?);
    }
    Ok(rows)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<CampaignRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Parse { line, reason } => Error::Parse {
            line,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

#[derive(Serialize)]
struct Rates {
    n: usize,
    sdc_rate: f64,
    due_rate: f64,
    fd_rate: f64,
}

impl From<IvmodReport> for Rates {
    fn from(r: IvmodReport) -> Self {
        Self {
            n: r.n,
            sdc_rate: r.sdc_rate,
            due_rate: r.due_rate,
            fd_rate: r.fd_rate,
        }
    }
}

#[derive(Serialize)]
struct LayerSeries {
    policy: String,
    layer_id: usize,
    layer_kind: String,
    stage: String,
    #[serde(flatten)]
    rates: Rates,
}

#[derive(Serialize)]
struct StageSeries {
    policy: String,
    stage: String,
    #[serde(flatten)]
    rates: Rates,
}

/// Aggregates rows into plot-ready series:
///
/// - `per_layer`: rates per (policy, layer)
/// - `per_stage`: rates per (policy, attention stage)
/// - `mitigation_comparison`: overall rates keyed by policy name
/// - `traces`: mean/variance samples from `<stem>.traces.json` files next
///   to the inputs, when present
///
/// Every grouping is ordered, so the bundle is a pure function of its
/// inputs.
pub fn build_bundle(sources: &[(String, Vec<CampaignRow>, Option<serde_json::Value>)]) -> serde_json::Value {
    let mut layers: BTreeMap<(String, usize), (String, String, Vec<InferenceFlags>)> = BTreeMap::new();
    let mut stages: BTreeMap<(String, Stage), Vec<InferenceFlags>> = BTreeMap::new();
    let mut policies: BTreeMap<String, Vec<InferenceFlags>> = BTreeMap::new();
    for (_, rows, _) in sources {
        for r in rows {
            let stage = r.stage.map(|s| s.label().to_string()).unwrap_or_default();
            layers
                .entry((r.policy.clone(), r.layer_id))
                .or_insert_with(|| (r.layer_kind.clone(), stage, Vec::new()))
                .2
                .push(r.flags);
            if let Some(s) = r.stage {
                stages.entry((r.policy.clone(), s)).or_default().push(r.flags);
            }
            policies.entry(r.policy.clone()).or_default().push(r.flags);
        }
    }
    let per_layer: Vec<LayerSeries> = layers
        .into_iter()
        .map(|((policy, layer_id), (layer_kind, stage, flags))| LayerSeries {
            policy,
            layer_id,
            layer_kind,
            stage,
            rates: IvmodReport::from_flags(&flags).into(),
        })
        .collect();
    let per_stage: Vec<StageSeries> = stages
        .into_iter()
        .map(|((policy, stage), flags)| StageSeries {
            policy,
            stage: stage.label().to_string(),
            rates: IvmodReport::from_flags(&flags).into(),
        })
        .collect();
    let comparison: BTreeMap<String, Rates> = policies
        .into_iter()
        .map(|(p, flags)| (p, IvmodReport::from_flags(&flags).into()))
        .collect();
    let traces: Vec<serde_json::Value> = sources
        .iter()
        .filter_map(|(name, _, t)| t.as_ref().map(|t| serde_json::json!({ "source": name, "samples": t })))
        .collect();
    serde_json::json!({
        "format": BUNDLE_FORMAT,
        "sources": sources.iter().map(|s| &s.0).collect::<Vec<_>>(),
        "per_layer": per_layer,
        "per_stage": per_stage,
        "mitigation_comparison": comparison,
        "traces": traces,
    })
}

/// `dir/name.csv` → `dir/name.traces.json`.
pub fn traces_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv.with_file_name(format!("{stem}.traces.json"))
}

/// Reads campaign CSVs (and sibling trace files) and builds the bundle.
/// Sources are named by file name only, so the bundle does not depend on
/// where the files live.
pub fn report(paths: &[PathBuf]) -> Result<serde_json::Value> {
    let mut sources = Vec::with_capacity(paths.len());
    for p in paths {
        let rows = read_csv_file(p)?;
        let tp = traces_path(p);
        let traces = if tp.exists() {
            let bytes = std::fs::read(&tp).map_err(|e| Error::io(&tp, e))?;
            Some(serde_json::from_slice(&bytes)?)
        } else {
            None
        };
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        sources.push((name, rows, traces));
    }
    Ok(build_bundle(&sources))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(layer_id: usize, stage: Option<Stage>, sdc: bool, due: bool, policy: &str) -> CampaignRow {
        CampaignRow {
            image_id: 3,
            layer_id,
            layer_kind: if stage.is_some() { "attention_linear" } else { "activation" }.into(),
            stage,
            target: FaultTarget::Neurons,
            bits: vec![23, 30],
            flags: InferenceFlags { sdc, due, fd: sdc || due },
            fp_orig: 1,
            fn_orig: 2,
            fp_corr: 1 + sdc as usize,
            fn_corr: 2,
            policy: policy.into(),
        }
    }

    #[test]
    fn csv_roundtrip_and_header() {
        let rows = vec![row(4, Some(Stage::C), true, false, "none"), row(7, None, false, true, "global_clipper")];
        let bytes = csv_bytes(&rows);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with(
            "image_id,layer_id,layer_kind,stage,target,bits,sdc,due,fd,fp_orig,fn_orig,fp_corr,fn_corr,policy\n"
        ));
        assert!(text.contains("3,4,attention_linear,C,neurons,23;30,1,0,1,1,2,2,2,none\n"));
        assert_eq!(read_csv(&bytes[..]).unwrap(), rows);
        assert!(read_csv(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn malformed_csv_reports_line() {
        let mut text = String::from_utf8(csv_bytes(&[row(1, None, false, false, "none")])).unwrap();
        text.push_str("3,1,activation,,neurons,23,1,0,0,1,2,1,2,none\n");
        match read_csv(text.as_bytes()) {
            Err(Error::Parse { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("fd"));
            }
            other => panic!("{other:?}"),
        }
        match read_csv(&b"image_id,oops\n"[..]) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        let bad = "image_id,layer_id,layer_kind,stage,target,bits,sdc,due,fd,fp_orig,fn_orig,fp_corr,fn_corr,policy\nx,1\n";
        assert!(matches!(read_csv(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn bundle_groups_by_policy() {
        let rows = vec![
            row(4, Some(Stage::A), true, false, "none"),
            row(4, Some(Stage::A), false, false, "none"),
            row(4, Some(Stage::A), false, false, "global_clipper"),
        ];
        let b = build_bundle(&[("x.csv".into(), rows, None)]);
        assert_eq!(b["mitigation_comparison"]["none"]["fd_rate"], 0.5);
        assert_eq!(b["mitigation_comparison"]["global_clipper"]["fd_rate"], 0.0);
        assert_eq!(b["per_stage"].as_array().unwrap().len(), 2);
        assert_eq!(b["per_layer"][0]["policy"], "global_clipper");

        let empty = build_bundle(&[("e.csv".into(), vec![], None)]);
        assert!(empty["per_layer"].as_array().unwrap().is_empty());
        assert!(empty["mitigation_comparison"].as_object().unwrap().is_empty());
    }
}
