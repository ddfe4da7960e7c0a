//! Weights file.
//!
//! ```text
//! magic     4 bytes  "RGWT"
//! version   u32 LE   (currently 1)
//! spec_len  u32 LE
//! spec      spec_len bytes of JSON (ModelSpec: architecture, hyperparams, seed)
//! layers    u32 LE   registry length
//! per layer, in registry order:
//!   count   u32 LE   number of weight tensors
//!   tensors          tensor encoding (see `tensor` module)
//! ```
//!
//! Loading rebuilds the registry from the spec and checks every tensor shape
//! against it, so a file cannot smuggle in a layout the code does not know.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{read_u32, Tensor};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"RGWT";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn write_weights(model: &Model, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(&WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    let spec = serde_json::to_vec(&model.spec).expect("model spec serializes");
    w.write_all(&(spec.len() as u32).to_le_bytes())?;
    w.write_all(&spec)?;
    w.write_all(&(model.weights.len() as u32).to_le_bytes())?;
    for layer in &model.weights {
        w.write_all(&(layer.len() as u32).to_le_bytes())?;
        for t in layer {
            t.write_to(w)?;
        }
    }
    Ok(())
}

pub fn read_weights(r: &mut impl Read) -> Result<Model> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::format("magic", e.to_string()))?;
    if magic != WEIGHTS_MAGIC {
        return Err(Error::format("magic", format!("unexpected bytes {magic:?}")));
    }
    let version = read_u32(r, "version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Version {
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let len = read_u32(r, "spec length")? as usize;
    if len > 1 << 20 {
        return Err(Error::format("spec length", format!("implausible length {len}")));
    }
    let mut spec = vec![0u8; len];
    r.read_exact(&mut spec)
        .map_err(|e| Error::format("spec", e.to_string()))?;
    let spec: ModelSpec =
        serde_json::from_slice(&spec).map_err(|e| Error::format("spec", e.to_string()))?;
    let mut model = spec.build()?;

    let layers = read_u32(r, "layer count")? as usize;
    if layers != model.registry.len() {
        return Err(Error::format(
            "layer count",
            format!("file has {layers}, architecture has {}", model.registry.len()),
        ));
    }
    for (id, entry) in model.registry.entries.iter().enumerate() {
        let field = |what: &str| format!("layer {id} ({}) {what}", entry.name);
        let count = read_u32(r, &field("tensor count"))? as usize;
        if count != entry.weight_shapes.len() {
            return Err(Error::format(
                field("tensor count"),
                format!("expected {}, found {count}", entry.weight_shapes.len()),
            ));
        }
        for (j, expected) in entry.weight_shapes.iter().enumerate() {
            let t = Tensor::read_from(r).map_err(|e| match e {
                Error::Format { reason, .. } => Error::format(field(&format!("tensor {j}")), reason),
                other => other,
            })?;
            if t.shape() != &expected[..] {
                return Err(Error::format(
                    field(&format!("tensor {j} shape")),
                    format!("expected {expected:?}, found {:?}", t.shape()),
                ));
            }
            model.weights[id][j] = t;
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::format("trailer", e.to_string()))? != 0 {
        return Err(Error::format("trailer", "unexpected bytes after last layer"));
    }
    Ok(model)
}

pub fn save_weights(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_weights(model, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_weights(&mut BufReader::new(file))
}

impl Model {
    pub fn to_weight_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_weights(self, &mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// SHA-256 of the serialized weights file, hex encoded.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_weight_bytes()))
    }
}
