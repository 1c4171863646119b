use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, Model, ModelConfig, Network};
use crate::error::{Error, IoContext, Result};
use crate::nn::Params;
use crate::train::Adam;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "pseaec-checkpoint";

/// Model parameters plus everything needed to resume training.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub step: u64,
    pub optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    step: u64,
    optimizer: Option<OptimizerMeta>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

/// Serializes a checkpoint. The layout is a plain-text header (magic,
/// version, config JSON, meta JSON, one `array` line per tensor) followed by
/// the tensors as little-endian `f32`, in header order.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let config = serde_json::to_string(&ckpt.model.config)?;
    let meta = Meta {
        step: ckpt.step,
        optimizer: ckpt.optimizer.as_ref().map(|a| OptimizerMeta {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            t: a.t,
        }),
    };
    let mut header = format!(
        "{MAGIC}\nversion {CHECKPOINT_VERSION}\nconfig {config}\nmeta {}\n",
        serde_json::to_string(&meta)?
    );
    let mut data = Vec::new();
    let mut sections: Vec<(&str, &Network)> = vec![("param", &ckpt.model.net)];
    if let Some(adam) = &ckpt.optimizer {
        sections.push(("adam_m", &adam.m));
        sections.push(("adam_v", &adam.v));
    }
    let mut bad = None;
    for (section, net) in sections {
        net.visit("", &mut |name, shape, values| {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            header.push_str(&format!("array {section}.{name} {}\n", dims.join("x")));
            for &v in values {
                let x = v as f32;
                if x as f64 != v || !x.is_finite() {
                    bad.get_or_insert_with(|| format!("{section}.{name}"));
                }
                data.extend_from_slice(&x.to_le_bytes());
            }
        });
    }
    if let Some(name) = bad {
        return Err(Error::NonFinite(format!("{name} is not a finite 32-bit value")));
    }
    header.push_str("data\n");
    let mut out = header.into_bytes();
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| Error::Corrupt(m.to_string());
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("header is not terminated"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| corrupt("header is not text"))?;
        pos += end + 1;
        if line == "data" {
            break;
        }
        lines.push(line);
        if lines.len() == 1 && line != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
    }
    let mut lines = lines.into_iter().skip(1);
    let version: u32 = lines
        .next()
        .and_then(|l| l.strip_prefix("version "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupt("missing version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let config: ModelConfig = serde_json::from_str(
        lines
            .next()
            .and_then(|l| l.strip_prefix("config "))
            .ok_or_else(|| corrupt("missing config"))?,
    )?;
    let meta: Meta = serde_json::from_str(
        lines
            .next()
            .and_then(|l| l.strip_prefix("meta "))
            .ok_or_else(|| corrupt("missing meta"))?,
    )?;

    let mut arrays: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for line in lines {
        let rest = line.strip_prefix("array ").ok_or_else(|| corrupt(line))?;
        let (name, dims) = rest.rsplit_once(' ').ok_or_else(|| corrupt(line))?;
        let shape: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse().map_err(|_| corrupt(line)))
            .collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let raw = bytes.get(pos..pos + 4 * n).ok_or_else(|| corrupt("data is truncated"))?;
        pos += 4 * n;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if arrays.insert(name.to_string(), (shape, values)).is_some() {
            return Err(corrupt(&format!("duplicate array {name}")));
        }
    }
    if pos != bytes.len() {
        return Err(corrupt("trailing bytes after data"));
    }

    let mut model = build_model(config, 0)?;
    fill(&mut model.net, "param", &mut arrays)?;
    let optimizer = match meta.optimizer {
        Some(o) => {
            let mut adam = Adam::new(&model.net, o.lr);
            adam.beta1 = o.beta1;
            adam.beta2 = o.beta2;
            adam.eps = o.eps;
            adam.t = o.t;
            fill(&mut adam.m, "adam_m", &mut arrays)?;
            fill(&mut adam.v, "adam_v", &mut arrays)?;
            Some(adam)
        }
        None => None,
    };
    if let Some(name) = arrays.keys().next() {
        return Err(corrupt(&format!("unexpected array {name}")));
    }
    Ok(Checkpoint {
        model,
        step: meta.step,
        optimizer,
    })
}

fn fill(
    net: &mut Network,
    section: &str,
    arrays: &mut BTreeMap<String, (Vec<usize>, Vec<f64>)>,
) -> Result<()> {
    let mut err = None;
    net.visit_mut("", &mut |name, shape, values| {
        let key = format!("{section}.{name}");
        match arrays.remove(&key) {
            Some((s, v)) if s == shape && v.iter().all(|x| x.is_finite()) => values.copy_from_slice(&v),
            Some((s, _)) if s != shape => {
                err.get_or_insert(Error::Corrupt(format!("{key} has shape {s:?}, expected {shape:?}")));
            }
            Some(_) => {
                err.get_or_insert(Error::NonFinite(key));
            }
            None => {
                err.get_or_insert(Error::Corrupt(format!("missing array {key}")));
            }
        }
    });
    err.map_or(Ok(()), Err)
}

/// Writes atomically: a temporary sibling is written and then renamed.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).at(path)?)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).at(&tmp)?;
    file.write_all(bytes).at(&tmp)?;
    file.sync_all().at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}
