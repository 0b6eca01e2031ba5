//! Binary snapshots of a continual run.
//!
//! Layout: the magic bytes `CONDA\x01`, a little-endian `u64` header length, a
//! JSON header, then every array of the header's `arrays` list as little-endian
//! `f64` values, in that order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::ContinualState;
use crate::buffer::{Buffer, BufferEntry};
use crate::error::{Error, Result};
use crate::netcore::{HeadMode, Model, ModelConfig};

pub const MAGIC: &[u8; 6] = b"CONDA\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArraySpec {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryMeta {
    class: usize,
    predicted_label: usize,
    inserted_at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BufferMeta {
    capacity: usize,
    state_index: usize,
    entries: Vec<EntryMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngMeta {
    seed: [u8; 32],
    stream: u64,
    /// Decimal, since the position is a `u128`.
    word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    model: ModelConfig,
    batches_done: usize,
    buffer: BufferMeta,
    rng: RngMeta,
    arrays: Vec<ArraySpec>,
}

fn collect(state: &ContinualState) -> (Header, Vec<f64>) {
    let mut arrays = Vec::new();
    let mut body = Vec::new();
    let mut push = |name: String, vals: &[f64]| {
        arrays.push(ArraySpec {
            name,
            len: vals.len(),
        });
        body.extend_from_slice(vals);
    };
    for (name, _, p) in state.model.params() {
        push(format!("{name}.value"), p.value.as_slice());
        push(format!("{name}.momentum"), p.momentum.as_slice());
    }
    let bn = &state.model.generator.bn;
    push("bn.running_mean".into(), &bn.running_mean);
    push("bn.running_var".into(), &bn.running_var);

    let buf = &state.buffer;
    let mut entries = Vec::new();
    let mut samples = Vec::new();
    let mut confidences = Vec::new();
    for (k, list) in buf.classes().iter().enumerate() {
        for e in list {
            entries.push(EntryMeta {
                class: k,
                predicted_label: e.predicted_label,
                inserted_at: e.inserted_at,
            });
            samples.extend_from_slice(&e.sample);
            confidences.push(e.confidence);
        }
    }
    push("buffer.samples".into(), &samples);
    push("buffer.confidences".into(), &confidences);

    let header = Header {
        version: FORMAT_VERSION,
        model: state.model.config(),
        batches_done: state.batches_done,
        buffer: BufferMeta {
            capacity: buf.capacity(),
            state_index: buf.state_index(),
            entries,
        },
        rng: RngMeta {
            seed: state.rng.get_seed(),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        arrays,
    };
    (header, body)
}

pub fn encode(state: &ContinualState) -> Result<Vec<u8>> {
    let (header, body) = collect(state);
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 8 * body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in body {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<ContinualState> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Corrupt("file shorter than the magic bytes".into()));
    }
    if &bytes[..5] != b"CONDA" {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    if bytes[5] != MAGIC[5] {
        return Err(Error::Format(format!(
            "unsupported format byte {}",
            bytes[5]
        )));
    }
    let rest = &bytes[MAGIC.len()..];
    let len_bytes: [u8; 8] = rest
        .get(..8)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::Corrupt("truncated header length".into()))?;
    let hlen = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| Error::Corrupt("header length overflows".into()))?;
    let rest = &rest[8..];
    if rest.len() < hlen {
        return Err(Error::Corrupt("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen])
        .map_err(|e| Error::Corrupt(format!("unreadable header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let body = &rest[hlen..];
    let total: usize = header.arrays.iter().map(|a| a.len).sum();
    if body.len() != total * 8 {
        return Err(Error::Corrupt(format!(
            "body holds {} bytes, header declares {}",
            body.len(),
            total * 8
        )));
    }
    let mut floats = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut arrays = header.arrays.iter();
    let mut next = |expect: &str| -> Result<Vec<f64>> {
        let spec = arrays
            .next()
            .ok_or_else(|| Error::Corrupt(format!("missing array {expect}")))?;
        if spec.name != expect {
            return Err(Error::Corrupt(format!(
                "expected array {expect}, found {}",
                spec.name
            )));
        }
        Ok(floats.by_ref().take(spec.len).collect())
    };

    header.model.validate()?;
    let mut rng = ChaCha8Rng::from_seed(header.rng.seed);
    let mut model = Model::new(&header.model, &mut rng)?;
    let names: Vec<String> = model.params().into_iter().map(|(n, _, _)| n).collect();
    for ((_, p), name) in model
        .params_mut(HeadMode::Trainable)
        .into_iter()
        .zip(&names)
    {
        let value = next(&format!("{name}.value"))?;
        let momentum = next(&format!("{name}.momentum"))?;
        if value.len() != p.len() || momentum.len() != p.len() {
            return Err(Error::Corrupt(format!("array {name} has the wrong length")));
        }
        p.value.as_mut_slice().copy_from_slice(&value);
        p.momentum.as_mut_slice().copy_from_slice(&momentum);
    }
    let d_f = model.feature_dim();
    let rm = next("bn.running_mean")?;
    let rv = next("bn.running_var")?;
    if rm.len() != d_f || rv.len() != d_f {
        return Err(Error::Corrupt(
            "batch-norm statistics have the wrong length".into(),
        ));
    }
    model.generator.bn.running_mean = rm;
    model.generator.bn.running_var = rv;

    let d = header.model.input_dim;
    let c = header.model.num_classes;
    let samples = next("buffer.samples")?;
    let confidences = next("buffer.confidences")?;
    let n = header.buffer.entries.len();
    if samples.len() != n * d || confidences.len() != n {
        return Err(Error::Corrupt(
            "buffer arrays disagree with the entry list".into(),
        ));
    }
    let mut classes = vec![Vec::new(); c];
    for (i, meta) in header.buffer.entries.iter().enumerate() {
        if meta.class >= c {
            return Err(Error::Corrupt(format!(
                "buffer entry in class {}",
                meta.class
            )));
        }
        classes[meta.class].push(BufferEntry {
            sample: samples[i * d..(i + 1) * d].to_vec(),
            predicted_label: meta.predicted_label,
            confidence: confidences[i],
            inserted_at: meta.inserted_at,
        });
    }
    let buffer = Buffer::from_parts(
        header.buffer.capacity,
        c,
        d,
        classes,
        header.buffer.state_index,
    )?;
    if arrays.next().is_some() {
        return Err(Error::Corrupt("unexpected trailing arrays".into()));
    }

    let mut rng = ChaCha8Rng::from_seed(header.rng.seed);
    rng.set_stream(header.rng.stream);
    let pos: u128 = header
        .rng
        .word_pos
        .parse()
        .map_err(|_| Error::Corrupt("bad rng position".into()))?;
    rng.set_word_pos(pos);
    Ok(ContinualState {
        model,
        buffer,
        rng,
        batches_done: header.batches_done,
    })
}

pub fn save_checkpoint(path: &Path, state: &ContinualState) -> Result<()> {
    std::fs::write(path, encode(state)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ContinualState> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
