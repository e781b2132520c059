//! Versioned binary checkpoints: an 8-byte magic, a format version, a
//! JSON header carrying the config, vocabularies, and declared tensor
//! shapes, then the raw little-endian values in canonical tensor order.
//! Loading validates everything against the shapes the config implies
//! before allocating, so corrupt or truncated files fail cleanly.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Result, TaggerParams};
use crate::corpus::Vocab;
use crate::dualaware::{AttentionParams, ConvLayerParams, ConvStackParams};
use crate::numcore::Tensor;
use crate::onlstm::{GateParams, OnLstmParams};

const MAGIC: &[u8; 8] = b"ORTAGNN\0";
const VERSION: u32 = 1;
const MAX_HEADER_BYTES: u64 = 64 << 20;
const MAX_TOTAL_VALUES: usize = 100_000_000;

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    word_vocab: Vec<String>,
    pos_vocab: Vec<String>,
    tensors: Vec<TensorMeta>,
}

fn bad(detail: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(detail.into())
}

/// The tensor names and shapes a config and vocabulary size imply, in
/// canonical order.
fn expected_meta(config: &ModelConfig, word_vocab_len: usize) -> Vec<TensorMeta> {
    let token = config.token_dim();
    let hidden = config.hidden;
    let mut metas = vec![TensorMeta {
        name: "word_table".into(),
        shape: vec![word_vocab_len, config.word_dim],
    }];
    for direction in ["fw", "bw"] {
        for gate in ["forget", "input", "cell", "output", "master_forget", "master_input"] {
            metas.push(TensorMeta {
                name: format!("{direction}.{gate}.w"),
                shape: vec![hidden, token],
            });
            metas.push(TensorMeta {
                name: format!("{direction}.{gate}.u"),
                shape: vec![hidden, hidden],
            });
            metas.push(TensorMeta { name: format!("{direction}.{gate}.b"), shape: vec![hidden] });
        }
    }
    metas.push(TensorMeta { name: "attention.w_a".into(), shape: vec![hidden, 2 * hidden] });
    metas.push(TensorMeta { name: "attention.u_a".into(), shape: vec![hidden, config.pair_dim()] });
    metas.push(TensorMeta { name: "attention.v".into(), shape: vec![hidden] });
    for i in 0..config.conv_depth {
        let width = 2 * i + 3;
        let c_in = if i == 0 { token } else { config.conv_filters };
        metas.push(TensorMeta {
            name: format!("conv.{i}.filters"),
            shape: vec![config.conv_filters, width * c_in],
        });
        metas.push(TensorMeta { name: format!("conv.{i}.bias"), shape: vec![config.conv_filters] });
    }
    metas.push(TensorMeta {
        name: "emit_w".into(),
        shape: vec![config.labels, config.fused_dim()],
    });
    metas.push(TensorMeta { name: "emit_b".into(), shape: vec![config.labels] });
    metas.push(TensorMeta {
        name: "transitions".into(),
        shape: vec![config.labels + 2, config.labels + 2],
    });
    metas
}

pub fn save(params: &TaggerParams, path: &Path) -> Result<()> {
    let header = Header {
        config: params.config.clone(),
        word_vocab: params.word_vocab.items().to_vec(),
        pos_vocab: params.pos_vocab.items().to_vec(),
        tensors: params
            .tensor_names()
            .into_iter()
            .zip(params.tensors())
            .map(|(name, tensor)| TensorMeta { name, shape: tensor.shape().to_vec() })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(format!("encoding header: {e}")))?;
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for tensor in params.tensors() {
        for value in tensor.values() {
            out.write_all(&value.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Rebuild the parameter struct from tensors in canonical order.
fn from_parts(
    config: ModelConfig,
    word_vocab: Vocab,
    pos_vocab: Vocab,
    tensors: Vec<Tensor>,
) -> Result<TaggerParams> {
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("tensor count checked against expected_meta");
    let word_table = next().with_grad();
    let direction = |next: &mut dyn FnMut() -> Tensor| OnLstmParams {
        forget: gate(next),
        input: gate(next),
        cell: gate(next),
        output: gate(next),
        master_forget: gate(next),
        master_input: gate(next),
        master_input_complement: config.master_input_complement,
        input_dim: config.token_dim(),
        hidden: config.hidden,
    };
    fn gate(next: &mut dyn FnMut() -> Tensor) -> GateParams {
        GateParams { w: next().with_grad(), u: next().with_grad(), b: next().with_grad() }
    }
    let fw = direction(&mut next);
    let bw = direction(&mut next);
    let attention = AttentionParams {
        w_a: next().with_grad(),
        u_a: next().with_grad(),
        v: next().with_grad(),
    };
    let layers = (0..config.conv_depth)
        .map(|i| ConvLayerParams {
            filters: next().with_grad(),
            bias: next().with_grad(),
            width: 2 * i + 3,
        })
        .collect();
    Ok(TaggerParams {
        word_table,
        fw,
        bw,
        attention,
        conv: ConvStackParams { layers },
        emit_w: next().with_grad(),
        emit_b: next().with_grad(),
        transitions: next().with_grad(),
        config,
        word_vocab,
        pos_vocab,
    })
}

pub fn load(path: &Path) -> Result<TaggerParams> {
    load_from(BufReader::new(fs::File::open(path)?))
}

/// Decode a checkpoint from any byte stream, validating magic, version,
/// header caps, tensor shapes against the config, and value finiteness.
pub fn load_from(mut input: impl Read) -> Result<TaggerParams> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a tagger checkpoint (bad magic)"));
    }
    let mut version = [0u8; 4];
    input.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let json_len = u64::from_le_bytes(len);
    if json_len > MAX_HEADER_BYTES {
        return Err(bad(format!("header of {json_len} bytes exceeds the {MAX_HEADER_BYTES} cap")));
    }
    let mut json = vec![0u8; json_len as usize];
    input.read_exact(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| bad(format!("decoding header: {e}")))?;
    header.config.validate()?;
    let word_vocab =
        Vocab::from_items(header.word_vocab).map_err(|e| bad(format!("word vocabulary: {e}")))?;
    let pos_vocab =
        Vocab::from_items(header.pos_vocab).map_err(|e| bad(format!("POS vocabulary: {e}")))?;
    if pos_vocab.len() > header.config.pos_dim {
        return Err(bad(format!(
            "POS vocabulary has {} symbols but pos_dim is {}",
            pos_vocab.len(),
            header.config.pos_dim
        )));
    }

    let expected = expected_meta(&header.config, word_vocab.len());
    if header.tensors.len() != expected.len() {
        return Err(bad(format!(
            "header declares {} tensors, config implies {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut total = 0usize;
    for (declared, implied) in header.tensors.iter().zip(&expected) {
        if declared.name != implied.name || declared.shape != implied.shape {
            return Err(bad(format!(
                "tensor {} declared as {:?} but the config implies {} {:?}",
                declared.name, declared.shape, implied.name, implied.shape
            )));
        }
        let numel: usize = declared.shape.iter().product();
        total = total
            .checked_add(numel)
            .filter(|&t| t <= MAX_TOTAL_VALUES)
            .ok_or_else(|| bad("declared tensor sizes exceed the allocation cap"))?;
    }

    let mut tensors = Vec::with_capacity(expected.len());
    let mut buf = [0u8; 8];
    for meta in &expected {
        let numel: usize = meta.shape.iter().product();
        let mut values = Vec::new();
        for _ in 0..numel {
            input.read_exact(&mut buf).map_err(|e| {
                bad(format!("truncated while reading tensor {}: {e}", meta.name))
            })?;
            let value = f64::from_le_bytes(buf);
            if !value.is_finite() {
                return Err(bad(format!("non-finite value in tensor {}", meta.name)));
            }
            values.push(value);
        }
        tensors.push(
            Tensor::new(meta.shape.clone(), values)
                .map_err(|e| bad(format!("tensor {}: {e}", meta.name)))?,
        );
    }
    if input.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes after the last tensor"));
    }
    from_parts(header.config, word_vocab, pos_vocab, tensors)
}
