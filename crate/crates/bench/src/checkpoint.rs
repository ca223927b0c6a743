//! Binary checkpoint files.
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "PFCK"
//! 4       2         format version (u16)
//! 6       1         head (0 = softmax cross-entropy, 1 = mean squared error)
//! 7       1         reserved, 0
//! 8       8         k_total (u64)
//! 16      4         layer count L (u32)
//! 20      12·L      per layer: inputs u32, outputs u32, activation u8
//!                   (0 relu, 1 tanh, 2 identity), 3 reserved bytes
//! ..      4·k_total parameters as f32
//! ..      ⌈k/8⌉     partition mask, bit i of byte i/8 (LSB first) set when
//!                   coordinate i is corruptible
//! ..      8         FNV-1a 64 checksum of every preceding byte
//! ```

use std::path::Path;

use paramcorrupt::nn::Dense;
use paramcorrupt::{Activation, Head, Model, Network, ParamPartition};

use crate::error::{BenchError, Result};

pub const MAGIC: &[u8; 4] = b"PFCK";
pub const VERSION: u16 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Tanh => 1,
        Activation::Identity => 2,
    }
}

fn head_code(h: Head) -> u8 {
    match h {
        Head::SoftmaxCrossEntropy => 0,
        Head::MeanSquaredError => 1,
    }
}

/// Serializes `model` and `partition`; parameters are stored as f32.
pub fn encode(model: &Model, partition: &ParamPartition) -> Result<Vec<u8>> {
    let net = model.network();
    let k = net.param_count();
    if partition.total() != k {
        return Err(BenchError::Config(format!(
            "partition covers {} parameters, model has {k}",
            partition.total()
        )));
    }
    let mut out = Vec::with_capacity(36 + 12 * net.layers().len() + 4 * k + k / 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(head_code(net.head()));
    out.push(0);
    out.extend_from_slice(&(k as u64).to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        out.extend_from_slice(&(layer.inputs as u32).to_le_bytes());
        out.extend_from_slice(&(layer.outputs as u32).to_le_bytes());
        out.extend_from_slice(&[activation_code(layer.activation), 0, 0, 0]);
    }
    for &w in model.params() {
        out.extend_from_slice(&(w as f32).to_le_bytes());
    }
    let mut mask = vec![0u8; k.div_ceil(8)];
    for (i, &m) in partition.mask().iter().enumerate() {
        if m {
            mask[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&mask);
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

/// Reads bytes sequentially, reporting truncation with the offset.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated checkpoint: {what} at offset {} needs {n} bytes", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses checkpoint bytes. `path` only labels error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(Model, ParamPartition)> {
    let fail = |message: String| BenchError::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 28 {
        return Err(fail(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(format!(
            "bad magic {:02x?} at offset 0, expected \"PFCK\"",
            &bytes[..4]
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(format!(
            "unsupported checkpoint version {version} (this build reads version {VERSION})"
        )));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    let actual = fnv1a64(body);
    if stored != actual {
        return Err(fail(format!(
            "checksum mismatch: stored {stored:#018x}, computed {actual:#018x}"
        )));
    }
    let mut r = Reader { bytes: body, pos: 6 };
    let header = r.take(2, "head").map_err(fail)?;
    let head = match header[0] {
        0 => Head::SoftmaxCrossEntropy,
        1 => Head::MeanSquaredError,
        c => return Err(fail(format!("unknown head code {c} at offset 6"))),
    };
    let k = u64::from_le_bytes(r.take(8, "k_total").map_err(fail)?.try_into().expect("8 bytes")) as usize;
    let n_layers = r.u32("layer count").map_err(fail)? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let offset = r.pos;
        let inputs = r.u32("layer inputs").map_err(fail)? as usize;
        let outputs = r.u32("layer outputs").map_err(fail)? as usize;
        let code = r.take(4, "layer activation").map_err(fail)?[0];
        let activation = match code {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Identity,
            c => return Err(fail(format!("unknown activation code {c} at offset {}", offset + 8))),
        };
        layers.push(Dense {
            inputs,
            outputs,
            activation,
        });
    }
    let network = Network::new(layers, head).map_err(|e| fail(format!("invalid layer table: {e}")))?;
    if network.param_count() != k {
        return Err(fail(format!(
            "layer table implies {} parameters, header says {k}",
            network.param_count()
        )));
    }
    let payload = r.take(4 * k, "parameter payload").map_err(fail)?;
    let params = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    let mask_bytes = r.take(k.div_ceil(8), "partition mask").map_err(fail)?;
    if r.pos != body.len() {
        return Err(fail(format!(
            "{} unexpected bytes at offset {}",
            body.len() - r.pos,
            r.pos
        )));
    }
    let mask = (0..k).map(|i| mask_bytes[i / 8] & (1 << (i % 8)) != 0).collect();
    let model = Model::new(network, params)?;
    Ok((model, ParamPartition::from_mask(mask)))
}

pub fn save_checkpoint(model: &Model, partition: &ParamPartition, path: &Path) -> Result<()> {
    let bytes = encode(model, partition)?;
    std::fs::write(path, bytes).map_err(|e| BenchError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, ParamPartition)> {
    let bytes = std::fs::read(path).map_err(|e| BenchError::io(path, e))?;
    decode(&bytes, path)
}
