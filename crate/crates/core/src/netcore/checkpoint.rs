//! Binary network checkpoints with a JSON sidecar.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "CDADPNET"
//! version    u32
//! input_dim  u32
//! hidden     u32      hidden layer count
//! width      u32
//! act_hidden u8       0 = ELU, 1 = tanh, 2 = linear
//! act_output u8
//! output_dim u32
//! scale      f64 × output_dim
//! layers     u32
//! shapes     (rows u32, cols u32) × layers
//! count      u64
//! params     f64 × count
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::params::{LayerShape, ParamLayout, ParamVector};
use super::spec::{Activation, NetworkSpec};
use super::NetError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CDADPNET";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub iteration: u64,
    pub seed: u64,
    pub config_hash: String,
}

pub fn encode_checkpoint(spec: &NetworkSpec, params: &ParamVector) -> Result<Vec<u8>, NetError> {
    spec.check_params(params)?;
    let mut buf = Vec::with_capacity(64 + params.len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for d in [spec.input_dim, spec.hidden_layers, spec.hidden_width] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.push(spec.hidden_activation.code());
    buf.push(spec.output_activation.code());
    buf.extend_from_slice(&(spec.output_dim as u32).to_le_bytes());
    for s in &spec.output_scale {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    let shapes = params.layout().shapes();
    buf.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for s in shapes {
        buf.extend_from_slice(&(s.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(s.cols as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        if self.pos + n > self.bytes.len() {
            return Err(NetError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn activation(&mut self) -> Result<Activation, NetError> {
        let code = self.take(1)?[0];
        Activation::from_code(code).ok_or_else(|| NetError::Checkpoint(format!("unknown activation code {code}")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(NetworkSpec, ParamVector), NetError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    let input_dim = r.u32()? as usize;
    let hidden_layers = r.u32()? as usize;
    let hidden_width = r.u32()? as usize;
    let hidden_activation = r.activation()?;
    let output_activation = r.activation()?;
    let output_dim = r.u32()? as usize;
    let output_scale = (0..output_dim).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let spec = NetworkSpec {
        input_dim,
        hidden_layers,
        hidden_width,
        hidden_activation,
        output_activation,
        output_dim,
        output_scale,
    };
    spec.validate()?;
    let layers = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(layers);
    for _ in 0..layers {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        shapes.push(LayerShape { rows, cols });
    }
    if shapes != spec.layer_shapes() {
        return Err(NetError::Checkpoint("layer layout disagrees with header dimensions".into()));
    }
    let count = r.u64()? as usize;
    let layout = Arc::new(ParamLayout::new(shapes));
    if count != layout.len() {
        return Err(NetError::Checkpoint(format!("parameter count {count} != layout size {}", layout.len())));
    }
    let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    if r.pos != bytes.len() {
        return Err(NetError::Checkpoint("trailing bytes".into()));
    }
    Ok((spec, ParamVector::from_values(layout, values)?))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn save_checkpoint(path: &Path, spec: &NetworkSpec, params: &ParamVector, meta: &CheckpointMeta) -> Result<(), NetError> {
    let bytes = encode_checkpoint(spec, params)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkSpec, ParamVector), NetError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

pub fn load_checkpoint_meta(path: &Path) -> Result<CheckpointMeta, NetError> {
    let text = fs::read_to_string(sidecar_path(path))?;
    serde_json::from_str(&text).map_err(|e| NetError::Checkpoint(e.to_string()))
}
