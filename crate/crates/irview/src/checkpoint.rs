//! Checkpoint container.
//!
//! Layout: a magic line, one line of JSON metadata (model configuration,
//! seed, code version, optimizer settings, tensor names and shapes, digest),
//! then every tensor's values as little-endian `f32` in header order.

use std::fs;
use std::path::Path;

use irview_core::model::NetworkKind;
use irview_core::optim::AdamConfig;
use irview_core::train::LossMode;
use irview_core::{ModelConfig, NamedTensor, Network, WeightsHandle};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &str = "IRVIEW-CHECKPOINT v1";

pub fn code_version() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("IRVIEW_GIT_DESCRIBE"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: NetworkKind,
    pub model: ModelConfig,
    pub seed: u64,
    pub code_version: String,
    pub adam: AdamConfig,
    pub loss_mode: Option<LossMode>,
    pub epochs_completed: usize,
    pub weights: WeightsHandle<f32>,
}

impl Checkpoint {
    pub fn new(kind: NetworkKind, model: &ModelConfig, seed: u64, adam: AdamConfig, weights: WeightsHandle<f32>) -> Self {
        Checkpoint {
            kind,
            model: model.clone(),
            seed,
            code_version: code_version(),
            adam,
            loss_mode: None,
            epochs_completed: 0,
            weights,
        }
    }

    /// Network matching the stored configuration, with the weights checked
    /// against it.
    pub fn network(&self) -> Result<Network> {
        let net = Network::new(&self.model, self.kind)?;
        net.check_weights(&self.weights)?;
        Ok(net)
    }

    fn payload(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(4 * self.weights.param_count());
        for t in self.weights.tensors() {
            for v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    /// Short content digest of the weight values.
    pub fn id(&self) -> String {
        digest_hex(&self.payload())[..16].to_string()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let m = &self.model;
        let header = json!({
            "kind": self.kind.as_str(),
            "model": {
                "input_size": m.input_size,
                "conv_filters": m.conv_filters,
                "conv_kernels": m.conv_kernels,
                "conv_stride": m.conv_stride,
                "deconv_filters": m.deconv_filters,
                "deconv_kernels": m.deconv_kernels,
                "projection_kernel": m.projection_kernel,
                "pose_fc_dim": m.pose_fc_dim,
                "fusion_fc_dims": m.fusion_fc_dims,
                "leaky_relu_slope": m.leaky_relu_slope,
            },
            "seed": self.seed,
            "code_version": self.code_version,
            "adam": {"beta1": self.adam.beta1, "beta2": self.adam.beta2, "eps": self.adam.eps},
            "loss_mode": self.loss_mode.map(LossMode::as_str),
            "epochs_completed": self.epochs_completed,
            "tensors": self.weights.tensors().iter().map(|t| json!({"name": t.name, "shape": t.shape})).collect::<Vec<_>>(),
            "sha256": digest_hex(&payload),
        });
        let mut out = format!("{MAGIC}\n{header}\n").into_bytes();
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, msg.to_string());
        let mut parts = bytes.splitn(3, |&b| b == b'\n');
        if parts.next() != Some(MAGIC.as_bytes()) {
            return Err(bad("not a checkpoint file"));
        }
        let header: Value = serde_json::from_slice(parts.next().ok_or_else(|| bad("missing header"))?)
            .map_err(|e| Error::format(path, format!("header: {e}")))?;
        let payload = parts.next().ok_or_else(|| bad("missing tensor data"))?;
        let h = Header { v: &header, path };
        let m = h.get("model")?;
        let mh = Header { v: m, path };
        let model = ModelConfig {
            input_size: mh.usize("input_size")?,
            conv_filters: mh.usizes("conv_filters")?,
            conv_kernels: mh.usizes("conv_kernels")?,
            conv_stride: mh.usize("conv_stride")?,
            deconv_filters: mh.usizes("deconv_filters")?,
            deconv_kernels: mh.usizes("deconv_kernels")?,
            projection_kernel: mh.usize("projection_kernel")?,
            pose_fc_dim: mh.usize("pose_fc_dim")?,
            fusion_fc_dims: mh.usizes("fusion_fc_dims")?,
            leaky_relu_slope: mh.f64("leaky_relu_slope")?,
        };
        let ah = Header { v: h.get("adam")?, path };
        let kind = NetworkKind::parse(h.str("kind")?).ok_or_else(|| bad("unknown network kind"))?;
        let loss_mode = match h.get("loss_mode")? {
            Value::Null => None,
            Value::String(s) => Some(LossMode::parse(s).ok_or_else(|| bad("unknown loss mode"))?),
            _ => return Err(bad("loss_mode must be a string")),
        };
        if digest_hex(payload) != h.str("sha256")? {
            return Err(bad("tensor data digest mismatch"));
        }
        let mut weights = WeightsHandle::new();
        let mut offset = 0;
        let tensors = h.get("tensors")?.as_array().ok_or_else(|| bad("tensors must be a list"))?;
        for t in tensors {
            let th = Header { v: t, path };
            let shape = th.usizes("shape")?;
            let len: usize = shape.iter().product();
            let end = offset + 4 * len;
            let chunk = payload.get(offset..end).ok_or_else(|| bad("tensor data truncated"))?;
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            weights.push(NamedTensor {
                name: th.str("name")?.to_string(),
                shape,
                data,
            })?;
            offset = end;
        }
        if offset != payload.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        let ck = Checkpoint {
            kind,
            model,
            seed: h.u64("seed")?,
            code_version: h.str("code_version")?.to_string(),
            adam: AdamConfig {
                beta1: ah.f64("beta1")?,
                beta2: ah.f64("beta2")?,
                eps: ah.f64("eps")?,
            },
            loss_mode,
            epochs_completed: h.usize("epochs_completed")?,
            weights,
        };
        ck.network()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(Error::io(&tmp))?;
        fs::rename(&tmp, path).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes, path)
    }
}

fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Header<'a> {
    v: &'a Value,
    path: &'a Path,
}

impl<'a> Header<'a> {
    fn get(&self, key: &str) -> Result<&'a Value> {
        self.v
            .get(key)
            .ok_or_else(|| Error::format(self.path, format!("header field `{key}` missing")))
    }

    fn wrong(&self, key: &str) -> Error {
        Error::format(self.path, format!("header field `{key}` has the wrong type"))
    }

    fn str(&self, key: &str) -> Result<&'a str> {
        self.get(key)?.as_str().ok_or_else(|| self.wrong(key))
    }

    fn u64(&self, key: &str) -> Result<u64> {
        self.get(key)?.as_u64().ok_or_else(|| self.wrong(key))
    }

    fn usize(&self, key: &str) -> Result<usize> {
        Ok(self.u64(key)? as usize)
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.get(key)?.as_f64().ok_or_else(|| self.wrong(key))
    }

    fn usizes(&self, key: &str) -> Result<Vec<usize>> {
        let arr = self.get(key)?.as_array().ok_or_else(|| self.wrong(key))?;
        arr.iter()
            .map(|x| x.as_u64().map(|v| v as usize).ok_or_else(|| self.wrong(key)))
            .collect()
    }
}
