//! Self-describing policy files.
//!
//! Layout: `SPLC`, format version (u16 LE), header length (u32 LE), JSON
//! header, then every parameter as a little-endian f64 in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algos::{Algo, PolicyHead, PolicyModel};
use crate::error::{Error, Result};
use crate::gates::{GateParams, Gating, Sparsity};
use crate::lowrank::{CompressedLayer, CompressedNetwork, FactoredLayer, LowRankWeight};
use crate::nn::{Activation, Layer, Matrix, Network};

pub const MAGIC: &[u8; 4] = b"SPLC";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Dense,
    Gated,
    Factored,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Network(Network),
    Factored(CompressedNetwork),
}

impl Model {
    pub fn kind(&self) -> CheckpointKind {
        match self {
            Model::Network(n) if n.is_gated() => CheckpointKind::Gated,
            Model::Network(_) => CheckpointKind::Dense,
            Model::Factored(_) => CheckpointKind::Factored,
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        match self {
            Model::Network(n) => n.layer_sizes(),
            Model::Factored(c) => c.layer_sizes(),
        }
    }

    /// Stored weights and biases (gate parameters excluded).
    pub fn param_count(&self) -> usize {
        match self {
            Model::Network(n) => n.param_count(),
            Model::Factored(c) => c.param_count(),
        }
    }
}

impl PolicyModel for Model {
    fn in_dim(&self) -> usize {
        self.layer_sizes()[0]
    }
    fn outputs(&self, x: &Matrix, gating: Gating<'_>) -> Result<Matrix> {
        match self {
            Model::Network(n) => n.predict(x, gating),
            Model::Factored(c) => c.forward(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub env: String,
    pub algo: Algo,
    pub head: PolicyHead,
    pub sparsity: Sparsity,
    pub lambda_c: f64,
    pub seed: u64,
    /// Training episodes completed when the policy was saved.
    pub episodes: usize,
    pub model: Model,
}

#[derive(Debug, Serialize, Deserialize)]
struct GateHeader {
    beta: f64,
    gamma: f64,
    zeta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerHeader {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    /// Present for factored layers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gate: Option<GateHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    env: String,
    algo: Algo,
    head: PolicyHead,
    kind: CheckpointKind,
    sparsity: Sparsity,
    lambda_c: f64,
    seed: u64,
    episodes: usize,
    architecture: Vec<LayerHeader>,
}

impl Checkpoint {
    pub fn kind(&self) -> CheckpointKind {
        self.model.kind()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut architecture = Vec::new();
        let mut blobs: Vec<&[f64]> = Vec::new();
        match &self.model {
            Model::Network(net) => {
                for l in net.layers() {
                    architecture.push(LayerHeader {
                        in_dim: l.in_dim(),
                        out_dim: l.out_dim(),
                        activation: l.activation,
                        rank: None,
                        gate: l.gate.as_ref().map(|g| GateHeader {
                            beta: g.beta,
                            gamma: g.gamma,
                            zeta: g.zeta,
                        }),
                    });
                    blobs.push(l.weight.data());
                    blobs.push(&l.bias);
                    if let Some(g) = &l.gate {
                        blobs.push(&g.log_alpha);
                    }
                }
            }
            Model::Factored(c) => {
                for l in &c.layers {
                    match l {
                        CompressedLayer::Dense {
                            weight,
                            bias,
                            activation,
                        } => {
                            architecture.push(LayerHeader {
                                in_dim: weight.cols(),
                                out_dim: weight.rows(),
                                activation: *activation,
                                rank: None,
                                gate: None,
                            });
                            blobs.push(weight.data());
                            blobs.push(bias);
                        }
                        CompressedLayer::Factored(f) => {
                            architecture.push(LayerHeader {
                                in_dim: f.weight.in_dim(),
                                out_dim: f.weight.out_dim(),
                                activation: f.activation,
                                rank: Some(f.weight.rank()),
                                gate: None,
                            });
                            blobs.push(f.weight.u.data());
                            blobs.push(&f.weight.s);
                            blobs.push(f.weight.v.data());
                            blobs.push(&f.bias);
                        }
                    }
                }
            }
        }
        let header = Header {
            env: self.env.clone(),
            algo: self.algo,
            head: self.head,
            kind: self.kind(),
            sparsity: self.sparsity,
            lambda_c: self.lambda_c,
            seed: self.seed,
            episodes: self.episodes,
            architecture,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let header_len = u32::try_from(json.len())
            .map_err(|_| Error::InvalidInput("checkpoint header too large".into()))?;
        let n_values: usize = blobs.iter().map(|b| b.len()).sum();
        let mut out = Vec::with_capacity(10 + json.len() + 8 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        for b in blobs {
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::UnsupportedFormat("missing SPLC magic bytes".into()));
        }
        let version = u16::from_le_bytes(r.take(2, "format version")?.try_into().expect("2 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let len = u32::from_le_bytes(r.take(4, "header length")?.try_into().expect("4 bytes")) as usize;
        let start = r.pos;
        let header: Header = serde_json::from_slice(r.take(len, "header")?).map_err(|e| Error::Format {
            offset: start,
            msg: format!("header is not valid JSON: {e}"),
        })?;
        if header.architecture.is_empty() {
            return Err(Error::Format {
                offset: start,
                msg: "header declares no layers".into(),
            });
        }
        let model = match header.kind {
            CheckpointKind::Dense | CheckpointKind::Gated => {
                let mut layers = Vec::new();
                for (i, lh) in header.architecture.iter().enumerate() {
                    if lh.rank.is_some() {
                        return Err(r.err(format!("layer {i} is factored in a {:?} checkpoint", header.kind)));
                    }
                    let n = checked_mul(lh.out_dim, lh.in_dim, &r)?;
                    let weight = Matrix::from_vec(lh.out_dim, lh.in_dim, r.floats(n, &format!("layer {i} weight"))?)?;
                    let bias = r.floats(lh.out_dim, &format!("layer {i} bias"))?;
                    let gate = match &lh.gate {
                        Some(g) => Some(GateParams::new(
                            r.floats(n, &format!("layer {i} log_alpha"))?,
                            g.beta,
                            g.gamma,
                            g.zeta,
                        )?),
                        None => None,
                    };
                    layers.push(Layer {
                        weight,
                        bias,
                        activation: lh.activation,
                        gate,
                    });
                }
                let net = Network::from_layers(layers)?;
                if (header.kind == CheckpointKind::Gated) != net.is_gated() {
                    return Err(Error::Format {
                        offset: start,
                        msg: "kind disagrees with the per-layer gate declarations".into(),
                    });
                }
                Model::Network(net)
            }
            CheckpointKind::Factored => {
                let mut layers = Vec::new();
                for (i, lh) in header.architecture.iter().enumerate() {
                    if lh.gate.is_some() {
                        return Err(r.err(format!("layer {i} declares gates in a factored checkpoint")));
                    }
                    match lh.rank {
                        None => {
                            let n = checked_mul(lh.out_dim, lh.in_dim, &r)?;
                            let weight =
                                Matrix::from_vec(lh.out_dim, lh.in_dim, r.floats(n, &format!("layer {i} weight"))?)?;
                            let bias = r.floats(lh.out_dim, &format!("layer {i} bias"))?;
                            layers.push(CompressedLayer::Dense {
                                weight,
                                bias,
                                activation: lh.activation,
                            });
                        }
                        Some(rank) => {
                            let nu = checked_mul(lh.out_dim, rank, &r)?;
                            let nv = checked_mul(lh.in_dim, rank, &r)?;
                            let u = Matrix::from_vec(lh.out_dim, rank, r.floats(nu, &format!("layer {i} U"))?)?;
                            let s = r.floats(rank, &format!("layer {i} singular values"))?;
                            let v = Matrix::from_vec(lh.in_dim, rank, r.floats(nv, &format!("layer {i} V"))?)?;
                            let bias = r.floats(lh.out_dim, &format!("layer {i} bias"))?;
                            layers.push(CompressedLayer::Factored(FactoredLayer {
                                weight: LowRankWeight { u, s, v },
                                bias,
                                activation: lh.activation,
                            }));
                        }
                    }
                }
                for (i, pair) in layers.windows(2).enumerate() {
                    if pair[0].out_dim() != pair[1].in_dim() {
                        return Err(Error::Format {
                            offset: start,
                            msg: format!("layer {i} output does not feed layer {}", i + 1),
                        });
                    }
                }
                Model::Factored(CompressedNetwork { layers })
            }
        };
        if r.pos != bytes.len() {
            return Err(r.err(format!("{} trailing bytes after the last parameter", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            env: header.env,
            algo: header.algo,
            head: header.head,
            sparsity: header.sparsity,
            lambda_c: header.lambda_c,
            seed: header.seed,
            episodes: header.episodes,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

fn checked_mul(a: usize, b: usize, r: &Reader<'_>) -> Result<usize> {
    a.checked_mul(b)
        .ok_or_else(|| r.err(format!("implausible layer shape {a} x {b}")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: String) -> Error {
        Error::Format { offset: self.pos, msg }
    }

    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!(
                "truncated in {section}: needs {n} bytes, {} remain",
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn floats(&mut self, n: usize, section: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| self.err(format!("implausible length for {section}")))?;
        let raw = self.take(bytes, section)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
