//! Model file serialization.
//!
//! The on-disk format is a JSON document
//!
//! ```json
//! {"version":1,"layers":[{"in":2,"out":3,"activation":"relu","W":[[...],[...]],"b":[...]}]}
//! ```
//!
//! with `W` given as `out` rows of `in` entries. Floats are written in
//! scientific notation with 17 significant digits, which is enough for the
//! round trip to reproduce every parameter bit-exactly.

use super::{Activation, Layer, NetError, Network};
use crate::linalg::{Matrix, Vector};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("unsupported model format version {0} (expected {MODEL_FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("malformed model document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid model contents: {0}")]
    Invalid(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    version: u32,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    #[serde(rename = "in")]
    in_dim: usize,
    #[serde(rename = "out")]
    out_dim: usize,
    activation: Activation,
    #[serde(rename = "W")]
    weights: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Network {
    pub fn to_json_string(&self) -> String {
        let doc = NetworkDoc {
            version: MODEL_FORMAT_VERSION,
            layers: self
                .layers()
                .iter()
                .map(|l| LayerDoc {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation,
                    weights: (0..l.out_dim()).map(|i| l.weights.row(i).to_vec()).collect(),
                    b: l.bias.as_slice().to_vec(),
                })
                .collect(),
        };
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
        doc.serialize(&mut ser).expect("network document serializes");
        String::from_utf8(buf).expect("serializer emits utf-8")
    }

    pub fn from_json_str(text: &str) -> Result<Network, ModelIoError> {
        let doc: NetworkDoc = serde_json::from_str(text)?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(ModelIoError::UnsupportedVersion(doc.version));
        }
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (i, l) in doc.layers.iter().enumerate() {
            if l.weights.len() != l.out_dim {
                return Err(ModelIoError::Invalid(format!(
                    "layer {i}: expected {} weight rows, found {}",
                    l.out_dim,
                    l.weights.len()
                )));
            }
            for row in &l.weights {
                if row.len() != l.in_dim {
                    return Err(ModelIoError::Invalid(format!(
                        "layer {i}: expected rows of {} entries, found {}",
                        l.in_dim,
                        row.len()
                    )));
                }
            }
            if l.b.len() != l.out_dim {
                return Err(ModelIoError::Invalid(format!(
                    "layer {i}: expected {} bias entries, found {}",
                    l.out_dim,
                    l.b.len()
                )));
            }
            layers.push(Layer {
                weights: Matrix::from_rows(&l.weights),
                bias: Vector::from_slice(&l.b),
                activation: l.activation,
            });
        }
        Ok(Network::from_layers(layers)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelIoError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json_string().as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Network, ModelIoError> {
        let text = std::fs::read_to_string(path)?;
        Network::from_json_str(&text)
    }
}

/// JSON formatter writing every float with 17 significant digits.
struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{:.16e}", value)
    }
}
