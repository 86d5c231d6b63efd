//! Model documents: JSON loading with validation, and canonical saving
//! (sorted keys, 17 significant digits) so files diff cleanly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::network::{Activation, ActivationKind, GeneratorNetwork, Layer};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ActivationDoc {
    kind: ActivationKind,
    #[serde(default)]
    alpha: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerDoc {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: ActivationDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDoc {
    #[serde(default)]
    schema_version: Option<u64>,
    latent_dim: usize,
    output_dim: usize,
    layers: Vec<LayerDoc>,
    #[serde(default)]
    metadata: Map<String, Value>,
}

/// A network together with its free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDocument {
    pub network: GeneratorNetwork,
    pub metadata: Map<String, Value>,
}

impl ModelDocument {
    pub fn new(network: GeneratorNetwork) -> Self {
        ModelDocument {
            network,
            metadata: Map::new(),
        }
    }
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn layer_from_doc(idx: usize, doc: LayerDoc) -> Result<Layer> {
    let invalid = |message: String| Error::Validation { layer: idx, message };
    let rows = doc.weights.len();
    let cols = doc.weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(invalid("weights must be a nonempty matrix".into()));
    }
    if let Some(r) = doc.weights.iter().position(|row| row.len() != cols) {
        return Err(invalid(format!("weight row {r} has length {}, expected {cols}", doc.weights[r].len())));
    }
    if doc.bias.len() != rows {
        return Err(invalid(format!("bias has length {}, weights have {rows} rows", doc.bias.len())));
    }
    let activation =
        Activation::new(doc.activation.kind, doc.activation.alpha).map_err(|e| invalid(e.to_string()))?;
    let weights = DMatrix::from_fn(rows, cols, |r, c| doc.weights[r][c]);
    Layer::new(weights, DVector::from_vec(doc.bias), activation).map_err(|e| invalid(e.to_string()))
}

/// Parses and validates a model document.
pub fn parse_model(text: &str) -> Result<ModelDocument> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(parse_error)?;
    let version = doc.schema_version.unwrap_or(SCHEMA_VERSION);
    if version != SCHEMA_VERSION {
        return Err(Error::Version {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    if doc.layers.is_empty() {
        return Err(Error::Model("model has no layers".into()));
    }
    let layers = doc
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, l)| layer_from_doc(i, l))
        .collect::<Result<Vec<_>>>()?;
    if layers[0].in_dim() != doc.latent_dim {
        return Err(Error::Validation {
            layer: 0,
            message: format!(
                "input width {} does not match latent_dim {}",
                layers[0].in_dim(),
                doc.latent_dim
            ),
        });
    }
    let last = layers.len() - 1;
    if layers[last].out_dim() != doc.output_dim {
        return Err(Error::Validation {
            layer: last,
            message: format!(
                "output width {} does not match output_dim {}",
                layers[last].out_dim(),
                doc.output_dim
            ),
        });
    }
    Ok(ModelDocument {
        network: GeneratorNetwork::new(layers)?,
        metadata: doc.metadata,
    })
}

pub fn load_document(path: impl AsRef<Path>) -> Result<ModelDocument> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_model(&text)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GeneratorNetwork> {
    load_document(path).map(|d| d.network)
}

fn to_value(doc: &ModelDocument) -> Value {
    let net = &doc.network;
    let layers: Vec<Value> = net
        .layers()
        .iter()
        .map(|l| {
            let w = l.weights();
            let rows: Vec<Value> = (0..w.nrows())
                .map(|r| Value::Array((0..w.ncols()).map(|c| Value::from(w[(r, c)])).collect()))
                .collect();
            let act = l.activation();
            let mut activation = Map::new();
            activation.insert("kind".into(), Value::from(act.kind().to_string()));
            activation.insert("alpha".into(), Value::from(act.alpha()));
            let mut layer = Map::new();
            layer.insert("weights".into(), Value::Array(rows));
            layer.insert("bias".into(), Value::Array(l.bias().iter().map(|&b| Value::from(b)).collect()));
            layer.insert("activation".into(), Value::Object(activation));
            Value::Object(layer)
        })
        .collect();
    let mut root = Map::new();
    root.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    root.insert("latent_dim".into(), Value::from(net.latent_dim()));
    root.insert("output_dim".into(), Value::from(net.output_dim()));
    root.insert("layers".into(), Value::Array(layers));
    root.insert("metadata".into(), Value::Object(doc.metadata.clone()));
    Value::Object(root)
}

fn write_canonical(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize, out: &mut String| out.extend(std::iter::repeat_n(' ', n));
    match v {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&v.to_string()),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => write!(out, "{i}").expect("string write"),
            (_, Some(u)) => write!(out, "{u}").expect("string write"),
            _ => write!(out, "{:.16e}", n.as_f64().expect("finite number")).expect("string write"),
        },
        Value::Array(items) => {
            // rows of numbers stay on one line
            if items.iter().all(|i| i.is_number()) {
                out.push('[');
                for (k, item) in items.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    write_canonical(item, indent, out);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                pad(indent + 2, out);
                write_canonical(item, indent + 2, out);
                if k + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            pad(indent, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (k, key) in keys.iter().enumerate() {
                pad(indent + 2, out);
                out.push_str(&Value::from(key.as_str()).to_string());
                out.push_str(": ");
                write_canonical(&map[key.as_str()], indent + 2, out);
                if k + 1 < keys.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            pad(indent, out);
            out.push('}');
        }
    }
}

/// Canonical JSON text of a model document.
pub fn to_canonical_json(doc: &ModelDocument) -> String {
    let mut out = String::new();
    write_canonical(&to_value(doc), 0, &mut out);
    out.push('\n');
    out
}

pub fn save_document(doc: &ModelDocument, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_canonical_json(doc)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_model(net: &GeneratorNetwork, path: impl AsRef<Path>) -> Result<()> {
    save_document(&ModelDocument::new(net.clone()), path)
}
