//! Versioned JSON document for trained models.
//!
//! ```json
//! { "format": "gcrnn-model", "version": 1, "spec": { ... },
//!   "parameters": [ { "name": "cell.input", "shape": [4, 10, 1], "values": [ ... ] } ] }
//! ```
//!
//! Values are row-major and written in shortest round-trip decimal form,
//! so loading reproduces every `f64` bit for bit.

use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODEL_FORMAT: &str = "gcrnn-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    spec: ModelSpec,
    parameters: Vec<Component>,
}

#[derive(Serialize, Deserialize)]
struct Component {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

pub fn save_model<T: Scalar>(model: &Model<T>) -> Result<String> {
    let doc = Document {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_FORMAT_VERSION,
        spec: model.spec(),
        parameters: model
            .named_parameters()
            .into_iter()
            .map(|(name, t)| Component {
                name,
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::invalid(format!("model serialization: {e}")))
}

pub fn load_model<T: Scalar>(text: &str) -> Result<Model<T>> {
    let doc: Document = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    if doc.format != MODEL_FORMAT {
        return Err(Error::invalid(format!("not a model document (format `{}`)", doc.format)));
    }
    if doc.version != MODEL_FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
            doc.version
        )));
    }
    let mut model = Model::from_spec(&doc.spec)?;
    let names: Vec<String> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
    if names.len() != doc.parameters.len() {
        return Err(Error::invalid(format!(
            "architecture has {} parameter tensors, document lists {}",
            names.len(),
            doc.parameters.len()
        )));
    }
    for ((name, slot), comp) in names.iter().zip(model.parameters_mut()).zip(&doc.parameters) {
        if *name != comp.name || slot.shape() != comp.shape.as_slice() || slot.len() != comp.values.len() {
            return Err(Error::invalid(format!(
                "component `{}` {:?} does not match expected `{name}` {:?}",
                comp.name,
                comp.shape,
                slot.shape()
            )));
        }
        for (dst, &v) in slot.data_mut().iter_mut().zip(&comp.values) {
            *dst = T::lit(v);
        }
    }
    Ok(model)
}
