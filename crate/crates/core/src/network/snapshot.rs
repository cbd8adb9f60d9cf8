use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{DenseLayer, MlpModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SNAPSHOT_FORMAT: &str = "spurious-lab-model";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotFile {
    format: String,
    version: u32,
    hidden: Vec<LayerFile>,
    output: Vec<f64>,
    output_bias: f64,
    #[serde(default)]
    input_mask: Option<Vec<bool>>,
}

impl<T: Scalar> MlpModel<T> {
    /// JSON text with layer shapes and row-major weights. Values are written in
    /// shortest round-trip form, so `f64` models reload bit-exactly.
    pub fn to_snapshot(&self) -> String {
        let conv = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
        let file = SnapshotFile {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            hidden: self
                .hidden
                .iter()
                .map(|l| LayerFile {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: conv(&l.weights),
                    bias: conv(&l.bias),
                })
                .collect(),
            output: conv(&self.output),
            output_bias: self.output_bias.to_f64_lossy(),
            input_mask: self.input_mask.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("snapshot serializes");
        text.push('\n');
        text
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let file: SnapshotFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model snapshot: {e}")))?;
        if file.format != SNAPSHOT_FORMAT {
            return Err(Error::Schema(format!("not a model snapshot (format {:?})", file.format)));
        }
        if file.version != SNAPSHOT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported snapshot version {} (expected {SNAPSHOT_VERSION})",
                file.version
            )));
        }
        let conv = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
        let hidden = file
            .hidden
            .into_iter()
            .map(|l| DenseLayer {
                inputs: l.inputs,
                outputs: l.outputs,
                weights: conv(l.weights),
                bias: conv(l.bias),
            })
            .collect();
        let mut model = MlpModel::from_parts(hidden, conv(file.output), T::of(file.output_bias))
            .map_err(|e| Error::Schema(format!("model snapshot: {e}")))?;
        if let Some(mask) = file.input_mask {
            model.set_input_mask(mask).map_err(|e| Error::Schema(format!("model snapshot: {e}")))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_snapshot()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_snapshot(&text)
    }
}
