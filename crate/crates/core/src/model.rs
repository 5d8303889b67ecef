//! On-disk model files: a trained network or a quantized circuit, bundled
//! with the preprocessing needed to score raw rows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Preprocessor, Sample};
use crate::discrete::{quantize, DiscreteNetwork};
use crate::error::{DlnError, Result};
use crate::network::{argmax, Network, NetworkParams, NetworkSpec, PhaseMode};

pub const MODEL_FORMAT: &str = "dln-model";
pub const QUANTIZED_FORMAT: &str = "dln-quantized";
pub const FORMAT_VERSION: u32 = 1;

/// A trained network with its preprocessor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format: String,
    pub version: u32,
    pub manifest_hash: Option<String>,
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    pub preprocessor: Preprocessor,
}

/// A quantized circuit with its preprocessor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub format: String,
    pub version: u32,
    pub manifest_hash: Option<String>,
    pub circuit: DiscreteNetwork,
    pub preprocessor: Preprocessor,
}

fn check_header(found: &str, version: u32, expected: &str) -> Result<()> {
    if found != expected || version != FORMAT_VERSION {
        return Err(DlnError::Config(format!(
            "unsupported model format {found} v{version}, expected {expected} v{FORMAT_VERSION}"
        )));
    }
    Ok(())
}

fn check_layout(pre: &Preprocessor, n_continuous: usize, n_onehot: usize, n_classes: usize) -> Result<()> {
    if pre.n_continuous() != n_continuous || pre.n_onehot() != n_onehot || pre.n_classes() != n_classes {
        return Err(DlnError::Config(format!(
            "preprocessor layout ({}, {}, {}) does not match the network ({n_continuous}, {n_onehot}, {n_classes})",
            pre.n_continuous(),
            pre.n_onehot(),
            pre.n_classes()
        )));
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| DlnError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| DlnError::io(path, e))
}

impl Model {
    pub fn new(network: Network, preprocessor: Preprocessor, manifest_hash: Option<String>) -> Result<Self> {
        check_layout(
            &preprocessor,
            network.spec.n_continuous,
            network.spec.n_onehot,
            network.spec.n_classes,
        )?;
        Ok(Model {
            format: MODEL_FORMAT.into(),
            version: FORMAT_VERSION,
            manifest_hash,
            spec: network.spec,
            params: network.params,
            preprocessor,
        })
    }

    pub fn network(&self) -> Result<Network> {
        Network::new(self.spec.clone(), self.params.clone())
    }

    pub fn quantize(&self) -> Result<QuantizedModel> {
        Ok(QuantizedModel {
            format: QUANTIZED_FORMAT.into(),
            version: FORMAT_VERSION,
            manifest_hash: self.manifest_hash.clone(),
            circuit: quantize(&self.network()?),
            preprocessor: self.preprocessor.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Model = serde_json::from_str(text)?;
        check_header(&model.format, model.version, MODEL_FORMAT)?;
        model.network()?;
        check_layout(&model.preprocessor, model.spec.n_continuous, model.spec.n_onehot, model.spec.n_classes)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Model::from_json(&read(path)?)
    }

    /// Class logits of one raw row (feature cells in schema order).
    pub fn logits_cells(&self, cells: &[&str], mode: PhaseMode) -> Result<Vec<f64>> {
        let (c, o, _) = self.preprocessor.transform_cells(cells)?;
        self.network()?.forward(Sample { continuous: &c, onehot: &o }, mode)
    }

    pub fn predict_cells(&self, cells: &[&str], mode: PhaseMode) -> Result<usize> {
        Ok(argmax(&self.logits_cells(cells, mode)?))
    }
}

impl QuantizedModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: QuantizedModel = serde_json::from_str(text)?;
        check_header(&model.format, model.version, QUANTIZED_FORMAT)?;
        model.circuit.validate()?;
        check_layout(
            &model.preprocessor,
            model.circuit.n_continuous,
            model.circuit.n_onehot,
            model.circuit.n_classes,
        )?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        QuantizedModel::from_json(&read(path)?)
    }

    /// Predicted class and per-class scores of one raw row.
    pub fn evaluate_cells(&self, cells: &[&str]) -> Result<(usize, Vec<u32>)> {
        let (c, o, _) = self.preprocessor.transform_cells(cells)?;
        Ok(self.circuit.evaluate(Sample { continuous: &c, onehot: &o }))
    }
}

/// Either kind of model file, detected from its `format` field.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Trained(Model),
    Quantized(QuantizedModel),
}

impl AnyModel {
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
        }
        let header: Header = serde_json::from_str(text)?;
        match header.format.as_str() {
            MODEL_FORMAT => Ok(AnyModel::Trained(Model::from_json(text)?)),
            QUANTIZED_FORMAT => Ok(AnyModel::Quantized(QuantizedModel::from_json(text)?)),
            other => Err(DlnError::Config(format!("unknown model format {other}"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        AnyModel::from_json(&read(path)?)
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        match self {
            AnyModel::Trained(m) => &m.preprocessor,
            AnyModel::Quantized(q) => &q.preprocessor,
        }
    }

    pub fn manifest_hash(&self) -> Option<&str> {
        match self {
            AnyModel::Trained(m) => m.manifest_hash.as_deref(),
            AnyModel::Quantized(q) => q.manifest_hash.as_deref(),
        }
    }

    pub fn quantized(&self) -> Result<QuantizedModel> {
        match self {
            AnyModel::Trained(m) => m.quantize(),
            AnyModel::Quantized(q) => Ok(q.clone()),
        }
    }
}
