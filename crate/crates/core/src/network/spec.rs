use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};

/// How threshold outputs reach logic layers after the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcatMode {
    /// Only the first logic layer sees the inputs.
    None,
    /// One threshold layer, reused as extra input of every later logic layer.
    SharedThreshold,
    /// Every later logic layer gets its own threshold layer.
    PerLayerThreshold,
}

/// Which relaxations run their discrete forward value with a soft gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SteFlags {
    /// Threshold neurons (phase I).
    pub threshold: bool,
    /// Gate mixture (phase I).
    pub gate: bool,
    /// Link mixture (phase II).
    pub link: bool,
    /// Sum-layer wires (phase II).
    pub sum: bool,
}

impl SteFlags {
    pub const ALL: SteFlags = SteFlags {
        threshold: true,
        gate: true,
        link: true,
        sum: true,
    };
    pub const NONE: SteFlags = SteFlags {
        threshold: false,
        gate: false,
        link: false,
        sum: false,
    };
}

impl Default for SteFlags {
    fn default() -> Self {
        SteFlags::ALL
    }
}

/// Which parameters are relaxed and which are quantized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseMode {
    /// Neuron functions (biases, slopes, gate logits) relaxed; connections quantized.
    PhaseI,
    /// Connections (link and sum logits) relaxed; neuron functions quantized.
    PhaseII,
    /// Everything quantized.
    Inference,
}

/// Architecture and relaxation hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub n_continuous: usize,
    pub n_onehot: usize,
    pub n_classes: usize,
    /// Width of each logic layer; its length is the number of logic layers.
    pub layer_widths: Vec<usize>,
    pub concat_mode: ConcatMode,
    pub neurons_per_feature: usize,
    pub gate_subspace_size: usize,
    pub link_subspace_size: usize,
    pub ste: SteFlags,
    pub threshold_trainable: bool,
    /// Sum-layer wire cutoff on `sigmoid(S)`.
    pub sum_threshold: f64,
    /// Divisor applied to class sums; `None` means `sqrt(last layer width)`.
    pub logit_scale: Option<f64>,
    pub slope_init: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            n_continuous: 0,
            n_onehot: 0,
            n_classes: 2,
            layer_widths: vec![16],
            concat_mode: ConcatMode::PerLayerThreshold,
            neurons_per_feature: 4,
            gate_subspace_size: 16,
            link_subspace_size: usize::MAX,
            ste: SteFlags::ALL,
            threshold_trainable: true,
            sum_threshold: 0.8,
            logit_scale: None,
            slope_init: 2.0,
        }
    }
}

impl NetworkSpec {
    /// Gate and link subspaces of 8, STE everywhere, per-layer concatenation,
    /// `θ = 0.8`, slope init 2, six neurons per feature.
    pub fn paper_default(n_continuous: usize, n_onehot: usize, n_classes: usize, layer_widths: Vec<usize>) -> Self {
        NetworkSpec {
            n_continuous,
            n_onehot,
            n_classes,
            layer_widths,
            concat_mode: ConcatMode::PerLayerThreshold,
            neurons_per_feature: 6,
            gate_subspace_size: 8,
            link_subspace_size: 8,
            ste: SteFlags::ALL,
            threshold_trainable: true,
            sum_threshold: 0.8,
            logit_scale: None,
            slope_init: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DlnError::Config(msg.to_string()));
        if self.layer_widths.is_empty() {
            return bad("at least one logic layer is required");
        }
        if self.layer_widths.contains(&0) {
            return bad("logic layer widths must be positive");
        }
        if self.n_classes == 0 {
            return bad("at least one class is required");
        }
        if self.n_continuous > 0 && self.neurons_per_feature == 0 {
            return bad("neurons_per_feature must be positive");
        }
        if self.base_input_dim() == 0 {
            return bad("network has no inputs");
        }
        if !(1..=16).contains(&self.gate_subspace_size) {
            return bad("gate_subspace_size must be in 1..=16");
        }
        if self.link_subspace_size == 0 {
            return bad("link_subspace_size must be positive");
        }
        if !(self.sum_threshold > 0.0 && self.sum_threshold < 1.0) {
            return bad("sum_threshold must be in (0,1)");
        }
        if let Some(t) = self.logit_scale {
            if !(t > 0.0 && t.is_finite()) {
                return bad("logit_scale must be positive");
            }
        }
        if !self.slope_init.is_finite() {
            return bad("slope_init must be finite");
        }
        Ok(())
    }

    pub fn n_logic_layers(&self) -> usize {
        self.layer_widths.len()
    }

    pub fn n_threshold_neurons(&self) -> usize {
        self.n_continuous * self.neurons_per_feature
    }

    /// Width of the binarized input block (threshold outputs then one-hot bits).
    pub fn base_input_dim(&self) -> usize {
        self.n_threshold_neurons() + self.n_onehot
    }

    pub fn n_threshold_groups(&self) -> usize {
        match self.concat_mode {
            ConcatMode::PerLayerThreshold => self.layer_widths.len(),
            _ => 1,
        }
    }

    /// Whether logic layer `layer` (0-based, `> 0`) receives the input block
    /// concatenated after the previous layer's outputs.
    pub fn concatenates(&self, layer: usize) -> bool {
        layer > 0 && self.concat_mode != ConcatMode::None
    }

    pub fn logic_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.base_input_dim()
        } else if self.concatenates(layer) {
            self.layer_widths[layer - 1] + self.base_input_dim()
        } else {
            self.layer_widths[layer - 1]
        }
    }

    pub fn resolved_logit_scale(&self) -> f64 {
        self.logit_scale
            .unwrap_or_else(|| (*self.layer_widths.last().unwrap_or(&1) as f64).sqrt())
    }
}
