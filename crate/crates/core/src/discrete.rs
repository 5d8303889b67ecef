//! Quantized networks as pure boolean circuits, and their operation counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{DlnError, Result};
use crate::logic::{hard_logic, GateId};
use crate::network::{argmax, concat_group, fires, ConcatMode, Network, NetworkParams, NetworkSpec};

pub const FORMAT: &str = "dln-discrete";
pub const FORMAT_VERSION: u32 = 1;

/// A binarized continuous feature: fires when `sign * (x - bias) >= 0`.
/// A zero sign always fires.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdUnit {
    pub feature: usize,
    pub bias: f64,
    pub sign: i8,
}

impl ThresholdUnit {
    pub fn fires(&self, x: f64) -> bool {
        fires(self.sign as f64, x - self.bias)
    }
}

/// A logic neuron reading two earlier nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateNode {
    pub gate: GateId,
    pub a: usize,
    pub b: usize,
}

/// A boolean circuit. Node ids number the threshold units first, then the
/// one-hot input bits, then the gates layer by layer; every gate reads nodes
/// with smaller ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteNetwork {
    pub n_continuous: usize,
    pub n_onehot: usize,
    pub n_classes: usize,
    pub concat_mode: ConcatMode,
    pub thresholds: Vec<ThresholdUnit>,
    pub layers: Vec<Vec<GateNode>>,
    /// `[last layer width][n_classes]`.
    pub sum_wiring: Vec<Vec<bool>>,
}

/// High-level operation counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighLevelOps {
    pub comparisons: u64,
    pub logic_ops: u64,
    pub additions: u64,
    pub argmax_comparisons: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub bit_width: u32,
    pub high_level: HighLevelOps,
    /// Two-input gate equivalents.
    pub gate_level: u64,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    #[serde(flatten)]
    network: DiscreteNetwork,
}

/// Gate-level price of an `n`-bit adder or comparator.
pub fn adder_cost(bits: u32) -> u64 {
    5 + 9 * (bits as u64 - 1)
}

/// Gate-level price of one logic neuron.
pub fn gate_cost(gate: GateId) -> u64 {
    match gate {
        GateId::XOR | GateId::XNOR => 3,
        GateId::AND
        | GateId::OR
        | GateId::NAND
        | GateId::NOR
        | GateId::A_AND_NOT_B
        | GateId::NOT_A_AND_B
        | GateId::A_IMPLIES_B
        | GateId::B_IMPLIES_A => 1,
        _ => 0,
    }
}

/// Collapses a network onto its quantized circuit.
pub fn quantize(net: &Network) -> DiscreteNetwork {
    quantize_params(&net.spec, &net.params)
}

pub fn quantize_params(spec: &NetworkSpec, params: &NetworkParams) -> DiscreteNetwork {
    let thresholds: Vec<ThresholdUnit> = params
        .thresholds
        .iter()
        .flat_map(|g| {
            (0..g.len()).map(move |i| ThresholdUnit {
                feature: g.source_feature[i],
                bias: g.bias[i],
                sign: if g.slope[i] > 0.0 {
                    1
                } else if g.slope[i] < 0.0 {
                    -1
                } else {
                    0
                },
            })
        })
        .collect();
    let n_thr = spec.n_threshold_neurons();
    let onehot_base = thresholds.len();
    let mut next_id = onehot_base + spec.n_onehot;
    let mut prev_ids: Vec<usize> = Vec::new();
    let mut layers = Vec::with_capacity(params.logic.len());
    for (l, layer) in params.logic.iter().enumerate() {
        let mut input_ids: Vec<usize> = Vec::with_capacity(spec.logic_input_dim(l));
        if l > 0 {
            input_ids.extend_from_slice(&prev_ids);
        }
        if let Some(g) = concat_group(spec.concat_mode, l) {
            input_ids.extend(g * n_thr..(g + 1) * n_thr);
            input_ids.extend(onehot_base..onehot_base + spec.n_onehot);
        }
        let nodes: Vec<GateNode> = layer
            .gates()
            .into_iter()
            .zip(layer.links())
            .map(|(gate, (a, b))| GateNode {
                gate,
                a: input_ids[a],
                b: input_ids[b],
            })
            .collect();
        prev_ids = (next_id..next_id + nodes.len()).collect();
        next_id += nodes.len();
        layers.push(nodes);
    }
    let sum = &params.sum;
    let sum_wiring = (0..sum.logits.rows)
        .map(|j| (0..sum.logits.cols).map(|c| sum.wire(j, c)).collect())
        .collect();
    DiscreteNetwork {
        n_continuous: spec.n_continuous,
        n_onehot: spec.n_onehot,
        n_classes: spec.n_classes,
        concat_mode: spec.concat_mode,
        thresholds,
        layers,
        sum_wiring,
    }
}

impl DiscreteNetwork {
    pub fn n_inputs(&self) -> usize {
        self.thresholds.len() + self.n_onehot
    }

    pub fn n_nodes(&self) -> usize {
        self.n_inputs() + self.layers.iter().map(Vec::len).sum::<usize>()
    }

    /// Id of the first node of logic layer `layer`.
    pub fn layer_offset(&self, layer: usize) -> usize {
        self.n_inputs() + self.layers[..layer].iter().map(Vec::len).sum::<usize>()
    }

    /// Node ids feeding the sum layer.
    pub fn output_ids(&self) -> std::ops::Range<usize> {
        match self.layers.last() {
            Some(last) => {
                let start = self.layer_offset(self.layers.len() - 1);
                start..start + last.len()
            }
            None => 0..0,
        }
    }

    /// Checks id ranges, acyclicity and shapes.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DlnError::Config(m));
        for (i, t) in self.thresholds.iter().enumerate() {
            if t.feature >= self.n_continuous || !(-1..=1).contains(&t.sign) || !t.bias.is_finite() {
                return bad(format!("threshold {i} is invalid"));
            }
        }
        let mut id = self.n_inputs();
        for (l, layer) in self.layers.iter().enumerate() {
            let start = id;
            for (i, node) in layer.iter().enumerate() {
                if node.a >= start || node.b >= start {
                    return bad(format!("layer {l} neuron {i} reads a node that is not earlier"));
                }
                id += 1;
            }
        }
        let width = self.output_ids().len();
        if self.sum_wiring.len() != width || self.sum_wiring.iter().any(|r| r.len() != self.n_classes) {
            return bad(format!("sum wiring must be {width} x {}", self.n_classes));
        }
        Ok(())
    }

    /// Values of every node given the input bits (thresholds then one-hot).
    pub fn node_values(&self, inputs: &[bool]) -> Vec<bool> {
        let mut values = Vec::with_capacity(self.n_nodes());
        values.extend_from_slice(inputs);
        for layer in &self.layers {
            let start = values.len();
            for node in layer {
                let v = hard_logic(node.gate, values[node.a], values[node.b]);
                values.push(v);
            }
            debug_assert_eq!(values.len(), start + layer.len());
        }
        values
    }

    /// Class scores from input bits.
    pub fn scores_from_inputs(&self, inputs: &[bool]) -> Vec<u32> {
        let values = self.node_values(inputs);
        let mut scores = vec![0u32; self.n_classes];
        for (row, id) in self.sum_wiring.iter().zip(self.output_ids()) {
            if values[id] {
                for (s, &w) in scores.iter_mut().zip(row) {
                    *s += w as u32;
                }
            }
        }
        scores
    }

    /// Input bits of a preprocessed sample.
    pub fn binarize(&self, sample: Sample<'_>) -> Vec<bool> {
        let mut bits: Vec<bool> = self
            .thresholds
            .iter()
            .map(|t| t.fires(sample.continuous[t.feature]))
            .collect();
        bits.extend(sample.onehot.iter().map(|&b| b != 0));
        bits
    }

    /// Predicted label (smallest index on ties) and integer class scores.
    pub fn evaluate(&self, sample: Sample<'_>) -> (usize, Vec<u32>) {
        let scores = self.scores_from_inputs(&self.binarize(sample));
        (argmax(&scores), scores)
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<usize>> {
        if data.n_continuous() != self.n_continuous || data.n_onehot() != self.n_onehot {
            return Err(DlnError::Data(format!(
                "dataset has {} continuous / {} one-hot inputs, circuit expects {} / {}",
                data.n_continuous(),
                data.n_onehot(),
                self.n_continuous,
                self.n_onehot
            )));
        }
        Ok((0..data.len())
            .into_par_iter()
            .map(|i| self.evaluate(data.sample(i)).0)
            .collect())
    }

    pub fn n_wires(&self) -> usize {
        self.sum_wiring.iter().flatten().filter(|&&w| w).count()
    }

    /// Operation counts at `bits`-bit precision. Comparisons, wire additions
    /// and argmax comparisons each price as one `bits`-bit adder.
    pub fn count_ops(&self, bits: u32) -> Result<OpCount> {
        if bits < 1 {
            return Err(DlnError::InvalidArgument("bit width must be at least 1".into()));
        }
        let wires = self.n_wires() as u64;
        let high_level = HighLevelOps {
            comparisons: self.thresholds.len() as u64,
            logic_ops: self.layers.iter().map(|l| l.len() as u64).sum(),
            additions: wires,
            argmax_comparisons: if wires > 0 { self.n_classes.saturating_sub(1) as u64 } else { 0 },
        };
        let gates: u64 = self.layers.iter().flatten().map(|n| gate_cost(n.gate)).sum();
        let arithmetic = high_level.comparisons + high_level.additions + high_level.argmax_comparisons;
        Ok(OpCount {
            bit_width: bits,
            high_level,
            gate_level: arithmetic * adder_cost(bits) + gates,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Envelope {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            network: self.clone(),
        })
        .expect("circuit serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(text)?;
        if env.format != FORMAT || env.version != FORMAT_VERSION {
            return Err(DlnError::Config(format!(
                "unsupported circuit format {} v{}",
                env.format, env.version
            )));
        }
        env.network.validate()?;
        Ok(env.network)
    }
}
