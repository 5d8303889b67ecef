use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binner::{fit_tree_bins, pad_edges};
use crate::data::Dataset;
use crate::error::{DlnError, Result};
use crate::logic::{gate_subspace_mask, GateId};

use super::spec::{ConcatMode, NetworkSpec};

/// Logit value for entries excluded from the search space. Softmax treats it
/// as exact zero probability and it is never updated or argmax-selected.
pub const MASKED: f64 = f64::MIN;

#[inline]
pub fn is_masked(v: f64) -> bool {
    v == MASKED
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

/// Index of the largest unmasked entry; ties go to the smallest index.
pub fn masked_argmax(row: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in row.iter().enumerate() {
        if is_masked(v) {
            continue;
        }
        if best.is_none_or(|b| v > row[b]) {
            best = Some(i);
        }
    }
    best
}

/// Softmax over unmasked entries; masked entries get exactly zero.
pub fn masked_softmax(row: &[f64]) -> Vec<f64> {
    let max = row
        .iter()
        .copied()
        .filter(|v| !is_masked(*v))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row
        .iter()
        .map(|&v| if is_masked(v) { 0.0 } else { (v - max).exp() })
        .collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Heaviside step with `H(0) = 1`.
#[inline]
pub fn heaviside(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Learned binarization of continuous features: neuron `i` computes
/// `step(slope[i] * (x[source_feature[i]] - bias[i]))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub bias: Vec<f64>,
    pub slope: Vec<f64>,
    pub source_feature: Vec<usize>,
}

impl ThresholdParams {
    pub fn len(&self) -> usize {
        self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bias.is_empty()
    }
}

/// One layer of two-input gate neurons.
///
/// `gate_logits` is `[out_dim × 16]`; `link_a`/`link_b` are `[out_dim × in_dim]`.
/// Entries equal to [`MASKED`] are outside the neuron's search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogicParams {
    pub gate_logits: Matrix,
    pub link_a: Matrix,
    pub link_b: Matrix,
}

impl LogicParams {
    pub fn in_dim(&self) -> usize {
        self.link_a.cols
    }

    pub fn out_dim(&self) -> usize {
        self.gate_logits.rows
    }

    /// Gates with a finite logit in row `neuron`.
    pub fn allowed_gates(&self, neuron: usize) -> Vec<GateId> {
        self.gate_logits
            .row(neuron)
            .iter()
            .enumerate()
            .filter(|(_, v)| !is_masked(**v))
            .map(|(k, _)| GateId::new(k as u8).expect("16 columns"))
            .collect()
    }

    pub fn allowed_links(&self, neuron: usize) -> (Vec<usize>, Vec<usize>) {
        let pick = |m: &Matrix| {
            m.row(neuron)
                .iter()
                .enumerate()
                .filter(|(_, v)| !is_masked(**v))
                .map(|(i, _)| i)
                .collect()
        };
        (pick(&self.link_a), pick(&self.link_b))
    }

    /// Quantized gate of each neuron.
    pub fn gates(&self) -> Vec<GateId> {
        (0..self.out_dim())
            .map(|i| GateId::new(masked_argmax(self.gate_logits.row(i)).expect("validated") as u8).expect("16 columns"))
            .collect()
    }

    /// Quantized `(a, b)` input indices of each neuron.
    pub fn links(&self) -> Vec<(usize, usize)> {
        (0..self.out_dim())
            .map(|i| {
                (
                    masked_argmax(self.link_a.row(i)).expect("validated"),
                    masked_argmax(self.link_b.row(i)).expect("validated"),
                )
            })
            .collect()
    }
}

/// Output aggregation: `logits[c] = Σ_j w(S[j,c]) x[j] / logit_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SumParams {
    /// `[in_dim × n_classes]`.
    pub logits: Matrix,
    pub threshold: f64,
    pub logit_scale: f64,
}

impl SumParams {
    /// Quantized wire `j -> c`: `sigmoid(S[j,c]) >= threshold`.
    #[inline]
    pub fn wire(&self, j: usize, c: usize) -> bool {
        sigmoid(self.logits.get(j, c)) >= self.threshold
    }
}

/// All trainable tensors of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    /// Group 0 feeds the first logic layer; further groups (per-layer
    /// concatenation) feed logic layers 1.. in order.
    pub thresholds: Vec<ThresholdParams>,
    pub logic: Vec<LogicParams>,
    pub sum: SumParams,
}

/// Which parameter tensor a slice belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TensorKind {
    Bias,
    Slope,
    GateLogits,
    LinkA,
    LinkB,
    SumLogits,
}

impl NetworkParams {
    /// Initializes parameters for `spec`: biases from per-feature tree bins on
    /// `train`, slopes at `spec.slope_init`, logits `N(0, 0.1)` on unmasked
    /// entries, gate masks from the priority list, link masks sampled per
    /// neuron and input slot.
    pub fn init(spec: &NetworkSpec, train: &Dataset, seed: u64) -> Result<Self> {
        spec.validate()?;
        if train.n_continuous() != spec.n_continuous || train.n_onehot() != spec.n_onehot {
            return Err(DlnError::Config(format!(
                "dataset has {} continuous / {} one-hot inputs, network expects {} / {}",
                train.n_continuous(),
                train.n_onehot(),
                spec.n_continuous,
                spec.n_onehot
            )));
        }
        let npf = spec.neurons_per_feature;
        let mut bias = Vec::with_capacity(spec.n_threshold_neurons());
        for f in 0..spec.n_continuous {
            let column = train.continuous_column(f);
            let edges = fit_tree_bins(&column, &train.labels, npf + 1);
            bias.extend(pad_edges(&edges, &column, npf).0);
        }
        Ok(Self::init_with_biases(spec, bias, seed)?)
    }

    /// Like [`NetworkParams::init`] but with caller-provided biases for the
    /// threshold neurons (feature-major, `neurons_per_feature` per feature).
    pub fn init_with_biases(spec: &NetworkSpec, bias: Vec<f64>, seed: u64) -> Result<Self> {
        spec.validate()?;
        if bias.len() != spec.n_threshold_neurons() {
            return Err(DlnError::Config(format!(
                "expected {} threshold biases, got {}",
                spec.n_threshold_neurons(),
                bias.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let source_feature: Vec<usize> = (0..spec.n_continuous)
            .flat_map(|f| std::iter::repeat_n(f, spec.neurons_per_feature))
            .collect();
        let group = ThresholdParams {
            bias: bias.clone(),
            slope: vec![spec.slope_init; bias.len()],
            source_feature,
        };
        let thresholds = vec![group; spec.n_threshold_groups()];

        let gate_allowed = gate_subspace_mask(spec.gate_subspace_size)?;
        let mut logic = Vec::with_capacity(spec.layer_widths.len());
        for layer in 0..spec.layer_widths.len() {
            let in_dim = spec.logic_input_dim(layer);
            let out_dim = spec.layer_widths[layer];
            let mut gate_logits = Matrix::filled(out_dim, 16, MASKED);
            for i in 0..out_dim {
                for g in &gate_allowed {
                    gate_logits.set(i, g.index(), normal.sample(&mut rng));
                }
            }
            let link = |rng: &mut ChaCha8Rng| {
                let mut m = Matrix::filled(out_dim, in_dim, MASKED);
                for i in 0..out_dim {
                    let candidates: Vec<usize> = if in_dim <= spec.link_subspace_size {
                        (0..in_dim).collect()
                    } else {
                        let mut c = sample(rng, in_dim, spec.link_subspace_size).into_vec();
                        c.sort_unstable();
                        c
                    };
                    for j in candidates {
                        m.set(i, j, normal.sample(rng));
                    }
                }
                m
            };
            let link_a = link(&mut rng);
            let link_b = link(&mut rng);
            logic.push(LogicParams {
                gate_logits,
                link_a,
                link_b,
            });
        }

        let last = *spec.layer_widths.last().expect("validated");
        let mut sum_logits = Matrix::zeros(last, spec.n_classes);
        for v in &mut sum_logits.data {
            *v = normal.sample(&mut rng);
        }
        let params = NetworkParams {
            thresholds,
            logic,
            sum: SumParams {
                logits: sum_logits,
                threshold: spec.sum_threshold,
                logit_scale: spec.resolved_logit_scale(),
            },
        };
        params.validate(spec)?;
        Ok(params)
    }

    /// Checks shapes against `spec` and that no row is fully masked.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let bad = |msg: String| Err(DlnError::Config(msg));
        if self.thresholds.len() != spec.n_threshold_groups() {
            return bad(format!(
                "expected {} threshold groups, found {}",
                spec.n_threshold_groups(),
                self.thresholds.len()
            ));
        }
        for (g, t) in self.thresholds.iter().enumerate() {
            if t.bias.len() != spec.n_threshold_neurons()
                || t.slope.len() != t.bias.len()
                || t.source_feature.len() != t.bias.len()
            {
                return bad(format!("threshold group {g} has inconsistent sizes"));
            }
            if t.source_feature.iter().any(|&f| f >= spec.n_continuous) {
                return bad(format!("threshold group {g} references a missing feature"));
            }
            for f in 0..spec.n_continuous {
                if t.source_feature.iter().filter(|&&s| s == f).count() != spec.neurons_per_feature {
                    return bad(format!("threshold group {g}: feature {f} is not covered exactly {} times", spec.neurons_per_feature));
                }
            }
        }
        if self.logic.len() != spec.layer_widths.len() {
            return bad(format!(
                "expected {} logic layers, found {}",
                spec.layer_widths.len(),
                self.logic.len()
            ));
        }
        for (l, layer) in self.logic.iter().enumerate() {
            let (in_dim, out_dim) = (spec.logic_input_dim(l), spec.layer_widths[l]);
            if layer.gate_logits.rows != out_dim
                || layer.gate_logits.cols != 16
                || layer.link_a.rows != out_dim
                || layer.link_b.rows != out_dim
                || layer.link_a.cols != in_dim
                || layer.link_b.cols != in_dim
            {
                return bad(format!("logic layer {l} has shape mismatching {in_dim} -> {out_dim}"));
            }
            for i in 0..out_dim {
                for (name, m) in [("gate", &layer.gate_logits), ("link a", &layer.link_a), ("link b", &layer.link_b)] {
                    if masked_argmax(m.row(i)).is_none() {
                        return bad(format!("logic layer {l} neuron {i}: every {name} logit is masked"));
                    }
                }
            }
        }
        let last = *spec.layer_widths.last().expect("validated");
        if self.sum.logits.rows != last || self.sum.logits.cols != spec.n_classes {
            return bad(format!("sum layer must be {last} x {}", spec.n_classes));
        }
        if !(self.sum.threshold > 0.0 && self.sum.threshold < 1.0) || !(self.sum.logit_scale > 0.0) {
            return bad("sum threshold must be in (0,1) and logit scale positive".into());
        }
        Ok(())
    }

    /// Same shapes, all zeros (masks not preserved).
    pub fn zeros_like(&self) -> NetworkParams {
        NetworkParams {
            thresholds: self
                .thresholds
                .iter()
                .map(|t| ThresholdParams {
                    bias: vec![0.0; t.bias.len()],
                    slope: vec![0.0; t.slope.len()],
                    source_feature: t.source_feature.clone(),
                })
                .collect(),
            logic: self
                .logic
                .iter()
                .map(|l| LogicParams {
                    gate_logits: Matrix::zeros(l.gate_logits.rows, l.gate_logits.cols),
                    link_a: Matrix::zeros(l.link_a.rows, l.link_a.cols),
                    link_b: Matrix::zeros(l.link_b.rows, l.link_b.cols),
                })
                .collect(),
            sum: SumParams {
                logits: Matrix::zeros(self.sum.logits.rows, self.sum.logits.cols),
                threshold: self.sum.threshold,
                logit_scale: self.sum.logit_scale,
            },
        }
    }

    /// Every tensor as a mutable slice, in a fixed order.
    pub fn tensors_mut(&mut self) -> Vec<(TensorKind, &mut [f64])> {
        let mut out: Vec<(TensorKind, &mut [f64])> = Vec::new();
        for t in &mut self.thresholds {
            out.push((TensorKind::Bias, &mut t.bias));
            out.push((TensorKind::Slope, &mut t.slope));
        }
        for l in &mut self.logic {
            out.push((TensorKind::GateLogits, &mut l.gate_logits.data));
            out.push((TensorKind::LinkA, &mut l.link_a.data));
            out.push((TensorKind::LinkB, &mut l.link_b.data));
        }
        out.push((TensorKind::SumLogits, &mut self.sum.logits.data));
        out
    }

    /// Every tensor as a slice, in the same order as [`NetworkParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<(TensorKind, &[f64])> {
        let mut out: Vec<(TensorKind, &[f64])> = Vec::new();
        for t in &self.thresholds {
            out.push((TensorKind::Bias, &t.bias));
            out.push((TensorKind::Slope, &t.slope));
        }
        for l in &self.logic {
            out.push((TensorKind::GateLogits, &l.gate_logits.data));
            out.push((TensorKind::LinkA, &l.link_a.data));
            out.push((TensorKind::LinkB, &l.link_b.data));
        }
        out.push((TensorKind::SumLogits, &self.sum.logits.data));
        out
    }

    /// Collapses every relaxation onto its discrete choice: one finite logit
    /// per gate/link row, saturated sum logits and slopes. Running any mode on
    /// the result reproduces the quantized circuit.
    pub fn quantized(&self) -> NetworkParams {
        const SATURATE: f64 = 1e6;
        let mut q = self.clone();
        for t in &mut q.thresholds {
            for s in &mut t.slope {
                *s = if *s > 0.0 {
                    SATURATE
                } else if *s < 0.0 {
                    -SATURATE
                } else {
                    0.0
                };
            }
        }
        for layer in &mut q.logic {
            for m in [&mut layer.gate_logits, &mut layer.link_a, &mut layer.link_b] {
                for r in 0..m.rows {
                    let row = m.row_mut(r);
                    let keep = masked_argmax(row).expect("validated");
                    for (i, v) in row.iter_mut().enumerate() {
                        *v = if i == keep { 0.0 } else { MASKED };
                    }
                }
            }
        }
        let sum = q.sum.clone();
        for j in 0..sum.logits.rows {
            for c in 0..sum.logits.cols {
                q.sum.logits.set(j, c, if sum.wire(j, c) { SATURATE } else { -SATURATE });
            }
        }
        q
    }
}

pub(crate) fn concat_group(mode: ConcatMode, layer: usize) -> Option<usize> {
    match (mode, layer) {
        (_, 0) => Some(0),
        (ConcatMode::None, _) => None,
        (ConcatMode::SharedThreshold, _) => Some(0),
        (ConcatMode::PerLayerThreshold, l) => Some(l),
    }
}
