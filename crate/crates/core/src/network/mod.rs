//! Differentiable logic network: threshold layer, logic layers, sum layer.
//!
//! Each layer has a relaxed and a quantized form. [`PhaseMode`] selects which
//! parameters run relaxed: phase I relaxes neuron functions (threshold biases
//! and slopes, gate choice), phase II relaxes connections (link choice, sum
//! wires), inference quantizes everything.

mod layers;
mod params;
mod spec;

pub use params::{
    heaviside, is_masked, masked_argmax, masked_softmax, sigmoid, LogicParams, Matrix, NetworkParams, SumParams,
    TensorKind, ThresholdParams, MASKED,
};
pub use spec::{ConcatMode, NetworkSpec, PhaseMode, SteFlags};

pub use layers::fires;
pub(crate) use layers::{PreparedLogic, PreparedSum};
pub(crate) use params::concat_group;

use crate::data::{Dataset, Sample};
use crate::error::{DlnError, Result};

/// A network architecture together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct Trace {
    /// Input vector of each logic layer.
    pub layer_inputs: Vec<Vec<f64>>,
    /// Output of the last logic layer.
    pub last: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Softmax/argmax state of a network, computed once and reused across samples.
pub struct PreparedNetwork<'a> {
    pub(crate) net: &'a Network,
    pub(crate) logic: Vec<PreparedLogic>,
    pub(crate) sum: PreparedSum,
}

impl Network {
    pub fn new(spec: NetworkSpec, params: NetworkParams) -> Result<Self> {
        spec.validate()?;
        params.validate(&spec)?;
        Ok(Network { spec, params })
    }

    /// Fresh network for `train` with parameters initialized from `seed`.
    pub fn init(spec: NetworkSpec, train: &Dataset, seed: u64) -> Result<Self> {
        let params = NetworkParams::init(&spec, train, seed)?;
        Network::new(spec, params)
    }

    pub fn prepare(&self) -> PreparedNetwork<'_> {
        PreparedNetwork {
            net: self,
            logic: self.params.logic.iter().map(PreparedLogic::new).collect(),
            sum: PreparedSum::new(&self.params.sum),
        }
    }

    /// Class logits of one sample.
    pub fn forward(&self, sample: Sample<'_>, mode: PhaseMode) -> Result<Vec<f64>> {
        self.check_sample(sample)?;
        Ok(self.prepare().forward(sample, mode))
    }

    /// Predicted class (argmax of logits, smallest index on ties).
    pub fn predict(&self, sample: Sample<'_>, mode: PhaseMode) -> Result<usize> {
        Ok(argmax(&self.forward(sample, mode)?))
    }

    /// Predictions for every sample of `data`.
    pub fn predict_dataset(&self, data: &Dataset, mode: PhaseMode) -> Result<Vec<usize>> {
        self.check_dataset(data)?;
        let prepared = self.prepare();
        Ok((0..data.len()).map(|i| prepared.predict(data.sample(i), mode)).collect())
    }

    /// Network with every parameter collapsed to its discrete choice.
    pub fn quantized(&self) -> Network {
        Network {
            spec: self.spec.clone(),
            params: self.params.quantized(),
        }
    }

    pub fn check_sample(&self, sample: Sample<'_>) -> Result<()> {
        if sample.continuous.len() != self.spec.n_continuous || sample.onehot.len() != self.spec.n_onehot {
            return Err(DlnError::Data(format!(
                "sample has {} continuous / {} one-hot values, network expects {} / {}",
                sample.continuous.len(),
                sample.onehot.len(),
                self.spec.n_continuous,
                self.spec.n_onehot
            )));
        }
        Ok(())
    }

    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.n_continuous() != self.spec.n_continuous
            || data.n_onehot() != self.spec.n_onehot
            || data.n_classes() != self.spec.n_classes
        {
            return Err(DlnError::Data(format!(
                "dataset layout ({} continuous, {} one-hot, {} classes) does not match the network ({}, {}, {})",
                data.n_continuous(),
                data.n_onehot(),
                data.n_classes(),
                self.spec.n_continuous,
                self.spec.n_onehot,
                self.spec.n_classes
            )));
        }
        Ok(())
    }
}

impl PreparedNetwork<'_> {
    pub(crate) fn trace(&self, sample: Sample<'_>, mode: PhaseMode) -> Trace {
        let spec = &self.net.spec;
        let params = &self.net.params;
        let ste = spec.ste;
        let thresholds: Vec<Vec<f64>> = params
            .thresholds
            .iter()
            .map(|t| t.forward(sample.continuous, mode, ste.threshold))
            .collect();
        let onehot: Vec<f64> = sample.onehot.iter().map(|&b| b as f64).collect();
        let mut layer_inputs = Vec::with_capacity(self.logic.len());
        let mut prev: Vec<f64> = Vec::new();
        for (l, layer) in self.logic.iter().enumerate() {
            let mut input = Vec::with_capacity(spec.logic_input_dim(l));
            if l > 0 {
                input.extend_from_slice(&prev);
            }
            if let Some(g) = concat_group(spec.concat_mode, l) {
                input.extend_from_slice(&thresholds[g]);
                input.extend_from_slice(&onehot);
            }
            prev = match mode {
                PhaseMode::PhaseI => layer.forward_phase1(&input, ste.gate),
                PhaseMode::PhaseII => layer.forward_phase2(&input, ste.link),
                PhaseMode::Inference => {
                    let bits: Vec<bool> = input.iter().map(|&v| v >= 0.5).collect();
                    layer.forward_inference(&bits).into_iter().map(|b| b as u8 as f64).collect()
                }
            };
            layer_inputs.push(input);
        }
        let logits = self.sum.forward(&prev, mode, ste.sum);
        Trace {
            layer_inputs,
            last: prev,
            logits,
        }
    }

    /// Class logits of one sample. In inference mode this runs the boolean
    /// circuit and divides the integer class scores by the logit scale.
    pub fn forward(&self, sample: Sample<'_>, mode: PhaseMode) -> Vec<f64> {
        if mode == PhaseMode::Inference {
            let scale = self.sum.logit_scale;
            return self.scores(sample).into_iter().map(|s| s as f64 / scale).collect();
        }
        self.trace(sample, mode).logits
    }

    pub fn predict(&self, sample: Sample<'_>, mode: PhaseMode) -> usize {
        argmax(&self.forward(sample, mode))
    }

    /// Integer class scores of the quantized circuit.
    pub fn scores(&self, sample: Sample<'_>) -> Vec<u32> {
        let spec = &self.net.spec;
        let thresholds: Vec<Vec<bool>> = self
            .net
            .params
            .thresholds
            .iter()
            .map(|t| t.forward_bits(sample.continuous))
            .collect();
        let onehot: Vec<bool> = sample.onehot.iter().map(|&b| b != 0).collect();
        let mut prev: Vec<bool> = Vec::new();
        for (l, layer) in self.logic.iter().enumerate() {
            let mut input = Vec::with_capacity(spec.logic_input_dim(l));
            if l > 0 {
                input.extend_from_slice(&prev);
            }
            if let Some(g) = concat_group(spec.concat_mode, l) {
                input.extend_from_slice(&thresholds[g]);
                input.extend_from_slice(&onehot);
            }
            prev = layer.forward_inference(&input);
        }
        self.sum.scores(&prev)
    }

    /// Backpropagates `d_logits` through `trace`, accumulating gradients of
    /// the parameters that are live in `mode` into `grads`.
    pub(crate) fn backward(
        &self,
        sample: Sample<'_>,
        trace: &Trace,
        d_logits: &[f64],
        mode: PhaseMode,
        grads: &mut NetworkParams,
    ) {
        let spec = &self.net.spec;
        let params = &self.net.params;
        let live_s = mode == PhaseMode::PhaseII;
        let mut d_prev = self.sum.backward(
            &trace.last,
            d_logits,
            mode,
            live_s.then_some(grads.sum.logits.data.as_mut_slice()),
        );
        let n_thr = spec.n_threshold_neurons();
        let mut d_thresholds: Vec<Vec<f64>> = params.thresholds.iter().map(|t| vec![0.0; t.len()]).collect();
        for l in (0..self.logic.len()).rev() {
            let input = &trace.layer_inputs[l];
            let layer_grads = &mut grads.logic[l];
            let d_input = match mode {
                PhaseMode::PhaseI => {
                    self.logic[l].backward_phase1(input, &d_prev, Some(layer_grads.gate_logits.data.as_mut_slice()))
                }
                PhaseMode::PhaseII => self.logic[l].backward_phase2(
                    input,
                    &d_prev,
                    spec.ste.link,
                    Some((layer_grads.link_a.data.as_mut_slice(), layer_grads.link_b.data.as_mut_slice())),
                ),
                PhaseMode::Inference => return,
            };
            let offset = if l > 0 { spec.layer_widths[l - 1] } else { 0 };
            if let Some(g) = concat_group(spec.concat_mode, l) {
                for (acc, d) in d_thresholds[g].iter_mut().zip(&d_input[offset..offset + n_thr]) {
                    *acc += d;
                }
            }
            d_prev = d_input[..offset].to_vec();
        }
        if mode == PhaseMode::PhaseI && spec.threshold_trainable {
            for (g, t) in params.thresholds.iter().enumerate() {
                let gt = &mut grads.thresholds[g];
                t.backward(sample.continuous, &d_thresholds[g], &mut gt.bias, &mut gt.slope);
            }
        }
    }
}

#[cfg(test)]
mod tests;
