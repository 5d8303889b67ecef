//! Per-layer forward and backward passes for every phase mode.

use crate::logic::{hard_logic, soft_logic, soft_logic_grad, GateId};

use super::params::{masked_argmax, masked_softmax, sigmoid, LogicParams, SumParams, ThresholdParams};
use super::spec::PhaseMode;

/// `step(slope * d)` decided from signs alone, so tiny products cannot
/// underflow across zero.
#[inline]
pub fn fires(slope: f64, d: f64) -> bool {
    if slope > 0.0 {
        d >= 0.0
    } else if slope < 0.0 {
        d <= 0.0
    } else {
        true
    }
}

impl ThresholdParams {
    /// Outputs in `[0,1]`: sigmoid in phase I (step value under STE), step otherwise.
    pub fn forward(&self, x: &[f64], mode: PhaseMode, ste: bool) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let d = x[self.source_feature[i]] - self.bias[i];
                match mode {
                    PhaseMode::PhaseI if !ste => sigmoid(self.slope[i] * d),
                    _ => fires(self.slope[i], d) as u8 as f64,
                }
            })
            .collect()
    }

    /// Binarized outputs (inference).
    pub fn forward_bits(&self, x: &[f64]) -> Vec<bool> {
        (0..self.len())
            .map(|i| fires(self.slope[i], x[self.source_feature[i]] - self.bias[i]))
            .collect()
    }

    /// Accumulates phase-I gradients of bias and slope given output gradients.
    pub(crate) fn backward(&self, x: &[f64], d_out: &[f64], d_bias: &mut [f64], d_slope: &mut [f64]) {
        for i in 0..self.len() {
            if d_out[i] == 0.0 {
                continue;
            }
            let diff = x[self.source_feature[i]] - self.bias[i];
            let g = sigmoid(self.slope[i] * diff);
            let dz = d_out[i] * g * (1.0 - g);
            d_bias[i] -= dz * self.slope[i];
            d_slope[i] += dz * diff;
        }
    }
}

/// Softmax probabilities and argmax choices of a logic layer, computed once
/// per parameter state.
#[derive(Clone, Debug)]
pub(crate) struct PreparedLogic {
    pub gate: Vec<GateId>,
    /// `(gate, probability)` over unmasked gates.
    pub gate_probs: Vec<Vec<(GateId, f64)>>,
    pub link_a: Vec<usize>,
    pub link_b: Vec<usize>,
    /// `(input, probability)` over unmasked links.
    pub link_a_probs: Vec<Vec<(usize, f64)>>,
    pub link_b_probs: Vec<Vec<(usize, f64)>>,
}

fn sparse(probs: Vec<f64>, row: &[f64]) -> Vec<(usize, f64)> {
    probs
        .into_iter()
        .enumerate()
        .filter(|&(j, _)| !super::params::is_masked(row[j]))
        .collect()
}

impl PreparedLogic {
    pub fn new(p: &LogicParams) -> Self {
        let n = p.out_dim();
        let mut out = PreparedLogic {
            gate: Vec::with_capacity(n),
            gate_probs: Vec::with_capacity(n),
            link_a: Vec::with_capacity(n),
            link_b: Vec::with_capacity(n),
            link_a_probs: Vec::with_capacity(n),
            link_b_probs: Vec::with_capacity(n),
        };
        for i in 0..n {
            let w = p.gate_logits.row(i);
            out.gate.push(GateId::new(masked_argmax(w).expect("validated") as u8).expect("16 columns"));
            out.gate_probs.push(
                sparse(masked_softmax(w), w)
                    .into_iter()
                    .map(|(k, pr)| (GateId::new(k as u8).expect("16 columns"), pr))
                    .collect(),
            );
            let (u, v) = (p.link_a.row(i), p.link_b.row(i));
            out.link_a.push(masked_argmax(u).expect("validated"));
            out.link_b.push(masked_argmax(v).expect("validated"));
            out.link_a_probs.push(sparse(masked_softmax(u), u));
            out.link_b_probs.push(sparse(masked_softmax(v), v));
        }
        out
    }

    /// Phase I: quantized links, softmax mixture over gates.
    pub fn forward_phase1(&self, x: &[f64], ste: bool) -> Vec<f64> {
        (0..self.gate.len())
            .map(|i| {
                let (a, b) = (x[self.link_a[i]], x[self.link_b[i]]);
                if ste {
                    soft_logic(self.gate[i], a, b)
                } else {
                    self.gate_probs[i].iter().map(|&(k, p)| p * soft_logic(k, a, b)).sum()
                }
            })
            .collect()
    }

    fn mixed_input(probs: &[(usize, f64)], x: &[f64]) -> f64 {
        probs.iter().map(|&(j, p)| p * x[j]).sum()
    }

    /// The `(a, b)` values a phase-II neuron feeds its gate.
    fn phase2_inputs(&self, i: usize, x: &[f64], ste: bool) -> (f64, f64) {
        if ste {
            (x[self.link_a[i]], x[self.link_b[i]])
        } else {
            (
                Self::mixed_input(&self.link_a_probs[i], x),
                Self::mixed_input(&self.link_b_probs[i], x),
            )
        }
    }

    /// Phase II: quantized gate, softmax mixture over inputs.
    pub fn forward_phase2(&self, x: &[f64], ste: bool) -> Vec<f64> {
        (0..self.gate.len())
            .map(|i| {
                let (a, b) = self.phase2_inputs(i, x, ste);
                soft_logic(self.gate[i], a, b)
            })
            .collect()
    }

    pub fn forward_inference(&self, x: &[bool]) -> Vec<bool> {
        (0..self.gate.len())
            .map(|i| hard_logic(self.gate[i], x[self.link_a[i]], x[self.link_b[i]]))
            .collect()
    }

    /// Phase-I backward. Accumulates gate-logit gradients into `d_w`
    /// (`[out × 16]`) and returns input gradients.
    pub fn backward_phase1(&self, x: &[f64], d_out: &[f64], d_w: Option<&mut [f64]>) -> Vec<f64> {
        let mut d_x = vec![0.0; x.len()];
        let mut d_w = d_w;
        for i in 0..self.gate.len() {
            let dy = d_out[i];
            if dy == 0.0 {
                continue;
            }
            let (a, b) = (x[self.link_a[i]], x[self.link_b[i]]);
            let mix: f64 = self.gate_probs[i].iter().map(|&(k, p)| p * soft_logic(k, a, b)).sum();
            let mut da = 0.0;
            let mut db = 0.0;
            for &(k, p) in &self.gate_probs[i] {
                let (ga, gb) = soft_logic_grad(k, a, b);
                da += p * ga;
                db += p * gb;
                if let Some(dw) = d_w.as_deref_mut() {
                    dw[i * 16 + k.index()] += dy * p * (soft_logic(k, a, b) - mix);
                }
            }
            d_x[self.link_a[i]] += dy * da;
            d_x[self.link_b[i]] += dy * db;
        }
        d_x
    }

    /// Phase-II backward. Accumulates link-logit gradients into `d_u`/`d_v`
    /// (`[out × in]`) and returns input gradients.
    pub fn backward_phase2(
        &self,
        x: &[f64],
        d_out: &[f64],
        ste: bool,
        mut d_links: Option<(&mut [f64], &mut [f64])>,
    ) -> Vec<f64> {
        let in_dim = x.len();
        let mut d_x = vec![0.0; in_dim];
        for i in 0..self.gate.len() {
            let dy = d_out[i];
            if dy == 0.0 {
                continue;
            }
            let (a, b) = self.phase2_inputs(i, x, ste);
            let (ga, gb) = soft_logic_grad(self.gate[i], a, b);
            let (da, db) = (dy * ga, dy * gb);
            let soft_a = Self::mixed_input(&self.link_a_probs[i], x);
            let soft_b = Self::mixed_input(&self.link_b_probs[i], x);
            for &(j, p) in &self.link_a_probs[i] {
                d_x[j] += da * p;
                if let Some((du, _)) = d_links.as_mut() {
                    du[i * in_dim + j] += da * p * (x[j] - soft_a);
                }
            }
            for &(j, p) in &self.link_b_probs[i] {
                d_x[j] += db * p;
                if let Some((_, dv)) = d_links.as_mut() {
                    dv[i * in_dim + j] += db * p * (x[j] - soft_b);
                }
            }
        }
        d_x
    }
}

impl LogicParams {
    /// Phase-I forward of this layer alone.
    pub fn forward_phase1(&self, x: &[f64], ste: bool) -> Vec<f64> {
        PreparedLogic::new(self).forward_phase1(x, ste)
    }

    /// Phase-II forward of this layer alone.
    pub fn forward_phase2(&self, x: &[f64], ste: bool) -> Vec<f64> {
        PreparedLogic::new(self).forward_phase2(x, ste)
    }

    /// Pure boolean evaluation with argmax gates and links.
    pub fn forward_inference(&self, x: &[bool]) -> Vec<bool> {
        PreparedLogic::new(self).forward_inference(x)
    }
}

/// Wire probabilities and quantized wires of the sum layer.
#[derive(Clone, Debug)]
pub(crate) struct PreparedSum {
    pub n_classes: usize,
    /// `[in × C]` sigmoid of the logits.
    pub prob: Vec<f64>,
    /// `[in × C]` quantized wires.
    pub wire: Vec<bool>,
    pub logit_scale: f64,
}

impl PreparedSum {
    pub fn new(p: &SumParams) -> Self {
        let prob: Vec<f64> = p.logits.data.iter().map(|&s| sigmoid(s)).collect();
        let wire = prob.iter().map(|&q| q >= p.threshold).collect();
        PreparedSum {
            n_classes: p.logits.cols,
            prob,
            wire,
            logit_scale: p.logit_scale,
        }
    }

    /// Class logits (sums divided by the logit scale).
    pub fn forward(&self, x: &[f64], mode: PhaseMode, ste: bool) -> Vec<f64> {
        let c = self.n_classes;
        let mut out = vec![0.0; c];
        let soft = mode == PhaseMode::PhaseII && !ste;
        for (j, &xj) in x.iter().enumerate() {
            for k in 0..c {
                let w = if soft {
                    self.prob[j * c + k]
                } else if self.wire[j * c + k] {
                    1.0
                } else {
                    0.0
                };
                out[k] += w * xj;
            }
        }
        for v in &mut out {
            *v /= self.logit_scale;
        }
        out
    }

    /// Integer wire sums of binary inputs.
    pub fn scores(&self, x: &[bool]) -> Vec<u32> {
        let c = self.n_classes;
        let mut out = vec![0u32; c];
        for (j, &xj) in x.iter().enumerate() {
            if xj {
                for k in 0..c {
                    out[k] += self.wire[j * c + k] as u32;
                }
            }
        }
        out
    }

    /// Backward from logit gradients. In phase II also accumulates
    /// `d_s` (`[in × C]`). Returns input gradients.
    pub fn backward(&self, x: &[f64], d_logits: &[f64], mode: PhaseMode, d_s: Option<&mut [f64]>) -> Vec<f64> {
        let c = self.n_classes;
        let scaled: Vec<f64> = d_logits.iter().map(|d| d / self.logit_scale).collect();
        let mut d_x = vec![0.0; x.len()];
        let mut d_s = d_s;
        for (j, &xj) in x.iter().enumerate() {
            for k in 0..c {
                let idx = j * c + k;
                match mode {
                    PhaseMode::PhaseII => {
                        let p = self.prob[idx];
                        d_x[j] += scaled[k] * p;
                        if let Some(ds) = d_s.as_deref_mut() {
                            ds[idx] += scaled[k] * p * (1.0 - p) * xj;
                        }
                    }
                    _ => {
                        if self.wire[idx] {
                            d_x[j] += scaled[k];
                        }
                    }
                }
            }
        }
        d_x
    }
}

impl SumParams {
    /// Class logits for this layer alone.
    pub fn forward(&self, x: &[f64], mode: PhaseMode, ste: bool) -> Vec<f64> {
        PreparedSum::new(self).forward(x, mode, ste)
    }
}
