//! Two-phase training: loss, analytic gradients, adaptive-moment updates, the
//! alternating phase schedule, and random hyperparameter search.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{classification_report, Dataset, FoldPlan};
use crate::error::{DlnError, Result};
use crate::network::{is_masked, ConcatMode, Network, NetworkParams, NetworkSpec, PhaseMode, TensorKind};

/// Optimization schedule and optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of (phase I, phase II) rounds.
    pub iterations: usize,
    pub epochs_per_phase: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Weight each sample's loss by the inverse frequency of its class.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 5,
            epochs_per_phase: 20,
            batch_size: 64,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            class_weighting: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DlnError::Config(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("moment decays must be in [0,1) and epsilon positive");
        }
        Ok(())
    }
}

/// Gradients with the same shapes as [`NetworkParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTape {
    pub grads: NetworkParams,
}

/// `weight * (logsumexp(logits) - logits[truth])`.
pub fn cross_entropy_loss(logits: &[f64], truth: usize, class_weight: f64) -> Result<f64> {
    cross_entropy_with_grad(logits, truth, class_weight).map(|(l, _)| l)
}

/// Loss and its gradient with respect to the logits.
pub fn cross_entropy_with_grad(logits: &[f64], truth: usize, class_weight: f64) -> Result<(f64, Vec<f64>)> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(DlnError::Divergence {
            batch: 0,
            checkpoint: None,
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let lse = max + total.ln();
    let loss = class_weight * (lse - logits[truth]);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(c, e)| class_weight * (e / total - if c == truth { 1.0 } else { 0.0 }))
        .collect();
    Ok((loss, grad))
}

/// Inverse-frequency class weights `n / (C * n_c)` (1 for absent classes).
pub fn class_weights(data: &Dataset, enabled: bool) -> Vec<f64> {
    let counts = data.class_counts();
    if !enabled {
        return vec![1.0; counts.len()];
    }
    let n = data.len() as f64;
    let present = counts.iter().filter(|&&c| c > 0).count().max(1) as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 1.0 } else { n / (present * c as f64) })
        .collect()
}

/// Whether a tensor receives updates in `mode`.
pub fn is_live(kind: TensorKind, mode: PhaseMode, spec: &NetworkSpec) -> bool {
    match mode {
        PhaseMode::PhaseI => match kind {
            TensorKind::Bias | TensorKind::Slope => spec.threshold_trainable,
            TensorKind::GateLogits => true,
            _ => false,
        },
        PhaseMode::PhaseII => matches!(kind, TensorKind::LinkA | TensorKind::LinkB | TensorKind::SumLogits),
        PhaseMode::Inference => false,
    }
}

fn add_into(acc: &mut NetworkParams, other: &NetworkParams) {
    let others = other.tensors();
    for ((_, a), (_, b)) in acc.tensors_mut().into_iter().zip(others) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Pairwise reduction in index order, independent of thread scheduling.
fn tree_reduce(mut items: Vec<(f64, NetworkParams)>) -> Option<(f64, NetworkParams)> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some((la, mut ga)) = it.next() {
            match it.next() {
                Some((lb, gb)) => {
                    add_into(&mut ga, &gb);
                    next.push((la + lb, ga));
                }
                None => next.push((la, ga)),
            }
        }
        items = next;
    }
    items.pop()
}

const CHUNK: usize = 8;

/// Mean batch loss and its exact gradient with respect to the parameters
/// that are live in `mode`. Relaxations under STE contribute the gradient of
/// their soft form.
pub fn backward(
    net: &Network,
    data: &Dataset,
    batch: &[usize],
    mode: PhaseMode,
    class_weights: &[f64],
) -> Result<(f64, GradientTape)> {
    if mode == PhaseMode::Inference {
        return Err(DlnError::InvalidArgument("no gradients in inference mode".into()));
    }
    let prepared = net.prepare();
    let zero = net.params.zeros_like();
    let partials: Vec<Result<(f64, NetworkParams)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = zero.clone();
            let mut loss = 0.0;
            for &i in chunk {
                let sample = data.sample(i);
                let trace = prepared.trace(sample, mode);
                let label = data.labels[i];
                let (l, d_logits) = cross_entropy_with_grad(&trace.logits, label, class_weights[label])?;
                loss += l;
                prepared.backward(sample, &trace, &d_logits, mode, &mut grads);
            }
            Ok((loss, grads))
        })
        .collect();
    let partials = partials.into_iter().collect::<Result<Vec<_>>>()?;
    let (loss, mut grads) = tree_reduce(partials).unwrap_or((0.0, zero));
    let n = batch.len().max(1) as f64;
    for (kind, t) in grads.tensors_mut() {
        let live = is_live(kind, mode, &net.spec);
        for g in t.iter_mut() {
            *g = if live { *g / n } else { 0.0 };
        }
    }
    // masked entries carry no gradient
    let masks: Vec<Vec<bool>> = net
        .params
        .tensors()
        .into_iter()
        .map(|(_, t)| t.iter().map(|&v| is_masked(v)).collect())
        .collect();
    for ((_, t), mask) in grads.tensors_mut().into_iter().zip(&masks) {
        for (g, &m) in t.iter_mut().zip(mask) {
            if m {
                *g = 0.0;
            }
        }
    }
    Ok((loss / n, GradientTape { grads }))
}

/// Per-tensor first/second moment estimates.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    moments: Vec<(Vec<f64>, Vec<f64>, u64)>,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        AdamState {
            moments: params
                .tensors()
                .into_iter()
                .map(|(_, t)| (vec![0.0; t.len()], vec![0.0; t.len()], 0))
                .collect(),
        }
    }
}

/// One bias-corrected adaptive-moment update of the tensors live in `mode`,
/// skipping masked entries.
pub fn optimizer_step(
    params: &mut NetworkParams,
    tape: &GradientTape,
    config: &TrainConfig,
    state: &mut AdamState,
    mode: PhaseMode,
    spec: &NetworkSpec,
) {
    if state.moments.is_empty() {
        *state = AdamState::new(params);
    }
    let grads = tape.grads.tensors();
    for (((kind, values), (_, grad)), (m, v, t)) in params.tensors_mut().into_iter().zip(grads).zip(&mut state.moments) {
        if !is_live(kind, mode, spec) {
            continue;
        }
        *t += 1;
        let bc1 = 1.0 - config.beta1.powi(*t as i32);
        let bc2 = 1.0 - config.beta2.powi(*t as i32);
        for i in 0..values.len() {
            if is_masked(values[i]) {
                continue;
            }
            let g = grad[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch counter over the whole run.
    pub epoch: usize,
    pub iteration: usize,
    pub phase: PhaseMode,
    pub loss: f64,
    /// Balanced accuracy under the phase's own forward mode.
    pub soft_acc: f64,
    /// Balanced accuracy of the quantized circuit.
    pub quantized_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub network: Network,
    pub history: Vec<EpochRecord>,
}

fn balanced(net: &Network, data: &Dataset, mode: PhaseMode) -> Result<f64> {
    let pred = net.predict_dataset(data, mode)?;
    Ok(classification_report(&pred, &data.labels, data.n_classes())?.balanced_accuracy)
}

/// Initializes a network on `train` and runs the two-phase schedule.
pub fn train(spec: &NetworkSpec, train_data: &Dataset, config: &TrainConfig) -> Result<TrainOutput> {
    let net = Network::init(spec.clone(), train_data, config.seed)?;
    train_network(net, train_data, None, config, |_, _| {})
}

/// Runs `iterations` rounds of (`epochs_per_phase` phase-I epochs, then
/// `epochs_per_phase` phase-II epochs) on `net`. Accuracies in the history are
/// measured on `validation` when given, else on the training data. `observer`
/// sees every epoch record together with the current network.
pub fn train_network(
    mut net: Network,
    train_data: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord, &Network),
) -> Result<TrainOutput> {
    config.validate()?;
    net.check_dataset(train_data)?;
    if train_data.is_empty() {
        return Err(DlnError::Data("training set is empty".into()));
    }
    let eval_data = validation.unwrap_or(train_data);
    net.check_dataset(eval_data)?;
    let weights = class_weights(train_data, config.class_weighting);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(&net.params);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut history = Vec::with_capacity(2 * config.iterations * config.epochs_per_phase);
    let mut epoch = 0;
    for iteration in 1..=config.iterations {
        for mode in [PhaseMode::PhaseI, PhaseMode::PhaseII] {
            for _ in 0..config.epochs_per_phase {
                epoch += 1;
                let checkpoint = net.params.clone();
                order.shuffle(&mut rng);
                let mut loss_sum = 0.0;
                let mut batches = 0;
                for (b, batch) in order.chunks(config.batch_size).enumerate() {
                    let (loss, tape) = match backward(&net, train_data, batch, mode, &weights) {
                        Ok(r) => r,
                        Err(DlnError::Divergence { .. }) => {
                            return Err(DlnError::Divergence {
                                batch: b,
                                checkpoint: Some(Box::new(checkpoint)),
                            })
                        }
                        Err(e) => return Err(e),
                    };
                    if !loss.is_finite() {
                        return Err(DlnError::Divergence {
                            batch: b,
                            checkpoint: Some(Box::new(checkpoint)),
                        });
                    }
                    optimizer_step(&mut net.params, &tape, config, &mut adam, mode, &net.spec);
                    loss_sum += loss;
                    batches += 1;
                }
                let record = EpochRecord {
                    epoch,
                    iteration,
                    phase: mode,
                    loss: loss_sum / batches as f64,
                    soft_acc: balanced(&net, eval_data, mode)?,
                    quantized_acc: balanced(&net, eval_data, PhaseMode::Inference)?,
                };
                observer(&record, &net);
                history.push(record);
            }
        }
    }
    Ok(TrainOutput { network: net, history })
}

/// Candidate values for random search; each is sampled uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    /// Log-uniform range.
    pub learning_rate: (f64, f64),
    pub layer_widths: Vec<Vec<usize>>,
    pub neurons_per_feature: Vec<usize>,
    pub gate_subspace_size: Vec<usize>,
    pub link_subspace_size: Vec<usize>,
    pub concat_mode: Vec<ConcatMode>,
    pub iterations: Vec<usize>,
    pub epochs_per_phase: Vec<usize>,
    pub batch_size: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: (0.003, 0.05),
            layer_widths: vec![vec![16], vec![32], vec![32, 16], vec![64, 32]],
            neurons_per_feature: vec![4, 6],
            gate_subspace_size: vec![8],
            link_subspace_size: vec![8],
            concat_mode: vec![ConcatMode::PerLayerThreshold],
            iterations: vec![5],
            epochs_per_phase: vec![10, 20],
            batch_size: vec![32, 64],
        }
    }
}

fn pick<T: Clone>(rng: &mut ChaCha8Rng, options: &[T], fallback: T) -> T {
    if options.is_empty() {
        fallback
    } else {
        options[rng.random_range(0..options.len())].clone()
    }
}

impl SearchSpace {
    pub fn sample(&self, base_spec: &NetworkSpec, base_config: &TrainConfig, rng: &mut ChaCha8Rng) -> (NetworkSpec, TrainConfig) {
        let (lo, hi) = self.learning_rate;
        let lr = if lo > 0.0 && hi > lo {
            (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
        } else {
            base_config.learning_rate
        };
        let spec = NetworkSpec {
            layer_widths: pick(rng, &self.layer_widths, base_spec.layer_widths.clone()),
            neurons_per_feature: pick(rng, &self.neurons_per_feature, base_spec.neurons_per_feature),
            gate_subspace_size: pick(rng, &self.gate_subspace_size, base_spec.gate_subspace_size),
            link_subspace_size: pick(rng, &self.link_subspace_size, base_spec.link_subspace_size),
            concat_mode: pick(rng, &self.concat_mode, base_spec.concat_mode),
            ..base_spec.clone()
        };
        let config = TrainConfig {
            learning_rate: lr,
            iterations: pick(rng, &self.iterations, base_config.iterations),
            epochs_per_phase: pick(rng, &self.epochs_per_phase, base_config.epochs_per_phase),
            batch_size: pick(rng, &self.batch_size, base_config.batch_size),
            seed: rng.random(),
            ..base_config.clone()
        };
        (spec, config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOutcome {
    /// Mean cross-validated quantized balanced accuracy.
    Scored(f64),
    Rejected(String),
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub spec: NetworkSpec,
    pub config: TrainConfig,
    pub outcome: TrialOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Trial,
    pub trials: Vec<Trial>,
}

/// Cross-validated quantized balanced accuracy of one configuration.
pub fn cross_validate(spec: &NetworkSpec, config: &TrainConfig, data: &Dataset, folds: &FoldPlan) -> Result<f64> {
    let mut total = 0.0;
    for fold in 0..folds.k {
        let (train_idx, held_idx) = folds.fold(fold);
        let (train_part, held) = data.refit_split(&train_idx, &held_idx)?;
        let out = train(spec, &train_part, config)?;
        total += balanced(&out.network, &held, PhaseMode::Inference)?;
    }
    Ok(total / folds.k as f64)
}

/// Samples `n_trials` configurations, scores each by k-fold cross-validation,
/// and returns the best (earliest on ties). Trials run in parallel.
pub fn random_search(
    base_spec: &NetworkSpec,
    base_config: &TrainConfig,
    space: &SearchSpace,
    n_trials: usize,
    data: &Dataset,
    folds: &FoldPlan,
    seed: u64,
) -> Result<SearchResult> {
    if n_trials == 0 {
        return Err(DlnError::InvalidArgument("n_trials must be at least 1".into()));
    }
    if folds.assignments.len() != data.len() {
        return Err(DlnError::InvalidArgument("fold plan does not match the dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<(NetworkSpec, TrainConfig)> =
        (0..n_trials).map(|_| space.sample(base_spec, base_config, &mut rng)).collect();
    let trials: Vec<Trial> = candidates
        .into_par_iter()
        .enumerate()
        .map(|(index, (spec, config))| {
            let outcome = match spec.validate().and_then(|_| config.validate()) {
                Err(e) => TrialOutcome::Rejected(e.to_string()),
                Ok(()) => match cross_validate(&spec, &config, data, folds) {
                    Ok(score) => TrialOutcome::Scored(score),
                    Err(DlnError::Divergence { .. }) => TrialOutcome::Diverged,
                    Err(e) => TrialOutcome::Rejected(e.to_string()),
                },
            };
            Trial {
                index,
                spec,
                config,
                outcome,
            }
        })
        .collect();
    let mut best: Option<&Trial> = None;
    for t in &trials {
        if let TrialOutcome::Scored(s) = t.outcome {
            let better = match best.map(|b| &b.outcome) {
                Some(TrialOutcome::Scored(bs)) => s > *bs,
                _ => true,
            };
            if better {
                best = Some(t);
            }
        }
    }
    match best {
        Some(b) => Ok(SearchResult {
            best: b.clone(),
            trials: trials.clone(),
        }),
        None if trials.iter().all(|t| t.outcome == TrialOutcome::Diverged) => Err(DlnError::Config(format!(
            "all trials diverged (seeds {:?})",
            trials.iter().map(|t| t.config.seed).collect::<Vec<_>>()
        ))),
        None => Err(DlnError::Config(format!(
            "no trial produced a score: {}",
            trials
                .iter()
                .map(|t| format!("#{} seed {}: {:?}", t.index, t.config.seed, t.outcome))
                .collect::<Vec<_>>()
                .join("; ")
        ))),
    }
}
