use super::*;
use crate::logic::GateId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(n_continuous: usize, n_onehot: usize, n_classes: usize, widths: Vec<usize>, npf: usize) -> NetworkSpec {
    NetworkSpec {
        n_continuous,
        n_onehot,
        n_classes,
        layer_widths: widths,
        concat_mode: ConcatMode::None,
        neurons_per_feature: npf,
        gate_subspace_size: 16,
        link_subspace_size: usize::MAX,
        ste: SteFlags::ALL,
        logit_scale: Some(1.0),
        ..NetworkSpec::default()
    }
}

fn one_hot_row(m: &mut Matrix, r: usize, keep: usize) {
    for (i, v) in m.row_mut(r).iter_mut().enumerate() {
        *v = if i == keep { 5.0 } else { MASKED };
    }
}

/// Network whose every choice is pinned: `gates[l][i]` reads inputs
/// `links[l][i]`, and `wires` lists the `(neuron, class)` sum connections.
fn pinned(
    spec: NetworkSpec,
    bias: Vec<f64>,
    slope: Vec<f64>,
    gates: &[Vec<GateId>],
    links: &[Vec<(usize, usize)>],
    wires: &[(usize, usize)],
) -> Network {
    let mut params = NetworkParams::init_with_biases(&spec, bias, 0).unwrap();
    params.thresholds[0].slope = slope;
    for (l, layer) in params.logic.iter_mut().enumerate() {
        for i in 0..layer.out_dim() {
            one_hot_row(&mut layer.gate_logits, i, gates[l][i].index());
            one_hot_row(&mut layer.link_a, i, links[l][i].0);
            one_hot_row(&mut layer.link_b, i, links[l][i].1);
        }
    }
    for v in &mut params.sum.logits.data {
        *v = -5.0;
    }
    for &(j, c) in wires {
        params.sum.logits.set(j, c, 5.0);
    }
    Network::new(spec, params).unwrap()
}

fn sample<'a>(c: &'a [f64], o: &'a [u8]) -> crate::data::Sample<'a> {
    crate::data::Sample {
        continuous: c,
        onehot: o,
    }
}

#[test]
fn true_gates_count_every_wire() {
    let s = spec(1, 0, 3, vec![4], 2);
    let gates = vec![vec![GateId::TRUE; 4]];
    let links = vec![vec![(0, 1); 4]];
    let net = pinned(
        s,
        vec![0.3, 0.6],
        vec![1.0, 1.0],
        &gates,
        &links,
        &[(0, 1), (1, 1), (2, 2)],
    );
    let prepared = net.prepare();
    for x in [0.0, 0.5, 1.0] {
        assert_eq!(prepared.scores(sample(&[x], &[])), vec![0, 2, 1]);
        assert_eq!(prepared.forward(sample(&[x], &[]), PhaseMode::Inference), vec![0.0, 2.0, 1.0]);
        assert_eq!(prepared.predict(sample(&[x], &[]), PhaseMode::Inference), 1);
    }
}

#[test]
fn hand_built_band_detector() {
    let s = spec(1, 0, 2, vec![1], 2);
    let net = pinned(
        s,
        vec![0.3, 0.7],
        vec![2.0, -2.0],
        &[vec![GateId::AND]],
        &[vec![(0, 1)]],
        &[(0, 1)],
    );
    for (x, class) in [(0.0, 0), (0.29, 0), (0.3, 1), (0.5, 1), (0.7, 1), (0.71, 0), (1.0, 0)] {
        assert_eq!(net.predict(sample(&[x], &[]), PhaseMode::Inference).unwrap(), class, "x = {x}");
    }
}

#[test]
fn concatenated_inputs_reach_later_layers() {
    let mut s = spec(0, 2, 2, vec![1, 1], 1);
    s.concat_mode = ConcatMode::SharedThreshold;
    assert_eq!(s.logic_input_dim(1), 3);
    let net = pinned(
        s,
        vec![],
        vec![],
        &[vec![GateId::A], vec![GateId::XOR]],
        &[vec![(0, 0)], vec![(0, 2)]],
        &[(0, 1)],
    );
    for (bits, class) in [([0u8, 0], 0), ([1, 0], 1), ([0, 1], 1), ([1, 1], 0)] {
        assert_eq!(net.predict(sample(&[], &bits), PhaseMode::Inference).unwrap(), class);
    }
}

fn random_network(seed: u64) -> (Network, Vec<(Vec<f64>, Vec<u8>)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_continuous = rng.random_range(1..=3);
    let n_onehot = rng.random_range(0..=3);
    let concat = [ConcatMode::None, ConcatMode::SharedThreshold, ConcatMode::PerLayerThreshold][rng.random_range(0..3)];
    let widths: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=6)).collect();
    let mut s = spec(n_continuous, n_onehot, rng.random_range(2..=4), widths, rng.random_range(1..=3));
    s.concat_mode = concat;
    s.gate_subspace_size = rng.random_range(1..=16);
    s.link_subspace_size = rng.random_range(1..=6);
    s.logit_scale = None;
    let bias = (0..s.n_threshold_neurons()).map(|_| rng.random::<f64>()).collect();
    let mut params = NetworkParams::init_with_biases(&s, bias, seed).unwrap();
    for group in &mut params.thresholds {
        for v in &mut group.slope {
            *v = rng.random_range(-4.0..4.0);
        }
    }
    for layer in &mut params.logic {
        for m in [&mut layer.gate_logits, &mut layer.link_a, &mut layer.link_b] {
            for v in m.data.iter_mut().filter(|v| !is_masked(**v)) {
                *v = rng.random_range(-2.0..2.0);
            }
        }
    }
    for v in &mut params.sum.logits.data {
        *v = rng.random_range(-3.0..3.0);
    }
    let samples = (0..30)
        .map(|_| {
            (
                (0..n_continuous).map(|_| rng.random::<f64>()).collect(),
                (0..n_onehot).map(|_| rng.random_range(0..2u8)).collect(),
            )
        })
        .collect();
    (Network::new(s, params).unwrap(), samples)
}

#[test]
fn full_ste_forward_equals_inference() {
    for seed in 0..40 {
        let (net, samples) = random_network(seed);
        let prepared = net.prepare();
        for (c, o) in &samples {
            let hard = prepared.forward(sample(c, o), PhaseMode::Inference);
            assert_eq!(prepared.forward(sample(c, o), PhaseMode::PhaseI), hard);
            assert_eq!(prepared.forward(sample(c, o), PhaseMode::PhaseII), hard);
        }
    }
}

#[test]
fn quantized_params_match_inference_in_every_mode() {
    for seed in 0..40 {
        let (mut net, samples) = random_network(seed);
        net.spec.ste = SteFlags::NONE;
        let q = net.quantized();
        let (pq, pn) = (q.prepare(), net.prepare());
        for (c, o) in &samples {
            let hard = pn.predict(sample(c, o), PhaseMode::Inference);
            assert_eq!(pq.predict(sample(c, o), PhaseMode::Inference), hard);
            assert_eq!(pq.predict(sample(c, o), PhaseMode::PhaseI), hard, "seed {seed}");
        }
    }
}

#[test]
fn inference_scores_are_logits_times_scale() {
    for seed in 0..20 {
        let (net, samples) = random_network(seed);
        let p = net.prepare();
        let tau = net.spec.resolved_logit_scale();
        for (c, o) in &samples {
            let logits = p.forward(sample(c, o), PhaseMode::Inference);
            let scores = p.scores(sample(c, o));
            for (l, s) in logits.iter().zip(&scores) {
                assert!((l * tau - *s as f64).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn masked_entries_are_never_selected() {
    let s = spec(0, 2, 2, vec![1], 1);
    let mut net = pinned(s, vec![], vec![], &[vec![GateId::AND]], &[vec![(0, 1)]], &[(0, 1)]);
    let row = net.params.logic[0].gate_logits.row_mut(0);
    row.fill(MASKED);
    row[GateId::OR.index()] = -100.0;
    assert_eq!(net.params.logic[0].gates(), vec![GateId::OR]);
    assert_eq!(net.predict(sample(&[], &[1, 0]), PhaseMode::Inference).unwrap(), 1);
    let soft = masked_softmax(net.params.logic[0].gate_logits.row(0));
    assert_eq!(soft[GateId::OR.index()], 1.0);
    assert_eq!(soft.iter().sum::<f64>(), 1.0);
}

#[test]
fn sum_logit_increase_is_monotone() {
    for seed in 0..20 {
        let (mut net, samples) = random_network(seed);
        net.spec.ste = SteFlags::NONE;
        let (c, o) = &samples[0];
        let trace = net.prepare().trace(sample(c, o), PhaseMode::PhaseII);
        let before = trace.logits.clone();
        let j = 0;
        let class = 0;
        let v = net.params.sum.logits.get(j, class);
        net.params.sum.logits.set(j, class, v + 1.0);
        let after = net.prepare().forward(sample(c, o), PhaseMode::PhaseII);
        assert!(after[class] >= before[class] - 1e-12);
        for k in 1..after.len() {
            assert_eq!(after[k], before[k]);
        }
    }
}

#[test]
fn argmax_prefers_first_on_ties() {
    assert_eq!(argmax(&[1, 3, 3, 2]), 1);
    assert_eq!(argmax(&[0.0, 0.0]), 0);
}

#[test]
fn layout_mismatch_is_a_data_error() {
    let (net, _) = random_network(3);
    let c = vec![0.5; net.spec.n_continuous + 1];
    let o = vec![0u8; net.spec.n_onehot];
    assert!(matches!(net.forward(sample(&c, &o), PhaseMode::Inference), Err(DlnError::Data(_))));
}
