//! Generators and reference computations shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use dln::data::{Dataset, Preprocessor};
use dln::network::{is_masked, ConcatMode, Network, NetworkParams, NetworkSpec, PhaseMode, SteFlags};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dataset over already-scaled features; one-hot groups of sizes `groups`.
pub fn unit_dataset(
    continuous: Vec<f64>,
    n_continuous: usize,
    onehot: Vec<u8>,
    groups: &[usize],
    labels: Vec<usize>,
    n_classes: usize,
) -> Dataset {
    Dataset::from_arrays(Preprocessor::unit(n_continuous, groups, n_classes), continuous, onehot, labels).unwrap()
}

/// `(x0 > 0.5) XOR (x1 > 0.5)`. With `band > 0`, features avoid `|x - 0.5| < band`.
pub fn xor_points(n: usize, seed: u64, band: f64) -> (Vec<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let mut draw = move || loop {
        let v: f64 = r.random();
        if (v - 0.5).abs() >= band {
            break v;
        }
    };
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b) = (draw(), draw());
        x.extend([a, b]);
        y.push(((a > 0.5) != (b > 0.5)) as usize);
    }
    (x, y)
}

pub fn xor_dataset(n: usize, seed: u64, band: f64) -> Dataset {
    let (x, y) = xor_points(n, seed, band);
    unit_dataset(x, 2, vec![], &[], y, 2)
}

/// Truth-table lookup by gate id: bit `3 - (2a + b)` of the id.
pub fn table_gate(id: u8, a: bool, b: bool) -> bool {
    let corner = 2 * a as u8 + b as u8;
    id >> (3 - corner) & 1 == 1
}

/// Gate ids whose output depends on both inputs.
pub const BINARY_GATES: [u8; 10] = [1, 2, 4, 6, 7, 8, 9, 11, 13, 14];

/// Labels from a random two-level circuit of three gates over four features
/// binarized at random cuts.
#[derive(Clone, Debug)]
pub struct PlantedCircuit {
    pub cuts: [f64; 4],
    /// `(gate, a, b)` over the binarized features.
    pub first: [(u8, usize, usize); 2],
    pub root: u8,
}

impl PlantedCircuit {
    /// Draws circuits until one labels between 25% and 75% of a uniform sample positive.
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        loop {
            let cuts = [(); 4].map(|_| r.random_range(0.3..0.7));
            let pair = |r: &mut ChaCha8Rng| {
                let a = r.random_range(0..4);
                let mut b = r.random_range(0..4);
                while b == a {
                    b = r.random_range(0..4);
                }
                (BINARY_GATES[r.random_range(0..BINARY_GATES.len())], a, b)
            };
            let first = [pair(&mut r), pair(&mut r)];
            let root = BINARY_GATES[r.random_range(0..BINARY_GATES.len())];
            let c = PlantedCircuit { cuts, first, root };
            let mut probe = rng(seed ^ 0xabcd);
            let positives = (0..2000)
                .filter(|_| c.label(&[(); 4].map(|_| probe.random::<f64>())))
                .count();
            if (500..=1500).contains(&positives) {
                return c;
            }
        }
    }

    pub fn label(&self, x: &[f64; 4]) -> bool {
        let bits = [0, 1, 2, 3].map(|i| x[i] > self.cuts[i]);
        let h = self.first.map(|(g, a, b)| table_gate(g, bits[a], bits[b]));
        table_gate(self.root, h[0], h[1])
    }

    /// Points are kept `band` away from every cut.
    pub fn dataset(&self, n: usize, seed: u64, band: f64) -> Dataset {
        let mut r = rng(seed);
        let mut x = Vec::with_capacity(4 * n);
        let mut y = Vec::with_capacity(n);
        while y.len() < n {
            let p = [(); 4].map(|_| r.random::<f64>());
            if p.iter().zip(&self.cuts).any(|(v, c)| (v - c).abs() < band) {
                continue;
            }
            x.extend(p);
            y.push(self.label(&p) as usize);
        }
        unit_dataset(x, 4, vec![], &[], y, 2)
    }
}

/// Random small network for gradient checks: every unmasked parameter drawn
/// from N(0, 1), no straight-through, at most `max_live` live parameters in
/// either phase.
pub fn small_gradient_case(seed: u64, max_live: usize) -> (Network, Dataset) {
    let mut r = rng(seed);
    loop {
        let n_continuous = r.random_range(1..=2);
        let groups: Vec<usize> = if r.random_bool(0.5) { vec![2] } else { vec![] };
        let n_classes = r.random_range(2..=3);
        let spec = NetworkSpec {
            n_continuous,
            n_onehot: groups.iter().sum(),
            n_classes,
            layer_widths: if r.random_bool(0.3) { vec![2, 1] } else { vec![r.random_range(1..=2)] },
            concat_mode: [ConcatMode::None, ConcatMode::SharedThreshold, ConcatMode::PerLayerThreshold]
                [r.random_range(0..3)],
            neurons_per_feature: 1,
            gate_subspace_size: r.random_range(2..=3),
            link_subspace_size: 2,
            ste: SteFlags::NONE,
            ..NetworkSpec::default()
        };
        let bias: Vec<f64> = (0..spec.n_threshold_neurons()).map(|_| r.random()).collect();
        let mut params = NetworkParams::init_with_biases(&spec, bias, r.random()).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        for (_, t) in params.tensors_mut() {
            for v in t.iter_mut().filter(|v| !is_masked(**v)) {
                *v = normal.sample(&mut r);
            }
        }
        let net = Network::new(spec, params).unwrap();
        if [PhaseMode::PhaseI, PhaseMode::PhaseII]
            .iter()
            .any(|&m| live_count(&net, m) > max_live)
        {
            continue;
        }
        let n = 4;
        let x: Vec<f64> = (0..n * n_continuous).map(|_| r.random()).collect();
        let onehot: Vec<u8> = (0..n)
            .flat_map(|_| {
                let hot = r.random_range(0..2);
                groups.iter().flat_map(move |&k| (0..k).map(move |c| (c == hot) as u8)).collect::<Vec<_>>()
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..n_classes)).collect();
        return (net, unit_dataset(x, n_continuous, onehot, &groups, labels, n_classes));
    }
}

pub fn live_count(net: &Network, mode: PhaseMode) -> usize {
    net.params
        .tensors()
        .into_iter()
        .filter(|(k, _)| dln::trainer::is_live(*k, mode, &net.spec))
        .map(|(_, t)| t.iter().filter(|v| !is_masked(**v)).count())
        .sum()
}

/// Random network with arbitrary parameters over a random layout, plus the
/// one-hot group sizes of its inputs.
pub fn random_network(seed: u64) -> (Network, Vec<usize>) {
    let mut r = rng(seed);
    let n_continuous = r.random_range(1..=3);
    let groups: Vec<usize> = (0..r.random_range(0..=2)).map(|_| r.random_range(2..=3)).collect();
    let widths: Vec<usize> = (0..r.random_range(1..=3)).map(|_| r.random_range(2..=8)).collect();
    let spec = NetworkSpec {
        n_continuous,
        n_onehot: groups.iter().sum(),
        n_classes: r.random_range(2..=4),
        layer_widths: widths,
        concat_mode: [ConcatMode::None, ConcatMode::SharedThreshold, ConcatMode::PerLayerThreshold][r.random_range(0..3)],
        neurons_per_feature: r.random_range(1..=3),
        gate_subspace_size: r.random_range(1..=16),
        link_subspace_size: r.random_range(2..=8),
        ..NetworkSpec::default()
    };
    let bias: Vec<f64> = (0..spec.n_threshold_neurons()).map(|_| r.random_range(-0.1..1.1)).collect();
    let mut params = NetworkParams::init_with_biases(&spec, bias, r.random()).unwrap();
    for (kind, t) in params.tensors_mut() {
        for v in t.iter_mut().filter(|v| !is_masked(**v)) {
            *v = match kind {
                dln::network::TensorKind::Bias => *v,
                dln::network::TensorKind::Slope => [-2.0, 0.0, 2.0][r.random_range(0..3)],
                _ => r.random_range(-3.0..3.0),
            };
        }
    }
    (Network::new(spec, params).unwrap(), groups)
}

/// A valid preprocessed sample for a layout with one-hot `groups`.
pub fn random_sample(r: &mut ChaCha8Rng, n_continuous: usize, groups: &[usize]) -> (Vec<f64>, Vec<u8>) {
    let c = (0..n_continuous).map(|_| r.random()).collect();
    let o = groups
        .iter()
        .flat_map(|&k| {
            let hot = r.random_range(0..=k);
            (0..k).map(move |i| (i == hot) as u8)
        })
        .collect();
    (c, o)
}

/// Writes a CSV with header `x0..`, `label` and the matching schema sidecar.
pub fn write_csv(dir: &Path, name: &str, data: &Dataset) -> (std::path::PathBuf, std::path::PathBuf) {
    let nc = data.n_continuous();
    let mut text = String::new();
    let header: Vec<String> = (0..nc).map(|i| format!("x{i}")).chain(["label".to_string()]).collect();
    text.push_str(&header.join(","));
    text.push('\n');
    for i in 0..data.len() {
        let s = data.sample(i);
        let mut cells: Vec<String> = s.continuous.iter().map(|v| format!("{v}")).collect();
        cells.push(format!("c{}", data.labels[i]));
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    let csv = dir.join(format!("{name}.csv"));
    std::fs::write(&csv, text).unwrap();
    let mut schema = serde_json::Map::new();
    for i in 0..nc {
        schema.insert(format!("x{i}"), serde_json::json!({"kind": "continuous"}));
    }
    schema.insert("label".into(), serde_json::json!({"kind": "label"}));
    let schema_path = dir.join(format!("{name}.schema.json"));
    std::fs::write(&schema_path, serde_json::Value::Object(schema).to_string()).unwrap();
    (csv, schema_path)
}
