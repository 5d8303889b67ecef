use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{ContinuousFeature, Dataset};
use crate::discrete::{quantize, GateNode, ThresholdUnit};
use crate::network::{ConcatMode, Network, NetworkParams, NetworkSpec};

fn threshold_pred(i: usize) -> Predicate {
    Predicate::Threshold {
        feature: format!("x{i}"),
        index: i,
        op: Comparison::Ge,
        cutoff: 0.5,
        scaled_cutoff: 0.5,
    }
}

fn graph(n_preds: usize, nodes: Vec<Node>, classes: Vec<Vec<(usize, u32)>>) -> RuleGraph {
    let g = RuleGraph {
        predicates: (0..n_preds).map(threshold_pred).collect(),
        nodes,
        classes: classes
            .into_iter()
            .enumerate()
            .map(|(k, inputs)| ClassNode { name: format!("Class_{k}"), inputs: inputs.into_iter().collect(), constant: 0 })
            .collect(),
    };
    g.validate().unwrap();
    g
}

fn leaf(p: usize) -> Node {
    Node::Leaf { predicate: p, negated: false }
}

fn gate(g: GateId, a: usize, b: usize) -> Node {
    Node::Gate { gate: g, a, b }
}

fn all_assignments(n: usize) -> impl Iterator<Item = Vec<bool>> {
    (0..1u32 << n).map(move |m| (0..n).map(|i| m >> i & 1 == 1).collect())
}

fn assert_equivalent(a: &RuleGraph, b: &RuleGraph) {
    let n = a.predicates.len();
    if n <= 12 {
        for asg in all_assignments(n) {
            assert_eq!(a.class_scores(&asg), b.class_scores(&asg), "{asg:?}");
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..4096 {
            let asg: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            assert_eq!(a.class_scores(&asg), b.class_scores(&asg));
        }
    }
}

#[test]
fn and_with_true_is_identity() {
    let g = graph(1, vec![leaf(0), Node::Const { value: true }, gate(GateId::AND, 0, 1)], vec![vec![(2, 1)]]);
    let s = g.simplify();
    assert_eq!(s.nodes, vec![leaf(0)]);
    assert_eq!(s.classes[0].inputs, BTreeMap::from([(0, 1)]));
    assert_equivalent(&g, &s);
}

#[test]
fn xor_with_itself_is_false_and_disappears() {
    let g = graph(
        2,
        vec![leaf(0), leaf(1), gate(GateId::XOR, 0, 0), gate(GateId::OR, 1, 1)],
        vec![vec![(2, 1)], vec![(3, 2)]],
    );
    let s = g.simplify();
    assert_eq!(s.nodes, vec![leaf(1)]);
    assert!(s.classes[0].inputs.is_empty());
    assert_eq!(s.classes[0].constant, 0);
    assert_eq!(s.classes[1].inputs, BTreeMap::from([(0, 2)]));
    assert_equivalent(&g, &s);
}

#[test]
fn constant_true_wires_become_class_constants() {
    let g = graph(1, vec![leaf(0), gate(GateId::XNOR, 0, 0)], vec![vec![(1, 3)], vec![(0, 1)]]);
    let s = g.simplify();
    assert_eq!(s.classes[0].constant, 3);
    assert!(s.classes[0].inputs.is_empty());
    assert_equivalent(&g, &s);
}

#[test]
fn negation_moves_into_leaves_and_gates() {
    let g = graph(
        2,
        vec![
            leaf(0),
            leaf(1),
            gate(GateId::NOT_A, 0, 1),
            gate(GateId::AND, 0, 1),
            gate(GateId::NOT_B, 1, 3),
        ],
        vec![vec![(2, 1)], vec![(4, 1)]],
    );
    let s = g.simplify();
    assert!(s.nodes.contains(&Node::Leaf { predicate: 0, negated: true }));
    assert!(s.nodes.contains(&gate(GateId::NAND, 0, 1)) || s.nodes.iter().any(|n| matches!(n, Node::Gate { gate: GateId::NAND, .. })));
    assert!(!s.nodes.iter().any(|n| matches!(n, Node::Gate { gate: GateId::NOT_A | GateId::NOT_B | GateId::AND, .. })));
    assert_equivalent(&g, &s);
}

#[test]
fn complement_children_fold() {
    // AND(x, NOT x) = False, OR(x, NOT x) = True
    let g = graph(
        1,
        vec![leaf(0), gate(GateId::NOT_A, 0, 0), gate(GateId::AND, 0, 1), gate(GateId::OR, 1, 0)],
        vec![vec![(2, 1)], vec![(3, 1)]],
    );
    let s = g.simplify();
    assert!(s.nodes.is_empty());
    assert_eq!(s.classes[0].constant, 0);
    assert_eq!(s.classes[1].constant, 1);
    assert_equivalent(&g, &s);
}

#[test]
fn identical_gates_are_shared() {
    let g = graph(
        2,
        vec![leaf(0), leaf(1), gate(GateId::AND, 0, 1), gate(GateId::AND, 1, 0), leaf(0)],
        vec![vec![(2, 1), (3, 1)], vec![(4, 1)]],
    );
    let s = g.simplify();
    assert_eq!(s.nodes.len(), 3);
    assert_eq!(s.classes[0].inputs.values().copied().collect::<Vec<_>>(), vec![2]);
    assert_equivalent(&g, &s);
}

#[test]
fn unreachable_nodes_are_removed() {
    let g = graph(3, vec![leaf(0), leaf(1), leaf(2), gate(GateId::OR, 0, 1)], vec![vec![(2, 1)]]);
    let s = g.simplify();
    assert_eq!(s.nodes, vec![leaf(2)]);
    assert_eq!(s.used_predicates(), BTreeSet::from([2]));
}

fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize) -> RuleGraph {
    let n_preds = rng.random_range(1..=14);
    let n_nodes = rng.random_range(1..=max_nodes);
    let mut nodes = Vec::with_capacity(n_nodes);
    for id in 0..n_nodes {
        let roll = rng.random_range(0..10);
        nodes.push(if id == 0 || roll < 2 {
            Node::Leaf { predicate: rng.random_range(0..n_preds), negated: rng.random() }
        } else if roll < 3 {
            Node::Const { value: rng.random() }
        } else {
            Node::Gate {
                gate: GateId::new(rng.random_range(0..16)).unwrap(),
                a: rng.random_range(0..id),
                b: rng.random_range(0..id),
            }
        });
    }
    let n_classes = rng.random_range(1..=3);
    let classes = (0..n_classes)
        .map(|k| ClassNode {
            name: format!("Class_{k}"),
            inputs: (0..rng.random_range(0..=4))
                .map(|_| (rng.random_range(0..n_nodes), rng.random_range(1..=3)))
                .collect(),
            constant: rng.random_range(0..2),
        })
        .collect();
    let g = RuleGraph { predicates: (0..n_preds).map(threshold_pred).collect(), nodes, classes };
    g.validate().unwrap();
    g
}

#[test]
fn random_graphs_keep_their_meaning() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..150 {
        let g = random_graph(&mut rng, 50);
        let s = g.simplify();
        s.validate().unwrap();
        assert!(s.node_count() <= g.node_count());
        assert_equivalent(&g, &s);
        assert_eq!(s.simplify(), s);
    }
}

#[test]
fn simplified_graphs_have_no_foldable_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let s = random_graph(&mut rng, 40).simplify();
        for node in &s.nodes {
            match *node {
                Node::Const { .. } => panic!("constant survived"),
                Node::Gate { gate, a, b } => {
                    assert!(a < b);
                    assert!(!gate.ignores_a() && !gate.ignores_b());
                    assert!(!matches!(s.nodes[a], Node::Const { .. }));
                }
                Node::Leaf { .. } => {}
            }
        }
    }
}

fn feature(name: &str, min: f64, max: f64) -> ContinuousFeature {
    ContinuousFeature { name: name.into(), min, max, median: (min + max) / 2.0 }
}

fn one_threshold_circuit(bias: f64, sign: i8) -> DiscreteNetwork {
    DiscreteNetwork {
        n_continuous: 1,
        n_onehot: 0,
        n_classes: 2,
        concat_mode: ConcatMode::None,
        thresholds: vec![ThresholdUnit { feature: 0, bias, sign }],
        layers: vec![vec![GateNode { gate: GateId::A, a: 0, b: 0 }]],
        sum_wiring: vec![vec![false, true]],
    }
}

fn preprocessor(min: f64, max: f64) -> Preprocessor {
    let mut pre = Preprocessor::unit(1, &[], 2);
    pre.continuous[0] = feature("feature", min, max);
    pre
}

#[test]
fn cutoffs_are_in_original_units() {
    let g = extract(&one_threshold_circuit(0.5, 1), &preprocessor(0.0, 200.0)).unwrap().simplify();
    let Node::Leaf { predicate, negated } = g.nodes[0] else { panic!() };
    assert_eq!(g.predicates[predicate].describe(negated), "feature >= 100");
    assert!(export_dot(&g).contains("feature >= 100"));
}

#[test]
fn negative_slope_flips_the_comparison() {
    let g = extract(&one_threshold_circuit(0.2, -1), &preprocessor(0.0, 10.0)).unwrap().simplify();
    let Node::Leaf { predicate, negated } = g.nodes[0] else { panic!() };
    assert_eq!(g.predicates[predicate].describe(negated), "feature <= 2");
    assert_eq!(g.predicates[predicate].describe(!negated), "feature > 2");
}

#[test]
fn out_of_range_biases_are_constants() {
    for (bias, sign, value) in [(1.3, 1, false), (-0.2, 1, true), (1.3, -1, true), (-0.2, -1, false), (0.4, 0, true)] {
        let g = extract(&one_threshold_circuit(bias, sign), &preprocessor(0.0, 10.0)).unwrap();
        assert_eq!(g.nodes[0], Node::Const { value }, "bias {bias} sign {sign}");
        let s = g.simplify();
        assert!(s.nodes.is_empty());
        assert_eq!(s.classes[1].constant, value as u32);
    }
}

#[test]
fn categorical_leaves_render_as_equality() {
    let pre = Preprocessor::unit(0, &[2], 2);
    let circuit = DiscreteNetwork {
        n_continuous: 0,
        n_onehot: 2,
        n_classes: 2,
        concat_mode: ConcatMode::None,
        thresholds: vec![],
        layers: vec![vec![GateNode { gate: GateId::NOT_A, a: 1, b: 0 }]],
        sum_wiring: vec![vec![true, false]],
    };
    let g = extract(&circuit, &pre).unwrap().simplify();
    let dot = export_dot(&g);
    assert!(dot.contains("c0 != 1"), "{dot}");
}

#[test]
fn empty_graph_exports_header_and_footer() {
    let dot = export_dot(&RuleGraph::default());
    assert_eq!(dot, "digraph dln {\n  rankdir=LR;\n  node [fontname=\"Helvetica\"];\n}\n");
}

#[test]
fn single_rule_export() {
    let g = extract(&one_threshold_circuit(0.5, 1), &preprocessor(0.0, 200.0)).unwrap().simplify();
    let dot = export_dot(&g);
    assert_eq!(dot.matches("shape=box").count(), 1);
    assert_eq!(dot.matches("shape=ellipse").count(), 1);
    assert_eq!(dot.matches("->").count(), 1);
    assert!(dot.contains("n0 -> c1 [label=\"*1\"]"));
    assert_eq!(dot, export_dot(&g));
}

fn random_network(seed: u64) -> (Network, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = NetworkSpec {
        n_continuous: 3,
        n_onehot: 3,
        n_classes: 2,
        layer_widths: vec![8, 6],
        neurons_per_feature: 2,
        ..NetworkSpec::default()
    };
    let bias: Vec<f64> = (0..6).map(|_| rng.random_range(-0.3..1.3)).collect();
    let mut params = NetworkParams::init_with_biases(&spec, bias, seed).unwrap();
    for t in &mut params.thresholds {
        for s in &mut t.slope {
            *s = rng.random_range(-2.0..2.0);
        }
    }
    for v in &mut params.sum.logits.data {
        *v = rng.random_range(-3.0..3.0);
    }
    let n = 300;
    let x: Vec<f64> = (0..3 * n).map(|_| rng.random()).collect();
    let onehot: Vec<u8> = (0..n)
        .flat_map(|_| {
            let hot = rng.random_range(0..3);
            (0..3).map(move |c| (c == hot) as u8)
        })
        .collect();
    let mut pre = Preprocessor::unit(3, &[3], 2);
    pre.continuous[1] = feature("x1", 10.0, 30.0);
    let ds = Dataset::from_arrays(pre, x, onehot, vec![0; n]).unwrap();
    (Network::new(spec, params).unwrap(), ds)
}

#[test]
fn extracted_rules_reproduce_the_circuit() {
    for seed in 0..10 {
        let (net, ds) = random_network(seed);
        let circuit = quantize(&net);
        let g = extract(&circuit, &ds.preprocessor).unwrap();
        let s = g.simplify();
        assert!(s.node_count() <= g.node_count());
        for i in 0..ds.len() {
            let sample = ds.sample(i);
            let expected = circuit.evaluate(sample);
            assert_eq!(g.evaluate(sample), expected);
            assert_eq!(s.evaluate(sample), expected);
        }
    }
}

#[test]
fn feature_summary_lists_used_features() {
    let (net, ds) = random_network(3);
    let g = extract(&quantize(&net), &ds.preprocessor).unwrap().simplify();
    let summary = g.feature_summary(&ds.preprocessor);
    assert_eq!(summary.total_continuous, 3);
    assert_eq!(summary.total_categorical, 1);
    let all: Vec<String> = ds.preprocessor.continuous.iter().map(|f| f.name.clone()).collect();
    assert!(summary.continuous.iter().all(|f| all.contains(f)));
}

#[test]
fn json_round_trip() {
    let (net, ds) = random_network(5);
    let g = extract(&quantize(&net), &ds.preprocessor).unwrap().simplify();
    let text = g.to_json();
    assert_eq!(RuleGraph::from_json(&text).unwrap(), g);
    assert!(RuleGraph::from_json(&text.replace("dln-rules", "other")).is_err());
}

#[test]
fn text_rendering_nests_expressions() {
    let mut g = graph(2, vec![leaf(0), leaf(1), gate(GateId::XOR, 0, 1)], vec![vec![], vec![(2, 2)]]);
    g.classes[0].constant = 1;
    assert_eq!(g.expression(2), "XOR(x0 >= 0.5, x1 >= 0.5)");
    assert_eq!(g.to_text(), "Class_0: 1\nClass_1: 0\n  += 2 * XOR(x0 >= 0.5, x1 >= 0.5)\n");
}
