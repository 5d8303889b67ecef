//! Rule extraction from quantized circuits, rewrite-based simplification and
//! Graphviz export.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Preprocessor, Sample};
use crate::discrete::DiscreteNetwork;
use crate::error::{DlnError, Result};
use crate::logic::{hard_logic, GateId};
use crate::network::{argmax, fires};

pub const FORMAT: &str = "dln-rules";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
}

/// A test on one input feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    /// `feature op cutoff`, with the cutoff in original units. `scaled_cutoff`
    /// is the same cut on the `[0,1]` scaled value.
    Threshold {
        feature: String,
        index: usize,
        op: Comparison,
        cutoff: f64,
        scaled_cutoff: f64,
    },
    /// `feature = category`, read from one-hot bit `index`.
    Category {
        feature: String,
        category: String,
        index: usize,
    },
}

impl Predicate {
    /// Truth value on a preprocessed sample.
    pub fn holds(&self, sample: Sample<'_>) -> bool {
        match self {
            Predicate::Threshold { index, op, scaled_cutoff, .. } => {
                let s = if *op == Comparison::Ge { 1.0 } else { -1.0 };
                fires(s, sample.continuous[*index] - scaled_cutoff)
            }
            Predicate::Category { index, .. } => sample.onehot[*index] != 0,
        }
    }

    pub fn feature(&self) -> &str {
        match self {
            Predicate::Threshold { feature, .. } | Predicate::Category { feature, .. } => feature,
        }
    }

    /// Human-readable form, optionally negated.
    pub fn describe(&self, negated: bool) -> String {
        match self {
            Predicate::Threshold { feature, op, cutoff, .. } => {
                let sym = match (op, negated) {
                    (Comparison::Ge, false) => ">=",
                    (Comparison::Ge, true) => "<",
                    (Comparison::Le, false) => "<=",
                    (Comparison::Le, true) => ">",
                };
                format!("{feature} {sym} {}", format_number(*cutoff))
            }
            Predicate::Category { feature, category, .. } => {
                format!("{feature} {} {category}", if negated { "!=" } else { "=" })
            }
        }
    }
}

/// Six significant digits, no trailing zeros.
fn format_number(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = 6 - 1 - v.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits);
    let rounded = if digits >= 0 { (v * factor).round() / factor } else { v };
    let text = format!("{rounded}");
    if text == "-0" {
        "0".into()
    } else {
        text
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Const { value: bool },
    Leaf { predicate: usize, negated: bool },
    Gate { gate: GateId, a: usize, b: usize },
}

/// An output class: its score is `constant` plus the multiplicity-weighted
/// count of true inputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassNode {
    pub name: String,
    /// Node id to multiplicity.
    #[serde(with = "edge_list")]
    pub inputs: BTreeMap<usize, u32>,
    pub constant: u32,
}

/// Serializes a node-to-multiplicity map as `[{"node": .., "multiplicity": ..}]`.
mod edge_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Edge {
        node: usize,
        multiplicity: u32,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<usize, u32>, s: S) -> Result<S::Ok, S::Error> {
        let edges: Vec<Edge> = map.iter().map(|(&node, &multiplicity)| Edge { node, multiplicity }).collect();
        edges.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, u32>, D::Error> {
        let edges = Vec::<Edge>::deserialize(d)?;
        Ok(edges.into_iter().map(|e| (e.node, e.multiplicity)).collect())
    }
}

/// Rules as a DAG: nodes reference earlier nodes only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleGraph {
    pub predicates: Vec<Predicate>,
    pub nodes: Vec<Node>,
    pub classes: Vec<ClassNode>,
}

/// Which input features the rules use.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub continuous: Vec<String>,
    pub categorical: Vec<String>,
    pub total_continuous: usize,
    pub total_categorical: usize,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    #[serde(flatten)]
    graph: RuleGraph,
}

/// Builds the rule graph of a circuit. Threshold cutoffs are mapped back to
/// original feature units; thresholds that cannot change over `[0,1]`
/// become constants.
pub fn extract(net: &DiscreteNetwork, pre: &Preprocessor) -> Result<RuleGraph> {
    net.validate()?;
    if pre.n_continuous() != net.n_continuous || pre.n_onehot() != net.n_onehot || pre.n_classes() != net.n_classes {
        return Err(DlnError::Data("preprocessing layout does not match the circuit".into()));
    }
    let mut graph = RuleGraph::default();
    let mut predicate_ids: HashMap<(usize, Comparison, u64), usize> = HashMap::new();
    let mut nodes: Vec<Node> = Vec::with_capacity(net.n_nodes());
    for t in &net.thresholds {
        let feature = &pre.continuous[t.feature];
        let sign = t.sign as f64;
        // a degenerate feature always scales to 0
        if feature.max - feature.min <= 0.0 {
            nodes.push(Node::Const { value: fires(sign, -t.bias) });
            continue;
        }
        let lo = fires(sign, -t.bias);
        if lo == fires(sign, 1.0 - t.bias) {
            nodes.push(Node::Const { value: lo });
            continue;
        }
        let op = if t.sign > 0 { Comparison::Ge } else { Comparison::Le };
        let key = (t.feature, op, t.bias.to_bits());
        let id = *predicate_ids.entry(key).or_insert_with(|| {
            graph.predicates.push(Predicate::Threshold {
                feature: feature.name.clone(),
                index: t.feature,
                op,
                cutoff: feature.unscale(t.bias),
                scaled_cutoff: t.bias,
            });
            graph.predicates.len() - 1
        });
        nodes.push(Node::Leaf { predicate: id, negated: false });
    }
    for (index, (feature, category)) in pre.onehot_names().into_iter().enumerate() {
        graph.predicates.push(Predicate::Category { feature, category, index });
        nodes.push(Node::Leaf { predicate: graph.predicates.len() - 1, negated: false });
    }
    for layer in &net.layers {
        for n in layer {
            nodes.push(Node::Gate { gate: n.gate, a: n.a, b: n.b });
        }
    }
    graph.nodes = nodes;
    graph.classes = pre
        .classes
        .iter()
        .map(|name| ClassNode { name: name.clone(), ..ClassNode::default() })
        .collect();
    for (row, id) in net.sum_wiring.iter().zip(net.output_ids()) {
        for (c, &w) in row.iter().enumerate() {
            if w {
                *graph.classes[c].inputs.entry(id).or_insert(0) += 1;
            }
        }
    }
    Ok(graph)
}

/// Incremental, hash-consed graph construction with local rewrites.
struct Builder {
    nodes: Vec<Node>,
    index: HashMap<Node, usize>,
}

impl Builder {
    fn intern(&mut self, node: Node) -> usize {
        if let Some(&id) = self.index.get(&node) {
            return id;
        }
        self.nodes.push(node.clone());
        self.index.insert(node, self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    fn constant(&mut self, value: bool) -> usize {
        self.intern(Node::Const { value })
    }

    fn const_value(&self, id: usize) -> Option<bool> {
        match self.nodes[id] {
            Node::Const { value } => Some(value),
            _ => None,
        }
    }

    fn negate(&mut self, id: usize) -> usize {
        match self.nodes[id].clone() {
            Node::Const { value } => self.constant(!value),
            Node::Leaf { predicate, negated } => self.intern(Node::Leaf { predicate, negated: !negated }),
            Node::Gate { gate, a, b } => self.gate(gate.complement(), a, b),
        }
    }

    /// `x`, `NOT x` or a constant, given the outputs for `x = 0` and `x = 1`.
    fn unary(&mut self, x: usize, f0: bool, f1: bool) -> usize {
        match (f0, f1) {
            (false, true) => x,
            (true, false) => self.negate(x),
            (v, _) => self.constant(v),
        }
    }

    fn is_negation(&self, x: usize, y: usize) -> bool {
        match (&self.nodes[x], &self.nodes[y]) {
            (Node::Leaf { predicate: p, negated: n }, Node::Leaf { predicate: q, negated: m }) => p == q && n != m,
            (Node::Gate { gate: g, a, b }, Node::Gate { gate: h, a: c, b: d }) => a == c && b == d && g.complement() == *h,
            _ => false,
        }
    }

    fn gate(&mut self, gate: GateId, a: usize, b: usize) -> usize {
        let h = |x, y| hard_logic(gate, x, y);
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => return self.constant(h(x, y)),
            (Some(x), None) => return self.unary(b, h(x, false), h(x, true)),
            (None, Some(y)) => return self.unary(a, h(false, y), h(true, y)),
            (None, None) => {}
        }
        match (gate.ignores_a(), gate.ignores_b()) {
            (true, true) => return self.constant(h(false, false)),
            (true, false) => return self.unary(b, h(false, false), h(false, true)),
            (false, true) => return self.unary(a, h(false, false), h(true, false)),
            _ => {}
        }
        if a == b {
            return self.unary(a, h(false, false), h(true, true));
        }
        if self.is_negation(a, b) {
            return self.unary(a, h(false, true), h(true, false));
        }
        let (gate, a, b) = if a > b { (gate.swapped(), b, a) } else { (gate, a, b) };
        self.intern(Node::Gate { gate, a, b })
    }
}

impl RuleGraph {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DlnError::Config(m));
        for (id, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Leaf { predicate, .. } if predicate >= self.predicates.len() => {
                    return bad(format!("node {id} references a missing predicate"))
                }
                Node::Gate { a, b, .. } if a >= id || b >= id => {
                    return bad(format!("node {id} reads a node that is not earlier"))
                }
                _ => {}
            }
        }
        for class in &self.classes {
            if class.inputs.keys().any(|&k| k >= self.nodes.len()) {
                return bad(format!("class {} references a missing node", class.name));
            }
        }
        Ok(())
    }

    /// Number of nodes (constants, leaves and gates).
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Values of every node under a truth assignment of the predicates.
    pub fn node_values(&self, assignment: &[bool]) -> Vec<bool> {
        let mut values: Vec<bool> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match *node {
                Node::Const { value } => value,
                Node::Leaf { predicate, negated } => assignment[predicate] != negated,
                Node::Gate { gate, a, b } => hard_logic(gate, values[a], values[b]),
            };
            values.push(v);
        }
        values
    }

    /// Class scores under a truth assignment of the predicates.
    pub fn class_scores(&self, assignment: &[bool]) -> Vec<u32> {
        let values = self.node_values(assignment);
        self.classes
            .iter()
            .map(|c| c.constant + c.inputs.iter().filter(|(&id, _)| values[id]).map(|(_, &m)| m).sum::<u32>())
            .collect()
    }

    /// Predicted class and scores for a preprocessed sample.
    pub fn evaluate(&self, sample: Sample<'_>) -> (usize, Vec<u32>) {
        let assignment: Vec<bool> = self.predicates.iter().map(|p| p.holds(sample)).collect();
        let scores = self.class_scores(&assignment);
        (argmax(&scores), scores)
    }

    /// One rebuild pass: every node is re-created bottom-up through the
    /// rewriting builder, then unreachable nodes are dropped.
    fn rebuild(&self) -> RuleGraph {
        let mut builder = Builder { nodes: Vec::new(), index: HashMap::new() };
        let mut map = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let id = match *node {
                Node::Const { value } => builder.constant(value),
                Node::Leaf { .. } => builder.intern(node.clone()),
                Node::Gate { gate, a, b } => builder.gate(gate, map[a], map[b]),
            };
            map.push(id);
        }
        let classes: Vec<ClassNode> = self
            .classes
            .iter()
            .map(|c| {
                let mut out = ClassNode { name: c.name.clone(), inputs: BTreeMap::new(), constant: c.constant };
                for (&id, &m) in &c.inputs {
                    let new = map[id];
                    match builder.const_value(new) {
                        Some(true) => out.constant += m,
                        Some(false) => {}
                        None => *out.inputs.entry(new).or_insert(0) += m,
                    }
                }
                out
            })
            .collect();
        let mut graph = RuleGraph { predicates: self.predicates.clone(), nodes: builder.nodes, classes };
        graph.prune();
        graph
    }

    /// Drops nodes no class depends on, keeping the remaining order.
    fn prune(&mut self) {
        let mut live = vec![false; self.nodes.len()];
        for c in &self.classes {
            for &id in c.inputs.keys() {
                live[id] = true;
            }
        }
        for id in (0..self.nodes.len()).rev() {
            if live[id] {
                if let Node::Gate { a, b, .. } = self.nodes[id] {
                    live[a] = true;
                    live[b] = true;
                }
            }
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if !live[id] {
                continue;
            }
            remap[id] = nodes.len();
            nodes.push(match *node {
                Node::Gate { gate, a, b } => Node::Gate { gate, a: remap[a], b: remap[b] },
                ref other => other.clone(),
            });
        }
        for c in &mut self.classes {
            c.inputs = c.inputs.iter().map(|(&id, &m)| (remap[id], m)).collect();
        }
        self.nodes = nodes;
    }

    /// Applies constant folding, pass-through collapse, idempotence and
    /// complement rules, structural sharing and dead-node removal until
    /// nothing changes.
    pub fn simplify(&self) -> RuleGraph {
        let mut current = self.rebuild();
        for _ in 0..=self.nodes.len() {
            let next = current.rebuild();
            if next == current {
                break;
            }
            current = next;
        }
        current
    }

    /// Predicates reachable from some class.
    pub fn used_predicates(&self) -> BTreeSet<usize> {
        let mut pruned = self.clone();
        pruned.prune();
        pruned
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { predicate, .. } => Some(*predicate),
                _ => None,
            })
            .collect()
    }

    /// Features the rules depend on, against the full input schema.
    pub fn feature_summary(&self, pre: &Preprocessor) -> FeatureSummary {
        let mut continuous = BTreeSet::new();
        let mut categorical = BTreeSet::new();
        for p in self.used_predicates() {
            match &self.predicates[p] {
                Predicate::Threshold { feature, .. } => continuous.insert(feature.clone()),
                Predicate::Category { feature, .. } => categorical.insert(feature.clone()),
            };
        }
        let order = |names: BTreeSet<String>, all: Vec<&String>| -> Vec<String> {
            all.into_iter().filter(|n| names.contains(*n)).cloned().collect()
        };
        FeatureSummary {
            continuous: order(continuous, pre.continuous.iter().map(|f| &f.name).collect()),
            categorical: order(categorical, pre.categorical.iter().map(|f| &f.name).collect()),
            total_continuous: pre.n_continuous(),
            total_categorical: pre.categorical.len(),
        }
    }

    /// Infix rendering of `node`, e.g. `XOR(x0 >= 0.5, x1 >= 0.5)`.
    pub fn expression(&self, node: usize) -> String {
        match self.nodes[node] {
            Node::Const { value } => if value { "TRUE" } else { "FALSE" }.into(),
            Node::Leaf { predicate, negated } => self.predicates[predicate].describe(negated),
            Node::Gate { gate, a, b } => format!("{}({}, {})", gate.name(), self.expression(a), self.expression(b)),
        }
    }

    /// One line per class input: `class += multiplicity * expression`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for class in &self.classes {
            let _ = writeln!(out, "{}: {}", class.name, class.constant);
            for (&node, &m) in &class.inputs {
                let _ = writeln!(out, "  += {m} * {}", self.expression(node));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Envelope { format: FORMAT.into(), version: FORMAT_VERSION, graph: self.clone() })
            .expect("rules serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(text)?;
        if env.format != FORMAT || env.version != FORMAT_VERSION {
            return Err(DlnError::Config(format!("unsupported rules format {} v{}", env.format, env.version)));
        }
        env.graph.validate()?;
        Ok(env.graph)
    }
}

fn escape(label: &str) -> String {
    label.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz text: feature tests as boxes, operators as diamonds, classes as
/// ellipses, class edges annotated with their multiplicity. Only nodes some
/// class depends on are drawn.
pub fn export_dot(graph: &RuleGraph) -> String {
    let mut g = graph.clone();
    g.prune();
    let mut out = String::new();
    out.push_str("digraph dln {\n  rankdir=LR;\n  node [fontname=\"Helvetica\"];\n");
    for (id, node) in g.nodes.iter().enumerate() {
        match *node {
            Node::Const { value } => {
                let _ = writeln!(out, "  n{id} [shape=box, label=\"{}\"];", if value { "TRUE" } else { "FALSE" });
            }
            Node::Leaf { predicate, negated } => {
                let label = escape(&g.predicates[predicate].describe(negated));
                let _ = writeln!(out, "  n{id} [shape=box, style=filled, fillcolor=\"#fff2a8\", label=\"{label}\"];");
            }
            Node::Gate { gate, .. } => {
                let _ = writeln!(out, "  n{id} [shape=diamond, label=\"{}\"];", gate.name());
            }
        }
    }
    for (id, node) in g.nodes.iter().enumerate() {
        if let Node::Gate { gate, a, b } = *node {
            if gate.swapped() == gate {
                let _ = writeln!(out, "  n{a} -> n{id};\n  n{b} -> n{id};");
            } else {
                let _ = writeln!(out, "  n{a} -> n{id} [label=\"a\"];\n  n{b} -> n{id} [label=\"b\"];");
            }
        }
    }
    for (k, class) in g.classes.iter().enumerate() {
        if class.inputs.is_empty() && class.constant == 0 {
            continue;
        }
        let label = if class.constant > 0 {
            format!("{} (+{})", class.name, class.constant)
        } else {
            class.name.clone()
        };
        let _ = writeln!(out, "  c{k} [shape=ellipse, label=\"{}\"];", escape(&label));
        for (&id, &m) in &class.inputs {
            let _ = writeln!(out, "  n{id} -> c{k} [label=\"*{m}\"];");
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests;
