//! The sixteen two-input boolean operators, in real-valued (soft) and binary
//! (hard) form.
//!
//! Operator ids are fixed: id `k` has the truth table whose four output bits,
//! read at inputs `(a, b) = 00, 01, 10, 11`, spell `k` in binary (MSB first).
//! The soft form of each operator is the product-logic polynomial that agrees
//! with the truth table on `{0,1}²` and stays inside `[0,1]` on `[0,1]²`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};

/// Index of one of the sixteen two-input operators.
///
/// Serialized as its plain integer id; the id-to-operator mapping never changes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct GateId(u8);

impl GateId {
    pub const FALSE: GateId = GateId(0);
    pub const AND: GateId = GateId(1);
    pub const A_AND_NOT_B: GateId = GateId(2);
    pub const A: GateId = GateId(3);
    pub const NOT_A_AND_B: GateId = GateId(4);
    pub const B: GateId = GateId(5);
    pub const XOR: GateId = GateId(6);
    pub const OR: GateId = GateId(7);
    pub const NOR: GateId = GateId(8);
    pub const XNOR: GateId = GateId(9);
    pub const NOT_B: GateId = GateId(10);
    /// `A <= B`, i.e. B implies A.
    pub const B_IMPLIES_A: GateId = GateId(11);
    pub const NOT_A: GateId = GateId(12);
    pub const A_IMPLIES_B: GateId = GateId(13);
    pub const NAND: GateId = GateId(14);
    pub const TRUE: GateId = GateId(15);

    pub const COUNT: usize = 16;

    pub fn new(id: u8) -> Result<Self> {
        if id < 16 {
            Ok(GateId(id))
        } else {
            Err(DlnError::InvalidGate(id))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = GateId> {
        (0..16).map(GateId)
    }

    /// The operator whose truth table is the bitwise complement of this one.
    pub fn complement(self) -> GateId {
        GateId(15 - self.0)
    }

    /// The operator obtained by swapping the two inputs.
    pub fn swapped(self) -> GateId {
        // bits are (00, 01, 10, 11); swapping a/b exchanges the 01 and 10 bits
        let b01 = (self.0 >> 2) & 1;
        let b10 = (self.0 >> 1) & 1;
        GateId((self.0 & 0b1001) | (b10 << 2) | (b01 << 1))
    }

    pub fn name(self) -> &'static str {
        GATE_NAMES[self.index()]
    }

    /// Truth table as `[f(0,0), f(0,1), f(1,0), f(1,1)]`.
    pub fn truth_table(self) -> [bool; 4] {
        [
            self.0 & 0b1000 != 0,
            self.0 & 0b0100 != 0,
            self.0 & 0b0010 != 0,
            self.0 & 0b0001 != 0,
        ]
    }

    /// Builds the operator with the given truth table `[f(0,0), f(0,1), f(1,0), f(1,1)]`.
    pub fn from_truth_table(table: [bool; 4]) -> GateId {
        GateId(
            (table[0] as u8) << 3 | (table[1] as u8) << 2 | (table[2] as u8) << 1 | table[3] as u8,
        )
    }

    /// True when the output ignores input `a`.
    pub fn ignores_a(self) -> bool {
        let t = self.truth_table();
        t[0] == t[2] && t[1] == t[3]
    }

    /// True when the output ignores input `b`.
    pub fn ignores_b(self) -> bool {
        let t = self.truth_table();
        t[0] == t[1] && t[2] == t[3]
    }
}

impl TryFrom<u8> for GateId {
    type Error = DlnError;

    fn try_from(value: u8) -> Result<Self> {
        GateId::new(value)
    }
}

impl From<GateId> for u8 {
    fn from(g: GateId) -> u8 {
        g.0
    }
}

impl fmt::Display for GateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const GATE_NAMES: [&str; 16] = [
    "FALSE",
    "AND",
    "A_AND_NOT_B",
    "A",
    "NOT_A_AND_B",
    "B",
    "XOR",
    "OR",
    "NOR",
    "XNOR",
    "NOT_B",
    "B_IMPLIES_A",
    "NOT_A",
    "A_IMPLIES_B",
    "NAND",
    "TRUE",
];

/// Gates ordered by logical completeness and gradient flow, highest first.
pub const GATE_PRIORITY: [GateId; 16] = [
    GateId::NOR,
    GateId::NAND,
    GateId::XOR,
    GateId::XNOR,
    GateId::OR,
    GateId::AND,
    GateId::A,
    GateId::B,
    GateId::NOT_A,
    GateId::NOT_B,
    GateId::B_IMPLIES_A,
    GateId::A_IMPLIES_B,
    GateId::A_AND_NOT_B,
    GateId::NOT_A_AND_B,
    GateId::FALSE,
    GateId::TRUE,
];

/// Real-valued operator `k` at `(a, b)`.
#[inline]
pub fn soft_logic(gate: GateId, a: f64, b: f64) -> f64 {
    match gate.0 {
        0 => 0.0,
        1 => a * b,
        2 => a - a * b,
        3 => a,
        4 => b - a * b,
        5 => b,
        6 => a + b - 2.0 * a * b,
        7 => a + b - a * b,
        8 => 1.0 - (a + b - a * b),
        9 => 1.0 - (a + b - 2.0 * a * b),
        10 => 1.0 - b,
        11 => 1.0 - b + a * b,
        12 => 1.0 - a,
        13 => 1.0 - a + a * b,
        14 => 1.0 - a * b,
        _ => 1.0,
    }
}

/// Partial derivatives `(d/da, d/db)` of [`soft_logic`].
#[inline]
pub fn soft_logic_grad(gate: GateId, a: f64, b: f64) -> (f64, f64) {
    match gate.0 {
        0 => (0.0, 0.0),
        1 => (b, a),
        2 => (1.0 - b, -a),
        3 => (1.0, 0.0),
        4 => (-b, 1.0 - a),
        5 => (0.0, 1.0),
        6 => (1.0 - 2.0 * b, 1.0 - 2.0 * a),
        7 => (1.0 - b, 1.0 - a),
        8 => (b - 1.0, a - 1.0),
        9 => (2.0 * b - 1.0, 2.0 * a - 1.0),
        10 => (0.0, -1.0),
        11 => (b, a - 1.0),
        12 => (-1.0, 0.0),
        13 => (b - 1.0, a),
        14 => (-b, -a),
        _ => (0.0, 0.0),
    }
}

/// Binary operator `k` at `(a, b)`.
#[inline]
pub fn hard_logic(gate: GateId, a: bool, b: bool) -> bool {
    let column = 3 - ((a as u8) << 1 | b as u8);
    (gate.0 >> column) & 1 == 1
}

/// The first `k_gates` entries of [`GATE_PRIORITY`].
pub fn gate_subspace_mask(k_gates: usize) -> Result<Vec<GateId>> {
    if !(1..=16).contains(&k_gates) {
        return Err(DlnError::InvalidArgument(format!(
            "gate subspace size must be in 1..=16, got {k_gates}"
        )));
    }
    Ok(GATE_PRIORITY[..k_gates].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(id: u8) -> GateId {
        GateId::new(id).unwrap()
    }

    #[test]
    fn soft_examples() {
        assert_eq!(soft_logic(GateId::AND, 0.5, 0.5), 0.25);
        assert_eq!(soft_logic(GateId::FALSE, 0.9, 0.1), 0.0);
        assert_eq!(soft_logic(GateId::XOR, 0.5, 0.5), 0.5);
        assert_eq!(soft_logic(GateId::OR, 1.0, 0.0), 1.0);
    }

    #[test]
    fn grad_examples() {
        assert_eq!(soft_logic_grad(GateId::AND, 0.3, 0.7), (0.7, 0.3));
        assert_eq!(soft_logic_grad(GateId::FALSE, 0.4, 0.1), (0.0, 0.0));
        let (da, db) = soft_logic_grad(GateId::XOR, 0.2, 0.4);
        assert!((da - 0.2).abs() < 1e-12 && (db - 0.6).abs() < 1e-12);
    }

    #[test]
    fn xor_grad_matches_central_difference() {
        let h = 1e-6;
        let (a, b) = (0.2, 0.4);
        let fd_a = (soft_logic(GateId::XOR, a + h, b) - soft_logic(GateId::XOR, a - h, b)) / (2.0 * h);
        let fd_b = (soft_logic(GateId::XOR, a, b + h) - soft_logic(GateId::XOR, a, b - h)) / (2.0 * h);
        assert!((fd_a - 0.2).abs() < 1e-8, "{fd_a}");
        assert!((fd_b - 0.6).abs() < 1e-8, "{fd_b}");
    }

    #[test]
    fn hard_examples() {
        assert!(hard_logic(GateId::AND, true, true));
        assert!(hard_logic(GateId::NOR, false, false));
        assert!(hard_logic(GateId::TRUE, false, true));
        assert!(hard_logic(GateId::XOR, true, false));
        assert!(!hard_logic(GateId::XOR, true, true));
    }

    #[test]
    fn invalid_gate_rejected() {
        assert!(matches!(GateId::new(16), Err(DlnError::InvalidGate(16))));
        assert!(serde_json::from_str::<GateId>("17").is_err());
        assert_eq!(serde_json::from_str::<GateId>("6").unwrap(), GateId::XOR);
        assert_eq!(serde_json::to_string(&GateId::NAND).unwrap(), "14");
    }

    #[test]
    fn subspace_prefixes() {
        assert_eq!(gate_subspace_mask(16).unwrap().len(), 16);
        assert_eq!(gate_subspace_mask(2).unwrap(), vec![GateId::NOR, GateId::NAND]);
        assert_eq!(
            gate_subspace_mask(8).unwrap(),
            vec![
                GateId::NOR,
                GateId::NAND,
                GateId::XOR,
                GateId::XNOR,
                GateId::OR,
                GateId::AND,
                GateId::A,
                GateId::B
            ]
        );
        assert!(gate_subspace_mask(0).is_err());
        assert!(gate_subspace_mask(17).is_err());
    }

    #[test]
    fn priority_is_a_permutation() {
        let mut ids: Vec<u8> = GATE_PRIORITY.iter().map(|g| g.id()).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn endpoint_agreement() {
        for k in GateId::all() {
            for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
                let soft = soft_logic(k, a as u8 as f64, b as u8 as f64);
                assert_eq!(soft, hard_logic(k, a, b) as u8 as f64, "gate {k} at ({a},{b})");
            }
        }
    }

    #[test]
    fn swapped_and_truth_table_roundtrip() {
        assert_eq!(GateId::A.swapped(), GateId::B);
        assert_eq!(GateId::A_AND_NOT_B.swapped(), GateId::NOT_A_AND_B);
        assert_eq!(GateId::A_IMPLIES_B.swapped(), GateId::B_IMPLIES_A);
        for k in GateId::all() {
            assert_eq!(GateId::from_truth_table(k.truth_table()), k);
            for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
                assert_eq!(hard_logic(k.swapped(), b, a), hard_logic(k, a, b));
            }
        }
        assert!(GateId::B.ignores_a() && GateId::NOT_A.ignores_b() && !GateId::XOR.ignores_a());
    }

    #[test]
    fn dense_grid_range_and_complement() {
        let n = 50;
        for k in GateId::all() {
            for i in 0..=n {
                for j in 0..=n {
                    let (a, b) = (i as f64 / n as f64, j as f64 / n as f64);
                    let y = soft_logic(k, a, b);
                    assert!((0.0..=1.0).contains(&y), "gate {k} at ({a},{b}) gave {y}");
                    let c = soft_logic(k.complement(), a, b);
                    assert!((y + c - 1.0).abs() < 1e-15);
                }
            }
        }
        assert_eq!(g(1).complement(), g(14));
        assert_eq!(g(6).complement(), g(9));
        assert_eq!(g(7).complement(), g(8));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn range_closure(k in 0u8..16, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
                let y = soft_logic(GateId::new(k).unwrap(), a, b);
                prop_assert!((0.0..=1.0).contains(&y));
            }

            #[test]
            fn grad_matches_finite_difference(k in 0u8..16, a in 0.01f64..0.99, b in 0.01f64..0.99) {
                let gate = GateId::new(k).unwrap();
                let h = 1e-6;
                let fd_a = (soft_logic(gate, a + h, b) - soft_logic(gate, a - h, b)) / (2.0 * h);
                let fd_b = (soft_logic(gate, a, b + h) - soft_logic(gate, a, b - h)) / (2.0 * h);
                let (da, db) = soft_logic_grad(gate, a, b);
                // polynomials are multilinear, so central differences are exact up to rounding
                prop_assert!((fd_a - da).abs() <= 1e-6 * da.abs().max(1e-3));
                prop_assert!((fd_b - db).abs() <= 1e-6 * db.abs().max(1e-3));
            }

            #[test]
            fn complement_sums_to_one(k in 0u8..16, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
                let gate = GateId::new(k).unwrap();
                let s = soft_logic(gate, a, b) + soft_logic(gate.complement(), a, b);
                prop_assert!((s - 1.0).abs() < 1e-15);
            }
        }
    }
}
