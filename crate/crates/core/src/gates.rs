//! Qubit-level circuits and their lowering to exchange-pulse schedules.
//!
//! The gate layer sits between the encoded-qubit abstraction ([`crate::encoding`])
//! and the pulse-level simulator ([`crate::spin`]). A [`Circuit`] names qubits
//! and qubit-level operations; a [`Layout`] binds each qubit to a triple of
//! quantum dots on a device graph; a [`SequenceDb`] stores verified
//! multi-timestep pulse constructions for named gates (entanglers, leakage
//! reset, …). [`lower_circuit`] turns the three into a [`FlatSeq`]: every
//! gate becomes exchange pulses on concrete dot pairs, idle qubits are filled
//! with permutation dynamical decoupling, and state preparation/measurement
//! is routed to the nearest readout pair with swap chains.
//!
//! Single-qubit Cliffords come from a built-in table of at most four
//! alternating rotations about the qubit's two exchange axes (`Z` and `N`,
//! 120° apart on the Bloch sphere). Every angle in the table is an integer
//! combination `a·π/2 + b·atan(1/√2)`; the tetrahedral constant enters
//! because the available rotation axes are not orthogonal.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::encoding::{encoded_axes, GaqqMap, Orientation};
use crate::error::Error;
use crate::linalg::{self, CMat};
use crate::spin::{ExchangeAxis, FlatSeq, SpamKind, SpamOp, SpinState};
use crate::Result;

/// Size of the single-qubit Clifford group.
pub const N_CLIFFORDS: usize = 24;

/// Timestep window reserved for one single-qubit Clifford.
pub const CLIFFORD_WINDOW: usize = 4;

/// One of the two exchange axes available to an encoded qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QubitAxis {
    Z,
    N,
}

impl QubitAxis {
    pub fn other(self) -> QubitAxis {
        match self {
            QubitAxis::Z => QubitAxis::N,
            QubitAxis::N => QubitAxis::Z,
        }
    }
}

/// A rotation about one of the qubit's exchange axes, in application order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodedPulse {
    pub axis: QubitAxis,
    pub theta: f64,
}

/// An exchange pulse on a pair of spins local to one triple (indices 0..3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriplePulse {
    pub pair: (usize, usize),
    pub theta: f64,
}

/// `atan(1/√2)` — the half-angle between an exchange axis and the axis of a
/// cyclic three-spin permutation. All Clifford pulse angles are integer
/// combinations of π/2 and this constant.
pub fn magic_angle() -> f64 {
    std::f64::consts::FRAC_1_SQRT_2.atan()
}

/// Generator words for the canonical Clifford ordering, applied left to
/// right (index 0 is the identity; "HS" means H first, then S).
const CLIFFORD_WORDS: [&str; N_CLIFFORDS] = [
    "", "H", "S", "HS", "SH", "SS", "HSH", "HSS", "SHS", "SSH", "SSS", "HSSH", "SHSH", "SHSS",
    "SSHS", "SSSH", "HSSHS", "SHSSH", "SSHSH", "SSHSS", "SSSHS", "SSHSSH", "SSSHSH", "SSSHSS",
];

/// Pulse table: per Clifford, `(axis, a, b)` entries in application order
/// with rotation angle `a·π/2 + b·atan(1/√2)`. Three-pulse bodies alternate
/// Z-N-Z or N-Z-N; the three four-pulse entries are an N-Z-N body with a
/// z-frame rotation appended or prepended.
const CLIFFORD_PULSES: [&[(QubitAxis, i8, i8)]; N_CLIFFORDS] = {
    use QubitAxis::{N, Z};
    [
        &[],
        &[(Z, 3, 1), (N, 2, -2), (Z, 3, 1)],
        &[(Z, 3, 0)],
        &[(Z, 3, 1), (N, 2, -2), (Z, 2, 1)],
        &[(Z, 2, 1), (N, 2, -2), (Z, 3, 1)],
        &[(Z, 2, 0)],
        &[(Z, 0, 1), (N, 2, -2), (Z, 0, 1)],
        &[(Z, 3, 1), (N, 2, -2), (Z, 1, 1)],
        &[(Z, 2, 1), (N, 2, -2), (Z, 2, 1)],
        &[(Z, 3, -1), (N, 2, 2), (Z, 1, -1)],
        &[(Z, 1, 0)],
        &[(N, 2, 2), (Z, 4, -2), (N, 2, 2)],
        &[(Z, 3, 1), (N, 2, -2), (Z, 0, 1)],
        &[(Z, 4, -1), (N, 2, 2), (Z, 3, -1)],
        &[(Z, 1, 1), (N, 2, -2), (Z, 2, 1)],
        &[(Z, 0, 1), (N, 2, -2), (Z, 3, 1)],
        &[(N, 2, 2), (Z, 4, -2), (N, 2, 2), (Z, 3, 0)],
        &[(Z, 3, 0), (N, 2, 2), (Z, 4, -2), (N, 2, 2)],
        &[(Z, 2, 1), (N, 2, -2), (Z, 0, 1)],
        &[(Z, 3, -1), (N, 2, 2), (Z, 3, -1)],
        &[(Z, 0, 1), (N, 2, -2), (Z, 2, 1)],
        &[(Z, 2, 0), (N, 2, 2), (Z, 4, -2), (N, 2, 2)],
        &[(Z, 3, -1), (N, 2, 2), (Z, 2, -1)],
        &[(Z, 0, 1), (N, 2, -2), (Z, 1, 1)],
    ]
};

fn check_clifford_index(index: usize) -> Result<()> {
    if index >= N_CLIFFORDS {
        return Err(Error::arg(format!(
            "Clifford index {index} out of range 0..{N_CLIFFORDS}"
        )));
    }
    Ok(())
}

/// 2×2 rotation `exp(+iθ n̂·σ̄/2)` about one of the encoded exchange axes.
pub fn encoded_rotation(axis: QubitAxis, theta: f64) -> CMat {
    let geom = encoded_axes(Orientation::Zn);
    let n = match axis {
        QubitAxis::Z => geom.z_axis,
        QubitAxis::N => geom.n_axis,
    };
    let (s, c) = (0.5 * theta).sin_cos();
    let i = Complex64::i();
    let mut m = CMat::zeros((2, 2));
    m[(0, 0)] = Complex64::new(c, 0.0) + i * s * n[2];
    m[(1, 1)] = Complex64::new(c, 0.0) - i * s * n[2];
    m[(0, 1)] = i * s * Complex64::new(n[0], -n[1]);
    m[(1, 0)] = i * s * Complex64::new(n[0], n[1]);
    m
}

fn clifford_table() -> &'static Vec<CMat> {
    static TABLE: OnceLock<Vec<CMat>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let s = {
            let mut m = CMat::zeros((2, 2));
            m[(0, 0)] = Complex64::new(1.0, 0.0);
            m[(1, 1)] = Complex64::i();
            m
        };
        let h = {
            let r = std::f64::consts::FRAC_1_SQRT_2;
            let mut m = CMat::zeros((2, 2));
            m[(0, 0)] = Complex64::new(r, 0.0);
            m[(0, 1)] = Complex64::new(r, 0.0);
            m[(1, 0)] = Complex64::new(r, 0.0);
            m[(1, 1)] = Complex64::new(-r, 0.0);
            m
        };
        CLIFFORD_WORDS
            .iter()
            .map(|word| {
                let mut u = linalg::eye(2);
                for ch in word.chars() {
                    let g = if ch == 'S' { &s } else { &h };
                    u = g.dot(&u);
                }
                u
            })
            .collect()
    })
}

/// The target 2×2 unitary of Clifford `index` (canonical ordering).
pub fn clifford_unitary(index: usize) -> Result<CMat> {
    check_clifford_index(index)?;
    Ok(clifford_table()[index].clone())
}

///// Generator word of Clifford `index`: `'H'`/`'S'` letters applied left to
/// right (the empty word is the identity).
pub fn clifford_word(index: usize) -> Result<&'static str> {
    check_clifford_index(index)?;
    Ok(CLIFFORD_WORDS[index])
}

/// Pulse decomposition of Clifford `index` on the abstract Z/N axes.
pub fn clifford_pulses(index: usize) -> Result<Vec<EncodedPulse>> {
    check_clifford_index(index)?;
    let m = magic_angle();
    Ok(CLIFFORD_PULSES[index]
        .iter()
        .map(|&(axis, a, b)| EncodedPulse {
            axis,
            theta: f64::from(a) * std::f64::consts::FRAC_PI_2 + f64::from(b) * m,
        })
        .collect())
}

/// Map a Clifford onto concrete in-triple spin pairs for the given
/// orientation. At most four pulses, alternating between the two axes.
pub fn compile_single_qubit_clifford(
    index: usize,
    orientation: Orientation,
) -> Result<Vec<TriplePulse>> {
    let geom = encoded_axes(orientation);
    Ok(clifford_pulses(index)?
        .into_iter()
        .map(|p| TriplePulse {
            pair: match p.axis {
                QubitAxis::Z => geom.z_pair,
                QubitAxis::N => geom.n_pair,
            },
            theta: p.theta,
        })
        .collect())
}

/// Find the Clifford index matching `u` up to global phase, if any.
pub fn match_clifford(u: &CMat) -> Option<usize> {
    clifford_table().iter().position(|c| {
        let overlap = linalg::dagger(c).dot(u).diag().sum().norm() / 2.0;
        overlap > 1.0 - 1e-9
    })
}

fn composition_tables() -> &'static ([[u8; N_CLIFFORDS]; N_CLIFFORDS], [u8; N_CLIFFORDS]) {
    static TABLES: OnceLock<([[u8; N_CLIFFORDS]; N_CLIFFORDS], [u8; N_CLIFFORDS])> =
        OnceLock::new();
    TABLES.get_or_init(|| {
        let table = clifford_table();
        let mut mul = [[0u8; N_CLIFFORDS]; N_CLIFFORDS];
        let mut inv = [0u8; N_CLIFFORDS];
        for (first, uf) in table.iter().enumerate() {
            for (then, ut) in table.iter().enumerate() {
                let prod = ut.dot(uf);
                let idx = match_clifford(&prod).expect("Clifford group closure");
                mul[first][then] = idx as u8;
                if idx == 0 {
                    inv[first] = then as u8;
                }
            }
        }
        (mul, inv)
    })
}

/// Index of "apply `first`, then `then`".
pub fn clifford_compose(first: usize, then: usize) -> Result<usize> {
    check_clifford_index(first)?;
    check_clifford_index(then)?;
    Ok(composition_tables().0[first][then] as usize)
}

/// Index of the inverse Clifford.
pub fn clifford_inverse(index: usize) -> Result<usize> {
    check_clifford_index(index)?;
    Ok(composition_tables().1[index] as usize)
}

// ---------------------------------------------------------------------------
// Circuit AST
// ---------------------------------------------------------------------------

/// One qubit-level operation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CircuitOp {
    /// Single-qubit Clifford by canonical index.
    Clifford { qubit: String, index: usize },
    /// Named multi-timestep gate from the sequence database.
    Gate { name: String, qubits: Vec<String> },
    /// Raw exchangle on one of the qubit's axes (one timestep).
    Exchange {
        qubit: String,
        axis: QubitAxis,
        theta: f64,
    },
    /// Singlet preparation on the qubit's Z pair.
    Init { qubit: String },
    /// Singlet/triplet parity readout of the qubit's Z pair.
    Measure { qubit: String, key: String },
    /// Explicit idle window for every declared qubit.
    Idle { timesteps: usize },
    /// Repeat a block of operations.
    Repeat { times: usize, body: Vec<CircuitOp> },
}

/// A qubit-level program: declared qubits plus an operation list.
///
/// Serialized as a plain JSON document; `Repeat` gives structured loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Circuit {
    pub qubits: Vec<String>,
    pub ops: Vec<CircuitOp>,
}

impl Circuit {
    pub fn new(qubits: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Circuit {
            qubits: qubits.into_iter().map(Into::into).collect(),
            ops: Vec::new(),
        }
    }

    pub fn push(&mut self, op: CircuitOp) -> &mut Self {
        self.ops.push(op);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Circuit = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Unroll `Repeat` blocks into a flat operation list.
    pub fn flattened_ops(&self) -> Vec<CircuitOp> {
        fn walk(ops: &[CircuitOp], out: &mut Vec<CircuitOp>) {
            for op in ops {
                match op {
                    CircuitOp::Repeat { times, body } => {
                        for _ in 0..*times {
                            walk(body, out);
                        }
                    }
                    other => out.push(other.clone()),
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.ops, &mut out);
        out
    }

    /// Keys of all measurements in execution order; shot records list their
    /// outcomes in the same order.
    pub fn measurement_keys(&self) -> Vec<String> {
        self.flattened_ops()
            .into_iter()
            .filter_map(|op| match op {
                CircuitOp::Measure { key, .. } => Some(key),
                _ => None,
            })
            .collect()
    }

    /// Check the structural invariants: unique declared qubits, every
    /// operation referencing a declared qubit, Clifford indices in range,
    /// finite non-negative exchangles, and no measurement of a qubit that
    /// was never initialized.
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for q in &self.qubits {
            if q.is_empty() {
                return Err(Error::Circuit("empty qubit name".into()));
            }
            if !names.insert(q.as_str()) {
                return Err(Error::Circuit(format!("duplicate qubit '{q}'")));
            }
        }
        let known = |q: &str| -> Result<()> {
            if names.contains(q) {
                Ok(())
            } else {
                Err(Error::Circuit(format!("undeclared qubit '{q}'")))
            }
        };
        let mut initialized = BTreeSet::new();
        for op in self.flattened_ops() {
            match &op {
                CircuitOp::Clifford { qubit, index } => {
                    known(qubit)?;
                    check_clifford_index(*index)
                        .map_err(|_| Error::Circuit(format!("Clifford index {index} invalid")))?;
                }
                CircuitOp::Gate { name, qubits } => {
                    if name.is_empty() {
                        return Err(Error::Circuit("empty gate name".into()));
                    }
                    if qubits.is_empty() || qubits.len() > 2 {
                        return Err(Error::Circuit(format!(
                            "gate '{name}' takes 1 or 2 qubits, got {}",
                            qubits.len()
                        )));
                    }
                    for q in qubits {
                        known(q)?;
                    }
                    if qubits.len() == 2 && qubits[0] == qubits[1] {
                        return Err(Error::Circuit(format!(
                            "gate '{name}' repeats qubit '{}'",
                            qubits[0]
                        )));
                    }
                }
                CircuitOp::Exchange { qubit, theta, .. } => {
                    known(qubit)?;
                    if !theta.is_finite() || *theta < 0.0 {
                        return Err(Error::Circuit(format!(
                            "exchangle {theta} must be finite and non-negative"
                        )));
                    }
                }
                CircuitOp::Init { qubit } => {
                    known(qubit)?;
                    initialized.insert(qubit.clone());
                }
                CircuitOp::Measure { qubit, .. } => {
                    known(qubit)?;
                    if !initialized.contains(qubit) {
                        return Err(Error::Circuit(format!(
                            "qubit '{qubit}' measured before initialization"
                        )));
                    }
                }
                CircuitOp::Idle { .. } => {}
                CircuitOp::Repeat { .. } => unreachable!("flattened"),
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Device layout
// ---------------------------------------------------------------------------

/// A qubit bound to three consecutive dots starting at `base_dot`.
///
/// Dots run in increasing order; `orientation` records whether the Z pair
/// sits at the low end (`Zn`) or the high end (`Nz`) of the triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleSite {
    pub name: String,
    pub base_dot: usize,
    pub orientation: Orientation,
}

impl TripleSite {
    pub fn new(name: impl Into<String>, base_dot: usize, orientation: Orientation) -> Self {
        TripleSite {
            name: name.into(),
            base_dot,
            orientation,
        }
    }

    pub fn dots(&self) -> [usize; 3] {
        [self.base_dot, self.base_dot + 1, self.base_dot + 2]
    }

    /// Dot pair of the qubit's Z axis (order follows the encoding).
    pub fn z_pair(&self) -> (usize, usize) {
        let (a, b) = encoded_axes(self.orientation).z_pair;
        (self.base_dot + a, self.base_dot + b)
    }

    /// Dot pair of the qubit's N axis.
    pub fn n_pair(&self) -> (usize, usize) {
        let (a, b) = encoded_axes(self.orientation).n_pair;
        (self.base_dot + a, self.base_dot + b)
    }
}

fn sorted_pair(p: (usize, usize)) -> (usize, usize) {
    if p.0 <= p.1 {
        p
    } else {
        (p.1, p.0)
    }
}

/// Device description: dot count, exchange-capable dot pairs, triple
/// assignments, readout pairs and the timestep duration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub n_dots: usize,
    pub sites: Vec<TripleSite>,
    /// Dot pairs with a tunable exchange coupling, sorted ascending.
    pub edges: Vec<(usize, usize)>,
    /// Dot pairs where singlet/triplet initialization and readout exist.
    pub spam_sites: Vec<(usize, usize)>,
    pub timestep_ns: f64,
}

impl Layout {
    /// Linear array: triples on a chain of dots with exchange between every
    /// adjacent pair, readout available at every qubit's own Z pair.
    pub fn linear(sites: Vec<TripleSite>, timestep_ns: f64) -> Result<Self> {
        let n_dots = sites
            .iter()
            .map(|s| s.base_dot + 3)
            .max()
            .ok_or_else(|| Error::Layout("at least one qubit required".into()))?;
        let edges = (0..n_dots - 1).map(|d| (d, d + 1)).collect();
        let spam_sites = sites.iter().map(|s| sorted_pair(s.z_pair())).collect();
        let layout = Layout {
            n_dots,
            sites,
            edges,
            spam_sites,
            timestep_ns,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timestep_ns > 0.0) || !self.timestep_ns.is_finite() {
            return Err(Error::Layout("timestep must be positive".into()));
        }
        let mut used = BTreeSet::new();
        let mut names = BTreeSet::new();
        for site in &self.sites {
            if !names.insert(site.name.as_str()) {
                return Err(Error::Layout(format!("duplicate qubit '{}'", site.name)));
            }
            for d in site.dots() {
                if d >= self.n_dots {
                    return Err(Error::Layout(format!(
                        "qubit '{}' uses dot {d} beyond n_dots {}",
                        site.name, self.n_dots
                    )));
                }
                if !used.insert(d) {
                    return Err(Error::Layout(format!("dot {d} assigned twice")));
                }
            }
        }
        let edge_set: BTreeSet<_> = self.edges.iter().map(|&e| sorted_pair(e)).collect();
        if edge_set.len() != self.edges.len() {
            return Err(Error::Layout("duplicate edge".into()));
        }
        for &(j, k) in &self.edges {
            if j == k || j >= self.n_dots || k >= self.n_dots {
                return Err(Error::Layout(format!("bad edge ({j},{k})")));
            }
        }
        for site in &self.sites {
            for pair in [site.z_pair(), site.n_pair()] {
                if !edge_set.contains(&sorted_pair(pair)) {
                    return Err(Error::Layout(format!(
                        "qubit '{}' axis ({},{}) has no exchange edge",
                        site.name, pair.0, pair.1
                    )));
                }
            }
        }
        for &s in &self.spam_sites {
            if !edge_set.contains(&sorted_pair(s)) {
                return Err(Error::Layout(format!(
                    "readout pair ({},{}) is not an exchange edge",
                    s.0, s.1
                )));
            }
        }
        Ok(())
    }

    pub fn site(&self, name: &str) -> Result<&TripleSite> {
        self.sites
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Layout(format!("qubit '{name}' not in layout")))
    }

    /// Canonical axis list: every edge, sorted, with zero-padded ids so
    /// lexicographic id order equals dot order.
    pub fn axes(&self) -> Vec<ExchangeAxis> {
        let mut pairs: Vec<_> = self.edges.iter().map(|&e| sorted_pair(e)).collect();
        pairs.sort_unstable();
        pairs
            .into_iter()
            .map(|(j, k)| ExchangeAxis::new(format!("x{j:02}-{k:02}"), j, k))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Sequence database
// ---------------------------------------------------------------------------

/// Declared target of a database entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeqTarget {
    /// Encoded-block unitary, row-major `[re, im]` pairs, dimension 2^k.
    Unitary { matrix: Vec<Vec<[f64; 2]>> },
    /// Reset-if-leaked contract on (data, ancilla).
    Ril,
}

/// A named, timestep-aligned exchangle sequence on a block of 3k spins,
/// keyed by the per-qubit orientations it was built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqEntry {
    pub name: String,
    pub orientations: Vec<Orientation>,
    /// Block-local spin pairs addressed by the rows.
    pub axes: Vec<(usize, usize)>,
    /// `rows[t][a]` = exchangle on axes[a] during timestep t (0 = idle).
    pub rows: Vec<Vec<f64>>,
    pub declared_timesteps: usize,
    pub declared_pulses: usize,
    pub target: SeqTarget,
}

/// Verification report for a database entry.
#[derive(Clone, Copy, Debug)]
pub struct SeqVerification {
    /// Encoded process fidelity (unitary targets) or the worse of the two
    /// contract clauses (RIL).
    pub fidelity: f64,
}

const DB_FIDELITY_FLOOR: f64 = 0.999;

impl SeqEntry {
    pub fn n_qubits(&self) -> usize {
        self.orientations.len()
    }

    pub fn block_spins(&self) -> usize {
        3 * self.n_qubits()
    }

    fn counted_pulses(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.iter().filter(|&&x| x != 0.0).count())
            .sum()
    }

    /// Dense unitary of the stored pulse program on the 3k-spin block.
    pub fn unitary(&self) -> Result<CMat> {
        let steps: Vec<Vec<((usize, usize), f64)>> = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &th)| th != 0.0)
                    .map(|(a, &th)| (self.axes[a], th))
                    .collect()
            })
            .collect();
        pulses_to_unitary(self.block_spins(), &steps)
    }

    /// Check structure and re-derive the declared behaviour.
    pub fn verify(&self) -> Result<SeqVerification> {
        let k = self.n_qubits();
        if !(1..=2).contains(&k) {
            return Err(Error::SequenceDb(format!(
                "entry '{}': only 1- and 2-qubit sequences supported",
                self.name
            )));
        }
        let n = self.block_spins();
        for &(j, kk) in &self.axes {
            if j >= n || kk >= n || j == kk {
                return Err(Error::SequenceDb(format!(
                    "entry '{}': bad block axis ({j},{kk})",
                    self.name
                )));
            }
        }
        for (t, row) in self.rows.iter().enumerate() {
            if row.len() != self.axes.len() {
                return Err(Error::SequenceDb(format!(
                    "entry '{}': row {t} has {} columns, expected {}",
                    self.name,
                    row.len(),
                    self.axes.len()
                )));
            }
            let mut touched = vec![false; n];
            for (a, &th) in row.iter().enumerate() {
                if th == 0.0 {
                    continue;
                }
                if !th.is_finite() || th < 0.0 {
                    return Err(Error::SequenceDb(format!(
                        "entry '{}': exchangle {th} at ({t},{a})",
                        self.name
                    )));
                }
                let (j, kk) = self.axes[a];
                if touched[j] || touched[kk] {
                    return Err(Error::SequenceDb(format!(
                        "entry '{}': overlapping pulses in timestep {t}",
                        self.name
                    )));
                }
                touched[j] = true;
                touched[kk] = true;
            }
        }
        for t in 1..self.rows.len() {
            for a in 0..self.axes.len() {
                if self.rows[t - 1][a] != 0.0 && self.rows[t][a] != 0.0 {
                    return Err(Error::SequenceDb(format!(
                        "entry '{}': axis {a} pulsed in consecutive timesteps {},{t}",
                        self.name,
                        t - 1
                    )));
                }
            }
        }
        if self.declared_timesteps != self.rows.len() {
            return Err(Error::SequenceDb(format!(
                "entry '{}': declares {} timesteps, stores {}",
                self.name,
                self.declared_timesteps,
                self.rows.len()
            )));
        }
        if self.declared_pulses != self.counted_pulses() {
            return Err(Error::SequenceDb(format!(
                "entry '{}': declares {} pulses, stores {}",
                self.name,
                self.declared_pulses,
                self.counted_pulses()
            )));
        }
        let u = self.unitary()?;
        let map = GaqqMap::from_unitary(&u, &self.orientations)?;
        let fidelity = match &self.target {
            SeqTarget::Unitary { matrix } => {
                let dim = 1 << k;
                if matrix.len() != dim || matrix.iter().any(|r| r.len() != dim) {
                    return Err(Error::SequenceDb(format!(
                        "entry '{}': target must be {dim}×{dim}",
                        self.name
                    )));
                }
                let mut t = CMat::zeros((dim, dim));
                for (r, row) in matrix.iter().enumerate() {
                    for (c, &[re, im]) in row.iter().enumerate() {
                        t[(r, c)] = Complex64::new(re, im);
                    }
                }
                map.encoded_process_fidelity(&t)?
            }
            SeqTarget::Ril => {
                if k != 2 {
                    return Err(Error::SequenceDb(format!(
                        "entry '{}': RIL targets need 2 qubits",
                        self.name
                    )));
                }
                let report = verify_ril(&map);
                report.identity_fidelity.min(report.unleak_success)
            }
        };
        if !(fidelity > DB_FIDELITY_FLOOR) {
            return Err(Error::SequenceDb(format!(
                "entry '{}' fails verification: fidelity {fidelity:.6} ≤ {DB_FIDELITY_FLOOR}",
                self.name
            )));
        }
        Ok(SeqVerification { fidelity })
    }
}

/// RIL contract scores; both approach 1 for a correct sequence.
#[derive(Clone, Copy, Debug)]
pub struct RilReport {
    /// Process fidelity with the identity on the data qubit when the
    /// ancilla starts and ends in |0⟩.
    pub identity_fidelity: f64,
    /// Worst-case probability, over the two leaked data states, that the
    /// data returns to the qubit subspace while the ancilla reads out as a
    /// triplet (flipped to |1⟩ or itself leaked — both measure 1).
    pub unleak_success: f64,
}

/// Score a (data, ancilla) channel against the reset-if-leaked contract.
pub fn verify_ril(map: &GaqqMap) -> RilReport {
    // Ququart index = 4·t_data + t_anc; digits 0,1 span the qubit, 2,3 the
    // leaked states.
    let kraus = map.kraus();
    let mut sub = Vec::with_capacity(kraus.len());
    for k in kraus {
        let mut m = CMat::zeros((2, 2));
        for dp in 0..2 {
            for d in 0..2 {
                m[(dp, d)] = k[(4 * dp, 4 * d)];
            }
        }
        sub.push(m);
    }
    let identity_fidelity =
        sub.iter().map(|m| m.diag().sum().norm_sqr()).sum::<f64>() / 4.0;
    // Success block: data back in the qubit subspace, ancilla anywhere that
    // measures 1. Demanding the encoded |1⟩ alone is impossible: total spin
    // is conserved, and the spin-2 part of (leaked data ⊗ ancilla) can only
    // reach (data qubit ⊗ leaked ancilla).
    let mut unleak_success = f64::INFINITY;
    for q in 2..4usize {
        let mut p = 0.0;
        for k in kraus {
            for dp in 0..2 {
                for anc in 1..4 {
                    p += k[(4 * dp + anc, 4 * q)].norm_sqr();
                }
            }
        }
        unleak_success = unleak_success.min(p);
    }
    RilReport {
        identity_fidelity,
        unleak_success,
    }
}

fn orientation_key(orientations: &[Orientation]) -> String {
    orientations
        .iter()
        .map(|o| match o {
            Orientation::Zn => "zn",
            Orientation::Nz => "nz",
        })
        .collect::<Vec<_>>()
        .join("_")
}

/// Verified store of named pulse sequences.
///
/// Every entry is re-verified against its declared target when inserted or
/// loaded; a database that deserializes successfully is safe to lower from.
#[derive(Clone, Debug, Default)]
pub struct SequenceDb {
    entries: BTreeMap<(String, String), SeqEntry>,
}

impl SequenceDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: SeqEntry) -> Result<SeqVerification> {
        let report = entry.verify()?;
        let key = (entry.name.clone(), orientation_key(&entry.orientations));
        self.entries.insert(key, entry);
        Ok(report)
    }

    pub fn get(&self, name: &str, orientations: &[Orientation]) -> Option<&SeqEntry> {
        self.entries
            .get(&(name.to_string(), orientation_key(orientations)))
    }

    pub fn entries(&self) -> impl Iterator<Item = &SeqEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        let list: Vec<&SeqEntry> = self.entries.values().collect();
        Ok(serde_json::to_string_pretty(&list)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let list: Vec<SeqEntry> = serde_json::from_str(text)?;
        let mut db = SequenceDb::new();
        for entry in list {
            db.insert(entry)?;
        }
        Ok(db)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }
}

/// Dense unitary of a pulse program: `steps[t]` lists `((j,k), θ)` pulses
/// applied during timestep `t`, pairs disjoint within a step.
pub fn pulses_to_unitary(n_spins: usize, steps: &[Vec<((usize, usize), f64)>]) -> Result<CMat> {
    let dim = 1usize << n_spins;
    let mut u = CMat::zeros((dim, dim));
    for col in 0..dim {
        let mut amps = vec![Complex64::default(); dim];
        amps[col] = Complex64::new(1.0, 0.0);
        let mut state = SpinState::from_amplitudes(n_spins, amps)?;
        for step in steps {
            for &((j, k), theta) in step {
                state.apply_exchange(j, k, theta);
            }
        }
        for (row, amp) in state.amplitudes().iter().enumerate() {
            u[(row, col)] = *amp;
        }
    }
    Ok(u)
}

// ---------------------------------------------------------------------------
// Lowering
// ---------------------------------------------------------------------------

/// Dynamical-decoupling style for idle qubits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DdStyle {
    None,
    /// Alternating full swaps on the qubit's two axes, emitted in complete
    /// six-pulse blocks (the shortest alternating swap train that is the
    /// identity spin permutation).
    Nz1,
}

/// Idle-qubit decoupling policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdPolicy {
    pub style: DdStyle,
    /// Idle timesteps per DD pulse slot (1 = a pulse every idle timestep).
    pub cadence: usize,
}

impl Default for DdPolicy {
    fn default() -> Self {
        DdPolicy {
            style: DdStyle::Nz1,
            cadence: 1,
        }
    }
}

impl DdPolicy {
    pub fn none() -> Self {
        DdPolicy {
            style: DdStyle::None,
            cadence: 1,
        }
    }
}

struct Lowerer<'a> {
    layout: &'a Layout,
    db: &'a SequenceDb,
    axes: Vec<ExchangeAxis>,
    axis_of: BTreeMap<(usize, usize), usize>,
    rows: Vec<Vec<f64>>,
    spam: Vec<SpamOp>,
    next_free: BTreeMap<String, usize>,
    /// Per qubit: busy half-open intervals, in placement order.
    busy: BTreeMap<String, Vec<(usize, usize)>>,
    end: usize,
}

/// Planned pulses of one operation, relative to its window start.
struct OpPlan {
    /// `(row offset, axis index, theta)`.
    pulses: Vec<(usize, usize, f64)>,
    /// `(row offset, axis index, kind)`.
    spam: Vec<(usize, usize, SpamKind)>,
    window: usize,
    qubits: Vec<String>,
    /// Routed SPAM claims the whole device, not just its qubits.
    global: bool,
}

impl<'a> Lowerer<'a> {
    fn new(layout: &'a Layout, db: &'a SequenceDb, circuit: &Circuit) -> Self {
        let axes = layout.axes();
        let axis_of = axes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.spins, i))
            .collect();
        Lowerer {
            layout,
            db,
            axes,
            axis_of,
            rows: Vec::new(),
            spam: Vec::new(),
            next_free: circuit.qubits.iter().map(|q| (q.clone(), 0)).collect(),
            busy: circuit.qubits.iter().map(|q| (q.clone(), Vec::new())).collect(),
            end: 0,
        }
    }

    fn axis_index(&self, pair: (usize, usize)) -> Result<usize> {
        self.axis_of
            .get(&sorted_pair(pair))
            .copied()
            .ok_or_else(|| {
                Error::Layout(format!("no exchange edge ({},{})", pair.0, pair.1))
            })
    }

    fn ensure_rows(&mut self, upto: usize) {
        while self.rows.len() < upto {
            self.rows.push(vec![0.0; self.axes.len()]);
        }
    }

    /// True if the grid has a pulse on `axis` at timestep `t`.
    fn pulsed_at(&self, t: usize, axis: usize) -> bool {
        self.rows.get(t).is_some_and(|row| row[axis] != 0.0)
    }

    fn place(&mut self, plan: OpPlan) -> Result<()> {
        let mut start = if plan.global {
            self.next_free.values().copied().max().unwrap_or(0).max(self.end)
        } else {
            plan.qubits
                .iter()
                .map(|q| self.next_free[q])
                .max()
                .unwrap_or(0)
        };
        // Spacing rule: an axis must not fire in consecutive timesteps, so
        // nudge the window until its first row clears the previous one.
        loop {
            let conflict = start > 0
                && plan
                    .pulses
                    .iter()
                    .filter(|&&(r, _, _)| r == 0)
                    .any(|&(_, a, _)| self.pulsed_at(start - 1, a));
            if !conflict {
                break;
            }
            start += 1;
        }
        let end = start + plan.window;
        self.ensure_rows(end);
        for &(r, a, theta) in &plan.pulses {
            debug_assert_eq!(self.rows[start + r][a], 0.0);
            self.rows[start + r][a] = theta;
        }
        for &(r, a, kind) in &plan.spam {
            self.spam.push(SpamOp {
                timestep: start + r,
                axis: a,
                kind,
            });
        }
        if plan.global {
            for v in self.next_free.values_mut() {
                *v = end;
            }
        } else {
            for q in &plan.qubits {
                self.next_free.insert(q.clone(), end);
            }
        }
        for q in &plan.qubits {
            self.busy.get_mut(q).unwrap().push((start, end));
        }
        self.end = self.end.max(end);
        Ok(())
    }

    fn plan_clifford(&self, qubit: &str, index: usize) -> Result<OpPlan> {
        let site = self.layout.site(qubit)?;
        let pulses = compile_single_qubit_clifford(index, site.orientation)?;
        let mut out = Vec::with_capacity(pulses.len());
        for (r, p) in pulses.into_iter().enumerate() {
            let pair = (site.base_dot + p.pair.0, site.base_dot + p.pair.1);
            out.push((r, self.axis_index(pair)?, p.theta));
        }
        Ok(OpPlan {
            pulses: out,
            spam: Vec::new(),
            window: CLIFFORD_WINDOW,
            qubits: vec![qubit.to_string()],
            global: false,
        })
    }

    fn plan_exchange(&self, qubit: &str, axis: QubitAxis, theta: f64) -> Result<OpPlan> {
        let site = self.layout.site(qubit)?;
        let pair = match axis {
            QubitAxis::Z => site.z_pair(),
            QubitAxis::N => site.n_pair(),
        };
        let pulses = if theta == 0.0 {
            Vec::new()
        } else {
            vec![(0, self.axis_index(pair)?, theta)]
        };
        Ok(OpPlan {
            pulses,
            spam: Vec::new(),
            window: 1,
            qubits: vec![qubit.to_string()],
            global: false,
        })
    }

    fn plan_gate(&self, name: &str, qubits: &[String]) -> Result<OpPlan> {
        let sites: Vec<&TripleSite> = qubits
            .iter()
            .map(|q| self.layout.site(q))
            .collect::<Result<_>>()?;
        // Resolve the database entry and the block-spin → dot map.
        let (entry, dot_of): (&SeqEntry, Box<dyn Fn(usize) -> usize>) = if sites.len() == 1 {
            let or = [sites[0].orientation];
            let entry = self.db.get(name, &or).ok_or_else(|| {
                Error::SequenceDb(format!(
                    "no sequence '{name}' for orientation {}",
                    orientation_key(&or)
                ))
            })?;
            let base = sites[0].base_dot;
            (entry, Box::new(move |b| base + b))
        } else {
            let (a, b) = (sites[0], sites[1]);
            let (left, right) = if a.base_dot < b.base_dot { (a, b) } else { (b, a) };
            if right.base_dot != left.base_dot + 3 {
                return Err(Error::Layout(format!(
                    "gate '{name}' needs adjacent triples, got bases {} and {}",
                    left.base_dot, right.base_dot
                )));
            }
            let base = left.base_dot;
            if sites[0].base_dot == left.base_dot {
                // First gate qubit on the left: block spins follow dot order.
                let or = [left.orientation, right.orientation];
                let entry = self.db.get(name, &or).ok_or_else(|| {
                    Error::SequenceDb(format!(
                        "no sequence '{name}' for orientations {}",
                        orientation_key(&or)
                    ))
                })?;
                (entry, Box::new(move |bk| base + bk))
            } else {
                // First gate qubit on the right: the block reads the device
                // mirrored, flipping every orientation.
                let or = [left.orientation.flipped(), right.orientation.flipped()];
                let or = [or[1], or[0]];
                let entry = self.db.get(name, &or).ok_or_else(|| {
                    Error::SequenceDb(format!(
                        "no sequence '{name}' for orientations {} (mirrored placement)",
                        orientation_key(&or)
                    ))
                })?;
                (entry, Box::new(move |bk| base + 5 - bk))
            }
        };
        let mut pulses = Vec::new();
        for (r, row) in entry.rows.iter().enumerate() {
            for (a, &theta) in row.iter().enumerate() {
                if theta == 0.0 {
                    continue;
                }
                let (bj, bk) = entry.axes[a];
                let pair = (dot_of(bj), dot_of(bk));
                pulses.push((r, self.axis_index(pair)?, theta));
            }
        }
        Ok(OpPlan {
            pulses,
            spam: Vec::new(),
            window: entry.rows.len(),
            qubits: qubits.to_vec(),
            global: false,
        })
    }

    fn plan_spam(&self, qubit: &str, kind: SpamKind) -> Result<OpPlan> {
        let site = self.layout.site(qubit)?;
        let z = sorted_pair(site.z_pair());
        let spam_sites: BTreeSet<(usize, usize)> = self
            .layout
            .spam_sites
            .iter()
            .map(|&s| sorted_pair(s))
            .collect();
        if spam_sites.contains(&z) {
            return Ok(OpPlan {
                pulses: Vec::new(),
                spam: vec![(0, self.axis_index(z)?, kind)],
                window: 1,
                qubits: vec![qubit.to_string()],
                global: false,
            });
        }
        let route = self.route_pair(z, &spam_sites)?;
        let there = &route.swaps;
        let site_axis = self.axis_index(route.site)?;
        let mut pulses = Vec::new();
        for (r, &pair) in there.iter().enumerate() {
            pulses.push((r, self.axis_index(pair)?, std::f64::consts::PI));
        }
        let mid = there.len();
        for (i, &pair) in there.iter().rev().enumerate() {
            pulses.push((mid + 1 + i, self.axis_index(pair)?, std::f64::consts::PI));
        }
        Ok(OpPlan {
            pulses,
            spam: vec![(mid, site_axis, kind)],
            window: 2 * there.len() + 1,
            qubits: vec![qubit.to_string()],
            global: true,
        })
    }

    /// Shortest swap chain carrying the contents of `from` onto any readout
    /// pair. Neighbor expansion follows axis-id order, so among equally
    /// short routes the lexicographically smallest axis sequence wins.
    fn route_pair(&self, from: (usize, usize), targets: &BTreeSet<(usize, usize)>) -> Result<Route> {
        let mut seen: BTreeMap<(usize, usize), ((usize, usize), (usize, usize))> = BTreeMap::new();
        let mut queue = VecDeque::new();
        seen.insert(from, (from, from));
        queue.push_back(from);
        while let Some(pos) = queue.pop_front() {
            if targets.contains(&pos) {
                let mut swaps = Vec::new();
                let mut cur = pos;
                while cur != from {
                    let (prev, edge) = seen[&cur];
                    swaps.push(edge);
                    cur = prev;
                }
                swaps.reverse();
                return Ok(Route { swaps, site: pos });
            }
            for axis in &self.axes {
                let (u, v) = axis.spins;
                let held = [pos.0, pos.1];
                let moves_u = held.contains(&u) && !held.contains(&v);
                let moves_v = held.contains(&v) && !held.contains(&u);
                if !(moves_u || moves_v) {
                    continue;
                }
                let (out, inn) = if moves_u { (u, v) } else { (v, u) };
                let next = sorted_pair(if pos.0 == out { (inn, pos.1) } else { (pos.0, inn) });
                if !seen.contains_key(&next) {
                    seen.insert(next, (pos, (u, v)));
                    queue.push_back(next);
                }
            }
        }
        Err(Error::Layout(format!(
            "no route from readout pair ({},{}) to any readout site",
            from.0, from.1
        )))
    }

    /// Weave decoupling pulses into every idle stretch.
    fn weave_dd(&mut self, policy: DdPolicy) -> Result<()> {
        if policy.style == DdStyle::None {
            return Ok(());
        }
        if policy.cadence == 0 {
            return Err(Error::arg("DD cadence must be ≥ 1"));
        }
        let total = self.rows.len();
        let sites: Vec<TripleSite> = self
            .busy
            .keys()
            .map(|q| self.layout.site(q).cloned())
            .collect::<Result<_>>()?;
        for site in sites {
            let dots = site.dots();
            let z_axis = self.axis_index(site.z_pair())?;
            let n_axis = self.axis_index(site.n_pair())?;
            let mut blocked = vec![false; total];
            for &(s, e) in &self.busy[&site.name] {
                for t in s..e.min(total) {
                    blocked[t] = true;
                }
            }
            // Foreign pulses or SPAM crossing this triple (routed swap
            // chains, shared readout pairs) also block weaving.
            for (t, slot) in blocked.iter_mut().enumerate() {
                if !*slot {
                    *slot = self.rows[t].iter().enumerate().any(|(a, &th)| {
                        th != 0.0 && dots.iter().any(|&d| self.axes[a].touches(d))
                    });
                }
            }
            for op in &self.spam {
                if op.timestep < total && dots.iter().any(|&d| self.axes[op.axis].touches(d)) {
                    blocked[op.timestep] = true;
                }
            }
            let mut t = 0;
            while t < total {
                if blocked[t] {
                    t += 1;
                    continue;
                }
                let mut e = t;
                while e < total && !blocked[e] {
                    e += 1;
                }
                self.fill_window(t, e, z_axis, n_axis, policy.cadence);
                t = e;
            }
        }
        Ok(())
    }

    fn fill_window(&mut self, start: usize, end: usize, z_axis: usize, n_axis: usize, cadence: usize) {
        let slots: Vec<usize> = (start..end).step_by(cadence).collect();
        // First axis: alternate away from whatever touched the qubit last.
        let first = if start > 0 && self.pulsed_at(start - 1, n_axis) {
            z_axis
        } else {
            n_axis
        };
        let second = if first == z_axis { n_axis } else { z_axis };
        let mut count = 6 * (slots.len() / 6);
        while count > 0 {
            let last_slot = slots[count - 1];
            let last_axis = if (count - 1) % 2 == 0 { first } else { second };
            if last_slot + 1 < self.rows.len() && self.pulsed_at(last_slot + 1, last_axis) {
                count -= 6;
            } else {
                break;
            }
        }
        for (i, &slot) in slots.iter().take(count).enumerate() {
            let axis = if i % 2 == 0 { first } else { second };
            self.rows[slot][axis] = std::f64::consts::PI;
        }
    }

    fn finish(mut self, timestep_ns: f64) -> Result<FlatSeq> {
        self.ensure_rows(self.end);
        // Defensive check of the spacing rule across op boundaries and DD.
        for t in 1..self.rows.len() {
            for a in 0..self.axes.len() {
                if self.rows[t - 1][a] != 0.0 && self.rows[t][a] != 0.0 {
                    return Err(Error::Schedule(format!(
                        "axis {} pulsed in consecutive timesteps {} and {t}",
                        self.axes[a].id,
                        t - 1
                    )));
                }
            }
        }
        let mut seq = FlatSeq::new(self.layout.n_dots, timestep_ns, self.axes);
        seq.rows = self.rows;
        seq.spam = self.spam;
        seq.validate()?;
        Ok(seq)
    }
}

struct Route {
    swaps: Vec<(usize, usize)>,
    site: (usize, usize),
}

/// Compile a circuit against a layout and sequence database into a flat
/// pulse schedule.
///
/// Operations are placed as early as their qubits allow; idle qubits are
/// filled with the decoupling policy afterwards. The result is a pure
/// function of the inputs.
pub fn lower_circuit(
    circuit: &Circuit,
    layout: &Layout,
    db: &SequenceDb,
    dd_policy: DdPolicy,
) -> Result<FlatSeq> {
    circuit.validate()?;
    layout.validate()?;
    for q in &circuit.qubits {
        layout.site(q)?;
    }
    let mut lw = Lowerer::new(layout, db, circuit);
    for op in circuit.flattened_ops() {
        match &op {
            CircuitOp::Clifford { qubit, index } => {
                let plan = lw.plan_clifford(qubit, *index)?;
                lw.place(plan)?;
            }
            CircuitOp::Gate { name, qubits } => {
                let plan = lw.plan_gate(name, qubits)?;
                lw.place(plan)?;
            }
            CircuitOp::Exchange { qubit, axis, theta } => {
                let plan = lw.plan_exchange(qubit, *axis, *theta)?;
                lw.place(plan)?;
            }
            CircuitOp::Init { qubit } => {
                let plan = lw.plan_spam(qubit, SpamKind::Init)?;
                lw.place(plan)?;
            }
            CircuitOp::Measure { qubit, .. } => {
                let plan = lw.plan_spam(qubit, SpamKind::Measure)?;
                lw.place(plan)?;
            }
            CircuitOp::Idle { timesteps } => {
                let start = lw.next_free.values().copied().max().unwrap_or(0);
                let end = start + timesteps;
                for v in lw.next_free.values_mut() {
                    *v = end;
                }
                lw.end = lw.end.max(end);
            }
            CircuitOp::Repeat { .. } => unreachable!("flattened"),
        }
    }
    lw.ensure_rows(lw.end);
    lw.weave_dd(dd_policy)?;
    lw.finish(layout.timestep_ns)
}

// ---------------------------------------------------------------------------
// Coxeter rewriting
// ---------------------------------------------------------------------------

/// A candidate rewrite site: three `(timestep, axis)` pulse references in
/// time order, expected to match `E_ij(π)·E_jk(φ)·E_ij(π)`.
#[derive(Clone, Copy, Debug)]
pub struct CoxeterSite {
    pub pulses: [(usize, usize); 3],
}

/// Result of a rewrite attempt.
#[derive(Clone, Debug, PartialEq)]
pub enum RewriteOutcome {
    Applied,
    /// The site does not match the rule; the sequence is unchanged.
    NoMatch(String),
}

/// Apply the braid relation `E_ij(π) E_jk(φ) E_ij(π) = E_jk(π) E_ij(φ) E_jk(π)`
/// at the given site, swapping the roles of the two axes.
///
/// The rewritten triple is verified against the original on the three
/// involved spins (global phase removed) before being accepted.
pub fn coxeter_rewrite(seq: &FlatSeq, site: &CoxeterSite) -> (FlatSeq, RewriteOutcome) {
    match try_coxeter(seq, site) {
        Ok(new_seq) => (new_seq, RewriteOutcome::Applied),
        Err(reason) => (seq.clone(), RewriteOutcome::NoMatch(reason)),
    }
}

fn try_coxeter(seq: &FlatSeq, site: &CoxeterSite) -> std::result::Result<FlatSeq, String> {
    let pi = std::f64::consts::PI;
    let mut refs = Vec::with_capacity(3);
    for &(t, a) in &site.pulses {
        let theta = *seq
            .rows
            .get(t)
            .and_then(|row| row.get(a))
            .ok_or_else(|| format!("no pulse slot ({t},{a})"))?;
        if theta == 0.0 {
            return Err(format!("slot ({t},{a}) holds no pulse"));
        }
        refs.push((t, a, theta));
    }
    if !(refs[0].0 < refs[1].0 && refs[1].0 < refs[2].0) {
        return Err("site pulses must be in strictly increasing timesteps".into());
    }
    let (t0, a_outer, th0) = refs[0];
    let (t1, a_inner, phi) = refs[1];
    let (t2, a_outer2, th2) = refs[2];
    if a_outer != a_outer2 {
        return Err("outer pulses sit on different axes".into());
    }
    if a_inner == a_outer {
        return Err("inner pulse must sit on the adjacent axis".into());
    }
    let p = seq.axes[a_outer].spins;
    let q = seq.axes[a_inner].spins;
    if !seq.axes[a_outer].shares_spin(&seq.axes[a_inner]) || sorted_pair(p) == sorted_pair(q) {
        return Err("axes do not share exactly one spin".into());
    }
    if (th0 - pi).abs() > 1e-10 || (th2 - pi).abs() > 1e-10 {
        return Err("outer pulses are not π swaps".into());
    }
    let involved: BTreeSet<usize> = [p.0, p.1, q.0, q.1].into_iter().collect();
    for (t, row) in seq.rows.iter().enumerate().take(t2 + 1).skip(t0) {
        for (a, &theta) in row.iter().enumerate() {
            if theta == 0.0 || [(t0, a_outer), (t1, a_inner), (t2, a_outer)].contains(&(t, a)) {
                continue;
            }
            let (j, k) = seq.axes[a].spins;
            if involved.contains(&j) || involved.contains(&k) {
                return Err(format!(
                    "pulse at ({t},{a}) touches the involved spins inside the site"
                ));
            }
        }
    }
    // Swapped-axis occupancy and spacing at the site boundary.
    for (t, a) in [(t0, a_inner), (t1, a_outer), (t2, a_inner)] {
        if seq.rows[t][a] != 0.0 {
            return Err(format!("rewrite target slot ({t},{a}) is occupied"));
        }
    }
    for (t, a) in [
        (t0.wrapping_sub(1), a_inner),
        (t2 + 1, a_inner),
        (t0.wrapping_sub(1), a_outer),
        (t2 + 1, a_outer),
    ] {
        if t < seq.rows.len() && seq.rows[t][a] != 0.0 {
            let adjacent = (t == t0.wrapping_sub(1) && t + 1 == t0) || t == t2 + 1;
            if adjacent {
                return Err(format!(
                    "rewrite would pulse axis {a} next to an existing pulse at timestep {t}"
                ));
            }
        }
    }
    // Numerical check of the relation on the three involved spins.
    let spins: Vec<usize> = involved.iter().copied().collect();
    let local = |pair: (usize, usize)| -> (usize, usize) {
        (
            spins.iter().position(|&s| s == pair.0).unwrap(),
            spins.iter().position(|&s| s == pair.1).unwrap(),
        )
    };
    let (lp, lq) = (local(p), local(q));
    let before = pulses_to_unitary(3, &[vec![(lp, pi)], vec![(lq, phi)], vec![(lp, pi)]])
        .map_err(|e| e.to_string())?;
    let after = pulses_to_unitary(3, &[vec![(lq, pi)], vec![(lp, phi)], vec![(lq, pi)]])
        .map_err(|e| e.to_string())?;
    let overlap = linalg::dagger(&before).dot(&after).diag().sum().norm() / 8.0;
    if overlap < 1.0 - 1e-10 {
        return Err(format!(
            "rewritten site is not unitarily equivalent (overlap {overlap})"
        ));
    }
    let mut out = seq.clone();
    out.rows[t0][a_outer] = 0.0;
    out.rows[t0][a_inner] = pi;
    out.rows[t1][a_inner] = 0.0;
    out.rows[t1][a_outer] = phi;
    out.rows[t2][a_outer] = 0.0;
    out.rows[t2][a_inner] = pi;
    Ok(out)
}

/// Circuit fragment for one leakage-reset gadget: initialize the ancilla,
/// then run the reset-if-leaked sequence on (data, ancilla).
pub fn ril_gadget(data_qubit: &str, ancilla: &str) -> Vec<CircuitOp> {
    vec![
        CircuitOp::Init {
            qubit: ancilla.to_string(),
        },
        CircuitOp::Gate {
            name: "ril".into(),
            qubits: vec![data_qubit.to_string(), ancilla.to_string()],
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::Orientation;

    fn unitaries_match(a: &CMat, b: &CMat, dim: usize) -> bool {
        linalg::dagger(a).dot(b).diag().sum().norm() / dim as f64 > 1.0 - 1e-12
    }

    #[test]
    fn pulse_table_reproduces_generator_words() {
        for i in 0..N_CLIFFORDS {
            let mut u = linalg::eye(2);
            for p in clifford_pulses(i).unwrap() {
                u = encoded_rotation(p.axis, p.theta).dot(&u);
            }
            let target = clifford_unitary(i).unwrap();
            assert!(unitaries_match(&u, &target, 2), "Clifford {i}");
        }
    }

    #[test]
    fn pulses_alternate_axes_and_stay_short() {
        for i in 0..N_CLIFFORDS {
            let pulses = clifford_pulses(i).unwrap();
            assert!(pulses.len() <= CLIFFORD_WINDOW);
            for w in pulses.windows(2) {
                assert_ne!(w[0].axis, w[1].axis, "Clifford {i}");
            }
            for p in &pulses {
                assert!(p.theta > 0.0 && p.theta < 2.0 * std::f64::consts::PI);
            }
        }
    }

    #[test]
    fn table_is_the_whole_group() {
        // All 24 unitaries distinct up to phase, and closed under products.
        for i in 0..N_CLIFFORDS {
            for j in 0..N_CLIFFORDS {
                if i != j {
                    let a = clifford_unitary(i).unwrap();
                    let b = clifford_unitary(j).unwrap();
                    assert!(!unitaries_match(&a, &b, 2), "{i} vs {j}");
                }
                let _ = clifford_compose(i, j).unwrap();
            }
        }
    }

    #[test]
    fn composition_and_inverse_are_consistent() {
        for i in 0..N_CLIFFORDS {
            let inv = clifford_inverse(i).unwrap();
            assert_eq!(clifford_compose(i, inv).unwrap(), 0);
            assert_eq!(clifford_compose(inv, i).unwrap(), 0);
            for j in 0..N_CLIFFORDS {
                let ij = clifford_compose(i, j).unwrap();
                let u = clifford_unitary(j)
                    .unwrap()
                    .dot(&clifford_unitary(i).unwrap());
                assert_eq!(match_clifford(&u), Some(ij));
            }
        }
    }

    #[test]
    fn identity_compiles_to_no_pulses_and_z_rotations_to_one() {
        assert!(clifford_pulses(0).unwrap().is_empty());
        let singles: Vec<usize> = (0..N_CLIFFORDS)
            .filter(|&i| clifford_pulses(i).unwrap().len() == 1)
            .collect();
        assert_eq!(singles.len(), 3);
        for i in singles {
            let p = clifford_pulses(i).unwrap()[0];
            assert_eq!(p.axis, QubitAxis::Z);
        }
        // Z(π) specifically: a single π pulse on the Z axis.
        let zpi = (0..N_CLIFFORDS)
            .find(|&i| {
                let p = clifford_pulses(i).unwrap();
                p.len() == 1 && (p[0].theta - std::f64::consts::PI).abs() < 1e-12
            })
            .unwrap();
        assert_eq!(CLIFFORD_WORDS[zpi], "SS");
    }

    #[test]
    fn orientation_selects_the_pair_mapping() {
        let zn = compile_single_qubit_clifford(2, Orientation::Zn).unwrap();
        assert_eq!(zn[0].pair, (0, 1));
        let nz = compile_single_qubit_clifford(2, Orientation::Nz).unwrap();
        assert_eq!(nz[0].pair, (2, 1));
    }

    #[test]
    fn circuit_validation_catches_misuse() {
        let mut c = Circuit::new(["a"]);
        c.push(CircuitOp::Clifford {
            qubit: "b".into(),
            index: 0,
        });
        assert!(matches!(c.validate(), Err(Error::Circuit(_))));

        let mut c = Circuit::new(["a"]);
        c.push(CircuitOp::Measure {
            qubit: "a".into(),
            key: "m".into(),
        });
        assert!(matches!(c.validate(), Err(Error::Circuit(_))));

        let mut c = Circuit::new(["a"]);
        c.push(CircuitOp::Init { qubit: "a".into() });
        c.push(CircuitOp::Measure {
            qubit: "a".into(),
            key: "m".into(),
        });
        assert!(c.validate().is_ok());
    }

    #[test]
    fn circuit_json_round_trip() {
        let mut c = Circuit::new(["a", "b"]);
        c.push(CircuitOp::Init { qubit: "a".into() });
        c.push(CircuitOp::Repeat {
            times: 3,
            body: vec![CircuitOp::Clifford {
                qubit: "a".into(),
                index: 7,
            }],
        });
        c.push(CircuitOp::Gate {
            name: "cnot".into(),
            qubits: vec!["a".into(), "b".into()],
        });
        let text = c.to_json().unwrap();
        let back = Circuit::from_json(&text).unwrap();
        assert_eq!(c, back);
        assert_eq!(back.flattened_ops().len(), 5);
    }

    #[test]
    fn layout_rejects_overlapping_triples() {
        let sites = vec![
            TripleSite::new("a", 0, Orientation::Zn),
            TripleSite::new("b", 2, Orientation::Nz),
        ];
        assert!(matches!(
            Layout::linear(sites, 25.0),
            Err(Error::Layout(_))
        ));
    }

    #[test]
    fn measurement_keys_follow_execution_order() {
        let mut c = Circuit::new(["a", "b"]);
        c.push(CircuitOp::Init { qubit: "a".into() });
        c.push(CircuitOp::Init { qubit: "b".into() });
        c.push(CircuitOp::Repeat {
            times: 2,
            body: vec![CircuitOp::Measure {
                qubit: "a".into(),
                key: "ma".into(),
            }],
        });
        c.push(CircuitOp::Measure {
            qubit: "b".into(),
            key: "mb".into(),
        });
        assert_eq!(c.measurement_keys(), vec!["ma", "ma", "mb"]);
    }
}
