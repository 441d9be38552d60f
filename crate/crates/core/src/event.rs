//! Qubit-level stochastic circuit simulation.
//!
//! Spin-level simulation ([`crate::spin`]) is exact but exponential in the
//! number of *spins*: a seven-qubit repetition-code experiment is 21 spins
//! and far out of reach. This module trades microscopic detail for speed by
//! running circuits at the qubit level and injecting errors as discrete
//! events whose rates come from spin-level gate characterization
//! ([`crate::encoding::attribute_errors`]).
//!
//! Faults are attached to a circuit once ([`inject_faults`]), giving a
//! [`FaultyCircuit`] with exactly one potential fault per operation. Two
//! evaluators then share that representation:
//!
//! * [`sample_shot_pauli`] — a stabilizer-tableau reference evolution plus a
//!   per-qubit Pauli frame and leakage bit. Leaked qubits read out as
//!   triplets, depolarize two-qubit-gate partners, and are returned to the
//!   codespace only by initialization or a leakage-return (`ril`) gate.
//! * [`sample_shot_coherent`] — a dense state vector with one spin-½ per
//!   qubit. Faults become stochastic Pauli unitaries plus optional
//!   deterministic over/under-rotations, capturing coherent error addition
//!   that the Pauli frame cannot. Leakage is outside this state space and
//!   its rates are ignored here.
//!
//! A shot is fully determined by `(circuit, models, seed)`. Ideal
//! measurement randomness and fault sampling draw from separate derived
//! streams, and every fault site consumes a fixed number of draws given the
//! leakage state, so runs differing only in injected deterministic faults
//! share their reference evolution — detector signatures then XOR exactly.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::ErrorChannelRates;
use crate::error::Error;
use crate::gates::{self, Circuit, CircuitOp, QubitAxis};
use crate::linalg::CMat;
use crate::seeding;
use crate::Result;

/// Largest register the Pauli-frame sampler accepts (bitmask-backed).
const MAX_PAULI_QUBITS: usize = 64;
/// Largest register the coherent sampler accepts (dense 2^N state).
const MAX_COHERENT_QUBITS: usize = 20;

// ---------------------------------------------------------------------------
// Paulis and per-qubit frames
// ---------------------------------------------------------------------------

/// Single-qubit Pauli label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_char(c: char) -> Result<Pauli> {
        match c {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            other => Err(Error::arg(format!("unknown Pauli letter '{other}'"))),
        }
    }

    /// X component (anticommutes with Z readout).
    fn xbit(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    fn zbit(self) -> bool {
        matches!(self, Pauli::Z | Pauli::Y)
    }
}

/// Pauli frame and leakage bits for a qubit register.
///
/// The frame records the accumulated Pauli deviation of the actual state
/// from the ideal reference evolution. A leaked qubit has left the encoded
/// space entirely, so its frame is meaningless and pinned to `I`; the
/// leakage bit itself is the relevant state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QubitFrame {
    n: usize,
    fx: u64,
    fz: u64,
    leaked: u64,
}

impl QubitFrame {
    pub fn new(n: usize) -> QubitFrame {
        assert!(n <= MAX_PAULI_QUBITS);
        QubitFrame {
            n,
            fx: 0,
            fz: 0,
            leaked: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn pauli(&self, q: usize) -> Pauli {
        let m = 1u64 << q;
        match (self.fx & m != 0, self.fz & m != 0) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    pub fn leaked(&self, q: usize) -> bool {
        self.leaked & (1 << q) != 0
    }

    pub fn any_leaked(&self) -> bool {
        self.leaked != 0
    }

    /// Multiply a Pauli into the frame; no effect on leaked qubits.
    fn apply(&mut self, q: usize, p: Pauli) {
        let m = 1u64 << q;
        if self.leaked & m != 0 {
            return;
        }
        if p.xbit() {
            self.fx ^= m;
        }
        if p.zbit() {
            self.fz ^= m;
        }
    }

    fn leak(&mut self, q: usize) {
        let m = 1u64 << q;
        self.leaked |= m;
        self.fx &= !m;
        self.fz &= !m;
    }

    fn unleak(&mut self, q: usize) {
        self.leaked &= !(1 << q);
    }

    /// Reset to `I`, unleaked (initialization).
    fn clear(&mut self, q: usize) {
        let m = !(1u64 << q);
        self.fx &= m;
        self.fz &= m;
        self.leaked &= m;
    }

    /// Replace the frame with a uniformly random Pauli (depolarization).
    fn randomize(&mut self, q: usize, rng: &mut ChaCha12Rng) {
        let m = 1u64 << q;
        let pick: u8 = rng.gen_range(0..4);
        self.fx = (self.fx & !m) | if pick & 1 != 0 { m } else { 0 };
        self.fz = (self.fz & !m) | if pick & 2 != 0 { m } else { 0 };
    }

    // Symplectic conjugation updates, mirroring the tableau gate action.
    // Callers gate these behind leakage checks.

    fn h(&mut self, q: usize) {
        let m = 1u64 << q;
        let x = self.fx & m;
        let z = self.fz & m;
        self.fx = (self.fx & !m) | z;
        self.fz = (self.fz & !m) | x;
    }

    fn s(&mut self, q: usize) {
        self.fz ^= self.fx & (1 << q);
    }

    fn cnot(&mut self, c: usize, t: usize) {
        if self.fx & (1 << c) != 0 {
            self.fx ^= 1 << t;
        }
        if self.fz & (1 << t) != 0 {
            self.fz ^= 1 << c;
        }
    }
}

// ---------------------------------------------------------------------------
// Stabilizer tableau (ideal reference evolution)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
enum TableauOp {
    H(usize),
    S(usize),
    Cnot(usize, usize),
}

/// Aaronson–Gottesman tableau over `n` qubits: rows `0..n` destabilizers,
/// `n..2n` stabilizers, one scratch row for deterministic measurements.
/// Bit `q` of each word is qubit `q`.
struct Tableau {
    n: usize,
    x: Vec<u64>,
    z: Vec<u64>,
    r: Vec<u8>,
}

impl Tableau {
    fn new(n: usize) -> Tableau {
        let mut t = Tableau {
            n,
            x: vec![0; 2 * n + 1],
            z: vec![0; 2 * n + 1],
            r: vec![0; 2 * n + 1],
        };
        for q in 0..n {
            t.x[q] = 1 << q;
            t.z[n + q] = 1 << q;
        }
        t
    }

    fn apply(&mut self, op: TableauOp) {
        match op {
            TableauOp::H(q) => self.h(q),
            TableauOp::S(q) => self.s(q),
            TableauOp::Cnot(c, t) => self.cnot(c, t),
        }
    }

    fn h(&mut self, q: usize) {
        let m = 1u64 << q;
        for i in 0..2 * self.n {
            if self.x[i] & self.z[i] & m != 0 {
                self.r[i] ^= 1;
            }
            let x = self.x[i] & m;
            let z = self.z[i] & m;
            self.x[i] = (self.x[i] & !m) | z;
            self.z[i] = (self.z[i] & !m) | x;
        }
    }

    fn s(&mut self, q: usize) {
        let m = 1u64 << q;
        for i in 0..2 * self.n {
            if self.x[i] & self.z[i] & m != 0 {
                self.r[i] ^= 1;
            }
            self.z[i] ^= self.x[i] & m;
        }
    }

    fn cnot(&mut self, c: usize, t: usize) {
        let mc = 1u64 << c;
        let mt = 1u64 << t;
        for i in 0..2 * self.n {
            let xc = self.x[i] & mc != 0;
            let zt = self.z[i] & mt != 0;
            if xc && zt && ((self.x[i] & mt != 0) == (self.z[i] & mc != 0)) {
                self.r[i] ^= 1;
            }
            if xc {
                self.x[i] ^= mt;
            }
            if zt {
                self.z[i] ^= mc;
            }
        }
    }

    /// Left-multiply row `h` by row `i`, tracking the sign mod 4.
    fn rowsum(&mut self, h: usize, i: usize) {
        let mut phase = 2 * i32::from(self.r[h]) + 2 * i32::from(self.r[i]);
        for q in 0..self.n {
            let m = 1u64 << q;
            let x1 = self.x[i] & m != 0;
            let z1 = self.z[i] & m != 0;
            let x2 = self.x[h] & m != 0;
            let z2 = self.z[h] & m != 0;
            phase += match (x1, z1) {
                (false, false) => 0,
                (true, true) => i32::from(z2) - i32::from(x2),
                (true, false) => i32::from(z2) * (2 * i32::from(x2) - 1),
                (false, true) => i32::from(x2) * (1 - 2 * i32::from(z2)),
            };
        }
        // Products of stabilizer rows always carry real signs (phase 0 or 2
        // mod 4). Destabilizer rows can pick up imaginary phases here, but
        // their sign bits are never read, so rounding is harmless.
        self.r[h] = u8::from(phase.rem_euclid(4) >= 2);
        self.x[h] ^= self.x[i];
        self.z[h] ^= self.z[i];
    }

    /// Measure Z on qubit `q`, collapsing in place.
    fn measure(&mut self, q: usize, rng: &mut ChaCha12Rng) -> u8 {
        let n = self.n;
        let m = 1u64 << q;
        if let Some(p) = (n..2 * n).find(|&p| self.x[p] & m != 0) {
            for i in 0..2 * n {
                if i != p && self.x[i] & m != 0 {
                    self.rowsum(i, p);
                }
            }
            self.x[p - n] = self.x[p];
            self.z[p - n] = self.z[p];
            self.r[p - n] = self.r[p];
            let out = u8::from(rng.gen::<bool>());
            self.x[p] = 0;
            self.z[p] = m;
            self.r[p] = out;
            out
        } else {
            let s = 2 * n;
            self.x[s] = 0;
            self.z[s] = 0;
            self.r[s] = 0;
            for i in 0..n {
                if self.x[i] & m != 0 {
                    self.rowsum(s, i + n);
                }
            }
            self.r[s]
        }
    }

    /// Reset qubit `q` to |0⟩ (measure, flip on 1).
    fn reset(&mut self, q: usize, rng: &mut ChaCha12Rng) {
        if self.measure(q, rng) == 1 {
            let m = 1u64 << q;
            for i in 0..2 * self.n {
                if self.z[i] & m != 0 {
                    self.r[i] ^= 1;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Error models and channel helpers
// ---------------------------------------------------------------------------

/// Per-operation-kind error channels for fault injection.
///
/// Keys are operation kinds: `"clifford"`, `"init"`, `"measure"`, `"idle"`
/// (per timestep, per qubit), `"exchange"`, or a named gate (`"cnot"`,
/// `"ril"`, …). [`inject_faults`] demands a channel for every kind the
/// circuit uses; absence is an error, not an implicit zero.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EventModels {
    pub channels: BTreeMap<String, ErrorChannelRates>,
}

impl EventModels {
    pub fn new() -> EventModels {
        EventModels::default()
    }

    pub fn set(&mut self, kind: impl Into<String>, channel: ErrorChannelRates) -> &mut Self {
        self.channels.insert(kind.into(), channel);
        self
    }

    /// Zero-rate channels for every operation kind `circuit` uses.
    pub fn zeroed_for(circuit: &Circuit) -> EventModels {
        let mut models = EventModels::new();
        for op in circuit.flattened_ops() {
            let key = op_kind(&op);
            if !models.channels.contains_key(key) {
                models.set(key, zero_channel(op_arity(&op)));
            }
        }
        models
    }

    fn require(&self, kind: &str) -> Result<&ErrorChannelRates> {
        self.channels
            .get(kind)
            .ok_or_else(|| Error::arg(format!("no error model supplied for gate kind '{kind}'")))
    }
}

/// The model-table key for an operation.
fn op_kind(op: &CircuitOp) -> &str {
    match op {
        CircuitOp::Clifford { .. } => "clifford",
        CircuitOp::Gate { name, .. } => name,
        CircuitOp::Exchange { .. } => "exchange",
        CircuitOp::Init { .. } => "init",
        CircuitOp::Measure { .. } => "measure",
        CircuitOp::Idle { .. } => "idle",
        CircuitOp::Repeat { .. } => unreachable!("flattened"),
    }
}

fn op_arity(op: &CircuitOp) -> usize {
    match op {
        CircuitOp::Gate { qubits, .. } => qubits.len(),
        _ => 1,
    }
}

/// A channel that does nothing, for `qubits` participating qubits.
pub fn zero_channel(qubits: usize) -> ErrorChannelRates {
    let mut pauli = BTreeMap::new();
    pauli.insert("I".repeat(qubits), 1.0);
    ErrorChannelRates {
        pauli,
        leakage: 0.0,
        seepage: 0.0,
        spread: if qubits == 2 { Some(0.0) } else { None },
    }
}

/// A single Pauli string applied with probability `p`.
pub fn pauli_channel(label: &str, p: f64) -> ErrorChannelRates {
    let mut ch = zero_channel(label.len());
    ch.pauli.insert("I".repeat(label.len()), 1.0 - p);
    ch.pauli.insert(label.to_string(), p);
    ch
}

/// Uniform depolarizing channel: total error `p` spread over the 4^k − 1
/// non-identity Pauli strings.
pub fn depolarizing_channel(qubits: usize, p: f64) -> ErrorChannelRates {
    let mut ch = zero_channel(qubits);
    let labels = pauli_labels(qubits);
    let each = p / (labels.len() - 1) as f64;
    for label in labels {
        let is_identity = label.bytes().all(|b| b == b'I');
        ch.pauli
            .insert(label, if is_identity { 1.0 - p } else { each });
    }
    ch
}

fn pauli_labels(qubits: usize) -> Vec<String> {
    let mut labels = vec![String::new()];
    for _ in 0..qubits {
        labels = labels
            .iter()
            .flat_map(|prefix| "IXYZ".chars().map(move |c| format!("{prefix}{c}")))
            .collect();
    }
    labels
}

fn check_channel(kind: &str, arity: usize, ch: &ErrorChannelRates) -> Result<()> {
    let bad = |msg: String| Err(Error::arg(format!("channel for '{kind}': {msg}")));
    let mut error_mass = 0.0;
    for (label, &p) in &ch.pauli {
        if label.len() != arity || label.chars().any(|c| !"IXYZ".contains(c)) {
            return bad(format!("Pauli label '{label}' is not over IXYZ^{arity}"));
        }
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return bad(format!("probability {p} for '{label}' outside [0, 1]"));
        }
        if label.chars().any(|c| c != 'I') {
            error_mass += p;
        }
    }
    if error_mass > 1.0 + 1e-9 {
        return bad(format!("non-identity Pauli mass {error_mass} exceeds 1"));
    }
    for (name, value) in [("leakage", ch.leakage), ("seepage", ch.seepage)] {
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return bad(format!("{name} rate {value} outside [0, 1]"));
        }
    }
    match ch.spread {
        Some(s) if arity != 2 => {
            return bad(format!("spread rate {s} on a {arity}-qubit channel"));
        }
        Some(s) if !s.is_finite() || !(0.0..=1.0).contains(&s) => {
            return bad(format!("spread rate {s} outside [0, 1]"));
        }
        _ => {}
    }
    Ok(())
}

/// Draw a fault Pauli string; `None` is the identity. Consumes exactly one
/// uniform regardless of the channel contents.
fn draw_pauli<'c>(ch: &'c ErrorChannelRates, rng: &mut ChaCha12Rng) -> Option<&'c str> {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (label, &p) in &ch.pauli {
        if label.bytes().all(|b| b == b'I') {
            continue;
        }
        acc += p;
        if u < acc {
            return Some(label.as_str());
        }
    }
    None
}

/// Leakage/seepage transitions: one uniform per qubit, always.
fn leak_transitions(
    frame: &mut QubitFrame,
    qubits: &[usize],
    ch: &ErrorChannelRates,
    rng: &mut ChaCha12Rng,
) {
    for &q in qubits {
        let u: f64 = rng.gen();
        if frame.leaked(q) {
            if u < ch.seepage {
                frame.unleak(q);
                frame.randomize(q, rng);
            }
        } else if u < ch.leakage {
            frame.leak(q);
        }
    }
}

/// Full channel application: joint Pauli draw, then per-qubit transitions.
fn apply_channel(
    frame: &mut QubitFrame,
    qubits: &[usize],
    ch: &ErrorChannelRates,
    rng: &mut ChaCha12Rng,
) {
    if let Some(label) = draw_pauli(ch, rng) {
        for (letter, &q) in label.chars().zip(qubits) {
            // Pauli::from_char validated at injection time.
            frame.apply(q, Pauli::from_char(letter).expect("validated label"));
        }
    }
    leak_transitions(frame, qubits, ch, rng);
}

// ---------------------------------------------------------------------------
// Fault-decorated circuits
// ---------------------------------------------------------------------------

/// Named two-qubit Cliffords the qubit-level executors understand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Gate2 {
    Cnot,
    Xcnot,
    Swap,
    Cz,
}

impl Gate2 {
    fn from_name(name: &str) -> Option<Gate2> {
        match name {
            "cnot" => Some(Gate2::Cnot),
            "xcnot" => Some(Gate2::Xcnot),
            "swap" => Some(Gate2::Swap),
            "cz" => Some(Gate2::Cz),
            _ => None,
        }
    }

    /// H/S/CNOT decomposition, in circuit order.
    fn tableau_ops(self, a: usize, b: usize) -> Vec<TableauOp> {
        use TableauOp::{Cnot, H};
        match self {
            Gate2::Cnot => vec![Cnot(a, b)],
            Gate2::Xcnot => vec![H(a), Cnot(a, b), H(a)],
            Gate2::Swap => vec![Cnot(a, b), Cnot(b, a), Cnot(a, b)],
            Gate2::Cz => vec![H(b), Cnot(a, b), H(b)],
        }
    }

    /// Dense 4×4 unitary (first qubit is the high-order index bit).
    fn unitary(self) -> CMat {
        let mut m = CMat::zeros((4, 4));
        let one = Complex64::new(1.0, 0.0);
        match self {
            Gate2::Cnot => {
                for (r, c) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
                    m[(r, c)] = one;
                }
            }
            Gate2::Xcnot => {
                // X-controlled NOT: (H⊗I) · CNOT · (H⊗I), H on the control.
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let mut h2 = CMat::zeros((4, 4));
                for (r, c, v) in [
                    (0, 0, s),
                    (0, 2, s),
                    (2, 0, s),
                    (2, 2, -s),
                    (1, 1, s),
                    (1, 3, s),
                    (3, 1, s),
                    (3, 3, -s),
                ] {
                    h2[(r, c)] = Complex64::new(v, 0.0);
                }
                m = h2.dot(&Gate2::Cnot.unitary()).dot(&h2);
            }
            Gate2::Swap => {
                for (r, c) in [(0, 0), (1, 2), (2, 1), (3, 3)] {
                    m[(r, c)] = one;
                }
            }
            Gate2::Cz => {
                for (r, c) in [(0, 0), (1, 1), (2, 2)] {
                    m[(r, c)] = one;
                }
                m[(3, 3)] = -one;
            }
        }
        m
    }
}

/// An operation resolved against the declared qubit register.
#[derive(Clone, Debug)]
enum Resolved {
    Clifford { qubit: usize, index: usize },
    TwoQubit { gate: Gate2, a: usize, b: usize },
    Ril { data: usize, ancilla: usize },
    Rotation { qubit: usize, axis: QubitAxis, theta: f64 },
    Init { qubit: usize },
    Measure { qubit: usize, key: String },
    Idle,
}

#[derive(Clone, Debug)]
struct FaultSite {
    op: CircuitOp,
    resolved: Resolved,
    channel: ErrorChannelRates,
    /// Number of channel applications (timestep count for idles, else 1).
    multiplicity: usize,
}

#[derive(Clone, Debug)]
enum Injection {
    Pauli { mask_x: u64, mask_z: u64 },
    Leak { qubit: usize },
    Rotation { qubit: usize, axis: [f64; 3], angle: f64 },
}

/// A potential fault attached to one circuit location.
#[derive(Clone, Debug)]
pub struct PotentialFault<'c> {
    pub location: usize,
    pub channel: &'c ErrorChannelRates,
    /// Independent applications at this location (idle timesteps).
    pub multiplicity: usize,
}

/// A circuit decorated with one potential fault per operation, plus any
/// deterministic injected faults (test and error-attribution hooks).
#[derive(Clone, Debug)]
pub struct FaultyCircuit {
    source: Circuit,
    qubits: Vec<String>,
    sites: Vec<FaultSite>,
    injections: Vec<(usize, Injection)>,
}

/// Attach error channels from `models` to every operation of `circuit`.
///
/// Fails if the circuit is malformed, if any operation kind lacks a model,
/// or if a channel is unphysical (probabilities outside [0, 1], wrong label
/// arity). The original AST is kept and recoverable via
/// [`FaultyCircuit::source`].
pub fn inject_faults(circuit: &Circuit, models: &EventModels) -> Result<FaultyCircuit> {
    circuit.validate()?;
    if circuit.qubits.len() > MAX_PAULI_QUBITS {
        return Err(Error::Circuit(format!(
            "{} qubits exceeds the event-simulation limit {MAX_PAULI_QUBITS}",
            circuit.qubits.len()
        )));
    }
    let index: BTreeMap<&str, usize> = circuit
        .qubits
        .iter()
        .enumerate()
        .map(|(i, name)| (name.as_str(), i))
        .collect();
    let lookup = |name: &str| index[name]; // declared names checked by validate()

    let mut sites = Vec::new();
    for op in circuit.flattened_ops() {
        let kind = op_kind(&op);
        let channel = models.require(kind)?;
        check_channel(kind, op_arity(&op), channel)?;
        let resolved = match &op {
            CircuitOp::Clifford { qubit, index } => Resolved::Clifford {
                qubit: lookup(qubit),
                index: *index,
            },
            CircuitOp::Gate { name, qubits } if name == "ril" => {
                if qubits.len() != 2 {
                    return Err(Error::Circuit(format!(
                        "gate 'ril' takes (data, ancilla), got {} qubits",
                        qubits.len()
                    )));
                }
                Resolved::Ril {
                    data: lookup(&qubits[0]),
                    ancilla: lookup(&qubits[1]),
                }
            }
            CircuitOp::Gate { name, qubits } => match Gate2::from_name(name) {
                Some(gate) if qubits.len() == 2 => Resolved::TwoQubit {
                    gate,
                    a: lookup(&qubits[0]),
                    b: lookup(&qubits[1]),
                },
                Some(_) => {
                    return Err(Error::Circuit(format!(
                        "gate '{name}' takes two qubits, got {}",
                        qubits.len()
                    )));
                }
                None => {
                    return Err(Error::Circuit(format!(
                        "unknown gate '{name}' (event executors support \
                         cnot, xcnot, swap, cz, ril)"
                    )));
                }
            },
            CircuitOp::Exchange { qubit, axis, theta } => Resolved::Rotation {
                qubit: lookup(qubit),
                axis: *axis,
                theta: *theta,
            },
            CircuitOp::Init { qubit } => Resolved::Init {
                qubit: lookup(qubit),
            },
            CircuitOp::Measure { qubit, key } => Resolved::Measure {
                qubit: lookup(qubit),
                key: key.clone(),
            },
            CircuitOp::Idle { .. } => Resolved::Idle,
            CircuitOp::Repeat { .. } => unreachable!("flattened"),
        };
        let multiplicity = match &op {
            CircuitOp::Idle { timesteps } => *timesteps,
            _ => 1,
        };
        sites.push(FaultSite {
            op,
            resolved,
            channel: channel.clone(),
            multiplicity,
        });
    }
    Ok(FaultyCircuit {
        source: circuit.clone(),
        qubits: circuit.qubits.clone(),
        sites,
        injections: Vec::new(),
    })
}

impl FaultyCircuit {
    /// The undecorated circuit this was built from.
    pub fn source(&self) -> &Circuit {
        &self.source
    }

    /// Number of fault locations (= flattened operation count).
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn op(&self, location: usize) -> &CircuitOp {
        &self.sites[location].op
    }

    pub fn potential_faults(&self) -> impl Iterator<Item = PotentialFault<'_>> {
        self.sites.iter().enumerate().map(|(i, site)| PotentialFault {
            location: i,
            channel: &site.channel,
            multiplicity: site.multiplicity,
        })
    }

    fn check_location(&self, location: usize) -> Result<()> {
        if location >= self.sites.len() {
            return Err(Error::arg(format!(
                "fault location {location} out of range 0..{}",
                self.sites.len()
            )));
        }
        Ok(())
    }

    fn qubit_index(&self, name: &str) -> Result<usize> {
        self.qubits
            .iter()
            .position(|q| q == name)
            .ok_or_else(|| Error::Circuit(format!("undeclared qubit '{name}'")))
    }

    /// Deterministically apply a register-wide Pauli (`label` has one IXYZ
    /// letter per declared qubit) after the operation at `location`.
    pub fn inject_pauli(&mut self, location: usize, label: &str) -> Result<&mut Self> {
        self.check_location(location)?;
        if label.len() != self.qubits.len() {
            return Err(Error::arg(format!(
                "injection label '{label}' must cover all {} qubits",
                self.qubits.len()
            )));
        }
        let mut mask_x = 0u64;
        let mut mask_z = 0u64;
        for (q, letter) in label.chars().enumerate() {
            let p = Pauli::from_char(letter)?;
            if p.xbit() {
                mask_x |= 1 << q;
            }
            if p.zbit() {
                mask_z |= 1 << q;
            }
        }
        self.injections
            .push((location, Injection::Pauli { mask_x, mask_z }));
        Ok(self)
    }

    /// Deterministically leak `qubit` after the operation at `location`.
    pub fn inject_leak(&mut self, location: usize, qubit: &str) -> Result<&mut Self> {
        self.check_location(location)?;
        let qubit = self.qubit_index(qubit)?;
        self.injections.push((location, Injection::Leak { qubit }));
        Ok(self)
    }

    /// Deterministic over/under-rotation `exp(-i·angle/2 · n̂·σ̂)` applied
    /// after the operation at `location` (coherent evaluator only).
    pub fn inject_rotation(
        &mut self,
        location: usize,
        qubit: &str,
        axis: [f64; 3],
        angle: f64,
    ) -> Result<&mut Self> {
        self.check_location(location)?;
        let qubit = self.qubit_index(qubit)?;
        let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-12 || !angle.is_finite() {
            return Err(Error::arg("rotation injection needs a finite axis and angle"));
        }
        let axis = [axis[0] / norm, axis[1] / norm, axis[2] / norm];
        self.injections
            .push((location, Injection::Rotation { qubit, axis, angle }));
        Ok(self)
    }

    fn injections_at(&self, location: usize) -> impl Iterator<Item = &Injection> {
        self.injections
            .iter()
            .filter(move |(loc, _)| *loc == location)
            .map(|(_, inj)| inj)
    }

    fn has_rotation_injections(&self) -> bool {
        self.injections
            .iter()
            .any(|(_, inj)| matches!(inj, Injection::Rotation { .. }))
    }

    fn has_leak_injections(&self) -> bool {
        self.injections
            .iter()
            .any(|(_, inj)| matches!(inj, Injection::Leak { .. }))
    }
}

// ---------------------------------------------------------------------------
// Shot records
// ---------------------------------------------------------------------------

/// Measurement outcomes of one shot, in circuit order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub outcomes: Vec<(String, u8)>,
    /// Leakage-return gates that met a leaked ancilla; their outcome is
    /// randomized because the underlying physics is unspecified.
    pub ril_randomized: u32,
}

impl ShotRecord {
    /// Outcome bits in circuit order.
    pub fn bits(&self) -> Vec<u8> {
        self.outcomes.iter().map(|(_, b)| *b).collect()
    }

    /// First outcome recorded under `key`.
    pub fn get(&self, key: &str) -> Option<u8> {
        self.outcomes
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, b)| *b)
    }
}

// ---------------------------------------------------------------------------
// Pauli-frame evaluator
// ---------------------------------------------------------------------------

/// Run one shot with the stabilizer-reference + Pauli-frame + leakage
/// evaluator. `seed` fully determines the outcome.
pub fn sample_shot_pauli(fc: &FaultyCircuit, seed: u64) -> Result<ShotRecord> {
    if fc.has_rotation_injections() {
        return Err(Error::Circuit(
            "rotation injections require the coherent evaluator".into(),
        ));
    }
    let n = fc.qubits.len();
    let mut tableau = Tableau::new(n);
    let mut frame = QubitFrame::new(n);
    let mut ideal_rng = seeding::rng_for(seed, "event-ideal", 0);
    let mut fault_rng = seeding::rng_for(seed, "event-fault", 0);
    let mut record = ShotRecord::default();

    for (location, site) in fc.sites.iter().enumerate() {
        let ch = &site.channel;
        match &site.resolved {
            Resolved::Clifford { qubit, index } => {
                let q = *qubit;
                let word = gates::clifford_word(*index)?;
                for letter in word.chars() {
                    tableau.apply(match letter {
                        'H' => TableauOp::H(q),
                        _ => TableauOp::S(q),
                    });
                }
                if !frame.leaked(q) {
                    for letter in word.chars() {
                        match letter {
                            'H' => frame.h(q),
                            _ => frame.s(q),
                        }
                    }
                }
                apply_channel(&mut frame, &[q], ch, &mut fault_rng);
            }
            Resolved::TwoQubit { gate, a, b } => {
                let (a, b) = (*a, *b);
                for op in gate.tableau_ops(a, b) {
                    tableau.apply(op);
                }
                match (frame.leaked(a), frame.leaked(b)) {
                    (false, false) => {
                        for op in gate.tableau_ops(a, b) {
                            match op {
                                TableauOp::H(q) => frame.h(q),
                                TableauOp::S(q) => frame.s(q),
                                TableauOp::Cnot(c, t) => frame.cnot(c, t),
                            }
                        }
                        apply_channel(&mut frame, &[a, b], ch, &mut fault_rng);
                    }
                    (true, true) => {
                        // No encoded content on either side; only leakage
                        // transitions are meaningful.
                        apply_channel(&mut frame, &[a, b], ch, &mut fault_rng);
                    }
                    (leaked_a, _) => {
                        // One leaked input: the encoded partner is not
                        // guaranteed to stay encoded — depolarize it and
                        // leak it with the gate's spread probability.
                        let partner = if leaked_a { b } else { a };
                        frame.randomize(partner, &mut fault_rng);
                        let u: f64 = fault_rng.gen();
                        if u < ch.spread.unwrap_or(0.0) {
                            frame.leak(partner);
                        }
                        leak_transitions(&mut frame, &[a, b], ch, &mut fault_rng);
                    }
                }
            }
            Resolved::Ril { data, ancilla } => {
                // Reference action is the identity: the ideal run never
                // leaks, the ancilla arrives in |0⟩ and stays there.
                let (d, a) = (*data, *ancilla);
                let ancilla_was_leaked = frame.leaked(a);
                if ancilla_was_leaked {
                    // Unspecified by the gate contract; randomize and flag.
                    frame.unleak(a);
                    frame.clear(a);
                    if fault_rng.gen::<bool>() {
                        frame.apply(a, Pauli::X);
                    }
                    record.ril_randomized += 1;
                }
                if frame.leaked(d) {
                    frame.unleak(d);
                    frame.randomize(d, &mut fault_rng);
                    if !ancilla_was_leaked {
                        frame.apply(a, Pauli::X);
                    }
                }
                apply_channel(&mut frame, &[d, a], ch, &mut fault_rng);
            }
            Resolved::Rotation { .. } => {
                return Err(Error::Circuit(format!(
                    "non-Clifford operation at location {location}: raw exchange \
                     pulses are not supported by the Pauli-frame evaluator"
                )));
            }
            Resolved::Init { qubit } => {
                let q = *qubit;
                tableau.reset(q, &mut ideal_rng);
                frame.clear(q);
                apply_channel(&mut frame, &[q], ch, &mut fault_rng);
            }
            Resolved::Measure { qubit, key } => {
                let q = *qubit;
                // Readout error is classical: the drawn Pauli flips the
                // reported bit (X/Y components) without disturbing the
                // post-measurement frame.
                let flip = draw_pauli(ch, &mut fault_rng)
                    .map(|label| {
                        let letter = label.chars().next().expect("arity 1");
                        Pauli::from_char(letter).expect("validated label").xbit()
                    })
                    .unwrap_or(false);
                leak_transitions(&mut frame, &[q], ch, &mut fault_rng);
                let ideal = tableau.measure(q, &mut ideal_rng);
                let mut bit = if frame.leaked(q) {
                    1 // a leaked qubit always reads out as a triplet
                } else {
                    ideal ^ u8::from(frame.pauli(q).xbit())
                };
                if flip {
                    bit ^= 1;
                }
                record.outcomes.push((key.clone(), bit));
            }
            Resolved::Idle => {
                for _ in 0..site.multiplicity {
                    for q in 0..n {
                        apply_channel(&mut frame, &[q], ch, &mut fault_rng);
                    }
                }
            }
        }
        for injection in fc.injections_at(location) {
            match injection {
                Injection::Pauli { mask_x, mask_z } => {
                    frame.fx ^= mask_x & !frame.leaked;
                    frame.fz ^= mask_z & !frame.leaked;
                }
                Injection::Leak { qubit } => frame.leak(*qubit),
                Injection::Rotation { .. } => unreachable!("checked above"),
            }
        }
    }
    Ok(record)
}

// ---------------------------------------------------------------------------
// Coherent evaluator
// ---------------------------------------------------------------------------

struct QubitState {
    n: usize,
    amps: Vec<Complex64>,
}

impl QubitState {
    fn new(n: usize) -> QubitState {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[0] = Complex64::new(1.0, 0.0);
        QubitState { n, amps }
    }

    /// Bit position of qubit `q` in the state index (qubit 0 is the MSB).
    fn pos(&self, q: usize) -> usize {
        self.n - 1 - q
    }

    fn apply_1q(&mut self, q: usize, m: &CMat) {
        let stride = 1usize << self.pos(q);
        let mut base = 0;
        while base < self.amps.len() {
            for off in base..base + stride {
                let a = self.amps[off];
                let b = self.amps[off + stride];
                self.amps[off] = m[(0, 0)] * a + m[(0, 1)] * b;
                self.amps[off + stride] = m[(1, 0)] * a + m[(1, 1)] * b;
            }
            base += 2 * stride;
        }
    }

    fn apply_2q(&mut self, qa: usize, qb: usize, m: &CMat) {
        let (pa, pb) = (self.pos(qa), self.pos(qb));
        let (ma, mb) = (1usize << pa, 1usize << pb);
        for i in 0..self.amps.len() {
            if i & ma != 0 || i & mb != 0 {
                continue;
            }
            let idx = [i, i | mb, i | ma, i | ma | mb];
            let old = idx.map(|j| self.amps[j]);
            for (row, &j) in idx.iter().enumerate() {
                self.amps[j] = (0..4).map(|col| m[(row, col)] * old[col]).sum();
            }
        }
    }

    fn apply_pauli(&mut self, q: usize, p: Pauli) {
        let m = match p {
            Pauli::I => return,
            Pauli::X => pauli_matrix([0.0, 0.0, 1.0, 0.0], [0.0; 4]),
            Pauli::Y => pauli_matrix([0.0; 4], [0.0, -1.0, 1.0, 0.0]),
            Pauli::Z => pauli_matrix([1.0, 0.0, 0.0, -1.0], [0.0; 4]),
        };
        self.apply_1q(q, &m);
    }

    fn prob_one(&self, q: usize) -> f64 {
        let m = 1usize << self.pos(q);
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & m != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Born-rule Z measurement with collapse.
    fn measure(&mut self, q: usize, rng: &mut ChaCha12Rng) -> u8 {
        let p1 = self.prob_one(q);
        let u: f64 = rng.gen();
        let outcome = u8::from(u < p1);
        let keep_prob = if outcome == 1 { p1 } else { 1.0 - p1 };
        let m = 1usize << self.pos(q);
        let scale = 1.0 / keep_prob.max(f64::MIN_POSITIVE).sqrt();
        for (i, amp) in self.amps.iter_mut().enumerate() {
            if (i & m != 0) == (outcome == 1) {
                *amp *= scale;
            } else {
                *amp = Complex64::new(0.0, 0.0);
            }
        }
        outcome
    }

    fn reset(&mut self, q: usize, rng: &mut ChaCha12Rng) {
        if self.measure(q, rng) == 1 {
            self.apply_pauli(q, Pauli::X);
        }
    }
}

fn pauli_matrix(re: [f64; 4], im: [f64; 4]) -> CMat {
    let mut m = CMat::zeros((2, 2));
    for (i, (r, v)) in re.iter().zip(&im).enumerate() {
        m[(i / 2, i % 2)] = Complex64::new(*r, *v);
    }
    m
}

fn rotation_matrix(axis: [f64; 3], angle: f64) -> CMat {
    let (s, c) = (0.5 * angle).sin_cos();
    let i = Complex64::i();
    let mut m = CMat::zeros((2, 2));
    m[(0, 0)] = Complex64::new(c, 0.0) - i * s * axis[2];
    m[(1, 1)] = Complex64::new(c, 0.0) + i * s * axis[2];
    m[(0, 1)] = -i * s * Complex64::new(axis[0], -axis[1]);
    m[(1, 0)] = -i * s * Complex64::new(axis[0], axis[1]);
    m
}

/// Run one shot with the dense one-spin-½-per-qubit evaluator.
///
/// Channel leakage, seepage and spread rates have no representation in this
/// state space and are ignored; Pauli fault rates and injected rotations
/// apply as unitaries. The leakage-return gate acts as the identity.
pub fn sample_shot_coherent(fc: &FaultyCircuit, seed: u64) -> Result<ShotRecord> {
    if fc.has_leak_injections() {
        return Err(Error::Circuit(
            "leak injections require the Pauli-frame evaluator".into(),
        ));
    }
    let n = fc.qubits.len();
    if n > MAX_COHERENT_QUBITS {
        return Err(Error::Circuit(format!(
            "{n} qubits exceeds the coherent-evaluator limit {MAX_COHERENT_QUBITS}"
        )));
    }
    let mut state = QubitState::new(n);
    let mut ideal_rng = seeding::rng_for(seed, "event-ideal", 0);
    let mut fault_rng = seeding::rng_for(seed, "event-fault", 0);
    let mut record = ShotRecord::default();

    let apply_fault_pauli =
        |state: &mut QubitState, qubits: &[usize], ch: &ErrorChannelRates, rng: &mut ChaCha12Rng| {
            if let Some(label) = draw_pauli(ch, rng) {
                for (letter, &q) in label.chars().zip(qubits) {
                    state.apply_pauli(q, Pauli::from_char(letter).expect("validated label"));
                }
            }
        };

    for (location, site) in fc.sites.iter().enumerate() {
        let ch = &site.channel;
        match &site.resolved {
            Resolved::Clifford { qubit, index } => {
                state.apply_1q(*qubit, &gates::clifford_unitary(*index)?);
                apply_fault_pauli(&mut state, &[*qubit], ch, &mut fault_rng);
            }
            Resolved::TwoQubit { gate, a, b } => {
                state.apply_2q(*a, *b, &gate.unitary());
                apply_fault_pauli(&mut state, &[*a, *b], ch, &mut fault_rng);
            }
            Resolved::Ril { data, ancilla } => {
                apply_fault_pauli(&mut state, &[*data, *ancilla], ch, &mut fault_rng);
            }
            Resolved::Rotation { qubit, axis, theta } => {
                state.apply_1q(*qubit, &gates::encoded_rotation(*axis, *theta));
                apply_fault_pauli(&mut state, &[*qubit], ch, &mut fault_rng);
            }
            Resolved::Init { qubit } => {
                state.reset(*qubit, &mut ideal_rng);
                apply_fault_pauli(&mut state, &[*qubit], ch, &mut fault_rng);
            }
            Resolved::Measure { qubit, key } => {
                let flip = draw_pauli(ch, &mut fault_rng)
                    .map(|label| {
                        let letter = label.chars().next().expect("arity 1");
                        Pauli::from_char(letter).expect("validated label").xbit()
                    })
                    .unwrap_or(false);
                let bit = state.measure(*qubit, &mut ideal_rng) ^ u8::from(flip);
                record.outcomes.push((key.clone(), bit));
            }
            Resolved::Idle => {
                for _ in 0..site.multiplicity {
                    for q in 0..n {
                        apply_fault_pauli(&mut state, &[q], ch, &mut fault_rng);
                    }
                }
            }
        }
        for injection in fc.injections_at(location) {
            match injection {
                Injection::Pauli { mask_x, mask_z } => {
                    for q in 0..n {
                        let m = 1u64 << q;
                        match (mask_x & m != 0, mask_z & m != 0) {
                            (true, false) => state.apply_pauli(q, Pauli::X),
                            (true, true) => state.apply_pauli(q, Pauli::Y),
                            (false, true) => state.apply_pauli(q, Pauli::Z),
                            (false, false) => {}
                        }
                    }
                }
                Injection::Rotation { qubit, axis, angle } => {
                    state.apply_1q(*qubit, &rotation_matrix(*axis, *angle));
                }
                Injection::Leak { .. } => unreachable!("checked above"),
            }
        }
    }
    Ok(record)
}

// ---------------------------------------------------------------------------
// Parallel drivers
// ---------------------------------------------------------------------------

/// Pauli-frame shots in parallel; shot `s` uses the stream derived from
/// `(master_seed, "event-shot", s)`.
pub fn run_shots_pauli(
    fc: &FaultyCircuit,
    shots: usize,
    master_seed: u64,
) -> Result<Vec<ShotRecord>> {
    (0..shots)
        .into_par_iter()
        .map(|s| sample_shot_pauli(fc, seeding::derive_seed(master_seed, "event-shot", s as u64)))
        .collect()
}

/// Coherent shots in parallel, same seed derivation as [`run_shots_pauli`].
pub fn run_shots_coherent(
    fc: &FaultyCircuit,
    shots: usize,
    master_seed: u64,
) -> Result<Vec<ShotRecord>> {
    (0..shots)
        .into_par_iter()
        .map(|s| {
            sample_shot_coherent(fc, seeding::derive_seed(master_seed, "event-shot", s as u64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    fn chacha(seed: u64) -> ChaCha12Rng {
        seeding::rng_for(seed, "test", 0)
    }

    #[test]
    fn tableau_reproduces_textbook_stabilizer_behaviour() {
        // |0⟩ measures 0, deterministically.
        let mut rng = chacha(1);
        let mut t = Tableau::new(1);
        assert_eq!(t.measure(0, &mut rng), 0);
        assert_eq!(t.measure(0, &mut rng), 0);

        // H|0⟩ collapses once, then repeats.
        let mut ones = 0;
        for seed in 0..1000 {
            let mut rng = chacha(seed);
            let mut t = Tableau::new(1);
            t.h(0);
            let first = t.measure(0, &mut rng);
            assert_eq!(t.measure(0, &mut rng), first);
            ones += u32::from(first);
        }
        assert!((400..=600).contains(&ones), "H|0> bias: {ones}/1000");

        // Bell pair: outcomes correlate; GHZ: all three agree.
        for seed in 0..200 {
            let mut rng = chacha(seed);
            let mut t = Tableau::new(3);
            t.h(0);
            t.cnot(0, 1);
            t.cnot(1, 2);
            let a = t.measure(0, &mut rng);
            let b = t.measure(1, &mut rng);
            let c = t.measure(2, &mut rng);
            assert_eq!(a, b);
            assert_eq!(b, c);
        }

        // Reset gives |0⟩ regardless of prior state.
        for seed in 0..50 {
            let mut rng = chacha(seed);
            let mut t = Tableau::new(2);
            t.h(0);
            t.cnot(0, 1);
            t.reset(0, &mut rng);
            assert_eq!(t.measure(0, &mut rng), 0);
        }

        // S² = Z on |+⟩: H S S H |0⟩ = X|0⟩ = |1⟩.
        let mut rng = chacha(9);
        let mut t = Tableau::new(1);
        t.h(0);
        t.s(0);
        t.s(0);
        t.h(0);
        assert_eq!(t.measure(0, &mut rng), 1);
    }

    /// Dense-evaluator kernels against explicit Kronecker products.
    #[test]
    fn dense_kernels_match_kronecker_oracle() {
        let h = {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let mut m = CMat::zeros((2, 2));
            m[(0, 0)] = Complex64::new(s, 0.0);
            m[(0, 1)] = Complex64::new(s, 0.0);
            m[(1, 0)] = Complex64::new(s, 0.0);
            m[(1, 1)] = Complex64::new(-s, 0.0);
            m
        };
        let eye2 = linalg::eye(2);
        let mut rng = chacha(3);

        // Random 3-qubit state.
        let mut amps: Vec<Complex64> = (0..8)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= norm);

        // H on qubit 1 of three: I ⊗ H ⊗ I.
        let mut st = QubitState { n: 3, amps: amps.clone() };
        st.apply_1q(1, &h);
        let full = linalg::kron(&linalg::kron(&eye2, &h), &eye2);
        for (i, amp) in st.amps.iter().enumerate() {
            let want: Complex64 = (0..8).map(|j| full[(i, j)] * amps[j]).sum();
            assert!((amp - want).norm() < 1e-12);
        }

        // CNOT on (2, 0): low qubit controls high qubit.
        let mut st = QubitState { n: 3, amps: amps.clone() };
        st.apply_2q(2, 0, &Gate2::Cnot.unitary());
        for (i, amp) in st.amps.iter().enumerate() {
            // control = bit 0 (qubit 2), target = bit 2 (qubit 0)
            let j = if i & 1 != 0 { i ^ 4 } else { i };
            assert!((amp - amps[j]).norm() < 1e-12, "cnot mismatch at {i}");
        }

        // SWAP exchanges qubits 0 and 2.
        let mut st = QubitState { n: 3, amps: amps.clone() };
        st.apply_2q(0, 2, &Gate2::Swap.unitary());
        for (i, amp) in st.amps.iter().enumerate() {
            let b0 = (i >> 2) & 1;
            let b2 = i & 1;
            let j = (i & 0b010) | (b0 << 0) | (b2 << 2);
            assert!((amp - amps[j]).norm() < 1e-12, "swap mismatch at {i}");
        }
    }

    /// The tableau's sampled computational-basis distribution matches dense
    /// Born probabilities on random Clifford circuits.
    #[test]
    fn tableau_sampling_matches_dense_born_probabilities() {
        let n = 3;
        let shots = 4000;
        for circuit_seed in 0..4u64 {
            let mut crng = chacha(100 + circuit_seed);
            let ops: Vec<TableauOp> = (0..30)
                .map(|_| match crng.gen_range(0..3) {
                    0 => TableauOp::H(crng.gen_range(0..n)),
                    1 => TableauOp::S(crng.gen_range(0..n)),
                    _ => {
                        let c = crng.gen_range(0..n);
                        let mut t = crng.gen_range(0..n);
                        while t == c {
                            t = crng.gen_range(0..n);
                        }
                        TableauOp::Cnot(c, t)
                    }
                })
                .collect();

            // Dense reference (kernels validated above). Tableau qubit q is
            // dense qubit q; both measure all qubits in order.
            let mut st = QubitState::new(n);
            for op in &ops {
                match *op {
                    TableauOp::H(q) => {
                        let s = std::f64::consts::FRAC_1_SQRT_2;
                        let mut m = CMat::zeros((2, 2));
                        m[(0, 0)] = Complex64::new(s, 0.0);
                        m[(0, 1)] = Complex64::new(s, 0.0);
                        m[(1, 0)] = Complex64::new(s, 0.0);
                        m[(1, 1)] = Complex64::new(-s, 0.0);
                        st.apply_1q(q, &m);
                    }
                    TableauOp::S(q) => {
                        let mut m = CMat::zeros((2, 2));
                        m[(0, 0)] = Complex64::new(1.0, 0.0);
                        m[(1, 1)] = Complex64::i();
                        st.apply_1q(q, &m);
                    }
                    TableauOp::Cnot(c, t) => st.apply_2q(c, t, &Gate2::Cnot.unitary()),
                }
            }

            let mut counts = vec![0u32; 1 << n];
            for shot in 0..shots {
                let mut rng = chacha(1000 + shot);
                let mut t = Tableau::new(n);
                for op in &ops {
                    t.apply(*op);
                }
                let mut string = 0usize;
                for q in 0..n {
                    string |= usize::from(t.measure(q, &mut rng)) << (n - 1 - q);
                }
                counts[string] += 1;
            }
            for (string, &count) in counts.iter().enumerate() {
                let p = st.amps[string].norm_sqr();
                let expect = p * shots as f64;
                let sigma = (shots as f64 * p * (1.0 - p)).sqrt().max(1.0);
                assert!(
                    (f64::from(count) - expect).abs() < 5.0 * sigma,
                    "circuit {circuit_seed}, outcome {string:03b}: \
                     {count} vs {expect:.1} ± {sigma:.1}"
                );
            }
        }
    }

    fn x_index() -> usize {
        let mut x = CMat::zeros((2, 2));
        x[(0, 1)] = Complex64::new(1.0, 0.0);
        x[(1, 0)] = Complex64::new(1.0, 0.0);
        gates::match_clifford(&x).expect("X is a Clifford")
    }

    fn h_index() -> usize {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut h = CMat::zeros((2, 2));
        h[(0, 0)] = Complex64::new(s, 0.0);
        h[(0, 1)] = Complex64::new(s, 0.0);
        h[(1, 0)] = Complex64::new(s, 0.0);
        h[(1, 1)] = Complex64::new(-s, 0.0);
        gates::match_clifford(&h).expect("H is a Clifford")
    }

    fn two_qubit_parity_circuit(rounds: usize) -> Circuit {
        let mut c = Circuit::new(["d0", "d1", "a"]);
        c.push(CircuitOp::Init { qubit: "d0".into() });
        c.push(CircuitOp::Init { qubit: "d1".into() });
        for r in 0..rounds {
            c.push(CircuitOp::Init { qubit: "a".into() });
            c.push(CircuitOp::Gate {
                name: "cnot".into(),
                qubits: vec!["d0".into(), "a".into()],
            });
            c.push(CircuitOp::Gate {
                name: "cnot".into(),
                qubits: vec!["d1".into(), "a".into()],
            });
            c.push(CircuitOp::Measure {
                qubit: "a".into(),
                key: format!("s{r}"),
            });
        }
        for d in ["d0", "d1"] {
            c.push(CircuitOp::Measure {
                qubit: d.into(),
                key: format!("m.{d}"),
            });
        }
        c
    }

    #[test]
    fn noise_free_sampling_is_ideal_and_fault_count_matches_gate_count() {
        let circuit = two_qubit_parity_circuit(3);
        let fc = inject_faults(&circuit, &EventModels::zeroed_for(&circuit)).unwrap();
        assert_eq!(fc.len(), circuit.flattened_ops().len());
        assert_eq!(fc.potential_faults().count(), fc.len());
        assert_eq!(fc.source(), &circuit);
        for seed in 0..20 {
            let rec = sample_shot_pauli(&fc, seed).unwrap();
            assert!(rec.bits().iter().all(|&b| b == 0), "seed {seed}");
            assert_eq!(rec.ril_randomized, 0);
        }
    }

    #[test]
    fn missing_models_and_unknown_gates_are_rejected_by_name() {
        let circuit = two_qubit_parity_circuit(1);
        let mut models = EventModels::zeroed_for(&circuit);
        models.channels.remove("cnot");
        let err = inject_faults(&circuit, &models).unwrap_err().to_string();
        assert!(err.contains("cnot"), "{err}");

        let mut c = Circuit::new(["q", "p"]);
        c.push(CircuitOp::Gate {
            name: "iswap".into(),
            qubits: vec!["q".into(), "p".into()],
        });
        let err = inject_faults(&c, &EventModels::zeroed_for(&c))
            .unwrap_err()
            .to_string();
        assert!(err.contains("iswap"), "{err}");
    }

    #[test]
    fn channel_validation_rejects_unphysical_rates() {
        let circuit = two_qubit_parity_circuit(1);
        let mut models = EventModels::zeroed_for(&circuit);
        models.set("cnot", pauli_channel("XX", 1.4));
        assert!(inject_faults(&circuit, &models).is_err());

        let mut models = EventModels::zeroed_for(&circuit);
        models.set("cnot", pauli_channel("X", 0.01)); // wrong arity
        assert!(inject_faults(&circuit, &models).is_err());

        let mut models = EventModels::zeroed_for(&circuit);
        let mut ch = zero_channel(1);
        ch.leakage = -0.25;
        models.set("idle", ch);
        let mut with_idle = circuit.clone();
        with_idle.push(CircuitOp::Idle { timesteps: 1 });
        // The parity circuit has no idle op, so decorate one in.
        assert!(inject_faults(&with_idle, &models).is_err());
    }

    #[test]
    fn injected_flip_rate_matches_binomial_statistics() {
        let mut c = Circuit::new(["q"]);
        c.push(CircuitOp::Init { qubit: "q".into() });
        c.push(CircuitOp::Clifford {
            qubit: "q".into(),
            index: 0,
        });
        c.push(CircuitOp::Measure {
            qubit: "q".into(),
            key: "m".into(),
        });
        let p = 0.05;
        let mut models = EventModels::zeroed_for(&c);
        models.set("clifford", pauli_channel("X", p));
        let fc = inject_faults(&c, &models).unwrap();
        let shots = 100_000;
        let records = run_shots_pauli(&fc, shots, 7).unwrap();
        let ones: u32 = records.iter().map(|r| u32::from(r.bits()[0])).sum();
        let expect = p * shots as f64;
        let sigma = (shots as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (f64::from(ones) - expect).abs() < 4.0 * sigma,
            "{ones} vs {expect:.0} ± {sigma:.0}"
        );
    }

    #[test]
    fn deterministic_injections_xor_exactly() {
        let circuit = two_qubit_parity_circuit(3);
        let models = EventModels::zeroed_for(&circuit);
        let fc0 = inject_faults(&circuit, &models).unwrap();

        // Fault A: X on d0 after round 0's syndrome measure (location 5);
        // fault B: X on d1 after round 1's (location 9).
        let mut fa = fc0.clone();
        fa.inject_pauli(5, "XII").unwrap();
        let mut fb = fc0.clone();
        fb.inject_pauli(9, "IXI").unwrap();
        let mut fab = fc0.clone();
        fab.inject_pauli(5, "XII").unwrap();
        fab.inject_pauli(9, "IXI").unwrap();

        for seed in 0..30 {
            let base = sample_shot_pauli(&fc0, seed).unwrap().bits();
            let a = sample_shot_pauli(&fa, seed).unwrap().bits();
            let b = sample_shot_pauli(&fb, seed).unwrap().bits();
            let ab = sample_shot_pauli(&fab, seed).unwrap().bits();
            let sig = |run: &[u8]| -> Vec<u8> {
                run.iter().zip(&base).map(|(x, y)| x ^ y).collect()
            };
            let want: Vec<u8> = sig(&a).iter().zip(sig(&b).iter()).map(|(x, y)| x ^ y).collect();
            assert_eq!(sig(&ab), want, "seed {seed}");
            // And the single-fault signatures are the expected ones: an X on
            // a data qubit flips every later syndrome and its own readout.
            assert_eq!(sig(&a), vec![0, 1, 1, 1, 0], "seed {seed}");
            assert_eq!(sig(&b), vec![0, 0, 1, 0, 1], "seed {seed}");
        }
    }

    #[test]
    fn leaked_qubits_read_triplet_until_reset() {
        // One data qubit, measured every round without reinitialization.
        let mut c = Circuit::new(["q"]);
        c.push(CircuitOp::Init { qubit: "q".into() });
        for r in 0..4 {
            c.push(CircuitOp::Measure {
                qubit: "q".into(),
                key: format!("r{r}"),
            });
        }
        let fc0 = inject_faults(&c, &EventModels::zeroed_for(&c)).unwrap();
        let mut leaked = fc0.clone();
        leaked.inject_leak(1, "q").unwrap(); // after the first measurement
        for seed in 0..10 {
            assert_eq!(sample_shot_pauli(&leaked, seed).unwrap().bits(), [0, 1, 1, 1]);
        }

        // An LRU (init ancilla → ril → measure ancilla) clears the leak and
        // reports it on the ancilla.
        let mut c = Circuit::new(["d", "a"]);
        c.push(CircuitOp::Init { qubit: "d".into() });
        c.push(CircuitOp::Init { qubit: "a".into() });
        c.push(CircuitOp::Gate {
            name: "ril".into(),
            qubits: vec!["d".into(), "a".into()],
        });
        c.push(CircuitOp::Measure {
            qubit: "a".into(),
            key: "lru0".into(),
        });
        c.push(CircuitOp::Init { qubit: "a".into() });
        c.push(CircuitOp::Gate {
            name: "ril".into(),
            qubits: vec!["d".into(), "a".into()],
        });
        c.push(CircuitOp::Measure {
            qubit: "a".into(),
            key: "lru1".into(),
        });
        let fc0 = inject_faults(&c, &EventModels::zeroed_for(&c)).unwrap();
        let mut leaked = fc0.clone();
        leaked.inject_leak(0, "d").unwrap();
        for seed in 0..10 {
            let rec = sample_shot_pauli(&leaked, seed).unwrap();
            // First LRU sees the leak (ancilla 1), second sees none.
            assert_eq!(rec.get("lru0"), Some(1));
            assert_eq!(rec.get("lru1"), Some(0));
            assert_eq!(rec.ril_randomized, 0);
        }

        // A leaked ancilla makes the gate action unspecified: flagged.
        let mut leaked_anc = fc0.clone();
        leaked_anc.inject_leak(1, "a").unwrap();
        let mut seen = [false, false];
        for seed in 0..40 {
            let rec = sample_shot_pauli(&leaked_anc, seed).unwrap();
            assert_eq!(rec.ril_randomized, 1);
            seen[rec.get("lru0").unwrap() as usize] = true;
        }
        assert_eq!(seen, [true, true], "randomized outcome never varied");
    }

    #[test]
    fn leakage_accumulates_monotonically_without_lrus() {
        let p_leak = 0.02;
        let rounds = 6;
        let mut c = Circuit::new(["q"]);
        c.push(CircuitOp::Init { qubit: "q".into() });
        for r in 0..rounds {
            c.push(CircuitOp::Idle { timesteps: 1 });
            c.push(CircuitOp::Measure {
                qubit: "q".into(),
                key: format!("r{r}"),
            });
        }
        let mut models = EventModels::zeroed_for(&c);
        let mut idle = zero_channel(1);
        idle.leakage = p_leak;
        models.set("idle", idle);
        let fc = inject_faults(&c, &models).unwrap();
        let shots = 40_000;
        let records = run_shots_pauli(&fc, shots, 11).unwrap();
        let mut prev = -1.0;
        for r in 0..rounds {
            let ones: u32 = records
                .iter()
                .map(|rec| u32::from(rec.get(&format!("r{r}")).unwrap()))
                .sum();
            let rate = f64::from(ones) / shots as f64;
            // Monotone growth toward 1 − (1−p)^(r+1), within 4σ.
            let expect = 1.0 - (1.0 - p_leak).powi(r as i32 + 1);
            let sigma = (expect * (1.0 - expect) / shots as f64).sqrt();
            assert!(
                (rate - expect).abs() < 4.0 * sigma,
                "round {r}: {rate:.4} vs {expect:.4}"
            );
            assert!(rate > prev, "leak fraction decreased at round {r}");
            prev = rate;
        }
    }

    #[test]
    fn leaked_partner_is_depolarized_and_spread_leaks() {
        // d leaked, then cnot(d, t): t should depolarize (measure ~50/50)
        // and leak with the spread probability.
        let spread = 0.3;
        let mut c = Circuit::new(["d", "t"]);
        c.push(CircuitOp::Init { qubit: "d".into() });
        c.push(CircuitOp::Init { qubit: "t".into() });
        c.push(CircuitOp::Gate {
            name: "cnot".into(),
            qubits: vec!["d".into(), "t".into()],
        });
        c.push(CircuitOp::Measure {
            qubit: "t".into(),
            key: "t".into(),
        });
        let mut models = EventModels::zeroed_for(&c);
        let mut ch = zero_channel(2);
        ch.spread = Some(spread);
        models.set("cnot", ch);
        let fc0 = inject_faults(&c, &models).unwrap();
        let mut fc = fc0.clone();
        fc.inject_leak(1, "d").unwrap();
        let shots = 20_000;
        let records = run_shots_pauli(&fc, shots, 13).unwrap();
        let ones: u32 = records.iter().map(|r| u32::from(r.bits()[0])).sum();
        // P(read 1) = spread·1 + (1−spread)·½ = ½(1+spread).
        let expect = 0.5 * (1.0 + spread);
        let sigma = (expect * (1.0 - expect) / shots as f64).sqrt();
        assert!(
            (f64::from(ones) / shots as f64 - expect).abs() < 4.0 * sigma,
            "{} vs {expect}",
            f64::from(ones) / shots as f64
        );
        // Without the injection nothing happens.
        let clean = run_shots_pauli(&fc0, 100, 13).unwrap();
        assert!(clean.iter().all(|r| r.bits() == [0]));
    }

    #[test]
    fn shots_are_reproducible_and_seed_sensitive() {
        let circuit = two_qubit_parity_circuit(2);
        let mut models = EventModels::zeroed_for(&circuit);
        models.set("cnot", depolarizing_channel(2, 0.2));
        models.set("measure", pauli_channel("X", 0.1));
        let fc = inject_faults(&circuit, &models).unwrap();
        let a = run_shots_pauli(&fc, 64, 5).unwrap();
        let b = run_shots_pauli(&fc, 64, 5).unwrap();
        assert_eq!(a, b);
        let c = run_shots_pauli(&fc, 64, 6).unwrap();
        assert_ne!(a, c);
        let records: std::collections::BTreeSet<Vec<u8>> =
            a.iter().map(ShotRecord::bits).collect();
        assert!(records.len() > 1, "noise never fired");
    }

    #[test]
    fn evaluators_agree_bitwise_on_deterministic_clifford_circuits() {
        let x = x_index();
        let h = h_index();
        // Every measurement below is deterministic, so the two evaluators
        // must agree bit for bit even though they consume randomness
        // differently.
        let mut c = Circuit::new(["a", "b", "c"]);
        for q in ["a", "b", "c"] {
            c.push(CircuitOp::Init { qubit: q.into() });
        }
        c.push(CircuitOp::Clifford {
            qubit: "a".into(),
            index: x,
        });
        c.push(CircuitOp::Gate {
            name: "cnot".into(),
            qubits: vec!["a".into(), "b".into()],
        });
        // c: |0⟩ → |+⟩, so the X-controlled NOT acts as the identity,
        // then back to |0⟩.
        c.push(CircuitOp::Clifford {
            qubit: "c".into(),
            index: h,
        });
        c.push(CircuitOp::Gate {
            name: "xcnot".into(),
            qubits: vec!["c".into(), "b".into()],
        });
        c.push(CircuitOp::Clifford {
            qubit: "c".into(),
            index: h,
        });
        c.push(CircuitOp::Gate {
            name: "swap".into(),
            qubits: vec!["a".into(), "c".into()],
        });
        // a is now |0⟩: the phase gate does nothing observable.
        c.push(CircuitOp::Gate {
            name: "cz".into(),
            qubits: vec!["a".into(), "b".into()],
        });
        for q in ["a", "b", "c"] {
            c.push(CircuitOp::Measure {
                qubit: q.into(),
                key: q.into(),
            });
        }
        let fc = inject_faults(&c, &EventModels::zeroed_for(&c)).unwrap();
        for seed in 0..10 {
            let p = sample_shot_pauli(&fc, seed).unwrap();
            let q = sample_shot_coherent(&fc, seed).unwrap();
            assert_eq!(p, q, "seed {seed}");
            assert_eq!(p.get("a"), Some(0), "seed {seed}");
            assert_eq!(p.get("b"), Some(1), "seed {seed}");
            assert_eq!(p.get("c"), Some(1), "swap moved a's X to c");
        }
    }

    #[test]
    fn coherent_rotation_faults_match_twirled_pauli_rates() {
        let epsilon = 0.22f64;
        let p_twirl = (0.5 * epsilon).sin().powi(2);
        let mut c = Circuit::new(["q"]);
        c.push(CircuitOp::Init { qubit: "q".into() });
        c.push(CircuitOp::Idle { timesteps: 1 });
        c.push(CircuitOp::Measure {
            qubit: "q".into(),
            key: "m".into(),
        });
        let shots = 50_000;

        // Coherent: deterministic over-rotation about x at the idle.
        let fc0 = inject_faults(&c, &EventModels::zeroed_for(&c)).unwrap();
        let mut coherent = fc0.clone();
        coherent
            .inject_rotation(1, "q", [1.0, 0.0, 0.0], epsilon)
            .unwrap();
        let rc = run_shots_coherent(&coherent, shots, 17).unwrap();
        let rate_c: f64 =
            rc.iter().map(|r| f64::from(r.bits()[0])).sum::<f64>() / shots as f64;

        // Pauli: the twirled channel with the equivalent flip rate.
        let mut models = EventModels::zeroed_for(&c);
        models.set("idle", pauli_channel("X", p_twirl));
        let fp = inject_faults(&c, &models).unwrap();
        let rp = run_shots_pauli(&fp, shots, 17).unwrap();
        let rate_p: f64 =
            rp.iter().map(|r| f64::from(r.bits()[0])).sum::<f64>() / shots as f64;

        assert!(
            (rate_c - rate_p).abs() / rate_p < 0.2,
            "coherent {rate_c:.4} vs twirled {rate_p:.4}"
        );
        assert!((rate_c - p_twirl).abs() / p_twirl < 0.2);
    }

    #[test]
    fn executor_restrictions_are_enforced() {
        let mut c = Circuit::new(["q"]);
        c.push(CircuitOp::Init { qubit: "q".into() });
        c.push(CircuitOp::Exchange {
            qubit: "q".into(),
            axis: QubitAxis::Z,
            theta: 0.3,
        });
        c.push(CircuitOp::Measure {
            qubit: "q".into(),
            key: "m".into(),
        });
        let fc = inject_faults(&c, &EventModels::zeroed_for(&c)).unwrap();
        let err = sample_shot_pauli(&fc, 0).unwrap_err().to_string();
        assert!(err.contains("non-Clifford"), "{err}");
        // The coherent evaluator takes it in stride.
        assert!(sample_shot_coherent(&fc, 0).is_ok());

        // Injection kind restrictions.
        let mut c = Circuit::new(["q"]);
        c.push(CircuitOp::Init { qubit: "q".into() });
        let fc0 = inject_faults(&c, &EventModels::zeroed_for(&c)).unwrap();
        let mut with_leak = fc0.clone();
        with_leak.inject_leak(0, "q").unwrap();
        assert!(sample_shot_coherent(&with_leak, 0).is_err());
        let mut with_rot = fc0.clone();
        with_rot.inject_rotation(0, "q", [0.0, 0.0, 1.0], 0.1).unwrap();
        assert!(sample_shot_pauli(&with_rot, 0).is_err());
    }

    #[test]
    fn xcnot_unitary_is_the_conjugated_cnot() {
        // Spot-check the dense table against the tableau decomposition on
        // stabilizer inputs: X on the control propagates to ... itself;
        // Z on the control flips the target's Z... i.e. roles of X and Z
        // swap relative to CNOT.
        let u = Gate2::Xcnot.unitary();
        assert!((linalg::dagger(&u).dot(&u) - linalg::eye(4))
            .iter()
            .all(|e| e.norm() < 1e-12));
        // |−0⟩ → |−0⟩, |+0⟩ → |+0⟩? No: control in X basis, target flips on
        // |−⟩. Check columns directly: X⊗I commutes, Z⊗I maps to Z⊗X.
        let mut frame = QubitFrame::new(2);
        frame.apply(0, Pauli::Z);
        for op in Gate2::Xcnot.tableau_ops(0, 1) {
            match op {
                TableauOp::H(q) => frame.h(q),
                TableauOp::S(q) => frame.s(q),
                TableauOp::Cnot(c, t) => frame.cnot(c, t),
            }
        }
        assert_eq!(frame.pauli(0), Pauli::Z);
        assert_eq!(frame.pauli(1), Pauli::X);
    }
}
