//! Pulse-sequence synthesis for encoded-qubit targets.
//!
//! Two stages share one objective. Replica-exchange Monte Carlo explores the
//! discrete side of the problem — which exchange axis fires in which timestep
//! — with hot replicas wandering freely and cold ones polishing, swapping
//! configurations between neighbours so good patterns anneal downwards. Once
//! the pattern is right, [`grape_refine`] descends on the continuous angles
//! with analytic gradients while holding the axis pattern fixed.
//!
//! The objective is an infidelity. For a unitary target it is `1 − F` with
//! `F` the gauge-averaged process fidelity on the encoded block; for a
//! reset-if-leaked target a second clause scores the probability that leaked
//! population returns to the qubit subspace with the ancilla flipped. Both
//! stages evaluate it by propagating only the recoupled basis columns the
//! score touches (sixteen for a two-qubit block) rather than the full
//! 64-dimensional unitary, which keeps a single evaluation at a few hundred
//! pair operations.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::encoding::{DfsBasis, GaqqMap, Orientation};
use crate::error::Error;
use crate::Result;
use crate::gates::{verify_ril, RilReport, SeqEntry, SeqTarget};
use crate::linalg::{self, CMat};
use crate::noise::standard_normal;
use crate::seeding;
use crate::spin::exchange_kernel;

/// Smallest angle kept on the grid; exact zeros mean "no pulse here".
const MIN_THETA: f64 = 1e-12;

/// Proposals between neighbour-exchange attempts.
const EXCHANGE_STRIDE: usize = 64;

/// Default geometric temperature ladder endpoints.
const T_HOT: f64 = 0.4;
const T_COLD: f64 = 1e-6;

/// What a synthesis run is asked to produce.
#[derive(Clone, Debug)]
pub enum TargetKind {
    /// A unitary on the encoded block, dimension `2^k`.
    Unitary { matrix: CMat },
    /// The reset-if-leaked contract on a (data, ancilla) pair.
    Ril,
}

/// A synthesis problem: the target, the block geometry and the pulse grid.
#[derive(Clone, Debug)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub orientations: Vec<Orientation>,
    /// Block-local spin pairs the optimizer may pulse.
    pub axes: Vec<(usize, usize)>,
    pub n_timesteps: usize,
    /// Optional per-timestep restriction to a subset of `axes` (by index).
    pub allowed: Option<Vec<Vec<usize>>>,
}

impl TargetSpec {
    pub fn n_qubits(&self) -> usize {
        self.orientations.len()
    }

    pub fn n_spins(&self) -> usize {
        3 * self.n_qubits()
    }

    fn axis_allowed(&self, t: usize, a: usize) -> bool {
        match &self.allowed {
            None => true,
            Some(sets) => sets[t].contains(&a),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_qubits();
        if !(1..=2).contains(&k) {
            return Err(Error::Synth(format!(
                "specs cover 1 or 2 encoded qubits, got {k}"
            )));
        }
        if self.n_timesteps == 0 {
            return Err(Error::Synth("timestep budget must be at least 1".into()));
        }
        if self.axes.is_empty() {
            return Err(Error::Synth("no exchange axes to place pulses on".into()));
        }
        let n = self.n_spins();
        for (a, &(j, kk)) in self.axes.iter().enumerate() {
            if j >= n || kk >= n || j == kk {
                return Err(Error::Synth(format!("axis {a} is not a spin pair: ({j},{kk})")));
            }
            for &(x, y) in &self.axes[..a] {
                if (x, y) == (j, kk) || (y, x) == (j, kk) {
                    return Err(Error::Synth(format!("axis ({j},{kk}) listed twice")));
                }
            }
        }
        if let Some(sets) = &self.allowed {
            if sets.len() != self.n_timesteps {
                return Err(Error::Synth(format!(
                    "allowed-axis table covers {} timesteps, budget is {}",
                    sets.len(),
                    self.n_timesteps
                )));
            }
            for (t, set) in sets.iter().enumerate() {
                if set.is_empty() {
                    return Err(Error::Synth(format!("timestep {t} allows no axes")));
                }
                if set.iter().any(|&a| a >= self.axes.len()) {
                    return Err(Error::Synth(format!("timestep {t} allows an unknown axis")));
                }
            }
        }
        match &self.kind {
            TargetKind::Unitary { matrix } => {
                let d = 1usize << k;
                if matrix.dim() != (d, d) {
                    return Err(Error::Synth(format!(
                        "target for {k} qubit(s) must be {d}×{d}"
                    )));
                }
                if !linalg::is_unitary(matrix, 1e-9) {
                    return Err(Error::Synth("target matrix is not unitary".into()));
                }
            }
            TargetKind::Ril => {
                if k != 2 {
                    return Err(Error::Synth("reset-if-leaked needs a (data, ancilla) pair".into()));
                }
            }
        }
        Ok(())
    }
}

/// Nearest-neighbour exchange axes of a `3k`-spin chain.
pub fn chain_axes(qubits: usize) -> Vec<(usize, usize)> {
    (0..3 * qubits - 1).map(|j| (j, j + 1)).collect()
}

/// CNOT on the encoded pair; the first qubit controls.
pub fn cnot_target() -> CMat {
    let mut m = CMat::zeros((4, 4));
    let one = Complex64::new(1.0, 0.0);
    m[(0, 0)] = one;
    m[(1, 1)] = one;
    m[(2, 3)] = one;
    m[(3, 2)] = one;
    m
}

/// CNOT conjugated by Hadamard on the control.
pub fn xcnot_target() -> CMat {
    let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut h2 = CMat::zeros((2, 2));
    h2[(0, 0)] = s;
    h2[(0, 1)] = s;
    h2[(1, 0)] = s;
    h2[(1, 1)] = -s;
    let h = linalg::kron(&h2, &linalg::eye(2));
    h.dot(&cnot_target()).dot(&h)
}

/// Two-qubit spec on the canonical six-spin chain.
pub fn entangler_spec(target: CMat, n_timesteps: usize) -> TargetSpec {
    TargetSpec {
        kind: TargetKind::Unitary { matrix: target },
        orientations: vec![Orientation::Zn, Orientation::Nz],
        axes: chain_axes(2),
        n_timesteps,
        allowed: None,
    }
}

/// Single-qubit spec on one triple.
pub fn single_qubit_spec(target: CMat, orientation: Orientation, n_timesteps: usize) -> TargetSpec {
    TargetSpec {
        kind: TargetKind::Unitary { matrix: target },
        orientations: vec![orientation],
        axes: chain_axes(1),
        n_timesteps,
        allowed: None,
    }
}

/// Reset-if-leaked spec on the canonical six-spin chain.
pub fn ril_spec(n_timesteps: usize) -> TargetSpec {
    TargetSpec {
        kind: TargetKind::Ril,
        orientations: vec![Orientation::Zn, Orientation::Nz],
        axes: chain_axes(2),
        n_timesteps,
        allowed: None,
    }
}

/// Outcome of a synthesis stage.
#[derive(Clone, Debug)]
pub struct SynthResult {
    /// `rows[t][a]` = exchange angle on axis `a` during timestep `t`.
    pub rows: Vec<Vec<f64>>,
    /// Objective re-evaluated on the returned rows.
    pub objective: f64,
    /// Gauge-averaged score against the target (worst clause for RIL).
    pub fidelity: f64,
    /// Per-clause scores when the target is reset-if-leaked.
    pub ril: Option<RilReport>,
    /// Refinement stopped above tolerance.
    pub stalled: bool,
    /// Objective of the coldest replica per exchange round, or per accepted
    /// descent step.
    pub trace: Vec<f64>,
}

impl SynthResult {
    /// Package the rows as a verified database entry.
    pub fn to_seq_entry(&self, name: &str, spec: &TargetSpec) -> Result<SeqEntry> {
        let target = match &spec.kind {
            TargetKind::Unitary { matrix } => SeqTarget::Unitary {
                matrix: matrix
                    .outer_iter()
                    .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
                    .collect(),
            },
            TargetKind::Ril => SeqTarget::Ril,
        };
        let entry = SeqEntry {
            name: name.to_string(),
            orientations: spec.orientations.clone(),
            axes: spec.axes.clone(),
            rows: self.rows.clone(),
            declared_timesteps: self.rows.len(),
            declared_pulses: self
                .rows
                .iter()
                .map(|r| r.iter().filter(|&&x| x != 0.0).count())
                .sum(),
            target,
        };
        entry.verify()?;
        Ok(entry)
    }
}

// ---------------------------------------------------------------------------
// Objective evaluation
// ---------------------------------------------------------------------------

struct Term {
    out: usize,
    inp: usize,
    coeff: Complex64,
}

struct Group {
    scale: f64,
    terms: Vec<Term>,
}

struct Clause {
    weight: f64,
    groups: Vec<Group>,
}

/// Shared evaluator: basis columns plus the bilinear score they feed.
struct Evaluator {
    n_spins: usize,
    dim: usize,
    axes: Vec<(usize, usize)>,
    in_cols: Vec<Vec<Complex64>>,
    out_cols: Vec<Vec<Complex64>>,
    clauses: Vec<Clause>,
    /// Flattened copies of `in_cols`/`out_cols`, one column per `dim` chunk.
    flat_in: Vec<Complex64>,
    flat_out: Vec<Complex64>,
    /// Per-axis basis indices with both pair bits clear.
    quads: Vec<Vec<u32>>,
}

/// Scratch columns reused across evaluations.
struct Workspace {
    flat: Vec<Complex64>,
}

/// Recoupled basis column `⊗_q iso_q[:, 2t_q + s_q]` for ququart digits `t`
/// and gauge bits `s` (qubit 0 owns the most significant digit of each).
fn basis_column(isos: &[CMat], t: usize, s: usize) -> Vec<Complex64> {
    let k = isos.len();
    let mut col = vec![Complex64::new(1.0, 0.0)];
    for (q, iso) in isos.iter().enumerate() {
        let tq = (t >> (2 * (k - 1 - q))) & 3;
        let sq = (s >> (k - 1 - q)) & 1;
        let sub = iso.column(2 * tq + sq);
        let mut next = vec![Complex64::default(); col.len() * 8];
        for (i, &a) in col.iter().enumerate() {
            for (r, &b) in sub.iter().enumerate() {
                next[i * 8 + r] = a * b;
            }
        }
        col = next;
    }
    col
}

#[derive(Default)]
struct ColumnStore {
    index: BTreeMap<(usize, usize), usize>,
    cols: Vec<Vec<Complex64>>,
}

impl ColumnStore {
    fn intern(&mut self, isos: &[CMat], t: usize, s: usize) -> usize {
        if let Some(&i) = self.index.get(&(t, s)) {
            return i;
        }
        let i = self.cols.len();
        self.cols.push(basis_column(isos, t, s));
        self.index.insert((t, s), i);
        i
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Apply a 4×4 kernel (row-major over local indices `2σ_j+σ_k`) to a raw
/// amplitude slice; spin 0 is the most significant bit.
fn apply_kernel(amps: &mut [Complex64], n_spins: usize, j: usize, k: usize, m: &[Complex64; 16]) {
    let mj = 1usize << (n_spins - 1 - j);
    let mk = 1usize << (n_spins - 1 - k);
    for idx in 0..amps.len() {
        if idx & (mj | mk) == 0 {
            let i01 = idx | mk;
            let i10 = idx | mj;
            let i11 = idx | mj | mk;
            let a = [amps[idx], amps[i01], amps[i10], amps[i11]];
            amps[idx] = m[0] * a[0] + m[1] * a[1] + m[2] * a[2] + m[3] * a[3];
            amps[i01] = m[4] * a[0] + m[5] * a[1] + m[6] * a[2] + m[7] * a[3];
            amps[i10] = m[8] * a[0] + m[9] * a[1] + m[10] * a[2] + m[11] * a[3];
            amps[i11] = m[12] * a[0] + m[13] * a[1] + m[14] * a[2] + m[15] * a[3];
        }
    }
}

/// `dst = (S_j·S_k) src`, using `S_j·S_k = SWAP/2 − I/4`.
fn apply_heisenberg(src: &[Complex64], dst: &mut [Complex64], n_spins: usize, j: usize, k: usize) {
    let mj = 1usize << (n_spins - 1 - j);
    let mk = 1usize << (n_spins - 1 - k);
    for (idx, d) in dst.iter_mut().enumerate() {
        let bj = idx & mj != 0;
        let bk = idx & mk != 0;
        *d = if bj == bk {
            src[idx] * 0.25
        } else {
            src[idx ^ mj ^ mk] * 0.5 - src[idx] * 0.25
        };
    }
}

impl Evaluator {
    fn new(spec: &TargetSpec) -> Result<Self> {
        spec.validate()?;
        let k = spec.n_qubits();
        let gauges = 1usize << k;
        let isos: Vec<CMat> = spec
            .orientations
            .iter()
            .map(|&o| DfsBasis::with_orientation(o).isometry().clone())
            .collect();
        let mut ins = ColumnStore::default();
        let mut outs = ColumnStore::default();
        let mut clauses = Vec::new();
        let weight = 1.0 / (gauges as f64).sqrt();
        match &spec.kind {
            TargetKind::Unitary { matrix } => {
                let d = 1usize << k;
                // Ququart index whose digits are the bits of the encoded label.
                let t_enc = |b: usize| -> usize {
                    (0..k).fold(0, |acc, q| acc * 4 + ((b >> (k - 1 - q)) & 1))
                };
                let scale = 1.0 / ((d * d) as f64);
                let mut groups = Vec::new();
                for s_out in 0..gauges {
                    for s_in in 0..gauges {
                        let mut terms = Vec::new();
                        for o in 0..d {
                            for i in 0..d {
                                let amp = matrix[(o, i)];
                                if amp.norm_sqr() < 1e-28 {
                                    continue;
                                }
                                terms.push(Term {
                                    out: outs.intern(&isos, t_enc(o), s_out),
                                    inp: ins.intern(&isos, t_enc(i), s_in),
                                    coeff: amp.conj() * weight,
                                });
                            }
                        }
                        groups.push(Group { scale, terms });
                    }
                }
                clauses.push(Clause { weight: 1.0, groups });
            }
            TargetKind::Ril => {
                let coeff = Complex64::new(weight, 0.0);
                // Identity on the data qubit while the ancilla rests in |0⟩.
                let mut groups = Vec::new();
                for s_out in 0..gauges {
                    for s_in in 0..gauges {
                        let terms = (0..2)
                            .map(|d| Term {
                                out: outs.intern(&isos, 4 * d, s_out),
                                inp: ins.intern(&isos, 4 * d, s_in),
                                coeff,
                            })
                            .collect();
                        groups.push(Group { scale: 0.25, terms });
                    }
                }
                clauses.push(Clause { weight: 1.0, groups });
                // Leaked data returns to the qubit while the ancilla ends in
                // any triplet-reading state (flipped or leaked: spin
                // conservation forbids reaching the encoded |1⟩ alone),
                // averaged over the two leaked states.
                let mut groups = Vec::new();
                for q in 2..4usize {
                    for dp in 0..2usize {
                        for anc in 1..4usize {
                            for s_out in 0..gauges {
                                for s_in in 0..gauges {
                                    groups.push(Group {
                                        scale: 0.5,
                                        terms: vec![Term {
                                            out: outs.intern(&isos, 4 * dp + anc, s_out),
                                            inp: ins.intern(&isos, 4 * q, s_in),
                                            coeff,
                                        }],
                                    });
                                }
                            }
                        }
                    }
                }
                clauses.push(Clause { weight: 1.0, groups });
            }
        }
        let n_spins = spec.n_spins();
        let dim = 1usize << n_spins;
        let flatten = |cols: &[Vec<Complex64>]| -> Vec<Complex64> {
            cols.iter().flat_map(|c| c.iter().copied()).collect()
        };
        let quads = spec
            .axes
            .iter()
            .map(|&(j, k)| {
                let mj = 1usize << (n_spins - 1 - j);
                let mk = 1usize << (n_spins - 1 - k);
                (0..dim as u32)
                    .filter(|&idx| idx as usize & (mj | mk) == 0)
                    .collect()
            })
            .collect();
        Ok(Evaluator {
            n_spins,
            dim,
            axes: spec.axes.clone(),
            flat_in: flatten(&ins.cols),
            flat_out: flatten(&outs.cols),
            in_cols: ins.cols,
            out_cols: outs.cols,
            clauses,
            quads,
        })
    }

    fn workspace(&self) -> Workspace {
        Workspace {
            flat: self.flat_in.clone(),
        }
    }

    fn apply_row(&self, cols: &mut [Vec<Complex64>], row: &[f64], sign: f64) {
        for (a, &theta) in row.iter().enumerate() {
            if theta != 0.0 {
                let kern = exchange_kernel(sign * theta);
                let (j, k) = self.axes[a];
                for col in cols.iter_mut() {
                    apply_kernel(col, self.n_spins, j, k, &kern);
                }
            }
        }
    }

    fn amplitudes(&self, cols: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        self.clauses
            .iter()
            .map(|clause| {
                clause
                    .groups
                    .iter()
                    .map(|g| {
                        g.terms
                            .iter()
                            .map(|t| t.coeff * inner(&self.out_cols[t.out], &cols[t.inp]))
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    fn score(&self, amps: &[Vec<Complex64>]) -> f64 {
        self.clauses
            .iter()
            .zip(amps)
            .map(|(clause, g_amps)| {
                let s: f64 = clause
                    .groups
                    .iter()
                    .zip(g_amps)
                    .map(|(g, amp)| g.scale * amp.norm_sqr())
                    .sum();
                clause.weight * (1.0 - s)
            })
            .sum()
    }

    /// Hot-loop objective on the flattened workspace.
    fn objective_ws(&self, rows: &[Vec<f64>], ws: &mut Workspace) -> f64 {
        ws.flat.copy_from_slice(&self.flat_in);
        for row in rows {
            self.apply_row_flat(&mut ws.flat, row);
        }
        let mut objective = 0.0;
        for clause in &self.clauses {
            let mut score = 0.0;
            for g in &clause.groups {
                let mut amp = Complex64::default();
                for t in &g.terms {
                    let o = &self.flat_out[t.out * self.dim..(t.out + 1) * self.dim];
                    let i = &ws.flat[t.inp * self.dim..(t.inp + 1) * self.dim];
                    amp += t.coeff * inner(o, i);
                }
                score += g.scale * amp.norm_sqr();
            }
            objective += clause.weight * (1.0 - score);
        }
        objective
    }

    fn apply_row_flat(&self, flat: &mut [Complex64], row: &[f64]) {
        for (a, &theta) in row.iter().enumerate() {
            if theta != 0.0 {
                let m = exchange_kernel(theta);
                let (j, k) = self.axes[a];
                let mj = 1usize << (self.n_spins - 1 - j);
                let mk = 1usize << (self.n_spins - 1 - k);
                for col in flat.chunks_exact_mut(self.dim) {
                    for &base in &self.quads[a] {
                        let i00 = base as usize;
                        let i01 = i00 | mk;
                        let i10 = i00 | mj;
                        let i11 = i00 | mj | mk;
                        let q = [col[i00], col[i01], col[i10], col[i11]];
                        col[i00] = m[0] * q[0] + m[1] * q[1] + m[2] * q[2] + m[3] * q[3];
                        col[i01] = m[4] * q[0] + m[5] * q[1] + m[6] * q[2] + m[7] * q[3];
                        col[i10] = m[8] * q[0] + m[9] * q[1] + m[10] * q[2] + m[11] * q[3];
                        col[i11] = m[12] * q[0] + m[13] * q[1] + m[14] * q[2] + m[15] * q[3];
                    }
                }
            }
        }
    }

    /// Objective and its derivative with respect to every placed angle
    /// (empty slots stay zero; the axis pattern is not varied here).
    fn objective_and_gradient(&self, rows: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let steps = rows.len();
        let mut fwd = Vec::with_capacity(steps + 1);
        fwd.push(self.in_cols.clone());
        for row in rows {
            let mut next = fwd.last().unwrap().clone();
            self.apply_row(&mut next, row, 1.0);
            fwd.push(next);
        }
        let mut bwd = Vec::with_capacity(steps + 1);
        bwd.push(self.out_cols.clone());
        for t in (0..steps).rev() {
            let mut prev = bwd.last().unwrap().clone();
            self.apply_row(&mut prev, &rows[t], -1.0);
            bwd.push(prev);
        }
        bwd.reverse();

        let amps = self.amplitudes(&fwd[steps]);
        let objective = self.score(&amps);

        let dim = 1usize << self.n_spins;
        let mut hcols = vec![vec![Complex64::default(); dim]; self.in_cols.len()];
        let mut grad = vec![vec![0.0; self.axes.len()]; steps];
        for (t, row) in rows.iter().enumerate() {
            for (a, &theta) in row.iter().enumerate() {
                if theta == 0.0 {
                    continue;
                }
                let (j, k) = self.axes[a];
                let slab_f = &fwd[t + 1];
                let slab_b = &bwd[t + 1];
                for (h, f) in hcols.iter_mut().zip(slab_f) {
                    apply_heisenberg(f, h, self.n_spins, j, k);
                }
                let mut d = 0.0;
                for (clause, g_amps) in self.clauses.iter().zip(&amps) {
                    for (g, &amp) in clause.groups.iter().zip(g_amps) {
                        let mut dg = Complex64::default();
                        for term in &g.terms {
                            dg += term.coeff * inner(&slab_b[term.out], &hcols[term.inp]);
                        }
                        // d/dθ of exp(−iθ S·S) inserts −i S·S.
                        dg *= Complex64::new(0.0, -1.0);
                        d -= clause.weight * g.scale * 2.0 * (amp.conj() * dg).re;
                    }
                }
                grad[t][a] = d;
            }
        }
        (objective, grad)
    }
}

fn rows_to_unitary(spec: &TargetSpec, rows: &[Vec<f64>]) -> Result<CMat> {
    let steps: Vec<Vec<((usize, usize), f64)>> = rows
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &th)| th != 0.0)
                .map(|(a, &th)| (spec.axes[a], th))
                .collect()
        })
        .collect();
    crate::gates::pulses_to_unitary(spec.n_spins(), &steps)
}

fn validate_rows(spec: &TargetSpec, rows: &[Vec<f64>]) -> Result<()> {
    if rows.len() != spec.n_timesteps {
        return Err(Error::Synth(format!(
            "rows cover {} timesteps, spec budgets {}",
            rows.len(),
            spec.n_timesteps
        )));
    }
    let n = spec.n_spins();
    for (t, row) in rows.iter().enumerate() {
        if row.len() != spec.axes.len() {
            return Err(Error::Synth(format!(
                "row {t} has {} slots, spec has {} axes",
                row.len(),
                spec.axes.len()
            )));
        }
        let mut touched = vec![false; n];
        for (a, &theta) in row.iter().enumerate() {
            if theta == 0.0 {
                continue;
            }
            if !theta.is_finite() || theta < 0.0 {
                return Err(Error::Synth(format!("bad angle {theta} at ({t},{a})")));
            }
            if !spec.axis_allowed(t, a) {
                return Err(Error::Synth(format!("axis {a} is not allowed in timestep {t}")));
            }
            let (j, k) = spec.axes[a];
            if touched[j] || touched[k] {
                return Err(Error::Synth(format!("overlapping pulses in timestep {t}")));
            }
            touched[j] = true;
            touched[k] = true;
            if t > 0 && rows[t - 1][a] != 0.0 {
                return Err(Error::Synth(format!(
                    "axis {a} pulsed in consecutive timesteps {},{t}",
                    t - 1
                )));
            }
        }
    }
    Ok(())
}

/// Objective of a pulse grid against a spec.
pub fn sequence_objective(spec: &TargetSpec, rows: &[Vec<f64>]) -> Result<f64> {
    validate_rows(spec, rows)?;
    let eval = Evaluator::new(spec)?;
    let mut ws = eval.workspace();
    Ok(eval.objective_ws(rows, &mut ws))
}

/// Objective of an arbitrary `2^n×2^n` spin-space unitary against a spec.
pub fn unitary_objective(spec: &TargetSpec, u: &CMat) -> Result<f64> {
    let eval = Evaluator::new(spec)?;
    let dim = 1usize << spec.n_spins();
    if u.dim() != (dim, dim) {
        return Err(Error::dim(format!("operator must be {dim}×{dim}")));
    }
    let cols: Vec<Vec<Complex64>> = eval
        .in_cols
        .iter()
        .map(|c| {
            (0..dim)
                .map(|r| (0..dim).map(|cc| u[(r, cc)] * c[cc]).sum())
                .collect()
        })
        .collect();
    let amps = eval.amplitudes(&cols);
    Ok(eval.score(&amps))
}

/// Objective and per-slot gradient of a pulse grid.
pub fn sequence_gradient(spec: &TargetSpec, rows: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    validate_rows(spec, rows)?;
    let eval = Evaluator::new(spec)?;
    Ok(eval.objective_and_gradient(rows))
}

fn finish(
    spec: &TargetSpec,
    eval: &Evaluator,
    rows: Vec<Vec<f64>>,
    trace: Vec<f64>,
    stalled: bool,
) -> Result<SynthResult> {
    let mut ws = eval.workspace();
    let objective = eval.objective_ws(&rows, &mut ws);
    let u = rows_to_unitary(spec, &rows)?;
    let map = GaqqMap::from_unitary(&u, &spec.orientations)?;
    let (fidelity, ril) = match &spec.kind {
        TargetKind::Unitary { matrix } => (map.encoded_process_fidelity(matrix)?, None),
        TargetKind::Ril => {
            let report = verify_ril(&map);
            (report.identity_fidelity.min(report.unleak_success), Some(report))
        }
    };
    Ok(SynthResult {
        rows,
        objective,
        fidelity,
        ril,
        stalled,
        trace,
    })
}

// ---------------------------------------------------------------------------
// Replica-exchange Monte Carlo
// ---------------------------------------------------------------------------

/// Geometric ladder from hot to cold; a single replica anneals nothing and
/// descends greedily at zero temperature.
pub fn default_temperature_ladder(replicas: usize) -> Vec<f64> {
    match replicas {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let ratio = (T_COLD / T_HOT).powf(1.0 / (replicas - 1) as f64);
            (0..replicas).map(|r| T_HOT * ratio.powi(r as i32)).collect()
        }
    }
}

enum Undo {
    One { t: usize, a: usize, theta: f64 },
    Two { first: (usize, usize, f64), second: (usize, usize, f64) },
}

impl Undo {
    fn apply(&self, rows: &mut [Vec<f64>]) {
        match *self {
            Undo::One { t, a, theta } => rows[t][a] = theta,
            Undo::Two { first, second } => {
                rows[first.0][first.1] = first.2;
                rows[second.0][second.1] = second.2;
            }
        }
    }
}

/// Can a pulse be added at `(t, a)` without breaking the grid rules?
fn slot_feasible(spec: &TargetSpec, rows: &[Vec<f64>], t: usize, a: usize) -> bool {
    if rows[t][a] != 0.0 || !spec.axis_allowed(t, a) {
        return false;
    }
    let (j, k) = spec.axes[a];
    for (b, &theta) in rows[t].iter().enumerate() {
        if theta != 0.0 {
            let (x, y) = spec.axes[b];
            if x == j || x == k || y == j || y == k {
                return false;
            }
        }
    }
    if t > 0 && rows[t - 1][a] != 0.0 {
        return false;
    }
    if t + 1 < rows.len() && rows[t + 1][a] != 0.0 {
        return false;
    }
    true
}

struct Replica {
    temperature: f64,
    sigma: f64,
    rows: Vec<Vec<f64>>,
    energy: f64,
    best_rows: Vec<Vec<f64>>,
    best_energy: f64,
    rng: ChaCha12Rng,
    work: Workspace,
}

impl Replica {
    fn new(temperature: f64, spec: &TargetSpec, eval: &Evaluator, mut rng: ChaCha12Rng) -> Self {
        let mut rows = vec![vec![0.0; spec.axes.len()]; spec.n_timesteps];
        for t in 0..spec.n_timesteps {
            for a in 0..spec.axes.len() {
                if rng.gen::<f64>() < 0.15 && slot_feasible(spec, &rows, t, a) {
                    rows[t][a] = rng.gen_range(0.0..TAU).max(MIN_THETA);
                }
            }
        }
        let mut work = eval.workspace();
        let energy = eval.objective_ws(&rows, &mut work);
        Replica {
            temperature,
            sigma: (2.0 * temperature).sqrt().clamp(3e-4, 1.6),
            best_rows: rows.clone(),
            best_energy: energy,
            rows,
            energy,
            rng,
            work,
        }
    }

    fn pulses(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (t, row) in self.rows.iter().enumerate() {
            for (a, &theta) in row.iter().enumerate() {
                if theta != 0.0 {
                    out.push((t, a));
                }
            }
        }
        out
    }

    fn insert(&mut self, spec: &TargetSpec) -> Option<Undo> {
        let mut slots = Vec::new();
        for t in 0..self.rows.len() {
            for a in 0..spec.axes.len() {
                if slot_feasible(spec, &self.rows, t, a) {
                    slots.push((t, a));
                }
            }
        }
        if slots.is_empty() {
            return None;
        }
        let (t, a) = slots[self.rng.gen_range(0..slots.len())];
        self.rows[t][a] = self.rng.gen_range(0.0..TAU).max(MIN_THETA);
        Some(Undo::One { t, a, theta: 0.0 })
    }

    fn propose(&mut self, spec: &TargetSpec) -> Option<Undo> {
        let choice: f64 = self.rng.gen();
        let pulses = self.pulses();
        if pulses.is_empty() || choice < 0.15 {
            return self.insert(spec);
        }
        let (t, a) = pulses[self.rng.gen_range(0..pulses.len())];
        let theta = self.rows[t][a];
        if choice < 0.30 {
            // remove
            self.rows[t][a] = 0.0;
            Some(Undo::One { t, a, theta })
        } else if choice < 0.40 {
            // move to another axis in the same timestep
            self.rows[t][a] = 0.0;
            let options: Vec<usize> = (0..spec.axes.len())
                .filter(|&b| b != a && slot_feasible(spec, &self.rows, t, b))
                .collect();
            if options.is_empty() {
                self.rows[t][a] = theta;
                return None;
            }
            let b = options[self.rng.gen_range(0..options.len())];
            self.rows[t][b] = theta;
            Some(Undo::Two {
                first: (t, a, theta),
                second: (t, b, 0.0),
            })
        } else {
            // perturb: occasional full redraw, otherwise a Gaussian nudge
            // with a fine-polish mixture
            let style: f64 = self.rng.gen();
            let next = if style < 0.10 {
                self.rng.gen_range(0.0..TAU)
            } else {
                let s = if style < 0.35 { self.sigma / 24.0 } else { self.sigma };
                (theta + s * standard_normal(&mut self.rng)).rem_euclid(TAU)
            };
            self.rows[t][a] = next.max(MIN_THETA);
            Some(Undo::One { t, a, theta })
        }
    }

    fn sweep(&mut self, eval: &Evaluator, spec: &TargetSpec, proposals: usize) {
        for _ in 0..proposals {
            let Some(undo) = self.propose(spec) else {
                continue;
            };
            let candidate = eval.objective_ws(&self.rows, &mut self.work);
            let delta = candidate - self.energy;
            let accept = delta <= 0.0
                || (self.temperature > 0.0
                    && self.rng.gen::<f64>() < (-delta / self.temperature).exp());
            if accept {
                self.energy = candidate;
                if candidate < self.best_energy {
                    self.best_energy = candidate;
                    self.best_rows = self.rows.clone();
                }
            } else {
                undo.apply(&mut self.rows);
            }
        }
    }
}

fn inverse_temperature(t: f64) -> f64 {
    if t == 0.0 {
        f64::INFINITY
    } else {
        1.0 / t
    }
}

/// Replica-exchange Monte Carlo over pulse placements.
///
/// `iterations` counts proposals per replica; neighbour exchanges are
/// attempted every [`EXCHANGE_STRIDE`] proposals through a dedicated RNG
/// stream, so the accepted-move sequence is independent of how replica
/// sweeps are scheduled across threads. Runs are reproducible per seed.
pub fn remc_search(
    spec: &TargetSpec,
    replicas: usize,
    temperatures: Option<&[f64]>,
    iterations: usize,
    seed: u64,
) -> Result<SynthResult> {
    spec.validate()?;
    if replicas == 0 {
        return Err(Error::Synth("at least one replica required".into()));
    }
    if iterations == 0 {
        return Err(Error::Synth("iteration budget must be at least 1".into()));
    }
    let ladder: Vec<f64> = match temperatures {
        Some(ts) => {
            if ts.len() != replicas {
                return Err(Error::Synth(format!(
                    "{} temperatures for {replicas} replicas",
                    ts.len()
                )));
            }
            if ts.iter().any(|t| !t.is_finite() || *t < 0.0) {
                return Err(Error::Synth("temperatures must be finite and ≥ 0".into()));
            }
            if ts.windows(2).any(|w| w[0] <= w[1]) {
                return Err(Error::Synth(
                    "temperatures must strictly decrease from hot to cold".into(),
                ));
            }
            ts.to_vec()
        }
        None => default_temperature_ladder(replicas),
    };
    let eval = Evaluator::new(spec)?;
    let mut reps: Vec<Replica> = ladder
        .iter()
        .enumerate()
        .map(|(r, &t)| Replica::new(t, spec, &eval, seeding::rng_for(seed, "synth-replica", r as u64)))
        .collect();
    let mut ex_rng = seeding::rng_for(seed, "synth-exchange", 0);
    let mut trace = vec![reps.last().unwrap().energy];
    let mut done = 0usize;
    let mut round = 0usize;
    while done < iterations {
        let chunk = EXCHANGE_STRIDE.min(iterations - done);
        reps.par_iter_mut().for_each(|rep| rep.sweep(&eval, spec, chunk));
        done += chunk;
        let mut i = round % 2;
        while i + 1 < reps.len() {
            // Draw unconditionally so the stream position is outcome-free.
            let u: f64 = ex_rng.gen();
            let delta = (inverse_temperature(reps[i].temperature)
                - inverse_temperature(reps[i + 1].temperature))
                * (reps[i].energy - reps[i + 1].energy);
            if delta >= 0.0 || u < delta.exp() {
                let (left, right) = reps.split_at_mut(i + 1);
                std::mem::swap(&mut left[i].rows, &mut right[0].rows);
                std::mem::swap(&mut left[i].energy, &mut right[0].energy);
            }
            i += 2;
        }
        round += 1;
        trace.push(reps.last().unwrap().energy);
    }
    let best = reps
        .iter()
        .min_by(|a, b| a.best_energy.total_cmp(&b.best_energy))
        .unwrap();
    finish(spec, &eval, best.best_rows.clone(), trace, false)
}

// ---------------------------------------------------------------------------
// Gradient refinement
// ---------------------------------------------------------------------------

/// Stopping rules for [`grape_refine`].
#[derive(Clone, Copy, Debug)]
pub struct GrapeControl {
    pub max_iterations: usize,
    /// Objective below which the sequence counts as converged.
    pub tolerance: f64,
    /// Line-search step below which the descent is declared stalled.
    pub min_step: f64,
}

impl Default for GrapeControl {
    fn default() -> Self {
        GrapeControl {
            max_iterations: 4000,
            tolerance: 1e-10,
            min_step: 1e-14,
        }
    }
}

fn step_rows(rows: &[Vec<f64>], grad: &[Vec<f64>], alpha: f64) -> Vec<Vec<f64>> {
    rows.iter()
        .zip(grad)
        .map(|(row, g)| {
            row.iter()
                .zip(g)
                .map(|(&theta, &d)| {
                    if theta == 0.0 {
                        0.0
                    } else {
                        (theta - alpha * d).rem_euclid(TAU).max(MIN_THETA)
                    }
                })
                .collect()
        })
        .collect()
}

/// Polish the angles of a fixed axis pattern by backtracking gradient
/// descent. The objective never increases across the returned trace; if no
/// decreasing step above `min_step` exists before `tolerance` is reached,
/// the result carries `stalled = true`.
pub fn grape_refine(rows: &[Vec<f64>], spec: &TargetSpec, control: &GrapeControl) -> Result<SynthResult> {
    validate_rows(spec, rows)?;
    let eval = Evaluator::new(spec)?;
    let mut ws = eval.workspace();
    let mut current = rows.to_vec();
    let (mut objective, mut grad) = eval.objective_and_gradient(&current);
    let mut trace = vec![objective];
    let mut alpha = 0.25;
    for _ in 0..control.max_iterations {
        if objective <= control.tolerance {
            break;
        }
        let mut accepted = false;
        while alpha >= control.min_step {
            let candidate = step_rows(&current, &grad, alpha);
            let value = eval.objective_ws(&candidate, &mut ws);
            if value < objective {
                current = candidate;
                objective = value;
                trace.push(value);
                alpha = (alpha * 1.5).min(16.0);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        if objective <= control.tolerance {
            break;
        }
        let next = eval.objective_and_gradient(&current);
        objective = next.0;
        grad = next.1;
    }
    let stalled = objective > control.tolerance;
    finish(spec, &eval, current, trace, stalled)
}
