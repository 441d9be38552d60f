//! Dense state-vector simulation of pulsed spin chains.
//!
//! The register is a chain of spin-½ particles (quantum-dot electrons).
//! Evolution is driven by a [`FlatSeq`]: a grid of timesteps × exchange axes
//! holding *exchangles* (time-integrated exchange strengths, radians), plus
//! singlet/triplet SPAM operations placed on specific axes. Magnetic fields
//! (static gradients, a global field and 1/f fluctuations from a noise plan)
//! act continuously.
//!
//! Index convention: spin `j` of an `N`-spin register is bit `N-1-j` of the
//! basis index (spin 0 is the most significant bit) and `σ = 0` means up.
//! An exchange pulse applies `E(θ) = exp(-i θ S_j·S_k)`, so `θ = π` swaps
//! the two spins up to a global phase.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::noise::{NoisePlan, ShotNoise};
use crate::seeding;
use crate::{Error, Result};

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Pure state of `n_spins` spin-½ particles.
#[derive(Clone, Debug)]
pub struct SpinState {
    n_spins: usize,
    amps: Vec<Complex64>,
}

impl SpinState {
    /// `|↑↑…↑⟩` (all σ = 0).
    pub fn all_up(n_spins: usize) -> Self {
        assert!(n_spins >= 1 && n_spins <= 24, "unsupported register size");
        let mut amps = vec![C0; 1 << n_spins];
        amps[0] = Complex64::new(1.0, 0.0);
        SpinState { n_spins, amps }
    }

    /// Build from explicit amplitudes (must have length 2^n and unit norm).
    pub fn from_amplitudes(n_spins: usize, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != 1 << n_spins {
            return Err(Error::dim(format!(
                "state length {} != 2^{}",
                amps.len(),
                n_spins
            )));
        }
        let n: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!("state norm² = {n}, expected 1")));
        }
        Ok(SpinState { n_spins, amps })
    }

    /// Basis index of a configuration `[σ0, σ1, …]` (σ ∈ {0,1}).
    ///
    /// `|σ0 σ1 … σ(N-1)⟩ ↔ Σ_j σ(N-1-j)·2^j`: spin 0 is the MSB.
    pub fn basis_index(config: &[u8]) -> usize {
        config.iter().fold(0usize, |acc, &s| {
            debug_assert!(s <= 1);
            (acc << 1) | s as usize
        })
    }

    /// Inverse of [`SpinState::basis_index`].
    pub fn config_of(index: usize, n_spins: usize) -> Vec<u8> {
        (0..n_spins)
            .map(|j| ((index >> (n_spins - 1 - j)) & 1) as u8)
            .collect()
    }

    /// Computational basis state from a configuration.
    pub fn from_config(config: &[u8]) -> Self {
        let n = config.len();
        let mut amps = vec![C0; 1 << n];
        amps[Self::basis_index(config)] = Complex64::new(1.0, 0.0);
        SpinState { n_spins: n, amps }
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &SpinState) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `|⟨self|other⟩|²`.
    pub fn fidelity(&self, other: &SpinState) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn renormalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        if n > 0.0 {
            let inv = 1.0 / n;
            self.amps.iter_mut().for_each(|z| *z *= inv);
        }
    }

    fn bitpos(&self, spin: usize) -> usize {
        assert!(spin < self.n_spins, "spin index {spin} out of range");
        self.n_spins - 1 - spin
    }

    /// Apply a 2×2 operator to spin `j` (row-major `[m00, m01, m10, m11]`
    /// over σ_j ∈ {0,1}).
    pub fn apply_single(&mut self, j: usize, m: &[Complex64; 4]) {
        let mask = 1usize << self.bitpos(j);
        for idx in 0..self.amps.len() {
            if idx & mask == 0 {
                let a0 = self.amps[idx];
                let a1 = self.amps[idx | mask];
                self.amps[idx] = m[0] * a0 + m[1] * a1;
                self.amps[idx | mask] = m[2] * a0 + m[3] * a1;
            }
        }
    }

    /// Apply a 4×4 operator to spins `(j,k)`; the local index is `2σ_j + σ_k`
    /// and the kernel is row-major over local indices 00,01,10,11.
    pub fn apply_pair(&mut self, j: usize, k: usize, m: &[Complex64; 16]) {
        assert_ne!(j, k, "pair must be two distinct spins");
        let mj = 1usize << self.bitpos(j);
        let mk = 1usize << self.bitpos(k);
        for idx in 0..self.amps.len() {
            if idx & (mj | mk) == 0 {
                let i00 = idx;
                let i01 = idx | mk;
                let i10 = idx | mj;
                let i11 = idx | mj | mk;
                let a = [self.amps[i00], self.amps[i01], self.amps[i10], self.amps[i11]];
                for (r, &out) in [i00, i01, i10, i11].iter().enumerate() {
                    self.amps[out] =
                        m[4 * r] * a[0] + m[4 * r + 1] * a[1] + m[4 * r + 2] * a[2] + m[4 * r + 3] * a[3];
                }
            }
        }
    }

    /// Exchange pulse `E(θ) = exp(-i θ S_j·S_k)` via the closed-form kernel.
    pub fn apply_exchange(&mut self, j: usize, k: usize, theta: f64) {
        self.apply_pair(j, k, &exchange_kernel(theta));
    }

    /// Rotate every spin under its own field for `duration` seconds.
    ///
    /// `fields_tesla[j]` is the field at spin `j`; each spin rotates by angle
    /// `γ|B|·duration` about `B̂` (the fields are held constant over the
    /// window).
    pub fn evolve_field(&mut self, fields_tesla: &[[f64; 3]], gamma: f64, duration: f64) {
        assert_eq!(fields_tesla.len(), self.n_spins);
        for (j, b) in fields_tesla.iter().enumerate() {
            let w = [b[0] * gamma, b[1] * gamma, b[2] * gamma];
            let norm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
            if norm * duration == 0.0 {
                continue;
            }
            self.apply_single(j, &field_kernel(w, duration));
        }
    }

    /// Probabilities of the four pair classes (S, T0, T+, T−) on `(j,k)`.
    pub fn pair_class_probs(&self, j: usize, k: usize) -> [f64; 4] {
        let mj = 1usize << self.bitpos(j);
        let mk = 1usize << self.bitpos(k);
        let mut p = [0.0f64; 4];
        for idx in 0..self.amps.len() {
            if idx & (mj | mk) == 0 {
                let a00 = self.amps[idx];
                let a01 = self.amps[idx | mk];
                let a10 = self.amps[idx | mj];
                let a11 = self.amps[idx | mj | mk];
                p[0] += 0.5 * (a01 - a10).norm_sqr();
                p[1] += 0.5 * (a01 + a10).norm_sqr();
                p[2] += a00.norm_sqr();
                p[3] += a11.norm_sqr();
            }
        }
        p
    }

    /// Project pair `(j,k)` onto singlet (`true`) or the triplet subspace
    /// (`false`) and renormalize. Returns the pre-projection probability.
    pub fn project_pair_singlet(&mut self, j: usize, k: usize, singlet: bool) -> Result<f64> {
        let mj = 1usize << self.bitpos(j);
        let mk = 1usize << self.bitpos(k);
        let mut prob = 0.0;
        for idx in 0..self.amps.len() {
            if idx & (mj | mk) == 0 {
                let a01 = self.amps[idx | mk];
                let a10 = self.amps[idx | mj];
                let s = 0.5 * (a01 - a10);
                if singlet {
                    self.amps[idx] = C0;
                    self.amps[idx | mk] = s;
                    self.amps[idx | mj] = -s;
                    self.amps[idx | mj | mk] = C0;
                } else {
                    self.amps[idx | mk] = a01 - s;
                    self.amps[idx | mj] = a10 + s;
                }
            }
        }
        for z in &self.amps {
            prob += z.norm_sqr();
        }
        if prob < 1e-12 {
            return Err(Error::Spam(
                "projection onto measure-zero branch".to_string(),
            ));
        }
        let inv = 1.0 / prob.sqrt();
        self.amps.iter_mut().for_each(|z| *z *= inv);
        Ok(prob)
    }
}

/// Closed-form `E(θ)` kernel in the local basis 00,01,10,11.
pub fn exchange_kernel(theta: f64) -> [Complex64; 16] {
    let outer = Complex64::from_polar(1.0, -theta / 4.0);
    let inner = Complex64::from_polar(1.0, theta / 4.0);
    let c = inner * (theta / 2.0).cos();
    let s = inner * Complex64::new(0.0, -1.0) * (theta / 2.0).sin();
    [
        outer, C0, C0, C0, //
        C0, c, s, C0, //
        C0, s, c, C0, //
        C0, C0, C0, outer,
    ]
}

/// Closed-form single-spin rotation `exp(-i t ω̄·σ̄/2)` (ω in rad/s).
pub fn field_kernel(omega: [f64; 3], t: f64) -> [Complex64; 4] {
    let norm = (omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2]).sqrt();
    if norm == 0.0 {
        return [
            Complex64::new(1.0, 0.0),
            C0,
            C0,
            Complex64::new(1.0, 0.0),
        ];
    }
    let half = 0.5 * norm * t;
    let (s, c) = half.sin_cos();
    let n = [omega[0] / norm, omega[1] / norm, omega[2] / norm];
    [
        Complex64::new(c, -s * n[2]),
        Complex64::new(-s * n[1], -s * n[0]),
        Complex64::new(s * n[1], -s * n[0]),
        Complex64::new(c, s * n[2]),
    ]
}

/// One exchange axis: an ordered pair of spins that can be pulsed together.
/// SPAM corrections refer to the *first* spin of the pair.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ExchangeAxis {
    pub id: String,
    pub spins: (usize, usize),
}

impl ExchangeAxis {
    pub fn new(id: impl Into<String>, j: usize, k: usize) -> Self {
        ExchangeAxis {
            id: id.into(),
            spins: (j, k),
        }
    }

    pub fn touches(&self, spin: usize) -> bool {
        self.spins.0 == spin || self.spins.1 == spin
    }

    pub fn shares_spin(&self, other: &ExchangeAxis) -> bool {
        self.touches(other.spins.0) || self.touches(other.spins.1)
    }
}

/// Kind of a SPAM operation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SpamKind {
    Init,
    Measure,
}

/// A SPAM operation bound to a timestep and an axis (its spin pair).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct SpamOp {
    #[serde(rename = "t")]
    pub timestep: usize,
    pub axis: usize,
    pub kind: SpamKind,
}

fn default_pulse_fraction() -> f64 {
    1.0
}

/// Flat pulse schedule: `rows[t][a]` is the exchangle applied on axis `a`
/// during timestep `t` (0 = idle). Serialized with times in nanoseconds and
/// angles in radians.
///
/// Pulses are square and occupy the leading `pulse_fraction` of their
/// timestep (default: the whole step). `fields`, when present, adds a
/// per-timestep, per-dot field vector (tesla) on top of whatever the noise
/// plan supplies; fields are held constant within a timestep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlatSeq {
    pub n_spins: usize,
    pub timestep_ns: f64,
    pub axes: Vec<ExchangeAxis>,
    pub rows: Vec<Vec<f64>>,
    #[serde(default)]
    pub spam: Vec<SpamOp>,
    #[serde(default = "default_pulse_fraction")]
    pub pulse_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<Vec<[f64; 3]>>>,
}

impl FlatSeq {
    pub fn new(n_spins: usize, timestep_ns: f64, axes: Vec<ExchangeAxis>) -> Self {
        FlatSeq {
            n_spins,
            timestep_ns,
            axes,
            rows: Vec::new(),
            spam: Vec::new(),
            pulse_fraction: 1.0,
            fields: None,
        }
    }

    pub fn timestep_seconds(&self) -> f64 {
        self.timestep_ns * 1e-9
    }

    pub fn duration_seconds(&self) -> f64 {
        self.timestep_seconds() * self.rows.len() as f64
    }

    /// Append an empty timestep, returning its index.
    pub fn push_idle(&mut self) -> usize {
        self.rows.push(vec![0.0; self.axes.len()]);
        self.rows.len() - 1
    }

    /// Set a pulse at `(timestep, axis)`.
    pub fn set_pulse(&mut self, timestep: usize, axis: usize, theta: f64) {
        self.rows[timestep][axis] = theta;
    }

    pub fn total_pulses(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.iter().filter(|&&x| x != 0.0).count())
            .sum()
    }

    /// Validate the schedule invariants:
    /// angles finite and ≥ 0; pulses within a timestep pairwise spin-disjoint;
    /// SPAM references valid and not colliding with pulses on their spins.
    pub fn validate(&self) -> Result<()> {
        if self.timestep_ns <= 0.0 || !self.timestep_ns.is_finite() {
            return Err(Error::Schedule("timestep must be positive".into()));
        }
        if !(self.pulse_fraction > 0.0 && self.pulse_fraction <= 1.0) {
            return Err(Error::Schedule(format!(
                "pulse_fraction {} outside (0, 1]",
                self.pulse_fraction
            )));
        }
        if let Some(f) = &self.fields {
            if f.len() != self.rows.len() || f.iter().any(|r| r.len() != self.n_spins) {
                return Err(Error::Schedule(
                    "field schedule must be rows × n_spins".into(),
                ));
            }
        }
        for ax in &self.axes {
            if ax.spins.0 >= self.n_spins || ax.spins.1 >= self.n_spins || ax.spins.0 == ax.spins.1
            {
                return Err(Error::Schedule(format!(
                    "axis {} references invalid spins {:?}",
                    ax.id, ax.spins
                )));
            }
        }
        for (t, row) in self.rows.iter().enumerate() {
            if row.len() != self.axes.len() {
                return Err(Error::Schedule(format!(
                    "row {t} has {} entries for {} axes",
                    row.len(),
                    self.axes.len()
                )));
            }
            let mut touched = vec![false; self.n_spins];
            for (a, &theta) in row.iter().enumerate() {
                if theta == 0.0 {
                    continue;
                }
                if !theta.is_finite() || theta < 0.0 {
                    return Err(Error::Schedule(format!(
                        "timestep {t}, axis {}: bad exchangle {theta}",
                        self.axes[a].id
                    )));
                }
                for s in [self.axes[a].spins.0, self.axes[a].spins.1] {
                    if touched[s] {
                        return Err(Error::Schedule(format!(
                            "timestep {t}: spin {s} pulsed by two axes at once"
                        )));
                    }
                    touched[s] = true;
                }
            }
            for op in self.spam.iter().filter(|op| op.timestep == t) {
                if op.axis >= self.axes.len() {
                    return Err(Error::Schedule(format!(
                        "SPAM op at timestep {t} references axis {}",
                        op.axis
                    )));
                }
                let (j, k) = self.axes[op.axis].spins;
                if touched[j] || touched[k] {
                    return Err(Error::Schedule(format!(
                        "timestep {t}: SPAM on axis {} collides with a pulse",
                        self.axes[op.axis].id
                    )));
                }
            }
        }
        for op in &self.spam {
            if op.timestep >= self.rows.len() || op.axis >= self.axes.len() {
                return Err(Error::Schedule("SPAM op out of range".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let seq: FlatSeq = serde_json::from_str(s)?;
        seq.validate()?;
        Ok(seq)
    }
}

/// Affine SPAM error model.
///
/// Initialization: the Born probabilities `p = (p_S, p_T0, p_T+, p_T−)` of
/// the pair classes are mapped to `p' = A·p + b`; the *output* class is drawn
/// from `p'` while the projection back-action uses the Born distribution.
/// With the default `A = 0, b = e_S` initialization always leaves the pair in
/// a singlet. Measurement errors flip the recorded outcome after the fact and
/// never touch the state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpamErrorModel {
    pub init_a: [[f64; 4]; 4],
    pub init_b: [f64; 4],
    /// P(record triplet | projected singlet).
    pub read_singlet_as_triplet: f64,
    /// P(record singlet | projected triplet).
    pub read_triplet_as_singlet: f64,
}

impl Default for SpamErrorModel {
    fn default() -> Self {
        SpamErrorModel {
            init_a: [[0.0; 4]; 4],
            init_b: [1.0, 0.0, 0.0, 0.0],
            read_singlet_as_triplet: 0.0,
            read_triplet_as_singlet: 0.0,
        }
    }
}

impl SpamErrorModel {
    /// Ideal SPAM.
    pub fn ideal() -> Self {
        Self::default()
    }

    /// Init leaves the pair in T0 with probability `eps` (otherwise singlet);
    /// outcomes are misread symmetrically with probability `p_read`.
    pub fn with_rates(eps_init_t0: f64, p_read: f64) -> Self {
        SpamErrorModel {
            init_a: [[0.0; 4]; 4],
            init_b: [1.0 - eps_init_t0, eps_init_t0, 0.0, 0.0],
            read_singlet_as_triplet: p_read,
            read_triplet_as_singlet: p_read,
        }
    }

    /// Check that the affine map sends the probability simplex into itself
    /// (evaluated on the four vertices) and flip probabilities are in [0,1].
    pub fn validate(&self) -> Result<()> {
        for v in 0..4 {
            let mut out = self.init_b;
            for r in 0..4 {
                out[r] += self.init_a[r][v];
            }
            let sum: f64 = out.iter().sum();
            if out.iter().any(|&x| x < -1e-9) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Spam(format!(
                    "affine init map leaves the simplex on vertex {v}: {out:?}"
                )));
            }
        }
        for p in [self.read_singlet_as_triplet, self.read_triplet_as_singlet] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Spam(format!("readout flip probability {p}")));
            }
        }
        Ok(())
    }
}

/// Pair classes in the order used by probability vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairClass {
    Singlet = 0,
    T0 = 1,
    TPlus = 2,
    TMinus = 3,
}

const CLASSES: [PairClass; 4] = [
    PairClass::Singlet,
    PairClass::T0,
    PairClass::TPlus,
    PairClass::TMinus,
];

fn sample_from(probs: &[f64; 4], rng: &mut impl Rng) -> PairClass {
    let total: f64 = probs.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        if x < p || i == 3 {
            return CLASSES[i];
        }
        x -= p;
    }
    PairClass::TMinus
}

/// Deterministic core of initialization: project the pair onto `born_cls`
/// (Born back-action), correct it to a singlet, then rewrite the singlet as
/// `out_cls`. Public so tests can drive each branch directly.
pub fn init_project_and_construct(
    state: &mut SpinState,
    pair: (usize, usize),
    born_cls: PairClass,
    out_cls: PairClass,
) -> Result<()> {
    let (j, k) = pair;
    let mj = 1usize << state.bitpos(j);
    let mk = 1usize << state.bitpos(k);
    // Project onto the sampled class.
    let mut prob = 0.0;
    for idx in 0..state.amps.len() {
        if idx & (mj | mk) == 0 {
            let a00 = state.amps[idx];
            let a01 = state.amps[idx | mk];
            let a10 = state.amps[idx | mj];
            let a11 = state.amps[idx | mj | mk];
            let (n00, n01, n10, n11) = match born_cls {
                PairClass::Singlet => {
                    let s = 0.5 * (a01 - a10);
                    (C0, s, -s, C0)
                }
                PairClass::T0 => {
                    let t = 0.5 * (a01 + a10);
                    (C0, t, t, C0)
                }
                PairClass::TPlus => (a00, C0, C0, C0),
                PairClass::TMinus => (C0, C0, C0, a11),
            };
            state.amps[idx] = n00;
            state.amps[idx | mk] = n01;
            state.amps[idx | mj] = n10;
            state.amps[idx | mj | mk] = n11;
            prob += n00.norm_sqr() + n01.norm_sqr() + n10.norm_sqr() + n11.norm_sqr();
        }
    }
    if prob < 1e-12 {
        return Err(Error::Spam("initialization of a measure-zero class".into()));
    }
    let inv = 1.0 / prob.sqrt();
    state.amps.iter_mut().for_each(|z| *z *= inv);
    // Correct the projected class to a singlet: T0 takes a π z-rotation of
    // the first spin; T± take a π x-rotation of the first spin followed by a
    // singlet projection.
    match born_cls {
        PairClass::Singlet => {}
        PairClass::T0 => {
            let m = [
                Complex64::new(0.0, -1.0),
                C0,
                C0,
                Complex64::new(0.0, 1.0),
            ]; // exp(-iπσz/2)
            state.apply_single(j, &m);
        }
        PairClass::TPlus | PairClass::TMinus => {
            let m = [C0, Complex64::new(0.0, -1.0), Complex64::new(0.0, -1.0), C0]; // exp(-iπσx/2)
            state.apply_single(j, &m);
            state.project_pair_singlet(j, k, true)?;
        }
    }
    // Reverse-construct the output class from the singlet.
    if out_cls != PairClass::Singlet {
        let s2 = std::f64::consts::FRAC_1_SQRT_2;
        for idx in 0..state.amps.len() {
            if idx & (mj | mk) == 0 {
                let a01 = state.amps[idx | mk];
                let a10 = state.amps[idx | mj];
                let s = s2 * (a01 - a10); // ⟨S|pair⟩ for this spectator config
                let (n00, n01, n10, n11) = match out_cls {
                    PairClass::Singlet => unreachable!(),
                    PairClass::T0 => (C0, s2 * s, s2 * s, C0),
                    PairClass::TPlus => (s, C0, C0, C0),
                    PairClass::TMinus => (C0, C0, C0, s),
                };
                state.amps[idx] = n00;
                state.amps[idx | mk] = n01;
                state.amps[idx | mj] = n10;
                state.amps[idx | mj | mk] = n11;
            }
        }
    }
    Ok(())
}

/// Initialize the pair of `axis` into a singlet, with the affine error model.
pub fn spam_init(
    state: &mut SpinState,
    pair: (usize, usize),
    model: &SpamErrorModel,
    rng: &mut impl Rng,
) -> Result<()> {
    let p = state.pair_class_probs(pair.0, pair.1);
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::Spam(format!(
            "pair class probabilities sum to {total}; state not normalized?"
        )));
    }
    if p.iter().all(|&x| x < 1e-12) {
        return Err(Error::Spam("all pair classes have zero weight".into()));
    }
    let born = sample_from(&p, rng);
    let mut pp = model.init_b;
    for r in 0..4 {
        for c in 0..4 {
            pp[r] += model.init_a[r][c] * p[c];
        }
    }
    let sum: f64 = pp.iter().sum();
    if pp.iter().any(|&x| x < -1e-9) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Spam(format!(
            "affine-transformed init probabilities invalid: {pp:?}"
        )));
    }
    let mut pp_clipped = pp;
    pp_clipped.iter_mut().for_each(|x| *x = x.max(0.0));
    let out = sample_from(&pp_clipped, rng);
    init_project_and_construct(state, pair, born, out)
}

/// Measure the pair of `axis` in the singlet/triplet basis.
///
/// Returns the *recorded* outcome (true = singlet), which differs from the
/// projected branch with the model's flip probabilities. The state collapses
/// onto the projected branch (never onto the recorded one).
pub fn spam_measure(
    state: &mut SpinState,
    pair: (usize, usize),
    model: &SpamErrorModel,
    rng: &mut impl Rng,
) -> Result<bool> {
    let p = state.pair_class_probs(pair.0, pair.1);
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::Spam(format!(
            "pair class probabilities sum to {total}; state not normalized?"
        )));
    }
    let singlet = rng.gen::<f64>() < p[0] / total;
    state.project_pair_singlet(pair.0, pair.1, singlet)?;
    let flip = if singlet {
        rng.gen::<f64>() < model.read_singlet_as_triplet
    } else {
        rng.gen::<f64>() < model.read_triplet_as_singlet
    };
    Ok(singlet ^ flip)
}

/// Recorded outcome of one SPAM measurement within a shot.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpamOutcome {
    pub timestep: usize,
    pub axis: usize,
    pub singlet: bool,
}

/// Results of one noisy shot.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShotRecord {
    pub shot: u64,
    /// Derived RNG seed this shot actually used.
    pub seed: u64,
    pub outcomes: Vec<SpamOutcome>,
}

/// Evolve one timestep with explicit constant fields (no noise plan).
///
/// `pulses` lists `(spin_pair, exchangle)`; pairs must be spin-disjoint.
/// Fields are held constant across the window; each pulse cluster (pair plus
/// its two fields) is exponentiated exactly, spectator spins rotate under
/// their fields alone, so the result is exact for constant Hamiltonians.
pub fn apply_timestep(
    state: &mut SpinState,
    pulses: &[((usize, usize), f64)],
    fields_tesla: &[[f64; 3]],
    gamma: f64,
    duration: f64,
) -> Result<()> {
    let n = state.n_spins();
    if fields_tesla.len() != n {
        return Err(Error::dim("one field vector per spin required"));
    }
    let mut in_pulse = vec![false; n];
    for &((j, k), theta) in pulses {
        if j >= n || k >= n || j == k {
            return Err(Error::arg(format!("bad pair ({j},{k})")));
        }
        if in_pulse[j] || in_pulse[k] {
            return Err(Error::Schedule(
                "simultaneous pulses share a spin".into(),
            ));
        }
        in_pulse[j] = true;
        in_pulse[k] = true;
        let jrate = theta / duration;
        let wj = scale3(fields_tesla[j], gamma);
        let wk = scale3(fields_tesla[k], gamma);
        let kernel = pair_cluster_kernel(wj, wk, jrate, duration)?;
        state.apply_pair(j, k, &kernel);
    }
    for j in 0..n {
        if !in_pulse[j] {
            let w = scale3(fields_tesla[j], gamma);
            state.apply_single(j, &field_kernel(w, duration));
        }
    }
    Ok(())
}

fn scale3(b: [f64; 3], gamma: f64) -> [f64; 3] {
    [b[0] * gamma, b[1] * gamma, b[2] * gamma]
}

/// Exact propagator of `H = ω̄j·S̄j + ω̄k·S̄k + J S̄j·S̄k` over `t`.
///
/// Pure-z fields use a closed form; general fields fall back to a 4×4
/// eigendecomposition.
pub fn pair_cluster_kernel(
    wj: [f64; 3],
    wk: [f64; 3],
    jrate: f64,
    t: f64,
) -> Result<[Complex64; 16]> {
    let transverse = wj[0].abs() + wj[1].abs() + wk[0].abs() + wk[1].abs();
    if transverse == 0.0 {
        // Diagonal sectors: |00⟩, |11⟩ pick up phases; {|01⟩,|10⟩} rotates.
        let bj = wj[2];
        let bk = wk[2];
        let e00 = jrate / 4.0 + 0.5 * (bj + bk);
        let e11 = jrate / 4.0 - 0.5 * (bj + bk);
        let p00 = Complex64::from_polar(1.0, -e00 * t);
        let p11 = Complex64::from_polar(1.0, -e11 * t);
        // Middle block: −J/4·I + (J/2)σx + (Δ/2)σz with Δ = bj−bk.
        let delta = bj - bk;
        let omega = (jrate * jrate + delta * delta).sqrt();
        let pre = Complex64::from_polar(1.0, jrate * t / 4.0);
        let (mid00, mid01, mid10, mid11) = if omega == 0.0 {
            (Complex64::new(1.0, 0.0), C0, C0, Complex64::new(1.0, 0.0))
        } else {
            let half = 0.5 * omega * t;
            let (s, c) = half.sin_cos();
            let nx = jrate / omega;
            let nz = delta / omega;
            (
                Complex64::new(c, -s * nz),
                Complex64::new(0.0, -s * nx),
                Complex64::new(0.0, -s * nx),
                Complex64::new(c, s * nz),
            )
        };
        Ok([
            p00, C0, C0, C0, //
            C0, pre * mid00, pre * mid01, C0, //
            C0, pre * mid10, pre * mid11, C0, //
            C0, C0, C0, p11,
        ])
    } else {
        use crate::linalg::{expm_minus_i_h_t, CMat};
        let mut h = CMat::zeros((4, 4));
        // ω̄·S̄ on each spin within the 2-spin space (local order 2σj+σk).
        let add_field = |h: &mut CMat, w: [f64; 3], which: usize| {
            // which=0: spin j (high local bit), which=1: spin k.
            for a in 0..4usize {
                for b in 0..4usize {
                    let (sa, oa) = if which == 0 { (a >> 1, a & 1) } else { (a & 1, a >> 1) };
                    let (sb, ob) = if which == 0 { (b >> 1, b & 1) } else { (b & 1, b >> 1) };
                    if oa != ob {
                        continue;
                    }
                    let sigma = match (sa, sb) {
                        (0, 0) => Complex64::new(0.5 * w[2], 0.0),
                        (1, 1) => Complex64::new(-0.5 * w[2], 0.0),
                        (0, 1) => Complex64::new(0.5 * w[0], -0.5 * w[1]),
                        (1, 0) => Complex64::new(0.5 * w[0], 0.5 * w[1]),
                        _ => unreachable!(),
                    };
                    h[(a, b)] += sigma;
                }
            }
        };
        add_field(&mut h, wj, 0);
        add_field(&mut h, wk, 1);
        let quarter = 0.25 * jrate;
        h[(0, 0)] += Complex64::new(quarter, 0.0);
        h[(3, 3)] += Complex64::new(quarter, 0.0);
        h[(1, 1)] += Complex64::new(-quarter, 0.0);
        h[(2, 2)] += Complex64::new(-quarter, 0.0);
        h[(1, 2)] += Complex64::new(2.0 * quarter, 0.0);
        h[(2, 1)] += Complex64::new(2.0 * quarter, 0.0);
        let u = expm_minus_i_h_t(&h, t)?;
        let mut out = [C0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[4 * r + c] = u[(r, c)];
            }
        }
        Ok(out)
    }
}

/// Run a flat schedule for `shots` shots under a noise plan.
///
/// Shots are independent and deterministic given `(master_seed, shot index)`;
/// the iteration parallelizes over shots without affecting results.
pub fn run_flatseq(
    seq: &FlatSeq,
    plan: &NoisePlan,
    master_seed: u64,
    shots: usize,
) -> Result<Vec<ShotRecord>> {
    seq.validate()?;
    plan.validate(seq)?;
    let records: Result<Vec<ShotRecord>> = (0..shots as u64)
        .into_par_iter()
        .map(|shot| {
            let (rec, _) = run_single_shot(seq, plan, master_seed, shot)?;
            Ok(rec)
        })
        .collect();
    records
}

/// Run one shot, returning the record and the final state (for tests and
/// channel extraction).
pub fn run_single_shot(
    seq: &FlatSeq,
    plan: &NoisePlan,
    master_seed: u64,
    shot: u64,
) -> Result<(ShotRecord, SpinState)> {
    let mut rng = seeding::rng_for(master_seed, "spin-shot", shot);
    let noise = plan.sample_shot(seq, &mut rng)?;
    let mut state = SpinState::all_up(seq.n_spins);
    let mut outcomes = Vec::new();
    run_shot_on_state(seq, plan, &noise, &mut state, &mut rng, &mut outcomes)?;
    Ok((
        ShotRecord {
            shot,
            seed: seeding::derive_seed(master_seed, "spin-shot", shot),
            outcomes,
        },
        state,
    ))
}

/// Advance `state` through the whole schedule with pre-sampled shot noise.
/// Exposed for channel extraction, which needs custom initial states.
pub fn run_shot_on_state(
    seq: &FlatSeq,
    plan: &NoisePlan,
    noise: &ShotNoise,
    state: &mut SpinState,
    rng: &mut ChaCha12Rng,
    outcomes: &mut Vec<SpamOutcome>,
) -> Result<()> {
    let ts = seq.timestep_seconds();
    let n = seq.n_spins;
    let slices = noise.slices_per_timestep.max(1);
    let dt = ts / slices as f64;
    let frac = seq.pulse_fraction;
    let seq_all_z = seq.fields.as_ref().map_or(true, |f| {
        f.iter().all(|row| row.iter().all(|b| b[0] == 0.0 && b[1] == 0.0))
    });
    let all_z = noise.fields_all_z() && seq_all_z;
    let omega = |t_row: usize, spin: usize, t_abs: f64| -> [f64; 3] {
        let mut w = noise.omega_at(spin, t_abs);
        if let Some(f) = &seq.fields {
            let b = f[t_row][spin];
            w[0] += plan.gamma * b[0];
            w[1] += plan.gamma * b[1];
            w[2] += plan.gamma * b[2];
        }
        w
    };
    let mut spam_here: Vec<&SpamOp> = Vec::new();
    for (t, row) in seq.rows.iter().enumerate() {
        spam_here.clear();
        spam_here.extend(seq.spam.iter().filter(|op| op.timestep == t));
        for op in &spam_here {
            let pair = seq.axes[op.axis].spins;
            match op.kind {
                SpamKind::Init => spam_init(state, pair, &plan.spam, rng)?,
                SpamKind::Measure => {
                    let singlet = spam_measure(state, pair, &plan.spam, rng)?;
                    outcomes.push(SpamOutcome {
                        timestep: t,
                        axis: op.axis,
                        singlet,
                    });
                }
            }
        }
        let active: Vec<(usize, f64)> = row
            .iter()
            .enumerate()
            .filter(|(_, &th)| th != 0.0)
            .map(|(a, &th)| (a, th))
            .collect();
        for s in 0..slices {
            let t_mid = (t as f64 + (s as f64 + 0.5) / slices as f64) * ts;
            // Fraction of this slice during which pulses are on.
            let overlap = (frac * ts - s as f64 * dt).clamp(0.0, dt);
            let mut pulsed = vec![false; n];
            if overlap > 0.0 {
                for &(a, theta) in &active {
                    let (j, k) = seq.axes[a].spins;
                    pulsed[j] = true;
                    pulsed[k] = true;
                    let theta_eff = theta * noise.exchange_scale(a, t_mid);
                    let jrate = theta_eff / (frac * ts);
                    let wj = omega(t, j, t_mid);
                    let wk = omega(t, k, t_mid);
                    let kernel = pair_cluster_kernel(wj, wk, jrate, overlap)?;
                    state.apply_pair(j, k, &kernel);
                    if overlap < dt {
                        // Tail of the slice: fields only.
                        state.apply_single(j, &field_kernel(wj, dt - overlap));
                        state.apply_single(k, &field_kernel(wk, dt - overlap));
                    }
                }
            }
            if all_z {
                apply_z_phases(
                    state,
                    |j| if pulsed[j] { 0.0 } else { omega(t, j, t_mid)[2] },
                    dt,
                );
            } else {
                for j in 0..n {
                    if !pulsed[j] {
                        state.apply_single(j, &field_kernel(omega(t, j, t_mid), dt));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Fused z-rotation pass: applies `exp(-i t ω_j σz/2)` for every spin at once
/// using split phase tables (one complex multiply per amplitude).
fn apply_z_phases(state: &mut SpinState, omega_z: impl Fn(usize) -> f64, t: f64) {
    let n = state.n_spins;
    let half: Vec<f64> = (0..n).map(|j| 0.5 * omega_z(j) * t).collect();
    if half.iter().all(|&x| x == 0.0) {
        return;
    }
    let lo_bits = (n / 2).min(8);
    let hi_bits = n - lo_bits;
    let table = |bits: usize, offset: usize| -> Vec<Complex64> {
        (0..1usize << bits)
            .map(|v| {
                let mut phase = 0.0;
                for b in 0..bits {
                    let spin = n - 1 - (b + offset);
                    let sign = if (v >> b) & 1 == 0 { -1.0 } else { 1.0 };
                    phase += sign * half[spin];
                }
                Complex64::from_polar(1.0, phase)
            })
            .collect()
    };
    let lo = table(lo_bits, 0);
    let hi = table(hi_bits, lo_bits);
    let mask = (1usize << lo_bits) - 1;
    for (idx, amp) in state.amps.iter_mut().enumerate() {
        *amp *= hi[idx >> lo_bits] * lo[idx & mask];
    }
}
