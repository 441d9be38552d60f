//! Simulation, benchmarking and error-analysis toolkit for exchange-only (EO)
//! spin qubits.
//!
//! An EO qubit stores one logical two-level system in the total-spin structure
//! of three electron spins. All control is electrical: nearest-neighbour
//! exchange pulses `E(θ) = exp(-i θ S_j·S_k)` plus always-on magnetic fields.
//! This crate provides the layers needed to study such devices end to end:
//!
//! * [`spin`] — dense state-vector simulation of pulsed spin chains with
//!   singlet/triplet SPAM, magnetic-field evolution and noise trajectories;
//! * [`noise`] — 1/f (pink) noise generation and closed-loop calibration of
//!   noise strengths against dephasing-time and exchange-quality targets;
//! * [`encoding`] — the decoherence-free-subsystem basis, gauge-averaged
//!   ququart channel extraction (`GaqqMap`) and error attribution;
//! * [`gates`] — qubit-level circuits, the single-qubit Clifford library,
//!   pulse-sequence databases and lowering to flat pulse schedules with
//!   permutation dynamical decoupling;
//! * [`synth`] — replica-exchange Monte Carlo plus gradient (GRAPE)
//!   refinement for discovering new pulse sequences;
//! * [`event`] — fast stochastic qubit-level simulation (Pauli faults with
//!   per-qubit leakage bits, plus a coherent-rotation evaluator);
//! * [`brb`] — blind randomized benchmarking with an LFSR-driven gate
//!   controller and the associated decay fits;
//! * [`qec`] — repetition-code and [[4,2,2]] experiment construction,
//!   detectors, decoders, detection-event analysis and post-selection;
//! * [`dem`] — detector-error-model sampling, estimation and comparison.
//!
//! Conventions used throughout (documented once here, relied on everywhere):
//!
//! * Spin `0` of an `N`-spin register is the **most significant bit** of the
//!   basis index: `|σ0 σ1 … σ(N-1)⟩` ↔ index `Σ_j σ(N-1-j)·2^j`, with
//!   `σ = 0` meaning spin up (`σz = +1`).
//! * Exchange pulses use `E(θ) = exp(-i θ S_j·S_k)` with `S = σ/2`, so
//!   `θ = π` is a full SWAP of the two spins up to global phase, and the
//!   *exchangle* `θ` is the time-integral of the exchange strength.
//! * Times are seconds, fields tesla, exchange strengths and gyromagnetic
//!   ratios rad/s (file formats use the unit-suffixed keys documented on the
//!   serde types).

pub mod brb;
pub mod dem;
pub mod encoding;
pub mod error;
pub mod event;
pub mod gates;
pub mod linalg;
pub mod noise;
pub mod qec;
pub mod seeding;
pub mod spin;
pub mod synth;
pub mod testkit;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Gyromagnetic ratio of a free electron, rad s⁻¹ T⁻¹ (2π × 28.0249 GHz/T).
pub const GAMMA_E: f64 = 1.760_859_630e11;
