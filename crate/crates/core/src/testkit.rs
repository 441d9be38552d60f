//! Independent oracles for tests.
//!
//! Everything here is deliberately written against the *definitions* — dense
//! Kronecker-product operators, eigendecomposition-based exponentials and
//! textbook Clebsch-Gordan tables — rather than against the optimized
//! bit-twiddling kernels used by the simulators. Tests compare the fast
//! implementations to these slow, obviously-correct paths.

use num_complex::Complex64;

use crate::linalg::{expm_minus_i_h_t, kron, CMat};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Pauli matrices (σx, σy, σz) and the 2×2 identity.
pub fn paulis() -> [CMat; 4] {
    let i2 = CMat::from_shape_vec((2, 2), vec![c(1., 0.), c(0., 0.), c(0., 0.), c(1., 0.)]).unwrap();
    let sx = CMat::from_shape_vec((2, 2), vec![c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]).unwrap();
    let sy = CMat::from_shape_vec((2, 2), vec![c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]).unwrap();
    let sz = CMat::from_shape_vec((2, 2), vec![c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]).unwrap();
    [i2, sx, sy, sz]
}

/// Embed a single-spin operator on spin `j` of an `N`-spin register.
///
/// Spin 0 is the most significant bit of the basis index, i.e. the leftmost
/// factor of the Kronecker chain.
pub fn embed_single(op: &CMat, j: usize, n: usize) -> CMat {
    let [i2, ..] = paulis();
    let mut acc = if j == 0 { op.clone() } else { i2.clone() };
    for k in 1..n {
        let f = if k == j { op } else { &i2 };
        acc = kron(&acc, f);
    }
    acc
}

/// Dense `S_j · S_k` on an `N`-spin register, `S = σ/2`.
pub fn spin_dot_spin(j: usize, k: usize, n: usize) -> CMat {
    let [_, sx, sy, sz] = paulis();
    let mut acc = CMat::zeros((1 << n, 1 << n));
    for p in [&sx, &sy, &sz] {
        let a = embed_single(p, j, n);
        let b = embed_single(p, k, n);
        acc = acc + a.dot(&b).mapv(|z| z * 0.25);
    }
    acc
}

/// Dense `B̄ · S̄_j` (field in tesla times γ gives rad/s; pass the product).
pub fn field_dot_spin(b_rad_per_s: [f64; 3], j: usize, n: usize) -> CMat {
    let [_, sx, sy, sz] = paulis();
    let mut acc = CMat::zeros((1 << n, 1 << n));
    for (w, p) in b_rad_per_s.iter().zip([&sx, &sy, &sz]) {
        acc = acc + embed_single(p, j, n).mapv(|z| z * 0.5 * *w);
    }
    acc
}

/// One term of a pulsed-chain Hamiltonian: fields on every spin plus a set of
/// simultaneous exchange couplings, all in rad/s.
pub struct DenseHamiltonian {
    pub n_spins: usize,
    pub h: CMat,
}

impl DenseHamiltonian {
    pub fn new(n_spins: usize) -> Self {
        DenseHamiltonian {
            n_spins,
            h: CMat::zeros((1 << n_spins, 1 << n_spins)),
        }
    }

    pub fn add_field(&mut self, j: usize, b_rad_per_s: [f64; 3]) -> &mut Self {
        self.h = &self.h + &field_dot_spin(b_rad_per_s, j, self.n_spins);
        self
    }

    pub fn add_exchange(&mut self, j: usize, k: usize, j_rad_per_s: f64) -> &mut Self {
        self.h = &self.h + &spin_dot_spin(j, k, self.n_spins).mapv(|z| z * j_rad_per_s);
        self
    }

    /// Propagator `exp(-i H t)` by eigendecomposition.
    pub fn propagator(&self, t: f64) -> CMat {
        expm_minus_i_h_t(&self.h, t).expect("oracle Hamiltonian must be Hermitian")
    }
}

/// Embed a two-spin operator (4×4 over local index 2σ_j+σ_k) onto spins
/// `(j,k)` of an `N`-spin register.
pub fn embed_pair_projector(op: &CMat, j: usize, k: usize, n: usize) -> CMat {
    assert_ne!(j, k);
    let dim = 1usize << n;
    let bj = n - 1 - j;
    let bk = n - 1 - k;
    let mut out = CMat::zeros((dim, dim));
    for row in 0..dim {
        let lr = (((row >> bj) & 1) << 1) | ((row >> bk) & 1);
        let rest = row & !((1 << bj) | (1 << bk));
        for lc in 0..4usize {
            let col = rest | ((lc >> 1) << bj) | ((lc & 1) << bk);
            out[(row, col)] = op[(lr, lc)];
        }
    }
    out
}

/// Apply a dense matrix to a state vector (oracle-side matvec).
pub fn apply_dense(u: &CMat, psi: &[Complex64]) -> Vec<Complex64> {
    let n = psi.len();
    assert_eq!(u.nrows(), n);
    (0..n)
        .map(|i| (0..n).map(|j| u[(i, j)] * psi[j]).sum())
        .collect()
}

/// `|⟨a|b⟩|²` for normalized state vectors.
pub fn state_fidelity(a: &[Complex64], b: &[Complex64]) -> f64 {
    let ip: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    ip.norm_sqr()
}

/// Exchange unitary oracle `E(θ) = exp(-i θ S·S)` on two spins (4×4).
pub fn exchange_unitary_oracle(theta: f64) -> CMat {
    expm_minus_i_h_t(&spin_dot_spin(0, 1, 2), theta).unwrap()
}

/// The four singlet/triplet projectors on a spin pair, in the computational
/// basis |↑↑⟩,|↑↓⟩,|↓↑⟩,|↓↓⟩ — frozen as printed.
pub fn spam_projectors() -> [CMat; 4] {
    let z = c(0., 0.);
    let h = c(0.5, 0.);
    let m = c(-0.5, 0.);
    let one = c(1., 0.);
    let p_s = CMat::from_shape_vec(
        (4, 4),
        vec![z, z, z, z, z, h, m, z, z, m, h, z, z, z, z, z],
    )
    .unwrap();
    let p_t0 = CMat::from_shape_vec(
        (4, 4),
        vec![z, z, z, z, z, h, h, z, z, h, h, z, z, z, z, z],
    )
    .unwrap();
    let p_tp = CMat::from_shape_vec(
        (4, 4),
        vec![one, z, z, z, z, z, z, z, z, z, z, z, z, z, z, z],
    )
    .unwrap();
    let p_tm = CMat::from_shape_vec(
        (4, 4),
        vec![z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, one],
    )
    .unwrap();
    [p_s, p_t0, p_tp, p_tm]
}

/// Three-spin total-angular-momentum basis from the textbook Clebsch-Gordan
/// table, as an 8×8 matrix whose columns are, in order,
/// |S12,S;m⟩ = |0,½;+½⟩, |0,½;−½⟩, |1,½;+½⟩, |1,½;−½⟩,
///             |1,3/2;+½⟩, |1,3/2;−½⟩, |1,3/2;+3/2⟩, |1,3/2;−3/2⟩
/// over computational indices |σ0σ1σ2⟩ (σ=0 is ↑, spin 0 most significant).
pub fn dfs_basis_oracle() -> CMat {
    let mut v = CMat::zeros((8, 8));
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let s3 = 1.0 / 3f64.sqrt();
    let s6 = 1.0 / 6f64.sqrt();
    let s23 = (2f64 / 3.0).sqrt();
    // |0,1/2;+1/2⟩ = (|↑↓↑⟩ − |↓↑↑⟩)/√2
    v[(0b010, 0)] = c(s2, 0.);
    v[(0b100, 0)] = c(-s2, 0.);
    // |0,1/2;−1/2⟩ = (|↑↓↓⟩ − |↓↑↓⟩)/√2
    v[(0b011, 1)] = c(s2, 0.);
    v[(0b101, 1)] = c(-s2, 0.);
    // |1,1/2;+1/2⟩ = √(2/3)|↑↑↓⟩ − (|↑↓↑⟩+|↓↑↑⟩)/√6
    v[(0b001, 2)] = c(s23, 0.);
    v[(0b010, 2)] = c(-s6, 0.);
    v[(0b100, 2)] = c(-s6, 0.);
    // |1,1/2;−1/2⟩ = (|↑↓↓⟩+|↓↑↓⟩)/√6 − √(2/3)|↓↓↑⟩
    v[(0b011, 3)] = c(s6, 0.);
    v[(0b101, 3)] = c(s6, 0.);
    v[(0b110, 3)] = c(-s23, 0.);
    // |1,3/2;+1/2⟩ = (|↑↑↓⟩+|↑↓↑⟩+|↓↑↑⟩)/√3
    v[(0b001, 4)] = c(s3, 0.);
    v[(0b010, 4)] = c(s3, 0.);
    v[(0b100, 4)] = c(s3, 0.);
    // |1,3/2;−1/2⟩ = (|↑↓↓⟩+|↓↑↓⟩+|↓↓↑⟩)/√3
    v[(0b011, 5)] = c(s3, 0.);
    v[(0b101, 5)] = c(s3, 0.);
    v[(0b110, 5)] = c(s3, 0.);
    // |1,3/2;+3/2⟩ = |↑↑↑⟩ ; |1,3/2;−3/2⟩ = |↓↓↓⟩
    v[(0b000, 6)] = c(1., 0.);
    v[(0b111, 7)] = c(1., 0.);
    v
}

/// Simple deterministic pseudo-random state, independent of the rand crate.
pub fn random_state(n_spins: usize, seed: u64) -> Vec<Complex64> {
    let dim = 1usize << n_spins;
    let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(12345);
    let mut next = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut v: Vec<Complex64> = (0..dim).map(|_| c(next(), next())).collect();
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= norm);
    v
}
