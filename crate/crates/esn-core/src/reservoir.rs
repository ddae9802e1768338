//! Recurrent-matrix construction and state evolution for the five dynamics
//! variants.
//!
//! The general update is
//! `x(n) = (1-a) x(n-1) + a f(g W x(n-1) + b P u(n))`
//! where `P` is the bipolar codebook doubling as the input projection, `f` is
//! either the identity (linear variants) or `tanh`, and the variants pin the
//! hyperparameters as follows:
//!
//! * V1: linear, a = b = g = 1
//! * V2: linear with recurrent decay g, a = 1
//! * V3: tanh with input scaling b, a = g = 1
//! * V4: tanh with input scaling b and decay g, a = 1
//! * V5: leaky integration a, tanh, b, g free

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::{Codebook, SymbolSequence};
use crate::error::{Error, Result};
use crate::rng;

/// Families of unit-spectral-radius recurrent matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Permutation,
    RandomOrthogonal,
}

/// A recurrent matrix. Permutations are stored as index maps and applied as
/// gathers; orthogonal matrices are dense.
#[derive(Debug, Clone, PartialEq)]
pub enum RecurrentMatrix {
    Permutation {
        /// `(W v)[i] = v[p[i]]`.
        p: Vec<u32>,
        /// Inverse map: `(W^-1 v)[i] = v[inv[i]]`.
        inv: Vec<u32>,
        /// Shortest cycle of the permutation; powers alias beyond it.
        min_cycle: usize,
    },
    RandomOrthogonal { w: DMatrix<f64> },
}

impl RecurrentMatrix {
    pub fn n(&self) -> usize {
        match self {
            RecurrentMatrix::Permutation { p, .. } => p.len(),
            RecurrentMatrix::RandomOrthogonal { w } => w.nrows(),
        }
    }

    pub fn kind(&self) -> MatrixKind {
        match self {
            RecurrentMatrix::Permutation { .. } => MatrixKind::Permutation,
            RecurrentMatrix::RandomOrthogonal { .. } => MatrixKind::RandomOrthogonal,
        }
    }

    /// Shortest cycle length (permutations only).
    pub fn min_cycle_len(&self) -> Option<usize> {
        match self {
            RecurrentMatrix::Permutation { min_cycle, .. } => Some(*min_cycle),
            RecurrentMatrix::RandomOrthogonal { .. } => None,
        }
    }

    /// `W v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            RecurrentMatrix::Permutation { p, .. } => {
                DVector::from_fn(p.len(), |i, _| v[p[i] as usize])
            }
            RecurrentMatrix::RandomOrthogonal { w } => w * v,
        }
    }

    /// `W^-1 v` (the transpose for both families).
    pub fn apply_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            RecurrentMatrix::Permutation { inv, .. } => {
                DVector::from_fn(inv.len(), |i, _| v[inv[i] as usize])
            }
            RecurrentMatrix::RandomOrthogonal { w } => w.tr_mul(v),
        }
    }

    /// `W A` for an N x K matrix `A`.
    pub fn apply_mat(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            RecurrentMatrix::Permutation { p, .. } => {
                DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(p[i] as usize, j)])
            }
            RecurrentMatrix::RandomOrthogonal { w } => w * a,
        }
    }

    /// `W^-1 A` for an N x K matrix `A`.
    pub fn apply_inv_mat(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            RecurrentMatrix::Permutation { inv, .. } => {
                DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(inv[i] as usize, j)])
            }
            RecurrentMatrix::RandomOrthogonal { w } => w.tr_mul(a),
        }
    }

    /// `W^e v` for a signed exponent.
    pub fn power_apply(&self, e: i64, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for _ in 0..e.unsigned_abs() {
            out = if e >= 0 { self.apply(&out) } else { self.apply_inv(&out) };
        }
        out
    }

    /// `W^e A` for a signed exponent.
    pub fn power_apply_mat(&self, e: i64, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = a.clone();
        for _ in 0..e.unsigned_abs() {
            out = if e >= 0 { self.apply_mat(&out) } else { self.apply_inv_mat(&out) };
        }
        out
    }
}

/// Draw a recurrent matrix: a uniformly random permutation, or the Q factor of
/// a standard-normal matrix with the R-diagonal sign fix that makes the
/// ensemble Haar-uniform.
pub fn gen_recurrent(kind: MatrixKind, n: usize, seed: u64) -> Result<RecurrentMatrix> {
    if n < 1 {
        return Err(Error::Parameter(format!("matrix size must be >= 1, got {n}")));
    }
    let mut rng = rng::stream(seed);
    match kind {
        MatrixKind::Permutation => {
            let mut p: Vec<u32> = (0..n as u32).collect();
            p.shuffle(&mut rng);
            let mut inv = vec![0u32; n];
            for (i, &pi) in p.iter().enumerate() {
                inv[pi as usize] = i as u32;
            }
            let min_cycle = min_cycle_len(&p);
            Ok(RecurrentMatrix::Permutation { p, inv, min_cycle })
        }
        MatrixKind::RandomOrthogonal => {
            let a: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
            let qr = a.qr();
            let r = qr.r();
            let mut w = qr.q();
            for j in 0..n {
                if r[(j, j)] < 0.0 {
                    for i in 0..n {
                        w[(i, j)] = -w[(i, j)];
                    }
                }
            }
            Ok(RecurrentMatrix::RandomOrthogonal { w })
        }
    }
}

fn min_cycle_len(p: &[u32]) -> usize {
    let mut seen = vec![false; p.len()];
    let mut min = usize::MAX;
    for start in 0..p.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = p[i] as usize;
            len += 1;
        }
        min = min.min(len);
    }
    min
}

/// Dynamics variants (see module docs).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    V1,
    V2,
    V3,
    V4,
    V5,
}

impl Variant {
    pub fn uses_tanh(self) -> bool {
        matches!(self, Variant::V3 | Variant::V4 | Variant::V5)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::V1 => "V1",
            Variant::V2 => "V2",
            Variant::V3 => "V3",
            Variant::V4 => "V4",
            Variant::V5 => "V5",
        }
    }
}

/// Full reservoir specification: dimensions, dynamics variant, hyperparameters,
/// recurrent matrix, and input codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirSpec {
    pub variant: Variant,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub matrix: RecurrentMatrix,
    pub codebook: Codebook,
}

impl ReservoirSpec {
    /// Build a spec, enforcing each variant's hyperparameter restrictions.
    pub fn new(
        variant: Variant,
        alpha: f64,
        beta: f64,
        gamma: f64,
        matrix: RecurrentMatrix,
        codebook: Codebook,
    ) -> Result<Self> {
        if matrix.n() != codebook.n() {
            return Err(Error::Parameter(format!(
                "matrix size {} != codebook dimension {}",
                matrix.n(),
                codebook.n()
            )));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Parameter(format!("alpha must be in (0,1], got {alpha}")));
        }
        if beta <= 0.0 || gamma <= 0.0 {
            return Err(Error::Parameter(format!(
                "beta and gamma must be positive, got beta={beta}, gamma={gamma}"
            )));
        }
        let fixed: &[(&str, f64, f64)] = match variant {
            Variant::V1 => &[("alpha", alpha, 1.0), ("beta", beta, 1.0), ("gamma", gamma, 1.0)],
            Variant::V2 => &[("alpha", alpha, 1.0)],
            Variant::V3 => &[("alpha", alpha, 1.0), ("gamma", gamma, 1.0)],
            Variant::V4 => &[("alpha", alpha, 1.0)],
            Variant::V5 => &[],
        };
        for (name, got, want) in fixed {
            if got != want {
                return Err(Error::Parameter(format!(
                    "variant {} fixes {name}={want}, got {got}",
                    variant.name()
                )));
            }
        }
        Ok(Self { variant, alpha, beta, gamma, matrix, codebook })
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn d(&self) -> usize {
        self.codebook.d()
    }
}

/// Reservoir state at a timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    pub x: DVector<f64>,
    pub n: usize,
}

impl ReservoirState {
    pub fn zero(n_dim: usize) -> Self {
        Self { x: DVector::zeros(n_dim), n: 0 }
    }
}

/// Advance one timestep.
pub fn step(state: &ReservoirState, symbol: u32, spec: &ReservoirSpec) -> Result<ReservoirState> {
    if symbol as usize >= spec.d() {
        return Err(Error::Parameter(format!("symbol {symbol} out of range for D={}", spec.d())));
    }
    if state.x.len() != spec.n() {
        return Err(Error::Parameter(format!(
            "state dimension {} != reservoir size {}",
            state.x.len(),
            spec.n()
        )));
    }
    let mut y = spec.matrix.apply(&state.x);
    let phi = spec.codebook.code(symbol as usize);
    for i in 0..y.len() {
        y[i] = spec.gamma * y[i] + spec.beta * phi[i];
        if spec.variant.uses_tanh() {
            y[i] = libm::tanh(y[i]);
        }
    }
    let x = if spec.alpha == 1.0 {
        y
    } else {
        &state.x * (1.0 - spec.alpha) + y * spec.alpha
    };
    Ok(ReservoirState { x, n: state.n + 1 })
}

/// Which phases of a run to retain in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetainMask {
    pub training: bool,
    pub recall: bool,
}

impl RetainMask {
    pub const TRAINING: Self = Self { training: true, recall: false };
    pub const RECALL: Self = Self { training: false, recall: true };
    pub const BOTH: Self = Self { training: true, recall: true };
}

/// States retained from a run, together with the originating sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    pub states: Vec<DVector<f64>>,
    /// 1-based timestep of each retained state (state after consuming the
    /// n-th symbol).
    pub timesteps: Vec<usize>,
    pub sequence: SymbolSequence,
}

impl StateTrace {
    /// True symbol `d` steps before each retained state's timestep.
    /// Timesteps earlier than the sequence start are unavailable.
    pub fn label_at_lag(&self, idx: usize, d: usize) -> Option<u32> {
        let n = self.timesteps[idx];
        if n < d + 1 {
            return None;
        }
        Some(self.sequence.symbols[n - 1 - d])
    }
}

/// Run the reservoir from the zero state over the whole sequence, retaining
/// states of the requested phases (training timesteps `E+1..=E+M`, recall
/// timesteps `E+M+1..=E+M+R`, 1-based).
pub fn run(sequence: &SymbolSequence, spec: &ReservoirSpec, retain: RetainMask) -> Result<StateTrace> {
    if sequence.d > spec.d() {
        return Err(Error::Parameter(format!(
            "sequence alphabet {} exceeds codebook alphabet {}",
            sequence.d,
            spec.d()
        )));
    }
    let (e, m) = (sequence.e, sequence.m);
    let mut state = ReservoirState::zero(spec.n());
    let mut states = Vec::new();
    let mut timesteps = Vec::new();
    for (i, &s) in sequence.symbols.iter().enumerate() {
        state = step(&state, s, spec)?;
        let n = i + 1;
        let keep = (retain.training && n > e && n <= e + m) || (retain.recall && n > e + m);
        if keep {
            states.push(state.x.clone());
            timesteps.push(n);
        }
    }
    Ok(StateTrace { states, timesteps, sequence: sequence.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{gen_codebook, gen_sequence};
    use approx::assert_abs_diff_eq;

    fn ortho(n: usize, seed: u64) -> RecurrentMatrix {
        gen_recurrent(MatrixKind::RandomOrthogonal, n, seed).unwrap()
    }

    #[test]
    fn permutation_is_bijection() {
        let m = gen_recurrent(MatrixKind::Permutation, 5, 1).unwrap();
        if let RecurrentMatrix::Permutation { p, inv, .. } = &m {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..5).collect::<Vec<_>>());
            for i in 0..5 {
                assert_eq!(inv[p[i] as usize], i as u32);
            }
        } else {
            panic!("wrong kind");
        }
        // Applying the permutation lcm-of-cycle-lengths times is identity; a
        // safe multiple is N!.
        let v = DVector::from_fn(5, |i, _| i as f64);
        assert_eq!(m.power_apply(120, &v), v);
    }

    #[test]
    fn orthogonal_matrix_is_orthogonal() {
        let m = ortho(64, 2);
        if let RecurrentMatrix::RandomOrthogonal { w } = &m {
            let g = w.tr_mul(w);
            let id = DMatrix::<f64>::identity(64, 64);
            assert!((g - id).amax() < 1e-10);
        }
    }

    #[test]
    fn orthogonal_spectral_radius_is_one() {
        // Power iteration on W^T W has eigenvalue 1; also any vector keeps its
        // norm under repeated application, pinning max |eigenvalue| = 1.
        let m = ortho(64, 3);
        let mut v = DVector::from_fn(64, |i, _| (i as f64 * 0.37).sin() + 0.1);
        let n0 = v.norm();
        for _ in 0..50 {
            v = m.apply(&v);
        }
        assert_abs_diff_eq!(v.norm(), n0, epsilon = 1e-8 * n0);
    }

    #[test]
    fn haar_sign_fix_changes_ensemble() {
        // The diagonal of R must be non-negative after the fix: re-deriving
        // R = Q^T A should give a non-negative diagonal.
        let n = 16;
        let mut rng = crate::rng::stream(5);
        let a = DMatrix::from_fn(n, n, |_, _| {
            rand_distr::Distribution::<f64>::sample(&StandardNormal, &mut rng)
        });
        // Rebuild with the library path and the same stream: gen_recurrent
        // consumes the identical draws.
        let m = gen_recurrent(MatrixKind::RandomOrthogonal, n, 5).unwrap();
        if let RecurrentMatrix::RandomOrthogonal { w } = &m {
            let r = w.tr_mul(&a);
            for j in 0..n {
                assert!(r[(j, j)] >= 0.0, "diagonal {} negative: {}", j, r[(j, j)]);
            }
        }
    }

    #[test]
    fn power_apply_identity_and_isometry() {
        for m in [gen_recurrent(MatrixKind::Permutation, 32, 7).unwrap(), ortho(32, 7)] {
            let v = DVector::from_fn(32, |i, _| (i as f64).cos());
            assert_eq!(m.power_apply(0, &v), v);
            for e in [-9i64, -1, 1, 5, 17] {
                assert_abs_diff_eq!(m.power_apply(e, &v).norm(), v.norm(), epsilon = 1e-9);
            }
            // W^e then W^-e round-trips.
            let w = m.power_apply(-6, &m.power_apply(6, &v));
            assert!((w - &v).amax() < 1e-9);
        }
    }

    #[test]
    fn min_cycle_matches_direct_count() {
        let m = gen_recurrent(MatrixKind::Permutation, 100, 11).unwrap();
        let c = m.min_cycle_len().unwrap();
        // W^c must fix at least one coordinate; no smaller power may fix any
        // coordinate of every cycle member. Spot check via basis vector.
        if let RecurrentMatrix::Permutation { p, .. } = &m {
            let mut found = false;
            'outer: for start in 0..100usize {
                let mut i = start;
                for _ in 0..c {
                    i = p[i] as usize;
                }
                if i == start {
                    // also confirm no shorter return for this start
                    let mut j = start;
                    for t in 1..c {
                        j = p[j] as usize;
                        assert_ne!(j, start, "cycle shorter than {c} at step {t}");
                    }
                    found = true;
                    break 'outer;
                }
            }
            assert!(found);
        }
    }

    fn small_spec(variant: Variant, alpha: f64, beta: f64, gamma: f64, seed: u64) -> ReservoirSpec {
        let cb = gen_codebook(16, 3, seed).unwrap();
        let m = gen_recurrent(MatrixKind::Permutation, 16, seed + 1).unwrap();
        ReservoirSpec::new(variant, alpha, beta, gamma, m, cb).unwrap()
    }

    #[test]
    fn variant_constraints_are_enforced() {
        let cb = gen_codebook(8, 2, 0).unwrap();
        let m = gen_recurrent(MatrixKind::Permutation, 8, 0).unwrap();
        assert!(ReservoirSpec::new(Variant::V1, 1.0, 1.0, 0.9, m.clone(), cb.clone()).is_err());
        assert!(ReservoirSpec::new(Variant::V3, 1.0, 0.5, 0.9, m.clone(), cb.clone()).is_err());
        assert!(ReservoirSpec::new(Variant::V2, 0.5, 1.0, 0.9, m.clone(), cb.clone()).is_err());
        assert!(ReservoirSpec::new(Variant::V5, 0.5, 0.5, 0.9, m, cb).is_ok());
    }

    #[test]
    fn step_from_zero_state() {
        // V1: x' = phi_j.
        let spec = small_spec(Variant::V1, 1.0, 1.0, 1.0, 3);
        let s = step(&ReservoirState::zero(16), 1, &spec).unwrap();
        assert_eq!(s.x, spec.codebook.code(1).into_owned());
        // V2 (gamma=0.9, beta=0.5): x' = 0.5 phi_j.
        let spec = small_spec(Variant::V2, 1.0, 0.5, 0.9, 3);
        let s = step(&ReservoirState::zero(16), 2, &spec).unwrap();
        assert_eq!(s.x, spec.codebook.code(2).into_owned() * 0.5);
        // V5 (alpha=0.5, gamma=1, beta=1): x' = 0.5 tanh(phi_j).
        let spec = small_spec(Variant::V5, 0.5, 1.0, 1.0, 3);
        let s = step(&ReservoirState::zero(16), 0, &spec).unwrap();
        let expect = spec.codebook.code(0).map(|v| 0.5 * libm::tanh(v));
        assert!((s.x - expect).amax() < 1e-15);
    }

    #[test]
    fn run_expands_as_superposition_for_v1() {
        // V1, E=M=0, R=3: x(3) = sum_k W^k phi_{s(3-k)}.
        let spec = small_spec(Variant::V1, 1.0, 1.0, 1.0, 4);
        let seq = gen_sequence(0, 0, 3, 3, 9).unwrap();
        let trace = run(&seq, &spec, RetainMask::RECALL).unwrap();
        assert_eq!(trace.states.len(), 3);
        let mut expect = DVector::zeros(16);
        for k in 0..3i64 {
            let phi = spec.codebook.code(seq.symbols[(2 - k) as usize] as usize).into_owned();
            expect += spec.matrix.power_apply(k, &phi);
        }
        assert!((trace.states[2].clone() - expect).amax() < 1e-12);
    }

    #[test]
    fn run_retains_requested_phases() {
        let spec = small_spec(Variant::V2, 1.0, 1.0, 0.9, 5);
        let seq = gen_sequence(10, 7, 4, 3, 2).unwrap();
        let t = run(&seq, &spec, RetainMask::BOTH).unwrap();
        assert_eq!(t.states.len(), 11);
        assert_eq!(t.timesteps.first(), Some(&11));
        assert_eq!(t.timesteps.last(), Some(&21));
        let t = run(&seq, &spec, RetainMask::TRAINING).unwrap();
        assert_eq!(t.states.len(), 7);
        let t = run(&seq, &spec, RetainMask::RECALL).unwrap();
        assert_eq!(t.states.len(), 4);
        assert_eq!(t.label_at_lag(0, 2), Some(seq.symbols[15]));
    }

    #[test]
    fn gamma_zero_limit_is_memoryless() {
        // V2 with tiny gamma: x(n) ~= beta phi_s(n).
        let cb = gen_codebook(16, 3, 6).unwrap();
        let m = gen_recurrent(MatrixKind::Permutation, 16, 7).unwrap();
        let spec = ReservoirSpec::new(Variant::V2, 1.0, 0.7, 1e-300, m, cb).unwrap();
        let seq = gen_sequence(0, 0, 5, 3, 8).unwrap();
        let t = run(&seq, &spec, RetainMask::RECALL).unwrap();
        for (i, x) in t.states.iter().enumerate() {
            let expect = spec.codebook.code(seq.symbols[i] as usize) * 0.7;
            assert!((x - expect).amax() < 1e-12);
        }
    }

    #[test]
    fn tanh_variants_stay_bounded() {
        for variant in [Variant::V3, Variant::V4, Variant::V5] {
            let (g, a) = match variant {
                Variant::V3 => (1.0, 1.0),
                Variant::V4 => (1.2, 1.0),
                _ => (1.2, 0.7),
            };
            let cb = gen_codebook(32, 4, 20).unwrap();
            let m = gen_recurrent(MatrixKind::RandomOrthogonal, 32, 21).unwrap();
            let spec = ReservoirSpec::new(variant, a, 2.0, g, m, cb).unwrap();
            let seq = gen_sequence(0, 0, 200, 4, 22).unwrap();
            let t = run(&seq, &spec, RetainMask::RECALL).unwrap();
            for x in &t.states {
                assert!(x.amax() <= 1.0 + 1e-15);
            }
        }
    }

    #[test]
    fn variant_degeneracies() {
        // V5 with alpha=1 equals V4; V4 with gamma=1 equals V3; V2 with
        // beta=gamma=1 equals V1.
        let cb = gen_codebook(24, 3, 30).unwrap();
        let m = gen_recurrent(MatrixKind::RandomOrthogonal, 24, 31).unwrap();
        let seq = gen_sequence(0, 0, 50, 3, 32).unwrap();
        let pairs = [
            (
                ReservoirSpec::new(Variant::V5, 1.0, 0.5, 0.9, m.clone(), cb.clone()).unwrap(),
                ReservoirSpec::new(Variant::V4, 1.0, 0.5, 0.9, m.clone(), cb.clone()).unwrap(),
            ),
            (
                ReservoirSpec::new(Variant::V4, 1.0, 0.5, 1.0, m.clone(), cb.clone()).unwrap(),
                ReservoirSpec::new(Variant::V3, 1.0, 0.5, 1.0, m.clone(), cb.clone()).unwrap(),
            ),
            (
                ReservoirSpec::new(Variant::V2, 1.0, 1.0, 1.0, m.clone(), cb.clone()).unwrap(),
                ReservoirSpec::new(Variant::V1, 1.0, 1.0, 1.0, m.clone(), cb.clone()).unwrap(),
            ),
        ];
        for (a, b) in pairs {
            let ta = run(&seq, &a, RetainMask::RECALL).unwrap();
            let tb = run(&seq, &b, RetainMask::RECALL).unwrap();
            for (xa, xb) in ta.states.iter().zip(&tb.states) {
                assert!((xa - xb).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn echo_state_fading() {
        // Two runs from different initial states on the same input converge.
        let cb = gen_codebook(32, 4, 40).unwrap();
        let m = gen_recurrent(MatrixKind::RandomOrthogonal, 32, 41).unwrap();
        let spec = ReservoirSpec::new(Variant::V2, 1.0, 1.0, 0.9, m, cb).unwrap();
        let seq = gen_sequence(0, 0, 60, 4, 42).unwrap();
        let mut xa = ReservoirState::zero(32);
        let mut xb = ReservoirState { x: DVector::from_element(32, 0.9), n: 0 };
        let mut last = (xa.x.clone() - xb.x.clone()).norm();
        for &s in &seq.symbols {
            xa = step(&xa, s, &spec).unwrap();
            xb = step(&xb, s, &spec).unwrap();
            let gap = (xa.x.clone() - xb.x.clone()).norm();
            assert!(gap <= last + 1e-12, "gap grew: {last} -> {gap}");
            last = gap;
        }
        assert!(last < 1e-2);
    }
}
