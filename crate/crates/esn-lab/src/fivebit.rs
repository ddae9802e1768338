//! The 5-bit memory task and the minimal-reservoir search.
//!
//! Alphabet layout (D = 4): symbols 0 and 1 carry information, symbol 2 is
//! the distractor, symbol 3 is the cue. A trial presents the 5 information
//! symbols, then the cue, then T distractors; the final state is decoded with
//! codebook readouts at delays T (cue) and T+1..T+5 (information symbols,
//! most recent first). Success is judged on the 5 information symbols; cue
//! accuracy is reported separately.

use esn_core::codec::gen_codebook;
use esn_core::readout::{build_codebook_readout, ReadoutMethod};
use esn_core::reservoir::{gen_recurrent, MatrixKind, ReservoirSpec, Variant};
use esn_core::theory::{
    capability, episodic_scalar_moments, predict_iid, AnalyticModel, MomentStatsReduced,
};
use esn_core::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

pub const INFO0: u32 = 0;
pub const INFO1: u32 = 1;
pub const DISTRACTOR: u32 = 2;
pub const CUE: u32 = 3;
pub const D_ALPHABET: usize = 4;
pub const SIGNAL_BITS: usize = 5;

/// Hyperparameters of the 5-bit reservoir (saturating dynamics with decay on
/// a permutation matrix).
#[derive(Debug, Clone, Copy)]
pub struct FiveBitSpec {
    pub n: usize,
    pub beta: f64,
    pub gamma: f64,
    /// Distractor period.
    pub t: usize,
    /// Required mean accuracy over the information symbols.
    pub target: f64,
}

impl FiveBitSpec {
    /// Caption defaults: beta = 2^-6, gamma = 0.99, target 0.99.
    pub fn new(n: usize, t: usize) -> Self {
        Self { n, beta: 1.0 / 64.0, gamma: 0.99, t, target: 0.99 }
    }

    fn model(&self) -> AnalyticModel {
        AnalyticModel {
            kind: MatrixKind::Permutation,
            variant: Variant::V4,
            n: self.n,
            alpha: 1.0,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    /// Total sequence length: 5 signal symbols + cue + T distractors.
    pub fn episode_len(&self) -> usize {
        SIGNAL_BITS + 1 + self.t
    }
}

/// Outcome over all 32 signal patterns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiveBitResult {
    /// Mean per-symbol retrieval accuracy over the 5 information symbols.
    pub info_accuracy: f64,
    /// Retrieval accuracy of the cue symbol (reported, not part of success).
    pub cue_accuracy: f64,
    pub success: bool,
}

/// Run one network (one codebook + permutation draw) over all 32 signal
/// patterns and score the retrievals from each final state.
pub fn run_five_bit(spec: &FiveBitSpec, seed: u64) -> Result<FiveBitResult> {
    if spec.n < 1 {
        return Err(Error::Parameter("reservoir size must be >= 1".into()));
    }
    let mut rng = esn_core::rng::substream(seed, 0);
    let cb_seed: u64 = rng.random();
    let mat_seed: u64 = rng.random();
    let codebook = gen_codebook(spec.n, D_ALPHABET, cb_seed)?;
    let matrix = gen_recurrent(MatrixKind::Permutation, spec.n, mat_seed)?;
    let rspec = ReservoirSpec::new(
        Variant::V4,
        1.0,
        spec.beta,
        spec.gamma,
        matrix.clone(),
        codebook.clone(),
    )?;
    let l = spec.episode_len();
    let patterns: Vec<Vec<u32>> = (0u32..32)
        .map(|bits| {
            let mut seq = Vec::with_capacity(l);
            for k in 0..SIGNAL_BITS {
                seq.push((bits >> k) & 1);
            }
            seq.push(CUE);
            seq.extend(core::iter::repeat(DISTRACTOR).take(spec.t));
            seq
        })
        .collect();
    // Batch all 32 episodes: states as columns.
    let mut x = DMatrix::<f64>::zeros(spec.n, patterns.len());
    for step in 0..l {
        let mut y = rspec.matrix.apply_mat(&x);
        y *= spec.gamma;
        for (col, seq) in patterns.iter().enumerate() {
            let phi = codebook.code(seq[step] as usize);
            let mut yc = y.column_mut(col);
            yc.axpy(spec.beta, &phi, 1.0);
        }
        y.apply(|v| *v = libm::tanh(*v));
        x = y;
    }
    let mut info_correct = 0u64;
    let mut cue_correct = 0u64;
    for d in spec.t..=spec.t + SIGNAL_BITS {
        let readout = build_codebook_readout(&codebook, &matrix, d)?;
        let h = &readout.rows * &x;
        for (col, seq) in patterns.iter().enumerate() {
            let expected = seq[l - 1 - d];
            let mut best = 0usize;
            for j in 1..D_ALPHABET {
                if h[(j, col)] > h[(best, col)] {
                    best = j;
                }
            }
            if best as u32 == expected {
                if d == spec.t {
                    cue_correct += 1;
                } else {
                    info_correct += 1;
                }
            }
        }
    }
    let info_accuracy = info_correct as f64 / (patterns.len() * SIGNAL_BITS) as f64;
    let cue_accuracy = cue_correct as f64 / patterns.len() as f64;
    Ok(FiveBitResult { info_accuracy, cue_accuracy, success: info_accuracy >= spec.target })
}

/// Search mode of `min_reservoir_search`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// Episodic scalar-channel moments feed the i.i.d.-tier predictor; the
    /// moment estimate is drawn once and reused at every N (only the scaling
    /// with N changes).
    Theory { episodes: usize },
    /// Average the measured information accuracy over this many seeds.
    Empirical { seeds: usize },
}

/// Bounds and seeding of the search.
#[derive(Debug, Clone, Copy)]
pub struct SearchConfig {
    pub mode: SearchMode,
    pub seed: u64,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { mode: SearchMode::Empirical { seeds: 50 }, seed: 0, n_min: 4, n_max: 1 << 15 }
    }
}

/// Smallest reservoir size meeting the target: exponential bracketing from
/// `n_min`, then bisection. The same seed list (or the same scalar-channel
/// moment estimate) is used at every probed N.
pub fn min_reservoir_search(spec: &FiveBitSpec, search: &SearchConfig) -> Result<usize> {
    if search.n_min < 1 || search.n_min > search.n_max {
        return Err(Error::Parameter(format!(
            "bad search bounds [{}, {}]",
            search.n_min, search.n_max
        )));
    }
    if spec.target <= 0.0 {
        return Ok(search.n_min);
    }
    let success: Box<dyn Fn(usize) -> Result<bool>> = match search.mode {
        SearchMode::Theory { episodes } => {
            let model = spec.model();
            let (_, _, q3) = capability(model.kind, model.variant, ReadoutMethod::Codebook);
            if !q3 {
                return Err(Error::Capability(
                    "theory-mode search needs hyperparameter-only moments".into(),
                ));
            }
            let l = spec.episode_len();
            let delays: Vec<usize> = (spec.t + 1..=spec.t + SIGNAL_BITS).collect();
            let (cross, m2) = episodic_scalar_moments(&model, l, &delays, episodes, search.seed)?;
            let target = spec.target;
            Box::new(move |n: usize| -> Result<bool> {
                let nf = n as f64;
                let mut acc = 0.0;
                for &c in &cross {
                    let stats = MomentStatsReduced {
                        mu_h: nf * c,
                        sigma_h: (nf * (m2 - c * c).max(0.0)).sqrt(),
                        mu_r: 0.0,
                        sigma_r: (nf * m2).sqrt(),
                    };
                    acc += predict_iid(&stats, D_ALPHABET)?;
                }
                Ok(acc / SIGNAL_BITS as f64 >= target)
            })
        }
        SearchMode::Empirical { seeds } => {
            let spec = *spec;
            let base = search.seed;
            let target = spec.target;
            Box::new(move |n: usize| -> Result<bool> {
                let probe = FiveBitSpec { n, ..spec };
                let accs: Vec<f64> = (0..seeds as u64)
                    .into_par_iter()
                    .map(|s| run_five_bit(&probe, base.wrapping_add(s)).map(|r| r.info_accuracy))
                    .collect::<Result<_>>()?;
                Ok(accs.iter().sum::<f64>() / seeds as f64 >= target)
            })
        }
    };
    // Exponential bracket.
    let mut hi = search.n_min;
    if success(hi)? {
        return Ok(hi);
    }
    let mut lo = hi;
    loop {
        hi = (hi * 2).min(search.n_max);
        if success(hi)? {
            break;
        }
        if hi == search.n_max {
            return Err(Error::InsufficientData(format!(
                "target not reached within N <= {}; last bracket [{lo}, {hi}] failed",
                search.n_max
            )));
        }
        lo = hi;
    }
    // Bisection on [lo (fail), hi (success)].
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if success(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
