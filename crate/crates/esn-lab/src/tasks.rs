//! End-to-end trajectory-association drivers: the streaming variant (warm-up,
//! optional training phase, recall phase, decode at every delay) and the
//! fixed-length variant (score only the final state of many length-G
//! sequences).
//!
//! Trials are independent; each derives its random substream from
//! (experiment seed, trial index) and the results are merged in trial order,
//! so output does not depend on worker count.

use esn_core::analysis::{geometry_report, AccuracyCurve, CurveSource};
use esn_core::codec::{gen_codebook, gen_sequence, Codebook};
use esn_core::readout::{
    build_codebook_readout, build_covariance_estimate, build_covariance_readout, CovFidelity,
    ReadoutMatrix, ReadoutMethod, RegressionTrainer,
};
use esn_core::reservoir::{
    gen_recurrent, run, MatrixKind, RecurrentMatrix, ReservoirSpec, RetainMask, StateTrace,
    Variant,
};
use esn_core::theory::{
    analytic_moments, capability, predict_full, predict_iid, predict_independent, AnalyticModel,
    MomentContext, MomentStatsFull, MomentStatsReduced, ScalarChannel, ScalarChannelConfig,
};
use esn_core::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

/// Where the i.i.d.-tier prediction column comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IidSource {
    None,
    /// Hyperparameter-only moments (requires applicability Q3 = yes).
    Analytic,
    /// Pooled hit/reject moments measured from the recall states.
    Measured,
}

/// Configuration of the streaming trajectory-association driver.
#[derive(Debug, Clone)]
pub struct StreamConfig {
    pub variant: Variant,
    pub kind: MatrixKind,
    pub method: ReadoutMethod,
    pub n: usize,
    pub d_alphabet: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Ridge parameter for the regression readout (None = data-scaled default).
    pub lambda: Option<f64>,
    /// Truncation threshold for the covariance-estimate horizon.
    pub cov_eps: f64,
    /// Explicit covariance horizon (required for gamma = 1).
    pub cov_horizon: Option<usize>,
    /// Warm-up / training / recall phase lengths.
    pub e: usize,
    pub m: usize,
    pub r: usize,
    /// Delays 0..=d_max are decoded.
    pub d_max: usize,
    pub trials: usize,
    pub seed: u64,
    /// Measurement noise added to training states (dB; None = noiseless).
    pub snr_train_db: Option<f64>,
    /// Measurement noise added to recall states.
    pub snr_test_db: Option<f64>,
    pub theory_iid: IidSource,
    /// Full-covariance tier from measured per-class moments.
    pub theory_full: bool,
    /// Independent tier from measured per-class moments.
    pub theory_indep: bool,
    /// Integration tolerance of the full-covariance tier.
    pub theory_tol: f64,
    pub theory_seed: u64,
    /// Collect row-geometry diagnostics per delay.
    pub geometry: bool,
    pub scalar: ScalarChannelConfig,
}

impl StreamConfig {
    /// Figure-caption defaults: E=1000, M=0, R=3000, delays to 25, 10 trials.
    pub fn new(
        variant: Variant,
        kind: MatrixKind,
        method: ReadoutMethod,
        n: usize,
        d_alphabet: usize,
    ) -> Self {
        Self {
            variant,
            kind,
            method,
            n,
            d_alphabet,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            lambda: None,
            cov_eps: 1e-6,
            cov_horizon: None,
            e: 1000,
            m: 0,
            r: 3000,
            d_max: 25,
            trials: 10,
            seed: 0,
            snr_train_db: None,
            snr_test_db: None,
            theory_iid: IidSource::None,
            theory_full: false,
            theory_indep: false,
            theory_tol: 1e-3,
            theory_seed: 0,
            geometry: false,
            scalar: ScalarChannelConfig::default(),
        }
    }
}

/// Averaged geometry diagnostics of the readout at one delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometrySummary {
    /// Mean pairwise cosine of the readout rows.
    pub mean_cosine: f64,
    /// Simplex target -1/(D-1).
    pub etf_target: f64,
    /// Mean pairwise cosine of the centered per-class activation means.
    pub class_mean_cosine: f64,
    /// Pooled hit standard deviation.
    pub sigma_h: f64,
}

/// Per-delay outcome, pooled over trials.
#[derive(Debug, Clone)]
pub struct DelayStats {
    pub d: usize,
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
    /// Binomial standard error over pooled decisions.
    pub stderr: f64,
    pub theory_full: Option<f64>,
    pub theory_indep: Option<f64>,
    pub theory_iid: Option<f64>,
    /// Trial-averaged pooled hit/reject moments.
    pub moments: Option<MomentStatsReduced>,
    pub geometry: Option<GeometrySummary>,
}

/// Driver output: per-delay statistics plus notes about predictors that were
/// skipped for capability reasons (the empirical run never aborts for those).
#[derive(Debug, Clone)]
pub struct TaskResult {
    pub delays: Vec<DelayStats>,
    pub trials: usize,
    pub theory_notes: Vec<String>,
}

impl TaskResult {
    pub fn empirical_curve(&self) -> AccuracyCurve {
        AccuracyCurve {
            delays: self.delays.iter().map(|s| s.d).collect(),
            p_c: self.delays.iter().map(|s| s.accuracy).collect(),
            source: CurveSource::Empirical,
        }
    }

    /// Predicted curve of one tier, if every delay carries a prediction.
    pub fn theory_curve(&self, source: CurveSource) -> Option<AccuracyCurve> {
        let pick = |s: &DelayStats| match source {
            CurveSource::TheoryFull => s.theory_full,
            CurveSource::TheoryIndependent => s.theory_indep,
            CurveSource::TheoryIid => s.theory_iid,
            CurveSource::Empirical => Some(s.accuracy),
        };
        let p_c: Option<Vec<f64>> = self.delays.iter().map(pick).collect();
        Some(AccuracyCurve {
            delays: self.delays.iter().map(|s| s.d).collect(),
            p_c: p_c?,
            source,
        })
    }
}

/// Per-trial, per-delay raw outcome (before the cross-trial reduction).
struct DelayTrial {
    correct: u64,
    total: u64,
    full: Option<f64>,
    indep: Option<f64>,
    iid: Option<f64>,
    reduced: MomentStatsReduced,
    geometry: Option<GeometrySummary>,
}

struct TrialOut {
    per_delay: Vec<DelayTrial>,
    notes: Vec<String>,
}

fn trial_seeds<const K: usize>(seed: u64, trial: u64) -> [u64; K] {
    let mut rng = esn_core::rng::substream(seed, trial);
    core::array::from_fn(|_| rng.random())
}

/// Column-major stack of a trace's states (N x count).
fn states_matrix(trace: &StateTrace) -> DMatrix<f64> {
    let n = trace.states.first().map_or(0, |x| x.len());
    let mut x = DMatrix::zeros(n, trace.states.len());
    for (j, s) in trace.states.iter().enumerate() {
        x.set_column(j, s);
    }
    x
}

/// Split a combined trace into (training, recall) parts at timestep E+M.
fn split_trace(trace: &StateTrace) -> (StateTrace, StateTrace) {
    let cut = trace.sequence.e + trace.sequence.m;
    let mut tr = StateTrace { states: Vec::new(), timesteps: Vec::new(), sequence: trace.sequence.clone() };
    let mut te = StateTrace { states: Vec::new(), timesteps: Vec::new(), sequence: trace.sequence.clone() };
    for (x, &t) in trace.states.iter().zip(&trace.timesteps) {
        let part = if t <= cut { &mut tr } else { &mut te };
        part.states.push(x.clone());
        part.timesteps.push(t);
    }
    (tr, te)
}

fn argmax_column(h: &DMatrix<f64>, col: usize) -> u32 {
    let c = h.column(col);
    let mut best = 0usize;
    for j in 1..c.len() {
        if c[j] > c[best] {
            best = j;
        }
    }
    best as u32
}

/// Pooled hit/reject moments from the activation matrix (D x count).
fn reduced_from_activations(h: &DMatrix<f64>, labels: &[u32]) -> MomentStatsReduced {
    let d = h.nrows();
    let (mut sh, mut sh2, mut nh) = (0.0f64, 0.0f64, 0.0f64);
    let (mut sr, mut sr2, mut nr) = (0.0f64, 0.0f64, 0.0f64);
    for (col, &label) in labels.iter().enumerate() {
        for j in 0..d {
            let v = h[(j, col)];
            if j == label as usize {
                sh += v;
                sh2 += v * v;
                nh += 1.0;
            } else {
                sr += v;
                sr2 += v * v;
                nr += 1.0;
            }
        }
    }
    let stat = |s: f64, s2: f64, n: f64| {
        if n < 1.0 {
            return (0.0, 0.0);
        }
        let mean = s / n;
        let var = if n > 1.0 { ((s2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        (mean, var.sqrt())
    };
    let (mu_h, sigma_h) = stat(sh, sh2, nh);
    let (mu_r, sigma_r) = stat(sr, sr2, nr);
    MomentStatsReduced { mu_h, sigma_h, mu_r, sigma_r }
}

/// Per-class joint moments of the activations; None when a class has fewer
/// than 2 samples.
fn full_from_activations(h: &DMatrix<f64>, labels: &[u32]) -> Option<MomentStatsFull> {
    let d = h.nrows();
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); d];
    for (col, &label) in labels.iter().enumerate() {
        cols[label as usize].push(col);
    }
    if cols.iter().any(|c| c.len() < 2) {
        return None;
    }
    let total = labels.len() as f64;
    let mut mu = Vec::with_capacity(d);
    let mut sigma = Vec::with_capacity(d);
    let mut priors = Vec::with_capacity(d);
    for group in &cols {
        let m = group.len() as f64;
        let mut mean = DVector::zeros(d);
        for &c in group {
            mean += h.column(c);
        }
        mean /= m;
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for &c in group {
            let delta = h.column(c) - &mean;
            cov.syger(1.0 / (m - 1.0), &delta, &delta, 1.0);
        }
        for i in 0..d {
            for j in i + 1..d {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        mu.push(mean);
        sigma.push(cov);
        priors.push(m / total);
    }
    Some(MomentStatsFull { mu, sigma, priors })
}

/// Prior-weighted independent-tier prediction from full per-class moments.
fn indep_aggregate(full: &MomentStatsFull) -> Result<f64> {
    let d = full.d();
    let mut acc = 0.0;
    for i in 0..d {
        let means: Vec<f64> = full.mu[i].iter().copied().collect();
        let stds: Vec<f64> = (0..d).map(|j| full.sigma[i][(j, j)].max(0.0).sqrt()).collect();
        acc += full.priors[i] * predict_independent(&means, &stds, i)?;
    }
    Ok(acc)
}

/// Mean pairwise cosine of the centered per-class activation means.
fn class_mean_cosine(full: &MomentStatsFull) -> f64 {
    let d = full.d();
    let mut center = DVector::zeros(d);
    for m in &full.mu {
        center += m;
    }
    center /= d as f64;
    let deltas: Vec<DVector<f64>> = full.mu.iter().map(|m| m - &center).collect();
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..d {
        for j in i + 1..d {
            let ni = deltas[i].norm();
            let nj = deltas[j].norm();
            if ni > 0.0 && nj > 0.0 {
                acc += deltas[i].dot(&deltas[j]) / (ni * nj);
                count += 1;
            }
        }
    }
    if count == 0 { 0.0 } else { acc / count as f64 }
}

fn validate_stream(cfg: &StreamConfig) -> Result<()> {
    if cfg.r < 1 {
        return Err(Error::Parameter("recall phase is empty; nothing to score".into()));
    }
    if cfg.trials < 1 {
        return Err(Error::Parameter("trial count must be >= 1".into()));
    }
    if cfg.d_max > cfg.e {
        return Err(Error::Parameter(format!(
            "d_max {} exceeds warm-up length {}; early states would lack labels",
            cfg.d_max, cfg.e
        )));
    }
    if cfg.method == ReadoutMethod::Regression && cfg.m < 1 {
        return Err(Error::Parameter("regression readout requires a training phase (M >= 1)".into()));
    }
    Ok(())
}

fn needs_full(cfg: &StreamConfig) -> bool {
    cfg.theory_full || cfg.theory_indep || cfg.geometry
}

fn run_stream_trial(cfg: &StreamConfig, trial: u64) -> Result<TrialOut> {
    let [cb_seed, mat_seed, seq_seed, noise_tr_seed, noise_te_seed] =
        trial_seeds::<5>(cfg.seed, trial);
    let codebook = gen_codebook(cfg.n, cfg.d_alphabet, cb_seed)?;
    let matrix = gen_recurrent(cfg.kind, cfg.n, mat_seed)?;
    let spec = ReservoirSpec::new(
        cfg.variant,
        cfg.alpha,
        cfg.beta,
        cfg.gamma,
        matrix.clone(),
        codebook.clone(),
    )?;
    let sequence = gen_sequence(cfg.e, cfg.m, cfg.r, cfg.d_alphabet, seq_seed)?;
    let retain = if cfg.method == ReadoutMethod::Regression {
        RetainMask::BOTH
    } else {
        RetainMask::RECALL
    };
    let trace = run(&sequence, &spec, retain)?;
    let (mut train, mut recall) = split_trace(&trace);
    if let Some(snr) = cfg.snr_train_db {
        train = esn_core::readout::add_noise(&train, snr, noise_tr_seed)?;
    }
    if let Some(snr) = cfg.snr_test_db {
        recall = esn_core::readout::add_noise(&recall, snr, noise_te_seed)?;
    }
    let mut notes = Vec::new();
    let trainer = if cfg.method == ReadoutMethod::Regression {
        Some(RegressionTrainer::new(&train, cfg.lambda)?)
    } else {
        None
    };
    let estimate = match cfg.method {
        ReadoutMethod::CovCoarse | ReadoutMethod::CovFine => {
            let fidelity = if cfg.method == ReadoutMethod::CovCoarse {
                CovFidelity::Coarse
            } else {
                CovFidelity::Fine
            };
            Some(build_covariance_estimate(
                &codebook,
                &matrix,
                cfg.gamma,
                fidelity,
                cfg.cov_eps,
                cfg.cov_horizon,
            )?)
        }
        _ => None,
    };
    let xte = states_matrix(&recall);
    let want_full = needs_full(cfg);
    let mut per_delay = Vec::with_capacity(cfg.d_max + 1);
    for d in 0..=cfg.d_max {
        let readout: ReadoutMatrix = match cfg.method {
            ReadoutMethod::Codebook => build_codebook_readout(&codebook, &matrix, d)?,
            ReadoutMethod::Regression => trainer.as_ref().unwrap().build(&train, d)?,
            ReadoutMethod::CovCoarse | ReadoutMethod::CovFine => {
                build_covariance_readout(&codebook, &matrix, d, estimate.as_ref().unwrap())?
            }
        };
        let h = &readout.rows * &xte;
        let labels: Vec<u32> = (0..recall.states.len())
            .map(|i| {
                recall.label_at_lag(i, d).ok_or_else(|| {
                    Error::Parameter(format!("recall state {i} lacks a label at lag {d}"))
                })
            })
            .collect::<Result<_>>()?;
        let mut correct = 0u64;
        for (col, &label) in labels.iter().enumerate() {
            if argmax_column(&h, col) == label {
                correct += 1;
            }
        }
        let reduced = reduced_from_activations(&h, &labels);
        let full = if want_full { full_from_activations(&h, &labels) } else { None };
        if want_full && full.is_none() && trial == 0 && d == 0 {
            notes.push("full per-class moments unavailable: a class has < 2 recall samples".into());
        }
        let full_pred = match (&full, cfg.theory_full) {
            (Some(f), true) => {
                let seed = cfg.theory_seed.wrapping_add((trial << 32) | d as u64);
                Some(predict_full(f, cfg.theory_tol, seed)?.aggregate)
            }
            _ => None,
        };
        let indep_pred = match (&full, cfg.theory_indep) {
            (Some(f), true) => Some(indep_aggregate(f)?),
            _ => None,
        };
        let iid_pred = match cfg.theory_iid {
            IidSource::Measured => Some(predict_iid(&reduced, cfg.d_alphabet)?),
            _ => None,
        };
        let geometry = if cfg.geometry {
            let report = geometry_report(&readout)?;
            Some(GeometrySummary {
                mean_cosine: report.mean_cosine,
                etf_target: report.etf_target,
                class_mean_cosine: full.as_ref().map(class_mean_cosine).unwrap_or(f64::NAN),
                sigma_h: reduced.sigma_h,
            })
        } else {
            None
        };
        per_delay.push(DelayTrial {
            correct,
            total: labels.len() as u64,
            full: full_pred,
            indep: indep_pred,
            iid: iid_pred,
            reduced,
            geometry,
        });
    }
    Ok(TrialOut { per_delay, notes })
}

/// Analytic i.i.d.-tier curve for the codebook readout, where the
/// applicability table allows; Err carries the reason otherwise.
pub fn analytic_iid_curve(cfg: &StreamConfig) -> Result<Vec<f64>> {
    let (_, _, q3) = capability(cfg.kind, cfg.variant, ReadoutMethod::Codebook);
    if cfg.method != ReadoutMethod::Codebook {
        return Err(Error::Capability(format!(
            "analytic moments describe the codebook readout, not {}",
            cfg.method.name()
        )));
    }
    if !q3 {
        return Err(Error::Capability(format!(
            "no analytic moments for ({:?}, {})",
            cfg.kind,
            cfg.variant.name()
        )));
    }
    let model = AnalyticModel {
        kind: cfg.kind,
        variant: cfg.variant,
        n: cfg.n,
        alpha: cfg.alpha,
        beta: cfg.beta,
        gamma: cfg.gamma,
    };
    let mut out = Vec::with_capacity(cfg.d_max + 1);
    if cfg.variant.uses_tanh() {
        let chan = ScalarChannel::simulate(&model, &cfg.scalar);
        for d in 0..=cfg.d_max {
            out.push(predict_iid(&chan.moments(d, cfg.n), cfg.d_alphabet)?);
        }
    } else {
        for d in 0..=cfg.d_max {
            let m = analytic_moments(&model, MomentContext::Delay(d), &cfg.scalar)?;
            out.push(predict_iid(&m, cfg.d_alphabet)?);
        }
    }
    Ok(out)
}

fn reduce_trials(
    cfg_trials: usize,
    d_max: usize,
    outs: Vec<TrialOut>,
    analytic_iid: Option<Vec<f64>>,
    mut notes: Vec<String>,
) -> TaskResult {
    for o in &outs {
        for n in &o.notes {
            if !notes.contains(n) {
                notes.push(n.clone());
            }
        }
    }
    let tf = cfg_trials as f64;
    let mut delays = Vec::with_capacity(d_max + 1);
    for d in 0..=d_max {
        let mut correct = 0u64;
        let mut total = 0u64;
        let acc = |f: fn(&DelayTrial) -> Option<f64>| -> Option<f64> {
            let vals: Option<Vec<f64>> = outs.iter().map(|o| f(&o.per_delay[d])).collect();
            vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        let full = acc(|t| t.full);
        let indep = acc(|t| t.indep);
        let iid = match &analytic_iid {
            Some(curve) => Some(curve[d]),
            None => acc(|t| t.iid),
        };
        let mut red = MomentStatsReduced { mu_h: 0.0, sigma_h: 0.0, mu_r: 0.0, sigma_r: 0.0 };
        let mut geom_acc = GeometrySummary {
            mean_cosine: 0.0,
            etf_target: 0.0,
            class_mean_cosine: 0.0,
            sigma_h: 0.0,
        };
        let mut geom_count = 0usize;
        for o in &outs {
            let t = &o.per_delay[d];
            correct += t.correct;
            total += t.total;
            red.mu_h += t.reduced.mu_h / tf;
            red.sigma_h += t.reduced.sigma_h / tf;
            red.mu_r += t.reduced.mu_r / tf;
            red.sigma_r += t.reduced.sigma_r / tf;
            if let Some(g) = &t.geometry {
                geom_acc.mean_cosine += g.mean_cosine;
                geom_acc.etf_target = g.etf_target;
                geom_acc.class_mean_cosine += g.class_mean_cosine;
                geom_acc.sigma_h += g.sigma_h;
                geom_count += 1;
            }
        }
        let geometry = (geom_count > 0).then(|| GeometrySummary {
            mean_cosine: geom_acc.mean_cosine / geom_count as f64,
            etf_target: geom_acc.etf_target,
            class_mean_cosine: geom_acc.class_mean_cosine / geom_count as f64,
            sigma_h: geom_acc.sigma_h / geom_count as f64,
        });
        let accuracy = correct as f64 / total.max(1) as f64;
        let stderr = (accuracy * (1.0 - accuracy) / total.max(1) as f64).sqrt();
        delays.push(DelayStats {
            d,
            correct,
            total,
            accuracy,
            stderr,
            theory_full: full,
            theory_indep: indep,
            theory_iid: iid,
            moments: Some(red),
            geometry,
        });
    }
    TaskResult { delays, trials: cfg_trials, theory_notes: notes }
}

/// Streaming trajectory association: per trial, generate codebook + matrix +
/// sequence, run warm-up/training/recall, build the configured readout per
/// delay, decode every recall state at every delay, and average accuracies
/// across trials. Theory tiers are attached where capability allows;
/// capability misses are reported in `theory_notes`, never aborting the run.
pub fn run_trajectory_association(cfg: &StreamConfig) -> Result<TaskResult> {
    validate_stream(cfg)?;
    let mut notes = Vec::new();
    let analytic_iid = if cfg.theory_iid == IidSource::Analytic {
        match analytic_iid_curve(cfg) {
            Ok(curve) => Some(curve),
            Err(e) => {
                notes.push(format!("i.i.d. tier skipped: {e}"));
                None
            }
        }
    } else {
        None
    };
    let outs: Vec<TrialOut> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| run_stream_trial(cfg, t))
        .collect::<Result<_>>()?;
    Ok(reduce_trials(cfg.trials, cfg.d_max, outs, analytic_iid, notes))
}

// ---------------------------------------------------------------------------
// Fixed-length variant.
// ---------------------------------------------------------------------------

/// Configuration of the fixed-length driver: many random length-G sequences,
/// scored only at their final state.
#[derive(Debug, Clone)]
pub struct FixedConfig {
    pub variant: Variant,
    pub kind: MatrixKind,
    pub method: ReadoutMethod,
    pub n: usize,
    pub d_alphabet: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub g: usize,
    /// Training sequences for the regression readout.
    pub train_seqs: usize,
    pub test_seqs: usize,
    /// Delays 0..=d_max (must stay below G).
    pub d_max: usize,
    pub trials: usize,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub cov_eps: f64,
    /// Covariance horizon; defaults to G-1 when gamma = 1.
    pub cov_horizon: Option<usize>,
    /// Attach the analytic i.i.d. prediction (linear dynamics without decay).
    pub theory_iid: bool,
    /// Allow the Gram-table shortcut for linear noise-free codebook decoding.
    pub fast_path: bool,
}

impl FixedConfig {
    pub fn new(
        variant: Variant,
        kind: MatrixKind,
        method: ReadoutMethod,
        n: usize,
        d_alphabet: usize,
        g: usize,
    ) -> Self {
        Self {
            variant,
            kind,
            method,
            n,
            d_alphabet,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            g,
            train_seqs: 0,
            test_seqs: 128,
            d_max: g.saturating_sub(1),
            trials: 10,
            seed: 0,
            lambda: None,
            cov_eps: 1e-6,
            cov_horizon: None,
            theory_iid: false,
            fast_path: true,
        }
    }
}

/// Simulate all sequences in lock step (states as columns) and return the
/// matrix of final states. Matches the sequential stepper exactly.
fn batch_final_states(spec: &ReservoirSpec, seqs: &[Vec<u32>]) -> DMatrix<f64> {
    let n = spec.n();
    let b = seqs.len();
    let g = seqs.first().map_or(0, |s| s.len());
    let mut x = DMatrix::<f64>::zeros(n, b);
    for t in 0..g {
        let mut y = spec.matrix.apply_mat(&x);
        y *= spec.gamma;
        for (col, seq) in seqs.iter().enumerate() {
            let phi = spec.codebook.code(seq[t] as usize);
            let mut yc = y.column_mut(col);
            yc.axpy(spec.beta, &phi, 1.0);
        }
        if spec.variant.uses_tanh() {
            y.apply(|v| *v = libm::tanh(*v));
        }
        if spec.alpha == 1.0 {
            x = y;
        } else {
            x = &x * (1.0 - spec.alpha) + y * spec.alpha;
        }
    }
    x
}

fn gen_fixed_seqs(rng: &mut esn_core::rng::Stream, count: usize, g: usize, d: usize) -> Vec<Vec<u32>> {
    (0..count)
        .map(|_| (0..g).map(|_| rng.random_range(0..d as u32)).collect())
        .collect()
}

/// Code-to-code inner-product tables `M_e = Phi^T W^e Phi` for e = 0..G-1.
/// Negative powers use `M_{-e} = M_e^T` (both matrix families are unitary).
fn gram_tables(codebook: &Codebook, matrix: &RecurrentMatrix, g: usize) -> Vec<DMatrix<f64>> {
    let mut tables = Vec::with_capacity(g);
    let mut a = codebook.entries.clone();
    for e in 0..g {
        if e > 0 {
            a = matrix.apply_mat(&a);
        }
        tables.push(codebook.entries.tr_mul(&a));
    }
    tables
}

/// Decode one sequence's final state at delay d from the Gram tables:
/// the score of symbol j is `sum_k M_{G-k-d}[j, s_k]`.
fn gram_decode(tables: &[DMatrix<f64>], seq: &[u32], d: usize, d_alphabet: usize) -> u32 {
    let g = seq.len() as i64;
    let mut scores = vec![0.0f64; d_alphabet];
    for (k0, &sym) in seq.iter().enumerate() {
        let e = g - (k0 as i64 + 1) - d as i64;
        if e >= 0 {
            let m = &tables[e as usize];
            for (j, s) in scores.iter_mut().enumerate() {
                *s += m[(j, sym as usize)];
            }
        } else {
            let m = &tables[(-e) as usize];
            for (j, s) in scores.iter_mut().enumerate() {
                *s += m[(sym as usize, j)];
            }
        }
    }
    let mut best = 0usize;
    for j in 1..d_alphabet {
        if scores[j] > scores[best] {
            best = j;
        }
    }
    best as u32
}

fn validate_fixed(cfg: &FixedConfig, g_list: &[usize]) -> Result<()> {
    if cfg.trials < 1 {
        return Err(Error::Parameter("trial count must be >= 1".into()));
    }
    if cfg.test_seqs < 1 {
        return Err(Error::Parameter("need at least one test sequence".into()));
    }
    if g_list.is_empty() {
        return Err(Error::Parameter("need at least one sequence length".into()));
    }
    if g_list.iter().any(|&g| g < 1) {
        return Err(Error::Parameter("sequence length must be >= 1".into()));
    }
    if cfg.method == ReadoutMethod::Regression && cfg.train_seqs < 1 {
        return Err(Error::Parameter(
            "regression readout requires training sequences (train_seqs >= 1)".into(),
        ));
    }
    Ok(())
}

/// Per-(trial, G) scoring: returns per-delay (correct, total) for
/// d = 0..=min(d_max, G-1).
fn run_fixed_trial_g(
    cfg: &FixedConfig,
    codebook: &Codebook,
    matrix: &RecurrentMatrix,
    tables: Option<&[DMatrix<f64>]>,
    seq_rng: &mut esn_core::rng::Stream,
    g: usize,
) -> Result<Vec<(u64, u64)>> {
    let d_top = cfg.d_max.min(g - 1);
    let spec = ReservoirSpec::new(
        cfg.variant,
        cfg.alpha,
        cfg.beta,
        cfg.gamma,
        matrix.clone(),
        codebook.clone(),
    )?;
    // Draw training sequences first (even when unused by the method the draw
    // order is part of the fixed protocol only for regression).
    let train_seqs = if cfg.method == ReadoutMethod::Regression {
        gen_fixed_seqs(seq_rng, cfg.train_seqs, g, cfg.d_alphabet)
    } else {
        Vec::new()
    };
    let test_seqs = gen_fixed_seqs(seq_rng, cfg.test_seqs, g, cfg.d_alphabet);
    if let Some(tables) = tables {
        // Gram-table shortcut: linear unit dynamics, codebook readout.
        let mut out = Vec::with_capacity(d_top + 1);
        for d in 0..=d_top {
            let mut correct = 0u64;
            for seq in &test_seqs {
                if gram_decode(tables, seq, d, cfg.d_alphabet) == seq[g - 1 - d] {
                    correct += 1;
                }
            }
            out.push((correct, test_seqs.len() as u64));
        }
        return Ok(out);
    }
    // Generic path: simulate final states in batch.
    let chol = if cfg.method == ReadoutMethod::Regression {
        let xtr = batch_final_states(&spec, &train_seqs);
        let mut xtx = DMatrix::<f64>::zeros(cfg.n, cfg.n);
        xtx.gemm(1.0, &xtr, &xtr.transpose(), 0.0);
        let lambda = cfg.lambda.unwrap_or(1e-6 * xtx.diagonal().mean());
        for i in 0..cfg.n {
            xtx[(i, i)] += lambda;
        }
        let c = Cholesky::new(xtx).ok_or_else(|| {
            Error::Numerical("normal equations not positive definite".into())
        })?;
        Some((c, xtr))
    } else {
        None
    };
    let estimate = match cfg.method {
        ReadoutMethod::CovCoarse | ReadoutMethod::CovFine => {
            let fidelity = if cfg.method == ReadoutMethod::CovCoarse {
                CovFidelity::Coarse
            } else {
                CovFidelity::Fine
            };
            let horizon = match cfg.cov_horizon {
                Some(h) => Some(h),
                None if cfg.gamma == 1.0 => Some(g - 1),
                None => None,
            };
            Some(build_covariance_estimate(
                codebook,
                matrix,
                cfg.gamma,
                fidelity,
                cfg.cov_eps,
                horizon,
            )?)
        }
        _ => None,
    };
    let xte = batch_final_states(&spec, &test_seqs);
    let mut out = Vec::with_capacity(d_top + 1);
    for d in 0..=d_top {
        let rows = match cfg.method {
            ReadoutMethod::Codebook => build_codebook_readout(codebook, matrix, d)?.rows,
            ReadoutMethod::CovCoarse | ReadoutMethod::CovFine => {
                build_covariance_readout(codebook, matrix, d, estimate.as_ref().unwrap())?.rows
            }
            ReadoutMethod::Regression => {
                let (chol, xtr) = chol.as_ref().unwrap();
                let mut xty = DMatrix::<f64>::zeros(cfg.n, cfg.d_alphabet);
                for (b, seq) in train_seqs.iter().enumerate() {
                    let label = seq[g - 1 - d] as usize;
                    let mut col = xty.column_mut(label);
                    col.axpy(1.0, &xtr.column(b), 1.0);
                }
                chol.solve(&xty).transpose()
            }
        };
        let h = &rows * &xte;
        let mut correct = 0u64;
        for (col, seq) in test_seqs.iter().enumerate() {
            if argmax_column(&h, col) == seq[g - 1 - d] {
                correct += 1;
            }
        }
        out.push((correct, test_seqs.len() as u64));
    }
    Ok(out)
}

/// Fixed-length driver over a series of sequence lengths with shared
/// per-trial draws (codebook and matrix reused across G; the Gram tables for
/// the largest G cover the whole series). Returns one result per G, in order.
pub fn run_fixed_series(cfg: &FixedConfig, g_list: &[usize]) -> Result<Vec<TaskResult>> {
    validate_fixed(cfg, g_list)?;
    let g_max = *g_list.iter().max().unwrap();
    let use_tables = cfg.fast_path
        && cfg.variant == Variant::V1
        && cfg.method == ReadoutMethod::Codebook;
    let per_trial: Vec<Vec<Vec<(u64, u64)>>> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let [cb_seed, mat_seed, seq_seed] = trial_seeds::<3>(cfg.seed, trial);
            let codebook = gen_codebook(cfg.n, cfg.d_alphabet, cb_seed)?;
            let matrix = gen_recurrent(cfg.kind, cfg.n, mat_seed)?;
            let tables = use_tables.then(|| gram_tables(&codebook, &matrix, g_max));
            let mut seq_rng = esn_core::rng::stream(seq_seed);
            g_list
                .iter()
                .map(|&g| {
                    run_fixed_trial_g(cfg, &codebook, &matrix, tables.as_deref(), &mut seq_rng, g)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut results = Vec::with_capacity(g_list.len());
    for (gi, &g) in g_list.iter().enumerate() {
        let d_top = cfg.d_max.min(g - 1);
        let mut notes = Vec::new();
        let theory: Option<f64> = if cfg.theory_iid {
            let model = AnalyticModel {
                kind: cfg.kind,
                variant: cfg.variant,
                n: cfg.n,
                alpha: cfg.alpha,
                beta: cfg.beta,
                gamma: cfg.gamma,
            };
            match analytic_moments(&model, MomentContext::Length(g), &ScalarChannelConfig::default())
                .and_then(|m| predict_iid(&m, cfg.d_alphabet))
            {
                Ok(p) => Some(p),
                Err(e) => {
                    notes.push(format!("i.i.d. tier skipped: {e}"));
                    None
                }
            }
        } else {
            None
        };
        let mut delays = Vec::with_capacity(d_top + 1);
        for d in 0..=d_top {
            let mut correct = 0u64;
            let mut total = 0u64;
            for trial in &per_trial {
                let (c, t) = trial[gi][d];
                correct += c;
                total += t;
            }
            let accuracy = correct as f64 / total.max(1) as f64;
            let stderr = (accuracy * (1.0 - accuracy) / total.max(1) as f64).sqrt();
            delays.push(DelayStats {
                d,
                correct,
                total,
                accuracy,
                stderr,
                theory_full: None,
                theory_indep: None,
                theory_iid: theory,
                moments: None,
                geometry: None,
            });
        }
        results.push(TaskResult { delays, trials: cfg.trials, theory_notes: notes });
    }
    Ok(results)
}

/// Fixed-length driver for a single sequence length.
pub fn run_fixed_length(cfg: &FixedConfig) -> Result<TaskResult> {
    Ok(run_fixed_series(cfg, &[cfg.g])?.pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn empty_recall_phase_is_an_error() {
        let mut cfg = StreamConfig::new(
            Variant::V2,
            MatrixKind::Permutation,
            ReadoutMethod::Codebook,
            64,
            4,
        );
        cfg.gamma = 0.9;
        cfg.r = 0;
        assert!(matches!(run_trajectory_association(&cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn stream_driver_is_deterministic_and_counts_decisions() {
        let mut cfg = StreamConfig::new(
            Variant::V2,
            MatrixKind::Permutation,
            ReadoutMethod::Codebook,
            128,
            4,
        );
        cfg.gamma = 0.9;
        cfg.e = 50;
        cfg.r = 200;
        cfg.d_max = 5;
        cfg.trials = 3;
        cfg.seed = 11;
        let a = run_trajectory_association(&cfg).unwrap();
        let b = run_trajectory_association(&cfg).unwrap();
        for (x, y) in a.delays.iter().zip(&b.delays) {
            assert_eq!(x.correct, y.correct);
            assert_eq!(x.total, y.total);
            // Scored decisions = trials x recall states, at every delay.
            assert_eq!(x.total, 3 * 200);
            assert!(x.accuracy >= 0.0 && x.accuracy <= 1.0);
        }
    }

    #[test]
    fn stream_accuracy_at_delay_zero_is_high_for_strong_trace() {
        let mut cfg = StreamConfig::new(
            Variant::V2,
            MatrixKind::Permutation,
            ReadoutMethod::Codebook,
            512,
            4,
        );
        cfg.gamma = 0.7;
        cfg.e = 50;
        cfg.r = 300;
        cfg.d_max = 2;
        cfg.trials = 2;
        let res = run_trajectory_association(&cfg).unwrap();
        assert!(res.delays[0].accuracy > 0.99, "{}", res.delays[0].accuracy);
    }

    #[test]
    fn analytic_iid_attaches_for_decay_variant() {
        let mut cfg = StreamConfig::new(
            Variant::V2,
            MatrixKind::Permutation,
            ReadoutMethod::Codebook,
            256,
            4,
        );
        cfg.gamma = 0.9;
        cfg.e = 30;
        cfg.r = 100;
        cfg.d_max = 4;
        cfg.trials = 1;
        cfg.theory_iid = IidSource::Analytic;
        let res = run_trajectory_association(&cfg).unwrap();
        assert!(res.theory_notes.is_empty(), "{:?}", res.theory_notes);
        for s in &res.delays {
            let p = s.theory_iid.unwrap();
            assert!(p > 0.2 && p <= 1.0);
        }
        // Curve accessor agrees.
        let c = res.theory_curve(CurveSource::TheoryIid).unwrap();
        assert_eq!(c.p_c.len(), 5);
    }

    #[test]
    fn capability_miss_is_reported_not_fatal() {
        // Random orthogonal + tanh has no analytic moments; the empirical run
        // still completes and the note explains the skip.
        let mut cfg = StreamConfig::new(
            Variant::V3,
            MatrixKind::RandomOrthogonal,
            ReadoutMethod::Codebook,
            64,
            4,
        );
        cfg.beta = 0.5;
        cfg.e = 20;
        cfg.r = 50;
        cfg.d_max = 2;
        cfg.trials = 1;
        cfg.theory_iid = IidSource::Analytic;
        let res = run_trajectory_association(&cfg).unwrap();
        assert_eq!(res.theory_notes.len(), 1);
        assert!(res.delays[0].theory_iid.is_none());
        assert!(res.delays[0].total > 0);
    }

    #[test]
    fn batch_final_states_matches_sequential_stepper() {
        for (variant, alpha, beta, gamma) in [
            (Variant::V1, 1.0, 1.0, 1.0),
            (Variant::V4, 1.0, 0.5, 0.9),
            (Variant::V5, 0.7, 0.5, 0.9),
        ] {
            let cb = gen_codebook(32, 4, 1).unwrap();
            let m = gen_recurrent(MatrixKind::RandomOrthogonal, 32, 2).unwrap();
            let spec = ReservoirSpec::new(variant, alpha, beta, gamma, m, cb).unwrap();
            let mut rng = esn_core::rng::stream(3);
            let seqs = gen_fixed_seqs(&mut rng, 5, 9, 4);
            let batch = batch_final_states(&spec, &seqs);
            for (b, seq) in seqs.iter().enumerate() {
                let mut st = esn_core::reservoir::ReservoirState::zero(32);
                for &s in seq {
                    st = esn_core::reservoir::step(&st, s, &spec).unwrap();
                }
                assert!((batch.column(b) - st.x).amax() < 1e-14);
            }
        }
    }

    #[test]
    fn gram_fast_path_matches_generic_path() {
        // Exact count equality: with a permutation matrix all scores are
        // integers; with an orthogonal matrix ties are fp-impossible.
        for kind in [MatrixKind::Permutation, MatrixKind::RandomOrthogonal] {
            let mut cfg = FixedConfig::new(
                Variant::V1,
                kind,
                ReadoutMethod::Codebook,
                64,
                4,
                16,
            );
            cfg.test_seqs = 40;
            cfg.trials = 2;
            cfg.seed = 5;
            let fast = run_fixed_length(&cfg).unwrap();
            cfg.fast_path = false;
            let slow = run_fixed_length(&cfg).unwrap();
            for (a, b) in fast.delays.iter().zip(&slow.delays) {
                assert_eq!(a.correct, b.correct, "kind {kind:?} delay {}", a.d);
            }
        }
    }

    #[test]
    fn fixed_g1_is_perfect_for_every_method() {
        for method in [
            ReadoutMethod::Codebook,
            ReadoutMethod::Regression,
            ReadoutMethod::CovCoarse,
            ReadoutMethod::CovFine,
        ] {
            let mut cfg = FixedConfig::new(
                Variant::V1,
                MatrixKind::RandomOrthogonal,
                ReadoutMethod::Codebook,
                64,
                4,
                1,
            );
            cfg.method = method;
            cfg.train_seqs = 64;
            cfg.test_seqs = 50;
            cfg.trials = 2;
            let res = run_fixed_length(&cfg).unwrap();
            assert_eq!(res.delays.len(), 1);
            assert_abs_diff_eq!(res.delays[0].accuracy, 1.0);
        }
    }

    #[test]
    fn fixed_short_sequences_are_recalled_perfectly() {
        // Negligible crosstalk at G <= 8 for N=256, D=16.
        let mut cfg = FixedConfig::new(
            Variant::V1,
            MatrixKind::RandomOrthogonal,
            ReadoutMethod::Codebook,
            256,
            16,
            8,
        );
        cfg.test_seqs = 64;
        cfg.trials = 2;
        cfg.theory_iid = true;
        let res = run_fixed_length(&cfg).unwrap();
        for s in &res.delays {
            assert_abs_diff_eq!(s.accuracy, 1.0);
            assert!(s.theory_iid.unwrap() > 0.999);
        }
    }

    #[test]
    fn fixed_series_shares_draws_with_single_runs_only_in_shape() {
        let cfg = FixedConfig::new(
            Variant::V1,
            MatrixKind::Permutation,
            ReadoutMethod::Codebook,
            32,
            2,
            8,
        );
        let series = run_fixed_series(&cfg, &[2, 8]).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].delays.len(), 2);
        assert_eq!(series[1].delays.len(), 8);
    }

    #[test]
    fn regression_stream_learns_recent_delays() {
        let mut cfg = StreamConfig::new(
            Variant::V2,
            MatrixKind::RandomOrthogonal,
            ReadoutMethod::Regression,
            128,
            4,
        );
        cfg.gamma = 0.9;
        cfg.e = 50;
        cfg.m = 800;
        cfg.r = 300;
        cfg.d_max = 3;
        cfg.trials = 2;
        let res = run_trajectory_association(&cfg).unwrap();
        assert!(res.delays[0].accuracy > 0.95, "{}", res.delays[0].accuracy);
    }

    #[test]
    fn noise_degrades_accuracy() {
        let mut base = StreamConfig::new(
            Variant::V2,
            MatrixKind::Permutation,
            ReadoutMethod::Codebook,
            256,
            8,
        );
        base.gamma = 0.9;
        base.e = 50;
        base.r = 500;
        base.d_max = 6;
        base.trials = 2;
        let clean = run_trajectory_association(&base).unwrap();
        let mut noisy_cfg = base.clone();
        noisy_cfg.snr_test_db = Some(-10.0);
        let noisy = run_trajectory_association(&noisy_cfg).unwrap();
        let mean = |r: &TaskResult| {
            r.delays.iter().map(|s| s.accuracy).sum::<f64>() / r.delays.len() as f64
        };
        assert!(mean(&noisy) < mean(&clean) - 0.05, "{} vs {}", mean(&noisy), mean(&clean));
    }

    #[test]
    fn measured_tiers_attach_for_regression() {
        let mut cfg = StreamConfig::new(
            Variant::V5,
            MatrixKind::RandomOrthogonal,
            ReadoutMethod::Regression,
            64,
            4,
        );
        cfg.alpha = 0.9;
        cfg.beta = 0.0625;
        cfg.gamma = 0.98;
        cfg.e = 50;
        cfg.m = 500;
        cfg.r = 400;
        cfg.d_max = 2;
        cfg.trials = 1;
        cfg.theory_full = true;
        cfg.theory_indep = true;
        cfg.theory_iid = IidSource::Measured;
        let res = run_trajectory_association(&cfg).unwrap();
        for s in &res.delays {
            for p in [s.theory_full.unwrap(), s.theory_indep.unwrap(), s.theory_iid.unwrap()] {
                assert!(p > 0.0 && p <= 1.0);
            }
            // Tiers agree loosely with each other on an easy instance.
            assert!((s.theory_full.unwrap() - s.theory_indep.unwrap()).abs() < 0.2);
        }
    }

    #[test]
    fn geometry_summary_is_populated() {
        let mut cfg = StreamConfig::new(
            Variant::V2,
            MatrixKind::Permutation,
            ReadoutMethod::Regression,
            64,
            2,
        );
        cfg.gamma = 0.9;
        cfg.e = 30;
        cfg.m = 500;
        cfg.r = 100;
        cfg.d_max = 2;
        cfg.trials = 2;
        cfg.geometry = true;
        let res = run_trajectory_association(&cfg).unwrap();
        for s in &res.delays {
            let g = s.geometry.unwrap();
            assert!(g.mean_cosine >= -1.0 && g.mean_cosine <= 1.0);
            assert_abs_diff_eq!(g.etf_target, -1.0);
            // D=2 centered class means are antipodal by construction.
            assert_abs_diff_eq!(g.class_mean_cosine, -1.0, epsilon = 1e-12);
            assert!(g.sigma_h > 0.0);
        }
    }
}
