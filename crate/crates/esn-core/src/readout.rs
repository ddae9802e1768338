//! Readout-matrix construction (codebook, regression, coarse/fine covariance),
//! winner-take-all decoding, and measurement-noise injection.

use alloc::format;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::codec::Codebook;
use crate::error::{Error, Result};
use crate::reservoir::{RecurrentMatrix, StateTrace};
use crate::rng;

/// How a readout matrix was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutMethod {
    Codebook,
    Regression,
    CovCoarse,
    CovFine,
}

impl ReadoutMethod {
    pub fn name(self) -> &'static str {
        match self {
            ReadoutMethod::Codebook => "codebook",
            ReadoutMethod::Regression => "regression",
            ReadoutMethod::CovCoarse => "cov_coarse",
            ReadoutMethod::CovFine => "cov_fine",
        }
    }
}

/// D x N readout matrix for one delay. Row inner products with the state feed
/// the winner-take-all decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutMatrix {
    pub rows: DMatrix<f64>,
    pub delay: usize,
    pub method: ReadoutMethod,
}

impl ReadoutMatrix {
    pub fn d(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n(&self) -> usize {
        self.rows.ncols()
    }
}

/// Fidelity of the analytic state-covariance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovFidelity {
    Coarse,
    Fine,
}

/// Analytic estimate of the reservoir-state second-moment matrix used to
/// whiten the codebook readout.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub c: DMatrix<f64>,
    pub fidelity: CovFidelity,
    /// Largest matrix power retained; terms run n = 0..=horizon.
    pub horizon: usize,
    pub gamma: f64,
}

/// Training-free readout: row j equals `(W^d phi_j)^T`, the matched filter for
/// the code injected `d` steps ago (equivalently `Phi^T W^-d` for the unitary
/// matrix families used here).
pub fn build_codebook_readout(
    codebook: &Codebook,
    matrix: &RecurrentMatrix,
    d: usize,
) -> Result<ReadoutMatrix> {
    if codebook.n() != matrix.n() {
        return Err(Error::Parameter("codebook/matrix dimension mismatch".into()));
    }
    let a = matrix.power_apply_mat(d as i64, &codebook.entries);
    Ok(ReadoutMatrix { rows: a.transpose(), delay: d, method: ReadoutMethod::Codebook })
}

/// Factorized ridge normal equations, reusable across delays: the Gram
/// matrix `X^T X + lambda I` depends only on the training states, while the
/// right-hand side `X^T Y(d)` changes with the delay.
pub struct RegressionTrainer {
    chol: Cholesky<f64, nalgebra::Dyn>,
    pub lambda: f64,
}

impl RegressionTrainer {
    /// Accumulate and factorize the Gram matrix of the trace's training
    /// states. `lambda = None` selects the default
    /// `1e-6 * mean(diag(X^T X))`.
    pub fn new(trace: &StateTrace, lambda: Option<f64>) -> Result<Self> {
        let m = trace.states.len();
        if m == 0 {
            return Err(Error::Parameter("regression requires at least one training state".into()));
        }
        let n = trace.states[0].len();
        let mut xtx = DMatrix::<f64>::zeros(n, n);
        for x in &trace.states {
            xtx.syger(1.0, x, x, 1.0);
        }
        // syger fills only the lower triangle; mirror it.
        for i in 0..n {
            for j in i + 1..n {
                xtx[(i, j)] = xtx[(j, i)];
            }
        }
        let mean_diag = xtx.diagonal().mean();
        let lambda = lambda.unwrap_or(1e-6 * mean_diag);
        for i in 0..n {
            xtx[(i, i)] += lambda;
        }
        let chol = Cholesky::new(xtx).ok_or_else(|| {
            Error::Numerical(
                "normal equations not positive definite; use a ridge parameter lambda > 0".into(),
            )
        })?;
        Ok(Self { chol, lambda })
    }

    /// Solve for the readout at delay `d` using labels at that lag.
    pub fn build(&self, trace: &StateTrace, d: usize) -> Result<ReadoutMatrix> {
        let n = trace.states[0].len();
        let dd = trace.sequence.d;
        let mut xty = DMatrix::<f64>::zeros(n, dd);
        for (i, x) in trace.states.iter().enumerate() {
            let label = trace.label_at_lag(i, d).ok_or_else(|| {
                Error::Parameter(format!(
                    "training state at timestep {} has no label at lag {d}",
                    trace.timesteps[i]
                ))
            })?;
            for r in 0..n {
                xty[(r, label as usize)] += x[r];
            }
        }
        let z = self.chol.solve(&xty);
        Ok(ReadoutMatrix { rows: z.transpose(), delay: d, method: ReadoutMethod::Regression })
    }
}

/// Ridge-regression readout trained on the retained training states of
/// `trace`: `W_out(d) = Y(d)^T X (X^T X + lambda I)^-1`, solved with a
/// symmetric (Cholesky) factorization. `lambda = None` selects the default
/// `1e-6 * mean(diag(X^T X))`.
pub fn build_regression_readout(
    trace: &StateTrace,
    d: usize,
    lambda: Option<f64>,
) -> Result<ReadoutMatrix> {
    RegressionTrainer::new(trace, lambda)?.build(trace, d)
}

/// Analytic estimate of the state second moment for the linear variants:
///
/// coarse: `C = sum_n g^2n W^n Phi (I/D) Phi^T W^-n`,
/// fine:   adds the mean cross term
///         `sum_{n1 != n2} g^(n1+n2) W^n1 Phi (J/D^2) Phi^T W^-n2`.
///
/// Sums run over n = 0..=H: the current input enters the state with
/// coefficient g^0 W^0, so the n = 0 term belongs to the state's second
/// moment. For `gamma < 1` the horizon satisfies `gamma^(2H) < eps`; for
/// `gamma = 1` an explicit horizon is required (e.g. G-1 for length-G
/// sequences).
pub fn build_covariance_estimate(
    codebook: &Codebook,
    matrix: &RecurrentMatrix,
    gamma: f64,
    fidelity: CovFidelity,
    eps: f64,
    explicit_horizon: Option<usize>,
) -> Result<CovarianceEstimate> {
    if gamma > 1.0 {
        return Err(Error::Parameter(format!(
            "covariance estimate diverges for gamma > 1 (got {gamma})"
        )));
    }
    if gamma <= 0.0 {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    let horizon = match explicit_horizon {
        Some(h) => h,
        None if gamma < 1.0 => libm::ceil(libm::log(eps) / (2.0 * libm::log(gamma))) as usize,
        None => {
            return Err(Error::Parameter(
                "gamma = 1 requires an explicit truncation horizon".into(),
            ))
        }
    };
    let n = codebook.n();
    let d = codebook.d() as f64;
    let mut c = DMatrix::<f64>::zeros(n, n);
    let mut a = codebook.entries.clone();
    // Fine-estimate cross term, factorized: with a_n the mean column of
    // W^n Phi and s = sum_n g^n a_n, the double sum equals
    // s s^T - sum_n g^2n a_n a_n^T.
    let mut s = DVector::<f64>::zeros(n);
    let mut diag_part = DMatrix::<f64>::zeros(n, n);
    for k in 0..=horizon {
        if k > 0 {
            a = matrix.apply_mat(&a);
        }
        let g = libm::pow(gamma, k as f64);
        c.gemm(g * g / d, &a, &a.transpose(), 1.0);
        if fidelity == CovFidelity::Fine {
            let an = a.column_mean();
            s.axpy(g, &an, 1.0);
            diag_part.syger(g * g, &an, &an, 1.0);
        }
    }
    if fidelity == CovFidelity::Fine {
        c.syger(1.0, &s, &s, 1.0);
        // syger touched only the lower triangle of the rank-1 accumulators.
        for i in 0..n {
            for j in 0..i {
                let v = c[(i, j)] - diag_part[(i, j)];
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
            c[(i, i)] -= diag_part[(i, i)];
        }
    }
    Ok(CovarianceEstimate { c, fidelity, horizon, gamma })
}

/// Covariance-whitened readout: rows `(W^d phi_j)^T C^-1`, computed by a
/// symmetric solve against the jittered estimate (`C + 1e-10 mean(diag) I`).
pub fn build_covariance_readout(
    codebook: &Codebook,
    matrix: &RecurrentMatrix,
    d: usize,
    estimate: &CovarianceEstimate,
) -> Result<ReadoutMatrix> {
    let n = codebook.n();
    if estimate.c.nrows() != n {
        return Err(Error::Parameter("estimate/codebook dimension mismatch".into()));
    }
    let mut c = estimate.c.clone();
    let jitter = 1e-10 * c.diagonal().mean();
    for i in 0..n {
        c[(i, i)] += jitter;
    }
    let chol = Cholesky::new(c)
        .ok_or_else(|| Error::Numerical("covariance estimate not positive definite".into()))?;
    let a = matrix.power_apply_mat(d as i64, &codebook.entries);
    let z = chol.solve(&a);
    let method = match estimate.fidelity {
        CovFidelity::Coarse => ReadoutMethod::CovCoarse,
        CovFidelity::Fine => ReadoutMethod::CovFine,
    };
    Ok(ReadoutMatrix { rows: z.transpose(), delay: d, method })
}

/// Winner-take-all decode: index of the largest row inner product, ties broken
/// by the lowest index.
pub fn decode(readout: &ReadoutMatrix, x: &DVector<f64>) -> Result<u32> {
    if x.len() != readout.n() {
        return Err(Error::Parameter(format!(
            "state dimension {} != readout width {}",
            x.len(),
            readout.n()
        )));
    }
    let h = &readout.rows * x;
    let mut best = 0usize;
    for j in 1..h.len() {
        if h[j] > h[best] {
            best = j;
        }
    }
    Ok(best as u32)
}

/// Inner products of every readout row with the state (the output-neuron
/// inputs h_j).
pub fn activations(readout: &ReadoutMatrix, x: &DVector<f64>) -> DVector<f64> {
    &readout.rows * x
}

/// Add white Gaussian measurement noise to every retained state. The noise
/// variance is set per state so that `10 log10(||x||^2 / E||noise||^2)`
/// equals `snr_db`; the reservoir evolution itself stays noiseless. An
/// infinite SNR returns the trace unchanged.
pub fn add_noise(trace: &StateTrace, snr_db: f64, seed: u64) -> Result<StateTrace> {
    if snr_db.is_nan() {
        return Err(Error::Parameter("snr_db must not be NaN".into()));
    }
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(trace.clone());
    }
    let mut rng = rng::stream(seed);
    let mut out = trace.clone();
    for x in &mut out.states {
        let n = x.len() as f64;
        let power = x.norm_squared();
        let sigma = libm::sqrt(power / (n * libm::pow(10.0, snr_db / 10.0)));
        for i in 0..x.len() {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[i] += sigma * z;
        }
    }
    Ok(out)
}

/// Decode every recall state of `trace` at delay `d` and return
/// (correct, scored) counts. States whose lag-d label precedes the sequence
/// start are skipped.
pub fn score_trace(trace: &StateTrace, readout: &ReadoutMatrix, d: usize) -> Result<(u64, u64)> {
    let mut correct = 0u64;
    let mut total = 0u64;
    for (i, x) in trace.states.iter().enumerate() {
        let Some(label) = trace.label_at_lag(i, d) else { continue };
        total += 1;
        if decode(readout, x)? == label {
            correct += 1;
        }
    }
    Ok((correct, total))
}
