//! Winner-take-all accuracy prediction from inner-product statistics, at
//! three approximation tiers:
//!
//! * full: multivariate-normal orthant probability over the joint
//!   distribution of output-neuron inputs (quasi-Monte Carlo integration),
//! * independent: single integral assuming independent neuron inputs,
//! * i.i.d.: single integral assuming identically distributed distractors
//!   (hit/reject moments only).
//!
//! Moments come either from simulated traces (`measure_moments`) or directly
//! from the hyperparameters (`analytic_moments`, where the applicability
//! table allows).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::readout::{ReadoutMatrix, ReadoutMethod};
use crate::reservoir::{MatrixKind, ReservoirSpec, StateTrace, Variant};
use crate::rng;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * core::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI)
}

/// Standard normal quantile (inverse CDF), Acklam's rational approximation
/// followed by one Halley refinement; relative error below 1e-14 on (0,1).
pub fn norm_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument must be in (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Halley refinement.
    let e = norm_cdf(x) - p;
    let u = e * libm::sqrt(2.0 * core::f64::consts::PI) * libm::exp(0.5 * x * x);
    x - u / (1.0 + 0.5 * x * u)
}

/// Per-class joint moments of the output-neuron inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStatsFull {
    /// `mu[i]` is the length-D mean of h given true class i.
    pub mu: Vec<DVector<f64>>,
    /// `sigma[i]` is the D x D covariance of h given true class i.
    pub sigma: Vec<DMatrix<f64>>,
    /// Class priors, summing to 1.
    pub priors: Vec<f64>,
}

impl MomentStatsFull {
    pub fn d(&self) -> usize {
        self.mu.len()
    }
}

/// Pooled hit/reject moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentStatsReduced {
    pub mu_h: f64,
    pub sigma_h: f64,
    pub mu_r: f64,
    pub sigma_r: f64,
}

/// Result of the full-covariance predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPrediction {
    pub per_class: Vec<f64>,
    pub aggregate: f64,
    /// Largest integration error estimate over classes.
    pub error_estimate: f64,
}

fn guard_sigma(sigma: f64, mu_h: f64, mu_r: f64) -> f64 {
    if sigma > 0.0 {
        sigma
    } else {
        1e-12 * libm::fabs(mu_h).max(libm::fabs(mu_r)).max(1.0)
    }
}

// ---------------------------------------------------------------------------
// Full-covariance tier: MVN orthant probability by quasi-Monte Carlo.
// ---------------------------------------------------------------------------

/// P(correct | class i) for every class, from the full per-class joint
/// moments: the probability that h_i exceeds all other components, computed
/// as the positive-orthant probability of the difference vector.
pub fn predict_full(stats: &MomentStatsFull, tol: f64, seed: u64) -> Result<FullPrediction> {
    let d = stats.d();
    if d < 2 {
        return Err(Error::Parameter("need at least 2 classes".into()));
    }
    let psum: f64 = stats.priors.iter().sum();
    if libm::fabs(psum - 1.0) > 1e-12 {
        return Err(Error::Parameter(format!("priors sum to {psum}, expected 1")));
    }
    let mut per_class = Vec::with_capacity(d);
    let mut err_max: f64 = 0.0;
    for i in 0..d {
        let mu = &stats.mu[i];
        let sg = &stats.sigma[i];
        if mu.len() != d || sg.nrows() != d || sg.ncols() != d {
            return Err(Error::Parameter("moment dimensions disagree".into()));
        }
        // Difference vector Delta_j = h_i - h_j for j != i.
        let k = d - 1;
        let others: Vec<usize> = (0..d).filter(|&j| j != i).collect();
        let m = DVector::from_fn(k, |r, _| mu[i] - mu[others[r]]);
        let s = DMatrix::from_fn(k, k, |r, c| {
            let (j, l) = (others[r], others[c]);
            sg[(i, i)] - sg[(i, l)] - sg[(j, i)] + sg[(j, l)]
        });
        let (p, e) = orthant_probability(&m, &s, tol, rng::substream(seed, i as u64))?;
        per_class.push(p);
        err_max = err_max.max(e);
    }
    let aggregate = per_class.iter().zip(&stats.priors).map(|(p, f)| p * f).sum();
    Ok(FullPrediction { per_class, aggregate, error_estimate: err_max })
}

/// P(x > 0) for x ~ N(m, s), by the separation-of-variables transform and a
/// randomly shifted rank-1 lattice rule. Returns (probability, error
/// estimate). Scalar case is exact.
fn orthant_probability(
    m: &DVector<f64>,
    s: &DMatrix<f64>,
    tol: f64,
    mut rng: rng::Stream,
) -> Result<(f64, f64)> {
    let k = m.len();
    if k == 1 {
        let sd = libm::sqrt(s[(0, 0)].max(0.0)).max(1e-300);
        return Ok((norm_cdf(m[0] / sd), 0.0));
    }
    // Cholesky with escalating jitter for semi-definite inputs.
    let mean_diag = s.diagonal().mean().max(1e-300);
    let mut chol = None;
    for &j in &[0.0, 1e-12, 1e-10, 1e-8] {
        let mut sj = s.clone();
        for i in 0..k {
            sj[(i, i)] += j * mean_diag;
        }
        if let Some(c) = Cholesky::new(sj) {
            chol = Some(c);
            break;
        }
    }
    let chol =
        chol.ok_or_else(|| Error::Numerical("difference covariance not PSD".into()))?;
    let l = chol.l();
    // Lower integration limits in the transformed space: x = m + L z > 0
    // means L z > -m.
    let a = -m;
    // Generating vector from square roots of primes (Richtmyer).
    const PRIMES: [f64; 32] = [
        2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0, 41.0, 43.0, 47.0,
        53.0, 59.0, 61.0, 67.0, 71.0, 73.0, 79.0, 83.0, 89.0, 97.0, 101.0, 103.0, 107.0, 109.0,
        113.0, 127.0, 131.0,
    ];
    if k - 1 > PRIMES.len() {
        return Err(Error::Parameter(format!("orthant dimension {k} too large")));
    }
    let q: Vec<f64> = (0..k - 1).map(|i| libm::sqrt(PRIMES[i]) % 1.0).collect();
    const SHIFTS: usize = 12;
    let mut n_per_shift = 256usize;
    let mut y = vec![0.0f64; k];
    loop {
        let shifts: Vec<Vec<f64>> =
            (0..SHIFTS).map(|_| (0..k - 1).map(|_| rng.random::<f64>()).collect()).collect();
        let mut means = [0.0f64; SHIFTS];
        for (si, shift) in shifts.iter().enumerate() {
            let mut acc = 0.0;
            for jstep in 0..n_per_shift {
                let jf = (jstep + 1) as f64;
                let mut f = 1.0 - norm_cdf(a[0] / l[(0, 0)]);
                let d0 = 1.0 - f;
                let mut dprev = d0;
                for i in 1..k {
                    let w = (jf * q[i - 1] + shift[i - 1]) % 1.0;
                    // Antithetic-free plain point; map into the conditional
                    // slab [d_{i-1}, 1).
                    let u = (dprev + w * (1.0 - dprev)).clamp(1e-16, 1.0 - 1e-16);
                    y[i - 1] = norm_quantile(u);
                    let mut t = a[i];
                    for jj in 0..i {
                        t -= l[(i, jj)] * y[jj];
                    }
                    let di = norm_cdf(t / l[(i, i)]);
                    f *= 1.0 - di;
                    dprev = di;
                }
                acc += f;
            }
            means[si] = acc / n_per_shift as f64;
        }
        let mean: f64 = means.iter().sum::<f64>() / SHIFTS as f64;
        let var: f64 =
            means.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (SHIFTS - 1) as f64;
        let err = 3.0 * libm::sqrt(var / SHIFTS as f64);
        if err <= tol || n_per_shift * SHIFTS >= (1 << 20) {
            return Ok((mean.clamp(0.0, 1.0), err));
        }
        n_per_shift *= 2;
    }
}

// ---------------------------------------------------------------------------
// Independent tier: one-dimensional integral with per-neuron moments.
// ---------------------------------------------------------------------------

/// P(correct | class i) assuming the neuron inputs are independent Gaussians
/// with the given per-neuron means and standard deviations.
pub fn predict_independent(means: &[f64], stds: &[f64], class: usize) -> Result<f64> {
    let d = means.len();
    if stds.len() != d || class >= d {
        return Err(Error::Parameter("means/stds/class dimensions disagree".into()));
    }
    let mu_i = means[class];
    let mu_max = means.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
    let stds: Vec<f64> = stds.iter().map(|&s| guard_sigma(s, mu_max, mu_i)).collect();
    let s_i = stds[class];
    let f = |h: f64| -> f64 {
        let mut p = norm_pdf((h - mu_i) / s_i) / s_i;
        for j in 0..d {
            if j != class {
                p *= norm_cdf((h - means[j]) / stds[j]);
            }
        }
        p
    };
    Ok(adaptive_simpson(&f, mu_i - 10.0 * s_i, mu_i + 10.0 * s_i, 1e-8).clamp(0.0, 1.0))
}

/// Adaptive Simpson quadrature with absolute tolerance.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        let delta = left + right - whole;
        if depth == 0 || libm::fabs(delta) <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, 40)
}

// ---------------------------------------------------------------------------
// I.i.d. tier: Gauss-Hermite integral over hit/reject moments.
// ---------------------------------------------------------------------------

/// Gauss-Hermite rule (physicists' weight exp(-t^2)), computed by
/// Golub-Welsch from the Jacobi matrix of the Hermite recurrence.
#[derive(Debug, Clone)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HermiteRule {
    pub fn new(n: usize) -> Self {
        let mut j = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let v = libm::sqrt(k as f64 / 2.0);
            j[(k - 1, k)] = v;
            j[(k, k - 1)] = v;
        }
        let eig = j.symmetric_eigen();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let sqrt_pi = libm::sqrt(core::f64::consts::PI);
        let nodes = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
        let weights = idx
            .iter()
            .map(|&i| {
                let v0 = eig.eigenvectors[(0, i)];
                sqrt_pi * v0 * v0
            })
            .collect();
        Self { nodes, weights }
    }
}

/// Accuracy under the i.i.d.-distractor approximation using a supplied
/// quadrature rule: the hit input is N(mu_h, sigma_h^2), all D-1 distractors
/// are i.i.d. N(mu_r, sigma_r^2).
pub fn predict_iid_with_rule(rule: &HermiteRule, stats: &MomentStatsReduced, d: usize) -> f64 {
    let sigma_h = guard_sigma(stats.sigma_h, stats.mu_h, stats.mu_r);
    let sigma_r = guard_sigma(stats.sigma_r, stats.mu_h, stats.mu_r);
    let sqrt2 = libm::sqrt(2.0);
    let inv_sqrt_pi = 1.0 / libm::sqrt(core::f64::consts::PI);
    let mut p = 0.0;
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let h = sqrt2 * sigma_h * t + stats.mu_h;
        let phi = norm_cdf((h - stats.mu_r) / sigma_r);
        p += w * libm::pow(phi, (d - 1) as f64);
    }
    (p * inv_sqrt_pi).clamp(0.0, 1.0)
}

/// Accuracy under the i.i.d.-distractor approximation, with a doubling-node
/// convergence check (128 -> 256 -> 512 nodes, target 1e-8).
pub fn predict_iid(stats: &MomentStatsReduced, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::Parameter("need at least 2 classes".into()));
    }
    let mut prev = predict_iid_with_rule(&HermiteRule::new(128), stats, d);
    for n in [256usize, 512] {
        let cur = predict_iid_with_rule(&HermiteRule::new(n), stats, d);
        if libm::fabs(cur - prev) <= 1e-8 {
            return Ok(cur);
        }
        prev = cur;
    }
    Ok(prev)
}

// ---------------------------------------------------------------------------
// Moment measurement from traces.
// ---------------------------------------------------------------------------

/// Measurement mode for `measure_moments`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentMode {
    Full,
    Reduced,
}

/// Measured moments, either full per-class joints or pooled hit/reject.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasuredMoments {
    Full(MomentStatsFull),
    Reduced(MomentStatsReduced),
}

/// Group the inner-product vectors of the trace's states (at the readout's
/// delay) by true class and estimate moments.
pub fn measure_moments(
    trace: &StateTrace,
    readout: &ReadoutMatrix,
    mode: MomentMode,
) -> Result<MeasuredMoments> {
    let d = readout.d();
    let delay = readout.delay;
    let mut groups: Vec<Vec<DVector<f64>>> = vec![Vec::new(); d];
    for (i, x) in trace.states.iter().enumerate() {
        let Some(label) = trace.label_at_lag(i, delay) else { continue };
        groups[label as usize].push(&readout.rows * x);
    }
    let total: usize = groups.iter().map(|g| g.len()).sum();
    if total == 0 {
        return Err(Error::InsufficientData("no labeled states in trace".into()));
    }
    match mode {
        MomentMode::Full => {
            let mut mu = Vec::with_capacity(d);
            let mut sigma = Vec::with_capacity(d);
            let mut priors = Vec::with_capacity(d);
            for (class, g) in groups.iter().enumerate() {
                if g.len() < 2 {
                    return Err(Error::InsufficientData(format!(
                        "class {class} has {} samples; full mode needs >= 2",
                        g.len()
                    )));
                }
                let m = g.len() as f64;
                let mean = g.iter().fold(DVector::zeros(d), |acc, h| acc + h) / m;
                let mut cov = DMatrix::<f64>::zeros(d, d);
                for h in g {
                    let c = h - &mean;
                    cov.syger(1.0 / (m - 1.0), &c, &c, 1.0);
                }
                for i in 0..d {
                    for j in i + 1..d {
                        cov[(i, j)] = cov[(j, i)];
                    }
                }
                mu.push(mean);
                sigma.push(cov);
                priors.push(m / total as f64);
            }
            Ok(MeasuredMoments::Full(MomentStatsFull { mu, sigma, priors }))
        }
        MomentMode::Reduced => {
            let mut hits = Vec::new();
            let mut rejects = Vec::new();
            for (class, g) in groups.iter().enumerate() {
                for h in g {
                    for j in 0..d {
                        if j == class {
                            hits.push(h[j]);
                        } else {
                            rejects.push(h[j]);
                        }
                    }
                }
            }
            let stat = |v: &[f64]| -> (f64, f64) {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = if v.len() > 1 {
                    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                (mean, libm::sqrt(var))
            };
            let (mu_h, sigma_h) = stat(&hits);
            let (mu_r, sigma_r) = stat(&rejects);
            Ok(MeasuredMoments::Reduced(MomentStatsReduced { mu_h, sigma_h, mu_r, sigma_r }))
        }
    }
}

// ---------------------------------------------------------------------------
// Analytic moments from hyperparameters.
// ---------------------------------------------------------------------------

/// Hyperparameter-only description of a reservoir (no sampled matrices).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticModel {
    pub kind: MatrixKind,
    pub variant: Variant,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl From<&ReservoirSpec> for AnalyticModel {
    fn from(spec: &ReservoirSpec) -> Self {
        Self {
            kind: spec.matrix.kind(),
            variant: spec.variant,
            n: spec.n(),
            alpha: spec.alpha,
            beta: spec.beta,
            gamma: spec.gamma,
        }
    }
}

/// Decoding context for analytic moments: recall at a delay in a long stream,
/// or recall from the final state of a length-G sequence (linear dynamics
/// without decay).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentContext {
    Delay(usize),
    Length(usize),
}

/// Configuration of the scalar-channel Monte Carlo propagator used for the
/// tanh variants with a permutation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalarChannelConfig {
    pub steps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for ScalarChannelConfig {
    fn default() -> Self {
        Self { steps: 1_000_000, burn_in: 1_000, seed: 0x5ca1a8 }
    }
}

/// One long scalar-channel simulation
/// `x(t) = (1-a) x(t-1) + a tanh(g x(t-1) + b s(t))` with i.i.d. signs s.
/// With a permutation matrix and bipolar codes, every reservoir component
/// follows this recursion, so hit/reject moments scale directly with N.
#[derive(Debug, Clone)]
pub struct ScalarChannel {
    x: Vec<f64>,
    s: Vec<f64>,
    /// E[x^2] over the retained steps.
    pub m2: f64,
}

impl ScalarChannel {
    pub fn simulate(model: &AnalyticModel, cfg: &ScalarChannelConfig) -> Self {
        let mut rng = rng::stream(cfg.seed);
        let mut x = 0.0f64;
        let (a, b, g) = (model.alpha, model.beta, model.gamma);
        for _ in 0..cfg.burn_in {
            let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
            x = (1.0 - a) * x + a * libm::tanh(g * x + b * s);
        }
        let mut xs = Vec::with_capacity(cfg.steps);
        let mut ss = Vec::with_capacity(cfg.steps);
        let mut m2 = 0.0;
        for _ in 0..cfg.steps {
            let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
            x = (1.0 - a) * x + a * libm::tanh(g * x + b * s);
            xs.push(x);
            ss.push(s);
            m2 += x * x;
        }
        Self { x: xs, s: ss, m2: m2 / cfg.steps as f64 }
    }

    /// E[x(t) s(t-d)]: correlation of the state with the sign injected d
    /// steps earlier.
    pub fn cross(&self, d: usize) -> f64 {
        let t = self.x.len();
        if d >= t {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in d..t {
            acc += self.x[i] * self.s[i - d];
        }
        acc / (t - d) as f64
    }

    /// Reduced moments for an N-dimensional reservoir at delay d.
    pub fn moments(&self, d: usize, n: usize) -> MomentStatsReduced {
        let c = self.cross(d);
        let nf = n as f64;
        MomentStatsReduced {
            mu_h: nf * c,
            sigma_h: libm::sqrt(nf * (self.m2 - c * c).max(0.0)),
            mu_r: 0.0,
            sigma_r: libm::sqrt(nf * self.m2),
        }
    }
}

/// Analytic hit/reject moments for the codebook readout, directly from the
/// hyperparameters. Only available where the applicability table answers Q3
/// "yes".
pub fn analytic_moments(
    model: &AnalyticModel,
    context: MomentContext,
    scalar_cfg: &ScalarChannelConfig,
) -> Result<MomentStatsReduced> {
    let (_, _, q3) = capability(model.kind, model.variant, ReadoutMethod::Codebook);
    if !q3 {
        return Err(Error::Capability(format!(
            "no analytic moments for ({:?}, {}, codebook)",
            model.kind,
            model.variant.name()
        )));
    }
    let nf = model.n as f64;
    match (model.variant, context) {
        (Variant::V1, MomentContext::Length(g)) => {
            if g < 1 {
                return Err(Error::Parameter("sequence length must be >= 1".into()));
            }
            Ok(MomentStatsReduced {
                mu_h: nf,
                sigma_h: libm::sqrt(nf * (g as f64 - 1.0)),
                mu_r: 0.0,
                sigma_r: libm::sqrt(nf * g as f64),
            })
        }
        (Variant::V1, MomentContext::Delay(_)) => Err(Error::Parameter(
            "linear dynamics without decay have no stationary stream moments; use a length context"
                .into(),
        )),
        (Variant::V2, MomentContext::Delay(d)) => {
            let (b, g) = (model.beta, model.gamma);
            if g >= 1.0 {
                return Err(Error::Parameter(
                    "stream moments with decay require gamma < 1".into(),
                ));
            }
            let geo = 1.0 / (1.0 - g * g);
            let gd = libm::pow(g, d as f64);
            Ok(MomentStatsReduced {
                mu_h: b * gd * nf,
                sigma_h: b * libm::sqrt(nf * (geo - gd * gd)),
                mu_r: 0.0,
                sigma_r: b * libm::sqrt(nf * geo),
            })
        }
        (Variant::V2, MomentContext::Length(_)) => Err(Error::Parameter(
            "length context is only defined for linear dynamics without decay".into(),
        )),
        (_, MomentContext::Delay(d)) => {
            // tanh variants with a permutation matrix: scalar channel.
            let chan = ScalarChannel::simulate(model, scalar_cfg);
            Ok(chan.moments(d, model.n))
        }
        (_, MomentContext::Length(_)) => Err(Error::Parameter(
            "length context is only defined for linear dynamics without decay".into(),
        )),
    }
}

/// Horizon-limited stream moments for linear dynamics with decay: only the
/// most recent `g` inputs contribute (e.g. a sequence of length g). As
/// gamma -> 1 these converge to the length-G moments of the linear variant.
pub fn analytic_moments_v2_finite(model: &AnalyticModel, d: usize, g: usize) -> Result<MomentStatsReduced> {
    if model.variant != Variant::V2 {
        return Err(Error::Parameter("finite-horizon moments are for the decay variant".into()));
    }
    if d >= g {
        return Err(Error::Parameter("delay must be inside the horizon".into()));
    }
    let nf = model.n as f64;
    let (b, ga) = (model.beta, model.gamma);
    let mut geo = 0.0;
    for k in 0..g {
        geo += libm::pow(ga, 2.0 * k as f64);
    }
    let gd = libm::pow(ga, d as f64);
    Ok(MomentStatsReduced {
        mu_h: b * gd * nf,
        sigma_h: b * libm::sqrt(nf * (geo - gd * gd)),
        mu_r: 0.0,
        sigma_r: b * libm::sqrt(nf * geo),
    })
}

/// Episodic scalar-channel moments: episodes of `episode_len` steps from the
/// zero state; returns (E[x_final s(len - d)], E[x_final^2]) for each
/// requested delay d (d = 0 pairs the final state with the final input).
pub fn episodic_scalar_moments(
    model: &AnalyticModel,
    episode_len: usize,
    delays: &[usize],
    episodes: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    if model.kind != MatrixKind::Permutation {
        return Err(Error::Capability(
            "scalar-channel decoupling requires a permutation matrix".into(),
        ));
    }
    if delays.iter().any(|&d| d >= episode_len) {
        return Err(Error::Parameter("delay outside the episode".into()));
    }
    let (a, b, g) = (model.alpha, model.beta, model.gamma);
    let mut rng = rng::stream(seed);
    let mut cross = vec![0.0f64; delays.len()];
    let mut m2 = 0.0f64;
    let mut signs = vec![0.0f64; episode_len];
    for _ in 0..episodes {
        let mut x = 0.0f64;
        for s in signs.iter_mut() {
            *s = if rng.random::<bool>() { 1.0 } else { -1.0 };
            x = (1.0 - a) * x + a * libm::tanh(g * x + b * *s);
        }
        m2 += x * x;
        for (k, &d) in delays.iter().enumerate() {
            cross[k] += x * signs[episode_len - 1 - d];
        }
    }
    let ef = episodes as f64;
    Ok((cross.iter().map(|c| c / ef).collect(), m2 / ef))
}

// ---------------------------------------------------------------------------
// Applicability table.
// ---------------------------------------------------------------------------

/// (Q1, Q2, Q3) for a (matrix family, dynamics variant, readout method) cell:
/// Q1 — can the readout be built without training; Q2 — can the theory
/// predict accuracy from measured moments; Q3 — can the moments be computed
/// from the hyperparameters alone.
pub fn capability(kind: MatrixKind, variant: Variant, method: ReadoutMethod) -> (bool, bool, bool) {
    let linear = matches!(variant, Variant::V1 | Variant::V2);
    match method {
        ReadoutMethod::Codebook => {
            let q3 = match kind {
                MatrixKind::Permutation => true,
                MatrixKind::RandomOrthogonal => linear,
            };
            (true, true, q3)
        }
        ReadoutMethod::Regression => (false, true, false),
        ReadoutMethod::CovCoarse | ReadoutMethod::CovFine => {
            if linear {
                (true, true, false)
            } else {
                (false, false, false)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform_full(mu: Vec<DVector<f64>>, sigma: Vec<DMatrix<f64>>) -> MomentStatsFull {
        let d = mu.len();
        MomentStatsFull { mu, sigma, priors: vec![1.0 / d as f64; d] }
    }

    #[test]
    fn quantile_round_trips() {
        for &p in &[1e-12, 1e-6, 0.02, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9] {
            assert_abs_diff_eq!(norm_cdf(norm_quantile(p)), p, epsilon = 1e-12);
        }
    }

    #[test]
    fn full_matches_scalar_cdf_for_two_classes() {
        // mu = (1,0), Sigma = I: p_1 = Phi(1/sqrt(2)).
        let stats = uniform_full(
            vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])],
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
        );
        let pred = predict_full(&stats, 1e-4, 0).unwrap();
        assert_abs_diff_eq!(pred.per_class[0], norm_cdf(1.0 / libm::sqrt(2.0)), epsilon = 1e-9);
        assert_abs_diff_eq!(pred.per_class[0], 0.7602, epsilon = 5e-5);
    }

    #[test]
    fn full_symmetry_gives_chance() {
        // Equal means, exchangeable covariance: every class at 1/D.
        let d = 4;
        let mut sig = DMatrix::from_element(d, d, 0.3);
        for i in 0..d {
            sig[(i, i)] = 1.0;
        }
        let stats = uniform_full(
            (0..d).map(|_| DVector::from_element(d, 0.7)).collect(),
            vec![sig; d],
        );
        let pred = predict_full(&stats, 1e-4, 1).unwrap();
        for p in &pred.per_class {
            assert_abs_diff_eq!(*p, 0.25, epsilon = 3e-4);
        }
    }

    #[test]
    fn full_saturates_for_separated_means() {
        let d = 5;
        let mut mu0 = DVector::from_element(d, 0.0);
        mu0[0] = 10.0;
        let stats = uniform_full(
            (0..d)
                .map(|i| {
                    let mut m = DVector::from_element(d, 0.0);
                    m[i] = 10.0;
                    m
                })
                .collect(),
            vec![DMatrix::identity(d, d); d],
        );
        let pred = predict_full(&stats, 1e-4, 2).unwrap();
        assert!(pred.per_class[0] > 0.9999);
        assert!(pred.aggregate > 0.9999);
    }

    #[test]
    fn independent_symmetry_and_cross_oracles() {
        // Equal moments -> 1/D.
        let p = predict_independent(&[1.0; 6], &[0.5; 6], 3).unwrap();
        assert_abs_diff_eq!(p, 1.0 / 6.0, epsilon = 1e-8);
        // D=2 matches the full predictor with diagonal covariance.
        let means = [0.9, 0.1];
        let stds = [1.1, 0.6];
        let p_ind = predict_independent(&means, &stds, 0).unwrap();
        let stats = uniform_full(
            vec![
                DVector::from_vec(means.to_vec()),
                DVector::from_vec(vec![means[1], means[0]]),
            ],
            vec![DMatrix::from_diagonal(&DVector::from_vec(vec![
                stds[0] * stds[0],
                stds[1] * stds[1],
            ])); 2],
        );
        let p_full = predict_full(&stats, 1e-7, 3).unwrap().per_class[0];
        assert_abs_diff_eq!(p_ind, p_full, epsilon = 1e-6);
        // Identical distractors: matches the i.i.d. tier.
        let means = [2.0, 0.3, 0.3, 0.3];
        let stds = [1.5, 0.8, 0.8, 0.8];
        let p_ind = predict_independent(&means, &stds, 0).unwrap();
        let p_iid = predict_iid(
            &MomentStatsReduced { mu_h: 2.0, sigma_h: 1.5, mu_r: 0.3, sigma_r: 0.8 },
            4,
        )
        .unwrap();
        assert_abs_diff_eq!(p_ind, p_iid, epsilon = 1e-7);
    }

    #[test]
    fn iid_symmetry_closed_form_and_invariances() {
        let sym = MomentStatsReduced { mu_h: 1.0, sigma_h: 0.7, mu_r: 1.0, sigma_r: 0.7 };
        assert_abs_diff_eq!(predict_iid(&sym, 5).unwrap(), 0.2, epsilon = 1e-9);
        // D=2 equals the Z-score CDF.
        let st = MomentStatsReduced { mu_h: 1.3, sigma_h: 0.9, mu_r: 0.2, sigma_r: 1.4 };
        let z = (st.mu_h - st.mu_r) / libm::sqrt(st.sigma_h.powi(2) + st.sigma_r.powi(2));
        assert_abs_diff_eq!(predict_iid(&st, 2).unwrap(), norm_cdf(z), epsilon = 1e-9);
        // Common positive scaling of all moments is a no-op.
        let p0 = predict_iid(&st, 7).unwrap();
        for c in [1e-3, 3.0, 1e4] {
            let sc = MomentStatsReduced {
                mu_h: c * st.mu_h,
                sigma_h: c * st.sigma_h,
                mu_r: c * st.mu_r,
                sigma_r: c * st.sigma_r,
            };
            assert_abs_diff_eq!(predict_iid(&sc, 7).unwrap(), p0, epsilon = 1e-10);
        }
        // Strictly increasing in mu_h.
        let mut last = 0.0;
        for k in 0..5 {
            let s = MomentStatsReduced { mu_h: 0.2 * k as f64, ..st };
            let p = predict_iid(&s, 7).unwrap();
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn measured_constant_states_have_zero_covariance() {
        use crate::codec::SymbolSequence;
        let seq = SymbolSequence::from_symbols(vec![0, 1, 0, 1], 0, 0, 4, 2).unwrap();
        let x = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let trace = crate::reservoir::StateTrace {
            states: vec![x.clone(); 4],
            timesteps: vec![1, 2, 3, 4],
            sequence: seq,
        };
        let rows = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let ro = ReadoutMatrix { rows, delay: 0, method: ReadoutMethod::Codebook };
        if let MeasuredMoments::Full(f) = measure_moments(&trace, &ro, MomentMode::Full).unwrap() {
            for s in &f.sigma {
                assert!(s.amax() < 1e-12);
            }
            for m in &f.mu {
                assert_eq!(m, &DVector::from_vec(vec![1.0, -1.0]));
            }
        } else {
            panic!("expected full moments");
        }
    }

    #[test]
    fn analytic_v2_memoryless_limit() {
        let model = AnalyticModel {
            kind: MatrixKind::Permutation,
            variant: Variant::V2,
            n: 256,
            alpha: 1.0,
            beta: 0.5,
            gamma: 1e-8,
        };
        let m = analytic_moments(&model, MomentContext::Delay(0), &Default::default()).unwrap();
        assert_abs_diff_eq!(m.mu_h, 0.5 * 256.0, epsilon = 1e-9);
        assert!(m.sigma_h < 1e-3);
        let p = predict_iid(&m, 8).unwrap();
        assert!(p > 0.999999);
    }

    #[test]
    fn v2_finite_horizon_converges_to_v1_length_moments() {
        let g = 32;
        let v1 = AnalyticModel {
            kind: MatrixKind::RandomOrthogonal,
            variant: Variant::V1,
            n: 128,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        };
        let m1 = analytic_moments(&v1, MomentContext::Length(g), &Default::default()).unwrap();
        let v2 = AnalyticModel { variant: Variant::V2, gamma: 1.0 - 1e-9, ..v1 };
        let m2 = analytic_moments_v2_finite(&v2, 0, g).unwrap();
        assert_abs_diff_eq!(m2.mu_h, m1.mu_h, epsilon = 1e-4);
        assert_abs_diff_eq!(m2.sigma_h, m1.sigma_h, epsilon = 1e-4);
        assert_abs_diff_eq!(m2.sigma_r, m1.sigma_r, epsilon = 1e-4);
    }

    #[test]
    fn capability_table_spot_checks() {
        use MatrixKind::*;
        use ReadoutMethod::*;
        assert_eq!(capability(Permutation, Variant::V5, Codebook), (true, true, true));
        assert_eq!(capability(RandomOrthogonal, Variant::V3, Codebook), (true, true, false));
        assert_eq!(capability(Permutation, Variant::V3, CovCoarse), (false, false, false));
        assert_eq!(capability(Permutation, Variant::V1, CovFine), (true, true, false));
        assert_eq!(capability(RandomOrthogonal, Variant::V2, Regression), (false, true, false));
        // Exactly 30 cells; codebook Q1/Q2 always yes, regression Q2 always
        // yes, covariance cells degrade with tanh.
        for kind in [Permutation, RandomOrthogonal] {
            for variant in [Variant::V1, Variant::V2, Variant::V3, Variant::V4, Variant::V5] {
                let (q1, q2, _) = capability(kind, variant, Codebook);
                assert!(q1 && q2);
                let (q1, q2, q3) = capability(kind, variant, Regression);
                assert!(!q1 && q2 && !q3);
            }
        }
    }

    #[test]
    fn analytic_rejects_unsupported_cells() {
        let model = AnalyticModel {
            kind: MatrixKind::RandomOrthogonal,
            variant: Variant::V4,
            n: 64,
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.9,
        };
        assert!(matches!(
            analytic_moments(&model, MomentContext::Delay(1), &Default::default()),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn scalar_channel_linear_sanity() {
        // With tanh near the origin (tiny beta) the channel is almost linear:
        // cross(d) ~ beta * gamma^d and m2 ~ beta^2 / (1 - gamma^2).
        let model = AnalyticModel {
            kind: MatrixKind::Permutation,
            variant: Variant::V4,
            n: 1,
            alpha: 1.0,
            beta: 1e-3,
            gamma: 0.9,
        };
        let cfg = ScalarChannelConfig { steps: 400_000, burn_in: 1_000, seed: 5 };
        let chan = ScalarChannel::simulate(&model, &cfg);
        for d in [0usize, 3, 8] {
            let expect = 1e-3 * libm::pow(0.9, d as f64);
            assert_abs_diff_eq!(chan.cross(d), expect, epsilon = 2e-5);
        }
        assert_abs_diff_eq!(chan.m2, 1e-6 / (1.0 - 0.81), epsilon = 2e-7);
    }
}
