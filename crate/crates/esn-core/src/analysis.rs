//! Information capacity, separability Z-scores, and readout-geometry
//! diagnostics.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::readout::ReadoutMatrix;
use crate::theory::{
    predict_iid_with_rule, AnalyticModel, HermiteRule, MomentStatsReduced, ScalarChannel,
    ScalarChannelConfig,
};

pub use crate::reservoir::{MatrixKind, Variant};

/// Accuracy per delay, with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyCurve {
    pub delays: Vec<usize>,
    pub p_c: Vec<f64>,
    pub source: CurveSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveSource {
    Empirical,
    TheoryFull,
    TheoryIndependent,
    TheoryIid,
}

/// Total retrievable information over a (beta, gamma) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacitySurface {
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Row-major over (beta, gamma): `i_tot[b * gammas.len() + g]`.
    pub i_tot: Vec<f64>,
}

impl CapacitySurface {
    pub fn at(&self, bi: usize, gi: usize) -> f64 {
        self.i_tot[bi * self.gammas.len() + gi]
    }
}

/// Information (bits) retrieved by one decision with accuracy `p_c` over D
/// symbols: the divergence of the achieved confusion away from chance,
/// zero exactly at chance and log2(D) at perfect recall.
pub fn item_information(p_c: f64, d: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_c) {
        return Err(Error::Parameter(format!("accuracy {p_c} outside [0,1]")));
    }
    if d < 2 {
        return Err(Error::Parameter("alphabet must have at least 2 symbols".into()));
    }
    let df = d as f64;
    let mut bits = 0.0;
    if p_c > 0.0 {
        bits += p_c * libm::log2(df * p_c);
    }
    if p_c < 1.0 {
        bits += (1.0 - p_c) * libm::log2(df / (df - 1.0) * (1.0 - p_c));
    }
    // The expression is a KL divergence, non-negative up to rounding.
    Ok(bits.max(0.0))
}

/// Result of summing item information over delays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalInformation {
    pub bits: f64,
    /// True when the curve reached the truncation rule; false when it ended
    /// first (partial sum).
    pub complete: bool,
}

/// Sum item information over the curve, truncating once the accuracy stays
/// below `1/D + floor` for `run` consecutive delays.
pub fn total_information(
    curve: &AccuracyCurve,
    d: usize,
    floor: f64,
    run: usize,
) -> Result<TotalInformation> {
    let chance = 1.0 / d as f64;
    let mut bits = 0.0;
    let mut below = 0usize;
    for &p in &curve.p_c {
        bits += item_information(p, d)?;
        if p < chance + floor {
            below += 1;
            if below >= run {
                return Ok(TotalInformation { bits, complete: true });
            }
        } else {
            below = 0;
        }
    }
    Ok(TotalInformation { bits, complete: false })
}

/// Separability summary (mu_h - mu_r) / sqrt(sigma_h^2 + sigma_r^2).
pub fn zscore(stats: &MomentStatsReduced) -> f64 {
    (stats.mu_h - stats.mu_r)
        / libm::sqrt(stats.sigma_h * stats.sigma_h + stats.sigma_r * stats.sigma_r)
}

/// Geometry diagnostics of a readout matrix's rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryReport {
    pub mean_cosine: f64,
    pub std_cosine: f64,
    pub row_norm_mean: f64,
    pub row_norm_std: f64,
    /// Max |cosine - (-1/(D-1))| over pairs: zero iff the rows form a
    /// simplex equiangular tight frame.
    pub etf_deviation: f64,
    /// The simplex target -1/(D-1).
    pub etf_target: f64,
}

/// Pairwise row cosines and norms of a readout matrix.
pub fn geometry_report(readout: &ReadoutMatrix) -> Result<GeometryReport> {
    let d = readout.d();
    if d < 2 {
        return Err(Error::Parameter("geometry needs at least 2 rows".into()));
    }
    let norms: Vec<f64> = (0..d).map(|j| readout.rows.row(j).norm()).collect();
    if let Some(j) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Numerical(format!("row {j} is zero; cosine undefined")));
    }
    let target = -1.0 / (d as f64 - 1.0);
    let mut cosines = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in i + 1..d {
            let dot = readout.rows.row(i).dot(&readout.rows.row(j));
            cosines.push(dot / (norms[i] * norms[j]));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let std = |v: &[f64], m: f64| {
        if v.len() < 2 {
            0.0
        } else {
            libm::sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64)
        }
    };
    let mc = mean(&cosines);
    let nm = mean(&norms);
    let dev = cosines.iter().fold(0.0f64, |acc, c| acc.max(libm::fabs(c - target)));
    Ok(GeometryReport {
        mean_cosine: mc,
        std_cosine: std(&cosines, mc),
        row_norm_mean: nm,
        row_norm_std: std(&norms, nm),
        etf_deviation: dev,
        etf_target: target,
    })
}

/// Defaults of the capacity truncation rule.
pub const CAPACITY_FLOOR: f64 = 1e-3;
pub const CAPACITY_RUN: usize = 5;

/// Analytic total information of one (beta, gamma) cell: scalar-channel
/// moments feed the i.i.d.-distractor predictor delay by delay until the
/// truncation rule fires (or `d_max` is reached).
pub fn capacity_cell_analytic(
    model: &AnalyticModel,
    d_alphabet: usize,
    d_max: usize,
    rule: &HermiteRule,
    scalar_cfg: &ScalarChannelConfig,
) -> Result<TotalInformation> {
    if !matches!(model.variant, Variant::V3 | Variant::V4 | Variant::V5) {
        return Err(Error::Capability(
            "analytic capacity cells use the scalar-channel variants".into(),
        ));
    }
    if model.kind != MatrixKind::Permutation {
        return Err(Error::Capability(
            "scalar-channel decoupling requires a permutation matrix".into(),
        ));
    }
    if model.beta == 0.0 {
        // No input drive: the channel is identically zero and every delay is
        // at chance.
        return Ok(TotalInformation { bits: 0.0, complete: true });
    }
    let chan = ScalarChannel::simulate(model, scalar_cfg);
    let chance = 1.0 / d_alphabet as f64;
    let mut bits = 0.0;
    let mut below = 0usize;
    for d in 0..=d_max {
        let p = predict_iid_with_rule(rule, &chan.moments(d, model.n), d_alphabet);
        bits += item_information(p, d_alphabet)?;
        if p < chance + CAPACITY_FLOOR {
            below += 1;
            if below >= CAPACITY_RUN {
                return Ok(TotalInformation { bits, complete: true });
            }
        } else {
            below = 0;
        }
    }
    Ok(TotalInformation { bits, complete: false })
}

/// Analytic capacity surface over a (beta, gamma) grid. Each cell runs its
/// own seeded scalar channel (substream = cell index), so the evaluation
/// order does not matter.
pub fn capacity_surface_analytic(
    template: &AnalyticModel,
    betas: &[f64],
    gammas: &[f64],
    d_alphabet: usize,
    d_max: usize,
    scalar_cfg: &ScalarChannelConfig,
) -> Result<CapacitySurface> {
    let rule = HermiteRule::new(128);
    let mut i_tot = Vec::with_capacity(betas.len() * gammas.len());
    for (bi, &beta) in betas.iter().enumerate() {
        for (gi, &gamma) in gammas.iter().enumerate() {
            let cell = AnalyticModel { beta, gamma, ..*template };
            let cfg = ScalarChannelConfig {
                seed: scalar_cfg
                    .seed
                    .wrapping_add((bi * gammas.len() + gi) as u64),
                ..*scalar_cfg
            };
            i_tot.push(capacity_cell_analytic(&cell, d_alphabet, d_max, &rule, &cfg)?.bits);
        }
    }
    Ok(CapacitySurface { betas: betas.to_vec(), gammas: gammas.to_vec(), i_tot })
}
