use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_consistent, LagWindow, LinearDecoder, TrialSignals};
use crate::error::{Error, Result};
use crate::metrics::pearson;
use crate::signal::SignalSeries;

/// `1e-3, 1e-2, ..., 1e3`.
pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];

/// Smallest accepted ratio between the smallest and largest squared Cholesky pivot.
const MIN_PIVOT_RATIO: f64 = 1e-13;

/// Sufficient statistics of the lagged design over the valid samples of one
/// or more trials. Moments of disjoint trial sets add.
#[derive(Debug, Clone, PartialEq)]
pub struct LagMoments {
    dim: usize,
    count: f64,
    sum_x: Vec<f64>,
    sum_y: f64,
    /// Upper triangle is filled; row-major `dim x dim`.
    sum_xx: Vec<f64>,
    sum_xy: Vec<f64>,
}

impl LagMoments {
    pub fn zeros(dim: usize) -> Self {
        LagMoments {
            dim,
            count: 0.0,
            sum_x: vec![0.0; dim],
            sum_y: 0.0,
            sum_xx: vec![0.0; dim * dim],
            sum_xy: vec![0.0; dim],
        }
    }

    pub fn of_trial(eeg: &SignalSeries, target: &[f64], lags: LagWindow) -> Result<Self> {
        if target.len() != eeg.len() {
            return Err(Error::InconsistentShapes(format!(
                "EEG has {} samples, target {}",
                eeg.len(),
                target.len()
            )));
        }
        let channels = eeg.channels();
        let dim = channels * lags.count();
        let mut m = LagMoments::zeros(dim);
        let mut x = vec![0.0; dim];
        for t in lags.valid_range(eeg.len()) {
            for (li, lag) in lags.lags().enumerate() {
                let idx = (t as i64 + lag) as usize;
                for c in 0..channels {
                    x[li * channels + c] = eeg.channel(c)[idx];
                }
            }
            let y = target[t];
            m.count += 1.0;
            m.sum_y += y;
            for i in 0..dim {
                let xi = x[i];
                m.sum_x[i] += xi;
                m.sum_xy[i] += xi * y;
                let row = &mut m.sum_xx[i * dim..(i + 1) * dim];
                for j in i..dim {
                    row[j] += xi * x[j];
                }
            }
        }
        Ok(m)
    }

    pub fn add(&mut self, other: &LagMoments) {
        assert_eq!(self.dim, other.dim, "moments of different designs");
        self.count += other.count;
        self.sum_y += other.sum_y;
        let pairs = [
            (&mut self.sum_x, &other.sum_x),
            (&mut self.sum_xx, &other.sum_xx),
            (&mut self.sum_xy, &other.sum_xy),
        ];
        for (dst, src) in pairs {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    /// Centered cross-product matrix and vector.
    fn centered(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
        let n = self.count;
        let mx = DVector::from_iterator(self.dim, self.sum_x.iter().map(|s| s / n));
        let my = self.sum_y / n;
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in i..self.dim {
                let v = self.sum_xx[i * self.dim + j] - n * mx[i] * mx[j];
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let cxy = DVector::from_iterator(self.dim, (0..self.dim).map(|i| self.sum_xy[i] - n * mx[i] * my));
        (cov, cxy, mx, my)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub decoder: LinearDecoder,
    pub lambda: f64,
    /// Mean validation correlation for each candidate penalty, in grid order.
    pub validation: Vec<(f64, f64)>,
}

/// Solves `(C + lambda * tr(C)/p * I) w = c_xy` on centered moments.
///
/// The penalty is scaled by the mean eigenvalue of `C` so that grid values are
/// comparable across channel counts, gains and amounts of data.
fn solve(moments: &LagMoments, lambda: f64) -> Result<(Vec<f64>, f64)> {
    if moments.count < 1.0 {
        return Err(Error::InconsistentShapes("no valid training samples".into()));
    }
    let (mut cov, cxy, mx, my) = moments.centered();
    let p = moments.dim as f64;
    let scale = cov.trace() / p;
    for i in 0..moments.dim {
        cov[(i, i)] += lambda * scale;
    }
    let chol = cov.cholesky().ok_or(Error::SingularSystem(lambda))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 0.0 && (lo * lo) / (hi * hi) > MIN_PIVOT_RATIO) {
        return Err(Error::SingularSystem(lambda));
    }
    let w = chol.solve(&cxy);
    let bias = my - w.dot(&mx);
    Ok((w.iter().copied().collect(), bias))
}

pub fn fit_ridge(
    train: &[TrialSignals<'_>],
    lags: LagWindow,
    lambda_grid: &[f64],
    val: &[TrialSignals<'_>],
) -> Result<RidgeFit> {
    let (channels, rate) = check_consistent(train)?;
    let mut moments = LagMoments::zeros(channels * lags.count());
    for t in train {
        moments.add(&LagMoments::of_trial(t.eeg, t.attended, lags)?);
    }
    fit_ridge_with(&moments, channels, rate, lags, lambda_grid, val)
}

/// Ridge fit from precomputed training moments; picks the penalty with the
/// highest mean validation correlation (first on ties).
pub fn fit_ridge_with(
    moments: &LagMoments,
    channels: usize,
    sample_rate_hz: f64,
    lags: LagWindow,
    lambda_grid: &[f64],
    val: &[TrialSignals<'_>],
) -> Result<RidgeFit> {
    if lambda_grid.is_empty() {
        return Err(Error::Config("empty ridge penalty grid".into()));
    }
    if let Some(l) = lambda_grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::Config(format!("invalid ridge penalty {l}")));
    }
    if lambda_grid.len() > 1 && val.is_empty() {
        return Err(Error::Config(
            "selecting a ridge penalty needs validation trials".into(),
        ));
    }
    if moments.dim != channels * lags.count() {
        return Err(Error::InconsistentShapes("moments do not match the lag design".into()));
    }

    let mut best: Option<(f64, LinearDecoder, f64)> = None;
    let mut validation = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let (w, bias) = solve(moments, lambda)?;
        let decoder = LinearDecoder::new(w, bias, channels, lags, sample_rate_hz)?;
        let score = if val.is_empty() {
            f64::NAN
        } else {
            mean_validation_correlation(&decoder, val)?
        };
        validation.push((lambda, score));
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, decoder, lambda));
        }
    }
    let (_, decoder, lambda) = best.expect("grid is non-empty");
    Ok(RidgeFit {
        decoder,
        lambda,
        validation,
    })
}

pub(crate) fn mean_validation_correlation(decoder: &LinearDecoder, val: &[TrialSignals<'_>]) -> Result<f64> {
    let mut total = 0.0;
    for t in val {
        let r = decoder.reconstruct(t.eeg)?;
        total += pearson(r.valid_samples(), &t.attended[r.valid.clone()])?;
    }
    Ok(total / val.len() as f64)
}
