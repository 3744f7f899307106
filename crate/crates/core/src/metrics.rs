//! Correlation, windowed decoding accuracy and correlation-based losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::SeriesTooShort(x.len()));
    }
    Ok(())
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// Centered sums `(s_xy, s_xx, s_yy)`.
fn centered_sums(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    check_pair(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Err(Error::ConstantSeries);
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 || !(sxx.is_finite() && syy.is_finite()) {
        return Err(Error::ConstantSeries);
    }
    Ok((sxy, sxx, syy))
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let (sxy, sxx, syy) = centered_sums(x, y)?;
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Gradient of `pearson(pred, target)` with respect to each sample of `pred`:
/// `d rho / d pred_i = yc_i / sqrt(sxx syy) - rho xc_i / sxx`.
pub fn pcc_gradient(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    let (sxy, sxx, syy) = centered_sums(pred, target)?;
    let (mx, my) = (mean(pred), mean(target));
    let norm = (sxx * syy).sqrt();
    let rho = sxy / norm;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (t - my) / norm - rho * (p - mx) / sxx)
        .collect())
}

/// `-rho(pred, att)`.
pub fn pcc_loss(pred: &[f64], att: &[f64]) -> Result<f64> {
    Ok(-pearson(pred, att)?)
}

/// `-rho(pred, att) + mean_k rho(pred, unatt_k)`.
pub fn contrastive_pcc_loss(pred: &[f64], att: &[f64], unatt: &[&[f64]]) -> Result<f64> {
    if unatt.is_empty() {
        return Err(Error::NoCompetitors);
    }
    let mut competing = 0.0;
    for u in unatt {
        competing += pearson(pred, u)?;
    }
    Ok(-pearson(pred, att)? + competing / unatt.len() as f64)
}

/// Training objective on a reconstructed envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Negative correlation with the attended envelope.
    Pcc,
    /// Negative attended correlation plus mean competitor correlation.
    Contrastive,
}

impl Loss {
    pub fn as_str(&self) -> &'static str {
        match self {
            Loss::Pcc => "pcc",
            Loss::Contrastive => "contrastive",
        }
    }

    pub fn value(&self, pred: &[f64], att: &[f64], unatt: &[&[f64]]) -> Result<f64> {
        match self {
            Loss::Pcc => pcc_loss(pred, att),
            Loss::Contrastive => contrastive_pcc_loss(pred, att, unatt),
        }
    }

    /// Loss value and its gradient with respect to `pred`.
    pub fn value_and_gradient(&self, pred: &[f64], att: &[f64], unatt: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
        let value = self.value(pred, att, unatt)?;
        let mut grad: Vec<f64> = pcc_gradient(pred, att)?.into_iter().map(|g| -g).collect();
        if *self == Loss::Contrastive {
            let scale = 1.0 / unatt.len() as f64;
            for u in unatt {
                for (g, gu) in grad.iter_mut().zip(pcc_gradient(pred, u)?) {
                    *g += scale * gu;
                }
            }
        }
        Ok((value, grad))
    }
}

impl std::fmt::Display for Loss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Loss {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pcc" => Ok(Loss::Pcc),
            "contrastive" => Ok(Loss::Contrastive),
            other => Err(format!("unknown loss {other:?} (expected pcc or contrastive)")),
        }
    }
}

/// Non-overlapping evaluation windows; a trailing partial window is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalWindowing {
    pub window_seconds: f64,
}

impl Default for EvalWindowing {
    fn default() -> Self {
        EvalWindowing { window_seconds: 10.0 }
    }
}

impl EvalWindowing {
    pub fn new(window_seconds: f64) -> Result<Self> {
        if !(window_seconds.is_finite() && window_seconds > 0.0) {
            return Err(Error::Config(format!(
                "window length must be positive, got {window_seconds}"
            )));
        }
        Ok(EvalWindowing { window_seconds })
    }

    pub fn samples(&self, sample_rate_hz: f64) -> Result<usize> {
        let n = (self.window_seconds * sample_rate_hz).round() as usize;
        if n < 2 {
            return Err(Error::Config(format!(
                "window of {} s at {sample_rate_hz} Hz is shorter than 2 samples",
                self.window_seconds
            )));
        }
        Ok(n)
    }
}

/// Window-level decoding outcome, mergeable across trials.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    /// Windows evaluated (constant windows excluded).
    pub windows: usize,
    /// Windows skipped because a series was constant inside them.
    pub skipped: usize,
    pub correct: usize,
    pub rho_a_sum: f64,
    pub rho_u_sum: f64,
    /// Number of (window, competitor) correlations in `rho_u_sum`.
    pub rho_u_count: usize,
}

impl WindowScore {
    pub fn merge(&mut self, other: &WindowScore) {
        self.windows += other.windows;
        self.skipped += other.skipped;
        self.correct += other.correct;
        self.rho_a_sum += other.rho_a_sum;
        self.rho_u_sum += other.rho_u_sum;
        self.rho_u_count += other.rho_u_count;
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.windows as f64
    }

    pub fn rho_a(&self) -> f64 {
        self.rho_a_sum / self.windows as f64
    }

    pub fn rho_u(&self) -> f64 {
        self.rho_u_sum / self.rho_u_count as f64
    }
}

/// Scores `pred` on non-overlapping windows of `window` samples.
///
/// A window counts as correct only when the attended correlation is strictly
/// larger than the correlation with every competitor, so the chance level is
/// one over the number of speakers.
pub fn windowed_accuracy(pred: &[f64], att: &[f64], unatt: &[&[f64]], window: usize) -> Result<WindowScore> {
    if unatt.is_empty() {
        return Err(Error::NoCompetitors);
    }
    for other in std::iter::once(&att).chain(unatt) {
        if other.len() != pred.len() {
            return Err(Error::LengthMismatch {
                left: pred.len(),
                right: other.len(),
            });
        }
    }
    if window < 2 || pred.len() < window {
        return Err(Error::NoFullWindow {
            samples: pred.len(),
            window,
        });
    }

    let mut score = WindowScore::default();
    for start in (0..=pred.len() - window).step_by(window) {
        let span = start..start + window;
        let p = &pred[span.clone()];
        let rho_a = match pearson(p, &att[span.clone()]) {
            Ok(r) => r,
            Err(Error::ConstantSeries) => {
                score.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut rho_u = Vec::with_capacity(unatt.len());
        for u in unatt {
            match pearson(p, &u[span.clone()]) {
                Ok(r) => rho_u.push(r),
                Err(Error::ConstantSeries) => break,
                Err(e) => return Err(e),
            }
        }
        if rho_u.len() < unatt.len() {
            score.skipped += 1;
            continue;
        }
        score.windows += 1;
        if rho_u.iter().all(|&r| rho_a > r) {
            score.correct += 1;
        }
        score.rho_a_sum += rho_a;
        score.rho_u_sum += rho_u.iter().sum::<f64>();
        score.rho_u_count += rho_u.len();
    }
    Ok(score)
}
