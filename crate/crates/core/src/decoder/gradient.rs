use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_consistent, LagWindow, LinearDecoder, TrialSignals};
use crate::error::{Error, Result};
use crate::metrics::Loss;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub cooldown: usize,
    /// Relative improvement over the best loss needed to reset patience.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.5,
            patience: 5,
            cooldown: 5,
            threshold: 1e-4,
        }
    }
}

/// First-order training settings. Defaults: AdamW with learning rate and
/// weight decay 5e-4, halve on a 5-epoch plateau with 5 epochs of cooldown,
/// stop after 10 epochs without improvement, at most 100 epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub plateau: PlateauConfig,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub loss: Loss,
    pub seed: u64,
    /// Standard deviation of the initial weights.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            plateau: PlateauConfig::default(),
            early_stop_patience: 10,
            max_epochs: 100,
            loss: Loss::Pcc,
            seed: 0,
            init_scale: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("epsilon", self.epsilon),
            ("init_scale", self.init_scale),
            ("plateau.factor", self.plateau.factor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.plateau.factor >= 1.0 {
            return Err(Error::Config("plateau.factor must be below 1".into()));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1)")));
            }
        }
        if self.plateau.patience == 0 || self.early_stop_patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config("patience values and max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` once the monitored loss has not
/// improved for `patience` consecutive epochs, then ignores `cooldown` epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    cfg: PlateauConfig,
    best: f64,
    bad_epochs: usize,
    cooldown_left: usize,
}

impl PlateauScheduler {
    pub fn new(cfg: PlateauConfig) -> Self {
        PlateauScheduler {
            cfg,
            best: f64::INFINITY,
            bad_epochs: 0,
            cooldown_left: 0,
        }
    }

    /// Records one epoch's loss; returns true when the rate should be reduced.
    pub fn step(&mut self, loss: f64) -> bool {
        if !self.best.is_finite() || loss < self.best - self.cfg.threshold * self.best.abs() {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
            self.bad_epochs = 0;
        }
        if self.bad_epochs >= self.cfg.patience {
            self.cooldown_left = self.cfg.cooldown;
            self.bad_epochs = 0;
            return true;
        }
        false
    }

    pub fn factor(&self) -> f64 {
        self.cfg.factor
    }
}

/// Signals a stop after `patience` consecutive epochs without a strictly lower loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Returns true when training should stop after this epoch.
    pub fn step(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        self.wait >= self.patience
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub learning_rate: f64,
    /// Whether the rate was reduced at the end of this epoch.
    pub lr_reduced: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the lowest validation loss (1-based).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingLog {
    pub fn lr_reductions(&self) -> impl Iterator<Item = usize> + '_ {
        self.epochs.iter().filter(|e| e.lr_reduced).map(|e| e.epoch)
    }
}

/// Runs the epoch schedule. `epoch_fn(epoch, learning_rate)` trains one epoch
/// and returns `(train_loss, val_loss)`; the validation loss drives the
/// plateau schedule and early stopping.
pub fn run_training<F>(cfg: &TrainConfig, mut epoch_fn: F) -> Result<TrainingLog>
where
    F: FnMut(usize, f64) -> Result<(f64, f64)>,
{
    cfg.validate()?;
    let mut scheduler = PlateauScheduler::new(cfg.plateau);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut lr = cfg.learning_rate;
    let mut log = TrainingLog::default();
    let mut best = f64::INFINITY;

    for epoch in 1..=cfg.max_epochs {
        let (train_loss, val_loss) = epoch_fn(epoch, lr)?;
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::Diverged(epoch));
        }
        if val_loss < best {
            best = val_loss;
            log.best_epoch = epoch;
        }
        let reduce = scheduler.step(val_loss);
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            learning_rate: lr,
            lr_reduced: reduce,
        });
        if reduce {
            lr *= scheduler.factor();
        }
        if stopper.step(val_loss) {
            log.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    Ok(log)
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamW {
    fn new(dim: usize) -> Self {
        AdamW {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        for i in 0..params.len() {
            params[i] -= lr * cfg.weight_decay * params[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Loss of one trial and its gradient with respect to the decoder weights.
fn trial_loss(
    decoder: &LinearDecoder,
    trial: &TrialSignals<'_>,
    loss: Loss,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let r = decoder.reconstruct(trial.eeg)?;
    let valid = r.valid.clone();
    let unatt: Vec<&[f64]> = trial.unattended.iter().map(|u| &u[valid.clone()]).collect();
    let pred = r.valid_samples();
    let att = &trial.attended[valid.clone()];
    if !want_grad {
        return Ok((loss.value(pred, att, &unatt)?, Vec::new()));
    }
    let (value, d_pred) = loss.value_and_gradient(pred, att, &unatt)?;
    let channels = decoder.channels();
    let mut grad = vec![0.0; decoder.weights().len()];
    for (li, lag) in decoder.lags().lags().enumerate() {
        for c in 0..channels {
            let x = trial.eeg.channel(c);
            let mut g = 0.0;
            for (k, t) in valid.clone().enumerate() {
                g += d_pred[k] * x[(t as i64 + lag) as usize];
            }
            grad[li * channels + c] = g;
        }
    }
    Ok((value, grad))
}

fn mean_loss(decoder: &LinearDecoder, trials: &[TrialSignals<'_>], loss: Loss) -> Result<f64> {
    let mut total = 0.0;
    for t in trials {
        total += trial_loss(decoder, t, loss, false)?.0;
    }
    Ok(total / trials.len() as f64)
}

/// Trains a linear decoder on a correlation loss with AdamW, one update per
/// training trial, and returns the weights of the best validation epoch.
///
/// Without validation trials the training loss is monitored instead.
pub fn fit_gradient_decoder(
    train: &[TrialSignals<'_>],
    val: &[TrialSignals<'_>],
    lags: LagWindow,
    cfg: &TrainConfig,
) -> Result<(LinearDecoder, TrainingLog)> {
    cfg.validate()?;
    let (channels, rate) = check_consistent(train)?;
    if cfg.loss == Loss::Contrastive && train.iter().any(|t| t.unattended.is_empty()) {
        return Err(Error::NoCompetitors);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, cfg.init_scale).expect("positive scale");
    let weights: Vec<f64> = (0..channels * lags.count()).map(|_| init.sample(&mut rng)).collect();
    let mut decoder = LinearDecoder::new(weights, 0.0, channels, lags, rate)?;
    let mut best = decoder.clone();
    let mut best_loss = f64::INFINITY;
    let mut opt = AdamW::new(decoder.weights().len());
    let mut order: Vec<usize> = (0..train.len()).collect();

    let log = run_training(cfg, |_, lr| {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for &i in &order {
            let (value, grad) = trial_loss(&decoder, &train[i], cfg.loss, true)?;
            train_loss += value;
            if grad.iter().any(|g| !g.is_finite()) {
                return Ok((f64::NAN, f64::NAN));
            }
            opt.update(decoder.weights_mut(), &grad, lr, cfg);
        }
        train_loss /= train.len() as f64;
        let val_loss = if val.is_empty() {
            mean_loss(&decoder, train, cfg.loss)?
        } else {
            mean_loss(&decoder, val, cfg.loss)?
        };
        if val_loss < best_loss {
            best_loss = val_loss;
            best = decoder.clone();
        }
        Ok((train_loss, val_loss))
    })?;
    Ok((best, log))
}
