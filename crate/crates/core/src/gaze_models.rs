//! Accuracy-study models: outlier screening, the linear error model
//! `ε(Δφ) = c1 + c2·Δφ`, the logistic trackability model
//! `P(tracked | Δφ) = σ(β0 + β1·Δφ)` with a cross-validated decision point,
//! and the trackable-cone limit derived from it.

use alloc::vec::Vec;

use libm::{exp, fabs, log, log1p, sqrt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Looking at the next target while the tool still points at the previous one.
    Looking,
    /// Looking at and pointing the tool tip at the same target.
    Pointing,
}

/// One accuracy-study measurement. `error_deg` is present exactly when the
/// gaze was tracked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeObservation {
    pub gaze_shift_deg: f64,
    pub error_deg: Option<f64>,
    pub phase: Phase,
}

impl GazeObservation {
    pub fn tracked(gaze_shift_deg: f64, error_deg: f64, phase: Phase) -> Self {
        Self { gaze_shift_deg, error_deg: Some(error_deg), phase }
    }

    pub fn untracked(gaze_shift_deg: f64, phase: Phase) -> Self {
        Self { gaze_shift_deg, error_deg: None, phase }
    }

    pub fn is_tracked(&self) -> bool {
        self.error_deg.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSplit {
    pub kept: Vec<f64>,
    pub discarded: Vec<f64>,
    pub discarded_fraction: f64,
}

/// Single pass: drops values further than two sample standard deviations
/// from the sample mean.
pub fn remove_outliers(samples: &[f64]) -> Result<OutlierSplit> {
    if samples.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: samples.len() });
    }
    let mean = stats::mean(samples);
    let limit = 2.0 * stats::sample_sd(samples);
    let (kept, discarded): (Vec<f64>, Vec<f64>) = samples.iter().partition(|x| fabs(**x - mean) <= limit);
    let discarded_fraction = discarded.len() as f64 / samples.len() as f64;
    Ok(OutlierSplit { kept, discarded, discarded_fraction })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFitStats {
    /// Two-sided t-test p-value of the slope; `None` without residual degrees of freedom.
    pub slope_p_value: Option<f64>,
    pub r_squared: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearErrorModel {
    /// Intercept, degrees.
    pub c1: f64,
    /// Slope, degrees of error per degree of gaze shift.
    pub c2: f64,
    pub fit_stats: Option<LinearFitStats>,
}

impl LinearErrorModel {
    pub const PAPER: Self = Self { c1: 1.243, c2: 0.032, fit_stats: None };

    pub fn new(c1: f64, c2: f64) -> Self {
        Self { c1, c2, fit_stats: None }
    }

    pub fn predict_error(&self, gaze_shift_deg: f64) -> f64 {
        self.c1 + self.c2 * gaze_shift_deg
    }
}

pub fn predict_error(model: &LinearErrorModel, gaze_shift_deg: f64) -> f64 {
    model.predict_error(gaze_shift_deg)
}

/// Closed-form ordinary least squares on `(x, y)` pairs.
pub fn fit_linear_xy(points: &[(f64, f64)]) -> Result<LinearErrorModel> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateDesign);
    }
    let c2 = sxy / sxx;
    let c1 = my - c2 * mx;
    let sse: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - (c1 + c2 * p.0);
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - sse / syy).max(0.0) } else { 0.0 };
    let slope_p_value = (n > 2).then(|| {
        let df = (n - 2) as f64;
        let se = sqrt(sse / df / sxx);
        if se > 0.0 {
            stats::student_t_two_sided_p(c2 / se, df)
        } else if c2 == 0.0 {
            1.0
        } else {
            0.0
        }
    });
    Ok(LinearErrorModel { c1, c2, fit_stats: Some(LinearFitStats { slope_p_value, r_squared, n }) })
}

/// Fits the error model on tracked observations of the given phase.
pub fn fit_linear(obs: &[GazeObservation], phase: Phase) -> Result<LinearErrorModel> {
    let points: Vec<(f64, f64)> = obs
        .iter()
        .filter(|o| o.phase == phase)
        .filter_map(|o| o.error_deg.map(|e| (o.gaze_shift_deg, e)))
        .collect();
    fit_linear_xy(&points)
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    log(p / (1.0 - p))
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + log1p(exp(-z))
    } else {
        log1p(exp(z))
    }
}

pub const LOGISTIC_TOLERANCE: f64 = 1e-10;
pub const LOGISTIC_MAX_ITER: usize = 100;
/// Coefficient magnitude beyond which the fit is declared separated.
pub const SEPARATION_LIMIT: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub beta0: f64,
    pub beta1: f64,
    pub std_error0: f64,
    pub std_error1: f64,
    /// Two-sided Wald p-values.
    pub p_value0: f64,
    pub p_value1: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after each accepted iteration, starting from the initial guess.
    pub trace: Vec<f64>,
}

fn log_likelihood(data: &[(f64, bool)], b0: f64, b1: f64) -> f64 {
    data.iter()
        .map(|&(x, y)| {
            let z = b0 + b1 * x;
            if y {
                -softplus(-z)
            } else {
                -softplus(z)
            }
        })
        .sum()
}

/// True when a single threshold on `x` perfectly separates the classes.
fn separable(data: &[(f64, bool)]) -> bool {
    let (mut pos_min, mut pos_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut neg_min, mut neg_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in data {
        if y {
            pos_min = pos_min.min(x);
            pos_max = pos_max.max(x);
        } else {
            neg_min = neg_min.min(x);
            neg_max = neg_max.max(x);
        }
    }
    pos_max < neg_min || neg_max < pos_min
}

/// Maximum-likelihood logistic regression of `y` on `x` by Newton/IRLS with
/// step halving, so the log-likelihood never decreases between iterations.
pub fn fit_logistic_xy(data: &[(f64, bool)]) -> Result<LogisticFit> {
    let positives = data.iter().filter(|d| d.1).count();
    if positives == 0 {
        return Err(Error::MissingClass { present: "untracked" });
    }
    if positives == data.len() {
        return Err(Error::MissingClass { present: "tracked" });
    }
    if separable(data) {
        return Err(Error::Separation);
    }

    let frac = positives as f64 / data.len() as f64;
    let (mut b0, mut b1) = (logit(frac), 0.0);
    let mut ll = log_likelihood(data, b0, b1);
    let mut trace = alloc::vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < LOGISTIC_MAX_ITER {
        iterations += 1;
        // Gradient and Fisher information of the 2-parameter model.
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, y) in data {
            let p = sigmoid(b0 + b1 * x);
            let r = if y { 1.0 } else { 0.0 } - p;
            let w = p * (1.0 - p);
            g0 += r;
            g1 += r * x;
            h00 += w;
            h01 += w * x;
            h11 += w * x * x;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 0.0) {
            return Err(Error::Separation);
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;

        let mut step = 1.0;
        let (mut n0, mut n1, mut nll);
        loop {
            n0 = b0 + step * d0;
            n1 = b1 + step * d1;
            nll = log_likelihood(data, n0, n1);
            if nll >= ll || step < 1e-8 {
                break;
            }
            step *= 0.5;
        }
        if nll < ll {
            // No ascent direction left at machine precision.
            converged = true;
            break;
        }
        b0 = n0;
        b1 = n1;
        if fabs(b0) > SEPARATION_LIMIT || fabs(b1) > SEPARATION_LIMIT {
            return Err(Error::Separation);
        }
        let change = nll - ll;
        ll = nll;
        trace.push(ll);
        if change < LOGISTIC_TOLERANCE {
            converged = true;
            break;
        }
    }

    // Standard errors from the inverse information at the estimate.
    let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
    for &(x, _) in data {
        let p = sigmoid(b0 + b1 * x);
        let w = p * (1.0 - p);
        h00 += w;
        h01 += w * x;
        h11 += w * x * x;
    }
    let det = h00 * h11 - h01 * h01;
    let std_error0 = sqrt(h11 / det);
    let std_error1 = sqrt(h00 / det);
    Ok(LogisticFit {
        beta0: b0,
        beta1: b1,
        std_error0,
        std_error1,
        p_value0: stats::normal_two_sided_p(b0 / std_error0),
        p_value1: stats::normal_two_sided_p(b1 / std_error1),
        log_likelihood: ll,
        iterations,
        converged,
        trace,
    })
}

fn tracked_pairs(obs: &[GazeObservation], phase: Phase) -> Vec<(f64, bool)> {
    obs.iter().filter(|o| o.phase == phase).map(|o| (o.gaze_shift_deg, o.is_tracked())).collect()
}

/// Logistic model of tracking success over gaze shift for one phase.
pub fn fit_logistic(obs: &[GazeObservation], phase: Phase) -> Result<LogisticFit> {
    fit_logistic_xy(&tracked_pairs(obs, phase))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackabilityModel {
    pub beta0: f64,
    pub beta1: f64,
    pub decision_point: f64,
    /// Held-out accuracy averaged over folds at the decision point.
    pub cv_accuracy: f64,
}

impl TrackabilityModel {
    pub const PAPER: Self = Self { beta0: 5.407, beta1: -0.177, decision_point: 0.65, cv_accuracy: 0.856 };

    pub fn predict_tracked_prob(&self, gaze_shift_deg: f64) -> f64 {
        sigmoid(self.beta0 + self.beta1 * gaze_shift_deg)
    }

    /// Largest gaze shift with tracking probability at or above the decision point.
    pub fn trackable_limit(&self) -> Result<f64> {
        if !(self.beta1 < 0.0) {
            return Err(Error::InvalidModel("slope must be negative for a finite trackable range"));
        }
        if !(self.decision_point > 0.0 && self.decision_point < 1.0) {
            return Err(Error::InvalidModel("decision point must lie in (0, 1)"));
        }
        let limit = (logit(self.decision_point) - self.beta0) / self.beta1;
        if limit < 0.0 {
            return Err(Error::InvalidModel("tracking probability is below the decision point at zero shift"));
        }
        Ok(limit)
    }

    /// Full apex angle of the trackable cone around the tool tip.
    pub fn cone_tip_angle(&self) -> Result<f64> {
        Ok(2.0 * self.trackable_limit()?)
    }

    /// `true` when the slope has the expected sign (tracking degrades with shift).
    pub fn slope_plausible(&self) -> bool {
        self.beta1 < 0.0
    }
}

pub fn predict_tracked_prob(model: &TrackabilityModel, gaze_shift_deg: f64) -> f64 {
    model.predict_tracked_prob(gaze_shift_deg)
}

pub fn trackable_limit(model: &TrackabilityModel) -> Result<f64> {
    model.trackable_limit()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSettings {
    pub folds: usize,
    pub range: (f64, f64),
    pub step: f64,
    pub seed: u64,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self { folds: 5, range: (0.25, 0.75), step: 0.01, seed: 0 }
    }
}

impl CvSettings {
    pub fn thresholds(&self) -> Vec<f64> {
        let count = ((self.range.1 - self.range.0) / self.step + 1e-9) as usize;
        (0..=count).map(|i| self.range.0 + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSelection {
    pub decision_point: f64,
    /// Mean held-out accuracy over folds at the chosen threshold.
    pub cv_accuracy: f64,
    /// Accuracy of the model refit on all data, evaluated on all data.
    pub refit_accuracy: f64,
    /// Mean held-out accuracy for every threshold of the grid.
    pub curve: Vec<(f64, f64)>,
}

/// A per-fold probability model. Training folds containing one class or
/// perfectly separated classes have no finite MLE; they fall back to the
/// constant or step predictor that the diverging fit approaches.
#[derive(Debug, Clone, Copy)]
enum FoldModel {
    Logistic { beta0: f64, beta1: f64 },
    Constant(f64),
    Step { boundary: f64, positive_below: bool },
}

impl FoldModel {
    fn train(data: &[(f64, bool)]) -> Self {
        match fit_logistic_xy(data) {
            Ok(fit) => FoldModel::Logistic { beta0: fit.beta0, beta1: fit.beta1 },
            Err(Error::MissingClass { .. }) => {
                FoldModel::Constant(if data.iter().any(|d| d.1) { 1.0 } else { 0.0 })
            }
            Err(_) => {
                let pos_max = data.iter().filter(|d| d.1).map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
                let neg_min = data.iter().filter(|d| !d.1).map(|d| d.0).fold(f64::INFINITY, f64::min);
                let positive_below = pos_max < neg_min;
                let boundary = if positive_below {
                    0.5 * (pos_max + neg_min)
                } else {
                    let neg_max = data.iter().filter(|d| !d.1).map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
                    let pos_min = data.iter().filter(|d| d.1).map(|d| d.0).fold(f64::INFINITY, f64::min);
                    0.5 * (neg_max + pos_min)
                };
                FoldModel::Step { boundary, positive_below }
            }
        }
    }

    fn prob(&self, x: f64) -> f64 {
        match *self {
            FoldModel::Logistic { beta0, beta1 } => sigmoid(beta0 + beta1 * x),
            FoldModel::Constant(p) => p,
            FoldModel::Step { boundary, positive_below } => {
                if (x < boundary) == positive_below {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn accuracy_at(model: &FoldModel, data: &[(f64, bool)], threshold: f64) -> f64 {
    let correct = data.iter().filter(|&&(x, y)| (model.prob(x) > threshold) == y).count();
    correct as f64 / data.len() as f64
}

/// k-fold cross-validated choice of the classification threshold. Folds come
/// from a seeded shuffle; ties go to the larger threshold.
pub fn cross_validate_threshold_xy(data: &[(f64, bool)], settings: &CvSettings) -> Result<ThresholdSelection> {
    let k = settings.folds;
    if k < 2 || data.len() < k {
        return Err(Error::InsufficientData { needed: k.max(2), got: data.len() });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(settings.seed));

    let thresholds = settings.thresholds();
    let mut sums = alloc::vec![0.0; thresholds.len()];
    for fold in 0..k {
        let mut train = Vec::with_capacity(data.len());
        let mut test = Vec::with_capacity(data.len() / k + 1);
        for (pos, &idx) in order.iter().enumerate() {
            if pos % k == fold {
                test.push(data[idx]);
            } else {
                train.push(data[idx]);
            }
        }
        let model = FoldModel::train(&train);
        for (sum, &t) in sums.iter_mut().zip(&thresholds) {
            *sum += accuracy_at(&model, &test, t);
        }
    }
    let curve: Vec<(f64, f64)> = thresholds.iter().zip(&sums).map(|(&t, &s)| (t, s / k as f64)).collect();
    let mut best = curve[0];
    for &(t, acc) in &curve[1..] {
        if acc >= best.1 {
            best = (t, acc);
        }
    }
    let full = FoldModel::train(data);
    Ok(ThresholdSelection {
        decision_point: best.0,
        cv_accuracy: best.1,
        refit_accuracy: accuracy_at(&full, data, best.0),
        curve,
    })
}

pub fn cross_validate_threshold(
    obs: &[GazeObservation],
    phase: Phase,
    settings: &CvSettings,
) -> Result<ThresholdSelection> {
    cross_validate_threshold_xy(&tracked_pairs(obs, phase), settings)
}

/// Fits the logistic model on all data and attaches the cross-validated decision point.
pub fn fit_trackability(obs: &[GazeObservation], settings: &CvSettings) -> Result<(TrackabilityModel, LogisticFit, ThresholdSelection)> {
    let fit = fit_logistic(obs, Phase::Looking)?;
    let selection = cross_validate_threshold(obs, Phase::Looking, settings)?;
    let model = TrackabilityModel {
        beta0: fit.beta0,
        beta1: fit.beta1,
        decision_point: selection.decision_point,
        cv_accuracy: selection.cv_accuracy,
    };
    Ok((model, fit, selection))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
    pub n: usize,
}

/// Mean with a Student-t confidence interval.
pub fn summarize(values: &[f64], confidence: f64) -> Result<SummaryStats> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mean = stats::mean(values);
    let se = stats::sample_sd(values) / sqrt(n as f64);
    let q = stats::student_t_quantile(0.5 + 0.5 * confidence, (n - 1) as f64);
    let half = q * se;
    Ok(SummaryStats { mean, ci_low: mean - half, ci_high: mean + half, confidence, n })
}

/// Mean angular error and confidence interval of tracked pointing samples.
pub fn summarize_pointing_error(obs: &[GazeObservation], confidence: f64) -> Result<SummaryStats> {
    let errors: Vec<f64> =
        obs.iter().filter(|o| o.phase == Phase::Pointing).filter_map(|o| o.error_deg).collect();
    summarize(&errors, confidence)
}
