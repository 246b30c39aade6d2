//! Accuracy-study observations on disk and the fitted gaze model report.
//!
//! CSV columns: `delta_phi_deg,error_deg,tracked,phase`. `error_deg` may be
//! empty on untracked rows; it is ignored there even when present.

use std::io::{Read, Write};
use std::path::Path;

use aimsight_core::gaze_models::{
    fit_linear_xy, fit_trackability, remove_outliers, summarize, CvSettings, GazeObservation, LinearErrorModel,
    LogisticFit, Phase, SummaryStats, ThresholdSelection, TrackabilityModel,
};
use anyhow::{bail, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    delta_phi_deg: f64,
    error_deg: Option<f64>,
    tracked: bool,
    phase: Phase,
}

pub fn read_csv_from(reader: impl Read) -> anyhow::Result<Vec<GazeObservation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in ["delta_phi_deg", "error_deg", "tracked", "phase"] {
        if !headers.iter().any(|h| h == col) {
            bail!("missing column `{col}`");
        }
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.with_context(|| format!("line {line}"))?;
        if !row.delta_phi_deg.is_finite() || row.delta_phi_deg < 0.0 {
            bail!("line {line}: delta_phi_deg must be a finite non-negative angle");
        }
        let obs = match (row.tracked, row.error_deg) {
            (true, Some(e)) if e.is_finite() => GazeObservation::tracked(row.delta_phi_deg, e, row.phase),
            (true, _) => bail!("line {line}: tracked row needs a finite error_deg"),
            (false, _) => GazeObservation::untracked(row.delta_phi_deg, row.phase),
        };
        out.push(obs);
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> anyhow::Result<Vec<GazeObservation>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_csv_from(file).with_context(|| format!("reading {}", path.display()))
}

pub fn write_csv(writer: impl Write, obs: &[GazeObservation]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for o in obs {
        w.serialize(Row { delta_phi_deg: o.gaze_shift_deg, error_deg: o.error_deg, tracked: o.is_tracked(), phase: o.phase })?;
    }
    w.flush()?;
    Ok(())
}

/// Generator for synthetic study data shaped like the published fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticStudy {
    pub trackability: TrackabilityModel,
    pub error_model: LinearErrorModel,
    /// Spread of the pointing error around the linear model, degrees.
    pub error_sd: f64,
    /// Gaze shifts are drawn uniformly from this range, degrees.
    pub shift_range: (f64, f64),
}

impl Default for SyntheticStudy {
    fn default() -> Self {
        Self {
            trackability: TrackabilityModel::PAPER,
            error_model: LinearErrorModel::PAPER,
            error_sd: 0.8,
            shift_range: (0.0, 60.0),
        }
    }
}

impl SyntheticStudy {
    /// `looking` samples with tracking drawn from the logistic model, plus
    /// `pointing` samples at zero shift that are always tracked.
    pub fn generate(&self, looking: usize, pointing: usize, seed: u64) -> Vec<GazeObservation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.error_sd).expect("error_sd must be finite and non-negative");
        let mut out = Vec::with_capacity(looking + pointing);
        for _ in 0..looking {
            let x = rng.random_range(self.shift_range.0..=self.shift_range.1);
            if rng.random_bool(self.trackability.predict_tracked_prob(x)) {
                let e = (self.error_model.predict_error(x) + noise.sample(&mut rng)).abs();
                out.push(GazeObservation::tracked(x, e, Phase::Looking));
            } else {
                out.push(GazeObservation::untracked(x, Phase::Looking));
            }
        }
        for _ in 0..pointing {
            let e = (self.error_model.predict_error(0.0) + noise.sample(&mut rng)).abs();
            out.push(GazeObservation::tracked(0.0, e, Phase::Pointing));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSummary {
    pub kept: usize,
    pub discarded: usize,
    pub discarded_fraction: f64,
}

/// Everything fitted from one observation set. Sections that could not be
/// fitted are `None` with the reason in `warnings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeReport {
    pub observations: usize,
    pub looking: usize,
    pub pointing: usize,
    pub looking_outliers: Option<OutlierSummary>,
    pub pointing_outliers: Option<OutlierSummary>,
    /// Error against gaze shift on tracked looking samples, outliers removed.
    pub error_model: Option<LinearErrorModel>,
    /// Mean pointing error with its 95 % interval, outliers removed.
    pub pointing_error: Option<SummaryStats>,
    pub logistic: Option<LogisticFit>,
    pub threshold: Option<ThresholdSelection>,
    pub trackability: Option<TrackabilityModel>,
    pub trackable_limit_deg: Option<f64>,
    pub cone_tip_angle_deg: Option<f64>,
    /// Error model evaluated at the trackable limit.
    pub error_at_limit_deg: Option<f64>,
    pub warnings: Vec<String>,
}

/// Keeps the pairs whose error survives the two-SD filter of their subset.
fn filter_pairs(pairs: Vec<(f64, f64)>, warnings: &mut Vec<String>, label: &str) -> (Vec<(f64, f64)>, Option<OutlierSummary>) {
    let errors: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    match remove_outliers(&errors) {
        Ok(split) => {
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            let limit = 2.0 * aimsight_core::stats::sample_sd(&errors);
            let kept: Vec<(f64, f64)> = pairs.into_iter().filter(|p| (p.1 - mean).abs() <= limit).collect();
            debug_assert_eq!(kept.len(), split.kept.len());
            let summary = OutlierSummary {
                kept: split.kept.len(),
                discarded: split.discarded.len(),
                discarded_fraction: split.discarded_fraction,
            };
            (kept, Some(summary))
        }
        Err(e) => {
            warnings.push(format!("{label} outliers: {e}"));
            (pairs, None)
        }
    }
}

pub fn fit_report(obs: &[GazeObservation], settings: &CvSettings) -> GazeReport {
    let mut warnings = Vec::new();
    let looking_pairs: Vec<(f64, f64)> =
        obs.iter().filter(|o| o.phase == Phase::Looking).filter_map(|o| o.error_deg.map(|e| (o.gaze_shift_deg, e))).collect();
    let pointing_pairs: Vec<(f64, f64)> =
        obs.iter().filter(|o| o.phase == Phase::Pointing).filter_map(|o| o.error_deg.map(|e| (o.gaze_shift_deg, e))).collect();

    let (looking_kept, looking_outliers) = filter_pairs(looking_pairs, &mut warnings, "looking");
    let error_model = fit_linear_xy(&looking_kept).map_err(|e| warnings.push(format!("error model: {e}"))).ok();

    let (pointing_kept, pointing_outliers) = filter_pairs(pointing_pairs, &mut warnings, "pointing");
    let errors: Vec<f64> = pointing_kept.iter().map(|p| p.1).collect();
    let pointing_error = summarize(&errors, 0.95).map_err(|e| warnings.push(format!("pointing error: {e}"))).ok();

    let (trackability, logistic, threshold) = match fit_trackability(obs, settings) {
        Ok((m, f, s)) => (Some(m), Some(f), Some(s)),
        Err(e) => {
            warnings.push(format!("trackability: {e}"));
            (None, None, None)
        }
    };
    if let Some(f) = &logistic {
        if !f.converged {
            warnings.push("logistic fit did not converge".into());
        }
    }
    let trackable_limit_deg = trackability.and_then(|m| {
        if !m.slope_plausible() {
            warnings.push("tracking probability does not fall with gaze shift".into());
        }
        m.trackable_limit().map_err(|e| warnings.push(format!("trackable limit: {e}"))).ok()
    });
    let error_at_limit_deg = error_model.zip(trackable_limit_deg).map(|(m, x)| m.predict_error(x));

    GazeReport {
        observations: obs.len(),
        looking: obs.iter().filter(|o| o.phase == Phase::Looking).count(),
        pointing: obs.iter().filter(|o| o.phase == Phase::Pointing).count(),
        looking_outliers,
        pointing_outliers,
        error_model,
        pointing_error,
        logistic,
        threshold,
        trackability,
        trackable_limit_deg,
        cone_tip_angle_deg: trackable_limit_deg.map(|x| 2.0 * x),
        error_at_limit_deg,
        warnings,
    }
}
