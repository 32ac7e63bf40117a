//! Per-trial maximum-likelihood calibration of car-following models.
//!
//! Recorded accelerations are modelled as the model prediction plus
//! zero-mean Gaussian noise with fixed standard deviation `sigma`. The
//! negative log-likelihood, constant dropped, is
//! `sum_i (a_i - f(x_i; theta))^2 / (2 sigma^2)`; each trial is fitted
//! separately, outlier fits are removed by their final cost, and the
//! survivors are summarized as independent Gaussians.

mod io;
pub mod simplex;
pub mod synth;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{presets, CarFollowInput, DriverParams, ModelKind, ParamDistribution, ScenarioClass};
use crate::error::{Error, Result};
use crate::seeding::{stream, Domain};

pub use io::{
    load_trials, save_trials, trials_from_reader, write_fit_report, write_mse_table, write_param_table, write_trials,
};
use simplex::{Bounds, SimplexConfig};

pub const MIN_TRIAL_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: CarFollowInput,
    pub a: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub scenario: ScenarioClass,
    pub samples: Vec<Sample>,
}

impl TrialRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::InvalidTrial {
            trial_id: self.trial_id.clone(),
            msg,
        };
        if self.samples.len() < MIN_TRIAL_SAMPLES {
            return Err(bad(format!(
                "{} samples, at least {MIN_TRIAL_SAMPLES} required",
                self.samples.len()
            )));
        }
        for (i, pair) in self.samples.windows(2).enumerate() {
            if !(pair[1].t > pair[0].t) {
                return Err(bad(format!(
                    "timestamps not strictly increasing at sample {} (t = {} after {})",
                    i + 1,
                    pair[1].t,
                    pair[0].t
                )));
            }
        }
        for (i, s) in self.samples.iter().enumerate() {
            let values = [s.t, s.x.v_back, s.x.dv, s.x.gap, s.a];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("non-finite value at sample {i}")));
            }
            if !(s.x.gap > 0.0) {
                return Err(bad(format!("non-positive gap {} at sample {i}", s.x.gap)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub trial_id: String,
    pub scenario: ScenarioClass,
    pub theta: DriverParams,
    pub cost: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub n_starts: usize,
    /// Noise standard deviation in the likelihood. Scales the cost only.
    pub sigma: f64,
    pub seed: u64,
    pub simplex: SimplexConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 16,
            sigma: 1.0,
            seed: 0,
            simplex: SimplexConfig::default(),
        }
    }
}

/// Search box used during fitting. Each box lies inside the model's
/// parameter invariants.
pub fn fit_bounds(model: ModelKind) -> Bounds {
    match model {
        // T, a_max, v0, delta, d0, b
        ModelKind::Idm => Bounds {
            lower: vec![0.0, 0.01, 0.5, 0.1, 0.0, 0.01],
            upper: vec![5.0, 10.0, 50.0, 20.0, 20.0, 200.0],
        },
        // V1, V2, C1, C2, lambda, kappa
        ModelKind::Vdm => Bounds {
            lower: vec![-30.0, -30.0, -10.0, -30.0, -5.0, 0.0],
            upper: vec![30.0, 30.0, 10.0, 30.0, 5.0, 5.0],
        },
    }
}

pub fn sum_squared_residuals(theta: &DriverParams, trial: &TrialRecord) -> Result<f64> {
    trial.samples.iter().try_fold(0.0, |acc, s| {
        let r = s.a - theta.accel(&s.x)?;
        Ok(acc + r * r)
    })
}

/// Negative log-likelihood without its theta-independent constant.
pub fn cost(theta: &DriverParams, trial: &TrialRecord, sigma: f64) -> Result<f64> {
    Ok(sum_squared_residuals(theta, trial)? / (2.0 * sigma * sigma))
}

pub fn trial_mse(theta: &DriverParams, trial: &TrialRecord) -> Result<f64> {
    if trial.samples.is_empty() {
        return Err(Error::NotEnoughData(format!("trial {} has no samples", trial.trial_id)));
    }
    Ok(sum_squared_residuals(theta, trial)? / trial.samples.len() as f64)
}

fn trial_stream_index(trial_id: &str) -> u64 {
    // FNV-1a keeps start points stable across runs and platforms.
    trial_id
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Multi-start local search for the maximum-likelihood parameters of one trial.
pub fn fit_mle(trial: &TrialRecord, model: ModelKind, cfg: &FitConfig) -> Result<FitResult> {
    trial.validate()?;
    let bounds = fit_bounds(model);
    let prior = presets::get(model, trial.scenario);
    let mut rng = stream(cfg.seed, Domain::FitStarts, trial_stream_index(&trial.trial_id));

    let objective = |x: &[f64]| {
        let theta = DriverParams::from_array(model, to_array(x));
        cost(&theta, trial, cfg.sigma).unwrap_or(f64::INFINITY)
    };

    let mut best: Option<simplex::SimplexResult> = None;
    let mut any_converged = false;
    for k in 0..cfg.n_starts.max(1) {
        let mut start = if k == 0 {
            prior.mean.to_vec()
        } else {
            perturbed_start(&prior, &bounds, &mut rng)
        };
        bounds.project(&mut start);
        let result = simplex::minimize(objective, &start, &bounds, &cfg.simplex);
        any_converged |= result.converged;
        if best.as_ref().is_none_or(|b| result.value < b.value) {
            best = Some(result);
        }
    }

    let best = best.expect("at least one start");
    let theta = DriverParams::from_array(model, to_array(&best.x));
    let fit = FitResult {
        trial_id: trial.trial_id.clone(),
        scenario: trial.scenario,
        theta,
        cost: best.value,
        mse: trial_mse(&theta, trial)?,
    };
    if !any_converged {
        return Err(Error::FitDidNotConverge {
            trial_id: trial.trial_id.clone(),
            best_cost: fit.cost,
            best: Box::new(fit),
        });
    }
    Ok(fit)
}

fn perturbed_start<R: Rng>(prior: &ParamDistribution, bounds: &Bounds, rng: &mut R) -> Vec<f64> {
    // Draw from the prior spread; fall back to a uniform point in the box if
    // the prior cannot be sampled.
    match prior.sample(rng) {
        Ok(p) => p.to_array().to_vec(),
        Err(_) => (0..6)
            .map(|i| rng.random_range(bounds.lower[i]..=bounds.upper[i]))
            .collect(),
    }
}

fn to_array(x: &[f64]) -> [f64; 6] {
    x.try_into().expect("six parameters")
}

/// Quantile by linear interpolation between order statistics at position
/// `q * (n - 1)`.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Outlier limit `Q3 + 1.5 * IQR` over the given costs.
pub fn outlier_limit(costs: &[f64]) -> f64 {
    let mut sorted = costs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_linear(&sorted, 0.25);
    let q3 = quantile_linear(&sorted, 0.75);
    q3 + 1.5 * (q3 - q1)
}

/// Indices of costs at or below the outlier limit, in input order.
pub fn filter_outliers(costs: &[f64]) -> Vec<usize> {
    if costs.len() < 4 {
        log::warn!("only {} fits; outlier filtering needs at least 4, keeping all", costs.len());
        return (0..costs.len()).collect();
    }
    let limit = outlier_limit(costs);
    (0..costs.len()).filter(|&i| costs[i] <= limit).collect()
}

/// Componentwise sample mean and unbiased variance of the fitted parameters.
pub fn fit_gaussian(fits: &[FitResult]) -> Result<ParamDistribution> {
    if fits.len() < 2 {
        return Err(Error::NotEnoughData(format!(
            "a Gaussian needs at least 2 fits, got {}",
            fits.len()
        )));
    }
    let model = fits[0].theta.kind();
    let scenario = fits[0].scenario;
    if fits.iter().any(|f| f.theta.kind() != model || f.scenario != scenario) {
        return Err(Error::InvalidParams("fits mix models or scenario classes".into()));
    }
    let vectors: Vec<[f64; 6]> = fits.iter().map(|f| f.theta.to_array()).collect();
    let (mean, variance) = mean_and_variance(&vectors);
    Ok(ParamDistribution {
        model,
        scenario,
        mean,
        variance,
    })
}

pub(crate) fn mean_and_variance(vectors: &[[f64; 6]]) -> ([f64; 6], [f64; 6]) {
    let n = vectors.len() as f64;
    let mut mean = [0.0; 6];
    for v in vectors {
        for i in 0..6 {
            mean[i] += v[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut variance = [0.0; 6];
    for v in vectors {
        for i in 0..6 {
            variance[i] += (v[i] - mean[i]).powi(2);
        }
    }
    variance.iter_mut().for_each(|s| *s /= n - 1.0);
    (mean, variance)
}

/// Mean and maximum per-trial MSE of one parameter vector over many trials.
pub fn evaluate_mse(theta: &DriverParams, trials: &[TrialRecord]) -> Result<(f64, f64)> {
    if trials.is_empty() {
        return Err(Error::NotEnoughData("no trials to evaluate".into()));
    }
    let mses = trials
        .iter()
        .map(|t| trial_mse(theta, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(mse_summary(&mses))
}

/// (average, max) of a list of per-trial MSEs.
pub fn mse_summary(mses: &[f64]) -> (f64, f64) {
    let avg = mses.iter().sum::<f64>() / mses.len() as f64;
    let max = mses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (avg, max)
}

/// Calibration of one model on one scenario class.
#[derive(Debug, Clone)]
pub struct ClassCalibration {
    pub scenario: ScenarioClass,
    pub fits: Vec<FitResult>,
    /// Indices into `fits` that survived outlier filtering.
    pub kept: Vec<usize>,
    pub outlier_limit: Option<f64>,
    pub distribution: Result<ParamDistribution, String>,
}

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub model: ModelKind,
    pub classes: Vec<ClassCalibration>,
    /// Trials whose fit failed, with the reason.
    pub failures: Vec<(String, String)>,
}

impl CalibrationReport {
    pub fn distributions(&self) -> Vec<ParamDistribution> {
        self.classes
            .iter()
            .filter_map(|c| c.distribution.as_ref().ok().cloned())
            .collect()
    }

    pub fn all_fits(&self) -> impl Iterator<Item = &FitResult> {
        self.classes.iter().flat_map(|c| c.fits.iter())
    }
}

/// Fits every trial, filters outliers and fits one Gaussian per class.
pub fn calibrate(trials: &[TrialRecord], model: ModelKind, cfg: &FitConfig) -> CalibrationReport {
    let results: Vec<Result<FitResult>> = trials.par_iter().map(|t| fit_mle(t, model, cfg)).collect();
    let mut failures = Vec::new();
    let mut fits = Vec::new();
    for (trial, r) in trials.iter().zip(results) {
        match r {
            Ok(f) => fits.push(f),
            Err(e) => failures.push((trial.trial_id.clone(), e.to_string())),
        }
    }
    let classes = [ScenarioClass::Successful, ScenarioClass::Unsuccessful]
        .into_iter()
        .filter_map(|scenario| {
            let class_fits: Vec<FitResult> =
                fits.iter().filter(|f| f.scenario == scenario).cloned().collect();
            if class_fits.is_empty() {
                return None;
            }
            let costs: Vec<f64> = class_fits.iter().map(|f| f.cost).collect();
            let kept = filter_outliers(&costs);
            let limit = (costs.len() >= 4).then(|| outlier_limit(&costs));
            let survivors: Vec<FitResult> = kept.iter().map(|&i| class_fits[i].clone()).collect();
            let distribution = fit_gaussian(&survivors).map_err(|e| e.to_string());
            Some(ClassCalibration {
                scenario,
                fits: class_fits,
                kept,
                outlier_limit: limit,
                distribution,
            })
        })
        .collect();
    CalibrationReport {
        model,
        classes,
        failures,
    }
}
