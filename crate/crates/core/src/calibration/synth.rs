//! Synthetic car-following trials with known parameters.
//!
//! The follower speed and the gap follow smooth sinusoids; the closing speed
//! is the negative time derivative of the gap, so (v_back, dv, gap) stays
//! kinematically consistent. Recorded accelerations are the model prediction
//! plus independent Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Sample, TrialRecord};
use crate::driver::{presets, CarFollowInput, DriverParams, ModelKind, ScenarioClass};
use crate::error::{Error, Result};
use crate::seeding::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub duration: f64,
    /// Length of the second recording used to score a fit.
    pub held_out_duration: f64,
    pub rate_hz: f64,
    pub noise_sd: f64,
    pub speed_range: (f64, f64),
    /// Range of the mean gap; the oscillation never drops below `min_gap`.
    pub gap_range: (f64, f64),
    pub min_gap: f64,
    pub max_closing_speed: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration: 5.0,
            held_out_duration: 20.0,
            rate_hz: 10.0,
            noise_sd: 0.05,
            speed_range: (4.0, 14.0),
            gap_range: (2.0, 12.0),
            min_gap: 0.5,
            max_closing_speed: 3.0,
        }
    }
}

/// Shape of the state trajectory of one synthetic trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub v_mean: f64,
    pub v_amp: f64,
    pub v_period: f64,
    pub v_phase: f64,
    pub gap_mean: f64,
    pub gap_amp: f64,
    pub gap_period: f64,
    pub gap_phase: f64,
}

impl Excitation {
    pub fn random<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Self {
        let v_mean = rng.random_range(cfg.speed_range.0..=cfg.speed_range.1);
        let v_amp = rng.random_range(0.5..=0.5 * v_mean.max(1.0)).min(v_mean);
        let gap_mean = rng.random_range(cfg.gap_range.0..=cfg.gap_range.1);
        // Whole gap cycles per recording, so a rephased recording visits the
        // same gaps. Speed enters the models linearly and gets an unrelated
        // frequency so it is not spanned by gap and closing speed.
        let gap_period = cfg.duration / rng.random_range(1..=2) as f64;
        let amp_cap = (gap_mean - cfg.min_gap)
            .min(cfg.max_closing_speed * gap_period / std::f64::consts::TAU)
            .max(0.0);
        let gap_amp = rng.random_range(0.5 * amp_cap..=amp_cap);
        Self {
            v_mean,
            v_amp,
            v_period: cfg.duration / rng.random_range(2.3..=3.7),
            v_phase: rng.random_range(0.0..std::f64::consts::TAU),
            gap_mean,
            gap_amp,
            gap_period,
            gap_phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    /// Same amplitudes and periods, fresh phases: a second recording of the
    /// same driver in similar traffic.
    pub fn rephased<R: Rng>(&self, rng: &mut R) -> Self {
        Self {
            v_phase: rng.random_range(0.0..std::f64::consts::TAU),
            gap_phase: rng.random_range(0.0..std::f64::consts::TAU),
            ..*self
        }
    }

    pub fn state_at(&self, t: f64) -> CarFollowInput {
        use std::f64::consts::TAU;
        let wv = TAU / self.v_period;
        let wg = TAU / self.gap_period;
        let v_back = (self.v_mean + self.v_amp * (wv * t + self.v_phase).sin()).max(0.0);
        let gap = self.gap_mean + self.gap_amp * (wg * t + self.gap_phase).sin();
        // gap' = v_front - v_back = -dv
        let dv = -self.gap_amp * wg * (wg * t + self.gap_phase).cos();
        CarFollowInput { v_back, dv, gap }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn generate_trial<R: Rng>(
    trial_id: impl Into<String>,
    scenario: ScenarioClass,
    theta: &DriverParams,
    excitation: &Excitation,
    duration: f64,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<TrialRecord> {
    let n = (duration * cfg.rate_hz).round() as usize;
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / cfg.rate_hz;
            let x = excitation.state_at(t);
            let a = theta.accel(&x)? + noise.sample(rng);
            Ok(Sample { x, a, t })
        })
        .collect::<Result<Vec<_>>>()?;
    let trial = TrialRecord {
        trial_id: trial_id.into(),
        scenario,
        samples,
    };
    trial.validate()?;
    Ok(trial)
}

/// A synthetic trial together with its ground truth and a held-out recording.
#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub truth: DriverParams,
    pub excitation: Excitation,
    pub trial: TrialRecord,
    pub held_out: TrialRecord,
}

/// Draws a driver from the preset distribution of (model, scenario) and
/// records it twice under the same traffic shape.
pub fn generate_case(
    seed: u64,
    index: u64,
    model: ModelKind,
    scenario: ScenarioClass,
    cfg: &SynthConfig,
) -> Result<SyntheticCase> {
    let mut rng = stream(seed, Domain::SyntheticTrial, index);
    let truth = presets::get(model, scenario).sample(&mut rng)?;
    let excitation = Excitation::random(cfg, &mut rng);
    let id = format!("{}-{index:04}", short_class(scenario));
    let trial = generate_trial(id.clone(), scenario, &truth, &excitation, cfg.duration, cfg, &mut rng)?;
    let held_excitation = excitation.rephased(&mut rng);
    let held_out = generate_trial(
        format!("{id}-holdout"),
        scenario,
        &truth,
        &held_excitation,
        cfg.held_out_duration,
        cfg,
        &mut rng,
    )?;
    Ok(SyntheticCase {
        truth,
        excitation,
        trial,
        held_out,
    })
}

fn short_class(scenario: ScenarioClass) -> &'static str {
    match scenario {
        ScenarioClass::Successful => "s",
        ScenarioClass::Unsuccessful => "u",
    }
}

/// A corpus of `n_successful + n_unsuccessful` trials generated by `model`
/// with drivers drawn from the matching preset distributions.
pub fn generate_corpus(
    seed: u64,
    model: ModelKind,
    n_successful: usize,
    n_unsuccessful: usize,
    cfg: &SynthConfig,
) -> Result<Vec<SyntheticCase>> {
    let classes = std::iter::repeat_n(ScenarioClass::Successful, n_successful)
        .chain(std::iter::repeat_n(ScenarioClass::Unsuccessful, n_unsuccessful));
    classes
        .enumerate()
        .map(|(i, class)| generate_case(seed, i as u64, model, class, cfg))
        .collect()
}
