//! Longitudinal car-following models (IDM and VDM), their parameter vectors,
//! and Gaussian parameter distributions fitted per merge outcome.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Distance used for a car with nobody ahead of it.
pub const FREE_ROAD_GAP: f64 = 1.0e6;

/// State seen by a following car.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarFollowInput {
    pub v_back: f64,
    /// Closing speed `v_back - v_front`.
    pub dv: f64,
    pub gap: f64,
}

impl CarFollowInput {
    pub fn free_road(v_back: f64) -> Self {
        Self {
            v_back,
            dv: 0.0,
            gap: FREE_ROAD_GAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Idm,
    Vdm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Idm => "idm",
            ModelKind::Vdm => "vdm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "idm" => Ok(ModelKind::Idm),
            "vdm" => Ok(ModelKind::Vdm),
            other => Err(Error::Config(format!("unknown model `{other}` (expected idm or vdm)"))),
        }
    }
}

/// Which class of recorded merges a parameter set was learned from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioClass {
    /// The merging car got in between: the rear car yielded.
    Successful,
    /// The merging car fell in behind the rear car.
    Unsuccessful,
}

impl ScenarioClass {
    pub fn from_yield(yields: bool) -> Self {
        if yields {
            ScenarioClass::Successful
        } else {
            ScenarioClass::Unsuccessful
        }
    }
}

impl fmt::Display for ScenarioClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioClass::Successful => "successful",
            ScenarioClass::Unsuccessful => "unsuccessful",
        })
    }
}

impl FromStr for ScenarioClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "successful" => Ok(ScenarioClass::Successful),
            "unsuccessful" => Ok(ScenarioClass::Unsuccessful),
            other => Err(Error::Config(format!(
                "unknown scenario `{other}` (expected successful or unsuccessful)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Minimum following time (s).
    pub t_headway: f64,
    pub a_max: f64,
    /// Desired speed (m/s).
    pub v0: f64,
    pub delta: f64,
    /// Minimum following distance (m).
    pub d0: f64,
    /// Comfortable braking deceleration (m/s²).
    pub b: f64,
}

impl IdmParams {
    /// Literature defaults used by the fixed-parameter baseline predictor.
    pub const BASELINE: IdmParams = IdmParams {
        t_headway: 1.5,
        a_max: 1.4,
        v0: 16.0,
        delta: 4.0,
        d0: 2.0,
        b: 2.0,
    };

    pub fn to_array(&self) -> [f64; 6] {
        [self.t_headway, self.a_max, self.v0, self.delta, self.d0, self.b]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            t_headway: v[0],
            a_max: v[1],
            v0: v[2],
            delta: v[3],
            d0: v[4],
            b: v[5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_vector(ModelKind::Idm, &self.to_array())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VdmParams {
    pub v1: f64,
    pub v2: f64,
    pub c1: f64,
    pub c2: f64,
    pub lambda: f64,
    /// Sensitivity (1/s).
    pub kappa: f64,
}

impl VdmParams {
    pub fn to_array(&self) -> [f64; 6] {
        [self.v1, self.v2, self.c1, self.c2, self.lambda, self.kappa]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            v1: v[0],
            v2: v[1],
            c1: v[2],
            c2: v[3],
            lambda: v[4],
            kappa: v[5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_vector(ModelKind::Vdm, &self.to_array())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum DriverParams {
    Idm(IdmParams),
    Vdm(VdmParams),
}

impl DriverParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            DriverParams::Idm(_) => ModelKind::Idm,
            DriverParams::Vdm(_) => ModelKind::Vdm,
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        match self {
            DriverParams::Idm(p) => p.to_array(),
            DriverParams::Vdm(p) => p.to_array(),
        }
    }

    pub fn from_array(kind: ModelKind, v: [f64; 6]) -> Self {
        match kind {
            ModelKind::Idm => DriverParams::Idm(IdmParams::from_array(v)),
            ModelKind::Vdm => DriverParams::Vdm(VdmParams::from_array(v)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_vector(self.kind(), &self.to_array())
    }

    pub fn accel(&self, x: &CarFollowInput) -> Result<f64> {
        match self {
            DriverParams::Idm(p) => idm_accel(x, p),
            DriverParams::Vdm(p) => Ok(vdm_accel(x, p)),
        }
    }
}

pub fn param_names(kind: ModelKind) -> [&'static str; 6] {
    match kind {
        ModelKind::Idm => ["T", "a_max", "v0", "delta", "d0", "b"],
        ModelKind::Vdm => ["V1", "V2", "C1", "C2", "lambda", "kappa"],
    }
}

/// Smallest value accepted for a strictly positive parameter when clamping.
const POSITIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
enum Bound {
    Free,
    NonNegative,
    Positive,
}

fn bounds(kind: ModelKind) -> [Bound; 6] {
    use Bound::*;
    match kind {
        // T, a_max, v0, delta, d0, b
        ModelKind::Idm => [NonNegative, Positive, Positive, Positive, NonNegative, Positive],
        // V1, V2, C1, C2, lambda, kappa
        ModelKind::Vdm => [Free, Free, Free, Free, Free, NonNegative],
    }
}

fn component_ok(bound: Bound, value: f64) -> bool {
    value.is_finite()
        && match bound {
            Bound::Free => true,
            Bound::NonNegative => value >= 0.0,
            Bound::Positive => value > 0.0,
        }
}

fn clamp_component(bound: Bound, value: f64) -> f64 {
    match bound {
        Bound::Free => value,
        Bound::NonNegative => value.max(0.0),
        Bound::Positive => value.max(POSITIVE_FLOOR),
    }
}

fn validate_vector(kind: ModelKind, v: &[f64; 6]) -> Result<()> {
    let names = param_names(kind);
    for ((&value, bound), name) in v.iter().zip(bounds(kind)).zip(names) {
        if !component_ok(bound, value) {
            return Err(Error::InvalidParams(format!("{kind} {name} = {value} violates {bound:?}")));
        }
    }
    Ok(())
}

/// Desired dynamic gap. Negative values are possible for strongly opening
/// gaps and are passed through unchanged.
pub fn idm_desired_gap(v_back: f64, dv: f64, p: &IdmParams) -> f64 {
    p.d0 + v_back * p.t_headway + v_back * dv / (2.0 * (p.a_max * p.b).sqrt())
}

pub fn idm_accel(x: &CarFollowInput, p: &IdmParams) -> Result<f64> {
    if !(x.gap > 0.0) {
        return Err(Error::NonPositiveGap { gap: x.gap });
    }
    let desired = idm_desired_gap(x.v_back, x.dv, p);
    let free = (x.v_back / p.v0).powf(p.delta);
    let interaction = (desired / x.gap).powi(2);
    Ok(p.a_max * (1.0 - free - interaction))
}

pub fn vdm_optimal_velocity(gap: f64, p: &VdmParams) -> f64 {
    p.v1 + p.v2 * (p.c1 * gap - p.c2).tanh()
}

/// `dv` keeps the `v_back - v_front` convention of [`CarFollowInput`].
pub fn vdm_accel(x: &CarFollowInput, p: &VdmParams) -> f64 {
    p.kappa * (vdm_optimal_velocity(x.gap, p) - x.v_back + p.lambda * x.dv)
}

/// Physical acceleration limits applied to model outputs in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelEnvelope {
    pub min: f64,
    pub max: f64,
}

impl Default for AccelEnvelope {
    fn default() -> Self {
        Self { min: -8.0, max: 4.0 }
    }
}

impl AccelEnvelope {
    pub fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.min, self.max)
    }
}

/// Independent Gaussians over the six parameters of one model, learned from
/// one class of merges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDistribution {
    pub model: ModelKind,
    pub scenario: ScenarioClass,
    pub mean: [f64; 6],
    pub variance: [f64; 6],
}

/// Retries per component before falling back to clamping.
pub const SAMPLE_RETRIES: usize = 100;

impl ParamDistribution {
    pub fn validate(&self) -> Result<()> {
        for i in 0..6 {
            let (m, var) = (self.mean[i], self.variance[i]);
            if !m.is_finite() || !var.is_finite() || var < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "{} {} component {}: mean {m}, variance {var}",
                    self.model,
                    self.scenario,
                    param_names(self.model)[i]
                )));
            }
        }
        Ok(())
    }

    pub fn mean_params(&self) -> DriverParams {
        DriverParams::from_array(self.model, self.mean)
    }

    pub fn name(&self) -> String {
        format!("{}_{}", self.model, self.scenario)
    }

    pub fn std_dev(&self) -> [f64; 6] {
        self.variance.map(f64::sqrt)
    }

    /// Draws one parameter vector. Components outside their valid range are
    /// redrawn; after [`SAMPLE_RETRIES`] misses the last draw is clamped.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DriverParams> {
        self.validate()?;
        let bounds = bounds(self.model);
        let mut out = [0.0; 6];
        for i in 0..6 {
            let normal = Normal::new(self.mean[i], self.variance[i].sqrt())
                .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
            let mut value = normal.sample(rng);
            let mut tries = 1;
            while !component_ok(bounds[i], value) && tries < SAMPLE_RETRIES {
                value = normal.sample(rng);
                tries += 1;
            }
            out[i] = clamp_component(bounds[i], value);
        }
        let params = DriverParams::from_array(self.model, out);
        params.validate()?;
        Ok(params)
    }
}

pub fn sample_params<R: Rng + ?Sized>(dist: &ParamDistribution, rng: &mut R) -> Result<DriverParams> {
    dist.sample(rng)
}

/// Reference distributions learned from highway ramp-merge recordings.
pub mod presets {
    use super::*;

    pub fn idm_successful() -> ParamDistribution {
        ParamDistribution {
            model: ModelKind::Idm,
            scenario: ScenarioClass::Successful,
            mean: [0.522, 0.837, 13.257, 5.696, 4.543, 0.805],
            variance: [0.710, 0.691, 13.484, 7.990, 3.776, 1.476],
        }
    }

    pub fn vdm_successful() -> ParamDistribution {
        ParamDistribution {
            model: ModelKind::Vdm,
            scenario: ScenarioClass::Successful,
            mean: [4.760, 5.158, 1.748, 3.386, 1.455, 0.476],
            variance: [3.293, 3.390, 1.945, 3.389, 2.136, 0.950],
        }
    }

    pub fn idm_unsuccessful() -> ParamDistribution {
        ParamDistribution {
            model: ModelKind::Idm,
            scenario: ScenarioClass::Unsuccessful,
            mean: [0.958, 1.421, 16.885, 3.426, 1.281, 61.907],
            variance: [1.995, 0.769, 15.430, 2.191, 2.484, 483.36],
        }
    }

    pub fn vdm_unsuccessful() -> ParamDistribution {
        ParamDistribution {
            model: ModelKind::Vdm,
            scenario: ScenarioClass::Unsuccessful,
            mean: [3.747, 6.133, 1.641, 7.118, 0.530, 0.332],
            variance: [3.507, 3.433, 2.289, 3.528, 0.514, 0.388],
        }
    }

    pub fn get(model: ModelKind, scenario: ScenarioClass) -> ParamDistribution {
        match (model, scenario) {
            (ModelKind::Idm, ScenarioClass::Successful) => idm_successful(),
            (ModelKind::Idm, ScenarioClass::Unsuccessful) => idm_unsuccessful(),
            (ModelKind::Vdm, ScenarioClass::Successful) => vdm_successful(),
            (ModelKind::Vdm, ScenarioClass::Unsuccessful) => vdm_unsuccessful(),
        }
    }

    pub fn by_name(name: &str) -> Option<ParamDistribution> {
        all().into_iter().find(|d| d.name() == name)
    }

    pub fn all() -> Vec<ParamDistribution> {
        vec![idm_successful(), idm_unsuccessful(), vdm_successful(), vdm_unsuccessful()]
    }
}

/// Mean squared error reference values reported for the recorded dataset
/// (average and maximum over trials). Not reproducible without that data.
pub mod reference_mse {
    pub const VDM_AVERAGE: f64 = 0.046;
    pub const VDM_MAX: f64 = 0.139;
    pub const IDM_AVERAGE: f64 = 0.072;
    pub const IDM_MAX: f64 = 0.451;
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct DistributionFile {
    #[serde(default)]
    distribution: Vec<ParamDistribution>,
}

/// Renders distributions in the plain-text preset format:
///
/// ```text
/// [[distribution]]
/// model = "vdm"
/// scenario = "successful"
/// mean = [4.76, 5.158, 1.748, 3.386, 1.455, 0.476]
/// variance = [3.293, 3.39, 1.945, 3.389, 2.136, 0.95]
/// ```
pub fn distributions_to_string(dists: &[ParamDistribution]) -> String {
    let file = DistributionFile {
        distribution: dists.to_vec(),
    };
    let body = toml::to_string(&file).expect("distributions serialize");
    format!("# car-following parameter distributions (independent Gaussians; mean and variance per component)\n{body}")
}

pub fn distributions_from_str(text: &str) -> Result<Vec<ParamDistribution>> {
    let file: DistributionFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("distribution file: {e}")))?;
    for d in &file.distribution {
        d.validate()?;
    }
    Ok(file.distribution)
}

pub fn load_distributions(path: &Path) -> Result<Vec<ParamDistribution>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    distributions_from_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_distributions(path: &Path, dists: &[ParamDistribution]) -> Result<()> {
    std::fs::write(path, distributions_to_string(dists)).map_err(io_err(path))
}
