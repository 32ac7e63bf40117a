//! Logistic yield classifier.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::frenet::{bumper_gap, Observation, OtherId};

pub const FEATURE_COUNT: usize = 7;
pub const DEFAULT_BETA: f64 = 0.85;
pub const WEIGHTS_SCHEMA_VERSION: u32 = 1;
/// Gap and leader speed reported for a car with nobody ahead of it. Kept
/// moderate so raw-unit logits stay well scaled.
pub const OPEN_ROAD_FEATURE_GAP: f64 = 100.0;

const DEFAULT_WEIGHTS: &str = include_str!("../data/yield_weights.toml");

/// `[1, phi, d0, v0, s_k - s0, v_k, v_front]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YieldFeatures(pub [f64; FEATURE_COUNT]);

impl YieldFeatures {
    pub fn new(phi: f64, d0: f64, v0: f64, s_rel: f64, v_k: f64, v_front: f64) -> Self {
        Self([1.0, phi, d0, v0, s_rel, v_k, v_front])
    }

    pub fn raw(&self) -> [f64; FEATURE_COUNT - 1] {
        self.0[1..].try_into().expect("six features")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YieldDecision {
    Yield,
    NotYield,
}

/// Per-feature affine map applied before the dot product. The bias slot is
/// never transformed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; FEATURE_COUNT - 1],
    pub std: [f64; FEATURE_COUNT - 1],
}

impl Normalization {
    pub fn fit(rows: &[YieldFeatures]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = [0.0; FEATURE_COUNT - 1];
        let mut std = [0.0; FEATURE_COUNT - 1];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r.raw()) {
                *m += x / n;
            }
        }
        for r in rows {
            for ((s, m), x) in std.iter_mut().zip(&mean).zip(r.raw()) {
                *s += (x - m).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, f: &YieldFeatures) -> YieldFeatures {
        let mut out = f.0;
        for i in 1..FEATURE_COUNT {
            out[i] = (out[i] - self.mean[i - 1]) / self.std[i - 1];
        }
        YieldFeatures(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWeights {
    pub theta: [f64; FEATURE_COUNT],
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    schema_version: u32,
    #[serde(flatten)]
    weights: ClassifierWeights,
}

impl ClassifierWeights {
    pub fn new(theta: [f64; FEATURE_COUNT], beta: f64) -> Result<Self> {
        let w = Self {
            theta,
            beta,
            normalization: None,
        };
        w.validate()?;
        Ok(w)
    }

    /// Weights trained on the bundled synthetic interaction corpus.
    pub fn pretrained() -> Self {
        Self::from_toml(DEFAULT_WEIGHTS).expect("bundled weights parse")
    }

    pub fn uninformative(beta: f64) -> Self {
        Self {
            theta: [0.0; FEATURE_COUNT],
            beta,
            normalization: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("classifier weight"));
        }
        if let Some(n) = &self.normalization {
            if n.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || n.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::Config("normalization needs finite means and positive spreads".into()));
            }
        }
        Ok(())
    }

    pub fn logit(&self, f: &YieldFeatures) -> f64 {
        let f = match &self.normalization {
            Some(n) => n.apply(f),
            None => *f,
        };
        dot(&self.theta, &f.0)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&WeightsFile {
            schema_version: WEIGHTS_SCHEMA_VERSION,
            weights: self.clone(),
        })
        .expect("weights serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: WeightsFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if file.schema_version != WEIGHTS_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported weights schema_version {}",
                file.schema_version
            )));
        }
        file.weights.validate()?;
        Ok(file.weights)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(io_err(path))
    }
}

fn dot(a: &[f64; FEATURE_COUNT], b: &[f64; FEATURE_COUNT]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic function, evaluated on the branch that cannot overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn predict_prob(w: &ClassifierWeights, f: &YieldFeatures) -> f64 {
    sigmoid(w.logit(f))
}

pub fn classify(p: f64, beta: f64) -> YieldDecision {
    if p > beta {
        YieldDecision::Yield
    } else {
        YieldDecision::NotYield
    }
}

/// Features of surrounding car `k`. Its leader is the nearest vehicle ahead
/// in its lane, the ego included when the ego's center is in that lane.
pub fn extract_features(obs: &Observation, k: OtherId) -> YieldFeatures {
    let me = obs.other(k);
    let peer = obs.other(k.other());
    let mut leader: Option<(f64, f64, f64)> = None; // (s, length, v)
    let mut consider = |s: f64, length: f64, v: f64| {
        if s > me.s && leader.is_none_or(|(ls, _, _)| s < ls) {
            leader = Some((s, length, v));
        }
    };
    if peer.lane == me.lane {
        consider(peer.s, peer.length, peer.v);
    }
    if obs.ego.lane == me.lane {
        consider(obs.ego.s, obs.ego_dims.length, obs.ego.v);
    }
    let (phi, v_front) = match leader {
        Some((s, length, v)) => (bumper_gap(me.s, me.length, s, length), v),
        None => (OPEN_ROAD_FEATURE_GAP, me.v),
    };
    YieldFeatures::new(phi, obs.ego.d, obs.ego.v, me.s - obs.ego.s, me.v, v_front)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledFeatures {
    pub features: YieldFeatures,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_reg: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub beta: f64,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 1e-3,
            tol: 1e-8,
            max_iter: 10_000,
            beta: DEFAULT_BETA,
            standardize: true,
        }
    }
}

/// Mean log-likelihood minus `lambda/2 * |theta|^2`; the bias is not penalized.
pub fn objective(theta: &[f64; FEATURE_COUNT], rows: &[LabeledFeatures], lambda: f64) -> f64 {
    let n = rows.len().max(1) as f64;
    let ll: f64 = rows
        .iter()
        .map(|r| {
            let z = dot(theta, &r.features.0);
            if r.label {
                -softplus(-z)
            } else {
                -softplus(z)
            }
        })
        .sum();
    ll / n - 0.5 * lambda * theta[1..].iter().map(|t| t * t).sum::<f64>()
}

/// Newton ascent on the regularized mean log-likelihood, with step halving
/// whenever a full step fails to increase the objective. Stops when the
/// gradient norm drops below `cfg.tol`, or when no step along the Newton
/// direction improves the objective in floating point.
pub fn train(data: &[LabeledFeatures], cfg: &TrainConfig) -> Result<ClassifierWeights> {
    if !data.iter().any(|r| r.label) || data.iter().all(|r| r.label) {
        return Err(Error::NotEnoughData("training needs both labels".into()));
    }
    if data.iter().any(|r| r.features.0.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("training feature"));
    }
    let normalization = cfg
        .standardize
        .then(|| Normalization::fit(&data.iter().map(|r| r.features).collect::<Vec<_>>()));
    let rows: Vec<LabeledFeatures> = match &normalization {
        Some(n) => data
            .iter()
            .map(|r| LabeledFeatures {
                features: n.apply(&r.features),
                label: r.label,
            })
            .collect(),
        None => data.to_vec(),
    };

    let n = rows.len() as f64;
    let lambda = cfg.lambda_reg;
    let mut theta = [0.0; FEATURE_COUNT];
    let mut value = objective(&theta, &rows, lambda);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let mut grad = [0.0; FEATURE_COUNT];
        let mut hess = [[0.0; FEATURE_COUNT]; FEATURE_COUNT];
        for r in &rows {
            let f = &r.features.0;
            let p = sigmoid(dot(&theta, f));
            let y = if r.label { 1.0 } else { 0.0 };
            let w = p * (1.0 - p);
            for i in 0..FEATURE_COUNT {
                grad[i] += (y - p) * f[i] / n;
                for j in 0..=i {
                    hess[i][j] += w * f[i] * f[j] / n;
                }
            }
        }
        for i in 0..FEATURE_COUNT {
            for j in 0..i {
                hess[j][i] = hess[i][j];
            }
        }
        for i in 1..FEATURE_COUNT {
            grad[i] -= lambda * theta[i];
            hess[i][i] += lambda;
        }
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < cfg.tol {
            return finish(theta, cfg, normalization);
        }

        // Tiny ridge keeps the bias row solvable on degenerate data.
        for (i, row) in hess.iter_mut().enumerate() {
            row[i] += 1e-12;
        }
        let step = solve(hess, grad).ok_or_else(|| Error::Training("singular Hessian".into()))?;
        let mut t = 1.0;
        let improved = loop {
            let mut cand = theta;
            for i in 0..FEATURE_COUNT {
                cand[i] += t * step[i];
            }
            let v = objective(&cand, &rows, lambda);
            if v > value {
                theta = cand;
                value = v;
                break true;
            }
            if t < 1e-10 {
                break false;
            }
            t *= 0.5;
        };
        if !improved {
            log::debug!("training stalled at gradient norm {grad_norm:.3e}");
            return finish(theta, cfg, normalization);
        }
    }
    Err(Error::Training(format!(
        "no convergence after {} iterations (gradient norm {grad_norm:.3e}, objective {value:.6})",
        cfg.max_iter
    )))
}

fn finish(
    theta: [f64; FEATURE_COUNT],
    cfg: &TrainConfig,
    normalization: Option<Normalization>,
) -> Result<ClassifierWeights> {
    let w = ClassifierWeights {
        theta,
        beta: cfg.beta,
        normalization,
    };
    w.validate()?;
    Ok(w)
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: [[f64; FEATURE_COUNT]; FEATURE_COUNT], mut b: [f64; FEATURE_COUNT]) -> Option<[f64; FEATURE_COUNT]> {
    const N: usize = FEATURE_COUNT;
    for col in 0..N {
        let pivot = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..N {
            let factor = a[row][col] / a[col][col];
            for k in col..N {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let tail: f64 = (row + 1..N).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub fn accuracy(w: &ClassifierWeights, rows: &[LabeledFeatures]) -> f64 {
    let hits = rows
        .iter()
        .filter(|r| (predict_prob(w, &r.features) > 0.5) == r.label)
        .count();
    hits as f64 / rows.len().max(1) as f64
}

pub const TRAINING_HEADER: [&str; 7] = ["phi", "d0", "v0", "s_rel", "v_k", "v_front", "label"];

#[derive(Serialize, Deserialize)]
struct TrainingRow {
    phi: f64,
    d0: f64,
    v0: f64,
    s_rel: f64,
    v_k: f64,
    v_front: f64,
    label: u8,
}

pub fn read_training<R: Read>(reader: R, path: &Path) -> Result<Vec<LabeledFeatures>> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    for col in TRAINING_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(parse_err(1, format!("missing column `{col}`")));
        }
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row: TrainingRow = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        let label = match row.label {
            0 => false,
            1 => true,
            other => return Err(parse_err(line, format!("label must be 0 or 1, got {other}"))),
        };
        out.push(LabeledFeatures {
            features: YieldFeatures::new(row.phi, row.d0, row.v0, row.s_rel, row.v_k, row.v_front),
            label,
        });
    }
    Ok(out)
}

pub fn load_training(path: &Path) -> Result<Vec<LabeledFeatures>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_training(file, path)
}

pub fn write_training<W: Write>(writer: W, rows: &[LabeledFeatures]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in rows {
        let [_, phi, d0, v0, s_rel, v_k, v_front] = r.features.0;
        wtr.serialize(TrainingRow {
            phi,
            d0,
            v0,
            s_rel,
            v_k,
            v_front,
            label: u8::from(r.label),
        })?;
    }
    wtr.flush().map_err(|e| Error::Io {
        path: "<training writer>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn save_training(path: &Path, rows: &[LabeledFeatures]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write_training(file, rows)
}
