//! Plaintext learning and scoring math.
//!
//! Updates follow the descent convention `g = -eta * grad`, so both the
//! weighted rule `beta + alpha * H / sum(TS)` and the plain average
//! `beta + alpha * g / m` move the model downhill.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::FixedPointError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("trust score undefined for a zero vector")]
    ZeroVector,
    #[error("degenerate round: trust-score sum is not positive")]
    DegenerateRound,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error("idx: {0}")]
    Idx(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(len: usize) -> Self {
        Self { beta: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }
}

/// Examples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<f64>,
    name: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<f64>,
        name: impl Into<String>,
    ) -> Result<Self, FlError> {
        if labels.is_empty() || n_features == 0 {
            return Err(FlError::EmptyDataset);
        }
        if features.len() != labels.len() * n_features {
            return Err(FlError::DimensionMismatch {
                expected: labels.len() * n_features,
                got: features.len(),
            });
        }
        Ok(Self {
            features,
            n_features,
            labels,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [f64] {
        &mut self.labels
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.features
            .chunks_exact(self.n_features)
            .zip(self.labels.iter().copied())
    }
}

/// Predictor family. `Linear` is `f(x) = x . beta`; `Mlp` is one tanh
/// hidden layer with parameters `[W1 (h x d), b1 (h), w2 (h), b2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp { hidden: usize },
}

pub const MAX_HIDDEN: usize = 64;

impl ModelKind {
    pub fn param_len(&self, n_features: usize) -> usize {
        match *self {
            ModelKind::Linear => n_features,
            ModelKind::Mlp { hidden } => hidden * n_features + 2 * hidden + 1,
        }
    }

    pub fn validate(&self) -> Result<(), FlError> {
        match *self {
            ModelKind::Mlp { hidden } if hidden == 0 || hidden > MAX_HIDDEN => Err(
                FlError::InvalidConfig(format!("hidden units must be in 1..={MAX_HIDDEN}")),
            ),
            _ => Ok(()),
        }
    }

    fn check(&self, beta: &ModelParams, d: &Dataset) -> Result<(), FlError> {
        self.validate()?;
        let expected = self.param_len(d.n_features);
        if beta.len() != expected {
            return Err(FlError::DimensionMismatch {
                expected,
                got: beta.len(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, beta: &[f64], x: &[f64]) -> f64 {
        match *self {
            ModelKind::Linear => dot(beta, x),
            ModelKind::Mlp { hidden } => {
                let d = x.len();
                let (w1, rest) = beta.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let mut out = b2[0];
                for k in 0..hidden {
                    out += w2[k] * (dot(&w1[k * d..(k + 1) * d], x) + b1[k]).tanh();
                }
                out
            }
        }
    }

    /// Gradient of the mean squared error.
    pub fn gradient(&self, beta: &ModelParams, data: &Dataset) -> Result<Vec<f64>, FlError> {
        self.check(beta, data)?;
        let n = data.len() as f64;
        let mut grad = vec![0.0; beta.len()];
        match *self {
            ModelKind::Linear => {
                for (x, y) in data.rows() {
                    let r = -2.0 * (y - dot(&beta.beta, x)) / n;
                    for (g, xi) in grad.iter_mut().zip(x) {
                        *g += r * xi;
                    }
                }
            }
            ModelKind::Mlp { hidden } => {
                let d = data.n_features;
                let (w1, rest) = beta.beta.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let mut act = vec![0.0; hidden];
                for (x, y) in data.rows() {
                    let mut out = b2[0];
                    for k in 0..hidden {
                        act[k] = (dot(&w1[k * d..(k + 1) * d], x) + b1[k]).tanh();
                        out += w2[k] * act[k];
                    }
                    let dout = -2.0 * (y - out) / n;
                    let (gw1, grest) = grad.split_at_mut(hidden * d);
                    let (gb1, grest) = grest.split_at_mut(hidden);
                    let (gw2, gb2) = grest.split_at_mut(hidden);
                    gb2[0] += dout;
                    for k in 0..hidden {
                        gw2[k] += dout * act[k];
                        let dz = dout * w2[k] * (1.0 - act[k] * act[k]);
                        gb1[k] += dz;
                        for (g, xi) in gw1[k * d..(k + 1) * d].iter_mut().zip(x) {
                            *g += dz * xi;
                        }
                    }
                }
            }
        }
        Ok(grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
}

/// Full-batch training hyperparameters. `epochs` is the number of global rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub eta: f64,
    pub alpha: f64,
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), FlError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(FlError::InvalidConfig("eta must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(FlError::InvalidConfig("alpha must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(FlError::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustScores {
    pub ts: f64,
    pub ts_norm: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `(1/n) * sum (y - f(x))^2`.
pub fn mse_loss(kind: &ModelKind, beta: &ModelParams, d: &Dataset) -> Result<f64, FlError> {
    kind.check(beta, d)?;
    let total: f64 = d
        .rows()
        .map(|(x, y)| {
            let r = y - kind.predict(&beta.beta, x);
            r * r
        })
        .sum();
    Ok(total / d.len() as f64)
}

/// `g = -eta * grad l(beta; D)`.
pub fn local_update(
    kind: &ModelKind,
    beta: &ModelParams,
    d: &Dataset,
    cfg: &TrainingConfig,
) -> Result<Vec<f64>, FlError> {
    Ok(kind
        .gradient(beta, d)?
        .into_iter()
        .map(|g| -cfg.eta * g)
        .collect())
}

/// The same step as [`local_update`], taken on the server's trusted dataset.
pub fn reference_update(
    kind: &ModelKind,
    beta: &ModelParams,
    d_star: &Dataset,
    cfg: &TrainingConfig,
) -> Result<Vec<f64>, FlError> {
    local_update(kind, beta, d_star, cfg)
}

/// `max(0, cos(g*, g_i))`.
pub fn trust_score(g_star: &[f64], g_i: &[f64]) -> Result<f64, FlError> {
    check_pair(g_star, g_i)?;
    Ok((dot(g_star, g_i) / (norm(g_star) * norm(g_i))).max(0.0))
}

/// `TS * |g*| / |g_i|`.
pub fn normalized_trust_score(g_star: &[f64], g_i: &[f64]) -> Result<f64, FlError> {
    Ok(trust_score(g_star, g_i)? * norm(g_star) / norm(g_i))
}

fn check_pair(g_star: &[f64], g_i: &[f64]) -> Result<(), FlError> {
    if g_star.len() != g_i.len() {
        return Err(FlError::DimensionMismatch {
            expected: g_star.len(),
            got: g_i.len(),
        });
    }
    if g_star.iter().all(|&x| x == 0.0) || g_i.iter().all(|&x| x == 0.0) {
        return Err(FlError::ZeroVector);
    }
    Ok(())
}

pub fn weighted_update(ts_norm: f64, g_i: &[f64]) -> Vec<f64> {
    g_i.iter().map(|g| ts_norm * g).collect()
}

/// `beta + alpha * H / ts_sum`; a non-positive sum skips the round.
pub fn global_update(
    beta: &ModelParams,
    h: &[f64],
    ts_sum: f64,
    alpha: f64,
) -> Result<ModelParams, FlError> {
    if beta.len() != h.len() {
        return Err(FlError::DimensionMismatch {
            expected: beta.len(),
            got: h.len(),
        });
    }
    if ts_sum <= 0.0 {
        return Err(FlError::DegenerateRound);
    }
    Ok(ModelParams {
        beta: beta
            .beta
            .iter()
            .zip(h)
            .map(|(b, h)| b + alpha * h / ts_sum)
            .collect(),
    })
}

/// `beta + alpha * g_sum / m`.
pub fn duoagg_update(beta: &ModelParams, g_sum: &[f64], m: usize, alpha: f64) -> ModelParams {
    assert!(m >= 1, "at least one client");
    ModelParams {
        beta: beta
            .beta
            .iter()
            .zip(g_sum)
            .map(|(b, g)| b + alpha * g / m as f64)
            .collect(),
    }
}

/// Scores for one client; a zero update scores zero.
fn scores_or_zero(g_star: &[f64], g_i: &[f64]) -> Result<TrustScores, FlError> {
    match (trust_score(g_star, g_i), normalized_trust_score(g_star, g_i)) {
        (Ok(ts), Ok(ts_norm)) => Ok(TrustScores { ts, ts_norm }),
        (Err(FlError::ZeroVector), _) if g_star.iter().any(|&x| x != 0.0) => Ok(TrustScores {
            ts: 0.0,
            ts_norm: 0.0,
        }),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

/// One full round in the clear: reference update, client updates, scores,
/// weighted sum, and the global step.
pub fn plaintext_round_oracle(
    kind: &ModelKind,
    beta: &ModelParams,
    datasets: &[Dataset],
    d_star: &Dataset,
    cfg: &TrainingConfig,
) -> Result<(ModelParams, Vec<TrustScores>), FlError> {
    if datasets.is_empty() {
        return Err(FlError::InvalidConfig("at least one client".into()));
    }
    let g_star = reference_update(kind, beta, d_star, cfg)?;
    if g_star.iter().all(|&x| x == 0.0) {
        return Err(FlError::DegenerateRound);
    }
    let mut h = vec![0.0; beta.len()];
    let mut ts_sum = 0.0;
    let mut scores = Vec::with_capacity(datasets.len());
    for d in datasets {
        let g = local_update(kind, beta, d, cfg)?;
        let s = scores_or_zero(&g_star, &g)?;
        for (acc, x) in h.iter_mut().zip(weighted_update(s.ts_norm, &g)) {
            *acc += x;
        }
        ts_sum += s.ts;
        scores.push(s);
    }
    Ok((global_update(beta, &h, ts_sum, cfg.alpha)?, scores))
}

/// One round of plain averaging: `beta + alpha * sum(g_i) / m`.
pub fn plaintext_average_round(
    kind: &ModelKind,
    beta: &ModelParams,
    datasets: &[Dataset],
    cfg: &TrainingConfig,
) -> Result<ModelParams, FlError> {
    let mut sum = vec![0.0; beta.len()];
    for d in datasets {
        for (acc, x) in sum.iter_mut().zip(local_update(kind, beta, d, cfg)?) {
            *acc += x;
        }
    }
    Ok(duoagg_update(beta, &sum, datasets.len(), cfg.alpha))
}

/// Linear-regression data: `y = x . beta_true + N(0, sigma^2)` with standard
/// normal features. `d_star` is drawn from the same distribution.
pub fn make_synthetic_regression(
    len: usize,
    n_clients: usize,
    examples_per_client: usize,
    noise_sigma: f64,
    seed: u64,
) -> (Vec<Dataset>, Dataset, ModelParams) {
    assert!(len > 0 && n_clients > 0 && examples_per_client > 0);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let beta: Vec<f64> = (0..len).map(|_| normal()).collect();
    let mut draw = |name: String| {
        let mut features = Vec::with_capacity(examples_per_client * len);
        let mut labels = Vec::with_capacity(examples_per_client);
        for _ in 0..examples_per_client {
            let x: Vec<f64> = (0..len).map(|_| normal()).collect();
            let noise = if noise_sigma > 0.0 {
                noise_sigma * normal()
            } else {
                0.0
            };
            labels.push(dot(&x, &beta) + noise);
            features.extend(x);
        }
        Dataset::new(features, len, labels, name).expect("non-empty")
    };
    let clients = (0..n_clients).map(|i| draw(format!("client-{i}"))).collect();
    let d_star = draw("d-star".into());
    (clients, d_star, ModelParams { beta })
}

/// Integer images of the scoring pipeline, shared bit-exactly with the circuit.
pub mod fixed {
    use num_bigint::BigInt;
    use num_integer::Integer;
    use num_traits::{Signed, ToPrimitive, Zero};

    use super::FlError;
    use crate::fixedpoint::{FixedPointConfig, FixedPointError};

    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct FixedScores {
        /// `g* . g_i` at scale `S^2`.
        pub dot: BigInt,
        pub ts: i64,
        pub ts_norm: i64,
        pub h: Vec<i64>,
    }

    fn checked(v: &BigInt, cfg: FixedPointConfig) -> Result<i64, FlError> {
        match v.to_i64() {
            Some(x) if x.unsigned_abs() < cfg.bound() as u64 => Ok(x),
            _ => Err(FixedPointError::Overflow {
                value: v.to_string(),
                frac_bits: cfg.frac_bits(),
                word_bits: cfg.word_bits(),
            }
            .into()),
        }
    }

    fn dot(a: &[i64], b: &[i64]) -> BigInt {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| BigInt::from(x as i128 * y as i128))
            .sum()
    }

    /// `ts = floor(d+ S / isqrt(|g*|^2 |g_i|^2))`,
    /// `ts_norm = floor(d+ S / |g_i|^2)`, `h_j = floor(ts_norm g_ij / S)`.
    ///
    /// Because `d+ <= isqrt(|g*|^2 |g_i|^2)` for integers, `ts <= S` exactly.
    pub fn fixed_scores(
        g_star: &[i64],
        g_i: &[i64],
        cfg: FixedPointConfig,
    ) -> Result<FixedScores, FlError> {
        if g_star.len() != g_i.len() {
            return Err(FlError::DimensionMismatch {
                expected: g_star.len(),
                got: g_i.len(),
            });
        }
        let s = BigInt::from(cfg.scale());
        let d = dot(g_star, g_i);
        let nsq_star = dot(g_star, g_star);
        let nsq_i = dot(g_i, g_i);
        if nsq_star.is_zero() || nsq_i.is_zero() {
            return Err(FlError::ZeroVector);
        }
        let d_pos = if d.is_negative() { BigInt::zero() } else { d.clone() };
        let root = (&nsq_star * &nsq_i).sqrt();
        let ts = checked(&Integer::div_floor(&(&d_pos * &s), &root), cfg)?;
        let ts_norm = checked(&Integer::div_floor(&(&d_pos * &s), &nsq_i), cfg)?;
        let h = g_i
            .iter()
            .map(|&g| {
                let p = BigInt::from(ts_norm as i128 * g as i128);
                checked(&Integer::div_floor(&p, &s), cfg)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FixedScores {
            dot: d,
            ts,
            ts_norm,
            h,
        })
    }

    /// Aggregate of one round in raw units.
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct FixedRound {
        pub h_sum: Vec<i128>,
        pub ts_sum: i128,
        /// `None` for clients whose update is zero (they contribute nothing).
        pub scores: Vec<Option<FixedScores>>,
    }

    pub fn fixed_point_round(
        g_star: &[i64],
        clients: &[Vec<i64>],
        cfg: FixedPointConfig,
    ) -> Result<FixedRound, FlError> {
        let mut h_sum = vec![0i128; g_star.len()];
        let mut ts_sum = 0i128;
        let mut scores = Vec::with_capacity(clients.len());
        for g in clients {
            match fixed_scores(g_star, g, cfg) {
                Ok(sc) => {
                    for (acc, &h) in h_sum.iter_mut().zip(&sc.h) {
                        *acc += h as i128;
                    }
                    ts_sum += sc.ts as i128;
                    scores.push(Some(sc));
                }
                Err(FlError::ZeroVector) if g_star.iter().any(|&x| x != 0) => scores.push(None),
                Err(e) => return Err(e),
            }
        }
        Ok(FixedRound {
            h_sum,
            ts_sum,
            scores,
        })
    }

    /// `beta_j + alpha * H_j / ts_sum`, both in raw units (the scale cancels).
    pub fn apply_raw_update(beta: &mut [f64], h_sum: &[i128], ts_sum: i128, alpha: f64) -> bool {
        if ts_sum <= 0 {
            return false;
        }
        for (b, &h) in beta.iter_mut().zip(h_sum) {
            *b += alpha * h as f64 / ts_sum as f64;
        }
        true
    }
}

/// Readers for the IDX container used by MNIST-style datasets.
pub mod idx {
    use super::*;

    const IMAGES_MAGIC: u32 = 0x0000_0803;
    const LABELS_MAGIC: u32 = 0x0000_0801;

    fn read_all(path: &Path) -> Result<Vec<u8>, FlError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| FlError::Idx(format!("{}: {e}", path.display())))?;
        Ok(buf)
    }

    fn be_u32(buf: &[u8], at: usize) -> Result<u32, FlError> {
        buf.get(at..at + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| FlError::Idx("truncated header".into()))
    }

    /// Returns `(count, rows, cols, pixels)`.
    pub fn parse_images(buf: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), FlError> {
        if be_u32(buf, 0)? != IMAGES_MAGIC {
            return Err(FlError::Idx("bad image magic".into()));
        }
        let n = be_u32(buf, 4)? as usize;
        let rows = be_u32(buf, 8)? as usize;
        let cols = be_u32(buf, 12)? as usize;
        let body = &buf[16..];
        if body.len() != n * rows * cols {
            return Err(FlError::Idx(format!(
                "expected {} pixel bytes, found {}",
                n * rows * cols,
                body.len()
            )));
        }
        Ok((n, rows, cols, body.to_vec()))
    }

    pub fn parse_labels(buf: &[u8]) -> Result<Vec<u8>, FlError> {
        if be_u32(buf, 0)? != LABELS_MAGIC {
            return Err(FlError::Idx("bad label magic".into()));
        }
        let n = be_u32(buf, 4)? as usize;
        let body = &buf[8..];
        if body.len() != n {
            return Err(FlError::Idx(format!("expected {n} labels, found {}", body.len())));
        }
        Ok(body.to_vec())
    }

    /// Loads up to `limit` examples; pixels are scaled to `[0, 1]` and the
    /// digit value is the regression target.
    pub fn load(images: &Path, labels: &Path, limit: usize) -> Result<Dataset, FlError> {
        let (n, rows, cols, pixels) = parse_images(&read_all(images)?)?;
        let labels = parse_labels(&read_all(labels)?)?;
        if labels.len() != n {
            return Err(FlError::Idx("image and label counts differ".into()));
        }
        let take = n.min(limit);
        let d = rows * cols;
        let features = pixels[..take * d].iter().map(|&p| p as f64 / 255.0).collect();
        let labels = labels[..take].iter().map(|&l| l as f64).collect();
        Dataset::new(features, d, labels, images.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(eta: f64) -> TrainingConfig {
        TrainingConfig {
            eta,
            alpha: 1.0,
            epochs: 1,
            optimizer: Optimizer::Sgd,
        }
    }

    fn one_example(x: f64, y: f64) -> Dataset {
        Dataset::new(vec![x], 1, vec![y], "one").unwrap()
    }

    #[test]
    fn loss_examples() {
        let d = one_example(1.0, 1.0);
        assert_eq!(mse_loss(&ModelKind::Linear, &ModelParams::zeros(1), &d).unwrap(), 1.0);
        let fit = ModelParams { beta: vec![1.0] };
        assert_eq!(mse_loss(&ModelKind::Linear, &fit, &d).unwrap(), 0.0);
        let data = Dataset::new(vec![1.0, 2.0, 3.0, -1.0], 2, vec![0.5, 2.0], "t").unwrap();
        let beta = ModelParams { beta: vec![0.25, -1.0] };
        // hand sums: 0.5 - (0.25 - 2) = 2.25, 2 - (0.75 + 1) = 0.25
        let expect = (2.25f64.powi(2) + 0.25f64.powi(2)) / 2.0;
        assert!((mse_loss(&ModelKind::Linear, &beta, &data).unwrap() - expect).abs() < 1e-15);
        assert!(matches!(
            mse_loss(&ModelKind::Linear, &ModelParams::zeros(3), &data),
            Err(FlError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn one_dimensional_update() {
        let d = one_example(1.0, 1.0);
        let g = local_update(&ModelKind::Linear, &ModelParams::zeros(1), &d, &cfg(0.5)).unwrap();
        // gradient of (1 - b)^2 at 0 is -2; the descent step is +1
        assert_eq!(g, vec![1.0]);
        let g2 = local_update(&ModelKind::Linear, &ModelParams::zeros(1), &d, &cfg(1.0)).unwrap();
        assert_eq!(g2, vec![2.0]);
        let zero = local_update(&ModelKind::Linear, &ModelParams { beta: vec![1.0] }, &d, &cfg(0.5)).unwrap();
        assert_eq!(zero, vec![0.0]);
        let r = reference_update(&ModelKind::Linear, &ModelParams::zeros(1), &d, &cfg(0.5)).unwrap();
        assert_eq!(r, g);
    }

    fn finite_difference(kind: &ModelKind, beta: &ModelParams, d: &Dataset) -> Vec<f64> {
        let h = 1e-5;
        (0..beta.len())
            .map(|i| {
                let mut p = beta.clone();
                let mut m = beta.clone();
                p.beta[i] += h;
                m.beta[i] -= h;
                (mse_loss(kind, &p, d).unwrap() - mse_loss(kind, &m, d).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    fn assert_grad_close(kind: ModelKind, seed: u64) {
        let (clients, _, _) = make_synthetic_regression(4, 1, 12, 0.3, seed);
        let d = &clients[0];
        let mut rng = ChaCha20Rng::seed_from_u64(seed + 100);
        let beta = ModelParams {
            beta: (0..kind.param_len(4))
                .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 0.5 * z })
                .collect(),
        };
        let analytic = kind.gradient(&beta, d).unwrap();
        let numeric = finite_difference(&kind, &beta, d);
        for (a, n) in analytic.iter().zip(&numeric) {
            let scale = a.abs().max(n.abs()).max(1.0);
            assert!((a - n).abs() / scale < 1e-6, "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            assert_grad_close(ModelKind::Linear, seed);
            assert_grad_close(ModelKind::Mlp { hidden: 5 }, seed);
        }
        assert!(ModelKind::Mlp { hidden: 65 }.validate().is_err());
    }

    #[test]
    fn trust_score_examples() {
        assert_eq!(trust_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((trust_score(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(trust_score(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(trust_score(&[1.0, 0.0], &[0.0, 0.0]), Err(FlError::ZeroVector));
        assert_eq!(normalized_trust_score(&[3.0, 4.0], &[6.0, 8.0]).unwrap(), 0.5);
        assert!((normalized_trust_score(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn update_rules() {
        assert_eq!(weighted_update(0.0, &[2.0, 4.0]), vec![0.0, 0.0]);
        assert_eq!(weighted_update(1.0, &[2.0, 4.0]), vec![2.0, 4.0]);
        assert_eq!(weighted_update(0.5, &[2.0, 4.0]), vec![1.0, 2.0]);
        let b = ModelParams::zeros(2);
        assert_eq!(global_update(&b, &[2.0, 4.0], 2.0, 1.0).unwrap().beta, vec![1.0, 2.0]);
        assert_eq!(global_update(&b, &[2.0, 4.0], 2.0, 0.0).unwrap(), b);
        assert_eq!(global_update(&b, &[2.0, 4.0], 0.0, 1.0), Err(FlError::DegenerateRound));
        assert_eq!(duoagg_update(&b, &[3.0, 3.0], 3, 1.0).beta, vec![1.0, 1.0]);
        assert_eq!(duoagg_update(&b, &[3.0, 3.0], 1, 1.0).beta, vec![3.0, 3.0]);
    }

    #[test]
    fn duoagg_matches_weighted_for_identical_clients() {
        let (clients, _, _) = make_synthetic_regression(3, 1, 10, 0.1, 4);
        let same = vec![clients[0].clone(); 3];
        let c = cfg(0.1);
        let b = ModelParams::zeros(3);
        let weighted = plaintext_round_oracle(&ModelKind::Linear, &b, &same, &clients[0], &c)
            .unwrap()
            .0;
        let plain = plaintext_average_round(&ModelKind::Linear, &b, &same, &c).unwrap();
        for (x, y) in weighted.beta.iter().zip(&plain.beta) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn round_oracle_examples() {
        let (clients, d_star, _) = make_synthetic_regression(3, 2, 10, 0.1, 9);
        let c = cfg(0.1);
        let b = ModelParams::zeros(3);
        let kind = ModelKind::Linear;
        let g_star = reference_update(&kind, &b, &d_star, &c).unwrap();
        let (one, scores) =
            plaintext_round_oracle(&kind, &b, std::slice::from_ref(&d_star), &d_star, &c).unwrap();
        assert!((scores[0].ts - 1.0).abs() < 1e-12);
        for (x, g) in one.beta.iter().zip(&g_star) {
            assert!((x - g).abs() < 1e-12);
        }
        let (dup, _) = plaintext_round_oracle(
            &kind,
            &b,
            &[clients[0].clone(), clients[0].clone()],
            &d_star,
            &c,
        )
        .unwrap();
        let (single, _) = plaintext_round_oracle(&kind, &b, &clients[..1], &d_star, &c).unwrap();
        for (x, y) in dup.beta.iter().zip(&single.beta) {
            assert!((x - y).abs() < 1e-12);
        }
        // a client whose update is -g*: labels negated on D* flips the gradient at beta = 0
        let mut flipped = d_star.clone();
        flipped.labels_mut().iter_mut().for_each(|y| *y = -*y);
        let (with_bad, scores) =
            plaintext_round_oracle(&kind, &b, &[d_star.clone(), flipped], &d_star, &c).unwrap();
        assert_eq!(scores[1].ts, 0.0);
        assert_eq!(with_bad, one);
    }

    #[test]
    fn synthetic_data() {
        let (a, da, ba) = make_synthetic_regression(5, 3, 7, 0.0, 11);
        let (b, db, bb) = make_synthetic_regression(5, 3, 7, 0.0, 11);
        assert_eq!((a.clone(), da.clone(), ba.clone()), (b, db, bb));
        assert!(a.iter().all(|d| d.len() == 7 && d.n_features() == 5));
        for d in a.iter().chain([&da]) {
            assert!(mse_loss(&ModelKind::Linear, &ba, d).unwrap() < 1e-24);
        }
    }

    #[test]
    fn noiseless_training_converges() {
        let (clients, d_star, _) = make_synthetic_regression(8, 4, 40, 0.0, 2);
        let kind = ModelKind::Linear;
        let c = TrainingConfig {
            eta: 0.2,
            alpha: 1.0,
            epochs: 30,
            optimizer: Optimizer::Sgd,
        };
        let mut beta = ModelParams::zeros(8);
        for _ in 0..c.epochs {
            beta = plaintext_round_oracle(&kind, &beta, &clients, &d_star, &c).unwrap().0;
        }
        assert!(mse_loss(&kind, &beta, &d_star).unwrap() < 1e-3);
    }

    #[test]
    fn fixed_scores_examples() {
        use crate::fixedpoint::FixedPointConfig;
        let cfg = FixedPointConfig::default();
        let s = cfg.scale();
        let g = vec![3 * s, -4 * s, 17];
        let sc = fixed::fixed_scores(&g, &g, cfg).unwrap();
        assert_eq!((sc.ts, sc.ts_norm), (s, s));
        assert_eq!(sc.h, g);
        let sc = fixed::fixed_scores(&[s, 0], &[0, s], cfg).unwrap();
        assert_eq!((sc.ts, sc.ts_norm), (0, 0));
        assert_eq!(fixed::fixed_scores(&[s, 0], &[0, 0], cfg), Err(FlError::ZeroVector));
        // g_i = 2 g*: ts = 1, ts_norm = 1/2
        let sc = fixed::fixed_scores(&[3 * s, 4 * s], &[6 * s, 8 * s], cfg).unwrap();
        assert_eq!((sc.ts, sc.ts_norm), (s, s / 2));
    }

    #[test]
    fn idx_parsing() {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2];
        img.extend([0, 255, 51, 102]);
        let (n, r, c, px) = idx::parse_images(&img).unwrap();
        assert_eq!((n, r, c, px.len()), (2, 1, 2, 4));
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        assert_eq!(idx::parse_labels(&lab).unwrap(), vec![7, 3]);
        assert!(idx::parse_labels(&img).is_err());
        let dir = tempfile::tempdir().unwrap();
        let (pi, pl) = (dir.path().join("i"), dir.path().join("l"));
        std::fs::write(&pi, &img).unwrap();
        std::fs::write(&pl, &lab).unwrap();
        let d = idx::load(&pi, &pl, 1).unwrap();
        assert_eq!((d.len(), d.n_features()), (1, 2));
        assert_eq!(d.row(0), &[0.0, 1.0]);
        assert_eq!(d.labels(), &[7.0]);
    }

    fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, len)
    }

    proptest! {
        #[test]
        fn cosine_scale_invariance(a in vec_strategy(6), b in vec_strategy(6), c in 0.01f64..100.0) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let scaled: Vec<f64> = b.iter().map(|x| c * x).collect();
            let t1 = trust_score(&a, &b).unwrap();
            let t2 = trust_score(&a, &scaled).unwrap();
            prop_assert!((t1 - t2).abs() < 1e-12);
            let n1 = normalized_trust_score(&a, &b).unwrap();
            let n2 = normalized_trust_score(&a, &scaled).unwrap();
            prop_assert!((n1 / c - n2).abs() <= 1e-12 * n1.abs().max(1.0));
        }

        #[test]
        fn normalized_identity(a in vec_strategy(8), b in vec_strategy(8)) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let direct = normalized_trust_score(&a, &b).unwrap();
            let identity = dot(&a, &b).max(0.0) / dot(&b, &b);
            prop_assert!((direct - identity).abs() <= 1e-12 * identity.abs().max(1.0));
        }

        #[test]
        fn fixed_ts_bounded(a in proptest::collection::vec(-(1i64 << 30)..(1i64 << 30), 5),
                            b in proptest::collection::vec(-(1i64 << 30)..(1i64 << 30), 5)) {
            let cfg = crate::fixedpoint::FixedPointConfig::default();
            if let Ok(sc) = fixed::fixed_scores(&a, &b, cfg) {
                prop_assert!(sc.ts >= 0 && sc.ts <= cfg.scale());
                prop_assert!(sc.ts_norm >= 0);
            }
        }
    }
}
