//! Build-time and success predictors.
//!
//! Durations are predicted as normal distributions. The trained regression
//! model of a production deployment is replaced by [`PredictorSpec`], whose
//! `OracleWithNoise` variant perturbs the ground-truth duration by a seeded,
//! bounded relative error so predictor accuracy can be swept.

use crate::error::{Error, Result};
use crate::speculation::BuildNode;
use crate::types::{Change, ChangeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Smallest predicted mean, in minutes.
pub const MIN_MINUTES: f64 = 0.01;

/// A build duration modelled as `N(mean, variance)`, in minutes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationEstimate {
    mean: f64,
    variance: f64,
}

impl DurationEstimate {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if mean.is_finite() && variance.is_finite() && mean > 0.0 && variance >= 0.0 {
            Ok(DurationEstimate { mean, variance })
        } else {
            Err(Error::InvalidEstimate { mean, variance })
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Model inputs for one build, ordered by their usual importance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct PredictionFeatures {
    pub targets_changed: u64,
    pub targets_added: u64,
    pub targets_removed: u64,
    pub conflicts_count: u64,
    /// Size of the node's base set.
    pub speculation_height: u64,
    pub added_lines: u64,
    pub removed_lines: u64,
    pub changeset_count: u64,
    pub commits_count: u64,
    pub developer: String,
}

impl PredictionFeatures {
    pub fn for_node(change: &Change, conflicts_count: usize, speculation_height: usize) -> Self {
        PredictionFeatures {
            targets_changed: change.targets_changed.len() as u64,
            targets_added: change.targets_added.len() as u64,
            targets_removed: change.targets_removed.len() as u64,
            conflicts_count: conflicts_count as u64,
            speculation_height: speculation_height as u64,
            added_lines: change.added_lines,
            removed_lines: change.removed_lines,
            changeset_count: change.changeset_count,
            commits_count: change.commits_count,
            developer: change.developer.clone(),
        }
    }

    fn fingerprint(&self, seed: u64) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u64(seed);
        for v in [
            self.targets_changed,
            self.targets_added,
            self.targets_removed,
            self.conflicts_count,
            self.speculation_height,
            self.added_lines,
            self.removed_lines,
            self.changeset_count,
            self.commits_count,
        ] {
            h.write_u64(v);
        }
        h.write(self.developer.as_bytes());
        h.finish()
    }
}

/// Platform-independent 64-bit FNV-1a.
pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    pub(crate) fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorSpec {
    /// `mean * (1 + bias + eta)` with `eta ~ U[-spread, spread]` seeded per features.
    OracleWithNoise { relative_bias: f64, relative_spread: f64, seed: u64 },
    /// Fixed per-change estimates.
    Table(BTreeMap<ChangeId, DurationEstimate>),
    Constant(DurationEstimate),
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PredictorSpec::OracleWithNoise { relative_bias, relative_spread, .. } => {
                if !relative_bias.is_finite() || !relative_spread.is_finite() || *relative_spread < 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "oracle predictor needs finite bias and spread >= 0 (got {relative_bias}, {relative_spread})"
                    )));
                }
                Ok(())
            }
            PredictorSpec::Table(_) | PredictorSpec::Constant(_) => Ok(()),
        }
    }
}

/// Predicts the duration distribution of one build of `change`.
pub fn predict_duration(
    spec: &PredictorSpec,
    change: ChangeId,
    features: &PredictionFeatures,
    truth: Option<DurationEstimate>,
) -> Result<DurationEstimate> {
    match spec {
        PredictorSpec::Constant(est) => Ok(*est),
        PredictorSpec::Table(table) => table.get(&change).copied().ok_or(Error::MissingTableEntry(change)),
        PredictorSpec::OracleWithNoise { relative_bias, relative_spread, seed } => {
            let truth = truth.ok_or(Error::MissingTruth(change))?;
            let eta = if *relative_spread > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(features.fingerprint(*seed));
                rng.gen_range(-relative_spread..=*relative_spread)
            } else {
                0.0
            };
            let scale = 1.0 + relative_bias + eta;
            let mean = (truth.mean() * scale).max(MIN_MINUTES);
            DurationEstimate::new(mean, truth.variance() * scale * scale)
        }
    }
}

/// Estimates the probability that a change's build passes.
pub trait SuccessPredictor {
    fn predict_success(&self, change: &Change, node: &BuildNode) -> f64;
}

/// Uses the per-change prior carried by the workload.
#[derive(Debug, Clone, Copy, Default)]
pub struct PriorSuccess;

impl SuccessPredictor for PriorSuccess {
    fn predict_success(&self, change: &Change, _node: &BuildNode) -> f64 {
        change.success_prior.clamp(0.0, 1.0)
    }
}

/// Mean absolute percentage error, as a percentage.
pub fn mape(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch { predicted: predicted.len(), actual: actual.len() });
    }
    if actual.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(i) = actual.iter().position(|&y| y.is_nan() || y <= 0.0) {
        return Err(Error::NonPositiveActual(i));
    }
    let sum: f64 = predicted.iter().zip(actual).map(|(p, y)| (p - y).abs() / y).sum();
    Ok(sum / actual.len() as f64 * 100.0)
}
