//! Gaussian mean-classifier model: closed-form error evaluators and Monte
//! Carlo experiments that check them.
//!
//! Features for class `k` are `φ ~ N(y·μ_k, I_d)` with `μ_k` placed on the
//! first axis, so only `‖μ_k‖²` matters. The classifier is the label-weighted
//! sample mean `β̂ = (1/n) Σ y·φ` and predicts positive iff `⟨φ, β̂⟩ > 0`.

mod experiment;
pub mod normal;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use experiment::{
    allocate, run, run_single_class_experiment, run_theorem1_experiment, run_theorem2_experiment, CurvePoint,
    ErrorEstimate, InequalityReport, PhatClass, PhatReport, RegimeStatus, SchemeResult, SingleClassResult,
    Theorem1Result, Theorem2Result, TheoryResult, Trend, Verdict,
};
pub use normal::{erfc, normal_cdf};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TheoryError {
    #[error("invalid theory config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot fit a classifier on zero samples")]
    EmptySample,
    #[error("uncertainty filter (gamma_u = {gamma_u}) selected no class")]
    NoClassSelected { gamma_u: f64 },
}

/// Which sign the sigmoid in the `p̂` expectation carries.
///
/// `AsProof` evaluates `E[1/(1+exp(‖μ‖²+‖μ‖Z))]`; `Standard` evaluates the
/// conventional `E[σ(‖μ‖²+‖μ‖Z)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmoidSign {
    AsProof,
    #[default]
    Standard,
}

impl SigmoidSign {
    pub const BOTH: [SigmoidSign; 2] = [SigmoidSign::AsProof, SigmoidSign::Standard];

    fn exponent_sign(self) -> f64 {
        match self {
            SigmoidSign::AsProof => 1.0,
            SigmoidSign::Standard => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// One class trained on `n` samples, using `mu_norms_sq[0]`.
    Single,
    /// Co-occurrence schemes at `rho0` and `rho`, using `mu_norms_sq[0..2]`.
    Cooccurrence,
    /// Equal split against uncertainty-filtered allocation over all classes.
    Uncertainty,
    #[default]
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub experiment: ExperimentKind,
    /// Feature dimension.
    pub d: usize,
    /// Number of object classes.
    pub k: usize,
    /// Samples per scheme.
    pub n: usize,
    /// `‖μ_k‖²` per class.
    pub mu_norms_sq: Vec<f64>,
    pub rho0: f64,
    pub rho: f64,
    /// Classes with `-ln p̂_k > gamma_u` are favored by the uncertainty scheme.
    pub gamma_u: f64,
    pub trials: usize,
    pub test_size: usize,
    pub seed: u64,
    pub sigmoid_sign: SigmoidSign,
    /// Monte Carlo draws per `p̂_k` estimate.
    pub phat_samples: usize,
    /// Allocation weight of a selected class relative to an unselected one.
    pub uncertain_weight: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::All,
            d: 1000,
            k: 2,
            n: 1000,
            mu_norms_sq: vec![1.0, 25.0],
            rho0: 0.8,
            rho: 0.2,
            gamma_u: 0.1,
            trials: 200,
            test_size: 10_000,
            seed: 0,
            sigmoid_sign: SigmoidSign::Standard,
            phat_samples: 100_000,
            uncertain_weight: 3.0,
        }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<(), TheoryError> {
        let bad = |m: String| Err(TheoryError::InvalidConfig(m));
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.test_size == 0 {
            return bad("test_size must be at least 1".into());
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.k == 0 || self.mu_norms_sq.len() != self.k {
            return bad(format!(
                "k = {} but mu_norms_sq has {} entries",
                self.k,
                self.mu_norms_sq.len()
            ));
        }
        if let Some(m) = self.mu_norms_sq.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return bad(format!("mu_norms_sq entries must be finite and >= 0, got {m}"));
        }
        if !(self.rho0 > 0.0 && self.rho0 < 1.0) {
            return bad(format!("rho0 must lie in (0, 1), got {}", self.rho0));
        }
        if !(self.rho > 0.0 && self.rho <= self.rho0) {
            return bad(format!("rho must lie in (0, rho0], got {}", self.rho));
        }
        if !self.gamma_u.is_finite() {
            return bad("gamma_u must be finite".into());
        }
        if self.phat_samples == 0 {
            return bad("phat_samples must be at least 1".into());
        }
        if !(self.uncertain_weight.is_finite() && self.uncertain_weight > 0.0) {
            return bad("uncertain_weight must be positive".into());
        }
        let needs_pair = matches!(
            self.experiment,
            ExperimentKind::Cooccurrence | ExperimentKind::Uncertainty | ExperimentKind::All
        );
        if needs_pair && self.k < 2 {
            return bad("this experiment needs at least two classes".into());
        }
        Ok(())
    }
}

/// Row-major `rows × d` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub d: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.d).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

/// Draws one row per label from `N(y·μ, I_d)` with `μ = (√mu_norm_sq, 0, …)`.
pub fn sample_rows(mu_norm_sq: f64, d: usize, labels: &[f64], rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let mu = mu_norm_sq.sqrt();
    let mut data = Vec::with_capacity(labels.len() * d);
    for &y in labels {
        let start = data.len();
        data.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        data[start] += y * mu;
    }
    FeatureMatrix { d, data }
}

/// `count` samples of class `k` sharing the label `y`.
pub fn sample_class_data(
    config: &TheoryConfig,
    k: usize,
    y: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureMatrix, TheoryError> {
    let mu_sq = *config.mu_norms_sq.get(k).ok_or_else(|| {
        TheoryError::InvalidConfig(format!(
            "class {k} out of range for {} classes",
            config.mu_norms_sq.len()
        ))
    })?;
    Ok(sample_rows(mu_sq, config.d, &vec![y; count], rng))
}

/// Per-class weight vector `β̂_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWeights {
    pub beta: Vec<f64>,
}

impl ClassifierWeights {
    pub fn zeros(d: usize) -> Self {
        Self { beta: vec![0.0; d] }
    }

    pub fn score(&self, phi: &[f64]) -> f64 {
        self.beta.iter().zip(phi).map(|(b, p)| b * p).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum()
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.beta.iter_mut().for_each(|b| *b *= factor);
        self
    }
}

/// `β̂ = (1/n) Σ y_i φ_i`.
pub fn fit_mean_classifier(features: &FeatureMatrix, labels: &[f64]) -> Result<ClassifierWeights, TheoryError> {
    let rows = features.rows();
    if features.data.len() != rows * features.d {
        return Err(TheoryError::DimensionMismatch {
            expected: rows * features.d,
            found: features.data.len(),
        });
    }
    if labels.len() != rows {
        return Err(TheoryError::DimensionMismatch {
            expected: rows,
            found: labels.len(),
        });
    }
    if rows == 0 {
        return Err(TheoryError::EmptySample);
    }
    let mut beta = vec![0.0; features.d];
    for (i, &y) in labels.iter().enumerate() {
        for (b, x) in beta.iter_mut().zip(features.row(i)) {
            *b += y * x;
        }
    }
    let inv = 1.0 / rows as f64;
    beta.iter_mut().for_each(|b| *b *= inv);
    Ok(ClassifierWeights { beta })
}

/// `Φ(-‖μ‖² / √(‖μ‖² + d/n))`.
pub fn closed_form_error_single(mu_norm_sq: f64, d: usize, n: usize) -> f64 {
    normal_cdf(-mu_norm_sq / (mu_norm_sq + d as f64 / n as f64).sqrt())
}

/// `Φ(-(ρ‖μ1‖² + ρ‖μ2‖²) / √(ρ²‖μ1‖² + ρ²‖μ2‖² + 2ρd/N))`.
pub fn closed_form_error_cooccur(rho: f64, mu1_sq: f64, mu2_sq: f64, d: usize, n: usize) -> f64 {
    let dn = d as f64 / n as f64;
    let num = rho * mu1_sq + rho * mu2_sq;
    let den = (rho * rho * mu1_sq + rho * rho * mu2_sq + rho * dn + rho * dn).sqrt();
    normal_cdf(-num / den)
}

/// Monte Carlo estimate of `E[1/(1 + exp(s·(‖μ‖² + ‖μ‖Z)))]`, `Z ~ N(0,1)`,
/// with `s = +1` for [`SigmoidSign::AsProof`] and `-1` for [`SigmoidSign::Standard`].
pub fn estimate_phat(mu_norm_sq: f64, n: usize, rng: &mut ChaCha8Rng, sign: SigmoidSign) -> f64 {
    let s = sign.exponent_sign();
    let mu = mu_norm_sq.sqrt();
    let total: f64 = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            1.0 / (1.0 + (s * (mu_norm_sq + mu * z)).exp())
        })
        .sum();
    total / n.max(1) as f64
}
