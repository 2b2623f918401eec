use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    closed_form_error_cooccur, closed_form_error_single, estimate_phat, fit_mean_classifier, sample_rows,
    ClassifierWeights, ExperimentKind, SigmoidSign, TheoryConfig, TheoryError,
};

/// Largest `‖μ‖²/d` still treated as `‖μ‖² ≪ d`.
const MU_RATIO_LIMIT: f64 = 0.1;
/// `d/n` must fall inside this range for the asymptotic constants to apply.
const KAPPA_RANGE: (f64, f64) = (0.1, 10.0);
/// Agreement and distinguishability band, in standard errors.
const SE_BAND: f64 = 3.0;
const Z95: f64 = 1.959963984540054;

const STREAM_SINGLE: u64 = 0;
const STREAM_COOCCUR: [u64; 2] = [1, 2];
const STREAM_UNCERTAINTY: [u64; 2] = [3, 4];
const STREAM_PHAT: u64 = 5;

fn trial_rng(seed: u64, scheme: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((scheme << 32) | index);
    rng
}

/// Mean of per-trial errors with its Monte Carlo standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub mean: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub trials: usize,
}

impl ErrorEstimate {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let se = (var / n).sqrt();
        Self {
            mean,
            se,
            ci95: (mean - Z95 * se, mean + Z95 * se),
            trials: xs.len(),
        }
    }

    fn clamp_ci(mut self) -> Self {
        self.ci95 = (self.ci95.0.max(0.0), self.ci95.1.min(1.0));
        self
    }

    /// Distance from `value` in standard errors; infinite when the SE is zero and the values differ.
    pub fn z_score(&self, value: f64) -> f64 {
        let diff = self.mean - value;
        if self.se > 0.0 {
            diff / self.se
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    FirstLower,
    SecondLower,
    Indistinguishable,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::FirstLower => "first_lower",
            Verdict::SecondLower => "second_lower",
            Verdict::Indistinguishable => "indistinguishable",
        }
    }
}

/// Observed direction of `first − second`, judged against 3 standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub first: String,
    pub second: String,
    /// Per-trial `err(first) − err(second)`.
    pub difference: ErrorEstimate,
    pub closed_form_difference: f64,
    pub verdict: Verdict,
}

impl InequalityReport {
    fn new(first: &SchemeResult, second: &SchemeResult, a: &[f64], b: &[f64]) -> Self {
        let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let difference = ErrorEstimate::from_samples(&diffs);
        let verdict = if difference.mean.abs() <= SE_BAND * difference.se {
            Verdict::Indistinguishable
        } else if difference.mean < 0.0 {
            Verdict::FirstLower
        } else {
            Verdict::SecondLower
        };
        Self {
            first: first.name.clone(),
            second: second.name.clone(),
            difference,
            closed_form_difference: first.closed_form - second.closed_form,
            verdict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub name: String,
    /// Training samples per class.
    pub allocation: Vec<usize>,
    pub per_class: Vec<ErrorEstimate>,
    pub closed_form_per_class: Vec<f64>,
    /// Averaged over classes (or the chained predictor's error).
    pub empirical: ErrorEstimate,
    pub closed_form: f64,
    pub z_score: f64,
    /// `|empirical − closed_form| ≤ 3 SE`.
    pub agrees: bool,
}

impl SchemeResult {
    fn new(
        name: String,
        allocation: Vec<usize>,
        per_class_trials: Vec<Vec<f64>>,
        closed_form_per_class: Vec<f64>,
        averaged: &[f64],
        closed_form: f64,
    ) -> Self {
        let empirical = ErrorEstimate::from_samples(averaged).clamp_ci();
        let z_score = empirical.z_score(closed_form);
        Self {
            name,
            allocation,
            per_class: per_class_trials
                .iter()
                .map(|t| ErrorEstimate::from_samples(t).clamp_ci())
                .collect(),
            closed_form_per_class,
            agrees: z_score.abs() <= SE_BAND,
            empirical,
            closed_form,
            z_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeStatus {
    pub within_regime: bool,
    pub max_mu_sq_over_d: f64,
    /// `d / n` for every per-class training-set size used.
    pub kappa: Vec<f64>,
    pub flags: Vec<String>,
}

impl RegimeStatus {
    fn assess(config: &TheoryConfig, sizes: &[usize]) -> Self {
        let mut flags = Vec::new();
        let max_ratio = config
            .mu_norms_sq
            .iter()
            .fold(0.0f64, |a, m| a.max(m / config.d as f64));
        if max_ratio > MU_RATIO_LIMIT {
            flags.push(format!("max |mu|^2/d = {max_ratio:.4} exceeds {MU_RATIO_LIMIT}"));
        }
        let mut kappa: Vec<f64> = Vec::new();
        for &n in sizes {
            let k = config.d as f64 / n as f64;
            if !kappa.contains(&k) {
                kappa.push(k);
            }
            if n > 0 && !(KAPPA_RANGE.0..=KAPPA_RANGE.1).contains(&k) {
                let msg = format!("d/n = {k:.4} (n = {n}) outside [{}, {}]", KAPPA_RANGE.0, KAPPA_RANGE.1);
                if !flags.contains(&msg) {
                    flags.push(msg);
                }
            }
        }
        Self {
            within_regime: flags.is_empty(),
            max_mu_sq_over_d: max_ratio,
            kappa,
            flags,
        }
    }
}

fn balanced_labels(n: usize) -> Vec<f64> {
    (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()
}

/// Test error of a predictor whose score on `(φ, y)` is `N(y·margin, norm_sq)`.
///
/// For the linear predictors here this is the exact distribution of
/// `⟨φ, β̂⟩` given `β̂`, so one normal draw per test point stands in for a
/// full `d`-dimensional feature draw.
fn projected_test_error(margin: f64, norm_sq: f64, test_size: usize, rng: &mut ChaCha8Rng) -> f64 {
    let sd = norm_sq.sqrt();
    let mut wrong = 0usize;
    for _ in 0..test_size {
        let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let z: f64 = rng.sample(StandardNormal);
        let score = y * margin + sd * z;
        wrong += usize::from((score > 0.0) != (y > 0.0));
    }
    wrong as f64 / test_size as f64
}

/// `⟨μ, β̂⟩` with `μ` on the first axis.
fn margin(w: &ClassifierWeights, mu_norm_sq: f64) -> f64 {
    w.beta[0] * mu_norm_sq.sqrt()
}

/// Trains on `n` balanced samples and returns the test error.
fn single_class_trial(mu_sq: f64, d: usize, n: usize, test_size: usize, rng: &mut ChaCha8Rng) -> f64 {
    let w = if n == 0 {
        ClassifierWeights::zeros(d)
    } else {
        let labels = balanced_labels(n);
        let features = sample_rows(mu_sq, d, &labels, rng);
        fit_mean_classifier(&features, &labels).expect("shapes are consistent")
    };
    projected_test_error(margin(&w, mu_sq), w.norm_sq(), test_size, rng)
}

fn par_trials<T: Send>(trials: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..trials as u64).into_par_iter().map(f).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleClassResult {
    pub mu_norm_sq: f64,
    pub n: usize,
    pub scheme: SchemeResult,
}

/// One class with `mu_norms_sq[0]` trained on `n` samples.
pub fn run_single_class_experiment(config: &TheoryConfig) -> Result<SingleClassResult, TheoryError> {
    config.validate()?;
    let (mu, d, n) = (config.mu_norms_sq[0], config.d, config.n);
    let errs = par_trials(config.trials, |t| {
        single_class_trial(
            mu,
            d,
            n,
            config.test_size,
            &mut trial_rng(config.seed, STREAM_SINGLE, t),
        )
    });
    let cf = closed_form_error_single(mu, d, n);
    Ok(SingleClassResult {
        mu_norm_sq: mu,
        n,
        scheme: SchemeResult::new("single".into(), vec![n], vec![errs.clone()], vec![cf], &errs, cf),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Decreasing,
    Flat,
    NonMonotone,
}

impl Trend {
    fn of(values: &[f64]) -> Self {
        let up = values.windows(2).all(|w| w[1] >= w[0]);
        let down = values.windows(2).all(|w| w[1] <= w[0]);
        match (up, down) {
            (true, true) => Trend::Flat,
            (true, false) => Trend::Increasing,
            (false, true) => Trend::Decreasing,
            (false, false) => Trend::NonMonotone,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rho: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Result {
    /// At `rho0` then at `rho`.
    pub schemes: Vec<SchemeResult>,
    pub inequality: InequalityReport,
    /// Closed form over `rho0·i/10`, `i = 1..=10`.
    pub closed_form_curve: Vec<CurvePoint>,
    /// Direction of the closed-form curve as `rho` grows.
    pub closed_form_trend: Trend,
}

/// Chained two-object predictor trained on `N` samples of which a fraction
/// `rho` has both objects present. Only those jointly positive samples feed
/// the estimators, each normalized by `N`.
fn cooccur_trial(config: &TheoryConfig, rho: f64, rng: &mut ChaCha8Rng) -> f64 {
    let joint = (rho * config.n as f64).round() as usize;
    let ones = vec![1.0; joint];
    let (mut m, mut norm_sq) = (0.0, 0.0);
    for &mu_sq in &config.mu_norms_sq[..2] {
        let w = if joint == 0 {
            ClassifierWeights::zeros(config.d)
        } else {
            let features = sample_rows(mu_sq, config.d, &ones, rng);
            fit_mean_classifier(&features, &ones)
                .expect("shapes are consistent")
                .scaled(joint as f64 / config.n as f64)
        };
        m += margin(&w, mu_sq);
        norm_sq += w.norm_sq();
    }
    projected_test_error(m, norm_sq, config.test_size, rng)
}

pub fn run_theorem1_experiment(config: &TheoryConfig) -> Result<Theorem1Result, TheoryError> {
    config.validate()?;
    if config.k < 2 {
        return Err(TheoryError::InvalidConfig(
            "co-occurrence experiment needs two classes".into(),
        ));
    }
    let (m1, m2) = (config.mu_norms_sq[0], config.mu_norms_sq[1]);
    let rhos = [config.rho0, config.rho];
    let mut runs = Vec::new();
    for (i, &rho) in rhos.iter().enumerate() {
        let errs = par_trials(config.trials, |t| {
            cooccur_trial(config, rho, &mut trial_rng(config.seed, STREAM_COOCCUR[i], t))
        });
        let cf = closed_form_error_cooccur(rho, m1, m2, config.d, config.n);
        let joint = (rho * config.n as f64).round() as usize;
        let name = format!("D{}(rho={rho})", i + 1);
        runs.push((
            SchemeResult::new(name, vec![joint, joint], vec![], vec![], &errs, cf),
            errs,
        ));
    }
    let inequality = InequalityReport::new(&runs[0].0, &runs[1].0, &runs[0].1, &runs[1].1);
    let closed_form_curve: Vec<CurvePoint> = (1..=10)
        .map(|i| {
            let rho = config.rho0 * i as f64 / 10.0;
            CurvePoint {
                rho,
                error: closed_form_error_cooccur(rho, m1, m2, config.d, config.n),
            }
        })
        .collect();
    let closed_form_trend = Trend::of(&closed_form_curve.iter().map(|p| p.error).collect::<Vec<_>>());
    Ok(Theorem1Result {
        schemes: runs.into_iter().map(|(s, _)| s).collect(),
        inequality,
        closed_form_curve,
        closed_form_trend,
    })
}

/// Splits `total` proportionally to `weights` with largest-remainder rounding;
/// ties go to the lower index.
pub fn allocate(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhatClass {
    pub class: usize,
    pub mu_norm_sq: f64,
    pub phat: f64,
    /// `-ln p̂`.
    pub uncertainty: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhatReport {
    pub sigmoid_sign: SigmoidSign,
    /// Whether this convention drove the filtered allocation.
    pub active: bool,
    pub classes: Vec<PhatClass>,
    /// `None` when no class passes the filter.
    pub allocation: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Result {
    pub phat: Vec<PhatReport>,
    /// Equal split, then uncertainty-filtered allocation.
    pub schemes: Vec<SchemeResult>,
    pub inequality: InequalityReport,
}

fn phat_report(config: &TheoryConfig, sign: SigmoidSign) -> PhatReport {
    let sign_idx = SigmoidSign::BOTH.iter().position(|s| *s == sign).unwrap_or(0) as u64;
    let classes: Vec<PhatClass> = config
        .mu_norms_sq
        .iter()
        .enumerate()
        .map(|(k, &mu)| {
            let mut rng = trial_rng(config.seed, STREAM_PHAT, (sign_idx << 16) | k as u64);
            let phat = estimate_phat(mu, config.phat_samples, &mut rng, sign);
            let uncertainty = -phat.ln();
            PhatClass {
                class: k,
                mu_norm_sq: mu,
                phat,
                uncertainty,
                selected: uncertainty > config.gamma_u,
            }
        })
        .collect();
    let allocation = classes.iter().any(|c| c.selected).then(|| {
        let w: Vec<f64> = classes
            .iter()
            .map(|c| if c.selected { config.uncertain_weight } else { 1.0 })
            .collect();
        allocate(config.n, &w)
    });
    PhatReport {
        sigmoid_sign: sign,
        active: sign == config.sigmoid_sign,
        classes,
        allocation,
    }
}

fn allocation_scheme(
    config: &TheoryConfig,
    name: String,
    allocation: Vec<usize>,
    stream: u64,
) -> (SchemeResult, Vec<f64>) {
    let per_trial: Vec<Vec<f64>> = par_trials(config.trials, |t| {
        let mut rng = trial_rng(config.seed, stream, t);
        config
            .mu_norms_sq
            .iter()
            .zip(&allocation)
            .map(|(&mu, &n)| single_class_trial(mu, config.d, n, config.test_size, &mut rng))
            .collect()
    });
    let k = config.k;
    let per_class: Vec<Vec<f64>> = (0..k).map(|c| per_trial.iter().map(|t| t[c]).collect()).collect();
    let averaged: Vec<f64> = per_trial.iter().map(|t| t.iter().sum::<f64>() / k as f64).collect();
    let cf_per_class: Vec<f64> = config
        .mu_norms_sq
        .iter()
        .zip(&allocation)
        .map(|(&mu, &n)| closed_form_error_single(mu, config.d, n))
        .collect();
    let cf = cf_per_class.iter().sum::<f64>() / k as f64;
    (
        SchemeResult::new(name, allocation, per_class, cf_per_class, &averaged, cf),
        averaged,
    )
}

pub fn run_theorem2_experiment(config: &TheoryConfig) -> Result<Theorem2Result, TheoryError> {
    config.validate()?;
    let phat: Vec<PhatReport> = SigmoidSign::BOTH.iter().map(|&s| phat_report(config, s)).collect();
    let active = phat.iter().find(|r| r.active).expect("active sign is one of both");
    let filtered = active.allocation.clone().ok_or(TheoryError::NoClassSelected {
        gamma_u: config.gamma_u,
    })?;
    let equal = allocate(config.n, &vec![1.0; config.k]);
    let (s1, e1) = allocation_scheme(config, "equal_split".into(), equal, STREAM_UNCERTAINTY[0]);
    let (s2, e2) = allocation_scheme(config, "uncertainty_filtered".into(), filtered, STREAM_UNCERTAINTY[1]);
    let inequality = InequalityReport::new(&s1, &s2, &e1, &e2);
    Ok(Theorem2Result {
        phat,
        schemes: vec![s1, s2],
        inequality,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryResult {
    pub config: TheoryConfig,
    /// `within_stated_regime` or `outside_stated_regime`.
    pub status: String,
    pub regime: RegimeStatus,
    pub single: Option<SingleClassResult>,
    pub cooccurrence: Option<Theorem1Result>,
    pub uncertainty: Option<Theorem2Result>,
}

/// Runs the experiments selected by `config.experiment`.
pub fn run(config: &TheoryConfig) -> Result<TheoryResult, TheoryError> {
    config.validate()?;
    let kind = config.experiment;
    let want = |k: ExperimentKind| kind == k || kind == ExperimentKind::All;
    let single = want(ExperimentKind::Single)
        .then(|| run_single_class_experiment(config))
        .transpose()?;
    let cooccurrence = want(ExperimentKind::Cooccurrence)
        .then(|| run_theorem1_experiment(config))
        .transpose()?;
    let uncertainty = want(ExperimentKind::Uncertainty)
        .then(|| run_theorem2_experiment(config))
        .transpose()?;

    let mut sizes = Vec::new();
    for s in single.iter().map(|r| &r.scheme) {
        sizes.extend(&s.allocation);
    }
    if cooccurrence.is_some() {
        sizes.push(config.n);
    }
    for s in uncertainty.iter().flat_map(|r| &r.schemes) {
        sizes.extend(&s.allocation);
    }
    let regime = RegimeStatus::assess(config, &sizes);
    if !regime.within_regime {
        log::warn!("theory run outside stated regime: {}", regime.flags.join("; "));
    }
    Ok(TheoryResult {
        config: config.clone(),
        status: if regime.within_regime {
            "within_stated_regime".into()
        } else {
            "outside_stated_regime".into()
        },
        regime,
        single,
        cooccurrence,
        uncertainty,
    })
}

fn scheme_rows(out: &mut String, schemes: &[SchemeResult]) {
    for s in schemes {
        let _ = writeln!(
            out,
            "  {:<28} {:>12.6e} ± {:<11.4e} {:>12.6e}  z={:>+7.3}  {}",
            s.name,
            s.empirical.mean,
            s.empirical.se,
            s.closed_form,
            s.z_score,
            if s.agrees { "agree" } else { "DISAGREE" }
        );
    }
}

fn inequality_row(out: &mut String, r: &InequalityReport) {
    let _ = writeln!(
        out,
        "  {} - {}: {:+.6e} ± {:.4e} (95% CI [{:+.4e}, {:+.4e}]), closed form {:+.6e} -> {}",
        r.first,
        r.second,
        r.difference.mean,
        r.difference.se,
        r.difference.ci95.0,
        r.difference.ci95.1,
        r.closed_form_difference,
        r.verdict.as_str()
    );
}

impl TheoryResult {
    /// Human-readable summary table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let c = &self.config;
        let _ = writeln!(
            out,
            "d={} k={} n={} mu_norms_sq={:?} rho0={} rho={} trials={} test_size={} seed={}",
            c.d, c.k, c.n, c.mu_norms_sq, c.rho0, c.rho, c.trials, c.test_size, c.seed
        );
        let _ = writeln!(out, "status: {}", self.status);
        for f in &self.regime.flags {
            let _ = writeln!(out, "  flag: {f}");
        }
        let _ = writeln!(
            out,
            "  {:<28} {:>12}   {:<11} {:>12}",
            "scheme", "empirical", "se", "closed form"
        );
        if let Some(s) = &self.single {
            let _ = writeln!(out, "single class (|mu|^2={}, n={}):", s.mu_norm_sq, s.n);
            scheme_rows(&mut out, std::slice::from_ref(&s.scheme));
        }
        if let Some(t) = &self.cooccurrence {
            let _ = writeln!(out, "co-occurrence:");
            scheme_rows(&mut out, &t.schemes);
            inequality_row(&mut out, &t.inequality);
            let _ = writeln!(out, "  closed form vs rho: {:?}", t.closed_form_trend);
        }
        if let Some(t) = &self.uncertainty {
            let _ = writeln!(out, "uncertainty:");
            for r in &t.phat {
                let ph: Vec<String> = r.classes.iter().map(|c| format!("{:.6}", c.phat)).collect();
                let _ = writeln!(
                    out,
                    "  p_hat[{:?}{}]: [{}] allocation {:?}",
                    r.sigmoid_sign,
                    if r.active { ", active" } else { "" },
                    ph.join(", "),
                    r.allocation
                );
            }
            scheme_rows(&mut out, &t.schemes);
            inequality_row(&mut out, &t.inequality);
        }
        out
    }
}
