//! Evaluation metrics and the bound-verification experiments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{batch_estimate, init_bases, EST_EPS};
use crate::net::forward;
use crate::scalar::Scalar;
use crate::synth::{generate, Dataset, GeneratorKind, SyntheticConfig};
use crate::train::{learned_transitions, run_training, RunHistory, TrainConfig};
use crate::Params;
use crate::transition::{align_bases, frobenius_error, l1_error, AssignmentWeights, BasisSet, MAX_ALIGN_MODES};

/// Fraction of exact matches.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Estimation error of `estimated` against `truth` up to relabeling.
///
/// Equal counts use the best permutation; otherwise each true basis is
/// matched to its nearest estimate and the distances are averaged.
pub fn aligned_error<F: Scalar>(estimated: &BasisSet<F>, truth: &BasisSet<F>) -> Result<F> {
    if estimated.classes() != truth.classes() {
        return Err(Error::DimensionMismatch("bases disagree on the class count".into()));
    }
    if estimated.num_modes() == truth.num_modes() && truth.num_modes() <= MAX_ALIGN_MODES {
        return Ok(align_bases(estimated, truth)?.error);
    }
    let mut total = F::zero();
    for t in truth.iter() {
        let mut best = F::infinity();
        for e in estimated.iter() {
            best = best.min(l1_error(e, t)?);
        }
        total = total + best;
    }
    Ok(total / F::of(truth.num_modes() as f64))
}

/// Mean silhouette coefficient under Euclidean distance.
pub fn silhouette<F: Scalar>(features: &[Vec<F>], labels: &[usize]) -> Result<F> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} points for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; clusters];
    for &l in labels {
        sizes[l] += 1;
    }
    let present: Vec<usize> = (0..clusters).filter(|&c| sizes[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::InvalidConfig("silhouette needs at least 2 clusters".into()));
    }
    if let Some(&c) = present.iter().find(|&&c| sizes[c] < 2) {
        return Err(Error::InvalidConfig(format!("cluster {c} is a singleton")));
    }
    let n = features.len();
    let mut total = F::zero();
    let mut sums = vec![F::zero(); clusters];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = F::zero());
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = features[i]
                .iter()
                .zip(&features[j])
                .fold(F::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
                .sqrt();
            sums[labels[j]] = sums[labels[j]] + d;
        }
        let own = labels[i];
        let a = sums[own] / F::of((sizes[own] - 1) as f64);
        let b = present
            .iter()
            .filter(|&&c| c != own)
            .map(|&c| sums[c] / F::of(sizes[c] as f64))
            .fold(F::infinity(), |m, v| m.min(v));
        let m = a.max(b);
        if m > F::zero() {
            total = total + (b - a) / m;
        }
    }
    Ok(total / F::of(n as f64))
}

/// Silhouette of the learned features h(x) on `indices`, labelled by the
/// argmax of the true mode weights.
pub fn feature_silhouette(params: &Params, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    let mut features = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let inst = dataset
            .instances
            .get(i)
            .ok_or_else(|| Error::DimensionMismatch(format!("instance {i} out of range")))?;
        features.push(forward(params, &inst.features)?.features);
        labels.push(inst.true_mode());
    }
    silhouette(&features, &labels)
}

/// Least-squares line with goodness of fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Clamped to `[0, 1]`.
    pub r2: f64,
    pub r2_raw: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::DimensionMismatch("a line fit needs at least 2 paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("a line fit needs at least 2 distinct x values".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let r2_raw = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(LineFit { slope, intercept, r2: r2_raw.clamp(0.0, 1.0), r2_raw })
}

/// Verdict on an estimation-error trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceVerdict {
    pub monotone_trend: bool,
    /// Final over initial error.
    pub ratio: f64,
    pub no_progress: bool,
    /// Largest single-step increase of the smoothed trace after warm-up.
    pub worst_uptick: f64,
}

pub const TRACE_WINDOW: usize = 5;
pub const TRACE_ALLOWANCE: f64 = 0.01;

/// Trailing moving average (shorter windows at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Checks that the smoothed error trace does not rise by more than the
/// allowance at any step from the end of warm-up on.
pub fn check_trace(initial: f64, trace: &[f64], warm_up: usize) -> TraceVerdict {
    let smooth = moving_average(trace, TRACE_WINDOW);
    let start = warm_up.min(smooth.len().saturating_sub(1));
    let mut worst = f64::NEG_INFINITY;
    for w in smooth[start..].windows(2) {
        worst = worst.max(w[1] - w[0]);
    }
    let worst_uptick = if worst.is_finite() { worst.max(0.0) } else { 0.0 };
    let last = trace.last().copied().unwrap_or(initial);
    let ratio = if initial > 0.0 { last / initial } else { 1.0 };
    TraceVerdict {
        monotone_trend: worst_uptick <= TRACE_ALLOWANCE,
        ratio,
        no_progress: ratio >= 0.99,
        worst_uptick,
    }
}

pub fn et_trace_check(history: &RunHistory) -> Result<TraceVerdict> {
    let trace = history.e_t_trace();
    if trace.is_empty() {
        return Err(Error::InvalidConfig("history has no estimation-error trace".into()));
    }
    let initial = history.initial_e_t.unwrap_or(trace[0]);
    Ok(check_trace(initial, &trace, history.warm_up_epochs))
}

/// Sweep outcome aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub variable: String,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `per_seed[i][s]`: metric at `values[i]` for `seeds[s]`.
    pub per_seed: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `"log-log"` or `"linear"`.
    pub axes: String,
    pub fit: LineFit,
    /// Analytic prediction per value, where one exists.
    pub predicted: Option<Vec<f64>>,
}

impl ExperimentResult {
    fn build(
        variable: &str,
        values: Vec<f64>,
        seeds: Vec<u64>,
        per_seed: Vec<Vec<f64>>,
        log_log: bool,
        predicted: Option<Vec<f64>>,
    ) -> Result<Self> {
        let mean: Vec<f64> = per_seed.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
        let std: Vec<f64> = per_seed
            .iter()
            .zip(&mean)
            .map(|(r, m)| {
                let denom = (r.len().max(2) - 1) as f64;
                (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / denom).sqrt()
            })
            .collect();
        let fit = if log_log {
            let lx: Vec<f64> = values.iter().map(|v| v.ln()).collect();
            let ly: Vec<f64> = mean.iter().map(|v| v.max(1e-12).ln()).collect();
            fit_line(&lx, &ly)?
        } else {
            fit_line(&values, &mean)?
        };
        Ok(ExperimentResult {
            variable: variable.into(),
            values,
            seeds,
            per_seed,
            mean,
            std,
            axes: if log_log { "log-log" } else { "linear" }.into(),
            fit,
            predicted,
        })
    }

    /// `value,seed,metric` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},seed,metric\n", self.variable);
        for (v, row) in self.values.iter().zip(&self.per_seed) {
            for (seed, m) in self.seeds.iter().zip(row) {
                s.push_str(&format!("{v},{seed},{m}\n"));
            }
        }
        s
    }
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.len() < 3 {
        return Err(Error::InvalidConfig(format!("need at least 3 seeds, got {}", seeds.len())));
    }
    Ok(())
}

/// Mean Frobenius distance between the true and learned per-instance
/// transitions on the held-out split.
pub fn mixed_matrix_error(dataset: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let out = run_training(dataset, cfg)?;
    let state = out.estimator.ok_or_else(|| {
        Error::InvalidConfig("mixed-matrix error needs a variant with transition estimates".into())
    })?;
    let learned = learned_transitions(&out.params, state.bases(), dataset, &out.holdout)?;
    let mut total = 0.0;
    for (&i, m) in out.holdout.iter().zip(&learned) {
        total += frobenius_error(&dataset.true_transition(i), m)?;
    }
    Ok(total / out.holdout.len() as f64)
}

/// Error of the learned mixed transition as the number of bases grows.
/// Data for seed `s` is generated with `synth.seed = s`; training uses the
/// same seed.
pub fn k_scaling_experiment(
    synth: &SyntheticConfig,
    train: &TrainConfig,
    k_values: &[usize],
    seeds: &[u64],
) -> Result<ExperimentResult> {
    let values: Vec<f64> = k_values.iter().map(|&k| k as f64).collect();
    run_sweep(SweepVariable::K, &values, seeds, synth, train)
}

/// Estimator error and its analytic prediction on one contaminated dataset.
///
/// Each instance is assigned to the argmax of its true weights and
/// labelled with its clean label; one full-data batch with zero momentum
/// then gives the per-mode confusion matrix.
pub fn epsilon_trial(dataset: &Dataset) -> Result<(f64, f64)> {
    let k = dataset.num_modes();
    let c = dataset.num_classes;
    let anchors: Vec<_> = dataset.instances.iter().filter(|i| i.anchor_flag).collect();
    if anchors.is_empty() {
        return Err(Error::InvalidConfig("dataset has no anchor instances".into()));
    }
    let omega: Vec<_> = anchors.iter().map(|i| AssignmentWeights::one_hot(i.true_mode(), k)).collect();
    let proxy: Vec<usize> = anchors.iter().map(|i| i.clean_label).collect();
    let noisy: Vec<usize> = anchors.iter().map(|i| i.noisy_label).collect();
    let prior = init_bases(k, c, 1.0)?;
    let est = batch_estimate(&omega, &proxy, &noisy, &prior, EST_EPS)?;

    // contamination weight on the owning mode, read off the data
    let eps = anchors
        .iter()
        .map(|i| 1.0 - i.true_mode_weights.as_slice()[i.true_mode()])
        .fold(0.0, f64::max);
    let mut measured = 0.0;
    let mut predicted = 0.0;
    for (kk, truth) in dataset.truth.iter().enumerate() {
        measured += frobenius_error(est.get(kk), truth)?;
        if k > 1 {
            let mut mean_others = vec![0.0; c * c];
            for (l, other) in dataset.truth.iter().enumerate() {
                if l != kk {
                    for (m, &v) in mean_others.iter_mut().zip(other.entries()) {
                        *m += v / (k - 1) as f64;
                    }
                }
            }
            let gap: f64 = mean_others
                .iter()
                .zip(truth.entries())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            predicted += eps * gap;
        }
    }
    Ok((measured / k as f64, predicted / k as f64))
}

/// Estimator error on anchor-contaminated data across contamination levels,
/// with the analytic prediction at each level and a linear fit.
pub fn epsilon_robustness_experiment(
    synth: &SyntheticConfig,
    eps_values: &[f64],
    seeds: &[u64],
) -> Result<ExperimentResult> {
    run_sweep(SweepVariable::Epsilon, eps_values, seeds, synth, &TrainConfig::default())
}

/// Quantity varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVariable {
    /// Number of bases on manifold data; metric is the mixed-matrix error.
    #[serde(alias = "K")]
    K,
    /// Decoupling temperature; metric is the final aligned E_T.
    Tau,
    /// Decoupling weight; metric is the final aligned E_T.
    Lambda,
    /// Anchor contamination; metric is the oracle estimator error.
    Epsilon,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::K => "K",
            SweepVariable::Tau => "tau",
            SweepVariable::Lambda => "lambda",
            SweepVariable::Epsilon => "epsilon",
        }
    }

    fn log_log(self) -> bool {
        self == SweepVariable::K
    }
}

/// Checks the declaration before any point is evaluated.
pub fn validate_sweep(var: SweepVariable, values: &[f64], seeds: &[u64], synth: &SyntheticConfig) -> Result<()> {
    check_seeds(seeds)?;
    if values.len() < 2 {
        return Err(Error::InvalidConfig(format!("{} sweep needs at least 2 values", var.name())));
    }
    let bad = |msg: String| Err(Error::InvalidConfig(msg));
    match var {
        SweepVariable::K => {
            if synth.generator != GeneratorKind::Manifold {
                return bad("K scaling needs the manifold generator".into());
            }
            if let Some(v) = values.iter().find(|&&v| !(v >= 1.0 && v.fract() == 0.0)) {
                return bad(format!("K values must be positive integers, got {v}"));
            }
        }
        SweepVariable::Tau => {
            if let Some(v) = values.iter().find(|&&v| !(v > 0.0)) {
                return bad(format!("tau values must be positive, got {v}"));
            }
        }
        SweepVariable::Lambda => {
            if let Some(v) = values.iter().find(|&&v| !(v >= 0.0)) {
                return bad(format!("lambda values must be non-negative, got {v}"));
            }
        }
        SweepVariable::Epsilon => {
            if let Some(v) = values.iter().find(|&&v| !(0.0..=0.5).contains(&v)) {
                return bad(format!("epsilon values must lie in [0, 0.5], got {v}"));
            }
        }
    }
    Ok(())
}

/// Metric (and analytic prediction, if any) at one sweep value and seed.
/// Data is generated with `synth.seed = seed`; training uses the same seed.
pub fn sweep_point(
    var: SweepVariable,
    value: f64,
    seed: u64,
    synth: &SyntheticConfig,
    train: &TrainConfig,
) -> Result<(f64, Option<f64>)> {
    let synth = SyntheticConfig { seed, ..synth.clone() };
    let train = TrainConfig { seed, ..train.clone() };
    match var {
        SweepVariable::K => {
            let cfg = TrainConfig { num_modes: value as usize, ..train };
            Ok((mixed_matrix_error(&generate(&synth)?, &cfg)?, None))
        }
        SweepVariable::Tau | SweepVariable::Lambda => {
            let cfg = if var == SweepVariable::Tau {
                TrainConfig { tau: value, ..train }
            } else {
                TrainConfig { lambda: value, ..train }
            };
            let data = generate(&synth)?;
            let out = run_training(&data, &cfg)?;
            let state = out.estimator.ok_or_else(|| {
                Error::InvalidConfig(format!("{} sweep needs a variant with transition estimates", var.name()))
            })?;
            Ok((aligned_error(state.bases(), &data.truth)?, None))
        }
        SweepVariable::Epsilon => {
            let cfg = SyntheticConfig { generator: GeneratorKind::Epsilon, epsilon: value, ..synth };
            let (m, p) = epsilon_trial(&generate(&cfg)?)?;
            Ok((m, Some(p)))
        }
    }
}

/// Aggregates `points[i][s]` (value `i`, seed `s`) into a fitted result.
pub fn assemble_sweep(
    var: SweepVariable,
    values: &[f64],
    seeds: &[u64],
    points: Vec<Vec<(f64, Option<f64>)>>,
) -> Result<ExperimentResult> {
    check_seeds(seeds)?;
    if points.len() != values.len() || points.iter().any(|r| r.len() != seeds.len()) {
        return Err(Error::DimensionMismatch("sweep points do not match values x seeds".into()));
    }
    let per_seed: Vec<Vec<f64>> = points.iter().map(|r| r.iter().map(|p| p.0).collect()).collect();
    let predicted = points
        .iter()
        .map(|r| r.iter().map(|p| p.1).sum::<Option<f64>>().map(|t| t / seeds.len() as f64))
        .collect::<Option<Vec<f64>>>();
    ExperimentResult::build(var.name(), values.to_vec(), seeds.to_vec(), per_seed, var.log_log(), predicted)
}

/// Sequential sweep over every (value, seed) pair.
pub fn run_sweep(
    var: SweepVariable,
    values: &[f64],
    seeds: &[u64],
    synth: &SyntheticConfig,
    train: &TrainConfig,
) -> Result<ExperimentResult> {
    validate_sweep(var, values, seeds, synth)?;
    let points = values
        .iter()
        .map(|&v| seeds.iter().map(|&s| sweep_point(var, v, s, synth, train)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    assemble_sweep(var, values, seeds, points)
}

/// Pass/fail of one named threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: String,
    pub passed: bool,
    pub detail: String,
}

pub const K_SLACK: f64 = 0.02;
pub const K_MAX_SLOPE: f64 = -0.5;
pub const K_MIN_R2: f64 = 0.7;
pub const EPS_MIN_R2: f64 = 0.95;
pub const EPS_MAX_GAP: f64 = 0.05;

/// Trend, slope and fit thresholds for a K sweep.
pub fn k_scaling_verdicts(r: &ExperimentResult) -> Vec<Verdict> {
    let worst_rise = r.mean.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    vec![
        Verdict {
            criterion: "non-increasing in K".into(),
            passed: worst_rise <= K_SLACK,
            detail: format!("largest rise {worst_rise:.4} (slack {K_SLACK})"),
        },
        Verdict {
            criterion: "log-log slope".into(),
            passed: r.fit.slope <= K_MAX_SLOPE,
            detail: format!("slope {:.3} (max {K_MAX_SLOPE})", r.fit.slope),
        },
        Verdict {
            criterion: "log-log R2".into(),
            passed: r.fit.r2 >= K_MIN_R2,
            detail: format!("R2 {:.3} (min {K_MIN_R2})", r.fit.r2),
        },
    ]
}

/// Linearity and agreement with the analytic prediction for an epsilon sweep.
pub fn epsilon_verdicts(r: &ExperimentResult) -> Vec<Verdict> {
    let gap = match &r.predicted {
        Some(p) => r.mean.iter().zip(p).map(|(m, p)| (m - p).abs()).fold(0.0, f64::max),
        None => f64::INFINITY,
    };
    vec![
        Verdict {
            criterion: "linear R2".into(),
            passed: r.fit.r2 >= EPS_MIN_R2,
            detail: format!("R2 {:.4} (min {EPS_MIN_R2})", r.fit.r2),
        },
        Verdict {
            criterion: "matches prediction".into(),
            passed: gap <= EPS_MAX_GAP,
            detail: format!("largest |measured - predicted| {gap:.4} (max {EPS_MAX_GAP})"),
        },
    ]
}

/// Verdicts that apply to a sweep of `var`; empty when none are defined.
pub fn sweep_verdicts(var: SweepVariable, r: &ExperimentResult) -> Vec<Verdict> {
    match var {
        SweepVariable::K => k_scaling_verdicts(r),
        SweepVariable::Epsilon => epsilon_verdicts(r),
        SweepVariable::Tau | SweepVariable::Lambda => Vec::new(),
    }
}
