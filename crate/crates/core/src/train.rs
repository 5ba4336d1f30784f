//! Training loop for the corrected objective plus decoupling regularizer,
//! and the ablation variants.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{init_bases, EstimatorState};
use crate::metrics::{accuracy, aligned_error};
use crate::net::{
    assignment, compute_gradients, corrected_posterior, forward, Correction, GateSource, LossSpec,
    NetworkParams, Sample, Shape, PROB_FLOOR,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::synth::Dataset;
use crate::transition::{argmax, AssignmentWeights, BasisSet};
use crate::{Bases, Params, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Mind,
    CeOnly,
    #[serde(rename = "global_T", alias = "global_t")]
    GlobalT,
    NoDec,
    NoMomentum,
    OracleOmega,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Mind,
        Variant::CeOnly,
        Variant::GlobalT,
        Variant::NoDec,
        Variant::NoMomentum,
        Variant::OracleOmega,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mind => "mind",
            Variant::CeOnly => "ce_only",
            Variant::GlobalT => "global_T",
            Variant::NoDec => "no_dec",
            Variant::NoMomentum => "no_momentum",
            Variant::OracleOmega => "oracle_omega",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(s))
    }

    /// Whether the variant keeps transition estimates at all.
    pub fn estimates(self) -> bool {
        self != Variant::CeOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub num_modes: usize,
    pub momentum: f64,
    pub warm_up_epochs: usize,
    pub tau: f64,
    pub seed: u64,
    pub variant: Variant,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub init_diag: f64,
    /// Block the loss gradient through the gate weights.
    pub detach_gate: bool,
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 128,
            learning_rate: 0.05,
            lambda: 0.01,
            num_modes: 3,
            momentum: 0.99,
            warm_up_epochs: 5,
            tau: 0.1,
            seed: 42,
            variant: Variant::Mind,
            hidden_dim: 64,
            feature_dim: 36,
            init_diag: 0.9,
            detach_gate: false,
            holdout_fraction: 0.2,
        }
    }
}

/// Settings after the variant overrides are applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Effective {
    pub num_modes: usize,
    pub lambda: f64,
    pub momentum: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(format!("holdout_fraction must lie in (0, 1), got {}", self.holdout_fraction));
        }
        if self.num_modes == 0 || self.hidden_dim == 0 {
            return bad("num_modes and hidden_dim must be >= 1".into());
        }
        let eff = self.effective();
        if self.feature_dim % eff.num_modes != 0 {
            return bad(format!(
                "feature_dim {} is not divisible by num_modes {}",
                self.feature_dim, eff.num_modes
            ));
        }
        if eff.lambda > 0.0 && self.feature_dim / eff.num_modes < 2 {
            return bad(format!(
                "feature_dim / num_modes must be >= 2 when lambda > 0, got {}",
                self.feature_dim / eff.num_modes
            ));
        }
        Ok(())
    }

    pub fn effective(&self) -> Effective {
        let mut e = Effective { num_modes: self.num_modes, lambda: self.lambda, momentum: self.momentum };
        match self.variant {
            Variant::GlobalT => {
                e.num_modes = 1;
                e.lambda = 0.0;
            }
            Variant::NoDec | Variant::CeOnly => e.lambda = 0.0,
            Variant::NoMomentum => e.momentum = 0.0,
            Variant::Mind | Variant::OracleOmega => {}
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_dec: f64,
    pub acc_clean: f64,
    /// Absent when the variant keeps no estimates.
    pub e_t_aligned: Option<f64>,
    pub omega_entropy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub variant: Variant,
    pub warm_up_epochs: usize,
    /// Aligned error of the initial bases.
    pub initial_e_t: Option<f64>,
    pub records: Vec<EpochRecord>,
    /// Instances whose observed-label probability was floored.
    pub clamped: usize,
}

pub const CSV_HEADER: &str = "epoch,loss_total,loss_ce,loss_dec,acc_clean,e_t_aligned,omega_entropy";

impl RunHistory {
    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn e_t_trace(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.e_t_aligned).collect()
    }

    /// One header row, one row per epoch; absent values are empty fields.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.loss_total,
                r.loss_ce,
                r.loss_dec,
                r.acc_clean,
                opt(r.e_t_aligned),
                opt(r.omega_entropy)
            );
        }
        s
    }
}

/// Value of the per-instance objective.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLoss<F> {
    pub loss: F,
    /// Corrected posterior.
    pub q: Vec<F>,
    pub clamped: bool,
}

/// `-log q_y + lambda * dec` with `q_j = sum_i p_i (sum_k w_k T^(k))_ij`.
pub fn total_loss<F: Scalar>(
    posterior: &[F],
    omega: &AssignmentWeights<F>,
    bases: &BasisSet<F>,
    noisy: usize,
    lambda: F,
    dec_loss: F,
) -> Result<InstanceLoss<F>> {
    let c = bases.classes();
    if posterior.len() != c || omega.len() != bases.num_modes() {
        return Err(Error::DimensionMismatch(format!(
            "posterior of length {} and {} weights for {} bases of {c} classes",
            posterior.len(),
            omega.len(),
            bases.num_modes()
        )));
    }
    if noisy >= c {
        return Err(Error::InvalidLabel { label: noisy, classes: c });
    }
    let q = corrected_posterior(posterior, omega.as_slice(), bases);
    let floor = F::of(PROB_FLOOR);
    let clamped = q[noisy] < floor;
    let ce = -q[noisy].max(floor).ln();
    let loss = if lambda == F::zero() { ce } else { ce + lambda * dec_loss };
    Ok(InstanceLoss { loss, q, clamped })
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: RunHistory,
    pub params: Params,
    pub estimator: Option<EstimatorState<f64>>,
    /// Indices of the held-out instances (clean labels used for accuracy).
    pub holdout: Vec<usize>,
}

/// Deterministic train / held-out split.
pub fn split_indices(n: usize, holdout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::stream(seed, 11).shuffle(&mut idx);
    let n_hold = ((n as f64 * holdout_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let holdout = idx[..n_hold].to_vec();
    let mut train = idx[n_hold..].to_vec();
    train.sort_unstable();
    let mut holdout_sorted = holdout;
    holdout_sorted.sort_unstable();
    (train, holdout_sorted)
}

pub fn network_shape(dataset: &Dataset, cfg: &TrainConfig) -> Shape {
    Shape {
        input: dataset.input_dim,
        hidden: cfg.hidden_dim,
        feature: cfg.feature_dim,
        classes: dataset.num_classes,
        subspaces: cfg.effective().num_modes,
    }
}

pub fn run_training(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let eff = cfg.effective();
    let n = dataset.instances.len();
    if n < 2 {
        return Err(Error::InvalidConfig("dataset needs at least 2 instances".into()));
    }
    if let Some(bad) = dataset.instances.iter().find(|i| i.features.len() != dataset.input_dim) {
        return Err(Error::DimensionMismatch(format!(
            "instance has {} features, dataset declares {}",
            bad.features.len(),
            dataset.input_dim
        )));
    }
    if cfg.variant == Variant::OracleOmega && eff.num_modes != dataset.num_modes() {
        return Err(Error::DimensionMismatch(format!(
            "oracle_omega needs num_modes = {} (the generator's), got {}",
            dataset.num_modes(),
            eff.num_modes
        )));
    }

    let shape = network_shape(dataset, cfg);
    let mut params = NetworkParams::init(shape, cfg.tau, &mut Rng::stream(cfg.seed, 12))?;
    let mut estimator = if cfg.variant.estimates() {
        let b = init_bases(eff.num_modes, dataset.num_classes, cfg.init_diag)?;
        Some(EstimatorState::new(b, eff.momentum, cfg.warm_up_epochs)?)
    } else {
        None
    };
    let (mut train, holdout) = split_indices(n, cfg.holdout_fraction, cfg.seed);
    let mut shuffle_rng = Rng::stream(cfg.seed, 10);

    let initial_e_t = match &estimator {
        Some(s) => Some(aligned_error(s.bases(), &dataset.truth)?),
        None => None,
    };
    let mut history = RunHistory {
        variant: cfg.variant,
        warm_up_epochs: cfg.warm_up_epochs,
        initial_e_t,
        records: Vec::with_capacity(cfg.epochs),
        clamped: 0,
    };
    let lr = cfg.learning_rate;

    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut train);
        let (mut sum_total, mut sum_ce, mut sum_dec, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in train.chunks(cfg.batch_size) {
            let oracle: Vec<Weights> = if cfg.variant == Variant::OracleOmega {
                chunk.iter().map(|&i| dataset.instances[i].true_mode_weights.clone()).collect()
            } else {
                Vec::new()
            };
            if let Some(state) = estimator.as_mut() {
                if state.warm_up_gate(epoch) {
                    let mut omega = Vec::with_capacity(chunk.len());
                    let mut proxy = Vec::with_capacity(chunk.len());
                    for (b, &i) in chunk.iter().enumerate() {
                        let fw = forward(&params, &dataset.instances[i].features).map_err(|e| diverged(epoch, e))?;
                        proxy.push(argmax(&fw.posterior));
                        omega.push(if oracle.is_empty() {
                            assignment(&fw.features, &params.partition)?
                        } else {
                            oracle[b].clone()
                        });
                    }
                    let noisy: Vec<usize> = chunk.iter().map(|&i| dataset.instances[i].noisy_label).collect();
                    let est = state.batch_estimate(&omega, &proxy, &noisy)?;
                    state.momentum_update(&est)?;
                }
            }

            let batch: Vec<Sample<f64>> = chunk
                .iter()
                .map(|&i| Sample { x: &dataset.instances[i].features, label: dataset.instances[i].noisy_label })
                .collect();
            let correction = match &estimator {
                None => Correction::Plain,
                Some(state) => Correction::Channel {
                    bases: state.bases(),
                    gate: if oracle.is_empty() {
                        GateSource::Learned { detach: cfg.detach_gate }
                    } else {
                        GateSource::Fixed(&oracle)
                    },
                },
            };
            let spec = if eff.lambda > 0.0 {
                LossSpec::Total { correction, lambda: eff.lambda }
            } else {
                LossSpec::CorrectedCe(correction)
            };
            let eval = compute_gradients(&params, &batch, spec).map_err(|e| diverged(epoch, e))?;
            history.clamped += eval.clamped;
            params.tensors.add_scaled(&eval.grads, -lr);
            sum_total += eval.total;
            sum_ce += eval.ce;
            sum_dec += eval.dec;
            batches += 1;
        }
        if let Some(state) = estimator.as_mut() {
            state.finish_epoch();
        }

        let b = batches as f64;
        let record = EpochRecord {
            epoch,
            loss_total: sum_total / b,
            loss_ce: sum_ce / b,
            loss_dec: sum_dec / b,
            acc_clean: holdout_accuracy(&params, dataset, &holdout).map_err(|e| diverged(epoch, e))?,
            e_t_aligned: match &estimator {
                Some(s) => Some(aligned_error(s.bases(), &dataset.truth)?),
                None => None,
            },
            omega_entropy: match &estimator {
                Some(_) => Some(mean_gate_entropy(&params, dataset, &holdout)?),
                None => None,
            },
        };
        if ![record.loss_total, record.loss_ce, record.loss_dec, record.acc_clean]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Diverged { epoch, reason: "non-finite epoch summary".into() });
        }
        history.records.push(record);
    }
    Ok(TrainOutcome { history, params, estimator, holdout })
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(reason) => Error::Diverged { epoch, reason },
        other => other,
    }
}

/// Clean-label accuracy of the argmax posterior on `indices`.
pub fn holdout_accuracy(params: &Params, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    let mut pred = Vec::with_capacity(indices.len());
    let mut truth = Vec::with_capacity(indices.len());
    for &i in indices {
        let inst = &dataset.instances[i];
        pred.push(argmax(&forward(params, &inst.features)?.posterior));
        truth.push(inst.clean_label);
    }
    accuracy(&pred, &truth)
}

/// Mean entropy (nats) of the learned gate over `indices`.
pub fn mean_gate_entropy(params: &Params, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in indices {
        let fw = forward(params, &dataset.instances[i].features)?;
        total += assignment(&fw.features, &params.partition)?.entropy();
    }
    Ok(total / indices.len().max(1) as f64)
}

/// Final metrics of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub acc_clean: f64,
    pub e_t_aligned: Option<f64>,
    pub clamped: usize,
}

/// Runs every variant on the same data with the same seed.
pub fn run_variant_suite(dataset: &Dataset, base: &TrainConfig) -> Result<Vec<VariantRow>> {
    Variant::ALL
        .iter()
        .map(|&v| {
            let cfg = TrainConfig { variant: v, ..base.clone() };
            let out = run_training(dataset, &cfg)?;
            Ok(variant_row(&out))
        })
        .collect()
}

pub fn variant_row(out: &TrainOutcome) -> VariantRow {
    let last = out.history.final_record();
    VariantRow {
        variant: out.history.variant,
        acc_clean: last.map_or(0.0, |r| r.acc_clean),
        e_t_aligned: last.and_then(|r| r.e_t_aligned),
        clamped: out.history.clamped,
    }
}

/// Learned transition of each instance in `indices`: bases mixed by the
/// learned gate.
pub fn learned_transitions(
    params: &Params,
    bases: &Bases,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Vec<crate::Matrix>> {
    indices
        .iter()
        .map(|&i| {
            let fw = forward(params, &dataset.instances[i].features)?;
            let w = assignment(&fw.features, &params.partition)?;
            crate::transition::mix_transition(bases, &w)
        })
        .collect()
}
