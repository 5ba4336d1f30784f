//! Structural invariant suite run by `mindlab check`.

use crate::estimator::{batch_estimate, init_bases, EstimatorState, EST_EPS};
use crate::net::{
    assignment, compute_gradients, corrected_posterior, forward, Correction, GateSource, LossSpec, NetworkParams,
    Sample, Shape, SubspacePartition,
};
use crate::rng::Rng;
use crate::synth::{generate, SyntheticConfig};
use crate::train::{run_training, TrainConfig, Variant};
use crate::transition::{
    mix_transition, sample_noisy_label, validate_transition, AssignmentWeights, BasisSet, TransitionMatrix,
};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Outcome = std::result::Result<String, String>;

const TRIALS: usize = 200;
const SIMPLEX_TOL: f64 = 1e-9;

fn random_matrix(rng: &mut Rng, c: usize) -> TransitionMatrix<f64> {
    TransitionMatrix::new(c, (0..c).flat_map(|_| rng.simplex(c)).collect()).expect("simplex rows")
}

fn random_bases(rng: &mut Rng, k: usize, c: usize) -> BasisSet<f64> {
    BasisSet::new((0..k).map(|_| random_matrix(rng, c)).collect()).expect("equal shapes")
}

fn is_simplex(v: &[f64]) -> bool {
    v.iter().all(|&x| (0.0..=1.0 + SIMPLEX_TOL).contains(&x))
        && (v.iter().sum::<f64>() - 1.0).abs() < SIMPLEX_TOL
}

fn stochastic_mix_and_momentum() -> Outcome {
    let mut rng = Rng::stream(7, 1);
    for t in 0..TRIALS {
        let k = 1 + rng.below(5);
        let c = 2 + rng.below(6);
        let bases = random_bases(&mut rng, k, c);
        let w = AssignmentWeights::new(rng.simplex(k)).map_err(|e| e.to_string())?;
        let m = mix_transition(&bases, &w).map_err(|e| format!("trial {t}: {e}"))?;
        validate_transition(c, m.entries()).map_err(|e| format!("trial {t}: mix {e}"))?;

        let alpha = rng.uniform_range(0.0, 0.999);
        let mut state = EstimatorState::new(bases, alpha, 0).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let batch = random_bases(&mut rng, k, c);
            state.momentum_update(&batch).map_err(|e| format!("trial {t}: {e}"))?;
            for b in state.bases().iter() {
                validate_transition(c, b.entries()).map_err(|e| format!("trial {t}: momentum {e}"))?;
            }
        }
    }
    Ok(format!("{TRIALS} random mixtures and 5-step momentum chains stay row-stochastic"))
}

fn batch_estimate_rows() -> Outcome {
    let mut rng = Rng::stream(7, 2);
    for t in 0..TRIALS {
        let k = 1 + rng.below(4);
        let c = 2 + rng.below(5);
        let n = 1 + rng.below(40);
        let omega: Vec<_> = (0..n).map(|_| AssignmentWeights::new(rng.simplex(k)).unwrap()).collect();
        let proxy: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let noisy: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let prior = init_bases(k, c, 0.9).map_err(|e| e.to_string())?;
        let est = batch_estimate(&omega, &proxy, &noisy, &prior, EST_EPS).map_err(|e| format!("trial {t}: {e}"))?;
        for b in est.iter() {
            validate_transition(c, b.entries()).map_err(|e| format!("trial {t}: {e}"))?;
        }
    }
    Ok(format!("{TRIALS} random batches give row-stochastic estimates"))
}

fn simplex_outputs() -> Outcome {
    let mut rng = Rng::stream(7, 3);
    for t in 0..TRIALS {
        let k = 1 + rng.below(4);
        let c = 2 + rng.below(5);
        let shape = Shape { input: 1 + rng.below(5), hidden: 1 + rng.below(6), feature: k * (1 + rng.below(3)), classes: c, subspaces: k };
        let params = NetworkParams::<f64>::init(shape, 0.1, &mut rng).map_err(|e| e.to_string())?;
        let scale = 10f64.powf(rng.uniform_range(-2.0, 2.0));
        let x: Vec<f64> = (0..shape.input).map(|_| scale * rng.normal()).collect();
        let fw = forward(&params, &x).map_err(|e| format!("trial {t}: {e}"))?;
        if !is_simplex(&fw.posterior) {
            return Err(format!("trial {t}: posterior {:?}", fw.posterior));
        }
        let w = assignment(&fw.features, &params.partition).map_err(|e| format!("trial {t}: {e}"))?;
        if !is_simplex(w.as_slice()) {
            return Err(format!("trial {t}: assignment {:?}", w.as_slice()));
        }
        let bases = random_bases(&mut rng, k, c);
        let q = corrected_posterior(&fw.posterior, w.as_slice(), &bases);
        if !is_simplex(&q) {
            return Err(format!("trial {t}: corrected posterior {q:?}"));
        }
    }
    Ok(format!("{TRIALS} random networks give simplex posterior, assignment and corrected posterior"))
}

fn partition_cover() -> Outcome {
    for k in 1..=8 {
        for width in 1..=6 {
            let d = k * width;
            let p = SubspacePartition::new(d, k).map_err(|e| e.to_string())?;
            let mut seen = vec![0usize; d];
            for (i, r) in p.ranges().enumerate() {
                if r.start != i * width || r.end != (i + 1) * width {
                    return Err(format!("D={d} K={k}: range {i} is {r:?}"));
                }
                r.for_each(|u| seen[u] += 1);
            }
            if seen.iter().any(|&c| c != 1) {
                return Err(format!("D={d} K={k}: coverage {seen:?}"));
            }
            if (0..d).any(|u| p.subspace_of(u) != u / width) {
                return Err(format!("D={d} K={k}: subspace_of disagrees with ranges"));
            }
            if k > 1 && SubspacePartition::new(d + 1, k).is_ok() {
                return Err(format!("D={} K={k}: indivisible dimension accepted", d + 1));
            }
        }
    }
    Ok("K in 1..=8, width in 1..=6: ranges are contiguous, disjoint and cover 0..D".into())
}

fn sampling_bands() -> Outcome {
    let mut rng = Rng::stream(11, 4);
    let n = 20_000usize;
    let mut checked = 0;
    for _ in 0..5 {
        let c = 2 + rng.below(5);
        let t = random_matrix(&mut rng, c);
        let y = rng.below(c);
        let mut counts = vec![0usize; c];
        for _ in 0..n {
            counts[sample_noisy_label(&t, y, &mut rng).map_err(|e| e.to_string())?] += 1;
        }
        for (j, &cnt) in counts.iter().enumerate() {
            let p = t.get(y, j);
            let band = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
            let freq = cnt as f64 / n as f64;
            if (freq - p).abs() > band + 1e-12 {
                return Err(format!("row {y} col {j}: frequency {freq:.4} vs p {p:.4}"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} sampled frequencies within their binomial bands at n = {n}"))
}

fn gradient_agreement() -> Outcome {
    let shape = Shape { input: 3, hidden: 4, feature: 4, classes: 3, subspaces: 2 };
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = Rng::stream(seed, 5);
        let params = NetworkParams::<f64>::init(shape, 0.5, &mut rng).map_err(|e| e.to_string())?;
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| 2.0 * rng.normal()).collect()).collect();
        let batch: Vec<Sample<f64>> = xs.iter().map(|x| Sample { x, label: rng.below(3) }).collect();
        let bases = BasisSet::new(
            (0..2)
                .map(|_| {
                    let rows: Vec<f64> = (0..3)
                        .flat_map(|i| {
                            let mut r = rng.simplex(3);
                            r.iter_mut().for_each(|v| *v *= 0.4);
                            r[i] += 0.6;
                            r
                        })
                        .collect();
                    TransitionMatrix::new(3, rows).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let spec = || LossSpec::Total {
            correction: Correction::Channel { bases: &bases, gate: GateSource::Learned { detach: false } },
            lambda: 0.7,
        };
        let eval = compute_gradients(&params, &batch, spec()).map_err(|e| e.to_string())?;
        for ti in 0..6 {
            for e in 0..params.tensors.as_slices()[ti].len() {
                let mut plus = params.clone();
                plus.tensors.as_slices_mut()[ti][e] += step;
                let mut minus = params.clone();
                minus.tensors.as_slices_mut()[ti][e] -= step;
                let lp = compute_gradients(&plus, &batch, spec()).map_err(|e| e.to_string())?.total;
                let lm = compute_gradients(&minus, &batch, spec()).map_err(|e| e.to_string())?.total;
                let numeric = (lp - lm) / (2.0 * step);
                let analytic = eval.grads.as_slices()[ti][e];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                worst = worst.max(rel);
                if rel >= 1e-4 {
                    return Err(format!("seed {seed} tensor {ti}[{e}]: analytic {analytic:e} numeric {numeric:e}"));
                }
            }
        }
    }
    Ok(format!("10 seeds, total loss: worst relative gradient error {worst:.1e}"))
}

fn determinism() -> Outcome {
    let data = generate(&SyntheticConfig { samples_per_mode: 200, seed: 5, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig { epochs: 8, warm_up_epochs: 2, hidden_dim: 16, feature_dim: 6, seed: 5, ..Default::default() };
    let mut lines = 0;
    for v in [Variant::Mind, Variant::CeOnly] {
        let cfg = TrainConfig { variant: v, ..cfg.clone() };
        let a = run_training(&data, &cfg).map_err(|e| e.to_string())?.history.to_csv();
        let b = run_training(&data, &cfg).map_err(|e| e.to_string())?.history.to_csv();
        if a != b {
            return Err(format!("{} histories differ between identical runs", v.name()));
        }
        let d2 = generate(&SyntheticConfig { samples_per_mode: 200, seed: 5, ..Default::default() })
            .map_err(|e| e.to_string())?;
        if crate::io::write_dataset(&d2) != crate::io::write_dataset(&data) {
            return Err("regenerated dataset differs".into());
        }
        lines += a.lines().count();
    }
    Ok(format!("repeated runs give byte-identical history CSVs ({lines} lines) and datasets"))
}

/// Runs every check in a fixed order.
pub fn run_all() -> Vec<Check> {
    let checks: [(&'static str, fn() -> Outcome); 7] = [
        ("stochastic mix and momentum", stochastic_mix_and_momentum),
        ("stochastic batch estimates", batch_estimate_rows),
        ("simplex outputs", simplex_outputs),
        ("partition coverage", partition_cover),
        ("sampling bands", sampling_bands),
        ("gradients vs finite differences", gradient_agreement),
        ("determinism", determinism),
    ];
    checks
        .into_iter()
        .map(|(name, f)| match f() {
            Ok(detail) => Check { name, passed: true, detail },
            Err(detail) => Check { name, passed: false, detail },
        })
        .collect()
}
