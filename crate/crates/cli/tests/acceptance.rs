//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

use std::process::Command;
use std::time::{Duration, Instant};

use mindlab::metrics::{
    epsilon_robustness_experiment, epsilon_verdicts, et_trace_check, feature_silhouette, k_scaling_experiment,
    k_scaling_verdicts, Verdict,
};
use mindlab::net::{compute_gradients, Correction, GateSource, LossSpec, Sample, Shape};
use mindlab::synth::{generate, Dataset, GeneratorKind, SyntheticConfig};
use mindlab::train::{run_training, TrainConfig, TrainOutcome, Variant};
use mindlab::{align_bases, init_bases, BasisSet, EstimatorState, NetworkParams, Rng, TransitionMatrix};

const SEEDS: [u64; 3] = [1, 2, 3];

struct Report {
    id: usize,
    title: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    limit: Option<Duration>,
}

impl Report {
    fn ok(&self) -> bool {
        self.passed && self.limit.map_or(true, |l| self.elapsed < l)
    }

    fn line(&self) -> String {
        let limit = self.limit.map_or(String::new(), |l| format!(", limit {}s", l.as_secs()));
        format!(
            "{} [{}] {}: {} ({:.1}s{limit})",
            if self.ok() { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn timed(id: usize, title: &'static str, limit: Option<u64>, f: impl FnOnce() -> (bool, String)) -> Report {
    let start = Instant::now();
    let (passed, detail) = f();
    let r = Report { id, title, passed, detail, elapsed: start.elapsed(), limit: limit.map(Duration::from_secs) };
    println!("{}", r.line());
    r
}

fn anchor_config(seed: u64) -> SyntheticConfig {
    SyntheticConfig { generator: GeneratorKind::Anchor, num_classes: 4, num_modes: 3, diag_mass: 0.8, samples_per_mode: 5_000, seed, ..Default::default() }
}

fn train(data: &Dataset, variant: Variant, seed: u64) -> TrainOutcome {
    run_training(data, &TrainConfig { variant, seed, ..Default::default() }).expect("training run")
}

fn final_et(out: &TrainOutcome) -> f64 {
    out.history.final_record().and_then(|r| r.e_t_aligned).expect("variant with estimates")
}

fn verdict_text(vs: &[Verdict]) -> (bool, String) {
    let passed = vs.iter().all(|v| v.passed);
    let text = vs.iter().map(|v| format!("{} {}", v.criterion, v.detail)).collect::<Vec<_>>().join("; ");
    (passed, text)
}

fn count_true(v: &[bool]) -> usize {
    v.iter().filter(|&&b| b).count()
}

// 1
fn gradients() -> (bool, String) {
    let shape = Shape { input: 3, hidden: 4, feature: 4, classes: 3, subspaces: 2 };
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for seed in 0..10u64 {
        let mut rng = Rng::seed_from_u64(1000 + seed);
        let params = NetworkParams::<f64>::init(shape, 0.5, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| 2.0 * rng.normal()).collect()).collect();
        let batch: Vec<Sample<f64>> = xs.iter().map(|x| Sample { x, label: rng.below(3) }).collect();
        let bases = BasisSet::new(
            (0..2)
                .map(|_| {
                    let e: Vec<f64> = (0..3)
                        .flat_map(|i| {
                            let mut r = rng.simplex(3);
                            r.iter_mut().for_each(|v| *v *= 0.4);
                            r[i] += 0.6;
                            r
                        })
                        .collect();
                    TransitionMatrix::new(3, e).unwrap()
                })
                .collect(),
        )
        .unwrap();
        for which in 0..3 {
            let spec = || {
                let learned = Correction::Channel { bases: &bases, gate: GateSource::Learned { detach: false } };
                match which {
                    0 => LossSpec::CorrectedCe(learned),
                    1 => LossSpec::Decoupling,
                    _ => LossSpec::Total { correction: learned, lambda: 0.7 },
                }
            };
            let grads = compute_gradients(&params, &batch, spec()).unwrap().grads;
            for ti in 0..6 {
                for e in 0..params.tensors.as_slices()[ti].len() {
                    let mut plus = params.clone();
                    plus.tensors.as_slices_mut()[ti][e] += step;
                    let mut minus = params.clone();
                    minus.tensors.as_slices_mut()[ti][e] -= step;
                    let lp = compute_gradients(&plus, &batch, spec()).unwrap().total;
                    let lm = compute_gradients(&minus, &batch, spec()).unwrap().total;
                    let numeric = (lp - lm) / (2.0 * step);
                    let analytic = grads.as_slices()[ti][e];
                    worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6));
                    checked += 1;
                }
            }
        }
    }
    (worst < 1e-4, format!("{checked} coordinates over 10 seeds x (CE, dec, total), worst relative error {worst:.2e} < 1e-4"))
}

// 2
fn estimator_consistency() -> (bool, String) {
    let seed = 42;
    let cfg = SyntheticConfig { anchor_fraction: 1.0, ..anchor_config(seed) };
    let data = generate(&cfg).unwrap();
    let mut state = EstimatorState::new(init_bases(3, 4, 0.9).unwrap(), 0.9, 0).unwrap();
    let mut order: Vec<usize> = (0..data.instances.len()).collect();
    let mut rng = Rng::stream(seed, 3);
    let mut updates = 0;
    while updates < 200 {
        rng.shuffle(&mut order);
        for chunk in order.chunks(128).take(200 - updates) {
            let w: Vec<_> = chunk.iter().map(|&i| data.instances[i].true_mode_weights.clone()).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| data.instances[i].clean_label).collect();
            let yt: Vec<usize> = chunk.iter().map(|&i| data.instances[i].noisy_label).collect();
            let est = state.batch_estimate(&w, &y, &yt).unwrap();
            state.momentum_update(&est).unwrap();
            updates += 1;
        }
    }
    let a = align_bases(state.bases(), &data.truth).unwrap();
    (a.error < 0.05, format!("seed {seed}: aligned mean E_T {:.4} < 0.05 after {updates} updates (per basis {:.4?})", a.error, a.per_basis))
}

struct MindRuns {
    data: Vec<Dataset>,
    runs: Vec<TrainOutcome>,
}

// 3
fn identifiability(m: &MindRuns) -> (bool, String) {
    let mut ok = Vec::new();
    let mut parts = Vec::new();
    for ((out, data), seed) in m.runs.iter().zip(&m.data).zip(SEEDS) {
        let initial = out.history.initial_e_t.unwrap();
        let fin = final_et(out);
        let a = align_bases(out.estimator.as_ref().unwrap().bases(), &data.truth).unwrap();
        let worst = a.per_basis.iter().cloned().fold(0.0, f64::max);
        ok.push(fin < 0.5 * initial && worst < 0.15);
        parts.push(format!("seed {seed}: E_T {initial:.3} -> {fin:.4}, worst basis {worst:.4}, perm {:?}", a.permutation));
    }
    (count_true(&ok) >= 2, format!("{}/3 seeds pass; {}", count_true(&ok), parts.join("; ")))
}

// 4
fn dynamics(m: &MindRuns) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (out, seed) in m.runs.iter().zip(SEEDS) {
        let v = et_trace_check(&out.history).unwrap();
        ok &= v.monotone_trend;
        parts.push(format!("seed {seed}: monotone {} ratio {:.3} worst uptick {:.4}", v.monotone_trend, v.ratio, v.worst_uptick));
    }
    (ok, parts.join("; "))
}

// 5
fn ablation_directions() -> (bool, String) {
    let mut checks = [[false; 3]; 4];
    let mut parts = Vec::new();
    for (i, seed) in SEEDS.into_iter().enumerate() {
        let data = generate(&SyntheticConfig { diag_mass: 0.65, ..anchor_config(seed) }).unwrap();
        let mind = train(&data, Variant::Mind, seed);
        let (m_et, m_acc) = (final_et(&mind), mind.history.final_record().unwrap().acc_clean);
        let oracle = final_et(&train(&data, Variant::OracleOmega, seed));
        let no_dec = final_et(&train(&data, Variant::NoDec, seed));
        let global = final_et(&train(&data, Variant::GlobalT, seed));
        let ce_acc = train(&data, Variant::CeOnly, seed).history.final_record().unwrap().acc_clean;
        checks[0][i] = oracle <= m_et;
        checks[1][i] = m_et < no_dec;
        checks[2][i] = m_et < global;
        checks[3][i] = m_acc > ce_acc;
        parts.push(format!(
            "seed {seed}: E_T oracle {oracle:.4} mind {m_et:.4} no_dec {no_dec:.4} global_T {global:.4}; acc mind {m_acc:.4} ce_only {ce_acc:.4}"
        ));
    }
    let names = ["oracle<=mind", "mind<no_dec", "mind<global_T", "acc mind>ce_only"];
    let counts: Vec<String> = names.iter().zip(&checks).map(|(n, c)| format!("{n} {}/3", count_true(c))).collect();
    (checks.iter().all(|c| count_true(c) >= 2), format!("{}; {}", counts.join(", "), parts.join("; ")))
}

// 6
fn epsilon_robustness() -> (bool, String) {
    let r = epsilon_robustness_experiment(&anchor_config(0), &[0.0, 0.05, 0.1, 0.2, 0.3], &SEEDS).unwrap();
    let (ok, text) = verdict_text(&epsilon_verdicts(&r));
    let pts: Vec<String> = r
        .values
        .iter()
        .zip(&r.mean)
        .zip(r.predicted.as_ref().unwrap())
        .map(|((e, m), p)| format!("{e}: {m:.4}/{p:.4}"))
        .collect();
    (ok, format!("{text}; measured/predicted {}", pts.join(", ")))
}

// 7
fn k_scaling() -> (bool, String) {
    let synth = SyntheticConfig { generator: GeneratorKind::Manifold, diag_mass: 0.6, ..anchor_config(0) };
    let r = k_scaling_experiment(&synth, &TrainConfig::default(), &[1, 2, 3, 4, 6], &SEEDS).unwrap();
    let (ok, text) = verdict_text(&k_scaling_verdicts(&r));
    let pts: Vec<String> = r.values.iter().zip(&r.mean).map(|(k, m)| format!("K={k}: {m:.4}")).collect();
    (ok, format!("{text}; {}", pts.join(", ")))
}

// 8
fn separation(m: &MindRuns) -> (bool, String) {
    let mut ok = Vec::new();
    let mut parts = Vec::new();
    for ((out, data), seed) in m.runs.iter().zip(&m.data).zip(SEEDS) {
        let ce = train(data, Variant::CeOnly, seed);
        let s_mind = feature_silhouette(&out.params, data, &out.holdout).unwrap();
        let s_ce = feature_silhouette(&ce.params, data, &ce.holdout).unwrap();
        ok.push(s_mind > s_ce);
        parts.push(format!("seed {seed}: mind {s_mind:.3} ce_only {s_ce:.3}"));
    }
    (count_true(&ok) >= 2, format!("{}/3 seeds; {}", count_true(&ok), parts.join("; ")))
}

// 9
fn structural() -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mindlab")).arg("check").output().expect("run mindlab check");
    let text = String::from_utf8_lossy(&out.stdout);
    let total = text.lines().count();
    let passed = text.lines().filter(|l| l.starts_with("PASS ")).count();
    (out.status.success() && passed == total && total > 0, format!("mindlab check: {passed}/{total} checks pass"))
}

fn main() {
    let mut reports = vec![
        timed(1, "gradient correctness", Some(10), gradients),
        timed(2, "estimator consistency", Some(30), estimator_consistency),
    ];

    let start = Instant::now();
    let data: Vec<Dataset> = SEEDS.iter().map(|&s| generate(&anchor_config(s)).unwrap()).collect();
    let runs: Vec<TrainOutcome> = data.iter().zip(SEEDS).map(|(d, s)| train(d, Variant::Mind, s)).collect();
    let per_seed = start.elapsed() / SEEDS.len() as u32;
    let mind = MindRuns { data, runs };
    let mut r3 = timed(3, "end-to-end identifiability", None, || identifiability(&mind));
    r3.detail.push_str(&format!("; {:.1}s per seed", per_seed.as_secs_f64()));
    r3.passed &= per_seed < Duration::from_secs(300);
    reports.push(r3);
    reports.push(timed(4, "E_T dynamics", None, || dynamics(&mind)));
    reports.push(timed(5, "ablation directions", None, ablation_directions));
    reports.push(timed(6, "epsilon robustness", Some(120), epsilon_robustness));
    reports.push(timed(7, "K scaling", Some(900), k_scaling));
    reports.push(timed(8, "feature-space separation", None, || separation(&mind)));
    reports.push(timed(9, "structural invariants", Some(60), structural));

    let failed: Vec<usize> = reports.iter().filter(|r| !r.ok()).map(|r| r.id).collect();
    println!("\nacceptance summary");
    for r in &reports {
        println!("{}", r.line());
    }
    if failed.is_empty() {
        println!("all {} criteria pass", reports.len());
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
