//! Subcommand implementations. Each returns the text it prints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mindlab::io::{read_dataset, write_dataset, write_estimator, write_params};
use mindlab::metrics::{assemble_sweep, sweep_point, sweep_verdicts, validate_sweep, ExperimentResult, Verdict};
use mindlab::synth::{generate, Dataset};
use mindlab::train::{run_training, variant_row, TrainConfig, Variant, VariantRow};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{ablation_plot, history_plot, json, sweep_plot, write_atomic};
use crate::{CliError, ExperimentConfig};

pub const HISTORY_CSV: &str = "history.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const PARAMS_TXT: &str = "params.txt";
pub const ESTIMATOR_TXT: &str = "estimator.txt";
pub const DATASET_TXT: &str = "dataset.txt";

/// Flags shared by the data-producing subcommands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub emit_gnuplot_script: bool,
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(1).max(1))
        .build()
        .map_err(|e| CliError::Invalid(format!("cannot start worker pool: {e}")))
}

pub fn generate_cmd(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<String, CliError> {
    let path = match &opts.out {
        Some(p) => p.clone(),
        None => cfg.output_dir(None)?.join(DATASET_TXT),
    };
    let data = generate(&cfg.synthetic)?;
    write_atomic(&path, &write_dataset(&data))?;
    Ok(format!(
        "wrote {}: n={} C={} K={} d={} noise_rate={:.4}\n",
        path.display(),
        data.instances.len(),
        data.num_classes,
        data.num_modes(),
        data.input_dim,
        data.noise_rate()
    ))
}

fn check_dims(cfg: &ExperimentConfig, data: &Dataset) -> Result<(), CliError> {
    let s = &cfg.synthetic;
    if (data.num_classes, data.num_modes(), data.input_dim) != (s.num_classes, s.num_modes, s.input_dim) {
        return Err(CliError::Invalid(format!(
            "dataset has C={} K={} d={}, config declares C={} K={} d={}",
            data.num_classes,
            data.num_modes(),
            data.input_dim,
            s.num_classes,
            s.num_modes,
            s.input_dim
        )));
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read dataset {}: {e}", path.display())))?;
    read_dataset(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub variant: Variant,
    pub seed: u64,
    pub epochs: usize,
    pub final_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_t_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_t_final: Option<f64>,
    pub clamp_count: usize,
    pub wall_clock_seconds: f64,
}

pub fn train_cmd(cfg: &ExperimentConfig, data: Option<&Path>, opts: &RunOptions) -> Result<String, CliError> {
    let dir = cfg.output_dir(opts.out.as_deref())?;
    let data = match data {
        Some(p) => load_dataset(p)?,
        None => generate(&cfg.synthetic)?,
    };
    check_dims(cfg, &data)?;
    let start = Instant::now();
    let out = run_training(&data, &cfg.train)?;
    let seconds = start.elapsed().as_secs_f64();

    write_atomic(&dir.join(HISTORY_CSV), &out.history.to_csv())?;
    write_atomic(&dir.join(PARAMS_TXT), &write_params(&out.params))?;
    if let Some(state) = &out.estimator {
        write_atomic(&dir.join(ESTIMATOR_TXT), &write_estimator(state))?;
    }
    let last = out.history.final_record();
    let summary = TrainSummary {
        variant: cfg.train.variant,
        seed: cfg.train.seed,
        epochs: out.history.records.len(),
        final_accuracy: last.map_or(0.0, |r| r.acc_clean),
        e_t_initial: out.history.initial_e_t,
        e_t_final: last.and_then(|r| r.e_t_aligned),
        clamp_count: out.history.clamped,
        wall_clock_seconds: seconds,
    };
    let text = json(&summary);
    write_atomic(&dir.join(SUMMARY_JSON), &text)?;
    if opts.emit_gnuplot_script {
        write_atomic(&dir.join("history.gp"), &history_plot(HISTORY_CSV))?;
    }
    Ok(text)
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub acc_mean: f64,
    pub acc_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_t_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_t_std: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantSummary>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let denom = (v.len().max(2) - 1) as f64;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / denom).sqrt())
}

/// Every variant on every seed; `rows[v][s]` follows `Variant::ALL` order.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    jobs: Option<usize>,
) -> Result<Vec<Vec<VariantRow>>, CliError> {
    let pairs: Vec<(Variant, u64)> =
        Variant::ALL.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let rows: Vec<VariantRow> = pool(jobs)?.install(|| {
        pairs
            .par_iter()
            .map(|&(variant, seed)| {
                let data = generate(&mindlab::synth::SyntheticConfig { seed, ..cfg.synthetic.clone() })?;
                let tc = TrainConfig { variant, seed, ..cfg.train.clone() };
                Ok(variant_row(&run_training(&data, &tc)?))
            })
            .collect::<Result<Vec<_>, mindlab::Error>>()
    })?;
    Ok(rows.chunks(seeds.len()).map(|c| c.to_vec()).collect())
}

pub fn ablate_cmd(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<String, CliError> {
    let dir = cfg.output_dir(opts.out.as_deref())?;
    let seeds = cfg.sweep()?.seeds.clone();
    if seeds.is_empty() {
        return Err(CliError::Invalid("sweep.seeds is empty".into()));
    }
    let table = run_ablation(cfg, &seeds, opts.jobs)?;

    let mut csv = String::from("variant,seed,acc_clean,e_t_aligned,clamped\n");
    let mut summary_csv = String::from("variant,acc_mean,acc_std,e_t_mean,e_t_std\n");
    let mut variants = Vec::new();
    let mut printed = String::from("variant        acc_clean         E_T\n");
    for (v, rows) in Variant::ALL.iter().zip(&table) {
        for (seed, r) in seeds.iter().zip(rows) {
            let et = r.e_t_aligned.map_or(String::new(), |e| e.to_string());
            writeln!(csv, "{},{seed},{},{et},{}", v.name(), r.acc_clean, r.clamped).unwrap();
        }
        let (am, asd) = mean_std(&rows.iter().map(|r| r.acc_clean).collect::<Vec<_>>());
        let ets: Option<Vec<f64>> = rows.iter().map(|r| r.e_t_aligned).collect();
        let et = ets.map(|e| mean_std(&e));
        let fmt_opt = |x: Option<f64>| x.map_or(String::new(), |x| x.to_string());
        writeln!(
            summary_csv,
            "{},{am},{asd},{},{}",
            v.name(),
            fmt_opt(et.map(|e| e.0)),
            fmt_opt(et.map(|e| e.1))
        )
        .unwrap();
        let et_txt = et.map_or("-".to_string(), |(m, s)| format!("{m:.4} ± {s:.4}"));
        writeln!(printed, "{:<14} {am:.4} ± {asd:.4}  {et_txt}", v.name()).unwrap();
        variants.push(VariantSummary {
            variant: *v,
            acc_mean: am,
            acc_std: asd,
            e_t_mean: et.map(|e| e.0),
            e_t_std: et.map(|e| e.1),
        });
    }
    write_atomic(&dir.join("ablation.csv"), &csv)?;
    write_atomic(&dir.join("ablation_summary.csv"), &summary_csv)?;
    write_atomic(&dir.join("ablation.json"), &json(&AblationReport { seeds, variants }))?;
    if opts.emit_gnuplot_script {
        write_atomic(&dir.join("ablation.gp"), &ablation_plot("ablation_summary.csv"))?;
    }
    Ok(printed)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub result: ExperimentResult,
    pub verdicts: Vec<Verdict>,
}

pub fn run_sweep_parallel(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<SweepReport, CliError> {
    let spec = cfg.sweep()?;
    let var = spec
        .variable
        .ok_or_else(|| CliError::Invalid("sweep.variable is required for the sweep command".into()))?;
    validate_sweep(var, &spec.values, &spec.seeds, &cfg.synthetic)?;
    let pairs: Vec<(f64, u64)> =
        spec.values.iter().flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s))).collect();
    let flat = pool(jobs)?.install(|| {
        pairs
            .par_iter()
            .map(|&(v, s)| sweep_point(var, v, s, &cfg.synthetic, &cfg.train))
            .collect::<Result<Vec<_>, mindlab::Error>>()
    })?;
    let points = flat.chunks(spec.seeds.len()).map(|c| c.to_vec()).collect();
    let result = assemble_sweep(var, &spec.values, &spec.seeds, points)?;
    let verdicts = sweep_verdicts(var, &result);
    Ok(SweepReport { result, verdicts })
}

pub fn sweep_cmd(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<String, CliError> {
    let dir = cfg.output_dir(opts.out.as_deref())?;
    let report = run_sweep_parallel(cfg, opts.jobs)?;
    let r = &report.result;
    let csv_name = format!("sweep_{}.csv", r.variable);
    write_atomic(&dir.join(&csv_name), &r.to_csv())?;
    write_atomic(&dir.join(format!("sweep_{}.json", r.variable)), &json(&report))?;
    if opts.emit_gnuplot_script {
        write_atomic(
            &dir.join(format!("sweep_{}.gp", r.variable)),
            &sweep_plot(&csv_name, &r.variable, r.axes == "log-log"),
        )?;
    }
    let mut s = String::new();
    for (i, v) in r.values.iter().enumerate() {
        write!(s, "{} = {v}: {:.4} ± {:.4}", r.variable, r.mean[i], r.std[i]).unwrap();
        if let Some(p) = &r.predicted {
            write!(s, " (predicted {:.4})", p[i]).unwrap();
        }
        s.push('\n');
    }
    writeln!(s, "{} fit: slope {:.4} intercept {:.4} R2 {:.4}", r.axes, r.fit.slope, r.fit.intercept, r.fit.r2).unwrap();
    for v in &report.verdicts {
        writeln!(s, "{} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.criterion, v.detail).unwrap();
    }
    Ok(s)
}

/// Runs the invariant suite; the flag is true when every check passed.
pub fn check_cmd() -> (String, bool) {
    let mut s = String::new();
    let mut ok = true;
    for c in mindlab::selfcheck::run_all() {
        ok &= c.passed;
        writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail).unwrap();
    }
    (s, ok)
}
