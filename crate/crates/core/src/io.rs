//! Plain-text formats: line-delimited datasets and matrix snapshots.
//!
//! Dataset layout:
//!
//! ```text
//! mindlab-dataset generator=anchor classes=4 modes=3 input_dim=16 seed=42 instances=15000
//! truth 0 <C*C row-major entries>
//! ...
//! <d features> <y> <noisy y> <K true mode weights> <anchor 0|1>
//! ```
//!
//! Features are written with nine decimals; weights and truth entries use the
//! shortest representation that reads back to the same value.
//!
//! Snapshots are a header line followed by blocks of `name rows cols` and one
//! line of row-major values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimator::EstimatorState;
use crate::net::{NetworkParams, Shape, Tensors, TENSOR_NAMES};
use crate::scalar::Scalar;
use crate::synth::{Dataset, GeneratorKind, Instance};
use crate::transition::{AssignmentWeights, BasisSet, TransitionMatrix};

pub const DATASET_TAG: &str = "mindlab-dataset";
pub const NETWORK_TAG: &str = "network";
pub const ESTIMATOR_TAG: &str = "estimator";
pub const FEATURE_DECIMALS: usize = 9;

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse { line, reason: reason.into() }
}

/// `tag key=value ...` header.
fn parse_header(line: &str, lineno: usize, tag: &str) -> Result<BTreeMap<String, String>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(parse_err(lineno, format!("expected header starting with '{tag}'")));
    }
    let mut fields = BTreeMap::new();
    for p in parts {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| parse_err(lineno, format!("header field '{p}' is not key=value")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    Ok(fields)
}

fn field<T: FromStr>(fields: &BTreeMap<String, String>, key: &str, lineno: usize) -> Result<T> {
    let raw = fields
        .get(key)
        .ok_or_else(|| parse_err(lineno, format!("header is missing '{key}'")))?;
    raw.parse()
        .map_err(|_| parse_err(lineno, format!("header field '{key}' has bad value '{raw}'")))
}

fn number<T: FromStr>(tok: &str, lineno: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| parse_err(lineno, format!("bad {what} '{tok}'")))
}

fn finite<F: Scalar>(tok: &str, lineno: usize, what: &str) -> Result<F> {
    let v: F = number(tok, lineno, what)?;
    if !v.is_finite() {
        return Err(parse_err(lineno, format!("non-finite {what} '{tok}'")));
    }
    Ok(v)
}

fn join<F: Scalar>(values: &[F]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

pub fn write_dataset(d: &Dataset) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{DATASET_TAG} generator={} classes={} modes={} input_dim={} seed={} instances={}",
        d.generator.name(),
        d.num_classes,
        d.num_modes(),
        d.input_dim,
        d.seed,
        d.instances.len()
    )
    .unwrap();
    for (k, t) in d.truth.iter().enumerate() {
        writeln!(out, "truth {k} {}", join(t.entries())).unwrap();
    }
    for inst in &d.instances {
        for v in &inst.features {
            write!(out, "{v:.prec$} ", prec = FEATURE_DECIMALS).unwrap();
        }
        writeln!(
            out,
            "{} {} {} {}",
            inst.clean_label,
            inst.noisy_label,
            join(inst.true_mode_weights.as_slice()),
            u8::from(inst.anchor_flag)
        )
        .unwrap();
    }
    out
}

pub fn read_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty dataset file"))?;
    let h = parse_header(header, hl, DATASET_TAG)?;
    let gen_name: String = field(&h, "generator", hl)?;
    let generator = GeneratorKind::parse(&gen_name)
        .ok_or_else(|| parse_err(hl, format!("unknown generator '{gen_name}'")))?;
    let classes: usize = field(&h, "classes", hl)?;
    let modes: usize = field(&h, "modes", hl)?;
    let input_dim: usize = field(&h, "input_dim", hl)?;
    let seed: u64 = field(&h, "seed", hl)?;
    let count: usize = field(&h, "instances", hl)?;
    if classes < 2 || modes == 0 || input_dim == 0 {
        return Err(parse_err(hl, "header declares an empty dimension"));
    }

    let mut truth = Vec::with_capacity(modes);
    for k in 0..modes {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(hl + k + 1, "missing truth line"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 + classes * classes || toks[0] != "truth" {
            return Err(parse_err(ln, format!("expected 'truth {k}' followed by {} entries", classes * classes)));
        }
        if number::<usize>(toks[1], ln, "basis index")? != k {
            return Err(parse_err(ln, format!("truth lines out of order, expected {k}")));
        }
        let entries =
            toks[2..].iter().map(|t| finite::<f64>(t, ln, "transition entry")).collect::<Result<Vec<_>>>()?;
        truth.push(TransitionMatrix::new(classes, entries).map_err(|e| parse_err(ln, e.to_string()))?);
    }
    let truth = BasisSet::new(truth).map_err(|e| parse_err(hl, e.to_string()))?;

    let width = input_dim + 2 + modes + 1;
    let mut instances = Vec::with_capacity(count);
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != width {
            return Err(parse_err(ln, format!("expected {width} fields, found {}", toks.len())));
        }
        let features = toks[..input_dim]
            .iter()
            .map(|t| finite::<f64>(t, ln, "feature"))
            .collect::<Result<Vec<_>>>()?;
        let clean_label: usize = number(toks[input_dim], ln, "clean label")?;
        let noisy_label: usize = number(toks[input_dim + 1], ln, "noisy label")?;
        let w = toks[input_dim + 2..input_dim + 2 + modes]
            .iter()
            .map(|t| finite::<f64>(t, ln, "mode weight"))
            .collect::<Result<Vec<_>>>()?;
        let true_mode_weights = AssignmentWeights::new(w).map_err(|e| parse_err(ln, e.to_string()))?;
        let anchor_flag = match toks[width - 1] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(ln, format!("anchor flag must be 0 or 1, got '{other}'"))),
        };
        let inst = Instance { features, clean_label, noisy_label, true_mode_weights, anchor_flag };
        inst.check(classes, modes).map_err(|e| parse_err(ln, e.to_string()))?;
        instances.push(inst);
    }
    if instances.len() != count {
        return Err(parse_err(hl, format!("header declares {count} instances, file has {}", instances.len())));
    }
    Ok(Dataset { generator, num_classes: classes, input_dim, seed, truth, instances })
}

/// Reads blocks of `name rows cols` + one value line until the input ends.
fn read_blocks<F: Scalar>(
    lines: &mut dyn Iterator<Item = (usize, &str)>,
) -> Result<Vec<(String, usize, usize, Vec<F>)>> {
    let mut blocks = Vec::new();
    while let Some((ln, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(ln, "expected 'name rows cols'"));
        }
        let rows: usize = number(toks[1], ln, "row count")?;
        let cols: usize = number(toks[2], ln, "column count")?;
        let (vl, values) = lines.next().ok_or_else(|| parse_err(ln + 1, format!("block '{}' has no values", toks[0])))?;
        let vals = values.split_whitespace().map(|t| finite::<F>(t, vl, "value")).collect::<Result<Vec<_>>>()?;
        if vals.len() != rows * cols {
            return Err(parse_err(vl, format!("expected {} values, found {}", rows * cols, vals.len())));
        }
        blocks.push((toks[0].to_string(), rows, cols, vals));
    }
    Ok(blocks)
}

pub fn write_params<F: Scalar>(p: &NetworkParams<F>) -> String {
    let s = &p.shape;
    let mut out = format!(
        "{NETWORK_TAG} input={} hidden={} feature={} classes={} subspaces={} tau={}\n",
        s.input, s.hidden, s.feature, s.classes, s.subspaces, p.tau
    );
    let dims = Tensors::<F>::dims(s);
    for ((name, data), (r, c)) in TENSOR_NAMES.iter().zip(p.tensors.as_slices()).zip(dims) {
        writeln!(out, "{name} {r} {c}\n{}", join(data)).unwrap();
    }
    out
}

pub fn read_params<F: Scalar>(text: &str) -> Result<NetworkParams<F>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty snapshot"))?;
    let h = parse_header(header, hl, NETWORK_TAG)?;
    let shape = Shape {
        input: field(&h, "input", hl)?,
        hidden: field(&h, "hidden", hl)?,
        feature: field(&h, "feature", hl)?,
        classes: field(&h, "classes", hl)?,
        subspaces: field(&h, "subspaces", hl)?,
    };
    let tau: F = field(&h, "tau", hl)?;
    let mut p = NetworkParams::zeros(shape, tau).map_err(|e| parse_err(hl, e.to_string()))?;
    let blocks = read_blocks::<F>(&mut lines)?;
    if blocks.len() != TENSOR_NAMES.len() {
        return Err(parse_err(hl, format!("expected {} layers, found {}", TENSOR_NAMES.len(), blocks.len())));
    }
    let dims = Tensors::<F>::dims(&shape);
    for (i, (name, rows, cols, vals)) in blocks.into_iter().enumerate() {
        if name != TENSOR_NAMES[i] || (rows, cols) != dims[i] {
            return Err(parse_err(
                hl,
                format!("layer {i} is '{name}' {rows}x{cols}, expected '{}' {}x{}", TENSOR_NAMES[i], dims[i].0, dims[i].1),
            ));
        }
        p.tensors.as_slices_mut()[i].copy_from_slice(&vals);
    }
    Ok(p)
}

pub fn write_estimator<F: Scalar>(s: &EstimatorState<F>) -> String {
    let b = s.bases();
    let c = b.classes();
    let mut out = format!(
        "{ESTIMATOR_TAG} modes={} classes={c} momentum={} warm_up={} epochs_seen={}\n",
        b.num_modes(),
        s.momentum(),
        s.warm_up_epochs(),
        s.epochs_seen()
    );
    for (k, t) in b.iter().enumerate() {
        writeln!(out, "basis{k} {c} {c}\n{}", join(t.entries())).unwrap();
    }
    out
}

pub fn read_estimator<F: Scalar>(text: &str) -> Result<EstimatorState<F>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty snapshot"))?;
    let h = parse_header(header, hl, ESTIMATOR_TAG)?;
    let modes: usize = field(&h, "modes", hl)?;
    let classes: usize = field(&h, "classes", hl)?;
    let momentum: F = field(&h, "momentum", hl)?;
    let warm_up: usize = field(&h, "warm_up", hl)?;
    let seen: usize = field(&h, "epochs_seen", hl)?;
    let blocks = read_blocks::<F>(&mut lines)?;
    if blocks.len() != modes {
        return Err(parse_err(hl, format!("expected {modes} bases, found {}", blocks.len())));
    }
    let mut bases = Vec::with_capacity(modes);
    for (k, (name, rows, cols, vals)) in blocks.into_iter().enumerate() {
        if name != format!("basis{k}") || rows != classes || cols != classes {
            return Err(parse_err(hl, format!("block {k} is '{name}' {rows}x{cols}, expected basis{k} {classes}x{classes}")));
        }
        bases.push(TransitionMatrix::new(classes, vals).map_err(|e| parse_err(hl, e.to_string()))?);
    }
    let bases = BasisSet::new(bases).map_err(|e| parse_err(hl, e.to_string()))?;
    EstimatorState::resume(bases, momentum, warm_up, seen).map_err(|e| parse_err(hl, e.to_string()))
}
