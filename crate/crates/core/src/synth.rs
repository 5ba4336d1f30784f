//! Synthetic datasets with known instance-dependent noise.
//!
//! Feature vectors have two blocks. The *mode block* (the first `d / 2`
//! coordinates) carries the error-mode geometry: Gaussian anchor cores,
//! boundary bands between them, or a smooth curve for the manifold
//! generator. The *class block* (the remaining coordinates) carries the
//! clean class as a prototype plus isotropic noise. Clean labels are drawn
//! uniformly, so P(y) is uniform while P(y | x) is learnable, and the true
//! mode weights depend on the mode block only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::transition::{
    frobenius_error, l1_error, mix_into, sample_row, AssignmentWeights, BasisSet,
    TransitionMatrix,
};
use crate::{Bases, Matrix, Weights};

/// Minimum pairwise row-mean l1 distance between ground-truth bases.
pub const MIN_BASIS_SEPARATION: f64 = 0.05;
const BASIS_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Anchor,
    Epsilon,
    Manifold,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::Anchor => "anchor",
            GeneratorKind::Epsilon => "epsilon",
            GeneratorKind::Manifold => "manifold",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "anchor" => Some(GeneratorKind::Anchor),
            "epsilon" => Some(GeneratorKind::Epsilon),
            "manifold" => Some(GeneratorKind::Manifold),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub generator: GeneratorKind,
    pub num_modes: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_mode: usize,
    pub anchor_fraction: f64,
    pub diag_mass: f64,
    pub cluster_spread: f64,
    /// Distance between neighbouring mode centers (and between consecutive
    /// path vertices on the manifold curve), in units of `cluster_spread`.
    pub mode_separation: f64,
    /// Distance of each class prototype from the origin of the class block,
    /// in units of `cluster_spread`.
    pub class_separation: f64,
    pub epsilon: f64,
    pub manifold_lipschitz: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            generator: GeneratorKind::Anchor,
            num_modes: 3,
            num_classes: 4,
            input_dim: 16,
            samples_per_mode: 5000,
            anchor_fraction: 0.8,
            diag_mass: 0.8,
            cluster_spread: 1.0,
            mode_separation: 16.0,
            class_separation: 4.0,
            epsilon: 0.0,
            manifold_lipschitz: 2.0,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_modes == 0 {
            return bad("num_modes must be >= 1".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.input_dim < 2 {
            return bad(format!(
                "input_dim must be >= 2 to place mode centers, got {}",
                self.input_dim
            ));
        }
        if self.samples_per_mode == 0 {
            return bad("samples_per_mode must be >= 1 (K * n_k = 0)".into());
        }
        if !(0.0..=1.0).contains(&self.anchor_fraction) {
            return bad(format!("anchor_fraction must lie in [0, 1], got {}", self.anchor_fraction));
        }
        if !(self.diag_mass > 0.5 && self.diag_mass <= 1.0) {
            return bad(format!("diag_mass must lie in (0.5, 1], got {}", self.diag_mass));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return bad(format!("cluster_spread must be positive, got {}", self.cluster_spread));
        }
        if !(self.mode_separation > 2.0 && self.mode_separation.is_finite()) {
            return bad(format!(
                "mode_separation must exceed 2 (anchor balls would overlap), got {}",
                self.mode_separation
            ));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return bad(format!("class_separation must be >= 0, got {}", self.class_separation));
        }
        if !(0.0..=0.5).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0, 0.5], got {}", self.epsilon));
        }
        if !(self.manifold_lipschitz >= 0.0 && self.manifold_lipschitz.is_finite()) {
            return bad(format!(
                "manifold_lipschitz must be >= 0, got {}",
                self.manifold_lipschitz
            ));
        }
        if self.generator == GeneratorKind::Manifold {
            if self.num_modes < 2 {
                return bad("the manifold generator needs num_modes >= 2".into());
            }
            if self.manifold_lipschitz <= 0.0 {
                return bad("the manifold generator needs manifold_lipschitz > 0".into());
            }
        }
        Ok(())
    }

    fn mode_dims(&self) -> usize {
        (self.input_dim / 2).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub features: Vec<f64>,
    pub clean_label: usize,
    pub noisy_label: usize,
    pub true_mode_weights: Weights,
    pub anchor_flag: bool,
}

impl Instance {
    pub fn check(&self, classes: usize, modes: usize) -> Result<()> {
        for label in [self.clean_label, self.noisy_label] {
            if label >= classes {
                return Err(Error::InvalidLabel { label, classes });
            }
        }
        if self.true_mode_weights.len() != modes {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {modes} modes",
                self.true_mode_weights.len()
            )));
        }
        AssignmentWeights::new(self.true_mode_weights.as_slice().to_vec()).map(|_| ())
    }

    /// Mode owning the instance: argmax of the true weights.
    pub fn true_mode(&self) -> usize {
        self.true_mode_weights.argmax()
    }
}

/// A generated dataset together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub generator: GeneratorKind,
    pub num_classes: usize,
    pub input_dim: usize,
    pub seed: u64,
    /// Bases the noisy labels were drawn from (the contracted path for the
    /// manifold generator).
    pub truth: Bases,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn num_modes(&self) -> usize {
        self.truth.num_modes()
    }

    /// Ground-truth transition matrix of one instance.
    pub fn true_transition(&self, idx: usize) -> Matrix {
        crate::transition::mix_transition(&self.truth, &self.instances[idx].true_mode_weights)
            .expect("dataset weights match its bases")
    }

    /// Fraction of instances whose noisy label differs from the clean one.
    pub fn noise_rate(&self) -> f64 {
        let flipped = self
            .instances
            .iter()
            .filter(|i| i.clean_label != i.noisy_label)
            .count();
        flipped as f64 / self.instances.len().max(1) as f64
    }
}

/// Diagonally dominant bases with `diag_mass` on every diagonal entry.
///
/// When `K <= C - 1` each mode sends all off-diagonal mass of row `i` to
/// column `(i + s_k) mod C` for a distinct, randomly chosen shift `s_k`.
/// Otherwise each row's off-diagonal mass follows a flat Dirichlet draw.
/// Draws are retried until all pairs are at least
/// [`MIN_BASIS_SEPARATION`] apart in row-mean l1.
pub fn make_ground_truth_bases(
    classes: usize,
    modes: usize,
    diag_mass: f64,
    rng: &mut Rng,
) -> Result<Bases> {
    if classes < 2 || modes == 0 {
        return Err(Error::InvalidConfig(format!(
            "need C >= 2 and K >= 1, got C = {classes}, K = {modes}"
        )));
    }
    if !(diag_mass > 0.5 && diag_mass <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "diag_mass must lie in (0.5, 1], got {diag_mass}"
        )));
    }
    let off = 1.0 - diag_mass;
    for _ in 0..BASIS_RETRIES {
        let mut bases = Vec::with_capacity(modes);
        if modes < classes {
            let mut shifts: Vec<usize> = (1..classes).collect();
            rng.shuffle(&mut shifts);
            for &shift in &shifts[..modes] {
                let mut e = vec![0.0; classes * classes];
                for i in 0..classes {
                    e[i * classes + i] = diag_mass;
                    e[i * classes + (i + shift) % classes] += off;
                }
                bases.push(TransitionMatrix::new(classes, e)?);
            }
        } else {
            for _ in 0..modes {
                let mut e = vec![0.0; classes * classes];
                for i in 0..classes {
                    let spread = rng.simplex(classes - 1);
                    let mut it = spread.into_iter();
                    for j in 0..classes {
                        e[i * classes + j] = if i == j {
                            diag_mass
                        } else {
                            off * it.next().unwrap()
                        };
                    }
                }
                bases.push(TransitionMatrix::new(classes, e)?);
            }
        }
        if pairwise_separated(&bases)? {
            return BasisSet::new(bases);
        }
    }
    Err(Error::DegenerateBases(BASIS_RETRIES))
}

fn pairwise_separated(bases: &[Matrix]) -> Result<bool> {
    for a in 0..bases.len() {
        for b in a + 1..bases.len() {
            if l1_error(&bases[a], &bases[b])? < MIN_BASIS_SEPARATION {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Mode-block centers, pairwise exactly `spacing` apart when K fits on
/// orthogonal axes, otherwise evenly spaced on the first axis.
fn mode_centers(modes: usize, mode_dims: usize, spacing: f64) -> Vec<Vec<f64>> {
    (0..modes)
        .map(|k| {
            let mut c = vec![0.0; mode_dims];
            if modes <= mode_dims {
                c[k] = spacing / std::f64::consts::SQRT_2;
            } else {
                c[0] = spacing * k as f64;
            }
            c
        })
        .collect()
}

/// One prototype per class in the class block, `class_separation * spread`
/// from the origin: orthogonal axes when they fit, random directions otherwise.
fn class_prototypes(cfg: &SyntheticConfig, rng: &mut Rng) -> Vec<Vec<f64>> {
    let dims = cfg.input_dim - cfg.mode_dims();
    let radius = cfg.class_separation * cfg.cluster_spread;
    (0..cfg.num_classes)
        .map(|y| {
            if cfg.num_classes <= dims {
                let mut p = vec![0.0; dims];
                p[y] = radius;
                p
            } else {
                let v: Vec<f64> = (0..dims).map(|_| rng.normal()).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x * radius / n).collect()
            }
        })
        .collect()
}

fn class_block(proto: &[f64], spread: f64, rng: &mut Rng) -> Vec<f64> {
    proto.iter().map(|&p| p + spread * rng.normal()).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Normalized inverse squared distance to the two nearest centers.
pub fn boundary_weights(point: &[f64], centers: &[Vec<f64>]) -> Weights {
    let k = centers.len();
    if k == 1 {
        return AssignmentWeights::one_hot(0, 1);
    }
    let d: Vec<f64> = centers.iter().map(|c| sq_dist(point, c)).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    let (a, b) = (order[0], order[1]);
    let mut w = vec![0.0; k];
    // Inverse squared distances normalized over the pair; written as the
    // complementary distance share so that a point on a center is one-hot.
    let total = d[a] + d[b];
    if total <= 0.0 {
        w[a] = 0.5;
        w[b] = 0.5;
    } else {
        w[a] = d[b] / total;
        w[b] = d[a] / total;
    }
    AssignmentWeights::new(w).expect("two-point weights are a simplex vector")
}

fn check_bases(cfg: &SyntheticConfig, bases: &Bases) -> Result<()> {
    if bases.num_modes() != cfg.num_modes || bases.classes() != cfg.num_classes {
        return Err(Error::DimensionMismatch(format!(
            "bases are K = {}, C = {}; config is K = {}, C = {}",
            bases.num_modes(),
            bases.classes(),
            cfg.num_modes,
            cfg.num_classes
        )));
    }
    Ok(())
}

fn anchor_like(cfg: &SyntheticConfig, bases: &Bases, epsilon: f64, rng: &mut Rng) -> Result<Vec<Instance>> {
    cfg.validate()?;
    check_bases(cfg, bases)?;
    let modes = cfg.num_modes;
    let spread = cfg.cluster_spread;
    let mode_dims = cfg.mode_dims();
    let centers = mode_centers(modes, mode_dims, cfg.mode_separation * spread);
    let mut proto_rng = rng.fork();
    let protos = class_prototypes(cfg, &mut proto_rng);
    let mut mode_rngs: Vec<Rng> = (0..modes).map(|_| rng.fork()).collect();
    let mut label_rng = rng.fork();

    let n_anchor = (cfg.anchor_fraction * cfg.samples_per_mode as f64).round() as usize;
    let mut out = Vec::with_capacity(modes * cfg.samples_per_mode);
    for (k, mrng) in mode_rngs.iter_mut().enumerate() {
        let dist_to = |j: usize| sq_dist(&centers[k], &centers[j]).sqrt();
        let nearest = (0..modes)
            .filter(|&j| j != k)
            .map(dist_to)
            .fold(f64::INFINITY, f64::min);
        let neighbours: Vec<usize> = (0..modes)
            .filter(|&j| j != k && (dist_to(j) - nearest).abs() <= 1e-9 * nearest.max(1.0))
            .collect();
        for s in 0..cfg.samples_per_mode {
            let y = mrng.below(cfg.num_classes);
            let (mode_part, weights, anchor) = if s < n_anchor || neighbours.is_empty() {
                let offset = mrng.in_ball(mode_dims, spread);
                let p: Vec<f64> = centers[k].iter().zip(&offset).map(|(c, o)| c + o).collect();
                let w = if epsilon > 0.0 && modes > 1 {
                    let rest = epsilon / (modes - 1) as f64;
                    let mut w = vec![rest; modes];
                    w[k] = 1.0 - epsilon;
                    AssignmentWeights::new(w)?
                } else {
                    AssignmentWeights::one_hot(k, modes)
                };
                (p, w, true)
            } else {
                let j = neighbours[mrng.below(neighbours.len())];
                let dist = dist_to(j);
                let lo = (spread / dist).min(0.5);
                let lambda = mrng.uniform_range(lo, 0.5);
                let p: Vec<f64> = centers[k]
                    .iter()
                    .zip(&centers[j])
                    .map(|(a, b)| a + lambda * (b - a) + 0.25 * spread * mrng.normal())
                    .collect();
                let w = boundary_weights(&p, &centers);
                (p, w, false)
            };
            let mut features = mode_part;
            features.extend(class_block(&protos[y], spread, mrng));
            out.push(Instance {
                features,
                clean_label: y,
                noisy_label: y,
                true_mode_weights: weights,
                anchor_flag: anchor,
            });
        }
    }
    corrupt_labels(&mut out, bases, &mut label_rng)?;
    Ok(out)
}

/// Anchor cores (one-hot true weights) plus boundary bands between
/// neighbouring centers.
pub fn make_anchor_dataset(cfg: &SyntheticConfig, bases: &Bases, rng: &mut Rng) -> Result<Vec<Instance>> {
    anchor_like(cfg, bases, 0.0, rng)
}

/// Like [`make_anchor_dataset`] but anchor weights are `1 - eps` on the
/// owning mode with `eps` spread evenly over the others.
pub fn make_epsilon_contaminated(
    cfg: &SyntheticConfig,
    bases: &Bases,
    rng: &mut Rng,
) -> Result<Vec<Instance>> {
    if !(0.0..=0.5).contains(&cfg.epsilon) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must lie in [0, 0.5], got {}",
            cfg.epsilon
        )));
    }
    anchor_like(cfg, bases, cfg.epsilon, rng)
}

/// Output of the manifold generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldSample {
    pub instances: Vec<Instance>,
    /// Path vertices actually used; a contraction of the input bases when
    /// their piecewise-linear path was steeper than the configured constant.
    pub path: Bases,
    /// Latent coordinate t in [0, 1] per instance.
    pub latent: Vec<f64>,
}

/// Frobenius Lipschitz constant of the piecewise-linear path through the
/// bases, with each of the K - 1 segments spanning 1 / (K - 1) of [0, 1].
pub fn path_lipschitz(path: &Bases) -> f64 {
    let segs = path.num_modes() - 1;
    (0..segs)
        .map(|j| frobenius_error(path.get(j + 1), path.get(j)).unwrap() * segs as f64)
        .fold(0.0, f64::max)
}

/// Segment-interpolation weights at latent position `t`.
pub fn path_weights(modes: usize, t: f64) -> Weights {
    let segs = (modes - 1) as f64;
    let pos = t.clamp(0.0, 1.0) * segs;
    let j = (pos.floor() as usize).min(modes - 2);
    let frac = pos - j as f64;
    let mut w = vec![0.0; modes];
    w[j] = 1.0 - frac;
    w[j + 1] += frac;
    AssignmentWeights::new(w).expect("interpolation weights are a simplex vector")
}

/// Ground-truth transition at latent position `t`.
pub fn path_transition(path: &Bases, t: f64) -> Matrix {
    crate::transition::mix_transition(path, &path_weights(path.num_modes(), t)).unwrap()
}

fn contract_path(bases: &Bases, lipschitz: f64) -> Result<Bases> {
    let measured = path_lipschitz(bases);
    if measured <= lipschitz {
        return Ok(bases.clone());
    }
    let scale = lipschitz / measured;
    let k = bases.num_modes();
    let c = bases.classes();
    let mut mean = vec![0.0; c * c];
    for b in bases.iter() {
        for (m, &v) in mean.iter_mut().zip(b.entries()) {
            *m += v / k as f64;
        }
    }
    let contracted = bases
        .iter()
        .map(|b| {
            let e = b
                .entries()
                .iter()
                .zip(&mean)
                .map(|(&v, &m)| (m + scale * (v - m)).clamp(0.0, 1.0))
                .collect();
            TransitionMatrix::new(c, e)
        })
        .collect::<Result<Vec<_>>>()?;
    BasisSet::new(contracted)
}

/// Point on the smooth 1-D feature curve: a half circle in the first two
/// mode coordinates (a line when the mode block is one-dimensional), with
/// arc length matching the anchor spacing between consecutive path vertices.
fn curve_point(t: f64, mode_dims: usize, modes: usize, spacing: f64) -> Vec<f64> {
    let arc = spacing * (modes - 1) as f64;
    let mut p = vec![0.0; mode_dims];
    if mode_dims == 1 {
        p[0] = arc * t;
    } else {
        let r = arc / std::f64::consts::PI;
        let theta = std::f64::consts::PI * t;
        p[0] = r * theta.cos();
        p[1] = r * theta.sin();
    }
    p
}

/// Latent t ~ U[0, 1]; the true transition follows the piecewise-linear path
/// through the K bases, the features follow a smooth curve in t plus jitter
/// of `spread / 10`.
pub fn make_lipschitz_manifold(
    cfg: &SyntheticConfig,
    bases: &Bases,
    rng: &mut Rng,
) -> Result<ManifoldSample> {
    let mut cfg = cfg.clone();
    cfg.generator = GeneratorKind::Manifold;
    cfg.validate()?;
    check_bases(&cfg, bases)?;
    let path = contract_path(bases, cfg.manifold_lipschitz)?;
    let modes = cfg.num_modes;
    let spread = cfg.cluster_spread;
    let mode_dims = cfg.mode_dims();
    let mut proto_rng = rng.fork();
    let protos = class_prototypes(&cfg, &mut proto_rng);
    let mut data_rng = rng.fork();
    let mut label_rng = rng.fork();

    let n = modes * cfg.samples_per_mode;
    let mut instances = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let t = data_rng.uniform();
        let y = data_rng.below(cfg.num_classes);
        let mut features: Vec<f64> = curve_point(t, mode_dims, modes, cfg.mode_separation * spread)
            .into_iter()
            .map(|v| v + 0.1 * spread * data_rng.normal())
            .collect();
        features.extend(class_block(&protos[y], spread, &mut data_rng));
        let w = path_weights(modes, t);
        let anchor = w.is_one_hot();
        instances.push(Instance {
            features,
            clean_label: y,
            noisy_label: y,
            true_mode_weights: w,
            anchor_flag: anchor,
        });
        latent.push(t);
    }
    corrupt_labels(&mut instances, &path, &mut label_rng)?;
    Ok(ManifoldSample { instances, path, latent })
}

/// Redraws every noisy label from row `clean_label` of the instance's mixed
/// transition matrix, one uniform per instance in order.
pub fn corrupt_labels(instances: &mut [Instance], bases: &Bases, rng: &mut Rng) -> Result<()> {
    let c = bases.classes();
    let mut mixed = vec![0.0; c * c];
    for inst in instances.iter_mut() {
        let w = inst.true_mode_weights.as_slice();
        if w.len() != bases.num_modes() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} bases",
                w.len(),
                bases.num_modes()
            )));
        }
        AssignmentWeights::new(w.to_vec())?;
        if inst.clean_label >= c {
            return Err(Error::InvalidLabel { label: inst.clean_label, classes: c });
        }
        mix_into(bases, w, &mut mixed);
        let y = inst.clean_label;
        inst.noisy_label = sample_row(&mixed[y * c..(y + 1) * c], rng);
    }
    Ok(())
}

/// Builds bases and instances for `cfg` from its seed alone.
///
/// Stream 1 draws the ground-truth bases, stream 2 the instances.
pub fn generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut basis_rng = Rng::stream(cfg.seed, 1);
    let bases = make_ground_truth_bases(cfg.num_classes, cfg.num_modes, cfg.diag_mass, &mut basis_rng)?;
    generate_with_bases(cfg, bases)
}

/// Like [`generate`] but with caller-provided ground-truth bases.
pub fn generate_with_bases(cfg: &SyntheticConfig, bases: Bases) -> Result<Dataset> {
    let mut rng = Rng::stream(cfg.seed, 2);
    let (truth, instances) = match cfg.generator {
        GeneratorKind::Anchor => {
            let inst = make_anchor_dataset(cfg, &bases, &mut rng)?;
            (bases, inst)
        }
        GeneratorKind::Epsilon => {
            let inst = make_epsilon_contaminated(cfg, &bases, &mut rng)?;
            (bases, inst)
        }
        GeneratorKind::Manifold => {
            let m = make_lipschitz_manifold(cfg, &bases, &mut rng)?;
            (m.path, m.instances)
        }
    };
    Ok(Dataset {
        generator: cfg.generator,
        num_classes: cfg.num_classes,
        input_dim: cfg.input_dim,
        seed: cfg.seed,
        truth,
        instances,
    })
}

/// Confusion-count estimate of a transition matrix from (clean, noisy) pairs.
/// Rows without any clean sample stay uniform.
pub fn empirical_transition(
    classes: usize,
    pairs: impl IntoIterator<Item = (usize, usize)>,
) -> Matrix {
    let mut counts = vec![0.0; classes * classes];
    for (y, yn) in pairs {
        counts[y * classes + yn] += 1.0;
    }
    for row in counts.chunks_mut(classes) {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / classes as f64);
        }
    }
    TransitionMatrix::new(classes, counts).expect("normalized counts are stochastic")
}
