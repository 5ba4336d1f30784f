//! Two-layer encoder with a linear classifier head, subspace gating and the
//! cosine-affinity decoupling loss, all with hand-written reverse passes.
//!
//! Layout conventions (row-major):
//! `w1` is `d x H`, `w2` is `H x D`, `w3` is `D x C`. The basis vector of
//! feature dimension `u` is column `u` of `w2`, i.e. the incoming weights
//! that produce `h_u`.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::transition::{AssignmentWeights, BasisSet};

/// Stabilizer added to the inter-subspace sum of the decoupling loss.
pub const DEC_EPS: f64 = 1e-8;
/// Floor on the probability of the observed label inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// K contiguous, equal-width chunks of the feature dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubspacePartition {
    dims: usize,
    parts: usize,
}

impl SubspacePartition {
    pub fn new(dims: usize, parts: usize) -> Result<Self> {
        if parts == 0 || dims == 0 || dims % parts != 0 {
            return Err(Error::DimensionMismatch(format!(
                "feature dimension {dims} is not divisible into {parts} subspaces"
            )));
        }
        Ok(SubspacePartition { dims, parts })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn num_subspaces(&self) -> usize {
        self.parts
    }

    pub fn width(&self) -> usize {
        self.dims / self.parts
    }

    /// Indices `[k D / K, (k + 1) D / K)`.
    pub fn range(&self, k: usize) -> Range<usize> {
        let w = self.width();
        k * w..(k + 1) * w
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.parts).map(|k| self.range(k))
    }

    /// Subspace containing dimension `u`.
    pub fn subspace_of(&self, u: usize) -> usize {
        u / self.width()
    }
}

/// Convenience wrapper matching the operation name used in docs and CLI.
pub fn partition_subspaces(dims: usize, parts: usize) -> Result<SubspacePartition> {
    SubspacePartition::new(dims, parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub input: usize,
    pub hidden: usize,
    pub feature: usize,
    pub classes: usize,
    pub subspaces: usize,
}

/// Weight and bias buffers; also used as the gradient record.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors<F> {
    pub w1: Vec<F>,
    pub b1: Vec<F>,
    pub w2: Vec<F>,
    pub b2: Vec<F>,
    pub w3: Vec<F>,
    pub b3: Vec<F>,
}

pub const TENSOR_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "w3", "b3"];

impl<F: Scalar> Tensors<F> {
    pub fn zeros(s: &Shape) -> Self {
        Tensors {
            w1: vec![F::zero(); s.input * s.hidden],
            b1: vec![F::zero(); s.hidden],
            w2: vec![F::zero(); s.hidden * s.feature],
            b2: vec![F::zero(); s.feature],
            w3: vec![F::zero(); s.feature * s.classes],
            b3: vec![F::zero(); s.classes],
        }
    }

    pub fn as_slices(&self) -> [&[F]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn as_slices_mut(&mut self) -> [&mut Vec<F>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    /// `(rows, cols)` of each buffer in [`TENSOR_NAMES`] order.
    pub fn dims(s: &Shape) -> [(usize, usize); 6] {
        [
            (s.input, s.hidden),
            (1, s.hidden),
            (s.hidden, s.feature),
            (1, s.feature),
            (s.feature, s.classes),
            (1, s.classes),
        ]
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Tensors<F>, scale: F) {
        for (a, b) in self.as_slices_mut().into_iter().zip(other.as_slices()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + scale * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.as_slices().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<F> {
    pub shape: Shape,
    pub tau: F,
    pub partition: SubspacePartition,
    pub tensors: Tensors<F>,
}

impl<F: Scalar> NetworkParams<F> {
    pub fn zeros(shape: Shape, tau: F) -> Result<Self> {
        let partition = SubspacePartition::new(shape.feature, shape.subspaces)?;
        if !(tau > F::zero()) {
            return Err(Error::InvalidConfig(format!("temperature must be positive, got {tau}")));
        }
        if shape.input == 0 || shape.hidden == 0 || shape.classes < 2 {
            return Err(Error::InvalidConfig(format!("degenerate network shape {shape:?}")));
        }
        Ok(NetworkParams { shape, tau, partition, tensors: Tensors::zeros(&shape) })
    }

    /// Every layer uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, drawn in
    /// the order w1, b1, w2, b2, w3, b3.
    pub fn init(shape: Shape, tau: F, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(shape, tau)?;
        let fan_in = [shape.input, shape.input, shape.hidden, shape.hidden, shape.feature, shape.feature];
        for (buf, fan) in p.tensors.as_slices_mut().into_iter().zip(fan_in) {
            let bound = 1.0 / (fan as f64).sqrt();
            for v in buf.iter_mut() {
                *v = F::of(rng.uniform_range(-bound, bound));
            }
        }
        Ok(p)
    }

    /// Basis vector of feature dimension `u` (column `u` of `w2`).
    pub fn basis_vector(&self, u: usize) -> Vec<F> {
        let d = self.shape.feature;
        (0..self.shape.hidden).map(|j| self.tensors.w2[j * d + u]).collect()
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<F> {
    pub pre_hidden: Vec<F>,
    pub hidden: Vec<F>,
    pub features: Vec<F>,
    pub logits: Vec<F>,
    pub posterior: Vec<F>,
}

/// Softmax after subtracting the maximum.
pub fn softmax<F: Scalar>(z: &[F]) -> Vec<F> {
    let m = z.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let e: Vec<F> = z.iter().map(|&v| (v - m).exp()).collect();
    let s = e.iter().fold(F::zero(), |a, &b| a + b);
    e.into_iter().map(|v| v / s).collect()
}

fn affine<F: Scalar>(x: &[F], w: &[F], b: &[F]) -> Vec<F> {
    let out = b.len();
    let mut y = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi == F::zero() {
            continue;
        }
        let row = &w[i * out..(i + 1) * out];
        for (yj, &wij) in y.iter_mut().zip(row) {
            *yj = *yj + xi * wij;
        }
    }
    y
}

pub fn forward<F: Scalar>(params: &NetworkParams<F>, x: &[F]) -> Result<Forward<F>> {
    let s = &params.shape;
    if x.len() != s.input {
        return Err(Error::DimensionMismatch(format!(
            "input has length {}, network expects {}",
            x.len(),
            s.input
        )));
    }
    let t = &params.tensors;
    let pre_hidden = affine(x, &t.w1, &t.b1);
    let hidden: Vec<F> = pre_hidden.iter().map(|&v| v.max(F::zero())).collect();
    let features = affine(&hidden, &t.w2, &t.b2);
    let logits = affine(&features, &t.w3, &t.b3);
    if logits.iter().chain(&features).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forward pass produced a non-finite activation".into()));
    }
    let posterior = softmax(&logits);
    Ok(Forward { pre_hidden, hidden, features, logits, posterior })
}

/// Per-subspace mean absolute activation.
pub fn subspace_scores<F: Scalar>(h: &[F], partition: &SubspacePartition) -> Vec<F> {
    let width = F::of(partition.width() as f64);
    partition
        .ranges()
        .map(|r| h[r].iter().fold(F::zero(), |a, &v| a + v.abs()) / width)
        .collect()
}

/// Gate weights: softmax over the per-subspace mean magnitudes.
pub fn assignment<F: Scalar>(h: &[F], partition: &SubspacePartition) -> Result<AssignmentWeights<F>> {
    if h.len() != partition.dims() {
        return Err(Error::DimensionMismatch(format!(
            "feature vector has length {}, partition covers {}",
            h.len(),
            partition.dims()
        )));
    }
    Ok(AssignmentWeights::from_trusted(softmax(&subspace_scores(h, partition))))
}

/// `q_j = sum_i p_i M_ij` with `M = sum_k w_k T^(k)`.
pub fn corrected_posterior<F: Scalar>(posterior: &[F], omega: &[F], bases: &BasisSet<F>) -> Vec<F> {
    let c = bases.classes();
    let mut q = vec![F::zero(); c];
    for (b, &w) in bases.iter().zip(omega) {
        if w == F::zero() {
            continue;
        }
        for (i, &p) in posterior.iter().enumerate() {
            let pw = p * w;
            for (qj, &t) in q.iter_mut().zip(b.row(i)) {
                *qj = *qj + pw * t;
            }
        }
    }
    q
}

fn columns<F: Scalar>(w2: &[F], hidden: usize, dims: usize) -> Vec<Vec<F>> {
    (0..dims)
        .map(|u| (0..hidden).map(|j| w2[j * dims + u]).collect())
        .collect()
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Decoupling loss on the columns of the `H x D` feature-layer matrix.
///
/// `-1/K * sum_k log( sum_{u != v in S_k} e^{s_uv/tau}
///                    / (sum_{u in S_k, w not in S_k} e^{s_uw/tau} + eps) )`
/// with `s` the cosine similarity. For K = 1 the inter sum is empty and the
/// denominator is `eps` alone.
pub fn decoupling_loss<F: Scalar>(
    w2: &[F],
    hidden: usize,
    partition: &SubspacePartition,
    tau: F,
    eps: F,
) -> Result<F> {
    decoupling_loss_and_grad(w2, hidden, partition, tau, eps, false).map(|(l, _)| l)
}

/// Loss value and, when `with_grad`, its gradient with respect to `w2`.
pub fn decoupling_loss_and_grad<F: Scalar>(
    w2: &[F],
    hidden: usize,
    partition: &SubspacePartition,
    tau: F,
    eps: F,
    with_grad: bool,
) -> Result<(F, Vec<F>)> {
    let dims = partition.dims();
    if w2.len() != hidden * dims {
        return Err(Error::DimensionMismatch(format!(
            "feature-layer matrix has {} entries, expected {hidden} x {dims}",
            w2.len()
        )));
    }
    if partition.width() < 2 {
        return Err(Error::InvalidConfig(
            "the decoupling loss needs at least 2 dimensions per subspace".into(),
        ));
    }
    let cols = columns(w2, hidden, dims);
    let norms: Vec<F> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    if let Some(u) = norms.iter().position(|&n| !(n.as_f64() >= 1e-12)) {
        return Err(Error::NonFinite(format!("basis vector {u} has (near-)zero norm")));
    }
    let unit: Vec<Vec<F>> = cols
        .iter()
        .zip(&norms)
        .map(|(c, &n)| c.iter().map(|&v| v / n).collect())
        .collect();
    let mut sim = vec![F::zero(); dims * dims];
    let mut ex = vec![F::zero(); dims * dims];
    for u in 0..dims {
        for v in u + 1..dims {
            let s = dot(&unit[u], &unit[v]);
            let e = (s / tau).exp();
            sim[u * dims + v] = s;
            sim[v * dims + u] = s;
            ex[u * dims + v] = e;
            ex[v * dims + u] = e;
        }
    }
    let k_count = partition.num_subspaces();
    let kf = F::of(k_count as f64);
    let mut intra = vec![F::zero(); k_count];
    let mut inter = vec![F::zero(); k_count];
    for u in 0..dims {
        let ku = partition.subspace_of(u);
        for v in 0..dims {
            if u == v {
                continue;
            }
            if partition.subspace_of(v) == ku {
                intra[ku] = intra[ku] + ex[u * dims + v];
            } else {
                inter[ku] = inter[ku] + ex[u * dims + v];
            }
        }
    }
    let loss = intra
        .iter()
        .zip(&inter)
        .fold(F::zero(), |acc, (&a, &b)| acc - (a / (b + eps)).ln())
        / kf;
    if !loss.is_finite() {
        return Err(Error::NonFinite("decoupling loss is not finite".into()));
    }
    if !with_grad {
        return Ok((loss, Vec::new()));
    }

    // dL/ds_uv for the unordered pair {u, v}: each ordered occurrence
    // contributes coefficient * e_uv / tau.
    let mut grad = vec![F::zero(); hidden * dims];
    for u in 0..dims {
        let ku = partition.subspace_of(u);
        for v in u + 1..dims {
            let kv = partition.subspace_of(v);
            let e = ex[u * dims + v];
            let coeff = if ku == kv {
                // (u, v) and (v, u) both sit in intra[ku]
                -F::of(2.0) / (kf * intra[ku])
            } else {
                // (u, v) in inter[ku], (v, u) in inter[kv]
                F::one() / (kf * (inter[ku] + eps)) + F::one() / (kf * (inter[kv] + eps))
            };
            let ds = coeff * e / tau;
            let s = sim[u * dims + v];
            for j in 0..hidden {
                // d s_uv / d w_u = (uhat_v - s uhat_u) / |w_u|
                let gu = (unit[v][j] - s * unit[u][j]) / norms[u];
                let gv = (unit[u][j] - s * unit[v][j]) / norms[v];
                grad[j * dims + u] = grad[j * dims + u] + ds * gu;
                grad[j * dims + v] = grad[j * dims + v] + ds * gv;
            }
        }
    }
    Ok((loss, grad))
}

/// Where the gate weights of the corrected objective come from.
#[derive(Debug, Clone, Copy)]
pub enum GateSource<'a, F> {
    /// Computed from the features; `detach` blocks the gradient through them.
    Learned { detach: bool },
    /// One weight vector per batch element (e.g. ground truth).
    Fixed(&'a [AssignmentWeights<F>]),
}

/// Noise channel applied to the clean posterior before the log-loss.
#[derive(Debug, Clone, Copy)]
pub enum Correction<'a, F> {
    /// Plain cross-entropy on the posterior.
    Plain,
    /// Posterior pushed through `sum_k w_k T^(k)`; the bases are constants.
    Channel { bases: &'a BasisSet<F>, gate: GateSource<'a, F> },
}

#[derive(Debug, Clone, Copy)]
pub enum LossSpec<'a, F> {
    CorrectedCe(Correction<'a, F>),
    Decoupling,
    /// `CE + lambda * L_dec`.
    Total { correction: Correction<'a, F>, lambda: F },
}

/// One training example: features and observed (noisy) label.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a, F> {
    pub x: &'a [F],
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval<F> {
    pub total: F,
    /// Batch-mean cross-entropy term (zero for the decoupling-only spec).
    pub ce: F,
    /// Unweighted decoupling loss (zero when the spec does not include it).
    pub dec: F,
    /// Instances whose observed-label probability hit the floor.
    pub clamped: usize,
    pub grads: Tensors<F>,
}

/// Exact reverse-mode gradients of the batch loss. Proxy labels and bases
/// are constants; the cross-entropy is averaged over the batch and the
/// decoupling term added once.
pub fn compute_gradients<F: Scalar>(
    params: &NetworkParams<F>,
    batch: &[Sample<'_, F>],
    spec: LossSpec<'_, F>,
) -> Result<LossEval<F>> {
    let s = params.shape;
    let mut grads = Tensors::zeros(&s);
    let (correction, ce_on, lambda) = match spec {
        LossSpec::CorrectedCe(c) => (Some(c), true, F::zero()),
        LossSpec::Decoupling => (None, false, F::one()),
        LossSpec::Total { correction, lambda } => (Some(correction), true, lambda),
    };

    let mut ce_sum = F::zero();
    let mut clamped = 0;
    if ce_on {
        if batch.is_empty() {
            return Err(Error::DimensionMismatch("empty batch".into()));
        }
        let correction = correction.unwrap();
        if let Correction::Channel { bases, gate } = correction {
            if bases.classes() != s.classes {
                return Err(Error::DimensionMismatch("bases and classifier disagree on C".into()));
            }
            match gate {
                GateSource::Learned { .. } => {
                    if bases.num_modes() != s.subspaces {
                        return Err(Error::DimensionMismatch(format!(
                            "{} bases for {} subspaces",
                            bases.num_modes(),
                            s.subspaces
                        )));
                    }
                }
                GateSource::Fixed(w) => {
                    if w.len() != batch.len() || w.iter().any(|w| w.len() != bases.num_modes()) {
                        return Err(Error::DimensionMismatch("fixed gate weights do not match batch".into()));
                    }
                }
            }
        }
        let scale = F::one() / F::of(batch.len() as f64);
        for (n, sample) in batch.iter().enumerate() {
            if sample.label >= s.classes {
                return Err(Error::InvalidLabel { label: sample.label, classes: s.classes });
            }
            let (loss, hit) = accumulate_ce(params, sample, n, correction, scale, &mut grads)?;
            ce_sum = ce_sum + loss;
            clamped += usize::from(hit);
        }
    }
    let ce = if ce_on { ce_sum / F::of(batch.len() as f64) } else { F::zero() };

    let mut dec = F::zero();
    if lambda != F::zero() {
        let (l, g) = decoupling_loss_and_grad(
            &params.tensors.w2,
            s.hidden,
            &params.partition,
            params.tau,
            F::of(DEC_EPS),
            true,
        )?;
        dec = l;
        for (a, &b) in grads.w2.iter_mut().zip(&g) {
            *a = *a + lambda * b;
        }
    }
    let total = ce + lambda * dec;
    if !total.is_finite() || !grads.all_finite() {
        return Err(Error::NonFinite("loss or gradient is not finite".into()));
    }
    Ok(LossEval { total, ce, dec, clamped, grads })
}

/// Adds `scale * d(loss_n)/d(params)` into `grads`; returns the unscaled
/// loss and whether the probability floor was hit.
fn accumulate_ce<F: Scalar>(
    params: &NetworkParams<F>,
    sample: &Sample<'_, F>,
    index: usize,
    correction: Correction<'_, F>,
    scale: F,
    grads: &mut Tensors<F>,
) -> Result<(F, bool)> {
    let s = params.shape;
    let t = &params.tensors;
    let fw = forward(params, sample.x)?;
    let p = &fw.posterior;
    let y = sample.label;

    let mut omega_info: Option<(Vec<F>, bool)> = None; // (omega, learned-and-attached)
    let (q_y, grad_p, grad_omega) = match correction {
        Correction::Plain => {
            let q_y = p[y];
            let mut gp = vec![F::zero(); s.classes];
            gp[y] = -F::one() / q_y;
            (q_y, gp, None)
        }
        Correction::Channel { bases, gate } => {
            let (omega, attached) = match gate {
                GateSource::Learned { detach } => {
                    (softmax(&subspace_scores(&fw.features, &params.partition)), !detach)
                }
                GateSource::Fixed(ws) => (ws[index].as_slice().to_vec(), false),
            };
            let q = corrected_posterior(p, &omega, bases);
            let q_y = q[y];
            // dL/dp_i = -M_iy / q_y ; dL/dw_k = -(sum_i p_i T^k_iy) / q_y
            let mut gp = vec![F::zero(); s.classes];
            for (b, &w) in bases.iter().zip(&omega) {
                for (i, g) in gp.iter_mut().enumerate() {
                    *g = *g - w * b.get(i, y) / q_y;
                }
            }
            let gw: Vec<F> = bases
                .iter()
                .map(|b| {
                    -(0..s.classes).fold(F::zero(), |acc, i| acc + p[i] * b.get(i, y)) / q_y
                })
                .collect();
            omega_info = Some((omega, attached));
            (q_y, gp, Some(gw))
        }
    };

    if q_y < F::of(PROB_FLOOR) {
        return Ok((-F::of(PROB_FLOOR).ln(), true));
    }
    let loss = -q_y.ln();

    // softmax backward: dz_c = p_c (g_c - sum_i p_i g_i)
    let pg = p.iter().zip(&grad_p).fold(F::zero(), |a, (&pi, &gi)| a + pi * gi);
    let dz: Vec<F> = p.iter().zip(&grad_p).map(|(&pc, &gc)| pc * (gc - pg)).collect();

    let (dd, cc) = (s.feature, s.classes);
    let mut dh = vec![F::zero(); dd];
    for u in 0..dd {
        let hu = fw.features[u];
        let row = &t.w3[u * cc..(u + 1) * cc];
        let grow = &mut grads.w3[u * cc..(u + 1) * cc];
        let mut acc = F::zero();
        for c in 0..cc {
            grow[c] = grow[c] + scale * hu * dz[c];
            acc = acc + row[c] * dz[c];
        }
        dh[u] = acc;
    }
    for (gb, &d) in grads.b3.iter_mut().zip(&dz) {
        *gb = *gb + scale * d;
    }

    if let (Some((omega, true)), Some(gw)) = (&omega_info, &grad_omega) {
        // gate softmax backward, then mean-|h| backward
        let wg = omega.iter().zip(gw).fold(F::zero(), |a, (&w, &g)| a + w * g);
        let width = F::of(params.partition.width() as f64);
        for (k, r) in params.partition.ranges().enumerate() {
            let ds = omega[k] * (gw[k] - wg);
            for u in r {
                let hu = fw.features[u];
                let sign = if hu > F::zero() {
                    F::one()
                } else if hu < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                };
                dh[u] = dh[u] + ds * sign / width;
            }
        }
    }

    let hh = s.hidden;
    let mut da = vec![F::zero(); hh];
    for j in 0..hh {
        let rj = fw.hidden[j];
        let row = &t.w2[j * dd..(j + 1) * dd];
        let grow = &mut grads.w2[j * dd..(j + 1) * dd];
        let mut acc = F::zero();
        for u in 0..dd {
            grow[u] = grow[u] + scale * rj * dh[u];
            acc = acc + row[u] * dh[u];
        }
        da[j] = if fw.pre_hidden[j] > F::zero() { acc } else { F::zero() };
    }
    for (gb, &d) in grads.b2.iter_mut().zip(&dh) {
        *gb = *gb + scale * d;
    }
    for (i, &xi) in sample.x.iter().enumerate() {
        let grow = &mut grads.w1[i * hh..(i + 1) * hh];
        for j in 0..hh {
            grow[j] = grow[j] + scale * xi * da[j];
        }
    }
    for (gb, &d) in grads.b1.iter_mut().zip(&da) {
        *gb = *gb + scale * d;
    }
    Ok((loss, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transition::TransitionMatrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use crate::rng::Rng;

    #[test]
    fn partition_examples() {
        let p = partition_subspaces(8, 2).unwrap();
        assert_eq!(p.range(0), 0..4);
        assert_eq!(p.range(1), 4..8);
        let p = partition_subspaces(8, 1).unwrap();
        assert_eq!(p.range(0), 0..8);
        assert!(matches!(partition_subspaces(6, 4), Err(Error::DimensionMismatch(_))));
        assert!(partition_subspaces(6, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_covers_disjointly(k in 1usize..9, width in 1usize..9) {
            let d = k * width;
            let p = partition_subspaces(d, k).unwrap();
            let mut seen = vec![0; d];
            for (kk, r) in p.ranges().enumerate() {
                for u in r {
                    seen[u] += 1;
                    prop_assert_eq!(p.subspace_of(u), kk);
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }

        #[test]
        fn assignment_is_simplex(h in proptest::collection::vec(-50.0f64..50.0, 12), k in prop::sample::select(vec![1usize, 2, 3, 4, 6, 12])) {
            let p = partition_subspaces(12, k).unwrap();
            let w = assignment(&h, &p).unwrap();
            let s: f64 = w.as_slice().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(w.as_slice().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn posterior_is_simplex(seed in any::<u64>(), x in proptest::collection::vec(-10.0f64..10.0, 3)) {
            let mut rng = Rng::seed_from_u64(seed);
            let p = NetworkParams::<f64>::init(small_shape(), 0.1, &mut rng).unwrap();
            let f = forward(&p, &x).unwrap();
            let s: f64 = f.posterior.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(f.posterior.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    fn small_shape() -> Shape {
        Shape { input: 3, hidden: 4, feature: 4, classes: 3, subspaces: 2 }
    }

    #[test]
    fn zero_network_is_uniform() {
        let p = NetworkParams::<f64>::zeros(small_shape(), 0.1).unwrap();
        let f = forward(&p, &[1.0, -2.0, 3.0]).unwrap();
        assert!(f.features.iter().all(|&v| v == 0.0));
        for v in f.posterior {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert!(forward(&p, &[1.0]).is_err());
    }

    #[test]
    fn hand_computed_logits() {
        // d = 1, H = 2, D = 2, C = 2
        let shape = Shape { input: 1, hidden: 2, feature: 2, classes: 2, subspaces: 1 };
        let mut p = NetworkParams::<f64>::zeros(shape, 0.1).unwrap();
        p.tensors.w1 = vec![1.0, -1.0];
        p.tensors.b1 = vec![0.5, 0.5];
        p.tensors.w2 = vec![2.0, 0.0, 1.0, 3.0];
        p.tensors.b2 = vec![0.0, 1.0];
        p.tensors.w3 = vec![1.0, -1.0, 0.5, 2.0];
        p.tensors.b3 = vec![0.1, 0.2];
        // x = 2: pre = (2.5, -1.5), relu = (2.5, 0)
        // h = (2.5*2 + 0*1, 2.5*0 + 0*3 + 1) = (5, 1)
        // logits = (5*1 + 1*0.5 + 0.1, 5*-1 + 1*2 + 0.2) = (5.6, -2.8)
        let f = forward(&p, &[2.0]).unwrap();
        assert_eq!(f.features, vec![5.0, 1.0]);
        assert_abs_diff_eq!(f.logits[0], 5.6, epsilon = 1e-12);
        assert_abs_diff_eq!(f.logits[1], -2.8, epsilon = 1e-12);
        let e = (-8.4f64).exp();
        assert_abs_diff_eq!(f.posterior[1], e / (1.0 + e), epsilon = 1e-15);
    }

    #[test]
    fn forward_flags_non_finite() {
        let mut p = NetworkParams::<f64>::zeros(small_shape(), 0.1).unwrap();
        p.tensors.b3[0] = f64::INFINITY;
        assert!(matches!(forward(&p, &[0.0; 3]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn assignment_examples() {
        let p = partition_subspaces(4, 2).unwrap();
        let w = assignment(&[1.0, -1.0, 1.0, 1.0], &p).unwrap();
        assert_abs_diff_eq!(w.as_slice()[0], 0.5, epsilon = 1e-15);
        // mean magnitudes (2, 1)
        let w = assignment(&[2.0, -2.0, 0.5, 1.5], &p).unwrap();
        let e2 = 2f64.exp();
        let e1 = 1f64.exp();
        assert_abs_diff_eq!(w.as_slice()[0], e2 / (e2 + e1), epsilon = 1e-12);
        assert_abs_diff_eq!(w.as_slice()[0], 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(w.as_slice()[1], 0.2689, epsilon = 1e-4);
        // positive rescaling changes the gate but keeps a simplex vector
        let w3 = assignment(&[6.0, -6.0, 1.5, 4.5], &p).unwrap();
        assert!(w3.as_slice()[0] > w.as_slice()[0]);
        assert!(assignment(&[1.0, 2.0, 3.0], &p).is_err());
    }

    fn orthogonal_pairs_w2() -> Vec<f64> {
        // H = 4, D = 4: columns u0 = u1 = e0, u2 = u3 = e1.
        let cols = [[1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
        let mut w2 = vec![0.0; 16];
        for (u, c) in cols.iter().enumerate() {
            for j in 0..4 {
                w2[j * 4 + u] = c[j];
            }
        }
        w2
    }

    #[test]
    fn decoupling_hand_value() {
        // Intra cosine 1 (two ordered pairs per subspace), inter cosine 0
        // (2 x 2 ordered pairs per subspace), tau = 1:
        // each subspace contributes -log(2e / (4 + 1e-8)).
        let p = partition_subspaces(4, 2).unwrap();
        let l = decoupling_loss(&orthogonal_pairs_w2(), 4, &p, 1.0, DEC_EPS).unwrap();
        let e = 1f64.exp();
        let per = -(2.0 * e / (4.0 + 1e-8)).ln();
        assert_abs_diff_eq!(l, per, epsilon = 1e-12);
    }

    #[test]
    fn decoupling_single_subspace_uses_eps_denominator() {
        let p = partition_subspaces(4, 1).unwrap();
        let w2 = orthogonal_pairs_w2();
        let l = decoupling_loss(&w2, 4, &p, 1.0, DEC_EPS).unwrap();
        // all 12 ordered pairs are intra: 4 with cosine 1, 8 with cosine 0
        let intra = 4.0 * 1f64.exp() + 8.0;
        assert_abs_diff_eq!(l, -(intra / 1e-8).ln(), epsilon = 1e-9);
        assert!(l.is_finite());
    }

    #[test]
    fn decoupling_scale_invariant_and_errors() {
        let mut rng = Rng::seed_from_u64(4);
        let p = partition_subspaces(6, 3).unwrap();
        let mut w2: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
        let a = decoupling_loss(&w2, 5, &p, 0.1, DEC_EPS).unwrap();
        for j in 0..5 {
            w2[j * 6 + 4] *= 7.5;
        }
        let b = decoupling_loss(&w2, 5, &p, 0.1, DEC_EPS).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        for j in 0..5 {
            w2[j * 6 + 1] = 0.0;
        }
        assert!(matches!(
            decoupling_loss(&w2, 5, &p, 0.1, DEC_EPS),
            Err(Error::NonFinite(_))
        ));
        let thin = partition_subspaces(6, 6).unwrap();
        assert!(decoupling_loss(&w2, 5, &thin, 0.1, DEC_EPS).is_err());
    }

    #[test]
    fn decoupling_decreases_with_inter_similarity() {
        // Columns in 3-D: subspace 0 = {a, a}, subspace 1 = {b, b}, where the
        // angle between a and b shrinks the inter cosine from 0.9 to 0.
        let p = partition_subspaces(4, 2).unwrap();
        let mut prev = f64::INFINITY;
        for step in 0..10 {
            let cos: f64 = 0.9 - 0.1 * step as f64;
            let sin = (1.0 - cos * cos).sqrt();
            let a = [1.0, 0.0, 0.0];
            let b = [cos, sin, 0.0];
            let cols = [a, a, b, b];
            let mut w2 = vec![0.0; 12];
            for (u, c) in cols.iter().enumerate() {
                for j in 0..3 {
                    w2[j * 4 + u] = c[j];
                }
            }
            let l = decoupling_loss(&w2, 3, &p, 0.5, DEC_EPS).unwrap();
            assert!(l < prev, "loss did not decrease at inter cosine {cos}");
            prev = l;
        }
    }

    #[test]
    fn zero_network_bias_gradient_is_posterior_minus_onehot() {
        let shape = Shape { input: 2, hidden: 3, feature: 2, classes: 2, subspaces: 1 };
        let p = NetworkParams::<f64>::zeros(shape, 0.1).unwrap();
        let xs = [[0.3, -1.0], [2.0, 0.5], [0.0, 1.0], [1.0, 1.0]];
        let labels = [0, 1, 1, 1];
        let batch: Vec<Sample<f64>> = xs
            .iter()
            .zip(labels)
            .map(|(x, label)| Sample { x: x.as_slice(), label })
            .collect();
        let r = compute_gradients(&p, &batch, LossSpec::CorrectedCe(Correction::Plain)).unwrap();
        // posterior (0.5, 0.5); mean of p - onehot over labels 0,1,1,1
        assert_abs_diff_eq!(r.grads.b3[0], 0.5 - 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(r.grads.b3[1], 0.5 - 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(r.ce, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn decoupling_gradient_ignores_classifier() {
        let mut rng = Rng::seed_from_u64(12);
        let p = NetworkParams::<f64>::init(small_shape(), 0.1, &mut rng).unwrap();
        let r = compute_gradients::<f64>(&p, &[], LossSpec::Decoupling).unwrap();
        assert!(r.grads.w3.iter().chain(&r.grads.b3).all(|&g| g == 0.0));
        assert!(r.grads.w1.iter().chain(&r.grads.b1).chain(&r.grads.b2).all(|&g| g == 0.0));
        assert!(r.grads.w2.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn identity_channel_matches_plain() {
        let mut rng = Rng::seed_from_u64(3);
        let p = NetworkParams::<f64>::init(small_shape(), 0.1, &mut rng).unwrap();
        let bases = BasisSet::repeated(TransitionMatrix::identity(3), 2).unwrap();
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let batch: Vec<Sample<f64>> =
            xs.iter().enumerate().map(|(i, x)| Sample { x, label: i % 3 }).collect();
        let plain = compute_gradients(&p, &batch, LossSpec::CorrectedCe(Correction::Plain)).unwrap();
        let chan = compute_gradients(
            &p,
            &batch,
            LossSpec::CorrectedCe(Correction::Channel {
                bases: &bases,
                gate: GateSource::Learned { detach: false },
            }),
        )
        .unwrap();
        assert_abs_diff_eq!(plain.total, chan.total, epsilon = 1e-12);
        for (a, b) in plain.grads.as_slices().iter().zip(chan.grads.as_slices()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn f32_forward_agrees_with_f64() {
        let mut rng = Rng::seed_from_u64(8);
        let p64 = NetworkParams::<f64>::init(small_shape(), 0.1, &mut rng).unwrap();
        let mut p32 = NetworkParams::<f32>::zeros(small_shape(), 0.1).unwrap();
        for (dst, src) in p32.tensors.as_slices_mut().into_iter().zip(p64.tensors.as_slices()) {
            *dst = src.iter().map(|&v| v as f32).collect();
        }
        let x = [0.5, -0.25, 1.0];
        let a = forward(&p64, &x).unwrap();
        let b = forward(&p32, &[0.5f32, -0.25, 1.0]).unwrap();
        for (u, v) in a.posterior.iter().zip(&b.posterior) {
            assert!((u - *v as f64).abs() < 1e-5);
        }
    }
}
