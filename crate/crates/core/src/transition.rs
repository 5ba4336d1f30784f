//! Transition-matrix algebra: validation, mixing, label sampling, error
//! metrics and permutation alignment of basis sets.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Row sums must equal 1 within this absolute tolerance.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Slack on the [0, 1] entry range for round-off.
pub const RANGE_TOL: f64 = 1e-12;

/// Row-stochastic `C x C` matrix; entry `(i, j)` is P(observed j | true i).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<F> {
    classes: usize,
    entries: Vec<F>,
}

/// Checks the stochastic-matrix invariants on a row-major `classes x classes`
/// buffer and reports the first violation, scanning row by row.
pub fn validate_transition<F: Scalar>(classes: usize, entries: &[F]) -> Result<()> {
    if classes < 2 {
        return Err(Error::DimensionMismatch(format!(
            "transition matrices need at least 2 classes, got {classes}"
        )));
    }
    if entries.len() != classes * classes {
        return Err(Error::DimensionMismatch(format!(
            "expected {} entries for C = {classes}, got {}",
            classes * classes,
            entries.len()
        )));
    }
    for (i, row) in entries.chunks(classes).enumerate() {
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let v = v.as_f64();
            if !(v >= -RANGE_TOL && v <= 1.0 + RANGE_TOL) {
                return Err(Error::OutOfRangeEntry { row: i, col: j, value: v });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::NonStochasticRow { index: i, sum });
        }
    }
    Ok(())
}

impl<F: Scalar> TransitionMatrix<F> {
    pub fn new(classes: usize, entries: Vec<F>) -> Result<Self> {
        validate_transition(classes, &entries)?;
        Ok(TransitionMatrix { classes, entries })
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::DimensionMismatch("matrix is not square".into()));
        }
        Self::new(classes, rows.concat())
    }

    /// Convenience constructor from `f64` rows (test fixtures, parsed files).
    pub fn from_f64_rows(rows: &[&[f64]]) -> Result<Self> {
        let rows: Vec<Vec<F>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| F::of(v)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    /// Wraps a buffer already known to be stochastic (convex combinations,
    /// renormalized rows). Debug builds still check.
    pub(crate) fn from_trusted(classes: usize, entries: Vec<F>) -> Self {
        debug_assert!(validate_transition(classes, &entries).is_ok());
        TransitionMatrix { classes, entries }
    }

    pub fn identity(classes: usize) -> Self {
        Self::with_diagonal(classes, F::one())
    }

    /// `diag` on the diagonal, the remainder spread evenly over each row.
    pub fn with_diagonal(classes: usize, diag: F) -> Self {
        let off = (F::one() - diag) / F::of((classes - 1) as f64);
        let entries = (0..classes * classes)
            .map(|idx| if idx / classes == idx % classes { diag } else { off })
            .collect();
        TransitionMatrix::from_trusted(classes, entries)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        self.entries[i * self.classes + j]
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.entries[i * self.classes..(i + 1) * self.classes]
    }

    pub fn entries(&self) -> &[F] {
        &self.entries
    }

    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.entries.chunks(self.classes)
    }

    /// `q_j = sum_i p_i T_ij`: pushes a clean posterior through the channel.
    pub fn push_forward(&self, posterior: &[F]) -> Vec<F> {
        let c = self.classes;
        let mut q = vec![F::zero(); c];
        for (i, &p) in posterior.iter().enumerate() {
            for (qj, &t) in q.iter_mut().zip(self.row(i)) {
                *qj = *qj + p * t;
            }
        }
        q
    }

    /// Same matrix in another scalar type.
    pub fn cast<G: Scalar>(&self) -> TransitionMatrix<G> {
        TransitionMatrix {
            classes: self.classes,
            entries: self.entries.iter().map(|&v| G::of(v.as_f64())).collect(),
        }
    }
}

/// `K >= 1` transition matrices sharing one class count.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet<F> {
    bases: Vec<TransitionMatrix<F>>,
}

impl<F: Scalar> BasisSet<F> {
    pub fn new(bases: Vec<TransitionMatrix<F>>) -> Result<Self> {
        let Some(first) = bases.first() else {
            return Err(Error::DimensionMismatch("basis set needs K >= 1".into()));
        };
        let c = first.classes();
        if let Some(bad) = bases.iter().position(|b| b.classes() != c) {
            return Err(Error::DimensionMismatch(format!(
                "basis {bad} has {} classes, basis 0 has {c}",
                bases[bad].classes()
            )));
        }
        Ok(BasisSet { bases })
    }

    /// K copies of the same matrix.
    pub fn repeated(matrix: TransitionMatrix<F>, modes: usize) -> Result<Self> {
        Self::new(vec![matrix; modes])
    }

    pub fn num_modes(&self) -> usize {
        self.bases.len()
    }

    pub fn classes(&self) -> usize {
        self.bases[0].classes()
    }

    pub fn get(&self, k: usize) -> &TransitionMatrix<F> {
        &self.bases[k]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TransitionMatrix<F>> {
        self.bases.iter()
    }

    pub fn as_slice(&self) -> &[TransitionMatrix<F>] {
        &self.bases
    }

    /// Reorders so that entry `k` of the result is `self[perm[k]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        BasisSet {
            bases: perm.iter().map(|&p| self.bases[p].clone()).collect(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> BasisSet<G> {
        BasisSet {
            bases: self.bases.iter().map(|b| b.cast()).collect(),
        }
    }

    pub(crate) fn bases_mut(&mut self) -> &mut [TransitionMatrix<F>] {
        &mut self.bases
    }
}

impl<F> IntoIterator for BasisSet<F> {
    type Item = TransitionMatrix<F>;
    type IntoIter = std::vec::IntoIter<TransitionMatrix<F>>;
    fn into_iter(self) -> Self::IntoIter {
        self.bases.into_iter()
    }
}

/// Probability vector over the K error modes.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentWeights<F> {
    weights: Vec<F>,
}

impl<F: Scalar> AssignmentWeights<F> {
    pub fn new(weights: Vec<F>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        let mut sum = 0.0;
        for (k, &w) in weights.iter().enumerate() {
            let w = w.as_f64();
            if !(w >= 0.0) {
                return Err(Error::InvalidWeights(format!("weight {k} = {w} is negative")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(AssignmentWeights { weights })
    }

    pub(crate) fn from_trusted(weights: Vec<F>) -> Self {
        debug_assert!(Self::new(weights.clone()).is_ok());
        AssignmentWeights { weights }
    }

    pub fn one_hot(k: usize, modes: usize) -> Self {
        let mut w = vec![F::zero(); modes];
        w[k] = F::one();
        AssignmentWeights { weights: w }
    }

    pub fn uniform(modes: usize) -> Self {
        AssignmentWeights {
            weights: vec![F::one() / F::of(modes as f64); modes],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.weights
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.weights)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> F {
        self.weights
            .iter()
            .filter(|&&w| w > F::zero())
            .fold(F::zero(), |acc, &w| acc - w * w.ln())
    }

    pub fn is_one_hot(&self) -> bool {
        self.weights.iter().filter(|&&w| w == F::one()).count() == 1
            && self.weights.iter().filter(|&&w| w == F::zero()).count() == self.weights.len() - 1
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Convex combination `sum_k w_k T^(k)`.
pub fn mix_transition<F: Scalar>(
    bases: &BasisSet<F>,
    weights: &AssignmentWeights<F>,
) -> Result<TransitionMatrix<F>> {
    if weights.len() != bases.num_modes() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} bases",
            weights.len(),
            bases.num_modes()
        )));
    }
    let c = bases.classes();
    let mut entries = vec![F::zero(); c * c];
    mix_into(bases, weights.as_slice(), &mut entries);
    let m = TransitionMatrix { classes: c, entries };
    validate_transition(c, m.entries())?;
    Ok(m)
}

/// Unchecked mixing kernel used on hot paths.
pub(crate) fn mix_into<F: Scalar>(bases: &BasisSet<F>, weights: &[F], out: &mut [F]) {
    out.iter_mut().for_each(|v| *v = F::zero());
    for (b, &w) in bases.iter().zip(weights) {
        if w == F::zero() {
            continue;
        }
        for (o, &t) in out.iter_mut().zip(b.entries()) {
            *o = *o + w * t;
        }
    }
}

/// Draws an observed label from row `y` by inverse CDF on one uniform,
/// scanning classes in ascending order.
pub fn sample_noisy_label<F: Scalar>(
    t: &TransitionMatrix<F>,
    y: usize,
    rng: &mut Rng,
) -> Result<usize> {
    if y >= t.classes() {
        return Err(Error::InvalidLabel { label: y, classes: t.classes() });
    }
    Ok(sample_row(t.row(y), rng))
}

pub(crate) fn sample_row<F: Scalar>(row: &[F], rng: &mut Rng) -> usize {
    let u = rng.uniform();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (j, &p) in row.iter().enumerate() {
        let p = p.as_f64();
        if p > 0.0 {
            last_positive = j;
        }
        cum += p;
        if u < cum {
            return j;
        }
    }
    // Round-off left the cumulative sum just under 1.
    last_positive
}

fn check_same_shape<F: Scalar>(a: &TransitionMatrix<F>, b: &TransitionMatrix<F>) -> Result<()> {
    if a.classes() != b.classes() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} classes",
            a.classes(),
            b.classes()
        )));
    }
    Ok(())
}

/// Mean over rows of the row-wise l1 distance. Lies in [0, 2].
pub fn l1_error<F: Scalar>(estimated: &TransitionMatrix<F>, truth: &TransitionMatrix<F>) -> Result<F> {
    check_same_shape(estimated, truth)?;
    let total = estimated
        .entries()
        .iter()
        .zip(truth.entries())
        .fold(F::zero(), |acc, (&a, &b)| acc + (a - b).abs());
    Ok(total / F::of(estimated.classes() as f64))
}

pub fn frobenius_error<F: Scalar>(
    estimated: &TransitionMatrix<F>,
    truth: &TransitionMatrix<F>,
) -> Result<F> {
    check_same_shape(estimated, truth)?;
    let sq = estimated
        .entries()
        .iter()
        .zip(truth.entries())
        .fold(F::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    Ok(sq.sqrt())
}

/// Largest K accepted by [`align_bases`].
pub const MAX_ALIGN_MODES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment<F> {
    /// `permutation[k]` is the estimated basis matched to truth basis `k`.
    pub permutation: Vec<usize>,
    /// Mean l1 error under the permutation.
    pub error: F,
    /// Per-truth-basis l1 error under the permutation.
    pub per_basis: Vec<F>,
}

/// Exhaustive search over all K! matchings for the one minimizing the mean
/// l1 error. Permutations are visited in lexicographic order and only a
/// strict improvement replaces the incumbent.
pub fn align_bases<F: Scalar>(estimated: &BasisSet<F>, truth: &BasisSet<F>) -> Result<Alignment<F>> {
    let k = truth.num_modes();
    if estimated.num_modes() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated vs {k} true bases",
            estimated.num_modes()
        )));
    }
    if k > MAX_ALIGN_MODES {
        return Err(Error::TooManyModes(k));
    }
    if estimated.classes() != truth.classes() {
        return Err(Error::DimensionMismatch("class counts differ".into()));
    }
    // cost[t][e] = l1(estimated[e], truth[t])
    let mut cost = vec![vec![F::zero(); k]; k];
    for (t, row) in cost.iter_mut().enumerate() {
        for (e, c) in row.iter_mut().enumerate() {
            *c = l1_error(estimated.get(e), truth.get(t))?;
        }
    }
    let score = |p: &[usize]| -> F {
        p.iter()
            .enumerate()
            .fold(F::zero(), |acc, (t, &e)| acc + cost[t][e])
            / F::of(k as f64)
    };
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_score = score(&perm);
    while next_permutation(&mut perm) {
        let s = score(&perm);
        if s < best_score {
            best_score = s;
            best.clone_from(&perm);
        }
    }
    let per_basis = best.iter().enumerate().map(|(t, &e)| cost[t][e]).collect();
    Ok(Alignment { permutation: best, error: best_score, per_basis })
}

/// Advances to the next lexicographic permutation; false after the last one.
fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let Some(i) = (0..p.len() - 1).rev().find(|&i| p[i] < p[i + 1]) else {
        return false;
    };
    let j = (i + 1..p.len()).rev().find(|&j| p[j] > p[i]).unwrap();
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn m(rows: &[&[f64]]) -> TransitionMatrix<f64> {
        TransitionMatrix::from_f64_rows(rows).unwrap()
    }

    fn swap2() -> TransitionMatrix<f64> {
        m(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    #[test]
    fn validation_examples() {
        assert!(validate_transition(2, &[1.0, 0.0, 0.0, 1.0]).is_ok());
        match validate_transition(2, &[0.7, 0.3, 0.3, 0.8]) {
            Err(Error::NonStochasticRow { index, sum }) => {
                assert_eq!(index, 1);
                assert_abs_diff_eq!(sum, 1.1, epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            validate_transition(2, &[1.2, -0.2, 0.0, 1.0]),
            Err(Error::OutOfRangeEntry { row: 0, col: 0, value: 1.2 })
        );
        assert!(validate_transition::<f64>(1, &[1.0]).is_err());
        assert!(validate_transition(2, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn mixing_examples() {
        let bases = BasisSet::new(vec![TransitionMatrix::identity(2), swap2()]).unwrap();
        let w = AssignmentWeights::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(mix_transition(&bases, &w).unwrap(), TransitionMatrix::identity(2));
        let w = AssignmentWeights::new(vec![0.5, 0.5]).unwrap();
        let avg = mix_transition(&bases, &w).unwrap();
        assert_eq!(avg.entries(), &[0.5, 0.5, 0.5, 0.5]);
        let w3 = AssignmentWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(matches!(
            mix_transition(&bases, &w3),
            Err(Error::DimensionMismatch(_))
        ));
    }

    fn random_dominant(c: usize, rng: &mut Rng) -> TransitionMatrix<f64> {
        let mut rows = Vec::new();
        for i in 0..c {
            let diag = rng.uniform_range(0.6, 0.95);
            let rest = rng.simplex(c - 1);
            let mut row = Vec::with_capacity(c);
            let mut it = rest.into_iter();
            for j in 0..c {
                row.push(if i == j { diag } else { (1.0 - diag) * it.next().unwrap() });
            }
            rows.push(row);
        }
        TransitionMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn mixing_matches_scalar_loop_oracle() {
        let mut rng = Rng::seed_from_u64(99);
        for _ in 0..20 {
            let c = 4;
            let bases: Vec<_> = (0..3).map(|_| random_dominant(c, &mut rng)).collect();
            let w = rng.simplex(3);
            // oracle: independent entrywise summation
            let mut oracle = vec![vec![0.0; c]; c];
            for i in 0..c {
                for j in 0..c {
                    for k in 0..3 {
                        oracle[i][j] += w[k] * bases[k].row(i)[j];
                    }
                }
            }
            let set = BasisSet::new(bases).unwrap();
            let mixed = mix_transition(&set, &AssignmentWeights::new(w).unwrap()).unwrap();
            for i in 0..c {
                for j in 0..c {
                    assert_abs_diff_eq!(mixed.get(i, j), oracle[i][j], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn sampling_examples() {
        let mut rng = Rng::seed_from_u64(1);
        let id = TransitionMatrix::<f64>::identity(2);
        for _ in 0..100 {
            assert_eq!(sample_noisy_label(&id, 0, &mut rng).unwrap(), 0);
        }
        let n = 10_000;
        let half = m(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let ones = (0..n)
            .filter(|_| sample_noisy_label(&half, 0, &mut rng).unwrap() == 1)
            .count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.015);
        let t = m(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let zeros = (0..n)
            .filter(|_| sample_noisy_label(&t, 1, &mut rng).unwrap() == 0)
            .count();
        assert!((zeros as f64 / n as f64 - 0.2).abs() < 0.012);
        assert!(matches!(
            sample_noisy_label(&t, 2, &mut rng),
            Err(Error::InvalidLabel { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn error_metric_examples() {
        let id = TransitionMatrix::<f64>::identity(2);
        let soft = m(&[&[0.9, 0.1], &[0.1, 0.9]]);
        assert_eq!(l1_error(&id, &id).unwrap(), 0.0);
        assert_abs_diff_eq!(l1_error(&id, &swap2()).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l1_error(&id, &soft).unwrap(), 0.2, epsilon = 1e-12);
        assert_eq!(frobenius_error(&id, &id).unwrap(), 0.0);
        assert_abs_diff_eq!(frobenius_error(&id, &swap2()).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(frobenius_error(&id, &soft).unwrap(), 0.2, epsilon = 1e-12);
        let three = TransitionMatrix::<f64>::identity(3);
        assert!(l1_error(&id, &three).is_err());
        assert!(frobenius_error(&id, &three).is_err());
    }

    #[test]
    fn alignment_examples() {
        let truth = BasisSet::new(vec![
            TransitionMatrix::identity(2),
            swap2(),
            m(&[&[0.5, 0.5], &[0.5, 0.5]]),
        ])
        .unwrap();
        let a = align_bases(&truth, &truth).unwrap();
        assert_eq!(a.permutation, vec![0, 1, 2]);
        assert_eq!(a.error, 0.0);

        let swapped = truth.permuted(&[1, 0, 2]);
        let a = align_bases(&swapped, &truth).unwrap();
        assert_eq!(a.permutation, vec![1, 0, 2]);
        assert_eq!(a.error, 0.0);

        let four = BasisSet::repeated(TransitionMatrix::<f64>::identity(2), 9).unwrap();
        assert_eq!(align_bases(&four, &four), Err(Error::TooManyModes(9)));
        assert!(align_bases(&truth, &four).is_err());
    }

    #[test]
    fn alignment_recovers_known_permutation_with_known_perturbations() {
        // Truth bases on C = 3, each perturbed by moving mass `delta` from the
        // diagonal of row 0 to entry (0, 1): row-0 l1 change is 2*delta, so
        // the row-mean l1 error is 2*delta/3. Choose delta so the errors are
        // exactly 0.1, 0.2, 0.3.
        let base = |d: f64, off: usize| {
            let mut rows = vec![vec![0.0; 3]; 3];
            for (i, row) in rows.iter_mut().enumerate() {
                row[i] = d;
                row[(i + off) % 3] = 1.0 - d;
            }
            TransitionMatrix::<f64>::from_rows(&rows).unwrap()
        };
        let truth = BasisSet::new(vec![base(0.9, 1), base(0.7, 2), base(0.8, 1)]).unwrap();
        let targets = [0.1, 0.2, 0.3];
        let perturbed: Vec<_> = truth
            .iter()
            .zip(targets)
            .map(|(t, e)| {
                let delta = e * 3.0 / 2.0 / 2.0; // split between two rows
                let mut e2 = t.entries().to_vec();
                // rows 0 and 1 each move `delta` off the diagonal onto (i, i+2)
                for i in 0..2 {
                    e2[i * 3 + i] -= delta;
                    e2[i * 3 + (i + 2) % 3] += delta;
                }
                TransitionMatrix::new(3, e2).unwrap()
            })
            .collect();
        for (p, (t, e)) in perturbed.iter().zip(truth.iter().zip(targets)) {
            assert_abs_diff_eq!(l1_error(p, t).unwrap(), e, epsilon = 1e-12);
        }
        // estimated[j] = perturbed[sigma^-1 ...]: place truth k at slot perm[k]
        let perm = [2usize, 0, 1];
        let mut slots = vec![None; 3];
        for (k, &slot) in perm.iter().enumerate() {
            slots[slot] = Some(perturbed[k].clone());
        }
        let estimated = BasisSet::new(slots.into_iter().map(Option::unwrap).collect()).unwrap();
        let a = align_bases(&estimated, &truth).unwrap();
        assert_eq!(a.permutation, perm.to_vec());
        assert_abs_diff_eq!(a.error, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn generic_over_f32() {
        let a = TransitionMatrix::<f32>::with_diagonal(3, 0.8);
        let b = TransitionMatrix::<f32>::identity(3);
        let e = l1_error(&a, &b).unwrap();
        assert!((e - 0.4).abs() < 1e-6);
    }

    fn arb_matrix(c: usize) -> impl Strategy<Value = TransitionMatrix<f64>> {
        proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, c), c).prop_map(
            move |rows| {
                let rows: Vec<Vec<f64>> = rows
                    .into_iter()
                    .map(|r| {
                        let s: f64 = r.iter().sum();
                        r.into_iter().map(|v| v / s).collect()
                    })
                    .collect();
                TransitionMatrix::from_rows(&rows).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn mixing_preserves_stochasticity(
            bases in proptest::collection::vec(arb_matrix(4), 1..6),
            raw in proptest::collection::vec(0.0f64..1.0, 6),
        ) {
            let k = bases.len();
            let mut w: Vec<f64> = raw[..k].iter().map(|v| v + 1e-3).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            let set = BasisSet::new(bases).unwrap();
            let mixed = mix_transition(&set, &AssignmentWeights::new(w).unwrap()).unwrap();
            prop_assert!(validate_transition(4, mixed.entries()).is_ok());
        }

        #[test]
        fn metrics_symmetric_nonnegative(a in arb_matrix(3), b in arb_matrix(3)) {
            let ab = l1_error(&a, &b).unwrap();
            let ba = l1_error(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12 && ab >= 0.0);
            let fab = frobenius_error(&a, &b).unwrap();
            let fba = frobenius_error(&b, &a).unwrap();
            prop_assert!((fab - fba).abs() < 1e-12 && fab >= 0.0);
            prop_assert!(l1_error(&a, &a).unwrap() < 1e-12);
            prop_assert!(frobenius_error(&a, &a).unwrap() < 1e-12);
            if a != b {
                prop_assert!(ab > 0.0 && fab > 0.0);
            }
        }

        #[test]
        fn aligned_error_invariant_under_relabeling(
            est in proptest::collection::vec(arb_matrix(3), 4),
            truth in proptest::collection::vec(arb_matrix(3), 4),
            seed in any::<u64>(),
        ) {
            let est = BasisSet::new(est).unwrap();
            let truth = BasisSet::new(truth).unwrap();
            let mut perm: Vec<usize> = (0..4).collect();
            Rng::seed_from_u64(seed).shuffle(&mut perm);
            let a = align_bases(&est, &truth).unwrap();
            let b = align_bases(&est.permuted(&perm), &truth).unwrap();
            prop_assert!((a.error - b.error).abs() < 1e-12);
        }
    }
}
