//! Online estimation of the basis matrices: weighted confusion counts per
//! batch, smoothed by momentum, gated by a warm-up period.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transition::{AssignmentWeights, BasisSet, TransitionMatrix};

pub const EST_EPS: f64 = 1e-8;
pub const DEFAULT_INIT_DIAG: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState<F> {
    bases: BasisSet<F>,
    momentum: F,
    warm_up_epochs: usize,
    epochs_seen: usize,
    eps: F,
}

impl<F: Scalar> EstimatorState<F> {
    pub fn new(bases: BasisSet<F>, momentum: F, warm_up_epochs: usize) -> Result<Self> {
        if !(momentum >= F::zero() && momentum < F::one()) {
            return Err(Error::InvalidConfig(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(EstimatorState { bases, momentum, warm_up_epochs, epochs_seen: 0, eps: F::of(EST_EPS) })
    }

    /// State resumed from a snapshot after `epochs_seen` completed epochs.
    pub fn resume(bases: BasisSet<F>, momentum: F, warm_up_epochs: usize, epochs_seen: usize) -> Result<Self> {
        let mut s = Self::new(bases, momentum, warm_up_epochs)?;
        s.epochs_seen = epochs_seen;
        Ok(s)
    }

    pub fn bases(&self) -> &BasisSet<F> {
        &self.bases
    }

    pub fn momentum(&self) -> F {
        self.momentum
    }

    pub fn warm_up_epochs(&self) -> usize {
        self.warm_up_epochs
    }

    pub fn epochs_seen(&self) -> usize {
        self.epochs_seen
    }

    pub fn eps(&self) -> F {
        self.eps
    }

    /// Marks the end of one epoch.
    pub fn finish_epoch(&mut self) {
        self.epochs_seen += 1;
    }

    /// Whether estimation is active in `epoch` (0-based, inclusive start).
    pub fn warm_up_gate(&self, epoch: usize) -> bool {
        epoch >= self.warm_up_epochs
    }

    /// `T_t = a T_{t-1} + (1 - a) T_batch` for every basis.
    pub fn momentum_update(&mut self, batch: &BasisSet<F>) -> Result<()> {
        if !self.warm_up_gate(self.epochs_seen) {
            return Err(Error::WarmUpActive { epoch: self.epochs_seen, warm_up: self.warm_up_epochs });
        }
        if batch.num_modes() != self.bases.num_modes() || batch.classes() != self.bases.classes() {
            return Err(Error::DimensionMismatch(format!(
                "batch estimate is {} x {}x{}, state is {} x {}x{}",
                batch.num_modes(),
                batch.classes(),
                batch.classes(),
                self.bases.num_modes(),
                self.bases.classes(),
                self.bases.classes()
            )));
        }
        let a = self.momentum;
        let b = F::one() - a;
        for (cur, new) in self.bases.bases_mut().iter_mut().zip(batch.iter()) {
            let mixed: Vec<F> = cur
                .entries()
                .iter()
                .zip(new.entries())
                .map(|(&x, &y)| a * x + b * y)
                .collect();
            *cur = TransitionMatrix::from_trusted(cur.classes(), mixed);
        }
        Ok(())
    }

    /// Batch estimate with this state's bases as the fallback prior.
    pub fn batch_estimate(
        &self,
        omega: &[AssignmentWeights<F>],
        proxy: &[usize],
        noisy: &[usize],
    ) -> Result<BasisSet<F>> {
        batch_estimate(omega, proxy, noisy, &self.bases, self.eps)
    }
}

/// Diagonal `init_diag`, remaining mass spread evenly over the row.
pub fn init_bases<F: Scalar>(modes: usize, classes: usize, init_diag: F) -> Result<BasisSet<F>> {
    if classes < 2 || modes == 0 {
        return Err(Error::InvalidConfig(format!("need C >= 2 and K >= 1, got C={classes}, K={modes}")));
    }
    let lo = F::one() / F::of(classes as f64);
    if !(init_diag > lo && init_diag <= F::one()) {
        return Err(Error::InvalidConfig(format!(
            "init_diag must lie in (1/C, 1] = ({lo}, 1], got {init_diag}"
        )));
    }
    BasisSet::repeated(TransitionMatrix::with_diagonal(classes, init_diag), modes)
}

/// Weighted confusion counts `sum w_k 1[yhat=i, ytilde=j] / (sum w_k 1[yhat=i] + eps)`.
/// Rows without proxy mass keep the prior row; all rows are renormalized.
pub fn batch_estimate<F: Scalar>(
    omega: &[AssignmentWeights<F>],
    proxy: &[usize],
    noisy: &[usize],
    prior: &BasisSet<F>,
    eps: F,
) -> Result<BasisSet<F>> {
    let n = omega.len();
    if n == 0 || proxy.len() != n || noisy.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "batch sequences have lengths {n}, {}, {}",
            proxy.len(),
            noisy.len()
        )));
    }
    let k_modes = prior.num_modes();
    let c = prior.classes();
    let mut counts = vec![F::zero(); k_modes * c * c];
    let mut mass = vec![F::zero(); k_modes * c];
    for ((w, &yh), &yt) in omega.iter().zip(proxy).zip(noisy) {
        if w.len() != k_modes {
            return Err(Error::DimensionMismatch(format!("{} gate weights for {k_modes} bases", w.len())));
        }
        for label in [yh, yt] {
            if label >= c {
                return Err(Error::InvalidLabel { label, classes: c });
            }
        }
        for (k, &wk) in w.as_slice().iter().enumerate() {
            counts[(k * c + yh) * c + yt] = counts[(k * c + yh) * c + yt] + wk;
            mass[k * c + yh] = mass[k * c + yh] + wk;
        }
    }
    let mut out = Vec::with_capacity(k_modes);
    for k in 0..k_modes {
        let mut entries = Vec::with_capacity(c * c);
        for i in 0..c {
            let m = mass[k * c + i];
            if m <= F::zero() {
                entries.extend_from_slice(prior.get(k).row(i));
                continue;
            }
            let row: Vec<F> = (0..c).map(|j| counts[(k * c + i) * c + j] / (m + eps)).collect();
            let s = row.iter().fold(F::zero(), |a, &v| a + v);
            entries.extend(row.into_iter().map(|v| v / s));
        }
        out.push(TransitionMatrix::from_trusted(c, entries));
    }
    BasisSet::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::transition::{frobenius_error, validate_transition};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ones(n: usize) -> Vec<AssignmentWeights<f64>> {
        vec![AssignmentWeights::one_hot(0, 1); n]
    }

    #[test]
    fn init_examples() {
        let b = init_bases::<f64>(3, 4, 1.0).unwrap();
        for m in b.iter() {
            assert_eq!(m, &TransitionMatrix::identity(4));
        }
        let b = init_bases::<f64>(2, 2, 0.9).unwrap();
        for m in b.iter() {
            assert_abs_diff_eq!(m.get(0, 0), 0.9);
            assert_abs_diff_eq!(m.get(0, 1), 0.1, epsilon = 1e-15);
            assert_abs_diff_eq!(m.get(1, 0), 0.1, epsilon = 1e-15);
            validate_transition(2, m.entries()).unwrap();
        }
        assert!(init_bases::<f64>(2, 4, 0.25).is_err());
        assert!(init_bases::<f64>(2, 4, 1.1).is_err());
    }

    #[test]
    fn hand_counted_estimate() {
        let prior = init_bases::<f64>(1, 2, 0.9).unwrap();
        let est = batch_estimate(&ones(4), &[0, 0, 1, 1], &[0, 1, 1, 1], &prior, EST_EPS).unwrap();
        let m = est.get(0);
        assert_abs_diff_eq!(m.get(0, 0), 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(m.get(0, 1), 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(m.get(1, 0), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m.get(1, 1), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn missing_proxy_row_keeps_prior() {
        let prior = init_bases::<f64>(1, 3, 0.7).unwrap();
        let est = batch_estimate(&ones(3), &[0, 2, 2], &[1, 2, 0], &prior, EST_EPS).unwrap();
        assert_eq!(est.get(0).row(1), prior.get(0).row(1));
        validate_transition(3, est.get(0).entries()).unwrap();
    }

    #[test]
    fn estimate_errors() {
        let prior = init_bases::<f64>(1, 2, 0.9).unwrap();
        assert!(batch_estimate(&ones(2), &[0], &[0, 1], &prior, EST_EPS).is_err());
        assert!(batch_estimate(&[], &[], &[], &prior, EST_EPS).is_err());
        assert!(matches!(
            batch_estimate(&ones(1), &[2], &[0], &prior, EST_EPS),
            Err(Error::InvalidLabel { .. })
        ));
    }

    #[test]
    fn one_hot_weights_partition_the_counts() {
        let mut rng = Rng::seed_from_u64(21);
        let n = 60;
        let c = 3;
        let modes: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
        let yh: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let yt: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let w: Vec<_> = modes.iter().map(|&k| AssignmentWeights::one_hot(k, 2)).collect();
        let prior2 = init_bases::<f64>(2, c, 0.8).unwrap();
        let prior1 = init_bases::<f64>(1, c, 0.8).unwrap();
        let joint = batch_estimate(&w, &yh, &yt, &prior2, EST_EPS).unwrap();
        for k in 0..2 {
            let idx: Vec<usize> = (0..n).filter(|&i| modes[i] == k).collect();
            let sub = batch_estimate(
                &ones(idx.len()),
                &idx.iter().map(|&i| yh[i]).collect::<Vec<_>>(),
                &idx.iter().map(|&i| yt[i]).collect::<Vec<_>>(),
                &prior1,
                EST_EPS,
            )
            .unwrap();
            for (a, b) in joint.get(k).entries().iter().zip(sub.get(0).entries()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn momentum_examples() {
        let eye = BasisSet::repeated(TransitionMatrix::<f64>::identity(2), 1).unwrap();
        let half = BasisSet::repeated(TransitionMatrix::with_diagonal(2, 0.5), 1).unwrap();
        let mut s = EstimatorState::new(eye.clone(), 0.99, 0).unwrap();
        s.momentum_update(&half).unwrap();
        let m = s.bases().get(0);
        assert_abs_diff_eq!(m.get(0, 0), 0.995, epsilon = 1e-12);
        assert_abs_diff_eq!(m.get(0, 1), 0.005, epsilon = 1e-12);

        let mut s = EstimatorState::new(eye.clone(), 0.0, 0).unwrap();
        s.momentum_update(&half).unwrap();
        assert_eq!(s.bases(), &half);

        assert!(EstimatorState::new(eye.clone(), 1.0, 0).is_err());
        assert!(EstimatorState::new(eye, -0.1, 0).is_err());
    }

    #[test]
    fn warm_up_gate_and_guard() {
        let b = init_bases::<f64>(1, 2, 0.9).unwrap();
        let mut s = EstimatorState::new(b.clone(), 0.9, 5).unwrap();
        assert!(!s.warm_up_gate(4));
        assert!(s.warm_up_gate(5));
        assert!(matches!(s.momentum_update(&b), Err(Error::WarmUpActive { .. })));
        for _ in 0..5 {
            s.finish_epoch();
        }
        s.momentum_update(&b).unwrap();
        let z = EstimatorState::new(b, 0.9, 0).unwrap();
        assert!(z.warm_up_gate(0));
    }

    proptest! {
        #[test]
        fn momentum_contracts_exactly(seed in any::<u64>(), alpha in 0.0f64..0.999) {
            let mut rng = Rng::seed_from_u64(seed);
            let rand_set = |rng: &mut Rng| {
                let rows: Vec<Vec<f64>> = (0..3).map(|_| rng.simplex(3)).collect();
                BasisSet::new(vec![TransitionMatrix::from_rows(&rows).unwrap()]).unwrap()
            };
            let prev = rand_set(&mut rng);
            let batch = rand_set(&mut rng);
            let mut s = EstimatorState::new(prev.clone(), alpha, 0).unwrap();
            s.momentum_update(&batch).unwrap();
            let before = frobenius_error(prev.get(0), batch.get(0)).unwrap();
            let after = frobenius_error(s.bases().get(0), batch.get(0)).unwrap();
            prop_assert!((after - alpha * before).abs() < 1e-12);
            validate_transition(3, s.bases().get(0).entries()).unwrap();
        }

        #[test]
        fn state_stays_stochastic(seed in any::<u64>(), alpha in 0.0f64..0.999, steps in 1usize..20) {
            let mut rng = Rng::seed_from_u64(seed);
            let c = 4;
            let mut s = EstimatorState::new(init_bases(2, c, 0.9).unwrap(), alpha, 0).unwrap();
            for _ in 0..steps {
                let n = 1 + rng.below(16);
                let w: Vec<_> = (0..n).map(|_| AssignmentWeights::new(rng.simplex(2)).unwrap()).collect();
                let yh: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
                let yt: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
                let est = s.batch_estimate(&w, &yh, &yt).unwrap();
                for m in est.iter() {
                    prop_assert!(validate_transition(c, m.entries()).is_ok());
                }
                s.momentum_update(&est).unwrap();
                for m in s.bases().iter() {
                    prop_assert!(validate_transition(c, m.entries()).is_ok());
                }
            }
        }
    }
}
