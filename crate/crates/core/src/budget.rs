//! Training length and learning-rate decay policy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// `(log₂(batch / ref_batch) + 1) · base_epochs`.
    Adjusted,
    FixedEpochs,
    /// A fixed number of iterations, converted to whole epochs.
    FixedIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub base_epochs: usize,
    pub ref_batch: usize,
    pub mode: BudgetMode,
    /// Epochs (`fixed_epochs`) or iterations (`fixed_iterations`); unused otherwise.
    #[serde(default)]
    pub fixed_value: usize,
}

impl Budget {
    pub fn adjusted(base_epochs: usize, ref_batch: usize) -> Self {
        Self {
            base_epochs,
            ref_batch,
            mode: BudgetMode::Adjusted,
            fixed_value: 0,
        }
    }

    pub fn fixed_epochs(epochs: usize) -> Self {
        Self {
            base_epochs: epochs,
            ref_batch: 1,
            mode: BudgetMode::FixedEpochs,
            fixed_value: epochs,
        }
    }

    pub fn fixed_iterations(iterations: usize) -> Self {
        Self {
            base_epochs: 1,
            ref_batch: 1,
            mode: BudgetMode::FixedIterations,
            fixed_value: iterations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_epochs < 1 {
            return Err(Error::param("base_epochs", "must be at least 1"));
        }
        match self.mode {
            BudgetMode::Adjusted if !self.ref_batch.is_power_of_two() => Err(Error::param(
                "ref_batch",
                format!("{} is not a positive power of 2", self.ref_batch),
            )),
            BudgetMode::FixedEpochs | BudgetMode::FixedIterations if self.fixed_value == 0 => {
                Err(Error::param("fixed_value", "must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    /// Number of epochs to train at `batch_size` on `n_train` samples.
    /// `n_train` only matters in `fixed_iterations` mode.
    pub fn total_epochs(&self, batch_size: usize, n_train: usize) -> Result<usize> {
        self.validate()?;
        match self.mode {
            BudgetMode::Adjusted => {
                let ratio = batch_size / self.ref_batch.max(1);
                if batch_size < self.ref_batch
                    || !batch_size.is_multiple_of(self.ref_batch)
                    || !ratio.is_power_of_two()
                {
                    return Err(Error::param(
                        "batch_size",
                        format!(
                            "{batch_size} / {} is not a power of 2 at least 1",
                            self.ref_batch
                        ),
                    ));
                }
                Ok((ratio.trailing_zeros() as usize + 1) * self.base_epochs)
            }
            BudgetMode::FixedEpochs => Ok(self.fixed_value),
            BudgetMode::FixedIterations => {
                if n_train == 0 {
                    return Err(Error::param("n_train", "empty training set"));
                }
                Ok((self.fixed_value * batch_size).div_ceil(n_train))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Decay points are fractions of the total epoch budget.
    Scaled,
    /// Decay points are absolute epochs.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub decay_points: Vec<f64>,
    pub decay_factor: f64,
}

impl LrSchedule {
    pub fn scaled(points: &[f64], factor: f64) -> Self {
        Self {
            kind: ScheduleKind::Scaled,
            decay_points: points.to_vec(),
            decay_factor: factor,
        }
    }

    pub fn fixed(epochs: &[usize], factor: f64) -> Self {
        Self {
            kind: ScheduleKind::Fixed,
            decay_points: epochs.iter().map(|&e| e as f64).collect(),
            decay_factor: factor,
        }
    }

    /// No decay at all.
    pub fn constant() -> Self {
        Self::scaled(&[], 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_factor >= 1.0 && self.decay_factor.is_finite()) {
            return Err(Error::param("decay_factor", "must be a finite value ≥ 1"));
        }
        if self.decay_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("decay_points", "must be strictly increasing"));
        }
        for &p in &self.decay_points {
            let ok = match self.kind {
                ScheduleKind::Scaled => p > 0.0 && p < 1.0,
                ScheduleKind::Fixed => p >= 0.0 && p.fract() == 0.0,
            };
            if !ok {
                return Err(Error::param("decay_points", format!("{p} invalid for {:?}", self.kind)));
            }
        }
        Ok(())
    }

    /// Epochs at which a decay takes effect, for a run of `total` epochs.
    pub fn decay_epochs(&self, total: usize) -> Vec<usize> {
        self.decay_points
            .iter()
            .map(|&p| match self.kind {
                ScheduleKind::Scaled => (p * total as f64).floor() as usize,
                ScheduleKind::Fixed => p as usize,
            })
            .collect()
    }

    /// Learning-rate multiplier in effect during `epoch`.
    pub fn lr_multiplier(&self, epoch: usize, total: usize) -> f64 {
        let passed = self.decay_epochs(total).iter().filter(|&&e| e <= epoch).count();
        let mut m = 1.0;
        for _ in 0..passed {
            m /= self.decay_factor;
        }
        m
    }

    /// Training stages as half-open epoch ranges separated by the decays.
    pub fn stages(&self, total: usize) -> Vec<std::ops::Range<usize>> {
        let mut cuts: Vec<usize> = self
            .decay_epochs(total)
            .into_iter()
            .filter(|&e| e > 0 && e < total)
            .collect();
        cuts.dedup();
        let mut out = Vec::with_capacity(cuts.len() + 1);
        let mut start = 0;
        for c in cuts {
            out.push(start..c);
            start = c;
        }
        out.push(start..total);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn adjusted_budget_cifar_and_svhn_rules() {
        let cifar = Budget::adjusted(100, 128);
        assert_eq!(cifar.total_epochs(128, 0).unwrap(), 100);
        assert_eq!(cifar.total_epochs(16384, 0).unwrap(), 800);
        let svhn = Budget::adjusted(20, 128);
        assert_eq!(svhn.total_epochs(256, 0).unwrap(), 40);
    }

    #[test]
    fn adjusted_budget_rejects_non_power_ratio() {
        let b = Budget::adjusted(100, 128);
        assert!(b.total_epochs(384, 0).is_err());
        assert!(b.total_epochs(64, 0).is_err());
        assert!(Budget::adjusted(10, 96).total_epochs(96, 0).is_err());
    }

    #[test]
    fn fixed_modes() {
        assert_eq!(Budget::fixed_epochs(7).total_epochs(1000, 10).unwrap(), 7);
        // 100 iterations of 32 over 1000 samples is 3.2 epochs, rounded up
        assert_eq!(Budget::fixed_iterations(100).total_epochs(32, 1000).unwrap(), 4);
        assert_eq!(Budget::fixed_iterations(100).total_epochs(10, 1000).unwrap(), 1);
    }

    #[test]
    fn scaled_schedule_cifar() {
        let s = LrSchedule::scaled(&[0.4, 0.8], 10.0);
        assert_eq!(s.lr_multiplier(39, 100), 1.0);
        assert_eq!(s.lr_multiplier(40, 100), 0.1);
        assert_eq!(s.lr_multiplier(79, 100), 0.1);
        assert_eq!(s.lr_multiplier(80, 100), 0.01);
        assert_eq!(s.lr_multiplier(99, 100), 0.01);
    }

    #[test]
    fn scaled_schedule_svhn() {
        let s = LrSchedule::scaled(&[0.5], 5.0);
        assert_eq!(s.lr_multiplier(19, 40), 1.0);
        assert_eq!(s.lr_multiplier(20, 40), 0.2);
    }

    #[test]
    fn fixed_schedule_decays_early() {
        let s = LrSchedule::fixed(&[40, 80], 10.0);
        assert_eq!(s.lr_multiplier(100, 800), 0.01);
        assert_eq!(s.lr_multiplier(39, 800), 1.0);
    }

    #[test]
    fn stages_split_at_decays() {
        let s = LrSchedule::scaled(&[0.4, 0.8], 10.0);
        assert_eq!(s.stages(100), vec![0..40, 40..80, 80..100]);
        assert_eq!(s.stages(1), vec![0..1]);
        assert_eq!(LrSchedule::constant().stages(5), vec![0..5]);
    }

    #[test]
    fn schedule_validation() {
        assert!(LrSchedule::scaled(&[0.8, 0.4], 10.0).validate().is_err());
        assert!(LrSchedule::scaled(&[1.2], 10.0).validate().is_err());
        assert!(LrSchedule::scaled(&[0.5], 0.5).validate().is_err());
        assert!(LrSchedule::fixed(&[40, 80], 10.0).validate().is_ok());
    }

    proptest! {
        #[test]
        fn multiplier_is_monotone_step_function(
            total in 2usize..500,
            a in 0.01f64..0.49,
            b in 0.5f64..0.99,
            factor in 1.5f64..20.0,
        ) {
            let s = LrSchedule::scaled(&[a, b], factor);
            let mut drops = 0;
            for e in 1..total {
                let prev = s.lr_multiplier(e - 1, total);
                let cur = s.lr_multiplier(e, total);
                prop_assert!(cur <= prev);
                if cur < prev { drops += 1; }
            }
            let mut distinct: Vec<usize> = s
                .decay_epochs(total)
                .into_iter()
                .filter(|&e| e > 0 && e < total)
                .collect();
            distinct.dedup();
            prop_assert_eq!(drops, distinct.len());
        }

        #[test]
        fn adjusted_budget_doubling_adds_base(base in 1usize..200, ref_pow in 0u32..8, k in 0u32..10) {
            let b = Budget::adjusted(base, 1 << ref_pow);
            let m = (1usize << ref_pow) << k;
            prop_assert_eq!(b.total_epochs(2 * m, 0).unwrap() - b.total_epochs(m, 0).unwrap(), base);
        }

        #[test]
        fn scaled_decay_epochs_track_total(base in 1usize..100, k in 0u32..6, p in 0.05f64..0.95) {
            let b = Budget::adjusted(base, 16);
            let m = 16usize << k;
            let (t1, t2) = (b.total_epochs(m, 0).unwrap(), b.total_epochs(2 * m, 0).unwrap());
            let s = LrSchedule::scaled(&[p], 10.0);
            let (e1, e2) = (s.decay_epochs(t1)[0] as f64, s.decay_epochs(t2)[0] as f64);
            let predicted = e1 * t2 as f64 / t1 as f64;
            // flooring loses less than one epoch at each budget
            prop_assert!((e2 - predicted).abs() < 1.0 + t2 as f64 / t1 as f64);
        }
    }
}
