use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{StatsError, SurvivalLabel};
use crate::volgrid::percentile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationResult {
    pub observed: f64,
    pub null: Vec<f64>,
    /// `(1 + #{null >= observed}) / (1 + shuffles)`.
    pub p_value: f64,
}

impl RandomizationResult {
    pub fn null_mean(&self) -> f64 {
        self.null.iter().sum::<f64>() / self.null.len() as f64
    }

    pub fn null_percentile(&self, p: f64) -> f64 {
        let mut s = self.null.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        percentile(&s, p)
    }
}

/// Permutation test of a train/evaluate procedure. `evaluate(labels, k)`
/// runs the full procedure on the given label assignment and returns its
/// score; `k` is `None` for the observed labels and `Some(i)` for shuffle
/// `i`. Shuffles permute whole `(time, event)` pairs across patients, each
/// from its own stream of the seeded generator.
pub fn randomization_test<F>(
    labels: &[SurvivalLabel],
    n_shuffles: usize,
    seed: u64,
    evaluate: F,
) -> Result<RandomizationResult, StatsError>
where
    F: Fn(&[SurvivalLabel], Option<usize>) -> Result<f64, StatsError> + Sync,
{
    if n_shuffles == 0 {
        return Err(StatsError::InvalidArgument("at least one shuffle is required".into()));
    }
    let observed = evaluate(labels, None)?;
    let null = (0..n_shuffles)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut shuffled = labels.to_vec();
            shuffled.shuffle(&mut rng);
            evaluate(&shuffled, Some(k))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let exceed = null.iter().filter(|&&v| v >= observed).count();
    let p_value = (1 + exceed) as f64 / (1 + n_shuffles) as f64;
    Ok(RandomizationResult { observed, null, p_value })
}

/// Patient-level k-fold partitions, one fresh shuffle per repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n: usize,
    pub k: usize,
    /// `folds[r][f]` holds the test indices of fold `f` in repeat `r`.
    pub folds: Vec<Vec<Vec<usize>>>,
}

impl SplitPlan {
    pub fn repeats(&self) -> usize {
        self.folds.len()
    }

    /// `(train, test)` indices of one fold.
    pub fn split(&self, repeat: usize, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let test = self.folds[repeat][fold].clone();
        let mut is_test = vec![false; self.n];
        for &i in &test {
            is_test[i] = true;
        }
        ((0..self.n).filter(|&i| !is_test[i]).collect(), test)
    }
}

pub fn repeated_kfold(n: usize, k: usize, repeats: usize, seed: u64) -> Result<SplitPlan, StatsError> {
    if k < 2 {
        return Err(StatsError::InvalidArgument(format!("k = {k} folds")));
    }
    if n < k {
        return Err(StatsError::TooFewSubjects { n, k });
    }
    let folds = (0..repeats)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut out = Vec::with_capacity(k);
            let mut start = 0;
            for f in 0..k {
                let size = n / k + usize::from(f < n % k);
                let mut fold = idx[start..start + size].to_vec();
                fold.sort_unstable();
                out.push(fold);
                start += size;
            }
            out
        })
        .collect();
    Ok(SplitPlan { n, k, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survstats::concordance_index;

    #[test]
    fn kfold_partitions() {
        let plan = repeated_kfold(9, 3, 15, 1).unwrap();
        assert_eq!(plan.repeats(), 15);
        for r in 0..15 {
            assert!(plan.folds[r].iter().all(|f| f.len() == 3));
            let mut all: Vec<usize> = plan.folds[r].iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..9).collect::<Vec<_>>());
            let (train, test) = plan.split(r, 1);
            assert_eq!(train.len() + test.len(), 9);
        }
        assert_ne!(plan.folds[0], plan.folds[1]);
        assert_eq!(repeated_kfold(2, 3, 1, 0).unwrap_err(), StatsError::TooFewSubjects { n: 2, k: 3 });
        assert_eq!(repeated_kfold(10, 3, 1, 0).unwrap().folds[0].iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 3, 3]);
    }

    #[test]
    fn constant_predictor_is_uninformative() {
        let labels: Vec<SurvivalLabel> =
            (1..=40).map(|i| SurvivalLabel::new(i as f64, i % 3 != 0).unwrap()).collect();
        let eval = |l: &[SurvivalLabel], _: Option<usize>| {
            let t: Vec<f64> = l.iter().map(|x| x.time).collect();
            let e: Vec<bool> = l.iter().map(|x| x.event).collect();
            concordance_index(&t, &e, &vec![0.0; l.len()])
        };
        let r = randomization_test(&labels, 20, 3, eval).unwrap();
        assert_eq!(r.observed, 0.5);
        assert_eq!(r.p_value, 1.0);
        let again = randomization_test(&labels, 20, 3, eval).unwrap();
        assert_eq!(r, again);
    }
}
