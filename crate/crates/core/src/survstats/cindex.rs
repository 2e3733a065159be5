use super::StatsError;

/// Pair tallies behind the concordance index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConcordanceCounts {
    pub concordant: u64,
    pub tied_risk: u64,
    pub permissible: u64,
}

impl ConcordanceCounts {
    pub fn index(&self) -> Option<f64> {
        (self.permissible > 0).then(|| (2 * self.concordant + self.tied_risk) as f64 / (2 * self.permissible) as f64)
    }
}

struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted positions `< i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's pair counts in O(n log n).
///
/// A pair is permissible when the earlier time is an event, or when the
/// times tie and exactly one of the two is an event (the event is taken as
/// earlier). Pairs of tied event times are not counted.
pub fn concordance_counts(times: &[f64], events: &[bool], risks: &[f64]) -> Result<ConcordanceCounts, StatsError> {
    let n = times.len();
    if events.len() != n || risks.len() != n {
        return Err(StatsError::LengthMismatch(format!("{n} times, {} events, {} risks", events.len(), risks.len())));
    }
    if risks.iter().chain(times).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("times/risks".into()));
    }
    let mut ranks: Vec<f64> = risks.to_vec();
    ranks.sort_by(|a, b| a.total_cmp(b));
    ranks.dedup();
    let rank_of = |r: f64| ranks.partition_point(|&x| x < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut tree = Fenwick(vec![0; ranks.len() + 1]);
    let mut inserted = 0u64;
    let mut c = ConcordanceCounts { concordant: 0, tied_risk: 0, permissible: 0 };
    let mut g = 0;
    while g < n {
        let mut end = g;
        while end < n && times[order[end]] == times[order[g]] {
            end += 1;
        }
        let group = &order[g..end];
        for &i in group.iter().filter(|&&i| !events[i]) {
            tree.add(rank_of(risks[i]));
            inserted += 1;
        }
        for &i in group.iter().filter(|&&i| events[i]) {
            let r = rank_of(risks[i]);
            let below = tree.prefix(r);
            let equal = tree.prefix(r + 1) - below;
            c.concordant += below;
            c.tied_risk += equal;
            c.permissible += inserted;
        }
        for &i in group.iter().filter(|&&i| events[i]) {
            tree.add(rank_of(risks[i]));
            inserted += 1;
        }
        g = end;
    }
    Ok(c)
}

/// Harrell's C-index; higher risk should mean earlier failure. Tied risks
/// count one half.
pub fn concordance_index(times: &[f64], events: &[bool], risks: &[f64]) -> Result<f64, StatsError> {
    concordance_counts(times, events, risks)?.index().ok_or(StatsError::NoPermissiblePairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn brute_force(times: &[f64], events: &[bool], risks: &[f64]) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..times.len() {
            for j in 0..times.len() {
                if i == j || !events[i] {
                    continue;
                }
                let permissible = times[i] < times[j] || (times[i] == times[j] && !events[j]);
                if !permissible {
                    continue;
                }
                den += 1.0;
                if risks[i] > risks[j] {
                    num += 1.0;
                } else if risks[i] == risks[j] {
                    num += 0.5;
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    #[test]
    fn ordered_and_reversed() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let e = [true; 4];
        assert_eq!(concordance_index(&t, &e, &[4.0, 3.0, 2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(concordance_index(&t, &e, &[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0);
    }

    #[test]
    fn six_patients_two_censored() {
        let t = [2.0, 3.0, 3.0, 5.0, 7.0, 8.0];
        let e = [true, false, true, true, false, true];
        let r = [0.9, 0.1, 0.5, 0.5, 0.2, 0.3];
        let got = concordance_index(&t, &e, &r).unwrap();
        assert_eq!(got, brute_force(&t, &e, &r).unwrap());
    }

    #[test]
    fn no_pairs() {
        assert_eq!(concordance_index(&[1.0, 2.0], &[false, false], &[0.0, 1.0]), Err(StatsError::NoPermissiblePairs));
    }

    proptest! {
        #[test]
        fn matches_pairwise_oracle(
            rows in prop::collection::vec((1u8..8, any::<bool>(), 0u8..5), 2..30)
        ) {
            let t: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
            let e: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let k: Vec<f64> = rows.iter().map(|r| r.2 as f64).collect();
            let fast = concordance_index(&t, &e, &k).ok();
            prop_assert_eq!(fast, brute_force(&t, &e, &k));
        }

        #[test]
        fn negation_complements(
            rows in prop::collection::vec((1u16..500, any::<bool>()), 3..30),
            mult in 1u64..10007
        ) {
            let t: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
            let e: Vec<bool> = rows.iter().map(|r| r.1).collect();
            // distinct risks
            let r: Vec<f64> = (0..t.len() as u64).map(|i| ((i * mult) % 10007) as f64).collect();
            let neg: Vec<f64> = r.iter().map(|x| -x).collect();
            if let (Ok(a), Ok(b)) = (concordance_index(&t, &e, &r), concordance_index(&t, &e, &neg)) {
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }
        }
    }
}
