use serde::{Deserialize, Serialize};

use super::model::{DropoutMask, ModelParams};
use super::{ModelError, PoolingKind, TumorFeatureBag};
use crate::survstats::SurvivalLabel;

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_scores(scores: &[f64]) -> Result<(), ModelError> {
    if scores.is_empty() {
        return Err(ModelError::Shape("pooling needs at least one score".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ModelError::NonFinite("tumor scores".into()));
    }
    Ok(())
}

fn size_argmax(scores: &[f64], kind: PoolingKind, sizes: Option<&[f64]>) -> Result<usize, ModelError> {
    match sizes {
        Some(s) if s.len() == scores.len() => Ok(first_argmax(s)),
        _ => Err(ModelError::MissingSizes(kind)),
    }
}

/// Patient score from tumor scores. `sizes` (volumes or diameters) is only
/// read by the size-based kinds.
pub fn pool(scores: &[f64], kind: PoolingKind, sizes: Option<&[f64]>) -> Result<f64, ModelError> {
    check_scores(scores)?;
    Ok(match kind {
        PoolingKind::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
        PoolingKind::Largest | PoolingKind::LargestDiameter => scores[size_argmax(scores, kind, sizes)?],
        PoolingKind::Max => scores[first_argmax(scores)],
        PoolingKind::Lse => {
            let m = scores[first_argmax(scores)];
            m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
        }
    })
}

/// d pool / d score_t. Max and largest route the whole gradient to the
/// first arg-max; lse gives the softmax.
pub fn pool_grad(scores: &[f64], kind: PoolingKind, sizes: Option<&[f64]>) -> Result<Vec<f64>, ModelError> {
    check_scores(scores)?;
    let n = scores.len();
    let one_hot = |i: usize| {
        let mut g = vec![0.0; n];
        g[i] = 1.0;
        g
    };
    Ok(match kind {
        PoolingKind::Mean => vec![1.0 / n as f64; n],
        PoolingKind::Largest | PoolingKind::LargestDiameter => one_hot(size_argmax(scores, kind, sizes)?),
        PoolingKind::Max => one_hot(first_argmax(scores)),
        PoolingKind::Lse => {
            let m = scores[first_argmax(scores)];
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        }
    })
}

/// Mean over tumors of the squared reconstruction error norm.
pub fn mse_loss(features: &[Vec<f64>], reconstructions: &[Vec<f64>]) -> Result<f64, ModelError> {
    if features.len() != reconstructions.len() || features.is_empty() {
        return Err(ModelError::Shape(format!(
            "{} tumors vs {} reconstructions",
            features.len(),
            reconstructions.len()
        )));
    }
    let mut total = 0.0;
    for (x, r) in features.iter().zip(reconstructions) {
        if x.len() != r.len() {
            return Err(ModelError::Shape(format!("feature width {} vs {}", x.len(), r.len())));
        }
        total += x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / features.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxLoss {
    pub value: f64,
    /// No patient had an event, so the value is 0 by convention.
    pub no_events: bool,
}

/// Indices sorted by time, and for each position the log of the risk-set
/// sum (everyone with time >= that time) relative to `m`.
fn risk_sets(hazards: &[f64], labels: &[SurvivalLabel]) -> (Vec<usize>, Vec<f64>, f64) {
    let n = hazards.len();
    let m = hazards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| labels[a].time.total_cmp(&labels[b].time));
    let mut log_s = vec![0.0; n];
    let mut acc = 0.0;
    let mut i = n;
    while i > 0 {
        let t = labels[order[i - 1]].time;
        let mut j = i;
        while j > 0 && labels[order[j - 1]].time == t {
            acc += (hazards[order[j - 1]] - m).exp();
            j -= 1;
        }
        for slot in &mut log_s[j..i] {
            *slot = acc.ln();
        }
        i = j;
    }
    (order, log_s, m)
}

fn check_cox(hazards: &[f64], labels: &[SurvivalLabel]) -> Result<(), ModelError> {
    if hazards.len() != labels.len() || hazards.is_empty() {
        return Err(ModelError::Shape(format!("{} hazards vs {} labels", hazards.len(), labels.len())));
    }
    if hazards.iter().any(|h| !h.is_finite()) {
        return Err(ModelError::NonFinite("hazards".into()));
    }
    Ok(())
}

/// Negative Cox partial log-likelihood (summed, Breslow ties).
pub fn coxph_loss(hazards: &[f64], labels: &[SurvivalLabel]) -> Result<CoxLoss, ModelError> {
    check_cox(hazards, labels)?;
    let (order, log_s, m) = risk_sets(hazards, labels);
    let mut value = 0.0;
    let mut events = 0;
    for (pos, &p) in order.iter().enumerate() {
        if labels[p].event {
            value -= hazards[p] - m - log_s[pos];
            events += 1;
        }
    }
    Ok(CoxLoss { value, no_events: events == 0 })
}

/// d coxph_loss / d hazard.
pub fn coxph_loss_grad(hazards: &[f64], labels: &[SurvivalLabel]) -> Result<Vec<f64>, ModelError> {
    check_cox(hazards, labels)?;
    let (order, log_s, m) = risk_sets(hazards, labels);
    let n = hazards.len();
    let mut grad = vec![0.0; n];
    // running sum over events p with T_p <= T_k of 1/S_p
    let mut inv_sum = 0.0;
    let mut i = 0;
    while i < n {
        let t = labels[order[i]].time;
        let mut j = i;
        while j < n && labels[order[j]].time == t {
            if labels[order[j]].event {
                inv_sum += (-log_s[j]).exp();
            }
            j += 1;
        }
        for &k in &order[i..j] {
            grad[k] = (hazards[k] - m).exp() * inv_sum - if labels[k].event { 1.0 } else { 0.0 };
        }
        i = j;
    }
    Ok(grad)
}

/// Weight of the survival term at epoch `e` of `total`: `e / (total - 1)`.
pub fn alpha_schedule(epoch: usize, total: usize) -> Result<f64, ModelError> {
    if total < 2 {
        return Err(ModelError::TooFewEpochs(2));
    }
    if epoch >= total {
        return Err(ModelError::InvalidConfig(format!("epoch {epoch} outside 0..{total}")));
    }
    Ok(epoch as f64 / (total - 1) as f64)
}

pub fn total_loss(mse: f64, cox: f64, epoch: usize, total: usize) -> Result<f64, ModelError> {
    let a = alpha_schedule(epoch, total)?;
    Ok((1.0 - a) * mse + a * cox)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    /// Mean over patients of the per-bag reconstruction loss.
    pub mse: f64,
    pub cox: f64,
    pub alpha: f64,
    pub total: f64,
    pub no_events: bool,
}

fn check_batch(
    bags: &[TumorFeatureBag],
    labels: &[SurvivalLabel],
    masks: Option<&[Vec<DropoutMask>]>,
) -> Result<(), ModelError> {
    if bags.len() != labels.len() || bags.is_empty() {
        return Err(ModelError::Shape(format!("{} bags vs {} labels", bags.len(), labels.len())));
    }
    if let Some(m) = masks {
        if m.len() != bags.len() {
            return Err(ModelError::Shape(format!("{} mask sets for {} bags", m.len(), bags.len())));
        }
    }
    Ok(())
}

/// Objective `(1 - alpha) * MSE + alpha * Cox` over a batch of patients.
pub fn batch_loss(
    params: &ModelParams,
    bags: &[TumorFeatureBag],
    labels: &[SurvivalLabel],
    pooling: PoolingKind,
    alpha: f64,
    masks: Option<&[Vec<DropoutMask>]>,
) -> Result<BatchLoss, ModelError> {
    batch_gradients_impl(params, bags, labels, pooling, alpha, masks, false).map(|(l, _)| l)
}

/// Loss and its gradient with respect to every parameter.
pub fn batch_gradients(
    params: &ModelParams,
    bags: &[TumorFeatureBag],
    labels: &[SurvivalLabel],
    pooling: PoolingKind,
    alpha: f64,
    masks: Option<&[Vec<DropoutMask>]>,
) -> Result<(BatchLoss, ModelParams), ModelError> {
    batch_gradients_impl(params, bags, labels, pooling, alpha, masks, true).map(|(l, g)| (l, g.unwrap()))
}

fn batch_gradients_impl(
    params: &ModelParams,
    bags: &[TumorFeatureBag],
    labels: &[SurvivalLabel],
    pooling: PoolingKind,
    alpha: f64,
    masks: Option<&[Vec<DropoutMask>]>,
    with_grad: bool,
) -> Result<(BatchLoss, Option<ModelParams>), ModelError> {
    check_batch(bags, labels, masks)?;
    let n = bags.len() as f64;
    let mut forwards = Vec::with_capacity(bags.len());
    let mut mse = 0.0;
    let mut hazards = Vec::with_capacity(bags.len());
    for (i, bag) in bags.iter().enumerate() {
        let f = params.forward(bag, masks.map(|m| m[i].as_slice()))?;
        mse += mse_loss(&bag.features, &f.reconstructions())?;
        hazards.push(pool(&f.scores(), pooling, bag.sizes(pooling))?);
        forwards.push(f);
    }
    mse /= n;
    let cox = coxph_loss(&hazards, labels)?;
    let total = (1.0 - alpha) * mse + alpha * cox.value;
    let loss = BatchLoss { mse, cox: cox.value, alpha, total, no_events: cox.no_events };
    if !with_grad {
        return Ok((loss, None));
    }

    let d_hazard = coxph_loss_grad(&hazards, labels)?;
    let identity = DropoutMask::identity(&params.arch);
    let mut grad = ModelParams::zeros(params.arch);
    for (i, (bag, f)) in bags.iter().zip(&forwards).enumerate() {
        let scores = f.scores();
        let d_pool = pool_grad(&scores, pooling, bag.sizes(pooling))?;
        let recon_scale = -2.0 * (1.0 - alpha) / (n * bag.len() as f64);
        for (t, tf) in f.tumors.iter().enumerate() {
            let d_recon: Vec<f64> =
                tf.input.iter().zip(&tf.reconstruction).map(|(x, r)| recon_scale * (x - r)).collect();
            let d_score = alpha * d_hazard[i] * d_pool[t];
            let mask = masks.map_or(&identity, |m| &m[i][t]);
            params.backward_tumor(tf, mask, &d_recon, d_score, &mut grad);
        }
    }
    Ok((loss, Some(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lab(t: f64, e: bool) -> SurvivalLabel {
        SurvivalLabel::new(t, e).unwrap()
    }

    #[test]
    fn pooling_examples() {
        for k in PoolingKind::ALL {
            assert_eq!(pool(&[0.7], k, Some(&[3.0])).unwrap(), 0.7);
        }
        assert_abs_diff_eq!(pool(&[1.3, 1.3], PoolingKind::Lse, None).unwrap(), 1.3 + 2f64.ln(), epsilon = 1e-15);
        // ln(e^0.5 + e^-1 + e^2) evaluated at 30 digits
        assert_abs_diff_eq!(pool(&[0.5, -1.0, 2.0], PoolingKind::Lse, None).unwrap(), 2.241311296657157, epsilon = 1e-12);
        let s = [0.1, 0.9, 0.4];
        assert_eq!(pool(&s, PoolingKind::Largest, Some(&[5.0, 2.0, 5.0])).unwrap(), 0.1);
        assert_eq!(pool(&s, PoolingKind::Max, None).unwrap(), 0.9);
        assert_abs_diff_eq!(pool(&s, PoolingKind::Mean, None).unwrap(), 1.4 / 3.0, epsilon = 1e-15);
        assert!(matches!(pool(&s, PoolingKind::Largest, None), Err(ModelError::MissingSizes(_))));
        assert!(matches!(pool(&s, PoolingKind::Largest, Some(&[1.0])), Err(ModelError::MissingSizes(_))));
        assert!(pool(&[], PoolingKind::Mean, None).is_err());
    }

    #[test]
    fn lse_gradient_is_softmax() {
        let g = pool_grad(&[0.5, -1.0, 2.0], PoolingKind::Lse, None).unwrap();
        assert_abs_diff_eq!(g.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(g[2] > g[0] && g[0] > g[1]);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[vec![1.0, 0.0]], &[vec![0.0, 0.0]]).unwrap(), 1.0);
        let x = vec![vec![0.3, -2.0], vec![1.0, 1.0]];
        assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
        assert!(mse_loss(&x, &x[..1]).is_err());
    }

    #[test]
    fn cox_examples() {
        assert_eq!(coxph_loss(&[0.4], &[lab(2.0, true)]).unwrap(), CoxLoss { value: 0.0, no_events: false });
        let c = coxph_loss(&[1.0, 2.0], &[lab(1.0, false), lab(2.0, false)]).unwrap();
        assert_eq!(c, CoxLoss { value: 0.0, no_events: true });
        let c = coxph_loss(&[1.0, 0.0], &[lab(1.0, true), lab(2.0, true)]).unwrap();
        assert_abs_diff_eq!(c.value, (1.0 + 1f64.exp()).ln() - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.value, 0.313262, epsilon = 1e-6);
    }

    #[test]
    fn cox_ties_share_risk_set() {
        // both tied patients sit in each other's risk set
        let l = [lab(1.0, true), lab(1.0, true), lab(3.0, false)];
        let h = [0.2, -0.1, 0.5];
        let s: f64 = h.iter().map(|v: &f64| v.exp()).sum();
        let expect = -(h[0] - s.ln()) - (h[1] - s.ln());
        assert_abs_diff_eq!(coxph_loss(&h, &l).unwrap().value, expect, epsilon = 1e-12);
    }

    #[test]
    fn alpha_endpoints() {
        assert_eq!(total_loss(3.0, 7.0, 0, 5).unwrap(), 3.0);
        assert_eq!(total_loss(3.0, 7.0, 4, 5).unwrap(), 7.0);
        assert_eq!(total_loss(3.0, 7.0, 2, 5).unwrap(), 5.0);
        assert!(matches!(total_loss(1.0, 1.0, 0, 1), Err(ModelError::TooFewEpochs(2))));
        assert!(total_loss(1.0, 1.0, 5, 5).is_err());
    }

    fn brute_cox(h: &[f64], l: &[SurvivalLabel]) -> f64 {
        let mut v = 0.0;
        for p in 0..h.len() {
            if l[p].event {
                let s: f64 = (0..h.len()).filter(|&q| l[q].time >= l[p].time).map(|q| h[q].exp()).sum();
                v -= h[p] - s.ln();
            }
        }
        v
    }

    fn cohort() -> impl Strategy<Value = (Vec<f64>, Vec<SurvivalLabel>)> {
        (2usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec((1u32..6, any::<bool>()), n)
                    .prop_map(|v| v.into_iter().map(|(t, e)| lab(t as f64, e)).collect()),
            )
        })
    }

    proptest! {
        #[test]
        fn lse_bounds(s in prop::collection::vec(-50.0f64..50.0, 1..20)) {
            let mx = pool(&s, PoolingKind::Max, None).unwrap();
            let l = pool(&s, PoolingKind::Lse, None).unwrap();
            prop_assert!(mx <= l && l <= mx + (s.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn pooling_is_permutation_invariant(s in prop::collection::vec(-5.0f64..5.0, 1..10), r in 0usize..10) {
            let mut p = s.clone();
            let len = p.len();
            p.rotate_left(r % len);
            for k in [PoolingKind::Mean, PoolingKind::Max, PoolingKind::Lse] {
                let a = pool(&s, k, None).unwrap();
                let b = pool(&p, k, None).unwrap();
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn pooling_is_monotone(s in prop::collection::vec(-5.0f64..5.0, 1..10), i in 0usize..10, d in 0.0f64..3.0) {
            let mut up = s.clone();
            let i = i % s.len();
            up[i] += d;
            for k in [PoolingKind::Mean, PoolingKind::Max, PoolingKind::Lse] {
                prop_assert!(pool(&up, k, None).unwrap() >= pool(&s, k, None).unwrap());
            }
            let vols: Vec<f64> = (0..s.len()).map(|j| if j == 0 { 10.0 } else { 1.0 }).collect();
            let base = pool(&s, PoolingKind::Largest, Some(&vols)).unwrap();
            let moved = pool(&up, PoolingKind::Largest, Some(&vols)).unwrap();
            if i == 0 { prop_assert_eq!(moved, base + d) } else { prop_assert_eq!(moved, base) }
        }

        #[test]
        fn cox_matches_brute_force_and_is_shift_invariant((h, l) in cohort(), c in -20.0f64..20.0) {
            let v = coxph_loss(&h, &l).unwrap().value;
            prop_assert!((v - brute_cox(&h, &l)).abs() <= 1e-9);
            let shifted: Vec<f64> = h.iter().map(|x| x + c).collect();
            prop_assert!((coxph_loss(&shifted, &l).unwrap().value - v).abs() <= 1e-9);
        }

        #[test]
        fn cox_gradient_matches_differences((h, l) in cohort()) {
            let g = coxph_loss_grad(&h, &l).unwrap();
            for k in 0..h.len() {
                let mut a = h.clone();
                let mut b = h.clone();
                a[k] += 1e-6;
                b[k] -= 1e-6;
                let fd = (brute_cox(&a, &l) - brute_cox(&b, &l)) / 2e-6;
                prop_assert!((fd - g[k]).abs() <= 1e-6, "k={} fd={} g={}", k, fd, g[k]);
            }
        }

        #[test]
        fn total_is_convex_combination(m in 0.0f64..10.0, c in 0.0f64..10.0, e in 0usize..50) {
            let t = total_loss(m, c, e, 50).unwrap();
            prop_assert!(m.min(c) - 1e-12 <= t && t <= m.max(c) + 1e-12);
        }
    }
}
