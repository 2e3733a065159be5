//! Segmentation overlap, one-to-one tumor detection matching and the
//! post-processing applied to predicted tumor masks.

use std::collections::HashMap;
use std::io::Write;

use pathfinding::matrix::Matrix;
use pathfinding::prelude::kuhn_munkres;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volgrid::{connected_components, BinaryMask, InstanceLabeling, Label, Mask3D};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("masks live on different lattices")]
    GeometryMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// `2|a ∩ b| / (|a| + |b|)`, and 1 when both are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64, EvalError> {
    if !a.geometry().same_lattice(b.geometry()) {
        return Err(EvalError::GeometryMismatch);
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    Ok(if na + nb == 0 { 1.0 } else { 2.0 * inter as f64 / (na + nb) as f64 })
}

/// Detection counts and the derived rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl DetectionCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, fp, fn_ }
    }

    /// `tp / (tp + fp)`, 0 with no predictions.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`, 0 with no ground truth.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

impl std::ops::Add for DetectionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: u32,
    pub gt: u32,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub false_positives: Vec<u32>,
    pub false_negatives: Vec<u32>,
    pub counts: DetectionCounts,
}

impl MatchResult {
    pub fn precision(&self) -> f64 {
        self.counts.precision()
    }

    pub fn recall(&self) -> f64 {
        self.counts.recall()
    }

    pub fn f1(&self) -> f64 {
        self.counts.f1()
    }
}

pub const MATCH_THRESHOLD: f64 = 0.1;

/// Dice of every overlapping (pred id, gt id) pair.
pub fn pairwise_dice(pred: &InstanceLabeling, gt: &InstanceLabeling) -> Result<Vec<MatchedPair>, EvalError> {
    if !pred.geometry().same_lattice(gt.geometry()) {
        return Err(EvalError::GeometryMismatch);
    }
    let mut inter: HashMap<(u32, u32), usize> = HashMap::new();
    for (&p, &g) in pred.ids().iter().zip(gt.ids()) {
        if p != 0 && g != 0 {
            *inter.entry((p, g)).or_default() += 1;
        }
    }
    let size = |l: &InstanceLabeling, id: u32| l.instance(id).map_or(0, |i| i.voxel_count);
    let mut pairs: Vec<MatchedPair> = inter
        .into_iter()
        .map(|((p, g), n)| MatchedPair { pred: p, gt: g, dice: 2.0 * n as f64 / (size(pred, p) + size(gt, g)) as f64 })
        .collect();
    pairs.sort_by(|a, b| (a.pred, a.gt).cmp(&(b.pred, b.gt)));
    Ok(pairs)
}

fn finish(pairs: Vec<MatchedPair>, n_pred: usize, n_gt: usize) -> MatchResult {
    let mut pm = vec![false; n_pred + 1];
    let mut gm = vec![false; n_gt + 1];
    for p in &pairs {
        pm[p.pred as usize] = true;
        gm[p.gt as usize] = true;
    }
    let false_positives: Vec<u32> = (1..=n_pred as u32).filter(|&i| !pm[i as usize]).collect();
    let false_negatives: Vec<u32> = (1..=n_gt as u32).filter(|&i| !gm[i as usize]).collect();
    let counts = DetectionCounts::new(pairs.len(), false_positives.len(), false_negatives.len());
    MatchResult { pairs, false_positives, false_negatives, counts }
}

/// Greedy one-to-one matching from a list of candidate pairs: pairs with
/// dice >= 0.1 are accepted in descending dice order (ties by lower pred
/// id, then lower gt id) unless either side is already taken.
pub fn greedy_match(candidates: &[MatchedPair], n_pred: usize, n_gt: usize) -> MatchResult {
    let mut c: Vec<MatchedPair> = candidates.iter().copied().filter(|p| p.dice >= MATCH_THRESHOLD).collect();
    c.sort_by(|a, b| b.dice.total_cmp(&a.dice).then(a.pred.cmp(&b.pred)).then(a.gt.cmp(&b.gt)));
    let mut pm = vec![false; n_pred + 1];
    let mut gm = vec![false; n_gt + 1];
    let mut pairs = Vec::new();
    for p in c {
        if !pm[p.pred as usize] && !gm[p.gt as usize] {
            pm[p.pred as usize] = true;
            gm[p.gt as usize] = true;
            pairs.push(p);
        }
    }
    finish(pairs, n_pred, n_gt)
}

/// Matching with the most pairs above threshold, and among those the
/// largest total dice.
pub fn optimal_match(candidates: &[MatchedPair], n_pred: usize, n_gt: usize) -> MatchResult {
    if n_pred == 0 || n_gt == 0 {
        return finish(Vec::new(), n_pred, n_gt);
    }
    const PAIR: i64 = 1 << 40;
    const SCALE: f64 = 1e9;
    let (rows, cols, transpose) = if n_pred <= n_gt { (n_pred, n_gt, false) } else { (n_gt, n_pred, true) };
    let mut w = Matrix::new(rows, cols, 0i64);
    let mut dice_of = HashMap::new();
    for p in candidates.iter().filter(|p| p.dice >= MATCH_THRESHOLD) {
        let (r, c) = if transpose { (p.gt, p.pred) } else { (p.pred, p.gt) };
        w[(r as usize - 1, c as usize - 1)] = PAIR + (p.dice * SCALE).round() as i64;
        dice_of.insert((p.pred, p.gt), p.dice);
    }
    let (_, assignment) = kuhn_munkres(&w);
    let mut pairs: Vec<MatchedPair> = assignment
        .iter()
        .enumerate()
        .filter_map(|(r, &c)| {
            let (pred, gt) = if transpose { (c as u32 + 1, r as u32 + 1) } else { (r as u32 + 1, c as u32 + 1) };
            dice_of.get(&(pred, gt)).map(|&dice| MatchedPair { pred, gt, dice })
        })
        .collect();
    pairs.sort_by(|a, b| (a.pred, a.gt).cmp(&(b.pred, b.gt)));
    finish(pairs, n_pred, n_gt)
}

/// Greedy instance matching of two labelings on the same lattice.
pub fn match_instances(pred: &InstanceLabeling, gt: &InstanceLabeling) -> Result<MatchResult, EvalError> {
    Ok(greedy_match(&pairwise_dice(pred, gt)?, pred.len(), gt.len()))
}

pub fn match_instances_optimal(pred: &InstanceLabeling, gt: &InstanceLabeling) -> Result<MatchResult, EvalError> {
    Ok(optimal_match(&pairwise_dice(pred, gt)?, pred.len(), gt.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    pub min_volume_mm3: f64,
    /// Components with a smaller fraction of voxels inside the liver are
    /// treated as extra-hepatic.
    pub min_liver_fraction: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { min_volume_mm3: 100.0, min_liver_fraction: 0.5 }
    }
}

/// Removes tumor components that are extra-hepatic or smaller than the
/// volume threshold. `liver` is the liver region including its tumors.
pub fn postprocess(tumors: &BinaryMask, liver: &BinaryMask, cfg: &PostprocessConfig) -> Result<BinaryMask, EvalError> {
    if !tumors.geometry().same_lattice(liver.geometry()) {
        return Err(EvalError::GeometryMismatch);
    }
    if !(0.0..=1.0).contains(&cfg.min_liver_fraction) || !(cfg.min_volume_mm3 >= 0.0) {
        return Err(EvalError::InvalidParameter(format!("{cfg:?}")));
    }
    let lab = connected_components(tumors);
    let n = lab.len();
    let mut inside = vec![0usize; n + 1];
    for (&id, &l) in lab.ids().iter().zip(liver.data()) {
        if id != 0 && l {
            inside[id as usize] += 1;
        }
    }
    let keep: Vec<bool> = std::iter::once(false)
        .chain(lab.instances().iter().map(|info| {
            let frac = inside[info.id as usize] as f64 / info.voxel_count as f64;
            info.volume_mm3 >= cfg.min_volume_mm3 && frac >= cfg.min_liver_fraction
        }))
        .collect();
    Ok(BinaryMask::new(*tumors.geometry(), lab.ids().iter().map(|&id| keep[id as usize]).collect())
        .expect("same lattice"))
}

/// Per-case evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEvaluation {
    pub case_id: String,
    pub dice_liver: Option<f64>,
    pub dice_tumor: Option<f64>,
    pub dice_spleen: Option<f64>,
    pub detection: DetectionCounts,
}

/// Structure-wise dice and tumor detection of a predicted label map.
pub fn evaluate_case(case_id: &str, pred: &Mask3D, gt: &Mask3D) -> Result<CaseEvaluation, EvalError> {
    let d = |l: Label| dice(&pred.binary(l), &gt.binary(l)).map(Some);
    let m = match_instances(&connected_components(&pred.binary(Label::Tumor)), &connected_components(&gt.binary(Label::Tumor)))?;
    Ok(CaseEvaluation {
        case_id: case_id.to_string(),
        dice_liver: d(Label::Liver)?,
        dice_tumor: d(Label::Tumor)?,
        dice_spleen: d(Label::Spleen)?,
        detection: m.counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub cases: usize,
    pub mean_dice_liver: Option<f64>,
    pub mean_dice_tumor: Option<f64>,
    pub mean_dice_spleen: Option<f64>,
    pub detection: DetectionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn summarize(cases: &[CaseEvaluation]) -> EvaluationSummary {
    let mean = |f: fn(&CaseEvaluation) -> Option<f64>| {
        let v: Vec<f64> = cases.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let detection = cases.iter().fold(DetectionCounts::default(), |a, c| a + c.detection);
    EvaluationSummary {
        cases: cases.len(),
        mean_dice_liver: mean(|c| c.dice_liver),
        mean_dice_tumor: mean(|c| c.dice_tumor),
        mean_dice_spleen: mean(|c| c.dice_spleen),
        detection,
        precision: detection.precision(),
        recall: detection.recall(),
        f1: detection.f1(),
    }
}

pub fn write_case_csv<W: Write>(cases: &[CaseEvaluation], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case_id", "dice_liver", "dice_tumor", "dice_spleen", "tp", "fp", "fn"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for c in cases {
        w.write_record([
            c.case_id.clone(),
            opt(c.dice_liver),
            opt(c.dice_tumor),
            opt(c.dice_spleen),
            c.detection.tp.to_string(),
            c.detection.fp.to_string(),
            c.detection.fn_.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Geometry;
    use proptest::prelude::*;

    fn mask(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> bool) -> BinaryMask {
        BinaryMask::from_fn(Geometry::unit(dims).unwrap(), |x, y, z| f(x, y, z))
    }

    #[test]
    fn dice_cases() {
        let a = mask([4, 4, 1], |x, y, _| x < 2 && y < 4);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = mask([4, 4, 1], |x, y, _| x >= 2 && y < 4);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let c = mask([4, 4, 1], |x, y, _| (1..3).contains(&x) && y < 4);
        assert_eq!(dice(&a, &c).unwrap(), 0.5);
        let e = mask([4, 4, 1], |_, _, _| false);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        let other = mask([4, 4, 2], |_, _, _| false);
        assert!(matches!(dice(&e, &other), Err(EvalError::GeometryMismatch)));
    }

    #[test]
    fn table_counts() {
        let c = DetectionCounts::new(36, 14, 5);
        assert_eq!(format!("{:.3}", c.precision()), "0.720");
        assert_eq!(format!("{:.3}", c.recall()), "0.878");
        assert_eq!(format!("{:.3}", c.f1()), "0.791");
        assert_eq!(DetectionCounts::default().f1(), 0.0);
    }

    #[test]
    fn identical_single_instance() {
        let a = connected_components(&mask([5, 5, 5], |x, y, z| x < 2 && y < 2 && z < 2));
        let m = match_instances(&a, &a).unwrap();
        assert_eq!(m.counts, DetectionCounts::new(1, 0, 0));
        assert_eq!(m.f1(), 1.0);
    }

    #[test]
    fn greedy_prefers_higher_dice() {
        let c = [MatchedPair { pred: 1, gt: 1, dice: 0.6 }, MatchedPair { pred: 2, gt: 1, dice: 0.4 }];
        let m = greedy_match(&c, 2, 1);
        assert_eq!(m.pairs, vec![c[0]]);
        assert_eq!(m.false_positives, vec![2]);
        assert!(m.false_negatives.is_empty());
        let below = [MatchedPair { pred: 1, gt: 1, dice: 0.09 }];
        assert_eq!(greedy_match(&below, 1, 1).counts, DetectionCounts::new(0, 1, 1));
    }

    #[test]
    fn greedy_can_miss_the_largest_matching() {
        // pred 1 covers most of gt 1 and a rim of gt 2; pred 2 covers the
        // rest of gt 1. Greedy takes (1, 1) and strands both others.
        let c = [
            MatchedPair { pred: 1, gt: 1, dice: 0.8 },
            MatchedPair { pred: 1, gt: 2, dice: 0.2 },
            MatchedPair { pred: 2, gt: 1, dice: 0.33 },
        ];
        assert_eq!(greedy_match(&c, 2, 2).counts.tp, 1);
        let o = optimal_match(&c, 2, 2);
        assert_eq!(o.counts.tp, 2);
        assert_eq!(o.pairs, vec![c[1], c[2]]);
    }

    #[test]
    fn postprocess_rules() {
        let g = Geometry::unit([30, 10, 10]).unwrap();
        let liver = BinaryMask::from_fn(g, |x, _, _| x < 20);
        // 50 voxels inside the liver: too small
        let small = |x: usize, y: usize, z: usize| x < 5 && y < 5 && z < 2;
        // 125 voxels fully outside
        let outside = |x: usize, y: usize, z: usize| x >= 25 && y < 5 && z >= 5;
        // 120 voxels, 96 inside (80%)
        let straddle = |x: usize, y: usize, z: usize| (12..22).contains(&x) && (6..10).contains(&y) && (5..8).contains(&z);
        let t = BinaryMask::from_fn(g, |x, y, z| small(x, y, z) || outside(x, y, z) || straddle(x, y, z));
        let cfg = PostprocessConfig::default();
        let out = postprocess(&t, &liver, &cfg).unwrap();
        assert_eq!(out, BinaryMask::from_fn(g, straddle));
        assert_eq!(postprocess(&out, &liver, &cfg).unwrap(), out);
    }

    fn labeling() -> impl Strategy<Value = (InstanceLabeling, InstanceLabeling)> {
        let cells = prop::collection::vec(0u32..4, 36);
        (cells.clone(), cells).prop_map(|(a, b)| {
            let g = Geometry::unit([6, 6, 1]).unwrap();
            (InstanceLabeling::from_ids(g, &a), InstanceLabeling::from_ids(g, &b))
        })
    }

    fn brute_max_cardinality(c: &[MatchedPair], n_pred: usize, n_gt: usize) -> usize {
        let edges: Vec<&MatchedPair> = c.iter().filter(|p| p.dice >= MATCH_THRESHOLD).collect();
        let mut best = 0;
        for subset in 0u32..(1 << edges.len()) {
            let mut pu = vec![false; n_pred + 1];
            let mut gu = vec![false; n_gt + 1];
            let mut ok = true;
            let mut k = 0;
            for (i, e) in edges.iter().enumerate() {
                if subset >> i & 1 == 1 {
                    if pu[e.pred as usize] || gu[e.gt as usize] {
                        ok = false;
                        break;
                    }
                    pu[e.pred as usize] = true;
                    gu[e.gt as usize] = true;
                    k += 1;
                }
            }
            if ok {
                best = best.max(k);
            }
        }
        best
    }

    proptest! {
        #[test]
        fn matching_invariants((pred, gt) in labeling()) {
            let c = pairwise_dice(&pred, &gt).unwrap();
            prop_assume!(c.len() <= 16);
            let m = match_instances(&pred, &gt).unwrap();
            let s = match_instances(&gt, &pred).unwrap();
            prop_assert_eq!(m.counts.tp, s.counts.tp);
            prop_assert_eq!(m.counts.fp, s.counts.fn_);
            prop_assert_eq!(m.counts.fn_, s.counts.fp);
            prop_assert!((m.precision() - s.recall()).abs() < 1e-15);
            prop_assert!(m.pairs.iter().all(|p| p.dice >= MATCH_THRESHOLD));
            let mut ps: Vec<u32> = m.pairs.iter().map(|p| p.pred).collect();
            let mut gs: Vec<u32> = m.pairs.iter().map(|p| p.gt).collect();
            ps.sort_unstable(); ps.dedup();
            gs.sort_unstable(); gs.dedup();
            prop_assert_eq!(ps.len(), m.pairs.len());
            prop_assert_eq!(gs.len(), m.pairs.len());
            prop_assert_eq!(m.counts.tp + m.counts.fp, pred.len());
            prop_assert_eq!(m.counts.tp + m.counts.fn_, gt.len());
            // greedy is maximal, so within a factor 2 of the optimum
            let best = brute_max_cardinality(&c, pred.len(), gt.len());
            let opt = match_instances_optimal(&pred, &gt).unwrap();
            prop_assert_eq!(opt.counts.tp, best);
            prop_assert!(m.counts.tp <= best && 2 * m.counts.tp >= best);
            for e in c.iter().filter(|p| p.dice >= MATCH_THRESHOLD) {
                let taken = m.pairs.iter().any(|p| p.pred == e.pred || p.gt == e.gt);
                prop_assert!(taken, "edge {:?} could extend the greedy matching", e);
            }
        }

        #[test]
        fn postprocess_is_idempotent(cells in prop::collection::vec(any::<bool>(), 216), liv in prop::collection::vec(any::<bool>(), 216), v in 0.0f64..6.0) {
            let g = Geometry::unit([6, 6, 6]).unwrap();
            let t = BinaryMask::new(g, cells).unwrap();
            let l = BinaryMask::new(g, liv).unwrap();
            let cfg = PostprocessConfig { min_volume_mm3: v, min_liver_fraction: 0.5 };
            let once = postprocess(&t, &l, &cfg).unwrap();
            prop_assert_eq!(postprocess(&once, &l, &cfg).unwrap(), once);
        }
    }
}
