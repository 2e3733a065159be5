use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{alpha_schedule, batch_gradients, pool};
use super::model::{Architecture, DropoutMask, ModelParams};
use super::{ModelError, PoolingKind, SurvivalDataset, TumorFeatureBag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub dropout: f64,
    pub pooling: PoolingKind,
    pub seed: u64,
    /// Subsample the majority of censored/uncensored patients each epoch.
    pub balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            lr: 4e-4,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            dropout: 0.2,
            pooling: PoolingKind::Lse,
            seed: 0,
            balanced: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.epochs < 2 {
            return Err(ModelError::TooFewEpochs(2));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    wd: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            wd: cfg.weight_decay,
            b1: cfg.beta1,
            b2: cfg.beta2,
            eps: cfg.eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * grad[i];
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= self.lr * (mh / (vh.sqrt() + self.eps) + self.wd * theta[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub alpha: f64,
    pub mse: f64,
    pub cox: f64,
    pub total: f64,
    pub patients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub pooling: PoolingKind,
    pub history: Vec<EpochRecord>,
}

impl TrainedModel {
    pub fn predict(&self, bag: &TumorFeatureBag) -> Result<f64, ModelError> {
        predict_hazard(&self.params, bag, self.pooling)
    }
}

fn epoch_sample<R: rand::Rng>(data: &SurvivalDataset, balanced: bool, rng: &mut R) -> Vec<usize> {
    let all: Vec<usize> = (0..data.len()).collect();
    if !balanced {
        return all;
    }
    let (events, censored): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| data.labels[i].event);
    let k = events.len().min(censored.len());
    if k == 0 {
        return all;
    }
    let (small, big) = if events.len() <= censored.len() { (events, censored) } else { (censored, events) };
    let mut picked: Vec<usize> = index::sample(rng, big.len(), k).into_iter().map(|j| big[j]).collect();
    picked.extend(small);
    picked.sort_unstable();
    picked
}

/// Trains one model. All randomness (initialisation, per-epoch balanced
/// subsamples, dropout masks) comes from one generator seeded by
/// `cfg.seed`, so a fixed seed reproduces the parameters bit for bit.
pub fn train(data: &SurvivalDataset, cfg: &TrainConfig) -> Result<TrainedModel, ModelError> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(ModelError::Shape(format!("training needs at least 2 patients, got {}", data.len())));
    }
    if !data.labels.iter().any(|l| l.event) {
        return Err(ModelError::NoEvents);
    }
    let d = data.feature_dim().ok_or_else(|| ModelError::EmptyBag(data.bags[0].patient_id.clone()))?;
    for b in &data.bags {
        b.validate(d)?;
        if matches!(cfg.pooling, PoolingKind::Largest | PoolingKind::LargestDiameter) && b.sizes(cfg.pooling).is_none() {
            return Err(ModelError::MissingSizes(cfg.pooling));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(Architecture::new(d), &mut rng);
    let mut theta = params.flat();
    let mut opt = AdamW::new(theta.len(), cfg);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let alpha = alpha_schedule(epoch, cfg.epochs)?;
        let idx = epoch_sample(data, cfg.balanced, &mut rng);
        let batch = data.subset(&idx);
        let masks: Vec<Vec<DropoutMask>> = batch
            .bags
            .iter()
            .map(|b| (0..b.len()).map(|_| DropoutMask::sample(&params.arch, cfg.dropout, &mut rng)).collect())
            .collect();
        let (loss, grad) = batch_gradients(&params, &batch.bags, &batch.labels, cfg.pooling, alpha, Some(&masks))?;
        let g = grad.flat();
        if !loss.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(format!("loss or gradient at epoch {epoch}")));
        }
        opt.step(&mut theta, &g);
        params.set_flat(&theta);
        history.push(EpochRecord {
            epoch,
            alpha,
            mse: loss.mse,
            cox: loss.cox,
            total: loss.total,
            patients: idx.len(),
        });
    }
    Ok(TrainedModel { params, pooling: cfg.pooling, history })
}

/// Patient hazard with dropout disabled.
pub fn predict_hazard(params: &ModelParams, bag: &TumorFeatureBag, pooling: PoolingKind) -> Result<f64, ModelError> {
    let f = params.forward(bag, None)?;
    pool(&f.scores(), pooling, bag.sizes(pooling))
}

/// Mean of the available phase hazards.
pub fn late_fuse(pre: Option<f64>, post: Option<f64>) -> Result<f64, ModelError> {
    match (pre, post) {
        (Some(a), Some(b)) => Ok(0.5 * (a + b)),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => Err(ModelError::NoPhases),
    }
}

/// Writes the model as JSON. Parameters are IEEE-754 binary64 values in
/// layer order, each layer's row-major `[out][in]` weights then its bias;
/// the decimal form round-trips exactly.
pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    let json = serde_json::to_string(model).map_err(|e| ModelError::Format(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let model: TrainedModel = serde_json::from_str(&text).map_err(|e| ModelError::Format(e.to_string()))?;
    model.params.validate()?;
    Ok(model)
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], out: W) -> Result<(), ModelError> {
    let mut w = csv::Writer::from_writer(out);
    for r in history {
        w.serialize(r).map_err(|e| ModelError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survstats::{concordance_index, SurvivalLabel};
    use crate::volgrid::Phase;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> SurvivalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bags = Vec::new();
        let mut labels = Vec::new();
        for p in 0..n {
            let t = rng.random_range(1..4);
            let features: Vec<Vec<f64>> = (0..t).map(|_| (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
            let risk = features.iter().map(|x| 2.0 * x[0]).fold(f64::NEG_INFINITY, f64::max);
            let time = -rng.random::<f64>().ln() / (0.1 * risk.exp());
            labels.push(SurvivalLabel::new(time, rng.random::<f64>() < 0.7).unwrap());
            bags.push(TumorFeatureBag {
                patient_id: format!("p{p}"),
                phase: Phase::Post,
                volumes: (0..t).map(|i| 1.0 + i as f64).collect(),
                diameters: vec![],
                features,
            });
        }
        SurvivalDataset::new(bags, labels).unwrap()
    }

    #[test]
    fn deterministic_history_and_checkpoint() {
        let data = toy(30, 1);
        let cfg = TrainConfig { epochs: 20, seed: 5, ..Default::default() };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 20);
        assert_eq!(a.history[0].alpha, 0.0);
        assert_eq!(a.history[19].alpha, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&a, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), a);
        let mut buf = Vec::new();
        write_history_csv(&a.history, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,alpha,mse,cox,total,patients\n"));
        assert_eq!(text.lines().count(), 21);
        let c = train(&data, &TrainConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn balanced_sample_matches_minority() {
        let data = toy(40, 2);
        let events = data.labels.iter().filter(|l| l.event).count();
        let k = events.min(40 - events);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = epoch_sample(&data, true, &mut rng);
        assert_eq!(s.len(), 2 * k);
        assert_eq!(s.iter().filter(|&&i| data.labels[i].event).count(), k);
        let t = epoch_sample(&data, true, &mut rng);
        assert_ne!(s, t);
        assert_eq!(epoch_sample(&data, false, &mut rng).len(), 40);
    }

    #[test]
    fn rejects_bad_input() {
        let mut data = toy(10, 3);
        for l in &mut data.labels {
            l.event = false;
        }
        assert!(matches!(train(&data, &TrainConfig::default()), Err(ModelError::NoEvents)));
        let data = toy(10, 3);
        assert!(matches!(train(&data, &TrainConfig { epochs: 1, ..Default::default() }), Err(ModelError::TooFewEpochs(2))));
        assert!(train(&data, &TrainConfig { lr: 0.0, ..Default::default() }).is_err());
        let cfg = TrainConfig { pooling: PoolingKind::LargestDiameter, ..Default::default() };
        assert!(matches!(train(&data, &cfg), Err(ModelError::MissingSizes(_))));
    }

    #[test]
    fn learns_a_max_risk_signal() {
        let data = toy(120, 4);
        let m = train(&data, &TrainConfig { seed: 1, ..Default::default() }).unwrap();
        let h: Vec<f64> = data.bags.iter().map(|b| m.predict(b).unwrap()).collect();
        let t: Vec<f64> = data.labels.iter().map(|l| l.time).collect();
        let e: Vec<bool> = data.labels.iter().map(|l| l.event).collect();
        let c = concordance_index(&t, &e, &h).unwrap();
        assert!(c > 0.65, "train c-index {c}");
    }

    #[test]
    fn fusion() {
        assert_eq!(late_fuse(Some(0.3), Some(0.3)).unwrap(), 0.3);
        assert_eq!(late_fuse(Some(1.0), Some(0.0)).unwrap(), 0.5);
        assert_eq!(late_fuse(None, Some(0.2)).unwrap(), 0.2);
        assert!(matches!(late_fuse(None, None), Err(ModelError::NoPhases)));
    }
}
