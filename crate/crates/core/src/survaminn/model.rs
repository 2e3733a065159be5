use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, TumorFeatureBag};

/// Fully connected layer, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, weights: vec![0.0; n_in * n_out], bias: vec![0.0; n_out] }
    }

    /// Weights uniform in `±1/sqrt(n_in)`, zero bias.
    pub fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let weights = (0..n_in * n_out).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { n_in, n_out, weights, bias: vec![0.0; n_out] }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients for output gradient `g` at input `x`
    /// and returns the input gradient.
    fn backward(&self, x: &[f64], g: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut gx = vec![0.0; self.n_in];
        for o in 0..self.n_out {
            if g[o] == 0.0 {
                continue;
            }
            grad.bias[o] += g[o];
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            let grow = &mut grad.weights[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                grow[i] += g[o] * x[i];
                gx[i] += g[o] * row[i];
            }
        }
        gx
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Layer widths. The encoder maps `d -> hidden -> code`, the decoder mirrors
/// it and the regressor maps `code -> reg_hidden -> 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: usize,
    pub code: usize,
    pub reg_hidden: usize,
}

impl Architecture {
    pub fn new(input: usize) -> Self {
        Self { input, hidden: 64, code: 32, reg_hidden: 16 }
    }
}

/// Network parameters in layer order: encoder (2), decoder (2), regressor (2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub layers: Vec<Dense>,
}

/// Per-tumor dropout scales (0 or `1/(1-p)`) for the four hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub hidden: Vec<f64>,
    pub code: Vec<f64>,
    pub decoder: Vec<f64>,
    pub regressor: Vec<f64>,
}

impl DropoutMask {
    pub fn identity(arch: &Architecture) -> Self {
        Self {
            hidden: vec![1.0; arch.hidden],
            code: vec![1.0; arch.code],
            decoder: vec![1.0; arch.hidden],
            regressor: vec![1.0; arch.reg_hidden],
        }
    }

    /// Inverted dropout with drop probability `p`.
    pub fn sample<R: Rng>(arch: &Architecture, p: f64, rng: &mut R) -> Self {
        let keep = 1.0 / (1.0 - p);
        let mut draw = |n: usize| (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        Self { hidden: draw(arch.hidden), code: draw(arch.code), decoder: draw(arch.hidden), regressor: draw(arch.reg_hidden) }
    }
}

/// Intermediates of one tumor's forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TumorForward {
    pub input: Vec<f64>,
    /// Pre-activations of the four hidden layers.
    pub pre_hidden: Vec<f64>,
    pub pre_code: Vec<f64>,
    pub pre_decoder: Vec<f64>,
    pub pre_regressor: Vec<f64>,
    /// Post-activation, post-dropout values.
    pub hidden: Vec<f64>,
    pub code: Vec<f64>,
    pub decoder: Vec<f64>,
    pub regressor: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagForward {
    pub tumors: Vec<TumorForward>,
}

impl BagForward {
    pub fn scores(&self) -> Vec<f64> {
        self.tumors.iter().map(|t| t.score).collect()
    }

    pub fn reconstructions(&self) -> Vec<Vec<f64>> {
        self.tumors.iter().map(|t| t.reconstruction.clone()).collect()
    }

    pub fn codes(&self) -> Vec<Vec<f64>> {
        self.tumors.iter().map(|t| t.code.clone()).collect()
    }
}

fn relu_drop(pre: &[f64], mask: &[f64]) -> Vec<f64> {
    pre.iter().zip(mask).map(|(&a, &m)| if a > 0.0 { a * m } else { 0.0 }).collect()
}

fn relu_drop_grad(g: &[f64], pre: &[f64], mask: &[f64]) -> Vec<f64> {
    g.iter().zip(pre).zip(mask).map(|((&g, &a), &m)| if a > 0.0 { g * m } else { 0.0 }).collect()
}

impl ModelParams {
    pub fn init<R: Rng>(arch: Architecture, rng: &mut R) -> Self {
        let a = arch;
        let layers = vec![
            Dense::init(a.input, a.hidden, rng),
            Dense::init(a.hidden, a.code, rng),
            Dense::init(a.code, a.hidden, rng),
            Dense::init(a.hidden, a.input, rng),
            Dense::init(a.code, a.reg_hidden, rng),
            Dense::init(a.reg_hidden, 1, rng),
        ];
        Self { arch, layers }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let a = arch;
        let layers = vec![
            Dense::zeros(a.input, a.hidden),
            Dense::zeros(a.hidden, a.code),
            Dense::zeros(a.code, a.hidden),
            Dense::zeros(a.hidden, a.input),
            Dense::zeros(a.code, a.reg_hidden),
            Dense::zeros(a.reg_hidden, 1),
        ];
        Self { arch, layers }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    /// All parameters, layer by layer, weights before bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.num_params(), "flat parameter length");
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&v[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&v[k..k + nb]);
            k += nb;
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let a = self.arch;
        let expect = [
            (a.input, a.hidden),
            (a.hidden, a.code),
            (a.code, a.hidden),
            (a.hidden, a.input),
            (a.code, a.reg_hidden),
            (a.reg_hidden, 1),
        ];
        if self.layers.len() != 6 {
            return Err(ModelError::Shape(format!("{} layers, expected 6", self.layers.len())));
        }
        for (l, &(i, o)) in self.layers.iter().zip(&expect) {
            if l.n_in != i || l.n_out != o || l.weights.len() != i * o || l.bias.len() != o {
                return Err(ModelError::Shape(format!("layer {}x{} does not match {i}x{o}", l.n_in, l.n_out)));
            }
        }
        if self.flat().iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("parameters".into()));
        }
        Ok(())
    }

    pub fn forward_tumor(&self, x: &[f64], mask: &DropoutMask) -> TumorForward {
        let l = &self.layers;
        let pre_hidden = l[0].apply(x);
        let hidden = relu_drop(&pre_hidden, &mask.hidden);
        let pre_code = l[1].apply(&hidden);
        let code = relu_drop(&pre_code, &mask.code);
        let pre_decoder = l[2].apply(&code);
        let decoder = relu_drop(&pre_decoder, &mask.decoder);
        let reconstruction = l[3].apply(&decoder);
        let pre_regressor = l[4].apply(&code);
        let regressor = relu_drop(&pre_regressor, &mask.regressor);
        let score = l[5].apply(&regressor)[0];
        TumorForward {
            input: x.to_vec(),
            pre_hidden,
            pre_code,
            pre_decoder,
            pre_regressor,
            hidden,
            code,
            decoder,
            regressor,
            reconstruction,
            score,
        }
    }

    /// Forward pass over a bag; `masks` defaults to no dropout.
    pub fn forward(&self, bag: &TumorFeatureBag, masks: Option<&[DropoutMask]>) -> Result<BagForward, ModelError> {
        bag.validate(self.arch.input)?;
        if let Some(m) = masks {
            if m.len() != bag.len() {
                return Err(ModelError::Shape(format!("{} dropout masks for {} tumors", m.len(), bag.len())));
            }
        }
        let identity = DropoutMask::identity(&self.arch);
        let tumors = bag
            .features
            .iter()
            .enumerate()
            .map(|(t, x)| self.forward_tumor(x, masks.map_or(&identity, |m| &m[t])))
            .collect();
        Ok(BagForward { tumors })
    }

    /// Backpropagates `d_recon` (gradient w.r.t. the reconstruction) and
    /// `d_score` through one tumor, accumulating into `grad`.
    pub(crate) fn backward_tumor(
        &self,
        f: &TumorForward,
        mask: &DropoutMask,
        d_recon: &[f64],
        d_score: f64,
        grad: &mut ModelParams,
    ) {
        let l = &self.layers;
        let (g0, rest) = grad.layers.split_at_mut(1);
        let (g1, rest) = rest.split_at_mut(1);
        let (g2, rest) = rest.split_at_mut(1);
        let (g3, rest) = rest.split_at_mut(1);
        let (g4, g5) = rest.split_at_mut(1);

        let d_reg = l[5].backward(&f.regressor, &[d_score], &mut g5[0]);
        let d_pre_reg = relu_drop_grad(&d_reg, &f.pre_regressor, &mask.regressor);
        let d_code_reg = l[4].backward(&f.code, &d_pre_reg, &mut g4[0]);

        let d_dec = l[3].backward(&f.decoder, d_recon, &mut g3[0]);
        let d_pre_dec = relu_drop_grad(&d_dec, &f.pre_decoder, &mask.decoder);
        let d_code_dec = l[2].backward(&f.code, &d_pre_dec, &mut g2[0]);

        let d_code: Vec<f64> = d_code_reg.iter().zip(&d_code_dec).map(|(a, b)| a + b).collect();
        let d_pre_code = relu_drop_grad(&d_code, &f.pre_code, &mask.code);
        let d_hidden = l[1].backward(&f.hidden, &d_pre_code, &mut g1[0]);
        let d_pre_hidden = relu_drop_grad(&d_hidden, &f.pre_hidden, &mask.hidden);
        l[0].backward(&f.input, &d_pre_hidden, &mut g0[0]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Phase;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bag(t: usize, d: usize) -> TumorFeatureBag {
        TumorFeatureBag {
            patient_id: "p".into(),
            phase: Phase::Post,
            features: (0..t).map(|i| (0..d).map(|j| (i * d + j) as f64 * 0.1 - 0.3).collect()).collect(),
            volumes: vec![1.0; t],
            diameters: vec![1.0; t],
        }
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let m = ModelParams::zeros(Architecture::new(5));
        let f = m.forward(&bag(3, 5), None).unwrap();
        assert_eq!(f.scores(), vec![0.0; 3]);
        assert!(f.reconstructions().iter().flatten().all(|&v| v == 0.0));
        assert!(f.codes().iter().all(|c| c.len() == 32));
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ModelParams::init(Architecture::new(4), &mut rng);
        let masks: Vec<DropoutMask> = (0..3).map(|_| DropoutMask::sample(&m.arch, 0.2, &mut rng)).collect();
        let a = m.forward(&bag(3, 4), Some(&masks)).unwrap();
        let b = m.forward(&bag(3, 4), Some(&masks)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tumors.len(), 3);
        assert!(m.forward(&bag(3, 5), None).is_err());
        assert!(m.forward(&bag(3, 4), Some(&masks[..2])).is_err());
        m.validate().unwrap();
    }

    #[test]
    fn flat_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = ModelParams::init(Architecture::new(3), &mut rng);
        let mut z = ModelParams::zeros(m.arch);
        z.set_flat(&m.flat());
        assert_eq!(z, m);
        assert_eq!(m.num_params(), 3 * 64 + 64 + 64 * 32 + 32 + 32 * 64 + 64 + 64 * 3 + 3 + 32 * 16 + 16 + 16 + 1);
    }
}
