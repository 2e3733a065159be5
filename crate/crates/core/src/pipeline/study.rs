use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{create_dir, io_err, PipelineError, RunConfig, SeedPrompt};
use crate::promptseg::PromptPoint;
use crate::synthgen::{generate_phantom, liver_phantom, write_phantom_spec};
use crate::volgrid::{save_mask, write_raw_volume, Label, Mask3D, Phase, RawDtype, View};

/// Synthetic imaging study laid out as a data root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySpec {
    pub patients: usize,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub min_tumors: usize,
    pub max_tumors: usize,
    /// Fraction of patients whose label files carry tumors only; their
    /// liver is pseudo-labelled from a seed prompt.
    pub partial_fraction: f64,
    /// Log-hazard per standard deviation of log total tumor volume.
    pub risk_weight: f64,
    pub censoring_fraction: f64,
    pub seed: u64,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            patients: 24,
            dims: [48, 48, 48],
            spacing: [2.0; 3],
            min_tumors: 1,
            max_tumors: 4,
            partial_fraction: 0.25,
            risk_weight: 1.0,
            censoring_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Liver voxel of the axial slice through the liver centroid closest to
/// that centroid.
fn liver_prompt(case: &str, labels: &Mask3D) -> Option<SeedPrompt> {
    let g = labels.geometry();
    let pts: Vec<[usize; 3]> =
        (0..g.len()).filter(|&i| labels.labels()[i] == Label::Liver).map(|i| g.coords(i)).collect();
    if pts.is_empty() {
        return None;
    }
    let mean: [f64; 3] = std::array::from_fn(|a| pts.iter().map(|p| p[a] as f64).sum::<f64>() / pts.len() as f64);
    let z = mean[2].round() as usize;
    let best = pts
        .iter()
        .filter(|p| p[2] == z)
        .min_by(|a, b| {
            let d = |p: &[usize; 3]| (p[0] as f64 - mean[0]).powi(2) + (p[1] as f64 - mean[1]).powi(2);
            d(a).total_cmp(&d(b))
        })?;
    Some(SeedPrompt {
        case: case.to_string(),
        structure: Label::Liver,
        view: View::Axial,
        index: z,
        points: vec![PromptPoint::positive(best[1], best[0])],
    })
}

/// Writes `images/`, `labels/`, `phantoms/`, `patients.csv` and a
/// `config.json` holding the liver prompts of the partially labelled cases.
/// Survival times are exponential with log-hazard proportional to the
/// standardized log total tumor volume.
pub fn simulate_study(spec: &StudySpec, dir: &Path) -> Result<RunConfig, PipelineError> {
    if spec.patients < 2 || spec.min_tumors == 0 || spec.min_tumors > spec.max_tumors {
        return Err(PipelineError::Input(format!("invalid study spec {spec:?}")));
    }
    if !(0.0..=1.0).contains(&spec.partial_fraction) || !(0.0..1.0).contains(&spec.censoring_fraction) {
        return Err(PipelineError::Input("fractions must lie in [0, 1]".into()));
    }
    for sub in ["images", "labels", "phantoms"] {
        create_dir(&dir.join(sub))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_partial = (spec.partial_fraction * spec.patients as f64).round() as usize;
    let mut prompts = Vec::new();
    let mut burden = Vec::with_capacity(spec.patients);
    let mut ids = Vec::with_capacity(spec.patients);
    for p in 0..spec.patients {
        let id = format!("S{p:03}");
        let n_tumors = rng.random_range(spec.min_tumors..=spec.max_tumors);
        let pspec = liver_phantom(spec.dims, spec.spacing, n_tumors, rng.random())?;
        burden.push(pspec.tumors.iter().map(|t| t.volume_mm3()).sum::<f64>().ln());
        let phantom = generate_phantom(&pspec)?;
        let spec_path = dir.join("phantoms").join(format!("{id}.json"));
        let f = std::fs::File::create(&spec_path).map_err(io_err(&spec_path))?;
        write_phantom_spec(&pspec, f)?;
        for phase in Phase::ALL {
            let case = format!("{id}_{phase}");
            write_raw_volume(dir.join("images").join(format!("{case}.json")), phantom.volume(phase), RawDtype::I16)?;
            let labels = if p < n_partial {
                prompts.extend(liver_prompt(&case, &phantom.labels));
                let tumors_only =
                    phantom.labels.labels().iter().map(|&l| if l == Label::Tumor { l } else { Label::Background }).collect();
                Mask3D::new(*phantom.labels.geometry(), tumors_only)?
            } else {
                phantom.labels.clone()
            };
            save_mask(dir.join("labels").join(format!("{case}.nii")), &labels)?;
        }
        ids.push(id);
    }

    let n = burden.len() as f64;
    let mean = burden.iter().sum::<f64>() / n;
    let sd = (burden.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    let mut w = csv::Writer::from_path(dir.join("patients.csv"))?;
    w.write_record(["id", "time", "event"])?;
    for (id, b) in ids.iter().zip(&burden) {
        let rate = 0.05 * (spec.risk_weight * (b - mean) / sd).exp();
        let t: f64 = Exp::new(rate).expect("positive rate").sample(&mut rng);
        let censored = rng.random::<f64>() < spec.censoring_fraction;
        let (time, event) = if censored { ((t * rng.random::<f64>()).max(1e-6), 0) } else { (t, 1) };
        w.write_record([id.clone(), time.to_string(), event.to_string()])?;
    }
    w.flush().map_err(io_err(&dir.join("patients.csv")))?;

    let cfg = RunConfig {
        data_root: dir.to_path_buf(),
        output_root: dir.join("out"),
        prompts,
        seed: spec.seed,
        ..RunConfig::default()
    };
    cfg.save(&dir.join("config.json"))?;
    Ok(cfg)
}
