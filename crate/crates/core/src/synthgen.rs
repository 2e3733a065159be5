//! Seeded synthetic phantoms and survival cohorts with known ground truth.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::survaminn::TumorFeatureBag;
use crate::survstats::SurvivalLabel;
use crate::volgrid::{BinaryMask, Geometry, Label, Mask3D, Phase, Volume3D, VolumeError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("{0} lies outside the volume")]
    OutOfBounds(String),
    #[error("{0} and {1} overlap")]
    Overlap(String, String),
    #[error("could not place {0} tumors without overlap")]
    Placement(usize),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Intensity of a structure in each phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseIntensity {
    pub pre: f64,
    pub post: f64,
}

impl PhaseIntensity {
    pub fn same(v: f64) -> Self {
        Self { pre: v, post: v }
    }

    pub fn get(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Pre => self.pre,
            Phase::Post => self.post,
        }
    }
}

/// Axis-aligned ellipsoid in world millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub intensity: PhaseIntensity,
}

impl Ellipsoid {
    pub fn sphere(center: [f64; 3], radius: f64, intensity: PhaseIntensity) -> Self {
        Self { center, semi_axes: [radius; 3], intensity }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.semi_axes[a]).powi(2)).sum::<f64>() <= 1.0
    }

    pub fn volume_mm3(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi_axes.iter().product::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub background: PhaseIntensity,
    pub liver: Option<Ellipsoid>,
    pub spleen: Option<Ellipsoid>,
    pub tumors: Vec<Ellipsoid>,
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub pre: Volume3D,
    pub post: Volume3D,
    pub labels: Mask3D,
}

impl Phantom {
    pub fn volume(&self, phase: Phase) -> &Volume3D {
        match phase {
            Phase::Pre => &self.pre,
            Phase::Post => &self.post,
        }
    }
}

fn check_ellipsoid(name: &str, e: &Ellipsoid, extent: [f64; 3]) -> Result<(), SynthError> {
    if e.semi_axes.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(SynthError::InvalidSpec(format!("{name} needs positive radii")));
    }
    for a in 0..3 {
        if e.center[a] - e.semi_axes[a] < 0.0 || e.center[a] + e.semi_axes[a] > extent[a] {
            return Err(SynthError::OutOfBounds(name.to_string()));
        }
    }
    Ok(())
}

impl PhantomSpec {
    pub fn geometry(&self) -> Result<Geometry, SynthError> {
        Ok(Geometry::new(self.dims, self.spacing, [0.0; 3])?)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let g = self.geometry()?;
        let extent: [f64; 3] = std::array::from_fn(|a| (g.dims[a] - 1) as f64 * g.spacing[a]);
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(SynthError::InvalidSpec("noise_std must be nonnegative".into()));
        }
        if let Some(l) = &self.liver {
            check_ellipsoid("liver", l, extent)?;
        }
        if let Some(s) = &self.spleen {
            check_ellipsoid("spleen", s, extent)?;
        }
        for (i, t) in self.tumors.iter().enumerate() {
            check_ellipsoid(&format!("tumor {i}"), t, extent)?;
        }
        Ok(())
    }

    /// Structures in painting order: liver, spleen, tumors. Tumors may sit
    /// inside the liver; any other shared voxel is an overlap.
    fn structures(&self) -> Vec<(String, Label, &Ellipsoid)> {
        let mut out = Vec::new();
        if let Some(l) = &self.liver {
            out.push(("liver".to_string(), Label::Liver, l));
        }
        if let Some(s) = &self.spleen {
            out.push(("spleen".to_string(), Label::Spleen, s));
        }
        for (i, t) in self.tumors.iter().enumerate() {
            out.push((format!("tumor {i}"), Label::Tumor, t));
        }
        out
    }
}

/// Rasterises the spec: labels are the exact indicator of each voxel centre
/// and intensities are piecewise constant plus seeded Gaussian noise (one
/// independent stream per phase).
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom, SynthError> {
    spec.validate()?;
    let g = spec.geometry()?;
    let structures = spec.structures();
    let mut owner: Vec<Option<usize>> = vec![None; g.len()];
    let mut labels = vec![Label::Background; g.len()];
    for (k, (name, label, e)) in structures.iter().enumerate() {
        for (i, slot) in owner.iter_mut().enumerate() {
            if !e.contains(g.world(g.coords(i))) {
                continue;
            }
            if let Some(prev) = *slot {
                let nested = structures[prev].1 == Label::Liver && *label == Label::Tumor;
                if !nested {
                    return Err(SynthError::Overlap(structures[prev].0.clone(), name.clone()));
                }
            }
            *slot = Some(k);
            labels[i] = *label;
        }
    }

    let make = |phase: Phase, stream: u64| -> Result<Volume3D, SynthError> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        let noise = Normal::new(0.0, spec.noise_std).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        let data = owner
            .iter()
            .map(|o| {
                let base = o.map_or(spec.background.get(phase), |k| structures[k].2.intensity.get(phase));
                if spec.noise_std > 0.0 {
                    base + noise.sample(&mut rng)
                } else {
                    base
                }
            })
            .collect();
        Ok(Volume3D::new(g, data)?)
    };
    Ok(Phantom { pre: make(Phase::Pre, 0)?, post: make(Phase::Post, 1)?, labels: Mask3D::new(g, labels)? })
}

/// Single bright sphere at the volume centre on a dark background.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePhantom {
    pub volume: Volume3D,
    pub truth: BinaryMask,
    pub center: [usize; 3],
}

/// Cube of side `n` voxels (1 mm) holding a sphere of `radius` voxels with
/// intensity `3 * background` and noise `noise_fraction` times the contrast
/// (foreground minus background).
pub fn sphere_phantom(n: usize, radius: f64, noise_fraction: f64, seed: u64) -> Result<SpherePhantom, SynthError> {
    let background = 100.0;
    let foreground = 3.0 * background;
    let c = (n / 2) as f64;
    let spec = PhantomSpec {
        dims: [n; 3],
        spacing: [1.0; 3],
        background: PhaseIntensity::same(background),
        liver: None,
        spleen: None,
        tumors: vec![Ellipsoid::sphere([c; 3], radius, PhaseIntensity::same(foreground))],
        noise_std: noise_fraction * (foreground - background),
        seed,
    };
    let p = generate_phantom(&spec)?;
    Ok(SpherePhantom { volume: p.post, truth: p.labels.binary(Label::Tumor), center: [n / 2; 3] })
}

/// Liver with `n_tumors` non-overlapping tumors placed inside it by
/// rejection sampling, plus a spleen. Post-contrast liver is brighter than
/// pre-contrast; tumors stay dark in the post phase.
pub fn liver_phantom(dims: [usize; 3], spacing: [f64; 3], n_tumors: usize, seed: u64) -> Result<PhantomSpec, SynthError> {
    let ext: [f64; 3] = std::array::from_fn(|a| (dims[a] - 1) as f64 * spacing[a]);
    let liver = Ellipsoid {
        center: [0.38 * ext[0], 0.5 * ext[1], 0.5 * ext[2]],
        semi_axes: [0.3 * ext[0], 0.35 * ext[1], 0.35 * ext[2]],
        intensity: PhaseIntensity { pre: 120.0, post: 260.0 },
    };
    let spleen = Ellipsoid {
        center: [0.84 * ext[0], 0.5 * ext[1], 0.5 * ext[2]],
        semi_axes: [0.1 * ext[0], 0.15 * ext[1], 0.2 * ext[2]],
        intensity: PhaseIntensity { pre: 140.0, post: 150.0 },
    };
    let tumor_intensity = PhaseIntensity { pre: 80.0, post: 60.0 };
    let min_ext = ext.iter().copied().fold(f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tumors: Vec<Ellipsoid> = Vec::new();
    let mut attempts = 0;
    while tumors.len() < n_tumors {
        attempts += 1;
        if attempts > 10_000 {
            return Err(SynthError::Placement(n_tumors));
        }
        let r = rng.random_range(0.04..0.09) * min_ext;
        let c: [f64; 3] =
            std::array::from_fn(|a| liver.center[a] + rng.random_range(-1.0..1.0) * liver.semi_axes[a]);
        // keep the whole sphere inside the liver
        let inner = Ellipsoid { center: liver.center, semi_axes: liver.semi_axes.map(|s| s - r), ..liver };
        if inner.semi_axes.iter().any(|&s| s <= 0.0) || !inner.contains(c) {
            continue;
        }
        let gap = 2.0 * spacing.iter().copied().fold(0.0, f64::max);
        let clear = tumors.iter().all(|t| {
            let d = (0..3).map(|a| (t.center[a] - c[a]).powi(2)).sum::<f64>().sqrt();
            d > t.semi_axes[0] + r + gap
        });
        if clear {
            tumors.push(Ellipsoid::sphere(c, r, tumor_intensity));
        }
    }
    Ok(PhantomSpec {
        dims,
        spacing,
        background: PhaseIntensity { pre: 20.0, post: 30.0 },
        liver: Some(liver),
        spleen: Some(spleen),
        tumors,
        noise_std: 8.0,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n: usize,
    pub min_tumors: usize,
    pub max_tumors: usize,
    pub feature_dim: usize,
    /// Per-tumor linear score `w . x`; patient risk is the max over tumors.
    pub risk_weights: Vec<f64>,
    pub baseline_hazard: f64,
    pub censoring_fraction: f64,
    /// Log-normal parameters of tumor volume in mm³.
    pub log_volume_mean: f64,
    pub log_volume_sd: f64,
    pub phase: Phase,
    pub seed: u64,
}

impl CohortSpec {
    /// Risk carried by one feature with weight `weight`.
    pub fn single_feature(n: usize, feature_dim: usize, feature: usize, weight: f64, seed: u64) -> Self {
        let mut w = vec![0.0; feature_dim];
        w[feature] = weight;
        Self {
            n,
            min_tumors: 1,
            max_tumors: 6,
            feature_dim,
            risk_weights: w,
            baseline_hazard: 0.05,
            censoring_fraction: 0.2,
            log_volume_mean: 7.0,
            log_volume_sd: 1.0,
            phase: Phase::Post,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n < 2 {
            return bad(format!("n = {} patients", self.n));
        }
        if self.min_tumors == 0 || self.min_tumors > self.max_tumors {
            return bad(format!("tumor range {}..={}", self.min_tumors, self.max_tumors));
        }
        if self.feature_dim == 0 || self.risk_weights.len() != self.feature_dim {
            return bad(format!("{} risk weights for {} features", self.risk_weights.len(), self.feature_dim));
        }
        if !(0.0..1.0).contains(&self.censoring_fraction) {
            return bad("censoring fraction must lie in [0, 1)".into());
        }
        if !(self.baseline_hazard > 0.0 && self.baseline_hazard.is_finite()) {
            return bad("baseline hazard must be positive".into());
        }
        if !(self.log_volume_sd >= 0.0) || self.risk_weights.iter().any(|w| !w.is_finite()) {
            return bad("non-finite or negative parameter".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohort {
    pub bags: Vec<TumorFeatureBag>,
    pub labels: Vec<SurvivalLabel>,
    pub true_risks: Vec<f64>,
    /// Upper bound of the uniform censoring distribution (infinite when no
    /// censoring was requested).
    pub censoring_max: f64,
}

impl SyntheticCohort {
    pub fn censored_fraction(&self) -> f64 {
        self.labels.iter().filter(|l| !l.event).count() as f64 / self.labels.len() as f64
    }

    pub fn dataset(&self) -> crate::survaminn::SurvivalDataset {
        crate::survaminn::SurvivalDataset { bags: self.bags.clone(), labels: self.labels.clone() }
    }
}

fn censored_count(times: &[f64], u: &[f64], cmax: f64) -> usize {
    times.iter().zip(u).filter(|(&t, &v)| v * cmax < t).count()
}

/// Standard-normal features, exponential event times with rate
/// `baseline * exp(risk)`, and independent `Uniform(0, c)` censoring with
/// `c` chosen by bisection to hit the requested censored fraction.
pub fn generate_cohort(spec: &CohortSpec) -> Result<SyntheticCohort, SynthError> {
    spec.validate()?;
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
        r.set_stream(k);
        r
    };
    let mut feat_rng = stream(0);
    let mut time_rng = stream(1);
    let mut cens_rng = stream(2);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let vol = LogNormal::new(spec.log_volume_mean, spec.log_volume_sd).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    let mut bags = Vec::with_capacity(spec.n);
    let mut risks = Vec::with_capacity(spec.n);
    let mut times = Vec::with_capacity(spec.n);
    for p in 0..spec.n {
        let t = feat_rng.random_range(spec.min_tumors..=spec.max_tumors);
        let features: Vec<Vec<f64>> =
            (0..t).map(|_| (0..spec.feature_dim).map(|_| normal.sample(&mut feat_rng)).collect()).collect();
        let volumes: Vec<f64> = (0..t).map(|_| vol.sample(&mut feat_rng)).collect();
        let diameters = volumes.iter().map(|v| (6.0 * v / std::f64::consts::PI).cbrt()).collect();
        let risk = features
            .iter()
            .map(|x| x.iter().zip(&spec.risk_weights).map(|(a, w)| a * w).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let rate = spec.baseline_hazard * risk.exp();
        times.push(Exp::new(rate).map_err(|e| SynthError::InvalidSpec(e.to_string()))?.sample(&mut time_rng));
        risks.push(risk);
        bags.push(TumorFeatureBag { patient_id: format!("P{p:04}"), phase: spec.phase, features, volumes, diameters });
    }

    let u: Vec<f64> = (0..spec.n).map(|_| cens_rng.random::<f64>()).collect();
    let cmax = if spec.censoring_fraction == 0.0 {
        f64::INFINITY
    } else {
        let target = spec.censoring_fraction * spec.n as f64;
        let mut lo = 0.0f64;
        let mut hi = times.iter().copied().fold(0.0, f64::max) * 2.0 + 1.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            // censored count falls as the bound grows
            if (censored_count(&times, &u, mid) as f64) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let below = censored_count(&times, &u, lo) as f64;
        let above = censored_count(&times, &u, hi) as f64;
        if (below - target).abs() < (above - target).abs() {
            lo
        } else {
            hi
        }
    };
    let labels = times
        .iter()
        .zip(&u)
        .map(|(&t, &v)| {
            let c = v * cmax;
            if c < t {
                SurvivalLabel::new(c.max(f64::MIN_POSITIVE), false)
            } else {
                SurvivalLabel::new(t, true)
            }
            .expect("positive time")
        })
        .collect();
    Ok(SyntheticCohort { bags, labels, true_risks: risks, censoring_max: cmax })
}

/// Writes `patients.csv` (id, time, event, true_risk) and `tumors.csv`
/// (id, tumor, volume, diameter, f0..fd) into `dir`.
pub fn write_cohort_csv(cohort: &SyntheticCohort, dir: &std::path::Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("patients.csv"))?;
    w.write_record(["id", "time", "event", "true_risk"])?;
    for ((b, l), r) in cohort.bags.iter().zip(&cohort.labels).zip(&cohort.true_risks) {
        w.write_record([b.patient_id.clone(), l.time.to_string(), u8::from(l.event).to_string(), r.to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("tumors.csv"))?;
    let d = cohort.bags.first().and_then(|b| b.features.first()).map_or(0, Vec::len);
    let mut header = vec!["id".to_string(), "tumor".into(), "volume".into(), "diameter".into()];
    header.extend((0..d).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for b in &cohort.bags {
        for (t, x) in b.features.iter().enumerate() {
            let mut row = vec![b.patient_id.clone(), t.to_string(), b.volumes[t].to_string()];
            row.push(b.diameters.get(t).map_or(String::new(), f64::to_string));
            row.extend(x.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Streams a phantom to a writer as a short JSON description; handy for
/// recording what was simulated next to the image files.
pub fn write_phantom_spec<W: Write>(spec: &PhantomSpec, out: W) -> Result<(), SynthError> {
    serde_json::to_writer_pretty(out, spec).map_err(|e| SynthError::InvalidSpec(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survstats::concordance_index;

    fn c_index(c: &SyntheticCohort) -> f64 {
        let t: Vec<f64> = c.labels.iter().map(|l| l.time).collect();
        let e: Vec<bool> = c.labels.iter().map(|l| l.event).collect();
        concordance_index(&t, &e, &c.true_risks).unwrap()
    }

    #[test]
    fn noiseless_phantom_is_piecewise_constant() {
        let mut spec = liver_phantom([48, 40, 32], [1.5, 1.5, 2.0], 3, 7).unwrap();
        spec.noise_std = 0.0;
        let p = generate_phantom(&spec).unwrap();
        for (v, l) in p.post.data().iter().zip(p.labels.labels()) {
            let expect = match l {
                Label::Background => 30.0,
                Label::Liver => 260.0,
                Label::Spleen => 150.0,
                Label::Tumor => 60.0,
            };
            assert_eq!(*v, expect);
        }
        assert!(p.labels.count(Label::Tumor) > 0 && p.labels.count(Label::Spleen) > 0);
        // liver brightens after contrast
        let idx = p.labels.labels().iter().position(|&l| l == Label::Liver).unwrap();
        assert!(p.post.data()[idx] > p.pre.data()[idx]);
    }

    #[test]
    fn seeded_phantom_is_reproducible() {
        let spec = liver_phantom([40, 32, 24], [1.5, 1.5, 2.0], 2, 3).unwrap();
        let a = generate_phantom(&spec).unwrap();
        assert_eq!(a, generate_phantom(&spec).unwrap());
        let b = generate_phantom(&PhantomSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a.pre, b.pre);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn sphere_volume_matches_analytic() {
        let s = sphere_phantom(48, 20.0, 0.0, 0).unwrap();
        let v = s.truth.volume_mm3();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 8000.0;
        assert!((v - exact).abs() / exact < 0.02, "{v} vs {exact}");
        assert!((exact - 33510.3).abs() < 0.1);
    }

    #[test]
    fn rejects_overlap_and_bounds() {
        let i = PhaseIntensity::same(1.0);
        let base = PhantomSpec {
            dims: [20; 3],
            spacing: [1.0; 3],
            background: PhaseIntensity::same(0.0),
            liver: None,
            spleen: None,
            tumors: vec![Ellipsoid::sphere([8.0; 3], 3.0, i), Ellipsoid::sphere([11.0; 3], 3.0, i)],
            noise_std: 0.0,
            seed: 0,
        };
        assert!(matches!(generate_phantom(&base), Err(SynthError::Overlap(..))));
        let out = PhantomSpec { tumors: vec![Ellipsoid::sphere([2.0; 3], 3.0, i)], ..base.clone() };
        assert!(matches!(generate_phantom(&out), Err(SynthError::OutOfBounds(_))));
        let zero = PhantomSpec { tumors: vec![Ellipsoid::sphere([8.0; 3], 0.0, i)], ..base };
        assert!(matches!(generate_phantom(&zero), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn null_cohort_is_uninformative() {
        let mut spec = CohortSpec::single_feature(600, 4, 0, 0.0, 11);
        spec.censoring_fraction = 0.3;
        let c = generate_cohort(&spec).unwrap();
        assert!((c_index(&c) - 0.5).abs() < 0.05);
        assert!((c.censored_fraction() - 0.3).abs() <= 0.05);
    }

    #[test]
    fn strong_risk_is_recoverable() {
        let c = generate_cohort(&CohortSpec::single_feature(300, 6, 0, 3.0, 12)).unwrap();
        assert!(c_index(&c) >= 0.8, "{}", c_index(&c));
        assert_eq!(c, generate_cohort(&CohortSpec::single_feature(300, 6, 0, 3.0, 12)).unwrap());
        assert_ne!(c, generate_cohort(&CohortSpec::single_feature(300, 6, 0, 3.0, 13)).unwrap());
        assert!(c.bags.iter().all(|b| (1..=6).contains(&b.len()) && b.volumes.len() == b.len()));
    }

    #[test]
    fn censoring_calibration_holds_across_targets() {
        for (k, f) in [0.0, 0.1, 0.2, 0.5, 0.8].into_iter().enumerate() {
            let mut spec = CohortSpec::single_feature(200, 3, 1, 1.0, 20 + k as u64);
            spec.censoring_fraction = f;
            let c = generate_cohort(&spec).unwrap();
            assert!((c.censored_fraction() - f).abs() <= 0.05, "target {f} got {}", c.censored_fraction());
        }
    }

    #[test]
    fn csv_export() {
        let c = generate_cohort(&CohortSpec::single_feature(5, 2, 0, 1.0, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_cohort_csv(&c, dir.path()).unwrap();
        let p = std::fs::read_to_string(dir.path().join("patients.csv")).unwrap();
        assert_eq!(p.lines().count(), 6);
        let t = std::fs::read_to_string(dir.path().join("tumors.csv")).unwrap();
        assert!(t.starts_with("id,tumor,volume,diameter,f0,f1\n"));
        assert_eq!(t.lines().count(), 1 + c.bags.iter().map(|b| b.len()).sum::<usize>());
    }
}
