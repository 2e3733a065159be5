use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::labels::{complete_labels, samonai_runner, CaseInput, CasePlan, LabelCompletionPlan};
use super::{create_dir, io_err, sha256_hex, PipelineError, RunConfig};
use crate::evalkit::{postprocess, PostprocessConfig};
use crate::promptseg::segmenter_by_name;
use crate::radiomics::{
    exclude_small, extract_all, tumor_instances, write_feature_csv, FeatureRow, NormalizationParams, TumorInstance,
};
use crate::survaminn::{
    late_fuse, save_checkpoint, train, PoolingKind, SurvivalDataset, TrainConfig, TumorFeatureBag,
};
use crate::survstats::{
    bootstrap_hr, concordance_index, coxph_fit, kaplan_meier, logrank_test, median_dichotomize,
    randomization_test, repeated_kfold, wilcoxon_rank_sum, CohortTable, SplitPlan, StatsError, SurvivalLabel,
};
use crate::volgrid::{load_mask, load_volume, save_mask, BinaryMask, Label, Mask3D, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Segment,
    Postprocess,
    Features,
    Train,
    Stats,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Segment => "segment",
            Stage::Postprocess => "postprocess",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Stats => "stats",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output root.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub artifacts: Vec<Artifact>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub stage: Stage,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub excluded: Vec<Exclusion>,
    pub failed_stage: Option<Stage>,
}

impl RunManifest {
    pub fn stage(&self, s: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == s)
    }

    pub fn artifact(&self, path: &str) -> Option<&Artifact> {
        self.stages.iter().flat_map(|s| &s.artifacts).find(|a| a.path == path)
    }
}

/// One image of the data root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseFile {
    pub case_id: String,
    pub patient_id: String,
    pub phase: Phase,
    pub image: PathBuf,
    pub label: Option<PathBuf>,
}

const IMAGE_SUFFIXES: [&str; 3] = [".nii.gz", ".nii", ".json"];

fn strip_image_suffix(name: &str) -> Option<&str> {
    IMAGE_SUFFIXES.iter().find_map(|s| name.strip_suffix(s))
}

/// Images named `<patient>_<phase>` under `<root>/images`, sorted by case id,
/// with their label files under `<root>/labels` when present.
pub fn discover_cases(root: &Path) -> Result<Vec<CaseFile>, PipelineError> {
    let dir = root.join("images");
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
        let path = entry.map_err(io_err(&dir))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(case_id) = strip_image_suffix(name) else { continue };
        let (pid, phase) = case_id
            .rsplit_once('_')
            .ok_or_else(|| PipelineError::Input(format!("image {name} is not named <patient>_<phase>")))?;
        let phase: Phase = phase.parse().map_err(PipelineError::Input)?;
        let label = IMAGE_SUFFIXES.iter().map(|s| root.join("labels").join(format!("{case_id}{s}"))).find(|p| p.exists());
        out.push(CaseFile { case_id: case_id.to_string(), patient_id: pid.to_string(), phase, image: path, label });
    }
    out.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    if out.windows(2).any(|w| w[0].case_id == w[1].case_id) {
        return Err(PipelineError::Input("duplicate case id in images/".into()));
    }
    Ok(out)
}

/// `id` (or `patient_id`), `time` and `event` (0/1 or true/false) columns.
pub fn read_patients(path: &Path) -> Result<BTreeMap<String, SurvivalLabel>, PipelineError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.contains(&h))
            .ok_or_else(|| PipelineError::Input(format!("{} lacks a {} column", path.display(), names[0])))
    };
    let (ci, ct, ce) = (col(&["id", "patient_id"])?, col(&["time"])?, col(&["event"])?);
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let time: f64 = rec[ct].trim().parse().map_err(|_| PipelineError::Input(format!("bad time `{}`", &rec[ct])))?;
        let event = match rec[ce].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(PipelineError::Input(format!("bad event `{other}`"))),
        };
        if out.insert(rec[ci].to_string(), SurvivalLabel::new(time, event)?).is_some() {
            return Err(PipelineError::Input(format!("duplicate patient {}", &rec[ci])));
        }
    }
    Ok(out)
}

/// Cross-validated score of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub pooling: PoolingKind,
    pub repeat: usize,
    pub fold: usize,
    pub n_test: usize,
    /// `None` when the test fold has no comparable pair.
    pub c_index: Option<f64>,
}

/// One patient with a bag per available phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientBags {
    pub id: String,
    pub label: SurvivalLabel,
    pub bags: Vec<TumorFeatureBag>,
}

fn phase_offset(p: Phase) -> u64 {
    match p {
        Phase::Post => 0,
        Phase::Pre => 1_000_003,
    }
}

fn normalized(bags: &[&TumorFeatureBag], params: Option<&NormalizationParams>) -> Result<Vec<TumorFeatureBag>, PipelineError> {
    bags.iter()
        .map(|b| {
            let mut b = (*b).clone();
            if let Some(p) = params {
                b.features = b.features.iter().map(|x| p.apply(x)).collect::<Result<_, _>>()?;
            }
            Ok(b)
        })
        .collect()
}

/// Trains one model per phase on `train_idx`, scores `score_idx` and fuses
/// the phases. With `normalize`, features are log/z-normalized with
/// statistics of the training tumors of each phase.
fn fit_and_score(
    patients: &[PatientBags],
    train_idx: &[usize],
    score_idx: &[usize],
    cfg: &TrainConfig,
    normalize: bool,
    seed: u64,
) -> Result<Vec<f64>, PipelineError> {
    let mut per_phase: Vec<Vec<Option<f64>>> = Vec::new();
    for phase in Phase::ALL {
        let bag_of = |i: usize| patients[i].bags.iter().find(|b| b.phase == phase);
        let tr: Vec<usize> = train_idx.iter().copied().filter(|&i| bag_of(i).is_some()).collect();
        if tr.is_empty() {
            continue;
        }
        let tr_bags: Vec<&TumorFeatureBag> = tr.iter().map(|&i| bag_of(i).unwrap()).collect();
        let params = if normalize {
            let rows: Vec<Vec<f64>> = tr_bags.iter().flat_map(|b| b.features.iter().cloned()).collect();
            Some(NormalizationParams::fit(&rows)?)
        } else {
            None
        };
        let data = SurvivalDataset::new(normalized(&tr_bags, params.as_ref())?, tr.iter().map(|&i| patients[i].label).collect())?;
        let model = train(&data, &TrainConfig { seed: seed.wrapping_add(phase_offset(phase)), ..cfg.clone() })?;
        let scores = score_idx
            .iter()
            .map(|&i| match bag_of(i) {
                Some(b) => Ok(Some(model.predict(&normalized(&[b], params.as_ref())?[0])?)),
                None => Ok(None),
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        per_phase.push(scores);
    }
    (0..score_idx.len())
        .map(|k| {
            let mut it = per_phase.iter().map(|s| s[k]);
            let (a, b) = (it.next().flatten(), it.next().flatten());
            Ok(late_fuse(a, b)?)
        })
        .collect()
}

/// Repeated k-fold evaluation of one pooling. Returns the fold records and,
/// per repeat, the out-of-fold risk of every patient.
pub fn cross_validate(
    patients: &[PatientBags],
    plan: &SplitPlan,
    cfg: &TrainConfig,
    normalize: bool,
) -> Result<(Vec<CvRecord>, Vec<Vec<f64>>), PipelineError> {
    let mut records = Vec::new();
    let mut oof = Vec::new();
    for r in 0..plan.repeats() {
        let mut risk = vec![f64::NAN; patients.len()];
        for f in 0..plan.k {
            let (tr, te) = plan.split(r, f);
            let seed = cfg.seed.wrapping_add((r * plan.k + f) as u64);
            let scores = fit_and_score(patients, &tr, &te, cfg, normalize, seed)?;
            for (&i, &s) in te.iter().zip(&scores) {
                risk[i] = s;
            }
            let labels: Vec<SurvivalLabel> = te.iter().map(|&i| patients[i].label).collect();
            let c_index = match concordance_index(
                &labels.iter().map(|l| l.time).collect::<Vec<_>>(),
                &labels.iter().map(|l| l.event).collect::<Vec<_>>(),
                &scores,
            ) {
                Ok(c) => Some(c),
                Err(StatsError::NoPermissiblePairs) => None,
                Err(e) => return Err(e.into()),
            };
            records.push(CvRecord { pooling: cfg.pooling, repeat: r, fold: f, n_test: te.len(), c_index });
        }
        oof.push(risk);
    }
    Ok((records, oof))
}

pub fn mean_c_index(records: &[CvRecord]) -> Option<f64> {
    let v: Vec<f64> = records.iter().filter_map(|r| r.c_index).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    manifest: RunManifest,
}

impl Run<'_> {
    fn record(&self, rel: &str) -> Result<Artifact, PipelineError> {
        let path = self.out.join(rel);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        Ok(Artifact { path: rel.to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> Result<Artifact, PipelineError> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        self.record(rel)
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<Artifact, PipelineError> {
        self.write(rel, serde_json::to_string_pretty(value)?.as_bytes())
    }

    fn exclude(&mut self, id: &str, stage: Stage, reason: String) {
        self.manifest.excluded.push(Exclusion { id: id.to_string(), stage, reason });
    }

    fn save_manifest(&self) -> Result<(), PipelineError> {
        let path = self.out.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest)?).map_err(io_err(&path))
    }

    /// Runs one stage; on failure the partial manifest is written and
    /// attached to the error.
    fn stage<T>(&mut self, stage: Stage, f: impl FnOnce(&mut Self, &mut StageRecord) -> Result<T, PipelineError>) -> Result<T, PipelineError> {
        let mut rec = StageRecord { stage, artifacts: Vec::new(), notes: Vec::new() };
        match f(self, &mut rec) {
            Ok(v) => {
                self.manifest.stages.push(rec);
                Ok(v)
            }
            Err(e) => {
                self.manifest.failed_stage = Some(stage);
                let _ = self.save_manifest();
                Err(PipelineError::Stage { stage, source: Box::new(e), manifest: Box::new(self.manifest.clone()) })
            }
        }
    }
}

struct SegmentedCase {
    file: CaseFile,
    mask: Mask3D,
}

fn segment_stage(run: &mut Run<'_>, rec: &mut StageRecord) -> Result<Vec<SegmentedCase>, PipelineError> {
    let cfg = run.cfg;
    let cases = discover_cases(&cfg.data_root)?;
    if cases.is_empty() {
        return Err(PipelineError::Input(format!("no images under {}", cfg.data_root.join("images").display())));
    }
    let segmenter = segmenter_by_name(&cfg.segmenter)?;
    let runner = samonai_runner(segmenter.as_ref(), &cfg.samonai);
    let mut plans = LabelCompletionPlan::default();
    let mut out = Vec::new();
    for file in cases {
        let volume = load_volume(&file.image)?;
        let manual = match &file.label {
            Some(p) => load_mask(p)?,
            None => Mask3D::empty(*volume.geometry()),
        };
        let plan = CasePlan::infer(&file.case_id, &manual, &cfg.prompts);
        let single = LabelCompletionPlan { cases: vec![plan.clone()] };
        let input = [CaseInput { case_id: file.case_id.clone(), volume, manual }];
        let report = complete_labels(&input, &single, &runner);
        plans.cases.push(plan);
        if let Some((_, reason)) = report.failures.first() {
            run.exclude(&file.case_id, Stage::Segment, reason.clone());
            continue;
        }
        let done = report.completed.into_iter().next().expect("one case in, one case out");
        let rel = format!("masks/{}.nii", file.case_id);
        create_dir(&run.out.join("masks"))?;
        save_mask(run.out.join(&rel), &done.mask)?;
        rec.artifacts.push(run.record(&rel)?);
        out.push(SegmentedCase { file, mask: done.mask });
    }
    rec.artifacts.push(run.write_json("masks/provenance.json", &plans)?);
    rec.notes.push(format!("{} cases segmented", out.len()));
    Ok(out)
}

/// Tumor components failing post-processing are relabelled liver when they
/// sit inside the liver and background otherwise.
/// Liver voxels plus tumor voxels enclosed by liver along at least one axis:
/// walking both ways past any tumor, the first voxel hit is liver.
fn liver_region(mask: &Mask3D) -> Result<BinaryMask, PipelineError> {
    let g = *mask.geometry();
    let [nx, ny, nz] = g.dims;
    let dims = [nx as isize, ny as isize, nz as isize];
    let hits_liver = |mut p: [isize; 3], axis: usize, step: isize| loop {
        p[axis] += step;
        if p[axis] < 0 || p[axis] >= dims[axis] {
            return false;
        }
        match mask.get(p[0] as usize, p[1] as usize, p[2] as usize) {
            Label::Tumor => continue,
            l => return l == Label::Liver,
        }
    };
    let data = (0..g.len())
        .map(|i| match mask.labels()[i] {
            Label::Liver => true,
            Label::Tumor => {
                let [x, y, z] = g.coords(i);
                let p = [x as isize, y as isize, z as isize];
                (0..3).any(|a| hits_liver(p, a, -1) && hits_liver(p, a, 1))
            }
            _ => false,
        })
        .collect();
    Ok(BinaryMask::new(g, data)?)
}

fn postprocess_mask(mask: &Mask3D, cfg: &PostprocessConfig) -> Result<Mask3D, PipelineError> {
    let tumors = mask.binary(Label::Tumor);
    let g = *mask.geometry();
    let liver = liver_region(mask)?;
    let kept = postprocess(&tumors, &liver, cfg)?;
    let intrahepatic = postprocess(&tumors, &liver, &PostprocessConfig { min_volume_mm3: 0.0, ..*cfg })?;
    let labels = mask
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &l)| match l {
            Label::Tumor if !kept.data()[i] => {
                if intrahepatic.data()[i] {
                    Label::Liver
                } else {
                    Label::Background
                }
            }
            other => other,
        })
        .collect();
    Ok(Mask3D::new(g, labels)?)
}

fn postprocess_stage(run: &mut Run<'_>, rec: &mut StageRecord, cases: &mut [SegmentedCase]) -> Result<(), PipelineError> {
    if !run.cfg.features.postprocess {
        rec.notes.push("disabled".into());
        return Ok(());
    }
    create_dir(&run.out.join("postprocessed"))?;
    let mut removed = 0;
    for c in cases.iter_mut() {
        let before = c.mask.count(Label::Tumor);
        c.mask = postprocess_mask(&c.mask, &run.cfg.postprocess)?;
        removed += before - c.mask.count(Label::Tumor);
        let rel = format!("postprocessed/{}.nii", c.file.case_id);
        save_mask(run.out.join(&rel), &c.mask)?;
        rec.artifacts.push(run.record(&rel)?);
    }
    rec.notes.push(format!("{removed} tumor voxels removed"));
    Ok(())
}

fn features_stage(run: &mut Run<'_>, rec: &mut StageRecord, cases: &[SegmentedCase]) -> Result<Vec<FeatureRow>, PipelineError> {
    let mut instances: Vec<(usize, TumorInstance)> = Vec::new();
    for (k, c) in cases.iter().enumerate() {
        let found = tumor_instances(&c.file.patient_id, c.file.phase, &c.mask.binary(Label::Tumor));
        if found.is_empty() {
            run.exclude(&c.file.case_id, Stage::Features, "no tumor".into());
        }
        instances.extend(found.into_iter().map(|t| (k, t)));
    }
    if run.cfg.features.exclude_small {
        let diameters: Vec<f64> = instances.iter().map(|(_, t)| t.diameter_mm).collect();
        let before = instances.len();
        let kept = exclude_small(instances.iter().map(|(_, t)| t.clone()).collect(), &diameters);
        let keep: std::collections::HashSet<(String, Phase, u32)> =
            kept.into_iter().map(|t| (t.patient_id, t.phase, t.instance_id)).collect();
        instances.retain(|(_, t)| keep.contains(&(t.patient_id.clone(), t.phase, t.instance_id)));
        rec.notes.push(format!("{} small tumors excluded", before - instances.len()));
    }
    let mut rows = Vec::new();
    for (k, c) in cases.iter().enumerate() {
        let mine: Vec<TumorInstance> = instances.iter().filter(|(j, _)| *j == k).map(|(_, t)| t.clone()).collect();
        if mine.is_empty() {
            continue;
        }
        let volume = load_volume(&c.file.image)?;
        for (t, row) in extract_all(|_| Some(&volume), &mine, &run.cfg.radiomics) {
            match row {
                Ok(r) => rows.push(r),
                Err(e) => run.exclude(&format!("{}#{}", c.file.case_id, t.instance_id), Stage::Features, e.to_string()),
            }
        }
    }
    write_feature_csv(&rows, &run.out.join("features.csv"))?;
    rec.artifacts.push(run.record("features.csv")?);
    rec.notes.push(format!("{} tumor feature rows", rows.len()));
    Ok(rows)
}

fn build_patients(run: &mut Run<'_>, rows: &[FeatureRow]) -> Result<Vec<PatientBags>, PipelineError> {
    let labels = read_patients(&run.cfg.data_root.join("patients.csv"))?;
    let mut bags: BTreeMap<(String, Phase), TumorFeatureBag> = BTreeMap::new();
    for r in rows {
        let b = bags.entry((r.patient_id.clone(), r.phase)).or_insert_with(|| TumorFeatureBag {
            patient_id: r.patient_id.clone(),
            phase: r.phase,
            features: Vec::new(),
            volumes: Vec::new(),
            diameters: Vec::new(),
        });
        b.features.push(r.features.clone());
        b.volumes.push(r.volume_mm3);
        b.diameters.push(r.diameter_mm);
    }
    let mut patients: BTreeMap<String, PatientBags> = BTreeMap::new();
    for ((pid, _), bag) in bags {
        match labels.get(&pid) {
            Some(&label) => patients
                .entry(pid.clone())
                .or_insert_with(|| PatientBags { id: pid, label, bags: Vec::new() })
                .bags
                .push(bag),
            None => run.exclude(&pid, Stage::Train, "no survival label".into()),
        }
    }
    for pid in labels.keys().filter(|p| !patients.contains_key(*p)) {
        run.exclude(pid, Stage::Train, "no tumor features".into());
    }
    Ok(patients.into_values().collect())
}

struct CvOutcome {
    patients: Vec<PatientBags>,
    records: Vec<CvRecord>,
    /// Out-of-fold risks of the first repeat under the primary pooling.
    primary_oof: Vec<f64>,
}

fn train_stage(run: &mut Run<'_>, rec: &mut StageRecord, rows: &[FeatureRow]) -> Result<CvOutcome, PipelineError> {
    let cfg = run.cfg;
    let patients = build_patients(run, rows)?;
    if patients.len() < cfg.cv.folds {
        return Err(PipelineError::Input(format!("{} patients for {} folds", patients.len(), cfg.cv.folds)));
    }
    let plan = repeated_kfold(patients.len(), cfg.cv.folds, cfg.cv.repeats, cfg.seed)?;
    let mut records = Vec::new();
    let mut primary_oof = Vec::new();
    for (k, &pooling) in cfg.poolings.iter().enumerate() {
        let tc = TrainConfig { pooling, seed: cfg.seed, ..cfg.train.clone() };
        let (r, oof) = cross_validate(&patients, &plan, &tc, true)?;
        if k == 0 {
            primary_oof = oof.into_iter().next().expect("at least one repeat");
        }
        rec.notes.push(format!(
            "{pooling}: mean test C-index {}",
            mean_c_index(&r).map_or("n/a".into(), |c| format!("{c:.4}"))
        ));
        records.extend(r);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pooling", "repeat", "fold", "n_test", "c_index"])?;
    for r in &records {
        w.write_record([
            r.pooling.name().to_string(),
            r.repeat.to_string(),
            r.fold.to_string(),
            r.n_test.to_string(),
            r.c_index.map_or(String::new(), |c| c.to_string()),
        ])?;
    }
    rec.artifacts.push(run.write("cv_results.csv", &w.into_inner().map_err(|e| PipelineError::Input(e.to_string()))?)?);

    // final models on every patient under the primary pooling
    for phase in Phase::ALL {
        let with: Vec<&PatientBags> = patients.iter().filter(|p| p.bags.iter().any(|b| b.phase == phase)).collect();
        if with.is_empty() {
            continue;
        }
        let bags: Vec<&TumorFeatureBag> = with.iter().map(|p| p.bags.iter().find(|b| b.phase == phase).unwrap()).collect();
        let rows: Vec<Vec<f64>> = bags.iter().flat_map(|b| b.features.iter().cloned()).collect();
        let params = NormalizationParams::fit(&rows)?;
        let data = SurvivalDataset::new(normalized(&bags, Some(&params))?, with.iter().map(|p| p.label).collect())?;
        let tc = TrainConfig { pooling: cfg.poolings[0], seed: cfg.seed.wrapping_add(phase_offset(phase)), ..cfg.train.clone() };
        let model = train(&data, &tc)?;
        let rel = format!("models/{phase}.json");
        create_dir(&run.out.join("models"))?;
        save_checkpoint(&model, &run.out.join(&rel))?;
        rec.artifacts.push(run.record(&rel)?);
        rec.artifacts.push(run.write_json(&format!("models/{phase}_normalization.json"), &params)?);
    }
    Ok(CvOutcome { patients, records, primary_oof })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StatsReport {
    pooling: PoolingKind,
    mean_c_index: BTreeMap<String, Option<f64>>,
    oof_c_index: f64,
    cox: crate::survstats::FitReport,
    bootstrap: Option<crate::survstats::BootstrapReport>,
    logrank: crate::survstats::LogRankResult,
    km_low_risk: crate::survstats::KMCurve,
    km_high_risk: crate::survstats::KMCurve,
    /// Rank-sum tests of the primary pooling's fold C-indices against each
    /// other pooling.
    wilcoxon: BTreeMap<String, crate::survstats::WilcoxonResult>,
    randomization: Option<crate::survstats::RandomizationResult>,
}

fn stats_stage(run: &mut Run<'_>, rec: &mut StageRecord, cv: &CvOutcome) -> Result<(), PipelineError> {
    let cfg = run.cfg;
    let primary = cfg.poolings[0];
    let labels: Vec<SurvivalLabel> = cv.patients.iter().map(|p| p.label).collect();
    let risk = &cv.primary_oof;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "time", "event", "risk"])?;
    for (p, r) in cv.patients.iter().zip(risk) {
        w.write_record([p.id.clone(), p.label.time.to_string(), u8::from(p.label.event).to_string(), r.to_string()])?;
    }
    rec.artifacts.push(run.write("oof_risks.csv", &w.into_inner().map_err(|e| PipelineError::Input(e.to_string()))?)?);

    let times: Vec<f64> = labels.iter().map(|l| l.time).collect();
    let events: Vec<bool> = labels.iter().map(|l| l.event).collect();
    let oof_c_index = concordance_index(&times, &events, risk)?;
    let table = CohortTable::new(
        cv.patients.iter().map(|p| p.id.clone()).collect(),
        vec!["risk".into()],
        vec![risk.clone()],
        labels.clone(),
    )?;
    let cox = coxph_fit(&table, &["risk"])?;
    let bootstrap = match cfg.bootstrap_resamples {
        0 => None,
        b => Some(bootstrap_hr(&table, &["risk"], b, cfg.seed)?),
    };
    let high = median_dichotomize(risk);
    let logrank = logrank_test(&labels, &high)?;
    let pick = |g: bool| -> Vec<SurvivalLabel> { labels.iter().zip(&high).filter(|(_, h)| **h == g).map(|(l, _)| *l).collect() };

    let folds_of = |p: PoolingKind| -> Vec<f64> { cv.records.iter().filter(|r| r.pooling == p).filter_map(|r| r.c_index).collect() };
    let mut wilcoxon = BTreeMap::new();
    for &p in &cfg.poolings[1..] {
        wilcoxon.insert(p.name().to_string(), wilcoxon_rank_sum(&folds_of(primary), &folds_of(p))?);
    }
    let means = cfg
        .poolings
        .iter()
        .map(|&p| (p.name().to_string(), mean_c_index(&cv.records.iter().filter(|r| r.pooling == p).cloned().collect::<Vec<_>>())))
        .collect();

    let randomization = match cfg.randomization_shuffles {
        0 => None,
        n => {
            let plan = repeated_kfold(cv.patients.len(), cfg.cv.folds, cfg.cv.repeats, cfg.seed)?;
            let tc = TrainConfig { pooling: primary, seed: cfg.seed, ..cfg.train.clone() };
            Some(randomization_test(&labels, n, cfg.seed, |shuffled, _| {
                let relabelled: Vec<PatientBags> =
                    cv.patients.iter().zip(shuffled).map(|(p, &label)| PatientBags { label, ..p.clone() }).collect();
                let (r, _) = cross_validate(&relabelled, &plan, &tc, true).map_err(|e| StatsError::Callback(e.to_string()))?;
                mean_c_index(&r).ok_or(StatsError::NoPermissiblePairs)
            })?)
        }
    };

    let report = StatsReport {
        pooling: primary,
        mean_c_index: means,
        oof_c_index,
        cox,
        bootstrap,
        logrank,
        km_low_risk: kaplan_meier(&pick(false)),
        km_high_risk: kaplan_meier(&pick(true)),
        wilcoxon,
        randomization,
    };
    rec.artifacts.push(run.write_json("stats.json", &report)?);

    // plot-ready step data
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "time", "survival", "at_risk", "events"])?;
    for (group, km) in [("low", &report.km_low_risk), ("high", &report.km_high_risk)] {
        for i in 0..km.times.len() {
            w.write_record([
                group.to_string(),
                km.times[i].to_string(),
                km.survival[i].to_string(),
                km.at_risk[i].to_string(),
                km.events[i].to_string(),
            ])?;
        }
    }
    rec.artifacts.push(run.write("km_curves.csv", &w.into_inner().map_err(|e| PipelineError::Input(e.to_string()))?)?);
    Ok(())
}

/// Full batch run: segment (or load) masks, post-process, extract features,
/// cross-validate SurvAMINN and report statistics. Every artifact is listed
/// in `<output_root>/manifest.json` with its SHA-256.
pub fn run_end_to_end(cfg: &RunConfig) -> Result<RunManifest, PipelineError> {
    run_until(cfg, Stage::Stats)
}

/// Runs the batch stages in order and stops after `last`.
pub fn run_until(cfg: &RunConfig, last: Stage) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    cfg.validate_paths()?;
    let out = create_dir(&cfg.output_root)?;
    // where the run is written does not affect its results
    let digest_cfg = RunConfig { output_root: PathBuf::new(), ..cfg.clone() };
    let config_sha256 = sha256_hex(serde_json::to_string(&digest_cfg)?.as_bytes());
    let mut run = Run { cfg, out, manifest: RunManifest { config_sha256, seed: cfg.seed, ..Default::default() } };

    let mut cases = run.stage(Stage::Segment, segment_stage)?;
    if last >= Stage::Postprocess {
        run.stage(Stage::Postprocess, |r, rec| postprocess_stage(r, rec, &mut cases))?;
    }
    if last >= Stage::Features {
        let rows = run.stage(Stage::Features, |r, rec| features_stage(r, rec, &cases))?;
        drop(cases);
        if last >= Stage::Train {
            let cv = run.stage(Stage::Train, |r, rec| train_stage(r, rec, &rows))?;
            if last >= Stage::Stats {
                run.stage(Stage::Stats, |r, rec| stats_stage(r, rec, &cv))?;
            }
        }
    }
    run.save_manifest()?;
    Ok(run.manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Geometry;

    #[test]
    fn postprocess_relabels_removed_tumors() {
        let g = Geometry::unit([20, 10, 10]).unwrap();
        let m = Mask3D::new(
            g,
            (0..g.len())
                .map(|i| {
                    let [x, y, z] = g.coords(i);
                    if (4..6).contains(&x) && (4..6).contains(&y) && (4..6).contains(&z) {
                        Label::Tumor // 8 voxels inside the liver: too small
                    } else if (7..10).contains(&x) && (4..7).contains(&y) && (4..7).contains(&z) {
                        Label::Tumor // 27 voxels inside the liver: kept
                    } else if x >= 17 && y < 2 && z < 2 {
                        Label::Tumor // extra-hepatic
                    } else if x < 12 {
                        Label::Liver
                    } else {
                        Label::Background
                    }
                })
                .collect(),
        )
        .unwrap();
        let cfg = PostprocessConfig { min_volume_mm3: 10.0, min_liver_fraction: 0.5 };
        let out = postprocess_mask(&m, &cfg).unwrap();
        assert_eq!(out.count(Label::Tumor), 27);
        assert_eq!(out.get(4, 4, 4), Label::Liver);
        assert_eq!(out.get(18, 0, 0), Label::Background);
    }

    #[test]
    fn patients_csv_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("patients.csv");
        std::fs::write(&p, "id,time,event,true_risk\nA,3.5,1,0.1\nB,2,0,0\n").unwrap();
        let m = read_patients(&p).unwrap();
        assert_eq!(m["A"], SurvivalLabel { time: 3.5, event: true });
        assert!(!m["B"].event);
        std::fs::write(&p, "id,time,event\nA,3.5,1\nA,2,0\n").unwrap();
        assert!(read_patients(&p).is_err());
        std::fs::write(&p, "id,time\nA,3.5\n").unwrap();
        assert!(read_patients(&p).is_err());
    }

    #[test]
    fn case_discovery() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        std::fs::create_dir_all(dir.path().join("labels")).unwrap();
        for f in ["images/P1_post.nii", "images/P1_pre.nii.gz", "images/notes.txt", "labels/P1_post.nii"] {
            std::fs::write(dir.path().join(f), b"").unwrap();
        }
        let cases = discover_cases(dir.path()).unwrap();
        assert_eq!(cases.len(), 2);
        assert_eq!((cases[0].case_id.as_str(), cases[0].phase), ("P1_post", Phase::Post));
        assert!(cases[0].label.is_some() && cases[1].label.is_none());
        std::fs::write(dir.path().join("images/bad.nii"), b"").unwrap();
        assert!(discover_cases(dir.path()).is_err());
    }
}
