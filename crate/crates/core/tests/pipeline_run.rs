use crlm_core::evalkit::dice;
use crlm_core::pipeline::*;
use crlm_core::survaminn::TrainConfig;
use crlm_core::volgrid::{load_mask, Label};

fn small_study(dir: &std::path::Path) -> RunConfig {
    let spec = StudySpec { patients: 12, dims: [40, 40, 40], spacing: [2.5; 3], seed: 5, ..Default::default() };
    let mut cfg = simulate_study(&spec, dir).unwrap();
    cfg.train = TrainConfig { epochs: 40, ..TrainConfig::default() };
    cfg.cv = CvPlan { folds: 3, repeats: 1 };
    cfg
}

#[test]
fn synthetic_end_to_end_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_study(dir.path());
    cfg.output_root = dir.path().join("run1");
    let m1 = run_end_to_end(&cfg).unwrap();
    for s in [Stage::Segment, Stage::Postprocess, Stage::Features, Stage::Train, Stage::Stats] {
        assert!(m1.stage(s).is_some(), "missing stage {s}");
    }
    assert!(m1.failed_stage.is_none());
    for rel in ["features.csv", "cv_results.csv", "oof_risks.csv", "stats.json", "models/post.json"] {
        assert!(m1.artifact(rel).is_some(), "missing artifact {rel}");
    }
    let on_disk: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(cfg.output_root.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk, m1);

    cfg.output_root = dir.path().join("run2");
    let m2 = run_end_to_end(&cfg).unwrap();
    assert_eq!(m1, m2);
}

#[test]
fn completed_liver_matches_phantom() {
    let dir = tempfile::tempdir().unwrap();
    let spec = StudySpec { patients: 4, partial_fraction: 0.5, seed: 11, ..Default::default() };
    let cfg = simulate_study(&spec, dir.path()).unwrap();
    assert_eq!(cfg.prompts.len(), 4);
    let runner_seg = crlm_core::promptseg::segmenter_by_name(&cfg.segmenter).unwrap();
    let runner = samonai_runner(runner_seg.as_ref(), &cfg.samonai);
    for case in discover_cases(dir.path()).unwrap().into_iter().filter(|c| cfg.prompts.iter().any(|p| p.case == c.case_id)) {
        let volume = crlm_core::volgrid::load_volume(&case.image).unwrap();
        let manual = load_mask(case.label.as_ref().unwrap()).unwrap();
        let plan = LabelCompletionPlan { cases: vec![CasePlan::infer(&case.case_id, &manual, &cfg.prompts)] };
        let input = [CaseInput { case_id: case.case_id.clone(), volume, manual: manual.clone() }];
        let rep = complete_labels(&input, &plan, &runner);
        assert!(rep.failures.is_empty(), "{:?}", rep.failures);
        let out = &rep.completed[0].mask;
        // manual voxels untouched
        for (a, b) in manual.labels().iter().zip(out.labels()) {
            if *a == Label::Tumor {
                assert_eq!(b, a);
            }
        }
        // analytic liver from the phantom description
        let pspec: crlm_core::synthgen::PhantomSpec = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("phantoms").join(format!("{}.json", case.patient_id))).unwrap(),
        )
        .unwrap();
        let truth = crlm_core::synthgen::generate_phantom(&pspec).unwrap().labels;
        let d = dice(&out.binary(Label::Liver), &truth.binary(Label::Liver)).unwrap();
        assert!(d >= 0.9, "{}: liver dice {d}", case.case_id);
    }
}

#[test]
fn missing_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { data_root: dir.path().join("absent"), output_root: dir.path().join("out"), ..Default::default() };
    assert!(matches!(run_end_to_end(&cfg), Err(PipelineError::Config(_))));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn stage_failure_carries_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_study(dir.path());
    // every patient survives but no survival labels match: training cannot start
    std::fs::write(dir.path().join("patients.csv"), "id,time,event\nnobody,1,1\n").unwrap();
    cfg.output_root = dir.path().join("out");
    match run_end_to_end(&cfg) {
        Err(PipelineError::Stage { stage, manifest, .. }) => {
            assert_eq!(stage, Stage::Train);
            assert_eq!(manifest.failed_stage, Some(Stage::Train));
            assert!(manifest.stage(Stage::Features).is_some());
            assert!(cfg.output_root.join("manifest.json").exists());
        }
        other => panic!("expected a stage error, got {other:?}"),
    }
}
