use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PipelineError, SeedPrompt};
use crate::promptseg::Segmenter2D;
use crate::samonai::{samonai_segment, PropagationConfig};
use crate::volgrid::{BinaryMask, Label, Mask3D, SliceAddress, Volume3D};

/// Foreground structures in merge precedence order.
pub const STRUCTURES: [Label; 3] = [Label::Tumor, Label::Liver, Label::Spleen];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Manual,
    Pseudo,
}

/// Provenance of every structure of one case, plus the prompts for the
/// pseudo-labelled ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePlan {
    pub case_id: String,
    pub provenance: BTreeMap<Label, Provenance>,
    pub prompts: Vec<SeedPrompt>,
}

impl CasePlan {
    /// Structures present in `manual` are manual; the rest are pseudo when
    /// a prompt targets them and otherwise manual (annotated as absent).
    pub fn infer(case_id: &str, manual: &Mask3D, prompts: &[SeedPrompt]) -> Self {
        let prompts: Vec<SeedPrompt> = prompts.iter().filter(|p| p.case == case_id).cloned().collect();
        let provenance = STRUCTURES
            .iter()
            .map(|&s| {
                let pseudo = manual.count(s) == 0 && prompts.iter().any(|p| p.structure == s);
                (s, if pseudo { Provenance::Pseudo } else { Provenance::Manual })
            })
            .collect();
        let mut plan = Self { case_id: case_id.to_string(), provenance, prompts };
        plan.prompts.retain(|p| plan.provenance.get(&p.structure) == Some(&Provenance::Pseudo));
        plan
    }

    pub fn pseudo(&self) -> impl Iterator<Item = Label> + '_ {
        self.provenance.iter().filter(|(_, p)| **p == Provenance::Pseudo).map(|(s, _)| *s)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for s in STRUCTURES {
            if !self.provenance.contains_key(&s) {
                return Err(PipelineError::Input(format!("case {}: no provenance for {}", self.case_id, s.name())));
            }
        }
        if self.provenance.contains_key(&Label::Background) {
            return Err(PipelineError::Input(format!("case {}: background has no provenance", self.case_id)));
        }
        for s in self.pseudo() {
            if !self.prompts.iter().any(|p| p.structure == s) {
                return Err(PipelineError::Input(format!("case {}: pseudo {} has no seed prompt", self.case_id, s.name())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelCompletionPlan {
    pub cases: Vec<CasePlan>,
}

impl LabelCompletionPlan {
    pub fn get(&self, case_id: &str) -> Option<&CasePlan> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }
}

#[derive(Debug, Clone)]
pub struct CaseInput {
    pub case_id: String,
    pub volume: Volume3D,
    /// Manual annotation; only structures marked manual are trusted.
    pub manual: Mask3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletedCase {
    pub case_id: String,
    pub mask: Mask3D,
    pub provenance: BTreeMap<Label, Provenance>,
}

#[derive(Debug, Clone, Default)]
pub struct CompletionReport {
    pub completed: Vec<CompletedCase>,
    /// `(case id, reason)` of skipped cases.
    pub failures: Vec<(String, String)>,
}

/// Merges manual and pseudo structure masks. Voxels carrying a manual
/// structure keep it; every other voxel takes the first pseudo structure
/// covering it in the order tumor, liver, spleen.
pub fn merge_structures(
    manual: &Mask3D,
    provenance: &BTreeMap<Label, Provenance>,
    pseudo: &BTreeMap<Label, BinaryMask>,
) -> Result<Mask3D, PipelineError> {
    for m in pseudo.values() {
        manual.geometry().ensure_same(m.geometry())?;
    }
    let is_manual = |l: Label| l != Label::Background && provenance.get(&l) != Some(&Provenance::Pseudo);
    let labels = manual
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if is_manual(l) {
                return l;
            }
            STRUCTURES
                .iter()
                .find(|s| pseudo.get(s).is_some_and(|m| m.data()[i]))
                .copied()
                .unwrap_or(Label::Background)
        })
        .collect();
    Ok(Mask3D::new(*manual.geometry(), labels)?)
}

/// Default runner: one full propagation per prompt.
pub fn samonai_runner<'a>(
    segmenter: &'a dyn Segmenter2D,
    cfg: &'a PropagationConfig,
) -> impl Fn(&Volume3D, &SeedPrompt) -> Result<BinaryMask, PipelineError> + Sync + 'a {
    move |v, p| Ok(samonai_segment(v, SliceAddress::new(p.view, p.index), &p.points, segmenter, cfg)?.mask)
}

/// Fills the pseudo-labelled structures of each case with the runner's
/// output. A failing case is recorded and skipped.
pub fn complete_labels<R>(cases: &[CaseInput], plan: &LabelCompletionPlan, runner: R) -> CompletionReport
where
    R: Fn(&Volume3D, &SeedPrompt) -> Result<BinaryMask, PipelineError>,
{
    let mut report = CompletionReport::default();
    for case in cases {
        let default_plan;
        let cp = match plan.get(&case.case_id) {
            Some(p) => p,
            None => {
                default_plan = CasePlan::infer(&case.case_id, &case.manual, &[]);
                &default_plan
            }
        };
        let result = cp.validate().and_then(|_| {
            let mut pseudo = BTreeMap::new();
            for s in cp.pseudo() {
                let mut acc: Option<BinaryMask> = None;
                for p in cp.prompts.iter().filter(|p| p.structure == s) {
                    let m = runner(&case.volume, p)?;
                    acc = Some(match acc {
                        None => m,
                        Some(a) => {
                            let data = a.data().iter().zip(m.data()).map(|(x, y)| *x || *y).collect();
                            BinaryMask::new(*a.geometry(), data)?
                        }
                    });
                }
                pseudo.insert(s, acc.expect("validated plan has a prompt"));
            }
            merge_structures(&case.manual, &cp.provenance, &pseudo)
        });
        match result {
            Ok(mask) => report.completed.push(CompletedCase {
                case_id: case.case_id.clone(),
                mask,
                provenance: cp.provenance.clone(),
            }),
            Err(e) => report.failures.push((case.case_id.clone(), e.to_string())),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptseg::PromptPoint;
    use crate::volgrid::{Geometry, View};

    fn geom() -> Geometry {
        Geometry::unit([6, 6, 1]).unwrap()
    }

    fn prompt(case: &str, structure: Label) -> SeedPrompt {
        SeedPrompt { case: case.into(), structure, view: View::Axial, index: 0, points: vec![PromptPoint::positive(2, 2)] }
    }

    #[test]
    fn manual_tumor_beats_pseudo_liver() {
        let g = geom();
        let mut manual = Mask3D::empty(g);
        manual.labels_mut()[g.index(2, 2, 0)] = Label::Tumor;
        let case = CaseInput { case_id: "c".into(), volume: Volume3D::filled(g, 0.0), manual: manual.clone() };
        let plan = LabelCompletionPlan { cases: vec![CasePlan::infer("c", &manual, &[prompt("c", Label::Liver)])] };
        assert_eq!(plan.cases[0].provenance[&Label::Liver], Provenance::Pseudo);
        assert_eq!(plan.cases[0].provenance[&Label::Tumor], Provenance::Manual);
        let rep = complete_labels(&[case], &plan, |_, _| Ok(BinaryMask::from_fn(g, |x, _, _| x < 4)));
        let out = &rep.completed[0].mask;
        assert_eq!(out.get(2, 2, 0), Label::Tumor);
        assert_eq!(out.get(1, 1, 0), Label::Liver);
        assert_eq!(out.get(5, 1, 0), Label::Background);
    }

    #[test]
    fn all_manual_passthrough() {
        let g = geom();
        let codes: Vec<u8> = (0..36).map(|i| (i % 4) as u8).collect();
        let manual = Mask3D::from_codes(g, &codes).unwrap();
        let case = CaseInput { case_id: "m".into(), volume: Volume3D::filled(g, 0.0), manual: manual.clone() };
        let rep = complete_labels(&[case], &LabelCompletionPlan::default(), |_, _| unreachable!());
        assert_eq!(rep.completed[0].mask, manual);
    }

    #[test]
    fn failing_case_is_skipped() {
        let g = geom();
        let cases: Vec<CaseInput> = ["a", "b"]
            .iter()
            .map(|id| CaseInput { case_id: id.to_string(), volume: Volume3D::filled(g, 0.0), manual: Mask3D::empty(g) })
            .collect();
        let prompts = [prompt("a", Label::Spleen), prompt("b", Label::Spleen)];
        let plan = LabelCompletionPlan { cases: cases.iter().map(|c| CasePlan::infer(&c.case_id, &c.manual, &prompts)).collect() };
        let rep = complete_labels(&cases, &plan, |v, p| {
            if p.case == "a" {
                Err(PipelineError::Input("boom".into()))
            } else {
                Ok(BinaryMask::from_fn(*v.geometry(), |_, y, _| y == 0))
            }
        });
        assert_eq!(rep.failures.len(), 1);
        assert_eq!(rep.failures[0].0, "a");
        assert_eq!(rep.completed[0].case_id, "b");
        assert_eq!(rep.completed[0].mask.count(Label::Spleen), 6);
    }

    #[test]
    fn pseudo_without_prompt_is_invalid() {
        let mut plan = CasePlan::infer("x", &Mask3D::empty(geom()), &[]);
        plan.provenance.insert(Label::Liver, Provenance::Pseudo);
        assert!(plan.validate().is_err());
    }
}
