use ccd_core::config::{PipelineConfig, VlmMode};
use ccd_core::decision::Stage;
use ccd_core::model::{ComplicationKind, PhaseAnnotation, PhaseName};
use ccd_core::phantom::{synth_bundle, PhantomSpec, TruthInterval};
use ccd_core::pipeline::run_video;

fn oracle_config(out: &std::path::Path) -> PipelineConfig {
    let mut config = PipelineConfig::default();
    config.vlm.mode = VlmMode::Oracle;
    config.output = out.to_path_buf();
    config
}

fn phase(name: PhaseName, start_frame: usize, end_frame: usize) -> PhaseAnnotation {
    PhaseAnnotation {
        phase_name: name,
        start_frame,
        end_frame,
    }
}

#[test]
fn vitreous_wedge_is_the_only_positive() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = PhantomSpec {
        width: 480,
        height: 270,
        iris_radius: 110.0,
        pupil_radius: 45.0,
        phases: vec![phase(PhaseName::CorticalWash, 0, 100)],
        anomalies: vec![TruthInterval::new(ComplicationKind::VitreousLoss, 40, 70, 1.3)],
        ..PhantomSpec::new("wedge", 100)
    };
    let bundle = tmp.path().join("wedge");
    synth_bundle(&spec, &bundle).unwrap();
    let run = run_video(&bundle, &oracle_config(&tmp.path().join("out"))).unwrap();
    let labels: Vec<(ComplicationKind, bool)> = run.decisions.iter().map(|d| (d.kind, d.label)).collect();
    assert_eq!(
        labels,
        [
            (ComplicationKind::IrisProlapse, false),
            (ComplicationKind::Pcr, false),
            (ComplicationKind::VitreousLoss, true),
        ]
    );
    let vl = &run.decisions[2];
    assert_eq!(vl.stage, Stage::Adjudicated);
    assert!(vl.basis.iter().all(|v| v.segment.start_frame < 70 && v.segment.end_frame > 40));
}

#[test]
fn iris_blob_outside_wash_is_still_found() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = PhantomSpec {
        width: 480,
        height: 270,
        iris_radius: 110.0,
        pupil_radius: 45.0,
        phases: vec![
            phase(PhaseName::LensNucleusRemoval, 0, 30),
            phase(PhaseName::CorticalWash, 30, 60),
        ],
        anomalies: vec![TruthInterval::new(ComplicationKind::IrisProlapse, 5, 25, 300.0)],
        ..PhantomSpec::new("blob", 60)
    };
    let bundle = tmp.path().join("blob");
    synth_bundle(&spec, &bundle).unwrap();
    let run = run_video(&bundle, &oracle_config(&tmp.path().join("out"))).unwrap();
    let labels: Vec<bool> = run.decisions.iter().map(|d| d.label).collect();
    assert_eq!(labels, [true, false, false]);
    assert_eq!(run.decisions[1].stage, Stage::NoSegments);
}
