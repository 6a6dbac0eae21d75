use planescale::config::{RunConfig, SegmentationMethod};
use planescale::evaluate::{evaluate_depth, Alignment};
use planescale::init::InitSource;
use planescale::io::DenseFlow;
use planescale::pipeline::{reconstruct, PipelineError};
use planescale::synth::{gen_scene, MotionFamily, SceneSpec, SyntheticScene};

fn scene(family: MotionFamily, seed: u64) -> SyntheticScene {
    gen_scene(&SceneSpec {
        family,
        seed,
        ..SceneSpec::default()
    })
    .unwrap()
}

#[test]
fn rigid_scene_is_reconstructed() {
    let s = scene(MotionFamily::Rigid, 2);
    let rec = reconstruct(&s.ref_image, &s.flow, &s.intrinsics, None, &RunConfig::default()).unwrap();
    let m = evaluate_depth(&rec.depth1, &s.depth1, None, Alignment::Median).unwrap();
    assert!(m.mre < 1e-3, "MRE {}", m.mre);
    let m2 = evaluate_depth(&rec.depth2, &s.depth2, None, Alignment::Median).unwrap();
    assert!(m2.mre < 1e-3, "frame-2 MRE {}", m2.mre);
    assert!(rec.init.sources.iter().all(|s| *s == InitSource::Homography));
    let sum: f64 = rec.state.lambda.iter().sum();
    assert!((sum - 1.0).abs() < 1e-9);
}

#[test]
fn articulated_scene_with_true_labels() {
    let s = scene(MotionFamily::Articulated, 0);
    let rec = reconstruct(&s.ref_image, &s.flow, &s.intrinsics, Some(&s.labels), &RunConfig::default()).unwrap();
    assert_eq!(rec.problem.len(), s.truth.patches.len());
    let m = evaluate_depth(&rec.depth1, &s.depth1, None, Alignment::Median).unwrap();
    assert!(m.mre < 1e-2, "MRE {}", m.mre);
}

#[test]
fn articulated_scene_on_a_grid() {
    let s = scene(MotionFamily::Articulated, 1);
    let mut cfg = RunConfig::default();
    cfg.segmentation.method = SegmentationMethod::Grid;
    let rec = reconstruct(&s.ref_image, &s.flow, &s.intrinsics, None, &cfg).unwrap();
    let m = evaluate_depth(&rec.depth1, &s.depth1, None, Alignment::Median).unwrap();
    assert!(m.mre < 2e-2, "MRE {}", m.mre);
    assert_eq!(rec.trace.violations(), 0);
}

#[test]
fn mismatched_flow_is_an_input_error() {
    let s = scene(MotionFamily::Rigid, 0);
    let flow = DenseFlow::zeros(s.flow.width - 1, s.flow.height);
    let err = reconstruct(&s.ref_image, &flow, &s.intrinsics, None, &RunConfig::default()).unwrap_err();
    assert!(matches!(err, PipelineError::DimensionMismatch { what: "flow", .. }), "{err}");
    assert!(err.is_input_error());
}

#[test]
fn short_label_map_is_an_input_error() {
    let s = scene(MotionFamily::Rigid, 0);
    let labels = vec![0u32; 10];
    let err = reconstruct(&s.ref_image, &s.flow, &s.intrinsics, Some(&labels), &RunConfig::default()).unwrap_err();
    assert!(err.is_input_error(), "{err}");
}

#[test]
fn zero_flow_has_no_parallax() {
    let s = scene(MotionFamily::Rigid, 0);
    let flow = DenseFlow::zeros(s.flow.width, s.flow.height);
    let err = reconstruct(&s.ref_image, &flow, &s.intrinsics, None, &RunConfig::default()).unwrap_err();
    assert!(!err.is_input_error(), "{err}");
}

#[test]
fn invalid_config_is_rejected() {
    let s = scene(MotionFamily::Rigid, 0);
    let mut cfg = RunConfig::default();
    cfg.segmentation.superpixels = 0;
    let err = reconstruct(&s.ref_image, &s.flow, &s.intrinsics, None, &cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)));
}

#[test]
fn same_seed_same_result() {
    let s = scene(MotionFamily::Independent, 3);
    let cfg = RunConfig { seed: 9, ..RunConfig::default() };
    let a = reconstruct(&s.ref_image, &s.flow, &s.intrinsics, None, &cfg).unwrap();
    let b = reconstruct(&s.ref_image, &s.flow, &s.intrinsics, None, &cfg).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.depth1, b.depth1);
}
