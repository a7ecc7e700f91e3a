use occfield::inference::{evaluate_labels, occupancy, segment, SimilarityMode, DEFAULT_TAU};
use occfield::manifest::Manifest;
use occfield::reducer::{reduce_feature_map, train_reducer, ReducerTrainConfig};
use occfield::scene_synth::{build_scene, GroundTruthBundle, SceneSpec};
use occfield::trainer::{fit_scene, fit_scene_from, initial_grid, FitConfig, TargetMaps};

fn small_spec() -> SceneSpec {
    let mut s = SceneSpec::default_scene();
    s.orbit.count = 4;
    s.orbit.image_width = 16;
    s.orbit.image_height = 12;
    s.render.n_samples = 48;
    s
}

fn quick_fit() -> FitConfig {
    FitConfig { n_rays_per_step: 256, n_samples_per_ray: 48, steps: 60, ..Default::default() }
}

#[test]
fn bundle_round_trips_through_disk() {
    let b = build_scene(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = b.write(dir.path()).unwrap();
    Manifest::load(dir.path()).unwrap().verify(dir.path()).unwrap();
    assert_eq!(manifest.seed, b.spec.seed);
    let back = GroundTruthBundle::read(dir.path()).unwrap();
    assert_eq!(back.labels, b.labels);
    assert_eq!(back.track, b.track);
    assert_eq!(back.vocab, b.vocab);
    assert_eq!((back.near, back.far), (b.near, b.far));
    assert_eq!(back.features.len(), b.features.len());
}

#[test]
fn ground_truth_grid_segments_to_its_labels() {
    let b = build_scene(&small_spec()).unwrap();
    let pred = segment(&b.grid, &b.vocab, DEFAULT_TAU, SimilarityMode::Cosine).unwrap();
    let r = evaluate_labels(&pred, &b.labels).unwrap();
    assert_eq!((r.iou, r.miou, r.accuracy), (1.0, Some(1.0), Some(1.0)));
}

#[test]
fn fitting_lowers_the_loss_and_resumes_identically() {
    let b = build_scene(&small_spec()).unwrap();
    let cfg = quick_fit();
    let init = initial_grid(b.spec.geometry.clone(), b.spec.feature_dim, &cfg).unwrap();
    let full = fit_scene(&b.track, &b.features, &cfg, init.clone()).unwrap();
    assert!(full.final_loss().unwrap() < 0.5 * full.initial_loss().unwrap());

    // two halves give the same grid as one run
    let half = FitConfig { steps: cfg.steps / 2, ..cfg.clone() };
    let first = fit_scene(&b.track, &b.features, &half, init).unwrap();
    let second = fit_scene_from(&b.track, &b.features, &half, first.grid, Some(first.optimizer)).unwrap();
    assert_eq!(second.grid, full.grid);
    assert_eq!([first.losses, second.losses].concat(), full.losses);
}

#[test]
fn occupancy_from_segment_matches_thresholded_density() {
    let b = build_scene(&small_spec()).unwrap();
    let cfg = quick_fit();
    let init = initial_grid(b.spec.geometry.clone(), b.spec.feature_dim, &cfg).unwrap();
    let grid = fit_scene(&b.track, &b.features, &cfg, init).unwrap().grid;
    for tau in [0.2, 0.5, 0.8] {
        let labels = segment(&grid, &b.vocab, tau, SimilarityMode::Cosine).unwrap();
        let occ = occupancy(&grid, tau);
        assert!((0..occ.len()).all(|i| labels.is_occupied(i) == occ[i]));
    }
}

#[test]
fn fit_on_reduced_targets() {
    let b = build_scene(&small_spec()).unwrap();
    let (reducer, report) = train_reducer(&b.vocab.prompt_embeddings(), 4, &ReducerTrainConfig::default()).unwrap();
    assert!(report.final_loss < 0.15);
    let reduced: TargetMaps =
        b.features.iter().map(|(k, m)| (*k, reduce_feature_map(&reducer, m).unwrap().0)).collect();
    let cfg = quick_fit();
    let init = initial_grid(b.spec.geometry.clone(), 4, &cfg).unwrap();
    let fit = fit_scene(&b.track, &reduced, &cfg, init).unwrap();
    assert_eq!(fit.grid.feature_dim(), 4);
    let vocab = b.vocab.reduced(&reducer).unwrap();
    let labels = segment(&fit.grid, &vocab, DEFAULT_TAU, SimilarityMode::Cosine).unwrap();
    assert_eq!(labels.class_names(), b.labels.class_names());
}
