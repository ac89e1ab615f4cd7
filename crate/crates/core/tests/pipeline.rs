use darksfm::evaluation::{align_sim3, ate, rpe, Trajectory};
use darksfm::fixture::{RingScene, RingSceneConfig};
use darksfm::geometry::Pose;
use darksfm::pipeline::{run_sfm, SfmOptions};
use darksfm::scene_graph::{Edge, SceneGraph};

fn every_pair(n: usize) -> SceneGraph {
    SceneGraph {
        nodes: n,
        edges: (0..n).flat_map(|i| (i + 1..n).map(move |j| Edge { i, j, score: 1.0 })).collect(),
    }
}

fn trajectory(poses: &[Pose]) -> Trajectory {
    Trajectory::new(poses.iter().enumerate().map(|(k, p)| (format!("{k}"), *p)).collect()).unwrap()
}

fn run(sigma: f64) -> (RingScene, Trajectory, Trajectory) {
    let scene = RingScene::generate(&RingSceneConfig::default());
    let pairs = scene.pair_predictions(&every_pair(scene.poses.len()), sigma, None);
    let out = run_sfm(&scene.global_features(), &scene.intrinsics, &pairs, &SfmOptions::default()).unwrap();
    let est = trajectory(&out.reconstruction.poses);
    let reference = trajectory(&scene.poses);
    (scene, est, reference)
}

#[test]
fn exact_ring_is_recovered_to_machine_precision() {
    let (scene, est, reference) = run(0.0);
    let (_, aligned) = align_sim3(&est, &reference).unwrap();
    let e = ate(&aligned, &reference).unwrap();
    assert!(e < 1e-6 * scene.diameter(), "ate {e}");
}

#[test]
fn one_pixel_noise_stays_within_one_percent() {
    let (scene, est, reference) = run(1.0);
    let (_, aligned) = align_sim3(&est, &reference).unwrap();
    let e = ate(&aligned, &reference).unwrap();
    let r = rpe(&aligned, &reference, &Default::default()).unwrap();
    assert!(e < 0.01 * scene.diameter(), "ate {e}");
    assert!(r.rotation_deg < 0.5, "{r:?}");
}
