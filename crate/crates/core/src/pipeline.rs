//! End-to-end reconstruction: similarity graph, coarse alignment of the
//! per-pair pointmaps, bundle adjustment.

use crate::error::Result;
use crate::geometry::Intrinsics;
use crate::global_recon::{
    bundle_adjust, coarse_align, BundleOptions, BundleReport, CoarseAlignment, CoarseOptions, PairPrediction,
    Reconstruction,
};
use crate::matching::{reciprocal_match, FeatureMap};
use crate::scene_graph::{build_graph, pairwise_similarity, SceneGraph, SimilarityMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SfmOptions {
    /// Neighbours per image in the co-visibility graph.
    pub graph_k: usize,
    /// Weight of the intrinsics prior in bundle adjustment.
    pub lambda_intr: f64,
    /// Pixel stride when matches have to be computed from dense features.
    pub match_subsample: usize,
    pub coarse: CoarseOptions,
    pub bundle: BundleOptions,
}

impl Default for SfmOptions {
    fn default() -> Self {
        SfmOptions {
            graph_k: 10,
            lambda_intr: 10.0,
            match_subsample: 1,
            coarse: CoarseOptions::default(),
            bundle: BundleOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SfmOutput {
    pub similarity: SimilarityMatrix,
    pub graph: SceneGraph,
    pub alignment: CoarseAlignment,
    pub reconstruction: Reconstruction,
    pub report: BundleReport,
}

/// Runs the global pipeline. `features` drive the graph and, for pairs that
/// arrive without matches, the reciprocal matching; `pairs` supplies the
/// pointmaps for whichever graph edges have them.
///
/// ```
/// use darksfm::fixture::{RingScene, RingSceneConfig};
/// use darksfm::pipeline::{run_sfm, SfmOptions};
/// use darksfm::scene_graph::{Edge, SceneGraph};
///
/// let scene = RingScene::generate(&RingSceneConfig { cameras: 4, points: 80, ..Default::default() });
/// let every_pair = SceneGraph {
///     nodes: 4,
///     edges: (0..4).flat_map(|i| (i + 1..4).map(move |j| Edge { i, j, score: 1.0 })).collect(),
/// };
/// let pairs = scene.pair_predictions(&every_pair, 0.0, None);
/// let out = run_sfm(&scene.global_features(), &scene.intrinsics, &pairs, &SfmOptions::default()).unwrap();
/// assert!(out.report.final_rmse < 1e-6);
/// ```
pub fn run_sfm(
    features: &[FeatureMap],
    intrinsics: &[Intrinsics],
    pairs: &[PairPrediction],
    opts: &SfmOptions,
) -> Result<SfmOutput> {
    let similarity = pairwise_similarity(features)?;
    let graph = build_graph(&similarity, opts.graph_k)?;
    log::info!("scene graph: {} images, {} edges", graph.nodes, graph.edges.len());
    let mut filled = Vec::with_capacity(pairs.len());
    for p in pairs {
        let mut p = p.clone();
        if p.matches.is_empty() {
            p.matches = reciprocal_match(&features[p.i], &features[p.j], opts.match_subsample)?;
            log::debug!("pair ({}, {}): {} matches from features", p.i, p.j, p.matches.len());
        }
        filled.push(p);
    }
    let alignment = coarse_align(&graph, &filled, intrinsics, &opts.coarse)?;
    let (reconstruction, report) = bundle_adjust(&alignment.reconstruction, intrinsics, opts.lambda_intr, &opts.bundle)?;
    log::info!(
        "bundle adjustment: {} points, rmse {:.3e} -> {:.3e} px",
        reconstruction.points.len(),
        report.initial_rmse,
        report.final_rmse
    );
    Ok(SfmOutput {
        similarity,
        graph,
        alignment,
        reconstruction,
        report,
    })
}
