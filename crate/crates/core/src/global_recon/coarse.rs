use super::sim3::{estimate_sim3_weighted, Sim3};
use super::{Observation, Reconstruction, Track};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PointMap, Pose};
use crate::matching::Correspondence;
use crate::scene_graph::{Edge, SceneGraph};
use nalgebra::{Point2, Vector3};
use std::collections::{BTreeMap, HashMap};

/// Pairwise prediction for one graph edge: each image's pointmap in its own
/// camera frame (sharing one unknown scale per pair) plus pixel matches with
/// `p1` in image `i` and `p2` in image `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPrediction {
    pub i: usize,
    pub j: usize,
    pub pointmap_i: PointMap,
    pub pointmap_j: PointMap,
    pub matches: Vec<Correspondence>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseOptions {
    /// Rounds of re-registering every non-root image against all of its
    /// neighbours after the spanning-tree pass.
    pub refine_rounds: usize,
    /// Edges whose pairwise Sim(3) residual, relative to the point spread,
    /// exceeds this are dropped as inconsistent.
    pub max_edge_residual: f64,
    pub root: usize,
}

impl Default for CoarseOptions {
    fn default() -> Self {
        CoarseOptions {
            refine_rounds: 3,
            max_edge_residual: 0.05,
            root: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoarseAlignment {
    pub reconstruction: Reconstruction,
    /// World-from-local similarity per image.
    pub transforms: Vec<Sim3>,
    /// Graph edges that were not used, as `(i, j)` with `i < j`.
    pub dropped_edges: Vec<(usize, usize)>,
}

/// Matched 3D samples of one pair oriented as (from, to).
fn matched_points(
    pm_a: &PointMap,
    pm_b: &PointMap,
    matches: &[(Point2<f64>, Point2<f64>)],
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, Vec<f64>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut w = Vec::new();
    for (pa, pb) in matches {
        if let (Some((xa, ca)), Some((xb, cb))) = (pm_a.sample(pa), pm_b.sample(pb)) {
            if ca * cb > 0.0 {
                a.push(xa);
                b.push(xb);
                w.push(ca * cb);
            }
        }
    }
    (a, b, w)
}

fn relative_residual(t: &Sim3, src: &[Vector3<f64>], dst: &[Vector3<f64>], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    let mu = dst.iter().zip(w).map(|(d, wi)| *wi * d).sum::<Vector3<f64>>() / total;
    let spread = dst.iter().zip(w).map(|(d, wi)| wi * (d - mu).norm_squared()).sum::<f64>() / total;
    let err = src
        .iter()
        .zip(dst)
        .zip(w)
        .map(|((s, d), wi)| wi * (t.transform_point(s) - d).norm_squared())
        .sum::<f64>()
        / total;
    (err / spread.max(f64::MIN_POSITIVE)).sqrt()
}

struct Oriented<'a> {
    pm_self: &'a PointMap,
    other: usize,
    /// (pixel in self, pixel in other)
    pixels: Vec<(Point2<f64>, Point2<f64>)>,
}

/// Registers every image's local pointmap into the root's frame.
///
/// Pairs are first screened by the residual of their own pairwise Sim(3);
/// then images are placed along the maximum-similarity spanning tree of the
/// surviving edges, each by a confidence-weighted Sim(3) onto the world
/// positions of its matches; finally every image is re-registered against
/// all placed neighbours for a few rounds. Tracks are fused from the matches.
pub fn coarse_align(
    graph: &SceneGraph,
    pairs: &[PairPrediction],
    intrinsics: &[Intrinsics],
    opts: &CoarseOptions,
) -> Result<CoarseAlignment> {
    let n = graph.nodes;
    if intrinsics.len() != n {
        return Err(Error::Shape(format!("{} intrinsics for {n} images", intrinsics.len())));
    }
    if opts.root >= n {
        return Err(Error::InvalidArgument(format!("root {} out of range", opts.root)));
    }
    let mut by_edge: BTreeMap<(usize, usize), &PairPrediction> = BTreeMap::new();
    for p in pairs {
        if p.i == p.j || p.i >= n || p.j >= n {
            return Err(Error::InvalidArgument(format!("pair ({}, {}) is invalid", p.i, p.j)));
        }
        by_edge.entry((p.i.min(p.j), p.i.max(p.j))).or_insert(p);
    }

    let mut kept: Vec<Edge> = Vec::new();
    let mut dropped = Vec::new();
    for e in &graph.edges {
        let Some(pair) = by_edge.get(&(e.i, e.j)) else {
            log::warn!("edge ({}, {}) has no pair prediction", e.i, e.j);
            dropped.push((e.i, e.j));
            continue;
        };
        let px: Vec<_> = pair.matches.iter().map(|m| (m.p2, m.p1)).collect();
        let (src, dst, w) = matched_points(&pair.pointmap_j, &pair.pointmap_i, &px);
        let quality = estimate_sim3_weighted(&src, &dst, &w).map(|t| relative_residual(&t, &src, &dst, &w));
        match quality {
            Ok(r) if r <= opts.max_edge_residual => kept.push(*e),
            Ok(r) => {
                log::warn!("dropping edge ({}, {}): pairwise residual {r:.3}", e.i, e.j);
                dropped.push((e.i, e.j));
            }
            Err(err) => {
                log::warn!("dropping edge ({}, {}): {err}", e.i, e.j);
                dropped.push((e.i, e.j));
            }
        }
    }
    let kept_graph = SceneGraph { nodes: n, edges: kept };
    let comps = kept_graph.components();
    if comps.len() > 1 {
        let offending = comps.into_iter().find(|c| !c.contains(&opts.root)).unwrap_or_default();
        return Err(Error::Disconnected { component: offending });
    }

    // per-image view of its incident kept pairs
    let mut incident: Vec<Vec<Oriented>> = (0..n).map(|_| Vec::new()).collect();
    for e in &kept_graph.edges {
        let pair = by_edge[&(e.i, e.j)];
        let forward = pair.i == e.i;
        let (pm_lo, pm_hi) = if forward {
            (&pair.pointmap_i, &pair.pointmap_j)
        } else {
            (&pair.pointmap_j, &pair.pointmap_i)
        };
        let lo_hi: Vec<_> = pair
            .matches
            .iter()
            .map(|m| if forward { (m.p1, m.p2) } else { (m.p2, m.p1) })
            .collect();
        incident[e.i].push(Oriented {
            pm_self: pm_lo,
            other: e.j,
            pixels: lo_hi.clone(),
        });
        incident[e.j].push(Oriented {
            pm_self: pm_hi,
            other: e.i,
            pixels: lo_hi.into_iter().map(|(a, b)| (b, a)).collect(),
        });
    }

    let order = kept_graph.spanning_tree_order(opts.root);
    let mut transforms = vec![Sim3::identity(); n];
    let mut canonical: Vec<Option<&PointMap>> = vec![None; n];
    for &(parent, child) in &order {
        let link = incident[child]
            .iter()
            .find(|o| o.other == parent)
            .expect("tree edge is a kept edge");
        if canonical[parent].is_none() {
            // only the root reaches here
            let back = incident[parent].iter().find(|o| o.other == child).unwrap();
            canonical[parent] = Some(back.pm_self);
        }
        let pm_parent = canonical[parent].unwrap();
        let t_parent = transforms[parent];
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut w = Vec::new();
        for (pc, pp) in &link.pixels {
            if let (Some((xc, cc)), Some((xp, cp))) = (link.pm_self.sample(pc), pm_parent.sample(pp)) {
                if cc * cp > 0.0 {
                    src.push(xc);
                    dst.push(t_parent.transform_point(&xp));
                    w.push(cc * cp);
                }
            }
        }
        transforms[child] = estimate_sim3_weighted(&src, &dst, &w)?;
        canonical[child] = Some(link.pm_self);
    }
    if n > 1 && order.is_empty() {
        return Err(Error::Disconnected {
            component: (0..n).filter(|&v| v != opts.root).collect(),
        });
    }

    for _ in 0..opts.refine_rounds {
        for &(_, node) in &order {
            let pm_node = canonical[node].unwrap();
            let mut src = Vec::new();
            let mut dst = Vec::new();
            let mut w = Vec::new();
            for link in &incident[node] {
                let pm_other = canonical[link.other].unwrap();
                let t_other = transforms[link.other];
                for (pn, po) in &link.pixels {
                    if let (Some((xn, cn)), Some((xo, co))) = (pm_node.sample(pn), pm_other.sample(po)) {
                        if cn * co > 0.0 {
                            src.push(xn);
                            dst.push(t_other.transform_point(&xo));
                            w.push(cn * co);
                        }
                    }
                }
            }
            match estimate_sim3_weighted(&src, &dst, &w) {
                Ok(t) => transforms[node] = t,
                Err(err) => log::warn!("refinement of image {node} skipped: {err}"),
            }
        }
    }

    let points = fuse_tracks(&incident, &canonical, &transforms);
    let poses = transforms
        .iter()
        .map(|t| Pose::new(t.rotation, t.translation))
        .collect();
    Ok(CoarseAlignment {
        reconstruction: Reconstruction {
            poses,
            intrinsics: intrinsics.to_vec(),
            points,
            scales: transforms.iter().map(|t| t.scale).collect(),
        },
        transforms,
        dropped_edges: dropped,
    })
}

/// Links matched observations into tracks and places each track at the
/// confidence-weighted mean of its registered pointmap samples.
fn fuse_tracks(incident: &[Vec<Oriented>], canonical: &[Option<&PointMap>], transforms: &[Sim3]) -> Vec<Track> {
    let mut ids: HashMap<(usize, u64, u64), usize> = HashMap::new();
    let mut nodes: Vec<Observation> = Vec::new();
    let mut parent: Vec<usize> = Vec::new();
    let mut id_of = |obs: Observation, nodes: &mut Vec<Observation>, parent: &mut Vec<usize>| {
        *ids.entry((obs.image, obs.pixel.x.to_bits(), obs.pixel.y.to_bits()))
            .or_insert_with(|| {
                nodes.push(obs);
                parent.push(parent.len());
                parent.len() - 1
            })
    };
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (image, links) in incident.iter().enumerate() {
        for link in links {
            if link.other < image {
                continue;
            }
            for (pa, pb) in &link.pixels {
                let a = id_of(Observation { image, pixel: *pa }, &mut nodes, &mut parent);
                let b = id_of(Observation { image: link.other, pixel: *pb }, &mut nodes, &mut parent);
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..nodes.len() {
        let r = find(&mut parent, v);
        groups.entry(r).or_default().push(v);
    }
    let mut tracks = Vec::new();
    let mut conflicts = 0usize;
    for members in groups.values() {
        let mut seen = BTreeMap::new();
        for &m in members {
            let o = nodes[m];
            if seen.insert(o.image, o).is_some() {
                conflicts += 1;
                seen.insert(o.image, nodes[*members.iter().find(|&&k| nodes[k].image == o.image).unwrap()]);
            }
        }
        if seen.len() < 2 {
            continue;
        }
        let mut acc = Vector3::zeros();
        let mut wsum = 0.0;
        for o in seen.values() {
            if let Some((x, c)) = canonical[o.image].and_then(|pm| pm.sample(&o.pixel)) {
                if c > 0.0 {
                    acc += c * transforms[o.image].transform_point(&x);
                    wsum += c;
                }
            }
        }
        if wsum > 0.0 {
            tracks.push(Track {
                position: acc / wsum,
                observations: seen.into_values().collect(),
            });
        }
    }
    if conflicts > 0 {
        log::debug!("{conflicts} track observations conflicted within one image; kept the first");
    }
    tracks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{RingScene, RingSceneConfig};
    use nalgebra::UnitQuaternion;

    fn all_pairs_graph(n: usize) -> SceneGraph {
        let edges = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| Edge { i, j, score: 1.0 - (j - i) as f64 * 0.01 }))
            .collect();
        SceneGraph { nodes: n, edges }
    }

    #[test]
    fn two_images_single_edge() {
        let scene = RingScene::generate(&RingSceneConfig {
            cameras: 2,
            points: 60,
            ..Default::default()
        });
        let graph = all_pairs_graph(2);
        let pairs = scene.pair_predictions(&graph, 0.0, None);
        let out = coarse_align(&graph, &pairs, &scene.intrinsics, &CoarseOptions::default()).unwrap();
        let rec = &out.reconstruction;
        // relative motion of camera 1 w.r.t. camera 0 up to the root's frame and scale
        let rel_true = scene.poses[0].inverse().compose(&scene.poses[1]);
        let rel = rec.poses[0].inverse().compose(&rec.poses[1]);
        assert!(rel.rotation.angle_to(&rel_true.rotation) < 1e-9);
        let s = rel.translation.norm() / rel_true.translation.norm();
        assert!((rel.translation - s * rel_true.translation).norm() < 1e-9 * s);
        assert!(rec.points.len() >= 50);
    }

    #[test]
    fn ring_is_recovered_exactly() {
        let scene = RingScene::generate(&RingSceneConfig::default());
        let graph = all_pairs_graph(scene.poses.len());
        let pairs = scene.pair_predictions(&graph, 0.0, None);
        let out = coarse_align(&graph, &pairs, &scene.intrinsics, &CoarseOptions::default()).unwrap();
        assert!(out.dropped_edges.is_empty());
        let err = scene.aligned_pose_errors(&out.reconstruction.poses);
        assert!(err.max_center < 1e-9 * scene.diameter(), "{err:?}");
        assert!(err.max_rotation < 1e-9, "{err:?}");
    }

    #[test]
    fn tied_scores_give_a_star_tree_and_the_same_result() {
        let scene = RingScene::generate(&RingSceneConfig::default());
        let n = scene.poses.len();
        let graph = SceneGraph {
            nodes: n,
            edges: all_pairs_graph(n).edges.into_iter().map(|e| Edge { score: 1.0, ..e }).collect(),
        };
        assert!(graph.spanning_tree_order(0).iter().all(|&(p, _)| p == 0));
        let pairs = scene.pair_predictions(&graph, 0.0, None);
        let out = coarse_align(&graph, &pairs, &scene.intrinsics, &CoarseOptions::default()).unwrap();
        let err = scene.aligned_pose_errors(&out.reconstruction.poses);
        assert!(err.max_center < 1e-9 * scene.diameter(), "{err:?}");
    }

    #[test]
    fn corrupted_edge_is_dropped() {
        let scene = RingScene::generate(&RingSceneConfig::default());
        let graph = all_pairs_graph(scene.poses.len());
        let pairs = scene.pair_predictions(&graph, 0.0, Some((0, 1)));
        let out = coarse_align(&graph, &pairs, &scene.intrinsics, &CoarseOptions::default()).unwrap();
        assert_eq!(out.dropped_edges, vec![(0, 1)]);
        let err = scene.aligned_pose_errors(&out.reconstruction.poses);
        assert!(err.max_center < 0.01 * scene.diameter(), "{err:?}");
    }

    #[test]
    fn disconnection_is_reported() {
        let scene = RingScene::generate(&RingSceneConfig {
            cameras: 3,
            points: 40,
            ..Default::default()
        });
        let graph = SceneGraph {
            nodes: 3,
            edges: vec![Edge { i: 0, j: 1, score: 1.0 }, Edge { i: 1, j: 2, score: 0.9 }],
        };
        let pairs = scene.pair_predictions(&graph, 0.0, Some((1, 2)));
        match coarse_align(&graph, &pairs, &scene.intrinsics, &CoarseOptions::default()) {
            Err(Error::Disconnected { component }) => assert_eq!(component, vec![2]),
            other => panic!("expected disconnection, got {other:?}"),
        }
    }

    #[test]
    fn equivariant_to_a_global_similarity_of_pointmaps() {
        let scene = RingScene::generate(&RingSceneConfig {
            cameras: 5,
            points: 120,
            ..Default::default()
        });
        let graph = all_pairs_graph(5);
        let pairs = scene.pair_predictions(&graph, 0.0, None);
        let g = Sim3::new(
            2.5,
            UnitQuaternion::from_euler_angles(0.3, -0.2, 0.7),
            Vector3::new(0.4, -1.0, 0.2),
        );
        let moved: Vec<PairPrediction> = pairs
            .iter()
            .map(|p| {
                let tf = |pm: &PointMap| {
                    let mut out = pm.clone();
                    for q in &mut out.points {
                        if q[0].is_finite() {
                            let v = g.transform_point(&Vector3::new(q[0], q[1], q[2]));
                            *q = [v.x, v.y, v.z];
                        }
                    }
                    out
                };
                PairPrediction {
                    pointmap_i: tf(&p.pointmap_i),
                    pointmap_j: tf(&p.pointmap_j),
                    ..p.clone()
                }
            })
            .collect();
        let opts = CoarseOptions {
            max_edge_residual: 1.0,
            ..Default::default()
        };
        let a = coarse_align(&graph, &pairs, &scene.intrinsics, &opts).unwrap();
        let b = coarse_align(&graph, &moved, &scene.intrinsics, &opts).unwrap();
        // with the root fixed to identity, local frames conjugate by g
        for k in 0..5 {
            let expect = g.compose(&a.transforms[k]).compose(&g.inverse());
            let got = b.transforms[k];
            assert!((got.scale - expect.scale).abs() < 1e-6 * expect.scale);
            assert!(got.rotation.angle_to(&expect.rotation) < 1e-6);
            assert!((got.translation - expect.translation).norm() < 1e-5);
        }
    }
}
