use super::camera::{Intrinsics, Pose};
use super::skew;
use super::triangulation::triangulate_normalized;
use crate::error::{Error, Result};
use crate::matching::{symmetric_epipolar_distance, Correspondence};
use nalgebra::{DMatrix, Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SAMPLE_SIZE: usize = 8;
const BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacOptions {
    /// Inlier threshold on the symmetric epipolar distance, pixels.
    pub threshold: f64,
    pub max_iters: usize,
    /// Early exit once this probability of an all-inlier sample is reached.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        RansacOptions {
            threshold: 2.0,
            max_iters: 1000,
            confidence: 0.999,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EssentialEstimate {
    /// Essential matrix with singular values `(1, 1, 0)`, mapping camera-1
    /// rays to epipolar lines in camera 2: `x2^T E x1 = 0`.
    pub essential: Matrix3<f64>,
    pub inliers: Vec<bool>,
    /// The inliers are explained by a pure rotation within the threshold,
    /// so the translation direction is not observable.
    pub low_parallax: bool,
    /// Minimal samples evaluated before the early exit.
    pub iterations: usize,
}

impl EssentialEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// `K2^-T E K1^-1`.
pub fn fundamental_from_essential(e: &Matrix3<f64>, k1: &Intrinsics, k2: &Intrinsics) -> Matrix3<f64> {
    k2.inverse_matrix().transpose() * e * k1.inverse_matrix()
}

/// Closest matrix with two equal singular values and a zero third, scaled
/// to unit singular values.
pub fn project_to_essential(e: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = e.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // nalgebra sorts singular values in descending order
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t
}

/// `[t]x R` for the camera-2-from-camera-1 motion of `pose2`, where `pose2`
/// is camera 2's world-from-camera pose with camera 1 at the origin.
pub fn essential_from_pose(pose2: &Pose) -> Matrix3<f64> {
    let r = pose2.rotation.inverse().to_rotation_matrix().into_inner();
    let t = -r * pose2.translation;
    skew(&t) * r
}

/// Hartley-normalized linear 8-point solve on normalized image coordinates.
/// Returns `None` for fewer than 8 points or a degenerate design.
pub fn eight_point(x1: &[Vector3<f64>], x2: &[Vector3<f64>]) -> Option<Matrix3<f64>> {
    let n = x1.len();
    if n < SAMPLE_SIZE || x2.len() != n {
        return None;
    }
    let t1 = hartley(x1)?;
    let t2 = hartley(x2)?;
    let mut a = DMatrix::<f64>::zeros(n.max(9), 9);
    for i in 0..n {
        let p = t1 * x1[i];
        let q = t2 * x2[i];
        let (p, q) = (p / p.z, q / q.z);
        let row = [
            q.x * p.x, q.x * p.y, q.x, q.y * p.x, q.y * p.y, q.y, p.x, p.y, 1.0,
        ];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let f = v_t.row(idx);
    if f.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let e_hat = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    let e = t2.transpose() * e_hat * t1;
    let norm = e.norm();
    (norm > 0.0 && norm.is_finite()).then(|| e / norm)
}

/// Similarity taking points to zero centroid and mean distance sqrt(2).
fn hartley(x: &[Vector3<f64>]) -> Option<Matrix3<f64>> {
    let n = x.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for p in x {
        mx += p.x / p.z;
        my += p.y / p.z;
    }
    mx /= n;
    my /= n;
    let mean_dist = x
        .iter()
        .map(|p| ((p.x / p.z - mx).powi(2) + (p.y / p.z - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 0.0) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

struct Score {
    inliers: Vec<bool>,
    count: usize,
    sed_sum: f64,
}

fn score(e: &Matrix3<f64>, matches: &[Correspondence], k1: &Intrinsics, k2: &Intrinsics, threshold: f64) -> Score {
    let f = fundamental_from_essential(e, k1, k2);
    let mut inliers = vec![false; matches.len()];
    let mut count = 0;
    let mut sed_sum = 0.0;
    for (flag, m) in inliers.iter_mut().zip(matches) {
        let d = symmetric_epipolar_distance(m, &f);
        if d < threshold {
            *flag = true;
            count += 1;
            sed_sum += d;
        }
    }
    Score { inliers, count, sed_sum }
}

fn better(a: &Score, b: &Score) -> bool {
    a.count > b.count || (a.count == b.count && a.sed_sum < b.sed_sum)
}

/// RANSAC over normalized 8-point minimal samples, scored by symmetric
/// epipolar distance in pixels against `F = K2^-T E K1^-1`.
///
/// Samples are drawn up front from the seeded sequence and evaluated in
/// parallel batches, then reduced in sample order, so the result does not
/// depend on the thread count. The winner is refit on all its inliers.
pub fn estimate_essential_ransac(
    matches: &[Correspondence],
    k1: &Intrinsics,
    k2: &Intrinsics,
    opts: &RansacOptions,
) -> Result<EssentialEstimate> {
    if matches.len() < SAMPLE_SIZE {
        return Err(Error::InsufficientData(format!(
            "essential matrix needs at least {SAMPLE_SIZE} matches, got {}",
            matches.len()
        )));
    }
    let x1: Vec<_> = matches.iter().map(|m| k1.normalize(&m.p1)).collect();
    let x2: Vec<_> = matches.iter().map(|m| k2.normalize(&m.p2)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Matrix3<f64>, Score)> = None;
    let mut required = opts.max_iters;
    let mut done = 0;
    while done < required.min(opts.max_iters) {
        let batch = BATCH.min(opts.max_iters - done);
        let samples: Vec<Vec<usize>> = (0..batch)
            .map(|_| rand::seq::index::sample(&mut rng, matches.len(), SAMPLE_SIZE).into_vec())
            .collect();
        let results: Vec<Option<(Matrix3<f64>, Score)>> = samples
            .par_iter()
            .map(|idx| {
                let s1: Vec<_> = idx.iter().map(|&i| x1[i]).collect();
                let s2: Vec<_> = idx.iter().map(|&i| x2[i]).collect();
                let e = project_to_essential(&eight_point(&s1, &s2)?);
                let sc = score(&e, matches, k1, k2, opts.threshold);
                Some((e, sc))
            })
            .collect();
        for (e, sc) in results.into_iter().flatten() {
            if best.as_ref().is_none_or(|(_, b)| better(&sc, b)) {
                best = Some((e, sc));
            }
        }
        done += batch;
        if let Some((_, b)) = &best {
            required = required_iterations(b.count, matches.len(), opts.confidence).min(opts.max_iters);
        }
    }
    let (mut e, mut sc) = best.ok_or_else(|| Error::NoModel("every minimal sample was degenerate".into()))?;
    for _ in 0..5 {
        let idx: Vec<usize> = (0..matches.len()).filter(|&i| sc.inliers[i]).collect();
        let s1: Vec<_> = idx.iter().map(|&i| x1[i]).collect();
        let s2: Vec<_> = idx.iter().map(|&i| x2[i]).collect();
        let Some(refit) = eight_point(&s1, &s2).map(|e| project_to_essential(&e)) else {
            break;
        };
        let rs = score(&refit, matches, k1, k2, opts.threshold);
        if rs.count < sc.count || (rs.count == sc.count && rs.sed_sum > sc.sed_sum) {
            break;
        }
        let same = rs.inliers == sc.inliers;
        e = refit;
        sc = rs;
        if same {
            break;
        }
    }
    let low_parallax = explained_by_rotation(&x1, &x2, &sc.inliers, k1, k2, opts.threshold);
    if low_parallax {
        log::warn!("essential matrix inliers are explained by a pure rotation; translation is unobservable");
    }
    Ok(EssentialEstimate {
        essential: e,
        inliers: sc.inliers,
        low_parallax,
        iterations: done,
    })
}

fn required_iterations(inliers: usize, total: usize, confidence: f64) -> usize {
    let w = inliers as f64 / total as f64;
    let p_good = w.powi(SAMPLE_SIZE as i32);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Fits the best pure rotation between inlier bearings and reports whether
/// its median angular residual is below the pixel threshold.
fn explained_by_rotation(
    x1: &[Vector3<f64>],
    x2: &[Vector3<f64>],
    inliers: &[bool],
    k1: &Intrinsics,
    k2: &Intrinsics,
    threshold: f64,
) -> bool {
    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = (0..x1.len())
        .filter(|&i| inliers[i])
        .map(|i| (x1[i].normalize(), x2[i].normalize()))
        .collect();
    if pairs.len() < 3 {
        return true;
    }
    let mut h = Matrix3::zeros();
    for (a, b) in &pairs {
        h += b * a.transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    let mut residuals: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| {
            let ra = r * a;
            ra.cross(b).norm().atan2(ra.dot(b))
        })
        .collect();
    residuals.sort_by(f64::total_cmp);
    let median = residuals[residuals.len() / 2];
    let focal = 0.25 * (k1.fx + k1.fy + k2.fx + k2.fy);
    median < threshold / focal
}

/// The four `(R, t)` factorizations of an essential matrix, each mapping
/// camera-1 coordinates to camera 2 as `X2 = R X1 + t` with `|t| = 1`.
pub fn decompose_essential(e: &Matrix3<f64>) -> [(Matrix3<f64>, Vector3<f64>); 4] {
    let svd = e.svd(true, true);
    let mut u = svd.u.unwrap();
    let mut v_t = svd.v_t.unwrap();
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into();
    [(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Selects the decomposition of `e` that puts the most triangulated matches
/// in front of both cameras.
///
/// Returns camera 2's world-from-camera pose with camera 1 at the origin; the
/// camera center has unit norm. Fails when the best two candidates are
/// within one point of each other.
pub fn recover_pose(
    e: &Matrix3<f64>,
    matches: &[Correspondence],
    k1: &Intrinsics,
    k2: &Intrinsics,
) -> Result<Pose> {
    let x1: Vec<_> = matches.iter().map(|m| k1.normalize(&m.p1)).collect();
    let x2: Vec<_> = matches.iter().map(|m| k2.normalize(&m.p2)).collect();
    let candidates = decompose_essential(e);
    let counts: Vec<usize> = candidates
        .iter()
        .map(|(r, t)| {
            x1.iter()
                .zip(&x2)
                .filter(|(a, b)| match triangulate_normalized(a, b, r, t) {
                    Some(p) => p.z > 0.0 && (r * p + t).z > 0.0,
                    None => false,
                })
                .count()
        })
        .collect();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let (best, runner_up) = (counts[order[0]], counts[order[1]]);
    if best <= runner_up + 1 {
        return Err(Error::AmbiguousPose { best, runner_up });
    }
    let (r, t) = candidates[order[0]];
    let rot = Rotation3::from_matrix_unchecked(r);
    let q = UnitQuaternion::from_rotation_matrix(&rot).inverse();
    let center = -(q * t);
    Ok(Pose::new(q, center / center.norm()))
}
