use super::Reconstruction;
use crate::error::{Error, Result};
use crate::geometry::{skew, Intrinsics, Pose};
use nalgebra::{DMatrix, DVector, Matrix3, Point2, SMatrix, SVector, UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;

/// Parameters per camera: rotation increment (3), translation (3), fx, fy, cx, cy.
const CAM: usize = 10;

type CamVec = SVector<f64, CAM>;
type CamMat = SMatrix<f64, CAM, CAM>;
type CamPoint = SMatrix<f64, CAM, 3>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearSolver {
    /// Eliminate point blocks and solve the reduced camera system.
    Schur,
    /// Factor the full normal equations; only for small problems.
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BundleOptions {
    pub max_iterations: usize,
    /// Huber threshold on the reprojection error norm, pixels.
    pub huber_delta: f64,
    pub initial_damping: f64,
    pub max_damping: f64,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction.
    pub function_tolerance: f64,
    pub solver: LinearSolver,
}

impl Default for BundleOptions {
    fn default() -> Self {
        BundleOptions {
            max_iterations: 100,
            huber_delta: 2.0,
            initial_damping: 1e-4,
            max_damping: 1e16,
            function_tolerance: 1e-15,
            solver: LinearSolver::Schur,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundleReport {
    pub initial_rmse: f64,
    pub final_rmse: f64,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Objective at the start and after every accepted step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub accepted_steps: usize,
    /// The damping limit was hit without further decrease.
    pub stalled_at_max_damping: bool,
}

/// Reprojection residual `pi(K, R X + t) - x` and its derivatives with
/// respect to the camera block (left rotation increment, translation,
/// fx, fy, cx, cy) and the world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionJacobians {
    pub residual: Vector2<f64>,
    pub d_camera: SMatrix<f64, 2, CAM>,
    pub d_point: SMatrix<f64, 2, 3>,
}

/// `rotation`/`translation` map world to camera coordinates.
pub fn project_with_jacobians(
    rotation: &UnitQuaternion<f64>,
    translation: &Vector3<f64>,
    k: &Intrinsics,
    point: &Vector3<f64>,
    observed: &Point2<f64>,
) -> ProjectionJacobians {
    let rx = rotation * point;
    let xc = rx + translation;
    let (x, y, z) = (xc.x, xc.y, xc.z);
    let (xn, yn) = (x / z, y / z);
    let residual = Vector2::new(k.fx * xn + k.cx - observed.x, k.fy * yn + k.cy - observed.y);
    let d_xc = SMatrix::<f64, 2, 3>::new(k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z));
    let d_rot = d_xc * (-skew(&rx));
    let mut d_camera = SMatrix::<f64, 2, CAM>::zeros();
    d_camera.fixed_view_mut::<2, 3>(0, 0).copy_from(&d_rot);
    d_camera.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_xc);
    d_camera[(0, 6)] = xn;
    d_camera[(1, 7)] = yn;
    d_camera[(0, 8)] = 1.0;
    d_camera[(1, 9)] = 1.0;
    let d_point = d_xc * rotation.to_rotation_matrix().matrix();
    ProjectionJacobians {
        residual,
        d_camera,
        d_point,
    }
}

#[derive(Clone)]
struct State {
    rotations: Vec<UnitQuaternion<f64>>,
    translations: Vec<Vector3<f64>>,
    intrinsics: Vec<Intrinsics>,
    points: Vec<Vector3<f64>>,
}

impl State {
    fn from_reconstruction(r: &Reconstruction) -> State {
        let rotations: Vec<_> = r.poses.iter().map(|p| p.rotation.inverse()).collect();
        let translations = r
            .poses
            .iter()
            .zip(&rotations)
            .map(|(p, rot)| -(rot * p.translation))
            .collect();
        State {
            rotations,
            translations,
            intrinsics: r.intrinsics.clone(),
            points: r.points.iter().map(|t| t.position).collect(),
        }
    }

    fn write_into(&self, r: &mut Reconstruction) {
        for (k, pose) in r.poses.iter_mut().enumerate() {
            let rot = self.rotations[k].inverse();
            *pose = Pose::new(rot, -(rot * self.translations[k]));
        }
        r.intrinsics.clone_from(&self.intrinsics);
        for (t, p) in r.points.iter_mut().zip(&self.points) {
            t.position = *p;
        }
    }

    fn apply(&self, dc: &[CamVec], dp: &[Vector3<f64>]) -> State {
        let mut out = self.clone();
        for (k, d) in dc.iter().enumerate() {
            out.rotations[k] = UnitQuaternion::from_scaled_axis(Vector3::new(d[0], d[1], d[2])) * self.rotations[k];
            out.translations[k] += Vector3::new(d[3], d[4], d[5]);
            let i = &mut out.intrinsics[k];
            i.fx += d[6];
            i.fy += d[7];
            i.cx += d[8];
            i.cy += d[9];
        }
        for (p, d) in out.points.iter_mut().zip(dp) {
            *p += d;
        }
        out
    }
}

/// Flattened observation list.
struct Obs {
    image: usize,
    point: usize,
    pixel: Point2<f64>,
}

struct Problem<'a> {
    obs: Vec<Obs>,
    by_point: Vec<Vec<usize>>,
    calibrated: &'a [Intrinsics],
    /// `None` freezes intrinsics.
    prior_sqrt: Option<f64>,
    /// Per camera, which of the 10 parameters are held fixed.
    frozen: Vec<[bool; CAM]>,
    delta: f64,
}

impl Problem<'_> {
    fn huber(&self, e: f64) -> f64 {
        if e <= self.delta {
            e * e
        } else {
            2.0 * self.delta * e - self.delta * self.delta
        }
    }

    fn prior_residuals(&self, k: &Intrinsics, c: &Intrinsics) -> [f64; 2] {
        let s = self.prior_sqrt.unwrap_or(0.0);
        [s * (k.fx - c.fx) / c.fx, s * (k.fy - c.fy) / c.fy]
    }

    fn residuals(&self, s: &State) -> Vec<Vector2<f64>> {
        self.obs
            .par_iter()
            .map(|o| {
                let xc = s.rotations[o.image] * s.points[o.point] + s.translations[o.image];
                s.intrinsics[o.image].project(&xc) - o.pixel
            })
            .collect()
    }

    /// Robust objective plus intrinsics prior; infinite when any residual is
    /// not finite.
    fn objective(&self, s: &State) -> f64 {
        let res = self.residuals(s);
        let mut total: f64 = res.iter().map(|r| self.huber(r.norm())).sum();
        if self.prior_sqrt.is_some() {
            for (k, c) in s.intrinsics.iter().zip(self.calibrated) {
                total += self.prior_residuals(k, c).iter().map(|v| v * v).sum::<f64>();
            }
        }
        if total.is_finite() {
            total
        } else {
            f64::INFINITY
        }
    }

    fn rmse(&self, s: &State) -> f64 {
        let res = self.residuals(s);
        if res.is_empty() {
            return 0.0;
        }
        (res.iter().map(|r| r.norm_squared()).sum::<f64>() / res.len() as f64).sqrt()
    }

    fn first_non_finite(&self, s: &State) -> Option<usize> {
        self.residuals(s).iter().position(|r| !r.iter().all(|v| v.is_finite()))
    }
}

/// Gauss-Newton normal equations split into camera and point blocks.
struct Normal {
    cc: Vec<CamMat>,
    /// Camera-point coupling, one block per observation.
    cp: Vec<CamPoint>,
    pp: Vec<Matrix3<f64>>,
    gc: Vec<CamVec>,
    gp: Vec<Vector3<f64>>,
}

fn linearize(problem: &Problem, s: &State) -> Normal {
    let jac: Vec<(ProjectionJacobians, f64)> = problem
        .obs
        .par_iter()
        .map(|o| {
            let j = project_with_jacobians(
                &s.rotations[o.image],
                &s.translations[o.image],
                &s.intrinsics[o.image],
                &s.points[o.point],
                &o.pixel,
            );
            let e = j.residual.norm();
            let w = if e <= problem.delta { 1.0 } else { problem.delta / e };
            (j, w)
        })
        .collect();
    let n_cam = s.rotations.len();
    let mut n = Normal {
        cc: vec![CamMat::zeros(); n_cam],
        cp: Vec::with_capacity(jac.len()),
        pp: vec![Matrix3::zeros(); s.points.len()],
        gc: vec![CamVec::zeros(); n_cam],
        gp: vec![Vector3::zeros(); s.points.len()],
    };
    for (o, (j, w)) in problem.obs.iter().zip(&jac) {
        let mut jc = j.d_camera;
        for (col, frozen) in problem.frozen[o.image].iter().enumerate() {
            if *frozen {
                jc.column_mut(col).fill(0.0);
            }
        }
        let jcw = jc.transpose() * *w;
        n.cc[o.image] += jcw * jc;
        n.cp.push(jcw * j.d_point);
        n.pp[o.point] += *w * j.d_point.transpose() * j.d_point;
        n.gc[o.image] += jcw * j.residual;
        n.gp[o.point] += *w * j.d_point.transpose() * j.residual;
    }
    if let Some(sq) = problem.prior_sqrt {
        for (k, (cur, cal)) in s.intrinsics.iter().zip(problem.calibrated).enumerate() {
            let r = problem.prior_residuals(cur, cal);
            let scale = [sq / cal.fx, sq / cal.fy];
            for q in 0..2 {
                if !problem.frozen[k][6 + q] {
                    n.cc[k][(6 + q, 6 + q)] += scale[q] * scale[q];
                    n.gc[k][6 + q] += scale[q] * r[q];
                }
            }
        }
    }
    n
}

fn damp_cam(m: &CamMat, mu: f64, frozen: &[bool; CAM]) -> CamMat {
    let mut out = *m;
    for d in 0..CAM {
        if frozen[d] {
            out.row_mut(d).fill(0.0);
            out.column_mut(d).fill(0.0);
            out[(d, d)] = 1.0;
        } else {
            out[(d, d)] += mu * m[(d, d)].max(1e-12);
        }
    }
    out
}

fn damp_point(m: &Matrix3<f64>, mu: f64) -> Matrix3<f64> {
    let mut out = *m;
    for d in 0..3 {
        out[(d, d)] += mu * m[(d, d)].max(1e-12);
    }
    out
}

fn solve_symmetric(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    match a.clone().cholesky() {
        Some(ch) => Some(ch.solve(&b)),
        None => a.lu().solve(&b),
    }
}

fn solve_schur(problem: &Problem, n: &Normal, mu: f64) -> Option<(Vec<CamVec>, Vec<Vector3<f64>>)> {
    let n_cam = n.cc.len();
    let dim = n_cam * CAM;
    let mut s = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for k in 0..n_cam {
        s.fixed_view_mut::<CAM, CAM>(k * CAM, k * CAM)
            .copy_from(&damp_cam(&n.cc[k], mu, &problem.frozen[k]));
        rhs.fixed_rows_mut::<CAM>(k * CAM).copy_from(&(-n.gc[k]));
    }
    let mut p_inv = Vec::with_capacity(n.pp.len());
    for (j, obs) in problem.by_point.iter().enumerate() {
        let inv = damp_point(&n.pp[j], mu).try_inverse()?;
        for &a in obs {
            let ia = problem.obs[a].image;
            let ea = n.cp[a] * inv;
            let mut r = rhs.fixed_rows_mut::<CAM>(ia * CAM);
            r += ea * n.gp[j];
            for &b in obs {
                let ib = problem.obs[b].image;
                let block = ea * n.cp[b].transpose();
                let mut view = s.fixed_view_mut::<CAM, CAM>(ia * CAM, ib * CAM);
                view -= block;
            }
        }
        p_inv.push(inv);
    }
    // frozen rows and columns may have picked up couplings above
    for k in 0..n_cam {
        for d in 0..CAM {
            if problem.frozen[k][d] {
                let idx = k * CAM + d;
                s.row_mut(idx).fill(0.0);
                s.column_mut(idx).fill(0.0);
                s[(idx, idx)] = 1.0;
                rhs[idx] = 0.0;
            }
        }
    }
    let x = solve_symmetric(s, rhs)?;
    let dc: Vec<CamVec> = (0..n_cam).map(|k| x.fixed_rows::<CAM>(k * CAM).into_owned()).collect();
    let mut dp = Vec::with_capacity(n.pp.len());
    for (j, obs) in problem.by_point.iter().enumerate() {
        let mut r = -n.gp[j];
        for &a in obs {
            r -= n.cp[a].transpose() * dc[problem.obs[a].image];
        }
        dp.push(p_inv[j] * r);
    }
    Some((dc, dp))
}

fn solve_dense(problem: &Problem, n: &Normal, mu: f64) -> Option<(Vec<CamVec>, Vec<Vector3<f64>>)> {
    let n_cam = n.cc.len();
    let n_pt = n.pp.len();
    let off = n_cam * CAM;
    let dim = off + 3 * n_pt;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let mut g = DVector::<f64>::zeros(dim);
    for k in 0..n_cam {
        h.fixed_view_mut::<CAM, CAM>(k * CAM, k * CAM)
            .copy_from(&damp_cam(&n.cc[k], mu, &problem.frozen[k]));
        g.fixed_rows_mut::<CAM>(k * CAM).copy_from(&(-n.gc[k]));
    }
    for j in 0..n_pt {
        h.fixed_view_mut::<3, 3>(off + 3 * j, off + 3 * j)
            .copy_from(&damp_point(&n.pp[j], mu));
        g.fixed_rows_mut::<3>(off + 3 * j).copy_from(&(-n.gp[j]));
    }
    for (a, o) in problem.obs.iter().enumerate() {
        let mut e = n.cp[a];
        for d in 0..CAM {
            if problem.frozen[o.image][d] {
                e.row_mut(d).fill(0.0);
            }
        }
        let mut upper = h.fixed_view_mut::<CAM, 3>(o.image * CAM, off + 3 * o.point);
        upper += e;
        let mut lower = h.fixed_view_mut::<3, CAM>(off + 3 * o.point, o.image * CAM);
        lower += e.transpose();
    }
    let x = solve_symmetric(h, g)?;
    let dc = (0..n_cam).map(|k| x.fixed_rows::<CAM>(k * CAM).into_owned()).collect();
    let dp = (0..n_pt).map(|j| x.fixed_rows::<3>(off + 3 * j).into_owned()).collect();
    Some((dc, dp))
}

/// Which parameters stay fixed: every principal point, the whole first
/// camera, and the translation coordinate of the camera farthest from it that
/// best pins the overall scale.
fn gauge(state: &State, freeze_intrinsics: bool) -> Vec<[bool; CAM]> {
    let n = state.rotations.len();
    let mut frozen = vec![[false; CAM]; n];
    for f in frozen.iter_mut() {
        f[6..8].fill(freeze_intrinsics);
        f[8..].fill(true);
    }
    if n == 0 {
        return frozen;
    }
    frozen[0][..6].fill(true);
    let center = |k: usize| -(state.rotations[k].inverse() * state.translations[k]);
    let c0 = center(0);
    let far = (1..n).max_by(|&a, &b| (center(a) - c0).norm().total_cmp(&(center(b) - c0).norm()));
    if let Some(k) = far {
        let lever = state.rotations[k] * (center(k) - c0);
        let axis = lever.iamax();
        frozen[k][3 + axis] = true;
    }
    frozen
}

/// Levenberg-Marquardt refinement of poses, focal lengths and points under a
/// Huber reprojection loss and a quadratic pull of the intrinsics towards
/// `calibrated`. An infinite `lambda_intr` holds intrinsics fixed.
///
/// ```
/// use darksfm::fixture::{RingScene, RingSceneConfig};
/// use darksfm::global_recon::{bundle_adjust, BundleOptions};
///
/// let scene = RingScene::generate(&RingSceneConfig { cameras: 3, points: 30, ..Default::default() });
/// let truth = scene.reconstruction(0.0);
/// let (out, report) = bundle_adjust(&truth, &scene.intrinsics, 10.0, &BundleOptions::default()).unwrap();
/// assert!(report.final_rmse < 1e-9);
/// assert_eq!(out.poses.len(), 3);
/// ```
pub fn bundle_adjust(
    recon: &Reconstruction,
    calibrated: &[Intrinsics],
    lambda_intr: f64,
    opts: &BundleOptions,
) -> Result<(Reconstruction, BundleReport)> {
    let n_cam = recon.poses.len();
    if recon.intrinsics.len() != n_cam || calibrated.len() != n_cam {
        return Err(Error::Shape(format!(
            "{n_cam} poses, {} intrinsics, {} calibrated intrinsics",
            recon.intrinsics.len(),
            calibrated.len()
        )));
    }
    if !(lambda_intr >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_intr {lambda_intr} must be non-negative")));
    }
    let mut obs = Vec::new();
    let mut by_point = vec![Vec::new(); recon.points.len()];
    for (j, t) in recon.points.iter().enumerate() {
        for o in &t.observations {
            if o.image >= n_cam {
                return Err(Error::InvalidArgument(format!("observation references image {}", o.image)));
            }
            by_point[j].push(obs.len());
            obs.push(Obs {
                image: o.image,
                point: j,
                pixel: o.pixel,
            });
        }
    }
    let state = State::from_reconstruction(recon);
    let freeze_intrinsics = lambda_intr.is_infinite();
    let problem = Problem {
        obs,
        by_point,
        calibrated,
        prior_sqrt: (!freeze_intrinsics).then(|| lambda_intr.sqrt()),
        frozen: gauge(&state, freeze_intrinsics),
        delta: opts.huber_delta,
    };
    if let Some(a) = problem.first_non_finite(&state) {
        let o = &problem.obs[a];
        return Err(Error::NonFinite {
            observation: a,
            point: o.point,
            image: o.image,
        });
    }

    let initial_objective = problem.objective(&state);
    let initial_rmse = problem.rmse(&state);
    let mut report = BundleReport {
        initial_rmse,
        final_rmse: initial_rmse,
        initial_objective,
        final_objective: initial_objective,
        objective_history: vec![initial_objective],
        iterations: 0,
        accepted_steps: 0,
        stalled_at_max_damping: false,
    };
    let mut current = state;
    let mut cost = initial_objective;
    let mut mu = opts.initial_damping;
    'outer: while report.iterations < opts.max_iterations && cost > 0.0 {
        report.iterations += 1;
        let normal = linearize(&problem, &current);
        loop {
            let step = match opts.solver {
                LinearSolver::Schur => solve_schur(&problem, &normal, mu),
                LinearSolver::Dense => solve_dense(&problem, &normal, mu),
            };
            let candidate_cost;
            let candidate = match step {
                Some((dc, dp)) => {
                    let c = current.apply(&dc, &dp);
                    candidate_cost = if c.intrinsics.iter().all(|k| k.fx > 0.0 && k.fy > 0.0) {
                        problem.objective(&c)
                    } else {
                        f64::INFINITY
                    };
                    Some(c)
                }
                None => {
                    candidate_cost = f64::INFINITY;
                    None
                }
            };
            if candidate_cost <= cost {
                let decrease = cost - candidate_cost;
                current = candidate.unwrap();
                cost = candidate_cost;
                report.accepted_steps += 1;
                report.objective_history.push(cost);
                mu = (mu / 3.0).max(1e-15);
                if decrease <= opts.function_tolerance * report.objective_history[report.objective_history.len() - 2] {
                    break 'outer;
                }
                break;
            }
            mu *= 4.0;
            if mu > opts.max_damping {
                report.stalled_at_max_damping = true;
                break 'outer;
            }
        }
    }

    let mut out = recon.clone();
    if report.accepted_steps > 0 {
        current.write_into(&mut out);
        report.final_objective = cost;
        report.final_rmse = problem.rmse(&current);
    }
    log::debug!(
        "bundle adjustment: rmse {:.3e} -> {:.3e} px in {} iterations",
        report.initial_rmse,
        report.final_rmse,
        report.iterations
    );
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{RingScene, RingSceneConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_scene() -> RingScene {
        RingScene::generate(&RingSceneConfig {
            cameras: 4,
            points: 40,
            ..Default::default()
        })
    }

    fn perturb(rec: &Reconstruction, seed: u64, deg: f64, frac: f64) -> Reconstruction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = rec.clone();
        for pose in out.poses.iter_mut().skip(1) {
            let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            pose.rotation = UnitQuaternion::from_scaled_axis(axis * deg.to_radians()) * pose.rotation;
            let dir = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            pose.translation += dir * frac * pose.translation.norm();
        }
        out
    }

    #[test]
    fn recovers_perturbed_poses() {
        let scene = RingScene::generate(&RingSceneConfig::default());
        let truth = scene.reconstruction(0.0);
        let start = perturb(&truth, 1, 1.0, 0.01);
        let (out, report) = bundle_adjust(&start, &scene.intrinsics, 10.0, &BundleOptions::default()).unwrap();
        assert!(report.final_rmse < 1e-6, "{report:?}");
        let err = scene.aligned_pose_errors(&out.poses);
        assert!(err.max_center < 1e-5 && err.max_rotation < 1e-5, "{err:?}");
    }

    #[test]
    fn schur_and_dense_agree() {
        let scene = small_scene();
        let start = perturb(&scene.reconstruction(0.5), 2, 0.5, 0.01);
        let one = BundleOptions {
            max_iterations: 1,
            ..Default::default()
        };
        let (a, _) = bundle_adjust(&start, &scene.intrinsics, 10.0, &one).unwrap();
        let (b, _) = bundle_adjust(
            &start,
            &scene.intrinsics,
            10.0,
            &BundleOptions {
                solver: LinearSolver::Dense,
                ..one
            },
        )
        .unwrap();
        for (p, q) in a.poses.iter().zip(&b.poses) {
            assert!((p.translation - q.translation).norm() < 1e-8);
            assert!(p.rotation.angle_to(&q.rotation) < 1e-8);
        }
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((p.position - q.position).norm() < 1e-8);
        }
    }

    #[test]
    fn infinite_prior_keeps_intrinsics() {
        let scene = small_scene();
        let start = perturb(&scene.reconstruction(0.5), 3, 1.0, 0.01);
        let (out, _) = bundle_adjust(&start, &scene.intrinsics, f64::INFINITY, &BundleOptions::default()).unwrap();
        for (k, c) in out.intrinsics.iter().zip(&scene.intrinsics) {
            assert!((k.fx - c.fx).abs() <= 1e-12 * c.fx);
            assert!((k.cy - c.cy).abs() <= 1e-12 * c.fy);
        }
    }

    #[test]
    fn zero_budget_is_identity() {
        let scene = small_scene();
        let start = perturb(&scene.reconstruction(0.5), 4, 1.0, 0.01);
        let opts = BundleOptions {
            max_iterations: 0,
            ..Default::default()
        };
        let (out, report) = bundle_adjust(&start, &scene.intrinsics, 10.0, &opts).unwrap();
        assert_eq!(out, start);
        assert_eq!(report.accepted_steps, 0);
    }

    #[test]
    fn first_camera_and_scale_are_fixed() {
        let scene = small_scene();
        let start = perturb(&scene.reconstruction(0.3), 5, 1.0, 0.02);
        let (out, _) = bundle_adjust(&start, &scene.intrinsics, 10.0, &BundleOptions::default()).unwrap();
        assert_eq!(out.poses[0], start.poses[0]);
    }

    #[test]
    fn nan_observation_is_named() {
        let scene = small_scene();
        let mut rec = scene.reconstruction(0.0);
        rec.points[7].observations[1].pixel.x = f64::NAN;
        let image = rec.points[7].observations[1].image;
        match bundle_adjust(&rec, &scene.intrinsics, 10.0, &BundleOptions::default()) {
            Err(Error::NonFinite { point, image: i, .. }) => {
                assert_eq!(point, 7);
                assert_eq!(i, image);
            }
            other => panic!("expected a non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn objective_never_increases() {
        let scene = small_scene();
        for seed in 0..5 {
            let start = perturb(&scene.reconstruction(1.0), seed, 3.0, 0.05);
            let (_, report) = bundle_adjust(&start, &scene.intrinsics, 10.0, &BundleOptions::default()).unwrap();
            assert!(report.objective_history.windows(2).all(|w| w[1] <= w[0]));
            assert!(report.final_objective <= report.initial_objective);
        }
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rot = UnitQuaternion::from_euler_angles(0.2, -0.4, 0.1);
        let t = Vector3::new(0.3, -0.2, 4.0);
        let k = Intrinsics::new(300.0, 310.0, 160.0, 120.0).unwrap();
        let x = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.5);
        let obs = Point2::new(150.0, 130.0);
        let j = project_with_jacobians(&rot, &t, &k, &x, &obs);
        let h = 1e-6;
        for c in 0..CAM {
            let eval = |s: f64| {
                let mut d = CamVec::zeros();
                d[c] = s;
                let r = UnitQuaternion::from_scaled_axis(Vector3::new(d[0], d[1], d[2])) * rot;
                let kk = Intrinsics {
                    fx: k.fx + d[6],
                    fy: k.fy + d[7],
                    cx: k.cx + d[8],
                    cy: k.cy + d[9],
                };
                project_with_jacobians(&r, &(t + Vector3::new(d[3], d[4], d[5])), &kk, &x, &obs).residual
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - j.d_camera.column(c)).norm() <= 1e-6 * (1.0 + fd.norm()), "column {c}");
        }
    }
}
