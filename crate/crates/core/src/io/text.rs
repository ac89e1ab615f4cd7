use crate::error::{Error, Result};
use crate::evaluation::Trajectory;
use crate::geometry::{Intrinsics, Pose};
use crate::matching::Correspondence;
use crate::noise_model::{ChannelNoise, MeanVarSample, NoiseParams};
use crate::scene_graph::{Edge, SceneGraph};
use nalgebra::{Point2, Quaternion, UnitQuaternion, Vector3};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Non-empty, non-comment lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(k, line)| {
        let line = line.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then(|| (k + 1, line.split_whitespace().collect()))
    })
}

fn numbers<const N: usize>(what: &str, line: usize, fields: &[&str]) -> Result<[f64; N]> {
    if fields.len() != N {
        return Err(Error::Parse(format!(
            "{what} line {line}: expected {N} numbers, found {} fields",
            fields.len()
        )));
    }
    let mut out = [0.0f64; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f
            .parse()
            .map_err(|_| Error::Parse(format!("{what} line {line}: {f:?} is not a number")))?;
        if !o.is_finite() {
            return Err(Error::Parse(format!("{what} line {line}: {f:?} is not finite")));
        }
    }
    Ok(out)
}

/// One camera per line: `name tx ty tz qx qy qz qw`, world-from-camera with
/// the translation being the camera center.
pub fn parse_poses(text: &str) -> Result<Trajectory> {
    let mut entries = Vec::new();
    for (line, fields) in records(text) {
        let [tx, ty, tz, qx, qy, qz, qw] = numbers::<7>("poses", line, &fields[1..])?;
        let q = Quaternion::new(qw, qx, qy, qz);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Parse(format!(
                "poses line {line}: quaternion norm {} is not 1",
                q.norm()
            )));
        }
        entries.push((
            fields[0].to_string(),
            Pose::new(UnitQuaternion::new_normalize(q), Vector3::new(tx, ty, tz)),
        ));
    }
    Trajectory::new(entries)
}

pub fn format_poses(traj: &Trajectory) -> String {
    let mut out = String::from("# name tx ty tz qx qy qz qw\n");
    for (name, p) in &traj.entries {
        let q = p.rotation.quaternion();
        let t = p.translation;
        writeln!(out, "{name} {} {} {} {} {} {} {}", t.x, t.y, t.z, q.i, q.j, q.k, q.w).unwrap();
    }
    out
}

/// `x1 y1 x2 y2 score` per line.
pub fn parse_correspondences(text: &str) -> Result<Vec<Correspondence>> {
    records(text)
        .map(|(line, fields)| {
            let [x1, y1, x2, y2, s] = numbers::<5>("correspondences", line, &fields)?;
            Ok(Correspondence::new(Point2::new(x1, y1), Point2::new(x2, y2), s))
        })
        .collect()
}

pub fn format_correspondences(matches: &[Correspondence]) -> String {
    let mut out = String::from("# x1 y1 x2 y2 score\n");
    for m in matches {
        writeln!(out, "{} {} {} {} {}", m.p1.x, m.p1.y, m.p2.x, m.p2.y, m.score).unwrap();
    }
    out
}

/// `channel a b` per line, channels numbered from 0 without gaps.
pub fn parse_noise_params(text: &str) -> Result<NoiseParams> {
    let mut by_channel = BTreeMap::new();
    for (line, fields) in records(text) {
        let [c, a, b] = numbers::<3>("noise parameters", line, &fields)?;
        if c < 0.0 || c.fract() != 0.0 {
            return Err(Error::Parse(format!("noise parameters line {line}: bad channel {c}")));
        }
        by_channel.insert(c as usize, ChannelNoise { a, b });
    }
    if by_channel.keys().copied().ne(0..by_channel.len()) {
        return Err(Error::Parse("noise parameters: channels must be 0, 1, ... without gaps".into()));
    }
    let params = NoiseParams {
        channels: by_channel.into_values().collect(),
    };
    params.validate()?;
    Ok(params)
}

pub fn format_noise_params(params: &NoiseParams) -> String {
    let mut out = String::from("# channel a b   (variance = a * mean + b, DN)\n");
    for (c, n) in params.channels.iter().enumerate() {
        writeln!(out, "{c} {} {}", n.a, n.b).unwrap();
    }
    out
}

/// CSV `channel,mean,variance`; a leading header row is skipped.
pub fn parse_mean_var_samples(text: &str) -> Result<Vec<MeanVarSample>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if out.is_empty() && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let [c, mean, variance] = numbers::<3>("samples", k + 1, &fields)?;
        if c < 0.0 || c.fract() != 0.0 {
            return Err(Error::Parse(format!("samples line {}: bad channel {c}", k + 1)));
        }
        out.push(MeanVarSample {
            channel: c as usize,
            mean,
            variance,
        });
    }
    Ok(out)
}

pub fn format_mean_var_samples(samples: &[MeanVarSample]) -> String {
    let mut out = String::from("channel,mean,variance\n");
    for s in samples {
        writeln!(out, "{},{},{}", s.channel, s.mean, s.variance).unwrap();
    }
    out
}

/// Per-image intrinsics; `*` supplies a default for unnamed images.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntrinsicsTable {
    pub default: Option<Intrinsics>,
    pub by_name: BTreeMap<String, Intrinsics>,
}

impl IntrinsicsTable {
    pub fn lookup(&self, name: &str) -> Result<Intrinsics> {
        self.by_name
            .get(name)
            .or(self.default.as_ref())
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no intrinsics for image {name:?}")))
    }
}

/// `name fx fy cx cy` per line.
pub fn parse_intrinsics(text: &str) -> Result<IntrinsicsTable> {
    let mut table = IntrinsicsTable::default();
    for (line, fields) in records(text) {
        let [fx, fy, cx, cy] = numbers::<4>("intrinsics", line, &fields[1..])?;
        let k = Intrinsics::new(fx, fy, cx, cy)?;
        if fields[0] == "*" {
            table.default = Some(k);
        } else {
            table.by_name.insert(fields[0].to_string(), k);
        }
    }
    Ok(table)
}

pub fn format_intrinsics(names: &[String], intrinsics: &[Intrinsics]) -> String {
    let mut out = String::from("# name fx fy cx cy\n");
    for (n, k) in names.iter().zip(intrinsics) {
        writeln!(out, "{n} {} {} {} {}", k.fx, k.fy, k.cx, k.cy).unwrap();
    }
    out
}

/// `i j score` per edge.
pub fn format_graph(graph: &SceneGraph) -> String {
    let mut out = format!("# nodes {}\n# i j score\n", graph.nodes);
    for e in &graph.edges {
        writeln!(out, "{} {} {}", e.i, e.j, e.score).unwrap();
    }
    out
}

pub fn parse_graph(text: &str, nodes: usize) -> Result<SceneGraph> {
    let mut edges = Vec::new();
    for (line, fields) in records(text) {
        let [i, j, score] = numbers::<3>("graph", line, &fields)?;
        let (i, j) = (i as usize, j as usize);
        if i >= nodes || j >= nodes || i == j {
            return Err(Error::Parse(format!("graph line {line}: bad edge ({i}, {j})")));
        }
        edges.push(Edge {
            i: i.min(j),
            j: i.max(j),
            score,
        });
    }
    Ok(SceneGraph { nodes, edges })
}

/// ASCII PLY with float positions and 8-bit colours.
pub fn format_ply(points: &[(Vector3<f64>, [u8; 3])]) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    );
    for (p, c) in points {
        writeln!(out, "{} {} {} {} {} {}", p.x as f32, p.y as f32, p.z as f32, c[0], c[1], c[2]).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poses_round_trip_exactly() {
        let t = Trajectory::new(vec![
            ("a.raw".into(), Pose::new(UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3), Vector3::new(1.0, -2.5, 1e-17))),
            ("b.raw".into(), Pose::identity()),
        ])
        .unwrap();
        let back = parse_poses(&format_poses(&t)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn bad_quaternion_is_rejected() {
        assert!(parse_poses("x 0 0 0 0 0 0 2\n").is_err());
        assert!(parse_poses("x 0 0 0 0 0 1\n").is_err());
    }

    #[test]
    fn samples_csv_with_header() {
        let s = parse_mean_var_samples("channel,mean,variance\n0,1.5,2\n2, 3, 4\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].channel, 2);
        assert_eq!(parse_mean_var_samples(&format_mean_var_samples(&s)).unwrap(), s);
    }

    #[test]
    fn intrinsics_wildcard() {
        let t = parse_intrinsics("* 100 100 50 40\nspecial 200 210 60 45 # comment\n").unwrap();
        assert_eq!(t.lookup("other").unwrap().fx, 100.0);
        assert_eq!(t.lookup("special").unwrap().fy, 210.0);
        assert!(parse_intrinsics("x 0 1 2 3").is_err());
    }

    #[test]
    fn noise_params_round_trip() {
        let p = NoiseParams::uniform(0.5, 1.25, 3);
        assert_eq!(parse_noise_params(&format_noise_params(&p)).unwrap(), p);
        assert!(parse_noise_params("1 0.5 1\n").is_err());
    }

    #[test]
    fn ply_header_counts_vertices() {
        let s = format_ply(&[(Vector3::new(1.0, 2.0, 3.0), [255, 0, 10])]);
        assert!(s.contains("element vertex 1\n"));
        assert!(s.ends_with("1 2 3 255 0 10\n"));
    }
}
