//! Procedural duct courses.
//!
//! A duct is a chain of straight cylindrical segments of a common radius.
//! Each segment direction is the previous one rotated by a random bend
//! angle about a random axis perpendicular to it. The interior is the union
//! of the finite segment tubes, so clearance is the largest per-segment
//! `radius - distance_to_axis`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("rotation axis is not unit length (norm {0})")]
    NonUnitAxis(f64),
    #[error("invalid duct parameters: {0}")]
    InvalidParams(String),
    #[error("malformed duct json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DuctParams {
    pub n_segments: usize,
    pub radius: f64,
    /// `[min, max]` segment length in meters.
    pub length_range: [f64; 2],
    /// Upper bound on the bend between consecutive segments, radians.
    pub max_bend_angle: f64,
    pub seed: u64,
    /// Defaults to `n_segments` when unset.
    pub n_waypoints: Option<usize>,
}

impl Default for DuctParams {
    fn default() -> Self {
        Self {
            n_segments: 7,
            radius: 0.25,
            length_range: [1.0, 2.5],
            max_bend_angle: 30f64.to_radians(),
            seed: 0,
            n_waypoints: None,
        }
    }
}

impl DuctParams {
    pub fn waypoint_count(&self) -> usize {
        self.n_waypoints.unwrap_or(self.n_segments)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let bad = |msg: &str| Err(GeomError::InvalidParams(msg.to_string()));
        if self.n_segments == 0 {
            return bad("duct.n_segments must be positive");
        }
        if self.waypoint_count() == 0 {
            return bad("duct.n_waypoints must be positive");
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("duct.radius must be positive");
        }
        let [lo, hi] = self.length_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("duct.length_range must satisfy 0 < min <= max");
        }
        if !(self.max_bend_angle >= 0.0 && self.max_bend_angle < PI / 2.0) {
            return bad("duct.max_bend_angle must lie in [0, pi/2)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Vec3,
    pub direction: Vec3,
    pub length: f64,
    pub radius: f64,
}

impl Segment {
    pub fn end(&self) -> Vec3 {
        self.start + self.direction * self.length
    }

    /// Parameter of the closest axis point, clamped to `[0, length]`.
    pub fn project(&self, p: &Vec3) -> f64 {
        (p - self.start).dot(&self.direction).clamp(0.0, self.length)
    }

    pub fn point_at(&self, s: f64) -> Vec3 {
        self.start + self.direction * s
    }

    /// Distance from `p` to the finite axis.
    pub fn axis_distance(&self, p: &Vec3) -> f64 {
        (p - self.point_at(self.project(p))).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Duct {
    pub segments: Vec<Segment>,
    pub waypoints: Vec<Vec3>,
    pub seed: u64,
    /// Cumulative arc length at the start of each segment.
    arc_starts: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterlineQuery {
    pub closest_point: Vec3,
    pub segment_index: usize,
    pub arc_length: f64,
    pub radial_deviation: f64,
}

/// Rotates `v` about the unit axis `k` by `theta` radians (Rodrigues).
pub fn rotate_rodrigues(v: &Vec3, k: &Vec3, theta: f64) -> Result<Vec3, GeomError> {
    let norm = k.norm();
    if (norm - 1.0).abs() >= UNIT_TOL {
        return Err(GeomError::NonUnitAxis(norm));
    }
    let (sin, cos) = theta.sin_cos();
    Ok(v * cos + k.cross(v) * sin + k * (k.dot(v) * (1.0 - cos)))
}

/// Orthonormal pair spanning the plane perpendicular to the unit vector `d`.
fn perpendicular_basis(d: &Vec3) -> (Vec3, Vec3) {
    // Pick the world axis least aligned with d.
    let helper = if d.x.abs() <= d.y.abs() && d.x.abs() <= d.z.abs() {
        Vec3::x()
    } else if d.y.abs() <= d.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let e1 = d.cross(&helper).normalize();
    let e2 = d.cross(&e1);
    (e1, e2)
}

pub fn generate_duct(params: &DuctParams) -> Result<Duct, GeomError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let [lo, hi] = params.length_range;
    let sample_length = |rng: &mut ChaCha8Rng| if lo == hi { lo } else { rng.random_range(lo..=hi) };

    let mut segments = Vec::with_capacity(params.n_segments);
    let mut start = Vec3::zeros();
    let mut direction = Vec3::x();
    for i in 0..params.n_segments {
        if i > 0 {
            let (e1, e2) = perpendicular_basis(&direction);
            let phi = rng.random_range(0.0..2.0 * PI);
            let axis = (e1 * phi.cos() + e2 * phi.sin()).normalize();
            let theta = if params.max_bend_angle > 0.0 { rng.random_range(0.0..=params.max_bend_angle) } else { 0.0 };
            direction = rotate_rodrigues(&direction, &axis, theta)?.normalize();
        }
        let length = sample_length(&mut rng);
        let seg = Segment { start, direction, length, radius: params.radius };
        start = seg.end();
        segments.push(seg);
    }

    let mut duct = Duct::from_segments(segments, Vec::new(), params.seed);
    duct.waypoints = duct.place_waypoints(params.waypoint_count());
    Ok(duct)
}

impl Duct {
    fn from_segments(segments: Vec<Segment>, waypoints: Vec<Vec3>, seed: u64) -> Self {
        let mut arc_starts = Vec::with_capacity(segments.len());
        let mut acc = 0.0;
        for s in &segments {
            arc_starts.push(acc);
            acc += s.length;
        }
        Self { segments, waypoints, seed, arc_starts }
    }

    /// One waypoint per segment end when the counts agree, otherwise evenly
    /// spaced in arc length with the last one at the duct exit.
    fn place_waypoints(&self, count: usize) -> Vec<Vec3> {
        if count == self.segments.len() {
            return self.segments.iter().map(Segment::end).collect();
        }
        let total = self.total_length();
        (1..=count).map(|i| self.point_at_arc(total * i as f64 / count as f64)).collect()
    }

    pub fn radius(&self) -> f64 {
        self.segments[0].radius
    }

    pub fn total_length(&self) -> f64 {
        let last = self.segments.len() - 1;
        self.arc_starts[last] + self.segments[last].length
    }

    pub fn arc_start(&self, segment: usize) -> f64 {
        self.arc_starts[segment]
    }

    /// Centerline point at arc length `s`, clamped to the duct.
    pub fn point_at_arc(&self, s: f64) -> Vec3 {
        let s = s.clamp(0.0, self.total_length());
        let idx = self.segment_at_arc(s);
        let seg = &self.segments[idx];
        seg.point_at((s - self.arc_starts[idx]).min(seg.length))
    }

    pub fn segment_at_arc(&self, s: f64) -> usize {
        match self.arc_starts.partition_point(|&a| a <= s) {
            0 => 0,
            n => n - 1,
        }
    }

    /// Signed clearance: positive inside, zero on the wall, negative outside.
    pub fn clearance(&self, p: &Vec3) -> f64 {
        self.segments.iter().map(|s| s.radius - s.axis_distance(p)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Nearest point on the piecewise-linear centerline. Exact ties resolve
    /// to the lower segment index.
    pub fn closest_centerline(&self, p: &Vec3) -> CenterlineQuery {
        let mut best: Option<CenterlineQuery> = None;
        for (i, seg) in self.segments.iter().enumerate() {
            let s = seg.project(p);
            let c = seg.point_at(s);
            let d = (p - c).norm();
            if best.is_none_or(|b| d < b.radial_deviation) {
                best = Some(CenterlineQuery {
                    closest_point: c,
                    segment_index: i,
                    arc_length: self.arc_starts[i] + s,
                    radial_deviation: d,
                });
            }
        }
        best.expect("duct has at least one segment")
    }

    pub fn to_json(&self) -> String {
        let mut out = String::new();
        let v3 = |v: &Vec3| format!("[{},{},{}]", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z));
        write!(out, "{{\"seed\":{},\"radius\":{},\"segments\":[", self.seed, fmt_f64(self.radius())).unwrap();
        for (i, s) in self.segments.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(
                out,
                "{{\"start\":{},\"direction\":{},\"length\":{}}}",
                v3(&s.start),
                v3(&s.direction),
                fmt_f64(s.length)
            )
            .unwrap();
        }
        out.push_str("],\"waypoints\":[");
        let wps: Vec<String> = self.waypoints.iter().map(v3).collect();
        out.push_str(&wps.join(","));
        out.push_str("]}\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self, GeomError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct SegJson {
            start: [f64; 3],
            direction: [f64; 3],
            length: f64,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct DuctJson {
            seed: u64,
            radius: f64,
            segments: Vec<SegJson>,
            waypoints: Vec<[f64; 3]>,
        }
        let raw: DuctJson = serde_json::from_str(text).map_err(|e| GeomError::Json(e.to_string()))?;
        if raw.segments.is_empty() {
            return Err(GeomError::Json("duct has no segments".into()));
        }
        let segments = raw
            .segments
            .into_iter()
            .map(|s| Segment {
                start: Vec3::from(s.start),
                direction: Vec3::from(s.direction),
                length: s.length,
                radius: raw.radius,
            })
            .collect();
        let waypoints = raw.waypoints.into_iter().map(Vec3::from).collect();
        Ok(Self::from_segments(segments, waypoints, raw.seed))
    }

    /// Triangle mesh of the tube walls, `sides`-gon cross-section per segment.
    pub fn to_obj(&self, sides: usize) -> String {
        let mut out = String::from("# duct mesh\n");
        let mut base = 1usize;
        for seg in &self.segments {
            let (e1, e2) = perpendicular_basis(&seg.direction);
            for ring in [seg.start, seg.end()] {
                for j in 0..sides {
                    let a = 2.0 * PI * j as f64 / sides as f64;
                    let p = ring + (e1 * a.cos() + e2 * a.sin()) * seg.radius;
                    writeln!(out, "v {} {} {}", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z)).unwrap();
                }
            }
            for j in 0..sides {
                let k = (j + 1) % sides;
                let (a, b, c, d) = (base + j, base + k, base + sides + k, base + sides + j);
                writeln!(out, "f {a} {b} {c}").unwrap();
                writeln!(out, "f {a} {c} {d}").unwrap();
            }
            base += 2 * sides;
        }
        out
    }
}

/// 17 significant digits, enough to round-trip any f64.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
