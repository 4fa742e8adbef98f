//! Analytic scenes with closed-form ray intersection, used as ground truth.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraError, Ray};
use crate::image::{DepthMap, Image};

/// Hits closer than this along a ray are ignored.
const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub rgb: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AaBox {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub rgb: [f64; 3],
}

/// Two-tone checker pattern drawn on a plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checker {
    pub period: f64,
    pub rgb: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub rgb: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checker: Option<Checker>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub rgb: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub name: String,
    pub spheres: Vec<Sphere>,
    pub boxes: Vec<AaBox>,
    pub plane: Option<Plane>,
    pub bbox_min: Vector3<f64>,
    pub bbox_max: Vector3<f64>,
}

pub const SCENE_NAMES: &[&str] = &["sphere", "sphere-plane"];

impl AnalyticScene {
    /// Built-in scenes: `sphere` (sphere in front of a flat wall) and the
    /// reference `sphere-plane` (sphere, box and a checkered back wall).
    pub fn preset(name: &str) -> Option<Self> {
        let sphere = Sphere {
            center: Vector3::new(0.0, 0.0, -4.0),
            radius: 1.0,
            rgb: [0.8, 0.2, 0.2],
        };
        let bbox_min = Vector3::new(-4.2, -4.2, -10.5);
        let bbox_max = Vector3::new(4.2, 4.2, -1.5);
        match name {
            "sphere" => Some(Self {
                name: name.into(),
                spheres: vec![sphere],
                boxes: vec![],
                plane: Some(Plane {
                    point: Vector3::new(0.0, 0.0, -10.0),
                    normal: Vector3::z(),
                    rgb: [0.85, 0.8, 0.6],
                    checker: None,
                }),
                bbox_min,
                bbox_max,
            }),
            "sphere-plane" => Some(Self {
                name: name.into(),
                spheres: vec![sphere],
                boxes: vec![AaBox {
                    min: Vector3::new(1.0, -1.6, -7.0),
                    max: Vector3::new(2.2, -0.4, -5.8),
                    rgb: [0.2, 0.45, 0.85],
                }],
                plane: Some(Plane {
                    point: Vector3::new(0.0, 0.0, -10.0),
                    normal: Vector3::z(),
                    rgb: [0.85, 0.8, 0.6],
                    checker: Some(Checker {
                        period: 1.0,
                        rgb: [0.3, 0.3, 0.35],
                    }),
                }),
                bbox_min,
                bbox_max,
            }),
            _ => None,
        }
    }

    /// Nearest hit with `t > HIT_EPS` along `origin + t * direction`.
    pub fn intersect(&self, origin: &Vector3<f64>, direction: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, rgb: [f64; 3]| {
            if t > HIT_EPS && best.is_none_or(|b| t < b.t) {
                best = Some(Hit { t, rgb });
            }
        };
        for s in &self.spheres {
            if let Some(t) = intersect_sphere(origin, direction, s) {
                consider(t, s.rgb);
            }
        }
        for b in &self.boxes {
            if let Some(t) = intersect_box(origin, direction, b) {
                consider(t, b.rgb);
            }
        }
        if let Some(p) = &self.plane {
            if let Some(t) = intersect_plane(origin, direction, p) {
                consider(t, plane_color(p, &(origin + direction * t)));
            }
        }
        best
    }

    pub fn intersect_ray(&self, ray: &Ray) -> Option<Hit> {
        self.intersect(&ray.origin, &ray.direction)
    }
}

fn intersect_sphere(o: &Vector3<f64>, d: &Vector3<f64>, s: &Sphere) -> Option<f64> {
    let oc = o - s.center;
    let a = d.dot(d);
    let half_b = oc.dot(d);
    let c = oc.dot(&oc) - s.radius * s.radius;
    let disc = half_b * half_b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let near = (-half_b - sq) / a;
    if near > HIT_EPS {
        return Some(near);
    }
    let far = (-half_b + sq) / a;
    (far > HIT_EPS).then_some(far)
}

fn intersect_box(o: &Vector3<f64>, d: &Vector3<f64>, b: &AaBox) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if d[i] == 0.0 {
            if o[i] < b.min[i] || o[i] > b.max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let (mut a, mut c) = ((b.min[i] - o[i]) * inv, (b.max[i] - o[i]) * inv);
        if a > c {
            std::mem::swap(&mut a, &mut c);
        }
        t0 = t0.max(a);
        t1 = t1.min(c);
    }
    if t0 > t1 {
        return None;
    }
    if t0 > HIT_EPS {
        Some(t0)
    } else if t1 > HIT_EPS {
        Some(t1)
    } else {
        None
    }
}

fn intersect_plane(o: &Vector3<f64>, d: &Vector3<f64>, p: &Plane) -> Option<f64> {
    let denom = d.dot(&p.normal);
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = (p.point - o).dot(&p.normal) / denom;
    (t > HIT_EPS).then_some(t)
}

fn plane_color(p: &Plane, x: &Vector3<f64>) -> [f64; 3] {
    let Some(checker) = &p.checker else {
        return p.rgb;
    };
    let n = p.normal.normalize();
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = (helper - n * n.dot(&helper)).normalize();
    let e2 = n.cross(&e1);
    let rel = x - p.point;
    let a = (rel.dot(&e1) / checker.period).floor() as i64;
    let b = (rel.dot(&e2) / checker.period).floor() as i64;
    if (a + b).rem_euclid(2) == 0 {
        p.rgb
    } else {
        checker.rgb
    }
}

/// Flat-shaded image and axial depth of the nearest surface at every pixel
/// center. Misses are black with depth 0.
pub fn oracle_render(scene: &AnalyticScene, camera: &Camera) -> (Image, DepthMap) {
    let (w, h) = (camera.width() as usize, camera.height() as usize);
    let hits: Vec<Option<Hit>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let ray = camera.ray_unchecked(x as f64 + 0.5, y as f64 + 0.5, 1.0, 2.0);
            scene.intersect_ray(&ray)
        })
        .collect();
    let image = Image::from_pixels(
        w,
        h,
        hits.iter()
            .map(|o| o.map_or([0.0; 3], |hit| hit.rgb))
            .collect(),
    );
    let depth = DepthMap::from_values(
        w,
        h,
        hits.iter().map(|o| o.map_or(0.0, |hit| hit.t)).collect(),
    );
    (image, depth)
}

/// Forward-facing camera placement: cameras sit on a sphere of radius
/// `radius` around `target`, displaced by small yaw/pitch angles, all
/// looking at `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcRig {
    pub target: Vector3<f64>,
    pub radius: f64,
    /// Maximum yaw for training views, degrees.
    pub span_deg: f64,
    pub focal: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for ArcRig {
    fn default() -> Self {
        Self {
            target: Vector3::new(0.0, 0.0, -10.0),
            radius: 12.0,
            span_deg: 7.0,
            focal: 100.0,
            width: 64,
            height: 64,
        }
    }
}

/// Yaw/pitch (degrees) of held-out views, fixed so test sets match across view counts.
const TEST_ANGLES: [(f64, f64); 5] = [
    (-3.5, 2.0),
    (0.5, -2.5),
    (4.0, 1.0),
    (-5.5, -1.5),
    (2.0, 3.0),
];

impl ArcRig {
    pub fn camera_at(
        &self,
        yaw_deg: f64,
        pitch_deg: f64,
        scale: f64,
    ) -> Result<Camera, CameraError> {
        let (yaw, pitch) = (yaw_deg.to_radians(), pitch_deg.to_radians());
        let offset = Vector3::new(
            yaw.sin() * pitch.cos(),
            pitch.sin(),
            yaw.cos() * pitch.cos(),
        );
        let eye = self.target + offset * self.radius;
        let (w, h) = (self.width as f64 * scale, self.height as f64 * scale);
        Camera::look_at(
            self.focal * scale,
            self.focal * scale,
            w / 2.0,
            h / 2.0,
            w.round() as u32,
            h.round() as u32,
            eye,
            self.target,
            Vector3::y(),
        )
    }

    /// Yaw/pitch of the `i`-th of `n` training views: yaw evenly spread over
    /// the span, pitch alternating so that larger sets also vary vertically.
    pub fn train_angles(&self, n: usize) -> Vec<(f64, f64)> {
        let s = self.span_deg;
        (0..n)
            .map(|i| {
                let yaw = if n == 1 {
                    0.0
                } else {
                    -s + 2.0 * s * i as f64 / (n - 1) as f64
                };
                let pitch = match i % 3 {
                    0 => 0.0,
                    1 => 0.5 * s,
                    _ => -0.5 * s,
                };
                (yaw, if n <= 2 { 0.0 } else { pitch })
            })
            .collect()
    }

    pub fn test_angles(&self, n: usize) -> Vec<(f64, f64)> {
        let k = self.span_deg / 7.0;
        (0..n)
            .map(|i| TEST_ANGLES[i % TEST_ANGLES.len()])
            .map(|(a, b)| (a * k, b * k))
            .collect()
    }
}
