//! Deterministic synthetic gesture source.
//!
//! A gesture is a wrist trajectory (Catmull-Rom through four control points
//! in the unit cube) plus per-finger flexion ramps over a fixed 21-point
//! hand skeleton. The hand is oriented along the trajectory tangent, so the
//! per-frame normalization (which removes translation and scale) still
//! leaves each class a distinctive orientation-and-flexion signature.

use crate::data::landmarks::{
    normalize_landmarks, LandmarkFrame, LandmarkSequence, FRAME_FEATURES, NUM_LANDMARKS,
};
use crate::error::{Error, Result};
use crate::rng::{child_seed, Rng};

const FINGERS: usize = 5;
const MAX_FLEXION: f64 = std::f64::consts::FRAC_PI_2;

#[derive(Clone, Debug, PartialEq)]
pub struct GestureTemplate {
    pub class: usize,
    /// Wrist path control points, each inside the unit cube.
    pub control_points: [[f64; 3]; 4],
    /// Per-finger flexion angle at the start of the gesture, radians.
    pub flexion_start: [f64; FINGERS],
    /// Per-finger flexion angle at the end of the gesture, radians.
    pub flexion_end: [f64; FINGERS],
}

impl GestureTemplate {
    pub fn validate(&self) -> Result<()> {
        for p in &self.control_points {
            if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidConfig(format!(
                    "control point {p:?} outside the unit cube"
                )));
            }
        }
        for angles in [&self.flexion_start, &self.flexion_end] {
            if angles.iter().any(|&a| !(0.0..=MAX_FLEXION).contains(&a)) {
                return Err(Error::InvalidConfig(format!(
                    "flexion angles {angles:?} outside [0, pi/2]"
                )));
            }
        }
        Ok(())
    }
}

/// Base skeleton: per finger, the knuckle position in the palm plane and the
/// three segment lengths. Distances are in wrist-to-middle-knuckle units.
struct Finger {
    base: [f64; 3],
    dir: [f64; 3],
    segments: [f64; 3],
}

fn skeleton() -> [Finger; FINGERS] {
    let f = |base: [f64; 3], dir: [f64; 3], segments: [f64; 3]| {
        let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        Finger {
            base,
            dir: [dir[0] / n, dir[1] / n, dir[2] / n],
            segments,
        }
    };
    [
        // thumb: landmarks 1-4 hang off a CMC joint low on the palm edge
        f([-0.45, 0.25, 0.0], [-0.70, 0.70, 0.0], [0.32, 0.28, 0.24]),
        // index: landmarks 5-8
        f([-0.25, 0.95, 0.0], [-0.08, 1.0, 0.0], [0.42, 0.26, 0.20]),
        // middle: landmarks 9-12 (landmark 9 is the normalization reference)
        f([0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.46, 0.28, 0.22]),
        // ring: landmarks 13-16
        f([0.22, 0.95, 0.0], [0.08, 1.0, 0.0], [0.42, 0.26, 0.20]),
        // pinky: landmarks 17-20
        f([0.42, 0.82, 0.0], [0.20, 1.0, 0.0], [0.32, 0.20, 0.16]),
    ]
}

/// Landmark offsets (relative to the wrist) for the skeleton posed with the
/// given per-finger flexion angles. Fingers curl out of the palm plane:
/// segment k of a finger tilts by k * theta toward +z.
fn posed_offsets(flexion: &[f64; FINGERS]) -> [[f64; 3]; NUM_LANDMARKS] {
    let mut pts = [[0.0; 3]; NUM_LANDMARKS];
    for (fi, finger) in skeleton().iter().enumerate() {
        let theta = flexion[fi];
        let base_landmark = 1 + fi * 4;
        pts[base_landmark] = finger.base;
        let mut cursor = finger.base;
        for (si, &len) in finger.segments.iter().enumerate() {
            let angle = theta * (si + 1) as f64;
            let (sin, cos) = angle.sin_cos();
            cursor = [
                cursor[0] + len * finger.dir[0] * cos,
                cursor[1] + len * finger.dir[1] * cos,
                cursor[2] + len * (finger.dir[2] * cos + sin),
            ];
            pts[base_landmark + si + 1] = cursor;
        }
    }
    pts
}

/// Catmull-Rom position and tangent at u in [0, 1] over four control points
/// (endpoints duplicated as phantom points, so the curve spans P0..P3).
fn catmull_rom(points: &[[f64; 3]; 4], u: f64) -> ([f64; 3], [f64; 3]) {
    let scaled = u.clamp(0.0, 1.0) * 3.0;
    let seg = (scaled.floor() as usize).min(2);
    let t = scaled - seg as f64;
    let idx = |i: isize| -> [f64; 3] { points[i.clamp(0, 3) as usize] };
    let (p0, p1, p2, p3) = (
        idx(seg as isize - 1),
        idx(seg as isize),
        idx(seg as isize + 1),
        idx(seg as isize + 2),
    );
    let mut pos = [0.0; 3];
    let mut tan = [0.0; 3];
    for a in 0..3 {
        let (a0, a1, a2, a3) = (p0[a], p1[a], p2[a], p3[a]);
        let c1 = -a0 + a2;
        let c2 = 2.0 * a0 - 5.0 * a1 + 4.0 * a2 - a3;
        let c3 = -a0 + 3.0 * a1 - 3.0 * a2 + a3;
        pos[a] = 0.5 * (2.0 * a1 + c1 * t + c2 * t * t + c3 * t * t * t);
        tan[a] = 0.5 * (c1 + 2.0 * c2 * t + 3.0 * c3 * t * t);
    }
    (pos, tan)
}

/// Rotation taking the rest "fingers up" axis (0, 1, 0) onto `target`
/// (Rodrigues). Near-zero or near-parallel targets fall back gracefully.
fn orientation_matrix(target: [f64; 3]) -> [[f64; 3]; 3] {
    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let norm = (target[0] * target[0] + target[1] * target[1] + target[2] * target[2]).sqrt();
    if norm < 1e-9 {
        return identity;
    }
    let d = [target[0] / norm, target[1] / norm, target[2] / norm];
    let cos = d[1]; // dot with (0,1,0)
    let axis = [d[2], 0.0, -d[0]]; // (0,1,0) x d
    let s = (axis[0] * axis[0] + axis[2] * axis[2]).sqrt();
    if s < 1e-9 {
        if cos > 0.0 {
            return identity;
        }
        // Antiparallel: half-turn about z.
        return [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let k = [axis[0] / s, axis[1] / s, axis[2] / s];
    let sin = s;
    let mut rot = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let eye = if i == j { 1.0 } else { 0.0 };
            let kk = k[i] * k[j];
            // K is the cross-product matrix of k.
            let kx = match (i, j) {
                (0, 1) => -k[2],
                (0, 2) => k[1],
                (1, 0) => k[2],
                (1, 2) => -k[0],
                (2, 0) => -k[1],
                (2, 1) => k[0],
                _ => 0.0,
            };
            rot[i][j] = eye * cos + kx * sin + kk * (1.0 - cos);
        }
    }
    rot
}

fn rotate(rot: &[[f64; 3]; 3], p: [f64; 3]) -> [f64; 3] {
    [
        rot[0][0] * p[0] + rot[0][1] * p[1] + rot[0][2] * p[2],
        rot[1][0] * p[0] + rot[1][1] * p[1] + rot[1][2] * p[2],
        rot[2][0] * p[0] + rot[2][1] * p[1] + rot[2][2] * p[2],
    ]
}

fn lerp(a: f64, b: f64, u: f64) -> f64 {
    a + (b - a) * u
}

/// Ease-in-out flexion schedule: fingers settle before the gesture ends, so
/// the closing frames of every gesture are nearly static. That keeps
/// trailing stream windows (gesture tail plus a held pose) close to the
/// training distribution.
fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// Sample a gesture: T uniform time points along the trajectory, fingers at
/// interpolated flexion, i.i.d. Gaussian noise on every raw coordinate, then
/// per-frame normalization. Deterministic per (template, T, seed).
pub fn generate_gesture(
    template: &GestureTemplate,
    t_len: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<LandmarkSequence> {
    template.validate()?;
    if t_len < 2 {
        return Err(Error::InvalidConfig(format!(
            "gesture length must be >= 2 frames, got {t_len}"
        )));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let mut rng = Rng::seed_from(seed);
    let mut frames = Vec::with_capacity(t_len);
    for i in 0..t_len {
        let u = i as f64 / (t_len - 1) as f64;
        let (pos, tan) = catmull_rom(&template.control_points, u);
        let rot = orientation_matrix(tan);
        let mut flexion = [0.0; FINGERS];
        for f in 0..FINGERS {
            flexion[f] = lerp(
                template.flexion_start[f],
                template.flexion_end[f],
                smoothstep(u),
            );
        }
        let offsets = posed_offsets(&flexion);
        let mut raw = [0.0; FRAME_FEATURES];
        for (li, &offset) in offsets.iter().enumerate() {
            let world = rotate(&rot, offset);
            for a in 0..3 {
                raw[3 * li + a] = pos[a] + world[a] + rng.normal(0.0, noise_sigma);
            }
        }
        frames.push(normalize_landmarks(&raw)?);
    }
    LandmarkSequence::new(frames, template.class)
}

/// A neutral resting hand (no flexion, identity orientation) with optional
/// noise; the idle filler between gestures in a stream.
pub fn rest_frame(noise_sigma: f64, rng: &mut Rng) -> Result<LandmarkFrame> {
    let offsets = posed_offsets(&[0.0; FINGERS]);
    let mut raw = [0.0; FRAME_FEATURES];
    for (li, &offset) in offsets.iter().enumerate() {
        for a in 0..3 {
            raw[3 * li + a] = offset[a] + rng.normal(0.0, noise_sigma);
        }
    }
    normalize_landmarks(&raw)
}

/// Procedural template catalog: class k of n gets a distinct arc through the
/// unit cube and a distinct finger-flexion pattern.
pub fn default_templates(classes: usize) -> Result<Vec<GestureTemplate>> {
    if classes == 0 {
        return Err(Error::InvalidConfig("need at least one class".into()));
    }
    let mut out = Vec::with_capacity(classes);
    // Each class sweeps an arc confined to its own disjoint angular sector,
    // so the hand orientation (which follows the trajectory tangent) never
    // visits another class's range: windows that see only part of a gesture
    // still carry orientations unique to that class. Control points advance
    // with ease-in-out spacing, putting the bulk of the motion mid-gesture.
    let arc_fractions = [0.0, 0.12, 0.82, 1.0];
    let sector = std::f64::consts::TAU / classes as f64;
    let winding = 0.72 * sector;
    for k in 0..classes {
        let phase = sector * k as f64;
        let rising = k % 2 == 0;
        let mut control_points = [[0.0; 3]; 4];
        for (j, point) in control_points.iter_mut().enumerate() {
            let s = arc_fractions[j];
            let angle = phase + winding * s;
            let z = if rising {
                0.25 + 0.45 * s
            } else {
                0.70 - 0.45 * s
            };
            *point = [0.5 + 0.35 * angle.cos(), 0.5 + 0.35 * angle.sin(), z];
        }
        let pattern = k + 1;
        let mut flexion_end = [0.0; FINGERS];
        for (f, flex) in flexion_end.iter_mut().enumerate() {
            if pattern >> f & 1 == 1 {
                *flex = 0.9 * MAX_FLEXION;
            }
        }
        out.push(GestureTemplate {
            class: k,
            control_points,
            flexion_start: [0.0; FINGERS],
            flexion_end,
        });
    }
    Ok(out)
}

/// Generate `samples_per_class` landmark sequences from every template.
/// Sample i of the whole run draws from `child_seed(seed, i)`, so paired
/// modalities generated from the same seed line up instance for instance.
pub fn generate_dataset(
    templates: &[GestureTemplate],
    samples_per_class: usize,
    t_len: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<LandmarkSequence>> {
    let mut out = Vec::with_capacity(templates.len() * samples_per_class);
    for (ci, template) in templates.iter().enumerate() {
        for j in 0..samples_per_class {
            let index = (ci * samples_per_class + j) as u64;
            out.push(generate_gesture(
                template,
                t_len,
                noise_sigma,
                child_seed(seed, index),
            )?);
        }
    }
    Ok(out)
}
