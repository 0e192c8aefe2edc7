//! Procedural articulated subjects with closed-form radiance, including a
//! pose-dependent bulge that no rigid canonical field can represent.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Meta, SceneDataset, Split, ViewMeta, DATASET_VERSION};
use crate::error::{Error, Result};
use crate::geometry::{add, dot, norm, scale, sub, Aabb, Mat3, Vec3};
use crate::image::{Image, Mask};
use crate::model::pose_bounds;
use crate::render::{Camera, Ray};
use crate::skeleton::{forward_kinematics, Pose, Skeleton};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub bones: usize,
    pub subjects: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Held-out cameras on the ring around the subject.
    pub eval_views: usize,
    /// Every this many frames is also rendered from the held-out cameras.
    pub eval_stride: usize,
    /// Bulge amplitude in meters.
    pub amplitude: f64,
    /// Bulge spatial frequency along the bone, cycles per meter.
    pub frequency: f64,
    pub sigma_max: f64,
    /// Width of the density ramp at the capsule surface, meters.
    pub softness: f64,
    pub camera_distance: f64,
    pub focal: f64,
    pub background: [f64; 3],
    pub gt_samples: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            bones: 4,
            subjects: 1,
            frames: 100,
            width: 128,
            height: 128,
            eval_views: 4,
            eval_stride: 10,
            amplitude: 0.025,
            frequency: 4.0,
            sigma_max: 60.0,
            softness: 0.02,
            camera_distance: 3.5,
            focal: 330.0,
            background: [0.0; 3],
            gt_samples: 2048,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("frame count must be at least 1".into()));
        }
        if self.subjects == 0 {
            return Err(Error::Config("subject count must be at least 1".into()));
        }
        if !(2..=23).contains(&self.bones) {
            return Err(Error::Config(format!("bone count must be in 2..=23, got {}", self.bones)));
        }
        if self.width == 0 || self.height == 0 || self.gt_samples == 0 || self.eval_stride == 0 {
            return Err(Error::Config("image size, sample count, and eval stride must be positive".into()));
        }
        if !(self.amplitude >= 0.0 && self.sigma_max > 0.0 && self.softness > 0.0 && self.focal > 0.0 && self.camera_distance > 0.0) {
            return Err(Error::Config("scene amplitudes, densities, and camera parameters must be positive".into()));
        }
        Ok(())
    }
}

const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.35, 0.25],
    [0.25, 0.55, 0.85],
    [0.35, 0.8, 0.4],
    [0.9, 0.75, 0.25],
    [0.7, 0.35, 0.8],
    [0.3, 0.8, 0.8],
];

const STRIPE_FREQUENCY: f64 = 12.0;
const STRIPE_DEPTH: f64 = 0.2;
const BLEND_WIDTH: f64 = 0.04;

/// Appearance of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectBody {
    pub skeleton: Skeleton,
    pub radii: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    pub amplitude: f64,
    pub frequency: f64,
    pub sigma_max: f64,
    pub softness: f64,
}

impl SubjectBody {
    /// Subject `s` of a scene: scaled skeleton, radii, shifted palette, and
    /// a larger bulge for later subjects.
    pub fn for_subject(cfg: &SceneConfig, s: usize) -> Result<SubjectBody> {
        let base = Skeleton::humanoid(cfg.bones)?;
        let size = 1.0 + 0.08 * s as f64;
        let skeleton = Skeleton {
            parent: base.parent.clone(),
            rest_joints: base.rest_joints.iter().map(|&j| scale(j, size)).collect(),
        };
        let thick = if s % 2 == 1 { 1.25 } else { 1.0 };
        let radii = (0..cfg.bones)
            .map(|k| thick * if skeleton.parent[k] < 0 { 0.11 } else { 0.06 })
            .collect();
        let colors = (0..cfg.bones).map(|k| PALETTE[(k + 2 * s) % PALETTE.len()]).collect();
        Ok(SubjectBody {
            skeleton,
            radii,
            colors,
            amplitude: cfg.amplitude * (1.0 + 0.5 * s as f64),
            frequency: cfg.frequency,
            sigma_max: cfg.sigma_max,
            softness: cfg.softness,
        })
    }

    /// Surface radius of bone `k` at arc length `s` with bend angle `bend`.
    pub fn radius(&self, k: usize, s: f64, bend: f64) -> f64 {
        self.radii[k] + self.amplitude * bulge(self.frequency, s, bend)
    }
}

fn bulge(frequency: f64, s: f64, bend: f64) -> f64 {
    (2.0 * PI * frequency * s + 2.0 * bend).sin()
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Bend angles at every joint of a posed skeleton: the largest relative
/// rotation among non-root bones starting at that joint.
pub fn joint_bends(skeleton: &Skeleton, pose: &Pose) -> Vec<f64> {
    let mut bends = vec![0.0; skeleton.joint_count()];
    for k in 0..skeleton.bone_count() {
        if skeleton.parent_bone(k).is_some() {
            let j = skeleton.start_joint(k);
            bends[j] = f64::max(bends[j], pose.local_rotation(skeleton, k).angle());
        }
    }
    bends
}

/// Pose-dependent quantities reused for every point of one frame.
#[derive(Debug, Clone)]
pub struct PosedBody<'a> {
    pub body: &'a SubjectBody,
    pub pose: &'a Pose,
    pub bends: Vec<f64>,
    spheres: Vec<(Vec3, f64)>,
}

impl<'a> PosedBody<'a> {
    pub fn new(body: &'a SubjectBody, pose: &'a Pose) -> Self {
        let sk = &body.skeleton;
        let spheres = (0..sk.bone_count())
            .map(|k| {
                let a = pose.joints[sk.start_joint(k)];
                let b = pose.joints[sk.end_joint(k)];
                let center = scale(add(a, b), 0.5);
                let r = 0.5 * norm(sub(b, a)) + body.radii[k] + body.amplitude + body.softness;
                (center, r)
            })
            .collect();
        PosedBody {
            body,
            pose,
            bends: joint_bends(sk, pose),
            spheres,
        }
    }

    /// Ground-truth `(color, density)` at world point `x`.
    pub fn radiance(&self, x: Vec3) -> ([f64; 3], f64) {
        let (c, sigma, _) = self.field(x);
        (c, sigma)
    }

    /// Radiance plus a lower bound on the distance from `x` to any point
    /// of nonzero density.
    fn field(&self, x: Vec3) -> ([f64; 3], f64, f64) {
        let sk = &self.body.skeleton;
        let mut clearance = f64::INFINITY;
        let mut density: f64 = 0.0;
        let mut dmin = f64::INFINITY;
        let mut per_bone = [(0.0, 0.0, 0.0); 23];
        for (k, slot) in per_bone.iter_mut().enumerate().take(sk.bone_count()) {
            let y = self.pose.to_canonical(k, x);
            let (a, b) = sk.rest_segment(k);
            let ab = sub(b, a);
            let len = norm(ab);
            let u = (dot(sub(y, a), ab) / (len * len)).clamp(0.0, 1.0);
            let d = norm(sub(y, add(a, scale(ab, u))));
            let bend = self.bends[sk.start_joint(k)] * (1.0 - u) + self.bends[sk.end_joint(k)] * u;
            let s = u * len;
            let r = self.body.radius(k, s, bend);
            density = density.max(smoothstep((r - d) / self.body.softness + 0.5));
            dmin = dmin.min(d);
            clearance = clearance.min(d - (self.body.radii[k] + self.body.amplitude + 0.5 * self.body.softness));
            *slot = (d, s, bend);
        }
        if density == 0.0 {
            return ([0.0; 3], 0.0, clearance);
        }
        let mut wsum = 0.0;
        let mut color = [0.0; 3];
        for (k, &(d, s, bend)) in per_bone.iter().enumerate().take(sk.bone_count()) {
            let w = (-((d * d - dmin * dmin) / (2.0 * BLEND_WIDTH * BLEND_WIDTH))).exp();
            let stripe = 1.0 + STRIPE_DEPTH * (2.0 * PI * STRIPE_FREQUENCY * s).sin();
            let shade = 1.0 + self.body.amplitude / self.body.radii[k] * bulge(self.body.frequency, s, bend);
            for a in 0..3 {
                color[a] += w * self.body.colors[k][a] * stripe * shade;
            }
            wsum += w;
        }
        let color = color.map(|c| (c / wsum).clamp(0.0, 1.0));
        (color, self.body.sigma_max * density, 0.0)
    }

    /// Ray-parameter intervals where density can be nonzero.
    fn occupied(&self, ray: &Ray) -> Vec<(f64, f64)> {
        let mut iv: Vec<(f64, f64)> = self
            .spheres
            .iter()
            .filter_map(|&(c, r)| {
                let oc = sub(ray.origin, c);
                let b = dot(oc, ray.dir);
                let disc = b * b - (dot(oc, oc) - r * r);
                (disc > 0.0).then(|| (-b - disc.sqrt(), -b + disc.sqrt()))
            })
            .collect();
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        iv
    }

    /// Dense bin-center quadrature of the analytic field; returns color
    /// without background and the final transmittance.
    pub fn march(&self, ray: &Ray, bounds: &Aabb, samples: usize) -> ([f64; 3], f64) {
        let Some((near, far)) = bounds.intersect(ray.origin, ray.dir) else {
            return ([0.0; 3], 1.0);
        };
        let dt = (far - near) / samples as f64;
        let intervals = self.occupied(ray);
        let mut t_trans = 1.0;
        let mut c = [0.0; 3];
        // Samples before `skip` are provably empty.
        let mut skip = f64::NEG_INFINITY;
        for m in 0..samples {
            let t = near + (m as f64 + 0.5) * dt;
            if t < skip || !intervals.iter().any(|&(a, b)| t >= a && t <= b) {
                continue;
            }
            let (col, sigma, clearance) = self.field(ray.at(t));
            if sigma == 0.0 {
                skip = t + clearance;
                continue;
            }
            let alpha = 1.0 - (-sigma * dt).exp();
            for a in 0..3 {
                c[a] += t_trans * alpha * col[a];
            }
            t_trans *= 1.0 - alpha;
            if t_trans < 1e-12 {
                break;
            }
        }
        (c, t_trans)
    }
}

/// Smooth deterministic pose trajectory: a slow full turn in yaw with
/// per-bone swinging limbs.
pub fn pose_trajectory(body: &SubjectBody, frames: usize, subject: usize, seed: u64) -> Result<Vec<Pose>> {
    let sk = &body.skeleton;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(subject as u64 + 1)));
    let limbs: Vec<(Vec3, f64, f64, f64)> = (0..sk.bone_count())
        .map(|_| {
            let axis = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0];
            (axis, rng.random_range(0.3..0.8), rng.random_range(0.0..2.0 * PI), rng.random_range(1.0..3.0))
        })
        .collect();
    let lean_phase = rng.random_range(0.0..2.0 * PI);
    (0..frames)
        .map(|f| {
            let s = f as f64 / frames as f64;
            let yaw = Mat3::from_axis_angle([0.0, 1.0, 0.0], 2.0 * PI * s);
            let lean = Mat3::from_axis_angle([1.0, 0.0, 0.0], 0.1 * (2.0 * PI * 2.0 * s + lean_phase).sin());
            let locals: Vec<Mat3> = (0..sk.bone_count())
                .map(|k| {
                    if sk.parent_bone(k).is_none() {
                        yaw.mul(&lean)
                    } else {
                        let (axis, amp, phase, cycles) = limbs[k];
                        Mat3::from_axis_angle(axis, amp * (2.0 * PI * cycles * s + phase).sin())
                    }
                })
                .collect();
            let sway = [0.05 * (2.0 * PI * s).sin(), 0.02 * (4.0 * PI * s).sin(), 0.0];
            forward_kinematics(sk, &locals, sway)
        })
        .collect()
}

/// Training camera in front of the subject (index 0) followed by
/// `eval_views` cameras evenly spaced on a ring, skipping the training
/// direction.
pub fn camera_rig(cfg: &SceneConfig, target: Vec3) -> Vec<Camera> {
    let n = cfg.eval_views + 1;
    (0..n)
        .map(|v| {
            let a = 2.0 * PI * v as f64 / n as f64;
            let eye = add(target, [cfg.camera_distance * a.sin(), 0.4, cfg.camera_distance * a.cos()]);
            Camera::looking_at(eye, target, [0.0, 1.0, 0.0], cfg.focal, cfg.width, cfg.height)
        })
        .collect()
}

/// Ground-truth image and mask (alpha > 0.5) of a posed subject.
pub fn render_ground_truth(body: &SubjectBody, pose: &Pose, camera: &Camera, cfg: &SceneConfig) -> Result<(Image, Mask)> {
    let posed = PosedBody::new(body, pose);
    let bounds = pose_bounds(pose);
    let (w, h) = (camera.width, camera.height);
    let mut img = Image::new(w, h);
    let mut mask = Mask {
        width: w,
        height: h,
        data: vec![false; w * h],
    };
    for y in 0..h {
        for x in 0..w {
            let ray = camera.pixel_ray(x, y)?;
            let (c, t) = posed.march(&ray, &bounds, cfg.gt_samples);
            img.set_pixel(x, y, std::array::from_fn(|a| (c[a] + t * cfg.background[a]).clamp(0.0, 1.0)));
            mask.data[y * w + x] = 1.0 - t > 0.5;
        }
    }
    Ok((img.quantized(), mask))
}

/// Renders the whole dataset in memory.
pub fn generate_dataset(cfg: &SceneConfig) -> Result<SceneDataset> {
    cfg.validate()?;
    let bodies = (0..cfg.subjects)
        .map(|s| SubjectBody::for_subject(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let poses = bodies
        .iter()
        .enumerate()
        .map(|(s, b)| pose_trajectory(b, cfg.frames, s, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    let rest = &bodies[0].skeleton.rest_joints;
    let bb = Aabb::around(rest, 0.0);
    let target = scale(add(bb.min, bb.max), 0.5);
    let cameras = camera_rig(cfg, target);

    let mut views = Vec::new();
    for s in 0..cfg.subjects {
        for f in 0..cfg.frames {
            views.push(ViewMeta::new(s, f, 0, Split::Train));
            if f % cfg.eval_stride == 0 {
                for v in 1..cameras.len() {
                    views.push(ViewMeta::new(s, f, v, Split::Eval));
                }
            }
        }
    }
    let rendered: Vec<Result<(Image, Mask)>> = views
        .par_iter()
        .map(|v| render_ground_truth(&bodies[v.subject], &poses[v.subject][v.frame], &cameras[v.camera], cfg))
        .collect();
    let mut images = Vec::with_capacity(views.len());
    let mut masks = Vec::with_capacity(views.len());
    for r in rendered {
        let (i, m) = r?;
        images.push(i);
        masks.push(m);
    }
    Ok(SceneDataset {
        meta: Meta {
            version: DATASET_VERSION,
            width: cfg.width,
            height: cfg.height,
            background: cfg.background,
            seed: cfg.seed,
            scene: cfg.clone(),
            bodies,
            cameras,
            poses,
            views,
        },
        images,
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body(amplitude: f64) -> SubjectBody {
        let cfg = SceneConfig {
            amplitude,
            ..Default::default()
        };
        SubjectBody::for_subject(&cfg, 0).unwrap()
    }

    #[test]
    fn far_point_is_empty() {
        let b = body(0.02);
        let pose = Pose::identity(&b.skeleton);
        let p = PosedBody::new(&b, &pose);
        assert_eq!(p.radiance([5.0, 5.0, 5.0]).1, 0.0);
    }

    #[test]
    fn bone_interior_is_dense() {
        let b = body(0.02);
        let pose = Pose::identity(&b.skeleton);
        let p = PosedBody::new(&b, &pose);
        let (_, sigma) = p.radiance([0.0, 0.25, 0.0]);
        assert_eq!(sigma, b.sigma_max);
    }

    #[test]
    fn trajectory_poses_validate() {
        let b = body(0.02);
        for pose in pose_trajectory(&b, 20, 0, 1).unwrap() {
            pose.validate(&b.skeleton, 1e-9).unwrap();
        }
    }

    #[test]
    fn rejects_zero_frames() {
        let cfg = SceneConfig {
            frames: 0,
            ..Default::default()
        };
        assert!(matches!(generate_dataset(&cfg), Err(Error::Config(_))));
    }
}
