//! Bones, joints, per-frame rigid transforms, and the sinusoidal encoding of
//! joint positions consumed by the pose code.

use std::f64::consts::PI;
use std::sync::Arc;

use diffcore::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add, sub, Mat3, Vec3};

/// Frequency bands used by the joint encoding.
pub const DEFAULT_BANDS: usize = 10;

/// Rest-pose joint positions of the built-in humanoid, pelvis first.
const HUMANOID_JOINTS: [Vec3; 24] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.5, 0.0],
    [0.3, 0.5, 0.0],
    [0.58, 0.5, 0.0],
    [-0.3, 0.5, 0.0],
    [-0.58, 0.5, 0.0],
    [0.0, 0.62, 0.0],
    [0.0, 0.82, 0.0],
    [0.1, -0.05, 0.0],
    [0.1, -0.45, 0.0],
    [0.1, -0.85, 0.0],
    [-0.1, -0.05, 0.0],
    [-0.1, -0.45, 0.0],
    [-0.1, -0.85, 0.0],
    [0.1, -0.88, 0.12],
    [-0.1, -0.88, 0.12],
    [0.68, 0.5, 0.0],
    [-0.68, 0.5, 0.0],
    [0.74, 0.5, 0.0],
    [-0.74, 0.5, 0.0],
    [0.1, -0.88, 0.18],
    [-0.1, -0.88, 0.18],
    [0.0, 0.86, 0.05],
    [0.6, 0.5, 0.06],
];

/// Parent bone of each built-in bone. Every prefix is itself a valid tree.
const HUMANOID_PARENTS: [i64; 23] = [-1, 0, 1, 0, 3, 0, 5, -1, 7, 8, -1, 10, 11, 9, 12, 2, 4, 15, 16, 13, 14, 6, 2];

/// Start joint of each built-in bone (bone `k` always ends at joint `k + 1`).
const HUMANOID_STARTS: [usize; 23] = [0, 1, 2, 1, 4, 1, 6, 0, 8, 9, 0, 11, 12, 10, 13, 3, 5, 16, 17, 14, 15, 7, 3];

/// Kinematic tree. Bone `k` runs from its start joint to joint `k + 1`; the
/// start joint is the end joint of the parent bone, or joint 0 for root bones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    /// Parent bone per bone, `-1` for bones attached to the root joint.
    pub parent: Vec<i64>,
    /// `K + 1` canonical joint positions in meters.
    pub rest_joints: Vec<Vec3>,
}

impl Skeleton {
    /// The first `bones` bones of the built-in 23-bone humanoid.
    pub fn humanoid(bones: usize) -> Result<Skeleton> {
        if !(1..=23).contains(&bones) {
            return Err(Error::Config(format!("humanoid bone count must be in 1..=23, got {bones}")));
        }
        let sk = Skeleton {
            parent: HUMANOID_PARENTS[..bones].to_vec(),
            rest_joints: HUMANOID_JOINTS[..=bones].to_vec(),
        };
        debug_assert!((0..bones).all(|k| sk.start_joint(k) == HUMANOID_STARTS[k]));
        sk.validate()?;
        Ok(sk)
    }

    pub fn bone_count(&self) -> usize {
        self.parent.len()
    }

    pub fn joint_count(&self) -> usize {
        self.rest_joints.len()
    }

    pub fn parent_bone(&self, k: usize) -> Option<usize> {
        usize::try_from(self.parent[k]).ok()
    }

    pub fn start_joint(&self, k: usize) -> usize {
        self.parent_bone(k).map_or(0, |p| p + 1)
    }

    pub fn end_joint(&self, k: usize) -> usize {
        k + 1
    }

    /// Canonical segment of bone `k`.
    pub fn rest_segment(&self, k: usize) -> (Vec3, Vec3) {
        (self.rest_joints[self.start_joint(k)], self.rest_joints[self.end_joint(k)])
    }

    pub fn mean_bone_length(&self) -> f64 {
        let total: f64 = (0..self.bone_count())
            .map(|k| {
                let (a, b) = self.rest_segment(k);
                crate::geometry::norm(sub(b, a))
            })
            .sum();
        total / self.bone_count() as f64
    }

    /// Checks the tree structure and returns bones in parent-first order.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let k = self.bone_count();
        if k == 0 {
            return Err(Error::Config("skeleton has no bones".into()));
        }
        if self.rest_joints.len() != k + 1 {
            return Err(Error::Config(format!(
                "skeleton with {k} bones needs {} rest joints, got {}",
                k + 1,
                self.rest_joints.len()
            )));
        }
        if let Some(j) = self.rest_joints.iter().position(|j| !crate::geometry::is_finite(*j)) {
            return Err(Error::Config(format!("rest joint {j} is not finite")));
        }
        for (b, &p) in self.parent.iter().enumerate() {
            if p < -1 || p >= k as i64 || p == b as i64 {
                return Err(Error::Config(format!("bone {b} has invalid parent {p}")));
            }
        }
        // Depth-first from the virtual root; anything unreached sits on a cycle.
        let mut children = vec![Vec::new(); k];
        let mut roots = Vec::new();
        for b in 0..k {
            match self.parent_bone(b) {
                Some(p) => children[p].push(b),
                None => roots.push(b),
            }
        }
        let mut order = Vec::with_capacity(k);
        let mut stack: Vec<usize> = roots.into_iter().rev().collect();
        while let Some(b) = stack.pop() {
            order.push(b);
            stack.extend(children[b].iter().rev());
        }
        if order.len() != k {
            return Err(Error::Config("bone parent graph contains a cycle".into()));
        }
        Ok(order)
    }
}

/// Per-bone rigid transforms for one frame, in the observation-to-canonical
/// direction: `x_c = R_k x + t_k` for a point attached rigidly to bone `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotations: Vec<Mat3>,
    pub translations: Vec<Vec3>,
    /// All `K + 1` joints in observation space.
    pub joints: Vec<Vec3>,
}

impl Pose {
    pub fn identity(skeleton: &Skeleton) -> Pose {
        let k = skeleton.bone_count();
        Pose {
            rotations: vec![Mat3::IDENTITY; k],
            translations: vec![[0.0; 3]; k],
            joints: skeleton.rest_joints.clone(),
        }
    }

    /// Canonical-to-observation map of bone `k`: `x = Rᵀ (x_c − t)`.
    pub fn to_observation(&self, k: usize, xc: Vec3) -> Vec3 {
        self.rotations[k].transpose().mul_vec(sub(xc, self.translations[k]))
    }

    pub fn to_canonical(&self, k: usize, x: Vec3) -> Vec3 {
        add(self.rotations[k].mul_vec(x), self.translations[k])
    }

    /// Rotation of bone `k` relative to its parent, observation frame.
    pub fn local_rotation(&self, skeleton: &Skeleton, k: usize) -> Mat3 {
        let world = self.rotations[k].transpose();
        match skeleton.parent_bone(k) {
            Some(p) => self.rotations[p].mul(&world),
            None => world,
        }
    }

    /// Checks rotation validity and joint consistency against the skeleton.
    pub fn validate(&self, skeleton: &Skeleton, joint_tol: f64) -> Result<()> {
        let k = skeleton.bone_count();
        if self.rotations.len() != k || self.translations.len() != k || self.joints.len() != k + 1 {
            return Err(Error::InvalidArgument(format!(
                "pose sizes ({}, {}, {}) do not match a {k}-bone skeleton",
                self.rotations.len(),
                self.translations.len(),
                self.joints.len()
            )));
        }
        for (b, r) in self.rotations.iter().enumerate() {
            if !r.is_rotation(1e-9) {
                return Err(Error::InvalidArgument(format!("bone {b} rotation is not a proper rotation")));
            }
            if !crate::geometry::is_finite(self.translations[b]) {
                return Err(Error::InvalidArgument(format!("bone {b} translation is not finite")));
            }
        }
        for b in 0..k {
            for j in [skeleton.start_joint(b), skeleton.end_joint(b)] {
                let back = self.to_canonical(b, self.joints[j]);
                let err = crate::geometry::norm(sub(back, skeleton.rest_joints[j]));
                if !(err <= joint_tol) {
                    return Err(Error::InvalidArgument(format!(
                        "joint {j} is inconsistent with bone {b} transform (error {err:.3e} m)"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Poses the skeleton from per-bone rotations about each bone's start joint,
/// relative to the parent bone, plus a global translation.
pub fn forward_kinematics(skeleton: &Skeleton, local_rotations: &[Mat3], root_translation: Vec3) -> Result<Pose> {
    let order = skeleton.validate()?;
    let k = skeleton.bone_count();
    if local_rotations.len() != k {
        return Err(Error::InvalidArgument(format!(
            "expected {k} local rotations, got {}",
            local_rotations.len()
        )));
    }
    if let Some(b) = local_rotations.iter().position(|r| !r.is_rotation(1e-9)) {
        return Err(Error::InvalidArgument(format!("local rotation of bone {b} is not a rotation")));
    }
    // Canonical-to-observation affine maps x ↦ A x + b per bone.
    let mut lin = vec![Mat3::IDENTITY; k];
    let mut off = vec![[0.0; 3]; k];
    for &b in &order {
        let (pa, pb) = match skeleton.parent_bone(b) {
            Some(p) => (lin[p], off[p]),
            None => (Mat3::IDENTITY, root_translation),
        };
        let pivot = skeleton.rest_joints[skeleton.start_joint(b)];
        let l = &local_rotations[b];
        lin[b] = pa.mul(l);
        off[b] = add(pa.mul_vec(sub(pivot, l.mul_vec(pivot))), pb);
    }
    let mut joints = vec![[0.0; 3]; k + 1];
    joints[0] = add(skeleton.rest_joints[0], root_translation);
    for b in 0..k {
        let e = skeleton.end_joint(b);
        joints[e] = add(lin[b].mul_vec(skeleton.rest_joints[e]), off[b]);
    }
    let rotations: Vec<Mat3> = lin.iter().map(Mat3::transpose).collect();
    let translations = rotations
        .iter()
        .zip(&off)
        .map(|(r, o)| {
            let ro = r.mul_vec(*o);
            [-ro[0], -ro[1], -ro[2]]
        })
        .collect();
    Ok(Pose {
        rotations,
        translations,
        joints,
    })
}

/// Which joints feed the pose code, and in which frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSelection {
    pub include_root: bool,
    pub absolute: bool,
}

impl Default for JointSelection {
    fn default() -> Self {
        Self {
            include_root: false,
            absolute: false,
        }
    }
}

impl JointSelection {
    pub fn count(&self, skeleton: &Skeleton) -> usize {
        skeleton.joint_count() - usize::from(!self.include_root)
    }

    /// Joint positions in declaration order, root-relative unless `absolute`.
    pub fn select(&self, pose: &Pose) -> Vec<Vec3> {
        let root = pose.joints[0];
        let skip = usize::from(!self.include_root);
        pose.joints[skip..]
            .iter()
            .map(|&j| if self.absolute { j } else { sub(j, root) })
            .collect()
    }
}

/// `γ(J)`: one row of width `3 + 6·bands` per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPose(pub Tensor);

impl EncodedPose {
    pub fn joint_count(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }
}

pub fn encoding_width(bands: usize) -> usize {
    3 + 6 * bands
}

/// Row layout: `x, y, z`, then for each band `l` and axis `a` the pair
/// `sin(2^l π a), cos(2^l π a)`.
pub fn positional_encode(joints: &[Vec3], bands: usize) -> Result<EncodedPose> {
    if let Some(i) = joints.iter().position(|j| !crate::geometry::is_finite(*j)) {
        return Err(Error::InvalidArgument(format!("joint {i} is not finite")));
    }
    let width = encoding_width(bands);
    let mut data = Vec::with_capacity(joints.len() * width);
    for j in joints {
        data.extend_from_slice(j);
        for l in 0..bands {
            let f = f64::powi(2.0, l as i32) * PI;
            for &c in j {
                let (s, co) = (f * c).sin_cos();
                data.push(s);
                data.push(co);
            }
        }
    }
    Ok(EncodedPose(Tensor::matrix(joints.len(), width, data)?))
}

/// Differentiable version of [`positional_encode`] over a `J × 3` joint
/// tensor, with the same column layout.
pub fn positional_encode_on_tape(tape: &mut Tape, joints: Var, bands: usize) -> Result<Var> {
    let (j, c) = tape.value(joints).dims2("positional_encode")?;
    if c != 3 {
        return Err(Error::InvalidArgument(format!("joint tensor must be J×3, got J×{c}")));
    }
    let mut parts = vec![joints];
    for l in 0..bands {
        let scaled = tape.scale(joints, f64::powi(2.0, l as i32) * PI);
        let s = tape.sin(scaled);
        let co = tape.cos(scaled);
        parts.push(s);
        parts.push(co);
    }
    let wide = tape.concat_cols(&parts)?;
    let src_width = 3 + 6 * bands;
    let mut index = Vec::with_capacity(j * src_width);
    for r in 0..j {
        let base = r * src_width;
        index.extend((0..3).map(|a| base + a));
        for l in 0..bands {
            for a in 0..3 {
                index.push(base + 3 + 6 * l + a);
                index.push(base + 3 + 6 * l + 3 + a);
            }
        }
    }
    Ok(tape.gather(wide, Arc::new(index), vec![j, src_width])?)
}
