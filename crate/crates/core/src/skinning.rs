//! Canonical skinning-weight volume and inverse linear blend skinning.

use std::sync::Arc;

use diffcore::{softmax_in_place, CustomBackward, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, scale, sub, Aabb, Vec3};
use crate::skeleton::{Pose, Skeleton};

/// Denominator below which inverse skinning is undefined.
pub const EPSILON_W: f64 = 1e-9;

/// Logit given to the background channel at initialization.
const BACKGROUND_LOGIT: f64 = -2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeLayout {
    pub resolution: [usize; 3],
    pub bbox: Aabb,
    pub bones: usize,
    pub background: bool,
}

impl VolumeLayout {
    pub fn channels(&self) -> usize {
        self.bones + usize::from(self.background)
    }

    pub fn vertex_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution[1] + j) * self.resolution[2] + k
    }

    pub fn vertex_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let e = self.bbox.extent();
        let idx = [i, j, k];
        std::array::from_fn(|a| self.bbox.min[a] + e[a] * idx[a] as f64 / (self.resolution[a] - 1) as f64)
    }

    /// The eight lattice vertices around `p` with their trilinear weights, or
    /// `None` outside the box.
    pub fn corners(&self, p: Vec3) -> Option<[(usize, f64); 8]> {
        if !self.bbox.contains(p) {
            return None;
        }
        let e = self.bbox.extent();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let n = self.resolution[a] - 1;
            let u = (p[a] - self.bbox.min[a]) / e[a] * n as f64;
            let i = (u.floor().max(0.0) as usize).min(n - 1);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let mut out = [(0usize, 0.0); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (di, dj, dk) = (c >> 2 & 1, c >> 1 & 1, c & 1);
            let w = (if di == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dj == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dk == 1 { frac[2] } else { 1.0 - frac[2] });
            *slot = (self.vertex_index(base[0] + di, base[1] + dj, base[2] + dk), w);
        }
        Some(out)
    }
}

/// Trainable voxel grid of per-vertex skinning logits, one row per vertex.
#[derive(Debug, Clone)]
pub struct WeightVolume {
    pub layout: VolumeLayout,
    pub logits: Arc<Tensor>,
}

/// Channel-softmaxed copy of a volume's logits.
#[derive(Debug, Clone)]
pub struct WeightTable {
    pub values: Vec<f64>,
    pub channels: usize,
}

impl WeightTable {
    pub fn from_logits(logits: &Tensor, channels: usize) -> WeightTable {
        let mut values = logits.data().to_vec();
        for row in values.chunks_mut(channels) {
            softmax_in_place(row);
        }
        WeightTable { values, channels }
    }

    fn vertex(&self, v: usize) -> &[f64] {
        &self.values[v * self.channels..(v + 1) * self.channels]
    }
}

/// Result of mapping one observation-space point to canonical space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalSample {
    pub x_c: Vec3,
    pub foreground_weight: f64,
    pub valid: bool,
}

impl CanonicalSample {
    const INVALID: CanonicalSample = CanonicalSample {
        x_c: [0.0; 3],
        foreground_weight: 0.0,
        valid: false,
    };
}

impl WeightVolume {
    pub fn new(layout: VolumeLayout, logits: Tensor) -> Result<WeightVolume> {
        if layout.resolution.iter().any(|&n| n < 2) {
            return Err(Error::Config("weight volume needs at least 2 vertices per axis".into()));
        }
        if layout.bbox.is_degenerate() {
            return Err(Error::Config("weight volume bounding box is degenerate".into()));
        }
        let want = [layout.vertex_count(), layout.channels()];
        if logits.shape() != want {
            return Err(Error::Config(format!(
                "weight volume logits have shape {:?}, expected {want:?}",
                logits.shape()
            )));
        }
        Ok(WeightVolume {
            layout,
            logits: Arc::new(logits),
        })
    }

    pub fn table(&self) -> WeightTable {
        WeightTable::from_logits(&self.logits, self.layout.channels())
    }

    /// Interpolated weights at `p`; outside the box the background channel
    /// is 1 and every bone channel 0.
    pub fn query(&self, p: Vec3) -> Vec<f64> {
        query_weights(&self.layout, &self.table(), p)
    }

    pub fn inverse_lbs(&self, pose: &Pose, x: Vec3) -> CanonicalSample {
        inverse_lbs(&self.layout, &self.table(), pose, x)
    }
}

pub fn query_weights(layout: &VolumeLayout, table: &WeightTable, p: Vec3) -> Vec<f64> {
    let c = layout.channels();
    let mut out = vec![0.0; c];
    match layout.corners(p) {
        Some(corners) => {
            for (v, w) in corners {
                for (o, s) in out.iter_mut().zip(table.vertex(v)) {
                    *o += w * s;
                }
            }
        }
        None if layout.background => out[c - 1] = 1.0,
        None => {}
    }
    out
}

/// Bone channel `k` and the background channel at `p`.
fn bone_and_background(layout: &VolumeLayout, table: &WeightTable, k: usize, p: Vec3) -> (f64, f64) {
    let bg = layout.background.then(|| layout.channels() - 1);
    match layout.corners(p) {
        Some(corners) => {
            let mut a = 0.0;
            let mut b = 0.0;
            for (v, w) in corners {
                let row = table.vertex(v);
                a += w * row[k];
                if let Some(bg) = bg {
                    b += w * row[bg];
                }
            }
            (a, b)
        }
        None => (0.0, if bg.is_some() { 1.0 } else { 0.0 }),
    }
}

/// `x_c = Σ_k w^o_k (R_k x + t_k)` with `w^o_k` the canonical bone weights
/// at each candidate, normalized over bones. The foreground weight is one
/// minus the background channel blended with the same weights.
pub fn inverse_lbs(layout: &VolumeLayout, table: &WeightTable, pose: &Pose, x: Vec3) -> CanonicalSample {
    let mut den = 0.0;
    let mut num = [0.0; 3];
    let mut bsum = 0.0;
    for k in 0..layout.bones {
        let y = pose.to_canonical(k, x);
        let (a, b) = bone_and_background(layout, table, k, y);
        den += a;
        bsum += a * b;
        for d in 0..3 {
            num[d] += a * y[d];
        }
    }
    if !(den >= EPSILON_W) {
        return CanonicalSample::INVALID;
    }
    CanonicalSample {
        x_c: scale(num, 1.0 / den),
        foreground_weight: 1.0 - bsum / den,
        valid: true,
    }
}

/// Normalized observation weights `w^o_k` at `x`, or `None` when invalid.
pub fn observation_weights(layout: &VolumeLayout, table: &WeightTable, pose: &Pose, x: Vec3) -> Option<Vec<f64>> {
    let a: Vec<f64> = (0..layout.bones)
        .map(|k| bone_and_background(layout, table, k, pose.to_canonical(k, x)).0)
        .collect();
    let den: f64 = a.iter().sum();
    (den >= EPSILON_W).then(|| a.iter().map(|v| v / den).collect())
}

/// Logits for Gaussian bumps of width `sigma` around each canonical bone
/// segment plus a constant background logit.
pub fn init_weight_volume(
    skeleton: &Skeleton,
    resolution: [usize; 3],
    sigma: f64,
    pad: f64,
    background: bool,
) -> Result<WeightVolume> {
    if resolution.iter().any(|&n| n < 8) {
        return Err(Error::Config(format!("weight volume resolution must be ≥ 8 per axis, got {resolution:?}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("skinning sigma must be positive, got {sigma}")));
    }
    skeleton.validate()?;
    let bbox = Aabb::around(&skeleton.rest_joints, pad);
    if bbox.is_degenerate() {
        return Err(Error::Config("skinning bounding box is degenerate".into()));
    }
    let layout = VolumeLayout {
        resolution,
        bbox,
        bones: skeleton.bone_count(),
        background,
    };
    let c = layout.channels();
    let mut data = vec![0.0; layout.vertex_count() * c];
    for i in 0..resolution[0] {
        for j in 0..resolution[1] {
            for k in 0..resolution[2] {
                let p = layout.vertex_position(i, j, k);
                let row = &mut data[layout.vertex_index(i, j, k) * c..][..c];
                for (b, slot) in row.iter_mut().take(layout.bones).enumerate() {
                    let (s0, s1) = skeleton.rest_segment(b);
                    let d = segment_distance(p, s0, s1);
                    *slot = -d * d / (2.0 * sigma * sigma);
                }
                if background {
                    row[c - 1] = BACKGROUND_LOGIT;
                }
            }
        }
    }
    WeightVolume::new(layout, Tensor::new(vec![layout.vertex_count(), c], data)?)
}

pub fn segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = sub(b, a);
    let l2 = dot(ab, ab);
    let t = if l2 > 0.0 { (dot(sub(p, a), ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    norm(sub(p, crate::geometry::add(a, scale(ab, t))))
}

struct SkinBackward {
    layout: VolumeLayout,
    table: Arc<WeightTable>,
    pose: Arc<Pose>,
    points: Arc<Vec<Vec3>>,
}

impl CustomBackward for SkinBackward {
    fn backward(&self, grad_out: &[f64], _inputs: &[&Tensor], output: &Tensor) -> Vec<Option<Vec<f64>>> {
        let c = self.layout.channels();
        let bg = self.layout.background.then(|| c - 1);
        let table = &self.table;
        let mut g_table = vec![0.0; table.values.len()];
        let kb = self.layout.bones;
        let mut ys = vec![[0.0; 3]; kb];
        let mut ab = vec![(0.0, 0.0); kb];
        for (n, &x) in self.points.iter().enumerate() {
            let out = &output.data()[n * 4..n * 4 + 4];
            let g = &grad_out[n * 4..n * 4 + 4];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let mut den = 0.0;
            let mut bsum = 0.0;
            for k in 0..kb {
                ys[k] = self.pose.to_canonical(k, x);
                ab[k] = bone_and_background(&self.layout, table, k, ys[k]);
                den += ab[k].0;
                bsum += ab[k].0 * ab[k].1;
            }
            if !(den >= EPSILON_W) {
                continue;
            }
            let xc = [out[0], out[1], out[2]];
            let ratio = bsum / den;
            for k in 0..kb {
                let (a, b) = ab[k];
                let ga = (g[0] * (ys[k][0] - xc[0]) + g[1] * (ys[k][1] - xc[1]) + g[2] * (ys[k][2] - xc[2])) / den
                    - g[3] * (b - ratio) / den;
                let gb = -g[3] * a / den;
                if let Some(corners) = self.layout.corners(ys[k]) {
                    for (v, w) in corners {
                        g_table[v * c + k] += w * ga;
                        if let Some(bgc) = bg {
                            g_table[v * c + bgc] += w * gb;
                        }
                    }
                }
            }
        }
        // Softmax Jacobian per vertex.
        let mut g_logits = g_table;
        for (gv, sv) in g_logits.chunks_mut(c).zip(table.values.chunks(c)) {
            let inner: f64 = gv.iter().zip(sv).map(|(g, s)| g * s).sum();
            for (gi, si) in gv.iter_mut().zip(sv) {
                *gi = si * (*gi - inner);
            }
        }
        vec![Some(g_logits)]
    }
}

/// Batched inverse skinning on the tape. Output is `n × 4` with rows
/// `[x_c, foreground_weight]`; invalid points produce zero rows. Gradients
/// flow to the volume logits.
pub fn skin_on_tape(
    tape: &mut Tape,
    logits: Var,
    layout: &VolumeLayout,
    pose: Arc<Pose>,
    points: Arc<Vec<Vec3>>,
) -> Result<(Var, Vec<bool>)> {
    let want = [layout.vertex_count(), layout.channels()];
    if tape.shape(logits) != want {
        return Err(Error::InvalidArgument(format!(
            "skinning logits shape {:?} does not match layout {want:?}",
            tape.shape(logits)
        )));
    }
    let table = Arc::new(WeightTable::from_logits(tape.value(logits), layout.channels()));
    let mut data = Vec::with_capacity(points.len() * 4);
    let mut valid = Vec::with_capacity(points.len());
    for &x in points.iter() {
        let s = inverse_lbs(layout, &table, &pose, x);
        data.extend_from_slice(&s.x_c);
        data.push(s.foreground_weight);
        valid.push(s.valid);
    }
    let out = Tensor::matrix(points.len(), 4, data)?;
    let var = tape.custom(
        &[logits],
        out,
        Box::new(SkinBackward {
            layout: *layout,
            table,
            pose,
            points,
        }),
    );
    Ok((var, valid))
}
