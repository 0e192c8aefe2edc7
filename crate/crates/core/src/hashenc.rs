//! Multiresolution hash encoding with the half-slice and half-freeze views
//! used by the rigid and residual branches.

use std::sync::Arc;

use diffcore::{CustomBackward, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub levels: usize,
    /// Half the per-entry feature width.
    pub half_width: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub max_resolution: usize,
}

impl GridConfig {
    pub const LOCAL: GridConfig = GridConfig {
        levels: 16,
        half_width: 2,
        log2_table_size: 19,
        base_resolution: 16,
        max_resolution: 512,
    };

    pub const GLOBAL: GridConfig = GridConfig {
        levels: 4,
        half_width: 2,
        log2_table_size: 19,
        base_resolution: 16,
        max_resolution: 512,
    };

    pub fn entry_width(&self) -> usize {
        2 * self.half_width
    }

    pub fn output_width(&self) -> usize {
        self.levels * self.entry_width()
    }

    pub fn sliced_width(&self) -> usize {
        self.levels * self.half_width
    }

    pub fn table_size(&self) -> usize {
        1usize << self.log2_table_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.half_width == 0 {
            return Err(Error::Config("hash grid needs at least one level and a nonzero width".into()));
        }
        if self.base_resolution == 0 || self.max_resolution < self.base_resolution {
            return Err(Error::Config(format!(
                "hash grid resolutions must satisfy 0 < base ({}) <= max ({})",
                self.base_resolution, self.max_resolution
            )));
        }
        if !(1..=28).contains(&self.log2_table_size) {
            return Err(Error::Config(format!("log2 table size {} out of range", self.log2_table_size)));
        }
        Ok(())
    }

    /// Geometric progression from base to max, bumped to be strictly
    /// increasing.
    pub fn resolutions(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::with_capacity(self.levels);
        let growth = if self.levels > 1 {
            ((self.max_resolution as f64).ln() - (self.base_resolution as f64).ln()) / (self.levels - 1) as f64
        } else {
            0.0
        };
        for l in 0..self.levels {
            let r = (self.base_resolution as f64 * (growth * l as f64).exp()).floor() as usize;
            let r = match out.last() {
                Some(&prev) if r <= prev => prev + 1,
                _ => r.max(1),
            };
            out.push(r);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub resolution: usize,
    pub offset: usize,
    pub size: usize,
    pub direct: bool,
}

impl Level {
    /// Table row (relative to the level) of lattice vertex `v`.
    pub fn slot(&self, v: [u32; 3]) -> usize {
        if self.direct {
            let n = self.resolution + 1;
            (v[0] as usize * n + v[1] as usize) * n + v[2] as usize
        } else {
            let h = v[0].wrapping_mul(PRIMES[0]) ^ v[1].wrapping_mul(PRIMES[1]) ^ v[2].wrapping_mul(PRIMES[2]);
            h as usize & (self.size - 1)
        }
    }
}

#[derive(Debug, Clone)]
pub struct HashGrid {
    pub config: GridConfig,
    pub bbox: Aabb,
    pub levels: Vec<Level>,
    /// All levels stacked, `rows × 2H`.
    pub entries: Arc<Tensor>,
}

/// Per-point lattice lookups for one level: table rows, trilinear weights,
/// and the weight derivatives with respect to the normalized coordinate.
struct Corners {
    rows: [usize; 8],
    weights: [f64; 8],
    dweights: [[f64; 3]; 8],
}

impl HashGrid {
    pub fn layout(config: GridConfig, bbox: Aabb) -> Result<(Vec<Level>, usize)> {
        config.validate()?;
        if bbox.is_degenerate() {
            return Err(Error::Config("hash grid bounding box is degenerate".into()));
        }
        let t = config.table_size();
        let mut levels = Vec::with_capacity(config.levels);
        let mut offset = 0;
        for res in config.resolutions() {
            let dense = (res + 1).checked_pow(3).unwrap_or(usize::MAX);
            let direct = dense <= t;
            let size = if direct { dense } else { t };
            levels.push(Level {
                resolution: res,
                offset,
                size,
                direct,
            });
            offset += size;
        }
        Ok((levels, offset))
    }

    pub fn zeros(config: GridConfig, bbox: Aabb) -> Result<HashGrid> {
        let (levels, rows) = Self::layout(config, bbox)?;
        Ok(HashGrid {
            config,
            bbox,
            levels,
            entries: Arc::new(Tensor::zeros(&[rows, config.entry_width()])),
        })
    }

    /// Entries uniform in `[-1e-4, 1e-4]`.
    pub fn random<R: Rng>(config: GridConfig, bbox: Aabb, rng: &mut R) -> Result<HashGrid> {
        let mut g = Self::zeros(config, bbox)?;
        let mut t = (*g.entries).clone();
        for v in t.data_mut() {
            *v = rng.random_range(-1e-4..=1e-4);
        }
        g.entries = Arc::new(t);
        Ok(g)
    }

    pub fn with_entries(&self, entries: Tensor) -> Result<HashGrid> {
        if entries.shape() != self.entries.shape() {
            return Err(Error::InvalidArgument(format!(
                "hash entries shape {:?} does not match {:?}",
                entries.shape(),
                self.entries.shape()
            )));
        }
        Ok(HashGrid {
            entries: Arc::new(entries),
            ..self.clone()
        })
    }

    pub fn output_width(&self) -> usize {
        self.config.output_width()
    }

    /// Table rows over all levels.
    pub fn rows(&self) -> usize {
        self.levels.last().map_or(0, |l| l.offset + l.size)
    }

    /// Copy without entries, for use alongside entries held elsewhere.
    pub fn meta(&self) -> HashGrid {
        HashGrid {
            entries: Arc::new(Tensor::zeros(&[0, 0])),
            ..self.clone()
        }
    }

    fn corners(&self, level: &Level, x: Vec3, need_d: bool) -> (Corners, [f64; 3]) {
        let e = self.bbox.extent();
        let res = level.resolution as f64;
        let mut base = [0u32; 3];
        let mut frac = [0.0; 3];
        // Scale factor of the position derivative, zero where clamped.
        let mut du = [0.0; 3];
        for a in 0..3 {
            let t = (x[a] - self.bbox.min[a]) / e[a];
            let inside = t > 0.0 && t < 1.0;
            let u = t.clamp(0.0, 1.0) * res;
            let i = (u.floor() as usize).min(level.resolution - 1);
            base[a] = i as u32;
            frac[a] = u - i as f64;
            du[a] = if inside { res / e[a] } else { 0.0 };
        }
        let mut c = Corners {
            rows: [0; 8],
            weights: [0.0; 8],
            dweights: [[0.0; 3]; 8],
        };
        for k in 0..8 {
            let bit = [k >> 2 & 1, k >> 1 & 1, k & 1];
            let f: [f64; 3] = std::array::from_fn(|a| if bit[a] == 1 { frac[a] } else { 1.0 - frac[a] });
            c.weights[k] = f[0] * f[1] * f[2];
            if need_d {
                let s: [f64; 3] = std::array::from_fn(|a| if bit[a] == 1 { 1.0 } else { -1.0 });
                c.dweights[k] = [s[0] * f[1] * f[2], f[0] * s[1] * f[2], f[0] * f[1] * s[2]];
            }
            let v = [base[0] + bit[0] as u32, base[1] + bit[1] as u32, base[2] + bit[2] as u32];
            c.rows[k] = level.offset + level.slot(v);
        }
        (c, du)
    }

    /// Concatenated per-level trilinear features, coarse to fine.
    pub fn query(&self, x: Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.output_width()];
        self.query_with(&self.entries, x, &mut out);
        out
    }

    pub fn query_with(&self, entries: &Tensor, x: Vec3, out: &mut [f64]) {
        let w = self.config.entry_width();
        let data = entries.data();
        for (l, level) in self.levels.iter().enumerate() {
            let (c, _) = self.corners(level, x, false);
            let dst = &mut out[l * w..(l + 1) * w];
            dst.fill(0.0);
            for k in 0..8 {
                let src = &data[c.rows[k] * w..(c.rows[k] + 1) * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += c.weights[k] * s;
                }
            }
        }
    }

    /// Batched query on the tape: `entries` is this grid's table, `points` an
    /// `n × 3` tensor of canonical positions. Gradients flow to both.
    pub fn query_on_tape(&self, tape: &mut Tape, entries: Var, points: Var) -> Result<Var> {
        let want = [self.rows(), self.config.entry_width()];
        if tape.shape(entries) != want {
            return Err(Error::InvalidArgument(format!(
                "hash entries shape {:?} does not match grid {want:?}",
                tape.shape(entries)
            )));
        }
        let (n, c) = tape.value(points).dims2("hash query")?;
        if c != 3 {
            return Err(Error::InvalidArgument(format!("hash query points must be n×3, got n×{c}")));
        }
        let width = self.output_width();
        let mut out = vec![0.0; n * width];
        {
            let table = tape.value(entries);
            let pts = tape.value(points).data();
            for i in 0..n {
                let x = [pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]];
                self.query_with(table, x, &mut out[i * width..(i + 1) * width]);
            }
        }
        let value = Tensor::matrix(n, width, out)?;
        Ok(tape.custom(&[entries, points], value, Box::new(HashBackward { grid: self.meta() })))
    }
}

struct HashBackward {
    grid: HashGrid,
}

impl CustomBackward for HashBackward {
    fn backward(&self, grad_out: &[f64], inputs: &[&Tensor], _output: &Tensor) -> Vec<Option<Vec<f64>>> {
        let entries = inputs[0];
        let pts = inputs[1].data();
        let w = self.grid.config.entry_width();
        let width = self.grid.output_width();
        let data = entries.data();
        let mut g_entries = vec![0.0; entries.len()];
        let mut g_points = vec![0.0; pts.len()];
        for i in 0..pts.len() / 3 {
            let g = &grad_out[i * width..(i + 1) * width];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let x = [pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]];
            for (l, level) in self.grid.levels.iter().enumerate() {
                let gl = &g[l * w..(l + 1) * w];
                let (c, du) = self.grid.corners(level, x, true);
                for k in 0..8 {
                    let row = c.rows[k] * w;
                    let mut dot = 0.0;
                    for j in 0..w {
                        g_entries[row + j] += c.weights[k] * gl[j];
                        dot += gl[j] * data[row + j];
                    }
                    for a in 0..3 {
                        g_points[3 * i + a] += dot * c.dweights[k][a] * du[a];
                    }
                }
            }
        }
        vec![Some(g_entries), Some(g_points)]
    }
}

fn check_width(len: usize, half_width: usize) -> Result<usize> {
    let w = 2 * half_width;
    if half_width == 0 || len % w != 0 {
        return Err(Error::InvalidArgument(format!(
            "feature width {len} is not a multiple of 2H = {w}"
        )));
    }
    Ok(len / w)
}

/// Column indices of the first `H` components of each level.
pub fn rigid_columns(levels: usize, half_width: usize) -> Vec<usize> {
    let w = 2 * half_width;
    (0..levels).flat_map(|l| (0..half_width).map(move |c| l * w + c)).collect()
}

/// `f^{:H}` for a single feature vector.
pub fn slice_rigid(f: &[f64], half_width: usize) -> Result<Vec<f64>> {
    let levels = check_width(f.len(), half_width)?;
    Ok(rigid_columns(levels, half_width).into_iter().map(|i| f[i]).collect())
}

/// The complementary halves, in level order.
pub fn slice_residual(f: &[f64], half_width: usize) -> Result<Vec<f64>> {
    let levels = check_width(f.len(), half_width)?;
    let w = 2 * half_width;
    Ok((0..levels)
        .flat_map(|l| (half_width..w).map(move |c| l * w + c))
        .map(|i| f[i])
        .collect())
}

/// `f^{:H}` over an `n × (L·2H)` feature matrix.
pub fn slice_rigid_on_tape(tape: &mut Tape, f: Var, half_width: usize) -> Result<Var> {
    let (n, width) = tape.value(f).dims2("slice_rigid")?;
    let levels = check_width(width, half_width)?;
    let cols = rigid_columns(levels, half_width);
    let index: Vec<usize> = (0..n).flat_map(|r| cols.iter().map(move |c| r * width + c)).collect();
    Ok(tape.gather(f, Arc::new(index), vec![n, cols.len()])?)
}

/// `f*`: values of `f`, with the first half of every level taken from a
/// gradient-stopped copy.
pub fn partial_freeze_on_tape(tape: &mut Tape, f: Var, half_width: usize) -> Result<Var> {
    let (n, width) = tape.value(f).dims2("partial_freeze")?;
    check_width(width, half_width)?;
    let frozen = tape.stop_gradient(f);
    let both = tape.concat_cols(&[frozen, f])?;
    let w = 2 * half_width;
    let mut index = Vec::with_capacity(n * width);
    for r in 0..n {
        for c in 0..width {
            let from_frozen = c % w < half_width;
            index.push(r * 2 * width + c + if from_frozen { 0 } else { width });
        }
    }
    Ok(tape.gather(both, Arc::new(index), vec![n, width])?)
}

/// Optional shared coarse grid plus one grid per subject.
#[derive(Debug, Clone)]
pub struct GridBundle {
    pub global: Option<HashGrid>,
    pub locals: Vec<HashGrid>,
}

impl GridBundle {
    pub fn rigid_width(&self) -> usize {
        self.global.as_ref().map_or(0, |g| g.output_width()) + self.locals[0].config.sliced_width()
    }

    pub fn nonrigid_width(&self) -> usize {
        self.global.as_ref().map_or(0, |g| g.output_width()) + self.locals[0].output_width()
    }
}

/// Tape handles for a bundle's parameters.
pub struct BundleVars {
    pub global: Option<Var>,
    pub locals: Vec<Var>,
}

/// `(ψ^G ⊕ (ψ^i)^{:H}, sg(ψ^G) ⊕ (ψ^i)*)` for a batch of canonical points.
pub fn query_multisubject_on_tape(
    tape: &mut Tape,
    bundle: &GridBundle,
    vars: &BundleVars,
    subject: usize,
    points: Var,
) -> Result<(Var, Var)> {
    let local = bundle.locals.get(subject).ok_or_else(|| {
        Error::InvalidArgument(format!("subject {subject} out of range for {} local grids", bundle.locals.len()))
    })?;
    let lf = local.query_on_tape(tape, vars.locals[subject], points)?;
    let h = local.config.half_width;
    let rigid_local = slice_rigid_on_tape(tape, lf, h)?;
    let frozen_local = partial_freeze_on_tape(tape, lf, h)?;
    match (&bundle.global, vars.global) {
        (Some(g), Some(gv)) => {
            let gf = g.query_on_tape(tape, gv, points)?;
            let gf_frozen = tape.stop_gradient(gf);
            let rigid = tape.concat_cols(&[gf, rigid_local])?;
            let nonrigid = tape.concat_cols(&[gf_frozen, frozen_local])?;
            Ok((rigid, nonrigid))
        }
        (None, _) => Ok((rigid_local, frozen_local)),
        (Some(_), None) => Err(Error::InvalidArgument("global grid present but not on the tape".into())),
    }
}
