//! Pinhole rays, stratified depth samples, and compositional volume
//! rendering of the final (rigid + residual) and rigid-only colors.

use std::sync::Arc;

use diffcore::{CustomBackward, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize, scale, Aabb, Mat3, Vec3};

/// Padding of the posed-joint box that bounds ray marching, in meters.
pub const BOUNDS_PAD: f64 = 0.3;

/// OpenCV-style pinhole camera; `x_cam = R x_world + t`, pixel `(u, v)` in
/// continuous coordinates with pixel centers at half-integers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        crate::geometry::add(self.origin, scale(self.dir, t))
    }
}

impl Camera {
    /// Camera at `eye` looking at `target` with the given focal length.
    pub fn looking_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Camera {
        let rotation = Mat3::look_at(eye, target, up);
        let re = rotation.mul_vec(eye);
        Camera {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation: [-re[0], -re[1], -re[2]],
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidArgument(format!("camera focal lengths must be positive, got ({}, {})", self.fx, self.fy)));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("camera principal point or resolution invalid".into()));
        }
        if !self.rotation.is_rotation(1e-9) {
            return Err(Error::InvalidArgument("camera rotation is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        let c = self.rotation.transpose().mul_vec(self.translation);
        [-c[0], -c[1], -c[2]]
    }

    /// World-space point to continuous pixel coordinates and depth.
    pub fn project(&self, p: Vec3) -> (f64, f64, f64) {
        let c = crate::geometry::add(self.rotation.mul_vec(p), self.translation);
        (self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy, c[2])
    }

    pub fn ray(&self, u: f64, v: f64) -> Result<Ray> {
        if !(0.0..=self.width as f64).contains(&u) || !(0.0..=self.height as f64).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "pixel ({u}, {v}) outside {}×{} image",
                self.width, self.height
            )));
        }
        let d = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        Ok(Ray {
            origin: self.center(),
            dir: normalize(self.rotation.transpose().mul_vec(d)),
        })
    }

    /// Ray through the center of integer pixel `(x, y)`.
    pub fn pixel_ray(&self, x: usize, y: usize) -> Result<Ray> {
        self.ray(x as f64 + 0.5, y as f64 + 0.5)
    }
}

pub fn generate_rays(camera: &Camera, pixels: &[(f64, f64)]) -> Result<Vec<Ray>> {
    pixels.iter().map(|&(u, v)| camera.ray(u, v)).collect()
}

/// Near/far distances of a ray through the marching box.
pub fn ray_bounds(bounds: &Aabb, ray: &Ray) -> Option<(f64, f64)> {
    bounds.intersect(ray.origin, ray.dir)
}

/// One depth per equal-width bin of `[near, far]`: bin centers when `rng`
/// is `None`, uniform draws otherwise.
pub fn stratified_samples<R: Rng>(near: f64, far: f64, m: usize, rng: Option<&mut R>) -> Vec<f64> {
    let w = (far - near) / m as f64;
    match rng {
        None => (0..m).map(|i| near + (i as f64 + 0.5) * w).collect(),
        Some(rng) => (0..m).map(|i| near + (i as f64 + rng.random::<f64>()) * w).collect(),
    }
}

/// Adjacent distances; the last sample gets `final_delta`.
pub fn deltas(ts: &[f64], final_delta: f64) -> Vec<f64> {
    let mut d: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    if !ts.is_empty() {
        d.push(final_delta);
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeConfig {
    pub background: [f64; 3],
    /// Multiplier on both residuals.
    pub residual_scale: f64,
    /// Transmittance of the final color from the rigid density rather than
    /// the composite density. Forward only.
    pub literal_transmittance: bool,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            residual_scale: 1.0,
            literal_transmittance: false,
        }
    }
}

/// Per-sample inputs to compositing along one ray.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SampleInput {
    pub c: [f64; 3],
    pub sigma: f64,
    pub delta_c: [f64; 3],
    pub delta_sigma: f64,
    pub foreground: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelOutput {
    pub final_rgb: [f64; 3],
    pub rigid_rgb: [f64; 3],
    pub alpha_final: f64,
    pub alpha_rigid: f64,
}

fn composite_density(s: &SampleInput, k: f64) -> f64 {
    (s.sigma + k * s.delta_sigma).max(0.0) * s.foreground
}

fn composite_color(s: &SampleInput, k: f64, a: usize) -> f64 {
    (s.c[a] + k * s.delta_c[a]).clamp(0.0, 1.0)
}

/// Front-to-back compositing of `(density, color)` pairs with optional
/// separate densities for transmittance. Returns color (without background)
/// and transmittance past the last sample.
fn march(samples: &[SampleInput], density: impl Fn(&SampleInput) -> f64, trans_density: Option<&dyn Fn(&SampleInput) -> f64>, color: impl Fn(&SampleInput, usize) -> f64) -> ([f64; 3], f64) {
    let mut t = 1.0;
    let mut out = [0.0; 3];
    for s in samples {
        let alpha = 1.0 - (-density(s) * s.delta).exp();
        let w = t * alpha;
        for (a, o) in out.iter_mut().enumerate() {
            *o += w * color(s, a);
        }
        t *= match trans_density {
            Some(f) => (-f(s) * s.delta).exp(),
            None => 1.0 - alpha,
        };
    }
    (out, t)
}

/// Composites one ray. Non-finite inputs are reported against `ray`.
pub fn composite(samples: &[SampleInput], cfg: &CompositeConfig, ray: usize) -> Result<PixelOutput> {
    for (m, s) in samples.iter().enumerate() {
        let finite = s.c.iter().chain(&s.delta_c).all(|v| v.is_finite())
            && s.sigma.is_finite()
            && s.delta_sigma.is_finite()
            && s.foreground.is_finite()
            && s.delta.is_finite();
        if !finite {
            return Err(Error::Render {
                ray,
                message: format!("non-finite prediction at sample {m}"),
            });
        }
    }
    let k = cfg.residual_scale;
    let rigid_density = |s: &SampleInput| s.sigma.max(0.0) * s.foreground;
    let (rigid, t_rigid) = march(samples, rigid_density, None, |s, a| s.c[a]);
    let (fin, t_final) = if cfg.literal_transmittance {
        march(samples, |s| composite_density(s, k), Some(&rigid_density), |s, a| composite_color(s, k, a))
    } else {
        march(samples, |s| composite_density(s, k), None, |s, a| composite_color(s, k, a))
    };
    let bg = cfg.background;
    let pixel = |c: [f64; 3], t: f64| -> [f64; 3] { std::array::from_fn(|a| (c[a] + t * bg[a]).clamp(0.0, 1.0)) };
    Ok(PixelOutput {
        final_rgb: pixel(fin, t_final),
        rigid_rgb: pixel(rigid, t_rigid),
        alpha_final: (1.0 - t_final).clamp(0.0, 1.0),
        alpha_rigid: (1.0 - t_rigid).clamp(0.0, 1.0),
    })
}

/// Samples of consecutive rays, `offsets[r]..offsets[r + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RayLayout {
    pub offsets: Vec<usize>,
    pub deltas: Vec<f64>,
}

impl RayLayout {
    pub fn rays(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn samples(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }
}

/// Channel layout of the composite output row.
pub const OUT_FINAL: usize = 0;
pub const OUT_RIGID: usize = 3;
pub const OUT_ALPHA_FINAL: usize = 6;
pub const OUT_ALPHA_RIGID: usize = 7;
pub const OUT_WIDTH: usize = 8;

fn gather_inputs(layout: &RayLayout, r: usize, rgb: &[f64], sigma: &[f64], fg: &[f64], resid: Option<&[f64]>) -> Vec<SampleInput> {
    (layout.offsets[r]..layout.offsets[r + 1])
        .map(|i| SampleInput {
            c: [rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]],
            sigma: sigma[i],
            delta_c: resid.map_or([0.0; 3], |d| [d[4 * i], d[4 * i + 1], d[4 * i + 2]]),
            delta_sigma: resid.map_or(0.0, |d| d[4 * i + 3]),
            foreground: fg[i],
            delta: layout.deltas[i],
        })
        .collect()
}

struct CompositeBackward {
    layout: Arc<RayLayout>,
    cfg: CompositeConfig,
    has_residual: bool,
}

/// Gradient of one march with respect to each sample's density and color,
/// given the upstream color gradient `g_rgb` and opacity gradient `g_alpha`.
fn march_backward(densities: &[f64], colors: &[[f64; 3]], deltas: &[f64], g_rgb: [f64; 3], g_alpha: f64, bg: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let m = densities.len();
    let mut trans = Vec::with_capacity(m + 1);
    let mut t = 1.0;
    let mut weights = Vec::with_capacity(m);
    for j in 0..m {
        trans.push(t);
        let alpha = 1.0 - (-densities[j] * deltas[j]).exp();
        weights.push(t * alpha);
        t *= 1.0 - alpha;
    }
    trans.push(t);
    let t_end = t;
    let bg_term: f64 = (0..3).map(|a| g_rgb[a] * bg[a]).sum();
    let mut g_density = vec![0.0; m];
    let mut g_color = vec![[0.0; 3]; m];
    // Suffix of Σ_{m>j} w_m (g · c_m).
    let mut suffix = 0.0;
    for j in (0..m).rev() {
        let gc: f64 = (0..3).map(|a| g_rgb[a] * colors[j][a]).sum();
        let ds = trans[j + 1] * gc - suffix - t_end * bg_term + g_alpha * t_end;
        g_density[j] = ds * deltas[j];
        for a in 0..3 {
            g_color[j][a] = weights[j] * g_rgb[a];
        }
        suffix += weights[j] * gc;
    }
    (g_density, g_color)
}

impl CustomBackward for CompositeBackward {
    fn backward(&self, grad_out: &[f64], inputs: &[&Tensor], _output: &Tensor) -> Vec<Option<Vec<f64>>> {
        let (rgb, sigma, fg) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let resid = self.has_residual.then(|| inputs[3].data());
        let n = sigma.len();
        let mut g_rgb = vec![0.0; 3 * n];
        let mut g_sigma = vec![0.0; n];
        let mut g_fg = vec![0.0; n];
        let mut g_resid = vec![0.0; 4 * n];
        let k = self.cfg.residual_scale;
        let bg = self.cfg.background;
        if self.cfg.literal_transmittance {
            let mut out = vec![None; 3];
            if self.has_residual {
                out.push(None);
            }
            return out;
        }
        for r in 0..self.layout.rays() {
            let go = &grad_out[r * OUT_WIDTH..(r + 1) * OUT_WIDTH];
            if go.iter().all(|&v| v == 0.0) {
                continue;
            }
            let samples = gather_inputs(&self.layout, r, rgb, sigma, fg, resid);
            let base = self.layout.offsets[r];
            let dl: Vec<f64> = samples.iter().map(|s| s.delta).collect();
            // The output clamp only absorbs rounding here; treat it as identity.
            let take = |o: usize| -> [f64; 3] { [go[o], go[o + 1], go[o + 2]] };

            // Rigid branch.
            let dens: Vec<f64> = samples.iter().map(|s| s.sigma.max(0.0) * s.foreground).collect();
            let cols: Vec<[f64; 3]> = samples.iter().map(|s| s.c).collect();
            let gr = take(OUT_RIGID);
            let (gd, gc) = march_backward(&dens, &cols, &dl, gr, go[OUT_ALPHA_RIGID], bg);
            for (j, s) in samples.iter().enumerate() {
                let i = base + j;
                if s.sigma > 0.0 {
                    g_sigma[i] += gd[j] * s.foreground;
                }
                g_fg[i] += gd[j] * s.sigma.max(0.0);
                for a in 0..3 {
                    g_rgb[3 * i + a] += gc[j][a];
                }
            }

            // Final branch.
            let dens: Vec<f64> = samples.iter().map(|s| composite_density(s, k)).collect();
            let cols: Vec<[f64; 3]> = samples.iter().map(|s| std::array::from_fn(|a| composite_color(s, k, a))).collect();
            let gf = take(OUT_FINAL);
            let (gd, gc) = march_backward(&dens, &cols, &dl, gf, go[OUT_ALPHA_FINAL], bg);
            for (j, s) in samples.iter().enumerate() {
                let i = base + j;
                let raw = s.sigma + k * s.delta_sigma;
                if raw > 0.0 {
                    g_sigma[i] += gd[j] * s.foreground;
                    g_resid[4 * i + 3] += gd[j] * s.foreground * k;
                }
                g_fg[i] += gd[j] * raw.max(0.0);
                for a in 0..3 {
                    let v = s.c[a] + k * s.delta_c[a];
                    if v > 0.0 && v < 1.0 {
                        g_rgb[3 * i + a] += gc[j][a];
                        g_resid[4 * i + a] += gc[j][a] * k;
                    }
                }
            }
        }
        let mut out = vec![Some(g_rgb), Some(g_sigma), Some(g_fg)];
        if self.has_residual {
            out.push(Some(g_resid));
        }
        out
    }
}

/// Composites every ray of `layout` on the tape. `rgb` is `n × 3`, `sigma`
/// and `fg` are `n × 1`, `resid` is `n × 4` raw residuals (absent means zero
/// residual). Output is `rays × 8`: final RGB, rigid RGB, final alpha, rigid
/// alpha, background included.
pub fn composite_on_tape(
    tape: &mut Tape,
    layout: Arc<RayLayout>,
    cfg: &CompositeConfig,
    rgb: Var,
    sigma: Var,
    fg: Var,
    resid: Option<Var>,
) -> Result<Var> {
    let n = layout.samples();
    let check = |tape: &Tape, v: Var, w: usize, what: &str| -> Result<()> {
        if tape.shape(v) != [n, w] {
            return Err(Error::InvalidArgument(format!("{what} has shape {:?}, expected [{n}, {w}]", tape.shape(v))));
        }
        Ok(())
    };
    check(tape, rgb, 3, "composite colors")?;
    check(tape, sigma, 1, "composite densities")?;
    check(tape, fg, 1, "foreground weights")?;
    if let Some(d) = resid {
        check(tape, d, 4, "residuals")?;
    }
    if layout.deltas.len() != n {
        return Err(Error::InvalidArgument("ray layout deltas do not match sample count".into()));
    }
    let rays = layout.rays();
    let mut out = Vec::with_capacity(rays * OUT_WIDTH);
    {
        let (rv, sv, fv) = (tape.value(rgb).data(), tape.value(sigma).data(), tape.value(fg).data());
        let dv = resid.map(|d| tape.value(d).data());
        for r in 0..rays {
            let p = composite(&gather_inputs(&layout, r, rv, sv, fv, dv), cfg, r)?;
            out.extend_from_slice(&p.final_rgb);
            out.extend_from_slice(&p.rigid_rgb);
            out.push(p.alpha_final);
            out.push(p.alpha_rigid);
        }
    }
    let value = Tensor::matrix(rays, OUT_WIDTH, out)?;
    let mut inputs = vec![rgb, sigma, fg];
    inputs.extend(resid);
    Ok(tape.custom(
        &inputs,
        value,
        Box::new(CompositeBackward {
            layout,
            cfg: *cfg,
            has_residual: resid.is_some(),
        }),
    ))
}
