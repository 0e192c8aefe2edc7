//! Patch losses, the optimization loop, and held-out evaluation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use diffcore::{Adam, AdamConfig, DiffError, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{SceneDataset, Split};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::metrics::{psnr, ssim, ssim_on_tape, PerceptualProxy};
use crate::model::{lr_group, pose_bounds, sample_rays, LrGroup, Model, RenderOptions};
use crate::params::Bound;
use crate::render::{Camera, CompositeConfig, OUT_FINAL, OUT_RIGID};
use crate::skeleton::Pose;

pub const PATCH_DILATION: usize = 16;
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_HEADER: &str = "step,loss_total,loss_rigid,loss_final,eval_psnr,eval_ssim,wall_seconds";

/// Relative weights of the terms inside each branch loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub perceptual: f64,
    pub mse: f64,
    pub ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            perceptual: 1.0,
            mse: 1.0,
            ssim: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the rigid-branch loss.
    pub lambda: f64,
    pub patches: usize,
    pub patch_size: usize,
    pub samples_per_ray: usize,
    pub lr_weight_volume: f64,
    pub lr_other: f64,
    pub betas: [f64; 2],
    pub adam_epsilon: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Evaluate and checkpoint every this many steps (0: only at the end).
    pub eval_every: usize,
    /// Cap on held-out views per evaluation, spread evenly (all if absent).
    pub eval_views: Option<usize>,
    /// Samples per ray for evaluation renders; training value if absent.
    pub eval_samples: Option<usize>,
    /// Block gradients into the rigid decoder outputs.
    pub detach_rigid: bool,
    /// Write measured seconds in the metrics log; zero otherwise.
    pub wall_clock: bool,
    /// Rays per parallel chunk in evaluation renders.
    pub render_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            patches: 6,
            patch_size: 32,
            samples_per_ray: 256,
            lr_weight_volume: 5e-5,
            lr_other: 5e-3,
            betas: [0.9, 0.99],
            adam_epsilon: 1e-15,
            max_steps: 8000,
            seed: 0,
            loss_weights: LossWeights::default(),
            eval_every: 1000,
            eval_views: None,
            eval_samples: None,
            detach_rigid: false,
            wall_clock: true,
            render_chunk: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.patches == 0 || self.patch_size == 0 || self.samples_per_ray == 0 {
            return Err(Error::Config("patches, patch_size, and samples_per_ray must be positive".into()));
        }
        if self.eval_samples == Some(0) || self.eval_views == Some(0) || self.render_chunk == 0 {
            return Err(Error::Config("eval_samples, eval_views, and render_chunk must be positive".into()));
        }
        for (name, v) in [("lr_weight_volume", self.lr_weight_volume), ("lr_other", self.lr_other)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number")));
            }
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, param: &str) -> f64 {
        match lr_group(param) {
            LrGroup::WeightVolume => self.lr_weight_volume,
            LrGroup::Other => self.lr_other,
        }
    }
}

/// Top-left corners of `n` patches of side `size`, each drawn uniformly from
/// the positions whose patch overlaps the mask dilated by
/// [`PATCH_DILATION`] pixels.
pub fn sample_patches<R: Rng>(mask: &Mask, n: usize, size: usize, rng: &mut R, source: &Path) -> Result<Vec<(usize, usize)>> {
    let (w, h) = (mask.width, mask.height);
    if size == 0 || size > w || size > h {
        return Err(Error::Config(format!("patch size {size} does not fit a {w}×{h} image")));
    }
    if mask.count() == 0 {
        return Err(Error::dataset(source, "mask is empty; no patch can cover the subject"));
    }
    let r = PATCH_DILATION;
    // Separable square dilation.
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (x.saturating_sub(r), (x + r).min(w - 1));
            rows[y * w + x] = (a..=b).any(|i| mask.get(i, y));
        }
    }
    let mut integral = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (y.saturating_sub(r), (y + r).min(h - 1));
            let d = (a..=b).any(|j| rows[j * w + x]) as u32;
            integral[(y + 1) * (w + 1) + x + 1] =
                d + integral[y * (w + 1) + x + 1] + integral[(y + 1) * (w + 1) + x] - integral[y * (w + 1) + x];
        }
    }
    let boxsum = |x0: usize, y0: usize| {
        let (x1, y1) = (x0 + size, y0 + size);
        integral[y1 * (w + 1) + x1] + integral[y0 * (w + 1) + x0] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0]
    };
    let admissible: Vec<(usize, usize)> = (0..=h - size)
        .flat_map(|y| (0..=w - size).map(move |x| (x, y)))
        .filter(|&(x, y)| boxsum(x, y) > 0)
        .collect();
    Ok((0..n).map(|_| admissible[rng.random_range(0..admissible.len())]).collect())
}

/// Terms of one branch loss, each averaged over patches.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BranchLoss {
    pub perceptual: f64,
    pub mse: f64,
    /// `(1 − SSIM) / 2`; zero for the rigid branch.
    pub ssim: f64,
    /// Weighted sum of the terms.
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub rigid: BranchLoss,
    pub final_: BranchLoss,
    pub total: f64,
}

impl LossBreakdown {
    /// Total at another rigid weight, for the same renders.
    pub fn total_at(&self, lambda: f64) -> f64 {
        lambda * self.rigid.total + (1.0 - lambda) * self.final_.total
    }

    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.rigid.perceptual,
            self.rigid.mse,
            self.final_.perceptual,
            self.final_.mse,
            self.final_.ssim,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "total {}, rigid {} (perceptual {}, mse {}), final {} (perceptual {}, mse {}, ssim {})",
            self.total,
            self.rigid.total,
            self.rigid.perceptual,
            self.rigid.mse,
            self.final_.total,
            self.final_.perceptual,
            self.final_.mse,
            self.final_.ssim
        )
    }
}

/// One training view: the inputs a loss evaluation needs.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    /// Model subject index.
    pub subject: usize,
    pub pose: &'a Pose,
    pub camera: &'a Camera,
    pub image: &'a Image,
}

/// Loss inputs that stay fixed across steps.
#[derive(Debug, Clone)]
pub struct LossSpec {
    pub lambda: f64,
    pub patch_size: usize,
    pub samples_per_ray: usize,
    pub weights: LossWeights,
    pub options: RenderOptions,
    pub proxy: PerceptualProxy,
}

impl LossSpec {
    pub fn new(model: &Model, cfg: &TrainConfig, background: [f64; 3]) -> LossSpec {
        let mut options = model.render_options(CompositeConfig {
            background,
            ..CompositeConfig::default()
        });
        options.detach_rigid = cfg.detach_rigid;
        LossSpec {
            lambda: cfg.lambda,
            patch_size: cfg.patch_size,
            samples_per_ray: cfg.samples_per_ray,
            weights: cfg.loss_weights,
            options,
            proxy: PerceptualProxy::default(),
        }
    }
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).data()[0]
}

/// Renders the patches at `corners` and builds the combined loss. Sample
/// depths are jittered with `rng`, or bin centers if `None`.
pub fn loss_on_tape(
    tape: &mut Tape,
    bound: &Bound,
    model: &Model,
    frame: &Frame,
    corners: &[(usize, usize)],
    spec: &LossSpec,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, LossBreakdown)> {
    let s = spec.patch_size;
    let px = s * s;
    let mut rays = Vec::with_capacity(corners.len() * px);
    let mut gt = Vec::with_capacity(3 * corners.len() * px);
    for &(x0, y0) in corners {
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                rays.push(frame.camera.pixel_ray(x, y)?);
                gt.extend_from_slice(&frame.image.pixel(x, y));
            }
        }
    }
    let pose = Arc::new(frame.pose.clone());
    let samples = sample_rays(&pose_bounds(&pose), &rays, spec.samples_per_ray, rng);
    let out = model.render_on_tape(tape, bound, frame.subject, &pose, &rays, &samples, &spec.options)?;
    let gt = tape.constant(Tensor::matrix(rays.len(), 3, gt)?);
    let w = spec.weights;
    let k = corners.len() as f64;
    let mut rigid_terms = Vec::new();
    let mut final_terms = Vec::new();
    let mut breakdown = LossBreakdown::default();
    for p in 0..corners.len() {
        let rows: Vec<usize> = (p * px..(p + 1) * px).collect();
        let o = tape.gather_rows(out, &rows)?;
        let g = tape.gather_rows(gt, &rows)?;
        let rigid = tape.slice_cols(o, OUT_RIGID, 3)?;
        let fin = tape.slice_cols(o, OUT_FINAL, 3)?;

        let perc_r = spec.proxy.distance_on_tape(tape, rigid, g, s, s)?;
        let d = tape.sub(rigid, g)?;
        let d = tape.square(d);
        let mse_r = tape.mean(d);
        breakdown.rigid.perceptual += scalar(tape, perc_r) / k;
        breakdown.rigid.mse += scalar(tape, mse_r) / k;
        let a = tape.scale(perc_r, w.perceptual);
        let b = tape.scale(mse_r, w.mse);
        rigid_terms.push(tape.add(a, b)?);

        let perc_f = spec.proxy.distance_on_tape(tape, fin, g, s, s)?;
        let d = tape.sub(fin, g)?;
        let d = tape.square(d);
        let mse_f = tape.mean(d);
        let ss = ssim_on_tape(tape, fin, g, s, s)?;
        let ss = tape.scale(ss, -0.5);
        let ssim_f = tape.add_scalar(ss, 0.5);
        breakdown.final_.perceptual += scalar(tape, perc_f) / k;
        breakdown.final_.mse += scalar(tape, mse_f) / k;
        breakdown.final_.ssim += scalar(tape, ssim_f) / k;
        let a = tape.scale(perc_f, w.perceptual);
        let b = tape.scale(mse_f, w.mse);
        let c = tape.scale(ssim_f, w.ssim);
        let ab = tape.add(a, b)?;
        final_terms.push(tape.add(ab, c)?);
    }
    let mean = |tape: &mut Tape, terms: &[Var]| -> Result<Var> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t)?;
        }
        Ok(tape.scale(acc, 1.0 / k))
    };
    let lr = mean(tape, &rigid_terms)?;
    let lf = mean(tape, &final_terms)?;
    breakdown.rigid.total = scalar(tape, lr);
    breakdown.final_.total = scalar(tape, lf);
    let a = tape.scale(lr, spec.lambda);
    let b = tape.scale(lf, 1.0 - spec.lambda);
    let total = tape.add(a, b)?;
    breakdown.total = scalar(tape, total);
    Ok((total, breakdown))
}

/// Mean metrics over the held-out views of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub psnr: f64,
    pub ssim: f64,
    pub views: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewScore {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Renders one dataset view with `model` (bin-center sampling) and returns
/// the final-color image.
pub fn render_view(model: &Model, dataset: &SceneDataset, view: usize, model_subject: usize, samples: usize, chunk: usize) -> Result<Image> {
    let opts = model.render_options(CompositeConfig {
        background: dataset.meta.background,
        ..CompositeConfig::default()
    });
    let img = model.render_image(model_subject, dataset.pose(view), dataset.camera(view), samples, &opts, chunk)?;
    Image::from_data(img.width, img.height, img.final_rgb)
}

/// PSNR (mask bounding box) and SSIM (full frame) of one view.
pub fn score_view(model: &Model, dataset: &SceneDataset, view: usize, model_subject: usize, samples: usize, chunk: usize) -> Result<ViewScore> {
    let img = render_view(model, dataset, view, model_subject, samples, chunk)?;
    Ok(ViewScore {
        view,
        psnr: psnr(&img, &dataset.images[view], Some(&dataset.masks[view]))?,
        ssim: ssim(&img, &dataset.images[view])?,
    })
}

/// `k` indices spread evenly over `0..n`.
pub fn spread(n: usize, k: Option<usize>) -> Vec<usize> {
    match k {
        Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
        _ => (0..n).collect(),
    }
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps: usize,
    pub losses: Vec<LossBreakdown>,
    pub evals: Vec<(usize, EvalSummary)>,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

pub struct Trainer<'a> {
    pub model: Model,
    pub dataset: &'a SceneDataset,
    pub config: TrainConfig,
    pub spec: LossSpec,
    /// Dataset subject of each model subject.
    pub subjects: Vec<usize>,
    pub train_views: Vec<usize>,
    pub eval_views: Vec<usize>,
    pub step: usize,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, dataset: &'a SceneDataset, config: TrainConfig) -> Result<Trainer<'a>> {
        config.validate()?;
        let subjects = model.config.dataset_subjects();
        if subjects.len() != model.subjects() {
            return Err(Error::Config(format!(
                "model has {} subject(s) but lists {} dataset subject id(s)",
                model.subjects(),
                subjects.len()
            )));
        }
        if let Some(&bad) = subjects.iter().find(|&&s| s >= dataset.subjects()) {
            return Err(Error::Config(format!("subject {bad} not in dataset ({} subjects)", dataset.subjects())));
        }
        for (i, &s) in subjects.iter().enumerate() {
            if model.config.skeletons[i] != dataset.meta.bodies[s].skeleton {
                return Err(Error::Config(format!("model subject {i} skeleton differs from dataset subject {s}")));
            }
        }
        let (w, h) = (dataset.meta.width, dataset.meta.height);
        if config.patch_size > w || config.patch_size > h {
            return Err(Error::Config(format!("patch size {} does not fit {w}×{h} images", config.patch_size)));
        }
        let train_views = dataset.split(Split::Train, Some(&subjects));
        if train_views.is_empty() {
            return Err(Error::dataset(PathBuf::from(crate::dataset::META_FILE), "no training views for the selected subjects"));
        }
        let eval_views = spread_views(&dataset.split(Split::Eval, Some(&subjects)), config.eval_views);
        let spec = LossSpec::new(&model, &config, dataset.meta.background);
        let adam = Adam::new(AdamConfig {
            beta1: config.betas[0],
            beta2: config.betas[1],
            epsilon: config.adam_epsilon,
        });
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer {
            model,
            dataset,
            config,
            spec,
            subjects,
            train_views,
            eval_views,
            step: 0,
            adam,
            rng,
        })
    }

    fn model_subject(&self, dataset_subject: usize) -> usize {
        self.subjects.iter().position(|&s| s == dataset_subject).expect("selected subject")
    }

    /// Draws a frame and patches, then applies one Adam update.
    pub fn train_step(&mut self) -> Result<LossBreakdown> {
        let step = self.step + 1;
        let view = self.train_views[self.rng.random_range(0..self.train_views.len())];
        let ds = self.dataset;
        let mask_path = PathBuf::from(&ds.meta.views[view].mask);
        let corners = sample_patches(&ds.masks[view], self.config.patches, self.config.patch_size, &mut self.rng, &mask_path)?;
        let frame = Frame {
            subject: self.model_subject(ds.meta.views[view].subject),
            pose: ds.pose(view),
            camera: ds.camera(view),
            image: &ds.images[view],
        };
        let mut tape = Tape::new();
        let bound = self.model.params.bind(&mut tape, true);
        let (loss, breakdown) = loss_on_tape(&mut tape, &bound, &self.model, &frame, &corners, &self.spec, Some(&mut self.rng))?;
        if !breakdown.is_finite() {
            return Err(Error::Divergence {
                step,
                message: format!("non-finite loss: {breakdown}"),
            });
        }
        let mut grads = tape.backward(loss)?;
        let vars: Vec<(String, Var)> = bound.iter().map(|(k, v)| (k.clone(), *v)).collect();
        let updates: Vec<(String, Option<Vec<f64>>)> = vars.into_iter().map(|(k, v)| (k, grads.take(v))).collect();
        drop(tape);
        for (name, g) in updates {
            let lr = self.config.learning_rate(&name);
            let t = self.model.params.tensor_mut(&name)?;
            let g = g.unwrap_or_else(|| vec![0.0; t.len()]);
            self.adam.step(&name, t.data_mut(), &g, lr).map_err(|e| match e {
                DiffError::Divergence { param } => Error::Divergence {
                    step,
                    message: format!("non-finite gradient for `{param}`; loss {breakdown}"),
                },
                other => other.into(),
            })?;
        }
        self.step = step;
        Ok(breakdown)
    }

    pub fn eval_samples(&self) -> usize {
        self.config.eval_samples.unwrap_or(self.config.samples_per_ray)
    }

    /// Per-view scores on the held-out views.
    pub fn evaluate_views(&self) -> Result<Vec<ViewScore>> {
        self.eval_views
            .iter()
            .map(|&v| {
                let s = self.model_subject(self.dataset.meta.views[v].subject);
                score_view(&self.model, self.dataset, v, s, self.eval_samples(), self.config.render_chunk)
            })
            .collect()
    }

    pub fn evaluate(&self) -> Result<Option<EvalSummary>> {
        let scores = self.evaluate_views()?;
        if scores.is_empty() {
            return Ok(None);
        }
        let n = scores.len() as f64;
        Ok(Some(EvalSummary {
            psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
            ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
            views: scores.len(),
        }))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, self.step as u64)
    }

    /// Runs to `max_steps`. With an output directory, writes the metrics
    /// log and checkpoints there.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<TrainReport> {
        let start = Instant::now();
        let mut log = match out_dir {
            Some(d) => {
                fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                let p = d.join(METRICS_FILE);
                let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
                let mut w = std::io::BufWriter::new(f);
                writeln!(w, "{METRICS_HEADER}").map_err(|e| Error::io(&p, e))?;
                Some((p, w))
            }
            None => None,
        };
        let mut report = TrainReport {
            steps: 0,
            losses: Vec::new(),
            evals: Vec::new(),
            metrics_path: log.as_ref().map(|l| l.0.clone()),
            checkpoint_path: out_dir.map(|d| d.join(CHECKPOINT_FILE)),
        };
        let max = self.config.max_steps;
        while self.step < max {
            let b = self.train_step()?;
            let step = self.step;
            report.losses.push(b);
            let due = step == max || (self.config.eval_every > 0 && step % self.config.eval_every == 0);
            let eval = if due { self.evaluate()? } else { None };
            if let Some(e) = eval {
                report.evals.push((step, e));
                log::info!("step {step}: loss {:.5}, eval PSNR {:.3} dB, SSIM {:.4}", b.total, e.psnr, e.ssim);
            }
            if let Some((p, w)) = &mut log {
                let (ep, es) = eval.map_or((String::new(), String::new()), |e| (fmt_metric(e.psnr), fmt_metric(e.ssim)));
                let wall = if self.config.wall_clock { start.elapsed().as_secs_f64() } else { 0.0 };
                writeln!(w, "{step},{},{},{},{ep},{es},{wall}", b.total, b.rigid.total, b.final_.total).map_err(|e| Error::io(&*p, e))?;
                if due {
                    w.flush().map_err(|e| Error::io(&*p, e))?;
                }
            }
            if due {
                if let Some(p) = &report.checkpoint_path {
                    self.checkpoint().save(p)?;
                }
            }
        }
        if let Some((p, mut w)) = log {
            w.flush().map_err(|e| Error::io(&p, e))?;
        }
        if let Some(p) = &report.checkpoint_path {
            if max == 0 || !p.exists() {
                self.checkpoint().save(p)?;
            }
        }
        report.steps = self.step;
        Ok(report)
    }
}

fn spread_views(views: &[usize], k: Option<usize>) -> Vec<usize> {
    spread(views.len(), k).into_iter().map(|i| views[i]).collect()
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, on: &[(usize, usize)]) -> Mask {
        let mut data = vec![false; w * h];
        for &(x, y) in on {
            data[y * w + x] = true;
        }
        Mask { width: w, height: h, data }
    }

    #[test]
    fn patches_cover_single_pixel_within_dilation() {
        let m = mask(100, 80, &[(50, 40)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (x, y) in sample_patches(&m, 200, 8, &mut rng, Path::new("m")).unwrap() {
            assert!(x + 8 > 50 - PATCH_DILATION && x <= 50 + PATCH_DILATION, "{x}");
            assert!(y + 8 > 40 - PATCH_DILATION && y <= 40 + PATCH_DILATION, "{y}");
        }
    }

    #[test]
    fn patches_deterministic_and_full_mask_reaches_corners() {
        let m = Mask {
            width: 10,
            height: 10,
            data: vec![true; 100],
        };
        let draw = |seed| sample_patches(&m, 400, 4, &mut ChaCha8Rng::seed_from_u64(seed), Path::new("m")).unwrap();
        let a = draw(3);
        assert_eq!(a, draw(3));
        assert!(a.contains(&(0, 0)) && a.contains(&(6, 6)));
    }

    #[test]
    fn empty_mask_and_oversized_patch() {
        let m = mask(10, 10, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_patches(&m, 1, 4, &mut rng, Path::new("m")), Err(Error::Dataset { .. })));
        let m = mask(10, 10, &[(1, 1)]);
        assert!(matches!(sample_patches(&m, 1, 11, &mut rng, Path::new("m")), Err(Error::Config(_))));
    }

    #[test]
    fn learning_rate_groups() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate("volume.0.logits"), 5e-5);
        assert_eq!(c.learning_rate("grid.local.0.entries"), 5e-3);
        assert_eq!(c.learning_rate("attn.w_q"), 5e-3);
    }

    #[test]
    fn spread_picks_evenly() {
        assert_eq!(spread(10, Some(3)), vec![0, 3, 6]);
        assert_eq!(spread(2, Some(5)), vec![0, 1]);
    }
}
