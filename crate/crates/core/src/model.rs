//! The full trainable model and the per-ray pipeline: inverse skinning,
//! hash features, both decoders, and compositing.

use std::collections::BTreeMap;
use std::sync::Arc;

use diffcore::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{self, DecoderConfig, DecoderShape};
use crate::geometry::{Aabb, Vec3};
use crate::hashenc::{query_multisubject_on_tape, BundleVars, GridBundle, GridConfig, HashGrid};
use crate::params::{Bound, Params};
use crate::posecode::{self, AttentionConfig};
use crate::render::{self, composite_on_tape, Camera, CompositeConfig, Ray, RayLayout, BOUNDS_PAD, OUT_WIDTH};
use crate::skeleton::{encoding_width, positional_encode, JointSelection, Pose, Skeleton, DEFAULT_BANDS};
use crate::skinning::{init_weight_volume, inverse_lbs, skin_on_tape, VolumeLayout, WeightTable};

/// Component switches for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub disable_residual: bool,
    pub disable_pose_feature: bool,
    pub disable_global_mhe: bool,
    pub disable_local_mhes: bool,
    pub disable_id_codes: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 5] = [
        "disable_residual",
        "disable_pose_feature",
        "disable_global_mhe",
        "disable_local_mhes",
        "disable_id_codes",
    ];

    pub fn set(&mut self, name: &str) -> Result<()> {
        let slot = match name {
            "disable_residual" => &mut self.disable_residual,
            "disable_pose_feature" => &mut self.disable_pose_feature,
            "disable_global_mhe" => &mut self.disable_global_mhe,
            "disable_local_mhes" => &mut self.disable_local_mhes,
            "disable_id_codes" => &mut self.disable_id_codes,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation `{other}`; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        *slot = true;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// One canonical skeleton per subject; all share the bone count.
    pub skeletons: Vec<Skeleton>,
    pub volume_resolution: [usize; 3],
    /// Width of the initial skinning bumps; half the mean bone length if
    /// absent.
    pub skinning_sigma: Option<f64>,
    pub background_channel: bool,
    pub volume_pad: f64,
    pub local_grid: GridConfig,
    pub global_grid: GridConfig,
    pub attention: AttentionConfig,
    pub decoder: DecoderConfig,
    pub bands: usize,
    pub joints: JointSelection,
    pub ablation: Ablation,
    /// Samples whose foreground weight is at or below this are treated as
    /// empty. Zero keeps every valid sample.
    #[serde(default)]
    pub fg_cutoff: f64,
    /// Dataset subject of each model subject; empty means the identity.
    #[serde(default)]
    pub subject_ids: Vec<usize>,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(skeletons: Vec<Skeleton>) -> ModelConfig {
        ModelConfig {
            skeletons,
            volume_resolution: [32; 3],
            skinning_sigma: None,
            background_channel: true,
            volume_pad: BOUNDS_PAD,
            local_grid: GridConfig::LOCAL,
            global_grid: GridConfig::GLOBAL,
            attention: AttentionConfig {
                encoding_width: encoding_width(DEFAULT_BANDS),
                ..AttentionConfig::default()
            },
            decoder: DecoderConfig::default(),
            bands: DEFAULT_BANDS,
            joints: JointSelection::default(),
            ablation: Ablation::default(),
            fg_cutoff: 0.0,
            subject_ids: Vec::new(),
            seed: 0,
        }
    }

    pub fn subjects(&self) -> usize {
        self.skeletons.len()
    }

    /// Dataset subject index of each model subject.
    pub fn dataset_subjects(&self) -> Vec<usize> {
        if self.subject_ids.is_empty() {
            (0..self.subjects()).collect()
        } else {
            self.subject_ids.clone()
        }
    }

    /// Which components exist under the current subject count and ablations.
    pub fn structure(&self) -> Structure {
        let n = self.subjects();
        let multi = n > 1;
        let a = &self.ablation;
        let codes = if multi && !a.disable_id_codes { n } else { 1 };
        Structure {
            subjects: n,
            global: multi && !a.disable_global_mhe,
            locals: if multi && !a.disable_local_mhes { n } else { 1 },
            codes,
            rigid_code: codes > 1,
            nonrigid_code: codes > 1 && self.decoder.nonrigid_id_code,
            residual: !a.disable_residual,
            pose_feature: !a.disable_residual && !a.disable_pose_feature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Structure {
    pub subjects: usize,
    pub global: bool,
    pub locals: usize,
    pub codes: usize,
    pub rigid_code: bool,
    pub nonrigid_code: bool,
    pub residual: bool,
    pub pose_feature: bool,
}

/// Learning-rate group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrGroup {
    WeightVolume,
    Other,
}

pub fn lr_group(name: &str) -> LrGroup {
    if name.starts_with("volume.") {
        LrGroup::WeightVolume
    } else {
        LrGroup::Other
    }
}

pub fn volume_param(subject: usize) -> String {
    format!("volume.{subject}.logits")
}

pub fn local_grid_param(i: usize) -> String {
    format!("grid.local.{i}.entries")
}

pub const GLOBAL_GRID_PARAM: &str = "grid.global.entries";

/// Depth samples along one ray.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RaySamples {
    pub ts: Vec<f64>,
    pub deltas: Vec<f64>,
}

/// Stratified samples inside `bounds`, with the last delta equal to the bin
/// width. Rays that miss the box get no samples.
pub fn sample_rays<R: Rng>(bounds: &Aabb, rays: &[Ray], m: usize, mut rng: Option<&mut R>) -> Vec<RaySamples> {
    rays.iter()
        .map(|ray| match render::ray_bounds(bounds, ray) {
            Some((near, far)) if m > 0 => {
                let ts = render::stratified_samples(near, far, m, rng.as_deref_mut());
                let deltas = render::deltas(&ts, (far - near) / m as f64);
                RaySamples { ts, deltas }
            }
            _ => RaySamples::default(),
        })
        .collect()
}

/// Ray-marching box of a posed body.
pub fn pose_bounds(pose: &Pose) -> Aabb {
    Aabb::around(&pose.joints, BOUNDS_PAD)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub composite: CompositeConfig,
    /// Block gradients into the rigid outputs.
    pub detach_rigid: bool,
    /// Drop samples whose foreground weight is at or below this value.
    pub fg_cutoff: f64,
    /// Use this subject's ID code instead of the rendered subject's.
    pub code_override: Option<usize>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            composite: CompositeConfig::default(),
            detach_rigid: false,
            fg_cutoff: 0.0,
            code_override: None,
        }
    }
}

/// Per-sample outputs of the pipeline, all `kept × w` tape values.
pub struct SampleVars {
    pub kept: Vec<usize>,
    pub rgb: Var,
    pub sigma: Var,
    pub fg: Var,
    pub resid: Option<Var>,
    pub canonical: Var,
}

/// One sample's prediction, for inspection outside the tape.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SamplePrediction {
    pub c: [f64; 3],
    pub sigma: f64,
    pub delta_c: [f64; 3],
    pub delta_sigma: f64,
    pub foreground_weight: f64,
    pub valid: bool,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    pub volumes: Vec<VolumeLayout>,
    /// Grid metadata; entries live in `params`.
    pub grids: GridBundle,
    pub canonical_bbox: Aabb,
    pub structure: Structure,
}

struct Layout {
    volumes: Vec<VolumeLayout>,
    grids: GridBundle,
    bbox: Aabb,
    shapes: BTreeMap<String, Vec<usize>>,
}

impl Model {
    fn layout(config: &ModelConfig) -> Result<(Layout, Vec<Tensor>)> {
        if config.skeletons.is_empty() {
            return Err(Error::Config("model needs at least one subject skeleton".into()));
        }
        let bones = config.skeletons[0].bone_count();
        if bones < 1 || config.skeletons.iter().any(|s| s.bone_count() != bones) {
            return Err(Error::Config("all subject skeletons must share one bone count".into()));
        }
        if config.attention.encoding_width != encoding_width(config.bands) {
            return Err(Error::Config(format!(
                "attention input width {} does not match {} frequency bands",
                config.attention.encoding_width, config.bands
            )));
        }
        let mut volumes = Vec::new();
        let mut logits = Vec::new();
        for sk in &config.skeletons {
            let sigma = config.skinning_sigma.unwrap_or(0.5 * sk.mean_bone_length());
            let v = init_weight_volume(sk, config.volume_resolution, sigma, config.volume_pad, config.background_channel)?;
            volumes.push(v.layout);
            logits.push((*v.logits).clone());
        }
        let mut bbox = volumes[0].bbox;
        for v in &volumes[1..] {
            for a in 0..3 {
                bbox.min[a] = bbox.min[a].min(v.bbox.min[a]);
                bbox.max[a] = bbox.max[a].max(v.bbox.max[a]);
            }
        }
        let st = config.structure();
        let global = if st.global {
            Some(HashGrid::zeros_meta(config.global_grid, bbox)?)
        } else {
            None
        };
        let locals = (0..st.locals)
            .map(|_| HashGrid::zeros_meta(config.local_grid, bbox))
            .collect::<Result<Vec<_>>>()?;
        let grids = GridBundle { global, locals };
        let mut shapes = BTreeMap::new();
        for (i, v) in volumes.iter().enumerate() {
            shapes.insert(volume_param(i), vec![v.vertex_count(), v.channels()]);
        }
        if let Some(g) = &grids.global {
            shapes.insert(GLOBAL_GRID_PARAM.to_string(), vec![g.rows(), g.config.entry_width()]);
        }
        for (i, g) in grids.locals.iter().enumerate() {
            shapes.insert(local_grid_param(i), vec![g.rows(), g.config.entry_width()]);
        }
        Ok((
            Layout {
                volumes,
                grids,
                bbox,
                shapes,
            },
            logits,
        ))
    }

    fn decoder_shape(config: &ModelConfig, grids: &GridBundle) -> DecoderShape {
        let st = config.structure();
        DecoderShape {
            rigid_in: grids.rigid_width(),
            nonrigid_in: grids.nonrigid_width(),
            rigid_code: st.rigid_code,
            nonrigid_code: st.nonrigid_code,
            pose_width: st.pose_feature.then_some(config.attention.model_width),
            residual: st.residual,
        }
    }

    /// Fresh model; every random draw comes from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Model> {
        let (layout, logits) = Self::layout(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Params::new();
        for (i, l) in logits.into_iter().enumerate() {
            params.insert(volume_param(i), l);
        }
        if let Some(g) = &layout.grids.global {
            let g = HashGrid::random(g.config, g.bbox, &mut rng)?;
            params.set_shared(GLOBAL_GRID_PARAM, g.entries);
        }
        for (i, g) in layout.grids.locals.iter().enumerate() {
            let g = HashGrid::random(g.config, g.bbox, &mut rng)?;
            params.set_shared(&local_grid_param(i), g.entries);
        }
        let st = config.structure();
        posecode::init_params(&mut params, &config.attention, st.codes, &mut rng);
        fields::init_params(&mut params, &config.decoder, &Self::decoder_shape(&config, &layout.grids), &mut rng);
        Self::assemble(config, params, layout)
    }

    /// Model from stored parameters; shapes must match the configuration.
    pub fn from_params(config: ModelConfig, params: Params) -> Result<Model> {
        let (layout, _) = Self::layout(&config)?;
        let reference = Model::new(config.clone())?;
        let want: Vec<(&String, Vec<usize>)> = reference.params.iter().map(|(k, v)| (k, v.shape().to_vec())).collect();
        let have: Vec<(&String, Vec<usize>)> = params.iter().map(|(k, v)| (k, v.shape().to_vec())).collect();
        if want != have {
            let missing: Vec<&String> = want.iter().filter(|w| !have.contains(w)).map(|w| w.0).collect();
            let extra: Vec<&String> = have.iter().filter(|h| !want.contains(h)).map(|h| h.0).collect();
            return Err(Error::Checkpoint(format!(
                "parameter set does not match the model configuration (missing or reshaped: {missing:?}; unexpected: {extra:?})"
            )));
        }
        Self::assemble(config, params, layout)
    }

    fn assemble(config: ModelConfig, params: Params, layout: Layout) -> Result<Model> {
        for (name, shape) in &layout.shapes {
            if params.get(name)?.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!("parameter `{name}` has the wrong shape")));
            }
        }
        let structure = config.structure();
        Ok(Model {
            config,
            params,
            volumes: layout.volumes,
            grids: layout.grids,
            canonical_bbox: layout.bbox,
            structure,
        })
    }

    pub fn subjects(&self) -> usize {
        self.structure.subjects
    }

    /// Render options carrying the configured sample cutoff.
    pub fn render_options(&self, composite: CompositeConfig) -> RenderOptions {
        RenderOptions {
            composite,
            detach_rigid: false,
            fg_cutoff: self.config.fg_cutoff,
            code_override: None,
        }
    }

    pub fn check_subject(&self, subject: usize) -> Result<()> {
        if subject >= self.subjects() {
            return Err(Error::InvalidArgument(format!(
                "subject {subject} out of range; model has {} subject(s)",
                self.subjects()
            )));
        }
        Ok(())
    }

    pub fn grid_index(&self, subject: usize) -> usize {
        if self.structure.locals > 1 {
            subject
        } else {
            0
        }
    }

    pub fn code_index(&self, subject: usize) -> usize {
        if self.structure.codes > 1 {
            subject
        } else {
            0
        }
    }

    /// `γ(J)` for the configured joint selection.
    pub fn pose_encoding(&self, pose: &Pose) -> Result<Tensor> {
        let joints = self.config.joints.select(pose);
        Ok(positional_encode(&joints, self.config.bands)?.0)
    }

    /// `P_nr` for a subject and pose, evaluated off the tape.
    pub fn pose_feature(&self, subject: usize, pose: &Pose) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        self.check_subject(subject)?;
        let v = self.pose_feature_on_tape(&mut tape, &bound, self.code_index(subject), pose)?;
        Ok(tape.value(v).data().to_vec())
    }

    fn pose_feature_on_tape(&self, tape: &mut Tape, bound: &Bound, code_index: usize, pose: &Pose) -> Result<Var> {
        let gamma = tape.constant(self.pose_encoding(pose)?);
        let code = posecode::code_on_tape(tape, bound.var("codes")?, code_index)?;
        posecode::pose_feature_on_tape(tape, bound, &self.config.attention, code, gamma)
    }

    /// Skinning, hash features, and both decoders for observation-space
    /// points. Only valid samples (above the foreground cutoff) are kept.
    pub fn predict_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        subject: usize,
        pose: &Arc<Pose>,
        points: Arc<Vec<Vec3>>,
        opts: &RenderOptions,
    ) -> Result<SampleVars> {
        self.check_subject(subject)?;
        let logits = bound.var(&volume_param(subject))?;
        let (skin, valid) = skin_on_tape(tape, logits, &self.volumes[subject], pose.clone(), points)?;
        let kept: Vec<usize> = {
            let sv = tape.value(skin).data();
            (0..valid.len())
                .filter(|&i| valid[i] && (opts.fg_cutoff <= 0.0 || sv[4 * i + 3] > opts.fg_cutoff))
                .collect()
        };
        let skin = tape.gather_rows(skin, &kept)?;
        let canonical = tape.slice_cols(skin, 0, 3)?;
        let fg = tape.slice_cols(skin, 3, 1)?;
        let vars = BundleVars {
            global: bound.try_var(GLOBAL_GRID_PARAM),
            locals: (0..self.grids.locals.len())
                .map(|i| bound.var(&local_grid_param(i)))
                .collect::<Result<_>>()?,
        };
        let (rigid_in, nonrigid_in) = query_multisubject_on_tape(tape, &self.grids, &vars, self.grid_index(subject), canonical)?;
        let code_index = match opts.code_override {
            Some(c) => {
                self.check_subject(c)?;
                self.code_index(c)
            }
            None => self.code_index(subject),
        };
        let code = posecode::code_on_tape(tape, bound.var("codes")?, code_index)?;
        let (mut rgb, mut sigma) = fields::eval_rigid(tape, bound, rigid_in, Some(code))?;
        if opts.detach_rigid {
            rgb = tape.stop_gradient(rgb);
            sigma = tape.stop_gradient(sigma);
        }
        let resid = if self.structure.residual {
            let p_nr = if self.structure.pose_feature {
                Some(self.pose_feature_on_tape(tape, bound, code_index, pose)?)
            } else {
                None
            };
            Some(fields::eval_nonrigid(tape, bound, &self.config.decoder, nonrigid_in, p_nr, Some(code))?)
        } else {
            None
        };
        Ok(SampleVars {
            kept,
            rgb,
            sigma,
            fg,
            resid,
            canonical,
        })
    }

    /// Per-point predictions; invalid points are empty.
    pub fn predict_samples(&self, subject: usize, pose: &Pose, points: &[Vec3]) -> Result<Vec<SamplePrediction>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let sv = self.predict_on_tape(
            &mut tape,
            &bound,
            subject,
            &Arc::new(pose.clone()),
            Arc::new(points.to_vec()),
            &RenderOptions::default(),
        )?;
        let mut out = vec![SamplePrediction::default(); points.len()];
        let (rgb, sigma, fg) = (tape.value(sv.rgb).data(), tape.value(sv.sigma).data(), tape.value(sv.fg).data());
        let resid = sv.resid.map(|r| tape.value(r).data());
        for (j, &i) in sv.kept.iter().enumerate() {
            out[i] = SamplePrediction {
                c: [rgb[3 * j], rgb[3 * j + 1], rgb[3 * j + 2]],
                sigma: sigma[j],
                delta_c: resid.map_or([0.0; 3], |r| [r[4 * j], r[4 * j + 1], r[4 * j + 2]]),
                delta_sigma: resid.map_or(0.0, |r| r[4 * j + 3]),
                foreground_weight: fg[j],
                valid: true,
            };
        }
        Ok(out)
    }

    /// Renders rays on the tape; output is `rays × 8` (see
    /// [`render::OUT_WIDTH`]).
    pub fn render_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        subject: usize,
        pose: &Arc<Pose>,
        rays: &[Ray],
        samples: &[RaySamples],
        opts: &RenderOptions,
    ) -> Result<Var> {
        let mut points = Vec::new();
        let mut owner = Vec::new();
        let mut deltas = Vec::new();
        for (r, (ray, s)) in rays.iter().zip(samples).enumerate() {
            for (&t, &d) in s.ts.iter().zip(&s.deltas) {
                points.push(ray.at(t));
                owner.push(r);
                deltas.push(d);
            }
        }
        let sv = self.predict_on_tape(tape, bound, subject, pose, Arc::new(points), opts)?;
        let mut offsets = vec![0usize; rays.len() + 1];
        for &i in &sv.kept {
            offsets[owner[i] + 1] += 1;
        }
        for r in 0..rays.len() {
            offsets[r + 1] += offsets[r];
        }
        let layout = Arc::new(RayLayout {
            offsets,
            deltas: sv.kept.iter().map(|&i| deltas[i]).collect(),
        });
        composite_on_tape(tape, layout, &opts.composite, sv.rgb, sv.sigma, sv.fg, sv.resid)
    }

    /// Full image from `camera`, bin-center sampling, rendered in parallel
    /// chunks of `chunk` rays. The result does not depend on `chunk`.
    pub fn render_image(&self, subject: usize, pose: &Pose, camera: &Camera, samples_per_ray: usize, opts: &RenderOptions, chunk: usize) -> Result<RenderedImage> {
        self.check_subject(subject)?;
        camera.validate()?;
        let (w, h) = (camera.width, camera.height);
        let pixels: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
        let pose = Arc::new(pose.clone());
        let bounds = pose_bounds(&pose);
        let chunk = chunk.max(1);
        let parts: Vec<Result<Vec<f64>>> = pixels
            .par_chunks(chunk)
            .map(|px| {
                let rays = px.iter().map(|&(x, y)| camera.pixel_ray(x, y)).collect::<Result<Vec<_>>>()?;
                let samples = sample_rays::<ChaCha8Rng>(&bounds, &rays, samples_per_ray, None);
                let mut tape = Tape::new();
                let bound = self.params.bind(&mut tape, false);
                let out = self.render_on_tape(&mut tape, &bound, subject, &pose, &rays, &samples, opts)?;
                Ok(tape.value(out).data().to_vec())
            })
            .collect();
        let mut img = RenderedImage::new(w, h);
        let mut p = 0;
        for part in parts {
            for row in part?.chunks(OUT_WIDTH) {
                img.final_rgb[3 * p..3 * p + 3].copy_from_slice(&row[0..3]);
                img.rigid_rgb[3 * p..3 * p + 3].copy_from_slice(&row[3..6]);
                img.alpha_final[p] = row[6];
                img.alpha_rigid[p] = row[7];
                p += 1;
            }
        }
        Ok(img)
    }

    /// Skinning weight table of one subject, for diagnostics.
    pub fn weight_table(&self, subject: usize) -> Result<WeightTable> {
        self.check_subject(subject)?;
        Ok(WeightTable::from_logits(self.params.get(&volume_param(subject))?, self.volumes[subject].channels()))
    }

    /// Canonical point of `x` under `pose` for `subject`, or `None` if
    /// inverse skinning is undefined there.
    pub fn canonicalize(&self, subject: usize, pose: &Pose, x: Vec3) -> Result<Option<Vec3>> {
        let s = inverse_lbs(&self.volumes[subject], &self.weight_table(subject)?, pose, x);
        Ok(s.valid.then_some(s.x_c))
    }
}

impl HashGrid {
    fn zeros_meta(config: GridConfig, bbox: Aabb) -> Result<HashGrid> {
        let (levels, _) = HashGrid::layout(config, bbox)?;
        Ok(HashGrid {
            config,
            bbox,
            levels,
            entries: Arc::new(Tensor::zeros(&[0, 0])),
        })
    }
}

/// Rendered RGB images (row-major, interleaved) and opacities.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub final_rgb: Vec<f64>,
    pub rigid_rgb: Vec<f64>,
    pub alpha_final: Vec<f64>,
    pub alpha_rigid: Vec<f64>,
}

impl RenderedImage {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            final_rgb: vec![0.0; 3 * n],
            rigid_rgb: vec![0.0; 3 * n],
            alpha_final: vec![0.0; n],
            alpha_rigid: vec![0.0; n],
        }
    }
}
