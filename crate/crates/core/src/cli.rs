//! Command-line front end: `gen`, `train`, `render`, `eval`.
//!
//! Each command reads an optional JSON config (unknown keys rejected),
//! applies flag overrides on top, and writes the effective config to
//! `run_config.json` in its output directory. Re-running a command with
//! `--config run_config.json` reproduces it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{SceneDataset, Split};
use crate::error::{Error, Result};
use crate::fields::DecoderConfig;
use crate::geometry::add;
use crate::hashenc::GridConfig;
use crate::image::{write_png16, write_ppm, Image};
use crate::model::{Ablation, Model, ModelConfig};
use crate::posecode::AttentionConfig;
use crate::render::{Camera, CompositeConfig};
use crate::skeleton::{encoding_width, JointSelection, Pose};
use crate::synthdata::{generate_dataset, SceneConfig};
use crate::train::{score_view, TrainConfig, Trainer};

pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Debug, Parser)]
#[command(name = "compnerf", version, about = "Compositional articulated radiance fields on synthetic scenes")]
pub struct Cli {
    /// Worker thread cap (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Render images from a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint on held-out views.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub bones: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub eval_views: Option<usize>,
    #[arg(long)]
    pub eval_stride: Option<usize>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub gt_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `all` for joint training, or one dataset subject index.
    #[arg(long)]
    pub subjects: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ablation switch; repeatable.
    #[arg(long = "ablate", value_name = "NAME")]
    pub ablate: Vec<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub patches: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub eval_views: Option<usize>,
    #[arg(long)]
    pub eval_samples: Option<usize>,
    #[arg(long)]
    pub fg_cutoff: Option<f64>,
    #[arg(long)]
    pub scaled_attention: bool,
    #[arg(long)]
    pub no_background_channel: bool,
    /// Write zero instead of elapsed seconds in the metrics log.
    #[arg(long)]
    pub no_wall_clock: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset supplying poses and cameras.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Frame index; repeatable, paired with `--view`.
    #[arg(long)]
    pub frame: Vec<usize>,
    /// Camera index; repeatable, paired with `--frame`.
    #[arg(long)]
    pub view: Vec<usize>,
    /// JSON pose to render instead of dataset frames.
    #[arg(long)]
    pub pose_file: Option<PathBuf>,
    /// JSON camera for `--pose-file` renders.
    #[arg(long)]
    pub camera_file: Option<PathBuf>,
    /// Model subject to render.
    #[arg(long)]
    pub subject: Option<usize>,
    /// Render with another subject's ID code.
    #[arg(long)]
    pub id_code: Option<usize>,
    #[arg(long)]
    pub residual_scale: Option<f64>,
    /// Transmittance from the rigid density only.
    #[arg(long)]
    pub literal_transmittance: bool,
    #[arg(long)]
    pub rigid: bool,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Cap on held-out views, spread evenly.
    #[arg(long)]
    pub views: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenRun {
    pub out: PathBuf,
    #[serde(default)]
    pub scene: SceneConfig,
}

/// Model options other than the skeletons, which come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    pub volume_resolution: [usize; 3],
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
    pub fg_cutoff: f64,
    pub seed: u64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        let c = ModelConfig::new(Vec::new());
        Self {
            volume_resolution: c.volume_resolution,
            skinning_sigma: c.skinning_sigma,
            background_channel: c.background_channel,
            volume_pad: c.volume_pad,
            local_grid: c.local_grid,
            global_grid: c.global_grid,
            attention: c.attention,
            decoder: c.decoder,
            bands: c.bands,
            joints: c.joints,
            ablation: c.ablation,
            fg_cutoff: c.fg_cutoff,
            seed: c.seed,
        }
    }
}

impl ModelOptions {
    pub fn into_config(self, dataset: &SceneDataset, subjects: &[usize]) -> ModelConfig {
        ModelConfig {
            skeletons: subjects.iter().map(|&s| dataset.meta.bodies[s].skeleton.clone()).collect(),
            volume_resolution: self.volume_resolution,
            skinning_sigma: self.skinning_sigma,
            background_channel: self.background_channel,
            volume_pad: self.volume_pad,
            local_grid: self.local_grid,
            global_grid: self.global_grid,
            attention: AttentionConfig {
                encoding_width: encoding_width(self.bands),
                ..self.attention
            },
            decoder: self.decoder,
            bands: self.bands,
            joints: self.joints,
            ablation: self.ablation,
            fg_cutoff: self.fg_cutoff,
            subject_ids: subjects.to_vec(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub data: PathBuf,
    pub out: PathBuf,
    /// `"all"` or a dataset subject index.
    #[serde(default = "all_subjects")]
    pub subjects: String,
    #[serde(default)]
    pub model: ModelOptions,
    #[serde(default)]
    pub train: TrainConfig,
}

fn all_subjects() -> String {
    "all".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRun {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// `(frame, camera)` pairs taken from the dataset.
    #[serde(default)]
    pub views: Vec<(usize, usize)>,
    #[serde(default)]
    pub pose_file: Option<PathBuf>,
    #[serde(default)]
    pub camera_file: Option<PathBuf>,
    #[serde(default)]
    pub subject: usize,
    #[serde(default)]
    pub id_code: Option<usize>,
    #[serde(default = "one")]
    pub residual_scale: f64,
    #[serde(default)]
    pub literal_transmittance: bool,
    /// Write the rigid-only render instead of the final one.
    #[serde(default)]
    pub rigid: bool,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub png: bool,
}

fn one() -> f64 {
    1.0
}

fn default_samples() -> usize {
    TrainConfig::default().samples_per_ray
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub views: Option<usize>,
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Config-file object with the required keys filled from flags, so that
/// flags alone are enough.
fn base_object(config: &Option<PathBuf>) -> Result<serde_json::Map<String, serde_json::Value>> {
    match config {
        None => Ok(serde_json::Map::new()),
        Some(p) => match load_json::<serde_json::Value>(p)? {
            serde_json::Value::Object(m) => Ok(m),
            _ => Err(Error::Config(format!("{}: expected a JSON object", p.display()))),
        },
    }
}

fn finish<T: DeserializeOwned>(mut obj: serde_json::Map<String, serde_json::Value>, required: &[(&str, &Option<PathBuf>)]) -> Result<T> {
    for (key, flag) in required {
        if let Some(p) = flag {
            obj.insert(key.to_string(), serde_json::Value::String(p.display().to_string()));
        }
        if !obj.contains_key(*key) {
            return Err(Error::Config(format!("missing required option --{key}")));
        }
    }
    serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| Error::Config(e.to_string()))
}

fn echo<T: Serialize>(dir: &Path, run: &T) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(RUN_CONFIG_FILE);
    let json = serde_json::to_string_pretty(run).expect("run config serializes");
    fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
}

pub fn resolve_gen(a: &GenArgs) -> Result<GenRun> {
    let mut run: GenRun = finish(base_object(&a.config)?, &[("out", &Some(a.out.clone()))])?;
    let s = &mut run.scene;
    macro_rules! over {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { s.$f = v; } )* };
    }
    over!(subjects, frames, bones, width, height, eval_views, eval_stride, amplitude, gt_samples, seed);
    Ok(run)
}

pub fn cmd_gen(run: &GenRun) -> Result<SceneDataset> {
    run.scene.validate()?;
    let ds = generate_dataset(&run.scene)?;
    fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
    ds.save(&run.out)?;
    echo(&run.out, run)?;
    Ok(ds)
}

pub fn resolve_train(a: &TrainArgs) -> Result<TrainRun> {
    let mut run: TrainRun = finish(base_object(&a.config)?, &[("data", &a.data), ("out", &a.out)])?;
    if let Some(s) = &a.subjects {
        run.subjects = s.clone();
    }
    let t = &mut run.train;
    if let Some(v) = a.steps {
        t.max_steps = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
        run.model.seed = v;
    }
    macro_rules! over {
        ($($f:ident => $g:ident),*) => { $( if let Some(v) = a.$f { t.$g = v; } )* };
    }
    over!(lambda => lambda, patches => patches, patch_size => patch_size, samples => samples_per_ray, eval_every => eval_every);
    if a.eval_views.is_some() {
        t.eval_views = a.eval_views;
    }
    if a.eval_samples.is_some() {
        t.eval_samples = a.eval_samples;
    }
    if a.no_wall_clock {
        t.wall_clock = false;
    }
    let m = &mut run.model;
    for name in &a.ablate {
        m.ablation.set(name)?;
    }
    if let Some(v) = a.fg_cutoff {
        m.fg_cutoff = v;
    }
    if a.scaled_attention {
        m.attention.scaled = true;
    }
    if a.no_background_channel {
        m.background_channel = false;
    }
    Ok(run)
}

/// Parses `all` or a single index against the dataset.
pub fn parse_subjects(spec: &str, available: usize) -> Result<Vec<usize>> {
    if spec == "all" {
        return Ok((0..available).collect());
    }
    let i: usize = spec
        .parse()
        .map_err(|_| Error::Config(format!("--subjects expects `all` or an index, got `{spec}`")))?;
    if i >= available {
        return Err(Error::Config(format!("subject {i} out of range; dataset has {available}")));
    }
    Ok(vec![i])
}

pub fn cmd_train(run: &TrainRun) -> Result<crate::train::TrainReport> {
    run.train.validate()?;
    let ds = SceneDataset::load(&run.data)?;
    let subjects = parse_subjects(&run.subjects, ds.subjects())?;
    let model = Model::new(run.model.clone().into_config(&ds, &subjects))?;
    echo(&run.out, run)?;
    let mut trainer = Trainer::new(model, &ds, run.train.clone())?;
    trainer.run(Some(&run.out))
}

pub fn resolve_render(a: &RenderArgs) -> Result<RenderRun> {
    let mut run: RenderRun = finish(base_object(&a.config)?, &[("checkpoint", &a.checkpoint), ("out", &a.out)])?;
    if a.frame.len() != a.view.len() {
        return Err(Error::Config("--frame and --view must be given the same number of times".into()));
    }
    if !a.frame.is_empty() {
        run.views = a.frame.iter().copied().zip(a.view.iter().copied()).collect();
    }
    if a.data.is_some() {
        run.data = a.data.clone();
    }
    if a.pose_file.is_some() {
        run.pose_file = a.pose_file.clone();
    }
    if a.camera_file.is_some() {
        run.camera_file = a.camera_file.clone();
    }
    if let Some(v) = a.subject {
        run.subject = v;
    }
    if a.id_code.is_some() {
        run.id_code = a.id_code;
    }
    if let Some(v) = a.residual_scale {
        run.residual_scale = v;
    }
    if let Some(v) = a.samples {
        run.samples = v;
    }
    run.literal_transmittance |= a.literal_transmittance;
    run.rigid |= a.rigid;
    run.png |= a.png;
    Ok(run)
}

fn load_model(path: &Path) -> Result<Model> {
    Checkpoint::load(path)?.into_model()
}

/// Camera facing the root joint from the front, as in generated scenes.
pub fn default_camera(pose: &Pose) -> Camera {
    let s = SceneConfig::default();
    let target = pose.joints[0];
    let eye = add(target, [0.0, 0.0, s.camera_distance]);
    Camera::looking_at(eye, target, [0.0, 1.0, 0.0], s.focal, s.width, s.height)
}

/// Writes each requested render; returns the written paths.
pub fn cmd_render(run: &RenderRun) -> Result<Vec<PathBuf>> {
    if !run.residual_scale.is_finite() {
        return Err(Error::Config("--residual-scale must be finite".into()));
    }
    if run.samples == 0 {
        return Err(Error::Config("--samples must be positive".into()));
    }
    let model = load_model(&run.checkpoint)?;
    model.check_subject(run.subject)?;
    if let Some(c) = run.id_code {
        model.check_subject(c)?;
    }
    let dataset = run.data.as_ref().map(|d| SceneDataset::load(d)).transpose()?;
    let mut opts = model.render_options(CompositeConfig {
        background: dataset.as_ref().map_or([0.0; 3], |d| d.meta.background),
        residual_scale: run.residual_scale,
        literal_transmittance: run.literal_transmittance,
    });
    opts.code_override = run.id_code;
    let mut jobs: Vec<(String, Pose, Camera)> = Vec::new();
    if let Some(pf) = &run.pose_file {
        let pose: Pose = load_json(pf)?;
        let sk = &model.config.skeletons[run.subject];
        pose.validate(sk, 1e-6)
            .map_err(|e| Error::Config(format!("{}: {e}", pf.display())))?;
        let camera = match (&run.camera_file, &dataset, run.views.first()) {
            (Some(cf), _, _) => load_json(cf)?,
            (None, Some(d), Some(&(_, v))) => d
                .meta
                .cameras
                .get(v)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("camera {v} not in dataset")))?,
            _ => default_camera(&pose),
        };
        jobs.push(("pose".into(), pose, camera));
    } else {
        let d = dataset
            .as_ref()
            .ok_or_else(|| Error::Config("render needs --data with --frame/--view, or --pose-file".into()))?;
        if run.views.is_empty() {
            return Err(Error::Config("no --frame/--view pairs requested".into()));
        }
        let ds_subject = model.config.dataset_subjects()[run.subject];
        for &(f, v) in &run.views {
            let pose = d
                .meta
                .poses
                .get(ds_subject)
                .and_then(|p| p.get(f))
                .ok_or_else(|| Error::InvalidArgument(format!("frame {f} not in dataset for subject {ds_subject}")))?;
            let camera = d
                .meta
                .cameras
                .get(v)
                .ok_or_else(|| Error::InvalidArgument(format!("camera {v} not in dataset")))?;
            jobs.push((format!("frame_{f:04}_view_{v:03}"), pose.clone(), camera.clone()));
        }
    }
    fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
    let mut written = Vec::new();
    for (stem, pose, camera) in jobs {
        let r = model.render_image(run.subject, &pose, &camera, run.samples, &opts, 512)?;
        let rgb = if run.rigid { r.rigid_rgb } else { r.final_rgb };
        let img = Image::from_data(r.width, r.height, rgb)?;
        let p = run.out.join(format!("{stem}.ppm"));
        write_ppm(&p, &img)?;
        written.push(p);
        if run.png {
            let p = run.out.join(format!("{stem}.png"));
            write_png16(&p, &img)?;
            written.push(p);
        }
    }
    echo(&run.out, run)?;
    Ok(written)
}

pub fn resolve_eval(a: &EvalArgs) -> Result<EvalRun> {
    let mut run: EvalRun = finish(base_object(&a.config)?, &[("checkpoint", &a.checkpoint), ("data", &a.data), ("out", &a.out)])?;
    if let Some(v) = a.samples {
        run.samples = v;
    }
    if a.views.is_some() {
        run.views = a.views;
    }
    Ok(run)
}

pub const EVAL_FILE: &str = "eval.csv";

/// Scores every held-out view of the checkpoint's subjects; writes
/// `eval.csv` and returns its text.
pub fn cmd_eval(run: &EvalRun) -> Result<String> {
    if run.samples == 0 || run.views == Some(0) {
        return Err(Error::Config("--samples and --views must be positive".into()));
    }
    let ds = SceneDataset::load(&run.data)?;
    let model = load_model(&run.checkpoint)?;
    let ids = model.config.dataset_subjects();
    for (i, &s) in ids.iter().enumerate() {
        if s >= ds.subjects() || ds.meta.bodies[s].skeleton != model.config.skeletons[i] {
            return Err(Error::Checkpoint(format!("checkpoint subject {i} does not match dataset subject {s}")));
        }
    }
    let views = ds.split(Split::Eval, Some(&ids));
    let views: Vec<usize> = crate::train::spread(views.len(), run.views).into_iter().map(|i| views[i]).collect();
    let mut text = String::from("view,subject,frame,camera,psnr,ssim\n");
    let (mut sp, mut ss) = (0.0, 0.0);
    for &v in &views {
        let meta = &ds.meta.views[v];
        let s = ids.iter().position(|&x| x == meta.subject).expect("filtered by subject");
        let score = score_view(&model, &ds, v, s, run.samples, 512)?;
        sp += score.psnr;
        ss += score.ssim;
        text.push_str(&format!("{v},{},{},{},{},{}\n", meta.subject, meta.frame, meta.camera, score.psnr, score.ssim));
    }
    let n = views.len().max(1) as f64;
    text.push_str(&format!("mean,,,,{},{}\n", sp / n, ss / n));
    fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
    let p = run.out.join(EVAL_FILE);
    fs::write(&p, &text).map_err(|e| Error::io(&p, e))?;
    echo(&run.out, run)?;
    Ok(text)
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // Fails only if a pool already exists, which keeps the earlier cap.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Gen(a) => {
            let run = resolve_gen(&a)?;
            let ds = cmd_gen(&run)?;
            println!("wrote {} views to {}", ds.meta.views.len(), run.out.display());
        }
        Command::Train(a) => {
            let run = resolve_train(&a)?;
            let r = cmd_train(&run)?;
            if let Some((step, e)) = r.evals.last() {
                println!("step {step}: eval PSNR {:.3} dB, SSIM {:.4}", e.psnr, e.ssim);
            }
            println!("trained {} steps; outputs in {}", r.steps, run.out.display());
        }
        Command::Render(a) => {
            let run = resolve_render(&a)?;
            for p in cmd_render(&run)? {
                println!("{}", p.display());
            }
        }
        Command::Eval(a) => {
            let run = resolve_eval(&a)?;
            print!("{}", cmd_eval(&run)?);
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::DEFAULT_BANDS;

    #[test]
    fn subjects_spec() {
        assert_eq!(parse_subjects("all", 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_subjects("1", 3).unwrap(), vec![1]);
        assert!(matches!(parse_subjects("5", 3), Err(Error::Config(_))));
        assert!(matches!(parse_subjects("x", 3), Err(Error::Config(_))));
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"data": "d", "out": "o", "train": {"max_steps": 7, "lambda": 0.5}}"#).unwrap();
        let cli = Cli::try_parse_from(["compnerf", "train", "--config", cfg.to_str().unwrap(), "--steps", "3", "--ablate", "disable_residual"]).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let run = resolve_train(&a).unwrap();
        assert_eq!(run.train.max_steps, 3);
        assert_eq!(run.train.lambda, 0.5);
        assert!(run.model.ablation.disable_residual);
        assert_eq!(run.data, PathBuf::from("d"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"data": "d", "out": "o", "train": {"learning_rate": 1}}"#).unwrap();
        let cli = Cli::try_parse_from(["compnerf", "train", "--config", cfg.to_str().unwrap()]).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert!(matches!(resolve_train(&a), Err(Error::Config(_))));
    }

    #[test]
    fn default_bands_match_attention_width() {
        assert_eq!(ModelOptions::default().attention.encoding_width, encoding_width(DEFAULT_BANDS));
    }
}
