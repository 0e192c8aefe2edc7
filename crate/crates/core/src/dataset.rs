//! On-disk scene datasets: `meta.json` plus one PPM image and one PGM mask
//! per view, under `subject_{s}/frame_{f:04}_view_{v:03}.{ppm,pgm}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{read_pgm, read_ppm, write_pgm, write_ppm, Image, Mask};
use crate::render::Camera;
use crate::skeleton::{Pose, Skeleton};
use crate::synthdata::{SceneConfig, SubjectBody};

pub const DATASET_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewMeta {
    pub subject: usize,
    pub frame: usize,
    pub camera: usize,
    pub split: Split,
    pub image: String,
    pub mask: String,
}

impl ViewMeta {
    pub fn new(subject: usize, frame: usize, camera: usize, split: Split) -> Self {
        let stem = format!("subject_{subject}/frame_{frame:04}_view_{camera:03}");
        Self {
            subject,
            frame,
            camera,
            split,
            image: format!("{stem}.ppm"),
            mask: format!("{stem}.pgm"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    pub seed: u64,
    pub scene: SceneConfig,
    pub bodies: Vec<SubjectBody>,
    /// Index 0 is the training camera.
    pub cameras: Vec<Camera>,
    /// Per subject, per frame.
    pub poses: Vec<Vec<Pose>>,
    pub views: Vec<ViewMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub meta: Meta,
    /// Parallel to `meta.views`.
    pub images: Vec<Image>,
    pub masks: Vec<Mask>,
}

impl SceneDataset {
    pub fn subjects(&self) -> usize {
        self.meta.bodies.len()
    }

    pub fn skeletons(&self) -> Vec<Skeleton> {
        self.meta.bodies.iter().map(|b| b.skeleton.clone()).collect()
    }

    pub fn pose(&self, view: usize) -> &Pose {
        let v = &self.meta.views[view];
        &self.meta.poses[v.subject][v.frame]
    }

    pub fn camera(&self, view: usize) -> &Camera {
        &self.meta.cameras[self.meta.views[view].camera]
    }

    /// View indices of a split, optionally restricted to some subjects.
    pub fn split(&self, split: Split, subjects: Option<&[usize]>) -> Vec<usize> {
        self.meta
            .views
            .iter()
            .enumerate()
            .filter(|(_, v)| v.split == split && subjects.is_none_or(|s| s.contains(&v.subject)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks cross-references, image sizes, and pose consistency.
    pub fn validate(&self, root: &Path) -> Result<()> {
        let m = &self.meta;
        let meta_path = root.join(META_FILE);
        if m.version != DATASET_VERSION {
            return Err(Error::dataset(&meta_path, format!("version {} unsupported (expected {DATASET_VERSION})", m.version)));
        }
        if m.bodies.is_empty() || m.poses.len() != m.bodies.len() {
            return Err(Error::dataset(&meta_path, "field `poses` must have one sequence per subject in `bodies`"));
        }
        for (s, (body, seq)) in m.bodies.iter().zip(&m.poses).enumerate() {
            body.skeleton
                .validate()
                .map_err(|e| Error::dataset(&meta_path, format!("subject {s} skeleton: {e}")))?;
            for (f, pose) in seq.iter().enumerate() {
                pose.validate(&body.skeleton, 1e-6)
                    .map_err(|e| Error::dataset(&meta_path, format!("subject {s} frame {f} pose: {e}")))?;
            }
        }
        for (c, cam) in m.cameras.iter().enumerate() {
            cam.validate()
                .map_err(|e| Error::dataset(&meta_path, format!("camera {c}: {e}")))?;
            if cam.width != m.width || cam.height != m.height {
                return Err(Error::dataset(&meta_path, format!("camera {c} resolution differs from dataset resolution")));
            }
        }
        for (i, v) in m.views.iter().enumerate() {
            let bad = v.subject >= m.bodies.len() || v.frame >= m.poses[v.subject].len() || v.camera >= m.cameras.len();
            if bad {
                return Err(Error::dataset(&meta_path, format!("view {i} references a missing subject, frame, or camera")));
            }
            let img = &self.images[i];
            if img.width != m.width || img.height != m.height {
                return Err(Error::dataset(root.join(&v.image), "image size differs from dataset resolution"));
            }
            let mask = &self.masks[i];
            if mask.width != m.width || mask.height != m.height {
                return Err(Error::dataset(root.join(&v.mask), "mask size differs from dataset resolution"));
            }
        }
        Ok(())
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        for s in 0..self.subjects() {
            let d = root.join(format!("subject_{s}"));
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        for (i, v) in self.meta.views.iter().enumerate() {
            write_ppm(&root.join(&v.image), &self.images[i])?;
            write_pgm(&root.join(&v.mask), &self.masks[i])?;
        }
        let json = serde_json::to_string_pretty(&self.meta).expect("dataset metadata serializes");
        let p = root.join(META_FILE);
        fs::write(&p, json).map_err(|e| Error::io(&p, e))
    }

    pub fn load(root: &Path) -> Result<SceneDataset> {
        let p = root.join(META_FILE);
        if !root.is_dir() {
            return Err(Error::dataset(root, "dataset directory does not exist"));
        }
        if !p.is_file() {
            return Err(Error::dataset(&p, "missing dataset metadata"));
        }
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::dataset(&p, e.to_string()))?;
        let mut images = Vec::with_capacity(meta.views.len());
        let mut masks = Vec::with_capacity(meta.views.len());
        for v in &meta.views {
            images.push(read_ppm(&safe_join(root, &v.image)?).map_err(|e| frame_error(e, v))?);
            masks.push(read_pgm(&safe_join(root, &v.mask)?).map_err(|e| frame_error(e, v))?);
        }
        let ds = SceneDataset { meta, images, masks };
        ds.validate(root)?;
        Ok(ds)
    }
}

fn frame_error(e: Error, v: &ViewMeta) -> Error {
    match e {
        Error::Dataset { path, message } => Error::Dataset {
            path,
            message: format!("frame {} view {}: {message}", v.frame, v.camera),
        },
        Error::Io { path, source } => Error::Dataset {
            path,
            message: format!("frame {} view {}: {source}", v.frame, v.camera),
        },
        other => other,
    }
}

fn safe_join(root: &Path, rel: &str) -> Result<PathBuf> {
    let p = Path::new(rel);
    if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(Error::dataset(root.join(META_FILE), format!("view path `{rel}` escapes the dataset directory")));
    }
    Ok(root.join(p))
}
