use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ppm, Camera, Category};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::vision::Image;

/// On-disk dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenes: Vec<ManifestScene>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScene {
    pub scene_id: String,
    pub frames: Vec<ManifestFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub frame_id: String,
    /// Camera name to image path, relative to the manifest's directory.
    pub views: BTreeMap<String, String>,
    pub qas: Vec<ManifestQa>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestQa {
    pub question: String,
    pub answer: String,
    pub category: String,
}

/// One multi-view question/answer record with resolved image paths.
#[derive(Debug, Clone, PartialEq)]
pub struct QASample {
    /// `scene/frame/index`
    pub id: String,
    pub scene_id: String,
    pub frame_id: String,
    /// Image paths in canonical camera order.
    pub views: [PathBuf; 6],
    pub question: String,
    pub answer: String,
    pub category: Category,
}

impl QASample {
    pub fn load_views(&self) -> Result<Vec<Image>> {
        self.views.iter().map(|p| load_image(p)).collect()
    }
}

#[derive(Debug, Default)]
pub struct LoadReport {
    pub samples: Vec<QASample>,
    /// Records rejected in lenient mode, with the reason.
    pub skipped: Vec<Error>,
}

fn record_error(scene: &str, frame: &str, message: String) -> Error {
    Error::Data {
        scene_id: Some(scene.to_string()),
        frame_id: Some(frame.to_string()),
        message,
    }
}

fn resolve_views(root: &Path, scene: &str, frame: &ManifestFrame) -> Result<[PathBuf; 6]> {
    if let Some(bad) = frame.views.keys().find(|k| k.parse::<Camera>().is_err()) {
        return Err(record_error(scene, &frame.frame_id, format!("unknown camera `{bad}`")));
    }
    let missing: Vec<&str> = Camera::ALL
        .iter()
        .map(|c| c.name())
        .filter(|n| !frame.views.contains_key(*n))
        .collect();
    if !missing.is_empty() {
        return Err(record_error(
            scene,
            &frame.frame_id,
            format!("missing view {}", missing.join(", ")),
        ));
    }
    Ok(Camera::ALL.map(|c| root.join(&frame.views[c.name()])))
}

fn build_sample(
    scene: &str,
    frame: &ManifestFrame,
    views: &[PathBuf; 6],
    index: usize,
    qa: &ManifestQa,
) -> Result<QASample> {
    let err = |m: String| record_error(scene, &frame.frame_id, format!("qa {index}: {m}"));
    if qa.question.trim().is_empty() {
        return Err(err("empty question".into()));
    }
    if qa.answer.trim().is_empty() {
        return Err(err("empty answer".into()));
    }
    let category = qa.category.parse().map_err(err)?;
    Ok(QASample {
        id: format!("{scene}/{}/{index}", frame.frame_id),
        scene_id: scene.to_string(),
        frame_id: frame.frame_id.clone(),
        views: views.clone(),
        question: qa.question.clone(),
        answer: qa.answer.clone(),
        category,
    })
}

/// Reads and validates a manifest. In strict mode the first invalid record
/// aborts the load; otherwise invalid records are skipped and reported.
pub fn load_dataset(path: &Path, strict: bool) -> Result<LoadReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: malformed manifest: {e}", path.display())))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut report = LoadReport::default();
    let reject = |e: Error, report: &mut LoadReport| -> Result<()> {
        if strict {
            Err(e)
        } else {
            report.skipped.push(e);
            Ok(())
        }
    };
    for scene in &manifest.scenes {
        for frame in &scene.frames {
            let views = match resolve_views(root, &scene.scene_id, frame) {
                Ok(v) => v,
                Err(e) => {
                    reject(e, &mut report)?;
                    continue;
                }
            };
            for (i, qa) in frame.qas.iter().enumerate() {
                match build_sample(&scene.scene_id, frame, &views, i, qa) {
                    Ok(s) => report.samples.push(s),
                    Err(e) => reject(e, &mut report)?,
                }
            }
        }
    }
    Ok(report)
}

/// Loads a PPM image, or a container file holding a `3 × H × W` array
/// named `image` (extension `.mvf`).
pub fn load_image(path: &Path) -> Result<Image> {
    if path.extension().is_some_and(|e| e == "mvf") {
        let t = Container::read(path)?.tensor("image")?;
        let &[c, h, w] = t.shape() else {
            return Err(Error::data(format!(
                "{}: image array has shape {:?}, expected [3, H, W]",
                path.display(),
                t.shape()
            )));
        };
        if c != 3 {
            return Err(Error::data(format!("{}: image has {c} channels", path.display())));
        }
        return Image::new(h, w, t.into_data());
    }
    ppm::read(path)
}
