use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestFrame, ManifestQa, ManifestScene};
use super::{ppm, CTag, Camera, Category};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::vision::Image;

pub const IMAGE_SIZE: usize = 64;
/// Side of each square object, in pixels.
pub const OBJECT_SIZE: usize = 12;
const BACKGROUND: [f64; 3] = [0.5, 0.5, 0.5];

pub const COLORS: [(&str, [f64; 3]); 6] = [
    ("red", [1.0, 0.0, 0.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("white", [1.0, 1.0, 1.0]),
    ("black", [0.0, 0.0, 0.0]),
];

/// One generated object: a solid square centered at `(x, y)` in one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    pub id: String,
    pub camera: Camera,
    pub color: String,
    pub x: f64,
    pub y: f64,
}

impl SynthObject {
    pub fn ctag(&self) -> CTag {
        CTag {
            object_id: self.id.clone(),
            camera: self.camera,
            x: self.x,
            y: self.y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFrame {
    pub scene_id: String,
    pub frame_id: String,
    pub objects: Vec<SynthObject>,
}

impl SynthFrame {
    pub fn render(&self, camera: Camera) -> Image {
        let mut img = Image::filled(IMAGE_SIZE, IMAGE_SIZE, BACKGROUND).expect("valid size");
        for o in self.objects.iter().filter(|o| o.camera == camera) {
            let rgb = COLORS.iter().find(|(n, _)| *n == o.color).expect("palette color").1;
            let half = OBJECT_SIZE as f64 / 2.0;
            let (x0, y0) = ((o.x - half) as usize, (o.y - half) as usize);
            for y in y0..y0 + OBJECT_SIZE {
                for x in x0..x0 + OBJECT_SIZE {
                    for (c, v) in rgb.iter().enumerate() {
                        img.set(c, y, x, *v);
                    }
                }
            }
        }
        img
    }

    /// The four templated questions with their answers.
    pub fn qas(&self) -> Vec<ManifestQa> {
        let first = &self.objects[0];
        let last = self.objects.last().expect("at least one object");
        let braking = self.objects.iter().any(|o| o.camera == Camera::Front);
        let qa = |q: String, a: String, c: Category| ManifestQa {
            question: q,
            answer: a,
            category: c.name().to_string(),
        };
        vec![
            qa(
                format!("What color is the object in {}?", first.camera),
                first.color.clone(),
                Category::Perception,
            ),
            qa(
                format!("Which camera shows the {} object?", last.color),
                last.camera.to_string(),
                Category::Prediction,
            ),
            qa(
                "Identify the important object in the scene.".into(),
                first.ctag().to_string(),
                Category::Planning,
            ),
            qa(
                "Predict the behavior for the ego vehicle.".into(),
                if braking {
                    "The ego vehicle is slowing down."
                } else {
                    "The ego vehicle is going straight."
                }
                .into(),
                Category::Behavior,
            ),
        ]
    }
}

/// Draws the scene layout: 1 to 3 objects per frame, each in a different
/// camera with a different color, centered on a 16-pixel grid.
pub fn synth_frames(n_scenes: usize, frames_per_scene: usize, seed: u64) -> Vec<SynthFrame> {
    let mut rng = SeededRng::new(seed);
    let grid = IMAGE_SIZE / 16;
    let mut out = Vec::with_capacity(n_scenes * frames_per_scene);
    for s in 0..n_scenes {
        for f in 0..frames_per_scene {
            let n = 1 + rng.below(3) as usize;
            let mut cams = Camera::ALL;
            rng.shuffle(&mut cams);
            let mut colors: Vec<&str> = COLORS.iter().map(|c| c.0).collect();
            rng.shuffle(&mut colors);
            let objects = (0..n)
                .map(|i| {
                    let gx = rng.below(grid as u64) as f64;
                    let gy = rng.below(grid as u64) as f64;
                    SynthObject {
                        id: format!("c{}", i + 1),
                        camera: cams[i],
                        color: colors[i].to_string(),
                        x: 8.0 + 16.0 * gx,
                        y: 8.0 + 16.0 * gy,
                    }
                })
                .collect();
            out.push(SynthFrame {
                scene_id: format!("scene-{s:04}"),
                frame_id: format!("frame-{f:02}"),
                objects,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub scenes: usize,
    pub frames: usize,
    pub samples: usize,
    pub images: usize,
}

#[derive(Serialize)]
struct RefEntry<'a> {
    id: String,
    text: &'a str,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.json`, `refs.json`, `objects.json`, and one PPM per
/// camera and frame under `out`.
pub fn gen_synthetic(out: &Path, n_scenes: usize, frames_per_scene: usize, seed: u64) -> Result<SynthSummary> {
    if n_scenes == 0 || frames_per_scene == 0 {
        return Err(Error::Config(format!(
            "need at least one scene and one frame (got {n_scenes} and {frames_per_scene})"
        )));
    }
    let frames = synth_frames(n_scenes, frames_per_scene, seed);
    let images = out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let mut scenes: Vec<ManifestScene> = Vec::new();
    let mut refs = Vec::new();
    let mut answers = Vec::new();
    for fr in &frames {
        let mut views = std::collections::BTreeMap::new();
        for cam in Camera::ALL {
            let rel = format!("images/{}_{}_{}.ppm", fr.scene_id, fr.frame_id, cam);
            ppm::write(&out.join(&rel), &fr.render(cam))?;
            views.insert(cam.to_string(), rel);
        }
        let qas = fr.qas();
        for (i, qa) in qas.iter().enumerate() {
            answers.push((format!("{}/{}/{i}", fr.scene_id, fr.frame_id), qa.answer.clone()));
        }
        let frame = ManifestFrame {
            frame_id: fr.frame_id.clone(),
            views,
            qas,
        };
        match scenes.last_mut() {
            Some(s) if s.scene_id == fr.scene_id => s.frames.push(frame),
            _ => scenes.push(ManifestScene {
                scene_id: fr.scene_id.clone(),
                frames: vec![frame],
            }),
        }
    }
    for (id, answer) in &answers {
        refs.push(RefEntry {
            id: id.clone(),
            text: answer.as_str(),
        });
    }
    write_json(&out.join("manifest.json"), &Manifest { scenes })?;
    write_json(&out.join("refs.json"), &refs)?;
    write_json(&out.join("objects.json"), &frames)?;
    Ok(SynthSummary {
        scenes: n_scenes,
        frames: frames.len(),
        samples: answers.len(),
        images: frames.len() * Camera::ALL.len(),
    })
}
