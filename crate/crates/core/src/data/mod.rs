//! Multi-view QA datasets: manifest loading, c-tags, scene splits, PPM
//! images, and the synthetic generator.

mod ctag;
mod manifest;
pub mod ppm;
mod split;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ctag::{parse_ctags, CTag};
pub use manifest::{
    load_dataset, load_image, LoadReport, Manifest, ManifestFrame, ManifestQa, ManifestScene, QASample,
};
pub use split::{split_scenes, SceneSplit, Split};
pub use synth::{gen_synthetic, SynthSummary, COLORS};

/// The six canonical cameras, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Camera {
    #[serde(rename = "CAM_FRONT")]
    Front,
    #[serde(rename = "CAM_FRONT_LEFT")]
    FrontLeft,
    #[serde(rename = "CAM_FRONT_RIGHT")]
    FrontRight,
    #[serde(rename = "CAM_BACK")]
    Back,
    #[serde(rename = "CAM_BACK_LEFT")]
    BackLeft,
    #[serde(rename = "CAM_BACK_RIGHT")]
    BackRight,
}

impl Camera {
    pub const ALL: [Camera; 6] = [
        Camera::Front,
        Camera::FrontLeft,
        Camera::FrontRight,
        Camera::Back,
        Camera::BackLeft,
        Camera::BackRight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Camera::Front => "CAM_FRONT",
            Camera::FrontLeft => "CAM_FRONT_LEFT",
            Camera::FrontRight => "CAM_FRONT_RIGHT",
            Camera::Back => "CAM_BACK",
            Camera::BackLeft => "CAM_BACK_LEFT",
            Camera::BackRight => "CAM_BACK_RIGHT",
        }
    }

    pub fn index(self) -> usize {
        Camera::ALL.iter().position(|&c| c == self).expect("listed")
    }
}

impl fmt::Display for Camera {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Camera {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Camera::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown camera `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Perception,
    Prediction,
    Planning,
    Behavior,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Perception => "perception",
            Category::Prediction => "prediction",
            Category::Planning => "planning",
            Category::Behavior => "behavior",
        }
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Category::Perception,
            Category::Prediction,
            Category::Planning,
            Category::Behavior,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| format!("unknown category `{s}`"))
    }
}
