use std::fmt;
use std::sync::LazyLock;

use regex::Regex;

use super::Camera;

/// Object reference of the form `<c1,CAM_FRONT,100.0,200.5>`.
#[derive(Debug, Clone, PartialEq)]
pub struct CTag {
    pub object_id: String,
    pub camera: Camera,
    pub x: f64,
    pub y: f64,
}

impl fmt::Display for CTag {
    /// Canonical form: no spaces, one decimal place.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{},{:.1},{:.1}>", self.object_id, self.camera, self.x, self.y)
    }
}

static CTAG: LazyLock<Regex> = LazyLock::new(|| {
    let num = r"(\d+(?:\.\d*)?|\.\d+)";
    Regex::new(&format!(r"<(\w+), *(CAM_[A-Z_]+), *{num}, *{num}>")).expect("valid regex")
});

/// Every well-formed c-tag in `text`, in order. Text that only resembles a
/// tag (unknown camera, missing field) is skipped.
pub fn parse_ctags(text: &str) -> Vec<CTag> {
    CTAG.captures_iter(text)
        .filter_map(|c| {
            Some(CTag {
                object_id: c[1].to_string(),
                camera: c[2].parse().ok()?,
                x: c[3].parse().ok()?,
                y: c[4].parse().ok()?,
            })
        })
        .collect()
}
