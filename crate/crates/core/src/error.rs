use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Invalid model, training, or run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A dataset record violates its schema; carries the scene/frame ids when known.
    #[error("data error{}: {message}", location(.scene_id, .frame_id))]
    Data {
        scene_id: Option<String>,
        frame_id: Option<String>,
        message: String,
    },

    /// Empty collection where at least one element is required.
    #[error("empty input: {0}")]
    Empty(String),

    /// Non-finite value during training.
    #[error("numeric abort: non-finite {what} in `{param}`")]
    Numeric { param: String, what: &'static str },

    /// Malformed checkpoint, vocabulary, or report file.
    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

fn location(scene: &Option<String>, frame: &Option<String>) -> String {
    match (scene, frame) {
        (Some(s), Some(f)) => format!(" (scene {s}, frame {f})"),
        (Some(s), None) => format!(" (scene {s})"),
        _ => String::new(),
    }
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn data(message: impl Into<String>) -> Self {
        Error::Data {
            scene_id: None,
            frame_id: None,
            message: message.into(),
        }
    }
}
