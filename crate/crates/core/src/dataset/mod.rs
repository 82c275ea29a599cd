//! Episode storage, stream alignment, chunk extraction and normalization.

mod align;
mod chunk;
mod episode;
mod io;
mod normalize;

use thiserror::Error;

pub use align::{align_streams, grid_times};
pub use chunk::{
    episode_actions, extract_chunks, ActionChunk, ActionSpace, Observation, ObservationActionPair, DEFAULT_HORIZON,
};
pub use episode::{content_ref, DemoEpisode, Embodiment, FrameRecord, GripperRecord, RobotRecord};
pub use io::{list_episodes, read_episode, write_episode, EPISODE_FORMAT_VERSION, NORMALIZATION_FILE};
pub use normalize::{NormalizationStats, STD_EPSILON};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("streams share fewer than two grid points")]
    InsufficientOverlap,
    #[error("episode has no robot samples")]
    EmptyEpisode,
    #[error("chunk horizon must be at least 1")]
    InvalidHorizon,
    #[error("{0} stream is not time-ordered")]
    NotTimeOrdered(&'static str),
    #[error("no actions to fit normalization statistics")]
    NoActions,
    #[error("format_version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),
    #[error("{file} is truncated: expected {expected} bytes, found {found}")]
    Truncated {
        file: String,
        expected: usize,
        found: usize,
    },
    #[error("malformed episode data: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
