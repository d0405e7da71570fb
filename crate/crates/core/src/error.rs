use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },

    #[error("mask and image shapes differ in frame {frame}")]
    MaskShapeMismatch { frame: usize },

    #[error("missing rgb image for frame {0}")]
    MissingRgb(usize),
    #[error("missing depth image for frame {0}")]
    MissingDepth(usize),
    #[error("missing mask image for frame {0}")]
    MissingMask(usize),
    #[error("mask for frame {0} is not binary")]
    NonBinaryMask(usize),
    #[error("frame {frame} has shape {got:?}, expected {expected:?}")]
    InconsistentShape {
        frame: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("missing dataset metadata: {0}")]
    MissingMeta(PathBuf),

    #[error("non-finite loss {value} at ray {ray} (pixel {pixel:?}, frame time {time})")]
    NonFiniteLoss {
        value: f64,
        ray: usize,
        pixel: (u32, u32),
        time: f64,
    },
    #[error("training diverged at step {step}: loss {loss} stayed above 10x initial {initial} for {window} steps")]
    Diverged {
        step: usize,
        loss: f64,
        initial: f64,
        window: usize,
    },
    #[error("NaN in MPM particle {0}")]
    MpmNan(usize),
    #[error("time step {dt} violates CFL bound {bound}")]
    Cfl { dt: f64, bound: f64 },

    #[error("edge ({0}, {1}) is shared by three or more faces")]
    NonManifoldEdge(u32, u32),
    #[error("mesh has no boundary")]
    NoBoundary,
    #[error("mesh has {0} boundary loops, expected exactly one")]
    MultipleHoles(usize),
    #[error("boundary edges do not form a closed cycle")]
    NotACycle,
    #[error("base depth {zeta} must exceed the deepest boundary vertex {max_z}")]
    ThicknessTooSmall { zeta: f64, max_z: f64 },
    #[error("mesh has {0} connected components, expected one")]
    MultipleComponents(usize),
    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),
    #[error("no particles generated inside the mesh")]
    EmptyParticles,
    #[error("degenerate face {0}")]
    DegenerateFace(usize),

    #[error("face {face} references vertex {index} but mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// True for failures of the numerics (divergence, NaN) rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::Diverged { .. } | Error::MpmNan(_) | Error::Cfl { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
