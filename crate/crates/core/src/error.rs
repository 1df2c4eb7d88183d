use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("quaternion norm is zero")]
    ZeroQuaternion,

    #[error("point cloud has no points")]
    EmptyPointCloud,

    #[error("bounding box must have positive volume")]
    InvalidBox,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("projected covariance is singular (det = {det:e})")]
    SingularCovariance { det: f64 },

    #[error("pixel ({x}, {y}) is outside the {width}x{height} image")]
    PixelOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("query embedding has zero norm")]
    ZeroQuery,

    #[error("no Gaussian contributes at pixel ({x}, {y})")]
    EmptyPixel { x: usize, y: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("time {0} is outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("file is truncated")]
    TruncatedFile,

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable tag, used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroQuaternion => "zero_quaternion",
            Error::EmptyPointCloud => "empty_point_cloud",
            Error::InvalidBox => "invalid_box",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::SingularCovariance { .. } => "singular_covariance",
            Error::PixelOutOfBounds { .. } => "pixel_out_of_bounds",
            Error::ZeroQuery => "zero_query",
            Error::EmptyPixel { .. } => "empty_pixel",
            Error::Parse(_) => "parse_error",
            Error::MissingFile(_) => "missing_file",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::TimeOutOfRange(_) => "time_out_of_range",
            Error::BadMagic { .. } => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::TruncatedFile => "truncated_file",
            Error::TrailingBytes(_) => "trailing_bytes",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Image(_) => "image_error",
            Error::Io(_) => "io_error",
        }
    }
}

pub(crate) fn shape_err(what: impl Into<String>) -> Error {
    Error::ShapeMismatch(what.into())
}
