use thiserror::Error;

use crate::blayer::BoundaryLayerError;
use crate::corrector::CorrectorError;
use crate::fiber::FiberError;
use crate::geometry::GeometryError;
use crate::homogenized::HomogenizedError;
use crate::series::SeriesError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    BoundaryLayer(#[from] BoundaryLayerError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Corrector(#[from] CorrectorError),
    #[error(transparent)]
    Fiber(#[from] FiberError),
    #[error(transparent)]
    Homogenized(#[from] HomogenizedError),
}

pub type Result<T> = std::result::Result<T, Error>;
