//! Imaging geometry and the linear forward model.
//!
//! Conductivity changes live on the in-mask pixels of an `H x W` grid. The
//! vector form is `N x L` (pixel by frequency); the grid form is
//! `L x H x W` with zeros at void pixels. [`ProjectionMap`] converts between
//! the two, and [`SensitivityMatrix`] maps either form to boundary voltage
//! differences.

mod frames;
mod grid;
mod operator;
mod projection;
mod stack;

pub use frames::{ImagingMode, MeasurementFrameSet};
pub use grid::{build_circular_mask, PixelGrid};
pub use operator::{forward, forward_modified, SensitivityMatrix};
pub use projection::{build_projection, embed, extract, flatten_frames, ProjectionMap};
pub use stack::{ConductivityStack, GridStack};
