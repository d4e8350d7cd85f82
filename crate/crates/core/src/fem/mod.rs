//! Synthetic data: a 2D finite-element model of a circular sensor with gap
//! electrodes, adjacent drive/measure protocol, sensitivity assembly on a
//! pixel grid, multi-frequency phantoms and calibrated noise.

mod geometry;
mod jacobian;
mod mesh;
mod phantom;
mod sensor;
mod solver;
mod synth;

pub use geometry::{polygon_area, triangle_rect_overlap, Rect};
pub use jacobian::{assemble_jacobian, element_jacobian, PixelMap};
pub use mesh::FemMesh;
pub use phantom::{pixel_rect, Inclusion, PhantomSpec, Shape};
pub use sensor::{Measurement, SensorModel};
pub use solver::{solve_fields, solve_forward, Fields};
pub use synth::{add_noise, normalize, synthesize_measurements, Simulation};
