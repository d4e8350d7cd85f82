use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::grid::PixelGrid;
use crate::model::projection::{build_projection, embed, extract};
use crate::scalar::Real;

/// Dense `frames x height x width` stack of images.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack<T> {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> GridStack<T> {
    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            data: vec![T::zero(); frames * height * width],
        }
    }

    pub fn from_vec(frames: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != frames * height * width {
            return Err(Error::shape(
                "GridStack::from_vec",
                frames * height * width,
                data.len(),
            ));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, frame: usize, row: usize, col: usize) -> T {
        self.data[(frame * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, frame: usize, row: usize, col: usize, v: T) {
        self.data[(frame * self.height + row) * self.width + col] = v;
    }

    /// Row-major `height x width` view of one frame.
    pub fn frame(&self, frame: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[frame * n..(frame + 1) * n]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

/// Multi-frequency conductivity images tied to a pixel grid, held in the
/// `N x L` vector form.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityStack<T> {
    grid: PixelGrid,
    values: Matrix<T>,
}

impl<T: Real> ConductivityStack<T> {
    pub fn new(grid: PixelGrid, values: Matrix<T>) -> Result<Self> {
        if values.rows() != grid.pixel_count() {
            return Err(Error::shape(
                "ConductivityStack::new",
                grid.pixel_count(),
                values.rows(),
            ));
        }
        Ok(Self { grid, values })
    }

    /// Drops whatever the stack holds at void pixels.
    pub fn from_grid(grid: PixelGrid, stack: &GridStack<T>) -> Result<Self> {
        let values = extract(stack, &build_projection(&grid))?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &PixelGrid {
        &self.grid
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    pub fn to_grid(&self) -> GridStack<T> {
        embed(&self.values, &build_projection(&self.grid)).expect("row count checked at construction")
    }
}
