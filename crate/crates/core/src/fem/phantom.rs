use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::geometry::{polygon_area, subtriangle_centroids, Rect};
use crate::fem::mesh::FemMesh;
use crate::model::PixelGrid;

/// Inclusion geometry in meters, disc centered at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    /// `angle` rotates the rectangle counter-clockwise, in radians.
    Rectangle {
        center: [f64; 2],
        size: [f64; 2],
        #[serde(default)]
        angle: f64,
    },
    Triangle {
        vertices: [[f64; 2]; 3],
    },
}

impl Shape {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            Shape::Circle { center, radius } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                dx * dx + dy * dy <= radius * radius
            }
            Shape::Rectangle { center, size, angle } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                let (s, c) = angle.sin_cos();
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                u.abs() <= size[0] / 2.0 && v.abs() <= size[1] / 2.0
            }
            Shape::Triangle { vertices: [a, b, c] } => {
                let side = |p0: [f64; 2], p1: [f64; 2]| (p1[0] - p0[0]) * (p[1] - p0[1]) - (p1[1] - p0[1]) * (p[0] - p0[0]);
                let (d0, d1, d2) = (side(a, b), side(b, c), side(c, a));
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Circle { center, radius } => center.iter().all(|v| v.is_finite()) && radius.is_finite() && radius > 0.0,
            Shape::Rectangle { center, size, angle } => {
                center.iter().chain(&size).all(|v| v.is_finite()) && size.iter().all(|&v| v > 0.0) && angle.is_finite()
            }
            Shape::Triangle { vertices } => {
                vertices.iter().flatten().all(|v| v.is_finite()) && polygon_area(&vertices).abs() > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid inclusion geometry {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    #[serde(flatten)]
    pub shape: Shape,
    /// One value in S/m per scheduled frequency.
    pub conductivity: Vec<f64>,
}

/// Multi-frequency phantom. Later inclusions cover earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(default = "default_background")]
    pub background: f64,
    pub frequencies: Vec<f64>,
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
}

fn default_background() -> f64 {
    2.0
}

impl PhantomSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("phantom: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.frequencies.is_empty() {
            return bad("phantom needs at least one frequency".into());
        }
        if self.frequencies.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return bad("frequencies must be positive".into());
        }
        for (i, f) in self.frequencies.iter().enumerate() {
            if self.frequencies[..i].contains(f) {
                return bad(format!("frequency {f} listed twice"));
            }
        }
        if !(self.background.is_finite() && self.background > 0.0) {
            return bad(format!("background conductivity {} must be positive", self.background));
        }
        for (i, inc) in self.inclusions.iter().enumerate() {
            inc.shape.validate()?;
            if inc.conductivity.len() != self.frequencies.len() {
                return Err(Error::shape("inclusion conductivities", self.frequencies.len(), inc.conductivity.len()));
            }
            if inc.conductivity.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return bad(format!("inclusion {i} has a non-positive conductivity"));
            }
        }
        Ok(())
    }

    pub fn frequency_index(&self, hz: f64) -> Option<usize> {
        self.frequencies.iter().position(|&f| f == hz)
    }

    /// Conductivity at point `p` for frequency index `f`.
    pub fn conductivity_at(&self, p: [f64; 2], f: usize) -> f64 {
        self.inclusions
            .iter()
            .rev()
            .find(|inc| inc.shape.contains(p))
            .map_or(self.background, |inc| inc.conductivity[f])
    }

    /// Element conductivities, each the mean over nine interior samples.
    pub fn element_conductivity(&self, mesh: &FemMesh, f: usize) -> Vec<f64> {
        (0..mesh.elements().len())
            .map(|e| {
                subtriangle_centroids(mesh.vertices(e))
                    .iter()
                    .map(|&p| self.conductivity_at(p, f))
                    .sum::<f64>()
                    / 9.0
            })
            .collect()
    }

    /// Per in-mask pixel conductivity from a 4x4 sample lattice.
    pub fn pixel_conductivity(&self, grid: &PixelGrid, radius: f64, f: usize) -> Vec<f64> {
        (0..grid.pixel_count())
            .map(|k| {
                let (r, c) = grid.coords(k);
                let rect = pixel_rect(grid, radius, r, c);
                let mut s = 0.0;
                for i in 0..4 {
                    for j in 0..4 {
                        let x = rect.x0 + (j as f64 + 0.5) / 4.0 * (rect.x1 - rect.x0);
                        let y = rect.y0 + (i as f64 + 0.5) / 4.0 * (rect.y1 - rect.y0);
                        s += self.conductivity_at([x, y], f);
                    }
                }
                s / 16.0
            })
            .collect()
    }
}

/// Physical extent of pixel `(row, col)`: the grid spans the square
/// `[-radius, radius]^2`, row 0 at the top (largest `y`).
pub fn pixel_rect(grid: &PixelGrid, radius: f64, row: usize, col: usize) -> Rect {
    let dx = 2.0 * radius / grid.width() as f64;
    let dy = 2.0 * radius / grid.height() as f64;
    Rect {
        x0: -radius + col as f64 * dx,
        x1: -radius + (col + 1) as f64 * dx,
        y0: radius - (row + 1) as f64 * dy,
        y1: radius - row as f64 * dy,
    }
}
