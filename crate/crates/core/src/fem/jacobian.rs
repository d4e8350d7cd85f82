use crate::error::Result;
use crate::fem::geometry::triangle_rect_overlap;
use crate::fem::mesh::FemMesh;
use crate::fem::phantom::pixel_rect;
use crate::fem::sensor::SensorModel;
use crate::fem::solver::{solve_fields, Fields};
use crate::linalg::Matrix;
use crate::model::PixelGrid;

/// Area overlap between mesh elements and in-mask pixels.
#[derive(Debug, Clone)]
pub struct PixelMap {
    // per element: (pixel index, overlap / element area)
    weights: Vec<Vec<(usize, f64)>>,
    pixels: usize,
}

impl PixelMap {
    pub fn new(mesh: &FemMesh, grid: &PixelGrid, radius: f64) -> Self {
        let (h, w) = (grid.height(), grid.width());
        let dx = 2.0 * radius / w as f64;
        let dy = 2.0 * radius / h as f64;
        let weights = (0..mesh.elements().len())
            .map(|e| {
                let tri = mesh.vertices(e);
                let area = mesh.area(e);
                let (xmin, xmax) = tri.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p[0]), b.max(p[0])));
                let (ymin, ymax) = tri.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p[1]), b.max(p[1])));
                let c0 = (((xmin + radius) / dx).floor().max(0.0) as usize).min(w - 1);
                let c1 = (((xmax + radius) / dx).floor().max(0.0) as usize).min(w - 1);
                let r0 = (((radius - ymax) / dy).floor().max(0.0) as usize).min(h - 1);
                let r1 = (((radius - ymin) / dy).floor().max(0.0) as usize).min(h - 1);
                let mut out = Vec::new();
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        let Some(k) = grid.pixel_at_slot(r * w + c) else {
                            continue;
                        };
                        let a = triangle_rect_overlap(tri, pixel_rect(grid, radius, r, c));
                        if a > 0.0 {
                            out.push((k, a / area));
                        }
                    }
                }
                out
            })
            .collect();
        Self {
            weights,
            pixels: grid.pixel_count(),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels
    }

    /// `(pixel, fraction of the element's area)` pairs of element `e`.
    pub fn weights(&self, e: usize) -> &[(usize, f64)] {
        &self.weights[e]
    }

    /// Element values induced by per-pixel values (area-weighted).
    pub fn to_elements(&self, pixel_values: &[f64]) -> Vec<f64> {
        assert_eq!(pixel_values.len(), self.pixels, "one value per pixel");
        self.weights
            .iter()
            .map(|ws| ws.iter().map(|&(k, w)| w * pixel_values[k]).sum())
            .collect()
    }

    /// Pixel sensitivities from element sensitivities (`M x elements`).
    pub fn aggregate(&self, element_jacobian: &Matrix<f64>) -> Matrix<f64> {
        let m = element_jacobian.rows();
        let mut out = Matrix::zeros(m, self.pixels);
        for i in 0..m {
            let src = element_jacobian.row(i);
            let dst = out.row_mut(i);
            for (e, ws) in self.weights.iter().enumerate() {
                for &(k, w) in ws {
                    dst[k] += src[e] * w;
                }
            }
        }
        out
    }
}

fn field_gradients(mesh: &FemMesh, u: &[f64]) -> Vec<[f64; 2]> {
    (0..mesh.elements().len())
        .map(|e| {
            let [p0, p1, p2] = mesh.vertices(e);
            let b = [p1[1] - p2[1], p2[1] - p0[1], p0[1] - p1[1]];
            let c = [p2[0] - p1[0], p0[0] - p2[0], p1[0] - p0[0]];
            let s = 1.0 / (2.0 * mesh.area(e));
            let n = mesh.elements()[e];
            let mut g = [0.0; 2];
            for i in 0..3 {
                g[0] += u[n[i]] * b[i] * s;
                g[1] += u[n[i]] * c[i] * s;
            }
            g
        })
        .collect()
}

/// `∂V / ∂σ_e`: `−∫_e ∇u_drive · ∇u_sense dA / I` for every reading and
/// element, at the mesh's current conductivity.
pub fn element_jacobian(sensor: &SensorModel, mesh: &FemMesh, fields: &Fields) -> Matrix<f64> {
    let grads: Vec<Vec<[f64; 2]>> = fields.potentials.iter().map(|u| field_gradients(mesh, u)).collect();
    let areas: Vec<f64> = (0..mesh.elements().len()).map(|e| mesh.area(e)).collect();
    let protocol = sensor.protocol();
    let mut j = Matrix::zeros(protocol.len(), areas.len());
    for (row, m) in protocol.iter().enumerate() {
        let (gd, gs) = (&grads[m.drive], &grads[m.sense]);
        for (e, out) in j.row_mut(row).iter_mut().enumerate() {
            *out = -areas[e] * (gd[e][0] * gs[e][0] + gd[e][1] * gs[e][1]) / sensor.current;
        }
    }
    j
}

/// Raw (un-normalized) pixel sensitivity matrix, `M x N`, linearized at the
/// mesh's conductivity.
pub fn assemble_jacobian(sensor: &SensorModel, mesh: &FemMesh, grid: &PixelGrid) -> Result<Matrix<f64>> {
    let fields = solve_fields(sensor, mesh)?;
    let je = element_jacobian(sensor, mesh, &fields);
    Ok(PixelMap::new(mesh, grid, sensor.radius).aggregate(&je))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::solver::solve_forward;
    use crate::model::build_circular_mask;

    #[test]
    fn element_jacobian_matches_perturbation() {
        let s = SensorModel::default();
        let mesh = FemMesh::build(&s).unwrap();
        let fields = solve_fields(&s, &mesh).unwrap();
        let je = element_jacobian(&s, &mesh, &fields);
        let v0 = solve_forward(&s, &mesh).unwrap();
        // an element next to the boundary has strong sensitivity
        let e = mesh.elements().len() - 3;
        let mut sigma = mesh.conductivity().to_vec();
        let d = 1e-4 * sigma[e];
        sigma[e] += d;
        let v1 = solve_forward(&s, &mesh.with_conductivity(sigma).unwrap()).unwrap();
        let col = je.column(e);
        let scale = col.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for i in 0..v0.len() {
            let fd = (v1[i] - v0[i]) / d;
            assert!((fd - col[i]).abs() <= 1e-3 * scale, "{i}: {fd} vs {}", col[i]);
        }
    }

    #[test]
    fn pixel_weights_partition_covered_area() {
        let s = SensorModel::default();
        let mesh = FemMesh::build(&s).unwrap();
        let grid = build_circular_mask(16, 16).unwrap();
        let map = PixelMap::new(&mesh, &grid, s.radius);
        // elements near the center lie entirely inside mask pixels
        for e in 0..50 {
            let total: f64 = map.weights(e).iter().map(|w| w.1).sum();
            assert!((total - 1.0).abs() < 1e-12, "element {e}: {total}");
        }
        let ones = map.to_elements(&vec![1.0; grid.pixel_count()]);
        assert!(ones.iter().all(|&v| v <= 1.0 + 1e-12));
    }

    #[test]
    fn zero_perturbation_predicts_nothing() {
        let s = SensorModel::default();
        let mesh = FemMesh::build(&s).unwrap();
        let grid = build_circular_mask(8, 8).unwrap();
        let j = assemble_jacobian(&s, &mesh, &grid).unwrap();
        assert_eq!(j.shape(), (208, grid.pixel_count()));
        let dv = j.matmul(&Matrix::zeros(grid.pixel_count(), 1)).unwrap();
        assert!(dv.as_slice().iter().all(|&v| v == 0.0));
    }
}
