use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fem::sensor::SensorModel;

/// Structured triangulation of the disc.
///
/// Node 0 is the center; ring `k` (radius `k R / rings`) holds
/// `E · max(1, round(2πk / E))` equally spaced nodes starting at angle 0, so
/// the mesh maps onto itself under a rotation by one electrode pitch. Nodes
/// are numbered ring by ring, which keeps the stiffness matrix banded.
#[derive(Debug, Clone)]
pub struct FemMesh {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    conductivity: Vec<f64>,
    ring_start: Vec<usize>,
    electrodes: Vec<Vec<usize>>,
    sectors: usize,
}

fn ring_size(k: usize, sectors: usize) -> usize {
    if k == 0 {
        return 1;
    }
    let per = (2.0 * PI * k as f64 / sectors as f64).round().max(1.0) as usize;
    sectors * per
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl FemMesh {
    /// Homogeneous mesh at the sensor's background conductivity.
    pub fn build(sensor: &SensorModel) -> Result<Self> {
        sensor.validate()?;
        let sectors = sensor.electrode_count;
        let rings = sensor.mesh_rings;
        let mut nodes = vec![[0.0, 0.0]];
        let mut ring_start = vec![0];
        for k in 1..=rings {
            ring_start.push(nodes.len());
            let n = ring_size(k, sectors);
            let r = sensor.radius * k as f64 / rings as f64;
            for j in 0..n {
                let t = 2.0 * PI * j as f64 / n as f64;
                nodes.push([r * t.cos(), r * t.sin()]);
            }
        }
        ring_start.push(nodes.len());

        let mut elements = Vec::new();
        let n1 = ring_size(1, sectors);
        for j in 0..n1 {
            elements.push([0, 1 + j, 1 + (j + 1) % n1]);
        }
        for k in 2..=rings {
            let (ni, no) = (ring_size(k - 1, sectors), ring_size(k, sectors));
            let (si, so) = (ring_start[k - 1], ring_start[k]);
            let (mut p, mut q) = (0, 0);
            while p < ni || q < no {
                let inner_next = q == no || (p < ni && (p + 1) * no <= (q + 1) * ni);
                if inner_next {
                    elements.push([si + p, si + (p + 1) % ni, so + q % no]);
                    p += 1;
                } else {
                    elements.push([si + p % ni, so + (q + 1) % no, so + q]);
                    q += 1;
                }
            }
        }
        for e in &mut elements {
            if signed_area(nodes[e[0]], nodes[e[1]], nodes[e[2]]) < 0.0 {
                e.swap(1, 2);
            }
        }

        let boundary = ring_start[rings]..ring_start[rings + 1];
        let nb = boundary.len();
        let half = sensor.electrode_coverage * PI;
        let mut electrodes = Vec::with_capacity(sectors);
        for e in 0..sectors {
            let center = 2.0 * PI * e as f64 / sectors as f64;
            let group: Vec<usize> = (0..nb)
                .filter(|&j| {
                    let t = 2.0 * PI * j as f64 / nb as f64;
                    let d = (t - center).rem_euclid(2.0 * PI);
                    d.min(2.0 * PI - d) <= half + 1e-12
                })
                .map(|j| boundary.start + j)
                .collect();
            if group.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "electrode {e} covers no boundary node; increase coverage or mesh rings"
                )));
            }
            electrodes.push(group);
        }

        let mesh = Self {
            conductivity: vec![sensor.background_conductivity; elements.len()],
            nodes,
            elements,
            ring_start,
            electrodes,
            sectors,
        };
        mesh.check()?;
        Ok(mesh)
    }

    fn check(&self) -> Result<()> {
        for (i, e) in self.elements.iter().enumerate() {
            if self.area(i) <= 0.0 {
                return Err(Error::InvalidArgument(format!("element {i} {e:?} is degenerate")));
            }
        }
        let mut seen = vec![false; self.nodes.len()];
        for g in &self.electrodes {
            for &n in g {
                if std::mem::replace(&mut seen[n], true) {
                    return Err(Error::InvalidArgument("electrodes overlap".into()));
                }
            }
        }
        Ok(())
    }

    /// Same geometry with new per-element conductivities.
    pub fn with_conductivity(&self, conductivity: Vec<f64>) -> Result<Self> {
        if conductivity.len() != self.elements.len() {
            return Err(Error::shape("element conductivity", self.elements.len(), conductivity.len()));
        }
        if let Some(i) = conductivity.iter().position(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "element {i} conductivity {} must be positive",
                conductivity[i]
            )));
        }
        Ok(Self {
            conductivity,
            ..self.clone()
        })
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn conductivity(&self) -> &[f64] {
        &self.conductivity
    }

    pub fn electrodes(&self) -> &[Vec<usize>] {
        &self.electrodes
    }

    pub fn ring_count(&self) -> usize {
        self.ring_start.len() - 2
    }

    pub fn boundary_node_count(&self) -> usize {
        let r = self.ring_count();
        self.ring_start[r + 1] - self.ring_start[r]
    }

    pub fn vertices(&self, e: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.elements[e];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn area(&self, e: usize) -> f64 {
        let [a, b, c] = self.vertices(e);
        signed_area(a, b, c)
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.vertices(e);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Largest index gap between two nodes of one element.
    pub fn bandwidth(&self) -> usize {
        self.elements
            .iter()
            .map(|e| e.iter().max().unwrap() - e.iter().min().unwrap())
            .max()
            .unwrap_or(0)
    }

    /// Stiffness of element `e` for unit conductivity.
    pub fn unit_stiffness(&self, e: usize) -> [[f64; 3]; 3] {
        let [p0, p1, p2] = self.vertices(e);
        let b = [p1[1] - p2[1], p2[1] - p0[1], p0[1] - p1[1]];
        let c = [p2[0] - p1[0], p0[0] - p2[0], p1[0] - p0[0]];
        let s = 1.0 / (4.0 * self.area(e));
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] = s * (b[i] * b[j] + c[i] * c[j]);
            }
        }
        k
    }

    /// Node reached by rotating `node` through `steps` electrode pitches.
    pub fn rotate_node(&self, node: usize, steps: usize) -> usize {
        if node == 0 {
            return 0;
        }
        let ring = self.ring_start.partition_point(|&s| s <= node) - 1;
        let start = self.ring_start[ring];
        let n = self.ring_start[ring + 1] - start;
        start + (node - start + steps * n / self.sectors) % n
    }

    /// Element index map for a rotation through `steps` electrode pitches.
    pub fn rotation_map(&self, steps: usize) -> Vec<usize> {
        let key = |e: &[usize; 3]| {
            let mut k = *e;
            k.sort_unstable();
            k
        };
        let lookup: HashMap<[usize; 3], usize> = self.elements.iter().enumerate().map(|(i, e)| (key(e), i)).collect();
        self.elements
            .iter()
            .map(|e| {
                let r = e.map(|n| self.rotate_node(n, steps));
                *lookup.get(&key(&r)).expect("mesh is rotation symmetric")
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_mesh_shape() {
        let m = FemMesh::build(&SensorModel::default()).unwrap();
        assert_eq!(m.boundary_node_count(), 144);
        assert!(m.electrodes().iter().all(|g| g.len() == 5));
        assert!((2000..8000).contains(&m.elements().len()), "{}", m.elements().len());
        let total: f64 = (0..m.elements().len()).map(|e| m.area(e)).sum();
        // polygon inscribed in the unit circle with 144 sides
        let inscribed = 0.5 * 144.0 * (2.0 * PI / 144.0).sin();
        assert!((total - inscribed).abs() < 1e-12);
    }

    #[test]
    fn stiffness_rows_sum_to_zero() {
        let m = FemMesh::build(&SensorModel::default()).unwrap();
        for e in [0, 100, 2000] {
            let k = m.unit_stiffness(e);
            for row in k {
                assert!(row.iter().sum::<f64>().abs() < 1e-12);
            }
            assert!(k[0][0] > 0.0);
        }
    }

    #[test]
    fn rotation_is_a_permutation() {
        let m = FemMesh::build(&SensorModel::default()).unwrap();
        let map = m.rotation_map(1);
        let mut seen = vec![false; map.len()];
        for &i in &map {
            assert!(!seen[i]);
            seen[i] = true;
        }
        for e in [5, 700, 3000] {
            let a = m.centroid(e);
            let b = m.centroid(map[e]);
            let t = 2.0 * PI / 16.0;
            let rx = a[0] * t.cos() - a[1] * t.sin();
            let ry = a[0] * t.sin() + a[1] * t.cos();
            assert!((rx - b[0]).abs() < 1e-12 && (ry - b[1]).abs() < 1e-12);
        }
        assert_eq!(m.rotate_node(m.electrodes()[0][0], 1), m.electrodes()[1][2]);
    }

    #[test]
    fn conductivity_must_be_positive() {
        let m = FemMesh::build(&SensorModel::default()).unwrap();
        let n = m.elements().len();
        assert!(m.with_conductivity(vec![1.0; n - 1]).is_err());
        let mut s = vec![1.0; n];
        s[3] = 0.0;
        assert!(m.with_conductivity(s).is_err());
    }
}
