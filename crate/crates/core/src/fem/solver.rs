use crate::error::{Error, Result};
use crate::fem::mesh::FemMesh;
use crate::fem::sensor::SensorModel;
use crate::linalg::BandedSymmetric;

/// Nodal potentials for every drive pattern, center node grounded.
#[derive(Debug, Clone)]
pub struct Fields {
    /// `potentials[d][node]` for current driven from electrode `d` to `d + 1`.
    pub potentials: Vec<Vec<f64>>,
    /// `electrode[d][e]`: mean potential over the nodes of electrode `e`.
    pub electrode: Vec<Vec<f64>>,
}

/// Right-hand side for unit-strength drive between electrodes `a` and `a+1`:
/// current spread evenly over each electrode's nodes.
fn pattern(mesh: &FemMesh, a: usize, scale: f64) -> Vec<f64> {
    let groups = mesh.electrodes();
    let b = (a + 1) % groups.len();
    let mut rhs = vec![0.0; mesh.nodes().len()];
    for &n in &groups[a] {
        rhs[n] += scale / groups[a].len() as f64;
    }
    for &n in &groups[b] {
        rhs[n] -= scale / groups[b].len() as f64;
    }
    rhs
}

/// Solves the Laplace problem for every adjacent drive pair.
pub fn solve_fields(sensor: &SensorModel, mesh: &FemMesh) -> Result<Fields> {
    sensor.validate()?;
    if mesh.electrodes().len() != sensor.electrode_count {
        return Err(Error::shape("mesh electrodes", sensor.electrode_count, mesh.electrodes().len()));
    }
    let n = mesh.nodes().len();
    // node 0 is grounded and dropped from the system
    let mut k = BandedSymmetric::zeros(n - 1, mesh.bandwidth());
    for (e, nodes) in mesh.elements().iter().enumerate() {
        let ke = mesh.unit_stiffness(e);
        let s = mesh.conductivity()[e];
        for i in 0..3 {
            for j in 0..=i {
                let (a, b) = (nodes[i], nodes[j]);
                if a == 0 || b == 0 {
                    continue;
                }
                if a == b {
                    k.add(a - 1, a - 1, s * ke[i][i]);
                } else {
                    k.add(a - 1, b - 1, s * ke[i][j]);
                }
            }
        }
    }
    let chol = k
        .factor()
        .map_err(|e| Error::Singular(format!("stiffness matrix: {e}")))?;
    let electrodes = mesh.electrodes();
    let mut potentials = Vec::with_capacity(electrodes.len());
    let mut electrode = Vec::with_capacity(electrodes.len());
    for d in 0..electrodes.len() {
        let rhs = pattern(mesh, d, sensor.current);
        let mut u = vec![0.0];
        u.extend(chol.solve(&rhs[1..]));
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::Singular("non-finite potentials".into()));
        }
        electrode.push(
            electrodes
                .iter()
                .map(|g| g.iter().map(|&i| u[i]).sum::<f64>() / g.len() as f64)
                .collect(),
        );
        potentials.push(u);
    }
    Ok(Fields { potentials, electrode })
}

/// Differential electrode voltages in protocol order (`E (E - 3)` values).
pub fn solve_forward(sensor: &SensorModel, mesh: &FemMesh) -> Result<Vec<f64>> {
    let fields = solve_fields(sensor, mesh)?;
    Ok(measure(sensor, &fields))
}

pub(crate) fn measure(sensor: &SensorModel, fields: &Fields) -> Vec<f64> {
    let e = sensor.electrode_count;
    sensor
        .protocol()
        .iter()
        .map(|m| {
            let u = &fields.electrode[m.drive];
            u[m.sense] - u[(m.sense + 1) % e]
        })
        .collect()
}
