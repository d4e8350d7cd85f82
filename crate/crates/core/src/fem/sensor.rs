use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Circular sensor with equally spaced gap electrodes driven by the adjacent
/// protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    /// Disc radius in meters.
    pub radius: f64,
    pub electrode_count: usize,
    /// Fraction of the perimeter covered by each electrode.
    pub electrode_coverage: f64,
    /// Background conductivity in S/m.
    pub background_conductivity: f64,
    /// Injected current in amperes.
    pub current: f64,
    /// Number of node rings between center and boundary.
    pub mesh_rings: usize,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            radius: 1.0,
            electrode_count: 16,
            electrode_coverage: 0.03,
            background_conductivity: 2.0,
            current: 1.0,
            mesh_rings: 24,
        }
    }
}

/// One adjacent-protocol reading: current driven from `drive` to
/// `drive + 1`, voltage read between `sense` and `sense + 1` (mod E).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Measurement {
    pub drive: usize,
    pub sense: usize,
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.electrode_count < 4 {
            return bad(format!("need at least 4 electrodes, got {}", self.electrode_count));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return bad(format!("radius {} must be positive", self.radius));
        }
        if !(self.electrode_coverage > 0.0 && self.electrode_coverage * (self.electrode_count as f64) < 1.0) {
            return bad(format!(
                "electrode coverage {} must be positive and leave gaps between electrodes",
                self.electrode_coverage
            ));
        }
        if !(self.background_conductivity.is_finite() && self.background_conductivity > 0.0) {
            return bad(format!("background conductivity {} must be positive", self.background_conductivity));
        }
        if !(self.current.is_finite() && self.current != 0.0) {
            return bad("injected current must be finite and nonzero".into());
        }
        if self.mesh_rings < 2 {
            return bad(format!("mesh needs at least 2 rings, got {}", self.mesh_rings));
        }
        Ok(())
    }

    /// `E (E - 3)`: every drive pair against every sense pair that shares no
    /// electrode with it.
    pub fn measurement_count(&self) -> usize {
        self.electrode_count * (self.electrode_count - 3)
    }

    /// Readings in output order: drive-major, sense ascending.
    pub fn protocol(&self) -> Vec<Measurement> {
        let e = self.electrode_count;
        let mut out = Vec::with_capacity(self.measurement_count());
        for drive in 0..e {
            for sense in 0..e {
                let touches = |a: usize| a == drive || a == (drive + 1) % e;
                if touches(sense) || touches((sense + 1) % e) {
                    continue;
                }
                out.push(Measurement { drive, sense });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_electrodes_give_208() {
        let s = SensorModel::default();
        assert_eq!(s.measurement_count(), 208);
        let p = s.protocol();
        assert_eq!(p.len(), 208);
        let mut sorted = p.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 208);
        // brute-force enumeration of disjoint pairs
        let brute = (0..16)
            .flat_map(|d| (0..16).map(move |m| (d, m)))
            .filter(|&(d, m)| {
                let a = [d, (d + 1) % 16];
                let b = [m, (m + 1) % 16];
                a.iter().all(|x| !b.contains(x))
            })
            .count();
        assert_eq!(brute, 208);
    }

    #[test]
    fn validation() {
        assert!(SensorModel { electrode_count: 3, ..Default::default() }.validate().is_err());
        assert!(SensorModel { electrode_coverage: 0.07, ..Default::default() }.validate().is_err());
        SensorModel::default().validate().unwrap();
    }
}
