use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fem::jacobian::assemble_jacobian;
use crate::fem::mesh::FemMesh;
use crate::fem::phantom::PhantomSpec;
use crate::fem::sensor::SensorModel;
use crate::fem::solver::solve_forward;
use crate::linalg::Matrix;
use crate::model::{build_projection, ConductivityStack, ImagingMode, MeasurementFrameSet, PixelGrid, SensitivityMatrix};
use crate::scalar::Real;

/// Everything a reconstruction run needs, plus the answer.
#[derive(Debug, Clone)]
pub struct Simulation {
    /// Normalized sensitivity matrix.
    pub jacobian: SensitivityMatrix<f64>,
    /// Normalized voltage differences, one column per imaged frequency.
    pub frames: MeasurementFrameSet<f64>,
    /// Pixel conductivity change relative to the background conductivity.
    pub truth: ConductivityStack<f64>,
    /// Raw reference voltages used for normalization.
    pub reference_voltages: Vec<f64>,
}

/// `V = (V_raw − V_ref) / V_ref` row-wise, and `J` rows divided by `V_ref`
/// and scaled by the background conductivity, so that `V ≈ J Σ` with `Σ` the
/// relative conductivity change.
pub fn normalize(
    v_raw: &Matrix<f64>,
    v_ref: &[f64],
    j_raw: &Matrix<f64>,
    background: f64,
) -> Result<(Matrix<f64>, Matrix<f64>)> {
    if v_raw.rows() != v_ref.len() {
        return Err(Error::shape("normalize voltages", v_ref.len(), v_raw.rows()));
    }
    if j_raw.rows() != v_ref.len() {
        return Err(Error::shape("normalize jacobian", v_ref.len(), j_raw.rows()));
    }
    if let Some(m) = v_ref.iter().position(|&v| v == 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("reference voltage {m} is zero or non-finite")));
    }
    let v = Matrix::from_fn(v_raw.rows(), v_raw.cols(), |m, l| (v_raw.get(m, l) - v_ref[m]) / v_ref[m]);
    let j = Matrix::from_fn(j_raw.rows(), j_raw.cols(), |m, k| j_raw.get(m, k) * background / v_ref[m]);
    Ok((v, j))
}

/// Simulates time-difference (against the empty disc) or
/// frequency-difference (against the phantom at a reference frequency)
/// measurements of `phantom`.
pub fn synthesize_measurements(
    phantom: &PhantomSpec,
    sensor: &SensorModel,
    grid: &PixelGrid,
    mode: ImagingMode,
) -> Result<Simulation> {
    phantom.validate()?;
    sensor.validate()?;
    let bg = sensor.background_conductivity;
    if (phantom.background - bg).abs() > 1e-12 * bg {
        return Err(Error::InvalidArgument(format!(
            "phantom background {} differs from sensor background {bg}",
            phantom.background
        )));
    }
    let mesh = FemMesh::build(sensor)?;
    let solve_at = |f: usize| solve_forward(sensor, &mesh.with_conductivity(phantom.element_conductivity(&mesh, f))?);

    let (reference, ref_pixels, imaged): (Vec<f64>, Vec<f64>, Vec<usize>) = match mode {
        ImagingMode::TimeDifference => (
            solve_forward(sensor, &mesh)?,
            vec![bg; grid.pixel_count()],
            (0..phantom.frequencies.len()).collect(),
        ),
        ImagingMode::FrequencyDifference { reference_hz } => {
            let r = phantom.frequency_index(reference_hz).ok_or_else(|| {
                Error::InvalidArgument(format!("reference frequency {reference_hz} Hz is not in the phantom schedule"))
            })?;
            let frames: Vec<usize> = (0..phantom.frequencies.len()).filter(|&f| f != r).collect();
            if frames.is_empty() {
                return Err(Error::InvalidArgument("frequency difference needs a second frequency".into()));
            }
            (solve_at(r)?, phantom.pixel_conductivity(grid, sensor.radius, r), frames)
        }
    };

    let m = reference.len();
    let mut v_raw = Matrix::zeros(m, imaged.len());
    let mut truth = Matrix::zeros(grid.pixel_count(), imaged.len());
    for (l, &f) in imaged.iter().enumerate() {
        v_raw.set_column(l, &solve_at(f)?);
        let pix = phantom.pixel_conductivity(grid, sensor.radius, f);
        let rel: Vec<f64> = pix.iter().zip(&ref_pixels).map(|(s, r)| (s - r) / bg).collect();
        truth.set_column(l, &rel);
    }

    let j_raw = assemble_jacobian(sensor, &mesh, grid)?;
    let (v, j) = normalize(&v_raw, &reference, &j_raw, bg)?;
    let frequencies = imaged.iter().map(|&f| phantom.frequencies[f]).collect();
    Ok(Simulation {
        jacobian: SensitivityMatrix::new(j, build_projection(grid))?,
        frames: MeasurementFrameSet::new(v, frequencies, mode)?,
        truth: ConductivityStack::new(grid.clone(), truth)?,
        reference_voltages: reference,
    })
}

/// Adds white Gaussian noise to every column so that its signal-to-noise
/// ratio (mean square over noise variance) is `snr_db`. `+∞` returns the
/// input unchanged.
pub fn add_noise<T: Real>(frames: &MeasurementFrameSet<T>, snr_db: f64, seed: u64) -> Result<MeasurementFrameSet<T>> {
    if snr_db == f64::INFINITY {
        return Ok(frames.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("SNR {snr_db} dB is not finite")));
    }
    let v = frames.values();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = v.clone();
    for l in 0..v.cols() {
        let col = v.column(l);
        let power = col.iter().map(|x| x.as_f64().powi(2)).sum::<f64>() / col.len() as f64;
        if power == 0.0 {
            return Err(Error::InvalidArgument(format!("column {l} is all zero; SNR undefined")));
        }
        let std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let noisy: Vec<T> = col.iter().map(|&x| x + T::lit(normal.sample(&mut rng))).collect();
        out.set_column(l, &noisy);
    }
    frames.with_values(out)
}
