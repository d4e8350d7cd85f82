//! Per-dataset fitting of the untrained network to measured voltages.
//!
//! [`run_maip`] optimizes the network parameters so that the lifted
//! sensitivity matrix applied to the flattened network output reproduces the
//! measurement frames. Nothing is learned across datasets; the only prior is
//! the network structure itself. [`run_tikhonov_baseline`] is a plain
//! regularized least-squares reference.

mod tikhonov;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::{ConductivityStack, GridStack, MeasurementFrameSet, SensitivityMatrix};
use crate::net::{init_params, net_forward, AttentionState, MBANetConfig, NoiseInput};
use crate::scalar::Real;

pub use tikhonov::{run_tikhonov_baseline, tikhonov_lambda_grid, TikhonovSolver};

/// Data-fidelity term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Sum of absolute residuals.
    #[default]
    L1,
    /// Frobenius norm of the residual matrix.
    Frobenius,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Self::L1),
            "frobenius" | "fro" => Ok(Self::Frobenius),
            other => Err(Error::InvalidArgument(format!("unknown loss kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Seeds parameter initialization; the noise input uses a derived seed.
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            iterations: 900,
            lr: 0.00012,
            seed: 0,
            loss: LossKind::L1,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn noise_seed(&self) -> u64 {
        self.seed ^ 0x9e37_79b9_7f4a_7c15
    }
}

#[derive(Debug, Clone)]
pub struct ReconResult<T> {
    pub stack: ConductivityStack<T>,
    /// Loss before each parameter update, one entry per iteration.
    pub loss_trace: Vec<f64>,
    /// Final branch attention parameters; `None` when the network has none.
    pub attention: Option<AttentionState<T>>,
    pub wall_time: f64,
}

fn check_inputs<T: Real>(
    j: &SensitivityMatrix<T>,
    v: &MeasurementFrameSet<T>,
    net: &MBANetConfig,
) -> Result<()> {
    net.validate()?;
    let grid = j.projection().grid();
    if (grid.height(), grid.width()) != (net.height, net.width) {
        return Err(Error::shape(
            "network grid vs sensitivity grid",
            (grid.height(), grid.width()),
            (net.height, net.width),
        ));
    }
    if v.frame_count() != net.frames {
        return Err(Error::shape("frame count", net.frames, v.frame_count()));
    }
    if v.measurement_count() != j.measurement_count() {
        return Err(Error::shape(
            "measurement count",
            j.measurement_count(),
            v.measurement_count(),
        ));
    }
    if !v.values().is_finite() || !j.matrix().is_finite() {
        return Err(Error::InvalidArgument("inputs contain non-finite values".into()));
    }
    Ok(())
}

/// Fits the network to `v` and returns the extracted final output.
pub fn run_maip<T: Real>(
    j: &SensitivityMatrix<T>,
    v: &MeasurementFrameSet<T>,
    net: &MBANetConfig,
    cfg: &ReconConfig,
) -> Result<ReconResult<T>> {
    run_maip_observed(j, v, net, cfg, |_, _| {})
}

/// [`run_maip`] with a callback receiving `(iteration, loss)` after each
/// loss evaluation.
pub fn run_maip_observed<T: Real>(
    j: &SensitivityMatrix<T>,
    v: &MeasurementFrameSet<T>,
    net: &MBANetConfig,
    cfg: &ReconConfig,
    mut observe: impl FnMut(usize, f64),
) -> Result<ReconResult<T>> {
    cfg.validate()?;
    check_inputs(j, v, net)?;
    let start = Instant::now();

    let (l, hw, m) = (net.frames, net.height * net.width, j.measurement_count());
    let lifted = Tensor::new(&[m, hw], j.lifted().as_slice().to_vec())?;
    let target = Tensor::new(&[m, l], v.values().as_slice().to_vec())?;
    let z = NoiseInput::<T>::sample(net, cfg.noise_seed()).z;

    let mut params = init_params::<T>(net, cfg.seed)?;
    let mut adam = AdamState::new(&params, AdamConfig::with_lr(cfg.lr))?;
    let mut trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let zv = g.constant(z.clone());
        let jv = g.constant(lifted.clone());
        let tv = g.constant(target.clone());
        let out = net_forward(&mut g, net, &params, &bound, zv)?;
        let flat = g.reshape(out, &[l, hw])?;
        let cols = g.transpose(flat)?;
        let pred = g.matmul(jv, cols)?;
        let loss = match cfg.loss {
            LossKind::L1 => g.l1_loss(pred, tv)?,
            LossKind::Frobenius => g.frobenius_loss(pred, tv)?,
        };
        let value = g.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                loss: value,
                param_norm: params.norm().as_f64(),
            });
        }
        trace.push(value);
        observe(it, value);
        g.backward(loss)?;
        adam.step(&mut params, &g, &bound)?;
    }

    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let zv = g.constant(z);
    let out = net_forward(&mut g, net, &params, &bound, zv)?;
    let value = g.value(out);
    if !value.is_finite() {
        return Err(Error::Divergence {
            iteration: cfg.iterations,
            loss: f64::NAN,
            param_norm: params.norm().as_f64(),
        });
    }
    let grid_stack = GridStack::from_vec(l, net.height, net.width, value.data().to_vec())?;
    let stack = ConductivityStack::from_grid(j.projection().grid().clone(), &grid_stack)?;

    Ok(ReconResult {
        stack,
        loss_trace: trace,
        attention: AttentionState::from_params(&params),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Loss trace as CSV with header `iteration,loss`; iterations count from 1.
pub fn loss_trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,loss\n");
    for (i, v) in trace.iter().enumerate() {
        s.push_str(&format!("{},{:e}\n", i + 1, v));
    }
    s
}

pub fn loss_trace_export<T>(result: &ReconResult<T>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(loss_trace_csv(&result.loss_trace).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Trailing moving average of width `window`; empty if the trace is shorter.
pub fn moving_average(trace: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || trace.len() < window {
        return Vec::new();
    }
    trace.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}
