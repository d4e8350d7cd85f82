//! Image quality metrics for reconstructed conductivity stacks.
//!
//! All metrics act on `H x W` grid images (void pixels are zero). Stacks are
//! max-normalized as a whole before comparison, which keeps the relative
//! contrast between frequencies intact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ConductivityStack;

/// PSNR returned for (numerically) exact reconstructions.
pub const PSNR_CAP: f64 = 75.0;
pub const SSIM_WINDOW: usize = 7;
/// Gaussian width in window coordinates scaled to `[-1, 1]`.
pub const SSIM_SIGMA: f64 = 0.2;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

fn check_same(a: &[f64], b: &[f64], what: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(what, a.len(), b.len()));
    }
    Ok(())
}

fn norm2(x: impl Iterator<Item = f64>) -> f64 {
    x.map(|v| v * v).sum::<f64>()
}

/// Divides the whole stack by its largest absolute entry.
///
/// Returns the normalized values and the factor used.
pub fn max_normalize(values: &Matrix<f64>) -> Result<(Matrix<f64>, f64)> {
    let m = values.max_abs();
    if m == 0.0 {
        return Err(Error::Metric("cannot max-normalize an all-zero stack".into()));
    }
    if !m.is_finite() {
        return Err(Error::Metric("stack contains non-finite values".into()));
    }
    Ok((values.map(|v| v / m), m))
}

/// Relative image error `‖p − g‖ / ‖g‖`.
pub fn rie(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_same(pred, truth, "rie")?;
    let den = norm2(truth.iter().copied()).sqrt();
    if den == 0.0 {
        return Err(Error::Metric("relative error against an all-zero image".into()));
    }
    Ok(norm2(pred.iter().zip(truth).map(|(p, g)| p - g)).sqrt() / den)
}

/// Pearson correlation of pixel intensities.
pub fn cc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_same(pred, truth, "cc")?;
    if pred.is_empty() {
        return Err(Error::Metric("correlation of empty images".into()));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mg = truth.iter().sum::<f64>() / n;
    let (mut num, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(truth) {
        let (a, b) = (p - mp, g - mg);
        num += a * b;
        sp += a * a;
        sg += b * b;
    }
    if sp == 0.0 || sg == 0.0 {
        return Err(Error::Metric("correlation with a constant image".into()));
    }
    Ok((num / (sp * sg).sqrt()).clamp(-1.0, 1.0))
}

/// Scaled peak signal-to-noise ratio `¼ log10(HW / ‖p − g‖²)`, capped at
/// [`PSNR_CAP`].
pub fn psnr(pred: &[f64], truth: &[f64], height: usize, width: usize) -> Result<f64> {
    check_same(pred, truth, "psnr")?;
    if pred.len() != height * width {
        return Err(Error::shape("psnr image", height * width, pred.len()));
    }
    let e = norm2(pred.iter().zip(truth).map(|(p, g)| p - g));
    if e < 1e-300 {
        return Ok(PSNR_CAP);
    }
    Ok((0.25 * ((height * width) as f64 / e).log10()).min(PSNR_CAP))
}

/// Normalized `7 x 7` Gaussian window, row-major.
pub fn ssim_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let k = SSIM_WINDOW;
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / (k - 1) as f64;
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    for r in 0..k {
        for c in 0..k {
            let d2 = coord(r).powi(2) + coord(c).powi(2);
            w[r * k + c] = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean SSIM over all stride-1 window placements.
pub fn mssim(pred: &[f64], truth: &[f64], height: usize, width: usize) -> Result<f64> {
    check_same(pred, truth, "mssim")?;
    if pred.len() != height * width {
        return Err(Error::shape("mssim image", height * width, pred.len()));
    }
    let k = SSIM_WINDOW;
    if height < k || width < k {
        return Err(Error::Metric(format!("image {height}x{width} smaller than the {k}x{k} window")));
    }
    let win = ssim_window();
    let mut patch_p = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let mut patch_g = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let mean = |x: &[f64]| x.iter().zip(&win).map(|(a, w)| a * w).sum::<f64>();
    let (nr, nc) = (height - k + 1, width - k + 1);
    let mut total = 0.0;
    for r0 in 0..nr {
        for c0 in 0..nc {
            for r in 0..k {
                let src = (r0 + r) * width + c0;
                patch_p[r * k..(r + 1) * k].copy_from_slice(&pred[src..src + k]);
                patch_g[r * k..(r + 1) * k].copy_from_slice(&truth[src..src + k]);
            }
            let (mp, mg) = (mean(&patch_p), mean(&patch_g));
            let cov = |a: &[f64], ma: f64, b: &[f64], mb: f64| {
                a.iter().zip(b).zip(&win).map(|((x, y), w)| w * (x - ma) * (y - mb)).sum::<f64>()
            };
            let vp = cov(&patch_p, mp, &patch_p, mp);
            let vg = cov(&patch_g, mg, &patch_g, mg);
            let vpg = cov(&patch_p, mp, &patch_g, mg);
            total += ssim_term(mp, mg, vp, vg, vpg);
        }
    }
    Ok(total / (nr * nc) as f64)
}

fn ssim_term(mp: f64, mg: f64, vp: f64, vg: f64, vpg: f64) -> f64 {
    let num = (2.0 * mp * mg + SSIM_C1) * (2.0 * vpg + SSIM_C2);
    let den = (mp * mp + mg * mg + SSIM_C1) * (vp + vg + SSIM_C2);
    num / den
}

/// Straightforward loop-per-window MSSIM, for cross-checking [`mssim`].
pub fn mssim_reference(pred: &[f64], truth: &[f64], height: usize, width: usize) -> f64 {
    let k = SSIM_WINDOW as isize;
    let half = (k - 1) / 2;
    let mut weights = vec![vec![0.0; k as usize]; k as usize];
    let mut total_w = 0.0;
    for dy in -half..=half {
        for dx in -half..=half {
            let (y, x) = (dy as f64 / half as f64, dx as f64 / half as f64);
            let w = (-(x * x + y * y) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            weights[(dy + half) as usize][(dx + half) as usize] = w;
            total_w += w;
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for r0 in 0..=height - k as usize {
        for c0 in 0..=width - k as usize {
            let at = |img: &[f64], i: usize, j: usize| img[(r0 + i) * width + c0 + j];
            let (mut mp, mut mg) = (0.0, 0.0);
            for i in 0..k as usize {
                for j in 0..k as usize {
                    let w = weights[i][j] / total_w;
                    mp += w * at(pred, i, j);
                    mg += w * at(truth, i, j);
                }
            }
            let (mut vp, mut vg, mut vpg) = (0.0, 0.0, 0.0);
            for i in 0..k as usize {
                for j in 0..k as usize {
                    let w = weights[i][j] / total_w;
                    let (a, b) = (at(pred, i, j) - mp, at(truth, i, j) - mg);
                    vp += w * a * a;
                    vg += w * b * b;
                    vpg += w * a * b;
                }
            }
            sum += (2.0 * mp * mg + SSIM_C1) * (2.0 * vpg + SSIM_C2)
                / ((mp * mp + mg * mg + SSIM_C1) * (vp + vg + SSIM_C2));
            count += 1;
        }
    }
    sum / count as f64
}

/// Mean MSSIM over all unordered pairs of frames.
pub fn pa_mssim(frames: &[&[f64]], height: usize, width: usize) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::Metric("pairwise MSSIM needs at least two frames".into()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..frames.len() {
        for j in i + 1..frames.len() {
            total += mssim(frames[i], frames[j], height, width)?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Scores of a reconstruction against ground truth, one entry per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rie: Vec<f64>,
    pub cc: Vec<f64>,
    pub psnr: Vec<f64>,
    pub mssim: Vec<f64>,
    /// Over the reconstructed frames; absent for single-frame stacks.
    pub pa_mssim: Option<f64>,
    pub normalization: Normalization,
}

/// Factors the two stacks were divided by before scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scheme: String,
    pub pred_factor: f64,
    pub truth_factor: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "frame,rie,cc,psnr,mssim,pa_mssim";

    pub fn frames(&self) -> usize {
        self.rie.len()
    }

    /// One CSV line per frame, without header.
    pub fn csv_rows(&self) -> Vec<String> {
        let pa = self.pa_mssim.map(|v| v.to_string()).unwrap_or_default();
        (0..self.frames())
            .map(|i| format!("{},{},{},{},{},{}", i, self.rie[i], self.cc[i], self.psnr[i], self.mssim[i], pa))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for row in self.csv_rows() {
            s.push_str(&row);
            s.push('\n');
        }
        s
    }

    pub fn mean(values: &[f64]) -> f64 {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Max-normalizes both stacks and scores every frame.
pub fn evaluate(pred: &ConductivityStack<f64>, truth: &ConductivityStack<f64>) -> Result<MetricReport> {
    if pred.grid() != truth.grid() {
        return Err(Error::shape(
            "evaluate grids",
            (truth.grid().height(), truth.grid().width(), truth.grid().pixel_count()),
            (pred.grid().height(), pred.grid().width(), pred.grid().pixel_count()),
        ));
    }
    if pred.frames() != truth.frames() {
        return Err(Error::shape("evaluate frames", truth.frames(), pred.frames()));
    }
    let (pn, pf) = max_normalize(pred.values())?;
    let (tn, tf) = max_normalize(truth.values())?;
    let grid = pred.grid().clone();
    let (h, w) = (grid.height(), grid.width());
    let pg = ConductivityStack::new(grid.clone(), pn)?.to_grid();
    let tg = ConductivityStack::new(grid, tn)?.to_grid();
    let l = pred.frames();
    let mut report = MetricReport {
        rie: Vec::with_capacity(l),
        cc: Vec::with_capacity(l),
        psnr: Vec::with_capacity(l),
        mssim: Vec::with_capacity(l),
        pa_mssim: None,
        normalization: Normalization {
            scheme: "stack-max-abs".into(),
            pred_factor: pf,
            truth_factor: tf,
        },
    };
    for i in 0..l {
        let (p, g) = (pg.frame(i), tg.frame(i));
        report.rie.push(rie(p, g)?);
        report.cc.push(cc(p, g)?);
        report.psnr.push(psnr(p, g, h, w)?);
        report.mssim.push(mssim(p, g, h, w)?);
    }
    if l >= 2 {
        let frames: Vec<&[f64]> = (0..l).map(|i| pg.frame(i)).collect();
        report.pa_mssim = Some(pa_mssim(&frames, h, w)?);
    }
    Ok(report)
}
