//! PNG previews of conductivity frames.
//!
//! Frames are drawn with a blue-white-red diverging map centered at zero.
//! The color limits are symmetric, `±limit`, and shared by every frame of a
//! stack so colors compare across frequencies. Void pixels are gray.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ConductivityStack;

const VOID: [u8; 3] = [160, 160, 160];

/// Color bar annotation written next to each PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderInfo {
    pub frame: usize,
    pub colormap: String,
    /// Value mapped to full blue (`-limit`) and full red (`+limit`).
    pub limit: f64,
    pub min: f64,
    pub max: f64,
    pub scale: usize,
}

/// Blue (`t = -1`) through white (`t = 0`) to red (`t = 1`).
pub fn diverging(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |x: f64| (255.0 * (1.0 - x)).round() as u8;
    if t >= 0.0 {
        [255, fade(t), fade(t)]
    } else {
        [fade(-t), fade(-t), 255]
    }
}

/// RGB bytes of one frame, each pixel repeated `scale` times per axis.
pub fn frame_rgb(stack: &ConductivityStack<f64>, frame: usize, limit: f64, scale: usize) -> Vec<u8> {
    let grid = stack.grid();
    let (h, w) = (grid.height(), grid.width());
    let img = stack.to_grid();
    let plane = img.frame(frame);
    let mut out = Vec::with_capacity(h * w * scale * scale * 3);
    for r in 0..h {
        let row: Vec<[u8; 3]> = (0..w)
            .map(|c| {
                if !grid.contains(r, c) {
                    VOID
                } else if limit > 0.0 {
                    diverging(plane[r * w + c] / limit)
                } else {
                    diverging(0.0)
                }
            })
            .collect();
        for _ in 0..scale {
            for px in &row {
                for _ in 0..scale {
                    out.extend_from_slice(px);
                }
            }
        }
    }
    out
}

/// Writes `frame_<i>.png` and `frame_<i>.json` for every frame into `dir`.
pub fn render_stack(stack: &ConductivityStack<f64>, dir: &Path, scale: usize) -> Result<Vec<RenderInfo>> {
    if scale == 0 {
        return Err(Error::InvalidArgument("render scale must be positive".into()));
    }
    let limit = stack.values().max_abs();
    let (h, w) = (stack.grid().height(), stack.grid().width());
    let mut infos = Vec::with_capacity(stack.frames());
    for l in 0..stack.frames() {
        let col = stack.values().column(l);
        let info = RenderInfo {
            frame: l,
            colormap: "diverging-bwr".into(),
            limit,
            min: col.iter().copied().fold(f64::INFINITY, f64::min),
            max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            scale,
        };
        let png_path = dir.join(format!("frame_{l}.png"));
        let file = File::create(&png_path).map_err(|e| Error::io(&png_path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), (w * scale) as u32, (h * scale) as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let to_io = |e: png::EncodingError| Error::io(&png_path, std::io::Error::other(e));
        let mut writer = enc.write_header().map_err(to_io)?;
        writer.write_image_data(&frame_rgb(stack, l, limit, scale)).map_err(to_io)?;
        writer.finish().map_err(to_io)?;
        let json_path = dir.join(format!("frame_{l}.json"));
        crate::io::write_text(&json_path, &serde_json::to_string_pretty(&info).expect("serializable"))?;
        infos.push(info);
    }
    Ok(infos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::build_circular_mask;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(diverging(0.0), [255, 255, 255]);
        assert_eq!(diverging(1.0), [255, 0, 0]);
        assert_eq!(diverging(-1.0), [0, 0, 255]);
        assert_eq!(diverging(7.0), [255, 0, 0]);
        assert_eq!(diverging(f64::NAN), [255, 255, 255]);
    }

    #[test]
    fn writes_decodable_png_and_sidecar() {
        let grid = build_circular_mask(4, 4).unwrap();
        let n = grid.pixel_count();
        let values = Matrix::from_fn(n, 2, |k, l| k as f64 - l as f64 * 3.0);
        let stack = ConductivityStack::new(grid, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let infos = render_stack(&stack, dir.path(), 3).unwrap();
        assert_eq!(infos.len(), 2);
        assert_eq!(infos[1].min, -3.0);
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(dir.path().join("frame_0.png")).unwrap()));
        let reader = decoder.read_info().unwrap();
        assert_eq!((reader.info().width, reader.info().height), (12, 12));
        let side: RenderInfo =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("frame_1.json")).unwrap()).unwrap();
        assert_eq!(side, infos[1]);
    }
}
