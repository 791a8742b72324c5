//! Pixelwise elasticity maps by sliding-window inference.

use super::net::Model;
use super::tensor::Tensor5;
use crate::error::{Error, Result};
use crate::field::{extract_window, normalize_window, DisplacementSequence, ElasticityMap};
use crate::geom::{Pixel, Roi};

const INFER_BATCH: usize = 64;

/// Lattice coordinate nearest to `x` on `lo, lo + stride, ...` up to `hi`.
fn snap(x: usize, lo: usize, hi: usize, stride: usize) -> usize {
    let k = (x - lo + stride / 2) / stride;
    let last = (hi - lo) / stride;
    lo + k.min(last) * stride
}

/// Predicts a map in Pa. Windows are evaluated on a lattice of pitch
/// `stride` anchored at the first valid center; the remaining pixels take
/// the value of the nearest lattice pixel. Pixels without full window
/// support, and pixels outside `region` when given, are MISSING.
pub fn predict_map(
    model: &Model<f32>,
    seq: &DisplacementSequence,
    window: usize,
    stride: usize,
    region: Option<&Roi>,
) -> Result<ElasticityMap> {
    let g = seq.geom;
    if window > g.depth_px || window > g.lateral_px {
        return Err(Error::WindowLargerThanImage {
            window,
            depth: g.depth_px,
            lateral: g.lateral_px,
        });
    }
    crate::field::check_window_size(window)?;
    if stride == 0 {
        return Err(Error::invalid("stride", "must be >= 1"));
    }
    if let Some(r) = region {
        r.validate(&g)?;
    }
    let h = window / 2;
    let (d_hi, l_hi) = (g.depth_px - 1 - h, g.lateral_px - 1 - h);
    let wanted = |px: Pixel| region.is_none_or(|r| r.contains(px));
    let mut lattice = Vec::new();
    let mut seen = vec![false; g.pixels()];
    for d in h..=d_hi {
        for l in h..=l_hi {
            let px = Pixel::new(d, l);
            if !wanted(px) {
                continue;
            }
            let q = Pixel::new(snap(d, h, d_hi, stride), snap(l, h, l_hi, stride));
            let i = g.index(q);
            if !seen[i] {
                seen[i] = true;
                lattice.push(q);
            }
        }
    }
    let mut values = vec![f32::NAN; g.pixels()];
    let frames = seq.frames;
    for chunk in lattice.chunks(INFER_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * window * window * frames);
        for &px in chunk {
            data.extend(normalize_window(&extract_window(seq, px, window)?).data);
        }
        let x = Tensor5::from_vec([chunk.len(), 1, window, window, frames], data)?;
        for (&px, kpa) in chunk.iter().zip(model.predict(&x)?) {
            values[g.index(px)] = kpa * 1e3;
        }
    }
    let mut out = ElasticityMap::missing(g);
    for d in h..=d_hi {
        for l in h..=l_hi {
            let px = Pixel::new(d, l);
            if wanted(px) {
                let q = Pixel::new(snap(d, h, d_hi, stride), snap(l, h, l_hi, stride));
                out.set(px, Some(values[g.index(q)]));
            }
        }
    }
    Ok(out)
}
