use super::LabeledDataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(ds: &LabeledDataset, h: usize, w: usize) -> Result<LabeledDataset> {
    if h == 0 || w == 0 {
        return Err(Error::Parameter(format!(
            "target size {h}x{w} must be positive"
        )));
    }
    let [c, ih, iw] = ds.sample_shape();
    if (ih, iw) == (h, w) {
        return Ok(ds.clone());
    }
    let n = ds.len();
    let src = ds.images().data();
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f32 / out as f32;
        (0..out)
            .map(|o| {
                let s = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f32);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, s - lo as f32)
            })
            .collect()
    };
    let ys = axis(h, ih);
    let xs = axis(w, iw);
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in src.chunks(ih * iw) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * iw + x0] * (1.0 - fx) + plane[y0 * iw + x1] * fx;
                let bot = plane[y1 * iw + x0] * (1.0 - fx) + plane[y1 * iw + x1] * fx;
                out.push((top * (1.0 - fy) + bot * fy).clamp(-1.0, 1.0));
            }
        }
    }
    Ok(ds.with_images(Tensor::new(vec![n, c, h, w], out)?))
}

/// Luma conversion `0.299 R + 0.587 G + 0.114 B`.
pub fn to_grayscale(ds: &LabeledDataset) -> Result<LabeledDataset> {
    let [c, h, w] = ds.sample_shape();
    if c != 3 {
        return Err(Error::Channel(c));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(ds.len() * hw);
    for img in ds.images().data().chunks(3 * hw) {
        let (r, rest) = img.split_at(hw);
        let (g, b) = rest.split_at(hw);
        for i in 0..hw {
            out.push((0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).clamp(-1.0, 1.0));
        }
    }
    Ok(ds.with_images(Tensor::new(vec![ds.len(), 1, h, w], out)?))
}
