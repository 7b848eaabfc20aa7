use image::RgbImage;

use crate::error::{Error, Result};

/// Edge length every embedder input is resized to.
pub const EMBED_INPUT_SIZE: u32 = 224;
pub const MIN_QUERY_SIDE: u32 = 200;
pub const MAX_QUERY_SIDE: u32 = 400;

/// Checks the 200..=400 pixel rule for query regions.
pub fn check_query_size(width: u32, height: u32) -> Result<()> {
    let ok = |v: u32| (MIN_QUERY_SIDE..=MAX_QUERY_SIDE).contains(&v);
    if ok(width) && ok(height) {
        Ok(())
    } else {
        Err(Error::RegionSize {
            width,
            height,
            min: MIN_QUERY_SIDE,
            max: MAX_QUERY_SIDE,
        })
    }
}

/// Validates the size rule and resizes to 224x224 with [`resize_bilinear`].
pub fn preprocess_query(img: &RgbImage) -> Result<RgbImage> {
    check_query_size(img.width(), img.height())?;
    Ok(resize_bilinear(img, EMBED_INPUT_SIZE, EMBED_INPUT_SIZE))
}

struct Taps {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(src: u32, dst: u32) -> Vec<Taps> {
    let scale = if dst > 1 {
        (src - 1) as f64 / (dst - 1) as f64
    } else {
        0.0
    };
    (0..dst)
        .map(|i| {
            let pos = i as f64 * scale;
            let lo = (pos.floor() as usize).min(src as usize - 1);
            Taps {
                lo,
                hi: (lo + 1).min(src as usize - 1),
                frac: pos - lo as f64,
            }
        })
        .collect()
}

/// Same as `v.round().clamp(0.0, 255.0) as u8` without the libm call.
#[inline]
fn round_byte(v: f64) -> u8 {
    let v = v.clamp(0.0, 255.0);
    let i = v as u32;
    (i + (v - i as f64 >= 0.5) as u32) as u8
}

/// Bilinear resize with corner-aligned sampling: output pixel `i` samples the
/// source at `i * (src - 1) / (dst - 1)`, so the corner pixels map exactly.
/// Interpolation runs in f64 and rounds half away from zero.
pub fn resize_bilinear(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (sw, sh) = img.dimensions();
    if (sw, sh) == (width, height) {
        return img.clone();
    }
    let xs = taps(sw, width);
    let ys = taps(sh, height);
    let src = img.as_raw();
    let stride = sw as usize * 3;
    let mut out = vec![0u8; width as usize * height as usize * 3];
    for (oy, ty) in ys.iter().enumerate() {
        let r0 = &src[ty.lo * stride..ty.lo * stride + stride];
        let r1 = &src[ty.hi * stride..ty.hi * stride + stride];
        let row = &mut out[oy * width as usize * 3..(oy + 1) * width as usize * 3];
        for (px, tx) in row.chunks_exact_mut(3).zip(&xs) {
            let (a, b) = (tx.lo * 3, tx.hi * 3);
            for c in 0..3 {
                let p00 = r0[a + c] as f64;
                let p01 = r0[b + c] as f64;
                let p10 = r1[a + c] as f64;
                let p11 = r1[b + c] as f64;
                let top = p00 + (p01 - p00) * tx.frac;
                let bottom = p10 + (p11 - p10) * tx.frac;
                px[c] = round_byte(top + (bottom - top) * ty.frac);
            }
        }
    }
    RgbImage::from_raw(width, height, out).expect("sized buffer")
}
