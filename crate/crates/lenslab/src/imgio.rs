//! PNG encode/decode for channel-first [3,H,W] float images.
//!
//! Archived pixels are 8-bit; `quantize` snaps an in-memory image to exactly
//! what a PNG round-trip would produce, so annotating from memory or from
//! disk gives the same answers.

use std::io;
use std::path::Path;

use image::{ImageBuffer, Rgb};

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Snaps pixels to the 8-bit grid used by the PNG archive.
pub fn quantize(pixels: &[f32]) -> Vec<f32> {
    pixels.iter().map(|&v| to_u8(v) as f32 / 255.0).collect()
}

pub fn save_png(pixels: &[f32], height: usize, width: usize, path: &Path) -> io::Result<()> {
    debug_assert_eq!(pixels.len(), 3 * height * width);
    let hw = height * width;
    let img = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        let i = y as usize * width + x as usize;
        Rgb([to_u8(pixels[i]), to_u8(pixels[hw + i]), to_u8(pixels[2 * hw + i])])
    });
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    // Write-then-rename keeps half-written files out of the archive.
    let tmp = path.with_extension("png.tmp");
    img.save_with_format(&tmp, image::ImageFormat::Png).map_err(io::Error::other)?;
    std::fs::rename(&tmp, path)
}

/// Loads a PNG into channel-first [3,H,W] floats in [0,1].
pub fn load_png(path: &Path) -> io::Result<(Vec<f32>, usize, usize)> {
    let img = image::open(path).map_err(io::Error::other)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let hw = h * w;
    let mut pixels = vec![0.0f32; 3 * hw];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for ch in 0..3 {
            pixels[ch * hw + i] = px.0[ch] as f32 / 255.0;
        }
    }
    Ok((pixels, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_equals_quantized() {
        let (h, w) = (4, 5);
        let pixels: Vec<f32> = (0..3 * h * w).map(|i| (i as f32 * 0.047) % 1.0).collect();
        let dir = std::env::temp_dir().join("lenslab_imgio_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.png");
        save_png(&pixels, h, w, &path).unwrap();
        let (loaded, lh, lw) = load_png(&path).unwrap();
        assert_eq!((lh, lw), (h, w));
        assert_eq!(loaded, quantize(&pixels));
    }
}
