//! Image blob: an 8-byte header followed by row-major `f32` samples.
//!
//! ```text
//! offset 0  u16 LE  channels
//! offset 2  u16 LE  height
//! offset 4  u16 LE  width
//! offset 6  u16     reserved, written as 0, ignored on read
//! offset 8  f32 LE  × channels·height·width, index (c·height + y)·width + x
//! ```

use std::fs;
use std::path::Path;

use hoi_tensor::Tensor;

use crate::error::{HoiError, Result};

pub fn image_to_bytes(image: &Tensor) -> Result<Vec<u8>> {
    let [c, h, w] = *image.shape() else {
        return Err(HoiError::format(
            "image",
            format!("expected C x H x W, got {:?}", image.shape()),
        ));
    };
    let dims: Vec<u16> = [c, h, w]
        .iter()
        .map(|&d| u16::try_from(d))
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| HoiError::format("image", "dimension exceeds 65535"))?;
    let mut out = Vec::with_capacity(8 + image.numel() * 4);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&[0, 0]);
    for &v in image.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn image_from_bytes(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let ctx = || origin.display().to_string();
    if bytes.len() < 8 {
        return Err(HoiError::format(ctx(), "truncated header"));
    }
    let dim = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]) as usize;
    let (c, h, w) = (dim(0), dim(2), dim(4));
    let n = c * h * w;
    if n == 0 {
        return Err(HoiError::format(ctx(), format!("zero dimension {c}x{h}x{w}")));
    }
    if bytes.len() != 8 + 4 * n {
        return Err(HoiError::format(
            ctx(),
            format!("expected {} bytes for {c}x{h}x{w}, found {}", 8 + 4 * n, bytes.len()),
        ));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(Tensor::new([c, h, w], data)?)
}

pub fn save_image(image: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, image_to_bytes(image)?).map_err(|e| HoiError::io(path, e))
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| HoiError::io(path, e))?;
    image_from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let img = Tensor::new([1, 2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 0.5]).unwrap();
        let b = image_to_bytes(&img).unwrap();
        assert_eq!(&b[..8], &[1, 0, 2, 0, 3, 0, 0, 0]);
        assert_eq!(&b[8..12], &0.0f32.to_le_bytes());
        assert_eq!(&b[28..32], &0.5f32.to_le_bytes());
        assert_eq!(image_from_bytes(&b, Path::new("x")).unwrap(), img);
    }

    #[test]
    fn length_mismatch_rejected() {
        let img = Tensor::ones([1, 2, 2]);
        let mut b = image_to_bytes(&img).unwrap();
        b.pop();
        assert!(image_from_bytes(&b, Path::new("x")).is_err());
    }
}
