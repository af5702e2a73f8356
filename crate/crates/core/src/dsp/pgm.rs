//! 8-bit binary PGM (P5) images.

use std::path::Path;

use crate::error::{bail_arg, Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Tensor;

/// Rows of `image` become image rows, min-max scaled to `0..=255`.
/// A constant image maps to all zeros.
pub fn encode_pgm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    if image.rank() != 2 {
        return Err(Error::Argument(format!(
            "expected a 2-d image, got shape {:?}",
            image.shape()
        )));
    }
    if !image.is_finite() {
        bail_arg!("cannot render a matrix with non-finite values");
    }
    let (h, w) = (image.rows(), image.cols());
    let lo = image.data().iter().fold(f32::INFINITY, |a, &b| a.min(b)) as f64;
    let hi = image
        .data()
        .iter()
        .fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| {
        if hi > lo {
            ((v as f64 - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

/// `[frames, bins]` to an image with time to the right and frequency upward.
pub fn spectrogram_image(spec: &Tensor<f32>) -> Result<Tensor<f32>> {
    let t = spec.transpose2d()?;
    let (h, w) = (t.rows(), t.cols());
    let mut data = Vec::with_capacity(h * w);
    for r in (0..h).rev() {
        data.extend_from_slice(t.row(r));
    }
    Tensor::new(&[h, w], data)
}

/// Render a `[frames, bins]` spectrogram to `path`.
pub fn write_pgm(path: &Path, spec: &Tensor<f32>) -> Result<()> {
    write_atomic(path, &encode_pgm(&spectrogram_image(spec)?)?)
}

/// `(width, height, maxval)` and the offset of the pixel data.
pub fn read_pgm_header(bytes: &[u8]) -> Result<((usize, usize, usize), usize)> {
    let err = |offset: usize, msg: &str| Error::Format {
        offset: offset as u64,
        msg: msg.to_string(),
    };
    if !bytes.starts_with(b"P5") {
        return Err(err(0, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "expected a header number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, "header number out of range"))?;
    }
    // Exactly one whitespace byte separates the header from the pixels.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err(pos, "truncated header"));
    }
    let body = pos + 1;
    if bytes.len() - body != fields[0] * fields[1] {
        return Err(err(bytes.len(), "pixel count does not match header"));
    }
    Ok(((fields[0], fields[1], fields[2]), body))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_matrix_is_black() {
        let b = encode_pgm(&Tensor::full(&[3, 4], 7.0)).unwrap();
        let (_, body) = read_pgm_header(&b).unwrap();
        assert!(b[body..].iter().all(|&p| p == 0));
    }

    #[test]
    fn two_by_two_scaling() {
        let m = Tensor::new(&[2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let b = encode_pgm(&m).unwrap();
        let ((w, h, max), body) = read_pgm_header(&b).unwrap();
        assert_eq!((w, h, max), (2, 2, 255));
        assert_eq!(&b[body..], &[0, 85, 170, 255]);
    }

    #[test]
    fn spectrogram_orientation() {
        // 3 frames x 2 bins; the high bin must land on the top row.
        let spec = Tensor::new(&[3, 2], vec![0.0, 10.0, 1.0, 11.0, 2.0, 12.0]).unwrap();
        let img = spectrogram_image(&spec).unwrap();
        assert_eq!(img.shape(), &[2, 3]);
        assert_eq!(img.row(0), &[10.0, 11.0, 12.0]);
        assert_eq!(img.row(1), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn written_file_header_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/spec.pgm");
        let spec = Tensor::new(&[250, 80], (0..20000).map(|i| i as f32).collect()).unwrap();
        write_pgm(&path, &spec).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(read_pgm_header(&bytes).unwrap().0, (250, 80, 255));
        assert!(read_pgm_header(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_pgm_header(b"P6\n1 1\n255\n\0").is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let m = Tensor::new(&[1, 2], vec![0.0, f32::NAN]).unwrap();
        assert!(encode_pgm(&m).is_err());
    }
}
