//! Binary PPM (P6, maxval 255) image files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes a P6 file into a `[1, 3, H, W]` tensor with values `v / 255`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let bad = |msg: &str| Error::ImageFormat(msg.to_string());
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(bad("missing P6 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header field out of range"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::ImageFormat(format!("unsupported maxval {maxval}; only 8-bit (255) is supported")));
    }
    if w == 0 || h == 0 {
        return Err(bad("zero image dimension"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after maxval"));
    }
    pos += 1;
    let expected = w.checked_mul(h).and_then(|p| p.checked_mul(3)).ok_or_else(|| bad("image dimensions overflow"))?;
    let pixels = &bytes[pos..];
    if pixels.len() != expected {
        return Err(Error::ImageFormat(format!("expected {expected} pixel bytes for {w}x{h}, found {}", pixels.len())));
    }
    let plane = w * h;
    let mut data = vec![0.0; expected];
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = f64::from(px[c]) / 255.0;
        }
    }
    Tensor::new([1, 3, h, w], data)
}

/// Encodes a `[1, C, H, W]` tensor (`C` = 1 or 3) as P6. Values are
/// clamped to `[0, 1]` and rounded to the nearest level; one channel is
/// written as gray.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (n, c, h, w) = image.dims4()?;
    if n != 1 || !(c == 1 || c == 3) {
        return Err(Error::shape(format!("can only write a single 1- or 3-channel image, got {:?}", image.shape())));
    }
    if !image.all_finite() {
        return Err(Error::NonFinite("image has non-finite pixels".into()));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = w * h;
    out.reserve(3 * plane);
    for i in 0..plane {
        for k in 0..3 {
            let v = image.data()[(k % c) * plane + i];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::ImageFormat(msg) => Error::ImageFormat(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_image(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_within_quantization() {
        let img = Tensor::from_fn([1, 3, 5, 7], |i| ((i * 7919) % 1000) as f64 / 999.0);
        let back = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        assert!(img.max_abs_diff(&back).unwrap() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P6 # made by hand\n1 1\n# depth\n255\n".to_vec();
        bytes.extend([255, 0, 51]);
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(t.data(), [1.0, 0.0, 0.2]);
    }

    #[test]
    fn malformed_inputs_are_errors() {
        for bytes in [
            &b""[..],
            b"GIF89a",
            b"P6\n2 2\n255\n\x00\x01",
            b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00",
            b"P6\n1 1\n255",
            b"P6\n-1 1\n255\n",
            b"P6\n99999999999999999999999 1\n255\n",
        ] {
            assert!(matches!(decode_ppm(bytes), Err(Error::ImageFormat(_))), "{bytes:?}");
        }
    }

    #[test]
    fn gray_is_replicated() {
        let g = Tensor::new([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let bytes = encode_ppm(&g).unwrap();
        assert_eq!(&bytes[bytes.len() - 6..], [0, 0, 0, 255, 255, 255]);
    }
}
