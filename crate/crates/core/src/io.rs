//! Binary PGM (P5) / PPM (P6) image files, maxval 255.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Load a binary PGM or PPM file. 8-bit values map to `v / 255`.
pub fn load_image<F: Scalar>(path: impl AsRef<Path>) -> Result<Image<F>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CoreError::io(path, e))?;

    let malformed = |reason: &str| CoreError::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    if bytes.len() < 2 {
        return Err(malformed("file shorter than magic number"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(malformed("magic number is not P5 or P6")),
    };

    // Header tokens: width, height, maxval. Whitespace-separated, with
    // '#' comments running to end of line.
    let mut pos = 2usize;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(malformed("expected decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse::<u32>()
            .map_err(|_| malformed("header field out of range"))?;
    }
    let (width, height, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if width == 0 || height == 0 {
        return Err(malformed("zero image dimension"));
    }
    if maxval != 255 {
        return Err(CoreError::UnsupportedDepth {
            path: path.to_path_buf(),
            maxval,
        });
    }
    // exactly one whitespace byte separates header from payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(malformed("missing separator before pixel data"));
    }
    pos += 1;

    let expected = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(malformed("pixel payload shorter than header promises"));
    }
    let data: Vec<F> = payload[..expected]
        .iter()
        .map(|&b| F::from_f64_c(b as f64 / 255.0))
        .collect();
    Image::new(height, width, channels, data)
}

/// Save as binary PGM (1 channel) or PPM (3 channels). Values are clamped to
/// `[0,1]` and quantized by `round(v * 255)`.
pub fn save_image<F: Scalar>(image: &Image<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = Vec::with_capacity(image.len() + 32);
    out.extend_from_slice(format!("{magic}\n{} {}\n255\n", image.width(), image.height()).as_bytes());
    for v in image.data() {
        let v = v.to_f64_c().clamp(0.0, 1.0);
        out.push((v * 255.0).round() as u8);
    }
    let mut file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    file.write_all(&out).map_err(|e| CoreError::io(path, e))?;
    Ok(())
}
