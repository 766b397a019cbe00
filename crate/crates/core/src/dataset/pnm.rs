//! Binary netpbm images: P6 (RGB) and P5 (gray), maxval 255.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::ImageError;
use crate::nn::Tensor;

/// Reads a P6 or P5 file as an `H x W x 3` tensor in `[0, 1]`; gray images are
/// replicated to three channels.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor, ImageError> {
    decode(&fs::read(path)?)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, ImageError> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| ImageError::Header("empty file".into()))?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        "P1" | "P2" | "P3" | "P4" | "P7" => return Err(ImageError::Unsupported(magic)),
        _ => return Err(ImageError::BadMagic(magic)),
    };
    let mut field = |name: &str| -> Result<usize, ImageError> {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| ImageError::Header(format!("missing {name}")))?;
        tok.parse()
            .map_err(|_| ImageError::Header(format!("bad {name} {tok:?}")))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if maxval != 255 {
        return Err(ImageError::Unsupported(format!("maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::Header(format!("empty image {width}x{height}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let expected = width * height * channels;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            got: payload.len(),
        });
    }
    let mut data = Vec::with_capacity(width * height * 3);
    for px in payload[..expected].chunks_exact(channels) {
        if channels == 3 {
            data.extend(px.iter().map(|&b| f64::from(b) / 255.0));
        } else {
            let v = f64::from(px[0]) / 255.0;
            data.extend([v, v, v]);
        }
    }
    Ok(Tensor::new(&[height, width, 3], data).expect("sized above"))
}

/// Skips whitespace and `#` comments, then returns the next token.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        match bytes.get(*pos)? {
            b'#' => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes an `H x W x 3` tensor as P6 or an `H x W x 1` tensor as P5.
pub fn encode(image: &Tensor) -> Result<Vec<u8>, ImageError> {
    let (h, w, c) = match image.shape() {
        [h, w, c] | [1, h, w, c] => (*h, *w, *c),
        s => return Err(ImageError::Shape(s.to_vec())),
    };
    let magic = match c {
        3 => "P6",
        1 => "P5",
        _ => return Err(ImageError::Shape(image.shape().to_vec())),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn write_image(path: impl AsRef<Path>, image: &Tensor) -> Result<(), ImageError> {
    let bytes = encode(image)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}
