//! Binary netpbm files: P5 greyscale for guidance maps, P6 colour for images.
//!
//! Only `maxval` 255 is accepted. Saliency maps store `round(255 * w)`; parsing
//! maps store one label per pixel (0 background, 1 head, 2 upper body,
//! 3 lower body, 4 shoes).

use std::path::Path;

use sspreid_core::{GuidanceMap, ParsingMaps, Tensor};

use crate::error::{DecodeError, Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Grey,
    Rgb,
}

impl Kind {
    fn magic(self) -> &'static [u8; 2] {
        match self {
            Kind::Grey => b"P5",
            Kind::Rgb => b"P6",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Kind::Grey => 1,
            Kind::Rgb => 3,
        }
    }
}

/// Decoded raster: `height * width * channels` bytes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

pub fn encode(kind: Kind, raster: &Raster) -> Vec<u8> {
    let mut out = format!(
        "{}\n{} {}\n255\n",
        std::str::from_utf8(kind.magic()).unwrap(),
        raster.width,
        raster.height
    )
    .into_bytes();
    out.extend_from_slice(&raster.pixels);
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, DecodeError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(DecodeError::Header(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| DecodeError::Header(format!("{what} out of range")))
    }
}

pub fn decode(kind: Kind, bytes: &[u8]) -> std::result::Result<Raster, DecodeError> {
    if bytes.len() < 2 || &bytes[..2] != kind.magic() {
        return Err(DecodeError::Header(format!(
            "expected magic {}",
            std::str::from_utf8(kind.magic()).unwrap()
        )));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(DecodeError::Header(format!(
            "empty raster {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(DecodeError::Header(format!("maxval {maxval} is not 255")));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(DecodeError::Header(
            "missing separator before payload".into(),
        ));
    }
    let payload = &bytes[h.pos + 1..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(kind.channels()))
        .ok_or_else(|| DecodeError::Header("raster too large".into()))?;
    if payload.len() < expected {
        return Err(DecodeError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(DecodeError::Trailing {
            extra: payload.len() - expected,
        });
    }
    Ok(Raster {
        height,
        width,
        pixels: payload.to_vec(),
    })
}

fn load(kind: Kind, path: &Path) -> Result<Raster> {
    let bytes = fsutil::read(path)?;
    decode(kind, &bytes).map_err(|e| Error::decode(path, e))
}

pub fn decode_saliency(bytes: &[u8]) -> std::result::Result<GuidanceMap, DecodeError> {
    let r = decode(Kind::Grey, bytes)?;
    GuidanceMap::from_u8(r.height, r.width, &r.pixels)
        .map_err(|e| DecodeError::Content(e.to_string()))
}

pub fn encode_saliency(map: &GuidanceMap) -> Vec<u8> {
    encode(
        Kind::Grey,
        &Raster {
            height: map.height(),
            width: map.width(),
            pixels: map.to_u8(),
        },
    )
}

pub fn decode_parsing(bytes: &[u8]) -> std::result::Result<ParsingMaps, DecodeError> {
    let r = decode(Kind::Grey, bytes)?;
    ParsingMaps::from_labels(r.height, r.width, &r.pixels)
        .map_err(|e| DecodeError::Content(e.to_string()))
}

pub fn encode_parsing(maps: &ParsingMaps) -> Vec<u8> {
    encode(
        Kind::Grey,
        &Raster {
            height: maps.height(),
            width: maps.width(),
            pixels: maps.to_labels(),
        },
    )
}

/// Colour image scaled to `[0, 1]` per channel.
pub fn decode_image(bytes: &[u8]) -> std::result::Result<Tensor<f32>, DecodeError> {
    let r = decode(Kind::Rgb, bytes)?;
    let data = r.pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Tensor::new(r.height, r.width, 3, data).map_err(|e| DecodeError::Content(e.to_string()))
}

/// Inverse of [`decode_image`]; values are clamped to `[0, 1]` and rounded.
pub fn encode_image(image: &Tensor<f32>) -> std::result::Result<Vec<u8>, DecodeError> {
    if image.channels() != 3 {
        return Err(DecodeError::Content(format!(
            "colour image needs 3 channels, got {}",
            image.channels()
        )));
    }
    let pixels = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok(encode(
        Kind::Rgb,
        &Raster {
            height: image.height(),
            width: image.width(),
            pixels,
        },
    ))
}

pub fn load_saliency(path: &Path) -> Result<GuidanceMap> {
    let r = load(Kind::Grey, path)?;
    Ok(GuidanceMap::from_u8(r.height, r.width, &r.pixels)?)
}

pub fn save_saliency(path: &Path, map: &GuidanceMap) -> Result<()> {
    fsutil::write_atomic(path, &encode_saliency(map))
}

/// Loads a label map; a label above 4 is reported with its pixel position.
pub fn load_parsing(path: &Path) -> Result<ParsingMaps> {
    let r = load(Kind::Grey, path)?;
    ParsingMaps::from_labels(r.height, r.width, &r.pixels)
        .map_err(|e| Error::decode(path, DecodeError::Content(e.to_string())))
}

pub fn save_parsing(path: &Path, maps: &ParsingMaps) -> Result<()> {
    fsutil::write_atomic(path, &encode_parsing(maps))
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fsutil::read(path)?;
    decode_image(&bytes).map_err(|e| Error::decode(path, e))
}

pub fn save_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let bytes = encode_image(image).map_err(|e| Error::decode(path, e))?;
    fsutil::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saliency_scale_endpoints() {
        let bytes = encode(
            Kind::Grey,
            &Raster {
                height: 1,
                width: 3,
                pixels: vec![255, 0, 128],
            },
        );
        let m = decode_saliency(&bytes).unwrap();
        assert_eq!(m.weights()[0], 1.0);
        assert_eq!(m.weights()[1], 0.0);
        assert!((m.weights()[2] as f64 - 128.0 / 255.0).abs() < 1e-7);
        assert_eq!(encode_saliency(&m), bytes);
    }

    #[test]
    fn header_comments_and_whitespace() {
        let mut bytes = b"P5 # a comment\n2\t1\n# another\n255 ".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let r = decode(Kind::Grey, &bytes).unwrap();
        assert_eq!((r.height, r.width, r.pixels), (1, 2, vec![7, 9]));
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(
            decode(Kind::Grey, b"P6\n1 1\n255\n\0"),
            Err(DecodeError::Header(_))
        ));
        assert!(matches!(
            decode(Kind::Grey, b"P5\n1 1\n15\n\0"),
            Err(DecodeError::Header(_))
        ));
        assert!(matches!(
            decode(Kind::Grey, b"P5\n1\n"),
            Err(DecodeError::Header(_))
        ));
        assert!(matches!(
            decode(Kind::Grey, b"P5\n2 2\n255\n\0\0"),
            Err(DecodeError::Truncated {
                expected: 4,
                found: 2
            })
        ));
        assert!(matches!(
            decode(Kind::Grey, b"P5\n1 1\n255\n\0\0"),
            Err(DecodeError::Trailing { extra: 1 })
        ));
    }

    #[test]
    fn out_of_range_label_names_pixel() {
        let bytes = encode(
            Kind::Grey,
            &Raster {
                height: 2,
                width: 2,
                pixels: vec![0, 1, 4, 5],
            },
        );
        let err = decode_parsing(&bytes).unwrap_err().to_string();
        assert!(err.contains("row 1") && err.contains("col 1"), "{err}");
    }

    #[test]
    fn image_round_trip() {
        let bytes = encode(
            Kind::Rgb,
            &Raster {
                height: 1,
                width: 2,
                pixels: vec![0, 17, 255, 128, 3, 99],
            },
        );
        let img = decode_image(&bytes).unwrap();
        assert_eq!(img.shape(), (1, 2, 3));
        assert_eq!(encode_image(&img).unwrap(), bytes);
    }
}
