//! Image decoding for binary PPM (P6), binary PGM (P5) and TNSR files.
//! Decoded images are `C×H×W` tensors with samples in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::tnsr::{self, DType};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Pgm,
    Tnsr,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("ppm") => Ok(ImageFormat::Ppm),
            Some("pgm") => Ok(ImageFormat::Pgm),
            Some("tnsr") => Ok(ImageFormat::Tnsr),
            _ => Err(Error::Format(format!(
                "unsupported image extension for {} (expected .ppm, .pgm or .tnsr)",
                path.display()
            ))),
        }
    }
}

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::Format(format!(
            "bad magic {found:?}, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("truncated PNM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("expected a number in PNM header at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format("PNM header number overflows".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("missing whitespace after PNM header".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("invalid PNM dimensions {width}x{height} maxval {maxval}")));
    }
    Ok(Header {
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

fn decode_pnm(bytes: &[u8], magic: &[u8; 2], channels: usize) -> Result<Tensor> {
    let h = parse_header(bytes, magic)?;
    let width = if h.maxval > 255 { 2 } else { 1 };
    let count = h.width * h.height * channels;
    let raster = bytes
        .get(h.data_start..h.data_start + count * width)
        .ok_or_else(|| Error::Format(format!("truncated raster: expected {} bytes", count * width)))?;
    let scale = h.maxval as f64;
    let plane = h.width * h.height;
    let mut out = vec![0.0; count];
    for i in 0..count {
        let sample = if width == 1 {
            raster[i] as usize
        } else {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as usize
        };
        // interleaved RGB -> planar CHW
        let (pixel, c) = (i / channels, i % channels);
        out[c * plane + pixel] = (sample.min(h.maxval)) as f64 / scale;
    }
    Tensor::new(vec![channels, h.height, h.width], out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    decode_pnm(bytes, b"P6", 3)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    decode_pnm(bytes, b"P5", 1)
}

/// Loads a stored `C×H×W` tensor; every value must lie in `[0, 1]`.
pub fn decode_tnsr_image(bytes: &[u8]) -> Result<Tensor> {
    let t = tnsr::decode(bytes)?;
    if t.rank() != 3 {
        return Err(Error::Format(format!("TNSR image must be rank 3, got shape {:?}", t.shape())));
    }
    if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Range(format!("TNSR image value {v} outside [0, 1]")));
    }
    Ok(t)
}

pub fn decode_image(bytes: &[u8], format: ImageFormat) -> Result<Tensor> {
    match format {
        ImageFormat::Ppm => decode_ppm(bytes),
        ImageFormat::Pgm => decode_pgm(bytes),
        ImageFormat::Tnsr => decode_tnsr_image(bytes),
    }
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let format = ImageFormat::from_path(path)?;
    decode_image(&std::fs::read(path)?, format)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `C×H×W` image (C = 1 → P5, C = 3 → P6) with 8-bit samples.
pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    let (magic, channels) = match s {
        [1, _, _] => ("P5", 1),
        [3, _, _] => ("P6", 3),
        _ => return Err(Error::Format(format!("PNM needs 1 or 3 channels, got shape {s:?}"))),
    };
    let (h, w) = (s[1], s[2]);
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for pixel in 0..plane {
        for c in 0..channels {
            out.push(quantize(image.data()[c * plane + pixel]));
        }
    }
    Ok(out)
}

pub fn encode_image(image: &Tensor, format: ImageFormat) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Ppm | ImageFormat::Pgm => encode_pnm(image),
        ImageFormat::Tnsr => Ok(tnsr::encode(image, DType::F64)),
    }
}
