//! Binary PPM (P6) and PGM (P5) images with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnmKind {
    /// P5, one sample per pixel.
    Gray,
    /// P6, interleaved RGB.
    Rgb,
}

impl PnmKind {
    pub fn channels(self) -> usize {
        match self {
            PnmKind::Gray => 1,
            PnmKind::Rgb => 3,
        }
    }

    fn magic(self) -> &'static [u8; 2] {
        match self {
            PnmKind::Gray => b"P5",
            PnmKind::Rgb => b"P6",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub kind: PnmKind,
    pub width: usize,
    pub height: usize,
    /// Row-major samples, channels interleaved.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(kind: PnmKind, width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * kind.channels() {
            return Err(Error::invalid(format!(
                "image data has {} bytes, expected {}×{}×{}",
                data.len(),
                width,
                height,
                kind.channels()
            )));
        }
        Ok(Image { kind, width, height, data })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() + 20);
        out.extend_from_slice(self.kind.magic());
        out.extend_from_slice(format!("\n{} {}\n255\n", self.width, self.height).as_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    /// Parses a P5/P6 file; `path` is only used in error messages.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |offset: usize, reason: &str| Error::Format {
            path: path.to_path_buf(),
            offset,
            reason: reason.to_string(),
        };
        let kind = match bytes.get(..2) {
            Some(b"P5") => PnmKind::Gray,
            Some(b"P6") => PnmKind::Rgb,
            Some(_) => return Err(fail(0, "expected magic P5 or P6")),
            None => return Err(fail(bytes.len(), "file ends inside the magic number")),
        };
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for (i, slot) in fields.iter_mut().enumerate() {
            // whitespace and comments before each field
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(_) => break,
                    None => return Err(fail(pos, "file ends inside the header")),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            if start == pos {
                return Err(fail(pos, "expected a decimal number in the header"));
            }
            let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
            *slot = text.parse().map_err(|_| fail(start, "header number out of range"))?;
            if i < 2 && *slot == 0 {
                return Err(fail(start, "image sides must be positive"));
            }
        }
        let [width, height, maxval] = fields;
        if maxval != 255 {
            return Err(fail(pos, "only 8-bit images (maxval 255) are supported"));
        }
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(_) => return Err(fail(pos, "expected one whitespace byte after maxval")),
            None => return Err(fail(pos, "file ends inside the header")),
        }
        let need = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(kind.channels()))
            .ok_or_else(|| fail(pos, "image dimensions overflow"))?;
        let body = &bytes[pos..];
        if body.len() < need {
            return Err(fail(bytes.len(), &format!("pixel data truncated: {} of {need} bytes", body.len())));
        }
        if body.len() > need {
            return Err(fail(pos + need, "trailing bytes after pixel data"));
        }
        Ok(Image {
            kind,
            width,
            height,
            data: body.to_vec(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::decode(&bytes, path)
    }
}

/// Writes a 2-D tensor as a PGM scaled linearly from its min (0) to max (255),
/// plus a `.txt` sidecar recording the range.
pub fn write_heatmap<T: Scalar>(path: &Path, values: &Tensor<T>) -> Result<()> {
    if values.rank() != 2 {
        return Err(Error::InvalidShape {
            op: "write_heatmap",
            shape: values.shape().to_vec(),
            reason: "expected a 2-D tensor".into(),
        });
    }
    let v = values.to_f64_vec();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = v
        .iter()
        .map(|&x| if span > 0.0 { ((x - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect();
    Image::new(PnmKind::Gray, values.dim(1), values.dim(0), data)?.write(path)?;
    let side = path.with_extension("txt");
    fs::write(&side, format!("min {lo:e}\nmax {hi:e}\n")).map_err(|e| Error::io(&side, e))
}
