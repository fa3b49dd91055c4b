//! 8-bit image I/O: binary PGM (P5) and PPM (P6), maxval 255 only.
//! Parse errors carry the byte offset where decoding failed.

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Scalar};
use std::io::{Read, Write};
use std::path::Path;

/// An 8-bit image, 1 channel (gray) or 3 (RGB), row-major interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim("image must be non-empty"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::dim("image must have 1 or 3 channels"));
        }
        Ok(Image {
            height,
            width,
            channels,
            data: vec![0u8; height * width * channels],
        })
    }

    pub fn at(&self, i: usize, j: usize, c: usize) -> u8 {
        self.data[(i * self.width + j) * self.channels + c]
    }

    pub fn set(&mut self, i: usize, j: usize, c: usize, v: u8) {
        self.data[(i * self.width + j) * self.channels + c] = v;
    }

    /// Luma conversion with the usual 0.299/0.587/0.114 weights,
    /// rounded to nearest. Grayscale images pass through unchanged.
    pub fn to_grayscale(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = Image::new(self.height, self.width, 1).expect("valid dims");
        for i in 0..self.height {
            for j in 0..self.width {
                let r = self.at(i, j, 0) as f64;
                let g = self.at(i, j, 1) as f64;
                let b = self.at(i, j, 2) as f64;
                out.set(i, j, 0, (0.299 * r + 0.587 * g + 0.114 * b).round() as u8);
            }
        }
        out
    }

    /// Normalize to [0, 1] as a single-sample feature map.
    pub fn to_feature_map<T: Scalar>(&self) -> FeatureMap<T> {
        let mut m = FeatureMap::zeros(self.height, self.width, self.channels, 1);
        for i in 0..self.height {
            for j in 0..self.width {
                for c in 0..self.channels {
                    m.set(i, j, c, 0, T::from_f64(self.at(i, j, c) as f64 / 255.0));
                }
            }
        }
        m
    }

    pub fn from_feature_map<T: Scalar>(m: &FeatureMap<T>) -> Result<Image> {
        let (h, w, c, s) = m.dims();
        if s != 1 {
            return Err(Error::dim("expected a single sample"));
        }
        let mut img = Image::new(h, w, c)?;
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    let v = (m.at(i, j, k, 0).to_f64() * 255.0).round().clamp(0.0, 255.0);
                    img.set(i, j, k, v as u8);
                }
            }
        }
        Ok(img)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            let b = self.buf[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<usize> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::format(start, format!("expected {}", what)));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::format(start, format!("invalid {}", what)))
    }
}

/// Decode a binary PGM (P5) or PPM (P6) from bytes.
pub fn decode_netpbm(buf: &[u8]) -> Result<Image> {
    if buf.len() < 2 {
        return Err(Error::format(0, "file too short for magic"));
    }
    let channels = match &buf[0..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::format(0, "expected P5 or P6 magic")),
    };
    let mut cur = Cursor { buf, pos: 2 };
    let width = cur.read_uint("width")?;
    let height = cur.read_uint("height")?;
    let maxval_at = {
        cur.skip_ws_and_comments();
        cur.pos
    };
    let maxval = cur.read_uint("maxval")?;
    if maxval != 255 {
        return Err(Error::format(
            maxval_at,
            format!("unsupported maxval {} (only 255)", maxval),
        ));
    }
    if cur.pos >= buf.len() || !buf[cur.pos].is_ascii_whitespace() {
        return Err(Error::format(cur.pos, "expected single whitespace after maxval"));
    }
    cur.pos += 1;
    if height == 0 || width == 0 {
        return Err(Error::format(2, "zero image dimension"));
    }
    let need = height * width * channels;
    let body = &buf[cur.pos..];
    if body.len() < need {
        return Err(Error::format(
            buf.len(),
            format!("pixel data truncated: have {}, need {}", body.len(), need),
        ));
    }
    if body.len() > need {
        return Err(Error::format(
            cur.pos + need,
            format!("{} trailing bytes after pixel data", body.len() - need),
        ));
    }
    Ok(Image {
        height,
        width,
        channels,
        data: body.to_vec(),
    })
}

pub fn encode_netpbm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{}\n{} {}\n255\n", magic, img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn load_image(path: &Path) -> Result<Image> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_netpbm(&buf)
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_netpbm(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_gray() -> Image {
        let mut img = Image::new(3, 4, 1).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                img.set(i, j, 0, (i * 40 + j * 7) as u8);
            }
        }
        img
    }

    #[test]
    fn pgm_round_trip() {
        let img = sample_gray();
        let back = decode_netpbm(&encode_netpbm(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_round_trip() {
        let mut img = Image::new(2, 2, 3).unwrap();
        for (i, v) in [10u8, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120]
            .iter()
            .enumerate()
        {
            img.data[i] = *v;
        }
        let back = decode_netpbm(&encode_netpbm(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn comments_in_header_parsed() {
        let mut buf = b"P5 # a comment\n# another\n4 3\n# more\n255\n".to_vec();
        buf.extend_from_slice(&sample_gray().data);
        let img = decode_netpbm(&buf).unwrap();
        assert_eq!((img.height, img.width), (3, 4));
    }

    #[test]
    fn bad_magic_offset_zero() {
        match decode_netpbm(b"P3\n2 2\n255\n....") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {:?}", other),
        }
    }

    #[test]
    fn wrong_maxval_rejected_with_offset() {
        let buf = b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0";
        match decode_netpbm(buf) {
            Err(Error::Format { offset, msg }) => {
                assert_eq!(offset, 7);
                assert!(msg.contains("65535"));
            }
            other => panic!("expected format error, got {:?}", other),
        }
    }

    #[test]
    fn truncated_body_rejected() {
        let full = encode_netpbm(&sample_gray());
        match decode_netpbm(&full[..full.len() - 2]) {
            Err(Error::Format { offset, msg }) => {
                assert_eq!(offset, full.len() - 2);
                assert!(msg.contains("truncated"));
            }
            other => panic!("expected format error, got {:?}", other),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut full = encode_netpbm(&sample_gray());
        full.push(0);
        assert!(matches!(decode_netpbm(&full), Err(Error::Format { .. })));
    }

    #[test]
    fn grayscale_weights() {
        let mut img = Image::new(1, 1, 3).unwrap();
        img.data = vec![255, 0, 0];
        assert_eq!(img.to_grayscale().at(0, 0, 0), 76); // round(0.299*255)
        img.data = vec![0, 255, 0];
        assert_eq!(img.to_grayscale().at(0, 0, 0), 150);
        img.data = vec![0, 0, 255];
        assert_eq!(img.to_grayscale().at(0, 0, 0), 29);
        img.data = vec![255, 255, 255];
        assert_eq!(img.to_grayscale().at(0, 0, 0), 255);
    }

    #[test]
    fn feature_map_round_trip() {
        let img = sample_gray();
        let m = img.to_feature_map::<f32>();
        let back = Image::from_feature_map(&m).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        let img = sample_gray();
        save_image(&p, &img).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }
}
