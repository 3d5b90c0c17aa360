//! Lossless screenshot payloads.

use std::io::Cursor;

use sha2::{Digest, Sha256};

/// One PNG-encoded full-page capture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capture {
    pub width: u32,
    pub height: u32,
    pub png: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("pixel buffer of {got} bytes does not match {width}x{height} RGBA")]
    Size { got: usize, width: u32, height: u32 },
    #[error("unsupported png layout {0:?}")]
    Unsupported(png::ColorType),
}

impl Capture {
    pub fn from_rgba(width: u32, height: u32, rgba: &[u8]) -> Result<Self, ImageError> {
        if rgba.len() != width as usize * height as usize * 4 {
            return Err(ImageError::Size {
                got: rgba.len(),
                width,
                height,
            });
        }
        let mut png_bytes = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut png_bytes, width, height);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header()?;
            w.write_image_data(rgba)?;
            w.finish()?;
        }
        Ok(Capture {
            width,
            height,
            png: png_bytes,
        })
    }

    pub fn from_png(png_bytes: Vec<u8>) -> Result<Self, ImageError> {
        let (width, height, _) = decode_rgba(&png_bytes)?;
        Ok(Capture {
            width,
            height,
            png: png_bytes,
        })
    }

    pub fn solid(width: u32, height: u32, color: [u8; 4]) -> Self {
        let px: Vec<u8> = color
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 4)
            .collect();
        Self::from_rgba(width, height, &px).expect("solid capture encodes")
    }

    pub fn rgba(&self) -> Result<Vec<u8>, ImageError> {
        decode_rgba(&self.png).map(|(_, _, px)| px)
    }

    /// Hex SHA-256 over the dimensions and decoded pixels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        match self.rgba() {
            Ok(px) => h.update(&px),
            Err(_) => h.update(&self.png),
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// True if at least `fraction` of the pixels equal `background`.
    pub fn is_blank(&self, background: [u8; 4], fraction: f64) -> Result<bool, ImageError> {
        let px = self.rgba()?;
        let total = px.len() / 4;
        if total == 0 {
            return Ok(true);
        }
        let same = px.chunks_exact(4).filter(|p| *p == background).count();
        Ok(same as f64 >= fraction * total as f64)
    }
}

fn decode_rgba(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), ImageError> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    let px = match info.color_type {
        png::ColorType::Rgba => buf,
        png::ColorType::Rgb => buf
            .chunks_exact(3)
            .flat_map(|p| [p[0], p[1], p[2], 255])
            .collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g, 255]).collect(),
        png::ColorType::GrayscaleAlpha => buf
            .chunks_exact(2)
            .flat_map(|p| [p[0], p[0], p[0], p[1]])
            .collect(),
        other => return Err(ImageError::Unsupported(other)),
    };
    Ok((info.width, info.height, px))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_and_hash() {
        let px: Vec<u8> = (0..3 * 2 * 4).map(|i| i as u8).collect();
        let c = Capture::from_rgba(3, 2, &px).unwrap();
        assert_eq!(c.rgba().unwrap(), px);
        let again = Capture::from_png(c.png.clone()).unwrap();
        assert_eq!(again.width, 3);
        assert_eq!(again.content_hash(), c.content_hash());
        assert_ne!(
            Capture::solid(3, 2, [0, 0, 0, 255]).content_hash(),
            c.content_hash()
        );
    }

    #[test]
    fn blankness_uses_pixel_histogram() {
        let mut px = [255u8; 10 * 20 * 4].to_vec();
        // one dark pixel out of 200 -> exactly 99.5% background
        px[0..4].copy_from_slice(&[0, 0, 0, 255]);
        let c = Capture::from_rgba(10, 20, &px).unwrap();
        assert!(c.is_blank([255; 4], 0.995).unwrap());
        px[4..8].copy_from_slice(&[0, 0, 0, 255]);
        let c = Capture::from_rgba(10, 20, &px).unwrap();
        assert!(!c.is_blank([255; 4], 0.995).unwrap());
    }

    #[test]
    fn size_mismatch_rejected() {
        assert!(Capture::from_rgba(2, 2, &[0; 15]).is_err());
    }
}
