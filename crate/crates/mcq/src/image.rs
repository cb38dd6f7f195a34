//! 8-bit image container with native PPM/PGM I/O.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved 8-bit image, row-major, 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub samples: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty("image".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Config(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if samples.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "expected {} samples, got {}",
                width * height * channels,
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            samples: vec![0; width * height * channels],
        }
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.samples[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set_sample(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.samples[(y * self.width + x) * self.channels + c] = v;
    }

    /// Parse binary PPM (P6) or PGM (P5), maxval 255.
    pub fn from_ppm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let magic = ppm_token(bytes, &mut pos).ok_or(Error::Truncated("ppm magic"))?;
        let channels = match magic.as_slice() {
            b"P5" => 1,
            b"P6" => 3,
            _ => {
                return Err(Error::Corrupt("not a binary PGM/PPM (P5/P6)".into()));
            }
        };
        let width = ppm_int(bytes, &mut pos)?;
        let height = ppm_int(bytes, &mut pos)?;
        let maxval = ppm_int(bytes, &mut pos)?;
        if maxval != 255 {
            return Err(Error::Corrupt(format!("unsupported maxval {maxval}")));
        }
        // Single whitespace byte separates the header from the payload.
        pos += 1;
        let n = width * height * channels;
        if bytes.len() < pos + n {
            return Err(Error::Truncated("ppm payload"));
        }
        Image::new(width, height, channels, bytes[pos..pos + n].to_vec())
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }

    pub fn read_ppm<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_ppm_bytes(&fs::read(path)?)
    }

    pub fn write_ppm<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_ppm_bytes())?;
        Ok(())
    }

    /// Load from any supported path: .ppm/.pgm natively, .png when the
    /// `png` feature is enabled.
    pub fn read<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("png") => Self::read_png(path),
            _ => Self::read_ppm(path),
        }
    }

    pub fn write<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("png") => self.write_png(path),
            _ => self.write_ppm(path),
        }
    }

    #[cfg(feature = "png")]
    fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Corrupt(format!("png decode: {e}")))?;
        match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = (g.width() as usize, g.height() as usize);
                Image::new(w, h, 1, g.into_raw())
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                Image::new(w, h, 3, rgb.into_raw())
            }
        }
    }

    /// Encode as PNG in memory (requires the `png` feature).
    #[cfg(feature = "png")]
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        use image::ImageEncoder;
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&self.samples, self.width as u32, self.height as u32, color)
            .map_err(|e| Error::Corrupt(format!("png encode: {e}")))?;
        Ok(out)
    }

    #[cfg(not(feature = "png"))]
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        Err(Error::Config(
            "PNG support not compiled in (enable the `png` feature)".into(),
        ))
    }

    #[cfg(feature = "png")]
    fn write_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png_bytes()?;
        fs::write(path, bytes)?;
        Ok(())
    }

    #[cfg(not(feature = "png"))]
    fn read_png(_path: &Path) -> Result<Self> {
        Err(Error::Config(
            "PNG support not compiled in (enable the `png` feature)".into(),
        ))
    }

    #[cfg(not(feature = "png"))]
    fn write_png(&self, _path: &Path) -> Result<()> {
        Err(Error::Config(
            "PNG support not compiled in (enable the `png` feature)".into(),
        ))
    }
}

fn ppm_token(bytes: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    // Skip whitespace and `#` comments.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        Some(bytes[start..*pos].to_vec())
    } else {
        None
    }
}

fn ppm_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = ppm_token(bytes, pos).ok_or(Error::Truncated("ppm header"))?;
    std::str::from_utf8(&tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Corrupt("bad integer in ppm header".into()))
}
