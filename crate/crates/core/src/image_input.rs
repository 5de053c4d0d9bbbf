use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAX_DIMENSION: u32 = 4096;
/// Uploads above this size are re-encoded as JPEG.
pub const MAX_UPLOAD_BYTES: usize = 1 << 20;
pub const UPLOAD_JPEG_QUALITY: u8 = 90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageSource {
    File,
    Camera,
    Dataset,
}

/// An encoded PNG or JPEG image with its checked dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageInput {
    bytes: Vec<u8>,
    format: ImageFormat,
    width: u32,
    height: u32,
    pub source: ImageSource,
}

impl ImageInput {
    pub fn from_bytes(bytes: Vec<u8>, source: ImageSource) -> Result<Self> {
        let format = image::guess_format(&bytes).map_err(|e| Error::Image(e.to_string()))?;
        if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
            return Err(Error::Image(format!("unsupported format {format:?}")));
        }
        let (width, height) = image::ImageReader::with_format(Cursor::new(&bytes), format)
            .into_dimensions()
            .map_err(|e| Error::Image(e.to_string()))?;
        if width == 0 || height == 0 {
            return Err(Error::Image("image has no pixels".into()));
        }
        if width > MAX_DIMENSION || height > MAX_DIMENSION {
            return Err(Error::Image(format!(
                "{width}x{height} exceeds the {MAX_DIMENSION} px limit"
            )));
        }
        let input = ImageInput {
            bytes,
            format,
            width,
            height,
            source,
        };
        // Reject truncated or corrupt payloads up front.
        input.decode()?;
        Ok(input)
    }

    pub fn from_file(path: impl AsRef<Path>, source: ImageSource) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(bytes, source)
    }

    /// Encode raw pixels as PNG.
    pub fn from_rgb(img: &RgbImage, source: ImageSource) -> Result<Self> {
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?;
        Self::from_bytes(buf.into_inner(), source)
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn mime(&self) -> &'static str {
        match self.format {
            ImageFormat::Png => "image/png",
            _ => "image/jpeg",
        }
    }

    pub fn decode(&self) -> Result<RgbImage> {
        image::load_from_memory_with_format(&self.bytes, self.format)
            .map(|img| img.to_rgb8())
            .map_err(|e| Error::Image(e.to_string()))
    }

    /// Hex SHA-256 of the encoded bytes.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }

    /// BT.601 luma copy, PNG-encoded so every channel stays equal.
    pub fn to_grayscale(&self) -> Result<ImageInput> {
        let mut rgb = self.decode()?;
        for px in rgb.pixels_mut() {
            let y = bt601_luma(px.0);
            px.0 = [y; 3];
        }
        Self::from_rgb(&rgb, self.source)
    }

    /// Bytes and MIME type to send upstream; large images become JPEG q90.
    pub fn upload_payload(&self) -> Result<(&'static str, Vec<u8>)> {
        if self.bytes.len() <= MAX_UPLOAD_BYTES {
            return Ok((self.mime(), self.bytes.clone()));
        }
        let rgb = self.decode()?;
        let mut out = Vec::new();
        image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, UPLOAD_JPEG_QUALITY)
            .encode_image(&rgb)
            .map_err(|e| Error::Image(e.to_string()))?;
        Ok(("image/jpeg", out))
    }
}

pub fn bt601_luma([r, g, b]: [u8; 3]) -> u8 {
    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
        .round()
        .clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn solid(w: u32, h: u32, c: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb(c))
    }

    #[test]
    fn rejects_oversized_before_decoding_pixels() {
        let big = ImageInput::from_rgb(&solid(4097, 1, [0, 0, 0]), ImageSource::File);
        assert!(matches!(big, Err(Error::Image(m)) if m.contains("4096")));
        assert!(ImageInput::from_rgb(&solid(4096, 1, [0, 0, 0]), ImageSource::File).is_ok());
    }

    #[test]
    fn rejects_garbage() {
        assert!(ImageInput::from_bytes(b"not an image".to_vec(), ImageSource::File).is_err());
        let mut png = ImageInput::from_rgb(&solid(8, 8, [1, 2, 3]), ImageSource::File)
            .unwrap()
            .bytes()
            .to_vec();
        png.truncate(png.len() / 2);
        assert!(ImageInput::from_bytes(png, ImageSource::File).is_err());
    }

    #[test]
    fn grayscale_equalizes_channels() {
        let img = ImageInput::from_rgb(&solid(4, 4, [255, 0, 0]), ImageSource::File).unwrap();
        let gray = img.to_grayscale().unwrap().decode().unwrap();
        assert!(gray.pixels().all(|p| p.0 == [76, 76, 76]));
    }

    #[test]
    fn digest_is_content_addressed() {
        let a = ImageInput::from_rgb(&solid(2, 2, [9, 9, 9]), ImageSource::File).unwrap();
        let b = ImageInput::from_bytes(a.bytes().to_vec(), ImageSource::Camera).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn large_uploads_are_reencoded() {
        // Noise does not compress, so the PNG lands well above 1 MiB.
        let mut state = 0x2545F491u32;
        let noisy = RgbImage::from_fn(800, 800, |_, _| {
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            let b = state.to_le_bytes();
            Rgb([b[0], b[1], b[2]])
        });
        let img = ImageInput::from_rgb(&noisy, ImageSource::Camera).unwrap();
        assert!(img.bytes().len() > MAX_UPLOAD_BYTES);
        let (mime, bytes) = img.upload_payload().unwrap();
        assert_eq!(mime, "image/jpeg");
        assert_eq!(image::guess_format(&bytes).unwrap(), ImageFormat::Jpeg);

        let small = ImageInput::from_rgb(&solid(4, 4, [1, 2, 3]), ImageSource::File).unwrap();
        assert_eq!(small.upload_payload().unwrap(), ("image/png", small.bytes().to_vec()));
    }
}
