//! In-memory RGB images with channels in `[0, 1]`, PNG I/O and image metrics.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, fill: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![fill; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, c: [f64; 3]) {
        self.data[(y * self.width + x) as usize] = c;
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }

    /// 8-bit RGB, row-major.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != (width * height * 3) as usize {
            return Err(Error::Image(format!(
                "expected {} bytes for a {width}x{height} RGB image, got {}",
                width * height * 3,
                bytes.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data: bytes
                .chunks_exact(3)
                .map(|c| {
                    [
                        c[0] as f64 / 255.0,
                        c[1] as f64 / 255.0,
                        c[2] as f64 / 255.0,
                    ]
                })
                .collect(),
        })
    }

    /// Rounds every channel to the 8-bit grid.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0))
                .collect(),
        }
    }

    pub fn same_size(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Mean squared error over all channels of two equally sized images.
pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::Argument(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let n = a.data.len() * 3;
    if n == 0 {
        return Err(Error::Argument("empty images".into()));
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (0..3).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / n as f64)
}

/// Ceiling reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Peak signal-to-noise ratio in dB for a peak of 1, capped at [`PSNR_CAP`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

/// 8-bit grayscale pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

fn decode_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let bad = |e: png::DecodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut reader = decoder.read_info().map_err(bad)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

/// Reads an 8- or 16-bit PNG as RGB. Gray is replicated and alpha is dropped.
pub fn read_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let (info, buf) = decode_png(path)?;
    let channels = info.color_type.samples();
    let rgb: Vec<u8> = match channels {
        1 => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        2 => buf
            .chunks_exact(2)
            .flat_map(|p| [p[0], p[0], p[0]])
            .collect(),
        3 => buf,
        _ => buf
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
    };
    RgbImage::from_rgb8(info.width, info.height, &rgb)
}

/// Reads a PNG as 8-bit gray; color images use their first channel.
pub fn read_gray_png(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let (info, buf) = decode_png(path)?;
    let channels = info.color_type.samples();
    Ok(GrayImage {
        width: info.width,
        height: info.height,
        data: buf.chunks_exact(channels).map(|p| p[0]).collect(),
    })
}

fn encode_png(
    path: &Path,
    width: u32,
    height: u32,
    color: png::ColorType,
    data: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let bad = |e: png::EncodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(bad)?;
    writer.write_image_data(data).map_err(bad)?;
    writer.finish().map_err(bad)
}

pub fn write_png(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    encode_png(
        path.as_ref(),
        image.width,
        image.height,
        png::ColorType::Rgb,
        &image.to_rgb8(),
    )
}

pub fn write_gray_png(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    if image.data.len() != (image.width * image.height) as usize {
        return Err(Error::Argument(
            "gray image buffer does not match its size".into(),
        ));
    }
    encode_png(
        path.as_ref(),
        image.width,
        image.height,
        png::ColorType::Grayscale,
        &image.data,
    )
}
