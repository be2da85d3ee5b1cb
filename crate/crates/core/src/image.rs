//! PNG/PFM file I/O and the sRGB transfer function.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb, Rgba};

use crate::error::{Error, Result};
use crate::texture::TextureMap;

/// Float RGB image; the same storage as a texture.
pub type Image = TextureMap;

#[inline]
pub fn srgb_encode(linear: f32) -> f32 {
    let l = linear.clamp(0.0, 1.0);
    if l <= 0.003_130_8 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
pub fn srgb_decode(encoded: f32) -> f32 {
    let e = encoded.clamp(0.0, 1.0);
    if e <= 0.040_45 {
        e / 12.92
    } else {
        ((e + 0.055) / 1.055).powf(2.4)
    }
}

pub fn encode_image(img: &Image) -> Image {
    map_values(img, srgb_encode)
}

pub fn decode_image(img: &Image) -> Image {
    map_values(img, srgb_decode)
}

fn map_values(img: &Image, f: impl Fn(f32) -> f32) -> Image {
    Image {
        width: img.width,
        height: img.height,
        channels: img.channels,
        data: img.data.iter().map(|v| f(*v)).collect(),
    }
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads an 8- or 16-bit PNG into `channels` float channels in `[0, 1]`.
/// Gray inputs are broadcast; alpha is dropped.
pub fn load_png(path: &Path, channels: usize) -> Result<TextureMap> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let rgba: Vec<f32> = match &img {
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img
            .to_rgba16()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 65535.0)
            .collect(),
        _ => img
            .to_rgba8()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect(),
    };
    let data = rgba
        .chunks_exact(4)
        .flat_map(|p| match channels {
            1 => vec![p[0]],
            2 => vec![p[0], p[1]],
            3 => vec![p[0], p[1], p[2]],
            _ => p.to_vec(),
        })
        .collect();
    TextureMap::from_data(w, h, channels, data)
}

fn check_dims(map: &TextureMap) -> Result<(u32, u32)> {
    let w = u32::try_from(map.width).map_err(|_| Error::InvalidArgument("image too wide".into()))?;
    let h = u32::try_from(map.height).map_err(|_| Error::InvalidArgument("image too tall".into()))?;
    Ok((w, h))
}

/// Writes a 16-bit PNG (values clamped to `[0, 1]`).
pub fn save_png16(map: &TextureMap, path: &Path) -> Result<()> {
    let (w, h) = check_dims(map)?;
    let q: Vec<u16> = map
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let dynimg = match map.channels {
        1 => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, q).expect("buffer size"),
        ),
        3 => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, q).expect("buffer size"),
        ),
        4 => DynamicImage::ImageRgba16(
            ImageBuffer::<Rgba<u16>, _>::from_raw(w, h, q).expect("buffer size"),
        ),
        c => return Err(Error::InvalidArgument(format!("cannot write {c}-channel PNG"))),
    };
    dynimg.save(path).map_err(|e| image_err(path, e))
}

/// Writes an 8-bit PNG of the stored values (no transfer function applied).
pub fn save_png8(map: &TextureMap, path: &Path) -> Result<()> {
    let (w, h) = check_dims(map)?;
    let q: Vec<u8> = map
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let dynimg = match map.channels {
        1 => DynamicImage::ImageLuma8(ImageBuffer::from_raw(w, h, q).expect("buffer size")),
        3 => DynamicImage::ImageRgb8(ImageBuffer::from_raw(w, h, q).expect("buffer size")),
        4 => DynamicImage::ImageRgba8(ImageBuffer::from_raw(w, h, q).expect("buffer size")),
        c => return Err(Error::InvalidArgument(format!("cannot write {c}-channel PNG"))),
    };
    dynimg.save(path).map_err(|e| image_err(path, e))
}

/// Equirectangular float RGB map as read from / written to PFM.
/// Rows are stored top (north pole) first in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        FloatImage { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Reads a color (`PF`) portable float map. PFM scanlines run bottom to top.
pub fn read_pfm(path: &Path) -> Result<FloatImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = Vec::new();
    let mut line = String::new();
    while header.len() < 4 {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::parse(path, header.len() + 1, "truncated PFM header"));
        }
        header.extend(line.split_whitespace().map(str::to_owned));
    }
    if header[0] != "PF" {
        return Err(Error::parse(path, 1, format!("expected 'PF' magic, found '{}'", header[0])));
    }
    let width: usize = header[1]
        .parse()
        .map_err(|_| Error::parse(path, 2, "bad width"))?;
    let height: usize = header
        .get(2)
        .ok_or_else(|| Error::parse(path, 2, "missing height"))?
        .parse()
        .map_err(|_| Error::parse(path, 2, "bad height"))?;
    let scale: f32 = header
        .get(3)
        .ok_or_else(|| Error::parse(path, 3, "missing scale"))?
        .parse()
        .map_err(|_| Error::parse(path, 3, "bad scale"))?;
    if width == 0 || height == 0 || scale == 0.0 || !scale.is_finite() {
        return Err(Error::parse(path, 2, "invalid PFM dimensions or scale"));
    }
    let little = scale < 0.0;
    let mut bytes = vec![0u8; width * height * 12];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::parse(path, 4, "PFM payload is shorter than width*height*3 floats"))?;
    let mut data = vec![0.0f32; width * height * 3];
    for (i, ch) in bytes.chunks_exact(4).enumerate() {
        let b = [ch[0], ch[1], ch[2], ch[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        if !v.is_finite() {
            return Err(Error::parse(path, 4, format!("non-finite texel value at float {i}")));
        }
        let (row_from_bottom, rest) = (i / (width * 3), i % (width * 3));
        let y = height - 1 - row_from_bottom;
        data[y * width * 3 + rest] = v;
    }
    Ok(FloatImage { width, height, data })
}

/// Writes a little-endian color PFM.
pub fn write_pfm(img: &FloatImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(w, "PF\n{} {}\n-1.0\n", img.width, img.height).map_err(io)?;
    for y in (0..img.height).rev() {
        for v in &img.data[y * img.width * 3..(y + 1) * img.width * 3] {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_round_trip() {
        for i in 0..=1000 {
            let x = i as f32 / 1000.0;
            assert!((srgb_decode(srgb_encode(x)) - x).abs() < 1e-5);
        }
        assert!((srgb_encode(0.5) - 0.735_356_6).abs() < 1e-5);
    }

    #[test]
    fn png16_round_trip_is_exact_on_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        let m = TextureMap::from_fn(5, 3, 3, |x, y| {
            vec![x as f32 / 4.0, y as f32 / 2.0, ((x * y) % 3) as f32 / 2.0]
        });
        save_png16(&m, &p).unwrap();
        let back = load_png(&p, 3).unwrap();
        for (a, b) in m.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1.0 / 65535.0);
        }
    }

    #[test]
    fn pfm_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.pfm");
        let img = FloatImage::from_fn(4, 3, |x, y| [x as f32, y as f32, 0.5]);
        write_pfm(&img, &p).unwrap();
        assert_eq!(read_pfm(&p).unwrap(), img);

        std::fs::write(&p, b"P6\n4 3\n-1.0\n").unwrap();
        assert!(matches!(read_pfm(&p), Err(Error::Parse { .. })));

        let mut bad = b"PF\n1 1\n-1.0\n".to_vec();
        for v in [f32::NAN, 0.0, 0.0] {
            bad.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&p, bad).unwrap();
        assert!(matches!(read_pfm(&p), Err(Error::Parse { .. })));
    }
}
