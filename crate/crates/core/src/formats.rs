//! File formats: Middlebury `.flo` flow, grayscale PFM depth, 8-bit PNG.

use std::fs;
use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FLO_MAGIC: &[u8; 4] = b"PIEH";

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn plane_dims(t: &Tensor<f32>, channels: usize, what: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [c, h, w] if c == channels => Ok((h, w)),
        [h, w] if channels == 1 => Ok((h, w)),
        _ => Err(Error::shape(
            what,
            format!("expected {channels}×H×W, got {:?}", t.shape()),
        )),
    }
}

/// Encode a `2×H×W` flow as `.flo` bytes (interleaved u, v per pixel).
pub fn encode_flo(flow: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = plane_dims(flow, 2, "encode_flo")?;
    let plane = h * w;
    let mut out = Vec::with_capacity(12 + 8 * plane);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    let d = flow.data();
    for s in 0..plane {
        out.extend_from_slice(&d[s].to_le_bytes());
        out.extend_from_slice(&d[plane + s].to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    if bytes.len() < 12 || &bytes[..4] != FLO_MAGIC {
        return Err(Error::format(path, "not a .flo file (missing PIEH magic)"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let plane = w * h;
    let body = &bytes[12..];
    if body.len() != 8 * plane {
        return Err(Error::format(
            path,
            format!(
                "{w}×{h} flow needs {} payload bytes, found {}",
                8 * plane,
                body.len()
            ),
        ));
    }
    let mut data = vec![0f32; 2 * plane];
    for (s, px) in body.chunks_exact(8).enumerate() {
        data[s] = f32::from_le_bytes(px[..4].try_into().unwrap());
        data[plane + s] = f32::from_le_bytes(px[4..].try_into().unwrap());
    }
    Tensor::new([2, h, w], data)
}

pub fn write_flo(flow: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_flo(flow)?)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode_flo(&read_file(path)?, path)
}

/// Grayscale little-endian PFM. Rows are stored bottom to top.
pub fn encode_pfm(map: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = plane_dims(map, 1, "encode_pfm")?;
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for row in map.data().chunks_exact(w).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decode a grayscale PFM of either byte order into `1×H×W`.
pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    // Header is three whitespace-separated tokens after the magic, then
    // exactly one whitespace byte before the payload.
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PFM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    match tokens[0].as_str() {
        "Pf" => {}
        "PF" => {
            return Err(Error::format(
                path,
                "colour PFM; depth must be single-channel",
            ))
        }
        _ => return Err(Error::format(path, "not a PFM file")),
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad PFM dimension {s:?}")))
    };
    let (w, h) = (parse(&tokens[1])?, parse(&tokens[2])?);
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::format(path, format!("bad PFM scale {:?}", tokens[3])))?;
    let little = scale < 0.0;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != 4 * w * h {
        return Err(Error::format(
            path,
            format!(
                "{w}×{h} PFM needs {} payload bytes, found {}",
                4 * w * h,
                body.len()
            ),
        ));
    }
    let vals: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| {
            let b = c.try_into().unwrap();
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let mut data = Vec::with_capacity(w * h);
    if w > 0 {
        for row in vals.chunks_exact(w).rev() {
            data.extend_from_slice(row);
        }
    }
    Tensor::new([1, h, w], data)
}

pub fn write_pfm(map: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_pfm(map)?)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode_pfm(&read_file(path)?, path)
}

/// `[0,1]` float to 8 bits, rounding half up and clamping.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[inline]
pub fn dequantize(v: u8) -> f32 {
    v as f32 / 255.0
}

pub fn to_rgb_image(img: &Tensor<f32>) -> Result<RgbImage> {
    let (h, w) = plane_dims(img, 3, "to_rgb_image")?;
    let plane = h * w;
    let d = img.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let s = y as usize * w + x as usize;
        image::Rgb([
            quantize(d[s]),
            quantize(d[plane + s]),
            quantize(d[2 * plane + s]),
        ])
    }))
}

pub fn from_rgb_image(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0f32; 3 * plane];
    for (x, y, px) in img.enumerate_pixels() {
        let s = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * plane + s] = dequantize(px[c]);
        }
    }
    Tensor::new([3, h, w], data).expect("sizes agree")
}

pub fn save_png(img: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    to_rgb_image(img)?
        .save(path)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
}

/// Load any 8-bit image as `3×H×W` in `[0,1]`; grayscale is replicated.
pub fn load_png(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    Ok(from_rgb_image(&img.to_rgb8()))
}

pub fn save_gray_png(map: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = plane_dims(map, 1, "save_gray_png")?;
    let d = map.data();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([quantize(d[y as usize * w + x as usize])])
    })
    .save(path)
    .map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

/// Load a single-channel PNG as `1×H×W` in `[0,1]`.
pub fn load_gray_png(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::new(
        [1, h, w],
        img.into_raw().into_iter().map(dequantize).collect(),
    )
}
