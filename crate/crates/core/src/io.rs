// SPDX-License-Identifier: Apache-2.0

//! File formats: binary PNG rasters, deformation blobs, JSON lines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::litho::DeformationMap;
use crate::raster::{Bitmap, Field};

/// Magic prefix of the deformation blob.
pub const DEFORMATION_MAGIC: &[u8; 8] = b"LHODDEF1";

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Format { what: "png", reason: e.to_string() }
}

/// Writes an 8-bit grayscale PNG.
pub fn write_gray_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Writes a binary raster as 0/255 grayscale.
pub fn write_bitmap_png(path: &Path, b: &Bitmap) -> Result<()> {
    let px: Vec<u8> = b.data().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    write_gray_png(path, b.width(), b.height(), &px)
}

/// Reads an 8-bit grayscale PNG whose pixels are all 0 or 255.
pub fn read_bitmap_png(path: &Path) -> Result<Bitmap> {
    let dec = png::Decoder::new(BufReader::new(open(path)?));
    let mut reader = dec.read_info().map_err(png_err)?;
    let (ct, depth) = reader.output_color_type();
    if ct != png::ColorType::Grayscale || depth != png::BitDepth::Eight {
        return Err(png_err(format!("{}: expected 8-bit grayscale, got {ct:?} {depth:?}", path.display())));
    }
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for &v in &buf[y * info.line_size..y * info.line_size + w] {
            data.push(match v {
                0 => 0,
                255 => 1,
                other => return Err(png_err(format!("{}: pixel value {other} is not 0 or 255", path.display()))),
            });
        }
    }
    Bitmap::from_vec(h, w, data)
}

/// 16-byte header (magic, `H` and `W` as little-endian u32) then the `dx`,
/// `dy` and magnitude planes as little-endian f32, row-major.
pub fn write_deformation(path: &Path, m: &DeformationMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (h, wd) = m.dims();
    w.write_all(DEFORMATION_MAGIC)?;
    w.write_all(&(h as u32).to_le_bytes())?;
    w.write_all(&(wd as u32).to_le_bytes())?;
    for plane in m.channels() {
        for &v in plane.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_deformation(path: &Path) -> Result<DeformationMap> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes)?;
    let bad = |reason: String| Error::Format { what: "deformation file", reason };
    if bytes.len() < 16 || &bytes[..8] != DEFORMATION_MAGIC {
        return Err(bad("missing magic".into()));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 16 + 3 * h * w * 4 {
        return Err(bad(format!("{} bytes for {h}x{w}", bytes.len())));
    }
    let plane = |i: usize| {
        let start = 16 + i * h * w * 4;
        let vals = bytes[start..start + h * w * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Field::from_vec(h, w, vals)
    };
    Ok(DeformationMap { dx: plane(0)?, dy: plane(1)?, magnitude: plane(2)?, capped: 0 })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|e| Error::Format { what: "json", reason: e.to_string() })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "jsonl",
            reason: format!("{}:{}: {e}", path.display(), i + 1),
        })?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Format { what: "json", reason: e.to_string() })?;
    std::fs::write(path, s + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitmap_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let b = Bitmap::from_fn(32, 64, |y, x| u8::from((x + y) % 3 == 0));
        write_bitmap_png(&p, &b).unwrap();
        assert_eq!(read_bitmap_png(&p).unwrap(), b);
        let q = dir.path().join("g.png");
        write_gray_png(&q, 2, 1, &[0, 128]).unwrap();
        assert!(read_bitmap_png(&q).is_err());
        assert!(matches!(read_bitmap_png(&dir.path().join("none.png")), Err(Error::MissingFile(_))));
    }

    #[test]
    fn deformation_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        let mut m = DeformationMap::zeros(4, 8);
        m.dx = Field::from_fn(4, 8, |y, x| y as f64 - x as f64 * 0.5);
        m.magnitude = m.dx.map(f64::abs);
        write_deformation(&p, &m).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 3 * 32 * 4);
        assert_eq!(read_deformation(&p).unwrap(), m);
    }
}
