//! Raster interchange: 8-bit RGB PNG for images, 1-bit grayscale PNG for
//! masks, and read-only 8-bit RGB GeoTIFF passthrough.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Event, ImageTile};

struct Decoded {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

fn decode_png<R: std::io::BufRead + std::io::Seek>(r: R, path: &Path) -> Result<Decoded> {
    let wrap = |source| Error::PngDecode {
        path: path.to_path_buf(),
        source,
    };
    let mut decoder = png::Decoder::new(r);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(wrap)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Unsupported(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(wrap)?;
    buf.truncate(info.buffer_size());
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Unsupported(format!(
            "{}: unexpected bit depth {:?} after expansion",
            path.display(),
            info.bit_depth
        )));
    }
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        channels: info.color_type.samples(),
        data: buf,
    })
}

fn to_rgb(decoded: &Decoded) -> Vec<u8> {
    let n = decoded.width * decoded.height;
    match decoded.channels {
        3 => decoded.data.clone(),
        4 => decoded
            .data
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        1 => decoded.data.iter().flat_map(|&v| [v, v, v]).collect(),
        2 => decoded.data.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        _ => vec![0; n * 3],
    }
}

/// Reads an RGB image from PNG or 8-bit RGB TIFF. Tile id defaults to the
/// file stem.
pub fn read_image(path: &Path, gsd_m_per_px: f64, event: Event) -> Result<ImageTile> {
    let stem = file_stem(path);
    match extension(path).as_str() {
        "png" => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let decoded = decode_png(BufReader::new(file), path)?;
            let rgb = to_rgb(&decoded);
            ImageTile::from_rgb8(stem, decoded.height, decoded.width, &rgb, gsd_m_per_px, event)
        }
        "tif" | "tiff" => read_tiff_rgb(path, gsd_m_per_px, event),
        other => Err(Error::Unsupported(format!("{}: extension `{other}`", path.display()))),
    }
}

fn read_tiff_rgb(path: &Path, gsd_m_per_px: f64, event: Event) -> Result<ImageTile> {
    let wrap = |source| Error::Tiff {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = tiff::decoder::Decoder::new(BufReader::new(file)).map_err(wrap)?;
    let (width, height) = decoder.dimensions().map_err(wrap)?;
    let color = decoder.colortype().map_err(wrap)?;
    let result = decoder.read_image().map_err(wrap)?;
    let data = match (result, color) {
        (tiff::decoder::DecodingResult::U8(buf), tiff::ColorType::RGB(8)) => buf,
        (tiff::decoder::DecodingResult::U8(buf), tiff::ColorType::RGBA(8)) => {
            buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()
        }
        (_, c) => {
            return Err(Error::Unsupported(format!(
                "{}: only 8-bit RGB/RGBA TIFF is supported, found {c:?}",
                path.display()
            )))
        }
    };
    ImageTile::from_rgb8(
        file_stem(path),
        height as usize,
        width as usize,
        &data,
        gsd_m_per_px,
        event,
    )
}

/// Encodes an image as 8-bit RGB PNG bytes.
pub fn encode_image_png(image: &ImageTile) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&image.to_rgb8())?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn decode_image_png(bytes: &[u8], tile_id: &str, gsd_m_per_px: f64, event: Event) -> Result<ImageTile> {
    let decoded = decode_png(Cursor::new(bytes), Path::new(tile_id))?;
    let rgb = to_rgb(&decoded);
    ImageTile::from_rgb8(tile_id, decoded.height, decoded.width, &rgb, gsd_m_per_px, event)
}

pub fn write_image(path: &Path, image: &ImageTile) -> Result<()> {
    let bytes = encode_image_png(image)?;
    write_bytes(path, &bytes)
}

/// Encodes a mask as 1-bit-per-pixel grayscale PNG bytes.
pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let (h, w) = mask.dims();
    let stride = w.div_ceil(8);
    let mut packed = vec![0u8; stride * h];
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) == 1 {
                packed[r * stride + c / 8] |= 0x80 >> (c % 8);
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, w as u32, h as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::One);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&packed)?;
        writer.finish()?;
    }
    Ok(out)
}

fn mask_from_decoded(decoded: Decoded, path: &Path, gsd_m_per_px: f64) -> Result<BinaryMask> {
    if decoded.channels != 1 {
        return Err(Error::Unsupported(format!(
            "{}: masks must be single-channel grayscale",
            path.display()
        )));
    }
    // Expanded 1-bit data may come back as {0,1} or {0,255}; accept both.
    let max = decoded.data.iter().copied().max().unwrap_or(0);
    let on = if max <= 1 { 1 } else { 255 };
    let mut values = Vec::with_capacity(decoded.data.len());
    for &v in &decoded.data {
        match v {
            0 => values.push(0),
            v if v == on => values.push(1),
            v => {
                return Err(Error::InvalidRaster(format!(
                    "{}: mask value {v} is neither 0 nor {on}",
                    path.display()
                )))
            }
        }
    }
    BinaryMask::new(decoded.height, decoded.width, values, gsd_m_per_px)
}

/// Reads a binary mask PNG (1-bit, or 8-bit with values in {0, 255}).
pub fn read_mask(path: &Path, gsd_m_per_px: f64) -> Result<BinaryMask> {
    match extension(path).as_str() {
        "png" => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let decoded = decode_png(BufReader::new(file), path)?;
            mask_from_decoded(decoded, path, gsd_m_per_px)
        }
        other => Err(Error::Unsupported(format!("{}: mask extension `{other}`", path.display()))),
    }
}

pub fn decode_mask_png(bytes: &[u8], gsd_m_per_px: f64) -> Result<BinaryMask> {
    let path = Path::new("<memory>");
    let decoded = decode_png(Cursor::new(bytes), path)?;
    mask_from_decoded(decoded, path, gsd_m_per_px)
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let bytes = encode_mask_png(mask)?;
    write_bytes(path, &bytes)
}

/// Reads only the PNG/TIFF header to get `(height, width)`.
pub fn raster_dims(path: &Path) -> Result<(usize, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match extension(path).as_str() {
        "png" => {
            let decoder = png::Decoder::new(BufReader::new(file));
            let reader = decoder.read_info().map_err(|source| Error::PngDecode {
                path: path.to_path_buf(),
                source,
            })?;
            let info = reader.info();
            Ok((info.height as usize, info.width as usize))
        }
        "tif" | "tiff" => {
            let mut decoder = tiff::decoder::Decoder::new(BufReader::new(file)).map_err(|source| Error::Tiff {
                path: path.to_path_buf(),
                source,
            })?;
            let (w, h) = decoder.dimensions().map_err(|source| Error::Tiff {
                path: path.to_path_buf(),
                source,
            })?;
            Ok((h as usize, w as usize))
        }
        other => Err(Error::Unsupported(format!("{}: extension `{other}`", path.display()))),
    }
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub(crate) fn extension(path: &Path) -> String {
    path.extension()
        .map(|s| s.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

pub fn is_raster_path(path: &Path) -> bool {
    matches!(extension(path).as_str(), "png" | "tif" | "tiff")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_png_roundtrip_bit_exact() {
        let data: Vec<u8> = (0..24 * 20 * 3).map(|i| (i * 37 % 256) as u8).collect();
        let img = ImageTile::from_rgb8("x", 20, 24, &data, 0.5, Event::Harvey).unwrap();
        let bytes = encode_image_png(&img).unwrap();
        let back = decode_image_png(&bytes, "x", 0.5, Event::Harvey).unwrap();
        assert_eq!(back.pixels(), img.pixels());
    }

    #[test]
    fn mask_png_is_one_bit_and_roundtrips() {
        let mask = BinaryMask::from_fn(13, 11, |r, c| (r * 3 + c) % 5 == 0);
        let bytes = encode_mask_png(&mask).unwrap();
        // IHDR bit depth byte sits at offset 24.
        assert_eq!(bytes[24], 1);
        let back = decode_mask_png(&bytes, 0.5).unwrap();
        assert_eq!(back.values(), mask.values());
    }

    #[test]
    fn eight_bit_mask_accepted_if_binary() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0, 255]).unwrap();
        }
        assert_eq!(decode_mask_png(&out, 0.5).unwrap().values(), &[0, 1]);

        let mut bad = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut bad, 2, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0, 128]).unwrap();
        }
        assert!(decode_mask_png(&bad, 0.5).is_err());
    }

    #[test]
    fn files_roundtrip_and_dims() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTile::filled("a", 8, 6, [0.2, 0.4, 0.6]).unwrap();
        let p = dir.path().join("a.png");
        write_image(&p, &img).unwrap();
        assert_eq!(raster_dims(&p).unwrap(), (8, 6));
        let back = read_image(&p, 0.5, Event::Synthetic).unwrap();
        assert_eq!(back.tile_id, "a");
        assert_eq!(back.to_rgb8(), img.to_rgb8());
    }
}
