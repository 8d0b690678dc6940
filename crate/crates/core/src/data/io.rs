//! 8-bit image files: binary PGM (P5) and PPM (P6), and PNG decoding.

use std::fs;
use std::io::{BufReader, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Grid;

/// Interleaved 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

pub fn encode_pgm(img: &Grid<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Parses the `P5`/`P6` header; returns (width, height, maxval, raster offset).
fn netpbm_header(bytes: &[u8], magic: &[u8; 2]) -> std::result::Result<(usize, usize, usize, usize), String> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format!("expected magic {}", String::from_utf8_lossy(magic)));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed header number")?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after header".into());
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("only 8-bit images are supported (maxval {maxval})"));
    }
    Ok((w, h, maxval, pos + 1))
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Grid<u8>, String> {
    let (w, h, maxval, start) = netpbm_header(bytes, b"P5")?;
    let raster = bytes.get(start..start + w * h).ok_or("truncated raster")?;
    let data = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&v| ((v.min(maxval as u8) as usize * 255 + maxval / 2) / maxval) as u8)
            .collect()
    };
    Grid::new(h, w, data).map_err(|e| e.to_string())
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let (w, h, maxval, start) = netpbm_header(bytes, b"P6")?;
    if maxval != 255 {
        return Err("only maxval 255 PPM is supported".into());
    }
    let raster = bytes.get(start..start + 3 * w * h).ok_or("truncated raster")?;
    Ok(RgbImage {
        height: h,
        width: w,
        data: raster.to_vec(),
    })
}

/// Decodes a PNG to 8-bit grayscale; colour images use Rec. 601 luma and
/// alpha is ignored.
pub fn decode_png(bytes: &[u8]) -> std::result::Result<Grid<u8>, String> {
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or("PNG too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        for px in row.chunks_exact(channels) {
            let v = match channels {
                1 | 2 => px[0],
                _ => ((299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32 + 500) / 1000) as u8,
            };
            data.push(v);
        }
    }
    Grid::new(h, w, data).map_err(|e| e.to_string())
}

/// Reads a PGM or PNG file as 8-bit grayscale, dispatching on content.
pub fn read_gray(path: &Path) -> Result<Grid<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else {
        Err("not a binary PGM (P5) or PNG file".into())
    };
    decoded.map_err(|reason| Error::format(path, reason))
}

pub fn write_pgm(path: &Path, img: &Grid<u8>) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}
