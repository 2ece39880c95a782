//! Binary portable graymap (P5) images, 8 bits per pixel.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, v: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let (width, height, offset) = parse_header(bytes, path)?;
        let n = width as usize * height as usize;
        if bytes.len() < offset + n {
            return Err(pgm_error(path, "truncated pixel data"));
        }
        Ok(GrayImage {
            width,
            height,
            pixels: bytes[offset..offset + n].to_vec(),
        })
    }
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    GrayImage::decode(&bytes, path)
}

/// Reads only as much of the file as needed to learn its dimensions.
pub fn read_pgm_dims(path: &Path) -> Result<(u32, u32)> {
    use std::io::Read;
    let mut head = Vec::with_capacity(256);
    fs::File::open(path)
        .and_then(|f| f.take(256).read_to_end(&mut head))
        .map_err(|e| Error::io(path, e))?;
    parse_header(&head, path).map(|(w, h, _)| (w, h))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&img.encode()).map_err(|e| Error::io(path, e))
}

fn pgm_error(path: &Path, message: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: format!("pgm: {message}"),
    }
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<(u32, u32, usize)> {
    if !bytes.starts_with(b"P5") {
        return Err(pgm_error(path, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| pgm_error(path, "bad header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(pgm_error(path, "header not terminated"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(pgm_error(path, "only 8-bit graymaps are supported"));
    }
    if width == 0 || height == 0 {
        return Err(pgm_error(path, "zero image dimension"));
    }
    Ok((width, height, pos + 1))
}
