//! RGB8 raster images and binary Portable Pixmap (P6) I/O.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

/// Continuous pixel coordinates: `u` grows rightward, `v` downward.
/// Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Axis-aligned pixel rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelRect {
    pub fn around(c: PixelPoint, radius: f64) -> Self {
        Self {
            x0: c.u - radius,
            y0: c.v - radius,
            x1: c.u + radius,
            y1: c.v + radius,
        }
    }

    pub fn center(&self) -> PixelPoint {
        PixelPoint::new((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn contains(&self, p: PixelPoint) -> bool {
        p.u >= self.x0 && p.u <= self.x1 && p.v >= self.y0 && p.v <= self.y1
    }

    /// Intersection with the image frame, `None` when disjoint.
    pub fn clip(&self, width: u32, height: u32) -> Option<Self> {
        let r = Self {
            x0: self.x0.max(0.0),
            y0: self.y0.max(0.0),
            x1: self.x1.min(width as f64),
            y1: self.y1.min(height as f64),
        };
        (r.x0 < r.x1 && r.y0 < r.y1).then_some(r)
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x0 >= 0.0
            && self.y0 >= 0.0
            && self.x1 <= width as f64
            && self.y1 <= height as f64
            && self.x0 <= self.x1
            && self.y0 <= self.y1
    }

    /// Integer pixel span `[c0, c1) x [r0, r1)` covered by this rectangle.
    pub fn pixel_span(&self) -> (i64, i64, i64, i64) {
        (
            self.x0.floor() as i64,
            self.y0.floor() as i64,
            (self.x1.ceil() as i64).max(self.x0.floor() as i64 + 1),
            (self.y1.ceil() as i64).max(self.y0.floor() as i64 + 1),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, fill: Rgb) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image("width and height must be positive".into()));
        }
        let pixels = fill
            .iter()
            .copied()
            .cycle()
            .take(3 * width as usize * height as usize)
            .collect();
        Ok(Self { width, height, pixels })
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image("width and height must be positive".into()));
        }
        if pixels.len() != 3 * width as usize * height as usize {
            return Err(Error::Image(format!(
                "buffer holds {} bytes, expected {}",
                pixels.len(),
                3 * width as usize * height as usize
            )));
        }
        Ok(Self { width, height, pixels })
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

    fn offset(&self, x: u32, y: u32) -> usize {
        3 * (y as usize * self.width as usize + x as usize)
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, c: Rgb) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&c);
    }

    /// Sets a pixel given signed coordinates; out-of-frame writes are dropped.
    pub fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 {
            self.set(x as u32, y as u32, c);
        }
    }

    /// Fills the integer span `[x0, x1) x [y0, y1)`, clipped to the frame.
    pub fn fill_span(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb) {
        let (x0, x1) = (x0.max(0), x1.min(self.width as i64));
        let (y0, y1) = (y0.max(0), y1.min(self.height as i64));
        for y in y0..y1 {
            for x in x0..x1 {
                self.set(x as u32, y as u32, c);
            }
        }
    }

    pub fn write_ppm<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 32);
        self.write_ppm(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Decodes a binary P6 pixmap with maxval 255. Header comments are
    /// accepted.
    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut token = || -> Result<&[u8]> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Image("truncated header".into()));
            }
            Ok(&bytes[start..pos])
        };
        if token()? != b"P6" {
            return Err(Error::Image("not a binary P6 pixmap".into()));
        }
        let mut number = |what: &str| -> Result<u32> {
            std::str::from_utf8(token()?)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Image(format!("bad {what} in header")))
        };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if maxval != 255 {
            return Err(Error::Image(format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::Image("missing raster".into()));
        }
        pos += 1;
        let expected = 3 * width as usize * height as usize;
        let raster = &bytes[pos..];
        if raster.len() < expected {
            return Err(Error::Image(format!(
                "raster holds {} bytes, expected {expected}",
                raster.len()
            )));
        }
        Self::from_raw(width, height, raster[..expected].to_vec())
    }
}
