use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, Rotation};

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Intensity lookup with pixel centers at `(i + 0.5)`; outside reads as 0.
fn sample_bilinear(src: &GrayImage, x: f64, y: f64) -> f64 {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let (tx, ty) = (fx - x0, fy - y0);
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= src.width as f64 || yi >= src.height as f64 {
            0.0
        } else {
            src.pixels[yi as usize * src.width + xi as usize] as f64
        }
    };
    let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1.0, y0) * tx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - tx) + at(x0 + 1.0, y0 + 1.0) * tx;
    top * (1.0 - ty) + bottom * ty
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0; width * height] }
    }

    pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Format(format!(
                "{} values for a {width}x{height} image",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels: values.iter().map(|v| quantize(v * 255.0)).collect(),
        })
    }

    /// Pixel values scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    /// Rotates about the center onto the expanded canvas of `rot`.
    pub fn rotate(&self, rot: &Rotation) -> GrayImage {
        let mut out = GrayImage::new(rot.width, rot.height);
        for y in 0..rot.height {
            for x in 0..rot.width {
                let src = rot.invert(Point::new(x as f64 + 0.5, y as f64 + 0.5));
                out.pixels[y * rot.width + x] = quantize(sample_bilinear(self, src.x, src.y));
            }
        }
        out
    }

    pub fn resize(&self, width: usize, height: usize) -> GrayImage {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = GrayImage::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let v = sample_bilinear(self, (x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy);
                out.pixels[y * width + x] = quantize(v);
            }
        }
        out
    }

    pub fn write_pgm(&self, w: &mut impl Write) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.pixels.len() + 32);
        self.write_pgm(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_pgm(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("truncated PGM header".into()));
            }
            let content = line.split('#').next().unwrap_or("");
            fields.extend(content.split_whitespace().map(str::to_string));
        }
        if fields[0] != "P5" {
            return Err(Error::Format(format!("expected P5 magic, found {:?}", fields[0])));
        }
        let num = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PGM {what}: {s:?}")))
        };
        let (width, height) = (num(&fields[1], "width")?, num(&fields[2], "height")?);
        if num(&fields[3], "maxval")? != 255 {
            return Err(Error::Format("only 8-bit PGM (maxval 255) is supported".into()));
        }
        let mut pixels = vec![0; width * height];
        r.read_exact(&mut pixels)
            .map_err(|_| Error::Format("PGM pixel data shorter than header says".into()))?;
        Ok(Self { width, height, pixels })
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        Self::read_pgm(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> GrayImage {
        GrayImage {
            width: 5,
            height: 3,
            pixels: (0..15).map(|v| (v * 17) as u8).collect(),
        }
    }

    #[test]
    fn pgm_round_trip() {
        let img = ramp();
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(GrayImage::read_pgm(&buf[..]).unwrap(), img);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let mut buf = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        buf.extend([7, 9]);
        let img = GrayImage::read_pgm(&buf[..]).unwrap();
        assert_eq!(img.pixels, vec![7, 9]);
    }

    #[test]
    fn pgm_rejects_wrong_magic_and_short_data() {
        assert!(GrayImage::read_pgm(&b"P2\n1 1\n255\n0"[..]).is_err());
        assert!(GrayImage::read_pgm(&b"P5\n2 2\n255\n\x01"[..]).is_err());
    }

    #[test]
    fn half_turn_reverses_pixels() {
        let img = ramp();
        let out = img.rotate(&Rotation::new(180.0, 5, 3));
        let mut rev = img.pixels.clone();
        rev.reverse();
        assert_eq!(out.pixels, rev);
    }

    #[test]
    fn full_turn_and_identity_resize_preserve_pixels() {
        let img = ramp();
        assert_eq!(img.rotate(&Rotation::new(360.0, 5, 3)), img);
        assert_eq!(img.resize(5, 3), img);
    }

    #[test]
    fn downsizing_averages() {
        let img = GrayImage { width: 2, height: 2, pixels: vec![0, 100, 100, 200] };
        assert_eq!(img.resize(1, 1).pixels, vec![100]);
    }
}
