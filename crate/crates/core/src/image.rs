//! RGB images and depth maps with their on-disk formats (binary PPM and `DSDM`).

use std::io::{BufRead, Read, Write};
use std::path::Path;

use thiserror::Error;

const DEPTH_MAGIC: &[u8; 4] = b"DSDM";

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed PPM: {0}")]
    Ppm(String),
    #[error("malformed depth map: {0}")]
    Depth(String),
    #[error("image shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImageError + '_ {
    move |source| ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Self {
        assert_eq!(
            pixels.len(),
            width * height,
            "pixel count does not match {width}x{height}"
        );
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    /// Bilinear lookup at continuous coordinates where pixel `(x, y)` is
    /// centered at `(x + 0.5, y + 0.5)`; clamps at the border.
    pub fn bilinear(&self, u: f64, v: f64) -> [f64; 3] {
        let fx = (u - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (v - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = (fx.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (fy.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let (p00, p10, p01, p11) = (
            self.get(x0, y0),
            self.get(x1, y0),
            self.get(x0, y1),
            self.get(x1, y1),
        );
        std::array::from_fn(|c| {
            (1.0 - ay) * ((1.0 - ax) * p00[c] + ax * p10[c])
                + ay * ((1.0 - ax) * p01[c] + ax * p11[c])
        })
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| p.map(|c| f64::from(to_u8(c)) / 255.0))
                .collect(),
        }
    }

    pub fn write_ppm<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().flat_map(|p| p.map(to_u8)).collect();
        w.write_all(&bytes)
    }

    pub fn read_ppm<R: BufRead>(r: &mut R) -> Result<Self, ImageError> {
        let mut header = Vec::new();
        let mut tokens = Vec::new();
        // magic, width, height, maxval, then exactly one whitespace byte
        while tokens.len() < 4 {
            let mut byte = [0u8; 1];
            r.read_exact(&mut byte)
                .map_err(|_| ImageError::Ppm("truncated header".into()))?;
            match byte[0] {
                b'#' if header.is_empty() => {
                    let mut comment = Vec::new();
                    r.read_until(b'\n', &mut comment)
                        .map_err(|e| ImageError::Ppm(e.to_string()))?;
                }
                b if b.is_ascii_whitespace() => {
                    if !header.is_empty() {
                        tokens.push(String::from_utf8_lossy(&header).into_owned());
                        header.clear();
                    }
                }
                b => header.push(b),
            }
        }
        if tokens[0] != "P6" {
            return Err(ImageError::Ppm(format!("unsupported magic {}", tokens[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| ImageError::Ppm(format!("bad header field {s}")))
        };
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(ImageError::Ppm(format!(
                "only maxval 255 is supported, got {maxval}"
            )));
        }
        let mut bytes = vec![0u8; width * height * 3];
        r.read_exact(&mut bytes)
            .map_err(|_| ImageError::Ppm("truncated pixel data".into()))?;
        let pixels = bytes
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]].map(|b| f64::from(b) / 255.0))
            .collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn save_ppm(&self, path: &Path) -> Result<(), ImageError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
        self.write_ppm(&mut f)
            .and_then(|_| f.flush())
            .map_err(io_err(path))
    }

    pub fn load_ppm(path: &Path) -> Result<Self, ImageError> {
        let f = std::fs::File::open(path).map_err(io_err(path))?;
        Self::read_ppm(&mut std::io::BufReader::new(f))
    }
}

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major depth map; `0` marks pixels without depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            width * height,
            "value count does not match {width}x{height}"
        );
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn values(&self) -> &[f64] {
        &self.data
    }
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
    pub fn set(&mut self, x: usize, y: usize, d: f64) {
        self.data[y * self.width + x] = d;
    }

    /// Depth of the pixel containing continuous coordinate `(u, v)`.
    pub fn at_pixel_containing(&self, u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (x, y) = (
            (u.floor() as usize).min(self.width - 1),
            (v.floor() as usize).min(self.height - 1),
        );
        Some(self.get(x, y)).filter(|d| *d > 0.0)
    }

    /// Values rounded to `f32`, the precision of the file format.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|d| f64::from(*d as f32)).collect(),
        }
    }

    pub fn write_dsdm<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(DEPTH_MAGIC)?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .flat_map(|d| (*d as f32).to_le_bytes())
            .collect();
        w.write_all(&bytes)
    }

    pub fn read_dsdm<R: Read>(r: &mut R) -> Result<Self, ImageError> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)
            .map_err(|_| ImageError::Depth("truncated header".into()))?;
        if &head[..4] != DEPTH_MAGIC {
            return Err(ImageError::Depth("bad magic".into()));
        }
        let width = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let mut bytes = vec![0u8; width * height * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| ImageError::Depth("truncated data".into()))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
        self.write_dsdm(&mut f)
            .and_then(|_| f.flush())
            .map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let f = std::fs::File::open(path).map_err(io_err(path))?;
        Self::read_dsdm(&mut std::io::BufReader::new(f))
    }
}
