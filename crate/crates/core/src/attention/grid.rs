use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 2-D grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "grid {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Index of the largest cell, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Row-major binary grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_clear(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Tight bounding box of the set cells, `None` when there are none.
    pub fn bounding_box(&self) -> Option<PixelBox> {
        let mut bb: Option<PixelBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => PixelBox::cell(x, y),
                        Some(b) => b.union(&PixelBox::cell(x, y)),
                    });
                }
            }
        }
        bb
    }
}

/// Half-open box `[x0, x1) x [y0, y1)`; serialized as `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn cell(x: usize, y: usize) -> Self {
        Self {
            x0: x,
            y0: y,
            x1: x + 1,
            y1: y + 1,
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn union(&self, o: &Self) -> Self {
        Self {
            x0: self.x0.min(o.x0),
            y0: self.y0.min(o.y0),
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
        }
    }

    pub fn contains(&self, o: &Self) -> bool {
        self.x0 <= o.x0 && self.y0 <= o.y0 && self.x1 >= o.x1 && self.y1 >= o.y1
    }
}

impl From<[usize; 4]> for PixelBox {
    fn from([x0, y0, x1, y1]: [usize; 4]) -> Self {
        Self { x0, y0, x1, y1 }
    }
}

impl From<PixelBox> for [usize; 4] {
    fn from(b: PixelBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

/// Per-layer nonnegative attention over a grid of visual tokens, stored
/// layer-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    layers: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AttentionFile {
    layers: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

const RAW_MAGIC: &[u8; 4] = b"ATTN";

impl AttentionStack {
    pub fn new(layers: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if layers == 0 || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch("attention dims must be positive".into()));
        }
        if data.len() != layers * height * width {
            return Err(Error::DimensionMismatch(format!(
                "attention {layers}x{height}x{width} needs {} values, got {}",
                layers * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!(
                "attention weights must be finite and >= 0, got {v}"
            )));
        }
        Ok(Self {
            layers,
            height,
            width,
            data,
        })
    }

    /// Stack whose layers are the given grids, all of one size.
    pub fn from_layers(grids: &[Grid]) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::DimensionMismatch("no layers".into()))?;
        let (w, h) = (first.width, first.height);
        let mut data = Vec::with_capacity(grids.len() * w * h);
        for g in grids {
            if (g.width, g.height) != (w, h) {
                return Err(Error::DimensionMismatch("layers differ in size".into()));
            }
            data.extend_from_slice(&g.data);
        }
        Self::new(grids.len(), h, w, data)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.layers, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn layer_len(&self) -> usize {
        self.height * self.width
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        let n = self.layer_len();
        &self.data[l * n..(l + 1) * n]
    }

    pub fn layer_grid(&self, l: usize) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.layer(l).to_vec(),
        }
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.layers,
            self.height,
            self.width,
            self.data.iter().map(|v| v * c).collect(),
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: AttentionFile = serde_json::from_str(text)?;
        Self::new(f.layers, f.height, f.width, f.data)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&AttentionFile {
            layers: self.layers,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        })?)
    }

    /// Raw layout: `ATTN`, then layers, height, width as little-endian u32,
    /// then little-endian f32 values.
    pub fn read_raw<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header).map_err(|e| Error::io("<attention>", e))?;
        if &header[..4] != RAW_MAGIC {
            return Err(Error::invalid("raw attention file lacks the ATTN magic"));
        }
        let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (l, h, w) = (dim(0), dim(1), dim(2));
        let mut body = Vec::new();
        r.read_to_end(&mut body).map_err(|e| Error::io("<attention>", e))?;
        if body.len() != 4 * l * h * w {
            return Err(Error::DimensionMismatch(format!(
                "raw attention {l}x{h}x{w} needs {} bytes of data, got {}",
                4 * l * h * w,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(l, h, w, data)
    }

    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 4 * self.data.len());
        buf.extend_from_slice(RAW_MAGIC);
        for d in [self.layers, self.height, self.width] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io("<attention>", e))
    }

    /// Reads either format, picking raw when the file starts with `ATTN`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(RAW_MAGIC) {
            Self::read_raw(&bytes[..])
        } else {
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| Error::invalid(format!("{}: not UTF-8 JSON", path.display())))?;
            Self::from_json(text)
        }
    }
}
