//! RGB images in `[0, 1]` and the PPM / PFM file formats.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ImageError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImageError + '_ {
    move |source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> ImageError {
    ImageError::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Row-major `H × W × 3` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * 3, "image buffer size");
        Image { width, height, data }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Image { width, height, data }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn mean_rgb(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for px in self.data.chunks(3) {
            for c in 0..3 {
                m[c] += px[c];
            }
        }
        m.map(|v| v / self.pixels() as f64)
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.data.len() as f64
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    out.set(x, y, c, self.get(self.width - 1 - x, y, c));
                }
            }
        }
        out
    }

    /// Round every value to the nearest 8-bit level.
    pub fn quantized(&self) -> Image {
        let data = self.data.iter().map(|&v| quantize(v) as f64 / 255.0).collect();
        Image { data, ..*self }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[1, self.height, self.width, 3]).expect("image shape")
    }

    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Image> {
        let s = t.shape();
        if s.len() != 4 || s[3] != 3 || index >= s[0] {
            return Err(TensorError::Invalid(format!("tensor {s:?} is not an image batch")).into());
        }
        let n = s[1] * s[2] * 3;
        Ok(Image::new(s[2], s[1], t.data()[index * n..(index + 1) * n].to_vec()))
    }
}

/// Stack images into `[B, H, W, 3]`.
pub fn batch_tensor(images: &[&Image]) -> Result<Tensor> {
    let (w, h) = (images[0].width, images[0].height);
    if images.iter().any(|i| i.width != w || i.height != h) {
        return Err(TensorError::Invalid("images in a batch differ in size".into()).into());
    }
    let data = images.iter().flat_map(|i| i.data.iter().copied()).collect();
    Ok(Tensor::new(data, &[images.len(), h, w, 3])?)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6, maxval 255).
pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend(img.data.iter().map(|&v| quantize(v)));
    fs::write(path, bytes).map_err(io_err(path))
}

fn header_tokens<R: BufRead>(r: &mut R, n: usize, path: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut line = String::new();
    while out.len() < n {
        line.clear();
        if r.read_line(&mut line).map_err(io_err(path))? == 0 {
            return Err(format_err(path, "truncated header"));
        }
        let content = line.split('#').next().unwrap_or("");
        out.extend(content.split_whitespace().map(String::from));
    }
    if out.len() != n {
        return Err(format_err(path, "malformed header"));
    }
    Ok(out)
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(f);
    let head = header_tokens(&mut r, 4, path)?;
    if head[0] != "P6" {
        return Err(format_err(path, format!("expected P6, found {}", head[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format_err(path, format!("bad number `{s}`")));
    let (w, h, maxval) = (parse(&head[1])?, parse(&head[2])?, parse(&head[3])?);
    if maxval != 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval}")));
    }
    let mut buf = vec![0u8; w * h * 3];
    r.read_exact(&mut buf).map_err(io_err(path))?;
    Ok(Image::new(w, h, buf.iter().map(|&b| b as f64 / 255.0).collect()))
}

/// Single-channel PFM, little-endian (negative scale), rows stored bottom-up.
pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    if values.len() != width * height {
        return Err(format_err(path, "value count does not match size"));
    }
    let mut bytes = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for y in (0..height).rev() {
        for v in &values[y * width..(y + 1) * width] {
            bytes.extend(v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(f);
    let head = header_tokens(&mut r, 4, path)?;
    if head[0] != "Pf" {
        return Err(format_err(path, format!("expected Pf, found {}", head[0])));
    }
    let w: usize = head[1].parse().map_err(|_| format_err(path, "bad width"))?;
    let h: usize = head[2].parse().map_err(|_| format_err(path, "bad height"))?;
    let scale: f64 = head[3].parse().map_err(|_| format_err(path, "bad scale"))?;
    let little = scale < 0.0;
    let mut buf = vec![0u8; w * h * 4];
    r.read_exact(&mut buf).map_err(io_err(path))?;
    let mut values = vec![0f32; w * h];
    for (i, c) in buf.chunks_exact(4).enumerate() {
        let b: [u8; 4] = c.try_into().unwrap();
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, col) = (h - 1 - i / w, i % w);
        values[row * w + col] = v;
    }
    Ok((w, h, values))
}
