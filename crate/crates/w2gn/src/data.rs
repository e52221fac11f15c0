//! Toy-distribution samplers and image pixel palettes.
//!
//! Samplers are deterministic in seed; palettes hold RGB pixels scaled to
//! [0,1] plus the raster dimensions so images round-trip.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid distribution: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{path}:{line}: expected two comma-separated numbers")]
    Scatter { path: PathBuf, line: usize },
}

/// Source/target distributions of the 2D experiments.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ToyDistribution {
    StandardGaussian {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    GaussianRing {
        k: usize,
        radius: f64,
        /// Per-component standard deviation; defaults to 0.05 * radius.
        sigma: Option<f64>,
    },
    GaussianGrid {
        k: usize,
        spacing: f64,
        sigma: Option<f64>,
    },
    SwissRoll {
        noise_sigma: f64,
    },
}

fn default_dim() -> usize {
    2
}

impl ToyDistribution {
    pub fn dim(&self) -> usize {
        match self {
            ToyDistribution::StandardGaussian { dim } => *dim,
            ToyDistribution::Gaussian { mean, .. } => mean.len(),
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        match self {
            ToyDistribution::StandardGaussian { dim } => {
                if *dim == 0 {
                    return Err(DataError::Config("dim must be positive".into()));
                }
            }
            ToyDistribution::Gaussian { mean, cov } => {
                let d = mean.len();
                if d == 0 || cov.len() != d || cov.iter().any(|r| r.len() != d) {
                    return Err(DataError::Config("mean/cov shape mismatch".into()));
                }
                let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
                if Cholesky::new(m).is_none() {
                    return Err(DataError::Config("cov is not positive definite".into()));
                }
            }
            ToyDistribution::GaussianRing { k, radius, sigma } => {
                if *k == 0 || *radius <= 0.0 || sigma.is_some_and(|s| s < 0.0) {
                    return Err(DataError::Config("ring needs k>0, radius>0, sigma>=0".into()));
                }
            }
            ToyDistribution::GaussianGrid { k, spacing, sigma } => {
                if *k == 0 || *spacing <= 0.0 || sigma.is_some_and(|s| s < 0.0) {
                    return Err(DataError::Config("grid needs k>0, spacing>0, sigma>=0".into()));
                }
            }
            ToyDistribution::SwissRoll { noise_sigma } => {
                if *noise_sigma < 0.0 {
                    return Err(DataError::Config("noise_sigma must be nonnegative".into()));
                }
            }
        }
        Ok(())
    }

    /// Mixture component means, for mode-coverage diagnostics.
    pub fn component_means(&self) -> Option<Vec<[f64; 2]>> {
        match self {
            ToyDistribution::GaussianRing { k, radius, .. } => Some(
                (0..*k)
                    .map(|i| {
                        let a = 2.0 * std::f64::consts::PI * i as f64 / *k as f64;
                        [radius * a.cos(), radius * a.sin()]
                    })
                    .collect(),
            ),
            ToyDistribution::GaussianGrid { k, spacing, .. } => {
                let off = (*k as f64 - 1.0) / 2.0;
                let mut means = Vec::with_capacity(k * k);
                for i in 0..*k {
                    for j in 0..*k {
                        means.push([(i as f64 - off) * spacing, (j as f64 - off) * spacing]);
                    }
                }
                Some(means)
            }
            _ => None,
        }
    }
}

/// Anything that can feed training batches: toy samplers and pixel palettes.
pub trait BatchSource {
    fn dim(&self) -> usize;
    fn sample(&mut self, n: usize) -> Array2<f64>;
}

impl<T: BatchSource + ?Sized> BatchSource for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn sample(&mut self, n: usize) -> Array2<f64> {
        (**self).sample(n)
    }
}

/// Stateful sampler: one private RNG stream per run.
pub struct Sampler {
    dist: ToyDistribution,
    rng: ChaCha8Rng,
    chol: Option<DMatrix<f64>>,
}

impl Sampler {
    pub fn new(dist: ToyDistribution, seed: u64) -> Result<Self, DataError> {
        dist.validate()?;
        let chol = match &dist {
            ToyDistribution::Gaussian { cov, .. } => {
                let d = cov.len();
                let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
                Some(Cholesky::new(m).expect("validated PD").l())
            }
            _ => None,
        };
        Ok(Self { dist, rng: ChaCha8Rng::seed_from_u64(seed), chol })
    }

    pub fn dim(&self) -> usize {
        self.dist.dim()
    }

    pub fn dist(&self) -> &ToyDistribution {
        &self.dist
    }

    pub fn sample(&mut self, n: usize) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for i in 0..n {
            let p = self.draw_one();
            for j in 0..d {
                out[[i, j]] = p[j];
            }
        }
        out
    }

    fn draw_one(&mut self) -> Vec<f64> {
        let rng = &mut self.rng;
        match &self.dist {
            ToyDistribution::StandardGaussian { dim } => {
                (0..*dim).map(|_| rng.sample(StandardNormal)).collect()
            }
            ToyDistribution::Gaussian { mean, .. } => {
                let l = self.chol.as_ref().expect("precomputed");
                let d = mean.len();
                let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = l * z;
                (0..d).map(|j| mean[j] + x[j]).collect()
            }
            ToyDistribution::GaussianRing { k, radius, sigma } => {
                let s = sigma.unwrap_or(0.05 * radius);
                let i = rng.gen_range(0..*k);
                let a = 2.0 * std::f64::consts::PI * i as f64 / *k as f64;
                vec![
                    radius * a.cos() + s * rng.sample::<f64, _>(StandardNormal),
                    radius * a.sin() + s * rng.sample::<f64, _>(StandardNormal),
                ]
            }
            ToyDistribution::GaussianGrid { k, spacing, sigma } => {
                let s = sigma.unwrap_or(0.05 * spacing * (*k as f64 - 1.0) / 2.0);
                let off = (*k as f64 - 1.0) / 2.0;
                let i = rng.gen_range(0..*k);
                let j = rng.gen_range(0..*k);
                vec![
                    (i as f64 - off) * spacing + s * rng.sample::<f64, _>(StandardNormal),
                    (j as f64 - off) * spacing + s * rng.sample::<f64, _>(StandardNormal),
                ]
            }
            ToyDistribution::SwissRoll { noise_sigma } => {
                let t = rng.gen_range(1.5 * std::f64::consts::PI..4.5 * std::f64::consts::PI);
                vec![
                    t * t.cos() / 10.0 + noise_sigma * rng.sample::<f64, _>(StandardNormal),
                    t * t.sin() / 10.0 + noise_sigma * rng.sample::<f64, _>(StandardNormal),
                ]
            }
        }
    }
}

impl BatchSource for Sampler {
    fn dim(&self) -> usize {
        Sampler::dim(self)
    }

    fn sample(&mut self, n: usize) -> Array2<f64> {
        Sampler::sample(self, n)
    }
}

/// Convenience one-shot draw.
pub fn sample(dist: &ToyDistribution, n: usize, seed: u64) -> Result<Array2<f64>, DataError> {
    let mut s = Sampler::new(dist.clone(), seed)?;
    Ok(s.sample(n))
}

/// RGB pixels in [0,1], row-major, with the source raster shape.
#[derive(Debug, Clone)]
pub struct PixelPalette {
    pub pixels: Array2<f64>,
    pub width: u32,
    pub height: u32,
}

impl PixelPalette {
    /// Uniform draw with replacement from the palette.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let total = self.pixels.nrows();
        let mut out = Array2::zeros((n, 3));
        for i in 0..n {
            let k = rng.gen_range(0..total);
            for j in 0..3 {
                out[[i, j]] = self.pixels[[k, j]];
            }
        }
        out
    }
}

/// Uniform-with-replacement pixel batches from one palette.
pub struct PaletteSampler {
    palette: PixelPalette,
    rng: ChaCha8Rng,
}

impl PaletteSampler {
    pub fn new(palette: PixelPalette, seed: u64) -> Self {
        Self { palette, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn palette(&self) -> &PixelPalette {
        &self.palette
    }
}

impl BatchSource for PaletteSampler {
    fn dim(&self) -> usize {
        3
    }

    fn sample(&mut self, n: usize) -> Array2<f64> {
        self.palette.sample(n, &mut self.rng)
    }
}

pub fn load_palette(path: &Path) -> Result<PixelPalette, DataError> {
    let img = image::ImageReader::open(path)
        .map_err(|source| DataError::Io { path: path.to_owned(), source })?
        .decode()
        .map_err(|e| DataError::Image { path: path.to_owned(), message: e.to_string() })?
        .into_rgb8();
    let (width, height) = (img.width(), img.height());
    let raw = img.into_raw();
    let n = (width as usize) * (height as usize);
    let mut pixels = Array2::zeros((n, 3));
    for i in 0..n {
        for j in 0..3 {
            pixels[[i, j]] = raw[i * 3 + j] as f64 / 255.0;
        }
    }
    Ok(PixelPalette { pixels, width, height })
}

pub fn save_palette(palette: &PixelPalette, path: &Path) -> Result<(), DataError> {
    let n = palette.pixels.nrows();
    let mut raw = Vec::with_capacity(n * 3);
    for i in 0..n {
        for j in 0..3 {
            let v = (palette.pixels[[i, j]].clamp(0.0, 1.0) * 255.0).round() as u8;
            raw.push(v);
        }
    }
    let img = image::RgbImage::from_raw(palette.width, palette.height, raw)
        .ok_or_else(|| DataError::Image {
            path: path.to_owned(),
            message: "pixel count does not match dimensions".into(),
        })?;
    img.save(path)
        .map_err(|e| DataError::Image { path: path.to_owned(), message: e.to_string() })
}

/// Map every pixel, clamping the image back into [0,1].
pub fn apply_palette_map<F>(map: F, palette: &PixelPalette) -> PixelPalette
where
    F: Fn(&ArrayView2<f64>) -> Array2<f64>,
{
    let mapped = map(&palette.pixels.view()).mapv(|v| v.clamp(0.0, 1.0));
    assert_eq!(mapped.dim(), palette.pixels.dim());
    PixelPalette { pixels: mapped, width: palette.width, height: palette.height }
}

/// Plot-ready CSV of a 2D batch; values render at full round-trip precision.
pub fn export_scatter(batch: &ArrayView2<f64>, path: &Path) -> Result<(), DataError> {
    assert_eq!(batch.ncols(), 2, "scatter export is 2D only");
    let mut body = String::from("x,y\n");
    for row in batch.rows() {
        let _ = writeln!(body, "{},{}", row[0], row[1]);
    }
    std::fs::write(path, body).map_err(|source| DataError::Io { path: path.to_owned(), source })
}

/// Plot-ready CSV of RGB pixel samples (Figure-style palette scatter).
pub fn export_palette_scatter(
    palette: &PixelPalette,
    n: usize,
    seed: u64,
    path: &Path,
) -> Result<(), DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = palette.sample(n.min(palette.pixels.nrows()), &mut rng);
    let mut body = String::from("r,g,b\n");
    for row in pixels.rows() {
        let _ = writeln!(body, "{},{},{}", row[0], row[1], row[2]);
    }
    std::fs::write(path, body).map_err(|source| DataError::Io { path: path.to_owned(), source })
}

/// Parse a scatter CSV back into an n×2 batch.
pub fn parse_scatter(path: &Path) -> Result<Array2<f64>, DataError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.to_owned(), source })?;
    parse_scatter_str(&text).map_err(|line| DataError::Scatter { path: path.to_owned(), line })
}

/// Header line "x,y" then one "x,y" pair per row; Err carries the bad line number.
pub fn parse_scatter_str(text: &str) -> Result<Array2<f64>, usize> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line.trim() != "x,y" {
                return Err(1);
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let x = parts.next().and_then(|s| s.trim().parse::<f64>().ok());
        let y = parts.next().and_then(|s| s.trim().parse::<f64>().ok());
        match (x, y) {
            (Some(x), Some(y)) if x.is_finite() && y.is_finite() => rows.push([x, y]),
            _ => return Err(idx + 1),
        }
    }
    let mut out = Array2::zeros((rows.len(), 2));
    for (i, r) in rows.iter().enumerate() {
        out[[i, 0]] = r[0];
        out[[i, 1]] = r[1];
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
