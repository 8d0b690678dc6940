//! Synthetic echo-like images: one bright annulus on a dark background with
//! multiplicative speckle. The negative class draws a baseline-thickness ring,
//! the positive class the same ring dilated by `dilation`. The ring annulus is
//! the ground-truth discriminative region.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Grid;

use super::io::encode_pgm;
use super::{DatasetManifest, ManifestRow};

const BACKGROUND: f64 = 0.12;
const RING: f64 = 0.85;
/// Minimum gap in pixels between the ring and the image border.
const BORDER: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub size: usize,
    /// Ring radius range as fractions of `size`.
    pub radius_range: (f64, f64),
    /// Baseline ring thickness as a fraction of `size`.
    pub thickness: f64,
    /// Positive-class thickness multiplier; must exceed 1.
    pub dilation: f64,
    /// Speckle multiplies each pixel by a uniform draw from `[1 - noise, 1 + noise]`.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_class: 100,
            size: 64,
            radius_range: (0.16, 0.26),
            thickness: 0.06,
            dilation: 1.8,
            noise: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.n_per_class == 0 {
            return fail("n per class must be >= 1".into());
        }
        if self.size < 32 {
            return fail(format!("image size must be >= 32, got {}", self.size));
        }
        if !(self.dilation.is_finite() && self.dilation > 1.0) {
            return fail(format!("dilation must exceed 1, got {}", self.dilation));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return fail(format!("noise level must lie in [0, 1], got {}", self.noise));
        }
        let (r0, r1) = self.radius_range;
        if !(r0 > 0.0 && r0 <= r1 && self.thickness > 0.0) {
            return fail(format!("invalid ring geometry: radius range ({r0}, {r1}), thickness {}", self.thickness));
        }
        let reach = (r1 + self.thickness * self.dilation / 2.0) * self.size as f64 + BORDER;
        if reach >= self.size as f64 / 2.0 {
            return fail("the largest ring does not fit inside the image".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub thickness: f64,
}

/// Pixels whose centre lies within `thickness / 2` of the ring's circle.
pub fn render_ring(size: usize, ring: &Ring) -> Grid<u8> {
    Grid::from_fn(size, size, |y, x| {
        let dx = x as f64 + 0.5 - ring.cx;
        let dy = y as f64 + 0.5 - ring.cy;
        u8::from(((dx * dx + dy * dy).sqrt() - ring.radius).abs() <= ring.thickness / 2.0)
    })
}

/// Bright-pixel area divided by the circumference of the given radius.
pub fn measure_ring_thickness(mask: &Grid<u8>, radius: f64) -> f64 {
    let area = mask.data().iter().filter(|&&v| v != 0).count() as f64;
    area / (2.0 * std::f64::consts::PI * radius)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    pub config: SynthConfig,
    pub manifest: DatasetManifest,
    pub images: Vec<Grid<u8>>,
    /// 1 inside the ring annulus, 0 elsewhere.
    pub masks: Vec<Grid<u8>>,
    pub rings: Vec<Ring>,
}

/// Image `i` has label `i % 2` and is drawn from ChaCha8 stream `i` of `seed`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticSet> {
    cfg.validate()?;
    let s = cfg.size as f64;
    let total = 2 * cfg.n_per_class;
    let mut out = SyntheticSet {
        config: *cfg,
        manifest: DatasetManifest { rows: Vec::with_capacity(total) },
        images: Vec::with_capacity(total),
        masks: Vec::with_capacity(total),
        rings: Vec::with_capacity(total),
    };
    for i in 0..total {
        let label = (i % 2) as u8;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let radius = s * rng.random_range(cfg.radius_range.0..=cfg.radius_range.1);
        let thickness = s * cfg.thickness * if label == 1 { cfg.dilation } else { 1.0 };
        let margin = radius + thickness / 2.0 + BORDER;
        let cx = rng.random_range(margin..=s - margin);
        let cy = rng.random_range(margin..=s - margin);
        let ring = Ring {
            cx,
            cy,
            radius,
            thickness,
        };
        let mask = render_ring(cfg.size, &ring);
        let image = Grid::from_fn(cfg.size, cfg.size, |y, x| {
            let base = if mask.get(y, x) == 1 { RING } else { BACKGROUND };
            let speckle = if cfg.noise > 0.0 {
                rng.random_range(1.0 - cfg.noise..=1.0 + cfg.noise)
            } else {
                1.0
            };
            (base * speckle * 255.0).round().clamp(0.0, 255.0) as u8
        });
        out.manifest.rows.push(ManifestRow {
            path: PathBuf::from(format!("images/img_{i:04}.pgm")),
            label,
            subject: format!("synth_{i:04}"),
        });
        out.images.push(image);
        out.masks.push(mask);
        out.rings.push(ring);
    }
    Ok(out)
}

/// Writes `images/`, `masks/` (values 0 and 255), `manifest.csv` and
/// `synth.json` under `dir`.
pub fn write_synthetic(dir: &Path, set: &SyntheticSet) -> Result<()> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (i, (img, mask)) in set.images.iter().zip(&set.masks).enumerate() {
        let p = dir.join(&set.manifest.rows[i].path);
        fs::write(&p, encode_pgm(img)).map_err(|e| Error::io(&p, e))?;
        let p = dir.join(format!("masks/mask_{i:04}.pgm"));
        fs::write(&p, encode_pgm(&mask.map(|v| v * 255))).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join("manifest.csv");
    fs::write(&p, set.manifest.to_csv()).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("synth.json");
    let json = serde_json::to_string_pretty(&set.config).expect("config serializes");
    fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
}
