//! Dataset manifests, preprocessing and the synthetic ring generator.
//!
//! Manifests are UTF-8 CSV with the header `path,label,subject`; label 1 is
//! the positive (KD) class and 0 the negative one. Relative paths resolve
//! against the manifest's directory.

mod io;
mod synth;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::bilinear_resize;
use crate::tensor::{Grid, Real};

pub use io::{decode_pgm, decode_png, decode_ppm, encode_pgm, encode_ppm, read_gray, write_pgm, write_ppm, RgbImage};
pub use synth::{generate_synthetic, measure_ring_thickness, render_ring, write_synthetic, Ring, SynthConfig, SyntheticSet};

/// Default square crop side.
pub const CROP_SIZE: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub label: u8,
    pub subject: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    /// (negatives, positives).
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.rows.iter().filter(|r| r.label == 1).count();
        (self.rows.len() - pos, pos)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Checks labels, path uniqueness and class presence.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, r) in self.rows.iter().enumerate() {
            if r.label > 1 {
                return Err(Error::Validation(format!("manifest row {}: label {} is not 0 or 1", i + 1, r.label)));
            }
            if !seen.insert(&r.path) {
                return Err(Error::Validation(format!(
                    "manifest row {}: duplicate path {}",
                    i + 1,
                    r.path.display()
                )));
            }
        }
        let (neg, pos) = self.class_counts();
        if neg == 0 || pos == 0 {
            return Err(Error::Validation(format!(
                "manifest must contain both classes (found {pos} positive, {neg} negative)"
            )));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["path", "label", "subject"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([r.path.to_string_lossy().as_ref(), &r.label.to_string(), &r.subject])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input")
    }
}

/// Parses manifest CSV text. Row numbers in errors count data rows from 1.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Validation(format!("manifest header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label", "subject"] {
        return Err(Error::Validation(format!(
            "manifest header must be path,label,subject, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Validation(format!("manifest row {}: {e}", i + 1)))?;
        let label = match &rec[1] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Validation(format!(
                    "manifest row {}: label {other:?} is not 0 or 1",
                    i + 1
                )))
            }
        };
        rows.push(ManifestRow {
            path: PathBuf::from(&rec[0]),
            label,
            subject: rec[2].to_string(),
        });
    }
    let m = DatasetManifest { rows };
    m.validate()?;
    Ok(m)
}

/// A manifest with its decoded images.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<Grid<u8>>,
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = parse_manifest(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let images = manifest
        .rows
        .iter()
        .map(|r| read_gray(&base.join(&r.path)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, images })
}

/// Centred `size x size` window with offsets `floor((dim - size) / 2)`.
pub fn center_crop<T: Copy>(image: &Grid<T>, size: usize) -> Result<Grid<T>> {
    let (h, w) = image.dims();
    if size == 0 || h < size || w < size {
        return Err(Error::Validation(format!(
            "cannot crop {h}x{w} image to {size}x{size}"
        )));
    }
    image.window((h - size) / 2, (w - size) / 2, size, size)
}

/// Bilinear resize to `target x target`, then intensities divided by 255.
pub fn resize_to_input(image: &Grid<u8>, target: usize) -> Result<Grid<Real>> {
    if target < 8 {
        return Err(Error::Validation(format!("input size must be >= 8, got {target}")));
    }
    let real = image.map(Real::from);
    Ok(bilinear_resize(&real, target, target).map(|v| v / 255.0))
}

/// Crop to the largest centred square no larger than `crop`, then resize.
pub fn preprocess(image: &Grid<u8>, crop: usize, target: usize) -> Result<Grid<Real>> {
    let (h, w) = image.dims();
    let side = crop.min(h).min(w);
    resize_to_input(&center_crop(image, side)?, target)
}
