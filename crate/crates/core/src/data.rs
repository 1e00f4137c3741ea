//! Dataset manifests, synthetic data generation and the stratified split.
//!
//! A manifest is line-delimited UTF-8, one JSON record per line:
//!
//! ```text
//! {"id":"p00000","width":64,"height":64,"label":"Positive",
//!  "faces":[{"x":3,"y":7,"w":12,"h":14,"scores7":[...7 floats...]}],
//!  "pixels_path":"train_pixels/p00000.png","split":"train"}
//! ```
//!
//! `pixels_path` is optional and points to an 8-bit RGB PNG, relative to the
//! manifest's directory. `split` is optional and records which side of a
//! stratified split the record landed on; training refuses records tagged
//! `holdout`. Loading validates every record and reports the first offending
//! line and field.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::emotion::{Label, Scores7};
use crate::error::{Error, Result};
use crate::heatmap::HeatmapTensor;
use crate::rng;

/// Bounding box plus the seven emotion scores for one detected face.
/// Box origin is the image's top-left corner, x rightward, y downward.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceObservation {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub scores7: Scores7,
}

impl FaceObservation {
    /// Checks the box against the host image dimensions.
    pub fn validate(&self, img_w: u32, img_h: u32) -> std::result::Result<(), String> {
        if self.w == 0 || self.h == 0 {
            return Err(format!("face box {}x{} has a zero dimension", self.w, self.h));
        }
        if self.x.checked_add(self.w).is_none_or(|r| r > img_w)
            || self.y.checked_add(self.h).is_none_or(|b| b > img_h)
        {
            return Err(format!(
                "face box at ({},{}) size {}x{} leaves the {}x{} image bounds",
                self.x, self.y, self.w, self.h, img_w, img_h
            ));
        }
        Ok(())
    }
}

/// Which side of a stratified split a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Holdout,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Holdout => "holdout",
        }
    }
}

/// One labeled group image: dimensions, faces, and (optionally) raw pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub label: Label,
    pub faces: Vec<FaceObservation>,
    pub pixels: Option<HeatmapTensor>,
    pub split: Option<SplitTag>,
}

impl ImageRecord {
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        if self.width == 0 || self.height == 0 {
            return Err((
                "width/height".into(),
                format!("image dimensions {}x{} must be at least 1x1", self.width, self.height),
            ));
        }
        for (i, f) in self.faces.iter().enumerate() {
            f.validate(self.width, self.height)
                .map_err(|m| (format!("faces[{i}]"), m))?;
        }
        if let Some(p) = &self.pixels {
            if p.height() != self.height as usize || p.width() != self.width as usize {
                return Err((
                    "pixels".into(),
                    format!(
                        "pixel grid is {}x{} but the record says {}x{}",
                        p.height(),
                        p.width(),
                        self.height,
                        self.width
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// A labeled collection of image records with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ImageRecord>) -> Result<DatasetManifest> {
        let m = DatasetManifest { records };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate record id `{}`", r.id)));
            }
            r.validate()
                .map_err(|(field, m)| Error::Manifest(format!("record `{}` {field}: {m}", r.id)))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Count of records per class, indexed by [`Label::index`].
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for r in &self.records {
            counts[r.label.index()] += 1;
        }
        counts
    }

    /// Most frequent class; ties go to the lowest class index.
    pub fn majority_label(&self) -> Option<Label> {
        if self.records.is_empty() {
            return None;
        }
        let counts = self.class_counts();
        let mut best = 0;
        for (i, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = i;
            }
        }
        Label::from_index(best)
    }
}

/// Hold-out fraction (strictly inside (0, 1)) and the split seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(holdout_fraction: f64, seed: u64) -> Result<SplitSpec> {
        if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "holdout fraction must lie strictly between 0 and 1, got {holdout_fraction}"
            )));
        }
        Ok(SplitSpec {
            holdout_fraction,
            seed,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct FaceLine {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    scores7: [f64; 7],
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    width: u32,
    height: u32,
    label: String,
    faces: Vec<FaceLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pixels_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

/// Loads a manifest, validating every record. Errors carry the 1-based line
/// number and the offending field.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let base_dir = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine = serde_json::from_str(&line).map_err(|e| Error::ManifestParse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        records.push(record_from_line(raw, base_dir, path, line_no)?);
    }
    let manifest = DatasetManifest { records };
    manifest.validate()?;
    Ok(manifest)
}

fn record_from_line(
    raw: RecordLine,
    base_dir: &Path,
    path: &Path,
    line: usize,
) -> Result<ImageRecord> {
    let invalid = |field: &str, message: String| Error::ManifestInvalid {
        path: path.to_path_buf(),
        line,
        field: field.into(),
        message,
    };
    let label: Label = raw
        .label
        .parse()
        .map_err(|e: Error| invalid("label", e.to_string()))?;
    let mut faces = Vec::with_capacity(raw.faces.len());
    for (i, f) in raw.faces.into_iter().enumerate() {
        let scores7 = Scores7::new(f.scores7)
            .map_err(|e| invalid(&format!("faces[{i}].scores7"), e.to_string()))?;
        let face = FaceObservation {
            x: f.x,
            y: f.y,
            w: f.w,
            h: f.h,
            scores7,
        };
        face.validate(raw.width, raw.height)
            .map_err(|m| invalid(&format!("faces[{i}]"), m))?;
        faces.push(face);
    }
    let split = match raw.split.as_deref() {
        None => None,
        Some("train") => Some(SplitTag::Train),
        Some("holdout") => Some(SplitTag::Holdout),
        Some(other) => {
            return Err(invalid("split", format!("unknown split tag `{other}`")));
        }
    };
    let pixels = match &raw.pixels_path {
        None => None,
        Some(rel) => {
            let png_path = base_dir.join(rel);
            Some(load_pixels_png(&png_path, raw.width, raw.height).map_err(|m| {
                invalid("pixels_path", m)
            })?)
        }
    };
    let record = ImageRecord {
        id: raw.id,
        width: raw.width,
        height: raw.height,
        label,
        faces,
        pixels,
        split,
    };
    if record.width == 0 || record.height == 0 {
        return Err(invalid(
            "width/height",
            format!("image dimensions {}x{} must be at least 1x1", record.width, record.height),
        ));
    }
    Ok(record)
}

fn load_pixels_png(path: &Path, width: u32, height: u32) -> std::result::Result<HeatmapTensor, String> {
    let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let rgb = img.to_rgb8();
    if rgb.width() != width || rgb.height() != height {
        return Err(format!(
            "pixel file is {}x{} but the record says {}x{}",
            rgb.width(),
            rgb.height(),
            width,
            height
        ));
    }
    let data = rgb.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    HeatmapTensor::from_raw(height as usize, width as usize, data).map_err(|e| e.to_string())
}

/// Record id reduced to a filesystem-safe file stem.
pub fn safe_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Saves a manifest next to any pixel PNGs it needs. Records with pixels get
/// their grid written to `<manifest-stem>_pixels/<id>.png` (values scaled by
/// 255, rounded), so 8-bit-quantized pixels round-trip exactly.
pub fn save_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    let base_dir = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("manifest");
    let pixels_dir_name = format!("{stem}_pixels");

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut pixels_dir_created = false;
    for r in &m.records {
        let pixels_path = match &r.pixels {
            None => None,
            Some(grid) => {
                if !pixels_dir_created {
                    std::fs::create_dir_all(base_dir.join(&pixels_dir_name))
                        .map_err(|e| Error::io(base_dir.join(&pixels_dir_name), e))?;
                    pixels_dir_created = true;
                }
                let rel = format!("{pixels_dir_name}/{}.png", safe_file_stem(&r.id));
                let png_path = base_dir.join(&rel);
                save_pixels_png(grid, &png_path)?;
                Some(rel)
            }
        };
        let line = RecordLine {
            id: r.id.clone(),
            width: r.width,
            height: r.height,
            label: r.label.as_str().to_string(),
            faces: r
                .faces
                .iter()
                .map(|f| FaceLine {
                    x: f.x,
                    y: f.y,
                    w: f.w,
                    h: f.h,
                    scores7: *f.scores7.values(),
                })
                .collect(),
            pixels_path,
            split: r.split.map(|s| s.as_str().to_string()),
        };
        let json = serde_json::to_string(&line).expect("record serialization cannot fail");
        writeln!(out, "{json}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn save_pixels_png(grid: &HeatmapTensor, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = grid
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::RgbImage::from_vec(grid.width() as u32, grid.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    img.save(path).map_err(|e| Error::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Stratified split into (train, holdout). Per class, the holdout gets
/// `round(fraction * class_count)` records (half-up), chosen by a seeded
/// shuffle; each class must be present. Record order within each side
/// follows the input manifest. Output records carry their [`SplitTag`].
pub fn stratified_split(
    m: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<(DatasetManifest, DatasetManifest)> {
    for label in Label::ALL {
        if m.class_counts()[label.index()] == 0 {
            return Err(Error::EmptyClass(label));
        }
    }
    let mut holdout_idx = BTreeSet::new();
    for label in Label::ALL {
        let class_indices: Vec<usize> = m
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        let k = round_half_up(spec.holdout_fraction * class_indices.len() as f64);
        let mut shuffled = class_indices;
        let mut class_rng = rng::seeded(spec.seed, label.index() as u64);
        // Fisher-Yates, explicit so the sequence is pinned by this crate.
        for i in (1..shuffled.len()).rev() {
            let j = class_rng.gen_range(0..=i);
            shuffled.swap(i, j);
        }
        for &idx in shuffled.iter().take(k) {
            holdout_idx.insert(idx);
        }
    }
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (i, r) in m.records.iter().enumerate() {
        let mut r = r.clone();
        if holdout_idx.contains(&i) {
            r.split = Some(SplitTag::Holdout);
            holdout.push(r);
        } else {
            r.split = Some(SplitTag::Train);
            train.push(r);
        }
    }
    Ok((DatasetManifest { records: train }, DatasetManifest { records: holdout }))
}

/// Parameters for synthetic dataset generation.
#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub width: u32,
    pub height: u32,
    pub faces_min: usize,
    pub faces_max: usize,
    pub seed: u64,
}

/// Generates a synthetic dataset whose labels are recoverable from the face
/// scores but not from the pixels.
///
/// Per class, the class-defining emotions (happy for positive, neutral for
/// neutral, anger/disgust/fear/sad for negative) are drawn from a high range
/// [0.60, 0.95] and everything else from a low range [0.02, 0.30], so the
/// classes separate cleanly at the score level. Pixels are iid 8-bit noise
/// with the same distribution for every class: no class signal. Face boxes
/// are placed uniformly, non-overlapping, fully inside the image.
pub fn synth_generate(spec: &SynthSpec) -> Result<DatasetManifest> {
    if spec.n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be at least 1".into()));
    }
    if spec.faces_min == 0 || spec.faces_min > spec.faces_max {
        return Err(Error::InvalidArgument(format!(
            "invalid faces range {}..{}",
            spec.faces_min, spec.faces_max
        )));
    }
    if spec.width < 4 || spec.height < 4 {
        return Err(Error::InvalidArgument(
            "synthetic images must be at least 4x4".into(),
        ));
    }
    let min_dim = spec.width.min(spec.height);
    let face_min = (min_dim / 8).max(2);
    let face_max = (min_dim / 4).max(face_min);
    // Quick feasibility bound before attempting placement.
    let needed = spec.faces_max as u64 * (face_min as u64 * face_min as u64);
    if needed > (spec.width as u64 * spec.height as u64) {
        return Err(Error::SynthPlacement {
            faces: spec.faces_max,
            width: spec.width,
            height: spec.height,
        });
    }

    let mut rng = rng::seeded(spec.seed, 0xDA7A);
    let mut records = Vec::with_capacity(spec.n_per_class * 3);
    for label in Label::ALL {
        let prefix = match label {
            Label::Positive => "p",
            Label::Neutral => "u",
            Label::Negative => "n",
        };
        for i in 0..spec.n_per_class {
            let id = format!("{prefix}{i:05}");
            let n_faces = rng.gen_range(spec.faces_min..=spec.faces_max);
            let faces = place_faces(&mut rng, spec, label, n_faces, face_min, face_max)?;
            let n_px = spec.height as usize * spec.width as usize * 3;
            let mut pixels = Vec::with_capacity(n_px);
            for _ in 0..n_px {
                pixels.push(rng.gen_range(0u32..=255) as f64 / 255.0);
            }
            records.push(ImageRecord {
                id,
                width: spec.width,
                height: spec.height,
                label,
                faces,
                pixels: Some(
                    HeatmapTensor::from_raw(spec.height as usize, spec.width as usize, pixels)
                        .expect("sized buffer"),
                ),
                split: None,
            });
        }
    }
    DatasetManifest::new(records)
}

fn place_faces(
    rng: &mut rng::ChaCha8Rng,
    spec: &SynthSpec,
    label: Label,
    n_faces: usize,
    face_min: u32,
    face_max: u32,
) -> Result<Vec<FaceObservation>> {
    let mut placed: Vec<(u32, u32, u32, u32)> = Vec::with_capacity(n_faces);
    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let mut ok = false;
        for _attempt in 0..200 {
            let w = rng.gen_range(face_min..=face_max.min(spec.width));
            let h = rng.gen_range(face_min..=face_max.min(spec.height));
            let x = rng.gen_range(0..=spec.width - w);
            let y = rng.gen_range(0..=spec.height - h);
            let overlaps = placed.iter().any(|&(px, py, pw, ph)| {
                x < px + pw && px < x + w && y < py + ph && py < y + h
            });
            if !overlaps {
                placed.push((x, y, w, h));
                faces.push(FaceObservation {
                    x,
                    y,
                    w,
                    h,
                    scores7: synth_scores(rng, label),
                });
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::SynthPlacement {
                faces: n_faces,
                width: spec.width,
                height: spec.height,
            });
        }
    }
    Ok(faces)
}

fn synth_scores(rng: &mut rng::ChaCha8Rng, label: Label) -> Scores7 {
    let mut v = [0.0f64; 7];
    for x in v.iter_mut() {
        *x = rng.gen_range(0.02..=0.30);
    }
    let high = |rng: &mut rng::ChaCha8Rng| rng.gen_range(0.60..=0.95);
    match label {
        Label::Positive => v[3] = high(rng),             // happy
        Label::Neutral => v[4] = high(rng),              // neutral
        Label::Negative => {
            for idx in [0usize, 1, 2, 5] {
                // anger, disgust, fear, sad
                v[idx] = high(rng);
            }
        }
    }
    Scores7::new(v).expect("generated scores lie in [0,1]")
}
