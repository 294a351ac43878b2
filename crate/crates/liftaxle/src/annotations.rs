//! YOLO-format label files, dataset manifests with train/val splits, dataset
//! summaries, and training-run configuration.
//!
//! Label files are UTF-8 text, one instance per line, coordinates normalized
//! to [0, 1]: `<class> <cx> <cy> <w> <h>` for detection boxes and
//! `<class> <x1> <y1> ... <xk> <yk>` for segmentation polygons.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, GeometryError, PolygonMask};

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Box(BoundingBox),
    Polygon(PolygonMask),
}

impl Geometry {
    /// The box itself, or the polygon's axis-aligned bounding box.
    pub fn bounding_box(&self) -> BoundingBox {
        match self {
            Geometry::Box(b) => *b,
            Geometry::Polygon(p) => p.bounding_box(),
        }
    }
}

/// One labeled object in one image, in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub class_id: u32,
    pub geometry: Geometry,
    pub image_id: String,
}

/// Ordered class names; the id of a class is its position.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    names: Vec<String>,
}

impl ClassMap {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, class_id: u32) -> Option<&str> {
        self.names.get(class_id as usize).map(String::as_str)
    }

    pub fn contains(&self, class_id: u32) -> bool {
        (class_id as usize) < self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelError {
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        line: usize,
        expected: &'static str,
        found: usize,
    },
    #[error("line {line}: token {token:?} is not a valid {kind}")]
    BadToken {
        line: usize,
        token: String,
        kind: &'static str,
    },
    #[error("line {line}: coordinate {token:?} outside [0, 1]")]
    OutOfRange { line: usize, token: String },
    #[error("line {line}: class id {class_id} not in the class map")]
    UnknownClass { line: usize, class_id: u32 },
    #[error("line {line}: {source}")]
    Geometry {
        line: usize,
        #[source]
        source: GeometryError,
    },
    #[error("instance {index}: normalized coordinate {value} outside [0, 1], geometry exceeds image bounds")]
    ExceedsBounds { index: usize, value: f64 },
    #[error("instance {index}: expected {expected} geometry")]
    WrongGeometry {
        index: usize,
        expected: &'static str,
    },
}

fn parse_class(token: &str, line: usize, classes: &ClassMap) -> Result<u32, LabelError> {
    let class_id: u32 = token.parse().map_err(|_| LabelError::BadToken {
        line,
        token: token.to_string(),
        kind: "class id",
    })?;
    if !classes.contains(class_id) {
        return Err(LabelError::UnknownClass { line, class_id });
    }
    Ok(class_id)
}

fn parse_coord(token: &str, line: usize) -> Result<f64, LabelError> {
    let value: f64 = token.parse().map_err(|_| LabelError::BadToken {
        line,
        token: token.to_string(),
        kind: "coordinate",
    })?;
    if !(0.0..=1.0).contains(&value) {
        return Err(LabelError::OutOfRange {
            line,
            token: token.to_string(),
        });
    }
    Ok(value)
}

/// Parse detection labels (`class cx cy w h`, normalized) into pixel-space
/// box instances. Blank lines are skipped; all errors carry the 1-based line
/// number.
pub fn parse_detection_labels(
    text: &str,
    image_w: u32,
    image_h: u32,
    classes: &ClassMap,
    image_id: &str,
) -> Result<Vec<GroundTruthInstance>, LabelError> {
    assert!(image_w > 0 && image_h > 0, "image dimensions must be positive");
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(LabelError::FieldCount {
                line,
                expected: "5",
                found: fields.len(),
            });
        }
        let class_id = parse_class(fields[0], line, classes)?;
        let cx = parse_coord(fields[1], line)? * image_w as f64;
        let cy = parse_coord(fields[2], line)? * image_h as f64;
        let w = parse_coord(fields[3], line)? * image_w as f64;
        let h = parse_coord(fields[4], line)? * image_h as f64;
        let bbox = BoundingBox::from_center_size(cx, cy, w, h)
            .map_err(|source| LabelError::Geometry { line, source })?;
        out.push(GroundTruthInstance {
            class_id,
            geometry: Geometry::Box(bbox),
            image_id: image_id.to_string(),
        });
    }
    Ok(out)
}

/// Parse segmentation labels (`class x1 y1 ... xk y k`, normalized, at least
/// three vertices) into pixel-space polygon instances.
pub fn parse_segmentation_labels(
    text: &str,
    image_w: u32,
    image_h: u32,
    classes: &ClassMap,
    image_id: &str,
) -> Result<Vec<GroundTruthInstance>, LabelError> {
    assert!(image_w > 0 && image_h > 0, "image dimensions must be positive");
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        let coord_count = fields.len() - 1;
        if coord_count % 2 != 0 {
            return Err(LabelError::FieldCount {
                line,
                expected: "a class id plus an even number of coordinates",
                found: fields.len(),
            });
        }
        let class_id = parse_class(fields[0], line, classes)?;
        let mut vertices = Vec::with_capacity(coord_count / 2);
        for pair in fields[1..].chunks_exact(2) {
            let x = parse_coord(pair[0], line)? * image_w as f64;
            let y = parse_coord(pair[1], line)? * image_h as f64;
            vertices.push([x, y]);
        }
        let polygon = PolygonMask::new(vertices)
            .map_err(|source| LabelError::Geometry { line, source })?;
        out.push(GroundTruthInstance {
            class_id,
            geometry: Geometry::Polygon(polygon),
            image_id: image_id.to_string(),
        });
    }
    Ok(out)
}

fn check_normalized(value: f64, index: usize) -> Result<f64, LabelError> {
    // Tolerate float dust from the pixel -> normalized division; anything
    // further out means the geometry really does leave the image.
    if !(-1e-9..=1.0 + 1e-9).contains(&value) {
        return Err(LabelError::ExceedsBounds { index, value });
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Serialize instances back to label-file text with 6-decimal normalized
/// coordinates. Geometry extending past the image bounds is an error, not
/// silently clamped. The inverse of the parse functions within 1e-6.
pub fn write_labels(
    instances: &[GroundTruthInstance],
    image_w: u32,
    image_h: u32,
) -> Result<String, LabelError> {
    assert!(image_w > 0 && image_h > 0, "image dimensions must be positive");
    let (w, h) = (image_w as f64, image_h as f64);
    let mut out = String::new();
    for (index, inst) in instances.iter().enumerate() {
        match &inst.geometry {
            Geometry::Box(b) => {
                // The cx/cy/w/h encoding can look in-range even when a corner
                // leaves the image, so bounds are checked on the corners.
                let x0 = check_normalized(b.x_min() / w, index)?;
                let y0 = check_normalized(b.y_min() / h, index)?;
                let x1 = check_normalized(b.x_max() / w, index)?;
                let y1 = check_normalized(b.y_max() / h, index)?;
                write!(
                    out,
                    "{} {:.6} {:.6} {:.6} {:.6}",
                    inst.class_id,
                    (x0 + x1) / 2.0,
                    (y0 + y1) / 2.0,
                    x1 - x0,
                    y1 - y0
                )
                .unwrap();
            }
            Geometry::Polygon(p) => {
                write!(out, "{}", inst.class_id).unwrap();
                for &[x, y] in p.vertices() {
                    let nx = check_normalized(x / w, index)?;
                    let ny = check_normalized(y / h, index)?;
                    write!(out, " {nx:.6} {ny:.6}").unwrap();
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub label_path: String,
    pub split: SplitTag,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifestError {
    #[error("duplicate image id {0:?}")]
    DuplicateImageId(String),
    #[error("manifest is empty")]
    Empty,
    #[error("entry {0:?} already carries a split tag")]
    AlreadySplit(String),
    #[error("train fraction {0} outside (0, 1)")]
    BadFraction(f64),
}

/// An image dataset: one entry per image plus the class map its label files
/// are written against. The JSON form is the bare entry array; the class map
/// travels separately as configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    class_map: ClassMap,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, class_map: ClassMap) -> Result<Self, ManifestError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(ManifestError::DuplicateImageId(e.image_id.clone()));
            }
        }
        Ok(Self { entries, class_map })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn class_map(&self) -> &ClassMap {
        &self.class_map
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for e in &self.entries {
            match e.split {
                SplitTag::Train => counts.0 += 1,
                SplitTag::Val => counts.1 += 1,
                SplitTag::Unassigned => counts.2 += 1,
            }
        }
        counts
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("manifest entries serialize")
    }

    pub fn from_json(text: &str, class_map: ClassMap) -> Result<Self, String> {
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(text).map_err(|e| e.to_string())?;
        Self::new(entries, class_map).map_err(|e| e.to_string())
    }
}

/// Assign train/val tags: train count is round(n * train_fraction) with ties
/// to even, and the assignment depends only on (seed, the set of image ids) —
/// never on entry order. Returns a new manifest; entry order is preserved.
pub fn split_dataset(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest, ManifestError> {
    if manifest.is_empty() {
        return Err(ManifestError::Empty);
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ManifestError::BadFraction(train_fraction));
    }
    if let Some(e) = manifest
        .entries
        .iter()
        .find(|e| e.split != SplitTag::Unassigned)
    {
        return Err(ManifestError::AlreadySplit(e.image_id.clone()));
    }

    let mut ids: Vec<&str> = manifest
        .entries
        .iter()
        .map(|e| e.image_id.as_str())
        .collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let train_count = (n as f64 * train_fraction).round_ties_even() as usize;
    let train_ids: BTreeSet<&str> = ids[..train_count].iter().copied().collect();

    let entries = manifest
        .entries
        .iter()
        .map(|e| ManifestEntry {
            split: if train_ids.contains(e.image_id.as_str()) {
                SplitTag::Train
            } else {
                SplitTag::Val
            },
            ..e.clone()
        })
        .collect();
    Ok(DatasetManifest {
        entries,
        class_map: manifest.class_map.clone(),
    })
}

/// One truck seen in the dataset: where the footage came from and how many
/// axles the truck has.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruckObservation {
    pub source: String,
    pub axle_count: u32,
}

/// Image counts plus a source x axle-count distribution of trucks, the shape
/// of the dataset summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub images: usize,
    pub train_images: usize,
    pub val_images: usize,
    rows: BTreeMap<String, BTreeMap<u32, u32>>,
}

impl DatasetSummary {
    /// Trucks with `axle_count` axles seen in footage from `source`.
    pub fn count(&self, source: &str, axle_count: u32) -> u32 {
        self.rows
            .get(source)
            .and_then(|row| row.get(&axle_count))
            .copied()
            .unwrap_or(0)
    }

    pub fn total_trucks(&self, source: &str) -> u32 {
        self.rows
            .get(source)
            .map(|row| row.values().sum())
            .unwrap_or(0)
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    /// Markdown table, one row per source, one column per axle count seen
    /// anywhere in the data.
    pub fn render_markdown(&self) -> String {
        let counts: BTreeSet<u32> = self
            .rows
            .values()
            .flat_map(|row| row.keys().copied())
            .collect();
        let mut out = String::from("| Source |");
        for c in &counts {
            write!(out, " {c} axles |").unwrap();
        }
        out.push_str(" Total |\n|---|");
        for _ in &counts {
            out.push_str("---|");
        }
        out.push_str("---|\n");
        for (source, row) in &self.rows {
            write!(out, "| {source} |").unwrap();
            for c in &counts {
                match row.get(c) {
                    Some(n) => write!(out, " {n} |").unwrap(),
                    None => out.push_str(" - |"),
                }
            }
            writeln!(out, " {} |", row.values().sum::<u32>()).unwrap();
        }
        out
    }
}

/// Roll a set of truck observations and a manifest up into summary counts.
pub fn summarize_dataset(
    manifest: &DatasetManifest,
    trucks: &[TruckObservation],
) -> DatasetSummary {
    let (train, val, _) = manifest.split_counts();
    let mut rows: BTreeMap<String, BTreeMap<u32, u32>> = BTreeMap::new();
    for t in trucks {
        *rows
            .entry(t.source.clone())
            .or_default()
            .entry(t.axle_count)
            .or_default() += 1;
    }
    DatasetSummary {
        images: manifest.len(),
        train_images: train,
        val_images: val,
        rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Detection,
    Segmentation,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("override {key} = {value} must be positive")]
    NonPositive { key: &'static str, value: f64 },
}

/// Hyperparameters for one training run, rendered as `key: value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub epochs: u32,
    pub batch: u32,
    pub optimizer: String,
    pub lr0: f64,
    pub scale: f64,
    pub fliplr: f64,
    /// Detection runs shear; segmentation omits the key entirely.
    pub shear: Option<f64>,
}

impl TrainingConfig {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "epochs: {}", self.epochs).unwrap();
        writeln!(out, "batch: {}", self.batch).unwrap();
        writeln!(out, "optimizer: {}", self.optimizer).unwrap();
        writeln!(out, "lr0: {}", self.lr0).unwrap();
        writeln!(out, "scale: {}", self.scale).unwrap();
        writeln!(out, "fliplr: {}", self.fliplr).unwrap();
        if let Some(shear) = self.shear {
            writeln!(out, "shear: {shear}").unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingOverrides {
    pub epochs: Option<u32>,
    pub batch: Option<u32>,
    pub optimizer: Option<String>,
    pub lr0: Option<f64>,
    pub scale: Option<f64>,
    pub fliplr: Option<f64>,
    pub shear: Option<f64>,
}

/// The training configuration for a model kind: defaults are the published
/// recipe (epochs 400, AdamW, lr0 0.01, scale 0.5, fliplr 0.5; batch 3 with
/// shear 0.5 for detection, batch 32 with no shear for segmentation), with
/// explicit overrides replacing individual defaults.
pub fn emit_training_config(
    kind: ModelKind,
    overrides: &TrainingOverrides,
) -> Result<TrainingConfig, ConfigError> {
    fn positive(key: &'static str, value: Option<f64>) -> Result<(), ConfigError> {
        match value {
            Some(v) if v <= 0.0 => Err(ConfigError::NonPositive { key, value: v }),
            _ => Ok(()),
        }
    }
    positive("epochs", overrides.epochs.map(f64::from))?;
    positive("batch", overrides.batch.map(f64::from))?;
    positive("lr0", overrides.lr0)?;
    positive("scale", overrides.scale)?;
    positive("fliplr", overrides.fliplr)?;
    positive("shear", overrides.shear)?;

    let mut config = TrainingConfig {
        epochs: 400,
        batch: match kind {
            ModelKind::Detection => 3,
            ModelKind::Segmentation => 32,
        },
        optimizer: "AdamW".to_string(),
        lr0: 0.01,
        scale: 0.5,
        fliplr: 0.5,
        shear: match kind {
            ModelKind::Detection => Some(0.5),
            ModelKind::Segmentation => None,
        },
    };
    if let Some(v) = overrides.epochs {
        config.epochs = v;
    }
    if let Some(v) = overrides.batch {
        config.batch = v;
    }
    if let Some(v) = &overrides.optimizer {
        config.optimizer = v.clone();
    }
    if let Some(v) = overrides.lr0 {
        config.lr0 = v;
    }
    if let Some(v) = overrides.scale {
        config.scale = v;
    }
    if let Some(v) = overrides.fliplr {
        config.fliplr = v;
    }
    if let Some(v) = overrides.shear {
        config.shear = Some(v);
    }
    Ok(config)
}
