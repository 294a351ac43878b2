//! Box and polygon-mask primitives: IoU measures and the letterbox resize
//! transform used to map camera frames onto the model's square input.
//!
//! Coordinates are continuous pixels, origin top-left, y growing downward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid box: min corner ({x_min}, {y_min}) exceeds max corner ({x_max}, {y_max})")]
    InvertedBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("invalid box: non-finite coordinate")]
    NonFiniteBox,
    #[error("invalid polygon: {count} vertices, need at least 3")]
    TooFewVertices { count: usize },
    #[error("invalid polygon: vertex ({x}, {y}) is not finite and non-negative")]
    BadVertex { x: f64, y: f64 },
}

/// Axis-aligned box in pixel coordinates. `x_min <= x_max` and
/// `y_min <= y_max` always hold; zero-area (degenerate) boxes are legal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteBox);
        }
        if x_min > x_max || y_min > y_max {
            return Err(GeometryError::InvertedBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// Boundary counts as inside.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn intersection_area(&self, other: &Self) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    /// Shift by a vector. Boxes may leave the image frame; that is fine.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// Intersection over union of two boxes. A union of zero area (two degenerate
/// boxes) yields 0, never an error.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Simple polygon in pixel coordinates, implicitly closed. At least 3
/// vertices, all finite and non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct PolygonMask {
    vertices: Vec<[f64; 2]>,
}

impl PolygonMask {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices {
                count: vertices.len(),
            });
        }
        for &[x, y] in &vertices {
            if !(x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0) {
                return Err(GeometryError::BadVertex { x, y });
            }
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle as a 4-vertex polygon.
    pub fn rect(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        Self::new(vec![
            [x_min, y_min],
            [x_max, y_min],
            [x_max, y_max],
            [x_min, y_max],
        ])
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn bounding_box(&self) -> BoundingBox {
        let mut x_min = f64::INFINITY;
        let mut y_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for &[x, y] in &self.vertices {
            x_min = x_min.min(x);
            y_min = y_min.min(y);
            x_max = x_max.max(x);
            y_max = y_max.max(y);
        }
        BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self, GeometryError> {
        Self::new(
            self.vertices
                .iter()
                .map(|&[x, y]| [x + dx, y + dy])
                .collect(),
        )
    }
}

impl TryFrom<Vec<[f64; 2]>> for PolygonMask {
    type Error = GeometryError;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<PolygonMask> for Vec<[f64; 2]> {
    fn from(p: PolygonMask) -> Self {
        p.vertices
    }
}

/// Dense 1-bit occupancy grid, packed 64 cells per word so intersection and
/// union counts reduce to AND/OR plus popcount.
#[derive(Debug, Clone, PartialEq)]
pub struct BitGrid {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl BitGrid {
    pub fn new(width: u32, height: u32) -> Self {
        let cells = width as usize * height as usize;
        Self {
            width,
            height,
            words: vec![0; cells.div_ceil(64)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        let idx = row as usize * self.width as usize + col as usize;
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    fn set_run(&mut self, row: u32, col_start: u32, col_end: u32) {
        let base = row as usize * self.width as usize;
        for col in col_start..col_end {
            let idx = base + col as usize;
            self.words[idx / 64] |= 1 << (idx % 64);
        }
    }

    pub fn count_set(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn intersection_count(&self, other: &Self) -> u64 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum()
    }

    pub fn union_count(&self, other: &Self) -> u64 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as u64)
            .sum()
    }
}

/// Rasterize a polygon onto a `width x height` grid: cell (col, row) is set
/// iff its center (col + 0.5, row + 0.5) lies inside the polygon under the
/// even-odd rule. Regions outside the grid are clipped.
pub fn rasterize_polygon(poly: &PolygonMask, width: u32, height: u32) -> BitGrid {
    let mut grid = BitGrid::new(width, height);
    let verts = poly.vertices();
    let bbox = poly.bounding_box();
    let row_start = (bbox.y_min() - 0.5).ceil().max(0.0) as u32;
    let row_end = (bbox.y_max() - 0.5).ceil().clamp(0.0, height as f64) as u32;

    let mut crossings: Vec<f64> = Vec::with_capacity(verts.len());
    for row in row_start..row_end {
        let y = row as f64 + 0.5;
        crossings.clear();
        for i in 0..verts.len() {
            let [x1, y1] = verts[i];
            let [x2, y2] = verts[(i + 1) % verts.len()];
            // Half-open span so a scanline through a vertex counts once.
            if (y1 <= y && y2 > y) || (y2 <= y && y1 > y) {
                crossings.push(x1 + (y - y1) / (y2 - y1) * (x2 - x1));
            }
        }
        crossings.sort_unstable_by(|a, b| a.total_cmp(b));
        for pair in crossings.chunks_exact(2) {
            // Cells whose center x lies in [pair[0], pair[1]).
            let start = (pair[0] - 0.5).ceil().clamp(0.0, width as f64) as u32;
            let end = (pair[1] - 0.5).ceil().clamp(0.0, width as f64) as u32;
            grid.set_run(row, start, end);
        }
    }
    grid
}

/// IoU of two polygons via rasterization at the given grid resolution.
/// An empty union (both rasterize to nothing) yields 0.
pub fn mask_iou(a: &PolygonMask, b: &PolygonMask, width: u32, height: u32) -> f64 {
    let ga = rasterize_polygon(a, width, height);
    let gb = rasterize_polygon(b, width, height);
    let union = ga.union_count(&gb);
    if union == 0 {
        0.0
    } else {
        ga.intersection_count(&gb) as f64 / union as f64
    }
}

/// [`mask_iou`] rasterized only over the integer-aligned window covering both
/// polygons. The window cells sit on the same pixel lattice as a full image
/// grid, so for polygons inside the image this equals `mask_iou` at image
/// resolution while touching far fewer cells.
pub fn mask_iou_windowed(a: &PolygonMask, b: &PolygonMask) -> f64 {
    let (ba, bb) = (a.bounding_box(), b.bounding_box());
    let ox = ba.x_min().min(bb.x_min()).floor();
    let oy = ba.y_min().min(bb.y_min()).floor();
    let w = (ba.x_max().max(bb.x_max()).ceil() - ox) as u32;
    let h = (ba.y_max().max(bb.y_max()).ceil() - oy) as u32;
    if w == 0 || h == 0 {
        return 0.0;
    }
    let ta = a.translated(-ox, -oy).expect("shift by floor keeps vertices non-negative");
    let tb = b.translated(-ox, -oy).expect("shift by floor keeps vertices non-negative");
    let ga = rasterize_polygon(&ta, w, h);
    let gb = rasterize_polygon(&tb, w, h);
    let union = ga.union_count(&gb);
    if union == 0 {
        0.0
    } else {
        ga.intersection_count(&gb) as f64 / union as f64
    }
}

/// Aspect-preserving resize of a `source_w x source_h` frame into a square
/// `target x target` canvas, padding the short dimension symmetrically.
/// When the total pad is odd the extra pixel goes to the bottom/right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LetterboxTransform {
    pub scale: f64,
    pub pad_left: u32,
    pub pad_top: u32,
    pub source_w: u32,
    pub source_h: u32,
    pub target: u32,
}

impl LetterboxTransform {
    /// Source pixel coordinate -> target canvas coordinate.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x * self.scale + self.pad_left as f64,
            y * self.scale + self.pad_top as f64,
        )
    }

    /// Target canvas coordinate -> source pixel coordinate.
    pub fn invert(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.pad_left as f64) / self.scale,
            (y - self.pad_top as f64) / self.scale,
        )
    }

    pub fn apply_box(&self, b: &BoundingBox) -> BoundingBox {
        let (x0, y0) = self.apply(b.x_min(), b.y_min());
        let (x1, y1) = self.apply(b.x_max(), b.y_max());
        BoundingBox {
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
        }
    }

    pub fn content_size(&self) -> (u32, u32) {
        (
            (self.source_w as f64 * self.scale).round() as u32,
            (self.source_h as f64 * self.scale).round() as u32,
        )
    }
}

/// Compute the letterbox transform for a source frame and square target size.
/// All dimensions must be positive; this is enforced by the types being
/// nonzero in practice and debug-asserted here.
pub fn letterbox(source_w: u32, source_h: u32, target: u32) -> LetterboxTransform {
    debug_assert!(source_w > 0 && source_h > 0 && target > 0);
    let scale = target as f64 / source_w.max(source_h) as f64;
    let content_w = (source_w as f64 * scale).round() as u32;
    let content_h = (source_h as f64 * scale).round() as u32;
    LetterboxTransform {
        scale,
        pad_left: (target - content_w) / 2,
        pad_top: (target - content_h) / 2,
        source_w,
        source_h,
        target,
    }
}
