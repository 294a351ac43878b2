//! Detection sources: the recorded-predictions file format, per-class NMS
//! for raw model output, and a deterministic synthetic scene generator used
//! as the test oracle — all behind one detector interface.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::annotations::{ClassMap, Geometry, GroundTruthInstance};
use crate::cascade::TravelDirection;
use crate::geometry::{box_iou, BoundingBox, PolygonMask};
use crate::metrics::Detection;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("unknown image id {0:?}")]
    UnknownImage(String),
    #[error("invalid scene spec: {0}")]
    BadSceneSpec(String),
    #[error("infeasible layout: {0}")]
    InfeasibleLayout(String),
}

fn schema_err(path: &str, message: impl Into<String>) -> BackendError {
    BackendError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

/// What a detector can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub boxes: bool,
    pub masks: bool,
}

/// A source of detections: an image reference goes in, validated detections
/// come out. Responses only use classes from `class_map` and confidences in
/// [0, 1]. Implementations are expected to be safe for concurrent calls.
pub trait Detector {
    fn capabilities(&self) -> Capabilities;
    fn class_map(&self) -> &ClassMap;
    fn detect(&self, image_id: &str) -> Result<Vec<Detection>, BackendError>;
}

/// One image's worth of recorded model output.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
}

/// Model output loaded from a predictions file; the primary backend, so the
/// whole toolkit runs with no neural runtime anywhere near it. Images
/// iterate in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedPredictions {
    images: BTreeMap<String, ImageRecord>,
    class_map: ClassMap,
}

impl RecordedPredictions {
    pub fn new(class_map: ClassMap) -> Self {
        Self {
            images: BTreeMap::new(),
            class_map,
        }
    }

    pub fn insert(&mut self, image_id: String, record: ImageRecord) -> Result<(), BackendError> {
        if self.images.contains_key(&image_id) {
            return Err(schema_err("images", format!("duplicate image id {image_id:?}")));
        }
        self.images.insert(image_id, record);
        Ok(())
    }

    pub fn images(&self) -> impl Iterator<Item = (&str, &ImageRecord)> {
        self.images.iter().map(|(id, r)| (id.as_str(), r))
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.get(image_id)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_map(&self) -> &ClassMap {
        &self.class_map
    }

    /// Every detection of every image, in image-id order.
    pub fn all_detections(&self) -> Vec<Detection> {
        self.images
            .values()
            .flat_map(|r| r.detections.iter().cloned())
            .collect()
    }

    /// Serialize back to the predictions schema. `load_predictions` of the
    /// result reproduces `self` exactly.
    pub fn to_json(&self) -> String {
        let images: Vec<Value> = self
            .images
            .iter()
            .map(|(id, r)| {
                let detections: Vec<Value> = r
                    .detections
                    .iter()
                    .map(|d| {
                        let mut obj = json!({
                            "class": d.class_id,
                            "conf": d.confidence,
                            "box": [d.bbox.x_min(), d.bbox.y_min(), d.bbox.x_max(), d.bbox.y_max()],
                        });
                        if let Some(mask) = &d.mask {
                            obj["mask"] = json!(mask.vertices());
                        }
                        obj
                    })
                    .collect();
                json!({
                    "id": id,
                    "width": r.width,
                    "height": r.height,
                    "detections": detections,
                })
            })
            .collect();
        serde_json::to_string_pretty(&json!({ "images": images })).expect("valid JSON tree")
    }
}

impl Detector for RecordedPredictions {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            boxes: true,
            masks: self
                .images
                .values()
                .any(|r| r.detections.iter().any(|d| d.mask.is_some())),
        }
    }

    fn class_map(&self) -> &ClassMap {
        &self.class_map
    }

    fn detect(&self, image_id: &str) -> Result<Vec<Detection>, BackendError> {
        self.images
            .get(image_id)
            .map(|r| r.detections.clone())
            .ok_or_else(|| BackendError::UnknownImage(image_id.to_string()))
    }
}

fn as_object<'v>(v: &'v Value, path: &str) -> Result<&'v serde_json::Map<String, Value>, BackendError> {
    v.as_object().ok_or_else(|| schema_err(path, "expected an object"))
}

fn as_array<'v>(v: &'v Value, path: &str) -> Result<&'v Vec<Value>, BackendError> {
    v.as_array().ok_or_else(|| schema_err(path, "expected an array"))
}

fn field<'v>(
    obj: &'v serde_json::Map<String, Value>,
    key: &str,
    path: &str,
) -> Result<&'v Value, BackendError> {
    obj.get(key)
        .ok_or_else(|| schema_err(path, format!("missing field {key:?}")))
}

fn as_dim(v: &Value, path: &str) -> Result<u32, BackendError> {
    v.as_u64()
        .filter(|&n| n > 0 && n <= u32::MAX as u64)
        .map(|n| n as u32)
        .ok_or_else(|| schema_err(path, "expected a positive integer"))
}

fn as_finite(v: &Value, path: &str) -> Result<f64, BackendError> {
    v.as_f64()
        .filter(|f| f.is_finite())
        .ok_or_else(|| schema_err(path, "expected a finite number"))
}

/// Parse and validate a predictions file. Every violation reports the JSON
/// path it sits at (e.g. `images[0].detections[2].conf`). Unknown object
/// keys are ignored.
pub fn load_predictions(
    json_text: &str,
    classes: &ClassMap,
) -> Result<RecordedPredictions, BackendError> {
    let root: Value =
        serde_json::from_str(json_text).map_err(|e| schema_err("$", e.to_string()))?;
    let root = as_object(&root, "$")?;
    let images = as_array(field(root, "images", "$")?, "images")?;

    let mut out = RecordedPredictions::new(classes.clone());
    for (i, image) in images.iter().enumerate() {
        let ipath = format!("images[{i}]");
        let image = as_object(image, &ipath)?;
        let id = field(image, "id", &ipath)?
            .as_str()
            .ok_or_else(|| schema_err(&format!("{ipath}.id"), "expected a string"))?
            .to_string();
        let width = as_dim(field(image, "width", &ipath)?, &format!("{ipath}.width"))?;
        let height = as_dim(field(image, "height", &ipath)?, &format!("{ipath}.height"))?;
        let detections = as_array(
            field(image, "detections", &ipath)?,
            &format!("{ipath}.detections"),
        )?;

        let mut parsed = Vec::with_capacity(detections.len());
        for (j, det) in detections.iter().enumerate() {
            let dpath = format!("{ipath}.detections[{j}]");
            let det = as_object(det, &dpath)?;

            let cpath = format!("{dpath}.class");
            let class_id = field(det, "class", &dpath)?
                .as_u64()
                .filter(|&c| c <= u32::MAX as u64)
                .map(|c| c as u32)
                .ok_or_else(|| schema_err(&cpath, "expected a class id"))?;
            if !classes.contains(class_id) {
                return Err(schema_err(&cpath, format!("unknown class id {class_id}")));
            }

            let fpath = format!("{dpath}.conf");
            let conf = as_finite(field(det, "conf", &dpath)?, &fpath)?;
            if !(0.0..=1.0).contains(&conf) {
                return Err(schema_err(&fpath, format!("confidence {conf} outside [0, 1]")));
            }

            let bpath = format!("{dpath}.box");
            let bvals = as_array(field(det, "box", &dpath)?, &bpath)?;
            if bvals.len() != 4 {
                return Err(schema_err(&bpath, format!("expected 4 numbers, found {}", bvals.len())));
            }
            let mut coords = [0.0; 4];
            for (k, v) in bvals.iter().enumerate() {
                coords[k] = as_finite(v, &format!("{bpath}[{k}]"))?;
            }
            let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3])
                .map_err(|e| schema_err(&bpath, e.to_string()))?;

            let mask = match det.get("mask") {
                None | Some(Value::Null) => None,
                Some(m) => {
                    let mpath = format!("{dpath}.mask");
                    let pairs = as_array(m, &mpath)?;
                    let mut vertices = Vec::with_capacity(pairs.len());
                    for (k, pair) in pairs.iter().enumerate() {
                        let ppath = format!("{mpath}[{k}]");
                        let pair = as_array(pair, &ppath)?;
                        if pair.len() != 2 {
                            return Err(schema_err(&ppath, "expected an [x, y] pair"));
                        }
                        vertices.push([
                            as_finite(&pair[0], &format!("{ppath}[0]"))?,
                            as_finite(&pair[1], &format!("{ppath}[1]"))?,
                        ]);
                    }
                    Some(
                        PolygonMask::new(vertices)
                            .map_err(|e| schema_err(&mpath, e.to_string()))?,
                    )
                }
            };

            parsed.push(
                Detection::new(class_id, bbox, mask, conf, id.clone())
                    .map_err(|e| schema_err(&dpath, e.to_string()))?,
            );
        }
        out.insert(
            id,
            ImageRecord {
                width,
                height,
                detections: parsed,
            },
        )?;
    }
    Ok(out)
}

/// Greedy non-maximum suppression over one class's detections: walk them in
/// descending confidence and keep each detection whose IoU with everything
/// already kept stays below the threshold. Callers split by class first —
/// truck and axle boxes legitimately overlap, so suppression must never
/// cross classes.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    assert!(
        iou_threshold > 0.0 && iou_threshold < 1.0,
        "NMS threshold must be in (0, 1)"
    );
    debug_assert!(
        detections.windows(2).all(|w| w[0].class_id == w[1].class_id),
        "NMS input should be a single class"
    );
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].confidence.total_cmp(&detections[a].confidence));
    let mut kept: Vec<Detection> = Vec::new();
    for &i in &order {
        let candidate = &detections[i];
        if kept
            .iter()
            .all(|k| box_iou(&k.bbox, &candidate.bbox) < iou_threshold)
        {
            kept.push(candidate.clone());
        }
    }
    kept
}

/// One truck in a synthetic scene: how many axles, which ordinals (counted
/// from the steer axle) are lifted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruckSpec {
    pub axle_count: u32,
    #[serde(default)]
    pub lifted: BTreeSet<u32>,
}

impl TruckSpec {
    pub fn new(axle_count: u32, lifted: impl IntoIterator<Item = u32>) -> Self {
        Self {
            axle_count,
            lifted: lifted.into_iter().collect(),
        }
    }
}

/// Recipe for a synthetic scene with known ground truth: trucks side by
/// side, axles evenly spaced along each truck's lower edge, lifted ordinals
/// carrying a rectangular mask raised above the axle line. Predictions are
/// the ground truth perturbed by at most `perturbation` pixels per
/// coordinate, confidences drawn from the given ranges. Deterministic in
/// `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    pub trucks: Vec<TruckSpec>,
    pub image_width: u32,
    pub image_height: u32,
    /// Maximum coordinate shift, pixels; rounds down to a multiple of 1/8.
    pub perturbation: f64,
    pub truck_conf: (f64, f64),
    pub axle_conf: (f64, f64),
    pub lifted_conf: (f64, f64),
    pub direction: TravelDirection,
    pub seed: u64,
    pub image_id: String,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self::new(Vec::new(), 0)
    }
}

impl SyntheticSceneSpec {
    pub fn new(trucks: Vec<TruckSpec>, seed: u64) -> Self {
        Self {
            trucks,
            image_width: 1280,
            image_height: 720,
            perturbation: 0.0,
            truck_conf: (0.85, 0.99),
            axle_conf: (0.85, 0.99),
            lifted_conf: (0.85, 0.99),
            direction: TravelDirection::FrontRight,
            seed,
            image_id: "synthetic".to_string(),
        }
    }

    fn validate(&self) -> Result<(), BackendError> {
        for (i, t) in self.trucks.iter().enumerate() {
            if !(2..=9).contains(&t.axle_count) {
                return Err(BackendError::BadSceneSpec(format!(
                    "truck {i}: axle count {} outside 2..=9",
                    t.axle_count
                )));
            }
            if let Some(&bad) = t.lifted.iter().find(|&&o| o < 1 || o > t.axle_count) {
                return Err(BackendError::BadSceneSpec(format!(
                    "truck {i}: lifted ordinal {bad} outside 1..={}",
                    t.axle_count
                )));
            }
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(BackendError::BadSceneSpec("image dimensions must be positive".into()));
        }
        if !(self.perturbation.is_finite() && self.perturbation >= 0.0) {
            return Err(BackendError::BadSceneSpec(format!(
                "perturbation {} must be finite and non-negative",
                self.perturbation
            )));
        }
        for (name, (lo, hi)) in [
            ("truck_conf", self.truck_conf),
            ("axle_conf", self.axle_conf),
            ("lifted_conf", self.lifted_conf),
        ] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(BackendError::BadSceneSpec(format!(
                    "{name} range ({lo}, {hi}) invalid"
                )));
            }
        }
        Ok(())
    }
}

/// Class ids the synthetic scenes use.
pub const SYNTHETIC_TRUCK: u32 = 0;
pub const SYNTHETIC_AXLE: u32 = 1;
pub const SYNTHETIC_LIFTED: u32 = 2;

pub fn synthetic_class_map() -> ClassMap {
    ClassMap::new(["truck", "axle", "lifted_axle"])
}

/// A generated scene: ground truth and matching perturbed predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub ground_truth: Vec<GroundTruthInstance>,
    pub predictions: Vec<Detection>,
    pub image_width: u32,
    pub image_height: u32,
    pub image_id: String,
}

impl SyntheticScene {
    fn pred_class(&self, class_id: u32) -> Vec<Detection> {
        self.predictions
            .iter()
            .filter(|d| d.class_id == class_id)
            .cloned()
            .collect()
    }

    pub fn predicted_trucks(&self) -> Vec<Detection> {
        self.pred_class(SYNTHETIC_TRUCK)
    }

    pub fn predicted_axles(&self) -> Vec<Detection> {
        self.pred_class(SYNTHETIC_AXLE)
    }

    pub fn predicted_masks(&self) -> Vec<Detection> {
        self.pred_class(SYNTHETIC_LIFTED)
    }
}

/// Lay out and render a scene per its spec. Fails when the trucks cannot fit
/// side by side with room for their axles.
pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<SyntheticScene, BackendError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // All layout happens in integer eighths of a pixel: coordinates divide
    // out to exact multiples of 1/8, which reflect about the image midline
    // without rounding — the mirror-symmetry checks rely on that.
    let w8 = spec.image_width as i64 * 8;
    let h8 = spec.image_height as i64 * 8;
    let p8 = (spec.perturbation * 8.0).floor() as i64;

    let n = spec.trucks.len() as i64;
    let mut ground_truth = Vec::new();
    let mut predictions = Vec::new();

    let perturb = |c8: i64, limit8: i64, rng: &mut ChaCha8Rng| -> f64 {
        let shifted = c8 + rng.gen_range(-p8..=p8);
        shifted.clamp(0, limit8) as f64 / 8.0
    };

    for (ti, truck) in spec.trucks.iter().enumerate() {
        let slot8 = w8 / n;
        let pad8 = (p8 + 16).max(32);
        let x0 = slot8 * ti as i64 + pad8;
        let x1 = slot8 * (ti as i64 + 1) - pad8;
        let bottom = h8 - h8 / 8;
        let top = bottom - h8 / 2;
        let truck_w = x1 - x0;
        let truck_h = bottom - top;

        let k = truck.axle_count as i64;
        let axle_w = (truck_w / (2 * k)).min(truck_h / 3).min(320);
        if truck_w <= 0 || axle_w < 32 {
            return Err(BackendError::InfeasibleLayout(format!(
                "truck {ti}: {} axles need more width than its {:.1} px slot offers",
                truck.axle_count,
                slot8 as f64 / 8.0,
            )));
        }

        let px = |v: i64| v as f64 / 8.0;
        let truth_box = BoundingBox::new(px(x0), px(top), px(x1), px(bottom)).unwrap();
        ground_truth.push(GroundTruthInstance {
            class_id: SYNTHETIC_TRUCK,
            geometry: Geometry::Box(truth_box),
            image_id: spec.image_id.clone(),
        });
        let tx0 = perturb(x0, w8, &mut rng);
        let ty0 = perturb(top, h8, &mut rng);
        let tx1 = perturb(x1, w8, &mut rng);
        let ty1 = perturb(bottom, h8, &mut rng);
        predictions.push(
            Detection::new(
                SYNTHETIC_TRUCK,
                BoundingBox::new(tx0.min(tx1), ty0.min(ty1), tx0.max(tx1), ty0.max(ty1)).unwrap(),
                None,
                rng.gen_range(spec.truck_conf.0..=spec.truck_conf.1),
                spec.image_id.clone(),
            )
            .unwrap(),
        );

        for ai in 0..k {
            let cx = x0 + (2 * ai + 1) * truck_w / (2 * k);
            let (ax0, ay0, ax1, ay1) = (cx - axle_w / 2, bottom - axle_w, cx + axle_w / 2, bottom);
            ground_truth.push(GroundTruthInstance {
                class_id: SYNTHETIC_AXLE,
                geometry: Geometry::Box(
                    BoundingBox::new(px(ax0), px(ay0), px(ax1), px(ay1)).unwrap(),
                ),
                image_id: spec.image_id.clone(),
            });
            let qx0 = perturb(ax0, w8, &mut rng);
            let qy0 = perturb(ay0, h8, &mut rng);
            let qx1 = perturb(ax1, w8, &mut rng);
            let qy1 = perturb(ay1, h8, &mut rng);
            predictions.push(
                Detection::new(
                    SYNTHETIC_AXLE,
                    BoundingBox::new(qx0.min(qx1), qy0.min(qy1), qx0.max(qx1), qy0.max(qy1))
                        .unwrap(),
                    None,
                    rng.gen_range(spec.axle_conf.0..=spec.axle_conf.1),
                    spec.image_id.clone(),
                )
                .unwrap(),
            );

            // Ordinals count from the steer axle: rightmost axle when the
            // truck fronts right, leftmost otherwise.
            let ordinal = match spec.direction {
                TravelDirection::FrontRight => (k - ai) as u32,
                TravelDirection::FrontLeft => (ai + 1) as u32,
            };
            if truck.lifted.contains(&ordinal) {
                let lift = axle_w / 4;
                let (mx0, my0, mx1, my1) = (ax0, ay0 - lift, ax1, ay1 - lift);
                ground_truth.push(GroundTruthInstance {
                    class_id: SYNTHETIC_LIFTED,
                    geometry: Geometry::Polygon(
                        PolygonMask::rect(px(mx0), px(my0), px(mx1), px(my1)).unwrap(),
                    ),
                    image_id: spec.image_id.clone(),
                });
                let rx0 = perturb(mx0, w8, &mut rng);
                let ry0 = perturb(my0, h8, &mut rng);
                let rx1 = perturb(mx1, w8, &mut rng);
                let ry1 = perturb(my1, h8, &mut rng);
                let (rx0, rx1) = (rx0.min(rx1), rx0.max(rx1));
                let (ry0, ry1) = (ry0.min(ry1), ry0.max(ry1));
                predictions.push(
                    Detection::new(
                        SYNTHETIC_LIFTED,
                        BoundingBox::new(rx0, ry0, rx1, ry1).unwrap(),
                        Some(PolygonMask::rect(rx0, ry0, rx1, ry1).unwrap()),
                        rng.gen_range(spec.lifted_conf.0..=spec.lifted_conf.1),
                        spec.image_id.clone(),
                    )
                    .unwrap(),
                );
            }
        }
    }

    Ok(SyntheticScene {
        ground_truth,
        predictions,
        image_width: spec.image_width,
        image_height: spec.image_height,
        image_id: spec.image_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{run_cascade, CascadeConfig};
    use crate::metrics::{evaluate, EvalOptions};
    use proptest::prelude::*;

    fn classes() -> ClassMap {
        synthetic_class_map()
    }

    fn det(class_id: u32, coords: [f64; 4], conf: f64) -> Detection {
        Detection::new(
            class_id,
            BoundingBox::new(coords[0], coords[1], coords[2], coords[3]).unwrap(),
            None,
            conf,
            "img",
        )
        .unwrap()
    }

    #[test]
    fn loads_a_single_truck_detection() {
        let text = r#"{"images": [{"id": "frame-1", "width": 1280, "height": 720,
            "detections": [{"class": 0, "conf": 0.93, "box": [100.0, 200.0, 600.0, 500.0]}]}]}"#;
        let loaded = load_predictions(text, &classes()).unwrap();
        assert_eq!(loaded.len(), 1);
        let record = loaded.get("frame-1").unwrap();
        assert_eq!((record.width, record.height), (1280, 720));
        assert_eq!(record.detections.len(), 1);
        let d = &record.detections[0];
        assert_eq!(d.class_id, 0);
        assert_eq!(d.confidence, 0.93);
        assert_eq!(d.bbox.x_max(), 600.0);
        assert_eq!(d.image_id, "frame-1");
        assert!(d.mask.is_none());
    }

    #[test]
    fn empty_images_array_yields_empty_map() {
        let loaded = load_predictions(r#"{"images": []}"#, &classes()).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn out_of_range_confidence_names_its_json_path() {
        let text = r#"{"images": [{"id": "a", "width": 10, "height": 10,
            "detections": [{"class": 0, "conf": 1.7, "box": [0.0, 0.0, 5.0, 5.0]}]}]}"#;
        let err = load_predictions(text, &classes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("images[0].detections[0].conf"), "{msg}");
        assert!(msg.contains("1.7"), "{msg}");
    }

    #[test]
    fn unknown_class_id_is_rejected_with_path() {
        let text = r#"{"images": [{"id": "a", "width": 10, "height": 10,
            "detections": [{"class": 7, "conf": 0.5, "box": [0.0, 0.0, 5.0, 5.0]}]}]}"#;
        let msg = load_predictions(text, &classes()).unwrap_err().to_string();
        assert!(msg.contains("images[0].detections[0].class"), "{msg}");
        assert!(msg.contains("unknown class id 7"), "{msg}");
    }

    #[test]
    fn inverted_box_is_rejected_with_path() {
        let text = r#"{"images": [{"id": "a", "width": 10, "height": 10,
            "detections": [{"class": 0, "conf": 0.5, "box": [5.0, 0.0, 1.0, 5.0]}]}]}"#;
        let msg = load_predictions(text, &classes()).unwrap_err().to_string();
        assert!(msg.contains("images[0].detections[0].box"), "{msg}");
    }

    #[test]
    fn two_vertex_mask_is_rejected_with_path() {
        let text = r#"{"images": [{"id": "a", "width": 10, "height": 10,
            "detections": [{"class": 2, "conf": 0.5, "box": [0.0, 0.0, 5.0, 5.0],
                "mask": [[0.0, 0.0], [5.0, 5.0]]}]}]}"#;
        let msg = load_predictions(text, &classes()).unwrap_err().to_string();
        assert!(msg.contains("images[0].detections[0].mask"), "{msg}");
    }

    #[test]
    fn missing_field_and_bad_dimension_name_their_paths() {
        let msg = load_predictions(r#"{"images": [{"id": "a", "width": 10, "height": 10}]}"#, &classes())
            .unwrap_err()
            .to_string();
        assert!(msg.contains("images[0]") && msg.contains("detections"), "{msg}");

        let msg = load_predictions(
            r#"{"images": [{"id": "a", "width": 0, "height": 10, "detections": []}]}"#,
            &classes(),
        )
        .unwrap_err()
        .to_string();
        assert!(msg.contains("images[0].width"), "{msg}");
    }

    #[test]
    fn duplicate_image_ids_are_rejected() {
        let text = r#"{"images": [
            {"id": "a", "width": 10, "height": 10, "detections": []},
            {"id": "a", "width": 10, "height": 10, "detections": []}]}"#;
        let msg = load_predictions(text, &classes()).unwrap_err().to_string();
        assert!(msg.contains("duplicate image id"), "{msg}");
    }

    #[test]
    fn loader_round_trips_through_to_json() {
        let text = r#"{"images": [
            {"id": "b", "width": 640, "height": 480, "detections": [
                {"class": 1, "conf": 0.875, "box": [10.5, 20.25, 30.125, 40.0]},
                {"class": 2, "conf": 0.5, "box": [1.0, 2.0, 3.0, 4.0],
                 "mask": [[1.0, 2.0], [3.0, 2.0], [3.0, 4.0]]}]},
            {"id": "a", "width": 10, "height": 10, "detections": []}]}"#;
        let first = load_predictions(text, &classes()).unwrap();
        let second = load_predictions(&first.to_json(), &classes()).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn recorded_predictions_serve_the_detector_interface() {
        let text = r#"{"images": [{"id": "frame-1", "width": 1280, "height": 720,
            "detections": [{"class": 2, "conf": 0.9, "box": [0.0, 0.0, 5.0, 5.0],
                "mask": [[0.0, 0.0], [5.0, 0.0], [5.0, 5.0], [0.0, 5.0]]}]}]}"#;
        let loaded = load_predictions(text, &classes()).unwrap();
        assert_eq!(
            loaded.capabilities(),
            Capabilities { boxes: true, masks: true }
        );
        assert_eq!(loaded.class_map().len(), 3);
        assert_eq!(loaded.detect("frame-1").unwrap().len(), 1);
        assert_eq!(
            loaded.detect("frame-2"),
            Err(BackendError::UnknownImage("frame-2".into()))
        );
    }

    #[test]
    fn nms_keeps_a_single_detection() {
        let kept = nms(&[det(0, [0.0, 0.0, 10.0, 10.0], 0.4)], 0.5);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn nms_suppresses_the_lower_of_two_identical_boxes() {
        let input = vec![
            det(0, [0.0, 0.0, 10.0, 10.0], 0.8),
            det(0, [0.0, 0.0, 10.0, 10.0], 0.9),
        ];
        let kept = nms(&input, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.9);
    }

    #[test]
    fn nms_keeps_disjoint_boxes() {
        let input = vec![
            det(0, [0.0, 0.0, 10.0, 10.0], 0.9),
            det(0, [20.0, 0.0, 30.0, 10.0], 0.8),
        ];
        assert_eq!(nms(&input, 0.5).len(), 2);
    }

    proptest! {
        #[test]
        fn nms_output_is_a_clean_idempotent_subset(
            boxes in proptest::collection::vec(
                (0.0..200.0f64, 0.0..200.0f64, 1.0..80.0f64, 1.0..80.0f64, 0.01..1.0f64),
                0..12,
            ),
            threshold in 0.1..0.9f64,
        ) {
            let input: Vec<Detection> = boxes
                .iter()
                .map(|&(x, y, w, h, conf)| det(0, [x, y, x + w, y + h], conf))
                .collect();
            let kept = nms(&input, threshold);

            // Subset, and confidences non-increasing in kept order.
            prop_assert!(kept.len() <= input.len());
            for k in &kept {
                prop_assert!(input.contains(k));
            }
            for pair in kept.windows(2) {
                prop_assert!(pair[0].confidence >= pair[1].confidence);
            }
            // No two survivors overlap at or above the threshold.
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    prop_assert!(box_iou(&a.bbox, &b.bbox) < threshold);
                }
            }
            prop_assert_eq!(nms(&kept, threshold), kept);
        }
    }

    fn five_axle_spec(seed: u64) -> SyntheticSceneSpec {
        SyntheticSceneSpec::new(vec![TruckSpec::new(5, [3])], seed)
    }

    #[test]
    fn same_seed_reproduces_the_scene_exactly() {
        let spec = SyntheticSceneSpec {
            perturbation: 3.0,
            ..five_axle_spec(42)
        };
        assert_eq!(
            generate_synthetic_scene(&spec).unwrap(),
            generate_synthetic_scene(&spec).unwrap()
        );
        let other = generate_synthetic_scene(&SyntheticSceneSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(generate_synthetic_scene(&five_axle_spec(42)).unwrap(), other);
    }

    #[test]
    fn zero_perturbation_predictions_sit_exactly_on_ground_truth() {
        let scene = generate_synthetic_scene(&five_axle_spec(7)).unwrap();
        assert_eq!(scene.ground_truth.len(), 7); // 1 truck + 5 axles + 1 mask
        assert_eq!(scene.predictions.len(), 7);
        for (gt, pred) in scene.ground_truth.iter().zip(&scene.predictions) {
            assert_eq!(gt.class_id, pred.class_id);
            assert_eq!(gt.geometry.bounding_box(), pred.bbox);
        }
    }

    #[test]
    fn cascade_recovers_the_lifted_ordinal_from_a_clean_scene() {
        let scene = generate_synthetic_scene(&five_axle_spec(7)).unwrap();
        let config = CascadeConfig::new(TravelDirection::FrontRight);
        let out = run_cascade(
            &scene.predicted_trucks(),
            &scene.predicted_axles(),
            &scene.predicted_masks(),
            &config,
        )
        .unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].axle_count(), 5);
        assert_eq!(out.records[0].lifted_ordinals(), vec![3]);
        assert!(out.orphan_axles.is_empty());
        assert!(out.unassociated_masks.is_empty());
    }

    #[test]
    fn clean_scene_evaluates_to_exactly_one_everywhere() {
        let spec = SyntheticSceneSpec {
            trucks: vec![TruckSpec::new(5, [3]), TruckSpec::new(2, [])],
            ..five_axle_spec(11)
        };
        let scene = generate_synthetic_scene(&spec).unwrap();
        let report = evaluate(
            &scene.predictions,
            &scene.ground_truth,
            &classes(),
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.map50, Some(1.0));
        assert_eq!(report.map50_95, Some(1.0));
    }

    #[test]
    fn clean_scene_confusion_matrix_is_purely_diagonal() {
        let spec = SyntheticSceneSpec {
            trucks: vec![TruckSpec::new(3, [2]), TruckSpec::new(6, [3, 4])],
            ..five_axle_spec(19)
        };
        let scene = generate_synthetic_scene(&spec).unwrap();
        let matrix = crate::metrics::confusion_matrix(
            &scene.predictions,
            &scene.ground_truth,
            &classes(),
            0.25,
            0.5,
            crate::metrics::IouKind::Box,
        )
        .unwrap();
        use crate::metrics::Cell;
        assert_eq!(matrix.count(Cell::Class(SYNTHETIC_TRUCK), Cell::Class(SYNTHETIC_TRUCK)), 2);
        assert_eq!(matrix.count(Cell::Class(SYNTHETIC_AXLE), Cell::Class(SYNTHETIC_AXLE)), 9);
        assert_eq!(matrix.count(Cell::Class(SYNTHETIC_LIFTED), Cell::Class(SYNTHETIC_LIFTED)), 3);
        for pred in 0..3u32 {
            for actual in 0..3u32 {
                if pred != actual {
                    assert_eq!(matrix.count(Cell::Class(pred), Cell::Class(actual)), 0);
                }
            }
        }
        for c in 0..3u32 {
            assert_eq!(matrix.count(Cell::Background, Cell::Class(c)), 0);
            assert_eq!(matrix.count(Cell::Class(c), Cell::Background), 0);
        }
    }

    #[test]
    fn too_many_trucks_for_the_image_is_an_infeasible_layout() {
        let spec = SyntheticSceneSpec {
            trucks: (0..40).map(|_| TruckSpec::new(9, [])).collect(),
            ..five_axle_spec(1)
        };
        assert!(matches!(
            generate_synthetic_scene(&spec),
            Err(BackendError::InfeasibleLayout(_))
        ));
    }

    #[test]
    fn scene_spec_validation_rejects_bad_axle_counts_and_ordinals() {
        let one_axle = SyntheticSceneSpec::new(vec![TruckSpec::new(1, [])], 0);
        assert!(matches!(
            generate_synthetic_scene(&one_axle),
            Err(BackendError::BadSceneSpec(_))
        ));
        let bad_ordinal = SyntheticSceneSpec::new(vec![TruckSpec::new(5, [6])], 0);
        assert!(matches!(
            generate_synthetic_scene(&bad_ordinal),
            Err(BackendError::BadSceneSpec(_))
        ));
        let bad_conf = SyntheticSceneSpec {
            truck_conf: (0.9, 0.2),
            ..five_axle_spec(0)
        };
        assert!(matches!(
            generate_synthetic_scene(&bad_conf),
            Err(BackendError::BadSceneSpec(_))
        ));
    }

    #[test]
    fn perturbed_predictions_stay_within_the_stated_magnitude() {
        let spec = SyntheticSceneSpec {
            perturbation: 2.5,
            trucks: vec![TruckSpec::new(4, [2]), TruckSpec::new(3, [])],
            ..five_axle_spec(23)
        };
        let scene = generate_synthetic_scene(&spec).unwrap();
        for (gt, pred) in scene.ground_truth.iter().zip(&scene.predictions) {
            let t = gt.geometry.bounding_box();
            let p = &pred.bbox;
            for (a, b) in [
                (t.x_min(), p.x_min()),
                (t.y_min(), p.y_min()),
                (t.x_max(), p.x_max()),
                (t.y_max(), p.y_max()),
            ] {
                assert!((a - b).abs() <= spec.perturbation, "{a} vs {b}");
            }
        }
    }
}
