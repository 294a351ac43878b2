//! The three-stage pipeline logic: group axle detections under trucks, order
//! axles outward from the steer axle, associate lifted-axle masks, and emit
//! one record per truck.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_iou, BoundingBox};
use crate::metrics::Detection;

/// Which side of the frame the trucks' front ends point to. Roadside cameras
/// sit perpendicular to traffic, so this is per-camera configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TravelDirection {
    FrontLeft,
    FrontRight,
}

impl TravelDirection {
    /// The direction an x-mirrored view of the scene travels in.
    pub fn opposite(self) -> Self {
        match self {
            Self::FrontLeft => Self::FrontRight,
            Self::FrontRight => Self::FrontLeft,
        }
    }
}

impl std::str::FromStr for TravelDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "front-left" => Ok(Self::FrontLeft),
            "front-right" => Ok(Self::FrontRight),
            other => Err(format!(
                "unknown direction {other:?}, expected front-left or front-right"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CascadeError {
    #[error("{name} threshold {value} outside (0, 1)")]
    BadThreshold { name: &'static str, value: f64 },
    #[error("inputs span images {a:?} and {b:?}; run one image at a time")]
    MixedImages { a: String, b: String },
}

/// Stage confidence cuts, the mask-to-axle association floor, and the travel
/// direction for one camera. Fields omitted from a serialized config take
/// the front-right defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub truck_confidence: f64,
    pub axle_confidence: f64,
    pub lifted_confidence: f64,
    pub association_iou: f64,
    pub direction: TravelDirection,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self::new(TravelDirection::FrontRight)
    }
}

impl CascadeConfig {
    pub fn new(direction: TravelDirection) -> Self {
        Self {
            truck_confidence: 0.5,
            axle_confidence: 0.5,
            lifted_confidence: 0.5,
            association_iou: 0.3,
            direction,
        }
    }

    pub fn validate(&self) -> Result<(), CascadeError> {
        for (name, value) in [
            ("truck confidence", self.truck_confidence),
            ("axle confidence", self.axle_confidence),
            ("lifted confidence", self.lifted_confidence),
            ("association IoU", self.association_iou),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(CascadeError::BadThreshold { name, value });
            }
        }
        Ok(())
    }
}

/// Axle indices per truck (parallel to the truck slice) plus the indices of
/// axles no truck contains.
#[derive(Debug, Clone, PartialEq)]
pub struct AxleGrouping {
    pub per_truck: Vec<Vec<usize>>,
    pub orphans: Vec<usize>,
}

/// Assign each axle to the truck whose box contains the axle's center. When
/// several trucks contain it, the one with the highest axle-box IoU wins;
/// exact IoU ties go to the leftmost truck.
pub fn group_axles_by_truck(trucks: &[Detection], axles: &[Detection]) -> AxleGrouping {
    let mut per_truck = vec![Vec::new(); trucks.len()];
    let mut orphans = Vec::new();
    for (ai, axle) in axles.iter().enumerate() {
        let (cx, cy) = axle.bbox.center();
        let mut best: Option<(usize, f64)> = None;
        for (ti, truck) in trucks.iter().enumerate() {
            if !truck.bbox.contains_point(cx, cy) {
                continue;
            }
            let iou = box_iou(&axle.bbox, &truck.bbox);
            let better = match best {
                None => true,
                Some((bi, b)) => {
                    iou > b || (iou == b && truck.bbox.x_min() < trucks[bi].bbox.x_min())
                }
            };
            if better {
                best = Some((ti, iou));
            }
        }
        match best {
            Some((ti, _)) => per_truck[ti].push(ai),
            None => orphans.push(ai),
        }
    }
    AxleGrouping { per_truck, orphans }
}

/// Order one truck's axles outward from the steer axle: the returned indices
/// (into `axles`) list ordinal 1 first. Ordinal 1 is the rightmost axle when
/// the truck fronts right, leftmost when it fronts left.
pub fn order_axles(axles: &[Detection], direction: TravelDirection) -> Vec<usize> {
    let mut order: Vec<usize> = (0..axles.len()).collect();
    order.sort_by(|&a, &b| {
        let (xa, xb) = (axles[a].bbox.center().0, axles[b].bbox.center().0);
        match direction {
            TravelDirection::FrontLeft => xa.total_cmp(&xb),
            TravelDirection::FrontRight => xb.total_cmp(&xa),
        }
    });
    order
}

/// Mask-to-axle association: which mask (if any) marks each axle lifted, and
/// which masks attached to nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftAssociation {
    /// Parallel to the axle slice: index of the mask that won each axle.
    pub winning_mask: Vec<Option<usize>>,
    /// Mask indices that won no axle.
    pub unassociated: Vec<usize>,
}

/// Each mask bids for the single axle box its own box overlaps best, floor
/// applied; each axle accepts its best bidder. Losing bidders stay
/// unassociated — they do not fall back to their second-choice axle.
pub fn mark_lifted_axles(
    axles: &[Detection],
    masks: &[Detection],
    association_iou: f64,
) -> LiftAssociation {
    // winner[axle] = (mask index, IoU of the winning bid)
    let mut winner: Vec<Option<(usize, f64)>> = vec![None; axles.len()];
    let mut mask_target: Vec<Option<usize>> = vec![None; masks.len()];
    for (mi, mask) in masks.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (ai, axle) in axles.iter().enumerate() {
            let iou = box_iou(&mask.bbox, &axle.bbox);
            if iou >= association_iou && best.map_or(true, |(_, b)| iou > b) {
                best = Some((ai, iou));
            }
        }
        if let Some((ai, iou)) = best {
            mask_target[mi] = Some(ai);
            if winner[ai].map_or(true, |(_, b)| iou > b) {
                winner[ai] = Some((mi, iou));
            }
        }
    }
    let winning_mask: Vec<Option<usize>> = winner.iter().map(|w| w.map(|(mi, _)| mi)).collect();
    let unassociated = (0..masks.len())
        .filter(|&mi| match mask_target[mi] {
            None => true,
            Some(ai) => winning_mask[ai] != Some(mi),
        })
        .collect();
    LiftAssociation {
        winning_mask,
        unassociated,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruckStage {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub conf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxleRecord {
    /// 1 = steer axle, counting toward the rear.
    pub ordinal: u32,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub conf: f64,
    pub lifted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lift_conf: Option<f64>,
}

/// Everything the pipeline concludes about one truck, plus the image-level
/// leftovers (orphan axles, masks with no axle) every record repeats so a
/// record stands on its own once serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruckRecord {
    pub truck: TruckStage,
    pub axles: Vec<AxleRecord>,
    pub orphans: usize,
    pub unassociated_lifted: usize,
    pub direction: TravelDirection,
}

impl TruckRecord {
    pub fn axle_count(&self) -> usize {
        self.axles.len()
    }

    pub fn lifted_ordinals(&self) -> Vec<u32> {
        self.axles
            .iter()
            .filter(|a| a.lifted)
            .map(|a| a.ordinal)
            .collect()
    }
}

/// [`run_cascade`] output: the per-truck records plus the detections that
/// fell through the stages.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutput {
    pub records: Vec<TruckRecord>,
    pub orphan_axles: Vec<Detection>,
    pub unassociated_masks: Vec<Detection>,
}

/// Compose the stages over one image's detections: confidence-filter each
/// stage, group axles under trucks, order each group from the steer axle,
/// and attach lifted-axle masks. Masks are matched against every axle in the
/// image; a mask whose best axle is an orphan counts as unassociated since
/// no record can carry it.
pub fn run_cascade(
    trucks: &[Detection],
    axles: &[Detection],
    masks: &[Detection],
    config: &CascadeConfig,
) -> Result<CascadeOutput, CascadeError> {
    config.validate()?;
    let mut image_id: Option<&str> = None;
    for d in trucks.iter().chain(axles).chain(masks) {
        match image_id {
            None => image_id = Some(&d.image_id),
            Some(seen) if seen != d.image_id => {
                return Err(CascadeError::MixedImages {
                    a: seen.to_string(),
                    b: d.image_id.clone(),
                })
            }
            Some(_) => {}
        }
    }

    let trucks: Vec<&Detection> = trucks
        .iter()
        .filter(|d| d.confidence >= config.truck_confidence)
        .collect();
    let axles: Vec<Detection> = axles
        .iter()
        .filter(|d| d.confidence >= config.axle_confidence)
        .cloned()
        .collect();
    let masks: Vec<Detection> = masks
        .iter()
        .filter(|d| d.confidence >= config.lifted_confidence)
        .cloned()
        .collect();

    let owned_trucks: Vec<Detection> = trucks.iter().map(|&d| d.clone()).collect();
    let grouping = group_axles_by_truck(&owned_trucks, &axles);
    let association = mark_lifted_axles(&axles, &masks, config.association_iou);

    // A mask won by an orphan axle has no record to carry it; it reports as
    // unassociated alongside the masks that won nothing.
    let mut unassociated: Vec<usize> = association.unassociated.clone();
    for &ai in &grouping.orphans {
        if let Some(mi) = association.winning_mask[ai] {
            unassociated.push(mi);
        }
    }
    unassociated.sort_unstable();

    let mut records = Vec::with_capacity(owned_trucks.len());
    for (ti, truck) in owned_trucks.iter().enumerate() {
        let group: Vec<Detection> = grouping.per_truck[ti]
            .iter()
            .map(|&ai| axles[ai].clone())
            .collect();
        let order = order_axles(&group, config.direction);
        let axle_records = order
            .iter()
            .enumerate()
            .map(|(pos, &local)| {
                let global = grouping.per_truck[ti][local];
                let lift_conf =
                    association.winning_mask[global].map(|mi| masks[mi].confidence);
                AxleRecord {
                    ordinal: pos as u32 + 1,
                    bbox: group[local].bbox,
                    conf: group[local].confidence,
                    lifted: lift_conf.is_some(),
                    lift_conf,
                }
            })
            .collect();
        records.push(TruckRecord {
            truck: TruckStage {
                bbox: truck.bbox,
                conf: truck.confidence,
            },
            axles: axle_records,
            orphans: grouping.orphans.len(),
            unassociated_lifted: unassociated.len(),
            direction: config.direction,
        });
    }

    let orphan_axles = grouping.orphans.iter().map(|&ai| axles[ai].clone()).collect();
    let unassociated_masks = unassociated.iter().map(|&mi| masks[mi].clone()).collect();
    Ok(CascadeOutput {
        records,
        orphan_axles,
        unassociated_masks,
    })
}
