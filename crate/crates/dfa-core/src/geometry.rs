//! Landmark coordinate algebra, evaluation metrics, and difficulty subsets.
//!
//! Coordinates live in two frames: absolute pixels, and the bounding-box
//! frame where `(x, y) = ((x_px - x_c)/b_w, (y_px - y_c)/b_h)`. Everything
//! downstream (training targets, clustering, error metrics) uses the
//! normalized frame; pixels appear only at image I/O boundaries and in the
//! detection-rate threshold.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("bounding box must have positive extents, got {w} x {h}")]
    InvalidBBox { w: f64, h: f64 },
    #[error("landmark count mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// Landmark visibility states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Visibility {
    /// In frame and unoccluded.
    Visible = 0,
    /// In frame but occluded.
    Invisible = 1,
    /// Outside the image; carries no positional supervision.
    Truncated = 2,
}

impl Visibility {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Visible),
            1 => Some(Self::Invisible),
            2 => Some(Self::Truncated),
            _ => None,
        }
    }
}

/// Bounding box in pixel units: center plus extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_c: f64,
    pub y_c: f64,
    pub b_w: f64,
    pub b_h: f64,
}

impl BBox {
    pub fn new(x_c: f64, y_c: f64, b_w: f64, b_h: f64) -> Result<Self, GeometryError> {
        if b_w <= 0.0 || b_h <= 0.0 {
            return Err(GeometryError::InvalidBBox { w: b_w, h: b_h });
        }
        Ok(Self { x_c, y_c, b_w, b_h })
    }

    /// Box covering a full square image of the given side.
    pub fn full_image(side: usize) -> Self {
        let s = side as f64;
        Self {
            x_c: s / 2.0,
            y_c: s / 2.0,
            b_w: s,
            b_h: s,
        }
    }
}

/// A fixed-length set of landmarks in normalized (box-frame) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    /// `(x, y)` pairs in box-frame units.
    pub coords: Vec<[f64; 2]>,
    pub visibility: Vec<Visibility>,
}

impl LandmarkSet {
    pub fn new(coords: Vec<[f64; 2]>, visibility: Vec<Visibility>) -> Result<Self, GeometryError> {
        if coords.len() != visibility.len() {
            return Err(GeometryError::LengthMismatch {
                left: coords.len(),
                right: visibility.len(),
            });
        }
        Ok(Self { coords, visibility })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Coordinates flattened as `(x1, y1, ..., xN, yN)` — the position-head layout.
    pub fn flat_coords(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.coords.len());
        for c in &self.coords {
            out.push(c[0]);
            out.push(c[1]);
        }
        out
    }

    pub fn from_flat(
        flat: &[f64],
        visibility: Vec<Visibility>,
    ) -> Result<Self, GeometryError> {
        if flat.len() != 2 * visibility.len() {
            return Err(GeometryError::LengthMismatch {
                left: flat.len(),
                right: 2 * visibility.len(),
            });
        }
        let coords = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Ok(Self { coords, visibility })
    }

    pub fn truncated_count(&self) -> usize {
        self.visibility
            .iter()
            .filter(|v| **v == Visibility::Truncated)
            .count()
    }
}

/// Pixel coordinates into the box frame.
pub fn normalize_landmarks(
    pixels: &[[f64; 2]],
    b: &BBox,
) -> Result<Vec<[f64; 2]>, GeometryError> {
    if b.b_w <= 0.0 || b.b_h <= 0.0 {
        return Err(GeometryError::InvalidBBox { w: b.b_w, h: b.b_h });
    }
    Ok(pixels
        .iter()
        .map(|p| [(p[0] - b.x_c) / b.b_w, (p[1] - b.y_c) / b.b_h])
        .collect())
}

/// Box-frame coordinates back into pixels; exact inverse of normalization.
pub fn denormalize_landmarks(
    normalized: &[[f64; 2]],
    b: &BBox,
) -> Result<Vec<[f64; 2]>, GeometryError> {
    if b.b_w <= 0.0 || b.b_h <= 0.0 {
        return Err(GeometryError::InvalidBBox { w: b.b_w, h: b.b_h });
    }
    Ok(normalized
        .iter()
        .map(|p| [p[0] * b.b_w + b.x_c, p[1] * b.b_h + b.y_c])
        .collect())
}

/// Per-landmark and mean normalized error of one prediction.
#[derive(Debug, Clone)]
pub struct NormalizedError {
    /// `None` where the ground-truth landmark is truncated (excluded).
    pub per_landmark: Vec<Option<f64>>,
    /// Mean over included landmarks; `None` when every landmark is truncated.
    pub mean: Option<f64>,
}

/// Euclidean distance in the normalized frame between prediction and ground
/// truth, excluding landmarks whose ground truth is truncated. Occluded
/// (invisible) landmarks still count: they carry valid positions.
pub fn normalized_error(
    pred: &LandmarkSet,
    gt: &LandmarkSet,
) -> Result<NormalizedError, GeometryError> {
    if pred.len() != gt.len() {
        return Err(GeometryError::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    let mut per_landmark = Vec::with_capacity(gt.len());
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..gt.len() {
        if gt.visibility[i] == Visibility::Truncated {
            per_landmark.push(None);
            continue;
        }
        let dx = pred.coords[i][0] - gt.coords[i][0];
        let dy = pred.coords[i][1] - gt.coords[i][1];
        let d = (dx * dx + dy * dy).sqrt();
        per_landmark.push(Some(d));
        sum += d;
        count += 1;
    }
    Ok(NormalizedError {
        per_landmark,
        mean: (count > 0).then(|| sum / count as f64),
    })
}

/// Percentage of detected landmarks: the fraction of non-truncated landmarks
/// whose pixel-space distance is within `threshold_px` (inclusive). Pixel
/// distance is the normalized distance scaled by the image side, matching
/// full-image bounding boxes.
pub fn pdl(
    preds: &[LandmarkSet],
    gts: &[LandmarkSet],
    threshold_px: f64,
    image_side: usize,
) -> Result<f64, GeometryError> {
    if preds.len() != gts.len() {
        return Err(GeometryError::LengthMismatch {
            left: preds.len(),
            right: gts.len(),
        });
    }
    assert!(threshold_px > 0.0, "detection threshold must be positive");
    let mut detected = 0usize;
    let mut total = 0usize;
    for (pred, gt) in preds.iter().zip(gts) {
        let ne = normalized_error(pred, gt)?;
        for d in ne.per_landmark.iter().flatten() {
            total += 1;
            if d * image_side as f64 <= threshold_px {
                detected += 1;
            }
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        detected as f64 / total as f64
    })
}

/// Generator pose classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseClass {
    Front,
    Side,
    Back,
}

impl PoseClass {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Front => "front",
            Self::Side => "side",
            Self::Back => "back",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "front" => Some(Self::Front),
            "side" => Some(Self::Side),
            "back" => Some(Self::Back),
            _ => None,
        }
    }
}

/// Difficulty subsets. Zoom classes take precedence over pose classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subset {
    NormalPose,
    MediumPose,
    LargePose,
    MediumZoom,
    LargeZoom,
}

impl Subset {
    pub const ALL: [Subset; 5] = [
        Subset::NormalPose,
        Subset::MediumPose,
        Subset::LargePose,
        Subset::MediumZoom,
        Subset::LargeZoom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NormalPose => "normal-pose",
            Self::MediumPose => "medium-pose",
            Self::LargePose => "large-pose",
            Self::MediumZoom => "medium-zoom",
            Self::LargeZoom => "large-zoom",
        }
    }
}

/// Assigns a sample to exactly one difficulty subset: more than three
/// truncated landmarks is large zoom-in, more than one is medium zoom-in,
/// otherwise the pose class decides.
pub fn classify_subset(pose: PoseClass, gt: &LandmarkSet) -> Subset {
    let truncated = gt.truncated_count();
    if truncated > 3 {
        Subset::LargeZoom
    } else if truncated > 1 {
        Subset::MediumZoom
    } else {
        match pose {
            PoseClass::Front => Subset::NormalPose,
            PoseClass::Side => Subset::MediumPose,
            PoseClass::Back => Subset::LargePose,
        }
    }
}
