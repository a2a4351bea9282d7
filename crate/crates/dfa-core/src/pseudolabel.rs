//! Per-stage clustering spaces and soft pseudo-labels.
//!
//! Each cascade stage clusters its training samples in a stage-specific
//! space — ground-truth landmark configurations for stage 1, prediction
//! offsets for stage 2, and linearized offset outer products for stage 3 —
//! and converts distances to the K cluster centers into a soft label vector
//! `f(k) = exp(-||x - C_k||_2 / T)` that the stage network regresses as an
//! auxiliary target. Stage-2 cluster mean errors later drive branch routing.

use crate::geometry::{LandmarkSet, Visibility};
use crate::kmeans::{self, KmeansError, KmeansFit};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PseudoLabelError {
    #[error("vector dimension {got} does not match cluster dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("cluster model must have at least one center")]
    NoCenters,
    #[error("assignment index {index} out of range for {clusters} clusters")]
    AssignmentOutOfRange { index: usize, clusters: usize },
    #[error("assignments ({assignments}) and errors ({errors}) must align")]
    TableLengthMismatch { assignments: usize, errors: usize },
    #[error(transparent)]
    Kmeans(#[from] KmeansError),
}

/// Which clustering space a model was fitted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceTag {
    /// Flattened ground-truth landmark coordinates (stage 1).
    Configuration,
    /// Prediction-minus-truth offsets (stage 2).
    Offset,
    /// Linearized outer product of offsets (stage 3).
    ContextualOffset,
}

impl SpaceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Configuration => "configuration",
            Self::Offset => "offset",
            Self::ContextualOffset => "contextual-offset",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "configuration" => Some(Self::Configuration),
            "offset" => Some(Self::Offset),
            "contextual-offset" => Some(Self::ContextualOffset),
            _ => None,
        }
    }
}

/// K cluster centers plus the soft-label temperature for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centers: Vec<Vec<f64>>,
    pub temperature: f64,
    pub space: SpaceTag,
}

impl ClusterModel {
    pub fn new(
        centers: Vec<Vec<f64>>,
        temperature: f64,
        space: SpaceTag,
    ) -> Result<Self, PseudoLabelError> {
        if centers.is_empty() {
            return Err(PseudoLabelError::NoCenters);
        }
        if !(temperature > 0.0) {
            return Err(PseudoLabelError::BadTemperature(temperature));
        }
        Ok(Self {
            centers,
            temperature,
            space,
        })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    /// Index of the nearest center (hard assignment); ties go to the lower
    /// index, matching the k-means assignment step.
    pub fn assign(&self, x: &[f64]) -> Result<usize, PseudoLabelError> {
        if x.len() != self.dim() {
            return Err(PseudoLabelError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (k, c) in self.centers.iter().enumerate() {
            let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best_d2 {
                best_d2 = d2;
                best = k;
            }
        }
        Ok(best)
    }
}

/// Fits k-means in the given space and packages the centers with the
/// temperature. Returns the model together with the raw fit (assignments and
/// objective trace) for routing tables and inspection reports.
pub fn fit_cluster_model(
    points: &[Vec<f64>],
    k: usize,
    temperature: f64,
    space: SpaceTag,
    rng: &mut ChaCha20Rng,
) -> Result<(ClusterModel, KmeansFit), PseudoLabelError> {
    let fit = kmeans::kmeans(points, k, rng)?;
    let model = ClusterModel::new(fit.centers.clone(), temperature, space)?;
    Ok((model, fit))
}

/// Soft pseudo-label vector `f(k) = exp(-||x - C_k||_2 / T)`.
///
/// Components are in (0, 1], hitting 1 exactly when `x` coincides with a
/// center. The vector is intentionally not normalized to sum to one: each
/// component is an independent similarity.
pub fn soft_pseudo_label(x: &[f64], model: &ClusterModel) -> Result<Vec<f64>, PseudoLabelError> {
    if x.len() != model.dim() {
        return Err(PseudoLabelError::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    Ok(model
        .centers
        .iter()
        .map(|c| {
            let mut d2 = 0.0;
            for i in 0..x.len() {
                let d = x[i] - c[i];
                d2 += d * d;
            }
            (-d2.sqrt() / model.temperature).exp()
        })
        .collect())
}

/// Stage-1 clustering vector: flattened normalized ground-truth coordinates,
/// with truncated landmarks clamped onto the box boundary so every vector is
/// finite and comparably scaled.
pub fn stage1_space(gt: &LandmarkSet) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * gt.len());
    for i in 0..gt.len() {
        let [x, y] = gt.coords[i];
        if gt.visibility[i] == Visibility::Truncated {
            out.push(x.clamp(-0.5, 0.5));
            out.push(y.clamp(-0.5, 0.5));
        } else {
            out.push(x);
            out.push(y);
        }
    }
    out
}

/// Stage-2/3 clustering vector: elementwise offset `l_hat_prev - l`, with
/// entries of truncated ground-truth landmarks zeroed (no meaningful offset
/// exists for them).
pub fn offset_space(pred_flat: &[f64], gt: &LandmarkSet) -> Result<Vec<f64>, PseudoLabelError> {
    if pred_flat.len() != 2 * gt.len() {
        return Err(PseudoLabelError::DimensionMismatch {
            expected: 2 * gt.len(),
            got: pred_flat.len(),
        });
    }
    let mut out = vec![0.0; pred_flat.len()];
    for i in 0..gt.len() {
        if gt.visibility[i] == Visibility::Truncated {
            continue;
        }
        out[2 * i] = pred_flat[2 * i] - gt.coords[i][0];
        out[2 * i + 1] = pred_flat[2 * i + 1] - gt.coords[i][1];
    }
    Ok(out)
}

/// Stage-3 contextual vector: the outer product `delta (x) delta` linearized
/// by stacking columns, capturing pairwise error correlations. Length is
/// `delta.len()^2`.
pub fn contextual_offset(delta: &[f64]) -> Vec<f64> {
    let n = delta.len();
    let mut out = Vec::with_capacity(n * n);
    for col in 0..n {
        for row in 0..n {
            out.push(delta[row] * delta[col]);
        }
    }
    out
}

/// Per-cluster mean error plus the routing threshold. Clusters that received
/// no training samples carry a `+inf` sentinel: any test sample resembling
/// them has unknown difficulty and is routed to the hard branch.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTable {
    pub cluster_errors: Vec<f64>,
    pub epsilon: f64,
}

/// Averages per-sample errors within each assigned cluster.
pub fn cluster_error_table(
    assignments: &[usize],
    sample_errors: &[f64],
    k: usize,
    epsilon: f64,
) -> Result<RoutingTable, PseudoLabelError> {
    if assignments.len() != sample_errors.len() {
        return Err(PseudoLabelError::TableLengthMismatch {
            assignments: assignments.len(),
            errors: sample_errors.len(),
        });
    }
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&a, &e) in assignments.iter().zip(sample_errors) {
        if a >= k {
            return Err(PseudoLabelError::AssignmentOutOfRange {
                index: a,
                clusters: k,
            });
        }
        sums[a] += e;
        counts[a] += 1;
    }
    let cluster_errors = (0..k)
        .map(|c| {
            if counts[c] == 0 {
                f64::INFINITY
            } else {
                sums[c] / counts[c] as f64
            }
        })
        .collect();
    Ok(RoutingTable {
        cluster_errors,
        epsilon,
    })
}
