//! Comparison arms for the benchmark tables: direct single-shot regression
//! and a per-landmark patch cascade.
//!
//! The patch cascade refines each landmark independently: after a whole-image
//! first stage, every later stage trains one small network per landmark on a
//! square crop centered at that landmark's current estimate and regresses the
//! remaining correction. With N landmarks that costs 1 + N + N trained
//! networks for three stages, against four for the routed cascade.

use crate::cascade::{
    mean_prediction_error, predict_all, train_whole_image_net, CascadeError, CascadeModel,
    CascadeSettings,
};
use crate::geometry::Visibility;
use crate::network::{Architecture, NetworkError, StageNetwork};
use crate::pseudolabel::{fit_cluster_model, stage1_space, SpaceTag};
use crate::report::{metric_rows, pdl_curves, pdl_thresholds, LabeledPredictions, MetricRow,
    PdlCurves, ReportError};
use crate::seeds::rng_for;
use crate::synth::Dataset;
use crate::trainer::{self, TrainLogRow, TrainSample};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum CompareError {
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

pub struct DirectOutcome {
    pub net: StageNetwork,
    pub log: Vec<TrainLogRow>,
}

/// Trains a single whole-image regressor. The two flags select the auxiliary
/// supervision and reproduce the stage-1 ablation arms: positions only,
/// positions + visibility, and the full multi-task head set.
pub fn train_direct(
    train: &Dataset,
    val: &Dataset,
    settings: &CascadeSettings,
    seed: u64,
    with_visibility: bool,
    with_pseudolabels: bool,
) -> Result<DirectOutcome, CascadeError> {
    if train.samples.is_empty() {
        return Err(CascadeError::EmptyDataset);
    }
    let clusters = if with_pseudolabels {
        let points: Vec<Vec<f64>> = train.samples.iter().map(|s| stage1_space(&s.gt)).collect();
        let (model, _) = fit_cluster_model(
            &points,
            settings.num_clusters,
            settings.coordinate_temperature(train.image_side),
            SpaceTag::Configuration,
            &mut rng_for(seed, "stage1-clusters", 0),
        )?;
        Some(model)
    } else {
        None
    };
    let (net, log) =
        train_whole_image_net(train, val, settings, seed, with_visibility, clusters.as_ref())?;
    Ok(DirectOutcome { net, log })
}

/// Scales the comparator's 120-pixel crop (defined against 224-pixel inputs)
/// to the working resolution, keeping enough room for the conv stack.
pub fn patch_size_for(image_side: usize) -> usize {
    let scaled = (120.0 / 224.0 * image_side as f64).round() as usize;
    scaled.max(8)
}

/// Extracts a `patch` x `patch` crop centered at a normalized coordinate.
/// Out-of-image pixels are zero; returns whether the crop missed the image
/// entirely.
fn crop_patch(image: &[f64], side: usize, center: [f64; 2], patch: usize) -> (Vec<f64>, bool) {
    let s = side as f64;
    // Normalized frame is the full-image box: origin at the center, unit
    // width. The cast saturates, so even wildly divergent estimates stay
    // in-range.
    let cx = (center[0] * s + s / 2.0).round() as isize;
    let cy = (center[1] * s + s / 2.0).round() as isize;
    let half = (patch / 2) as isize;
    let (x0, y0) = (cx - half, cy - half);
    let mut crop = vec![0.0; patch * patch];
    let mut any = false;
    for r in 0..patch as isize {
        let sy = y0 + r;
        if sy < 0 || sy >= side as isize {
            continue;
        }
        for c in 0..patch as isize {
            let sx = x0 + c;
            if sx < 0 || sx >= side as isize {
                continue;
            }
            crop[(r * patch as isize + c) as usize] = image[(sy * side as isize + sx) as usize];
            any = true;
        }
    }
    (crop, !any)
}

/// Per-landmark training samples for one patch net: the crop is centered at
/// the current estimate and the target is the remaining correction for that
/// single landmark. Returns the number of crops that missed the image.
fn patch_samples(
    ds: &Dataset,
    base: &[Vec<f64>],
    landmark: usize,
    patch: usize,
) -> (Vec<TrainSample>, usize) {
    let mut out = Vec::with_capacity(ds.len());
    let mut empty = 0usize;
    for (s, b) in ds.samples.iter().zip(base) {
        let center = [b[2 * landmark], b[2 * landmark + 1]];
        let (crop, missed) = crop_patch(&s.image, ds.image_side, center, patch);
        if missed {
            empty += 1;
        }
        let truncated = s.gt.visibility[landmark] == Visibility::Truncated;
        let (positions, mask) = if truncated {
            (vec![0.0, 0.0], vec![0.0, 0.0])
        } else {
            let flat = s.gt.flat_coords();
            (
                vec![flat[2 * landmark] - center[0], flat[2 * landmark + 1] - center[1]],
                vec![1.0, 1.0],
            )
        };
        out.push(TrainSample {
            image: crop,
            aux: vec![],
            positions,
            mask,
            visibility: vec![0],
            pseudolabels: vec![0.0],
        });
    }
    (out, empty)
}

/// A whole-image first stage plus one patch net per landmark for each of the
/// two refinement stages.
pub struct PatchCascadeModel {
    pub stage1: StageNetwork,
    pub stage2: Vec<StageNetwork>,
    pub stage3: Vec<StageNetwork>,
    /// Side of the square crops, pixels.
    pub patch_size: usize,
}

/// One sample's pass through the patch cascade.
#[derive(Debug, Clone)]
pub struct PatchPrediction {
    pub stage1: Vec<f64>,
    pub stage2: Vec<f64>,
    pub stage3: Vec<f64>,
    /// Crops across both refinement stages that missed the image entirely.
    pub empty_crops: usize,
}

impl PatchCascadeModel {
    pub fn network_count(&self) -> usize {
        1 + self.stage2.len() + self.stage3.len()
    }

    /// Refines `base` with one stage of per-landmark patch nets.
    fn refine(
        &self,
        nets: &[StageNetwork],
        image: &[f64],
        side: usize,
        base: &[f64],
        empty: &mut usize,
    ) -> Result<Vec<f64>, NetworkError> {
        let mut next = base.to_vec();
        for (l, net) in nets.iter().enumerate() {
            let center = [base[2 * l], base[2 * l + 1]];
            let (crop, missed) = crop_patch(image, side, center, self.patch_size);
            if missed {
                *empty += 1;
            }
            let correction = net.predict(&crop, &[])?.positions;
            next[2 * l] = center[0] + correction[0];
            next[2 * l + 1] = center[1] + correction[1];
        }
        Ok(next)
    }

    pub fn predict(&self, image: &[f64]) -> Result<PatchPrediction, NetworkError> {
        let side = self.stage1.arch().image_side;
        let stage1 = self.stage1.predict(image, &[])?.positions;
        let mut empty = 0usize;
        let stage2 = self.refine(&self.stage2, image, side, &stage1, &mut empty)?;
        let stage3 = self.refine(&self.stage3, image, side, &stage2, &mut empty)?;
        Ok(PatchPrediction {
            stage1,
            stage2,
            stage3,
            empty_crops: empty,
        })
    }

    /// Batch inference in dataset order.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<PatchPrediction>, NetworkError> {
        #[cfg(feature = "parallel")]
        {
            ds.samples
                .par_iter()
                .map(|s| self.predict(&s.image))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            ds.samples.iter().map(|s| self.predict(&s.image)).collect()
        }
    }
}

pub struct PatchCascadeOutcome {
    pub model: PatchCascadeModel,
    pub stage1_log: Vec<TrainLogRow>,
    /// Training-set NE after each stage.
    pub stage_errors: [f64; 3],
    /// Training or validation crops that missed the image entirely.
    pub empty_crops: usize,
}

/// Trains one refinement stage: one net per landmark, each on crops around
/// the incoming estimates. Returns the nets and the composed estimates.
#[allow(clippy::too_many_arguments)]
fn train_patch_stage(
    train: &Dataset,
    val: &Dataset,
    base_train: &[Vec<f64>],
    base_val: &[Vec<f64>],
    settings: &CascadeSettings,
    seed: u64,
    stage: usize,
    patch: usize,
) -> Result<(Vec<StageNetwork>, Vec<Vec<f64>>, usize), CascadeError> {
    let n = train.num_landmarks();
    let arch = Architecture {
        image_side: patch,
        conv_channels: settings.conv_channels.clone(),
        kernel: settings.kernel,
        hidden: settings.hidden,
        num_landmarks: 1,
        num_clusters: 1,
        aux_len: 0,
    };
    let mut opts = settings.train.clone();
    opts.use_visibility = false;
    opts.use_pseudolabels = false;

    let mut composed: Vec<Vec<f64>> = base_train.to_vec();
    let mut nets = Vec::with_capacity(n);
    let mut empty = 0usize;
    let init = format!("patch{stage}-init");
    let batches = format!("patch{stage}-batches");
    for l in 0..n {
        let (samples, missed_train) = patch_samples(train, base_train, l, patch);
        let (val_samples, missed_val) = patch_samples(val, base_val, l, patch);
        empty += missed_train + missed_val;

        let mut net = StageNetwork::init(arch.clone(), &mut rng_for(seed, &init, l as u64))?;
        let validate = |net: &StageNetwork| {
            // Mean pixel-frame distance for this landmark over measurable
            // validation samples.
            let mut sum = 0.0;
            let mut count = 0usize;
            for vs in &val_samples {
                if vs.mask[0] == 0.0 {
                    continue;
                }
                let p = net.predict(&vs.image, &[]).expect("validation forward pass");
                let dx = p.positions[0] - vs.positions[0];
                let dy = p.positions[1] - vs.positions[1];
                sum += (dx * dx + dy * dy).sqrt();
                count += 1;
            }
            if count == 0 {
                f64::NAN
            } else {
                sum / count as f64
            }
        };
        trainer::train(
            &mut net,
            &samples,
            &opts,
            &mut rng_for(seed, &batches, l as u64),
            validate,
        )?;

        for (c, s) in composed.iter_mut().zip(&samples) {
            let correction = net.predict(&s.image, &[])?.positions;
            c[2 * l] += correction[0];
            c[2 * l + 1] += correction[1];
        }
        nets.push(net);
    }
    Ok((nets, composed, empty))
}

/// Trains the full patch cascade: a position-only whole-image first stage,
/// then per-landmark patch nets for stages 2 and 3, each stage re-cropping
/// around the previous stage's estimates.
pub fn train_patch_cascade(
    train: &Dataset,
    val: &Dataset,
    settings: &CascadeSettings,
    seed: u64,
) -> Result<PatchCascadeOutcome, CascadeError> {
    if train.samples.is_empty() {
        return Err(CascadeError::EmptyDataset);
    }
    let patch = patch_size_for(train.image_side);
    let (stage1, stage1_log) = train_whole_image_net(train, val, settings, seed, false, None)?;

    let no_aux = vec![Vec::new(); train.len()];
    let base1: Vec<Vec<f64>> = predict_all(&stage1, train, &no_aux)?
        .into_iter()
        .map(|p| p.positions)
        .collect();
    let no_aux_val = vec![Vec::new(); val.len()];
    let base1_val: Vec<Vec<f64>> = predict_all(&stage1, val, &no_aux_val)?
        .into_iter()
        .map(|p| p.positions)
        .collect();

    let (stage2, base2, empty2) =
        train_patch_stage(train, val, &base1, &base1_val, settings, seed, 2, patch)?;
    // Validation estimates for stage 3 come from the trained stage-2 nets.
    let model_after2 = PatchCascadeModel {
        stage1,
        stage2,
        stage3: Vec::new(),
        patch_size: patch,
    };
    let mut base2_val = Vec::with_capacity(val.len());
    for (s, b) in val.samples.iter().zip(&base1_val) {
        let mut ignored = 0usize;
        base2_val.push(model_after2.refine(
            &model_after2.stage2,
            &s.image,
            val.image_side,
            b,
            &mut ignored,
        )?);
    }
    let (stage3, base3, empty3) =
        train_patch_stage(train, val, &base2, &base2_val, settings, seed, 3, patch)?;

    let stage_errors = [
        mean_prediction_error(&base1, train),
        mean_prediction_error(&base2, train),
        mean_prediction_error(&base3, train),
    ];
    Ok(PatchCascadeOutcome {
        model: PatchCascadeModel {
            stage3,
            ..model_after2
        },
        stage1_log,
        stage_errors,
        empty_crops: empty2 + empty3,
    })
}

/// The three benchmark arms, already trained on identical splits.
pub struct TrainedModels<'a> {
    pub cascade: &'a CascadeModel,
    pub direct: &'a StageNetwork,
    pub patch: &'a PatchCascadeModel,
}

pub struct BenchmarkReport {
    /// Long-format NE/PDL table over the final output of each model.
    pub rows: Vec<MetricRow>,
    /// Detection-rate curves over the standard threshold sweep.
    pub curves: PdlCurves,
    /// Trained-network bookkeeping per model.
    pub network_counts: Vec<(String, usize)>,
}

/// Evaluates all three arms on a common test set.
pub fn compare(
    models: &TrainedModels,
    test: &Dataset,
    threshold_px: f64,
) -> Result<BenchmarkReport, CompareError> {
    let cascade_preds = crate::cascade::predict_dataset(models.cascade, test)?;
    let direct_preds = predict_all(models.direct, test, &vec![Vec::new(); test.len()])?;
    let patch_preds = models.patch.predict_dataset(test)?;

    let labeled = vec![
        LabeledPredictions {
            label: "cascade".to_string(),
            positions: cascade_preds.into_iter().map(|p| p.stage3).collect(),
        },
        LabeledPredictions {
            label: "direct".to_string(),
            positions: direct_preds.into_iter().map(|p| p.positions).collect(),
        },
        LabeledPredictions {
            label: "patch-cascade".to_string(),
            positions: patch_preds.into_iter().map(|p| p.stage3).collect(),
        },
    ];
    let rows = metric_rows(&labeled, test, threshold_px)?;
    let curves = pdl_curves(&labeled, test, &pdl_thresholds())?;
    let network_counts = vec![
        ("cascade".to_string(), models.cascade.network_count()),
        ("direct".to_string(), 1),
        ("patch-cascade".to_string(), models.patch.network_count()),
    ];
    Ok(BenchmarkReport {
        rows,
        curves,
        network_counts,
    })
}
