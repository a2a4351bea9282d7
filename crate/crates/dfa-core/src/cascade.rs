//! Three-stage cascaded landmark regression with difficulty-based routing.
//!
//! Stage 1 regresses landmark positions, visibility, and a soft pseudo-label
//! vector from the whole image. Stages 2 and 3 regress corrections to the
//! previous stage's estimate; the final prediction composes additively,
//! `l3 = l2 + c3`. Stage 3 holds two branches: samples are routed to the
//! easy or hard branch by a pseudo-label-weighted average of per-cluster
//! training errors.

use crate::geometry::{GeometryError, LandmarkSet, Visibility};
use crate::network::{Architecture, NetworkError, Prediction, StageNetwork};
use crate::pseudolabel::{
    cluster_error_table, contextual_offset, fit_cluster_model, offset_space, soft_pseudo_label,
    stage1_space, ClusterModel, PseudoLabelError, RoutingTable, SpaceTag,
};
use crate::seeds::rng_for;
use crate::synth::Dataset;
use crate::trainer::{self, TrainError, TrainLogRow, TrainOptions, TrainSample};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Labels(#[from] PseudoLabelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Everything needed to build and train one cascade, independent of the
/// dataset it runs on.
#[derive(Debug, Clone)]
pub struct CascadeSettings {
    /// Conv layer widths shared by every stage network.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub hidden: usize,
    /// Cluster count K used by all three stages.
    pub num_clusters: usize,
    /// Pseudo-label temperature in pixel units. Clustering runs in
    /// normalized coordinates, so the value is divided by the image side
    /// for the configuration and offset spaces, and that quotient is
    /// squared for the contextual space (whose entries are products of two
    /// normalized offsets).
    pub temperature_px: f64,
    /// Routing threshold: score below it goes to the easy branch.
    pub epsilon: f64,
    /// Shared per-stage training options. The visibility/pseudo-label flags
    /// are overridden per stage (stage 1 trains all heads; stages 2 and 3
    /// train positions and pseudo-labels only).
    pub train: TrainOptions,
}

impl CascadeSettings {
    fn architecture(&self, image_side: usize, num_landmarks: usize, aux_len: usize) -> Architecture {
        Architecture {
            image_side,
            conv_channels: self.conv_channels.clone(),
            kernel: self.kernel,
            hidden: self.hidden,
            num_landmarks,
            num_clusters: self.num_clusters,
            aux_len,
        }
    }

    /// Temperature for clustering spaces measured in normalized coordinates.
    pub fn coordinate_temperature(&self, image_side: usize) -> f64 {
        self.temperature_px / image_side as f64
    }

    /// Temperature for the contextual space (squared-coordinate units).
    pub fn contextual_temperature(&self, image_side: usize) -> f64 {
        let t = self.coordinate_temperature(image_side);
        t * t
    }
}

/// How stage-3 branches are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoutingMode {
    /// Route each sample to one branch by its routing score.
    AutoRouted,
    /// Ignore routing; train both branches on all data (differing only by
    /// seed) and average their outputs at inference.
    TwoBranchAverage,
}

impl RoutingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RoutingMode::AutoRouted => "auto-routed",
            RoutingMode::TwoBranchAverage => "two-branch-average",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "auto-routed" => Some(RoutingMode::AutoRouted),
            "two-branch-average" => Some(RoutingMode::TwoBranchAverage),
            _ => None,
        }
    }
}

/// Pseudo-label-weighted mean of per-cluster training errors. Clusters that
/// never received a training sample carry an infinite error sentinel: any
/// positive resemblance to one makes the sample maximally hard, while zero
/// or negative resemblance skips the cluster (avoiding `inf * 0`).
pub fn routing_score(f_hat: &[f64], table: &RoutingTable) -> f64 {
    assert_eq!(
        f_hat.len(),
        table.cluster_errors.len(),
        "pseudo-label length must match the routing table"
    );
    let mut score = 0.0;
    for (&e, &f) in table.cluster_errors.iter().zip(f_hat) {
        if e.is_infinite() {
            if f > 0.0 {
                return f64::INFINITY;
            }
            continue;
        }
        score += e * f;
    }
    score
}

/// Branch selection: 1 (easy) iff the score is strictly below the
/// threshold, else 2 (hard). Equality goes to the hard branch.
pub fn route(score: f64, epsilon: f64) -> usize {
    if score < epsilon {
        1
    } else {
        2
    }
}

/// Splits sample indices into (easy, hard) by routing score.
pub fn partition_by_routing(labels: &[Vec<f64>], table: &RoutingTable) -> (Vec<usize>, Vec<usize>) {
    let mut easy = Vec::new();
    let mut hard = Vec::new();
    for (i, f_hat) in labels.iter().enumerate() {
        match route(routing_score(f_hat, table), table.epsilon) {
            1 => easy.push(i),
            _ => hard.push(i),
        }
    }
    (easy, hard)
}

/// Additive stage composition: the new estimate is the previous estimate
/// plus the predicted correction.
pub fn compose(previous: &[f64], correction: &[f64]) -> Vec<f64> {
    assert_eq!(previous.len(), correction.len());
    previous.iter().zip(correction).map(|(p, c)| p + c).collect()
}

/// Mean normalized error of flat position predictions against a dataset,
/// averaging per-sample means and skipping samples with no measurable
/// landmark. Returns NaN if nothing was measurable.
pub fn mean_prediction_error(positions: &[Vec<f64>], ds: &Dataset) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (flat, sample) in positions.iter().zip(&ds.samples) {
        let pred = LandmarkSet::from_flat(flat, sample.gt.visibility.clone())
            .expect("prediction length matches dataset landmarks");
        if let Some(mean) = crate::geometry::normalized_error(&pred, &sample.gt)
            .expect("matching landmark counts")
            .mean
        {
            sum += mean;
            count += 1;
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Per-coordinate supervision mask and regression target for one sample:
/// the target is `reference - base` (ground truth for stage 1 passes
/// `base = 0`), with truncated landmarks masked out and zeroed.
fn correction_target(gt: &LandmarkSet, base: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
    let flat = gt.flat_coords();
    let n = gt.len();
    let mut target = vec![0.0; 2 * n];
    let mut mask = vec![0.0; 2 * n];
    for i in 0..n {
        if gt.visibility[i] == Visibility::Truncated {
            continue;
        }
        for j in [2 * i, 2 * i + 1] {
            target[j] = flat[j] - base.map_or(0.0, |b| b[j]);
            mask[j] = 1.0;
        }
    }
    (target, mask)
}

fn visibility_classes(gt: &LandmarkSet) -> Vec<u8> {
    gt.visibility.iter().map(|v| *v as u8).collect()
}

/// Forward pass over a whole dataset; results stay in dataset order
/// regardless of worker scheduling.
pub(crate) fn predict_all(
    net: &StageNetwork,
    ds: &Dataset,
    aux: &[Vec<f64>],
) -> Result<Vec<Prediction>, NetworkError> {
    assert_eq!(aux.len(), ds.samples.len());
    let run = |i: usize| net.predict(&ds.samples[i].image, &aux[i]);
    #[cfg(feature = "parallel")]
    {
        (0..ds.samples.len())
            .into_par_iter()
            .map(run)
            .collect::<Result<Vec<_>, _>>()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..ds.samples.len()).map(run).collect()
    }
}

fn no_aux(n: usize) -> Vec<Vec<f64>> {
    vec![Vec::new(); n]
}

/// Trains one whole-image multi-task network. This is both cascade stage 1
/// and the direct-regression baseline: the flags and the optional cluster
/// model select which auxiliary heads receive supervision.
pub(crate) fn train_whole_image_net(
    train: &Dataset,
    val: &Dataset,
    settings: &CascadeSettings,
    seed: u64,
    use_visibility: bool,
    clusters: Option<&ClusterModel>,
) -> Result<(StageNetwork, Vec<TrainLogRow>), CascadeError> {
    if train.samples.is_empty() {
        return Err(CascadeError::EmptyDataset);
    }
    let n = train.num_landmarks();
    let arch = settings.architecture(train.image_side, n, 0);
    let mut net = StageNetwork::init(arch, &mut rng_for(seed, "stage1-init", 0))?;

    let mut samples = Vec::with_capacity(train.samples.len());
    for s in &train.samples {
        let (positions, mask) = correction_target(&s.gt, None);
        let pseudolabels = match clusters {
            Some(model) => soft_pseudo_label(&stage1_space(&s.gt), model)?,
            None => vec![0.0; settings.num_clusters],
        };
        samples.push(TrainSample {
            image: s.image.clone(),
            aux: vec![],
            positions,
            mask,
            visibility: visibility_classes(&s.gt),
            pseudolabels,
        });
    }

    let mut opts = settings.train.clone();
    opts.use_visibility = use_visibility;
    opts.use_pseudolabels = clusters.is_some();
    let empty = no_aux(val.samples.len());
    let validate = |net: &StageNetwork| {
        let preds = predict_all(net, val, &empty).expect("validation forward pass");
        let flats: Vec<Vec<f64>> = preds.into_iter().map(|p| p.positions).collect();
        mean_prediction_error(&flats, val)
    };
    let log = trainer::train(
        &mut net,
        &samples,
        &opts,
        &mut rng_for(seed, "stage1-batches", 0),
        validate,
    )?;
    Ok((net, log))
}

pub struct Stage1Outcome {
    pub net: StageNetwork,
    pub clusters: ClusterModel,
    pub log: Vec<TrainLogRow>,
}

/// Stage 1: whole-image regression of positions, visibility, and
/// pseudo-labels, with the cluster model fitted on ground-truth landmark
/// configurations.
pub fn train_stage1(
    train: &Dataset,
    val: &Dataset,
    settings: &CascadeSettings,
    seed: u64,
) -> Result<Stage1Outcome, CascadeError> {
    if train.samples.is_empty() {
        return Err(CascadeError::EmptyDataset);
    }
    let points: Vec<Vec<f64>> = train.samples.iter().map(|s| stage1_space(&s.gt)).collect();
    let (clusters, _) = fit_cluster_model(
        &points,
        settings.num_clusters,
        settings.coordinate_temperature(train.image_side),
        SpaceTag::Configuration,
        &mut rng_for(seed, "stage1-clusters", 0),
    )?;
    let (net, log) = train_whole_image_net(train, val, settings, seed, true, Some(&clusters))?;
    Ok(Stage1Outcome { net, clusters, log })
}

pub struct Stage2Outcome {
    pub net: StageNetwork,
    pub clusters: ClusterModel,
    pub log: Vec<TrainLogRow>,
    /// Per-cluster mean training error plus the routing threshold.
    pub routing: RoutingTable,
    /// Composed stage-2 estimates on the training set (provided to stage 3).
    pub train_composed: Vec<Vec<f64>>,
    /// Predicted pseudo-label vectors on the training set (routing input).
    pub train_labels: Vec<Vec<f64>>,
}

/// Stage 2: corrections to the stage-1 estimate, with the cluster model
/// fitted on stage-1 offsets and the routing table derived from composed
/// stage-2 training errors.
pub fn train_stage2(
    train: &Dataset,
    val: &Dataset,
    stage1: &StageNetwork,
    settings: &CascadeSettings,
    seed: u64,
) -> Result<Stage2Outcome, CascadeError> {
    if train.samples.is_empty() {
        return Err(CascadeError::EmptyDataset);
    }
    let n = train.num_landmarks();

    let stage1_train: Vec<Vec<f64>> = predict_all(stage1, train, &no_aux(train.samples.len()))?
        .into_iter()
        .map(|p| p.positions)
        .collect();
    let stage1_val: Vec<Vec<f64>> = predict_all(stage1, val, &no_aux(val.samples.len()))?
        .into_iter()
        .map(|p| p.positions)
        .collect();

    // Offsets previous-estimate-minus-truth define the clustering space.
    let mut offsets = Vec::with_capacity(train.samples.len());
    for (pred, s) in stage1_train.iter().zip(&train.samples) {
        offsets.push(offset_space(pred, &s.gt)?);
    }
    let (clusters, fit) = fit_cluster_model(
        &offsets,
        settings.num_clusters,
        settings.coordinate_temperature(train.image_side),
        SpaceTag::Offset,
        &mut rng_for(seed, "stage2-clusters", 0),
    )?;

    let mut samples = Vec::with_capacity(train.samples.len());
    for (pred, s) in stage1_train.iter().zip(&train.samples) {
        let (positions, mask) = correction_target(&s.gt, Some(pred));
        let delta = offset_space(pred, &s.gt)?;
        samples.push(TrainSample {
            image: s.image.clone(),
            aux: pred.clone(),
            positions,
            mask,
            visibility: visibility_classes(&s.gt),
            pseudolabels: soft_pseudo_label(&delta, &clusters)?,
        });
    }

    let arch = settings.architecture(train.image_side, n, 2 * n);
    let mut net = StageNetwork::init(arch, &mut rng_for(seed, "stage2-init", 0))?;
    let mut opts = settings.train.clone();
    opts.use_visibility = false;
    opts.use_pseudolabels = true;
    let validate = |net: &StageNetwork| {
        let preds = predict_all(net, val, &stage1_val).expect("validation forward pass");
        let composed: Vec<Vec<f64>> = preds
            .iter()
            .zip(&stage1_val)
            .map(|(p, prev)| compose(prev, &p.positions))
            .collect();
        mean_prediction_error(&composed, val)
    };
    let log = trainer::train(
        &mut net,
        &samples,
        &opts,
        &mut rng_for(seed, "stage2-batches", 0),
        validate,
    )?;

    // Composed training predictions feed both the routing table (per-cluster
    // mean error) and stage-3 target construction.
    let outputs = predict_all(&net, train, &stage1_train)?;
    let mut train_composed = Vec::with_capacity(outputs.len());
    let mut train_labels = Vec::with_capacity(outputs.len());
    for (out, prev) in outputs.into_iter().zip(&stage1_train) {
        train_composed.push(compose(prev, &out.positions));
        train_labels.push(out.pseudolabels);
    }
    let mut assignments = Vec::new();
    let mut errors = Vec::new();
    for (i, (flat, s)) in train_composed.iter().zip(&train.samples).enumerate() {
        let pred = LandmarkSet::from_flat(flat, s.gt.visibility.clone())?;
        if let Some(mean) = crate::geometry::normalized_error(&pred, &s.gt)?.mean {
            assignments.push(fit.assignments[i]);
            errors.push(mean);
        }
    }
    let routing = cluster_error_table(&assignments, &errors, settings.num_clusters, settings.epsilon)?;

    Ok(Stage2Outcome {
        net,
        clusters,
        log,
        routing,
        train_composed,
        train_labels,
    })
}

pub struct Stage3Outcome {
    /// `[easy, hard]` branch networks.
    pub branches: [StageNetwork; 2],
    pub clusters: ClusterModel,
    pub logs: [Vec<TrainLogRow>; 2],
    pub partition_sizes: [usize; 2],
    /// True when a routing partition came up empty and both branches were
    /// trained on all data instead.
    pub fallback: bool,
}

/// Stage 3: two branch networks regressing corrections to the stage-2
/// estimate. Training data is partitioned by routing score unless the mode
/// averages both branches; an empty partition falls back to training both
/// branches on everything.
pub fn train_stage3(
    train: &Dataset,
    val: &Dataset,
    stage1: &StageNetwork,
    stage2: &Stage2Outcome,
    settings: &CascadeSettings,
    seed: u64,
    mode: RoutingMode,
) -> Result<Stage3Outcome, CascadeError> {
    if train.samples.is_empty() {
        return Err(CascadeError::EmptyDataset);
    }
    let n = train.num_landmarks();

    let mut contextual = Vec::with_capacity(train.samples.len());
    for (flat, s) in stage2.train_composed.iter().zip(&train.samples) {
        contextual.push(contextual_offset(&offset_space(flat, &s.gt)?));
    }
    let (clusters, _) = fit_cluster_model(
        &contextual,
        settings.num_clusters,
        settings.contextual_temperature(train.image_side),
        SpaceTag::ContextualOffset,
        &mut rng_for(seed, "stage3-clusters", 0),
    )?;

    let mut samples = Vec::with_capacity(train.samples.len());
    for ((flat, f_hat), (s, ctx)) in stage2
        .train_composed
        .iter()
        .zip(&stage2.train_labels)
        .zip(train.samples.iter().zip(&contextual))
    {
        let (positions, mask) = correction_target(&s.gt, Some(flat));
        let mut aux = flat.clone();
        aux.extend_from_slice(f_hat);
        samples.push(TrainSample {
            image: s.image.clone(),
            aux,
            positions,
            mask,
            visibility: visibility_classes(&s.gt),
            pseudolabels: soft_pseudo_label(ctx, &clusters)?,
        });
    }

    let all: Vec<usize> = (0..samples.len()).collect();
    let (mut partitions, fallback) = match mode {
        RoutingMode::TwoBranchAverage => ([all.clone(), all], false),
        RoutingMode::AutoRouted => {
            let (easy, hard) = partition_by_routing(&stage2.train_labels, &stage2.routing);
            if easy.is_empty() || hard.is_empty() {
                ([all.clone(), all], true)
            } else {
                ([easy, hard], false)
            }
        }
    };

    // Validation composes through the frozen earlier stages once.
    let stage1_val: Vec<Vec<f64>> = predict_all(stage1, val, &no_aux(val.samples.len()))?
        .into_iter()
        .map(|p| p.positions)
        .collect();
    let stage2_val = predict_all(&stage2.net, val, &stage1_val)?;
    let mut val_composed = Vec::with_capacity(val.samples.len());
    let mut val_aux = Vec::with_capacity(val.samples.len());
    for (out, prev) in stage2_val.into_iter().zip(&stage1_val) {
        let composed = compose(prev, &out.positions);
        let mut aux = composed.clone();
        aux.extend_from_slice(&out.pseudolabels);
        val_composed.push(composed);
        val_aux.push(aux);
    }

    let arch = settings.architecture(train.image_side, n, 2 * n + settings.num_clusters);
    let mut branches = Vec::with_capacity(2);
    let mut logs = Vec::with_capacity(2);
    let mut sizes = [0usize; 2];
    for (b, part) in partitions.iter_mut().enumerate() {
        sizes[b] = part.len();
        let subset: Vec<TrainSample> = part.iter().map(|&i| samples[i].clone()).collect();
        let mut net =
            StageNetwork::init(arch.clone(), &mut rng_for(seed, "stage3-init", b as u64))?;
        let mut opts = settings.train.clone();
        opts.use_visibility = false;
        opts.use_pseudolabels = true;
        let validate = |net: &StageNetwork| {
            let preds = predict_all(net, val, &val_aux).expect("validation forward pass");
            let composed: Vec<Vec<f64>> = preds
                .iter()
                .zip(&val_composed)
                .map(|(p, prev)| compose(prev, &p.positions))
                .collect();
            mean_prediction_error(&composed, val)
        };
        let log = trainer::train(
            &mut net,
            &subset,
            &opts,
            &mut rng_for(seed, "stage3-batches", b as u64),
            validate,
        )?;
        branches.push(net);
        logs.push(log);
    }
    let hard = branches.pop().expect("two branches");
    let easy = branches.pop().expect("two branches");
    let log_hard = logs.pop().expect("two logs");
    let log_easy = logs.pop().expect("two logs");

    Ok(Stage3Outcome {
        branches: [easy, hard],
        clusters,
        logs: [log_easy, log_hard],
        partition_sizes: sizes,
        fallback,
    })
}

/// A fully trained cascade.
pub struct CascadeModel {
    pub stage1: StageNetwork,
    pub stage2: StageNetwork,
    /// `[easy, hard]` stage-3 branches.
    pub branches: [StageNetwork; 2],
    /// Cluster models for stages 1, 2, 3 in order.
    pub clusters: [ClusterModel; 3],
    pub routing: RoutingTable,
    pub routing_mode: RoutingMode,
    /// True when the stage-3 routing partition came up empty during
    /// training. Both branches were then trained on all data, so neither is
    /// specialized and prediction averages them instead of routing.
    pub routing_fallback: bool,
}

/// Which stage-3 branch produced the final estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BranchChoice {
    /// Routed to branch 1 (easy) or 2 (hard).
    Routed(usize),
    /// Both branches averaged.
    Averaged,
}

/// One sample's pass through the cascade, with per-stage estimates.
#[derive(Debug, Clone)]
pub struct CascadePrediction {
    pub stage1: Vec<f64>,
    pub stage2: Vec<f64>,
    pub stage3: Vec<f64>,
    /// Per-landmark visibility states from the stage-1 head.
    pub visibility: Vec<u8>,
    /// Stage-2 predicted pseudo-label vector (the routing input).
    pub pseudolabels: Vec<f64>,
    pub routing_score: f64,
    pub branch: BranchChoice,
}

impl CascadePrediction {
    /// Landmark set for the requested stage (1-3), carrying the predicted
    /// visibility states.
    pub fn landmarks(&self, stage: usize) -> LandmarkSet {
        let flat = match stage {
            1 => &self.stage1,
            2 => &self.stage2,
            3 => &self.stage3,
            _ => panic!("stage must be 1, 2, or 3"),
        };
        let visibility = self
            .visibility
            .iter()
            .map(|&v| Visibility::from_u8(v).expect("argmax over three states"))
            .collect();
        LandmarkSet::from_flat(flat, visibility).expect("matching lengths")
    }
}

impl CascadeModel {
    /// Trained networks in the whole cascade: stage 1, stage 2, two
    /// stage-3 branches.
    pub fn network_count(&self) -> usize {
        2 + self.branches.len()
    }

    /// Full inference pass for one image.
    pub fn predict(&self, image: &[f64]) -> Result<CascadePrediction, CascadeError> {
        let p1 = self.stage1.predict(image, &[])?;
        let stage1 = p1.positions;
        let visibility = Prediction {
            positions: vec![],
            visibility_logits: p1.visibility_logits,
            pseudolabels: vec![],
        }
        .visibility_states();

        let p2 = self.stage2.predict(image, &stage1)?;
        let stage2 = compose(&stage1, &p2.positions);
        let f_hat = p2.pseudolabels;
        let score = routing_score(&f_hat, &self.routing);

        let mut aux = stage2.clone();
        aux.extend_from_slice(&f_hat);
        let routed = self.routing_mode == RoutingMode::AutoRouted && !self.routing_fallback;
        let (stage3, branch) = if routed {
            let chosen = route(score, self.routing.epsilon);
            let out = self.branches[chosen - 1].predict(image, &aux)?;
            (compose(&stage2, &out.positions), BranchChoice::Routed(chosen))
        } else {
            let a = self.branches[0].predict(image, &aux)?;
            let b = self.branches[1].predict(image, &aux)?;
            let mean: Vec<f64> = a
                .positions
                .iter()
                .zip(&b.positions)
                .map(|(x, y)| 0.5 * (x + y))
                .collect();
            (compose(&stage2, &mean), BranchChoice::Averaged)
        };

        Ok(CascadePrediction {
            stage1,
            stage2,
            stage3,
            visibility,
            pseudolabels: f_hat,
            routing_score: score,
            branch,
        })
    }
}

/// Batch inference in dataset order.
pub fn predict_dataset(
    model: &CascadeModel,
    ds: &Dataset,
) -> Result<Vec<CascadePrediction>, CascadeError> {
    #[cfg(feature = "parallel")]
    {
        ds.samples
            .par_iter()
            .map(|s| model.predict(&s.image))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ds.samples.iter().map(|s| model.predict(&s.image)).collect()
    }
}

pub struct CascadeOutcome {
    pub model: CascadeModel,
    pub stage1_log: Vec<TrainLogRow>,
    pub stage2_log: Vec<TrainLogRow>,
    pub stage3_logs: [Vec<TrainLogRow>; 2],
    pub partition_sizes: [usize; 2],
    pub fallback: bool,
}

/// Trains all three stages in sequence and assembles the model.
pub fn train_cascade(
    train: &Dataset,
    val: &Dataset,
    settings: &CascadeSettings,
    seed: u64,
    mode: RoutingMode,
) -> Result<CascadeOutcome, CascadeError> {
    let s1 = train_stage1(train, val, settings, seed)?;
    let s2 = train_stage2(train, val, &s1.net, settings, seed)?;
    let s3 = train_stage3(train, val, &s1.net, &s2, settings, seed, mode)?;
    Ok(CascadeOutcome {
        model: CascadeModel {
            stage1: s1.net,
            stage2: s2.net,
            branches: s3.branches,
            clusters: [s1.clusters, s2.clusters, s3.clusters],
            routing: s2.routing,
            routing_mode: mode,
            routing_fallback: s3.fallback,
        },
        stage1_log: s1.log,
        stage2_log: s2.log,
        stage3_logs: s3.logs,
        partition_sizes: s3.partition_sizes,
        fallback: s3.fallback,
    })
}
