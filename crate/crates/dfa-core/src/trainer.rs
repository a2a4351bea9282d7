//! Minibatch training loop shared by the cascade stages and the baselines.
//!
//! The loop is deterministic for a fixed seed: batches come from a seeded
//! shuffle, and batch gradients are reduced over a fixed number of
//! contiguous sub-chunks so the summation order never depends on how many
//! worker threads happen to run them.

use crate::autodiff::{Graph, GraphError, NodeId};
use crate::network::{NetworkError, StageNetwork};
use crate::optim::{OptimError, SgdMomentum};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of gradient sub-chunks per batch. Fixed (not thread-count
/// dependent) so results are bitwise reproducible on any machine.
const GRAD_CHUNKS: usize = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("batch size must be at least 1")]
    BadBatchSize,
    #[error("log cadence must be at least 1")]
    BadLogCadence,
    #[error("schedule breakpoints must satisfy 0 < t1 < t2, got t1={t1}, t2={t2}")]
    BadSchedule { t1: usize, t2: usize },
    #[error("loss diverged (non-finite) at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("iteration {iteration}: {source}")]
    Step {
        iteration: usize,
        source: OptimError,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// How the auxiliary-loss weight behaves on the middle segment `[t1, t2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    /// Ramp up from 0 to the base weight across the middle segment.
    AsWritten,
    /// Decay from the base weight down to 0 across the middle segment.
    Decay,
}

impl ScheduleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleMode::AsWritten => "as-written",
            ScheduleMode::Decay => "decay",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "as-written" => Some(ScheduleMode::AsWritten),
            "decay" => Some(ScheduleMode::Decay),
            _ => None,
        }
    }
}

/// Piecewise weight for one auxiliary loss: `base` before `t1`, a linear
/// segment on `[t1, t2)`, and exactly 0 from `t2` on.
pub fn schedule_weight(t: usize, base: f64, t1: usize, t2: usize, mode: ScheduleMode) -> f64 {
    if t < t1 {
        return base;
    }
    if t >= t2 {
        return 0.0;
    }
    let frac = (t - t1) as f64 / (t2 - t1) as f64;
    match mode {
        ScheduleMode::AsWritten => frac * base,
        ScheduleMode::Decay => (1.0 - frac) * base,
    }
}

/// Base weights and shared breakpoints for the visibility and pseudo-label
/// loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSchedule {
    /// Base weight of the visibility loss.
    pub alpha: f64,
    /// Base weight of the pseudo-label loss.
    pub beta: f64,
    pub t1: usize,
    pub t2: usize,
}

impl LossSchedule {
    pub fn new(alpha: f64, beta: f64, t1: usize, t2: usize) -> Result<Self, TrainError> {
        if t1 == 0 || t1 >= t2 {
            return Err(TrainError::BadSchedule { t1, t2 });
        }
        Ok(Self { alpha, beta, t1, t2 })
    }

    /// `(alpha(t), beta(t))` for iteration `t`.
    pub fn weights(&self, t: usize, mode: ScheduleMode) -> (f64, f64) {
        (
            schedule_weight(t, self.alpha, self.t1, self.t2, mode),
            schedule_weight(t, self.beta, self.t1, self.t2, mode),
        )
    }
}

/// Combines loss components with the schedule weights in effect at
/// iteration `t`: `L = L_pos + alpha(t) * L_vis + beta(t) * L_labels`.
pub fn overall_loss(
    positions: f64,
    visibility: f64,
    pseudolabels: f64,
    t: usize,
    schedule: &LossSchedule,
    mode: ScheduleMode,
) -> f64 {
    let (alpha_t, beta_t) = schedule.weights(t, mode);
    positions + alpha_t * visibility + beta_t * pseudolabels
}

/// One supervised sample, fully preprocessed for a stage network.
#[derive(Debug, Clone)]
pub struct TrainSample {
    /// Flattened grayscale image, `side * side` values in [0, 1].
    pub image: Vec<f64>,
    /// Auxiliary input vector (empty for stage 1).
    pub aux: Vec<f64>,
    /// Position regression target, `2N` values.
    pub positions: Vec<f64>,
    /// Per-coordinate supervision mask, `2N` values of 0.0 or 1.0.
    pub mask: Vec<f64>,
    /// Per-landmark visibility class in {0, 1, 2}.
    pub visibility: Vec<u8>,
    /// Soft pseudo-label target, `K` values.
    pub pseudolabels: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub schedule: LossSchedule,
    pub mode: ScheduleMode,
    /// Train the visibility head (its loss enters the total).
    pub use_visibility: bool,
    /// Train the pseudo-label head (its loss enters the total).
    pub use_pseudolabels: bool,
    /// Emit a log row (and run validation) every this many iterations.
    pub log_every: usize,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub loss_positions: f64,
    pub loss_visibility: f64,
    pub loss_pseudolabels: f64,
    /// Visibility weight alpha(t) used at this iteration.
    pub weight_visibility: f64,
    /// Pseudo-label weight beta(t) used at this iteration.
    pub weight_pseudolabels: f64,
    pub validation_ne: f64,
}

/// Mean loss components of one batch.
struct Breakdown {
    positions: f64,
    visibility: f64,
    pseudolabels: f64,
}

struct ChunkOut {
    grads: Vec<Tensor>,
    positions: f64,
    visibility: f64,
    pseudolabels: f64,
}

/// Builds one sample's loss subgraph and returns the total-loss node
/// (scaled by `sample_weight`) plus the raw component values.
fn sample_loss(
    graph: &mut Graph,
    net: &StageNetwork,
    sample: &TrainSample,
    alpha_t: f64,
    beta_t: f64,
    opts: &TrainOptions,
    sample_weight: f64,
) -> Result<(NodeId, f64, f64, f64), TrainError> {
    let heads = net.forward(graph, &sample.image, &sample.aux)?;
    let loss_pos =
        graph.euclidean_masked(heads.positions, &sample.positions, &sample.mask, "positions")?;
    let pos_val = graph.value(loss_pos).item();
    let mut total = loss_pos;
    let mut vis_val = 0.0;
    let mut lab_val = 0.0;
    if opts.use_visibility {
        let loss_vis =
            graph.multinomial_logistic(heads.visibility, 3, &sample.visibility, "visibility")?;
        vis_val = graph.value(loss_vis).item();
        if alpha_t != 0.0 {
            let scaled = graph.scale(loss_vis, alpha_t);
            total = graph.add(total, scaled, "total loss")?;
        }
    }
    if opts.use_pseudolabels {
        let ones = vec![1.0; sample.pseudolabels.len()];
        let loss_lab = graph.euclidean_masked(
            heads.pseudolabels,
            &sample.pseudolabels,
            &ones,
            "pseudo-labels",
        )?;
        lab_val = graph.value(loss_lab).item();
        if beta_t != 0.0 {
            let scaled = graph.scale(loss_lab, beta_t);
            total = graph.add(total, scaled, "total loss")?;
        }
    }
    Ok((graph.scale(total, sample_weight), pos_val, vis_val, lab_val))
}

/// Forward + backward over one contiguous chunk of the batch. Loss nodes of
/// all chunk samples share one graph; a single backward pass accumulates the
/// chunk's gradient contribution (already scaled by 1/batch).
fn process_chunk(
    net: &StageNetwork,
    data: &[TrainSample],
    chunk: &[usize],
    alpha_t: f64,
    beta_t: f64,
    opts: &TrainOptions,
    batch_size: usize,
) -> Result<ChunkOut, TrainError> {
    let mut graph = Graph::new(net.params());
    let mut chunk_total: Option<NodeId> = None;
    let mut positions = 0.0;
    let mut visibility = 0.0;
    let mut pseudolabels = 0.0;
    let weight = 1.0 / batch_size as f64;
    for &index in chunk {
        let (node, p, v, l) =
            sample_loss(&mut graph, net, &data[index], alpha_t, beta_t, opts, weight)?;
        positions += p;
        visibility += v;
        pseudolabels += l;
        chunk_total = Some(match chunk_total {
            None => node,
            Some(acc) => graph.add(acc, node, "chunk loss")?,
        });
    }
    let total = chunk_total.expect("chunks are never empty");
    let mut grads = net.zero_grads();
    graph.backward(total, &mut grads)?;
    Ok(ChunkOut {
        grads,
        positions,
        visibility,
        pseudolabels,
    })
}

/// Mean-batch gradient and loss breakdown for the given sample indices.
fn batch_gradients(
    net: &StageNetwork,
    data: &[TrainSample],
    batch: &[usize],
    alpha_t: f64,
    beta_t: f64,
    opts: &TrainOptions,
) -> Result<(Breakdown, Vec<Tensor>), TrainError> {
    let chunk_len = batch.len().div_ceil(GRAD_CHUNKS);
    let chunks: Vec<&[usize]> = batch.chunks(chunk_len).collect();
    let run = |chunk: &&[usize]| {
        process_chunk(net, data, chunk, alpha_t, beta_t, opts, batch.len())
    };
    #[cfg(feature = "parallel")]
    let outs: Vec<Result<ChunkOut, TrainError>> = chunks.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let outs: Vec<Result<ChunkOut, TrainError>> = chunks.iter().map(run).collect();

    let mut grads: Option<Vec<Tensor>> = None;
    let mut breakdown = Breakdown {
        positions: 0.0,
        visibility: 0.0,
        pseudolabels: 0.0,
    };
    // Chunk results are merged in chunk order, independent of scheduling.
    for out in outs {
        let out = out?;
        breakdown.positions += out.positions;
        breakdown.visibility += out.visibility;
        breakdown.pseudolabels += out.pseudolabels;
        grads = Some(match grads {
            None => out.grads,
            Some(mut acc) => {
                for (a, c) in acc.iter_mut().zip(&out.grads) {
                    for (av, cv) in a.data_mut().iter_mut().zip(c.data()) {
                        *av += cv;
                    }
                }
                acc
            }
        });
    }
    let scale = 1.0 / batch.len() as f64;
    breakdown.positions *= scale;
    breakdown.visibility *= scale;
    breakdown.pseudolabels *= scale;
    Ok((breakdown, grads.expect("batches are never empty")))
}

/// Trains `net` in place. `validate` is called on every log row and should
/// return the current validation metric (mean normalized error); pass a
/// closure returning `f64::NAN` to skip validation.
///
/// Returns one log row per `log_every` iterations plus the final iteration.
pub fn train<V>(
    net: &mut StageNetwork,
    data: &[TrainSample],
    opts: &TrainOptions,
    rng: &mut ChaCha20Rng,
    mut validate: V,
) -> Result<Vec<TrainLogRow>, TrainError>
where
    V: FnMut(&StageNetwork) -> f64,
{
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if opts.batch_size == 0 {
        return Err(TrainError::BadBatchSize);
    }
    if opts.log_every == 0 {
        return Err(TrainError::BadLogCadence);
    }
    LossSchedule::new(
        opts.schedule.alpha,
        opts.schedule.beta,
        opts.schedule.t1,
        opts.schedule.t2,
    )?;

    let mut optimizer = SgdMomentum::new(opts.learning_rate, opts.momentum, net.params());
    let names = net.param_names().to_vec();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut batch = Vec::with_capacity(opts.batch_size);
    let mut log = Vec::new();

    for t in 0..opts.iterations {
        batch.clear();
        while batch.len() < opts.batch_size {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let (alpha_t, beta_t) = opts.schedule.weights(t, opts.mode);
        let (breakdown, grads) = batch_gradients(net, data, &batch, alpha_t, beta_t, opts)?;
        let total = overall_loss(
            breakdown.positions,
            breakdown.visibility,
            breakdown.pseudolabels,
            t,
            &opts.schedule,
            opts.mode,
        );
        if !total.is_finite() {
            return Err(TrainError::Diverged { iteration: t });
        }
        optimizer
            .step(net.params_mut(), &grads, &names)
            .map_err(|source| TrainError::Step {
                iteration: t,
                source,
            })?;
        if t % opts.log_every == 0 || t + 1 == opts.iterations {
            log.push(TrainLogRow {
                iteration: t,
                loss_positions: breakdown.positions,
                loss_visibility: breakdown.visibility,
                loss_pseudolabels: breakdown.pseudolabels,
                weight_visibility: alpha_t,
                weight_pseudolabels: beta_t,
                validation_ne: validate(net),
            });
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use crate::seeds::rng_for;
    use proptest::prelude::*;

    fn tiny_arch() -> Architecture {
        Architecture {
            image_side: 10,
            conv_channels: vec![2],
            kernel: 3,
            hidden: 6,
            num_landmarks: 2,
            num_clusters: 3,
            aux_len: 0,
        }
    }

    fn tiny_samples(n: usize, seed: u64) -> Vec<TrainSample> {
        use rand::Rng;
        let mut rng = rng_for(seed, "trainer-test-data", 0);
        (0..n)
            .map(|_| TrainSample {
                image: (0..100).map(|_| rng.gen::<f64>()).collect(),
                aux: vec![],
                positions: (0..4).map(|_| rng.gen::<f64>() - 0.5).collect(),
                mask: vec![1.0; 4],
                visibility: (0..2).map(|_| rng.gen_range(0..3)).collect(),
                pseudolabels: (0..3).map(|_| rng.gen::<f64>()).collect(),
            })
            .collect()
    }

    fn options(iterations: usize) -> TrainOptions {
        TrainOptions {
            iterations,
            batch_size: 4,
            learning_rate: 0.05,
            momentum: 0.9,
            schedule: LossSchedule::new(1.0, 1.0, 2000, 4000).unwrap(),
            mode: ScheduleMode::AsWritten,
            use_visibility: true,
            use_pseudolabels: true,
            log_every: 10,
        }
    }

    #[test]
    fn schedule_matches_piecewise_definition() {
        // Exact breakpoints of the published piecewise form.
        assert_eq!(schedule_weight(1000, 1.0, 2000, 4000, ScheduleMode::AsWritten), 1.0);
        assert_eq!(schedule_weight(3000, 1.0, 2000, 4000, ScheduleMode::AsWritten), 0.5);
        assert_eq!(schedule_weight(5000, 1.0, 2000, 4000, ScheduleMode::AsWritten), 0.0);
        assert_eq!(schedule_weight(4000, 1.0, 2000, 4000, ScheduleMode::AsWritten), 0.0);
        assert_eq!(schedule_weight(3000, 2.0, 2000, 4000, ScheduleMode::Decay), 1.0);
        assert_eq!(schedule_weight(1999, 0.7, 2000, 4000, ScheduleMode::Decay), 0.7);
    }

    proptest! {
        #[test]
        fn schedule_zero_from_t2_and_bounded(
            t in 0usize..10_000,
            base in 0.0f64..4.0,
            t1 in 1usize..4000,
            span in 1usize..4000,
        ) {
            let t2 = t1 + span;
            for mode in [ScheduleMode::AsWritten, ScheduleMode::Decay] {
                let w = schedule_weight(t, base, t1, t2, mode);
                prop_assert!(w >= 0.0 && w <= base + 1e-12);
                if t >= t2 {
                    prop_assert_eq!(w, 0.0);
                }
                if t < t1 {
                    prop_assert_eq!(w, base);
                }
            }
        }

        #[test]
        fn schedule_modes_are_complementary_on_middle_segment(
            t in 2000usize..4000,
            base in 0.1f64..3.0,
        ) {
            let up = schedule_weight(t, base, 2000, 4000, ScheduleMode::AsWritten);
            let down = schedule_weight(t, base, 2000, 4000, ScheduleMode::Decay);
            prop_assert!((up + down - base).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn overall_loss_matches_hand_sum(
            pos in 0.0f64..5.0,
            vis in 0.0f64..5.0,
            lab in 0.0f64..5.0,
            t in 0usize..6000,
        ) {
            let sched = LossSchedule::new(1.3, 0.7, 2000, 4000).unwrap();
            let got = overall_loss(pos, vis, lab, t, &sched, ScheduleMode::AsWritten);
            let (a, b) = sched.weights(t, ScheduleMode::AsWritten);
            prop_assert_eq!(got, pos + a * vis + b * lab);
            if t >= 4000 {
                prop_assert_eq!(got, pos);
            }
        }
    }

    #[test]
    fn bad_schedule_is_rejected() {
        assert!(LossSchedule::new(1.0, 1.0, 0, 100).is_err());
        assert!(LossSchedule::new(1.0, 1.0, 100, 100).is_err());
        assert!(LossSchedule::new(1.0, 1.0, 200, 100).is_err());
        assert!(LossSchedule::new(1.0, 1.0, 100, 200).is_ok());
    }

    #[test]
    fn loss_decreases_when_overfitting_a_few_samples() {
        let mut rng = rng_for(7, "trainer-test", 0);
        let mut net = StageNetwork::init(tiny_arch(), &mut rng).unwrap();
        let data = tiny_samples(3, 1);
        let mut opts = options(300);
        opts.log_every = 1;
        let log = train(&mut net, &data, &opts, &mut rng, |_| f64::NAN).unwrap();
        let first = log.first().unwrap().loss_positions;
        let last = log.last().unwrap().loss_positions;
        assert!(
            last < first * 0.2,
            "positions loss should collapse: {first} -> {last}"
        );
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let run = || {
            let mut rng = rng_for(11, "trainer-test", 1);
            let mut net = StageNetwork::init(tiny_arch(), &mut rng).unwrap();
            let data = tiny_samples(9, 2);
            let log = train(&mut net, &data, &options(40), &mut rng, |_| 0.0).unwrap();
            let params: Vec<Vec<f64>> =
                net.params().iter().map(|p| p.data().to_vec()).collect();
            (log, params)
        };
        let (log_a, params_a) = run();
        let (log_b, params_b) = run();
        assert_eq!(log_a, log_b);
        assert_eq!(params_a, params_b);
    }

    #[test]
    fn log_rows_record_schedule_weights_in_effect() {
        let mut rng = rng_for(3, "trainer-test", 2);
        let mut net = StageNetwork::init(tiny_arch(), &mut rng).unwrap();
        let data = tiny_samples(4, 3);
        let mut opts = options(30);
        opts.schedule = LossSchedule::new(0.6, 0.4, 10, 20).unwrap();
        opts.log_every = 5;
        let log = train(&mut net, &data, &opts, &mut rng, |_| f64::NAN).unwrap();
        let by_iter = |t: usize| log.iter().find(|r| r.iteration == t).unwrap();
        assert_eq!(by_iter(5).weight_visibility, 0.6);
        assert_eq!(by_iter(15).weight_visibility, 0.3);
        assert_eq!(by_iter(25).weight_visibility, 0.0);
        assert_eq!(by_iter(15).weight_pseudolabels, 0.2);
        assert_eq!(log.last().unwrap().iteration, 29);
    }

    #[test]
    fn disabled_heads_contribute_nothing_to_the_log() {
        let mut rng = rng_for(5, "trainer-test", 3);
        let mut net = StageNetwork::init(tiny_arch(), &mut rng).unwrap();
        let data = tiny_samples(4, 4);
        let mut opts = options(5);
        opts.use_visibility = false;
        opts.use_pseudolabels = false;
        let log = train(&mut net, &data, &opts, &mut rng, |_| f64::NAN).unwrap();
        for row in &log {
            assert_eq!(row.loss_visibility, 0.0);
            assert_eq!(row.loss_pseudolabels, 0.0);
        }
    }

    #[test]
    fn divergence_reports_the_iteration() {
        let mut rng = rng_for(6, "trainer-test", 4);
        let mut net = StageNetwork::init(tiny_arch(), &mut rng).unwrap();
        let data = tiny_samples(4, 5);
        let mut opts = options(500);
        opts.learning_rate = 1e9;
        match train(&mut net, &data, &opts, &mut rng, |_| f64::NAN) {
            Err(TrainError::Diverged { iteration }) => assert!(iteration < 500),
            Err(TrainError::Step { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_and_bad_options_are_rejected() {
        let mut rng = rng_for(8, "trainer-test", 5);
        let mut net = StageNetwork::init(tiny_arch(), &mut rng).unwrap();
        let data = tiny_samples(2, 6);
        assert!(matches!(
            train(&mut net, &[], &options(1), &mut rng, |_| 0.0),
            Err(TrainError::EmptyDataset)
        ));
        let mut opts = options(1);
        opts.batch_size = 0;
        assert!(matches!(
            train(&mut net, &data, &opts, &mut rng, |_| 0.0),
            Err(TrainError::BadBatchSize)
        ));
        let mut opts = options(1);
        opts.log_every = 0;
        assert!(matches!(
            train(&mut net, &data, &opts, &mut rng, |_| 0.0),
            Err(TrainError::BadLogCadence)
        ));
    }
}
