//! Metric aggregation and report rendering.
//!
//! Evaluation results are emitted as long-format CSV: one row per
//! (model, subset, landmark) cell, with `subset = "all"` and
//! `landmark = "mean"` aggregate rows. All numbers are written with Rust's
//! shortest-round-trip float formatting, so a rerun with the same inputs
//! produces byte-identical files.

use crate::geometry::{normalized_error, GeometryError, LandmarkSet, Subset};
use crate::pseudolabel::ClusterModel;
use crate::svg::{self, Series};
use crate::synth::templates::LANDMARK_NAMES;
use crate::synth::Dataset;
use crate::trainer::TrainLogRow;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("prediction set `{label}` has {got} rows but the dataset has {want} samples")]
    LengthMismatch {
        label: String,
        got: usize,
        want: usize,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Flat position predictions for every sample of a dataset, under one name
/// (a cascade stage or a baseline model).
#[derive(Debug, Clone)]
pub struct LabeledPredictions {
    pub label: String,
    /// One `(x1, y1, ..., xN, yN)` row per dataset sample, normalized frame.
    pub positions: Vec<Vec<f64>>,
}

/// One cell of the long-format metrics table.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub label: String,
    /// Subset name, or `"all"` for the whole split.
    pub subset: String,
    /// Landmark name, or `"mean"` for the across-landmark average.
    pub landmark: String,
    /// Mean normalized error; `None` when no landmark in the group was
    /// measurable (all truncated).
    pub ne: Option<f64>,
    /// Fraction of measurable landmarks within the detection threshold.
    pub pdl: Option<f64>,
    pub sample_count: usize,
}

/// Per-landmark distances of every sample, `None` where the ground truth is
/// truncated.
fn distance_table(
    preds: &LabeledPredictions,
    ds: &Dataset,
) -> Result<Vec<Vec<Option<f64>>>, ReportError> {
    if preds.positions.len() != ds.len() {
        return Err(ReportError::LengthMismatch {
            label: preds.label.clone(),
            got: preds.positions.len(),
            want: ds.len(),
        });
    }
    let mut table = Vec::with_capacity(ds.len());
    for (flat, sample) in preds.positions.iter().zip(&ds.samples) {
        let pred = LandmarkSet::from_flat(flat, sample.gt.visibility.clone())?;
        table.push(normalized_error(&pred, &sample.gt)?.per_landmark);
    }
    Ok(table)
}

/// Mean of the values present in a column of per-landmark statistics.
fn column_mean(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Per-landmark NE and PDL over a group of sample indices.
fn landmark_stats(
    table: &[Vec<Option<f64>>],
    indices: &[usize],
    num_landmarks: usize,
    threshold: f64,
) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let mut ne = Vec::with_capacity(num_landmarks);
    let mut pdl = Vec::with_capacity(num_landmarks);
    for l in 0..num_landmarks {
        let mut sum = 0.0;
        let mut hit = 0usize;
        let mut count = 0usize;
        for &i in indices {
            if let Some(d) = table[i][l] {
                sum += d;
                count += 1;
                if d <= threshold {
                    hit += 1;
                }
            }
        }
        if count == 0 {
            ne.push(None);
            pdl.push(None);
        } else {
            ne.push(Some(sum / count as f64));
            pdl.push(Some(hit as f64 / count as f64));
        }
    }
    (ne, pdl)
}

/// Builds the metrics table. Per labeled prediction set the rows are: one row
/// per landmark over the whole split, one `mean` row over the whole split,
/// and one `mean` row per difficulty subset (all five subsets appear even
/// when empty). The `mean` NE and PDL are the averages of the per-landmark
/// columns, so they can be recomputed from the other rows.
pub fn metric_rows(
    preds: &[LabeledPredictions],
    ds: &Dataset,
    threshold_px: f64,
) -> Result<Vec<MetricRow>, ReportError> {
    let n = ds.num_landmarks();
    let threshold = threshold_px / ds.image_side as f64;
    let all: Vec<usize> = (0..ds.len()).collect();
    let subsets: Vec<(Subset, Vec<usize>)> = Subset::ALL
        .iter()
        .map(|&sub| {
            let idx = all
                .iter()
                .copied()
                .filter(|&i| ds.samples[i].subset() == sub)
                .collect();
            (sub, idx)
        })
        .collect();

    let mut rows = Vec::new();
    for p in preds {
        let table = distance_table(p, ds)?;
        let (ne, pdl) = landmark_stats(&table, &all, n, threshold);
        for l in 0..n {
            rows.push(MetricRow {
                label: p.label.clone(),
                subset: "all".to_string(),
                landmark: LANDMARK_NAMES[l].to_string(),
                ne: ne[l],
                pdl: pdl[l],
                sample_count: ds.len(),
            });
        }
        rows.push(MetricRow {
            label: p.label.clone(),
            subset: "all".to_string(),
            landmark: "mean".to_string(),
            ne: column_mean(&ne),
            pdl: column_mean(&pdl),
            sample_count: ds.len(),
        });
        for (sub, indices) in &subsets {
            let (ne, pdl) = landmark_stats(&table, indices, n, threshold);
            rows.push(MetricRow {
                label: p.label.clone(),
                subset: sub.as_str().to_string(),
                landmark: "mean".to_string(),
                ne: column_mean(&ne),
                pdl: column_mean(&pdl),
                sample_count: indices.len(),
            });
        }
    }
    Ok(rows)
}

/// Shortest representation that round-trips back to the same f64.
pub fn number(v: f64) -> String {
    format!("{v}")
}

fn optional(v: Option<f64>) -> String {
    v.map(number).unwrap_or_default()
}

/// Renders the metrics table; the PDL column header carries the threshold.
pub fn metrics_csv(rows: &[MetricRow], threshold_px: f64) -> String {
    let mut out = format!(
        "model,subset,landmark,ne,pdl@{}px,sample_count\n",
        number(threshold_px)
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.label,
            r.subset,
            r.landmark,
            optional(r.ne),
            optional(r.pdl),
            r.sample_count
        ));
    }
    out
}

/// Detection-rate curves over a sweep of pixel thresholds.
#[derive(Debug, Clone)]
pub struct PdlCurves {
    pub labels: Vec<String>,
    pub thresholds_px: Vec<f64>,
    /// `values[label][threshold]`.
    pub values: Vec<Vec<f64>>,
}

/// Standard sweep: 0.5 px steps up to 10 px.
pub fn pdl_thresholds() -> Vec<f64> {
    (1..=20).map(|i| i as f64 * 0.5).collect()
}

/// Pooled detection rate (all samples, all measurable landmarks) per labeled
/// prediction set and threshold.
pub fn pdl_curves(
    preds: &[LabeledPredictions],
    ds: &Dataset,
    thresholds_px: &[f64],
) -> Result<PdlCurves, ReportError> {
    let mut labels = Vec::with_capacity(preds.len());
    let mut values = Vec::with_capacity(preds.len());
    for p in preds {
        let table = distance_table(p, ds)?;
        let distances: Vec<f64> = table.iter().flatten().flatten().copied().collect();
        let curve = thresholds_px
            .iter()
            .map(|t| {
                let threshold = t / ds.image_side as f64;
                if distances.is_empty() {
                    0.0
                } else {
                    let hit = distances.iter().filter(|&&d| d <= threshold).count();
                    hit as f64 / distances.len() as f64
                }
            })
            .collect();
        labels.push(p.label.clone());
        values.push(curve);
    }
    Ok(PdlCurves {
        labels,
        thresholds_px: thresholds_px.to_vec(),
        values,
    })
}

pub fn pdl_curves_csv(curves: &PdlCurves) -> String {
    let mut out = String::from("threshold_px");
    for label in &curves.labels {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for (i, t) in curves.thresholds_px.iter().enumerate() {
        out.push_str(&number(*t));
        for v in &curves.values {
            out.push(',');
            out.push_str(&number(v[i]));
        }
        out.push('\n');
    }
    out
}

pub fn pdl_curves_svg(curves: &PdlCurves, title: &str) -> String {
    let series: Vec<Series> = curves
        .labels
        .iter()
        .zip(&curves.values)
        .map(|(label, vals)| Series {
            name: label.clone(),
            points: curves.thresholds_px.iter().copied().zip(vals.iter().copied()).collect(),
        })
        .collect();
    svg::line_plot(title, "detection threshold (px)", "detected fraction", &series)
}

/// Renders a per-stage training log.
pub fn training_log_csv(rows: &[TrainLogRow]) -> String {
    let mut out = String::from(
        "iteration,loss_positions,loss_visibility,loss_pseudolabels,weight_visibility,weight_pseudolabels,validation_ne\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration,
            number(r.loss_positions),
            number(r.loss_visibility),
            number(r.loss_pseudolabels),
            number(r.weight_visibility),
            number(r.weight_pseudolabels),
            number(r.validation_ne)
        ));
    }
    out
}

/// One cluster's population and error summary.
#[derive(Debug, Clone)]
pub struct ClusterRow {
    pub cluster: usize,
    pub population: usize,
    /// Mean NE of the member samples whose error was measurable.
    pub mean_ne: Option<f64>,
    /// Per-cluster error from the routing table, where one exists (stage 2).
    pub routing_error: Option<f64>,
    pub center: Vec<f64>,
}

/// Aggregates hard assignments and per-sample errors into one row per
/// cluster. Empty clusters appear with population 0 and no error.
pub fn cluster_rows(
    assignments: &[usize],
    errors: &[Option<f64>],
    model: &ClusterModel,
) -> Vec<ClusterRow> {
    assert_eq!(assignments.len(), errors.len());
    let k = model.k();
    let mut population = vec![0usize; k];
    let mut sum = vec![0.0f64; k];
    let mut count = vec![0usize; k];
    for (&a, e) in assignments.iter().zip(errors) {
        population[a] += 1;
        if let Some(e) = e {
            sum[a] += e;
            count[a] += 1;
        }
    }
    (0..k)
        .map(|c| ClusterRow {
            cluster: c,
            population: population[c],
            mean_ne: (count[c] > 0).then(|| sum[c] / count[c] as f64),
            routing_error: None,
            center: model.centers[c].clone(),
        })
        .collect()
}

/// Renders cluster rows; centers are semicolon-joined so the file stays a
/// plain five-column CSV.
pub fn cluster_report_csv(rows: &[ClusterRow]) -> String {
    let mut out = String::from("cluster,population,mean_ne,routing_error,center\n");
    for r in rows {
        let center: Vec<String> = r.center.iter().map(|&v| number(v)).collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.cluster,
            r.population,
            optional(r.mean_ne),
            optional(r.routing_error),
            center.join(";")
        ));
    }
    out
}

/// Sample counts per difficulty subset, in canonical subset order.
pub fn subset_histogram(ds: &Dataset) -> [(Subset, usize); 5] {
    let mut out = Subset::ALL.map(|s| (s, 0usize));
    for sample in &ds.samples {
        let sub = sample.subset();
        for entry in &mut out {
            if entry.0 == sub {
                entry.1 += 1;
            }
        }
    }
    out
}
