//! Synthetic garment-landmark dataset generator.
//!
//! Each sample starts from a garment template, passes through a pose
//! transform (front: jitter; side: horizontal compression plus shear; back:
//! mirror), a low-frequency smooth warp, and a zoom about an interior point.
//! Difficulty is controlled exactly: the zoom factor is chosen between the
//! per-landmark frame-exit scales so that precisely the intended number of
//! landmarks leaves the frame, which pins each sample's difficulty subset at
//! construction time instead of by rejection sampling.
//!
//! Coordinates are normalized to the box frame (the bounding box is always
//! the full image square); pixel coordinates appear only in rendering and in
//! the annotation files.

pub mod io;
pub mod render;
pub mod templates;

use crate::geometry::{classify_subset, BBox, LandmarkSet, PoseClass, Subset, Visibility};
use crate::seeds::rng_for;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use render::RenderStyle;
use templates::{builtin_templates, GarmentTemplate, NUM_LANDMARKS};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad generator config: {0}")]
    BadConfig(String),
    #[error("sample {index}: could not realize {wanted} truncated landmarks")]
    Unrealizable { index: usize, wanted: usize },
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions(Vec<f64>),
    #[error("split produced an empty part (sizes {0:?})")]
    EmptySplit(Vec<usize>),
}

/// Target difficulty mix, one weight per subset in [`Subset::ALL`] order.
pub type SubsetMix = [f64; 5];

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub count: usize,
    pub image_side: usize,
    /// Probability that an in-frame landmark is marked occluded.
    pub invisible_rate: f64,
    /// Sampling weights for normal/medium/large pose, medium/large zoom.
    pub subset_mix: SubsetMix,
    /// Peak displacement of the smooth warp, in unit-square units.
    pub warp_amplitude: f64,
    /// Inclusive truncation-count range for medium zoom-in samples.
    pub medium_zoom_truncated: (usize, usize),
    /// Inclusive truncation-count range for large zoom-in samples.
    pub large_zoom_truncated: (usize, usize),
    pub style: RenderStyle,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            count: 100,
            image_side: 64,
            invisible_rate: 0.05,
            subset_mix: [0.30, 0.15, 0.15, 0.20, 0.20],
            warp_amplitude: 0.035,
            medium_zoom_truncated: (2, 3),
            large_zoom_truncated: (4, 6),
            style: RenderStyle::default(),
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if self.count == 0 {
            return Err(SynthError::BadConfig("count must be at least 1".into()));
        }
        if self.image_side < 32 {
            return Err(SynthError::BadConfig(format!(
                "image side {} below minimum 32",
                self.image_side
            )));
        }
        if !(0.0..=1.0).contains(&self.invisible_rate) {
            return Err(SynthError::BadConfig(format!(
                "invisible rate {} outside [0, 1]",
                self.invisible_rate
            )));
        }
        if self.subset_mix.iter().any(|&w| w < 0.0) || self.subset_mix.iter().sum::<f64>() <= 0.0 {
            return Err(SynthError::BadConfig(
                "subset mix needs nonnegative weights with positive sum".into(),
            ));
        }
        let (m_lo, m_hi) = self.medium_zoom_truncated;
        let (l_lo, l_hi) = self.large_zoom_truncated;
        if !(2..=3).contains(&m_lo) || !(2..=3).contains(&m_hi) || m_lo > m_hi {
            return Err(SynthError::BadConfig(format!(
                "medium zoom truncation range {m_lo}..={m_hi} must lie in 2..=3"
            )));
        }
        if l_lo < 4 || l_hi >= NUM_LANDMARKS || l_lo > l_hi {
            return Err(SynthError::BadConfig(format!(
                "large zoom truncation range {l_lo}..={l_hi} must lie in 4..={}",
                NUM_LANDMARKS - 1
            )));
        }
        Ok(())
    }
}

/// Generator provenance for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub id: usize,
    pub template: String,
    pub pose: PoseClass,
    pub zoom: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// Row-major grayscale pixels in [0, 1].
    pub image: Vec<f64>,
    /// Ground truth in normalized box-frame coordinates.
    pub gt: LandmarkSet,
    pub bbox: BBox,
    pub meta: SampleMeta,
}

impl SyntheticSample {
    pub fn subset(&self) -> Subset {
        classify_subset(self.meta.pose, &self.gt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SyntheticSample>,
    pub image_side: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_landmarks(&self) -> usize {
        NUM_LANDMARKS
    }
}

fn pose_transform(
    layout: &[[f64; 2]; NUM_LANDMARKS],
    pose: PoseClass,
    rng: &mut ChaCha20Rng,
) -> Vec<[f64; 2]> {
    let jitter = |amount: f64, rng: &mut ChaCha20Rng| rng.gen_range(-amount..=amount);
    match pose {
        PoseClass::Front => layout
            .iter()
            .map(|p| [p[0] + jitter(0.02, rng), p[1] + jitter(0.02, rng)])
            .collect(),
        PoseClass::Side => {
            let compress = rng.gen_range(0.55..0.75);
            let shear_sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let shear = shear_sign * rng.gen_range(0.15..0.30);
            layout
                .iter()
                .map(|p| {
                    [
                        0.5 + (p[0] - 0.5) * compress + shear * (p[1] - 0.5)
                            + jitter(0.015, rng),
                        p[1] + jitter(0.015, rng),
                    ]
                })
                .collect()
        }
        PoseClass::Back => {
            let compress = rng.gen_range(0.85..0.95);
            layout
                .iter()
                .map(|p| {
                    [
                        0.5 + (0.5 - p[0]) * compress + jitter(0.03, rng),
                        p[1] + jitter(0.03, rng),
                    ]
                })
                .collect()
        }
    }
}

/// Low-frequency sinusoidal displacement field applied to the anchor points.
fn smooth_warp(points: &mut [[f64; 2]], amplitude: f64, rng: &mut ChaCha20Rng) {
    if amplitude <= 0.0 {
        return;
    }
    let a = amplitude * rng.gen_range(0.3..=1.0);
    let (fx1, fy1) = (rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5));
    let (fx2, fy2) = (rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5));
    let p1 = rng.gen_range(0.0..std::f64::consts::TAU);
    let p2 = rng.gen_range(0.0..std::f64::consts::TAU);
    for p in points.iter_mut() {
        let dx = a * (std::f64::consts::TAU * (fx1 * p[0] + fy1 * p[1]) + p1).sin();
        let dy = a * (std::f64::consts::TAU * (fx2 * p[0] + fy2 * p[1]) + p2).cos();
        p[0] += dx;
        p[1] += dy;
    }
}

/// Zoom factor at which `p`, scaled about `c`, reaches the unit-square
/// boundary. Infinite when `p` sits exactly on `c` along both axes.
fn exit_scale(p: [f64; 2], c: [f64; 2]) -> f64 {
    let mut z = f64::INFINITY;
    for axis in 0..2 {
        let d = p[axis] - c[axis];
        if d > 0.0 {
            z = z.min((1.0 - c[axis]) / d);
        } else if d < 0.0 {
            z = z.min(c[axis] / -d);
        }
    }
    z
}

fn apply_zoom(points: &[[f64; 2]], c: [f64; 2], z: f64) -> Vec<[f64; 2]> {
    points
        .iter()
        .map(|p| [c[0] + z * (p[0] - c[0]), c[1] + z * (p[1] - c[1])])
        .collect()
}

fn in_frame(p: [f64; 2]) -> bool {
    (0.0..1.0).contains(&p[0]) && (0.0..1.0).contains(&p[1])
}

fn count_truncated(points: &[[f64; 2]]) -> usize {
    points.iter().filter(|p| !in_frame(**p)).count()
}

/// Picks a zoom factor placing exactly `target` (or, failing ties, another
/// count within `range`) landmarks outside the frame.
fn zoom_for_truncation(
    points: &[[f64; 2]],
    c: [f64; 2],
    target: usize,
    range: (usize, usize),
) -> Option<(f64, Vec<[f64; 2]>)> {
    let mut scales: Vec<f64> = points.iter().map(|p| exit_scale(*p, c)).collect();
    scales.sort_by(f64::total_cmp);
    let mut candidates = vec![target];
    for m in range.0..=range.1 {
        if m != target {
            candidates.push(m);
        }
    }
    for m in candidates {
        debug_assert!(m >= 1 && m < points.len());
        let lo = scales[m - 1];
        let hi = scales[m];
        if !(lo.is_finite() && hi.is_finite()) || hi - lo < 1e-9 {
            continue;
        }
        // Biased toward the lower exit scale so zooms stay moderate even
        // when the next landmark would only leave at a much larger factor.
        let z = lo + 0.3 * (hi - lo);
        let zoomed = apply_zoom(points, c, z);
        let got = count_truncated(&zoomed);
        if (range.0..=range.1).contains(&got) {
            return Some((z, zoomed));
        }
    }
    None
}

/// Zoom factor keeping every landmark in frame (pose subsets).
fn zoom_keeping_all(points: &[[f64; 2]], c: [f64; 2], rng: &mut ChaCha20Rng) -> (f64, Vec<[f64; 2]>) {
    let min_exit = points
        .iter()
        .map(|p| exit_scale(*p, c))
        .fold(f64::INFINITY, f64::min);
    let drawn: f64 = rng.gen_range(0.95..1.15);
    let z = if min_exit.is_finite() {
        drawn.min(0.92 * min_exit)
    } else {
        drawn
    };
    let zoomed = apply_zoom(points, c, z);
    (z, zoomed)
}

fn draw_subset(mix: &SubsetMix, rng: &mut ChaCha20Rng) -> Subset {
    let total: f64 = mix.iter().sum();
    let mut target = rng.gen_range(0.0..total);
    for (i, &w) in mix.iter().enumerate() {
        if target < w {
            return Subset::ALL[i];
        }
        target -= w;
    }
    *Subset::ALL.last().expect("non-empty")
}

fn generate_sample(
    config: &GeneratorConfig,
    templates: &[GarmentTemplate],
    seed: u64,
    index: usize,
) -> Result<SyntheticSample, SynthError> {
    let mut rng = rng_for(seed, "synth-sample", index as u64);
    let intended = draw_subset(&config.subset_mix, &mut rng);
    let template = &templates[rng.gen_range(0..templates.len())];
    let pose = match intended {
        Subset::NormalPose => PoseClass::Front,
        Subset::MediumPose => PoseClass::Side,
        Subset::LargePose => PoseClass::Back,
        Subset::MediumZoom | Subset::LargeZoom => {
            [PoseClass::Front, PoseClass::Side, PoseClass::Back][rng.gen_range(0..3)]
        }
    };

    // A handful of warp redraws absorbs the measure-zero tie cases where no
    // zoom factor realizes the wanted truncation count.
    for _attempt in 0..16 {
        let mut points = pose_transform(&template.layout, pose, &mut rng);
        smooth_warp(&mut points, config.warp_amplitude, &mut rng);
        let c = [rng.gen_range(0.40..0.60), rng.gen_range(0.40..0.60)];
        let zoomed = match intended {
            Subset::MediumZoom => {
                let (lo, hi) = config.medium_zoom_truncated;
                zoom_for_truncation(&points, c, rng.gen_range(lo..=hi), (lo, hi))
            }
            Subset::LargeZoom => {
                let (lo, hi) = config.large_zoom_truncated;
                zoom_for_truncation(&points, c, rng.gen_range(lo..=hi), (lo, hi))
            }
            _ => Some(zoom_keeping_all(&points, c, &mut rng)),
        };
        let Some((zoom, unit_coords)) = zoomed else {
            continue;
        };

        let side = config.image_side as f64;
        let mut visibility = Vec::with_capacity(unit_coords.len());
        for p in &unit_coords {
            if !in_frame(*p) {
                visibility.push(Visibility::Truncated);
            } else if rng.gen_bool(config.invisible_rate) {
                visibility.push(Visibility::Invisible);
            } else {
                visibility.push(Visibility::Visible);
            }
        }
        let pixel_coords: Vec<[f64; 2]> =
            unit_coords.iter().map(|p| [p[0] * side, p[1] * side]).collect();
        let normalized: Vec<[f64; 2]> =
            unit_coords.iter().map(|p| [p[0] - 0.5, p[1] - 0.5]).collect();
        let gt = LandmarkSet::new(normalized, visibility.clone()).expect("lengths match");

        debug_assert_eq!(classify_subset(pose, &gt), intended);

        let noise_seed = rng.gen::<u64>();
        let mut image = render::render_image(
            &pixel_coords,
            &visibility,
            template.outline,
            &config.style,
            config.image_side,
            zoom.clamp(0.8, 2.5),
            noise_seed,
        );
        // Snap to the 8-bit grid the image files use, so a saved-and-reloaded
        // dataset is exactly equal to the in-memory one.
        for p in image.iter_mut() {
            *p = (*p * 255.0).round() / 255.0;
        }
        return Ok(SyntheticSample {
            image,
            gt,
            bbox: BBox::full_image(config.image_side),
            meta: SampleMeta {
                id: index,
                template: template.name.to_string(),
                pose,
                zoom,
            },
        });
    }
    Err(SynthError::Unrealizable {
        index,
        wanted: match intended {
            Subset::MediumZoom => config.medium_zoom_truncated.0,
            Subset::LargeZoom => config.large_zoom_truncated.0,
            _ => 0,
        },
    })
}

/// Generates `config.count` samples, each from its own derived RNG stream so
/// the result is independent of evaluation order.
pub fn generate_dataset(config: &GeneratorConfig, seed: u64) -> Result<Dataset, SynthError> {
    config.validate()?;
    let templates = builtin_templates();
    let samples = (0..config.count)
        .map(|i| generate_sample(config, &templates, seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        samples,
        image_side: config.image_side,
    })
}

/// Splits a dataset into disjoint, exhaustive parts with the given
/// fractions. Part `i` receives `floor(fractions[i] * n)` samples except the
/// last, which takes the remainder.
pub fn split(dataset: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>, SynthError> {
    if fractions.iter().any(|&f| f <= 0.0)
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        || fractions.is_empty()
    {
        return Err(SynthError::BadFractions(fractions.to_vec()));
    }
    let n = dataset.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, "dataset-split", 0);
    indices.shuffle(&mut rng);

    let mut sizes: Vec<usize> = fractions.iter().map(|f| (f * n as f64).floor() as usize).collect();
    let assigned: usize = sizes.iter().take(sizes.len() - 1).sum();
    let last = sizes.len() - 1;
    sizes[last] = n - assigned;
    if sizes.iter().any(|&s| s == 0) {
        return Err(SynthError::EmptySplit(sizes));
    }

    let mut parts = Vec::with_capacity(sizes.len());
    let mut cursor = 0;
    for &size in &sizes {
        let mut part: Vec<usize> = indices[cursor..cursor + size].to_vec();
        cursor += size;
        // Stable order within each part keeps files and logs readable.
        part.sort_unstable();
        parts.push(Dataset {
            samples: part.iter().map(|&i| dataset.samples[i].clone()).collect(),
            image_side: dataset.image_side,
        });
    }
    Ok(parts)
}
