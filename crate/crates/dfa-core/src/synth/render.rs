//! Deterministic rasterizer for synthetic garment images.
//!
//! Every landmark index owns a distinct glyph shape so networks can tell
//! landmarks apart by local appearance; all glyphs peak at exactly 1.0 on
//! their center pixel so position is recoverable from intensity. An outline
//! stroke connects the landmarks in template order, giving the image global
//! garment structure. Occluded landmarks are covered by a featureless blob
//! instead of their glyph; truncated ones simply fall outside the frame.

use crate::geometry::Visibility;
use crate::seeds::rng_for;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderStyle {
    /// Base background intensity.
    pub background: f64,
    /// Uniform-noise amplitude added to the background.
    pub noise: f64,
    /// Outline stroke intensity.
    pub stroke_intensity: f64,
    /// Base glyph radius in pixels (before zoom scaling).
    pub glyph_radius: f64,
    /// Intensity of the blob covering occluded landmarks.
    pub occluder_intensity: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            background: 0.08,
            noise: 0.03,
            stroke_intensity: 0.35,
            glyph_radius: 2.6,
            occluder_intensity: 0.55,
        }
    }
}

/// Glyph intensity at offset `(dx, dy)` from the landmark center, in [0, 1].
/// Shape depends on the landmark index; every shape returns 1.0 at the
/// center itself.
fn glyph_value(index: usize, dx: f64, dy: f64, radius: f64) -> f64 {
    let ax = dx.abs();
    let ay = dy.abs();
    if ax.max(ay) > radius + 1.0 {
        return 0.0;
    }
    let r = (dx * dx + dy * dy).sqrt();
    if r <= 0.75 {
        return 1.0;
    }
    let hit = |h: bool| if h { 0.9 } else { 0.0 };
    match index % 8 {
        // Filled disk with radial falloff.
        0 => {
            if r <= radius {
                1.0 - 0.55 * r / radius
            } else {
                0.0
            }
        }
        // Ring: bright band near the rim.
        1 => hit((r - radius).abs() <= 0.9),
        // Plus: arms along the axes.
        2 => hit((ax <= 0.8 && ay <= radius) || (ay <= 0.8 && ax <= radius)),
        // Diagonal cross.
        3 => hit(((dx - dy).abs() <= 1.1 || (dx + dy).abs() <= 1.1) && r <= radius),
        // Square outline in the Chebyshev metric, so corners survive.
        4 => hit((ax.max(ay) - 0.8 * radius).abs() <= 0.8),
        // Filled diamond with falloff.
        5 => {
            let m = ax + ay;
            if m <= radius {
                1.0 - 0.55 * m / radius
            } else {
                0.0
            }
        }
        // Horizontal bar.
        6 => hit(ay <= 0.8 && ax <= radius),
        // Vertical bar.
        _ => hit(ax <= 0.8 && ay <= radius),
    }
}

fn stamp_max(image: &mut [f64], side: usize, x: usize, y: usize, value: f64) {
    let p = &mut image[y * side + x];
    if value > *p {
        *p = value;
    }
}

/// Soft dot used for strokes and occluders.
fn stamp_dot(image: &mut [f64], side: usize, cx: f64, cy: f64, radius: f64, intensity: f64) {
    let x0 = (cx - radius).floor().max(0.0) as usize;
    let x1 = (cx + radius).ceil().min(side as f64 - 1.0) as usize;
    let y0 = (cy - radius).floor().max(0.0) as usize;
    let y1 = (cy + radius).ceil().min(side as f64 - 1.0) as usize;
    if cx + radius < 0.0 || cy + radius < 0.0 || cx - radius > side as f64 || cy - radius > side as f64
    {
        return;
    }
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let r = (dx * dx + dy * dy).sqrt();
            if r <= radius {
                let v = intensity * (1.0 - 0.5 * r / radius);
                stamp_max(image, side, x, y, v);
            }
        }
    }
}

fn draw_segment(image: &mut [f64], side: usize, a: [f64; 2], b: [f64; 2], intensity: f64) {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a[0] + t * (b[0] - a[0]);
        let y = a[1] + t * (b[1] - a[1]);
        stamp_dot(image, side, x, y, 0.9, intensity);
    }
}

/// Renders one sample. `coords_px` are pixel positions (possibly outside the
/// frame for truncated landmarks); `glyph_scale` enlarges glyphs on zoomed-in
/// samples. Pure: identical arguments produce identical pixels.
pub fn render_image(
    coords_px: &[[f64; 2]],
    visibility: &[Visibility],
    outline: &[usize],
    style: &RenderStyle,
    side: usize,
    glyph_scale: f64,
    noise_seed: u64,
) -> Vec<f64> {
    assert!(side >= 32, "image side must be at least 32 pixels");
    assert_eq!(coords_px.len(), visibility.len());
    let mut image = vec![style.background; side * side];

    // Background noise, deterministic in the seed.
    if style.noise > 0.0 {
        let mut rng = rng_for(noise_seed, "render-noise", 0);
        for p in image.iter_mut() {
            *p += rng.gen_range(-style.noise..=style.noise);
            *p = p.clamp(0.0, 1.0);
        }
    }

    // Outline strokes between consecutive landmarks (closed path), clipped at
    // the frame automatically by the stamping window.
    for w in 0..outline.len() {
        let a = coords_px[outline[w]];
        let b = coords_px[outline[(w + 1) % outline.len()]];
        draw_segment(&mut image, side, a, b, style.stroke_intensity);
    }

    let radius = (style.glyph_radius * glyph_scale).clamp(1.5, side as f64 / 8.0);
    for (i, (c, vis)) in coords_px.iter().zip(visibility).enumerate() {
        match vis {
            Visibility::Truncated => {}
            Visibility::Invisible => {
                stamp_dot(&mut image, side, c[0], c[1], radius + 1.5, style.occluder_intensity);
            }
            Visibility::Visible => {
                let x0 = (c[0] - radius - 1.0).floor().max(0.0) as isize;
                let x1 = (c[0] + radius + 1.0).ceil().min(side as f64 - 1.0) as isize;
                let y0 = (c[1] - radius - 1.0).floor().max(0.0) as isize;
                let y1 = (c[1] + radius + 1.0).ceil().min(side as f64 - 1.0) as isize;
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        if x < 0 || y < 0 {
                            continue;
                        }
                        let v = glyph_value(i, x as f64 - c[0], y as f64 - c[1], radius);
                        if v > 0.0 {
                            stamp_max(&mut image, side, x as usize, y as usize, v);
                        }
                    }
                }
            }
        }
    }
    image
}
