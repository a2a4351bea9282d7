//! Canonical garment layouts.
//!
//! Three templates — upper-body, lower-body, full-body — each place the same
//! eight named landmarks inside the unit square. The outline path lists
//! landmark indices in drawing order; rendering connects them with strokes so
//! images carry garment structure beyond the isolated landmark glyphs.

/// Landmark names in annotation order.
pub const LANDMARK_NAMES: [&str; 8] = [
    "l-collar",
    "r-collar",
    "l-sleeve",
    "r-sleeve",
    "l-waistline",
    "r-waistline",
    "l-hem",
    "r-hem",
];

/// Number of landmarks every template defines.
pub const NUM_LANDMARKS: usize = 8;

#[derive(Debug, Clone)]
pub struct GarmentTemplate {
    pub name: &'static str,
    /// Canonical landmark positions in the unit square, annotation order.
    pub layout: [[f64; 2]; NUM_LANDMARKS],
    /// Landmark indices visited by the outline stroke (closed path).
    pub outline: &'static [usize],
}

/// The built-in garment catalogue.
pub fn builtin_templates() -> Vec<GarmentTemplate> {
    vec![
        // Boxy shirt: wide sleeves, waist tucked in, short hem.
        GarmentTemplate {
            name: "upper-body",
            layout: [
                [0.36, 0.16],
                [0.64, 0.16],
                [0.10, 0.46],
                [0.90, 0.46],
                [0.30, 0.68],
                [0.70, 0.68],
                [0.33, 0.88],
                [0.67, 0.88],
            ],
            outline: &[0, 2, 4, 6, 7, 5, 3, 1],
        },
        // Trousers: narrow top, side points at the hip, hems at the cuffs.
        GarmentTemplate {
            name: "lower-body",
            layout: [
                [0.38, 0.10],
                [0.62, 0.10],
                [0.22, 0.34],
                [0.78, 0.34],
                [0.40, 0.56],
                [0.60, 0.56],
                [0.28, 0.90],
                [0.72, 0.90],
            ],
            outline: &[0, 2, 6, 4, 5, 7, 3, 1],
        },
        // Dress: fitted waist, flared hem.
        GarmentTemplate {
            name: "full-body",
            layout: [
                [0.40, 0.08],
                [0.60, 0.08],
                [0.12, 0.34],
                [0.88, 0.34],
                [0.32, 0.56],
                [0.68, 0.56],
                [0.18, 0.92],
                [0.82, 0.92],
            ],
            outline: &[0, 2, 4, 6, 7, 5, 3, 1],
        },
    ]
}

pub fn template_by_name(name: &str) -> Option<GarmentTemplate> {
    builtin_templates().into_iter().find(|t| t.name == name)
}
