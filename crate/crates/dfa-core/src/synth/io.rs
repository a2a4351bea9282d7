//! Dataset persistence: P5 graymap images, one annotations CSV, and a
//! manifest with content hashes.
//!
//! Coordinates are stored in normalized box-frame units and formatted with
//! Rust's shortest-round-trip float notation, so save followed by load
//! reproduces the in-memory dataset exactly (images are already quantized to
//! the 8-bit grid at generation time).

use super::templates::{LANDMARK_NAMES, NUM_LANDMARKS};
use super::{Dataset, SampleMeta, SyntheticSample};
use crate::geometry::{BBox, LandmarkSet, PoseClass, Visibility};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("manifest at {path} is missing key `{key}`")]
    ManifestKey { path: PathBuf, key: String },
    #[error("dataset integrity check failed: {0}")]
    Integrity(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetIoError + '_ {
    move |source| DatasetIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> DatasetIoError {
    DatasetIoError::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const IMAGES_DIR: &str = "images";

fn image_file_name(id: usize) -> String {
    format!("sample_{id:05}.pgm")
}

fn encode_pgm(image: &[f64], side: usize) -> Vec<u8> {
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    out.extend(image.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, Vec<f64>), DatasetIoError> {
    // Header: magic, width, height, maxval as whitespace-separated tokens,
    // then exactly one whitespace byte before the pixel payload.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed(path, 1, "truncated graymap header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| {
            malformed(path, 1, "non-UTF-8 graymap header")
        })?);
    }
    if tokens[0] != "P5" {
        return Err(malformed(path, 1, format!("expected P5 magic, got {}", tokens[0])));
    }
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| malformed(path, 1, "bad width"))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| malformed(path, 1, "bad height"))?;
    if tokens[3] != "255" {
        return Err(malformed(path, 1, "only maxval 255 is supported"));
    }
    if width != height {
        return Err(malformed(path, 1, "images must be square"));
    }
    pos += 1; // single whitespace separator
    let expected = width * height;
    if bytes.len() != pos + expected {
        return Err(malformed(
            path,
            1,
            format!("expected {expected} pixel bytes, got {}", bytes.len().saturating_sub(pos)),
        ));
    }
    let image = bytes[pos..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((width, image))
}

fn sha256_hex(chunks: impl IntoIterator<Item = Vec<u8>>) -> String {
    let mut hasher = Sha256::new();
    for chunk in chunks {
        hasher.update(&chunk);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn annotations_header() -> String {
    let mut cols = vec![
        "sample_id".to_string(),
        "template".to_string(),
        "pose".to_string(),
        "zoom".to_string(),
        "bbox_xc".to_string(),
        "bbox_yc".to_string(),
        "bbox_w".to_string(),
        "bbox_h".to_string(),
    ];
    for name in LANDMARK_NAMES {
        cols.push(format!("{name}-x"));
        cols.push(format!("{name}-y"));
        cols.push(format!("{name}-v"));
    }
    cols.join(",")
}

fn annotation_row(s: &SyntheticSample) -> String {
    let mut cols = vec![
        s.meta.id.to_string(),
        s.meta.template.clone(),
        s.meta.pose.as_str().to_string(),
        format!("{}", s.meta.zoom),
        format!("{}", s.bbox.x_c),
        format!("{}", s.bbox.y_c),
        format!("{}", s.bbox.b_w),
        format!("{}", s.bbox.b_h),
    ];
    for i in 0..s.gt.len() {
        cols.push(format!("{}", s.gt.coords[i][0]));
        cols.push(format!("{}", s.gt.coords[i][1]));
        cols.push((s.gt.visibility[i] as u8).to_string());
    }
    cols.join(",")
}

/// Writes images, annotations, and a manifest into `dir` (created if
/// absent). `manifest_extra` lines are embedded verbatim for provenance
/// (seed, generator config echo).
pub fn save_dataset(
    dataset: &Dataset,
    dir: &Path,
    manifest_extra: &[(String, String)],
) -> Result<(), DatasetIoError> {
    let images_dir = dir.join(IMAGES_DIR);
    fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;

    let mut image_hash_input = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let bytes = encode_pgm(&s.image, dataset.image_side);
        let path = images_dir.join(image_file_name(s.meta.id));
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        image_hash_input.push(bytes);
    }

    let mut annotations = annotations_header();
    annotations.push('\n');
    for s in &dataset.samples {
        annotations.push_str(&annotation_row(s));
        annotations.push('\n');
    }
    let annotations_path = dir.join(ANNOTATIONS_FILE);
    fs::write(&annotations_path, &annotations).map_err(io_err(&annotations_path))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut write_line = |k: &str, v: &str| -> Result<(), DatasetIoError> {
        writeln!(manifest, "{k} = {v}").map_err(io_err(&manifest_path))
    };
    write_line("format_version", "1")?;
    write_line("count", &dataset.len().to_string())?;
    write_line("image_side", &dataset.image_side.to_string())?;
    write_line("num_landmarks", &NUM_LANDMARKS.to_string())?;
    write_line(
        "annotations_sha256",
        &sha256_hex([annotations.into_bytes()]),
    )?;
    write_line("images_sha256", &sha256_hex(image_hash_input))?;
    for (k, v) in manifest_extra {
        write_line(k, v)?;
    }
    Ok(())
}

fn read_manifest(path: &Path) -> Result<Vec<(String, String)>, DatasetIoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(malformed(path, i + 1, "expected `key = value`"));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn manifest_value<'a>(
    manifest: &'a [(String, String)],
    key: &str,
    path: &Path,
) -> Result<&'a str, DatasetIoError> {
    manifest
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| DatasetIoError::ManifestKey {
            path: path.to_path_buf(),
            key: key.to_string(),
        })
}

fn parse_field<T: std::str::FromStr>(
    value: &str,
    what: &str,
    path: &Path,
    line: usize,
) -> Result<T, DatasetIoError> {
    value
        .parse()
        .map_err(|_| malformed(path, line, format!("bad {what}: `{value}`")))
}

/// Loads a dataset directory written by [`save_dataset`], validating the
/// annotation schema, visibility tokens, frame invariants, and content
/// hashes.
pub fn load_dataset(dir: &Path) -> Result<Dataset, DatasetIoError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = read_manifest(&manifest_path)?;
    let count: usize = parse_field(
        manifest_value(&manifest, "count", &manifest_path)?,
        "count",
        &manifest_path,
        0,
    )?;
    let image_side: usize = parse_field(
        manifest_value(&manifest, "image_side", &manifest_path)?,
        "image side",
        &manifest_path,
        0,
    )?;

    let annotations_path = dir.join(ANNOTATIONS_FILE);
    let text = fs::read_to_string(&annotations_path).map_err(io_err(&annotations_path))?;
    let expected_hash = manifest_value(&manifest, "annotations_sha256", &manifest_path)?;
    let actual_hash = sha256_hex([text.clone().into_bytes()]);
    if actual_hash != expected_hash {
        return Err(DatasetIoError::Integrity(format!(
            "annotations hash {actual_hash} does not match manifest {expected_hash}"
        )));
    }

    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(malformed(&annotations_path, 1, "empty annotations file"));
    };
    if header != annotations_header() {
        return Err(malformed(&annotations_path, 1, "unexpected column layout"));
    }

    let images_dir = dir.join(IMAGES_DIR);
    let mut samples = Vec::with_capacity(count);
    for (index, row) in lines {
        let line = index + 1;
        let cols: Vec<&str> = row.split(',').collect();
        let expected_cols = 8 + 3 * NUM_LANDMARKS;
        if cols.len() != expected_cols {
            return Err(malformed(
                &annotations_path,
                line,
                format!("expected {expected_cols} columns, got {}", cols.len()),
            ));
        }
        let id: usize = parse_field(cols[0], "sample id", &annotations_path, line)?;
        let template = cols[1].to_string();
        let pose = PoseClass::parse(cols[2])
            .ok_or_else(|| malformed(&annotations_path, line, format!("bad pose `{}`", cols[2])))?;
        let zoom: f64 = parse_field(cols[3], "zoom", &annotations_path, line)?;
        let bx: f64 = parse_field(cols[4], "bbox", &annotations_path, line)?;
        let by: f64 = parse_field(cols[5], "bbox", &annotations_path, line)?;
        let bw: f64 = parse_field(cols[6], "bbox", &annotations_path, line)?;
        let bh: f64 = parse_field(cols[7], "bbox", &annotations_path, line)?;
        let bbox = BBox::new(bx, by, bw, bh)
            .map_err(|e| malformed(&annotations_path, line, e.to_string()))?;

        let mut coords = Vec::with_capacity(NUM_LANDMARKS);
        let mut visibility = Vec::with_capacity(NUM_LANDMARKS);
        for l in 0..NUM_LANDMARKS {
            let x: f64 = parse_field(cols[8 + 3 * l], "coordinate", &annotations_path, line)?;
            let y: f64 = parse_field(cols[9 + 3 * l], "coordinate", &annotations_path, line)?;
            let v_raw: u8 = parse_field(cols[10 + 3 * l], "visibility", &annotations_path, line)?;
            let v = Visibility::from_u8(v_raw).ok_or_else(|| {
                malformed(
                    &annotations_path,
                    line,
                    format!("visibility token {v_raw} outside {{0, 1, 2}}"),
                )
            })?;
            let inside = (-0.5..0.5).contains(&x) && (-0.5..0.5).contains(&y);
            if v == Visibility::Truncated && inside {
                return Err(malformed(
                    &annotations_path,
                    line,
                    format!("landmark {l} marked truncated but lies in frame"),
                ));
            }
            if v != Visibility::Truncated && !inside {
                return Err(malformed(
                    &annotations_path,
                    line,
                    format!("landmark {l} out of frame but not marked truncated"),
                ));
            }
            coords.push([x, y]);
            visibility.push(v);
        }
        let gt = LandmarkSet::new(coords, visibility).expect("lengths match by construction");

        let image_path = images_dir.join(image_file_name(id));
        let bytes = fs::read(&image_path).map_err(io_err(&image_path))?;
        let (side, image) = decode_pgm(&bytes, &image_path)?;
        if side != image_side {
            return Err(DatasetIoError::Integrity(format!(
                "image {} has side {side}, manifest says {image_side}",
                image_path.display()
            )));
        }
        samples.push(SyntheticSample {
            image,
            gt,
            bbox,
            meta: SampleMeta {
                id,
                template,
                pose,
                zoom,
            },
        });
    }
    if samples.len() != count {
        return Err(DatasetIoError::Integrity(format!(
            "manifest promises {count} samples, annotations hold {}",
            samples.len()
        )));
    }
    Ok(Dataset {
        samples,
        image_side,
    })
}
