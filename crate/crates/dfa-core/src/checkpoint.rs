//! Binary checkpoints and the trained-cascade bundle directory.
//!
//! Every file is little-endian with a magic prefix and a format version, so
//! a stale or foreign file fails loudly instead of deserializing garbage.
//! Bundles carry no timestamps: identical runs produce identical bytes.

use crate::cascade::{CascadeModel, RoutingMode};
use crate::network::{Architecture, NetworkError, StageNetwork};
use crate::pseudolabel::{ClusterModel, PseudoLabelError, RoutingTable, SpaceTag};
use crate::tensor::Tensor;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

const NETWORK_MAGIC: &[u8; 6] = b"DFNET\0";
const CLUSTER_MAGIC: &[u8; 6] = b"DFCLU\0";
const ROUTING_MAGIC: &[u8; 6] = b"DFRTE\0";
const FORMAT_VERSION: u16 = 1;

/// File names inside a bundle directory.
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const STAGE_NET_FILES: [&str; 4] = [
    "stage1.net",
    "stage2.net",
    "stage3-easy.net",
    "stage3-hard.net",
];
pub const CLUSTER_FILES: [&str; 3] = ["stage1.clusters", "stage2.clusters", "stage3.clusters"];
pub const ROUTING_FILE: &str = "routing.bin";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: io::Error,
    },
    #[error("{path}: bad magic, not a {expected} file")]
    BadMagic { path: PathBuf, expected: &'static str },
    #[error("{path}: format version {got} is not supported (expected {FORMAT_VERSION})")]
    BadVersion { path: PathBuf, got: u16 },
    #[error("{path}: corrupt file: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("bundle is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Labels(#[from] PseudoLabelError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 6]) -> Self {
        let mut buf = Vec::with_capacity(1024);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Self { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        let bytes = s.as_bytes();
        self.u32(bytes.len() as u32);
        self.buf.extend_from_slice(bytes);
    }

    fn finish(self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, &self.buf).map_err(io_err(path))
    }
}

struct Reader<'a> {
    bytes: Vec<u8>,
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path, magic: &[u8; 6], expected: &'static str) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;
        let mut reader = Self { bytes, pos: 0, path };
        let head = reader.take(6)?;
        if head != magic {
            return Err(CheckpointError::BadMagic {
                path: path.to_path_buf(),
                expected,
            });
        }
        let version = reader.u16()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::BadVersion {
                path: path.to_path_buf(),
                got: version,
            });
        }
        Ok(reader)
    }

    fn corrupt(&self, message: impl Into<String>) -> CheckpointError {
        CheckpointError::Corrupt {
            path: self.path.to_path_buf(),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt {
                path: self.path.to_path_buf(),
                message: "unexpected end of file".into(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return Err(self.corrupt("string length out of range"));
        }
        let bytes = self.take(len)?.to_vec();
        String::from_utf8(bytes).map_err(|_| self.corrupt("string is not UTF-8"))
    }

    fn done(&self) -> Result<(), CheckpointError> {
        if self.pos != self.bytes.len() {
            return Err(CheckpointError::Corrupt {
                path: self.path.to_path_buf(),
                message: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

pub fn save_network(net: &StageNetwork, path: &Path) -> Result<(), CheckpointError> {
    let mut w = Writer::new(NETWORK_MAGIC);
    let arch = net.arch();
    w.u32(arch.image_side as u32);
    w.u32(arch.kernel as u32);
    w.u32(arch.hidden as u32);
    w.u32(arch.num_landmarks as u32);
    w.u32(arch.num_clusters as u32);
    w.u32(arch.aux_len as u32);
    w.u32(arch.conv_channels.len() as u32);
    for &c in &arch.conv_channels {
        w.u32(c as u32);
    }
    w.u32(net.params().len() as u32);
    for (tensor, name) in net.params().iter().zip(net.param_names()) {
        w.str(name);
        w.u8(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            w.u32(d as u32);
        }
        w.u64(tensor.data().len() as u64);
        for &v in tensor.data() {
            w.f64(v);
        }
    }
    w.finish(path)
}

pub fn load_network(path: &Path) -> Result<StageNetwork, CheckpointError> {
    let mut r = Reader::open(path, NETWORK_MAGIC, "network checkpoint")?;
    let image_side = r.u32()? as usize;
    let kernel = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let num_landmarks = r.u32()? as usize;
    let num_clusters = r.u32()? as usize;
    let aux_len = r.u32()? as usize;
    let conv_count = r.u32()? as usize;
    if conv_count > 64 {
        return Err(r.corrupt("conv layer count out of range"));
    }
    let mut conv_channels = Vec::with_capacity(conv_count);
    for _ in 0..conv_count {
        conv_channels.push(r.u32()? as usize);
    }
    let arch = Architecture {
        image_side,
        conv_channels,
        kernel,
        hidden,
        num_landmarks,
        num_clusters,
        aux_len,
    };
    let param_count = r.u32()? as usize;
    if param_count > 4096 {
        return Err(r.corrupt("parameter count out of range"));
    }
    let mut params = Vec::with_capacity(param_count);
    let mut names = Vec::with_capacity(param_count);
    for _ in 0..param_count {
        let name = r.str()?;
        let ndim = r.u8()? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(r.corrupt(format!("tensor rank {ndim} out of range")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let len = r.u64()? as usize;
        if len != shape.iter().product::<usize>() {
            return Err(r.corrupt(format!("tensor data length {len} does not match shape")));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        let tensor = Tensor::from_vec(shape, data)
            .map_err(|e| r.corrupt(format!("tensor rejected: {e}")))?;
        params.push(tensor);
        names.push(name);
    }
    r.done()?;
    Ok(StageNetwork::from_parts(arch, params, names)?)
}

pub fn save_cluster_model(model: &ClusterModel, path: &Path) -> Result<(), CheckpointError> {
    let mut w = Writer::new(CLUSTER_MAGIC);
    w.str(model.space.as_str());
    w.u32(model.k() as u32);
    w.u32(model.dim() as u32);
    w.f64(model.temperature);
    for center in &model.centers {
        for &v in center {
            w.f64(v);
        }
    }
    w.finish(path)
}

pub fn load_cluster_model(path: &Path) -> Result<ClusterModel, CheckpointError> {
    let mut r = Reader::open(path, CLUSTER_MAGIC, "cluster model")?;
    let space_str = r.str()?;
    let space = SpaceTag::parse(&space_str)
        .ok_or_else(|| r.corrupt(format!("unknown clustering space `{space_str}`")))?;
    let k = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if k == 0 || k > 1 << 16 || dim == 0 || dim > 1 << 20 {
        return Err(r.corrupt("cluster dimensions out of range"));
    }
    let temperature = r.f64()?;
    let mut centers = Vec::with_capacity(k);
    for _ in 0..k {
        let mut center = Vec::with_capacity(dim);
        for _ in 0..dim {
            center.push(r.f64()?);
        }
        centers.push(center);
    }
    r.done()?;
    Ok(ClusterModel::new(centers, temperature, space)?)
}

pub fn save_routing_table(table: &RoutingTable, path: &Path) -> Result<(), CheckpointError> {
    let mut w = Writer::new(ROUTING_MAGIC);
    w.f64(table.epsilon);
    w.u32(table.cluster_errors.len() as u32);
    for &e in &table.cluster_errors {
        w.f64(e);
    }
    w.finish(path)
}

pub fn load_routing_table(path: &Path) -> Result<RoutingTable, CheckpointError> {
    let mut r = Reader::open(path, ROUTING_MAGIC, "routing table")?;
    let epsilon = r.f64()?;
    let k = r.u32()? as usize;
    if k == 0 || k > 1 << 16 {
        return Err(r.corrupt("cluster count out of range"));
    }
    let mut cluster_errors = Vec::with_capacity(k);
    for _ in 0..k {
        cluster_errors.push(r.f64()?);
    }
    r.done()?;
    Ok(RoutingTable {
        epsilon,
        cluster_errors,
    })
}

/// Provenance recorded next to the checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleManifest {
    pub core_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub routing_mode: RoutingMode,
    /// Stage-3 training hit the empty-partition fallback; prediction
    /// averages the branches.
    pub routing_fallback: bool,
}

impl BundleManifest {
    fn to_text(&self) -> String {
        format!(
            "format_version = {FORMAT_VERSION}\ncore_version = {}\nconfig_sha256 = {}\nseed = {}\nrouting_mode = {}\nrouting_fallback = {}\n",
            self.core_version,
            self.config_sha256,
            self.seed,
            self.routing_mode.as_str(),
            self.routing_fallback,
        )
    }

    fn parse(text: &str) -> Result<Self, CheckpointError> {
        let mut core_version = None;
        let mut config_sha256 = None;
        let mut seed = None;
        let mut routing_mode = None;
        let mut routing_fallback = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(CheckpointError::Manifest {
                line,
                message: "expected `key = value`".into(),
            })?;
            let bad = |message: String| CheckpointError::Manifest { line, message };
            match key.trim() {
                "format_version" => {
                    let v: u16 = value
                        .trim()
                        .parse()
                        .map_err(|e| bad(format!("bad format version: {e}")))?;
                    if v != FORMAT_VERSION {
                        return Err(bad(format!("unsupported format version {v}")));
                    }
                }
                "core_version" => core_version = Some(value.trim().to_string()),
                "config_sha256" => config_sha256 = Some(value.trim().to_string()),
                "seed" => {
                    seed = Some(
                        value
                            .trim()
                            .parse()
                            .map_err(|e| bad(format!("bad seed: {e}")))?,
                    )
                }
                "routing_mode" => {
                    routing_mode = Some(
                        RoutingMode::parse(value.trim())
                            .ok_or_else(|| bad(format!("unknown routing mode `{}`", value.trim())))?,
                    )
                }
                "routing_fallback" => {
                    routing_fallback = Some(
                        value
                            .trim()
                            .parse()
                            .map_err(|e| bad(format!("bad routing fallback flag: {e}")))?,
                    )
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let missing = |field: &str| CheckpointError::Manifest {
            line: 0,
            message: format!("missing required key `{field}`"),
        };
        Ok(Self {
            core_version: core_version.ok_or_else(|| missing("core_version"))?,
            config_sha256: config_sha256.ok_or_else(|| missing("config_sha256"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            routing_mode: routing_mode.ok_or_else(|| missing("routing_mode"))?,
            routing_fallback: routing_fallback.ok_or_else(|| missing("routing_fallback"))?,
        })
    }
}

/// Writes the four stage checkpoints, three cluster models, routing table,
/// and manifest into `dir` (created if absent).
pub fn save_bundle(
    model: &CascadeModel,
    config_sha256: &str,
    seed: u64,
    dir: &Path,
) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let nets = [
        &model.stage1,
        &model.stage2,
        &model.branches[0],
        &model.branches[1],
    ];
    for (net, file) in nets.iter().zip(STAGE_NET_FILES) {
        save_network(net, &dir.join(file))?;
    }
    for (clusters, file) in model.clusters.iter().zip(CLUSTER_FILES) {
        save_cluster_model(clusters, &dir.join(file))?;
    }
    save_routing_table(&model.routing, &dir.join(ROUTING_FILE))?;
    let manifest = BundleManifest {
        core_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config_sha256.to_string(),
        seed,
        routing_mode: model.routing_mode,
        routing_fallback: model.routing_fallback,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    f.write_all(manifest.to_text().as_bytes())
        .map_err(io_err(&path))?;
    Ok(())
}

/// Loads and cross-validates a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<(CascadeModel, BundleManifest), CheckpointError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest = BundleManifest::parse(&text)?;

    let mut nets = Vec::with_capacity(4);
    for file in STAGE_NET_FILES {
        nets.push(load_network(&dir.join(file))?);
    }
    let mut clusters = Vec::with_capacity(3);
    for file in CLUSTER_FILES {
        clusters.push(load_cluster_model(&dir.join(file))?);
    }
    let routing = load_routing_table(&dir.join(ROUTING_FILE))?;

    let hard = nets.pop().expect("four networks");
    let easy = nets.pop().expect("four networks");
    let stage2 = nets.pop().expect("four networks");
    let stage1 = nets.pop().expect("four networks");
    let c3 = clusters.pop().expect("three cluster models");
    let c2 = clusters.pop().expect("three cluster models");
    let c1 = clusters.pop().expect("three cluster models");

    let n = stage1.arch().num_landmarks;
    let k = stage1.arch().num_clusters;
    if stage2.arch().aux_len != 2 * n {
        return Err(CheckpointError::Inconsistent(format!(
            "stage-2 auxiliary width {} does not match {} landmarks",
            stage2.arch().aux_len,
            n
        )));
    }
    for branch in [&easy, &hard] {
        if branch.arch().aux_len != 2 * n + k {
            return Err(CheckpointError::Inconsistent(format!(
                "stage-3 auxiliary width {} does not match {} landmarks + {} clusters",
                branch.arch().aux_len,
                n,
                k
            )));
        }
    }
    if routing.cluster_errors.len() != c2.k() {
        return Err(CheckpointError::Inconsistent(format!(
            "routing table covers {} clusters, stage-2 model has {}",
            routing.cluster_errors.len(),
            c2.k()
        )));
    }
    if c1.k() != k || c2.k() != k || c3.k() != k {
        return Err(CheckpointError::Inconsistent(
            "cluster models disagree on K".into(),
        ));
    }

    Ok((
        CascadeModel {
            stage1,
            stage2,
            branches: [easy, hard],
            clusters: [c1, c2, c3],
            routing,
            routing_mode: manifest.routing_mode,
            routing_fallback: manifest.routing_fallback,
        },
        manifest,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{train_cascade, CascadeSettings, RoutingMode};
    use crate::seeds::rng_for;
    use crate::synth::{generate_dataset, GeneratorConfig};
    use crate::trainer::{LossSchedule, ScheduleMode, TrainOptions};
    use tempfile::tempdir;

    fn tiny_net(seed: u64) -> StageNetwork {
        let arch = Architecture {
            image_side: 12,
            conv_channels: vec![2],
            kernel: 3,
            hidden: 5,
            num_landmarks: 2,
            num_clusters: 3,
            aux_len: 4,
        };
        StageNetwork::init(arch, &mut rng_for(seed, "checkpoint-test", 0)).unwrap()
    }

    #[test]
    fn network_round_trips_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = tiny_net(1);
        save_network(&net, &path).unwrap();
        let loaded = load_network(&path).unwrap();
        assert_eq!(net.arch(), loaded.arch());
        assert_eq!(net.param_names(), loaded.param_names());
        for (a, b) in net.params().iter().zip(loaded.params()) {
            assert_eq!(a.shape(), b.shape());
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn cluster_model_round_trips_including_temperature() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("clusters.bin");
        let model = ClusterModel::new(
            vec![vec![0.25, -0.5, 1.0], vec![0.0, 0.125, -2.0]],
            0.3125,
            SpaceTag::Offset,
        )
        .unwrap();
        save_cluster_model(&model, &path).unwrap();
        assert_eq!(load_cluster_model(&path).unwrap(), model);
    }

    #[test]
    fn routing_table_round_trips_with_infinite_sentinels() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("routing.bin");
        let table = RoutingTable {
            cluster_errors: vec![0.1, f64::INFINITY, 0.0625],
            epsilon: 0.3,
        };
        save_routing_table(&table, &path).unwrap();
        let loaded = load_routing_table(&path).unwrap();
        assert_eq!(loaded.epsilon, 0.3);
        assert_eq!(loaded.cluster_errors[0], 0.1);
        assert!(loaded.cluster_errors[1].is_infinite());
        assert_eq!(loaded.cluster_errors[2], 0.0625);
    }

    #[test]
    fn wrong_magic_version_and_truncation_fail() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.bin");

        std::fs::write(&path, b"NOTAMAGIC").unwrap();
        assert!(matches!(
            load_network(&path),
            Err(CheckpointError::BadMagic { .. })
        ));

        let mut bytes = NETWORK_MAGIC.to_vec();
        bytes.extend_from_slice(&9u16.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_network(&path),
            Err(CheckpointError::BadVersion { got: 9, .. })
        ));

        let net = tiny_net(2);
        let good = dir.path().join("good.bin");
        save_network(&net, &good).unwrap();
        let full = std::fs::read(&good).unwrap();
        std::fs::write(&path, &full[..full.len() - 3]).unwrap();
        assert!(matches!(
            load_network(&path),
            Err(CheckpointError::Corrupt { .. })
        ));

        let mut extra = full.clone();
        extra.push(0);
        std::fs::write(&path, &extra).unwrap();
        assert!(matches!(
            load_network(&path),
            Err(CheckpointError::Corrupt { .. })
        ));
    }

    #[test]
    fn bundle_round_trips_and_is_byte_stable() {
        let config = GeneratorConfig {
            count: 14,
            image_side: 32,
            ..GeneratorConfig::default()
        };
        let train = generate_dataset(&config, 60).unwrap();
        let val = generate_dataset(
            &GeneratorConfig {
                count: 4,
                ..config.clone()
            },
            61,
        )
        .unwrap();
        let settings = CascadeSettings {
            conv_channels: vec![2],
            kernel: 3,
            hidden: 6,
            num_clusters: 2,
            temperature_px: 20.0,
            epsilon: 0.3,
            train: TrainOptions {
                iterations: 6,
                batch_size: 4,
                learning_rate: 0.05,
                momentum: 0.9,
                schedule: LossSchedule::new(1.0, 1.0, 2, 4).unwrap(),
                mode: ScheduleMode::AsWritten,
                use_visibility: true,
                use_pseudolabels: true,
                log_every: 5,
            },
        };
        let out = train_cascade(&train, &val, &settings, 4, RoutingMode::AutoRouted).unwrap();

        let dir = tempdir().unwrap();
        let a = dir.path().join("bundle-a");
        let b = dir.path().join("bundle-b");
        save_bundle(&out.model, "cafe01", 4, &a).unwrap();
        save_bundle(&out.model, "cafe01", 4, &b).unwrap();

        for file in STAGE_NET_FILES
            .iter()
            .chain(CLUSTER_FILES.iter())
            .chain([&ROUTING_FILE, &MANIFEST_FILE])
        {
            let bytes_a = std::fs::read(a.join(file)).unwrap();
            let bytes_b = std::fs::read(b.join(file)).unwrap();
            assert_eq!(bytes_a, bytes_b, "{file} differs between identical saves");
        }

        let (loaded, manifest) = load_bundle(&a).unwrap();
        assert_eq!(manifest.seed, 4);
        assert_eq!(manifest.config_sha256, "cafe01");
        assert_eq!(manifest.routing_mode, RoutingMode::AutoRouted);
        let image = &val.samples[0].image;
        let before = out.model.predict(image).unwrap();
        let after = loaded.predict(image).unwrap();
        assert_eq!(before.stage3, after.stage3);
        assert_eq!(before.visibility, after.visibility);
    }

    #[test]
    fn mismatched_bundle_parts_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("swapped");
        std::fs::create_dir_all(&path).unwrap();
        // Write a manifest plus structurally valid but inconsistent parts:
        // every network claims aux_len 4, which cannot be both a stage-2
        // (2N = 4 only if N = 2) and a stage-3 width (2N + K = 7).
        let manifest = BundleManifest {
            core_version: "0".into(),
            config_sha256: "00".into(),
            seed: 0,
            routing_mode: RoutingMode::AutoRouted,
            routing_fallback: false,
        };
        std::fs::write(path.join(MANIFEST_FILE), manifest.to_text()).unwrap();
        let net = tiny_net(3);
        for file in STAGE_NET_FILES {
            save_network(&net, &path.join(file)).unwrap();
        }
        let clusters =
            ClusterModel::new(vec![vec![0.0; 4]; 3], 0.3, SpaceTag::Configuration).unwrap();
        for file in CLUSTER_FILES {
            save_cluster_model(&clusters, &path.join(file)).unwrap();
        }
        save_routing_table(
            &RoutingTable {
                cluster_errors: vec![0.1; 3],
                epsilon: 0.3,
            },
            &path.join(ROUTING_FILE),
        )
        .unwrap();
        assert!(matches!(
            load_bundle(&path),
            Err(CheckpointError::Inconsistent(_))
        ));
    }

    #[test]
    fn manifest_rejects_unknown_and_missing_keys() {
        assert!(matches!(
            BundleManifest::parse("format_version = 1\nfrobnicate = yes\n"),
            Err(CheckpointError::Manifest { .. })
        ));
        assert!(matches!(
            BundleManifest::parse("format_version = 1\ncore_version = 0\nseed = 1\n"),
            Err(CheckpointError::Manifest { .. })
        ));
    }
}
