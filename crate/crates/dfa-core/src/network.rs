//! Stage regressor: a small convolutional network with position, visibility,
//! and pseudo-label heads.
//!
//! Each cascade stage trains one of these (stage 3 trains one per branch).
//! The trunk is a configurable stack of valid 3x3 convolutions, each followed
//! by ReLU and 2x2 average pooling, then one hidden dense layer. Later stages
//! receive prior-stage outputs (estimated coordinates, predicted pseudo-label
//! vectors) as an auxiliary vector concatenated onto the flattened trunk
//! features before the dense layer.

use crate::autodiff::{Graph, GraphError, NodeId};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("bad architecture: {0}")]
    BadArchitecture(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Architecture descriptor; fully determines parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    /// Input images are `image_side` x `image_side` single-channel.
    pub image_side: usize,
    /// Output channels of each conv layer, applied in order.
    pub conv_channels: Vec<usize>,
    /// Square kernel side for every conv layer.
    pub kernel: usize,
    /// Width of the dense trunk layer feeding the heads.
    pub hidden: usize,
    /// Number of landmarks N (positions head emits 2N values).
    pub num_landmarks: usize,
    /// Number of clusters K (pseudo-label head width).
    pub num_clusters: usize,
    /// Length of the auxiliary input vector (0 for stage 1).
    pub aux_len: usize,
}

impl Architecture {
    /// Spatial extent and channel count after the conv stack.
    fn conv_output(&self) -> Result<(usize, usize), NetworkError> {
        let mut side = self.image_side;
        let mut ch = 1;
        for (i, &out_ch) in self.conv_channels.iter().enumerate() {
            if side < self.kernel {
                return Err(NetworkError::BadArchitecture(format!(
                    "conv{}: spatial extent {side} smaller than kernel {}",
                    i + 1,
                    self.kernel
                )));
            }
            side -= self.kernel - 1;
            if side < 2 {
                return Err(NetworkError::BadArchitecture(format!(
                    "conv{}: extent {side} too small to pool",
                    i + 1
                )));
            }
            side /= 2;
            ch = out_ch;
        }
        Ok((side, ch))
    }

    /// Flattened feature count entering the dense trunk (conv features + aux).
    pub fn trunk_input_len(&self) -> Result<usize, NetworkError> {
        let (side, ch) = self.conv_output()?;
        Ok(ch * side * side + self.aux_len)
    }

    fn validate(&self) -> Result<(), NetworkError> {
        if self.num_landmarks == 0 || self.num_clusters == 0 {
            return Err(NetworkError::BadArchitecture(
                "landmark and cluster counts must be positive".into(),
            ));
        }
        if self.hidden == 0 || self.kernel == 0 || self.conv_channels.iter().any(|&c| c == 0) {
            return Err(NetworkError::BadArchitecture(
                "layer widths must be positive".into(),
            ));
        }
        self.conv_output().map(|_| ())
    }
}

/// Named heads produced by one forward pass, as graph node ids.
pub struct ForwardHeads {
    /// `[2N]` normalized landmark coordinates (x1, y1, ..., xN, yN).
    pub positions: NodeId,
    /// `[3N]` visibility logits, one consecutive 3-way row per landmark.
    pub visibility: NodeId,
    /// `[K]` predicted pseudo-label vector.
    pub pseudolabels: NodeId,
}

/// Plain-value outputs for inference paths that do not need gradients.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub positions: Vec<f64>,
    /// Row-major N x 3 visibility logits.
    pub visibility_logits: Vec<f64>,
    pub pseudolabels: Vec<f64>,
}

impl Prediction {
    /// Argmax visibility state per landmark (0 visible, 1 invisible, 2 truncated).
    pub fn visibility_states(&self) -> Vec<u8> {
        let n = self.visibility_logits.len() / 3;
        (0..n)
            .map(|i| {
                let row = &self.visibility_logits[i * 3..i * 3 + 3];
                let mut best = 0u8;
                for c in 1..3 {
                    if row[c] > row[best as usize] {
                        best = c as u8;
                    }
                }
                best
            })
            .collect()
    }
}

pub struct StageNetwork {
    arch: Architecture,
    params: Vec<Tensor>,
    names: Vec<String>,
}

impl StageNetwork {
    /// Initializes all weights uniformly in `[-s, s]` with
    /// `s = sqrt(6 / (fan_in + fan_out))` and all biases at zero.
    pub fn init(arch: Architecture, rng: &mut ChaCha20Rng) -> Result<Self, NetworkError> {
        arch.validate()?;
        let mut params = Vec::new();
        let mut names = Vec::new();
        let push = |name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize,
                        rng: &mut ChaCha20Rng,
                        params: &mut Vec<Tensor>,
                        names: &mut Vec<String>| {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-s..=s)).collect()
            };
            params.push(Tensor::from_vec(shape, data).expect("init shape"));
            names.push(name);
        };

        let k = arch.kernel;
        let mut in_ch = 1;
        for (i, &out_ch) in arch.conv_channels.iter().enumerate() {
            let (fi, fo) = (in_ch * k * k, out_ch * k * k);
            push(
                format!("conv{}.weight", i + 1),
                vec![out_ch, in_ch, k, k],
                fi,
                fo,
                rng,
                &mut params,
                &mut names,
            );
            push(
                format!("conv{}.bias", i + 1),
                vec![out_ch],
                fi,
                fo,
                rng,
                &mut params,
                &mut names,
            );
            in_ch = out_ch;
        }
        let trunk_in = arch.trunk_input_len()?;
        push(
            "trunk.weight".into(),
            vec![arch.hidden, trunk_in],
            trunk_in,
            arch.hidden,
            rng,
            &mut params,
            &mut names,
        );
        push(
            "trunk.bias".into(),
            vec![arch.hidden],
            trunk_in,
            arch.hidden,
            rng,
            &mut params,
            &mut names,
        );
        let head = |name: &str, width: usize, rng: &mut ChaCha20Rng,
                        params: &mut Vec<Tensor>,
                        names: &mut Vec<String>| {
            push(
                format!("{name}.weight"),
                vec![width, arch.hidden],
                arch.hidden,
                width,
                rng,
                params,
                names,
            );
            push(
                format!("{name}.bias"),
                vec![width],
                arch.hidden,
                width,
                rng,
                params,
                names,
            );
        };
        head(
            "head.positions",
            2 * arch.num_landmarks,
            rng,
            &mut params,
            &mut names,
        );
        for i in 0..arch.num_landmarks {
            head(
                &format!("head.visibility{i}"),
                3,
                rng,
                &mut params,
                &mut names,
            );
        }
        head(
            "head.labels",
            arch.num_clusters,
            rng,
            &mut params,
            &mut names,
        );
        Ok(Self {
            arch,
            params,
            names,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    /// Rebuilds a network from checkpointed pieces, revalidating shapes.
    pub fn from_parts(
        arch: Architecture,
        params: Vec<Tensor>,
        names: Vec<String>,
    ) -> Result<Self, NetworkError> {
        arch.validate()?;
        let mut rng = crate::seeds::rng_for(0, "shape-probe", 0);
        let reference = Self::init(arch.clone(), &mut rng)?;
        if reference.params.len() != params.len() || reference.names != names {
            return Err(NetworkError::BadArchitecture(
                "parameter list does not match architecture".into(),
            ));
        }
        for (have, want) in params.iter().zip(&reference.params) {
            if have.shape() != want.shape() {
                return Err(NetworkError::BadArchitecture(format!(
                    "parameter shape {:?} does not match architecture ({:?})",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        Ok(Self {
            arch,
            params,
            names,
        })
    }

    /// One tensor of zeros per parameter, for gradient accumulation.
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect()
    }

    /// Builds the forward pass into `graph`, returning head node ids.
    ///
    /// `image` must be `side` x `side` single-channel; `aux` length must
    /// match the architecture (empty for stage 1).
    pub fn forward(
        &self,
        graph: &mut Graph,
        image: &[f64],
        aux: &[f64],
    ) -> Result<ForwardHeads, NetworkError> {
        let side = self.arch.image_side;
        if image.len() != side * side {
            return Err(GraphError::ShapeMismatch {
                context: "input image".into(),
                expected: vec![1, side, side],
                got: vec![image.len()],
            }
            .into());
        }
        if aux.len() != self.arch.aux_len {
            return Err(GraphError::ShapeMismatch {
                context: "aux input".into(),
                expected: vec![self.arch.aux_len],
                got: vec![aux.len()],
            }
            .into());
        }
        let mut x = graph.constant(
            Tensor::from_vec(vec![1, side, side], image.to_vec()).expect("image shape checked"),
        );
        let mut pi = 0;
        for i in 0..self.arch.conv_channels.len() {
            let w = graph.param(pi);
            let b = graph.param(pi + 1);
            pi += 2;
            let conv = graph.conv2d(x, w, b, &format!("conv{}", i + 1))?;
            let act = graph.relu(conv);
            x = graph.avg_pool2(act, &format!("pool{}", i + 1))?;
        }
        let feat = if aux.is_empty() {
            x
        } else {
            let aux_node = graph
                .constant(Tensor::from_vec(vec![aux.len()], aux.to_vec()).expect("aux shape"));
            // Flattened conv features first, prior-stage vector second.
            graph.concat(&[x, aux_node])
        };
        let tw = graph.param(pi);
        let tb = graph.param(pi + 1);
        pi += 2;
        let trunk_lin = graph.dense(tw, feat, tb, "trunk")?;
        let trunk = graph.relu(trunk_lin);

        let pw = graph.param(pi);
        let pb = graph.param(pi + 1);
        pi += 2;
        let positions = graph.dense(pw, trunk, pb, "head.positions")?;

        let mut vis_rows = Vec::with_capacity(self.arch.num_landmarks);
        for i in 0..self.arch.num_landmarks {
            let vw = graph.param(pi);
            let vb = graph.param(pi + 1);
            pi += 2;
            vis_rows.push(graph.dense(vw, trunk, vb, &format!("head.visibility{i}"))?);
        }
        let visibility = graph.concat(&vis_rows);

        let lw = graph.param(pi);
        let lb = graph.param(pi + 1);
        let pseudolabels = graph.dense(lw, trunk, lb, "head.labels")?;

        Ok(ForwardHeads {
            positions,
            visibility,
            pseudolabels,
        })
    }

    /// Forward pass returning plain values; the graph is discarded.
    pub fn predict(&self, image: &[f64], aux: &[f64]) -> Result<Prediction, NetworkError> {
        let mut graph = Graph::new(&self.params);
        let heads = self.forward(&mut graph, image, aux)?;
        Ok(Prediction {
            positions: graph.value(heads.positions).data().to_vec(),
            visibility_logits: graph.value(heads.visibility).data().to_vec(),
            pseudolabels: graph.value(heads.pseudolabels).data().to_vec(),
        })
    }
}

/// Maximum relative disagreement between analytic gradients and central
/// finite differences of an arbitrary scalar loss over the network, checking
/// every parameter element: `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// `build_loss` is re-invoked for each probe, so it must be a pure function
/// of the current parameters.
pub fn grad_check<F>(
    net: &mut StageNetwork,
    epsilon: f64,
    build_loss: F,
) -> Result<f64, NetworkError>
where
    F: Fn(&mut Graph, &StageNetwork) -> Result<NodeId, NetworkError>,
{
    assert!(
        (1e-7..=1e-3).contains(&epsilon),
        "finite-difference step {epsilon} outside sane range"
    );
    let eval = |net: &StageNetwork| -> Result<f64, NetworkError> {
        let mut graph = Graph::new(net.params());
        let loss = build_loss(&mut graph, net)?;
        Ok(graph.value(loss).item())
    };
    let mut grads = net.zero_grads();
    {
        let mut graph = Graph::new(net.params());
        let loss = build_loss(&mut graph, net)?;
        graph.backward(loss, &mut grads)?;
    }
    let mut worst = 0.0f64;
    for p in 0..grads.len() {
        for i in 0..grads[p].len() {
            let orig = net.params()[p].data()[i];
            net.params_mut()[p].data_mut()[i] = orig + epsilon;
            let up = eval(net)?;
            net.params_mut()[p].data_mut()[i] = orig - epsilon;
            let down = eval(net)?;
            net.params_mut()[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let analytic = grads[p].data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_for;

    /// Small enough to finite-difference exhaustively in tests.
    pub(crate) fn tiny_arch(aux_len: usize) -> Architecture {
        Architecture {
            image_side: 10,
            conv_channels: vec![2],
            kernel: 3,
            hidden: 6,
            num_landmarks: 2,
            num_clusters: 3,
            aux_len,
        }
    }

    #[test]
    fn head_shapes_match_landmark_and_cluster_counts() {
        let mut rng = rng_for(7, "net-test", 0);
        let net = StageNetwork::init(tiny_arch(0), &mut rng).unwrap();
        let image = vec![0.25; 100];
        let p = net.predict(&image, &[]).unwrap();
        assert_eq!(p.positions.len(), 4);
        assert_eq!(p.visibility_logits.len(), 6);
        assert_eq!(p.pseudolabels.len(), 3);
        assert!(p.positions.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn default_sized_heads() {
        // N=8, K=20 network emits (16, 8x3, 20) outputs on a 64x64 image.
        let arch = Architecture {
            image_side: 64,
            conv_channels: vec![8, 16],
            kernel: 3,
            hidden: 128,
            num_landmarks: 8,
            num_clusters: 20,
            aux_len: 0,
        };
        let mut rng = rng_for(7, "net-test", 1);
        let net = StageNetwork::init(arch, &mut rng).unwrap();
        let image: Vec<f64> = (0..64 * 64).map(|i| (i % 97) as f64 / 97.0).collect();
        let p = net.predict(&image, &[]).unwrap();
        assert_eq!(p.positions.len(), 16);
        assert_eq!(p.visibility_logits.len(), 24);
        assert_eq!(p.pseudolabels.len(), 20);
    }

    #[test]
    fn zero_parameters_give_zero_positions() {
        let mut rng = rng_for(7, "net-test", 2);
        let mut net = StageNetwork::init(tiny_arch(0), &mut rng).unwrap();
        for p in net.params_mut() {
            p.fill_zero();
        }
        let image = vec![0.7; 100];
        let p = net.predict(&image, &[]).unwrap();
        assert!(p.positions.iter().all(|&v| v == 0.0));
        assert!(p.pseudolabels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = rng_for(7, "net-test", 3);
        let net = StageNetwork::init(tiny_arch(2), &mut rng).unwrap();
        let image: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let a = net.predict(&image, &[0.1, -0.2]).unwrap();
        let b = net.predict(&image, &[0.1, -0.2]).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.visibility_logits, b.visibility_logits);
        assert_eq!(a.pseudolabels, b.pseudolabels);
    }

    #[test]
    fn aux_length_is_enforced() {
        let mut rng = rng_for(7, "net-test", 4);
        let net = StageNetwork::init(tiny_arch(2), &mut rng).unwrap();
        let image = vec![0.0; 100];
        assert!(net.predict(&image, &[]).is_err());
        assert!(net.predict(&image, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences_on_multi_task_loss() {
        // Finite-difference oracle over every parameter of a tiny network,
        // with all three heads contributing to the loss.
        let mut rng = rng_for(11, "net-test-fd", 0);
        let mut net = StageNetwork::init(tiny_arch(3), &mut rng).unwrap();
        let image: Vec<f64> = (0..100).map(|i| 0.5 + 0.4 * ((i * 7 % 13) as f64 / 13.0)).collect();
        let aux = [0.2, -0.3, 0.05];
        let pos_target = [0.1, -0.1, 0.25, 0.0];
        let pos_mask = [1.0, 1.0, 0.0, 0.0];
        let vis_labels = [0u8, 2u8];
        let label_target = [0.9, 0.1, 0.4];
        let err = grad_check(&mut net, 1e-5, |g, net| {
            let heads = net.forward(g, &image, &aux)?;
            let lp = g.euclidean_masked(heads.positions, &pos_target, &pos_mask, "pos")?;
            let lv = g.multinomial_logistic(heads.visibility, 3, &vis_labels, "vis")?;
            let ll = g.euclidean_masked(
                heads.pseudolabels,
                &label_target,
                &[1.0, 1.0, 1.0],
                "labels",
            )?;
            let lv_scaled = g.scale(lv, 0.7);
            let ll_scaled = g.scale(ll, 0.4);
            let partial = g.add(lp, lv_scaled, "loss")?;
            Ok(g.add(partial, ll_scaled, "loss")?)
        })
        .unwrap();
        assert!(err < 1e-4, "max relative gradient error {err}");
    }

    #[test]
    fn visibility_argmax_picks_largest_logit() {
        let p = Prediction {
            positions: vec![],
            visibility_logits: vec![0.1, 0.9, 0.3, 2.0, -1.0, 0.0],
            pseudolabels: vec![],
        };
        assert_eq!(p.visibility_states(), vec![1, 0]);
    }
}
