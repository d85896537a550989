//! Declarative construction of the four-block 3D CNN, its 1024-wide encoder
//! view, and the two cascaded multi-modal heads.
//!
//! The default layer table (`NetworkSpec::with_widening`) is:
//!
//! | block | conv                 | pool  |
//! |-------|----------------------|-------|
//! | 1     | k1 c4f  p0 s1 d1     | k3 s2 |
//! | 2     | k3 c32f p0 s1 d2     | k3 s2 |
//! | 3     | k5 c64f p2 s1 d2     | k3 s2 |
//! | 4     | k3 c64f p1 s1 d2     | k5 s2 |
//!
//! followed by FC1 (1024) + ReLU, FC2 (3) and softmax. The declared output
//! size of the block-4 pool in the source table (5x5x5) is inconsistent with
//! the floor formula, which yields 1x1x1 from a 6x6x6 input; `shape_plan`
//! flags this instead of silently altering the layer.

use crate::error::{Error, Result};
use crate::tensor::{conv_out_extent, pool_out_extent, Tape, Tensor, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INPUT_EXTENT: usize = 96;
pub const ENCODING_DIM: usize = 1024;
pub const NUM_CLASSES: usize = 3;
pub const CASCADE_HIDDEN: usize = 512;
pub const INSTANCE_NORM_EPS: f32 = 1e-5;

/// One conv/norm/relu/pool block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub conv_k: usize,
    pub channels: usize,
    pub padding: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pool_k: usize,
    pub pool_stride: usize,
}

/// Declarative description of the whole network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub widening_factor: usize,
    pub blocks: [BlockSpec; 4],
    pub input_extent: usize,
}

impl NetworkSpec {
    /// The reference layer table with channel counts {4f, 32f, 64f, 64f}.
    pub fn with_widening(f: usize) -> Result<Self> {
        if f < 1 {
            return Err(Error::InvalidArgument("widening factor must be >= 1".into()));
        }
        Ok(NetworkSpec {
            widening_factor: f,
            blocks: Self::table_blocks([4 * f, 32 * f, 64 * f, 64 * f]),
            input_extent: INPUT_EXTENT,
        })
    }

    /// Same layer geometry with explicit channel counts. Used to run the
    /// full architecture at reduced widths in tests and smoke runs.
    pub fn with_channels(channels: [usize; 4]) -> Result<Self> {
        if channels.contains(&0) {
            return Err(Error::InvalidArgument("channel counts must be >= 1".into()));
        }
        Ok(NetworkSpec {
            widening_factor: 1,
            blocks: Self::table_blocks(channels),
            input_extent: INPUT_EXTENT,
        })
    }

    fn table_blocks(c: [usize; 4]) -> [BlockSpec; 4] {
        [
            BlockSpec { conv_k: 1, channels: c[0], padding: 0, stride: 1, dilation: 1, pool_k: 3, pool_stride: 2 },
            BlockSpec { conv_k: 3, channels: c[1], padding: 0, stride: 1, dilation: 2, pool_k: 3, pool_stride: 2 },
            BlockSpec { conv_k: 5, channels: c[2], padding: 2, stride: 1, dilation: 2, pool_k: 3, pool_stride: 2 },
            BlockSpec { conv_k: 3, channels: c[3], padding: 1, stride: 1, dilation: 2, pool_k: 5, pool_stride: 2 },
        ]
    }

    /// Flattened feature width entering FC1, derived from the computed
    /// block-4 output (not from the declared 5x5x5).
    pub fn flat_features(&self) -> Result<usize> {
        let plan = shape_plan(self, self.input_extent)?;
        let last = plan
            .rows
            .iter()
            .rfind(|r| matches!(r.layer, LayerName::MaxPool))
            .expect("plan has pool rows");
        Ok(self.blocks[3].channels * last.computed.iter().product::<usize>())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerName {
    Input,
    Conv3d,
    InstanceNorm3d,
    Relu,
    MaxPool,
    Fc1,
    Fc2,
    Softmax,
}

impl std::fmt::Display for LayerName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LayerName::Input => "Input",
            LayerName::Conv3d => "Conv3D",
            LayerName::InstanceNorm3d => "InstanceNorm3D",
            LayerName::Relu => "ReLU",
            LayerName::MaxPool => "MaxPool3D",
            LayerName::Fc1 => "FC1",
            LayerName::Fc2 => "FC2",
            LayerName::Softmax => "Softmax",
        };
        f.write_str(s)
    }
}

/// One row of the shape plan.
#[derive(Clone, Debug)]
pub struct ShapeRow {
    pub block: Option<usize>,
    pub layer: LayerName,
    pub params: String,
    pub computed: Vec<usize>,
    pub declared: Option<Vec<usize>>,
    pub mismatch: bool,
}

#[derive(Clone, Debug)]
pub struct ShapePlan {
    pub rows: Vec<ShapeRow>,
}

impl ShapePlan {
    pub fn mismatches(&self) -> Vec<&ShapeRow> {
        self.rows.iter().filter(|r| r.mismatch).collect()
    }

    /// Plain-text table: declared layout alongside the computed shapes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<6} {:<16} {:<22} {:<14} {:<14} {}\n",
            "Block", "Layer", "Type", "Declared", "Computed", "Flag"
        ));
        for r in &self.rows {
            let fmt_shape = |s: &[usize]| {
                s.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("x")
            };
            out.push_str(&format!(
                "{:<6} {:<16} {:<22} {:<14} {:<14} {}\n",
                r.block.map(|b| b.to_string()).unwrap_or_default(),
                r.layer.to_string(),
                r.params,
                r.declared.as_deref().map(fmt_shape).unwrap_or_default(),
                fmt_shape(&r.computed),
                if r.mismatch { "MISMATCH" } else { "" }
            ));
        }
        out
    }
}

/// Declared per-layer output extents for the 96-input table: conv then pool
/// per block. The block-4 pool declares 5 although the formula computes 1.
const DECLARED_CONV: [usize; 4] = [96, 43, 17, 6];
const DECLARED_POOL: [usize; 4] = [47, 21, 8, 5];

/// Computes per-layer output shapes, flagging layers whose computed shape
/// differs from the declared value.
pub fn shape_plan(spec: &NetworkSpec, input_extent: usize) -> Result<ShapePlan> {
    let declared = input_extent == INPUT_EXTENT;
    let mut rows = Vec::new();
    let mut extent = input_extent;
    rows.push(ShapeRow {
        block: None,
        layer: LayerName::Input,
        params: String::new(),
        computed: vec![extent; 3],
        declared: declared.then(|| vec![INPUT_EXTENT; 3]),
        mismatch: false,
    });
    for (i, b) in spec.blocks.iter().enumerate() {
        let conv_out = conv_out_extent(extent, b.conv_k, b.padding, b.stride, b.dilation)
            .map_err(|e| Error::InfeasibleLayer { layer_index: 2 * i + 1, reason: e.to_string() })?;
        let conv_declared = declared.then(|| vec![DECLARED_CONV[i]; 3]);
        rows.push(ShapeRow {
            block: Some(i + 1),
            layer: LayerName::Conv3d,
            params: format!(
                "k{}-c{}-p{}-s{}-d{}",
                b.conv_k, b.channels, b.padding, b.stride, b.dilation
            ),
            mismatch: conv_declared.as_ref().is_some_and(|d| d[0] != conv_out),
            computed: vec![conv_out; 3],
            declared: conv_declared,
        });
        rows.push(ShapeRow {
            block: Some(i + 1),
            layer: LayerName::InstanceNorm3d,
            params: String::new(),
            computed: vec![conv_out; 3],
            declared: None,
            mismatch: false,
        });
        rows.push(ShapeRow {
            block: Some(i + 1),
            layer: LayerName::Relu,
            params: String::new(),
            computed: vec![conv_out; 3],
            declared: None,
            mismatch: false,
        });
        let pool_out = pool_out_extent(conv_out, b.pool_k, b.pool_stride)
            .map_err(|e| Error::InfeasibleLayer { layer_index: 2 * i + 2, reason: e.to_string() })?;
        let pool_declared = declared.then(|| vec![DECLARED_POOL[i]; 3]);
        rows.push(ShapeRow {
            block: Some(i + 1),
            layer: LayerName::MaxPool,
            params: format!("k{}-s{}", b.pool_k, b.pool_stride),
            mismatch: pool_declared.as_ref().is_some_and(|d| d[0] != pool_out),
            computed: vec![pool_out; 3],
            declared: pool_declared,
        });
        extent = pool_out;
    }
    rows.push(ShapeRow {
        block: None,
        layer: LayerName::Fc1,
        params: String::new(),
        computed: vec![ENCODING_DIM],
        declared: declared.then(|| vec![ENCODING_DIM]),
        mismatch: false,
    });
    rows.push(ShapeRow {
        block: None,
        layer: LayerName::Fc2,
        params: String::new(),
        computed: vec![NUM_CLASSES],
        declared: declared.then(|| vec![NUM_CLASSES]),
        mismatch: false,
    });
    rows.push(ShapeRow {
        block: None,
        layer: LayerName::Softmax,
        params: String::new(),
        computed: vec![NUM_CLASSES],
        declared: declared.then(|| vec![NUM_CLASSES]),
        mismatch: false,
    });
    Ok(ShapePlan { rows })
}

/// A named parameter tensor.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// The full network: spec plus initialized parameters.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<Param>,
}

fn uniform_fan_in(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let numel = shape.iter().product();
    let data: Vec<f32> = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("consistent shape")
}

/// Build the reference architecture at widening factor `f` with seeded
/// scaled-uniform initialization.
pub fn build_network(f: usize, seed: u64) -> Result<Network> {
    Network::init(NetworkSpec::with_widening(f)?, seed)
}

impl Network {
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut c_in = 1usize;
        for (i, b) in spec.blocks.iter().enumerate() {
            let k = b.conv_k;
            let fan_in = c_in * k * k * k;
            params.push(Param {
                name: format!("block{}.conv.weight", i + 1),
                tensor: uniform_fan_in(&mut rng, vec![b.channels, c_in, k, k, k], fan_in),
            });
            params.push(Param {
                name: format!("block{}.conv.bias", i + 1),
                tensor: uniform_fan_in(&mut rng, vec![b.channels], fan_in),
            });
            params.push(Param {
                name: format!("block{}.norm.gamma", i + 1),
                tensor: Tensor::new(vec![b.channels], vec![1.0; b.channels])?,
            });
            params.push(Param {
                name: format!("block{}.norm.beta", i + 1),
                tensor: Tensor::zeros(vec![b.channels]),
            });
            c_in = b.channels;
        }
        let flat = spec.flat_features()?;
        params.push(Param {
            name: "fc1.weight".into(),
            tensor: uniform_fan_in(&mut rng, vec![ENCODING_DIM, flat], flat),
        });
        params.push(Param {
            name: "fc1.bias".into(),
            tensor: uniform_fan_in(&mut rng, vec![ENCODING_DIM], flat),
        });
        params.push(Param {
            name: "fc2.weight".into(),
            tensor: uniform_fan_in(&mut rng, vec![NUM_CLASSES, ENCODING_DIM], ENCODING_DIM),
        });
        params.push(Param {
            name: "fc2.bias".into(),
            tensor: uniform_fan_in(&mut rng, vec![NUM_CLASSES], ENCODING_DIM),
        });
        Ok(Network { spec, params })
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// True for parameters of the fully connected head (FC1/FC2).
    pub fn is_fc_param(name: &str) -> bool {
        name.starts_with("fc")
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        let e = self.spec.input_extent;
        if s.len() != 5 || s[1] != 1 || s[2] != e || s[3] != e || s[4] != e {
            return Err(Error::shape_mismatch(
                "network input (no implicit resizing)",
                format!("[N, 1, {e}, {e}, {e}]"),
                s,
            ));
        }
        Ok(())
    }

    /// Run the network on a tape. `trainable` marks which parameters are
    /// gradient-tracked (None = pure inference).
    pub fn forward_pass(&self, batch: &Tensor, trainable: Option<&[bool]>) -> Result<ForwardPass> {
        self.check_input(batch)?;
        if let Some(t) = trainable {
            if t.len() != self.params.len() {
                return Err(Error::shape_mismatch("trainable mask", self.params.len(), t.len()));
            }
        }
        let mut tape = Tape::new();
        let param_ids: Vec<TensorId> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let tracked = trainable.map(|t| t[i]).unwrap_or(false);
                tape.leaf(p.tensor.clone(), tracked)
            })
            .collect();
        let mut x = tape.leaf(batch.clone(), false);
        let mut pi = 0;
        for b in &self.spec.blocks {
            let w = param_ids[pi];
            let bias = param_ids[pi + 1];
            let gamma = param_ids[pi + 2];
            let beta = param_ids[pi + 3];
            pi += 4;
            x = tape.conv3d(x, w, bias, b.padding, b.stride, b.dilation)?;
            x = tape.instance_norm3d(x, gamma, beta, INSTANCE_NORM_EPS)?;
            x = tape.relu(x);
            x = tape.maxpool3d(x, b.pool_k, b.pool_stride)?;
        }
        let n = batch.shape()[0];
        let flat = tape.value(x).numel() / n;
        x = tape.reshape(x, vec![n, flat])?;
        let fc1 = tape.linear(x, param_ids[pi], param_ids[pi + 1])?;
        let encoding = tape.relu(fc1);
        let logits = tape.linear(encoding, param_ids[pi + 2], param_ids[pi + 3])?;
        Ok(ForwardPass {
            tape,
            param_ids,
            encoding,
            logits,
        })
    }

    /// Class probabilities for a batch; rows sum to 1.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let mut fp = self.forward_pass(batch, None)?;
        let probs = fp.tape.softmax(fp.logits)?;
        Ok(fp.tape.value(probs).clone())
    }

    /// 1024-wide per-sample encodings (FC1 output after ReLU).
    pub fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        let fp = self.forward_pass(batch, None)?;
        Ok(fp.tape.value(fp.encoding).clone())
    }
}

/// Result of a recorded forward pass, ready for loss + backward.
pub struct ForwardPass {
    pub tape: Tape,
    pub param_ids: Vec<TensorId>,
    pub encoding: TensorId,
    pub logits: TensorId,
}

/// How the cascade head consumes the two modality encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CascadeMode {
    Additive,
    Concatenated,
}

impl CascadeMode {
    pub fn input_width(self) -> usize {
        match self {
            CascadeMode::Additive => ENCODING_DIM,
            CascadeMode::Concatenated => 2 * ENCODING_DIM,
        }
    }
}

/// Two-layer classifier (hidden 512, ReLU, softmax over 3) on top of the
/// combined modality encodings.
#[derive(Clone, Debug)]
pub struct CascadeHead {
    pub mode: CascadeMode,
    pub params: Vec<Param>,
}

impl CascadeHead {
    pub fn init(mode: CascadeMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = mode.input_width();
        let params = vec![
            Param {
                name: "head.fc1.weight".into(),
                tensor: uniform_fan_in(&mut rng, vec![CASCADE_HIDDEN, w], w),
            },
            Param {
                name: "head.fc1.bias".into(),
                tensor: uniform_fan_in(&mut rng, vec![CASCADE_HIDDEN], w),
            },
            Param {
                name: "head.fc2.weight".into(),
                tensor: uniform_fan_in(&mut rng, vec![NUM_CLASSES, CASCADE_HIDDEN], CASCADE_HIDDEN),
            },
            Param {
                name: "head.fc2.bias".into(),
                tensor: uniform_fan_in(&mut rng, vec![NUM_CLASSES], CASCADE_HIDDEN),
            },
        ];
        CascadeHead { mode, params }
    }

    fn check_encodings(enc_t1: &Tensor, enc_fl: &Tensor) -> Result<()> {
        for (name, e) in [("t1", enc_t1), ("flair", enc_fl)] {
            let s = e.shape();
            if s.len() != 2 || s[1] != ENCODING_DIM {
                return Err(Error::shape_mismatch(
                    format!("{name} encoding"),
                    format!("[N, {ENCODING_DIM}]"),
                    s,
                ));
            }
        }
        if enc_t1.shape()[0] != enc_fl.shape()[0] {
            return Err(Error::shape_mismatch(
                "encoding batch sizes",
                enc_t1.shape()[0],
                enc_fl.shape()[0],
            ));
        }
        Ok(())
    }

    /// Recorded forward over batched encoding pairs.
    pub fn forward_pass(
        &self,
        enc_t1: &Tensor,
        enc_fl: &Tensor,
        trainable: bool,
    ) -> Result<(Tape, Vec<TensorId>, TensorId)> {
        Self::check_encodings(enc_t1, enc_fl)?;
        let mut tape = Tape::new();
        let param_ids: Vec<TensorId> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), trainable))
            .collect();
        let a = tape.leaf(enc_t1.clone(), false);
        let b = tape.leaf(enc_fl.clone(), false);
        let joined = match self.mode {
            CascadeMode::Additive => tape.add(a, b)?,
            CascadeMode::Concatenated => tape.concat(a, b)?,
        };
        let h = tape.linear(joined, param_ids[0], param_ids[1])?;
        let h = tape.relu(h);
        let logits = tape.linear(h, param_ids[2], param_ids[3])?;
        Ok((tape, param_ids, logits))
    }

    /// Class probabilities for batched encoding pairs.
    pub fn forward(&self, enc_t1: &Tensor, enc_fl: &Tensor) -> Result<Tensor> {
        let (mut tape, _, logits) = self.forward_pass(enc_t1, enc_fl, false)?;
        let probs = tape.softmax(logits)?;
        Ok(tape.value(probs).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_channel_sequence() {
        let spec = NetworkSpec::with_widening(1).unwrap();
        let channels: Vec<usize> = spec.blocks.iter().map(|b| b.channels).collect();
        assert_eq!(channels, vec![4, 32, 64, 64]);
        let spec2 = NetworkSpec::with_widening(2).unwrap();
        let channels2: Vec<usize> = spec2.blocks.iter().map(|b| b.channels).collect();
        assert_eq!(channels2, vec![8, 64, 128, 128]);
        assert!(NetworkSpec::with_widening(0).is_err());
    }

    #[test]
    fn fc2_weight_shape() {
        let net = build_network(1, 0).unwrap();
        assert_eq!(net.param("fc2.weight").unwrap().shape(), &[3, 1024]);
        // FC1 input derived from computed block-4 output: 64 * 1^3
        assert_eq!(net.param("fc1.weight").unwrap().shape(), &[1024, 64]);
    }

    #[test]
    fn same_seed_identical_parameters() {
        let a = build_network(1, 123).unwrap();
        let b = build_network(1, 123).unwrap();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa.name, pb.name);
            assert!(pa
                .tensor
                .data()
                .iter()
                .zip(pb.tensor.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn shape_plan_matches_declared_except_final_pool() {
        let spec = NetworkSpec::with_widening(1).unwrap();
        let plan = shape_plan(&spec, 96).unwrap();
        let spatial: Vec<usize> = plan
            .rows
            .iter()
            .filter(|r| matches!(r.layer, LayerName::Conv3d | LayerName::MaxPool))
            .map(|r| r.computed[0])
            .collect();
        assert_eq!(spatial, vec![96, 47, 43, 21, 17, 8, 6, 1]);
        let mismatches = plan.mismatches();
        assert_eq!(mismatches.len(), 1);
        let m = mismatches[0];
        assert_eq!(m.layer, LayerName::MaxPool);
        assert_eq!(m.block, Some(4));
        assert_eq!(m.computed, vec![1, 1, 1]);
        assert_eq!(m.declared, Some(vec![5, 5, 5]));
    }

    #[test]
    fn shape_plan_rejects_infeasible_input() {
        let spec = NetworkSpec::with_widening(1).unwrap();
        let err = shape_plan(&spec, 8).unwrap_err();
        assert!(matches!(err, Error::InfeasibleLayer { .. }));
    }

    #[test]
    fn shape_plan_render_contains_flag() {
        let spec = NetworkSpec::with_widening(1).unwrap();
        let plan = shape_plan(&spec, 96).unwrap();
        let text = plan.render();
        assert_eq!(text.matches("MISMATCH").count(), 1);
        assert!(text.contains("k5-s2"));
    }

    fn tiny_net() -> Network {
        Network::init(NetworkSpec::with_channels([1, 2, 2, 2]).unwrap(), 7).unwrap()
    }

    fn random_batch(n: usize, seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let numel = n * 96 * 96 * 96;
        let data: Vec<f32> = (0..numel).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(vec![n, 1, 96, 96, 96], data).unwrap()
    }

    #[test]
    fn forward_shape_and_row_sums() {
        let net = tiny_net();
        let batch = random_batch(2, 1);
        let probs = net.forward(&batch).unwrap();
        assert_eq!(probs.shape(), &[2, 3]);
        for r in 0..2 {
            let s: f32 = probs.data()[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn duplicated_sample_gives_identical_rows() {
        let net = tiny_net();
        let one = random_batch(1, 2);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let batch = Tensor::new(vec![2, 1, 96, 96, 96], data).unwrap();
        let probs = net.forward(&batch).unwrap();
        for c in 0..3 {
            assert_eq!(probs.data()[c].to_bits(), probs.data()[3 + c].to_bits());
        }
    }

    #[test]
    fn wrong_extent_rejected() {
        let net = tiny_net();
        let bad = Tensor::zeros(vec![1, 1, 64, 64, 64]);
        assert!(net.forward(&bad).is_err());
    }

    #[test]
    fn encode_consistency_with_forward() {
        let net = tiny_net();
        let batch = random_batch(2, 3);
        let enc = net.encode(&batch).unwrap();
        assert_eq!(enc.shape(), &[2, 1024]);

        // softmax(FC2(encoding)) must equal forward()
        let mut tape = Tape::new();
        let e = tape.leaf(enc, false);
        let w = tape.leaf(net.param("fc2.weight").unwrap().clone(), false);
        let b = tape.leaf(net.param("fc2.bias").unwrap().clone(), false);
        let logits = tape.linear(e, w, b).unwrap();
        let probs = tape.softmax(logits).unwrap();
        let direct = net.forward(&batch).unwrap();
        for (a, b) in tape.data(probs).iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn additive_cascade_zero_flair_identity_and_symmetry() {
        use rand::{Rng, SeedableRng};
        let head = CascadeHead::init(CascadeMode::Additive, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc: Vec<f32> = (0..ENCODING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t1 = Tensor::new(vec![1, ENCODING_DIM], enc.clone()).unwrap();
        let zeros = Tensor::zeros(vec![1, ENCODING_DIM]);
        let with_zero = head.forward(&t1, &zeros).unwrap();
        let alone = head.forward(&zeros, &t1).unwrap(); // symmetric: swap sides
        for (a, b) in with_zero.data().iter().zip(alone.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let s: f32 = with_zero.data().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn concatenated_cascade_is_order_sensitive() {
        use rand::{Rng, SeedableRng};
        let head = CascadeHead::init(CascadeMode::Concatenated, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a: Vec<f32> = (0..ENCODING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..ENCODING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ta = Tensor::new(vec![1, ENCODING_DIM], a).unwrap();
        let tb = Tensor::new(vec![1, ENCODING_DIM], b).unwrap();
        let ab = head.forward(&ta, &tb).unwrap();
        let ba = head.forward(&tb, &ta).unwrap();
        assert!(ab.data().iter().zip(ba.data()).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn cascade_width_mismatch_rejected() {
        let head = CascadeHead::init(CascadeMode::Additive, 1);
        let bad = Tensor::zeros(vec![1, 512]);
        let ok = Tensor::zeros(vec![1, ENCODING_DIM]);
        assert!(head.forward(&bad, &ok).is_err());
    }
}
