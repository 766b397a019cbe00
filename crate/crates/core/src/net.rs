//! Detection network: configuration, assembly, forward pass and checkpoints.
//!
//! The backbone has four stages of `blocks_per_stage x [3x3 conv, batchnorm?,
//! ReLU]`, each followed by 2x2 max pooling, so the output stride is 16.
//! Channels double per stage from `base_channels`. The head is
//! `head_convs x [3x3 conv, batchnorm?, ReLU]` and a final 1x1 convolution to
//! eight channels: two object/non-object logits and six affine parameters.
//!
//! The edge-augmented variant concatenates the Sobel branch output with the
//! activations entering stage `fusion_stage` (stage 0 being the RGB input).

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::edge::{edge_branch, EdgeChannels, SobelKernels};
use crate::error::{CheckpointError, NetError, ShapeError};
use crate::nn::{AdamConfig, BatchStats, Graph, Padding, ParamId, ParamStore, Tensor, Var};

/// Total downsampling of the backbone (four 2x2 max pools).
pub const STRIDE: usize = 16;
/// Side of the canonical square in stride units.
pub const DEFAULT_ALPHA: f64 = 7.75;
pub const GRID_CHANNELS: usize = 8;
pub const BATCHNORM_MOMENTUM: f64 = 0.99;
/// Variance gain of the final 1x1 convolution, relative to fan-in scaling.
pub const OUTPUT_GAIN: f64 = 0.01;
/// Initial bias of the `v3` and `v6` output channels.
pub const DIAGONAL_BIAS: f64 = 0.25;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WPLT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    #[default]
    EdgeAugmented,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::EdgeAugmented => "edge_augmented",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub input_height: usize,
    pub input_width: usize,
    pub stride: usize,
    pub base_channels: usize,
    pub blocks_per_stage: usize,
    pub head_convs: usize,
    pub use_batchnorm: bool,
    pub detection_threshold: f64,
    pub nms_threshold: f64,
    pub alpha: f64,
    pub edge_channels: EdgeChannels,
    pub presmooth: bool,
    pub fusion_stage: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            variant: Variant::EdgeAugmented,
            input_height: 256,
            input_width: 256,
            stride: STRIDE,
            base_channels: 16,
            blocks_per_stage: 2,
            head_convs: 1,
            use_batchnorm: true,
            detection_threshold: 0.5,
            nms_threshold: 0.1,
            alpha: DEFAULT_ALPHA,
            edge_channels: EdgeChannels::All,
            presmooth: false,
            fusion_stage: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.stride != STRIDE {
            return bad(format!("stride is fixed at {STRIDE}, got {}", self.stride));
        }
        let (h, w) = (self.input_height, self.input_width);
        if h == 0 || w == 0 || h % STRIDE != 0 || w % STRIDE != 0 {
            return bad(format!("input size {h}x{w} must be positive multiples of {STRIDE}"));
        }
        if self.base_channels == 0 || self.blocks_per_stage == 0 {
            return bad("base_channels and blocks_per_stage must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        let t = self.detection_threshold;
        if !(t > 0.0 && t < 1.0) {
            return bad(format!("detection_threshold must be in (0, 1), got {t}"));
        }
        if !(0.0..=1.0).contains(&self.nms_threshold) {
            return bad(format!("nms_threshold must be in [0, 1], got {}", self.nms_threshold));
        }
        if self.fusion_stage > 3 {
            return bad(format!("fusion_stage must be 0..=3, got {}", self.fusion_stage));
        }
        Ok(())
    }

    /// Output grid size `(M, N)`.
    pub fn grid_size(&self) -> (usize, usize) {
        (self.input_height / STRIDE, self.input_width / STRIDE)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

/// Raw network output, `B x M x N x 8`: channels 0-1 are object/non-object
/// logits, 2-7 the affine parameters v3..v8.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub values: Tensor,
}

impl FeatureGrid {
    pub fn new(values: Tensor) -> Result<Self, ShapeError> {
        let (_, _, _, c) = values.dims4()?;
        if c != GRID_CHANNELS {
            return Err(ShapeError::mismatch("FeatureGrid", "8 channels", values.shape()));
        }
        Ok(Self { values })
    }

    pub fn zeros(batch: usize, m: usize, n: usize) -> Self {
        Self {
            values: Tensor::zeros(&[batch, m, n, GRID_CHANNELS]),
        }
    }

    pub fn batch(&self) -> usize {
        self.values.shape()[0]
    }

    /// `(M, N)`.
    pub fn size(&self) -> (usize, usize) {
        (self.values.shape()[1], self.values.shape()[2])
    }

    pub fn cell(&self, b: usize, m: usize, n: usize) -> [f64; 8] {
        let (mm, nn) = self.size();
        let i = ((b * mm + m) * nn + n) * GRID_CHANNELS;
        self.values.data()[i..i + GRID_CHANNELS]
            .try_into()
            .expect("8 channels")
    }

    pub fn set_cell(&mut self, b: usize, m: usize, n: usize, v: [f64; 8]) {
        let (mm, nn) = self.size();
        let i = ((b * mm + m) * nn + n) * GRID_CHANNELS;
        self.values.data_mut()[i..i + GRID_CHANNELS].copy_from_slice(&v);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy)]
struct BnLayer {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    kernel: ParamId,
    /// Absent under batchnorm, whose shift makes it redundant.
    bias: Option<ParamId>,
    bn: Option<BnLayer>,
}

/// A built network: configuration, parameters and running statistics.
#[derive(Debug, Clone)]
pub struct Model {
    config: NetworkConfig,
    params: ParamStore,
    /// Batchnorm running statistics; not optimized, but checkpointed.
    buffers: ParamStore,
    sobel: Option<SobelKernels>,
    stages: Vec<Vec<ConvBlock>>,
    head: Vec<ConvBlock>,
    out: ConvBlock,
}

/// Output of a recorded forward pass.
pub struct ForwardPass {
    pub graph: Graph,
    pub grid: Var,
    /// Batch statistics of every train-mode batchnorm, in layer order.
    pub batch_stats: Vec<BatchStats>,
}

impl ForwardPass {
    pub fn feature_grid(&self) -> FeatureGrid {
        FeatureGrid {
            values: self.graph.value(self.grid).clone(),
        }
    }
}

struct Builder<'a> {
    params: &'a mut ParamStore,
    buffers: &'a mut ParamStore,
    rng: ChaCha8Rng,
    use_bn: bool,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize, gain: f64, bn: bool) -> ConvBlock {
        let fan_in = (k * k * cin) as f64;
        let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("finite std");
        let w: Vec<f64> = (0..k * k * cin * cout)
            .map(|_| normal.sample(&mut self.rng))
            .collect();
        let kernel = self.params.add(
            format!("{name}.weight"),
            Tensor::new(&[k, k, cin, cout], w).expect("kernel shape"),
            true,
        );
        let with_bn = bn && self.use_bn;
        let bias = (!with_bn).then(|| {
            self.params
                .add(format!("{name}.bias"), Tensor::zeros(&[cout]), true)
        });
        let bn = with_bn.then(|| BnLayer {
            gamma: self
                .params
                .add(format!("{name}.bn.gamma"), Tensor::full(&[cout], 1.0), true),
            beta: self
                .params
                .add(format!("{name}.bn.beta"), Tensor::zeros(&[cout]), true),
            mean: self
                .buffers
                .add(format!("{name}.bn.running_mean"), Tensor::zeros(&[cout]), false),
            var: self
                .buffers
                .add(format!("{name}.bn.running_var"), Tensor::full(&[cout], 1.0), false),
        });
        ConvBlock { kernel, bias, bn }
    }
}

impl Model {
    /// Builds a model with seed-deterministic fan-in-scaled normal weights and
    /// zero biases, except for the output layer: its weights are scaled down
    /// by [`OUTPUT_GAIN`] and its diagonal affine channels start at
    /// [`DIAGONAL_BIAS`].
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Model, NetError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let sobel = match config.variant {
            Variant::EdgeAugmented => Some(SobelKernels::register(&mut params)),
            Variant::Baseline => None,
        };
        let edge_ch = match config.variant {
            Variant::EdgeAugmented => config.edge_channels.count(),
            Variant::Baseline => 0,
        };
        let mut b = Builder {
            params: &mut params,
            buffers: &mut buffers,
            rng: ChaCha8Rng::seed_from_u64(seed),
            use_bn: config.use_batchnorm,
        };
        let mut stages = Vec::with_capacity(4);
        let mut cin = 3;
        let mut width = config.base_channels;
        for s in 0..4 {
            if s == config.fusion_stage {
                cin += edge_ch;
            }
            let mut blocks = Vec::with_capacity(config.blocks_per_stage);
            for k in 0..config.blocks_per_stage {
                blocks.push(b.conv(&format!("stage{s}.block{k}"), 3, cin, width, 2.0, true));
                cin = width;
            }
            stages.push(blocks);
            if s < 3 {
                width *= 2;
            }
        }
        let head = (0..config.head_convs)
            .map(|k| b.conv(&format!("head.block{k}"), 3, cin, cin, 2.0, true))
            .collect();
        let out = b.conv("head.out", 1, cin, GRID_CHANNELS, OUTPUT_GAIN, false);
        // Start the clamped diagonal terms of the affine map in their active
        // range so every cell can receive location gradients.
        let out_bias = out.bias.expect("output layer has no batchnorm");
        let bias = params.get_mut(out_bias).value.data_mut();
        bias[2] = DIAGONAL_BIAS;
        bias[5] = DIAGONAL_BIAS;
        Ok(Model {
            config: config.clone(),
            params,
            buffers,
            sobel,
            stages,
            head,
            out,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore {
        &self.buffers
    }

    pub fn sobel(&self) -> Option<&SobelKernels> {
        self.sobel.as_ref()
    }

    /// `(trainable, frozen)` parameter scalar counts. Batchnorm running
    /// statistics are buffers and are not counted.
    pub fn count_parameters(&self) -> (usize, usize) {
        self.params.count()
    }

    fn block(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        blk: &ConvBlock,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
        relu: bool,
    ) -> Result<Var, ShapeError> {
        let k = g.param(store, blk.kernel);
        let bias = blk.bias.map(|b| g.param(store, b));
        let mut y = g.conv2d(x, k, bias, 1, Padding::Same)?;
        if let Some(bn) = &blk.bn {
            let gamma = g.param(store, bn.gamma);
            let beta = g.param(store, bn.beta);
            y = match mode {
                Mode::Train => {
                    let (y, s) = g.batchnorm_train(y, gamma, beta)?;
                    stats.push(s);
                    y
                }
                Mode::Infer => g.batchnorm_infer(
                    y,
                    gamma,
                    beta,
                    self.buffers.get(bn.mean).value.data(),
                    self.buffers.get(bn.var).value.data(),
                )?,
            };
        }
        Ok(if relu { g.relu(y) } else { y })
    }

    /// Records the forward pass on `images` (`B x H x W x 3`) using the
    /// parameter values in `store`, which must share this model's layout.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        images: &Tensor,
        mode: Mode,
    ) -> Result<ForwardPass, NetError> {
        let (_, h, w, c) = images.dims4()?;
        if (h, w, c) != (self.config.input_height, self.config.input_width, 3) {
            return Err(ShapeError::mismatch(
                "forward",
                format!(
                    "B x {} x {} x 3 images",
                    self.config.input_height, self.config.input_width
                ),
                images.shape(),
            )
            .into());
        }
        let mut g = Graph::new();
        let mut stats = Vec::new();
        let input = g.constant(images.clone());
        let edges = match &self.sobel {
            Some(k) => Some(edge_branch(
                &mut g,
                store,
                k,
                input,
                self.config.presmooth,
                self.config.edge_channels,
            )?),
            None => None,
        };
        let mut x = input;
        let mut edges_at = edges;
        for (s, blocks) in self.stages.iter().enumerate() {
            if s == self.config.fusion_stage {
                if let Some(e) = edges_at.take() {
                    x = g.concat_channels(x, e)?;
                }
            } else if let Some(e) = edges_at {
                // Keep the edge maps at the resolution of the next stage.
                edges_at = Some(g.maxpool2(e)?);
            }
            for blk in blocks {
                x = self.block(&mut g, store, x, blk, mode, &mut stats, true)?;
            }
            x = g.maxpool2(x)?;
        }
        for blk in &self.head {
            x = self.block(&mut g, store, x, blk, mode, &mut stats, true)?;
        }
        let grid = self.block(&mut g, store, x, &self.out, mode, &mut stats, false)?;
        Ok(ForwardPass {
            graph: g,
            grid,
            batch_stats: stats,
        })
    }

    pub fn forward_graph(&self, images: &Tensor, mode: Mode) -> Result<ForwardPass, NetError> {
        self.forward_with(&self.params, images, mode)
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, images: &Tensor) -> Result<FeatureGrid, NetError> {
        Ok(self.forward_graph(images, Mode::Infer)?.feature_grid())
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) {
        let bns: Vec<BnLayer> = self
            .stages
            .iter()
            .flatten()
            .chain(&self.head)
            .filter_map(|b| b.bn)
            .collect();
        for (bn, s) in bns.iter().zip(stats) {
            let m = BATCHNORM_MOMENTUM;
            for (r, v) in self.buffers.get_mut(bn.mean).value.data_mut().iter_mut().zip(&s.mean) {
                *r = m * *r + (1.0 - m) * v;
            }
            for (r, v) in self.buffers.get_mut(bn.var).value.data_mut().iter_mut().zip(&s.var) {
                *r = m * *r + (1.0 - m) * v;
            }
        }
    }

    /// Writes a self-describing binary checkpoint.
    pub fn save_checkpoint(
        &self,
        path: impl AsRef<Path>,
        adam: Option<&AdamConfig>,
    ) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut w, adam)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_checkpoint(
        &self,
        w: &mut impl Write,
        adam: Option<&AdamConfig>,
    ) -> Result<(), CheckpointError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_bytes(w, self.config.to_text().as_bytes())?;
        let records = self.params.len() + self.buffers.len();
        w.write_all(&(records as u32).to_le_bytes())?;
        for p in self.params.iter() {
            write_record(w, &p.name, u8::from(p.trainable), &p.value)?;
        }
        for p in self.buffers.iter() {
            write_record(w, &p.name, RECORD_BUFFER, &p.value)?;
        }
        match adam {
            None => w.write_all(&[0])?,
            Some(a) => {
                w.write_all(&[1])?;
                for v in [a.learning_rate, a.beta1, a.beta2, a.epsilon] {
                    w.write_all(&v.to_le_bytes())?;
                }
                w.write_all(&a.step_count.to_le_bytes())?;
                for p in self.params.iter() {
                    write_f64s(w, p.adam_m.data())?;
                    write_f64s(w, p.adam_v.data())?;
                }
            }
        }
        Ok(())
    }

    /// Rebuilds a model from the config embedded in the checkpoint.
    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, Option<AdamConfig>), CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_checkpoint(&mut r, None)
    }

    /// Loads a checkpoint into a model built from `expected`; parameter layout
    /// differences (e.g. an edge-augmented checkpoint into a baseline config)
    /// are shape errors.
    pub fn load_checkpoint_as(
        path: impl AsRef<Path>,
        expected: &NetworkConfig,
    ) -> Result<(Model, Option<AdamConfig>), CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_checkpoint(&mut r, Some(expected))
    }

    pub fn read_checkpoint(
        r: &mut impl Read,
        expected: Option<&NetworkConfig>,
    ) -> Result<(Model, Option<AdamConfig>), CheckpointError> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let text = String::from_utf8(read_bytes(r)?)
            .map_err(|e| CheckpointError::Config(e.to_string()))?;
        let embedded = NetworkConfig::from_text(&text).map_err(CheckpointError::Config)?;
        let config = expected.cloned().unwrap_or(embedded);
        let mut model = Model::build(&config, 0).map_err(|e| CheckpointError::Config(e.to_string()))?;

        let count = read_u32(r)? as usize;
        let mut seen = vec![false; model.params.len() + model.buffers.len()];
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(r)?)
                .map_err(|e| CheckpointError::Config(e.to_string()))?;
            let mut kind = [0u8];
            read_exact(r, &mut kind)?;
            let rank = read_u32(r)? as usize;
            let dims = (0..rank)
                .map(|_| read_u32(r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len: usize = dims.iter().product();
            let data = read_f64s(r, len)?;
            let shape_err = |detail: String| CheckpointError::Shape {
                name: name.clone(),
                detail,
            };
            let (store, offset) = if kind[0] == RECORD_BUFFER {
                (&mut model.buffers, model.params.len())
            } else {
                (&mut model.params, 0)
            };
            let id = store
                .find(&name)
                .ok_or_else(|| shape_err("not present in this network layout".into()))?;
            if std::mem::replace(&mut seen[offset + id.0], true) {
                return Err(shape_err("duplicate record".into()));
            }
            let p = store.get_mut(id);
            if p.value.shape() != dims.as_slice() {
                return Err(shape_err(format!(
                    "shape {dims:?} does not match expected {:?}",
                    p.value.shape()
                )));
            }
            if kind[0] != RECORD_BUFFER && (kind[0] == 1) != p.trainable {
                return Err(shape_err("trainable flag mismatch".into()));
            }
            p.value = Tensor::new(&dims, data).expect("length checked");
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            let name = if i < model.params.len() {
                model.params.get(ParamId(i)).name.clone()
            } else {
                model.buffers.get(ParamId(i - model.params.len())).name.clone()
            };
            return Err(CheckpointError::Shape {
                name,
                detail: "missing from checkpoint".into(),
            });
        }
        let mut flag = [0u8];
        read_exact(r, &mut flag)?;
        let adam = if flag[0] == 1 {
            let mut v = [0.0; 4];
            for x in &mut v {
                *x = read_f64(r)?;
            }
            let step_count = read_u64(r)?;
            for p in model.params.iter_mut() {
                let n = p.len();
                p.adam_m = Tensor::new(p.value.shape(), read_f64s(r, n)?).expect("shape");
                p.adam_v = Tensor::new(p.value.shape(), read_f64s(r, n)?).expect("shape");
            }
            Some(AdamConfig {
                learning_rate: v[0],
                beta1: v[1],
                beta2: v[2],
                epsilon: v[3],
                step_count,
            })
        } else {
            None
        };
        Ok((model, adam))
    }
}

const RECORD_BUFFER: u8 = 2;

fn write_bytes(w: &mut impl Write, b: &[u8]) -> std::io::Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)
}

fn write_f64s(w: &mut impl Write, data: &[f64]) -> std::io::Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_record(w: &mut impl Write, name: &str, kind: u8, t: &Tensor) -> std::io::Result<()> {
    write_bytes(w, name.as_bytes())?;
    w.write_all(&[kind])?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    write_f64s(w, t.data())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => CheckpointError::Truncated,
        _ => CheckpointError::Io(e),
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>, CheckpointError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 24 {
        return Err(CheckpointError::Truncated);
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, CheckpointError> {
    if n > 1 << 28 {
        return Err(CheckpointError::Truncated);
    }
    let mut buf = vec![0u8; n * 8];
    read_exact(r, &mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}
