//! The dense convolutional network: an encoder-decoder over frame matrices
//! with skip connections, dense blocks, and optional self-attention.
//!
//! Every layer keeps the frame count T; only the intra-frame extent L is
//! halved per encoder layer and doubled per decoder layer. Parameters live
//! in a [`ParamStore`] whose insertion order fixes checkpoint layout,
//! optimizer state alignment, and initialization draws.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::framing::{self, FrameMatrix};
use crate::graph::{ConvSpec, Graph, NodeId, PaddingMode};
use crate::layers::{
    self, AttentionNodes, ConvNodes, DenseLayerNodes, NormActNodes,
};
use crate::math;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const DENSE_BLOCK_DEPTH: usize = 5;
const PRELU_INIT: f64 = 0.25;

/// Hyperparameters of one DCN instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DcnConfig {
    /// Frame length L in samples.
    pub frame_len: usize,
    /// Frame shift J in samples.
    pub frame_shift: usize,
    /// Base channel count C.
    pub channels: usize,
    /// Query/key channels E of each attention module.
    pub attn_q_channels: usize,
    /// Value channels F of each attention module.
    pub attn_v_channels: usize,
    /// Time extent m of dense-block kernels (2 causal, 3 non-causal).
    pub dense_kernel_time: usize,
    pub causal: bool,
    pub use_attention: bool,
    pub use_dilation: bool,
    /// Number of downsampling encoder layers.
    pub encoder_depth: usize,
    /// Downsampling factor along L per encoder layer.
    pub downsample_rate: usize,
}

impl DcnConfig {
    /// Full-size causal configuration: L=512, J=256, C=64, E=5, F=32, m=2.
    pub fn causal_default() -> Self {
        DcnConfig {
            frame_len: 512,
            frame_shift: 256,
            channels: 64,
            attn_q_channels: 5,
            attn_v_channels: 32,
            dense_kernel_time: 2,
            causal: true,
            use_attention: true,
            use_dilation: false,
            encoder_depth: 6,
            downsample_rate: 2,
        }
    }

    /// Full-size non-causal configuration (m=3).
    pub fn non_causal_default() -> Self {
        DcnConfig {
            dense_kernel_time: 3,
            causal: false,
            ..Self::causal_default()
        }
    }

    /// Desk-scale model: L=64, J=32, C=8, E=2, F=4, two encoder layers.
    pub fn tiny(causal: bool) -> Self {
        DcnConfig {
            frame_len: 64,
            frame_shift: 32,
            channels: 8,
            attn_q_channels: 2,
            attn_v_channels: 4,
            dense_kernel_time: if causal { 2 } else { 3 },
            causal,
            use_attention: true,
            use_dilation: false,
            encoder_depth: 2,
            downsample_rate: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0
            || self.frame_shift == 0
            || self.frame_shift > self.frame_len
        {
            return Err(Error::InvalidConfig(format!(
                "frame_len {} / frame_shift {} must satisfy L >= J >= 1",
                self.frame_len, self.frame_shift
            )));
        }
        if self.channels == 0
            || self.attn_q_channels == 0
            || self.attn_v_channels == 0
            || self.dense_kernel_time == 0
        {
            return Err(Error::InvalidConfig(String::from(
                "channels, attention channels, and kernel time extent must be positive",
            )));
        }
        if self.downsample_rate < 2 {
            return Err(Error::InvalidConfig(String::from(
                "downsample_rate must be at least 2",
            )));
        }
        let mut extent = self.frame_len;
        for layer in 0..self.encoder_depth {
            if extent % self.downsample_rate != 0 {
                return Err(Error::InvalidConfig(format!(
                    "frame_len {} not divisible by rate {} at encoder layer {}",
                    self.frame_len,
                    self.downsample_rate,
                    layer + 1
                )));
            }
            extent /= self.downsample_rate;
        }
        Ok(())
    }

    /// Intra-frame extents through the encoder, `[L, L/r, .., L/r^depth]`.
    pub fn encoder_extents(&self) -> Vec<usize> {
        let mut extents = Vec::with_capacity(self.encoder_depth + 1);
        let mut extent = self.frame_len;
        extents.push(extent);
        for _ in 0..self.encoder_depth {
            extent /= self.downsample_rate;
            extents.push(extent);
        }
        extents
    }

    /// Dense-block time dilations, exponentially increasing when enabled.
    pub fn dense_dilations(&self) -> [usize; DENSE_BLOCK_DEPTH] {
        if self.use_dilation {
            [1, 2, 4, 8, 16]
        } else {
            [1; DENSE_BLOCK_DEPTH]
        }
    }

    pub fn causality_spec(&self) -> CausalitySpec {
        CausalitySpec {
            lookback_frames: None,
            lookahead_frames: if self.causal { Some(0) } else { None },
        }
    }
}

/// Frame context contract of a model; `None` means the whole utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CausalitySpec {
    pub lookback_frames: Option<usize>,
    pub lookahead_frames: Option<usize>,
}

/// Stable handle to one parameter tensor of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named parameter tensors in deterministic insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    fn add(&mut self, name: String, tensor: Tensor) -> ParamId {
        let id = ParamId(self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter_mut())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Scalar count over parameters whose name starts with `prefix`.
    pub fn value_count_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    #[cfg(test)]
    pub(crate) fn push_for_test(&mut self, name: &str, tensor: Tensor) -> ParamId {
        self.add(String::from(name), tensor)
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvP {
    kernel: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct NormActP {
    gamma: ParamId,
    beta: ParamId,
    slopes: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct DenseLayerP {
    conv: ConvP,
    norm: NormActP,
}

#[derive(Debug, Clone)]
struct DenseBlockP {
    layers: Vec<DenseLayerP>,
}

#[derive(Debug, Clone, Copy)]
struct AttentionP {
    query: ConvP,
    key: ConvP,
    value: ConvP,
}

#[derive(Debug, Clone)]
struct AttnProjP {
    attn: AttentionP,
    proj: ConvP,
    proj_norm: NormActP,
}

#[derive(Debug, Clone)]
struct EncoderLayerP {
    down: ConvP,
    down_norm: NormActP,
    attn: Option<AttnProjP>,
    dense: DenseBlockP,
}

#[derive(Debug, Clone)]
struct DecoderLayerP {
    up_kernels: Vec<ConvP>,
    up_norm: NormActP,
    attn: Option<AttnProjP>,
    dense: DenseBlockP,
}

/// Channel count and intra-frame extent of one stage (T is preserved by
/// every stage, so it is not part of the audit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub channels: usize,
    pub l_extent: usize,
}

/// Per-stage shape schedule recorded at build time.
#[derive(Debug, Clone, Default)]
pub struct ShapeAudit {
    pub entries: Vec<LayerShape>,
    pub encoder_l_extents: Vec<usize>,
    pub decoder_l_extents: Vec<usize>,
}

/// A built network: hyperparameters, parameters, and the shape audit.
#[derive(Debug, Clone)]
pub struct DcnModel {
    config: DcnConfig,
    store: ParamStore,
    input_conv: ConvP,
    input_dense: DenseBlockP,
    encoder: Vec<EncoderLayerP>,
    decoder: Vec<DecoderLayerP>,
    output_conv: ConvP,
    audit: ShapeAudit,
}

struct Builder {
    store: ParamStore,
    rng: ChaCha20Rng,
}

impl Builder {
    fn conv(&mut self, name: &str, c_out: usize, c_in: usize, m: usize, n: usize) -> ConvP {
        let fan_in = (c_in * m * n) as f64;
        let bound = 1.0 / math::sqrt(fan_in);
        let data: Vec<f64> = (0..c_out * c_in * m * n)
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect();
        let kernel = self.store.add(
            format!("{name}.kernel"),
            Tensor::new(vec![c_out, c_in, m, n], data).expect("kernel shape"),
        );
        let bias = self
            .store
            .add(format!("{name}.bias"), Tensor::zeros(vec![c_out]));
        ConvP { kernel, bias }
    }

    fn norm_act(&mut self, name: &str, l_feat: usize, channels: usize) -> NormActP {
        let gamma = self
            .store
            .add(format!("{name}.gamma"), Tensor::full(vec![l_feat], 1.0));
        let beta = self
            .store
            .add(format!("{name}.beta"), Tensor::zeros(vec![l_feat]));
        let slopes = self.store.add(
            format!("{name}.slopes"),
            Tensor::full(vec![channels], PRELU_INIT),
        );
        NormActP {
            gamma,
            beta,
            slopes,
        }
    }

    fn dense_block(&mut self, name: &str, cfg: &DcnConfig, l_feat: usize) -> DenseBlockP {
        let c = cfg.channels;
        let m = cfg.dense_kernel_time;
        let layers = (0..DENSE_BLOCK_DEPTH)
            .map(|layer| {
                let c_in = (layer + 1) * c;
                let base = format!("{name}.l{}", layer + 1);
                DenseLayerP {
                    conv: self.conv(&format!("{base}.conv"), c, c_in, m, 3),
                    norm: self.norm_act(&format!("{base}.norm"), l_feat, c),
                }
            })
            .collect();
        DenseBlockP { layers }
    }

    fn attention(&mut self, name: &str, cfg: &DcnConfig, l_feat: usize) -> AttnProjP {
        let (c, e, f) = (cfg.channels, cfg.attn_q_channels, cfg.attn_v_channels);
        AttnProjP {
            attn: AttentionP {
                query: self.conv(&format!("{name}.attn.q"), e, c, 1, 1),
                key: self.conv(&format!("{name}.attn.k"), e, c, 1, 1),
                value: self.conv(&format!("{name}.attn.v"), f, c, 1, 1),
            },
            proj: self.conv(&format!("{name}.proj"), c, c + f, 1, 1),
            proj_norm: self.norm_act(&format!("{name}.proj_norm"), l_feat, c),
        }
    }
}

/// Builds a model with deterministic initialization: kernels uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero, layer-norm gains one,
/// PReLU slopes 0.25; draw order follows parameter insertion order.
pub fn build_dcn(config: &DcnConfig, seed: u64) -> Result<DcnModel> {
    config.validate()?;
    let mut b = Builder {
        store: ParamStore::default(),
        rng: ChaCha20Rng::seed_from_u64(seed),
    };
    let c = config.channels;
    let m = config.dense_kernel_time;
    let extents = config.encoder_extents();
    let mut audit = ShapeAudit {
        encoder_l_extents: extents.clone(),
        decoder_l_extents: Vec::new(),
        entries: Vec::new(),
    };

    let input_conv = b.conv("input_conv", c, 1, 1, 1);
    let input_dense = b.dense_block("enc0.dense", config, extents[0]);
    audit.entries.push(LayerShape {
        name: String::from("enc0"),
        channels: c,
        l_extent: extents[0],
    });

    let mut encoder = Vec::with_capacity(config.encoder_depth);
    for layer in 1..=config.encoder_depth {
        let l_feat = extents[layer];
        let name = format!("enc{layer}");
        let down = b.conv(&format!("{name}.down"), c, c, m, 3);
        let down_norm = b.norm_act(&format!("{name}.down_norm"), l_feat, c);
        let attn = config
            .use_attention
            .then(|| b.attention(&name, config, l_feat));
        let dense = b.dense_block(&format!("{name}.dense"), config, l_feat);
        encoder.push(EncoderLayerP {
            down,
            down_norm,
            attn,
            dense,
        });
        audit.entries.push(LayerShape {
            name,
            channels: c,
            l_extent: l_feat,
        });
    }

    let mut decoder = Vec::with_capacity(config.encoder_depth);
    for layer in 0..config.encoder_depth {
        // Decoder layer `layer` upsamples extents[depth - layer] -> next.
        let l_out = extents[config.encoder_depth - layer - 1];
        let name = format!("dec{layer}");
        let rate = config.downsample_rate;
        let up_kernels = (0..rate)
            .map(|p| b.conv(&format!("{name}.up{p}"), c, 2 * c, m, 3))
            .collect();
        let up_norm = b.norm_act(&format!("{name}.up_norm"), l_out, c);
        let attn = config
            .use_attention
            .then(|| b.attention(&name, config, l_out));
        let dense = b.dense_block(&format!("{name}.dense"), config, l_out);
        decoder.push(DecoderLayerP {
            up_kernels,
            up_norm,
            attn,
            dense,
        });
        audit.decoder_l_extents.push(l_out);
        audit.entries.push(LayerShape {
            name,
            channels: c,
            l_extent: l_out,
        });
    }

    let output_conv = b.conv("output_conv", 1, 2 * c, 1, 1);
    audit.entries.push(LayerShape {
        name: String::from("output"),
        channels: 1,
        l_extent: extents[0],
    });

    Ok(DcnModel {
        config: config.clone(),
        store: b.store,
        input_conv,
        input_dense,
        encoder,
        decoder,
        output_conv,
        audit,
    })
}

/// One forward pass: the tape, the enhanced-frame output node, parameter
/// leaves aligned with store order, and every attention weight matrix.
pub struct ForwardPass {
    pub graph: Graph,
    pub output: NodeId,
    pub param_leaves: Vec<NodeId>,
    pub attention_weights: Vec<NodeId>,
}

impl DcnModel {
    pub fn config(&self) -> &DcnConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn audit(&self) -> &ShapeAudit {
        &self.audit
    }

    fn conv_nodes(&self, leaves: &[NodeId], p: ConvP) -> ConvNodes {
        ConvNodes {
            kernel: leaves[p.kernel.0],
            bias: leaves[p.bias.0],
        }
    }

    fn norm_nodes(&self, leaves: &[NodeId], p: NormActP) -> NormActNodes {
        NormActNodes {
            gamma: leaves[p.gamma.0],
            beta: leaves[p.beta.0],
            eps: LAYER_NORM_EPS,
            slopes: leaves[p.slopes.0],
        }
    }

    fn attention_nodes(&self, leaves: &[NodeId], p: &AttentionP) -> AttentionNodes {
        AttentionNodes {
            query: self.conv_nodes(leaves, p.query),
            key: self.conv_nodes(leaves, p.key),
            value: self.conv_nodes(leaves, p.value),
        }
    }

    fn dense_nodes(&self, leaves: &[NodeId], p: &DenseBlockP) -> Vec<DenseLayerNodes> {
        p.layers
            .iter()
            .map(|layer| DenseLayerNodes {
                conv: self.conv_nodes(leaves, layer.conv),
                norm: self.norm_nodes(leaves, layer.norm),
            })
            .collect()
    }

    /// Attention module followed by concat with its input and the 1x1
    /// projection back to C channels.
    fn run_attention(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        p: &AttnProjP,
        x: NodeId,
        maps: &mut Vec<NodeId>,
    ) -> Result<NodeId> {
        let attn = layers::self_attention(
            g,
            x,
            &self.attention_nodes(leaves, &p.attn),
            self.config.causal,
        )?;
        maps.push(attn.weights);
        let cat = g.concat(&[attn.out, x])?;
        let proj = self.conv_nodes(leaves, p.proj);
        let projected = g.conv2d(cat, proj.kernel, proj.bias, ConvSpec::unit(PaddingMode::Valid))?;
        layers::norm_act(g, projected, &self.norm_nodes(leaves, p.proj_norm))
    }

    /// Records the whole network on a fresh tape. With `trainable`,
    /// parameter leaves carry gradients.
    pub fn forward(&self, frames: &FrameMatrix, trainable: bool) -> Result<ForwardPass> {
        if frames.frame_len != self.config.frame_len {
            return Err(Error::InvalidConfig(format!(
                "frame length {} does not match model frame_len {}",
                frames.frame_len, self.config.frame_len
            )));
        }
        let mut g = Graph::new();
        let param_leaves: Vec<NodeId> = self
            .store
            .tensors()
            .iter()
            .map(|t| g.leaf_from(t.shape().to_vec(), t.data().to_vec(), trainable))
            .collect();
        let frames_node = g.leaf(&frames.frames);
        let (output, attention_weights) =
            self.forward_on(&mut g, &param_leaves, frames_node)?;
        Ok(ForwardPass {
            graph: g,
            output,
            param_leaves,
            attention_weights,
        })
    }

    /// Network body over an existing `[T, L]` frame node.
    pub fn forward_on(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        frames_node: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let cfg = &self.config;
        let t_count = g.shape(frames_node)[0];
        let causal = cfg.causal;
        let dilations = cfg.dense_dilations();
        let mut maps = Vec::new();

        let input = g.reshape(frames_node, vec![1, t_count, cfg.frame_len])?;
        let in_conv = self.conv_nodes(leaves, self.input_conv);
        let mut h = g.conv2d(input, in_conv.kernel, in_conv.bias, ConvSpec::unit(PaddingMode::Valid))?;
        h = layers::dense_block(
            g,
            h,
            &self.dense_nodes(leaves, &self.input_dense),
            causal,
            &dilations,
        )?
        .out;

        let mut enc_outs = vec![h];
        for layer in &self.encoder {
            let down = self.conv_nodes(leaves, layer.down);
            let spec = ConvSpec {
                stride: (1, cfg.downsample_rate),
                padding: layers::time_padding(causal),
                dilation_time: 1,
            };
            let mut d = g.conv2d(*enc_outs.last().expect("nonempty"), down.kernel, down.bias, spec)?;
            d = layers::norm_act(g, d, &self.norm_nodes(leaves, layer.down_norm))?;
            let pre_dense = match &layer.attn {
                Some(attn) => self.run_attention(g, leaves, attn, d, &mut maps)?,
                None => d,
            };
            let block = layers::dense_block(
                g,
                pre_dense,
                &self.dense_nodes(leaves, &layer.dense),
                causal,
                &dilations,
            )?;
            enc_outs.push(block.out);
        }

        let depth = cfg.encoder_depth;
        let mut u = *enc_outs.last().expect("nonempty");
        for (k, layer) in self.decoder.iter().enumerate() {
            let skip = enc_outs[depth - k];
            if g.shape(skip) != g.shape(u) {
                return Err(Error::SkipShapeMismatch {
                    layer: k,
                    encoder: g.shape(skip).to_vec(),
                    decoder: g.shape(u).to_vec(),
                });
            }
            let cat = g.concat(&[u, skip])?;
            let kernels: Vec<ConvNodes> = layer
                .up_kernels
                .iter()
                .map(|&p| self.conv_nodes(leaves, p))
                .collect();
            let spec = ConvSpec {
                stride: (1, 1),
                padding: layers::time_padding(causal),
                dilation_time: 1,
            };
            let mut up =
                layers::subpixel_conv(g, cat, &kernels, (1, cfg.downsample_rate), spec)?;
            up = layers::norm_act(g, up, &self.norm_nodes(leaves, layer.up_norm))?;
            let pre_dense = match &layer.attn {
                Some(attn) => self.run_attention(g, leaves, attn, up, &mut maps)?,
                None => up,
            };
            u = layers::dense_block(
                g,
                pre_dense,
                &self.dense_nodes(leaves, &layer.dense),
                causal,
                &dilations,
            )?
            .out;
        }

        let final_cat = g.concat(&[u, enc_outs[0]])?;
        let out_conv = self.conv_nodes(leaves, self.output_conv);
        let out3 = g.conv2d(
            final_cat,
            out_conv.kernel,
            out_conv.bias,
            ConvSpec::unit(PaddingMode::Valid),
        )?;
        let output = g.reshape(out3, vec![t_count, cfg.frame_len])?;
        Ok((output, maps))
    }

    /// Frames, enhances, and reconstructs a whole utterance; the output has
    /// the input's length.
    pub fn enhance(&self, y: &[f64]) -> Result<Vec<f64>> {
        let frames = framing::frame_signal(y, self.config.frame_len, self.config.frame_shift)?;
        let mut pass = self.forward(&frames, false)?;
        let wave = pass
            .graph
            .overlap_add(pass.output, self.config.frame_shift, y.len())?;
        Ok(pass.graph.value(wave).to_vec())
    }

    /// Row-stochastic T x T attention matrices of every module, in
    /// encoder-then-decoder order. Row i holds the weights with which output
    /// frame i attends over all (causally reachable) frames.
    pub fn attention_maps(&self, y: &[f64]) -> Result<Vec<Tensor>> {
        if !self.config.use_attention {
            return Err(Error::AttentionDisabled);
        }
        let frames = framing::frame_signal(y, self.config.frame_len, self.config.frame_shift)?;
        let pass = self.forward(&frames, false)?;
        Ok(pass
            .attention_weights
            .iter()
            .map(|&id| {
                Tensor::new(pass.graph.shape(id).to_vec(), pass.graph.value(id).to_vec())
                    .expect("weight shape")
            })
            .collect())
    }
}
