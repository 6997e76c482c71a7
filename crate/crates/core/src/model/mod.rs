//! The full forecaster: twin neighbor-attention branches, a weight-shared
//! encoder, the junction fusion, and a causal decoder with an affine head.

mod check;
mod config;

pub use check::{check_model_gradients, ModelGradReport, ParamGradError};
pub use config::ModelConfig;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{
    differential_split, embed_with_pe, DecoderBlock, EncoderBlock, Linear, NeighborAttention, PositionalEncoding,
    ResidualBlock, SlidingFusion,
};
use crate::params::{xavier_uniform, Ctx, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Which neighbor a branch attends to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Forward,
    Backward,
}

impl Side {
    fn tag(self) -> &'static str {
        match self {
            Side::Forward => "forward",
            Side::Backward => "backward",
        }
    }
}

#[derive(Clone, Debug)]
struct Embeddings {
    center: ParamId,
    decoder: ParamId,
    /// `[forward part, backward part, forward difference, backward difference]`
    differential: Option<[ParamId; 4]>,
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub attention: Option<NeighborAttention>,
    pub fusion: Option<SlidingFusion>,
    pub residual: Option<ResidualBlock>,
}

#[derive(Clone, Debug)]
pub struct Junction {
    pub fusion: SlidingFusion,
    pub residual: Option<ResidualBlock>,
}

/// Intermediate values of one forward pass, for inspection in tests.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub output: Var,
    pub center_encoding: Var,
    /// Neighbor attention weights, forward branch heads then backward.
    pub attention_weights: Vec<Var>,
    pub encoder_inputs: [Var; 2],
    pub encoder_outputs: [Var; 2],
    pub memory: Var,
}

#[derive(Clone, Debug)]
pub struct Forecaster {
    config: ModelConfig,
    params: ParamStore,
    positions: PositionalEncoding,
    embeddings: Embeddings,
    branches: [Branch; 2],
    encoder: Vec<EncoderBlock>,
    junction: Junction,
    decoder: Vec<DecoderBlock>,
    head: Linear,
}

impl Forecaster {
    /// Builds the model with freshly initialized parameters. Parameter names,
    /// order, and shapes depend only on `config`; values on `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let (d_in, d) = (config.d_input, config.d_model);
        let n = config.center_len();
        let per_t = config.per_timestep_fusion_weights.then_some(n);

        let center = store.add("embed.center", xavier_uniform(d_in, d, rng));
        let differential = (!config.ablate_diff_attention).then(|| {
            ["forward", "backward", "diff_forward", "diff_backward"]
                .map(|name| store.add(format!("embed.{name}"), xavier_uniform(d_in, d, rng)))
        });
        let decoder_embed = store.add("embed.decoder", xavier_uniform(d_in, d, rng));

        let mut make_branch = |side: Side, store: &mut ParamStore| -> Result<Branch> {
            let prefix = format!("branch_{}", side.tag());
            let (attention, fusion) = if config.ablate_diff_attention {
                (None, None)
            } else {
                let attn = NeighborAttention::new(
                    store,
                    &format!("{prefix}.attention"),
                    d,
                    config.d_attn(),
                    config.heads,
                    rng,
                )?;
                let fusion = SlidingFusion::new(store, &format!("{prefix}.fusion"), 3, per_t)?;
                (Some(attn), Some(fusion))
            };
            let residual = if config.ablate_residual_layer {
                None
            } else {
                Some(ResidualBlock::new(store, &format!("{prefix}.residual"), 3, d, config.dropout, rng)?)
            };
            Ok(Branch { attention, fusion, residual })
        };
        let branches = [make_branch(Side::Forward, &mut store)?, make_branch(Side::Backward, &mut store)?];

        let encoder = (0..config.encoder_layers)
            .map(|l| {
                EncoderBlock::new(&mut store, &format!("encoder.layer{l}"), d, config.heads, config.ffn_width(), rng)
            })
            .collect::<Result<Vec<_>>>()?;

        let junction = Junction {
            fusion: SlidingFusion::new(&mut store, "junction.fusion", 2, per_t)?,
            residual: if config.ablate_residual_layer {
                None
            } else {
                Some(ResidualBlock::new(&mut store, "junction.residual", 2, d, config.dropout, rng)?)
            },
        };

        let decoder = (0..config.decoder_layers)
            .map(|l| {
                DecoderBlock::new(&mut store, &format!("decoder.layer{l}"), d, config.heads, config.ffn_width(), rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::new(&mut store, "head", d, config.target_columns.len(), rng);

        Ok(Self {
            positions: PositionalEncoding::new(n, d)?,
            embeddings: Embeddings { center, decoder: decoder_embed, differential },
            config,
            params: store,
            branches,
            encoder,
            junction,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn branch(&self, side: Side) -> &Branch {
        match side {
            Side::Forward => &self.branches[0],
            Side::Backward => &self.branches[1],
        }
    }

    pub fn junction(&self) -> &Junction {
        &self.junction
    }

    pub fn encoder(&self) -> &[EncoderBlock] {
        &self.encoder
    }

    /// Groups parameter names by their first two dotted components
    /// (`branch_forward.attention`, `encoder.layer0`, ...); the output head
    /// is a single group.
    pub fn param_group(name: &str) -> String {
        if name == "head" || name.starts_with("head.") {
            return "head".into();
        }
        name.splitn(3, '.').take(2).collect::<Vec<_>>().join(".")
    }

    pub fn param_groups(&self) -> Vec<String> {
        let mut groups: Vec<String> = Vec::new();
        for name in self.params.names() {
            let g = Self::param_group(name);
            if !groups.contains(&g) {
                groups.push(g);
            }
        }
        groups
    }

    fn check_window(&self, window: &Tensor) -> Result<()> {
        let want = (self.config.window, self.config.d_input);
        if window.shape() != want {
            return Err(Error::Shape(format!(
                "window is {}x{}, model expects {}x{}",
                window.rows(),
                window.cols(),
                want.0,
                want.1
            )));
        }
        Ok(())
    }

    /// Records the full forward pass. Output is `n × |targets|`: the
    /// one-step-ahead estimate of every target at each center position.
    pub fn forward(&self, ctx: &mut Ctx<'_>, window: &Tensor) -> Result<Var> {
        Ok(self.forward_traced(ctx, window)?.output)
    }

    pub fn forward_traced(&self, ctx: &mut Ctx<'_>, window: &Tensor) -> Result<ForwardTrace> {
        self.check_window(window)?;
        let parts = differential_split(window)?;
        let pe = &self.positions;

        let x_center = ctx.graph.constant(parts.center.clone());
        let w_center = ctx.p(self.embeddings.center);
        let h_center = embed_with_pe(ctx.graph, x_center, w_center, pe)?;

        let mut attention_weights = Vec::new();
        let mut encoder_inputs = Vec::with_capacity(2);
        match self.embeddings.differential {
            Some(ids) => {
                let embed = |ctx: &mut Ctx<'_>, x: &Tensor, id: ParamId| -> Result<Var> {
                    let xv = ctx.graph.constant(x.clone());
                    let w = ctx.p(id);
                    embed_with_pe(ctx.graph, xv, w, pe)
                };
                let h_forward = embed(ctx, &parts.forward, ids[0])?;
                let h_backward = embed(ctx, &parts.backward, ids[1])?;
                let d_forward = embed(ctx, &parts.diff_forward, ids[2])?;
                let d_backward = embed(ctx, &parts.diff_backward, ids[3])?;
                for (branch, side, diff) in
                    [(&self.branches[0], h_forward, d_forward), (&self.branches[1], h_backward, d_backward)]
                {
                    let attn = branch.attention.as_ref().expect("attention present without ablation");
                    let fusion = branch.fusion.as_ref().expect("fusion present without ablation");
                    let a = attn.forward(ctx, h_center, side)?;
                    attention_weights.extend(a.weights);
                    let fused = fusion.forward(ctx, &[diff, h_center, a.output])?;
                    let input = match &branch.residual {
                        Some(res) => res.forward(ctx, fused.fused, fused.blocks)?,
                        None => fused.fused,
                    };
                    encoder_inputs.push(input);
                }
            }
            None => {
                for branch in &self.branches {
                    let input = match &branch.residual {
                        Some(res) => {
                            let blocks = ctx.graph.interleave_rows(&[h_center, h_center, h_center])?;
                            res.forward(ctx, h_center, blocks)?
                        }
                        None => h_center,
                    };
                    encoder_inputs.push(input);
                }
            }
        }

        let mut encoder_outputs = Vec::with_capacity(2);
        for &input in &encoder_inputs {
            let mut x = input;
            for block in &self.encoder {
                x = block.forward(ctx, x)?;
            }
            encoder_outputs.push(x);
        }

        let joined = self.junction.fusion.forward(ctx, &encoder_outputs)?;
        let memory = match &self.junction.residual {
            Some(res) => res.forward(ctx, joined.fused, joined.blocks)?,
            None => joined.fused,
        };

        let output = self.decode(ctx, &parts.center, memory)?;
        Ok(ForwardTrace {
            output,
            center_encoding: h_center,
            attention_weights,
            encoder_inputs: [encoder_inputs[0], encoder_inputs[1]],
            encoder_outputs: [encoder_outputs[0], encoder_outputs[1]],
            memory,
        })
    }

    /// Decoder and output head: the center slice, embedded with its own
    /// weights plus positions, runs causal self-attention and attends to
    /// `memory`.
    pub fn decode(&self, ctx: &mut Ctx<'_>, center: &Tensor, memory: Var) -> Result<Var> {
        let xv = ctx.graph.constant(center.clone());
        let w = ctx.p(self.embeddings.decoder);
        let mut x = embed_with_pe(ctx.graph, xv, w, &self.positions)?;
        for block in &self.decoder {
            x = block.forward(ctx, x, memory)?;
        }
        self.head.forward(ctx, x)
    }

    /// Eval-mode prediction for one window.
    pub fn predict(&self, window: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.params.bind(&mut g);
        let mut ctx = Ctx::eval(&mut g, &params);
        let out = self.forward(&mut ctx, window)?;
        Ok(g.value(out).clone())
    }
}
