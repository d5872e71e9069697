use rand::Rng;

use super::{Ctx, Mode, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::params::{Group, ParamStore};
use crate::tensor::{ParamId, Tensor, Var};

/// Which axis of a `[K, τ, F]` batch forms the graph nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// Nodes are features; each node carries its `τ` time values.
    Spatial,
    /// Nodes are time steps; each node carries its `F` feature values.
    Temporal,
}

/// Single-head dynamic graph attention over a complete graph with
/// self-loops.
///
/// For nodes `x_j` of dimension `d`:
///
/// ```text
/// e_jk = w2ᵀ LeakyReLU(W1 · [x_j ‖ x_k]) + b_jk
/// α_jk = softmax_k(e_jk)
/// z_j  = sigmoid(Σ_k α_jk · x_k W1[d..2d, d..2d])
/// ```
///
/// `W1` is `[2d, 2d]`, `w2` is `[2d]`, `b` is `[n, n]`. The message uses the
/// block of `W1` that maps the neighbor half of the pair to the neighbor half
/// of the hidden vector, so messages stay `d`-dimensional.
#[derive(Clone, Debug)]
pub struct GraphAttention {
    pub orientation: Orientation,
    pub w1: ParamId,
    pub w2: ParamId,
    pub bias: ParamId,
    pub nodes: usize,
    pub node_dim: usize,
    pub slope: f64,
    /// Adds the layer input to its output.
    pub residual: bool,
}

impl GraphAttention {
    /// `tau` and `features` describe the `[K, τ, F]` batches this layer sees.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        group: Group,
        name: &str,
        orientation: Orientation,
        tau: usize,
        features: usize,
        residual: bool,
        rng: &mut R,
    ) -> Self {
        let (nodes, node_dim) = match orientation {
            Orientation::Spatial => (features, tau),
            Orientation::Temporal => (tau, features),
        };
        let h = 2 * node_dim;
        let bound = 1.0 / (h as f64).sqrt();
        let mut w1 = Tensor::uniform(&[h, h], -bound, bound, rng);
        // The message block feeds a sigmoid: Glorot bound with gain 4 keeps
        // stacked layers from shrinking the signal.
        let msg_bound = 4.0 * (3.0 / node_dim as f64).sqrt();
        for r in node_dim..h {
            for c in node_dim..h {
                w1.data_mut()[r * h + c] = rng.random_range(-msg_bound..msg_bound);
            }
        }
        let w1 = store.add(format!("{name}.w1"), group, w1);
        let w2 = store.add(format!("{name}.w2"), group, Tensor::uniform(&[h], -bound, bound, rng));
        let bias = store.add(format!("{name}.bias"), group, Tensor::zeros(&[nodes, nodes]));
        GraphAttention {
            orientation,
            w1,
            w2,
            bias,
            nodes,
            node_dim,
            slope: LEAKY_SLOPE,
            residual,
        }
    }

    fn to_nodes(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let s = ctx.tape.shape(x).to_vec();
        let (tau, feat) = match self.orientation {
            Orientation::Spatial => (self.node_dim, self.nodes),
            Orientation::Temporal => (self.nodes, self.node_dim),
        };
        if s.len() != 3 || s[1] != tau || s[2] != feat {
            return Err(Error::dim(
                "graph_attention",
                format!("expected [K, {tau}, {feat}], got {s:?}"),
            ));
        }
        match self.orientation {
            Orientation::Spatial => ctx.tape.permute(x, &[0, 2, 1]),
            Orientation::Temporal => Ok(x),
        }
    }

    fn from_nodes(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match self.orientation {
            Orientation::Spatial => ctx.tape.permute(x, &[0, 2, 1]),
            Orientation::Temporal => Ok(x),
        }
    }

    /// Attention weights `[K, n, n]` for node-major input `[K, n, d]`.
    pub fn node_scores(&self, ctx: &mut Ctx, nodes: Var) -> Result<Var> {
        let d = self.node_dim;
        let w1 = ctx.param(self.w1);
        let w2 = ctx.param(self.w2);
        let b = ctx.param(self.bias);
        let t = &mut ctx.tape;
        let w_self = t.narrow(w1, 0, 0, d)?;
        let w_nbr = t.narrow(w1, 0, d, d)?;
        let left = t.matmul(nodes, w_self)?;
        let right = t.matmul(nodes, w_nbr)?;
        let e = t.pair_scores(left, right, w2, self.slope)?;
        let e = t.add(e, b)?;
        t.softmax_last(e)
    }

    /// Attention weights for a `[K, τ, F]` batch.
    pub fn scores(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let nodes = self.to_nodes(ctx, x)?;
        self.node_scores(ctx, nodes)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let d = self.node_dim;
        let nodes = self.to_nodes(ctx, x)?;
        let alpha = self.node_scores(ctx, nodes)?;
        let w1 = ctx.param(self.w1);
        let t = &mut ctx.tape;
        let w_msg = t.narrow(w1, 0, d, d)?;
        let w_msg = t.narrow(w_msg, 1, d, d)?;
        let msg = t.matmul(nodes, w_msg)?;
        let agg = t.matmul(alpha, msg)?;
        let z = t.sigmoid(agg)?;
        let z = self.from_nodes(ctx, z)?;
        if self.residual {
            ctx.tape.add(x, z)
        } else {
            Ok(z)
        }
    }

    /// Attention weights for a concrete batch, evaluated without recording
    /// gradients.
    pub fn attention(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut ctx = Ctx::new(store, Mode::Eval);
        let xv = ctx.input(x.clone());
        let a = self.scores(&mut ctx, xv)?;
        Ok(ctx.value(a).clone())
    }
}
