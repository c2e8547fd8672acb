//! Named-parameter building blocks shared by the encoders and the backbone.

use super::{Graph, ParamStore, Segment, Var};

/// Registers `{prefix}.w` (out x in) and, with `bias`, `{prefix}.b` (1 x out).
pub fn init_linear(
    store: &mut ParamStore,
    seed: u64,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    bias: bool,
    trainable: bool,
) {
    let std = (2.0 / (d_in + d_out) as f64).sqrt();
    store.normal(seed, &format!("{prefix}.w"), d_out, d_in, std, trainable);
    if bias {
        store.zeros(&format!("{prefix}.b"), 1, d_out, trainable);
    }
}

pub fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Var {
    let w = g.param(store, &format!("{prefix}.w"));
    let bias = format!("{prefix}.b");
    let b = store.contains(&bias).then(|| g.param(store, &bias));
    g.linear(x, w, b)
}

/// Two-layer ReLU perceptron `{prefix}.fc1`, `{prefix}.fc2`; the output is ReLU'd too.
pub fn init_mlp(store: &mut ParamStore, seed: u64, prefix: &str, d_in: usize, hidden: usize, d_out: usize) {
    init_linear(store, seed, &format!("{prefix}.fc1"), d_in, hidden, true, true);
    init_linear(store, seed, &format!("{prefix}.fc2"), hidden, d_out, true, true);
}

pub fn mlp(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Var {
    let h = linear(g, store, &format!("{prefix}.fc1"), x);
    let h = g.relu(h);
    let y = linear(g, store, &format!("{prefix}.fc2"), h);
    g.relu(y)
}

pub const NORM_EPS: f64 = 1e-6;

/// Pre-norm self-attention sublayer weights: `{prefix}.norm`, `{prefix}.{q,k,v,o}.w`.
pub fn init_attention(store: &mut ParamStore, seed: u64, prefix: &str, d: usize, trainable: bool) {
    store.ones(&format!("{prefix}.norm"), 1, d, trainable);
    for m in ["q", "k", "v", "o"] {
        init_linear(store, seed, &format!("{prefix}.{m}"), d, d, false, trainable);
    }
}

/// `x + W_o · attn(norm(x))`.
pub fn attention_sublayer(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    segs: &[Segment],
    heads: usize,
    causal: bool,
) -> Var {
    let gain = g.param(store, &format!("{prefix}.norm"));
    let h = g.rms_norm(x, gain, NORM_EPS);
    let q = linear(g, store, &format!("{prefix}.q"), h);
    let k = linear(g, store, &format!("{prefix}.k"), h);
    let v = linear(g, store, &format!("{prefix}.v"), h);
    let a = g.attention(q, k, v, segs, segs, heads, causal);
    let o = linear(g, store, &format!("{prefix}.o"), a);
    g.add(x, o)
}
