//! Decoder-only transformer over prompt byte tokens plus one trailing fused
//! sensing token, with low-rank adapters on both feed-forward linears.

use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{attention_sublayer, init_attention, init_linear, NORM_EPS};
use crate::nn::{Graph, Mat, ParamStore, Segment, Var};
use crate::prompt::{PropagationPrompt, VOCAB_SIZE};

pub const TOKEN_EMBEDDING: &str = "embed.token";
pub const POSITION_EMBEDDING: &str = "embed.pos";
/// Prefix of the frozen base weights.
pub const BASE_PREFIX: &str = "backbone.";
/// Prefix of the adapter factors.
pub const LORA_PREFIX: &str = "lora.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_width: usize,
    pub max_seq_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            n_layers: 2,
            n_heads: 4,
            ffn_width: 512,
            max_seq_len: 96,
            lora_rank: 8,
            lora_alpha: 32.0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {} and n_layers must be >= 1",
                self.d_model, self.n_heads
            )));
        }
        if self.ffn_width == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("ffn_width and max_seq_len must be positive".into()));
        }
        if self.lora_rank == 0 || self.lora_rank >= self.d_model.min(self.ffn_width) {
            return Err(Error::Config(format!(
                "LoRA rank {} must be in [1, min(d_in, d_out))",
                self.lora_rank
            )));
        }
        if !(self.lora_alpha > 0.0) {
            return Err(Error::Config("lora_alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }

    /// Scalar count of all adapter factors: `sum r * (d_in + d_out)`.
    pub fn lora_parameter_count(&self) -> usize {
        self.n_layers * 2 * self.lora_rank * (self.d_model + self.ffn_width)
    }

    fn ffn_dims(&self) -> [(&'static str, usize, usize); 2] {
        [
            ("fc1", self.d_model, self.ffn_width),
            ("fc2", self.ffn_width, self.d_model),
        ]
    }
}

/// Frozen base matrix with trainable low-rank factors.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer {
    /// d_out x d_in
    pub w0: Mat,
    /// r x d_in
    pub a: Mat,
    /// d_out x r
    pub b: Mat,
    pub alpha: f64,
    pub r: usize,
}

impl LoraLayer {
    /// Random base and `A`, zero `B`.
    pub fn new(seed: u64, d_in: usize, d_out: usize, r: usize, alpha: f64) -> Self {
        Self {
            w0: crate::nn::init_normal(seed, "w0", d_out, d_in, (1.0 / d_in as f64).sqrt()),
            a: crate::nn::init_normal(seed, "a", r, d_in, (1.0 / d_in as f64).sqrt()),
            b: Mat::zeros((d_out, r)),
            alpha,
            r,
        }
    }

    fn check(&self) -> Result<()> {
        let (d_out, d_in) = self.w0.dim();
        if self.a.dim() != (self.r, d_in) || self.b.dim() != (d_out, self.r) {
            return Err(Error::Shape(format!(
                "LoRA factors {:?}/{:?} do not match base {:?} at rank {}",
                self.a.dim(),
                self.b.dim(),
                self.w0.dim(),
                self.r
            )));
        }
        Ok(())
    }
}

/// `W0 x + (alpha/r) B (A x)` for each row `x` of `x`, without forming the merged matrix.
pub fn lora_forward(x: &Mat, layer: &LoraLayer) -> Result<Mat> {
    layer.check()?;
    if x.ncols() != layer.w0.ncols() {
        return Err(Error::Shape(format!(
            "input width {} vs layer input {}",
            x.ncols(),
            layer.w0.ncols()
        )));
    }
    let base = x.dot(&layer.w0.t());
    let low = x.dot(&layer.a.t()).dot(&layer.b.t());
    Ok(base + low * (layer.alpha / layer.r as f64))
}

/// `W0 + (alpha/r) B A`.
pub fn merge_lora(layer: &LoraLayer) -> Result<Mat> {
    layer.check()?;
    Ok(&layer.w0 + &(layer.b.dot(&layer.a) * (layer.alpha / layer.r as f64)))
}

pub fn init_backbone(store: &mut ParamStore, seed: u64, cfg: &BackboneConfig) -> Result<()> {
    cfg.validate()?;
    let d = cfg.d_model;
    store.normal(seed, TOKEN_EMBEDDING, VOCAB_SIZE, d, 0.1, true);
    store.normal(seed, POSITION_EMBEDDING, cfg.max_seq_len, d, 0.02, true);
    for l in 0..cfg.n_layers {
        let base = format!("{BASE_PREFIX}block{l}");
        init_attention(store, seed, &format!("{base}.attn"), d, false);
        store.ones(&format!("{base}.ffn.norm"), 1, d, false);
        for (name, d_in, d_out) in cfg.ffn_dims() {
            init_linear(store, seed, &format!("{base}.ffn.{name}"), d_in, d_out, true, false);
            let lora = format!("{LORA_PREFIX}block{l}.{name}");
            store.normal(
                seed,
                &format!("{lora}.a"),
                cfg.lora_rank,
                d_in,
                (1.0 / d_in as f64).sqrt(),
                false,
            );
            store.zeros(&format!("{lora}.b"), d_out, cfg.lora_rank, false);
        }
    }
    Ok(())
}

/// Canonical prompt tokens followed by the separator.
pub fn prompt_tokens(prompt: &PropagationPrompt) -> Result<Vec<usize>> {
    prompt.tokens()
}

/// Embedding rows of the prompt tokens (separator included).
pub fn encode_prompt(prompt: &PropagationPrompt, store: &ParamStore) -> Result<Mat> {
    let tokens = prompt_tokens(prompt)?;
    Ok(store.value(TOKEN_EMBEDDING).select(Axis(0), &tokens))
}

fn ffn_linear(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &BackboneConfig,
    layer: usize,
    name: &str,
    x: Var,
    lora: bool,
) -> Var {
    let base = format!("{BASE_PREFIX}block{layer}.ffn.{name}");
    let w = g.param(store, &format!("{base}.w"));
    let b = g.param(store, &format!("{base}.b"));
    let y = g.linear(x, w, Some(b));
    if !lora {
        return y;
    }
    let prefix = format!("{LORA_PREFIX}block{layer}.{name}");
    let a = g.param(store, &format!("{prefix}.a"));
    let bb = g.param(store, &format!("{prefix}.b"));
    let ax = g.linear(x, a, None);
    let bax = g.linear(ax, bb, None);
    let scaled = g.scale(bax, cfg.lora_scale());
    g.add(y, scaled)
}

/// Decoder blocks over already embedded rows (positions included).
pub fn decoder_blocks(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &BackboneConfig,
    x: Var,
    segs: &[Segment],
    lora: bool,
) -> Var {
    let mut x = x;
    for l in 0..cfg.n_layers {
        let base = format!("{BASE_PREFIX}block{l}");
        x = attention_sublayer(g, store, &format!("{base}.attn"), x, segs, cfg.n_heads, true);
        let gain = g.param(store, &format!("{base}.ffn.norm"));
        let h = g.rms_norm(x, gain, NORM_EPS);
        let h = ffn_linear(g, store, cfg, l, "fc1", h, lora);
        let h = g.gelu(h);
        let h = ffn_linear(g, store, cfg, l, "fc2", h, lora);
        x = g.add(x, h);
    }
    x
}

/// Batched backbone pass. Sample `i` is `tokens[i]` followed by row `i` of
/// `fused`. Returns the hidden rows and the segment of each sample.
pub fn backbone_batch(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &BackboneConfig,
    tokens: &[Vec<usize>],
    fused: Var,
    lora: bool,
) -> Result<(Var, Vec<Segment>)> {
    let n = tokens.len();
    assert_eq!(g.shape(fused).0, n, "one fused row per sample");
    if let Some(t) = tokens.iter().find(|t| t.len() + 1 > cfg.max_seq_len) {
        return Err(Error::Length {
            len: t.len() + 1,
            max: cfg.max_seq_len,
        });
    }
    let segs = Segment::packed(tokens.iter().map(|t| t.len() + 1));
    let flat: Vec<usize> = tokens.iter().flatten().copied().collect();
    let x = if flat.is_empty() {
        fused
    } else {
        let table = g.param(store, TOKEN_EMBEDDING);
        let emb = g.gather(table, &flat);
        let all = g.vcat(&[emb, fused]);
        let mut order = Vec::with_capacity(flat.len() + n);
        let mut k = 0;
        for (i, t) in tokens.iter().enumerate() {
            order.extend(k..k + t.len());
            k += t.len();
            order.push(flat.len() + i);
        }
        g.gather(all, &order)
    };
    let pos = g.param(store, POSITION_EMBEDDING);
    let positions: Vec<usize> = segs.iter().flat_map(|s| 0..s.len).collect();
    let pos = g.gather(pos, &positions);
    let x = g.add(x, pos);
    Ok((decoder_blocks(g, store, cfg, x, &segs, lora), segs))
}

/// Hidden states for one sequence: prompt embedding rows then the fused token.
pub fn backbone_forward(
    store: &ParamStore,
    cfg: &BackboneConfig,
    prompt_embeddings: &Mat,
    fused_token: &Array1<f64>,
    lora: bool,
) -> Result<Mat> {
    let len = prompt_embeddings.nrows() + 1;
    if len > cfg.max_seq_len {
        return Err(Error::Length {
            len,
            max: cfg.max_seq_len,
        });
    }
    if fused_token.len() != cfg.d_model || prompt_embeddings.ncols() != cfg.d_model {
        return Err(Error::Shape(format!(
            "inputs must have width d_model = {}",
            cfg.d_model
        )));
    }
    let rows = ndarray::concatenate(
        Axis(0),
        &[prompt_embeddings.view(), fused_token.view().insert_axis(Axis(0))],
    )
    .expect("widths checked");
    let mut g = Graph::new();
    let x = g.constant(rows);
    let pos = g.param(store, POSITION_EMBEDDING);
    let pos = g.gather(pos, &(0..len).collect::<Vec<_>>());
    let x = g.add(x, pos);
    let y = decoder_blocks(&mut g, store, cfg, x, &[Segment::new(0, len)], lora);
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_normal;
    use ndarray::array;

    fn tiny() -> BackboneConfig {
        BackboneConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            ffn_width: 24,
            max_seq_len: 80,
            lora_rank: 4,
            lora_alpha: 16.0,
        }
    }

    fn prompt() -> PropagationPrompt {
        PropagationPrompt {
            carrier_frequency_hz: 60e9,
            bandwidth_hz: 2e9,
            distance_m: 23.4,
            azimuth_deg: 12.5,
            elevation_deg: -3.2,
        }
    }

    #[test]
    fn lora_hand_case_and_zero_b() {
        // scalar factors at r = 2, zero-padded to rank-2 shapes
        let layer = LoraLayer {
            w0: array![[2.0]],
            a: array![[1.0], [0.0]],
            b: array![[3.0, 0.0]],
            alpha: 4.0,
            r: 2,
        };
        assert_eq!(lora_forward(&array![[1.0]], &layer).unwrap()[[0, 0]], 8.0);
        assert_eq!(merge_lora(&layer).unwrap()[[0, 0]], 8.0);

        let fresh = LoraLayer::new(3, 12, 10, 8, 32.0);
        let x = init_normal(4, "x", 5, 12, 1.0);
        assert_eq!(lora_forward(&x, &fresh).unwrap(), x.dot(&fresh.w0.t()));
        assert_eq!(merge_lora(&fresh).unwrap(), fresh.w0);
        assert_eq!(fresh.alpha / fresh.r as f64, 4.0);
    }

    #[test]
    fn merged_matches_factored() {
        for seed in 0..20 {
            let mut layer = LoraLayer::new(seed, 20, 14, 4, 32.0);
            layer.b = init_normal(seed, "b", 14, 4, 0.5);
            let x = init_normal(seed + 100, "x", 3, 20, 1.0);
            let wx = x.dot(&merge_lora(&layer).unwrap().t());
            let f = lora_forward(&x, &layer).unwrap();
            let rel = (&wx - &f).mapv(|v| v * v).sum().sqrt() / wx.mapv(|v| v * v).sum().sqrt();
            assert!(rel < 1e-5, "rel {rel}");
        }
        let bad = LoraLayer {
            a: Mat::zeros((3, 5)),
            ..LoraLayer::new(1, 4, 4, 2, 1.0)
        };
        assert!(matches!(merge_lora(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn prompt_embedding_length() {
        let mut store = ParamStore::new();
        init_backbone(&mut store, 1, &tiny()).unwrap();
        let p = prompt();
        let text = p.render().unwrap();
        assert_eq!(
            text,
            "fc_ghz=60.000 bw_mhz=2000.000 dist_m=23.400 az_deg=12.500 el_deg=-3.200"
        );
        assert_eq!(encode_prompt(&p, &store).unwrap().nrows(), text.len() + 1);
    }

    #[test]
    fn causal_outputs_and_lora_equivalence() {
        let cfg = tiny();
        let mut store = ParamStore::new();
        init_backbone(&mut store, 2, &cfg).unwrap();
        let emb = encode_prompt(&prompt(), &store).unwrap();
        let fused = init_normal(5, "f", 1, 16, 1.0).row(0).to_owned();
        let out = backbone_forward(&store, &cfg, &emb, &fused, false).unwrap();
        assert_eq!(out.dim(), (emb.nrows() + 1, 16));

        let other = init_normal(6, "f", 1, 16, 1.0).row(0).to_owned();
        let changed = backbone_forward(&store, &cfg, &emb, &other, false).unwrap();
        let last = emb.nrows();
        assert_eq!(
            out.slice(ndarray::s![..last, ..]),
            changed.slice(ndarray::s![..last, ..])
        );
        assert_ne!(out.row(last), changed.row(last));

        let with_lora = backbone_forward(&store, &cfg, &emb, &fused, true).unwrap();
        assert_eq!(out, with_lora);
    }

    #[test]
    fn overlong_sequence_is_rejected() {
        let cfg = BackboneConfig {
            max_seq_len: 10,
            ..tiny()
        };
        let mut store = ParamStore::new();
        init_backbone(&mut store, 2, &cfg).unwrap();
        let emb = encode_prompt(&prompt(), &store).unwrap();
        let fused = Array1::zeros(16);
        assert!(matches!(
            backbone_forward(&store, &cfg, &emb, &fused, false),
            Err(Error::Length { max: 10, .. })
        ));
    }

    #[test]
    fn lora_count_is_analytic() {
        let cfg = tiny();
        let mut store = ParamStore::new();
        init_backbone(&mut store, 2, &cfg).unwrap();
        let counted: usize = store
            .iter()
            .filter(|(n, _)| n.starts_with(LORA_PREFIX))
            .map(|(_, p)| p.value.len())
            .sum();
        assert_eq!(counted, cfg.lora_parameter_count());
        assert_eq!(cfg.lora_parameter_count(), 2 * 2 * 4 * (16 + 24));
    }
}
