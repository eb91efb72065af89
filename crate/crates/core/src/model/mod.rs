//! T5-style encoder-decoder: shared embeddings, pre-norm residual blocks
//! with RMS normalization and no biases, relative-position bias in each
//! stack's self-attention, and a readout tied to the embedding matrix.

pub mod checkpoint;
mod config;
mod relpos;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::ModelConfig;
pub use relpos::{bucket_matrix, relative_position_bucket};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Real, Tensor, Var};
use crate::tokenizer::{TokenId, PAD_ID};
use checkpoint::NamedArray;

/// Row-major matrix of token ids with a parallel real-token mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenMatrix {
    pub rows: usize,
    pub cols: usize,
    pub ids: Vec<TokenId>,
    pub mask: Vec<bool>,
}

impl TokenMatrix {
    /// Right-pads rows with `pad` to the longest row; the mask marks the
    /// original tokens.
    pub fn from_rows(rows: &[Vec<TokenId>], pad: TokenId) -> Result<Self> {
        let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        if rows.is_empty() || cols == 0 {
            return Err(Error::invalid("token matrix needs at least one non-empty row"));
        }
        let mut ids = Vec::with_capacity(rows.len() * cols);
        let mut mask = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            ids.extend_from_slice(r);
            ids.extend(std::iter::repeat_n(pad, cols - r.len()));
            mask.extend(std::iter::repeat_n(true, r.len()));
            mask.extend(std::iter::repeat_n(false, cols - r.len()));
        }
        Ok(TokenMatrix {
            rows: rows.len(),
            cols,
            ids,
            mask,
        })
    }

    pub fn row(&self, r: usize) -> &[TokenId] {
        &self.ids[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Copy, Debug)]
struct AttnIds {
    q: usize,
    k: usize,
    v: usize,
    o: usize,
}

#[derive(Clone, Copy, Debug)]
struct FfnIds {
    wi: usize,
    wo: usize,
}

#[derive(Clone, Copy, Debug)]
struct EncoderLayerIds {
    attn_norm: usize,
    attn: AttnIds,
    ffn_norm: usize,
    ffn: FfnIds,
}

#[derive(Clone, Copy, Debug)]
struct DecoderLayerIds {
    self_norm: usize,
    self_attn: AttnIds,
    cross_norm: usize,
    cross_attn: AttnIds,
    ffn_norm: usize,
    ffn: FfnIds,
}

#[derive(Clone, Debug)]
struct Layout {
    embedding: usize,
    enc_bias: usize,
    enc_layers: Vec<EncoderLayerIds>,
    enc_norm: usize,
    dec_bias: usize,
    dec_layers: Vec<DecoderLayerIds>,
    dec_norm: usize,
}

/// Parameter shapes in registration order; the single source of truth for
/// names and layout.
fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f, h, nb) = (cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.relpos_num_buckets);
    let mut specs = vec![("shared.embedding".to_string(), vec![cfg.vocab_size, d])];
    let attn = |specs: &mut Vec<(String, Vec<usize>)>, prefix: &str| {
        for p in ["q", "k", "v", "o"] {
            specs.push((format!("{prefix}.{p}"), vec![d, d]));
        }
    };
    let ffn = |specs: &mut Vec<(String, Vec<usize>)>, prefix: &str| {
        specs.push((format!("{prefix}.ffn_norm"), vec![d]));
        specs.push((format!("{prefix}.ffn.wi"), vec![d, f]));
        specs.push((format!("{prefix}.ffn.wo"), vec![f, d]));
    };
    specs.push(("encoder.relpos_bias".into(), vec![h, nb]));
    for i in 0..cfg.n_enc_layers {
        let p = format!("encoder.{i}");
        specs.push((format!("{p}.attn_norm"), vec![d]));
        attn(&mut specs, &format!("{p}.attn"));
        ffn(&mut specs, &p);
    }
    specs.push(("encoder.final_norm".into(), vec![d]));
    specs.push(("decoder.relpos_bias".into(), vec![h, nb]));
    for i in 0..cfg.n_dec_layers {
        let p = format!("decoder.{i}");
        specs.push((format!("{p}.self_norm"), vec![d]));
        attn(&mut specs, &format!("{p}.self_attn"));
        specs.push((format!("{p}.cross_norm"), vec![d]));
        attn(&mut specs, &format!("{p}.cross_attn"));
        ffn(&mut specs, &p);
    }
    specs.push(("decoder.final_norm".into(), vec![d]));
    specs
}

fn build_layout<T: Real>(cfg: &ModelConfig, store: &ParamStore<T>) -> Result<Layout> {
    let id = |name: String| store.id_of(&name).ok_or(Error::MissingField(name));
    let attn = |p: &str| -> Result<AttnIds> {
        Ok(AttnIds {
            q: id(format!("{p}.q"))?,
            k: id(format!("{p}.k"))?,
            v: id(format!("{p}.v"))?,
            o: id(format!("{p}.o"))?,
        })
    };
    let ffn = |p: &str| -> Result<FfnIds> {
        Ok(FfnIds {
            wi: id(format!("{p}.ffn.wi"))?,
            wo: id(format!("{p}.ffn.wo"))?,
        })
    };
    let enc_layers = (0..cfg.n_enc_layers)
        .map(|i| {
            let p = format!("encoder.{i}");
            Ok(EncoderLayerIds {
                attn_norm: id(format!("{p}.attn_norm"))?,
                attn: attn(&format!("{p}.attn"))?,
                ffn_norm: id(format!("{p}.ffn_norm"))?,
                ffn: ffn(&p)?,
            })
        })
        .collect::<Result<_>>()?;
    let dec_layers = (0..cfg.n_dec_layers)
        .map(|i| {
            let p = format!("decoder.{i}");
            Ok(DecoderLayerIds {
                self_norm: id(format!("{p}.self_norm"))?,
                self_attn: attn(&format!("{p}.self_attn"))?,
                cross_norm: id(format!("{p}.cross_norm"))?,
                cross_attn: attn(&format!("{p}.cross_attn"))?,
                ffn_norm: id(format!("{p}.ffn_norm"))?,
                ffn: ffn(&p)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Layout {
        embedding: id("shared.embedding".into())?,
        enc_bias: id("encoder.relpos_bias".into())?,
        enc_layers,
        enc_norm: id("encoder.final_norm".into())?,
        dec_bias: id("decoder.relpos_bias".into())?,
        dec_layers,
        dec_norm: id("decoder.final_norm".into())?,
    })
}

/// Encoder-decoder transformer with its parameters.
#[derive(Clone, Debug)]
pub struct Seq2Seq<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> Seq2Seq<T> {
    /// Random initialization: embeddings ~ N(0, 1), projections
    /// ~ N(0, 1/d_model), norm gains 1, position biases ~ N(0, 1).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj_std = 1.0 / (config.d_model as f64).sqrt();
        let mut params = ParamStore::new();
        for (name, shape) in param_specs(&config) {
            let t = if name == "shared.embedding" {
                Tensor::randn(shape, 1.0, &mut rng)
            } else if name.ends_with("norm") {
                Tensor::from_f64(shape.clone(), &vec![1.0; shape.iter().product()])?
            } else if name.ends_with("relpos_bias") {
                Tensor::randn(shape, 1.0, &mut rng)
            } else {
                Tensor::randn(shape, proj_std, &mut rng)
            };
            params.add(name, t.with_grad());
        }
        let layout = build_layout(&config, &params)?;
        Ok(Seq2Seq { config, params, layout })
    }

    /// Wraps an existing parameter store, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::format(
                "checkpoint",
                format!("expected {} tensors, found {}", specs.len(), params.len()),
            ));
        }
        for (name, shape) in &specs {
            let id = params.id_of(name).ok_or_else(|| Error::MissingField(name.clone()))?;
            if params.tensor(id).shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "{name}: expected {shape:?}, found {:?}",
                    params.tensor(id).shape()
                )));
            }
        }
        let layout = build_layout(&config, &params)?;
        Ok(Seq2Seq { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Seq2Seq<U> {
        Seq2Seq {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        self.params
            .iter()
            .map(|(name, t)| NamedArray {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| v.to_f64() as f32).collect(),
            })
            .collect()
    }

    pub fn from_arrays(config: ModelConfig, arrays: Vec<NamedArray>) -> Result<Self> {
        let mut params = ParamStore::new();
        for a in arrays {
            let data = a.data.iter().map(|&v| T::from_f64(v as f64)).collect();
            params.add(a.name, Tensor::new(a.shape, data)?.with_grad());
        }
        Self::from_params(config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_file(path, &self.to_arrays())
    }

    pub fn load(config: ModelConfig, path: &Path) -> Result<Self> {
        Self::from_arrays(config, checkpoint::read_file(path)?)
    }

    /// Opens an inference session (dropout off).
    pub fn eval_session(&self) -> Session<'_, T> {
        Session::new(self, None)
    }

    /// Opens a training session; dropout masks are drawn from `seed`.
    pub fn train_session(&self, seed: u64) -> Session<'_, T> {
        Session::new(self, Some(ChaCha8Rng::seed_from_u64(seed)))
    }
}

/// One forward pass recorded on a fresh [`Graph`]. Parameters are inserted
/// lazily and shared between the encoder and decoder calls of a session.
pub struct Session<'m, T: Real> {
    pub graph: Graph<T>,
    model: &'m Seq2Seq<T>,
    param_vars: Vec<Option<Var>>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'m, T: Real> Session<'m, T> {
    fn new(model: &'m Seq2Seq<T>, dropout_rng: Option<ChaCha8Rng>) -> Self {
        Session {
            graph: Graph::new(),
            model,
            param_vars: vec![None; model.params.len()],
            dropout_rng,
        }
    }

    /// Releases the model borrow, keeping the recorded graph for the
    /// backward pass.
    pub fn into_graph(self) -> Graph<T> {
        self.graph
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    fn p(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let v = self.graph.param(&self.model.params, id);
        self.param_vars[id] = Some(v);
        v
    }

    /// Graph node holding the parameter with the given name.
    pub fn param_var(&mut self, name: &str) -> Option<Var> {
        let id = self.model.params.id_of(name)?;
        Some(self.p(id))
    }

    fn dropout(&mut self, x: Var) -> Var {
        let rate = self.model.config.dropout_rate;
        match self.dropout_rng.as_mut() {
            Some(rng) if rate > 0.0 => self.graph.dropout(x, rate, rng),
            _ => x,
        }
    }

    fn check_ids(&self, ids: &TokenMatrix) -> Result<()> {
        let cfg = &self.model.config;
        if ids.cols > cfg.max_seq_len {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds max_seq_len {}",
                ids.cols, cfg.max_seq_len
            )));
        }
        if let Some(&bad) = ids.ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
            return Err(Error::invalid(format!("token id {bad} >= vocab_size {}", cfg.vocab_size)));
        }
        Ok(())
    }

    /// Embedding lookup: `[rows·cols, d_model]`.
    pub fn embed(&mut self, ids: &TokenMatrix) -> Result<Var> {
        self.check_ids(ids)?;
        let table = self.p(self.model.layout.embedding);
        let idx: Vec<usize> = ids.ids.iter().map(|&i| i as usize).collect();
        self.graph.gather_rows(table, &idx)
    }

    fn position_bias(&mut self, table_id: usize, q: usize, k: usize, bidirectional: bool) -> Result<Var> {
        let cfg = &self.model.config;
        let buckets = bucket_matrix(q, k, bidirectional, cfg.relpos_num_buckets, cfg.relpos_max_distance);
        let heads = cfg.n_heads;
        let table = self.p(table_id);
        let flat = self.graph.gather_cols(table, &buckets)?;
        self.graph.reshape(flat, vec![heads, q, k])
    }

    fn split_heads(&mut self, x: Var, b: usize, len: usize) -> Result<Var> {
        let (h, dh) = (self.model.config.n_heads, self.model.config.head_dim());
        let g = &mut self.graph;
        let x = g.reshape(x, vec![b, len, h, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, vec![b * h, len, dh])
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &mut self,
        xq: Var,
        xkv: Var,
        ids: AttnIds,
        b: usize,
        lq: usize,
        lk: usize,
        bias: Option<Var>,
        mask: &[bool],
    ) -> Result<Var> {
        let (h, dh, d) = (self.model.config.n_heads, self.model.config.head_dim(), self.model.config.d_model);
        let (wq, wk, wv, wo) = (self.p(ids.q), self.p(ids.k), self.p(ids.v), self.p(ids.o));
        let q = self.graph.matmul(xq, wq, false)?;
        let k = self.graph.matmul(xkv, wk, false)?;
        let v = self.graph.matmul(xkv, wv, false)?;
        let q = self.split_heads(q, b, lq)?;
        let k = self.split_heads(k, b, lk)?;
        let v = self.split_heads(v, b, lk)?;
        let scores = self.graph.bmm(q, k, true)?;
        let scores = self.graph.scale(scores, 1.0 / (dh as f64).sqrt());
        let mut scores = self.graph.reshape(scores, vec![b, h, lq, lk])?;
        if let Some(bias) = bias {
            scores = self.graph.add_broadcast(scores, bias)?;
        }
        let probs = self.graph.attn_softmax(scores, mask)?;
        let probs = self.dropout(probs);
        let probs = self.graph.reshape(probs, vec![b * h, lq, lk])?;
        let ctx = self.graph.bmm(probs, v, false)?;
        let ctx = self.graph.reshape(ctx, vec![b, h, lq, dh])?;
        let ctx = self.graph.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = self.graph.reshape(ctx, vec![b * lq, d])?;
        self.graph.matmul(ctx, wo, false)
    }

    fn ffn(&mut self, x: Var, ids: FfnIds) -> Result<Var> {
        let (wi, wo) = (self.p(ids.wi), self.p(ids.wo));
        let hidden = self.graph.matmul(x, wi, false)?;
        let hidden = self.graph.relu(hidden);
        let hidden = self.dropout(hidden);
        self.graph.matmul(hidden, wo, false)
    }

    fn residual(&mut self, x: Var, delta: Var) -> Result<Var> {
        let delta = self.dropout(delta);
        self.graph.add(x, delta)
    }

    fn norm(&mut self, x: Var, gain_id: usize) -> Result<Var> {
        let gain = self.p(gain_id);
        self.graph.rms_norm(x, gain)
    }

    /// Contextual encoder states `[B, L, d_model]`. Padding keys (mask
    /// false) receive zero attention weight.
    pub fn encode(&mut self, src: &TokenMatrix) -> Result<Var> {
        let (b, l) = (src.rows, src.cols);
        let layout = &self.model.layout;
        let (enc_bias, enc_norm, layers) = (layout.enc_bias, layout.enc_norm, layout.enc_layers.clone());
        let emb = self.embed(src)?;
        let mut x = self.dropout(emb);
        let bias = if layers.is_empty() {
            None
        } else {
            Some(self.position_bias(enc_bias, l, l, true)?)
        };
        let mask = key_mask(&src.mask, b, l, l);
        for layer in layers {
            let h = self.norm(x, layer.attn_norm)?;
            let a = self.attention(h, h, layer.attn, b, l, l, bias, &mask)?;
            x = self.residual(x, a)?;
            let h = self.norm(x, layer.ffn_norm)?;
            let f = self.ffn(h, layer.ffn)?;
            x = self.residual(x, f)?;
        }
        let x = self.norm(x, enc_norm)?;
        let x = self.dropout(x);
        self.graph.reshape(x, vec![b, l, self.model.config.d_model])
    }

    /// Teacher-forced decoder logits `[B, T, vocab_size]`.
    pub fn decode_logits(&mut self, enc: Var, enc_mask: &[bool], dec_ids: &TokenMatrix) -> Result<Var> {
        let emb = self.embed(dec_ids)?;
        self.decode_from_embeddings(enc, enc_mask, emb, dec_ids.rows, dec_ids.cols)
    }

    /// Decoder stack applied to precomputed input embeddings `[B·T, d]`.
    pub fn decode_from_embeddings(&mut self, enc: Var, enc_mask: &[bool], emb: Var, b: usize, t: usize) -> Result<Var> {
        let cfg = self.model.config.clone();
        let enc_shape = self.graph.shape(enc).to_vec();
        if enc_shape.len() != 3 || enc_shape[0] != b || enc_shape[2] != cfg.d_model {
            return Err(Error::shape(format!("encoder states {enc_shape:?} for batch {b}")));
        }
        if t > cfg.max_seq_len {
            return Err(Error::invalid(format!("decoder length {t} exceeds max_seq_len {}", cfg.max_seq_len)));
        }
        let l = enc_shape[1];
        if enc_mask.len() != b * l {
            return Err(Error::shape(format!("encoder mask of length {} for {b}x{l}", enc_mask.len())));
        }
        let layout = &self.model.layout;
        let (dec_bias, dec_norm, embedding, layers) =
            (layout.dec_bias, layout.dec_norm, layout.embedding, layout.dec_layers.clone());
        let enc2 = self.graph.reshape(enc, vec![b * l, cfg.d_model])?;
        let mut x = self.dropout(emb);
        let bias = if layers.is_empty() {
            None
        } else {
            Some(self.position_bias(dec_bias, t, t, false)?)
        };
        let causal: Vec<bool> = (0..b)
            .flat_map(|_| (0..t).flat_map(move |q| (0..t).map(move |k| k <= q)))
            .collect();
        let cross = key_mask(enc_mask, b, t, l);
        for layer in layers {
            let h = self.norm(x, layer.self_norm)?;
            let a = self.attention(h, h, layer.self_attn, b, t, t, bias, &causal)?;
            x = self.residual(x, a)?;
            let h = self.norm(x, layer.cross_norm)?;
            let a = self.attention(h, enc2, layer.cross_attn, b, t, l, None, &cross)?;
            x = self.residual(x, a)?;
            let h = self.norm(x, layer.ffn_norm)?;
            let f = self.ffn(h, layer.ffn)?;
            x = self.residual(x, f)?;
        }
        let x = self.norm(x, dec_norm)?;
        let x = self.dropout(x);
        let x = self.graph.scale(x, 1.0 / (cfg.d_model as f64).sqrt());
        let table = self.p(embedding);
        let logits = self.graph.matmul(x, table, true)?;
        self.graph.reshape(logits, vec![b, t, cfg.vocab_size])
    }

    /// Mean token cross-entropy of `targets` (pad positions ignored).
    pub fn seq2seq_loss(&mut self, src: &TokenMatrix, dec_in: &TokenMatrix, targets: &TokenMatrix) -> Result<Var> {
        if dec_in.rows != targets.rows || dec_in.cols != targets.cols || src.rows != dec_in.rows {
            return Err(Error::shape("decoder inputs and targets disagree in shape"));
        }
        let enc = self.encode(src)?;
        let logits = self.decode_logits(enc, &src.mask, dec_in)?;
        let v = self.model.config.vocab_size;
        let flat = self.graph.reshape(logits, vec![targets.rows * targets.cols, v])?;
        let tgt: Vec<usize> = targets.ids.iter().map(|&i| i as usize).collect();
        self.graph.cross_entropy(flat, &tgt, PAD_ID as usize)
    }
}

/// Expands a `[B, K]` key mask to `[B, Q, K]`.
fn key_mask(keys: &[bool], b: usize, q: usize, k: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(b * q * k);
    for bi in 0..b {
        let row = &keys[bi * k..(bi + 1) * k];
        for _ in 0..q {
            out.extend_from_slice(row);
        }
    }
    out
}

/// Seeded helper for tests and tools that need random token matrices.
pub fn random_tokens<R: Rng>(rng: &mut R, rows: usize, cols: usize, vocab: usize) -> TokenMatrix {
    let data: Vec<Vec<TokenId>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(3..vocab as TokenId)).collect())
        .collect();
    TokenMatrix::from_rows(&data, PAD_ID).expect("non-empty")
}
