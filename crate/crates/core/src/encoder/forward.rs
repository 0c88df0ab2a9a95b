//! Forward and backward passes of the encoder.
//!
//! Each block applies multi-head self-attention with a residual connection,
//! then the position-wise feed-forward network with a residual connection:
//!
//! ```text
//! Y = X + Concat_h(softmax(Q_h K_hᵀ / √d_k) V_h) W_O
//! Z = Y + ReLU(Y W_1 + b_1) W_2 + b_2
//! ```
//!
//! There is no layer normalization. The encoding of a text is row 0 (the
//! first-token position) of the last block's output.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::model::{EncoderModel, LayerWeights, Weights};
use super::EncoderError;

/// Which segment embedding a text receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    History = 0,
    Slot = 1,
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

fn attention_parts(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let scale = (q.ncols() as f64).sqrt();
    let weights = softmax_rows(&(q.dot(&k.t()) / scale));
    let out = weights.dot(&v);
    (out, weights)
}

/// Scaled dot-product attention `softmax(QKᵀ/√d_k) V`.
pub fn attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> Result<Array2<f64>, EncoderError> {
    attention_with_weights(q, k, v).map(|(out, _)| out)
}

/// Attention output together with the softmax weight matrix.
pub fn attention_with_weights(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>), EncoderError> {
    if q.ncols() == 0 {
        return Err(EncoderError::ShapeMismatch("d_k must be positive".into()));
    }
    if q.ncols() != k.ncols() {
        return Err(EncoderError::ShapeMismatch(format!(
            "query width {} != key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(EncoderError::ShapeMismatch(format!(
            "{} keys but {} values",
            k.nrows(),
            v.nrows()
        )));
    }
    Ok(attention_parts(q, k, v))
}

/// `ReLU(x W_1 + b_1) W_2 + b_2`, row-wise.
pub fn ffn(x: ArrayView2<f64>, layer: &LayerWeights) -> Result<Array2<f64>, EncoderError> {
    if x.ncols() != layer.w_1.nrows() || layer.w_1.ncols() != layer.w_2.nrows() {
        return Err(EncoderError::ShapeMismatch(format!(
            "ffn input width {} does not match W_1 {:?} / W_2 {:?}",
            x.ncols(),
            layer.w_1.dim(),
            layer.w_2.dim()
        )));
    }
    let hidden = (x.dot(&layer.w_1) + &layer.b_1).mapv(|h| h.max(0.0));
    Ok(hidden.dot(&layer.w_2) + &layer.b_2)
}

struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Softmax weights per head.
    attn: Vec<Array2<f64>>,
    concat: Array2<f64>,
    mid: Array2<f64>,
    pre_act: Array2<f64>,
    hidden: Array2<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub(crate) struct ForwardCache {
    ids: Vec<usize>,
    segment: Segment,
    layers: Vec<LayerCache>,
}

fn embed(model: &EncoderModel, ids: &[usize], segment: Segment) -> Array2<f64> {
    let w = &model.weights;
    let d = model.config.d_model;
    let mut x = Array2::zeros((ids.len(), d));
    let seg = w.segment_embeddings.row(segment as usize);
    for (pos, &id) in ids.iter().enumerate() {
        let mut row = x.row_mut(pos);
        row += &w.token_embeddings.row(id);
        row += &w.position_embeddings.row(pos);
        row += &seg;
    }
    x
}

fn block_forward(
    x: Array2<f64>,
    layer: &LayerWeights,
    heads: usize,
) -> (Array2<f64>, LayerCache) {
    let d_k = x.ncols() / heads;
    let q = x.dot(&layer.w_q);
    let k = x.dot(&layer.w_k);
    let v = x.dot(&layer.w_v);
    let mut concat = Array2::zeros(x.raw_dim());
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * d_k..(h + 1) * d_k];
        let (out, weights) = attention_parts(q.slice(cols), k.slice(cols), v.slice(cols));
        concat.slice_mut(cols).assign(&out);
        attn.push(weights);
    }
    let mid = &x + &concat.dot(&layer.w_o);
    let pre_act = mid.dot(&layer.w_1) + &layer.b_1;
    let hidden = pre_act.mapv(|h| h.max(0.0));
    let out = &mid + &(hidden.dot(&layer.w_2) + &layer.b_2);
    let cache = LayerCache {
        input: x,
        q,
        k,
        v,
        attn,
        concat,
        mid,
        pre_act,
        hidden,
    };
    (out, cache)
}

/// Full forward pass over token ids. Returns every position's final vector.
pub(crate) fn forward_ids(
    model: &EncoderModel,
    ids: &[usize],
    segment: Segment,
) -> (Array2<f64>, ForwardCache) {
    let mut x = embed(model, ids, segment);
    let mut layers = Vec::with_capacity(model.weights.layers.len());
    for layer in &model.weights.layers {
        let (out, cache) = block_forward(x, layer, model.config.heads);
        layers.push(cache);
        x = out;
    }
    let cache = ForwardCache {
        ids: ids.to_vec(),
        segment,
        layers,
    };
    (x, cache)
}

/// Encodes `text`, returning the first-token representation.
pub fn encode(model: &EncoderModel, text: &str, segment: Segment) -> Array1<f64> {
    encode_with_cache(model, text, segment).0
}

pub(crate) fn encode_with_cache(
    model: &EncoderModel,
    text: &str,
    segment: Segment,
) -> (Array1<f64>, ForwardCache) {
    let ids = model.tokenizer.tokenize(text, model.config.max_len);
    let (out, cache) = forward_ids(model, &ids, segment);
    (out.row(0).to_owned(), cache)
}

fn block_backward(
    d_out: Array2<f64>,
    layer: &LayerWeights,
    cache: &LayerCache,
    heads: usize,
    grads: &mut LayerWeights,
) -> Array2<f64> {
    // Z = Y + F(Y)
    grads.w_2 += &cache.hidden.t().dot(&d_out);
    grads.b_2 += &d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut d_pre = d_out.dot(&layer.w_2.t());
    ndarray::Zip::from(&mut d_pre)
        .and(&cache.pre_act)
        .for_each(|g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
    grads.w_1 += &cache.mid.t().dot(&d_pre);
    grads.b_1 += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_mid = d_out + d_pre.dot(&layer.w_1.t());

    // Y = X + A(X) W_O
    grads.w_o += &cache.concat.t().dot(&d_mid);
    let d_concat = d_mid.dot(&layer.w_o.t());
    let d_k_width = cache.q.ncols() / heads;
    let scale = (d_k_width as f64).sqrt();
    let mut d_q = Array2::zeros(cache.q.raw_dim());
    let mut d_k = Array2::zeros(cache.k.raw_dim());
    let mut d_v = Array2::zeros(cache.v.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * d_k_width..(h + 1) * d_k_width];
        let weights = &cache.attn[h];
        let d_head = d_concat.slice(cols);
        let d_weights = d_head.dot(&cache.v.slice(cols).t());
        d_v.slice_mut(cols).assign(&weights.t().dot(&d_head));
        // softmax Jacobian, row-wise: dS = A ⊙ (dA − Σ_j dA⊙A)
        let row_dot = (&d_weights * weights).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_scores = weights * &(&d_weights - &row_dot) / scale;
        d_q.slice_mut(cols).assign(&d_scores.dot(&cache.k.slice(cols)));
        d_k.slice_mut(cols).assign(&d_scores.t().dot(&cache.q.slice(cols)));
    }
    let x_t = cache.input.t();
    grads.w_q += &x_t.dot(&d_q);
    grads.w_k += &x_t.dot(&d_k);
    grads.w_v += &x_t.dot(&d_v);
    d_mid + d_q.dot(&layer.w_q.t()) + d_k.dot(&layer.w_k.t()) + d_v.dot(&layer.w_v.t())
}

/// Accumulates into `grads` the gradient of a scalar whose derivative with
/// respect to the first-token output is `d_first`.
pub(crate) fn backward_first_token(
    model: &EncoderModel,
    cache: &ForwardCache,
    d_first: ArrayView1<f64>,
    grads: &mut Weights,
) {
    let n = cache.ids.len();
    let mut d_x = Array2::zeros((n, model.config.d_model));
    d_x.row_mut(0).assign(&d_first);
    for ((layer, layer_cache), layer_grads) in model
        .weights
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        d_x = block_backward(d_x, layer, layer_cache, model.config.heads, layer_grads);
    }
    for (pos, &id) in cache.ids.iter().enumerate() {
        let row = d_x.row(pos);
        let mut tok = grads.token_embeddings.row_mut(id);
        tok += &row;
        let mut p = grads.position_embeddings.row_mut(pos);
        p += &row;
    }
    let mut seg = grads.segment_embeddings.row_mut(cache.segment as usize);
    seg += &d_x.sum_axis(Axis(0));
}
