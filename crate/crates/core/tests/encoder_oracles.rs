//! Encoder forward pass against plain-loop reference implementations.

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slotfuse::encoder::{
    attention, attention_with_weights, encode, ffn, softmax_rows, EncoderConfig, EncoderModel,
    LayerWeights, Segment, Tokenizer,
};

type Mat = Vec<Vec<f64>>;

fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

fn naive_softmax(row: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = row.iter().map(|x| x.exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn naive_attention(q: &Mat, k: &Mat, v: &Mat) -> Mat {
    let dk = q[0].len() as f64;
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dk.sqrt())
                .collect();
            let w = naive_softmax(&scores);
            (0..v[0].len())
                .map(|c| w.iter().zip(v).map(|(wj, vj)| wj * vj[c]).sum())
                .collect()
        })
        .collect()
}

fn naive_ffn(x: &Mat, layer: &LayerWeights) -> Mat {
    let hidden: Mat = matmul(x, &to_mat(&layer.w_1))
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(layer.b_1.row(0))
                .map(|(h, b)| (h + b).max(0.0))
                .collect()
        })
        .collect();
    matmul(&hidden, &to_mat(&layer.w_2))
        .into_iter()
        .map(|row| row.iter().zip(layer.b_2.row(0)).map(|(h, b)| h + b).collect())
        .collect()
}

/// Reference forward pass over raw token ids.
fn naive_encode(model: &EncoderModel, ids: &[usize], segment: usize) -> Vec<f64> {
    let w = &model.weights;
    let d = model.config.d_model;
    let heads = model.config.heads;
    let dk = d / heads;
    let mut x: Mat = ids
        .iter()
        .enumerate()
        .map(|(p, &id)| {
            (0..d)
                .map(|c| {
                    w.token_embeddings[[id, c]]
                        + w.position_embeddings[[p, c]]
                        + w.segment_embeddings[[segment, c]]
                })
                .collect()
        })
        .collect();
    for layer in &w.layers {
        let q = matmul(&x, &to_mat(&layer.w_q));
        let k = matmul(&x, &to_mat(&layer.w_k));
        let v = matmul(&x, &to_mat(&layer.w_v));
        let mut concat = vec![vec![0.0; d]; x.len()];
        for h in 0..heads {
            let cut = |m: &Mat| -> Mat { m.iter().map(|r| r[h * dk..(h + 1) * dk].to_vec()).collect() };
            let out = naive_attention(&cut(&q), &cut(&k), &cut(&v));
            for (i, row) in out.iter().enumerate() {
                concat[i][h * dk..(h + 1) * dk].copy_from_slice(row);
            }
        }
        let projected = matmul(&concat, &to_mat(&layer.w_o));
        let mid: Mat = x
            .iter()
            .zip(&projected)
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect())
            .collect();
        let f = naive_ffn(&mid, layer);
        x = mid
            .iter()
            .zip(&f)
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect())
            .collect();
    }
    x.swap_remove(0)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

fn small_model(seed: u64) -> EncoderModel {
    let config = EncoderConfig {
        d_model: 8,
        d_ff: 16,
        heads: 2,
        layers: 2,
        max_len: 10,
        seed,
    };
    let tokenizer = Tokenizer::from_words(["[user] [sys] i need a taxi from ely north", "taxi departure"]);
    let mut model = EncoderModel::init(config, tokenizer).unwrap();
    // push weights well away from init so the nonlinearities matter
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for (_, t) in model.weights.tensors_mut() {
        let (r, c) = t.dim();
        t.assign(&random_matrix(&mut rng, r, c, 0.8));
    }
    model
}

#[test]
fn two_by_two_attention_by_hand() {
    // QKᵀ/√2 = [[1, 0], [0, 1]] / √2
    let q = array![[1.0, 0.0], [0.0, 1.0]];
    let k = q.clone();
    let v = array![[1.0, 2.0], [3.0, 4.0]];
    let (out, weights) = attention_with_weights(q.view(), k.view(), v.view()).unwrap();
    let s = 1.0 / 2f64.sqrt();
    let hi = s.exp() / (s.exp() + 1.0);
    let lo = 1.0 - hi;
    let expected_w = array![[hi, lo], [lo, hi]];
    let expected_out = array![
        [hi * 1.0 + lo * 3.0, hi * 2.0 + lo * 4.0],
        [lo * 1.0 + hi * 3.0, lo * 2.0 + hi * 4.0]
    ];
    for (a, b) in weights.iter().zip(expected_w.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in out.iter().zip(expected_out.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_matches_loops_on_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.random_range(1..7);
        let m = rng.random_range(1..7);
        let dk = rng.random_range(1..6);
        let dv = rng.random_range(1..6);
        let q = random_matrix(&mut rng, n, dk, 2.0);
        let k = random_matrix(&mut rng, m, dk, 2.0);
        let v = random_matrix(&mut rng, m, dv, 2.0);
        let got = attention(q.view(), k.view(), v.view()).unwrap();
        let want = naive_attention(&to_mat(&q), &to_mat(&k), &to_mat(&v));
        for (row, want_row) in got.rows().into_iter().zip(&want) {
            for (a, b) in row.iter().zip(want_row) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn attention_rejects_mismatched_shapes() {
    let a = Array2::<f64>::zeros((2, 3));
    let b = Array2::<f64>::zeros((2, 4));
    let c = Array2::<f64>::zeros((3, 3));
    assert!(attention(a.view(), b.view(), a.view()).is_err());
    assert!(attention(a.view(), a.view(), c.view()).is_err());
}

#[test]
fn softmax_survives_large_scores() {
    let scores = array![[1000.0, 1000.0], [-1000.0, 0.0]];
    let w = softmax_rows(&scores);
    assert!(w.iter().all(|x| x.is_finite()));
    assert_eq!(w[[0, 0]], 0.5);
    assert!((w[[1, 1]] - 1.0).abs() < 1e-15);
}

#[test]
fn ffn_matches_loops() {
    let model = small_model(5);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_matrix(&mut rng, 4, 8, 1.0);
    let layer = &model.weights.layers[1];
    let got = ffn(x.view(), layer).unwrap();
    let want = naive_ffn(&to_mat(&x), layer);
    for (row, want_row) in got.rows().into_iter().zip(&want) {
        for (a, b) in row.iter().zip(want_row) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!(ffn(Array2::zeros((2, 3)).view(), layer).is_err());
}

#[test]
fn encode_matches_reference_forward() {
    for seed in [1, 2, 3] {
        let model = small_model(seed);
        for (text, segment) in [
            ("[User] i need a taxi from ely", Segment::History),
            ("taxi departure", Segment::Slot),
            ("unknown words only", Segment::History),
        ] {
            let ids = model.tokenizer.tokenize(text, model.config.max_len);
            let got = encode(&model, text, segment);
            let want = naive_encode(&model, &ids, segment as usize);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{text}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn zero_blocks_are_the_identity() {
    let mut model = small_model(4);
    for layer in &mut model.weights.layers {
        for t in [
            &mut layer.w_q,
            &mut layer.w_k,
            &mut layer.w_v,
            &mut layer.w_o,
            &mut layer.w_1,
            &mut layer.b_1,
            &mut layer.w_2,
            &mut layer.b_2,
        ] {
            t.fill(0.0);
        }
    }
    let text = "[User] taxi from ely";
    let first = model.tokenizer.tokenize(text, model.config.max_len)[0];
    let got = encode(&model, text, Segment::Slot);
    let w = &model.weights;
    let want = &w.token_embeddings.row(first) + &w.position_embeddings.row(0) + w.segment_embeddings.row(1);
    assert_eq!(got, want);
}

#[test]
fn long_inputs_keep_the_most_recent_words() {
    let model = small_model(6);
    let max = model.config.max_len;
    let words: Vec<&str> = ["taxi", "from", "ely", "north"].into_iter().cycle().take(40).collect();
    let ids = model.tokenizer.tokenize(&words.join(" "), max);
    assert_eq!(ids.len(), max);
    let tail = words[words.len() - (max - 1)..].join(" ");
    assert_eq!(ids, model.tokenizer.tokenize(&tail, max));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let model = small_model(9);
    let text = model.to_checkpoint_json();
    let back = EncoderModel::from_checkpoint_json(&text).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_checkpoint_json(), text);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let text = small_model(9).to_checkpoint_json();
    assert!(EncoderModel::from_checkpoint_json("{}").is_err());
    let renamed = text.replacen("layers.0.w_q", "layers.0.w_z", 1);
    assert!(EncoderModel::from_checkpoint_json(&renamed).is_err());
    let wrong_format = text.replacen("slotfuse-encoder/1", "other/1", 1);
    assert!(EncoderModel::from_checkpoint_json(&wrong_format).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_stays_finite(seed in 0u64..1000, scale in 0.0f64..8.0, words in proptest::collection::vec("[a-z]{1,6}", 0..20)) {
        let mut model = small_model(seed);
        for (_, t) in model.weights.tensors_mut() {
            t.mapv_inplace(|x| x * scale);
        }
        let out = encode(&model, &words.join(" "), Segment::History);
        prop_assert!(out.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn vocabulary_order_does_not_matter(mut words in proptest::collection::vec("[a-z]{1,5}", 1..12)) {
        let a = Tokenizer::from_words(words.iter().map(String::as_str));
        words.reverse();
        let b = Tokenizer::from_words(words.iter().map(String::as_str));
        prop_assert_eq!(a.vocab(), b.vocab());
    }
}
