//! Model-level tests: unit encoding identities, sequence assembly, the
//! straight-line attention oracle, permutation and padding properties, and
//! degraded scoring modes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numeric::{softmax_masked_slice, Tape, Tensor};

fn tiny_config() -> RtmConfig {
    RtmConfig {
        d: 4,
        heads: 2,
        layers: 1,
        d_ff: 8,
        m_max: 4,
        n_max: 5,
        review_len_max: 10,
        vocab_size: 12,
        use_pos: false,
        use_seg: false,
        ..RtmConfig::default()
    }
}

fn random_params(cfg: &RtmConfig, seed: u64) -> RtmParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = RtmParameters::init(cfg, &mut rng);
    // give the optional tables real values so toggles matter
    for v in params.pos_emb.data_mut() {
        *v = rng.gen_range(-0.3..0.3);
    }
    for v in params.seg_emb.data_mut() {
        *v = rng.gen_range(-0.3..0.3);
    }
    params
}

#[test]
fn encode_unit_zero_embeddings_give_zero() {
    let cfg = tiny_config();
    let mut params = random_params(&cfg, 1);
    for v in params.word_emb.data_mut() {
        *v = 0.0;
    }
    for v in params.query_b.data_mut() {
        *v = 0.0;
    }
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    let unit = encode_unit(&mut tape, &nodes, &[1, 2, 3], UnitKind::Query).unwrap();
    assert!(tape.value(unit).data().iter().all(|&v| v == 0.0));
}

#[test]
fn encode_unit_single_word_matches_projection() {
    let cfg = tiny_config();
    let params = random_params(&cfg, 2);
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    let unit = encode_unit(&mut tape, &nodes, &[5], UnitKind::Review).unwrap();
    // tanh(w_vec . W + b) by hand
    let w_vec = params.word_emb.row(5);
    for c in 0..cfg.d {
        let mut acc = params.review_b.data()[c];
        for (k, &wv) in w_vec.iter().enumerate() {
            acc += wv * params.review_w.at(k, c);
        }
        let expect = acc.tanh();
        assert!((tape.value(unit).data()[c] - expect).abs() < 1e-15);
    }
}

#[test]
fn encode_unit_opposite_words_cancel() {
    let cfg = tiny_config();
    let mut params = random_params(&cfg, 3);
    // word 1 = -word 2, bias 0
    let d = cfg.d;
    let (r1, r2): (Vec<f64>, Vec<f64>) = {
        let row = params.word_emb.row(1).to_vec();
        (row.clone(), row.iter().map(|v| -v).collect())
    };
    params.word_emb.data_mut()[2 * d..3 * d].copy_from_slice(&r2);
    params.word_emb.data_mut()[d..2 * d].copy_from_slice(&r1);
    for v in params.review_b.data_mut() {
        *v = 0.0;
    }
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    let unit = encode_unit(&mut tape, &nodes, &[1, 2], UnitKind::Review).unwrap();
    assert!(tape.value(unit).data().iter().all(|&v| v.abs() < 1e-15));
}

#[test]
fn empty_tokens_mask_reviews_and_reject_queries() {
    let cfg = tiny_config();
    let params = random_params(&cfg, 4);
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    assert!(encode_unit(&mut tape, &nodes, &[], UnitKind::Review).is_none());
    let inputs = ScoreInputs {
        query: vec![],
        ..ScoreInputs::default()
    };
    assert!(matches!(
        score_item(&params, &cfg, &inputs),
        Err(crate::error::ModelError::EmptyQuery)
    ));
}

#[test]
fn sequence_without_toggles_is_raw_units() {
    let cfg = tiny_config();
    let params = random_params(&cfg, 5);
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    let q = encode_unit(&mut tape, &nodes, &[1], UnitKind::Query).unwrap();
    let u1 = encode_unit(&mut tape, &nodes, &[2], UnitKind::Review).unwrap();
    let i1 = encode_unit(&mut tape, &nodes, &[3], UnitKind::Review).unwrap();
    let seq =
        build_input_sequence(&mut tape, &nodes, &cfg, q, &[Some(u1)], &[Some(i1)], 0).unwrap();
    let x = tape.value(seq.x).clone();
    assert_eq!(x.row(0), tape.value(q).data());
    assert_eq!(x.row(1), tape.value(u1).data());
    assert_eq!(x.row(2), tape.value(i1).data());
}

#[test]
fn sequence_positions_and_segments() {
    let cfg = RtmConfig {
        use_pos: true,
        use_seg: true,
        ..tiny_config()
    };
    let params = random_params(&cfg, 6);
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    let q = encode_unit(&mut tape, &nodes, &[1], UnitKind::Query).unwrap();
    let users: Vec<_> = (2..4)
        .map(|t| encode_unit(&mut tape, &nodes, &[t], UnitKind::Review))
        .collect();
    let items: Vec<_> = (4..7)
        .map(|t| encode_unit(&mut tape, &nodes, &[t], UnitKind::Review))
        .collect();
    // m=2, n=3: positions 0..5, segments A,B,B,C,C,C
    let seq = build_input_sequence(&mut tape, &nodes, &cfg, q, &users, &items, 0).unwrap();
    let x = tape.value(seq.x).clone();
    let expect = |unit: &Tensor, pos: usize, seg: usize| -> Vec<f64> {
        unit.data()
            .iter()
            .enumerate()
            .map(|(c, v)| v + params.pos_emb.at(pos, c) + params.seg_emb.at(seg, c))
            .collect()
    };
    assert_eq!(x.row(0), expect(tape.value(q), 0, 0));
    assert_eq!(x.row(1), expect(tape.value(users[0].unwrap()), 1, 1));
    assert_eq!(x.row(2), expect(tape.value(users[1].unwrap()), 2, 1));
    assert_eq!(x.row(3), expect(tape.value(items[0].unwrap()), 3, 2));
    assert_eq!(x.row(4), expect(tape.value(items[1].unwrap()), 4, 2));
    assert_eq!(x.row(5), expect(tape.value(items[2].unwrap()), 5, 2));
    assert_eq!(
        seq.labels,
        vec![
            UnitLabel::Query,
            UnitLabel::UserReview(1),
            UnitLabel::UserReview(2),
            UnitLabel::ItemReview(1),
            UnitLabel::ItemReview(2),
            UnitLabel::ItemReview(3),
        ]
    );

    // m=0, n=1: the item review sits at position 1 with segment C
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    let q = encode_unit(&mut tape, &nodes, &[1], UnitKind::Query).unwrap();
    let i1 = encode_unit(&mut tape, &nodes, &[4], UnitKind::Review).unwrap();
    let seq = build_input_sequence(&mut tape, &nodes, &cfg, q, &[], &[Some(i1)], 0).unwrap();
    let x = tape.value(seq.x).clone();
    assert_eq!(x.row(1), expect(tape.value(i1), 1, 2));
}

#[test]
fn history_over_caps_rejected() {
    let cfg = tiny_config();
    let params = random_params(&cfg, 7);
    let inputs = ScoreInputs {
        query: vec![1],
        user_reviews: vec![vec![2]; cfg.m_max + 1],
        item_reviews: vec![vec![3]],
        ..ScoreInputs::default()
    };
    let err = score_item(&params, &cfg, &inputs).unwrap_err();
    assert!(err.to_string().contains("user history"));
}

#[test]
fn single_unit_attends_to_itself() {
    let cfg = tiny_config();
    let params = random_params(&cfg, 8);
    let inputs = ScoreInputs {
        query: vec![1],
        ..ScoreInputs::default()
    };
    // query plus one masked description slot: the query is the only real unit
    let (_, trace) = score_item(&params, &cfg, &inputs).unwrap();
    assert_eq!(trace.unit_count(), 1);
    for heads in &trace.layers {
        for head in heads {
            assert!((head.at(0, 0) - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_units_split_attention_evenly() {
    let cfg = tiny_config();
    let params = random_params(&cfg, 9);
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    let unit = encode_unit(&mut tape, &nodes, &[3, 4], UnitKind::Review).unwrap();
    let seq = build_input_sequence(
        &mut tape,
        &nodes,
        &cfg,
        unit,
        &[],
        &[Some(unit)],
        0,
    )
    .unwrap();
    // both rows hold the same vector, so each attends 0.5/0.5
    let out = forward_score(&mut tape, &nodes, &cfg, seq).unwrap();
    for heads in &out.attention {
        for &head in heads {
            let probs = tape.value(head);
            for r in 0..2 {
                assert!((probs.at(r, 0) - 0.5).abs() < 1e-12);
                assert!((probs.at(r, 1) - 0.5).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_output_head_scores_zero() {
    let cfg = tiny_config();
    let mut params = random_params(&cfg, 10);
    for v in params.out_w.data_mut() {
        *v = 0.0;
    }
    let inputs = ScoreInputs {
        query: vec![1],
        user_reviews: vec![vec![2], vec![3]],
        item_reviews: vec![vec![4], vec![5]],
        ..ScoreInputs::default()
    };
    let (score, _) = score_item(&params, &cfg, &inputs).unwrap();
    assert_eq!(score, 0.0);
}

/// Straight-line re-implementation of one transformer layer (no tape), used
/// as an independent oracle.
fn straight_line_layer(
    x: &[Vec<f64>],
    mask: &[bool],
    params: &LayerParams,
    cfg: &RtmConfig,
) -> Vec<Vec<f64>> {
    let l = x.len();
    let d = cfg.d;
    let dh = cfg.head_dim();
    let matvec = |m: &Tensor, v: &[f64]| -> Vec<f64> {
        (0..m.view_2d().1)
            .map(|c| (0..v.len()).map(|r| v[r] * m.at(r, c)).sum())
            .collect()
    };
    let q: Vec<Vec<f64>> = x.iter().map(|row| matvec(&params.attn_q, row)).collect();
    let k: Vec<Vec<f64>> = x.iter().map(|row| matvec(&params.attn_k, row)).collect();
    let v: Vec<Vec<f64>> = x.iter().map(|row| matvec(&params.attn_v, row)).collect();

    let mut heads_out = vec![vec![0.0; d]; l];
    for j in 0..cfg.heads {
        let cols = j * dh..(j + 1) * dh;
        for i in 0..l {
            let logits: Vec<f64> = (0..l)
                .map(|t| {
                    cols.clone()
                        .map(|c| q[i][c] * k[t][c])
                        .sum::<f64>()
                        / (dh as f64).sqrt()
                })
                .collect();
            let probs = softmax_masked_slice(&logits, mask).unwrap();
            for (c_out, c_in) in cols.clone().enumerate() {
                heads_out[i][j * dh + c_out] =
                    (0..l).map(|t| probs[t] * v[t][c_in]).sum();
            }
        }
    }
    let mixed: Vec<Vec<f64>> = heads_out
        .iter()
        .map(|row| matvec(&params.attn_out, row))
        .collect();

    let layer_norm = |row: &[f64], gain: &Tensor, bias: &Tensor| -> Vec<f64> {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.iter()
            .enumerate()
            .map(|(c, v)| gain.data()[c] * (v - mean) * inv + bias.data()[c])
            .collect()
    };

    (0..l)
        .map(|i| {
            let res1: Vec<f64> = x[i].iter().zip(&mixed[i]).map(|(a, b)| a + b).collect();
            let y = layer_norm(&res1, &params.ln1_gain, &params.ln1_bias);
            let h1: Vec<f64> = matvec(&params.ffn_w1, &y)
                .iter()
                .zip(params.ffn_b1.data())
                .map(|(v, b)| (v + b).max(0.0))
                .collect();
            let ffn: Vec<f64> = matvec(&params.ffn_w2, &h1)
                .iter()
                .zip(params.ffn_b2.data())
                .map(|(v, b)| v + b)
                .collect();
            let res2: Vec<f64> = y.iter().zip(&ffn).map(|(a, b)| a + b).collect();
            layer_norm(&res2, &params.ln2_gain, &params.ln2_bias)
        })
        .collect()
}

#[test]
fn transformer_layer_matches_straight_line_oracle() {
    let cfg = RtmConfig {
        activation: Activation::Relu,
        ..tiny_config()
    };
    let params = random_params(&cfg, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let l = 5;
    let rows: Vec<Vec<f64>> = (0..l)
        .map(|_| (0..cfg.d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mask = vec![true, true, true, true, false];
    let mut masked_rows = rows.clone();
    masked_rows[4] = vec![0.0; cfg.d];

    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    let x = tape.constant(Tensor::matrix(
        l,
        cfg.d,
        masked_rows.iter().flatten().copied().collect(),
    ));
    let (out, _) = transformer_layer(
        &mut tape,
        &nodes.layers[0],
        x,
        &std::rc::Rc::new(mask.clone()),
        &cfg,
    )
    .unwrap();

    let oracle = straight_line_layer(&masked_rows, &mask, &params.layers[0], &cfg);
    let got = tape.value(out);
    for i in 0..l {
        for c in 0..cfg.d {
            assert!(
                (got.at(i, c) - oracle[i][c]).abs() < 1e-12,
                "row {i} col {c}: {} vs {}",
                got.at(i, c),
                oracle[i][c]
            );
        }
    }
}

#[test]
fn residual_only_layer_is_double_layer_norm() {
    let cfg = tiny_config();
    let mut params = random_params(&cfg, 12);
    let l0 = &mut params.layers[0];
    for t in [&mut l0.attn_v, &mut l0.ffn_w1, &mut l0.ffn_w2] {
        for v in t.data_mut() {
            *v = 0.0;
        }
    }
    for t in [&mut l0.ffn_b1, &mut l0.ffn_b2] {
        for v in t.data_mut() {
            *v = 0.0;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..cfg.d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    let x = tape.constant(Tensor::matrix(
        3,
        cfg.d,
        rows.iter().flatten().copied().collect(),
    ));
    let mask = std::rc::Rc::new(vec![true; 3]);
    let (out, _) = transformer_layer(&mut tape, &nodes.layers[0], x, &mask, &cfg).unwrap();

    let ln = |row: &[f64], gain: &Tensor, bias: &Tensor| -> Vec<f64> {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.iter()
            .enumerate()
            .map(|(c, v)| gain.data()[c] * (v - mean) * inv + bias.data()[c])
            .collect()
    };
    for (i, row) in rows.iter().enumerate() {
        let expect = ln(
            &ln(row, &params.layers[0].ln1_gain, &params.layers[0].ln1_bias),
            &params.layers[0].ln2_gain,
            &params.layers[0].ln2_bias,
        );
        for c in 0..cfg.d {
            assert!((tape.value(out).at(i, c) - expect[c]).abs() < 1e-12);
        }
    }
}

fn random_inputs(cfg: &RtmConfig, rng: &mut ChaCha8Rng, m: usize, n: usize) -> ScoreInputs {
    let unit = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        let len = rng.gen_range(1..4);
        (0..len)
            .map(|_| rng.gen_range(0..cfg.vocab_size as u32))
            .collect()
    };
    ScoreInputs {
        query: unit(rng),
        user_reviews: (0..m).map(|_| unit(rng)).collect(),
        item_reviews: (0..n).map(|_| unit(rng)).collect(),
        item_description: unit(rng),
        pad_slots: 0,
    }
}

#[test]
fn permutation_invariance_without_toggles() {
    use rand::seq::SliceRandom;
    let cfg = tiny_config(); // use_pos = use_seg = false
    let params = random_params(&cfg, 14);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let inputs = random_inputs(&cfg, &mut rng, 3, 4);
    let (base, _) = score_item(&params, &cfg, &inputs).unwrap();

    // permute the pooled review units across both histories
    let mut units: Vec<Vec<u32>> = inputs
        .user_reviews
        .iter()
        .chain(inputs.item_reviews.iter())
        .cloned()
        .collect();
    let lo = units.len().saturating_sub(cfg.n_max);
    let hi = units.len().min(cfg.m_max);
    for _ in 0..25 {
        units.shuffle(&mut rng);
        let split = rng.gen_range(lo..=hi);
        let permuted = ScoreInputs {
            query: inputs.query.clone(),
            user_reviews: units[..split].to_vec(),
            item_reviews: units[split..].to_vec(),
            item_description: inputs.item_description.clone(),
            pad_slots: 0,
        };
        let (score, _) = score_item(&params, &cfg, &permuted).unwrap();
        assert!(
            (score - base).abs() <= 1e-9,
            "permutation changed score: {score} vs {base}"
        );
    }
}

#[test]
fn segment_embeddings_break_cross_segment_swaps_only() {
    use rand::seq::SliceRandom;
    let cfg = RtmConfig {
        use_seg: true,
        ..tiny_config()
    };
    let params = random_params(&cfg, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let inputs = random_inputs(&cfg, &mut rng, 3, 4);
    let (base, _) = score_item(&params, &cfg, &inputs).unwrap();

    // within-segment permutations keep the score
    for _ in 0..25 {
        let mut user = inputs.user_reviews.clone();
        let mut item = inputs.item_reviews.clone();
        user.shuffle(&mut rng);
        item.shuffle(&mut rng);
        let permuted = ScoreInputs {
            query: inputs.query.clone(),
            user_reviews: user,
            item_reviews: item,
            item_description: inputs.item_description.clone(),
            pad_slots: 0,
        };
        let (score, _) = score_item(&params, &cfg, &permuted).unwrap();
        assert!((score - base).abs() <= 1e-9);
    }

    // swapping a user review with an item review changes the score
    let mut swapped = inputs.clone();
    std::mem::swap(&mut swapped.user_reviews[0], &mut swapped.item_reviews[0]);
    let (score, _) = score_item(&params, &cfg, &swapped).unwrap();
    assert!((score - base).abs() > 1e-6);
}

#[test]
fn padding_is_bitwise_neutral() {
    let cfg = RtmConfig {
        use_pos: true,
        use_seg: true,
        ..tiny_config()
    };
    let params = random_params(&cfg, 18);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let inputs = random_inputs(&cfg, &mut rng, 2, 3);
    let (base, base_trace) = score_item(&params, &cfg, &inputs).unwrap();
    for pad in [1, 3, 7] {
        let padded = ScoreInputs {
            pad_slots: pad,
            ..inputs.clone()
        };
        let (score, trace) = score_item(&params, &cfg, &padded).unwrap();
        assert_eq!(score.to_bits(), base.to_bits(), "pad {pad} changed the score");
        assert_eq!(trace, base_trace);
    }
}

#[test]
fn degraded_modes_share_the_code_path() {
    let cfg = tiny_config();
    let params = random_params(&cfg, 20);
    // m = 0 equals an explicitly empty user list
    let non_personalized = ScoreInputs {
        query: vec![1, 2],
        user_reviews: vec![],
        item_reviews: vec![vec![3], vec![4]],
        ..ScoreInputs::default()
    };
    let (a, _) = score_item(&params, &cfg, &non_personalized).unwrap();
    let same = ScoreInputs {
        user_reviews: Vec::new(),
        ..non_personalized.clone()
    };
    let (b, _) = score_item(&params, &cfg, &same).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());

    // n = 0 falls back to the description pseudo-review
    let fallback = ScoreInputs {
        query: vec![1, 2],
        user_reviews: vec![vec![5]],
        item_reviews: vec![],
        item_description: vec![6, 7],
        pad_slots: 0,
    };
    let (c, trace) = score_item(&params, &cfg, &fallback).unwrap();
    let explicit = ScoreInputs {
        item_reviews: vec![vec![6, 7]],
        item_description: vec![],
        ..fallback.clone()
    };
    let (d, _) = score_item(&params, &cfg, &explicit).unwrap();
    assert_eq!(c.to_bits(), d.to_bits());
    assert_eq!(trace.unit_count(), 3);
}

#[test]
fn attention_rows_sum_to_one_over_real_units() {
    let cfg = RtmConfig {
        layers: 2,
        use_pos: true,
        use_seg: true,
        ..tiny_config()
    };
    let params = random_params(&cfg, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let inputs = random_inputs(&cfg, &mut rng, 4, 5);
    let (_, trace) = score_item(&params, &cfg, &inputs).unwrap();
    assert_eq!(trace.layer_count(), 2);
    assert_eq!(trace.head_count(), cfg.heads);
    for heads in &trace.layers {
        for head in heads {
            let (rows, _) = head.view_2d();
            for r in 0..rows {
                let sum: f64 = head.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(head.row(r).iter().all(|&v| v >= 0.0));
            }
        }
    }
}

#[test]
fn toggles_zero_unused_table_gradients() {
    let cfg = tiny_config(); // both toggles off
    let params = random_params(&cfg, 23);
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let inputs = random_inputs(&cfg, &mut rng, 2, 2);
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, true);
    let out = build_and_score(&mut tape, &nodes, &cfg, &inputs).unwrap();
    let grads = tape.backward(out.score).unwrap();
    let g_pos = grads.get(nodes.pos_emb, tape.value(nodes.pos_emb)).unwrap();
    let g_seg = grads.get(nodes.seg_emb, tape.value(nodes.seg_emb)).unwrap();
    assert!(g_pos.data().iter().all(|&v| v == 0.0));
    assert!(g_seg.data().iter().all(|&v| v == 0.0));
    // word embeddings do receive gradient
    let g_word = grads.get(nodes.word_emb, tape.value(nodes.word_emb)).unwrap();
    assert!(g_word.data().iter().any(|&v| v != 0.0));
}
