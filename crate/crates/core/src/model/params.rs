//! Learnable parameters and their initialization.

use rand::Rng;

use super::config::RtmConfig;
use crate::numeric::Tensor;

/// Per-layer transformer weights. The per-head Q/K/V projections are stored
/// as full d x d matrices and sliced per head; `attn_out` mixes the
/// concatenated head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub attn_q: Tensor,
    pub attn_k: Tensor,
    pub attn_v: Tensor,
    pub attn_out: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

/// All learnable weights of the scoring model.
#[derive(Clone, Debug, PartialEq)]
pub struct RtmParameters {
    /// vocab_size x d.
    pub word_emb: Tensor,
    /// (m_max + n_max + 1) x d; zero-initialized so the toggle starts neutral.
    pub pos_emb: Tensor,
    /// 3 x d for segments query/user-review/item-review.
    pub seg_emb: Tensor,
    pub query_w: Tensor,
    pub query_b: Tensor,
    pub review_w: Tensor,
    pub review_b: Tensor,
    pub layers: Vec<LayerParams>,
    /// d x 1 scoring head, no bias.
    pub out_w: Tensor,
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::matrix(rows, cols, data)
}

impl RtmParameters {
    /// Fresh parameters: word embeddings uniform in (-0.5/d, 0.5/d),
    /// projections Xavier-uniform, biases zero, layer-norm gain 1 / bias 0,
    /// position and segment tables zero.
    pub fn init(config: &RtmConfig, rng: &mut impl Rng) -> RtmParameters {
        let d = config.d;
        let span = 0.5 / d as f64;
        let word_emb = Tensor::matrix(
            config.vocab_size,
            d,
            (0..config.vocab_size * d)
                .map(|_| rng.gen_range(-span..span))
                .collect(),
        );
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                attn_q: xavier(rng, d, d),
                attn_k: xavier(rng, d, d),
                attn_v: xavier(rng, d, d),
                attn_out: xavier(rng, d, d),
                ffn_w1: xavier(rng, d, config.d_ff),
                ffn_b1: Tensor::zeros(&[config.d_ff]),
                ffn_w2: xavier(rng, config.d_ff, d),
                ffn_b2: Tensor::zeros(&[d]),
                ln1_gain: Tensor::from_vec(&[d], vec![1.0; d]),
                ln1_bias: Tensor::zeros(&[d]),
                ln2_gain: Tensor::from_vec(&[d], vec![1.0; d]),
                ln2_bias: Tensor::zeros(&[d]),
            })
            .collect();
        RtmParameters {
            word_emb,
            pos_emb: Tensor::zeros(&[config.position_table_len(), d]),
            seg_emb: Tensor::zeros(&[3, d]),
            query_w: xavier(rng, d, d),
            query_b: Tensor::zeros(&[d]),
            review_w: xavier(rng, d, d),
            review_b: Tensor::zeros(&[d]),
            layers,
            out_w: xavier(rng, d, 1),
        }
    }

    /// Visit every tensor in a fixed, documented order (the checkpoint and
    /// optimizer-slot order).
    pub fn visit<'a>(&'a self, mut f: impl FnMut(String, &'a Tensor)) {
        f("word_emb".into(), &self.word_emb);
        f("pos_emb".into(), &self.pos_emb);
        f("seg_emb".into(), &self.seg_emb);
        f("query_proj.w".into(), &self.query_w);
        f("query_proj.b".into(), &self.query_b);
        f("review_proj.w".into(), &self.review_w);
        f("review_proj.b".into(), &self.review_b);
        for (i, l) in self.layers.iter().enumerate() {
            f(format!("layers.{i}.attn.wq"), &l.attn_q);
            f(format!("layers.{i}.attn.wk"), &l.attn_k);
            f(format!("layers.{i}.attn.wv"), &l.attn_v);
            f(format!("layers.{i}.attn.wo"), &l.attn_out);
            f(format!("layers.{i}.ffn.w1"), &l.ffn_w1);
            f(format!("layers.{i}.ffn.b1"), &l.ffn_b1);
            f(format!("layers.{i}.ffn.w2"), &l.ffn_w2);
            f(format!("layers.{i}.ffn.b2"), &l.ffn_b2);
            f(format!("layers.{i}.ln1.gain"), &l.ln1_gain);
            f(format!("layers.{i}.ln1.bias"), &l.ln1_bias);
            f(format!("layers.{i}.ln2.gain"), &l.ln2_gain);
            f(format!("layers.{i}.ln2.bias"), &l.ln2_bias);
        }
        f("out.w".into(), &self.out_w);
    }

    /// Mutable references to every tensor, in `visit` order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("word_emb".into(), &mut self.word_emb),
            ("pos_emb".into(), &mut self.pos_emb),
            ("seg_emb".into(), &mut self.seg_emb),
            ("query_proj.w".into(), &mut self.query_w),
            ("query_proj.b".into(), &mut self.query_b),
            ("review_proj.w".into(), &mut self.review_w),
            ("review_proj.b".into(), &mut self.review_b),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layers.{i}.attn.wq"), &mut l.attn_q));
            out.push((format!("layers.{i}.attn.wk"), &mut l.attn_k));
            out.push((format!("layers.{i}.attn.wv"), &mut l.attn_v));
            out.push((format!("layers.{i}.attn.wo"), &mut l.attn_out));
            out.push((format!("layers.{i}.ffn.w1"), &mut l.ffn_w1));
            out.push((format!("layers.{i}.ffn.b1"), &mut l.ffn_b1));
            out.push((format!("layers.{i}.ffn.w2"), &mut l.ffn_w2));
            out.push((format!("layers.{i}.ffn.b2"), &mut l.ffn_b2));
            out.push((format!("layers.{i}.ln1.gain"), &mut l.ln1_gain));
            out.push((format!("layers.{i}.ln1.bias"), &mut l.ln1_bias));
            out.push((format!("layers.{i}.ln2.gain"), &mut l.ln2_gain));
            out.push((format!("layers.{i}.ln2.bias"), &mut l.ln2_bias));
        }
        out.push(("out.w".into(), &mut self.out_w));
        out
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit(|name, t| out.push((name, t)));
        out
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> RtmConfig {
        RtmConfig {
            d: 8,
            heads: 2,
            layers: 2,
            d_ff: 16,
            m_max: 3,
            n_max: 4,
            vocab_size: 11,
            ..RtmConfig::default()
        }
    }

    #[test]
    fn shapes_as_declared() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = RtmParameters::init(&cfg, &mut rng);
        assert_eq!(p.word_emb.shape(), &[11, 8]);
        assert_eq!(p.pos_emb.shape(), &[8, 8]); // 3 + 4 + 1 positions
        assert_eq!(p.seg_emb.shape(), &[3, 8]);
        assert_eq!(p.query_w.shape(), &[8, 8]);
        assert_eq!(p.query_b.shape(), &[8]);
        assert_eq!(p.layers.len(), 2);
        assert_eq!(p.layers[0].ffn_w1.shape(), &[8, 16]);
        assert_eq!(p.layers[0].ffn_w2.shape(), &[16, 8]);
        assert_eq!(p.out_w.shape(), &[8, 1]);
        // zero-initialized toggles start neutral
        assert!(p.pos_emb.data().iter().all(|&v| v == 0.0));
        assert!(p.seg_emb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn visit_order_stable_and_complete() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = RtmParameters::init(&cfg, &mut rng);
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = p.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        assert_eq!(names.first().map(String::as_str), Some("word_emb"));
        assert_eq!(names.last().map(String::as_str), Some("out.w"));
        assert_eq!(names.len(), 7 + 2 * 12 + 1);
    }
}
