//! Skip-gram word embedding pretraining with negative sampling, used to
//! initialize the model's word table.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::TrainError;
use crate::numeric::Tensor;

#[derive(Clone, Debug)]
pub struct W2vConfig {
    pub dim: usize,
    pub window: usize,
    pub negative: usize,
    pub epochs: usize,
    /// Frequency subsampling threshold; frequent words are dropped from the
    /// token stream with the word2vec keep probability.
    pub subsample: f64,
    pub lr0: f64,
    pub seed: u64,
}

impl Default for W2vConfig {
    fn default() -> Self {
        W2vConfig {
            dim: 128,
            window: 5,
            negative: 5,
            epochs: 3,
            subsample: 1e-5,
            lr0: 0.025,
            seed: 1,
        }
    }
}

/// Train skip-gram embeddings over review token streams. Deterministic
/// under the seed; `epochs = 0` returns the random initialization unchanged.
pub fn pretrain_embeddings(
    sentences: &[Vec<u32>],
    vocab_size: usize,
    counts: &[u64],
    cfg: &W2vConfig,
) -> Result<Tensor, TrainError> {
    if vocab_size < cfg.negative + 1 {
        return Err(TrainError::VocabTooSmall {
            got: vocab_size,
            need: cfg.negative + 1,
        });
    }
    assert_eq!(counts.len(), vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let span = 0.5 / cfg.dim as f64;
    let mut input: Vec<f64> = (0..vocab_size * cfg.dim)
        .map(|_| rng.gen_range(-span..span))
        .collect();
    let mut output = vec![0.0f64; vocab_size * cfg.dim];

    if cfg.epochs == 0 {
        return Ok(Tensor::matrix(vocab_size, cfg.dim, input));
    }

    // unigram^(3/4) cumulative table for negative draws
    let mut cdf = Vec::with_capacity(vocab_size);
    let mut acc = 0.0f64;
    for &c in counts {
        acc += (c.max(1) as f64).powf(0.75);
        cdf.push(acc);
    }
    let total_count: u64 = counts.iter().sum();
    let total_count = total_count.max(1);

    let keep_prob = |word: u32| -> f64 {
        if cfg.subsample <= 0.0 {
            return 1.0;
        }
        let f = counts[word as usize] as f64 / total_count as f64;
        if f <= cfg.subsample {
            return 1.0;
        }
        ((cfg.subsample / f).sqrt() + cfg.subsample / f).min(1.0)
    };

    let total_tokens: usize = sentences.iter().map(Vec::len).sum::<usize>() * cfg.epochs;
    let mut processed = 0usize;
    let dim = cfg.dim;
    let mut hidden_grad = vec![0.0f64; dim];

    for _epoch in 0..cfg.epochs {
        for sentence in sentences {
            let kept: Vec<u32> = sentence
                .iter()
                .copied()
                .filter(|&w| rng.gen::<f64>() < keep_prob(w))
                .collect();
            processed += sentence.len();
            let lr = cfg.lr0 * (1.0 - processed as f64 / (total_tokens + 1) as f64).max(1e-4);
            for (center_pos, &center) in kept.iter().enumerate() {
                let shrink = rng.gen_range(0..cfg.window);
                let reach = cfg.window - shrink;
                let lo = center_pos.saturating_sub(reach);
                let hi = (center_pos + reach).min(kept.len().saturating_sub(1));
                for ctx_pos in lo..=hi {
                    if ctx_pos == center_pos {
                        continue;
                    }
                    let context = kept[ctx_pos];
                    hidden_grad.iter_mut().for_each(|v| *v = 0.0);
                    let in_row = center as usize * dim;
                    // positive pair plus `negative` noise draws
                    for k in 0..=cfg.negative {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let r = rng.gen::<f64>() * acc;
                            let mut t = cdf.partition_point(|&c| c < r);
                            if t >= vocab_size {
                                t = vocab_size - 1;
                            }
                            if t as u32 == context {
                                continue;
                            }
                            (t as u32, 0.0)
                        };
                        let out_row = target as usize * dim;
                        let mut dot = 0.0;
                        for c in 0..dim {
                            dot += input[in_row + c] * output[out_row + c];
                        }
                        let pred = 1.0 / (1.0 + (-dot).exp());
                        let g = (label - pred) * lr;
                        for c in 0..dim {
                            hidden_grad[c] += g * output[out_row + c];
                            output[out_row + c] += g * input[in_row + c];
                        }
                    }
                    for c in 0..dim {
                        input[in_row + c] += hidden_grad[c];
                    }
                }
            }
        }
    }
    Ok(Tensor::matrix(vocab_size, cfg.dim, input))
}

/// Plain-text embedding table: `word v1 v2 ...` per line.
pub fn save_embeddings(
    path: &std::path::Path,
    words: &[String],
    table: &Tensor,
) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let (rows, _) = table.view_2d();
    assert_eq!(rows, words.len());
    for (i, word) in words.iter().enumerate() {
        write!(w, "{word}")?;
        for v in table.row(i) {
            write!(w, " {v:.17e}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// Read a table written by [`save_embeddings`], reordered to match `words`.
/// Words missing from the file keep rows from `fallback`.
pub fn load_embeddings(
    path: &std::path::Path,
    words: &[String],
    fallback: &Tensor,
) -> std::io::Result<Tensor> {
    use std::collections::HashMap;
    use std::io::BufRead;
    let (rows, dim) = fallback.view_2d();
    assert_eq!(rows, words.len());
    let index: HashMap<&str, usize> = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();
    let mut out = fallback.clone();
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    for line in reader.lines() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let Some(&row) = index.get(word) else { continue };
        let values: Vec<f64> = parts.filter_map(|p| p.parse().ok()).collect();
        if values.len() == dim {
            out.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(&values);
        }
    }
    Ok(out)
}
