//! Subcommand implementations: each stage reads its prerequisites from the
//! working directory, writes its artifacts back, and fails with a typed
//! error that the CLI maps onto exit codes.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::RunConfig;
use crate::corpus::{
    ingest::{ingest_meta, ingest_reviews},
    kcore::k_core_filter,
    normalize::{default_stopwords, load_stopwords},
    queries::build_queries,
    split::chronological_split,
    synth::generate_synthetic,
    Catalogue, Corpus, Partition, Vocab, VOCAB_FILE,
};
use crate::error::ModelError;
use crate::eval::{evaluate_run, fisher_randomization_test, MetricReport, Qrels};
use crate::explain::{attention_report, machine_lines, render_case, ExplanationReport};
use crate::lexical::{bm25_rank, popularity_rank, read_run, write_run, InvertedIndex, RankedList};
use crate::model::{score_item, Checkpoint, RtmParameters, UnitLabel};
use crate::train::{
    load_embeddings, pretrain_embeddings, save_embeddings, train, ScoringContext, TrainSinks,
    TrainerState,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Missing(PathBuf),
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Missing(_) => 3,
            PipelineError::Runtime(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn runtime<E: std::fmt::Display>(e: E) -> PipelineError {
    PipelineError::Runtime(e.to_string())
}

/// Fixed working-directory layout.
pub struct Workdir {
    pub root: PathBuf,
}

impl Workdir {
    pub fn new(root: &Path) -> Workdir {
        Workdir {
            root: root.to_path_buf(),
        }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join("index").join("index.bin")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn qrels_path(&self, split: Partition) -> PathBuf {
        self.corpus_dir().join(format!("qrels.{split}.txt"))
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.checkpoints_dir().join("embeddings.txt")
    }

    pub fn model_path(&self) -> PathBuf {
        self.checkpoints_dir().join("model.ckpt")
    }

    fn ensure(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(runtime)
    }

    /// Take the single-process lock for this working directory.
    pub fn lock(&self) -> Result<WorkdirLock> {
        self.ensure(&self.root)?;
        let path = self.root.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(WorkdirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Runtime(
                format!("workdir is locked by another process ({})", path.display()),
            )),
            Err(e) => Err(runtime(e)),
        }
    }
}

pub struct WorkdirLock {
    path: PathBuf,
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn load_corpus(wd: &Workdir) -> Result<Corpus> {
    let dir = wd.corpus_dir();
    if !dir.join("reviews.jsonl").exists() {
        return Err(PipelineError::Missing(dir.join("reviews.jsonl")));
    }
    Corpus::load(&dir).map_err(runtime)
}

fn load_vocab(wd: &Workdir) -> Result<Vocab> {
    let path = wd.corpus_dir().join(VOCAB_FILE);
    if !path.exists() {
        return Err(PipelineError::Missing(path));
    }
    Vocab::load(&path).map_err(runtime)
}

fn stopword_set(cfg: &RunConfig) -> Result<std::collections::BTreeSet<String>> {
    match &cfg.stopwords {
        Some(path) => {
            if !path.exists() {
                return Err(PipelineError::Missing(path.clone()));
            }
            let content = fs::read_to_string(path).map_err(runtime)?;
            Ok(load_stopwords(&content))
        }
        None => Ok(default_stopwords()),
    }
}

/// Counters printed by `ingest`.
#[derive(Debug, Default)]
pub struct IngestSummary {
    pub reviews_in: usize,
    pub reviews_kept: usize,
    pub dropped_empty: usize,
    pub line_errors: usize,
    pub queries: usize,
    pub interactions: usize,
    pub moved_back: usize,
    pub users_all_train: usize,
    pub vocab: usize,
}

/// Ingest raw review/meta files into the prepared corpus artifacts:
/// normalized records, the k-core filter, query construction, the
/// chronological split, qrels per split, and the vocabulary.
pub fn run_ingest(cfg: &RunConfig, reviews_path: &Path, meta_path: &Path) -> Result<IngestSummary> {
    if !reviews_path.exists() {
        return Err(PipelineError::Missing(reviews_path.to_path_buf()));
    }
    if !meta_path.exists() {
        return Err(PipelineError::Missing(meta_path.to_path_buf()));
    }
    let wd = Workdir::new(&cfg.workdir);
    let reviews_file = fs::File::open(reviews_path).map_err(runtime)?;
    let review_report = ingest_reviews(BufReader::new(reviews_file)).map_err(runtime)?;
    let meta_file = fs::File::open(meta_path).map_err(runtime)?;
    let meta_report = ingest_meta(BufReader::new(meta_file)).map_err(runtime)?;

    let mut summary = IngestSummary {
        reviews_in: review_report.records.len()
            + review_report.dropped_empty
            + review_report.errors.len(),
        dropped_empty: review_report.dropped_empty,
        line_errors: review_report.errors.len() + meta_report.errors.len(),
        ..IngestSummary::default()
    };
    for err in review_report.errors.iter().chain(&meta_report.errors) {
        eprintln!("ingest: line {}: {}", err.line, err.message);
    }

    let records = k_core_filter(review_report.records, cfg.k_core);
    summary.reviews_kept = records.len();

    let stopwords = stopword_set(cfg)?;
    let (queries, item_queries, skipped_paths) = build_queries(&meta_report.records, &stopwords);
    if skipped_paths > 0 {
        eprintln!("ingest: {skipped_paths} category paths were all stopwords; skipped");
    }
    summary.queries = queries.len();

    let outcome = chronological_split(
        &records,
        &queries,
        &item_queries,
        (0.8, 0.1, 0.1),
        cfg.train_query_fraction,
        cfg.split_seed,
    );
    summary.interactions = outcome.interactions.len();
    summary.moved_back = outcome.stats.moved_back;
    summary.users_all_train = outcome.stats.users_all_train;

    let meta = meta_report
        .records
        .into_iter()
        .map(|m| (m.item_id.clone(), m))
        .collect();
    let corpus = Corpus {
        reviews: records,
        review_partition: outcome.review_partition,
        meta,
        queries,
        item_queries,
        interactions: outcome.interactions,
        train_only_queries: outcome.train_only_queries,
    };
    wd.ensure(&wd.corpus_dir())?;
    corpus.save(&wd.corpus_dir()).map_err(runtime)?;

    for split in [Partition::Valid, Partition::Test] {
        let mut qrels = Qrels::default();
        for it in &corpus.interactions {
            if it.partition == split {
                qrels.add(&it.pair_id(), &it.item_id);
            }
        }
        qrels.save(&wd.qrels_path(split)).map_err(runtime)?;
    }

    let vocab = Vocab::build(&corpus);
    summary.vocab = vocab.len();
    vocab
        .save(&wd.corpus_dir().join(VOCAB_FILE))
        .map_err(runtime)?;
    Ok(summary)
}

/// Generate the synthetic corpus, write the raw input files plus the label
/// sidecar, then ingest them so downstream stages run unchanged.
pub fn run_synth(cfg: &RunConfig) -> Result<IngestSummary> {
    let wd = Workdir::new(&cfg.workdir);
    wd.ensure(&wd.synth_dir())?;
    let synthetic = generate_synthetic(&cfg.synth_config(), cfg.synth_seed)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let reviews_path = wd.synth_dir().join("reviews.jsonl");
    let meta_path = wd.synth_dir().join("meta.jsonl");
    synthetic.write_reviews(&reviews_path).map_err(runtime)?;
    synthetic.write_meta(&meta_path).map_err(runtime)?;
    synthetic
        .sidecar
        .save(&wd.synth_dir().join("sidecar.jsonl"))
        .map_err(runtime)?;
    run_ingest(cfg, &reviews_path, &meta_path)
}

/// Build and checkpoint the inverted index over train-partition reviews.
pub fn run_index(cfg: &RunConfig) -> Result<PathBuf> {
    let wd = Workdir::new(&cfg.workdir);
    let corpus = load_corpus(&wd)?;
    let catalogue = Catalogue::build(&corpus);
    let index = InvertedIndex::build(&corpus, &catalogue);
    let path = wd.index_path();
    wd.ensure(path.parent().unwrap())?;
    index.save(&path).map_err(runtime)?;
    Ok(path)
}

/// The (query, user) pairs of a split, with their target items.
fn eval_pairs(corpus: &Corpus, split: Partition) -> BTreeMap<String, u32> {
    let mut pairs = BTreeMap::new();
    for it in &corpus.interactions {
        if it.partition == split {
            pairs.insert(it.pair_id(), it.query_id);
        }
    }
    pairs
}

fn parse_split(split: &str) -> Result<Partition> {
    Partition::parse(split).map_err(|e| PipelineError::Config(e.to_string()))
}

/// First-stage retrieval for every pair of a split. `method` is `bm25` or
/// `pop`.
pub fn run_retrieve(
    cfg: &RunConfig,
    split: &str,
    method: &str,
    out: Option<&Path>,
) -> Result<PathBuf> {
    let split = parse_split(split)?;
    let wd = Workdir::new(&cfg.workdir);
    let corpus = load_corpus(&wd)?;
    let index_path = wd.index_path();
    if !index_path.exists() {
        return Err(PipelineError::Missing(index_path));
    }
    let index = InvertedIndex::load(&index_path).map_err(runtime)?;
    let pairs = eval_pairs(&corpus, split);

    let runs: Vec<RankedList> = match method {
        "bm25" => pairs
            .iter()
            .map(|(pair_id, &qid)| {
                let mut list = bm25_rank(
                    pair_id,
                    &corpus.query(qid).tokens,
                    &index,
                    cfg.candidates_k,
                    cfg.bm25_k1,
                    cfg.bm25_b,
                );
                list.pair_id = pair_id.clone();
                list
            })
            .collect(),
        "pop" => {
            let base = popularity_rank(&corpus, &index.items, cfg.candidates_k);
            pairs
                .keys()
                .map(|pair_id| RankedList {
                    pair_id: pair_id.clone(),
                    entries: base.entries.clone(),
                })
                .collect()
        }
        other => {
            return Err(PipelineError::Config(format!(
                "unknown retrieval method {other:?} (expected bm25 or pop)"
            )))
        }
    };

    let path = match out {
        Some(p) => p.to_path_buf(),
        None => wd.runs_dir().join(format!("{method}.{split}.run")),
    };
    wd.ensure(path.parent().unwrap())?;
    write_run(&path, &runs, method).map_err(runtime)?;
    Ok(path)
}

/// Pretrain skip-gram word embeddings over train-partition reviews.
pub fn run_pretrain(cfg: &RunConfig) -> Result<PathBuf> {
    let wd = Workdir::new(&cfg.workdir);
    let corpus = load_corpus(&wd)?;
    let vocab = load_vocab(&wd)?;
    let sentences: Vec<Vec<u32>> = corpus
        .reviews
        .iter()
        .zip(&corpus.review_partition)
        .filter(|(_, p)| **p == Partition::Train)
        .map(|(r, _)| vocab.resolve(&r.tokens))
        .collect();
    let table = pretrain_embeddings(&sentences, vocab.len(), &vocab.counts, &cfg.w2v_config())
        .map_err(runtime)?;
    let path = wd.embeddings_path();
    wd.ensure(path.parent().unwrap())?;
    save_embeddings(&path, &vocab.words, &table).map_err(runtime)?;
    Ok(path)
}

/// Train the scoring model; writes per-epoch checkpoints, the training log,
/// and the final `model.ckpt`.
pub fn run_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<PathBuf> {
    let wd = Workdir::new(&cfg.workdir);
    let corpus = load_corpus(&wd)?;
    let vocab = load_vocab(&wd)?;
    let catalogue = Catalogue::build(&corpus);
    let model_cfg = cfg.rtm_config(vocab.len());
    model_cfg
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let ctx = ScoringContext::new(&corpus, &catalogue, &vocab, model_cfg.clone());
    let examples = ctx.train_examples();
    if examples.is_empty() {
        return Err(PipelineError::Runtime(
            "no training interactions in the corpus".into(),
        ));
    }

    let (mut params, mut state) = match resume {
        Some(path) => {
            if !path.exists() {
                return Err(PipelineError::Missing(path.to_path_buf()));
            }
            let ck = Checkpoint::load(path).map_err(runtime)?;
            let params = ck.to_params().map_err(runtime)?;
            let state = TrainerState::from_checkpoint(&ck, &params).ok_or_else(|| {
                PipelineError::Runtime("checkpoint has no trainer state to resume".into())
            })?;
            (params, state)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
            let mut params = RtmParameters::init(&model_cfg, &mut rng);
            if let Some(emb_path) = &cfg.embeddings {
                if !emb_path.exists() {
                    return Err(PipelineError::Missing(emb_path.clone()));
                }
                params.word_emb =
                    load_embeddings(emb_path, &vocab.words, &params.word_emb).map_err(runtime)?;
            }
            let state = TrainerState::new(&params, cfg.train_seed);
            (params, state)
        }
    };

    wd.ensure(&wd.checkpoints_dir())?;
    let log_path = wd.checkpoints_dir().join("train.log");
    let mut log = fs::File::create(&log_path).map_err(runtime)?;
    let ckpt_dir = wd.checkpoints_dir();
    let mut on_epoch = |epoch: usize, mean_loss: f64| {
        println!("epoch {epoch}: mean loss {mean_loss:.6}");
    };
    let mut sinks = TrainSinks {
        log: Some(&mut log),
        checkpoint_dir: Some(&ckpt_dir),
        on_epoch: Some(&mut on_epoch),
    };
    train(
        &ctx,
        &examples,
        &mut params,
        &mut state,
        &cfg.train_settings(),
        &mut sinks,
    )
    .map_err(runtime)?;

    let mut ck = Checkpoint::with_params(model_cfg, &params, false);
    state.add_to(&mut ck, &params);
    let path = wd.model_path();
    ck.save(&path).map_err(runtime)?;
    Ok(path)
}

fn parse_pair_id(pair_id: &str) -> Option<(u32, &str)> {
    let rest = pair_id.strip_prefix('q')?;
    let (qid, user) = rest.split_once(':')?;
    Some((qid.parse().ok()?, user))
}

/// Re-rank a candidate run with a trained model.
pub fn run_rerank(
    cfg: &RunConfig,
    checkpoint: &Path,
    candidates: &Path,
    out: Option<&Path>,
) -> Result<PathBuf> {
    if !checkpoint.exists() {
        return Err(PipelineError::Missing(checkpoint.to_path_buf()));
    }
    if !candidates.exists() {
        return Err(PipelineError::Missing(candidates.to_path_buf()));
    }
    let wd = Workdir::new(&cfg.workdir);
    let corpus = load_corpus(&wd)?;
    let vocab = load_vocab(&wd)?;
    let catalogue = Catalogue::build(&corpus);
    let ck = Checkpoint::load(checkpoint).map_err(runtime)?;
    let params = ck.to_params().map_err(runtime)?;
    if ck.config.vocab_size != vocab.len() {
        return Err(PipelineError::Runtime(format!(
            "checkpoint vocabulary ({}) does not match the corpus vocabulary ({})",
            ck.config.vocab_size,
            vocab.len()
        )));
    }
    let ctx = ScoringContext::new(&corpus, &catalogue, &vocab, ck.config.clone());

    let candidate_runs = read_run(candidates).map_err(runtime)?;
    let mut reranked = Vec::with_capacity(candidate_runs.len());
    for run in &candidate_runs {
        let Some((qid, user_id)) = parse_pair_id(&run.pair_id) else {
            eprintln!("rerank: skipping unparseable pair id {:?}", run.pair_id);
            continue;
        };
        if qid as usize >= corpus.queries.len() {
            eprintln!("rerank: skipping unknown query {qid}");
            continue;
        }
        let query = vocab.resolve(&corpus.query(qid).tokens);
        if query.is_empty() {
            eprintln!("rerank: query {qid} has no in-vocabulary tokens; skipped");
            continue;
        }
        let user_reviews = ctx.user_history(user_id, None);
        let user_dense = catalogue.user_index.get(user_id).copied().unwrap_or(u32::MAX);
        let mut entries = Vec::with_capacity(run.entries.len());
        for (item_id, _) in &run.entries {
            let Some(&item_dense) = catalogue.item_index.get(item_id) else {
                continue;
            };
            let inputs = ctx.inputs_for(&query, user_dense, &user_reviews, item_dense, None);
            let (score, _) = score_item(&params, &ck.config, &inputs).map_err(runtime)?;
            entries.push((item_id.clone(), score));
        }
        reranked.push(RankedList::from_scores(run.pair_id.clone(), entries));
    }

    let path = match out {
        Some(p) => p.to_path_buf(),
        None => wd.runs_dir().join("rtm.run"),
    };
    wd.ensure(path.parent().unwrap())?;
    write_run(&path, &reranked, "rtm").map_err(runtime)?;
    Ok(path)
}

/// Evaluate a run file against a split's qrels; writes and returns the
/// report text.
pub fn run_eval(
    cfg: &RunConfig,
    run_path: &Path,
    split: &str,
    per_pair: bool,
) -> Result<(MetricReport, String)> {
    let split = parse_split(split)?;
    let wd = Workdir::new(&cfg.workdir);
    if !run_path.exists() {
        return Err(PipelineError::Missing(run_path.to_path_buf()));
    }
    let qrels_path = wd.qrels_path(split);
    if !qrels_path.exists() {
        return Err(PipelineError::Missing(qrels_path));
    }
    let qrels = Qrels::load(&wd.qrels_path(split)).map_err(runtime)?;
    let runs = read_run(run_path).map_err(runtime)?;
    let report = evaluate_run(&runs, &qrels, cfg.metric_k);
    let text = report.render(per_pair);
    wd.ensure(&wd.reports_dir())?;
    let stem = run_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    fs::write(wd.reports_dir().join(format!("eval.{stem}.txt")), &text).map_err(runtime)?;
    Ok((report, text))
}

/// Paired Fisher randomization test between two runs over a split's qrels.
pub fn run_sigtest(cfg: &RunConfig, run_a: &Path, run_b: &Path, split: &str) -> Result<String> {
    let split = parse_split(split)?;
    let wd = Workdir::new(&cfg.workdir);
    for p in [run_a, run_b] {
        if !p.exists() {
            return Err(PipelineError::Missing(p.to_path_buf()));
        }
    }
    let qrels_path = wd.qrels_path(split);
    if !qrels_path.exists() {
        return Err(PipelineError::Missing(qrels_path));
    }
    let qrels = Qrels::load(&qrels_path).map_err(runtime)?;
    let report_a = evaluate_run(&read_run(run_a).map_err(runtime)?, &qrels, cfg.metric_k);
    let report_b = evaluate_run(&read_run(run_b).map_err(runtime)?, &qrels, cfg.metric_k);

    // pair up on the intersection so the test stays paired
    let shared: Vec<&String> = report_a
        .per_pair
        .keys()
        .filter(|k| report_b.per_pair.contains_key(*k))
        .collect();
    if shared.is_empty() {
        return Err(PipelineError::Runtime(
            "the two runs share no evaluated pairs".into(),
        ));
    }
    let metric_names = [
        "mrr".to_string(),
        format!("ndcg@{}", cfg.metric_k),
        format!("recall@{}", cfg.metric_k),
    ];
    let mut out = String::new();
    for (metric, name) in metric_names.iter().enumerate() {
        let a: Vec<f64> = shared.iter().map(|k| report_a.per_pair[*k][metric]).collect();
        let b: Vec<f64> = shared.iter().map(|k| report_b.per_pair[*k][metric]).collect();
        let p = fisher_randomization_test(&a, &b, cfg.sigtest_rounds, cfg.sigtest_seed)
            .map_err(runtime)?;
        let significant = if p < 0.05 { "yes" } else { "no" };
        out.push_str(&format!("{name}\t{p:.6}\t{significant}\n"));
    }
    wd.ensure(&wd.reports_dir())?;
    fs::write(wd.reports_dir().join("sigtest.txt"), &out).map_err(runtime)?;
    Ok(out)
}

fn parse_unit_label(s: &str) -> Option<UnitLabel> {
    if s == "q" {
        return Some(UnitLabel::Query);
    }
    if let Some(k) = s.strip_prefix("ur") {
        return k.parse().ok().map(UnitLabel::UserReview);
    }
    if let Some(k) = s.strip_prefix("ir") {
        return k.parse().ok().map(UnitLabel::ItemReview);
    }
    None
}

/// Score one (pair, item) and write the attention explanation report.
pub fn run_explain(
    cfg: &RunConfig,
    checkpoint: &Path,
    pair_id: &str,
    item_id: &str,
    layer: Option<usize>,
    reference: &str,
    top_k: usize,
    bottom_k: usize,
) -> Result<String> {
    if !checkpoint.exists() {
        return Err(PipelineError::Missing(checkpoint.to_path_buf()));
    }
    let reference = parse_unit_label(reference).ok_or_else(|| {
        PipelineError::Config(format!(
            "bad reference {reference:?} (expected q, ur<k>, or ir<k>)"
        ))
    })?;
    let wd = Workdir::new(&cfg.workdir);
    let corpus = load_corpus(&wd)?;
    let vocab = load_vocab(&wd)?;
    let catalogue = Catalogue::build(&corpus);
    let ck = Checkpoint::load(checkpoint).map_err(runtime)?;
    let params = ck.to_params().map_err(runtime)?;
    let ctx = ScoringContext::new(&corpus, &catalogue, &vocab, ck.config.clone());

    let (qid, user_id) = parse_pair_id(pair_id)
        .ok_or_else(|| PipelineError::Config(format!("bad pair id {pair_id:?}")))?;
    if qid as usize >= corpus.queries.len() {
        return Err(PipelineError::Config(format!("unknown query {qid}")));
    }
    let Some(&item_dense) = catalogue.item_index.get(item_id) else {
        return Err(PipelineError::Config(format!("unknown item {item_id:?}")));
    };
    let query_tokens = vocab.resolve(&corpus.query(qid).tokens);
    if query_tokens.is_empty() {
        return Err(PipelineError::Runtime(
            ModelError::EmptyQuery.to_string(),
        ));
    }
    let user_reviews = ctx.user_history(user_id, None);
    let user_dense = catalogue.user_index.get(user_id).copied().unwrap_or(u32::MAX);
    let inputs = ctx.inputs_for(&query_tokens, user_dense, &user_reviews, item_dense, None);
    let (score, trace) = score_item(&params, &ck.config, &inputs).map_err(runtime)?;

    let layer = layer.unwrap_or(ck.config.layers);
    let rows = attention_report(&trace, reference, layer)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let report = ExplanationReport {
        pair_id: pair_id.to_string(),
        item_id: item_id.to_string(),
        layer,
        reference,
        rows,
    };

    // snippets come from the normalized review text backing each unit
    let user_history_idx: Vec<usize> = {
        let dense = catalogue.user_index.get(user_id);
        match dense {
            Some(&u) => {
                let all = &catalogue.user_reviews[u as usize];
                let start = all.len().saturating_sub(ck.config.m_max);
                all[start..].to_vec()
            }
            None => Vec::new(),
        }
    };
    let item_history_idx: Vec<usize> = {
        let all = &catalogue.item_reviews[item_dense as usize];
        let eligible: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&idx| corpus.reviews[idx].user_id != user_id)
            .collect();
        let start = eligible.len().saturating_sub(ck.config.n_max);
        eligible[start..].to_vec()
    };
    let review_text = |unit: UnitLabel| -> Option<String> {
        let idx = match unit {
            UnitLabel::UserReview(k) => user_history_idx.get(k as usize - 1)?,
            UnitLabel::ItemReview(k) => item_history_idx.get(k as usize - 1)?,
            _ => return None,
        };
        Some(crate::explain::snippet(&corpus.reviews[*idx].tokens))
    };
    let mut text = format!("score: {score:.6e}\n");
    text.push_str(&render_case(
        &report,
        &corpus.query(qid).text(),
        review_text,
        top_k,
        bottom_k,
    ));

    wd.ensure(&wd.reports_dir())?;
    let safe_pair = pair_id.replace(':', "_");
    fs::write(
        wd.reports_dir().join(format!("explain.{safe_pair}.{item_id}.txt")),
        &text,
    )
    .map_err(runtime)?;
    fs::write(
        wd.reports_dir().join(format!("explain.{safe_pair}.{item_id}.tsv")),
        machine_lines(&report),
    )
    .map_err(runtime)?;
    Ok(text)
}
