use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use deepmatch_core::checkpoint::{sha256_hex, Checkpoint, CheckpointMeta, QueryModel};
use deepmatch_core::datapipe::synth::{
    generate, BLACKLIST_FILE, CLICK_LOG_FILE, CONCEPTS_FILE, DOC_LOG_FILE, ENTITIES_FILE, EVAL_FILE, PHRASES_FILE,
    RELATED_FILE, TAG_RULES_FILE,
};
use deepmatch_core::datapipe::{format_pairs, load_pairs, run_pipeline, DataInputs};
use deepmatch_core::eval::{dump_attention, evaluate, load_eval_cases, restrict_cases, Method};
use deepmatch_core::index::{build_index, load_concept_map, EntityIndex, IndexMeta};
use deepmatch_core::numerics::SeededRng;
use deepmatch_core::serve::{self, Service};
use deepmatch_core::text::{build_vocab, PhraseDict, Tokenizer, Vocabulary};
use deepmatch_core::training::{tokenize_pairs, Trainer};
use deepmatch_core::Error;
use serde_json::json;

use crate::config::RunConfig;
use crate::{Command, Common};

pub const PAIRS_FILE: &str = "pairs.tsv";
pub const DATA_REPORT_FILE: &str = "data_report.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const INDEX_FILE: &str = "index.bin";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";

type Result<T> = anyhow::Result<T>;

struct Ctx {
    dir: PathBuf,
    config: RunConfig,
    hash: String,
}

impl Ctx {
    fn path(&self, p: impl AsRef<Path>) -> PathBuf {
        self.dir.join(p)
    }

    /// Resolved path of an input that must exist.
    fn input(&self, p: impl AsRef<Path>) -> Result<PathBuf> {
        let path = self.path(p);
        if !path.exists() {
            return Err(Error::InputMissing(path).into());
        }
        Ok(path)
    }

    /// `<command>.manifest.json`: the effective config and the sha256 of
    /// every output, so plain-text artifacts carry the config hash too.
    fn manifest(&self, command: &str, outputs: &[PathBuf]) -> Result<()> {
        let mut files = serde_json::Map::new();
        for p in outputs {
            let name = p.strip_prefix(&self.dir).unwrap_or(p).display().to_string();
            files.insert(name, json!(sha256_hex(&fs::read(p)?)));
        }
        let doc = json!({
            "command": command,
            "config_hash": self.hash,
            "config": self.config,
            "outputs": files,
        });
        fs::write(self.path(format!("{command}.manifest.json")), serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(())
    }

    fn phrases(&self) -> Result<PhraseDict> {
        match &self.config.phrases {
            Some(p) if self.path(p).exists() => Ok(PhraseDict::load(&self.path(p))?),
            Some(p) => {
                log::warn!("phrase list {} not found; segmenting without phrases", self.path(p).display());
                Ok(PhraseDict::new())
            }
            None => Ok(PhraseDict::new()),
        }
    }

    fn vocab(&self) -> Result<Vocabulary> {
        Ok(Vocabulary::load(&self.input(VOCAB_FILE)?)?)
    }

    fn query_model(&self, checkpoint: &Path) -> Result<QueryModel> {
        let (ckpt, hash) = Checkpoint::load(&self.path(checkpoint))?;
        Ok(QueryModel::new(&ckpt, hash, Arc::new(self.vocab()?), Arc::new(self.phrases()?))?)
    }

    fn index(&self, path: &Path) -> Result<(EntityIndex, String)> {
        Ok(EntityIndex::load(&self.path(path))?)
    }
}

pub fn run(common: &Common, command: Command) -> Result<()> {
    let seed = common
        .seed
        .ok_or_else(|| Error::ConfigInvalid("--seed is required".into()))?;
    let config = RunConfig::resolve(common.config.as_deref(), &common.overrides, seed)?;
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::ConfigInvalid("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    fs::create_dir_all(&common.out_dir).with_context(|| format!("creating {}", common.out_dir.display()))?;
    let hash = config.hash();
    log::info!("config hash {hash}");
    let ctx = Ctx {
        dir: common.out_dir.clone(),
        config,
        hash,
    };
    match command {
        Command::Synth => synth(&ctx),
        Command::BuildData => build_data(&ctx),
        Command::BuildVocab { pairs } => build_vocab_cmd(&ctx, &pairs),
        Command::Train { pairs } => train(&ctx, &pairs),
        Command::BuildIndex { checkpoint, index } => build_index_cmd(&ctx, &checkpoint, &index),
        Command::Eval { methods } => eval(&ctx, &methods),
        Command::Serve { checkpoint, index } => serve_cmd(&ctx, &checkpoint, &index),
        Command::Neighbors { entity, n, index } => neighbors(&ctx, &entity, n, &index),
        Command::Attend { query, checkpoint } => attend(&ctx, &query, &checkpoint),
    }
}

fn synth(ctx: &Ctx) -> Result<()> {
    let corpus = generate(&ctx.config.synth, &mut SeededRng::new(ctx.config.seed))?;
    corpus.write_to(&ctx.dir)?;
    let outputs: Vec<PathBuf> = [
        ENTITIES_FILE,
        CLICK_LOG_FILE,
        DOC_LOG_FILE,
        RELATED_FILE,
        TAG_RULES_FILE,
        BLACKLIST_FILE,
        CONCEPTS_FILE,
        PHRASES_FILE,
        EVAL_FILE,
    ]
    .iter()
    .map(|f| ctx.path(f))
    .collect();
    ctx.manifest("synth", &outputs)?;
    log::info!("wrote {} entities and {} eval cases to {}", corpus.entities.len(), corpus.eval_cases.len(), ctx.dir.display());
    Ok(())
}

fn build_data(ctx: &Ctx) -> Result<()> {
    let inputs = DataInputs::load(&ctx.config.inputs, &ctx.dir)?;
    let (pairs, report) = run_pipeline(&inputs, &ctx.config.data, &mut SeededRng::new(ctx.config.seed))?;
    let out = ctx.path(PAIRS_FILE);
    fs::write(&out, format_pairs(&pairs))?;
    let report_path = ctx.path(DATA_REPORT_FILE);
    let doc = json!({ "config_hash": ctx.hash, "report": report });
    fs::write(&report_path, serde_json::to_string_pretty(&doc)? + "\n")?;
    ctx.manifest("build-data", &[out, report_path])?;
    log::info!("{} training pairs over {} entities", report.output_pairs, report.distinct_entities);
    Ok(())
}

fn build_vocab_cmd(ctx: &Ctx, pairs: &Path) -> Result<()> {
    let pairs = load_pairs(&ctx.input(pairs)?)?;
    let phrases = ctx.phrases()?;
    let vocab = build_vocab(pairs.iter().map(|p| (&p.query, &p.entity)), &phrases, ctx.config.vocab.min_count)?;
    let out = ctx.path(VOCAB_FILE);
    vocab.save(&out)?;
    ctx.manifest("build-vocab", &[out])?;
    log::info!("{} words, {} entities", vocab.word_count(), vocab.entity_count());
    Ok(())
}

fn train(ctx: &Ctx, pairs: &Path) -> Result<()> {
    let records = load_pairs(&ctx.input(pairs)?)?;
    let vocab = Arc::new(ctx.vocab()?);
    let text = ctx.config.text.clone();
    let tokenizer = Tokenizer::new(vocab.clone(), Arc::new(ctx.phrases()?), text.clone());
    let (pairs, skipped) = tokenize_pairs(records.iter().map(|p| (p.query.as_str(), p.entity.as_str(), p.weight)), &tokenizer);
    if skipped > 0 {
        log::warn!("{skipped} pairs skipped: unknown entity or no tokens");
    }
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    let train = ctx.config.train.clone();
    let mut trainer = Trainer::new(train.clone(), vocab.word_count(), text.num_buckets, vocab.entity_freqs())?;
    let meta = CheckpointMeta {
        train,
        text,
        config_hash: ctx.hash.clone(),
    };
    let ckpt_dir = ctx.path(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir)?;
    let save = |t: &Trainer| -> deepmatch_core::Result<PathBuf> {
        let ckpt = Checkpoint {
            meta: meta.clone(),
            rng: t.rng_state(),
            epoch: t.epoch() as u32,
            model: t.model().clone(),
        };
        let path = ckpt_dir.join(format!("epoch-{}.ckpt", t.epoch()));
        ckpt.save(&path)?;
        Ok(path)
    };
    let mut outputs = vec![save(&trainer)?];
    let log_path = ctx.path(TRAIN_LOG_FILE);
    let mut log_file = fs::File::create(&log_path)?;
    let hash = ctx.hash.clone();
    trainer.fit(&pairs, |t, epoch| {
        let mut line = serde_json::to_value(epoch)?;
        line["config_hash"] = json!(hash);
        writeln!(log_file, "{line}")?;
        outputs.push(save(t)?);
        Ok(())
    })?;
    let last = outputs.last().expect("initial checkpoint").clone();
    let model = ctx.path(MODEL_FILE);
    fs::copy(&last, &model)?;
    outputs.push(model);
    outputs.push(log_path);
    ctx.manifest("train", &outputs)?;
    Ok(())
}

fn build_index_cmd(ctx: &Ctx, checkpoint: &Path, index: &Path) -> Result<()> {
    let (ckpt, ckpt_hash) = Checkpoint::load(&ctx.path(checkpoint))?;
    let vocab = ctx.vocab()?;
    let concepts = match &ctx.config.index.concepts {
        Some(p) if ctx.path(p).exists() => Some(load_concept_map(&ctx.path(p))?),
        Some(p) => {
            log::warn!("concept map {} not found; index has no concepts", ctx.path(p).display());
            None
        }
        None => None,
    };
    let meta = IndexMeta {
        encoder: ckpt.kind(),
        checkpoint_hash: ckpt_hash,
        config_hash: ctx.hash.clone(),
    };
    let mut idx = build_index(&ckpt.model.entity_emb, vocab.entities(), concepts.as_ref(), meta)?;
    if ctx.config.index.cluster {
        idx.cluster(&ctx.config.index.ivf)?;
    }
    let out = ctx.path(index);
    let hash = idx.save(&out)?;
    ctx.manifest("build-index", &[out])?;
    log::info!("indexed {} entities, index hash {hash}", idx.len());
    Ok(())
}

fn parse_method(spec: &str) -> Result<(String, PathBuf, PathBuf)> {
    let bad = || Error::ConfigInvalid(format!("--method {spec:?} is not name=checkpoint,index"));
    let (name, files) = spec.split_once('=').ok_or_else(bad)?;
    let (ckpt, index) = files.split_once(',').ok_or_else(bad)?;
    if name.is_empty() || ckpt.is_empty() || index.is_empty() {
        return Err(bad().into());
    }
    Ok((name.to_string(), ckpt.into(), index.into()))
}

fn eval(ctx: &Ctx, specs: &[String]) -> Result<()> {
    let specs: Vec<(String, PathBuf, PathBuf)> = if specs.is_empty() {
        vec![("model".into(), MODEL_FILE.into(), INDEX_FILE.into())]
    } else {
        specs.iter().map(|s| parse_method(s)).collect::<Result<_>>()?
    };
    let mut methods = Vec::new();
    for (name, ckpt, index) in specs {
        let model = ctx.query_model(&ckpt)?;
        let (index, _) = ctx.index(&index)?;
        methods.push(Method::new(name, model, index)?);
    }
    let cases = load_eval_cases(&ctx.input(&ctx.config.eval.cases)?)?;
    let (cases, dropped) = restrict_cases(&cases, &methods[0].index);
    if dropped > 0 {
        log::warn!("{dropped} eval cases have no indexed ground truth and were dropped");
    }
    let mut report = evaluate(&methods, &cases, &ctx.config.eval.ms, ctx.config.eval.retrieval, &ctx.hash)?;
    report.skipped_cases = dropped;
    let out = ctx.path(EVAL_REPORT_FILE);
    fs::write(&out, report.to_json()?)?;
    ctx.manifest("eval", &[out])?;
    print!("{}", report.to_table());
    Ok(())
}

fn serve_cmd(ctx: &Ctx, checkpoint: &Path, index: &Path) -> Result<()> {
    let model = ctx.query_model(checkpoint)?;
    let (index, index_hash) = ctx.index(index)?;
    let service = Service::new(model, index, index_hash, ctx.config.serve.clone())?;
    serve::run(service)?;
    Ok(())
}

fn neighbors(ctx: &Ctx, entity: &str, n: usize, index: &Path) -> Result<()> {
    let (index, _) = ctx.index(index)?;
    for (rank, e) in index.entity_neighbors(entity, n)?.iter().enumerate() {
        println!("{}\t{}\t{:.6}", rank + 1, e.name, e.score);
    }
    Ok(())
}

fn attend(ctx: &Ctx, query: &str, checkpoint: &Path) -> Result<()> {
    let model = ctx.query_model(checkpoint)?;
    let weights = dump_attention(&model, query)?;
    for (token, w) in weights {
        println!("{token}\t{w:.6}");
    }
    Ok(())
}
