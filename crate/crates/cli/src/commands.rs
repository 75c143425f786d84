use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

use mrfg_core::datamodel::{TargetId, User};
use mrfg_core::embedding::Embedder;
use mrfg_core::evaluation::pipeline::{
    filter_with_backend, filter_with_cosine, fit_and_score, prepare_graph, prepare_seed, retain_all,
    retained_from_reports, users_of, Retained,
};
use mrfg_core::evaluation::{run_experiment, write_sweep_csv, ExperimentReport, Mode, Variant};
use mrfg_core::ingestion::{corpus_stats, load_corpus, split_dataset, write_splits, Corpus};
use mrfg_core::relevance::{
    read_filter_reports, write_filter_reports, ChatBackend, HttpBackend, MockBackend, VerdictCache,
};
use mrfg_core::synth::generate;
use mrfg_core::tfi::RankingArtifact;

use crate::config::{Loaded, Overrides, Strategy};
use crate::manifest::write_manifest;

pub struct Ctx {
    pub command: &'static str,
    pub loaded: Loaded,
    pub flags: Overrides,
}

impl Ctx {
    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.loaded.out_dir();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn path(&self, p: &Path) -> PathBuf {
        self.loaded.resolve(p)
    }

    fn corpus_inputs(&self) -> Vec<PathBuf> {
        let p = &self.loaded.config.paths;
        vec![self.path(&p.users), self.path(&p.tweets), self.path(&p.edges)]
    }

    fn load_corpus(&self) -> Result<Corpus> {
        let [u, t, e]: [PathBuf; 3] = self.corpus_inputs().try_into().expect("three corpus files");
        load_corpus(&u, &t, &e).map_err(|e| anyhow!("ingest stage: {e}"))
    }

    fn embedder(&self) -> Result<Embedder> {
        Embedder::from_spec(&self.loaded.embedder_spec()).map_err(|e| anyhow!("embedding stage: {e}"))
    }

    fn embedder_inputs(&self) -> Vec<PathBuf> {
        match self.loaded.embedder_spec() {
            mrfg_core::embedding::EmbedderSpec::External { path, .. } => vec![path],
            _ => Vec::new(),
        }
    }

    fn manifest(&self, artifact: &Path, inputs: &[PathBuf], seed: Option<u64>) -> Result<()> {
        write_manifest(artifact, self.command, &self.loaded, &self.flags, inputs, seed)
    }

    fn seed(&self) -> u64 {
        self.loaded.config.experiment.seeds.first().copied().unwrap_or(0)
    }

    fn strategy(&self) -> Strategy {
        self.loaded.config.filter.strategy
    }

    fn train_target(&self, corpus: &Corpus) -> Result<TargetId> {
        match &self.loaded.config.experiment.train_target {
            Some(t) => Ok(TargetId::new(t)?),
            None => corpus
                .targets()
                .into_iter()
                .next()
                .ok_or_else(|| anyhow!("corpus has no targets")),
        }
    }

    /// Targets whose users enter the graph: the train target plus the
    /// evaluation target in cross-target mode.
    fn graph_targets(&self, corpus: &Corpus) -> Result<Vec<TargetId>> {
        let mut t = vec![self.train_target(corpus)?];
        let e = &self.loaded.config.experiment;
        if e.mode == Mode::CrossTarget {
            let eval = e
                .eval_target
                .as_deref()
                .ok_or_else(|| anyhow!("cross-target mode needs experiment.eval_target"))?;
            t.push(TargetId::new(eval)?);
        }
        Ok(t)
    }

    fn filter_artifact(&self, strategy: Strategy) -> Result<PathBuf> {
        Ok(self.out_dir()?.join(format!("filter_{}.jsonl", strategy.name())))
    }

    /// Retained followee tweets for `strategy`, read from the filter stage's artifact.
    fn retained(&self, corpus: &Corpus, users: &[&User], strategy: Strategy) -> Result<(Retained, Vec<PathBuf>)> {
        if strategy == Strategy::Off {
            return Ok((retain_all(corpus, users), Vec::new()));
        }
        let path = self.filter_artifact(strategy)?;
        if !path.exists() {
            bail!(
                "filter stage: missing artifact {}; run `mrfg filter --strategy {}` first",
                path.display(),
                strategy.name()
            );
        }
        let reports = read_filter_reports(&path)?;
        Ok((retained_from_reports(corpus, &reports)?, vec![path]))
    }

    fn ranking_path(&self, target: &TargetId, strategy: Strategy, seed: u64) -> Result<PathBuf> {
        Ok(self
            .out_dir()?
            .join(format!("ranking_{}_{}_seed{}.json", target, strategy.name(), seed)))
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(ctx: &Ctx) -> Result<Value> {
    let spec = &ctx.loaded.config.synth;
    let s = generate(spec)?;
    let dir = ctx.out_dir()?;
    let paths = s.write(&dir)?;
    for p in [
        &paths.users,
        &paths.tweets,
        &paths.edges,
        &paths.embeddings,
        &paths.mock,
        &paths.planted,
    ] {
        ctx.manifest(p, &[], Some(spec.seed))?;
    }
    Ok(json!({
        "command": "synth",
        "out_dir": dir,
        "users": s.corpus.users.len(),
        "tweets": s.corpus.tweets.len(),
        "graph_dims": s.planted.graph_dims.len(),
    }))
}

pub fn ingest(ctx: &Ctx) -> Result<Value> {
    let corpus = ctx.load_corpus()?;
    let dir = ctx.out_dir()?;
    let inputs = ctx.corpus_inputs();

    let stats = corpus_stats(&corpus.users, &corpus.tweets);
    let stats_path = dir.join("stats.json");
    write_json(&stats_path, &stats)?;
    ctx.manifest(&stats_path, &inputs, None)?;

    let targets = match &ctx.loaded.config.experiment.train_target {
        Some(t) => vec![TargetId::new(t)?],
        None => corpus.targets(),
    };
    let mut splits = Vec::new();
    for t in &targets {
        for &seed in &ctx.loaded.config.experiment.seeds {
            splits.push(split_dataset(&corpus.users, t, seed)?);
        }
    }
    let splits_path = dir.join("splits.jsonl");
    write_splits(&splits_path, &splits)?;
    ctx.manifest(&splits_path, &inputs, None)?;
    Ok(json!({
        "command": "ingest",
        "users": corpus.users.len(),
        "tweets": corpus.tweets.len(),
        "targets": targets,
        "splits": splits.len(),
    }))
}

pub fn filter(ctx: &Ctx) -> Result<Value> {
    let corpus = ctx.load_corpus()?;
    let strategy = ctx.strategy();
    let targets = match &ctx.loaded.config.experiment.train_target {
        Some(_) => ctx.graph_targets(&corpus)?,
        None => corpus.targets(),
    };
    let users = users_of(&corpus, &targets);
    let mut inputs = ctx.corpus_inputs();
    let reports = match strategy {
        Strategy::Off => {
            return Ok(json!({"command": "filter", "strategy": "off", "retained": "all"}));
        }
        Strategy::Cosine => {
            inputs.extend(ctx.embedder_inputs());
            filter_with_cosine(&corpus, &users, &ctx.embedder()?)?
        }
        Strategy::Mock | Strategy::Llm => {
            let backend: Box<dyn ChatBackend> = if strategy == Strategy::Mock {
                let table = ctx.path(&ctx.loaded.config.paths.mock_table);
                let mock = MockBackend::load(&table)?;
                inputs.push(table);
                Box::new(mock)
            } else {
                Box::new(HttpBackend::from_env(ctx.loaded.config.llm.clone())?)
            };
            let cache_path = ctx.path(&ctx.loaded.config.paths.cache);
            let mut cache = VerdictCache::load(&cache_path)?;
            let before = cache.len();
            let reports = filter_with_backend(&corpus, &users, backend.as_ref(), &ctx.loaded.config.llm, &mut cache)?;
            if let Some(parent) = cache_path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            cache.save(&cache_path)?;
            log::info!("verdict cache: {before} -> {} entries", cache.len());
            reports
        }
    };
    let path = ctx.filter_artifact(strategy)?;
    write_filter_reports(&path, &reports)?;
    ctx.manifest(&path, &inputs, None)?;
    let retained: usize = reports.iter().map(|r| r.retained.len()).sum();
    let scored: usize = reports.iter().map(|r| r.scores.len()).sum();
    Ok(json!({
        "command": "filter",
        "strategy": strategy.name(),
        "users": reports.len(),
        "scored": scored,
        "retained": retained,
        "artifact": path,
    }))
}

struct Prepared {
    target: TargetId,
    eval_target: Option<TargetId>,
    pg: mrfg_core::evaluation::pipeline::PreparedGraph,
    inputs: Vec<PathBuf>,
}

fn prepare(ctx: &Ctx, corpus: &Corpus) -> Result<Prepared> {
    let targets = ctx.graph_targets(corpus)?;
    let users = users_of(corpus, &targets);
    let (retained, mut inputs) = ctx.retained(corpus, &users, ctx.strategy())?;
    let pg = prepare_graph(corpus, &targets, &retained, &ctx.embedder()?).map_err(|e| anyhow!("graph stage: {e}"))?;
    inputs.extend(ctx.corpus_inputs());
    inputs.extend(ctx.embedder_inputs());
    Ok(Prepared {
        target: targets[0].clone(),
        eval_target: targets.get(1).cloned(),
        pg,
        inputs,
    })
}

pub fn rank(ctx: &Ctx) -> Result<Value> {
    let corpus = ctx.load_corpus()?;
    let p = prepare(ctx, &corpus)?;
    let seed = ctx.seed();
    let ss = prepare_seed(&p.pg, &p.target, p.eval_target.as_ref(), seed, ctx.loaded.config.tfi.bins)?;
    let artifact = RankingArtifact::new(p.target.clone(), seed, &ss.ranking);
    let path = ctx.ranking_path(&p.target, ctx.strategy(), seed)?;
    artifact.write(&path)?;
    ctx.manifest(&path, &p.inputs, Some(seed))?;
    Ok(json!({
        "command": "rank",
        "target": p.target,
        "seed": seed,
        "top": &ss.ranking.order[..ss.ranking.order.len().min(10)],
        "artifact": path,
    }))
}

pub fn train(ctx: &Ctx) -> Result<Value> {
    let corpus = ctx.load_corpus()?;
    let p = prepare(ctx, &corpus)?;
    let seed = ctx.seed();
    let strategy = ctx.strategy();
    let rank_path = ctx.ranking_path(&p.target, strategy, seed)?;
    if !rank_path.exists() {
        bail!(
            "rank stage: missing artifact {}; run `mrfg rank` with the same target, strategy and seed first",
            rank_path.display()
        );
    }
    let artifact = RankingArtifact::read(&rank_path)?;
    if artifact.target != p.target || artifact.seed != seed {
        bail!("rank stage: {} was computed for another target or seed", rank_path.display());
    }
    let mut ss = prepare_seed(&p.pg, &p.target, p.eval_target.as_ref(), seed, ctx.loaded.config.tfi.bins)?;
    ss.ranking = artifact.ranking();

    let cfg = &ctx.loaded.config;
    let variant = cfg.experiment.variant;
    let routing = variant.routing(&ss.ranking, cfg.gsi.r)?;
    let out = fit_and_score(&p.pg, &ss, &routing, &cfg.gsi)?;

    let stem = format!("{}_{}_{}_seed{}", p.target, strategy.name(), variant.name(), seed);
    let dir = ctx.out_dir()?;
    let model_path = dir.join(format!("model_{stem}.json"));
    let log_path = dir.join(format!("trainlog_{stem}.json"));
    let rank_ref = rank_path.file_name().map(|n| n.to_string_lossy().into_owned());
    out.model.save(&model_path, rank_ref)?;
    write_json(&log_path, &out.log)?;
    let mut inputs = p.inputs.clone();
    inputs.push(rank_path);
    ctx.manifest(&model_path, &inputs, Some(seed))?;
    ctx.manifest(&log_path, &inputs, Some(seed))?;
    Ok(json!({
        "command": "train",
        "variant": variant.tag(),
        "seed": seed,
        "epochs": out.log.epochs.len(),
        "best_epoch": out.log.best_epoch,
        "test": out.report.summary().as_percentages(),
        "artifact": model_path,
    }))
}

fn experiment(ctx: &Ctx, corpus: &Corpus, variant: Variant, mode: Mode, strategy: Strategy) -> Result<(ExperimentReport, Vec<PathBuf>)> {
    let cfg = &ctx.loaded.config;
    let default_target = corpus.targets().into_iter().next();
    let mut spec = cfg.experiment_spec(default_target.as_ref(), strategy)?;
    spec.variant = variant;
    spec.mode = mode;
    let mut targets = vec![spec.train_target.clone()];
    if mode == Mode::CrossTarget {
        targets.extend(spec.eval_target.clone());
    }
    let users = users_of(corpus, &targets);
    let (retained, mut inputs) = ctx.retained(corpus, &users, strategy)?;
    let report = run_experiment(&spec, corpus, &ctx.embedder()?, &retained)?;
    inputs.extend(ctx.corpus_inputs());
    inputs.extend(ctx.embedder_inputs());
    Ok((report, inputs))
}

fn report_summary(report: &ExperimentReport) -> Value {
    json!(report
        .runs
        .iter()
        .map(|r| json!({"variant": r.variant, "r": r.r, "mean_pct": r.mean_pct}))
        .collect::<Vec<_>>())
}

pub fn eval(ctx: &Ctx) -> Result<Value> {
    let corpus = ctx.load_corpus()?;
    let cfg = &ctx.loaded.config;
    let mode = match cfg.experiment.mode {
        Mode::CrossTarget => Mode::CrossTarget,
        _ => Mode::InTarget,
    };
    let strategy = ctx.strategy();
    let (report, inputs) = experiment(ctx, &corpus, cfg.experiment.variant, mode, strategy)?;
    let path = ctx
        .out_dir()?
        .join(format!("report_{}_{}.json", cfg.experiment.variant.name(), strategy.name()));
    report.write_json(&path)?;
    ctx.manifest(&path, &inputs, None)?;
    Ok(json!({"command": "eval", "runs": report_summary(&report), "artifact": path}))
}

pub fn ablate(ctx: &Ctx) -> Result<Value> {
    let corpus = ctx.load_corpus()?;
    let variants: Vec<Variant> = match &ctx.flags.variant {
        Some(_) => vec![ctx.loaded.config.experiment.variant],
        None => Variant::ALL.to_vec(),
    };
    let strategy = ctx.strategy();
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for v in variants {
        let (report, inputs) = experiment(ctx, &corpus, v, Mode::Ablation, strategy)?;
        let path = ctx
            .out_dir()?
            .join(format!("ablation_{}_{}.json", v.name(), strategy.name()));
        report.write_json(&path)?;
        ctx.manifest(&path, &inputs, None)?;
        rows.push(report_summary(&report));
        artifacts.push(path);
    }
    Ok(json!({"command": "ablate", "runs": rows, "artifacts": artifacts}))
}

pub fn sweep(ctx: &Ctx) -> Result<Value> {
    let corpus = ctx.load_corpus()?;
    let strategies = match &ctx.flags.strategy {
        Some(_) => vec![ctx.strategy()],
        None => ctx.loaded.config.experiment.strategies.clone(),
    };
    let dir = ctx.out_dir()?;
    let mut rows = Vec::new();
    let mut inputs = Vec::new();
    for s in strategies {
        let (report, ins) = experiment(ctx, &corpus, Variant::Full, Mode::Sweep, s)?;
        let path = dir.join(format!("sweep_{}.json", s.name()));
        report.write_json(&path)?;
        ctx.manifest(&path, &ins, None)?;
        rows.extend(report.sweep_rows());
        inputs.extend(ins);
    }
    inputs.sort();
    inputs.dedup();
    let csv = dir.join("sweep.csv");
    write_sweep_csv(&csv, &rows)?;
    ctx.manifest(&csv, &inputs, None)?;
    Ok(json!({"command": "sweep", "rows": rows, "artifact": csv}))
}
