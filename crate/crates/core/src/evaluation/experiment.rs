use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::TargetId;
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::gsi::GsiConfig;
use crate::ingestion::Corpus;
use crate::tfi::{FeatureRouting, FmiRanking, DEFAULT_BINS};

use super::pipeline::{fit_and_score, prepare_graph, prepare_seed, retain_all, users_of, Retained};
use super::{MetricReport, MetricSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no_llm_fu")]
    NoLlmFu,
    /// Every dimension through the graph path.
    #[serde(rename = "no_stfi_R")]
    NoStfiR,
    /// Every dimension through the MLP path.
    #[serde(rename = "no_stfi_m")]
    NoStfiM,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoLlmFu, Variant::NoStfiR, Variant::NoStfiM];

    /// Row label used in reports.
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "MRFG",
            Variant::NoLlmFu => "w/o LLM-FU",
            Variant::NoStfiR => "w/o S-TFI_R",
            Variant::NoStfiM => "w/o S-TFI_m",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoLlmFu => "no_llm_fu",
            Variant::NoStfiR => "no_stfi_R",
            Variant::NoStfiM => "no_stfi_m",
        }
    }

    pub fn routing(self, ranking: &FmiRanking, r: f64) -> Result<FeatureRouting> {
        match self {
            Variant::Full | Variant::NoLlmFu => FeatureRouting::from_ranking(ranking, r),
            Variant::NoStfiR => Ok(FeatureRouting::all_graph(ranking.dim())),
            Variant::NoStfiM => Ok(FeatureRouting::all_mlp(ranking.dim())),
        }
    }

    /// Whether `r` changes anything for this variant.
    pub fn uses_ratio(self) -> bool {
        matches!(self, Variant::Full | Variant::NoLlmFu)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s) || v.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    InTarget,
    CrossTarget,
    Ablation,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub variant: Variant,
    pub train_target: TargetId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_target: Option<TargetId>,
    pub seeds: Vec<u64>,
    /// Ratios for sweeps; other modes use `gsi.r`.
    #[serde(default)]
    pub r_values: Vec<f64>,
    /// Name of the filter strategy that produced the retained tweets.
    pub strategy: String,
    pub bins: usize,
    pub gsi: GsiConfig,
}

impl ExperimentSpec {
    pub fn new(train_target: TargetId) -> Self {
        ExperimentSpec {
            mode: Mode::InTarget,
            variant: Variant::Full,
            train_target,
            eval_target: None,
            seeds: vec![0, 1, 2],
            r_values: Vec::new(),
            strategy: "mock".into(),
            bins: DEFAULT_BINS,
            gsi: GsiConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.mode == Mode::CrossTarget {
            match &self.eval_target {
                None => return Err(Error::Config("cross-target mode needs eval_target".into())),
                Some(t) if *t == self.train_target => {
                    return Err(Error::Config("cross-target mode needs two different targets".into()))
                }
                _ => {}
            }
        }
        if self.mode == Mode::Sweep && self.r_values.is_empty() {
            return Err(Error::Config("sweep mode needs r_values".into()));
        }
        for &r in self.ratios() {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::InvalidRatio(r));
            }
        }
        self.gsi.validate()
    }

    fn ratios(&self) -> &[f64] {
        if self.mode == Mode::Sweep {
            &self.r_values
        } else {
            std::slice::from_ref(&self.gsi.r)
        }
    }

    fn eval_target(&self) -> Option<&TargetId> {
        match self.mode {
            Mode::CrossTarget => self.eval_target.as_ref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub metrics: MetricReport,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: String,
    /// `None` when the variant ignores the ratio.
    pub r: Option<f64>,
    pub per_seed: Vec<SeedReport>,
    /// Arithmetic mean of the per-seed metrics, fractions in [0, 1].
    pub mean: MetricSummary,
    /// Same, as percentages rounded to two decimals.
    pub mean_pct: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub runs: Vec<RunReport>,
}

impl ExperimentReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// `(r, strategy, f_avg)` rows for runs that have a ratio.
    pub fn sweep_rows(&self) -> Vec<SweepRow> {
        self.runs
            .iter()
            .filter_map(|run| {
                run.r.map(|r| SweepRow {
                    r,
                    strategy: self.spec.strategy.clone(),
                    f_avg: run.mean.f_avg,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub r: f64,
    pub strategy: String,
    pub f_avg: f64,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut s = String::from("r,strategy,f_avg\n");
    for row in rows {
        s.push_str(&format!("{},{},{}\n", row.r, row.strategy, row.f_avg));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn stage(stage: &'static str) -> impl Fn(Error) -> Error {
    move |e| Error::Stage {
        stage,
        message: e.to_string(),
    }
}

/// Runs the pipeline once per seed and averages the metrics.
///
/// `filtered` holds the followee tweets kept by the relevance filter. The
/// variant without relevance filtering ignores it and keeps every followee
/// tweet. Seeds run in parallel; results are collected in seed order.
pub fn run_experiment(
    spec: &ExperimentSpec,
    corpus: &Corpus,
    embedder: &Embedder,
    filtered: &Retained,
) -> Result<ExperimentReport> {
    spec.validate()?;
    let mut targets = vec![spec.train_target.clone()];
    if let Some(t) = spec.eval_target() {
        targets.push(t.clone());
    }
    let unfiltered;
    let retained = if spec.variant == Variant::NoLlmFu {
        unfiltered = retain_all(corpus, &users_of(corpus, &targets));
        &unfiltered
    } else {
        filtered
    };
    let pg = prepare_graph(corpus, &targets, retained, embedder).map_err(stage("graph"))?;

    let ratios: Vec<Option<f64>> = if spec.variant.uses_ratio() {
        spec.ratios().iter().map(|&r| Some(r)).collect()
    } else if spec.mode == Mode::Sweep {
        return Err(Error::Config(format!("variant {} has no ratio to sweep", spec.variant)));
    } else {
        vec![None]
    };

    let per_seed: Vec<Result<Vec<SeedReport>>> = std::thread::scope(|s| {
        let handles: Vec<_> = spec
            .seeds
            .iter()
            .map(|&seed| {
                let pg = &pg;
                let ratios = &ratios;
                s.spawn(move || -> Result<Vec<SeedReport>> {
                    let ss = prepare_seed(pg, &spec.train_target, spec.eval_target(), seed, spec.bins)
                        .map_err(stage("rank"))?;
                    ratios
                        .iter()
                        .map(|r| {
                            let routing = spec.variant.routing(&ss.ranking, r.unwrap_or(spec.gsi.r))?;
                            let out = fit_and_score(pg, &ss, &routing, &spec.gsi).map_err(stage("train"))?;
                            log::info!(
                                "{} seed {seed} r {r:?}: f_avg {:.4}",
                                spec.variant.tag(),
                                out.report.f_avg
                            );
                            Ok(SeedReport {
                                seed,
                                metrics: out.report,
                                best_epoch: out.log.best_epoch,
                                epochs_run: out.log.epochs.len(),
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
    });
    let per_seed = per_seed.into_iter().collect::<Result<Vec<_>>>()?;

    let runs = ratios
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let seeds: Vec<SeedReport> = per_seed.iter().map(|v| v[k].clone()).collect();
            let metrics: Vec<MetricReport> = seeds.iter().map(|s| s.metrics.clone()).collect();
            let mean = MetricSummary::mean(&metrics)?;
            Ok(RunReport {
                variant: spec.variant.tag().to_string(),
                r,
                per_seed: seeds,
                mean,
                mean_pct: mean.as_percentages(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        spec: spec.clone(),
        runs,
    })
}
