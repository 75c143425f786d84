use serde::{Deserialize, Serialize};

use crate::datamodel::StanceLabel;
use crate::error::{Error, Result};
use crate::ingestion::round_pct;

/// Classification metrics over the three stance classes.
///
/// Per-class arrays and the confusion matrix are indexed by
/// [`StanceLabel::index`]; confusion rows are gold, columns predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub confusion: [[usize; 3]; 3],
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
    pub f_favor: f64,
    pub f_against: f64,
    pub f_avg: f64,
    pub accuracy: f64,
}

impl MetricReport {
    pub fn from_confusion(confusion: [[usize; 3]; 3]) -> Self {
        let n: usize = confusion.iter().flatten().sum();
        let mut precision = [0.0; 3];
        let mut recall = [0.0; 3];
        let mut f1 = [0.0; 3];
        for c in 0..3 {
            let tp = confusion[c][c] as f64;
            let predicted: usize = (0..3).map(|g| confusion[g][c]).sum();
            let gold: usize = confusion[c].iter().sum();
            precision[c] = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            recall[c] = if gold == 0 { 0.0 } else { tp / gold as f64 };
            let pr = precision[c] + recall[c];
            f1[c] = if pr == 0.0 { 0.0 } else { 2.0 * precision[c] * recall[c] / pr };
        }
        let trace: usize = (0..3).map(|c| confusion[c][c]).sum();
        let f_favor = f1[StanceLabel::Favor.index()];
        let f_against = f1[StanceLabel::Against.index()];
        MetricReport {
            n,
            confusion,
            precision,
            recall,
            f1,
            f_favor,
            f_against,
            f_avg: (f_favor + f_against) / 2.0,
            accuracy: if n == 0 { 0.0 } else { trace as f64 / n as f64 },
        }
    }

    /// The headline numbers as rounded percentages.
    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            f_favor: self.f_favor,
            f_against: self.f_against,
            f_avg: self.f_avg,
            accuracy: self.accuracy,
        }
    }
}

/// Headline metrics; also used for the mean over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub f_favor: f64,
    pub f_against: f64,
    pub f_avg: f64,
    pub accuracy: f64,
}

impl MetricSummary {
    pub fn mean(reports: &[MetricReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::EmptyInput("metric reports"));
        }
        let k = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        Ok(MetricSummary {
            f_favor: avg(|r| r.f_favor),
            f_against: avg(|r| r.f_against),
            f_avg: avg(|r| r.f_avg),
            accuracy: avg(|r| r.accuracy),
        })
    }

    pub fn as_percentages(&self) -> MetricSummary {
        MetricSummary {
            f_favor: round_pct(self.f_favor * 100.0),
            f_against: round_pct(self.f_against * 100.0),
            f_avg: round_pct(self.f_avg * 100.0),
            accuracy: round_pct(self.accuracy * 100.0),
        }
    }
}

pub fn confusion_matrix(gold: &[StanceLabel], predicted: &[StanceLabel]) -> Result<[[usize; 3]; 3]> {
    if gold.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: gold.len(),
            right: predicted.len(),
        });
    }
    let mut m = [[0usize; 3]; 3];
    for (g, p) in gold.iter().zip(predicted) {
        m[g.index()][p.index()] += 1;
    }
    Ok(m)
}

pub fn compute_metrics(gold: &[StanceLabel], predicted: &[StanceLabel]) -> Result<MetricReport> {
    let m = confusion_matrix(gold, predicted)?;
    if gold.is_empty() {
        return Err(Error::EmptyInput("gold labels"));
    }
    Ok(MetricReport::from_confusion(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaClasses {
    /// Only items both annotators labeled Favor or Against.
    #[default]
    FavorAgainst,
    All,
}

/// Cohen's kappa between two annotators.
pub fn cohen_kappa(a: &[StanceLabel], b: &[StanceLabel], classes: KappaClasses) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let keep = |l: &StanceLabel| classes == KappaClasses::All || *l != StanceLabel::None;
    let pairs: Vec<(usize, usize)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| keep(x) && keep(y))
        .map(|(x, y)| (x.index(), y.index()))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyInput("annotations"));
    }
    let n = pairs.len() as f64;
    let mut ma = [0usize; 3];
    let mut mb = [0usize; 3];
    let mut agree = 0usize;
    for &(x, y) in &pairs {
        ma[x] += 1;
        mb[y] += 1;
        agree += usize::from(x == y);
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = (0..3).map(|c| (ma[c] as f64 / n) * (mb[c] as f64 / n)).sum();
    if p_e >= 1.0 {
        // Both annotators used one single class throughout.
        return Ok(if p_o >= 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}
