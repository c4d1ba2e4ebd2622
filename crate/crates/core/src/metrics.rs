//! Classification metrics per run cell and cross-seed aggregation in the
//! (context, layout, model) nesting of the results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::inference::PredictionRecord;
use crate::prompt::{Context, Layout, PromptFormat};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Precondition(format!(
            "scores and labels differ in length ({a} vs {b})"
        )));
    }
    Ok(())
}

/// Mann-Whitney AUROC: ties between a positive and a negative earn half
/// credit. Computed through midranks in O(n log n).
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|l| **l == Label::Ad).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the midrank keeps every partial sum an exact integer
    let mut rank_sum2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u64;
        let pos_in_run = order[i..=j].iter().filter(|&&k| labels[k] == Label::Ad).count() as u64;
        rank_sum2 += twice_mid * pos_in_run;
        i = j + 1;
    }
    let (p, q) = (n_pos as u64, n_neg as u64);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

/// Average precision: the mean, over positives, of precision at each
/// positive's rank. Ranking is descending by score; equal scores keep their
/// input order.
pub fn auprc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|l| **l == Label::Ad).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs positives".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if labels[k] == Label::Ad {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Accuracy and F1 with AD as the positive class. F1 is 0 when precision
/// and recall are both 0.
pub fn accuracy_f1(preds: &[Label], labels: &[Label]) -> Result<(f64, f64)> {
    check_lengths(preds.len(), labels.len())?;
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("no predictions".into()));
    }
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (p, l) in preds.iter().zip(labels) {
        correct += (p == l) as usize;
        match (p, l) {
            (Label::Ad, Label::Ad) => tp += 1,
            (Label::Ad, Label::Cn) => fp += 1,
            (Label::Cn, Label::Ad) => fn_ += 1,
            _ => {}
        }
    }
    let accuracy = correct as f64 / preds.len() as f64;
    // 2PR/(P+R) reduces to 2tp/(2tp+fp+fn)
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    Ok((accuracy, f1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCell {
    pub model: String,
    pub format: PromptFormat,
    pub seed: u64,
    pub auroc: f64,
    pub auprc: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub n: usize,
    /// Unparseable predictions left out of the numbers above.
    pub excluded: usize,
}

impl MetricsCell {
    /// Metrics over `records`, which must all be scored. Order does not
    /// matter for the result.
    pub fn compute(
        model: &str,
        format: PromptFormat,
        seed: u64,
        records: &[PredictionRecord],
        excluded: usize,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::UndefinedMetric(format!(
                "{model}/{format}/{seed}: no scored predictions"
            )));
        }
        // canonical order so float sums never depend on completion order
        let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
        sorted.sort_by(|a, b| a.target_id.cmp(&b.target_id));
        let scores: Vec<f64> = sorted.iter().map(|r| r.p_ad).collect();
        let labels: Vec<Label> = sorted.iter().map(|r| r.true_label).collect();
        let preds: Vec<Label> = sorted.iter().map(|r| r.pred_label).collect();
        let (accuracy, f1) = accuracy_f1(&preds, &labels)?;
        Ok(MetricsCell {
            model: model.to_string(),
            format,
            seed,
            auroc: auroc(&scores, &labels)?,
            auprc: auprc(&scores, &labels)?,
            accuracy,
            f1,
            n: records.len(),
            excluded,
        })
    }

    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Auroc => self.auroc,
            Metric::Auprc => self.auprc,
            Metric::Accuracy => self.accuracy,
            Metric::F1 => self.f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auroc,
    Auprc,
    Accuracy,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Auroc, Metric::Auprc, Metric::Accuracy, Metric::F1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Auroc => "auroc",
            Metric::Auprc => "auprc",
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

/// Mean and sample standard deviation. `sd` is absent below two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: Option<f64>,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    // Welford: identical inputs give exactly that value and SD 0
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let sd = (values.len() > 1).then(|| (m2 / (values.len() - 1) as f64).sqrt());
    Some(Summary { mean, sd })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub format: PromptFormat,
    pub seeds: Vec<u64>,
    pub missing_seeds: Vec<u64>,
    pub auroc: Summary,
    pub auprc: Summary,
    pub accuracy: Summary,
    pub f1: Summary,
    pub excluded: usize,
}

impl Aggregate {
    pub fn n_seeds(&self) -> usize {
        self.seeds.len()
    }

    pub fn summary(&self, m: Metric) -> Summary {
        match m {
            Metric::Auroc => self.auroc,
            Metric::Auprc => self.auprc,
            Metric::Accuracy => self.accuracy,
            Metric::F1 => self.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Few-shot context size, for labelling.
    pub k: usize,
    pub cells: Vec<MetricsCell>,
    pub aggregates: Vec<Aggregate>,
}

fn format_rank(f: PromptFormat) -> (u8, u8, bool) {
    let c = match f.context {
        Context::ZeroShot => 0,
        Context::FewShot => 1,
    };
    let l = match f.layout {
        Layout::Serialized => 0,
        Layout::Tabular => 1,
    };
    (c, l, f.cot)
}

/// Groups cells by (model, format) and summarizes each metric over seeds.
/// Rows are ordered by context (zero-shot first), then layout (serialized
/// first), then model in `model_order`; unknown models follow in order of
/// first appearance. Cells are ordered the same way, then by seed position.
pub fn aggregate(
    cells: &[MetricsCell],
    model_order: &[String],
    expected_seeds: &[u64],
    k: usize,
) -> MetricsReport {
    let mut models: Vec<String> = model_order.to_vec();
    for c in cells {
        if !models.contains(&c.model) {
            models.push(c.model.clone());
        }
    }
    let model_rank = |m: &str| models.iter().position(|x| x == m).unwrap();
    let seed_rank = |s: u64| {
        expected_seeds
            .iter()
            .position(|x| *x == s)
            .unwrap_or(expected_seeds.len())
    };
    let row_key = |c: &MetricsCell| (format_rank(c.format), model_rank(&c.model));

    let mut sorted = cells.to_vec();
    sorted.sort_by_key(|c| (row_key(c), seed_rank(c.seed), c.seed));

    let mut groups = BTreeMap::<_, Vec<&MetricsCell>>::new();
    for c in &sorted {
        groups.entry(row_key(c)).or_default().push(c);
    }
    let aggregates = groups
        .into_values()
        .map(|group| {
            let first = group[0];
            let seeds: Vec<u64> = group.iter().map(|c| c.seed).collect();
            let summary = |m: Metric| {
                summarize(&group.iter().map(|c| c.metric(m)).collect::<Vec<_>>())
                    .expect("groups are nonempty")
            };
            Aggregate {
                model: first.model.clone(),
                format: first.format,
                missing_seeds: expected_seeds
                    .iter()
                    .copied()
                    .filter(|s| !seeds.contains(s))
                    .collect(),
                seeds,
                auroc: summary(Metric::Auroc),
                auprc: summary(Metric::Auprc),
                accuracy: summary(Metric::Accuracy),
                f1: summary(Metric::F1),
                excluded: group.iter().map(|c| c.excluded).sum(),
            }
        })
        .collect();
    MetricsReport {
        k,
        cells: sorted,
        aggregates,
    }
}

fn context_label(f: PromptFormat, k: usize) -> String {
    match f.context {
        Context::ZeroShot => "Zero-Shot".to_string(),
        Context::FewShot => format!("Few-Shot (k={k})"),
    }
}

fn layout_label(f: PromptFormat) -> &'static str {
    match (f.layout, f.cot) {
        (Layout::Serialized, false) => "Serialized",
        (Layout::Tabular, false) => "Tabular",
        (Layout::Serialized, true) => "Serialized CoT",
        (Layout::Tabular, true) => "Tabular CoT",
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) => format!("{x:.digits$}"),
        None => "NA".to_string(),
    }
}

fn seed_list(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

impl MetricsReport {
    const HEADER: [&'static str; 14] = [
        "Context",
        "Format",
        "Model",
        "Mean AUROC",
        "AUROC SD",
        "Mean Accuracy",
        "SD Accuracy",
        "Mean AUPRC",
        "AUPRC SD",
        "Mean F1",
        "F1 SD",
        "Seeds",
        "Missing Seeds",
        "Excluded",
    ];

    fn rows(&self, digits: usize) -> Vec<[String; 14]> {
        self.aggregates
            .iter()
            .map(|a| {
                [
                    context_label(a.format, self.k),
                    layout_label(a.format).to_string(),
                    a.model.clone(),
                    format!("{:.digits$}", a.auroc.mean),
                    opt(a.auroc.sd, digits),
                    format!("{:.digits$}", a.accuracy.mean),
                    opt(a.accuracy.sd, digits),
                    format!("{:.digits$}", a.auprc.mean),
                    opt(a.auprc.sd, digits),
                    format!("{:.digits$}", a.f1.mean),
                    opt(a.f1.sd, digits),
                    a.n_seeds().to_string(),
                    seed_list(&a.missing_seeds),
                    a.excluded.to_string(),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::HEADER)?;
        for row in self.rows(6) {
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Aligned text table. Repeated context and format labels are blanked,
    /// as in a multirow layout.
    pub fn to_text(&self) -> String {
        let mut rows = self.rows(4);
        for i in (1..rows.len()).rev() {
            if rows[i][0] == rows[i - 1][0] {
                if rows[i][1] == rows[i - 1][1] {
                    rows[i][1].clear();
                }
                rows[i][0].clear();
            }
        }
        let mut widths: Vec<usize> = Self::HEADER.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i < 3 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &Self::HEADER);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
        for r in &rows {
            line(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }

    pub fn aggregate_for(&self, model: &str, format: PromptFormat) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.model == model && a.format == format)
    }

    /// Per-seed values of one metric for a (model, format) row, keyed by
    /// seed.
    pub fn per_seed(&self, model: &str, format: PromptFormat, m: Metric) -> BTreeMap<u64, f64> {
        self.cells
            .iter()
            .filter(|c| c.model == model && c.format == format)
            .map(|c| (c.seed, c.metric(m)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[u8]) -> Vec<Label> {
        v.iter().map(|&b| Label::from_bool(b == 1)).collect()
    }

    #[test]
    fn worked_example() {
        let s = [0.9, 0.8, 0.3, 0.2];
        let l = labels(&[1, 0, 1, 0]);
        assert_eq!(auroc(&s, &l).unwrap(), 0.75);
        assert!((auprc(&s, &l).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn trivial_cases() {
        let l = labels(&[1, 0, 1, 0, 0]);
        assert_eq!(auroc(&[0.3; 5], &l).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.1, 0.8, 0.2, 0.3], &l).unwrap(), 1.0);
        assert_eq!(auprc(&[0.9, 0.1, 0.8, 0.2, 0.3], &l).unwrap(), 1.0);
        let last = labels(&[0, 0, 0, 1]);
        assert_eq!(auprc(&[0.4, 0.3, 0.2, 0.1], &last).unwrap(), 0.25);
        assert!(matches!(
            auroc(&[0.1, 0.2], &labels(&[1, 1])),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            auprc(&[0.1, 0.2], &labels(&[0, 0])),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn accuracy_and_f1() {
        let l = labels(&[1, 0, 1, 0]);
        assert_eq!(accuracy_f1(&l, &l).unwrap(), (1.0, 1.0));
        assert_eq!(accuracy_f1(&labels(&[1, 1, 0, 0]), &l).unwrap(), (0.5, 0.5));
        assert_eq!(accuracy_f1(&labels(&[0, 0, 0, 0]), &l).unwrap().1, 0.0);
        assert!(accuracy_f1(&[], &[]).is_err());
    }

    #[test]
    fn two_point_sample_sd() {
        let s = summarize(&[0.8, 0.9]).unwrap();
        assert!((s.mean - 0.85).abs() < 1e-15);
        assert!((s.sd.unwrap() - 0.070_710_678_118_654_76).abs() < 1e-12);
        assert_eq!(summarize(&[0.7; 6]).unwrap().sd, Some(0.0));
        assert_eq!(summarize(&[0.7]).unwrap().sd, None);
    }

    fn cell(model: &str, format: PromptFormat, seed: u64, v: f64) -> MetricsCell {
        MetricsCell {
            model: model.into(),
            format,
            seed,
            auroc: v,
            auprc: v,
            accuracy: v,
            f1: v,
            n: 10,
            excluded: 0,
        }
    }

    #[test]
    fn report_rows_follow_table_nesting() {
        let models = vec!["b".to_string(), "a".to_string()];
        let mut cells = Vec::new();
        for f in [
            PromptFormat::FEW_SHOT_TABULAR,
            PromptFormat::ZERO_SHOT_TABULAR,
            PromptFormat::FEW_SHOT_SERIALIZED,
            PromptFormat::ZERO_SHOT_SERIALIZED,
        ] {
            for m in ["a", "b"] {
                for seed in [73, 36] {
                    cells.push(cell(m, f, seed, 0.8));
                }
            }
        }
        let r = aggregate(&cells, &models, &[36, 73, 105], 8);
        let order: Vec<(String, &str)> = r
            .aggregates
            .iter()
            .map(|a| (a.format.to_string(), a.model.as_str()))
            .collect();
        assert_eq!(order[0], ("zero_shot_serialized".into(), "b"));
        assert_eq!(order[1], ("zero_shot_serialized".into(), "a"));
        assert_eq!(order[2].0, "zero_shot_tabular");
        assert_eq!(order[7], ("few_shot_tabular".into(), "a"));
        assert_eq!(r.aggregates[0].seeds, vec![36, 73]);
        assert_eq!(r.aggregates[0].missing_seeds, vec![105]);
        assert_eq!(r.cells[0].seed, 36);
        let text = r.to_text();
        assert!(text.starts_with("Context"));
        assert!(text.contains("Few-Shot (k=8)"));
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 9);
    }
}
