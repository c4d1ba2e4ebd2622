//! Paired comparisons across seeds: Shapiro-Wilk on the differences, then a
//! paired t-test with a 95% interval.

mod shapiro;
pub mod special;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricsReport};
use crate::prompt::PromptFormat;

pub use shapiro::{shapiro_wilk, ShapiroWilk};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: Option<usize>,
    pub mean_diff: f64,
    pub ci95: (f64, f64),
}

fn mean_sd(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn is_constant(mean: f64, sd: f64) -> bool {
    sd <= 1e-12 * mean.abs().max(1.0)
}

/// One-sample t on differences `d = a - b` against zero.
pub fn t_test_diffs(d: &[f64]) -> Result<TestResult> {
    if d.len() < 2 {
        return Err(Error::Precondition(format!(
            "paired t needs at least 2 pairs, got {}",
            d.len()
        )));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("differences must be finite".into()));
    }
    let (mean, sd) = mean_sd(d);
    if is_constant(mean, sd) {
        return Err(Error::Degenerate(format!(
            "differences have zero variance (all {mean})"
        )));
    }
    let n = d.len() as f64;
    let df = d.len() - 1;
    let se = sd / n.sqrt();
    let t = mean / se;
    let p = special::t_two_sided_p(t, df as f64);
    let half = special::t_quantile(0.975, df as f64)? * se;
    Ok(TestResult {
        statistic: t,
        p_value: p,
        df: Some(df),
        mean_diff: mean,
        ci95: (mean - half, mean + half),
    })
}

pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::Pairing(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    t_test_diffs(&d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Tested {
        shapiro: Option<ShapiroWilk>,
        t_test: TestResult,
    },
    /// Every per-seed difference is exactly zero.
    NoDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Differences are `name_a - name_b`.
    pub name_a: String,
    pub name_b: String,
    pub format: PromptFormat,
    pub metric: Metric,
    pub seeds: Vec<u64>,
    pub diffs: Vec<f64>,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

impl Comparison {
    pub fn summary_line(&self) -> String {
        let head = format!(
            "{} {}: {} - {} over {} seeds",
            self.format,
            self.metric.name(),
            self.name_a,
            self.name_b,
            self.seeds.len()
        );
        match &self.verdict {
            Verdict::NoDifference => format!("{head}: no difference (all diffs 0)"),
            Verdict::Tested { shapiro, t_test } => {
                let sw = match shapiro {
                    Some(s) => format!("SW W = {:.4}, p = {:.4}; ", s.w, s.p_value),
                    None => String::new(),
                };
                format!(
                    "{head}: {sw}mean diff = {:.4}, t = {:.4}, df = {}, p = {:.4}, 95% CI [{:.4}, {:.4}]",
                    t_test.mean_diff,
                    t_test.statistic,
                    t_test.df.unwrap_or(0),
                    t_test.p_value,
                    t_test.ci95.0,
                    t_test.ci95.1
                )
            }
        }
    }
}

/// Pairs two models' cells by seed for one format and metric, gates on
/// normality of the differences and runs the paired t-test.
pub fn compare_models(
    report: &MetricsReport,
    a: &str,
    b: &str,
    format: PromptFormat,
    metric: Metric,
) -> Result<Comparison> {
    let va = report.per_seed(a, format, metric);
    let vb = report.per_seed(b, format, metric);
    if va.is_empty() || vb.is_empty() {
        let missing = if va.is_empty() { a } else { b };
        return Err(Error::Pairing(format!("no {format} cells for {missing}")));
    }
    if va.keys().ne(vb.keys()) {
        return Err(Error::Pairing(format!(
            "seed sets differ: {a} has {:?}, {b} has {:?}",
            va.keys().collect::<Vec<_>>(),
            vb.keys().collect::<Vec<_>>()
        )));
    }
    let seeds: Vec<u64> = va.keys().copied().collect();
    let diffs: Vec<f64> = seeds.iter().map(|s| va[s] - vb[s]).collect();
    let mut notes = Vec::new();
    let verdict = if diffs.iter().all(|d| *d == 0.0) {
        Verdict::NoDifference
    } else {
        let t_test = t_test_diffs(&diffs)?;
        let shapiro = match shapiro_wilk(&diffs) {
            Ok(s) => {
                if s.p_value < 0.05 {
                    notes.push(format!(
                        "Shapiro-Wilk rejects normality of the differences (p = {:.4}); the t-test assumption is doubtful",
                        s.p_value
                    ));
                }
                Some(s)
            }
            Err(e @ Error::Range { .. }) => {
                notes.push(format!("normality not checked: {e}"));
                None
            }
            Err(e) => return Err(e),
        };
        Verdict::Tested { shapiro, t_test }
    };
    Ok(Comparison {
        name_a: a.to_string(),
        name_b: b.to_string(),
        format,
        metric,
        seeds,
        diffs,
        verdict,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{aggregate, MetricsCell};

    #[test]
    fn one_to_six() {
        let r = t_test_diffs(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.mean_diff, 3.5);
        assert!((r.statistic - 4.582_575_694_955_841).abs() < 1e-12);
        assert_eq!(r.df, Some(5));
    }

    #[test]
    fn swapping_sides_negates() {
        let a = [0.81, 0.85, 0.9, 0.78, 0.88, 0.84];
        let b = [0.7, 0.74, 0.8, 0.75, 0.79, 0.69];
        let ab = paired_t(&a, &b).unwrap();
        let ba = paired_t(&b, &a).unwrap();
        assert!((ab.statistic + ba.statistic).abs() < 1e-12);
        assert!((ab.p_value - ba.p_value).abs() < 1e-15);
        assert!((ab.ci95.0 + ba.ci95.1).abs() < 1e-12);
        assert!((ab.ci95.1 + ba.ci95.0).abs() < 1e-12);
        assert!(matches!(paired_t(&a, &a), Err(Error::Degenerate(_))));
    }

    fn report(a: &[f64], b: &[f64], seeds: &[u64]) -> MetricsReport {
        let f = PromptFormat::FEW_SHOT_TABULAR;
        let mut cells = Vec::new();
        for (name, vals) in [("a", a), ("b", b)] {
            for (s, v) in seeds.iter().zip(vals) {
                cells.push(MetricsCell {
                    model: name.into(),
                    format: f,
                    seed: *s,
                    auroc: *v,
                    auprc: *v,
                    accuracy: *v,
                    f1: *v,
                    n: 10,
                    excluded: 0,
                });
            }
        }
        aggregate(&cells, &[], seeds, 8)
    }

    #[test]
    fn comparison_verdicts() {
        let seeds = [36, 73, 105, 314, 564, 777];
        let f = PromptFormat::FEW_SHOT_TABULAR;
        let b = [0.7, 0.72, 0.75, 0.69, 0.8, 0.77];
        let same = report(&b, &b, &seeds);
        let c = compare_models(&same, "a", "b", f, Metric::Auroc).unwrap();
        assert_eq!(c.verdict, Verdict::NoDifference);

        let shifted: Vec<f64> = b.iter().map(|v| v + 0.1).collect();
        let r = report(&shifted, &b, &seeds);
        assert!(matches!(
            compare_models(&r, "a", "b", f, Metric::Auroc),
            Err(Error::Degenerate(_))
        ));

        let bumps = [0.05, 0.16, 0.09, 0.12, 0.14, 0.088];
        let better: Vec<f64> = b.iter().zip(bumps).map(|(v, d)| v + d).collect();
        let r = report(&better, &b, &seeds);
        let c = compare_models(&r, "a", "b", f, Metric::Auroc).unwrap();
        let Verdict::Tested { t_test, shapiro } = c.verdict else {
            panic!("expected a test");
        };
        assert!((t_test.mean_diff - 0.108).abs() < 1e-12);
        assert!(t_test.p_value < 0.05 && t_test.ci95.0 > 0.0);
        assert!(shapiro.is_some());
    }

    #[test]
    fn seed_mismatch_is_pairing_error() {
        let f = PromptFormat::FEW_SHOT_TABULAR;
        let mut r = report(&[0.1, 0.2, 0.4], &[0.3, 0.1, 0.2], &[1, 2, 3]);
        r.cells.retain(|c| !(c.model == "b" && c.seed == 3));
        assert!(matches!(
            compare_models(&r, "a", "b", f, Metric::Auroc),
            Err(Error::Pairing(_))
        ));
    }
}
