#![allow(dead_code)]

use std::path::PathBuf;

use tabprompt_core::dataset::{load_csv, Dataset, FeatureSchema, LoadOptions, SubjectRecord};
use tabprompt_core::prompt::{build_prompt, PromptFormat, RenderedPrompt};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(fixture(&format!("golden/{name}"))).unwrap()
}

pub fn sample_subjects() -> Dataset {
    load_csv(
        fixture("sample_subjects.csv"),
        &FeatureSchema::qt_pad(),
        &LoadOptions::default(),
    )
    .unwrap()
}

fn pick<'a>(d: &'a Dataset, ids: &[&str]) -> Vec<&'a SubjectRecord> {
    ids.iter().map(|id| d.get(id).unwrap()).collect()
}

/// The prompt for one of the fabricated example subjects.
pub fn sample_prompt(d: &Dataset, fmt: PromptFormat) -> RenderedPrompt {
    const TABLE_ICL: [&str; 8] = ["F01", "F02", "F03", "F04", "F05", "F06", "F07", "F08"];
    let (target, icl) = match (fmt.is_few_shot(), fmt.layout) {
        (false, _) => ("Z01", vec![]),
        (true, tabprompt_core::prompt::Layout::Tabular) => ("F09", pick(d, &TABLE_ICL)),
        (true, tabprompt_core::prompt::Layout::Serialized) => ("F08", pick(d, &TABLE_ICL[..7])),
    };
    build_prompt(d.schema(), d.get(target).unwrap(), &icl, fmt).unwrap()
}

/// First differing byte offset with a little context, for failure messages.
pub fn first_difference(a: &str, b: &str) -> Option<String> {
    let pos = a
        .bytes()
        .zip(b.bytes())
        .position(|(x, y)| x != y)
        .or_else(|| (a.len() != b.len()).then(|| a.len().min(b.len())))?;
    let lo = pos.saturating_sub(30);
    Some(format!(
        "byte {pos}: rendered {:?} vs golden {:?}",
        &a[lo..(pos + 30).min(a.len())],
        &b[lo..(pos + 30).min(b.len())]
    ))
}

pub mod oracle {
    //! Quadratic reference implementations written straight from the
    //! definitions, sharing no code with the library.

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tabprompt_core::dataset::Label;

    pub fn auroc(scores: &[f64], labels: &[Label]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0usize;
        for (i, li) in labels.iter().enumerate() {
            for (j, lj) in labels.iter().enumerate() {
                if *li == Label::Ad && *lj == Label::Cn {
                    pairs += 1;
                    if scores[i] > scores[j] {
                        credit += 1.0;
                    } else if scores[i] == scores[j] {
                        credit += 0.5;
                    }
                }
            }
        }
        credit / pairs as f64
    }

    /// Rank of item i in a descending ranking where equal scores keep
    /// input order (1-based).
    fn rank(scores: &[f64], i: usize) -> usize {
        (0..scores.len())
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i))
            .count()
    }

    pub fn average_precision(scores: &[f64], labels: &[Label]) -> f64 {
        let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Ad).collect();
        let mut total = 0.0;
        for &i in &pos {
            let r = rank(scores, i);
            let hits = pos.iter().filter(|&&j| rank(scores, j) <= r).count();
            total += hits as f64 / r as f64;
        }
        total / pos.len() as f64
    }

    /// `count` random instances with 2..=12 items, both classes present and
    /// frequent ties.
    pub fn instances(count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<Label>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let n = rng.random_range(2..=12);
            let discrete = rng.random_bool(0.5);
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    if discrete {
                        rng.random_range(0..4) as f64 / 4.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect();
            let labels: Vec<Label> = (0..n).map(|_| Label::from_bool(rng.random_bool(0.4))).collect();
            if labels.contains(&Label::Ad) && labels.contains(&Label::Cn) {
                out.push((scores, labels));
            }
        }
        out
    }
}
