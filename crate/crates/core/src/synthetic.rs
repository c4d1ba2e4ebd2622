//! Fabricated subject tables with the same column layout and value
//! precisions as the real biomarker table. Used for offline runs, tests and
//! benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Dataset, FeatureSchema, Label, Provenance, SubjectRecord};
use crate::error::Result;

/// Generates `n_cn + n_ad` complete, labeled subjects in shuffled order.
/// AD subjects skew towards lower CSF A-beta42, higher tau and smaller
/// hippocampal volume.
pub fn generate(n_cn: usize, n_ad: usize, seed: u64) -> Result<Dataset> {
    let schema = FeatureSchema::qt_pad();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Cn, n_cn)
        .chain(std::iter::repeat_n(Label::Ad, n_ad))
        .collect();
    labels.shuffle(&mut rng);

    let subjects = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let raw = synth_row(&mut rng, label);
            let values = raw
                .iter()
                .enumerate()
                .map(|(j, r)| schema.parse_cell(j, r))
                .collect();
            SubjectRecord {
                subject_id: format!("S{:04}", i + 1),
                values,
                label: Some(label),
            }
        })
        .collect::<Vec<_>>();
    let n = subjects.len();
    Dataset::new(
        schema,
        subjects,
        Provenance {
            source: format!("synthetic(seed={seed})"),
            rows_loaded: n,
            removed_unlabeled: 0,
            removed_incomplete: 0,
            retained: n,
        },
    )
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    Normal::new(mean, sd).unwrap().sample(rng).clamp(lo, hi)
}

fn synth_row(rng: &mut ChaCha8Rng, label: Label) -> Vec<String> {
    let ad = label == Label::Ad;
    let shift = if ad { 1.0 } else { 0.0 };
    let age = normal(rng, 72.0 + 2.0 * shift, 6.5, 55.0, 90.0).round() as i64;
    let gender = if rng.random_bool(0.5) { "Female" } else { "Male" };
    let education = normal(rng, 16.0 - shift, 2.8, 6.0, 20.0).round() as i64;
    let apoe4 = {
        let u: f64 = rng.random();
        let (p0, p1) = if ad { (0.35, 0.45) } else { (0.7, 0.25) };
        if u < p0 {
            0
        } else if u < p0 + p1 {
            1
        } else {
            2
        }
    };
    let fdg = normal(rng, 1.30 - 0.22 * shift, 0.14, 0.6, 2.0);
    let av45 = normal(rng, 1.10 + 0.35 * shift, 0.18, 0.8, 2.0);
    let abeta = normal(rng, 1350.0 - 620.0 * shift, 380.0, 200.0, 1700.0);
    let tau = normal(rng, 230.0 + 140.0 * shift, 80.0, 80.0, 700.0);
    let ptau = tau / 10.0 + normal(rng, 0.0, 2.5, -8.0, 8.0);
    let whole = normal(
        rng,
        1_050_000.0 - 40_000.0 * shift,
        95_000.0,
        700_000.0,
        1_500_000.0,
    );
    let hippo = normal(rng, 7_400.0 - 1_300.0 * shift, 850.0, 3_500.0, 11_000.0);
    let ento = normal(rng, 3_800.0 - 750.0 * shift, 600.0, 1_500.0, 6_000.0);
    let vent = normal(rng, 33_000.0 + 12_000.0 * shift, 14_000.0, 8_000.0, 120_000.0);
    let midtemp = normal(rng, 20_500.0 - 3_000.0 * shift, 2_600.0, 11_000.0, 32_000.0);
    let fusiform = normal(rng, 18_200.0 - 2_100.0 * shift, 2_300.0, 9_000.0, 28_000.0);
    vec![
        age.to_string(),
        gender.to_string(),
        education.to_string(),
        apoe4.to_string(),
        format!("{fdg:.4}"),
        format!("{av45:.4}"),
        format!("{abeta:.1}"),
        format!("{tau:.1}"),
        format!("{:.2}", ptau.max(5.0)),
        format!("{:.0}", whole),
        format!("{:.0}", hippo),
        format!("{:.0}", ento),
        format!("{:.0}", vent),
        format!("{:.0}", midtemp),
        format!("{:.0}", fusiform),
    ]
}

/// Writes a dataset as CSV with `RID`, the schema columns and `DX`.
pub fn write_csv<W: std::io::Write>(d: &Dataset, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["RID".to_string()];
    header.extend(d.schema().names().map(str::to_string));
    header.push("DX".to_string());
    wtr.write_record(&header)?;
    for s in d.subjects() {
        let mut rec = vec![s.subject_id.clone()];
        rec.extend(s.values.iter().map(|v| v.raw_text.clone()));
        rec.push(match s.label {
            Some(Label::Cn) => "CN".into(),
            Some(Label::Ad) => "AD".into(),
            None => String::new(),
        });
        wtr.write_record(&rec)?;
    }
    wtr.flush()
        .map_err(|e| crate::error::Error::io("<csv writer>", e))?;
    Ok(())
}
