mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use tabprompt_core::stats::special::{t_cdf, t_quantile};
use tabprompt_core::stats::{paired_t, shapiro_wilk};
use tabprompt_core::Error;

fn reference() -> Value {
    let text = std::fs::read_to_string(common::fixture("reference_stats.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

#[test]
fn shapiro_matches_reference_samples() {
    let r = reference();
    let samples = r["shapiro"].as_array().unwrap();
    assert_eq!(samples.len(), 100);
    let (mut worst_w, mut worst_p) = (0.0f64, 0.0f64);
    for s in samples {
        let x = floats(&s["x"]);
        let got = shapiro_wilk(&x).unwrap();
        worst_w = worst_w.max((got.w - s["w"].as_f64().unwrap()).abs());
        worst_p = worst_p.max((got.p_value - s["p"].as_f64().unwrap()).abs());
    }
    assert!(worst_w <= 1e-6, "max |dW| = {worst_w:e}");
    assert!(worst_p <= 1e-4, "max |dp| = {worst_p:e}");
}

#[test]
fn outlier_among_twenty_normals_rejects() {
    let r = reference();
    let o = &r["shapiro_outlier"];
    let got = shapiro_wilk(&floats(&o["x"])).unwrap();
    assert!(got.p_value < 0.01);
    assert!((got.w - o["w"].as_f64().unwrap()).abs() <= 1e-6);
}

#[test]
fn constant_sample_is_degenerate() {
    assert!(matches!(shapiro_wilk(&[0.3; 8]), Err(Error::Degenerate(_))));
}

#[test]
fn w_is_affine_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(0.0, 1.0).unwrap();
    for _ in 0..50 {
        let n = rng.random_range(3..=60);
        let x: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let c = rng.random_range(0.01..100.0);
        let k = rng.random_range(-50.0..50.0);
        let y: Vec<f64> = x.iter().map(|v| c * v + k).collect();
        let (a, b) = (shapiro_wilk(&x).unwrap().w, shapiro_wilk(&y).unwrap().w);
        assert!((a - b).abs() <= 1e-9, "n {n}: {a} vs {b}");
    }
}

#[test]
fn t_distribution_matches_reference() {
    let r = reference();
    for e in r["t_cdf"].as_array().unwrap() {
        let (t, df) = (e["t"].as_f64().unwrap(), e["df"].as_f64().unwrap());
        let want = e["cdf"].as_f64().unwrap();
        assert!((t_cdf(t, df) - want).abs() <= 1e-12, "t {t} df {df}");
    }
    for e in r["t_quantile_975"].as_array().unwrap() {
        let df = e["df"].as_f64().unwrap();
        let want = e["q"].as_f64().unwrap();
        assert!(
            (t_quantile(0.975, df).unwrap() - want).abs() <= 1e-9 * want,
            "df {df}"
        );
    }
}

#[test]
fn one_to_six_matches_reference() {
    let r = reference();
    let e = &r["paired_t_one_to_six"];
    let d = floats(&e["diffs"]);
    let got = paired_t(&d, &[0.0; 6]).unwrap();
    assert!((got.statistic - e["t"].as_f64().unwrap()).abs() <= 1e-12);
    assert!((got.p_value - e["p"].as_f64().unwrap()).abs() <= 1e-12);
    assert!((got.ci95.0 - e["ci_lo"].as_f64().unwrap()).abs() <= 1e-9);
    assert!((got.ci95.1 - e["ci_hi"].as_f64().unwrap()).abs() <= 1e-9);
}

#[test]
fn significance_agrees_with_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(0.0, 1.0).unwrap();
    for _ in 0..1000 {
        let n = rng.random_range(3..=12);
        let shift = rng.random_range(-1.5..1.5);
        let a: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let b: Vec<f64> = a.iter().map(|v| v - shift + normal.sample(&mut rng)).collect();
        let r = paired_t(&a, &b).unwrap();
        let excludes = r.ci95.0 > 0.0 || r.ci95.1 < 0.0;
        assert_eq!(r.p_value < 0.05, excludes, "{r:?}");
        assert!(r.ci95.0 <= r.mean_diff && r.mean_diff <= r.ci95.1);
    }
}

#[test]
fn common_offset_does_not_change_the_test() {
    let a = [0.81, 0.85, 0.9, 0.78, 0.88, 0.84];
    let b = [0.7, 0.74, 0.8, 0.75, 0.79, 0.69];
    let base = paired_t(&a, &b).unwrap();
    let a2: Vec<f64> = a.iter().map(|v| v + 3.0).collect();
    let b2: Vec<f64> = b.iter().map(|v| v + 3.0).collect();
    let moved = paired_t(&a2, &b2).unwrap();
    assert!((base.statistic - moved.statistic).abs() < 1e-9);
    assert!((base.p_value - moved.p_value).abs() < 1e-9);
}
