mod common;

use tabprompt_core::dataset::Label;
use tabprompt_core::llm::mock_predict;

#[test]
fn mock_scores_on_sample_rows_match_reference() {
    let d = common::sample_subjects();
    let ids = ["F01", "F02", "F03", "F04", "F05", "F06", "F07", "F08"];
    let batch: Vec<_> = ids.iter().map(|id| d.get(id).unwrap()).collect();
    let text = std::fs::read_to_string(common::fixture("reference_stats.json")).unwrap();
    let reference: serde_json::Value = serde_json::from_str(&text).unwrap();
    let want: Vec<f64> = reference["mock_p_ad_sample_icl8"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let got = mock_predict(d.schema(), &batch).unwrap();
    for ((label, p), w) in got.iter().zip(&want) {
        assert!((p - w).abs() <= 1e-12, "{p} vs {w}");
        assert_eq!(*label, Label::from_bool(*w >= 0.5));
    }
}
