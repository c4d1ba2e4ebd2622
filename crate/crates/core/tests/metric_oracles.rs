mod common;

use common::oracle;
use proptest::prelude::*;
use tabprompt_core::dataset::Label;
use tabprompt_core::metrics::{auprc, auroc};

#[test]
fn auroc_and_auprc_match_brute_force() {
    for (scores, labels) in oracle::instances(1000, 7) {
        let a = auroc(&scores, &labels).unwrap();
        let p = auprc(&scores, &labels).unwrap();
        assert!(
            (a - oracle::auroc(&scores, &labels)).abs() <= 1e-12,
            "{scores:?} {labels:?}"
        );
        assert!(
            (p - oracle::average_precision(&scores, &labels)).abs() <= 1e-12,
            "{scores:?} {labels:?}"
        );
    }
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<Label>)> {
    (2usize..30)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0u8..6, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.contains(&true) && l.contains(&false))
        .prop_map(|(s, l)| {
            (
                s.into_iter().map(|v| v as f64 / 5.0).collect(),
                l.into_iter().map(Label::from_bool).collect(),
            )
        })
}

proptest! {
    #[test]
    fn auroc_ignores_monotone_transforms((scores, labels) in instance()) {
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&warped, &labels).unwrap());
    }

    #[test]
    fn auroc_of_flipped_labels_is_complement((scores, labels) in instance()) {
        let flipped: Vec<Label> = labels.iter().map(|l| l.flipped()).collect();
        let sum = auroc(&scores, &labels).unwrap() + auroc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_stay_in_unit_interval((scores, labels) in instance()) {
        let a = auroc(&scores, &labels).unwrap();
        let p = auprc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(p > 0.0 && p <= 1.0);
    }
}
