use retinotopic::gradcheck::{run_suite, COMPONENTS, MODEL_TOLERANCE, OP_TOLERANCE};

#[test]
fn every_component_passes_for_several_seeds() {
    for seed in [0, 7] {
        let reports = run_suite(None, seed).unwrap();
        assert_eq!(reports.len(), COMPONENTS.len());
        for r in &reports {
            assert!(r.checked > 0, "{} checked nothing", r.component);
            assert!(
                r.passed(),
                "seed {seed}: {} max rel err {:.3e} >= {:.0e}",
                r.component,
                r.max_rel_error,
                r.threshold
            );
        }
    }
}

#[test]
fn thresholds_match_component_kind() {
    let reports = run_suite(Some("a"), 1).unwrap();
    for r in reports {
        let expected = if matches!(r.component, "greedy" | "aggregate") {
            MODEL_TOLERANCE
        } else {
            OP_TOLERANCE
        };
        assert_eq!(r.threshold, expected, "{}", r.component);
    }
}
