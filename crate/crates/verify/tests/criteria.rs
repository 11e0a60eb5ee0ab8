use polytube_verify::{evaluate, Context, VerifyConfig, CRITERIA};

#[test]
fn fast_criteria_report_as_documented() {
    let ctx = Context::new(VerifyConfig::default()).unwrap();

    let audit = evaluate(&ctx, 1);
    assert!(!audit.passed);
    assert!(audit.known_deviation.is_some());
    assert!(!audit.unexpected_failure());
    assert!(audit.detail.contains("60"));

    for id in [2, 6] {
        let o = evaluate(&ctx, id);
        assert!(o.passed, "{o}");
        assert!(o.to_string().starts_with("[PASS]"));
    }
}

#[test]
fn criteria_are_numbered_one_to_ten() {
    assert_eq!(CRITERIA.to_vec(), (1..=10).collect::<Vec<u8>>());
}
