use polytube::case_study;
use polytube::template::{validate_consistency, ExtremalityRule};

#[test]
fn case_study_counts() {
    let meta = case_study::meta_template().unwrap();
    let fam = meta.family().clone();
    assert_eq!(fam.num_vertices(), 6);
    assert_eq!(meta.num_meta_vertices(), 68);
    assert_eq!(meta.num_extreme(), 60);
    let rep = validate_consistency(&fam, &meta);
    assert!(rep.passed());
    // literal forms are reported, not enforced
    assert!(rep.get("HZ=0").is_some_and(|c| !c.required && !c.passed));
    assert!(rep.get("OmegaZY=Y").is_some_and(|c| c.passed));

    // strict Pareto vertices are a subset of the shape-maximal set
    let pareto = meta.extreme_indices_at(meta.interior(), ExtremalityRule::StrictPareto).unwrap();
    assert_eq!(pareto.len(), 10);
    assert!(pareto.iter().all(|j| meta.extreme().contains(j)));
}
