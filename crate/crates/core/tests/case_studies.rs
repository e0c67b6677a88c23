mod support;

use structreason::prompt::TemplateRegistry;
use support::cases;

#[test]
fn worked_examples_reproduce_from_committed_scripts() {
    let traces = cases::run_all().unwrap();
    assert_eq!(traces.len(), 3);
}

#[test]
fn harper_lee_runs_one_hop_with_three_prompts() {
    let reg = TemplateRegistry::builtin();
    let case = cases::cases()
        .into_iter()
        .find(|c| c.name == "harper_lee")
        .unwrap();
    let trace = case.check(&reg).unwrap();
    let tags: Vec<&str> = trace.steps.iter().map(|s| s.stage_tag.as_str()).collect();
    assert_eq!(
        tags,
        ["relation-select@1", "triple-select@1", "answer-generate"]
    );
    assert_eq!(
        trace.steps[0].linearized_evidence,
        "[birthplace, education, residence]"
    );
    assert_eq!(trace.hops(), 1);
}

#[test]
fn district_selects_item_eight() {
    let reg = TemplateRegistry::builtin();
    let case = cases::cases()
        .into_iter()
        .find(|c| c.name == "district")
        .unwrap();
    let trace = case.check(&reg).unwrap();
    assert_eq!(trace.steps[1].parsed_decision, r#"["item 8"]"#);
    assert!(trace.steps[2]
        .linearized_evidence
        .contains("row 8: (District, 19th), (Incumbent, Larry Combest)"));
}
