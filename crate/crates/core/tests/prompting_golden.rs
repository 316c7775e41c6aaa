use icl_power::experience::{Example, ExampleSet};
use icl_power::llm::mock_decide;
use icl_power::netsim::Case;
use icl_power::prompting::{
    build_prompt, parse_action, parse_example_line, parse_prompt, prompt_for_attempt, render_example, PromptTemplate,
    RETRY_CLARIFICATION,
};
use proptest::prelude::*;

fn ex(state: f64, action: u8, reward: f64, constraint_ok: bool, step: u64) -> Example {
    Example { state, bs: 0, action, reward, constraint_ok, step }
}

fn sample_set(case: Case) -> ExampleSet {
    let s = |d: f64, u: f64| if case == Case::Discrete { u } else { d };
    ExampleSet {
        recommended: vec![ex(s(12.34, 7.0), 1, 0.75, true, 9), ex(s(11.96, 7.0), 2, 0.5, true, 4)],
        inadvisable: vec![ex(s(12.31, 7.0), 4, -2.0, false, 6)],
    }
}

fn golden(case: Case, file: &str) {
    let state = if case == Case::Discrete { 7.0 } else { 12.3456 };
    let bundle = build_prompt(&PromptTemplate::default_for(case), &sample_set(case), state, case, 0).unwrap();
    let path = format!("{}/tests/fixtures/{file}", env!("CARGO_MANIFEST_DIR"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &bundle.text).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(bundle.text, expected);
    assert_eq!(bundle.example_count, 3);
}

#[test]
fn discrete_prompt_matches_golden_file() {
    golden(Case::Discrete, "prompt_discrete.txt");
}

#[test]
fn continuous_prompt_matches_golden_file() {
    golden(Case::Continuous, "prompt_continuous.txt");
}

#[test]
fn prompt_parses_back_and_drives_the_mock() {
    for case in [Case::Discrete, Case::Continuous] {
        let state = if case == Case::Discrete { 7.0 } else { 12.3456 };
        let bundle = build_prompt(&PromptTemplate::default_for(case), &sample_set(case), state, case, 0).unwrap();
        let view = parse_prompt(&bundle.text).unwrap();
        assert_eq!(view.case, case);
        assert_eq!((view.good.len(), view.bad.len()), (2, 1));
        assert_eq!(mock_decide(&bundle.text, 1).unwrap(), "level 1");
    }
}

#[test]
fn retries_append_the_clarification() {
    let bundle = build_prompt(&PromptTemplate::default_for(Case::Discrete), &ExampleSet::default(), 9.0, Case::Discrete, 2).unwrap();
    assert_eq!(prompt_for_attempt(&bundle, 0), bundle.text);
    assert_eq!(prompt_for_attempt(&bundle, 1), format!("{}\n{RETRY_CLARIFICATION}", bundle.text));
}

#[test]
fn custom_template_needs_both_placeholders() {
    assert!(PromptTemplate::from_text("state {state} only").is_err());
    assert!(PromptTemplate::from_text("{examples} {examples} {state}").is_err());
    let tpl = PromptTemplate::from_text("E:\n{examples}\nS={state}").unwrap();
    let bundle = build_prompt(&tpl, &ExampleSet::default(), 11.0, Case::Discrete, 0).unwrap();
    assert_eq!(bundle.text, "E:\nGood examples:\nBad examples to avoid:\nS=11");
}

proptest! {
    #[test]
    fn level_replies_round_trip(
        level in 1u8..=4,
        prefix in "[a-km-zA-KM-Z ,.:]{0,30}",
        suffix in "[ ,.!a-km-z]{0,30}",
    ) {
        let reply = format!("{prefix} level {level}{suffix}");
        prop_assert_eq!(parse_action(&reply).unwrap().level, level);
        prop_assert_eq!(parse_action(&format!("Level{level}")).unwrap().level, level);
    }

    #[test]
    fn replies_without_a_valid_level_are_rejected(
        text in "[a-km-z ,.]{0,40}",
        level in prop_oneof![Just(0u64), 5u64..1000],
    ) {
        prop_assert!(parse_action(&text).is_err());
        let reply = format!("{text} level {level}");
        prop_assert!(parse_action(&reply).is_err());
    }

    #[test]
    fn example_lines_round_trip(
        users in 1u32..40,
        distance in 1.0f64..20.0,
        action in 1u8..=4,
        reward in -3.0f64..1.0,
        ok in any::<bool>(),
    ) {
        for (case, state) in [(Case::Discrete, f64::from(users)), (Case::Continuous, distance)] {
            let line = render_example(&ex(state, action, reward, ok, 1), case);
            let parsed = parse_example_line(&line).unwrap();
            prop_assert_eq!(parsed.case, case);
            prop_assert_eq!(parsed.action, action);
            prop_assert_eq!(parsed.constraint_ok, ok);
            prop_assert!((parsed.reward - reward).abs() <= 0.005 + 1e-12);
            let tol = if case == Case::Discrete { 0.0 } else { 0.05 + 1e-12 };
            prop_assert!((parsed.state - state).abs() <= tol);
        }
    }
}
