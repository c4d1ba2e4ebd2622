mod common;

use tabprompt_core::dataset::Label;
use tabprompt_core::inference::extract_cot_answer;

#[test]
fn correct_reasoning_example_parses_to_ad() {
    let text = common::golden("cot_output_correct.txt");
    assert_eq!(extract_cot_answer(&text), Some(Label::Ad));
}

#[test]
fn flawed_reasoning_example_parses_to_cn() {
    // The trace mentions "(1)" and "= 1" many times before the final answer.
    let text = common::golden("cot_output_flawed.txt");
    assert_eq!(extract_cot_answer(&text), Some(Label::Cn));
}

#[test]
fn refusal_has_no_answer() {
    assert_eq!(extract_cot_answer("I cannot determine this."), None);
}
