//! Prompt templates.
//!
//! Arguments are substituted verbatim. `Answer: ?` marks the answer slot
//! exactly as the templates show it.

use crate::taxonomy::{OptionList, SenseEntry};

pub const MC_TASK: &str = "Task: Identify the most suitable option from the list below that describes the discourse relationship between the following pair of arguments.";

pub const INSERTION_TASK: &str =
    "Write down the connective word/phrase that best reflects the logical connection between these two arguments.";

pub const FORCED_CHOICE_TASK: &str =
    "Select an option from the below list that best expresses the meaning of the phrase you have chosen in the first step.";

pub const BINARY_QUESTION_PREFIX: &str = "Does the discourse relationship between the provided arguments represent";

pub const CONFIDENCE_REQUEST: &str = "On a scale of 1-10,  1 being the lowest and 10 being the highest, Please express your confidence level in the prediction.";

const ANSWER_SLOT: &str = "Answer: ?";

fn argument_lines(arg1: &str, arg2: &str) -> String {
    format!("Argument 1: {arg1}\nArgument 2: {arg2}")
}

/// Multiple-choice prompt over the given options.
pub fn mc_prompt(arg1: &str, arg2: &str, options: &OptionList) -> String {
    format!(
        "{MC_TASK}\n\n{}\n\nOptions:\n{}\n\n{ANSWER_SLOT}",
        argument_lines(arg1, arg2),
        options.render()
    )
}

/// First turn of the two-step strategy.
pub fn insertion_prompt(arg1: &str, arg2: &str) -> String {
    format!("{INSERTION_TASK}\n\n{}\n\n{ANSWER_SLOT}", argument_lines(arg1, arg2))
}

/// Second turn of the two-step strategy.
pub fn forced_choice_prompt(connectives: &[String]) -> String {
    let options = connectives
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {c}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    format!("{FORCED_CHOICE_TASK}\n\nOptions:\n{options}\n\n{ANSWER_SLOT}")
}

fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// "Does the discourse relationship ... represent an Asynchronous relation?"
pub fn binary_question(entry: &SenseEntry) -> String {
    let name = entry.name.as_str();
    format!("{BINARY_QUESTION_PREFIX} {} {name} relation?", article(name))
}

pub fn binary_prompt(entry: &SenseEntry, arg1: &str, arg2: &str) -> String {
    let pos = &entry.positive_example;
    let neg = &entry.negative_example;
    format!(
        "Question: {}\n\nDescription: {}\n\n{}\nAnswer: Yes\n\n{}\nAnswer: No\n\n{}\n{ANSWER_SLOT}\n\n{CONFIDENCE_REQUEST}",
        binary_question(entry),
        entry.description,
        argument_lines(&pos.arg1, &pos.arg2),
        argument_lines(&neg.arg1, &neg.arg2),
        argument_lines(arg1, arg2),
    )
}

fn verification_block(entry: &SenseEntry, arg1: &str, arg2: &str, answer: &str) -> String {
    let options = entry
        .answers
        .iter()
        .map(|a| a.text.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "Consider the discourse relation between Arg1 and Arg2, where Arg1 is \"{arg1}\" and Arg2 is \"{arg2}\" {}\nOptions: {options}\nAnswer: {answer}",
        entry.verification_question
    )
}

pub fn verification_prompt(entry: &SenseEntry, arg1: &str, arg2: &str) -> String {
    let pos = &entry.positive_example;
    let neg = &entry.negative_example;
    [
        verification_block(entry, &pos.arg1, &pos.arg2, entry.positive_example_answer()),
        verification_block(entry, &neg.arg1, &neg.arg2, &entry.negative_answer().text),
        verification_block(entry, arg1, arg2, "?"),
    ]
    .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::SenseInventory;

    #[test]
    fn mc_prompt_matches_template() {
        let inv = SenseInventory::pdtb3();
        let text = mc_prompt("We've got a product.", "If you want it, you can get it.", &inv.full_options());
        let expected = "\
Task: Identify the most suitable option from the list below that describes the discourse relationship between the following pair of arguments.

Argument 1: We've got a product.
Argument 2: If you want it, you can get it.

Options:
1. Temporal.Asynchronous, before / after
2. Temporal.Synchronous, at that time / while
3. Contingency.Cause, consequently / therefore
4. Contingency.Cause+Belief, considering this
5. Contingency.Condition, in that case / if
6. Contingency.Purpose, in order to / such that
7. Comparison.Contrast, on the contrary / in contrast
8. Comparison.Concession, despite this / even though
9. Expansion.Conjunction, in addition / also
10. Expansion.Instantiation, for example / for instance
11. Expansion.Equivalence, in other words
12. Expansion.Level-of-detail, specifically / in short
13. Expansion.Manner, how? / thereby
14. Expansion.Substitution, instead / rather

Answer: ?";
        assert_eq!(text, expected);
    }

    #[test]
    fn articles() {
        let inv = SenseInventory::pdtb3();
        let q = |s: &str| binary_question(inv.get(&s.into()).unwrap());
        assert!(q("Asynchronous").ends_with("represent an Asynchronous relation?"));
        assert!(q("Instantiation").ends_with("represent an Instantiation relation?"));
        assert!(q("Cause").ends_with("represent a Cause relation?"));
    }
}
