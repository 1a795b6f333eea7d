//! Prompt scaffolds, answer extraction and voting.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

use super::{option_letter, EvalItem, Task};

pub const CHOICE_SCAFFOLD: &str =
    "Your response should be a single character: A, B, C, or D. Do not include any other text or explanation.";
pub const BINARY_SCAFFOLD: &str = "Please answer yes or no.";
pub const DESCRIPTION_SCAFFOLD: &str = "Summarize the video in one sentence.";

/// Question, lettered options when present, then the task's scaffold sentence.
pub fn build_prompt(item: &EvalItem) -> String {
    let mut out = String::new();
    if !item.question.trim().is_empty() {
        out.push_str(item.question.trim());
        out.push('\n');
    }
    if let Some(opts) = &item.options {
        for (i, o) in opts.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", option_letter(i), o.trim()));
        }
    }
    out.push_str(match item.task {
        Task::MultipleChoice => CHOICE_SCAFFOLD,
        Task::Binary => BINARY_SCAFFOLD,
        Task::Description => DESCRIPTION_SCAFFOLD,
    });
    out
}

static UPPER_CHOICE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([A-D])\b").expect("valid regex"));
static ANY_CHOICE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([a-dA-D])\b").expect("valid regex"));
static LEADING_WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[^\p{L}\p{N}]*(\p{L}+)").expect("valid regex"));

/// Pulls a well-formed answer out of raw model output.
///
/// Choice: the first standalone `A`-`D`. Capital letters are preferred so an
/// article such as "a" in running text is only taken when no capital letter
/// stands alone. Binary: a leading `yes`/`no`, any case. Description: the
/// trimmed text. `None` when nothing qualifies.
pub fn extract_answer(raw: &str, task: Task) -> Option<String> {
    match task {
        Task::MultipleChoice => UPPER_CHOICE
            .captures(raw)
            .or_else(|| ANY_CHOICE.captures(raw))
            .map(|c| c[1].to_ascii_uppercase()),
        Task::Binary => {
            let word = LEADING_WORD.captures(raw)?[1].to_lowercase();
            matches!(word.as_str(), "yes" | "no").then_some(word)
        }
        Task::Description => {
            let t = raw.trim();
            (!t.is_empty()).then(|| t.to_string())
        }
    }
}

/// Most frequent answer; ties go to the lexicographically smallest.
/// Unparseable votes are ignored.
pub fn majority_vote<'a, I>(votes: I) -> Option<String>
where
    I: IntoIterator<Item = &'a Option<String>>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in votes.into_iter().flatten() {
        *counts.entry(v.as_str()).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    // BTreeMap iterates in lexicographic order, so strict > keeps the smallest tie
    for (answer, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((answer, n));
        }
    }
    best.map(|(a, _)| a.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(task: Task) -> EvalItem {
        EvalItem {
            id: "x".into(),
            video_ref: "v".into(),
            total_frames: 8,
            task,
            question: "Is the cup moving?".into(),
            options: (task == Task::MultipleChoice).then(|| vec!["up".into(), "down".into()]),
            reference: "A".into(),
            category: "c".into(),
        }
    }

    #[test]
    fn scaffolds_close_the_prompt() {
        let p = build_prompt(&item(Task::MultipleChoice));
        assert_eq!(
            p,
            "Is the cup moving?\nA. up\nB. down\nYour response should be a single character: A, B, C, or D. Do not include any other text or explanation."
        );
        assert!(build_prompt(&item(Task::Binary)).ends_with("Please answer yes or no."));
        let mut d = item(Task::Description);
        d.question.clear();
        assert_eq!(build_prompt(&d), "Summarize the video in one sentence.");
    }

    #[test]
    fn choice_extraction() {
        let mc = Task::MultipleChoice;
        assert_eq!(extract_answer("B.", mc).as_deref(), Some("B"));
        assert_eq!(extract_answer("the answer is  c", mc).as_deref(), Some("C"));
        assert_eq!(extract_answer("(D) because", mc).as_deref(), Some("D"));
        assert_eq!(extract_answer("a dog chases C", mc).as_deref(), Some("C"));
        assert_eq!(extract_answer("Because", mc), None);
        assert_eq!(extract_answer("E", mc), None);
        assert_eq!(extract_answer("", mc), None);
    }

    #[test]
    fn binary_extraction() {
        assert_eq!(extract_answer("Yes!", Task::Binary).as_deref(), Some("yes"));
        assert_eq!(extract_answer("  NO, it is not", Task::Binary).as_deref(), Some("no"));
        assert_eq!(extract_answer("Maybe yes", Task::Binary), None);
        assert_eq!(extract_answer("yesterday", Task::Binary), None);
    }

    #[test]
    fn description_is_trimmed_identity() {
        assert_eq!(
            extract_answer("  A cat sits. ", Task::Description).as_deref(),
            Some("A cat sits.")
        );
        assert_eq!(extract_answer("   ", Task::Description), None);
    }

    #[test]
    fn voting() {
        let v = |xs: &[&str]| xs.iter().map(|x| Some(x.to_string())).collect::<Vec<_>>();
        assert_eq!(majority_vote(&v(&["A", "A", "B"])).as_deref(), Some("A"));
        assert_eq!(majority_vote(&v(&["B", "A"])).as_deref(), Some("A"));
        assert_eq!(majority_vote(&[None, Some("C".to_string()), None]).as_deref(), Some("C"));
        assert_eq!(majority_vote(&[None, None]), None);
    }
}
