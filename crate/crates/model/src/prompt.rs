//! Conversation template shared by training and inference.

use crate::vocab::{Vocabulary, BOS, EOS};

pub const ANSWER: &str = "Sure, I track the object. <TK>, <PO>";

/// Drops a leading "the " so the description slots into "track the {…}".
pub fn description_of(instruction: &str) -> &str {
    let t = instruction.trim();
    match t.get(..4) {
        Some(p) if p.eq_ignore_ascii_case("the ") => t[4..].trim_start(),
        _ => t,
    }
}

pub fn prompt_text(description: &str) -> String {
    format!("USER: <IMAGE> Can you track the {description} in the video? ASSISTANT:")
}

/// `(prompt ids, answer ids)`. The prompt starts with BOS; the answer ends
/// with EOS.
pub fn build_prompt(vocab: &Vocabulary, description: &str) -> (Vec<usize>, Vec<usize>) {
    let mut prompt = vec![BOS];
    prompt.extend(vocab.tokenize(&prompt_text(description)));
    let mut answer = vocab.tokenize(ANSWER);
    answer.push(EOS);
    (prompt, answer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{IMAGE, PO, TK};

    #[test]
    fn answer_tail_and_single_image_marker() {
        let v = Vocabulary::new(["red", "circle"]);
        let (p, a) = build_prompt(&v, "red circle");
        let comma = v.id(",").unwrap();
        assert_eq!(&a[a.len() - 4..], &[TK, comma, PO, EOS]);
        assert_eq!(p.iter().filter(|&&t| t == IMAGE).count(), 1);
        assert_eq!(v.detokenize(&p[..]), "user : <IMAGE> can you track the red circle in the video ? assistant :");
        assert_eq!(v.detokenize(&a), "sure , i track the object . ,");
    }

    #[test]
    fn strips_leading_article() {
        assert_eq!(description_of("the red circle"), "red circle");
        assert_eq!(description_of("The largest shape"), "largest shape");
        assert_eq!(description_of("theory"), "theory");
    }
}
