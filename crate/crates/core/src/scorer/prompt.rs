//! Prompt templates and XML-tagged response parsing.
//!
//! Four templates are used: preference summarization, item scoring, and the
//! two refinement templates. Refinement on a false positive asks the model
//! to strip the item's characteristics from the preference; refinement on a
//! false negative asks it to fold them in.

use crate::data::ItemProfile;

use super::{FeedbackKind, Score, ScorerError};

pub const SYSTEM_PROMPT: &str = "You are a careful assistant for a recommender system. \
Follow the requested output format exactly.";

pub const SCORE_TAG: &str = "score";
pub const PREFERENCE_TAG: &str = "preference";

const SCORE_RUBRIC: &str = "\
Score meanings (integers from 1 to 10):
1-2: the item clearly conflicts with the user's preference.
3-4: the item is mostly unrelated to what the user enjoys.
5-6: the item partially matches the preference; the user may be indifferent.
7-8: the item matches several aspects the user enjoys.
9-10: the item is an excellent match for the user's preference.";

fn item_block(profile: &ItemProfile) -> String {
    format!("Title: {}\nDescription: {}", profile.title.trim(), profile.description.trim())
}

/// Summarization prompt over the profiles of a user's interacted items.
pub fn render_summary_prompt(profiles: &[&ItemProfile]) -> String {
    let mut out = String::from(
        "Instruction: Based on the items a user has interacted with, summarize the \
characteristics of items this user would enjoy. Describe the preference in a short paragraph \
without listing item titles.\n\nInteracted items:\n",
    );
    for (k, p) in profiles.iter().enumerate() {
        out.push_str(&format!("[{}]\n{}\n", k + 1, item_block(p)));
    }
    out.push_str(&format!(
        "\nOutput format: enforce the output format to the XML below and output nothing else.\n<{PREFERENCE_TAG}>summarized preference</{PREFERENCE_TAG}>\n"
    ));
    out
}

/// Scoring prompt: instruction, 1–10 rubric, user preference, item profile
/// and the XML output contract.
pub fn render_score_prompt(preference_text: &str, item_profile: &ItemProfile) -> String {
    format!(
        "Instruction: Given the user's preference and an item profile, rate how much the user \
would like the item on a scale from 1 to 10.\n\n{SCORE_RUBRIC}\n\n\
User preference:\n{}\n\nItem profile:\n{}\n\n\
Output format: enforce the output format to the XML below and output nothing else.\n\
<{SCORE_TAG}>an integer from 1 to 10</{SCORE_TAG}>\n<reason>one sentence</reason>\n",
        preference_text.trim(),
        item_block(item_profile)
    )
}

/// Refinement prompt for a detected false positive (remove) or false
/// negative (add).
pub fn render_refine_prompt(preference_text: &str, item_profile: &ItemProfile, kind: FeedbackKind) -> String {
    let instruction = match kind {
        FeedbackKind::Fp => {
            "Instruction: The user interacted with the item below but most likely does not \
enjoy it. Update the user's preference by removing the characteristics that this item \
contributes, and keep everything else unchanged."
        }
        FeedbackKind::Fn => {
            "Instruction: The user has not interacted with the item below but most likely \
enjoys it. Update the user's preference by adding the characteristics of this item that the \
user would like, and keep everything else unchanged."
        }
    };
    format!(
        "{instruction}\n\nCurrent user preference:\n{}\n\nItem profile:\n{}\n\n\
Output format: enforce the output format to the XML below and output nothing else.\n\
<{PREFERENCE_TAG}>updated preference</{PREFERENCE_TAG}>\n",
        preference_text.trim(),
        item_block(item_profile)
    )
}

/// Contents of the first `<tag>…</tag>` pair (case-insensitive tag names).
pub fn extract_tag<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let lower = text.to_ascii_lowercase();
    let open = format!("<{}>", tag.to_ascii_lowercase());
    let close = format!("</{}>", tag.to_ascii_lowercase());
    let start = lower.find(&open)? + open.len();
    let end = start + lower[start..].find(&close)?;
    Some(&text[start..end])
}

/// Extracts the integer inside the first `<score>` tag. Missing tags,
/// fractional or non-numeric contents and values outside `[1, 10]` are
/// rejected.
pub fn parse_score_response(text: &str) -> Result<Score, ScorerError> {
    let fail = |reason: &str| ScorerError::Parse {
        raw: text.to_string(),
        reason: reason.to_string(),
    };
    let inner = extract_tag(text, SCORE_TAG).ok_or_else(|| fail("missing <score> tag"))?;
    let bytes = inner.as_bytes();
    let start = bytes
        .iter()
        .position(u8::is_ascii_digit)
        .ok_or_else(|| fail("no integer inside <score>"))?;
    let negative = start > 0 && bytes[start - 1] == b'-';
    let end = start + bytes[start..].iter().take_while(|b| b.is_ascii_digit()).count();
    if bytes.get(end) == Some(&b'.') && bytes.get(end + 1).is_some_and(u8::is_ascii_digit) {
        return Err(fail("fractional score"));
    }
    if negative {
        return Err(fail("score out of range"));
    }
    let value: u64 = inner[start..end].parse().map_err(|_| fail("score out of range"))?;
    u8::try_from(value)
        .ok()
        .and_then(Score::new)
        .ok_or_else(|| fail("score out of range"))
}

pub fn parse_preference_response(text: &str) -> Result<String, ScorerError> {
    let inner = extract_tag(text, PREFERENCE_TAG).ok_or_else(|| ScorerError::Parse {
        raw: text.to_string(),
        reason: "missing <preference> tag".into(),
    })?;
    let trimmed = inner.trim();
    if trimmed.is_empty() {
        return Err(ScorerError::Parse {
            raw: text.to_string(),
            reason: "empty preference".into(),
        });
    }
    Ok(trimmed.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> ItemProfile {
        ItemProfile {
            item: 4,
            title: "The Quiet Harbor".into(),
            description: "A slow-burning coastal mystery.".into(),
        }
    }

    #[test]
    fn score_prompt_contents() {
        let pref = "Enjoys atmospheric mysteries set by the sea.";
        let p = render_score_prompt(pref, &profile());
        assert!(p.contains(pref));
        assert!(p.contains("The Quiet Harbor"));
        assert!(p.contains("1") && p.contains("10"));
        assert!(p.contains("<score>"));
        assert!(p.contains("XML"));
        assert_eq!(p, render_score_prompt(pref, &profile()));
    }

    #[test]
    fn refine_prompts_differ_by_direction() {
        let fp = render_refine_prompt("x", &profile(), FeedbackKind::Fp);
        let fn_ = render_refine_prompt("x", &profile(), FeedbackKind::Fn);
        assert!(fp.contains("removing"));
        assert!(fn_.contains("adding"));
        let s = render_summary_prompt(&[&profile()]);
        assert!(s.contains("The Quiet Harbor") && s.contains("<preference>"));
    }

    #[test]
    fn parse_scores() {
        assert_eq!(parse_score_response("<score>7</score>").unwrap().value(), 7);
        assert_eq!(
            parse_score_response("The item fits well.\n<score> 3 </score><reason>r</reason>").unwrap().value(),
            3
        );
        assert_eq!(parse_score_response("<SCORE>10</SCORE>").unwrap().value(), 10);
        for bad in ["<score>11</score>", "<score>0</score>", "<score>7.5</score>", "<score>high</score>", "score: 7", "<score>-3</score>", "<score>99999999999999999999</score>"] {
            match parse_score_response(bad) {
                Err(ScorerError::Parse { raw, .. }) => assert_eq!(raw, bad),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }

    #[test]
    fn parse_preferences() {
        assert_eq!(parse_preference_response("ok <preference> likes tea </preference>").unwrap(), "likes tea");
        assert!(parse_preference_response("<preference>  </preference>").is_err());
        assert!(parse_preference_response("likes tea").is_err());
    }
}
