//! Parsers for the fenced answer block that ends every response.

use crate::percept::MarkerSet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no fenced answer block found")]
    NoAnswerBlock,
    #[error("answer block lacks the `{0}:` field")]
    MissingField(&'static str),
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("`{0}` is not a marker id")]
    BadMarker(String),
    #[error("marker {0} was not offered")]
    MarkerNotOffered(u32),
    #[error("description matches none of the options")]
    NoMatch,
}

/// Body of the last fenced block tagged `answer`, or of the last untagged
/// block when none is tagged.
pub fn answer_block(text: &str) -> Option<&str> {
    let mut tagged = None;
    let mut plain = None;
    let mut rest = text;
    let mut offset = 0;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let line_end = after.find('\n').unwrap_or(after.len());
        let tag = after[..line_end].trim();
        let body_start = (line_end + 1).min(after.len());
        let Some(close) = after[body_start..].find("```") else { break };
        let body = &after[body_start..body_start + close];
        let abs = offset + open + 3 + body_start;
        let slice = &text[abs..abs + body.len()];
        if tag.eq_ignore_ascii_case("answer") {
            tagged = Some(slice);
        } else if tag.is_empty() {
            plain = Some(slice);
        }
        let consumed = open + 3 + body_start + close + 3;
        offset += consumed;
        rest = &rest[consumed..];
    }
    tagged.or(plain)
}

/// Value of a `name: value` line, case-insensitive on the name, with
/// decoration such as quotes and backticks stripped.
pub fn field(block: &str, name: &str) -> Option<String> {
    block.lines().find_map(|l| {
        let l = l.trim().trim_start_matches(['-', '*', ' ']);
        let (k, v) = l.split_once(':')?;
        if !k.trim().trim_matches('*').eq_ignore_ascii_case(name) {
            return None;
        }
        let v = v.trim().trim_matches(|c| matches!(c, '"' | '\'' | '`' | '*')).trim();
        (!v.is_empty()).then(|| v.to_string())
    })
}

pub fn parse_stage1(text: &str, skills: &[&str]) -> Result<(String, String), ParseError> {
    let block = answer_block(text).ok_or(ParseError::NoAnswerBlock)?;
    let subtask = field(block, "subtask").ok_or(ParseError::MissingField("subtask"))?;
    let raw = field(block, "skill").ok_or(ParseError::MissingField("skill"))?;
    let skill = raw.trim_end_matches(['.', '(', ')']).trim().to_ascii_lowercase();
    if skill == "done" || skills.contains(&skill.as_str()) {
        Ok((subtask, skill))
    } else {
        Err(ParseError::UnknownSkill(raw))
    }
}

pub fn parse_stage2(text: &str, markers: &MarkerSet) -> Result<u32, ParseError> {
    let block = answer_block(text).ok_or(ParseError::NoAnswerBlock)?;
    let raw = field(block, "marker").ok_or(ParseError::MissingField("marker"))?;
    let digits = raw.trim_start_matches(|c: char| !c.is_ascii_digit());
    let digits: String = digits.chars().take_while(char::is_ascii_digit).collect();
    let id: u32 = digits.parse().map_err(|_| ParseError::BadMarker(raw.clone()))?;
    if markers.get(id).is_none() {
        return Err(ParseError::MarkerNotOffered(id));
    }
    Ok(id)
}

pub fn parse_description(text: &str) -> Result<String, ParseError> {
    let block = answer_block(text).ok_or(ParseError::NoAnswerBlock)?;
    field(block, "description").ok_or(ParseError::MissingField("description"))
}
