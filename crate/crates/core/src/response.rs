//! Decomposition of a raw rollout into reasoning, answer and evidence tags.

use std::collections::HashSet;
use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

use crate::table::CellRef;

const THINK: (&str, &str) = ("<think>", "</think>");
const ANSWER: (&str, &str) = ("<answer>", "</answer>");

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ParsedResponse {
    pub raw: String,
    pub think: Option<String>,
    pub answer: Option<String>,
    /// De-duplicated (normalized key) evidence references, first-seen order.
    pub positions: Vec<CellRef>,
    pub truncated: bool,
    #[serde(skip)]
    think_span: Option<Range<usize>>,
    #[serde(skip)]
    answer_span: Option<Range<usize>>,
}

/// Byte span (tags included) and inner text of the first well-formed block.
fn first_block(raw: &str, (open, close): (&str, &str)) -> Option<(Range<usize>, String)> {
    let start = raw.find(open)?;
    let inner_start = start + open.len();
    let end = raw[inner_start..].find(close)? + inner_start;
    Some((start..end + close.len(), raw[inner_start..end].to_string()))
}

/// Reads a `{...}` group starting at `s[0] == '{'`, allowing nested braces.
/// Returns the group content and the number of bytes consumed.
fn brace_group(s: &str) -> Option<(&str, usize)> {
    let mut depth = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some((&s[1..i], i + 1));
                }
            }
            _ if i == 0 => return None,
            _ => {}
        }
    }
    None
}

fn latex_positions(text: &str, out: &mut Vec<(usize, CellRef)>) {
    let mut rest = text;
    while let Some(idx) = rest.find('\\') {
        let at = text.len() - rest.len() + idx;
        rest = &rest[idx + 1..];
        if let Some(after) = rest.strip_prefix("position") {
            if let Some((cell, used)) = brace_group(after) {
                if let Some((col, used2)) = brace_group(&after[used..]) {
                    out.push((at, CellRef::cell(cell.trim(), col.trim())));
                    rest = &after[used + used2..];
                    continue;
                }
            }
        } else if let Some(after) = rest.strip_prefix("oneposition") {
            if let Some((col, used)) = brace_group(after) {
                out.push((at, CellRef::column(col.trim())));
                rest = &after[used..];
                continue;
            }
        }
    }
}

fn angle_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<\|([^\n]*?)\|>\s*<\|([^\n]*?)\|>").unwrap())
}

/// Extracts evidence annotations in all accepted syntaxes:
/// `\position{cell}{column}`, `\oneposition{column}` and
/// `<|cell|><|column|>`. Entries with an empty column are ignored.
pub fn extract_positions(text: &str) -> Vec<CellRef> {
    let mut found = Vec::new();
    latex_positions(text, &mut found);
    for cap in angle_re().captures_iter(text) {
        let at = cap.get(0).map_or(0, |m| m.start());
        found.push((at, CellRef::cell(cap[1].trim(), cap[2].trim())));
    }
    found.sort_by_key(|(at, _)| *at);
    let mut seen = HashSet::new();
    found
        .into_iter()
        .map(|(_, r)| r)
        .filter(|r| !r.column.trim().is_empty())
        .map(|mut r| {
            if r.cell.as_deref().is_some_and(|c| c.is_empty()) {
                r.cell = None;
            }
            r
        })
        .filter(|r| seen.insert(r.key()))
        .collect()
}

pub fn parse_response(raw: &str) -> ParsedResponse {
    let think = first_block(raw, THINK);
    let answer = first_block(raw, ANSWER);
    let positions = think
        .as_ref()
        .map(|(_, t)| extract_positions(t))
        .unwrap_or_default();
    ParsedResponse {
        raw: raw.to_string(),
        think: think.as_ref().map(|(_, t)| t.clone()),
        answer: answer.as_ref().map(|(_, a)| a.trim().to_string()),
        positions,
        truncated: false,
        think_span: think.map(|(s, _)| s),
        answer_span: answer.map(|(s, _)| s),
    }
}

impl ParsedResponse {
    pub fn with_truncated(mut self, truncated: bool) -> Self {
        self.truncated = truncated;
        self
    }
}

/// 1 iff exactly one think block and one answer block exist and the answer
/// opens after the think block closes.
pub fn reward_format(resp: &ParsedResponse) -> u8 {
    let once = |tag: &str| resp.raw.matches(tag).count() == 1;
    let tags_once = once(THINK.0) && once(THINK.1) && once(ANSWER.0) && once(ANSWER.1);
    match (&resp.think_span, &resp.answer_span) {
        (Some(t), Some(a)) if tags_once && a.start >= t.end => 1,
        _ => 0,
    }
}
