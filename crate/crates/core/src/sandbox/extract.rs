//! Pulling program text out of a model reply.

/// Info-string tags accepted for Python blocks.
pub const PYTHON_TAGS: &[&str] = &["python", "python3", "py"];

/// Body of the last fenced block tagged as Python, else of the last fenced
/// block of any tag. `("", false)` when the reply has no fenced block.
pub fn extract_code(reply: &str) -> (String, bool) {
    extract_code_tagged(reply, PYTHON_TAGS)
}

/// [`extract_code`] with a caller-supplied tag set (matched case-insensitively
/// against the first word of the info string).
pub fn extract_code_tagged(reply: &str, tags: &[&str]) -> (String, bool) {
    let blocks = fenced_blocks(reply);
    let tagged = blocks.iter().rev().find(|(info, _)| {
        let lang = info.split_whitespace().next().unwrap_or("");
        tags.iter().any(|t| t.eq_ignore_ascii_case(lang))
    });
    match tagged.or(blocks.last()) {
        Some((_, body)) => (body.clone(), true),
        None => (String::new(), false),
    }
}

/// (info string, body) for every ``` block. A block still open at the end of
/// the reply runs to the end. Body lines lose as much leading indentation as
/// the opening fence had.
fn fenced_blocks(reply: &str) -> Vec<(String, String)> {
    let mut blocks = Vec::new();
    let mut open: Option<(String, usize, Vec<&str>)> = None;
    for line in reply.lines() {
        let trimmed = line.trim_start();
        match open.as_mut() {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    open = Some((info.trim().to_string(), line.len() - trimmed.len(), Vec::new()));
                }
            }
            Some((_, indent, body)) => {
                let t = trimmed.trim_end();
                if t.len() >= 3 && t.chars().all(|c| c == '`') {
                    let (info, _, body) = open.take().unwrap();
                    blocks.push((info, join(&body)));
                } else {
                    let strip = line.len() - line.trim_start_matches(' ').len();
                    body.push(&line[strip.min(*indent)..]);
                }
            }
        }
    }
    if let Some((info, _, body)) = open {
        blocks.push((info, join(&body)));
    }
    blocks
}

fn join(lines: &[&str]) -> String {
    let mut s = lines.join("\n");
    s.push('\n');
    s
}
