//! Indented tree text. One node per line:
//!
//! ```text
//! # comment
//! sot_parallel root threshold=2
//!   non_blocking avoid_table task=avoid_table
//!   sequence steps
//!     condition visited key=point1_visited
//! ```
//!
//! A line is `<kind> <id> [attr=value ...]`. Children are indented deeper
//! than their parent, with spaces only. Attributes: `threshold` (count or
//! `all`) on parallels, `attempts` on `retry`, `key` on conditions, `task`
//! on actions. `key` and `task` default to the node id.

use super::{BehaviorTree, BtError, DecoratorPolicy, NodeKind, NodeSpec, Threshold};

struct Line<'a> {
    number: usize,
    indent: usize,
    kind: (&'a str, usize),
    id: (&'a str, usize),
    attrs: Vec<(&'a str, &'a str, usize)>,
}

fn err(line: usize, column: usize, message: impl Into<String>) -> BtError {
    BtError::Parse { line, column, message: message.into() }
}

/// Splits on single spaces and keeps 1-based columns.
fn words(text: &str) -> Vec<(&str, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        match (ch == ' ', start) {
            (true, Some(s)) => {
                out.push((&text[s..i], s + 1));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((&text[s..], s + 1));
    }
    out
}

fn lex(document: &str) -> Result<Vec<Line<'_>>, BtError> {
    let mut lines = Vec::new();
    for (idx, raw) in document.lines().enumerate() {
        let number = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim_end();
        if content.trim().is_empty() {
            continue;
        }
        if let Some(pos) = content.find('\t') {
            return Err(err(number, pos + 1, "tabs are not allowed; indent with spaces"));
        }
        let indent = content.len() - content.trim_start().len();
        let parts = words(content);
        if parts.len() < 2 {
            return Err(err(number, indent + 1, "expected `<kind> <id>`"));
        }
        let mut attrs = Vec::new();
        for &(word, col) in &parts[2..] {
            let Some((k, v)) = word.split_once('=') else {
                return Err(err(number, col, format!("expected `name=value`, found `{word}`")));
            };
            if k.is_empty() || v.is_empty() {
                return Err(err(number, col, format!("malformed attribute `{word}`")));
            }
            attrs.push((k, v, col));
        }
        lines.push(Line { number, indent, kind: parts[0], id: parts[1], attrs });
    }
    Ok(lines)
}

fn node_kind(line: &Line<'_>) -> Result<NodeKind, BtError> {
    let (kw, kcol) = line.kind;
    let allowed: &[&str] = match kw {
        "parallel" | "sot_parallel" => &["threshold"],
        "retry" => &["attempts"],
        "condition" => &["key"],
        "non_blocking" | "blocking" => &["task"],
        "sequence" | "fallback" | "sot_sequence" | "sot_fallback" | "inverter" | "force_success"
        | "repeat_until_failure" => &[],
        other => return Err(err(line.number, kcol, format!("unknown node kind `{other}`"))),
    };
    let mut seen: Vec<&str> = Vec::new();
    for &(k, _, col) in &line.attrs {
        if !allowed.contains(&k) {
            return Err(err(line.number, col, format!("`{kw}` does not take attribute `{k}`")));
        }
        if seen.contains(&k) {
            return Err(err(line.number, col, format!("attribute `{k}` given twice")));
        }
        seen.push(k);
    }
    let attr = |name: &str| line.attrs.iter().find(|(k, _, _)| *k == name).map(|&(_, v, c)| (v, c));
    let threshold = || -> Result<Threshold, BtError> {
        match attr("threshold") {
            None | Some(("all", _)) => Ok(Threshold::All),
            Some((v, c)) => v
                .parse()
                .map(Threshold::Count)
                .map_err(|_| err(line.number, c, format!("threshold must be a count or `all`, found `{v}`"))),
        }
    };
    let id = line.id.0.to_string();
    Ok(match kw {
        "sequence" => NodeKind::Sequence,
        "fallback" => NodeKind::Fallback,
        "sot_sequence" => NodeKind::SotSequence,
        "sot_fallback" => NodeKind::SotFallback,
        "parallel" => NodeKind::Parallel(threshold()?),
        "sot_parallel" => NodeKind::SotParallel(threshold()?),
        "inverter" => NodeKind::Decorator(DecoratorPolicy::Inverter),
        "force_success" => NodeKind::Decorator(DecoratorPolicy::ForceSuccess),
        "repeat_until_failure" => NodeKind::Decorator(DecoratorPolicy::RepeatUntilFailure),
        "retry" => {
            let n = match attr("attempts") {
                None => 1,
                Some((v, c)) => v
                    .parse()
                    .map_err(|_| err(line.number, c, format!("attempts must be a count, found `{v}`")))?,
            };
            NodeKind::Decorator(DecoratorPolicy::Retry(n))
        }
        "condition" => NodeKind::Condition { key: attr("key").map_or(id, |(v, _)| v.to_string()) },
        "non_blocking" => NodeKind::NonBlockingAction { task: attr("task").map_or(id, |(v, _)| v.to_string()) },
        _ => NodeKind::BlockingAction { task: attr("task").map_or(id, |(v, _)| v.to_string()) },
    })
}

/// Parses and validates a tree.
pub fn parse_tree(document: &str) -> Result<BehaviorTree, BtError> {
    let lines = lex(document)?;
    let Some(first) = lines.first() else {
        return Err(err(1, 1, "empty tree"));
    };
    if first.indent != 0 {
        return Err(err(first.number, 1, "the root must not be indented"));
    }
    // open ancestors with their indentation
    let mut open: Vec<(usize, NodeSpec)> = Vec::new();
    let mut root = None;
    for line in &lines {
        let spec = NodeSpec::leaf(line.id.0, node_kind(line)?);
        let mut closed = None;
        while open.last().is_some_and(|(indent, _)| *indent >= line.indent) {
            closed = open.last().map(|(indent, _)| *indent);
            close(&mut open, &mut root);
        }
        if open.is_empty() && root.is_some() {
            return Err(err(line.number, line.indent + 1, "a tree has exactly one root"));
        }
        if closed.is_some_and(|indent| indent != line.indent) {
            return Err(err(line.number, line.indent + 1, "indentation does not match any enclosing level"));
        }
        if let Some((_, parent)) = open.last() {
            if parent.kind.is_leaf() {
                return Err(err(
                    line.number,
                    line.indent + 1,
                    format!("`{}` is a leaf and cannot have children", parent.id),
                ));
            }
        }
        open.push((line.indent, spec));
    }
    while !open.is_empty() {
        close(&mut open, &mut root);
    }
    BehaviorTree::new(root.expect("nonempty document has a root"))
}

fn close(open: &mut Vec<(usize, NodeSpec)>, root: &mut Option<NodeSpec>) {
    let (_, done) = open.pop().expect("close on empty stack");
    match open.last_mut() {
        Some((_, parent)) => parent.children.push(done),
        None => *root = Some(done),
    }
}

/// Writes a tree in the format read by [`parse_tree`].
pub fn render_tree(spec: &NodeSpec) -> String {
    let mut out = String::new();
    render_into(spec, 0, &mut out);
    out
}

fn render_into(spec: &NodeSpec, depth: usize, out: &mut String) {
    out.push_str(&"  ".repeat(depth));
    out.push_str(spec.kind.keyword());
    out.push(' ');
    out.push_str(&spec.id);
    match &spec.kind {
        NodeKind::Parallel(Threshold::Count(m)) | NodeKind::SotParallel(Threshold::Count(m)) => {
            out.push_str(&format!(" threshold={m}"));
        }
        NodeKind::Decorator(DecoratorPolicy::Retry(n)) => out.push_str(&format!(" attempts={n}")),
        NodeKind::Condition { key } if *key != spec.id => out.push_str(&format!(" key={key}")),
        NodeKind::NonBlockingAction { task } | NodeKind::BlockingAction { task } if *task != spec.id => {
            out.push_str(&format!(" task={task}"));
        }
        _ => {}
    }
    out.push('\n');
    for c in &spec.children {
        render_into(c, depth + 1, out);
    }
}
