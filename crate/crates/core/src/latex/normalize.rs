//! Style de-normalization: strip bold/italic wrappers, display-style
//! switches, and explicit spacing so two stylings of the same expression
//! compare equal.

use super::{Token, TokenKind};

/// Wrappers unwrapped to their argument.
const UNWRAP_COMMANDS: &[&str] = &["\\mathbf", "\\boldsymbol", "\\mathit"];

/// Bare switches and spacing commands removed outright.
const REMOVE_COMMANDS: &[&str] = &[
    "\\bf",
    "\\it",
    "\\displaystyle",
    "\\!",
    "\\,",
    "\\;",
    "\\quad",
    "\\qquad",
];

/// Remove or unwrap style tokens. Idempotent: applying twice equals
/// applying once, both on token sequences and on rebuilt sources.
///
/// `\mathrm` is unwrapped only around a single letter (`\mathrm{d}` -> `d`);
/// multi-letter uses like `\mathrm{div}` are kept.
pub fn normalize_style(tokens: &[Token]) -> Vec<Token> {
    let mut out = Vec::with_capacity(tokens.len());
    normalize_range(tokens, &mut out);
    collapse_ws(out)
}

fn normalize_range(tokens: &[Token], out: &mut Vec<Token>) {
    let mut i = 0;
    while i < tokens.len() {
        let tok = &tokens[i];
        if tok.kind == TokenKind::Command {
            let name = tok.text.as_str();
            if REMOVE_COMMANDS.contains(&name) {
                i += 1;
                continue;
            }
            if UNWRAP_COMMANDS.contains(&name) {
                i = unwrap_argument(tokens, i + 1, out);
                continue;
            }
            if name == "\\mathrm" {
                if let Some((inner, next)) = braced_argument(tokens, i + 1) {
                    if is_single_letter(inner) {
                        normalize_range(inner, out);
                        i = next;
                        continue;
                    }
                }
            }
        }
        out.push(tok.clone());
        i += 1;
    }
}

/// Emit the normalized argument of a wrapper command starting at `i`
/// (whitespace before the argument is dropped). Returns the index after
/// the consumed argument.
fn unwrap_argument(tokens: &[Token], mut i: usize, out: &mut Vec<Token>) -> usize {
    while i < tokens.len() && tokens[i].is_whitespace() {
        i += 1;
    }
    if i >= tokens.len() {
        return i;
    }
    if tokens[i].kind == TokenKind::GroupOpen {
        if let Some((inner, next)) = braced_argument(tokens, i) {
            normalize_range(inner, out);
            return next;
        }
    }
    // Single-token argument, e.g. `\mathbf x` or `\boldsymbol\alpha`.
    normalize_range(&tokens[i..i + 1], out);
    i + 1
}

/// For a `GroupOpen` at `start` (whitespace allowed before it), return the
/// tokens strictly inside the balanced group and the index just past the
/// closing brace.
fn braced_argument(tokens: &[Token], mut start: usize) -> Option<(&[Token], usize)> {
    while start < tokens.len() && tokens[start].is_whitespace() {
        start += 1;
    }
    if tokens.get(start)?.kind != TokenKind::GroupOpen {
        return None;
    }
    let mut depth = 1;
    let mut j = start + 1;
    while j < tokens.len() {
        match tokens[j].kind {
            TokenKind::GroupOpen => depth += 1,
            TokenKind::GroupClose => {
                depth -= 1;
                if depth == 0 {
                    return Some((&tokens[start + 1..j], j + 1));
                }
            }
            _ => {}
        }
        j += 1;
    }
    None
}

fn is_single_letter(tokens: &[Token]) -> bool {
    let sig: Vec<&Token> = tokens.iter().filter(|t| !t.is_whitespace()).collect();
    sig.len() == 1
        && sig[0].kind == TokenKind::Symbol
        && sig[0].text.chars().count() == 1
        && sig[0].text.chars().all(|c| c.is_alphabetic())
}

/// Merge whitespace runs left behind by removed tokens.
fn collapse_ws(tokens: Vec<Token>) -> Vec<Token> {
    let mut out: Vec<Token> = Vec::with_capacity(tokens.len());
    for tok in tokens {
        if tok.is_whitespace() && out.last().is_some_and(|t| t.is_whitespace()) {
            continue;
        }
        out.push(tok);
    }
    out
}
