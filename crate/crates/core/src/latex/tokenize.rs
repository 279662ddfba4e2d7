//! Flat lexer for LaTeX math fragments.

use super::{Token, TokenKind};

/// Commands whose brace group holds prose rather than math. Letter runs
/// inside such groups become `Text` tokens.
const TEXT_COMMANDS: &[&str] = &[
    "\\text", "\\mbox", "\\textrm", "\\textbf", "\\textit", "\\textsf", "\\texttt", "\\hbox",
    "\\emph",
];

/// Split a LaTeX string into flat tokens.
///
/// Deterministic, never fails: unknown characters become `Symbol` tokens.
/// Commands greedily consume letter runs; `\begin{name}`/`\end{name}` are
/// single environment tokens; whitespace runs collapse to one-space
/// `Whitespace` tokens, so concatenating lexemes reproduces the input up to
/// collapsed whitespace.
pub fn tokenize(source: &str) -> Vec<Token> {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;

    // Text-mode tracking: brace depths at which a TEXT_COMMANDS group opened.
    let mut brace_depth: usize = 0;
    let mut text_marks: Vec<usize> = Vec::new();
    let mut pending_text = false;

    while i < chars.len() {
        let c = chars[i];
        match c {
            ch if ch.is_whitespace() => {
                while i < chars.len() && chars[i].is_whitespace() {
                    i += 1;
                }
                tokens.push(Token::new(TokenKind::Whitespace, " "));
            }
            '\\' => {
                pending_text = false;
                if i + 1 >= chars.len() || chars[i + 1].is_whitespace() {
                    // Lone or whitespace-followed backslash becomes a plain
                    // symbol; no lexeme may contain whitespace, or the
                    // collapsed-whitespace round-trip breaks.
                    tokens.push(Token::new(TokenKind::Symbol, "\\"));
                    i += 1;
                } else if chars[i + 1] == '\\' {
                    tokens.push(Token::new(TokenKind::LineBreak, "\\\\"));
                    i += 2;
                } else if chars[i + 1].is_ascii_alphabetic() {
                    let start = i;
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_alphabetic() {
                        i += 1;
                    }
                    let name: String = chars[start..i].iter().collect();
                    if (name == "\\begin" || name == "\\end") && chars.get(i) == Some(&'{') {
                        if let Some(close) = find_env_close(&chars, i) {
                            let text: String = chars[start..=close].iter().collect();
                            let kind = if name == "\\begin" {
                                TokenKind::EnvBegin
                            } else {
                                TokenKind::EnvEnd
                            };
                            tokens.push(Token::new(kind, text));
                            i = close + 1;
                            continue;
                        }
                    }
                    if TEXT_COMMANDS.contains(&name.as_str()) {
                        pending_text = true;
                    }
                    tokens.push(Token::new(TokenKind::Command, name));
                } else {
                    // Single non-letter escape, e.g. \{ \, \;
                    let text: String = chars[i..i + 2].iter().collect();
                    tokens.push(Token::new(TokenKind::Command, text));
                    i += 2;
                }
            }
            '{' => {
                brace_depth += 1;
                if pending_text {
                    text_marks.push(brace_depth);
                    pending_text = false;
                }
                tokens.push(Token::new(TokenKind::GroupOpen, "{"));
                i += 1;
            }
            '}' => {
                if text_marks.last() == Some(&brace_depth) {
                    text_marks.pop();
                }
                brace_depth = brace_depth.saturating_sub(1);
                pending_text = false;
                tokens.push(Token::new(TokenKind::GroupClose, "}"));
                i += 1;
            }
            '&' => {
                pending_text = false;
                tokens.push(Token::new(TokenKind::Alignment, "&"));
                i += 1;
            }
            _ => {
                pending_text = false;
                if !text_marks.is_empty() && c.is_alphanumeric() {
                    // Prose word: maximal alphanumeric run.
                    let start = i;
                    while i < chars.len() && chars[i].is_alphanumeric() {
                        i += 1;
                    }
                    let word: String = chars[start..i].iter().collect();
                    tokens.push(Token::new(TokenKind::Text, word));
                } else {
                    tokens.push(Token::new(TokenKind::Symbol, c.to_string()));
                    i += 1;
                }
            }
        }
    }
    tokens
}

/// Scan `{name}` starting at the opening brace; returns the index of the
/// closing brace. Environment names are letters, digits, and `*`.
fn find_env_close(chars: &[char], open: usize) -> Option<usize> {
    debug_assert_eq!(chars[open], '{');
    let mut j = open + 1;
    while j < chars.len() {
        let c = chars[j];
        if c == '}' {
            return if j > open + 1 { Some(j) } else { None };
        }
        if !(c.is_ascii_alphanumeric() || c == '*') {
            return None;
        }
        j += 1;
    }
    None
}

/// Concatenate lexemes. For token sequences produced by [`tokenize`] this
/// reproduces the input with whitespace runs collapsed.
pub fn detokenize(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect()
}

/// Rebuild a source string from an *edited* token sequence, inserting a
/// space wherever plain concatenation would merge adjacent lexemes (a
/// letter-run command followed by a letter or digit, or two prose words).
pub fn rebuild_source(tokens: &[Token]) -> String {
    let mut out = String::new();
    let mut prev: Option<&Token> = None;
    for tok in tokens {
        if tok.is_whitespace() && out.ends_with(' ') {
            continue;
        }
        if let Some(p) = prev {
            if needs_separator(p, tok) && !out.ends_with(' ') {
                out.push(' ');
            }
        }
        out.push_str(&tok.text);
        prev = Some(tok);
    }
    let trimmed = out.trim();
    if trimmed.len() != out.len() {
        trimmed.to_string()
    } else {
        out
    }
}

fn needs_separator(prev: &Token, next: &Token) -> bool {
    if prev.kind == TokenKind::Text && next.kind == TokenKind::Text {
        return true;
    }
    let prev_is_letter_command = prev.kind == TokenKind::Command
        && prev.text.len() > 1
        && prev.text[1..].chars().all(|c| c.is_ascii_alphabetic());
    prev_is_letter_command
        && next
            .text
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphanumeric())
}
