//! LaTeX formula tokenization, validation, normalization, and classification.
//!
//! Everything downstream (extraction, enhancement, dedup, ExpRate) operates
//! on the flat token sequences produced here. The tokenizer does not parse
//! argument structure beyond brace groups; `^` and `_` are plain symbols.

mod analyze;
mod normalize;
mod tokenize;

pub use analyze::{classify, detect_repetition, validate};
pub use normalize::normalize_style;
pub use tokenize::{detokenize, rebuild_source, tokenize};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Command,
    Symbol,
    GroupOpen,
    GroupClose,
    EnvBegin,
    EnvEnd,
    Alignment,
    LineBreak,
    Text,
    Whitespace,
}

/// One lexeme. Concatenating the `text` fields of a token sequence
/// reproduces the input string up to collapsed whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
}

impl Token {
    pub fn new(kind: TokenKind, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
        }
    }

    pub fn is_whitespace(&self) -> bool {
        self.kind == TokenKind::Whitespace
    }

    /// Environment name for `EnvBegin`/`EnvEnd` tokens, e.g. "pmatrix"
    /// for `\begin{pmatrix}`. Trailing stars are kept.
    pub fn env_name(&self) -> Option<&str> {
        match self.kind {
            TokenKind::EnvBegin | TokenKind::EnvEnd => {
                let open = self.text.find('{')?;
                let close = self.text.rfind('}')?;
                self.text.get(open + 1..close)
            }
            _ => None,
        }
    }
}

/// Iterator over non-whitespace tokens.
pub fn significant(tokens: &[Token]) -> impl Iterator<Item = &Token> {
    tokens.iter().filter(|t| !t.is_whitespace())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SingleLine,
    MultiLine,
    Symbol,
    TextHybrid,
    Matrix,
    Table,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::SingleLine,
        Category::MultiLine,
        Category::Symbol,
        Category::TextHybrid,
        Category::Matrix,
        Category::Table,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Category::SingleLine => "single_line",
            Category::MultiLine => "multi_line",
            Category::Symbol => "symbol",
            Category::TextHybrid => "text_hybrid",
            Category::Matrix => "matrix",
            Category::Table => "table",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Extracted,
    Enhanced,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntaxErrorKind {
    UnbalancedBraces,
    EnvironmentMismatch,
    DanglingCommand,
    EmptyInput,
}

/// Static syntax defect found by [`validate`]. `position` is the index of
/// the offending token (for structures left open at end of input, the index
/// of the unmatched opener).
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("{kind:?} at token {position}")]
pub struct SyntaxError {
    pub kind: SyntaxErrorKind,
    pub position: usize,
}

impl SyntaxError {
    pub fn new(kind: SyntaxErrorKind, position: usize) -> Self {
        Self { kind, position }
    }
}

/// A LaTeX formula with its token sequence and derived measurements.
///
/// The stored source is whitespace-normalized (runs collapsed to single
/// spaces, ends trimmed), so `detokenize(tokens) == source` holds exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatexFormula {
    source: String,
    tokens: Vec<Token>,
    category: Category,
    char_length: usize,
    token_length: usize,
    provenance: Provenance,
}

impl LatexFormula {
    pub fn new(source: &str, provenance: Provenance) -> Self {
        let normalized = collapse_whitespace(source);
        let tokens = tokenize(&normalized);
        let category = classify(&tokens);
        let char_length = normalized.chars().count();
        let token_length = significant(&tokens).count();
        Self {
            source: normalized,
            tokens,
            category,
            char_length,
            token_length,
            provenance,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn category(&self) -> Category {
        self.category
    }

    /// Character count of the whitespace-normalized source.
    pub fn char_length(&self) -> usize {
        self.char_length
    }

    /// Count of non-whitespace tokens.
    pub fn token_length(&self) -> usize {
        self.token_length
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn validate(&self) -> Result<(), SyntaxError> {
        validate(&self.tokens)
    }

    /// De-styled copy (see [`normalize_style`]); provenance is kept.
    pub fn normalized(&self) -> LatexFormula {
        let tokens = normalize_style(&self.tokens);
        LatexFormula::new(&rebuild_source(&tokens), self.provenance)
    }
}

/// Collapse whitespace runs to single spaces and trim the ends.
pub fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_ws = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            in_ws = true;
        } else {
            if in_ws && !out.is_empty() {
                out.push(' ');
            }
            in_ws = false;
            out.push(ch);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse_whitespace_examples() {
        assert_eq!(collapse_whitespace("  a  b\t\nc "), "a b c");
        assert_eq!(collapse_whitespace(""), "");
        assert_eq!(collapse_whitespace("   "), "");
    }

    #[test]
    fn formula_lengths_are_consistent() {
        let f = LatexFormula::new("  x +  y ", Provenance::Extracted);
        assert_eq!(f.source(), "x + y");
        assert_eq!(f.char_length(), 5);
        assert_eq!(f.token_length(), 3);
    }

    #[test]
    fn env_name_extraction() {
        let t = Token::new(TokenKind::EnvBegin, "\\begin{pmatrix}");
        assert_eq!(t.env_name(), Some("pmatrix"));
        let s = Token::new(TokenKind::Symbol, "x");
        assert_eq!(s.env_name(), None);
    }

    #[test]
    fn reclassification_is_idempotent() {
        for src in ["x+y", "\\begin{pmatrix} a \\\\ b \\end{pmatrix}", "\\phi"] {
            let f = LatexFormula::new(src, Provenance::Extracted);
            let again = LatexFormula::new(f.source(), f.provenance());
            assert_eq!(f.category(), again.category());
        }
    }
}
