//! Static analysis over token sequences: syntax validation, category
//! classification, and repetition detection.

use super::{significant, SyntaxError, SyntaxErrorKind, Token, TokenKind};

/// Commands that require a following argument; a formula ending in one of
/// these cannot render.
const ARG_COMMANDS: &[&str] = &[
    "\\frac",
    "\\dfrac",
    "\\tfrac",
    "\\cfrac",
    "\\binom",
    "\\dbinom",
    "\\tbinom",
    "\\sqrt",
    "\\tilde",
    "\\widetilde",
    "\\hat",
    "\\widehat",
    "\\bar",
    "\\overline",
    "\\underline",
    "\\dot",
    "\\ddot",
    "\\vec",
    "\\check",
    "\\breve",
    "\\acute",
    "\\grave",
    "\\mathring",
    "\\text",
    "\\mbox",
    "\\textrm",
    "\\textbf",
    "\\textit",
    "\\texttt",
    "\\textsf",
    "\\emph",
    "\\hbox",
    "\\mathbf",
    "\\boldsymbol",
    "\\mathit",
    "\\mathrm",
    "\\mathcal",
    "\\mathbb",
    "\\mathfrak",
    "\\mathsf",
    "\\mathtt",
    "\\mathscr",
    "\\operatorname",
    "\\overbrace",
    "\\underbrace",
    "\\overset",
    "\\underset",
    "\\stackrel",
    "\\phantom",
    "\\vphantom",
    "\\hphantom",
    "\\substack",
    "\\pmb",
    "\\bm",
    "\\overrightarrow",
    "\\overleftarrow",
    "\\boxed",
    "\\xrightarrow",
    "\\xleftarrow",
    "\\not",
    "\\begin",
    "\\end",
];

/// Relation and operator lexemes. Their presence disqualifies a short
/// formula from the Symbol category.
const OPERATORS: &[&str] = &[
    "=",
    "+",
    "-",
    "<",
    ">",
    "/",
    "*",
    "|",
    "\\le",
    "\\leq",
    "\\ge",
    "\\geq",
    "\\ne",
    "\\neq",
    "\\prec",
    "\\succ",
    "\\preceq",
    "\\succeq",
    "\\ll",
    "\\gg",
    "\\sim",
    "\\simeq",
    "\\approx",
    "\\equiv",
    "\\cong",
    "\\propto",
    "\\times",
    "\\cdot",
    "\\ast",
    "\\star",
    "\\pm",
    "\\mp",
    "\\div",
    "\\oplus",
    "\\ominus",
    "\\otimes",
    "\\oslash",
    "\\odot",
    "\\cup",
    "\\cap",
    "\\vee",
    "\\wedge",
    "\\setminus",
    "\\to",
    "\\rightarrow",
    "\\leftarrow",
    "\\Rightarrow",
    "\\Leftarrow",
    "\\leftrightarrow",
    "\\Leftrightarrow",
    "\\mapsto",
    "\\implies",
    "\\iff",
    "\\in",
    "\\ni",
    "\\notin",
    "\\subset",
    "\\supset",
    "\\subseteq",
    "\\supseteq",
    "\\sum",
    "\\prod",
    "\\coprod",
    "\\int",
    "\\iint",
    "\\iiint",
    "\\oint",
    "\\bigcup",
    "\\bigcap",
    "\\bigoplus",
    "\\bigotimes",
    "\\lim",
    "\\limsup",
    "\\liminf",
    "\\max",
    "\\min",
    "\\sup",
    "\\inf",
    "\\mid",
    "\\parallel",
    "\\perp",
    "\\vdash",
    "\\models",
];

pub fn is_arg_command(tok: &Token) -> bool {
    tok.kind == TokenKind::Command && ARG_COMMANDS.contains(&tok.text.as_str())
}

fn is_operator(tok: &Token) -> bool {
    matches!(tok.kind, TokenKind::Symbol | TokenKind::Command)
        && OPERATORS.contains(&tok.text.as_str())
}

enum Opener<'a> {
    Brace(usize),
    Env(usize, &'a str),
}

/// Check group balance, environment pairing, and trailing argument-taking
/// commands. Returns the first error in token order; for structures left
/// open at end of input the reported position is the unmatched opener.
pub fn validate(tokens: &[Token]) -> Result<(), SyntaxError> {
    if significant(tokens).next().is_none() {
        return Err(SyntaxError::new(SyntaxErrorKind::EmptyInput, 0));
    }

    let mut stack: Vec<Opener> = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        match tok.kind {
            TokenKind::GroupOpen => stack.push(Opener::Brace(i)),
            TokenKind::GroupClose => match stack.pop() {
                Some(Opener::Brace(_)) => {}
                _ => return Err(SyntaxError::new(SyntaxErrorKind::UnbalancedBraces, i)),
            },
            TokenKind::EnvBegin => stack.push(Opener::Env(i, tok.env_name().unwrap_or_default())),
            TokenKind::EnvEnd => {
                let name = tok.env_name().unwrap_or_default();
                match stack.pop() {
                    Some(Opener::Env(_, open_name)) if open_name == name => {}
                    _ => return Err(SyntaxError::new(SyntaxErrorKind::EnvironmentMismatch, i)),
                }
            }
            _ => {}
        }
    }

    // Errors discovered at end of input: pick the earliest position.
    let mut at_end: Option<SyntaxError> = None;
    if let Some(opener) = stack.first() {
        at_end = Some(match opener {
            Opener::Brace(i) => SyntaxError::new(SyntaxErrorKind::UnbalancedBraces, *i),
            Opener::Env(i, _) => SyntaxError::new(SyntaxErrorKind::EnvironmentMismatch, *i),
        });
    }
    if let Some((i, _)) = tokens
        .iter()
        .enumerate()
        .rev()
        .find(|(_, t)| !t.is_whitespace())
        .filter(|(_, t)| is_arg_command(t))
    {
        let dangling = SyntaxError::new(SyntaxErrorKind::DanglingCommand, i);
        at_end = Some(match at_end {
            Some(e) if e.position <= i => e,
            _ => dangling,
        });
    }
    match at_end {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

use super::Category;

const MATRIX_ENVS: &[&str] = &[
    "matrix", "pmatrix", "bmatrix", "vmatrix", "Vmatrix", "cases",
];
const MULTILINE_ENVS: &[&str] = &["aligned", "align", "gathered", "split"];
const TEXT_GROUP_COMMANDS: &[&str] = &["\\text", "\\mbox", "\\textrm"];

/// Per-environment-instance facts gathered in one pass.
struct EnvFacts {
    name: String,
    has_hline: bool,
    has_linebreak: bool,
}

/// Assign exactly one category. Total and deterministic; priority order is
/// Table > Matrix > MultiLine > TextHybrid > Symbol > SingleLine.
pub fn classify(tokens: &[Token]) -> Category {
    let mut envs: Vec<EnvFacts> = Vec::new();
    let mut open_envs: Vec<usize> = Vec::new();
    let mut brace_depth = 0usize;
    let mut top_level_break = false;

    for tok in tokens {
        match tok.kind {
            TokenKind::GroupOpen => brace_depth += 1,
            TokenKind::GroupClose => brace_depth = brace_depth.saturating_sub(1),
            TokenKind::EnvBegin => {
                envs.push(EnvFacts {
                    name: tok
                        .env_name()
                        .unwrap_or_default()
                        .trim_end_matches('*')
                        .to_string(),
                    has_hline: false,
                    has_linebreak: false,
                });
                open_envs.push(envs.len() - 1);
            }
            TokenKind::EnvEnd => {
                open_envs.pop();
            }
            TokenKind::LineBreak => {
                if let Some(&idx) = open_envs.last() {
                    envs[idx].has_linebreak = true;
                } else if brace_depth == 0 {
                    top_level_break = true;
                }
            }
            TokenKind::Command if tok.text == "\\hline" => {
                if let Some(&idx) = open_envs.last() {
                    envs[idx].has_hline = true;
                }
            }
            _ => {}
        }
    }

    let is_table = envs
        .iter()
        .any(|e| e.name == "tabular" || (e.name == "array" && e.has_hline));
    if is_table {
        return Category::Table;
    }

    let is_matrix = envs.iter().any(|e| {
        MATRIX_ENVS.contains(&e.name.as_str())
            || (e.name == "array" && !e.has_hline && e.has_linebreak)
    });
    if is_matrix {
        return Category::Matrix;
    }

    let is_multiline = top_level_break
        || envs
            .iter()
            .any(|e| MULTILINE_ENVS.contains(&e.name.as_str()));
    if is_multiline {
        return Category::MultiLine;
    }

    if has_text_hybrid_group(tokens) {
        return Category::TextHybrid;
    }

    let sig: Vec<&Token> = significant(tokens).collect();
    if sig.len() <= 4 && !sig.iter().any(|t| is_operator(t)) {
        return Category::Symbol;
    }

    Category::SingleLine
}

/// True when some `\text`/`\mbox`/`\textrm` group contains at least two
/// alphabetic words.
fn has_text_hybrid_group(tokens: &[Token]) -> bool {
    let mut i = 0;
    while i < tokens.len() {
        let tok = &tokens[i];
        if tok.kind == TokenKind::Command && TEXT_GROUP_COMMANDS.contains(&tok.text.as_str()) {
            let mut j = i + 1;
            while j < tokens.len() && tokens[j].is_whitespace() {
                j += 1;
            }
            if j < tokens.len() && tokens[j].kind == TokenKind::GroupOpen {
                let mut depth = 1;
                let mut words = 0;
                let mut k = j + 1;
                while k < tokens.len() && depth > 0 {
                    match tokens[k].kind {
                        TokenKind::GroupOpen => depth += 1,
                        TokenKind::GroupClose => depth -= 1,
                        TokenKind::Text if tokens[k].text.chars().any(|c| c.is_alphabetic()) => {
                            words += 1;
                        }
                        _ => {}
                    }
                    k += 1;
                }
                if words >= 2 {
                    return true;
                }
                i = k;
                continue;
            }
        }
        i += 1;
    }
    false
}

/// True iff some contiguous n-gram (1 <= n <= 8) of non-whitespace lexemes
/// repeats back-to-back more than `max_repeats` times.
///
/// Worst case O(8 * len^2) with early exit. Monotone in `max_repeats`:
/// flagged at k implies flagged at every k' < k.
pub fn detect_repetition(tokens: &[Token], max_repeats: usize) -> bool {
    assert!(max_repeats >= 2, "max_repeats must be >= 2");
    let lex: Vec<&str> = significant(tokens).map(|t| t.text.as_str()).collect();
    for n in 1..=8usize.min(lex.len()) {
        for start in 0..lex.len().saturating_sub(n) {
            let mut repeats = 1;
            let mut pos = start + n;
            while pos + n <= lex.len() && lex[pos..pos + n] == lex[start..start + n] {
                repeats += 1;
                if repeats > max_repeats {
                    return true;
                }
                pos += n;
            }
        }
    }
    false
}
