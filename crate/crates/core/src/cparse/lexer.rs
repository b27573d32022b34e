//! Tokenizer for C sources.
//!
//! Preprocessor directives are dropped (with their line continuations) and
//! comments are collected separately so documentation can be attached to the
//! declarations that follow them.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokKind {
    Ident,
    Number,
    Str,
    Char,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokKind,
    pub text: String,
    pub line: u32,
    /// Byte offsets into the source.
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn is(&self, text: &str) -> bool {
        self.text == text
    }

    pub fn is_ident(&self) -> bool {
        self.kind == TokKind::Ident
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comment {
    pub text: String,
    pub start_line: u32,
    pub end_line: u32,
}

#[derive(Debug, Default, Clone)]
pub struct Lexed {
    pub tokens: Vec<Token>,
    pub comments: Vec<Comment>,
}

const PUNCT3: [&str; 3] = ["<<=", ">>=", "..."];
const PUNCT2: [&str; 19] = [
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=",
];

pub fn lex(src: &str) -> Lexed {
    let bytes = src.as_bytes();
    let mut out = Lexed::default();
    let mut i = 0;
    let mut line: u32 = 1;
    // true while only whitespace has been seen since the last newline
    let mut line_start = true;

    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'\n' => {
                line += 1;
                line_start = true;
                i += 1;
            }
            b' ' | b'\t' | b'\r' | 0x0c | 0x0b => i += 1,
            b'\\' if bytes.get(i + 1) == Some(&b'\n') => {
                line += 1;
                i += 2;
            }
            b'#' if line_start => {
                // directive: skip to end of logical line
                while i < bytes.len() && bytes[i] != b'\n' {
                    if bytes[i] == b'\\' && bytes.get(i + 1) == Some(&b'\n') {
                        line += 1;
                        i += 2;
                        continue;
                    }
                    if bytes[i] == b'/' && bytes.get(i + 1) == Some(&b'*') {
                        let (ni, nl) = skip_block_comment(bytes, i, line);
                        i = ni;
                        line = nl;
                        continue;
                    }
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                let start = i;
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                out.comments.push(Comment {
                    text: src[start..i].to_string(),
                    start_line: line,
                    end_line: line,
                });
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                let start = i;
                let start_line = line;
                let (ni, nl) = skip_block_comment(bytes, i, line);
                i = ni;
                line = nl;
                out.comments.push(Comment {
                    text: src[start..i].to_string(),
                    start_line,
                    end_line: line,
                });
            }
            b'"' | b'\'' => {
                line_start = false;
                let start = i;
                let start_line = line;
                i += 1;
                while i < bytes.len() && bytes[i] != c {
                    if bytes[i] == b'\\' {
                        if bytes.get(i + 1) == Some(&b'\n') {
                            line += 1;
                        }
                        i += 2;
                        continue;
                    }
                    if bytes[i] == b'\n' {
                        // unterminated literal; stop at the newline
                        break;
                    }
                    i += 1;
                }
                i = (i + 1).min(bytes.len());
                out.tokens.push(Token {
                    kind: if c == b'"' { TokKind::Str } else { TokKind::Char },
                    text: src[start..i].to_string(),
                    line: start_line,
                    start,
                    end: i,
                });
            }
            _ if c == b'_' || c.is_ascii_alphabetic() => {
                line_start = false;
                let start = i;
                while i < bytes.len() && (bytes[i] == b'_' || bytes[i].is_ascii_alphanumeric()) {
                    i += 1;
                }
                // string prefixes: L"..", u8"..", etc.
                if i < bytes.len() && (bytes[i] == b'"' || bytes[i] == b'\'') {
                    let prefix = &src[start..i];
                    if matches!(prefix, "L" | "u" | "U" | "u8") {
                        continue_literal(src, &mut out, &mut i, &mut line, start);
                        continue;
                    }
                }
                out.tokens.push(Token {
                    kind: TokKind::Ident,
                    text: src[start..i].to_string(),
                    line,
                    start,
                    end: i,
                });
            }
            _ if c.is_ascii_digit()
                || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) =>
            {
                line_start = false;
                let start = i;
                i += 1;
                while i < bytes.len() {
                    let b = bytes[i];
                    if b.is_ascii_alphanumeric() || b == b'.' || b == b'_' {
                        i += 1;
                    } else if (b == b'+' || b == b'-')
                        && matches!(bytes[i - 1], b'e' | b'E' | b'p' | b'P')
                    {
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.tokens.push(Token {
                    kind: TokKind::Number,
                    text: src[start..i].to_string(),
                    line,
                    start,
                    end: i,
                });
            }
            _ => {
                line_start = false;
                let start = i;
                let rest = &src[i..];
                let len = PUNCT3
                    .iter()
                    .find(|p| rest.starts_with(**p))
                    .map(|p| p.len())
                    .or_else(|| PUNCT2.iter().find(|p| rest.starts_with(**p)).map(|p| p.len()))
                    .unwrap_or_else(|| rest.chars().next().map_or(1, char::len_utf8));
                i += len;
                out.tokens.push(Token {
                    kind: TokKind::Punct,
                    text: src[start..i].to_string(),
                    line,
                    start,
                    end: i,
                });
            }
        }
    }
    out
}

fn continue_literal(src: &str, out: &mut Lexed, i: &mut usize, line: &mut u32, start: usize) {
    let bytes = src.as_bytes();
    let quote = bytes[*i];
    *i += 1;
    while *i < bytes.len() && bytes[*i] != quote && bytes[*i] != b'\n' {
        if bytes[*i] == b'\\' {
            *i += 1;
        }
        *i += 1;
    }
    *i = (*i + 1).min(bytes.len());
    out.tokens.push(Token {
        kind: if quote == b'"' { TokKind::Str } else { TokKind::Char },
        text: src[start..*i].to_string(),
        line: *line,
        start,
        end: *i,
    });
}

fn skip_block_comment(bytes: &[u8], mut i: usize, mut line: u32) -> (usize, u32) {
    i += 2;
    while i < bytes.len() {
        if bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/') {
            return (i + 2, line);
        }
        if bytes[i] == b'\n' {
            line += 1;
        }
        i += 1;
    }
    (i, line)
}

/// Strips comment markers and leading `*` gutters, returning the prose.
pub fn comment_prose(raw: &str) -> String {
    let body = if let Some(rest) = raw.strip_prefix("/*") {
        rest.strip_suffix("*/").unwrap_or(rest)
    } else {
        raw
    };
    let mut lines = Vec::new();
    for l in body.lines() {
        let t = l.trim();
        let t = t.trim_start_matches("///").trim_start_matches("//!").trim_start_matches("//");
        let t = t.trim_start_matches('*').trim_start_matches('!').trim_start_matches('<');
        lines.push(t.trim().to_string());
    }
    while lines.first().is_some_and(String::is_empty) {
        lines.remove(0);
    }
    while lines.last().is_some_and(String::is_empty) {
        lines.pop();
    }
    lines.join("\n")
}
