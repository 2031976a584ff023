//! Indentation-aware tokenizer for `.plx` sources.

use crate::ast::Span;
use crate::error::PlxError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    Kw(Keyword),
    Colon,
    Eq,
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Dot,
    At,
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keyword {
    Model,
    Extends,
    With,
    Mate,
    Input,
    Output,
    Import,
    True,
    False,
}

impl Keyword {
    fn from_ident(s: &str) -> Option<Self> {
        Some(match s {
            "model" => Keyword::Model,
            "extends" => Keyword::Extends,
            "with" => Keyword::With,
            "mate" => Keyword::Mate,
            "input" => Keyword::Input,
            "output" => Keyword::Output,
            "import" => Keyword::Import,
            "true" => Keyword::True,
            "false" => Keyword::False,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Keyword::Model => "model",
            Keyword::Extends => "extends",
            Keyword::With => "with",
            Keyword::Mate => "mate",
            Keyword::Input => "input",
            Keyword::Output => "output",
            Keyword::Import => "import",
            Keyword::True => "true",
            Keyword::False => "false",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

/// Splits `text` into tokens. Blank lines and `#` comments are skipped; a
/// logical line ends at a newline unless it is inside parentheses.
pub fn tokenize(unit: &str, text: &str) -> Result<Vec<Token>, PlxError> {
    let mut out = Vec::new();
    let mut indents: Vec<usize> = vec![0];
    let mut depth: i32 = 0;

    for (lineno, raw) in text.split('\n').enumerate() {
        let line_no = lineno as u32 + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let chars: Vec<char> = line.chars().collect();

        let mut i = 0;
        if depth == 0 {
            let mut width = 0usize;
            while i < chars.len() && (chars[i] == ' ' || chars[i] == '\t') {
                if chars[i] == '\t' {
                    return Err(syntax(unit, line_no, i as u32 + 1, "tabs are not allowed for indentation"));
                }
                width += 1;
                i += 1;
            }
            if i == chars.len() || chars[i] == '#' {
                continue;
            }
            let top = *indents.last().unwrap();
            let span = Span::new(line_no, i as u32 + 1);
            if width > top {
                indents.push(width);
                out.push(Token { tok: Tok::Indent, span });
            } else if width < top {
                while width < *indents.last().unwrap() {
                    indents.pop();
                    out.push(Token { tok: Tok::Dedent, span });
                }
                if width != *indents.last().unwrap() {
                    return Err(syntax(unit, line_no, i as u32 + 1, "inconsistent dedent"));
                }
            }
        }

        while i < chars.len() {
            let c = chars[i];
            let span = Span::new(line_no, i as u32 + 1);
            match c {
                ' ' | '\t' => {
                    i += 1;
                }
                '#' => break,
                '"' => {
                    let mut s = String::new();
                    i += 1;
                    loop {
                        if i >= chars.len() {
                            return Err(syntax(unit, line_no, span.col, "unterminated string literal"));
                        }
                        match chars[i] {
                            '"' => {
                                i += 1;
                                break;
                            }
                            '\\' if i + 1 < chars.len() => {
                                let e = chars[i + 1];
                                s.push(match e {
                                    'n' => '\n',
                                    't' => '\t',
                                    other => other,
                                });
                                i += 2;
                            }
                            ch => {
                                s.push(ch);
                                i += 1;
                            }
                        }
                    }
                    out.push(Token { tok: Tok::Str(s), span });
                }
                c if c.is_ascii_digit()
                    || (c == '.' && i + 1 < chars.len() && chars[i + 1].is_ascii_digit()) =>
                {
                    let start = i;
                    while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                        i += 1;
                    }
                    if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                        let mut j = i + 1;
                        if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                            j += 1;
                        }
                        if j < chars.len() && chars[j].is_ascii_digit() {
                            i = j;
                            while i < chars.len() && chars[i].is_ascii_digit() {
                                i += 1;
                            }
                        }
                    }
                    let lit: String = chars[start..i].iter().collect();
                    let v: f64 = lit
                        .parse()
                        .map_err(|_| syntax(unit, line_no, span.col, &format!("malformed number `{lit}`")))?;
                    out.push(Token { tok: Tok::Number(v), span });
                }
                c if c.is_alphabetic() || c == '_' => {
                    let start = i;
                    while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                        i += 1;
                    }
                    let word: String = chars[start..i].iter().collect();
                    let tok = match Keyword::from_ident(&word) {
                        Some(k) => Tok::Kw(k),
                        None => Tok::Ident(word),
                    };
                    out.push(Token { tok, span });
                }
                _ => {
                    let tok = match c {
                        ':' => Tok::Colon,
                        '=' => Tok::Eq,
                        '(' => {
                            depth += 1;
                            Tok::LParen
                        }
                        ')' => {
                            depth -= 1;
                            if depth < 0 {
                                return Err(syntax(unit, line_no, span.col, "unbalanced `)`"));
                            }
                            Tok::RParen
                        }
                        ',' => Tok::Comma,
                        '+' => Tok::Plus,
                        '-' => Tok::Minus,
                        '*' => Tok::Star,
                        '/' => Tok::Slash,
                        '.' => Tok::Dot,
                        '@' => Tok::At,
                        other => {
                            return Err(syntax(unit, line_no, span.col, &format!("unexpected character `{other}`")))
                        }
                    };
                    out.push(Token { tok, span });
                    i += 1;
                }
            }
        }
        if depth == 0 && out.last().map(|t| t.tok != Tok::Newline && t.tok != Tok::Indent && t.tok != Tok::Dedent).unwrap_or(false) {
            out.push(Token { tok: Tok::Newline, span: Span::new(line_no, chars.len() as u32 + 1) });
        }
    }
    let end_line = text.split('\n').count() as u32;
    if depth != 0 {
        return Err(syntax(unit, end_line, 1, "unclosed `(` at end of file"));
    }
    let end = Span::new(end_line + 1, 1);
    while indents.len() > 1 {
        indents.pop();
        out.push(Token { tok: Tok::Dedent, span: end });
    }
    out.push(Token { tok: Tok::Eof, span: end });
    Ok(out)
}

fn syntax(unit: &str, line: u32, col: u32, message: &str) -> PlxError {
    PlxError::Syntax { unit: unit.to_string(), line, col, message: message.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Tok> {
        tokenize("t", src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn indentation_produces_block_tokens() {
        let toks = kinds("model A:\n  x: Real = 1\n");
        assert_eq!(toks[0], Tok::Kw(Keyword::Model));
        assert!(toks.contains(&Tok::Indent));
        assert!(toks.contains(&Tok::Dedent));
        assert_eq!(*toks.last().unwrap(), Tok::Eof);
    }

    #[test]
    fn newlines_inside_parentheses_are_joined() {
        let toks = kinds("model A:\n  mate rigid(a,\n    b)\n");
        let newlines = toks.iter().filter(|t| **t == Tok::Newline).count();
        assert_eq!(newlines, 2);
    }

    #[test]
    fn tabs_are_rejected() {
        let err = tokenize("t", "model A:\n\tx: Real = 1\n").unwrap_err();
        assert!(matches!(err, PlxError::Syntax { line: 2, .. }));
    }

    #[test]
    fn numbers_with_exponents() {
        let toks = kinds("x = 1.5e-3");
        assert!(toks.contains(&Tok::Number(1.5e-3)));
    }
}
