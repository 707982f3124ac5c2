//! Tokenizer for program files. `#` starts a line comment.

use super::LangError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    /// Numeric literal, kept as raw text; levels are parsed into exact
    /// rationals at the grammar site, domain values stay raw tokens.
    Number(String),
    Arrow,
    Plus,
    DoubleBar,
    Eq,
    Dot,
    Comma,
    Semi,
    Slash,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(s) => format!("`{s}`"),
            Tok::Arrow => "`->`".into(),
            Tok::Plus => "`+`".into(),
            Tok::DoubleBar => "`||`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Slash => "`/`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, LangError> {
    let mut tokens = Vec::new();
    let mut chars = src.chars().peekable();
    let mut line = 1usize;
    let mut col = 1usize;

    macro_rules! bump {
        () => {{
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else if c.is_some() {
                col += 1;
            }
            c
        }};
    }

    loop {
        let pos = Pos { line, col };
        let Some(&c) = chars.peek() else {
            tokens.push(Token { tok: Tok::Eof, pos });
            return Ok(tokens);
        };
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '#' {
            while let Some(&c) = chars.peek() {
                if c == '\n' {
                    break;
                }
                bump!();
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    s.push(c);
                    bump!();
                } else {
                    break;
                }
            }
            tokens.push(Token {
                tok: Tok::Ident(s),
                pos,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let mut s = String::new();
            let mut seen_dot = false;
            while let Some(&c) = chars.peek() {
                if c.is_ascii_digit() || (c == '.' && !seen_dot) {
                    seen_dot |= c == '.';
                    s.push(c);
                    bump!();
                } else {
                    break;
                }
            }
            if s.ends_with('.') {
                return Err(LangError::Parse {
                    line: pos.line,
                    col: pos.col,
                    message: format!("malformed number `{s}`"),
                });
            }
            tokens.push(Token {
                tok: Tok::Number(s),
                pos,
            });
            continue;
        }
        bump!();
        let tok = match c {
            '-' => {
                if chars.peek() == Some(&'>') {
                    bump!();
                    Tok::Arrow
                } else {
                    return Err(LangError::Parse {
                        line: pos.line,
                        col: pos.col,
                        message: "expected `->`".to_string(),
                    });
                }
            }
            '|' => {
                if chars.peek() == Some(&'|') {
                    bump!();
                    Tok::DoubleBar
                } else {
                    return Err(LangError::Parse {
                        line: pos.line,
                        col: pos.col,
                        message: "expected `||`".to_string(),
                    });
                }
            }
            '+' => Tok::Plus,
            '=' => Tok::Eq,
            '.' => Tok::Dot,
            ',' => Tok::Comma,
            ';' => Tok::Semi,
            '/' => Tok::Slash,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            other => {
                return Err(LangError::Parse {
                    line: pos.line,
                    col: pos.col,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        tokens.push(Token { tok, pos });
    }
}
