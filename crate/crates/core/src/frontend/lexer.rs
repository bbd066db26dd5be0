use super::ParseError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Punct(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of file".into(),
        }
    }
}

// Longest operators first so that prefixes do not shadow them.
const PUNCT: &[&str] = &[
    "<->", ":=", "->", "!=", "(", ")", "{", "}", "[", "]", ",", ":", ".", "=", "!", "&", "|", "*",
];

pub fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    for (lineno, line) in src.lines().enumerate() {
        let line_no = lineno + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            let col = i + 1;
            if c.is_ascii_alphabetic() {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    line: line_no,
                    col,
                });
                continue;
            }
            let rest: String = chars[i..].iter().take(3).collect();
            match PUNCT.iter().find(|p| rest.starts_with(*p)) {
                Some(p) => {
                    out.push(Token {
                        tok: Tok::Punct(p),
                        line: line_no,
                        col,
                    });
                    i += p.len();
                }
                None => {
                    return Err(ParseError {
                        line: line_no,
                        col,
                        message: format!("unexpected character `{c}`"),
                        expected: vec![],
                    })
                }
            }
        }
    }
    let line = src.lines().count().max(1);
    out.push(Token {
        tok: Tok::Eof,
        line,
        col: src.lines().last().map(|l| l.chars().count() + 1).unwrap_or(1),
    });
    Ok(out)
}
