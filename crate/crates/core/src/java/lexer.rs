use serde::{Deserialize, Serialize};

use super::JavaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Keyword,
    Identifier,
    Literal,
    Operator,
    Separator,
}

impl TokenKind {
    pub fn name(self) -> &'static str {
        match self {
            TokenKind::Keyword => "keyword",
            TokenKind::Identifier => "identifier",
            TokenKind::Literal => "literal",
            TokenKind::Operator => "operator",
            TokenKind::Separator => "separator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// Byte offsets `[start, end)` into the source.
    pub span: (usize, usize),
}

pub const KEYWORDS: &[&str] = &[
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char", "class", "const",
    "continue", "default", "do", "double", "else", "enum", "extends", "final", "finally", "float",
    "for", "goto", "if", "implements", "import", "instanceof", "int", "interface", "long",
    "native", "new", "package", "private", "protected", "public", "return", "short", "static",
    "strictfp", "super", "switch", "synchronized", "this", "throw", "throws", "transient", "try",
    "void", "volatile", "while",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

// Longest first, so a linear scan implements maximal munch.
const PUNCTUATION: &[(&str, TokenKind)] = &[
    (">>>=", TokenKind::Operator),
    ("<<=", TokenKind::Operator),
    (">>=", TokenKind::Operator),
    (">>>", TokenKind::Operator),
    ("...", TokenKind::Separator),
    ("->", TokenKind::Operator),
    ("::", TokenKind::Separator),
    ("++", TokenKind::Operator),
    ("--", TokenKind::Operator),
    ("&&", TokenKind::Operator),
    ("||", TokenKind::Operator),
    ("==", TokenKind::Operator),
    ("!=", TokenKind::Operator),
    ("<=", TokenKind::Operator),
    (">=", TokenKind::Operator),
    ("+=", TokenKind::Operator),
    ("-=", TokenKind::Operator),
    ("*=", TokenKind::Operator),
    ("/=", TokenKind::Operator),
    ("&=", TokenKind::Operator),
    ("|=", TokenKind::Operator),
    ("^=", TokenKind::Operator),
    ("%=", TokenKind::Operator),
    ("<<", TokenKind::Operator),
    (">>", TokenKind::Operator),
    ("(", TokenKind::Separator),
    (")", TokenKind::Separator),
    ("{", TokenKind::Separator),
    ("}", TokenKind::Separator),
    ("[", TokenKind::Separator),
    ("]", TokenKind::Separator),
    (";", TokenKind::Separator),
    (",", TokenKind::Separator),
    (".", TokenKind::Separator),
    ("@", TokenKind::Separator),
    ("=", TokenKind::Operator),
    (">", TokenKind::Operator),
    ("<", TokenKind::Operator),
    ("!", TokenKind::Operator),
    ("~", TokenKind::Operator),
    ("?", TokenKind::Operator),
    (":", TokenKind::Operator),
    ("+", TokenKind::Operator),
    ("-", TokenKind::Operator),
    ("*", TokenKind::Operator),
    ("/", TokenKind::Operator),
    ("&", TokenKind::Operator),
    ("|", TokenKind::Operator),
    ("^", TokenKind::Operator),
    ("%", TokenKind::Operator),
];

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

fn is_ident_part(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(n)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn eat_while(&mut self, f: impl Fn(char) -> bool) {
        while let Some(c) = self.peek() {
            if !f(c) {
                break;
            }
            self.pos += c.len_utf8();
        }
    }
}

/// Tokenizes Java source with maximal munch, skipping whitespace and comments.
pub fn lex(src: &str) -> Result<Vec<Token>, JavaError> {
    let mut cur = Cursor { src, pos: 0 };
    let mut out = Vec::new();
    while let Some(c) = cur.peek() {
        let start = cur.pos;
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        if cur.rest().starts_with("//") {
            cur.eat_while(|c| c != '\n' && c != '\r');
            continue;
        }
        if cur.rest().starts_with("/*") {
            match cur.rest()[2..].find("*/") {
                Some(i) => cur.pos += 2 + i + 2,
                None => return Err(JavaError::Lex { offset: start }),
            }
            continue;
        }
        let kind = if is_ident_start(c) {
            cur.eat_while(is_ident_part);
            let word = &src[start..cur.pos];
            if is_keyword(word) {
                TokenKind::Keyword
            } else if matches!(word, "true" | "false" | "null") {
                TokenKind::Literal
            } else {
                TokenKind::Identifier
            }
        } else if c.is_ascii_digit() || (c == '.' && cur.peek_at(1).is_some_and(|d| d.is_ascii_digit())) {
            lex_number(&mut cur, start)?;
            TokenKind::Literal
        } else if c == '"' {
            if cur.rest().starts_with("\"\"\"") {
                cur.pos += 3;
                match cur.rest().find("\"\"\"") {
                    Some(i) => cur.pos += i + 3,
                    None => return Err(JavaError::Lex { offset: start }),
                }
            } else {
                lex_quoted(&mut cur, '"', start)?;
            }
            TokenKind::Literal
        } else if c == '\'' {
            lex_quoted(&mut cur, '\'', start)?;
            TokenKind::Literal
        } else {
            let rest = cur.rest();
            match PUNCTUATION.iter().find(|(p, _)| rest.starts_with(p)) {
                Some((p, kind)) => {
                    cur.pos += p.len();
                    *kind
                }
                None => return Err(JavaError::Lex { offset: start }),
            }
        };
        out.push(Token {
            kind,
            text: src[start..cur.pos].to_string(),
            span: (start, cur.pos),
        });
    }
    Ok(out)
}

fn lex_quoted(cur: &mut Cursor<'_>, quote: char, start: usize) -> Result<(), JavaError> {
    cur.bump();
    loop {
        match cur.bump() {
            None | Some('\n') | Some('\r') => return Err(JavaError::Lex { offset: start }),
            Some('\\') => {
                if cur.bump().is_none() {
                    return Err(JavaError::Lex { offset: start });
                }
            }
            Some(c) if c == quote => return Ok(()),
            Some(_) => {}
        }
    }
}

fn lex_number(cur: &mut Cursor<'_>, start: usize) -> Result<(), JavaError> {
    let rest = cur.rest();
    if rest.starts_with("0x") || rest.starts_with("0X") {
        cur.pos += 2;
        cur.eat_while(|c| c.is_ascii_hexdigit() || c == '_');
        if cur.pos == start + 2 {
            return Err(JavaError::Lex { offset: start });
        }
        if matches!(cur.peek(), Some('l' | 'L')) {
            cur.bump();
        }
        return Ok(());
    }
    if rest.starts_with("0b") || rest.starts_with("0B") {
        cur.pos += 2;
        cur.eat_while(|c| c == '0' || c == '1' || c == '_');
        if cur.pos == start + 2 {
            return Err(JavaError::Lex { offset: start });
        }
        if matches!(cur.peek(), Some('l' | 'L')) {
            cur.bump();
        }
        return Ok(());
    }
    cur.eat_while(|c| c.is_ascii_digit() || c == '_');
    let mut is_float = false;
    if cur.peek() == Some('.') {
        let next = cur.peek_at(1);
        let fraction = next.is_some_and(|d| d.is_ascii_digit());
        // `1.` is a float, but `1..` and `1.foo` are not fractions.
        let bare_dot = !fraction && !next.is_some_and(|d| d == '.' || is_ident_start(d));
        if fraction || bare_dot {
            cur.bump();
            cur.eat_while(|c| c.is_ascii_digit() || c == '_');
            is_float = true;
        }
    }
    if matches!(cur.peek(), Some('e' | 'E')) {
        cur.bump();
        if matches!(cur.peek(), Some('+' | '-')) {
            cur.bump();
        }
        let digits_start = cur.pos;
        cur.eat_while(|c| c.is_ascii_digit());
        if cur.pos == digits_start {
            return Err(JavaError::Lex { offset: start });
        }
        is_float = true;
    }
    match cur.peek() {
        Some('f' | 'F' | 'd' | 'D') => {
            cur.bump();
        }
        Some('l' | 'L') if !is_float => {
            cur.bump();
        }
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds_texts(src: &str) -> Vec<(TokenKind, String)> {
        lex(src).unwrap().into_iter().map(|t| (t.kind, t.text)).collect()
    }

    #[test]
    fn return_a_plus_b() {
        use TokenKind::*;
        let got = kinds_texts("return a+b;");
        let want = vec![
            (Keyword, "return".to_string()),
            (Identifier, "a".into()),
            (Operator, "+".into()),
            (Identifier, "b".into()),
            (Separator, ";".into()),
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn empty_input() {
        assert!(lex("").unwrap().is_empty());
        assert!(lex("  \n\t // only a comment\n /* and another */ ").unwrap().is_empty());
    }

    #[test]
    fn unterminated_literals_and_comments() {
        assert_eq!(lex("\"unterminated"), Err(JavaError::Lex { offset: 0 }));
        assert_eq!(lex("x = 'a"), Err(JavaError::Lex { offset: 4 }));
        assert_eq!(lex("a /* open"), Err(JavaError::Lex { offset: 2 }));
        assert_eq!(lex("int #x"), Err(JavaError::Lex { offset: 4 }));
    }

    #[test]
    fn maximal_munch_operators() {
        let texts: Vec<String> = lex("a>>>=b>>c>=d->e...f::g").unwrap().into_iter().map(|t| t.text).collect();
        assert_eq!(texts, ["a", ">>>=", "b", ">>", "c", ">=", "d", "->", "e", "...", "f", "::", "g"]);
    }

    #[test]
    fn number_forms() {
        for lit in ["0", "42L", "0xFFl", "0b1010", "1_000", "3.14", "1.", ".5", "1e10", "2.5e-3f", "7d"] {
            let toks = lex(lit).unwrap();
            assert_eq!(toks.len(), 1, "{lit}");
            assert_eq!(toks[0].kind, TokenKind::Literal);
            assert_eq!(toks[0].text, lit);
        }
        assert_eq!(kinds_texts("a.b.c").len(), 5);
        assert!(lex("1e+").is_err());
    }

    #[test]
    fn strings_with_escapes_and_literal_words() {
        let toks = lex(r#"s = "a\"b" + '\n' + null + true;"#).unwrap();
        assert_eq!(toks[2].text, r#""a\"b""#);
        assert_eq!(toks[4].text, r"'\n'");
        assert_eq!(toks[6].kind, TokenKind::Literal);
        assert_eq!(toks[8].kind, TokenKind::Literal);
    }

    #[test]
    fn spans_are_increasing_and_cover_text() {
        let src = "int f ( ) { return x . size ( ) ; } // tail";
        let toks = lex(src).unwrap();
        for w in toks.windows(2) {
            assert!(w[0].span.1 <= w[1].span.0);
        }
        for t in &toks {
            assert_eq!(&src[t.span.0..t.span.1], t.text);
        }
    }
}
