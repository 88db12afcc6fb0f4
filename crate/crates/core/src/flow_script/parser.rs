use super::{
    is_identifier, Call, ScriptAst, ScriptError, Statement, ValueExpr, INDENT_WIDTH, KEYWORDS,
    MAX_LOOP_DEPTH,
};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Eq,
    Colon,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number(n) => format!("number {n}"),
            Tok::Str(_) => "string".to_string(),
            Tok::LParen => "`(`".to_string(),
            Tok::RParen => "`)`".to_string(),
            Tok::LBracket => "`[`".to_string(),
            Tok::RBracket => "`]`".to_string(),
            Tok::Comma => "`,`".to_string(),
            Tok::Dot => "`.`".to_string(),
            Tok::Eq => "`=`".to_string(),
            Tok::Colon => "`:`".to_string(),
        }
    }
}

/// One significant source line: indentation and its tokens with 1-based columns.
struct Line {
    number: usize,
    indent: usize,
    len: usize,
    tokens: Vec<(Tok, usize)>,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> ScriptError {
    ScriptError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

/// Parse flow-script source into an AST.
pub fn parse_script(text: &str) -> Result<ScriptAst, ScriptError> {
    let mut lines = Vec::new();
    for (idx, raw) in text.split('\n').enumerate() {
        if let Some(line) = lex_line(idx + 1, raw.strip_suffix('\r').unwrap_or(raw))? {
            lines.push(line);
        }
    }
    let mut cursor = 0;
    let statements = parse_block(&lines, &mut cursor, 0)?;
    debug_assert_eq!(cursor, lines.len());
    Ok(ScriptAst { statements })
}

fn parse_block(lines: &[Line], cursor: &mut usize, level: usize) -> Result<Vec<Statement>, ScriptError> {
    let expected = level * INDENT_WIDTH;
    let mut out = Vec::new();
    while let Some(line) = lines.get(*cursor) {
        if line.indent < expected {
            break;
        }
        if line.indent > expected {
            return Err(ScriptError::BadIndent {
                line: line.number,
                col: 1,
                message: format!("expected {expected} spaces of indentation, found {}", line.indent),
            });
        }
        *cursor += 1;
        let mut p = LineParser { line, pos: 0 };
        let stmt = match p.peek() {
            Some(Tok::Ident(kw)) if kw == "for" => {
                let for_col = p.col();
                if level + 1 > MAX_LOOP_DEPTH {
                    return Err(ScriptError::DepthExceeded {
                        line: line.number,
                        col: for_col,
                    });
                }
                let (var, values) = p.for_header()?;
                let body_start = *cursor;
                let has_body = lines
                    .get(body_start)
                    .is_some_and(|next| next.indent > expected);
                if !has_body {
                    return Err(ScriptError::BadIndent {
                        line: line.number,
                        col: line.len.max(1),
                        message: "expected an indented loop body".to_string(),
                    });
                }
                let body = parse_block(lines, cursor, level + 1)?;
                Statement::ForLoop { var, values, body }
            }
            _ => p.simple_statement()?,
        };
        out.push(stmt);
    }
    Ok(out)
}

struct LineParser<'a> {
    line: &'a Line,
    pos: usize,
}

impl LineParser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.line.tokens.get(self.pos).map(|(t, _)| t)
    }

    /// Column of the next token, or the last column of the line at end.
    fn col(&self) -> usize {
        self.line
            .tokens
            .get(self.pos)
            .map(|(_, c)| *c)
            .unwrap_or(self.line.len.max(1))
    }

    fn err(&self, message: impl Into<String>) -> ScriptError {
        syntax(self.line.number, self.col(), message)
    }

    fn unexpected(&self, wanted: &str) -> ScriptError {
        match self.peek() {
            Some(tok) => self.err(format!("expected {wanted}, found {}", tok.describe())),
            None => self.err(format!("expected {wanted}, found end of line")),
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ScriptError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(&tok.describe()))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ScriptError> {
        match self.peek() {
            Some(Tok::Ident(name)) if !KEYWORDS.contains(&name.as_str()) => {
                let name = name.clone();
                self.pos += 1;
                Ok(name)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ScriptError> {
        match self.peek() {
            Some(Tok::Ident(name)) if name == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.unexpected(&format!("`{kw}`"))),
        }
    }

    fn finish(&self) -> Result<(), ScriptError> {
        match self.peek() {
            None => Ok(()),
            Some(tok) => Err(self.err(format!("unexpected {} after statement", tok.describe()))),
        }
    }

    fn for_header(&mut self) -> Result<(String, Vec<ValueExpr>), ScriptError> {
        self.keyword("for")?;
        let var = self.ident("loop variable")?;
        self.keyword("in")?;
        if self.peek() != Some(&Tok::LBracket) {
            return Err(self.unexpected("`[`"));
        }
        let values = match self.value()? {
            ValueExpr::ListOf(items) => items,
            _ => unreachable!("list literal"),
        };
        self.expect(Tok::Colon)?;
        self.finish()?;
        Ok((var, values))
    }

    fn simple_statement(&mut self) -> Result<Statement, ScriptError> {
        let name = self.ident("statement")?;
        let stmt = match self.peek() {
            Some(Tok::Dot) => {
                self.pos += 1;
                let method = self.ident("method name")?;
                self.expect(Tok::LParen)?;
                let mut call = Call::new(name, method);
                if self.peek() != Some(&Tok::RParen) {
                    loop {
                        let key_col = self.col();
                        let key = self.ident("keyword argument name")?;
                        if call.kwargs.iter().any(|(k, _)| *k == key) {
                            return Err(syntax(
                                self.line.number,
                                key_col,
                                format!("duplicate keyword argument `{key}`"),
                            ));
                        }
                        self.expect(Tok::Eq)?;
                        let value = self.value()?;
                        call.kwargs.push((key, value));
                        match self.peek() {
                            Some(Tok::Comma) => self.pos += 1,
                            Some(Tok::RParen) => break,
                            _ => return Err(self.unexpected("`,` or `)`")),
                        }
                    }
                }
                self.expect(Tok::RParen)?;
                Statement::Call(call)
            }
            Some(Tok::Eq) => {
                self.pos += 1;
                let value = self.value()?;
                Statement::Assign { name, value }
            }
            _ => return Err(self.unexpected("`.` or `=`")),
        };
        self.finish()?;
        Ok(stmt)
    }

    fn value(&mut self) -> Result<ValueExpr, ScriptError> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::Number(n)) => {
                self.pos += 1;
                Ok(ValueExpr::Number(n))
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(ValueExpr::Str(s))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "True" => Ok(ValueExpr::Bool(true)),
                    "False" => Ok(ValueExpr::Bool(false)),
                    "for" | "in" => Err(syntax(self.line.number, col, format!("keyword `{name}` is not a value"))),
                    _ => Ok(ValueExpr::VarRef(name)),
                }
            }
            Some(Tok::LBracket) => {
                self.pos += 1;
                let mut items = Vec::new();
                if self.peek() == Some(&Tok::RBracket) {
                    self.pos += 1;
                    return Ok(ValueExpr::ListOf(items));
                }
                loop {
                    items.push(self.value()?);
                    match self.peek() {
                        Some(Tok::Comma) => self.pos += 1,
                        Some(Tok::RBracket) => {
                            self.pos += 1;
                            break;
                        }
                        _ => return Err(self.unexpected("`,` or `]`")),
                    }
                }
                Ok(ValueExpr::ListOf(items))
            }
            _ => Err(self.unexpected("value")),
        }
    }
}

fn lex_line(number: usize, raw: &str) -> Result<Option<Line>, ScriptError> {
    let chars: Vec<char> = raw.chars().collect();
    let mut i = 0;
    while i < chars.len() && chars[i] == ' ' {
        i += 1;
    }
    let indent = i;
    let rest_blank = chars[i..].iter().all(|c| c.is_whitespace());
    if rest_blank || chars[i] == '#' {
        return Ok(None);
    }
    if chars[i].is_whitespace() {
        return Err(ScriptError::BadIndent {
            line: number,
            col: i + 1,
            message: "indentation must use spaces only".to_string(),
        });
    }
    if indent % INDENT_WIDTH != 0 {
        return Err(ScriptError::BadIndent {
            line: number,
            col: i + 1,
            message: format!("indentation of {indent} spaces is not a multiple of {INDENT_WIDTH}"),
        });
    }

    let mut tokens = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            ' ' | '\t' => i += 1,
            '#' => break,
            '(' | ')' | '[' | ']' | ',' | '.' | '=' | ':' => {
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    ',' => Tok::Comma,
                    '.' => Tok::Dot,
                    '=' => Tok::Eq,
                    _ => Tok::Colon,
                };
                tokens.push((tok, col));
                i += 1;
            }
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None => return Err(ScriptError::UnterminatedString { line: number, col }),
                        Some('"') => break,
                        Some('\\') => {
                            let escaped = match chars.get(j + 1) {
                                Some('"') => '"',
                                Some('\\') => '\\',
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some('r') => '\r',
                                None => return Err(ScriptError::UnterminatedString { line: number, col }),
                                Some(other) => {
                                    return Err(syntax(number, j + 1, format!("unknown escape `\\{other}`")))
                                }
                            };
                            s.push(escaped);
                            j += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            j += 1;
                        }
                    }
                }
                tokens.push((Tok::Str(s), col));
                i = j + 1;
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                i += 1;
                while chars.get(i).is_some_and(|d| d.is_ascii_digit()) {
                    i += 1;
                }
                if chars.get(i) == Some(&'.') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                    i += 1;
                    while chars.get(i).is_some_and(|d| d.is_ascii_digit()) {
                        i += 1;
                    }
                }
                if matches!(chars.get(i), Some('e' | 'E')) {
                    let mut j = i + 1;
                    if matches!(chars.get(j), Some('+' | '-')) {
                        j += 1;
                    }
                    if chars.get(j).is_some_and(|d| d.is_ascii_digit()) {
                        i = j;
                        while chars.get(i).is_some_and(|d| d.is_ascii_digit()) {
                            i += 1;
                        }
                    }
                }
                let literal: String = chars[start..i].iter().collect();
                let value: f64 = literal
                    .parse()
                    .map_err(|_| syntax(number, col, format!("invalid number `{literal}`")))?;
                if !value.is_finite() {
                    return Err(syntax(number, col, format!("number `{literal}` is out of range")));
                }
                tokens.push((Tok::Number(value), col));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while chars.get(i).is_some_and(|d| d.is_ascii_alphanumeric() || *d == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                debug_assert!(is_identifier(&word) || KEYWORDS.contains(&word.as_str()));
                tokens.push((Tok::Ident(word), col));
            }
            other => return Err(syntax(number, col, format!("unexpected character `{other}`"))),
        }
    }
    Ok(Some(Line {
        number,
        indent,
        len: chars.len(),
        tokens,
    }))
}
