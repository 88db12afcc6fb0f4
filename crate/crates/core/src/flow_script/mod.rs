//! The flow-script DSL: a restricted call-sequence language for driving EDA
//! platform APIs.
//!
//! A script is a newline-separated list of statements. Each statement is a
//! keyword-argument method call on a receiver object, a variable assignment,
//! or a `for` loop over a literal list whose body is indented by exactly four
//! spaces per level:
//!
//! ```text
//! chateda.run_synthesis()
//! chateda.floorplan(core_utilization=0.6)
//! for d in [0.5, 0.6]:
//!     chateda.placement(density=d)
//! ```
//!
//! [`parse_script`] and [`render_script`] are inverses on valid ASTs.

mod parser;
mod render;

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub use parser::parse_script;
pub use render::{render_script, render_value};

/// Maximum number of nested `for` loops.
pub const MAX_LOOP_DEPTH: usize = 2;

/// Spaces per indentation level.
pub const INDENT_WIDTH: usize = 4;

/// Keywords that cannot be used as identifiers.
pub const KEYWORDS: [&str; 4] = ["for", "in", "True", "False"];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptAst {
    pub statements: Vec<Statement>,
}

impl ScriptAst {
    pub fn new(statements: Vec<Statement>) -> Self {
        Self { statements }
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    /// Calls in source order, descending into loop bodies once (no expansion).
    pub fn calls(&self) -> Vec<&Call> {
        fn walk<'a>(stmts: &'a [Statement], out: &mut Vec<&'a Call>) {
            for stmt in stmts {
                match stmt {
                    Statement::Call(call) => out.push(call),
                    Statement::ForLoop { body, .. } => walk(body, out),
                    Statement::Assign { .. } => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.statements, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Call {
    pub receiver: String,
    pub method: String,
    pub kwargs: Vec<(String, ValueExpr)>,
}

impl Call {
    pub fn new(receiver: impl Into<String>, method: impl Into<String>) -> Self {
        Self {
            receiver: receiver.into(),
            method: method.into(),
            kwargs: Vec::new(),
        }
    }

    pub fn with_kwarg(mut self, name: impl Into<String>, value: ValueExpr) -> Self {
        self.kwargs.push((name.into(), value));
        self
    }

    pub fn kwarg(&self, name: &str) -> Option<&ValueExpr> {
        self.kwargs.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Statement {
    Call(Call),
    ForLoop {
        var: String,
        values: Vec<ValueExpr>,
        body: Vec<Statement>,
    },
    Assign {
        name: String,
        value: ValueExpr,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ValueExpr {
    Number(f64),
    Str(String),
    Bool(bool),
    ListOf(Vec<ValueExpr>),
    VarRef(String),
}

impl fmt::Display for ValueExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_value(self))
    }
}

/// A validated flow script: source text paired with its parsed form.
///
/// Construction always goes through the parser, so holding an `EdaScript`
/// means the text is syntactically valid.
#[derive(Debug, Clone, PartialEq)]
pub struct EdaScript {
    source: String,
    ast: ScriptAst,
}

impl EdaScript {
    pub fn parse(source: impl Into<String>) -> Result<Self, ScriptError> {
        let source = source.into();
        let ast = parse_script(&source)?;
        Ok(Self { source, ast })
    }

    pub fn from_ast(ast: ScriptAst) -> Self {
        Self {
            source: render_script(&ast),
            ast,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &ScriptAst {
        &self.ast
    }
}

impl Serialize for EdaScript {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for EdaScript {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let source = String::deserialize(deserializer)?;
        EdaScript::parse(source).map_err(serde::de::Error::custom)
    }
}

/// Parse failure with a 1-based position inside the input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("unterminated string starting at {line}:{col}")]
    UnterminatedString { line: usize, col: usize },
    #[error("bad indentation at {line}:{col}: {message}")]
    BadIndent {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("loop nesting deeper than {MAX_LOOP_DEPTH} at {line}:{col}")]
    DepthExceeded { line: usize, col: usize },
}

impl ScriptError {
    pub fn position(&self) -> (usize, usize) {
        match *self {
            ScriptError::Syntax { line, col, .. }
            | ScriptError::UnterminatedString { line, col }
            | ScriptError::BadIndent { line, col, .. }
            | ScriptError::DepthExceeded { line, col } => (line, col),
        }
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && !KEYWORDS.contains(&s)
}
