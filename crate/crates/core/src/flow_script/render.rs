use super::{ScriptAst, Statement, ValueExpr, INDENT_WIDTH};

/// Render an AST as canonical source: one statement per line, no trailing newline.
pub fn render_script(ast: &ScriptAst) -> String {
    let mut lines = Vec::new();
    render_block(&ast.statements, 0, &mut lines);
    lines.join("\n")
}

fn render_block(stmts: &[Statement], level: usize, out: &mut Vec<String>) {
    let pad = " ".repeat(level * INDENT_WIDTH);
    for stmt in stmts {
        match stmt {
            Statement::Call(call) => {
                let args: Vec<String> = call
                    .kwargs
                    .iter()
                    .map(|(k, v)| format!("{k}={}", render_value(v)))
                    .collect();
                out.push(format!("{pad}{}.{}({})", call.receiver, call.method, args.join(", ")));
            }
            Statement::Assign { name, value } => {
                out.push(format!("{pad}{name} = {}", render_value(value)));
            }
            Statement::ForLoop { var, values, body } => {
                let items: Vec<String> = values.iter().map(render_value).collect();
                out.push(format!("{pad}for {var} in [{}]:", items.join(", ")));
                render_block(body, level + 1, out);
            }
        }
    }
}

pub fn render_value(value: &ValueExpr) -> String {
    match value {
        ValueExpr::Number(n) => render_number(*n),
        ValueExpr::Str(s) => {
            let mut out = String::with_capacity(s.len() + 2);
            out.push('"');
            for c in s.chars() {
                match c {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    '\r' => out.push_str("\\r"),
                    c => out.push(c),
                }
            }
            out.push('"');
            out
        }
        ValueExpr::Bool(true) => "True".to_string(),
        ValueExpr::Bool(false) => "False".to_string(),
        ValueExpr::ListOf(items) => {
            let items: Vec<String> = items.iter().map(render_value).collect();
            format!("[{}]", items.join(", "))
        }
        ValueExpr::VarRef(name) => name.clone(),
    }
}

/// Shortest text that parses back to the same `f64`.
fn render_number(n: f64) -> String {
    let magnitude = n.abs();
    if magnitude != 0.0 && !(1e-5..1e16).contains(&magnitude) {
        // `{:?}` switches to exponent notation at these magnitudes.
        format!("{n:?}")
    } else {
        format!("{n}")
    }
}
