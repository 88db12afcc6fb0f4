use super::{MethodSpec, ParamSpec, ParamType, PlatformSpec, SpecError, StageSpec, Value};
use crate::flow_script::{parse_script, Statement};

/// First line of every rendered API document.
pub const API_DOC_HEADER: &str = "API DOCUMENT";

/// Human-readable listing of a platform's stages and methods.
///
/// Methods are grouped by stage (in topological stage order) and sorted by
/// name within a stage. The output is line-oriented so that it can be read
/// back with [`parse_api_document`].
pub fn render_api_document(spec: &PlatformSpec) -> String {
    let order = spec
        .stage_order()
        .unwrap_or_else(|_| spec.stages.iter().map(|s| s.name.as_str()).collect());
    let mut out = String::new();
    out.push_str(API_DOC_HEADER);
    out.push('\n');
    out.push_str(&format!("platform: {}\n", spec.platform_id));
    out.push_str(&format!("receiver: {}\n", spec.receiver));
    for name in &order {
        let stage = spec.stage(name).expect("stage from order");
        if stage.requires.is_empty() {
            out.push_str(&format!("stage {name}\n"));
        } else {
            out.push_str(&format!("stage {name} requires {}\n", stage.requires.join(", ")));
        }
    }
    for name in &order {
        let mut methods: Vec<&MethodSpec> = spec.methods_in_stage(name).collect();
        methods.sort_by(|a, b| a.name.cmp(&b.name));
        for method in methods {
            out.push('\n');
            out.push_str(&format!("method {}.{}\n", spec.receiver, method.name));
            out.push_str(&format!("  stage: {}\n", method.stage));
            if let Some(desc) = &method.description {
                out.push_str(&format!("  description: {desc}\n"));
            }
            for param in &method.params {
                out.push_str(&format!("  {}\n", render_param(param)));
            }
        }
    }
    out
}

fn render_param(param: &ParamSpec) -> String {
    let mut line = format!(
        "param {}: {}, {}",
        param.name,
        param.kind.as_str(),
        if param.required { "required" } else { "optional" }
    );
    if let Some(default) = &param.default {
        line.push_str(&format!(", default {default}"));
    }
    if let Some([lo, hi]) = param.range {
        line.push_str(&format!(
            ", range [{}, {}]",
            Value::Number(lo),
            Value::Number(hi)
        ));
    }
    line
}

/// Recover a platform spec from its rendered API document.
pub fn parse_api_document(text: &str) -> Result<PlatformSpec, SpecError> {
    let err = |line: &str, why: &str| SpecError::Parse(format!("api document line `{line}`: {why}"));
    let mut lines = text.lines().map(str::trim_end).skip_while(|l| l.trim() != API_DOC_HEADER);
    if lines.next().is_none() {
        return Err(SpecError::Parse("missing API document header".into()));
    }
    let mut platform_id = None;
    let mut receiver = None;
    let mut stages = Vec::new();
    let mut methods: Vec<MethodSpec> = Vec::new();
    for raw in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("platform: ") {
            platform_id = Some(rest.to_string());
        } else if let Some(rest) = line.strip_prefix("receiver: ") {
            receiver = Some(rest.to_string());
        } else if let Some(rest) = line.strip_prefix("stage ") {
            let (name, requires) = match rest.split_once(" requires ") {
                Some((name, reqs)) => (name, reqs.split(',').map(|r| r.trim().to_string()).collect()),
                None => (rest, Vec::new()),
            };
            stages.push(StageSpec {
                name: name.trim().to_string(),
                requires,
            });
        } else if let Some(rest) = line.strip_prefix("method ") {
            let name = rest.rsplit('.').next().unwrap_or(rest).to_string();
            methods.push(MethodSpec {
                name,
                stage: String::new(),
                description: None,
                params: Vec::new(),
            });
        } else if let Some(rest) = line.strip_prefix("stage: ") {
            let method = methods.last_mut().ok_or_else(|| err(line, "stage outside a method"))?;
            method.stage = rest.to_string();
        } else if let Some(rest) = line.strip_prefix("description: ") {
            let method = methods.last_mut().ok_or_else(|| err(line, "description outside a method"))?;
            method.description = Some(rest.to_string());
        } else if let Some(rest) = line.strip_prefix("param ") {
            let method = methods.last_mut().ok_or_else(|| err(line, "param outside a method"))?;
            method.params.push(parse_param(rest).map_err(|why| err(line, &why))?);
        } else {
            // The document ends at the first line that is not part of it.
            break;
        }
    }
    let spec = PlatformSpec {
        platform_id: platform_id.ok_or_else(|| SpecError::Parse("missing platform line".into()))?,
        receiver: receiver.ok_or_else(|| SpecError::Parse("missing receiver line".into()))?,
        stages,
        methods,
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_param(rest: &str) -> Result<ParamSpec, String> {
    let (name, rest) = rest.split_once(": ").ok_or("missing `:`")?;
    let (kind, rest) = rest.split_once(", ").ok_or("missing requiredness")?;
    let kind = ParamType::parse(kind).ok_or_else(|| format!("unknown type `{kind}`"))?;
    let (required, mut rest) = match rest.split_once(", ") {
        Some((req, tail)) => (req, tail),
        None => (rest, ""),
    };
    let required = match required {
        "required" => true,
        "optional" => false,
        other => return Err(format!("expected required/optional, got `{other}`")),
    };
    let mut range = None;
    if let Some(idx) = rest.rfind("range [") {
        let inner = rest[idx + "range [".len()..]
            .strip_suffix(']')
            .ok_or("unterminated range")?;
        let (lo, hi) = inner.split_once(',').ok_or("range needs two bounds")?;
        let lo: f64 = lo.trim().parse().map_err(|_| "bad range minimum")?;
        let hi: f64 = hi.trim().parse().map_err(|_| "bad range maximum")?;
        range = Some([lo, hi]);
        rest = rest[..idx].trim_end().trim_end_matches(',');
    }
    let mut default = None;
    if let Some(text) = rest.strip_prefix("default ") {
        default = Some(parse_literal(text)?);
    } else if !rest.is_empty() {
        return Err(format!("unexpected `{rest}`"));
    }
    Ok(ParamSpec {
        name: name.to_string(),
        kind,
        required,
        default,
        range,
    })
}

fn parse_literal(text: &str) -> Result<Value, String> {
    let ast = parse_script(&format!("v = {text}")).map_err(|e| e.to_string())?;
    match ast.statements.as_slice() {
        [Statement::Assign { value, .. }] => {
            Value::from_literal(value).ok_or_else(|| format!("`{text}` is not a literal"))
        }
        _ => Err(format!("`{text}` is not a literal")),
    }
}
