//! Tolerant decoding of backend text into decision records.
//!
//! Rungs: 1 strict JSON object, 2 contents of a markdown fence, 3 first
//! balanced `{...}` substring. Field aliases are then normalized on whichever
//! object was recovered.

use serde_json::{Map, Value};

use super::{AgentError, LangAction, LangDecision, StairDir, VerifyDecision, VisDecision, VisSelect};
use crate::geometry::ViewDir;
use crate::tdm::TodoUpdateOp;

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    /// Ladder rung (1..=3) at which a JSON object was recovered.
    pub rung: u8,
    pub warnings: Vec<String>,
}

fn as_object(v: Value) -> Option<Map<String, Value>> {
    match v {
        Value::Object(m) => Some(m),
        _ => None,
    }
}

fn strip_fences(raw: &str) -> Option<&str> {
    let open = raw.find("```")?;
    let after = &raw[open + 3..];
    // skip an optional language tag on the fence line
    let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
    let body = &after[body_start..];
    Some(match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    })
}

fn first_balanced_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let (mut depth, mut in_str, mut esc) = (0usize, false, false);
    for (i, ch) in raw[start..].char_indices() {
        if in_str {
            match ch {
                _ if esc => esc = false,
                '\\' => esc = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Recovers a JSON object from free-form text, returning it with its rung.
pub fn extract_json(raw: &str) -> Option<(Map<String, Value>, u8)> {
    if let Some(m) = serde_json::from_str(raw.trim()).ok().and_then(as_object) {
        return Some((m, 1));
    }
    if let Some(inner) = strip_fences(raw) {
        if let Some(m) = serde_json::from_str(inner.trim()).ok().and_then(as_object) {
            return Some((m, 2));
        }
    }
    let cand = first_balanced_object(raw)?;
    serde_json::from_str(cand).ok().and_then(as_object).map(|m| (m, 3))
}

fn recover(raw: &str) -> Result<(Map<String, Value>, u8), AgentError> {
    extract_json(raw).ok_or_else(|| {
        let head: String = raw.chars().take(80).collect();
        AgentError::UnparseableDecision(format!("no JSON object in response: {head:?}"))
    })
}

/// Moves the first present alias onto `canonical` if the canonical key is
/// absent.
fn alias(m: &mut Map<String, Value>, canonical: &str, aliases: &[&str], warnings: &mut Vec<String>) {
    if m.contains_key(canonical) {
        return;
    }
    for a in aliases {
        if let Some(v) = m.remove(*a) {
            warnings.push(format!("field alias {a} read as {canonical}"));
            m.insert(canonical.to_string(), v);
            return;
        }
    }
}

fn text_field(m: &Map<String, Value>, key: &str, warnings: &mut Vec<String>) -> String {
    match m.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => {
            warnings.push(format!("missing field {key}"));
            String::new()
        }
        Some(other) => other.to_string(),
    }
}

fn norm_name(s: &str) -> String {
    s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase()
}

fn as_u64(v: &Value) -> Option<u64> {
    match v {
        Value::Number(n) => n.as_u64().or_else(|| n.as_f64().filter(|f| *f >= 0.0 && f.fract() == 0.0).map(|f| f as u64)),
        Value::String(s) => s.trim().trim_start_matches(['#', 'w', 'p']).parse().ok(),
        _ => None,
    }
}

fn as_bool(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" | "stop" | "confirm" | "confirmed" => Some(true),
            "false" | "no" | "continue" | "reject" | "rejected" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn horizontal(s: &str) -> Option<ViewDir> {
    ViewDir::parse(s).filter(|d| *d != ViewDir::Down)
}

/// Parses `name(arg)`, `name arg`, or a bare direction.
fn action_from_str(s: &str) -> Option<LangAction> {
    let s = s.trim();
    let (name, arg) = match s.find('(') {
        Some(i) => (&s[..i], s[i + 1..].trim_end_matches(')').trim()),
        None => s.split_once(char::is_whitespace).unwrap_or((s, "")),
    };
    let arg = arg.trim().trim_matches(['"', '\'']);
    let name = norm_name(name);
    if let Some(d) = horizontal(&name) {
        return Some(LangAction::Turn { direction: d });
    }
    match name.as_str() {
        "turn" | "go" | "move" => horizontal(arg).map(|direction| LangAction::Turn { direction }),
        "backtrack" => as_u64(&Value::String(arg.into())).map(|waypoint_id| LangAction::Backtrack { waypoint_id }),
        "gostair" | "gostairs" | "stair" | "stairs" => stair_dir(arg).map(|direction| LangAction::GoStair { direction }),
        "stop" => Some(LangAction::DoubleCheck {
            stop: true,
            answer: None,
        }),
        "doublecheck" => {
            let mut parts = arg.splitn(2, ',');
            let stop = as_bool(&Value::String(parts.next().unwrap_or("stop").trim().into())).unwrap_or(true);
            let answer = parts
                .next()
                .map(|a| a.trim().trim_matches(['"', '\'']).to_string())
                .filter(|a| !a.is_empty());
            Some(LangAction::DoubleCheck { stop, answer })
        }
        _ => None,
    }
}

fn stair_dir(s: &str) -> Option<StairDir> {
    match s.trim().to_ascii_lowercase().as_str() {
        "up" | "upstairs" | "ascend" => Some(StairDir::Up),
        "down" | "downstairs" | "descend" => Some(StairDir::Down),
        _ => None,
    }
}

fn action_from_value(v: &Value) -> Option<LangAction> {
    let m = match v {
        Value::String(s) => return action_from_str(s),
        Value::Object(m) => m,
        _ => return None,
    };
    let name = ["name", "tool", "type", "action"]
        .iter()
        .find_map(|k| m.get(*k).and_then(Value::as_str))?;
    // arguments may sit inline or in a nested object
    let nested = ["args", "arguments", "parameters", "params"]
        .iter()
        .find_map(|k| m.get(*k).and_then(Value::as_object));
    let arg = |keys: &[&str]| -> Option<&Value> {
        keys.iter()
            .find_map(|k| nested.and_then(|n| n.get(*k)))
            .or_else(|| keys.iter().find_map(|k| m.get(*k)))
    };
    let dir = arg(&["direction", "dir", "view"]).and_then(Value::as_str);
    match norm_name(name).as_str() {
        "turn" | "go" | "move" => horizontal(dir?).map(|direction| LangAction::Turn { direction }),
        "backtrack" => {
            let id = arg(&["waypoint_id", "waypoint", "id", "k"]).and_then(as_u64)?;
            Some(LangAction::Backtrack { waypoint_id: id })
        }
        "gostair" | "gostairs" | "stair" | "stairs" => stair_dir(dir?).map(|direction| LangAction::GoStair { direction }),
        n @ ("doublecheck" | "stop") => {
            let stop = arg(&["stop"]).and_then(as_bool).unwrap_or(n == "stop");
            let answer = arg(&["answer"]).and_then(Value::as_str).map(str::to_string);
            Some(LangAction::DoubleCheck { stop, answer })
        }
        other => action_from_str(other),
    }
}

fn todo_op_from_value(v: &Value) -> Option<TodoUpdateOp> {
    if let Ok(op) = serde_json::from_value::<TodoUpdateOp>(v.clone()) {
        return Some(op);
    }
    let mut m = v.as_object()?.clone();
    let mut sink = vec![];
    alias(&mut m, "op", &["type", "action", "kind"], &mut sink);
    if let Some(Value::String(op)) = m.get_mut("op") {
        *op = op.to_ascii_lowercase();
    }
    if let Some(Value::String(st)) = m.get_mut("status") {
        *st = st.to_ascii_lowercase();
    }
    for key in ["index", "id", "item"] {
        if let Some(i) = m.get(key).and_then(as_u64) {
            m.remove(key);
            m.insert("index".into(), Value::from(i));
            break;
        }
    }
    alias(&mut m, "content", &["text", "description"], &mut sink);
    alias(&mut m, "result", &["evidence"], &mut sink);
    serde_json::from_value(Value::Object(m)).ok()
}

pub fn parse_lang_response(raw: &str) -> Result<Parsed<LangDecision>, AgentError> {
    let (mut m, rung) = recover(raw)?;
    let mut warnings = vec![];
    alias(&mut m, "reasoning_action", &["action_reasoning", "reasoning", "rationale"], &mut warnings);
    alias(&mut m, "progress_analysis", &["progress", "analysis"], &mut warnings);
    alias(&mut m, "reasoning_todo", &["todo_reasoning"], &mut warnings);
    alias(&mut m, "todo_ops", &["todo_updates", "updates", "ops"], &mut warnings);
    alias(&mut m, "action", &["tool_call", "call"], &mut warnings);
    // a bare tool call at the top level, e.g. {"tool": ..., "args": {...}}
    let whole = Value::Object(m.clone());
    let action_v = match m.get("action") {
        Some(v) => v,
        None if m.contains_key("tool") || m.contains_key("name") => &whole,
        None => return Err(AgentError::UnparseableDecision("decision has no action".into())),
    };
    let action = action_from_value(action_v)
        .ok_or_else(|| AgentError::UnparseableDecision(format!("unrecognized action {action_v}")))?;
    let mut todo_ops = vec![];
    match m.get("todo_ops") {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for it in items {
                match todo_op_from_value(it) {
                    Some(op) => todo_ops.push(op),
                    None => warnings.push(format!("dropped malformed todo op {it}")),
                }
            }
        }
        Some(other) => warnings.push(format!("todo_ops is not a list: {other}")),
    }
    let value = LangDecision {
        progress_analysis: text_field(&m, "progress_analysis", &mut warnings),
        reasoning_todo: text_field(&m, "reasoning_todo", &mut warnings),
        todo_ops,
        reasoning_action: text_field(&m, "reasoning_action", &mut warnings),
        action,
    };
    Ok(Parsed { value, rung, warnings })
}

fn coords(v: &Value) -> Option<Vec<f64>> {
    match v {
        Value::Array(a) => a.iter().map(Value::as_f64).collect(),
        Value::Object(o) => {
            let get = |ks: &[&str]| ks.iter().find_map(|k| o.get(*k).and_then(Value::as_f64));
            if let (Some(a), Some(b), Some(c), Some(d)) = (
                get(&["u_min", "x_min", "x1", "left"]),
                get(&["v_min", "y_min", "y1", "top"]),
                get(&["u_max", "x_max", "x2", "right"]),
                get(&["v_max", "y_max", "y2", "bottom"]),
            ) {
                return Some(vec![a, b, c, d]);
            }
            Some(vec![get(&["u", "x"])?, get(&["v", "y"])?])
        }
        _ => None,
    }
}

/// Decodes a box or point on an image of `width` x `height` pixels.
/// Out-of-bounds coordinates are clamped and reversed corners reordered, each
/// with a warning; a zero-area box becomes its center point.
pub fn parse_vis_response(raw: &str, width: u32, height: u32) -> Result<Parsed<VisDecision>, AgentError> {
    let (mut m, rung) = recover(raw)?;
    let mut warnings = vec![];
    alias(&mut m, "select", &["bbox", "box", "point", "pixel", "selection"], &mut warnings);
    alias(&mut m, "target_desc", &["description", "target", "label"], &mut warnings);
    let sel = m
        .get("select")
        .ok_or_else(|| AgentError::UnparseableDecision("vision decision has no selection".into()))?;
    let c = coords(sel).ok_or_else(|| AgentError::UnparseableDecision(format!("bad selection {sel}")))?;
    let (wmax, hmax) = (width.saturating_sub(1) as f64, height.saturating_sub(1) as f64);
    let mut clamp = |x: f64, hi: f64| -> u32 {
        let r = x.round();
        if !(0.0..=hi).contains(&r) {
            warnings.push(format!("coordinate {x} clamped to [0, {hi}]"));
        }
        r.clamp(0.0, hi) as u32
    };
    let select = match c.as_slice() {
        [u, v] => VisSelect::Point {
            u: clamp(*u, wmax),
            v: clamp(*v, hmax),
        },
        [a, b, cc, d] => {
            let (mut u0, mut v0, mut u1, mut v1) = (clamp(*a, wmax), clamp(*b, hmax), clamp(*cc, wmax), clamp(*d, hmax));
            if u0 > u1 || v0 > v1 {
                warnings.push("box corners reordered".into());
                (u0, u1) = (u0.min(u1), u0.max(u1));
                (v0, v1) = (v0.min(v1), v0.max(v1));
            }
            if u0 == u1 || v0 == v1 {
                VisSelect::Point {
                    u: (u0 + u1) / 2,
                    v: (v0 + v1) / 2,
                }
            } else {
                VisSelect::BBox {
                    u_min: u0,
                    v_min: v0,
                    u_max: u1,
                    v_max: v1,
                }
            }
        }
        _ => return Err(AgentError::UnparseableDecision(format!("selection needs 2 or 4 numbers: {sel}"))),
    };
    let target_desc = text_field(&m, "target_desc", &mut warnings);
    Ok(Parsed {
        value: VisDecision { select, target_desc },
        rung,
        warnings,
    })
}

pub fn parse_verify_response(raw: &str) -> Result<Parsed<VerifyDecision>, AgentError> {
    let (mut m, rung) = recover(raw)?;
    let mut warnings = vec![];
    alias(&mut m, "confirm", &["confirmed", "verified", "answer", "decision"], &mut warnings);
    alias(&mut m, "reasoning", &["reason", "rationale", "analysis"], &mut warnings);
    let confirm = m
        .get("confirm")
        .and_then(as_bool)
        .ok_or_else(|| AgentError::UnparseableDecision("verification has no yes/no confirm".into()))?;
    let reasoning = text_field(&m, "reasoning", &mut warnings);
    Ok(Parsed {
        value: VerifyDecision { confirm, reasoning },
        rung,
        warnings,
    })
}

/// Sub-goal list from the one-off planning call.
pub fn parse_init_response(raw: &str) -> Result<Parsed<Vec<String>>, AgentError> {
    let (mut m, rung) = recover(raw)?;
    let mut warnings = vec![];
    alias(&mut m, "subgoals", &["todo", "todo_list", "plan", "steps", "items"], &mut warnings);
    let items = m
        .get("subgoals")
        .and_then(Value::as_array)
        .ok_or_else(|| AgentError::UnparseableDecision("plan has no subgoals list".into()))?;
    let mut out = vec![];
    for it in items {
        match it {
            Value::String(s) => out.push(s.clone()),
            Value::Object(o) => match ["content", "description", "text"].iter().find_map(|k| o.get(*k).and_then(Value::as_str)) {
                Some(s) => out.push(s.to_string()),
                None => warnings.push(format!("dropped malformed subgoal {it}")),
            },
            other => warnings.push(format!("dropped malformed subgoal {other}")),
        }
    }
    Ok(Parsed { value: out, rung, warnings })
}
