//! Paths into an app's JSON state, `{...}` text interpolation and the
//! state-changing effects of transitions.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Values a template can read besides the app state.
#[derive(Debug, Clone, Default)]
pub struct Scope<'a> {
    pub state: Option<&'a Value>,
    /// Current element of a repeated node.
    pub item: Option<&'a Value>,
    /// Index of `item` in its array.
    pub index: Option<usize>,
    pub sys_time: &'a str,
    pub sys_date: &'a str,
}

impl<'a> Scope<'a> {
    pub fn new(state: &'a Value, sys_time: &'a str, sys_date: &'a str) -> Self {
        Self { state: Some(state), item: None, index: None, sys_time, sys_date }
    }

    pub fn with_item(&self, item: &'a Value, index: usize) -> Self {
        Self { item: Some(item), index: Some(index), ..self.clone() }
    }

    /// Splits a dotted path, replacing `$key` segments by the value stored
    /// at `key` and the `index` segment by the repeat index.
    fn segments(&self, path: &str) -> Option<Vec<String>> {
        path.split('.')
            .map(|seg| {
                if let Some(key) = seg.strip_prefix('$') {
                    Some(display(&self.resolve(key)?))
                } else if seg == "index" && self.index.is_some() {
                    self.index.map(|i| i.to_string())
                } else {
                    Some(seg.to_string())
                }
            })
            .collect()
    }

    /// Reads a value: `item.*` and `index` refer to the current repeat,
    /// `sys.time` and `sys.date` to the device clock, anything else to the
    /// app state.
    pub fn resolve(&self, path: &str) -> Option<Value> {
        let path = path.trim();
        match path {
            "index" => return self.index.map(Value::from),
            "sys.time" => return Some(Value::from(self.sys_time)),
            "sys.date" => return Some(Value::from(self.sys_date)),
            _ => {}
        }
        if path == "item" {
            return self.item.cloned();
        }
        if let Some(rest) = path.strip_prefix("item.") {
            let segs = self.segments(rest)?;
            return lookup(self.item?, &segs).cloned();
        }
        let segs = self.segments(path)?;
        lookup(self.state?, &segs).cloned()
    }

    /// Resolves a state path for writing, expanding `$key` and `index`.
    pub fn write_path(&self, path: &str) -> Option<Vec<String>> {
        self.segments(&self.interpolate(path))
    }

    /// Replaces every `{expr}` in `template`; `{{` and `}}` are literal
    /// braces. `expr` is a path optionally followed by a filter: `|onoff`,
    /// `|count`, or `|bool:WhenTrue:WhenFalse`.
    /// Unresolvable expressions render as empty text.
    pub fn interpolate(&self, template: &str) -> String {
        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        while let Some(pos) = rest.find(['{', '}']) {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if tail.starts_with("{{") || tail.starts_with("}}") {
                out.push_str(&tail[..1]);
                rest = &tail[2..];
            } else if let Some(stripped) = tail.strip_prefix('{') {
                match stripped.find('}') {
                    Some(end) => {
                        out.push_str(&self.expression(&stripped[..end]));
                        rest = &stripped[end + 1..];
                    }
                    None => {
                        out.push_str(tail);
                        rest = "";
                    }
                }
            } else {
                out.push('}');
                rest = &tail[1..];
            }
        }
        out.push_str(rest);
        out
    }

    fn expression(&self, expr: &str) -> String {
        let (path, filter) = match expr.split_once('|') {
            Some((p, f)) => (p, Some(f.trim())),
            None => (expr, None),
        };
        let value = self.resolve(path);
        match filter {
            Some("onoff") => if value.as_ref().is_some_and(truthy) { "ON" } else { "OFF" }.to_string(),
            Some(f) if f.starts_with("bool:") => {
                let mut parts = f["bool:".len()..].splitn(2, ':');
                let (yes, no) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
                if value.as_ref().is_some_and(truthy) { yes } else { no }.to_string()
            }
            Some("count") => match value {
                Some(Value::Array(a)) => a.len().to_string(),
                Some(Value::Object(o)) => o.len().to_string(),
                _ => "0".to_string(),
            },
            _ => value.as_ref().map(display).unwrap_or_default(),
        }
    }

    /// Resolves a JSON value from a transition: a string that is exactly one
    /// `{expr}` yields the referenced value with its type, other strings are
    /// interpolated, and containers are resolved element-wise.
    pub fn resolve_value(&self, value: &Value) -> Value {
        match value {
            Value::String(s) => {
                let whole = s.strip_prefix('{').and_then(|r| r.strip_suffix('}'));
                match whole {
                    Some(expr) if !expr.contains(['{', '}', '|']) => self.resolve(expr).unwrap_or(Value::Null),
                    _ => Value::String(self.interpolate(s)),
                }
            }
            Value::Array(items) => Value::Array(items.iter().map(|v| self.resolve_value(v)).collect()),
            Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), self.resolve_value(v))).collect()),
            other => other.clone(),
        }
    }
}

/// Text shown for a state value.
pub fn display(value: &Value) -> String {
    match value {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        other => other.to_string(),
    }
}

pub fn truthy(value: &Value) -> bool {
    match value {
        Value::Null => false,
        Value::Bool(b) => *b,
        Value::Number(n) => n.as_f64().is_some_and(|f| f != 0.0),
        Value::String(s) => !s.is_empty(),
        Value::Array(a) => !a.is_empty(),
        Value::Object(o) => !o.is_empty(),
    }
}

fn lookup<'v, S: AsRef<str>>(root: &'v Value, segments: &[S]) -> Option<&'v Value> {
    segments.iter().try_fold(root, |v, seg| {
        let seg = seg.as_ref();
        match v {
            Value::Object(map) => map.get(seg),
            Value::Array(items) => items.get(seg.parse::<usize>().ok()?),
            _ => None,
        }
    })
}

fn lookup_mut<'v>(root: &'v mut Value, segments: &[String], create: bool) -> Result<&'v mut Value, String> {
    let mut cur = root;
    for seg in segments {
        cur = match cur {
            Value::Object(map) => {
                if create && !map.contains_key(seg) {
                    map.insert(seg.clone(), Value::Null);
                }
                map.get_mut(seg).ok_or_else(|| format!("no key {seg:?}"))?
            }
            Value::Array(items) => {
                let i: usize = seg.parse().map_err(|_| format!("{seg:?} is not an array index"))?;
                let len = items.len();
                items.get_mut(i).ok_or_else(|| format!("index {i} out of range (len {len})"))?
            }
            _ => return Err(format!("cannot descend into {seg:?}")),
        };
    }
    Ok(cur)
}

/// Condition for showing a node or enabling a transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Condition {
    /// A path that must be truthy; a leading `!` negates.
    Path(String),
    Equals { path: String, equals: Value },
}

impl Condition {
    pub fn holds(&self, scope: &Scope<'_>) -> bool {
        match self {
            Condition::Path(p) => match p.trim().strip_prefix('!') {
                Some(neg) => !scope.resolve(neg).as_ref().is_some_and(truthy),
                None => scope.resolve(p).as_ref().is_some_and(truthy),
            },
            Condition::Equals { path, equals } => scope.resolve(path).as_ref() == Some(&scope.resolve_value(equals)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Effect {
    Set { path: String, value: Value },
    Toggle { path: String },
    /// Advances to the next entry of `values` (wrapping).
    Cycle { path: String, values: Vec<Value> },
    Append { path: String, value: Value },
    RemoveAt { path: String, index: Value },
}

impl Effect {
    pub fn apply(&self, state: &mut Value, scope: &Scope<'_>) -> Result<(), String> {
        let target = |path: &str| scope.write_path(path).ok_or_else(|| format!("unresolvable path {path:?}"));
        match self {
            Effect::Set { path, value } => {
                let v = scope.resolve_value(value);
                *lookup_mut(state, &target(path)?, true)? = v;
            }
            Effect::Toggle { path } => {
                let slot = lookup_mut(state, &target(path)?, true)?;
                *slot = Value::Bool(!truthy(slot));
            }
            Effect::Cycle { path, values } => {
                if values.is_empty() {
                    return Err("cycle needs values".into());
                }
                let slot = lookup_mut(state, &target(path)?, true)?;
                let next = values.iter().position(|v| v == slot).map_or(0, |i| (i + 1) % values.len());
                *slot = values[next].clone();
            }
            Effect::Append { path, value } => {
                let v = scope.resolve_value(value);
                match lookup_mut(state, &target(path)?, true)? {
                    Value::Array(items) => items.push(v),
                    slot @ Value::Null => *slot = Value::Array(vec![v]),
                    _ => return Err(format!("{path:?} is not a list")),
                }
            }
            Effect::RemoveAt { path, index } => {
                let i = scope.resolve_value(index).as_u64().ok_or("remove_at index must be a number")? as usize;
                match lookup_mut(state, &target(path)?, false)? {
                    Value::Array(items) if i < items.len() => {
                        items.remove(i);
                    }
                    _ => return Err(format!("cannot remove {i} from {path:?}")),
                }
            }
        }
        Ok(())
    }
}
