//! The seven-operation action space.
//!
//! Models answer with a function call such as `tap(element=3)` or
//! `finish(answer="8 min")`, possibly surrounded by reasoning. The canonical
//! serialization written by [`serialize_action`] is the wire format for
//! traces and prompt history, and parses back to the same [`Action`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ui_tree::CompressedView;

pub const SWIPE_DURATION_MS: u32 = 300;
pub const LONG_PRESS_DURATION_MS: u32 = 800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    /// Direction of finger travel from `(x1, y1)` to `(x2, y2)`; ties go to
    /// the vertical axis.
    pub fn of_motion(dx: i32, dy: i32) -> Direction {
        if dx.abs() > dy.abs() {
            if dx > 0 {
                Direction::Right
            } else {
                Direction::Left
            }
        } else if dy > 0 {
            Direction::Down
        } else {
            Direction::Up
        }
    }
}

impl FromStr for Direction {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwipeDistance {
    Short,
    Medium,
    Long,
}

impl SwipeDistance {
    pub fn as_str(&self) -> &'static str {
        match self {
            SwipeDistance::Short => "short",
            SwipeDistance::Medium => "medium",
            SwipeDistance::Long => "long",
        }
    }

    /// Share of the screen dimension along the swipe axis.
    pub fn fraction(&self) -> f64 {
        match self {
            SwipeDistance::Short => 0.25,
            SwipeDistance::Medium => 0.5,
            SwipeDistance::Long => 0.75,
        }
    }

    /// Nearest distance class for a travelled fraction of the screen.
    pub fn from_fraction(fraction: f64) -> SwipeDistance {
        if fraction < 0.375 {
            SwipeDistance::Short
        } else if fraction < 0.625 {
            SwipeDistance::Medium
        } else {
            SwipeDistance::Long
        }
    }
}

impl FromStr for SwipeDistance {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "short" => Ok(SwipeDistance::Short),
            "medium" => Ok(SwipeDistance::Medium),
            "long" => Ok(SwipeDistance::Long),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Tap { element: usize },
    Swipe { element: usize, direction: Direction, distance: SwipeDistance },
    Type { text: String },
    LongPress { element: usize },
    Home,
    Back,
    Finish { answer: Option<String> },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Tap { .. } => "tap",
            Action::Swipe { .. } => "swipe",
            Action::Type { .. } => "type",
            Action::LongPress { .. } => "long_press",
            Action::Home => "home",
            Action::Back => "back",
            Action::Finish { .. } => "finish",
        }
    }

    pub fn element(&self) -> Option<usize> {
        match self {
            Action::Tap { element } | Action::LongPress { element } | Action::Swipe { element, .. } => {
                Some(*element)
            }
            _ => None,
        }
    }

    pub fn is_finish(&self) -> bool {
        matches!(self, Action::Finish { .. })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_action(self))
    }
}

impl FromStr for Action {
    type Err = ActionParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_model_action(s)
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&serialize_action(self))
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        parse_model_action(&raw).map_err(serde::de::Error::custom)
    }
}

/// Executable form of an [`Action`], in screen pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum GroundedAction {
    TapAt { x: i32, y: i32 },
    SwipeFromTo { x1: i32, y1: i32, x2: i32, y2: i32, duration_ms: u32 },
    TypeText { text: String },
    LongPressAt { x: i32, y: i32, duration_ms: u32 },
    KeyHome,
    KeyBack,
    Done { answer: Option<String> },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ActionParseError {
    #[error("no recognizable action call in model output")]
    NoActionFound,
    #[error("bad argument to {call}: {reason}")]
    BadArgument { call: String, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroundError {
    #[error("element {index} out of range (view has {len} elements)")]
    IndexOutOfRange { index: usize, len: usize },
}

const CALL_NAMES: [&str; 7] = ["tap", "swipe", "type", "long_press", "home", "back", "finish"];

/// Canonical one-line function-call form.
pub fn serialize_action(action: &Action) -> String {
    match action {
        Action::Tap { element } => format!("tap(element={element})"),
        Action::LongPress { element } => format!("long_press(element={element})"),
        Action::Swipe { element, direction, distance } => format!(
            "swipe(element={element}, direction=\"{}\", distance=\"{}\")",
            direction.as_str(),
            distance.as_str()
        ),
        Action::Type { text } => format!("type(text={})", quote(text)),
        Action::Home => "home()".to_string(),
        Action::Back => "back()".to_string(),
        Action::Finish { answer: None } => "finish()".to_string(),
        Action::Finish { answer: Some(a) } => format!("finish(answer={})", quote(a)),
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => out.push_str(&format!("\\u{{{:x}}}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Int(i64),
    Float(String),
    Str(String),
    Word(String),
    Null,
}

impl Value {
    fn describe(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Float(f) => f.clone(),
            Value::Str(s) => format!("{s:?}"),
            Value::Word(w) => w.clone(),
            Value::Null => "null".into(),
        }
    }
}

struct Arg {
    name: Option<String>,
    value: Value,
}

/// Extracts the first well-formed action call from a model reply.
///
/// A call is well-formed when one of the seven names appears as a whole word
/// followed by a parenthesized argument list that closes. Argument names are
/// case-insensitive; element-indexed calls accept `element=`, `index=` or a
/// bare first positional integer.
pub fn parse_model_action(raw: &str) -> Result<Action, ActionParseError> {
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let starts_word = (b.is_ascii_alphabetic() || b == b'_')
            && (i == 0 || !is_ident_byte(bytes[i - 1]));
        if !starts_word {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && is_ident_byte(bytes[i]) {
            i += 1;
        }
        let name = raw[start..i].to_ascii_lowercase();
        if !CALL_NAMES.contains(&name.as_str()) {
            continue;
        }
        let mut j = i;
        while j < bytes.len() && (bytes[j] == b' ' || bytes[j] == b'\t') {
            j += 1;
        }
        if j >= bytes.len() || bytes[j] != b'(' {
            continue;
        }
        let Some(close) = find_close(raw, j) else { continue };
        return match parse_args(&raw[j + 1..close]) {
            Ok(args) => build_action(&name, args),
            Err(reason) => Err(ActionParseError::BadArgument { call: name, reason }),
        };
    }
    Err(ActionParseError::NoActionFound)
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Byte offset of the parenthesis closing the one at `open`, skipping
/// quoted strings. `None` when the call never closes.
fn find_close(raw: &str, open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in raw[open..].char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => quote = Some(c),
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(open + i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses a complete argument list (the text between the parentheses).
fn parse_args(inner: &str) -> Result<Vec<Arg>, String> {
    let mut cur = Cursor { src: inner, pos: 0 };
    let mut args = Vec::new();
    cur.skip_ws();
    if cur.peek().is_none() {
        return Ok(args);
    }
    loop {
        cur.skip_ws();
        args.push(cur.arg().map_err(|e| e.unwrap_or_else(|| "truncated argument".to_string()))?);
        cur.skip_ws();
        match cur.bump() {
            Some(',') => continue,
            None => return Ok(args),
            Some(c) => return Err(format!("unexpected {c:?} in argument list")),
        }
    }
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    fn word(&mut self) -> String {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_alphanumeric() || c == '_' || c == '-' || c == '.') {
            self.bump();
        }
        self.src[start..self.pos].to_string()
    }

    /// `Err(None)` means the input ended inside the argument.
    fn arg(&mut self) -> Result<Arg, Option<String>> {
        let save = self.pos;
        if matches!(self.peek(), Some(c) if c.is_alphabetic() || c == '_') {
            let ident = self.word();
            self.skip_ws();
            if self.peek() == Some('=') {
                self.bump();
                self.skip_ws();
                let value = self.value()?;
                return Ok(Arg { name: Some(ident.to_ascii_lowercase()), value });
            }
            self.pos = save;
        }
        Ok(Arg { name: None, value: self.value()? })
    }

    fn value(&mut self) -> Result<Value, Option<String>> {
        match self.peek() {
            None => Err(None),
            Some(q @ ('"' | '\'')) => {
                self.bump();
                self.string(q).map(Value::Str)
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' => {
                let w = self.word_signed();
                if let Ok(i) = w.parse::<i64>() {
                    Ok(Value::Int(i))
                } else if w.parse::<f64>().is_ok() {
                    Ok(Value::Float(w))
                } else {
                    Err(Some(format!("bad number {w:?}")))
                }
            }
            Some(c) if c.is_alphabetic() || c == '_' => {
                let w = self.word();
                match w.to_ascii_lowercase().as_str() {
                    "none" | "null" => Ok(Value::Null),
                    _ => Ok(Value::Word(w)),
                }
            }
            Some(c) => Err(Some(format!("unexpected {c:?}"))),
        }
    }

    fn word_signed(&mut self) -> String {
        let start = self.pos;
        if matches!(self.peek(), Some('-' | '+')) {
            self.bump();
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '.') {
            self.bump();
        }
        self.src[start..self.pos].to_string()
    }

    fn string(&mut self, quote: char) -> Result<String, Option<String>> {
        let mut out = String::new();
        loop {
            let c = self.bump().ok_or(None)?;
            match c {
                c if c == quote => return Ok(out),
                '\\' => match self.bump().ok_or(None)? {
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    'u' if self.peek() == Some('{') => {
                        self.bump();
                        let start = self.pos;
                        while matches!(self.peek(), Some(c) if c.is_ascii_hexdigit()) {
                            self.bump();
                        }
                        let hex = &self.src[start..self.pos];
                        if self.bump() != Some('}') {
                            return Err(Some("bad \\u{..} escape".into()));
                        }
                        let ch = u32::from_str_radix(hex, 16)
                            .ok()
                            .and_then(char::from_u32)
                            .ok_or_else(|| Some(format!("bad code point {hex:?}")))?;
                        out.push(ch);
                    }
                    other @ ('"' | '\'' | '\\') => out.push(other),
                    other => {
                        out.push('\\');
                        out.push(other);
                    }
                },
                c => out.push(c),
            }
        }
    }
}

fn bad(call: &str, reason: impl Into<String>) -> ActionParseError {
    ActionParseError::BadArgument { call: call.to_string(), reason: reason.into() }
}

/// Looks up an argument by keyword (any of `names`) or by position.
fn pick<'a>(args: &'a [Arg], names: &[&str], position: usize) -> Option<&'a Value> {
    if let Some(a) = args.iter().find(|a| a.name.as_deref().is_some_and(|n| names.contains(&n))) {
        return Some(&a.value);
    }
    args.iter().filter(|a| a.name.is_none()).nth(position).map(|a| &a.value)
}

fn element_arg(call: &str, args: &[Arg]) -> Result<usize, ActionParseError> {
    let value = pick(args, &["element", "index", "idx", "id"], 0)
        .ok_or_else(|| bad(call, "missing element index"))?;
    let n = match value {
        Value::Int(i) => *i,
        Value::Str(s) if !s.is_empty() && s.trim().chars().all(|c| c.is_ascii_digit()) => {
            s.trim().parse().map_err(|_| bad(call, "element index too large"))?
        }
        other => return Err(bad(call, format!("element must be an integer, got {}", other.describe()))),
    };
    usize::try_from(n).map_err(|_| bad(call, format!("element must be non-negative, got {n}")))
}

fn text_arg(value: &Value) -> Option<String> {
    match value {
        Value::Str(s) | Value::Word(s) | Value::Float(s) => Some(s.clone()),
        Value::Int(i) => Some(i.to_string()),
        Value::Null => None,
    }
}

fn build_action(call: &str, args: Vec<Arg>) -> Result<Action, ActionParseError> {
    match call {
        "tap" => Ok(Action::Tap { element: element_arg(call, &args)? }),
        "long_press" => Ok(Action::LongPress { element: element_arg(call, &args)? }),
        "swipe" => {
            let element = element_arg(call, &args)?;
            let direction = match pick(&args, &["direction", "dir"], 1) {
                Some(Value::Str(s) | Value::Word(s)) => {
                    s.parse().map_err(|_| bad(call, format!("unknown direction {s:?}")))?
                }
                Some(other) => return Err(bad(call, format!("bad direction {}", other.describe()))),
                None => return Err(bad(call, "missing direction")),
            };
            let distance = match pick(&args, &["distance", "dist"], 2) {
                Some(Value::Str(s) | Value::Word(s)) => {
                    s.parse().map_err(|_| bad(call, format!("unknown distance {s:?}")))?
                }
                Some(Value::Null) | None => SwipeDistance::Medium,
                Some(other) => return Err(bad(call, format!("bad distance {}", other.describe()))),
            };
            Ok(Action::Swipe { element, direction, distance })
        }
        "type" => {
            let text = pick(&args, &["text", "content", "input"], 0)
                .and_then(text_arg)
                .ok_or_else(|| bad(call, "missing text"))?;
            if text.chars().any(|c| c.is_control() && c != '\n') {
                return Err(bad(call, "text contains control characters"));
            }
            Ok(Action::Type { text })
        }
        "home" => Ok(Action::Home),
        "back" => Ok(Action::Back),
        "finish" => Ok(Action::Finish { answer: pick(&args, &["answer", "result", "message"], 0).and_then(text_arg) }),
        _ => Err(ActionParseError::NoActionFound),
    }
}

fn clamp_point(x: i64, y: i64, width: u32, height: u32) -> (i32, i32) {
    let max_x = i64::from(width.max(1)) - 1;
    let max_y = i64::from(height.max(1)) - 1;
    (x.clamp(0, max_x) as i32, y.clamp(0, max_y) as i32)
}

/// Grounds an element-indexed action onto screen coordinates.
pub fn ground(action: &Action, view: &CompressedView, screen: (u32, u32)) -> Result<GroundedAction, GroundError> {
    let (width, height) = screen;
    let center_of = |index: usize| -> Result<(i64, i64), GroundError> {
        let e = view.get(index).ok_or(GroundError::IndexOutOfRange { index, len: view.len() })?;
        let (cx, cy) = e.center();
        Ok((i64::from(cx), i64::from(cy)))
    };
    Ok(match action {
        Action::Tap { element } => {
            let (cx, cy) = center_of(*element)?;
            let (x, y) = clamp_point(cx, cy, width, height);
            GroundedAction::TapAt { x, y }
        }
        Action::LongPress { element } => {
            let (cx, cy) = center_of(*element)?;
            let (x, y) = clamp_point(cx, cy, width, height);
            GroundedAction::LongPressAt { x, y, duration_ms: LONG_PRESS_DURATION_MS }
        }
        Action::Swipe { element, direction, distance } => {
            let (cx, cy) = center_of(*element)?;
            let along = |dim: u32| (f64::from(dim) * distance.fraction()).round() as i64;
            let (ex, ey) = match direction {
                Direction::Up => (cx, cy - along(height)),
                Direction::Down => (cx, cy + along(height)),
                Direction::Left => (cx - along(width), cy),
                Direction::Right => (cx + along(width), cy),
            };
            let (x1, y1) = clamp_point(cx, cy, width, height);
            let (x2, y2) = clamp_point(ex, ey, width, height);
            GroundedAction::SwipeFromTo { x1, y1, x2, y2, duration_ms: SWIPE_DURATION_MS }
        }
        Action::Type { text } => GroundedAction::TypeText { text: text.clone() },
        Action::Home => GroundedAction::KeyHome,
        Action::Back => GroundedAction::KeyBack,
        Action::Finish { answer } => GroundedAction::Done { answer: answer.clone() },
    })
}
