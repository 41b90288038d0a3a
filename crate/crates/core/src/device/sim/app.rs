//! Declarative simulator apps, loaded from JSON.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::state::{Condition, Effect};
use crate::actions::Direction;
use crate::device::DeviceError;

pub(crate) const BUNDLED_APPS: [(&str, &str); 5] = [
    ("bookshelf.json", include_str!("../../../assets/sim_apps/bookshelf.json")),
    ("clock.json", include_str!("../../../assets/sim_apps/clock.json")),
    ("contacts.json", include_str!("../../../assets/sim_apps/contacts.json")),
    ("finance.json", include_str!("../../../assets/sim_apps/finance.json")),
    ("settings.json", include_str!("../../../assets/sim_apps/settings.json")),
];

fn default_class() -> String {
    "android.widget.TextView".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimApp {
    pub app_id: String,
    /// Launcher icon text.
    pub label: String,
    pub package: String,
    pub initial_screen: String,
    #[serde(default = "empty_object")]
    pub state: Value,
    /// Named state overrides; each top-level key replaces the initial one.
    #[serde(default)]
    pub fixtures: BTreeMap<String, Value>,
    pub screens: BTreeMap<String, ScreenTemplate>,
    #[serde(default)]
    pub transitions: Vec<Transition>,
    /// Resource-id leaves whose text is replaced by a placeholder when
    /// traces are exported.
    #[serde(default)]
    pub redact: Vec<String>,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenTemplate {
    /// Screen that Back returns to when no explicit back transition exists.
    #[serde(default)]
    pub parent: Option<String>,
    pub nodes: Vec<NodeTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTemplate {
    #[serde(default)]
    pub id: String,
    #[serde(default = "default_class")]
    pub class: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub desc: String,
    /// `[left, top, right, bottom]` on a 1080x2400 reference screen.
    pub bounds: [i32; 4],
    #[serde(default)]
    pub clickable: bool,
    #[serde(default)]
    pub long_clickable: bool,
    #[serde(default)]
    pub scrollable: bool,
    #[serde(default)]
    pub focusable: bool,
    #[serde(default)]
    pub checkable: bool,
    #[serde(default)]
    pub checked: Option<Condition>,
    /// State path edited by this text field.
    #[serde(default)]
    pub bind: Option<String>,
    /// Text shown while the bound value is empty.
    #[serde(default)]
    pub hint: Option<String>,
    #[serde(default)]
    pub visible_if: Option<Condition>,
    /// State path of a list; the node is instantiated once per entry.
    #[serde(default)]
    pub repeat: Option<String>,
    /// Vertical distance between repeated copies.
    #[serde(default)]
    pub pitch: i32,
    /// State path holding the first list position shown.
    #[serde(default)]
    pub offset: Option<String>,
    /// Most copies shown at once.
    #[serde(default)]
    pub max: Option<usize>,
    #[serde(default)]
    pub children: Vec<NodeTemplate>,
}

impl NodeTemplate {
    fn walk<'a>(&'a self, out: &mut Vec<&'a NodeTemplate>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }
}

impl ScreenTemplate {
    pub fn all_nodes(&self) -> Vec<&NodeTemplate> {
        let mut out = Vec::new();
        for n in &self.nodes {
            n.walk(&mut out);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Tap(String),
    LongPress(String),
    Swipe { node: String, direction: Direction },
    Back,
}

impl Trigger {
    fn node(&self) -> Option<&str> {
        match self {
            Trigger::Tap(n) | Trigger::LongPress(n) | Trigger::Swipe { node: n, .. } => Some(n),
            Trigger::Back => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub screen: String,
    pub on: Trigger,
    /// Guard; when false the trigger does nothing.
    #[serde(default)]
    pub when: Option<Condition>,
    #[serde(default)]
    pub effects: Vec<Effect>,
    #[serde(default)]
    pub goto: Option<String>,
}

impl SimApp {
    pub fn from_json(text: &str) -> Result<SimApp, DeviceError> {
        let app: SimApp = serde_json::from_str(text).map_err(|e| DeviceError::SimDefinition(e.to_string()))?;
        let problems = app.problems();
        if !problems.is_empty() {
            return Err(DeviceError::SimDefinition(format!("{}: {}", app.app_id, problems.join("; "))));
        }
        Ok(app)
    }

    pub fn bundled() -> Vec<SimApp> {
        BUNDLED_APPS
            .iter()
            .map(|(name, text)| SimApp::from_json(text).unwrap_or_else(|e| panic!("bundled app {name} is invalid: {e}")))
            .collect()
    }

    /// Every structural defect, empty when the app is well-formed.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.app_id.is_empty() || self.app_id == "launcher" {
            out.push(format!("app_id {:?} is reserved or empty", self.app_id));
        }
        if !self.screens.contains_key(&self.initial_screen) {
            out.push(format!("initial_screen {:?} does not exist", self.initial_screen));
        }
        if !self.state.is_object() {
            out.push("state must be an object".into());
        }
        for (name, fixture) in &self.fixtures {
            if !fixture.is_object() {
                out.push(format!("fixture {name:?} must be an object"));
            }
        }
        for (id, screen) in &self.screens {
            if let Some(p) = &screen.parent {
                if !self.screens.contains_key(p) {
                    out.push(format!("screen {id:?} has unknown parent {p:?}"));
                }
            }
            let mut seen = BTreeSet::new();
            for node in screen.all_nodes() {
                if !node.id.is_empty() && !seen.insert(node.id.as_str()) {
                    out.push(format!("screen {id:?} repeats node id {:?}", node.id));
                }
                if node.bind.is_some() && !node.class.contains("EditText") {
                    out.push(format!("node {:?} binds a value but is not an EditText", node.id));
                }
                let [l, t, r, b] = node.bounds;
                if l > r || t > b {
                    out.push(format!("node {:?} has inverted bounds", node.id));
                }
            }
        }
        let mut triggers = BTreeSet::new();
        for (i, t) in self.transitions.iter().enumerate() {
            let Some(screen) = self.screens.get(&t.screen) else {
                out.push(format!("transition {i} is on unknown screen {:?}", t.screen));
                continue;
            };
            if let Some(g) = &t.goto {
                if !self.screens.contains_key(g) {
                    out.push(format!("transition {i} goes to unknown screen {g:?}"));
                }
            }
            if !triggers.insert((t.screen.clone(), t.on.clone())) {
                out.push(format!("transition {i} duplicates a trigger on screen {:?}", t.screen));
            }
            if let Some(node_id) = t.on.node() {
                match screen.all_nodes().into_iter().find(|n| n.id == node_id) {
                    None => out.push(format!("transition {i} names unknown node {node_id:?} on {:?}", t.screen)),
                    Some(n) => {
                        let ok = match t.on {
                            Trigger::Tap(_) => n.clickable,
                            Trigger::LongPress(_) => n.long_clickable,
                            Trigger::Swipe { .. } => n.scrollable,
                            Trigger::Back => true,
                        };
                        if !ok {
                            out.push(format!("transition {i}: node {node_id:?} lacks the flag its trigger needs"));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn transition(&self, screen: &str, trigger: &Trigger) -> Option<&Transition> {
        self.transitions.iter().find(|t| t.screen == screen && &t.on == trigger)
    }

    /// Initial state with the named fixture applied.
    pub fn initial_state(&self, fixture: Option<&str>) -> Result<Value, DeviceError> {
        let mut state = self.state.clone();
        if let Some(name) = fixture {
            let overrides = self.fixtures.get(name).ok_or_else(|| DeviceError::UnknownFixture {
                app: self.app_id.clone(),
                fixture: name.to_string(),
            })?;
            if let (Some(base), Some(over)) = (state.as_object_mut(), overrides.as_object()) {
                for (k, v) in over {
                    base.insert(k.clone(), v.clone());
                }
            }
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_apps_validate() {
        let apps = SimApp::bundled();
        let ids: Vec<&str> = apps.iter().map(|a| a.app_id.as_str()).collect();
        assert_eq!(ids, ["bookshelf", "clock", "contacts", "finance", "settings"]);
    }

    #[test]
    fn structural_problems_are_reported() {
        let text = r#"{
            "app_id": "t", "label": "T", "package": "p", "initial_screen": "a",
            "screens": {
                "a": {"parent": "zz", "nodes": [
                    {"id": "b", "bounds": [0, 0, 10, 10], "clickable": true},
                    {"id": "plain", "bounds": [0, 0, 10, 10]}
                ]}
            },
            "transitions": [
                {"screen": "a", "on": {"tap": "b"}, "goto": "nowhere"},
                {"screen": "a", "on": {"tap": "b"}},
                {"screen": "a", "on": {"tap": "plain"}},
                {"screen": "a", "on": "back", "goto": "a"}
            ]
        }"#;
        let app: SimApp = serde_json::from_str(text).unwrap();
        let problems = app.problems();
        assert_eq!(problems.len(), 4, "{problems:#?}");
        assert!(SimApp::from_json(text).is_err());
    }
}
