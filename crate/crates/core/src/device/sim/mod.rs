//! Deterministic phone simulator driven by declarative app definitions.
//!
//! Every installed app keeps its own JSON state and current screen. Screens
//! are node templates rendered against that state; taps, long presses,
//! swipes and Back fire the app's transitions. Tapping a text field focuses
//! it and shows an input-method bar with a Done key; `TypeText` replaces
//! the focused field's value and closes the bar.

mod app;
mod raster;
mod state;

use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde_json::Value;

pub use app::{NodeTemplate, ScreenTemplate, SimApp, Transition, Trigger};
pub use raster::rasterize;
pub use state::{Condition, Effect, Scope};

use super::{Device, DeviceConfig, DeviceError, Observation, Screenshot};
use crate::actions::{Direction, GroundedAction};
use crate::ui_tree::{parse_hierarchy_xml, to_hierarchy_xml, Bounds, RawUiTree, UiNode};

pub const LAUNCHER: &str = "launcher";
const LAUNCHER_PACKAGE: &str = "com.droidharness.sim.launcher";
const SYSTEM_PACKAGE: &str = "com.android.systemui";
const IME_PACKAGE: &str = "com.droidharness.sim.ime";
const REF_WIDTH: f64 = 1080.0;
const REF_HEIGHT: f64 = 2400.0;
const STATUS_BAR_BOTTOM: i32 = 96;

/// Clock shown when no fixed time is configured.
pub fn default_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 5, 1).and_then(|d| d.and_hms_opt(9, 0, 0)).expect("valid constant date")
}

#[derive(Debug, Clone)]
struct Runtime {
    state: Value,
    screen: String,
}

#[derive(Debug, Clone, PartialEq)]
struct Focus {
    app: usize,
    bind: Vec<String>,
}

/// What a rendered node stands for, indexed by node id.
#[derive(Debug, Clone, Default)]
struct NodeMeta {
    template: Option<String>,
    item: Option<(usize, Value)>,
    bind: Option<Vec<String>>,
    launch: Option<usize>,
    ime_done: bool,
}

struct Built {
    root: UiNode,
    meta: Vec<NodeMeta>,
}

pub struct SimDevice {
    config: DeviceConfig,
    apps: Vec<SimApp>,
    runtime: Vec<Runtime>,
    foreground: Option<usize>,
    focus: Option<Focus>,
    sys_time: String,
    sys_date: String,
    base_ms: i64,
    clock_ms: i64,
}

impl SimDevice {
    /// Loads the bundled apps plus any `*.json` definitions in
    /// `config.sim_apps_dir`, which replace bundled apps with the same id.
    pub fn new(config: DeviceConfig) -> Result<Self, DeviceError> {
        config.validate()?;
        let mut apps = SimApp::bundled();
        if let Some(dir) = &config.sim_apps_dir {
            for app in load_dir(dir)? {
                match apps.iter_mut().find(|a| a.app_id == app.app_id) {
                    Some(slot) => *slot = app,
                    None => apps.push(app),
                }
            }
        }
        Self::with_apps(config, apps)
    }

    pub fn with_apps(config: DeviceConfig, mut apps: Vec<SimApp>) -> Result<Self, DeviceError> {
        apps.sort_by(|a, b| a.app_id.cmp(&b.app_id));
        if let Some(w) = apps.windows(2).find(|w| w[0].app_id == w[1].app_id) {
            return Err(DeviceError::SimDefinition(format!("duplicate app id {:?}", w[0].app_id)));
        }
        let at = config.fixed_time.unwrap_or_else(default_time);
        let base_ms = at.and_utc().timestamp_millis();
        let mut device = Self {
            runtime: Vec::new(),
            sys_time: at.format("%-I:%M").to_string(),
            sys_date: at.format("%a, %b %-d").to_string(),
            config,
            apps,
            foreground: None,
            focus: None,
            base_ms,
            clock_ms: base_ms,
        };
        device.restore(None)?;
        Ok(device)
    }

    pub fn apps(&self) -> &[SimApp] {
        &self.apps
    }

    pub fn app(&self, app_id: &str) -> Option<&SimApp> {
        self.apps.iter().find(|a| a.app_id == app_id)
    }

    pub fn foreground_app(&self) -> &str {
        self.foreground.map_or(LAUNCHER, |i| self.apps[i].app_id.as_str())
    }

    /// State of one app.
    pub fn state(&self, app_id: &str) -> Option<&Value> {
        let i = self.apps.iter().position(|a| a.app_id == app_id)?;
        Some(&self.runtime[i].state)
    }

    /// Every app's state keyed by app id.
    pub fn device_state(&self) -> Value {
        Value::Object(self.apps.iter().zip(&self.runtime).map(|(a, r)| (a.app_id.clone(), r.state.clone())).collect())
    }

    fn restore(&mut self, target: Option<(usize, Option<&str>)>) -> Result<(), DeviceError> {
        let mut runtime = Vec::with_capacity(self.apps.len());
        for (i, app) in self.apps.iter().enumerate() {
            let fixture = target.and_then(|(t, f)| if t == i { f } else { None });
            runtime.push(Runtime { state: app.initial_state(fixture)?, screen: app.initial_screen.clone() });
        }
        self.runtime = runtime;
        self.foreground = target.map(|(t, _)| t);
        self.focus = None;
        self.clock_ms = self.base_ms;
        Ok(())
    }

    fn build(&self) -> Built {
        let mut b = Builder {
            sx: f64::from(self.config.screen_width) / REF_WIDTH,
            sy: f64::from(self.config.screen_height) / REF_HEIGHT,
            next_id: 0,
            meta: Vec::new(),
            package: String::new(),
            focus: None,
        };
        let (package, content) = match self.foreground {
            None => (LAUNCHER_PACKAGE.to_string(), None),
            Some(i) => (self.apps[i].package.clone(), Some(i)),
        };
        b.package = package.clone();
        b.focus = self.focus.as_ref().filter(|f| Some(f.app) == content).map(|f| f.bind.clone());

        let mut root = b.node("android.widget.FrameLayout", "", &package, [0, 0, 1080, 2400], NodeMeta::default());
        let mut bar = b.node(
            "android.widget.LinearLayout",
            &format!("{SYSTEM_PACKAGE}:id/status_bar"),
            SYSTEM_PACKAGE,
            [0, 0, 1080, STATUS_BAR_BOTTOM],
            NodeMeta::default(),
        );
        let mut clock = b.node("android.widget.TextView", &format!("{SYSTEM_PACKAGE}:id/clock"), SYSTEM_PACKAGE, [24, 0, 240, STATUS_BAR_BOTTOM], NodeMeta::default());
        clock.text = self.sys_time.clone();
        let mut battery = b.node("android.widget.TextView", &format!("{SYSTEM_PACKAGE}:id/battery"), SYSTEM_PACKAGE, [880, 0, 1056, STATUS_BAR_BOTTOM], NodeMeta::default());
        battery.text = "100%".into();
        bar.children = vec![clock, battery];

        let mut body = b.node("android.widget.FrameLayout", "android:id/content", &package, [0, STATUS_BAR_BOTTOM, 1080, 2400], NodeMeta::default());
        match content {
            None => body.children = self.launcher_nodes(&mut b),
            Some(i) => {
                let app = &self.apps[i];
                let rt = &self.runtime[i];
                let scope = Scope::new(&rt.state, &self.sys_time, &self.sys_date);
                if let Some(screen) = app.screens.get(&rt.screen) {
                    for t in &screen.nodes {
                        b.instantiate(t, &scope, 0, &mut body.children);
                    }
                }
            }
        }
        root.children = vec![bar, body];
        if b.focus.is_some() {
            let mut ime = b.node("android.widget.LinearLayout", &format!("{IME_PACKAGE}:id/input_bar"), IME_PACKAGE, [0, 2280, 1080, 2400], NodeMeta::default());
            let mut done = b.node(
                "android.widget.Button",
                &format!("{IME_PACKAGE}:id/ime_done"),
                IME_PACKAGE,
                [780, 2292, 1060, 2388],
                NodeMeta { ime_done: true, ..NodeMeta::default() },
            );
            done.text = "Done".into();
            done.clickable = true;
            done.focusable = true;
            ime.children.push(done);
            root.children.push(ime);
        }
        Built { root, meta: b.meta }
    }

    fn launcher_nodes(&self, b: &mut Builder) -> Vec<UiNode> {
        self.apps
            .iter()
            .enumerate()
            .map(|(i, app)| {
                let (col, row) = ((i % 4) as i32, (i / 4) as i32);
                let left = 40 + col * 255;
                let top = 300 + row * 320;
                let meta = NodeMeta { launch: Some(i), ..NodeMeta::default() };
                let mut icon = b.node(
                    "android.widget.TextView",
                    &format!("{LAUNCHER_PACKAGE}:id/icon_{}", app.app_id),
                    LAUNCHER_PACKAGE,
                    [left, top, left + 235, top + 280],
                    meta,
                );
                icon.text = app.label.clone();
                icon.content_desc = app.label.clone();
                icon.clickable = true;
                icon.focusable = true;
                icon
            })
            .collect()
    }

    fn tree(&self) -> (RawUiTree, Vec<NodeMeta>) {
        let built = self.build();
        let tree = RawUiTree {
            roots: vec![built.root],
            screen_width: self.config.screen_width,
            screen_height: self.config.screen_height,
            capture_timestamp: self.clock_ms,
        };
        (tree, built.meta)
    }

    /// The last node in pre-order under the point that passes `accepts`.
    fn hit(tree: &RawUiTree, x: i32, y: i32, accepts: impl Fn(&UiNode) -> bool) -> Option<usize> {
        fn visit(node: &UiNode, x: i32, y: i32, accepts: &dyn Fn(&UiNode) -> bool, found: &mut Option<usize>) {
            if !node.visible {
                return;
            }
            if node.bounds.contains(x, y) && accepts(node) {
                *found = Some(node.node_id);
            }
            for c in &node.children {
                visit(c, x, y, accepts, found);
            }
        }
        let mut found = None;
        for r in &tree.roots {
            visit(r, x, y, &accepts, &mut found);
        }
        found
    }

    fn fire(&mut self, app: usize, trigger: &Trigger, item: Option<&(usize, Value)>) -> Result<(), DeviceError> {
        let screen = self.runtime[app].screen.clone();
        let Some(transition) = self.apps[app].transition(&screen, trigger).cloned() else {
            return Ok(());
        };
        let (sys_time, sys_date) = (self.sys_time.clone(), self.sys_date.clone());
        let snapshot = self.runtime[app].state.clone();
        let guard = {
            let mut scope = Scope::new(&snapshot, &sys_time, &sys_date);
            if let Some((i, v)) = item {
                scope = scope.with_item(v, *i);
            }
            transition.when.as_ref().is_none_or(|c| c.holds(&scope))
        };
        if !guard {
            return Ok(());
        }
        self.focus = None;
        for effect in &transition.effects {
            let before = self.runtime[app].state.clone();
            let mut scope = Scope::new(&before, &sys_time, &sys_date);
            if let Some((i, v)) = item {
                scope = scope.with_item(v, *i);
            }
            effect
                .apply(&mut self.runtime[app].state, &scope)
                .map_err(|e| DeviceError::SimDefinition(format!("{}: {e}", self.apps[app].app_id)))?;
        }
        if let Some(next) = transition.goto {
            self.runtime[app].screen = next;
        }
        Ok(())
    }

    fn tap(&mut self, x: i32, y: i32) -> Result<(), DeviceError> {
        let (tree, meta) = self.tree();
        let Some(id) = Self::hit(&tree, x, y, |n| n.clickable || n.is_editable()) else { return Ok(()) };
        let meta = &meta[id];
        if meta.ime_done {
            self.focus = None;
            return Ok(());
        }
        if let Some(app) = meta.launch {
            self.foreground = Some(app);
            self.focus = None;
            return Ok(());
        }
        let Some(app) = self.foreground else { return Ok(()) };
        if let Some(bind) = &meta.bind {
            self.focus = Some(Focus { app, bind: bind.clone() });
            return Ok(());
        }
        match &meta.template {
            Some(t) => self.fire(app, &Trigger::Tap(t.clone()), meta.item.as_ref()),
            None => Ok(()),
        }
    }

    fn long_press(&mut self, x: i32, y: i32) -> Result<(), DeviceError> {
        let (tree, meta) = self.tree();
        let (Some(app), Some(id)) = (self.foreground, Self::hit(&tree, x, y, |n| n.long_clickable)) else {
            return Ok(());
        };
        match &meta[id].template {
            Some(t) => self.fire(app, &Trigger::LongPress(t.clone()), meta[id].item.as_ref()),
            None => Ok(()),
        }
    }

    fn swipe(&mut self, x1: i32, y1: i32, x2: i32, y2: i32) -> Result<(), DeviceError> {
        if (x1, y1) == (x2, y2) {
            return Ok(());
        }
        let direction = Direction::of_motion(x2 - x1, y2 - y1);
        let (tree, meta) = self.tree();
        let (Some(app), Some(id)) = (self.foreground, Self::hit(&tree, x1, y1, |n| n.scrollable)) else {
            return Ok(());
        };
        match &meta[id].template {
            Some(t) => self.fire(app, &Trigger::Swipe { node: t.clone(), direction }, meta[id].item.as_ref()),
            None => Ok(()),
        }
    }

    fn back(&mut self) -> Result<(), DeviceError> {
        if self.focus.take().is_some() {
            return Ok(());
        }
        let Some(app) = self.foreground else { return Ok(()) };
        let screen = self.runtime[app].screen.clone();
        if self.apps[app].transition(&screen, &Trigger::Back).is_some() {
            return self.fire(app, &Trigger::Back, None);
        }
        match self.apps[app].screens.get(&screen).and_then(|s| s.parent.clone()) {
            Some(parent) => self.runtime[app].screen = parent,
            None => {
                self.runtime[app].screen = self.apps[app].initial_screen.clone();
                self.foreground = None;
            }
        }
        Ok(())
    }

    fn type_text(&mut self, text: &str) -> Result<(), DeviceError> {
        let focus = self.focus.clone().ok_or(DeviceError::NoFocusedField)?;
        let mut cur = &mut self.runtime[focus.app].state;
        for seg in &focus.bind {
            cur = match cur {
                Value::Object(map) => map.entry(seg.clone()).or_insert(Value::Null),
                Value::Array(items) => seg
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| items.get_mut(i))
                    .ok_or_else(|| DeviceError::SimDefinition(format!("bad bind segment {seg:?}")))?,
                _ => return Err(DeviceError::SimDefinition(format!("cannot bind through {seg:?}"))),
            };
        }
        *cur = Value::String(text.to_string());
        // The input is committed in one shot, which also closes the bar.
        self.focus = None;
        Ok(())
    }
}

fn load_dir(dir: &Path) -> Result<Vec<SimApp>, DeviceError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            SimApp::from_json(&text).map_err(|e| DeviceError::SimDefinition(format!("{}: {e}", p.display())))
        })
        .collect()
}

struct Builder {
    sx: f64,
    sy: f64,
    next_id: usize,
    meta: Vec<NodeMeta>,
    package: String,
    focus: Option<Vec<String>>,
}

impl Builder {
    fn scale(&self, r: [i32; 4]) -> Bounds {
        let x = |v: i32| (f64::from(v) * self.sx).round() as i32;
        let y = |v: i32| (f64::from(v) * self.sy).round() as i32;
        Bounds::new(x(r[0]), y(r[1]), x(r[2]), y(r[3]))
    }

    fn node(&mut self, class: &str, resource_id: &str, package: &str, bounds: [i32; 4], meta: NodeMeta) -> UiNode {
        let node_id = self.next_id;
        self.next_id += 1;
        self.meta.push(meta);
        UiNode {
            node_id,
            class_name: class.to_string(),
            resource_id: resource_id.to_string(),
            package: package.to_string(),
            bounds: self.scale(bounds),
            enabled: true,
            visible: true,
            ..UiNode::default()
        }
    }

    /// Appends the node(s) produced by `t` to `out`, shifted down by `dy`.
    fn instantiate(&mut self, t: &NodeTemplate, scope: &Scope<'_>, dy: i32, out: &mut Vec<UiNode>) {
        if let Some(list_path) = &t.repeat {
            let items = match scope.resolve(list_path) {
                Some(Value::Array(items)) => items,
                _ => Vec::new(),
            };
            let start = t.offset.as_deref().and_then(|p| scope.resolve(p)).and_then(|v| v.as_u64()).unwrap_or(0) as usize;
            let shown = items.iter().enumerate().skip(start).take(t.max.unwrap_or(usize::MAX));
            for (k, (i, item)) in shown.enumerate() {
                let inner = scope.with_item(item, i);
                self.single(t, &inner, dy + t.pitch * k as i32, Some((i, item.clone())), out);
            }
        } else {
            let item = scope.index.zip(scope.item.cloned());
            self.single(t, scope, dy, item, out);
        }
    }

    fn single(&mut self, t: &NodeTemplate, scope: &Scope<'_>, dy: i32, item: Option<(usize, Value)>, out: &mut Vec<UiNode>) {
        if t.visible_if.as_ref().is_some_and(|c| !c.holds(scope)) {
            return;
        }
        let bind = t.bind.as_deref().and_then(|p| scope.write_path(p));
        let meta = NodeMeta {
            template: (!t.id.is_empty()).then(|| t.id.clone()),
            item,
            bind: bind.clone(),
            ..NodeMeta::default()
        };
        let resource_id = if t.id.is_empty() { String::new() } else { format!("{}:id/{}", self.package, t.id) };
        let [l, top, r, bottom] = t.bounds;
        let package = self.package.clone();
        let mut node = self.node(&t.class, &resource_id, &package, [l, top + dy, r, bottom + dy], meta);
        node.clickable = t.clickable;
        node.long_clickable = t.long_clickable;
        node.scrollable = t.scrollable;
        node.checkable = t.checkable;
        node.focusable = t.focusable || t.clickable || t.bind.is_some();
        node.checked = t.checked.as_ref().is_some_and(|c| c.holds(scope));
        node.content_desc = scope.interpolate(&t.desc);
        node.text = match &bind {
            Some(_) => {
                let value = t.bind.as_deref().and_then(|p| scope.resolve(&scope.interpolate(p))).map(|v| state::display(&v)).unwrap_or_default();
                if value.is_empty() {
                    t.hint.clone().unwrap_or_default()
                } else {
                    value
                }
            }
            None => scope.interpolate(&t.text),
        };
        node.focused = bind.is_some() && bind == self.focus;
        for c in &t.children {
            self.instantiate(c, scope, dy, &mut node.children);
        }
        out.push(node);
    }
}

impl Device for SimDevice {
    fn screen(&self) -> (u32, u32) {
        self.config.screen()
    }

    fn observe(&mut self, with_screenshot: bool) -> Result<Observation, DeviceError> {
        self.clock_ms += 10;
        let (built, _) = self.tree();
        let xml = to_hierarchy_xml(&built);
        let mut tree = parse_hierarchy_xml(&xml, self.config.screen_width, self.config.screen_height)
            .map_err(|e| DeviceError::Parse(e.to_string()))?;
        tree.capture_timestamp = self.clock_ms;
        let screenshot = with_screenshot.then(|| Screenshot::Rgba(rasterize(&tree)));
        Ok(Observation {
            tree,
            xml,
            screenshot,
            foreground_app: self.foreground_app().to_string(),
            capture_timestamp: self.clock_ms,
            device_state: Some(self.device_state()),
            xml_retries: 0,
        })
    }

    fn perform(&mut self, action: &GroundedAction) -> Result<(), DeviceError> {
        match action {
            GroundedAction::TapAt { x, y } => self.tap(*x, *y)?,
            GroundedAction::LongPressAt { x, y, .. } => self.long_press(*x, *y)?,
            GroundedAction::SwipeFromTo { x1, y1, x2, y2, .. } => self.swipe(*x1, *y1, *x2, *y2)?,
            GroundedAction::TypeText { text } => self.type_text(text)?,
            GroundedAction::KeyHome => {
                self.focus = None;
                self.foreground = None;
            }
            GroundedAction::KeyBack => self.back()?,
            GroundedAction::Done { .. } => return Ok(()),
        }
        self.clock_ms += 1000;
        self.config.pause_after_action();
        Ok(())
    }

    fn reset(&mut self, app: &str, fixture: Option<&str>) -> Result<(), DeviceError> {
        let index = self
            .apps
            .iter()
            .position(|a| a.app_id == app || a.package == app)
            .ok_or_else(|| DeviceError::UnknownApp(app.to_string()))?;
        self.restore(Some((index, fixture)))
    }

    fn installed_apps(&self) -> Vec<String> {
        self.apps.iter().map(|a| a.app_id.clone()).collect()
    }
}
