use std::fmt::Write;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Bounds, RawUiTree, UiNode};

/// Labels longer than this are cut in the text rendering.
pub const MAX_LABEL_CHARS: usize = 60;

/// Fraction of the screen height treated as the status-bar band.
const STATUS_BAR_FRACTION: f64 = 0.05;

static CLOCK_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*\d{1,2}:\d{2}(:\d{2})?\s*([ap]\.?m\.?)?\s*$").expect("static regex")
});
static BATTERY_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(battery\s*)?\d{1,3}\s*%(\s*battery)?\s*$").expect("static regex")
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Clickable,
    Focusable,
    Scrollable,
    Editable,
}

impl ElementKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ElementKind::Clickable => "clickable",
            ElementKind::Focusable => "focusable",
            ElementKind::Scrollable => "scrollable",
            ElementKind::Editable => "editable",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "clickable" => ElementKind::Clickable,
            "focusable" => ElementKind::Focusable,
            "scrollable" => ElementKind::Scrollable,
            "editable" => ElementKind::Editable,
            _ => return None,
        })
    }
}

impl std::fmt::Display for ElementKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An interactive element; `index` is what models refer to in actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementRef {
    pub index: usize,
    pub source_node_id: usize,
    pub bounds: Bounds,
    pub label: String,
    pub kind: ElementKind,
}

impl ElementRef {
    pub fn center(&self) -> (i32, i32) {
        self.bounds.center()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedView {
    pub elements: Vec<ElementRef>,
    pub text_rendering: String,
    pub screen_width: u32,
    pub screen_height: u32,
}

impl CompressedView {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&ElementRef> {
        self.elements.get(index)
    }
}

fn is_interactive(node: &UiNode) -> bool {
    node.clickable || node.long_clickable || node.focusable || node.scrollable || node.is_editable()
}

fn is_element(node: &UiNode) -> bool {
    node.visible && !node.bounds.is_empty() && is_interactive(node)
}

fn kind_of(node: &UiNode) -> ElementKind {
    if node.is_editable() {
        ElementKind::Editable
    } else if node.clickable || node.long_clickable {
        ElementKind::Clickable
    } else if node.scrollable {
        ElementKind::Scrollable
    } else {
        ElementKind::Focusable
    }
}

/// Text or content description of the node itself.
fn own_text(node: &UiNode) -> Option<&str> {
    [node.text.as_str(), node.content_desc.as_str()]
        .into_iter()
        .map(str::trim)
        .find(|s| !s.is_empty())
}

/// Visible text of descendants that are not elements themselves, joined in
/// pre-order. Interactive descendants keep their own labels.
fn inherited_text(node: &UiNode) -> String {
    let mut parts = Vec::new();
    let mut stack: Vec<&UiNode> = node.children.iter().rev().collect();
    while let Some(child) = stack.pop() {
        if !child.visible || is_element(child) {
            continue;
        }
        if let Some(t) = own_text(child) {
            parts.push(t);
        }
        stack.extend(child.children.iter().rev());
    }
    parts.join(" ")
}

fn label_for(node: &UiNode) -> String {
    if let Some(t) = own_text(node) {
        return t.to_string();
    }
    let inherited = inherited_text(node);
    if !inherited.is_empty() {
        return inherited;
    }
    let id_leaf = node.resource_id_leaf().trim();
    if !id_leaf.is_empty() {
        return id_leaf.to_string();
    }
    node.class_leaf().to_string()
}

/// Compresses a tree into its pre-ordered interactive-element list.
pub fn compress(tree: &RawUiTree) -> CompressedView {
    let mut elements = Vec::new();
    let mut stack: Vec<&UiNode> = tree.roots.iter().rev().collect();
    while let Some(node) = stack.pop() {
        // An invisible view hides its whole subtree.
        if !node.visible {
            continue;
        }
        if is_element(node) {
            elements.push(ElementRef {
                index: elements.len(),
                source_node_id: node.node_id,
                bounds: node.bounds,
                label: label_for(node),
                kind: kind_of(node),
            });
        }
        stack.extend(node.children.iter().rev());
    }
    let text_rendering = render_elements(&elements);
    CompressedView {
        elements,
        text_rendering,
        screen_width: tree.screen_width,
        screen_height: tree.screen_height,
    }
}

fn display_label(label: &str) -> String {
    let flat: String = label
        .chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect();
    if flat.chars().count() > MAX_LABEL_CHARS {
        let mut cut: String = flat.chars().take(MAX_LABEL_CHARS).collect();
        cut.push_str("...");
        cut
    } else {
        flat
    }
}

fn render_line(out: &mut String, label: &str, kind: ElementKind, bounds: &Bounds) {
    let (cx, cy) = bounds.center();
    let _ = write!(out, "{} ({kind}) @({cx},{cy})", display_label(label));
}

/// Renders `index. label (kind) @(cx,cy)` lines, LF-terminated.
pub fn render_elements(elements: &[ElementRef]) -> String {
    let mut out = String::new();
    for e in elements {
        let _ = write!(out, "{}. ", e.index);
        render_line(&mut out, &e.label, e.kind, &e.bounds);
        out.push('\n');
    }
    out
}

/// One line of a text rendering read back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedLine {
    pub index: usize,
    pub label: String,
    pub kind: ElementKind,
    pub center: (i32, i32),
}

/// Reads rendering lines back out of arbitrary text; lines that do not have
/// the rendering shape are skipped.
pub fn parse_rendering(text: &str) -> Vec<RenderedLine> {
    text.lines().filter_map(parse_line).collect()
}

fn parse_line(line: &str) -> Option<RenderedLine> {
    let (index, rest) = line.split_once(". ")?;
    let index: usize = index.trim().parse().ok()?;
    let at = rest.rfind(" @(")?;
    let coords = rest[at + 3..].strip_suffix(')')?;
    let (cx, cy) = coords.split_once(',')?;
    let head = &rest[..at];
    let open = head.rfind(" (")?;
    let kind = ElementKind::parse(head[open + 2..].strip_suffix(')')?)?;
    Some(RenderedLine {
        index,
        label: head[..open].to_string(),
        kind,
        center: (cx.parse().ok()?, cy.parse().ok()?),
    })
}

fn is_volatile(element: &ElementRef, screen_height: u32) -> bool {
    let band = f64::from(screen_height) * STATUS_BAR_FRACTION;
    f64::from(element.bounds.bottom) <= band
        || CLOCK_LABEL.is_match(&element.label)
        || BATTERY_LABEL.is_match(&element.label)
}

fn stable_lines(tree: &RawUiTree) -> Vec<String> {
    compress(tree)
        .elements
        .iter()
        .filter(|e| !is_volatile(e, tree.screen_height))
        .map(|e| {
            let mut line = String::new();
            render_line(&mut line, &e.label, e.kind, &e.bounds);
            line
        })
        .collect()
}

/// Whether the screen meaningfully changed between two captures. Clock
/// readouts, battery percentages and the status-bar band are ignored.
pub fn screen_changed(before: &RawUiTree, after: &RawUiTree) -> bool {
    stable_lines(before) != stable_lines(after)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ui_tree::parse_hierarchy_xml;

    fn node(id: usize, bounds: Bounds) -> UiNode {
        UiNode { node_id: id, bounds, visible: true, enabled: true, ..UiNode::default() }
    }

    fn tree_of(children: Vec<UiNode>) -> RawUiTree {
        let mut root = node(0, Bounds::new(0, 0, 1080, 2400));
        root.class_name = "android.widget.FrameLayout".into();
        root.children = children;
        let mut tree = RawUiTree { roots: vec![root], screen_width: 1080, screen_height: 2400, capture_timestamp: 0 };
        renumber(&mut tree);
        tree
    }

    fn renumber(tree: &mut RawUiTree) {
        fn go(n: &mut UiNode, next: &mut usize) {
            n.node_id = *next;
            *next += 1;
            for c in &mut n.children {
                go(c, next);
            }
        }
        let mut next = 0;
        for r in &mut tree.roots {
            go(r, &mut next);
        }
    }

    #[test]
    fn single_clickable_ok() {
        let mut ok = node(0, Bounds::new(100, 200, 300, 260));
        ok.clickable = true;
        ok.text = "OK".into();
        ok.class_name = "android.widget.Button".into();
        let view = compress(&tree_of(vec![ok]));
        assert_eq!(view.len(), 1);
        let e = &view.elements[0];
        assert_eq!((e.index, e.label.as_str(), e.center()), (0, "OK", (200, 230)));
        assert_eq!(view.text_rendering, "0. OK (clickable) @(200,230)\n");
    }

    #[test]
    fn invisible_clickable_is_pruned() {
        let mut ok = node(0, Bounds::new(100, 200, 300, 260));
        ok.clickable = true;
        ok.visible = false;
        let view = compress(&tree_of(vec![ok]));
        assert!(view.is_empty());
        assert_eq!(view.text_rendering, "");
    }

    #[test]
    fn zero_area_is_pruned() {
        let mut flat = node(0, Bounds::new(100, 200, 300, 200));
        flat.clickable = true;
        assert!(compress(&tree_of(vec![flat])).is_empty());
    }

    #[test]
    fn forty_node_fixture_has_seven_elements() {
        let xml = include_str!("../../tests/fixtures/forty_nodes.xml");
        let tree = parse_hierarchy_xml(xml, 1080, 2400).unwrap();
        assert_eq!(tree.node_count(), 40);
        // Independent scan: count nodes satisfying the element rule directly.
        let brute: Vec<usize> = tree
            .iter()
            .filter(|n| {
                n.visible
                    && n.bounds.width() > 0
                    && n.bounds.height() > 0
                    && (n.clickable || n.long_clickable || n.focusable || n.scrollable || n.class_name.contains("EditText"))
            })
            .map(|n| n.node_id)
            .collect();
        assert_eq!(brute.len(), 7);
        let view = compress(&tree);
        assert_eq!(view.elements.iter().map(|e| e.index).collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
        assert_eq!(view.elements.iter().map(|e| e.source_node_id).collect::<Vec<_>>(), brute);
    }

    #[test]
    fn label_priority_and_inheritance() {
        let xml = include_str!("../../tests/fixtures/twelve_nodes.xml");
        let view = compress(&parse_hierarchy_xml(xml, 1080, 2400).unwrap());
        let labels: Vec<_> = view.elements.iter().map(|e| (e.label.as_str(), e.kind)).collect();
        assert_eq!(
            labels,
            vec![
                ("Search", ElementKind::Clickable),
                ("list", ElementKind::Scrollable),
                ("Alice Lunch tomorrow?", ElementKind::Clickable),
                ("Bob Report attached", ElementKind::Clickable),
                ("fab", ElementKind::Clickable),
            ]
        );
    }

    #[test]
    fn long_labels_are_truncated_in_rendering_only() {
        let mut b = node(0, Bounds::new(0, 200, 100, 300));
        b.clickable = true;
        b.text = "x".repeat(75);
        let view = compress(&tree_of(vec![b]));
        assert_eq!(view.elements[0].label.len(), 75);
        assert!(view.text_rendering.starts_with(&format!("0. {}... (clickable)", "x".repeat(60))));
    }

    #[test]
    fn rendering_parses_back() {
        let xml = include_str!("../../tests/fixtures/forty_nodes.xml");
        let view = compress(&parse_hierarchy_xml(xml, 1080, 2400).unwrap());
        let lines = parse_rendering(&view.text_rendering);
        assert_eq!(lines.len(), view.len());
        for (line, e) in lines.iter().zip(&view.elements) {
            assert_eq!((line.index, line.kind, line.center), (e.index, e.kind, e.center()));
        }
    }

    #[test]
    fn identical_trees_unchanged() {
        let xml = include_str!("../../tests/fixtures/twelve_nodes.xml");
        let t = parse_hierarchy_xml(xml, 1080, 2400).unwrap();
        assert!(!screen_changed(&t, &t.clone()));
    }

    #[test]
    fn clock_only_difference_is_ignored() {
        let build = |clock: &str, battery: &str| {
            let mut bar = node(0, Bounds::new(0, 0, 1080, 80));
            bar.clickable = true;
            bar.text = clock.into();
            let mut batt = node(0, Bounds::new(900, 0, 1080, 80));
            batt.focusable = true;
            batt.text = battery.into();
            // A clock readout outside the status band is still volatile.
            let mut widget = node(0, Bounds::new(0, 400, 1080, 600));
            widget.clickable = true;
            widget.text = clock.into();
            let mut ok = node(0, Bounds::new(100, 1000, 300, 1100));
            ok.clickable = true;
            ok.text = "OK".into();
            tree_of(vec![bar, batt, widget, ok])
        };
        let a = build("9:41", "80%");
        let b = build("9:42", "79%");
        assert_ne!(compress(&a).text_rendering, compress(&b).text_rendering);
        assert!(!screen_changed(&a, &b));
    }

    #[test]
    fn added_clickable_changes_screen() {
        let mut ok = node(0, Bounds::new(100, 1000, 300, 1100));
        ok.clickable = true;
        ok.text = "OK".into();
        let a = tree_of(vec![ok.clone()]);
        let mut cancel = ok.clone();
        cancel.text = "Cancel".into();
        cancel.bounds = Bounds::new(400, 1000, 600, 1100);
        let b = tree_of(vec![ok, cancel]);
        assert!(screen_changed(&a, &b));
        assert!(screen_changed(&b, &a));
    }
}
