//! Android view hierarchies as produced by `uiautomator dump`.
//!
//! A dump is parsed into a [`RawUiTree`], then compressed into a
//! [`CompressedView`]: the pre-ordered list of interactive elements whose
//! indices are shared by the text (XML) operation mode and the Set-of-Mark
//! screenshots. Sub-goal checks run [`NodePredicate`]s against raw trees.

mod compress;
mod parse;
mod predicate;

use serde::{Deserialize, Serialize};

pub use compress::{
    compress, parse_rendering, render_elements, screen_changed, CompressedView, ElementKind,
    ElementRef, RenderedLine, MAX_LABEL_CHARS,
};
pub use parse::{parse_hierarchy_xml, to_hierarchy_xml, UiTreeError};
pub use predicate::{match_predicate, NodePredicate};

/// Screen rectangle in pixels, `left <= right` and `top <= bottom`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct Bounds {
    pub left: i32,
    pub top: i32,
    pub right: i32,
    pub bottom: i32,
}

impl Bounds {
    pub const fn new(left: i32, top: i32, right: i32, bottom: i32) -> Self {
        Self { left, top, right, bottom }
    }

    pub fn width(&self) -> i32 {
        self.right - self.left
    }

    pub fn height(&self) -> i32 {
        self.bottom - self.top
    }

    pub fn area(&self) -> i64 {
        i64::from(self.width()) * i64::from(self.height())
    }

    pub fn is_empty(&self) -> bool {
        self.width() <= 0 || self.height() <= 0
    }

    /// Integer center, rounding toward the top-left.
    pub fn center(&self) -> (i32, i32) {
        ((self.left + self.right) / 2, (self.top + self.bottom) / 2)
    }

    /// Half-open containment test.
    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.left && x < self.right && y >= self.top && y < self.bottom
    }

    pub fn clamp_to(&self, width: u32, height: u32) -> Bounds {
        let w = width as i32;
        let h = height as i32;
        let left = self.left.clamp(0, w);
        let top = self.top.clamp(0, h);
        let right = self.right.clamp(0, w).max(left);
        let bottom = self.bottom.clamp(0, h).max(top);
        Bounds { left, top, right, bottom }
    }
}

impl std::fmt::Display for Bounds {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{},{}][{},{}]", self.left, self.top, self.right, self.bottom)
    }
}

/// One view in the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct UiNode {
    /// Document pre-order index, unique within a tree.
    pub node_id: usize,
    pub class_name: String,
    pub resource_id: String,
    pub text: String,
    pub content_desc: String,
    pub package: String,
    pub bounds: Bounds,
    pub clickable: bool,
    pub long_clickable: bool,
    pub focusable: bool,
    pub focused: bool,
    pub scrollable: bool,
    pub checkable: bool,
    pub checked: bool,
    pub enabled: bool,
    pub visible: bool,
    pub children: Vec<UiNode>,
}

impl UiNode {
    pub fn is_editable(&self) -> bool {
        self.class_name.contains("EditText")
    }

    /// Last segment of `resource_id` after the `/` separator.
    pub fn resource_id_leaf(&self) -> &str {
        match self.resource_id.rfind('/') {
            Some(pos) => &self.resource_id[pos + 1..],
            None => &self.resource_id,
        }
    }

    /// Last segment of the class name after the final `.`.
    pub fn class_leaf(&self) -> &str {
        match self.class_name.rfind('.') {
            Some(pos) => &self.class_name[pos + 1..],
            None => &self.class_name,
        }
    }

    pub fn iter(&self) -> PreOrder<'_> {
        PreOrder { stack: vec![self] }
    }
}

/// A parsed hierarchy with the screen it was captured on.
///
/// A dump may hold several top-level windows, hence `roots`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RawUiTree {
    pub roots: Vec<UiNode>,
    pub screen_width: u32,
    pub screen_height: u32,
    /// Milliseconds since the epoch (or the simulator's logical clock).
    pub capture_timestamp: i64,
}

impl RawUiTree {
    /// Pre-order traversal over every node.
    pub fn iter(&self) -> PreOrder<'_> {
        PreOrder { stack: self.roots.iter().rev().collect() }
    }

    pub fn node_count(&self) -> usize {
        self.iter().count()
    }

    pub fn find(&self, node_id: usize) -> Option<&UiNode> {
        self.iter().find(|n| n.node_id == node_id)
    }

    /// Package of the first top-level node, empty when the tree is empty.
    pub fn package(&self) -> &str {
        self.roots.first().map(|n| n.package.as_str()).unwrap_or("")
    }
}

pub struct PreOrder<'a> {
    stack: Vec<&'a UiNode>,
}

impl<'a> Iterator for PreOrder<'a> {
    type Item = &'a UiNode;

    fn next(&mut self) -> Option<&'a UiNode> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}
