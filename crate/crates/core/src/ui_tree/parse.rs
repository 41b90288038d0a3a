use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

use super::{Bounds, RawUiTree, UiNode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UiTreeError {
    #[error("malformed hierarchy xml: {0}")]
    MalformedXml(String),
    #[error("node #{node} has no bounds attribute")]
    MissingBounds { node: usize },
    #[error("node #{node} has unparseable bounds {value:?}")]
    InvalidBounds { node: usize, value: String },
}

/// Parses a `uiautomator dump` document.
///
/// Missing boolean attributes read as `false` and missing strings as empty,
/// except visibility: dumps from older platform versions omit
/// `visible-to-user`, so an absent attribute means visible.
pub fn parse_hierarchy_xml(
    xml_text: &str,
    screen_width: u32,
    screen_height: u32,
) -> Result<RawUiTree, UiTreeError> {
    let mut reader = Reader::from_str(xml_text);
    reader.config_mut().trim_text(true);

    let mut roots: Vec<UiNode> = Vec::new();
    let mut stack: Vec<UiNode> = Vec::new();
    // Tracks open non-node elements so we know where nodes attach.
    let mut open: Vec<bool> = Vec::new();
    let mut next_id = 0usize;
    let mut top_level_elements = 0usize;

    loop {
        let event = reader
            .read_event()
            .map_err(|e| UiTreeError::MalformedXml(format!("at byte {}: {e}", reader.buffer_position())))?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let is_empty = matches!(event, Event::Empty(_));
                if open.is_empty() {
                    top_level_elements += 1;
                    if top_level_elements > 1 {
                        return Err(UiTreeError::MalformedXml("more than one root element".into()));
                    }
                }
                let is_node = e.name().as_ref() == "node";
                if is_node {
                    let node = node_from_attrs(e, next_id, screen_width, screen_height)?;
                    next_id += 1;
                    if is_empty {
                        attach(node, &mut stack, &mut roots);
                    } else {
                        stack.push(node);
                        open.push(true);
                    }
                } else if !is_empty {
                    open.push(false);
                }
            }
            Event::End(_) => match open.pop() {
                Some(true) => {
                    let node = stack.pop().expect("node stack mirrors open elements");
                    attach(node, &mut stack, &mut roots);
                }
                Some(false) => {}
                None => return Err(UiTreeError::MalformedXml("unbalanced end tag".into())),
            },
            Event::Eof => break,
            _ => {}
        }
    }
    if !open.is_empty() {
        return Err(UiTreeError::MalformedXml("unexpected end of document".into()));
    }
    if top_level_elements == 0 {
        return Err(UiTreeError::MalformedXml("document has no root element".into()));
    }
    Ok(RawUiTree { roots, screen_width, screen_height, capture_timestamp: 0 })
}

fn attach(node: UiNode, stack: &mut [UiNode], roots: &mut Vec<UiNode>) {
    match stack.last_mut() {
        Some(parent) => parent.children.push(node),
        None => roots.push(node),
    }
}

fn node_from_attrs(
    e: &BytesStart<'_>,
    node_id: usize,
    screen_width: u32,
    screen_height: u32,
) -> Result<UiNode, UiTreeError> {
    let mut node = UiNode { node_id, visible: true, ..UiNode::default() };
    let mut bounds: Option<String> = None;
    for attr in e.attributes() {
        let attr = attr.map_err(|err| UiTreeError::MalformedXml(err.to_string()))?;
        let value = attr
            .normalized_value(quick_xml::XmlVersion::Implicit1_0)
            .map_err(|err| UiTreeError::MalformedXml(err.to_string()))?
            .into_owned();
        let flag = value == "true";
        match attr.key.as_ref() {
            "class" => node.class_name = value,
            "resource-id" => node.resource_id = value,
            "text" => node.text = value,
            "content-desc" => node.content_desc = value,
            "package" => node.package = value,
            "bounds" => bounds = Some(value),
            "clickable" => node.clickable = flag,
            "long-clickable" => node.long_clickable = flag,
            "focusable" => node.focusable = flag,
            "focused" => node.focused = flag,
            "scrollable" => node.scrollable = flag,
            "checkable" => node.checkable = flag,
            "checked" => node.checked = flag,
            "enabled" => node.enabled = flag,
            "visible-to-user" | "visible" => node.visible = flag,
            _ => {}
        }
    }
    let raw = bounds.ok_or(UiTreeError::MissingBounds { node: node_id })?;
    let parsed = parse_bounds(&raw).ok_or(UiTreeError::InvalidBounds { node: node_id, value: raw })?;
    node.bounds = parsed.clamp_to(screen_width, screen_height);
    Ok(node)
}

/// Parses the `[l,t][r,b]` bounds convention.
fn parse_bounds(raw: &str) -> Option<Bounds> {
    let inner = raw.trim().strip_prefix('[')?.strip_suffix(']')?;
    let (first, second) = inner.split_once("][")?;
    let pair = |s: &str| -> Option<(i32, i32)> {
        let (a, b) = s.split_once(',')?;
        Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
    };
    let (left, top) = pair(first)?;
    let (right, bottom) = pair(second)?;
    Some(Bounds { left, top, right, bottom })
}

/// Serializes a tree back into `uiautomator dump` form.
pub fn to_hierarchy_xml(tree: &RawUiTree) -> String {
    let mut out = String::with_capacity(256 + tree.node_count() * 320);
    out.push_str("<?xml version='1.0' encoding='UTF-8' standalone='yes' ?>");
    out.push_str("<hierarchy rotation=\"0\">");
    for root in &tree.roots {
        write_node(root, 0, &mut out);
    }
    out.push_str("</hierarchy>");
    out
}

fn write_node(node: &UiNode, index: usize, out: &mut String) {
    use std::fmt::Write;
    let _ = write!(
        out,
        "<node index=\"{index}\" text=\"{}\" resource-id=\"{}\" class=\"{}\" package=\"{}\" content-desc=\"{}\" \
         checkable=\"{}\" checked=\"{}\" clickable=\"{}\" enabled=\"{}\" focusable=\"{}\" focused=\"{}\" \
         scrollable=\"{}\" long-clickable=\"{}\" password=\"false\" selected=\"false\" visible-to-user=\"{}\" bounds=\"{}\"",
        escape_attr(&node.text),
        escape_attr(&node.resource_id),
        escape_attr(&node.class_name),
        escape_attr(&node.package),
        escape_attr(&node.content_desc),
        node.checkable,
        node.checked,
        node.clickable,
        node.enabled,
        node.focusable,
        node.focused,
        node.scrollable,
        node.long_clickable,
        node.visible,
        node.bounds,
    );
    if node.children.is_empty() {
        out.push_str(" />");
    } else {
        out.push('>');
        for (i, child) in node.children.iter().enumerate() {
            write_node(child, i, out);
        }
        out.push_str("</node>");
    }
}

fn escape_attr(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
    out
}
