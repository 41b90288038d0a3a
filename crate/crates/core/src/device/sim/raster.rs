//! Synthetic screenshots: node boxes and labels drawn onto a canvas.

use image::{Rgba, RgbaImage};

use crate::som::{draw_text, fill, outline};
use crate::ui_tree::{RawUiTree, UiNode};

const BACKGROUND: Rgba<u8> = Rgba([250, 250, 250, 255]);
const BUTTON: Rgba<u8> = Rgba([236, 236, 242, 255]);
const BUTTON_EDGE: Rgba<u8> = Rgba([196, 196, 206, 255]);
const FIELD_EDGE: Rgba<u8> = Rgba([40, 100, 220, 255]);
const STATUS_BAR: Rgba<u8> = Rgba([33, 33, 33, 255]);
const INK: Rgba<u8> = Rgba([20, 20, 20, 255]);
const INK_LIGHT: Rgba<u8> = Rgba([245, 245, 245, 255]);
const SWITCH_ON: Rgba<u8> = Rgba([46, 160, 67, 255]);
const SWITCH_OFF: Rgba<u8> = Rgba([170, 170, 170, 255]);

pub fn rasterize(tree: &RawUiTree) -> RgbaImage {
    let mut img = RgbaImage::from_pixel(tree.screen_width, tree.screen_height, BACKGROUND);
    let scale = ((f64::from(tree.screen_width) * 3.0 / 1080.0).round() as u32).max(1);
    for root in &tree.roots {
        draw_node(&mut img, root, scale, false);
    }
    img
}

fn draw_node(img: &mut RgbaImage, node: &UiNode, scale: u32, dark: bool) {
    if !node.visible {
        return;
    }
    let b = node.bounds;
    let dark = dark || node.resource_id.ends_with("status_bar");
    if node.resource_id.ends_with("status_bar") {
        fill(img, &b, STATUS_BAR);
    } else if node.is_editable() {
        fill(img, &b, Rgba([255, 255, 255, 255]));
        outline(img, &b, 2, FIELD_EDGE);
    } else if node.clickable || node.long_clickable {
        fill(img, &b, BUTTON);
        outline(img, &b, 1, BUTTON_EDGE);
    }
    if node.checkable {
        let size = b.height().min(48) / 2;
        let knob = crate::ui_tree::Bounds::new(b.right - 2 * size - 16, b.top + size / 2, b.right - 16, b.top + size / 2 + size);
        fill(img, &knob, if node.checked { SWITCH_ON } else { SWITCH_OFF });
    }
    let label = if node.text.is_empty() { &node.content_desc } else { &node.text };
    if !label.is_empty() && (node.children.is_empty() || !node.text.is_empty()) {
        let glyph = (8 * scale) as i32;
        let y = b.top + (b.height() - glyph).max(0) / 2;
        draw_text(img, label, b.left + 16, y, scale, if dark { INK_LIGHT } else { INK });
    }
    for child in &node.children {
        draw_node(img, child, scale, dark);
    }
}
