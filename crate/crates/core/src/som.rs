//! Set-of-Mark overlays: every compressed-view element outlined and tagged
//! with its index, so a multimodal model can name elements by number.

use std::io::Cursor;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ui_tree::{Bounds, CompressedView};

/// Style reference width; stroke and font sizes scale with the image width.
const REFERENCE_WIDTH: f64 = 1080.0;
const STROKE_PX: f64 = 3.0;
const FONT_PX: f64 = 28.0;
const TAG_PADDING_PX: f64 = 4.0;
const GLYPH_CELLS: u32 = 8;

pub const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [128, 0, 0],
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SomError {
    #[error("screenshot is {got:?} but the view was compressed from a {want:?} screen")]
    DimensionMismatch { got: (u32, u32), want: (u32, u32) },
    #[error("png encoding failed: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub index: usize,
    pub bounds: Bounds,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SomImage {
    /// PNG-encoded annotated screenshot.
    pub png: Vec<u8>,
    pub legend: Vec<LegendEntry>,
}

/// Pixel sizes derived from the image width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkStyle {
    pub stroke: u32,
    pub glyph_scale: u32,
    pub padding: u32,
}

impl MarkStyle {
    pub fn for_width(width: u32) -> Self {
        let scale = f64::from(width) / REFERENCE_WIDTH;
        let px = |v: f64| ((v * scale).round() as u32).max(1);
        Self {
            stroke: px(STROKE_PX),
            glyph_scale: ((FONT_PX * scale / f64::from(GLYPH_CELLS)).round() as u32).max(1),
            padding: px(TAG_PADDING_PX),
        }
    }
}

/// Rectangle of the number tag for `index` at `bounds`: anchored inside the
/// element's top-left corner, shifted inward when it would leave the image.
pub fn tag_rect(index: usize, bounds: &Bounds, image_size: (u32, u32), style: MarkStyle) -> Bounds {
    let digits = index.to_string().len() as u32;
    let tag_w = (digits * GLYPH_CELLS * style.glyph_scale + 2 * style.padding) as i32;
    let tag_h = (GLYPH_CELLS * style.glyph_scale + 2 * style.padding) as i32;
    let (w, h) = (image_size.0 as i32, image_size.1 as i32);
    let left = bounds.left.min(w - tag_w).max(0);
    let top = bounds.top.min(h - tag_h).max(0);
    Bounds::new(left, top, (left + tag_w).min(w), (top + tag_h).min(h))
}

/// Draws the marks and returns the raw image with its legend.
pub fn render_som_rgba(screenshot: &RgbaImage, view: &CompressedView) -> Result<(RgbaImage, Vec<LegendEntry>), SomError> {
    let got = screenshot.dimensions();
    let want = (view.screen_width, view.screen_height);
    if got != want {
        return Err(SomError::DimensionMismatch { got, want });
    }
    let mut img = screenshot.clone();
    let style = MarkStyle::for_width(got.0);
    let mut legend = Vec::with_capacity(view.len());
    for element in &view.elements {
        let [r, g, b] = PALETTE[element.index % PALETTE.len()];
        let color = Rgba([r, g, b, 255]);
        outline(&mut img, &element.bounds, style.stroke, color);
        let tag = tag_rect(element.index, &element.bounds, got, style);
        fill(&mut img, &tag, color);
        let luminance = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
        let ink = if luminance > 150.0 { Rgba([0, 0, 0, 255]) } else { Rgba([255, 255, 255, 255]) };
        draw_text(
            &mut img,
            &element.index.to_string(),
            tag.left + style.padding as i32,
            tag.top + style.padding as i32,
            style.glyph_scale,
            ink,
        );
        legend.push(LegendEntry { index: element.index, bounds: element.bounds, label: element.label.clone() });
    }
    Ok((img, legend))
}

pub fn render_som(screenshot: &RgbaImage, view: &CompressedView) -> Result<SomImage, SomError> {
    let (img, legend) = render_som_rgba(screenshot, view)?;
    Ok(SomImage { png: encode_png(&img)?, legend })
}

pub fn encode_png(img: &RgbaImage) -> Result<Vec<u8>, SomError> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(Cursor::new(&mut out), CompressionType::Fast, FilterType::Adaptive)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgba8)
        .map_err(|e| SomError::Encode(e.to_string()))?;
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbaImage, image::ImageError> {
    Ok(image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgba8())
}

pub(crate) fn fill(img: &mut RgbaImage, rect: &Bounds, color: Rgba<u8>) {
    let r = rect.clamp_to(img.width(), img.height());
    for y in r.top..r.bottom {
        for x in r.left..r.right {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

pub(crate) fn outline(img: &mut RgbaImage, rect: &Bounds, stroke: u32, color: Rgba<u8>) {
    let r = rect.clamp_to(img.width(), img.height());
    if r.is_empty() {
        return;
    }
    let s = (stroke as i32).min(r.width()).min(r.height());
    fill(img, &Bounds::new(r.left, r.top, r.right, r.top + s), color);
    fill(img, &Bounds::new(r.left, r.bottom - s, r.right, r.bottom), color);
    fill(img, &Bounds::new(r.left, r.top, r.left + s, r.bottom), color);
    fill(img, &Bounds::new(r.right - s, r.top, r.right, r.bottom), color);
}

/// Draws ASCII text with the 8x8 bitmap font; other characters render as
/// blanks. Pixels outside the image are skipped.
pub(crate) fn draw_text(img: &mut RgbaImage, text: &str, x: i32, y: i32, scale: u32, color: Rgba<u8>) {
    let cell = (GLYPH_CELLS * scale) as i32;
    let (w, h) = (img.width() as i32, img.height() as i32);
    for (i, ch) in text.chars().enumerate() {
        let code = ch as usize;
        if code >= 128 {
            continue;
        }
        let glyph = font8x8::legacy::BASIC_LEGACY[code];
        let gx = x + i as i32 * cell;
        if gx >= w {
            break;
        }
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits & (1 << col) == 0 {
                    continue;
                }
                for dy in 0..scale as i32 {
                    for dx in 0..scale as i32 {
                        let px = gx + col * scale as i32 + dx;
                        let py = y + row as i32 * scale as i32 + dy;
                        if (0..w).contains(&px) && (0..h).contains(&py) {
                            img.put_pixel(px as u32, py as u32, color);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ui_tree::{ElementKind, ElementRef};

    fn view(bounds: &[Bounds], w: u32, h: u32) -> CompressedView {
        let elements: Vec<ElementRef> = bounds
            .iter()
            .enumerate()
            .map(|(i, b)| ElementRef { index: i, source_node_id: i, bounds: *b, label: format!("e{i}"), kind: ElementKind::Clickable })
            .collect();
        CompressedView { text_rendering: crate::ui_tree::render_elements(&elements), elements, screen_width: w, screen_height: h }
    }

    fn canvas(w: u32, h: u32) -> RgbaImage {
        RgbaImage::from_fn(w, h, |x, y| Rgba([(x % 251) as u8, (y % 241) as u8, 90, 255]))
    }

    #[test]
    fn empty_view_is_identity() {
        let shot = canvas(120, 200);
        let som = render_som(&shot, &view(&[], 120, 200)).unwrap();
        assert!(som.legend.is_empty());
        assert_eq!(decode_png(&som.png).unwrap(), shot);
    }

    #[test]
    fn legend_matches_indices() {
        let b = [Bounds::new(10, 10, 60, 60), Bounds::new(70, 10, 110, 60), Bounds::new(10, 100, 110, 190)];
        let som = render_som(&canvas(120, 200), &view(&b, 120, 200)).unwrap();
        assert_eq!(som.legend.iter().map(|e| e.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(som.legend[2].bounds, b[2]);
    }

    #[test]
    fn left_edge_tag_stays_inside() {
        let (w, h) = (1080, 2400);
        let b = Bounds::new(0, 500, 300, 700);
        let style = MarkStyle::for_width(w);
        let tag = tag_rect(0, &b, (w, h), style);
        assert!(tag.left >= 0 && tag.right <= w as i32 && tag.top >= 0 && tag.bottom <= h as i32);
        assert!(tag.left >= b.left && tag.right <= b.right && tag.top >= b.top && tag.bottom <= b.bottom);
        // Tags near the right and bottom edges shift inward.
        let corner = tag_rect(123, &Bounds::new(1070, 2390, 1080, 2400), (w, h), style);
        assert_eq!((corner.right, corner.bottom), (w as i32, h as i32));
        let (img, _) = render_som_rgba(&canvas(w, h), &view(&[b], w, h)).unwrap();
        // The tag is filled with the palette color of index 0.
        let [r, g, bl] = PALETTE[0];
        assert_eq!(*img.get_pixel(tag.left as u32, tag.top as u32), Rgba([r, g, bl, 255]));
    }

    #[test]
    fn rendering_is_deterministic() {
        let b = [Bounds::new(5, 5, 50, 40), Bounds::new(0, 0, 120, 200)];
        let v = view(&b, 120, 200);
        let a = render_som(&canvas(120, 200), &v).unwrap();
        let c = render_som(&canvas(120, 200), &v).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn dimension_mismatch() {
        assert_eq!(
            render_som(&canvas(10, 10), &view(&[], 20, 20)).unwrap_err(),
            SomError::DimensionMismatch { got: (10, 10), want: (20, 20) }
        );
    }

    #[test]
    fn style_scales_with_width() {
        assert_eq!(MarkStyle::for_width(1080), MarkStyle { stroke: 3, glyph_scale: 4, padding: 4 });
        assert_eq!(MarkStyle::for_width(540), MarkStyle { stroke: 2, glyph_scale: 2, padding: 2 });
    }
}
