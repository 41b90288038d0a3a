use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{Action, Direction, SwipeDistance};
use crate::ui_tree::CompressedView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TouchKind {
    Down,
    Move,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TouchEvent {
    pub kind: TouchKind,
    pub x: i32,
    pub y: i32,
    /// Milliseconds, on any monotonic clock.
    pub t: i64,
}

impl TouchEvent {
    pub fn new(kind: TouchKind, x: i32, y: i32, t: i64) -> Self {
        Self { kind, x, y, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GestureThresholds {
    pub tap_radius: f64,
    pub long_press_ms: i64,
}

impl Default for GestureThresholds {
    fn default() -> Self {
        Self { tap_radius: 24.0, long_press_ms: 600 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum GestureClass {
    Tap,
    LongPress,
    Swipe { direction: Direction },
}

/// A classified gesture with the geometry needed to ground it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gesture {
    pub class: GestureClass,
    pub down: (i32, i32),
    pub up: (i32, i32),
    pub duration_ms: i64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GestureError {
    #[error("a gesture must start with down and end with up")]
    Malformed,
    #[error("events are not in time order")]
    Unordered,
    #[error("no element under ({x},{y})")]
    NoHitElement { x: i32, y: i32 },
}

/// Classifies one down..up event stream.
///
/// The displacement is the straight-line distance from the down point to
/// the up point. Within `tap_radius` the press duration decides between tap
/// and long press; beyond it the gesture is a swipe along its dominant axis.
pub fn classify_gesture(events: &[TouchEvent], thresholds: GestureThresholds) -> Result<Gesture, GestureError> {
    let (first, last) = match (events.first(), events.last()) {
        (Some(f), Some(l)) if f.kind == TouchKind::Down && l.kind == TouchKind::Up => (f, l),
        _ => return Err(GestureError::Malformed),
    };
    if events.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(GestureError::Unordered);
    }
    let dx = f64::from(last.x - first.x);
    let dy = f64::from(last.y - first.y);
    let displacement = dx.hypot(dy);
    let duration_ms = last.t - first.t;
    let class = if displacement <= thresholds.tap_radius {
        if duration_ms >= thresholds.long_press_ms {
            GestureClass::LongPress
        } else {
            GestureClass::Tap
        }
    } else {
        GestureClass::Swipe { direction: Direction::of_motion(last.x - first.x, last.y - first.y) }
    };
    Ok(Gesture { class, down: (first.x, first.y), up: (last.x, last.y), duration_ms })
}

/// Turns a gesture into an element-indexed action by hit-testing the down
/// point: the last element in pre-order whose bounds contain it, which is
/// the innermost one for nested elements.
pub fn resolve_gesture(gesture: &Gesture, view: &CompressedView) -> Result<Action, GestureError> {
    let (x, y) = gesture.down;
    let element = view
        .elements
        .iter()
        .rev()
        .find(|e| e.bounds.contains(x, y))
        .map(|e| e.index)
        .ok_or(GestureError::NoHitElement { x, y })?;
    Ok(match gesture.class {
        GestureClass::Tap => Action::Tap { element },
        GestureClass::LongPress => Action::LongPress { element },
        GestureClass::Swipe { direction } => {
            let (travel, dim) = match direction {
                Direction::Up | Direction::Down => ((gesture.up.1 - y).abs(), view.screen_height),
                Direction::Left | Direction::Right => ((gesture.up.0 - x).abs(), view.screen_width),
            };
            let fraction = f64::from(travel) / f64::from(dim.max(1));
            Action::Swipe { element, direction, distance: SwipeDistance::from_fraction(fraction) }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use TouchKind::*;

    fn ev(kind: TouchKind, x: i32, y: i32, t: i64) -> TouchEvent {
        TouchEvent::new(kind, x, y, t)
    }

    fn class(events: &[TouchEvent]) -> GestureClass {
        classify_gesture(events, GestureThresholds::default()).unwrap().class
    }

    #[test]
    fn documented_examples() {
        assert_eq!(class(&[ev(Down, 500, 500, 0), ev(Up, 503, 498, 120)]), GestureClass::Tap);
        assert_eq!(class(&[ev(Down, 500, 500, 0), ev(Up, 500, 501, 900)]), GestureClass::LongPress);
        assert_eq!(
            class(&[ev(Down, 540, 1500, 0), ev(Move, 540, 1100, 120), ev(Up, 540, 700, 250)]),
            GestureClass::Swipe { direction: Direction::Up }
        );
    }

    #[test]
    fn malformed_streams() {
        let t = GestureThresholds::default();
        assert_eq!(classify_gesture(&[], t), Err(GestureError::Malformed));
        assert_eq!(classify_gesture(&[ev(Move, 1, 1, 0), ev(Up, 1, 1, 5)], t), Err(GestureError::Malformed));
        assert_eq!(classify_gesture(&[ev(Down, 1, 1, 0)], t), Err(GestureError::Malformed));
        assert_eq!(classify_gesture(&[ev(Down, 1, 1, 9), ev(Up, 1, 1, 5)], t), Err(GestureError::Unordered));
    }
}
