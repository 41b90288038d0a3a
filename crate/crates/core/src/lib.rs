//! Core of the harness: UI-hierarchy compression, the action grammar, device
//! backends (ADB and a scripted simulator), Set-of-Mark rendering, the agent
//! loop, task evaluation, metrics, the suite runner and the demonstration
//! recorder.

pub mod actions;
pub mod api;
pub mod agent;
pub mod bench;
pub mod device;
pub mod evaluation;
pub mod metrics;
pub mod recorder;
pub mod som;
pub mod ui_tree;

pub(crate) mod util;

pub use actions::{Action, Direction, GroundedAction, SwipeDistance};
pub use device::{Device, DeviceConfig, DeviceError, DeviceHandle, Observation};
pub use ui_tree::{CompressedView, ElementRef, RawUiTree, UiNode};
