//! Device abstraction with an ADB backend and a deterministic simulator.

mod adb;
pub mod sim;

use std::path::PathBuf;
use std::time::Duration;

use chrono::NaiveDateTime;
use image::RgbaImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::GroundedAction;
use crate::recorder::TouchEvent;
use crate::ui_tree::RawUiTree;

pub use adb::{parse_getevent_line, AdbDevice, CmdOutput, CommandRunner, GeteventParser, SystemRunner};
pub use sim::{SimApp, SimDevice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Adb,
    #[default]
    Sim,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adb" => Ok(Backend::Adb),
            "sim" => Ok(Backend::Sim),
            other => Err(format!("unknown device backend {other:?} (expected adb or sim)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XmlPoll {
    pub attempts: u32,
    pub delay_ms: u64,
}

impl Default for XmlPoll {
    fn default() -> Self {
        Self { attempts: 3, delay_ms: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub backend: Backend,
    /// ADB serial; may be omitted when exactly one device is attached.
    pub serial: Option<String>,
    pub screen_width: u32,
    pub screen_height: u32,
    /// Seconds to wait after each performed action.
    pub step_interval: f64,
    pub fixed_time: Option<NaiveDateTime>,
    pub fixed_geo: Option<GeoPoint>,
    pub xml_poll: XmlPoll,
    /// Extra simulator app definitions; files here override bundled apps
    /// with the same `app_id`.
    pub sim_apps_dir: Option<PathBuf>,
    pub adb_path: Option<PathBuf>,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Sim,
            serial: None,
            screen_width: 1080,
            screen_height: 2400,
            step_interval: 3.0,
            fixed_time: None,
            fixed_geo: None,
            xml_poll: XmlPoll::default(),
            sim_apps_dir: None,
            adb_path: None,
        }
    }
}

impl DeviceConfig {
    pub fn sim() -> Self {
        Self::default()
    }

    pub fn with_step_interval(mut self, seconds: f64) -> Self {
        self.step_interval = seconds;
        self
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.screen_width == 0 || self.screen_height == 0 {
            return Err(DeviceError::Config("screen dimensions must be positive".into()));
        }
        if !self.step_interval.is_finite() || self.step_interval < 0.0 {
            return Err(DeviceError::Config("step_interval must be a non-negative number of seconds".into()));
        }
        if self.xml_poll.attempts == 0 {
            return Err(DeviceError::Config("xml_poll.attempts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn screen(&self) -> (u32, u32) {
        (self.screen_width, self.screen_height)
    }

    pub(crate) fn pause_after_action(&self) {
        if self.step_interval > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(self.step_interval));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Screenshot {
    Rgba(RgbaImage),
    Png(Vec<u8>),
}

impl Screenshot {
    pub fn to_rgba(&self) -> Result<RgbaImage, DeviceError> {
        match self {
            Screenshot::Rgba(img) => Ok(img.clone()),
            Screenshot::Png(bytes) => crate::som::decode_png(bytes).map_err(|e| DeviceError::Parse(format!("screenshot: {e}"))),
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>, DeviceError> {
        match self {
            Screenshot::Rgba(img) => crate::som::encode_png(img).map_err(|e| DeviceError::Io(e.to_string())),
            Screenshot::Png(bytes) => Ok(bytes.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub tree: RawUiTree,
    /// The hierarchy document the tree was parsed from.
    pub xml: String,
    pub screenshot: Option<Screenshot>,
    pub foreground_app: String,
    pub capture_timestamp: i64,
    /// Key-value state of every simulated app, keyed by app id. Absent on
    /// real devices.
    pub device_state: Option<serde_json::Value>,
    /// Failed dump attempts before this capture succeeded.
    pub xml_retries: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("no matching device attached{}", .0.as_deref().map(|s| format!(" (serial {s})")).unwrap_or_default())]
    DeviceNotFound(Option<String>),
    #[error("several devices attached ({}); pass a serial", .0.join(", "))]
    MultipleDevices(Vec<String>),
    #[error("adb is not available: {0}")]
    AdbUnavailable(String),
    #[error("could not acquire the UI hierarchy after {attempts} attempts")]
    XmlAcquisitionFailed { attempts: u32 },
    #[error("`{command}` failed: {message}")]
    ExecutionFailed { command: String, message: String },
    #[error("no editable field has focus")]
    NoFocusedField,
    #[error("unknown app {0:?}")]
    UnknownApp(String),
    #[error("app {app:?} has no fixture {fixture:?}")]
    UnknownFixture { app: String, fixture: String },
    #[error("not supported by this backend: {0}")]
    Unsupported(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("invalid simulator app: {0}")]
    SimDefinition(String),
    #[error("invalid device config: {0}")]
    Config(String),
}

impl DeviceError {
    /// Errors that make one action ineffective without breaking the session.
    pub fn is_action_level(&self) -> bool {
        matches!(self, DeviceError::NoFocusedField)
    }
}

impl From<std::io::Error> for DeviceError {
    fn from(e: std::io::Error) -> Self {
        DeviceError::Io(e.to_string())
    }
}

/// One device session. Not shared between threads concurrently, but may be
/// moved between them.
pub trait Device: Send {
    fn screen(&self) -> (u32, u32);

    fn observe(&mut self, with_screenshot: bool) -> Result<Observation, DeviceError>;

    /// Executes the action and then waits the configured step interval.
    fn perform(&mut self, action: &GroundedAction) -> Result<(), DeviceError>;

    /// Restores the initial environment and foregrounds `app`.
    fn reset(&mut self, app: &str, fixture: Option<&str>) -> Result<(), DeviceError>;

    fn installed_apps(&self) -> Vec<String>;

    /// Whether the device is operated by hand (a real phone) rather than by
    /// the harness injecting gestures.
    fn external_input(&self) -> bool {
        false
    }

    /// Blocks until one complete touch gesture has been read from the
    /// device's input stream, or the timeout passes.
    fn next_gesture(&mut self, _timeout: Duration) -> Result<Option<Vec<TouchEvent>>, DeviceError> {
        Err(DeviceError::Unsupported("touch event capture".into()))
    }
}

pub type DeviceHandle = Box<dyn Device>;

/// Opens a session on the configured backend.
pub fn setup(config: &DeviceConfig) -> Result<DeviceHandle, DeviceError> {
    config.validate()?;
    match config.backend {
        Backend::Sim => Ok(Box::new(SimDevice::new(config.clone())?)),
        Backend::Adb => {
            let adb = config.adb_path.clone().unwrap_or_else(|| PathBuf::from("adb"));
            Ok(Box::new(AdbDevice::connect(config.clone(), Box::new(SystemRunner::new(adb)))?))
        }
    }
}
