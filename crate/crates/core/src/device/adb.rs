use std::collections::VecDeque;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use base64::Engine;

use super::{Device, DeviceConfig, DeviceError, Observation, Screenshot};
use crate::actions::GroundedAction;
use crate::recorder::{TouchEvent, TouchKind};
use crate::ui_tree::parse_hierarchy_xml;
use crate::util::now_ms;

const DUMP_PATH: &str = "/sdcard/window_dump.xml";
const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CmdOutput {
    pub status: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

impl CmdOutput {
    pub fn ok(stdout: impl Into<Vec<u8>>) -> Self {
        Self { status: 0, stdout: stdout.into(), stderr: String::new() }
    }

    pub fn stdout_text(&self) -> String {
        String::from_utf8_lossy(&self.stdout).into_owned()
    }
}

/// Runs `adb` invocations. Swappable so tests can script device replies.
pub trait CommandRunner: Send {
    fn run(&mut self, args: &[String]) -> std::io::Result<CmdOutput>;

    /// Starts a long-running command and streams its stdout lines.
    fn stream_lines(&mut self, args: &[String]) -> std::io::Result<Receiver<String>>;
}

pub struct SystemRunner {
    adb: PathBuf,
    streams: Vec<Child>,
}

impl SystemRunner {
    pub fn new(adb: PathBuf) -> Self {
        Self { adb, streams: Vec::new() }
    }
}

impl CommandRunner for SystemRunner {
    fn run(&mut self, args: &[String]) -> std::io::Result<CmdOutput> {
        let out = Command::new(&self.adb).args(args).stdin(Stdio::null()).output()?;
        Ok(CmdOutput {
            status: out.status.code().unwrap_or(-1),
            stdout: out.stdout,
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        })
    }

    fn stream_lines(&mut self, args: &[String]) -> std::io::Result<Receiver<String>> {
        let mut child = Command::new(&self.adb).args(args).stdin(Stdio::null()).stdout(Stdio::piped()).spawn()?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        self.streams.push(child);
        Ok(rx)
    }
}

impl Drop for SystemRunner {
    fn drop(&mut self) {
        for child in &mut self.streams {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

pub struct AdbDevice {
    config: DeviceConfig,
    serial: String,
    runner: Box<dyn CommandRunner>,
    events: Option<Receiver<String>>,
    parser: GeteventParser,
    gesture: Vec<TouchEvent>,
    ready: VecDeque<Vec<TouchEvent>>,
}

impl AdbDevice {
    /// Picks the device, then applies the configured clock and location.
    pub fn connect(config: DeviceConfig, mut runner: Box<dyn CommandRunner>) -> Result<Self, DeviceError> {
        let out = runner.run(&["devices".to_string()]).map_err(|e| DeviceError::AdbUnavailable(e.to_string()))?;
        if out.status != 0 {
            return Err(DeviceError::AdbUnavailable(out.stderr.trim().to_string()));
        }
        let attached = parse_devices(&out.stdout_text());
        let serial = match &config.serial {
            Some(want) => attached.iter().find(|s| *s == want).cloned().ok_or(DeviceError::DeviceNotFound(Some(want.clone())))?,
            None => match attached.as_slice() {
                [] => return Err(DeviceError::DeviceNotFound(None)),
                [one] => one.clone(),
                many => return Err(DeviceError::MultipleDevices(many.to_vec())),
            },
        };
        let parser = GeteventParser::new(config.screen());
        let mut device =
            Self { config, serial, runner, events: None, parser, gesture: Vec::new(), ready: VecDeque::new() };
        device.apply_environment();
        Ok(device)
    }

    pub fn serial(&self) -> &str {
        &self.serial
    }

    fn adb(&mut self, args: &[&str]) -> Result<CmdOutput, DeviceError> {
        let mut full = vec!["-s".to_string(), self.serial.clone()];
        full.extend(args.iter().map(|s| s.to_string()));
        let command = format!("adb {}", full.join(" "));
        log::debug!("{command}");
        let out = self.runner.run(&full).map_err(|e| DeviceError::ExecutionFailed { command: command.clone(), message: e.to_string() })?;
        if out.status != 0 {
            let message = format!("exit status {}: {}", out.status, out.stderr.trim());
            return Err(DeviceError::ExecutionFailed { command, message });
        }
        Ok(out)
    }

    fn apply_environment(&mut self) {
        if let Some(at) = self.config.fixed_time {
            let stamp = at.format("%m%d%H%M%Y.%S").to_string();
            let result = self
                .adb(&["shell", "settings", "put", "global", "auto_time", "0"])
                .and_then(|_| self.adb(&["shell", "su", "0", "date", &stamp]));
            if let Err(e) = result {
                log::warn!("could not set device clock to {at}; recorded only ({e})");
            }
        }
        if let Some(geo) = self.config.fixed_geo {
            let (lon, lat) = (geo.lon.to_string(), geo.lat.to_string());
            if let Err(e) = self.adb(&["emu", "geo", "fix", &lon, &lat]) {
                log::warn!("could not set location to {lat},{lon}; recorded only ({e})");
            }
        }
    }

    fn dump_once(&mut self) -> Result<String, DeviceError> {
        let out = self.adb(&["shell", "uiautomator", "dump", DUMP_PATH])?;
        let text = out.stdout_text();
        if !text.contains("dumped to") {
            return Err(DeviceError::Parse(format!("uiautomator: {}", text.trim())));
        }
        let xml = self.adb(&["exec-out", "cat", DUMP_PATH])?;
        String::from_utf8(xml.stdout).map_err(|e| DeviceError::Parse(e.to_string()))
    }

    fn ensure_event_stream(&mut self) -> Result<(), DeviceError> {
        if self.events.is_some() {
            return Ok(());
        }
        let info = self.adb(&["shell", "getevent", "-lp"])?.stdout_text();
        self.parser.set_axis_max(parse_abs_max(&info, "ABS_MT_POSITION_X"), parse_abs_max(&info, "ABS_MT_POSITION_Y"));
        let args: Vec<String> =
            ["-s", &self.serial, "shell", "getevent", "-lt"].iter().map(|s| s.to_string()).collect();
        self.events = Some(self.runner.stream_lines(&args)?);
        Ok(())
    }
}

impl Device for AdbDevice {
    fn screen(&self) -> (u32, u32) {
        self.config.screen()
    }

    fn observe(&mut self, with_screenshot: bool) -> Result<Observation, DeviceError> {
        let (w, h) = self.config.screen();
        let attempts = self.config.xml_poll.attempts;
        let mut captured = None;
        for attempt in 0..attempts {
            match self.dump_once().and_then(|xml| {
                let tree = parse_hierarchy_xml(&xml, w, h).map_err(|e| DeviceError::Parse(e.to_string()))?;
                Ok((xml, tree))
            }) {
                Ok(ok) => {
                    captured = Some((ok, attempt));
                    break;
                }
                Err(e) => {
                    log::warn!("hierarchy dump attempt {} of {attempts} failed: {e}", attempt + 1);
                    if attempt + 1 < attempts {
                        std::thread::sleep(Duration::from_millis(self.config.xml_poll.delay_ms));
                    }
                }
            }
        }
        let ((xml, mut tree), retries) = captured.ok_or(DeviceError::XmlAcquisitionFailed { attempts })?;
        if retries > 0 {
            log::info!("hierarchy acquired after {retries} retries");
        }
        let screenshot = if with_screenshot {
            let png = self.adb(&["exec-out", "screencap", "-p"])?.stdout;
            if !png.starts_with(PNG_MAGIC) {
                return Err(DeviceError::Parse("screencap did not return a PNG".into()));
            }
            Some(Screenshot::Png(png))
        } else {
            None
        };
        let capture_timestamp = now_ms();
        tree.capture_timestamp = capture_timestamp;
        Ok(Observation {
            foreground_app: tree.package().to_string(),
            tree,
            xml,
            screenshot,
            capture_timestamp,
            device_state: None,
            xml_retries: retries,
        })
    }

    fn perform(&mut self, action: &GroundedAction) -> Result<(), DeviceError> {
        match action {
            GroundedAction::TapAt { x, y } => {
                self.adb(&["shell", "input", "tap", &x.to_string(), &y.to_string()])?;
            }
            GroundedAction::SwipeFromTo { x1, y1, x2, y2, duration_ms } => {
                let args = [x1, y1, x2, y2].map(|v| v.to_string());
                let d = duration_ms.to_string();
                self.adb(&["shell", "input", "swipe", &args[0], &args[1], &args[2], &args[3], &d])?;
            }
            GroundedAction::LongPressAt { x, y, duration_ms } => {
                let (x, y, d) = (x.to_string(), y.to_string(), duration_ms.to_string());
                self.adb(&["shell", "input", "swipe", &x, &y, &x, &y, &d])?;
            }
            GroundedAction::TypeText { text } => {
                // ADB Keyboard: clear the field, then deliver the whole text
                // in one broadcast.
                let b64 = base64::engine::general_purpose::STANDARD.encode(text.as_bytes());
                self.adb(&["shell", "am", "broadcast", "-a", "ADB_CLEAR_TEXT"])?;
                self.adb(&["shell", "am", "broadcast", "-a", "ADB_INPUT_B64", "--es", "msg", &b64])?;
            }
            GroundedAction::KeyHome => {
                self.adb(&["shell", "input", "keyevent", "KEYCODE_HOME"])?;
            }
            GroundedAction::KeyBack => {
                self.adb(&["shell", "input", "keyevent", "KEYCODE_BACK"])?;
            }
            GroundedAction::Done { .. } => return Ok(()),
        }
        self.config.pause_after_action();
        Ok(())
    }

    fn reset(&mut self, app: &str, fixture: Option<&str>) -> Result<(), DeviceError> {
        if let Some(f) = fixture {
            return Err(DeviceError::Unsupported(format!("state fixture {f:?} on a real device")));
        }
        let listed = self.adb(&["shell", "pm", "path", app]).map(|o| o.stdout_text()).unwrap_or_default();
        if !listed.trim_start().starts_with("package:") {
            return Err(DeviceError::UnknownApp(app.to_string()));
        }
        self.adb(&["shell", "am", "force-stop", app])?;
        self.adb(&["shell", "monkey", "-p", app, "-c", "android.intent.category.LAUNCHER", "1"])?;
        self.config.pause_after_action();
        Ok(())
    }

    fn installed_apps(&self) -> Vec<String> {
        Vec::new()
    }

    fn external_input(&self) -> bool {
        true
    }

    fn next_gesture(&mut self, timeout: Duration) -> Result<Option<Vec<TouchEvent>>, DeviceError> {
        if let Some(done) = self.ready.pop_front() {
            return Ok(Some(done));
        }
        self.ensure_event_stream()?;
        let deadline = Instant::now() + timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let rx = self.events.as_ref().expect("stream started above");
            let line = match rx.recv_timeout(remaining) {
                Ok(line) => line,
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => {
                    self.events = None;
                    return Err(DeviceError::ExecutionFailed {
                        command: "adb shell getevent -lt".into(),
                        message: "event stream closed".into(),
                    });
                }
            };
            let Some(event) = self.parser.feed(&line) else { continue };
            match event.kind {
                TouchKind::Down => self.gesture = vec![event],
                TouchKind::Move if !self.gesture.is_empty() => self.gesture.push(event),
                TouchKind::Move => {}
                TouchKind::Up if !self.gesture.is_empty() => {
                    self.gesture.push(event);
                    return Ok(Some(std::mem::take(&mut self.gesture)));
                }
                TouchKind::Up => {}
            }
        }
    }
}

/// Serials in the `device` state from `adb devices` output.
fn parse_devices(text: &str) -> Vec<String> {
    text.lines()
        .skip_while(|l| !l.starts_with("List of devices"))
        .skip(1)
        .filter_map(|l| {
            let mut parts = l.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some(serial), Some("device")) => Some(serial.to_string()),
                _ => None,
            }
        })
        .collect()
}

/// Maximum of an absolute axis from `getevent -lp` output.
fn parse_abs_max(text: &str, axis: &str) -> Option<i32> {
    let line = text.lines().find(|l| l.trim_start().starts_with(axis))?;
    let rest = &line[line.find("max")? + 3..];
    rest.trim_start().split(|c: char| c == ',' || c.is_whitespace()).next()?.parse().ok()
}

/// One decoded `getevent -lt` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInput {
    pub t_ms: i64,
    pub kind: String,
    pub code: String,
    pub value: String,
}

/// Parses lines such as
/// `[   1234.567890] /dev/input/event2: EV_ABS ABS_MT_POSITION_X 000001f4`.
pub fn parse_getevent_line(line: &str) -> Option<RawInput> {
    let line = line.trim();
    let rest = line.strip_prefix('[')?;
    let close = rest.find(']')?;
    let seconds: f64 = rest[..close].trim().parse().ok()?;
    let mut tokens = rest[close + 1..].split_whitespace().peekable();
    if tokens.peek().is_some_and(|t| t.ends_with(':')) {
        tokens.next();
    }
    let (kind, code, value) = (tokens.next()?, tokens.next()?, tokens.next()?);
    Some(RawInput {
        t_ms: (seconds * 1000.0).round() as i64,
        kind: kind.to_string(),
        code: code.to_string(),
        value: value.to_string(),
    })
}

/// Folds the multitouch protocol into single-finger touch events, emitting
/// at most one event per `SYN_REPORT` frame.
#[derive(Debug, Clone)]
pub struct GeteventParser {
    screen: (u32, u32),
    axis_max: (Option<i32>, Option<i32>),
    x: i32,
    y: i32,
    touching: bool,
    pending_down: bool,
    pending_up: bool,
    moved: bool,
}

impl GeteventParser {
    pub fn new(screen: (u32, u32)) -> Self {
        Self { screen, axis_max: (None, None), x: 0, y: 0, touching: false, pending_down: false, pending_up: false, moved: false }
    }

    /// Raw axis ranges, used to scale touch coordinates to screen pixels.
    pub fn set_axis_max(&mut self, x: Option<i32>, y: Option<i32>) {
        self.axis_max = (x, y);
    }

    fn scale(raw: i32, max: Option<i32>, dim: u32) -> i32 {
        match max {
            Some(m) if m > 0 => ((i64::from(raw) * i64::from(dim)) / (i64::from(m) + 1)) as i32,
            _ => raw,
        }
    }

    pub fn feed(&mut self, line: &str) -> Option<TouchEvent> {
        let input = parse_getevent_line(line)?;
        match (input.kind.as_str(), input.code.as_str()) {
            ("EV_KEY", "BTN_TOUCH") => match input.value.as_str() {
                "DOWN" => self.pending_down = true,
                "UP" => self.pending_up = true,
                _ => {}
            },
            ("EV_ABS", "ABS_MT_TRACKING_ID") => {
                if input.value.eq_ignore_ascii_case("ffffffff") {
                    self.pending_up = true;
                } else if !self.touching {
                    self.pending_down = true;
                }
            }
            ("EV_ABS", "ABS_MT_POSITION_X") => {
                let raw = i32::from_str_radix(&input.value, 16).ok()?;
                self.x = Self::scale(raw, self.axis_max.0, self.screen.0);
                self.moved = true;
            }
            ("EV_ABS", "ABS_MT_POSITION_Y") => {
                let raw = i32::from_str_radix(&input.value, 16).ok()?;
                self.y = Self::scale(raw, self.axis_max.1, self.screen.1);
                self.moved = true;
            }
            ("EV_SYN", "SYN_REPORT") => {
                let kind = if self.pending_down && !self.touching {
                    self.touching = true;
                    Some(TouchKind::Down)
                } else if self.pending_up && self.touching {
                    self.touching = false;
                    Some(TouchKind::Up)
                } else if self.touching && self.moved {
                    Some(TouchKind::Move)
                } else {
                    None
                };
                self.pending_down = false;
                self.pending_up = false;
                self.moved = false;
                return kind.map(|k| TouchEvent::new(k, self.x, self.y, input.t_ms));
            }
            _ => {}
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    /// Queued outputs keyed by a substring of the joined arguments.
    type Replies = Vec<(String, VecDeque<CmdOutput>)>;

    /// Replies to commands by matching a substring of the joined arguments.
    #[derive(Clone, Default)]
    struct Scripted {
        replies: Arc<Mutex<Replies>>,
        log: Arc<Mutex<Vec<String>>>,
        stream: Arc<Mutex<Vec<String>>>,
        /// Keeps event streams open like a live `getevent`.
        open: Arc<Mutex<Vec<mpsc::Sender<String>>>>,
    }

    impl Scripted {
        fn on(&self, pattern: &str, outputs: Vec<CmdOutput>) {
            self.replies.lock().unwrap().push((pattern.to_string(), outputs.into()));
        }

        fn calls(&self) -> Vec<String> {
            self.log.lock().unwrap().clone()
        }
    }

    impl CommandRunner for Scripted {
        fn run(&mut self, args: &[String]) -> std::io::Result<CmdOutput> {
            let joined = args.join(" ");
            self.log.lock().unwrap().push(joined.clone());
            let mut replies = self.replies.lock().unwrap();
            for (pattern, outputs) in replies.iter_mut() {
                if joined.contains(pattern.as_str()) {
                    return Ok(if outputs.len() > 1 { outputs.pop_front().unwrap() } else { outputs[0].clone() });
                }
            }
            Ok(CmdOutput::ok(Vec::new()))
        }

        fn stream_lines(&mut self, _args: &[String]) -> std::io::Result<Receiver<String>> {
            let (tx, rx) = mpsc::channel();
            for line in self.stream.lock().unwrap().drain(..) {
                tx.send(line).unwrap();
            }
            self.open.lock().unwrap().push(tx);
            Ok(rx)
        }
    }

    const XML: &str = r#"<hierarchy rotation="0"><node bounds="[0,0][1080,2400]" package="com.example" class="android.widget.FrameLayout"><node bounds="[0,0][200,100]" clickable="true" text="OK" package="com.example"/></node></hierarchy>"#;

    fn failed(msg: &str) -> CmdOutput {
        CmdOutput { status: 1, stdout: Vec::new(), stderr: msg.to_string() }
    }

    fn config() -> DeviceConfig {
        DeviceConfig { backend: super::super::Backend::Adb, step_interval: 0.0, ..DeviceConfig::default() }
    }

    fn device(script: &Scripted) -> AdbDevice {
        script.on("devices", vec![CmdOutput::ok("List of devices attached\nemulator-5554\tdevice\n\n")]);
        let mut cfg = config();
        cfg.xml_poll.delay_ms = 1;
        AdbDevice::connect(cfg, Box::new(script.clone())).unwrap()
    }

    #[test]
    fn no_device_attached() {
        let script = Scripted::default();
        script.on("devices", vec![CmdOutput::ok("List of devices attached\n\n")]);
        assert_eq!(AdbDevice::connect(config(), Box::new(script)).err(), Some(DeviceError::DeviceNotFound(None)));
    }

    #[test]
    fn several_devices_need_a_serial() {
        let script = Scripted::default();
        script.on("devices", vec![CmdOutput::ok("List of devices attached\nA\tdevice\nB\tdevice\nC\toffline\n")]);
        assert_eq!(
            AdbDevice::connect(config(), Box::new(script.clone())).err(),
            Some(DeviceError::MultipleDevices(vec!["A".into(), "B".into()]))
        );
        let cfg = DeviceConfig { serial: Some("B".into()), ..config() };
        assert_eq!(AdbDevice::connect(cfg, Box::new(script)).unwrap().serial(), "B");
    }

    #[test]
    fn dump_retries_then_succeeds() {
        let script = Scripted::default();
        let mut dev = device(&script);
        script.on(
            "uiautomator dump",
            vec![
                failed("ERROR: could not get idle state."),
                CmdOutput::ok("ERROR: null root node returned by UiTestAutomationBridge."),
                CmdOutput::ok("UI hierchary dumped to: /sdcard/window_dump.xml"),
            ],
        );
        script.on("cat /sdcard/window_dump.xml", vec![CmdOutput::ok(XML)]);
        let obs = dev.observe(false).unwrap();
        assert_eq!(obs.xml_retries, 2);
        assert_eq!(obs.foreground_app, "com.example");
        assert_eq!(obs.tree.node_count(), 2);
        let dumps = script.calls().iter().filter(|c| c.contains("uiautomator dump")).count();
        assert_eq!(dumps, 3);
    }

    #[test]
    fn dump_gives_up_after_attempts() {
        let script = Scripted::default();
        let mut dev = device(&script);
        script.on("uiautomator dump", vec![failed("boom")]);
        assert_eq!(dev.observe(false), Err(DeviceError::XmlAcquisitionFailed { attempts: 3 }));
    }

    #[test]
    fn action_commands() {
        let script = Scripted::default();
        let mut dev = device(&script);
        dev.perform(&GroundedAction::TapAt { x: 200, y: 230 }).unwrap();
        dev.perform(&GroundedAction::LongPressAt { x: 5, y: 6, duration_ms: 800 }).unwrap();
        dev.perform(&GroundedAction::SwipeFromTo { x1: 540, y1: 1200, x2: 540, y2: 0, duration_ms: 300 }).unwrap();
        dev.perform(&GroundedAction::TypeText { text: "salary".into() }).unwrap();
        dev.perform(&GroundedAction::KeyBack).unwrap();
        let calls = script.calls();
        let tail: Vec<&str> = calls[1..].iter().map(String::as_str).collect();
        assert_eq!(
            tail,
            [
                "-s emulator-5554 shell input tap 200 230",
                "-s emulator-5554 shell input swipe 5 6 5 6 800",
                "-s emulator-5554 shell input swipe 540 1200 540 0 300",
                "-s emulator-5554 shell am broadcast -a ADB_CLEAR_TEXT",
                "-s emulator-5554 shell am broadcast -a ADB_INPUT_B64 --es msg c2FsYXJ5",
                "-s emulator-5554 shell input keyevent KEYCODE_BACK",
            ]
        );
    }

    #[test]
    fn failing_command_is_execution_failed() {
        let script = Scripted::default();
        let mut dev = device(&script);
        script.on("input tap", vec![failed("error: closed")]);
        assert!(matches!(dev.perform(&GroundedAction::TapAt { x: 1, y: 1 }), Err(DeviceError::ExecutionFailed { .. })));
    }

    #[test]
    fn reset_checks_package_then_relaunches() {
        let script = Scripted::default();
        let mut dev = device(&script);
        script.on("pm path com.example", vec![CmdOutput::ok("package:/data/app/base.apk\n")]);
        dev.reset("com.example", None).unwrap();
        let calls = script.calls();
        assert!(calls.iter().any(|c| c.ends_with("am force-stop com.example")));
        assert!(calls.last().unwrap().contains("monkey -p com.example -c android.intent.category.LAUNCHER 1"));
        assert_eq!(dev.reset("com.missing", None), Err(DeviceError::UnknownApp("com.missing".into())));
    }

    #[test]
    fn environment_setters_are_issued() {
        let script = Scripted::default();
        script.on("devices", vec![CmdOutput::ok("List of devices attached\nX\tdevice\n")]);
        let cfg = DeviceConfig {
            fixed_time: Some(chrono::NaiveDate::from_ymd_opt(2024, 5, 1).unwrap().and_hms_opt(9, 0, 0).unwrap()),
            fixed_geo: Some(super::super::GeoPoint { lat: 48.85, lon: 2.35 }),
            ..config()
        };
        AdbDevice::connect(cfg, Box::new(script.clone())).unwrap();
        let calls = script.calls();
        assert!(calls.contains(&"-s X shell su 0 date 050109002024.00".to_string()));
        assert!(calls.contains(&"-s X emu geo fix 2.35 48.85".to_string()));
    }

    #[test]
    fn getevent_stream_to_gesture() {
        let script = Scripted::default();
        let mut dev = device(&script);
        script.on(
            "getevent -lp",
            vec![CmdOutput::ok(
                "add device 1: /dev/input/event1\n    ABS (0003): ABS_MT_POSITION_X     : value 0, min 0, max 1079, fuzz 0\n                ABS_MT_POSITION_Y     : value 0, min 0, max 2399, fuzz 0\n",
            )],
        );
        let lines = [
            "[   100.000000] /dev/input/event1: EV_ABS       ABS_MT_TRACKING_ID   00000001",
            "[   100.000000] /dev/input/event1: EV_KEY       BTN_TOUCH            DOWN",
            "[   100.000000] /dev/input/event1: EV_ABS       ABS_MT_POSITION_X    0000021c",
            "[   100.000000] /dev/input/event1: EV_ABS       ABS_MT_POSITION_Y    000005dc",
            "[   100.000000] /dev/input/event1: EV_SYN       SYN_REPORT           00000000",
            "[   100.100000] /dev/input/event1: EV_ABS       ABS_MT_POSITION_Y    00000400",
            "[   100.100000] /dev/input/event1: EV_SYN       SYN_REPORT           00000000",
            "[   100.250000] /dev/input/event1: EV_ABS       ABS_MT_POSITION_Y    000002bc",
            "[   100.250000] /dev/input/event1: EV_ABS       ABS_MT_TRACKING_ID   ffffffff",
            "[   100.250000] /dev/input/event1: EV_KEY       BTN_TOUCH            UP",
            "[   100.250000] /dev/input/event1: EV_SYN       SYN_REPORT           00000000",
        ];
        script.stream.lock().unwrap().extend(lines.iter().map(|s| s.to_string()));
        let events = dev.next_gesture(Duration::from_millis(200)).unwrap().unwrap();
        assert_eq!(
            events,
            vec![
                TouchEvent::new(TouchKind::Down, 540, 1500, 100_000),
                TouchEvent::new(TouchKind::Move, 540, 1024, 100_100),
                TouchEvent::new(TouchKind::Up, 540, 700, 100_250),
            ]
        );
        assert_eq!(dev.next_gesture(Duration::from_millis(10)).unwrap(), None);
    }

    #[test]
    fn getevent_line_without_device_prefix() {
        let raw = parse_getevent_line("[ 5.5] EV_KEY BTN_TOUCH DOWN").unwrap();
        assert_eq!((raw.t_ms, raw.code.as_str(), raw.value.as_str()), (5500, "BTN_TOUCH", "DOWN"));
        assert!(parse_getevent_line("add device 1: /dev/input/event1").is_none());
    }
}
