//! Records demonstration traces by replaying suite tasks' gold scripts
//! through a recording session on the simulator.
//!
//! Usage: `cargo run --example record_demo -- <out_dir> <task.toml>...`
//! Each trace directory is named after its task id.

use std::path::PathBuf;

use droidharness_core::actions::parse_model_action;
use droidharness_core::device::{self, DeviceConfig};
use droidharness_core::evaluation::TaskSpec;
use droidharness_core::recorder::{RecordingSession, SessionOptions};
use droidharness_core::Action;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().ok_or_else(|| anyhow::anyhow!("usage: record_demo <out_dir> <task.toml>..."))?);
    for file in args {
        let task = TaskSpec::load(std::path::Path::new(&file)).map_err(anyhow::Error::msg)?;
        let dev = device::setup(&DeviceConfig::sim().with_step_interval(0.0))?;
        let options = SessionOptions {
            env_fixture: task.env_fixture.clone(),
            session_id: Some(task.task_id.clone()),
            ..SessionOptions::new(&task.app, &task.instruction)
        };
        let dir = out.join(&task.task_id);
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        let mut session = RecordingSession::create(&out, options, dev)?;
        for raw in &task.gold_actions {
            match parse_model_action(raw)? {
                Action::Finish { answer } => {
                    session.finish_session(answer)?;
                }
                action => {
                    session.begin_step()?;
                    session.commit_step(action)?;
                }
            }
        }
        println!("{}: {} steps", task.task_id, session.steps().len());
    }
    Ok(())
}
