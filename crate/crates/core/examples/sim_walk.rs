//! Replays actions on the simulator and prints each screen.
//!
//! Usage: `cargo run --example sim_walk -- <app> [fixture=<name>] '<action>'...`

use droidharness_core::actions::{ground, parse_model_action};
use droidharness_core::device::{Device, DeviceConfig, SimDevice};
use droidharness_core::ui_tree::{compress, screen_changed};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let app = args.next().ok_or_else(|| anyhow::anyhow!("usage: sim_walk <app> [fixture=<name>] <action>..."))?;
    let mut rest: Vec<String> = args.collect();
    let fixture = match rest.first().and_then(|a| a.strip_prefix("fixture=")) {
        Some(f) => {
            let f = f.to_string();
            rest.remove(0);
            Some(f)
        }
        None => None,
    };
    let mut dev = SimDevice::new(DeviceConfig::sim().with_step_interval(0.0))?;
    dev.reset(&app, fixture.as_deref())?;
    let mut obs = dev.observe(false)?;
    println!("== start [{}]\n{}", obs.foreground_app, compress(&obs.tree).text_rendering);
    for raw in rest {
        let action = parse_model_action(&raw)?;
        if action.is_finish() {
            println!("== {raw}");
            break;
        }
        let view = compress(&obs.tree);
        let grounded = ground(&action, &view, dev.screen())?;
        if let Err(e) = dev.perform(&grounded) {
            println!("!! {e}");
        }
        let next = dev.observe(false)?;
        let changed = screen_changed(&obs.tree, &next.tree);
        println!("== {raw} changed={changed} [{}]\n{}", next.foreground_app, compress(&next.tree).text_rendering);
        obs = next;
    }
    println!("== state\n{}", serde_json::to_string(&dev.state(&app).cloned().unwrap_or_default())?);
    Ok(())
}
