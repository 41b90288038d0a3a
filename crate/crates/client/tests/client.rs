use std::io::{Read, Write};
use std::path::PathBuf;
use std::time::Duration;

use droidharness_client::{Client, ClientError};
use droidharness_core::api::RunState;
use droidharness_core::bench::{AgentSpec, SuiteConfig};
use droidharness_core::DeviceConfig;
use droidharness_server::{BackgroundServer, ServerConfig};

#[test]
fn unreachable_server_is_a_transport_error() {
    // Bind then drop to get a port nobody listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = Client::new(format!("http://127.0.0.1:{port}/")).unwrap();
    assert_eq!(c.base_url(), format!("http://127.0.0.1:{port}"));
    match c.health().unwrap_err() {
        ClientError::Transport { url, .. } => assert!(url.ends_with("/health")),
        other => panic!("{other}"),
    }
}

/// Serves one canned HTTP response and returns the address.
fn one_shot(response: &'static str) -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let (mut sock, _) = listener.accept().unwrap();
        let mut buf = [0u8; 4096];
        let _ = sock.read(&mut buf);
        sock.write_all(response.as_bytes()).unwrap();
    });
    format!("http://{addr}")
}

#[test]
fn non_json_error_bodies_keep_their_text() {
    let url = one_shot("HTTP/1.1 503 Service Unavailable\r\ncontent-length: 7\r\nconnection: close\r\n\r\nupgrade");
    let err = Client::new(url).unwrap().health().unwrap_err();
    assert_eq!(err.status(), Some(503));
    assert_eq!(err.code(), Some("http"));
    assert!(err.to_string().contains("upgrade"));
}

#[test]
fn undecodable_success_bodies_are_decode_errors() {
    let url = one_shot("HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: 4\r\nconnection: close\r\n\r\n[1,2");
    assert!(matches!(Client::new(url).unwrap().health().unwrap_err(), ClientError::Decode { .. }));
}

#[test]
fn wait_run_reports_each_poll_until_done() {
    let root = tempfile::tempdir().unwrap();
    let server = BackgroundServer::start(ServerConfig::new(root.path().join("traces"))).unwrap();
    let c = Client::new(server.url()).unwrap();

    let suite = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../suites/sim/contacts_query_email.toml");
    let mut cfg = SuiteConfig::new(suite, root.path().join("out"));
    cfg.agent = AgentSpec::Random { seed: 7 };
    cfg.device = DeviceConfig::sim().with_step_interval(0.0);
    let run = c.start_run(&cfg).unwrap();
    assert_eq!(run.total, 1);

    let mut polls = Vec::new();
    let done = c.wait_run(&run.run_id, Duration::from_millis(20), |s| polls.push(s.state)).unwrap();
    assert_eq!(done.state, RunState::Finished);
    assert_eq!(*polls.last().unwrap(), RunState::Finished);
    assert!(polls[..polls.len() - 1].iter().all(|s| *s == RunState::Running));
    assert_eq!(done.completed, 1);

    // A second run into the same directory while the first is done is fine.
    let again = c.start_run(&cfg).unwrap();
    let done = c.wait_run(&again.run_id, Duration::from_millis(20), |_| {}).unwrap();
    assert_eq!(done.state, RunState::Finished);
}
