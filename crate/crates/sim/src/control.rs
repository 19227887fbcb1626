//! Line-based TCP control channel for a running fleet.
//!
//! Requests are single lines: `reboot <endpoint>`, `update <endpoint>`,
//! `status` or `stop`. Every reply ends with a line `ok` or `err <reason>`;
//! `status` first sends one `<endpoint> <phase> <reg_id|->` line per device.

use std::sync::Arc;

use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::Notify;

use crate::Fleet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlCommand {
    Reboot(String),
    Update(String),
    Status,
    Stop,
}

impl ControlCommand {
    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace();
        let cmd = match (parts.next()?, parts.next()) {
            ("reboot", Some(ep)) => ControlCommand::Reboot(ep.to_owned()),
            ("update", Some(ep)) => ControlCommand::Update(ep.to_owned()),
            ("status", None) => ControlCommand::Status,
            ("stop", None) => ControlCommand::Stop,
            _ => return None,
        };
        parts.next().is_none().then_some(cmd)
    }

    pub fn to_line(&self) -> String {
        match self {
            ControlCommand::Reboot(ep) => format!("reboot {ep}\n"),
            ControlCommand::Update(ep) => format!("update {ep}\n"),
            ControlCommand::Status => "status\n".into(),
            ControlCommand::Stop => "stop\n".into(),
        }
    }
}

/// Serves control connections until a `stop` arrives, then returns.
pub async fn serve(listener: TcpListener, fleet: Arc<Fleet>) -> std::io::Result<()> {
    let stop = Arc::new(Notify::new());
    loop {
        tokio::select! {
            _ = stop.notified() => return Ok(()),
            accepted = listener.accept() => {
                let (sock, _) = accepted?;
                let fleet = fleet.clone();
                let stop = stop.clone();
                tokio::spawn(async move {
                    if let Err(e) = session(sock, &fleet, &stop).await {
                        tracing::debug!(error = %e, "control session ended");
                    }
                });
            }
        }
    }
}

async fn session(sock: TcpStream, fleet: &Fleet, stop: &Notify) -> std::io::Result<()> {
    let (r, mut w) = sock.into_split();
    let mut lines = BufReader::new(r).lines();
    while let Some(line) = lines.next_line().await? {
        let reply = match ControlCommand::parse(&line) {
            None => "err unknown command\n".to_owned(),
            Some(ControlCommand::Reboot(ep)) => match fleet.get(&ep) {
                Some(d) => {
                    d.reboot().await;
                    "ok\n".into()
                }
                None => format!("err unknown endpoint {ep}\n"),
            },
            Some(ControlCommand::Update(ep)) => match fleet.get(&ep) {
                Some(d) => {
                    d.trigger_update().await;
                    "ok\n".into()
                }
                None => format!("err unknown endpoint {ep}\n"),
            },
            Some(ControlCommand::Status) => {
                let mut out = String::new();
                for d in fleet.devices() {
                    let s = d.status();
                    let reg = s.reg_id.as_deref().unwrap_or("-");
                    out.push_str(&format!("{} {:?} {reg}\n", d.endpoint(), s.phase));
                }
                out.push_str("ok\n");
                out
            }
            Some(ControlCommand::Stop) => {
                w.write_all(b"ok\n").await?;
                stop.notify_one();
                return Ok(());
            }
        };
        w.write_all(reply.as_bytes()).await?;
    }
    Ok(())
}

/// Sends one command and returns the reply lines up to and including the
/// final `ok` / `err` line.
pub async fn send(addr: &str, cmd: &ControlCommand) -> std::io::Result<Vec<String>> {
    let sock = TcpStream::connect(addr).await?;
    let (r, mut w) = sock.into_split();
    w.write_all(cmd.to_line().as_bytes()).await?;
    let mut lines = BufReader::new(r).lines();
    let mut out = Vec::new();
    while let Some(line) = lines.next_line().await? {
        let done = line == "ok" || line.starts_with("err");
        out.push(line);
        if done {
            break;
        }
    }
    Ok(out)
}
