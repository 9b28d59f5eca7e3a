//! Environments the episode runner can drive: the in-process micro-world and
//! any peer speaking the JSON-lines protocol (loopback thread, subprocess, TCP).

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::microworld::protocol::{self, Op};
use crate::microworld::{parse_task_id, sample_task, World};
use crate::trajectory::Task;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResetInfo {
    pub observation: String,
    pub action_space: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub observation: String,
    pub accepted: bool,
    pub done: bool,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("peer closed the connection")]
    PeerClosed,
    #[error("timed out waiting for the peer")]
    Timeout,
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("environment io: {0}")]
    Io(String),
}

pub trait Environment {
    fn reset(&mut self, task: &Task) -> Result<ResetInfo, EnvError>;
    fn step(&mut self, action: &str) -> Result<StepOutcome, EnvError>;
    fn close(&mut self) -> Result<(), EnvError> {
        Ok(())
    }
}

/// In-process micro-world.
pub struct MicroWorldEnv {
    horizon: usize,
    world: Option<World>,
}

impl MicroWorldEnv {
    pub fn new(horizon: usize) -> Self {
        Self { horizon, world: None }
    }

    pub fn world(&self) -> Option<&World> {
        self.world.as_ref()
    }
}

impl Environment for MicroWorldEnv {
    fn reset(&mut self, task: &Task) -> Result<ResetInfo, EnvError> {
        let spec = &task.env_spec;
        if spec.environment != "microworld" {
            return Err(EnvError::UnknownTask(task.task_id.clone()));
        }
        let (_, world_spec, _) = sample_task(spec.family, spec.seed);
        let world = World::from_spec(&world_spec, self.horizon);
        let observation = world.reset_observation();
        self.world = Some(world);
        Ok(ResetInfo {
            observation,
            action_space: None,
        })
    }

    fn step(&mut self, action: &str) -> Result<StepOutcome, EnvError> {
        let world = self
            .world
            .as_mut()
            .ok_or_else(|| EnvError::ProtocolViolation("step before reset".into()))?;
        let r = world.step(action);
        Ok(StepOutcome {
            observation: r.observation,
            accepted: r.accepted,
            done: r.done,
            success: r.success,
        })
    }
}

pub const DEFAULT_PEER_TIMEOUT: Duration = Duration::from_secs(30);

/// Client for a protocol peer. Requests are strictly sequential.
pub struct ProtocolEnv {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    child: Option<Child>,
    server: Option<JoinHandle<()>>,
    closed: bool,
}

impl ProtocolEnv {
    pub fn from_streams(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in reader.lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Self {
            writer: Box::new(writer),
            lines: rx,
            timeout,
            child: None,
            server: None,
            closed: false,
        }
    }

    /// Micro-world served over its own protocol on a background thread.
    pub fn loopback(horizon: usize) -> std::io::Result<Self> {
        let (client_rx, server_tx) = std::io::pipe()?;
        let (server_rx, client_tx) = std::io::pipe()?;
        let server = thread::spawn(move || {
            if let Err(e) = protocol::serve(BufReader::new(server_rx), server_tx, horizon) {
                log::debug!("loopback server stopped: {e}");
            }
        });
        let mut env = Self::from_streams(BufReader::new(client_rx), client_tx, DEFAULT_PEER_TIMEOUT);
        env.server = Some(server);
        Ok(env)
    }

    /// Spawns `program args...` and talks to it over stdio.
    pub fn spawn(program: &str, args: &[String], timeout: Duration) -> std::io::Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut env = Self::from_streams(BufReader::new(stdout), stdin, timeout);
        env.child = Some(child);
        Ok(env)
    }

    pub fn connect_tcp(addr: &str, timeout: Duration) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self::from_streams(reader, stream, timeout))
    }

    fn request(&mut self, msg: Value, op: Op) -> Result<Value, EnvError> {
        if self.closed {
            return Err(EnvError::PeerClosed);
        }
        let mut line = msg.to_string();
        line.push('\n');
        if self
            .writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .is_err()
        {
            self.closed = true;
            return Err(EnvError::PeerClosed);
        }
        let raw = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(raw)) => raw,
            Ok(Err(e)) => {
                self.closed = true;
                return Err(EnvError::Io(e.to_string()));
            }
            Err(RecvTimeoutError::Timeout) => return Err(EnvError::Timeout),
            Err(RecvTimeoutError::Disconnected) => {
                self.closed = true;
                return Err(EnvError::PeerClosed);
            }
        };
        let v: Value = serde_json::from_str(&raw)
            .map_err(|e| EnvError::ProtocolViolation(format!("unparseable response: {e}")))?;
        protocol::validate_response(&v, op).map_err(EnvError::ProtocolViolation)?;
        if let Some(err) = v.get("error").and_then(Value::as_str) {
            return Err(EnvError::ProtocolViolation(err.to_string()));
        }
        Ok(v)
    }
}

impl Environment for ProtocolEnv {
    fn reset(&mut self, task: &Task) -> Result<ResetInfo, EnvError> {
        if task.env_spec.environment == "microworld" && parse_task_id(&task.task_id).is_none() {
            return Err(EnvError::UnknownTask(task.task_id.clone()));
        }
        let v = self.request(protocol::reset_request(&task.task_id, task.env_spec.seed), Op::Reset)?;
        let action_space = v.get("action_space").and_then(Value::as_array).map(|a| {
            a.iter()
                .filter_map(Value::as_str)
                .map(str::to_string)
                .collect()
        });
        Ok(ResetInfo {
            observation: v["observation"].as_str().unwrap().to_string(),
            action_space,
        })
    }

    fn step(&mut self, action: &str) -> Result<StepOutcome, EnvError> {
        let v = self.request(protocol::step_request(action), Op::Step)?;
        let observation = v["observation"].as_str().unwrap().to_string();
        Ok(StepOutcome {
            accepted: !protocol::is_rejection(&observation),
            observation,
            done: v["done"].as_bool().unwrap(),
            success: v["success"].as_bool().unwrap(),
        })
    }

    fn close(&mut self) -> Result<(), EnvError> {
        if self.closed {
            return Ok(());
        }
        let result = self.request(protocol::close_request(), Op::Close).map(|_| ());
        self.closed = true;
        result
    }
}

impl Drop for ProtocolEnv {
    fn drop(&mut self) {
        let clean = self.closed || self.close().is_ok();
        // Dropping our end signals end-of-input to peers still reading.
        self.writer = Box::new(std::io::sink());
        if let Some(mut child) = self.child.take() {
            if !clean {
                let _ = child.kill();
            }
            let _ = child.wait();
        }
        if let Some(server) = self.server.take() {
            let _ = server.join();
        }
    }
}
