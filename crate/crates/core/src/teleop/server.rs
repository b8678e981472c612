//! Connection handling. One connection owns at most one session and its
//! commands are processed in arrival order on the connection's thread.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use super::session::{Mode, RecordAck, Session};
use super::wire::{ClientMessage, ServerMessage};
use crate::episode::{write_episode, EpisodeRecord};
use crate::error::{Error, Result};
use crate::sim::{SceneId, SceneSpec};

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Scenes a client may open, looked up by name.
    pub scenes: Vec<Arc<SceneSpec>>,
    /// Flushed episodes go to `out_dir/episodes/`.
    pub out_dir: PathBuf,
    /// Idle connections are dropped after this long.
    pub idle_timeout: Option<Duration>,
}

impl GatewayConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { scenes: vec![Arc::new(SceneSpec::desk()), Arc::new(SceneSpec::ground())], out_dir: out_dir.into(), idle_timeout: Some(Duration::from_secs(600)) }
    }
}

#[derive(Debug)]
pub struct Gateway {
    cfg: GatewayConfig,
    next_id: AtomicU64,
}

impl Gateway {
    pub fn new(cfg: GatewayConfig) -> Self {
        Self { cfg, next_id: AtomicU64::new(1) }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    fn scene(&self, name: &str) -> Result<&SceneSpec> {
        let id = SceneId::parse(name)?;
        self.cfg.scenes.iter().find(|s| s.scene_id == id).map(|s| s.as_ref()).ok_or_else(|| Error::invalid("scene", format!("{name} is not served")))
    }

    /// Accept connections until the listener fails, one thread each.
    pub fn serve(self: Arc<Self>, listener: TcpListener) -> Result<()> {
        for stream in listener.incoming() {
            let stream = stream?;
            let gw = Arc::clone(&self);
            thread::spawn(move || {
                let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                if let Err(e) = gw.handle_tcp(stream) {
                    log::warn!("connection {peer}: {e}");
                }
            });
        }
        Ok(())
    }

    fn handle_tcp(&self, stream: TcpStream) -> Result<()> {
        stream.set_read_timeout(self.cfg.idle_timeout)?;
        let reader = BufReader::new(stream.try_clone()?);
        self.handle(reader, stream)
    }

    /// Serve one connection until end of input or a `close` message. An
    /// unfinished recording is flushed when the input ends.
    pub fn handle<R: BufRead, W: Write>(&self, reader: R, mut writer: W) -> Result<()> {
        let mut conn = Connection { gw: self, session: None, written: 0 };
        let mut lines = reader.lines();
        loop {
            let line = match lines.next() {
                Some(Ok(l)) => l,
                Some(Err(e)) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    writeln!(writer, "{}", ServerMessage::error(&Error::SessionExpired("idle timeout".into())).to_line())?;
                    break;
                }
                Some(Err(e)) => return Err(e.into()),
                None => break,
            };
            if line.trim().is_empty() {
                continue;
            }
            let (reply, done) = match conn.dispatch(&line) {
                Ok(r) => r,
                Err(e) => (ServerMessage::error(&e), false),
            };
            writeln!(writer, "{}", reply.to_line())?;
            writer.flush()?;
            if done {
                return Ok(());
            }
        }
        conn.flush_pending()
    }
}

struct Connection<'a> {
    gw: &'a Gateway,
    session: Option<Session>,
    written: usize,
}

impl Connection<'_> {
    fn session(&mut self) -> Result<&mut Session> {
        self.session.as_mut().ok_or_else(|| Error::Protocol("no open session".into()))
    }

    fn dispatch(&mut self, line: &str) -> Result<(ServerMessage, bool)> {
        let msg = ClientMessage::parse(line)?;
        if let Some(cmd) = msg.command() {
            let o = self.session()?.apply(&cmd)?;
            return Ok((ServerMessage::obs(&o), false));
        }
        match msg {
            ClientMessage::Open { scene, mode, instruction, seed, frames } => {
                if self.session.is_some() {
                    return Err(Error::Protocol("session already open on this connection".into()));
                }
                let mode = Mode::parse(&mode)?;
                let id = format!("s{:04}", self.gw.next_id.fetch_add(1, Ordering::Relaxed));
                let s = Session::open(id, self.gw.scene(&scene)?, mode, &instruction, seed)?.with_frames(frames);
                let reply = ServerMessage::Session { session: s.id().to_string(), mode: mode.name().into(), hz: s.hz() };
                self.session = Some(s);
                Ok((reply, false))
            }
            ClientMessage::Record { on } => {
                let ack = self.session()?.toggle_recording(on)?;
                let s = self.session()?;
                Ok(match ack {
                    RecordAck::Started | RecordAck::AlreadyRecording => (ServerMessage::Record { on: true, steps: s.recorded_steps(), episode: None }, false),
                    RecordAck::NotRecording => (ServerMessage::Record { on: false, steps: 0, episode: None }, false),
                    RecordAck::Stopped(rec) => {
                        let steps = rec.len();
                        let episode = self.store(&rec)?;
                        (ServerMessage::Record { on: false, steps, episode }, false)
                    }
                })
            }
            ClientMessage::Close => {
                self.flush_pending()?;
                if let Some(s) = self.session.as_mut() {
                    s.close();
                }
                Ok((ServerMessage::Closed, true))
            }
            ClientMessage::Key { .. } | ClientMessage::Slider { .. } => unreachable!("handled as commands"),
        }
    }

    /// Writes a non-empty episode and returns its path relative to the output directory.
    fn store(&mut self, rec: &EpisodeRecord) -> Result<Option<String>> {
        if rec.is_empty() {
            return Ok(None);
        }
        let id = self.session()?.id().to_string();
        let rel = Path::new("episodes").join(format!("{id}_{:03}.pnlb", self.written));
        write_episode(rec, &self.gw.cfg.out_dir.join(&rel))?;
        self.written += 1;
        Ok(Some(rel.to_string_lossy().into_owned()))
    }

    fn flush_pending(&mut self) -> Result<()> {
        let Some(s) = self.session.as_mut() else { return Ok(()) };
        if !s.is_recording() {
            return Ok(());
        }
        if let RecordAck::Stopped(rec) = s.toggle_recording(false)? {
            self.store(&rec)?;
        }
        Ok(())
    }
}
