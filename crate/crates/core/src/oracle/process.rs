use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use super::{wire, Concurrency, HardLabelOracle, Label};
use crate::error::{Error, Result};
use crate::imaging::Image;

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    replies: Receiver<std::io::Result<String>>,
    next_id: u64,
}

/// A long-running child process speaking the line protocol on stdio.
///
/// The command runs under `sh -c`. Replies must come back in request order.
pub struct ExternalProcessOracle {
    command: String,
    timeout: Duration,
    channel: Mutex<Channel>,
}

impl ExternalProcessOracle {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

    pub fn spawn(command: &str) -> Result<Self> {
        Self::with_timeout(command, Self::DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::OracleIo(format!("cannot launch {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Ok(Self {
            command: command.to_string(),
            timeout,
            channel: Mutex::new(Channel { child, stdin: Some(stdin), replies: rx, next_id: 0 }),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }
}

impl HardLabelOracle for ExternalProcessOracle {
    fn classify(&self, img: &Image) -> Result<Label> {
        let mut ch = self.channel.lock().map_err(|_| Error::OracleIo("oracle channel poisoned".into()))?;
        let id = ch.next_id;
        ch.next_id += 1;
        let line = wire::to_line(&wire::Request::new(id, img)?)?;
        let stdin = ch.stdin.as_mut().ok_or_else(|| Error::OracleIo("oracle stdin closed".into()))?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::OracleIo(format!("write to oracle process: {e}")))?;
        match ch.replies.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => wire::parse_response(&reply, id),
            Ok(Err(e)) => Err(Error::OracleIo(format!("read from oracle process: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                Err(Error::OracleIo(format!("oracle process gave no reply within {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => Err(Error::OracleIo("oracle process exited".into())),
        }
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }
}

impl Drop for ExternalProcessOracle {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            // Closing stdin lets well-behaved servers exit on their own.
            drop(ch.stdin.take());
            for _ in 0..50 {
                if let Ok(Some(_)) = ch.child.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}
