//! Byte streams that carry protocol frames: TCP sockets and in-process
//! pipes.
//!
//! The in-process pipe lets a whole match run without opening sockets while
//! still going through the real codec and connection handling.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::protocol::{encode, Message};

pub trait Transport: Read + Write + Send {
    /// A second handle on the same stream, used for writing from another
    /// thread.
    fn try_clone_box(&self) -> io::Result<Box<dyn Transport>>;
    /// Closes both directions; blocked readers on either side see EOF.
    fn shutdown(&self);

    fn send_message(&mut self, msg: &Message) -> io::Result<()> {
        self.write_all(&encode(msg))?;
        self.flush()
    }
}

impl Transport for TcpStream {
    fn try_clone_box(&self) -> io::Result<Box<dyn Transport>> {
        Ok(Box::new(self.try_clone()?))
    }

    fn shutdown(&self) {
        let _ = TcpStream::shutdown(self, Shutdown::Both);
    }
}

impl Transport for Box<dyn Transport> {
    fn try_clone_box(&self) -> io::Result<Box<dyn Transport>> {
        (**self).try_clone_box()
    }

    fn shutdown(&self) {
        (**self).shutdown()
    }
}

/// Opens a fresh stream to a server.
pub trait Connector: Send + Sync {
    fn connect(&self) -> io::Result<Box<dyn Transport>>;
}

pub struct TcpConnector {
    pub addr: String,
    pub write_timeout: Option<Duration>,
}

impl TcpConnector {
    pub fn new(host: &str, port: u16) -> TcpConnector {
        TcpConnector {
            addr: format!("{host}:{port}"),
            write_timeout: Some(Duration::from_secs(5)),
        }
    }
}

impl Connector for TcpConnector {
    fn connect(&self) -> io::Result<Box<dyn Transport>> {
        let addr = self
            .addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
        let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(5))?;
        stream.set_nodelay(true)?;
        stream.set_write_timeout(self.write_timeout)?;
        Ok(Box::new(stream))
    }
}

/// One end of an in-memory duplex stream.
pub struct PipeEnd {
    tx: Sender<Vec<u8>>,
    rx: Arc<Mutex<Receiver<Vec<u8>>>>,
    buf: Vec<u8>,
    pos: usize,
    closed: Arc<AtomicBool>,
}

/// Two connected pipe ends.
pub fn pipe() -> (PipeEnd, PipeEnd) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    let closed = Arc::new(AtomicBool::new(false));
    let end = |tx, rx| PipeEnd {
        tx,
        rx: Arc::new(Mutex::new(rx)),
        buf: Vec::new(),
        pos: 0,
        closed: closed.clone(),
    };
    (end(a_tx, a_rx), end(b_tx, b_rx))
}

impl Read for PipeEnd {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        loop {
            if self.pos < self.buf.len() {
                let n = out.len().min(self.buf.len() - self.pos);
                out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
                self.pos += n;
                return Ok(n);
            }
            let rx = self
                .rx
                .lock()
                .map_err(|_| io::Error::other("pipe poisoned"))?;
            // Bytes written before the shutdown are still delivered.
            let next = match rx.try_recv() {
                Ok(chunk) => Ok(chunk),
                Err(_) if self.closed.load(Ordering::SeqCst) => return Ok(0),
                Err(_) => rx.recv_timeout(Duration::from_millis(20)),
            };
            drop(rx);
            match next {
                Ok(chunk) => {
                    self.buf = chunk;
                    self.pos = 0;
                }
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => return Ok(0),
            }
        }
    }
}

impl Write for PipeEnd {
    fn write(&mut self, bytes: &[u8]) -> io::Result<usize> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(io::ErrorKind::BrokenPipe.into());
        }
        self.tx
            .send(bytes.to_vec())
            .map_err(|_| io::Error::from(io::ErrorKind::BrokenPipe))?;
        Ok(bytes.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Transport for PipeEnd {
    fn try_clone_box(&self) -> io::Result<Box<dyn Transport>> {
        Ok(Box::new(PipeEnd {
            tx: self.tx.clone(),
            rx: self.rx.clone(),
            buf: Vec::new(),
            pos: 0,
            closed: self.closed.clone(),
        }))
    }

    fn shutdown(&self) {
        self.closed.store(true, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::FrameReader;

    #[test]
    fn pipe_carries_frames_both_ways() {
        let (mut a, b) = pipe();
        let mut b_writer = b.try_clone_box().unwrap();
        a.send_message(&Message::Bye).unwrap();
        b_writer.send_message(&Message::Bye).unwrap();
        let mut rb = FrameReader::new(b);
        assert_eq!(rb.read_message().unwrap(), Some(Ok(Message::Bye)));
        let mut ra = FrameReader::new(a);
        assert_eq!(ra.read_message().unwrap(), Some(Ok(Message::Bye)));
    }

    #[test]
    fn shutdown_wakes_reader() {
        let (a, b) = pipe();
        let t = std::thread::spawn(move || {
            let mut r = FrameReader::new(b);
            r.read_message().unwrap()
        });
        std::thread::sleep(Duration::from_millis(30));
        a.shutdown();
        assert_eq!(t.join().unwrap(), None);
    }
}
