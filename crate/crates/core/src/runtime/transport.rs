//! Point-to-point channels between the master and each worker.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender};

use serde::{Deserialize, Serialize};

use crate::error::{DtzoError, Result};
use crate::problem::Dims;
use crate::runtime::message::Message;
use crate::runtime::wire::{read_message, write_message};

/// One end of a bidirectional, FIFO, master-worker link.
pub trait Channel: Send {
    fn send(&mut self, msg: &Message) -> Result<()>;
    /// Receives the next message. `round_len` is the block length of
    /// lower-level round messages expected at this point of the protocol.
    fn recv(&mut self, round_len: usize) -> Result<Message>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    InProcess,
    Socket,
}

pub struct InProcChannel {
    tx: Sender<Message>,
    rx: Receiver<Message>,
}

impl Channel for InProcChannel {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.tx
            .send(msg.clone())
            .map_err(|_| DtzoError::Transport("peer hung up".into()))
    }

    fn recv(&mut self, _round_len: usize) -> Result<Message> {
        self.rx
            .recv()
            .map_err(|_| DtzoError::Transport("channel closed".into()))
    }
}

pub fn in_process_pair() -> (InProcChannel, InProcChannel) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    (
        InProcChannel { tx: a_tx, rx: a_rx },
        InProcChannel { tx: b_tx, rx: b_rx },
    )
}

/// Framed messages over a TCP stream.
pub struct SocketChannel {
    stream: TcpStream,
    dims: Dims,
}

impl SocketChannel {
    pub fn new(stream: TcpStream, dims: Dims) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(SocketChannel { stream, dims })
    }
}

impl Channel for SocketChannel {
    fn send(&mut self, msg: &Message) -> Result<()> {
        write_message(&mut self.stream, msg)
    }

    fn recv(&mut self, round_len: usize) -> Result<Message> {
        read_message(&mut self.stream, &self.dims, round_len)
    }
}

/// Master-side and worker-side channel ends, indexed by worker.
pub type Links = (Vec<Box<dyn Channel>>, Vec<Box<dyn Channel>>);

/// Opens `dims.n_workers` links of the requested kind. Socket links go through
/// loopback TCP; each worker announces its index with a 4-byte handshake.
pub fn connect(kind: TransportKind, dims: &Dims) -> Result<Links> {
    let n = dims.n_workers;
    match kind {
        TransportKind::InProcess => {
            let mut master: Vec<Box<dyn Channel>> = Vec::with_capacity(n);
            let mut workers: Vec<Box<dyn Channel>> = Vec::with_capacity(n);
            for _ in 0..n {
                let (m, w) = in_process_pair();
                master.push(Box::new(m));
                workers.push(Box::new(w));
            }
            Ok((master, workers))
        }
        TransportKind::Socket => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let mut workers: Vec<Box<dyn Channel>> = Vec::with_capacity(n);
            let mut accepted: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();
            for j in 0..n {
                let mut s = TcpStream::connect(addr)?;
                s.write_all(&(j as u32).to_le_bytes())?;
                workers.push(Box::new(SocketChannel::new(s, *dims)?));
                let (mut conn, _) = listener.accept()?;
                let mut hello = [0u8; 4];
                conn.read_exact(&mut hello)?;
                let idx = u32::from_le_bytes(hello) as usize;
                if idx >= n || accepted[idx].is_some() {
                    return Err(DtzoError::Protocol(format!("bad worker handshake {idx}")));
                }
                accepted[idx] = Some(conn);
            }
            let master = accepted
                .into_iter()
                .map(|s| -> Result<Box<dyn Channel>> {
                    Ok(Box::new(SocketChannel::new(
                        s.expect("all accepted"),
                        *dims,
                    )?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((master, workers))
        }
    }
}
