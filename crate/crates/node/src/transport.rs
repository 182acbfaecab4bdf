//! TCP transport for consensus traffic. Delivery is best effort: frames that
//! cannot be written are dropped and RAFT retransmits.

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::sync::Mutex;
use std::time::Duration;

use rmsd_core::consensus::Message;
use rmsd_core::crypto::{Keypair, PublicKey};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use crate::wire::{decode_frame, encode_frame, MAX_FRAME};

const PEER_QUEUE: usize = 1024;
const CONNECT_TIMEOUT: Duration = Duration::from_millis(300);
/// After a failed connect, frames are discarded for this long.
const RECONNECT_BACKOFF: Duration = Duration::from_millis(100);

pub type Inbound = mpsc::Sender<(PublicKey, Message)>;

struct Peer {
    addr: String,
    queue: mpsc::Sender<Vec<u8>>,
    task: JoinHandle<()>,
}

pub struct Transport {
    key: Keypair,
    local_addr: SocketAddr,
    peers: Mutex<HashMap<PublicKey, Peer>>,
    accept: JoinHandle<()>,
}

impl Transport {
    /// Listens on `listen` and forwards verified inbound messages to `inbound`.
    pub async fn bind(listen: SocketAddr, key: Keypair, inbound: Inbound) -> io::Result<Transport> {
        let listener = TcpListener::bind(listen).await?;
        let local_addr = listener.local_addr()?;
        let accept = tokio::spawn(accept_loop(listener, inbound));
        Ok(Transport { key, local_addr, peers: Mutex::new(HashMap::new()), accept })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Closes the listener and waits until its port is released.
    pub async fn shutdown(mut self) {
        self.accept.abort();
        let _ = (&mut self.accept).await;
    }

    /// Queues `msg` for `to` at `addr`. Never blocks.
    pub fn send(&self, to: PublicKey, addr: &str, msg: &Message) {
        let frame = encode_frame(&self.key, msg);
        let mut peers = self.peers.lock().expect("peer table poisoned");
        let stale = peers.get(&to).is_some_and(|p| p.addr != addr || p.task.is_finished());
        if stale {
            if let Some(p) = peers.remove(&to) {
                p.task.abort();
            }
        }
        let peer = peers.entry(to).or_insert_with(|| {
            let (queue, rx) = mpsc::channel(PEER_QUEUE);
            let task = tokio::spawn(writer_loop(addr.to_string(), rx));
            Peer { addr: addr.to_string(), queue, task }
        });
        if peer.queue.try_send(frame).is_err() {
            tracing::trace!(peer = %to, "peer queue full, frame dropped");
        }
    }
}

impl Drop for Transport {
    fn drop(&mut self) {
        self.accept.abort();
        if let Ok(peers) = self.peers.get_mut() {
            for p in peers.values() {
                p.task.abort();
            }
        }
    }
}

async fn writer_loop(addr: String, mut rx: mpsc::Receiver<Vec<u8>>) {
    let mut stream: Option<TcpStream> = None;
    let mut retry_at = tokio::time::Instant::now();
    while let Some(frame) = rx.recv().await {
        if stream.is_none() {
            if tokio::time::Instant::now() < retry_at {
                continue;
            }
            match tokio::time::timeout(CONNECT_TIMEOUT, TcpStream::connect(&addr)).await {
                Ok(Ok(s)) => {
                    let _ = s.set_nodelay(true);
                    stream = Some(s);
                }
                _ => {
                    retry_at = tokio::time::Instant::now() + RECONNECT_BACKOFF;
                    continue;
                }
            }
        }
        let s = stream.as_mut().expect("connected above");
        if s.write_all(&frame).await.is_err() {
            stream = None;
        }
    }
}

async fn accept_loop(listener: TcpListener, inbound: Inbound) {
    loop {
        match listener.accept().await {
            Ok((stream, _)) => {
                let _ = stream.set_nodelay(true);
                tokio::spawn(read_loop(stream, inbound.clone()));
            }
            Err(e) => {
                tracing::warn!(error = %e, "accept failed");
                tokio::time::sleep(Duration::from_millis(50)).await;
            }
        }
    }
}

async fn read_loop(mut stream: TcpStream, inbound: Inbound) {
    let mut len = [0u8; 4];
    loop {
        if stream.read_exact(&mut len).await.is_err() {
            return;
        }
        let n = u32::from_be_bytes(len) as usize;
        if n > MAX_FRAME {
            tracing::warn!(len = n, "oversized frame, closing connection");
            return;
        }
        let mut buf = vec![0u8; n];
        if stream.read_exact(&mut buf).await.is_err() {
            return;
        }
        match decode_frame(&buf) {
            Ok(m) => {
                if inbound.send(m).await.is_err() {
                    return;
                }
            }
            Err(e) => {
                tracing::warn!(error = %e, "invalid frame, closing connection");
                return;
            }
        }
    }
}
