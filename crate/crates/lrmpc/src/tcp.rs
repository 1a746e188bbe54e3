//! TCP transport with the same framing as the in-process channels.
//!
//! The lower-numbered party of each pair listens and the higher-numbered one
//! dials. Both sides then exchange a `Hello` frame carrying their party number
//! under the session id; a session mismatch aborts. Each connection gets a
//! writer thread (so `send` only enqueues) and a reader thread that decodes
//! frames into a queue.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use lrmpc_core::net::{Phase, Topology, Transport};
use lrmpc_core::wire::{Frame, MessageKind, HEADER_LEN};
use lrmpc_core::{Error, PartyId, Result};
use serde::{Deserialize, Serialize};

/// One party's view of the deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub party: u8,
    pub listen: String,
    /// Peer party number to address.
    pub peers: BTreeMap<u8, String>,
}

struct Link {
    tx: Option<Sender<Vec<u8>>>,
    rx: Receiver<Result<Frame>>,
    writer: Option<JoinHandle<()>>,
    sent: Arc<AtomicU64>,
}

pub struct TcpTransport {
    me: PartyId,
    topology: Topology,
    links: BTreeMap<PartyId, Link>,
    timeout: Option<Duration>,
}

fn transport_err(me: PartyId, reason: impl Into<String>) -> Error {
    Error::Transport { party: me, layer: 0, reason: reason.into() }
}

fn read_frame(r: &mut impl Read) -> Result<Option<Frame>> {
    let mut header = [0u8; HEADER_LEN];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(Error::Frame(format!("read: {e}"))),
    }
    let total = Frame::frame_len(&header)?;
    let mut buf = vec![0u8; total];
    buf[..HEADER_LEN].copy_from_slice(&header);
    r.read_exact(&mut buf[HEADER_LEN..]).map_err(|e| Error::Frame(format!("truncated frame: {e}")))?;
    Ok(Some(Frame::decode(&buf)?.0))
}

fn hello(session: u32, me: PartyId) -> Frame {
    Frame { session, layer: 0, kind: MessageKind::Hello, payload: vec![u64::from(me.number())] }
}

/// Exchanges `Hello` frames; returns the peer's party number.
fn handshake(stream: &mut TcpStream, session: u32, me: PartyId) -> Result<PartyId> {
    stream.write_all(&hello(session, me).encode()).map_err(|e| transport_err(me, format!("hello: {e}")))?;
    let f = read_frame(stream)?.ok_or_else(|| transport_err(me, "peer closed during handshake"))?;
    if f.session != session {
        return Err(Error::Session { expected: session, got: f.session });
    }
    if f.kind != MessageKind::Hello || f.payload.len() != 1 {
        return Err(Error::Frame("expected a hello frame".into()));
    }
    let peer = u8::try_from(f.payload[0]).map_err(|_| Error::Frame("bad party number in hello".into()))?;
    PartyId::new(peer)
}

fn dial(addr: &str, deadline: Instant, me: PartyId) -> Result<TcpStream> {
    loop {
        let last = match addr.to_socket_addrs() {
            Ok(mut a) => match a.next() {
                Some(a) => match TcpStream::connect_timeout(&a, Duration::from_millis(500)) {
                    Ok(s) => return Ok(s),
                    Err(e) => e.to_string(),
                },
                None => format!("{addr} resolves to nothing"),
            },
            Err(e) => e.to_string(),
        };
        if Instant::now() >= deadline {
            return Err(transport_err(me, format!("cannot reach {addr}: {last}")));
        }
        std::thread::sleep(Duration::from_millis(50));
    }
}

impl TcpTransport {
    /// Connects to every peer that shares an online channel with this party.
    pub fn connect(cfg: &EndpointConfig, topology: Topology, session: u32, timeout: Duration) -> Result<TcpTransport> {
        let me = PartyId::new(cfg.party)?;
        let peers: Vec<PartyId> = PartyId::all(topology.parties())
            .filter(|&q| topology.has_channel(me, q, Phase::Online) || topology.has_channel(q, me, Phase::Online))
            .collect();
        let deadline = Instant::now() + timeout;
        let mut streams: BTreeMap<PartyId, TcpStream> = BTreeMap::new();

        let listener = if peers.iter().any(|&q| q > me) {
            Some(TcpListener::bind(&cfg.listen).map_err(|e| transport_err(me, format!("bind {}: {e}", cfg.listen)))?)
        } else {
            None
        };
        for &q in peers.iter().filter(|&&q| q < me) {
            let addr = cfg.peers.get(&q.number()).ok_or_else(|| Error::Config(format!("no address for {q}")))?;
            let mut s = dial(addr, deadline, me)?;
            let got = handshake(&mut s, session, me)?;
            if got != q {
                return Err(transport_err(me, format!("{addr} answered as {got}, expected {q}")));
            }
            streams.insert(q, s);
        }
        if let Some(listener) = listener {
            listener.set_nonblocking(true).map_err(|e| transport_err(me, e.to_string()))?;
            while peers.iter().any(|&q| q > me && !streams.contains_key(&q)) {
                match listener.accept() {
                    Ok((mut s, _)) => {
                        s.set_nonblocking(false).map_err(|e| transport_err(me, e.to_string()))?;
                        s.set_read_timeout(Some(timeout)).map_err(|e| transport_err(me, e.to_string()))?;
                        let q = handshake(&mut s, session, me)?;
                        if q <= me || !peers.contains(&q) || streams.contains_key(&q) {
                            return Err(transport_err(me, format!("unexpected connection from {q}")));
                        }
                        s.set_read_timeout(None).map_err(|e| transport_err(me, e.to_string()))?;
                        streams.insert(q, s);
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        if Instant::now() >= deadline {
                            return Err(transport_err(me, "timed out waiting for peers to connect"));
                        }
                        std::thread::sleep(Duration::from_millis(10));
                    }
                    Err(e) => return Err(transport_err(me, format!("accept: {e}"))),
                }
            }
        }

        let mut links = BTreeMap::new();
        for (q, s) in streams {
            s.set_nodelay(true).ok();
            let read_half = s.try_clone().map_err(|e| transport_err(me, e.to_string()))?;
            let (in_tx, in_rx) = channel();
            std::thread::spawn(move || {
                let mut r = BufReader::new(read_half);
                loop {
                    match read_frame(&mut r) {
                        Ok(Some(f)) => {
                            if in_tx.send(Ok(f)).is_err() {
                                break;
                            }
                        }
                        Ok(None) => break,
                        Err(e) => {
                            in_tx.send(Err(e)).ok();
                            break;
                        }
                    }
                }
            });
            let (out_tx, out_rx) = channel::<Vec<u8>>();
            let writer = std::thread::spawn(move || {
                let mut w = BufWriter::new(&s);
                for bytes in out_rx {
                    if w.write_all(&bytes).and_then(|_| w.flush()).is_err() {
                        break;
                    }
                }
                drop(w);
                s.shutdown(Shutdown::Write).ok();
            });
            links.insert(q, Link { tx: Some(out_tx), rx: in_rx, writer: Some(writer), sent: Arc::new(AtomicU64::new(0)) });
        }
        Ok(TcpTransport { me, topology, links, timeout: None })
    }

    pub fn set_timeout(&mut self, t: Option<Duration>) {
        self.timeout = t;
    }

    /// Frame bytes sent to each peer so far.
    pub fn sent_bytes(&self) -> BTreeMap<PartyId, u64> {
        self.links.iter().map(|(&q, l)| (q, l.sent.load(Ordering::Relaxed))).collect()
    }

    /// Flushes every queued frame and closes the write halves.
    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        for link in self.links.values_mut() {
            link.tx.take();
            if let Some(h) = link.writer.take() {
                h.join().ok();
            }
        }
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Transport for TcpTransport {
    fn me(&self) -> PartyId {
        self.me
    }

    fn send(&mut self, to: PartyId, frame: Frame) -> Result<()> {
        self.topology.check(self.me, to, Phase::Online)?;
        let link = self.links.get(&to).ok_or(Error::NoChannel { from: self.me, to })?;
        let bytes = frame.encode();
        let len = bytes.len() as u64;
        let tx = link.tx.as_ref().ok_or_else(|| transport_err(self.me, "transport closed"))?;
        tx.send(bytes).map_err(|_| Error::Transport { party: self.me, layer: frame.layer, reason: format!("connection to {to} lost") })?;
        link.sent.fetch_add(len, Ordering::Relaxed);
        Ok(())
    }

    fn recv(&mut self, from: PartyId) -> Result<Frame> {
        self.topology.check(from, self.me, Phase::Online)?;
        let link = self.links.get(&from).ok_or(Error::NoChannel { from, to: self.me })?;
        let got = match self.timeout {
            None => link.rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
            Some(t) => link.rx.recv_timeout(t),
        };
        match got {
            Ok(r) => r,
            Err(RecvTimeoutError::Disconnected) => Err(transport_err(self.me, format!("{from} disconnected"))),
            Err(RecvTimeoutError::Timeout) => Err(transport_err(self.me, format!("timed out waiting for {from}"))),
        }
    }
}
