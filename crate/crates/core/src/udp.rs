//! Hosts a node on a real UDP socket for manual runs. Blocking and single
//! threaded: requests arriving while the node waits on its own call are
//! dropped and left to the sender's retransmissions.

use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant};

use crate::coap::{decode_message, encode_message, CoapMessage, Code, MessageType, Retransmission};
use crate::net::{CallError, Node, Timer, Transport};

const MAX_DATAGRAM: usize = 1152;

/// The socket side of a [`UdpHost`]; node addresses are resolved through
/// `peers` first and then parsed as socket addresses.
pub struct UdpLink {
    socket: UdpSocket,
    peers: BTreeMap<String, SocketAddr>,
    started: Instant,
    next_mid: u16,
    pub retransmission: Retransmission,
}

impl UdpLink {
    fn resolve(&self, name: &str) -> Result<SocketAddr, CallError> {
        if let Some(a) = self.peers.get(name) {
            return Ok(*a);
        }
        name.to_socket_addrs()
            .ok()
            .and_then(|mut it| it.next())
            .ok_or_else(|| CallError::UnknownAddress(name.to_string()))
    }

    fn name_of(&self, addr: SocketAddr) -> String {
        self.peers
            .iter()
            .find(|(_, a)| **a == addr)
            .map_or_else(|| addr.to_string(), |(n, _)| n.clone())
    }
}

impl Transport for UdpLink {
    fn now(&self) -> u64 {
        self.started.elapsed().as_micros() as u64
    }

    /// Wall-clock time cannot be rewound; side-by-side calls simply run one
    /// after the other.
    fn set_now(&mut self, _t: u64) {}

    fn call(&mut self, to: &str, mut req: CoapMessage) -> Result<CoapMessage, CallError> {
        let dest = self.resolve(to)?;
        req.msg_type = MessageType::Confirmable;
        req.message_id = self.next_mid;
        req.token = self.next_mid.to_be_bytes().to_vec();
        self.next_mid = self.next_mid.wrapping_add(1);
        let bytes = encode_message(&req).map_err(|_| CallError::UnknownAddress(to.to_string()))?;
        let mut buf = [0u8; MAX_DATAGRAM];
        for attempt in 0..=self.retransmission.max_retransmit {
            let deadline = Instant::now() + Duration::from_millis(self.retransmission.timeout_ms(attempt));
            if self.socket.send_to(&bytes, dest).is_err() {
                continue;
            }
            while let Some(left) = deadline.checked_duration_since(Instant::now()) {
                if left.is_zero() || self.socket.set_read_timeout(Some(left)).is_err() {
                    break;
                }
                let Ok((n, from)) = self.socket.recv_from(&mut buf) else {
                    break;
                };
                let Ok(resp) = decode_message(&buf[..n]) else {
                    continue;
                };
                if from == dest && resp.message_id == req.message_id && resp.token == req.token {
                    return Ok(resp);
                }
            }
        }
        Err(CallError::Timeout(to.to_string()))
    }
}

/// A node bound to a UDP socket.
pub struct UdpHost<N: Node> {
    pub node: N,
    pub link: UdpLink,
}

impl<N: Node> UdpHost<N> {
    pub fn bind(node: N, addr: impl ToSocketAddrs) -> io::Result<Self> {
        Ok(Self {
            node,
            link: UdpLink {
                socket: UdpSocket::bind(addr)?,
                peers: BTreeMap::new(),
                started: Instant::now(),
                next_mid: 1,
                retransmission: Retransmission::default(),
            },
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.link.socket.local_addr()
    }

    /// Names another node so that calls to `name` reach `addr`.
    pub fn add_peer(&mut self, name: impl Into<String>, addr: SocketAddr) {
        self.link.peers.insert(name.into(), addr);
    }

    /// Waits up to `timeout` for one request and answers it. Returns whether
    /// a request was served.
    pub fn serve_one(&mut self, timeout: Duration) -> io::Result<bool> {
        let mut buf = [0u8; MAX_DATAGRAM];
        self.link.socket.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        let (n, from) = match self.link.socket.recv_from(&mut buf) {
            Ok(x) => x,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                return Ok(false)
            }
            Err(e) => return Err(e),
        };
        let Ok(req) = decode_message(&buf[..n]) else {
            return Ok(false);
        };
        if !req.code.is_request() {
            return Ok(false);
        }
        let name = self.link.name_of(from);
        let mut resp = self.node.handle(&req, &name, &mut self.link);
        if resp.code == Code::EMPTY {
            resp = CoapMessage::response_to(&req, Code::INTERNAL_SERVER_ERROR);
        }
        if let Ok(bytes) = encode_message(&resp) {
            self.link.socket.send_to(&bytes, from)?;
        }
        Ok(true)
    }

    pub fn fire(&mut self, timer: Timer) {
        self.node.on_timer(timer, &mut self.link);
    }

    /// Runs `f` with the node and its transport, e.g. to boot a gateway.
    pub fn with_node<T>(&mut self, f: impl FnOnce(&mut N, &mut dyn Transport) -> T) -> T {
        f(&mut self.node, &mut self.link)
    }
}
