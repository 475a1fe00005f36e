//! Session reconstruction.
//!
//! A TCP session runs from the client's SYN to the first FIN or RST seen in
//! either direction. A UDP session is one client datagram plus every reply on
//! the reversed 4-tuple until the next client datagram or the idle timeout.
//! Client and server roles come from the packet that opened the session, not
//! from address heuristics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::packet::{Packet, TcpFlags, Transport};

pub const TCP_IDLE_TIMEOUT_US: u64 = 300_000_000;
pub const UDP_IDLE_TIMEOUT_US: u64 = 60_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CloseReason {
    Fin,
    Rst,
    Timeout,
    EndOfCapture,
    UdpPaired,
    UdpTimeout,
}

impl CloseReason {
    pub fn as_str(self) -> &'static str {
        match self {
            CloseReason::Fin => "FIN",
            CloseReason::Rst => "RST",
            CloseReason::Timeout => "TIMEOUT",
            CloseReason::EndOfCapture => "END_OF_CAPTURE",
            CloseReason::UdpPaired => "UDP_PAIRED",
            CloseReason::UdpTimeout => "UDP_TIMEOUT",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FiveTuple {
    pub client_ip: IpAddr,
    pub client_port: u16,
    pub server_ip: IpAddr,
    pub server_port: u16,
    pub transport: Transport,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub subject_id: String,
    pub five_tuple: FiveTuple,
    pub start_time: u64,
    pub end_time: u64,
    pub client_packets: Vec<Packet>,
    pub server_packets: Vec<Packet>,
    pub close_reason: CloseReason,
    /// TCP session whose opening SYN was not observed.
    pub midstream: bool,
}

impl Session {
    pub fn packet_count(&self) -> usize {
        self.client_packets.len() + self.server_packets.len()
    }

    fn is_from_client(&self, packet: &Packet) -> bool {
        packet.src_ip == self.five_tuple.client_ip && packet.src_port == self.five_tuple.client_port
    }

    fn append(&mut self, packet: Packet) {
        self.end_time = self.end_time.max(packet.timestamp);
        if self.is_from_client(&packet) {
            self.client_packets.push(packet);
        } else {
            self.server_packets.push(packet);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timeouts {
    pub tcp_idle_us: u64,
    pub udp_idle_us: u64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts { tcp_idle_us: TCP_IDLE_TIMEOUT_US, udp_idle_us: UDP_IDLE_TIMEOUT_US }
    }
}

impl Timeouts {
    fn for_transport(&self, transport: Transport) -> u64 {
        match transport {
            Transport::Udp => self.udp_idle_us,
            _ => self.tcp_idle_us,
        }
    }
}

/// Orientation-free flow identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct FlowKey {
    low: (IpAddr, u16),
    high: (IpAddr, u16),
    transport: Transport,
}

impl FlowKey {
    fn of(packet: &Packet) -> FlowKey {
        let a = (packet.src_ip, packet.src_port);
        let b = (packet.dst_ip, packet.dst_port);
        let (low, high) = if a <= b { (a, b) } else { (b, a) };
        FlowKey { low, high, transport: packet.transport }
    }
}

struct OpenSession {
    seq: u64,
    session: Session,
}

/// Result of sessionizing one subject's packet stream.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SessionizeOutput {
    /// Sessions in the order they were opened.
    pub sessions: Vec<Session>,
    /// TCP packets that arrived on a closed 4-tuple, or FIN/RST packets with
    /// no session to close.
    pub orphans: u64,
}

/// Streaming sessionizer for a single subject.
pub struct Sessionizer {
    subject_id: String,
    timeouts: Timeouts,
    open: BTreeMap<FlowKey, OpenSession>,
    /// TCP tuples closed by FIN/RST, with the time of the last packet seen.
    lingering: BTreeMap<FlowKey, u64>,
    closed: Vec<(u64, Session)>,
    next_seq: u64,
    orphans: u64,
    last_sweep: u64,
}

impl Sessionizer {
    pub fn new(subject_id: &str, timeouts: Timeouts) -> Self {
        Sessionizer {
            subject_id: subject_id.into(),
            timeouts,
            open: BTreeMap::new(),
            lingering: BTreeMap::new(),
            closed: Vec::new(),
            next_seq: 0,
            orphans: 0,
            last_sweep: 0,
        }
    }

    pub fn orphans(&self) -> u64 {
        self.orphans
    }

    pub fn open_sessions(&self) -> usize {
        self.open.len()
    }

    /// Feeds the next packet. Packets that are neither TCP nor UDP are ignored.
    pub fn push(&mut self, packet: Packet) {
        if packet.transport == Transport::Other {
            return;
        }
        self.sweep(packet.timestamp);
        let key = FlowKey::of(&packet);
        let idle_limit = self.timeouts.for_transport(packet.transport);
        if let Some(open) = self.open.get(&key) {
            if packet.timestamp.saturating_sub(open.session.end_time) > idle_limit {
                let open = self.open.remove(&key).expect("present");
                self.close_idle(open);
            }
        }
        match packet.transport {
            Transport::Tcp => self.push_tcp(key, packet),
            _ => self.push_udp(key, packet),
        }
    }

    fn push_tcp(&mut self, key: FlowKey, packet: Packet) {
        let flags = packet.tcp_flags;
        let closers = TcpFlags::FIN | TcpFlags::RST;
        let malformed = flags.contains(TcpFlags::SYN) && flags.intersects(closers);
        let closing = !malformed && flags.intersects(closers);
        let now = packet.timestamp;

        if let Some(open) = self.open.get_mut(&key) {
            open.session.append(packet);
            if closing {
                let open = self.open.remove(&key).expect("present");
                let reason = if flags.contains(TcpFlags::RST) { CloseReason::Rst } else { CloseReason::Fin };
                self.close(open, reason);
                self.lingering.insert(key, now);
            }
            return;
        }

        let pure_syn = flags.contains(TcpFlags::SYN) && !flags.contains(TcpFlags::ACK);
        if let Some(&closed_at) = self.lingering.get(&key) {
            if !pure_syn && now.saturating_sub(closed_at) <= self.timeouts.tcp_idle_us {
                self.orphans += 1;
                self.lingering.insert(key, now);
                return;
            }
            self.lingering.remove(&key);
        }
        if closing {
            self.orphans += 1;
            return;
        }
        // A lone SYN-ACK means the client's SYN was missed; its receiver is
        // the client.
        let (client_is_src, midstream) = if pure_syn {
            (true, false)
        } else if flags.contains(TcpFlags::SYN) {
            (false, true)
        } else {
            (true, true)
        };
        self.open_session(key, packet, client_is_src, midstream);
    }

    fn push_udp(&mut self, key: FlowKey, packet: Packet) {
        if let Some(open) = self.open.get_mut(&key) {
            if !open.session.is_from_client(&packet) {
                open.session.append(packet);
                return;
            }
            let open = self.open.remove(&key).expect("present");
            self.close_idle(open);
        }
        self.open_session(key, packet, true, false);
    }

    fn open_session(&mut self, key: FlowKey, packet: Packet, client_is_src: bool, midstream: bool) {
        let five_tuple = if client_is_src {
            FiveTuple {
                client_ip: packet.src_ip,
                client_port: packet.src_port,
                server_ip: packet.dst_ip,
                server_port: packet.dst_port,
                transport: packet.transport,
            }
        } else {
            FiveTuple {
                client_ip: packet.dst_ip,
                client_port: packet.dst_port,
                server_ip: packet.src_ip,
                server_port: packet.src_port,
                transport: packet.transport,
            }
        };
        let seq = self.next_seq;
        self.next_seq += 1;
        let mut session = Session {
            session_id: format!("{}-{:06}", self.subject_id, seq),
            subject_id: self.subject_id.clone(),
            five_tuple,
            start_time: packet.timestamp,
            end_time: packet.timestamp,
            client_packets: Vec::new(),
            server_packets: Vec::new(),
            close_reason: CloseReason::EndOfCapture,
            midstream,
        };
        session.append(packet);
        self.open.insert(key, OpenSession { seq, session });
    }

    fn close(&mut self, mut open: OpenSession, reason: CloseReason) {
        open.session.close_reason = reason;
        self.closed.push((open.seq, open.session));
    }

    fn close_idle(&mut self, open: OpenSession) {
        let reason = match open.session.five_tuple.transport {
            Transport::Udp => udp_close_reason(&open.session),
            _ => CloseReason::Timeout,
        };
        self.close(open, reason);
    }

    /// Expires idle state. Produces the same sessions as lazy expiry, it only
    /// bounds memory on long captures.
    fn sweep(&mut self, now: u64) {
        let period = self.timeouts.udp_idle_us.min(self.timeouts.tcp_idle_us);
        if now < self.last_sweep.saturating_add(period) {
            return;
        }
        self.last_sweep = now;
        let timeouts = self.timeouts;
        let expired: Vec<FlowKey> = self
            .open
            .iter()
            .filter(|(_, o)| {
                now.saturating_sub(o.session.end_time) > timeouts.for_transport(o.session.five_tuple.transport)
            })
            .map(|(k, _)| *k)
            .collect();
        for key in expired {
            let open = self.open.remove(&key).expect("present");
            self.close_idle(open);
        }
        self.lingering.retain(|_, t| now.saturating_sub(*t) <= timeouts.tcp_idle_us);
    }

    /// Closes every open session (TCP as END_OF_CAPTURE, UDP as paired or
    /// timed out) and drains all closed sessions in opening order.
    pub fn flush(&mut self) -> Vec<Session> {
        let open = core::mem::take(&mut self.open);
        for (_, o) in open {
            let reason = match o.session.five_tuple.transport {
                Transport::Udp => udp_close_reason(&o.session),
                _ => CloseReason::EndOfCapture,
            };
            self.close(o, reason);
        }
        self.lingering.clear();
        let mut closed = core::mem::take(&mut self.closed);
        closed.sort_by_key(|(seq, _)| *seq);
        closed.into_iter().map(|(_, s)| s).collect()
    }

    pub fn finish(mut self) -> SessionizeOutput {
        let sessions = self.flush();
        SessionizeOutput { sessions, orphans: self.orphans }
    }
}

fn udp_close_reason(session: &Session) -> CloseReason {
    if session.server_packets.is_empty() {
        CloseReason::UdpTimeout
    } else {
        CloseReason::UdpPaired
    }
}

/// Sessionizes one subject's time-ordered packets.
pub fn sessionize<I>(subject_id: &str, packets: I, timeouts: Timeouts) -> SessionizeOutput
where
    I: IntoIterator<Item = Packet>,
{
    let mut sessionizer = Sessionizer::new(subject_id, timeouts);
    for packet in packets {
        sessionizer.push(packet);
    }
    sessionizer.finish()
}
