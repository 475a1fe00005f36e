//! Normalized packet records and link-layer frame decoding.

use alloc::vec::Vec;
use core::fmt;
use core::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Transport {
    Tcp,
    Udp,
    Other,
}

/// TCP control bits kept by the pipeline. Always empty for non-TCP packets.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TcpFlags(u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);

    const MASK: u8 = 0x1f;

    pub const fn empty() -> Self {
        TcpFlags(0)
    }

    /// Keeps only the five tracked bits of a raw TCP flag byte.
    pub const fn from_bits_truncate(bits: u8) -> Self {
        TcpFlags(bits & Self::MASK)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub const fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub const fn intersects(self, other: TcpFlags) -> bool {
        self.0 & other.0 != 0
    }
}

impl core::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | rhs.0)
    }
}

impl fmt::Debug for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [(TcpFlags, &str); 5] = [
            (TcpFlags::SYN, "SYN"),
            (TcpFlags::ACK, "ACK"),
            (TcpFlags::FIN, "FIN"),
            (TcpFlags::RST, "RST"),
            (TcpFlags::PSH, "PSH"),
        ];
        let mut first = true;
        f.write_str("[")?;
        for (flag, name) in NAMES {
            if self.contains(flag) {
                if !first {
                    f.write_str("|")?;
                }
                f.write_str(name)?;
                first = false;
            }
        }
        f.write_str("]")
    }
}

/// One captured IP datagram.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    /// Microseconds since the Unix epoch.
    pub timestamp: u64,
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub transport: Transport,
    pub tcp_flags: TcpFlags,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
}

impl Packet {
    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_tcp(&self) -> bool {
        self.transport == Transport::Tcp
    }
}

/// Link layers accepted by [`decode_frame`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkType {
    Ethernet,
    /// Raw IP, version taken from the first nibble.
    RawIp,
    RawIpv4,
    RawIpv6,
}

impl LinkType {
    /// Maps a pcap `LINKTYPE_*` value.
    pub fn from_pcap(linktype: u32) -> Option<LinkType> {
        match linktype {
            1 => Some(LinkType::Ethernet),
            12 | 14 | 101 => Some(LinkType::RawIp),
            228 => Some(LinkType::RawIpv4),
            229 => Some(LinkType::RawIpv6),
            _ => None,
        }
    }
}

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;

const IPPROTO_TCP: u8 = 6;
const IPPROTO_UDP: u8 = 17;

/// Decodes one captured frame. Returns `None` for non-IP frames and for
/// frames whose IP header is truncated.
pub fn decode_frame(link: LinkType, frame: &[u8], timestamp: u64) -> Option<Packet> {
    let ip = match link {
        LinkType::Ethernet => strip_ethernet(frame)?,
        LinkType::RawIp | LinkType::RawIpv4 | LinkType::RawIpv6 => frame,
    };
    let version = ip.first()? >> 4;
    match link {
        LinkType::RawIpv4 => decode_ipv4(ip, timestamp),
        LinkType::RawIpv6 => decode_ipv6(ip, timestamp),
        _ => match version {
            4 => decode_ipv4(ip, timestamp),
            6 => decode_ipv6(ip, timestamp),
            _ => None,
        },
    }
}

fn strip_ethernet(frame: &[u8]) -> Option<&[u8]> {
    let mut offset = 12;
    loop {
        let ethertype = be16(frame, offset)?;
        match ethertype {
            ETHERTYPE_VLAN | ETHERTYPE_QINQ => offset += 4,
            ETHERTYPE_IPV4 | ETHERTYPE_IPV6 => return frame.get(offset + 2..),
            _ => return None,
        }
    }
}

fn decode_ipv4(ip: &[u8], timestamp: u64) -> Option<Packet> {
    if ip.len() < 20 {
        return None;
    }
    let header_len = usize::from(ip[0] & 0x0f) * 4;
    let total_len = usize::from(be16(ip, 2)?);
    if header_len < 20 || total_len < header_len || ip.len() < header_len {
        return None;
    }
    // Ethernet padding sits past total_len; a short capture snaplen cuts it.
    let end = total_len.min(ip.len());
    let fragment_offset = be16(ip, 6)? & 0x1fff;
    let src = IpAddr::V4(Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]));
    let dst = IpAddr::V4(Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]));
    let body = &ip[header_len..end];
    let protocol = if fragment_offset == 0 { ip[9] } else { 0 };
    Some(decode_transport(protocol, body, src, dst, timestamp))
}

fn decode_ipv6(ip: &[u8], timestamp: u64) -> Option<Packet> {
    if ip.len() < 40 {
        return None;
    }
    let payload_len = usize::from(be16(ip, 4)?);
    let mut next = ip[6];
    let src = IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(&ip[8..24]).ok()?));
    let dst = IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(&ip[24..40]).ok()?));
    let end = (40 + payload_len).min(ip.len());
    let mut offset = 40;
    // Walk the common extension headers.
    loop {
        match next {
            0 | 43 | 60 => {
                let hdr_next = *ip.get(offset)?;
                let len = (usize::from(*ip.get(offset + 1)?) + 1) * 8;
                next = hdr_next;
                offset += len;
            }
            44 => {
                let hdr_next = *ip.get(offset)?;
                let frag = be16(ip, offset + 2)? >> 3;
                next = if frag == 0 { hdr_next } else { 59 };
                offset += 8;
            }
            _ => break,
        }
        if offset > end {
            return None;
        }
    }
    Some(decode_transport(next, &ip[offset..end], src, dst, timestamp))
}

fn decode_transport(protocol: u8, body: &[u8], src: IpAddr, dst: IpAddr, timestamp: u64) -> Packet {
    let other = |payload: &[u8]| Packet {
        timestamp,
        src_ip: src,
        dst_ip: dst,
        src_port: 0,
        dst_port: 0,
        transport: Transport::Other,
        tcp_flags: TcpFlags::empty(),
        payload: payload.to_vec(),
    };
    match protocol {
        IPPROTO_TCP if body.len() >= 20 => {
            let data_offset = usize::from(body[12] >> 4) * 4;
            if data_offset < 20 || data_offset > body.len() {
                return other(body);
            }
            Packet {
                timestamp,
                src_ip: src,
                dst_ip: dst,
                src_port: u16::from_be_bytes([body[0], body[1]]),
                dst_port: u16::from_be_bytes([body[2], body[3]]),
                transport: Transport::Tcp,
                tcp_flags: TcpFlags::from_bits_truncate(body[13]),
                payload: body[data_offset..].to_vec(),
            }
        }
        IPPROTO_UDP if body.len() >= 8 => {
            let udp_len = usize::from(u16::from_be_bytes([body[4], body[5]]));
            let end = if udp_len >= 8 { udp_len.min(body.len()) } else { body.len() };
            Packet {
                timestamp,
                src_ip: src,
                dst_ip: dst,
                src_port: u16::from_be_bytes([body[0], body[1]]),
                dst_port: u16::from_be_bytes([body[2], body[3]]),
                transport: Transport::Udp,
                tcp_flags: TcpFlags::empty(),
                payload: body[8..end].to_vec(),
            }
        }
        _ => other(body),
    }
}

fn be16(buf: &[u8], offset: usize) -> Option<u16> {
    let bytes = buf.get(offset..offset + 2)?;
    Some(u16::from_be_bytes([bytes[0], bytes[1]]))
}

mod hex_bytes {
    use alloc::string::String;
    use alloc::vec::Vec;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    const DIGITS: &[u8; 16] = b"0123456789abcdef";

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        let mut out = String::with_capacity(bytes.len() * 2);
        for b in bytes {
            out.push(char::from(DIGITS[usize::from(b >> 4)]));
            out.push(char::from(DIGITS[usize::from(b & 0x0f)]));
        }
        serializer.serialize_str(&out)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(deserializer)?;
        let raw = text.as_bytes();
        if raw.len() % 2 != 0 {
            return Err(D::Error::custom("odd-length hex payload"));
        }
        raw.chunks(2)
            .map(|pair| Ok((nibble(pair[0])? << 4) | nibble(pair[1])?))
            .collect::<Result<Vec<u8>, &'static str>>()
            .map_err(D::Error::custom)
    }

    fn nibble(c: u8) -> Result<u8, &'static str> {
        match c {
            b'0'..=b'9' => Ok(c - b'0'),
            b'a'..=b'f' => Ok(c - b'a' + 10),
            b'A'..=b'F' => Ok(c - b'A' + 10),
            _ => Err("invalid hex digit"),
        }
    }
}
