//! Encoding of [`Packet`] values back into Ethernet frames, the inverse of
//! `decode_frame`. Checksums are left zero.

use std::net::IpAddr;

use trafprof_core::{Packet, Transport};

const CLIENT_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x01];
const SERVER_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x02];

fn transport_header(packet: &Packet) -> (u8, Vec<u8>) {
    let mut h = Vec::with_capacity(20);
    h.extend_from_slice(&packet.src_port.to_be_bytes());
    h.extend_from_slice(&packet.dst_port.to_be_bytes());
    match packet.transport {
        Transport::Tcp => {
            h.extend_from_slice(&[0; 8]);
            h.push(5 << 4);
            h.push(packet.tcp_flags.bits());
            h.extend_from_slice(&[0xff, 0xff, 0, 0, 0, 0]);
            (6, h)
        }
        Transport::Udp => {
            let len = (8 + packet.payload.len()) as u16;
            h.extend_from_slice(&len.to_be_bytes());
            h.extend_from_slice(&[0, 0]);
            (17, h)
        }
        // ICMP echo shape; ports are not encoded.
        Transport::Other => (1, Vec::new()),
    }
}

/// Panics if the payload does not fit in one IP datagram.
pub fn encode_frame(packet: &Packet) -> Vec<u8> {
    let (protocol, l4) = transport_header(packet);
    let body_len = l4.len() + packet.payload.len();
    let mut frame = Vec::with_capacity(14 + 40 + body_len);
    frame.extend_from_slice(&SERVER_MAC);
    frame.extend_from_slice(&CLIENT_MAC);
    match (packet.src_ip, packet.dst_ip) {
        (IpAddr::V4(src), IpAddr::V4(dst)) => {
            let total = u16::try_from(20 + body_len).expect("payload fits one IPv4 datagram");
            frame.extend_from_slice(&0x0800u16.to_be_bytes());
            frame.extend_from_slice(&[0x45, 0]);
            frame.extend_from_slice(&total.to_be_bytes());
            frame.extend_from_slice(&[0, 0, 0x40, 0, 64, protocol, 0, 0]);
            frame.extend_from_slice(&src.octets());
            frame.extend_from_slice(&dst.octets());
        }
        (src, dst) => {
            let to_v6 = |ip: IpAddr| match ip {
                IpAddr::V4(v4) => v4.to_ipv6_mapped(),
                IpAddr::V6(v6) => v6,
            };
            let len = u16::try_from(body_len).expect("payload fits one IPv6 datagram");
            frame.extend_from_slice(&0x86ddu16.to_be_bytes());
            frame.extend_from_slice(&[0x60, 0, 0, 0]);
            frame.extend_from_slice(&len.to_be_bytes());
            frame.extend_from_slice(&[protocol, 64]);
            frame.extend_from_slice(&to_v6(src).octets());
            frame.extend_from_slice(&to_v6(dst).octets());
        }
    }
    frame.extend_from_slice(&l4);
    frame.extend_from_slice(&packet.payload);
    frame
}
