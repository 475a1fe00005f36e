//! Classic pcap container reading and writing.
//!
//! Both byte orders and the nanosecond-resolution magic are accepted;
//! timestamps always come out in microseconds. pcapng is rejected.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trafprof_core::packet::{decode_frame, LinkType};
use trafprof_core::Packet;

const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
const MAGIC_PCAPNG: u32 = 0x0a0d_0d0a;

/// Records claiming more than this are treated as corruption.
const MAX_RECORD_LEN: usize = 1 << 28;

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW: u32 = 101;

#[derive(Debug, thiserror::Error)]
pub enum CaptureError {
    #[error("{path}: unreadable capture: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("{path}: unsupported link type {linktype}")]
    UnsupportedLinkType { path: PathBuf, linktype: u32 },
}

/// Per-file record accounting. `emitted + skipped_non_ip + truncated`
/// equals `records`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureStats {
    pub records: u64,
    pub emitted: u64,
    pub skipped_non_ip: u64,
    pub truncated: u64,
}

impl CaptureStats {
    pub fn add(&mut self, other: &CaptureStats) {
        self.records += other.records;
        self.emitted += other.emitted;
        self.skipped_non_ip += other.skipped_non_ip;
        self.truncated += other.truncated;
    }
}

#[derive(Clone, Copy, Debug)]
struct Header {
    big_endian: bool,
    nanos: bool,
    link: LinkType,
}

/// Streaming reader over one capture.
pub struct PcapReader<R> {
    inner: R,
    header: Header,
    stats: CaptureStats,
    done: bool,
}

fn unreadable(path: &Path, reason: impl Into<String>) -> CaptureError {
    CaptureError::UnreadableFile { path: path.to_path_buf(), reason: reason.into() }
}

/// Reads as many bytes as available up to `buf.len()`.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<R: Read> PcapReader<R> {
    /// Parses the global header. `path` is only used in error messages.
    pub fn new(mut inner: R, path: &Path) -> Result<Self, CaptureError> {
        let mut raw = [0u8; 24];
        let got = read_full(&mut inner, &mut raw).map_err(|e| unreadable(path, e.to_string()))?;
        if got < 24 {
            return Err(unreadable(path, "missing global header"));
        }
        let magic_le = u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]);
        let magic_be = u32::from_be_bytes([raw[0], raw[1], raw[2], raw[3]]);
        let (big_endian, nanos) = match (magic_le, magic_be) {
            (MAGIC_MICROS, _) => (false, false),
            (MAGIC_NANOS, _) => (false, true),
            (_, MAGIC_MICROS) => (true, false),
            (_, MAGIC_NANOS) => (true, true),
            (MAGIC_PCAPNG, _) => return Err(unreadable(path, "pcapng is not supported")),
            _ => return Err(unreadable(path, format!("bad magic {magic_le:#010x}"))),
        };
        let field = |i: usize| {
            let b = [raw[i], raw[i + 1], raw[i + 2], raw[i + 3]];
            if big_endian { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) }
        };
        // The upper 16 bits may carry FCS information.
        let linktype = field(20) & 0xffff;
        let link = LinkType::from_pcap(linktype)
            .ok_or_else(|| CaptureError::UnsupportedLinkType { path: path.to_path_buf(), linktype })?;
        Ok(PcapReader { inner, header: Header { big_endian, nanos, link }, stats: CaptureStats::default(), done: false })
    }

    pub fn stats(&self) -> CaptureStats {
        self.stats
    }

    pub fn link_type(&self) -> LinkType {
        self.header.link
    }

    fn u32_at(&self, raw: &[u8], i: usize) -> u32 {
        let b = [raw[i], raw[i + 1], raw[i + 2], raw[i + 3]];
        if self.header.big_endian { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) }
    }

    /// Next decoded IP packet. Non-IP frames are counted and skipped; a
    /// truncated record ends the stream.
    pub fn next_packet(&mut self) -> io::Result<Option<Packet>> {
        while !self.done {
            let mut rec = [0u8; 16];
            let got = read_full(&mut self.inner, &mut rec)?;
            if got == 0 {
                self.done = true;
                break;
            }
            self.stats.records += 1;
            if got < 16 {
                log::warn!("truncated record header at end of capture");
                self.stats.truncated += 1;
                self.done = true;
                break;
            }
            let secs = u64::from(self.u32_at(&rec, 0));
            let frac = u64::from(self.u32_at(&rec, 4));
            let incl = self.u32_at(&rec, 8) as usize;
            if incl > MAX_RECORD_LEN {
                log::warn!("record length {incl} is implausible; treating as truncation");
                self.stats.truncated += 1;
                self.done = true;
                break;
            }
            let mut frame = vec![0u8; incl];
            if read_full(&mut self.inner, &mut frame)? < incl {
                log::warn!("truncated trailing record");
                self.stats.truncated += 1;
                self.done = true;
                break;
            }
            let micros = if self.header.nanos { frac / 1000 } else { frac };
            match decode_frame(self.header.link, &frame, secs * 1_000_000 + micros) {
                Some(packet) => {
                    self.stats.emitted += 1;
                    return Ok(Some(packet));
                }
                None => self.stats.skipped_non_ip += 1,
            }
        }
        Ok(None)
    }
}

/// A fully read capture.
#[derive(Debug)]
pub struct Capture {
    pub packets: Vec<Packet>,
    pub stats: CaptureStats,
}

pub fn read_capture(path: &Path) -> Result<Capture, CaptureError> {
    let file = File::open(path).map_err(|e| unreadable(path, e.to_string()))?;
    let mut reader = PcapReader::new(BufReader::new(file), path)?;
    let mut packets = Vec::new();
    while let Some(p) = reader.next_packet().map_err(|e| unreadable(path, e.to_string()))? {
        packets.push(p);
    }
    Ok(Capture { packets, stats: reader.stats() })
}

/// Little-endian, microsecond-resolution writer.
pub struct PcapWriter<W: Write> {
    inner: W,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W, linktype: u32) -> io::Result<Self> {
        let mut header = Vec::with_capacity(24);
        header.extend_from_slice(&MAGIC_MICROS.to_le_bytes());
        header.extend_from_slice(&2u16.to_le_bytes());
        header.extend_from_slice(&4u16.to_le_bytes());
        header.extend_from_slice(&0i32.to_le_bytes());
        header.extend_from_slice(&0u32.to_le_bytes());
        header.extend_from_slice(&262_144u32.to_le_bytes());
        header.extend_from_slice(&linktype.to_le_bytes());
        inner.write_all(&header)?;
        Ok(PcapWriter { inner })
    }

    pub fn write_frame(&mut self, timestamp_us: u64, frame: &[u8]) -> io::Result<()> {
        let secs = u32::try_from(timestamp_us / 1_000_000)
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "timestamp past 2106"))?;
        let len = u32::try_from(frame.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too long"))?;
        let mut rec = [0u8; 16];
        rec[0..4].copy_from_slice(&secs.to_le_bytes());
        rec[4..8].copy_from_slice(&((timestamp_us % 1_000_000) as u32).to_le_bytes());
        rec[8..12].copy_from_slice(&len.to_le_bytes());
        rec[12..16].copy_from_slice(&len.to_le_bytes());
        self.inner.write_all(&rec)?;
        self.inner.write_all(frame)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub fn create_capture(path: &Path, linktype: u32) -> io::Result<PcapWriter<BufWriter<File>>> {
    PcapWriter::new(BufWriter::new(File::create(path)?), linktype)
}
