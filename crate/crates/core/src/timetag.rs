//! QTT1 binary timetag format.
//!
//! File layout, all little-endian:
//!
//! ```text
//! header (32 bytes): "QTT1" | version u16 | channel_count u16 | resolution_ps u32 | 20 reserved zero bytes
//! record (16 bytes): time_ps u64 | channel u8 | flags u8 | 6 reserved zero bytes
//! ```
//!
//! Framed streams (e.g. on standard input) carry a sequence of frames, each a
//! `u32` byte length followed by that many bytes of whole records. A stream
//! starts with one QTT1 header.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"QTT1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 16;

/// Flag bit 0: the tag was produced by a signal photon (simulation truth).
pub const FLAG_SIGNAL: u8 = 0x01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeTag {
    pub time_ps: u64,
    /// 0 = A, 1 = D, 2 = R, 3 = L.
    pub channel: u8,
    pub flags: u8,
}

impl TimeTag {
    pub fn new(time_ps: u64, channel: u8) -> Self {
        Self {
            time_ps,
            channel,
            flags: 0,
        }
    }

    pub fn is_signal(&self) -> bool {
        self.flags & FLAG_SIGNAL != 0
    }

    pub fn encode(&self) -> [u8; RECORD_LEN] {
        let mut b = [0u8; RECORD_LEN];
        b[..8].copy_from_slice(&self.time_ps.to_le_bytes());
        b[8] = self.channel;
        b[9] = self.flags;
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        if b.len() != RECORD_LEN {
            return Err(Error::Format(format!("record of {} bytes", b.len())));
        }
        if b[10..].iter().any(|&x| x != 0) {
            return Err(Error::Format("non-zero reserved bytes in record".into()));
        }
        Ok(Self {
            time_ps: u64::from_le_bytes(b[..8].try_into().unwrap()),
            channel: b[8],
            flags: b[9],
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QttHeader {
    pub version: u16,
    pub channel_count: u16,
    pub resolution_ps: u32,
}

impl Default for QttHeader {
    fn default() -> Self {
        Self {
            version: VERSION,
            channel_count: 4,
            resolution_ps: 1,
        }
    }
}

impl QttHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..8].copy_from_slice(&self.channel_count.to_le_bytes());
        b[8..12].copy_from_slice(&self.resolution_ps.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN {
            return Err(Error::Format("truncated header".into()));
        }
        if b[..4] != MAGIC {
            return Err(Error::Format("bad magic, expected QTT1".into()));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        if b[12..HEADER_LEN].iter().any(|&x| x != 0) {
            return Err(Error::Format("non-zero reserved bytes in header".into()));
        }
        Ok(Self {
            version,
            channel_count: u16::from_le_bytes([b[6], b[7]]),
            resolution_ps: u32::from_le_bytes(b[8..12].try_into().unwrap()),
        })
    }
}

/// Serializes a header and tags into one QTT1 byte buffer.
pub fn encode_file(header: &QttHeader, tags: &[TimeTag]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + tags.len() * RECORD_LEN);
    out.extend_from_slice(&header.encode());
    for t in tags {
        out.extend_from_slice(&t.encode());
    }
    out
}

pub fn write_file<W: Write>(mut w: W, header: &QttHeader, tags: &[TimeTag]) -> Result<()> {
    w.write_all(&header.encode())?;
    let mut buf = Vec::with_capacity(RECORD_LEN * 4096);
    for chunk in tags.chunks(4096) {
        buf.clear();
        for t in chunk {
            buf.extend_from_slice(&t.encode());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Decodes a complete QTT1 buffer.
pub fn decode_file(bytes: &[u8]) -> Result<(QttHeader, Vec<TimeTag>)> {
    let header = QttHeader::decode(bytes)?;
    let body = &bytes[HEADER_LEN..];
    let tags = decode_records(body)?;
    check_channels(&header, &tags)?;
    Ok((header, tags))
}

fn check_channels(header: &QttHeader, tags: &[TimeTag]) -> Result<()> {
    if let Some(t) = tags.iter().find(|t| t.channel as u16 >= header.channel_count) {
        return Err(Error::Format(format!(
            "channel {} out of range for {} channels",
            t.channel, header.channel_count
        )));
    }
    Ok(())
}

/// Decodes a run of whole records.
pub fn decode_records(body: &[u8]) -> Result<Vec<TimeTag>> {
    if body.len() % RECORD_LEN != 0 {
        return Err(Error::Format(format!(
            "body of {} bytes is not a whole number of records",
            body.len()
        )));
    }
    let mut tags = Vec::with_capacity(body.len() / RECORD_LEN);
    for rec in body.chunks_exact(RECORD_LEN) {
        let reserved = u64::from_le_bytes(rec[8..16].try_into().unwrap()) >> 16;
        if reserved != 0 {
            return Err(Error::Format("non-zero reserved bytes in record".into()));
        }
        tags.push(TimeTag {
            time_ps: u64::from_le_bytes(rec[..8].try_into().unwrap()),
            channel: rec[8],
            flags: rec[9],
        });
    }
    Ok(tags)
}

pub fn read_file<R: Read>(mut r: R) -> Result<(QttHeader, Vec<TimeTag>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_file(&bytes)
}

/// Writes a QTT1 header followed by length-prefixed frames of records.
pub fn write_framed<W: Write>(mut w: W, header: &QttHeader, tags: &[TimeTag], records_per_frame: usize) -> Result<()> {
    w.write_all(&header.encode())?;
    for chunk in tags.chunks(records_per_frame.max(1)) {
        let len = (chunk.len() * RECORD_LEN) as u32;
        w.write_all(&len.to_le_bytes())?;
        for t in chunk {
            w.write_all(&t.encode())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a framed QTT1 stream until end of input.
pub fn read_framed<R: Read>(mut r: R) -> Result<(QttHeader, Vec<TimeTag>)> {
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head)?;
    let header = QttHeader::decode(&head)?;
    let mut tags = Vec::new();
    let mut len_buf = [0u8; 4];
    let mut body = Vec::new();
    loop {
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_le_bytes(len_buf) as usize;
        body.resize(len, 0);
        r.read_exact(&mut body)
            .map_err(|_| Error::Format("truncated frame".into()))?;
        tags.extend(decode_records(&body)?);
    }
    check_channels(&header, &tags)?;
    Ok((header, tags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let h = QttHeader {
            version: 1,
            channel_count: 4,
            resolution_ps: 1,
        };
        let b = h.encode();
        assert_eq!(&b[..4], b"QTT1");
        assert_eq!(&b[4..12], &[1, 0, 4, 0, 1, 0, 0, 0]);
        assert!(b[12..].iter().all(|&x| x == 0));
    }

    #[test]
    fn record_layout_is_bit_exact() {
        let t = TimeTag {
            time_ps: 0x0102_0304_0506_0708,
            channel: 3,
            flags: FLAG_SIGNAL,
        };
        assert_eq!(t.encode(), [8, 7, 6, 5, 4, 3, 2, 1, 3, 1, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = encode_file(&QttHeader::default(), &[TimeTag::new(5, 1)]);
        assert!(decode_file(&bytes[..40]).is_err());
        bytes[HEADER_LEN + 12] = 1;
        assert!(decode_file(&bytes).is_err());
        let mut bad = encode_file(&QttHeader::default(), &[TimeTag::new(5, 7)]);
        assert!(decode_file(&bad).is_err());
        bad[0] = b'X';
        assert!(matches!(decode_file(&bad), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn file_and_framed_round_trip(
            raw in prop::collection::vec((any::<u64>(), 0u8..4, any::<u8>()), 0..200),
            per_frame in 1usize..50,
        ) {
            let tags: Vec<TimeTag> = raw.into_iter().map(|(t, c, f)| TimeTag { time_ps: t, channel: c, flags: f }).collect();
            let h = QttHeader::default();
            let (h2, back) = decode_file(&encode_file(&h, &tags)).unwrap();
            prop_assert_eq!(h2, h);
            prop_assert_eq!(&back, &tags);
            let mut framed = Vec::new();
            write_framed(&mut framed, &h, &tags, per_frame).unwrap();
            let (_, back) = read_framed(framed.as_slice()).unwrap();
            prop_assert_eq!(back, tags);
        }
    }
}
