//! Length-prefixed binary framing for the broker's TCP transport.
//!
//! Frame: `type: u8 | len: u32 BE | payload[len]`. Strings inside a payload are
//! `len: u32 BE | UTF-8 bytes`. The opaque message body of PUBLISH and DELIVER
//! runs to the end of the frame.
//!
//! | type | packet    | payload                                      |
//! |------|-----------|----------------------------------------------|
//! | 1    | CONNECT   | client_id                                    |
//! | 2    | SUBSCRIBE | filter                                       |
//! | 3    | PUBLISH   | retain u8, topic, body                       |
//! | 4    | DELIVER   | retain u8, seq u64 BE, topic, body           |
//! | 5    | ACKERR    | code u8, message                             |

use std::io::{self, Read, Write};

use thiserror::Error;

use super::BrokerError;

pub const MAX_FRAME: usize = 1 << 20;

pub const CONNECT: u8 = 1;
pub const SUBSCRIBE: u8 = 2;
pub const PUBLISH: u8 = 3;
pub const DELIVER: u8 = 4;
pub const ACKERR: u8 = 5;

/// ACKERR code 0 acknowledges success; anything else is an error.
pub mod code {
    pub const OK: u8 = 0;
    pub const DUPLICATE_CLIENT: u8 = 1;
    pub const BAD_FILTER: u8 = 2;
    pub const BAD_TOPIC: u8 = 3;
    pub const DEAD_SESSION: u8 = 4;
    pub const PROTOCOL: u8 = 5;
}

pub fn error_code(e: &BrokerError) -> u8 {
    match e {
        BrokerError::DuplicateClient(_) => code::DUPLICATE_CLIENT,
        BrokerError::BadFilter(_) => code::BAD_FILTER,
        BrokerError::BadTopic(_) => code::BAD_TOPIC,
        BrokerError::DeadSession => code::DEAD_SESSION,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect {
        client_id: String,
    },
    Subscribe {
        filter: String,
    },
    Publish {
        retain: bool,
        topic: String,
        body: Vec<u8>,
    },
    Deliver {
        retain: bool,
        seq: u64,
        topic: String,
        body: Vec<u8>,
    },
    AckErr {
        code: u8,
        message: String,
    },
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("unknown packet type {0}")]
    UnknownType(u8),
    #[error("frame of {0} bytes exceeds limit")]
    Oversize(usize),
    #[error("frame payload truncated")]
    Truncated,
    #[error("trailing bytes in frame")]
    Trailing,
    #[error("string is not UTF-8")]
    Utf8,
    #[error("retain flag must be 0 or 1, got {0}")]
    BadFlag(u8),
}

impl Packet {
    pub fn type_byte(&self) -> u8 {
        match self {
            Packet::Connect { .. } => CONNECT,
            Packet::Subscribe { .. } => SUBSCRIBE,
            Packet::Publish { .. } => PUBLISH,
            Packet::Deliver { .. } => DELIVER,
            Packet::AckErr { .. } => ACKERR,
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Packet::Connect { client_id } => put_str(&mut out, client_id),
            Packet::Subscribe { filter } => put_str(&mut out, filter),
            Packet::Publish { retain, topic, body } => {
                out.push(*retain as u8);
                put_str(&mut out, topic);
                out.extend_from_slice(body);
            }
            Packet::Deliver {
                retain,
                seq,
                topic,
                body,
            } => {
                out.push(*retain as u8);
                out.extend_from_slice(&seq.to_be_bytes());
                put_str(&mut out, topic);
                out.extend_from_slice(body);
            }
            Packet::AckErr { code, message } => {
                out.push(*code);
                put_str(&mut out, message);
            }
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(5 + payload.len());
        out.push(self.type_byte());
        out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(kind: u8, payload: &[u8]) -> Result<Self, WireError> {
        let mut cur = Cursor { buf: payload };
        let packet = match kind {
            CONNECT => Packet::Connect {
                client_id: cur.string()?,
            },
            SUBSCRIBE => Packet::Subscribe { filter: cur.string()? },
            PUBLISH => Packet::Publish {
                retain: cur.flag()?,
                topic: cur.string()?,
                body: cur.rest(),
            },
            DELIVER => Packet::Deliver {
                retain: cur.flag()?,
                seq: u64::from_be_bytes(cur.take(8)?.try_into().expect("8 bytes")),
                topic: cur.string()?,
                body: cur.rest(),
            },
            ACKERR => Packet::AckErr {
                code: cur.take(1)?[0],
                message: cur.string()?,
            },
            other => return Err(WireError::UnknownType(other)),
        };
        if !cur.buf.is_empty() {
            return Err(WireError::Trailing);
        }
        Ok(packet)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn flag(&mut self) -> Result<bool, WireError> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(WireError::BadFlag(b)),
        }
    }

    fn string(&mut self) -> Result<String, WireError> {
        let len = u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| WireError::Utf8)
    }

    fn rest(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf).to_vec()
    }
}

pub fn write_packet(w: &mut impl Write, packet: &Packet) -> Result<(), WireError> {
    let bytes = packet.encode();
    if bytes.len() - 5 > MAX_FRAME {
        return Err(WireError::Oversize(bytes.len() - 5));
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. `Ok(None)` means the stream ended cleanly between frames.
pub fn read_packet(r: &mut impl Read) -> Result<Option<Packet>, WireError> {
    let mut header = [0u8; 5];
    let mut filled = 0;
    while filled < header.len() {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Truncated),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(header[1..].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME {
        return Err(WireError::Oversize(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Truncated,
        _ => WireError::Io(e),
    })?;
    Packet::decode(header[0], &payload).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn publish_layout_is_bit_exact() {
        let p = Packet::Publish {
            retain: true,
            topic: "a/b".into(),
            body: vec![0xde, 0xad],
        };
        assert_eq!(
            p.encode(),
            [3, 0, 0, 0, 10, 1, 0, 0, 0, 3, b'a', b'/', b'b', 0xde, 0xad]
        );
    }

    #[test]
    fn deliver_layout_is_bit_exact() {
        let p = Packet::Deliver {
            retain: false,
            seq: 258,
            topic: "t".into(),
            body: b"x".to_vec(),
        };
        assert_eq!(
            p.encode(),
            [4, 0, 0, 0, 15, 0, 0, 0, 0, 0, 0, 0, 1, 2, 0, 0, 0, 1, b't', b'x']
        );
    }

    #[test]
    fn rejects_malformed_frames() {
        assert!(matches!(
            read_packet(&mut &[9u8, 0, 0, 0, 0][..]),
            Err(WireError::UnknownType(9))
        ));
        assert!(matches!(read_packet(&mut &[1u8, 0, 0][..]), Err(WireError::Truncated)));
        assert!(matches!(
            read_packet(&mut &[1u8, 0, 0, 0, 4, 0][..]),
            Err(WireError::Truncated)
        ));
        assert!(matches!(
            read_packet(&mut &[1u8, 0xff, 0, 0, 0][..]),
            Err(WireError::Oversize(_))
        ));
        assert!(matches!(
            read_packet(&mut &[3u8, 0, 0, 0, 5, 2, 0, 0, 0, 0][..]),
            Err(WireError::BadFlag(2))
        ));
        assert!(matches!(
            read_packet(&mut &[2u8, 0, 0, 0, 5, 0, 0, 0, 0, 7][..]),
            Err(WireError::Trailing)
        ));
        assert!(matches!(
            read_packet(&mut &[2u8, 0, 0, 0, 5, 0, 0, 0, 1, 0xff][..]),
            Err(WireError::Utf8)
        ));
        assert!(read_packet(&mut &[][..]).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn round_trip(kind in 0u8..5, retain: bool, seq: u64, code: u8,
                      s in "\\PC{0,20}", body in proptest::collection::vec(any::<u8>(), 0..64)) {
            let p = match kind {
                0 => Packet::Connect { client_id: s },
                1 => Packet::Subscribe { filter: s },
                2 => Packet::Publish { retain, topic: s, body },
                3 => Packet::Deliver { retain, seq, topic: s, body },
                _ => Packet::AckErr { code, message: s },
            };
            let bytes = p.encode();
            let back = read_packet(&mut bytes.as_slice()).unwrap().unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
