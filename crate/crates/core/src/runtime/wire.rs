//! Binary framing for the socket transport.
//!
//! ```text
//! "DTZ0" | tag: u8 | count: u32 LE | count x f64 LE | crc32(payload): u32 LE
//! ```
//!
//! Upward messages carry the worker index as their first scalar.

use std::io::{Read, Write};

use crate::error::{DtzoError, Result};
use crate::problem::Dims;
use crate::runtime::message::{Message, Tag};

pub const MAGIC: &[u8; 4] = b"DTZ0";
/// Frames larger than this are rejected before allocation.
pub const MAX_SCALARS: u32 = 1 << 24;

fn payload(msg: &Message) -> Vec<f64> {
    match msg {
        Message::WorkerUpdate { j, x1, x2, x3 } => {
            let mut p = vec![*j as f64];
            p.extend_from_slice(x1);
            p.extend_from_slice(x2);
            p.extend_from_slice(x3);
            p
        }
        Message::MasterBroadcast {
            z1,
            z2,
            z3,
            grad_x2,
            grad_x3,
        } => [z1.as_slice(), z2, z3, grad_x2, grad_x3].concat(),
        Message::PhiRoundUp { j, block } => {
            let mut p = vec![*j as f64];
            p.extend_from_slice(block);
            p
        }
        Message::PhiRoundDown { block } => block.clone(),
        Message::Shutdown => Vec::new(),
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let p = payload(msg);
    let mut body = Vec::with_capacity(p.len() * 8);
    for x in &p {
        body.extend_from_slice(&x.to_le_bytes());
    }
    let mut out = Vec::with_capacity(13 + body.len());
    out.extend_from_slice(MAGIC);
    out.push(msg.tag() as u8);
    out.extend_from_slice(&(p.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()?;
    Ok(())
}

/// Reads one raw frame: its tag and payload scalars.
pub fn read_frame<R: Read>(r: &mut R) -> Result<(Tag, Vec<f64>)> {
    let mut head = [0u8; 9];
    r.read_exact(&mut head).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DtzoError::Transport("channel closed".into()),
        _ => DtzoError::Io(e),
    })?;
    if &head[..4] != MAGIC {
        return Err(DtzoError::Frame(format!("bad magic {:?}", &head[..4])));
    }
    let tag = Tag::from_byte(head[4])
        .ok_or_else(|| DtzoError::Frame(format!("unknown tag {}", head[4])))?;
    let count = u32::from_le_bytes(head[5..9].try_into().expect("4 bytes"));
    if count > MAX_SCALARS {
        return Err(DtzoError::Frame(format!(
            "payload of {count} scalars exceeds limit"
        )));
    }
    let mut body = vec![0u8; count as usize * 8];
    r.read_exact(&mut body)?;
    let mut crc = [0u8; 4];
    r.read_exact(&mut crc)?;
    if u32::from_le_bytes(crc) != crc32fast::hash(&body) {
        return Err(DtzoError::Frame("payload checksum mismatch".into()));
    }
    let vals = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((tag, vals))
}

fn worker_index(x: f64) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && x < u32::MAX as f64 {
        Ok(x as usize)
    } else {
        Err(DtzoError::Frame(format!("invalid worker index {x}")))
    }
}

fn expect_len(tag: Tag, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(DtzoError::Frame(format!(
            "{tag:?} frame carries {got} scalars, expected {expected}"
        )))
    }
}

/// Rebuilds a message from a raw frame. Round messages carry a block of
/// `round_len` scalars (`d3` for the inner procedure, `d2` for the outer one).
pub fn to_message(tag: Tag, p: Vec<f64>, dims: &Dims, round_len: usize) -> Result<Message> {
    let (d1, d2, d3) = (dims.d1, dims.d2, dims.d3);
    Ok(match tag {
        Tag::WorkerUpdate => {
            expect_len(tag, 1 + d1 + d2 + d3, p.len())?;
            Message::WorkerUpdate {
                j: worker_index(p[0])?,
                x1: p[1..1 + d1].to_vec(),
                x2: p[1 + d1..1 + d1 + d2].to_vec(),
                x3: p[1 + d1 + d2..].to_vec(),
            }
        }
        Tag::MasterBroadcast => {
            expect_len(tag, d1 + 2 * d2 + 2 * d3, p.len())?;
            let mut at = 0;
            let mut take = |n: usize| {
                let s = p[at..at + n].to_vec();
                at += n;
                s
            };
            Message::MasterBroadcast {
                z1: take(d1),
                z2: take(d2),
                z3: take(d3),
                grad_x2: take(d2),
                grad_x3: take(d3),
            }
        }
        Tag::PhiRoundUp => {
            expect_len(tag, 1 + round_len, p.len())?;
            Message::PhiRoundUp {
                j: worker_index(p[0])?,
                block: p[1..].to_vec(),
            }
        }
        Tag::PhiRoundDown => {
            expect_len(tag, round_len, p.len())?;
            Message::PhiRoundDown { block: p }
        }
        Tag::Shutdown => {
            expect_len(tag, 0, p.len())?;
            Message::Shutdown
        }
    })
}

pub fn read_message<R: Read>(r: &mut R, dims: &Dims, round_len: usize) -> Result<Message> {
    let (tag, p) = read_frame(r)?;
    to_message(tag, p, dims, round_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims() -> Dims {
        Dims::new(3, 2, 1, 4).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let msgs = [
            Message::WorkerUpdate {
                j: 3,
                x1: vec![1.0, -0.0, f64::MIN_POSITIVE],
                x2: vec![1e300, -2.5],
                x3: vec![0.1 + 0.2],
            },
            Message::MasterBroadcast {
                z1: vec![1.0, 2.0, 3.0],
                z2: vec![4.0, 5.0],
                z3: vec![6.0],
                grad_x2: vec![7.0, 8.0],
                grad_x3: vec![9.0],
            },
            Message::PhiRoundUp {
                j: 0,
                block: vec![0.5],
            },
            Message::PhiRoundDown { block: vec![-0.5] },
            Message::Shutdown,
        ];
        for m in msgs {
            let bytes = encode(&m);
            let back = read_message(&mut bytes.as_slice(), &dims(), 1).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn corruption_detected() {
        let m = Message::PhiRoundDown { block: vec![1.0] };
        let mut bytes = encode(&m);
        bytes[10] ^= 1;
        assert!(matches!(
            read_message(&mut bytes.as_slice(), &dims(), 1),
            Err(DtzoError::Frame(_))
        ));
        let mut bytes = encode(&m);
        bytes[0] = b'X';
        assert!(matches!(
            read_message(&mut bytes.as_slice(), &dims(), 1),
            Err(DtzoError::Frame(_))
        ));
        let mut bytes = encode(&m);
        bytes[4] = 9;
        assert!(matches!(
            read_message(&mut bytes.as_slice(), &dims(), 1),
            Err(DtzoError::Frame(_))
        ));
        let bytes = encode(&m);
        assert!(read_message(&mut &bytes[..bytes.len() - 1], &dims(), 1).is_err());
        // wrong block length for the declared layer
        assert!(matches!(
            read_message(&mut encode(&m).as_slice(), &dims(), 2),
            Err(DtzoError::Frame(_))
        ));
    }

    #[test]
    fn header_layout() {
        let b = encode(&Message::PhiRoundDown { block: vec![2.0] });
        assert_eq!(&b[..4], b"DTZ0");
        assert_eq!(b[4], 4);
        assert_eq!(u32::from_le_bytes(b[5..9].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(b[9..17].try_into().unwrap()), 2.0);
        assert_eq!(b.len(), 4 + 1 + 4 + 8 + 4);
    }

    proptest! {
        #[test]
        fn arbitrary_blocks_round_trip(block in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 2..3), j in 0usize..1000) {
            let m = Message::PhiRoundUp { j, block };
            let back = read_message(&mut encode(&m).as_slice(), &dims(), 2).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
