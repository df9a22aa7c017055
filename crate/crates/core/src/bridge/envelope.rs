//! Fixed-layout binary frame carrying one topic message.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SERN"
//! 4       1     version (1)
//! 5       1     tier (0 critical, 1 standard, 2 bulk)
//! 6       1     flags (bit0 = replay)
//! 7       8     seq
//! 15      8     sim_time_us
//! 23      2     topic_len
//! 25      n     topic (UTF-8)
//! 25+n    1     kind
//! 26+n    4     payload_len
//! 30+n    m     payload
//! 30+n+m  4     crc32 (IEEE) over bytes [0, 30+n+m)
//! ```
//!
//! All integers are little-endian.

use thiserror::Error;

use crate::msgbus::{Message, MessageKind, TopicName, MAX_PAYLOAD};
use crate::netsim::SimTime;

use super::Tier;

pub const MAGIC: [u8; 4] = *b"SERN";
pub const VERSION: u8 = 1;
pub const FLAG_REPLAY: u8 = 0x01;
/// Kind code reserved for bridge control frames.
pub const CONTROL_KIND: u8 = 0xFF;
/// Envelope size with an empty topic and payload.
pub const FIXED_OVERHEAD: usize = 34;

const HEADER_LEN: usize = 25;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("payload of {0} bytes exceeds the 16 MiB limit")]
    PayloadTooLarge(usize),
    #[error("topic of {0} bytes does not fit a u16 length")]
    TopicTooLong(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("crc mismatch: frame says {expected:#010x}, computed {actual:#010x}")]
    CrcMismatch { expected: u32, actual: u32 },
    #[error("frame truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("unknown tier {0}")]
    BadTier(u8),
    #[error("unknown message kind {0}")]
    BadKind(u8),
    #[error("topic is not a valid name")]
    BadTopic,
    #[error("malformed control payload")]
    BadControl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Data(MessageKind),
    Control,
}

impl FrameKind {
    fn code(self) -> u8 {
        match self {
            FrameKind::Data(k) => k.code(),
            FrameKind::Control => CONTROL_KIND,
        }
    }

    fn from_code(code: u8) -> Result<Self, EnvelopeError> {
        if code == CONTROL_KIND {
            return Ok(FrameKind::Control);
        }
        MessageKind::from_code(code)
            .map(FrameKind::Data)
            .ok_or(EnvelopeError::BadKind(code))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub tier: Tier,
    pub flags: u8,
    pub seq: u64,
    pub sim_time: SimTime,
    pub topic: TopicName,
    pub kind: FrameKind,
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn from_message(msg: &Message, tier: Tier, seq: u64) -> Self {
        Self {
            tier,
            flags: 0,
            seq,
            sim_time: msg.publish_time,
            topic: msg.topic.clone(),
            kind: FrameKind::Data(msg.kind),
            payload: msg.payload.clone(),
        }
    }

    pub fn is_replay(&self) -> bool {
        self.flags & FLAG_REPLAY != 0
    }

    /// The carried message, or `None` for control frames.
    pub fn to_message(&self) -> Option<Message> {
        match self.kind {
            FrameKind::Data(kind) => Some(Message {
                topic: self.topic.clone(),
                kind,
                payload: self.payload.clone(),
                publish_time: self.sim_time,
            }),
            FrameKind::Control => None,
        }
    }

    pub fn encoded_len(&self) -> usize {
        FIXED_OVERHEAD + self.topic.as_str().len() + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, EnvelopeError> {
        let topic = self.topic.as_str().as_bytes();
        let topic_len = u16::try_from(topic.len()).map_err(|_| EnvelopeError::TopicTooLong(topic.len()))?;
        if self.payload.len() > MAX_PAYLOAD {
            return Err(EnvelopeError::PayloadTooLarge(self.payload.len()));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.tier.code());
        out.push(self.flags);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.sim_time.as_micros().to_le_bytes());
        out.extend_from_slice(&topic_len.to_le_bytes());
        out.extend_from_slice(topic);
        out.push(self.kind.code());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }
}

/// Serializes `msg` into a wire frame.
pub fn encode_envelope(msg: &Message, tier: Tier, seq: u64) -> Result<Vec<u8>, EnvelopeError> {
    Envelope::from_message(msg, tier, seq).encode()
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_envelope(bytes: &[u8]) -> Result<Envelope, EnvelopeError> {
    let (env, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(EnvelopeError::TrailingBytes(bytes.len() - used));
    }
    Ok(env)
}

fn need(bytes: &[u8], needed: usize) -> Result<(), EnvelopeError> {
    if bytes.len() < needed {
        Err(EnvelopeError::Truncated {
            needed,
            available: bytes.len(),
        })
    } else {
        Ok(())
    }
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes(b.try_into().expect("2 bytes"))
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().expect("8 bytes"))
}

/// Decodes the frame at the start of `bytes`, returning it with its length.
///
/// Checks run in a fixed order: magic, lengths, checksum, then field values.
/// A frame whose checksum verifies but carries another version therefore
/// reports `BadVersion`, while a corrupted version byte reports `CrcMismatch`.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Envelope, usize), EnvelopeError> {
    need(bytes, MAGIC.len())?;
    if bytes[..4] != MAGIC {
        return Err(EnvelopeError::BadMagic);
    }
    need(bytes, HEADER_LEN)?;
    let topic_len = le_u16(&bytes[23..25]) as usize;
    let kind_at = HEADER_LEN + topic_len;
    need(bytes, kind_at + 5)?;
    let payload_len = le_u32(&bytes[kind_at + 1..kind_at + 5]) as usize;
    let payload_at = kind_at + 5;
    let crc_at = payload_at
        .checked_add(payload_len)
        .ok_or(EnvelopeError::PayloadTooLarge(payload_len))?;
    need(bytes, crc_at + 4)?;
    let expected = le_u32(&bytes[crc_at..crc_at + 4]);
    let actual = crc32fast::hash(&bytes[..crc_at]);
    if expected != actual {
        return Err(EnvelopeError::CrcMismatch { expected, actual });
    }

    if bytes[4] != VERSION {
        return Err(EnvelopeError::BadVersion(bytes[4]));
    }
    if payload_len > MAX_PAYLOAD {
        return Err(EnvelopeError::PayloadTooLarge(payload_len));
    }
    let tier = Tier::from_code(bytes[5]).ok_or(EnvelopeError::BadTier(bytes[5]))?;
    let topic = std::str::from_utf8(&bytes[HEADER_LEN..kind_at]).map_err(|_| EnvelopeError::BadTopic)?;
    let topic = TopicName::new(topic).map_err(|_| EnvelopeError::BadTopic)?;
    let env = Envelope {
        tier,
        flags: bytes[6],
        seq: le_u64(&bytes[7..15]),
        sim_time: SimTime(le_u64(&bytes[15..23])),
        topic,
        kind: FrameKind::from_code(bytes[kind_at])?,
        payload: bytes[payload_at..crc_at].to_vec(),
    };
    Ok((env, crc_at + 4))
}

/// Splits a packet holding back-to-back frames. Decoding stops at the first
/// malformed frame; frames before it are still returned.
pub fn decode_batch(mut bytes: &[u8]) -> (Vec<Envelope>, Option<EnvelopeError>) {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        match decode_prefix(bytes) {
            Ok((env, used)) => {
                out.push(env);
                bytes = &bytes[used..];
            }
            Err(e) => return (out, Some(e)),
        }
    }
    (out, None)
}

/// Bridge-to-bridge signalling carried in control frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    /// Receiver asks for `[from, to]` to be replayed.
    Nak { from: u64, to: u64 },
    /// Sender announces the highest seq it has emitted on the topic.
    HighWater { last: u64 },
    /// Sender no longer holds `[from, to]`.
    Unavailable { from: u64, to: u64 },
}

impl Control {
    pub fn to_payload(self) -> Vec<u8> {
        let (tag, a, b) = match self {
            Control::Nak { from, to } => (1u8, from, to),
            Control::HighWater { last } => (2, last, 0),
            Control::Unavailable { from, to } => (3, from, to),
        };
        let mut v = Vec::with_capacity(17);
        v.push(tag);
        v.extend_from_slice(&a.to_le_bytes());
        v.extend_from_slice(&b.to_le_bytes());
        v
    }

    pub fn from_payload(p: &[u8]) -> Result<Self, EnvelopeError> {
        if p.len() != 17 {
            return Err(EnvelopeError::BadControl);
        }
        let a = le_u64(&p[1..9]);
        let b = le_u64(&p[9..17]);
        match p[0] {
            1 if a <= b => Ok(Control::Nak { from: a, to: b }),
            2 => Ok(Control::HighWater { last: a }),
            3 if a <= b => Ok(Control::Unavailable { from: a, to: b }),
            _ => Err(EnvelopeError::BadControl),
        }
    }

    pub fn envelope(self, topic: TopicName, seq: u64, now: SimTime) -> Envelope {
        Envelope {
            tier: Tier::Critical,
            flags: 0,
            seq,
            sim_time: now,
            topic,
            kind: FrameKind::Control,
            payload: self.to_payload(),
        }
    }
}
