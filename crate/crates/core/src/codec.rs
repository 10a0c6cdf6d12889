//! Control-plane wire format.
//!
//! A [`ControlFrame`] carries four unsigned 32-bit fields. On the wire each
//! non-zero field is written as a one-byte key (`field_number << 3`)
//! followed by the value as a base-128 little-endian varint, in ascending
//! field order. Zero fields are omitted, so the all-zero frame encodes to an
//! empty payload and a frame whose fields all fit in 7 bits is 8 bytes long.
//!
//! Responses that carry a small quantity pack it into the action field as
//! `action * 100 + value` (see [`pack_response`]).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Destination ID addressing every node in the mesh.
pub const BROADCAST: u32 = 0;

/// Radix of the response packing scheme.
pub const RESPONSE_RADIX: u32 = 100;

/// Upper bound on the encoded length of a frame.
pub const MAX_ENCODED_LEN: usize = 4 * (1 + MAX_VARINT_LEN);

const MAX_VARINT_LEN: usize = 5;

const FIELD_SRC: u8 = 1;
const FIELD_DST: u8 = 2;
const FIELD_MSG: u8 = 3;
const FIELD_ACTION: u8 = 4;

/// The four-field control-plane message.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlFrame {
    pub src: u32,
    /// `0` addresses the whole network.
    pub dst: u32,
    pub msg_id: u32,
    /// An action ID for requests, a packed response code for responses.
    pub action: u32,
}

impl ControlFrame {
    pub fn new(src: u32, dst: u32, msg_id: u32, action: u32) -> Self {
        ControlFrame {
            src,
            dst,
            msg_id,
            action,
        }
    }

    pub fn is_broadcast(&self) -> bool {
        self.dst == BROADCAST
    }

    /// Duplicate-detection key.
    pub fn key(&self) -> (u32, u32) {
        (self.src, self.msg_id)
    }

    fn fields(&self) -> [(u8, u32); 4] {
        [
            (FIELD_SRC, self.src),
            (FIELD_DST, self.dst),
            (FIELD_MSG, self.msg_id),
            (FIELD_ACTION, self.action),
        ]
    }
}

impl fmt::Display for ControlFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{src={} dst={} msg={} action={}}}",
            self.src, self.dst, self.msg_id, self.action
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("malformed varint at byte {offset}: input ends inside a value")]
    MalformedVarint { offset: usize },
    #[error("unknown field key 0x{key:02x} at byte {offset}")]
    UnknownField { key: u8, offset: usize },
    #[error("unexpected bytes after field {last_field} at byte {offset}")]
    TrailingBytes { last_field: u8, offset: usize },
    #[error("varint at byte {offset} exceeds 32 bits")]
    Overflow { offset: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PackError {
    #[error("response value {0} is outside [0, 100)")]
    ValueOutOfRange(u32),
    #[error("action {action} with value {value} does not fit in 32 bits")]
    Overflow { action: u32, value: u32 },
}

/// Appends `value` as a base-128 little-endian varint.
pub fn write_varint(out: &mut Vec<u8>, mut value: u32) {
    while value >= 0x80 {
        out.push((value as u8 & 0x7f) | 0x80);
        value >>= 7;
    }
    out.push(value as u8);
}

/// Reads one varint from the front of `buf`, returning the value and the
/// number of bytes consumed. `offset` is only used for error reporting.
pub fn read_varint(buf: &[u8], offset: usize) -> Result<(u32, usize), CodecError> {
    let mut value: u64 = 0;
    for (i, &byte) in buf.iter().enumerate() {
        if i == MAX_VARINT_LEN {
            return Err(CodecError::Overflow { offset });
        }
        value |= u64::from(byte & 0x7f) << (7 * i);
        if byte & 0x80 == 0 {
            return u32::try_from(value)
                .map(|v| (v, i + 1))
                .map_err(|_| CodecError::Overflow { offset });
        }
    }
    Err(CodecError::MalformedVarint {
        offset: offset + buf.len(),
    })
}

/// Canonical encoding of a frame.
pub fn encode_frame(frame: &ControlFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAX_ENCODED_LEN);
    for (field, value) in frame.fields() {
        if value != 0 {
            out.push(field << 3);
            write_varint(&mut out, value);
        }
    }
    out
}

/// Number of bytes [`encode_frame`] would produce, without allocating.
pub fn encoded_len(frame: &ControlFrame) -> usize {
    frame
        .fields()
        .iter()
        .filter(|(_, v)| *v != 0)
        .map(|(_, v)| 1 + varint_len(*v))
        .sum()
}

fn varint_len(value: u32) -> usize {
    match value {
        0..=0x7f => 1,
        0x80..=0x3fff => 2,
        0x4000..=0x1f_ffff => 3,
        0x20_0000..=0xfff_ffff => 4,
        _ => 5,
    }
}

/// Parses a payload produced by [`encode_frame`]. Missing fields decode as 0.
///
/// Fields must appear at most once and in ascending order; anything after the
/// point where the ordering breaks is reported as trailing bytes.
pub fn decode_frame(bytes: &[u8]) -> Result<ControlFrame, CodecError> {
    let mut frame = ControlFrame::default();
    let mut last_field = 0u8;
    let mut pos = 0;
    while pos < bytes.len() {
        let key = bytes[pos];
        let field = key >> 3;
        if key & 0x07 != 0 || !(FIELD_SRC..=FIELD_ACTION).contains(&field) {
            return Err(CodecError::UnknownField { key, offset: pos });
        }
        if field <= last_field {
            return Err(CodecError::TrailingBytes {
                last_field,
                offset: pos,
            });
        }
        let (value, used) = read_varint(&bytes[pos + 1..], pos + 1)?;
        match field {
            FIELD_SRC => frame.src = value,
            FIELD_DST => frame.dst = value,
            FIELD_MSG => frame.msg_id = value,
            _ => frame.action = value,
        }
        last_field = field;
        pos += 1 + used;
    }
    Ok(frame)
}

/// An action/value pair recovered from a packed response code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PackedResponse {
    pub action: u32,
    pub value: u32,
}

/// `action * 100 + value`, with `value < 100`.
pub fn pack_response(action: u32, value: u32) -> Result<u32, PackError> {
    if value >= RESPONSE_RADIX {
        return Err(PackError::ValueOutOfRange(value));
    }
    action
        .checked_mul(RESPONSE_RADIX)
        .and_then(|base| base.checked_add(value))
        .ok_or(PackError::Overflow { action, value })
}

pub fn unpack_response(code: u32) -> PackedResponse {
    PackedResponse {
        action: code / RESPONSE_RADIX,
        value: code % RESPONSE_RADIX,
    }
}

/// Length of the verbose JSON rendering the compact encoding replaced:
/// `{"source":S,"destination":D,"messageId":M,"actionId":A}`.
pub fn baseline_verbose_size(frame: &ControlFrame) -> usize {
    const TEMPLATE_LEN: usize = r#"{"source":,"destination":,"messageId":,"actionId":}"#.len();
    TEMPLATE_LEN + frame.fields().iter().map(|(_, v)| decimal_len(*v)).sum::<usize>()
}

fn decimal_len(mut v: u32) -> usize {
    let mut n = 1;
    while v >= 10 {
        v /= 10;
        n += 1;
    }
    n
}
