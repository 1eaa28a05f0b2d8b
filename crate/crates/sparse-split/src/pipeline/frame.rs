//! Length-prefixed activation transport frames.
//!
//! Layout, all multi-byte fields little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SPEE"
//!      4     1  version (1)
//!      5     1  msg_type: 0 activation, 1 class, 2 shutdown
//!      6     8  sample_id
//!     14     4  payload_len
//!     18     …  payload
//! ```
//!
//! Payloads: activation frames carry `4·width` bytes of f32 LE; class
//! responses carry a u16 LE class index (payload_len 2); shutdown carries
//! nothing. Decoding is total: any byte string yields a frame or an error.

use std::io::{Read, Write};

use thiserror::Error;

pub const FRAME_MAGIC: [u8; 4] = *b"SPEE";
pub const PROTOCOL_VERSION: u8 = 1;
/// Fixed header size: magic + version + msg_type + sample_id + payload_len.
pub const HEADER_LEN: usize = 18;
/// Upper bound on accepted payloads; a length field past this is rejected
/// before any allocation.
pub const MAX_PAYLOAD: u32 = 1 << 24;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    BadMessageType(u8),
    #[error("{what}: payload length {got}")]
    LengthMismatch { what: &'static str, got: u64 },
    #[error("truncated frame: {need} bytes needed, {got} present")]
    Truncated { need: usize, got: usize },
    #[error("peer closed the connection at a frame boundary")]
    Closed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Activation = 0,
    Class = 1,
    Shutdown = 2,
}

impl MsgType {
    fn from_byte(b: u8) -> Result<Self, FrameError> {
        match b {
            0 => Ok(MsgType::Activation),
            1 => Ok(MsgType::Class),
            2 => Ok(MsgType::Shutdown),
            other => Err(FrameError::BadMessageType(other)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    /// Edge → remote: the split-point activation vector for one sample.
    Activation { sample_id: u64, activation: Vec<f32> },
    /// Remote → edge: the tail's argmax class for that sample.
    Class { sample_id: u64, class: u16 },
    /// Edge → remote: stop serving this connection.
    Shutdown { sample_id: u64 },
}

impl Frame {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Frame::Activation { .. } => MsgType::Activation,
            Frame::Class { .. } => MsgType::Class,
            Frame::Shutdown { .. } => MsgType::Shutdown,
        }
    }

    pub fn sample_id(&self) -> u64 {
        match *self {
            Frame::Activation { sample_id, .. }
            | Frame::Class { sample_id, .. }
            | Frame::Shutdown { sample_id } => sample_id,
        }
    }

    pub fn payload_len(&self) -> usize {
        match self {
            Frame::Activation { activation, .. } => 4 * activation.len(),
            Frame::Class { .. } => 2,
            Frame::Shutdown { .. } => 0,
        }
    }

    /// On-wire size of this frame.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload_len()
    }
}

/// On-wire size of an activation frame carrying `width` floats.
pub fn activation_frame_len(width: usize) -> usize {
    HEADER_LEN + 4 * width
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.push(PROTOCOL_VERSION);
    out.push(frame.msg_type() as u8);
    out.extend_from_slice(&frame.sample_id().to_le_bytes());
    out.extend_from_slice(&(frame.payload_len() as u32).to_le_bytes());
    match frame {
        Frame::Activation { activation, .. } => {
            for v in activation {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Frame::Class { class, .. } => out.extend_from_slice(&class.to_le_bytes()),
        Frame::Shutdown { .. } => {}
    }
    out
}

/// Validate a header's fixed fields and the length rules for its type.
fn check_header(
    magic: [u8; 4],
    version: u8,
    msg_type: u8,
    payload_len: u32,
) -> Result<MsgType, FrameError> {
    if magic != FRAME_MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    if version != PROTOCOL_VERSION {
        return Err(FrameError::BadVersion(version));
    }
    let msg_type = MsgType::from_byte(msg_type)?;
    if payload_len > MAX_PAYLOAD {
        return Err(FrameError::LengthMismatch {
            what: "payload length over limit",
            got: payload_len as u64,
        });
    }
    match msg_type {
        MsgType::Activation => {
            if payload_len % 4 != 0 {
                return Err(FrameError::LengthMismatch {
                    what: "activation payload not a whole number of f32s",
                    got: payload_len as u64,
                });
            }
        }
        MsgType::Class => {
            if payload_len != 2 {
                return Err(FrameError::LengthMismatch {
                    what: "class payload must be 2 bytes",
                    got: payload_len as u64,
                });
            }
        }
        MsgType::Shutdown => {
            if payload_len != 0 {
                return Err(FrameError::LengthMismatch {
                    what: "shutdown payload must be empty",
                    got: payload_len as u64,
                });
            }
        }
    }
    Ok(msg_type)
}

fn build_frame(msg_type: MsgType, sample_id: u64, payload: &[u8]) -> Frame {
    match msg_type {
        MsgType::Activation => Frame::Activation {
            sample_id,
            activation: payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        },
        MsgType::Class => Frame::Class {
            sample_id,
            class: u16::from_le_bytes([payload[0], payload[1]]),
        },
        MsgType::Shutdown => Frame::Shutdown { sample_id },
    }
}

/// Decode one complete frame from a byte string. Trailing bytes are an
/// error: the input must be exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated { need: HEADER_LEN, got: bytes.len() });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    let version = bytes[4];
    let ty = bytes[5];
    let sample_id = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let payload_len = u32::from_le_bytes(bytes[14..18].try_into().unwrap());
    let msg_type = check_header(magic, version, ty, payload_len)?;
    let need = HEADER_LEN + payload_len as usize;
    if bytes.len() < need {
        return Err(FrameError::Truncated { need, got: bytes.len() });
    }
    if bytes.len() > need {
        return Err(FrameError::LengthMismatch {
            what: "trailing bytes after frame",
            got: (bytes.len() - need) as u64,
        });
    }
    Ok(build_frame(msg_type, sample_id, &bytes[HEADER_LEN..need]))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> std::io::Result<()> {
    w.write_all(&encode_frame(frame))?;
    w.flush()
}

/// Read one frame from a stream. A peer that closes cleanly between frames
/// yields [`FrameError::Closed`]; a close mid-frame yields `Truncated`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, FrameError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..])? {
            0 if got == 0 => return Err(FrameError::Closed),
            0 => return Err(FrameError::Truncated { need: HEADER_LEN, got }),
            n => got += n,
        }
    }
    let magic = [header[0], header[1], header[2], header[3]];
    let sample_id = u64::from_le_bytes(header[6..14].try_into().unwrap());
    let payload_len = u32::from_le_bytes(header[14..18].try_into().unwrap());
    let msg_type = check_header(magic, header[4], header[5], payload_len)?;
    let mut payload = vec![0u8; payload_len as usize];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            FrameError::Truncated { need: HEADER_LEN + payload_len as usize, got: HEADER_LEN }
        } else {
            FrameError::Io(e)
        }
    })?;
    Ok(build_frame(msg_type, sample_id, &payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_frame_size_matches_header_arithmetic() {
        let f = Frame::Activation { sample_id: 3, activation: vec![0.5; 40] };
        assert_eq!(f.encoded_len(), 178);
        assert_eq!(encode_frame(&f).len(), 178);
        assert_eq!(activation_frame_len(40), 178);
        assert_eq!(activation_frame_len(800), 3218);
        assert_eq!(HEADER_LEN, 4 + 1 + 1 + 8 + 4);
    }

    #[test]
    fn round_trips_are_bit_exact() {
        let frames = [
            Frame::Activation {
                sample_id: u64::MAX,
                activation: vec![0.0, -0.0, 1.5e-40, f32::MAX, -3.25],
            },
            Frame::Activation { sample_id: 0, activation: vec![] },
            Frame::Class { sample_id: 7, class: 3 },
            Frame::Shutdown { sample_id: 9 },
        ];
        for f in &frames {
            let bytes = encode_frame(f);
            let back = decode_frame(&bytes).unwrap();
            assert_eq!(&back, f);
            assert_eq!(encode_frame(&back), bytes);
        }
        // NaN payloads survive by bits even though the f32 compares unequal.
        let nan = Frame::Activation { sample_id: 1, activation: vec![f32::from_bits(0x7fc0_1234)] };
        let bytes = encode_frame(&nan);
        assert_eq!(encode_frame(&decode_frame(&bytes).unwrap()), bytes);
    }

    #[test]
    fn decode_rejects_malformed_inputs() {
        let good = encode_frame(&Frame::Class { sample_id: 7, class: 3 });

        let mut bad = good.clone();
        bad[0] ^= 0x20;
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadVersion(2))));

        let mut bad = good.clone();
        bad[5] = 9;
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadMessageType(9))));

        assert!(matches!(
            decode_frame(&good[..10]),
            Err(FrameError::Truncated { need: 18, got: 10 })
        ));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(long.len(), 21));
        assert!(matches!(decode_frame(&long), Err(FrameError::LengthMismatch { .. })));

        // Class frames must carry exactly two bytes.
        let mut bad = good;
        bad[14] = 3;
        assert!(matches!(decode_frame(&bad), Err(FrameError::LengthMismatch { .. })));

        // Activation length must be a multiple of four.
        let mut f = encode_frame(&Frame::Activation { sample_id: 0, activation: vec![1.0] });
        f[14] = 3;
        f.truncate(HEADER_LEN + 3);
        assert!(matches!(decode_frame(&f), Err(FrameError::LengthMismatch { .. })));

        // Length fields past the cap are rejected before allocation.
        let mut f = encode_frame(&Frame::Activation { sample_id: 0, activation: vec![] });
        f[14..18].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_frame(&f), Err(FrameError::LengthMismatch { .. })));
    }

    #[test]
    fn stream_reader_matches_buffer_decoder() {
        let frames = vec![
            Frame::Activation { sample_id: 1, activation: vec![1.0, 2.0] },
            Frame::Class { sample_id: 1, class: 9 },
            Frame::Shutdown { sample_id: 2 },
        ];
        let mut wire = Vec::new();
        for f in &frames {
            write_frame(&mut wire, f).unwrap();
        }
        let mut cursor = std::io::Cursor::new(&wire);
        for f in &frames {
            assert_eq!(&read_frame(&mut cursor).unwrap(), f);
        }
        assert!(matches!(read_frame(&mut cursor), Err(FrameError::Closed)));

        // A stream cut mid-frame reports truncation, not a clean close.
        let cut = &wire[..HEADER_LEN + 3];
        let mut cursor = std::io::Cursor::new(cut);
        assert!(matches!(read_frame(&mut cursor), Err(FrameError::Truncated { .. })));
        let cut = &wire[..7];
        let mut cursor = std::io::Cursor::new(cut);
        assert!(matches!(
            read_frame(&mut cursor),
            Err(FrameError::Truncated { need: 18, got: 7 })
        ));
    }
}
