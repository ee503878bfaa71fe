//! Length-prefixed binary framing between server and clients.
//!
//! Frame layout: `length: u32 | msg_type: u8 | payload`, all integers
//! little-endian, `length = 1 + payload bytes`. Parameter payloads carry
//! 7850 f32 values (weights pixel-major, then bias). The in-process loopback
//! pushes messages through the same encode/decode path so simulation sees
//! exactly the wire's f32 quantization.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::clustering::{UpdateType, UpdateVector};
use crate::federation::{ClientDirective, RoundDirective};
use crate::model::{ModelParams, PARAM_COUNT};

pub const PROTOCOL_VERSION: u8 = 1;
pub const DEFAULT_PORT: u16 = 8471;
pub const MAX_PAYLOAD: usize = 64 * 1024 * 1024;

const TYPE_REGISTER: u8 = 1;
const TYPE_REGISTER_ACK: u8 = 2;
const TYPE_GLOBAL_MODEL: u8 = 3;
const TYPE_DIRECTIVE: u8 = 4;
const TYPE_LOCAL_UPDATE: u8 = 5;
const TYPE_METRICS_ACK: u8 = 6;
const TYPE_SHUTDOWN: u8 = 7;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("frame payload of {0} bytes exceeds the 64 MiB limit")]
    Oversize(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Register {
        version: u8,
        client_id: u16,
        num_samples: u32,
    },
    RegisterAck {
        version: u8,
        accepted: bool,
    },
    GlobalModel {
        round: u32,
        params: ModelParams,
    },
    Directive(RoundDirective),
    LocalUpdate {
        client_id: u16,
        num_samples: u32,
        params: ModelParams,
        update: UpdateVector,
    },
    MetricsAck {
        round: u32,
    },
    Shutdown,
}

fn put_f32s(buf: &mut Vec<u8>, values: impl Iterator<Item = f32>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_payload(msg: &Message) -> (u8, Vec<u8>) {
    match msg {
        Message::Register {
            version,
            client_id,
            num_samples,
        } => {
            let mut p = Vec::with_capacity(7);
            p.push(*version);
            p.extend_from_slice(&client_id.to_le_bytes());
            p.extend_from_slice(&num_samples.to_le_bytes());
            (TYPE_REGISTER, p)
        }
        Message::RegisterAck { version, accepted } => {
            (TYPE_REGISTER_ACK, vec![*version, u8::from(*accepted)])
        }
        Message::GlobalModel { round, params } => {
            let mut p = Vec::with_capacity(4 + PARAM_COUNT * 4);
            p.extend_from_slice(&round.to_le_bytes());
            put_f32s(&mut p, params.to_wire().into_iter());
            (TYPE_GLOBAL_MODEL, p)
        }
        Message::Directive(directive) => {
            let mut p = Vec::with_capacity(4 + directive.entries.len() * 4);
            p.extend_from_slice(&directive.round.to_le_bytes());
            for entry in &directive.entries {
                p.extend_from_slice(&entry.client_id.to_le_bytes());
                p.push(u8::from(entry.active));
                p.push(entry.cluster);
            }
            (TYPE_DIRECTIVE, p)
        }
        Message::LocalUpdate {
            client_id,
            num_samples,
            params,
            update,
        } => {
            let mut p = Vec::with_capacity(7 + PARAM_COUNT * 4 + update.values.len() * 4);
            p.extend_from_slice(&client_id.to_le_bytes());
            p.extend_from_slice(&num_samples.to_le_bytes());
            put_f32s(&mut p, params.to_wire().into_iter());
            p.push(update.update_type.wire_tag());
            put_f32s(&mut p, update.values.iter().map(|&v| v as f32));
            (TYPE_LOCAL_UPDATE, p)
        }
        Message::MetricsAck { round } => (TYPE_METRICS_ACK, round.to_le_bytes().to_vec()),
        Message::Shutdown => (TYPE_SHUTDOWN, Vec::new()),
    }
}

/// Encodes a message as one complete frame.
pub fn encode_message(msg: &Message) -> Vec<u8> {
    let (msg_type, payload) = encode_payload(msg);
    debug_assert!(payload.len() <= MAX_PAYLOAD);
    let mut frame = Vec::with_capacity(5 + payload.len());
    frame.extend_from_slice(&(1 + payload.len() as u32).to_le_bytes());
    frame.push(msg_type);
    frame.extend_from_slice(&payload);
    frame
}

struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        PayloadReader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.pos + n > self.bytes.len() {
            return Err(ProtocolError::LengthMismatch(format!(
                "payload ends at {} but {} bytes were expected",
                self.bytes.len(),
                self.pos + n
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>, ProtocolError> {
        let b = self.take(count * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn finish(&self) -> Result<(), ProtocolError> {
        if self.pos != self.bytes.len() {
            return Err(ProtocolError::LengthMismatch(format!(
                "{} unparsed payload bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn parse_message(msg_type: u8, payload: &[u8]) -> Result<Message, ProtocolError> {
    let mut r = PayloadReader::new(payload);
    let msg = match msg_type {
        TYPE_REGISTER => Message::Register {
            version: r.u8()?,
            client_id: r.u16()?,
            num_samples: r.u32()?,
        },
        TYPE_REGISTER_ACK => Message::RegisterAck {
            version: r.u8()?,
            accepted: r.u8()? != 0,
        },
        TYPE_GLOBAL_MODEL => {
            let round = r.u32()?;
            let values = r.f32s(PARAM_COUNT)?;
            let params = ModelParams::from_wire(&values).expect("length checked");
            Message::GlobalModel { round, params }
        }
        TYPE_DIRECTIVE => {
            let round = r.u32()?;
            let rest = payload.len() - 4;
            if rest % 4 != 0 {
                return Err(ProtocolError::LengthMismatch(format!(
                    "directive entries occupy {rest} bytes, not a multiple of 4"
                )));
            }
            let mut entries = Vec::with_capacity(rest / 4);
            for _ in 0..rest / 4 {
                entries.push(ClientDirective {
                    client_id: r.u16()?,
                    active: r.u8()? != 0,
                    cluster: r.u8()?,
                });
            }
            Message::Directive(RoundDirective { round, entries })
        }
        TYPE_LOCAL_UPDATE => {
            let client_id = r.u16()?;
            let num_samples = r.u32()?;
            let values = r.f32s(PARAM_COUNT)?;
            let params = ModelParams::from_wire(&values).expect("length checked");
            let tag = r.u8()?;
            let update_type = UpdateType::from_wire_tag(tag)
                .ok_or(ProtocolError::UnknownType(tag))?;
            let update_values = r.f32s(update_type.vector_len())?;
            Message::LocalUpdate {
                client_id,
                num_samples,
                params,
                update: UpdateVector {
                    client_id,
                    values: update_values.into_iter().map(f64::from).collect(),
                    update_type,
                },
            }
        }
        TYPE_METRICS_ACK => Message::MetricsAck { round: r.u32()? },
        TYPE_SHUTDOWN => Message::Shutdown,
        other => return Err(ProtocolError::UnknownType(other)),
    };
    r.finish()?;
    Ok(msg)
}

/// Parses one frame from the front of `buf`. Returns the message and bytes
/// consumed, or `None` when the buffer does not yet hold a complete frame.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(Message, usize)>, ProtocolError> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let length = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if length < 1 {
        return Err(ProtocolError::LengthMismatch(
            "frame length must include the type byte".into(),
        ));
    }
    if length - 1 > MAX_PAYLOAD {
        return Err(ProtocolError::Oversize(length - 1));
    }
    if buf.len() < 4 + length {
        return Ok(None);
    }
    let msg = parse_message(buf[4], &buf[5..4 + length])?;
    Ok(Some((msg, 4 + length)))
}

/// Incremental frame decoder; byte chunks may split frames anywhere.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    consumed: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        FrameDecoder::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.consumed > 0 && self.consumed == self.buf.len() {
            self.buf.clear();
            self.consumed = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    pub fn next_message(&mut self) -> Result<Option<Message>, ProtocolError> {
        match decode_frame(&self.buf[self.consumed..])? {
            Some((msg, used)) => {
                self.consumed += used;
                if self.consumed == self.buf.len() {
                    self.buf.clear();
                    self.consumed = 0;
                }
                Ok(Some(msg))
            }
            None => Ok(None),
        }
    }
}

/// Encodes and immediately decodes a message, applying the wire's f32
/// quantization without a socket. Simulation hands every message through here.
pub fn loopback(msg: &Message) -> Result<Message, ProtocolError> {
    let bytes = encode_message(msg);
    match decode_frame(&bytes)? {
        Some((decoded, used)) if used == bytes.len() => Ok(decoded),
        _ => Err(ProtocolError::LengthMismatch(
            "loopback produced an incomplete frame".into(),
        )),
    }
}

/// A framed TCP connection.
pub struct Connection {
    stream: TcpStream,
    decoder: FrameDecoder,
}

impl Connection {
    pub fn new(stream: TcpStream) -> Self {
        Connection {
            stream,
            decoder: FrameDecoder::new(),
        }
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        self.stream.write_all(&encode_message(msg))?;
        Ok(())
    }

    /// Blocks until a full message arrives.
    pub fn recv(&mut self) -> Result<Message, ProtocolError> {
        self.stream.set_read_timeout(None)?;
        loop {
            if let Some(msg) = self.decoder.next_message()? {
                return Ok(msg);
            }
            self.read_chunk(None)?;
        }
    }

    /// Waits for a message until the deadline. `Ok(None)` means it expired.
    pub fn recv_deadline(&mut self, deadline: Instant) -> Result<Option<Message>, ProtocolError> {
        loop {
            if let Some(msg) = self.decoder.next_message()? {
                return Ok(Some(msg));
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Ok(None);
            }
            match self.read_chunk(Some(remaining)) {
                Ok(()) => {}
                Err(ProtocolError::Io(e))
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    return Ok(None);
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn read_chunk(&mut self, timeout: Option<Duration>) -> Result<(), ProtocolError> {
        self.stream.set_read_timeout(timeout)?;
        let mut chunk = [0u8; 64 * 1024];
        let n = self.stream.read(&mut chunk)?;
        if n == 0 {
            return Err(ProtocolError::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "connection closed",
            )));
        }
        self.decoder.push(&chunk[..n]);
        Ok(())
    }
}
