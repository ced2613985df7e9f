//! `BSSQ` framing and message payloads.
//!
//! Frame: `"BSSQ"`, version `u8 = 1`, message type `u8`, reserved `u16`,
//! payload length `u32`, payload. All integers big-endian.
//!
//! | type | name       | payload                                                        |
//! |------|------------|----------------------------------------------------------------|
//! | 1    | SUBMIT     | user len `u16`, user UTF-8, priority `u8`, BSPP program bytes   |
//! | 2    | RESULT     | job id `u64`, status `u8`; if done/failed: result len `u32`, result bytes, message len `u32`, message UTF-8 |
//! | 3    | SUBMIT_ACK | job id `u64`                                                   |
//! | 4    | GET_RESULT | job id `u64`                                                   |
//! | 5    | ERROR      | code `u16`, UTF-8 text                                         |
//! | 6    | PING       | empty                                                          |
//! | 7    | PONG       | empty                                                          |

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"BSSQ";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 12;
pub const MAX_PAYLOAD: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Submit = 1,
    Result = 2,
    SubmitAck = 3,
    GetResult = 4,
    Error = 5,
    Ping = 6,
    Pong = 7,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => MsgType::Submit,
            2 => MsgType::Result,
            3 => MsgType::SubmitAck,
            4 => MsgType::GetResult,
            5 => MsgType::Error,
            6 => MsgType::Ping,
            7 => MsgType::Pong,
            _ => return None,
        })
    }
}

/// Error codes carried by ERROR frames.
pub mod error_code {
    pub const MALFORMED_PROGRAM: u16 = 1;
    pub const UNKNOWN_JOB: u16 = 2;
    pub const BAD_FRAME: u16 = 3;
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("payload of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("malformed {what} payload")]
    BadPayload { what: &'static str },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Self { msg_type, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    fn check_header(h: &[u8; HEADER_LEN]) -> Result<(MsgType, usize), FrameError> {
        let magic: [u8; 4] = h[0..4].try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(FrameError::BadMagic(magic));
        }
        if h[4] != VERSION {
            return Err(FrameError::BadVersion(h[4]));
        }
        let msg_type = MsgType::from_u8(h[5]).ok_or(FrameError::UnknownType(h[5]))?;
        let len = u32::from_be_bytes(h[8..12].try_into().expect("4 bytes")) as usize;
        if len > MAX_PAYLOAD {
            return Err(FrameError::TooLarge(len));
        }
        Ok((msg_type, len))
    }

    /// Decode one frame from the front of `bytes`; returns it and the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Frame, usize), FrameError> {
        if bytes.len() < HEADER_LEN {
            return Err(FrameError::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            });
        }
        let (msg_type, len) = Self::check_header(bytes[..HEADER_LEN].try_into().expect("header"))?;
        let end = HEADER_LEN + len;
        if bytes.len() < end {
            return Err(FrameError::Truncated {
                needed: end,
                available: bytes.len(),
            });
        }
        Ok((Frame::new(msg_type, bytes[HEADER_LEN..end].to_vec()), end))
    }

    /// `Ok(None)` on end of stream before the first header byte.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Frame>, FrameError> {
        let mut header = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match r.read(&mut header[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => {
                    return Err(FrameError::Truncated {
                        needed: HEADER_LEN,
                        available: got,
                    })
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let (msg_type, len) = Self::check_header(&header)?;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => FrameError::Truncated {
                needed: HEADER_LEN + len,
                available: HEADER_LEN,
            },
            _ => e.into(),
        })?;
        Ok(Some(Frame::new(msg_type, payload)))
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum JobStatus {
    Queued = 0,
    Running = 1,
    Done = 2,
    Failed = 3,
}

impl JobStatus {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => JobStatus::Queued,
            1 => JobStatus::Running,
            2 => JobStatus::Done,
            3 => JobStatus::Failed,
            _ => return None,
        })
    }

    pub fn is_finished(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Submit {
        user: String,
        priority: u8,
        program: Vec<u8>,
    },
    /// `outcome` is present exactly when the status is done or failed.
    Result {
        job_id: u64,
        status: JobStatus,
        outcome: Option<(Vec<u8>, String)>,
    },
    SubmitAck {
        job_id: u64,
    },
    GetResult {
        job_id: u64,
    },
    Error {
        code: u16,
        message: String,
    },
    Ping,
    Pong,
}

struct Cursor<'a> {
    data: &'a [u8],
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        if self.data.len() < n {
            return Err(FrameError::BadPayload { what: self.what });
        }
        let (head, tail) = self.data.split_at(n);
        self.data = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, FrameError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn string(&mut self, n: usize) -> Result<String, FrameError> {
        let what = self.what;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| FrameError::BadPayload { what })
    }
    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.data)
    }
    fn end(&self) -> Result<(), FrameError> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(FrameError::BadPayload { what: self.what })
        }
    }
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Submit { .. } => MsgType::Submit,
            Message::Result { .. } => MsgType::Result,
            Message::SubmitAck { .. } => MsgType::SubmitAck,
            Message::GetResult { .. } => MsgType::GetResult,
            Message::Error { .. } => MsgType::Error,
            Message::Ping => MsgType::Ping,
            Message::Pong => MsgType::Pong,
        }
    }

    pub fn to_frame(&self) -> Frame {
        let mut p = Vec::new();
        match self {
            Message::Submit {
                user,
                priority,
                program,
            } => {
                p.extend_from_slice(&(user.len() as u16).to_be_bytes());
                p.extend_from_slice(user.as_bytes());
                p.push(*priority);
                p.extend_from_slice(program);
            }
            Message::Result {
                job_id,
                status,
                outcome,
            } => {
                p.extend_from_slice(&job_id.to_be_bytes());
                p.push(*status as u8);
                if let Some((result, message)) = outcome {
                    p.extend_from_slice(&(result.len() as u32).to_be_bytes());
                    p.extend_from_slice(result);
                    p.extend_from_slice(&(message.len() as u32).to_be_bytes());
                    p.extend_from_slice(message.as_bytes());
                }
            }
            Message::SubmitAck { job_id } | Message::GetResult { job_id } => p.extend_from_slice(&job_id.to_be_bytes()),
            Message::Error { code, message } => {
                p.extend_from_slice(&code.to_be_bytes());
                p.extend_from_slice(message.as_bytes());
            }
            Message::Ping | Message::Pong => {}
        }
        Frame::new(self.msg_type(), p)
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, FrameError> {
        let what = match frame.msg_type {
            MsgType::Submit => "SUBMIT",
            MsgType::Result => "RESULT",
            MsgType::SubmitAck => "SUBMIT_ACK",
            MsgType::GetResult => "GET_RESULT",
            MsgType::Error => "ERROR",
            MsgType::Ping => "PING",
            MsgType::Pong => "PONG",
        };
        let mut c = Cursor {
            data: &frame.payload,
            what,
        };
        let msg = match frame.msg_type {
            MsgType::Submit => {
                let n = c.u16()? as usize;
                let user = c.string(n)?;
                let priority = c.u8()?;
                Message::Submit {
                    user,
                    priority,
                    program: c.rest().to_vec(),
                }
            }
            MsgType::Result => {
                let job_id = c.u64()?;
                let status = JobStatus::from_u8(c.u8()?).ok_or(FrameError::BadPayload { what })?;
                let outcome = if status.is_finished() {
                    let n = c.u32()? as usize;
                    let result = c.take(n)?.to_vec();
                    let m = c.u32()? as usize;
                    Some((result, c.string(m)?))
                } else {
                    None
                };
                Message::Result {
                    job_id,
                    status,
                    outcome,
                }
            }
            MsgType::SubmitAck => Message::SubmitAck { job_id: c.u64()? },
            MsgType::GetResult => Message::GetResult { job_id: c.u64()? },
            MsgType::Error => {
                let code = c.u16()?;
                let n = c.data.len();
                Message::Error {
                    code,
                    message: c.string(n)?,
                }
            }
            MsgType::Ping => Message::Ping,
            MsgType::Pong => Message::Pong,
        };
        c.end()?;
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_is_header_only() {
        let bytes = Message::Ping.to_frame().encode();
        assert_eq!(bytes, b"BSSQ\x01\x06\x00\x00\x00\x00\x00\x00");
        let (f, used) = Frame::decode(&bytes).unwrap();
        assert_eq!((Message::from_frame(&f).unwrap(), used), (Message::Ping, 12));
    }

    #[test]
    fn header_errors() {
        let mut bytes = Message::Pong.to_frame().encode();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Frame::decode(&bytes), Err(FrameError::BadMagic(_))));
        let mut bytes = Message::Pong.to_frame().encode();
        bytes[4] = 2;
        assert!(matches!(Frame::decode(&bytes), Err(FrameError::BadVersion(2))));
        let bytes = Message::GetResult { job_id: 1 }.to_frame().encode();
        assert!(matches!(Frame::decode(&bytes[..15]), Err(FrameError::Truncated { .. })));
        assert!(matches!(
            Frame::read_from(&mut &bytes[..15]),
            Err(FrameError::Truncated { .. })
        ));
    }

    #[test]
    fn result_without_outcome() {
        let m = Message::Result {
            job_id: 9,
            status: JobStatus::Running,
            outcome: None,
        };
        assert_eq!(m.to_frame().payload.len(), 9);
        assert_eq!(Message::from_frame(&m.to_frame()).unwrap(), m);
    }
}
