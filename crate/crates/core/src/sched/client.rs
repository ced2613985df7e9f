use std::io::{self, BufReader};
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::playback::{ExecutionResult, Executor, MalformedProgram, PlaybackProgram};

use super::proto::{Frame, FrameError, JobStatus, Message, MsgType};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("server error {code}: {message}")]
    Server { code: u16, message: String },
    #[error("unexpected {0:?} reply")]
    Unexpected(MsgType),
    #[error("connection closed by server")]
    Closed,
    #[error("result payload: {0}")]
    BadResult(#[from] MalformedProgram),
    #[error("job failed: {message}")]
    JobFailed { message: String, partial: ExecutionResult },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobReport {
    pub job_id: u64,
    pub status: JobStatus,
    /// Result bytes and message, present once the job finished.
    pub outcome: Option<(Vec<u8>, String)>,
}

impl JobReport {
    pub fn result(&self) -> Result<Option<ExecutionResult>, MalformedProgram> {
        self.outcome
            .as_ref()
            .map(|(bytes, _)| ExecutionResult::from_bytes(bytes))
            .transpose()
    }

    pub fn message(&self) -> Option<&str> {
        self.outcome.as_ref().map(|(_, m)| m.as_str())
    }
}

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    pub fn request(&mut self, msg: &Message) -> Result<Message, ClientError> {
        msg.to_frame().write_to(&mut self.writer)?;
        let frame = Frame::read_from(&mut self.reader)?.ok_or(ClientError::Closed)?;
        match Message::from_frame(&frame)? {
            Message::Error { code, message } => Err(ClientError::Server { code, message }),
            reply => Ok(reply),
        }
    }

    pub fn ping(&mut self) -> Result<(), ClientError> {
        match self.request(&Message::Ping)? {
            Message::Pong => Ok(()),
            other => Err(ClientError::Unexpected(other.msg_type())),
        }
    }

    pub fn submit_bytes(&mut self, user: &str, priority: u8, program: Vec<u8>) -> Result<u64, ClientError> {
        let msg = Message::Submit {
            user: user.to_string(),
            priority,
            program,
        };
        match self.request(&msg)? {
            Message::SubmitAck { job_id } => Ok(job_id),
            other => Err(ClientError::Unexpected(other.msg_type())),
        }
    }

    pub fn submit(&mut self, user: &str, priority: u8, program: &PlaybackProgram) -> Result<u64, ClientError> {
        self.submit_bytes(user, priority, program.to_bytes())
    }

    pub fn get_result(&mut self, job_id: u64) -> Result<JobReport, ClientError> {
        match self.request(&Message::GetResult { job_id })? {
            Message::Result {
                job_id,
                status,
                outcome,
            } => Ok(JobReport {
                job_id,
                status,
                outcome,
            }),
            other => Err(ClientError::Unexpected(other.msg_type())),
        }
    }

    /// Poll until the job has finished.
    pub fn wait(&mut self, job_id: u64, poll: Duration) -> Result<JobReport, ClientError> {
        loop {
            let report = self.get_result(job_id)?;
            if report.status.is_finished() {
                return Ok(report);
            }
            thread::sleep(poll);
        }
    }
}

/// Runs programs through a scheduling service as one user.
pub struct RemoteExecutor {
    pub client: Client,
    pub user: String,
    pub priority: u8,
    pub poll: Duration,
}

impl RemoteExecutor {
    pub fn new(client: Client, user: impl Into<String>) -> Self {
        Self {
            client,
            user: user.into(),
            priority: 0,
            poll: Duration::from_millis(1),
        }
    }
}

impl Executor for RemoteExecutor {
    type Error = ClientError;

    fn execute(&mut self, program: &PlaybackProgram) -> Result<ExecutionResult, ClientError> {
        let id = self.client.submit(&self.user, self.priority, program)?;
        let report = self.client.wait(id, self.poll)?;
        let result = report.result()?.unwrap_or_default();
        match report.status {
            JobStatus::Done => Ok(result),
            _ => Err(ClientError::JobFailed {
                message: report.message().unwrap_or_default().to_string(),
                partial: result,
            }),
        }
    }
}
