use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::Instant;

use crate::simchip::{ChipState, SimConfig, SimError};

use super::proto::{error_code, Frame, FrameError, JobStatus, Message};
use super::queue::{Outcome, QueueState};

/// One job as executed by the worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dispatch {
    pub job_id: u64,
    pub user: String,
    /// Whether the chip was reset before this job.
    pub reset: bool,
    pub started: Instant,
    pub finished: Instant,
    pub status: JobStatus,
}

#[derive(Default)]
struct Shared {
    queue: Mutex<QueueState>,
    work: Condvar,
    log: Mutex<Vec<Dispatch>>,
    shutdown: AtomicBool,
}

impl Shared {
    fn queue(&self) -> MutexGuard<'_, QueueState> {
        self.queue.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Scheduling service bound to a TCP port and owning one simulated chip.
pub struct Server {
    listener: TcpListener,
    chip: ChipState,
    shared: Arc<Shared>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, config: SimConfig) -> io::Result<Self> {
        let chip = ChipState::new(config).map_err(|e: SimError| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            chip,
            shared: Arc::new(Shared {
                queue: Mutex::new(QueueState::new()),
                ..Shared::default()
            }),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Start the worker and acceptor threads.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.listener.local_addr()?;
        let shared = self.shared.clone();
        let mut chip = self.chip;
        let worker = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("sched-worker".into())
                .spawn(move || worker_loop(&shared, &mut chip))?
        };
        let listener = self.listener;
        let acceptor = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("sched-accept".into())
                .spawn(move || accept_loop(&listener, &shared))?
        };
        Ok(ServerHandle {
            addr,
            shared,
            worker: Some(worker),
            acceptor: Some(acceptor),
        })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    worker: Option<JoinHandle<()>>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Jobs in execution order; the last entry may still be running.
    pub fn dispatch_log(&self) -> Vec<Dispatch> {
        self.shared.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Returns `(submitted, queued, running, finished)`.
    pub fn counts(&self) -> (usize, usize, usize, usize) {
        let q = self.shared.queue();
        (
            q.submitted(),
            q.queued_len(),
            usize::from(q.running().is_some()),
            q.finished_len(),
        )
    }

    /// Block until the acceptor exits.
    pub fn wait(mut self) {
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
    }

    /// Stop accepting, let the running job finish and join both threads.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        {
            let _q = self.shared.queue();
            self.shared.work.notify_all();
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.acceptor.is_some() || self.worker.is_some() {
            self.stop();
        }
    }
}

fn worker_loop(shared: &Shared, chip: &mut ChipState) {
    let mut last_user: Option<String> = None;
    loop {
        let (job, started) = {
            let mut q = shared.queue();
            loop {
                if shared.shutdown.load(Ordering::SeqCst) {
                    return;
                }
                if let Some(job) = q.next_job() {
                    break (job, Instant::now());
                }
                q = shared.work.wait(q).unwrap_or_else(|e| e.into_inner());
            }
        };
        let reset = last_user.as_deref() != Some(job.user.as_str());
        if reset {
            chip.reset();
        }
        let outcome = match chip.run(&job.program) {
            Ok(result) => Outcome {
                status: JobStatus::Done,
                result: result.to_bytes(),
                message: String::new(),
            },
            Err(e) => Outcome {
                status: JobStatus::Failed,
                result: e.partial.to_bytes(),
                message: e.to_string(),
            },
        };
        let status = outcome.status;
        {
            let mut q = shared.queue();
            q.complete(job.id, outcome);
            shared.log.lock().unwrap_or_else(|e| e.into_inner()).push(Dispatch {
                job_id: job.id,
                user: job.user.clone(),
                reset,
                started,
                finished: Instant::now(),
                status,
            });
        }
        last_user = Some(job.user);
    }
}

fn accept_loop(listener: &TcpListener, shared: &Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.shutdown.load(Ordering::SeqCst) {
            return;
        }
        let Ok(stream) = stream else { continue };
        let shared = shared.clone();
        let _ = thread::Builder::new().name("sched-conn".into()).spawn(move || {
            let _ = serve_connection(stream, &shared);
        });
    }
}

fn serve_connection(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let frame = match Frame::read_from(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(FrameError::Io(e)) => return Err(e),
            Err(e) => {
                // The stream cannot be resynchronised after a bad header.
                let reply = Message::Error {
                    code: error_code::BAD_FRAME,
                    message: e.to_string(),
                };
                return reply.to_frame().write_to(&mut writer);
            }
        };
        let reply = match Message::from_frame(&frame) {
            Ok(msg) => handle(msg, shared),
            Err(e) => Message::Error {
                code: error_code::BAD_FRAME,
                message: e.to_string(),
            },
        };
        reply.to_frame().write_to(&mut writer)?;
    }
}

fn handle(msg: Message, shared: &Shared) -> Message {
    match msg {
        Message::Submit {
            user,
            priority,
            program,
        } => {
            let mut q = shared.queue();
            match q.submit(&user, priority, &program) {
                Ok(job_id) => {
                    shared.work.notify_one();
                    Message::SubmitAck { job_id }
                }
                Err(e) => Message::Error {
                    code: error_code::MALFORMED_PROGRAM,
                    message: e.to_string(),
                },
            }
        }
        Message::GetResult { job_id } => match shared.queue().status(job_id) {
            Some((status, outcome)) => Message::Result {
                job_id,
                status,
                outcome: outcome.map(|o| (o.result.clone(), o.message.clone())),
            },
            None => Message::Error {
                code: error_code::UNKNOWN_JOB,
                message: format!("unknown job {job_id}"),
            },
        },
        Message::Ping => Message::Pong,
        other => Message::Error {
            code: error_code::BAD_FRAME,
            message: format!("unexpected {:?} from client", other.msg_type()),
        },
    }
}
