//! Timed command streams ("playback programs"), read tickets, and the
//! executor abstraction.
//!
//! A program is built once, is immutable afterwards and can be executed by
//! anything implementing [`Executor`]: the local simulator or a remote
//! scheduler. Reads return tickets that resolve only after the program ran.
//!
//! # Wire format (`BSPP`)
//!
//! Big-endian throughout. A 12-byte header (`"BSPP"`, version `1`, three
//! reserved zero bytes, command count `u32`) is followed by 16-byte records:
//! opcode `u8`, backend `u8`, reserved `u16`, address `u32`, payload or low
//! half of the target time `u32`, high half of the target time `u32`.
//!
//! Execution results serialize as length-prefixed sections: responses
//! `(read_index u32, word u32)*`, spikes `(time u64, neuron u16)*`, then the
//! final timer `u64` and PPU faults `(ppu u8, cause u8, pc u32, detail u32)*`.

use std::fmt;
use std::marker::PhantomData;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::coord::AnyCoord;
use crate::hal::{
    self, AnyContainer, Backend, BusCommand, ContainerKind, HalError, JtagCommand, Readable, TimerValue, Writable,
};

pub const MAGIC: &[u8; 4] = b"BSPP";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 12;
pub const RECORD_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Write = 1,
    Read = 2,
    WaitUntil = 3,
    Halt = 4,
}

impl Opcode {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Opcode::Write),
            2 => Some(Opcode::Read),
            3 => Some(Opcode::WaitUntil),
            4 => Some(Opcode::Halt),
            _ => None,
        }
    }
}

/// One playback command.
///
/// For JTAG commands `address` carries the instruction code and `payload` its
/// data; the shift-out that returns a word is the READ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Write {
        backend: Backend,
        address: u32,
        payload: u32,
    },
    Read {
        backend: Backend,
        address: u32,
        read_index: u32,
    },
    WaitUntil {
        target_time: u64,
    },
    Halt,
}

impl Command {
    pub fn opcode(&self) -> Opcode {
        match self {
            Command::Write { .. } => Opcode::Write,
            Command::Read { .. } => Opcode::Read,
            Command::WaitUntil { .. } => Opcode::WaitUntil,
            Command::Halt => Opcode::Halt,
        }
    }

    fn to_record(self) -> [u8; RECORD_LEN] {
        let (backend, address, low, high) = match self {
            Command::Write {
                backend,
                address,
                payload,
            } => (backend.to_u8(), address, payload, 0),
            Command::Read { backend, address, .. } => (backend.to_u8(), address, 0, 0),
            Command::WaitUntil { target_time } => (0, 0, target_time as u32, (target_time >> 32) as u32),
            Command::Halt => (0, 0, 0, 0),
        };
        let mut out = [0u8; RECORD_LEN];
        out[0] = self.opcode() as u8;
        out[1] = backend;
        out[4..8].copy_from_slice(&address.to_be_bytes());
        out[8..12].copy_from_slice(&low.to_be_bytes());
        out[12..16].copy_from_slice(&high.to_be_bytes());
        out
    }

    fn from_bus(backend: Backend, bus: BusCommand, next_read: &mut u32) -> Self {
        let read = |address, next_read: &mut u32| {
            let read_index = *next_read;
            *next_read += 1;
            Command::Read {
                backend,
                address,
                read_index,
            }
        };
        match bus {
            BusCommand::OmnibusWrite { address, word } => Command::Write {
                backend,
                address,
                payload: word,
            },
            BusCommand::OmnibusRead { address } => read(address, next_read),
            BusCommand::Jtag(j) if j.is_read() => read(j.instruction(), next_read),
            BusCommand::Jtag(j) => Command::Write {
                backend,
                address: j.instruction(),
                payload: j.payload(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed program at byte {offset}: {reason}")]
pub struct MalformedProgram {
    pub offset: usize,
    pub reason: String,
}

fn malformed(offset: usize, reason: impl Into<String>) -> MalformedProgram {
    MalformedProgram {
        offset,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TicketError {
    #[error("program has not been executed yet")]
    NotYetExecuted,
    #[error("result lacks response for read index {0}")]
    MissingResponse(u32),
    #[error(transparent)]
    Decode(#[from] HalError),
}

// ---------------------------------------------------------------------------
// Results

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Response {
    pub read_index: u32,
    pub word: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpikeRecord {
    pub time: u64,
    pub neuron: u16,
}

/// A PPU trap that happened during a run. Traps are recorded, not fatal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PpuFault {
    pub ppu: u8,
    pub pc: u32,
    pub cause: u8,
    pub detail: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecutionResult {
    /// Sorted by `read_index`.
    pub responses: Vec<Response>,
    pub spikes: Vec<SpikeRecord>,
    pub final_timer: u64,
    pub ppu_faults: Vec<PpuFault>,
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N], MalformedProgram> {
        let end = self.pos + N;
        let bytes = self
            .data
            .get(self.pos..end)
            .ok_or_else(|| malformed(self.pos, format!("truncated {what}")))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length"))
    }
    fn u8(&mut self, what: &str) -> Result<u8, MalformedProgram> {
        Ok(self.take::<1>(what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16, MalformedProgram> {
        Ok(u16::from_be_bytes(self.take(what)?))
    }
    fn u32(&mut self, what: &str) -> Result<u32, MalformedProgram> {
        Ok(u32::from_be_bytes(self.take(what)?))
    }
    fn u64(&mut self, what: &str) -> Result<u64, MalformedProgram> {
        Ok(u64::from_be_bytes(self.take(what)?))
    }
    fn count(&mut self, what: &str, item_len: usize) -> Result<usize, MalformedProgram> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        if n.saturating_mul(item_len) > self.data.len() - self.pos {
            return Err(malformed(at, format!("{what} count {n} exceeds input")));
        }
        Ok(n)
    }
}

impl ExecutionResult {
    pub fn response(&self, read_index: u32) -> Option<u32> {
        self.responses
            .binary_search_by_key(&read_index, |r| r.read_index)
            .ok()
            .map(|i| self.responses[i].word)
    }

    pub fn spikes_of(&self, neuron: u16) -> impl Iterator<Item = &SpikeRecord> {
        self.spikes.iter().filter(move |s| s.neuron == neuron)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.responses.len() * 8 + self.spikes.len() * 10);
        out.extend_from_slice(&(self.responses.len() as u32).to_be_bytes());
        for r in &self.responses {
            out.extend_from_slice(&r.read_index.to_be_bytes());
            out.extend_from_slice(&r.word.to_be_bytes());
        }
        out.extend_from_slice(&(self.spikes.len() as u32).to_be_bytes());
        for s in &self.spikes {
            out.extend_from_slice(&s.time.to_be_bytes());
            out.extend_from_slice(&s.neuron.to_be_bytes());
        }
        out.extend_from_slice(&self.final_timer.to_be_bytes());
        out.extend_from_slice(&(self.ppu_faults.len() as u32).to_be_bytes());
        for f in &self.ppu_faults {
            out.push(f.ppu);
            out.push(f.cause);
            out.extend_from_slice(&f.pc.to_be_bytes());
            out.extend_from_slice(&f.detail.to_be_bytes());
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, MalformedProgram> {
        let mut r = Reader { data, pos: 0 };
        let n = r.count("response", 8)?;
        let mut responses = Vec::with_capacity(n);
        for _ in 0..n {
            responses.push(Response {
                read_index: r.u32("read index")?,
                word: r.u32("response word")?,
            });
        }
        let n = r.count("spike", 10)?;
        let mut spikes = Vec::with_capacity(n);
        for _ in 0..n {
            let time = r.u64("spike time")?;
            let neuron = r.u16("spike neuron")?;
            if neuron as u32 >= hal::address::N_NEURONS {
                return Err(malformed(r.pos - 2, format!("neuron {neuron} out of range")));
            }
            spikes.push(SpikeRecord { time, neuron });
        }
        let final_timer = r.u64("final timer")?;
        let n = r.count("fault", 10)?;
        let mut ppu_faults = Vec::with_capacity(n);
        for _ in 0..n {
            ppu_faults.push(PpuFault {
                ppu: r.u8("fault ppu")?,
                cause: r.u8("fault cause")?,
                pc: r.u32("fault pc")?,
                detail: r.u32("fault detail")?,
            });
        }
        if r.pos != data.len() {
            return Err(malformed(r.pos, "trailing bytes"));
        }
        Ok(Self {
            responses,
            spikes,
            final_timer,
            ppu_faults,
        })
    }
}

// ---------------------------------------------------------------------------
// Programs

type ResultSlot = Arc<OnceLock<Arc<ExecutionResult>>>;

static NEXT_PROGRAM_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_PROGRAM_ID.fetch_add(1, Ordering::Relaxed)
}

/// Immutable command list ending in exactly one HALT.
#[derive(Clone)]
pub struct PlaybackProgram {
    id: u64,
    commands: Arc<[Command]>,
    slot: ResultSlot,
}

impl fmt::Debug for PlaybackProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlaybackProgram")
            .field("id", &self.id)
            .field("commands", &self.commands.len())
            .field("executed", &self.is_executed())
            .finish()
    }
}

impl PartialEq for PlaybackProgram {
    /// Programs compare by content.
    fn eq(&self, other: &Self) -> bool {
        self.commands == other.commands
    }
}

impl Eq for PlaybackProgram {}

impl PlaybackProgram {
    /// Validate a raw command list: consecutive read indices, single trailing HALT.
    pub fn from_commands(commands: Vec<Command>) -> Result<Self, MalformedProgram> {
        let mut next_read = 0;
        for (i, c) in commands.iter().enumerate() {
            let offset = HEADER_LEN + i * RECORD_LEN;
            match c {
                Command::Halt if i + 1 != commands.len() => return Err(malformed(offset, "command after HALT")),
                Command::Read { read_index, .. } => {
                    if *read_index != next_read {
                        return Err(malformed(offset, "non-consecutive read index"));
                    }
                    next_read += 1;
                }
                _ => {}
            }
        }
        if commands.last() != Some(&Command::Halt) {
            return Err(malformed(HEADER_LEN + commands.len() * RECORD_LEN, "missing HALT"));
        }
        Ok(Self {
            id: next_id(),
            commands: commands.into(),
            slot: Arc::default(),
        })
    }

    /// Unique per built or deserialized program; clones share it.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn commands(&self) -> &[Command] {
        &self.commands
    }

    pub fn read_count(&self) -> u32 {
        self.commands
            .iter()
            .filter(|c| matches!(c, Command::Read { .. }))
            .count() as u32
    }

    pub fn is_executed(&self) -> bool {
        self.slot.get().is_some()
    }

    pub fn result(&self) -> Option<Arc<ExecutionResult>> {
        self.slot.get().cloned()
    }

    /// Fill the result slot. Only the first call has an effect; returns whether it did.
    pub fn set_result(&self, result: Arc<ExecutionResult>) -> bool {
        self.slot.set(result).is_ok()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.commands.len() * RECORD_LEN);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&[0, 0, 0]);
        out.extend_from_slice(&(self.commands.len() as u32).to_be_bytes());
        for c in self.commands.iter() {
            out.extend_from_slice(&c.to_record());
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, MalformedProgram> {
        if data.len() < HEADER_LEN {
            return Err(malformed(data.len(), "truncated header"));
        }
        if &data[0..4] != MAGIC {
            return Err(malformed(0, "bad magic"));
        }
        if data[4] != VERSION {
            return Err(malformed(4, format!("unsupported version {}", data[4])));
        }
        if data[5..8] != [0, 0, 0] {
            return Err(malformed(5, "reserved header bytes not zero"));
        }
        let count = u32::from_be_bytes(data[8..12].try_into().expect("4 bytes")) as usize;
        let body = &data[HEADER_LEN..];
        if body.len() != count.saturating_mul(RECORD_LEN) {
            let reason = if body.len() < count.saturating_mul(RECORD_LEN) {
                "truncated command records"
            } else {
                "trailing bytes after last record"
            };
            return Err(malformed(HEADER_LEN + body.len().min(count * RECORD_LEN), reason));
        }
        let mut commands = Vec::with_capacity(count);
        let mut next_read = 0;
        for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
            let offset = HEADER_LEN + i * RECORD_LEN;
            let word = |at: usize| u32::from_be_bytes(rec[at..at + 4].try_into().expect("4 bytes"));
            let (address, low, high) = (word(4), word(8), word(12));
            if rec[2] != 0 || rec[3] != 0 {
                return Err(malformed(offset + 2, "reserved record bytes not zero"));
            }
            let opcode =
                Opcode::from_u8(rec[0]).ok_or_else(|| malformed(offset, format!("unknown opcode {}", rec[0])))?;
            let backend =
                || Backend::from_u8(rec[1]).ok_or_else(|| malformed(offset + 1, format!("unknown backend {}", rec[1])));
            let unused = |cond: bool| {
                if cond {
                    Ok(())
                } else {
                    Err(malformed(offset, "unused record fields not zero"))
                }
            };
            let command = match opcode {
                Opcode::Write => {
                    let backend = backend()?;
                    unused(high == 0)?;
                    if backend == Backend::Jtag && JtagCommand::from_parts(address, low).is_none() {
                        return Err(malformed(offset + 4, "invalid JTAG instruction"));
                    }
                    Command::Write {
                        backend,
                        address,
                        payload: low,
                    }
                }
                Opcode::Read => {
                    let backend = backend()?;
                    unused(low == 0 && high == 0)?;
                    if backend == Backend::Jtag && address != JtagCommand::ShiftOut.instruction() {
                        return Err(malformed(offset + 4, "JTAG read must be SHIFT_OUT"));
                    }
                    let read_index = next_read;
                    next_read += 1;
                    Command::Read {
                        backend,
                        address,
                        read_index,
                    }
                }
                Opcode::WaitUntil => {
                    unused(rec[1] == 0 && address == 0)?;
                    Command::WaitUntil {
                        target_time: (high as u64) << 32 | low as u64,
                    }
                }
                Opcode::Halt => {
                    unused(rec[1] == 0 && address == 0 && low == 0 && high == 0)?;
                    Command::Halt
                }
            };
            commands.push(command);
        }
        Self::from_commands(commands)
    }
}

// ---------------------------------------------------------------------------
// Tickets

/// Future-like handle on the words returned by a range of READ commands.
pub struct ContainerTicket<C: Readable> {
    slot: ResultSlot,
    coord: C::Coord,
    first: u32,
    len: u32,
    _container: PhantomData<fn() -> C>,
}

impl<C: Readable> Clone for ContainerTicket<C> {
    fn clone(&self) -> Self {
        Self {
            slot: self.slot.clone(),
            coord: self.coord,
            first: self.first,
            len: self.len,
            _container: PhantomData,
        }
    }
}

impl<C: Readable> fmt::Debug for ContainerTicket<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContainerTicket")
            .field("coord", &self.coord)
            .field("read_indices", &self.read_indices())
            .finish()
    }
}

fn collect_words(slot: &ResultSlot, first: u32, len: u32) -> Result<Vec<u32>, TicketError> {
    let result = slot.get().ok_or(TicketError::NotYetExecuted)?;
    (first..first + len)
        .map(|i| result.response(i).ok_or(TicketError::MissingResponse(i)))
        .collect()
}

impl<C: Readable> ContainerTicket<C> {
    pub fn coord(&self) -> &C::Coord {
        &self.coord
    }

    pub fn read_indices(&self) -> std::ops::Range<u32> {
        self.first..self.first + self.len
    }

    pub fn is_ready(&self) -> bool {
        self.slot.get().is_some()
    }

    pub fn get(&self) -> Result<C, TicketError> {
        let words = collect_words(&self.slot, self.first, self.len)?;
        Ok(hal::decode::<C>(&self.coord, &words)?)
    }
}

/// Ticket for a container chosen at runtime.
#[derive(Debug, Clone)]
pub struct AnyTicket {
    slot: ResultSlot,
    kind: ContainerKind,
    coord: AnyCoord,
    first: u32,
    len: u32,
}

impl AnyTicket {
    pub fn kind(&self) -> ContainerKind {
        self.kind
    }

    pub fn coord(&self) -> AnyCoord {
        self.coord
    }

    pub fn read_indices(&self) -> std::ops::Range<u32> {
        self.first..self.first + self.len
    }

    pub fn get(&self) -> Result<AnyContainer, TicketError> {
        let words = collect_words(&self.slot, self.first, self.len)?;
        Ok(self.kind.decode(self.coord, &words)?)
    }
}

/// Handle on the single word returned by a raw read.
#[derive(Debug, Clone)]
pub struct WordTicket {
    slot: ResultSlot,
    index: u32,
}

impl WordTicket {
    pub fn read_index(&self) -> u32 {
        self.index
    }

    pub fn get(&self) -> Result<u32, TicketError> {
        Ok(collect_words(&self.slot, self.index, 1)?[0])
    }
}

// ---------------------------------------------------------------------------
// Builder

/// Accumulates commands; [`done`](Self::done) seals them into a program.
pub struct PlaybackProgramBuilder {
    commands: Vec<Command>,
    next_read: u32,
    backend: Backend,
    slot: ResultSlot,
}

impl Default for PlaybackProgramBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for PlaybackProgramBuilder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlaybackProgramBuilder")
            .field("commands", &self.commands.len())
            .field("backend", &self.backend)
            .finish()
    }
}

impl PlaybackProgramBuilder {
    pub fn new() -> Self {
        Self::with_backend(Backend::Omnibus)
    }

    /// Builder whose container accesses are lowered to `backend`.
    pub fn with_backend(backend: Backend) -> Self {
        Self {
            commands: Vec::new(),
            next_read: 0,
            backend,
            slot: Arc::default(),
        }
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn set_backend(&mut self, backend: Backend) {
        self.backend = backend;
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    fn push_bus(&mut self, bus: Vec<BusCommand>) -> std::ops::Range<u32> {
        let first = self.next_read;
        for b in bus {
            let c = Command::from_bus(self.backend, b, &mut self.next_read);
            self.commands.push(c);
        }
        first..self.next_read
    }

    pub fn write<C: Writable>(&mut self, coord: C::Coord, container: &C) {
        let bus = hal::encode_write(container, &coord, self.backend);
        self.push_bus(bus);
    }

    pub fn read<C: Readable>(&mut self, coord: C::Coord) -> ContainerTicket<C> {
        let bus = hal::encode_read::<C>(&coord, self.backend);
        let span = self.push_bus(bus);
        ContainerTicket {
            slot: self.slot.clone(),
            coord,
            first: span.start,
            len: span.end - span.start,
            _container: PhantomData,
        }
    }

    pub fn write_any(&mut self, coord: AnyCoord, container: &AnyContainer) -> Result<(), HalError> {
        let bus = container.encode_write(coord, self.backend)?;
        self.push_bus(bus);
        Ok(())
    }

    pub fn read_any(&mut self, kind: ContainerKind, coord: AnyCoord) -> Result<AnyTicket, HalError> {
        let mut visitor = hal::BackendVisitor::new(self.backend);
        for a in kind.read_addresses(coord)? {
            hal::ReadVisitor::address(&mut visitor, a);
        }
        let span = self.push_bus(visitor.finish());
        Ok(AnyTicket {
            slot: self.slot.clone(),
            kind,
            coord,
            first: span.start,
            len: span.end - span.start,
        })
    }

    /// Write one register word, bypassing the typed layer.
    pub fn write_word(&mut self, address: u32, word: u32) {
        let mut visitor = hal::BackendVisitor::new(self.backend);
        hal::WriteVisitor::word(&mut visitor, address, word);
        self.push_bus(visitor.finish());
    }

    /// Read one register word, bypassing the typed layer.
    pub fn read_word(&mut self, address: u32) -> WordTicket {
        let mut visitor = hal::BackendVisitor::new(self.backend);
        hal::ReadVisitor::address(&mut visitor, address);
        let span = self.push_bus(visitor.finish());
        WordTicket {
            slot: self.slot.clone(),
            index: span.start,
        }
    }

    /// Release subsequent commands once the timer reaches `target`.
    pub fn wait_until(&mut self, target: impl Into<TimerValue>) {
        self.commands.push(Command::WaitUntil {
            target_time: target.into().value(),
        });
    }

    /// Append everything of `other`'s pending commands, renumbering reads.
    ///
    /// Tickets previously issued by `other` are not transferred.
    pub fn append(&mut self, mut other: PlaybackProgramBuilder) {
        for c in other.commands.drain(..) {
            let c = match c {
                Command::Read { backend, address, .. } => {
                    let read_index = self.next_read;
                    self.next_read += 1;
                    Command::Read {
                        backend,
                        address,
                        read_index,
                    }
                }
                c => c,
            };
            self.commands.push(c);
        }
    }

    /// Seal the accumulated commands plus HALT. The builder is left empty and
    /// its read numbering restarts at 0.
    pub fn done(&mut self) -> PlaybackProgram {
        let mut commands = std::mem::take(&mut self.commands);
        commands.push(Command::Halt);
        self.next_read = 0;
        PlaybackProgram {
            id: next_id(),
            commands: commands.into(),
            slot: std::mem::take(&mut self.slot),
        }
    }
}

impl From<u64> for TimerValue {
    fn from(v: u64) -> Self {
        TimerValue(v)
    }
}

// ---------------------------------------------------------------------------
// Execution

/// Anything that can run a playback program.
pub trait Executor {
    type Error: std::error::Error + Send + Sync + 'static;

    /// Execute without touching the program's result slot.
    fn execute(&mut self, program: &PlaybackProgram) -> Result<ExecutionResult, Self::Error>;

    /// Execute and resolve the program's tickets.
    fn run(&mut self, program: &PlaybackProgram) -> Result<Arc<ExecutionResult>, Self::Error> {
        let result = Arc::new(self.execute(program)?);
        program.set_result(result.clone());
        Ok(result)
    }
}
