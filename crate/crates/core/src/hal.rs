//! Container value types and their register-level codecs.
//!
//! Every container knows the register words it occupies at a coordinate.
//! Encoding walks a container (and, for composites, its sub-containers in
//! pre-order) through a visitor that receives `(address, word)` pairs; the
//! backend visitor then lowers each access to Omnibus or JTAG commands.

use std::fmt;

use thiserror::Error;

use crate::coord::{
    AnyCoord, CoordKind, Coordinate, CorrelationOnChip, NeuronConfigOnDLS, NeuronEventOutputOnDLS, PPUControlOnDLS,
    PPUMemoryBlockOnDLS, PPUMemoryWordOnDLS, SpikeCounterOnDLS, SpikePackToChipOnDLS, SynapseColumnOnHemisphere,
    SynapseDriverOnDLS, SynapseOnChip, SynapseOnHemisphere, SynapseRowOnChip, TimerOnDLS,
};

/// The register address map shared by the codecs, the simulator, the PPU bus
/// and the debugger.
///
/// | region                     | base          | words                      |
/// |----------------------------|---------------|----------------------------|
/// | PPU SRAM (PPU `p`)         | `0x0000_0000` | `p * 0x1000 + word`        |
/// | PPU control (PPU `p`)      | `0x0001_0000` | `+ p`                      |
/// | PPU debug request (PPU `p`)| `0x0001_0010` | `+ p`                      |
/// | timer low / high / reset   | `0x0002_0000` | `+0`, `+1`, `+2`           |
/// | neuron config              | `0x0003_0000` | `+ 2n`, `+ 2n + 1`         |
/// | synapse                    | `0x0004_0000` | `+ enum(SynapseOnChip)`    |
/// | spike counter              | `0x0006_0000` | `+ n`                      |
/// | spike injection            | `0x0007_0000` | single                     |
/// | correlation sensor         | `0x0008_0000` | `+ enum(SynapseOnChip)`    |
/// | synapse driver config      | `0x000A_0000` | `+ driver`                 |
/// | neuron event output        | `0x000B_0000` | `+ n`                      |
pub mod address {
    pub const PPU_MEMORY_BASE: u32 = 0x0000_0000;
    pub const PPU_MEMORY_STRIDE: u32 = 0x1000;
    pub const PPU_CONTROL_BASE: u32 = 0x0001_0000;
    pub const PPU_DEBUG_REQUEST_BASE: u32 = 0x0001_0010;
    pub const TIMER_LOW: u32 = 0x0002_0000;
    pub const TIMER_HIGH: u32 = 0x0002_0001;
    pub const TIMER_RESET: u32 = 0x0002_0002;
    pub const NEURON_CONFIG_BASE: u32 = 0x0003_0000;
    pub const NEURON_CONFIG_WORDS: u32 = 2;
    pub const SYNAPSE_BASE: u32 = 0x0004_0000;
    pub const SPIKE_COUNTER_BASE: u32 = 0x0006_0000;
    pub const SPIKE_INJECTION: u32 = 0x0007_0000;
    pub const CORRELATION_BASE: u32 = 0x0008_0000;
    pub const SYNAPSE_DRIVER_BASE: u32 = 0x000A_0000;
    pub const NEURON_EVENT_OUTPUT_BASE: u32 = 0x000B_0000;

    pub const N_PPUS: u32 = 2;
    pub const N_NEURONS: u32 = 512;
    pub const N_SYNAPSES: u32 = 131_072;
    pub const N_SYNAPSE_DRIVERS: u32 = 512;

    /// Lowest address the PPU reaches over the chip bus instead of its SRAM.
    pub const PPU_BUS_BASE: u32 = 0x0001_0000;

    pub fn ppu_memory(ppu: u32, word: u32) -> u32 {
        PPU_MEMORY_BASE + ppu * PPU_MEMORY_STRIDE + word
    }

    pub fn synapse(index: u32) -> u32 {
        SYNAPSE_BASE + index
    }

    pub fn correlation(index: u32) -> u32 {
        CORRELATION_BASE + index
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HalError {
    #[error("{field} = {value} out of range [0, {max}]")]
    ValueOutOfRange { field: &'static str, value: u64, max: u64 },
    #[error("container {container} cannot be placed at {coord}")]
    KindMismatch { container: ContainerKind, coord: CoordKind },
    #[error("container {0} is not readable")]
    NotReadable(ContainerKind),
    #[error("container {0} is not writable")]
    NotWritable(ContainerKind),
    #[error("expected {expected} words, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// Register access protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Backend {
    #[default]
    Omnibus,
    Jtag,
}

impl Backend {
    pub fn to_u8(self) -> u8 {
        match self {
            Backend::Omnibus => 0,
            Backend::Jtag => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Backend::Omnibus),
            1 => Some(Backend::Jtag),
            _ => None,
        }
    }
}

/// One JTAG-side operation. A logical write is `Select, ShiftIn, CommitWrite`;
/// a logical read is `Select, Capture, ShiftOut`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JtagCommand {
    SelectAddress(u32),
    ShiftIn(u32),
    CommitWrite,
    Capture,
    ShiftOut,
}

impl JtagCommand {
    /// Instruction-register code carried in the address field of a playback command.
    pub fn instruction(self) -> u32 {
        match self {
            JtagCommand::SelectAddress(_) => 0,
            JtagCommand::ShiftIn(_) => 1,
            JtagCommand::CommitWrite => 2,
            JtagCommand::Capture => 3,
            JtagCommand::ShiftOut => 4,
        }
    }

    pub fn payload(self) -> u32 {
        match self {
            JtagCommand::SelectAddress(a) => a,
            JtagCommand::ShiftIn(w) => w,
            _ => 0,
        }
    }

    pub fn from_parts(instruction: u32, payload: u32) -> Option<Self> {
        Some(match instruction {
            0 => JtagCommand::SelectAddress(payload),
            1 => JtagCommand::ShiftIn(payload),
            2 => JtagCommand::CommitWrite,
            3 => JtagCommand::Capture,
            4 => JtagCommand::ShiftOut,
            _ => return None,
        })
    }

    pub fn is_read(self) -> bool {
        matches!(self, JtagCommand::ShiftOut)
    }
}

/// A backend-specific bus command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BusCommand {
    OmnibusWrite { address: u32, word: u32 },
    OmnibusRead { address: u32 },
    Jtag(JtagCommand),
}

impl BusCommand {
    pub fn is_read(self) -> bool {
        match self {
            BusCommand::OmnibusRead { .. } => true,
            BusCommand::Jtag(j) => j.is_read(),
            BusCommand::OmnibusWrite { .. } => false,
        }
    }
}

/// Receives the flat register image of a container being written.
pub trait WriteVisitor {
    fn word(&mut self, address: u32, word: u32);
}

/// Receives the register addresses of a container being read.
pub trait ReadVisitor {
    fn address(&mut self, address: u32);
}

impl WriteVisitor for Vec<(u32, u32)> {
    fn word(&mut self, address: u32, word: u32) {
        self.push((address, word));
    }
}

impl ReadVisitor for Vec<u32> {
    fn address(&mut self, address: u32) {
        self.push(address);
    }
}

/// Lowers visited register accesses onto one bus protocol.
pub struct BackendVisitor {
    backend: Backend,
    commands: Vec<BusCommand>,
}

impl BackendVisitor {
    pub fn new(backend: Backend) -> Self {
        Self {
            backend,
            commands: Vec::new(),
        }
    }

    pub fn finish(self) -> Vec<BusCommand> {
        self.commands
    }
}

impl WriteVisitor for BackendVisitor {
    fn word(&mut self, address: u32, word: u32) {
        match self.backend {
            Backend::Omnibus => self.commands.push(BusCommand::OmnibusWrite { address, word }),
            Backend::Jtag => self.commands.extend([
                BusCommand::Jtag(JtagCommand::SelectAddress(address)),
                BusCommand::Jtag(JtagCommand::ShiftIn(word)),
                BusCommand::Jtag(JtagCommand::CommitWrite),
            ]),
        }
    }
}

impl ReadVisitor for BackendVisitor {
    fn address(&mut self, address: u32) {
        match self.backend {
            Backend::Omnibus => self.commands.push(BusCommand::OmnibusRead { address }),
            Backend::Jtag => self.commands.extend([
                BusCommand::Jtag(JtagCommand::SelectAddress(address)),
                BusCommand::Jtag(JtagCommand::Capture),
                BusCommand::Jtag(JtagCommand::ShiftOut),
            ]),
        }
    }
}

/// Sequential word source for decoding.
pub struct WordReader<'a> {
    words: &'a [u32],
    pos: usize,
}

impl<'a> WordReader<'a> {
    pub fn new(words: &'a [u32]) -> Self {
        Self { words, pos: 0 }
    }

    fn next(&mut self) -> Result<u32, HalError> {
        let w = *self.words.get(self.pos).ok_or(HalError::LengthMismatch {
            expected: self.pos + 1,
            actual: self.words.len(),
        })?;
        self.pos += 1;
        Ok(w)
    }
}

pub trait Container: Sized + Clone + fmt::Debug + PartialEq {
    type Coord: Copy + fmt::Debug + fmt::Display + Into<AnyCoord>;
    const KIND: ContainerKind;
}

pub trait Writable: Container {
    fn visit_write(&self, coord: &Self::Coord, visitor: &mut dyn WriteVisitor);
}

pub trait Readable: Container {
    fn visit_read(coord: &Self::Coord, visitor: &mut dyn ReadVisitor);
    fn decode_from(coord: &Self::Coord, words: &mut WordReader<'_>) -> Result<Self, HalError>;
}

/// Bus commands writing `container` at `coord`.
pub fn encode_write<C: Writable>(container: &C, coord: &C::Coord, backend: Backend) -> Vec<BusCommand> {
    let mut v = BackendVisitor::new(backend);
    container.visit_write(coord, &mut v);
    v.finish()
}

/// Flat `(address, word)` register image of `container` at `coord`.
pub fn register_image<C: Writable>(container: &C, coord: &C::Coord) -> Vec<(u32, u32)> {
    let mut v = Vec::new();
    container.visit_write(coord, &mut v);
    v
}

/// Register addresses read to reconstruct a `C` at `coord`, in decode order.
pub fn read_addresses<C: Readable>(coord: &C::Coord) -> Vec<u32> {
    let mut v = Vec::new();
    C::visit_read(coord, &mut v);
    v
}

pub fn encode_read<C: Readable>(coord: &C::Coord, backend: Backend) -> Vec<BusCommand> {
    let mut v = BackendVisitor::new(backend);
    C::visit_read(coord, &mut v);
    v.finish()
}

/// Decode a container from exactly the words listed by [`read_addresses`].
pub fn decode<C: Readable>(coord: &C::Coord, words: &[u32]) -> Result<C, HalError> {
    let expected = read_addresses::<C>(coord).len();
    if words.len() != expected {
        return Err(HalError::LengthMismatch {
            expected,
            actual: words.len(),
        });
    }
    C::decode_from(coord, &mut WordReader::new(words))
}

fn check_reserved(word: u32, mask: u32) -> Result<(), HalError> {
    if word & !mask != 0 {
        return Err(HalError::ValueOutOfRange {
            field: "reserved",
            value: (word & !mask) as u64,
            max: 0,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ranged property types

macro_rules! ranged_value {
    ($(#[$meta:meta])* $name:ident, $repr:ty, $max:expr) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name($repr);

        impl $name {
            pub const MIN: $repr = 0;
            pub const MAX: $repr = $max;

            pub fn new(value: $repr) -> Result<Self, HalError> {
                if value <= Self::MAX {
                    Ok(Self(value))
                } else {
                    Err(HalError::ValueOutOfRange {
                        field: stringify!($name),
                        value: value as u64,
                        max: Self::MAX as u64,
                    })
                }
            }

            /// Clamp into range instead of rejecting.
            pub fn saturating(value: u64) -> Self {
                Self(value.min(Self::MAX as u64) as $repr)
            }

            pub fn value(self) -> $repr {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.0)
            }
        }
    };
}

ranged_value!(SynapseWeight, u8, 63);
ranged_value!(SynapseLabel, u8, 63);
ranged_value!(RefractoryTime, u8, 255);
ranged_value!(
    /// 8-bit neuron potential parameter (leak, threshold, reset).
    NeuronPotential,
    u8,
    255
);
ranged_value!(CorrelationValue, u8, 255);

// ---------------------------------------------------------------------------
// Containers

/// Configuration of one LIF neuron circuit. Two register words.
///
/// word 0: `leak_potential[7:0] threshold[15:8] reset_potential[23:16]
/// enable_leak[24] enable_spike_output[25]`; word 1: `refractory_time[7:0]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct NeuronConfig {
    pub enable_leak: bool,
    pub refractory_time: RefractoryTime,
    pub leak_potential: NeuronPotential,
    pub threshold: NeuronPotential,
    pub reset_potential: NeuronPotential,
    pub enable_spike_output: bool,
}

impl NeuronConfig {
    pub const WORD0_MASK: u32 = 0x03FF_FFFF;
    pub const WORD1_MASK: u32 = 0x0000_00FF;

    pub fn to_words(&self) -> [u32; 2] {
        let w0 = self.leak_potential.0 as u32
            | (self.threshold.0 as u32) << 8
            | (self.reset_potential.0 as u32) << 16
            | (self.enable_leak as u32) << 24
            | (self.enable_spike_output as u32) << 25;
        [w0, self.refractory_time.0 as u32]
    }

    pub fn from_words(w0: u32, w1: u32) -> Result<Self, HalError> {
        check_reserved(w0, Self::WORD0_MASK)?;
        check_reserved(w1, Self::WORD1_MASK)?;
        Ok(Self::from_words_masked(w0, w1))
    }

    pub fn from_words_masked(w0: u32, w1: u32) -> Self {
        Self {
            leak_potential: NeuronPotential(w0 as u8),
            threshold: NeuronPotential((w0 >> 8) as u8),
            reset_potential: NeuronPotential((w0 >> 16) as u8),
            enable_leak: w0 >> 24 & 1 != 0,
            enable_spike_output: w0 >> 25 & 1 != 0,
            refractory_time: RefractoryTime(w1 as u8),
        }
    }

    pub fn base_address(coord: NeuronConfigOnDLS) -> u32 {
        address::NEURON_CONFIG_BASE + coord.value() as u32 * address::NEURON_CONFIG_WORDS
    }
}

impl Container for NeuronConfig {
    type Coord = NeuronConfigOnDLS;
    const KIND: ContainerKind = ContainerKind::NeuronConfig;
}

impl Writable for NeuronConfig {
    fn visit_write(&self, coord: &NeuronConfigOnDLS, v: &mut dyn WriteVisitor) {
        let base = Self::base_address(*coord);
        let [w0, w1] = self.to_words();
        v.word(base, w0);
        v.word(base + 1, w1);
    }
}

impl Readable for NeuronConfig {
    fn visit_read(coord: &NeuronConfigOnDLS, v: &mut dyn ReadVisitor) {
        let base = Self::base_address(*coord);
        v.address(base);
        v.address(base + 1);
    }

    fn decode_from(_: &NeuronConfigOnDLS, words: &mut WordReader<'_>) -> Result<Self, HalError> {
        let w0 = words.next()?;
        let w1 = words.next()?;
        Self::from_words(w0, w1)
    }
}

/// One synapse: `weight[5:0] label[13:8]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Synapse {
    pub weight: SynapseWeight,
    pub label: SynapseLabel,
}

impl Synapse {
    pub const MASK: u32 = 0x0000_3F3F;

    pub fn new(weight: SynapseWeight, label: SynapseLabel) -> Self {
        Self { weight, label }
    }

    pub fn to_word(self) -> u32 {
        self.weight.0 as u32 | (self.label.0 as u32) << 8
    }

    pub fn from_word(word: u32) -> Result<Self, HalError> {
        check_reserved(word, Self::MASK)?;
        Ok(Self::from_word_masked(word))
    }

    pub fn from_word_masked(word: u32) -> Self {
        Self {
            weight: SynapseWeight((word & 0x3F) as u8),
            label: SynapseLabel((word >> 8 & 0x3F) as u8),
        }
    }
}

impl Container for Synapse {
    type Coord = SynapseOnChip;
    const KIND: ContainerKind = ContainerKind::Synapse;
}

impl Writable for Synapse {
    fn visit_write(&self, coord: &SynapseOnChip, v: &mut dyn WriteVisitor) {
        v.word(address::synapse(coord.to_enum() as u32), self.to_word());
    }
}

impl Readable for Synapse {
    fn visit_read(coord: &SynapseOnChip, v: &mut dyn ReadVisitor) {
        v.address(address::synapse(coord.to_enum() as u32));
    }

    fn decode_from(_: &SynapseOnChip, words: &mut WordReader<'_>) -> Result<Self, HalError> {
        Self::from_word(words.next()?)
    }
}

/// All 256 synapses of one hemisphere row, visited column by column.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SynapseRowValues {
    pub synapses: Vec<Synapse>,
}

impl SynapseRowValues {
    pub const LEN: usize = SynapseColumnOnHemisphere::SIZE;

    fn synapse_coord(row: SynapseRowOnChip, column: usize) -> SynapseOnChip {
        SynapseOnChip::new(
            SynapseOnHemisphere::new(
                row.to_synapse_row_on_hemisphere(),
                SynapseColumnOnHemisphere::new(column).expect("column below 256"),
            ),
            row.to_hemisphere_on_chip(),
        )
    }
}

impl Default for SynapseRowValues {
    fn default() -> Self {
        Self {
            synapses: vec![Synapse::default(); Self::LEN],
        }
    }
}

impl Container for SynapseRowValues {
    type Coord = SynapseRowOnChip;
    const KIND: ContainerKind = ContainerKind::SynapseRowValues;
}

impl Writable for SynapseRowValues {
    fn visit_write(&self, coord: &SynapseRowOnChip, v: &mut dyn WriteVisitor) {
        debug_assert_eq!(self.synapses.len(), Self::LEN);
        for (column, synapse) in self.synapses.iter().enumerate().take(Self::LEN) {
            synapse.visit_write(&Self::synapse_coord(*coord, column), v);
        }
    }
}

impl Readable for SynapseRowValues {
    fn visit_read(coord: &SynapseRowOnChip, v: &mut dyn ReadVisitor) {
        for column in 0..Self::LEN {
            Synapse::visit_read(&Self::synapse_coord(*coord, column), v);
        }
    }

    fn decode_from(coord: &SynapseRowOnChip, words: &mut WordReader<'_>) -> Result<Self, HalError> {
        let synapses = (0..Self::LEN)
            .map(|c| Synapse::decode_from(&Self::synapse_coord(*coord, c), words))
            .collect::<Result<_, _>>()?;
        Ok(Self { synapses })
    }
}

/// Write-only timer control. `reset` zeroes the timer when written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TimerConfig {
    pub reset: bool,
}

impl Container for TimerConfig {
    type Coord = TimerOnDLS;
    const KIND: ContainerKind = ContainerKind::TimerConfig;
}

impl Writable for TimerConfig {
    fn visit_write(&self, _: &TimerOnDLS, v: &mut dyn WriteVisitor) {
        v.word(address::TIMER_RESET, self.reset as u32);
    }
}

/// 64-bit timer value, low word first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TimerValue(pub u64);

impl TimerValue {
    pub fn value(self) -> u64 {
        self.0
    }
}

impl Container for TimerValue {
    type Coord = TimerOnDLS;
    const KIND: ContainerKind = ContainerKind::TimerValue;
}

impl Writable for TimerValue {
    fn visit_write(&self, _: &TimerOnDLS, v: &mut dyn WriteVisitor) {
        v.word(address::TIMER_LOW, self.0 as u32);
        v.word(address::TIMER_HIGH, (self.0 >> 32) as u32);
    }
}

impl Readable for TimerValue {
    fn visit_read(_: &TimerOnDLS, v: &mut dyn ReadVisitor) {
        v.address(address::TIMER_LOW);
        v.address(address::TIMER_HIGH);
    }

    fn decode_from(_: &TimerOnDLS, words: &mut WordReader<'_>) -> Result<Self, HalError> {
        let lo = words.next()? as u64;
        let hi = words.next()? as u64;
        Ok(TimerValue(hi << 32 | lo))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PPUStatus {
    #[default]
    Sleeping,
    Running,
}

/// PPU reset gate: `inhibit_reset[0] status[1]`. `status` is ignored on write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PPUControl {
    /// `false` holds the core in reset.
    pub inhibit_reset: bool,
    pub status: PPUStatus,
}

impl PPUControl {
    pub const MASK: u32 = 0b11;

    pub fn to_word(self) -> u32 {
        self.inhibit_reset as u32 | ((self.status == PPUStatus::Running) as u32) << 1
    }

    pub fn from_word(word: u32) -> Result<Self, HalError> {
        check_reserved(word, Self::MASK)?;
        Ok(Self {
            inhibit_reset: word & 1 != 0,
            status: if word & 2 != 0 {
                PPUStatus::Running
            } else {
                PPUStatus::Sleeping
            },
        })
    }

    pub fn address(coord: PPUControlOnDLS) -> u32 {
        address::PPU_CONTROL_BASE + coord.value() as u32
    }
}

impl Container for PPUControl {
    type Coord = PPUControlOnDLS;
    const KIND: ContainerKind = ContainerKind::PPUControl;
}

impl Writable for PPUControl {
    fn visit_write(&self, coord: &PPUControlOnDLS, v: &mut dyn WriteVisitor) {
        v.word(Self::address(*coord), self.to_word());
    }
}

impl Readable for PPUControl {
    fn visit_read(coord: &PPUControlOnDLS, v: &mut dyn ReadVisitor) {
        v.address(Self::address(*coord));
    }

    fn decode_from(_: &PPUControlOnDLS, words: &mut WordReader<'_>) -> Result<Self, HalError> {
        Self::from_word(words.next()?)
    }
}

/// Host-side request raising the PPU debug interrupt (write-only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PPUDebugRequest {
    pub raise: bool,
}

impl PPUDebugRequest {
    pub fn address(coord: PPUControlOnDLS) -> u32 {
        address::PPU_DEBUG_REQUEST_BASE + coord.value() as u32
    }
}

impl Container for PPUDebugRequest {
    type Coord = PPUControlOnDLS;
    const KIND: ContainerKind = ContainerKind::PPUDebugRequest;
}

impl Writable for PPUDebugRequest {
    fn visit_write(&self, coord: &PPUControlOnDLS, v: &mut dyn WriteVisitor) {
        v.word(Self::address(*coord), self.raise as u32);
    }
}

/// 16-bit saturating spike count of one neuron (read-only; see [`SpikeCounterReset`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SpikeCounterValue {
    pub count: u16,
}

impl SpikeCounterValue {
    pub fn address(coord: SpikeCounterOnDLS) -> u32 {
        address::SPIKE_COUNTER_BASE + coord.value() as u32
    }
}

impl Container for SpikeCounterValue {
    type Coord = SpikeCounterOnDLS;
    const KIND: ContainerKind = ContainerKind::SpikeCounterValue;
}

impl Readable for SpikeCounterValue {
    fn visit_read(coord: &SpikeCounterOnDLS, v: &mut dyn ReadVisitor) {
        v.address(Self::address(*coord));
    }

    fn decode_from(_: &SpikeCounterOnDLS, words: &mut WordReader<'_>) -> Result<Self, HalError> {
        let w = words.next()?;
        check_reserved(w, 0xFFFF)?;
        Ok(Self { count: w as u16 })
    }
}

/// Clears a spike counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SpikeCounterReset;

impl Container for SpikeCounterReset {
    type Coord = SpikeCounterOnDLS;
    const KIND: ContainerKind = ContainerKind::SpikeCounterReset;
}

impl Writable for SpikeCounterReset {
    fn visit_write(&self, coord: &SpikeCounterOnDLS, v: &mut dyn WriteVisitor) {
        v.word(SpikeCounterValue::address(*coord), 0);
    }
}

/// Causal correlation accumulator of one synapse (read-only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CorrelationReading {
    pub causal: CorrelationValue,
}

impl Container for CorrelationReading {
    type Coord = CorrelationOnChip;
    const KIND: ContainerKind = ContainerKind::CorrelationReading;
}

impl Readable for CorrelationReading {
    fn visit_read(coord: &CorrelationOnChip, v: &mut dyn ReadVisitor) {
        v.address(address::correlation(coord.to_enum() as u32));
    }

    fn decode_from(_: &CorrelationOnChip, words: &mut WordReader<'_>) -> Result<Self, HalError> {
        let w = words.next()?;
        check_reserved(w, 0xFF)?;
        Ok(Self {
            causal: CorrelationValue(w as u8),
        })
    }
}

/// Clears one correlation accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CorrelationReset;

impl Container for CorrelationReset {
    type Coord = CorrelationOnChip;
    const KIND: ContainerKind = ContainerKind::CorrelationReset;
}

impl Writable for CorrelationReset {
    fn visit_write(&self, coord: &CorrelationOnChip, v: &mut dyn WriteVisitor) {
        v.word(address::correlation(coord.to_enum() as u32), 0);
    }
}

/// One 32-bit SRAM word of a PPU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PPUMemoryWord(pub u32);

impl PPUMemoryWord {
    pub fn address(coord: PPUMemoryWordOnDLS) -> u32 {
        address::ppu_memory(coord.ppu.value() as u32, coord.word.value() as u32)
    }
}

impl Container for PPUMemoryWord {
    type Coord = PPUMemoryWordOnDLS;
    const KIND: ContainerKind = ContainerKind::PPUMemoryWord;
}

impl Writable for PPUMemoryWord {
    fn visit_write(&self, coord: &PPUMemoryWordOnDLS, v: &mut dyn WriteVisitor) {
        v.word(Self::address(*coord), self.0);
    }
}

impl Readable for PPUMemoryWord {
    fn visit_read(coord: &PPUMemoryWordOnDLS, v: &mut dyn ReadVisitor) {
        v.address(Self::address(*coord));
    }

    fn decode_from(_: &PPUMemoryWordOnDLS, words: &mut WordReader<'_>) -> Result<Self, HalError> {
        Ok(PPUMemoryWord(words.next()?))
    }
}

/// Contiguous SRAM span; its length must match the coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PPUMemoryBlock {
    pub words: Vec<PPUMemoryWord>,
}

impl PPUMemoryBlock {
    pub fn from_words(words: impl IntoIterator<Item = u32>) -> Self {
        Self {
            words: words.into_iter().map(PPUMemoryWord).collect(),
        }
    }
}

impl Container for PPUMemoryBlock {
    type Coord = PPUMemoryBlockOnDLS;
    const KIND: ContainerKind = ContainerKind::PPUMemoryBlock;
}

impl Writable for PPUMemoryBlock {
    fn visit_write(&self, coord: &PPUMemoryBlockOnDLS, v: &mut dyn WriteVisitor) {
        debug_assert_eq!(self.words.len(), coord.len());
        for (word, c) in self.words.iter().zip(coord.words()) {
            word.visit_write(&c, v);
        }
    }
}

impl Readable for PPUMemoryBlock {
    fn visit_read(coord: &PPUMemoryBlockOnDLS, v: &mut dyn ReadVisitor) {
        for c in coord.words() {
            PPUMemoryWord::visit_read(&c, v);
        }
    }

    fn decode_from(coord: &PPUMemoryBlockOnDLS, words: &mut WordReader<'_>) -> Result<Self, HalError> {
        let words = coord
            .words()
            .map(|c| PPUMemoryWord::decode_from(&c, words))
            .collect::<Result<_, _>>()?;
        Ok(Self { words })
    }
}

/// Spike event injected into a synapse row: `label[5:0] row[16:8]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpikePack {
    pub row: SynapseDriverOnDLS,
    pub label: SynapseLabel,
}

impl SpikePack {
    pub const MASK: u32 = 0x0001_FF3F;

    pub fn new(row: SynapseDriverOnDLS, label: SynapseLabel) -> Self {
        Self { row, label }
    }

    pub fn to_word(self) -> u32 {
        (self.row.value() as u32) << 8 | self.label.0 as u32
    }

    pub fn from_word_masked(word: u32) -> Self {
        Self {
            row: SynapseDriverOnDLS::new((word >> 8 & 0x1FF) as usize).expect("9-bit row"),
            label: SynapseLabel((word & 0x3F) as u8),
        }
    }
}

impl Container for SpikePack {
    type Coord = SpikePackToChipOnDLS;
    const KIND: ContainerKind = ContainerKind::SpikePack;
}

impl Writable for SpikePack {
    fn visit_write(&self, _: &SpikePackToChipOnDLS, v: &mut dyn WriteVisitor) {
        v.word(address::SPIKE_INJECTION, self.to_word());
    }
}

/// Synapse driver polarity: events on an inhibitory row lower the membrane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SynapseDriverConfig {
    pub inhibitory: bool,
}

impl SynapseDriverConfig {
    pub fn address(coord: SynapseDriverOnDLS) -> u32 {
        address::SYNAPSE_DRIVER_BASE + coord.value() as u32
    }
}

impl Container for SynapseDriverConfig {
    type Coord = SynapseDriverOnDLS;
    const KIND: ContainerKind = ContainerKind::SynapseDriverConfig;
}

impl Writable for SynapseDriverConfig {
    fn visit_write(&self, coord: &SynapseDriverOnDLS, v: &mut dyn WriteVisitor) {
        v.word(Self::address(*coord), self.inhibitory as u32);
    }
}

impl Readable for SynapseDriverConfig {
    fn visit_read(coord: &SynapseDriverOnDLS, v: &mut dyn ReadVisitor) {
        v.address(Self::address(*coord));
    }

    fn decode_from(_: &SynapseDriverOnDLS, words: &mut WordReader<'_>) -> Result<Self, HalError> {
        let w = words.next()?;
        check_reserved(w, 1)?;
        Ok(Self { inhibitory: w != 0 })
    }
}

/// On-chip routing of a neuron's spikes back into a synapse row:
/// `label[5:0] row[16:8] enable[31]`. Delivered one tick after the spike.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NeuronEventOutput {
    pub enable: bool,
    pub row: SynapseDriverOnDLS,
    pub label: SynapseLabel,
}

impl Default for NeuronEventOutput {
    fn default() -> Self {
        Self {
            enable: false,
            row: SynapseDriverOnDLS::new(0).expect("row 0"),
            label: SynapseLabel(0),
        }
    }
}

impl NeuronEventOutput {
    pub const MASK: u32 = 0x8001_FF3F;

    pub fn to_word(self) -> u32 {
        (self.enable as u32) << 31 | SpikePack::new(self.row, self.label).to_word()
    }

    pub fn from_word_masked(word: u32) -> Self {
        let pack = SpikePack::from_word_masked(word);
        Self {
            enable: word >> 31 != 0,
            row: pack.row,
            label: pack.label,
        }
    }

    pub fn address(coord: NeuronEventOutputOnDLS) -> u32 {
        address::NEURON_EVENT_OUTPUT_BASE + coord.value() as u32
    }
}

impl Container for NeuronEventOutput {
    type Coord = NeuronEventOutputOnDLS;
    const KIND: ContainerKind = ContainerKind::NeuronEventOutput;
}

impl Writable for NeuronEventOutput {
    fn visit_write(&self, coord: &NeuronEventOutputOnDLS, v: &mut dyn WriteVisitor) {
        v.word(Self::address(*coord), self.to_word());
    }
}

impl Readable for NeuronEventOutput {
    fn visit_read(coord: &NeuronEventOutputOnDLS, v: &mut dyn ReadVisitor) {
        v.address(Self::address(*coord));
    }

    fn decode_from(_: &NeuronEventOutputOnDLS, words: &mut WordReader<'_>) -> Result<Self, HalError> {
        let w = words.next()?;
        check_reserved(w, Self::MASK)?;
        Ok(Self::from_word_masked(w))
    }
}

// ---------------------------------------------------------------------------
// Kind-erased containers

macro_rules! container_kinds {
    (
        rw: [$($rw:ident),*],
        ro: [$($ro:ident),*],
        wo: [$($wo:ident),*] $(,)?
    ) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum ContainerKind {
            $($rw,)* $($ro,)* $($wo,)*
        }

        impl ContainerKind {
            pub fn name(self) -> &'static str {
                match self {
                    $(ContainerKind::$rw => stringify!($rw),)*
                    $(ContainerKind::$ro => stringify!($ro),)*
                    $(ContainerKind::$wo => stringify!($wo),)*
                }
            }

            pub fn is_readable(self) -> bool {
                !matches!(self, $(ContainerKind::$wo)|*)
            }

            pub fn is_writable(self) -> bool {
                !matches!(self, $(ContainerKind::$ro)|*)
            }

            /// Register addresses read for this kind at `coord`.
            pub fn read_addresses(self, coord: AnyCoord) -> Result<Vec<u32>, HalError> {
                match (self, coord) {
                    $((ContainerKind::$rw, c) => Ok(read_addresses::<$rw>(&coord_of::<$rw>(self, c)?)),)*
                    $((ContainerKind::$ro, c) => Ok(read_addresses::<$ro>(&coord_of::<$ro>(self, c)?)),)*
                    _ => Err(HalError::NotReadable(self)),
                }
            }

            pub fn decode(self, coord: AnyCoord, words: &[u32]) -> Result<AnyContainer, HalError> {
                match self {
                    $(ContainerKind::$rw => Ok(AnyContainer::$rw(decode::<$rw>(&coord_of::<$rw>(self, coord)?, words)?)),)*
                    $(ContainerKind::$ro => Ok(AnyContainer::$ro(decode::<$ro>(&coord_of::<$ro>(self, coord)?, words)?)),)*
                    _ => Err(HalError::NotReadable(self)),
                }
            }
        }

        /// A container of any kind.
        #[derive(Debug, Clone, PartialEq)]
        pub enum AnyContainer {
            $($rw($rw),)* $($ro($ro),)* $($wo($wo),)*
        }

        impl AnyContainer {
            pub fn kind(&self) -> ContainerKind {
                match self {
                    $(AnyContainer::$rw(_) => ContainerKind::$rw,)*
                    $(AnyContainer::$ro(_) => ContainerKind::$ro,)*
                    $(AnyContainer::$wo(_) => ContainerKind::$wo,)*
                }
            }

            /// Register image at `coord`; fails if the coordinate kind does not match.
            pub fn register_image(&self, coord: AnyCoord) -> Result<Vec<(u32, u32)>, HalError> {
                match self {
                    $(AnyContainer::$rw(c) => Ok(register_image(c, &coord_of::<$rw>(self.kind(), coord)?)),)*
                    $(AnyContainer::$wo(c) => Ok(register_image(c, &coord_of::<$wo>(self.kind(), coord)?)),)*
                    _ => Err(HalError::NotWritable(self.kind())),
                }
            }

            pub fn encode_write(&self, coord: AnyCoord, backend: Backend) -> Result<Vec<BusCommand>, HalError> {
                match self {
                    $(AnyContainer::$rw(c) => Ok(encode_write(c, &coord_of::<$rw>(self.kind(), coord)?, backend)),)*
                    $(AnyContainer::$wo(c) => Ok(encode_write(c, &coord_of::<$wo>(self.kind(), coord)?, backend)),)*
                    _ => Err(HalError::NotWritable(self.kind())),
                }
            }
        }

        $(
            impl From<$rw> for AnyContainer {
                fn from(c: $rw) -> Self { AnyContainer::$rw(c) }
            }
        )*
        $(
            impl From<$ro> for AnyContainer {
                fn from(c: $ro) -> Self { AnyContainer::$ro(c) }
            }
        )*
        $(
            impl From<$wo> for AnyContainer {
                fn from(c: $wo) -> Self { AnyContainer::$wo(c) }
            }
        )*
    };
}

container_kinds!(
    rw: [
        NeuronConfig,
        Synapse,
        SynapseRowValues,
        TimerValue,
        PPUControl,
        PPUMemoryWord,
        PPUMemoryBlock,
        SynapseDriverConfig,
        NeuronEventOutput
    ],
    ro: [SpikeCounterValue, CorrelationReading],
    wo: [
        TimerConfig,
        PPUDebugRequest,
        SpikeCounterReset,
        CorrelationReset,
        SpikePack
    ],
);

impl fmt::Display for ContainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Recover the typed coordinate a container kind expects.
pub trait FromAnyCoord: Sized {
    fn from_any(coord: AnyCoord) -> Option<Self>;
}

macro_rules! from_any_coord {
    ($($t:ident),*) => {
        $(
            impl FromAnyCoord for $t {
                fn from_any(coord: AnyCoord) -> Option<Self> {
                    match coord {
                        AnyCoord::$t(c) => Some(c),
                        _ => None,
                    }
                }
            }
        )*
    };
}

from_any_coord!(
    NeuronConfigOnDLS,
    SynapseOnChip,
    SynapseRowOnChip,
    TimerOnDLS,
    PPUControlOnDLS,
    PPUMemoryWordOnDLS,
    PPUMemoryBlockOnDLS,
    SynapseDriverOnDLS,
    NeuronEventOutputOnDLS,
    SpikeCounterOnDLS,
    CorrelationOnChip,
    SpikePackToChipOnDLS
);

fn coord_of<C>(kind: ContainerKind, coord: AnyCoord) -> Result<C::Coord, HalError>
where
    C: Container,
    C::Coord: FromAnyCoord,
{
    C::Coord::from_any(coord).ok_or(HalError::KindMismatch {
        container: kind,
        coord: coord.kind(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coord::{PPUMemoryWordOnPPU, PPUOnDLS};

    fn syn(weight: u8, label: u8) -> Synapse {
        Synapse::new(SynapseWeight::new(weight).unwrap(), SynapseLabel::new(label).unwrap())
    }

    #[test]
    fn synapse_omnibus_image() {
        let coord = SynapseOnChip::from_enum(0).unwrap();
        assert_eq!(
            encode_write(&syn(42, 0), &coord, Backend::Omnibus),
            vec![BusCommand::OmnibusWrite {
                address: 0x0004_0000,
                word: 0x0000_002A
            }]
        );
        assert_eq!(decode::<Synapse>(&coord, &[0x2A]).unwrap(), syn(42, 0));
        assert_eq!(decode::<Synapse>(&coord, &[0]).unwrap(), Synapse::default());
        // last synapse of the chip
        let last = SynapseOnChip::from_enum(131_071).unwrap();
        assert_eq!(read_addresses::<Synapse>(&last), vec![0x0005_FFFF]);
    }

    #[test]
    fn neuron_config_image() {
        let coord = NeuronConfigOnDLS::new(0).unwrap();
        let image = register_image(&NeuronConfig::default(), &coord);
        assert_eq!(image, vec![(0x0003_0000, 0), (0x0003_0001, 0)]);
        let last = NeuronConfigOnDLS::new(511).unwrap();
        assert_eq!(read_addresses::<NeuronConfig>(&last), vec![0x0003_03FE, 0x0003_03FF]);
        assert_eq!(
            decode::<NeuronConfig>(&coord, &[0, 0]).unwrap(),
            NeuronConfig::default()
        );
    }

    #[test]
    fn timer_reset_over_jtag_is_three_commands() {
        let cmds = encode_write(&TimerConfig { reset: true }, &TimerOnDLS::default(), Backend::Jtag);
        assert_eq!(
            cmds,
            vec![
                BusCommand::Jtag(JtagCommand::SelectAddress(0x0002_0002)),
                BusCommand::Jtag(JtagCommand::ShiftIn(1)),
                BusCommand::Jtag(JtagCommand::CommitWrite),
            ]
        );
    }

    #[test]
    fn read_address_examples() {
        assert_eq!(
            read_addresses::<SpikeCounterValue>(&SpikeCounterOnDLS::new(3).unwrap()),
            vec![0x0006_0003]
        );
        assert_eq!(
            read_addresses::<TimerValue>(&TimerOnDLS::default()),
            vec![0x0002_0000, 0x0002_0001]
        );
        let t = decode::<TimerValue>(&TimerOnDLS::default(), &[0xDEAD_BEEF, 0x1]).unwrap();
        assert_eq!(t.0, 0x1_DEAD_BEEF);
    }

    #[test]
    fn spike_pack_word() {
        let p = SpikePack::new(SynapseDriverOnDLS::new(7).unwrap(), SynapseLabel::new(5).unwrap());
        assert_eq!(
            register_image(&p, &SpikePackToChipOnDLS::default()),
            vec![(0x0007_0000, 0x0705)]
        );
        let top = SpikePack::new(SynapseDriverOnDLS::new(511).unwrap(), SynapseLabel::new(63).unwrap());
        assert_eq!(SpikePack::from_word_masked(top.to_word()), top);
    }

    #[test]
    fn decode_errors() {
        let coord = SynapseOnChip::from_enum(5).unwrap();
        assert_eq!(
            decode::<Synapse>(&coord, &[]),
            Err(HalError::LengthMismatch { expected: 1, actual: 0 })
        );
        assert!(matches!(
            decode::<Synapse>(&coord, &[0x40]),
            Err(HalError::ValueOutOfRange { .. })
        ));
        assert!(SynapseWeight::new(64).is_err());
        assert!(SynapseLabel::new(63).is_ok());
    }

    #[test]
    fn composite_visits_in_order() {
        let row = SynapseRowOnChip::new(257).unwrap();
        let addrs = read_addresses::<SynapseRowValues>(&row);
        assert_eq!(addrs.len(), 256);
        assert_eq!(addrs[0], 0x0004_0000 + 65_536 + 256);
        assert!(addrs.windows(2).all(|w| w[1] == w[0] + 1));

        let block =
            PPUMemoryBlockOnDLS::new(PPUOnDLS::new(1).unwrap(), PPUMemoryWordOnPPU::new(16).unwrap(), 3).unwrap();
        let b = PPUMemoryBlock::from_words([1, 2, 3]);
        assert_eq!(register_image(&b, &block), vec![(0x1010, 1), (0x1011, 2), (0x1012, 3)]);
    }

    #[test]
    fn dynamic_kind_checks() {
        let s: AnyContainer = syn(1, 2).into();
        let bad = s.encode_write(TimerOnDLS::default().into(), Backend::Omnibus);
        assert_eq!(
            bad,
            Err(HalError::KindMismatch {
                container: ContainerKind::Synapse,
                coord: CoordKind::TimerOnDLS
            })
        );
        assert_eq!(
            ContainerKind::TimerConfig.read_addresses(TimerOnDLS::default().into()),
            Err(HalError::NotReadable(ContainerKind::TimerConfig))
        );
        let read: AnyContainer = SpikeCounterValue { count: 1 }.into();
        assert!(matches!(
            read.encode_write(SpikeCounterOnDLS::new(0).unwrap().into(), Backend::Omnibus),
            Err(HalError::NotWritable(_))
        ));
    }

    #[test]
    fn field_masks_do_not_overlap() {
        let nc = NeuronConfig {
            enable_leak: true,
            refractory_time: RefractoryTime::new(255).unwrap(),
            leak_potential: NeuronPotential::new(255).unwrap(),
            threshold: NeuronPotential::new(255).unwrap(),
            reset_potential: NeuronPotential::new(255).unwrap(),
            enable_spike_output: true,
        };
        assert_eq!(nc.to_words(), [NeuronConfig::WORD0_MASK, NeuronConfig::WORD1_MASK]);
        // each single-field config sets disjoint bits
        let fields = [
            NeuronConfig {
                enable_leak: true,
                ..Default::default()
            },
            NeuronConfig {
                leak_potential: NeuronPotential::new(255).unwrap(),
                ..Default::default()
            },
            NeuronConfig {
                threshold: NeuronPotential::new(255).unwrap(),
                ..Default::default()
            },
            NeuronConfig {
                reset_potential: NeuronPotential::new(255).unwrap(),
                ..Default::default()
            },
            NeuronConfig {
                enable_spike_output: true,
                ..Default::default()
            },
        ];
        let mut seen = 0u32;
        for f in fields {
            let w = f.to_words()[0];
            assert_eq!(seen & w, 0);
            seen |= w;
        }
        assert_eq!(seen, NeuronConfig::WORD0_MASK);
        assert_eq!(syn(63, 0).to_word() & syn(0, 63).to_word(), 0);
    }
}
