//! Deterministic simulator of the chip and its FPGA command sequencer.
//!
//! Neurons are leaky integrate-and-fire with Q8 fixed-point membranes. One
//! tick advances the timer, delivers routed on-chip events, updates neuron
//! dynamics, decays the presynaptic traces and finally lets every PPU out of
//! reset execute a fixed number of instructions.

use std::fmt;

use thiserror::Error;

use crate::hal::address as addr;
use crate::hal::{JtagCommand, NeuronConfig, NeuronEventOutput, SpikePack, Synapse};
use crate::playback::{Command, ExecutionResult, Executor, PlaybackProgram, PpuFault, Response, SpikeRecord};
use crate::ppu::{ChipPort, CoreStatus, PpuCore, StepEvent, VECTOR_LANES};

const N_NEURONS: usize = addr::N_NEURONS as usize;
const N_ROWS: usize = addr::N_SYNAPSE_DRIVERS as usize;
const N_SYNAPSES: usize = addr::N_SYNAPSES as usize;
const N_PPUS: usize = addr::N_PPUS as usize;
const COLUMNS: usize = 256;
const SRAM_WORDS_PER_PPU: u32 = addr::PPU_MEMORY_STRIDE;

const Q8: i32 = 256;
const V_MIN: i32 = -256 * Q8;
const V_MAX: i32 = 512 * Q8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unmapped address 0x{0:08x}")]
    UnmappedAddress(u32),
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
}

/// A failed run together with everything recorded up to the failing command.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{error} (after {executed} commands)")]
pub struct RunError {
    pub error: SimError,
    pub executed: usize,
    pub partial: ExecutionResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub ppu_instructions_per_tick: u32,
    /// Fraction of the distance to the leak potential kept per tick.
    pub leak_factor: f64,
    /// Membrane deflection per unit of synaptic weight.
    pub synaptic_scale: f64,
    /// Fraction of a presynaptic trace kept per tick.
    pub trace_decay: f64,
    /// Trace added per presynaptic event; its integer part feeds the correlation sensors.
    pub trace_increment: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            ppu_instructions_per_tick: 2,
            leak_factor: 0.9,
            synaptic_scale: 1.0,
            trace_decay: 0.9,
            trace_increment: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(SimError::InvalidConfig(format!("{name} = {v} not in (0, 1]")))
            }
        };
        unit("leak_factor", self.leak_factor)?;
        unit("trace_decay", self.trace_decay)?;
        if self.ppu_instructions_per_tick == 0 {
            return Err(SimError::InvalidConfig("ppu_instructions_per_tick must be >= 1".into()));
        }
        for (name, v) in [
            ("synaptic_scale", self.synaptic_scale),
            ("trace_increment", self.trace_increment),
        ] {
            if !(v > 0.0 && v <= 64.0) {
                return Err(SimError::InvalidConfig(format!("{name} = {v} not in (0, 64]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NeuronState {
    /// Q8 fixed point, in units of the 8-bit potential registers.
    pub v: i32,
    pub refractory: u32,
}

impl NeuronState {
    pub fn potential(&self) -> f64 {
        self.v as f64 / Q8 as f64
    }
}

/// Everything outside the PPU cores: registers, arrays, dynamics.
#[derive(Clone, PartialEq)]
struct Fabric {
    timer: u64,
    neuron_words: Vec<[u32; 2]>,
    neuron_config: Vec<NeuronConfig>,
    neurons: Vec<NeuronState>,
    weights: Vec<u8>,
    labels: Vec<u8>,
    correlation: Vec<u8>,
    /// Q8 presynaptic trace per synapse row.
    traces: Vec<u32>,
    counters: Vec<u16>,
    inhibitory: Vec<bool>,
    event_output: Vec<NeuronEventOutput>,
    pending_events: Vec<SpikePack>,
    ppu_control: [u32; N_PPUS],
    ppu_running: [bool; N_PPUS],
    debug_requests: [bool; N_PPUS],
    spikes: Vec<SpikeRecord>,
    leak_q16: i64,
    decay_q16: u64,
    scale_q8: i32,
    trace_inc_q8: u32,
}

impl Fabric {
    fn new(config: &SimConfig) -> Self {
        let q16 = |f: f64| (f * 65536.0).round() as i64;
        Self {
            timer: 0,
            neuron_words: vec![[0; 2]; N_NEURONS],
            neuron_config: vec![NeuronConfig::default(); N_NEURONS],
            neurons: vec![NeuronState::default(); N_NEURONS],
            weights: vec![0; N_SYNAPSES],
            labels: vec![0; N_SYNAPSES],
            correlation: vec![0; N_SYNAPSES],
            traces: vec![0; N_ROWS],
            counters: vec![0; N_NEURONS],
            inhibitory: vec![false; N_ROWS],
            event_output: vec![NeuronEventOutput::default(); N_NEURONS],
            pending_events: Vec::new(),
            ppu_control: [0; N_PPUS],
            ppu_running: [false; N_PPUS],
            debug_requests: [false; N_PPUS],
            spikes: Vec::new(),
            leak_q16: q16(config.leak_factor),
            decay_q16: q16(config.trace_decay) as u64,
            scale_q8: (config.synaptic_scale * Q8 as f64).round() as i32,
            trace_inc_q8: (config.trace_increment * Q8 as f64).round() as u32,
        }
    }

    fn deliver_spike(&mut self, pack: SpikePack) {
        let row = pack.row.value();
        let label = pack.label.value();
        let hemisphere = row / COLUMNS;
        let base = row * COLUMNS;
        let sign = if self.inhibitory[row] { -1 } else { 1 };
        for col in 0..COLUMNS {
            let w = self.weights[base + col];
            if w != 0 && self.labels[base + col] == label {
                let n = &mut self.neurons[hemisphere * COLUMNS + col];
                n.v = (n.v + sign * w as i32 * self.scale_q8).clamp(V_MIN, V_MAX);
            }
        }
        self.traces[row] = self.traces[row].saturating_add(self.trace_inc_q8);
    }

    fn fire(&mut self, n: usize) {
        let cfg = self.neuron_config[n];
        let st = &mut self.neurons[n];
        st.v = (cfg.reset_potential.value() as i32) * Q8;
        st.refractory = cfg.refractory_time.value() as u32;
        self.counters[n] = self.counters[n].saturating_add(1);
        self.spikes.push(SpikeRecord {
            time: self.timer,
            neuron: n as u16,
        });
        let hemisphere = n / COLUMNS;
        let col = n % COLUMNS;
        for row in hemisphere * COLUMNS..(hemisphere + 1) * COLUMNS {
            let t = (self.traces[row] + Q8 as u32 / 2) >> 8;
            if t > 0 {
                let c = &mut self.correlation[row * COLUMNS + col];
                *c = (*c as u32 + t).min(255) as u8;
            }
        }
        let route = self.event_output[n];
        if route.enable {
            self.pending_events.push(SpikePack::new(route.row, route.label));
        }
    }

    fn dynamics(&mut self) {
        self.timer += 1;
        for pack in std::mem::take(&mut self.pending_events) {
            self.deliver_spike(pack);
        }
        for n in 0..N_NEURONS {
            let cfg = self.neuron_config[n];
            let st = &mut self.neurons[n];
            if st.refractory > 0 {
                st.refractory -= 1;
                st.v = cfg.reset_potential.value() as i32 * Q8;
                continue;
            }
            if cfg.enable_leak {
                let leak = cfg.leak_potential.value() as i64 * Q8 as i64;
                let d = st.v as i64 - leak;
                st.v = (leak + ((d * self.leak_q16 + (1 << 15)) >> 16)) as i32;
            }
            if cfg.enable_spike_output && st.v >= cfg.threshold.value() as i32 * Q8 {
                self.fire(n);
            }
        }
        for t in self.traces.iter_mut().filter(|t| **t != 0) {
            *t = ((*t as u64 * self.decay_q16) >> 16) as u32;
        }
    }

    fn read(&self, a: u32) -> Result<u32, SimError> {
        let off = |base: u32, n: usize| (a >= base && a < base + n as u32).then(|| (a - base) as usize);
        if let Some(p) = off(addr::PPU_CONTROL_BASE, N_PPUS) {
            let running = (self.ppu_running[p] as u32) << 1;
            return Ok(self.ppu_control[p] & 1 | running);
        }
        if off(addr::PPU_DEBUG_REQUEST_BASE, N_PPUS).is_some() || a == addr::TIMER_RESET || a == addr::SPIKE_INJECTION {
            return Ok(0);
        }
        if a == addr::TIMER_LOW {
            return Ok(self.timer as u32);
        }
        if a == addr::TIMER_HIGH {
            return Ok((self.timer >> 32) as u32);
        }
        if let Some(i) = off(addr::NEURON_CONFIG_BASE, N_NEURONS * 2) {
            return Ok(self.neuron_words[i / 2][i % 2]);
        }
        if let Some(i) = off(addr::SYNAPSE_BASE, N_SYNAPSES) {
            return Ok(self.weights[i] as u32 | (self.labels[i] as u32) << 8);
        }
        if let Some(n) = off(addr::SPIKE_COUNTER_BASE, N_NEURONS) {
            return Ok(self.counters[n] as u32);
        }
        if let Some(i) = off(addr::CORRELATION_BASE, N_SYNAPSES) {
            return Ok(self.correlation[i] as u32);
        }
        if let Some(d) = off(addr::SYNAPSE_DRIVER_BASE, N_ROWS) {
            return Ok(self.inhibitory[d] as u32);
        }
        if let Some(n) = off(addr::NEURON_EVENT_OUTPUT_BASE, N_NEURONS) {
            return Ok(self.event_output[n].to_word());
        }
        Err(SimError::UnmappedAddress(a))
    }

    fn write(&mut self, a: u32, w: u32) -> Result<(), SimError> {
        let off = |base: u32, n: usize| (a >= base && a < base + n as u32).then(|| (a - base) as usize);
        if let Some(p) = off(addr::PPU_CONTROL_BASE, N_PPUS) {
            self.ppu_control[p] = w & 1;
        } else if let Some(p) = off(addr::PPU_DEBUG_REQUEST_BASE, N_PPUS) {
            if w & 1 != 0 {
                self.debug_requests[p] = true;
            }
        } else if a == addr::TIMER_LOW {
            self.timer = self.timer & !0xFFFF_FFFF | w as u64;
        } else if a == addr::TIMER_HIGH {
            self.timer = self.timer & 0xFFFF_FFFF | (w as u64) << 32;
        } else if a == addr::TIMER_RESET {
            if w & 1 != 0 {
                self.timer = 0;
            }
        } else if let Some(i) = off(addr::NEURON_CONFIG_BASE, N_NEURONS * 2) {
            let n = i / 2;
            let mask = if i % 2 == 0 {
                NeuronConfig::WORD0_MASK
            } else {
                NeuronConfig::WORD1_MASK
            };
            self.neuron_words[n][i % 2] = w & mask;
            let [w0, w1] = self.neuron_words[n];
            self.neuron_config[n] = NeuronConfig::from_words_masked(w0, w1);
        } else if let Some(i) = off(addr::SYNAPSE_BASE, N_SYNAPSES) {
            let s = Synapse::from_word_masked(w);
            self.weights[i] = s.weight.value();
            self.labels[i] = s.label.value();
        } else if let Some(n) = off(addr::SPIKE_COUNTER_BASE, N_NEURONS) {
            self.counters[n] = 0;
        } else if a == addr::SPIKE_INJECTION {
            self.deliver_spike(SpikePack::from_word_masked(w));
        } else if let Some(i) = off(addr::CORRELATION_BASE, N_SYNAPSES) {
            self.correlation[i] = 0;
        } else if let Some(d) = off(addr::SYNAPSE_DRIVER_BASE, N_ROWS) {
            self.inhibitory[d] = w & 1 != 0;
        } else if let Some(n) = off(addr::NEURON_EVENT_OUTPUT_BASE, N_NEURONS) {
            self.event_output[n] = NeuronEventOutput::from_word_masked(w);
        } else {
            return Err(SimError::UnmappedAddress(a));
        }
        Ok(())
    }
}

/// The fabric as seen by PPU `hemisphere`.
struct Port<'a> {
    fabric: &'a mut Fabric,
    hemisphere: usize,
}

impl Port<'_> {
    fn lane_base(&self, row: usize, half: usize) -> usize {
        (self.hemisphere * COLUMNS + row) * COLUMNS + half * VECTOR_LANES
    }
}

impl ChipPort for Port<'_> {
    fn bus_read(&mut self, address: u32) -> Option<u32> {
        self.fabric.read(address).ok()
    }

    fn bus_write(&mut self, address: u32, word: u32) -> Option<()> {
        self.fabric.write(address, word).ok()
    }

    fn load_weights(&mut self, row: usize, half: usize, lanes: &mut [u8; VECTOR_LANES]) {
        let b = self.lane_base(row, half);
        lanes.copy_from_slice(&self.fabric.weights[b..b + VECTOR_LANES]);
    }

    fn store_weights(&mut self, row: usize, half: usize, lanes: &[u8; VECTOR_LANES]) {
        let b = self.lane_base(row, half);
        for (w, &l) in self.fabric.weights[b..b + VECTOR_LANES].iter_mut().zip(lanes) {
            *w = l.min(63);
        }
    }

    fn load_correlation(&mut self, row: usize, half: usize, reset: bool, lanes: &mut [u8; VECTOR_LANES]) {
        let b = self.lane_base(row, half);
        let span = &mut self.fabric.correlation[b..b + VECTOR_LANES];
        lanes.copy_from_slice(span);
        if reset {
            span.fill(0);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct JtagLatch {
    address: u32,
    data: u32,
}

/// Full simulated system state.
#[derive(Clone)]
pub struct ChipState {
    config: SimConfig,
    fabric: Fabric,
    cores: [PpuCore; N_PPUS],
    jtag: JtagLatch,
    faults: Vec<PpuFault>,
}

impl fmt::Debug for ChipState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChipState")
            .field("timer", &self.fabric.timer)
            .field("cores", &self.cores)
            .finish_non_exhaustive()
    }
}

/// Compares architectural state only; JTAG latches and undrained logs are ignored.
impl PartialEq for ChipState {
    fn eq(&self, other: &Self) -> bool {
        let strip = |f: &Fabric| Fabric {
            spikes: Vec::new(),
            ..f.clone()
        };
        self.config == other.config && self.cores == other.cores && strip(&self.fabric) == strip(&other.fabric)
    }
}

impl Default for ChipState {
    fn default() -> Self {
        Self::new(SimConfig::default()).expect("default config is valid")
    }
}

impl ChipState {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        Ok(Self {
            fabric: Fabric::new(&config),
            config,
            cores: [PpuCore::new(), PpuCore::new()],
            jtag: JtagLatch::default(),
            faults: Vec::new(),
        })
    }

    /// Power-on state with the same configuration.
    pub fn reset(&mut self) {
        *self = Self::new(self.config.clone()).expect("config validated at construction");
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn timer(&self) -> u64 {
        self.fabric.timer
    }

    pub fn core(&self, ppu: usize) -> &PpuCore {
        &self.cores[ppu]
    }

    /// Direct core access for debugging tools; bypasses the reset gate.
    pub fn core_mut(&mut self, ppu: usize) -> &mut PpuCore {
        &mut self.cores[ppu]
    }

    pub fn neuron(&self, n: usize) -> NeuronState {
        self.fabric.neurons[n]
    }

    pub fn set_neuron(&mut self, n: usize, state: NeuronState) {
        self.fabric.neurons[n] = state;
    }

    /// Weight by synapse enum (`hemisphere * 65536 + row * 256 + column`).
    pub fn weight(&self, synapse: usize) -> u8 {
        self.fabric.weights[synapse]
    }

    pub fn weights(&self) -> &[u8] {
        &self.fabric.weights
    }

    pub fn correlations(&self) -> &[u8] {
        &self.fabric.correlation
    }

    /// Preload a correlation sensor, e.g. to stage a learning-rule test.
    pub fn set_correlation(&mut self, synapse: usize, value: u8) {
        self.fabric.correlation[synapse] = value;
    }

    /// Preload a spike counter.
    pub fn set_spike_count(&mut self, n: usize, value: u16) {
        self.fabric.counters[n] = value;
    }

    pub fn trace(&self, row: usize) -> f64 {
        self.fabric.traces[row] as f64 / Q8 as f64
    }

    pub fn spike_count(&self, n: usize) -> u16 {
        self.fabric.counters[n]
    }

    /// Spikes recorded since the last drain.
    pub fn spike_log(&self) -> &[SpikeRecord] {
        &self.fabric.spikes
    }

    pub fn drain_spikes(&mut self) -> Vec<SpikeRecord> {
        std::mem::take(&mut self.fabric.spikes)
    }

    pub fn drain_faults(&mut self) -> Vec<PpuFault> {
        std::mem::take(&mut self.faults)
    }

    pub fn register_read(&mut self, address: u32) -> Result<u32, SimError> {
        if address < N_PPUS as u32 * SRAM_WORDS_PER_PPU {
            let p = (address / SRAM_WORDS_PER_PPU) as usize;
            return Ok(self.cores[p].sram_word((address % SRAM_WORDS_PER_PPU) as usize));
        }
        self.fabric.read(address)
    }

    pub fn register_write(&mut self, address: u32, word: u32) -> Result<(), SimError> {
        if address < N_PPUS as u32 * SRAM_WORDS_PER_PPU {
            let p = (address / SRAM_WORDS_PER_PPU) as usize;
            self.cores[p].set_sram_word((address % SRAM_WORDS_PER_PPU) as usize, word);
            return Ok(());
        }
        self.fabric.write(address, word)?;
        self.sync_cores();
        Ok(())
    }

    pub fn deliver_spike(&mut self, pack: SpikePack) {
        self.fabric.deliver_spike(pack);
    }

    /// Apply reset gates and pending debug requests to the cores.
    fn sync_cores(&mut self) {
        for p in 0..N_PPUS {
            let core = &mut self.cores[p];
            if std::mem::take(&mut self.fabric.debug_requests[p]) {
                core.request_debug();
            }
            let inhibit = self.fabric.ppu_control[p] & 1 != 0;
            match (inhibit, core.status) {
                (false, CoreStatus::Reset) => {}
                (false, _) => core.hold_reset(),
                (true, CoreStatus::Reset) => core.release_reset(),
                (true, _) => {}
            }
            self.fabric.ppu_running[p] = matches!(core.status, CoreStatus::Running);
        }
    }

    /// Advance one tick: dynamics first, then PPU instructions.
    pub fn tick(&mut self) {
        self.fabric.dynamics();
        for p in 0..N_PPUS {
            for _ in 0..self.config.ppu_instructions_per_tick {
                if matches!(self.cores[p].status, CoreStatus::Reset | CoreStatus::Halted) {
                    break;
                }
                let mut port = Port {
                    fabric: &mut self.fabric,
                    hemisphere: p,
                };
                if let StepEvent::Trapped { pc, cause } = self.cores[p].step(&mut port) {
                    if cause.is_fault() {
                        let (code, detail) = cause.to_code();
                        self.faults.push(PpuFault {
                            ppu: p as u8,
                            pc,
                            cause: code,
                            detail,
                        });
                    }
                }
                self.sync_cores();
            }
        }
    }

    pub fn run_until(&mut self, target: u64) {
        while self.fabric.timer < target {
            self.tick();
        }
    }

    fn execute_command(&mut self, command: &Command, responses: &mut Vec<Response>) -> Result<(), SimError> {
        use crate::hal::Backend;
        match *command {
            Command::Write {
                backend: Backend::Omnibus,
                address,
                payload,
            } => self.register_write(address, payload)?,
            Command::Write {
                backend: Backend::Jtag,
                address,
                payload,
            } => match JtagCommand::from_parts(address, payload) {
                Some(JtagCommand::SelectAddress(a)) => self.jtag.address = a,
                Some(JtagCommand::ShiftIn(d)) => self.jtag.data = d,
                Some(JtagCommand::CommitWrite) => self.register_write(self.jtag.address, self.jtag.data)?,
                Some(JtagCommand::Capture) => self.jtag.data = self.register_read(self.jtag.address)?,
                Some(JtagCommand::ShiftOut) | None => return Err(SimError::UnmappedAddress(address)),
            },
            Command::Read {
                backend,
                address,
                read_index,
            } => {
                let word = match backend {
                    Backend::Omnibus => self.register_read(address)?,
                    Backend::Jtag => self.jtag.data,
                };
                responses.push(Response { read_index, word });
            }
            Command::WaitUntil { target_time } => self.run_until(target_time),
            Command::Halt => {}
        }
        Ok(())
    }

    /// Execute a program to its HALT.
    pub fn run(&mut self, program: &PlaybackProgram) -> Result<ExecutionResult, RunError> {
        self.fabric.spikes.clear();
        self.faults.clear();
        let mut responses = Vec::with_capacity(program.read_count() as usize);
        for (i, command) in program.commands().iter().enumerate() {
            if let Err(error) = self.execute_command(command, &mut responses) {
                return Err(RunError {
                    error,
                    executed: i,
                    partial: self.finish(responses),
                });
            }
            if *command == Command::Halt {
                break;
            }
        }
        Ok(self.finish(responses))
    }

    fn finish(&mut self, responses: Vec<Response>) -> ExecutionResult {
        ExecutionResult {
            responses,
            spikes: self.drain_spikes(),
            final_timer: self.fabric.timer,
            ppu_faults: self.drain_faults(),
        }
    }
}

impl Executor for ChipState {
    type Error = RunError;

    fn execute(&mut self, program: &PlaybackProgram) -> Result<ExecutionResult, RunError> {
        self.run(program)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coord::*;
    use crate::hal::*;
    use crate::playback::PlaybackProgramBuilder;
    use std::sync::Arc;

    fn n(i: usize) -> NeuronConfigOnDLS {
        NeuronConfigOnDLS::new(i).unwrap()
    }

    fn firing_config(threshold: u8) -> NeuronConfig {
        NeuronConfig {
            enable_leak: true,
            enable_spike_output: true,
            threshold: NeuronPotential::new(threshold).unwrap(),
            refractory_time: RefractoryTime::new(2).unwrap(),
            ..Default::default()
        }
    }

    fn syn(h: usize, r: usize, c: usize) -> SynapseOnChip {
        SynapseOnChip::from_parts(h, r, c).unwrap()
    }

    fn synapse(w: u8, l: u8) -> Synapse {
        Synapse::new(SynapseWeight::new(w).unwrap(), SynapseLabel::new(l).unwrap())
    }

    fn pack(row: usize, label: u8) -> SpikePack {
        SpikePack::new(SynapseDriverOnDLS::new(row).unwrap(), SynapseLabel::new(label).unwrap())
    }

    #[test]
    fn halt_only_is_empty() {
        let mut chip = ChipState::default();
        let r = chip.run(&PlaybackProgramBuilder::new().done()).unwrap();
        assert!(r.responses.is_empty() && r.spikes.is_empty());
        assert_eq!(r.final_timer, 0);
    }

    #[test]
    fn timer_after_wait() {
        let mut chip = ChipState::default();
        let mut b = PlaybackProgramBuilder::new();
        b.write(TimerOnDLS::default(), &TimerConfig { reset: true });
        b.wait_until(1000);
        let t = b.read::<TimerValue>(TimerOnDLS::default());
        b.wait_until(10);
        let p = b.done();
        Executor::run(&mut chip, &p).unwrap();
        assert_eq!(t.get().unwrap().value(), 1000);
        assert_eq!(chip.timer(), 1000);
    }

    #[test]
    fn injected_event_deflects_matching_column_only() {
        let mut chip = ChipState::default();
        let mut b = PlaybackProgramBuilder::new();
        b.write(syn(0, 4, 10), &synapse(42, 3));
        b.write(syn(0, 4, 11), &synapse(42, 2));
        b.write(SpikePackToChipOnDLS::default(), &pack(4, 3));
        chip.run(&b.done()).unwrap();
        assert_eq!(chip.neuron(10).v, 42 * 256);
        assert_eq!(chip.neuron(11).v, 0);
        assert!(chip.trace(4) > 0.99);
    }

    #[test]
    fn silent_without_stimulus() {
        let mut chip = ChipState::default();
        let mut b = PlaybackProgramBuilder::new();
        for i in 0..4 {
            b.write(n(i), &firing_config(100));
        }
        b.wait_until(5000);
        assert!(chip.run(&b.done()).unwrap().spikes.is_empty());
    }

    #[test]
    fn spike_counts_and_correlation() {
        let mut chip = ChipState::default();
        let mut b = PlaybackProgramBuilder::new();
        b.write(n(300), &firing_config(30));
        // hemisphere 1, row 2 is driver 258
        b.write(syn(1, 2, 44), &synapse(63, 1));
        for t in 0..3u64 {
            b.wait_until(10 * t + 5);
            b.write(SpikePackToChipOnDLS::default(), &pack(258, 1));
        }
        b.wait_until(100);
        let count = b.read::<SpikeCounterValue>(SpikeCounterOnDLS::new(300).unwrap());
        let corr = b.read::<CorrelationReading>(CorrelationOnChip(syn(1, 2, 44)));
        let p = b.done();
        chip.run(&p).unwrap_or_else(|e| panic!("{e}"));
        let r = chip.run(&PlaybackProgramBuilder::new().done()).unwrap();
        assert!(r.spikes.is_empty());
        let mut fresh = ChipState::default();
        let r = fresh.run(&p).unwrap();
        p.set_result(Arc::new(r.clone()));
        assert_eq!(r.spikes.len(), 3);
        assert!(r.spikes.iter().all(|s| s.neuron == 300));
        assert_eq!(count.get().unwrap().count, 3);
        assert!(corr.get().unwrap().causal.value() >= 3);
    }

    #[test]
    fn unmapped_address_keeps_partial_result() {
        let mut chip = ChipState::default();
        let mut b = PlaybackProgramBuilder::new();
        b.wait_until(3);
        b.write_word(0x00FF_0000, 1);
        let err = chip.run(&b.done()).unwrap_err();
        assert_eq!(err.error, SimError::UnmappedAddress(0x00FF_0000));
        assert_eq!(err.executed, 1);
        assert_eq!(err.partial.final_timer, 3);
    }

    #[test]
    fn ppu_status_reads_sleeping_in_reset() {
        let mut chip = ChipState::default();
        let word = chip.register_read(addr::PPU_CONTROL_BASE).unwrap();
        assert_eq!(PPUControl::from_word(word).unwrap().status, PPUStatus::Sleeping);
    }

    #[test]
    fn recurrent_route_arrives_next_tick() {
        let mut chip = ChipState::default();
        let mut b = PlaybackProgramBuilder::new();
        b.write(n(0), &firing_config(10));
        b.write(syn(0, 0, 0), &synapse(20, 0));
        b.write(syn(0, 9, 1), &synapse(5, 7));
        b.write(
            NeuronEventOutputOnDLS::new(0).unwrap(),
            &NeuronEventOutput {
                enable: true,
                row: SynapseDriverOnDLS::new(9).unwrap(),
                label: SynapseLabel::new(7).unwrap(),
            },
        );
        b.write(SpikePackToChipOnDLS::default(), &pack(0, 0));
        b.wait_until(1);
        let p = b.done();
        let r = chip.run(&p).unwrap();
        assert_eq!(r.spikes, vec![SpikeRecord { time: 1, neuron: 0 }]);
        assert_eq!(chip.neuron(1).v, 0);
        chip.tick();
        assert_eq!(chip.neuron(1).v, 5 * 256);
    }
}
