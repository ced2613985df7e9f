//! Spike-based expectation maximisation on the simulated chip.
//!
//! Three cause neurons compete through mutual inhibition while Poisson
//! patterns arrive on twelve input channels. PPU 0 runs two plasticity
//! kernels under a deadline scheduler: homeostasis steers each neuron's
//! background weights towards a target rate, and the learning kernel moves
//! input weights up where the causal correlation crossed a threshold and down
//! elsewhere. After training each neuron answers to one pattern.

mod eval;
pub mod kernels;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::coord::{
    NeuronConfigOnDLS, NeuronEventOutputOnDLS, PPUControlOnDLS, SpikePackToChipOnDLS, SynapseDriverOnDLS,
    SynapseOnChip, TimerOnDLS,
};
use crate::hal::{
    address, NeuronConfig, NeuronEventOutput, NeuronPotential, PPUControl, PPUStatus, RefractoryTime, SpikePack,
    Synapse, SynapseDriverConfig, SynapseLabel, SynapseWeight, TimerConfig,
};
use crate::playback::{Executor, PlaybackProgram, PlaybackProgramBuilder, SpikeRecord, WordTicket};
use crate::simchip::SimConfig;
use crate::toolchain::{self, Diagnostic, LoadedSymbols, ObjectImage, ToolchainError};

pub use eval::{
    best_assignment, confusion, confusion_csv, evaluate, mean_rate, purity, rates_csv, weights_csv, winner, write_csv,
    wta_violation_fraction, Metrics,
};
pub use kernels::{homeostasis_reference, sem_reference, KernelParams};

pub(crate) const COLUMNS: u32 = 256;

/// Where the network lives on hemisphere 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_cause: u32,
    pub n_inputs: u32,
    pub first_neuron: u32,
    pub first_input_row: u32,
    pub exc_row: u32,
    pub inh_row: u32,
    pub first_wta_row: u32,
}

impl Layout {
    pub fn new(n_cause: u32, n_inputs: u32) -> Self {
        Self {
            n_cause,
            n_inputs,
            first_neuron: 0,
            first_input_row: 0,
            exc_row: n_inputs,
            inh_row: n_inputs + 1,
            first_wta_row: n_inputs + 2,
        }
    }

    /// Synapse enumeration index of `(row, column)` on hemisphere 0.
    pub fn synapse(&self, row: u32, column: u32) -> u32 {
        row * COLUMNS + column
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundShift {
    pub at: u64,
    /// Multiplier applied to the excitatory background rate from `at` on.
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsemConfig {
    pub n_cause: u32,
    pub n_inputs: u32,
    /// Per-tick spike probability of an active input channel.
    pub input_rate_high: f64,
    pub input_rate_low: f64,
    pub background_exc_rate: f64,
    pub background_inh_rate: f64,
    pub background_exc_weight: u8,
    pub background_inh_weight: u8,
    /// Initial input weights are drawn uniformly from this range.
    pub input_weight_init: (u8, u8),
    /// Spikes per homeostasis period.
    pub target_rate: u32,
    pub homeostasis_period: u32,
    pub learning_period: u32,
    pub theta: u8,
    pub eta_up: u8,
    pub eta_down: u8,
    pub wta_weight: u8,
    pub presentation_ticks: u64,
    pub leak_potential: u8,
    pub threshold: u8,
    pub reset_potential: u8,
    pub refractory_time: u8,
    pub seed: u64,
    pub duration: u64,
    /// Presentations starting in the last `eval_ticks` are scored.
    pub eval_ticks: u64,
    pub shift: Option<BackgroundShift>,
    /// Correlation sensor gain the parameters above were tuned for; see
    /// [`NsemConfig::sim_config`].
    pub correlation_gain: f64,
}

impl Default for NsemConfig {
    fn default() -> Self {
        Self {
            n_cause: 3,
            n_inputs: 12,
            input_rate_high: 0.05,
            input_rate_low: 0.005,
            background_exc_rate: 0.5,
            background_inh_rate: 0.8,
            background_exc_weight: 20,
            background_inh_weight: 20,
            input_weight_init: (10, 20),
            target_rate: 30,
            homeostasis_period: 10_000,
            learning_period: 2_000,
            theta: 16,
            eta_up: 1,
            eta_down: 1,
            wta_weight: 63,
            presentation_ticks: 1_000,
            leak_potential: 80,
            threshold: 130,
            reset_potential: 60,
            refractory_time: 2,
            seed: 1,
            duration: 600_000,
            eval_ticks: 120_000,
            shift: None,
            correlation_gain: 8.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum NsemError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("kernel assembly: {0}")]
    Assembly(#[from] Diagnostic),
    #[error(transparent)]
    Toolchain(#[from] ToolchainError),
    #[error("execution failed: {0}")]
    Executor(Box<dyn std::error::Error + Send + Sync>),
}

impl NsemConfig {
    /// Simulator settings matching this configuration. With unit gain the
    /// sparse input rates never lift a correlation reading to `theta`.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            trace_increment: self.correlation_gain,
            ..SimConfig::default()
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.n_cause, self.n_inputs)
    }

    pub fn n_patterns(&self) -> u32 {
        self.n_cause
    }

    pub fn kernel_params(&self) -> KernelParams {
        KernelParams {
            target_rate: self.target_rate,
            theta: self.theta,
            eta_up: self.eta_up,
            eta_down: self.eta_down,
            period_h: self.homeostasis_period,
            period_l: self.learning_period,
        }
    }

    /// Input channels of `pattern`; patterns split the inputs into disjoint blocks.
    pub fn pattern_channels(&self, pattern: u32) -> std::ops::Range<u32> {
        let per = self.n_inputs / self.n_patterns();
        pattern * per..(pattern + 1) * per
    }

    pub fn validate(&self) -> Result<(), NsemError> {
        let bad = |m: &str| Err(NsemError::InvalidConfig(m.to_string()));
        if self.n_cause == 0 || self.n_cause > 63 {
            return bad("n_cause must be in 1..=63");
        }
        if self.n_inputs == 0 || !self.n_inputs.is_multiple_of(self.n_cause) {
            return bad("n_inputs must be a positive multiple of n_cause");
        }
        if self.n_inputs + 2 + self.n_cause > COLUMNS || self.n_cause > crate::ppu::VECTOR_LANES as u32 {
            return bad("network does not fit one hemisphere");
        }
        if self.homeostasis_period == 0 || self.learning_period == 0 || self.presentation_ticks == 0 {
            return bad("periods must be positive");
        }
        let max = kernels::MAX_WEIGHT;
        if [
            self.background_exc_weight,
            self.background_inh_weight,
            self.wta_weight,
            self.input_weight_init.1,
        ]
        .iter()
        .any(|&w| w > max)
            || self.input_weight_init.0 > self.input_weight_init.1
        {
            return bad("weights must lie in [0, 63]");
        }
        for p in [
            self.input_rate_high,
            self.input_rate_low,
            self.background_exc_rate,
            self.background_inh_rate,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad("rates are per-tick probabilities");
            }
        }
        if !(self.correlation_gain > 0.0 && self.correlation_gain <= 64.0) {
            return bad("correlation_gain must be in (0, 64]");
        }
        if let Some(s) = self.shift {
            if !(s.factor >= 0.0 && self.background_exc_rate * s.factor <= 1.0) {
                return bad("shifted background rate must be a probability");
            }
        }
        Ok(())
    }
}

/// Everything needed to start the experiment.
#[derive(Debug, Clone)]
pub struct Network {
    pub init: PlaybackProgram,
    pub image: ObjectImage,
    pub symbols: LoadedSymbols,
    /// Synapses the init program configures.
    pub synapse_count: usize,
}

/// Full PPU program: scheduler main loop plus both kernels.
pub fn ppu_source(config: &NsemConfig) -> String {
    let layout = config.layout();
    format!(
        "{}{}{}{}",
        kernels::mainloop(),
        kernels::homeostasis(&layout),
        kernels::sem(&layout),
        kernels::data_section(&config.kernel_params())
    )
}

fn synapse_coord(layout: &Layout, row: u32, column: u32) -> SynapseOnChip {
    SynapseOnChip::from_parts(0, row as usize, (layout.first_neuron + column) as usize)
        .expect("row and column in range")
}

fn driver(row: u32) -> SynapseDriverOnDLS {
    SynapseDriverOnDLS::new(row as usize).expect("row below 512")
}

fn label(l: u32) -> SynapseLabel {
    SynapseLabel::new(l as u8).expect("label below 64")
}

pub fn build_network(config: &NsemConfig) -> Result<Network, NsemError> {
    config.validate()?;
    let layout = config.layout();
    let image = toolchain::assemble(&ppu_source(config))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut b = PlaybackProgramBuilder::new();
    let mut synapses = 0;
    let mut syn = |b: &mut PlaybackProgramBuilder, row: u32, col: u32, w: u8, l: u32| {
        b.write(
            synapse_coord(&layout, row, col),
            &Synapse::new(SynapseWeight::saturating(w as u64), label(l)),
        );
        synapses += 1;
    };

    let neuron = NeuronConfig {
        enable_leak: true,
        refractory_time: RefractoryTime::saturating(config.refractory_time as u64),
        leak_potential: NeuronPotential::saturating(config.leak_potential as u64),
        threshold: NeuronPotential::saturating(config.threshold as u64),
        reset_potential: NeuronPotential::saturating(config.reset_potential as u64),
        enable_spike_output: true,
    };
    for k in 0..config.n_cause {
        let n = (layout.first_neuron + k) as usize;
        b.write(NeuronConfigOnDLS::new(n).expect("neuron in range"), &neuron);
    }
    let (lo, hi) = config.input_weight_init;
    for i in 0..config.n_inputs {
        for k in 0..config.n_cause {
            syn(&mut b, layout.first_input_row + i, k, rng.gen_range(lo..=hi), 0);
        }
    }
    for k in 0..config.n_cause {
        syn(&mut b, layout.exc_row, k, config.background_exc_weight, k);
        syn(&mut b, layout.inh_row, k, config.background_inh_weight, k);
    }
    b.write(driver(layout.inh_row), &SynapseDriverConfig { inhibitory: true });
    for k in 0..config.n_cause {
        let row = layout.first_wta_row + k;
        b.write(driver(row), &SynapseDriverConfig { inhibitory: true });
        for j in (0..config.n_cause).filter(|&j| j != k) {
            syn(&mut b, row, j, config.wta_weight, 0);
        }
        let n = (layout.first_neuron + k) as usize;
        b.write(
            NeuronEventOutputOnDLS::new(n).expect("neuron in range"),
            &NeuronEventOutput {
                enable: true,
                row: driver(row),
                label: label(0),
            },
        );
    }

    let symbols = toolchain::load_into(&mut b, &image, 0)?;
    b.write(TimerOnDLS::default(), &TimerConfig { reset: true });
    b.write(
        PPUControlOnDLS::new(0).expect("ppu 0"),
        &PPUControl {
            inhibit_reset: true,
            status: PPUStatus::Running,
        },
    );
    Ok(Network {
        init: b.done(),
        image,
        symbols,
        synapse_count: synapses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputEvent {
    pub time: u64,
    pub pack: SpikePack,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSchedule {
    /// Sorted by time.
    pub events: Vec<InputEvent>,
    /// `(start tick, pattern)` of each presentation.
    pub presentations: Vec<(u64, u32)>,
}

impl InputSchedule {
    /// Playback commands injecting the events with `time` in `range`.
    pub fn append_range(&self, b: &mut PlaybackProgramBuilder, range: std::ops::Range<u64>) {
        let start = self.events.partition_point(|e| e.time < range.start);
        let mut now = None;
        for e in self.events[start..].iter().take_while(|e| e.time < range.end) {
            if now != Some(e.time) {
                b.wait_until(e.time);
                now = Some(e.time);
            }
            b.write(SpikePackToChipOnDLS::default(), &e.pack);
        }
    }

    pub fn to_program(&self) -> PlaybackProgram {
        let mut b = PlaybackProgramBuilder::new();
        self.append_range(&mut b, 0..u64::MAX);
        b.done()
    }
}

/// Poisson stimulus: back-to-back presentations, each pattern once per
/// shuffled block, with per-tick Bernoulli events on every channel and on the
/// background rows of every cause neuron.
pub fn generate_input(config: &NsemConfig, seed: u64) -> InputSchedule {
    let layout = config.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pres = config.duration.div_ceil(config.presentation_ticks);
    let mut presentations = Vec::with_capacity(n_pres as usize);
    let mut block: Vec<u32> = Vec::new();
    for p in 0..n_pres {
        if block.is_empty() {
            block = (0..config.n_patterns()).collect();
            for i in (1..block.len()).rev() {
                block.swap(i, rng.gen_range(0..=i));
            }
        }
        presentations.push((p * config.presentation_ticks, block.pop().expect("non-empty block")));
    }

    let pack = |row: u32, l: u32| SpikePack::new(driver(row), label(l));
    let mut events = Vec::new();
    for t in 0..config.duration {
        let pattern = presentations[(t / config.presentation_ticks) as usize].1;
        let active = config.pattern_channels(pattern);
        for i in 0..config.n_inputs {
            let p = if active.contains(&i) {
                config.input_rate_high
            } else {
                config.input_rate_low
            };
            if p > 0.0 && rng.gen_bool(p) {
                events.push(InputEvent {
                    time: t,
                    pack: pack(layout.first_input_row + i, 0),
                });
            }
        }
        let exc_rate = match config.shift {
            Some(s) if t >= s.at => config.background_exc_rate * s.factor,
            _ => config.background_exc_rate,
        };
        for k in 0..config.n_cause {
            if exc_rate > 0.0 && rng.gen_bool(exc_rate.min(1.0)) {
                events.push(InputEvent {
                    time: t,
                    pack: pack(layout.exc_row, k),
                });
            }
            if config.background_inh_rate > 0.0 && rng.gen_bool(config.background_inh_rate) {
                events.push(InputEvent {
                    time: t,
                    pack: pack(layout.inh_row, k),
                });
            }
        }
    }
    InputSchedule { events, presentations }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Presentation {
    pub start: u64,
    pub pattern: usize,
    /// Spikes of each cause neuron during the presentation.
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RateSample {
    pub period_end: u64,
    /// Spikes of each cause neuron in the homeostasis period ending here.
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightSnapshot {
    pub time: u64,
    /// `input[channel][neuron]`.
    pub input: Vec<Vec<u8>>,
    pub exc: Vec<u8>,
    pub inh: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentReport {
    pub n_cause: usize,
    pub n_patterns: usize,
    /// Cause-neuron spikes, neuron numbers relative to the first cause neuron.
    pub spikes: Vec<SpikeRecord>,
    pub presentations: Vec<Presentation>,
    pub rates: Vec<RateSample>,
    pub snapshots: Vec<WeightSnapshot>,
    pub eval_start: u64,
}

impl ExperimentReport {
    pub fn metrics(&self) -> Metrics {
        evaluate(self)
    }
}

struct SnapshotTickets {
    input: Vec<Vec<WordTicket>>,
    exc: Vec<WordTicket>,
    inh: Vec<WordTicket>,
}

fn read_snapshot(b: &mut PlaybackProgramBuilder, layout: &Layout) -> SnapshotTickets {
    let mut read = |row: u32, k: u32| b.read_word(address::synapse(layout.synapse(row, layout.first_neuron + k)));
    let input = (0..layout.n_inputs)
        .map(|i| {
            (0..layout.n_cause)
                .map(|k| read(layout.first_input_row + i, k))
                .collect()
        })
        .collect();
    let exc = (0..layout.n_cause).map(|k| read(layout.exc_row, k)).collect();
    let inh = (0..layout.n_cause).map(|k| read(layout.inh_row, k)).collect();
    SnapshotTickets { input, exc, inh }
}

fn collect_snapshot(t: &SnapshotTickets, time: u64) -> WeightSnapshot {
    let w = |x: &WordTicket| (x.get().expect("program executed") & 0x3F) as u8;
    WeightSnapshot {
        time,
        input: t.input.iter().map(|row| row.iter().map(w).collect()).collect(),
        exc: t.exc.iter().map(w).collect(),
        inh: t.inh.iter().map(w).collect(),
    }
}

fn exec<E: Executor>(executor: &mut E, program: &PlaybackProgram) -> Result<Vec<SpikeRecord>, NsemError> {
    let result = executor.run(program).map_err(|e| NsemError::Executor(Box::new(e)))?;
    Ok(result.spikes.clone())
}

/// Run the full experiment in chunks of one homeostasis period.
///
/// The executor must keep chip state between programs: a local simulator, or
/// a scheduling service where this user's jobs run back to back.
pub fn run_experiment<E: Executor>(config: &NsemConfig, executor: &mut E) -> Result<ExperimentReport, NsemError> {
    let network = build_network(config)?;
    let layout = config.layout();
    let input = generate_input(config, config.seed);
    let n = config.n_cause as usize;
    let cause = |s: &SpikeRecord| {
        let rel = (s.neuron as u32).wrapping_sub(layout.first_neuron);
        (rel < config.n_cause).then_some(SpikeRecord {
            time: s.time,
            neuron: rel as u16,
        })
    };

    let mut spikes: Vec<SpikeRecord> = exec(executor, &network.init)?.iter().filter_map(cause).collect();
    let mut snapshots = Vec::new();
    let chunk = config.homeostasis_period as u64;
    let mut start = 0;
    while start < config.duration {
        let end = (start + chunk).min(config.duration);
        let mut b = PlaybackProgramBuilder::new();
        input.append_range(&mut b, start..end);
        b.wait_until(end);
        let tickets = read_snapshot(&mut b, &layout);
        let program = b.done();
        spikes.extend(exec(executor, &program)?.iter().filter_map(cause));
        snapshots.push(collect_snapshot(&tickets, end));
        start = end;
    }
    spikes.sort_by_key(|s| (s.time, s.neuron));

    let mut presentations: Vec<Presentation> = input
        .presentations
        .iter()
        .map(|&(start, pattern)| Presentation {
            start,
            pattern: pattern as usize,
            counts: vec![0; n],
        })
        .collect();
    let mut rates: Vec<RateSample> = (0..config.duration.div_ceil(chunk))
        .map(|i| RateSample {
            period_end: ((i + 1) * chunk).min(config.duration),
            counts: vec![0; n],
        })
        .collect();
    for s in &spikes {
        if s.time >= config.duration {
            continue;
        }
        presentations[(s.time / config.presentation_ticks) as usize].counts[s.neuron as usize] += 1;
        rates[(s.time / chunk) as usize].counts[s.neuron as usize] += 1;
    }

    Ok(ExperimentReport {
        n_cause: n,
        n_patterns: config.n_patterns() as usize,
        spikes,
        presentations,
        rates,
        snapshots,
        eval_start: config.duration.saturating_sub(config.eval_ticks),
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ppu::CoreStatus;
    use crate::simchip::ChipState;

    fn params() -> KernelParams {
        NsemConfig::default().kernel_params()
    }

    /// Load `source` into PPU 0, release it and run until it halts.
    fn run_ppu(chip: &mut ChipState, source: &str) -> LoadedSymbols {
        let image = toolchain::assemble(source).unwrap();
        let mut b = PlaybackProgramBuilder::new();
        let symbols = toolchain::load_into(&mut b, &image, 0).unwrap();
        b.write(
            PPUControlOnDLS::new(0).unwrap(),
            &PPUControl {
                inhibit_reset: true,
                status: PPUStatus::Running,
            },
        );
        chip.run(&b.done()).unwrap();
        let start = chip.timer();
        while chip.core(0).status != CoreStatus::Halted {
            assert!(chip.timer() - start < 100_000, "kernel did not halt");
            chip.tick();
        }
        symbols
    }

    fn set_synapse(chip: &mut ChipState, index: u32, weight: u8, label: u8) {
        chip.register_write(address::synapse(index), weight as u32 | (label as u32) << 8)
            .unwrap();
    }

    fn synapse_word(chip: &mut ChipState, index: u32) -> (u8, u8) {
        let w = chip.register_read(address::synapse(index)).unwrap();
        ((w & 0x3F) as u8, (w >> 8 & 0x3F) as u8)
    }

    #[test]
    fn homeostasis_kernel_matches_rule() {
        let layout = Layout::new(5, 12);
        let p = params();
        let t = p.target_rate as u16;
        // (count, exc, inh): at target, above with exc at 0, below with exc at 63, plain above and below.
        let cases = [(t, 20, 20), (t + 9, 0, 10), (t - 1, 63, 0), (t + 1, 30, 40), (0, 5, 63)];
        let mut chip = ChipState::default();
        for (k, &(count, exc, inh)) in cases.iter().enumerate() {
            chip.set_spike_count(k, count);
            set_synapse(&mut chip, layout.synapse(layout.exc_row, k as u32), exc, k as u8);
            set_synapse(&mut chip, layout.synapse(layout.inh_row, k as u32), inh, k as u8 + 7);
        }
        run_ppu(
            &mut chip,
            &kernels::single_shot("homeostasis", &kernels::homeostasis(&layout), &p),
        );
        for (k, &(count, exc, inh)) in cases.iter().enumerate() {
            let (e, i) = homeostasis_reference(count as u32, p.target_rate, exc, inh);
            assert_eq!(
                synapse_word(&mut chip, layout.synapse(layout.exc_row, k as u32)),
                (e, k as u8),
                "neuron {k}"
            );
            assert_eq!(
                synapse_word(&mut chip, layout.synapse(layout.inh_row, k as u32)),
                (i, k as u8 + 7),
                "neuron {k}"
            );
            assert_eq!(chip.spike_count(k), 0);
        }
    }

    #[test]
    fn homeostasis_rule_fixed_points() {
        assert_eq!(homeostasis_reference(30, 30, 17, 40), (17, 40));
        assert_eq!(homeostasis_reference(45, 30, 0, 63), (0, 63));
        assert_eq!(homeostasis_reference(3, 30, 63, 0), (63, 0));
        assert_eq!(homeostasis_reference(31, 30, 10, 10), (9, 11));
    }

    fn sem_staged(chip: &mut ChipState, layout: &Layout, mut f: impl FnMut(u32, u32) -> (u8, u8, u8)) {
        for row in 0..layout.n_inputs {
            for col in 0..crate::ppu::VECTOR_LANES as u32 {
                let (w, l, c) = f(row, col);
                let idx = layout.synapse(layout.first_input_row + row, col);
                set_synapse(chip, idx, w, l);
                chip.set_correlation(idx as usize, c);
            }
        }
    }

    #[test]
    fn sem_zero_correlation_depresses() {
        let layout = Layout::new(3, 12);
        let p = KernelParams {
            eta_down: 2,
            ..params()
        };
        let mut chip = ChipState::default();
        sem_staged(&mut chip, &layout, |row, col| (((row + col) % 64) as u8, 3, 0));
        run_ppu(&mut chip, &kernels::single_shot("sem", &kernels::sem(&layout), &p));
        for row in 0..layout.n_inputs {
            for col in 0..128 {
                let w = ((row + col) % 64) as u8;
                assert_eq!(
                    synapse_word(&mut chip, layout.synapse(row, col)),
                    (w.saturating_sub(2), 3)
                );
            }
        }
    }

    #[test]
    fn sem_at_threshold_potentiates() {
        let layout = Layout::new(3, 12);
        let p = KernelParams { eta_up: 3, ..params() };
        let mut chip = ChipState::default();
        let theta = p.theta;
        sem_staged(&mut chip, &layout, |_, col| match col % 3 {
            0 => (10, 0, theta),
            1 => (62, 0, theta),
            _ => (10, 0, theta - 1),
        });
        run_ppu(&mut chip, &kernels::single_shot("sem", &kernels::sem(&layout), &p));
        for col in 0..128 {
            let expect = match col % 3 {
                0 => 13,
                1 => 63,
                _ => 9,
            };
            assert_eq!(synapse_word(&mut chip, layout.synapse(5, col)).0, expect, "lane {col}");
            assert_eq!(chip.correlations()[layout.synapse(5, col) as usize], 0);
        }
    }

    #[test]
    fn sem_kernel_matches_rule_on_random_state() {
        let layout = Layout::new(3, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let p = KernelParams {
                theta: rng.gen_range(0..=64),
                eta_up: rng.gen_range(0..=8),
                eta_down: rng.gen_range(0..=8),
                ..params()
            };
            let mut chip = ChipState::default();
            let mut staged = Vec::new();
            sem_staged(&mut chip, &layout, |_, _| {
                let s = (rng.gen_range(0..=63), rng.gen_range(0..=63), rng.gen_range(0..=80));
                staged.push(s);
                s
            });
            run_ppu(&mut chip, &kernels::single_shot("sem", &kernels::sem(&layout), &p));
            let mut it = staged.iter();
            for row in 0..layout.n_inputs {
                for col in 0..128 {
                    let &(w, l, c) = it.next().unwrap();
                    let expect = sem_reference(w, c, p.theta, p.eta_up, p.eta_down);
                    assert_eq!(synapse_word(&mut chip, layout.synapse(row, col)), (expect, l));
                }
            }
        }
    }

    fn read_symbol(chip: &mut ChipState, symbols: &LoadedSymbols, name: &str) -> u32 {
        chip.register_read(symbols.lookup(name).unwrap().address).unwrap()
    }

    fn scheduled_chip(config: &NsemConfig, until: u64) -> (ChipState, LoadedSymbols) {
        let network = build_network(config).unwrap();
        let mut chip = ChipState::new(config.sim_config()).unwrap();
        chip.run(&network.init).unwrap();
        let mut b = PlaybackProgramBuilder::new();
        b.wait_until(until);
        chip.run(&b.done()).unwrap();
        (chip, network.symbols)
    }

    #[test]
    fn learning_runs_twice_per_homeostasis_run() {
        let config = NsemConfig {
            homeostasis_period: 4_000,
            learning_period: 2_000,
            ..NsemConfig::default()
        };
        let (mut chip, sym) = scheduled_chip(&config, 40_500);
        assert_eq!(read_symbol(&mut chip, &sym, "runs_h"), 10);
        assert_eq!(read_symbol(&mut chip, &sym, "runs_l"), 20);
    }

    #[test]
    fn tie_goes_to_homeostasis() {
        let config = NsemConfig {
            homeostasis_period: 2_000,
            learning_period: 2_000,
            ..NsemConfig::default()
        };
        let (mut chip, sym) = scheduled_chip(&config, 2_500);
        assert_eq!(read_symbol(&mut chip, &sym, "runs_h"), 1);
        assert_eq!(read_symbol(&mut chip, &sym, "runs_l"), 1);
        // Both were due at tick 2000; learning started last.
        assert_eq!(read_symbol(&mut chip, &sym, "last_kernel"), 1);
    }

    #[test]
    fn deadlines_do_not_drift() {
        let config = NsemConfig {
            homeostasis_period: 3_000,
            learning_period: 700,
            ..NsemConfig::default()
        };
        let (mut chip, sym) = scheduled_chip(&config, 200_350);
        let runs_h = read_symbol(&mut chip, &sym, "runs_h");
        let runs_l = read_symbol(&mut chip, &sym, "runs_l");
        assert_eq!(runs_h, 200_350 / 3_000);
        assert_eq!(runs_l, 200_350 / 700);
        assert_eq!(read_symbol(&mut chip, &sym, "next_h"), (runs_h + 1) * 3_000);
        assert_eq!(read_symbol(&mut chip, &sym, "next_l"), (runs_l + 1) * 700);
    }

    #[test]
    fn init_program_configures_network() {
        let config = NsemConfig::default();
        let layout = config.layout();
        let network = build_network(&config).unwrap();
        assert_eq!(network.synapse_count, 48);
        for name in ["target_rate", "eta_up", "eta_down", "theta", "period_h", "period_l"] {
            assert!(network.symbols.lookup(name).is_ok(), "{name}");
        }

        let mut chip = ChipState::new(config.sim_config()).unwrap();
        chip.run(&network.init).unwrap();
        assert_eq!(
            read_symbol(&mut chip, &network.symbols, "target_rate"),
            config.target_rate
        );
        assert_eq!(
            read_symbol(&mut chip, &network.symbols, "period_h"),
            config.homeostasis_period
        );
        assert_eq!(chip.core(0).status, CoreStatus::Running);

        let (lo, hi) = config.input_weight_init;
        let mut configured = 0;
        for row in 0..256 {
            for col in 0..256 {
                let (w, l) = synapse_word(&mut chip, layout.synapse(row, col));
                if w == 0 {
                    continue;
                }
                configured += 1;
                let k = col;
                assert!(k < config.n_cause, "synapse outside the cause columns");
                if row < layout.exc_row {
                    assert!((lo..=hi).contains(&w));
                    assert_eq!(l, 0);
                } else if row == layout.exc_row {
                    assert_eq!((w, l), (config.background_exc_weight, k as u8));
                } else if row == layout.inh_row {
                    assert_eq!((w, l), (config.background_inh_weight, k as u8));
                } else {
                    let src = row - layout.first_wta_row;
                    assert!(src < config.n_cause && src != k);
                    assert_eq!((w, l), (63, 0));
                }
            }
        }
        assert_eq!(configured, 48);
        let driver_word =
            |chip: &mut ChipState, row: u32| chip.register_read(address::SYNAPSE_DRIVER_BASE + row).unwrap();
        assert_eq!(driver_word(&mut chip, layout.exc_row), 0);
        assert_ne!(driver_word(&mut chip, layout.inh_row), 0);
        for k in 0..config.n_cause {
            assert_ne!(driver_word(&mut chip, layout.first_wta_row + k), 0);
        }
    }

    #[test]
    fn input_rates_match_probabilities() {
        let config = NsemConfig {
            duration: 1_000_000,
            ..NsemConfig::default()
        };
        let layout = config.layout();
        let input = generate_input(&config, 5);
        let ticks = config.duration as f64;
        let mut active_ticks = vec![0u64; config.n_inputs as usize];
        for &(_, pattern) in &input.presentations {
            for i in config.pattern_channels(pattern) {
                active_ticks[i as usize] += config.presentation_ticks;
            }
        }
        let mut high = vec![0u64; config.n_inputs as usize];
        let mut low = vec![0u64; config.n_inputs as usize];
        let mut exc = vec![0u64; config.n_cause as usize];
        let mut inh = vec![0u64; config.n_cause as usize];
        for e in &input.events {
            let row = e.pack.row.value() as u32;
            let label = e.pack.label.value() as usize;
            let pattern = input.presentations[(e.time / config.presentation_ticks) as usize].1;
            if row == layout.exc_row {
                exc[label] += 1;
            } else if row == layout.inh_row {
                inh[label] += 1;
            } else if config.pattern_channels(pattern).contains(&row) {
                high[row as usize] += 1;
            } else {
                low[row as usize] += 1;
            }
        }
        let sigmas = |count: u64, n: f64, p: f64| ((count as f64) - n * p).abs() / (n * p * (1.0 - p)).sqrt();
        // Pooled over channels at 3 sigma; single channels at 4 since 30 of them are checked.
        let on: f64 = active_ticks.iter().sum::<u64>() as f64;
        let off = ticks * config.n_inputs as f64 - on;
        assert!(sigmas(high.iter().sum(), on, config.input_rate_high) < 3.0);
        assert!(sigmas(low.iter().sum(), off, config.input_rate_low) < 3.0);
        assert!(sigmas(exc.iter().sum(), ticks * 3.0, config.background_exc_rate) < 3.0);
        assert!(sigmas(inh.iter().sum(), ticks * 3.0, config.background_inh_rate) < 3.0);
        for i in 0..config.n_inputs as usize {
            let on = active_ticks[i] as f64;
            assert!(
                sigmas(high[i], on, config.input_rate_high) < 4.0,
                "channel {i} high {}",
                high[i]
            );
            assert!(
                sigmas(low[i], ticks - on, config.input_rate_low) < 4.0,
                "channel {i} low {}",
                low[i]
            );
        }
        for k in 0..config.n_cause as usize {
            assert!(sigmas(exc[k], ticks, config.background_exc_rate) < 4.0, "exc {k}");
            assert!(sigmas(inh[k], ticks, config.background_inh_rate) < 4.0, "inh {k}");
        }
        // Block shuffling shows every pattern equally often.
        let mut shown = vec![0; 3];
        for &(_, p) in &input.presentations {
            shown[p as usize] += 1;
        }
        assert!(shown.iter().all(|&n| (333..=334).contains(&n)), "{shown:?}");
    }

    #[test]
    fn zero_rates_give_empty_schedule() {
        let config = NsemConfig {
            input_rate_high: 0.0,
            input_rate_low: 0.0,
            background_exc_rate: 0.0,
            background_inh_rate: 0.0,
            duration: 20_000,
            ..NsemConfig::default()
        };
        let input = generate_input(&config, 1);
        assert!(input.events.is_empty());
        assert_eq!(input.presentations.len(), 20);
    }

    #[test]
    fn input_is_seed_deterministic() {
        let config = NsemConfig {
            duration: 30_000,
            ..NsemConfig::default()
        };
        assert_eq!(generate_input(&config, 4), generate_input(&config, 4));
        assert_ne!(generate_input(&config, 4).events, generate_input(&config, 5).events);
    }

    #[test]
    fn frozen_learning_keeps_input_weights() {
        let config = NsemConfig {
            eta_up: 0,
            eta_down: 0,
            duration: 60_000,
            ..NsemConfig::default()
        };
        let mut chip = ChipState::new(config.sim_config()).unwrap();
        let report = run_experiment(&config, &mut chip).unwrap();
        assert_eq!(report.snapshots.len(), 6);
        let first = &report.snapshots[0].input;
        assert!(report.snapshots.iter().all(|s| &s.input == first));
        assert!(!report.spikes.is_empty());
    }

    #[test]
    fn zero_duration_gives_empty_report() {
        let config = NsemConfig {
            duration: 0,
            ..NsemConfig::default()
        };
        let mut chip = ChipState::new(config.sim_config()).unwrap();
        let report = run_experiment(&config, &mut chip).unwrap();
        assert!(report.spikes.is_empty());
        assert!(report.presentations.is_empty());
        assert!(report.rates.is_empty());
        assert!(report.snapshots.is_empty());
        assert_eq!(report.metrics().purity, 0.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            NsemConfig {
                n_inputs: 13,
                ..NsemConfig::default()
            },
            NsemConfig {
                input_weight_init: (30, 64),
                ..NsemConfig::default()
            },
            NsemConfig {
                learning_period: 0,
                ..NsemConfig::default()
            },
            NsemConfig {
                correlation_gain: 0.0,
                ..NsemConfig::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(NsemError::InvalidConfig(_))));
        }
    }
}
