//! Checks shared by the integration tests and the acceptance runner. Each
//! returns `Err` with a readable reason instead of panicking so the
//! acceptance runner can report every criterion.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use neurosim::coord::*;
use neurosim::gdbstub::{self, DebugSession};
use neurosim::hal::*;
use neurosim::nsem::{self, kernels, KernelParams, Layout, NsemConfig};
use neurosim::playback::{Executor, PlaybackProgramBuilder};
use neurosim::ppu::{self, CoreStatus};
use neurosim::sched::{Client, JobStatus, Outcome, QueueState, Server};
use neurosim::simchip::{ChipState, SimConfig};
use neurosim::toolchain;

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn any<C: Coordinate>(rng: &mut ChaCha8Rng) -> C {
    C::from_enum(rng.gen_range(0..C::SIZE)).expect("index below SIZE")
}

// ---------------------------------------------------------------------------
// Coordinates

pub fn coordinate_bijections() -> Check {
    ensure!(
        SynapseOnChip::SIZE == 131_072,
        "|SynapseOnChip| = {}",
        SynapseOnChip::SIZE
    );
    ensure!(NeuronOnChip::SIZE == 512, "|NeuronOnChip| = {}", NeuronOnChip::SIZE);
    let mut total = 0;
    for &kind in CoordKind::ENUMERABLE {
        let size = kind.size().expect("enumerable");
        let mut seen = std::collections::HashSet::with_capacity(size);
        for i in 0..size {
            let c = AnyCoord::from_enum(kind, i).map_err(|e| format!("{}({i}): {e}", kind.name()))?;
            ensure!(
                c.to_enum() == Some(i),
                "{} enum {i} maps back to {:?}",
                kind.name(),
                c.to_enum()
            );
            ensure!(seen.insert(c), "{} enum {i} collides", kind.name());
        }
        ensure!(
            AnyCoord::from_enum(kind, size).is_err(),
            "{} accepts enum {size}",
            kind.name()
        );
        total += size;
    }
    Ok(format!("{} kinds, {total} values", CoordKind::ENUMERABLE.len()))
}

// ---------------------------------------------------------------------------
// Codecs

pub fn random_container(rng: &mut ChaCha8Rng) -> (AnyCoord, AnyContainer) {
    let synapse = |rng: &mut ChaCha8Rng| Synapse {
        weight: SynapseWeight::saturating(rng.gen_range(0..=63)),
        label: SynapseLabel::saturating(rng.gen_range(0..=63)),
    };
    match rng.gen_range(0..9) {
        0 => (
            any::<NeuronConfigOnDLS>(rng).into(),
            AnyContainer::NeuronConfig(NeuronConfig {
                enable_leak: rng.gen(),
                refractory_time: RefractoryTime::saturating(rng.gen_range(0..=255)),
                leak_potential: NeuronPotential::saturating(rng.gen_range(0..=255)),
                threshold: NeuronPotential::saturating(rng.gen_range(0..=255)),
                reset_potential: NeuronPotential::saturating(rng.gen_range(0..=255)),
                enable_spike_output: rng.gen(),
            }),
        ),
        1 => (any::<SynapseOnChip>(rng).into(), AnyContainer::Synapse(synapse(rng))),
        2 => (
            any::<SynapseRowOnChip>(rng).into(),
            AnyContainer::SynapseRowValues(SynapseRowValues {
                synapses: (0..SynapseRowValues::LEN).map(|_| synapse(rng)).collect(),
            }),
        ),
        3 => (
            any::<TimerOnDLS>(rng).into(),
            AnyContainer::TimerValue(TimerValue(rng.gen())),
        ),
        // Only held in reset: a released core would start executing SRAM contents.
        4 => (
            any::<PPUControlOnDLS>(rng).into(),
            AnyContainer::PPUControl(PPUControl {
                inhibit_reset: false,
                status: PPUStatus::Sleeping,
            }),
        ),
        5 => (
            any::<PPUMemoryWordOnDLS>(rng).into(),
            AnyContainer::PPUMemoryWord(PPUMemoryWord(rng.gen())),
        ),
        6 => {
            let len = rng.gen_range(1..=16);
            let start = rng.gen_range(0..=PPUMemoryWordOnPPU::SIZE - len);
            let coord = PPUMemoryBlockOnDLS::new(
                any::<PPUOnDLS>(rng),
                PPUMemoryWordOnPPU::from_enum(start).expect("start in range"),
                len,
            )
            .expect("block in range");
            let block = PPUMemoryBlock::from_words((0..len).map(|_| rng.gen::<u32>()));
            (coord.into(), AnyContainer::PPUMemoryBlock(block))
        }
        7 => (
            any::<SynapseDriverOnDLS>(rng).into(),
            AnyContainer::SynapseDriverConfig(SynapseDriverConfig { inhibitory: rng.gen() }),
        ),
        _ => (
            any::<NeuronEventOutputOnDLS>(rng).into(),
            AnyContainer::NeuronEventOutput(NeuronEventOutput {
                enable: rng.gen(),
                row: any(rng),
                label: SynapseLabel::saturating(rng.gen_range(0..=63)),
            }),
        ),
    }
}

/// Write each random container, read it back and decode, on both backends.
pub fn codec_round_trip(count: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chips = [ChipState::default(), ChipState::default()];
    let per_program = 250;
    let mut done = 0;
    while done < count {
        let batch: Vec<_> = (0..per_program.min(count - done))
            .map(|_| random_container(&mut rng))
            .collect();
        for (chip, backend) in chips.iter_mut().zip([Backend::Omnibus, Backend::Jtag]) {
            let mut b = PlaybackProgramBuilder::with_backend(backend);
            let mut tickets = Vec::with_capacity(batch.len());
            for (coord, container) in &batch {
                b.write_any(*coord, container).map_err(|e| e.to_string())?;
                tickets.push(b.read_any(container.kind(), *coord).map_err(|e| e.to_string())?);
            }
            let program = b.done();
            Executor::run(chip, &program).map_err(|e| format!("{backend:?}: {}", e.error))?;
            for ((coord, written), ticket) in batch.iter().zip(&tickets) {
                let read = ticket.get().map_err(|e| e.to_string())?;
                ensure!(
                    &read == written,
                    "{backend:?} {coord}: wrote {written:?}, read {read:?}"
                );
            }
        }
        ensure!(
            chips[0] == chips[1],
            "Omnibus and JTAG chip states differ after {} containers",
            done + batch.len()
        );
        done += batch.len();
    }
    Ok(format!("{count} containers, both backends"))
}

// ---------------------------------------------------------------------------
// Playback

pub fn configure_wait_read() -> Check {
    let mut chip = ChipState::default();
    let mut b = PlaybackProgramBuilder::new();
    b.write(
        NeuronConfigOnDLS::new(42).expect("neuron 42"),
        &NeuronConfig {
            enable_leak: true,
            threshold: NeuronPotential::saturating(200),
            ..NeuronConfig::default()
        },
    );
    b.wait_until(1000);
    let ticket = b.read::<SpikeCounterValue>(SpikeCounterOnDLS::new(3).expect("counter 3"));
    let program = b.done();
    ensure!(ticket.get().is_err(), "ticket resolved before execution");
    let result = Executor::run(&mut chip, &program).map_err(|e| e.error.to_string())?;
    ensure!(result.responses.len() == 1, "{} responses", result.responses.len());
    let count = ticket.get().map_err(|e| format!("ticket after run: {e}"))?;

    let mut b = PlaybackProgramBuilder::new();
    b.write(TimerOnDLS::default(), &TimerConfig { reset: true });
    b.wait_until(1000);
    let timer = b.read::<TimerValue>(TimerOnDLS::default());
    Executor::run(&mut chip, &b.done()).map_err(|e| e.error.to_string())?;
    let t = timer.get().map_err(|e| e.to_string())?;
    ensure!(t == TimerValue(1000), "timer after wait_until(1000) reads {t:?}");
    Ok(format!("1 response ({count:?}), timer 1000"))
}

// ---------------------------------------------------------------------------
// Toolchain

/// A random program: valid instructions written as disassembly, plus data
/// words and global labels. Returns the source and the expected text words.
pub fn random_source(rng: &mut ChaCha8Rng) -> (String, Vec<u32>, Vec<u32>) {
    let n = rng.gen_range(1..60);
    let mut words = Vec::with_capacity(n);
    let mut src = String::from(".text\n.global _start\n_start:\n");
    while words.len() < n {
        let instr = ppu::decode(rng.gen());
        if !instr.is_valid() {
            continue;
        }
        let w = ppu::encode(&instr);
        if rng.gen_bool(0.1) {
            src += &format!("l{}:\n", words.len());
        }
        src += &format!("    {instr}\n");
        words.push(w);
    }
    let data: Vec<u32> = (0..rng.gen_range(0..8)).map(|_| rng.gen()).collect();
    if !data.is_empty() {
        src += ".data\n.global table\ntable:\n";
        for d in &data {
            src += &format!("    .word {d:#x}\n");
        }
    }
    (src, words, data)
}

pub fn toolchain_corpus(count: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let (src, words, data) = random_source(&mut rng);
        let image = toolchain::assemble(&src).map_err(|d| format!("program {i} line {}: {}", d.line, d.message))?;
        ensure!(
            image.text_words() == words,
            "program {i}: text differs from the disassembled words"
        );
        let data_bytes: Vec<u8> = data.iter().flat_map(|w| w.to_be_bytes()).collect();
        ensure!(image.data == data_bytes, "program {i}: data differs");
        let elf = image.to_elf();
        let parsed = toolchain::parse_elf(&elf).map_err(|e| format!("program {i}: {e}"))?;
        ensure!(parsed == image, "program {i}: parse_elf(to_elf) differs from the image");
        ensure!(parsed.to_elf() == elf, "program {i}: ELF not byte-stable");
        ensure!(image.symbols.lookup("_start").is_ok(), "program {i}: _start missing");
    }
    Ok(format!("{count} programs byte-exact"))
}

pub fn run_until_halt(chip: &mut ChipState, ppu: usize, budget: u64) -> Result<(), String> {
    let start = chip.timer();
    while chip.core(ppu).status != CoreStatus::Halted {
        ensure!(
            chip.timer() - start < budget,
            "PPU {ppu} still {:?} after {budget} ticks",
            chip.core(ppu).status
        );
        chip.tick();
    }
    Ok(())
}

fn release(b: &mut PlaybackProgramBuilder, ppu: usize) {
    b.write(
        PPUControlOnDLS::new(ppu).expect("ppu index"),
        &PPUControl {
            inhibit_reset: true,
            status: PPUStatus::Running,
        },
    );
}

pub fn my_param_pattern() -> Check {
    let src = "\
.text
.global _start
_start:
    lw r1, my_param(r0)
    sw r1, seen(r0)
    halt
.data
.global my_param, seen
my_param: .word 0
seen: .word 0
";
    let image = toolchain::assemble(src).map_err(|d| d.to_string())?;
    let mut chip = ChipState::default();
    let mut b = PlaybackProgramBuilder::new();
    let symbols = toolchain::load_into(&mut b, &image, 1).map_err(|e| e.to_string())?;
    symbols
        .write_symbol(&mut b, "my_param", 24)
        .map_err(|e| e.to_string())?;
    release(&mut b, 1);
    Executor::run(&mut chip, &b.done()).map_err(|e| e.error.to_string())?;
    run_until_halt(&mut chip, 1, 1000)?;
    let seen = symbols.lookup("seen").map_err(|e| e.to_string())?;
    let mut b = PlaybackProgramBuilder::new();
    let t = b.read_word(seen.address);
    Executor::run(&mut chip, &b.done()).map_err(|e| e.error.to_string())?;
    let v = t.get().map_err(|e| e.to_string())?;
    ensure!(v == 24, "PPU read my_param = {v}");
    Ok("PPU read 24".into())
}

// ---------------------------------------------------------------------------
// Vector kernel versus scalar reference

fn stage_random(chip: &mut ChipState, rng: &mut ChaCha8Rng) {
    for i in 0..65_536u32 {
        let word = rng.gen_range(0..=63u32) | rng.gen_range(0..=63u32) << 8;
        chip.register_write(address::synapse(i), word).expect("synapse address");
        chip.set_correlation(i as usize, rng.gen_range(0..=40));
    }
}

pub fn vector_scalar_equivalence(states: usize, seed: u64) -> Check {
    let layout = Layout::new(3, 12);
    let base = NsemConfig::default().kernel_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut changed = 0usize;
    let vector = toolchain::assemble(&kernels::single_shot("sem", &kernels::sem(&layout), &base));
    let scalar = toolchain::assemble(&kernels::single_shot("sem", &kernels::sem_scalar(&layout), &base));
    let (vector, scalar) = (vector.map_err(|d| d.to_string())?, scalar.map_err(|d| d.to_string())?);
    for s in 0..states {
        let params = KernelParams {
            theta: rng.gen_range(0..=40),
            eta_up: rng.gen_range(0..=10),
            eta_down: rng.gen_range(0..=10),
            ..base
        };
        let mut a = ChipState::default();
        stage_random(&mut a, &mut rng);
        let staged = a.weights().to_vec();
        let mut b = a.clone();
        for (chip, image) in [(&mut a, &vector), (&mut b, &scalar)] {
            let mut p = PlaybackProgramBuilder::new();
            let symbols = toolchain::load_into(&mut p, image, 0).map_err(|e| e.to_string())?;
            for (name, v) in [
                ("theta", params.theta),
                ("eta_up", params.eta_up),
                ("eta_down", params.eta_down),
            ] {
                symbols
                    .write_symbol(&mut p, name, v as u32)
                    .map_err(|e| e.to_string())?;
            }
            release(&mut p, 0);
            Executor::run(chip, &p.done()).map_err(|e| e.error.to_string())?;
            run_until_halt(chip, 0, 200_000)?;
        }
        ensure!(a.weights() == b.weights(), "state {s}: synapse weights differ");
        ensure!(
            a.correlations() == b.correlations(),
            "state {s}: correlation sensors differ"
        );
        let reg = |chip: &mut ChipState| -> Vec<u32> {
            (0..65_536)
                .map(|i| chip.register_read(address::synapse(i)).expect("synapse"))
                .collect()
        };
        ensure!(reg(&mut a) == reg(&mut b), "state {s}: synapse labels differ");
        changed += a.weights().iter().zip(&staged).filter(|(x, y)| x != y).count();
    }
    ensure!(changed > 0, "kernels left every weight unchanged");
    Ok(format!(
        "{states} random states bit-identical, {changed} weights updated"
    ))
}

// ---------------------------------------------------------------------------
// GDB remote protocol

pub const GDB_PROGRAM: &str = "\
.text
.global _start
_start:
    addi r1, r0, 3
loop:
    addi r2, r2, 7
    addi r1, r1, -1
    bne r1, r0, loop
    sw r2, result(r0)
    halt
.data
.global result
result: .word 0
";

/// Debugger side of the golden session, one packet payload per entry.
pub const GDB_SCRIPT: &[&str] = &[
    "qSupported:multiprocess+;swbreak+",
    "?",
    "g",
    "m0,18",
    "M18,4:0000002a",
    "m18,4",
    "Z0,8",
    "c",
    "g",
    "s",
    "z0,8",
    "c",
    "m18,4",
    "k",
];

fn gdb_chip() -> Result<ChipState, String> {
    let image = toolchain::assemble(GDB_PROGRAM).map_err(|d| d.to_string())?;
    let mut chip = ChipState::default();
    let mut b = PlaybackProgramBuilder::new();
    toolchain::load_into(&mut b, &image, 0).map_err(|e| e.to_string())?;
    Executor::run(&mut chip, &b.done()).map_err(|e| e.error.to_string())?;
    Ok(chip)
}

pub struct GdbTranscript {
    pub output: Vec<u8>,
    pub sram_before: Vec<u8>,
    pub sram_after: Vec<u8>,
}

/// Run the scripted session and return the server's byte stream.
pub fn gdb_session() -> Result<GdbTranscript, String> {
    let mut chip = gdb_chip()?;
    let before = chip.core(0).sram().to_vec();
    let mut input = Vec::new();
    for p in GDB_SCRIPT {
        input.extend_from_slice(&gdbstub::frame(p.as_bytes()));
    }
    let mut output = Vec::new();
    {
        let mut session = DebugSession::attach(&mut chip, 0).map_err(|e| e.to_string())?;
        session
            .serve_stream(Cursor::new(input), &mut output)
            .map_err(|e| e.to_string())?;
    }
    Ok(GdbTranscript {
        output,
        sram_before: before,
        sram_after: chip.core(0).sram().to_vec(),
    })
}

/// Every `$payload#xx` in `stream` carries the right checksum.
pub fn packets_checksummed(stream: &[u8]) -> Result<usize, String> {
    let mut n = 0;
    let mut i = 0;
    while let Some(start) = stream[i..].iter().position(|&b| b == b'$') {
        let s = i + start + 1;
        let end = s + stream[s..]
            .iter()
            .position(|&b| b == b'#')
            .ok_or("unterminated packet")?;
        let sum = std::str::from_utf8(&stream[end + 1..end + 3]).map_err(|e| e.to_string())?;
        let expect = format!("{:02x}", gdbstub::checksum(&stream[s..end]));
        ensure!(
            sum == expect,
            "packet at {} has checksum {sum}, expected {expect}",
            s - 1
        );
        n += 1;
        i = end + 3;
    }
    Ok(n)
}

pub fn gdb_golden(golden: &Path) -> Check {
    let GdbTranscript {
        output,
        sram_before: before,
        sram_after: after,
    } = gdb_session()?;
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(golden, &output).map_err(|e| e.to_string())?;
    }
    let expected = std::fs::read(golden).map_err(|e| format!("{}: {e}", golden.display()))?;
    ensure!(
        output == expected,
        "transcript differs from golden:\n got {}\nwant {}",
        String::from_utf8_lossy(&output),
        String::from_utf8_lossy(&expected)
    );
    let packets = packets_checksummed(&output)?;
    // The program itself stores to `result` and the debug handler owns the
    // mailbox; compare everything else.
    let result = toolchain::assemble(GDB_PROGRAM)
        .expect("assembles")
        .symbols
        .lookup("result")
        .expect("symbol")
        .address as usize;
    let masked = |m: &[u8]| {
        let mut m = m.to_vec();
        m[result..result + 4].fill(0);
        m.truncate(ppu::mailbox::BASE as usize);
        m
    };
    ensure!(masked(&before) == masked(&after), "breakpoints left SRAM modified");
    Ok(format!("{} bytes, {packets} packets", output.len()))
}

// ---------------------------------------------------------------------------
// Scheduler

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueOp {
    Submit { user: u8, priority: u8 },
    Dispatch,
}

pub fn random_schedule(rng: &mut ChaCha8Rng) -> Vec<QueueOp> {
    let users = rng.gen_range(1..=5);
    (0..rng.gen_range(1..80))
        .map(|_| {
            if rng.gen_bool(0.55) {
                QueueOp::Submit {
                    user: rng.gen_range(0..users),
                    priority: rng.gen_range(0..3),
                }
            } else {
                QueueOp::Dispatch
            }
        })
        .collect()
}

/// Replay `ops` against the queue, then drain it, checking:
/// every job runs exactly once; a user's jobs run in priority then
/// submission order; a user waiting when another user is served is served
/// before that user is served again.
pub fn check_fairness(ops: &[QueueOp]) -> Result<(), String> {
    let program = PlaybackProgramBuilder::new().done();
    let mut q = QueueState::new();
    let mut submitted: BTreeMap<u64, (String, u8)> = BTreeMap::new();
    let mut order: Vec<(u64, String)> = Vec::new();
    // Users still owed a turn before the keyed user may run again.
    let mut owed: HashMap<String, Vec<String>> = HashMap::new();
    let drain = ops
        .iter()
        .copied()
        .chain(std::iter::repeat_n(QueueOp::Dispatch, ops.len() + 1));
    for op in drain {
        match op {
            QueueOp::Submit { user, priority } => {
                let user = format!("u{user}");
                let id = q.enqueue(&user, priority, program.clone());
                submitted.insert(id, (user, priority));
            }
            QueueOp::Dispatch => {
                let Some(job) = q.next_job() else {
                    ensure!(q.queued_len() == 0, "idle with {} jobs queued", q.queued_len());
                    continue;
                };
                for debts in owed.values_mut() {
                    debts.retain(|u| u != &job.user);
                }
                if let Some(debts) = owed.get(&job.user) {
                    ensure!(
                        debts.is_empty(),
                        "{} served again while {:?} kept waiting",
                        job.user,
                        debts
                    );
                }
                q.complete(
                    job.id,
                    Outcome {
                        status: JobStatus::Done,
                        result: Vec::new(),
                        message: String::new(),
                    },
                );
                let waiting: Vec<String> = q
                    .waiting_users()
                    .into_iter()
                    .filter(|u| *u != job.user)
                    .map(String::from)
                    .collect();
                owed.insert(job.user.clone(), waiting);
                order.push((job.id, job.user));
            }
        }
    }
    ensure!(
        order.len() == submitted.len(),
        "{} of {} jobs ran",
        order.len(),
        submitted.len()
    );
    let mut ids: Vec<u64> = order.iter().map(|(id, _)| *id).collect();
    ids.sort_unstable();
    ids.dedup();
    ensure!(ids.len() == submitted.len(), "a job ran twice");
    Ok(())
}

pub fn fairness_schedules(count: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = 0;
    for i in 0..count {
        let ops = random_schedule(&mut rng);
        jobs += ops.iter().filter(|o| matches!(o, QueueOp::Submit { .. })).count();
        check_fairness(&ops).map_err(|e| format!("schedule {i}: {e}"))?;
    }
    Ok(jobs)
}

/// Per-user job priority order: not expressible with `check_fairness`'
/// completion-order view alone, so checked separately on a quiescent queue.
pub fn check_priority_order(jobs: &[(u8, u8)]) -> Result<(), String> {
    let program = PlaybackProgramBuilder::new().done();
    let mut q = QueueState::new();
    let mut expect: BTreeMap<String, Vec<(u8, u64)>> = BTreeMap::new();
    for &(user, priority) in jobs {
        let user = format!("u{user}");
        let id = q.enqueue(&user, priority, program.clone());
        expect.entry(user).or_default().push((priority, id));
    }
    let mut got: BTreeMap<String, Vec<(u8, u64)>> = BTreeMap::new();
    while let Some(job) = q.next_job() {
        got.entry(job.user.clone()).or_default().push((job.priority, job.id));
    }
    for v in expect.values_mut() {
        v.sort();
    }
    ensure!(got == expect, "per-user order {got:?}, expected {expect:?}");
    Ok(())
}

fn marker(user: usize) -> u32 {
    address::synapse(2000 + user as u32)
}

/// Submit random multi-user job mixes to a live server. Each job reads every
/// user's marker synapse, then writes its own. A job may only see the marker
/// of its own user, and only the value written by the job run just before it.
pub fn isolation_schedules(count: usize, seed: u64) -> Check {
    let server = Server::bind("127.0.0.1:0", SimConfig::default())
        .and_then(Server::spawn)
        .map_err(|e| e.to_string())?;
    let mut client = Client::connect(server.local_addr()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = 4;
    let mut jobs = 0;
    for s in 0..count {
        let n = rng.gen_range(1..8);
        let mut submitted: HashMap<u64, (usize, u32)> = HashMap::new();
        for _ in 0..n {
            let user = rng.gen_range(0..users);
            let value = rng.gen_range(1..=63);
            let mut b = PlaybackProgramBuilder::new();
            for u in 0..users {
                b.read_word(marker(u));
            }
            b.write_word(marker(user), value);
            let name = format!("s{s}u{user}");
            let id = client
                .submit(&name, rng.gen_range(0..2), &b.done())
                .map_err(|e| e.to_string())?;
            submitted.insert(id, (user, value));
        }
        let mut reads = HashMap::new();
        for &id in submitted.keys() {
            let report = client.wait(id, Duration::from_micros(200)).map_err(|e| e.to_string())?;
            let result = report.result().map_err(|e| e.to_string())?.ok_or("no result")?;
            reads.insert(
                id,
                (0..users as u32)
                    .map(|i| result.response(i).unwrap_or(u32::MAX))
                    .collect::<Vec<_>>(),
            );
        }
        let log = server.dispatch_log();
        let mine: Vec<_> = log.iter().filter(|d| submitted.contains_key(&d.job_id)).collect();
        ensure!(mine.len() == n, "schedule {s}: {} of {n} jobs logged", mine.len());
        let mut prev: Option<u64> = None;
        for d in &mine {
            let (user, _) = submitted[&d.job_id];
            let seen = &reads[&d.job_id];
            let same_user = prev.is_some_and(|p| submitted[&p].0 == user);
            ensure!(
                d.reset != same_user,
                "schedule {s}: job {} reset={} after same user={same_user}",
                d.job_id,
                d.reset
            );
            for (u, &v) in seen.iter().enumerate() {
                let expect = match prev {
                    Some(p) if same_user && u == user => submitted[&p].1,
                    _ => 0,
                };
                ensure!(
                    v == expect,
                    "schedule {s}: job {} of user {user} saw {v} on user {u}'s marker",
                    d.job_id
                );
            }
            prev = Some(d.job_id);
        }
        jobs += n;
    }
    Ok(format!("{count} schedules, {jobs} jobs"))
}

fn busy(ticks: u64) -> neurosim::playback::PlaybackProgram {
    let mut b = PlaybackProgramBuilder::new();
    b.write_word(address::TIMER_RESET, 1);
    b.wait_until(ticks);
    b.done()
}

/// A user arriving behind a 50-job sweep starts within one job duration.
pub fn sweep_latency() -> Check {
    let server = Server::bind("127.0.0.1:0", SimConfig::default())
        .and_then(Server::spawn)
        .map_err(|e| e.to_string())?;
    let mut a = Client::connect(server.local_addr()).map_err(|e| e.to_string())?;
    let mut b = Client::connect(server.local_addr()).map_err(|e| e.to_string())?;
    let sweep: Vec<u64> = (0..50)
        .map(|_| a.submit("A", 0, &busy(20_000)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    while a.get_result(sweep[0]).map_err(|e| e.to_string())?.status == JobStatus::Queued {
        std::thread::sleep(Duration::from_micros(100));
    }
    let submitted = Instant::now();
    let job = b.submit("B", 0, &busy(20_000)).map_err(|e| e.to_string())?;
    b.wait(job, Duration::from_millis(1)).map_err(|e| e.to_string())?;
    let log = server.dispatch_log();
    let pos = log
        .iter()
        .position(|d| d.job_id == job)
        .ok_or("B's job missing from log")?;
    let started = log[pos].started;
    // The job A had in flight when B arrived bounds B's wait.
    let in_flight = log
        .iter()
        .rfind(|d| d.started <= submitted)
        .ok_or("no A job in flight")?;
    let duration = in_flight.finished - in_flight.started;
    let waited = started.saturating_duration_since(submitted);
    ensure!(pos <= 2, "B dispatched at position {pos}");
    ensure!(waited <= duration, "B waited {waited:?}, one job takes {duration:?}");
    Ok(format!("B waited {waited:?} (job duration {duration:?})"))
}

// ---------------------------------------------------------------------------
// NSEM

pub struct NsemRun {
    pub seed: u64,
    pub purity: f64,
    pub wta: f64,
    pub min_presentations: usize,
    pub report: nsem::ExperimentReport,
}

pub fn nsem_run(config: &NsemConfig) -> Result<NsemRun, String> {
    let mut chip = ChipState::new(config.sim_config()).map_err(|e| e.to_string())?;
    let report = nsem::run_experiment(config, &mut chip).map_err(|e| e.to_string())?;
    let metrics = report.metrics();
    let mut per_pattern = vec![0usize; report.n_patterns];
    for p in report.presentations.iter().filter(|p| p.start >= report.eval_start) {
        per_pattern[p.pattern] += 1;
    }
    Ok(NsemRun {
        seed: config.seed,
        purity: metrics.purity,
        wta: nsem::wta_violation_fraction(&report, 5),
        min_presentations: per_pattern.into_iter().min().unwrap_or(0),
        report,
    })
}

/// Rate after a doubling of the excitatory background at the end of
/// training: mean over the cause neurons and the last ten of the fifty
/// homeostasis periods that follow the shift.
pub fn homeostasis_recovery(seed: u64) -> Result<(f64, f64), String> {
    let base = NsemConfig::default();
    let periods = 50;
    let config = NsemConfig {
        seed,
        duration: base.duration + periods * base.homeostasis_period as u64,
        shift: Some(nsem::BackgroundShift {
            at: base.duration,
            factor: 2.0,
        }),
        ..base.clone()
    };
    let run = nsem_run(&config)?;
    let first = (base.duration / base.homeostasis_period as u64) as usize;
    let peak = nsem::mean_rate(&run.report, first..first + 1);
    let settled = nsem::mean_rate(&run.report, first + periods as usize - 10..first + periods as usize);
    Ok((peak, settled))
}
