//! PPU program generators for the plasticity kernels and their host-side
//! reference rules.
//!
//! Register use: kernels are leaf routines entered with `jal` and return via
//! `jr r31`. `r0` is never written and serves as zero. The main loop keeps
//! the timer address in `r20`; kernels only touch `r1`..`r15` and `v0`..`v7`.

use std::fmt::Write;

use crate::hal::address;
use crate::ppu::VECTOR_LANES;

use super::Layout;

pub const MAX_WEIGHT: u8 = 63;

/// Homeostasis rule for one neuron: returns the new `(exc, inh)` weights.
pub fn homeostasis_reference(count: u32, target: u32, exc: u8, inh: u8) -> (u8, u8) {
    let step = |w: u8, up: bool| {
        if up {
            (w + 1).min(MAX_WEIGHT)
        } else {
            w.saturating_sub(1)
        }
    };
    match count.cmp(&target) {
        std::cmp::Ordering::Equal => (exc, inh),
        std::cmp::Ordering::Greater => (step(exc, false), step(inh, true)),
        std::cmp::Ordering::Less => (step(exc, true), step(inh, false)),
    }
}

/// Learning rule for one synapse: the new weight given its correlation reading.
pub fn sem_reference(weight: u8, correlation: u8, theta: u8, eta_up: u8, eta_down: u8) -> u8 {
    if correlation >= theta {
        weight.saturating_add(eta_up).min(MAX_WEIGHT)
    } else {
        weight.saturating_sub(eta_down)
    }
}

/// Parameters read by the kernels; all are `.global` words in `.data`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelParams {
    pub target_rate: u32,
    pub theta: u8,
    pub eta_up: u8,
    pub eta_down: u8,
    pub period_h: u32,
    pub period_l: u32,
}

pub(super) fn data_section(p: &KernelParams) -> String {
    let mut s = String::from(".data\n");
    s += ".global target_rate, theta, eta_up, eta_down, period_h, period_l\n";
    s += ".global next_h, next_l, runs_h, runs_l, last_kernel\n";
    for (name, v) in [
        ("target_rate", p.target_rate),
        ("theta", p.theta as u32),
        ("eta_up", p.eta_up as u32),
        ("eta_down", p.eta_down as u32),
        ("period_h", p.period_h),
        ("period_l", p.period_l),
        ("next_h", 0),
        ("next_l", 0),
        ("runs_h", 0),
        ("runs_l", 0),
        ("last_kernel", 0),
    ] {
        writeln!(s, "{name}: .word {v}").unwrap();
    }
    s
}

/// Deadline scheduler: kernel 0 is homeostasis, kernel 1 learning. The
/// kernel with the earlier due deadline runs first, ties go to kernel 0.
/// `last_kernel` holds the index of the most recently started kernel.
pub(super) fn mainloop() -> String {
    format!(
        "\
.text
.global _start
_start:
    lw r1, period_h(r0)
    sw r1, next_h(r0)
    lw r1, period_l(r0)
    sw r1, next_l(r0)
    li r20, {timer:#x}
loop:
    lw r17, 0(r20)
    lw r18, next_h(r0)
    lw r19, next_l(r0)
    blt r17, r18, try_l
    blt r17, r19, run_h
    blt r19, r18, run_l
run_h:
    sw r0, last_kernel(r0)
    jal homeostasis
    lw r18, next_h(r0)
    lw r1, period_h(r0)
    add r18, r18, r1
    sw r18, next_h(r0)
    lw r1, runs_h(r0)
    addi r1, r1, 1
    sw r1, runs_h(r0)
    beq r0, r0, loop
try_l:
    blt r17, r19, loop
run_l:
    addi r1, r0, 1
    sw r1, last_kernel(r0)
    jal sem
    lw r19, next_l(r0)
    lw r1, period_l(r0)
    add r19, r19, r1
    sw r19, next_l(r0)
    lw r1, runs_l(r0)
    addi r1, r1, 1
    sw r1, runs_l(r0)
    beq r0, r0, loop
",
        timer = address::TIMER_LOW
    )
}

/// Homeostasis over the cause neurons: read and clear each spike counter,
/// then step the background weights one unit against the rate error.
pub fn homeostasis(layout: &Layout) -> String {
    format!(
        "\
homeostasis:
    lw r10, target_rate(r0)
    li r11, {counter:#x}
    li r12, {exc:#x}
    li r13, {inh:#x}
    addi r14, r0, {n}
    addi r15, r0, 63
h_loop:
    lw r1, 0(r11)
    sw r0, 0(r11)
    beq r1, r10, h_next
    addi r6, r0, 1
    blt r1, r10, h_apply
    addi r6, r0, -1
h_apply:
    lw r2, 0(r12)
    and r7, r2, r15
    sub r8, r2, r7
    add r7, r7, r6
    blt r7, r0, h_inh
    blt r15, r7, h_inh
    or r2, r8, r7
    sw r2, 0(r12)
h_inh:
    lw r3, 0(r13)
    and r7, r3, r15
    sub r8, r3, r7
    sub r7, r7, r6
    blt r7, r0, h_next
    blt r15, r7, h_next
    or r3, r8, r7
    sw r3, 0(r13)
h_next:
    addi r11, r11, 1
    addi r12, r12, 1
    addi r13, r13, 1
    addi r14, r14, -1
    bne r14, r0, h_loop
    jr r31
",
        counter = address::SPIKE_COUNTER_BASE + layout.first_neuron,
        exc = address::SYNAPSE_BASE + layout.synapse(layout.exc_row, 0),
        inh = address::SYNAPSE_BASE + layout.synapse(layout.inh_row, 0),
        n = layout.n_cause,
    )
}

/// Vectorised learning rule over every input row, one 128-lane half per row.
pub fn sem(layout: &Layout) -> String {
    format!(
        "\
sem:
    lw r1, theta(r0)
    vsplat v5, r1, 0
    lw r1, eta_up(r0)
    vsplat v6, r1, 0
    lw r1, eta_down(r0)
    vsplat v7, r1, 0
    addi r2, r0, {first}
    addi r3, r0, {end}
s_loop:
    vlc v1, r2, 0, 1
    vlw v0, r2, 0
    vcmpge v2, v1, v5
    vaddsat v3, v0, v6
    vsubsat v4, v0, v7
    vsel v0, v3, v4, v2
    vsw v0, r2, 0
    addi r2, r2, 1
    blt r2, r3, s_loop
    jr r31
",
        first = layout.first_input_row,
        end = layout.first_input_row + layout.n_inputs,
    )
}

/// The same learning rule written with scalar bus accesses, synapse by
/// synapse over the lanes the vector kernel covers.
pub fn sem_scalar(layout: &Layout) -> String {
    format!(
        "\
sem:
    lw r10, theta(r0)
    lw r11, eta_up(r0)
    lw r12, eta_down(r0)
    addi r15, r0, 63
    li r2, {w_base:#x}
    li r3, {c_base:#x}
    addi r4, r0, {rows}
q_row:
    addi r5, r0, {lanes}
    addi r13, r2, 0
    addi r14, r3, 0
q_lane:
    lw r6, 0(r13)
    lw r7, 0(r14)
    sw r0, 0(r14)
    and r8, r6, r15
    sub r9, r6, r8
    blt r7, r10, q_down
    add r8, r8, r11
    blt r8, r15, q_store
    addi r8, r15, 0
    beq r0, r0, q_store
q_down:
    sub r8, r8, r12
    bge r8, r0, q_store
    addi r8, r0, 0
q_store:
    or r6, r9, r8
    sw r6, 0(r13)
    addi r13, r13, 1
    addi r14, r14, 1
    addi r5, r5, -1
    bne r5, r0, q_lane
    addi r2, r2, {row_stride}
    addi r3, r3, {row_stride}
    addi r4, r4, -1
    bne r4, r0, q_row
    jr r31
",
        w_base = address::SYNAPSE_BASE + layout.synapse(layout.first_input_row, 0),
        c_base = address::CORRELATION_BASE + layout.synapse(layout.first_input_row, 0),
        rows = layout.n_inputs,
        lanes = VECTOR_LANES,
        row_stride = super::COLUMNS,
    )
}

/// A stand-alone program that runs `kernel` (one of the generated routines
/// labelled `sem` or `homeostasis`) once and halts.
pub fn single_shot(entry: &str, kernel: &str, params: &KernelParams) -> String {
    format!(
        ".text\n.global _start\n_start:\n    jal {entry}\n    halt\n{kernel}{}",
        data_section(params)
    )
}
