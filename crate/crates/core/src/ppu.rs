//! Plasticity processing unit: a small big-endian 32-bit scalar core with a
//! 128 x 8-bit vector unit and a direct port into the synapse array.
//!
//! # Instruction encoding
//!
//! Fixed 32-bit words, opcode in bits 31:26. Field layouts:
//!
//! | form   | 25:21 | 20:16 | 15:11 | 10:6 | 15:0 / 20:0           |
//! |--------|-------|-------|-------|------|-----------------------|
//! | R      | rd    | ra    | rb    | 0    |                       |
//! | I      | rd    | ra    |       |      | imm16                 |
//! | B      | ra    | rb    |       |      | signed word offset    |
//! | J      | rd    |       |       |      | signed 21-bit offset  |
//! | VSEL   | vd    | va    | vb    | vm   |                       |
//! | VPORT  | vd    | ra    |       |      | bit0 half, bit1 reset |
//!
//! Unused bits must be zero; any other word decodes to [`Instruction::Illegal`].
//! Branch and jump offsets count words relative to the branch itself.
//!
//! # Memory map
//!
//! Byte addresses below `0x4000` hit the core's SRAM (word accesses must be
//! 4-byte aligned). Addresses from `0x0001_0000` upward go out on the chip bus
//! and name chip registers directly, one 32-bit register per address.
//! Everything in between faults.

use std::fmt;

pub const SRAM_BYTES: usize = 16 * 1024;
pub const SRAM_WORDS: usize = SRAM_BYTES / 4;
pub const VECTOR_LANES: usize = 128;
pub const N_SCALAR_REGS: usize = 32;
pub const N_VECTOR_REGS: usize = 8;

/// Fixed SRAM region used by the debug handler to talk to the host.
pub mod mailbox {
    pub const BASE: u32 = 0x3000;
    pub const END: u32 = 0x4000;
    pub const COMMAND: u32 = 0x3000;
    pub const STATUS: u32 = 0x3004;
    /// r0..r31 followed by pc.
    pub const REGS: u32 = 0x3008;
    pub const REG_COUNT: u32 = 33;
    pub const DATA: u32 = REGS + REG_COUNT * 4;

    pub const CMD_IDLE: u32 = 0;
    pub const CMD_GET_REGS: u32 = 1;
    pub const CMD_SET_REGS: u32 = 2;
    pub const CMD_STEP: u32 = 3;
    pub const CMD_CONTINUE: u32 = 4;

    pub const STATUS_RUNNING: u32 = 0;
    pub const STATUS_STOPPED: u32 = 1;
    pub const STATUS_HALTED: u32 = 2;
}

// ---------------------------------------------------------------------------
// ISA

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Nop,
    Lui {
        rd: u8,
        imm: u16,
    },
    Addi {
        rd: u8,
        ra: u8,
        imm: i16,
    },
    Add {
        rd: u8,
        ra: u8,
        rb: u8,
    },
    Sub {
        rd: u8,
        ra: u8,
        rb: u8,
    },
    Mul {
        rd: u8,
        ra: u8,
        rb: u8,
    },
    And {
        rd: u8,
        ra: u8,
        rb: u8,
    },
    Or {
        rd: u8,
        ra: u8,
        rb: u8,
    },
    Xor {
        rd: u8,
        ra: u8,
        rb: u8,
    },
    Sll {
        rd: u8,
        ra: u8,
        rb: u8,
    },
    Srl {
        rd: u8,
        ra: u8,
        rb: u8,
    },
    Lw {
        rd: u8,
        ra: u8,
        offset: i16,
    },
    Sw {
        rs: u8,
        ra: u8,
        offset: i16,
    },
    Beq {
        ra: u8,
        rb: u8,
        offset: i16,
    },
    Bne {
        ra: u8,
        rb: u8,
        offset: i16,
    },
    Blt {
        ra: u8,
        rb: u8,
        offset: i16,
    },
    Bge {
        ra: u8,
        rb: u8,
        offset: i16,
    },
    /// `rd = pc + 4; pc += offset * 4`, offset is a signed 21-bit value.
    Jal {
        rd: u8,
        offset: i32,
    },
    Jr {
        ra: u8,
    },
    Trap,
    Halt,
    Sync,
    /// Every lane = low byte of `ra + imm`.
    Vsplat {
        vd: u8,
        ra: u8,
        imm: i16,
    },
    /// Load the weights of synapse row `ra` (low 8 bits), columns `half * 128 ..`.
    Vlw {
        vd: u8,
        ra: u8,
        half: u8,
    },
    /// Store lanes as weights, clamped to 63.
    Vsw {
        vs: u8,
        ra: u8,
        half: u8,
    },
    /// Load causal correlation values; `reset` clears the sensors after reading.
    Vlc {
        vd: u8,
        ra: u8,
        half: u8,
        reset: bool,
    },
    Vaddsat {
        vd: u8,
        va: u8,
        vb: u8,
    },
    Vsubsat {
        vd: u8,
        va: u8,
        vb: u8,
    },
    Vmin {
        vd: u8,
        va: u8,
        vb: u8,
    },
    Vmax {
        vd: u8,
        va: u8,
        vb: u8,
    },
    /// Lane = 0xFF where `va >= vb`, else 0.
    Vcmpge {
        vd: u8,
        va: u8,
        vb: u8,
    },
    /// Lane = `vm != 0 ? va : vb`.
    Vsel {
        vd: u8,
        va: u8,
        vb: u8,
        vm: u8,
    },
    Illegal(u32),
}

pub mod opcode {
    pub const NOP: u32 = 0;
    pub const LUI: u32 = 1;
    pub const ADDI: u32 = 2;
    pub const ADD: u32 = 3;
    pub const SUB: u32 = 4;
    pub const MUL: u32 = 5;
    pub const AND: u32 = 6;
    pub const OR: u32 = 7;
    pub const XOR: u32 = 8;
    pub const SLL: u32 = 9;
    pub const SRL: u32 = 10;
    pub const LW: u32 = 11;
    pub const SW: u32 = 12;
    pub const BEQ: u32 = 13;
    pub const BNE: u32 = 14;
    pub const BLT: u32 = 15;
    pub const BGE: u32 = 16;
    pub const JAL: u32 = 17;
    pub const JR: u32 = 18;
    pub const TRAP: u32 = 19;
    pub const HALT: u32 = 20;
    pub const SYNC: u32 = 21;
    pub const VSPLAT: u32 = 32;
    pub const VLW: u32 = 33;
    pub const VSW: u32 = 34;
    pub const VLC: u32 = 35;
    pub const VADDSAT: u32 = 36;
    pub const VSUBSAT: u32 = 37;
    pub const VMIN: u32 = 38;
    pub const VMAX: u32 = 39;
    pub const VCMPGE: u32 = 40;
    pub const VSEL: u32 = 41;
}

fn f_a(w: u32) -> u8 {
    (w >> 21 & 0x1F) as u8
}
fn f_b(w: u32) -> u8 {
    (w >> 16 & 0x1F) as u8
}
fn f_c(w: u32) -> u8 {
    (w >> 11 & 0x1F) as u8
}
fn f_d(w: u32) -> u8 {
    (w >> 6 & 0x1F) as u8
}

fn pack(op: u32, a: u8, b: u8, c: u8, d: u8) -> u32 {
    op << 26 | (a as u32) << 21 | (b as u32) << 16 | (c as u32) << 11 | (d as u32) << 6
}

fn pack_imm(op: u32, a: u8, b: u8, imm: u16) -> u32 {
    op << 26 | (a as u32) << 21 | (b as u32) << 16 | imm as u32
}

fn sign_extend21(v: u32) -> i32 {
    ((v << 11) as i32) >> 11
}

pub const JAL_OFFSET_MIN: i32 = -(1 << 20);
pub const JAL_OFFSET_MAX: i32 = (1 << 20) - 1;

/// Decode one instruction word. Never fails; unknown or non-canonical words are `Illegal`.
pub fn decode(w: u32) -> Instruction {
    use opcode::*;
    use Instruction as I;
    let op = w >> 26;
    let (a, b, c) = (f_a(w), f_b(w), f_c(w));
    let imm = w as u16;
    let decoded = match op {
        NOP => I::Nop,
        LUI => I::Lui { rd: a, imm },
        ADDI => I::Addi {
            rd: a,
            ra: b,
            imm: imm as i16,
        },
        ADD => I::Add { rd: a, ra: b, rb: c },
        SUB => I::Sub { rd: a, ra: b, rb: c },
        MUL => I::Mul { rd: a, ra: b, rb: c },
        AND => I::And { rd: a, ra: b, rb: c },
        OR => I::Or { rd: a, ra: b, rb: c },
        XOR => I::Xor { rd: a, ra: b, rb: c },
        SLL => I::Sll { rd: a, ra: b, rb: c },
        SRL => I::Srl { rd: a, ra: b, rb: c },
        LW => I::Lw {
            rd: a,
            ra: b,
            offset: imm as i16,
        },
        SW => I::Sw {
            rs: a,
            ra: b,
            offset: imm as i16,
        },
        BEQ => I::Beq {
            ra: a,
            rb: b,
            offset: imm as i16,
        },
        BNE => I::Bne {
            ra: a,
            rb: b,
            offset: imm as i16,
        },
        BLT => I::Blt {
            ra: a,
            rb: b,
            offset: imm as i16,
        },
        BGE => I::Bge {
            ra: a,
            rb: b,
            offset: imm as i16,
        },
        JAL => I::Jal {
            rd: a,
            offset: sign_extend21(w & 0x1F_FFFF),
        },
        JR => I::Jr { ra: b },
        TRAP => I::Trap,
        HALT => I::Halt,
        SYNC => I::Sync,
        VSPLAT => I::Vsplat {
            vd: a,
            ra: b,
            imm: imm as i16,
        },
        VLW => I::Vlw {
            vd: a,
            ra: b,
            half: (imm & 1) as u8,
        },
        VSW => I::Vsw {
            vs: a,
            ra: b,
            half: (imm & 1) as u8,
        },
        VLC => I::Vlc {
            vd: a,
            ra: b,
            half: (imm & 1) as u8,
            reset: imm & 2 != 0,
        },
        VADDSAT => I::Vaddsat { vd: a, va: b, vb: c },
        VSUBSAT => I::Vsubsat { vd: a, va: b, vb: c },
        VMIN => I::Vmin { vd: a, va: b, vb: c },
        VMAX => I::Vmax { vd: a, va: b, vb: c },
        VCMPGE => I::Vcmpge { vd: a, va: b, vb: c },
        VSEL => I::Vsel {
            vd: a,
            va: b,
            vb: c,
            vm: f_d(w),
        },
        _ => return I::Illegal(w),
    };
    // canonical form only: reserved bits zero, vector register numbers < 8
    if decoded.is_valid() && encode(&decoded) == w {
        decoded
    } else {
        I::Illegal(w)
    }
}

/// Encode an instruction. `Illegal(w)` encodes back to `w`.
pub fn encode(instr: &Instruction) -> u32 {
    use opcode::*;
    use Instruction as I;
    match *instr {
        I::Nop => 0,
        I::Lui { rd, imm } => pack_imm(LUI, rd, 0, imm),
        I::Addi { rd, ra, imm } => pack_imm(ADDI, rd, ra, imm as u16),
        I::Add { rd, ra, rb } => pack(ADD, rd, ra, rb, 0),
        I::Sub { rd, ra, rb } => pack(SUB, rd, ra, rb, 0),
        I::Mul { rd, ra, rb } => pack(MUL, rd, ra, rb, 0),
        I::And { rd, ra, rb } => pack(AND, rd, ra, rb, 0),
        I::Or { rd, ra, rb } => pack(OR, rd, ra, rb, 0),
        I::Xor { rd, ra, rb } => pack(XOR, rd, ra, rb, 0),
        I::Sll { rd, ra, rb } => pack(SLL, rd, ra, rb, 0),
        I::Srl { rd, ra, rb } => pack(SRL, rd, ra, rb, 0),
        I::Lw { rd, ra, offset } => pack_imm(LW, rd, ra, offset as u16),
        I::Sw { rs, ra, offset } => pack_imm(SW, rs, ra, offset as u16),
        I::Beq { ra, rb, offset } => pack_imm(BEQ, ra, rb, offset as u16),
        I::Bne { ra, rb, offset } => pack_imm(BNE, ra, rb, offset as u16),
        I::Blt { ra, rb, offset } => pack_imm(BLT, ra, rb, offset as u16),
        I::Bge { ra, rb, offset } => pack_imm(BGE, ra, rb, offset as u16),
        I::Jal { rd, offset } => JAL << 26 | (rd as u32) << 21 | (offset as u32 & 0x1F_FFFF),
        I::Jr { ra } => pack(JR, 0, ra, 0, 0),
        I::Trap => TRAP << 26,
        I::Halt => HALT << 26,
        I::Sync => SYNC << 26,
        I::Vsplat { vd, ra, imm } => pack_imm(VSPLAT, vd, ra, imm as u16),
        I::Vlw { vd, ra, half } => pack_imm(VLW, vd, ra, half as u16),
        I::Vsw { vs, ra, half } => pack_imm(VSW, vs, ra, half as u16),
        I::Vlc { vd, ra, half, reset } => pack_imm(VLC, vd, ra, half as u16 | (reset as u16) << 1),
        I::Vaddsat { vd, va, vb } => pack(VADDSAT, vd, va, vb, 0),
        I::Vsubsat { vd, va, vb } => pack(VSUBSAT, vd, va, vb, 0),
        I::Vmin { vd, va, vb } => pack(VMIN, vd, va, vb, 0),
        I::Vmax { vd, va, vb } => pack(VMAX, vd, va, vb, 0),
        I::Vcmpge { vd, va, vb } => pack(VCMPGE, vd, va, vb, 0),
        I::Vsel { vd, va, vb, vm } => pack(VSEL, vd, va, vb, vm),
        I::Illegal(w) => w,
    }
}

impl Instruction {
    /// Register numbers and immediates are within their field widths.
    pub fn is_valid(&self) -> bool {
        use Instruction as I;
        let r = |x: u8| (x as usize) < N_SCALAR_REGS;
        let v = |x: u8| (x as usize) < N_VECTOR_REGS;
        match *self {
            I::Nop | I::Trap | I::Halt | I::Sync => true,
            I::Lui { rd, .. } => r(rd),
            I::Addi { rd, ra, .. } | I::Lw { rd, ra, .. } => r(rd) && r(ra),
            I::Sw { rs, ra, .. } => r(rs) && r(ra),
            I::Add { rd, ra, rb }
            | I::Sub { rd, ra, rb }
            | I::Mul { rd, ra, rb }
            | I::And { rd, ra, rb }
            | I::Or { rd, ra, rb }
            | I::Xor { rd, ra, rb }
            | I::Sll { rd, ra, rb }
            | I::Srl { rd, ra, rb } => r(rd) && r(ra) && r(rb),
            I::Beq { ra, rb, .. } | I::Bne { ra, rb, .. } | I::Blt { ra, rb, .. } | I::Bge { ra, rb, .. } => {
                r(ra) && r(rb)
            }
            I::Jal { rd, offset } => r(rd) && (JAL_OFFSET_MIN..=JAL_OFFSET_MAX).contains(&offset),
            I::Jr { ra } => r(ra),
            I::Vsplat { vd, ra, .. } => v(vd) && r(ra),
            I::Vlw { vd, ra, half } | I::Vlc { vd, ra, half, .. } => v(vd) && r(ra) && half < 2,
            I::Vsw { vs, ra, half } => v(vs) && r(ra) && half < 2,
            I::Vaddsat { vd, va, vb }
            | I::Vsubsat { vd, va, vb }
            | I::Vmin { vd, va, vb }
            | I::Vmax { vd, va, vb }
            | I::Vcmpge { vd, va, vb } => v(vd) && v(va) && v(vb),
            I::Vsel { vd, va, vb, vm } => v(vd) && v(va) && v(vb) && v(vm),
            I::Illegal(_) => false,
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        use Instruction as I;
        match self {
            I::Nop => "nop",
            I::Lui { .. } => "lui",
            I::Addi { .. } => "addi",
            I::Add { .. } => "add",
            I::Sub { .. } => "sub",
            I::Mul { .. } => "mul",
            I::And { .. } => "and",
            I::Or { .. } => "or",
            I::Xor { .. } => "xor",
            I::Sll { .. } => "sll",
            I::Srl { .. } => "srl",
            I::Lw { .. } => "lw",
            I::Sw { .. } => "sw",
            I::Beq { .. } => "beq",
            I::Bne { .. } => "bne",
            I::Blt { .. } => "blt",
            I::Bge { .. } => "bge",
            I::Jal { .. } => "jal",
            I::Jr { .. } => "jr",
            I::Trap => "trap",
            I::Halt => "halt",
            I::Sync => "sync",
            I::Vsplat { .. } => "vsplat",
            I::Vlw { .. } => "vlw",
            I::Vsw { .. } => "vsw",
            I::Vlc { .. } => "vlc",
            I::Vaddsat { .. } => "vaddsat",
            I::Vsubsat { .. } => "vsubsat",
            I::Vmin { .. } => "vmin",
            I::Vmax { .. } => "vmax",
            I::Vcmpge { .. } => "vcmpge",
            I::Vsel { .. } => "vsel",
            I::Illegal(_) => ".word",
        }
    }
}

/// Assembly syntax accepted by the assembler; illegal words render as `.word 0x...`.
impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Instruction as I;
        let m = self.mnemonic();
        match *self {
            I::Nop | I::Trap | I::Halt | I::Sync => f.write_str(m),
            I::Lui { rd, imm } => write!(f, "{m} r{rd}, {imm}"),
            I::Addi { rd, ra, imm } => write!(f, "{m} r{rd}, r{ra}, {imm}"),
            I::Add { rd, ra, rb }
            | I::Sub { rd, ra, rb }
            | I::Mul { rd, ra, rb }
            | I::And { rd, ra, rb }
            | I::Or { rd, ra, rb }
            | I::Xor { rd, ra, rb }
            | I::Sll { rd, ra, rb }
            | I::Srl { rd, ra, rb } => write!(f, "{m} r{rd}, r{ra}, r{rb}"),
            I::Lw { rd, ra, offset } => write!(f, "{m} r{rd}, {offset}(r{ra})"),
            I::Sw { rs, ra, offset } => write!(f, "{m} r{rs}, {offset}(r{ra})"),
            I::Beq { ra, rb, offset }
            | I::Bne { ra, rb, offset }
            | I::Blt { ra, rb, offset }
            | I::Bge { ra, rb, offset } => write!(f, "{m} r{ra}, r{rb}, {offset}"),
            I::Jal { rd, offset } => write!(f, "{m} r{rd}, {offset}"),
            I::Jr { ra } => write!(f, "{m} r{ra}"),
            I::Vsplat { vd, ra, imm } => write!(f, "{m} v{vd}, r{ra}, {imm}"),
            I::Vlw { vd, ra, half } => write!(f, "{m} v{vd}, r{ra}, {half}"),
            I::Vsw { vs, ra, half } => write!(f, "{m} v{vs}, r{ra}, {half}"),
            I::Vlc { vd, ra, half, reset } => {
                if reset {
                    write!(f, "{m} v{vd}, r{ra}, {half}, 1")
                } else {
                    write!(f, "{m} v{vd}, r{ra}, {half}")
                }
            }
            I::Vaddsat { vd, va, vb }
            | I::Vsubsat { vd, va, vb }
            | I::Vmin { vd, va, vb }
            | I::Vmax { vd, va, vb }
            | I::Vcmpge { vd, va, vb } => write!(f, "{m} v{vd}, v{va}, v{vb}"),
            I::Vsel { vd, va, vb, vm } => write!(f, "{m} v{vd}, v{va}, v{vb}, v{vm}"),
            I::Illegal(w) => write!(f, ".word 0x{w:08x}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Core

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CoreStatus {
    /// Held in reset by the control register.
    #[default]
    Reset,
    Running,
    /// Inside the debug handler, polling the mailbox.
    Trapped,
    Halted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrapCause {
    Breakpoint,
    DebugInterrupt,
    Step,
    IllegalInstruction(u32),
    UnalignedAccess(u32),
    BusError(u32),
}

impl TrapCause {
    /// `(code, detail)` pair used in serialized fault records.
    pub fn to_code(self) -> (u8, u32) {
        match self {
            TrapCause::Breakpoint => (1, 0),
            TrapCause::DebugInterrupt => (2, 0),
            TrapCause::Step => (3, 0),
            TrapCause::IllegalInstruction(w) => (4, w),
            TrapCause::UnalignedAccess(a) => (5, a),
            TrapCause::BusError(a) => (6, a),
        }
    }

    pub fn from_code(code: u8, detail: u32) -> Option<Self> {
        Some(match code {
            1 => TrapCause::Breakpoint,
            2 => TrapCause::DebugInterrupt,
            3 => TrapCause::Step,
            4 => TrapCause::IllegalInstruction(detail),
            5 => TrapCause::UnalignedAccess(detail),
            6 => TrapCause::BusError(detail),
            _ => return None,
        })
    }

    /// Program errors, as opposed to deliberate stops.
    pub fn is_fault(self) -> bool {
        matches!(
            self,
            TrapCause::IllegalInstruction(_) | TrapCause::UnalignedAccess(_) | TrapCause::BusError(_)
        )
    }
}

impl fmt::Display for TrapCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrapCause::Breakpoint => f.write_str("breakpoint"),
            TrapCause::DebugInterrupt => f.write_str("debug interrupt"),
            TrapCause::Step => f.write_str("single step"),
            TrapCause::IllegalInstruction(w) => write!(f, "illegal instruction 0x{w:08x}"),
            TrapCause::UnalignedAccess(a) => write!(f, "unaligned access at 0x{a:08x}"),
            TrapCause::BusError(a) => write!(f, "bus error at 0x{a:08x}"),
        }
    }
}

/// The chip as seen from one PPU: register bus plus the vector synapse port
/// of the PPU's own hemisphere.
pub trait ChipPort {
    /// `None` for unmapped addresses.
    fn bus_read(&mut self, address: u32) -> Option<u32>;
    fn bus_write(&mut self, address: u32, word: u32) -> Option<()>;
    fn load_weights(&mut self, row: usize, half: usize, lanes: &mut [u8; VECTOR_LANES]);
    /// Implementations clamp each lane to the weight range.
    fn store_weights(&mut self, row: usize, half: usize, lanes: &[u8; VECTOR_LANES]);
    fn load_correlation(&mut self, row: usize, half: usize, reset: bool, lanes: &mut [u8; VECTOR_LANES]);
}

/// What a single [`PpuCore::step`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    /// Nothing to do (reset or halted).
    Idle,
    Executed,
    /// Entered the debug handler.
    Trapped {
        pc: u32,
        cause: TrapCause,
    },
    /// Handler polled the mailbox without a pending command.
    Polled,
    Halted,
}

#[derive(Clone, PartialEq, Eq)]
pub struct PpuCore {
    pub regs: [u32; N_SCALAR_REGS],
    pub pc: u32,
    pub status: CoreStatus,
    pub vregs: [[u8; VECTOR_LANES]; N_VECTOR_REGS],
    pub last_trap: Option<TrapCause>,
    sram: Box<[u8]>,
    debug_pending: bool,
}

impl fmt::Debug for PpuCore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PpuCore")
            .field("pc", &format_args!("0x{:04x}", self.pc))
            .field("status", &self.status)
            .field("regs", &self.regs)
            .field("last_trap", &self.last_trap)
            .finish_non_exhaustive()
    }
}

impl Default for PpuCore {
    fn default() -> Self {
        Self::new()
    }
}

impl PpuCore {
    pub fn new() -> Self {
        Self {
            regs: [0; N_SCALAR_REGS],
            pc: 0,
            status: CoreStatus::Reset,
            vregs: [[0; VECTOR_LANES]; N_VECTOR_REGS],
            last_trap: None,
            sram: vec![0; SRAM_BYTES].into_boxed_slice(),
            debug_pending: false,
        }
    }

    pub fn sram(&self) -> &[u8] {
        &self.sram
    }

    /// Big-endian SRAM word by word index.
    pub fn sram_word(&self, index: usize) -> u32 {
        let b = &self.sram[index * 4..index * 4 + 4];
        u32::from_be_bytes([b[0], b[1], b[2], b[3]])
    }

    pub fn set_sram_word(&mut self, index: usize, word: u32) {
        self.sram[index * 4..index * 4 + 4].copy_from_slice(&word.to_be_bytes());
    }

    fn mem_word(&self, byte_addr: u32) -> u32 {
        self.sram_word(byte_addr as usize / 4)
    }

    fn set_mem_word(&mut self, byte_addr: u32, word: u32) {
        self.set_sram_word(byte_addr as usize / 4, word);
    }

    /// Assert reset: architectural state cleared, SRAM kept.
    pub fn hold_reset(&mut self) {
        self.regs = [0; N_SCALAR_REGS];
        self.vregs = [[0; VECTOR_LANES]; N_VECTOR_REGS];
        self.pc = 0;
        self.status = CoreStatus::Reset;
        self.last_trap = None;
    }

    /// Release reset: start fetching at address 0, or stop in the debug
    /// handler right away if an interrupt is pending.
    pub fn release_reset(&mut self) {
        if self.status != CoreStatus::Reset {
            return;
        }
        self.status = CoreStatus::Running;
        self.set_mem_word(mailbox::STATUS, mailbox::STATUS_RUNNING);
        if self.debug_pending {
            self.debug_pending = false;
            self.enter_debug(TrapCause::DebugInterrupt);
        }
    }

    /// Latch a host debug interrupt; taken before the next instruction.
    pub fn request_debug(&mut self) {
        match self.status {
            CoreStatus::Reset | CoreStatus::Running => self.debug_pending = true,
            CoreStatus::Trapped | CoreStatus::Halted => {}
        }
    }

    /// Dump registers and pc to the mailbox and park in the handler.
    pub fn enter_debug(&mut self, cause: TrapCause) {
        self.dump_registers();
        self.set_mem_word(mailbox::STATUS, mailbox::STATUS_STOPPED);
        self.status = CoreStatus::Trapped;
        self.last_trap = Some(cause);
    }

    fn dump_registers(&mut self) {
        for i in 0..N_SCALAR_REGS {
            self.set_mem_word(mailbox::REGS + 4 * i as u32, self.regs[i]);
        }
        self.set_mem_word(mailbox::REGS + 4 * 32, self.pc);
    }

    fn restore_registers(&mut self) {
        for i in 0..N_SCALAR_REGS {
            self.regs[i] = self.mem_word(mailbox::REGS + 4 * i as u32);
        }
        self.pc = self.mem_word(mailbox::REGS + 4 * 32) & !3;
    }

    /// Advance by one instruction, or by one mailbox poll while trapped.
    pub fn step(&mut self, chip: &mut dyn ChipPort) -> StepEvent {
        match self.status {
            CoreStatus::Reset | CoreStatus::Halted => StepEvent::Idle,
            CoreStatus::Trapped => self.serve_mailbox(chip),
            CoreStatus::Running => {
                if self.debug_pending {
                    self.debug_pending = false;
                    self.enter_debug(TrapCause::DebugInterrupt);
                    return StepEvent::Trapped {
                        pc: self.pc,
                        cause: TrapCause::DebugInterrupt,
                    };
                }
                self.execute_one(chip)
            }
        }
    }

    fn serve_mailbox(&mut self, chip: &mut dyn ChipPort) -> StepEvent {
        let command = self.mem_word(mailbox::COMMAND);
        match command {
            mailbox::CMD_IDLE => return StepEvent::Polled,
            mailbox::CMD_GET_REGS => self.dump_registers(),
            mailbox::CMD_SET_REGS => self.restore_registers(),
            mailbox::CMD_STEP => {
                self.set_mem_word(mailbox::COMMAND, mailbox::CMD_IDLE);
                self.status = CoreStatus::Running;
                let event = self.execute_one(chip);
                return match event {
                    StepEvent::Executed => {
                        self.enter_debug(TrapCause::Step);
                        StepEvent::Trapped {
                            pc: self.pc,
                            cause: TrapCause::Step,
                        }
                    }
                    other => other,
                };
            }
            mailbox::CMD_CONTINUE => {
                self.set_mem_word(mailbox::COMMAND, mailbox::CMD_IDLE);
                self.set_mem_word(mailbox::STATUS, mailbox::STATUS_RUNNING);
                self.status = CoreStatus::Running;
                return StepEvent::Executed;
            }
            _ => {}
        }
        self.set_mem_word(mailbox::COMMAND, mailbox::CMD_IDLE);
        StepEvent::Polled
    }

    fn trap(&mut self, cause: TrapCause) -> StepEvent {
        self.enter_debug(cause);
        StepEvent::Trapped { pc: self.pc, cause }
    }

    fn load(&mut self, chip: &mut dyn ChipPort, addr: u32) -> Result<u32, TrapCause> {
        if addr < SRAM_BYTES as u32 {
            if !addr.is_multiple_of(4) {
                return Err(TrapCause::UnalignedAccess(addr));
            }
            Ok(self.mem_word(addr))
        } else if addr >= crate::hal::address::PPU_BUS_BASE {
            chip.bus_read(addr).ok_or(TrapCause::BusError(addr))
        } else {
            Err(TrapCause::BusError(addr))
        }
    }

    fn store(&mut self, chip: &mut dyn ChipPort, addr: u32, word: u32) -> Result<(), TrapCause> {
        if addr < SRAM_BYTES as u32 {
            if !addr.is_multiple_of(4) {
                return Err(TrapCause::UnalignedAccess(addr));
            }
            self.set_mem_word(addr, word);
            Ok(())
        } else if addr >= crate::hal::address::PPU_BUS_BASE {
            chip.bus_write(addr, word).ok_or(TrapCause::BusError(addr))
        } else {
            Err(TrapCause::BusError(addr))
        }
    }

    fn lanes2(&mut self, vd: u8, va: u8, vb: u8, f: impl Fn(u8, u8) -> u8) {
        let a = self.vregs[va as usize];
        let b = self.vregs[vb as usize];
        let d = &mut self.vregs[vd as usize];
        for i in 0..VECTOR_LANES {
            d[i] = f(a[i], b[i]);
        }
    }

    fn execute_one(&mut self, chip: &mut dyn ChipPort) -> StepEvent {
        use Instruction as I;
        let pc = self.pc;
        if !pc.is_multiple_of(4) {
            return self.trap(TrapCause::UnalignedAccess(pc));
        }
        if pc >= SRAM_BYTES as u32 {
            return self.trap(TrapCause::BusError(pc));
        }
        let instr = decode(self.mem_word(pc));
        let mut next = pc.wrapping_add(4);
        let r = |s: &Self, i: u8| s.regs[i as usize];
        let branch = |off: i16| pc.wrapping_add((off as i32 as u32).wrapping_mul(4));
        match instr {
            I::Nop | I::Sync => {}
            I::Lui { rd, imm } => self.regs[rd as usize] = (imm as u32) << 16,
            I::Addi { rd, ra, imm } => self.regs[rd as usize] = r(self, ra).wrapping_add(imm as i32 as u32),
            I::Add { rd, ra, rb } => self.regs[rd as usize] = r(self, ra).wrapping_add(r(self, rb)),
            I::Sub { rd, ra, rb } => self.regs[rd as usize] = r(self, ra).wrapping_sub(r(self, rb)),
            I::Mul { rd, ra, rb } => self.regs[rd as usize] = r(self, ra).wrapping_mul(r(self, rb)),
            I::And { rd, ra, rb } => self.regs[rd as usize] = r(self, ra) & r(self, rb),
            I::Or { rd, ra, rb } => self.regs[rd as usize] = r(self, ra) | r(self, rb),
            I::Xor { rd, ra, rb } => self.regs[rd as usize] = r(self, ra) ^ r(self, rb),
            I::Sll { rd, ra, rb } => self.regs[rd as usize] = r(self, ra).wrapping_shl(r(self, rb) & 31),
            I::Srl { rd, ra, rb } => self.regs[rd as usize] = r(self, ra).wrapping_shr(r(self, rb) & 31),
            I::Lw { rd, ra, offset } => {
                let addr = r(self, ra).wrapping_add(offset as i32 as u32);
                match self.load(chip, addr) {
                    Ok(v) => self.regs[rd as usize] = v,
                    Err(cause) => return self.trap(cause),
                }
            }
            I::Sw { rs, ra, offset } => {
                let addr = r(self, ra).wrapping_add(offset as i32 as u32);
                if let Err(cause) = self.store(chip, addr, r(self, rs)) {
                    return self.trap(cause);
                }
            }
            I::Beq { ra, rb, offset } => {
                if r(self, ra) == r(self, rb) {
                    next = branch(offset);
                }
            }
            I::Bne { ra, rb, offset } => {
                if r(self, ra) != r(self, rb) {
                    next = branch(offset);
                }
            }
            I::Blt { ra, rb, offset } => {
                if (r(self, ra) as i32) < (r(self, rb) as i32) {
                    next = branch(offset);
                }
            }
            I::Bge { ra, rb, offset } => {
                if (r(self, ra) as i32) >= (r(self, rb) as i32) {
                    next = branch(offset);
                }
            }
            I::Jal { rd, offset } => {
                self.regs[rd as usize] = pc.wrapping_add(4);
                next = pc.wrapping_add((offset as u32).wrapping_mul(4));
            }
            I::Jr { ra } => next = r(self, ra),
            I::Trap => return self.trap(TrapCause::Breakpoint),
            I::Halt => {
                self.status = CoreStatus::Halted;
                self.set_mem_word(mailbox::STATUS, mailbox::STATUS_HALTED);
                return StepEvent::Halted;
            }
            I::Vsplat { vd, ra, imm } => {
                let b = r(self, ra).wrapping_add(imm as i32 as u32) as u8;
                self.vregs[vd as usize] = [b; VECTOR_LANES];
            }
            I::Vlw { vd, ra, half } => {
                let row = (r(self, ra) & 0xFF) as usize;
                chip.load_weights(row, half as usize, &mut self.vregs[vd as usize]);
            }
            I::Vsw { vs, ra, half } => {
                let row = (r(self, ra) & 0xFF) as usize;
                chip.store_weights(row, half as usize, &self.vregs[vs as usize]);
            }
            I::Vlc { vd, ra, half, reset } => {
                let row = (r(self, ra) & 0xFF) as usize;
                chip.load_correlation(row, half as usize, reset, &mut self.vregs[vd as usize]);
            }
            I::Vaddsat { vd, va, vb } => self.lanes2(vd, va, vb, |a, b| a.saturating_add(b)),
            I::Vsubsat { vd, va, vb } => self.lanes2(vd, va, vb, |a, b| a.saturating_sub(b)),
            I::Vmin { vd, va, vb } => self.lanes2(vd, va, vb, |a, b| a.min(b)),
            I::Vmax { vd, va, vb } => self.lanes2(vd, va, vb, |a, b| a.max(b)),
            I::Vcmpge { vd, va, vb } => self.lanes2(vd, va, vb, |a, b| if a >= b { 0xFF } else { 0 }),
            I::Vsel { vd, va, vb, vm } => {
                let a = self.vregs[va as usize];
                let b = self.vregs[vb as usize];
                let m = self.vregs[vm as usize];
                let d = &mut self.vregs[vd as usize];
                for i in 0..VECTOR_LANES {
                    d[i] = if m[i] != 0 { a[i] } else { b[i] };
                }
            }
            I::Illegal(w) => return self.trap(TrapCause::IllegalInstruction(w)),
        }
        self.pc = next;
        StepEvent::Executed
    }
}
