//! Two-pass assembler for the PPU instruction set.
//!
//! Syntax is line based. Each line may hold a `label:`, then one statement,
//! then a `#` comment. Directives:
//!
//! * `.text`, `.data` switch section
//! * `.word expr[, expr...]` emits 32-bit words
//! * `.space n` reserves `n` zero bytes (multiple of 4)
//! * `.global name` exports a label
//! * `.equ name, expr` defines a constant
//!
//! Expressions are sums and differences of numbers (decimal or `0x` hex) and
//! symbols; labels evaluate to their SRAM byte address. Memory operands are
//! written `offset(rN)`. Branch targets are labels or raw word offsets.
//!
//! `li rd, expr` is a two-word pseudo instruction (`lui` + `addi`) loading any
//! 32-bit value.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use super::{ObjectImage, Section, Symbol, SymbolTable};
use crate::ppu::{self, Instruction};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

fn diag<T>(line: usize, message: impl Into<String>) -> Result<T, Diagnostic> {
    Err(Diagnostic {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone)]
enum Item {
    Instr { mnemonic: String, operands: Vec<String> },
    Words(Vec<String>),
    Space(u32),
}

#[derive(Debug, Clone)]
struct Stmt {
    line: usize,
    section: Section,
    offset: u32,
    item: Item,
}

fn item_size(item: &Item) -> u32 {
    match item {
        Item::Instr { mnemonic, .. } if mnemonic == "li" => 8,
        Item::Instr { .. } => 4,
        Item::Words(w) => 4 * w.len() as u32,
        Item::Space(n) => *n,
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn split_operands(s: &str) -> Vec<String> {
    if s.trim().is_empty() {
        return Vec::new();
    }
    s.split(',').map(|o| o.trim().to_string()).collect()
}

fn parse_number(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else if body.chars().all(|c| c.is_ascii_digit()) && !body.is_empty() {
        body.parse().ok()?
    } else {
        return None;
    };
    Some(if neg { -v } else { v })
}

struct Assembler {
    labels: HashMap<String, (Section, u32)>,
    label_order: Vec<(String, Section, u32)>,
    equs: HashMap<String, i64>,
    globals: Vec<(String, usize)>,
    text_size: u32,
    data_size: u32,
}

impl Assembler {
    fn data_base(&self) -> u32 {
        (self.text_size + 3) & !3
    }

    fn address_of(&self, section: Section, offset: u32) -> u32 {
        match section {
            Section::Text => offset,
            Section::Data => self.data_base() + offset,
        }
    }

    fn symbol_value(&self, name: &str) -> Option<i64> {
        if let Some(&(sec, off)) = self.labels.get(name) {
            return Some(self.address_of(sec, off) as i64);
        }
        self.equs.get(name).copied()
    }

    /// Evaluate `term (+|- term)*`.
    fn eval(&self, line: usize, expr: &str) -> Result<i64, Diagnostic> {
        let expr = expr.trim();
        if expr.is_empty() {
            return diag(line, "missing operand");
        }
        let mut total = 0i64;
        let mut sign = 1i64;
        let mut term = String::new();
        let flush = |term: &mut String, sign: i64, total: &mut i64| -> Result<(), Diagnostic> {
            let t = term.trim();
            if t.is_empty() {
                return diag(line, format!("malformed expression `{expr}`"));
            }
            let v = if let Some(v) = parse_number(t) {
                v
            } else if is_ident(t) {
                match self.symbol_value(t) {
                    Some(v) => v,
                    None => return diag(line, format!("undefined symbol `{t}`")),
                }
            } else {
                return diag(line, format!("bad operand `{t}`"));
            };
            *total += sign * v;
            term.clear();
            Ok(())
        };
        for c in expr.chars() {
            if (c == '+' || c == '-') && !term.trim().is_empty() {
                flush(&mut term, sign, &mut total)?;
                sign = if c == '+' { 1 } else { -1 };
            } else {
                term.push(c);
            }
        }
        flush(&mut term, sign, &mut total)?;
        Ok(total)
    }
}

fn reg(line: usize, s: &str, prefix: char, count: usize) -> Result<u8, Diagnostic> {
    let s = s.trim();
    let n = s
        .strip_prefix(prefix)
        .or_else(|| s.strip_prefix(prefix.to_ascii_uppercase()))
        .and_then(|d| d.parse::<usize>().ok());
    match n {
        Some(n) if n < count => Ok(n as u8),
        _ => diag(
            line,
            format!("expected {prefix}0..{prefix}{} register, got `{s}`", count - 1),
        ),
    }
}

fn r(line: usize, s: &str) -> Result<u8, Diagnostic> {
    reg(line, s, 'r', ppu::N_SCALAR_REGS)
}

fn v(line: usize, s: &str) -> Result<u8, Diagnostic> {
    reg(line, s, 'v', ppu::N_VECTOR_REGS)
}

fn check_range(line: usize, value: i64, min: i64, max: i64, what: &str) -> Result<i64, Diagnostic> {
    if value < min || value > max {
        return diag(line, format!("{what} {value} out of range [{min}, {max}]"));
    }
    Ok(value)
}

fn simm16(line: usize, value: i64) -> Result<i16, Diagnostic> {
    Ok(check_range(line, value, i16::MIN as i64, i16::MAX as i64, "immediate")? as i16)
}

/// `offset(rN)`
fn mem_operand(asm: &Assembler, line: usize, s: &str) -> Result<(i16, u8), Diagnostic> {
    let s = s.trim();
    let Some(open) = s.rfind('(') else {
        return diag(line, format!("expected offset(rN), got `{s}`"));
    };
    let Some(inner) = s[open + 1..].strip_suffix(')') else {
        return diag(line, format!("expected offset(rN), got `{s}`"));
    };
    let base = r(line, inner)?;
    let off_text = s[..open].trim();
    let off = if off_text.is_empty() {
        0
    } else {
        asm.eval(line, off_text)?
    };
    Ok((simm16(line, off)?, base))
}

fn expect_operands(line: usize, mnemonic: &str, ops: &[String], n: usize) -> Result<(), Diagnostic> {
    if ops.len() != n {
        return diag(line, format!("`{mnemonic}` takes {n} operands, got {}", ops.len()));
    }
    Ok(())
}

/// Branch/jump target: a bare number is a raw word offset, anything else an address.
fn branch_offset(asm: &Assembler, line: usize, pc: u32, target: &str) -> Result<i64, Diagnostic> {
    if let Some(n) = parse_number(target.trim()) {
        return Ok(n);
    }
    let addr = asm.eval(line, target)?;
    let delta = addr - pc as i64;
    if delta % 4 != 0 {
        return diag(line, format!("branch target `{target}` not word aligned"));
    }
    Ok(delta / 4)
}

fn encode_instr(asm: &Assembler, line: usize, pc: u32, mnemonic: &str, ops: &[String]) -> Result<Vec<u32>, Diagnostic> {
    use Instruction as I;
    let n = |k| expect_operands(line, mnemonic, ops, k);
    let rrr = |ctor: fn(u8, u8, u8) -> Instruction| -> Result<Instruction, Diagnostic> {
        n(3)?;
        Ok(ctor(r(line, &ops[0])?, r(line, &ops[1])?, r(line, &ops[2])?))
    };
    let vvv = |ctor: fn(u8, u8, u8) -> Instruction| -> Result<Instruction, Diagnostic> {
        n(3)?;
        Ok(ctor(v(line, &ops[0])?, v(line, &ops[1])?, v(line, &ops[2])?))
    };
    let branch = |ctor: fn(u8, u8, i16) -> Instruction| -> Result<Instruction, Diagnostic> {
        n(3)?;
        let off = branch_offset(asm, line, pc, &ops[2])?;
        let off = check_range(line, off, i16::MIN as i64, i16::MAX as i64, "branch offset")?;
        Ok(ctor(r(line, &ops[0])?, r(line, &ops[1])?, off as i16))
    };
    let half = |s: &str| -> Result<u8, Diagnostic> { Ok(check_range(line, asm.eval(line, s)?, 0, 1, "half")? as u8) };
    let instr = match mnemonic {
        "nop" => n(0).map(|_| I::Nop)?,
        "trap" => n(0).map(|_| I::Trap)?,
        "halt" => n(0).map(|_| I::Halt)?,
        "sync" => n(0).map(|_| I::Sync)?,
        "lui" => {
            n(2)?;
            let imm = check_range(
                line,
                asm.eval(line, &ops[1])?,
                i16::MIN as i64,
                u16::MAX as i64,
                "immediate",
            )?;
            I::Lui {
                rd: r(line, &ops[0])?,
                imm: imm as u16,
            }
        }
        "addi" => {
            n(3)?;
            I::Addi {
                rd: r(line, &ops[0])?,
                ra: r(line, &ops[1])?,
                imm: simm16(line, asm.eval(line, &ops[2])?)?,
            }
        }
        "li" => {
            n(2)?;
            let rd = r(line, &ops[0])?;
            let value = check_range(
                line,
                asm.eval(line, &ops[1])?,
                i32::MIN as i64,
                u32::MAX as i64,
                "immediate",
            )? as u32;
            let lo = value as u16 as i16;
            let hi = (value.wrapping_sub(lo as i32 as u32) >> 16) as u16;
            return Ok(vec![
                ppu::encode(&I::Lui { rd, imm: hi }),
                ppu::encode(&I::Addi { rd, ra: rd, imm: lo }),
            ]);
        }
        "add" => rrr(|rd, ra, rb| I::Add { rd, ra, rb })?,
        "sub" => rrr(|rd, ra, rb| I::Sub { rd, ra, rb })?,
        "mul" => rrr(|rd, ra, rb| I::Mul { rd, ra, rb })?,
        "and" => rrr(|rd, ra, rb| I::And { rd, ra, rb })?,
        "or" => rrr(|rd, ra, rb| I::Or { rd, ra, rb })?,
        "xor" => rrr(|rd, ra, rb| I::Xor { rd, ra, rb })?,
        "sll" => rrr(|rd, ra, rb| I::Sll { rd, ra, rb })?,
        "srl" => rrr(|rd, ra, rb| I::Srl { rd, ra, rb })?,
        "lw" => {
            n(2)?;
            let (offset, ra) = mem_operand(asm, line, &ops[1])?;
            I::Lw {
                rd: r(line, &ops[0])?,
                ra,
                offset,
            }
        }
        "sw" => {
            n(2)?;
            let (offset, ra) = mem_operand(asm, line, &ops[1])?;
            I::Sw {
                rs: r(line, &ops[0])?,
                ra,
                offset,
            }
        }
        "beq" => branch(|ra, rb, offset| I::Beq { ra, rb, offset })?,
        "bne" => branch(|ra, rb, offset| I::Bne { ra, rb, offset })?,
        "blt" => branch(|ra, rb, offset| I::Blt { ra, rb, offset })?,
        "bge" => branch(|ra, rb, offset| I::Bge { ra, rb, offset })?,
        "jal" => {
            let (rd, target) = match ops.len() {
                1 => (31, &ops[0]),
                2 => (r(line, &ops[0])?, &ops[1]),
                k => return diag(line, format!("`jal` takes 1 or 2 operands, got {k}")),
            };
            let off = branch_offset(asm, line, pc, target)?;
            let off = check_range(
                line,
                off,
                ppu::JAL_OFFSET_MIN as i64,
                ppu::JAL_OFFSET_MAX as i64,
                "jump offset",
            )?;
            I::Jal { rd, offset: off as i32 }
        }
        "jr" => {
            n(1)?;
            I::Jr { ra: r(line, &ops[0])? }
        }
        "vsplat" => match ops.len() {
            2 => I::Vsplat {
                vd: v(line, &ops[0])?,
                ra: 0,
                imm: simm16(line, asm.eval(line, &ops[1])?)?,
            },
            3 => I::Vsplat {
                vd: v(line, &ops[0])?,
                ra: r(line, &ops[1])?,
                imm: simm16(line, asm.eval(line, &ops[2])?)?,
            },
            k => return diag(line, format!("`vsplat` takes 2 or 3 operands, got {k}")),
        },
        "vlw" => {
            n(3)?;
            I::Vlw {
                vd: v(line, &ops[0])?,
                ra: r(line, &ops[1])?,
                half: half(&ops[2])?,
            }
        }
        "vsw" => {
            n(3)?;
            I::Vsw {
                vs: v(line, &ops[0])?,
                ra: r(line, &ops[1])?,
                half: half(&ops[2])?,
            }
        }
        "vlc" => {
            let reset = match ops.len() {
                3 => false,
                4 => check_range(line, asm.eval(line, &ops[3])?, 0, 1, "reset flag")? == 1,
                k => return diag(line, format!("`vlc` takes 3 or 4 operands, got {k}")),
            };
            I::Vlc {
                vd: v(line, &ops[0])?,
                ra: r(line, &ops[1])?,
                half: half(&ops[2])?,
                reset,
            }
        }
        "vaddsat" => vvv(|vd, va, vb| I::Vaddsat { vd, va, vb })?,
        "vsubsat" => vvv(|vd, va, vb| I::Vsubsat { vd, va, vb })?,
        "vmin" => vvv(|vd, va, vb| I::Vmin { vd, va, vb })?,
        "vmax" => vvv(|vd, va, vb| I::Vmax { vd, va, vb })?,
        "vcmpge" => vvv(|vd, va, vb| I::Vcmpge { vd, va, vb })?,
        "vsel" => {
            n(4)?;
            I::Vsel {
                vd: v(line, &ops[0])?,
                va: v(line, &ops[1])?,
                vb: v(line, &ops[2])?,
                vm: v(line, &ops[3])?,
            }
        }
        other => return diag(line, format!("unknown mnemonic `{other}`")),
    };
    Ok(vec![ppu::encode(&instr)])
}

/// Assemble source text into an object image.
pub fn assemble(source: &str) -> Result<ObjectImage, Diagnostic> {
    let mut asm = Assembler {
        labels: HashMap::new(),
        label_order: Vec::new(),
        equs: HashMap::new(),
        globals: Vec::new(),
        text_size: 0,
        data_size: 0,
    };
    let mut stmts = Vec::new();
    let mut section = Section::Text;

    // pass 1: layout and labels
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let mut text = raw.split('#').next().unwrap_or("").trim();
        while let Some(colon) = text.find(':') {
            let label = text[..colon].trim();
            if !is_ident(label) {
                break;
            }
            if asm.labels.contains_key(label) || asm.equs.contains_key(label) {
                return diag(line, format!("duplicate label `{label}`"));
            }
            let offset = match section {
                Section::Text => asm.text_size,
                Section::Data => asm.data_size,
            };
            asm.labels.insert(label.to_string(), (section, offset));
            asm.label_order.push((label.to_string(), section, offset));
            text = text[colon + 1..].trim();
        }
        if text.is_empty() {
            continue;
        }
        let (head, rest) = match text.find(char::is_whitespace) {
            Some(i) => (&text[..i], text[i..].trim()),
            None => (text, ""),
        };
        let head = head.to_ascii_lowercase();
        let item = match head.as_str() {
            ".text" => {
                section = Section::Text;
                continue;
            }
            ".data" => {
                section = Section::Data;
                continue;
            }
            ".global" | ".globl" => {
                for name in split_operands(rest) {
                    if !is_ident(&name) {
                        return diag(line, format!("bad symbol name `{name}`"));
                    }
                    asm.globals.push((name, line));
                }
                continue;
            }
            ".equ" | ".set" => {
                let ops = split_operands(rest);
                if ops.len() != 2 || !is_ident(&ops[0]) {
                    return diag(line, "expected `.equ name, value`");
                }
                if asm.labels.contains_key(&ops[0]) || asm.equs.contains_key(&ops[0]) {
                    return diag(line, format!("duplicate label `{}`", ops[0]));
                }
                // value may reference earlier constants only
                let value = asm.eval(line, &ops[1])?;
                asm.equs.insert(ops[0].clone(), value);
                continue;
            }
            ".word" => {
                let ops = split_operands(rest);
                if ops.is_empty() {
                    return diag(line, "`.word` needs at least one value");
                }
                Item::Words(ops)
            }
            ".space" => {
                let n = asm.eval(line, rest)?;
                if n < 0 || n % 4 != 0 {
                    return diag(line, format!("`.space {n}` must be a non-negative multiple of 4"));
                }
                Item::Space(n as u32)
            }
            d if d.starts_with('.') => return diag(line, format!("unknown directive `{d}`")),
            m => {
                if section == Section::Data {
                    return diag(line, format!("instruction `{m}` in .data"));
                }
                Item::Instr {
                    mnemonic: m.to_string(),
                    operands: split_operands(rest),
                }
            }
        };
        let size = item_size(&item);
        let offset = match section {
            Section::Text => &mut asm.text_size,
            Section::Data => &mut asm.data_size,
        };
        stmts.push(Stmt {
            line,
            section,
            offset: *offset,
            item,
        });
        *offset += size;
    }

    // pass 2: encoding
    let mut text = Vec::with_capacity(asm.text_size as usize);
    let mut data = Vec::with_capacity(asm.data_size as usize);
    for stmt in &stmts {
        let pc = asm.address_of(stmt.section, stmt.offset);
        let words = match &stmt.item {
            Item::Instr { mnemonic, operands } => encode_instr(&asm, stmt.line, pc, mnemonic, operands)?,
            Item::Words(exprs) => exprs
                .iter()
                .map(|e| {
                    let v = asm.eval(stmt.line, e)?;
                    Ok(check_range(stmt.line, v, i32::MIN as i64, u32::MAX as i64, "word")? as u32)
                })
                .collect::<Result<_, Diagnostic>>()?,
            Item::Space(n) => vec![0; *n as usize / 4],
        };
        let out = match stmt.section {
            Section::Text => &mut text,
            Section::Data => &mut data,
        };
        for w in words {
            out.extend_from_slice(&w.to_be_bytes());
        }
    }

    let mut symbols = SymbolTable::default();
    let exported: BTreeSet<&str> = asm.globals.iter().map(|(n, _)| n.as_str()).collect();
    for (name, line) in &asm.globals {
        if !asm.labels.contains_key(name) {
            return diag(*line, format!("undefined label `{name}` in .global"));
        }
    }
    let mut by_section: BTreeMap<Section, Vec<u32>> = BTreeMap::new();
    for (_, sec, off) in &asm.label_order {
        by_section.entry(*sec).or_default().push(*off);
    }
    for (name, sec, off) in &asm.label_order {
        if !exported.contains(name.as_str()) {
            continue;
        }
        let end = match sec {
            Section::Text => asm.text_size,
            Section::Data => asm.data_size,
        };
        let next = by_section[sec]
            .iter()
            .copied()
            .filter(|o| *o > *off)
            .min()
            .unwrap_or(end);
        symbols.insert(
            name.clone(),
            Symbol {
                address: asm.address_of(*sec, *off),
                size: next - off,
                section: *sec,
            },
        );
    }
    Ok(ObjectImage {
        text,
        data,
        data_address: asm.data_base(),
        symbols,
    })
}
