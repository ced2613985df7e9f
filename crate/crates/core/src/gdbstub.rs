//! GDB remote serial protocol server for a PPU core.
//!
//! Memory packets (`m`, `M`, `Z0`, `z0`) go straight to PPU SRAM over the
//! host register bus. Register and execution-control packets (`g`, `G`, `s`,
//! `c`) are relayed through the mailbox to the debug handler running on the
//! core itself, and the simulator is ticked until the handler answers.

use std::collections::BTreeMap;
use std::io::{self, BufReader, Read, Write};
use std::net::TcpListener;

use crate::hal::address;
use crate::ppu::{self, mailbox, CoreStatus, Instruction};
use crate::simchip::{ChipState, SimError};

use thiserror::Error;

/// Longest packet we advertise and accept.
pub const PACKET_SIZE: usize = 0x1000;

/// Ticks a `c` may run before the stub interrupts the core.
pub const DEFAULT_CONTINUE_BUDGET: u64 = 1_000_000;

/// Upper bound on ticks spent waiting for the handler to take a command.
const HANDLER_TIMEOUT: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DebugError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("debug handler did not answer within {HANDLER_TIMEOUT} ticks")]
    HandlerTimeout,
}

pub fn checksum(payload: &[u8]) -> u8 {
    payload.iter().fold(0u8, |acc, &b| acc.wrapping_add(b))
}

/// `$payload#xx`
pub fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 4);
    out.push(b'$');
    out.extend_from_slice(payload);
    out.extend_from_slice(format!("#{:02x}", checksum(payload)).as_bytes());
    out
}

/// What the reader produced from the byte stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Incoming {
    Packet(Vec<u8>),
    /// A packet whose checksum did not match; `-` has been sent.
    Corrupt,
    /// Ctrl-C (0x03) outside a packet.
    Interrupt,
}

/// Pulls packets off a byte stream, acknowledging each with `+` or `-`.
pub struct PacketReader<R> {
    inner: R,
}

impl<R: Read> PacketReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    fn byte(&mut self) -> io::Result<Option<u8>> {
        let mut b = [0u8];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(None),
                Ok(_) => return Ok(Some(b[0])),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            }
        }
    }

    /// `Ok(None)` on a clean end of stream, including mid-packet.
    pub fn next(&mut self, ack: &mut impl Write) -> io::Result<Option<Incoming>> {
        loop {
            match self.byte()? {
                None => return Ok(None),
                Some(0x03) => return Ok(Some(Incoming::Interrupt)),
                Some(b'$') => break,
                Some(_) => continue,
            }
        }
        let mut payload = Vec::new();
        loop {
            match self.byte()? {
                None => return Ok(None),
                Some(b'#') => break,
                Some(b) if payload.len() < PACKET_SIZE => payload.push(b),
                Some(_) => {}
            }
        }
        let (Some(h), Some(l)) = (self.byte()?, self.byte()?) else {
            return Ok(None);
        };
        let sent = std::str::from_utf8(&[h, l])
            .ok()
            .and_then(|s| u8::from_str_radix(s, 16).ok());
        if sent == Some(checksum(&payload)) {
            ack.write_all(b"+")?;
            Ok(Some(Incoming::Packet(payload)))
        } else {
            ack.write_all(b"-")?;
            Ok(Some(Incoming::Corrupt))
        }
    }
}

fn hex_u32(s: &[u8]) -> Option<u32> {
    if s.is_empty() || s.len() > 8 {
        return None;
    }
    u32::from_str_radix(std::str::from_utf8(s).ok()?, 16).ok()
}

fn hex_bytes(s: &[u8]) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    s.chunks(2)
        .map(|c| u8::from_str_radix(std::str::from_utf8(c).ok()?, 16).ok())
        .collect()
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

const TRAP_WORD: u32 = 19 << 26;

/// One attached debugger's view of a chip and one of its PPUs.
pub struct DebugSession<'a> {
    chip: &'a mut ChipState,
    ppu: u32,
    breakpoints: BTreeMap<u32, u32>,
    continue_budget: u64,
}

enum Stop {
    Trapped,
    Halted,
}

impl Stop {
    fn reply(&self) -> Vec<u8> {
        match self {
            Stop::Trapped => b"S05".to_vec(),
            Stop::Halted => b"W00".to_vec(),
        }
    }
}

impl<'a> DebugSession<'a> {
    /// Attach to `ppu`, stopping it in the debug handler. A core held in reset
    /// is released straight into the handler at pc 0.
    pub fn attach(chip: &'a mut ChipState, ppu: u32) -> Result<Self, DebugError> {
        debug_assert_eq!(ppu::encode(&Instruction::Trap), TRAP_WORD);
        let mut s = Self {
            chip,
            ppu,
            breakpoints: BTreeMap::new(),
            continue_budget: DEFAULT_CONTINUE_BUDGET,
        };
        match s.chip.core(ppu as usize).status {
            CoreStatus::Reset => {
                s.raise_debug()?;
                s.chip.register_write(address::PPU_CONTROL_BASE + ppu, 1)?;
            }
            CoreStatus::Running => {
                s.raise_debug()?;
                s.wait_stopped(HANDLER_TIMEOUT)?;
            }
            CoreStatus::Trapped | CoreStatus::Halted => {}
        }
        Ok(s)
    }

    pub fn set_continue_budget(&mut self, ticks: u64) {
        self.continue_budget = ticks;
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = u32> + '_ {
        self.breakpoints.keys().copied()
    }

    fn raise_debug(&mut self) -> Result<(), DebugError> {
        self.chip
            .register_write(address::PPU_DEBUG_REQUEST_BASE + self.ppu, 1)?;
        Ok(())
    }

    fn sram_read(&mut self, byte_addr: u32) -> Result<u32, DebugError> {
        Ok(self.chip.register_read(address::ppu_memory(self.ppu, byte_addr / 4))?)
    }

    fn sram_write(&mut self, byte_addr: u32, word: u32) -> Result<(), DebugError> {
        Ok(self
            .chip
            .register_write(address::ppu_memory(self.ppu, byte_addr / 4), word)?)
    }

    fn mailbox_status(&mut self) -> Result<u32, DebugError> {
        self.sram_read(mailbox::STATUS)
    }

    /// Post a handler command and tick until the handler has consumed it.
    fn command(&mut self, cmd: u32) -> Result<(), DebugError> {
        self.sram_write(mailbox::COMMAND, cmd)?;
        for _ in 0..HANDLER_TIMEOUT {
            if self.sram_read(mailbox::COMMAND)? == mailbox::CMD_IDLE {
                return Ok(());
            }
            self.chip.tick();
        }
        Err(DebugError::HandlerTimeout)
    }

    fn wait_stopped(&mut self, ticks: u64) -> Result<Option<Stop>, DebugError> {
        for _ in 0..=ticks {
            match self.mailbox_status()? {
                mailbox::STATUS_STOPPED => return Ok(Some(Stop::Trapped)),
                mailbox::STATUS_HALTED => return Ok(Some(Stop::Halted)),
                _ => self.chip.tick(),
            }
        }
        Ok(None)
    }

    fn read_registers(&mut self) -> Result<Vec<u32>, DebugError> {
        self.command(mailbox::CMD_GET_REGS)?;
        (0..mailbox::REG_COUNT)
            .map(|i| self.sram_read(mailbox::REGS + 4 * i))
            .collect()
    }

    fn write_registers(&mut self, regs: &[u32]) -> Result<(), DebugError> {
        for (i, &r) in regs.iter().enumerate() {
            self.sram_write(mailbox::REGS + 4 * i as u32, r)?;
        }
        self.command(mailbox::CMD_SET_REGS)
    }

    fn pc(&mut self) -> Result<u32, DebugError> {
        Ok(self.read_registers()?[32])
    }

    fn stopped_status(&mut self) -> Result<Stop, DebugError> {
        Ok(match self.mailbox_status()? {
            mailbox::STATUS_HALTED => Stop::Halted,
            _ => Stop::Trapped,
        })
    }

    /// Single step, stepping over a breakpoint at the current pc.
    fn step(&mut self) -> Result<Stop, DebugError> {
        if let Stop::Halted = self.stopped_status()? {
            return Ok(Stop::Halted);
        }
        let pc = self.pc()?;
        let saved = self.breakpoints.get(&pc).copied();
        if let Some(original) = saved {
            self.sram_write(pc, original)?;
        }
        self.command(mailbox::CMD_STEP)?;
        if saved.is_some() {
            self.sram_write(pc, TRAP_WORD)?;
        }
        self.stopped_status()
    }

    fn resume(&mut self) -> Result<Stop, DebugError> {
        if let Stop::Halted = self.stopped_status()? {
            return Ok(Stop::Halted);
        }
        let pc = self.pc()?;
        if self.breakpoints.contains_key(&pc) {
            if let Stop::Halted = self.step()? {
                return Ok(Stop::Halted);
            }
        }
        self.command(mailbox::CMD_CONTINUE)?;
        if let Some(stop) = self.wait_stopped(self.continue_budget)? {
            return Ok(stop);
        }
        self.raise_debug()?;
        Ok(self.wait_stopped(HANDLER_TIMEOUT)?.unwrap_or(Stop::Trapped))
    }

    fn insert_breakpoint(&mut self, addr: u32) -> Result<(), DebugError> {
        if !self.breakpoints.contains_key(&addr) {
            let original = self.sram_read(addr)?;
            self.sram_write(addr, TRAP_WORD)?;
            self.breakpoints.insert(addr, original);
        }
        Ok(())
    }

    fn remove_breakpoint(&mut self, addr: u32) -> Result<(), DebugError> {
        if let Some(original) = self.breakpoints.remove(&addr) {
            self.sram_write(addr, original)?;
        }
        Ok(())
    }

    /// Restore every patched instruction.
    pub fn clear_breakpoints(&mut self) -> Result<(), DebugError> {
        let addrs: Vec<u32> = self.breakpoints.keys().copied().collect();
        for a in addrs {
            self.remove_breakpoint(a)?;
        }
        Ok(())
    }

    fn sram_range(addr: u32, len: u32) -> Option<()> {
        let end = addr.checked_add(len)?;
        (end as usize <= ppu::SRAM_BYTES).then_some(())
    }

    fn read_memory(&mut self, addr: u32, len: u32) -> Result<Vec<u8>, DebugError> {
        let mut out = Vec::with_capacity(len as usize);
        for a in addr..addr + len {
            let word = self.sram_read(a & !3)?;
            out.push(word.to_be_bytes()[(a & 3) as usize]);
        }
        Ok(out)
    }

    fn write_memory(&mut self, addr: u32, bytes: &[u8]) -> Result<(), DebugError> {
        for (i, &b) in bytes.iter().enumerate() {
            let a = addr + i as u32;
            let mut word = self.sram_read(a & !3)?.to_be_bytes();
            word[(a & 3) as usize] = b;
            self.sram_write(a & !3, u32::from_be_bytes(word))?;
        }
        Ok(())
    }

    /// Answer one packet. `None` means the session is over (`k`).
    pub fn handle(&mut self, packet: &[u8]) -> Result<Option<Vec<u8>>, DebugError> {
        let err = || Ok(Some(b"E01".to_vec()));
        let Some(&cmd) = packet.first() else {
            return Ok(Some(Vec::new()));
        };
        let args = &packet[1..];
        let reply = match cmd {
            b'?' => self.stopped_status()?.reply(),
            b'g' => {
                let regs = self.read_registers()?;
                regs.iter().map(|r| format!("{r:08x}")).collect::<String>().into_bytes()
            }
            b'G' => {
                let Some(bytes) = hex_bytes(args).filter(|b| b.len() == 4 * mailbox::REG_COUNT as usize) else {
                    return err();
                };
                let regs: Vec<u32> = bytes
                    .chunks(4)
                    .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                self.write_registers(&regs)?;
                b"OK".to_vec()
            }
            b'm' => {
                let mut it = args.splitn(2, |&b| b == b',');
                let (Some(a), Some(l)) = (it.next().and_then(hex_u32), it.next().and_then(hex_u32)) else {
                    return err();
                };
                if Self::sram_range(a, l).is_none() || l as usize > PACKET_SIZE / 2 {
                    return err();
                }
                to_hex(&self.read_memory(a, l)?).into_bytes()
            }
            b'M' => {
                let Some(colon) = args.iter().position(|&b| b == b':') else {
                    return err();
                };
                let mut it = args[..colon].splitn(2, |&b| b == b',');
                let (Some(a), Some(l)) = (it.next().and_then(hex_u32), it.next().and_then(hex_u32)) else {
                    return err();
                };
                let Some(data) = hex_bytes(&args[colon + 1..]).filter(|d| d.len() == l as usize) else {
                    return err();
                };
                if Self::sram_range(a, l).is_none() {
                    return err();
                }
                self.write_memory(a, &data)?;
                b"OK".to_vec()
            }
            b's' => self.step()?.reply(),
            b'c' => self.resume()?.reply(),
            b'Z' | b'z' => {
                let mut it = args.split(|&b| b == b',');
                if it.next() != Some(b"0") {
                    return Ok(Some(Vec::new()));
                }
                let Some(addr) = it.next().and_then(hex_u32) else {
                    return err();
                };
                if addr % 4 != 0 || Self::sram_range(addr, 4).is_none() {
                    return err();
                }
                if cmd == b'Z' {
                    self.insert_breakpoint(addr)?;
                } else {
                    self.remove_breakpoint(addr)?;
                }
                b"OK".to_vec()
            }
            b'q' if args.starts_with(b"Supported") => format!("PacketSize={PACKET_SIZE:x}").into_bytes(),
            b'k' => {
                self.clear_breakpoints()?;
                return Ok(None);
            }
            b'D' => {
                self.clear_breakpoints()?;
                b"OK".to_vec()
            }
            b'H' => b"OK".to_vec(),
            _ => Vec::new(),
        };
        Ok(Some(reply))
    }

    /// Run the packet loop on one connection until `k`, `D` or disconnect.
    /// Breakpoints are always restored on exit.
    pub fn serve_stream<R: Read, W: Write>(&mut self, reader: R, mut writer: W) -> io::Result<()> {
        let result = self.packet_loop(PacketReader::new(reader), &mut writer);
        self.clear_breakpoints().map_err(io::Error::other)?;
        result
    }

    fn packet_loop<R: Read, W: Write>(&mut self, mut reader: PacketReader<R>, writer: &mut W) -> io::Result<()> {
        let mut out = Vec::new();
        loop {
            out.clear();
            let Some(incoming) = reader.next(&mut out)? else {
                return Ok(());
            };
            let mut done = false;
            match incoming {
                Incoming::Corrupt => {}
                Incoming::Interrupt => out.extend_from_slice(&frame(b"S05")),
                Incoming::Packet(p) => match self.handle(&p).map_err(io::Error::other)? {
                    None => done = true,
                    Some(r) => {
                        done = p.first() == Some(&b'D');
                        out.extend_from_slice(&frame(&r));
                    }
                },
            }
            writer.write_all(&out)?;
            writer.flush()?;
            if done {
                return Ok(());
            }
        }
    }
}

/// Accept clients one after another and debug `ppu` for each. Stops after
/// `max_clients` sessions if given.
pub fn serve(listener: TcpListener, chip: &mut ChipState, ppu: u32, max_clients: Option<usize>) -> io::Result<()> {
    for (served, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        stream.set_nodelay(true).ok();
        let writer = stream.try_clone()?;
        let mut session = DebugSession::attach(chip, ppu).map_err(io::Error::other)?;
        if let Err(e) = session.serve_stream(BufReader::new(stream), writer) {
            if !matches!(
                e.kind(),
                io::ErrorKind::ConnectionReset | io::ErrorKind::BrokenPipe | io::ErrorKind::UnexpectedEof
            ) {
                return Err(e);
            }
        }
        if max_clients.is_some_and(|m| served + 1 >= m) {
            return Ok(());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::playback::PlaybackProgramBuilder;
    use crate::toolchain::{assemble, load_into};

    fn chip_with(src: &str) -> ChipState {
        let mut chip = ChipState::default();
        let mut b = PlaybackProgramBuilder::new();
        load_into(&mut b, &assemble(src).unwrap(), 0).unwrap();
        chip.run(&b.done()).unwrap();
        chip
    }

    #[test]
    fn framing() {
        assert_eq!(frame(b"g"), b"$g#67");
        assert_eq!(frame(b""), b"$#00");
    }

    #[test]
    fn bad_checksum_is_nacked() {
        let mut out = Vec::new();
        let mut r = PacketReader::new(&b"$m0,4#00$g#67"[..]);
        assert_eq!(r.next(&mut out).unwrap(), Some(Incoming::Corrupt));
        assert_eq!(r.next(&mut out).unwrap(), Some(Incoming::Packet(b"g".to_vec())));
        assert_eq!(out, b"-+");
    }

    #[test]
    fn fresh_registers_are_zero() {
        let mut chip = chip_with("nop\nhalt");
        let mut s = DebugSession::attach(&mut chip, 0).unwrap();
        let g = s.handle(b"g").unwrap().unwrap();
        assert_eq!(g, vec![b'0'; 264]);
        assert_eq!(s.handle(b"?").unwrap().unwrap(), b"S05");
    }

    #[test]
    fn memory_is_big_endian() {
        let mut chip = chip_with(".word 0x12345678");
        let mut s = DebugSession::attach(&mut chip, 0).unwrap();
        assert_eq!(s.handle(b"m0,4").unwrap().unwrap(), b"12345678");
        assert_eq!(s.handle(b"m1,2").unwrap().unwrap(), b"3456");
        assert_eq!(s.handle(b"M4,2:abcd").unwrap().unwrap(), b"OK");
        assert_eq!(s.handle(b"m4,4").unwrap().unwrap(), b"abcd0000");
        assert_eq!(s.handle(b"m3ffe,4").unwrap().unwrap(), b"E01");
        assert_eq!(s.handle(b"mzz").unwrap().unwrap(), b"E01");
    }

    #[test]
    fn breakpoint_continue_and_restore() {
        let mut chip = chip_with("addi r1, r0, 1\naddi r2, r0, 2\nloop: addi r3, r3, 1\nbeq r0, r0, loop");
        let before: Vec<u32> = (0..4).map(|i| chip.core(0).sram_word(i)).collect();
        let mut s = DebugSession::attach(&mut chip, 0).unwrap();
        assert_eq!(s.handle(b"Z0,8,4").unwrap().unwrap(), b"OK");
        assert_eq!(s.handle(b"c").unwrap().unwrap(), b"S05");
        let g = s.handle(b"g").unwrap().unwrap();
        assert_eq!(&g[32 * 8..], b"00000008");
        assert_eq!(&g[8..16], b"00000001");
        // continuing steps over the breakpoint and comes back around
        assert_eq!(s.handle(b"c").unwrap().unwrap(), b"S05");
        let g = s.handle(b"g").unwrap().unwrap();
        assert_eq!(&g[3 * 8..4 * 8], b"00000001");
        assert_eq!(s.handle(b"s").unwrap().unwrap(), b"S05");
        let g = s.handle(b"g").unwrap().unwrap();
        assert_eq!(&g[32 * 8..], b"0000000c");
        assert_eq!(s.handle(b"z0,8,4").unwrap().unwrap(), b"OK");
        drop(s);
        let after: Vec<u32> = (0..4).map(|i| chip.core(0).sram_word(i)).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn set_then_get_registers() {
        let mut chip = chip_with("nop\nnop");
        let mut s = DebugSession::attach(&mut chip, 0).unwrap();
        let regs: String = (0..33u32)
            .map(|i| format!("{:08x}", if i == 32 { 4 } else { i * 0x01010101 }))
            .collect();
        assert_eq!(s.handle(format!("G{regs}").as_bytes()).unwrap().unwrap(), b"OK");
        assert_eq!(s.handle(b"g").unwrap().unwrap(), regs.as_bytes());
    }

    #[test]
    fn halted_core_reports_exit() {
        let mut chip = chip_with("halt");
        let mut s = DebugSession::attach(&mut chip, 0).unwrap();
        assert_eq!(s.handle(b"c").unwrap().unwrap(), b"W00");
        assert_eq!(s.handle(b"?").unwrap().unwrap(), b"W00");
    }

    #[test]
    fn endless_loop_is_interrupted_after_budget() {
        let mut chip = chip_with("loop: beq r0, r0, loop");
        let mut s = DebugSession::attach(&mut chip, 0).unwrap();
        s.set_continue_budget(100);
        assert_eq!(s.handle(b"c").unwrap().unwrap(), b"S05");
        assert!(s.chip.timer() >= 100);
    }
}
