//! Assembler, ELF object format, loader and disassembler for PPU programs.
//!
//! Programs are single absolute images: `.text` at SRAM byte 0, `.data`
//! word-aligned right after it. Global labels become symbols that the host
//! can address after loading, e.g. to set a parameter before releasing the
//! core from reset.

mod asm;
mod elf;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::hal::address;
use crate::playback::PlaybackProgramBuilder;
use crate::ppu;

pub use asm::{assemble, Diagnostic};
pub use elf::{parse_elf, write_elf, MalformedElf, EM_NUX_MINI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Section {
    Text,
    Data,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Text => ".text",
            Section::Data => ".data",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Symbol {
    /// SRAM byte address.
    pub address: u32,
    pub size: u32,
    pub section: Section,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolchainError {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("image of {0} bytes exceeds PPU SRAM")]
    ImageTooLarge(usize),
    #[error("symbol `{name}` is {size} bytes, not a single word")]
    NotAWord { name: String, size: u32 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable(BTreeMap<String, Symbol>);

impl SymbolTable {
    pub fn lookup(&self, name: &str) -> Result<Symbol, ToolchainError> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| ToolchainError::UnknownSymbol(name.to_string()))
    }

    pub fn insert(&mut self, name: String, symbol: Symbol) -> Option<Symbol> {
        self.0.insert(name, symbol)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Symbol)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectImage {
    pub text: Vec<u8>,
    pub data: Vec<u8>,
    /// SRAM byte address of `.data`.
    pub data_address: u32,
    pub symbols: SymbolTable,
}

impl ObjectImage {
    /// Contiguous SRAM image starting at byte 0.
    pub fn flat(&self) -> Vec<u8> {
        let mut out = self.text.clone();
        if !self.data.is_empty() {
            out.resize(self.data_address as usize, 0);
            out.extend_from_slice(&self.data);
        }
        out
    }

    pub fn to_elf(&self) -> Vec<u8> {
        write_elf(self)
    }

    pub fn text_words(&self) -> Vec<u32> {
        self.text
            .chunks(4)
            .map(|c| {
                let mut w = [0u8; 4];
                w[..c.len()].copy_from_slice(c);
                u32::from_be_bytes(w)
            })
            .collect()
    }
}

/// A symbol located in the chip register space after loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LoadedSymbol {
    /// Chip word address of the symbol's first word.
    pub address: u32,
    pub size: u32,
    pub ppu: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadedSymbols(BTreeMap<String, LoadedSymbol>);

impl LoadedSymbols {
    pub fn lookup(&self, name: &str) -> Result<LoadedSymbol, ToolchainError> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| ToolchainError::UnknownSymbol(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LoadedSymbol)> {
        self.0.iter()
    }

    /// Append a write of `value` to the word at `name`.
    pub fn write_symbol(
        &self,
        builder: &mut PlaybackProgramBuilder,
        name: &str,
        value: u32,
    ) -> Result<(), ToolchainError> {
        let sym = self.lookup(name)?;
        if sym.size != 4 {
            return Err(ToolchainError::NotAWord {
                name: name.to_string(),
                size: sym.size,
            });
        }
        builder.write_word(sym.address, value);
        Ok(())
    }
}

/// Append SRAM writes loading `image` into PPU `ppu` and return its symbols
/// in chip word addresses.
pub fn load_into(
    builder: &mut PlaybackProgramBuilder,
    image: &ObjectImage,
    ppu: u32,
) -> Result<LoadedSymbols, ToolchainError> {
    let flat = image.flat();
    if flat.len() > ppu::SRAM_BYTES {
        return Err(ToolchainError::ImageTooLarge(flat.len()));
    }
    for (i, chunk) in flat.chunks(4).enumerate() {
        let mut w = [0u8; 4];
        w[..chunk.len()].copy_from_slice(chunk);
        builder.write_word(address::ppu_memory(ppu, i as u32), u32::from_be_bytes(w));
    }
    let symbols = image
        .symbols
        .iter()
        .map(|(name, s)| {
            (
                name.clone(),
                LoadedSymbol {
                    address: address::ppu_memory(ppu, s.address / 4),
                    size: s.size,
                    ppu,
                },
            )
        })
        .collect();
    Ok(LoadedSymbols(symbols))
}

/// Render one instruction word as assembly.
pub fn disassemble(word: u32) -> String {
    ppu::decode(word).to_string()
}

/// Listing of a `.text` section, one `address: word  text` line per instruction.
pub fn disassemble_text(text: &[u8]) -> String {
    let mut out = String::new();
    for (i, chunk) in text.chunks(4).enumerate() {
        let mut w = [0u8; 4];
        w[..chunk.len()].copy_from_slice(chunk);
        let word = u32::from_be_bytes(w);
        out.push_str(&format!("{:04x}: {:08x}  {}\n", i * 4, word, disassemble(word)));
    }
    out
}
