//! Minimal ELF32 big-endian executable writer and reader.
//!
//! Layout written: ELF header, `.text` bytes, `.data` bytes, `.symtab`,
//! `.strtab`, `.shstrtab`, then the section header table (word aligned).
//! Section indices are fixed: 1 `.text`, 2 `.data`, 3 `.symtab`,
//! 4 `.strtab`, 5 `.shstrtab`. No program headers, no relocations.

use thiserror::Error;

use super::{ObjectImage, Section, Symbol, SymbolTable};

pub const EM_NUX_MINI: u16 = 0x6E78;

const EHDR_LEN: usize = 52;
const SHDR_LEN: usize = 40;
const SYM_LEN: usize = 16;

const ET_EXEC: u16 = 2;
const SHT_PROGBITS: u32 = 1;
const SHT_SYMTAB: u32 = 2;
const SHT_STRTAB: u32 = 3;
const SHF_WRITE: u32 = 1;
const SHF_ALLOC: u32 = 2;
const SHF_EXECINSTR: u32 = 4;
const STB_GLOBAL: u8 = 1;
const STT_OBJECT: u8 = 1;
const STT_FUNC: u8 = 2;

const SHSTRTAB: &[u8] = b"\0.text\0.data\0.symtab\0.strtab\0.shstrtab\0";
const NAME_TEXT: u32 = 1;
const NAME_DATA: u32 = 7;
const NAME_SYMTAB: u32 = 13;
const NAME_STRTAB: u32 = 21;
const NAME_SHSTRTAB: u32 = 29;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed ELF at byte {offset}: {reason}")]
pub struct MalformedElf {
    pub offset: usize,
    pub reason: String,
}

fn bad<T>(offset: usize, reason: impl Into<String>) -> Result<T, MalformedElf> {
    Err(MalformedElf {
        offset,
        reason: reason.into(),
    })
}

struct SectionHeader {
    name: u32,
    kind: u32,
    flags: u32,
    addr: u32,
    offset: u32,
    size: u32,
    link: u32,
    info: u32,
    align: u32,
    entsize: u32,
}

impl SectionHeader {
    fn write(&self, out: &mut Vec<u8>) {
        for v in [
            self.name,
            self.kind,
            self.flags,
            self.addr,
            self.offset,
            self.size,
            self.link,
            self.info,
            self.align,
            self.entsize,
        ] {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }

    fn read(bytes: &[u8]) -> Self {
        let w = |i: usize| u32::from_be_bytes(bytes[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
        Self {
            name: w(0),
            kind: w(1),
            flags: w(2),
            addr: w(3),
            offset: w(4),
            size: w(5),
            link: w(6),
            info: w(7),
            align: w(8),
            entsize: w(9),
        }
    }
}

fn align4(n: usize) -> usize {
    (n + 3) & !3
}

/// Serialize an image. Symbols are emitted in address order, then by name.
pub fn write_elf(image: &ObjectImage) -> Vec<u8> {
    let mut symbols: Vec<(&String, &Symbol)> = image.symbols.iter().collect();
    symbols.sort_by_key(|(name, s)| (s.address, name.as_str()));

    let mut strtab = vec![0u8];
    let mut symtab = vec![0u8; SYM_LEN];
    for (name, sym) in &symbols {
        let name_off = strtab.len() as u32;
        strtab.extend_from_slice(name.as_bytes());
        strtab.push(0);
        let (kind, shndx) = match sym.section {
            Section::Text => (STT_FUNC, 1u16),
            Section::Data => (STT_OBJECT, 2u16),
        };
        symtab.extend_from_slice(&name_off.to_be_bytes());
        symtab.extend_from_slice(&sym.address.to_be_bytes());
        symtab.extend_from_slice(&sym.size.to_be_bytes());
        symtab.push(STB_GLOBAL << 4 | kind);
        symtab.push(0);
        symtab.extend_from_slice(&shndx.to_be_bytes());
    }

    let text_off = EHDR_LEN;
    let data_off = text_off + image.text.len();
    let symtab_off = align4(data_off + image.data.len());
    let strtab_off = symtab_off + symtab.len();
    let shstrtab_off = strtab_off + strtab.len();
    let shdr_off = align4(shstrtab_off + SHSTRTAB.len());

    let mut out = Vec::with_capacity(shdr_off + 6 * SHDR_LEN);
    out.extend_from_slice(&[0x7F, b'E', b'L', b'F', 1, 2, 1, 0]);
    out.extend_from_slice(&[0; 8]);
    out.extend_from_slice(&ET_EXEC.to_be_bytes());
    out.extend_from_slice(&EM_NUX_MINI.to_be_bytes());
    out.extend_from_slice(&1u32.to_be_bytes()); // e_version
    out.extend_from_slice(&0u32.to_be_bytes()); // e_entry
    out.extend_from_slice(&0u32.to_be_bytes()); // e_phoff
    out.extend_from_slice(&(shdr_off as u32).to_be_bytes());
    out.extend_from_slice(&0u32.to_be_bytes()); // e_flags
    out.extend_from_slice(&(EHDR_LEN as u16).to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes()); // e_phentsize
    out.extend_from_slice(&0u16.to_be_bytes()); // e_phnum
    out.extend_from_slice(&(SHDR_LEN as u16).to_be_bytes());
    out.extend_from_slice(&6u16.to_be_bytes());
    out.extend_from_slice(&5u16.to_be_bytes());
    debug_assert_eq!(out.len(), EHDR_LEN);

    out.extend_from_slice(&image.text);
    out.extend_from_slice(&image.data);
    out.resize(symtab_off, 0);
    out.extend_from_slice(&symtab);
    out.extend_from_slice(&strtab);
    out.extend_from_slice(SHSTRTAB);
    out.resize(shdr_off, 0);

    let headers = [
        SectionHeader {
            name: 0,
            kind: 0,
            flags: 0,
            addr: 0,
            offset: 0,
            size: 0,
            link: 0,
            info: 0,
            align: 0,
            entsize: 0,
        },
        SectionHeader {
            name: NAME_TEXT,
            kind: SHT_PROGBITS,
            flags: SHF_ALLOC | SHF_EXECINSTR,
            addr: 0,
            offset: text_off as u32,
            size: image.text.len() as u32,
            link: 0,
            info: 0,
            align: 4,
            entsize: 0,
        },
        SectionHeader {
            name: NAME_DATA,
            kind: SHT_PROGBITS,
            flags: SHF_ALLOC | SHF_WRITE,
            addr: image.data_address,
            offset: data_off as u32,
            size: image.data.len() as u32,
            link: 0,
            info: 0,
            align: 4,
            entsize: 0,
        },
        SectionHeader {
            name: NAME_SYMTAB,
            kind: SHT_SYMTAB,
            flags: 0,
            addr: 0,
            offset: symtab_off as u32,
            size: symtab.len() as u32,
            link: 4,
            info: 1,
            align: 4,
            entsize: SYM_LEN as u32,
        },
        SectionHeader {
            name: NAME_STRTAB,
            kind: SHT_STRTAB,
            flags: 0,
            addr: 0,
            offset: strtab_off as u32,
            size: strtab.len() as u32,
            link: 0,
            info: 0,
            align: 1,
            entsize: 0,
        },
        SectionHeader {
            name: NAME_SHSTRTAB,
            kind: SHT_STRTAB,
            flags: 0,
            addr: 0,
            offset: shstrtab_off as u32,
            size: SHSTRTAB.len() as u32,
            link: 0,
            info: 0,
            align: 1,
            entsize: 0,
        },
    ];
    for h in &headers {
        h.write(&mut out);
    }
    out
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn section_bytes<'a>(bytes: &'a [u8], h: &SectionHeader, header_at: usize) -> Result<&'a [u8], MalformedElf> {
    let start = h.offset as usize;
    let end = start.checked_add(h.size as usize);
    match end {
        Some(end) if end <= bytes.len() => Ok(&bytes[start..end]),
        _ => bad(header_at, "section extends past end of file"),
    }
}

fn c_string(table: &[u8], offset: u32, at: usize) -> Result<&str, MalformedElf> {
    let tail = table.get(offset as usize..).ok_or_else(|| MalformedElf {
        offset: at,
        reason: "string offset out of range".into(),
    })?;
    let end = tail.iter().position(|&b| b == 0).ok_or_else(|| MalformedElf {
        offset: at,
        reason: "unterminated string".into(),
    })?;
    std::str::from_utf8(&tail[..end]).map_err(|_| MalformedElf {
        offset: at,
        reason: "symbol name is not UTF-8".into(),
    })
}

/// Parse an image written by [`write_elf`] (or any ELF with the same sections).
pub fn parse_elf(bytes: &[u8]) -> Result<ObjectImage, MalformedElf> {
    if bytes.len() < EHDR_LEN {
        return bad(bytes.len(), "truncated ELF header");
    }
    if &bytes[0..4] != b"\x7FELF" {
        return bad(0, "bad magic");
    }
    if bytes[4] != 1 {
        return bad(4, "not a 32-bit ELF");
    }
    if bytes[5] != 2 {
        return bad(5, "not big-endian");
    }
    if be16(bytes, 18) != EM_NUX_MINI {
        return bad(18, format!("unexpected machine 0x{:04x}", be16(bytes, 18)));
    }
    let shoff = be32(bytes, 32) as usize;
    let shentsize = be16(bytes, 46) as usize;
    let shnum = be16(bytes, 48) as usize;
    let shstrndx = be16(bytes, 50) as usize;
    if shentsize != SHDR_LEN {
        return bad(46, "unexpected section header size");
    }
    if shoff.checked_add(shnum * SHDR_LEN).is_none_or(|end| end > bytes.len()) {
        return bad(32, "section header table past end of file");
    }
    if shstrndx >= shnum {
        return bad(50, "section name table index out of range");
    }
    let headers: Vec<SectionHeader> = (0..shnum)
        .map(|i| SectionHeader::read(&bytes[shoff + i * SHDR_LEN..shoff + (i + 1) * SHDR_LEN]))
        .collect();
    let header_at = |i: usize| shoff + i * SHDR_LEN;
    let shstr = section_bytes(bytes, &headers[shstrndx], header_at(shstrndx))?;

    let find = |name: &str| -> Result<Option<usize>, MalformedElf> {
        for (i, h) in headers.iter().enumerate().skip(1) {
            if c_string(shstr, h.name, header_at(i))? == name {
                return Ok(Some(i));
            }
        }
        Ok(None)
    };
    let text_idx = find(".text")?;
    let data_idx = find(".data")?;
    let symtab_idx = find(".symtab")?;

    let text = match text_idx {
        Some(i) => section_bytes(bytes, &headers[i], header_at(i))?.to_vec(),
        None => return bad(shoff, "missing .text section"),
    };
    if headers[text_idx.unwrap()].addr != 0 {
        return bad(header_at(text_idx.unwrap()), ".text must start at address 0");
    }
    let (data, data_address) = match data_idx {
        Some(i) => (
            section_bytes(bytes, &headers[i], header_at(i))?.to_vec(),
            headers[i].addr,
        ),
        None => (Vec::new(), align4(text.len()) as u32),
    };
    if (data_address as usize) < text.len() || data_address % 4 != 0 {
        return bad(
            header_at(data_idx.unwrap_or(0)),
            ".data overlaps .text or is misaligned",
        );
    }

    let mut symbols = SymbolTable::default();
    if let Some(si) = symtab_idx {
        let sh = &headers[si];
        if sh.entsize as usize != SYM_LEN || !(sh.size as usize).is_multiple_of(SYM_LEN) {
            return bad(header_at(si), "bad symbol table entry size");
        }
        if sh.link as usize >= shnum {
            return bad(header_at(si), "symbol table string link out of range");
        }
        let symtab = section_bytes(bytes, sh, header_at(si))?;
        let strtab = section_bytes(bytes, &headers[sh.link as usize], header_at(sh.link as usize))?;
        for (k, entry) in symtab.chunks_exact(SYM_LEN).enumerate().skip(1) {
            let at = sh.offset as usize + k * SYM_LEN;
            let info = entry[12];
            if info >> 4 != STB_GLOBAL {
                continue;
            }
            let name = c_string(strtab, be32(entry, 0), at)?;
            let shndx = be16(entry, 14) as usize;
            let section = if Some(shndx) == text_idx {
                Section::Text
            } else if Some(shndx) == data_idx {
                Section::Data
            } else {
                return bad(at + 14, format!("symbol `{name}` in unsupported section {shndx}"));
            };
            let symbol = Symbol {
                address: be32(entry, 4),
                size: be32(entry, 8),
                section,
            };
            let (lo, len) = match section {
                Section::Text => (0, text.len() as u32),
                Section::Data => (data_address, data.len() as u32),
            };
            if symbol.address < lo || symbol.address as u64 + symbol.size as u64 > lo as u64 + len as u64 {
                return bad(at, format!("symbol `{name}` outside its section"));
            }
            if symbols.insert(name.to_string(), symbol).is_some() {
                return bad(at, format!("duplicate symbol `{name}`"));
            }
        }
    }
    Ok(ObjectImage {
        text,
        data,
        data_address,
        symbols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toolchain::assemble;

    #[test]
    fn round_trip() {
        let img = assemble(".global f, x\nf: addi r1, r0, 1\nhalt\n.data\nx: .word 5").unwrap();
        let bytes = write_elf(&img);
        let back = parse_elf(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(write_elf(&back), bytes);
    }

    #[test]
    fn rejects_garbage() {
        let bytes = write_elf(&assemble("halt").unwrap());
        let mut wrong = bytes.clone();
        wrong[1] = b'X';
        assert_eq!(parse_elf(&wrong).unwrap_err().offset, 0);
        for cut in [0, 10, 60, bytes.len() - 1] {
            assert!(parse_elf(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut little = bytes.clone();
        little[5] = 1;
        assert!(parse_elf(&little).is_err());
    }

    #[test]
    fn header_constants() {
        let bytes = write_elf(&assemble("halt").unwrap());
        assert_eq!(&bytes[..6], &[0x7F, b'E', b'L', b'F', 1, 2]);
        assert_eq!(be16(&bytes, 16), ET_EXEC);
        assert_eq!(be16(&bytes, 18), 0x6E78);
    }
}
