//! Desk-scale neuromorphic system stack.
//!
//! Layers, bottom up: [`coord`] identifies hardware entities, [`hal`] turns
//! configuration containers into register accesses, [`playback`] builds timed
//! command streams, [`simchip`] executes them against a simulated chip with two
//! embedded [`ppu`] cores, [`toolchain`] assembles and loads PPU programs,
//! [`gdbstub`] debugs them, [`sched`] shares one chip between users and
//! [`nsem`] runs a complete plasticity experiment on top of all of it.

pub mod coord;
pub mod gdbstub;
pub mod hal;
pub mod nsem;
pub mod playback;
pub mod ppu;
pub mod sched;
pub mod simchip;
pub mod toolchain;
