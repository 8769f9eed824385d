//! Host/device co-simulation of a PCIe sorting accelerator.
//!
//! A host emulator ([`hostsim`]) exposes a pseudo PCIe device whose MMIO,
//! DMA and interrupt traffic travels over four message channels ([`proto`])
//! to a cycle-driven device simulation ([`devsim`]) hosting the
//! accelerator ([`accel`]). [`trace`] records what the device did.

pub mod accel;
pub mod devsim;
pub mod hostsim;
pub mod proto;
pub mod trace;
