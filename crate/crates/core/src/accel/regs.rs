//! BAR0 register map of the sorting accelerator.
//!
//! All registers are little-endian and accessed in 32-bit words; 64-bit
//! registers are two consecutive words, low word first. Reads of
//! unmapped or misaligned locations return all-ones.

pub const BAR0_SIZE: u64 = 4096;

/// Read-only identification register.
pub const ID: u64 = 0x00;
pub const ID_VALUE: u32 = 0x50C1_0001;
/// Source buffer address in host memory (RW, 64-bit).
pub const SRC_ADDR: u64 = 0x08;
/// Destination buffer address in host memory (RW, 64-bit).
pub const DST_ADDR: u64 = 0x10;
/// Job length in bytes; must be a positive multiple of `4 * n` (RW, 32-bit).
pub const LEN_BYTES: u64 = 0x18;
/// Control (WO): bit 0 starts a job.
pub const CTRL: u64 = 0x20;
/// Status (RO): BUSY, DONE, ERROR.
pub const STATUS: u64 = 0x28;
/// Writing 1 clears DONE and ERROR (WO).
pub const IRQ_ACK: u64 = 0x30;
/// Live simulation cycle (RO, 64-bit).
pub const CYCLES: u64 = 0x38;
pub const N_ELEMS: u64 = 0x40;
pub const LANES: u64 = 0x44;
/// Sorter first-in to first-out latency in cycles (RO).
pub const LATENCY: u64 = 0x48;

pub const CTRL_START: u32 = 1 << 0;
pub const STATUS_BUSY: u32 = 1 << 0;
pub const STATUS_DONE: u32 = 1 << 1;
pub const STATUS_ERROR: u32 = 1 << 2;

/// MSI vector used for job completion.
pub const COMPLETION_VECTOR: u16 = 0;
