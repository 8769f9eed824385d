use crate::proto::Status;

use super::HostError;

pub const PAGE_SIZE: u64 = 4096;
pub const DEFAULT_MEM_SIZE: u64 = 256 << 20;

/// Zero-initialised guest physical memory.
#[derive(Debug, Clone)]
pub struct GuestMemory {
    bytes: Vec<u8>,
}

impl GuestMemory {
    pub fn new(size: u64) -> Result<Self, HostError> {
        if size == 0 || !size.is_multiple_of(PAGE_SIZE) {
            return Err(HostError::Config(format!("memory size {size} is not a positive multiple of 4 KiB")));
        }
        let size = usize::try_from(size).map_err(|_| HostError::Config(format!("memory size {size} too large")))?;
        Ok(GuestMemory { bytes: vec![0; size] })
    }

    pub fn size(&self) -> u64 {
        self.bytes.len() as u64
    }

    fn range(&self, addr: u64, len: usize) -> Option<std::ops::Range<usize>> {
        let end = addr.checked_add(len as u64)?;
        (end <= self.size()).then_some(addr as usize..end as usize)
    }

    /// Reads `len` bytes, or nothing at all if any of them is out of range.
    pub fn read(&self, addr: u64, len: u32) -> Result<Vec<u8>, Status> {
        self.range(addr, len as usize).map(|r| self.bytes[r].to_vec()).ok_or(Status::AddressError)
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) -> Result<(), Status> {
        let r = self.range(addr, data.len()).ok_or(Status::AddressError)?;
        self.bytes[r].copy_from_slice(data);
        Ok(())
    }

    pub fn fill(&mut self, addr: u64, len: u64, byte: u8) -> Result<(), Status> {
        let r = self.range(addr, len as usize).ok_or(Status::AddressError)?;
        self.bytes[r].fill(byte);
        Ok(())
    }

    pub fn read_i32s(&self, addr: u64, count: usize) -> Result<Vec<i32>, Status> {
        let raw = self.read(addr, (count * 4) as u32)?;
        Ok(raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn write_i32s(&mut self, addr: u64, values: &[i32]) -> Result<(), Status> {
        let raw: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.write(addr, &raw)
    }
}

/// BAR regions exposed by the pseudo device, as `(index, size)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BarConfig {
    regions: Vec<(u8, u64)>,
}

impl BarConfig {
    pub fn new(regions: Vec<(u8, u64)>) -> Result<Self, HostError> {
        if regions.is_empty() || regions.len() > 6 {
            return Err(HostError::Config(format!("{} BAR regions, expected 1 to 6", regions.len())));
        }
        for (i, &(index, size)) in regions.iter().enumerate() {
            if index > 5 || regions[..i].iter().any(|r| r.0 == index) {
                return Err(HostError::Config(format!("bad or duplicate BAR index {index}")));
            }
            if size < PAGE_SIZE || !size.is_power_of_two() {
                return Err(HostError::Config(format!("BAR{index} size {size} is not a power of two >= 4 KiB")));
            }
        }
        Ok(BarConfig { regions })
    }

    /// A single 4 KiB BAR0.
    pub fn bar0() -> Self {
        BarConfig { regions: vec![(0, PAGE_SIZE)] }
    }

    pub fn size_of(&self, bar: u8) -> Option<u64> {
        self.regions.iter().find(|r| r.0 == bar).map(|r| r.1)
    }

    pub fn regions(&self) -> &[(u8, u64)] {
        &self.regions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsiConfig {
    vector_count: u16,
}

impl MsiConfig {
    pub fn new(vector_count: u16) -> Result<Self, HostError> {
        if !(1..=32).contains(&vector_count) {
            return Err(HostError::Config(format!("{vector_count} MSI vectors, expected 1 to 32")));
        }
        Ok(MsiConfig { vector_count })
    }

    pub fn vector_count(&self) -> u16 {
        self.vector_count
    }
}

impl Default for MsiConfig {
    fn default() -> Self {
        MsiConfig { vector_count: 1 }
    }
}
