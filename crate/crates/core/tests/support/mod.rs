#![allow(dead_code)]

pub mod accel_suite;
pub mod vcd_check;
pub mod wire_gen;

use cosim::accel::{SortAccelerator, SorterConfig};
use cosim::devsim::{KernelConfig, LoopbackLink, Platform, SimKernel};
use cosim::hostsim::{BarConfig, CheckedLink, GuestMemory, LockstepLink, MsiConfig, PseudoDevice};

pub const MEM: u64 = 4 << 20;
pub const STEP_LIMIT: u64 = 2_000_000;

pub type Lockstep<P> = PseudoDevice<CheckedLink<LockstepLink<P>>>;

pub fn lockstep_kernel<P: Platform>(platform: P) -> SimKernel<P, LoopbackLink> {
    SimKernel::new(KernelConfig::default(), platform, LoopbackLink::connected())
}

pub fn lockstep_host<P: Platform>(kernel: SimKernel<P, LoopbackLink>) -> Lockstep<P> {
    let link = CheckedLink::new(LockstepLink::new(kernel, STEP_LIMIT));
    PseudoDevice::new(link, GuestMemory::new(MEM).unwrap(), BarConfig::bar0(), MsiConfig::default())
}

pub fn sorter_host(n: usize, w: usize) -> Lockstep<SortAccelerator> {
    let accel = SortAccelerator::new(SorterConfig::new(n, w).unwrap());
    lockstep_host(lockstep_kernel(accel))
}

/// Ascending copy of `v`, the reference every sorter output is held to.
pub fn oracle_sort(v: &[i32]) -> Vec<i32> {
    let mut out = v.to_vec();
    out.sort();
    out
}
