//! Accelerator behaviour checks written only against the register map and a
//! generic rig, so the same suite runs over either bus port backing.

use std::time::Duration;

use cosim::accel::{regs, sorter_latency, SortAccelerator, SorterConfig};
use cosim::devsim::{DirectMemoryPort, MmioRead, Platform};

use super::{oracle_sort, sorter_host, Lockstep, MEM};

pub trait Rig {
    fn build(n: usize, w: usize) -> Self;
    fn write32(&mut self, offset: u64, value: u32);
    fn read32(&mut self, offset: u64) -> u32;
    fn load(&mut self, addr: u64, keys: &[i32]);
    fn dump(&self, addr: u64, count: usize) -> Vec<i32>;
    /// Runs until the next completion interrupt. False if none came.
    fn await_irq(&mut self) -> bool;
    fn irq_count(&self) -> u64;

    fn write64(&mut self, offset: u64, value: u64) {
        self.write32(offset, value as u32);
        self.write32(offset + 4, (value >> 32) as u32);
    }

    fn read64(&mut self, offset: u64) -> u64 {
        let lo = self.read32(offset) as u64;
        lo | (self.read32(offset + 4) as u64) << 32
    }

    fn start(&mut self, src: u64, dst: u64, len: u32) {
        self.write64(regs::SRC_ADDR, src);
        self.write64(regs::DST_ADDR, dst);
        self.write32(regs::LEN_BYTES, len);
        self.write32(regs::CTRL, regs::CTRL_START);
    }
}

pub struct Direct {
    accel: SortAccelerator,
    port: DirectMemoryPort,
    cycle: u64,
    seen: usize,
}

impl Direct {
    fn tick(&mut self) {
        self.accel.step(self.cycle, &mut self.port);
        self.port.end_cycle(self.cycle);
        self.cycle += 1;
    }
}

impl Rig for Direct {
    fn build(n: usize, w: usize) -> Self {
        let accel = SortAccelerator::new(SorterConfig::new(n, w).unwrap());
        Direct { accel, port: DirectMemoryPort::new(MEM as usize), cycle: 0, seen: 0 }
    }

    fn write32(&mut self, offset: u64, value: u32) {
        self.accel.mmio_write(self.cycle, 0, offset, &value.to_le_bytes());
        self.tick();
    }

    fn read32(&mut self, offset: u64) -> u32 {
        let MmioRead::Ready(b) = self.accel.mmio_read(self.cycle, 0, offset, 4) else {
            panic!("register read deferred")
        };
        self.tick();
        u32::from_le_bytes(b.try_into().unwrap())
    }

    fn load(&mut self, addr: u64, keys: &[i32]) {
        let raw: Vec<u8> = keys.iter().flat_map(|k| k.to_le_bytes()).collect();
        self.port.memory_mut()[addr as usize..addr as usize + raw.len()].copy_from_slice(&raw);
    }

    fn dump(&self, addr: u64, count: usize) -> Vec<i32> {
        self.port.memory()[addr as usize..addr as usize + 4 * count]
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }

    fn await_irq(&mut self) -> bool {
        for _ in 0..2_000_000 {
            if self.port.interrupts().len() > self.seen {
                self.seen += 1;
                return true;
            }
            self.tick();
        }
        false
    }

    fn irq_count(&self) -> u64 {
        self.port.interrupts().len() as u64
    }
}

pub struct Bridged(Lockstep<SortAccelerator>);

impl Rig for Bridged {
    fn build(n: usize, w: usize) -> Self {
        let mut dev = sorter_host(n, w);
        dev.register_msi(0, |_| {}).unwrap();
        Bridged(dev)
    }

    fn write32(&mut self, offset: u64, value: u32) {
        self.0.write32(offset, value).unwrap();
    }

    fn read32(&mut self, offset: u64) -> u32 {
        self.0.read32(offset).unwrap()
    }

    fn load(&mut self, addr: u64, keys: &[i32]) {
        self.0.memory_mut().write_i32s(addr, keys).unwrap();
    }

    fn dump(&self, addr: u64, count: usize) -> Vec<i32> {
        self.0.memory().read_i32s(addr, count).unwrap()
    }

    fn await_irq(&mut self) -> bool {
        self.0.wait_for_interrupt(0, Duration::from_secs(30)).unwrap()
    }

    fn irq_count(&self) -> u64 {
        self.0.msi().delivered(0)
    }
}

fn keys(count: usize, salt: i64) -> Vec<i32> {
    // full-range values with repeats
    (0..count as i64)
        .map(|i| ((i * 2_654_435_761 + salt * 97) % 4_294_967_291 - 2_147_483_645) as i32 / ((i % 3) as i32 + 1))
        .collect()
}

pub fn identification<R: Rig>() {
    let mut r = R::build(256, 8);
    assert_eq!(r.read32(regs::ID), 0x50C1_0001);
    assert_eq!(r.read32(regs::N_ELEMS), 256);
    assert_eq!(r.read32(regs::LANES), 8);
    assert_eq!(r.read32(regs::LATENCY), sorter_latency(SorterConfig::new(256, 8).unwrap()));
    assert_eq!(r.read32(regs::STATUS), 0);
    assert_eq!(r.read32(0x200), u32::MAX);
    // write-only registers read as zero
    assert_eq!(r.read32(regs::CTRL), 0);
    assert_eq!(r.read32(regs::IRQ_ACK), 0);
}

pub fn cycle_counter_advances<R: Rig>() {
    let mut r = R::build(8, 2);
    let a = r.read64(regs::CYCLES);
    let b = r.read64(regs::CYCLES);
    assert!(b > a);
}

pub fn sorts_one_batch<R: Rig>() {
    let mut r = R::build(64, 4);
    let input = keys(64, 1);
    r.load(0x1000, &input);
    r.start(0x1000, 0x8000, 256);
    assert!(r.await_irq());
    assert_eq!(r.read32(regs::STATUS), regs::STATUS_DONE);
    assert_eq!(r.dump(0x8000, 64), oracle_sort(&input));
    r.write32(regs::IRQ_ACK, 1);
    assert_eq!(r.read32(regs::STATUS), 0);
}

pub fn sorts_many_batches_with_one_interrupt<R: Rig>() {
    let mut r = R::build(8, 2);
    let input = keys(8 * 25, 2);
    r.load(0x1000, &input);
    r.start(0x1000, 0x4004, 8 * 25 * 4);
    assert!(r.await_irq());
    let out = r.dump(0x4004, 8 * 25);
    for (i, o) in input.chunks(8).zip(out.chunks(8)) {
        assert_eq!(o, oracle_sort(i));
    }
    assert_eq!(r.irq_count(), 1);
    assert_eq!(r.read32(regs::STATUS), regs::STATUS_DONE);
}

pub fn extremes_and_duplicates<R: Rig>() {
    let mut r = R::build(16, 16);
    let input = vec![i32::MAX, 0, i32::MIN, -1, 1, i32::MAX, i32::MIN, 0, 7, 7, 7, -7, 3, 2, 1, 0];
    r.load(0x1000, &input);
    r.start(0x1000, 0x2000, 64);
    assert!(r.await_irq());
    assert_eq!(r.dump(0x2000, 16), oracle_sort(&input));
}

pub fn bad_length_raises_error<R: Rig>() {
    let mut r = R::build(8, 2);
    r.load(0x2000, &[5; 8]);
    r.start(0x1000, 0x2000, 20);
    assert!(r.await_irq());
    assert_eq!(r.read32(regs::STATUS), regs::STATUS_ERROR);
    assert_eq!(r.dump(0x2000, 8), vec![5; 8]);
    assert_eq!(r.irq_count(), 1);
}

pub fn failed_read_then_recovery<R: Rig>() {
    let mut r = R::build(8, 2);
    r.start(MEM - 16, 0x2000, 64);
    assert!(r.await_irq());
    assert_eq!(r.read32(regs::STATUS), regs::STATUS_ERROR);
    assert_eq!(r.irq_count(), 1);
    r.write32(regs::IRQ_ACK, 1);
    assert_eq!(r.read32(regs::STATUS), 0);

    let input = keys(16, 3);
    r.load(0x1000, &input);
    r.start(0x1000, 0x3000, 64);
    assert!(r.await_irq());
    assert_eq!(r.read32(regs::STATUS), regs::STATUS_DONE);
    let out = r.dump(0x3000, 16);
    assert_eq!(&out[..8], oracle_sort(&input[..8]));
    assert_eq!(&out[8..], oracle_sort(&input[8..]));
}

pub fn start_while_busy_is_ignored<R: Rig>() {
    let mut r = R::build(64, 1);
    let input = keys(64 * 4, 4);
    r.load(0x1000, &input);
    r.start(0x1000, 0x9000, 1024);
    r.write32(regs::CTRL, regs::CTRL_START);
    assert_ne!(r.read32(regs::STATUS) & regs::STATUS_BUSY, 0);
    assert!(r.await_irq());
    assert_eq!(r.irq_count(), 1);
    let out = r.dump(0x9000, 256);
    for (i, o) in input.chunks(64).zip(out.chunks(64)) {
        assert_eq!(o, oracle_sort(i));
    }
}

/// Every check in the suite, by name.
pub fn cases<R: Rig>() -> Vec<(&'static str, fn())> {
    vec![
        ("identification", identification::<R>),
        ("cycle_counter_advances", cycle_counter_advances::<R>),
        ("sorts_one_batch", sorts_one_batch::<R>),
        ("sorts_many_batches_with_one_interrupt", sorts_many_batches_with_one_interrupt::<R>),
        ("extremes_and_duplicates", extremes_and_duplicates::<R>),
        ("bad_length_raises_error", bad_length_raises_error::<R>),
        ("failed_read_then_recovery", failed_read_then_recovery::<R>),
        ("start_while_busy_is_ignored", start_while_busy_is_ignored::<R>),
    ]
}
