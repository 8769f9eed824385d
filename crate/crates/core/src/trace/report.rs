use std::fmt;

use serde::Serialize;

/// Default simulated clock period: 4 ns, i.e. a 250 MHz platform clock.
pub const DEFAULT_CLOCK_PERIOD_NS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeRow {
    pub name: String,
    pub actual_us: f64,
    pub simulated_us: f64,
    pub cycles: f64,
}

/// Actual (wall-clock) versus simulated (cycles × period) time per measured quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeReport {
    pub clock_period_ns: f64,
    pub rows: Vec<TimeRow>,
}

impl Default for TimeReport {
    fn default() -> Self {
        Self::new(DEFAULT_CLOCK_PERIOD_NS)
    }
}

impl TimeReport {
    pub fn new(clock_period_ns: f64) -> Self {
        TimeReport { clock_period_ns, rows: Vec::new() }
    }

    pub fn simulated_us(&self, cycles: f64) -> f64 {
        cycles * self.clock_period_ns / 1000.0
    }

    pub fn add_row(&mut self, name: &str, actual_us: f64, cycles: f64) {
        let simulated_us = self.simulated_us(cycles);
        self.rows.push(TimeRow { name: name.to_string(), actual_us, simulated_us, cycles });
    }

    pub fn row(&self, name: &str) -> Option<&TimeRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for TimeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rows.is_empty() {
            return Ok(());
        }
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(8);
        writeln!(f, "{:width$}  {:>18}  {:>20}", "", "Actual Time (us)", "Simulated Time (us)")?;
        for r in &self.rows {
            writeln!(f, "{:width$}  {:>18.3}  {:>20.3}", r.name, r.actual_us, r.simulated_us)?;
        }
        write!(f, "(simulated time = cycles x {} ns)", self.clock_period_ns)
    }
}
