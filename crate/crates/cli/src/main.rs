//! `cosim`: device simulator, host emulator and their supervisor.

mod args;
mod device;
mod host;
mod supervise;

use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use args::{Cli, Command};

pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;

/// Waveform timescale: one cycle of the 250 MHz reference clock.
pub const TIMESCALE: &str = "4ns";

/// A non-zero process outcome.
#[derive(Debug)]
pub struct Exit {
    pub code: i32,
    pub message: String,
}

impl Exit {
    pub fn code(code: i32, message: impl Into<String>) -> Self {
        Exit { code, message: message.into() }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        Self::code(EXIT_FAILED, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::code(EXIT_CONFIG, message)
    }

    pub fn transport(message: impl Into<String>) -> Self {
        Self::code(EXIT_TRANSPORT, message)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let result = match &cli.command {
        Command::Device { common, device } => device::main(common, device),
        Command::Host { common, host, extra } => host::main(common, host, extra),
        Command::Run { common, device, host } => supervise::run(common, device, host),
        Command::RestartDrill { common, device, host, victim } => {
            supervise::restart_drill(common, device, host, *victim)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.code == EXIT_CONFIG {
                eprintln!("error: {}\n\n{}", e.message, Cli::command().render_usage());
            } else {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.code as u8)
        }
    }
}
