//! `effact`: compile, execute, simulate, sweep, analyze and generate
//! programs for the vector FHE accelerator model.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "effact", version, about = "Compiler, golden executor and cycle simulator for a vector FHE accelerator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compile `.eir` into assembly (`.easm`) or a binary (`.ebin`).
    Compile(CompileArgs),
    /// Run a program on the golden executor.
    Exec(ExecArgs),
    /// Simulate a program and report cycles, utilization and DRAM traffic.
    Sim(SimArgs),
    /// Compile and simulate one `.eir` for several SRAM sizes.
    Sweep(SweepArgs),
    /// Instruction mix, liveness and compile statistics of a program.
    Analyze(AnalyzeArgs),
    /// Emit a benchmark kernel or a random program as `.eir`.
    Gen(GenArgs),
}

/// Hardware description and pass toggles shared by the compiling commands.
#[derive(Args, Debug, Clone)]
pub struct HwArgs {
    /// Hardware description (TOML). Defaults to built-in parameters.
    #[arg(long, env = "EFFACT_HW")]
    pub hw: Option<PathBuf>,
    /// Override the SRAM capacity in residue polynomials.
    #[arg(long)]
    pub slots: Option<u32>,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct PassArgs {
    /// Disable partial redundancy elimination.
    #[arg(long)]
    pub no_pre: bool,
    /// Disable copy and constant propagation.
    #[arg(long)]
    pub no_propagate: bool,
    /// Disable operation merging (constant folding, scale deferral, MAC fusion).
    #[arg(long)]
    pub no_merge: bool,
    /// Disable merging of producer/consumer pairs into streamed transfers.
    #[arg(long)]
    pub no_streaming: bool,
    /// Keep source order instead of list scheduling.
    #[arg(long)]
    pub no_schedule: bool,
}

#[derive(Args, Debug)]
pub struct CompileArgs {
    /// Input `.eir`.
    pub input: PathBuf,
    /// Output path; `.ebin` writes the binary encoding. Prints assembly when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub hw: HwArgs,
    #[command(flatten)]
    pub passes: PassArgs,
    /// Write compile statistics as JSON to a file, or to stdout with no value.
    #[arg(long, num_args = 0..=1, default_missing_value = "-")]
    pub json: Option<String>,
}

#[derive(Args, Debug)]
pub struct ExecArgs {
    /// Program: `.eir`, `.easm` or `.ebin`.
    pub input: PathBuf,
    /// Input memory image. Without it, every region the program reads first
    /// is filled with random data from `--seed`.
    #[arg(long)]
    pub mem: Option<PathBuf>,
    /// Write the final memory image.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write one line per executed instruction.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "-")]
    pub json: Option<String>,
}

#[derive(Args, Debug)]
pub struct SimArgs {
    /// Program: `.easm`, `.ebin`, or `.eir` (compiled first).
    pub input: PathBuf,
    #[command(flatten)]
    pub hw: HwArgs,
    #[command(flatten)]
    pub passes: PassArgs,
    /// Write the per-instruction timeline as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "-")]
    pub json: Option<String>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Input `.eir`.
    pub input: PathBuf,
    /// Hardware description (TOML). Defaults to built-in parameters.
    #[arg(long, env = "EFFACT_HW")]
    pub hw: Option<PathBuf>,
    /// SRAM sizes to sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128")]
    pub slots: Vec<u32>,
    #[command(flatten)]
    pub passes: PassArgs,
    /// CSV output. Prints to stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "-")]
    pub json: Option<String>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Program: `.eir`, `.easm` or `.ebin`.
    pub input: PathBuf,
    #[command(flatten)]
    pub hw: HwArgs,
    #[command(flatten)]
    pub passes: PassArgs,
    #[arg(long, num_args = 0..=1, default_missing_value = "-")]
    pub json: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Keyswitch,
    Hoisted,
    Helr,
    Bootstrap,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Small parameters the executor runs quickly.
    Desk,
    /// N=2^16, L=24, dnum=4, 15-level bootstrap.
    Full,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    pub kernel: Kernel,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// Ring degree.
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Ciphertext primes (for `random`: moduli).
    #[arg(long = "L")]
    pub levels: Option<usize>,
    /// Active limbs.
    #[arg(long = "l")]
    pub limbs: Option<usize>,
    #[arg(long)]
    pub dnum: Option<usize>,
    /// Packed message slots.
    #[arg(long = "msg-slots")]
    pub msg_slots: Option<usize>,
    #[arg(long = "Lboot")]
    pub l_boot: Option<usize>,
    #[arg(long = "Lcts")]
    pub l_cts: Option<usize>,
    #[arg(long = "Levalmod")]
    pub l_evalmod: Option<usize>,
    #[arg(long = "Lstc")]
    pub l_stc: Option<usize>,
    #[arg(long)]
    pub rotations: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    /// Vector operations of a random program.
    #[arg(long)]
    pub ops: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, num_args = 0..=1, default_missing_value = "-")]
    pub json: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("effact: {e}");
            ExitCode::from(1)
        }
    }
}
