//! Subcommand implementations. Every failure is tagged with the stage that
//! produced it.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use effact_backend::binary::{assemble, disassemble, BIN_MAGIC};
use effact_backend::compile::{compile, CompileStats, PassConfig};
use effact_backend::exec::{execute_with, ExecOptions};
use effact_backend::hw::HardwareDescription;
use effact_backend::ir::{Form, Program};
use effact_backend::memory::MemoryImage;
use effact_backend::passes::alloc::max_liveness;
use effact_backend::passes::lower::lower;
use effact_backend::sim::{simulate_with, sweep_sram, write_sweep_csv, write_trace_csv, SimOptions, SimReport};
use effact_backend::text::{parse_program, print_program};
use effact_backend::workloads::image::random_image;
use effact_backend::workloads::mix::mac_fusable;
use effact_backend::workloads::random::{random_program, RandomConfig};
use effact_backend::workloads::{
    gen_bootstrap_skeleton, gen_helr_iteration, gen_hoisted_rotations, gen_keyswitch, instruction_mix, Category,
    InstructionMix, WorkloadParams,
};

use crate::{AnalyzeArgs, Command, CompileArgs, ExecArgs, GenArgs, HwArgs, Kernel, PassArgs, Preset, SimArgs, SweepArgs};

/// Writes to stdout. A closed pipe (`effact ... | head`) ends the process
/// quietly instead of panicking.
fn put(s: &str) {
    if let Err(e) = std::io::stdout().lock().write_all(s.as_bytes()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("effact: write: stdout: {e}");
        std::process::exit(1);
    }
}

macro_rules! say {
    ($($t:tt)*) => {
        put(&format!("{}\n", format_args!($($t)*)))
    };
}

#[derive(Debug, Error)]
#[error("{stage}: {msg}")]
pub struct Failure {
    stage: &'static str,
    msg: String,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T, E: Display> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            stage,
            msg: e.to_string(),
        })
    }
}

pub fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Compile(a) => compile_cmd(a),
        Command::Exec(a) => exec_cmd(a),
        Command::Sim(a) => sim_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Gen(a) => gen_cmd(a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure {
        stage: "read",
        msg: format!("{}: {e}", path.display()),
    })
}

fn write(path: &Path, data: &[u8]) -> Result<(), Failure> {
    fs::write(path, data).map_err(|e| Failure {
        stage: "write",
        msg: format!("{}: {e}", path.display()),
    })
}

/// Text or binary, told apart by the binary magic.
fn load_program(path: &Path) -> Result<Program, Failure> {
    let bytes = read(path)?;
    if bytes.starts_with(&BIN_MAGIC) {
        return disassemble(&bytes).stage("decode");
    }
    let text = String::from_utf8(bytes).map_err(|_| Failure {
        stage: "read",
        msg: format!("{}: neither text nor a binary program", path.display()),
    })?;
    parse_program(&text).map_err(|e| Failure {
        stage: "parse",
        msg: format!("{}: {e}", path.display()),
    })
}

fn load_hw(a: &HwArgs, passes: Option<&PassArgs>) -> Result<HardwareDescription, Failure> {
    let mut hw = match &a.hw {
        Some(p) => HardwareDescription::load(p).map_err(|e| Failure {
            stage: "hw",
            msg: format!("{}: {e}", p.display()),
        })?,
        None => HardwareDescription::default(),
    };
    if let Some(k) = a.slots {
        hw = hw.with_slots(k);
    }
    if passes.is_some_and(|p| p.no_streaming) {
        hw = hw.with_streaming(false);
    }
    hw.validate().stage("hw")?;
    Ok(hw)
}

fn pass_config(a: &PassArgs) -> PassConfig {
    PassConfig {
        propagate: !a.no_propagate,
        pre: !a.no_pre,
        peephole: !a.no_merge,
        schedule: !a.no_schedule,
        alloc: true,
        streaming: !a.no_streaming,
    }
}

/// `-` prints to stdout; anything else is a file.
fn emit_json(dest: &str, value: &impl Serialize) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(value).stage("json")? + "\n";
    if dest == "-" {
        put(&s);
        Ok(())
    } else {
        write(Path::new(dest), s.as_bytes())
    }
}

fn json_to_stdout(json: &Option<String>) -> bool {
    json.as_deref() == Some("-")
}

#[derive(Serialize)]
struct CompileSummary<'a> {
    input: String,
    output: Option<String>,
    passes: PassConfig,
    sram_slots: u32,
    stats: &'a CompileStats,
}

fn compile_cmd(a: CompileArgs) -> Result<(), Failure> {
    let ir = load_program(&a.input)?;
    let hw = load_hw(&a.hw, Some(&a.passes))?;
    let cfg = pass_config(&a.passes);
    let c = compile(&ir, &hw, &cfg).stage("compile")?;
    let binary = a.output.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "ebin"));
    match &a.output {
        Some(path) if binary => write(path, &assemble(&c.program).stage("assemble")?)?,
        Some(path) => write(path, print_program(&c.program).as_bytes())?,
        None if !json_to_stdout(&a.json) => put(&print_program(&c.program)),
        None => {}
    }
    if let Some(dest) = &a.json {
        emit_json(
            dest,
            &CompileSummary {
                input: a.input.display().to_string(),
                output: a.output.as_ref().map(|p| p.display().to_string()),
                passes: cfg,
                sram_slots: hw.sram_slots,
                stats: &c.stats,
            },
        )?;
    }
    if let (Some(path), false) = (&a.output, json_to_stdout(&a.json)) {
        let s = &c.stats;
        say!(
            "{} -> {}: {} instructions (lowered {}, optimized {})",
            a.input.display(),
            path.display(),
            s.emitted,
            s.lowered,
            s.optimized
        );
        if let Some(al) = s.alloc {
            say!(
                "  {} of {} slots used, {} spill stores, {} reloads",
                al.slots_used, hw.sram_slots, al.spill_stores, al.reloads
            );
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RegionSummary {
    name: String,
    size: u32,
    written: u32,
}

#[derive(Serialize)]
struct ExecSummary {
    vector_ops: u64,
    scalar_ops: u64,
    ops: BTreeMap<&'static str, u64>,
    regions: Vec<RegionSummary>,
}

fn exec_cmd(a: ExecArgs) -> Result<(), Failure> {
    let p = load_program(&a.input)?;
    let mut img = match &a.mem {
        Some(path) => MemoryImage::from_bytes(&read(path)?).stage("memory")?,
        None => random_image(&p, a.seed).stage("memory")?,
    };
    let opts = ExecOptions {
        trace: a.trace.is_some(),
        ..ExecOptions::default()
    };
    let r = execute_with(&p, &mut img, &opts).stage("exec")?;
    if let Some(path) = &a.output {
        write(path, &img.to_bytes())?;
    }
    if let Some(path) = &a.trace {
        let mut s = r.trace.join("\n");
        s.push('\n');
        write(path, s.as_bytes())?;
    }
    let summary = ExecSummary {
        vector_ops: r.vector_ops,
        scalar_ops: r.scalar_ops,
        ops: r.dynamic_counts.iter().map(|(op, k)| (op.mnemonic(), *k)).collect(),
        regions: img
            .regions()
            .iter()
            .map(|reg| RegionSummary {
                name: reg.name.clone(),
                size: reg.size,
                written: (0..reg.size as u64)
                    .filter(|&k| img.get(&reg.name, k).is_ok_and(|x| x.is_some()))
                    .count() as u32,
            })
            .collect(),
    };
    if let Some(dest) = &a.json {
        emit_json(dest, &summary)?;
    }
    if !json_to_stdout(&a.json) {
        say!(
            "executed {} vector and {} scalar instructions",
            summary.vector_ops, summary.scalar_ops
        );
        for (op, k) in &summary.ops {
            say!("  {op:<6} {k}");
        }
        for reg in &summary.regions {
            say!("  @{:<12} {}/{} polynomials set", reg.name, reg.written, reg.size);
        }
    }
    Ok(())
}

/// Lowers and compiles IR input; other forms run as given.
fn machine_program(p: Program, hw: &HardwareDescription, passes: &PassArgs) -> Result<Program, Failure> {
    if p.form == Form::Ir {
        Ok(compile(&p, hw, &pass_config(passes)).stage("compile")?.program)
    } else {
        Ok(p)
    }
}

fn print_report(r: &SimReport) {
    say!("cycles               {}", r.cycles);
    say!(
        "instructions         {} vector, {} scalar",
        r.vector_instructions, r.scalar_instructions
    );
    say!("critical path        {}", r.critical_path);
    say!("DRAM bound           {}", r.dram_bound);
    say!("FU utilization       {:.4}", r.fu_utilization());
    for u in &r.units {
        say!(
            "  {:<6} x{:<3} {:>8} instr  {:>10} busy  {:.4}",
            u.unit, u.count, u.instructions, u.busy_cycles, u.utilization
        );
    }
    say!("MAC on NTT units     {}", r.mac_on_ntt);
    let d = &r.dram;
    say!(
        "DRAM bytes           {} (load {}, store {}, stream read {}, stream write {})",
        d.total_bytes, d.load_bytes, d.store_bytes, d.stream_read_bytes, d.stream_write_bytes
    );
    say!("DRAM utilization     {:.4}", d.utilization);
    say!("bank conflicts       {}", r.bank_conflicts);
    say!("peak FIFO occupancy  {}", r.peak_fifo);
}

fn sim_cmd(a: SimArgs) -> Result<(), Failure> {
    let hw = load_hw(&a.hw, Some(&a.passes))?;
    let p = machine_program(load_program(&a.input)?, &hw, &a.passes)?;
    let opts = SimOptions {
        trace: a.trace.is_some(),
        ..SimOptions::default()
    };
    let mut r = simulate_with(&p, &hw, &opts).stage("sim")?;
    if let (Some(path), Some(events)) = (&a.trace, r.trace.take()) {
        let mut buf = Vec::new();
        write_trace_csv(&events, &mut buf).stage("trace")?;
        write(path, &buf)?;
    }
    if let Some(dest) = &a.json {
        emit_json(dest, &r)?;
    }
    if !json_to_stdout(&a.json) {
        print_report(&r);
    }
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<(), Failure> {
    let ir = load_program(&a.input)?;
    let hw_args = HwArgs { hw: a.hw.clone(), slots: None };
    let hw = load_hw(&hw_args, Some(&a.passes))?;
    let points = sweep_sram(&ir, &hw, &a.slots, &pass_config(&a.passes)).stage("sweep")?;
    let mut csv = Vec::new();
    write_sweep_csv(&points, &mut csv).stage("csv")?;
    match &a.output {
        Some(path) => write(path, &csv)?,
        None if !json_to_stdout(&a.json) => put(&String::from_utf8_lossy(&csv)),
        None => {}
    }
    if let Some(dest) = &a.json {
        emit_json(dest, &points)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MixRow {
    category: &'static str,
    count: usize,
    percent: f64,
}

#[derive(Serialize)]
struct Analysis {
    form: &'static str,
    n: usize,
    moduli: usize,
    instructions: usize,
    mix: Vec<MixRow>,
    arithmetic_percent: f64,
    /// Multiplies outside base conversion and those a MAC can absorb.
    multiplies: usize,
    mac_fusable: usize,
    /// Peak simultaneously live values of the scheduled program, before
    /// allocation.
    max_liveness: usize,
    compile: Option<CompileStats>,
}

fn mix_rows(mix: &InstructionMix) -> Vec<MixRow> {
    Category::ALL
        .iter()
        .map(|&c| MixRow {
            category: c.as_str(),
            count: mix.count(c),
            percent: 100.0 * mix.fraction(c),
        })
        .collect()
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<(), Failure> {
    let p = load_program(&a.input)?;
    let mix = instruction_mix(&p);
    let (analysis_src, compile_stats, liveness) = if p.form == Form::Ir {
        let hw = load_hw(&a.hw, Some(&a.passes))?;
        let cfg = pass_config(&a.passes);
        let lowered = lower(&p).stage("lower")?;
        let pre_alloc = PassConfig {
            alloc: false,
            streaming: false,
            ..cfg
        };
        let scheduled = compile(&p, &hw, &pre_alloc).stage("compile")?.program;
        let full = compile(&p, &hw, &cfg).stage("compile")?;
        (lowered, Some(full.stats), max_liveness(&scheduled))
    } else {
        let live = if p.form.is_physical() { 0 } else { max_liveness(&p) };
        (p.clone(), None, live)
    };
    let (mac_fusable, multiplies) = mac_fusable(&analysis_src);
    let out = Analysis {
        form: p.form.as_str(),
        n: p.n,
        moduli: p.moduli.len(),
        instructions: mix.total,
        mix: mix_rows(&mix),
        arithmetic_percent: 100.0 * mix.arithmetic_fraction(),
        multiplies,
        mac_fusable,
        max_liveness: liveness,
        compile: compile_stats,
    };
    if let Some(dest) = &a.json {
        emit_json(dest, &out)?;
    }
    if !json_to_stdout(&a.json) {
        say!(
            "{} ({} form, n = {}, {} moduli): {} vector instructions",
            a.input.display(),
            out.form,
            out.n,
            out.moduli,
            out.instructions
        );
        for row in &out.mix {
            say!("  {:<10} {:>9} {:>7.2}%", row.category, row.count, row.percent);
        }
        say!("  arithmetic {:>17.2}%", out.arithmetic_percent);
        say!("MAC-fusable multiplies {} of {}", out.mac_fusable, out.multiplies);
        say!("max liveness {}", out.max_liveness);
        if let Some(s) = &out.compile {
            say!(
                "compiled: {} instructions; propagated {}, PRE removed {}, folded {}, deferred {}, fused {}, streamed links {}",
                s.emitted,
                s.propagated,
                s.pre_removed,
                s.peephole.folded,
                s.peephole.deferred,
                s.peephole.fused,
                s.streaming.links
            );
        }
    }
    Ok(())
}

fn workload_params(a: &GenArgs) -> WorkloadParams {
    let mut p = match a.preset {
        Preset::Desk => WorkloadParams::desk(a.n.unwrap_or(1 << 10), a.levels.unwrap_or(4), a.dnum.unwrap_or(2)),
        Preset::Full => WorkloadParams::full_size(),
    };
    if let Some(n) = a.n {
        p.n = n;
        p.slots = p.slots.min(n / 2);
    }
    if let Some(l) = a.levels {
        p.levels = l;
        p.limbs = l;
    }
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut p.limbs, a.limbs);
    set(&mut p.dnum, a.dnum);
    set(&mut p.slots, a.msg_slots);
    set(&mut p.l_boot, a.l_boot);
    set(&mut p.l_cts, a.l_cts);
    set(&mut p.l_evalmod, a.l_evalmod);
    set(&mut p.l_stc, a.l_stc);
    set(&mut p.rotations, a.rotations);
    set(&mut p.features, a.features);
    p
}

#[derive(Serialize)]
struct GenSummary {
    kernel: &'static str,
    output: Option<String>,
    params: Option<WorkloadParams>,
    seed: Option<u64>,
    instructions: usize,
}

fn gen_cmd(a: GenArgs) -> Result<(), Failure> {
    let params = workload_params(&a);
    let (name, program, params) = match a.kernel {
        Kernel::Keyswitch => ("keyswitch", gen_keyswitch(&params).stage("gen")?, Some(params)),
        Kernel::Hoisted => ("hoisted", gen_hoisted_rotations(&params).stage("gen")?, Some(params)),
        Kernel::Helr => ("helr", gen_helr_iteration(&params).stage("gen")?, Some(params)),
        Kernel::Bootstrap => ("bootstrap", gen_bootstrap_skeleton(&params).stage("gen")?, Some(params)),
        Kernel::Random => {
            let d = RandomConfig::default();
            let cfg = RandomConfig {
                n: a.n.unwrap_or(d.n),
                moduli: a.levels.unwrap_or(d.moduli),
                ops: a.ops.unwrap_or(d.ops),
                ..d
            };
            if !cfg.n.is_power_of_two() || cfg.n < 2 {
                return Err(Failure {
                    stage: "gen",
                    msg: format!("N = {} must be a power of two", cfg.n),
                });
            }
            ("random", random_program(a.seed, &cfg).stage("gen")?, None)
        }
    };
    let text = print_program(&program);
    match &a.output {
        Some(path) => write(path, text.as_bytes())?,
        None if !json_to_stdout(&a.json) => put(&text),
        None => {}
    }
    let summary = GenSummary {
        kernel: name,
        output: a.output.as_ref().map(|p| p.display().to_string()),
        seed: (a.kernel == Kernel::Random).then_some(a.seed),
        params,
        instructions: program.instrs.len(),
    };
    if let Some(dest) = &a.json {
        emit_json(dest, &summary)?;
    }
    if let (Some(path), false) = (&a.output, json_to_stdout(&a.json)) {
        say!("{name}: {} instructions -> {}", summary.instructions, path.display());
    }
    Ok(())
}
