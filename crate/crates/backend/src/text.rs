//! Text syntax shared by `.eir` (IR) and `.easm` (assembly).
//!
//! ```text
//! # comment
//! .form ir                      # ir | lowered | scheduled | allocated | machine
//! .n 1024
//! .modulus q0 36028797018820609
//! .sym d2 4                     # DRAM region of 4 residue polynomials
//! %a = load @d2+0, q0
//! %b = intt %a, q0
//! %c = mmul %b, nm:1, q0
//! %d, %e = bconv %c, %x -> q2, q3
//! %f = mac %acc, %u, sm:77, q2
//! store %f, @out+0, q2
//! ```
//!
//! Registers are `%name` (virtual), `$k` (SRAM slot) and `~k` (FIFO link).
//! A DRAM operand `@sym+off` in a source position is a streaming read; in
//! the destination position it is a streaming write. Immediates are
//! `nm:`/`sm:`/`dm:` followed by a plain residue. Flags follow the mnemonic:
//! `.defer`, `.absorb`, `.x` (cross-modulus read), `.bc` (base-conversion
//! origin).
//!
//! Machine code may also use the scalar subset (`li`, `sadd`, `smul`, `blt`,
//! `jmp`) with registers `s0`..`s15`, `label:` lines, and indexed addresses
//! `@sym+off+s2*4`.
//!
//! Numeric virtual register names keep their number; other names are
//! numbered after the largest numeric one, in order of appearance.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use effact_core::MontgomeryForm;
use thiserror::Error;

use crate::ir::{
    Addr, BconvInstr, Dst, Flags, Form, Imm, Instr, Program, Reg, ScalarInstr, ScalarSrc, Src, Symbol,
    VecInstr, VecOp, SCALAR_REGS,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}, column {col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

struct Line<'a> {
    no: usize,
    raw: &'a str,
    body: &'a str,
}

impl Line<'_> {
    fn err(&self, token: &str, msg: impl Into<String>) -> ParseError {
        let col = if token.is_empty() {
            1
        } else {
            self.raw.find(token).map_or(1, |c| c + 1)
        };
        ParseError {
            line: self.no,
            col,
            msg: msg.into(),
        }
    }
}

struct Parser {
    form: Option<Form>,
    n: Option<usize>,
    moduli: Vec<u64>,
    symbols: Vec<Symbol>,
    names: HashMap<String, u32>,
    labels: HashMap<String, usize>,
}

fn parse_int<T: std::str::FromStr>(line: &Line, s: &str) -> Result<T, ParseError> {
    s.trim()
        .parse()
        .map_err(|_| line.err(s.trim(), format!("expected an integer, found `{}`", s.trim())))
}

fn split_operands(s: &str) -> Vec<&str> {
    if s.trim().is_empty() {
        return Vec::new();
    }
    s.split(',').map(str::trim).collect()
}

impl Parser {
    fn modulus(&self, line: &Line, tok: &str) -> Result<u16, ParseError> {
        let idx: usize = tok
            .strip_prefix('q')
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| line.err(tok, format!("expected a modulus `qK`, found `{tok}`")))?;
        if idx >= self.moduli.len() {
            return Err(line.err(tok, format!("unknown modulus id q{idx}")));
        }
        Ok(idx as u16)
    }

    fn scalar_reg(&self, line: &Line, tok: &str) -> Result<u8, ParseError> {
        match tok.strip_prefix('s').and_then(|d| d.parse::<u8>().ok()) {
            Some(r) if (r as usize) < SCALAR_REGS => Ok(r),
            _ => Err(line.err(tok, format!("expected a scalar register s0..s15, found `{tok}`"))),
        }
    }

    fn scalar_src(&self, line: &Line, tok: &str) -> Result<ScalarSrc, ParseError> {
        if tok.starts_with('s') {
            Ok(ScalarSrc::Reg(self.scalar_reg(line, tok)?))
        } else {
            Ok(ScalarSrc::Imm(parse_int(line, tok)?))
        }
    }

    fn addr(&self, line: &Line, tok: &str) -> Result<Addr, ParseError> {
        let body = &tok[1..];
        let mut parts = body.split('+').map(str::trim);
        let name = parts.next().unwrap_or_default();
        let sym = self
            .symbols
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| line.err(tok, format!("unknown symbol `{name}`")))?;
        let mut addr = Addr::new(sym as u32, 0);
        for p in parts {
            if let Some((r, stride)) = p.split_once('*') {
                addr.index = Some((self.scalar_reg(line, r.trim())?, parse_int(line, stride)?));
            } else if p.starts_with('s') {
                addr.index = Some((self.scalar_reg(line, p)?, 1));
            } else {
                addr.offset = parse_int(line, p)?;
            }
        }
        if addr.index.is_none() && addr.offset >= self.symbols[sym].size {
            return Err(line.err(tok, format!("offset {} outside `{name}`", addr.offset)));
        }
        Ok(addr)
    }

    fn reg(&self, line: &Line, tok: &str) -> Result<Reg, ParseError> {
        let num = |s: &str| -> Result<u32, ParseError> { parse_int(line, s) };
        if let Some(name) = tok.strip_prefix('%') {
            return self
                .names
                .get(name)
                .map(|&v| Reg::Virt(v))
                .ok_or_else(|| line.err(tok, format!("bad register `{tok}`")));
        }
        if let Some(s) = tok.strip_prefix('$') {
            return Ok(Reg::Slot(num(s)?));
        }
        if let Some(f) = tok.strip_prefix('~') {
            return Ok(Reg::Fifo(num(f)?));
        }
        Err(line.err(tok, format!("expected a register, found `{tok}`")))
    }

    fn src(&self, line: &Line, tok: &str) -> Result<Src, ParseError> {
        if tok.starts_with('@') {
            return Ok(Src::Mem(self.addr(line, tok)?));
        }
        if let Some((form, value)) = tok.split_once(':') {
            let form = MontgomeryForm::parse(form)
                .ok_or_else(|| line.err(tok, format!("unknown immediate form in `{tok}`")))?;
            return Ok(Src::Imm(Imm::new(parse_int(line, value)?, form)));
        }
        Ok(Src::Reg(self.reg(line, tok)?))
    }

    fn dst(&self, line: &Line, tok: &str) -> Result<Dst, ParseError> {
        if tok.starts_with('@') {
            Ok(Dst::Mem(self.addr(line, tok)?))
        } else {
            Ok(Dst::Reg(self.reg(line, tok)?))
        }
    }

    fn label(&self, line: &Line, tok: &str) -> Result<usize, ParseError> {
        self.labels
            .get(tok)
            .copied()
            .ok_or_else(|| line.err(tok, format!("unknown label `{tok}`")))
    }

    fn instr(&self, line: &Line) -> Result<Instr, ParseError> {
        let (lhs, rhs) = match line.body.split_once('=') {
            Some((l, r)) => (Some(l.trim()), r.trim()),
            None => (None, line.body.trim()),
        };
        let (head, rest) = rhs.split_once(char::is_whitespace).unwrap_or((rhs, ""));
        let mut pieces = head.split('.');
        let mnemonic = pieces.next().unwrap_or_default();
        let mut flags = Flags::default();
        for f in pieces {
            match f {
                "defer" => flags.defer = true,
                "absorb" => flags.absorb = true,
                "x" => flags.cross = true,
                "bc" => flags.bconv = true,
                _ => return Err(line.err(f, format!("unknown flag `.{f}`"))),
            }
        }
        let dsts = lhs.map(split_operands).unwrap_or_default();
        match mnemonic {
            "li" | "sadd" | "smul" | "blt" | "jmp" => return self.scalar(line, mnemonic, rest, lhs.is_some()),
            "bconv" => {
                let (s, t) = rest
                    .split_once("->")
                    .ok_or_else(|| line.err(mnemonic, "bconv needs `sources -> targets`"))?;
                let srcs = split_operands(s)
                    .into_iter()
                    .map(|t| self.reg(line, t))
                    .collect::<Result<Vec<_>, _>>()?;
                let targets = split_operands(t)
                    .into_iter()
                    .map(|t| self.modulus(line, t))
                    .collect::<Result<Vec<_>, _>>()?;
                let dsts = dsts
                    .into_iter()
                    .map(|t| self.reg(line, t))
                    .collect::<Result<Vec<_>, _>>()?;
                if dsts.len() != targets.len() {
                    return Err(line.err(mnemonic, "bconv needs one destination per target"));
                }
                if srcs.is_empty() {
                    return Err(line.err(mnemonic, "bconv needs at least one source"));
                }
                return Ok(Instr::Bconv(BconvInstr { dsts, srcs, targets }));
            }
            _ => {}
        }
        let op = VecOp::from_mnemonic(mnemonic)
            .ok_or_else(|| line.err(mnemonic, format!("unknown opcode `{mnemonic}`")))?;
        let mut ops = split_operands(rest);
        let modulus = match ops.pop() {
            Some(t) => self.modulus(line, t)?,
            None => return Err(line.err(mnemonic, "missing modulus operand")),
        };
        let mut step = 0;
        if op == VecOp::Auto {
            let t = ops.pop().ok_or_else(|| line.err(mnemonic, "auto needs a step"))?;
            step = parse_int(line, t)?;
        }
        let (dst, srcs) = if op == VecOp::Store {
            if !dsts.is_empty() || ops.len() != 2 {
                return Err(line.err(mnemonic, "expected `store SRC, @ADDR, qK`"));
            }
            let addr = ops[1];
            if !addr.starts_with('@') {
                return Err(line.err(addr, "store destination must be an address"));
            }
            (Dst::Mem(self.addr(line, addr)?), vec![self.src(line, ops[0])?])
        } else {
            if dsts.len() != 1 {
                return Err(line.err(mnemonic, format!("`{mnemonic}` defines exactly one value")));
            }
            let srcs = ops
                .iter()
                .map(|t| self.src(line, t))
                .collect::<Result<Vec<_>, _>>()?;
            (self.dst(line, dsts[0])?, srcs)
        };
        if srcs.len() != op.arity() {
            return Err(line.err(
                mnemonic,
                format!("`{mnemonic}` takes {} source operands, found {}", op.arity(), srcs.len()),
            ));
        }
        for (k, s) in srcs.iter().enumerate() {
            let last = k + 1 == srcs.len();
            if matches!(s, Src::Imm(_)) && !(last && op.takes_imm()) {
                return Err(line.err(mnemonic, "immediate not allowed in this position"));
            }
        }
        if op == VecOp::Load && !matches!(srcs[0], Src::Mem(_)) {
            return Err(line.err(mnemonic, "load source must be an address"));
        }
        if op == VecOp::Store && !matches!(srcs[0], Src::Reg(_)) {
            return Err(line.err(mnemonic, "store source must be a register"));
        }
        if flags.defer && op != VecOp::Intt {
            return Err(line.err(mnemonic, ".defer applies to intt only"));
        }
        if flags.absorb && !(op == VecOp::Mmul && matches!(srcs[1], Src::Imm(_))) {
            return Err(line.err(mnemonic, ".absorb needs mmul with an immediate"));
        }
        if flags.cross && !matches!(op, VecOp::Mmul | VecOp::Mac) {
            return Err(line.err(mnemonic, ".x applies to mmul and mac"));
        }
        Ok(Instr::Vec(VecInstr {
            op,
            dst,
            srcs,
            modulus,
            flags,
            step,
        }))
    }

    fn scalar(&self, line: &Line, m: &str, rest: &str, has_eq: bool) -> Result<Instr, ParseError> {
        if has_eq {
            return Err(line.err(m, "scalar instructions do not use `=`"));
        }
        let ops = split_operands(rest);
        let want = match m {
            "li" => 2,
            "jmp" => 1,
            _ => 3,
        };
        if ops.len() != want {
            return Err(line.err(m, format!("`{m}` takes {want} operands")));
        }
        let s = match m {
            "li" => ScalarInstr::Li {
                dst: self.scalar_reg(line, ops[0])?,
                imm: parse_int(line, ops[1])?,
            },
            "sadd" => ScalarInstr::Add {
                dst: self.scalar_reg(line, ops[0])?,
                a: self.scalar_reg(line, ops[1])?,
                b: self.scalar_src(line, ops[2])?,
            },
            "smul" => ScalarInstr::Mul {
                dst: self.scalar_reg(line, ops[0])?,
                a: self.scalar_reg(line, ops[1])?,
                b: self.scalar_src(line, ops[2])?,
            },
            "blt" => ScalarInstr::Blt {
                a: self.scalar_reg(line, ops[0])?,
                b: self.scalar_src(line, ops[1])?,
                target: self.label(line, ops[2])?,
            },
            _ => ScalarInstr::Jmp {
                target: self.label(line, ops[0])?,
            },
        };
        Ok(Instr::Scalar(s))
    }
}

fn is_label(body: &str) -> Option<&str> {
    let t = body.trim();
    let name = t.strip_suffix(':')?;
    (!name.is_empty() && name.chars().all(|c| c.is_alphanumeric() || c == '_')).then_some(name)
}

fn register_names<'a>(lines: &[Line<'a>]) -> HashMap<String, u32> {
    let mut numeric = BTreeSet::new();
    let mut other = Vec::new();
    let mut seen = HashSet::new();
    for l in lines {
        for tok in l.body.split(|c: char| c == ',' || c == '=' || c.is_whitespace()) {
            if let Some(name) = tok.strip_prefix('%') {
                if name.is_empty() || !seen.insert(name.to_string()) {
                    continue;
                }
                match name.parse::<u32>() {
                    Ok(v) => {
                        numeric.insert(v);
                    }
                    Err(_) => other.push(name.to_string()),
                }
            }
        }
    }
    let mut next = numeric.iter().next_back().map_or(0, |m| m + 1);
    let mut out: HashMap<String, u32> = numeric.into_iter().map(|v| (v.to_string(), v)).collect();
    for name in other {
        out.insert(name, next);
        next += 1;
    }
    out
}

/// Parses `.eir` or `.easm` text.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let lines: Vec<Line> = text
        .lines()
        .enumerate()
        .map(|(i, raw)| Line {
            no: i + 1,
            raw,
            body: raw.split('#').next().unwrap_or_default(),
        })
        .filter(|l| !l.body.trim().is_empty())
        .collect();
    let mut p = Parser {
        form: None,
        n: None,
        moduli: Vec::new(),
        symbols: Vec::new(),
        names: register_names(&lines),
        labels: HashMap::new(),
    };
    // Directives and label positions first.
    let mut count = 0;
    for l in &lines {
        let t = l.body.trim();
        if let Some(d) = t.strip_prefix('.') {
            let words: Vec<&str> = d.split_whitespace().collect();
            match words.as_slice() {
                ["form", f] => p.form = Some(Form::parse(f).ok_or_else(|| l.err(f, format!("unknown form `{f}`")))?),
                ["n", v] => p.n = Some(parse_int(l, v)?),
                ["modulus", name, v] => {
                    if *name != format!("q{}", p.moduli.len()) {
                        return Err(l.err(name, format!("expected modulus q{}", p.moduli.len())));
                    }
                    p.moduli.push(parse_int(l, v)?);
                }
                ["sym", name, size] => {
                    if p.symbols.iter().any(|s| s.name == *name) {
                        return Err(l.err(name, format!("symbol `{name}` declared twice")));
                    }
                    p.symbols.push(Symbol {
                        name: name.to_string(),
                        size: parse_int(l, size)?,
                    });
                }
                _ => return Err(l.err(t, format!("unknown directive `{t}`"))),
            }
        } else if let Some(name) = is_label(t) {
            if p.labels.insert(name.to_string(), count).is_some() {
                return Err(l.err(name, format!("label `{name}` defined twice")));
            }
        } else {
            count += 1;
        }
    }
    let mut prog = Program::new(p.n.unwrap_or(0), p.moduli.clone());
    prog.symbols = p.symbols.clone();
    prog.form = p.form.unwrap_or(Form::Ir);
    let mut defined = HashMap::new();
    for l in &lines {
        let t = l.body.trim();
        if t.starts_with('.') || is_label(t).is_some() {
            continue;
        }
        let ins = p.instr(l)?;
        if prog.form.is_physical() {
            if ins.uses().iter().chain(ins.defs().iter()).any(|r| matches!(r, Reg::Virt(_))) {
                return Err(l.err(t, format!("virtual register in {} form", prog.form.as_str())));
            }
        } else {
            if matches!(ins, Instr::Scalar(_)) {
                return Err(l.err(t, "scalar instructions are only allowed in machine code"));
            }
            for r in ins.uses() {
                if !matches!(r, Reg::Virt(_)) {
                    return Err(l.err(t, format!("physical register {r} in SSA form")));
                }
                if !defined.contains_key(&r) {
                    return Err(l.err(&r.to_string(), format!("{r} used before definition")));
                }
            }
            for r in ins.defs() {
                if !matches!(r, Reg::Virt(_)) {
                    return Err(l.err(t, format!("physical register {r} in SSA form")));
                }
                if let Some(prev) = defined.insert(r, l.no) {
                    return Err(l.err(&r.to_string(), format!("{r} redefined (first defined on line {prev})")));
                }
            }
        }
        if matches!(ins, Instr::Bconv(_)) && prog.form != Form::Ir {
            return Err(l.err(t, "bconv only exists before lowering"));
        }
        prog.instrs.push(ins);
    }
    if prog.n == 0 && !prog.instrs.is_empty() {
        return Err(ParseError {
            line: 1,
            col: 1,
            msg: "missing `.n` directive".into(),
        });
    }
    Ok(prog)
}

fn fmt_addr(p: &Program, a: &Addr) -> String {
    let name = p.symbols.get(a.sym as usize).map_or("?", |s| s.name.as_str());
    let mut s = format!("@{name}+{}", a.offset);
    if let Some((r, stride)) = a.index {
        let _ = write!(s, "+s{r}*{stride}");
    }
    s
}

fn fmt_src(p: &Program, s: &Src) -> String {
    match s {
        Src::Reg(r) => r.to_string(),
        Src::Mem(a) => fmt_addr(p, a),
        Src::Imm(i) => i.to_string(),
    }
}

fn fmt_scalar_src(s: &ScalarSrc) -> String {
    match s {
        ScalarSrc::Reg(r) => format!("s{r}"),
        ScalarSrc::Imm(i) => i.to_string(),
    }
}

/// One instruction in text form. Branch targets print as `L<index>`.
pub fn format_instr(p: &Program, ins: &Instr) -> String {
    match ins {
        Instr::Vec(v) => {
            let head = format!("{}{}", v.op.mnemonic(), v.flags.suffix());
            let mut ops: Vec<String> = v.srcs.iter().map(|s| fmt_src(p, s)).collect();
            if v.op == VecOp::Auto {
                ops.push(v.step.to_string());
            }
            ops.push(format!("q{}", v.modulus));
            match (v.op, &v.dst) {
                (VecOp::Store, Dst::Mem(a)) => {
                    ops.insert(1, fmt_addr(p, a));
                    format!("{head} {}", ops.join(", "))
                }
                (_, Dst::Reg(r)) => format!("{r} = {head} {}", ops.join(", ")),
                (_, Dst::Mem(a)) => format!("{} = {head} {}", fmt_addr(p, a), ops.join(", ")),
            }
        }
        Instr::Bconv(b) => {
            let d: Vec<String> = b.dsts.iter().map(Reg::to_string).collect();
            let s: Vec<String> = b.srcs.iter().map(Reg::to_string).collect();
            let t: Vec<String> = b.targets.iter().map(|m| format!("q{m}")).collect();
            format!("{} = bconv {} -> {}", d.join(", "), s.join(", "), t.join(", "))
        }
        Instr::Scalar(s) => match s {
            ScalarInstr::Li { dst, imm } => format!("li s{dst}, {imm}"),
            ScalarInstr::Add { dst, a, b } => format!("sadd s{dst}, s{a}, {}", fmt_scalar_src(b)),
            ScalarInstr::Mul { dst, a, b } => format!("smul s{dst}, s{a}, {}", fmt_scalar_src(b)),
            ScalarInstr::Blt { a, b, target } => format!("blt s{a}, {}, L{target}", fmt_scalar_src(b)),
            ScalarInstr::Jmp { target } => format!("jmp L{target}"),
        },
    }
}

/// Prints a program; the output parses back to an identical program.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(out, ".form {}", p.form.as_str());
    let _ = writeln!(out, ".n {}", p.n);
    for (i, q) in p.moduli.iter().enumerate() {
        let _ = writeln!(out, ".modulus q{i} {q}");
    }
    for s in &p.symbols {
        let _ = writeln!(out, ".sym {} {}", s.name, s.size);
    }
    let targets: BTreeSet<usize> = p
        .instrs
        .iter()
        .filter_map(|i| match i {
            Instr::Scalar(ScalarInstr::Blt { target, .. } | ScalarInstr::Jmp { target }) => Some(*target),
            _ => None,
        })
        .collect();
    for (k, ins) in p.instrs.iter().enumerate() {
        if targets.contains(&k) {
            let _ = writeln!(out, "L{k}:");
        }
        let _ = writeln!(out, "{}", format_instr(p, ins));
    }
    if targets.contains(&p.instrs.len()) {
        let _ = writeln!(out, "L{}:", p.instrs.len());
    }
    out
}
