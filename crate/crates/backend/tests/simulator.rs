use effact_backend::compile::{compile, PassConfig};
use effact_backend::exec::execute;
use effact_backend::hw::HardwareDescription;
use effact_backend::ir::Program;
use effact_backend::passes::alloc::max_liveness;
use effact_backend::sim::{compare_streaming, simulate, simulate_with, sweep_sram, write_sweep_csv, SimError, SimOptions, SimReport};
use effact_backend::text::parse_program;
use effact_backend::workloads::image::random_image;
use effact_backend::workloads::random::{random_program, RandomConfig};
use effact_backend::workloads::{
    gen_bootstrap_skeleton, gen_helr_iteration, gen_hoisted_rotations, gen_keyswitch, WorkloadParams,
};

fn keyswitch() -> Program {
    gen_keyswitch(&WorkloadParams::desk(1 << 10, 4, 2)).unwrap()
}

fn check_sane(r: &SimReport, hw: &HardwareDescription, what: &str) {
    assert!(r.cycles >= r.critical_path, "{what}: {} < critical path {}", r.cycles, r.critical_path);
    assert!(r.cycles >= r.dram_bound, "{what}: {} < DRAM bound {}", r.cycles, r.dram_bound);
    assert!(r.dram.busy_cycles <= r.cycles, "{what}");
    assert!((0.0..=1.0).contains(&r.dram.utilization), "{what}");
    for u in &r.units {
        assert!(u.busy_cycles <= r.cycles * u.count as u64, "{what}: {} overcommitted", u.unit);
        assert!((0.0..=1.0).contains(&u.utilization), "{what}");
    }
    assert!(r.peak_fifo as u64 <= r.vector_instructions * 2);
    let poly = HardwareDescription::poly_bytes(1) as u64;
    assert_eq!(r.dram.total_bytes % poly, 0);
    let _ = hw;
}

#[test]
fn reports_respect_bounds_and_repeat_exactly() {
    let desk = WorkloadParams::desk(1 << 6, 8, 2);
    let mut programs = vec![
        ("keyswitch", keyswitch()),
        ("hoisted", gen_hoisted_rotations(&WorkloadParams::desk(1 << 8, 4, 2)).unwrap()),
        ("helr", gen_helr_iteration(&desk).unwrap()),
        ("bootstrap", gen_bootstrap_skeleton(&desk).unwrap()),
    ];
    for seed in 0..12 {
        programs.push(("random", random_program(seed, &RandomConfig::default()).unwrap()));
    }
    let base = HardwareDescription::default();
    let mut narrow = base.with_slots(6);
    narrow.units.ntt = 1;
    narrow.units.mmul = 1;
    narrow.sram_banks = 2;
    narrow.dram_bytes_per_cycle = 16.0;
    for (name, ir) in &programs {
        for hw in [&base, &narrow] {
            for cfg in [PassConfig::all(), PassConfig::none()] {
                let p = compile(ir, hw, &cfg).unwrap().program;
                let first = simulate(&p, hw).unwrap();
                check_sane(&first, hw, name);
                let json = first.to_json();
                for _ in 0..4 {
                    let again = simulate(&p, hw).unwrap();
                    assert_eq!(again, first, "{name}");
                    assert_eq!(again.to_json(), json);
                }
            }
        }
    }
}

#[test]
fn streaming_lowers_traffic_and_time_under_slot_pressure() {
    let ir = keyswitch();
    let hw = HardwareDescription::default();
    let unallocated = PassConfig {
        alloc: false,
        streaming: false,
        ..PassConfig::all()
    };
    let live = max_liveness(&compile(&ir, &hw, &unallocated).unwrap().program);
    let hw = hw.with_slots((live / 2) as u32);
    let (c, on, off) = compare_streaming(&ir, &hw, &PassConfig::all()).unwrap();
    assert!(c.with.dram.total_bytes < c.without.dram.total_bytes);
    assert!(c.with.cycles < c.without.cycles);
    assert!(c.with.dram.stream_read_bytes > 0);
    assert_eq!(c.without.dram.stream_read_bytes + c.without.dram.stream_write_bytes, 0);
    let out = |p: &Program| {
        let mut img = random_image(&ir, 4).unwrap();
        execute(p, &mut img).unwrap();
        img.snapshot(&["k0", "k1"])
    };
    assert_eq!(out(&on), out(&off));
}

#[test]
fn nothing_to_merge_means_nothing_changes() {
    let ir = parse_program(
        ".form ir\n.n 256\n.modulus q0 7681\n.sym x 2\n.sym y 4\n%a = load @x+0, q0\n%b = load @x+1, q0\n\
         %c = mmad %a, %b, q0\n%d = mmul %a, %b, q0\n%e = mmad %c, %c, q0\n%f = mmad %d, %d, q0\n\
         %g = mmad %e, %f, q0\nstore %e, @y+0, q0\nstore %f, @y+1, q0\nstore %g, @y+2, q0\nstore %g, @y+3, q0\n",
    )
    .unwrap();
    let cfg = PassConfig {
        peephole: false,
        ..PassConfig::all()
    };
    let (c, on, off) = compare_streaming(&ir, &HardwareDescription::default(), &cfg).unwrap();
    assert_eq!(on, off);
    assert_eq!(c.with, c.without);
}

#[test]
fn larger_sram_never_slows_the_key_switch() {
    let ir = keyswitch();
    let points = sweep_sram(&ir, &HardwareDescription::default(), &[8, 16, 32, 64, 128], &PassConfig::all()).unwrap();
    for w in points.windows(2) {
        let (a, b) = (&w[0].report, &w[1].report);
        assert!(b.cycles <= a.cycles, "{} slots: {} > {}", w[1].slots, b.cycles, a.cycles);
        assert!(b.fu_utilization() >= a.fu_utilization());
    }
    assert!(points[0].spill_stores > 0);
    let mut csv = Vec::new();
    write_sweep_csv(&points, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.starts_with("slots,cycles,"));

    let one = sweep_sram(&ir, &HardwareDescription::default(), &[16], &PassConfig::all()).unwrap();
    assert_eq!(one.len(), 1);
}

#[test]
fn trace_lists_every_dynamic_instruction() {
    let hw = HardwareDescription::default();
    let p = compile(&keyswitch(), &hw, &PassConfig::all()).unwrap().program;
    let r = simulate_with(&p, &hw, &SimOptions { trace: true, ..SimOptions::default() }).unwrap();
    let t = r.trace.as_ref().unwrap();
    assert_eq!(t.len() as u64, r.vector_instructions);
    assert!(t.iter().all(|e| e.issue <= e.start && e.start <= e.end && e.end <= e.complete));
    assert_eq!(t.iter().map(|e| e.complete).max().unwrap(), r.cycles);
    assert!(!simulate(&p, &hw).unwrap().to_json().contains("\"trace\""));
}

#[test]
fn ir_with_bconv_is_rejected() {
    let ir = keyswitch();
    assert!(matches!(simulate(&ir, &HardwareDescription::default()), Err(SimError::Bconv(_))));
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn hardware() -> impl Strategy<Value = HardwareDescription> {
        (
            (1u32..4, 1u32..4, 1u32..4, 1u32..3),
            (4u32..20, 1u32..9, 1u32..80, 2u32..12),
            (prop::sample::select(vec![8.0, 32.0, 64.0, 200.0]), 0u64..150, any::<bool>(), any::<bool>()),
        )
            .prop_map(|((ntt, mmul, madd, auto), (slots, banks, window, fifo), (bw, lat, streaming, mac))| {
                let mut hw = HardwareDescription::default().with_slots(slots);
                hw.units.ntt = ntt;
                hw.units.mmul = mmul;
                hw.units.madd = madd;
                hw.units.auto = auto;
                hw.sram_banks = banks;
                hw.window = window;
                hw.fifo_depth = fifo;
                hw.dram_bytes_per_cycle = bw;
                hw.dram_latency = lat;
                hw.streaming = streaming;
                hw.mac_on_ntt = mac;
                hw
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn random_programs_on_random_hardware(seed in 0u64..10_000, hw in hardware(), mask in 0u8..64) {
            let ir = random_program(seed, &RandomConfig::default()).unwrap();
            let p = compile(&ir, &hw, &PassConfig::from_mask(mask)).unwrap().program;
            let r = simulate(&p, &hw).unwrap();
            check_sane(&r, &hw, "random");
            prop_assert_eq!(simulate(&p, &hw).unwrap(), r);
        }
    }
}
