use effact_backend::compile::{compile, PassConfig};
use effact_backend::exec::execute;
use effact_backend::hw::HardwareDescription;
use effact_backend::ir::Program;
use effact_backend::workloads::image::random_image;
use effact_backend::workloads::random::{random_program, RandomConfig};
use effact_core::ResiduePoly;

fn run(p: &Program, seed: u64) -> Vec<Option<ResiduePoly>> {
    let mut img = random_image(p, seed).unwrap();
    execute(p, &mut img).unwrap_or_else(|e| panic!("{e}\n{}", effact_backend::text::print_program(p)));
    img.snapshot(&["out"])
}

#[test]
fn every_pass_subset_preserves_outputs() {
    let hw = HardwareDescription::default().with_slots(4);
    for seed in 0..40 {
        let ir = random_program(seed, &RandomConfig::default()).unwrap();
        let want = run(&ir, seed);
        for mask in 0..64 {
            let c = compile(&ir, &hw, &PassConfig::from_mask(mask)).unwrap();
            assert_eq!(run(&c.program, seed), want, "seed {seed} mask {mask:06b}");
        }
    }
}

#[test]
fn corpus_exercises_the_passes() {
    let hw = HardwareDescription::default().with_slots(4);
    let mut tot = effact_backend::compile::CompileStats::default();
    let mut spills = 0;
    for seed in 0..40 {
        let ir = random_program(seed, &RandomConfig::default()).unwrap();
        let s = compile(&ir, &hw, &PassConfig::all()).unwrap().stats;
        tot.propagated += s.propagated;
        tot.pre_removed += s.pre_removed;
        tot.peephole.folded += s.peephole.folded;
        tot.peephole.deferred += s.peephole.deferred;
        tot.peephole.distributed += s.peephole.distributed;
        tot.peephole.fused += s.peephole.fused;
        tot.streaming.add(s.streaming);
        tot.lowered += s.lowered;
        spills += s.alloc.unwrap().spill_stores + s.alloc.unwrap().reloads;
    }
    let counters = [
        ("lowered", tot.lowered),
        ("propagated", tot.propagated),
        ("pre", tot.pre_removed),
        ("folded", tot.peephole.folded),
        ("deferred", tot.peephole.deferred),
        ("distributed", tot.peephole.distributed),
        ("fused", tot.peephole.fused),
        ("streamed loads", tot.streaming.loads),
        ("streamed stores", tot.streaming.stores),
        ("links", tot.streaming.links),
        ("spills", spills),
    ];
    for (name, k) in counters {
        assert!(k > 0, "the corpus never triggers {name}");
    }
}
