//! The controller tick must not touch the heap. A counting allocator tracks
//! allocations per thread; the scenario runner samples it around every tick.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

use torqueloop_core::bus::RobotBus;
use torqueloop_core::manager::MultimodeController;
use torqueloop_core::plant::TaskId;
use torqueloop_core::scenario::{run_benchmark, simulate, task_spec, Condition, Reference, RunSetup, ScenarioConfig};

struct Counting;

thread_local! {
    static ALLOCATIONS: Cell<u64> = const { Cell::new(0) };
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ALLOCATIONS.with(|c| c.set(c.get() + 1));
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        ALLOCATIONS.with(|c| c.set(c.get() + 1));
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

fn allocations() -> u64 {
    ALLOCATIONS.with(Cell::get)
}

#[test]
fn controller_tick_does_not_allocate() {
    // sanity: the probe sees ordinary allocations
    let before = allocations();
    let v = std::hint::black_box(vec![1u8; 16]);
    assert!(allocations() > before);
    drop(v);

    for condition in Condition::ALL {
        let mut cfg = ScenarioConfig::benchmark(condition);
        cfg.duration = 1.0;
        cfg.bench.switch_trials = 2;
        let r = run_benchmark(&cfg, Some(allocations)).unwrap();
        assert_eq!(r.allocations, Some(0), "{}", condition.label());
    }
    for id in [TaskId::JointMotion, TaskId::ForceProfile, TaskId::ForceCircle, TaskId::BoxGrasp] {
        let mut cfg = ScenarioConfig::task(id);
        cfg.duration = 1.0;
        let spec = task_spec(&cfg);
        let mut setup = RunSetup::new(&cfg.reference, cfg.seed);
        setup.allocation_probe = Some(allocations);
        let run = simulate(&cfg, &spec, Reference::Task(&spec), setup, cfg.ticks(), None).unwrap();
        assert_eq!(run.allocations, Some(0), "task {}", id.number());
    }
}

#[test]
fn switches_and_parameter_updates_do_not_allocate_in_the_tick() {
    let cfg = ScenarioConfig::benchmark(Condition::Both);
    let spec = task_spec(&cfg);
    let names = [cfg.controllets[0].descriptor.name.clone(), cfg.controllets[1].descriptor.name.clone()];
    let mut handle = None;
    let mut hook = |tick: u64, mc: &MultimodeController, _: &RobotBus| {
        let h = handle.get_or_insert_with(|| mc.handle());
        match tick % 50 {
            10 => drop(h.request_switch(&[&names[((tick / 50) % 2) as usize]])),
            30 => drop(h.set_param(&names[0], "k_c.0", 400.0 + tick as f64 * 1e-3)),
            _ => {}
        }
        while h.poll_response().is_some() {}
    };
    let mut setup = RunSetup::new(&cfg.reference, cfg.seed);
    setup.allocation_probe = Some(allocations);
    let run = simulate(&cfg, &spec, Reference::Task(&spec), setup, 1000, Some(&mut hook)).unwrap();
    assert_eq!(run.allocations, Some(0));
}
