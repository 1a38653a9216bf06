//! Bitwise determinism of the parallel numerical paths: the same inputs
//! must produce identical bytes at any thread count, because parallelism
//! only ever splits independent output elements and every reduction is
//! sequential and ordered.

use mcorr_core::config::RunConfig;
use mcorr_core::tomo::simulate_motion_scan;

fn run_in_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(job)
}

#[test]
fn motion_scan_is_bitwise_identical_across_thread_counts() {
    let mut cfg = RunConfig::standard_chest();
    cfg.geometry.n_views = 60;
    cfg.phantom.width = 64;
    cfg.phantom.height = 64;
    cfg.geometry.n_detectors = 95;

    let spec = cfg.phantom_spec().unwrap();
    let geom = cfg.scan_geometry().unwrap();
    let traj = cfg.motion_trajectory().unwrap();
    let window = cfg.window_bounds().unwrap();

    let single = run_in_pool(1, || {
        simulate_motion_scan(&spec, &geom, &traj, window).unwrap()
    });
    let eight = run_in_pool(8, || {
        simulate_motion_scan(&spec, &geom, &traj, window).unwrap()
    });

    assert_eq!(single.reference.data(), eight.reference.data());
    assert_eq!(single.corrupted.data(), eight.corrupted.data());
    assert_eq!(single.sino_reference.data(), eight.sino_reference.data());
    assert_eq!(single.sino_corrupted.data(), eight.sino_corrupted.data());
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let mut cfg = RunConfig::standard_chest();
    cfg.geometry.n_views = 48;
    cfg.phantom.width = 64;
    cfg.phantom.height = 64;
    cfg.geometry.n_detectors = 95;

    let spec = cfg.phantom_spec().unwrap();
    let geom = cfg.scan_geometry().unwrap();
    let traj = cfg.motion_trajectory().unwrap();
    let window = cfg.window_bounds().unwrap();

    let a = simulate_motion_scan(&spec, &geom, &traj, window).unwrap();
    let b = simulate_motion_scan(&spec, &geom, &traj, window).unwrap();
    assert_eq!(a.corrupted.data(), b.corrupted.data());
}
