use pitlab::collocation::CollocationTable;
use pitlab::controller::*;
use pitlab::problems::Dahlquist;
use pitlab::sweeper::collocation_solve_direct;
use pitlab::trace::{EventKind, Phase, TraceEvent};
use pitlab::Error;

fn ac_small(steps: usize, seed: u64) -> RunConfig {
    let setup = AllenCahnSetup {
        n_fine: 64,
        n_coarse: 16,
        seed,
        ..AllenCahnSetup::default()
    };
    RunConfig::allen_cahn(&setup, steps, 1e-3).unwrap()
}

fn assert_same(a: &RunResult, b: &RunResult) {
    assert_eq!(a.iterations, b.iterations);
    for (x, y) in a.final_values.iter().zip(&b.final_values) {
        let d = x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(d <= 1e-12, "fields differ by {d}");
    }
}

#[test]
fn serial_and_parallel_agree() {
    let configs = vec![
        RunConfig::dahlquist(-1.0, 0.0, 2, 0.1, 3).unwrap(),
        RunConfig::dahlquist(-1.0, 0.0, 4, 0.1, 3).unwrap(),
        RunConfig::dahlquist(-0.6, -0.4, 4, 0.2, 4).unwrap(),
        ac_small(2, 0),
        ac_small(4, 3),
    ];
    for cfg in &configs {
        let s = run(cfg, ExecMode::Serial).unwrap();
        let p = run(cfg, ExecMode::Parallel).unwrap();
        assert_same(&s, &p);
    }
}

#[test]
fn single_worker_matches_direct_collocation() {
    let mut cfg = RunConfig::dahlquist(-1.0, 0.0, 1, 0.1, 3).unwrap();
    cfg.tol = 1e-13;
    let r = run(&cfg, ExecMode::Serial).unwrap();
    let tab = CollocationTable::radau_right(3).unwrap();
    let direct = collocation_solve_direct(&[1.0], 0.1, &tab, &Dahlquist::new(-1.0, 0.0)).unwrap();
    assert!((r.final_values[0][0] - direct[2][0]).abs() <= 1e-12);
}

#[test]
fn single_worker_stops_exactly_at_tolerance() {
    let mut loose = RunConfig::dahlquist(-1.0, 0.0, 1, 0.1, 3).unwrap();
    loose.tol = 1e10;
    let first = run(&loose, ExecMode::Serial).unwrap();
    let mut cfg = loose.clone();
    cfg.tol = first.residuals[0] * 1.0001;
    assert_eq!(run(&cfg, ExecMode::Serial).unwrap().iterations, vec![1]);
    cfg.tol = first.residuals[0] * 0.9999;
    assert!(run(&cfg, ExecMode::Serial).unwrap().iterations[0] > 1);
}

#[test]
fn huge_tolerance_means_one_iteration() {
    let mut cfg = ac_small(4, 0);
    cfg.tol = 1e10;
    let r = run(&cfg, ExecMode::Parallel).unwrap();
    assert_eq!(r.iterations, vec![1; 4]);
    assert_eq!(r.mean_iterations, 1.0);
}

#[test]
fn zero_rhs_keeps_the_initial_value() {
    let cfg = RunConfig::dahlquist(0.0, 0.0, 4, 0.1, 3).unwrap();
    let r = run(&cfg, ExecMode::Serial).unwrap();
    assert!(r.final_values.iter().all(|v| v == &vec![1.0]));
    assert_eq!(r.iterations, vec![1; 4]);
}

#[test]
fn stopping_is_prefix_monotone() {
    for cfg in [RunConfig::dahlquist(-1.0, 0.0, 4, 0.1, 3).unwrap(), ac_small(4, 1)] {
        let r = run(&cfg, ExecMode::Parallel).unwrap();
        assert!(r.stop_times.windows(2).all(|w| w[0] <= w[1]), "{:?}", r.stop_times);
        assert!(r.iterations.windows(2).all(|w| w[0] <= w[1]), "{:?}", r.iterations);
        assert!(r.residuals.iter().all(|&x| x <= cfg.tol));
    }
}

fn rank_events(r: &RunResult, rank: usize) -> Vec<&TraceEvent> {
    r.trace.rank_events(rank)
}

#[test]
fn predictor_is_a_staircase() {
    let cfg = RunConfig::dahlquist(-1.0, 0.0, 4, 0.1, 3).unwrap();
    let r = run(&cfg, ExecMode::Serial).unwrap();
    for p in 0..4 {
        let ev = rank_events(&r, p);
        let count = |kind| ev.iter().filter(|e| e.kind == kind && e.name == "value/l1/it0").count();
        assert_eq!(count(EventKind::RecvComplete), p, "rank {p} receives");
        assert_eq!(count(EventKind::SendPost), if p < 3 { p + 1 } else { 0 }, "rank {p} sends");
        assert_eq!(r.trace.region_count(p, Phase::Predict), 1);
    }
}

#[test]
fn region_counts_follow_the_schedule() {
    let cfg = ac_small(4, 2);
    let r = run(&cfg, ExecMode::Parallel).unwrap();
    for p in 0..4 {
        let k = r.iterations[p];
        assert_eq!(r.trace.region_count(p, Phase::ItFine), k * cfg.fine.sweeps);
        for ph in [Phase::ItDown, Phase::ItCoarse, Phase::ItUp, Phase::ItCheck] {
            assert_eq!(r.trace.region_count(p, ph), k, "rank {p} {ph:?}");
        }
    }
    assert!(r.audit.is_balanced());
    assert_eq!(r.audit.unwaited(), 0);
}

#[test]
fn coarse_sweeps_are_serialized_by_rank() {
    let mut cfg = RunConfig::dahlquist(-1.0, 0.0, 4, 0.1, 3).unwrap();
    cfg.tol = 1e10;
    let r = run(&cfg, ExecMode::Parallel).unwrap();
    let find = |rank: usize, kind| {
        r.trace
            .events
            .iter()
            .find(|e| e.rank == rank && e.kind == kind && e.name == "value/l1/it1")
            .map(|e| e.t)
    };
    for p in 1..4 {
        let recv = find(p, EventKind::RecvComplete).unwrap();
        let send = find(p - 1, EventKind::SendPost).unwrap();
        assert!(recv >= send);
        if p < 3 {
            assert!(find(p, EventKind::SendPost).unwrap() >= recv);
        }
    }
}

#[test]
fn worker_keeps_iterating_while_predecessor_is_above_tolerance() {
    // stiff decay: later steps start near zero and have tiny residuals
    let mut cfg = RunConfig::dahlquist(-40.0, 0.0, 3, 0.1, 3).unwrap();
    cfg.tol = 1e10;
    let first = run(&cfg, ExecMode::Serial).unwrap().residuals;
    assert!(first[1] > 2.0 * first[2], "scenario needs r1 > r2: {first:?}");
    cfg.tol = (first[1] * first[2]).sqrt();
    let r = run(&cfg, ExecMode::Parallel).unwrap();
    // worker 2 met the tolerance after one iteration but did not stop
    assert!(r.iterations[1] > 1);
    assert!(r.iterations[2] >= r.iterations[1]);
    assert!(r.trace.region_count(2, Phase::ItFine) > cfg.fine.sweeps);
}

#[test]
fn runs_are_deterministic() {
    let cfg = ac_small(4, 9);
    let a = run(&cfg, ExecMode::Parallel).unwrap();
    let b = run(&cfg, ExecMode::Parallel).unwrap();
    assert_eq!(a.iterations, b.iterations);
    let bits = |r: &RunResult| r.final_values.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn pfasst_matches_serial_sdc() {
    let cfg = RunConfig::dahlquist(-1.0, 0.0, 4, 0.1, 3).unwrap();
    let r = run(&cfg, ExecMode::Parallel).unwrap();
    let sdc = run_sdc(&Dahlquist::new(-1.0, 0.0), &CollocationTable::radau_right(3).unwrap(), &[1.0], 0.1, 4, 1e-12, 100).unwrap();
    for (a, b) in r.final_values.iter().zip(&sdc.values) {
        assert!((a[0] - b[0]).abs() < 1e-8);
    }
    assert!(((r.final_values[3][0]) - (-0.4f64).exp()).abs() < 1e-8);
}

#[test]
fn divergence_is_reported() {
    let cfg = RunConfig::dahlquist(0.0, 1e4, 2, 1.0, 3).unwrap();
    for mode in [ExecMode::Serial, ExecMode::Parallel] {
        assert!(matches!(run(&cfg, mode), Err(Error::Diverged { .. })));
    }
}

#[test]
fn iteration_limit_is_reported() {
    let mut cfg = RunConfig::dahlquist(-1.0, 0.0, 4, 0.1, 3).unwrap();
    cfg.tol = 1e-15;
    cfg.max_iter = 2;
    match run(&cfg, ExecMode::Serial) {
        Err(Error::NotConverged { max_iter, residuals }) => {
            assert_eq!(max_iter, 2);
            assert_eq!(residuals.len(), 4);
        }
        other => panic!("expected not-converged, got {other:?}"),
    }
}

#[test]
fn workers_must_equal_steps() {
    let mut cfg = RunConfig::dahlquist(-1.0, 0.0, 4, 0.1, 3).unwrap();
    cfg.workers = 2;
    assert!(cfg.validate().is_err());
    assert!(run(&cfg, ExecMode::Serial).is_err());
}

#[test]
fn summary_lines() {
    let cfg = RunConfig::dahlquist(-1.0, 0.0, 2, 0.1, 3).unwrap();
    let s = run(&cfg, ExecMode::Serial).unwrap().summary();
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("Time to solution: ") && lines[0].ends_with(" sec."));
    assert!(lines[1].starts_with("Mean number of iterations: "));
}
