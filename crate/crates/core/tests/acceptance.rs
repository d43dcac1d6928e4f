//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (bypassing output capture) before asserting.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use pitlab::analysis::*;
use pitlab::collocation::*;
use pitlab::comm::CommConfig;
use pitlab::controller::*;
use pitlab::harness::{self, BenchConfig, RunState};
use pitlab::problems::*;
use pitlab::sweeper::{collocation_solve_direct, imex_sweep, residual, LevelState};
use pitlab::trace::{build_profile, EventKind, Phase};

fn verdict(n: u32, title: &str, ok: bool, elapsed: Duration, detail: String) {
    let line = format!(
        "acceptance {n:>2} {title:<34} {} ({:.2} s) {detail}\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {n} failed: {detail}");
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn ac_config(n_fine: usize, n_coarse: usize, steps: usize, seed: u64) -> RunConfig {
    let setup = AllenCahnSetup {
        n_fine,
        n_coarse,
        seed,
        ..AllenCahnSetup::default()
    };
    RunConfig::allen_cahn(&setup, steps, 1e-3).unwrap()
}

/// Conservation, schedule and message-balance checks on one run.
fn run_invariants(cfg: &RunConfig, r: &RunResult) -> Result<(), String> {
    let prof = build_profile(&r.trace).map_err(|e| e.to_string())?;
    for (p, rp) in prof.ranks.iter().enumerate() {
        let gap = (rp.exclusive_sum() + rp.untracked - rp.runtime).abs();
        if gap > 1e-9 {
            return Err(format!("rank {p}: conservation gap {gap:e}"));
        }
        let k = r.iterations[p];
        let want = |ph: Phase| if ph == Phase::ItFine { k * cfg.fine.sweeps } else if ph == Phase::Predict { 1 } else { k };
        for ph in Phase::ALL {
            let got = r.trace.region_count(p, ph);
            if got != want(ph) {
                return Err(format!("rank {p} {ph:?}: {got} regions, schedule says {}", want(ph)));
            }
        }
    }
    let sends = r.trace.count(EventKind::SendPost);
    let recvs = r.trace.count(EventKind::RecvComplete);
    if sends != recvs || !r.audit.is_balanced() || r.audit.unwaited() != 0 {
        return Err(format!("{sends} sends vs {recvs} receives, audit {:?}", r.audit));
    }
    Ok(())
}

fn pop_identities(r: &PopReport) -> f64 {
    let a = (r.parallel_efficiency - r.load_balance * r.communication_efficiency).abs();
    let b = (r.communication_efficiency - r.serialisation_efficiency * r.transfer_efficiency).abs();
    a.max(b)
}

#[test]
fn c01_quadrature_and_tables() {
    let start = Instant::now();
    let tab = CollocationTable::radau_right(2).unwrap();
    let q_want = Matrix::from_rows(&[vec![5.0 / 12.0, -1.0 / 12.0], vec![0.75, 0.25]]).unwrap();
    let qd_want = Matrix::from_rows(&[vec![5.0 / 12.0, 0.0], vec![0.75, 0.4]]).unwrap();
    let dq = tab.q().max_abs_diff(&q_want);
    let dqd = tab.qd_implicit().max_abs_diff(&qd_want);
    let t3 = CollocationTable::radau_right(3).unwrap();
    let mut worst: f64 = 0.0;
    for row in 0..3 {
        let tau = t3.nodes()[row];
        for k in 0..3 {
            let approx: f64 = (0..3).map(|j| t3.q()[(row, j)] * t3.nodes()[j].powi(k)).sum();
            worst = worst.max((approx - tau.powi(k + 1) / (k + 1) as f64).abs());
        }
    }
    let el = start.elapsed();
    verdict(
        1,
        "quadrature and tables",
        dq <= 1e-13 && dqd <= 1e-13 && worst <= 1e-12 && el < Duration::from_secs(1),
        el,
        format!("|Q-Q*|={dq:.1e} |QdLU-QdLU*|={dqd:.1e} M=3 exactness {worst:.1e}"),
    );
}

#[test]
fn c02_collocation_order() {
    let start = Instant::now();
    let tab = CollocationTable::radau_right(3).unwrap();
    let p = Dahlquist::new(-1.0, 0.0);
    let dts = [0.1, 0.05, 0.025, 0.0125];
    let errors: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let mut u = vec![1.0];
            for _ in 0..(1.0 / dt as f64).round() as usize {
                u = collocation_solve_direct(&u, dt, &tab, &p).unwrap()[2].clone();
            }
            (u[0] - (-1.0f64).exp()).abs()
        })
        .collect();
    let orders: Vec<f64> = errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect();
    let min = orders.iter().copied().fold(f64::INFINITY, f64::min);
    let el = start.elapsed();
    verdict(
        2,
        "collocation order",
        min >= 4.5 && el < Duration::from_secs(5),
        el,
        format!("errors {:?} observed orders {:.2?}", errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(), orders),
    );
}

#[test]
fn c03_sweep_fixed_point() {
    let start = Instant::now();
    let tab = CollocationTable::radau_right(3).unwrap();
    let mut worst: f64 = 0.0;
    // fully implicit (LU trick) and fully explicit (explicit Euler) sweeps
    for p in [Dahlquist::new(-1.0, 0.0), Dahlquist::new(0.0, -1.0), Dahlquist::new(-0.5, -0.5)] {
        let direct = collocation_solve_direct(&[1.0], 0.1, &tab, &p).unwrap();
        let mut s = LevelState::spread(&[1.0], 3, 0.1, &p);
        for _ in 0..100 {
            imex_sweep(&mut s, &tab, &p).unwrap();
            if residual(&s, &tab) < 1e-15 {
                break;
            }
        }
        for (a, b) in s.u.iter().zip(&direct) {
            worst = worst.max(max_abs(a, b));
        }
    }
    let el = start.elapsed();
    verdict(
        3,
        "sweep fixed point",
        worst <= 1e-10 && el < Duration::from_secs(5),
        el,
        format!("max deviation from dense collocation {worst:.1e}"),
    );
}

#[test]
fn c04_controller_equivalence() {
    let start = Instant::now();
    let configs = vec![
        ("dahlquist P=2", RunConfig::dahlquist(-1.0, 0.0, 2, 0.1, 3).unwrap()),
        ("dahlquist P=4", RunConfig::dahlquist(-1.0, 0.0, 4, 0.1, 3).unwrap()),
        ("dahlquist imex P=4", RunConfig::dahlquist(-0.7, -0.3, 4, 0.2, 3).unwrap()),
        ("allen-cahn 64 P=2", ac_config(64, 16, 2, 0)),
        ("allen-cahn 64 P=4", ac_config(64, 16, 4, 0)),
        ("allen-cahn 64 P=4 seed 7", ac_config(64, 16, 4, 7)),
    ];
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, cfg) in &configs {
        let s = run(cfg, ExecMode::Serial).unwrap();
        let p = run(cfg, ExecMode::Parallel).unwrap();
        let d = s
            .final_values
            .iter()
            .zip(&p.final_values)
            .map(|(a, b)| max_abs(a, b))
            .fold(0.0, f64::max);
        worst = worst.max(d);
        if s.iterations != p.iterations || d > 1e-12 {
            failures.push(format!("{name}: {:?} vs {:?}, diff {d:e}", s.iterations, p.iterations));
        }
    }
    let el = start.elapsed();
    verdict(
        4,
        "serial/parallel equivalence",
        failures.is_empty() && el < Duration::from_secs(120),
        el,
        if failures.is_empty() {
            format!("{} configs, max field difference {worst:.1e}", configs.len())
        } else {
            failures.join("; ")
        },
    );
}

fn circle_slope(n: usize, dt: f64, steps: usize) -> f64 {
    let tab = CollocationTable::radau_right(3).unwrap();
    let ac = AllenCahn::new(n, 1.0, 0.04).unwrap();
    let f = circle_field(1, 0.04, n, &[0.25]).unwrap();
    let sol = run_sdc(&ac, &tab, &f.values, dt, steps, 1e-8, 100).unwrap();
    let mut pts = vec![(0.0, measure_radius(&f).powi(2))];
    for (k, v) in sol.values.iter().enumerate() {
        let field = Field2D {
            n,
            length: 1.0,
            values: v.clone(),
        };
        pts.push(((k + 1) as f64 * dt, measure_radius(&field).powi(2)));
    }
    let m = pts.len() as f64;
    let (mt, mr) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
    let num: f64 = pts.iter().map(|(t, r)| (t - mt) * (r - mr)).sum();
    let den: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    num / den
}

#[test]
fn c05_shrinking_circle() {
    let start = Instant::now();
    let slope = circle_slope(128, 1e-3, 20);
    let reference = circle_slope(256, 2.5e-4, 80);
    let rel = (slope + 2.0).abs() / 2.0;
    let el = start.elapsed();
    verdict(
        5,
        "shrinking circle",
        rel <= 0.15 && (reference + 2.0).abs() / 2.0 <= 0.15 && el < Duration::from_secs(300),
        el,
        format!("d(r^2)/dt = {slope:.4} ({:.1} % from -2), reference N=256 {reference:.4}", 100.0 * rel),
    );
}

#[test]
fn c06_pfasst_desk_scale() {
    let start = Instant::now();
    let cfg = ac_config(128, 32, 4, 0);
    let r = run(&cfg, ExecMode::Parallel).unwrap();
    let sdc = run_sdc(&*cfg.fine.problem, &cfg.fine.table, &cfg.u0, cfg.dt, 4, 1e-8, 100).unwrap();
    let diff = r
        .final_values
        .iter()
        .zip(&sdc.values)
        .map(|(a, b)| max_abs(a, b))
        .fold(0.0, f64::max);
    let converged = r.residuals.iter().all(|&x| x <= cfg.tol);
    let prefix = r.stop_times.windows(2).all(|w| w[0] <= w[1]);
    let balanced = r.audit.is_balanced() && r.audit.unwaited() == 0;
    let fine_par: usize = (0..4).map(|p| r.trace.region_count(p, Phase::ItFine)).sum();
    let fine_ser = sdc.total_sweeps();
    let ratio = fine_par as f64 / fine_ser as f64;
    let el = start.elapsed();
    verdict(
        6,
        "PFASST desk-scale correctness",
        diff <= 1e-6 && converged && prefix && balanced && ratio <= 1.5 && el < Duration::from_secs(600),
        el,
        format!(
            "|u_pfasst-u_sdc|={diff:.1e} iterations {:?} fine sweeps {fine_par} vs serial {fine_ser} (x{ratio:.2})",
            r.iterations
        ),
    );
}

#[test]
fn c07_trace_conservation() {
    let start = Instant::now();
    let mut runs = vec![
        ("dahlquist P=4 serial", RunConfig::dahlquist(-1.0, 0.0, 4, 0.1, 3).unwrap(), ExecMode::Serial),
        ("dahlquist P=2", RunConfig::dahlquist(-1.0, 0.0, 2, 0.1, 3).unwrap(), ExecMode::Parallel),
        ("allen-cahn 64 P=4 serial", ac_config(64, 16, 4, 0), ExecMode::Serial),
        ("allen-cahn 64 P=4", ac_config(64, 16, 4, 0), ExecMode::Parallel),
        ("allen-cahn 128 P=4", ac_config(128, 32, 4, 0), ExecMode::Parallel),
    ];
    let mut rdv = ac_config(128, 32, 4, 0);
    rdv.comm = CommConfig::rendezvous();
    runs.push(("allen-cahn 128 P=4 rendezvous", rdv, ExecMode::Parallel));
    let mut failures = Vec::new();
    for (name, cfg, mode) in &runs {
        let r = run(cfg, *mode).unwrap();
        if let Err(e) = run_invariants(cfg, &r) {
            failures.push(format!("{name}: {e}"));
        }
    }
    let el = start.elapsed();
    verdict(
        7,
        "trace/profile conservation",
        failures.is_empty(),
        el,
        if failures.is_empty() {
            format!("{} runs conserve time to 1e-9 s, match the schedule, balance messages", runs.len())
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn c08_wait_states() {
    let start = Instant::now();
    let synthetic = detect_late_receiver(&common::late_receiver_trace()).unwrap();
    let synthetic_ok = synthetic.len() == 1 && synthetic[0].wait_s == 3.0;

    let late_receiver = |comm: CommConfig| {
        let mut cfg = ac_config(128, 32, 4, 0);
        cfg.comm = comm;
        let r = run(&cfg, ExecMode::Parallel).unwrap();
        let w = detect_wait_states(&r.trace).unwrap();
        let forward: f64 = w
            .per_channel(WaitPattern::LateReceiver)
            .iter()
            .filter(|((s, d), _)| d == &(s + 1))
            .map(|(_, v)| v)
            .sum();
        (forward, pop_metrics(&r.trace).unwrap().transfer_efficiency)
    };
    let (rdv, te_rdv) = late_receiver(CommConfig::rendezvous());
    let (eager, te_eager) = late_receiver(CommConfig::eager());
    let el = start.elapsed();
    verdict(
        8,
        "wait-state oracle",
        synthetic_ok && rdv > 0.0 && eager < 0.05 * rdv && el < Duration::from_secs(120),
        el,
        format!(
            "synthetic {} x {:.1} s; late receiver rendezvous {rdv:.4} s, eager {eager:.6} s ({:.2} %); TE {te_rdv:.3} vs {te_eager:.3}",
            synthetic.len(),
            synthetic.first().map_or(0.0, |w| w.wait_s),
            100.0 * eager / rdv
        ),
    );
}

#[test]
fn c09_pop_identities() {
    let start = Instant::now();
    let hand = pop_metrics(&common::hand_trace()).unwrap();
    let want = [0.875, 0.8, 8.0 / 9.0, 0.9, 0.7];
    let hand_err = hand
        .metrics()
        .iter()
        .zip(want)
        .map(|((_, v), w)| (v - w).abs())
        .fold(0.0, f64::max);
    let mut worst = pop_identities(&hand);
    let mut traces = 1;
    for comm in [CommConfig::eager(), CommConfig::rendezvous()] {
        for (steps, n) in [(2, 64), (4, 64), (4, 128)] {
            let mut cfg = ac_config(n, n / 4, steps, 0);
            cfg.comm = comm;
            let r = run(&cfg, ExecMode::Parallel).unwrap();
            for select in [PhaseSelect::AfterPredict, PhaseSelect::Full] {
                worst = worst.max(pop_identities(&pop_metrics_with(&r.trace, select).unwrap()));
                traces += 1;
            }
        }
    }
    let el = start.elapsed();
    verdict(
        9,
        "POP identities and hand case",
        hand_err <= 1e-12 && worst <= 1e-12,
        el,
        format!("hand case error {hand_err:.1e}; identity residual {worst:.1e} over {traces} reports"),
    );
}

#[test]
fn c10_harness() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let bench = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../bench");
    for f in ["scaling.cfg", "run_pitlab.tmpl"] {
        std::fs::copy(bench.join(f), dir.path().join(f)).unwrap();
    }
    std::env::set_var("PITLAB", env!("CARGO_BIN_EXE_pitlab"));
    let mut cfg = BenchConfig::load(&dir.path().join("scaling.cfg")).unwrap();
    cfg.jobs = 4;
    let out = harness::sweep(&cfg).unwrap();
    let done = out.states.iter().filter(|s| **s == RunState::Done).count();
    let markers = out.specs.iter().filter(|s| s.sandbox.join("ready").exists()).count();
    let is_float = |c: &str| out.table.column(c).is_some_and(|v| v.iter().all(|x| x.parse::<f64>().is_ok()));
    let ntasks: Vec<f64> = out.table.column("ntasks").unwrap().iter().map(|x| x.parse().unwrap()).collect();
    let sorted = ntasks.windows(2).all(|w| w[0] <= w[1]);
    let el = start.elapsed();
    verdict(
        10,
        "benchmark harness",
        out.specs.len() == 20
            && done == 20
            && markers == 20
            && out.table.rows.len() == 20
            && is_float("timing_pat")
            && is_float("niter_pat")
            && sorted
            && el < Duration::from_secs(60),
        el,
        format!(
            "{} runs, {done} done, {markers} done-files, table {}x{} sorted by ntasks: {sorted}",
            out.specs.len(),
            out.table.rows.len(),
            out.table.columns.len()
        ),
    );
}
