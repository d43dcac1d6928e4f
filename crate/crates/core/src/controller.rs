//! Two-level PFASST over `P` time steps, one step per worker.
//!
//! Every worker runs the same `async` routine: a coarse predictor staircase
//! followed by iterations of fine sweeps, restriction with FAS correction,
//! a serial coarse sweep chained across workers, prolongation of the coarse
//! correction and a convergence check. Workers talk only through
//! [`crate::comm`] endpoints.
//!
//! [`ExecMode::Parallel`] drives each worker on its own thread.
//! [`ExecMode::Serial`] polls all workers round-robin on the calling thread.
//! Both execute the identical sequence of numerical operations per worker,
//! so they produce bit-identical results.

use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::task::{Context, Poll, Waker};
use std::time::{Duration, Instant};

use log::{debug, warn};

use crate::collocation::CollocationTable;
use crate::comm::{decode_f64s, encode_f64s, CommAudit, CommConfig, Endpoint, Tag, World};
use crate::error::{Error, Result};
use crate::problems::{ac_initial_condition, AllenCahn, Dahlquist, Problem};
use crate::sweeper::{imex_sweep, residual, LevelState};
use crate::trace::{region_name, Clock, Phase, RegionFilter, Trace, TraceEvent};
use crate::transfer::{compute_fas_tau, IdentityTransfer, SpaceTransfer, SpectralTransfer};

/// Residuals above this abort the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

const FINE: u8 = 0;
const COARSE: u8 = 1;

const STATUS_CONTINUE: f64 = 0.0;
const STATUS_CONVERGED: f64 = 1.0;
const STATUS_EXHAUSTED: f64 = 2.0;

/// One level of the hierarchy.
#[derive(Clone)]
pub struct Level {
    pub problem: Arc<dyn Problem>,
    pub table: Arc<CollocationTable>,
    pub sweeps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Serial,
    Parallel,
}

#[derive(Clone)]
pub struct RunConfig {
    pub num_steps: usize,
    pub dt: f64,
    pub workers: usize,
    pub fine: Level,
    pub coarse: Level,
    pub transfer: Arc<dyn SpaceTransfer>,
    pub u0: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub comm: CommConfig,
    pub region_filter: Vec<String>,
    /// Wall time without any recorded progress before a deadlock is declared.
    pub watchdog: Duration,
    /// Extra time spent by one rank in every sweep.
    pub slow_rank: Option<(usize, Duration)>,
}

/// Allen-Cahn setup on `lpatches x lpatches` unit patches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllenCahnSetup {
    pub n_fine: usize,
    pub n_coarse: usize,
    pub lpatches: usize,
    pub eps: f64,
    pub nodes: usize,
    pub seed: u64,
    /// Common radius of all circles; random radii when `None`.
    pub radius: Option<f64>,
}

impl Default for AllenCahnSetup {
    fn default() -> Self {
        Self {
            n_fine: 128,
            n_coarse: 32,
            lpatches: 1,
            eps: 0.04,
            nodes: 3,
            seed: 0,
            radius: None,
        }
    }
}

impl AllenCahnSetup {
    pub fn initial_condition(&self) -> Result<Vec<f64>> {
        let field = match self.radius {
            Some(r) => crate::problems::circle_field(
                self.lpatches,
                self.eps,
                self.n_fine,
                &vec![r; self.lpatches * self.lpatches],
            )?,
            None => ac_initial_condition(self.lpatches, self.eps, self.n_fine, self.seed)?,
        };
        Ok(field.values)
    }
}

impl RunConfig {
    fn with_levels(
        fine: Level,
        coarse: Level,
        transfer: Arc<dyn SpaceTransfer>,
        u0: Vec<f64>,
        num_steps: usize,
        dt: f64,
    ) -> Self {
        Self {
            num_steps,
            dt,
            workers: num_steps,
            fine,
            coarse,
            transfer,
            u0,
            tol: 1e-8,
            max_iter: 50,
            seed: 0,
            comm: CommConfig::default(),
            region_filter: Vec::new(),
            watchdog: Duration::from_secs(60),
            slow_rank: None,
        }
    }

    /// Scalar test equation `u' = (li + le) u`, `u(0) = 1`, the same
    /// problem on both levels.
    pub fn dahlquist(lambda_implicit: f64, lambda_explicit: f64, num_steps: usize, dt: f64, nodes: usize) -> Result<Self> {
        let problem: Arc<dyn Problem> = Arc::new(Dahlquist::new(lambda_implicit, lambda_explicit));
        let table = Arc::new(CollocationTable::radau_right(nodes)?);
        let fine = Level {
            problem: problem.clone(),
            table: table.clone(),
            sweeps: 3,
        };
        let coarse = Level {
            problem,
            table,
            sweeps: 1,
        };
        Ok(Self::with_levels(
            fine,
            coarse,
            Arc::new(IdentityTransfer { ndof: 1 }),
            vec![1.0],
            num_steps,
            dt,
        ))
    }

    pub fn allen_cahn(setup: &AllenCahnSetup, num_steps: usize, dt: f64) -> Result<Self> {
        let length = setup.lpatches as f64;
        let table = Arc::new(CollocationTable::radau_right(setup.nodes)?);
        let fine_p = Arc::new(AllenCahn::new(setup.n_fine, length, setup.eps)?);
        let coarse_p = Arc::new(AllenCahn::new(setup.n_coarse, length, setup.eps)?);
        let transfer: Arc<dyn SpaceTransfer> = if setup.n_fine == setup.n_coarse {
            Arc::new(IdentityTransfer {
                ndof: setup.n_fine * setup.n_fine,
            })
        } else {
            Arc::new(SpectralTransfer::new(setup.n_fine, setup.n_coarse, length)?)
        };
        let mut cfg = Self::with_levels(
            Level {
                problem: fine_p,
                table: table.clone(),
                sweeps: 3,
            },
            Level {
                problem: coarse_p,
                table,
                sweeps: 1,
            },
            transfer,
            setup.initial_condition()?,
            num_steps,
            dt,
        );
        cfg.seed = setup.seed;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.workers == 0 || self.workers != self.num_steps {
            return bad(format!(
                "one step per worker required: {} steps, {} workers",
                self.num_steps, self.workers
            ));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tol));
        }
        if self.fine.sweeps == 0 || self.coarse.sweeps == 0 {
            return bad("sweep counts must be at least 1".into());
        }
        if self.max_iter == 0 {
            return bad("max iterations must be at least 1".into());
        }
        if self.fine.table.num_nodes() != self.coarse.table.num_nodes() {
            return bad("levels must use the same number of nodes".into());
        }
        if self.u0.len() != self.fine.problem.ndof()
            || self.transfer.fine_ndof() != self.fine.problem.ndof()
            || self.transfer.coarse_ndof() != self.coarse.problem.ndof()
        {
            return bad("initial value, problems and transfer disagree on sizes".into());
        }
        if let Some((r, _)) = self.slow_rank {
            if r >= self.workers {
                return bad(format!("slow rank {r} does not exist"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// End value of every step.
    pub final_values: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub mean_iterations: f64,
    pub residuals: Vec<f64>,
    /// Time at which each worker decided to stop.
    pub stop_times: Vec<f64>,
    pub wall_time: f64,
    pub trace: Trace,
    pub audit: CommAudit,
}

impl RunResult {
    /// Two summary lines: time to solution and mean iteration count.
    pub fn summary(&self) -> String {
        format!(
            "Time to solution: {:.6} sec.\nMean number of iterations: {:.4}\n",
            self.wall_time, self.mean_iterations
        )
    }
}

#[derive(Debug)]
struct WorkerOutcome {
    final_value: Vec<f64>,
    iterations: usize,
    residual: f64,
    stop_time: f64,
    converged: bool,
}

fn axpy_prolonged(target: &mut [f64], coarse_new: &[f64], coarse_old: &[f64], transfer: &dyn SpaceTransfer) {
    let diff: Vec<f64> = coarse_new.iter().zip(coarse_old).map(|(a, b)| a - b).collect();
    for (t, c) in target.iter_mut().zip(transfer.prolong(&diff)) {
        *t += c;
    }
}

struct Worker<'a> {
    cfg: &'a RunConfig,
    rank: usize,
    last: usize,
}

impl Worker<'_> {
    fn region(&self, phase: Phase) -> String {
        region_name(phase, self.rank)
    }

    fn sweep(&self, state: &mut LevelState, level: &Level) -> Result<()> {
        imex_sweep(state, &level.table, &*level.problem)?;
        if let Some((r, d)) = self.cfg.slow_rank {
            if r == self.rank {
                std::thread::sleep(d);
            }
        }
        Ok(())
    }

    async fn send_wait(&self, ep: &mut Endpoint, tag: Tag, payload: Vec<u8>) -> Result<()> {
        let mut h = ep.isend(self.rank + 1, tag, payload)?;
        ep.wait(&mut h).await
    }

    async fn recv_values(&self, ep: &mut Endpoint, tag: Tag) -> Result<Vec<f64>> {
        decode_f64s(&ep.recv(self.rank - 1, tag).await?)
    }

    async fn run(&self, ep: &mut Endpoint) -> Result<WorkerOutcome> {
        let cfg = self.cfg;
        let p = self.rank;
        let transfer = &*cfg.transfer;
        let (fine_l, coarse_l) = (&cfg.fine, &cfg.coarse);
        let m = fine_l.table.num_nodes();

        // Predictor: p + 1 coarse sweeps, passing the end value down the line.
        let predict = self.region(Phase::Predict);
        ep.enter(&predict);
        let r_init = transfer.restrict(&cfg.u0);
        let mut coarse = LevelState::spread(&r_init, m, cfg.dt, &*coarse_l.problem);
        for s in 0..=p {
            self.sweep(&mut coarse, coarse_l)?;
            if p < self.last {
                self.send_wait(ep, Tag::value(COARSE, 0), encode_f64s(coarse.end_value()))
                    .await?;
            }
            if s < p {
                coarse.u0 = self.recv_values(ep, Tag::value(COARSE, 0)).await?;
            }
        }
        let mut fine = LevelState::spread(&cfg.u0, m, cfg.dt, &*fine_l.problem);
        for (u, uc) in fine.u.iter_mut().zip(&coarse.u) {
            axpy_prolonged(u, uc, &r_init, transfer);
        }
        axpy_prolonged(&mut fine.u0, &coarse.u0, &r_init, transfer);
        fine.evaluate_all(&*fine_l.problem);
        ep.exit(&predict);

        let names: Vec<String> = [Phase::ItFine, Phase::ItDown, Phase::ItCoarse, Phase::ItUp, Phase::ItCheck]
            .into_iter()
            .map(|ph| self.region(ph))
            .collect();
        let [it_fine, it_down, it_coarse, it_up, it_check] = &names[..] else {
            unreachable!()
        };

        // The first worker has no predecessor and behaves as if it had stopped.
        let mut pred_stopped = p == 0;
        let mut pred_exhausted = false;
        let mut k: u32 = 0;
        loop {
            k += 1;
            for _ in 0..fine_l.sweeps {
                ep.enter(it_fine);
                self.sweep(&mut fine, fine_l)?;
                ep.exit(it_fine);
            }
            let mut handle = if p < self.last {
                Some(ep.isend(p + 1, Tag::value(FINE, k), encode_f64s(fine.end_value()))?)
            } else {
                None
            };
            if !pred_stopped {
                fine.u0 = self.recv_values(ep, Tag::value(FINE, k)).await?;
            }
            if let Some(h) = handle.as_mut() {
                ep.wait(h).await?;
            }

            ep.enter(it_down);
            let r_u: Vec<Vec<f64>> = fine.u.iter().map(|u| transfer.restrict(u)).collect();
            let r_u0 = transfer.restrict(&fine.u0);
            coarse.u = r_u.clone();
            coarse.u0 = r_u0.clone();
            coarse.evaluate_all(&*coarse_l.problem);
            coarse.tau = compute_fas_tau(&fine, &fine_l.table, &coarse, &coarse_l.table, transfer)?;
            ep.exit(it_down);

            ep.enter(it_coarse);
            if !pred_stopped {
                coarse.u0 = self.recv_values(ep, Tag::value(COARSE, k)).await?;
            }
            for _ in 0..coarse_l.sweeps {
                self.sweep(&mut coarse, coarse_l)?;
            }
            if p < self.last {
                self.send_wait(ep, Tag::value(COARSE, k), encode_f64s(coarse.end_value()))
                    .await?;
            }
            ep.exit(it_coarse);

            ep.enter(it_up);
            for (u, (uc, ru)) in fine.u.iter_mut().zip(coarse.u.iter().zip(&r_u)) {
                axpy_prolonged(u, uc, ru, transfer);
            }
            axpy_prolonged(&mut fine.u0, &coarse.u0, &r_u0, transfer);
            fine.evaluate_all(&*fine_l.problem);
            ep.exit(it_up);

            ep.enter(it_check);
            if !pred_stopped {
                let msg = self.recv_values(ep, Tag::status(FINE, k)).await?;
                let (code, value) = msg
                    .split_first()
                    .ok_or_else(|| Error::invalid("empty status message"))?;
                if *code != STATUS_CONTINUE {
                    pred_stopped = true;
                    pred_exhausted = *code == STATUS_EXHAUSTED;
                    fine.u0 = value.to_vec();
                }
            }
            let res = residual(&fine, &fine_l.table);
            fine.residual = res;
            if !res.is_finite() || res > DIVERGENCE_THRESHOLD {
                ep.exit(it_check);
                return Err(Error::Diverged {
                    worker: p,
                    residual: res,
                });
            }
            let code = if pred_exhausted {
                STATUS_EXHAUSTED
            } else if pred_stopped && res <= cfg.tol {
                STATUS_CONVERGED
            } else if k as usize >= cfg.max_iter {
                STATUS_EXHAUSTED
            } else {
                STATUS_CONTINUE
            };
            let stop_time = ep.clock().now();
            if p < self.last {
                let mut msg = Vec::with_capacity(fine.ndof() + 1);
                msg.push(code);
                msg.extend_from_slice(fine.end_value());
                self.send_wait(ep, Tag::status(FINE, k), encode_f64s(&msg)).await?;
            }
            ep.exit(it_check);
            debug!("worker {p} iteration {k}: residual {res:e}");
            if code != STATUS_CONTINUE {
                return Ok(WorkerOutcome {
                    final_value: fine.end_value().to_vec(),
                    iterations: k as usize,
                    residual: res,
                    stop_time,
                    converged: code == STATUS_CONVERGED,
                });
            }
        }
    }
}

type WorkerFuture<'a> = Pin<Box<dyn Future<Output = (Result<WorkerOutcome>, Vec<TraceEvent>)> + Send + 'a>>;

fn worker_future<'a>(cfg: &'a RunConfig, world: &'a World, mut ep: Endpoint) -> WorkerFuture<'a> {
    Box::pin(async move {
        let worker = Worker {
            cfg,
            rank: ep.rank(),
            last: cfg.workers - 1,
        };
        let result = worker.run(&mut ep).await;
        if let Err(e) = &result {
            if !world.is_aborted() {
                world.abort(&format!("worker {}: {e}", worker.rank));
            }
        }
        let tracer = ep.into_tracer();
        let events = match result {
            Ok(_) => match tracer.finalize() {
                Ok(ev) => ev,
                Err(e) => return (Err(e), Vec::new()),
            },
            Err(_) => tracer.into_events(),
        };
        (result, events)
    })
}

fn deadlock(world: &World, waited: Duration) -> Error {
    let dump = world.dump();
    world.abort("deadlock");
    Error::Deadlock {
        waited_s: waited.as_secs_f64(),
        dump,
    }
}

/// Polls all workers round-robin on the current thread.
fn drive_serial<T>(mut futs: Vec<Pin<Box<dyn Future<Output = T> + Send + '_>>>, world: &World, watchdog: Duration) -> (Vec<T>, Option<Error>) {
    let mut cx = Context::from_waker(Waker::noop());
    let mut results: Vec<Option<T>> = futs.iter().map(|_| None).collect();
    let mut failure = None;
    let mut idle_since: Option<Instant> = None;
    loop {
        let before = world.progress();
        let mut pending = 0;
        for (fut, slot) in futs.iter_mut().zip(results.iter_mut()) {
            if slot.is_some() {
                continue;
            }
            match fut.as_mut().poll(&mut cx) {
                Poll::Ready(v) => *slot = Some(v),
                Poll::Pending => pending += 1,
            }
        }
        if pending == 0 {
            break;
        }
        if world.progress() != before {
            idle_since = None;
            continue;
        }
        let idle = *idle_since.get_or_insert_with(Instant::now);
        if failure.is_none() && (world.in_flight() == 0 || idle.elapsed() > watchdog) {
            failure = Some(deadlock(world, idle.elapsed()));
            continue;
        }
        std::thread::sleep(Duration::from_micros(50));
    }
    (results.into_iter().map(Option::unwrap).collect(), failure)
}

/// One thread per worker plus a watchdog.
fn drive_parallel<T: Send>(futs: Vec<Pin<Box<dyn Future<Output = T> + Send + '_>>>, world: &World, watchdog: Duration) -> (Vec<T>, Option<Error>) {
    let finished = AtomicUsize::new(0);
    let failure = Mutex::new(None);
    let n = futs.len();
    let results = std::thread::scope(|s| {
        let handles: Vec<_> = futs
            .into_iter()
            .map(|fut| {
                let finished = &finished;
                s.spawn(move || {
                    let out = futures::executor::block_on(fut);
                    finished.fetch_add(1, Ordering::SeqCst);
                    out
                })
            })
            .collect();
        s.spawn(|| {
            let mut last = world.progress();
            let mut since = Instant::now();
            while finished.load(Ordering::SeqCst) < n {
                std::thread::sleep(Duration::from_millis(5));
                let now = world.progress();
                if now != last || world.in_flight() > 0 {
                    last = now;
                    since = Instant::now();
                } else if since.elapsed() > watchdog && !world.is_aborted() {
                    *failure.lock().unwrap() = Some(deadlock(world, since.elapsed()));
                }
            }
        });
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect::<Vec<_>>()
    });
    (results, failure.into_inner().unwrap())
}

/// Integrates `num_steps` steps with PFASST, one step per worker.
pub fn run(cfg: &RunConfig, mode: ExecMode) -> Result<RunResult> {
    cfg.validate()?;
    let clock = Clock::new();
    let filter = Arc::new(RegionFilter::new(cfg.region_filter.iter().cloned()));
    let (world, endpoints) = World::with_filter(cfg.workers, cfg.comm, clock, filter);
    let start = Instant::now();
    let futs: Vec<WorkerFuture<'_>> = endpoints
        .into_iter()
        .map(|ep| worker_future(cfg, &world, ep))
        .collect();
    let (outs, failure) = match mode {
        ExecMode::Serial => drive_serial(futs, &world, cfg.watchdog),
        ExecMode::Parallel => drive_parallel(futs, &world, cfg.watchdog),
    };
    let wall_time = start.elapsed().as_secs_f64();
    if let Some(e) = failure {
        return Err(e);
    }

    let mut outcomes = Vec::with_capacity(outs.len());
    let mut per_rank = Vec::with_capacity(outs.len());
    let mut errors = Vec::new();
    for (r, ev) in outs {
        per_rank.push(ev);
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        let root = errors
            .iter()
            .position(|e| !matches!(e, Error::ChannelClosed(_)))
            .unwrap_or(0);
        return Err(errors.swap_remove(root));
    }
    if outcomes.iter().any(|o| !o.converged) {
        return Err(Error::NotConverged {
            max_iter: cfg.max_iter,
            residuals: outcomes.iter().map(|o| o.residual).collect(),
        });
    }
    let audit = world.audit();
    if !audit.is_balanced() || audit.unwaited() > 0 || world.pending_messages() > 0 {
        warn!("unbalanced communication: {audit:?}");
    }
    let iterations: Vec<usize> = outcomes.iter().map(|o| o.iterations).collect();
    Ok(RunResult {
        mean_iterations: iterations.iter().sum::<usize>() as f64 / iterations.len() as f64,
        iterations,
        final_values: outcomes.iter().map(|o| o.final_value.clone()).collect(),
        residuals: outcomes.iter().map(|o| o.residual).collect(),
        stop_times: outcomes.iter().map(|o| o.stop_time).collect(),
        wall_time,
        trace: Trace::merge(per_rank),
        audit,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdcResult {
    /// End value of every step.
    pub values: Vec<Vec<f64>>,
    pub sweeps: Vec<usize>,
    pub residuals: Vec<f64>,
}

impl SdcResult {
    pub fn total_sweeps(&self) -> usize {
        self.sweeps.iter().sum()
    }
}

/// Time-serial SDC: sweeps every step until its residual reaches `tol`.
pub fn run_sdc(
    problem: &dyn Problem,
    table: &CollocationTable,
    u0: &[f64],
    dt: f64,
    num_steps: usize,
    tol: f64,
    max_sweeps: usize,
) -> Result<SdcResult> {
    if !(tol > 0.0) || max_sweeps == 0 {
        return Err(Error::invalid("tolerance and sweep limit must be positive"));
    }
    let mut out = SdcResult {
        values: Vec::with_capacity(num_steps),
        sweeps: Vec::with_capacity(num_steps),
        residuals: Vec::with_capacity(num_steps),
    };
    let mut u = u0.to_vec();
    for _ in 0..num_steps {
        let mut state = LevelState::spread(&u, table.num_nodes(), dt, problem);
        let mut k = 0;
        loop {
            imex_sweep(&mut state, table, problem)?;
            k += 1;
            let res = residual(&state, table);
            if !res.is_finite() || res > DIVERGENCE_THRESHOLD {
                return Err(Error::Diverged {
                    worker: 0,
                    residual: res,
                });
            }
            if res <= tol {
                out.residuals.push(res);
                break;
            }
            if k >= max_sweeps {
                return Err(Error::NotConverged {
                    max_iter: max_sweeps,
                    residuals: vec![res],
                });
            }
        }
        u = state.end_value().to_vec();
        out.values.push(u.clone());
        out.sweeps.push(k);
    }
    Ok(out)
}
