//! Trace analysis: POP efficiency metrics, wait-state detection and an
//! ideal-network replay.
//!
//! For a selected phase with runtime `T` and per-rank computation times `c`:
//!
//! ```text
//! LB   = mean(c) / max(c)        load balance
//! SerE = max(c) / T_ideal        serialisation efficiency
//! TE   = T_ideal / T             transfer efficiency
//! CommE = SerE * TE              (= max(c) / T)
//! PE    = LB * CommE             (= mean(c) / T)
//! ```
//!
//! `T_ideal` comes from [`ideal_replay`], which replays the trace with free
//! and instantaneous messages.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trace::{comm_intervals, parse_region_name, union_length, EventKind, Phase, Trace, TraceEvent};

/// Which part of a trace the metrics cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseSelect {
    /// Everything after each rank's last predictor region.
    #[default]
    AfterPredict,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopReport {
    pub load_balance: f64,
    pub communication_efficiency: f64,
    pub serialisation_efficiency: f64,
    pub transfer_efficiency: f64,
    pub parallel_efficiency: f64,
    /// Computation time per rank.
    pub computation: Vec<f64>,
    pub runtime: f64,
    pub ideal_runtime: f64,
}

impl PopReport {
    /// Metrics from per-rank computation times, runtime and ideal runtime.
    pub fn from_parts(computation: Vec<f64>, runtime: f64, ideal_runtime: f64) -> Result<Self> {
        if computation.is_empty() || !(runtime > 0.0) {
            return Err(Error::EmptyPhase);
        }
        let max = computation.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = computation.iter().sum::<f64>() / computation.len() as f64;
        if !(max > 0.0) || !(ideal_runtime > 0.0) {
            return Err(Error::EmptyPhase);
        }
        let load_balance = mean / max;
        let serialisation_efficiency = max / ideal_runtime;
        let transfer_efficiency = ideal_runtime / runtime;
        let communication_efficiency = serialisation_efficiency * transfer_efficiency;
        let parallel_efficiency = load_balance * communication_efficiency;
        Ok(Self {
            load_balance,
            communication_efficiency,
            serialisation_efficiency,
            transfer_efficiency,
            parallel_efficiency,
            computation,
            runtime,
            ideal_runtime,
        })
    }

    /// `(name, value)` in report order.
    pub fn metrics(&self) -> [(&'static str, f64); 5] {
        [
            ("load_balance", self.load_balance),
            ("communication_efficiency", self.communication_efficiency),
            ("serialisation_efficiency", self.serialisation_efficiency),
            ("transfer_efficiency", self.transfer_efficiency),
            ("parallel_efficiency", self.parallel_efficiency),
        ]
    }
}

/// Events of one rank inside the selected phase.
#[derive(Debug, Clone)]
struct Window<'a> {
    start: f64,
    end: f64,
    events: Vec<&'a TraceEvent>,
}

fn windows(trace: &Trace, select: PhaseSelect) -> Result<Vec<Window<'_>>> {
    trace.validate()?;
    let has_predict = trace
        .events
        .iter()
        .any(|e| e.kind == EventKind::RegionExit && parse_region_name(&e.name).is_some_and(|(p, _)| p == Phase::Predict));
    let mut out = Vec::with_capacity(trace.ranks);
    for r in 0..trace.ranks {
        let events = trace.rank_events(r);
        let cut = match select {
            PhaseSelect::AfterPredict if has_predict => events
                .iter()
                .rposition(|e| {
                    e.kind == EventKind::RegionExit
                        && parse_region_name(&e.name).is_some_and(|(p, _)| p == Phase::Predict)
                })
                .map(|i| (events[i].t, i + 1)),
            _ => None,
        };
        let (start, from) = cut.unwrap_or_else(|| (events.first().map_or(0.0, |e| e.t), 0));
        let events = events[from..].to_vec();
        let end = events.last().map_or(start, |e| e.t);
        out.push(Window { start, end, events });
    }
    if out.iter().all(|w| w.events.is_empty()) {
        return Err(Error::EmptyPhase);
    }
    Ok(out)
}

/// One sent message paired with its receive.
#[derive(Debug, Clone, PartialEq)]
pub struct MessagePair {
    pub sender: usize,
    pub receiver: usize,
    pub tag: String,
    pub send_post: f64,
    pub send_complete: f64,
    pub recv_post: f64,
    pub recv_complete: f64,
    /// Innermost region of the sender at send-post, and the tag.
    pub location: String,
    /// (rank, window index) of the send-post and the recv-complete
    send_index: (usize, usize),
    recv_index: (usize, usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    pub pairs: Vec<MessagePair>,
    /// Human-readable descriptions of sends or receives without partner.
    pub unmatched: Vec<String>,
}

type Key = (usize, usize, String);

struct Half {
    post: f64,
    complete: Option<f64>,
    location: String,
    /// (rank, window index) of the post and completion events
    post_index: (usize, usize),
    complete_index: (usize, usize),
}

fn match_windows(wins: &[Window<'_>]) -> Result<Matching> {
    let mut sends: HashMap<Key, VecDeque<Half>> = HashMap::new();
    let mut recvs: HashMap<Key, VecDeque<Half>> = HashMap::new();
    for (r, w) in wins.iter().enumerate() {
        let mut stack: Vec<&str> = Vec::new();
        // oldest incomplete post per (is_send, peer, name)
        let mut open: HashMap<(bool, usize, &str), VecDeque<(Key, usize)>> = HashMap::new();
        for (i, e) in w.events.iter().enumerate() {
            match e.kind {
                EventKind::RegionEnter => stack.push(&e.name),
                EventKind::RegionExit => {
                    stack.pop();
                }
                kind => {
                    let peer = e.peer.ok_or_else(|| {
                        Error::Structural(format!("rank {r}: communication event without peer"))
                    })?;
                    let is_send = matches!(kind, EventKind::SendPost | EventKind::SendComplete);
                    let key: Key = if is_send {
                        (r, peer, e.name.clone())
                    } else {
                        (peer, r, e.name.clone())
                    };
                    let map = if is_send { &mut sends } else { &mut recvs };
                    let queue = map.entry(key.clone()).or_default();
                    if matches!(kind, EventKind::SendPost | EventKind::RecvPost) {
                        let location = format!("{} @ {}", stack.last().copied().unwrap_or("-"), e.name);
                        open.entry((is_send, peer, &e.name))
                            .or_default()
                            .push_back((key, queue.len()));
                        queue.push_back(Half {
                            post: e.t,
                            complete: None,
                            location,
                            post_index: (r, i),
                            complete_index: (r, i),
                        });
                    } else {
                        let (_, slot) = open
                            .get_mut(&(is_send, peer, e.name.as_str()))
                            .and_then(VecDeque::pop_front)
                            .ok_or_else(|| {
                                Error::Structural(format!("rank {r}: '{}' completed without a post", e.name))
                            })?;
                        let half = &mut queue[slot];
                        half.complete = Some(e.t);
                        half.complete_index = (r, i);
                    }
                }
            }
        }
    }

    let mut out = Matching::default();
    let mut keys: Vec<Key> = sends.keys().chain(recvs.keys()).cloned().collect();
    keys.sort();
    keys.dedup();
    for key in keys {
        let mut s = sends.remove(&key).unwrap_or_default();
        let mut q = recvs.remove(&key).unwrap_or_default();
        while let (Some(a), Some(b)) = (s.front(), q.front()) {
            let (Some(sc), Some(rc)) = (a.complete, b.complete) else {
                break;
            };
            if rc < a.post {
                return Err(Error::Structural(format!(
                    "causality violation: '{}' from {} to {} received at {rc} before it was sent at {}",
                    key.2, key.0, key.1, a.post
                )));
            }
            out.pairs.push(MessagePair {
                sender: key.0,
                receiver: key.1,
                tag: key.2.clone(),
                send_post: a.post,
                send_complete: sc,
                recv_post: b.post,
                recv_complete: rc,
                location: a.location.clone(),
                send_index: a.post_index,
                recv_index: b.complete_index,
            });
            s.pop_front();
            q.pop_front();
        }
        for _ in s {
            out.unmatched.push(format!("send '{}' {} -> {} without receive", key.2, key.0, key.1));
        }
        for _ in q {
            out.unmatched.push(format!("receive '{}' {} -> {} without send", key.2, key.0, key.1));
        }
    }
    Ok(out)
}

/// Pairs every send with its receive over the whole trace.
pub fn match_messages(trace: &Trace) -> Result<Matching> {
    match_windows(&windows(trace, PhaseSelect::Full)?)
}

/// Replays the windows with zero transfer cost and non-blocking sends.
/// Returns per-rank replayed events and the makespan.
fn replay_windows(wins: &[Window<'_>]) -> Result<(Vec<Vec<TraceEvent>>, f64)> {
    let matching = match_windows(wins)?;
    let origin = wins
        .iter()
        .filter(|w| !w.events.is_empty())
        .map(|w| w.start)
        .fold(f64::INFINITY, f64::min);
    // recv-complete (rank, idx) -> sender's send-post rank and index
    let mut depends: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    for p in &matching.pairs {
        depends.insert(p.recv_index, p.send_index);
    }

    struct State {
        idx: usize,
        rt: f64,
        prev_t: f64,
        open: usize,
        out: Vec<TraceEvent>,
    }
    let mut states: Vec<State> = wins
        .iter()
        .map(|w| State {
            idx: 0,
            rt: w.start - origin,
            prev_t: w.start,
            open: 0,
            out: Vec::with_capacity(w.events.len()),
        })
        .collect();
    let mut send_rt: HashMap<(usize, usize), f64> = HashMap::new();
    loop {
        let mut progressed = false;
        let mut done = true;
        for (r, w) in wins.iter().enumerate() {
            let st = &mut states[r];
            while st.idx < w.events.len() {
                let e = w.events[st.idx];
                let dep = if e.kind == EventKind::RecvComplete {
                    match depends.get(&(r, st.idx)) {
                        Some(src) => match send_rt.get(src) {
                            Some(&t) => Some(t),
                            None => break,
                        },
                        None => None,
                    }
                } else {
                    None
                };
                if st.open == 0 {
                    st.rt += e.t - st.prev_t;
                }
                st.prev_t = e.t;
                match e.kind {
                    EventKind::SendPost => {
                        send_rt.insert((r, st.idx), st.rt);
                        st.open += 1;
                    }
                    EventKind::RecvPost => st.open += 1,
                    EventKind::SendComplete => st.open = st.open.saturating_sub(1),
                    EventKind::RecvComplete => {
                        if let Some(t) = dep {
                            st.rt = st.rt.max(t);
                        }
                        st.open = st.open.saturating_sub(1);
                    }
                    _ => {}
                }
                let mut ev = e.clone();
                ev.t = origin + st.rt;
                st.out.push(ev);
                st.idx += 1;
                progressed = true;
            }
            if st.idx < w.events.len() {
                done = false;
            }
        }
        if done {
            break;
        }
        if !progressed {
            let stuck: Vec<String> = states
                .iter()
                .enumerate()
                .filter(|(r, s)| s.idx < wins[*r].events.len())
                .map(|(r, s)| format!("rank {r} at event {}", s.idx))
                .collect();
            return Err(Error::Replay(format!("cyclic dependency: {}", stuck.join(", "))));
        }
    }
    let makespan = states.iter().map(|s| s.rt).fold(0.0, f64::max);
    Ok((states.into_iter().map(|s| s.out).collect(), makespan))
}

/// Replayed trace on an ideal network.
pub fn replay_trace(trace: &Trace) -> Result<Trace> {
    let wins = windows(trace, PhaseSelect::Full)?;
    let (events, _) = replay_windows(&wins)?;
    Ok(Trace::merge(events))
}

/// Makespan of the trace replayed on an ideal network.
pub fn ideal_replay(trace: &Trace) -> Result<f64> {
    Ok(replay_windows(&windows(trace, PhaseSelect::Full)?)?.1)
}

/// POP metrics of the default phase.
pub fn pop_metrics(trace: &Trace) -> Result<PopReport> {
    pop_metrics_with(trace, PhaseSelect::default())
}

pub fn pop_metrics_with(trace: &Trace, select: PhaseSelect) -> Result<PopReport> {
    let wins = windows(trace, select)?;
    let active: Vec<&Window<'_>> = wins.iter().filter(|w| !w.events.is_empty()).collect();
    let t0 = active.iter().map(|w| w.start).fold(f64::INFINITY, f64::min);
    let t1 = active.iter().map(|w| w.end).fold(f64::NEG_INFINITY, f64::max);
    let computation = active
        .iter()
        .map(|w| Ok(w.end - w.start - union_length(comm_intervals(&w.events)?)))
        .collect::<Result<Vec<f64>>>()?;
    let (_, ideal) = replay_windows(&wins)?;
    PopReport::from_parts(computation, t1 - t0, ideal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum WaitPattern {
    LateReceiver,
    LateSender,
}

impl WaitPattern {
    pub fn as_str(self) -> &'static str {
        match self {
            WaitPattern::LateReceiver => "late-receiver",
            WaitPattern::LateSender => "late-sender",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaitState {
    pub pattern: WaitPattern,
    pub sender: usize,
    pub receiver: usize,
    pub wait_s: f64,
    pub location: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WaitAnalysis {
    pub states: Vec<WaitState>,
    pub unmatched: Vec<String>,
}

impl WaitAnalysis {
    pub fn total(&self, pattern: WaitPattern) -> f64 {
        self.states.iter().filter(|s| s.pattern == pattern).map(|s| s.wait_s).sum()
    }

    /// Waiting time per `(sender, receiver)` channel.
    pub fn per_channel(&self, pattern: WaitPattern) -> BTreeMap<(usize, usize), f64> {
        let mut out = BTreeMap::new();
        for s in self.states.iter().filter(|s| s.pattern == pattern) {
            *out.entry((s.sender, s.receiver)).or_insert(0.0) += s.wait_s;
        }
        out
    }
}

/// Late Receiver and Late Sender wait states of all matched messages.
pub fn detect_wait_states(trace: &Trace) -> Result<WaitAnalysis> {
    let m = match_messages(trace)?;
    let mut states = Vec::new();
    for p in &m.pairs {
        if p.send_complete > p.send_post && p.recv_post > p.send_post {
            let wait = p.recv_post.clamp(p.send_post, p.send_complete) - p.send_post;
            if wait > 0.0 {
                states.push(WaitState {
                    pattern: WaitPattern::LateReceiver,
                    sender: p.sender,
                    receiver: p.receiver,
                    wait_s: wait,
                    location: p.location.clone(),
                });
            }
        }
        if p.recv_post < p.send_post {
            let wait = p.send_post.min(p.recv_complete) - p.recv_post;
            if wait > 0.0 {
                states.push(WaitState {
                    pattern: WaitPattern::LateSender,
                    sender: p.sender,
                    receiver: p.receiver,
                    wait_s: wait,
                    location: p.location.clone(),
                });
            }
        }
    }
    Ok(WaitAnalysis {
        states,
        unmatched: m.unmatched,
    })
}

/// Late Receiver wait states only.
pub fn detect_late_receiver(trace: &Trace) -> Result<Vec<WaitState>> {
    Ok(detect_wait_states(trace)?
        .states
        .into_iter()
        .filter(|s| s.pattern == WaitPattern::LateReceiver)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Text,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "text" | "txt" => Ok(ReportFormat::Text),
            other => Err(Error::invalid(format!("unknown report format '{other}'"))),
        }
    }
}

pub fn render_pop(report: &PopReport, format: ReportFormat) -> String {
    let mut out = String::new();
    if format == ReportFormat::Text {
        let _ = writeln!(out, "# runtime {:.6} s, ideal runtime {:.6} s", report.runtime, report.ideal_runtime);
        let c: Vec<String> = report.computation.iter().map(|c| format!("{c:.6}")).collect();
        let _ = writeln!(out, "# computation per rank: {}", c.join(" "));
    }
    out.push_str("metric,value\n");
    for (name, v) in report.metrics() {
        match format {
            ReportFormat::Csv => {
                let _ = writeln!(out, "{name},{v:.3}");
            }
            ReportFormat::Text => {
                let _ = writeln!(out, "{:<32}{:>8.1} %", format!("{name},{v:.3}"), 100.0 * v);
            }
        }
    }
    out
}

pub fn render_wait_states(states: &[WaitState], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("pattern,sender,receiver,wait_s,location\n");
            for s in states {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.9},{}",
                    s.pattern.as_str(),
                    s.sender,
                    s.receiver,
                    s.wait_s,
                    s.location
                );
            }
        }
        ReportFormat::Text => {
            let _ = writeln!(out, "{:<14} {:>6} {:>8} {:>12}  location", "pattern", "sender", "receiver", "wait_s");
            for s in states {
                let _ = writeln!(
                    out,
                    "{:<14} {:>6} {:>8} {:>12.6}  {}",
                    s.pattern.as_str(),
                    s.sender,
                    s.receiver,
                    s.wait_s,
                    s.location
                );
            }
        }
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn emit_pop(report: &PopReport, path: &Path, format: ReportFormat) -> Result<()> {
    write_text(path, &render_pop(report, format))
}

pub fn emit_wait_states(states: &[WaitState], path: &Path, format: ReportFormat) -> Result<()> {
    write_text(path, &render_wait_states(states, format))
}
