//! Event tracing and profiles.
//!
//! Every worker owns a [`Tracer`] that appends region and communication
//! events with timestamps from a shared [`Clock`]. At the end of a run the
//! per-rank buffers are merged into a [`Trace`], which can be written to and
//! read from a line-oriented JSON file (`.trc.jsonl`):
//!
//! ```text
//! {"format":"pitlab-trace","version":1,"ranks":2}
//! {"rank":0,"kind":"region-enter","name":"REGION -- IT_FINE -- 0","t":0.0013}
//! {"rank":1,"kind":"send-post","name":"value/l0/it1","t":0.0021,"bytes":8,"peer":2}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_FORMAT: &str = "pitlab-trace";
pub const TRACE_VERSION: u32 = 1;

/// Monotonic clock shared by all ranks of a run.
#[derive(Debug, Clone, Copy)]
pub struct Clock {
    epoch: Instant,
}

impl Clock {
    pub fn new() -> Self {
        Self {
            epoch: Instant::now(),
        }
    }

    /// Seconds since the epoch.
    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }
}

impl Default for Clock {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    RegionEnter,
    RegionExit,
    SendPost,
    SendComplete,
    RecvPost,
    RecvComplete,
}

impl EventKind {
    pub fn is_comm(self) -> bool {
        !matches!(self, EventKind::RegionEnter | EventKind::RegionExit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub rank: usize,
    pub kind: EventKind,
    pub name: String,
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<usize>,
}

/// Instrumented phases of the time-parallel controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Predict,
    ItFine,
    ItDown,
    ItCoarse,
    ItUp,
    ItCheck,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Predict,
        Phase::ItFine,
        Phase::ItDown,
        Phase::ItCoarse,
        Phase::ItUp,
        Phase::ItCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Predict => "PREDICT",
            Phase::ItFine => "IT_FINE",
            Phase::ItDown => "IT_DOWN",
            Phase::ItCoarse => "IT_COARSE",
            Phase::ItUp => "IT_UP",
            Phase::ItCheck => "IT_CHECK",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `REGION -- <PHASE> -- <rank>`
pub fn region_name(phase: Phase, rank: usize) -> String {
    format!("REGION -- {phase} -- {rank}")
}

/// Inverse of [`region_name`]; `None` for names outside the grammar.
pub fn parse_region_name(name: &str) -> Option<(Phase, usize)> {
    let mut parts = name.split(" -- ");
    if parts.next()? != "REGION" {
        return None;
    }
    let phase = Phase::parse(parts.next()?)?;
    let rank = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((phase, rank))
}

/// Region names or phase names whose events are not recorded.
#[derive(Debug, Clone, Default)]
pub struct RegionFilter {
    suppressed: HashSet<String>,
}

impl RegionFilter {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            suppressed: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.suppressed.is_empty()
    }

    pub fn suppresses(&self, name: &str) -> bool {
        if self.suppressed.is_empty() {
            return false;
        }
        self.suppressed.contains(name)
            || parse_region_name(name).is_some_and(|(p, _)| self.suppressed.contains(p.as_str()))
    }
}

/// Per-rank event recorder.
#[derive(Debug)]
pub struct Tracer {
    rank: usize,
    clock: Clock,
    filter: Arc<RegionFilter>,
    events: Vec<TraceEvent>,
    open: Vec<String>,
    suppressed_depth: Vec<bool>,
    problems: Vec<String>,
}

impl Tracer {
    pub fn new(rank: usize, clock: Clock) -> Self {
        Self::with_filter(rank, clock, Arc::new(RegionFilter::default()))
    }

    pub fn with_filter(rank: usize, clock: Clock, filter: Arc<RegionFilter>) -> Self {
        Self {
            rank,
            clock,
            filter,
            events: Vec::new(),
            open: Vec::new(),
            suppressed_depth: Vec::new(),
            problems: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// Current time, never earlier than the last recorded event.
    fn stamp(&self) -> f64 {
        let t = self.clock.now();
        self.events.last().map_or(t, |e| t.max(e.t))
    }

    fn push(&mut self, kind: EventKind, name: &str, bytes: Option<u64>, peer: Option<usize>) -> f64 {
        let t = self.stamp();
        self.events.push(TraceEvent {
            rank: self.rank,
            kind,
            name: name.to_string(),
            t,
            bytes,
            peer,
        });
        t
    }

    pub fn enter(&mut self, name: &str) {
        let skip = self.filter.suppresses(name);
        self.open.push(name.to_string());
        self.suppressed_depth.push(skip);
        if !skip {
            self.push(EventKind::RegionEnter, name, None, None);
        }
    }

    pub fn exit(&mut self, name: &str) {
        match self.open.last() {
            Some(top) if top == name => {
                self.open.pop();
                if !self.suppressed_depth.pop().unwrap_or(false) {
                    self.push(EventKind::RegionExit, name, None, None);
                }
            }
            Some(top) => {
                let msg = format!("rank {}: exit of '{name}' while '{top}' is open", self.rank);
                self.problems.push(msg);
            }
            None => {
                let msg = format!("rank {}: exit of '{name}' without enter", self.rank);
                self.problems.push(msg);
            }
        }
    }

    /// Records a communication event and returns its timestamp.
    pub fn comm(&mut self, kind: EventKind, name: &str, bytes: u64, peer: usize) -> f64 {
        debug_assert!(kind.is_comm());
        self.push(kind, name, Some(bytes), Some(peer))
    }

    /// Records a communication event at `t`, clamped so events stay ordered.
    pub fn comm_at(&mut self, kind: EventKind, name: &str, bytes: u64, peer: usize, t: f64) -> f64 {
        debug_assert!(kind.is_comm());
        let t = self.events.last().map_or(t, |e| t.max(e.t));
        self.events.push(TraceEvent {
            rank: self.rank,
            kind,
            name: name.to_string(),
            t,
            bytes: Some(bytes),
            peer: Some(peer),
        });
        t
    }

    /// Returns the recorded events, or a structural error if regions were
    /// left open or closed out of order.
    pub fn finalize(mut self) -> Result<Vec<TraceEvent>> {
        for name in self.open.drain(..) {
            self.problems
                .push(format!("rank {}: region '{name}' never exited", self.rank));
        }
        if self.problems.is_empty() {
            Ok(self.events)
        } else {
            Err(Error::Structural(self.problems.join("; ")))
        }
    }

    /// Returns the events regardless of structural problems.
    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }
}

/// Header line of a trace file.
#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    ranks: usize,
}

/// Events of all ranks, sorted by `(t, rank)`; events of one rank keep their
/// recording order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub ranks: usize,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(ranks: usize, mut events: Vec<TraceEvent>) -> Self {
        events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.rank.cmp(&b.rank)));
        Self { ranks, events }
    }

    /// Merges per-rank buffers.
    pub fn merge(per_rank: Vec<Vec<TraceEvent>>) -> Self {
        let ranks = per_rank.len();
        Self::new(ranks, per_rank.into_iter().flatten().collect())
    }

    /// Events of one rank in order.
    pub fn rank_events(&self, rank: usize) -> Vec<&TraceEvent> {
        self.events.iter().filter(|e| e.rank == rank).collect()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Number of entries into regions of `phase` on `rank`.
    pub fn region_count(&self, rank: usize, phase: Phase) -> usize {
        let name = region_name(phase, rank);
        self.events
            .iter()
            .filter(|e| e.rank == rank && e.kind == EventKind::RegionEnter && e.name == name)
            .count()
    }

    /// Checks ranks, per-rank time order and region nesting.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for e in &self.events {
            if e.rank >= self.ranks {
                problems.push(format!("event of rank {} in a {}-rank trace", e.rank, self.ranks));
                break;
            }
            if !e.t.is_finite() {
                problems.push(format!("rank {}: non-finite timestamp", e.rank));
                break;
            }
        }
        for r in 0..self.ranks {
            let mut stack: Vec<&str> = Vec::new();
            let mut last = f64::NEG_INFINITY;
            for e in self.rank_events(r) {
                if e.t < last {
                    problems.push(format!("rank {r}: timestamp {} before {last}", e.t));
                }
                last = e.t;
                match e.kind {
                    EventKind::RegionEnter => stack.push(&e.name),
                    EventKind::RegionExit => match stack.pop() {
                        Some(top) if top == e.name => {}
                        Some(top) => problems.push(format!(
                            "rank {r}: exit of '{}' while '{top}' is open",
                            e.name
                        )),
                        None => problems.push(format!("rank {r}: exit of '{}' without enter", e.name)),
                    },
                    _ => {}
                }
            }
            for open in stack {
                problems.push(format!("rank {r}: region '{open}' never exited"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Structural(problems.join("; ")))
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Header {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            ranks: self.ranks,
        })
        .expect("header serializes");
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::from_lines(text.lines().map(|l| Ok(l.to_string())))
    }

    fn from_lines(lines: impl Iterator<Item = std::io::Result<String>>) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
        let mut header: Option<Header> = None;
        let mut events = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            match &header {
                None => {
                    let h: Header =
                        serde_json::from_str(&line).map_err(|e| parse_err(lineno, format!("bad header: {e}")))?;
                    if h.format != TRACE_FORMAT || h.version != TRACE_VERSION {
                        return Err(parse_err(
                            lineno,
                            format!("unsupported trace format {} v{}", h.format, h.version),
                        ));
                    }
                    header = Some(h);
                }
                Some(h) => {
                    let e: TraceEvent =
                        serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
                    if e.rank >= h.ranks {
                        return Err(parse_err(lineno, format!("rank {} out of range", e.rank)));
                    }
                    events.push(e);
                }
            }
        }
        let header = header.ok_or_else(|| parse_err(1, "missing header".into()))?;
        Ok(Self::new(header.ranks, events))
    }
}

pub fn write_trace(trace: &Trace, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(trace.to_jsonl().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Trace::from_lines(BufReader::new(file).lines())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegionStats {
    pub calls: u64,
    pub inclusive: f64,
    pub exclusive: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankProfile {
    pub runtime: f64,
    pub computation: f64,
    pub communication: f64,
    /// Time outside any region.
    pub untracked: f64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub regions: BTreeMap<String, RegionStats>,
}

impl RankProfile {
    pub fn exclusive_sum(&self) -> f64 {
        self.regions.values().map(|s| s.exclusive).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Profile {
    pub ranks: Vec<RankProfile>,
}

impl Profile {
    /// Exclusive time of a phase summed over all ranks.
    pub fn phase_exclusive(&self, phase: Phase) -> f64 {
        self.ranks
            .iter()
            .enumerate()
            .filter_map(|(r, p)| p.regions.get(&region_name(phase, r)))
            .map(|s| s.exclusive)
            .sum()
    }
}

/// Blocking intervals `[post, complete]` of one rank's communication calls,
/// pairing each completion with the oldest open post of the same kind, peer
/// and tag.
pub(crate) fn comm_intervals(events: &[&TraceEvent]) -> Result<Vec<(f64, f64)>> {
    let mut open: BTreeMap<(bool, Option<usize>, &str), Vec<f64>> = BTreeMap::new();
    let mut out = Vec::new();
    for e in events {
        let (is_send, posting) = match e.kind {
            EventKind::SendPost => (true, true),
            EventKind::SendComplete => (true, false),
            EventKind::RecvPost => (false, true),
            EventKind::RecvComplete => (false, false),
            _ => continue,
        };
        let key = (is_send, e.peer, e.name.as_str());
        if posting {
            open.entry(key).or_default().push(e.t);
        } else {
            let posts = open.get_mut(&key).filter(|v| !v.is_empty()).ok_or_else(|| {
                Error::Structural(format!(
                    "rank {}: completion of '{}' without a post",
                    e.rank, e.name
                ))
            })?;
            out.push((posts.remove(0), e.t));
        }
    }
    if let Some(((_, _, name), _)) = open.iter().find(|(_, v)| !v.is_empty()) {
        return Err(Error::Structural(format!("'{name}' posted but never completed")));
    }
    Ok(out)
}

/// Total length of the union of intervals.
pub(crate) fn union_length(mut intervals: Vec<(f64, f64)>) -> f64 {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut current: Option<(f64, f64)> = None;
    for (a, b) in intervals {
        match current {
            Some((s, e)) if a <= e => current = Some((s, e.max(b))),
            Some((s, e)) => {
                total += e - s;
                current = Some((a, b));
            }
            None => current = Some((a, b)),
        }
    }
    if let Some((s, e)) = current {
        total += e - s;
    }
    total
}

pub(crate) fn rank_profile(events: &[&TraceEvent]) -> Result<RankProfile> {
    let mut prof = RankProfile::default();
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return Ok(prof);
    };
    prof.runtime = last.t - first.t;

    // (name, enter time, inclusive time of direct children)
    let mut stack: Vec<(&str, f64, f64)> = Vec::new();
    let mut prev_t = first.t;
    for e in events {
        if stack.is_empty() {
            prof.untracked += e.t - prev_t;
        }
        prev_t = e.t;
        match e.kind {
            EventKind::RegionEnter => stack.push((&e.name, e.t, 0.0)),
            EventKind::RegionExit => {
                let (name, t0, children) = stack.pop().filter(|(n, _, _)| *n == e.name).ok_or_else(|| {
                    Error::Structural(format!("rank {}: unbalanced exit of '{}'", e.rank, e.name))
                })?;
                let incl = e.t - t0;
                let s = prof.regions.entry(name.to_string()).or_default();
                s.calls += 1;
                s.inclusive += incl;
                s.exclusive += incl - children;
                if let Some(parent) = stack.last_mut() {
                    parent.2 += incl;
                }
            }
            EventKind::SendPost => prof.bytes_sent += e.bytes.unwrap_or(0),
            EventKind::RecvComplete => prof.bytes_received += e.bytes.unwrap_or(0),
            _ => {}
        }
    }
    if let Some((name, _, _)) = stack.first() {
        return Err(Error::Structural(format!(
            "rank {}: region '{name}' never exited",
            first.rank
        )));
    }
    prof.communication = union_length(comm_intervals(events)?);
    prof.computation = prof.runtime - prof.communication;
    Ok(prof)
}

/// Aggregates call counts, inclusive/exclusive region times and computation
/// versus communication time per rank.
pub fn build_profile(trace: &Trace) -> Result<Profile> {
    trace.validate()?;
    let ranks = (0..trace.ranks)
        .map(|r| rank_profile(&trace.rank_events(r)))
        .collect::<Result<_>>()?;
    Ok(Profile { ranks })
}
