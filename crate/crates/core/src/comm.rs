//! In-process point-to-point messaging between time workers.
//!
//! A [`World`] of `P` ranks hands out one [`Endpoint`] per rank. Sends are
//! nonblocking ([`Endpoint::isend`] returns a [`SendHandle`]) and receives
//! match on the exact `(source, tag)` pair with FIFO order per pair. Every
//! call records trace events on the endpoint's [`Tracer`].
//!
//! Payloads up to the rendezvous threshold are buffered eagerly: the send is
//! complete as soon as it is posted. Larger payloads complete only once the
//! receiver has taken them, so a receiver that posts late makes the sender's
//! [`Endpoint::wait`] block. An optional delivery latency holds every message
//! back for a fixed time on a helper thread.
//!
//! Blocking operations are `async` so the same worker code can run on its own
//! thread or be interleaved with other workers on a single thread.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::future::poll_fn;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::task::{Poll, Waker};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::trace::{Clock, EventKind, RegionFilter, Tracer};

pub const DEFAULT_RENDEZVOUS_THRESHOLD: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommConfig {
    /// Payloads larger than this many bytes use the rendezvous protocol.
    pub rendezvous_threshold: usize,
    /// Delivery delay applied to every message.
    pub latency: Duration,
}

impl Default for CommConfig {
    fn default() -> Self {
        Self {
            rendezvous_threshold: DEFAULT_RENDEZVOUS_THRESHOLD,
            latency: Duration::ZERO,
        }
    }
}

impl CommConfig {
    /// Every message buffered eagerly.
    pub fn eager() -> Self {
        Self {
            rendezvous_threshold: usize::MAX,
            ..Self::default()
        }
    }

    /// Every nonempty message waits for its receiver.
    pub fn rendezvous() -> Self {
        Self {
            rendezvous_threshold: 0,
            ..Self::default()
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TagKind {
    Value,
    Status,
}

/// Message tag: level, payload kind and iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tag {
    pub level: u8,
    pub kind: TagKind,
    pub iteration: u32,
}

impl Tag {
    pub fn value(level: u8, iteration: u32) -> Self {
        Self {
            level,
            kind: TagKind::Value,
            iteration,
        }
    }

    pub fn status(level: u8, iteration: u32) -> Self {
        Self {
            level,
            kind: TagKind::Status,
            iteration,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            TagKind::Value => "value",
            TagKind::Status => "status",
        };
        write!(f, "{kind}/l{}/it{}", self.level, self.iteration)
    }
}

#[derive(Debug, Default)]
struct SendState {
    completed: Mutex<Option<f64>>,
}

struct Envelope {
    payload: Vec<u8>,
    state: Arc<SendState>,
    rendezvous: bool,
}

/// Message and handle counters of a world.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommAudit {
    /// Messages sent, keyed by `(source, dest)`.
    pub sends: BTreeMap<(usize, usize), u64>,
    /// Messages received, keyed by `(source, dest)`.
    pub recvs: BTreeMap<(usize, usize), u64>,
    pub handles_posted: u64,
    pub handles_waited: u64,
}

impl CommAudit {
    /// Every channel received exactly what was sent.
    pub fn is_balanced(&self) -> bool {
        self.sends == self.recvs
    }

    /// Send handles that were never waited.
    pub fn unwaited(&self) -> u64 {
        self.handles_posted - self.handles_waited
    }

    pub fn total_sends(&self) -> u64 {
        self.sends.values().sum()
    }

    pub fn total_recvs(&self) -> u64 {
        self.recvs.values().sum()
    }
}

struct Shared {
    size: usize,
    config: CommConfig,
    clock: Clock,
    mailboxes: Vec<Mutex<HashMap<(usize, Tag), VecDeque<Envelope>>>>,
    wakers: Vec<Mutex<Option<Waker>>>,
    closed: Vec<AtomicBool>,
    progress: AtomicU64,
    in_flight: AtomicUsize,
    aborted: AtomicBool,
    abort_reason: Mutex<Option<String>>,
    last_event: Vec<Mutex<String>>,
    audit: Mutex<CommAudit>,
}

impl Shared {
    fn wake(&self, rank: usize) {
        if let Some(w) = self.wakers[rank].lock().unwrap().take() {
            w.wake();
        }
    }

    fn bump(&self) {
        self.progress.fetch_add(1, Ordering::SeqCst);
    }

    fn deliver(&self, source: usize, dest: usize, tag: Tag, env: Envelope) {
        self.mailboxes[dest]
            .lock()
            .unwrap()
            .entry((source, tag))
            .or_default()
            .push_back(env);
        self.bump();
        self.wake(dest);
    }

    fn abort_error(&self) -> Option<Error> {
        if !self.aborted.load(Ordering::SeqCst) {
            return None;
        }
        let reason = self.abort_reason.lock().unwrap().clone().unwrap_or_default();
        Some(Error::ChannelClosed(format!("run aborted: {reason}")))
    }
}

/// Shared view of all endpoints, used for supervision.
#[derive(Clone)]
pub struct World {
    shared: Arc<Shared>,
}

impl World {
    pub fn new(size: usize, config: CommConfig, clock: Clock) -> (World, Vec<Endpoint>) {
        Self::with_filter(size, config, clock, Arc::new(RegionFilter::default()))
    }

    pub fn with_filter(
        size: usize,
        config: CommConfig,
        clock: Clock,
        filter: Arc<RegionFilter>,
    ) -> (World, Vec<Endpoint>) {
        let shared = Arc::new(Shared {
            size,
            config,
            clock,
            mailboxes: (0..size).map(|_| Mutex::default()).collect(),
            wakers: (0..size).map(|_| Mutex::default()).collect(),
            closed: (0..size).map(|_| AtomicBool::new(false)).collect(),
            progress: AtomicU64::new(0),
            in_flight: AtomicUsize::new(0),
            aborted: AtomicBool::new(false),
            abort_reason: Mutex::new(None),
            last_event: (0..size).map(|_| Mutex::new("<no events>".into())).collect(),
            audit: Mutex::default(),
        });
        let endpoints = (0..size)
            .map(|rank| Endpoint {
                rank,
                shared: shared.clone(),
                tracer: Tracer::with_filter(rank, clock, filter.clone()),
            })
            .collect();
        (World { shared }, endpoints)
    }

    pub fn size(&self) -> usize {
        self.shared.size
    }

    /// Counter bumped by every recorded event and delivery.
    pub fn progress(&self) -> u64 {
        self.shared.progress.load(Ordering::SeqCst)
    }

    /// Messages still held back by injected latency.
    pub fn in_flight(&self) -> usize {
        self.shared.in_flight.load(Ordering::SeqCst)
    }

    /// Makes every pending and future operation fail.
    pub fn abort(&self, reason: &str) {
        {
            let mut r = self.shared.abort_reason.lock().unwrap();
            if r.is_none() {
                *r = Some(reason.to_string());
            }
        }
        self.shared.aborted.store(true, Ordering::SeqCst);
        for rank in 0..self.shared.size {
            self.shared.wake(rank);
        }
    }

    pub fn is_aborted(&self) -> bool {
        self.shared.aborted.load(Ordering::SeqCst)
    }

    /// Last recorded event of every rank.
    pub fn dump(&self) -> String {
        self.shared
            .last_event
            .iter()
            .enumerate()
            .map(|(r, e)| format!("  rank {r}: {}", e.lock().unwrap()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn audit(&self) -> CommAudit {
        self.shared.audit.lock().unwrap().clone()
    }

    /// Messages delivered but never received.
    pub fn pending_messages(&self) -> usize {
        self.shared
            .mailboxes
            .iter()
            .map(|m| m.lock().unwrap().values().map(VecDeque::len).sum::<usize>())
            .sum()
    }
}

/// Pending send returned by [`Endpoint::isend`].
#[derive(Debug)]
pub struct SendHandle {
    state: Arc<SendState>,
    dest: usize,
    tag: Tag,
    bytes: u64,
    waited: bool,
    /// send-complete already in the trace
    recorded: bool,
}

impl SendHandle {
    pub fn is_complete(&self) -> bool {
        self.state.completed.lock().unwrap().is_some()
    }

    pub fn dest(&self) -> usize {
        self.dest
    }

    pub fn tag(&self) -> Tag {
        self.tag
    }
}

/// One rank's access to the world, with its own tracer.
pub struct Endpoint {
    rank: usize,
    shared: Arc<Shared>,
    tracer: Tracer,
}

impl Endpoint {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.shared.size
    }

    pub fn clock(&self) -> Clock {
        self.shared.clock
    }

    pub fn tracer(&self) -> &Tracer {
        &self.tracer
    }

    pub fn into_tracer(self) -> Tracer {
        self.tracer
    }

    fn note(&self, what: std::fmt::Arguments<'_>) {
        *self.shared.last_event[self.rank].lock().unwrap() =
            format!("{what} at t={:.6}", self.shared.clock.now());
        self.shared.bump();
    }

    pub fn enter(&mut self, region: &str) {
        self.tracer.enter(region);
        self.note(format_args!("enter {region}"));
    }

    pub fn exit(&mut self, region: &str) {
        self.tracer.exit(region);
        self.note(format_args!("exit {region}"));
    }

    /// Marks the endpoint closed; receives from it fail once drained.
    pub fn close(&self) {
        self.shared.closed[self.rank].store(true, Ordering::SeqCst);
        for r in 0..self.shared.size {
            self.shared.wake(r);
        }
    }

    fn check_peer(&self, peer: usize) -> Result<()> {
        if peer == self.rank || peer >= self.shared.size {
            return Err(Error::invalid(format!(
                "rank {} cannot address peer {peer} in a world of {}",
                self.rank, self.shared.size
            )));
        }
        Ok(())
    }

    /// Posts a send and returns immediately.
    pub fn isend(&mut self, dest: usize, tag: Tag, payload: Vec<u8>) -> Result<SendHandle> {
        self.check_peer(dest)?;
        if let Some(e) = self.shared.abort_error() {
            return Err(e);
        }
        if self.shared.closed[dest].load(Ordering::SeqCst) {
            return Err(Error::ChannelClosed(format!("rank {dest} is closed")));
        }
        let bytes = payload.len() as u64;
        let name = tag.to_string();
        let t = self.tracer.comm(EventKind::SendPost, &name, bytes, dest);
        self.note(format_args!("send-post {name} to {dest}"));

        let rendezvous = payload.len() > self.shared.config.rendezvous_threshold;
        let state = Arc::new(SendState::default());
        if !rendezvous {
            // buffered: accepted by the transport right away
            *state.completed.lock().unwrap() = Some(t);
            self.tracer.comm_at(EventKind::SendComplete, &name, bytes, dest, t);
        }
        {
            let mut audit = self.shared.audit.lock().unwrap();
            *audit.sends.entry((self.rank, dest)).or_default() += 1;
            audit.handles_posted += 1;
        }
        let env = Envelope {
            payload,
            state: state.clone(),
            rendezvous,
        };
        let latency = self.shared.config.latency;
        if latency.is_zero() {
            self.shared.deliver(self.rank, dest, tag, env);
        } else {
            let shared = self.shared.clone();
            let source = self.rank;
            shared.in_flight.fetch_add(1, Ordering::SeqCst);
            std::thread::spawn(move || {
                std::thread::sleep(latency);
                shared.deliver(source, dest, tag, env);
                shared.in_flight.fetch_sub(1, Ordering::SeqCst);
            });
        }
        Ok(SendHandle {
            state,
            dest,
            tag,
            bytes,
            waited: false,
            recorded: !rendezvous,
        })
    }

    /// Completes once the transport has accepted the payload. Waiting an
    /// already waited handle returns at once.
    pub async fn wait(&mut self, handle: &mut SendHandle) -> Result<()> {
        if handle.waited {
            return Ok(());
        }
        poll_fn(|cx| {
            {
                let done = handle.state.completed.lock().unwrap();
                if done.is_none() {
                    if let Some(e) = self.shared.abort_error() {
                        return Poll::Ready(Err(e));
                    }
                    *self.shared.wakers[self.rank].lock().unwrap() = Some(cx.waker().clone());
                    return Poll::Pending;
                }
            }
            Poll::Ready(Ok(()))
        })
        .await?;
        let name = handle.tag.to_string();
        if !handle.recorded {
            self.tracer
                .comm(EventKind::SendComplete, &name, handle.bytes, handle.dest);
            handle.recorded = true;
        }
        self.note(format_args!("send-complete {name} to {}", handle.dest));
        handle.waited = true;
        self.shared.audit.lock().unwrap().handles_waited += 1;
        Ok(())
    }

    /// Receives the oldest message from `source` with exactly `tag`.
    pub async fn recv(&mut self, source: usize, tag: Tag) -> Result<Vec<u8>> {
        self.check_peer(source)?;
        let name = tag.to_string();
        self.tracer.comm(EventKind::RecvPost, &name, 0, source);
        self.note(format_args!("recv-post {name} from {source}"));
        let payload = poll_fn(|cx| {
            let mut mailbox = self.shared.mailboxes[self.rank].lock().unwrap();
            let queue = mailbox.get_mut(&(source, tag));
            if let Some(env) = queue.and_then(VecDeque::pop_front) {
                drop(mailbox);
                if env.rendezvous {
                    *env.state.completed.lock().unwrap() = Some(self.shared.clock.now());
                    self.shared.wake(source);
                }
                return Poll::Ready(Ok(env.payload));
            }
            if let Some(e) = self.shared.abort_error() {
                return Poll::Ready(Err(e));
            }
            let source_closed = self.shared.closed[source].load(Ordering::SeqCst);
            if source_closed && self.shared.in_flight.load(Ordering::SeqCst) == 0 {
                return Poll::Ready(Err(Error::ChannelClosed(format!(
                    "rank {source} closed with no message tagged {tag}"
                ))));
            }
            *self.shared.wakers[self.rank].lock().unwrap() = Some(cx.waker().clone());
            Poll::Pending
        })
        .await?;
        self.tracer
            .comm(EventKind::RecvComplete, &name, payload.len() as u64, source);
        self.note(format_args!("recv-complete {name} from {source}"));
        *self
            .shared
            .audit
            .lock()
            .unwrap()
            .recvs
            .entry((source, self.rank))
            .or_default() += 1;
        Ok(payload)
    }
}

pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::invalid(format!(
            "payload of {} bytes is not a sequence of doubles",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
