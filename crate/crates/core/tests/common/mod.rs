#![allow(dead_code)]

use pitlab::trace::{EventKind, Trace, TraceEvent};

pub fn ev(rank: usize, kind: EventKind, name: &str, t: f64) -> TraceEvent {
    TraceEvent {
        rank,
        kind,
        name: name.into(),
        t,
        bytes: None,
        peer: None,
    }
}

pub fn msg(rank: usize, kind: EventKind, tag: &str, t: f64, peer: usize) -> TraceEvent {
    TraceEvent {
        rank,
        kind,
        name: tag.into(),
        t,
        bytes: Some(8),
        peer: Some(peer),
    }
}

/// Two ranks, T = 10, computation (8, 6), ideal makespan 9.
///
/// Rank 0 computes for 8 s and then blocks 2 s in a send. Rank 1 computes
/// 5 s, waits 4 s for that message, then computes 1 s more.
pub fn hand_trace() -> Trace {
    use EventKind::*;
    Trace::new(
        2,
        vec![
            ev(0, RegionEnter, "work", 0.0),
            ev(0, RegionExit, "work", 8.0),
            msg(0, SendPost, "m", 8.0, 1),
            msg(0, SendComplete, "m", 10.0, 1),
            ev(1, RegionEnter, "work", 0.0),
            ev(1, RegionExit, "work", 5.0),
            msg(1, RecvPost, "m", 5.0, 0),
            msg(1, RecvComplete, "m", 9.0, 0),
            ev(1, RegionEnter, "work", 9.0),
            ev(1, RegionExit, "work", 10.0),
        ],
    )
}

/// A receiver posting 3 s after a blocking send was posted.
pub fn late_receiver_trace() -> Trace {
    use EventKind::*;
    Trace::new(
        2,
        vec![
            ev(0, RegionEnter, "REGION -- IT_COARSE -- 0", 0.0),
            msg(0, SendPost, "value/l1/it1", 2.0, 1),
            msg(0, SendComplete, "value/l1/it1", 5.0, 1),
            ev(0, RegionExit, "REGION -- IT_COARSE -- 0", 5.5),
            ev(1, RegionEnter, "REGION -- IT_FINE -- 1", 0.0),
            ev(1, RegionExit, "REGION -- IT_FINE -- 1", 5.0),
            msg(1, RecvPost, "value/l1/it1", 5.0, 0),
            msg(1, RecvComplete, "value/l1/it1", 5.0, 0),
        ],
    )
}
