//! Deterministic simulated message-passing network.
//!
//! Channels are authenticated (the network stamps the real sender on every
//! delivery) and reliable (every accepted send is delivered exactly once).
//! Delivery order is a total order on (time, sequence number): delays are
//! drawn from a seeded generator, bounded by `max_delay` after the configured
//! stabilization time and by a larger finite cap before it, so identical
//! inputs replay bit-identically.
//!
//! A process may only address messages to processes it knows. The known set
//! starts from the scenario's knowledge lists and grows as messages arrive,
//! both from the channel-level sender and from process ids embedded in
//! payloads.
//!
//! The simulator is protocol-agnostic: payloads implement [`Payload`] and
//! per-process state machines implement [`Node`]. Nothing here is shared
//! between runs, so independent runs may execute on different threads.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ProcessId;

/// A message type that can travel over the simulated network.
pub trait Payload: Clone + fmt::Debug {
    /// Short tag for traces ("DISCOVER", "PING", ...).
    fn kind(&self) -> &'static str;
    /// Stable content digest for traces.
    fn digest(&self) -> String;
    /// Process ids the receiver learns from the content, in addition to the
    /// channel-level sender.
    fn embedded_ids(&self) -> BTreeSet<ProcessId>;
}

/// A per-process protocol state machine.
pub trait Node<M: Payload> {
    fn on_init(&mut self, ctx: &mut Context<M>);
    fn on_message(&mut self, from: ProcessId, msg: M, ctx: &mut Context<M>);
}

/// Simulation parameters. All runs with identical inputs and config produce
/// identical traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Delay bound (in logical ticks) applied from `gst` onward.
    pub max_delay: u64,
    /// Before this logical time, delays may be up to four times the bound;
    /// still finite, so delivery is never lost.
    pub gst: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_delay: 5,
            gst: 0,
        }
    }
}

/// A scheduled delivery.
#[derive(Debug, Clone)]
pub struct SimEvent<M> {
    pub deliver_at: u64,
    pub seq: u64,
    pub from: ProcessId,
    pub to: ProcessId,
    pub payload: M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Send,
    Deliver,
    Note,
    Warn,
}

/// One line of the run trace. `seq` ties a send to its delivery. For notes
/// and warnings `msg_kind` is the label and `digest` carries the detail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: u64,
    pub seq: u64,
    pub kind: TraceKind,
    pub from: ProcessId,
    pub to: ProcessId,
    pub msg_kind: String,
    pub digest: String,
}

/// Ordered record of everything that happened in one run.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<TraceRecord>, _>>()?;
        Ok(Self { records })
    }

    pub fn deliveries(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records
            .iter()
            .filter(|r| r.kind == TraceKind::Deliver)
    }

    pub fn sends(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.kind == TraceKind::Send)
    }

    pub fn notes(&self, label: &str) -> impl Iterator<Item = &TraceRecord> + '_ {
        let label = label.to_owned();
        self.records
            .iter()
            .filter(move |r| r.kind == TraceKind::Note && r.msg_kind == label)
    }
}

/// Where a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunEnd {
    /// No pending events remained.
    Quiescent,
    /// The step budget ran out first; a liveness failure in tests.
    BudgetExceeded,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub trace: Trace,
    pub end: RunEnd,
    pub steps: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("correct process {from} tried to send to unknown process {to}")]
    UnknownRecipient { from: ProcessId, to: ProcessId },
}

/// Send/note buffer handed to a node during one callback.
pub struct Context<M> {
    id: ProcessId,
    now: u64,
    sends: Vec<(ProcessId, M, u64)>,
    notes: Vec<(String, String)>,
}

impl<M: Payload> Context<M> {
    pub fn self_id(&self) -> ProcessId {
        self.id
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Queues a message; the network draws its delay and validates that the
    /// recipient is known to the sender.
    pub fn send(&mut self, to: ProcessId, msg: M) {
        self.sends.push((to, msg, self.now));
    }

    /// Queues a message that must not be scheduled before logical time `at`
    /// (used by scripted adversaries).
    pub fn send_not_before(&mut self, to: ProcessId, msg: M, at: u64) {
        self.sends.push((to, msg, at.max(self.now)));
    }

    /// Appends a structured note to the trace (decisions, protocol events).
    pub fn note(&mut self, label: &str, detail: String) {
        self.notes.push((label.to_owned(), detail));
    }
}

/// Drives `nodes` until quiescence or until `budget` deliveries happened.
///
/// `initial_contacts` is each process's starting knowledge list (the process
/// itself is always added). Sends from faulty processes to unknown
/// recipients are dropped with a warning; from correct processes they abort
/// the run with an error, since correct protocol logic must never do that.
pub fn run<M: Payload, N: Node<M>>(
    nodes: &mut BTreeMap<ProcessId, N>,
    initial_contacts: &BTreeMap<ProcessId, BTreeSet<ProcessId>>,
    faulty: &BTreeSet<ProcessId>,
    config: &SimConfig,
    budget: u64,
) -> Result<RunOutcome, SimError> {
    let universe: BTreeSet<ProcessId> = nodes.keys().copied().collect();
    let mut contactable: BTreeMap<ProcessId, BTreeSet<ProcessId>> = universe
        .iter()
        .map(|&v| {
            let mut known = initial_contacts.get(&v).cloned().unwrap_or_default();
            known.insert(v);
            (v, known)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut queue: BTreeMap<(u64, u64), SimEvent<M>> = BTreeMap::new();
    let mut trace = Trace::default();
    let mut next_seq: u64 = 0;

    for &id in &universe {
        let mut ctx = Context {
            id,
            now: 0,
            sends: Vec::new(),
            notes: Vec::new(),
        };
        nodes.get_mut(&id).expect("node exists").on_init(&mut ctx);
        flush(
            id,
            ctx,
            &universe,
            &contactable,
            faulty,
            config,
            &mut rng,
            &mut queue,
            &mut trace,
            &mut next_seq,
        )?;
    }

    let mut steps: u64 = 0;
    while let Some((&key, _)) = queue.iter().next() {
        if steps >= budget {
            return Ok(RunOutcome {
                trace,
                end: RunEnd::BudgetExceeded,
                steps,
            });
        }
        steps += 1;
        let event = queue.remove(&key).expect("front event exists");
        trace.records.push(TraceRecord {
            time: event.deliver_at,
            seq: event.seq,
            kind: TraceKind::Deliver,
            from: event.from,
            to: event.to,
            msg_kind: event.payload.kind().into(),
            digest: event.payload.digest(),
        });

        let learned = contactable.get_mut(&event.to).expect("recipient known");
        learned.insert(event.from);
        for id in event.payload.embedded_ids() {
            if universe.contains(&id) {
                learned.insert(id);
            }
        }

        let mut ctx = Context {
            id: event.to,
            now: event.deliver_at,
            sends: Vec::new(),
            notes: Vec::new(),
        };
        nodes
            .get_mut(&event.to)
            .expect("node exists")
            .on_message(event.from, event.payload, &mut ctx);
        flush(
            event.to,
            ctx,
            &universe,
            &contactable,
            faulty,
            config,
            &mut rng,
            &mut queue,
            &mut trace,
            &mut next_seq,
        )?;
    }

    Ok(RunOutcome {
        trace,
        end: RunEnd::Quiescent,
        steps,
    })
}

#[allow(clippy::too_many_arguments)]
fn flush<M: Payload>(
    from: ProcessId,
    ctx: Context<M>,
    universe: &BTreeSet<ProcessId>,
    contactable: &BTreeMap<ProcessId, BTreeSet<ProcessId>>,
    faulty: &BTreeSet<ProcessId>,
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
    queue: &mut BTreeMap<(u64, u64), SimEvent<M>>,
    trace: &mut Trace,
    next_seq: &mut u64,
) -> Result<(), SimError> {
    for (label, detail) in ctx.notes {
        let seq = *next_seq;
        *next_seq += 1;
        trace.records.push(TraceRecord {
            time: ctx.now,
            seq,
            kind: TraceKind::Note,
            from,
            to: from,
            msg_kind: label,
            digest: detail,
        });
    }
    for (to, msg, not_before) in ctx.sends {
        let seq = *next_seq;
        *next_seq += 1;
        let known = contactable[&from].contains(&to) && universe.contains(&to);
        if !known {
            if faulty.contains(&from) {
                trace.records.push(TraceRecord {
                    time: ctx.now,
                    seq,
                    kind: TraceKind::Warn,
                    from,
                    to,
                    msg_kind: "unknown-recipient".into(),
                    digest: msg.kind().into(),
                });
                continue;
            }
            return Err(SimError::UnknownRecipient { from, to });
        }
        let base = not_before.max(ctx.now);
        let deliver_at = base + draw_delay(rng, base, config);
        trace.records.push(TraceRecord {
            time: ctx.now,
            seq,
            kind: TraceKind::Send,
            from,
            to,
            msg_kind: msg.kind().into(),
            digest: msg.digest(),
        });
        queue.insert(
            (deliver_at, seq),
            SimEvent {
                deliver_at,
                seq,
                from,
                to,
                payload: msg,
            },
        );
    }
    Ok(())
}

fn draw_delay(rng: &mut ChaCha8Rng, at: u64, config: &SimConfig) -> u64 {
    let bound = config.max_delay.max(1);
    if at < config.gst {
        1 + rng.gen_range(0..bound.saturating_mul(4))
    } else {
        1 + rng.gen_range(0..bound)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pid(id: u32) -> ProcessId {
        ProcessId(id)
    }

    #[derive(Debug, Clone, PartialEq)]
    enum Toy {
        Ping(u32),
        Pong(u32),
    }

    impl Payload for Toy {
        fn kind(&self) -> &'static str {
            match self {
                Toy::Ping(_) => "PING",
                Toy::Pong(_) => "PONG",
            }
        }

        fn digest(&self) -> String {
            format!("{self:?}")
        }

        fn embedded_ids(&self) -> BTreeSet<ProcessId> {
            BTreeSet::new()
        }
    }

    /// Sends `initial` pings to a peer at init, answers every ping with a
    /// pong, and counts pongs.
    struct PingNode {
        peer: Option<ProcessId>,
        initial: u32,
        pongs: u32,
        echo_forever: bool,
    }

    impl Node<Toy> for PingNode {
        fn on_init(&mut self, ctx: &mut Context<Toy>) {
            if let Some(peer) = self.peer {
                for n in 0..self.initial {
                    ctx.send(peer, Toy::Ping(n));
                }
            }
        }

        fn on_message(&mut self, from: ProcessId, msg: Toy, ctx: &mut Context<Toy>) {
            match msg {
                Toy::Ping(n) => ctx.send(from, Toy::Pong(n)),
                Toy::Pong(n) => {
                    self.pongs += 1;
                    ctx.note("pong", format!("{n}"));
                    if self.echo_forever {
                        ctx.send(from, Toy::Ping(n));
                    }
                }
            }
        }
    }

    fn two_nodes(initial: u32, echo_forever: bool) -> BTreeMap<ProcessId, PingNode> {
        let mut nodes = BTreeMap::new();
        nodes.insert(
            pid(1),
            PingNode {
                peer: Some(pid(2)),
                initial,
                pongs: 0,
                echo_forever,
            },
        );
        nodes.insert(
            pid(2),
            PingNode {
                peer: None,
                initial: 0,
                pongs: 0,
                echo_forever: false,
            },
        );
        nodes
    }

    fn contacts(pairs: &[(u32, &[u32])]) -> BTreeMap<ProcessId, BTreeSet<ProcessId>> {
        pairs
            .iter()
            .map(|&(v, ns)| (pid(v), ns.iter().copied().map(ProcessId).collect()))
            .collect()
    }

    #[test]
    fn empty_protocol_is_immediately_quiescent() {
        struct Mute;
        impl Node<Toy> for Mute {
            fn on_init(&mut self, _: &mut Context<Toy>) {}
            fn on_message(&mut self, _: ProcessId, _: Toy, _: &mut Context<Toy>) {}
        }
        let mut nodes: BTreeMap<ProcessId, Mute> = [(pid(1), Mute), (pid(2), Mute)].into();
        let out = run(
            &mut nodes,
            &contacts(&[(1, &[2]), (2, &[1])]),
            &BTreeSet::new(),
            &SimConfig::default(),
            1000,
        )
        .unwrap();
        assert_eq!(out.end, RunEnd::Quiescent);
        assert!(out.trace.records.is_empty());
    }

    #[test]
    fn reliable_exactly_once_delivery() {
        let mut nodes = two_nodes(5, false);
        let out = run(
            &mut nodes,
            &contacts(&[(1, &[2]), (2, &[])]),
            &BTreeSet::new(),
            &SimConfig::default(),
            1000,
        )
        .unwrap();
        assert_eq!(out.end, RunEnd::Quiescent);
        assert_eq!(nodes[&pid(1)].pongs, 5);
        // Every send has exactly one delivery with the same seq.
        let sends: Vec<u64> = out.trace.sends().map(|r| r.seq).collect();
        let delivered: Vec<u64> = out.trace.deliveries().map(|r| r.seq).collect();
        assert_eq!(sends.len(), 10);
        assert_eq!(delivered.len(), 10);
        for s in sends {
            assert_eq!(delivered.iter().filter(|&&d| d == s).count(), 1);
        }
        // Authenticated channels: a delivery's sender is the enqueuer's id.
        for d in out.trace.deliveries() {
            let matching = out
                .trace
                .sends()
                .find(|s| s.seq == d.seq)
                .expect("matching send");
            assert_eq!(matching.from, d.from);
            assert_eq!(matching.to, d.to);
        }
    }

    #[test]
    fn identical_config_gives_identical_traces() {
        let config = SimConfig {
            seed: 42,
            max_delay: 7,
            gst: 3,
        };
        let mk = || {
            let mut nodes = two_nodes(8, false);
            run(
                &mut nodes,
                &contacts(&[(1, &[2]), (2, &[])]),
                &BTreeSet::new(),
                &config,
                1000,
            )
            .unwrap()
        };
        assert_eq!(mk().trace.to_jsonl(), mk().trace.to_jsonl());
    }

    #[test]
    fn different_seeds_may_reorder_but_keep_counts() {
        let run_with = |seed| {
            let mut nodes = two_nodes(8, false);
            let out = run(
                &mut nodes,
                &contacts(&[(1, &[2]), (2, &[])]),
                &BTreeSet::new(),
                &SimConfig {
                    seed,
                    ..SimConfig::default()
                },
                1000,
            )
            .unwrap();
            (out, nodes.remove(&pid(1)).unwrap().pongs)
        };
        let (a, pongs_a) = run_with(1);
        let (b, pongs_b) = run_with(2);
        assert_eq!(pongs_a, pongs_b);
        assert_eq!(a.trace.deliveries().count(), b.trace.deliveries().count());
    }

    #[test]
    fn correct_sender_to_unknown_recipient_is_an_error() {
        let mut nodes = two_nodes(1, false);
        let err = run(
            &mut nodes,
            &contacts(&[(1, &[]), (2, &[])]),
            &BTreeSet::new(),
            &SimConfig::default(),
            1000,
        )
        .unwrap_err();
        assert_eq!(
            err,
            SimError::UnknownRecipient {
                from: pid(1),
                to: pid(2)
            }
        );
    }

    #[test]
    fn faulty_sender_to_unknown_recipient_is_dropped_with_warning() {
        let mut nodes = two_nodes(1, false);
        let out = run(
            &mut nodes,
            &contacts(&[(1, &[]), (2, &[])]),
            &[pid(1)].into(),
            &SimConfig::default(),
            1000,
        )
        .unwrap();
        assert_eq!(out.end, RunEnd::Quiescent);
        assert_eq!(out.trace.deliveries().count(), 0);
        assert!(out
            .trace
            .records
            .iter()
            .any(|r| r.kind == TraceKind::Warn && r.msg_kind == "unknown-recipient"));
    }

    #[test]
    fn recipient_learns_sender_on_delivery() {
        // 2 does not know 1 initially, but answers the ping after delivery.
        let mut nodes = two_nodes(1, false);
        let out = run(
            &mut nodes,
            &contacts(&[(1, &[2]), (2, &[])]),
            &BTreeSet::new(),
            &SimConfig::default(),
            1000,
        )
        .unwrap();
        assert_eq!(out.end, RunEnd::Quiescent);
        assert_eq!(nodes[&pid(1)].pongs, 1);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let mut nodes = two_nodes(1, true);
        let out = run(
            &mut nodes,
            &contacts(&[(1, &[2]), (2, &[])]),
            &BTreeSet::new(),
            &SimConfig::default(),
            50,
        )
        .unwrap();
        assert_eq!(out.end, RunEnd::BudgetExceeded);
        assert_eq!(out.steps, 50);
    }

    #[test]
    fn trace_jsonl_round_trip() {
        let mut nodes = two_nodes(3, false);
        let out = run(
            &mut nodes,
            &contacts(&[(1, &[2]), (2, &[])]),
            &BTreeSet::new(),
            &SimConfig::default(),
            1000,
        )
        .unwrap();
        let text = out.trace.to_jsonl();
        assert_eq!(Trace::from_jsonl(&text).unwrap(), out.trace);
    }
}
