//! The distributed sink-discovery stack, written as pure state machines that
//! run on [`crate::simnet`].
//!
//! Every process concurrently runs three cooperating mechanisms:
//!
//! * **Direct discovery**: expand a reachable-set estimate (`known`) by
//!   asking every known process for its knowledge list (`DISCOVER` /
//!   `PD_REPLY`), exchange the estimate with every contact
//!   (`KNOWN_EXCHANGE`), and decide sink membership once enough exchanged
//!   sets agree with the local one. Sink members always terminate this way;
//!   processes outside the sink may not.
//! * **Reachable-reliable broadcast**: a path-recording flood used for
//!   `GET_SINK`. Relays append themselves to the recorded path before
//!   forwarding, and a receiver accepts an (origin, message) pair only once
//!   it holds copies whose recorded paths are pairwise internally
//!   node-disjoint in at least f+1 ways, which guarantees at least one
//!   all-correct path vouches for the content.
//! * **get_sink**: broadcast `GET_SINK`, run direct discovery, serve every
//!   asker with `SINK_REPLY` once the sink is known directly, and otherwise
//!   adopt any view reported by more than f distinct senders.
//!
//! Adversary model: faulty processes may stay silent, understate their
//! knowledge lists, report different sink views to different askers, or send
//! arbitrary scripted messages. They cannot forge channel senders or invent
//! process ids. Exchange and reply counting is per distinct sender, so f
//! faulty processes contribute at most f votes to any threshold.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fbqs::SliceSet;
use crate::graph::ProcessId;
use crate::scenario::{AdversaryBehavior, Scenario};
use crate::simnet::{self, Context, Node, Payload, RunEnd, SimError, Trace};
use crate::slices::SinkResult;

/// Wire message: a kind-tagged body plus the sender's slice declaration when
/// it has one (during discovery, before slices are built, the field is
/// empty).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    #[serde(flatten)]
    pub body: MessageBody,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attached_slices: Option<SliceSet>,
}

impl From<MessageBody> for ProtocolMessage {
    fn from(body: MessageBody) -> Self {
        Self {
            body,
            attached_slices: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MessageBody {
    #[serde(rename = "DISCOVER")]
    Discover,
    #[serde(rename = "PD_REPLY")]
    PdReply { pd: BTreeSet<ProcessId> },
    #[serde(rename = "KNOWN_EXCHANGE")]
    KnownExchange { known: BTreeSet<ProcessId> },
    /// Relayed flood message; `path` starts at `origin` and records every
    /// relay, in order. Entries are distinct (simple paths only).
    #[serde(rename = "GET_SINK")]
    GetSink {
        origin: ProcessId,
        path: Vec<ProcessId>,
    },
    #[serde(rename = "SINK_REPLY")]
    SinkReply { view: BTreeSet<ProcessId> },
}

impl Payload for ProtocolMessage {
    fn kind(&self) -> &'static str {
        match self.body {
            MessageBody::Discover => "DISCOVER",
            MessageBody::PdReply { .. } => "PD_REPLY",
            MessageBody::KnownExchange { .. } => "KNOWN_EXCHANGE",
            MessageBody::GetSink { .. } => "GET_SINK",
            MessageBody::SinkReply { .. } => "SINK_REPLY",
        }
    }

    fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("message serializes");
        let hash = Sha256::digest(&json);
        hash[..8].iter().fold(String::new(), |mut acc, b| {
            acc.push_str(&format!("{b:02x}"));
            acc
        })
    }

    fn embedded_ids(&self) -> BTreeSet<ProcessId> {
        match &self.body {
            MessageBody::Discover => BTreeSet::new(),
            MessageBody::PdReply { pd } => pd.clone(),
            MessageBody::KnownExchange { known } => known.clone(),
            MessageBody::GetSink { origin, path } => {
                let mut ids: BTreeSet<ProcessId> = path.iter().copied().collect();
                ids.insert(*origin);
                ids
            }
            MessageBody::SinkReply { view } => view.clone(),
        }
    }
}

/// Tunables of the broadcast flood. Budgets bound the per-(origin, message)
/// path bookkeeping; exceeding them degrades liveness, never soundness, and
/// is recorded in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolParams {
    /// Distinct incoming paths a relay forwards per origin.
    pub rrb_forward_budget: usize,
    /// Distinct internal-vertex sets a receiver stores as delivery evidence
    /// per origin.
    pub rrb_evidence_budget: usize,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            rrb_forward_budget: 16,
            rrb_evidence_budget: 64,
        }
    }
}

/// How an active node answers and serves; carved out of the scenario's
/// adversary behaviors.
#[derive(Debug, Clone, PartialEq, Eq)]
enum ActiveRole {
    Correct,
    /// Answers `DISCOVER` with a fake (understated) knowledge list.
    LieAboutPd { fake_pd: BTreeSet<ProcessId> },
    /// Serves listed askers with per-target fake views.
    EquivocateSink {
        targets: BTreeMap<ProcessId, BTreeSet<ProcessId>>,
    },
}

/// Per-(origin) bookkeeping for the broadcast flood at one receiver.
#[derive(Debug, Default, Clone)]
struct RrbPool {
    /// Distinct internal-vertex sets of valid received paths.
    internal_sets: Vec<BTreeSet<ProcessId>>,
    delivered: bool,
    /// Paths already relayed onward.
    forwarded: BTreeSet<Vec<ProcessId>>,
    budget_warned: bool,
}

/// True when `sets` contains `need` pairwise disjoint members. Sets are
/// tried shortest first; desk-scale inputs only.
fn has_disjoint_family(sets: &[BTreeSet<ProcessId>], need: usize) -> bool {
    if need == 0 {
        return true;
    }
    let mut refs: Vec<&BTreeSet<ProcessId>> = sets.iter().collect();
    refs.sort_by_key(|s| s.len());
    fn rec(
        refs: &[&BTreeSet<ProcessId>],
        start: usize,
        used: &BTreeSet<ProcessId>,
        left: usize,
    ) -> bool {
        if left == 0 {
            return true;
        }
        if refs.len().saturating_sub(start) < left {
            return false;
        }
        for i in start..refs.len() {
            if refs[i].iter().all(|v| !used.contains(v)) {
                let mut next = used.clone();
                next.extend(refs[i].iter().copied());
                if rec(refs, i + 1, &next, left - 1) {
                    return true;
                }
            }
        }
        false
    }
    rec(&refs, 0, &BTreeSet::new(), need)
}

/// Sink-detector state machine of one active (protocol-following) process.
pub struct SinkNode {
    id: ProcessId,
    pd: BTreeSet<ProcessId>,
    f: usize,
    params: ProtocolParams,
    role: ActiveRole,
    own_slices: Option<SliceSet>,

    /// Processes this node may address (mirrors the network's view: initial
    /// knowledge plus everything learned from senders and payloads).
    contactable: BTreeSet<ProcessId>,
    /// Reachable-set estimate: closure of claimed knowledge lists from self.
    known: BTreeSet<ProcessId>,
    /// First authenticated knowledge-list claim per process.
    pd_claims: BTreeMap<ProcessId, BTreeSet<ProcessId>>,
    discover_sent: BTreeSet<ProcessId>,
    /// Latest exchanged set per sender; own entry mirrors `known`.
    exchanges: BTreeMap<ProcessId, BTreeSet<ProcessId>>,
    /// Receivers already sent the current `known` value.
    exchange_sent_to: BTreeSet<ProcessId>,

    /// Write-once sink value (either discovered directly or adopted from
    /// f+1 matching replies).
    sink: Option<BTreeSet<ProcessId>>,
    decided: Option<SinkResult>,
    /// Direct discovery succeeded; this node serves askers.
    direct_in_sink: bool,
    /// f+1 exchanged sets differed from `known` at some point.
    non_sink_concluded: bool,

    asked: BTreeSet<ProcessId>,
    served: BTreeSet<ProcessId>,
    /// First sink view received per replier.
    values: BTreeMap<ProcessId, BTreeSet<ProcessId>>,
    rrb: BTreeMap<ProcessId, RrbPool>,
    get_sink_sent_to: BTreeSet<ProcessId>,
}

impl SinkNode {
    fn new(
        id: ProcessId,
        pd: BTreeSet<ProcessId>,
        f: usize,
        params: ProtocolParams,
        role: ActiveRole,
        own_slices: Option<SliceSet>,
    ) -> Self {
        let mut contactable = pd.clone();
        contactable.insert(id);
        let mut known = pd.clone();
        known.insert(id);
        let mut exchanges = BTreeMap::new();
        exchanges.insert(id, known.clone());
        Self {
            id,
            pd,
            f,
            params,
            role,
            own_slices,
            contactable,
            known,
            pd_claims: BTreeMap::new(),
            discover_sent: BTreeSet::new(),
            exchanges,
            exchange_sent_to: BTreeSet::new(),
            sink: None,
            decided: None,
            direct_in_sink: false,
            non_sink_concluded: false,
            asked: BTreeSet::new(),
            served: BTreeSet::new(),
            values: BTreeMap::new(),
            rrb: BTreeMap::new(),
            get_sink_sent_to: BTreeSet::new(),
        }
    }

    pub fn sink_result(&self) -> Option<&SinkResult> {
        self.decided.as_ref()
    }

    pub fn concluded_non_sink(&self) -> bool {
        self.non_sink_concluded
    }

    pub fn discovered_directly(&self) -> bool {
        self.direct_in_sink
    }

    fn msg(&self, body: MessageBody) -> ProtocolMessage {
        ProtocolMessage {
            body,
            attached_slices: self.own_slices.clone(),
        }
    }

    fn claimed_pd(&self) -> BTreeSet<ProcessId> {
        match &self.role {
            ActiveRole::LieAboutPd { fake_pd } => fake_pd.clone(),
            _ => self.pd.clone(),
        }
    }

    fn served_view(&self, asker: ProcessId) -> BTreeSet<ProcessId> {
        let truth = self.sink.clone().expect("serving requires a known sink");
        match &self.role {
            ActiveRole::EquivocateSink { targets } => {
                targets.get(&asker).cloned().unwrap_or(truth)
            }
            _ => truth,
        }
    }

    /// Recomputes the reachability closure over first claims. Growth resets
    /// the exchange fan-out.
    fn recompute_known(&mut self) -> bool {
        let mut closure: BTreeSet<ProcessId> = self.pd.clone();
        closure.insert(self.id);
        loop {
            let mut grew = false;
            for (claimer, claim) in &self.pd_claims {
                if closure.contains(claimer) {
                    for &v in claim {
                        if closure.insert(v) {
                            grew = true;
                        }
                    }
                }
            }
            if !grew {
                break;
            }
        }
        if closure != self.known {
            self.known = closure;
            self.exchanges.insert(self.id, self.known.clone());
            self.exchange_sent_to.clear();
            true
        } else {
            false
        }
    }

    /// Direct membership rule: enough exchanged sets (own included) agree
    /// with `known`. The size guard reflects the promised minimum of 2f+1
    /// correct sink members; the claim guard requires all but at most f
    /// members of `known` to have answered discovery, so the closure cannot
    /// still be growing through more than the faulty processes.
    fn evaluate_direct(&mut self, ctx: &mut Context<ProtocolMessage>) {
        if !self.direct_in_sink {
            let n = self.known.len();
            let matches = self
                .exchanges
                .iter()
                .filter(|(sender, set)| *set == &self.known && self.known.contains(sender))
                .count();
            let unresolved = self
                .known
                .iter()
                .filter(|v| **v != self.id && !self.pd_claims.contains_key(v))
                .count();
            if n > 2 * self.f && unresolved <= self.f && matches >= n - self.f {
                self.direct_in_sink = true;
                ctx.note(
                    "direct_sink",
                    serde_json::to_string(&self.known).expect("set serializes"),
                );
                if self.sink.is_none() {
                    self.sink = Some(self.known.clone());
                }
                self.decide(ctx);
                self.serve_asked(ctx);
            }
        }
        if !self.non_sink_concluded {
            let differing = self
                .exchanges
                .iter()
                .filter(|(sender, set)| **sender != self.id && *set != &self.known)
                .count();
            if differing > self.f {
                self.non_sink_concluded = true;
                ctx.note("non_sink_evidence", format!("{differing}"));
            }
        }
    }

    /// Adopts a view reported by more than f distinct senders.
    fn evaluate_values(&mut self, ctx: &mut Context<ProtocolMessage>) {
        if self.sink.is_some() {
            return;
        }
        let mut counts: BTreeMap<&BTreeSet<ProcessId>, usize> = BTreeMap::new();
        for view in self.values.values() {
            *counts.entry(view).or_default() += 1;
        }
        let winner = counts
            .into_iter()
            .find(|(_, count)| *count > self.f)
            .map(|(view, _)| view.clone());
        if let Some(view) = winner {
            self.sink = Some(view);
            self.decide(ctx);
        }
    }

    fn decide(&mut self, ctx: &mut Context<ProtocolMessage>) {
        if self.decided.is_some() {
            return;
        }
        let view = self.sink.clone().expect("decide requires a sink value");
        let result = SinkResult {
            in_sink: view.contains(&self.id),
            view,
        };
        ctx.note(
            "decide",
            serde_json::to_string(&result).expect("result serializes"),
        );
        self.decided = Some(result);
    }

    fn serve_asked(&mut self, ctx: &mut Context<ProtocolMessage>) {
        if !self.direct_in_sink {
            return;
        }
        let pending: Vec<ProcessId> = self
            .asked
            .difference(&self.served)
            .copied()
            .collect();
        for asker in pending {
            let reply = self.msg(MessageBody::SinkReply {
                view: self.served_view(asker),
            });
            ctx.send(asker, reply);
            self.served.insert(asker);
        }
    }

    /// Validates a flood copy against the channel-level sender: the path
    /// must start at the claimed origin, end at the actual sender, repeat no
    /// process, and not already contain this receiver.
    fn valid_path(&self, from: ProcessId, origin: ProcessId, path: &[ProcessId]) -> bool {
        if path.first() != Some(&origin) || path.last() != Some(&from) {
            return false;
        }
        if origin == self.id || path.contains(&self.id) {
            return false;
        }
        let distinct: BTreeSet<ProcessId> = path.iter().copied().collect();
        distinct.len() == path.len()
    }

    fn handle_get_sink(
        &mut self,
        from: ProcessId,
        origin: ProcessId,
        path: Vec<ProcessId>,
        ctx: &mut Context<ProtocolMessage>,
    ) {
        if !self.valid_path(from, origin, &path) {
            ctx.note("rrb_invalid", format!("origin {origin} via {from}"));
            return;
        }
        let evidence_budget = self.params.rrb_evidence_budget;
        let forward_budget = self.params.rrb_forward_budget;
        let pool = self.rrb.entry(origin).or_default();

        let internal: BTreeSet<ProcessId> = path[1..].iter().copied().collect();
        if !pool.internal_sets.contains(&internal) {
            if pool.internal_sets.len() < evidence_budget {
                pool.internal_sets.push(internal);
            } else if !pool.budget_warned {
                pool.budget_warned = true;
                ctx.note("rrb_budget", format!("evidence for origin {origin}"));
            }
        }

        let newly_delivered = !pool.delivered
            && has_disjoint_family(&pool.internal_sets, self.f + 1);
        if newly_delivered {
            pool.delivered = true;
        }

        // Relay each distinct incoming path once, within budget, to every
        // contact not already on it.
        let mut relayed: Option<Vec<ProcessId>> = None;
        if !pool.forwarded.contains(&path) {
            if pool.forwarded.len() < forward_budget {
                pool.forwarded.insert(path.clone());
                let mut extended = path;
                extended.push(self.id);
                relayed = Some(extended);
            } else if !pool.budget_warned {
                pool.budget_warned = true;
                ctx.note("rrb_budget", format!("forwarding for origin {origin}"));
            }
        }
        if let Some(extended) = relayed {
            let targets: Vec<ProcessId> = self
                .contactable
                .iter()
                .filter(|t| **t != self.id && !extended.contains(t))
                .copied()
                .collect();
            for t in targets {
                let fwd = self.msg(MessageBody::GetSink {
                    origin,
                    path: extended.clone(),
                });
                ctx.send(t, fwd);
            }
        }

        if newly_delivered {
            ctx.note("rrb_deliver", format!("{origin}"));
            self.asked.insert(origin);
            self.serve_asked(ctx);
        }
    }

    /// Sends pending DISCOVERs, exchange refreshes, and broadcast copies to
    /// any newly learned contacts. All fan-out is bounded: each target is
    /// discovered once, each exchange value is sent once per target, and the
    /// own broadcast goes once per contact.
    fn maintenance(&mut self, ctx: &mut Context<ProtocolMessage>) {
        let discover_targets: Vec<ProcessId> = self
            .known
            .iter()
            .filter(|v| **v != self.id && !self.discover_sent.contains(v))
            .copied()
            .filter(|v| self.contactable.contains(v))
            .collect();
        for t in discover_targets {
            ctx.send(t, self.msg(MessageBody::Discover));
            self.discover_sent.insert(t);
        }

        let exchange_targets: Vec<ProcessId> = self
            .contactable
            .iter()
            .filter(|t| **t != self.id && !self.exchange_sent_to.contains(t))
            .copied()
            .collect();
        for t in exchange_targets {
            let m = self.msg(MessageBody::KnownExchange {
                known: self.known.clone(),
            });
            ctx.send(t, m);
            self.exchange_sent_to.insert(t);
        }

        if self.sink.is_none() {
            let bcast_targets: Vec<ProcessId> = self
                .contactable
                .iter()
                .filter(|t| **t != self.id && !self.get_sink_sent_to.contains(t))
                .copied()
                .collect();
            for t in bcast_targets {
                let m = self.msg(MessageBody::GetSink {
                    origin: self.id,
                    path: vec![self.id],
                });
                ctx.send(t, m);
                self.get_sink_sent_to.insert(t);
            }
        }
    }

    fn learn_contacts(&mut self, from: ProcessId, msg: &ProtocolMessage) {
        self.contactable.insert(from);
        self.contactable.extend(msg.embedded_ids());
    }
}

impl Node<ProtocolMessage> for SinkNode {
    fn on_init(&mut self, ctx: &mut Context<ProtocolMessage>) {
        ctx.note("rrb_bcast", format!("{}", self.id));
        self.maintenance(ctx);
        // A process whose whole closure is already resolved (no outgoing
        // knowledge at all) can only be its own sink.
        self.evaluate_direct(ctx);
    }

    fn on_message(
        &mut self,
        from: ProcessId,
        msg: ProtocolMessage,
        ctx: &mut Context<ProtocolMessage>,
    ) {
        self.learn_contacts(from, &msg);
        match msg.body {
            MessageBody::Discover => {
                let reply = self.msg(MessageBody::PdReply {
                    pd: self.claimed_pd(),
                });
                ctx.send(from, reply);
            }
            MessageBody::PdReply { pd } => {
                if let std::collections::btree_map::Entry::Vacant(e) = self.pd_claims.entry(from)
                {
                    e.insert(pd);
                    self.recompute_known();
                    self.evaluate_direct(ctx);
                }
            }
            MessageBody::KnownExchange { known } => {
                // Channels reorder; a correct sender's estimate only grows,
                // so the largest set received is its most recent one.
                let newer = self
                    .exchanges
                    .get(&from)
                    .is_none_or(|old| known.len() > old.len());
                if newer {
                    self.exchanges.insert(from, known);
                    self.evaluate_direct(ctx);
                }
            }
            MessageBody::GetSink { origin, path } => {
                self.handle_get_sink(from, origin, path, ctx);
            }
            MessageBody::SinkReply { view } => {
                self.values.entry(from).or_insert(view);
                self.evaluate_values(ctx);
            }
        }
        self.maintenance(ctx);
    }
}

/// A process in a run: protocol-following (possibly with a lying or
/// equivocating role), silent, or fully scripted.
pub enum ProtocolNode {
    Active(Box<SinkNode>),
    Silent,
    Scripted {
        script: Vec<(u64, ProcessId, ProtocolMessage)>,
    },
}

impl Node<ProtocolMessage> for ProtocolNode {
    fn on_init(&mut self, ctx: &mut Context<ProtocolMessage>) {
        match self {
            ProtocolNode::Active(node) => node.on_init(ctx),
            ProtocolNode::Silent => {}
            ProtocolNode::Scripted { script } => {
                for (at, to, msg) in script.iter() {
                    ctx.send_not_before(*to, msg.clone(), *at);
                }
            }
        }
    }

    fn on_message(
        &mut self,
        from: ProcessId,
        msg: ProtocolMessage,
        ctx: &mut Context<ProtocolMessage>,
    ) {
        match self {
            ProtocolNode::Active(node) => node.on_message(from, msg, ctx),
            ProtocolNode::Silent | ProtocolNode::Scripted { .. } => {}
        }
    }
}

/// Result of simulating the sink-detector stack over a whole scenario.
#[derive(Debug)]
pub struct SinkProtocolRun {
    pub trace: Trace,
    pub end: RunEnd,
    /// Final sink-detector output per correct process; missing means the
    /// process never decided within the budget.
    pub results: BTreeMap<ProcessId, SinkResult>,
    /// Correct processes that gathered f+1 exchanged sets differing from
    /// their own reachable estimate.
    pub non_sink_concluded: BTreeSet<ProcessId>,
    /// Correct processes whose direct discovery succeeded.
    pub direct_deciders: BTreeSet<ProcessId>,
}

/// Builds a node per process from the scenario's behaviors and runs the
/// whole stack to quiescence or budget exhaustion.
pub fn run_scenario(
    scenario: &Scenario,
    params: &ProtocolParams,
) -> Result<SinkProtocolRun, SimError> {
    let slice_map = scenario.slice_map();
    let mut nodes: BTreeMap<ProcessId, ProtocolNode> = scenario
        .pd
        .iter()
        .map(|(&id, pd)| {
            let own_slices = slice_map.get(&id).cloned();
            let node = if scenario.faulty.contains(&id) {
                match scenario.behavior_of(id) {
                    AdversaryBehavior::Silent => ProtocolNode::Silent,
                    AdversaryBehavior::LieAboutPd { fake_pd } => {
                        ProtocolNode::Active(Box::new(SinkNode::new(
                            id,
                            pd.clone(),
                            scenario.f,
                            *params,
                            ActiveRole::LieAboutPd { fake_pd },
                            own_slices,
                        )))
                    }
                    AdversaryBehavior::EquivocateSink { targets } => {
                        ProtocolNode::Active(Box::new(SinkNode::new(
                            id,
                            pd.clone(),
                            scenario.f,
                            *params,
                            ActiveRole::EquivocateSink { targets },
                            own_slices,
                        )))
                    }
                    AdversaryBehavior::Arbitrary { script } => ProtocolNode::Scripted {
                        script: script
                            .into_iter()
                            .map(|s| (s.at, s.to, s.message))
                            .collect(),
                    },
                }
            } else {
                ProtocolNode::Active(Box::new(SinkNode::new(
                    id,
                    pd.clone(),
                    scenario.f,
                    *params,
                    ActiveRole::Correct,
                    own_slices,
                )))
            };
            (id, node)
        })
        .collect();

    let outcome = simnet::run(
        &mut nodes,
        &scenario.pd,
        &scenario.faulty,
        &scenario.sim_config(),
        scenario.budget,
    )?;

    let mut results = BTreeMap::new();
    let mut non_sink_concluded = BTreeSet::new();
    let mut direct_deciders = BTreeSet::new();
    for (&id, node) in &nodes {
        if scenario.faulty.contains(&id) {
            continue;
        }
        if let ProtocolNode::Active(sink_node) = node {
            if let Some(result) = sink_node.sink_result() {
                results.insert(id, result.clone());
            }
            if sink_node.concluded_non_sink() {
                non_sink_concluded.insert(id);
            }
            if sink_node.discovered_directly() {
                direct_deciders.insert(id);
            }
        }
    }

    Ok(SinkProtocolRun {
        trace: outcome.trace,
        end: outcome.end,
        results,
        non_sink_concluded,
        direct_deciders,
    })
}
