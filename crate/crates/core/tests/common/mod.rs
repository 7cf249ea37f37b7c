//! Shared corpus for the acceptance suite: generated Byzantine-safe
//! scenarios (n <= 10, f in {0,1}, at least 2f+1 correct sink members) with
//! adversary behaviors cycled over the faulty choices, plus memoized
//! protocol runs so the criteria can share one set of simulations.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::sync::OnceLock;

use fbqs_core::graph::{
    generate_k_osr, is_byzantine_safe, sink_components, FaultAssignment, KnowledgeGraph,
};
use fbqs_core::protocols::{run_scenario, MessageBody, ProtocolMessage, ProtocolParams};
use fbqs_core::scenario::{AdversaryBehavior, Scenario, ScriptedSend};
use fbqs_core::ProcessId;

pub struct CorpusEntry {
    pub label: String,
    pub scenario: Scenario,
    /// Ground-truth sink membership, recomputed from the graph.
    pub sink: BTreeSet<ProcessId>,
}

impl CorpusEntry {
    pub fn graph(&self) -> KnowledgeGraph {
        self.scenario.graph()
    }

    pub fn fault_assignment(&self) -> FaultAssignment {
        self.scenario.fault_assignment()
    }

    pub fn universe(&self) -> BTreeSet<ProcessId> {
        self.scenario.universe()
    }

    pub fn correct(&self) -> BTreeSet<ProcessId> {
        self.fault_assignment().correct(&self.universe())
    }

    pub fn correct_sink(&self) -> BTreeSet<ProcessId> {
        self.sink
            .difference(&self.scenario.faulty)
            .copied()
            .collect()
    }
}

pub fn corpus() -> &'static [CorpusEntry] {
    static CORPUS: OnceLock<Vec<CorpusEntry>> = OnceLock::new();
    CORPUS.get_or_init(build_corpus)
}

pub fn protocol_params() -> ProtocolParams {
    ProtocolParams::default()
}

/// One protocol run per corpus entry, index-aligned, computed once.
pub fn simulations() -> &'static [fbqs_core::protocols::SinkProtocolRun] {
    static SIMS: OnceLock<Vec<fbqs_core::protocols::SinkProtocolRun>> = OnceLock::new();
    SIMS.get_or_init(|| {
        corpus()
            .iter()
            .map(|e| {
                run_scenario(&e.scenario, &protocol_params())
                    .unwrap_or_else(|err| panic!("{}: simulation failed: {err}", e.label))
            })
            .collect()
    })
}

fn scenario_from_graph(name: &str, g: &KnowledgeGraph, f: usize, seed: u64) -> Scenario {
    let mut s = Scenario::empty(name, f);
    s.seed = seed;
    for v in g.vertices() {
        s.pd.insert(v, g.pd(v).clone());
    }
    s
}

fn understated_pd(pd: &BTreeSet<ProcessId>) -> BTreeSet<ProcessId> {
    let mut fake = pd.clone();
    if let Some(&max) = fake.iter().next_back() {
        fake.remove(&max);
    }
    fake
}

fn equivocation_targets(
    sink: &BTreeSet<ProcessId>,
    correct: &BTreeSet<ProcessId>,
) -> BTreeMap<ProcessId, BTreeSet<ProcessId>> {
    // Hand each correct process a different fake view: the sink with one
    // member removed, cycling over the sink.
    let members: Vec<ProcessId> = sink.iter().copied().collect();
    correct
        .iter()
        .enumerate()
        .map(|(n, &target)| {
            let mut fake = sink.clone();
            fake.remove(&members[n % members.len()]);
            (target, fake)
        })
        .collect()
}

fn forged_flood_script(
    victim: ProcessId,
    victim_pd: &BTreeSet<ProcessId>,
    forged_origin: ProcessId,
    fake_view: BTreeSet<ProcessId>,
) -> Vec<ScriptedSend> {
    // Inject relayed-looking copies that claim another process asked for the
    // sink, plus one fake reply; neither can cross any f+1 threshold alone.
    let mut script: Vec<ScriptedSend> = victim_pd
        .iter()
        .filter(|&&t| t != forged_origin)
        .map(|&t| ScriptedSend {
            at: 1,
            to: t,
            message: ProtocolMessage::from(MessageBody::GetSink {
                origin: forged_origin,
                path: vec![forged_origin, victim],
            }),
        })
        .collect();
    if let Some(&first) = victim_pd.iter().next() {
        script.push(ScriptedSend {
            at: 2,
            to: first,
            message: ProtocolMessage::from(MessageBody::SinkReply { view: fake_view }),
        });
    }
    script
}

fn push_entry(
    entries: &mut Vec<CorpusEntry>,
    label: String,
    mut scenario: Scenario,
    faulty: BTreeSet<ProcessId>,
    behavior: Option<(ProcessId, AdversaryBehavior)>,
) {
    scenario.faulty = faulty;
    if let Some((who, behavior)) = behavior {
        scenario.behaviors.insert(who, behavior);
    }
    scenario
        .validate()
        .unwrap_or_else(|err| panic!("{label}: invalid scenario: {err}"));

    let g = scenario.graph();
    let sinks = sink_components(&g);
    assert_eq!(sinks.len(), 1, "{label}: generated graph must have one sink");
    let sink = sinks.into_iter().next().unwrap();

    let fa = scenario.fault_assignment();
    assert!(
        is_byzantine_safe(&g, &fa),
        "{label}: corpus entries must be Byzantine-safe"
    );
    let correct_sink = sink.difference(&scenario.faulty).count();
    assert!(
        correct_sink > 2 * scenario.f,
        "{label}: sink must keep at least 2f+1 correct members"
    );

    entries.push(CorpusEntry {
        label,
        scenario,
        sink,
    });
}

fn build_corpus() -> Vec<CorpusEntry> {
    let mut entries = Vec::new();

    // Fault-free instances, f = 0, k = 1.
    for &(n_sink, n_nonsink) in &[(2, 0), (2, 1), (2, 2), (3, 1), (3, 2), (3, 3), (4, 2), (4, 3)]
    {
        for seed in 0..6u64 {
            let g = generate_k_osr(n_sink, n_nonsink, 1, seed).expect("f=0 generation");
            let label = format!("f0-s{n_sink}-n{n_nonsink}-seed{seed}");
            let scenario = scenario_from_graph(&label, &g, 0, seed);
            push_entry(&mut entries, label, scenario, BTreeSet::new(), None);
        }
    }

    // f = 1 instances over 3-one-sink-reducible graphs (k = 2f+1), with the
    // faulty process placed inside and outside the sink and behaviors cycled.
    for n_sink in [4usize, 5, 6] {
        for n_nonsink in 0usize..=4 {
            for seed in 0..6u64 {
                let g = generate_k_osr(n_sink, n_nonsink, 3, seed).expect("f=1 generation");
                let base_label = format!("f1-s{n_sink}-n{n_nonsink}-seed{seed}");
                let sink: BTreeSet<ProcessId> =
                    (1..=n_sink as u32).map(ProcessId).collect();
                let base = scenario_from_graph(&base_label, &g, 1, seed);

                push_entry(
                    &mut entries,
                    format!("{base_label}-faultfree"),
                    base.clone(),
                    BTreeSet::new(),
                    None,
                );

                let sink_victim = ProcessId(1);
                let correct_rest: BTreeSet<ProcessId> = g
                    .vertices()
                    .filter(|&v| v != sink_victim)
                    .collect();
                let sink_behaviors = [
                    ("silent", AdversaryBehavior::Silent),
                    (
                        "lie",
                        AdversaryBehavior::LieAboutPd {
                            fake_pd: understated_pd(g.pd(sink_victim)),
                        },
                    ),
                    (
                        "equivocate",
                        AdversaryBehavior::EquivocateSink {
                            targets: equivocation_targets(&sink, &correct_rest),
                        },
                    ),
                ];
                for (tag, behavior) in sink_behaviors {
                    push_entry(
                        &mut entries,
                        format!("{base_label}-sinkfault-{tag}"),
                        base.clone(),
                        [sink_victim].into(),
                        Some((sink_victim, behavior)),
                    );
                }

                if n_nonsink >= 1 {
                    let outside_victim = ProcessId(n_sink as u32 + 1);
                    let outside_behaviors = [
                        ("silent", AdversaryBehavior::Silent),
                        (
                            "lie",
                            AdversaryBehavior::LieAboutPd {
                                fake_pd: understated_pd(g.pd(outside_victim)),
                            },
                        ),
                    ];
                    for (tag, behavior) in outside_behaviors {
                        push_entry(
                            &mut entries,
                            format!("{base_label}-nonsinkfault-{tag}"),
                            base.clone(),
                            [outside_victim].into(),
                            Some((outside_victim, behavior)),
                        );
                    }

                    if seed == 0 {
                        // Scripted forgeries: relayed-looking copies with a
                        // fabricated origin and a fake reply.
                        let forged_origin = ProcessId(2);
                        let fake_view: BTreeSet<ProcessId> =
                            [outside_victim, forged_origin].into();
                        push_entry(
                            &mut entries,
                            format!("{base_label}-nonsinkfault-forged"),
                            base.clone(),
                            [outside_victim].into(),
                            Some((
                                outside_victim,
                                AdversaryBehavior::Arbitrary {
                                    script: forged_flood_script(
                                        outside_victim,
                                        g.pd(outside_victim),
                                        forged_origin,
                                        fake_view,
                                    ),
                                },
                            )),
                        );
                    }
                }
            }
        }
    }

    entries
}
