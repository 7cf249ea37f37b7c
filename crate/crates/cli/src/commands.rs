//! Command implementations. Each returns the report to print plus whether
//! the checked property holds, which the binary maps to the exit code.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context};
use fbqs_core::fbqs::{
    is_consensus_cluster, is_quorum, maximal_consensus_clusters, EnumLimits, SliceMap,
};
use fbqs_core::graph::{
    byzantine_safe_report, check_k_osr, first_unsafe_fault_set, generate_k_osr, sink_components,
};
use fbqs_core::protocols::{run_scenario, ProtocolParams};
use fbqs_core::scenario::Scenario;
use fbqs_core::simnet::RunEnd;
use fbqs_core::slices::{ground_truth_sink_result, local_slices, sd_slices};
use fbqs_core::ProcessId;

use crate::report::{Report, ReportRecord};

pub struct CommandOutput {
    pub report: Report,
    pub holds: bool,
    /// Raw trace bytes to write when the caller asked for a trace file.
    pub trace: Option<String>,
}

impl CommandOutput {
    fn new(report: Report, holds: bool) -> Self {
        Self {
            report,
            holds,
            trace: None,
        }
    }
}

pub fn load_scenario(path: &Path) -> anyhow::Result<Scenario> {
    Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

/// `check-osr`: k-OSR check on the scenario graph plus Byzantine-safety for
/// the scenario's faulty set; optionally exhaustive over all faulty sets.
pub fn cmd_check_osr(
    scenario: &Scenario,
    k: usize,
    exhaustive: bool,
) -> anyhow::Result<CommandOutput> {
    let g = scenario.graph();
    let mut report = Report::default();

    let osr = check_k_osr(&g, k);
    report.push(ReportRecord::Osr {
        k,
        holds: osr.holds,
        sink: osr.sink.clone(),
        violation: osr.violation.clone(),
    });

    let fa = scenario.fault_assignment();
    let safe = byzantine_safe_report(&g, &fa);
    report.push(ReportRecord::ByzantineSafe {
        f: scenario.f,
        faulty: scenario.faulty.clone(),
        holds: safe.holds,
    });

    if exhaustive {
        report.push(ReportRecord::ExhaustiveSafe {
            f: scenario.f,
            unsafe_fault_set: first_unsafe_fault_set(&g, scenario.f),
        });
    }

    Ok(CommandOutput::new(report, osr.holds))
}

/// `sink`: list the sink components of the condensation.
pub fn cmd_sink(scenario: &Scenario) -> anyhow::Result<CommandOutput> {
    let components = sink_components(&scenario.graph());
    let holds = components.len() == 1;
    let mut report = Report::default();
    report.push(ReportRecord::Sinks {
        components: components.clone(),
    });
    report.push(ReportRecord::Verdict {
        question: "exactly one sink component".into(),
        answer: holds,
    });
    Ok(CommandOutput::new(report, holds))
}

/// `local-slices`: build knowledge-list-only slices for every process.
pub fn cmd_local_slices(scenario: &Scenario) -> anyhow::Result<CommandOutput> {
    let mut report = Report::default();
    for (&owner, pd) in &scenario.pd {
        let built = local_slices(owner, pd, scenario.f)
            .with_context(|| format!("building local slices for {owner}"))?;
        report.push(ReportRecord::Slices {
            owner,
            family: built.slices.family,
            max_tolerated_local_faults: Some(built.max_tolerated_local_faults),
            covers_requested_f: Some(built.covers_requested_f),
        });
    }
    Ok(CommandOutput::new(report, true))
}

/// `sd-slices`: build slices from graph-derived ground-truth sink results
/// for every correct process.
pub fn cmd_sd_slices(scenario: &Scenario) -> anyhow::Result<CommandOutput> {
    let g = scenario.graph();
    let mut report = Report::default();
    for &owner in scenario.pd.keys() {
        if scenario.faulty.contains(&owner) {
            continue;
        }
        let truth = ground_truth_sink_result(&g, owner)?;
        report.push(ReportRecord::SinkDecision {
            process: owner,
            in_sink: truth.in_sink,
            view: truth.view.clone(),
        });
        let built = sd_slices(owner, &truth, scenario.f)
            .with_context(|| format!("building sink-detector slices for {owner}"))?;
        report.push(ReportRecord::Slices {
            owner,
            family: built.family,
            max_tolerated_local_faults: None,
            covers_requested_f: None,
        });
    }
    Ok(CommandOutput::new(report, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SliceSource {
    /// Explicit declarations when the scenario has them, else sink-detector.
    #[default]
    Auto,
    Explicit,
    Local,
    Sd,
}

fn build_slice_map(scenario: &Scenario, source: SliceSource) -> anyhow::Result<SliceMap> {
    let source = match source {
        SliceSource::Auto if !scenario.slices.is_empty() => SliceSource::Explicit,
        SliceSource::Auto => SliceSource::Sd,
        other => other,
    };
    match source {
        SliceSource::Explicit => {
            if scenario.slices.is_empty() {
                bail!("scenario declares no explicit slices");
            }
            Ok(scenario.slice_map())
        }
        SliceSource::Local => {
            let mut map = SliceMap::new();
            for (&owner, pd) in &scenario.pd {
                map.insert(owner, local_slices(owner, pd, scenario.f)?.slices);
            }
            Ok(map)
        }
        SliceSource::Sd => {
            let g = scenario.graph();
            let mut map = SliceMap::new();
            for &owner in scenario.pd.keys() {
                if scenario.faulty.contains(&owner) {
                    continue;
                }
                let truth = ground_truth_sink_result(&g, owner)?;
                map.insert(owner, sd_slices(owner, &truth, scenario.f)?);
            }
            Ok(map)
        }
        SliceSource::Auto => unreachable!("resolved above"),
    }
}

/// `verify-cluster`: check one candidate set, or enumerate maximal clusters
/// and test whether the correct processes form exactly one cluster.
pub fn cmd_verify_cluster(
    scenario: &Scenario,
    candidate: Option<&BTreeSet<ProcessId>>,
    source: SliceSource,
) -> anyhow::Result<CommandOutput> {
    let slices = build_slice_map(scenario, source)?;
    let universe = scenario.universe();
    let fa = scenario.fault_assignment();
    let limits = EnumLimits::default();
    let mut report = Report::default();

    if let Some(candidate) = candidate {
        let check = is_consensus_cluster(candidate, &slices, &universe, &fa, &limits)?;
        let holds = check.is_cluster;
        report.push(cluster_record(&check));
        return Ok(CommandOutput::new(report, holds));
    }

    let clusters = maximal_consensus_clusters(&slices, &universe, &fa, &limits)?;
    let correct = fa.correct(&universe);
    let holds = clusters.len() == 1 && clusters[0] == correct;
    report.push(ReportRecord::MaximalClusters {
        clusters: clusters.clone(),
    });
    report.push(ReportRecord::Verdict {
        question: "single maximal consensus cluster = W".into(),
        answer: holds,
    });
    Ok(CommandOutput::new(report, holds))
}

fn cluster_record(check: &fbqs_core::fbqs::ClusterReport) -> ReportRecord {
    ReportRecord::Cluster {
        candidate: check.candidate.clone(),
        intertwined: check.intertwined,
        available: check.available,
        is_cluster: check.is_cluster,
        unavailable_member: check.unavailable_member,
        violating_quorum_pair: check
            .violating_quorum_pair
            .as_ref()
            .map(|(a, b)| (a.members.clone(), b.members.clone())),
    }
}

/// `simulate`: run the sink-detector stack, build slices from every correct
/// process's decision, and verify the resulting cluster structure.
pub fn cmd_simulate(
    scenario: &Scenario,
    seed: Option<u64>,
    budget: Option<u64>,
) -> anyhow::Result<CommandOutput> {
    let mut scenario = scenario.clone();
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if let Some(budget) = budget {
        scenario.budget = budget;
    }
    scenario.validate()?;

    let run = run_scenario(&scenario, &ProtocolParams::default())?;
    let mut report = Report::default();

    let correct = scenario
        .fault_assignment()
        .correct(&scenario.universe());
    let undecided: Vec<ProcessId> = correct
        .iter()
        .filter(|id| !run.results.contains_key(id))
        .copied()
        .collect();
    report.push(ReportRecord::SimEnd {
        quiescent: run.end == RunEnd::Quiescent,
        steps: run.trace.deliveries().count() as u64,
        decided: run.results.len(),
        undecided: undecided.clone(),
    });
    for (&id, result) in &run.results {
        report.push(ReportRecord::SinkDecision {
            process: id,
            in_sink: result.in_sink,
            view: result.view.clone(),
        });
    }

    let mut holds = run.end == RunEnd::Quiescent && undecided.is_empty();
    if holds {
        let mut slices = SliceMap::new();
        for (&id, result) in &run.results {
            let built = sd_slices(id, result, scenario.f)
                .with_context(|| format!("building slices from the decision of {id}"))?;
            report.push(ReportRecord::Slices {
                owner: id,
                family: built.family.clone(),
                max_tolerated_local_faults: None,
                covers_requested_f: None,
            });
            slices.insert(id, built);
        }
        let universe = scenario.universe();
        let fa = scenario.fault_assignment();
        let clusters =
            maximal_consensus_clusters(&slices, &universe, &fa, &EnumLimits::default())?;
        let single = clusters.len() == 1 && clusters[0] == correct;
        report.push(ReportRecord::MaximalClusters {
            clusters: clusters.clone(),
        });
        holds = single;
    }
    report.push(ReportRecord::Verdict {
        question: "single maximal consensus cluster = W".into(),
        answer: holds,
    });

    let mut out = CommandOutput::new(report, holds);
    out.trace = Some(run.trace.to_jsonl());
    Ok(out)
}

/// `repro fig2`: locally built slices admit the two disjoint quorums.
pub fn cmd_repro_fig2() -> anyhow::Result<CommandOutput> {
    let scenario = fbqs_core::scenario::fig2();
    let mut slices = SliceMap::new();
    for (&owner, pd) in &scenario.pd {
        slices.insert(owner, local_slices(owner, pd, scenario.f)?.slices);
    }

    let q1: BTreeSet<ProcessId> = [5, 6, 7].map(ProcessId).into();
    let q2: BTreeSet<ProcessId> = [1, 2, 3, 4].map(ProcessId).into();
    let q1_ok = is_quorum(&q1, &slices)?;
    let q2_ok = is_quorum(&q2, &slices)?;
    let intersection: BTreeSet<ProcessId> = q1.intersection(&q2).copied().collect();
    let violated = q1_ok && q2_ok && intersection.len() <= scenario.f;

    let mut report = Report::default();
    report.push(ReportRecord::Quorum {
        label: "Q1".into(),
        members: q1.clone(),
        is_quorum: q1_ok,
    });
    report.push(ReportRecord::Quorum {
        label: "Q2".into(),
        members: q2.clone(),
        is_quorum: q2_ok,
    });
    report.push(ReportRecord::Intersection {
        a: q1,
        b: q2,
        size: intersection.len(),
        f: scenario.f,
        intertwined: !violated,
    });
    report.push(ReportRecord::Verdict {
        question: "quorum intersection violated by locally built slices".into(),
        answer: violated,
    });
    Ok(CommandOutput::new(report, violated))
}

/// `repro fig1`: the declared slices yield consensus cluster {5,6,7} and the
/// single maximal cluster {1,...,7}.
pub fn cmd_repro_fig1() -> anyhow::Result<CommandOutput> {
    let scenario = fbqs_core::scenario::fig1();
    let slices = scenario.slice_map();
    let universe = scenario.universe();
    let fa = scenario.fault_assignment();
    let limits = EnumLimits::default();
    let mut report = Report::default();

    let trio: BTreeSet<ProcessId> = [5, 6, 7].map(ProcessId).into();
    let trio_check = is_consensus_cluster(&trio, &slices, &universe, &fa, &limits)?;
    report.push(cluster_record(&trio_check));

    let all = fa.correct(&universe);
    let all_check = is_consensus_cluster(&all, &slices, &universe, &fa, &limits)?;
    report.push(cluster_record(&all_check));

    let clusters = maximal_consensus_clusters(&slices, &universe, &fa, &limits)?;
    report.push(ReportRecord::MaximalClusters {
        clusters: clusters.clone(),
    });

    let holds =
        trio_check.is_cluster && all_check.is_cluster && clusters == vec![all.clone()];
    report.push(ReportRecord::Verdict {
        question: "single maximal consensus cluster = {1,...,7}".into(),
        answer: holds,
    });
    Ok(CommandOutput::new(report, holds))
}

/// `gen`: emit a scenario with a freshly generated k-OSR graph.
pub fn cmd_gen(
    n_sink: usize,
    n_nonsink: usize,
    k: usize,
    seed: u64,
    f: Option<usize>,
) -> anyhow::Result<String> {
    let g = generate_k_osr(n_sink, n_nonsink, k, seed)?;
    let f = f.unwrap_or_else(|| k.saturating_sub(1));
    let mut scenario = Scenario::empty(
        &format!("gen-s{n_sink}-n{n_nonsink}-k{k}-seed{seed}"),
        f,
    );
    scenario.seed = seed;
    for v in g.vertices() {
        scenario.pd.insert(v, g.pd(v).clone());
    }
    scenario.validate()?;
    Ok(scenario.to_toml_string()?)
}
