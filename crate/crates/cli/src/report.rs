//! Machine-readable reports: a flat list of typed records, emitted either as
//! human-readable lines or as line-delimited JSON that parses back into the
//! same value.

use std::collections::BTreeSet;
use std::fmt;

use fbqs_core::fbqs::SliceFamily;
use fbqs_core::graph::OsrViolation;
use fbqs_core::ProcessId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
pub enum ReportRecord {
    Osr {
        k: usize,
        holds: bool,
        sink: Option<BTreeSet<ProcessId>>,
        violation: Option<OsrViolation>,
    },
    ByzantineSafe {
        f: usize,
        faulty: BTreeSet<ProcessId>,
        holds: bool,
    },
    ExhaustiveSafe {
        f: usize,
        unsafe_fault_set: Option<BTreeSet<ProcessId>>,
    },
    Sinks {
        components: Vec<BTreeSet<ProcessId>>,
    },
    Slices {
        owner: ProcessId,
        family: SliceFamily,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_tolerated_local_faults: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covers_requested_f: Option<bool>,
    },
    SinkDecision {
        process: ProcessId,
        in_sink: bool,
        view: BTreeSet<ProcessId>,
    },
    Quorum {
        label: String,
        members: BTreeSet<ProcessId>,
        is_quorum: bool,
    },
    Intersection {
        a: BTreeSet<ProcessId>,
        b: BTreeSet<ProcessId>,
        size: usize,
        f: usize,
        intertwined: bool,
    },
    Cluster {
        candidate: BTreeSet<ProcessId>,
        intertwined: bool,
        available: bool,
        is_cluster: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unavailable_member: Option<ProcessId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        violating_quorum_pair: Option<(BTreeSet<ProcessId>, BTreeSet<ProcessId>)>,
    },
    MaximalClusters {
        clusters: Vec<BTreeSet<ProcessId>>,
    },
    SimEnd {
        quiescent: bool,
        steps: u64,
        decided: usize,
        undecided: Vec<ProcessId>,
    },
    Verdict {
        question: String,
        answer: bool,
    },
}

/// An ordered report; one record per line in both output forms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Report {
    pub records: Vec<ReportRecord>,
}

impl Report {
    pub fn push(&mut self, r: ReportRecord) {
        self.records.push(r);
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<ReportRecord>, _>>()?;
        Ok(Self { records })
    }
}

pub fn fmt_set(set: &BTreeSet<ProcessId>) -> String {
    let inner: Vec<String> = set.iter().map(|v| v.to_string()).collect();
    format!("{{{}}}", inner.join(","))
}

fn fmt_family(family: &SliceFamily) -> String {
    match family {
        SliceFamily::Threshold { base, size } => {
            format!("all {size}-subsets of {}", fmt_set(base))
        }
        SliceFamily::Explicit(slices) => {
            let inner: Vec<String> = slices.iter().map(fmt_set).collect();
            format!("[{}]", inner.join(", "))
        }
    }
}

fn fmt_violation(v: &OsrViolation) -> String {
    match v {
        OsrViolation::NotConnected { unreached } => {
            format!("not-connected (unreached {})", fmt_set(unreached))
        }
        OsrViolation::SinkCountNotOne { sinks } => {
            let inner: Vec<String> = sinks.iter().map(fmt_set).collect();
            format!("sink-count!=1 (sinks [{}])", inner.join(", "))
        }
        OsrViolation::SinkNotKConnected { pair, paths_found } => match pair {
            Some((a, b)) => format!(
                "sink-not-k-connected (pair {a}->{b} has {paths_found} disjoint paths)"
            ),
            None => format!("sink-not-k-connected (sink too small, max {paths_found} paths)"),
        },
        OsrViolation::InsufficientPathsToSink {
            from,
            to,
            paths_found,
        } => format!("insufficient-paths-to-sink ({from}->{to} has {paths_found})"),
    }
}

impl fmt::Display for ReportRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReportRecord::Osr {
                k,
                holds,
                sink,
                violation,
            } => {
                if *holds {
                    let sink = sink.as_ref().map(fmt_set).unwrap_or_default();
                    write!(f, "{k}-OSR: holds, sink {sink}")
                } else {
                    let why = violation
                        .as_ref()
                        .map(fmt_violation)
                        .unwrap_or_else(|| "unknown".into());
                    write!(f, "{k}-OSR: VIOLATED, {why}")
                }
            }
            ReportRecord::ByzantineSafe { f: bound, faulty, holds } => write!(
                f,
                "byzantine-safe for F={} (f={bound}): {}",
                fmt_set(faulty),
                if *holds { "yes" } else { "NO" }
            ),
            ReportRecord::ExhaustiveSafe {
                f: bound,
                unsafe_fault_set,
            } => match unsafe_fault_set {
                None => write!(f, "byzantine-safe for every F with |F| <= {bound}: yes"),
                Some(set) => write!(
                    f,
                    "byzantine-safe for every F with |F| <= {bound}: NO, counterexample F={}",
                    fmt_set(set)
                ),
            },
            ReportRecord::Sinks { components } => {
                let inner: Vec<String> = components.iter().map(fmt_set).collect();
                write!(f, "sink components: [{}]", inner.join(", "))
            }
            ReportRecord::Slices {
                owner,
                family,
                max_tolerated_local_faults,
                covers_requested_f,
            } => {
                write!(f, "slices of {owner}: {}", fmt_family(family))?;
                if let Some(t) = max_tolerated_local_faults {
                    write!(f, " (tolerates {t} local faults")?;
                    if let Some(ok) = covers_requested_f {
                        write!(f, ", covers f: {}", if *ok { "yes" } else { "NO" })?;
                    }
                    write!(f, ")")?;
                }
                Ok(())
            }
            ReportRecord::SinkDecision {
                process,
                in_sink,
                view,
            } => write!(
                f,
                "process {process}: <{}, {}>",
                if *in_sink { "true" } else { "false" },
                fmt_set(view)
            ),
            ReportRecord::Quorum {
                label,
                members,
                is_quorum,
            } => write!(
                f,
                "{label} = {}: is_quorum {}",
                fmt_set(members),
                if *is_quorum { "yes" } else { "NO" }
            ),
            ReportRecord::Intersection {
                a,
                b,
                size,
                f: bound,
                intertwined,
            } => write!(
                f,
                "|{} \u{2229} {}| = {size} (needs > {bound}): {}",
                fmt_set(a),
                fmt_set(b),
                if *intertwined {
                    "intertwined"
                } else {
                    "quorum intersection VIOLATED"
                }
            ),
            ReportRecord::Cluster {
                candidate,
                intertwined,
                available,
                is_cluster,
                unavailable_member,
                violating_quorum_pair,
            } => {
                write!(
                    f,
                    "cluster check {}: intertwined {}, available {}, consensus cluster {}",
                    fmt_set(candidate),
                    if *intertwined { "yes" } else { "NO" },
                    if *available { "yes" } else { "NO" },
                    if *is_cluster { "yes" } else { "NO" }
                )?;
                if let Some(m) = unavailable_member {
                    write!(f, " (no all-correct quorum inside for {m})")?;
                }
                if let Some((a, b)) = violating_quorum_pair {
                    write!(f, " (violating pair {} / {})", fmt_set(a), fmt_set(b))?;
                }
                Ok(())
            }
            ReportRecord::MaximalClusters { clusters } => {
                let inner: Vec<String> = clusters.iter().map(fmt_set).collect();
                write!(f, "maximal consensus clusters: [{}]", inner.join(", "))
            }
            ReportRecord::SimEnd {
                quiescent,
                steps,
                decided,
                undecided,
            } => {
                write!(
                    f,
                    "simulation: {} after {steps} steps, {decided} processes decided",
                    if *quiescent { "quiescent" } else { "BUDGET EXCEEDED" }
                )?;
                if !undecided.is_empty() {
                    let inner: Vec<String> = undecided.iter().map(|v| v.to_string()).collect();
                    write!(f, ", undecided: [{}]", inner.join(","))?;
                }
                Ok(())
            }
            ReportRecord::Verdict { question, answer } => {
                write!(f, "{question}: {}", if *answer { "yes" } else { "NO" })
            }
        }
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.records {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}
