//! Slice construction strategies.
//!
//! Two builders are provided. [`local_slices`] uses nothing but a process's
//! own knowledge list and declares all of its (|pd|-1)-subsets; it is simple
//! but cannot guarantee quorum intersection across a directed knowledge
//! graph. [`sd_slices`] uses a sink detector's view of the sink component
//! and sizes slices so that all quorums are forced through a majority-plus-f
//! core of the sink, which restores intersection and availability when the
//! sink has at least 2f+1 correct members.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fbqs::{FbqsError, SliceSet};
use crate::graph::{sink_components, KnowledgeGraph, ProcessId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SliceError {
    #[error("process {0} has an empty knowledge list and cannot build slices")]
    NoNeighbors(ProcessId),
    #[error("sink view of {len} processes is too small, need at least {min}")]
    ViewTooSmall { len: usize, min: usize },
    #[error("the graph has {0} sink components, expected exactly one")]
    AmbiguousSink(usize),
    #[error(transparent)]
    Fbqs(#[from] FbqsError),
}

/// What a sink detector reported to one process: the membership flag and the
/// returned view of the sink component.
///
/// For an in-sink report the view is the whole sink; for a non-sink report
/// the view is a subset of the sink containing at least f+1 correct members.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkResult {
    pub in_sink: bool,
    pub view: BTreeSet<ProcessId>,
}

/// Slices built from local knowledge only, plus the fault-coverage metadata
/// the construction admits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalSlices {
    pub slices: SliceSet,
    /// Largest number of faulty neighbors for which an all-correct slice is
    /// still guaranteed: |pd| minus the slice size.
    pub max_tolerated_local_faults: usize,
    /// The fault bound the caller asked for.
    pub requested_f: usize,
    /// True when the construction guarantees an all-correct slice for every
    /// fault pattern of size `requested_f` inside `pd`.
    pub covers_requested_f: bool,
}

/// Declares all (|pd|-1)-subsets of `pd` as the slices of `owner`, stored as
/// a threshold family.
///
/// For a single-neighbor process the (|pd|-1)-subset rule would produce the
/// empty slice, so the whole list becomes the only slice; such a process
/// tolerates no local fault, which the metadata records.
pub fn local_slices(
    owner: ProcessId,
    pd: &BTreeSet<ProcessId>,
    f: usize,
) -> Result<LocalSlices, SliceError> {
    if pd.is_empty() {
        return Err(SliceError::NoNeighbors(owner));
    }
    let size = (pd.len() - 1).max(1);
    let slices = SliceSet::threshold(owner, pd.clone(), size)?;
    let max_tolerated = pd.len() - size;
    Ok(LocalSlices {
        slices,
        max_tolerated_local_faults: max_tolerated,
        requested_f: f,
        covers_requested_f: f <= max_tolerated,
    })
}

/// Slice size used by sink members: ceil((|view| + f + 1) / 2).
pub fn sink_slice_size(view_len: usize, f: usize) -> usize {
    (view_len + f + 1).div_ceil(2)
}

/// Builds slices from a sink detector result: sink members declare all
/// ceil((|V|+f+1)/2)-subsets of the sink, everyone else declares all
/// (f+1)-subsets of its view.
pub fn sd_slices(
    owner: ProcessId,
    sink_result: &SinkResult,
    f: usize,
) -> Result<SliceSet, SliceError> {
    let view = &sink_result.view;
    if view.len() < f + 1 {
        return Err(SliceError::ViewTooSmall {
            len: view.len(),
            min: f + 1,
        });
    }
    let size = if sink_result.in_sink {
        sink_slice_size(view.len(), f)
    } else {
        f + 1
    };
    Ok(SliceSet::threshold(owner, view.clone(), size)?)
}

/// The sink result an ideal detector would hand to `i`, computed directly
/// from the knowledge graph. Requires the condensation to have exactly one
/// sink.
pub fn ground_truth_sink_result(
    g: &KnowledgeGraph,
    i: ProcessId,
) -> Result<SinkResult, SliceError> {
    let sinks = sink_components(g);
    if sinks.len() != 1 {
        return Err(SliceError::AmbiguousSink(sinks.len()));
    }
    let sink = sinks.into_iter().next().expect("one sink");
    Ok(SinkResult {
        in_sink: sink.contains(&i),
        view: sink,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbqs::SliceFamily;

    fn pid(id: u32) -> ProcessId {
        ProcessId(id)
    }

    fn pids(ids: &[u32]) -> BTreeSet<ProcessId> {
        ids.iter().copied().map(ProcessId).collect()
    }

    #[test]
    fn local_slices_drop_one_neighbor() {
        let built = local_slices(pid(5), &pids(&[1, 6, 7]), 1).unwrap();
        assert_eq!(
            built.slices.family,
            SliceFamily::Threshold {
                base: pids(&[1, 6, 7]),
                size: 2
            }
        );
        let expanded: BTreeSet<BTreeSet<ProcessId>> =
            built.slices.expand(100).unwrap().into_iter().collect();
        assert_eq!(
            expanded,
            [pids(&[1, 6]), pids(&[1, 7]), pids(&[6, 7])].into_iter().collect()
        );
        assert_eq!(built.max_tolerated_local_faults, 1);
        assert!(built.covers_requested_f);
    }

    #[test]
    fn local_slices_single_neighbor_degenerates() {
        let built = local_slices(pid(2), &pids(&[4]), 0).unwrap();
        assert_eq!(
            built.slices.family,
            SliceFamily::Threshold {
                base: pids(&[4]),
                size: 1
            }
        );
        assert_eq!(built.max_tolerated_local_faults, 0);
        assert!(built.covers_requested_f);

        // Same neighborhood with f = 1: construction succeeds but cannot
        // guarantee an all-correct slice.
        let built = local_slices(pid(2), &pids(&[4]), 1).unwrap();
        assert!(!built.covers_requested_f);
    }

    #[test]
    fn local_slices_tight_neighborhood_is_flagged() {
        // |pd| = f + 1 leaves slice size f: any single slice can be fully
        // faulty, so coverage of f = 1 local faults fails.
        let built = local_slices(pid(9), &pids(&[1, 2]), 1).unwrap();
        assert_eq!(built.max_tolerated_local_faults, 1);
        assert!(built.covers_requested_f);
        let built = local_slices(pid(9), &pids(&[1, 2, 3]), 2).unwrap();
        assert_eq!(built.max_tolerated_local_faults, 1);
        assert!(!built.covers_requested_f);
    }

    #[test]
    fn local_slices_empty_neighborhood_is_an_error() {
        assert_eq!(
            local_slices(pid(1), &BTreeSet::new(), 0),
            Err(SliceError::NoNeighbors(pid(1)))
        );
    }

    #[test]
    fn every_local_slice_stays_inside_pd() {
        for f in 0..3 {
            for n in 1..6u32 {
                let pd: BTreeSet<ProcessId> = (10..10 + n).map(ProcessId).collect();
                let built = local_slices(pid(1), &pd, f).unwrap();
                for slice in built.slices.expand(1000).unwrap() {
                    assert!(slice.is_subset(&pd));
                }
            }
        }
    }

    #[test]
    fn sink_member_slice_size() {
        let r = SinkResult {
            in_sink: true,
            view: pids(&[1, 2, 3, 4]),
        };
        let s = sd_slices(pid(1), &r, 1).unwrap();
        assert_eq!(
            s.family,
            SliceFamily::Threshold {
                base: pids(&[1, 2, 3, 4]),
                size: 3
            }
        );
    }

    #[test]
    fn non_sink_slice_size_is_f_plus_one() {
        let r = SinkResult {
            in_sink: false,
            view: pids(&[1, 2, 3]),
        };
        let s = sd_slices(pid(9), &r, 1).unwrap();
        assert_eq!(
            s.family,
            SliceFamily::Threshold {
                base: pids(&[1, 2, 3]),
                size: 2
            }
        );
    }

    #[test]
    fn sink_quad_view() {
        let r = SinkResult {
            in_sink: true,
            view: pids(&[5, 6, 7, 8]),
        };
        let s = sd_slices(pid(5), &r, 1).unwrap();
        assert_eq!(
            s.family,
            SliceFamily::Threshold {
                base: pids(&[5, 6, 7, 8]),
                size: 3
            }
        );
    }

    #[test]
    fn view_too_small_is_an_error() {
        let r = SinkResult {
            in_sink: false,
            view: pids(&[1]),
        };
        assert_eq!(
            sd_slices(pid(9), &r, 1),
            Err(SliceError::ViewTooSmall { len: 1, min: 2 })
        );
    }

    #[test]
    fn ceiling_formula() {
        assert_eq!(sink_slice_size(4, 1), 3);
        assert_eq!(sink_slice_size(5, 1), 4);
        assert_eq!(sink_slice_size(3, 0), 2);
        assert_eq!(sink_slice_size(1, 0), 1);
        assert_eq!(sink_slice_size(10, 3), 7);
    }

    #[test]
    fn slice_avoidance_boundary() {
        // Some slice avoids every blocked set B with |B| <= f exactly when
        // |view| >= size + f. Exhaustive over small views.
        for view_n in 1..=10usize {
            let view: BTreeSet<ProcessId> = (1..=view_n as u32).map(ProcessId).collect();
            for size in 1..=view_n {
                let slices = SliceSet::threshold(pid(0), view.clone(), size).unwrap();
                for f in 0..=view_n {
                    let ids: Vec<ProcessId> = view.iter().copied().collect();
                    let all_avoidable = (0u64..1 << view_n)
                        .map(|m| -> BTreeSet<ProcessId> {
                            ids.iter()
                                .enumerate()
                                .filter(|(k, _)| m >> k & 1 == 1)
                                .map(|(_, &v)| v)
                                .collect()
                        })
                        .filter(|b| b.len() <= f)
                        .all(|b| slices.has_slice_avoiding(&b));
                    assert_eq!(all_avoidable, view_n >= size + f, "n={view_n} s={size} f={f}");
                }
            }
        }
    }

    #[test]
    fn quorum_intersection_holds_up_to_two_faults() {
        // Detector-built slices keep all quorums of correct processes
        // pairwise intersecting in more than f members, f up to 2, checked
        // by exhaustive quorum enumeration on generated graphs.
        use crate::fbqs::{quorums_of, EnumLimits, SliceMap};
        use crate::graph::{generate_k_osr, FaultAssignment};

        for (f, n_sink, n_nonsink) in [(2usize, 6usize, 2usize), (2, 7, 3), (1, 4, 4)] {
            let k = 2 * f + 1;
            let g = generate_k_osr(n_sink, n_nonsink, k, 3).unwrap();
            let universe = g.vertex_set();
            // Up to f faulty inside the sink.
            let faulty: BTreeSet<ProcessId> = (1..=f as u32).map(ProcessId).collect();
            let fa = FaultAssignment::new(f, faulty.clone()).unwrap();
            let correct = fa.correct(&universe);

            let mut slices = SliceMap::new();
            for &id in &correct {
                let truth = ground_truth_sink_result(&g, id).unwrap();
                slices.insert(id, sd_slices(id, &truth, f).unwrap());
            }

            let families: Vec<Vec<BTreeSet<ProcessId>>> = correct
                .iter()
                .map(|&i| {
                    quorums_of(i, &slices, &universe, true, &EnumLimits::default())
                        .unwrap()
                        .into_iter()
                        .map(|q| q.members)
                        .collect()
                })
                .collect();
            for (a, fam_a) in families.iter().enumerate() {
                for fam_b in &families[a..] {
                    for qa in fam_a {
                        for qb in fam_b {
                            assert!(
                                qa.intersection(qb).count() > f,
                                "f={f}: {qa:?} vs {qb:?}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn ground_truth_from_graph() {
        let mut g = KnowledgeGraph::new();
        g.add_edge(pid(1), pid(2)).unwrap();
        g.add_edge(pid(2), pid(3)).unwrap();
        g.add_edge(pid(3), pid(2)).unwrap();
        let r = ground_truth_sink_result(&g, pid(2)).unwrap();
        assert!(r.in_sink);
        assert_eq!(r.view, pids(&[2, 3]));
        let r = ground_truth_sink_result(&g, pid(1)).unwrap();
        assert!(!r.in_sink);
        assert_eq!(r.view, pids(&[2, 3]));
    }

    #[test]
    fn ground_truth_requires_single_sink() {
        let mut g = KnowledgeGraph::new();
        g.add_edge(pid(1), pid(2)).unwrap();
        g.add_edge(pid(1), pid(3)).unwrap();
        assert_eq!(
            ground_truth_sink_result(&g, pid(1)),
            Err(SliceError::AmbiguousSink(2))
        );
    }
}
