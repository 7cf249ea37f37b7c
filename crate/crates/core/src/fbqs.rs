//! Federated Byzantine quorum system machinery: quorum slices, quorum
//! recognition and enumeration, and the intertwined / consensus-cluster /
//! maximal-cluster checks.
//!
//! A quorum is a set in which every member has at least one of its declared
//! slices fully contained; a quorum *of* process `i` additionally contains
//! `i`. Threshold slice families ("all s-subsets of a base set") are stored
//! symbolically and evaluated arithmetically, never expanded, so desk-scale
//! enumeration stays polynomial in everything except the universe size.
//!
//! Enumeration is exponential in the universe by nature. All enumerating
//! operations take explicit [`EnumLimits`] and fail loudly when the universe
//! exceeds them; nothing is ever silently truncated.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{FaultAssignment, ProcessId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FbqsError {
    #[error("no slices declared for process {0}")]
    MissingSlices(ProcessId),
    #[error("universe of {size} processes exceeds the enumeration bound {bound}")]
    UniverseTooLarge { size: usize, bound: usize },
    #[error("process {owner} declares an empty slice")]
    EmptySlice { owner: ProcessId },
    #[error("process {owner} declares threshold {size} over a base of {base_len}")]
    BadThreshold {
        owner: ProcessId,
        size: usize,
        base_len: usize,
    },
    #[error("expanding the slice family would produce more than {bound} slices")]
    ExpansionTooLarge { bound: usize },
}

/// A process's quorum slices: either an explicit family of sets or the
/// family of all `size`-subsets of `base`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SliceFamily {
    Threshold {
        base: BTreeSet<ProcessId>,
        size: usize,
    },
    Explicit(BTreeSet<BTreeSet<ProcessId>>),
}

/// The slices declared by one process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSet {
    pub owner: ProcessId,
    pub family: SliceFamily,
}

impl SliceSet {
    pub fn explicit<I, S>(owner: ProcessId, slices: I) -> Result<Self, FbqsError>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = ProcessId>,
    {
        let family: BTreeSet<BTreeSet<ProcessId>> = slices
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();
        let out = Self {
            owner,
            family: SliceFamily::Explicit(family),
        };
        out.validate()?;
        Ok(out)
    }

    pub fn threshold(
        owner: ProcessId,
        base: BTreeSet<ProcessId>,
        size: usize,
    ) -> Result<Self, FbqsError> {
        let out = Self {
            owner,
            family: SliceFamily::Threshold { base, size },
        };
        out.validate()?;
        Ok(out)
    }

    /// Checks the structural invariants (used on deserialized declarations).
    pub fn validate(&self) -> Result<(), FbqsError> {
        match &self.family {
            SliceFamily::Explicit(slices) => {
                if slices.iter().any(BTreeSet::is_empty) {
                    return Err(FbqsError::EmptySlice { owner: self.owner });
                }
            }
            SliceFamily::Threshold { base, size } => {
                if *size < 1 || *size > base.len() {
                    return Err(FbqsError::BadThreshold {
                        owner: self.owner,
                        size: *size,
                        base_len: base.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// True when some slice is contained in `q`.
    pub fn has_slice_within(&self, q: &BTreeSet<ProcessId>) -> bool {
        match &self.family {
            SliceFamily::Explicit(slices) => slices.iter().any(|s| s.is_subset(q)),
            SliceFamily::Threshold { base, size } => base.intersection(q).count() >= *size,
        }
    }

    /// True when some slice avoids every member of `blocked`.
    pub fn has_slice_avoiding(&self, blocked: &BTreeSet<ProcessId>) -> bool {
        match &self.family {
            SliceFamily::Explicit(slices) => slices.iter().any(|s| s.is_disjoint(blocked)),
            SliceFamily::Threshold { base, size } => base.difference(blocked).count() >= *size,
        }
    }

    /// Union of all slices: the processes this owner trusts.
    pub fn trusted(&self) -> BTreeSet<ProcessId> {
        match &self.family {
            SliceFamily::Explicit(slices) => slices.iter().flatten().copied().collect(),
            SliceFamily::Threshold { base, .. } => base.clone(),
        }
    }

    /// Materializes the family as an explicit list of slices, refusing to
    /// produce more than `bound` of them.
    pub fn expand(&self, bound: usize) -> Result<Vec<BTreeSet<ProcessId>>, FbqsError> {
        match &self.family {
            SliceFamily::Explicit(slices) => {
                if slices.len() > bound {
                    return Err(FbqsError::ExpansionTooLarge { bound });
                }
                Ok(slices.iter().cloned().collect())
            }
            SliceFamily::Threshold { base, size } => {
                let items: Vec<ProcessId> = base.iter().copied().collect();
                let mut out = Vec::new();
                let mut current: Vec<ProcessId> = Vec::with_capacity(*size);
                expand_rec(&items, *size, 0, &mut current, &mut out, bound)?;
                Ok(out)
            }
        }
    }
}

fn expand_rec(
    items: &[ProcessId],
    size: usize,
    start: usize,
    current: &mut Vec<ProcessId>,
    out: &mut Vec<BTreeSet<ProcessId>>,
    bound: usize,
) -> Result<(), FbqsError> {
    if current.len() == size {
        if out.len() == bound {
            return Err(FbqsError::ExpansionTooLarge { bound });
        }
        out.push(current.iter().copied().collect());
        return Ok(());
    }
    for i in start..items.len() {
        current.push(items[i]);
        expand_rec(items, size, i + 1, current, out, bound)?;
        current.pop();
    }
    Ok(())
}

pub type SliceMap = BTreeMap<ProcessId, SliceSet>;

/// A recognized quorum.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Quorum {
    pub members: BTreeSet<ProcessId>,
}

impl fmt::Display for Quorum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, m) in self.members.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, "}}")
    }
}

/// Bounds on the exponential enumerations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumLimits {
    /// Maximum universe size for quorum enumeration.
    pub universe: usize,
    /// Maximum number of correct processes for cluster enumeration.
    pub cluster: usize,
}

impl Default for EnumLimits {
    fn default() -> Self {
        Self {
            universe: 20,
            cluster: 14,
        }
    }
}

/// Which intertwined definition to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntertwinedMode {
    /// Quorum intersections must exceed f members (threshold form).
    #[default]
    Threshold,
    /// Quorum intersections must contain a correct process.
    Strict,
}

/// Outcome of an intertwined check with an optional counterexample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntertwinedReport {
    pub intertwined: bool,
    pub violating_pair: Option<(Quorum, Quorum)>,
}

/// Full consensus-cluster report for one candidate set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterReport {
    pub candidate: BTreeSet<ProcessId>,
    pub intertwined: bool,
    pub available: bool,
    pub is_cluster: bool,
    pub violating_quorum_pair: Option<(Quorum, Quorum)>,
    pub unavailable_member: Option<ProcessId>,
}

/// True iff every member of `q` has a slice contained in `q`. The empty set
/// is vacuously a quorum. Every member must have declared slices.
pub fn is_quorum(q: &BTreeSet<ProcessId>, slices: &SliceMap) -> Result<bool, FbqsError> {
    if let Some(&missing) = q.iter().find(|i| !slices.contains_key(i)) {
        return Err(FbqsError::MissingSlices(missing));
    }
    Ok(q.iter().all(|i| slices[i].has_slice_within(q)))
}

// ---------------------------------------------------------------------------
// Mask-based enumeration engine. Sets over a fixed universe are u64 bitmasks;
// the public API converts at the boundary.
// ---------------------------------------------------------------------------

const MASK_CAPACITY: usize = 60;

struct MaskCtx {
    ids: Vec<ProcessId>,
    index: BTreeMap<ProcessId, usize>,
    checks: Vec<SliceCheck>,
}

enum SliceCheck {
    Explicit(Vec<u64>),
    Threshold { base: u64, size: u32 },
    /// No declaration: a set containing this process is never a quorum.
    Missing,
}

impl SliceCheck {
    fn satisfied_by(&self, q: u64) -> bool {
        match self {
            SliceCheck::Explicit(slices) => slices.iter().any(|&s| s & !q == 0),
            SliceCheck::Threshold { base, size } => (base & q).count_ones() >= *size,
            SliceCheck::Missing => false,
        }
    }
}

impl MaskCtx {
    fn new(
        universe: &BTreeSet<ProcessId>,
        slices: &SliceMap,
        bound: usize,
    ) -> Result<Self, FbqsError> {
        let bound = bound.min(MASK_CAPACITY);
        if universe.len() > bound {
            return Err(FbqsError::UniverseTooLarge {
                size: universe.len(),
                bound,
            });
        }
        let ids: Vec<ProcessId> = universe.iter().copied().collect();
        let index: BTreeMap<ProcessId, usize> =
            ids.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let checks = ids
            .iter()
            .map(|id| match slices.get(id) {
                None => SliceCheck::Missing,
                Some(decl) => match &decl.family {
                    SliceFamily::Explicit(fam) => {
                        // Slices reaching outside the universe can never be
                        // contained in a subset of it.
                        let masks = fam
                            .iter()
                            .filter(|s| s.iter().all(|m| index.contains_key(m)))
                            .map(|s| Self::mask_of_indexed(&index, s))
                            .collect();
                        SliceCheck::Explicit(masks)
                    }
                    SliceFamily::Threshold { base, size } => SliceCheck::Threshold {
                        base: Self::mask_of_indexed(&index, base),
                        size: *size as u32,
                    },
                },
            })
            .collect();
        Ok(Self { ids, index, checks })
    }

    fn mask_of_indexed(index: &BTreeMap<ProcessId, usize>, set: &BTreeSet<ProcessId>) -> u64 {
        set.iter()
            .filter_map(|m| index.get(m))
            .fold(0u64, |acc, &k| acc | 1 << k)
    }

    fn mask_of(&self, set: &BTreeSet<ProcessId>) -> u64 {
        Self::mask_of_indexed(&self.index, set)
    }

    fn set_of(&self, mask: u64) -> BTreeSet<ProcessId> {
        self.ids
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, &id)| id)
            .collect()
    }

    fn is_quorum_mask(&self, q: u64) -> bool {
        let mut rest = q;
        while rest != 0 {
            let k = rest.trailing_zeros() as usize;
            if !self.checks[k].satisfied_by(q) {
                return false;
            }
            rest &= rest - 1;
        }
        true
    }

    /// All quorums containing process index `k`, as masks.
    fn quorums_containing(&self, k: usize) -> Vec<u64> {
        let n = self.ids.len();
        let bit = 1u64 << k;
        let mut out = Vec::new();
        for m in 0..(1u64 << n) {
            if m & bit != 0 && self.is_quorum_mask(m) {
                out.push(m);
            }
        }
        out
    }

    /// Inclusion-minimal members of `masks`. Every quorum of a process
    /// contains a minimal one, and intersections only grow under supersets,
    /// so universally-quantified intersection properties can be decided on
    /// minimal quorums alone.
    fn minimal(masks: &[u64]) -> Vec<u64> {
        let mut sorted: Vec<u64> = masks.to_vec();
        sorted.sort_by_key(|m| m.count_ones());
        let mut kept: Vec<u64> = Vec::new();
        for &m in &sorted {
            if !kept.iter().any(|&k| k & !m == 0 && k != m) {
                kept.push(m);
            }
        }
        kept
    }
}

fn sort_masks_for_output(ctx: &MaskCtx, masks: Vec<u64>) -> Vec<Quorum> {
    let mut sets: Vec<BTreeSet<ProcessId>> = masks.iter().map(|&m| ctx.set_of(m)).collect();
    sets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    sets.into_iter().map(|members| Quorum { members }).collect()
}

/// Enumerates the quorums of process `i` within `universe`: subsets that are
/// quorums and contain `i` (which forces a slice of `i` inside). Ordered by
/// size, then lexicographically. Processes without declared slices never
/// appear in any returned quorum.
pub fn quorums_of(
    i: ProcessId,
    slices: &SliceMap,
    universe: &BTreeSet<ProcessId>,
    minimal_only: bool,
    limits: &EnumLimits,
) -> Result<Vec<Quorum>, FbqsError> {
    assert!(universe.contains(&i), "process {i} is outside the universe");
    let ctx = MaskCtx::new(universe, slices, limits.universe)?;
    let all = ctx.quorums_containing(ctx.index[&i]);
    let picked = if minimal_only {
        MaskCtx::minimal(&all)
    } else {
        all
    };
    Ok(sort_masks_for_output(&ctx, picked))
}

struct QuorumFamilies {
    ctx: MaskCtx,
    /// Minimal quorum masks per process id.
    minimal: BTreeMap<ProcessId, Vec<u64>>,
}

fn minimal_families(
    members: &BTreeSet<ProcessId>,
    slices: &SliceMap,
    universe: &BTreeSet<ProcessId>,
    bound: usize,
) -> Result<QuorumFamilies, FbqsError> {
    let ctx = MaskCtx::new(universe, slices, bound)?;
    let minimal = members
        .iter()
        .map(|&i| {
            let all = ctx.quorums_containing(ctx.index[&i]);
            (i, MaskCtx::minimal(&all))
        })
        .collect();
    Ok(QuorumFamilies { ctx, minimal })
}

/// Checks that all quorums of all (ordered) pairs of `members` intersect
/// sufficiently: in more than f processes (threshold mode) or in at least one
/// correct process (strict mode). Members must be correct. A member with no
/// quorums satisfies the condition vacuously.
pub fn is_intertwined(
    members: &BTreeSet<ProcessId>,
    slices: &SliceMap,
    universe: &BTreeSet<ProcessId>,
    fa: &FaultAssignment,
    mode: IntertwinedMode,
    limits: &EnumLimits,
) -> Result<IntertwinedReport, FbqsError> {
    let correct = fa.correct(universe);
    assert!(
        members.is_subset(&correct),
        "intertwined is defined over correct processes"
    );
    let fams = minimal_families(members, slices, universe, limits.universe)?;
    Ok(match intertwined_violation(&fams, members, fa, mode) {
        None => IntertwinedReport {
            intertwined: true,
            violating_pair: None,
        },
        Some((a, b)) => IntertwinedReport {
            intertwined: false,
            violating_pair: Some((
                Quorum {
                    members: fams.ctx.set_of(a),
                },
                Quorum {
                    members: fams.ctx.set_of(b),
                },
            )),
        },
    })
}

fn intertwined_violation(
    fams: &QuorumFamilies,
    members: &BTreeSet<ProcessId>,
    fa: &FaultAssignment,
    mode: IntertwinedMode,
) -> Option<(u64, u64)> {
    let correct_mask = {
        let universe: BTreeSet<ProcessId> = fams.ctx.ids.iter().copied().collect();
        fams.ctx.mask_of(&fa.correct(&universe))
    };
    let f = fa.f() as u32;
    for &i in members {
        for &j in members.iter().filter(|&&j| j >= i) {
            for &qa in &fams.minimal[&i] {
                for &qb in &fams.minimal[&j] {
                    let meets = match mode {
                        IntertwinedMode::Threshold => (qa & qb).count_ones() > f,
                        IntertwinedMode::Strict => qa & qb & correct_mask != 0,
                    };
                    if !meets {
                        return Some((qa, qb));
                    }
                }
            }
        }
    }
    None
}

/// Checks both consensus-cluster conditions for `candidate`: the members are
/// intertwined (threshold form) and every member has a quorum contained in
/// the candidate (hence composed of correct processes). The empty candidate
/// is vacuously a cluster.
pub fn is_consensus_cluster(
    candidate: &BTreeSet<ProcessId>,
    slices: &SliceMap,
    universe: &BTreeSet<ProcessId>,
    fa: &FaultAssignment,
    limits: &EnumLimits,
) -> Result<ClusterReport, FbqsError> {
    let correct = fa.correct(universe);
    assert!(
        candidate.is_subset(&correct),
        "a consensus cluster must consist of correct processes"
    );
    let fams = minimal_families(candidate, slices, universe, limits.universe)?;

    let violation = intertwined_violation(&fams, candidate, fa, IntertwinedMode::Threshold);
    let candidate_mask = fams.ctx.mask_of(candidate);
    let unavailable = candidate
        .iter()
        .find(|&&i| !fams.minimal[&i].iter().any(|&q| q & !candidate_mask == 0))
        .copied();

    let intertwined = violation.is_none();
    let available = unavailable.is_none();
    Ok(ClusterReport {
        candidate: candidate.clone(),
        intertwined,
        available,
        is_cluster: intertwined && available,
        violating_quorum_pair: violation.map(|(a, b)| {
            (
                Quorum {
                    members: fams.ctx.set_of(a),
                },
                Quorum {
                    members: fams.ctx.set_of(b),
                },
            )
        }),
        unavailable_member: unavailable,
    })
}

/// Enumerates all inclusion-maximal consensus clusters among subsets of the
/// correct processes. The empty cluster is suppressed. Ordered largest
/// first, then lexicographically.
pub fn maximal_consensus_clusters(
    slices: &SliceMap,
    universe: &BTreeSet<ProcessId>,
    fa: &FaultAssignment,
    limits: &EnumLimits,
) -> Result<Vec<BTreeSet<ProcessId>>, FbqsError> {
    let correct = fa.correct(universe);
    if correct.len() > limits.cluster {
        return Err(FbqsError::UniverseTooLarge {
            size: correct.len(),
            bound: limits.cluster,
        });
    }
    let fams = minimal_families(&correct, slices, universe, limits.universe)?;
    let members: Vec<ProcessId> = correct.iter().copied().collect();
    let n = members.len();

    // Pairwise intertwined matrix plus per-member availability lets each
    // candidate be tested without re-enumerating quorums.
    let mut pair_ok = vec![vec![true; n]; n];
    for a in 0..n {
        for b in a..n {
            let ok = fams.minimal[&members[a]].iter().all(|&qa| {
                fams.minimal[&members[b]]
                    .iter()
                    .all(|&qb| (qa & qb).count_ones() > fa.f() as u32)
            });
            pair_ok[a][b] = ok;
            pair_ok[b][a] = ok;
        }
    }

    let mut valid: Vec<u64> = Vec::new();
    'candidates: for c in 1u64..(1 << n) {
        let chosen: Vec<usize> = (0..n).filter(|&k| c >> k & 1 == 1).collect();
        for (pos, &a) in chosen.iter().enumerate() {
            for &b in &chosen[pos..] {
                if !pair_ok[a][b] {
                    continue 'candidates;
                }
            }
        }
        let candidate_mask = chosen
            .iter()
            .fold(0u64, |acc, &k| acc | 1 << fams.ctx.index[&members[k]]);
        for &k in &chosen {
            let available = fams.minimal[&members[k]]
                .iter()
                .any(|&q| q & !candidate_mask == 0);
            if !available {
                continue 'candidates;
            }
        }
        valid.push(c);
    }

    valid.sort_by_key(|c| std::cmp::Reverse(c.count_ones()));
    let mut maximal: Vec<u64> = Vec::new();
    for &c in &valid {
        if !maximal.iter().any(|&m| c & !m == 0) {
            maximal.push(c);
        }
    }

    let mut out: Vec<BTreeSet<ProcessId>> = maximal
        .into_iter()
        .map(|c| {
            (0..n)
                .filter(|&k| c >> k & 1 == 1)
                .map(|k| members[k])
                .collect()
        })
        .collect();
    out.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    Ok(out)
}
