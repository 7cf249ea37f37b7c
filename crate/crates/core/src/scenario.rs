//! Scenario files: a single TOML document describing one experiment — the
//! knowledge lists, the fault bound and concrete faulty set, per-faulty
//! adversary behaviors, optional explicit slice declarations, and the
//! simulation parameters (seed, stabilization time, step budget).
//!
//! Two canonical scenarios ship embedded in the library: [`fig1`] (eight
//! processes with hand-declared slices, sink {5,6,7,8}) and [`fig2`] (seven
//! processes whose graph is 3-one-sink-reducible with sink {1,2,3,4}, used
//! to demonstrate that locally built slices can produce disjoint quorums).

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fbqs::{FbqsError, SliceFamily, SliceMap, SliceSet};
use crate::graph::{FaultAssignment, GraphError, KnowledgeGraph, ProcessId};
use crate::protocols::ProtocolMessage;
use crate::simnet::SimConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("failed to serialize scenario: {0}")]
    Emit(#[from] toml::ser::Error),
    #[error("scenario has no processes")]
    Empty,
    #[error("process {0} lists unknown process {1}")]
    UnknownTarget(ProcessId, ProcessId),
    #[error("process {0} lists itself in its knowledge list")]
    SelfKnowledge(ProcessId),
    #[error("faulty process {0} is not part of the scenario")]
    UnknownFaulty(ProcessId),
    #[error("{found} faulty processes exceed the bound f = {bound}")]
    TooManyFaulty { found: usize, bound: usize },
    #[error("behavior declared for non-faulty process {0}")]
    BehaviorForCorrect(ProcessId),
    #[error(
        "process {0} claims {1} in its fake knowledge list, which is not in its real one; \
         faulty processes may only understate knowledge"
    )]
    OverclaimedKnowledge(ProcessId, ProcessId),
    #[error("behavior of process {0} references unknown process {1}")]
    BehaviorUnknownId(ProcessId, ProcessId),
    #[error("slices of process {0} reference unknown process {1}")]
    SliceUnknownId(ProcessId, ProcessId),
    #[error("invalid slice declaration: {0}")]
    Slice(#[from] FbqsError),
    #[error("step budget must be positive")]
    ZeroBudget,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// What a faulty process does during a run. Behaviors attach only to faulty
/// processes and can reference only real process ids (no invented
/// identities, and knowledge-list lies may only understate the real list).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversaryBehavior {
    /// Sends nothing at all.
    Silent,
    /// Participates normally but answers discovery with `fake_pd`.
    LieAboutPd { fake_pd: BTreeSet<ProcessId> },
    /// Participates normally but serves listed askers with fake sink views.
    EquivocateSink {
        #[serde(with = "id_key_map")]
        targets: BTreeMap<ProcessId, BTreeSet<ProcessId>>,
    },
    /// Sends exactly the scripted messages and nothing else.
    Arbitrary { script: Vec<ScriptedSend> },
}

/// One scripted message: delivery is scheduled no earlier than logical time
/// `at`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedSend {
    pub at: u64,
    pub to: ProcessId,
    #[serde(flatten)]
    pub message: ProtocolMessage,
}

fn default_budget() -> u64 {
    100_000
}

fn default_max_delay() -> u64 {
    5
}

/// A full experiment description. See the module docs for the file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub f: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gst: u64,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default = "default_max_delay")]
    pub max_delay: u64,
    #[serde(with = "id_key_map")]
    pub pd: BTreeMap<ProcessId, BTreeSet<ProcessId>>,
    #[serde(default)]
    pub faulty: BTreeSet<ProcessId>,
    #[serde(default, with = "id_key_map")]
    pub behaviors: BTreeMap<ProcessId, AdversaryBehavior>,
    /// Optional explicit slice declarations, keyed by owner.
    #[serde(default, with = "id_key_map")]
    pub slices: BTreeMap<ProcessId, SliceFamily>,
}

impl Scenario {
    /// A blank scenario to fill programmatically.
    pub fn empty(name: &str, f: usize) -> Self {
        Self {
            name: name.to_owned(),
            f,
            seed: 0,
            gst: 0,
            budget: default_budget(),
            max_delay: default_max_delay(),
            pd: BTreeMap::new(),
            faulty: BTreeSet::new(),
            behaviors: BTreeMap::new(),
            slices: BTreeMap::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn universe(&self) -> BTreeSet<ProcessId> {
        self.pd.keys().copied().collect()
    }

    pub fn graph(&self) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::from_pd(&self.pd).expect("validated scenario");
        for &v in self.pd.keys() {
            g.add_vertex(v);
        }
        g
    }

    pub fn fault_assignment(&self) -> FaultAssignment {
        FaultAssignment::new(self.f, self.faulty.clone()).expect("validated scenario")
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            seed: self.seed,
            max_delay: self.max_delay,
            gst: self.gst,
        }
    }

    /// The declared slices as a slice map.
    pub fn slice_map(&self) -> SliceMap {
        self.slices
            .iter()
            .map(|(&owner, family)| {
                (
                    owner,
                    SliceSet {
                        owner,
                        family: family.clone(),
                    },
                )
            })
            .collect()
    }

    /// Behavior of a faulty process; missing declarations default to silent.
    pub fn behavior_of(&self, id: ProcessId) -> AdversaryBehavior {
        self.behaviors
            .get(&id)
            .cloned()
            .unwrap_or(AdversaryBehavior::Silent)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.pd.is_empty() {
            return Err(ScenarioError::Empty);
        }
        if self.budget == 0 {
            return Err(ScenarioError::ZeroBudget);
        }
        let universe = self.universe();
        for (&i, targets) in &self.pd {
            for &j in targets {
                if i == j {
                    return Err(ScenarioError::SelfKnowledge(i));
                }
                if !universe.contains(&j) {
                    return Err(ScenarioError::UnknownTarget(i, j));
                }
            }
        }
        for &v in &self.faulty {
            if !universe.contains(&v) {
                return Err(ScenarioError::UnknownFaulty(v));
            }
        }
        if self.faulty.len() > self.f {
            return Err(ScenarioError::TooManyFaulty {
                found: self.faulty.len(),
                bound: self.f,
            });
        }
        for (&who, behavior) in &self.behaviors {
            if !self.faulty.contains(&who) {
                return Err(ScenarioError::BehaviorForCorrect(who));
            }
            match behavior {
                AdversaryBehavior::Silent => {}
                AdversaryBehavior::LieAboutPd { fake_pd } => {
                    let real = &self.pd[&who];
                    for &claimed in fake_pd {
                        if !real.contains(&claimed) {
                            return Err(ScenarioError::OverclaimedKnowledge(who, claimed));
                        }
                    }
                }
                AdversaryBehavior::EquivocateSink { targets } => {
                    for (&target, view) in targets {
                        if !universe.contains(&target) {
                            return Err(ScenarioError::BehaviorUnknownId(who, target));
                        }
                        for &v in view {
                            if !universe.contains(&v) {
                                return Err(ScenarioError::BehaviorUnknownId(who, v));
                            }
                        }
                    }
                }
                AdversaryBehavior::Arbitrary { script } => {
                    for s in script {
                        if !universe.contains(&s.to) {
                            return Err(ScenarioError::BehaviorUnknownId(who, s.to));
                        }
                        use crate::simnet::Payload;
                        for id in s.message.embedded_ids() {
                            if !universe.contains(&id) {
                                return Err(ScenarioError::BehaviorUnknownId(who, id));
                            }
                        }
                    }
                }
            }
        }
        for (&owner, family) in &self.slices {
            if !universe.contains(&owner) {
                return Err(ScenarioError::SliceUnknownId(owner, owner));
            }
            let decl = SliceSet {
                owner,
                family: family.clone(),
            };
            decl.validate()?;
            for v in decl.trusted() {
                if !universe.contains(&v) {
                    return Err(ScenarioError::SliceUnknownId(owner, v));
                }
            }
        }
        // Constructing the graph re-checks the structural edge invariants.
        KnowledgeGraph::from_pd(&self.pd)?;
        Ok(())
    }
}

/// Eight processes with hand-declared slices; process 8 is faulty and
/// silent, the sink component is {5,6,7,8}, and the correct processes form
/// the single maximal consensus cluster {1,...,7}.
pub fn fig1() -> Scenario {
    Scenario::from_toml_str(include_str!("../../../scenarios/fig1.toml"))
        .expect("embedded scenario is valid")
}

/// Seven processes forming a 3-one-sink-reducible graph with sink {1,2,3,4}
/// and no declared slices; building slices locally from knowledge lists
/// yields the disjoint quorums {5,6,7} and {1,2,3,4}.
pub fn fig2() -> Scenario {
    Scenario::from_toml_str(include_str!("../../../scenarios/fig2.toml"))
        .expect("embedded scenario is valid")
}

/// TOML tables key by string; process-id-keyed maps convert through this
/// adapter.
mod id_key_map {
    use super::ProcessId;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<V: Serialize, S: Serializer>(
        map: &BTreeMap<ProcessId, V>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        let by_string: BTreeMap<String, &V> =
            map.iter().map(|(k, v)| (k.0.to_string(), v)).collect();
        by_string.serialize(serializer)
    }

    pub fn deserialize<'de, V: Deserialize<'de>, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<BTreeMap<ProcessId, V>, D::Error> {
        let by_string: BTreeMap<String, V> = BTreeMap::deserialize(deserializer)?;
        by_string
            .into_iter()
            .map(|(k, v)| {
                k.parse::<u32>()
                    .map(|id| (ProcessId(id), v))
                    .map_err(|_| D::Error::custom(format!("invalid process id key `{k}`")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::sink_components;
    use crate::protocols::MessageBody;

    fn pid(id: u32) -> ProcessId {
        ProcessId(id)
    }

    fn pids(ids: &[u32]) -> BTreeSet<ProcessId> {
        ids.iter().copied().map(ProcessId).collect()
    }

    #[test]
    fn builtin_scenarios_are_valid_and_match_their_graphs() {
        let f1 = fig1();
        assert_eq!(f1.f, 1);
        assert_eq!(f1.faulty, pids(&[8]));
        assert_eq!(f1.pd[&pid(1)], pids(&[2, 5]));
        assert_eq!(f1.slices.len(), 7);
        assert_eq!(sink_components(&f1.graph()), vec![pids(&[5, 6, 7, 8])]);

        let f2 = fig2();
        assert_eq!(f2.f, 1);
        assert!(f2.faulty.is_empty());
        assert!(f2.slices.is_empty());
        assert_eq!(sink_components(&f2.graph()), vec![pids(&[1, 2, 3, 4])]);
    }

    #[test]
    fn toml_round_trip() {
        let mut s = fig1();
        s.behaviors.insert(
            pid(8),
            AdversaryBehavior::EquivocateSink {
                targets: [(pid(1), pids(&[5, 6]))].into(),
            },
        );
        let text = s.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn scripted_behavior_round_trip() {
        let mut s = fig1();
        s.behaviors.insert(
            pid(8),
            AdversaryBehavior::Arbitrary {
                script: vec![ScriptedSend {
                    at: 3,
                    to: pid(6),
                    message: ProtocolMessage::from(MessageBody::SinkReply {
                        view: pids(&[6, 7]),
                    }),
                }],
            },
        );
        s.validate().unwrap();
        let text = s.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_unknown_targets() {
        let mut s = Scenario::empty("bad", 0);
        s.pd.insert(pid(1), pids(&[9]));
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::UnknownTarget(a, b)) if a == pid(1) && b == pid(9)
        ));
    }

    #[test]
    fn rejects_self_knowledge() {
        let mut s = Scenario::empty("bad", 0);
        s.pd.insert(pid(1), pids(&[1]));
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::SelfKnowledge(v)) if v == pid(1)
        ));
    }

    #[test]
    fn rejects_too_many_faulty() {
        let mut s = Scenario::empty("bad", 0);
        s.pd.insert(pid(1), pids(&[2]));
        s.pd.insert(pid(2), pids(&[]));
        s.faulty = pids(&[1]);
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::TooManyFaulty { found: 1, bound: 0 })
        ));
    }

    #[test]
    fn rejects_overclaimed_knowledge() {
        let mut s = fig1();
        s.behaviors.insert(
            pid(8),
            AdversaryBehavior::LieAboutPd {
                fake_pd: pids(&[1]),
            },
        );
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::OverclaimedKnowledge(who, claimed))
                if who == pid(8) && claimed == pid(1)
        ));
    }

    #[test]
    fn rejects_behavior_for_correct_process() {
        let mut s = fig1();
        s.behaviors
            .insert(pid(5), AdversaryBehavior::Silent);
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::BehaviorForCorrect(v)) if v == pid(5)
        ));
    }

    #[test]
    fn rejects_bad_slice_declarations() {
        let mut s = fig1();
        s.slices.insert(
            pid(1),
            SliceFamily::Threshold {
                base: pids(&[2, 5]),
                size: 3,
            },
        );
        assert!(matches!(s.validate(), Err(ScenarioError::Slice(_))));

        let mut s = fig1();
        s.slices.insert(
            pid(1),
            SliceFamily::Explicit([pids(&[9])].into_iter().collect()),
        );
        assert!(matches!(s.validate(), Err(ScenarioError::SliceUnknownId(..))));
    }

    #[test]
    fn empty_document_fails_to_parse() {
        assert!(Scenario::from_toml_str("").is_err());
    }

    #[test]
    fn threshold_slices_parse_from_toml() {
        let text = r#"
            name = "threshold"
            f = 1
            faulty = []

            [pd]
            1 = [2]
            2 = [1]

            [slices]
            1 = { base = [1, 2], size = 2 }
            2 = [[1], [2]]
        "#;
        let s = Scenario::from_toml_str(text).unwrap();
        assert_eq!(
            s.slices[&pid(1)],
            SliceFamily::Threshold {
                base: pids(&[1, 2]),
                size: 2
            }
        );
        assert_eq!(
            s.slices[&pid(2)],
            SliceFamily::Explicit([pids(&[1]), pids(&[2])].into_iter().collect())
        );
    }
}
