//! Toolkit for analyzing trust and knowledge in open-membership Byzantine
//! consensus, built around two models:
//!
//! * **Knowledge connectivity graphs**: each process starts out knowing only a
//!   local list of other processes; the union of those lists forms a directed
//!   graph whose sink component governs which processes can ever be discovered
//!   by everyone ([`graph`]).
//! * **Federated Byzantine quorum systems**: each process declares quorum
//!   slices and quorums emerge from slice containment; consensus requires the
//!   correct processes to form a single maximal consensus cluster ([`fbqs`]).
//!
//! The [`slices`] module builds slice systems from local knowledge or from a
//! sink detector's view, [`simnet`] provides a deterministic simulated network
//! with pluggable Byzantine behaviors, and [`protocols`] runs the distributed
//! sink-discovery stack (direct discovery, reachable-reliable broadcast, and
//! the `get_sink` oracle) on top of it. [`scenario`] defines the on-disk
//! experiment format shared by the CLI and the test suites.

pub mod fbqs;
pub mod graph;
pub mod protocols;
pub mod scenario;
pub mod simnet;
pub mod slices;

pub use graph::ProcessId;
