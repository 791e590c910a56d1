//! Discrete-event simulation of managed electric-vehicle charging
//! facilities.
//!
//! `evgrid` models a charging site end to end: unbalanced three-phase
//! current constraints over the EVSE rates, pilot-signal quantization,
//! non-ideal battery charge curves, a time-stamped event queue, a suite of
//! online scheduling baselines, and a model-predictive controller backed by
//! a built-in first-order convex solver. Scenario tooling ingests session
//! record files or samples synthetic workloads from Gaussian mixtures, and a
//! CLI runs single simulations, capacity sweeps, and grid-profile exports.
//!
//! The guide under `book/` walks through each concept with runnable
//! examples; its code blocks double as doctests.

pub mod algorithms;
pub mod engine;
pub mod error;
pub mod events;
pub mod hardware;
pub mod mpc;
pub mod network;
pub mod scenario;
pub mod signals;

mod book;

pub use algorithms::{RoundRobin, Schedule, SchedulingAlgorithm, SortKey, SortedAlgorithm, Uncontrolled};
pub use engine::{AlgoView, SessionView, SimConfig, SimRecord, Simulation, SignalSet};
pub use error::{Error, Result};
pub use events::{Event, EventKind, EventQueue};
pub use hardware::{Battery, BatteryKind, PilotModel, SessionEv};
pub use network::{
    auto_network, AssignmentMode, AutoNetworkOptions, CurrentConstraint, EvseNode, Network,
    NetworkSpec, Phasing,
};
pub use signals::{billing_cost, BillingBreakdown, Tariff, TimeSeriesSignal};
