//! Deterministic simulation of uniform-power wireless networks under the
//! SINR physical model, plus the protocol stack built on top of it:
//! dilution schedules, SINR-selectors, a connected-dominating-set backbone,
//! global leader election and multi-broadcast.
//!
//! Everything in this crate is deterministic: all randomness comes from
//! explicit seeds, and round simulation is a pure function of its inputs.
//! The usual entry points are:
//!
//! * [`phy`]: reception rule, round simulation, communication graphs;
//! * [`schedule`]: classical / geometric transmission schedules and the
//!   dilution transform between them;
//! * [`selector`]: randomized SINR-selector candidates plus an empirical
//!   certifier;
//! * [`backbone`]: the four-phase backbone construction and the
//!   multi-round engine;
//! * [`apps`]: global leader election and multi-broadcast over the
//!   backbone;
//! * [`harness`]: network generators, the lower-bound family, scenario
//!   runner and serialization.
//!
//! ```
//! use sinr_backbone::phy::{ModelParams, Network, Station};
//! use sinr_backbone::geometry::Point;
//!
//! let params = ModelParams::new(3.0, 1.0, 1.0, 1.0, 1.0).unwrap();
//! let net = Network::new(
//!     vec![
//!         Station::new(1, Point::new(0.0, 0.0)),
//!         Station::new(2, Point::new(0.3, 0.1)),
//!     ],
//!     16,
//!     4,
//!     &params,
//! )
//! .unwrap();
//! let graph = sinr_backbone::phy::communication_graph(&net, &params).unwrap();
//! assert!(graph.connected);
//! assert_eq!(graph.diameter, 1);
//! ```

pub mod apps;
pub mod backbone;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod phy;
pub mod schedule;
pub mod selector;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
