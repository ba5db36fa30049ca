//! Delay-aware control for a partially cooperative MIMO downlink.
//!
//! `K` base stations serve `K` users over a MIMO interference channel. Each
//! user's data is split into *common* streams, which every BS transmits
//! jointly after the payload has crossed the backhaul, and *private* streams
//! sent by the serving BS alone. Zero-forcing precoders and receive
//! decorrelators are designed from imperfect CSIT. On top of that, an online
//! learner picks powers and rates per frame to trade queueing delay against
//! average power and backhaul budgets.
//!
//! The crate is organised by role:
//!
//! - [`channel`]: finite-alphabet fading, CSIT error kernels, per-frame draws;
//! - [`phy`]: stream feasibility, precoders, decorrelators, capacities;
//! - [`queueing`]: arrivals, the queue recursion and delay costs;
//! - [`learner`]: potential tables, multipliers, stochastic gradients and the
//!   online controller;
//! - [`baselines`]: the comparison schemes;
//! - [`oracle`]: exact dynamic programming on tiny instances;
//! - [`sim`]: configuration, the frame loop, metrics and comparisons.

pub mod action;
pub mod baselines;
pub mod channel;
pub mod error;
pub mod learner;
pub mod linalg;
pub mod oracle;
pub mod phy;
pub mod queueing;
pub mod sim;

pub use action::{ControlAction, UserAction};
pub use baselines::BaselineKind;
pub use channel::{ChannelModel, CsiAlphabet, CsiMode, CsitErrorKernel, GlobalChannelState};
pub use error::{Error, Result};
pub use learner::{LearnerState, OnlineController, OnlineOptions};
pub use oracle::TinyInstance;
pub use phy::{PrecoderSet, StreamAllocation};
pub use sim::{MetricsLog, RunConfig, Scheme};
