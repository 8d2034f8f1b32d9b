//! Core of the XChange cross-chain trading engine.
//!
//! The crate is deterministic and free of global state: every operation takes
//! the simulated time and the stores it touches as explicit arguments, so a
//! driver (the discrete-event simulator in `xchange-sim`, or a threaded
//! runtime) owns all scheduling decisions.

pub mod assets;
pub mod codec;
pub mod crypto;
pub mod ledger;
pub mod orderbook;
pub mod protocol;
pub mod time;

pub use crypto::{Hash, Identity, PeerId, Signature};
pub use time::{SimDuration, SimTime};
