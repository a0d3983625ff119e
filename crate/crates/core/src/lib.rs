//! Sequential loop closing for position-dependent motion systems, with
//! position-scheduled notch filters.

pub mod design;
pub mod error;
pub mod filters;
pub mod freqresp;
pub mod io;
pub mod plant;
pub mod scheduling;
pub mod sim;
pub mod statespace;
pub mod trajectory;

pub use error::{Error, ErrorKind, Result};
