//! Weekly retail forecasting under crisis conditions.

pub mod auto_order;
pub mod calendar;
pub mod error;
pub mod io;
pub mod eval;
pub mod keywords;
pub mod msar;
pub mod peaks;
pub mod varx;
pub mod sarimax;
pub mod series;

pub use error::{Error, Result};
