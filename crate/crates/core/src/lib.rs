//! Multiple-group interrupted time series estimation.
//!
//! Two estimators are provided for the eight-coefficient MG-ITSA model:
//! OLS with Newey-West HAC standard errors ([`olsnw`]) and iterated
//! Prais-Winsten feasible GLS for AR(k) errors ([`praisk`]). [`dgp`]
//! generates panels with AR(k) errors and [`simulate`] runs Monte Carlo
//! studies of power, coverage, Type I error, bias, RMSE and empirical SE.

pub mod cli;
pub mod dgp;
pub mod error;
pub mod model;
pub mod olsnw;
pub mod praisk;
pub mod simulate;

pub use error::{Error, Result};
