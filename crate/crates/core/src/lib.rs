//! Joint influenza / COVID-19 forecasting.

pub mod backtest;
pub mod bundle;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod forecast;
pub mod imputation;
pub mod lasso;
pub mod national;
pub mod panel;
pub mod raw;
pub mod rng;
pub mod state;
pub mod synthetic;
pub mod view;

pub use error::{Error, Result};
