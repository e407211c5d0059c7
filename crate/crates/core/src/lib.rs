//! Adversarial co-training of online algorithms and worst-case inputs for
//! AdWords and ski rental.

pub mod adwords;
pub mod autodiff;
pub mod baselines;
pub mod distributions;
pub mod lp;
pub mod networks;
pub mod reporting;
pub mod skirental;
pub mod trainer;
