//! Model zoo. Every model here comes with an exact reference: enumeration,
//! a conjugate posterior, or forward filtering.

pub mod hmm;
pub mod linreg;
pub mod meanfield;
pub mod noisyor;
pub mod tabular;
pub mod toy;
