//! Greedy caption generation and BLEU scoring.

mod bleu;
mod greedy;
pub mod oracle;
mod report;

pub use bleu::*;
pub use greedy::{argmax, greedy_decode};
pub use report::*;
