//! Order-independent queues and the redundancy model with abandonment.

mod oi;
mod redundancy;

pub use oi::{build_oi_system, enumerate_words, oi_product_form, AdmissibleFn, OISpec, RateFn, Word};
pub use redundancy::{redundancy_departure_reward, redundancy_edge_reward, redundancy_to_oi, RedundancySpec};
