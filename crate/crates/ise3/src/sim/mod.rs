//! The particle energy-minimization toy problem: a double-well pairwise
//! potential over 10 nodes with random interaction parameters, instance
//! sampling, and interaction-strength neighborhood selection.

mod instance;
mod neighbors;
mod potential;

pub use instance::{
    mix_seed, SEED_DOMAIN_TEST, SEED_DOMAIN_TRAIN,
    read_jsonl, sample_instance, write_jsonl, ProblemInstance, SampleError, A_MAX, A_MIN, D_MIN,
};
pub use neighbors::{select_neighborhoods, PointGraph};
pub use potential::{
    energy_node_batch,
    energy_and_forces, energy_node, pair_force_mag, pair_potential, total_energy, P_MIN,
    S_LOCAL_MAX, S_SECOND_MIN, S_STAR,
};
