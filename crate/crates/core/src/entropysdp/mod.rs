//! Lower bounds on H(A|E) from the block moment-matrix program, with facial
//! reduction, symmetrization and attack reconstruction.

mod attack;
mod facial;
mod problem;
mod protocol;
mod rate;
mod symmetry;

pub use attack::{reconstruct_attack, AttackReconstruction};
pub use facial::{facial_reduce, strict_feasibility_check, FeasibilityReport};
pub use problem::{apply_real_symmetry, build_entropy_sdp, EntropyProblem, EntropySdp, NodeBlocks, SdpOptions};
pub use protocol::{
    build_agreement_protocol, build_mub_protocol, build_overlap_protocol, build_overlap_protocol_with, build_subspace_protocol,
    OverlapVariant, ProtocolInstance, Setting,
};
pub use rate::{compute_rate, prepare, solve_entropy, split_lower_bound, RateDiagnostics, RateResult, CSV_HEADER};
pub use symmetry::{apply_permutation_symmetry, PermutationSymmetry};
