//! Boundary operators: time integrals, the DtN map, 𝒥 and 𝒦.

pub mod basis;
pub mod connecting;
pub mod dtn;
pub mod operator;
pub mod time_ops;

pub use basis::{BoundaryBasis, TemporalAtoms};
pub use connecting::{
    blagoveshchenskii_oracle, blagoveshchenskii_pairing, connecting_operator,
    connecting_operator_dense, k_identity_oracle, k_pairing, op_k, ConnectingOperator, KOperator,
    ProbeTraces,
};
pub use dtn::{assemble_dtn, DtnOperator};
pub use operator::{BoundaryOperator, Horizon};
pub use time_ops::{op_b, op_i, theta_extend};
