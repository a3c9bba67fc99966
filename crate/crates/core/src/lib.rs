//! Signal processing and learning on directed acyclic graphs.
//!
//! The crate builds the weighted transitive closure of a DAG, derives the
//! causal graph-shift operators `S_k = W D_k W⁻¹`, and uses them in causal
//! graph filters and in the DCN / PDCN neural architectures. Synthetic task
//! generators and an experiment runner sit on top.

pub mod dag;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod gso;
pub mod nn;
pub mod par;
pub mod sparse;
pub mod synth;
pub mod train;

pub use dag::{
    canonical_small_dag, permute_dag, reachability_edges, transitive_closure, CanonicalCode,
    Closure, Dag, Edge, Permutation,
};
pub use error::{Error, Result};
pub use filter::{build_filter, convolve, ls_fit, CausalFilter};
pub use gso::{
    apply_gso, causal_gso, gso_set, indicator_matrix, permute_gso, AnchorSelection, CausalGso,
    CausalGsoSet,
};
pub use sparse::CsrMatrix;
