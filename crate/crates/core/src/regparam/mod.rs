//! Choosing the parameter increment `Λ_k` at each step from the current block
//! (sDP, sUPRE, sGCV), the matching full-data criteria, and trace estimation.
//!
//! Candidates are nonnegative increments on a log grid placed by an `‖A‖²`
//! estimate; each is scored at `λ_k = λ_{k-1} + Λ_k` and reported with its
//! effective parameter `λ_eff = (M/k) λ_k`.

mod context;
mod full;
mod select;
mod trace;

pub use context::{
    spectral_norm_sq, Evaluation, GridSpec, SelectorContext, SelectorMethod, SelectorSettings, TraceMode,
};
pub use full::{full_data_select, full_data_select_with, FullDataMethod, FullDataSelection, SpectralTikhonov};
pub use select::{sdp_select, select, select_lambda, SelectionFlag, SelectionResult};
pub use trace::{exact_trace, hutchinson_trace, rademacher, TraceEstimate};
