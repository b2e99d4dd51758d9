//! SCM aggregation, MVDR weights, filter application and the enhancement
//! pipeline.
//!
//! Every operation exists in a plain numeric form and, where training needs
//! it, in a tape form built from the same arithmetic so both agree to
//! rounding.

mod aggregate;
mod mvdr;
mod pipeline;
mod tape;

pub use aggregate::{
    aggregate_scm, boxcar_attention, default_lambda, exponential_attention, recursive_scm, uniform_attention,
    ScmSequence,
};
pub use mvdr::{
    apply_beamformer, beamformer_weights, check_hermitian, mvdr_weights, BeamformerWeights, MvdrSolution, MvdrStats,
    DEFAULT_LOADING, FALLBACK_RTOL, HERMITIAN_TOL, LOADING_FLOOR,
};
pub use pipeline::{enhance, Diagnostics, EnhanceConfig, Enhanced, MaskSource, ScmMode, RECURSIVE_TIME_CONSTANT};
pub use tape::{aggregate_on_tape, apply_on_tape, mvdr_on_tape, spectrogram_ftc};
