//! Data substrate: synthetic gait generation, CSV exchange, windowing,
//! desired-output derivation and channel normalization.

mod anthro;
mod csv_io;
mod normalize;
mod stream;
mod synth;

pub use anthro::match_anthropometry;
pub use csv_io::{load_csv, parse_csv, to_csv, write_csv};
pub use normalize::{fit_normalizer, NormalizationStats};
pub use stream::{
    cycle_ids, derive_desired_outputs, make_windows, with_targets, DesiredOutputSeries,
    GaitStream, SubjectKind, SubjectMeta,
};
pub use synth::{synth_able, synth_amputee, DistortionParams, Fourier, SynthConfig, TaskSpec};
