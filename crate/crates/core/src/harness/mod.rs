//! Scoring, file formats, plotting and benchmark sweeps.

pub mod bench;
pub mod io;
pub mod metrics;
pub mod svg;

pub use bench::{run_benchmark, BenchConfig, BenchOptions, BenchmarkReport};
pub use io::{read_csv, write_csv};
pub use metrics::{misclassification_rate, outlier_tpr};
pub use svg::{emit_svg_scatter, Projection};
