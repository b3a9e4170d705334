//! Config parsing, grid orchestration and CSV output for `coopal`.

pub mod config;
pub mod error;
pub mod grid;

pub use config::{parse_config, DatasetSource, Grid, GridSpec, RunConfig};
pub use error::{CliError, CliResult};
pub use grid::{execute, run_grid, CellResult, CsvRow, COMBINED_FILE, HEADER};
