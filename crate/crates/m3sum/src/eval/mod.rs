//! Generation and scoring: beam search with length penalty, n-gram and
//! longest-common-subsequence overlap metrics, and the per-direction
//! evaluation grid.

mod beam;
mod grid;
mod rouge;

pub use beam::{beam_search, generate, BeamConfig, BeamOutcome, Generated};
pub use grid::{cell_from_reports, eval_grid, render_grid_table, EvalGrid, EvalSpec, GridCell, RowAverage};
pub use rouge::{rouge_l, rouge_n, rouge_report, RougeReport, RougeScore};
