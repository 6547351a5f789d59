//! A small Monte Carlo study: bias, coverage and RMSE for each estimator.
//!
//! Usage: `cargo run --release --example simulation_study -- [reps]`

use semisens::simstudy::{run_study, table_cells, write_rows_csv, StudyRow, Table};

fn main() -> semisens::error::Result<()> {
    let reps: usize = std::env::args().nth(1).map_or(20, |s| s.parse().expect("reps"));
    let mut rows = Vec::new();
    for cfg in table_cells(Table::Table1, 1000, reps, 0.95, 42, 0.1, None) {
        let m = run_study(&cfg)?;
        rows.push(StudyRow::new(&cfg, &m));
    }
    write_rows_csv(std::io::stdout().lock(), &rows)
}
