//! Latency benchmarks over the ledger-backed services.
//!
//! A [`BenchScenario`] names one flow, the store sizes to measure it at and
//! how many repetitions to take per size. [`run_scenario`] produces one
//! [`Row`] per measured operation; [`report`] reduces rows to a median and
//! p95 per size.
//!
//! ```
//! use lm2m_bench::{report, Row, ScenarioName};
//!
//! let rows: Vec<Row> = [4.0, 1.0, 3.0, 2.0, 5.0]
//!     .iter()
//!     .enumerate()
//!     .map(|(i, ms)| Row::new(ScenarioName::AnomalyAdd, 100, i as u32, *ms))
//!     .collect();
//! let summary = report(&rows).unwrap();
//! assert_eq!(summary[0].median_ms, 3.0);
//! assert_eq!(summary[0].p95_ms, 5.0);
//! ```

mod report;
mod run;
mod scenario;

pub use report::{format_report, median, percentile, read_csv, report, write_csv, ReportError, Row, Summary};
pub use run::{run_scenario, BenchError};
pub use scenario::{parse_sizes, BenchScenario, Profile, ScenarioError, ScenarioName};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/bench.md")]
mod book {}
