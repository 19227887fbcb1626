use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioName;

/// One measured operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub scenario: ScenarioName,
    pub size: u64,
    pub rep: u32,
    pub elapsed_ms: f64,
}

impl Row {
    pub fn new(scenario: ScenarioName, size: u64, rep: u32, elapsed_ms: f64) -> Self {
        Self {
            scenario,
            size,
            rep,
            elapsed_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub scenario: ScenarioName,
    pub size: u64,
    pub count: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no rows to summarize")]
    EmptyInput,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Median; the mean of the two middle values for an even count.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2]),
        _ => Some((v[n / 2 - 1] + v[n / 2]) / 2.0),
    }
}

/// Nearest-rank percentile, `p` in `(0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

/// Median and p95 per scenario and size, ordered by scenario then size.
pub fn report(rows: &[Row]) -> Result<Vec<Summary>, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let mut groups: BTreeMap<(ScenarioName, u64), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.scenario, r.size)).or_default().push(r.elapsed_ms);
    }
    Ok(groups
        .into_iter()
        .map(|((scenario, size), v)| Summary {
            scenario,
            size,
            count: v.len(),
            median_ms: median(&v).unwrap_or_default(),
            p95_ms: percentile(&v, 95.0).unwrap_or_default(),
        })
        .collect())
}

pub fn format_report(summary: &[Summary]) -> String {
    let mut out = format!(
        "{:<22} {:>8} {:>6} {:>12} {:>12}\n",
        "scenario", "size", "reps", "median_ms", "p95_ms"
    );
    for s in summary {
        let _ = writeln!(
            out,
            "{:<22} {:>8} {:>6} {:>12.3} {:>12.3}",
            s.scenario.as_str(),
            s.size,
            s.count,
            s.median_ms,
            s.p95_ms
        );
    }
    out
}

/// Writes `scenario,size,rep,elapsed_ms` with a header row.
pub fn write_csv<W: io::Write>(w: W, rows: &[Row]) -> Result<(), csv::Error> {
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(r: R) -> Result<Vec<Row>, csv::Error> {
    csv::Reader::from_reader(r).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(values: &[f64]) -> Vec<Row> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| Row::new(ScenarioName::LoginVsUsers, 10, i as u32, *v))
            .collect()
    }

    #[test]
    fn single_row_is_its_own_median() {
        let s = report(&rows(&[7.5])).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].median_ms, s[0].p95_ms, s[0].count), (7.5, 7.5, 1));
    }

    #[test]
    fn empty_input() {
        assert!(matches!(report(&[]), Err(ReportError::EmptyInput)));
    }

    #[test]
    fn known_set() {
        // sorted: 2 3 5 8 13
        let s = report(&rows(&[13.0, 2.0, 8.0, 3.0, 5.0])).unwrap();
        assert_eq!(s[0].median_ms, 5.0);
        assert_eq!(s[0].p95_ms, 13.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        // 20 values 1..=20: rank ceil(19) = 19
        let twenty: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&twenty, 95.0), Some(19.0));
    }

    #[test]
    fn groups_are_ordered() {
        let mut all = vec![
            Row::new(ScenarioName::AnomalyAdd, 200, 0, 1.0),
            Row::new(ScenarioName::AnomalyAdd, 100, 0, 2.0),
            Row::new(ScenarioName::RegisterVsStored, 100, 0, 3.0),
        ];
        let a = report(&all).unwrap();
        all.reverse();
        let b = report(&all).unwrap();
        assert_eq!(a, b);
        let keys: Vec<_> = a.iter().map(|s| (s.scenario, s.size)).collect();
        assert_eq!(
            keys,
            [
                (ScenarioName::RegisterVsStored, 100),
                (ScenarioName::AnomalyAdd, 100),
                (ScenarioName::AnomalyAdd, 200)
            ]
        );
        assert!(format_report(&a).lines().nth(1).unwrap().starts_with("RegisterVsStored"));
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[Row::new(ScenarioName::ClientAddRemove, 0, 3, 30012.5)]).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "scenario,size,rep,elapsed_ms\nClientAddRemove,0,3,30012.5\n"
        );
        assert_eq!(read_csv(&buf[..]).unwrap()[0].elapsed_ms, 30012.5);
    }

    proptest! {
        #[test]
        fn csv_round_trips(values in prop::collection::vec(0.0f64..1e7, 1..50)) {
            let rs = rows(&values);
            let mut buf = Vec::new();
            write_csv(&mut buf, &rs).unwrap();
            prop_assert_eq!(read_csv(&buf[..]).unwrap(), rs);
        }

        #[test]
        fn median_and_p95_lie_within_range(values in prop::collection::vec(0.0f64..1e6, 1..200)) {
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let m = median(&values).unwrap();
            let p = percentile(&values, 95.0).unwrap();
            prop_assert!(lo <= m && m <= hi);
            prop_assert!(m <= p && p <= hi);
            prop_assert!(values.contains(&p));
        }
    }
}
