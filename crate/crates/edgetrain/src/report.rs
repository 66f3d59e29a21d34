//! Pareto rows joining the memory and performance models with ingested
//! accuracies, dominance filtering, and a CSV form that round-trips.

use crate::error::{Error, Result};

/// One cut's position in the memory-latency-accuracy space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoRow {
    pub cut: String,
    pub ram_bytes: u64,
    pub flash_bytes: u64,
    pub latency_s: f64,
    pub energy_j_per_h: f64,
    /// Ingested benchmark accuracy; rows without one sit outside the
    /// frontier computation.
    pub accuracy_pct: Option<f64>,
    pub pareto: bool,
}

/// `a` dominates `b` on (ram, latency, -accuracy): no worse everywhere and
/// strictly better somewhere. Only rows with accuracies take part.
fn dominates(a: &ParetoRow, b: &ParetoRow) -> bool {
    let (Some(acc_a), Some(acc_b)) = (a.accuracy_pct, b.accuracy_pct) else {
        return false;
    };
    let no_worse = a.ram_bytes <= b.ram_bytes && a.latency_s <= b.latency_s && acc_a >= acc_b;
    let better = a.ram_bytes < b.ram_bytes || a.latency_s < b.latency_s || acc_a > acc_b;
    no_worse && better
}

/// Set the `pareto` flag on every row: a row is flagged when it carries an
/// accuracy and no other row dominates it. Idempotent and order-free.
pub fn mark_frontier(rows: &mut [ParetoRow]) {
    let snapshot: Vec<ParetoRow> = rows.to_vec();
    for row in rows.iter_mut() {
        row.pareto =
            row.accuracy_pct.is_some() && !snapshot.iter().any(|other| dominates(other, row));
    }
}

pub const CSV_HEADER: &str =
    "cut,ram_bytes,flash_bytes,latency_s,energy_j_per_h,accuracy_pct,pareto";

pub fn to_csv(rows: &[ParetoRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let acc = match r.accuracy_pct {
            Some(a) => format!("{a}"),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.cut, r.ram_bytes, r.flash_bytes, r.latency_s, r.energy_j_per_h, acc, r.pareto
        ));
    }
    out
}

/// Parse a CSV produced by [`to_csv`]. Floats are written in shortest
/// round-trip form, so parsing reproduces the rows exactly.
pub fn from_csv(text: &str) -> Result<Vec<ParetoRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty report".into()))?;
    if header != CSV_HEADER {
        return Err(Error::Parse(format!("unexpected header '{header}'")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::Parse(format!("row {}: want 7 fields", i + 2)));
        }
        let field = |j: usize, what: &str| -> Result<f64> {
            parts[j]
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad {what}", i + 2)))
        };
        rows.push(ParetoRow {
            cut: parts[0].to_string(),
            ram_bytes: parts[1]
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad ram", i + 2)))?,
            flash_bytes: parts[2]
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad flash", i + 2)))?,
            latency_s: field(3, "latency")?,
            energy_j_per_h: field(4, "energy")?,
            accuracy_pct: if parts[5].is_empty() {
                None
            } else {
                Some(field(5, "accuracy")?)
            },
            pareto: parts[6] == "true",
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(cut: &str, ram: u64, lat: f64, acc: Option<f64>) -> ParetoRow {
        ParetoRow {
            cut: cut.into(),
            ram_bytes: ram,
            flash_bytes: ram * 2,
            latency_s: lat,
            energy_j_per_h: lat * 10.0,
            accuracy_pct: acc,
            pareto: false,
        }
    }

    #[test]
    fn each_axis_winner_is_on_the_frontier() {
        let mut rows = vec![
            row("deep", 110_000_000, 19000.0, Some(77.3)),
            row("mid", 78_000_000, 5800.0, Some(72.2)),
            row("last", 20_000_000, 4.2, Some(58.0)),
        ];
        mark_frontier(&mut rows);
        assert!(rows.iter().all(|r| r.pareto));
    }

    #[test]
    fn identical_costs_keep_only_higher_accuracy() {
        let mut rows = vec![
            row("a", 1000, 1.0, Some(70.0)),
            row("b", 1000, 1.0, Some(60.0)),
        ];
        mark_frontier(&mut rows);
        assert!(rows[0].pareto);
        assert!(!rows[1].pareto);
    }

    #[test]
    fn single_row_is_trivially_frontier() {
        let mut rows = vec![row("only", 5, 1.0, Some(50.0))];
        mark_frontier(&mut rows);
        assert!(rows[0].pareto);
    }

    #[test]
    fn rows_without_accuracy_stay_unflagged() {
        let mut rows = vec![row("a", 10, 1.0, None), row("b", 20, 2.0, Some(50.0))];
        mark_frontier(&mut rows);
        assert!(!rows[0].pareto);
        assert!(rows[1].pareto);
    }

    #[test]
    fn frontier_marking_is_idempotent_and_order_free() {
        let mut rows = vec![
            row("a", 100, 10.0, Some(80.0)),
            row("b", 50, 20.0, Some(70.0)),
            row("c", 120, 30.0, Some(60.0)), // dominated by a
            row("d", 50, 20.0, None),
        ];
        mark_frontier(&mut rows);
        let first: Vec<bool> = rows.iter().map(|r| r.pareto).collect();
        mark_frontier(&mut rows);
        let second: Vec<bool> = rows.iter().map(|r| r.pareto).collect();
        assert_eq!(first, second);
        rows.reverse();
        mark_frontier(&mut rows);
        rows.reverse();
        let reversed: Vec<bool> = rows.iter().map(|r| r.pareto).collect();
        assert_eq!(first, reversed);
        assert_eq!(first, vec![true, true, false, false]);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let mut rows = vec![
            row("conv1", 123_874_568, 19398.623, Some(77.3)),
            row("mid_fc7", 20_487_496, 4.2073043478, None),
        ];
        mark_frontier(&mut rows);
        let text = to_csv(&rows);
        let parsed = from_csv(&text).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn csv_rejects_foreign_header() {
        assert!(from_csv("a,b,c\n1,2,3\n").is_err());
    }
}
