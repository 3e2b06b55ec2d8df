use std::fmt::Write as _;
use std::path::Path;

use sensorsim::experiment::{read_results, summarize, SummaryRow, TABLE1_CHANGES, TABLE1_REQUESTS};
use sensorsim::Strategy;

use crate::Failure;

pub fn run(dir: &Path) -> Result<(), Failure> {
    let runs = read_results(dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    let rows = summarize(runs.iter().map(|r| r.view()));
    print!("{}", render(&rows));
    Ok(())
}

fn cell(label: &str) -> Option<(usize, usize)> {
    let (r, c) = label.strip_prefix('[')?.strip_suffix(']')?.split_once('-')?;
    Some((r.parse().ok()?, c.parse().ok()?))
}

fn rate(table: &[u32], i: usize) -> String {
    table.get(i - 1).map_or_else(|| "?".to_owned(), u32::to_string)
}

fn grid(
    out: &mut String,
    title: &str,
    rows: &[&SummaryRow],
    value: impl Fn(&SummaryRow) -> String,
) {
    let n_rows = rows.iter().filter_map(|r| cell(&r.series)).map(|c| c.0).max().unwrap_or(0).max(3);
    let n_cols = rows.iter().filter_map(|r| cell(&r.series)).map(|c| c.1).max().unwrap_or(0).max(3);
    writeln!(out, "{title}").unwrap();
    write!(out, "{:>14}", "req\\chg").unwrap();
    for c in 1..=n_cols {
        write!(out, "{:>12}", format!("[{c}] {}", rate(&TABLE1_CHANGES, c))).unwrap();
    }
    out.push('\n');
    for r in 1..=n_rows {
        write!(out, "{:>14}", format!("[{r}] {}", rate(&TABLE1_REQUESTS, r))).unwrap();
        for c in 1..=n_cols {
            let text = rows
                .iter()
                .find(|row| cell(&row.series) == Some((r, c)))
                .map_or_else(|| "-".to_owned(), |row| value(row));
            write!(out, "{text:>12}").unwrap();
        }
        out.push('\n');
    }
}

/// Two grids per strategy present: freshness then final Gb. Rows follow the
/// request rate, columns the change rate.
pub fn render(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    for strategy in [Strategy::Robot, Strategy::Sensors] {
        let mine: Vec<&SummaryRow> = rows.iter().filter(|r| r.strategy == strategy).collect();
        if mine.is_empty() {
            continue;
        }
        grid(&mut out, &format!("{strategy}: mean freshness over last half (%)"), &mine, |r| {
            format!("{:.2}", r.mean_freshness_last_half)
        });
        out.push('\n');
        grid(&mut out, &format!("{strategy}: mean final download volume (Gb)"), &mine, |r| {
            format!("{:.3}", r.final_gb_mean)
        });
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(series: &str, strategy: Strategy, f: f64, gb: f64) -> SummaryRow {
        SummaryRow {
            series: series.into(),
            strategy,
            mean_freshness_last_half: f,
            final_bytes_mean: 0.0,
            final_gb_mean: gb,
            final_bytes_min: 0,
            final_bytes_max: 0,
            runs: 1,
        }
    }

    #[test]
    fn single_cell_grid() {
        let text = render(&[row("[2-3]", Strategy::Robot, 42.5, 1.25)]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "robot: mean freshness over last half (%)");
        assert!(lines[1].contains("[3] 10"));
        assert!(lines[3].starts_with("        [2] 50"));
        assert!(lines[3].trim_end().ends_with("42.50"));
        assert_eq!(lines[3].matches('-').count(), 2);
        assert_eq!(text.matches("42.50").count(), 1);
        assert_eq!(text.matches("1.250").count(), 1);
        assert!(!text.contains("sensors"));
    }

    #[test]
    fn two_strategies_four_grids() {
        let text = render(&[
            row("[1-1]", Strategy::Robot, 1.0, 1.0),
            row("[1-1]", Strategy::Sensors, 2.0, 2.0),
        ]);
        assert_eq!(text.matches("(%)").count(), 2);
        assert_eq!(text.matches("(Gb)").count(), 2);
    }
}
