//! Report serialization: aligned text tables for people, JSON lines for
//! machines. Only the record format round-trips.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::allocate::AllocationPoint;
use crate::analysis::{BootstrapReport, ComparisonRow, ComparisonTable, ResidualCell, SharedPowerFit};
use crate::error::{Error, Result};
use crate::fit::FitReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Table,
    Records,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Format::Table),
            "records" | "jsonl" => Ok(Format::Records),
            other => Err(Error::Unknown { kind: "format", name: other.to_string() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    Fit,
    Frontier,
    Comparison,
    Residuals,
    SharedPower,
    Bootstrap,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Report {
    Fit(FitReport),
    Frontier(Vec<AllocationPoint>),
    Comparison(ComparisonTable),
    Residuals(Vec<ResidualCell>),
    SharedPower(SharedPowerFit),
    Bootstrap(BootstrapReport),
}

impl Report {
    pub fn kind(&self) -> ReportKind {
        match self {
            Report::Fit(_) => ReportKind::Fit,
            Report::Frontier(_) => ReportKind::Frontier,
            Report::Comparison(_) => ReportKind::Comparison,
            Report::Residuals(_) => ReportKind::Residuals,
            Report::SharedPower(_) => ReportKind::SharedPower,
            Report::Bootstrap(_) => ReportKind::Bootstrap,
        }
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Table => Ok(render_table(self)),
            Format::Records => render_records(self),
        }
    }
}

pub fn write_report(report: &Report, path: impl AsRef<Path>, format: Format) -> Result<()> {
    fs::write(path, report.render(format)?)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>, kind: ReportKind) -> Result<Report> {
    parse_records(&fs::read_to_string(path)?, kind)
}

fn lines<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// One JSON object per line. Lists emit one line per element; everything
/// else is a single line.
pub fn render_records(report: &Report) -> Result<String> {
    match report {
        Report::Fit(r) => lines(std::slice::from_ref(r)),
        Report::Frontier(pts) => lines(pts),
        Report::Comparison(t) => lines(&t.rows),
        Report::Residuals(cells) => lines(cells),
        Report::SharedPower(f) => lines(std::slice::from_ref(f)),
        Report::Bootstrap(b) => lines(std::slice::from_ref(b)),
    }
}

fn parse_lines<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { row: i + 1, msg: e.to_string() }))
        .collect()
}

fn parse_single<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut items = parse_lines::<T>(text)?;
    if items.len() != 1 {
        return Err(Error::SchemaMismatch(format!("expected exactly one record, found {}", items.len())));
    }
    Ok(items.remove(0))
}

pub fn parse_records(text: &str, kind: ReportKind) -> Result<Report> {
    Ok(match kind {
        ReportKind::Fit => Report::Fit(parse_single(text)?),
        ReportKind::Frontier => Report::Frontier(parse_lines(text)?),
        ReportKind::Comparison => Report::Comparison(ComparisonTable { rows: parse_lines::<ComparisonRow>(text)? }),
        ReportKind::Residuals => Report::Residuals(parse_lines(text)?),
        ReportKind::SharedPower => Report::SharedPower(parse_single(text)?),
        ReportKind::Bootstrap => Report::Bootstrap(parse_single(text)?),
    })
}

/// Four significant digits; scientific notation outside `[1e-3, 1e5)`.
pub fn sig4(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-3..5).contains(&mag) {
        let decimals = (3 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.3e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(sig4).unwrap_or_else(|| "n/a".into())
}

fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let emit = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let line: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    };
    emit(&mut out, &mut headers.iter().copied());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&rule.join("  "));
    out.push('\n');
    for row in rows {
        emit(&mut out, &mut row.iter().map(String::as_str));
    }
    out
}

pub fn render_table(report: &Report) -> String {
    match report {
        Report::Fit(r) => render_fit(r),
        Report::Frontier(pts) => table(
            &["C", "U_D", "N", "epochs", "loss"],
            &pts.iter()
                .map(|p| vec![sig4(p.compute), sig4(p.u_tokens), sig4(p.n_params), sig4(p.epochs), sig4(p.predicted_loss)])
                .collect::<Vec<_>>(),
        ),
        Report::Comparison(t) => table(
            &["condition", "R2 all", "dR2", "R2 single", "R2 multi", "huber"],
            &t.rows
                .iter()
                .map(|r| {
                    vec![
                        r.condition.clone(),
                        opt(r.r2_all),
                        opt(r.delta_r2),
                        opt(r.r2_single),
                        opt(r.r2_multi),
                        sig4(r.huber),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
        Report::Residuals(cells) => {
            let rows: Vec<Vec<String>> = cells
                .iter()
                .flat_map(|c| {
                    c.residuals
                        .iter()
                        .map(move |p| vec![sig4(c.n_params), sig4(c.u_tokens), sig4(p.r_d), sig4(p.excess_loss)])
                })
                .collect();
            table(&["N", "U_D", "R_D", "excess"], &rows)
        }
        Report::SharedPower(f) => {
            let mut out = format!(
                "shared delta = {}  (excluded nonpositive: {}, skipped cells: {}, objective: {})\n\n",
                sig4(f.delta),
                f.excluded_nonpositive,
                f.skipped_cells,
                sig4(f.objective)
            );
            let rows: Vec<Vec<String>> = f
                .p_per_cell
                .iter()
                .map(|c| vec![sig4(c.n_params), sig4(c.u_tokens), sig4(c.p), c.points_used.to_string()])
                .collect();
            out.push_str(&table(&["N", "U_D", "P", "points"], &rows));
            out
        }
        Report::Bootstrap(b) => render_bootstrap(b),
    }
}

fn render_bootstrap(b: &BootstrapReport) -> String {
    let mut out = format!("bootstrap: {} resamples, {} failed, seed {}\n\n", b.resamples, b.failed, b.seed);
    let rows: Vec<Vec<String>> = b.params.iter().map(|p| vec![p.name.clone(), sig4(p.estimate), sig4(p.mad)]).collect();
    out.push_str(&table(&["param", "estimate", "MAD"], &rows));
    out
}

fn render_fit(r: &FitReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "law: {}", r.spec.kind().label());
    let mut rows: Vec<Vec<String>> = crate::laws::ChinchillaParams::NAMES
        .iter()
        .zip(r.spec.base.to_vec())
        .map(|(n, v)| vec![n.to_string(), sig4(v)])
        .collect();
    rows.extend(r.spec.kind().param_names().iter().zip(r.spec.rep.params()).map(|(n, v)| vec![n.to_string(), sig4(v)]));
    out.push_str(&table(&["param", "value"], &rows));
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "R2 all {}  single {}  multi {}  huber {}",
        opt(r.metrics.r2_all),
        opt(r.metrics.r2_single),
        opt(r.metrics.r2_multi),
        sig4(r.metrics.huber)
    );
    let _ = writeln!(
        out,
        "runs {} ({} single, {} multi); objective {}; best start {} of {}; converged {}",
        r.n_total,
        r.n_single,
        r.n_multi,
        sig4(r.objective),
        r.best_start_index,
        r.starts_tried,
        r.converged
    );
    if let Some(b) = &r.bootstrap {
        let _ = writeln!(out);
        out.push_str(&render_bootstrap(b));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig4_formats() {
        assert_eq!(sig4(1.83834), "1.838");
        assert_eq!(sig4(216.58), "216.6");
        assert_eq!(sig4(0.02305), "0.02305");
        assert_eq!(sig4(5e18), "5.000e18");
        assert_eq!(sig4(3.27e-7), "3.270e-7");
        assert_eq!(sig4(0.0), "0");
    }

    #[test]
    fn frontier_table_has_expected_columns() {
        let pts = vec![AllocationPoint { compute: 5e18, u_tokens: 2.5e8, n_params: 6.667e8, epochs: 5.0, predicted_loss: 3.1 }];
        let text = render_table(&Report::Frontier(pts));
        let header: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["C", "U_D", "N", "epochs", "loss"]);
    }

    #[test]
    fn frontier_records_round_trip() {
        let pts = vec![
            AllocationPoint { compute: 1e18, u_tokens: 2.5e8, n_params: 1.0 / 3.0 * 1e9, epochs: 2.0, predicted_loss: 3.3 },
            AllocationPoint { compute: 2e18, u_tokens: 2.5e8, n_params: 0.1 + 0.2, epochs: 3.0, predicted_loss: 3.2 },
        ];
        let report = Report::Frontier(pts);
        let text = render_records(&report).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("\"predicted_loss\""));
        assert_eq!(parse_records(&text, ReportKind::Frontier).unwrap(), report);
    }

    #[test]
    fn single_record_kinds_reject_multiple_lines() {
        let b = BootstrapReport { resamples: 1, failed: 0, seed: 0, params: vec![] };
        let line = render_records(&Report::Bootstrap(b)).unwrap();
        let doubled = format!("{line}{line}");
        assert!(matches!(parse_records(&doubled, ReportKind::Bootstrap), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse_records("\n{not json}\n", ReportKind::Frontier).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }));
    }
}
