use scalefit::allocate::{log_grid, trace_frontier, AllocationQuery};
use scalefit::analysis::{bootstrap_fit, compare_bases, compute_residuals, fit_shared_power, phase2_procedure};
use scalefit::report::{parse_records, render_records, render_table};
use scalefit::{
    fit_phase2, generate_synthetic, published, read_report, write_report, FitConfig, Format, GridPreset, LawKind,
    Report, ReportKind, RunRecord, SyntheticSpec,
};

fn add4_runs(sigma: f64) -> Vec<RunRecord> {
    generate_synthetic(&SyntheticSpec {
        generating_law: published::std_add4(),
        grid: GridPreset::StdMulti.points(),
        noise_sigma: sigma,
        seed: 5,
    })
    .unwrap()
    .records
}

fn round_trip(report: Report) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.jsonl");
    write_report(&report, &path, Format::Records).unwrap();
    assert_eq!(read_report(&path, report.kind()).unwrap(), report);
    let text = render_records(&report).unwrap();
    assert_eq!(parse_records(&text, report.kind()).unwrap(), report);
    assert!(!render_table(&report).is_empty());
}

#[test]
fn fit_report_with_bootstrap_round_trips() {
    let runs = add4_runs(0.01);
    let cfg = FitConfig::default();
    let mut fit = fit_phase2(&published::STD_BASE, LawKind::Add1, &runs, &cfg).unwrap();
    let procedure = phase2_procedure(published::STD_BASE, LawKind::Add1, cfg);
    fit.bootstrap = Some(bootstrap_fit(&runs, &procedure, 8, 3).unwrap());
    round_trip(Report::Bootstrap(fit.bootstrap.clone().unwrap()));
    round_trip(Report::Fit(fit));
}

#[test]
fn frontier_round_trips() {
    let pts = trace_frontier(&published::wd_add4(), &AllocationQuery::new(1.0, 5e8), &log_grid(1e17, 1e21, 9)).unwrap();
    round_trip(Report::Frontier(pts));
}

#[test]
fn residual_reports_round_trip() {
    let runs = add4_runs(0.0);
    let cells = compute_residuals(&published::STD_BASE, &runs);
    round_trip(Report::SharedPower(fit_shared_power(&cells).unwrap()));
    round_trip(Report::Residuals(cells));
}

#[test]
fn comparison_table_has_the_expected_rows() {
    let runs = add4_runs(0.0);
    let (table, _) = compare_bases(&published::STD_BASE, &runs, LawKind::Add1, &FitConfig::default()).unwrap();
    let text = render_table(&Report::Comparison(table.clone()));
    let header: Vec<&str> = text.lines().next().unwrap().split("  ").filter(|s| !s.trim().is_empty()).map(str::trim).collect();
    assert_eq!(header, ["condition", "R2 all", "dR2", "R2 single", "R2 multi", "huber"]);
    assert_eq!(table.rows.len(), 4);
    round_trip(Report::Comparison(table));
}

#[test]
fn kinds_must_match_on_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frontier.jsonl");
    let pts = trace_frontier(&published::std_add4(), &AllocationQuery::new(1.0, 5e8), &[1e18, 1e19]).unwrap();
    write_report(&Report::Frontier(pts), &path, Format::Records).unwrap();
    assert!(read_report(&path, ReportKind::Fit).is_err());
}
