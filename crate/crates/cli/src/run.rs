//! Batch execution of a study grid: one cell per study × phase × VUF limit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use lvflex::error::Error;
use lvflex::flexmap::{self, FlexAreaRequest, FlexBoundary};
use lvflex::netmodel::{self, NetworkCase, Phase};
use lvflex::opf::{Axis, ScenarioConfig};
use lvflex::oracle;

use crate::config::{
    parse_coordination, parse_coordination_mode, parse_phase, OracleConfig, StudyConfig,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CASE: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_DEGENERATE: i32 = 5;

/// A run failure carrying the process exit code and a message for stderr.
#[derive(Debug)]
pub struct RunError {
    pub code: i32,
    pub message: String,
}

impl RunError {
    fn new(code: i32, message: impl Into<String>) -> RunError {
        RunError {
            code,
            message: message.into(),
        }
    }
}

/// One study × phase × VUF-limit combination.
#[derive(Debug, Clone)]
struct Cell {
    study: usize,
    phase: Phase,
    vuf: Option<f64>,
}

impl Cell {
    fn vuf_label(&self) -> String {
        match self.vuf {
            None => "none".to_string(),
            Some(v) => format!("{v:.2}"),
        }
    }
}

#[derive(Debug)]
struct CellResult {
    boundary: Option<FlexBoundary>,
    oracle: Option<oracle::OracleReport>,
    degenerate: bool,
}

#[derive(Debug)]
struct CellOutcome {
    result: Result<CellResult, RunError>,
}

fn cell_name(config: &StudyConfig, cell: &Cell) -> String {
    format!(
        "{}/{}/{}",
        config.studies[cell.study].name,
        cell.phase.letter(),
        cell.vuf_label()
    )
}

fn vuf_grid(study: &crate::config::Study) -> Vec<Option<f64>> {
    match &study.vuf_limits {
        None => vec![None],
        Some(limits) if limits.is_empty() => vec![None],
        Some(limits) => {
            let mut grid = vec![None];
            grid.extend(limits.iter().map(|&l| Some(l)));
            grid
        }
    }
}

fn enumerate_cells(config: &StudyConfig) -> Result<Vec<Cell>, RunError> {
    let mut cells = Vec::new();
    for (i, study) in config.studies.iter().enumerate() {
        for phase in &study.ref_phases {
            let phase = parse_phase(phase).map_err(|e| RunError::new(EXIT_CONFIG, e))?;
            for vuf in vuf_grid(study) {
                cells.push(Cell {
                    study: i,
                    phase,
                    vuf,
                });
            }
        }
    }
    Ok(cells)
}

fn scenario_for(study: &crate::config::Study, vuf: Option<f64>) -> Result<ScenarioConfig, RunError> {
    Ok(ScenarioConfig {
        vuf_limit: vuf,
        coordination: parse_coordination(&study.coordination)
            .map_err(|e| RunError::new(EXIT_CONFIG, e))?,
        coordination_mode: study
            .coordination_mode
            .as_deref()
            .map(parse_coordination_mode)
            .transpose()
            .map_err(|e| RunError::new(EXIT_CONFIG, e))?
            .unwrap_or(lvflex::opf::CoordinationMode::PerUnitZero),
        epsilon_box: None,
    })
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::DegenerateBoundary { .. } => EXIT_DEGENERATE,
        Error::InvalidRequest(_) | Error::RefPhaseAbsent { .. } | Error::NoMonitoredBuses => {
            EXIT_CONFIG
        }
        _ => EXIT_SOLVER,
    }
}

fn run_cell(
    case: &NetworkCase,
    config: &StudyConfig,
    cell: &Cell,
    oracle_cfg: Option<OracleConfig>,
    allow_degenerate: bool,
) -> Result<CellResult, RunError> {
    let study = &config.studies[cell.study];
    let scenario = scenario_for(study, cell.vuf)?;
    let request = FlexAreaRequest {
        ref_bus: study.ref_bus.clone(),
        ref_phase: cell.phase,
        k: study.k,
        epsilon: None,
        scenario: scenario.clone(),
        sweep_axis: Axis::P,
    };
    let name = cell_name(config, cell);
    let boundary = match flexmap::trace_boundary(case, &request) {
        Ok(b) => b,
        Err(Error::DegenerateBoundary { .. }) if allow_degenerate => {
            return Ok(CellResult {
                boundary: None,
                oracle: None,
                degenerate: true,
            });
        }
        Err(e) => {
            return Err(RunError::new(
                exit_code_for(&e),
                format!("cell {name}: {e}"),
            ))
        }
    };
    let oracle_report = match oracle_cfg {
        None => None,
        Some(cfg) => {
            let report =
                oracle::sample_feasible(case, cell.phase, &scenario, cfg.n, cfg.seed)
                    .and_then(|r| oracle::verify_boundary(&boundary, r))
                    .map_err(|e| {
                        RunError::new(exit_code_for(&e), format!("cell {name}: oracle: {e}"))
                    })?;
            Some(report)
        }
    };
    Ok(CellResult {
        boundary: Some(boundary),
        oracle: oracle_report,
        degenerate: false,
    })
}

fn write_file(path: &Path, content: &str) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| {
            RunError::new(EXIT_CONFIG, format!("cannot create {}: {e}", parent.display()))
        })?;
    }
    std::fs::write(path, content)
        .map_err(|e| RunError::new(EXIT_CONFIG, format!("cannot write {}: {e}", path.display())))
}

/// A finished summary row.
struct SummaryRow {
    study: String,
    phase: char,
    vuf: String,
    coordination: String,
    area: Option<f64>,
    reduction: Option<f64>,
    oracle_outside: Option<f64>,
    degenerate: bool,
}

/// Find the reference cell index for `cell` under its study's `compare_to`:
/// same phase and, preferably, the same VUF label, falling back to the
/// unconstrained cell of the referenced study.
fn reference_cell(config: &StudyConfig, cells: &[Cell], cell: &Cell) -> Option<usize> {
    let target = config.studies[cell.study].compare_to.as_deref()?;
    let target_idx = config.studies.iter().position(|s| s.name == target)?;
    let same_vuf = cells.iter().position(|c| {
        c.study == target_idx && c.phase == cell.phase && c.vuf_label() == cell.vuf_label()
    });
    same_vuf.or_else(|| {
        cells
            .iter()
            .position(|c| c.study == target_idx && c.phase == cell.phase && c.vuf.is_none())
    })
}

/// Execute every cell of `config` against `case`, writing boundary files,
/// oracle reports and the run summary beneath `config.output_dir`.
/// Returns the human-readable summary table on success.
pub fn run(config: &StudyConfig, jobs: usize, allow_degenerate: bool) -> Result<String, RunError> {
    let case = netmodel::load_case(&config.case_path).map_err(|e| {
        RunError::new(
            EXIT_CASE,
            format!("cannot load case {}: {e}", config.case_path.display()),
        )
    })?;
    let cells = enumerate_cells(config)?;
    let jobs = jobs.max(1).min(cells.len().max(1));

    // Worker pool: threads claim cell indices from a shared counter; all
    // artifacts are written by this thread after the pool joins, so output
    // order (and the reported first failure) is deterministic.
    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Option<CellOutcome>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let result = run_cell(&case, config, &cells[i], config.oracle, allow_degenerate);
                outcomes.lock().unwrap()[i] = Some(CellOutcome { result });
            });
        }
    });
    let outcomes = outcomes.into_inner().unwrap();

    let mut results = Vec::with_capacity(cells.len());
    for outcome in outcomes {
        let outcome = outcome.expect("worker pool covered every cell");
        results.push(outcome.result?);
    }

    // Artifacts, in cell order.
    for (cell, result) in cells.iter().zip(&results) {
        let Some(boundary) = &result.boundary else {
            continue;
        };
        let dir: PathBuf = [
            config.output_dir.as_path(),
            Path::new(&config.studies[cell.study].name),
            Path::new(&cell.phase.letter().to_string()),
            Path::new(&cell.vuf_label()),
        ]
        .iter()
        .collect();
        write_file(&dir.join("boundary.csv"), &boundary.to_csv())?;
        write_file(&dir.join("boundary.json"), &boundary.to_json())?;
        if let Some(report) = &result.oracle {
            write_file(&dir.join("oracle.json"), &report.to_json())?;
            write_file(&dir.join("oracle.csv"), &report.to_csv())?;
        }
    }

    // Summary rows with comparisons.
    let rows: Vec<SummaryRow> = cells
        .iter()
        .zip(&results)
        .map(|(cell, result)| {
            let study = &config.studies[cell.study];
            let area = result.boundary.as_ref().map(|b| b.area);
            let reduction = match (area, reference_cell(config, &cells, cell)) {
                (Some(area), Some(ref_idx)) => results[ref_idx]
                    .boundary
                    .as_ref()
                    .and_then(|b| flexmap::area_reduction(b.area, area).ok()),
                _ => None,
            };
            SummaryRow {
                study: study.name.clone(),
                phase: cell.phase.letter(),
                vuf: cell.vuf_label(),
                coordination: study.coordination.clone(),
                area,
                reduction,
                oracle_outside: result.oracle.as_ref().map(|r| r.max_outside_distance),
                degenerate: result.degenerate,
            }
        })
        .collect();

    write_file(&config.output_dir.join("summary.csv"), &summary_csv(&rows))?;
    Ok(summary_table(&rows))
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(v) => format!("{v:.2}"),
    }
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out =
        String::from("study,phase,vuf,coordination,area_kvar2,reduction_pct,oracle_outside_kva,status\n");
    for row in rows {
        let status = if row.degenerate { "degenerate" } else { "ok" };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{status}",
            row.study,
            row.phase,
            row.vuf,
            row.coordination,
            fmt_opt(row.area),
            fmt_opt(row.reduction),
            fmt_opt(row.oracle_outside),
        );
    }
    out
}

fn summary_table(rows: &[SummaryRow]) -> String {
    let header = [
        "study",
        "phase",
        "vuf",
        "coordination",
        "area [kVAr2]",
        "reduction [%]",
        "oracle out [kVA]",
        "status",
    ];
    let mut table: Vec<[String; 8]> = vec![header.map(str::to_string)];
    for row in rows {
        table.push([
            row.study.clone(),
            row.phase.to_string(),
            row.vuf.clone(),
            row.coordination.clone(),
            fmt_opt(row.area),
            fmt_opt(row.reduction),
            fmt_opt(row.oracle_outside),
            if row.degenerate { "degenerate" } else { "ok" }.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..8)
        .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out
}
