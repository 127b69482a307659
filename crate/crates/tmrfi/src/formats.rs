//! On-disk formats: layout JSON, trace and shot CSV, summary JSON and the
//! markdown results table.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use tmrfi_core::campaign::{CampaignSummary, FaultKind, ShotResult, SummaryCell};
use tmrfi_core::engine::OutputTrace;
use tmrfi_core::layout::RegisterLayout;
use tmrfi_core::optics::ThresholdModel;

use crate::error::AppError;

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), AppError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn layout_json(layout: &RegisterLayout) -> Result<String, AppError> {
    Ok(serde_json::to_string_pretty(layout)?)
}

pub fn read_layout(path: &Path) -> Result<RegisterLayout, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
}

/// `edge_index,time_ns,bit`, one row per clock edge.
pub fn trace_csv(trace: &OutputTrace) -> Result<Vec<u8>, AppError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["edge_index", "time_ns", "bit"])?;
    for (k, (&bit, &t)) in trace.bits.iter().zip(&trace.edge_times_ns).enumerate() {
        w.write_record([k.to_string(), t.to_string(), (bit as u8).to_string()])?;
    }
    finish(w)
}

#[derive(Serialize)]
struct ShotRow<'a> {
    scenario: &'a str,
    stage: usize,
    freq_mhz: f64,
    input_bit: u8,
    objective: &'a str,
    power_pct: f64,
    duration_ns: f64,
    phase_ns: f64,
    n_faults: usize,
    class: &'static str,
    burst_len: Option<usize>,
    repeatability: f64,
}

pub fn shots_csv(shots: &[ShotResult]) -> Result<Vec<u8>, AppError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in shots {
        w.serialize(ShotRow {
            scenario: &s.scenario,
            stage: s.stage,
            freq_mhz: s.freq_mhz,
            input_bit: s.input_bit as u8,
            objective: &s.objective,
            power_pct: s.power_pct,
            duration_ns: s.duration_ns,
            phase_ns: s.phase_ns,
            n_faults: s.n_faults,
            class: s.class.kind().name(),
            burst_len: s.class.burst_len(),
            repeatability: s.repeatability,
        })?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, AppError> {
    w.into_inner().map_err(|e| AppError::Csv(e.into_error().into()))
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    thresholds: &'a ThresholdModel,
    summary: &'a CampaignSummary,
}

pub fn summary_json(thresholds: &ThresholdModel, summary: &CampaignSummary) -> Result<String, AppError> {
    let mut s = serde_json::to_string_pretty(&SummaryFile { thresholds, summary })?;
    s.push('\n');
    Ok(s)
}

fn range(lo: Option<f64>, hi: Option<f64>) -> String {
    match (lo, hi) {
        (Some(a), Some(b)) if a == b => format!("{a}"),
        (Some(a), Some(b)) => format!("{a}-{b}"),
        _ => "-".into(),
    }
}

fn fault_label(kinds: &[FaultKind]) -> String {
    let names: Vec<&str> = kinds
        .iter()
        .map(|k| match k {
            FaultKind::TransientBitSet => "bit-set",
            FaultKind::TransientBitReset => "bit-reset",
            other => other.name(),
        })
        .collect();
    if names.is_empty() {
        "none".into()
    } else {
        names.join(", ")
    }
}

fn table_row(out: &mut String, cell: &SummaryCell) {
    let faulting: Vec<_> = cell.rows.iter().filter(|r| r.faulting_shots > 0).collect();
    let min_power = cell.min_power_pct();
    let max_power = cell.rows.iter().filter_map(|r| r.max_power_pct).reduce(f64::max);
    let pulses = range(faulting.first().map(|r| r.duration_ns), faulting.last().map(|r| r.duration_ns));
    let repeat = faulting.iter().filter_map(|r| r.min_repeatability).reduce(f64::min);
    let repeat = match repeat {
        None => "-".into(),
        Some(r) if r >= 1.0 => "yes".into(),
        Some(r) => format!("no ({r:.2})"),
    };
    let _ = writeln!(
        out,
        "| {} | '{}' | {} | {} | {} | {} | {} |",
        cell.freq_mhz,
        cell.input_bit as u8,
        range(min_power, max_power),
        pulses,
        cell.objective,
        fault_label(&cell.fault_types()),
        repeat
    );
}

/// Results table, one row per frequency, objective and input value.
pub fn summary_markdown(summary: &CampaignSummary) -> String {
    let mut cells: Vec<&SummaryCell> = summary.cells.iter().collect();
    cells.sort_by(|a, b| {
        a.freq_mhz
            .total_cmp(&b.freq_mhz)
            .then_with(|| a.objective.cmp(&b.objective))
            .then(a.input_bit.cmp(&b.input_bit))
    });
    let mut out = String::new();
    out.push_str("| Clock, MHz | Input | Power, % | Pulse, ns | Objective | Fault type | Repeatable |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for c in cells {
        table_row(&mut out, c);
    }
    out
}

/// Human-readable per-duration breakdown.
pub fn summary_text(summary: &CampaignSummary, mut w: impl Write) -> std::io::Result<()> {
    for c in &summary.cells {
        writeln!(w, "{} MHz, input '{}', {}:", c.freq_mhz, c.input_bit as u8, c.objective)?;
        for r in &c.rows {
            writeln!(
                w,
                "  {:>6} ns  min power {:>5}  faulting {}/{}  types {}",
                r.duration_ns,
                r.min_power_pct.map_or("-".into(), |p| p.to_string()),
                r.faulting_shots,
                r.shots,
                fault_label(&r.fault_types)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tmrfi_core::campaign::FaultClass;
    use tmrfi_core::engine::TimingParams;

    fn shot(power: f64, class: FaultClass) -> ShotResult {
        ShotResult {
            scenario: "s".into(),
            stage: 3,
            freq_mhz: 10.0,
            input_bit: false,
            objective: "20x".into(),
            power_pct: power,
            duration_ns: 130.0,
            phase_ns: 50.5,
            n_faults: 2,
            class,
            repeatability: 1.0,
            repetitions: 20,
            faulting_reps: if class.is_fault() { 20 } else { 0 },
            kinds: vec![class.kind()],
        }
    }

    #[test]
    fn trace_rows() {
        let t = OutputTrace {
            bits: vec![false, true],
            edge_times_ns: vec![50.0, 150.0],
            timing: TimingParams::new(100.0, 50.0, 1.0).unwrap(),
        };
        let text = String::from_utf8(trace_csv(&t).unwrap()).unwrap();
        assert_eq!(text, "edge_index,time_ns,bit\n0,50,0\n1,150,1\n");
    }

    #[test]
    fn shot_columns() {
        let rows = [shot(35.0, FaultClass::Masked), shot(40.0, FaultClass::TransientBitSet { burst_len: 3 })];
        let text = String::from_utf8(shots_csv(&rows).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "scenario,stage,freq_mhz,input_bit,objective,power_pct,duration_ns,phase_ns,n_faults,class,burst_len,repeatability"
        );
        assert_eq!(lines.next().unwrap(), "s,3,10.0,0,20x,35.0,130.0,50.5,2,Masked,,1.0");
        assert_eq!(lines.next().unwrap(), "s,3,10.0,0,20x,40.0,130.0,50.5,2,TransientBitSet,3,1.0");
    }

    #[test]
    fn markdown_row() {
        let rows = [
            shot(35.0, FaultClass::Masked),
            shot(40.0, FaultClass::TransientBitSet { burst_len: 3 }),
            shot(100.0, FaultClass::TransientBitSet { burst_len: 3 }),
        ];
        let md = summary_markdown(&CampaignSummary::from_shots(&rows));
        assert!(md.contains("| 10 | '0' | 40-100 | 130 | 20x | bit-set | yes |"), "{md}");
    }
}
