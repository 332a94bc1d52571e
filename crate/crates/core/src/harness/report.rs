use std::path::Path;

use crate::error::{Error, Result};
use crate::unlearner::{TrainTrace, TRACE_HEADER};

pub const CURVES_FILE: &str = "curves.csv";
pub const BARS_FILE: &str = "bars.csv";

/// Plot-ready tables built only from the stored `trace_*.csv` files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportTables {
    /// Every trace row, prefixed with the run name.
    pub curves: String,
    /// Final accuracies per run, plus the pre-unlearning starting point.
    pub bars: String,
}

fn traces_in(dir: &Path) -> Result<Vec<(String, TrainTrace)>> {
    let mut names: Vec<(String, std::path::PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter_map(|p| {
            let file = p.file_name()?.to_str()?;
            let name = file
                .strip_prefix("trace_")?
                .strip_suffix(".csv")?
                .to_string();
            Some((name, p))
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|(name, p)| {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Ok((name, TrainTrace::from_csv(&text)?))
        })
        .collect()
}

pub fn build_report(dir: &Path) -> Result<ReportTables> {
    let traces = traces_in(dir)?;
    if traces.is_empty() {
        return Err(Error::Config(format!(
            "no trace_*.csv files in {}",
            dir.display()
        )));
    }
    let mut curves = format!("run,{TRACE_HEADER}\n");
    let mut bars = String::from("run,epoch,acc_unlearn,acc_retain,acc_validation\n");
    let mut start_written = false;
    for (name, trace) in &traces {
        for r in &trace.rows {
            curves.push_str(&format!(
                "{name},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.loss_total,
                r.loss_utility,
                r.loss_unlearn,
                r.acc_unlearn,
                r.acc_retain,
                r.acc_validation
            ));
        }
        if name.starts_with("unlearn_") && !start_written {
            if let Some(r) = trace.rows.first().filter(|r| r.epoch == 0) {
                bars.push_str(&format!(
                    "pre_unlearn,0,{},{},{}\n",
                    r.acc_unlearn, r.acc_retain, r.acc_validation
                ));
                start_written = true;
            }
        }
        if let Some(r) = trace.last() {
            bars.push_str(&format!(
                "{name},{},{},{},{}\n",
                r.epoch, r.acc_unlearn, r.acc_retain, r.acc_validation
            ));
        }
    }
    Ok(ReportTables { curves, bars })
}

/// Builds the tables and writes them next to the traces.
pub fn write_report(dir: &Path) -> Result<ReportTables> {
    let tables = build_report(dir)?;
    super::experiment::write_atomic(&dir.join(CURVES_FILE), tables.curves.as_bytes())?;
    super::experiment::write_atomic(&dir.join(BARS_FILE), tables.bars.as_bytes())?;
    Ok(tables)
}
