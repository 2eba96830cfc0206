use std::fmt::Write as _;

use super::DtpConfig;
use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "iteration,l_cont,l_style,l_cyc,l_total";

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    /// 1-based.
    pub iteration: usize,
    pub l_cont: f64,
    pub l_style: f64,
    pub l_cyc: f64,
    pub l_total: f64,
    /// File name of the snapshot written for this iteration, if any.
    pub snapshot: Option<String>,
}

/// Config echo line, column header, one row per iteration.
pub fn report_csv(cfg: &DtpConfig, reports: &[IterationReport]) -> String {
    let mut out = cfg.echo();
    out.push('\n');
    out.push_str(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        writeln!(out, "{},{},{},{},{}", r.iteration, r.l_cont, r.l_style, r.l_cyc, r.l_total)
            .expect("writing to a String");
    }
    out
}

/// Parses the rows of a report, skipping `#` comments and the header.
pub fn parse_report_csv(text: &str) -> Result<Vec<IterationReport>> {
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.is_empty() && *l != REPORT_HEADER) {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::Config(format!("malformed report row {line:?}"));
        if fields.len() != 5 {
            return Err(bad());
        }
        let num = |i: usize| fields[i].parse::<f64>().map_err(|_| bad());
        rows.push(IterationReport {
            iteration: fields[0].parse().map_err(|_| bad())?,
            l_cont: num(1)?,
            l_style: num(2)?,
            l_cyc: num(3)?,
            l_total: num(4)?,
            snapshot: None,
        });
    }
    Ok(rows)
}
