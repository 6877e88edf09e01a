//! Method comparison tables.

use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::eval::EvalReport;

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub tau_mm: f64,
    pub mp: f64,
    pub err_f: f64,
    pub ms_per_image: Option<f64>,
}

impl TableRow {
    pub fn from_report(method: &str, r: &EvalReport) -> Self {
        Self {
            method: method.to_owned(),
            tau_mm: r.tau_mm,
            mp: r.mp_at(r.tau_mm),
            err_f: r.err_f,
            ms_per_image: r.timing.map(|t| t.mean_ms),
        }
    }

    /// Reads a `key,value` summary written by
    /// [`EvalReport::write_summary_csv`].
    pub fn from_summary_csv<R: Read>(r: R) -> Result<Self> {
        let mut method = None;
        let (mut tau, mut mp, mut err_f, mut ms) = (None, None, None, None);
        let mut rd = csv::Reader::from_reader(r);
        for rec in rd.records() {
            let rec = rec?;
            let (k, v) = (&rec[0], &rec[1]);
            let num = || {
                v.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("summary: `{k}` is not a number: {v}")))
            };
            match k {
                "method" => method = Some(v.to_owned()),
                "tau_mm" => tau = Some(num()?),
                "mp_at_tau" => mp = Some(num()?),
                "err_f_mm" => err_f = Some(num()?),
                "ms_per_image_mean" => ms = Some(num()?),
                _ => {}
            }
        }
        let missing = |k: &str| Error::invalid(format!("summary is missing `{k}`"));
        Ok(Self {
            method: method.ok_or_else(|| missing("method"))?,
            tau_mm: tau.ok_or_else(|| missing("tau_mm"))?,
            mp: mp.ok_or_else(|| missing("mp_at_tau"))?,
            err_f: err_f.ok_or_else(|| missing("err_f_mm"))?,
            ms_per_image: ms,
        })
    }
}

fn sorted(rows: &[TableRow], by_err_f: bool) -> Vec<TableRow> {
    let mut rows = rows.to_vec();
    if by_err_f {
        rows.sort_by(|a, b| a.err_f.total_cmp(&b.err_f));
    }
    rows
}

/// Aligned plain-text table.
pub fn compare_table(rows: &[TableRow], sort_by_err_f: bool) -> String {
    let rows = sorted(rows, sort_by_err_f);
    let tau = rows.first().map_or(10.0, |r| r.tau_mm);
    let header = [
        "method".to_owned(),
        format!("mP@{tau}mm"),
        "err_f/mm".to_owned(),
        "time/ms".to_owned(),
    ];
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                format!("{:.3}", r.mp),
                format!("{:.2}", r.err_f),
                r.ms_per_image.map_or("-".into(), |m| format!("{m:.2}")),
            ]
        })
        .collect();
    let mut width = header.clone().map(|h| h.chars().count());
    for row in &body {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String; 4]| {
        let _ = write!(out, "{:<w$}", cells[0], w = width[0]);
        for (c, w) in cells[1..].iter().zip(&width[1..]) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    };
    line(&mut out, &header);
    let rule: usize = width.iter().sum::<usize>() + 2 * 3;
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for row in &body {
        line(&mut out, row);
    }
    out
}

/// CSV with columns `method,tau_mm,mp,err_f_mm,ms_per_image`; an empty last
/// cell means no timing.
pub fn write_table_csv<W: Write>(rows: &[TableRow], sort_by_err_f: bool, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "tau_mm", "mp", "err_f_mm", "ms_per_image"])?;
    for r in sorted(rows, sort_by_err_f) {
        out.write_record([
            r.method.clone(),
            r.tau_mm.to_string(),
            r.mp.to_string(),
            r.err_f.to_string(),
            r.ms_per_image.map_or(String::new(), |m| m.to_string()),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_table_csv<R: Read>(r: R) -> Result<Vec<TableRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::invalid(format!(
                "table row has {} cells, expected 5",
                rec.len()
            )));
        }
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number `{}`", &rec[i])))
        };
        rows.push(TableRow {
            method: rec[0].to_owned(),
            tau_mm: num(1)?,
            mp: num(2)?,
            err_f: num(3)?,
            ms_per_image: if rec[4].is_empty() {
                None
            } else {
                Some(num(4)?)
            },
        });
    }
    Ok(rows)
}
