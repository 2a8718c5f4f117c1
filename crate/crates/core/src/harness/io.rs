//! Wide functional-data CSVs (`id, <grid point>, <grid point>, ...`),
//! long-format surface CSVs and the results table.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::diagnose::format_float;
use crate::error::{Error, Result};
use crate::fpc::FunctionalSample;
use crate::funbasis::Grid;

use super::runner::{SimResult, Status};

/// Curves read from a wide CSV together with their ids.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub ids: Vec<String>,
    pub sample: FunctionalSample,
}

pub fn read_functional_csv(path: &Path, label: &str) -> Result<LabeledSample> {
    let file = File::open(path)?;
    read_functional(file, label)
}

pub fn read_functional<R: Read>(reader: R, label: &str) -> Result<LabeledSample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || !headers[0].eq_ignore_ascii_case("id") {
        return Err(Error::Data("expected a header 'id' followed by at least two grid points".into()));
    }
    let points = headers
        .iter()
        .skip(1)
        .map(|h| {
            h.parse::<f64>()
                .map_err(|_| Error::Data(format!("grid header '{h}' is not a number")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let grid = Grid::from_points(points).map_err(|e| Error::Data(format!("invalid grid in header: {e}")))?;
    let g = grid.len();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != g + 1 {
            return Err(Error::Data(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                record.len(),
                g + 1
            )));
        }
        ids.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Data(format!("row {}: '{field}' is not a number", line + 1)))?;
            values.push(v);
        }
    }
    if ids.is_empty() {
        return Err(Error::Data("no curves in file".into()));
    }
    let matrix = DMatrix::from_row_slice(ids.len(), g, &values);
    let sample = FunctionalSample::new(matrix, grid, label).map_err(|e| Error::Data(e.to_string()))?;
    Ok(LabeledSample { ids, sample })
}

pub fn write_functional<W: Write>(writer: W, ids: &[String], sample: &FunctionalSample) -> Result<()> {
    if ids.len() != sample.n_curves() {
        return Err(Error::invalid("one id per curve required"));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend(sample.grid().points().iter().map(|p| format_float(*p)));
    wtr.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(sample.values().row(i).iter().map(|v| format_float(*v)));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_functional_csv(path: &Path, ids: &[String], sample: &FunctionalSample) -> Result<()> {
    write_functional(File::create(path)?, ids, sample)
}

/// Long-format `s,t,beta_hat`.
pub fn write_surface_csv(path: &Path, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["s", "t", "beta_hat"])?;
    for &(s, t, b) in rows {
        wtr.write_record([format_float(s), format_float(t), format_float(b)])?;
    }
    wtr.flush()?;
    Ok(())
}

pub const RESULT_COLUMNS: [&str; 18] = [
    "process",
    "M",
    "Ks",
    "penalty",
    "snr",
    "genK",
    "genLambda",
    "rep",
    "rimse_beta",
    "rimse_y",
    "kappa",
    "overlap",
    "flagged",
    "lambda_s",
    "lambda_t",
    "status",
    "runtime_ms",
    "smoother",
];

fn result_record(r: &SimResult) -> Vec<String> {
    vec![
        r.process.to_string(),
        r.m.to_string(),
        r.k_s.to_string(),
        r.penalty.to_string(),
        format_float(r.snr),
        r.gen_k.to_string(),
        format_float(r.gen_lambda),
        r.rep.to_string(),
        format_float(r.rimse_beta),
        format_float(r.rimse_y),
        format_float(r.kappa),
        format_float(r.overlap),
        r.flagged.to_string(),
        format_float(r.lambda_s),
        format_float(r.lambda_t),
        r.status.to_string(),
        r.runtime_ms.to_string(),
        "gcv-grid".to_string(),
    ]
}

pub fn write_results<W: Write>(writer: W, results: &[SimResult]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(RESULT_COLUMNS)?;
    for r in results {
        wtr.write_record(result_record(r))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_results_csv(path: &Path, results: &[SimResult]) -> Result<()> {
    write_results(File::create(path)?, results)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: usize) -> Result<T> {
    rec.get(idx)
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Data(format!("results row {line}: bad value in column '{}'", RESULT_COLUMNS[idx])))
}

pub fn read_results<R: Read>(reader: R) -> Result<Vec<SimResult>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 17 || headers.iter().zip(RESULT_COLUMNS).any(|(h, c)| h != c) {
        return Err(Error::Data("results header does not match the expected columns".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 1;
        let process = rec[0].parse().map_err(|_| Error::Data(format!("results row {line}: bad process")))?;
        let penalty = rec[3].parse().map_err(|_| Error::Data(format!("results row {line}: bad penalty")))?;
        let status: Status = rec[15].parse()?;
        out.push(SimResult {
            process,
            m: field(&rec, 1, line)?,
            k_s: field(&rec, 2, line)?,
            penalty,
            snr: field(&rec, 4, line)?,
            gen_k: field(&rec, 5, line)?,
            gen_lambda: field(&rec, 6, line)?,
            rep: field(&rec, 7, line)?,
            rimse_beta: field(&rec, 8, line)?,
            rimse_y: field(&rec, 9, line)?,
            kappa: field(&rec, 10, line)?,
            overlap: field(&rec, 11, line)?,
            flagged: field(&rec, 12, line)?,
            lambda_s: field(&rec, 13, line)?,
            lambda_t: field(&rec, 14, line)?,
            status,
            runtime_ms: field(&rec, 16, line)?,
        });
    }
    Ok(out)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<SimResult>> {
    read_results(File::open(path)?)
}

/// Long-format tables for external plotting:
/// `rimse_long.csv` (both error metrics per fit), `flag_scatter.csv`
/// (criterion inputs against the coefficient error) and
/// `countermeasures.csv` (all penalties on data sets whose plain
/// first-difference fit was flagged).
pub fn write_plot_data(dir: &Path, results: &[SimResult]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let key = |r: &SimResult| {
        vec![
            r.process.to_string(),
            r.m.to_string(),
            r.k_s.to_string(),
            r.penalty.to_string(),
            format_float(r.snr),
            r.gen_k.to_string(),
            format_float(r.gen_lambda),
            r.rep.to_string(),
        ]
    };
    let key_header = ["process", "M", "Ks", "penalty", "snr", "genK", "genLambda", "rep"];

    let mut long = csv::Writer::from_path(dir.join("rimse_long.csv"))?;
    long.write_record(key_header.iter().chain(&["metric", "value", "status"]))?;
    for r in results {
        for (metric, value) in [("rimse_beta", r.rimse_beta), ("rimse_y", r.rimse_y)] {
            let mut rec = key(r);
            rec.extend([metric.to_string(), format_float(value), r.status.to_string()]);
            long.write_record(&rec)?;
        }
    }
    long.flush()?;

    let mut scatter = csv::Writer::from_path(dir.join("flag_scatter.csv"))?;
    scatter.write_record(key_header.iter().chain(&["kappa", "overlap", "flagged", "rimse_beta", "status"]))?;
    for r in results.iter().filter(|r| r.penalty.is_plain_difference()) {
        let mut rec = key(r);
        rec.extend([
            format_float(r.kappa),
            format_float(r.overlap),
            r.flagged.to_string(),
            format_float(r.rimse_beta),
            r.status.to_string(),
        ]);
        scatter.write_record(&rec)?;
    }
    scatter.flush()?;

    // Data sets are identified by everything except the penalty.
    let data_key = |r: &SimResult| {
        let mut k = key(r);
        k.remove(3);
        k
    };
    let flagged: BTreeMap<Vec<String>, bool> = results
        .iter()
        .filter(|r| r.penalty == crate::penalize::FitPenalty::D1)
        .map(|r| (data_key(r), r.flagged || !r.status.is_ok()))
        .collect();
    let mut cm = csv::Writer::from_path(dir.join("countermeasures.csv"))?;
    cm.write_record(key_header.iter().chain(&["rimse_beta", "rimse_y", "status"]))?;
    for r in results {
        if flagged.get(&data_key(r)).copied().unwrap_or(false) {
            let mut rec = key(r);
            rec.extend([format_float(r.rimse_beta), format_float(r.rimse_y), r.status.to_string()]);
            cm.write_record(&rec)?;
        }
    }
    cm.flush()?;
    Ok(())
}
