//! Comma-separated input and output files. The first column of every file
//! is a step index or timestamp and is not interpreted; headers may carry a
//! unit in square brackets, e.g. `Te [degC]`.

use std::path::Path;

use adequacy::basis::{ParamBounds, ParameterDesign};
use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

/// Splits `"name [unit]"` into its parts.
pub fn split_header(h: &str) -> (String, Option<String>) {
    let h = h.trim();
    match (h.find(" ["), h.ends_with(']')) {
        (Some(i), true) => (h[..i].to_string(), Some(h[i + 2..h.len() - 1].to_string())),
        _ => (h.to_string(), None),
    }
}

fn with_unit(name: &str, unit: &str) -> String {
    format!("{name} [{unit}]")
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {msg}", path.display()))
}

/// A parsed table: headers without the index column, and rows of numbers.
pub struct Table {
    pub headers: Vec<String>,
    pub index: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| split_header(h).0 == name)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.headers.len(), |i, j| self.rows[i][j])
    }
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| data_err(path, e))?;
    let headers: Vec<String> = rdr.headers().map_err(|e| data_err(path, e))?.iter().map(str::to_string).collect();
    if headers.len() < 2 {
        return Err(data_err(path, "expected an index column and at least one data column"));
    }
    let mut index = Vec::new();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| data_err(path, e))?;
        if rec.len() != headers.len() {
            return Err(data_err(path, format!("row {} has {} fields, header has {}", line + 2, rec.len(), headers.len())));
        }
        index.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|f| {
                let v: f64 = f.trim().parse().map_err(|_| data_err(path, format!("row {}: '{f}' is not a number", line + 2)))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(data_err(path, format!("row {}: non-finite value", line + 2)))
                }
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(data_err(path, "no data rows"));
    }
    Ok(Table { headers: headers[1..].to_vec(), index, rows })
}

pub fn write_table(path: &Path, index_name: &str, headers: &[String], index: &[String], rows: &[Vec<f64>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Config(format!("{}: {e}", path.display()));
    let mut head = vec![index_name.to_string()];
    head.extend(headers.iter().cloned());
    w.write_record(&head).map_err(io)?;
    for (i, row) in index.iter().zip(rows) {
        let mut rec = vec![i.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}

fn step_index(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// N × M simulation outputs, one run per column.
pub fn write_ensemble(path: &Path, outputs: &DMatrix<f64>, unit: &str) -> CliResult<()> {
    let headers: Vec<String> = (1..=outputs.ncols()).map(|j| with_unit(&format!("run_{j:03}"), unit)).collect();
    write_table(path, "t", &headers, &step_index(outputs.nrows()), &matrix_rows(outputs))
}

pub fn read_ensemble(path: &Path) -> CliResult<DMatrix<f64>> {
    let t = read_table(path)?;
    if t.headers.len() < 2 {
        return Err(data_err(path, "an ensemble needs at least two runs"));
    }
    Ok(t.matrix())
}

pub fn write_parameters(path: &Path, bounds: &[ParamBounds]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Config(format!("{}: {e}", path.display()));
    w.write_record(["name", "unit", "lo", "hi"]).map_err(io)?;
    for b in bounds {
        w.write_record([b.name.clone(), b.unit.clone(), b.lo.to_string(), b.hi.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}

pub fn read_parameters(path: &Path) -> CliResult<Vec<ParamBounds>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| data_err(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| data_err(path, e))?;
        if rec.len() != 4 {
            return Err(data_err(path, "expected columns name,unit,lo,hi"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| data_err(path, format!("'{s}' is not a number")));
        let b = ParamBounds::new(&rec[0], &rec[1], num(&rec[2])?, num(&rec[3])?).map_err(|e| data_err(path, e))?;
        out.push(b);
    }
    if out.is_empty() {
        return Err(data_err(path, "no parameters"));
    }
    Ok(out)
}

/// Design rows in original units followed by the same values on [0, 1].
pub fn write_design(path: &Path, design: &ParameterDesign) -> CliResult<()> {
    let bounds = design.bounds();
    let mut headers: Vec<String> = bounds.iter().map(|b| with_unit(&b.name, &b.unit)).collect();
    headers.extend(bounds.iter().map(|b| with_unit(&format!("{}_norm", b.name), "-")));
    let original = design.original();
    let rows: Vec<Vec<f64>> = (0..design.runs())
        .map(|r| original.row(r).iter().chain(design.unit().row(r).iter()).copied().collect())
        .collect();
    let index: Vec<String> = (1..=design.runs()).map(|j| format!("run_{j:03}")).collect();
    write_table(path, "run", &headers, &index, &rows)
}

/// Reads the normalized design columns for `bounds`.
pub fn read_design(path: &Path, bounds: &[ParamBounds]) -> CliResult<ParameterDesign> {
    let t = read_table(path)?;
    let cols = bounds
        .iter()
        .map(|b| {
            t.position(&format!("{}_norm", b.name))
                .ok_or_else(|| data_err(path, format!("missing column {}_norm", b.name)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let unit = DMatrix::from_fn(t.rows.len(), cols.len(), |i, j| t.rows[i][cols[j]]);
    ParameterDesign::from_unit(unit, bounds.to_vec()).map_err(|e| data_err(path, e))
}

/// Named boundary series with units.
pub struct BoundaryTable {
    pub names: Vec<String>,
    pub units: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn write_boundary(path: &Path, table: &BoundaryTable) -> CliResult<()> {
    let headers: Vec<String> = table.names.iter().zip(&table.units).map(|(n, u)| with_unit(n, u)).collect();
    write_table(path, "t", &headers, &step_index(table.values.nrows()), &matrix_rows(&table.values))
}

pub fn read_boundary(path: &Path) -> CliResult<BoundaryTable> {
    let t = read_table(path)?;
    let (names, units) = t
        .headers
        .iter()
        .map(|h| {
            let (n, u) = split_header(h);
            (n, u.unwrap_or_else(|| "-".into()))
        })
        .unzip();
    Ok(BoundaryTable { names, units, values: t.matrix() })
}

/// Measured series `y` with its measurement standard deviation and, for
/// synthetic data, the noiseless series.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: Vec<f64>,
    pub sd: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    pub unit: String,
}

impl Observation {
    /// Measurement-error variance `var(ν)`, the mean of `sd²`.
    pub fn noise_variance(&self) -> f64 {
        self.sd.iter().map(|s| s * s).sum::<f64>() / self.sd.len() as f64
    }
}

pub fn write_observation(path: &Path, obs: &Observation) -> CliResult<()> {
    let mut headers = vec![with_unit("y", &obs.unit), with_unit("sd", &obs.unit)];
    let mut rows: Vec<Vec<f64>> = obs.y.iter().zip(&obs.sd).map(|(y, s)| vec![*y, *s]).collect();
    if let Some(t) = &obs.truth {
        headers.push(with_unit("truth", &obs.unit));
        rows.iter_mut().zip(t).for_each(|(r, v)| r.push(*v));
    }
    write_table(path, "t", &headers, &step_index(obs.y.len()), &rows)
}

pub fn read_observation(path: &Path) -> CliResult<Observation> {
    let t = read_table(path)?;
    let y = t.position("y").ok_or_else(|| data_err(path, "missing column y"))?;
    let sd = t.position("sd").ok_or_else(|| data_err(path, "missing column sd"))?;
    let sd_values = t.column(sd);
    if sd_values.iter().any(|s| !(*s > 0.0)) {
        return Err(data_err(path, "sd must be positive"));
    }
    let unit = split_header(&t.headers[y]).1.unwrap_or_else(|| "-".into());
    Ok(Observation { y: t.column(y), sd: sd_values, truth: t.position("truth").map(|j| t.column(j)), unit })
}
