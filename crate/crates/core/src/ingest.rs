//! Comma-separated dataset and grid files (header row, `.` decimal, UTF-8).

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::data::{Dataset, Location};
use crate::error::{Error, Result};

/// Column selection for a dataset file.
#[derive(Debug, Clone)]
pub struct Columns<'a> {
    pub x: &'a str,
    pub y: &'a str,
    pub response: Option<&'a str>,
    pub covariates: &'a [String],
}

struct Table {
    locations: Vec<Location>,
    covariates: Vec<f64>,
    response: Vec<f64>,
}

fn read_table(path: &Path, cols: &Columns<'_>) -> Result<Table> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(csv_err)?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let xi = find(cols.x)?;
    let yi = find(cols.y)?;
    let ri = cols.response.map(find).transpose()?;
    let ci = cols.covariates.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut table = Table {
        locations: Vec::new(),
        covariates: Vec::new(),
        response: Vec::new(),
    };
    let mut bad_rows = Vec::new();
    let parse = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(row + 2);
        let field = |i: usize| record.get(i).and_then(parse);
        let x = field(xi);
        let y = field(yi);
        let r = ri.map(field);
        let c: Vec<Option<f64>> = ci.iter().map(|&i| field(i)).collect();
        match (x, y, r, c.iter().copied().collect::<Option<Vec<f64>>>()) {
            (Some(x), Some(y), None | Some(Some(_)), Some(c)) => {
                table.locations.push(Location::new(x, y));
                if let Some(Some(r)) = r {
                    table.response.push(r);
                }
                table.covariates.extend(c);
            }
            _ => bad_rows.push((row + 1, line)),
        }
    }
    if !bad_rows.is_empty() {
        return Err(Error::NonFiniteRows { rows: bad_rows });
    }
    Ok(table)
}

/// Reads a dataset, rejecting rows with missing or non-finite values in the
/// selected columns. Errors report data rows (1-based, header excluded)
/// together with their file line numbers.
pub fn ingest_dataset(
    path: impl AsRef<Path>,
    x_column: &str,
    y_column: &str,
    response_column: &str,
    covariate_columns: &[String],
) -> Result<Dataset> {
    let path = path.as_ref();
    let cols = Columns {
        x: x_column,
        y: y_column,
        response: Some(response_column),
        covariates: covariate_columns,
    };
    let table = read_table(path, &cols)?;
    let n = table.locations.len();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "{}: need at least 2 observations, found {n}",
            path.display()
        )));
    }
    let covariates = DMatrix::from_row_slice(n, covariate_columns.len(), &table.covariates);
    Ok(
        Dataset::new(table.locations, covariates, covariate_columns.to_vec(), table.response)?
            .with_response_name(response_column),
    )
}

/// Prediction grid: locations and their covariates, no response.
#[derive(Debug, Clone)]
pub struct Grid {
    pub locations: Vec<Location>,
    pub covariates: DMatrix<f64>,
    pub covariate_names: Vec<String>,
}

pub fn ingest_grid(
    path: impl AsRef<Path>,
    x_column: &str,
    y_column: &str,
    covariate_columns: &[String],
) -> Result<Grid> {
    let path = path.as_ref();
    let cols = Columns {
        x: x_column,
        y: y_column,
        response: None,
        covariates: covariate_columns,
    };
    let table = read_table(path, &cols)?;
    if table.locations.is_empty() {
        return Err(Error::Invalid(format!("{}: grid has no rows", path.display())));
    }
    let n = table.locations.len();
    Ok(Grid {
        locations: table.locations,
        covariates: DMatrix::from_row_slice(n, covariate_columns.len(), &table.covariates),
        covariate_names: covariate_columns.to_vec(),
    })
}

/// Writes `x, y, <response>, <covariates...>`; floats use the shortest
/// representation that parses back to the identical value.
pub fn write_dataset(data: &Dataset, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |source| Error::Csv {
        path: "<dataset>".into(),
        source,
    };
    let mut header = vec!["x".to_string(), "y".to_string(), data.response_name().to_string()];
    header.extend(data.covariate_names().iter().cloned());
    w.write_record(&header).map_err(to_err)?;
    for i in 0..data.n() {
        let loc = data.locations()[i];
        let mut rec = vec![loc.x.to_string(), loc.y.to_string(), data.response()[i].to_string()];
        rec.extend(data.covariates().row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<dataset>".into(),
        source,
    })?;
    Ok(())
}

pub fn write_dataset_file(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_dataset(data, std::io::BufWriter::new(file))
}
