use super::{DataError, Dataset, FeatureKind, FeatureSchema};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

/// Reads a comma-separated file with a header row.
///
/// Numeric columns are parsed as reals. Categorical columns are coded by
/// first appearance (the first distinct value seen becomes code 0). Empty
/// cells are rejected.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    treatment_col: &str,
    outcome_col: &str,
) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema, treatment_col, outcome_col)
}

pub fn read_csv<R: Read>(
    reader: R,
    schema: &FeatureSchema,
    treatment_col: &str,
    outcome_col: &str,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let feature_pos: Vec<usize> = schema
        .columns()
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<_, _>>()?;
    let t_pos = find(treatment_col)?;
    let y_pos = find(outcome_col)?;

    let mut dictionaries: Vec<HashMap<String, usize>> = vec![HashMap::new(); schema.len()];
    let mut features = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (j, col) in schema.columns().iter().enumerate() {
            let raw = record.get(feature_pos[j]).unwrap_or("").trim();
            if raw.is_empty() {
                return Err(DataError::Parse {
                    row,
                    column: col.name.clone(),
                    value: raw.to_string(),
                });
            }
            let value = match col.kind {
                FeatureKind::Numeric => {
                    let v: f64 = raw.parse().map_err(|_| DataError::Parse {
                        row,
                        column: col.name.clone(),
                        value: raw.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(DataError::Parse {
                            row,
                            column: col.name.clone(),
                            value: raw.to_string(),
                        });
                    }
                    v
                }
                FeatureKind::Categorical { cardinality } => {
                    let dict = &mut dictionaries[j];
                    let next = dict.len();
                    let code = *dict.entry(raw.to_string()).or_insert(next);
                    if code >= cardinality {
                        return Err(DataError::Domain {
                            row,
                            column: col.name.clone(),
                            value: raw.to_string(),
                            expected: format!("at most {cardinality} distinct levels"),
                        });
                    }
                    code as f64
                }
            };
            features.push(value);
        }
        treatment.push(parse_binary(&record, t_pos, row, treatment_col)?);
        outcome.push(parse_binary(&record, y_pos, row, outcome_col)?);
    }
    Dataset::new(schema.clone(), features, treatment, outcome)
}

fn parse_binary(
    record: &csv::StringRecord,
    pos: usize,
    row: usize,
    column: &str,
) -> Result<u8, DataError> {
    let raw = record.get(pos).unwrap_or("").trim();
    match raw {
        "0" => Ok(0),
        "1" => Ok(1),
        _ if raw.parse::<f64>().is_ok() => Err(DataError::Domain {
            row,
            column: column.to_string(),
            value: raw.to_string(),
            expected: "0 or 1".into(),
        }),
        _ => Err(DataError::Parse {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

/// Writes the dataset with a header row; categorical cells are written as
/// their integer codes.
pub fn write_csv<W: Write>(
    ds: &Dataset,
    writer: W,
    treatment_col: &str,
    outcome_col: &str,
) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.schema().columns().iter().map(|c| c.name.as_str()).collect();
    header.push(treatment_col);
    header.push(outcome_col);
    w.write_record(&header)?;
    let mut cells = Vec::with_capacity(header.len());
    for i in 0..ds.n_rows() {
        cells.clear();
        for (j, &v) in ds.row(i).iter().enumerate() {
            cells.push(match ds.schema().kind(j) {
                FeatureKind::Numeric => v.to_string(),
                FeatureKind::Categorical { .. } => (v as usize).to_string(),
            });
        }
        cells.push(ds.treatment()[i].to_string());
        cells.push(ds.outcome()[i].to_string());
        w.write_record(&cells)?;
    }
    w.flush()?;
    Ok(())
}
