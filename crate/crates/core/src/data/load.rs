use std::io::Read;
use std::path::Path;

use super::dataset::{Dataset, Label, MixedRecord};
use super::schema::Schema;
use crate::error::{Error, Result};

/// Reads a delimiter-separated file with a header row.
///
/// Categorical features whose `levels` are empty in `schema` get a dictionary
/// built in first-seen order; features with a non-empty dictionary are frozen
/// and unseen strings become the unknown level.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_dataset_from_reader(file, schema, &path.display().to_string())
}

pub fn load_dataset_from_reader<R: Read>(reader: R, schema: &Schema, source: &str) -> Result<Dataset> {
    schema.check_names()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::NoDataRows(source.to_string()));
    }
    let column_of = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Load {
            row: 0,
            column: name.to_string(),
            message: "missing column in header".into(),
        })
    };

    let cont_cols = schema
        .continuous
        .iter()
        .map(|n| column_of(n))
        .collect::<Result<Vec<_>>>()?;
    let cat_cols = schema
        .categorical
        .iter()
        .map(|c| column_of(&c.name))
        .collect::<Result<Vec<_>>>()?;
    let label_col = schema.label.as_deref().map(column_of).transpose()?;

    let mut out_schema = schema.clone();
    let frozen: Vec<bool> = schema.categorical.iter().map(|c| !c.levels.is_empty()).collect();
    let mut records = Vec::new();

    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let field = |col: usize, name: &str| -> Result<&str> {
            row.get(col).ok_or_else(|| Error::Load {
                row: row_no,
                column: name.to_string(),
                message: "row is shorter than the header".into(),
            })
        };

        let mut x = Vec::with_capacity(cont_cols.len());
        for (name, &col) in schema.continuous.iter().zip(&cont_cols) {
            let raw = field(col, name)?;
            let v: f64 = raw.parse().map_err(|_| Error::Load {
                row: row_no,
                column: name.clone(),
                message: format!("unparseable numeric value {raw:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Load {
                    row: row_no,
                    column: name.clone(),
                    message: format!("non-finite numeric value {raw:?}"),
                });
            }
            x.push(v);
        }

        let mut levels = Vec::with_capacity(cat_cols.len());
        for (f, &col) in cat_cols.iter().enumerate() {
            let feature = &mut out_schema.categorical[f];
            let raw = field(col, &feature.name)?;
            let level = match feature.level_index(raw) {
                Some(l) => Some(l),
                None if frozen[f] => None,
                None => {
                    feature.levels.push(raw.to_string());
                    Some((feature.levels.len() - 1) as u32)
                }
            };
            levels.push(level);
        }

        let label = match (label_col, schema.label.as_deref()) {
            (Some(col), Some(name)) => {
                let raw = field(col, name)?;
                Some(if schema.is_normal_label(raw) {
                    Label::Normal
                } else {
                    Label::Anomalous
                })
            }
            _ => None,
        };

        records.push(MixedRecord { x, levels, label });
    }

    if records.is_empty() {
        return Err(Error::NoDataRows(source.to_string()));
    }
    out_schema.validate()?;
    Ok(Dataset {
        schema: out_schema,
        records,
        standardization: None,
    })
}

/// Writes records back out in the same CSV layout `load_dataset` reads.
pub fn write_dataset_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let schema = &ds.schema;
    let mut header: Vec<&str> = schema.continuous.iter().map(String::as_str).collect();
    header.extend(schema.categorical.iter().map(|c| c.name.as_str()));
    if let Some(label) = &schema.label {
        header.push(label);
    }
    w.write_record(&header)?;
    let normal = schema.normal_labels.first().map(String::as_str).unwrap_or("normal");
    for r in &ds.records {
        let mut row: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
        for (feature, level) in schema.categorical.iter().zip(&r.levels) {
            row.push(match level {
                Some(l) => feature.levels[*l as usize].clone(),
                None => String::new(),
            });
        }
        if schema.label.is_some() {
            row.push(match r.label {
                Some(Label::Anomalous) => "anomaly".to_string(),
                _ => normal.to_string(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::CategoricalFeature;

    fn fixture_schema() -> Schema {
        Schema::new(
            vec!["len".into(), "weight".into()],
            vec![CategoricalFeature::new("sex", vec![])],
            Some("class".into()),
        )
        .unwrap()
    }

    const FIXTURE: &str = "len,sex,weight,class\n\
                           0.5,M,1.25,normal\n\
                           0.25,F,2.0,normal\n\
                           1.5,M,-3.0,attack\n";

    #[test]
    fn three_row_fixture() {
        let ds = load_dataset_from_reader(FIXTURE.as_bytes(), &fixture_schema(), "fixture").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.schema.categorical[0].levels, vec!["M", "F"]);
        assert_eq!(ds.records[0], MixedRecord::new(vec![0.5, 1.25], vec![Some(0)], Some(Label::Normal)));
        assert_eq!(ds.records[1], MixedRecord::new(vec![0.25, 2.0], vec![Some(1)], Some(Label::Normal)));
        assert_eq!(ds.records[2], MixedRecord::new(vec![1.5, -3.0], vec![Some(0)], Some(Label::Anomalous)));
    }

    #[test]
    fn empty_file_has_no_rows() {
        let err = load_dataset_from_reader("".as_bytes(), &fixture_schema(), "empty.csv").unwrap_err();
        assert!(err.to_string().contains("no data rows"), "{err}");
        let err = load_dataset_from_reader("len,sex,weight,class\n".as_bytes(), &fixture_schema(), "h.csv")
            .unwrap_err();
        assert!(matches!(err, Error::NoDataRows(_)));
    }

    #[test]
    fn missing_column_named() {
        let err = load_dataset_from_reader("len,sex,class\n1,M,normal\n".as_bytes(), &fixture_schema(), "x")
            .unwrap_err();
        match err {
            Error::Load { column, .. } => assert_eq!(column, "weight"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_numeric_names_row_and_column() {
        let text = "len,sex,weight,class\n1,M,2,normal\n1,F,abc,normal\n";
        let err = load_dataset_from_reader(text.as_bytes(), &fixture_schema(), "x").unwrap_err();
        match err {
            Error::Load { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "weight");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn frozen_dictionary_maps_unseen_to_unknown() {
        let mut schema = fixture_schema();
        schema.categorical[0].levels = vec!["M".into(), "F".into()];
        let text = "len,sex,weight,class\n1,I,2,normal\n";
        let ds = load_dataset_from_reader(text.as_bytes(), &schema, "x").unwrap();
        assert_eq!(ds.records[0].levels, vec![None]);
    }

    #[test]
    fn write_then_read_back() {
        let ds = load_dataset_from_reader(FIXTURE.as_bytes(), &fixture_schema(), "fixture").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_dataset_csv(&ds, &path).unwrap();
        let back = load_dataset(&path, &ds.schema).unwrap();
        assert_eq!(back.records, ds.records);
    }
}
