use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Diagnosis, Subject, Table};
use crate::error::{Error, Result};

/// Column names and conventions for CSV ingestion. Loaded from a flat
/// `key = value` TOML file; every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    pub id_column: String,
    pub dataset_column: String,
    pub age_column: String,
    pub sex_column: String,
    /// Used when present in the header; all subjects count as controls otherwise.
    pub diagnosis_column: String,
    /// Diagnosis values (case-insensitive) that mark a healthy control.
    pub control_labels: Vec<String>,
    pub feature_prefixes: Vec<String>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            id_column: "subject_id".into(),
            dataset_column: "dataset".into(),
            age_column: "age".into(),
            sex_column: "sex".into(),
            diagnosis_column: "diagnosis".into(),
            control_labels: ["control", "cn", "hc", "healthy", "none", "0", ""]
                .into_iter()
                .map(String::from)
                .collect(),
            feature_prefixes: vec!["vol_".into(), "thick_".into()],
        }
    }
}

impl SchemaConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    fn is_control(&self, label: &str) -> bool {
        let label = label.trim();
        self.control_labels.iter().any(|c| c.eq_ignore_ascii_case(label))
    }
}

/// A row dropped during ingestion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    /// 1-based line number in the file (header is line 1).
    pub line: u64,
    pub subject_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RejectionReport {
    pub rejected: Vec<Rejection>,
}

impl RejectionReport {
    pub fn count(&self) -> usize {
        self.rejected.len()
    }
}

impl fmt::Display for RejectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} row(s) rejected", self.rejected.len())?;
        for r in &self.rejected {
            writeln!(f, "  line {} ({}): {}", r.line, r.subject_id, r.reason)?;
        }
        Ok(())
    }
}

pub fn load_csv(path: &Path, schema: &SchemaConfig) -> Result<(Table, RejectionReport)> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.into(), source })?;
    read_csv(file, schema)
}

/// Parses and validates a subject table. Rows with missing or malformed
/// values are rejected and reported, never imputed.
pub fn read_csv(reader: impl Read, schema: &SchemaConfig) -> Result<(Table, RejectionReport)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let required = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let id_col = required(&schema.id_column)?;
    let dataset_col = required(&schema.dataset_column)?;
    let age_col = required(&schema.age_column)?;
    let sex_col = required(&schema.sex_column)?;
    let diag_col = find(&schema.diagnosis_column);
    let feature_cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| schema.feature_prefixes.iter().any(|p| h.starts_with(p.as_str())))
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut subjects = Vec::new();
    let mut datasets = Vec::new();
    let mut diagnoses = Vec::new();
    let mut report = RejectionReport::default();
    let mut ids = HashSet::new();

    for (row, record) in rdr.records().enumerate() {
        let line = row as u64 + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.rejected.push(Rejection { line, subject_id: String::new(), reason: e.to_string() });
                continue;
            }
        };
        let id = record.get(id_col).unwrap_or("").to_string();
        let mut reject = |reason: String| {
            report.rejected.push(Rejection { line, subject_id: id.clone(), reason });
        };
        if record.len() != header.len() {
            reject(format!("expected {} fields, found {}", header.len(), record.len()));
            continue;
        }
        if id.is_empty() {
            reject("empty subject id".into());
            continue;
        }
        if ids.contains(&id) {
            reject("duplicate subject id".into());
            continue;
        }
        let dataset = record[dataset_col].to_string();
        if dataset.is_empty() {
            reject("empty dataset label".into());
            continue;
        }
        let age = match record[age_col].parse::<f64>() {
            Ok(a) if a.is_finite() && a > 0.0 => a,
            _ => {
                reject(format!("invalid age `{}`", &record[age_col]));
                continue;
            }
        };
        let sex = match &record[sex_col] {
            "M" | "m" | "1" => 1,
            "F" | "f" | "0" => 0,
            other => {
                reject(format!("invalid sex `{other}`"));
                continue;
            }
        };
        let mut features = Vec::with_capacity(feature_cols.len());
        let mut bad = None;
        for (i, name) in &feature_cols {
            match record[*i].parse::<f64>() {
                Ok(v) if v.is_finite() => features.push(v),
                _ => {
                    bad = Some(format!("non-numeric value `{}` in `{name}`", &record[*i]));
                    break;
                }
            }
        }
        if let Some(reason) = bad {
            reject(reason);
            continue;
        }
        ids.insert(id.clone());
        if let Some(c) = diag_col {
            let label = record[c].to_string();
            diagnoses.push(Diagnosis { control: schema.is_control(&label), label });
        }
        datasets.push(dataset);
        subjects.push(Subject { id, age, sex, features });
    }

    if subjects.is_empty() {
        return Err(Error::EmptyTable { rejected: report.count() });
    }
    for r in &report.rejected {
        log::warn!("rejected line {} ({}): {}", r.line, r.subject_id, r.reason);
    }
    let columns = feature_cols.into_iter().map(|(_, n)| n).collect();
    let table = Table::new(subjects, columns, datasets, diag_col.map(|_| diagnoses))?;
    Ok((table, report))
}

/// Writes `table` using the default schema column names.
pub fn write_csv(table: &Table, writer: impl Write) -> Result<()> {
    let schema = SchemaConfig::default();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        schema.id_column.clone(),
        schema.dataset_column.clone(),
        schema.age_column.clone(),
        schema.sex_column.clone(),
    ];
    if table.diagnoses().is_some() {
        header.push(schema.diagnosis_column.clone());
    }
    header.extend(table.columns().iter().cloned());
    w.write_record(&header)?;
    for (i, s) in table.subjects().iter().enumerate() {
        let mut rec = vec![
            s.id.clone(),
            table.dataset_labels()[i].clone(),
            s.age.to_string(),
            if s.sex == 1 { "M".into() } else { "F".into() },
        ];
        if let Some(d) = table.diagnoses() {
            rec.push(d[i].label.clone());
        }
        rec.extend(s.features.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "subject_id,dataset,age,sex,vol_hippo,thick_frontal,notes\n\
                        s1,ABIDE,12.5,M,4000.5,2.5,x\n\
                        s2,ABIDE,14,F,4100,2.6,y\n\
                        s3,ADNI,70,1,3500,2.2,z\n";

    #[test]
    fn well_formed_file() {
        let (t, rep) = read_csv(GOOD.as_bytes(), &SchemaConfig::default()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(rep.count(), 0);
        assert_eq!(t.columns(), ["vol_hippo", "thick_frontal"]);
        assert_eq!(t.subjects()[1].sex, 0);
        assert!(t.diagnoses().is_none());
    }

    #[test]
    fn na_age_is_rejected() {
        let text = GOOD.replace("s2,ABIDE,14,", "s2,ABIDE,NA,");
        let (t, rep) = read_csv(text.as_bytes(), &SchemaConfig::default()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(rep.count(), 1);
        assert_eq!(rep.rejected[0].line, 3);
        assert_eq!(rep.rejected[0].subject_id, "s2");
    }

    #[test]
    fn malformed_rows_are_collected() {
        let text = format!("{GOOD}s4,ADNI,71,X,1,1,q\ns5,ADNI,72,F,abc,1,q\ns1,ADNI,73,F,1,1,q\ns6,ADNI,74,F,1\n");
        let (t, rep) = read_csv(text.as_bytes(), &SchemaConfig::default()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(rep.count(), 4);
        assert!(rep.rejected[1].reason.contains("vol_hippo"));
        assert!(rep.rejected[2].reason.contains("duplicate"));
    }

    #[test]
    fn missing_required_column() {
        let text = "subject_id,site,age,sex\na,X,3,M\n";
        match read_csv(text.as_bytes(), &SchemaConfig::default()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "dataset"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_valid_rows() {
        let text = "subject_id,dataset,age,sex\na,X,NA,M\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &SchemaConfig::default()),
            Err(Error::EmptyTable { rejected: 1 })
        ));
    }

    #[test]
    fn diagnosis_marks_controls() {
        let text = "subject_id,dataset,age,sex,diagnosis\na,X,3,M,Control\nb,X,4,F,ASD\nc,X,5,F,\n";
        let (t, _) = read_csv(text.as_bytes(), &SchemaConfig::default()).unwrap();
        assert!(t.is_control(0));
        assert!(!t.is_control(1));
        assert!(t.is_control(2));
    }

    #[test]
    fn schema_from_toml() {
        let s = SchemaConfig::from_toml("dataset_column = \"site\"\nfeature_prefixes = [\"fs_\"]\n").unwrap();
        assert_eq!(s.dataset_column, "site");
        assert_eq!(s.id_column, "subject_id");
        assert!(SchemaConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn write_then_read_preserves_table() {
        let text = "subject_id,dataset,age,sex,diagnosis,vol_a\na,X,3.25,M,control,0.1\nb,Y,4,F,AD,-2e-7\n";
        let (t, _) = read_csv(text.as_bytes(), &SchemaConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        let (back, rep) = read_csv(buf.as_slice(), &SchemaConfig::default()).unwrap();
        assert_eq!(rep.count(), 0);
        assert_eq!(back, t);
    }
}
