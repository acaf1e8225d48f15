//! Cohort and result files.
//!
//! Cohort CSV layout: a `subject_id` column, a `label` column, an optional
//! `site` column, covariates in columns prefixed `cov_`, and every other
//! column a numeric feature. Floats are written with 17 significant digits so
//! that a write/read round trip is exact.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{GdmError, Result};
use crate::inference::{AgreementCurve, InferenceResult};
use crate::model::{Cohort, Labels};

pub const SUBJECT_COLUMN: &str = "subject_id";
pub const LABEL_COLUMN: &str = "label";
pub const SITE_COLUMN: &str = "site";
pub const COVARIATE_PREFIX: &str = "cov_";

/// Round-trippable float text.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn parse_f64(text: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| GdmError::Parse {
        row,
        column: column.into(),
        message: format!("'{text}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(GdmError::Parse {
            row,
            column: column.into(),
            message: format!("'{text}' is not finite"),
        });
    }
    Ok(v)
}

/// Labels that all parse as numbers and take more than two values are real;
/// anything else is categorical.
pub fn infer_labels(raw: Vec<String>) -> Labels {
    let numeric: Option<Vec<f64>> = raw.iter().map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite())).collect();
    if let Some(values) = numeric {
        let distinct: HashSet<u64> = values.iter().map(|v| v.to_bits()).collect();
        if distinct.len() > 2 {
            return Labels::Real(values);
        }
    }
    Labels::Categorical(raw)
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h) {
            return Err(GdmError::Parse {
                row: 1,
                column: h.clone(),
                message: "duplicate column".into(),
            });
        }
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(Table { header, rows })
}

fn column(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

/// Load a single cohort CSV.
pub fn load_cohort(path: &Path) -> Result<Cohort> {
    let table = read_table(path)?;
    cohort_from_table(&table, None)
}

/// Load features (and covariates/site) from one CSV and labels from another,
/// joined on `subject_id`. Row order follows the feature file.
pub fn load_split(features: &Path, labels: &Path) -> Result<Cohort> {
    let table = read_table(features)?;
    let label_table = read_table(labels)?;
    let id_col = column(&label_table.header, SUBJECT_COLUMN).ok_or_else(|| missing(SUBJECT_COLUMN, labels))?;
    let label_col = column(&label_table.header, LABEL_COLUMN).ok_or_else(|| missing(LABEL_COLUMN, labels))?;
    let mut by_id = HashMap::new();
    for row in &label_table.rows {
        if by_id.insert(row[id_col].clone(), row[label_col].clone()).is_some() {
            return Err(GdmError::DuplicateId(row[id_col].clone()));
        }
    }
    cohort_from_table(&table, Some(&by_id))
}

fn missing(col: &str, path: &Path) -> GdmError {
    GdmError::Parse {
        row: 1,
        column: col.into(),
        message: format!("required column missing in {}", path.display()),
    }
}

fn cohort_from_table(table: &Table, labels_by_id: Option<&HashMap<String, String>>) -> Result<Cohort> {
    let h = &table.header;
    let id_col = column(h, SUBJECT_COLUMN).ok_or_else(|| GdmError::Parse {
        row: 1,
        column: SUBJECT_COLUMN.into(),
        message: "required column missing".into(),
    })?;
    let label_col = match labels_by_id {
        Some(_) => None,
        None => Some(column(h, LABEL_COLUMN).ok_or_else(|| GdmError::Parse {
            row: 1,
            column: LABEL_COLUMN.into(),
            message: "required column missing".into(),
        })?),
    };
    let site_col = column(h, SITE_COLUMN);
    let mut cov_cols = Vec::new();
    let mut feat_cols = Vec::new();
    for (i, name) in h.iter().enumerate() {
        if i == id_col || Some(i) == label_col || Some(i) == site_col || (labels_by_id.is_some() && name == LABEL_COLUMN) {
            continue;
        }
        if name.starts_with(COVARIATE_PREFIX) {
            cov_cols.push(i);
        } else {
            feat_cols.push(i);
        }
    }
    if feat_cols.is_empty() {
        return Err(GdmError::InvalidCohort("no feature columns".into()));
    }
    let n = table.rows.len();
    let mut features = DMatrix::zeros(n, feat_cols.len());
    let mut covariates = DMatrix::zeros(n, cov_cols.len());
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut sites = Vec::with_capacity(n);
    for (r, row) in table.rows.iter().enumerate() {
        // header is line 1
        let line = r + 2;
        let id = row[id_col].clone();
        let label = match (label_col, labels_by_id) {
            (Some(c), _) => row[c].clone(),
            (None, Some(map)) => map.get(&id).cloned().ok_or_else(|| GdmError::Parse {
                row: line,
                column: SUBJECT_COLUMN.into(),
                message: format!("no label for subject '{id}'"),
            })?,
            (None, None) => unreachable!(),
        };
        if label.is_empty() {
            return Err(GdmError::Parse {
                row: line,
                column: LABEL_COLUMN.into(),
                message: "empty label".into(),
            });
        }
        for (j, &c) in feat_cols.iter().enumerate() {
            features[(r, j)] = parse_f64(&row[c], line, &h[c])?;
        }
        for (j, &c) in cov_cols.iter().enumerate() {
            covariates[(r, j)] = parse_f64(&row[c], line, &h[c])?;
        }
        if let Some(c) = site_col {
            sites.push(row[c].clone());
        }
        ids.push(id);
        labels.push(label);
    }
    Cohort::new(
        features,
        infer_labels(labels),
        covariates,
        cov_cols.iter().map(|&c| h[c][COVARIATE_PREFIX.len()..].to_string()).collect(),
        site_col.map(|_| sites),
        feat_cols.iter().map(|&c| h[c].clone()).collect(),
        ids,
    )
}

fn label_text(labels: &Labels, i: usize) -> String {
    match labels {
        Labels::Categorical(v) => v[i].clone(),
        Labels::Real(v) => format_f64(v[i]),
    }
}

/// Write a cohort in the layout [`load_cohort`] reads.
pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![SUBJECT_COLUMN.to_string(), LABEL_COLUMN.to_string()];
    if cohort.site.is_some() {
        header.push(SITE_COLUMN.into());
    }
    header.extend(cohort.covariate_names.iter().map(|c| format!("{COVARIATE_PREFIX}{c}")));
    header.extend(cohort.feature_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..cohort.n() {
        let mut rec = vec![cohort.subject_ids[i].clone(), label_text(&cohort.labels, i)];
        if let Some(s) = &cohort.site {
            rec.push(s[i].clone());
        }
        rec.extend(cohort.covariates.row(i).iter().map(|&v| format_f64(v)));
        rec.extend(cohort.features.row(i).iter().map(|&v| format_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `feature_name,<value_name>` table.
pub fn write_parameter_table(path: &Path, feature_names: &[String], value_name: &str, values: &DVector<f64>) -> Result<()> {
    if feature_names.len() != values.len() {
        return Err(GdmError::DimensionMismatch {
            context: "parameter table",
            expected: feature_names.len(),
            found: values.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["feature_name", value_name])?;
    for (name, v) in feature_names.iter().zip(values.iter()) {
        w.write_record([name.as_str(), &format_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Covariate terms of a GDM fit: `w0` as `covariate,W0` and `a0` (d×k) as
/// `feature_name,<covariate>...`.
pub fn write_covariate_terms(
    w0_path: &Path,
    a0_path: &Path,
    covariate_names: &[String],
    feature_names: &[String],
    w0: &DVector<f64>,
    a0: &DMatrix<f64>,
) -> Result<()> {
    if covariate_names.len() != w0.len() || a0.shape() != (feature_names.len(), covariate_names.len()) {
        return Err(GdmError::DimensionMismatch {
            context: "covariate terms",
            expected: covariate_names.len(),
            found: w0.len(),
        });
    }
    let mut w = csv::Writer::from_path(w0_path)?;
    w.write_record(["covariate", "W0"])?;
    for (name, v) in covariate_names.iter().zip(w0.iter()) {
        w.write_record([name.as_str(), &format_f64(*v)])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(a0_path)?;
    let mut header = vec!["feature_name".to_string()];
    header.extend(covariate_names.iter().cloned());
    w.write_record(&header)?;
    for (r, name) in feature_names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(a0.row(r).iter().map(|&v| format_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `feature_name,J,sigma,p,q_rejected` per feature.
pub fn write_inference_table(path: &Path, feature_names: &[String], result: &InferenceResult) -> Result<()> {
    if feature_names.len() != result.statistic.len() {
        return Err(GdmError::DimensionMismatch {
            context: "inference table",
            expected: feature_names.len(),
            found: result.statistic.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["feature_name", "J", "sigma", "p", "q_rejected"])?;
    for (i, name) in feature_names.iter().enumerate() {
        w.write_record([
            name.as_str(),
            &format_f64(result.statistic[i]),
            &format_f64(result.sigma[i]),
            &format_f64(result.p_raw[i]),
            if result.rejected[i] { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `n_perm,mean_abs_error` rows of an agreement curve.
pub fn write_agreement(path: &Path, curve: &AgreementCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n_perm", "mean_abs_error"])?;
    for p in &curve.points {
        w.write_record([p.n_perm.to_string(), format_f64(p.mean_abs_error)])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Read a `feature_name,<value>` table back, e.g. for comparing runs.
pub fn read_parameter_table(path: &Path) -> Result<BTreeMap<String, f64>> {
    let table = read_table(path)?;
    if table.header.len() < 2 {
        return Err(GdmError::Parse {
            row: 1,
            column: String::new(),
            message: "expected at least two columns".into(),
        });
    }
    let mut out = BTreeMap::new();
    for (r, row) in table.rows.iter().enumerate() {
        let v = parse_f64(&row[1], r + 2, &table.header[1])?;
        if out.insert(row[0].clone(), v).is_some() {
            return Err(GdmError::DuplicateId(row[0].clone()));
        }
    }
    Ok(out)
}
