//! Trial data model, CSV ingestion and covariate scaling.
//!
//! A [`TrialDataset`] holds `n` subjects from a randomized trial: a covariate
//! matrix, the arm each subject received, a real-valued outcome (larger is
//! better) and the probability of the arm actually received. Only the
//! assigned-arm propensity is stored; every estimator consumes
//! `I(A_i = l) / pi(X_i)` and nothing else.

use std::fmt;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::PointCloud;

/// A treatment arm label in `1..=L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Arm(u16);

impl Arm {
    /// Panics if `label` is zero or does not fit in `u16`.
    pub fn new(label: usize) -> Self {
        assert!(label >= 1, "arm labels start at 1");
        Arm(u16::try_from(label).expect("arm label overflows u16"))
    }

    /// Arm from a zero-based index.
    pub fn from_index(index: usize) -> Self {
        Arm::new(index + 1)
    }

    pub fn label(self) -> usize {
        self.0 as usize
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Randomized-trial observations.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialDataset {
    covariate_names: Vec<String>,
    covariates: Array2<f64>,
    treatments: Vec<Arm>,
    outcomes: Vec<f64>,
    propensities: Vec<f64>,
    n_arms: usize,
}

impl TrialDataset {
    /// Validates and assembles a dataset.
    ///
    /// Requires `n >= 1`, `L >= 2`, finite covariates and outcomes,
    /// propensities in `(0, 1]`, labels in `1..=L`, and every arm present.
    pub fn new(
        covariates: Array2<f64>,
        treatments: Vec<Arm>,
        outcomes: Vec<f64>,
        propensities: Vec<f64>,
        n_arms: usize,
    ) -> Result<Self> {
        let p = covariates.ncols();
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::with_names(names, covariates, treatments, outcomes, propensities, n_arms)
    }

    pub fn with_names(
        covariate_names: Vec<String>,
        covariates: Array2<f64>,
        treatments: Vec<Arm>,
        outcomes: Vec<f64>,
        propensities: Vec<f64>,
        n_arms: usize,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if n == 0 {
            return Err(Error::InvalidDataset("dataset has no subjects".into()));
        }
        if covariates.ncols() == 0 {
            return Err(Error::InvalidDataset("dataset has no covariates".into()));
        }
        if n_arms < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 arms, got {n_arms}")));
        }
        if treatments.len() != n || outcomes.len() != n || propensities.len() != n {
            return Err(Error::InvalidDataset(format!(
                "column lengths differ: {n} covariate rows, {} treatments, {} outcomes, {} propensities",
                treatments.len(),
                outcomes.len(),
                propensities.len()
            )));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::DimensionMismatch {
                expected: covariates.ncols(),
                got: covariate_names.len(),
            });
        }
        for (i, row) in covariates.axis_iter(Axis(0)).enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::BadNumber {
                    row: i + 1,
                    column: covariate_names[j].clone(),
                });
            }
        }
        let mut counts = vec![0usize; n_arms];
        for (i, arm) in treatments.iter().enumerate() {
            if arm.label() > n_arms {
                return Err(Error::ArmOutOfRange {
                    row: i + 1,
                    label: arm.label() as i64,
                    n_arms,
                });
            }
            counts[arm.index()] += 1;
        }
        for (i, (&r, &pi)) in outcomes.iter().zip(&propensities).enumerate() {
            if !r.is_finite() {
                return Err(Error::BadNumber {
                    row: i + 1,
                    column: "outcome".into(),
                });
            }
            if !pi.is_finite() {
                return Err(Error::BadNumber {
                    row: i + 1,
                    column: "propensity".into(),
                });
            }
            if pi <= 0.0 {
                return Err(Error::NonPositivePropensity { row: i + 1 });
            }
            if pi > 1.0 {
                return Err(Error::PropensityAboveOne { row: i + 1 });
            }
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidDataset(format!(
                "arm {} has no subjects",
                missing + 1
            )));
        }
        let covariates = covariates.as_standard_layout().into_owned();
        Ok(TrialDataset {
            covariate_names,
            covariates,
            treatments,
            outcomes,
            propensities,
            n_arms,
        })
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariates(&self) -> ArrayView2<'_, f64> {
        self.covariates.view()
    }

    pub fn points(&self) -> PointCloud<'_> {
        PointCloud::from_view(self.covariates.view())
    }

    /// Row `i` of the covariate matrix as a contiguous slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.covariates.as_slice().expect("standard layout")[i * p..(i + 1) * p]
    }

    pub fn treatments(&self) -> &[Arm] {
        &self.treatments
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn propensities(&self) -> &[f64] {
        &self.propensities
    }

    /// Number of subjects on each arm, indexed by `Arm::index`.
    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_arms];
        for a in &self.treatments {
            counts[a.index()] += 1;
        }
        counts
    }

    /// Subset of subjects in the given order. Propensities are carried over
    /// unchanged.
    pub fn subset(&self, indices: &[usize]) -> Result<TrialDataset> {
        let covariates = self.covariates.select(Axis(0), indices);
        TrialDataset::with_names(
            self.covariate_names.clone(),
            covariates,
            indices.iter().map(|&i| self.treatments[i]).collect(),
            indices.iter().map(|&i| self.outcomes[i]).collect(),
            indices.iter().map(|&i| self.propensities[i]).collect(),
            self.n_arms,
        )
    }

    /// Same subjects with the covariate matrix replaced (e.g. after scaling).
    pub fn with_covariates(&self, covariates: Array2<f64>) -> Result<TrialDataset> {
        TrialDataset::with_names(
            self.covariate_names.clone(),
            covariates,
            self.treatments.clone(),
            self.outcomes.clone(),
            self.propensities.clone(),
            self.n_arms,
        )
    }

    /// Same subjects with covariate `j` removed.
    pub fn drop_covariate(&self, j: usize) -> Result<TrialDataset> {
        let keep: Vec<usize> = (0..self.p()).filter(|&c| c != j).collect();
        TrialDataset::with_names(
            keep.iter().map(|&c| self.covariate_names[c].clone()).collect(),
            self.covariates.select(Axis(1), &keep),
            self.treatments.clone(),
            self.outcomes.clone(),
            self.propensities.clone(),
            self.n_arms,
        )
    }

    /// Same subjects with every propensity multiplied by `factor`.
    pub fn with_propensities_scaled(&self, factor: f64) -> Result<TrialDataset> {
        TrialDataset::with_names(
            self.covariate_names.clone(),
            self.covariates.clone(),
            self.treatments.clone(),
            self.outcomes.clone(),
            self.propensities.iter().map(|p| p * factor).collect(),
            self.n_arms,
        )
    }

    /// Same subjects with outcomes replaced.
    pub fn with_outcomes(&self, outcomes: Vec<f64>) -> Result<TrialDataset> {
        TrialDataset::with_names(
            self.covariate_names.clone(),
            self.covariates.clone(),
            self.treatments.clone(),
            outcomes,
            self.propensities.clone(),
            self.n_arms,
        )
    }
}

/// Column naming for CSV ingestion.
#[derive(Clone, Debug)]
pub struct CsvSchema {
    pub treatment: String,
    pub outcome: String,
    pub propensity: String,
    /// Extra columns that are neither covariates nor trial fields.
    pub ignore: Vec<String>,
    /// Number of arms; inferred from the largest label when `None`.
    pub n_arms: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            treatment: "treatment".into(),
            outcome: "outcome".into(),
            propensity: "propensity".into(),
            ignore: Vec::new(),
            n_arms: None,
        }
    }
}

impl CsvSchema {
    fn is_reserved(&self, name: &str) -> bool {
        name == self.treatment
            || name == self.outcome
            || name == self.propensity
            || self.ignore.iter().any(|c| c == name)
    }
}

/// Raw table: header plus string cells, shared by the labeled and
/// covariate-only loaders.
struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.iter().map(str::to_owned).collect();
    let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Table { header, rows })
}

fn parse_f64(cell: &str, row: usize, column: &str) -> Result<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::BadNumber {
            row,
            column: column.to_owned(),
        })
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

impl Table {
    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn covariate_columns(&self, schema: &CsvSchema) -> Vec<usize> {
        (0..self.header.len())
            .filter(|&c| !schema.is_reserved(&self.header[c]))
            .collect()
    }

    fn covariate_matrix(&self, cols: &[usize]) -> Result<Array2<f64>> {
        let mut x = Array2::zeros((self.rows.len(), cols.len()));
        for (i, rec) in self.rows.iter().enumerate() {
            for (jj, &c) in cols.iter().enumerate() {
                let cell = rec.get(c).unwrap_or("");
                x[[i, jj]] = parse_f64(cell, i + 1, &self.header[c])?;
            }
        }
        Ok(x)
    }
}

/// Loads a labeled trial from CSV. Row numbers in errors count data rows
/// from 1 (the header is not counted).
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TrialDataset> {
    read_csv(open(path.as_ref())?, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<TrialDataset> {
    let table = read_table(reader)?;
    let t_col = table
        .column(&schema.treatment)
        .ok_or_else(|| Error::MissingColumn(schema.treatment.clone()))?;
    let r_col = table
        .column(&schema.outcome)
        .ok_or_else(|| Error::MissingColumn(schema.outcome.clone()))?;
    let p_col = table.column(&schema.propensity);
    let cov_cols = table.covariate_columns(schema);

    let mut labels = Vec::with_capacity(table.rows.len());
    let mut outcomes = Vec::with_capacity(table.rows.len());
    let mut given_props = Vec::new();
    for (i, rec) in table.rows.iter().enumerate() {
        let row = i + 1;
        let cell = rec.get(t_col).unwrap_or("");
        let label: i64 = cell.parse().map_err(|_| Error::BadNumber {
            row,
            column: schema.treatment.clone(),
        })?;
        labels.push(label);
        outcomes.push(parse_f64(rec.get(r_col).unwrap_or(""), row, &schema.outcome)?);
        if let Some(c) = p_col {
            let pi = parse_f64(rec.get(c).unwrap_or(""), row, &schema.propensity)?;
            if pi <= 0.0 {
                return Err(Error::NonPositivePropensity { row });
            }
            if pi > 1.0 {
                return Err(Error::PropensityAboveOne { row });
            }
            given_props.push(pi);
        }
    }
    let n_arms = match schema.n_arms {
        Some(l) => l,
        None => labels.iter().copied().max().unwrap_or(0).max(0) as usize,
    };
    let mut treatments = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        if label < 1 || label as usize > n_arms {
            return Err(Error::ArmOutOfRange {
                row: i + 1,
                label,
                n_arms,
            });
        }
        treatments.push(Arm::new(label as usize));
    }
    let propensities = if p_col.is_some() {
        given_props
    } else {
        empirical_propensities(&treatments, n_arms)
    };
    let covariates = table.covariate_matrix(&cov_cols)?;
    let names = cov_cols.iter().map(|&c| table.header[c].clone()).collect();
    TrialDataset::with_names(names, covariates, treatments, outcomes, propensities, n_arms)
}

/// Loads covariates only, skipping any trial columns that happen to be
/// present. Returns the covariate names alongside the matrix.
pub fn load_covariates_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
) -> Result<(Vec<String>, Array2<f64>)> {
    read_covariates_csv(open(path.as_ref())?, schema)
}

pub fn read_covariates_csv<R: Read>(
    reader: R,
    schema: &CsvSchema,
) -> Result<(Vec<String>, Array2<f64>)> {
    let table = read_table(reader)?;
    let cols = table.covariate_columns(schema);
    let x = table.covariate_matrix(&cols)?;
    Ok((cols.iter().map(|&c| table.header[c].clone()).collect(), x))
}

/// Reads an integer arm column (e.g. a stored regime) from a CSV.
pub fn load_arm_column(path: impl AsRef<Path>, column: &str, n_arms: usize) -> Result<Vec<Arm>> {
    let table = read_table(open(path.as_ref())?)?;
    let c = table
        .column(column)
        .ok_or_else(|| Error::MissingColumn(column.to_owned()))?;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let cell = rec.get(c).unwrap_or("");
            let label: i64 = cell.parse().map_err(|_| Error::BadNumber {
                row: i + 1,
                column: column.to_owned(),
            })?;
            if label < 1 || label as usize > n_arms {
                return Err(Error::ArmOutOfRange {
                    row: i + 1,
                    label,
                    n_arms,
                });
            }
            Ok(Arm::new(label as usize))
        })
        .collect()
}

/// Writes a labeled dataset, with optional extra integer columns appended
/// (e.g. the true optimal arm of each subject).
pub fn write_csv<W: std::io::Write>(
    dataset: &TrialDataset,
    writer: W,
    extra: &[(&str, &[Arm])],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = dataset.covariate_names().iter().map(String::as_str).collect();
    header.extend(["treatment", "outcome", "propensity"]);
    header.extend(extra.iter().map(|(name, _)| *name));
    w.write_record(&header)?;
    for i in 0..dataset.n() {
        let mut rec: Vec<String> = dataset.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(dataset.treatments()[i].to_string());
        rec.push(dataset.outcomes()[i].to_string());
        rec.push(dataset.propensities()[i].to_string());
        rec.extend(extra.iter().map(|(_, col)| col[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

/// `n_l / n` for each subject's assigned arm.
pub fn empirical_propensities(treatments: &[Arm], n_arms: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_arms];
    for a in treatments {
        if a.index() < n_arms {
            counts[a.index()] += 1;
        }
    }
    let n = treatments.len() as f64;
    treatments
        .iter()
        .map(|a| counts.get(a.index()).copied().unwrap_or(0) as f64 / n)
        .collect()
}

/// Per-covariate affine map of the training range onto `[-1, 1]`.
///
/// Values outside the training range extrapolate linearly. A constant
/// training column maps to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingParams {
    pub fn fit(covariates: ArrayView2<'_, f64>) -> ScalingParams {
        let (min, max) = covariates
            .axis_iter(Axis(1))
            .map(|col| {
                col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
            })
            .unzip();
        ScalingParams { min, max }
    }

    pub fn p(&self) -> usize {
        self.min.len()
    }

    pub fn scale_value(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range > 0.0 {
            2.0 * (v - self.min[j]) / range - 1.0
        } else {
            0.0
        }
    }

    pub fn unscale_value(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range > 0.0 {
            (v + 1.0) / 2.0 * range + self.min[j]
        } else {
            self.min[j]
        }
    }

    pub fn apply_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: x.len(),
            });
        }
        Ok(x.iter().enumerate().map(|(j, &v)| self.scale_value(j, v)).collect())
    }

    pub fn apply(&self, covariates: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if covariates.ncols() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: covariates.ncols(),
            });
        }
        let mut out = covariates.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.scale_value(j, *v);
            }
        }
        Ok(out)
    }

    pub fn invert(&self, scaled: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if scaled.ncols() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: scaled.ncols(),
            });
        }
        let mut out = scaled.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.unscale_value(j, *v);
            }
        }
        Ok(out)
    }
}

pub fn fit_scaling(dataset: &TrialDataset) -> ScalingParams {
    ScalingParams::fit(dataset.covariates())
}

pub fn apply_scaling(params: &ScalingParams, covariates: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    params.apply(covariates)
}

/// Fits scaling on `dataset` and returns it with scaled covariates.
pub fn scale_dataset(dataset: &TrialDataset) -> Result<(ScalingParams, TrialDataset)> {
    let params = fit_scaling(dataset);
    let scaled = params.apply(dataset.covariates())?;
    Ok((params, dataset.with_covariates(scaled)?))
}
