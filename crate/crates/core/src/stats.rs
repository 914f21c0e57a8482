//! Data statistics consumed by the formulations: proximity weights and the
//! Gaussian summary (mean, covariance and inverse Cholesky factor) behind the
//! l1 Mahalanobis closeness term.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorecard::{DataPoint, Scorecard};

/// Number of times the ridge is multiplied by 10 after a failed factorization.
const RIDGE_ESCALATIONS: usize = 4;
/// Pivots below this fraction of the largest diagonal entry are treated as zero.
const CHOLESKY_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WeightMethod {
    #[default]
    #[serde(rename = "range", alias = "inverse_range")]
    InverseRange,
    #[serde(rename = "mad", alias = "inverse_mad")]
    InverseMad,
}

impl std::str::FromStr for WeightMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "range" | "inverse_range" => Ok(Self::InverseRange),
            "mad" | "inverse_mad" => Ok(Self::InverseMad),
            _ => Err(Error::Argument(format!(
                "unknown weight method `{s}` (expected range|mad)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityWeights {
    pub w: Vec<f64>,
    pub method: WeightMethod,
}

/// Transform-space samples, one row per observation, columns in scorecard
/// feature order once [`Dataset::aligned`] has been applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Dataset {
    /// Reads comma-separated text with a header row of feature names.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let names: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Schema(format!("sample data header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Schema(format!("sample data row {}: {e}", line + 1)))?;
            let row = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                        Error::Schema(format!(
                            "sample data row {}: `{field}` is not a finite number",
                            line + 1
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { names, rows })
    }

    /// Reorders columns to the scorecard's feature order, dropping extras.
    pub fn aligned(&self, sc: &Scorecard) -> Result<Self> {
        let idx = sc
            .features
            .iter()
            .map(|f| {
                self.names
                    .iter()
                    .position(|n| *n == f.name)
                    .ok_or_else(|| Error::validation(&f.name, "feature missing from sample data"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            names: sc.features.iter().map(|f| f.name.clone()).collect(),
            rows: self.rows.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect(),
        })
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

pub fn compute_weights(
    sc: &Scorecard,
    x: &DataPoint,
    rows: Option<&Dataset>,
    method: WeightMethod,
) -> Result<ProximityWeights> {
    let w = match method {
        WeightMethod::InverseRange => sc
            .features
            .iter()
            .zip(x.values())
            .map(|(f, &xi)| {
                let values = f.bins.iter().map(|b| b.transform_value).chain(std::iter::once(xi));
                let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                inverse_or_one(hi - lo)
            })
            .collect(),
        WeightMethod::InverseMad => {
            let data = rows
                .filter(|d| !d.rows.is_empty())
                .ok_or_else(|| Error::EmptyData("inverse MAD weights require sample rows".into()))?;
            if data.rows.iter().any(|r| r.len() != sc.num_features()) {
                return Err(Error::Argument(
                    "sample rows do not match the scorecard's features".into(),
                ));
            }
            (0..sc.num_features())
                .map(|j| inverse_or_one(mad(&data.column(j))))
                .collect()
        }
    };
    Ok(ProximityWeights { w, method })
}

fn inverse_or_one(spread: f64) -> f64 {
    if spread > 0.0 && spread.is_finite() {
        1.0 / spread
    } else {
        1.0
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median absolute deviation around the median (unscaled).
pub fn mad(column: &[f64]) -> f64 {
    let mut v = column.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = column.iter().map(|x| (x - m).abs()).collect();
    median(&mut dev)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Lower-triangular `F` with `FᵀF = (Σ + ridge·I)⁻¹`.
    pub factor: Vec<Vec<f64>>,
    pub ridge: f64,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `F (x' − μ)`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.factor
            .iter()
            .enumerate()
            .map(|(i, row)| (0..=i).map(|j| row[j] * (x[j] - self.mean[j])).sum())
            .collect()
    }

    /// `‖F (x' − μ)‖₁`.
    pub fn l1_closeness(&self, x: &[f64]) -> f64 {
        self.residual(x).iter().map(|r| r.abs()).sum()
    }

    /// Builds the factor from a known covariance (ridge defaults to
    /// `1e-8·trace(Σ)/p`), escalating the ridge when Σ is not positive definite.
    pub fn from_covariance(mean: Vec<f64>, covariance: Vec<Vec<f64>>, ridge: Option<f64>) -> Result<Self> {
        let p = mean.len();
        if p == 0 || covariance.len() != p || covariance.iter().any(|r| r.len() != p) {
            return Err(Error::Argument(
                "covariance must be a p×p matrix matching the mean".into(),
            ));
        }
        if let Some(r) = ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Argument("ridge must be a nonnegative finite number".into()));
            }
        }
        for i in 0..p {
            for j in 0..i {
                if (covariance[i][j] - covariance[j][i]).abs() > 1e-10 {
                    return Err(Error::Argument("covariance is not symmetric".into()));
                }
            }
        }
        let trace: f64 = (0..p).map(|i| covariance[i][i]).sum();
        let default_ridge = 1e-8 * trace / p as f64;
        let start = ridge.unwrap_or(default_ridge);
        let base = if start > 0.0 {
            start
        } else if default_ridge > 0.0 {
            default_ridge
        } else {
            1e-8
        };
        let attempts = std::iter::once(start).chain((1..=RIDGE_ESCALATIONS).map(|k| base * 10f64.powi(k as i32)));
        for r in attempts {
            let mut m = covariance.clone();
            for (i, row) in m.iter_mut().enumerate() {
                row[i] += r;
            }
            if let Some(l) = cholesky(&m) {
                return Ok(Self {
                    mean,
                    covariance,
                    factor: invert_lower(&l),
                    ridge: r,
                });
            }
        }
        Err(Error::Singularity(format!(
            "covariance + ridge·I is not positive definite after {RIDGE_ESCALATIONS} ridge escalations"
        )))
    }
}

pub fn compute_gaussian_stats(data: &Dataset, ridge: Option<f64>) -> Result<GaussianStats> {
    let n = data.rows.len();
    if n < 2 {
        return Err(Error::EmptyData(format!("covariance needs at least 2 rows, got {n}")));
    }
    let p = data.rows[0].len();
    if p == 0 || data.rows.iter().any(|r| r.len() != p) {
        return Err(Error::Argument("sample rows have inconsistent lengths".into()));
    }
    let mean: Vec<f64> = (0..p)
        .map(|j| data.rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![vec![0.0; p]; p];
    for r in &data.rows {
        for i in 0..p {
            let di = r[i] - mean[i];
            for j in 0..=i {
                cov[i][j] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..p {
        for j in 0..=i {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    GaussianStats::from_covariance(mean, cov, ridge)
}

/// Lower Cholesky factor `L` with `L Lᵀ = m`, or `None` when a pivot is not
/// safely positive.
fn cholesky(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let p = m.len();
    let scale = (0..p).map(|i| m[i][i].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    let mut l = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if !(d > CHOLESKY_REL_TOL * scale) {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

fn invert_lower(l: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = l.len();
    let mut inv = vec![vec![0.0; p]; p];
    for col in 0..p {
        inv[col][col] = 1.0 / l[col][col];
        for i in col + 1..p {
            let s: f64 = (col..i).map(|k| l[i][k] * inv[k][col]).sum();
            inv[i][col] = -s / l[i][i];
        }
    }
    inv
}
