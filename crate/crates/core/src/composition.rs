//! Linear least-squares model from shape features to a composition value.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volumetry::ShapeFeatures;

/// Condition estimates above this are treated as rank deficiency.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionModel {
    pub feature_order: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub r_squared: f64,
    pub rmse: f64,
    pub n_samples: usize,
}

impl CompositionModel {
    pub fn new(feature_order: Vec<String>, coefficients: Vec<f64>, intercept: f64) -> Result<Self> {
        if feature_order.len() != coefficients.len() {
            return Err(Error::FeatureMismatch(format!(
                "{} feature names for {} coefficients",
                feature_order.len(),
                coefficients.len()
            )));
        }
        Ok(Self {
            feature_order,
            coefficients,
            intercept,
            fit: None,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let model: Self = serde_json::from_str(&text)?;
        Self::new(
            model.feature_order.clone(),
            model.coefficients.clone(),
            model.intercept,
        )?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Pulls this model's features out of a [`ShapeFeatures`] by name.
    pub fn select(&self, features: &ShapeFeatures) -> Result<Vec<f64>> {
        self.feature_order
            .iter()
            .map(|name| {
                features.get(name).ok_or_else(|| {
                    Error::FeatureMismatch(format!("model feature {name:?} is not a shape feature"))
                })
            })
            .collect()
    }
}

/// Default names: the shape-feature names for a full 7-column matrix,
/// otherwise `x1..xk`.
pub fn default_feature_names(k: usize) -> Vec<String> {
    if k == ShapeFeatures::LEN {
        ShapeFeatures::NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (1..=k).map(|i| format!("x{i}")).collect()
    }
}

/// Ordinary least squares with intercept.
///
/// Columns are centred and scaled to unit norm before forming the normal
/// equations, which are solved by Cholesky factorisation. The coefficients
/// are mapped back to the original feature units.
pub fn fit_linear(features: &[Vec<f64>], targets: &[f64]) -> Result<(CompositionModel, FitReport)> {
    let k = features.first().map_or(0, Vec::len);
    fit_linear_named(default_feature_names(k), features, targets)
}

pub fn fit_linear_named(
    feature_order: Vec<String>,
    features: &[Vec<f64>],
    targets: &[f64],
) -> Result<(CompositionModel, FitReport)> {
    let n = features.len();
    let k = feature_order.len();
    if targets.len() != n {
        return Err(Error::FeatureMismatch(format!(
            "{n} feature rows but {} targets",
            targets.len()
        )));
    }
    if let Some(bad) = features.iter().position(|r| r.len() != k) {
        return Err(Error::FeatureMismatch(format!(
            "row {bad} has {} features, expected {k}",
            features[bad].len()
        )));
    }
    if n < k + 1 {
        return Err(Error::InsufficientData {
            samples: n,
            required: k + 1,
        });
    }

    let nf = n as f64;
    let y_mean = targets.iter().sum::<f64>() / nf;
    let mean: Vec<f64> = (0..k)
        .map(|j| features.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();
    let norm: Vec<f64> = (0..k)
        .map(|j| {
            features
                .iter()
                .map(|r| (r[j] - mean[j]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    if norm.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return Err(Error::SingularSystem {
            condition: f64::INFINITY,
        });
    }
    let z = |i: usize, j: usize| (features[i][j] - mean[j]) / norm[j];

    let mut gram = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for i in 0..n {
        let yc = targets[i] - y_mean;
        for a in 0..k {
            let za = z(i, a);
            rhs[a] += za * yc;
            for b in 0..=a {
                gram[a][b] += za * z(i, b);
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[b][a] = gram[a][b];
        }
    }

    let chol = cholesky(&gram)?;
    let beta_z = chol.solve(&rhs);
    let coefficients: Vec<f64> = beta_z.iter().zip(&norm).map(|(b, s)| b / s).collect();
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&mean)
            .map(|(c, m)| c * m)
            .sum::<f64>();

    let mut model = CompositionModel::new(feature_order, coefficients, intercept)?;
    let report = evaluate(&model, features, targets)?;
    model.fit = Some(report);
    Ok((model, report))
}

/// Lower-triangular Cholesky factor.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Vec<Vec<f64>>,
}

/// Factors a symmetric positive-definite matrix. Fails with
/// [`Error::SingularSystem`] on a non-positive pivot or when the squared
/// pivot ratio exceeds [`MAX_CONDITION`].
pub fn cholesky(a: &[Vec<f64>]) -> Result<Cholesky> {
    let k = a.len();
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|p| l[i][p] * l[j][p]).sum();
            if i == j {
                let d = a[i][i] - dot;
                if !(d > 0.0) {
                    return Err(Error::SingularSystem {
                        condition: f64::INFINITY,
                    });
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - dot) / l[j][j];
            }
        }
    }
    let chol = Cholesky { l };
    let cond = chol.condition_estimate();
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularSystem { condition: cond });
    }
    Ok(chol)
}

impl Cholesky {
    /// `(max pivot / min pivot)²`, a lower bound on the 2-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let diag = (0..self.l.len()).map(|i| self.l[i][i]);
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
            (lo.min(d), hi.max(d))
        });
        if self.l.is_empty() {
            1.0
        } else {
            (hi / lo).powi(2)
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.l.len();
        let mut y = vec![0.0; k];
        for i in 0..k {
            let s: f64 = (0..i).map(|p| self.l[i][p] * y[p]).sum();
            y[i] = (b[i] - s) / self.l[i][i];
        }
        let mut x = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|p| self.l[p][i] * x[p]).sum();
            x[i] = (y[i] - s) / self.l[i][i];
        }
        x
    }
}

/// `intercept + Σ coefficient · feature`.
pub fn predict(model: &CompositionModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.coefficients.len() {
        return Err(Error::FeatureMismatch(format!(
            "model expects {} features, got {}",
            model.coefficients.len(),
            features.len()
        )));
    }
    Ok(model.intercept
        + model
            .coefficients
            .iter()
            .zip(features)
            .map(|(c, x)| c * x)
            .sum::<f64>())
}

pub fn predict_features(model: &CompositionModel, features: &ShapeFeatures) -> Result<f64> {
    predict(model, &model.select(features)?)
}

/// R² and RMSE of the model on the given set. R² is `1 − SSres/SStot` and
/// may be negative; with constant targets it is 1 for a perfect fit and 0
/// otherwise.
pub fn evaluate(
    model: &CompositionModel,
    features: &[Vec<f64>],
    targets: &[f64],
) -> Result<FitReport> {
    if features.len() != targets.len() {
        return Err(Error::FeatureMismatch(format!(
            "{} feature rows but {} targets",
            features.len(),
            targets.len()
        )));
    }
    let n = targets.len();
    if n == 0 {
        return Err(Error::InsufficientData {
            samples: 0,
            required: 1,
        });
    }
    let mean = targets.iter().sum::<f64>() / n as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (row, &y) in features.iter().zip(targets) {
        let r = y - predict(model, row)?;
        ss_res += r * r;
        ss_tot += (y - mean).powi(2);
    }
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= f64::EPSILON * mean.abs().max(1.0) * n as f64 {
        1.0
    } else {
        0.0
    };
    Ok(FitReport {
        r_squared,
        rmse: (ss_res / n as f64).sqrt(),
        n_samples: n,
    })
}

/// Feature table read from CSV: named feature columns, an optional `target`
/// column and an optional `id` column.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub feature_order: Vec<String>,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub targets: Option<Vec<f64>>,
}

impl Dataset {
    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let target_col = headers.iter().position(|h| h == "target");
        let id_col = headers.iter().position(|h| h == "id");
        let feature_cols: Vec<usize> = (0..headers.len())
            .filter(|&i| Some(i) != target_col && Some(i) != id_col)
            .collect();
        let mut ds = Dataset {
            feature_order: feature_cols
                .iter()
                .map(|&i| headers[i].to_string())
                .collect(),
            targets: target_col.map(|_| Vec::new()),
            ..Default::default()
        };
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let num = |i: usize| -> Result<f64> {
                record[i].parse::<f64>().map_err(|e| {
                    Error::FeatureMismatch(format!(
                        "row {}: column {:?}: {e}",
                        line + 1,
                        &headers[i]
                    ))
                })
            };
            ds.rows.push(
                feature_cols
                    .iter()
                    .map(|&i| num(i))
                    .collect::<Result<_>>()?,
            );
            if let (Some(t), Some(targets)) = (target_col, ds.targets.as_mut()) {
                targets.push(num(t)?);
            }
            ds.ids.push(match id_col {
                Some(i) => record[i].to_string(),
                None => (line + 1).to_string(),
            });
        }
        Ok(ds)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn targets(&self) -> Result<&[f64]> {
        self.targets
            .as_deref()
            .ok_or_else(|| Error::FeatureMismatch("data has no `target` column".into()))
    }

    /// Columns reordered to the model's feature order.
    pub fn columns_for(&self, model: &CompositionModel) -> Result<Vec<Vec<f64>>> {
        let idx: Vec<usize> = model
            .feature_order
            .iter()
            .map(|name| {
                self.feature_order
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::FeatureMismatch(format!("data lacks column {name:?}")))
            })
            .collect::<Result<_>>()?;
        Ok(self
            .rows
            .iter()
            .map(|r| idx.iter().map(|&i| r[i]).collect())
            .collect())
    }
}
