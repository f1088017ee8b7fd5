//! Zero-shot difficulty prediction.
//!
//! A ridge regression on principal components of standardized question
//! features, fit to `log Â` on a historical corpus. Hyperparameters are
//! chosen by grouped K-fold cross-validation so that questions sharing a
//! template (group) are always held out together.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocator::ordered_map;
use crate::error::{Error, Result};
use crate::mestimation::solve_linear;
use crate::sampledata::QuestionFeatures;
use crate::stats;

/// Targets below this are clamped before taking logs.
pub const TARGET_FLOOR: f64 = 1e-8;

/// Dense matrix stored row-major with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMajor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RowMajor {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        RowMajor {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub feature_means: Vec<f64>,
    pub feature_sds: Vec<f64>,
    /// Columns standardized but appended after the projection instead of
    /// entering the PCA.
    #[serde(default)]
    pub bypass_columns: Vec<usize>,
    /// Loadings, (number of projected columns) × p.
    pub pca_basis: RowMajor,
    /// Share of standardized variance carried by each retained component.
    pub explained_variance: Vec<f64>,
    pub pca_var_frac: f64,
    pub ridge_intercept: f64,
    /// One coefficient per component, then one per bypass column.
    pub ridge_coefs: Vec<f64>,
    pub ridge_penalty: f64,
    /// SHA-256 of the training corpus.
    pub trained_on: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    #[serde(default = "default_frac")]
    pub pca_var_frac: f64,
    /// When set, the variance fraction is cross-validated over this grid
    /// instead of fixed at `pca_var_frac`.
    #[serde(default)]
    pub pca_var_grid: Option<Vec<f64>>,
    #[serde(default = "default_ridge_grid")]
    pub ridge_grid: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bypass_columns: Vec<usize>,
}

fn default_frac() -> f64 {
    0.9
}

fn default_ridge_grid() -> Vec<f64> {
    vec![0.0, 0.01, 0.1, 1.0, 10.0, 100.0]
}

fn default_folds() -> usize {
    5
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            pca_var_frac: default_frac(),
            pca_var_grid: None,
            ridge_grid: default_ridge_grid(),
            folds: default_folds(),
            seed: 0,
            bypass_columns: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub spearman: f64,
    pub pearson: f64,
    pub rmse: f64,
    pub r2: f64,
}

impl Metrics {
    /// Metrics of `pred` against `truth`, both on the log scale. R² is 0
    /// when the truth has no variance beyond rounding.
    pub fn compute(truth: &[f64], pred: &[f64]) -> Self {
        let n = truth.len() as f64;
        let sse: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
        let m = stats::mean(truth);
        let sst: f64 = truth.iter().map(|t| (t - m).powi(2)).sum();
        Metrics {
            spearman: stats::spearman(truth, pred),
            pearson: stats::pearson(truth, pred),
            rmse: (sse / n).sqrt(),
            r2: if sst > 1e-24 * n * m.abs().max(1.0).powi(2) { 1.0 - sse / sst } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub pca_var_frac: f64,
    pub penalty: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFitReport {
    pub pooled: Metrics,
    pub per_fold: Vec<FoldMetrics>,
    pub selected_penalty: f64,
    pub selected_pca_var_frac: f64,
    pub cv_curve: Vec<CvPoint>,
    #[serde(with = "ordered_map")]
    pub folds: Vec<(String, usize)>,
    /// Held-out `log Ã` at the selected configuration.
    #[serde(with = "ordered_map")]
    pub oos_log_predictions: Vec<(String, f64)>,
}

/// Assigns each question a fold: distinct groups are sorted, shuffled by
/// `seed`, and dealt round-robin, so co-grouped questions share a fold.
pub fn group_kfold_split(group_ids: &[String], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let mut groups: Vec<&str> = group_ids
        .iter()
        .map(String::as_str)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if folds < 2 {
        return Err(Error::invalid(format!("folds = {folds} must be at least 2")));
    }
    if folds > groups.len() {
        return Err(Error::invalid(format!(
            "{folds} folds requested but only {} distinct groups",
            groups.len()
        )));
    }
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: HashMap<&str, usize> = groups.iter().enumerate().map(|(i, g)| (*g, i % folds)).collect();
    Ok(group_ids.iter().map(|g| fold_of[g.as_str()]).collect())
}

/// Training data in matrix form.
struct Corpus {
    ids: Vec<String>,
    groups: Vec<String>,
    z: DMatrix<f64>,
    y: DVector<f64>,
}

fn corpus(features: &[QuestionFeatures], targets: &BTreeMap<String, f64>) -> Result<Corpus> {
    let first = features.first().ok_or(Error::NoRecords)?;
    let k = first.z.len();
    let mut seen = BTreeSet::new();
    let mut y = Vec::with_capacity(features.len());
    for f in features {
        if f.z.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: f.z.len(),
            });
        }
        if !seen.insert(f.question_id.as_str()) {
            return Err(Error::invalid(format!("duplicate question `{}`", f.question_id)));
        }
        let t = *targets
            .get(&f.question_id)
            .ok_or_else(|| Error::invalid(format!("no target for question `{}`", f.question_id)))?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::invalid(format!(
                "question `{}`: target {t} must be positive",
                f.question_id
            )));
        }
        y.push(t.max(TARGET_FLOOR).ln());
    }
    Ok(Corpus {
        ids: features.iter().map(|f| f.question_id.clone()).collect(),
        groups: features.iter().map(|f| f.group_id.clone()).collect(),
        z: DMatrix::from_fn(features.len(), k, |i, j| features[i].z[j]),
        y: DVector::from_vec(y),
    })
}

/// Standardization and projection fitted on a set of rows.
struct Projection {
    means: Vec<f64>,
    sds: Vec<f64>,
    pca_cols: Vec<usize>,
    bypass: Vec<usize>,
    basis: DMatrix<f64>,
    explained: Vec<f64>,
}

impl Projection {
    fn fit(z: &DMatrix<f64>, frac: f64, bypass: &[usize]) -> Self {
        let k = z.ncols();
        let mut means = Vec::with_capacity(k);
        let mut sds = Vec::with_capacity(k);
        for j in 0..k {
            let col: Vec<f64> = z.column(j).iter().copied().collect();
            let sd = stats::sample_var(&col).sqrt();
            means.push(stats::mean(&col));
            sds.push(if sd > 0.0 { sd } else { 1.0 });
        }
        let pca_cols: Vec<usize> = (0..k).filter(|j| !bypass.contains(j)).collect();
        let mut p = Projection {
            means,
            sds,
            pca_cols,
            bypass: bypass.to_vec(),
            basis: DMatrix::zeros(0, 0),
            explained: Vec::new(),
        };
        let s = p.standardize(z);
        let x = s.select_columns(&p.pca_cols);
        let kp = x.ncols();
        let n = x.nrows();
        if kp == 0 || n < 2 {
            p.basis = DMatrix::zeros(kp, 0);
            return p;
        }
        let cov = x.transpose() * &x / (n - 1) as f64;
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..kp).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        let mut keep = Vec::new();
        let mut cum = 0.0;
        if total > 0.0 {
            for &i in &order {
                let v = eig.eigenvalues[i];
                if v <= 1e-12 * total || cum >= frac - 1e-12 {
                    break;
                }
                cum += v / total;
                keep.push(i);
                p.explained.push(v / total);
            }
        }
        let mut basis = DMatrix::zeros(kp, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            let mut v = eig.eigenvectors.column(i).clone_owned();
            // Deterministic sign: the largest-magnitude loading is positive.
            let (arg, _) = v
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |b, (r, x)| if x.abs() > b.1 + 1e-12 { (r, x.abs()) } else { b });
            if v[arg] < 0.0 {
                v = -v;
            }
            basis.set_column(c, &v);
        }
        p.basis = basis;
        p
    }

    fn standardize(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| (z[(i, j)] - self.means[j]) / self.sds[j])
    }

    /// Regression design: component scores, then bypass columns.
    fn design(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let s = self.standardize(z);
        let scores = s.select_columns(&self.pca_cols) * &self.basis;
        let extra = s.select_columns(&self.bypass);
        let mut t = DMatrix::zeros(z.nrows(), scores.ncols() + extra.ncols());
        t.columns_mut(0, scores.ncols()).copy_from(&scores);
        t.columns_mut(scores.ncols(), extra.ncols()).copy_from(&extra);
        t
    }
}

/// Ridge with unpenalized intercept, via the centered normal equations.
fn ridge(t: &DMatrix<f64>, y: &DVector<f64>, penalty: f64) -> Result<(f64, DVector<f64>)> {
    let n = t.nrows() as f64;
    let p = t.ncols();
    let ybar = y.sum() / n;
    if p == 0 {
        return Ok((ybar, DVector::zeros(0)));
    }
    let tbar = t.row_mean();
    let mut tc = t.clone();
    for mut row in tc.row_iter_mut() {
        row -= &tbar;
    }
    let yc = y.add_scalar(-ybar);
    let mut gram = tc.transpose() * &tc;
    for i in 0..p {
        gram[(i, i)] += penalty;
    }
    let beta = solve_linear(&gram, &(tc.transpose() * yc), "ridge normal equations")?;
    Ok((ybar - tbar.transpose().dot(&beta), beta))
}

struct Fitted {
    proj: Projection,
    intercept: f64,
    coefs: DVector<f64>,
}

fn check_config(cfg: &MetaConfig, k: usize) -> Result<Vec<f64>> {
    let fracs = cfg.pca_var_grid.clone().unwrap_or_else(|| vec![cfg.pca_var_frac]);
    if fracs.is_empty() || fracs.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::invalid("PCA variance fractions must lie in (0, 1]"));
    }
    if cfg.ridge_grid.is_empty() || cfg.ridge_grid.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(Error::invalid("ridge grid must be nonempty and nonnegative"));
    }
    if let Some(&b) = cfg.bypass_columns.iter().find(|&&b| b >= k) {
        return Err(Error::invalid(format!("bypass column {b} out of range for {k} features")));
    }
    Ok(fracs)
}

fn fingerprint(c: &Corpus) -> String {
    let mut h = Sha256::new();
    for i in 0..c.ids.len() {
        h.update(c.ids[i].as_bytes());
        h.update([0]);
        h.update(c.groups[i].as_bytes());
        h.update([0]);
        for v in c.z.row(i).iter() {
            h.update(v.to_le_bytes());
        }
        h.update(c.y[i].to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn into_model(f: Fitted, penalty: f64, frac: f64, trained_on: String) -> MetaModel {
    MetaModel {
        feature_means: f.proj.means,
        feature_sds: f.proj.sds,
        bypass_columns: f.proj.bypass,
        pca_basis: RowMajor::from_matrix(&f.proj.basis),
        explained_variance: f.proj.explained,
        pca_var_frac: frac,
        ridge_intercept: f.intercept,
        ridge_coefs: f.coefs.iter().copied().collect(),
        ridge_penalty: penalty,
        trained_on,
    }
}

fn fit_rows(z: &DMatrix<f64>, y: &DVector<f64>, frac: f64, bypass: &[usize], penalty: f64) -> Result<Fitted> {
    let proj = Projection::fit(z, frac, bypass);
    let (intercept, coefs) = ridge(&proj.design(z), y, penalty)?;
    Ok(Fitted {
        proj,
        intercept,
        coefs,
    })
}

/// Fits the pipeline on all data at a fixed configuration, without
/// cross-validation.
pub fn fit_fixed(
    features: &[QuestionFeatures],
    targets: &BTreeMap<String, f64>,
    pca_var_frac: f64,
    penalty: f64,
    bypass_columns: &[usize],
) -> Result<MetaModel> {
    let c = corpus(features, targets)?;
    let cfg = MetaConfig {
        pca_var_frac,
        ridge_grid: vec![penalty],
        bypass_columns: bypass_columns.to_vec(),
        ..MetaConfig::default()
    };
    check_config(&cfg, c.z.ncols())?;
    let f = fit_rows(&c.z, &c.y, pca_var_frac, bypass_columns, penalty)?;
    Ok(into_model(f, penalty, pca_var_frac, fingerprint(&c)))
}

/// Cross-validated fit: selects the configuration with the smallest pooled
/// held-out squared error in log difficulty (earliest grid entry on ties),
/// then refits on all data.
pub fn fit(
    features: &[QuestionFeatures],
    targets: &BTreeMap<String, f64>,
    cfg: &MetaConfig,
) -> Result<(MetaModel, MetaFitReport)> {
    let c = corpus(features, targets)?;
    let fracs = check_config(cfg, c.z.ncols())?;
    let fold_of = group_kfold_split(&c.groups, cfg.folds, cfg.seed)?;
    let n = c.ids.len();

    // Held-out log predictions for every (frac, penalty) pair, per fold.
    let per_fold: Vec<Vec<Vec<(usize, f64)>>> = (0..cfg.folds)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
            let zt = c.z.select_rows(&train);
            let yt = c.y.select_rows(&train);
            let zh = c.z.select_rows(&test);
            let mut out = Vec::new();
            for &frac in &fracs {
                let proj = Projection::fit(&zt, frac, &cfg.bypass_columns);
                let design = proj.design(&zt);
                let held = proj.design(&zh);
                for &alpha in &cfg.ridge_grid {
                    let (b0, b) = ridge(&design, &yt, alpha)?;
                    let pred = (&held * &b).add_scalar(b0);
                    out.push(test.iter().copied().zip(pred.iter().copied()).collect());
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let configs: Vec<(f64, f64)> = fracs
        .iter()
        .flat_map(|&f| cfg.ridge_grid.iter().map(move |&a| (f, a)))
        .collect();
    let pooled_preds = |ci: usize| {
        let mut p = vec![0.0; n];
        for fold in &per_fold {
            for &(i, v) in &fold[ci] {
                p[i] = v;
            }
        }
        p
    };
    let mut cv_curve = Vec::with_capacity(configs.len());
    let mut best = 0;
    for (ci, &(frac, penalty)) in configs.iter().enumerate() {
        let p = pooled_preds(ci);
        let mse = p.iter().zip(c.y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
        if mse < cv_curve.get(best).map_or(f64::INFINITY, |b: &CvPoint| b.mse) {
            best = ci;
        }
        cv_curve.push(CvPoint {
            pca_var_frac: frac,
            penalty,
            mse,
        });
    }
    let (frac, penalty) = configs[best];
    let oos = pooled_preds(best);
    let truth: Vec<f64> = c.y.iter().copied().collect();
    let per_fold_metrics = (0..cfg.folds)
        .map(|fold| {
            let idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
            let t: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
            let p: Vec<f64> = idx.iter().map(|&i| oos[i]).collect();
            FoldMetrics {
                fold,
                n: idx.len(),
                metrics: Metrics::compute(&t, &p),
            }
        })
        .collect();
    let report = MetaFitReport {
        pooled: Metrics::compute(&truth, &oos),
        per_fold: per_fold_metrics,
        selected_penalty: penalty,
        selected_pca_var_frac: frac,
        cv_curve,
        folds: c.ids.iter().cloned().zip(fold_of.iter().copied()).collect(),
        oos_log_predictions: c.ids.iter().cloned().zip(oos).collect(),
    };
    let fitted = fit_rows(&c.z, &c.y, frac, &cfg.bypass_columns, penalty)?;
    Ok((into_model(fitted, penalty, frac, fingerprint(&c)), report))
}

impl MetaModel {
    pub fn n_features(&self) -> usize {
        self.feature_means.len()
    }

    /// `log Ã` for one feature vector.
    pub fn predict_log(&self, z: &[f64]) -> Result<f64> {
        let k = self.n_features();
        if z.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: z.len(),
            });
        }
        let s: Vec<f64> = (0..k).map(|j| (z[j] - self.feature_means[j]) / self.feature_sds[j]).collect();
        let basis = self.pca_basis.to_matrix();
        let pca: Vec<f64> = (0..k)
            .filter(|j| !self.bypass_columns.contains(j))
            .map(|j| s[j])
            .collect();
        let scores = DVector::from_vec(pca).transpose() * basis;
        let mut out = self.ridge_intercept;
        for (b, t) in self.ridge_coefs.iter().zip(scores.iter()) {
            out += b * t;
        }
        for (b, &j) in self.ridge_coefs[scores.len()..].iter().zip(&self.bypass_columns) {
            out += b * s[j];
        }
        Ok(out)
    }

    /// Predicted difficulty `Ã = exp(φ̂(z))` per question, in input order.
    pub fn predict(&self, features: &[QuestionFeatures]) -> Result<Vec<(String, f64)>> {
        features
            .iter()
            .map(|f| Ok((f.question_id.clone(), self.predict_log(&f.z)?.exp())))
            .collect()
    }

    /// The fitted log-linear map in the original feature units:
    /// `log Ã = intercept + Σ_j slope_j z_j`.
    pub fn raw_coefficients(&self) -> (f64, Vec<f64>) {
        let k = self.n_features();
        let intercept = self.predict_log(&self.feature_means.clone()).expect("own dimension");
        let slopes = (0..k)
            .map(|j| {
                let mut z = self.feature_means.clone();
                z[j] += 1.0;
                self.predict_log(&z).expect("own dimension") - intercept
            })
            .collect::<Vec<_>>();
        let at_zero = intercept - slopes.iter().zip(&self.feature_means).map(|(s, m)| s * m).sum::<f64>();
        (at_zero, slopes)
    }
}
