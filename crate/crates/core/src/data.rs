//! Panel ingestion, train-only standardization and synthetic data.
//!
//! A panel is a sequence of cross-sections, one per period. Each row of a
//! cross-section pairs an asset's excess return over the period with the
//! characteristics that were observable at the start of the period, so a
//! model fitted on period `t` can be applied directly to the feature rows of
//! period `t + 1`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("panel has no usable rows")]
    EmptyPanel,
    #[error("non-numeric cell in column `{column}` at line {line}: `{value}`")]
    NonNumericCell {
        column: String,
        line: usize,
        value: String,
    },
    #[error("column {0} has zero variance")]
    ZeroVarianceColumn(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("need at least {required} rows, got {actual}")]
    TooFewRows { required: usize, actual: usize },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One period of the panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub period: i64,
    pub asset_ids: Vec<String>,
    pub returns: Array1<f64>,
    pub features: Array2<f64>,
}

impl CrossSection {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// Returns as an `n × 1` target matrix.
    pub fn target(&self) -> Array2<f64> {
        self.returns.clone().insert_axis(Axis(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub cross_sections: Vec<CrossSection>,
    pub feature_names: Vec<String>,
    /// Rows discarded during ingestion because a field was missing or
    /// non-finite.
    #[serde(default)]
    pub dropped_rows: usize,
}

impl PanelDataset {
    pub fn n_periods(&self) -> usize {
        self.cross_sections.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_observations(&self) -> usize {
        self.cross_sections.iter().map(CrossSection::len).sum()
    }

    /// Checks the structural invariants: strictly increasing periods, a
    /// constant feature count, aligned row counts and finite values.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.cross_sections.is_empty() {
            return Err(DataError::EmptyPanel);
        }
        let p = self.feature_names.len();
        let mut last = None;
        for cs in &self.cross_sections {
            if let Some(prev) = last {
                if cs.period <= prev {
                    return Err(DataError::InvalidConfig(format!(
                        "periods not strictly increasing at {}",
                        cs.period
                    )));
                }
            }
            last = Some(cs.period);
            if cs.features.ncols() != p {
                return Err(DataError::DimensionMismatch {
                    expected: p,
                    actual: cs.features.ncols(),
                });
            }
            if cs.features.nrows() != cs.returns.len() || cs.asset_ids.len() != cs.returns.len() {
                return Err(DataError::DimensionMismatch {
                    expected: cs.returns.len(),
                    actual: cs.features.nrows(),
                });
            }
            if cs.returns.iter().chain(cs.features.iter()).any(|v| !v.is_finite()) {
                return Err(DataError::InvalidConfig(format!(
                    "non-finite value in period {}",
                    cs.period
                )));
            }
        }
        Ok(())
    }
}

/// Column names used to read a panel file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub period: String,
    pub asset: String,
    pub ret: String,
    /// Feature columns; `None` takes every remaining column in file order.
    pub features: Option<Vec<String>>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            period: "period".into(),
            asset: "asset".into(),
            ret: "ret_excess".into(),
            features: None,
        }
    }
}

const MISSING_MARKERS: [&str; 6] = ["", "NA", "N/A", "NaN", "nan", "null"];

fn is_missing(cell: &str) -> bool {
    MISSING_MARKERS.contains(&cell.trim())
}

/// Outcome of parsing a numeric cell: a value, or a missing marker.
fn parse_cell(cell: &str, column: &str, line: usize) -> Result<Option<f64>, DataError> {
    if is_missing(cell) {
        return Ok(None);
    }
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Ok(None),
        Err(_) => Err(DataError::NonNumericCell {
            column: column.to_string(),
            line,
            value: cell.to_string(),
        }),
    }
}

pub fn load_panel(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelDataset, DataError> {
    read_panel(File::open(path)?, schema)
}

/// Parses a panel from CSV. Rows with any missing or non-finite field are
/// dropped and counted; any other unparseable cell is an error.
pub fn read_panel<R: Read>(reader: R, schema: &PanelSchema) -> Result<PanelDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let period_idx = find(&schema.period)?;
    let asset_idx = find(&schema.asset)?;
    let ret_idx = find(&schema.ret)?;
    let feature_names: Vec<String> = match &schema.features {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![period_idx, asset_idx, ret_idx].contains(i))
            .map(|(_, h)| h.clone())
            .collect(),
    };
    if feature_names.is_empty() {
        return Err(DataError::MissingColumn("<feature>".into()));
    }
    let feature_idx = feature_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>, _>>()?;

    struct Rows {
        assets: Vec<String>,
        returns: Vec<f64>,
        features: Vec<f64>,
    }
    let mut groups: BTreeMap<i64, Rows> = BTreeMap::new();
    let mut dropped = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = i + 2;
        let period_cell = record.get(period_idx).unwrap_or("");
        if is_missing(period_cell) {
            dropped += 1;
            continue;
        }
        let period: i64 = period_cell.trim().parse().map_err(|_| DataError::NonNumericCell {
            column: schema.period.clone(),
            line,
            value: period_cell.to_string(),
        })?;
        let asset = record.get(asset_idx).unwrap_or("").trim().to_string();
        let ret = parse_cell(record.get(ret_idx).unwrap_or(""), &schema.ret, line)?;
        let mut feats = Vec::with_capacity(feature_idx.len());
        let mut missing = asset.is_empty() || ret.is_none();
        for (&fi, name) in feature_idx.iter().zip(&feature_names) {
            match parse_cell(record.get(fi).unwrap_or(""), name, line)? {
                Some(v) => feats.push(v),
                None => missing = true,
            }
        }
        if missing {
            dropped += 1;
            continue;
        }
        let g = groups.entry(period).or_insert_with(|| Rows {
            assets: Vec::new(),
            returns: Vec::new(),
            features: Vec::new(),
        });
        g.assets.push(asset);
        g.returns.push(ret.expect("checked above"));
        g.features.extend(feats);
    }
    if groups.is_empty() {
        return Err(DataError::EmptyPanel);
    }
    let p = feature_names.len();
    let cross_sections = groups
        .into_iter()
        .map(|(period, rows)| {
            let n = rows.returns.len();
            CrossSection {
                period,
                asset_ids: rows.assets,
                returns: Array1::from(rows.returns),
                features: Array2::from_shape_vec((n, p), rows.features)
                    .expect("row-major features"),
            }
        })
        .collect();
    Ok(PanelDataset {
        cross_sections,
        feature_names,
        dropped_rows: dropped,
    })
}

/// Writes the panel in the CSV layout `period,asset,ret_excess,<features>`
/// with 17 significant digits per value.
pub fn write_panel<W: Write>(panel: &PanelDataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["period".to_string(), "asset".into(), "ret_excess".into()];
    header.extend(panel.feature_names.iter().cloned());
    w.write_record(&header)?;
    for cs in &panel.cross_sections {
        for i in 0..cs.len() {
            let mut rec = vec![
                cs.period.to_string(),
                cs.asset_ids[i].clone(),
                format!("{:.16e}", cs.returns[i]),
            ];
            rec.extend(cs.features.row(i).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_panel(panel: &PanelDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_panel(panel, File::create(path)?)
}

/// Per-column location and scale fitted on a training block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Array1<f64>,
    pub sds: Array1<f64>,
}

impl Standardizer {
    pub fn identity(p: usize) -> Self {
        Self {
            means: Array1::zeros(p),
            sds: Array1::ones(p),
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }
}

/// Column means and unbiased (n − 1) standard deviations.
pub fn column_stats(x: ArrayView2<'_, f64>) -> (Array1<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let means = x.sum_axis(Axis(0)) / n;
    let mut sds = Array1::zeros(x.ncols());
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let m = means[j];
        let ss: f64 = col.iter().map(|v| (v - m) * (v - m)).sum();
        sds[j] = (ss / (n - 1.0)).sqrt();
    }
    (means, sds)
}

pub fn fit_standardizer(features: ArrayView2<'_, f64>) -> Result<Standardizer, DataError> {
    if features.nrows() < 2 {
        return Err(DataError::TooFewRows {
            required: 2,
            actual: features.nrows(),
        });
    }
    let (means, sds) = column_stats(features);
    for (j, (&sd, &m)) in sds.iter().zip(means.iter()).enumerate() {
        if !(sd > f64::EPSILON * m.abs().max(1.0)) {
            return Err(DataError::ZeroVarianceColumn(j));
        }
    }
    Ok(Standardizer { means, sds })
}

/// Applies a fitted standardizer. Test blocks are not re-normalized.
pub fn apply_standardizer(
    s: &Standardizer,
    features: ArrayView2<'_, f64>,
) -> Result<Array2<f64>, DataError> {
    if features.ncols() != s.dim() {
        return Err(DataError::DimensionMismatch {
            expected: s.dim(),
            actual: features.ncols(),
        });
    }
    let mut out = features.to_owned();
    for mut row in out.rows_mut() {
        for ((v, m), sd) in row.iter_mut().zip(s.means.iter()).zip(s.sds.iter()) {
            *v = (*v - m) / sd;
        }
    }
    Ok(out)
}

/// Map from latent index to response score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Linear,
    Tanh,
    Cubic,
    /// `softplus(w) − ln 2 + ½·tanh(w)`
    SoftplusMix,
}

impl Link {
    pub fn apply(self, w: f64) -> f64 {
        match self {
            Link::Linear => w,
            Link::Tanh => w.tanh(),
            Link::Cubic => w * w * w,
            Link::SoftplusMix => softplus(w) - std::f64::consts::LN_2 + 0.5 * w.tanh(),
        }
    }
}

impl std::str::FromStr for Link {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Link::Linear),
            "tanh" => Ok(Link::Tanh),
            "cubic" => Ok(Link::Cubic),
            "softplus_mix" => Ok(Link::SoftplusMix),
            other => Err(DataError::InvalidConfig(format!("unknown link `{other}`"))),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Gaussian,
    Skewed,
}

impl std::str::FromStr for Regime {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(Regime::Gaussian),
            "skewed" => Ok(Regime::Skewed),
            other => Err(DataError::InvalidConfig(format!("unknown regime `{other}`"))),
        }
    }
}

fn default_latent_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub k_true: usize,
    pub link: Link,
    pub noise_sd: f64,
    pub regime: Regime,
    pub seed: u64,
    /// Scale of the inner coefficient matrix; sets how far the latent index
    /// reaches into the nonlinear part of the link.
    #[serde(default = "default_latent_scale")]
    pub latent_scale: f64,
}

impl SynthConfig {
    pub fn new(n: usize, p: usize, q: usize, k_true: usize, link: Link, seed: u64) -> Self {
        Self {
            n,
            p,
            q,
            k_true,
            link,
            noise_sd: 0.0,
            regime: Regime::Gaussian,
            seed,
            latent_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n == 0 || self.p == 0 || self.q == 0 || self.k_true == 0 {
            return Err(DataError::InvalidConfig("all counts must be >= 1".into()));
        }
        if self.k_true > self.p {
            return Err(DataError::InvalidConfig(format!(
                "k_true = {} exceeds p = {}",
                self.k_true, self.p
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(DataError::InvalidConfig("noise_sd must be finite and >= 0".into()));
        }
        if !(self.latent_scale > 0.0 && self.latent_scale.is_finite()) {
            return Err(DataError::InvalidConfig("latent_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Generating matrices: `x = v·P + ε_x`, `u = link(v·B)`, `y = u·Q + ε_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    /// `k × p`, orthonormal rows.
    pub p_true: Array2<f64>,
    /// `k × k`, a scaled orthogonal matrix.
    pub b_true: Array2<f64>,
    /// `k × q`.
    pub q_true: Array2<f64>,
}

impl SyntheticTruth {
    /// Coefficient directions `Pᵀ·B·Q` (`p × q`).
    pub fn coefficient_directions(&self) -> Array2<f64> {
        self.p_true.t().dot(&self.b_true).dot(&self.q_true)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub truth: SyntheticTruth,
    /// Latent draws `v` (`n × k`).
    pub latent: Array2<f64>,
}

/// Log-scale spread of the skewing transform. A lognormal with this
/// log-sd has skewness (e^{a²} + 2)·√(e^{a²} − 1) ≈ 0.99.
pub const SKEW_LOG_SD: f64 = 0.31;

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

pub fn draw_truth(cfg: &SynthConfig) -> SyntheticTruth {
    let mut rng = rng_for(cfg.seed, "synthetic/truth");
    let (k, p, q) = (cfg.k_true, cfg.p, cfg.q);
    let p_true = linalg::orthonormal_columns(gaussian_matrix(&mut rng, p, k).view())
        .t()
        .to_owned();
    let b_true = linalg::orthonormal_columns(gaussian_matrix(&mut rng, k, k).view()) * cfg.latent_scale;
    let q_true = gaussian_matrix(&mut rng, k, q) / (k as f64).sqrt();
    SyntheticTruth {
        p_true,
        b_true,
        q_true,
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData, DataError> {
    cfg.validate()?;
    let truth = draw_truth(cfg);
    Ok(sample_from_truth(cfg, &truth, "synthetic/sample"))
}

/// Draws `cfg.n` rows from fixed generating matrices; `label` selects the
/// random stream.
pub fn sample_from_truth(cfg: &SynthConfig, truth: &SyntheticTruth, label: &str) -> SyntheticData {
    let mut rng = rng_for(cfg.seed, label);
    let (n, p, q, k) = (cfg.n, cfg.p, cfg.q, cfg.k_true);
    let latent = gaussian_matrix(&mut rng, n, k);
    let mut x = latent.dot(&truth.p_true);
    if cfg.noise_sd > 0.0 {
        x += &(gaussian_matrix(&mut rng, n, p) * cfg.noise_sd);
    }
    let u = latent.dot(&truth.b_true).mapv(|w| cfg.link.apply(w));
    let mut y = u.dot(&truth.q_true);
    if cfg.noise_sd > 0.0 {
        y += &(gaussian_matrix(&mut rng, n, q) * cfg.noise_sd);
    }
    if cfg.regime == Regime::Skewed {
        skew_columns(&mut x, truth, cfg.noise_sd);
    }
    SyntheticData {
        x,
        y,
        truth: truth.clone(),
        latent,
    }
}

/// `x ← (exp(c·x) − E[exp(c·x)]) / sd`, with `c` set per column from the
/// column's theoretical standard deviation so the log-scale spread is
/// [`SKEW_LOG_SD`]. Uses population moments, not sample ones.
fn skew_columns(x: &mut Array2<f64>, truth: &SyntheticTruth, noise_sd: f64) {
    let a2 = SKEW_LOG_SD * SKEW_LOG_SD;
    let mean = (0.5 * a2).exp();
    let sd = ((a2.exp() - 1.0) * a2.exp()).sqrt();
    for (j, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
        let var = truth.p_true.column(j).iter().map(|v| v * v).sum::<f64>() + noise_sd * noise_sd;
        if var <= 0.0 {
            continue;
        }
        let c = SKEW_LOG_SD / var.sqrt();
        col.mapv_inplace(|v| ((c * v).exp() - mean) / sd);
    }
}

/// A stationary synthetic panel: one set of generating matrices, fresh
/// draws each period. Requires `q = 1`; the response is the return column.
pub fn synthetic_panel(
    cfg: &SynthConfig,
    periods: usize,
) -> Result<(PanelDataset, SyntheticTruth), DataError> {
    cfg.validate()?;
    if cfg.q != 1 {
        return Err(DataError::InvalidConfig("panel generation needs q = 1".into()));
    }
    let truth = draw_truth(cfg);
    let cross_sections = (0..periods)
        .map(|t| {
            let d = sample_from_truth(cfg, &truth, &format!("synthetic/period/{t}"));
            CrossSection {
                period: t as i64,
                asset_ids: (0..cfg.n).map(|i| format!("A{i:05}")).collect(),
                returns: d.y.column(0).to_owned(),
                features: d.x,
            }
        })
        .collect();
    let panel = PanelDataset {
        cross_sections,
        feature_names: (0..cfg.p).map(|j| format!("f{j}")).collect(),
        dropped_rows: 0,
    };
    Ok((panel, truth))
}

/// Stacks the feature rows of several cross-sections.
pub fn stack_features(sections: &[&CrossSection]) -> Array2<f64> {
    let p = sections.first().map_or(0, |c| c.features.ncols());
    let n: usize = sections.iter().map(|c| c.len()).sum();
    let mut out = Array2::zeros((n, p));
    let mut r = 0;
    for c in sections {
        out.slice_mut(s![r..r + c.len(), ..]).assign(&c.features);
        r += c.len();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    const SIX_ROWS: &str = "period,asset,ret_excess,f1,f2
1,A,0.01,1.0,2.0
1,B,0.02,1.5,2.5
1,C,-0.01,0.5,1.0
2,A,0.03,1.1,2.1
2,B,0.00,1.4,2.4
2,C,0.02,0.6,1.1
";

    #[test]
    fn parses_two_periods() {
        let panel = read_panel(SIX_ROWS.as_bytes(), &PanelSchema::default()).unwrap();
        assert_eq!(panel.n_periods(), 2);
        assert_eq!(panel.n_features(), 2);
        assert!(panel.cross_sections.iter().all(|c| c.len() == 3));
        assert_eq!(panel.dropped_rows, 0);
        assert_eq!(panel.cross_sections[1].features[[0, 1]], 2.1);
        panel.validate().unwrap();
    }

    #[test]
    fn na_row_is_dropped() {
        let csv = SIX_ROWS.replace("1,B,0.02,1.5,2.5", "1,B,0.02,NA,2.5");
        let panel = read_panel(csv.as_bytes(), &PanelSchema::default()).unwrap();
        assert_eq!(panel.dropped_rows, 1);
        assert_eq!(panel.cross_sections[0].len(), 2);
    }

    #[test]
    fn missing_return_column() {
        let csv = "period,asset,f1\n1,A,0.5\n";
        match read_panel(csv.as_bytes(), &PanelSchema::default()) {
            Err(DataError::MissingColumn(c)) => assert_eq!(c, "ret_excess"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_names_location() {
        let csv = SIX_ROWS.replace("2,B,0.00", "2,B,abc");
        match read_panel(csv.as_bytes(), &PanelSchema::default()) {
            Err(DataError::NonNumericCell { column, line, .. }) => {
                assert_eq!(column, "ret_excess");
                assert_eq!(line, 6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_panel() {
        let csv = "period,asset,ret_excess,f1\n1,A,NA,0.5\n";
        assert!(matches!(
            read_panel(csv.as_bytes(), &PanelSchema::default()),
            Err(DataError::EmptyPanel)
        ));
    }

    #[test]
    fn two_point_statistics() {
        let s = fit_standardizer(array![[1.0], [3.0]].view()).unwrap();
        assert_eq!(s.means[0], 2.0);
        assert!((s.sds[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_column_rejected() {
        let x = array![[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]];
        assert!(matches!(
            fit_standardizer(x.view()),
            Err(DataError::ZeroVarianceColumn(0))
        ));
    }

    #[test]
    fn apply_affine_maps() {
        let id = Standardizer::identity(1);
        assert_eq!(apply_standardizer(&id, array![[2.0]].view()).unwrap(), array![[2.0]]);
        let s = Standardizer {
            means: array![2.0],
            sds: array![2.0],
        };
        assert_eq!(
            apply_standardizer(&s, array![[4.0], [0.0]].view()).unwrap(),
            array![[1.0], [-1.0]]
        );
        assert!(matches!(
            apply_standardizer(&s, array![[1.0, 2.0]].view()),
            Err(DataError::DimensionMismatch { expected: 1, actual: 2 })
        ));
    }

    #[test]
    fn standardized_sample_is_a_fixed_point() {
        let raw = gaussian_matrix(&mut rng_for(3, "t"), 100, 3);
        let s = fit_standardizer(raw.view()).unwrap();
        let z = apply_standardizer(&s, raw.view()).unwrap();
        let s2 = fit_standardizer(z.view()).unwrap();
        let z2 = apply_standardizer(&s2, z.view()).unwrap();
        for (a, b) in z.iter().zip(z2.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn noiseless_linear_is_exactly_linear() {
        let cfg = SynthConfig::new(100, 4, 1, 1, Link::Linear, 7);
        let d = generate_synthetic(&cfg).unwrap();
        let (beta, _) = linalg::lstsq(d.x.view(), d.y.view());
        let resid = &d.y - &d.x.dot(&beta);
        let norm = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "residual norm {norm}");
        // and reproducible from the truth matrices
        let mech = d.x.dot(&d.truth.coefficient_directions());
        let gap = (&d.y - &mech).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(gap <= 1e-8);
    }

    #[test]
    fn generation_is_deterministic() {
        let mut cfg = SynthConfig::new(50, 5, 2, 2, Link::Tanh, 11);
        cfg.noise_sd = 0.3;
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        cfg.seed = 12;
        assert_ne!(generate_synthetic(&cfg).unwrap().x, a.x);
    }

    #[test]
    fn invalid_config() {
        let cfg = SynthConfig::new(10, 2, 1, 3, Link::Linear, 0);
        assert!(matches!(generate_synthetic(&cfg), Err(DataError::InvalidConfig(_))));
        let cfg = SynthConfig::new(0, 2, 1, 1, Link::Linear, 0);
        assert!(generate_synthetic(&cfg).is_err());
    }
}
