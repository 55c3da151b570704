//! Monte Carlo validation campaigns over banks of random systems.
//!
//! Each system gets its own ChaCha stream (`seed`, stream = system index), so
//! a campaign is a pure function of its config and independent of the order
//! in which systems are processed.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::{self, simulate, StateRange, StateSpaceModel};
use crate::predictors::{
    predict, resolve_gamma, GammaChoice, GammaSource, NoiseModel, PredictionProblem, PredictorKind,
};
use crate::signal::SignalMatrix;
use crate::uncertainty::{confidence_region, estimated_mse, DofPolicy};

/// Predictor labels used in configs, reports, and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PredictorId {
    #[serde(rename = "Pinv")]
    Pinv,
    #[serde(rename = "Sub")]
    Sub,
    #[serde(rename = "SMM")]
    Smm,
    #[serde(rename = "WD")]
    Wd,
    #[serde(rename = "MSE-MB")]
    MseMb,
    #[serde(rename = "MSE-Sub")]
    MseSub,
    #[serde(rename = "MSE-SMM")]
    MseSmm,
    #[serde(rename = "MSE-WD")]
    MseWd,
}

impl PredictorId {
    pub const ALL: [PredictorId; 8] =
        [Self::Pinv, Self::Sub, Self::Smm, Self::Wd, Self::MseMb, Self::MseSub, Self::MseSmm, Self::MseWd];

    pub fn label(self) -> &'static str {
        match self {
            Self::Pinv => "Pinv",
            Self::Sub => "Sub",
            Self::Smm => "SMM",
            Self::Wd => "WD",
            Self::MseMb => "MSE-MB",
            Self::MseSub => "MSE-Sub",
            Self::MseSmm => "MSE-SMM",
            Self::MseWd => "MSE-WD",
        }
    }

    pub fn kind(self) -> PredictorKind {
        match self {
            Self::Pinv => PredictorKind::Pinv,
            Self::Sub => PredictorKind::Sub,
            Self::Smm => PredictorKind::Smm,
            Self::Wd => PredictorKind::Wd,
            _ => PredictorKind::MinMse,
        }
    }

    /// Gamma source of a minimum-MSE variant; `None` for the other predictors.
    /// The model-based variant needs `model`.
    pub fn gamma_source(self, model: Option<&StateSpaceModel>) -> Result<Option<GammaSource>> {
        Ok(match self {
            Self::MseMb => Some(GammaSource::ModelBased(model.ok_or(Error::MissingGammaSource)?.clone())),
            Self::MseSub => Some(GammaSource::DataDriven(GammaChoice::Sub)),
            Self::MseSmm => Some(GammaSource::DataDriven(GammaChoice::Smm)),
            Self::MseWd => Some(GammaSource::DataDriven(GammaChoice::Wd)),
            _ => None,
        })
    }
}

impl std::fmt::Display for PredictorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for PredictorId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|p| p.label().to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown predictor '{s}'")))
    }
}

/// Free-response map used to build a confidence region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionGamma {
    #[serde(rename = "CR-MB")]
    ModelBased,
    #[serde(rename = "CR-Sub")]
    Sub,
    #[serde(rename = "CR-SMM")]
    Smm,
    #[serde(rename = "CR-WD")]
    Wd,
}

impl RegionGamma {
    pub const ALL: [RegionGamma; 4] = [Self::ModelBased, Self::Sub, Self::Smm, Self::Wd];

    pub fn label(self) -> &'static str {
        match self {
            Self::ModelBased => "CR-MB",
            Self::Sub => "CR-Sub",
            Self::Smm => "CR-SMM",
            Self::Wd => "CR-WD",
        }
    }

    /// The model-based variant needs `model`.
    pub fn source(self, model: Option<&StateSpaceModel>) -> Result<GammaSource> {
        Ok(match self {
            Self::ModelBased => GammaSource::ModelBased(model.ok_or(Error::MissingGammaSource)?.clone()),
            Self::Sub => GammaSource::DataDriven(GammaChoice::Sub),
            Self::Smm => GammaSource::DataDriven(GammaChoice::Smm),
            Self::Wd => GammaSource::DataDriven(GammaChoice::Wd),
        })
    }
}

impl std::fmt::Display for RegionGamma {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for RegionGamma {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let bare = lower.strip_prefix("cr-").unwrap_or(&lower);
        match bare {
            "mb" => Ok(Self::ModelBased),
            "sub" => Ok(Self::Sub),
            "smm" => Ok(Self::Smm),
            "wd" => Ok(Self::Wd),
            _ => Err(Error::InvalidArgument(format!("unknown gamma source '{s}'"))),
        }
    }
}

/// How the prediction problem's initial condition is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcMode {
    /// Initial state from the stationary distribution under unit-Gaussian
    /// input (`x ~ N(0, W_c)`), Gaussian past inputs, simulated, then noise
    /// added to `y_ini`. For an H2-normalized model the noise-free outputs
    /// have unit variance.
    #[default]
    SimulatedPrefix,
    /// As `SimulatedPrefix` but with `x ~ N(0, I)` in the model's own coordinates.
    UnitState,
    /// Gaussian `(u_ini, y_ini)`; the true response starts from the
    /// least-squares state consistent with them.
    RawGaussian,
}

fn default_channels() -> usize {
    1
}

/// Campaign parameters; the JSON form uses these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub n_systems: usize,
    pub n_x_range: StateRange,
    #[serde(default = "default_channels")]
    pub n_u: usize,
    #[serde(default = "default_channels")]
    pub n_y: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "L0")]
    pub l0: usize,
    #[serde(rename = "Lp")]
    pub lp: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub sigma2: f64,
    pub p_levels: Vec<f64>,
    pub predictors: Vec<PredictorId>,
    pub gamma_sources: Vec<RegionGamma>,
    pub seed: u64,
    #[serde(default)]
    pub ic_mode: IcMode,
}

impl CampaignConfig {
    /// Desk-scale defaults: 200 SISO systems with 3 to 8 states,
    /// `L = 20, L0 = 8, Lp = 12, M = 320`.
    pub fn desk(sigma2: f64, seed: u64) -> Self {
        Self {
            n_systems: 200,
            n_x_range: StateRange { min: 3, max: 8 },
            n_u: 1,
            n_y: 1,
            l: 20,
            l0: 8,
            lp: 12,
            m: 320,
            sigma2,
            p_levels: vec![0.95, 0.99],
            predictors: vec![
                PredictorId::Sub,
                PredictorId::Smm,
                PredictorId::Wd,
                PredictorId::MseMb,
                PredictorId::MseSub,
                PredictorId::MseSmm,
                PredictorId::MseWd,
            ],
            gamma_sources: RegionGamma::ALL.to_vec(),
            seed,
            ic_mode: IcMode::SimulatedPrefix,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_systems == 0 {
            return bad("n_systems must be positive".into());
        }
        StateRange::new(self.n_x_range.min, self.n_x_range.max)?;
        if self.n_u == 0 || self.n_y == 0 {
            return bad("n_u and n_y must be positive".into());
        }
        if self.l0 == 0 || self.lp == 0 || self.l0 + self.lp != self.l {
            return bad(format!("need L0 + Lp = L with both positive (L={}, L0={}, Lp={})", self.l, self.l0, self.lp));
        }
        if self.l0 < self.n_x_range.max.div_ceil(self.n_y) {
            return bad(format!("L0 = {} cannot cover observability index of {} states", self.l0, self.n_x_range.max));
        }
        if self.m == 0 {
            return bad("M must be positive".into());
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return bad(format!("sigma2 = {} must be finite and >= 0", self.sigma2));
        }
        if let Some(p) = self.p_levels.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return bad(format!("confidence level {p} outside (0, 1)"));
        }
        if self.predictors.is_empty() {
            return bad("no predictors configured".into());
        }
        Ok(())
    }
}

/// Per-system outcome for one predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorRecord {
    pub predictor: PredictorId,
    /// `|y - y0|^2`.
    pub squared_error: f64,
    /// Membership of `y0`, indexed `[gamma source][p level]`; empty without noise.
    pub contains: Vec<Vec<bool>>,
    /// Estimated MSE per gamma source; empty without noise.
    pub estimated_mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub system_index: usize,
    pub n_x: usize,
    pub predictors: Vec<PredictorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub predictor: PredictorId,
    pub gamma_source: RegionGamma,
    pub p: f64,
    /// `None` when regions are degenerate (zero noise).
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseCell {
    pub predictor: PredictorId,
    pub gamma_source: RegionGamma,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub coverage: Vec<CoverageCell>,
    /// `(1/N) sum |y - y0|^2` per predictor, in config order.
    pub empirical_mse: Vec<(PredictorId, f64)>,
    pub estimated_mse: Vec<MseCell>,
    pub records: Vec<RunRecord>,
}

impl CampaignReport {
    pub fn coverage(&self, predictor: PredictorId, source: RegionGamma, p: f64) -> Option<f64> {
        self.coverage
            .iter()
            .find(|c| c.predictor == predictor && c.gamma_source == source && c.p == p)
            .and_then(|c| c.fraction)
    }

    pub fn empirical_mse(&self, predictor: PredictorId) -> Option<f64> {
        self.empirical_mse.iter().find(|(p, _)| *p == predictor).map(|(_, v)| *v)
    }

    pub fn estimated_mse(&self, predictor: PredictorId, source: RegionGamma) -> Option<f64> {
        self.estimated_mse.iter().find(|c| c.predictor == predictor && c.gamma_source == source).and_then(|c| c.mean)
    }

    /// Whether coverage was computed (false for noise-free campaigns).
    pub fn has_regions(&self) -> bool {
        self.config.sigma2 > 0.0
    }
}

/// Sum that does not depend on how the input is chunked.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2..=8 => v.iter().sum(),
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

/// Deterministic per-system generator.
pub fn system_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn gaussian_samples<R: Rng + ?Sized>(rng: &mut R, n: usize, width: usize) -> Vec<DVector<f64>> {
    (0..n).map(|_| DVector::from_fn(width, |_, _| StandardNormal.sample(rng))).collect()
}

fn noise_samples<R: Rng + ?Sized>(rng: &mut R, n: usize, width: usize, sigma2: f64) -> Vec<DVector<f64>> {
    let normal = Normal::new(0.0, sigma2.sqrt()).expect("valid std");
    (0..n).map(|_| DVector::from_fn(width, |_, _| normal.sample(rng))).collect()
}

fn stacked(v: &[DVector<f64>]) -> DVector<f64> {
    let refs: Vec<&DVector<f64>> = v.iter().collect();
    linalg::vstack_vec(&refs)
}

/// `S` with `S S^T = W_c`, via the symmetric eigendecomposition of the Gramian.
fn stationary_factor(model: &StateSpaceModel) -> Result<DMatrix<f64>> {
    let mut w = lti::controllability_gramian(model)?;
    linalg::symmetrize(&mut w);
    let eig = w.symmetric_eigen();
    let mut s = eig.eigenvectors;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        s.column_mut(j).scale_mut(lam.max(0.0).sqrt());
    }
    Ok(s)
}

/// A prediction problem together with its noise-free truth.
pub struct DrawnProblem {
    pub problem: PredictionProblem,
    pub y_true: DVector<f64>,
}

/// Draws `(u_ini, y_ini, u)` and the true future output per `mode`.
pub fn draw_problem<R: Rng + ?Sized>(
    model: &StateSpaceModel,
    l0: usize,
    lp: usize,
    sigma2: f64,
    mode: IcMode,
    rng: &mut R,
) -> Result<DrawnProblem> {
    let (n_u, n_y, n_x) = (model.n_u(), model.n_y(), model.n_x());
    match mode {
        IcMode::SimulatedPrefix | IcMode::UnitState => {
            let z = DVector::from_fn(n_x, |_, _| StandardNormal.sample(rng));
            let x_ini = match mode {
                IcMode::SimulatedPrefix => stationary_factor(model)? * z,
                _ => z,
            };
            let u_all = gaussian_samples(rng, l0 + lp, n_u);
            let clean = simulate(model, &x_ini, &u_all, None)?;
            let eps = noise_samples(rng, l0, n_y, sigma2);
            let y_ini = stacked(&clean.outputs()[..l0]) + stacked(&eps);
            Ok(DrawnProblem {
                problem: PredictionProblem::new(stacked(&u_all[..l0]), y_ini, stacked(&u_all[l0..])),
                y_true: stacked(&clean.outputs()[l0..]),
            })
        }
        IcMode::RawGaussian => {
            let u_all = gaussian_samples(rng, l0 + lp, n_u);
            let y_ini = stacked(&gaussian_samples(rng, l0, n_y));
            let forced = simulate(model, &DVector::zeros(n_x), &u_all[..l0], None)?;
            let obs = lti::extended_observability(model, l0);
            let x_ls = linalg::pinv(&obs) * (&y_ini - stacked(forced.outputs()));
            let clean = simulate(model, &x_ls, &u_all, None)?;
            Ok(DrawnProblem {
                problem: PredictionProblem::new(stacked(&u_all[..l0]), y_ini, stacked(&u_all[l0..])),
                y_true: stacked(&clean.outputs()[l0..]),
            })
        }
    }
}

fn run_system(config: &CampaignConfig, index: usize) -> Result<RunRecord> {
    let mut rng = system_rng(config.seed, index);
    let model = lti::random_system(config.n_x_range, config.n_u, config.n_y, &mut rng)?;

    // One experiment of M L + L0 samples; the Page construction keeps the first M L.
    let n_samples = config.m * config.l + config.l0;
    let inputs = gaussian_samples(&mut rng, n_samples, config.n_u);
    let noise = noise_samples(&mut rng, n_samples, config.n_y, config.sigma2);
    let data = simulate(&model, &DVector::zeros(model.n_x()), &inputs, Some(&noise))?;
    let sm = SignalMatrix::build_page(&data, config.l, config.l0)?;
    debug_assert_eq!(sm.m(), config.m);

    let drawn = draw_problem(&model, config.l0, config.lp, config.sigma2, config.ic_mode, &mut rng)?;
    let noise_model = NoiseModel::iid(config.sigma2)?;
    let with_regions = config.sigma2 > 0.0;

    let mut region_gammas: Vec<std::sync::Arc<DMatrix<f64>>> = Vec::new();
    if with_regions {
        for src in &config.gamma_sources {
            region_gammas.push(resolve_gamma(&sm, &src.source(Some(&model))?, &noise_model)?);
        }
    }

    let mut records = Vec::with_capacity(config.predictors.len());
    for &pid in &config.predictors {
        let source = pid.gamma_source(Some(&model))?;
        let result = predict(&sm, &drawn.problem, pid.kind(), &noise_model, source.as_ref())?;
        let squared_error = (&result.y - &drawn.y_true).norm_squared();
        let mut contains = Vec::new();
        let mut est = Vec::new();
        for gamma in &region_gammas {
            let mut row = Vec::with_capacity(config.p_levels.len());
            for &p in &config.p_levels {
                let region = confidence_region(&result, gamma, &noise_model, p, DofPolicy::OutputDimension)?;
                row.push(region.contains(&drawn.y_true)?);
            }
            contains.push(row);
            est.push(estimated_mse(gamma, &result, &noise_model)?);
        }
        records.push(PredictorRecord { predictor: pid, squared_error, contains, estimated_mse: est });
    }
    Ok(RunRecord { system_index: index, n_x: model.n_x(), predictors: records })
}

/// Runs the campaign, processing systems in parallel.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignReport> {
    run_campaign_with(config, true)
}

pub fn run_campaign_with(config: &CampaignConfig, parallel: bool) -> Result<CampaignReport> {
    config.validate()?;
    let tag = |i: usize| move |e: Error| Error::Campaign { seed_index: i, source: Box::new(e) };
    let results: Vec<Result<RunRecord>> = if parallel {
        (0..config.n_systems).into_par_iter().map(|i| run_system(config, i).map_err(tag(i))).collect()
    } else {
        (0..config.n_systems).map(|i| run_system(config, i).map_err(tag(i))).collect()
    };
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(aggregate(config.clone(), records))
}

fn aggregate(config: CampaignConfig, records: Vec<RunRecord>) -> CampaignReport {
    let with_regions = config.sigma2 > 0.0;
    let mut coverage = Vec::new();
    let mut estimated = Vec::new();
    let mut empirical = Vec::new();
    for (k, &pid) in config.predictors.iter().enumerate() {
        let errs: Vec<f64> = records.iter().map(|r| r.predictors[k].squared_error).collect();
        empirical.push((pid, mean(&errs)));
        for (s, &src) in config.gamma_sources.iter().enumerate() {
            for (j, &p) in config.p_levels.iter().enumerate() {
                let fraction = with_regions.then(|| {
                    let hits: Vec<f64> =
                        records.iter().map(|r| if r.predictors[k].contains[s][j] { 1.0 } else { 0.0 }).collect();
                    mean(&hits)
                });
                coverage.push(CoverageCell { predictor: pid, gamma_source: src, p, fraction });
            }
            let mean_est = with_regions.then(|| {
                let v: Vec<f64> = records.iter().map(|r| r.predictors[k].estimated_mse[s]).collect();
                mean(&v)
            });
            estimated.push(MseCell { predictor: pid, gamma_source: src, mean: mean_est });
        }
    }
    CampaignReport { config, coverage, empirical_mse: empirical, estimated_mse: estimated, records }
}

/// A labelled table of optional numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    /// Column labels, label columns first.
    pub header: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub labels: Vec<String>,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableSet {
    /// Coverage per (p, predictor) by gamma source.
    pub coverage: Table,
    /// Empirical MSE next to the estimated MSE per gamma source.
    pub mse_comparison: Table,
    /// Empirical MSE per predictor at this noise level.
    pub predictor_mse: Table,
}

impl TableSet {
    pub fn tables(&self) -> [&Table; 3] {
        [&self.coverage, &self.mse_comparison, &self.predictor_mse]
    }
}

/// Lays out the report as the three comparison tables.
pub fn summarize(report: &CampaignReport) -> TableSet {
    let cfg = &report.config;
    let src_labels: Vec<String> = cfg.gamma_sources.iter().map(|s| s.label().to_string()).collect();

    let mut header = vec!["p".to_string(), "predictor".to_string()];
    header.extend(src_labels.iter().cloned());
    let mut rows = Vec::new();
    for &p in &cfg.p_levels {
        for &pid in &cfg.predictors {
            let values = cfg.gamma_sources.iter().map(|&s| report.coverage(pid, s, p)).collect();
            rows.push(TableRow { labels: vec![p.to_string(), pid.label().to_string()], values });
        }
    }
    let coverage = Table { name: "coverage".into(), header, rows };

    let mut header = vec!["predictor".to_string(), "Empirical".to_string()];
    header.extend(src_labels.iter().cloned());
    let rows = cfg
        .predictors
        .iter()
        .map(|&pid| {
            let mut values = vec![report.empirical_mse(pid)];
            values.extend(cfg.gamma_sources.iter().map(|&s| report.estimated_mse(pid, s)));
            TableRow { labels: vec![pid.label().to_string()], values }
        })
        .collect();
    let mse_comparison = Table { name: "mse_estimate".into(), header, rows };

    let header = vec!["predictor".to_string(), format!("sigma2={}", cfg.sigma2)];
    let rows = cfg
        .predictors
        .iter()
        .map(|&pid| TableRow { labels: vec![pid.label().to_string()], values: vec![report.empirical_mse(pid)] })
        .collect();
    let predictor_mse = Table { name: "predictor_mse".into(), header, rows };

    TableSet { coverage, mse_comparison, predictor_mse }
}

/// Coverage cells grouped by predictor, for quick inspection.
pub fn coverage_by_predictor(report: &CampaignReport) -> BTreeMap<PredictorId, Vec<&CoverageCell>> {
    let mut out: BTreeMap<PredictorId, Vec<&CoverageCell>> = BTreeMap::new();
    for c in &report.coverage {
        out.entry(c.predictor).or_default().push(c);
    }
    out
}
