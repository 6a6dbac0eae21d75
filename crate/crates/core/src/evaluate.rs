//! Depth scoring up to a global scale, and the ablation and sensitivity harnesses.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SegmentationMethod};
use crate::energy::EnergyBreakdown;
use crate::io::DepthMap;
use crate::pipeline::{reconstruct, PipelineError};
use crate::synth::{corrupt_flow, SceneBundle};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("estimate and ground truth share no valid pixel")]
    NoOverlap,
    #[error("depth maps differ in size: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Median of the per-pixel ratios `gt / est`.
    #[default]
    Median,
    /// Least-squares scale `sum(gt est) / sum(est^2)`.
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mre: f64,
    pub rmse: f64,
    /// Number of pixels scored.
    pub points: usize,
    pub alignment_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<EnergyBreakdown>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Scale `c` making `c * est` best match `gt`. Inputs must be strictly positive.
pub fn align_scale(est: &[f64], gt: &[f64], method: Alignment) -> Result<f64, EvalError> {
    if est.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    Ok(match method {
        Alignment::Median => median(gt.iter().zip(est).map(|(g, e)| g / e).collect()),
        Alignment::LeastSquares => {
            let num: f64 = gt.iter().zip(est).map(|(g, e)| g * e).sum();
            let den: f64 = est.iter().map(|e| e * e).sum();
            num / den
        }
    })
}

/// Mean relative error `mean(|gt - est| / gt)` of an already aligned estimate.
pub fn mre(est: &[f64], gt: &[f64]) -> Result<f64, EvalError> {
    if est.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    Ok(gt.iter().zip(est).map(|(g, e)| (g - e).abs() / g).sum::<f64>() / est.len() as f64)
}

/// Root mean square depth error of an already aligned estimate.
pub fn rmse(est: &[f64], gt: &[f64]) -> Result<f64, EvalError> {
    if est.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    Ok((gt.iter().zip(est).map(|(g, e)| (g - e).powi(2)).sum::<f64>() / est.len() as f64).sqrt())
}

/// Aligns `est` to `gt`, then scores it.
pub fn score(est: &[f64], gt: &[f64], method: Alignment) -> Result<MetricReport, EvalError> {
    let c = align_scale(est, gt, method)?;
    let aligned: Vec<f64> = est.iter().map(|e| e * c).collect();
    Ok(MetricReport {
        mre: mre(&aligned, gt)?,
        rmse: rmse(&aligned, gt)?,
        points: est.len(),
        alignment_scale: c,
        breakdown: None,
    })
}

/// Jointly valid `(est, gt)` samples, optionally restricted to `mask`.
pub fn paired_samples(
    est: &DepthMap,
    gt: &DepthMap,
    mask: Option<&[bool]>,
) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    if (est.width, est.height) != (gt.width, gt.height) {
        return Err(EvalError::SizeMismatch(est.width, est.height, gt.width, gt.height));
    }
    if let Some(m) = mask {
        if m.len() != gt.z.len() {
            return Err(EvalError::SizeMismatch(est.width, est.height, m.len(), 1));
        }
    }
    let (mut e, mut g) = (Vec::new(), Vec::new());
    for i in 0..gt.z.len() {
        if est.valid[i] && gt.valid[i] && mask.is_none_or(|m| m[i]) {
            e.push(est.z[i] as f64);
            g.push(gt.z[i] as f64);
        }
    }
    if e.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    Ok((e, g))
}

pub fn evaluate_depth(
    est: &DepthMap,
    gt: &DepthMap,
    mask: Option<&[bool]>,
    method: Alignment,
) -> Result<MetricReport, EvalError> {
    let (e, g) = paired_samples(est, gt, mask)?;
    score(&e, &g, method)
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("unknown sweep value {0:?}")]
    BadValue(String),
}

impl HarnessError {
    pub fn is_input_error(&self) -> bool {
        match self {
            Self::Pipeline(e) => e.is_input_error(),
            Self::Eval(_) | Self::BadValue(_) => true,
        }
    }
}

fn run_and_score(bundle: &SceneBundle, cfg: &RunConfig, flow: Option<&crate::io::DenseFlow>) -> Result<MetricReport, HarnessError> {
    let rec = reconstruct(
        &bundle.ref_image,
        flow.unwrap_or(&bundle.flow),
        &bundle.intrinsics,
        None,
        cfg,
    )?;
    let mut report = evaluate_depth(&rec.depth1, &bundle.gt_depth1, None, Alignment::Median)?;
    report.breakdown = Some(rec.breakdown);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arap: bool,
    pub proj: bool,
    pub cont: bool,
    pub orient: bool,
    pub report: MetricReport,
}

/// Runs the pipeline with the energy terms switched on one at a time, in
/// order, each row keeping the terms of the previous one. Term weights come
/// from `cfg`; inactive terms get weight zero.
pub fn ablation_run(bundle: &SceneBundle, cfg: &RunConfig) -> Result<Vec<AblationRow>, HarnessError> {
    (0..4)
        .into_par_iter()
        .map(|stage| {
            let mut c = cfg.clone();
            if stage < 1 {
                c.energy.alpha1 = 0.0;
            }
            if stage < 2 {
                c.energy.alpha2 = 0.0;
            }
            if stage < 3 {
                c.energy.alpha3 = 0.0;
            }
            Ok(AblationRow {
                arap: true,
                proj: stage >= 1,
                cont: stage >= 2,
                orient: stage >= 3,
                report: run_and_score(bundle, &c, None)?,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("arap,proj,cont,orient,mre,rmse,points,alignment_scale,energy\n");
    for r in rows {
        let b = |v: bool| u8::from(v);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            b(r.arap),
            b(r.proj),
            b(r.cont),
            b(r.orient),
            r.report.mre,
            r.report.rmse,
            r.report.points,
            r.report.alignment_scale,
            r.report.breakdown.map_or(f64::NAN, |e| e.total)
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SuperpixelCount,
    K,
    FlowNoise,
    GridVsSlic,
}

impl std::str::FromStr for SweepAxis {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "superpixel_count" => Ok(Self::SuperpixelCount),
            "k" | "K" => Ok(Self::K),
            "flow_noise" => Ok(Self::FlowNoise),
            "grid_vs_slic" => Ok(Self::GridVsSlic),
            other => Err(HarnessError::BadValue(other.to_owned())),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SuperpixelCount => "superpixel_count",
            Self::K => "k",
            Self::FlowNoise => "flow_noise",
            Self::GridVsSlic => "grid_vs_slic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub report: MetricReport,
}

fn parse_count(v: &str) -> Result<usize, HarnessError> {
    v.parse().map_err(|_| HarnessError::BadValue(v.to_owned()))
}

/// One pipeline run per value of `axis`. Flow noise is Gaussian with the given
/// standard deviation in pixels, seeded by the run seed.
pub fn sensitivity_run(
    bundle: &SceneBundle,
    cfg: &RunConfig,
    axis: SweepAxis,
    values: &[String],
) -> Result<Vec<SweepRow>, HarnessError> {
    values
        .par_iter()
        .map(|v| {
            let mut c = cfg.clone();
            let mut flow = None;
            match axis {
                SweepAxis::SuperpixelCount => c.segmentation.superpixels = parse_count(v)?,
                SweepAxis::K => c.energy.k = parse_count(v)?,
                SweepAxis::FlowNoise => {
                    let sigma: f64 = v.parse().map_err(|_| HarnessError::BadValue(v.clone()))?;
                    if !(sigma >= 0.0 && sigma.is_finite()) {
                        return Err(HarnessError::BadValue(v.clone()));
                    }
                    flow = Some(corrupt_flow(&bundle.flow, sigma, 0.0, cfg.seed));
                }
                SweepAxis::GridVsSlic => {
                    c.segmentation.method = match v.as_str() {
                        "grid" => SegmentationMethod::Grid,
                        "slic" => SegmentationMethod::Slic,
                        _ => return Err(HarnessError::BadValue(v.clone())),
                    }
                }
            }
            Ok(SweepRow {
                value: v.clone(),
                report: run_and_score(bundle, &c, flow.as_ref())?,
            })
        })
        .collect()
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = format!("{},mre,rmse,points,alignment_scale,energy\n", axis.name());
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.value,
            r.report.mre,
            r.report.rmse,
            r.report.points,
            r.report.alignment_scale,
            r.report.breakdown.map_or(f64::NAN, |e| e.total)
        );
    }
    out
}
