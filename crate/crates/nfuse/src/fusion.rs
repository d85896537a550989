//! Weighted late fusion of the two per-modality classifiers and the
//! per-metric optimal-weight search over the validation set.

use crate::error::{Error, Result};
use crate::metrics::{auc_macro, auc_micro, auc_ovr, PredictionSet};
use std::path::Path;

/// Convex combination weight on the T1 probabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionWeight(f64);

impl FusionWeight {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!(
                "fusion weight {alpha} outside [0, 1]"
            )));
        }
        Ok(FusionWeight(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Class-wise weighted probability: alpha * p_t1 + (1 - alpha) * p_fl.
/// At alpha = 1 this reproduces p_t1 exactly; at 0, p_fl exactly.
pub fn fuse(p_t1: &[f64; 3], p_fl: &[f64; 3], alpha: FusionWeight) -> [f64; 3] {
    let a = alpha.value();
    if a == 1.0 {
        return *p_t1;
    }
    if a == 0.0 {
        return *p_fl;
    }
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = a * p_t1[c] + (1.0 - a) * p_fl[c];
    }
    out
}

/// Fuse two aligned prediction sets at a fixed weight.
pub fn fuse_predictions(
    preds_t1: &PredictionSet,
    preds_fl: &PredictionSet,
    alpha: FusionWeight,
) -> Result<PredictionSet> {
    check_aligned(preds_t1, preds_fl)?;
    let probs: Vec<[f64; 3]> = preds_t1
        .probs()
        .iter()
        .zip(preds_fl.probs())
        .map(|(a, b)| fuse(a, b, alpha))
        .collect();
    PredictionSet::new(probs, preds_t1.labels().to_vec())
}

fn check_aligned(a: &PredictionSet, b: &PredictionSet) -> Result<()> {
    if a.len() != b.len() || a.labels() != b.labels() {
        return Err(Error::InvalidArgument(
            "prediction sets are not aligned over identical examples".into(),
        ));
    }
    Ok(())
}

/// Which report column a weight is optimized for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    CnVsAll,
    MciVsAll,
    AdVsAll,
    Micro,
    Macro,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::CnVsAll,
        MetricKind::MciVsAll,
        MetricKind::AdVsAll,
        MetricKind::Micro,
        MetricKind::Macro,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::CnVsAll => "cn_vs_all",
            MetricKind::MciVsAll => "mci_vs_all",
            MetricKind::AdVsAll => "ad_vs_all",
            MetricKind::Micro => "micro",
            MetricKind::Macro => "macro",
        }
    }

    pub fn evaluate(self, preds: &PredictionSet) -> Option<f64> {
        match self {
            MetricKind::CnVsAll => auc_ovr(preds)[0],
            MetricKind::MciVsAll => auc_ovr(preds)[1],
            MetricKind::AdVsAll => auc_ovr(preds)[2],
            MetricKind::Micro => auc_micro(preds),
            MetricKind::Macro => auc_macro(preds),
        }
    }
}

/// One row of the weight sweep: all five metric columns at one alpha.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub alpha: f64,
    pub metrics: [Option<f64>; 5],
}

/// Evaluate the grid {0, step, ..., 1} on aligned prediction sets.
pub fn alpha_sweep(
    preds_t1: &PredictionSet,
    preds_fl: &PredictionSet,
    step: f64,
) -> Result<Vec<SweepRow>> {
    check_aligned(preds_t1, preds_fl)?;
    if step <= 0.0 || step > 1.0 {
        return Err(Error::InvalidArgument(format!("grid step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round() as usize;
    let mut rows = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let alpha = (i as f64 * step).min(1.0);
        let fused = fuse_predictions(preds_t1, preds_fl, FusionWeight::new(alpha)?)?;
        let mut metrics = [None; 5];
        for (j, m) in MetricKind::ALL.iter().enumerate() {
            metrics[j] = m.evaluate(&fused);
        }
        rows.push(SweepRow { alpha, metrics });
    }
    Ok(rows)
}

/// Best weight for one metric over the grid (lowest alpha on ties), plus
/// the full sweep table for plotting.
pub fn optimal_alpha(
    preds_t1: &PredictionSet,
    preds_fl: &PredictionSet,
    metric: MetricKind,
    step: f64,
) -> Result<(FusionWeight, f64, Vec<SweepRow>)> {
    let rows = alpha_sweep(preds_t1, preds_fl, step)?;
    let col = MetricKind::ALL.iter().position(|&m| m == metric).unwrap();
    let mut best: Option<(f64, f64)> = None;
    for row in &rows {
        if let Some(v) = row.metrics[col] {
            let better = match best {
                None => true,
                Some((_, bv)) => v > bv,
            };
            if better {
                best = Some((row.alpha, v));
            }
        }
    }
    let (alpha, value) = best.ok_or_else(|| {
        Error::InvalidArgument(format!("metric {} undefined at every weight", metric.as_str()))
    })?;
    Ok((FusionWeight::new(alpha)?, value, rows))
}

/// Sweep CSV: alpha, cn_vs_all, mci_vs_all, ad_vs_all, micro, macro.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["alpha", "cn_vs_all", "mci_vs_all", "ad_vs_all", "micro", "macro"])?;
    for r in rows {
        let mut rec = vec![format!("{:.2}", r.alpha)];
        for m in r.metrics {
            rec.push(m.map(|v| format!("{v:.6}")).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
