//! Reconstruction quality metrics.
//!
//! `CNR = 2 (m_inc − m_bg)² / (s²_inc + s²_bg)` over nodal values of the two regions, with
//! population variances; normalized RMS error is `‖Ê − E_true‖ / ‖E_true‖`; displacement
//! SNR is `10 log₁₀(‖u‖² / ‖u^m − u‖²)`.

use thiserror::Error;

use crate::linalg::{distance, norm};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("region `{0}` has no nodes")]
    EmptyRegion(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("reference field has zero norm")]
    ZeroReference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Inclusion,
    Background,
}

/// Per-node inclusion/background partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionLabels(Vec<Region>);

impl RegionLabels {
    pub fn from_predicate(inside: impl IntoIterator<Item = bool>) -> Self {
        Self(
            inside
                .into_iter()
                .map(|b| if b { Region::Inclusion } else { Region::Background })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> &[Region] {
        &self.0
    }

    pub fn count(&self, region: Region) -> usize {
        self.0.iter().filter(|&&r| r == region).count()
    }

    /// Mean and population variance of `field` over one region.
    pub fn stats(&self, field: &[f64], region: Region) -> Result<(f64, f64), MetricError> {
        if field.len() != self.0.len() {
            return Err(MetricError::LengthMismatch(field.len(), self.0.len()));
        }
        let values: Vec<f64> = field
            .iter()
            .zip(&self.0)
            .filter(|(_, &r)| r == region)
            .map(|(&v, _)| v)
            .collect();
        if values.is_empty() {
            return Err(MetricError::EmptyRegion(match region {
                Region::Inclusion => "inclusion",
                Region::Background => "background",
            }));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok((mean, var))
    }

    pub fn mean(&self, field: &[f64], region: Region) -> Result<f64, MetricError> {
        Ok(self.stats(field, region)?.0)
    }
}

/// A metric that may be unbounded. `degenerate` marks the `+∞` sentinel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metric {
    pub value: f64,
    pub degenerate: bool,
}

impl Metric {
    fn finite(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    fn infinite() -> Self {
        Self {
            value: f64::INFINITY,
            degenerate: true,
        }
    }
}

pub fn cnr(estimate: &[f64], labels: &RegionLabels) -> Result<Metric, MetricError> {
    let (m_inc, v_inc) = labels.stats(estimate, Region::Inclusion)?;
    let (m_bg, v_bg) = labels.stats(estimate, Region::Background)?;
    let contrast = 2.0 * (m_inc - m_bg).powi(2);
    let pooled = v_inc + v_bg;
    // relative floor so a piecewise-constant field with rounding noise still counts as exact
    let scale = m_inc.abs().max(m_bg.abs()).powi(2);
    if pooled <= 1e-28 * scale {
        if contrast <= 1e-28 * scale {
            return Ok(Metric::finite(0.0));
        }
        return Ok(Metric::infinite());
    }
    Ok(Metric::finite(contrast / pooled))
}

pub fn rms_error(estimate: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    if estimate.len() != truth.len() {
        return Err(MetricError::LengthMismatch(estimate.len(), truth.len()));
    }
    let reference = norm(truth);
    if reference == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    Ok(distance(estimate, truth) / reference)
}

pub fn snr_db(u: &[f64], um: &[f64]) -> Metric {
    let noise = distance(um, u).powi(2);
    if noise == 0.0 {
        return Metric::infinite();
    }
    Metric::finite(10.0 * (norm(u).powi(2) / noise).log10())
}
