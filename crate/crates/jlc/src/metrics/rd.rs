//! RD results schema and curve assembly.
//!
//! The JSON results file is the interchange format between training,
//! evaluation and the CLI:
//!
//! ```json
//! {"dataset_id": "...", "method_id": "...",
//!  "points": [{"lambda": .., "bpp": .., "psnr": .., "msssim": ..}],
//!  "jnd": [{"image_id": "...", "metric": "psnr", "value": ..}]}
//! ```
//!
//! Infinite PSNR (zero error) is a sentinel: it serializes as JSON null and
//! is excluded from curve fitting with a warning.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityMetric {
    Psnr,
    Msssim,
}

impl std::fmt::Display for QualityMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QualityMetric::Psnr => write!(f, "psnr"),
            QualityMetric::Msssim => write!(f, "msssim"),
        }
    }
}

impl std::str::FromStr for QualityMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psnr" => Ok(QualityMetric::Psnr),
            "msssim" => Ok(QualityMetric::Msssim),
            other => Err(Error::Argument(format!("unknown metric '{other}'"))),
        }
    }
}

/// Serializes +inf as null (the sentinel for a zero-error measurement).
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub lambda: f64,
    pub bpp: f64,
    #[serde(with = "inf_as_null")]
    pub psnr: f64,
    pub msssim: f64,
}

impl RdPoint {
    pub fn quality(&self, metric: QualityMetric) -> f64 {
        match metric {
            QualityMetric::Psnr => self.psnr,
            QualityMetric::Msssim => self.msssim,
        }
    }
}

/// Pre-known JND quality threshold of one test image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JndLabel {
    pub image_id: String,
    pub metric: QualityMetric,
    #[serde(with = "inf_as_null")]
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdResults {
    pub dataset_id: String,
    pub method_id: String,
    pub points: Vec<RdPoint>,
    #[serde(default)]
    pub jnd: Vec<JndLabel>,
}

impl RdResults {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        crate::util::write_atomic(path, json.as_bytes())
    }

    /// Assemble the curve for one quality metric.
    pub fn to_curve(&self, metric: QualityMetric) -> Result<RdCurve> {
        RdCurve::new(
            self.method_id.clone(),
            self.dataset_id.clone(),
            self.points
                .iter()
                .map(|p| CurvePoint {
                    bpp: p.bpp,
                    quality: p.quality(metric),
                    lambda: p.lambda,
                })
                .collect(),
        )
    }

    /// CSV mirror with identical columns, for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,lambda,bpp,psnr,msssim\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.method_id, p.lambda, p.bpp, p.psnr, p.msssim
            ));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub bpp: f64,
    pub quality: f64,
    pub lambda: f64,
}

/// Sorted (bpp, quality) points for one method on one dataset.
#[derive(Clone, Debug)]
pub struct RdCurve {
    pub method_id: String,
    pub dataset_id: String,
    points: Vec<CurvePoint>,
}

impl RdCurve {
    /// Sorts by bpp and enforces the curve invariants: at least two finite
    /// points, strictly increasing bpp. Non-finite qualities are dropped
    /// with a warning; quality decreasing in bpp warns but does not fail.
    pub fn new(method_id: String, dataset_id: String, mut points: Vec<CurvePoint>) -> Result<Self> {
        let before = points.len();
        points.retain(|p| p.quality.is_finite() && p.bpp.is_finite());
        if points.len() < before {
            log::warn!(
                "dropped {} point(s) with non-finite quality from curve '{method_id}'",
                before - points.len()
            );
        }
        points.sort_by(|a, b| a.bpp.partial_cmp(&b.bpp).unwrap());
        if points.len() < 2 {
            return Err(Error::Argument(format!(
                "curve '{method_id}' needs at least 2 finite points, got {}",
                points.len()
            )));
        }
        if points.windows(2).any(|w| w[0].bpp >= w[1].bpp) {
            return Err(Error::Argument(format!(
                "curve '{method_id}' must have strictly increasing bpp"
            )));
        }
        if points.windows(2).any(|w| w[1].quality < w[0].quality) {
            log::warn!("curve '{method_id}': quality is not non-decreasing in bpp");
        }
        if points.iter().any(|p| p.bpp < 0.0) {
            return Err(Error::Argument("bpp must be non-negative".into()));
        }
        Ok(RdCurve {
            method_id,
            dataset_id,
            points,
        })
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn quality_span(&self) -> (f64, f64) {
        let lo = self
            .points
            .iter()
            .map(|p| p.quality)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .points
            .iter()
            .map(|p| p.quality)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(lambda: f64, bpp: f64, psnr: f64, msssim: f64) -> RdPoint {
        RdPoint {
            lambda,
            bpp,
            psnr,
            msssim,
        }
    }

    #[test]
    fn results_roundtrip_json_with_infinite_psnr() {
        let r = RdResults {
            dataset_id: "toy".into(),
            method_id: "baseline-mse".into(),
            points: vec![
                point(0.0018, 0.2, 28.5, 0.91),
                point(0.0067, 0.5, f64::INFINITY, 1.0),
            ],
            jnd: vec![JndLabel {
                image_id: "img0".into(),
                metric: QualityMetric::Psnr,
                value: 33.0,
            }],
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"psnr\":null"));
        let back: RdResults = serde_json::from_str(&json).unwrap();
        assert!(back.points[1].psnr.is_infinite());
        assert_eq!(back.points[0], r.points[0]);
    }

    #[test]
    fn curve_drops_infinite_quality_points() {
        let r = RdResults {
            dataset_id: "toy".into(),
            method_id: "m".into(),
            points: vec![
                point(0.1, 0.2, 30.0, 0.9),
                point(0.2, 0.4, f64::INFINITY, 0.95),
                point(0.3, 0.8, 40.0, 0.99),
            ],
            jnd: vec![],
        };
        let c = r.to_curve(QualityMetric::Psnr).unwrap();
        assert_eq!(c.points().len(), 2);
        let c2 = r.to_curve(QualityMetric::Msssim).unwrap();
        assert_eq!(c2.points().len(), 3);
    }

    #[test]
    fn curve_rejects_duplicate_bpp() {
        let pts = vec![
            CurvePoint {
                bpp: 0.5,
                quality: 30.0,
                lambda: 0.1,
            },
            CurvePoint {
                bpp: 0.5,
                quality: 31.0,
                lambda: 0.2,
            },
        ];
        assert!(RdCurve::new("m".into(), "d".into(), pts).is_err());
    }

    #[test]
    fn curve_sorts_by_bpp() {
        let pts = vec![
            CurvePoint {
                bpp: 0.8,
                quality: 40.0,
                lambda: 0.3,
            },
            CurvePoint {
                bpp: 0.2,
                quality: 30.0,
                lambda: 0.1,
            },
        ];
        let c = RdCurve::new("m".into(), "d".into(), pts).unwrap();
        assert!(c.points()[0].bpp < c.points()[1].bpp);
    }
}
