//! Bjontegaard-delta bitrate and the JND-level bitrate-saving metric.
//!
//! Both are computed on monotone piecewise-cubic interpolants of
//! log(bpp) as a function of quality; BD-rate integrates the log-ratio
//! with a trapezoidal rule over the shared quality interval.

use crate::error::{Error, Result};
use crate::metrics::interp::MonotoneCubic;
use crate::metrics::rd::{JndLabel, RdCurve};

const BD_MIN_POINTS: usize = 4;
const MIN_OVERLAP_FRACTION: f64 = 0.10;
const INTEGRATION_SAMPLES: usize = 1024;

/// Interpolant of quality -> ln(bpp). Ties in quality keep the cheapest
/// point (a flat quality segment is dominated by its lowest bitrate).
fn log_bpp_interpolant(curve: &RdCurve) -> Result<MonotoneCubic> {
    let mut pts: Vec<(f64, f64)> = curve
        .points()
        .iter()
        .map(|p| {
            if p.bpp <= 0.0 {
                return Err(Error::Numeric(format!(
                    "bpp must be positive for log-domain interpolation, got {}",
                    p.bpp
                )));
            }
            Ok((p.quality, p.bpp.ln()))
        })
        .collect::<Result<_>>()?;
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.partial_cmp(&a.1).unwrap()));
    let before = pts.len();
    pts.dedup_by(|next, kept| {
        if next.0 == kept.0 {
            // keep the smaller ln(bpp); the list is sorted descending in it
            kept.1 = next.1;
            true
        } else {
            false
        }
    });
    if pts.len() < before {
        log::warn!(
            "curve '{}': {} duplicate quality knot(s) collapsed",
            curve.method_id,
            before - pts.len()
        );
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    MonotoneCubic::new(xs, ys)
}

fn shared_interval(anchor: &RdCurve, test: &RdCurve) -> Result<(f64, f64)> {
    let (a_lo, a_hi) = anchor.quality_span();
    let (t_lo, t_hi) = test.quality_span();
    let lo = a_lo.max(t_lo);
    let hi = a_hi.min(t_hi);
    let union = a_hi.max(t_hi) - a_lo.min(t_lo);
    if !(hi > lo) || union <= 0.0 || (hi - lo) < MIN_OVERLAP_FRACTION * union {
        return Err(Error::Numeric(format!(
            "quality ranges overlap too little: anchor [{a_lo}, {a_hi}], test [{t_lo}, {t_hi}]"
        )));
    }
    Ok((lo, hi))
}

/// Average bitrate difference of `test` against `anchor` at matched
/// quality, in percent. Negative means the test curve saves bitrate.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    if anchor.points().len() < BD_MIN_POINTS || test.points().len() < BD_MIN_POINTS {
        return Err(Error::Argument(format!(
            "bd_rate needs at least {BD_MIN_POINTS} points per curve, got {} and {}",
            anchor.points().len(),
            test.points().len()
        )));
    }
    let fa = log_bpp_interpolant(anchor)?;
    let ft = log_bpp_interpolant(test)?;
    let (lo, hi) = shared_interval(anchor, test)?;

    // trapezoidal integral of the log-ratio
    let n = INTEGRATION_SAMPLES;
    let step = (hi - lo) / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let q = if i == n { hi } else { lo + step * i as f64 };
        let diff = ft.eval(q)? - fa.eval(q)?;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        acc += w * diff;
    }
    let mean_log_ratio = acc * step / (hi - lo);
    let out = 100.0 * (mean_log_ratio.exp() - 1.0);
    if !out.is_finite() {
        return Err(Error::Numeric("bd_rate integration produced a non-finite value".into()));
    }
    Ok(out)
}

/// Bitrate the curve reaches a given quality at, via the same monotone
/// log-domain interpolation. Errors outside the curve's quality span.
pub fn bpp_at_quality(curve: &RdCurve, quality: f64) -> Result<f64> {
    let f = log_bpp_interpolant(curve)?;
    Ok(f.eval(quality)?.exp())
}

/// Eq.-style JND bitrate saving: percentage bpp difference between the
/// proposed and baseline curves at exactly the JND quality threshold.
pub fn bs_jnd(baseline: &RdCurve, proposed: &RdCurve, jnd: &JndLabel) -> Result<f64> {
    let bl = bpp_at_quality(baseline, jnd.value)?;
    let prop = bpp_at_quality(proposed, jnd.value)?;
    Ok(100.0 * (prop - bl) / bl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::rd::{CurvePoint, QualityMetric};

    fn curve(points: &[(f64, f64)]) -> RdCurve {
        RdCurve::new(
            "m".into(),
            "d".into(),
            points
                .iter()
                .map(|&(bpp, quality)| CurvePoint {
                    bpp,
                    quality,
                    lambda: 0.0,
                })
                .collect(),
        )
        .unwrap()
    }

    /// Smooth synthetic RD shape: quality rises logarithmically in bpp.
    fn synthetic(scale: f64, q_shift: f64) -> RdCurve {
        let pts: Vec<(f64, f64)> = (0..6)
            .map(|i| {
                let bpp = scale * 0.25 * 1.6f64.powi(i);
                (bpp, 30.0 + q_shift + 6.0 * (bpp / scale).ln())
            })
            .collect();
        curve(&pts)
    }

    #[test]
    fn identical_curves_give_zero() {
        let c = synthetic(1.0, 0.0);
        let v = bd_rate(&c, &c).unwrap();
        assert!(v.abs() < 1e-6, "bd_rate(C,C) = {v}");
    }

    #[test]
    fn constant_bpp_scaling_matches_closed_form() {
        // independent oracle: scaling bpp by k at fixed quality is a constant
        // ln(k) offset, so BD-rate is exactly 100 (k - 1)
        let anchor = synthetic(1.0, 0.0);
        for k in [0.8, 0.9, 1.1] {
            let test = synthetic(k, 0.0);
            let v = bd_rate(&anchor, &test).unwrap();
            assert!(
                (v - 100.0 * (k - 1.0)).abs() < 0.1,
                "k={k}: bd={v}, want {}",
                100.0 * (k - 1.0)
            );
        }
    }

    #[test]
    fn quality_translation_invariance() {
        let anchor = synthetic(1.0, 0.0);
        let test = synthetic(0.93, 0.0);
        let v1 = bd_rate(&anchor, &test).unwrap();
        let anchor_shift = synthetic(1.0, 7.5);
        let test_shift = synthetic(0.93, 7.5);
        let v2 = bd_rate(&anchor_shift, &test_shift).unwrap();
        assert!((v1 - v2).abs() < 1e-6, "translation changed bd: {v1} vs {v2}");
    }

    #[test]
    fn approximate_antisymmetry() {
        let a = synthetic(1.0, 0.0);
        let b = synthetic(0.85, 1.0);
        let ab = bd_rate(&a, &b).unwrap();
        let ba = bd_rate(&b, &a).unwrap();
        let predicted = -ba / (1.0 + ba / 100.0);
        assert!((ab - predicted).abs() < 0.2, "ab={ab} predicted={predicted}");
    }

    #[test]
    fn too_few_points_is_an_error() {
        let a = curve(&[(0.2, 30.0), (0.4, 33.0), (0.8, 36.0)]);
        let b = synthetic(1.0, 0.0);
        assert!(matches!(bd_rate(&a, &b), Err(Error::Argument(_))));
    }

    #[test]
    fn disjoint_quality_ranges_error_not_nan() {
        let a = synthetic(1.0, 0.0);
        let b = synthetic(1.0, 500.0);
        match bd_rate(&a, &b) {
            Err(Error::Numeric(_)) => {}
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn bpp_at_quality_passes_through_knots() {
        let c = curve(&[(0.25, 28.0), (0.5, 31.0), (1.0, 34.5), (2.0, 39.0)]);
        for p in c.points() {
            let b = bpp_at_quality(&c, p.quality).unwrap();
            assert!((b - p.bpp).abs() < 1e-12 * p.bpp);
            assert!(b > 0.0);
        }
    }

    #[test]
    fn two_point_curve_interpolates_log_linearly() {
        // hand-checkable: midpoint quality between (1 bpp, 30 dB) and
        // (2 bpp, 40 dB) lands on sqrt(2) bpp in the log domain
        let c = curve(&[(1.0, 30.0), (2.0, 40.0)]);
        let b = bpp_at_quality(&c, 35.0).unwrap();
        assert!((b - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn out_of_span_queries_error() {
        let c = curve(&[(1.0, 30.0), (2.0, 40.0)]);
        assert!(bpp_at_quality(&c, 29.9).is_err());
        assert!(bpp_at_quality(&c, 40.1).is_err());
    }

    #[test]
    fn bs_jnd_fixture_values() {
        let label = |v: f64| JndLabel {
            image_id: "img".into(),
            metric: QualityMetric::Psnr,
            value: v,
        };
        let baseline = curve(&[(0.5, 30.0), (1.0, 35.0), (2.0, 40.0)]);
        // identical curves -> 0
        assert_eq!(bs_jnd(&baseline, &baseline, &label(35.0)).unwrap(), 0.0);
        // proposed reaches 35 dB at 0.9 bpp vs baseline 1.0 bpp -> -10
        let proposed = curve(&[(0.45, 30.0), (0.9, 35.0), (1.8, 40.0)]);
        let v = bs_jnd(&baseline, &proposed, &label(35.0)).unwrap();
        assert!((v - -10.0).abs() < 1e-9, "bs_jnd = {v}");
        // sign contract: cheaper at threshold <=> negative
        assert!(bs_jnd(&proposed, &baseline, &label(35.0)).unwrap() > 0.0);
        // out-of-span threshold propagates the interpolation error
        assert!(bs_jnd(&baseline, &proposed, &label(50.0)).is_err());
    }
}
