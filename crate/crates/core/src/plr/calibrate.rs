use nalgebra::{Matrix3, Vector3};

use super::{Channel, PlrModelSet};
use crate::error::{Error, Result};
use crate::luminance::{LuminanceLut, RgbPercent};

/// Mean pupil size recorded while one monochrome calibration frame was shown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub rgb: RgbPercent,
    pub mean_pupil: f64,
}

impl CalibrationSample {
    pub fn new(rgb: RgbPercent, mean_pupil: f64) -> Result<Self> {
        if !(mean_pupil > 0.5 && mean_pupil < 12.0) {
            return Err(Error::InvalidInput(format!(
                "calibration pupil size {mean_pupil} mm outside (0.5, 12)"
            )));
        }
        Ok(CalibrationSample { rgb, mean_pupil })
    }
}

/// The nine frames used for recalibration: shared black, then the 50% and
/// 100% frames of red, green, blue and gray.
pub fn calibration_points() -> Vec<RgbPercent> {
    let mut pts = vec![RgbPercent::BLACK];
    for ch in Channel::ALL {
        pts.push(ch.rgb(50.0));
        pts.push(ch.rgb(100.0));
    }
    pts
}

fn fmt_rgb(rgb: &RgbPercent) -> String {
    format!("({},{},{})", rgb.r, rgb.g, rgb.b)
}

/// Recalibrates the group curves to one participant.
///
/// Each channel keeps the group decay rate `b`; with `b` fixed the curve is
/// linear in `(a, c, d)`, which are solved exactly from the black, 50% and
/// 100% frames of that channel. `samples` may contain additional frames
/// (e.g. the full 27-frame calibration video); only the nine calibration
/// frames are used.
pub fn calibrate_participant(
    group: &PlrModelSet,
    samples: &[CalibrationSample],
    lut: &LuminanceLut,
    participant: &str,
) -> Result<PlrModelSet> {
    let points = calibration_points();
    let mut pupil = Vec::with_capacity(points.len());
    let mut missing = Vec::new();
    for p in &points {
        let hits: Vec<&CalibrationSample> = samples.iter().filter(|s| s.rgb.approx_eq(p)).collect();
        match hits.len() {
            0 => missing.push(fmt_rgb(p)),
            1 => pupil.push(hits[0].mean_pupil),
            _ => {
                return Err(Error::Calibration(format!(
                    "duplicate calibration point {}",
                    fmt_rgb(p)
                )))
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Calibration(format!(
            "missing calibration point {}",
            missing.join(" ")
        )));
    }

    let black_lux = lut.query(RgbPercent::BLACK)?;
    let mut out = group.clone();
    out.provenance = participant.to_string();
    for (i, ch) in Channel::ALL.into_iter().enumerate() {
        let b = group.get(ch).b;
        let lux = [black_lux, lut.query(ch.rgb(50.0))?, lut.query(ch.rgb(100.0))?];
        let obs = Vector3::new(pupil[0], pupil[1 + 2 * i], pupil[2 + 2 * i]);
        let m = Matrix3::from_fn(|r, col| match col {
            0 => (-b * lux[r]).exp(),
            1 => lux[r],
            _ => 1.0,
        });
        let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if m.determinant().abs() <= 1e-12 * scale.powi(3) {
            return Err(Error::DegenerateCalibration(format!(
                "{} calibration points have indistinguishable luminosity {lux:?}",
                ch.as_str()
            )));
        }
        let sol = m
            .lu()
            .solve(&obs)
            .ok_or_else(|| Error::DegenerateCalibration(format!("{} system is singular", ch.as_str())))?;
        let coeffs = out.get_mut(ch);
        coeffs.a = sol[0];
        coeffs.c = sol[1];
        coeffs.d = sol[2];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::luminance::{DisplayModel, Provenance};

    fn lut() -> LuminanceLut {
        LuminanceLut::build_synthetic(&DisplayModel::default()).unwrap()
    }

    fn samples_from(model: &PlrModelSet, lut: &LuminanceLut, scale: f64) -> Vec<CalibrationSample> {
        let mut out = vec![CalibrationSample::new(
            RgbPercent::BLACK,
            scale * model.gray.eval(0.0),
        )
        .unwrap()];
        for ch in Channel::ALL {
            for level in [50.0, 100.0] {
                let lux = lut.query(ch.rgb(level)).unwrap();
                out.push(CalibrationSample::new(ch.rgb(level), scale * model.get(ch).eval(lux)).unwrap());
            }
        }
        out
    }

    #[test]
    fn fixed_point_on_group_data() {
        // The black frame is shared, so generate from a model whose channels
        // agree at zero lux.
        let lut = lut();
        let mut g = PlrModelSet::group();
        let black = g.gray.a + g.gray.d;
        for ch in [Channel::Red, Channel::Green, Channel::Blue] {
            let c = g.get_mut(ch);
            c.d = black - c.a;
        }
        let cal = calibrate_participant(&g, &samples_from(&g, &lut, 1.0), &lut, "P01").unwrap();
        assert_eq!(cal.provenance, "P01");
        for ch in Channel::ALL {
            let (x, y) = (cal.get(ch), g.get(ch));
            assert_eq!(x.b, y.b);
            for (u, v) in x.as_array().iter().zip(y.as_array()) {
                assert!((u - v).abs() < 1e-9, "{ch:?}: {x:?} vs {y:?}");
            }
        }
    }

    #[test]
    fn linear_in_observations() {
        let lut = lut();
        let g = PlrModelSet::group();
        let base = calibrate_participant(&g, &samples_from(&g, &lut, 1.0), &lut, "a").unwrap();
        let scaled = calibrate_participant(&g, &samples_from(&g, &lut, 1.2), &lut, "b").unwrap();
        for ch in Channel::ALL {
            let (x, y) = (base.get(ch), scaled.get(ch));
            assert_eq!(x.b, y.b);
            assert!((y.a - 1.2 * x.a).abs() < 1e-9);
            assert!((y.c - 1.2 * x.c).abs() < 1e-9);
            assert!((y.d - 1.2 * x.d).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_and_duplicate_points() {
        let lut = lut();
        let g = PlrModelSet::group();
        let mut s = samples_from(&g, &lut, 1.0);
        s.remove(6);
        let err = calibrate_participant(&g, &s, &lut, "x").unwrap_err();
        assert!(matches!(err, Error::Calibration(_)));
        assert!(err.to_string().contains("(0,0,100)"), "{err}");

        let mut s = samples_from(&g, &lut, 1.0);
        s.push(s[3]);
        let err = calibrate_participant(&g, &s, &lut, "x").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn flat_channel_is_degenerate() {
        // blue response identical at every level
        let mut values = Vec::new();
        let levels: Vec<f64> = (0..=10).map(|i| i as f64 * 10.0).collect();
        for &r in &levels {
            for &g in &levels {
                for _ in &levels {
                    values.push(0.5 * (r + g));
                }
            }
        }
        let lut = LuminanceLut::from_table(
            [levels.clone(), levels.clone(), levels],
            values,
            1.0,
            Provenance::Measured,
        )
        .unwrap();
        let g = PlrModelSet::group();
        let s = samples_from(&g, &lut, 1.0);
        assert!(matches!(
            calibrate_participant(&g, &s, &lut, "x"),
            Err(Error::DegenerateCalibration(_))
        ));
    }

    #[test]
    fn sample_range_is_checked() {
        assert!(CalibrationSample::new(RgbPercent::BLACK, 0.3).is_err());
        assert!(CalibrationSample::new(RgbPercent::BLACK, 13.0).is_err());
    }
}
