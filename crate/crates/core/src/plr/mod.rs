//! Exponential pupillary light response (PLR) curves.
//!
//! Pupil size as a function of screen luminosity is modelled per primary
//! color and for gray as `a·exp(-b·lux) + c·lux + d`.

mod calibrate;
mod combined;
mod fit;

use std::fmt::Write as _;
use std::path::Path;

pub use calibrate::{calibrate_participant, calibration_points, CalibrationSample};
pub use combined::{fit_combined, predict_combined, CombinedFit, CombinedWeights, CONSTRAINT_TOL};
pub use fit::{fit_plr_curve, FitOptions, PlrFit};

use crate::error::{Error, Result};
use crate::luminance::{LuminanceLut, RgbPercent};

/// Coefficients of one PLR curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlrCoefficients {
    /// Amplitude of the exponential term (mm).
    pub a: f64,
    /// Decay rate (per lux).
    pub b: f64,
    /// Linear slope (mm per lux).
    pub c: f64,
    /// Offset (mm).
    pub d: f64,
}

impl PlrCoefficients {
    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        PlrCoefficients { a, b, c, d }
    }

    /// Predicted pupil size (mm) at `lux`.
    pub fn eval(&self, lux: f64) -> f64 {
        self.a * (-self.b * lux).exp() + self.c * lux + self.d
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn from_array(p: [f64; 4]) -> Self {
        PlrCoefficients::new(p[0], p[1], p[2], p[3])
    }

    /// Checks `a >= 0`, `b >= 0`, `d > 0` and finiteness.
    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() || self.a < 0.0 || self.b < 0.0 || !(self.d > 0.0) {
            return Err(Error::InvalidModel(format!(
                "PLR coefficients must satisfy a >= 0, b >= 0, d > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Red,
    Green,
    Blue,
    Gray,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Red, Channel::Green, Channel::Blue, Channel::Gray];

    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Red => "red",
            Channel::Green => "green",
            Channel::Blue => "blue",
            Channel::Gray => "gray",
        }
    }

    pub fn parse(s: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Monochrome frame of this channel at `level` percent.
    pub fn rgb(&self, level: f64) -> RgbPercent {
        match self {
            Channel::Red => RgbPercent { r: level, g: 0.0, b: 0.0 },
            Channel::Green => RgbPercent { r: 0.0, g: level, b: 0.0 },
            Channel::Blue => RgbPercent { r: 0.0, g: 0.0, b: level },
            Channel::Gray => RgbPercent { r: level, g: level, b: level },
        }
    }
}

/// Group-level coefficients fitted on the reference monitor.
pub const GROUP_RED: PlrCoefficients = PlrCoefficients::new(2.6317, 1.3371, -0.0152, 3.1500);
pub const GROUP_GREEN: PlrCoefficients = PlrCoefficients::new(3.1259, 1.2324, -0.0073, 2.5036);
pub const GROUP_BLUE: PlrCoefficients = PlrCoefficients::new(3.4430, 1.6167, -0.0193, 2.6271);
pub const GROUP_GRAY: PlrCoefficients = PlrCoefficients::new(2.4465, 0.5638, -0.0184, 3.4140);

/// The four PLR curves of one person (or of the group).
#[derive(Debug, Clone, PartialEq)]
pub struct PlrModelSet {
    pub red: PlrCoefficients,
    pub green: PlrCoefficients,
    pub blue: PlrCoefficients,
    pub gray: PlrCoefficients,
    /// `group` or a participant id.
    pub provenance: String,
}

impl PlrModelSet {
    /// Group coefficients from the reference study.
    pub fn group() -> Self {
        PlrModelSet {
            red: GROUP_RED,
            green: GROUP_GREEN,
            blue: GROUP_BLUE,
            gray: GROUP_GRAY,
            provenance: "group".into(),
        }
    }

    pub fn get(&self, channel: Channel) -> &PlrCoefficients {
        match channel {
            Channel::Red => &self.red,
            Channel::Green => &self.green,
            Channel::Blue => &self.blue,
            Channel::Gray => &self.gray,
        }
    }

    pub fn get_mut(&mut self, channel: Channel) -> &mut PlrCoefficients {
        match channel {
            Channel::Red => &mut self.red,
            Channel::Green => &mut self.green,
            Channel::Blue => &mut self.blue,
            Channel::Gray => &mut self.gray,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("pupilkit-plr v1 {}\n", self.provenance);
        for ch in Channel::ALL {
            let c = self.get(ch);
            let _ = writeln!(out, "{} {} {} {} {}", ch.as_str(), c.a, c.b, c.c, c.d);
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty model file"))?;
        let provenance = header
            .strip_prefix("pupilkit-plr v1 ")
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::parse(path, hl + 1, "expected `pupilkit-plr v1 <provenance>`"))?;
        let mut found: [Option<PlrCoefficients>; 4] = [None; 4];
        for (ln, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            let ch = f
                .first()
                .and_then(|s| Channel::parse(s))
                .ok_or_else(|| Error::parse(path, ln + 1, "unknown channel"))?;
            let nums: Vec<f64> = f[1..]
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, ln + 1, "expected `channel a b c d`"))?;
            if nums.len() != 4 || nums.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(path, ln + 1, "expected `channel a b c d`"));
            }
            let slot = &mut found[ch as usize];
            if slot.is_some() {
                return Err(Error::parse(path, ln + 1, format!("duplicate channel {}", ch.as_str())));
            }
            *slot = Some(PlrCoefficients::new(nums[0], nums[1], nums[2], nums[3]));
        }
        let take = |ch: Channel| {
            found[ch as usize].ok_or_else(|| Error::parse(path, hl + 1, format!("missing channel {}", ch.as_str())))
        };
        Ok(PlrModelSet {
            red: take(Channel::Red)?,
            green: take(Channel::Green)?,
            blue: take(Channel::Blue)?,
            gray: take(Channel::Gray)?,
            provenance,
        })
    }
}

fn check_lux(lux: f64) -> Result<()> {
    if !lux.is_finite() || lux < 0.0 {
        return Err(Error::Domain(format!("luminosity must be finite and >= 0, got {lux}")));
    }
    Ok(())
}

/// Gray-based prediction: the gray curve evaluated at the image luminosity.
pub fn predict_gray(model: &PlrModelSet, lux: f64) -> Result<f64> {
    check_lux(lux)?;
    Ok(model.gray.eval(lux))
}

/// The four single-curve predictions used by the combined model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPredictions {
    pub gray: f64,
    pub red: f64,
    pub green: f64,
    pub blue: f64,
}

impl ChannelPredictions {
    pub fn as_array(&self) -> [f64; 4] {
        [self.gray, self.red, self.green, self.blue]
    }

    pub fn shifted(&self, by: f64) -> Self {
        ChannelPredictions {
            gray: self.gray + by,
            red: self.red + by,
            green: self.green + by,
            blue: self.blue + by,
        }
    }
}

/// Gray curve at the luminosity of `rgb`, and each primary curve at the
/// luminosity of that channel shown alone.
pub fn channel_predictions(
    model: &PlrModelSet,
    rgb: RgbPercent,
    lut: &LuminanceLut,
) -> Result<ChannelPredictions> {
    let lux = lut.query(rgb)?;
    Ok(ChannelPredictions {
        gray: predict_gray(model, lux)?,
        red: model.red.eval(lut.query(Channel::Red.rgb(rgb.r))?),
        green: model.green.eval(lut.query(Channel::Green.rgb(rgb.g))?),
        blue: model.blue.eval(lut.query(Channel::Blue.rgb(rgb.b))?),
    })
}

/// Color-based prediction: the image is treated as a superposition of its
/// three single-channel images, weighted by each channel's share of
/// `r + g + b`. Black falls back to the gray curve.
pub fn predict_color_based(model: &PlrModelSet, rgb: RgbPercent, lut: &LuminanceLut) -> Result<f64> {
    let total = rgb.sum();
    if total <= 0.0 {
        return predict_gray(model, lut.query(RgbPercent::BLACK)?);
    }
    let p = channel_predictions(model, rgb, lut)?;
    Ok(rgb.r / total * p.red + rgb.g / total * p.green + rgb.b / total * p.blue)
}
