//! Screen luminosity from on-screen RGB content.
//!
//! A [`LuminanceLut`] samples the display response on a per-channel grid of
//! RGB percentages. Queries between grid points are interpolated from the
//! enclosing cell; points on a primary-color axis only use the two
//! neighbours on that axis.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Tolerance used when comparing RGB percentages.
pub const RGB_TOL: f64 = 1e-9;

/// Distance below which a query counts as an exact hit on a stored corner.
const EXACT_HIT: f64 = 1e-12;

/// Gaze-region radius in screen pixels.
pub const DEFAULT_GAZE_RADIUS_PX: u32 = 300;

/// An RGB triple expressed in percent of full scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RgbPercent {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl RgbPercent {
    pub const BLACK: RgbPercent = RgbPercent {
        r: 0.0,
        g: 0.0,
        b: 0.0,
    };

    /// Validating constructor. Values within [`RGB_TOL`] outside `[0, 100]`
    /// are clamped; anything further out is a domain error.
    pub fn new(r: f64, g: f64, b: f64) -> Result<Self> {
        let fix = |v: f64, name: &str| -> Result<f64> {
            if !v.is_finite() || !(-RGB_TOL..=100.0 + RGB_TOL).contains(&v) {
                return Err(Error::Domain(format!("{name} channel {v} outside [0, 100]")));
            }
            Ok(v.clamp(0.0, 100.0))
        };
        Ok(RgbPercent {
            r: fix(r, "red")?,
            g: fix(g, "green")?,
            b: fix(b, "blue")?,
        })
    }

    pub fn gray(level: f64) -> Result<Self> {
        Self::new(level, level, level)
    }

    pub fn channels(&self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn approx_eq(&self, other: &RgbPercent) -> bool {
        (self.r - other.r).abs() <= RGB_TOL
            && (self.g - other.g).abs() <= RGB_TOL
            && (self.b - other.b).abs() <= RGB_TOL
    }

    pub fn sum(&self) -> f64 {
        self.r + self.g + self.b
    }

    fn validate(&self) -> Result<()> {
        Self::new(self.r, self.g, self.b).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    Measured,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Synthetic => "synthetic",
            Provenance::Measured => "measured",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "synthetic" => Some(Provenance::Synthetic),
            "measured" => Some(Provenance::Measured),
            _ => None,
        }
    }
}

/// How the eight corners of an enclosing cell are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    /// Inverse-distance weights taken per axis and multiplied (trilinear).
    /// Monotone along every channel when the table is.
    #[default]
    AxisInverseDistance,
    /// Inverse Euclidean distance to each corner in RGB-percent space.
    /// Bounded by the corner values but not monotone along an axis.
    EuclideanInverseDistance,
}

/// Parameters of the gamma display model used for synthetic tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplayModel {
    pub gamma: f64,
    pub max_lux: f64,
    pub levels_per_channel: usize,
    pub luma_weights: [f64; 3],
}

impl Default for DisplayModel {
    fn default() -> Self {
        DisplayModel {
            gamma: 2.2,
            max_lux: 100.0,
            levels_per_channel: 11,
            luma_weights: [0.2126, 0.7152, 0.0722],
        }
    }
}

impl DisplayModel {
    /// Closed-form luminosity of the display model.
    pub fn luminosity(&self, rgb: RgbPercent) -> f64 {
        let [wr, wg, wb] = self.luma_weights;
        let p = |v: f64| (v / 100.0).powf(self.gamma);
        self.max_lux * (wr * p(rgb.r) + wg * p(rgb.g) + wb * p(rgb.b))
    }
}

/// Sampled RGB → luminosity table.
#[derive(Debug, Clone, PartialEq)]
pub struct LuminanceLut {
    grid: [Vec<f64>; 3],
    values: Vec<f64>,
    k: f64,
    provenance: Provenance,
    interpolation: Interpolation,
}

impl LuminanceLut {
    /// Tabulates the gamma display model on a uniform grid.
    pub fn build_synthetic(model: &DisplayModel) -> Result<Self> {
        if !(model.gamma > 0.0) || !model.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma must be > 0, got {}", model.gamma)));
        }
        if !(model.max_lux > 0.0) || !model.max_lux.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "max_lux must be > 0, got {}",
                model.max_lux
            )));
        }
        if model.levels_per_channel < 2 {
            return Err(Error::InvalidParameter(format!(
                "levels_per_channel must be >= 2, got {}",
                model.levels_per_channel
            )));
        }
        let w = model.luma_weights;
        if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "luma weights must be nonnegative and sum to 1, got {w:?}"
            )));
        }
        let n = model.levels_per_channel;
        let levels: Vec<f64> = (0..n).map(|i| 100.0 * i as f64 / (n - 1) as f64).collect();
        let mut values = Vec::with_capacity(n * n * n);
        for &r in &levels {
            for &g in &levels {
                for &b in &levels {
                    values.push(model.luminosity(RgbPercent { r, g, b }));
                }
            }
        }
        Self::from_table(
            [levels.clone(), levels.clone(), levels],
            values,
            1.0,
            Provenance::Synthetic,
        )
    }

    /// Builds a table from explicit grids and values in lexicographic
    /// (red-major) order, checking every table invariant.
    pub fn from_table(
        grid: [Vec<f64>; 3],
        values: Vec<f64>,
        k: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        for (c, levels) in grid.iter().enumerate() {
            if levels.len() < 2 {
                return Err(Error::InvalidInput(format!("channel {c} needs at least two levels")));
            }
            if levels.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidInput(format!(
                    "channel {c} levels must be strictly increasing"
                )));
            }
            if levels[0].abs() > RGB_TOL || (levels[levels.len() - 1] - 100.0).abs() > RGB_TOL {
                return Err(Error::InvalidInput(format!("channel {c} grid must span 0 and 100")));
            }
        }
        let expected = grid[0].len() * grid[1].len() * grid[2].len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidParameter(format!("scale factor k must be > 0, got {k}")));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("luminosity values must be finite and nonnegative".into()));
        }
        if values[0] != 0.0 {
            return Err(Error::InvalidInput(format!(
                "luminosity at (0,0,0) must be 0, got {}",
                values[0]
            )));
        }
        let lut = LuminanceLut {
            grid,
            values,
            k,
            provenance,
            interpolation: Interpolation::default(),
        };
        lut.check_monotone()?;
        Ok(lut)
    }

    fn check_monotone(&self) -> Result<()> {
        let [nr, ng, nb] = self.dims();
        for i in 0..nr {
            for j in 0..ng {
                for l in 0..nb {
                    let v = self.stored(i, j, l);
                    let worse = (i + 1 < nr && self.stored(i + 1, j, l) < v)
                        || (j + 1 < ng && self.stored(i, j + 1, l) < v)
                        || (l + 1 < nb && self.stored(i, j, l + 1) < v);
                    if worse {
                        return Err(Error::InvalidInput(format!(
                            "luminosity decreases along a channel at grid index ({i},{j},{l})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    pub fn with_k(mut self, k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidParameter(format!("scale factor k must be > 0, got {k}")));
        }
        self.k = k;
        Ok(self)
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn grid(&self, channel: usize) -> &[f64] {
        &self.grid[channel]
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.grid[0].len(), self.grid[1].len(), self.grid[2].len()]
    }

    /// Stored (unscaled) value at a grid index.
    pub fn stored(&self, i: usize, j: usize, l: usize) -> f64 {
        let [_, ng, nb] = self.dims();
        self.values[(i * ng + j) * nb + l]
    }

    /// Iterates over every grid triple and its stored value.
    pub fn entries(&self) -> impl Iterator<Item = (RgbPercent, f64)> + '_ {
        let [nr, ng, nb] = self.dims();
        (0..nr * ng * nb).map(move |idx| {
            let l = idx % nb;
            let j = (idx / nb) % ng;
            let i = idx / (nb * ng);
            (
                RgbPercent {
                    r: self.grid[0][i],
                    g: self.grid[1][j],
                    b: self.grid[2][l],
                },
                self.values[idx],
            )
        })
    }

    /// Luminosity (lux-equivalent) of a monochrome image with the given RGB.
    pub fn query(&self, rgb: RgbPercent) -> Result<f64> {
        rgb.validate()?;
        Ok(self.k * self.query_stored(rgb))
    }

    /// Stored values of the corners that contribute to a query, as
    /// `(min, max)`. Useful for checking interpolation bounds.
    pub fn neighbor_range(&self, rgb: RgbPercent) -> Result<(f64, f64)> {
        rgb.validate()?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (_, v) in self.contributors(rgb) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok((lo * self.k, hi * self.k))
    }

    fn query_stored(&self, rgb: RgbPercent) -> f64 {
        let contributors = self.contributors(rgb);
        if contributors.len() == 1 {
            return contributors[0].1;
        }
        match (self.interpolation, contributors.len()) {
            (_, 2) | (Interpolation::AxisInverseDistance, _) => {
                let total: f64 = contributors.iter().map(|(w, _)| w).sum();
                contributors.iter().map(|(w, v)| w * v).sum::<f64>() / total
            }
            (Interpolation::EuclideanInverseDistance, _) => {
                let q = rgb.channels();
                let corners = self.cell_corners(rgb);
                let mut num = 0.0;
                let mut den = 0.0;
                for (corner, v) in corners {
                    let d = corner
                        .iter()
                        .zip(q.iter())
                        .map(|(c, x)| (c - x) * (c - x))
                        .sum::<f64>()
                        .sqrt();
                    if d < EXACT_HIT {
                        return v;
                    }
                    num += v / d;
                    den += 1.0 / d;
                }
                num / den
            }
        }
    }

    /// `(weight, stored value)` pairs used for a query. A single entry
    /// means an exact grid hit.
    fn contributors(&self, rgb: RgbPercent) -> Vec<(f64, f64)> {
        let q = rgb.channels();
        let exact: Vec<Option<usize>> = (0..3).map(|c| self.exact_level(c, q[c])).collect();
        if let [Some(i), Some(j), Some(l)] = exact[..] {
            return vec![(1.0, self.stored(i, j, l))];
        }
        let zero: Vec<bool> = q.iter().map(|v| v.abs() <= RGB_TOL).collect();
        if zero.iter().filter(|z| **z).count() == 2 {
            let c = zero.iter().position(|z| !z).unwrap();
            let (lo, hi) = self.bracket(c, q[c]);
            let levels = &self.grid[c];
            let d_lo = q[c] - levels[lo];
            let d_hi = levels[hi] - q[c];
            let at = |idx: usize| {
                let mut ix = [0usize; 3];
                ix[c] = idx;
                self.stored(ix[0], ix[1], ix[2])
            };
            return vec![(1.0 / d_lo, at(lo)), (1.0 / d_hi, at(hi))];
        }
        let mut out = Vec::with_capacity(8);
        let brackets: Vec<(usize, usize, f64)> = (0..3)
            .map(|c| {
                let (lo, hi) = self.bracket(c, q[c]);
                let t = (q[c] - self.grid[c][lo]) / (self.grid[c][hi] - self.grid[c][lo]);
                (lo, hi, t.clamp(0.0, 1.0))
            })
            .collect();
        for corner in 0..8 {
            let mut w = 1.0;
            let mut ix = [0usize; 3];
            for c in 0..3 {
                let (lo, hi, t) = brackets[c];
                if corner >> (2 - c) & 1 == 1 {
                    ix[c] = hi;
                    w *= t;
                } else {
                    ix[c] = lo;
                    w *= 1.0 - t;
                }
            }
            out.push((w, self.stored(ix[0], ix[1], ix[2])));
        }
        out
    }

    fn cell_corners(&self, rgb: RgbPercent) -> Vec<([f64; 3], f64)> {
        let q = rgb.channels();
        let br: Vec<(usize, usize)> = (0..3).map(|c| self.bracket(c, q[c])).collect();
        let mut out = Vec::with_capacity(8);
        for corner in 0..8 {
            let mut ix = [0usize; 3];
            let mut pos = [0.0; 3];
            for c in 0..3 {
                ix[c] = if corner >> (2 - c) & 1 == 1 { br[c].1 } else { br[c].0 };
                pos[c] = self.grid[c][ix[c]];
            }
            out.push((pos, self.stored(ix[0], ix[1], ix[2])));
        }
        out
    }

    fn exact_level(&self, channel: usize, v: f64) -> Option<usize> {
        let levels = &self.grid[channel];
        let idx = levels.partition_point(|l| *l < v - RGB_TOL);
        (idx < levels.len() && (levels[idx] - v).abs() <= RGB_TOL).then_some(idx)
    }

    /// Indices of the grid levels enclosing `v` (`lo < hi`).
    fn bracket(&self, channel: usize, v: f64) -> (usize, usize) {
        let levels = &self.grid[channel];
        let n = levels.len();
        let hi = levels.partition_point(|l| *l <= v).clamp(1, n - 1);
        (hi - 1, hi)
    }

    /// Serializes the table in the `pupilkit-lut v1` text format.
    pub fn to_text(&self) -> Result<String> {
        let [nr, ng, nb] = self.dims();
        if nr != ng || ng != nb {
            return Err(Error::InvalidInput(
                "the text format requires the same number of levels on every channel".into(),
            ));
        }
        let mut out = format!("pupilkit-lut v1 {} {} {}\n", nr, self.k, self.provenance.as_str());
        for (rgb, v) in self.entries() {
            let _ = writeln!(out, "{} {} {} {}", rgb.r, rgb.g, rgb.b, v);
        }
        Ok(out)
    }

    /// Parses the `pupilkit-lut v1` format. Lines starting with `#` are
    /// ignored.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty LUT file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "pupilkit-lut" || fields[1] != "v1" {
            return Err(Error::parse(
                path,
                hline + 1,
                "expected header `pupilkit-lut v1 <levels> <k> <provenance>`",
            ));
        }
        let levels: usize = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, hline + 1, "bad level count"))?;
        let k: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, hline + 1, "bad scale factor"))?;
        let provenance = Provenance::parse(fields[4])
            .ok_or_else(|| Error::parse(path, hline + 1, "provenance must be synthetic|measured"))?;

        let mut triples = Vec::with_capacity(levels.pow(3));
        for (ln, line) in lines {
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, ln + 1, "expected `r g b lux`"))?;
            if nums.len() != 4 {
                return Err(Error::parse(path, ln + 1, "expected `r g b lux`"));
            }
            triples.push((ln + 1, [nums[0], nums[1], nums[2]], nums[3]));
        }
        if triples.len() != levels.pow(3) {
            return Err(Error::parse(
                path,
                hline + 1,
                format!("expected {} grid rows, found {}", levels.pow(3), triples.len()),
            ));
        }
        let mut grid: [Vec<f64>; 3] = Default::default();
        for (c, axis) in grid.iter_mut().enumerate() {
            let stride = levels.pow(2 - c as u32);
            *axis = (0..levels).map(|i| triples[i * stride].1[c]).collect();
        }
        for (idx, (ln, rgb, _)) in triples.iter().enumerate() {
            let want = [
                grid[0][idx / (levels * levels)],
                grid[1][(idx / levels) % levels],
                grid[2][idx % levels],
            ];
            if want.iter().zip(rgb).any(|(a, b)| (a - b).abs() > RGB_TOL) {
                return Err(Error::parse(path, *ln, "grid rows are not in lexicographic order"));
            }
        }
        let values = triples.into_iter().map(|(_, _, v)| v).collect();
        Self::from_table(grid, values, k, provenance)
    }
}

/// Per-channel arithmetic mean of a frame's pixels.
pub fn frame_mean_rgb(pixels: &[RgbPercent]) -> Result<RgbPercent> {
    if pixels.is_empty() {
        return Err(Error::InvalidInput("empty frame".into()));
    }
    let n = pixels.len() as f64;
    let (r, g, b) = pixels
        .iter()
        .fold((0.0, 0.0, 0.0), |(r, g, b), p| (r + p.r, g + p.g, b + p.b));
    RgbPercent::new(r / n, g / n, b / n)
}

/// A decoded video frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<RgbPercent>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<RgbPercent>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "frame {width}x{height} does not match {} pixels",
                pixels.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    pub fn uniform(width: usize, height: usize, rgb: RgbPercent) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn pixel(&self, x: usize, y: usize) -> RgbPercent {
        self.pixels[y * self.width + x]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut RgbPercent {
        &mut self.pixels[y * self.width + x]
    }

    /// Pixels whose integer coordinates lie within `radius` of `center`.
    pub fn disc(&self, center: (f64, f64), radius: f64) -> Vec<RgbPercent> {
        let (cx, cy) = center;
        let r2 = radius * radius;
        let x0 = (cx - radius).floor().max(0.0) as usize;
        let y0 = (cy - radius).floor().max(0.0) as usize;
        let x1 = ((cx + radius).ceil().max(0.0) as usize).min(self.width.saturating_sub(1));
        let y1 = ((cy + radius).ceil().max(0.0) as usize).min(self.height.saturating_sub(1));
        let mut out = Vec::new();
        if cx + radius < 0.0 || cy + radius < 0.0 {
            return out;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy <= r2 {
                    out.push(self.pixel(x, y));
                }
            }
        }
        out
    }

    /// Parses a binary (P6) or ASCII (P3) PPM image.
    pub fn from_ppm(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::parse(path, 1, msg.to_string());
        let mut pos = 0usize;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated PPM header"));
            }
            tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad PPM header"))?);
        }
        let magic = tokens[0];
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PPM header number"));
        let (width, height, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
        if maxval == 0 || maxval > 65535 {
            return Err(bad("PPM maxval out of range"));
        }
        let n = width * height;
        let scale = 100.0 / maxval as f64;
        let samples: Vec<usize> = match magic {
            "P6" => {
                pos += 1;
                let bpp = if maxval < 256 { 1 } else { 2 };
                let data = bytes.get(pos..pos + 3 * n * bpp).ok_or_else(|| bad("truncated PPM data"))?;
                if bpp == 1 {
                    data.iter().map(|v| *v as usize).collect()
                } else {
                    data.chunks_exact(2)
                        .map(|c| ((c[0] as usize) << 8) | c[1] as usize)
                        .collect()
                }
            }
            "P3" => {
                let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| bad("bad P3 data"))?;
                let vals: Vec<usize> = text
                    .split_whitespace()
                    .take(3 * n)
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("bad P3 sample"))?;
                if vals.len() != 3 * n {
                    return Err(bad("truncated PPM data"));
                }
                vals
            }
            _ => return Err(bad("unsupported PPM magic (expected P3 or P6)")),
        };
        if samples.iter().any(|v| *v > maxval) {
            return Err(bad("PPM sample exceeds maxval"));
        }
        let pixels = samples
            .chunks_exact(3)
            .map(|c| RgbPercent::new(c[0] as f64 * scale, c[1] as f64 * scale, c[2] as f64 * scale))
            .collect::<Result<Vec<_>>>()?;
        Frame::new(width, height, pixels)
    }

    /// Encodes the frame as an 8-bit binary PPM.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            for v in p.channels() {
                out.push((v * 2.55).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }
}

/// Luminosity of one presented frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLuma {
    pub frame_index: usize,
    pub mean_rgb: RgbPercent,
    pub luminosity: f64,
}

/// Result of the gaze-aware luminosity rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveLuma {
    /// RGB that produced the returned luminosity (region or whole frame).
    pub rgb: RgbPercent,
    pub luminosity: f64,
    pub global_luminosity: f64,
    pub used_region: bool,
}

/// Whole-frame luminosity, replaced by the luminosity of the disc of
/// `radius_px` around the gaze point when that region is brighter.
pub fn effective_luminance(
    frame: &Frame,
    gaze: Option<(f64, f64)>,
    lut: &LuminanceLut,
    radius_px: u32,
) -> Result<EffectiveLuma> {
    let global_rgb = frame_mean_rgb(&frame.pixels)?;
    let global = lut.query(global_rgb)?;
    let mut out = EffectiveLuma {
        rgb: global_rgb,
        luminosity: global,
        global_luminosity: global,
        used_region: false,
    };
    let Some((gx, gy)) = gaze else {
        return Ok(out);
    };
    let inside = gx.is_finite()
        && gy.is_finite()
        && (0.0..frame.width as f64).contains(&gx)
        && (0.0..frame.height as f64).contains(&gy);
    if !inside {
        return Ok(out);
    }
    let region = frame.disc((gx, gy), radius_px as f64);
    if region.is_empty() {
        return Ok(out);
    }
    let region_rgb = frame_mean_rgb(&region)?;
    let region_lux = lut.query(region_rgb)?;
    if region_lux > global {
        out.rgb = region_rgb;
        out.luminosity = region_lux;
        out.used_region = true;
    }
    Ok(out)
}

/// Convenience: luminosity of a frame's mean RGB.
pub fn frame_luma(frame_index: usize, pixels: &[RgbPercent], lut: &LuminanceLut) -> Result<FrameLuma> {
    let mean_rgb = frame_mean_rgb(pixels)?;
    Ok(FrameLuma {
        frame_index,
        mean_rgb,
        luminosity: lut.query(mean_rgb)?,
    })
}
