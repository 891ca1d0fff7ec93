//! Rate-distortion measurement: PSNR, bits per pixel, Bjøntegaard delta
//! rate, CSV tables and RD plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frames::{Frame, GopStructure, VideoSequence};
use crate::pipeline::{decode_sequence, encode_sequence, CodecModel, SequenceBitstream};

/// PSNR (peak 1.0) reported when the MSE is below `1e-10`.
pub const PSNR_CAP_DB: f64 = 100.0;

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr(x: &Frame, y: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(x.mse(y)?))
}

pub fn sequence_bpp(bits_total: f64, n_frames: usize, height: usize, width: usize) -> Result<f64> {
    if n_frames == 0 || height == 0 || width == 0 {
        return Err(Error::Evaluation("bpp needs positive frame count and dimensions".into()));
    }
    Ok(bits_total / (n_frames * height * width) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub lambda: f64,
    pub bpp: f64,
    pub psnr_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RdCurve {
    pub label: String,
    pub points: Vec<RdPoint>,
}

impl RdCurve {
    /// Sorts by rate; requires at least four finite points with strictly
    /// increasing positive rates.
    pub fn new(label: impl Into<String>, mut points: Vec<RdPoint>) -> Result<Self> {
        let label = label.into();
        if points.len() < 4 {
            return Err(Error::Evaluation(format!("curve {label:?} has {} points, need 4", points.len())));
        }
        if points
            .iter()
            .any(|p| !(p.bpp.is_finite() && p.psnr_db.is_finite()) || p.bpp <= 0.0)
        {
            return Err(Error::Evaluation(format!("curve {label:?} has a non-finite or non-positive point")));
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        if points.windows(2).any(|w| w[1].bpp <= w[0].bpp) {
            return Err(Error::Evaluation(format!("curve {label:?} has repeated rates")));
        }
        Ok(Self { label, points })
    }

    /// Whether PSNR never decreases with rate.
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1].psnr_db >= w[0].psnr_db)
    }

    fn psnr_range(&self) -> (f64, f64) {
        let lo = self.points.iter().map(|p| p.psnr_db).fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().map(|p| p.psnr_db).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BdFit {
    #[default]
    Cubic,
    Pchip,
}

impl FromStr for BdFit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cubic" => Ok(BdFit::Cubic),
            "pchip" => Ok(BdFit::Pchip),
            _ => Err(Error::Config(format!("unknown BD fit {s:?}"))),
        }
    }
}

/// Least-squares cubic `log10(bpp) = c0 + c1 t + c2 t^2 + c3 t^3` with
/// `t = (psnr - center) / scale`.
#[derive(Clone, Copy, Debug)]
pub struct CubicFit {
    pub coeffs: [f64; 4],
    pub center: f64,
    pub scale: f64,
}

impl CubicFit {
    pub fn fit(curve: &RdCurve) -> Result<Self> {
        let n = curve.points.len();
        let center = curve.points.iter().map(|p| p.psnr_db).sum::<f64>() / n as f64;
        let scale = curve
            .points
            .iter()
            .map(|p| (p.psnr_db - center).abs())
            .fold(0.0, f64::max);
        if scale <= 0.0 {
            return Err(Error::Evaluation(format!("curve {:?} has a single PSNR value", curve.label)));
        }
        let a = DMatrix::from_fn(n, 4, |r, c| ((curve.points[r].psnr_db - center) / scale).powi(c as i32));
        let b = DVector::from_iterator(n, curve.points.iter().map(|p| p.bpp.log10()));
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.iter().any(|&s| s <= smax * 1e-10) {
            return Err(Error::Evaluation(format!("degenerate fit for curve {:?}", curve.label)));
        }
        let x = svd
            .solve(&b, 1e-12)
            .map_err(|e| Error::Evaluation(format!("fit failed for {:?}: {e}", curve.label)))?;
        Ok(Self {
            coeffs: [x[0], x[1], x[2], x[3]],
            center,
            scale,
        })
    }

    pub fn eval(&self, psnr: f64) -> f64 {
        let t = (psnr - self.center) / self.scale;
        self.coeffs[0] + t * (self.coeffs[1] + t * (self.coeffs[2] + t * self.coeffs[3]))
    }

    /// Exact integral over `[lo, hi]`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let prim = |p: f64| {
            let t = (p - self.center) / self.scale;
            let c = &self.coeffs;
            self.scale * t * (c[0] + t * (c[1] / 2.0 + t * (c[2] / 3.0 + t * c[3] / 4.0)))
        };
        prim(hi) - prim(lo)
    }
}

/// Monotone piecewise-cubic Hermite interpolant of log10(bpp) over PSNR.
#[derive(Clone, Debug)]
pub struct PchipFit {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl PchipFit {
    pub fn fit(curve: &RdCurve) -> Result<Self> {
        let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.psnr_db, p.bpp.log10())).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Evaluation(format!("PCHIP needs distinct PSNR values in {:?}", curve.label)));
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let n = xs.len();
        let h: Vec<f64> = (0..n - 1).map(|i| xs[i + 1] - xs[i]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut ds = vec![0.0; n];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] > 0.0 {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                ds[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
            let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if d * d0 <= 0.0 {
                0.0
            } else if d0 * d1 <= 0.0 && d.abs() > 3.0 * d0.abs() {
                3.0 * d0
            } else {
                d
            }
        };
        ds[0] = end(h[0], h[1], delta[0], delta[1]);
        ds[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Ok(Self { xs, ys, ds })
    }

    fn segment(&self, x: f64) -> usize {
        self.xs.partition_point(|&v| v <= x).clamp(1, self.xs.len() - 1) - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.ds[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.ds[i + 1]
    }

    /// Exact integral over `[lo, hi]` (inside the data range).
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let seg_int = |i: usize, a: f64, b: f64| {
            let h = self.xs[i + 1] - self.xs[i];
            let prim = |x: f64| {
                let t = (x - self.xs[i]) / h;
                let (t2, t3, t4) = (t * t, t * t * t, t * t * t * t);
                h * ((t4 / 2.0 - t3 + t) * self.ys[i]
                    + (t4 / 4.0 - 2.0 * t3 / 3.0 + t2 / 2.0) * h * self.ds[i]
                    + (-t4 / 2.0 + t3) * self.ys[i + 1]
                    + (t4 / 4.0 - t3 / 3.0) * h * self.ds[i + 1])
            };
            prim(b) - prim(a)
        };
        let mut total = 0.0;
        for i in 0..self.xs.len() - 1 {
            let a = lo.max(self.xs[i]);
            let b = hi.min(self.xs[i + 1]);
            if b > a {
                total += seg_int(i, a, b);
            }
        }
        total
    }
}

/// Common PSNR interval of two curves; errors if shorter than 1 dB.
pub fn overlap(test: &RdCurve, anchor: &RdCurve) -> Result<(f64, f64)> {
    let (a0, a1) = anchor.psnr_range();
    let (t0, t1) = test.psnr_range();
    let (lo, hi) = (a0.max(t0), a1.min(t1));
    if hi - lo < 1.0 {
        return Err(Error::Evaluation(format!(
            "PSNR overlap of {:?} and {:?} is {:.3} dB (< 1 dB)",
            test.label,
            anchor.label,
            (hi - lo).max(0.0)
        )));
    }
    Ok((lo, hi))
}

/// Bjøntegaard delta rate of `test` against `anchor`, in percent
/// (negative means `test` needs fewer bits at equal quality).
pub fn bd_rate(test: &RdCurve, anchor: &RdCurve) -> Result<f64> {
    bd_rate_with(test, anchor, BdFit::Cubic)
}

pub fn bd_rate_with(test: &RdCurve, anchor: &RdCurve, fit: BdFit) -> Result<f64> {
    let (lo, hi) = overlap(test, anchor)?;
    let (it, ia) = match fit {
        BdFit::Cubic => (
            CubicFit::fit(test)?.integral(lo, hi),
            CubicFit::fit(anchor)?.integral(lo, hi),
        ),
        BdFit::Pchip => (
            PchipFit::fit(test)?.integral(lo, hi),
            PchipFit::fit(anchor)?.integral(lo, hi),
        ),
    };
    let avg = (it - ia) / (hi - lo);
    let out = (10f64.powf(avg) - 1.0) * 100.0;
    if !out.is_finite() {
        return Err(Error::Evaluation("BD-rate is not finite".into()));
    }
    Ok(out)
}

pub fn curves_to_csv(curves: &[RdCurve]) -> String {
    let mut s = String::from("label,lambda,bpp,psnr_db\n");
    for c in curves {
        for p in &c.points {
            let _ = writeln!(s, "{},{},{},{}", c.label, p.lambda, p.bpp, p.psnr_db);
        }
    }
    s
}

/// Parses `label,lambda,bpp,psnr_db` rows into one curve per label, in
/// first-appearance order.
pub fn parse_csv(text: &str) -> Result<Vec<RdCurve>> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<RdPoint>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("label")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |what: &str| Error::Config(format!("line {}: {what}: {line:?}", i + 1));
        if fields.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
        let (Some(lambda), Some(bpp), Some(psnr_db)) = (num(fields[1]), num(fields[2]), num(fields[3])) else {
            return Err(bad("malformed number"));
        };
        let label = fields[0].to_string();
        if !rows.contains_key(&label) {
            order.push(label.clone());
        }
        rows.entry(label).or_default().push(RdPoint { lambda, bpp, psnr_db });
    }
    order
        .into_iter()
        .map(|l| {
            let pts = rows.remove(&l).unwrap_or_default();
            RdCurve::new(l, pts)
        })
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<RdCurve>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// PSNR-over-bpp raster plot, one colored polyline per curve.
pub fn plot_curves(curves: &[RdCurve], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let all: Vec<&RdPoint> = curves.iter().flat_map(|c| &c.points).collect();
    if all.is_empty() {
        return img;
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &all {
        x0 = x0.min(p.bpp);
        x1 = x1.max(p.bpp);
        y0 = y0.min(p.psnr_db);
        y1 = y1.max(p.psnr_db);
    }
    let pad = |a: f64, b: f64| if b - a < 1e-9 { (a - 0.5, b + 0.5) } else { (a, b) };
    let ((x0, x1), (y0, y1)) = (pad(x0, x1), pad(y0, y1));
    let margin = 24i64;
    let (w, h) = (width as i64 - 2 * margin, height as i64 - 2 * margin);
    let to_px = |p: &RdPoint| {
        (
            margin + ((p.bpp - x0) / (x1 - x0) * w as f64).round() as i64,
            margin + h - ((p.psnr_db - y0) / (y1 - y0) * h as f64).round() as i64,
        )
    };
    let axis = Rgb([0, 0, 0]);
    draw_line(&mut img, (margin, margin + h), (margin + w, margin + h), axis);
    draw_line(&mut img, (margin, margin), (margin, margin + h), axis);
    for (ci, c) in curves.iter().enumerate() {
        let color = Rgb(PALETTE[ci % PALETTE.len()]);
        let px: Vec<(i64, i64)> = c.points.iter().map(to_px).collect();
        for seg in px.windows(2) {
            draw_line(&mut img, seg[0], seg[1], color);
        }
        for &(x, y) in &px {
            for d in -2..=2 {
                draw_line(&mut img, (x - 2, y + d), (x + 2, y + d), color);
            }
        }
    }
    img
}

pub fn save_plot(curves: &[RdCurve], path: &Path) -> Result<()> {
    plot_curves(curves, 640, 480).save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Table of BD-rates of every test curve against every anchor curve.
pub fn bd_rate_table(tests: &[RdCurve], anchors: &[RdCurve], fit: BdFit) -> Result<String> {
    let mut s = String::from("test \\ anchor");
    for a in anchors {
        let _ = write!(s, "\t{}", a.label);
    }
    s.push('\n');
    for t in tests {
        s.push_str(&t.label);
        for a in anchors {
            let _ = write!(s, "\t{:.2}%", bd_rate_with(t, a, fit)?);
        }
        s.push('\n');
    }
    Ok(s)
}

/// Rate and quality of one sequence coded with real bitstreams.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceEval {
    pub frames: usize,
    pub bits: f64,
    pub bpp: f64,
    pub estimated_bpp: f64,
    pub psnr_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelEval {
    pub point: RdPoint,
    pub sequences: Vec<SequenceEval>,
}

/// Encodes every sequence, decodes the serialized bitstream and measures
/// decoded PSNR against the source and actual bpp over all pixels.
pub fn eval_model(model: &CodecModel, sequences: &[VideoSequence], gop: usize) -> Result<ModelEval> {
    if sequences.is_empty() {
        return Err(Error::Evaluation("no sequences to evaluate".into()));
    }
    let mut out = Vec::with_capacity(sequences.len());
    let (mut bits, mut pixels, mut psnr_sum, mut frames) = (0.0, 0usize, 0.0, 0usize);
    for seq in sequences {
        let structure = GopStructure::new(seq.len(), gop)?;
        let report = encode_sequence(seq, &structure, model)?;
        let bytes = report.bitstream.to_bytes();
        let decoded = decode_sequence(&SequenceBitstream::parse(&bytes)?, model)?;
        let psnrs = seq
            .frames()
            .iter()
            .zip(decoded.frames())
            .map(|(a, b)| psnr(a, b))
            .collect::<Result<Vec<_>>>()?;
        let (_, h, w) = seq.frames()[0].dims();
        let seq_bits = bytes.len() as f64 * 8.0;
        let estimated: f64 = report
            .frame_bits
            .iter()
            .zip(&report.estimated_bits)
            .map(|(real, est)| if *est > 0.0 { *est } else { *real })
            .sum();
        let mean = psnrs.iter().sum::<f64>() / psnrs.len() as f64;
        out.push(SequenceEval {
            frames: seq.len(),
            bits: seq_bits,
            bpp: sequence_bpp(seq_bits, seq.len(), h, w)?,
            estimated_bpp: sequence_bpp(estimated, seq.len(), h, w)?,
            psnr_db: mean,
        });
        bits += seq_bits;
        pixels += seq.len() * h * w;
        psnr_sum += psnrs.iter().sum::<f64>();
        frames += seq.len();
    }
    Ok(ModelEval {
        point: RdPoint {
            lambda: model.config.f32("loss.lambda")? as f64,
            bpp: bits / pixels as f64,
            psnr_db: psnr_sum / frames as f64,
        },
        sequences: out,
    })
}

/// One RD point per model, written as CSV and plotted under `out_dir`.
pub fn eval_models(
    label: &str,
    models: &[CodecModel],
    sequences: &[VideoSequence],
    gop: usize,
    out_dir: &Path,
) -> Result<Vec<RdPoint>> {
    let points = models
        .iter()
        .map(|m| eval_model(m, sequences, gop).map(|e| e.point))
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = points.clone();
    sorted.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
    let curve = RdCurve {
        label: label.to_string(),
        points: sorted,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = out_dir.join("rd.csv");
    std::fs::write(&csv, curves_to_csv(std::slice::from_ref(&curve))).map_err(|e| Error::io(&csv, e))?;
    save_plot(&[curve], &out_dir.join("rd.png"))?;
    Ok(points)
}
