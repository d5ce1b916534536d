//! Pixel-fidelity and structural similarity metrics, plus aggregate reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::radiomap::RadioMap;

pub const SSIM_WINDOW: usize = 8;
/// `(0.01 L)^2` and `(0.03 L)^2` for a unit dynamic range.
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

fn check_shape(y: &RadioMap, y_hat: &RadioMap) -> Result<()> {
    if !y.same_shape(y_hat) {
        return Err(Error::arg(format!(
            "metric inputs differ in shape: {}x{} vs {}x{}",
            y.width(),
            y.height(),
            y_hat.width(),
            y_hat.height()
        )));
    }
    Ok(())
}

fn squared_error(y: &RadioMap, y_hat: &RadioMap) -> Vec<f64> {
    y.values().iter().zip(y_hat.values()).map(|(a, b)| (a - b) * (a - b)).collect()
}

pub fn mse(y: &RadioMap, y_hat: &RadioMap) -> Result<f64> {
    check_shape(y, y_hat)?;
    Ok(pairwise_sum(&squared_error(y, y_hat)) / y.len() as f64)
}

/// `sum (y - y_hat)^2 / sum y^2`.
pub fn nmse(y: &RadioMap, y_hat: &RadioMap) -> Result<f64> {
    check_shape(y, y_hat)?;
    let energy = pairwise_sum(&y.values().iter().map(|v| v * v).collect::<Vec<_>>());
    if energy <= 0.0 {
        return Err(Error::UndefinedMetric("nmse of an all-zero reference map".into()));
    }
    Ok(pairwise_sum(&squared_error(y, y_hat)) / energy)
}

pub fn rmse(y: &RadioMap, y_hat: &RadioMap) -> Result<f64> {
    Ok(mse(y, y_hat)?.sqrt())
}

/// Returns `f64::INFINITY` for identical maps.
pub fn psnr(y: &RadioMap, y_hat: &RadioMap, max_value: f64) -> Result<f64> {
    if !(max_value > 0.0) {
        return Err(Error::arg(format!("psnr peak must be positive, got {max_value}")));
    }
    let m = mse(y, y_hat)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / m).log10())
}

fn check_unit_range(m: &RadioMap) -> Result<()> {
    if m.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::arg("ssim inputs must lie in [0, 1]"));
    }
    Ok(())
}

/// SSIM of one window from its first and second moments (population variances).
pub fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cov: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Summed-area table with a zero first row and column.
fn integral(w: usize, h: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += f(y * w + x);
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

/// Mean SSIM over all 8x8 windows at stride 1 with a uniform window.
pub fn ssim(y: &RadioMap, y_hat: &RadioMap) -> Result<f64> {
    check_shape(y, y_hat)?;
    let (w, h) = (y.width(), y.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::arg(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} cells, got {w}x{h}")));
    }
    check_unit_range(y)?;
    check_unit_range(y_hat)?;
    let (a, b) = (y.values(), y_hat.values());
    let sa = integral(w, h, |i| a[i]);
    let sb = integral(w, h, |i| b[i]);
    let saa = integral(w, h, |i| a[i] * a[i]);
    let sbb = integral(w, h, |i| b[i] * b[i]);
    let sab = integral(w, h, |i| a[i] * b[i]);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let stride = w + 1;
    let mut scores = Vec::with_capacity((w - SSIM_WINDOW + 1) * (h - SSIM_WINDOW + 1));
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (x1, y1) = (x0 + SSIM_WINDOW, y0 + SSIM_WINDOW);
            let boxed =
                |s: &[f64]| (s[y1 * stride + x1] - s[y0 * stride + x1] - s[y1 * stride + x0] + s[y0 * stride + x0]) / n;
            let (mx, my) = (boxed(&sa), boxed(&sb));
            let vx = (boxed(&saa) - mx * mx).max(0.0);
            let vy = (boxed(&sbb) - my * my).max(0.0);
            let cov = boxed(&sab) - mx * my;
            scores.push(ssim_from_moments(mx, my, vx, vy, cov));
        }
    }
    Ok(pairwise_sum(&scores) / scores.len() as f64)
}

/// Metrics of one reference/prediction pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMetrics {
    pub nmse: f64,
    pub rmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Evaluates all four metrics on maps already scaled to `[0, 1]`, with a PSNR peak of 1.
pub fn evaluate_pair(y: &RadioMap, y_hat: &RadioMap) -> Result<SampleMetrics> {
    Ok(SampleMetrics { nmse: nmse(y, y_hat)?, rmse: rmse(y, y_hat)?, psnr: psnr(y, y_hat, 1.0)?, ssim: ssim(y, y_hat)? })
}

/// Means over samples plus the per-sample values they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub nmse: f64,
    pub rmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub samples: Vec<SampleMetrics>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    pairwise_sum(&v) / v.len() as f64
}

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v:e}")
    }
}

impl MetricsReport {
    pub fn from_samples(samples: Vec<SampleMetrics>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::UndefinedMetric("report over zero samples".into()));
        }
        Ok(MetricsReport {
            nmse: mean(samples.iter().map(|s| s.nmse)),
            rmse: mean(samples.iter().map(|s| s.rmse)),
            psnr: mean(samples.iter().map(|s| s.psnr)),
            ssim: mean(samples.iter().map(|s| s.ssim)),
            samples,
        })
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    /// Human-readable summary, one metric per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "samples: {}", self.count()).unwrap();
        writeln!(s, "NMSE:    {:.6}", self.nmse).unwrap();
        writeln!(s, "RMSE:    {:.6}", self.rmse).unwrap();
        writeln!(s, "PSNR:    {:.3} dB", self.psnr).unwrap();
        writeln!(s, "SSIM:    {:.6}", self.ssim).unwrap();
        s
    }

    /// `key = value` lines; per-sample values are comma separated.
    pub fn to_kv(&self) -> String {
        let join = |f: fn(&SampleMetrics) -> f64| self.samples.iter().map(|s| fmt_value(f(s))).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        writeln!(s, "count = {}", self.count()).unwrap();
        writeln!(s, "nmse = {}", fmt_value(self.nmse)).unwrap();
        writeln!(s, "rmse = {}", fmt_value(self.rmse)).unwrap();
        writeln!(s, "psnr = {}", fmt_value(self.psnr)).unwrap();
        writeln!(s, "ssim = {}", fmt_value(self.ssim)).unwrap();
        writeln!(s, "nmse_samples = {}", join(|m| m.nmse)).unwrap();
        writeln!(s, "rmse_samples = {}", join(|m| m.rmse)).unwrap();
        writeln!(s, "psnr_samples = {}", join(|m| m.psnr)).unwrap();
        writeln!(s, "ssim_samples = {}", join(|m| m.ssim)).unwrap();
        s
    }

    /// Parses the block written by [`MetricsReport::to_kv`].
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cols: [Vec<f64>; 4] = Default::default();
        let keys = ["nmse_samples", "rmse_samples", "psnr_samples", "ssim_samples"];
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            if let Some(i) = keys.iter().position(|key| *key == k.trim()) {
                cols[i] = v
                    .trim()
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad metric value {s:?}"))))
                    .collect::<Result<_>>()?;
            }
        }
        let n = cols[0].len();
        if cols.iter().any(|c| c.len() != n) {
            return Err(Error::Format("per-sample metric lists differ in length".into()));
        }
        let samples = (0..n)
            .map(|i| SampleMetrics { nmse: cols[0][i], rmse: cols[1][i], psnr: cols[2][i], ssim: cols[3][i] })
            .collect();
        Self::from_samples(samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> RadioMap {
        RadioMap::from_values(w, h, (0..w * h).map(|i| f(i % w, i / w)).collect()).unwrap()
    }

    #[test]
    fn identical_maps() {
        let y = map(9, 8, |x, y| ((x * 7 + y * 3) % 5) as f64 / 4.0);
        assert_eq!(nmse(&y, &y).unwrap(), 0.0);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_eq!(psnr(&y, &y, 1.0).unwrap(), f64::INFINITY);
        assert!((ssim(&y, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ones_against_zeros() {
        let y = RadioMap::filled(2, 2, 1.0).unwrap();
        let z = RadioMap::zeros(2, 2);
        assert_eq!(nmse(&y, &z).unwrap(), 1.0);
        assert_eq!(rmse(&y, &z).unwrap(), 1.0);
        assert_eq!(psnr(&y, &z, 1.0).unwrap(), 0.0);
        assert!(matches!(nmse(&z, &y), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn constant_offset_and_psnr_examples() {
        let y = map(6, 5, |x, y| (x + y) as f64 * 0.1);
        let shifted = map(6, 5, |x, y| (x + y) as f64 * 0.1 + 0.5);
        assert!((rmse(&y, &shifted).unwrap() - 0.5).abs() < 1e-15);
        let z = RadioMap::zeros(10, 10);
        let p = RadioMap::filled(10, 10, 0.1).unwrap();
        assert!((psnr(&z, &p, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert!(psnr(&z, &p, 0.0).is_err());
    }

    #[test]
    fn constant_maps_have_unit_ssim() {
        let a = RadioMap::filled(8, 8, 0.5).unwrap();
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_argument_errors() {
        let small = RadioMap::zeros(7, 9);
        assert!(matches!(ssim(&small, &small), Err(Error::Argument(_))));
        let over = RadioMap::filled(8, 8, 1.5).unwrap();
        assert!(ssim(&over, &over).is_err());
        let other = RadioMap::zeros(8, 9);
        assert!(nmse(&other, &over).is_err());
    }

    #[test]
    fn report_text_and_kv_round_trip() {
        let s1 = SampleMetrics { nmse: 0.5, rmse: 0.25, psnr: 12.0, ssim: 0.75 };
        let s2 = SampleMetrics { nmse: 0.1, rmse: 0.05, psnr: f64::INFINITY, ssim: 1.0 };
        let r = MetricsReport::from_samples(vec![s1, s2]).unwrap();
        assert!((r.nmse - 0.3).abs() < 1e-15);
        assert_eq!(r.psnr, f64::INFINITY);
        assert!(r.to_text().contains("NMSE:"));
        let back = MetricsReport::from_kv(&r.to_kv()).unwrap();
        assert_eq!(back, r);
        assert!(MetricsReport::from_samples(vec![]).is_err());
    }
}
