//! Band-power threshold detector.
//!
//! Signals are notch filtered, band-passed with a 4th-order Butterworth
//! response applied forwards and backwards, and cut into non-overlapping
//! windows. A window is positive when its mean in-band power across
//! channels exceeds `median + k * IQR` of all windows of the recording.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{Event, EventList};
use crate::edf::SignalMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error("channels have differing sampling rates")]
    MixedRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub window_s: f64,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// Mains frequency to suppress; `None` disables the notch.
    pub notch_hz: Option<f64>,
    pub threshold_k: f64,
    pub min_event_s: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            window_s: 5.0,
            band_low_hz: 2.0,
            band_high_hz: 40.0,
            notch_hz: Some(50.0),
            threshold_k: 3.0,
            min_event_s: 10.0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self, fs: f64) -> Result<(), BaselineError> {
        let err = |m: String| Err(BaselineError::Config(m));
        let nyquist = fs / 2.0;
        if !(fs.is_finite() && fs > 0.0) {
            return err(format!("sampling rate {fs} is not positive"));
        }
        if !(self.window_s.is_finite() && self.window_s > 0.0) {
            return err(format!("window_s {} must be positive", self.window_s));
        }
        if !(self.band_low_hz > 0.0 && self.band_low_hz < self.band_high_hz && self.band_high_hz < nyquist) {
            return err(format!(
                "band {}-{} Hz must satisfy 0 < low < high < {nyquist}",
                self.band_low_hz, self.band_high_hz
            ));
        }
        if let Some(n) = self.notch_hz {
            if !(n > 0.0 && n < nyquist) {
                return err(format!("notch {n} Hz must lie in (0, {nyquist})"));
            }
        }
        if !(self.threshold_k.is_finite() && self.threshold_k >= 0.0) {
            return err(format!("threshold_k {} must be non-negative", self.threshold_k));
        }
        if !(self.min_event_s.is_finite() && self.min_event_s >= 0.0) {
            return err(format!("min_event_s {} must be non-negative", self.min_event_s));
        }
        Ok(())
    }
}

/// Second-order section in transposed direct form II, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

const BUTTERWORTH4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_5];
const NOTCH_Q: f64 = 30.0;

impl Biquad {
    fn from_raw(b: [f64; 3], a0: f64, a1: f64, a2: f64) -> Self {
        Self {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [a1 / a0, a2 / a0],
        }
    }

    fn trig(f: f64, fs: f64, q: f64) -> (f64, f64) {
        let w0 = 2.0 * std::f64::consts::PI * f / fs;
        (w0.cos(), w0.sin() / (2.0 * q))
    }

    pub fn lowpass(f: f64, fs: f64, q: f64) -> Self {
        let (c, alpha) = Self::trig(f, fs, q);
        let k = (1.0 - c) / 2.0;
        Self::from_raw([k, 2.0 * k, k], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn highpass(f: f64, fs: f64, q: f64) -> Self {
        let (c, alpha) = Self::trig(f, fs, q);
        let k = (1.0 + c) / 2.0;
        Self::from_raw([k, -2.0 * k, k], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn notch(f: f64, fs: f64, q: f64) -> Self {
        let (c, alpha) = Self::trig(f, fs, q);
        Self::from_raw([1.0, -2.0 * c, 1.0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Filters in place, starting from the steady state for a constant
    /// input equal to `x[0]`.
    pub fn apply(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let y0 = self.dc_gain() * x0;
        let mut z2 = b2 * x0 - a2 * y0;
        let mut z1 = b1 * x0 - a1 * y0 + z2;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

pub fn design_filters(cfg: &BaselineConfig, fs: f64) -> Vec<Biquad> {
    let mut sections = Vec::new();
    if let Some(n) = cfg.notch_hz {
        sections.push(Biquad::notch(n, fs, NOTCH_Q));
    }
    for q in BUTTERWORTH4_Q {
        sections.push(Biquad::highpass(cfg.band_low_hz, fs, q));
    }
    for q in BUTTERWORTH4_Q {
        sections.push(Biquad::lowpass(cfg.band_high_hz, fs, q));
    }
    sections
}

/// Zero-phase filtering with odd reflection padding at both ends.
pub fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut buf = Vec::with_capacity(n + 2 * pad);
    buf.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    buf.extend_from_slice(x);
    buf.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    for s in sections {
        s.apply(&mut buf);
    }
    buf.reverse();
    for s in sections {
        s.apply(&mut buf);
    }
    buf.reverse();
    buf[pad..pad + n].to_vec()
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean in-band power per window, averaged across channels.
pub fn window_powers(signals: &SignalMatrix, cfg: &BaselineConfig) -> Result<Vec<f64>, BaselineError> {
    if signals.num_channels() == 0 {
        return Ok(Vec::new());
    }
    let fs = signals.common_fs().ok_or(BaselineError::MixedRates)?;
    cfg.validate(fs)?;
    let win = (cfg.window_s * fs).round() as usize;
    let len = signals.samples.iter().map(Vec::len).min().unwrap_or(0);
    let n_win = len.checked_div(win).unwrap_or(0);
    if n_win == 0 {
        return Ok(Vec::new());
    }
    let sections = design_filters(cfg, fs);
    let pad = (3.0 * fs / cfg.band_low_hz).ceil() as usize;
    let mut power = vec![0.0; n_win];
    for ch in &signals.samples {
        let y = filtfilt(&sections, &ch[..len], pad);
        for (w, p) in power.iter_mut().enumerate() {
            let seg = &y[w * win..(w + 1) * win];
            *p += seg.iter().map(|v| v * v).sum::<f64>() / win as f64;
        }
    }
    let nch = signals.num_channels() as f64;
    power.iter_mut().for_each(|p| *p /= nch);
    Ok(power)
}

/// Flags windows above `median + k * IQR`.
pub fn positive_windows(power: &[f64], k: f64) -> Vec<bool> {
    if power.is_empty() {
        return Vec::new();
    }
    let mut sorted = power.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = quantile(&sorted, 0.5);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let threshold = median + k * iqr;
    // Rounding noise on an otherwise flat power profile is not a detection.
    let floor = median * (1.0 + 1e-9);
    power.iter().map(|&p| p > threshold && p > floor).collect()
}

pub fn detect(signals: &SignalMatrix, cfg: &BaselineConfig) -> Result<EventList, BaselineError> {
    let duration = signals.duration_s;
    let power = window_powers(signals, cfg)?;
    let flags = positive_windows(&power, cfg.threshold_k);
    let mut events = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if !flags[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < flags.len() && flags[i] {
            i += 1;
        }
        let onset = start as f64 * cfg.window_s;
        let dur = ((i - start) as f64 * cfg.window_s).min(duration - onset);
        if dur >= cfg.min_event_s && dur > 0.0 {
            events.push(Event::new(onset, dur));
        }
    }
    log::debug!("baseline detector: {} windows, {} events", power.len(), events.len());
    Ok(EventList::new(duration, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const FS: f64 = 256.0;

    fn noise(seconds: f64, nch: usize, amp: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (seconds * FS) as usize;
        (0..nch).map(|_| (0..n).map(|_| rng.gen_range(-amp..amp)).collect()).collect()
    }

    fn matrix(samples: Vec<Vec<f64>>) -> SignalMatrix {
        let names = (0..samples.len()).map(|i| format!("C{i}")).collect();
        SignalMatrix::uniform(names, FS, samples)
    }

    fn planted() -> SignalMatrix {
        let mut s = noise(300.0, 4, 10.0, 7);
        for ch in s.iter_mut() {
            for (i, v) in ch.iter_mut().enumerate() {
                let t = i as f64 / FS;
                if (100.0..130.0).contains(&t) {
                    *v += 200.0 * (2.0 * PI * 10.0 * t).sin();
                }
            }
        }
        matrix(s)
    }

    #[test]
    fn filters_pass_band_and_reject_stop_band() {
        let cfg = BaselineConfig::default();
        let f = design_filters(&cfg, FS);
        let gain = |hz: f64| {
            let x: Vec<f64> = (0..4096).map(|i| (2.0 * PI * hz * i as f64 / FS).sin()).collect();
            let y = filtfilt(&f, &x, 400);
            let rms = |v: &[f64]| (v[1024..3072].iter().map(|a| a * a).sum::<f64>() / 2048.0).sqrt();
            rms(&y) / rms(&x)
        };
        assert!((gain(10.0) - 1.0).abs() < 0.02);
        assert!(gain(50.0) < 0.01);
        assert!(gain(0.2) < 0.01);
        assert!(gain(100.0) < 0.01);
    }

    #[test]
    fn finds_planted_burst() {
        let ev = detect(&planted(), &BaselineConfig::default()).unwrap();
        assert_eq!(ev.len(), 1);
        let e = ev.events[0];
        assert!(e.onset_s < 130.0 && e.end_s() > 100.0);
        assert!(e.end_s() <= 300.0);
    }

    #[test]
    fn flat_inputs_give_nothing() {
        let cfg = BaselineConfig::default();
        let zeros = matrix(vec![vec![0.0; 256 * 120]; 3]);
        assert!(detect(&zeros, &cfg).unwrap().is_empty());
        let sine: Vec<f64> = (0..256 * 120).map(|i| 50.0 * (2.0 * PI * 10.0 * i as f64 / FS).sin()).collect();
        assert!(detect(&matrix(vec![sine; 3]), &cfg).unwrap().is_empty());
        let short = matrix(noise(4.0, 2, 1.0, 1));
        assert!(detect(&short, &cfg).unwrap().is_empty());
    }

    #[test]
    fn scale_invariant_and_deterministic() {
        let cfg = BaselineConfig::default();
        let base = planted();
        let flags = positive_windows(&window_powers(&base, &cfg).unwrap(), cfg.threshold_k);
        for c in [4.0, 0.5] {
            let mut scaled = base.clone();
            scaled.samples.iter_mut().flatten().for_each(|v| *v *= c);
            let f = positive_windows(&window_powers(&scaled, &cfg).unwrap(), cfg.threshold_k);
            assert_eq!(flags, f);
        }
        assert_eq!(detect(&base, &cfg).unwrap(), detect(&base, &cfg).unwrap());
    }

    #[test]
    fn config_checks() {
        let mut cfg = BaselineConfig::default();
        assert!(cfg.validate(256.0).is_ok());
        assert!(cfg.validate(60.0).is_err());
        cfg.band_low_hz = 50.0;
        assert!(cfg.validate(256.0).is_err());
        let cfg = BaselineConfig { window_s: 0.0, ..BaselineConfig::default() };
        assert!(cfg.validate(256.0).is_err());
    }
}
