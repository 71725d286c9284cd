//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.

use serde::{Deserialize, Serialize};

use super::StandardizeError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResamplerConfig {
    /// Cutoff as a fraction of the Nyquist frequency of the lower rate.
    pub cutoff: f64,
    /// Zero crossings of the sinc kernel on each side of its centre.
    pub zero_crossings: usize,
    pub kaiser_beta: f64,
}

impl Default for ResamplerConfig {
    fn default() -> Self {
        Self {
            cutoff: 0.9,
            zero_crossings: 64,
            kaiser_beta: 8.0,
        }
    }
}

/// Largest denominator tried when approximating a non-integer rate ratio.
const MAX_DENOMINATOR: u64 = 10_000;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Expresses `to / from` as a reduced fraction `up / down`.
pub fn rational_ratio(from: f64, to: f64) -> Result<(u64, u64), StandardizeError> {
    if !(from.is_finite() && to.is_finite() && from > 0.0 && to > 0.0) {
        return Err(StandardizeError::Contract(format!(
            "sampling rates must be positive, got {from} -> {to}"
        )));
    }
    if from.fract() == 0.0 && to.fract() == 0.0 && from < 1e12 && to < 1e12 {
        let (a, b) = (to as u64, from as u64);
        let g = gcd(a, b);
        return Ok((a / g, b / g));
    }
    // Continued-fraction convergents of the ratio.
    let x = to / from;
    let (mut h0, mut h1) = (0u64, 1u64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut rem = x;
    loop {
        let a = rem.floor();
        if a > 1e12 {
            break;
        }
        let a = a as u64;
        let (h2, k2) = (a * h1 + h0, a * k1 + k0);
        if k2 > MAX_DENOMINATOR {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if ((h1 as f64 / k1 as f64) - x).abs() <= 1e-9 * x {
            let g = gcd(h1, k1);
            return Ok((h1 / g, k1 / g));
        }
        let frac = rem - a as f64;
        if frac == 0.0 {
            break;
        }
        rem = 1.0 / frac;
    }
    Err(StandardizeError::Contract(format!(
        "rate ratio {to}/{from} has no rational approximation with denominator <= {MAX_DENOMINATOR}"
    )))
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Reflects an out-of-range index back into `0..n` (mirror without
/// repeating the edge sample).
fn reflect(mut i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

#[derive(Debug, Clone)]
pub struct PolyphaseResampler {
    up: u64,
    down: u64,
    /// Per phase: index offset of the first tap and the tap weights.
    phases: Vec<(isize, Vec<f64>)>,
}

impl PolyphaseResampler {
    pub fn new(from: f64, to: f64, cfg: &ResamplerConfig) -> Result<Self, StandardizeError> {
        if !(cfg.cutoff > 0.0 && cfg.cutoff <= 1.0) || cfg.zero_crossings == 0 || cfg.kaiser_beta < 0.0 {
            return Err(StandardizeError::Contract(format!("invalid resampler configuration {cfg:?}")));
        }
        let (up, down) = rational_ratio(from, to)?;
        // Cutoff in cycles per sample of the virtual upsampled signal.
        let fc = cfg.cutoff * 0.5 / up.max(down) as f64;
        let half_len = cfg.zero_crossings as f64 / (2.0 * fc);
        let i0_beta = bessel_i0(cfg.kaiser_beta);
        let upf = up as f64;
        let phases = (0..up)
            .map(|ph| {
                let ph = ph as f64;
                let i_min = ((-half_len - ph) / upf).ceil() as isize;
                let i_max = ((half_len - ph) / upf).floor() as isize;
                let mut taps: Vec<f64> = (i_min..=i_max)
                    .map(|i| {
                        let tau = ph + i as f64 * upf;
                        let r = tau / half_len;
                        let w = bessel_i0(cfg.kaiser_beta * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                        sinc(2.0 * fc * tau) * w
                    })
                    .collect();
                let sum: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|t| *t /= sum);
                (i_min, taps)
            })
            .collect();
        Ok(Self { up, down, phases })
    }

    pub fn ratio(&self) -> (u64, u64) {
        (self.up, self.down)
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        let num = input_len as u128 * self.up as u128;
        let d = self.down as u128;
        ((num + d / 2) / d) as usize
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let n = input.len();
        if n == 0 {
            return Vec::new();
        }
        if self.up == self.down {
            return input.to_vec();
        }
        let out_len = self.output_len(n);
        let mut out = Vec::with_capacity(out_len);
        for m in 0..out_len as u64 {
            let pos = m * self.down;
            let n0 = (pos / self.up) as isize;
            let (i_min, taps) = &self.phases[(pos % self.up) as usize];
            // Tap i reads input[n0 - i]; taps run from i_min upward.
            let hi = n0 - i_min;
            let lo = hi - (taps.len() as isize - 1);
            let acc = if lo >= 0 && (hi as usize) < n {
                let window = &input[lo as usize..=hi as usize];
                taps.iter().zip(window.iter().rev()).map(|(t, x)| t * x).sum()
            } else {
                taps.iter()
                    .enumerate()
                    .map(|(k, t)| t * input[reflect(hi - k as isize, n)])
                    .sum()
            };
            out.push(acc);
        }
        out
    }
}

/// Resamples one channel from `from` Hz to `to` Hz.
pub fn resample_channel(input: &[f64], from: f64, to: f64, cfg: &ResamplerConfig) -> Result<Vec<f64>, StandardizeError> {
    if from == to {
        return Ok(input.to_vec());
    }
    Ok(PolyphaseResampler::new(from, to, cfg)?.process(input))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        assert_eq!(rational_ratio(512.0, 256.0).unwrap(), (1, 2));
        assert_eq!(rational_ratio(200.0, 256.0).unwrap(), (32, 25));
        assert_eq!(rational_ratio(250.0, 256.0).unwrap(), (128, 125));
        assert_eq!(rational_ratio(256.0, 256.0).unwrap(), (1, 1));
        assert_eq!(rational_ratio(0.5, 256.0).unwrap(), (512, 1));
        assert_eq!(rational_ratio(199.5, 256.0).unwrap(), (512, 399));
        assert!(rational_ratio(std::f64::consts::PI * 100.0, 256.0).is_err());
        assert!(rational_ratio(0.0, 256.0).is_err());
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-4, 5), 4);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(8, 5), 0);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-12);
        assert!((bessel_i0(8.0) - 427.564_115_721_804_7).abs() < 1e-9);
    }

    #[test]
    fn phases_have_unit_gain() {
        let r = PolyphaseResampler::new(200.0, 256.0, &ResamplerConfig::default()).unwrap();
        for (_, taps) in &r.phases {
            assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn output_lengths() {
        let r = PolyphaseResampler::new(512.0, 256.0, &ResamplerConfig::default()).unwrap();
        assert_eq!(r.output_len(5120), 2560);
        assert_eq!(r.output_len(5121), 2561);
        let r = PolyphaseResampler::new(200.0, 256.0, &ResamplerConfig::default()).unwrap();
        assert_eq!(r.output_len(2000), 2560);
        assert_eq!(r.process(&vec![1.0; 2000]).len(), 2560);
    }

    #[test]
    fn short_inputs_do_not_panic() {
        let r = PolyphaseResampler::new(512.0, 256.0, &ResamplerConfig::default()).unwrap();
        assert!(r.process(&[]).is_empty());
        assert!((r.process(&[3.0])[0] - 3.0).abs() < 1e-12);
        let y = r.process(&[1.0, 2.0, 3.0]);
        assert_eq!(y.len(), 2);
    }
}
