//! Second-order Butterworth sections (bilinear transform with prewarping).

use std::f64::consts::{PI, SQRT_2};

/// Direct-form-I biquad, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn lowpass(corner_hz: f64, rate_hz: f64) -> Self {
        let k = (PI * corner_hz / rate_hz).tan();
        let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
        let b0 = k * k * norm;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - SQRT_2 * k + k * k) * norm],
        }
    }

    pub fn highpass(corner_hz: f64, rate_hz: f64) -> Self {
        let k = (PI * corner_hz / rate_hz).tan();
        let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
        Self {
            b: [norm, -2.0 * norm, norm],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - SQRT_2 * k + k * k) * norm],
        }
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }

    /// Magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / rate_hz;
        let z1 = (w.cos(), -w.sin());
        let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (self.b[0] + self.b[1] * z1.0 + self.b[2] * z2.0, self.b[1] * z1.1 + self.b[2] * z2.1);
        let den = (1.0 + self.a[0] * z1.0 + self.a[1] * z2.0, self.a[0] * z1.1 + self.a[1] * z2.1);
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }

    /// Causal filtering, starting from the steady state of a constant
    /// input equal to `x[0]`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let Some(&x0) = x.first() else { return Vec::new() };
        let y0 = self.dc_gain() * x0;
        let (mut x1, mut x2, mut y1, mut y2) = (x0, x0, y0, y0);
        x.iter()
            .map(|&xn| {
                let yn = self.b[0] * xn + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
                x2 = x1;
                x1 = xn;
                y2 = y1;
                y1 = yn;
                yn
            })
            .collect()
    }
}

/// Cascade of biquads applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade(pub Vec<Biquad>);

impl Cascade {
    /// High-pass at `low_hz` followed by low-pass at `high_hz`.
    pub fn bandpass(low_hz: f64, high_hz: f64, rate_hz: f64) -> Self {
        Cascade(vec![Biquad::highpass(low_hz, rate_hz), Biquad::lowpass(high_hz, rate_hz)])
    }

    pub fn lowpass(corner_hz: f64, rate_hz: f64) -> Self {
        Cascade(vec![Biquad::lowpass(corner_hz, rate_hz)])
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().fold(x.to_vec(), |acc, s| s.apply(&acc))
    }

    pub fn magnitude(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        self.0.iter().map(|s| s.magnitude(freq_hz, rate_hz)).product()
    }

    /// Sum of squared impulse-response samples over `len` samples, i.e. the
    /// output variance for unit-variance white input.
    pub fn noise_gain(&self, len: usize) -> f64 {
        let mut impulse = vec![0.0; len];
        impulse[0] = 1.0;
        // zero initial state: the leading sample is zero, so steady-state init is inert
        let mut x = vec![0.0; len + 1];
        x[1..].copy_from_slice(&impulse);
        let h = self.apply(&x);
        h[1..].iter().map(|v| v * v).sum()
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding of
    /// `pad` samples at each end.
    pub fn filtfilt(&self, x: &[f64], pad: usize) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = pad.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        let mut y = self.apply(&ext);
        y.reverse();
        let mut y = self.apply(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}
