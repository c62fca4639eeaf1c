//! Slow reference log-mel: direct DFT, dense triangular filters, all in f64.

use std::f64::consts::PI;

const SR: f64 = 16_000.0;
const N_FFT: usize = 1024;
const WIN: usize = 400;
const HOP: usize = 160;
const MELS: usize = 64;

fn mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `MELS × (N_FFT/2 + 1)` triangles peaking at 1, edges evenly spaced in mel from 0 Hz to Nyquist.
pub fn filters() -> Vec<Vec<f64>> {
    let top = mel(SR / 2.0);
    let edge = |i: usize| inv_mel(top * i as f64 / (MELS + 1) as f64);
    (0..MELS)
        .map(|m| {
            let (a, b, c) = (edge(m), edge(m + 1), edge(m + 2));
            (0..=N_FFT / 2)
                .map(|k| {
                    let f = k as f64 * SR / N_FFT as f64;
                    if f <= a || f >= c {
                        0.0
                    } else if f <= b {
                        (f - a) / (b - a)
                    } else {
                        (c - f) / (c - b)
                    }
                })
                .collect()
        })
        .collect()
}

/// Centered frames, reflection at the edges (no repeated edge sample),
/// periodic Hann, zero-padded DFT, natural log floored at 1e-10.
pub fn log_mel(samples: &[f32]) -> Vec<Vec<f64>> {
    let n = samples.len() as isize;
    let reflect = |mut i: isize| -> usize {
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        i as usize
    };
    let hann: Vec<f64> = (0..WIN).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / WIN as f64).cos())).collect();
    let cos: Vec<f64> = (0..N_FFT).map(|i| (2.0 * PI * i as f64 / N_FFT as f64).cos()).collect();
    let sin: Vec<f64> = (0..N_FFT).map(|i| (2.0 * PI * i as f64 / N_FFT as f64).sin()).collect();
    let fb = filters();
    let frames = samples.len() / HOP + 1;
    (0..frames)
        .map(|t| {
            let start = (t * HOP) as isize - (WIN / 2) as isize;
            let x: Vec<f64> = (0..WIN)
                .map(|i| samples[reflect(start + i as isize)] as f64 * hann[i])
                .collect();
            let power: Vec<f64> = (0..=N_FFT / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (i, v) in x.iter().enumerate() {
                        let idx = (k * i) % N_FFT;
                        re += v * cos[idx];
                        im -= v * sin[idx];
                    }
                    re * re + im * im
                })
                .collect();
            fb.iter()
                .map(|row| row.iter().zip(&power).map(|(w, p)| w * p).sum::<f64>().max(1e-10).ln())
                .collect()
        })
        .collect()
}
