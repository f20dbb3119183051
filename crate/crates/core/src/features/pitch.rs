//! Autocorrelation pitch stand-in: 13 values per frame.
//!
//! Layout: 11 normalised autocorrelation values at lags spread evenly over
//! the 60–400 Hz period range, then the peak normalised autocorrelation
//! (a voicing strength) and the log of the F0 implied by the peak lag.

use super::fbank::FrameLayout;
use crate::autodiff::Tensor;
use crate::error::Result;

pub const PITCH_DIM: usize = 13;
const LAG_POINTS: usize = 11;
const MIN_F0: f64 = 60.0;
const MAX_F0: f64 = 400.0;

pub fn pitch_features(waveform: &[f64], rate: u32) -> Result<Tensor> {
    let layout = FrameLayout::for_rate(rate)?;
    let frames = layout.frames(waveform)?;
    let min_lag = (rate as f64 / MAX_F0).floor() as usize;
    let max_lag = ((rate as f64 / MIN_F0).ceil() as usize).min(layout.window - 1);
    let sample_lags: Vec<usize> = (0..LAG_POINTS)
        .map(|i| min_lag + (max_lag - min_lag) * i / (LAG_POINTS - 1))
        .collect();

    let mut out = Vec::with_capacity(frames.len() * PITCH_DIM);
    for frame in frames {
        let mean = frame.iter().sum::<f64>() / frame.len() as f64;
        let x: Vec<f64> = frame.iter().map(|v| v - mean).collect();
        let acf = |lag: usize| -> f64 {
            let (head, tail) = (&x[..x.len() - lag], &x[lag..]);
            let norm = (head.iter().map(|v| v * v).sum::<f64>()
                * tail.iter().map(|v| v * v).sum::<f64>())
            .sqrt();
            if norm <= 0.0 {
                return 0.0;
            }
            head.iter().zip(tail).map(|(a, b)| a * b).sum::<f64>() / norm
        };
        for &lag in &sample_lags {
            out.push(acf(lag));
        }
        // Shortest local maximum within 10% of the global peak, to avoid
        // period doubling.
        let values: Vec<f64> = (min_lag..=max_lag).map(acf).collect();
        let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = values.len();
        let best_lag = min_lag
            + (0..n)
                .find(|&i| {
                    let v = values[i];
                    v >= best - 0.1 * best.abs()
                        && (i == 0 || values[i - 1] <= v)
                        && (i + 1 == n || values[i + 1] <= v)
                })
                .unwrap_or(0);
        out.push(best);
        out.push((rate as f64 / best_lag as f64).ln());
    }
    let rows = out.len() / PITCH_DIM;
    Tensor::matrix(rows, PITCH_DIM, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn periodic_signal_peaks_at_its_period() {
        let f0 = 125.0;
        let x: Vec<f64> = (0..4000)
            .map(|i| (2.0 * PI * f0 * i as f64 / 8000.0).sin())
            .collect();
        let p = pitch_features(&x, 8000).unwrap();
        assert_eq!(p.cols(), PITCH_DIM);
        let est = p.at(3, 12).exp();
        assert!((est - f0).abs() < 5.0, "{est}");
        assert!(p.at(3, 11) > 0.8);
    }

    #[test]
    fn silence_is_finite() {
        let p = pitch_features(&[0.0; 800], 8000).unwrap();
        assert!(p.all_finite());
    }
}
