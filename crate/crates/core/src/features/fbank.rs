use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::pitch::pitch_features;
use super::{FeatureSequence, FBANK_DIM};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const LOW_FREQ_HZ: f64 = 20.0;

/// Framing for a sample rate: 25 ms windows every 10 ms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameLayout {
    pub rate: u32,
    pub window: usize,
    pub shift: usize,
    pub fft_size: usize,
}

impl FrameLayout {
    pub fn for_rate(rate: u32) -> Result<Self> {
        if rate != 8000 && rate != 16000 {
            return Err(Error::Invalid(format!(
                "sample rate {rate} Hz not supported (8000 or 16000)"
            )));
        }
        let window = rate as usize * FeatureSequence::FRAME_LENGTH_MS as usize / 1000;
        let shift = rate as usize * FeatureSequence::FRAME_SHIFT_MS as usize / 1000;
        Ok(FrameLayout {
            rate,
            window,
            shift,
            fft_size: 2 * window.next_power_of_two(),
        })
    }

    /// `1 + floor((N − window) / shift)`.
    pub fn frame_count(&self, samples: usize) -> Result<usize> {
        if samples < self.window {
            return Err(Error::Invalid(format!(
                "waveform of {samples} samples is shorter than one {}-sample window",
                self.window
            )));
        }
        Ok(1 + (samples - self.window) / self.shift)
    }

    pub(crate) fn frames<'a>(&self, waveform: &'a [f64]) -> Result<Vec<&'a [f64]>> {
        let n = self.frame_count(waveform.len())?;
        Ok((0..n)
            .map(|i| &waveform[i * self.shift..i * self.shift + self.window])
            .collect())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters over the `fft_size / 2 + 1` power-spectrum bins,
/// equally spaced on the Mel scale between 20 Hz and Nyquist. A filter too
/// narrow to cover any bin gets unit weight on the bin nearest its centre.
fn mel_filters(layout: &FrameLayout, bands: usize) -> Vec<Vec<(usize, f64)>> {
    let bins = layout.fft_size / 2 + 1;
    let nyquist = layout.rate as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(LOW_FREQ_HZ), hz_to_mel(nyquist));
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64))
        .collect();
    let bin_hz = layout.rate as f64 / layout.fft_size as f64;
    (0..bands)
        .map(|m| {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut weights: Vec<(usize, f64)> = (0..bins)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = if f > left && f <= centre {
                        (f - left) / (centre - left)
                    } else if f > centre && f < right {
                        (right - f) / (right - centre)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect();
            if weights.is_empty() {
                let k = ((centre / bin_hz).round() as usize).min(bins - 1);
                weights.push((k, 1.0));
            }
            weights
        })
        .collect()
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// `[frames, bands]` log Mel energies of a Hamming-windowed power spectrum.
pub fn log_mel(waveform: &[f64], rate: u32, bands: usize) -> Result<Tensor> {
    let layout = FrameLayout::for_rate(rate)?;
    let frames = layout.frames(waveform)?;
    let filters = mel_filters(&layout, bands);
    let window = hamming(layout.window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(layout.fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); layout.fft_size];
    let mut power = vec![0.0; layout.fft_size / 2 + 1];
    let mut out = Vec::with_capacity(frames.len() * bands);
    for frame in frames {
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = if i < frame.len() {
                frame[i] * window[i]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for filter in &filters {
            let e: f64 = filter.iter().map(|&(k, w)| w * power[k]).sum();
            out.push(e.max(f64::MIN_POSITIVE).ln());
        }
    }
    let rows = out.len() / bands;
    Tensor::matrix(rows, bands, out)
}

/// 80-band log Mel filterbank features.
pub fn compute_fbank(id: &str, waveform: &[f64], rate: u32) -> Result<FeatureSequence> {
    FeatureSequence::new(id, log_mel(waveform, rate, FBANK_DIM)?)
}

/// 37-dim SBN front-end input: 24 log Mel bands followed by the 13-dim
/// autocorrelation pitch stand-in.
pub fn raw_features(id: &str, waveform: &[f64], rate: u32) -> Result<FeatureSequence> {
    let mel = log_mel(waveform, rate, 24)?;
    let pitch = pitch_features(waveform, rate)?;
    let rows = mel.rows();
    let mut data = Vec::with_capacity(rows * 37);
    for r in 0..rows {
        data.extend_from_slice(mel.row(r));
        data.extend_from_slice(pitch.row(r));
    }
    FeatureSequence::new(id, Tensor::matrix(rows, 37, data)?)
}
