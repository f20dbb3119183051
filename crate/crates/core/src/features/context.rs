use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::{FeatureSequence, BN1_DIM, RAW_DIM, STACKED_DIM, STAGE1_INPUT_DIM};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const STAGE1_CONTEXT: usize = 11;
pub const DCT_COEFFS: usize = 6;
pub const STAGE2_CONTEXT: usize = 21;
pub const DOWNSAMPLE: usize = 5;

fn clamp_frame(t: isize, len: usize) -> usize {
    t.clamp(0, len as isize - 1) as usize
}

/// Hamming-weighted orthonormal DCT-II rows: `basis[k][n] = s_k · w_n ·
/// cos(π k (2n + 1) / 2N)` for `k < coeffs`, `n < len`.
pub fn dct_basis(len: usize, coeffs: usize) -> Vec<Vec<f64>> {
    let n = len as f64;
    (0..coeffs)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            (0..len)
                .map(|i| {
                    let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1.0)).cos();
                    scale * w * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()
                })
                .collect()
        })
        .collect()
}

/// First-stage input: for each of the 37 parameters, its 11-frame trajectory
/// (edges replicated) is Hamming weighted and DCT-II transformed, keeping
/// coefficients 0–5. Output column `6·p + k` holds coefficient `k` of
/// parameter `p`.
pub fn stage1_input(raw: &FeatureSequence) -> Result<FeatureSequence> {
    raw.expect_dim(RAW_DIM, "stage-1 input")?;
    let basis = dct_basis(STAGE1_CONTEXT, DCT_COEFFS);
    let frames = raw.len();
    let half = (STAGE1_CONTEXT / 2) as isize;
    let mut out = Vec::with_capacity(frames * STAGE1_INPUT_DIM);
    let mut traj = [0.0; STAGE1_CONTEXT];
    for t in 0..frames {
        for p in 0..RAW_DIM {
            for (i, slot) in traj.iter_mut().enumerate() {
                let src = clamp_frame(t as isize + i as isize - half, frames);
                *slot = raw.frames.at(src, p);
            }
            for row in &basis {
                out.push(row.iter().zip(&traj).map(|(b, x)| b * x).sum());
            }
        }
    }
    FeatureSequence::new(
        raw.id.clone(),
        Tensor::matrix(frames, STAGE1_INPUT_DIM, out)?,
    )
}

/// Source rows for stacking `context` frames (edges replicated) around every
/// `step`-th frame of a `frames`-long sequence, flattened output-major.
pub fn stack_indices(frames: usize, context: usize, step: usize) -> Vec<usize> {
    let half = (context / 2) as isize;
    (0..frames)
        .step_by(step)
        .flat_map(|centre| {
            (0..context).map(move |o| clamp_frame(centre as isize + o as isize - half, frames))
        })
        .collect()
}

/// Stacks 21 first-bottleneck frames around every 5th frame:
/// `[T, 80]` to `[ceil(T/5), 1680]`.
pub fn stack_downsample(bn1: &FeatureSequence) -> Result<FeatureSequence> {
    bn1.expect_dim(BN1_DIM, "stack/downsample")?;
    let idx = stack_indices(bn1.len(), STAGE2_CONTEXT, DOWNSAMPLE);
    let mut data = Vec::with_capacity(idx.len() * BN1_DIM);
    for &i in &idx {
        data.extend_from_slice(bn1.frames.row(i));
    }
    let rows = idx.len() / STAGE2_CONTEXT;
    FeatureSequence::new(bn1.id.clone(), Tensor::matrix(rows, STACKED_DIM, data)?)
}

/// Subtracts the per-dimension mean pooled over every frame of one
/// conversation side.
pub fn conversation_mean_subtract(side: &[FeatureSequence]) -> Result<Vec<FeatureSequence>> {
    let first = side
        .first()
        .ok_or_else(|| Error::Invalid("empty conversation side".into()))?;
    let dim = first.dim();
    let mut sum = vec![0.0; dim];
    let mut count = 0usize;
    for seq in side {
        seq.expect_dim(dim, "mean subtraction")?;
        for r in 0..seq.len() {
            for (s, v) in sum.iter_mut().zip(seq.frames.row(r)) {
                *s += v;
            }
        }
        count += seq.len();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    side.iter()
        .map(|seq| {
            let data = seq
                .frames
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v - mean[i % dim])
                .collect();
            FeatureSequence::new(
                seq.id.clone(),
                Tensor::new(seq.frames.shape().to_vec(), data)?,
            )
        })
        .collect()
}

/// Groups sequences by side and applies [`conversation_mean_subtract`] to
/// each group, preserving input order.
pub fn mean_subtract_by_side(
    seqs: &[FeatureSequence],
    sides: &[String],
) -> Result<Vec<FeatureSequence>> {
    if seqs.len() != sides.len() {
        return Err(Error::Invalid("one side id per sequence required".into()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in sides.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut out: Vec<Option<FeatureSequence>> = vec![None; seqs.len()];
    for idx in groups.values() {
        let members: Vec<FeatureSequence> = idx.iter().map(|&i| seqs[i].clone()).collect();
        for (&i, s) in idx.iter().zip(conversation_mean_subtract(&members)?) {
            out[i] = Some(s);
        }
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(id: &str, rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> FeatureSequence {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        FeatureSequence::new(id, Tensor::matrix(rows, cols, data).unwrap()).unwrap()
    }

    #[test]
    fn stage1_dimension_and_dc_response() {
        let raw = seq("u", 4, 37, |_, p| p as f64 - 3.5);
        let out = stage1_input(&raw).unwrap();
        assert_eq!(out.dim(), 222);
        let basis = dct_basis(11, 6);
        let hamming_sum: f64 = (0..11)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / 10.0).cos())
            .sum();
        for t in 0..4 {
            for p in 0..37 {
                let v = p as f64 - 3.5;
                let c = &out.frames.row(t)[p * 6..p * 6 + 6];
                assert!((c[0] - v * hamming_sum / 11f64.sqrt()).abs() < 1e-12);
                // Odd orders vanish by symmetry of the window; even orders
                // keep the window's own cosine content.
                for k in [1, 3, 5] {
                    assert!(c[k].abs() < 1e-12);
                }
                for k in [2, 4] {
                    let expect: f64 = basis[k].iter().sum::<f64>() * v;
                    assert!((c[k] - expect).abs() < 1e-12);
                }
            }
        }
        assert!(stage1_input(&seq("u", 3, 36, |_, _| 0.0)).is_err());
    }

    #[test]
    fn stack_downsample_counts() {
        let bn = seq("u", 10, 80, |t, d| (t * 80 + d) as f64);
        let out = stack_downsample(&bn).unwrap();
        assert_eq!((out.len(), out.dim()), (2, 1680));
        // frame 5: context 21 centred at 5 starts at replicated frame 0
        assert_eq!(out.frames.at(1, 0), 0.0);
        assert_eq!(out.frames.at(1, 10 * 80), (5 * 80) as f64);
        let constant = seq("c", 7, 80, |_, _| 2.5);
        let out = stack_downsample(&constant).unwrap();
        assert!(out.frames.data().iter().all(|&v| v == 2.5));
        assert_eq!(out.len(), 2);
        assert!(stack_downsample(&seq("u", 3, 30, |_, _| 0.0)).is_err());
    }

    #[test]
    fn pooled_mean_is_joint() {
        let a = seq("a", 1, 2, |_, d| [1.0, 10.0][d]);
        let b = seq("b", 3, 2, |_, d| [5.0, 2.0][d]);
        // pooled mean: (1 + 15) / 4 = 4, (10 + 6) / 4 = 4
        let out = conversation_mean_subtract(&[a, b]).unwrap();
        assert_eq!(out[0].frames.row(0), &[-3.0, 6.0]);
        assert_eq!(out[1].frames.row(2), &[1.0, -2.0]);
        let again = conversation_mean_subtract(&out).unwrap();
        for (x, y) in again.iter().zip(&out) {
            assert!(x.frames.max_abs_diff(&y.frames) < 1e-12);
        }
        assert!(conversation_mean_subtract(&[]).is_err());
    }

    #[test]
    fn single_utterance_side_has_zero_means() {
        let s = seq("s", 5, 3, |t, d| (t * t + d) as f64 * 0.37);
        let out = conversation_mean_subtract(&[s]).unwrap();
        for d in 0..3 {
            let m: f64 = (0..5).map(|t| out[0].frames.at(t, d)).sum::<f64>() / 5.0;
            assert!(m.abs() < 1e-10);
        }
    }

    #[test]
    fn grouping_by_side_preserves_order() {
        let seqs = vec![
            seq("a", 1, 1, |_, _| 1.0),
            seq("b", 1, 1, |_, _| 7.0),
            seq("c", 1, 1, |_, _| 3.0),
        ];
        let sides = vec!["x".to_string(), "y".to_string(), "x".to_string()];
        let out = mean_subtract_by_side(&seqs, &sides).unwrap();
        assert_eq!(out[0].frames.item(), -1.0);
        assert_eq!(out[1].frames.item(), 0.0);
        assert_eq!(out[2].frames.item(), 1.0);
    }
}
