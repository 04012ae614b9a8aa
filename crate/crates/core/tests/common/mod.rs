#![allow(dead_code)]

use esncv::evaluation::{SeriesTask, TaskData};
use esncv::validation::CvOutcome;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stable AR(2) process with Gaussian-ish noise and a slow periodic drive.
pub fn ar_series(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = vec![0.0; len];
    for n in 0..len {
        let noise: f64 = (0..4).map(|_| rng.random_range(-0.5..0.5)).sum();
        let a = if n >= 1 { s[n - 1] } else { 0.0 };
        let b = if n >= 2 { s[n - 2] } else { 0.0 };
        s[n] = 0.6 * a - 0.3 * b + 0.3 * noise + 0.5 * (n as f64 / 9.0).sin();
    }
    s
}

/// AR(2) whose poles rotate slowly: the best model drifts over time.
pub fn drifting_ar2(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = vec![0.0; len];
    let r = 0.95;
    for n in 2..len {
        let theta = 0.2 + 1.0 * n as f64 / len as f64;
        let a1 = 2.0 * r * theta.cos();
        let a2 = -r * r;
        let noise: f64 = (0..4).map(|_| rng.random_range(-0.5..0.5)).sum();
        s[n] = a1 * s[n - 1] + a2 * s[n - 2] + 0.2 * noise;
    }
    s
}

pub fn row(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, values.len(), values)
}

/// One-step-ahead prediction task, usable in generative mode.
pub fn generative_task(len: usize, seed: u64) -> TaskData {
    TaskData::Series(SeriesTask::one_step_ahead(&row(&ar_series(len + 1, seed))).unwrap())
}

/// Infer a nonlinear function of recent inputs from the inputs.
pub fn output_task(len: usize, seed: u64) -> TaskData {
    let u = ar_series(len, seed);
    let y: Vec<f64> = (0..len)
        .map(|n| {
            let p = if n >= 1 { u[n - 1] } else { 0.0 };
            0.7 * p + 0.2 * u[n] * u[n] - 0.1
        })
        .collect();
    TaskData::Series(SeriesTask::new(row(&u), row(&y)).unwrap())
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = (a - b).norm();
    let s = b.norm();
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

/// Largest readout and error discrepancy between two outcomes over all
/// splits and ridge values. Panics if the layouts differ or a solve failed
/// in one but not the other.
pub fn max_discrepancy(a: &CvOutcome, b: &CvOutcome) -> (f64, f64) {
    assert_eq!(a.splits.len(), b.splits.len());
    let mut w = 0.0f64;
    let mut e = 0.0f64;
    for (sa, sb) in a.splits.iter().zip(&b.splits) {
        assert_eq!(sa.valid_range, sb.valid_range);
        assert_eq!(sa.train_count, sb.train_count);
        for (fa, fb) in sa.fits.iter().zip(&sb.fits) {
            match (fa, fb) {
                (Ok(fa), Ok(fb)) => {
                    w = w.max(rel_frobenius(&fa.readout.w_out, &fb.readout.w_out));
                    e = e.max((fa.report.nrmse - fb.report.nrmse).abs());
                }
                (Err(_), Err(_)) => {}
                _ => panic!("solve succeeded in one engine only"),
            }
        }
    }
    (w, e)
}
