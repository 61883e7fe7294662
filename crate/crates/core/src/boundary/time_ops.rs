//! Time-integral operators on sampled boundary fields.

use crate::error::{Error, Result};
use crate::forward::{SpaceTimeBoundaryField, TimeGrid};

/// `½ ∫_{t_n}^{2T - t_n} f` by the composite midpoint rule on panels of width 2 dt.
///
/// `series` holds samples `0..=2N`; the result holds samples `0..=N`.
pub fn b_series(series: &[f64], dt: f64, n_half: usize, out: &mut [f64]) {
    debug_assert!(series.len() > 2 * n_half - 1 || n_half == 0);
    // out[n] = dt * sum_{j=0}^{N-n-1} f[n + 1 + 2j], built from the end.
    out[n_half] = 0.0;
    if n_half == 0 {
        return;
    }
    // out[n] = out[n + 2] + dt * (f[n + 1] + f[2N - n - 1]), one running sum per parity
    let mut acc = [0.0f64; 2];
    for n in (0..n_half).rev() {
        let p = (n_half - n) % 2;
        if n == n_half - 1 {
            acc[p] = series[n_half];
        } else {
            acc[p] += series[n + 1] + series[2 * n_half - n - 1];
        }
        out[n] = dt * acc[p];
    }
}

/// `∫_{t_n}^{T} f` by the trapezoid rule.
pub fn i_series(series: &[f64], dt: f64, out: &mut [f64]) {
    let n = series.len() - 1;
    out[n] = 0.0;
    for k in (0..n).rev() {
        out[k] = out[k + 1] + 0.5 * dt * (series[k] + series[k + 1]);
    }
}

fn map_series(
    f: &SpaceTimeBoundaryField,
    out_time: TimeGrid,
    op: impl Fn(&[f64], &mut [f64]),
) -> SpaceTimeBoundaryField {
    let d = f.dim();
    let nodes = f.nodes();
    let steps_in = f.time().steps;
    let mut out = SpaceTimeBoundaryField::from_parts(
        d,
        out_time,
        vec![0.0; (out_time.steps + 1) * nodes * d],
        f.spatial_weights().to_vec(),
    );
    let mut s_in = vec![0.0; steps_in + 1];
    let mut s_out = vec![0.0; out_time.steps + 1];
    for b in 0..nodes {
        for c in 0..d {
            for (n, v) in s_in.iter_mut().enumerate() {
                *v = f.at(n, b)[c];
            }
            op(&s_in, &mut s_out);
            for (n, v) in s_out.iter().enumerate() {
                out.at_mut(n, b)[c] = *v;
            }
        }
    }
    out
}

/// Zero extension from (0,T) to (0,2T).
pub fn theta_extend(f: &SpaceTimeBoundaryField) -> SpaceTimeBoundaryField {
    let time = f.time();
    map_series(f, time.doubled(), |s, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[..s.len()].copy_from_slice(s);
    })
}

/// `(ℬf)(t) = ½ ∫_t^{2T-t} f(s) ds` for a field on (0,2T).
pub fn op_b(f: &SpaceTimeBoundaryField) -> Result<SpaceTimeBoundaryField> {
    let time = f.time();
    if time.steps % 2 != 0 {
        return Err(Error::Shape(format!(
            "op_B needs an even number of steps on (0,2T), got {}",
            time.steps
        )));
    }
    let half = TimeGrid { dt: time.dt, steps: time.steps / 2 };
    Ok(map_series(f, half, |s, out| b_series(s, time.dt, half.steps, out)))
}

/// `(𝓘f)(t) = ∫_t^T f(s) ds`.
pub fn op_i(f: &SpaceTimeBoundaryField) -> SpaceTimeBoundaryField {
    let time = f.time();
    map_series(f, time, |s, out| i_series(s, time.dt, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_b(s: &[f64], dt: f64, nh: usize) -> Vec<f64> {
        (0..=nh)
            .map(|n| dt * (0..nh - n).map(|j| s[n + 1 + 2 * j]).sum::<f64>())
            .collect()
    }

    #[test]
    fn b_matches_direct_sum() {
        for nh in [1usize, 2, 3, 7, 10] {
            let s: Vec<f64> = (0..=2 * nh).map(|k| ((k * k) as f64 * 0.3).sin()).collect();
            let mut out = vec![0.0; nh + 1];
            b_series(&s, 0.1, nh, &mut out);
            let want = naive_b(&s, 0.1, nh);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-13, "nh={nh}: {out:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn b_exact_on_constants_and_linears() {
        let nh = 20;
        let dt = 1.0 / nh as f64;
        let c: Vec<f64> = vec![2.5; 2 * nh + 1];
        let lin: Vec<f64> = (0..=2 * nh).map(|k| k as f64 * dt).collect();
        let mut out = vec![0.0; nh + 1];
        b_series(&c, dt, nh, &mut out);
        for (n, v) in out.iter().enumerate() {
            assert!((v - (1.0 - n as f64 * dt) * 2.5).abs() < 1e-13);
        }
        b_series(&lin, dt, nh, &mut out);
        for (n, v) in out.iter().enumerate() {
            assert!((v - (1.0 - n as f64 * dt)).abs() < 1e-13);
        }
        assert_eq!(out[nh], 0.0);
    }

    #[test]
    fn i_exact_on_constants() {
        let dt = 0.05;
        let s = vec![3.0; 21];
        let mut out = vec![0.0; 21];
        i_series(&s, dt, &mut out);
        for (n, v) in out.iter().enumerate() {
            assert!((v - 3.0 * (1.0 - n as f64 * dt)).abs() < 1e-13);
        }
        // twice: (T - t)² / 2, exact since the trapezoid rule integrates linears
        let once = out.clone();
        let ones: Vec<f64> = once.iter().map(|v| v / 3.0).collect();
        i_series(&ones, dt, &mut out);
        for (n, v) in out.iter().enumerate() {
            let r = 1.0 - n as f64 * dt;
            assert!((v - 0.5 * r * r).abs() < 1e-13);
        }
    }
}
