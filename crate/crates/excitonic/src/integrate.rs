//! Adaptive embedded Runge-Kutta integration of vectorized master equations.
//!
//! Dormand-Prince 5(4) with a PI-free step controller, working on flat
//! complex state vectors so the same kernel drives density matrices,
//! no-jump states and full HEOM hierarchies.

use ndarray::Array1;
use num_complex::Complex64 as C64;

use crate::linalg::CVec;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct RkOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub initial_step: Option<f64>,
}

impl Default for RkOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 200_000_000,
            initial_step: None,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// Integrate dy/dt = rhs(t, y) from t_grid[0], invoking `observer` with the
/// state at every grid time (including the first). The grid must ascend.
pub fn integrate_grid<F, O>(
    mut rhs: F,
    y0: CVec,
    t_grid: &[f64],
    opts: &RkOptions,
    mut observer: O,
) -> Result<()>
where
    F: FnMut(f64, &CVec, &mut CVec),
    O: FnMut(usize, f64, &CVec),
{
    if t_grid.is_empty() {
        return Ok(());
    }
    for w in t_grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Config("time grid must be strictly ascending".into()));
        }
    }
    let n = y0.len();
    let mut t = t_grid[0];
    let mut y = y0;
    observer(0, t, &y);
    if t_grid.len() == 1 {
        return Ok(());
    }
    let t_end = *t_grid.last().unwrap();
    let span = t_end - t;

    let mut k: Vec<CVec> = (0..7).map(|_| Array1::zeros(n)).collect();
    let mut ytmp: CVec = Array1::zeros(n);
    let mut f0 = Array1::zeros(n);
    rhs(t, &y, &mut f0);
    k[0] = f0;

    let mut h = opts.initial_step.unwrap_or(span * 1e-4).min(span);
    let h_min = span * 1e-14;
    let mut next_output = 1;
    let mut steps = 0usize;

    while next_output < t_grid.len() {
        if steps >= opts.max_steps {
            return Err(Error::Integration {
                t,
                reason: format!("exceeded {} steps", opts.max_steps),
            });
        }
        steps += 1;
        let target = t_grid[next_output];
        let mut h_try = h.min(target - t);
        if h_try < h_min {
            h_try = h_min;
        }

        // stages 2..7
        for s in 0..6 {
            ytmp.assign(&y);
            for (j, kj) in k.iter().enumerate().take(s + 1) {
                let a = A[s][j];
                if a != 0.0 {
                    ytmp.scaled_add(C64::new(a * h_try, 0.0), kj);
                }
            }
            let ts = t + h_try * [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0][s];
            let mut ks = std::mem::replace(&mut k[s + 1], Array1::zeros(0));
            if ks.len() != n {
                ks = Array1::zeros(n);
            }
            rhs(ts, &ytmp, &mut ks);
            k[s + 1] = ks;
        }
        // 5th order solution is the last stage input (FSAL): ytmp already holds it.
        let ynew = ytmp.clone();

        // embedded error estimate
        let mut err_sq = 0.0f64;
        for i in 0..n {
            let mut e = C64::new(0.0, 0.0);
            for (j, kj) in k.iter().enumerate() {
                if E[j] != 0.0 {
                    e += kj[i] * E[j];
                }
            }
            let e = e * h_try;
            let scale = opts.atol + opts.rtol * y[i].norm().max(ynew[i].norm());
            let ratio = e.norm() / scale;
            err_sq += ratio * ratio;
        }
        let err = (err_sq / n as f64).sqrt();

        if err <= 1.0 {
            t += h_try;
            y = ynew;
            k.swap(0, 6); // FSAL
            while next_output < t_grid.len() && t >= t_grid[next_output] - 1e-9 * span.max(1.0) {
                observer(next_output, t_grid[next_output], &y);
                next_output += 1;
            }
        } else if h_try <= h_min * (1.0 + 1e-12) {
            return Err(Error::Integration {
                t,
                reason: format!("step size underflow at error {err:.3e} (tolerance failure)"),
            });
        }
        let factor = if err > 0.0 {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h = (h_try * factor).max(h_min);
    }
    Ok(())
}

/// Convenience wrapper collecting the state at every grid point.
pub fn integrate_collect<F>(rhs: F, y0: CVec, t_grid: &[f64], opts: &RkOptions) -> Result<Vec<CVec>>
where
    F: FnMut(f64, &CVec, &mut CVec),
{
    let mut out = Vec::with_capacity(t_grid.len());
    integrate_grid(rhs, y0, t_grid, opts, |_, _, y| out.push(y.clone()))?;
    Ok(out)
}

/// Uniform time grid from 0 to `t_end` with `n` intervals (n+1 points).
pub fn uniform_grid(t_end: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| t_end * k as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn exponential_decay() {
        let y0 = array![C64::new(1.0, 0.0)];
        let grid = uniform_grid(5.0, 10);
        let sol =
            integrate_collect(|_, y, dy| dy[0] = -y[0], y0, &grid, &RkOptions::default()).unwrap();
        for (k, t) in grid.iter().enumerate() {
            assert_relative_eq!(sol[k][0].re, (-t).exp(), epsilon = 1e-9);
        }
    }

    #[test]
    fn oscillator_phase_accuracy() {
        // dy/dt = i w y
        let w = 0.5;
        let y0 = array![C64::new(1.0, 0.0)];
        let grid = uniform_grid(200.0, 4);
        let opts = RkOptions {
            rtol: 1e-11,
            atol: 1e-13,
            ..Default::default()
        };
        let sol = integrate_collect(
            |_, y, dy| dy[0] = C64::new(0.0, w) * y[0],
            y0,
            &grid,
            &opts,
        )
        .unwrap();
        let expect = C64::new(0.0, w * 200.0).exp();
        assert!((sol[4][0] - expect).norm() < 1e-7);
    }

    #[test]
    fn zero_rhs_constant_state() {
        let y0 = array![C64::new(0.3, -0.1), C64::new(0.7, 0.0)];
        let grid = uniform_grid(1000.0, 3);
        let sol = integrate_collect(
            |_, _, dy| dy.fill(C64::new(0.0, 0.0)),
            y0.clone(),
            &grid,
            &RkOptions::default(),
        )
        .unwrap();
        assert_eq!(sol[3][0], y0[0]);
        assert_eq!(sol[3][1], y0[1]);
    }

    #[test]
    fn rejects_unordered_grid() {
        let y0 = array![C64::new(1.0, 0.0)];
        let res = integrate_collect(
            |_, y, dy| dy[0] = -y[0],
            y0,
            &[0.0, 2.0, 1.0],
            &RkOptions::default(),
        );
        assert!(res.is_err());
    }
}
