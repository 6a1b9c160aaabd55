//! Adaptive Dormand–Prince 5(4) integration for small ODE systems.

#[derive(Clone, Copy, Debug)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OdeError {
    /// Step size fell below the floating-point resolution of `t`.
    StepUnderflow { t: f64 },
    TooManySteps { t: f64 },
    /// The right-hand side produced a non-finite value.
    Blowup { t: f64 },
}

/// Accepted steps of an integration.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

impl Dopri5 {
    pub fn new(tol: f64) -> Self {
        Dopri5 { rtol: tol, atol: tol, max_steps: 2_000_000 }
    }

    /// Integrates from `t0` through each of `t_out` in order (which may run
    /// backwards), landing exactly on every output time.
    pub fn solve<F>(&self, f: F, t0: f64, y0: &[f64], t_out: &[f64]) -> Result<(Vec<Vec<f64>>, Trajectory), OdeError>
    where
        F: Fn(f64, &[f64]) -> Vec<f64>,
    {
        let dim = y0.len();
        let mut t = t0;
        let mut y = y0.to_vec();
        let mut out = Vec::with_capacity(t_out.len());
        let mut traj = Trajectory { t: vec![t0], y: vec![y0.to_vec()] };
        let mut h: Option<f64> = None;
        let mut steps = 0usize;
        let mut k = vec![vec![0.0; dim]; 7];
        let mut tmp = vec![0.0; dim];
        for &target in t_out {
            let dir = if target >= t { 1.0 } else { -1.0 };
            let mut hh = h.unwrap_or_else(|| (target - t).abs().clamp(1e-12, 1e-2)).abs();
            while (target - t).abs() > 0.0 {
                if steps >= self.max_steps {
                    return Err(OdeError::TooManySteps { t });
                }
                let remaining = (target - t).abs();
                let last = hh >= remaining;
                let step = if last { remaining } else { hh };
                if step <= 1e-14 * t.abs().max(1.0) && !last {
                    return Err(OdeError::StepUnderflow { t });
                }
                let hs = dir * step;
                k[0] = f(t, &y);
                for s in 1..7 {
                    for i in 0..dim {
                        let mut acc = y[i];
                        for (j, kj) in k.iter().enumerate().take(s) {
                            acc += hs * A[s][j] * kj[i];
                        }
                        tmp[i] = acc;
                    }
                    k[s] = f(t + C[s] * hs, &tmp);
                }
                let mut err: f64 = 0.0;
                let mut ynew = vec![0.0; dim];
                for i in 0..dim {
                    let mut y5 = y[i];
                    let mut y4 = y[i];
                    for s in 0..7 {
                        y5 += hs * B5[s] * k[s][i];
                        y4 += hs * B4[s] * k[s][i];
                    }
                    ynew[i] = y5;
                    let sc = self.atol + self.rtol * y[i].abs().max(y5.abs());
                    err = err.max(((y5 - y4) / sc).abs());
                }
                if !err.is_finite() || ynew.iter().any(|v| !v.is_finite()) {
                    if step <= 1e-14 * t.abs().max(1.0) {
                        return Err(OdeError::Blowup { t });
                    }
                    hh = step * 0.1;
                    steps += 1;
                    continue;
                }
                steps += 1;
                if err <= 1.0 {
                    t = if last { target } else { t + hs };
                    y = ynew;
                    traj.t.push(t);
                    traj.y.push(y.clone());
                    let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    if !last {
                        hh = step * fac;
                    } else {
                        hh = hh.max(step * fac.min(1.0));
                    }
                } else {
                    hh = step * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                }
            }
            h = Some(hh);
            out.push(y.clone());
        }
        Ok((out, traj))
    }
}
