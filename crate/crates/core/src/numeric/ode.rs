//! Explicit Runge-Kutta integrators for systems `y' = f(t, y)`.
//!
//! [`Dopri5`] is the Dormand-Prince 5(4) embedded pair with the standard
//! fourth-order continuous extension. [`integrate_rk4`] is a fixed-step
//! classical Runge-Kutta fallback.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t:e} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("maximum number of steps ({0}) exceeded")]
    TooManySteps(usize),
    #[error("non-finite state at t = {0:e}")]
    NonFinite(f64),
}

/// Right-hand side of a first-order system.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

/// Accepted step with an interpolant on `[t_start, t_end]`.
pub trait StepInterpolant {
    fn t_start(&self) -> f64;
    fn t_end(&self) -> f64;
    fn eval(&self, t: f64, out: &mut [f64]);
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dopri5 {
    pub atol: f64,
    pub rtol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5 {
            atol: 1e-12,
            rtol: 1e-10,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Continuous extension of one accepted Dormand-Prince step.
pub struct DopriDense<'a> {
    t0: f64,
    h: f64,
    y0: &'a [f64],
    y1: &'a [f64],
    k: &'a [Vec<f64>],
}

impl StepInterpolant for DopriDense<'_> {
    fn t_start(&self) -> f64 {
        self.t0
    }
    fn t_end(&self) -> f64 {
        self.t0 + self.h
    }
    fn eval(&self, t: f64, out: &mut [f64]) {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let (h, k) = (self.h, self.k);
        for i in 0..out.len() {
            let d = self.y1[i] - self.y0[i];
            let r2 = h * k[0][i] - d;
            let r3 = d - h * k[6][i] - r2;
            let r4 = h * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
            out[i] = self.y0[i] + th * (d + th1 * (r2 + th * (r3 + th1 * r4)));
        }
    }
}

impl Dopri5 {
    pub fn with_tolerances(atol: f64, rtol: f64) -> Self {
        Dopri5 {
            atol,
            rtol,
            ..Dopri5::default()
        }
    }

    pub fn h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    fn initial_step<S: OdeSystem>(&self, sys: &S, t0: f64, y0: &[f64], f0: &[f64], span: f64) -> f64 {
        let n = y0.len();
        let sc: Vec<f64> = y0.iter().map(|y| self.atol + self.rtol * y.abs()).collect();
        let rms = |v: &[f64]| -> f64 {
            (v.iter().zip(&sc).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        let d0 = rms(y0);
        let d1 = rms(f0);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(self.h_max).min(span);
        let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
        let mut f1 = vec![0.0; n];
        sys.rhs(t0 + h0, &y1, &mut f1);
        let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
        let d2 = rms(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.h_max).min(span)
    }

    /// Integrates from `t0` to `t1` (`t1 > t0`) in place. The observer sees
    /// every accepted step.
    pub fn integrate<S, F>(&self, sys: &S, t0: f64, t1: f64, y: &mut [f64], mut observer: F) -> Result<OdeStats, OdeError>
    where
        S: OdeSystem,
        F: FnMut(&dyn StepInterpolant),
    {
        let n = sys.dim();
        assert_eq!(y.len(), n);
        let mut stats = OdeStats::default();
        if t1 <= t0 {
            return Ok(stats);
        }
        let mut k = vec![vec![0.0; n]; 7];
        let mut ytmp = vec![0.0; n];
        let mut ynew = vec![0.0; n];
        let mut err = vec![0.0; n];
        sys.rhs(t0, y, &mut k[0]);
        stats.rhs_evals += 1;
        let mut t = t0;
        let mut h = self.initial_step(sys, t0, y, &k[0], t1 - t0);
        stats.rhs_evals += 1;
        let mut last_rejected = false;
        let h_min_rel = 16.0 * f64::EPSILON;
        loop {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(OdeError::TooManySteps(self.max_steps));
            }
            let mut last = false;
            if t + h >= t1 || t + 1.01 * h >= t1 {
                h = t1 - t;
                last = true;
            }
            if h <= h_min_rel * t.abs().max(t1 - t0) {
                return Err(OdeError::StepUnderflow { t, h });
            }
            for i in 0..n {
                ytmp[i] = y[i] + h * A21 * k[0][i];
            }
            sys.rhs(t + C2 * h, &ytmp, &mut k[1]);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
            }
            sys.rhs(t + C3 * h, &ytmp, &mut k[2]);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
            }
            sys.rhs(t + C4 * h, &ytmp, &mut k[3]);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
            }
            sys.rhs(t + C5 * h, &ytmp, &mut k[4]);
            for i in 0..n {
                ytmp[i] = y[i]
                    + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
            }
            sys.rhs(t + h, &ytmp, &mut k[5]);
            for i in 0..n {
                ynew[i] = y[i]
                    + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
            }
            sys.rhs(t + h, &ynew, &mut k[6]);
            stats.rhs_evals += 6;
            let mut acc = 0.0;
            for i in 0..n {
                err[i] = h
                    * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
                let sc = self.atol + self.rtol * y[i].abs().max(ynew[i].abs());
                acc += (err[i] / sc).powi(2);
            }
            let e = (acc / n as f64).sqrt();
            if !e.is_finite() {
                return Err(OdeError::NonFinite(t));
            }
            if e <= 1.0 {
                stats.accepted += 1;
                observer(&DopriDense {
                    t0: t,
                    h,
                    y0: y,
                    y1: &ynew,
                    k: &k,
                });
                y.copy_from_slice(&ynew);
                k.swap(0, 6);
                t = if last { t1 } else { t + h };
                if last {
                    return Ok(stats);
                }
                let mut fac = (0.9 * e.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
                if last_rejected {
                    fac = fac.min(1.0);
                }
                h = (h * fac).min(self.h_max);
                last_rejected = false;
            } else {
                stats.rejected += 1;
                h *= (0.9 * e.powf(-0.2)).clamp(0.2, 1.0);
                last_rejected = true;
            }
        }
    }
}

struct HermiteStep<'a> {
    t0: f64,
    h: f64,
    y0: &'a [f64],
    y1: &'a [f64],
    f0: &'a [f64],
    f1: &'a [f64],
}

impl StepInterpolant for HermiteStep<'_> {
    fn t_start(&self) -> f64 {
        self.t0
    }
    fn t_end(&self) -> f64 {
        self.t0 + self.h
    }
    fn eval(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t0) / self.h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        for i in 0..out.len() {
            out[i] = h00 * self.y0[i] + h10 * self.h * self.f0[i] + h01 * self.y1[i] + h11 * self.h * self.f1[i];
        }
    }
}

/// Classical fourth-order Runge-Kutta with `steps` equal steps.
pub fn integrate_rk4<S, F>(sys: &S, t0: f64, t1: f64, steps: usize, y: &mut [f64], mut observer: F) -> Result<OdeStats, OdeError>
where
    S: OdeSystem,
    F: FnMut(&dyn StepInterpolant),
{
    let n = sys.dim();
    let h = (t1 - t0) / steps as f64;
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut stats = OdeStats::default();
    sys.rhs(t0, y, &mut k1);
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        sys.rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        sys.rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        sys.rhs(t + h, &tmp, &mut k4);
        for i in 0..n {
            ynew[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if ynew.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite(t));
        }
        let t_end = if s + 1 == steps { t1 } else { t + h };
        sys.rhs(t_end, &ynew, &mut k4);
        observer(&HermiteStep {
            t0: t,
            h: t_end - t,
            y0: y,
            y1: &ynew,
            f0: &k1,
            f1: &k4,
        });
        y.copy_from_slice(&ynew);
        std::mem::swap(&mut k1, &mut k4);
        stats.accepted += 1;
        stats.rhs_evals += 4;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator(f64);

    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -self.0 * self.0 * y[0];
        }
    }

    #[test]
    fn dopri_harmonic_oscillator() {
        let w = 3.0;
        let mut y = [1.0, 0.0];
        Dopri5::default().integrate(&Oscillator(w), 0.0, 10.0, &mut y, |_| {}).unwrap();
        assert!((y[0] - (w * 10.0).cos()).abs() < 1e-8);
        assert!((y[1] + w * (w * 10.0).sin()).abs() < 1e-7);
    }

    #[test]
    fn dense_output_matches_exact_solution() {
        let w = 2.0;
        let mut y = [1.0, 0.0];
        let mut worst: f64 = 0.0;
        Dopri5::with_tolerances(1e-13, 1e-11)
            .integrate(&Oscillator(w), 0.0, 5.0, &mut y, |step| {
                let mut out = [0.0; 2];
                let tm = 0.5 * (step.t_start() + step.t_end());
                step.eval(tm, &mut out);
                worst = worst.max((out[0] - (w * tm).cos()).abs());
            })
            .unwrap();
        assert!(worst < 1e-8, "dense output error {worst}");
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let w = 1.0;
        let err = |n: usize| {
            let mut y = [1.0, 0.0];
            integrate_rk4(&Oscillator(w), 0.0, 1.0, n, &mut y, |_| {}).unwrap();
            (y[0] - 1f64.cos()).abs()
        };
        let ratio = err(20) / err(40);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }
}
