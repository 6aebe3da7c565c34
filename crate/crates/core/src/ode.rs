//! Explicit Runge-Kutta steppers for the method-of-lines system.
//!
//! The state is a flat slice; the right-hand side writes `dy/dτ` into a
//! caller-provided buffer and may fail (the metric can stop being SPD when
//! a curve leaves its chart).

use crate::error::{Error, Result};

/// Classic fixed-step fourth-order Runge-Kutta.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(len: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; len]),
            tmp: vec![0.0; len],
        }
    }

    /// Advances `y` in place by `dt`.
    pub fn step<F>(&mut self, f: &mut F, t: f64, y: &mut [f64], dt: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        f(t, y, k1)?;
        for i in 0..y.len() {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        f(t + 0.5 * dt, tmp, k2)?;
        for i in 0..y.len() {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        f(t + 0.5 * dt, tmp, k3)?;
        for i in 0..y.len() {
            tmp[i] = y[i] + dt * k3[i];
        }
        f(t + dt, tmp, k4)?;
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
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
// fifth-order weights minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveOptions {
    pub atol: f64,
    pub rtol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub min_step: f64,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            atol: 1e-8,
            rtol: 0.0,
            initial_step: 1e-4,
            max_step: f64::INFINITY,
            min_step: 1e-14,
        }
    }
}

/// Outcome of one accepted adaptive step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accepted {
    pub dt: f64,
    pub rejected: usize,
}

/// Dormand-Prince 5(4) with first-same-as-last reuse and a PI step
/// controller (Hairer, Nørsett & Wanner, *Solving ODEs I*, II.4).
#[derive(Debug, Clone)]
pub struct DormandPrince {
    opts: AdaptiveOptions,
    h: f64,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    fsal: bool,
    err_old: f64,
}

impl DormandPrince {
    const SAFETY: f64 = 0.9;
    const BETA: f64 = 0.04;
    const FAC_MIN: f64 = 0.2;
    const FAC_MAX: f64 = 10.0;

    pub fn new(len: usize, opts: AdaptiveOptions) -> Self {
        Self {
            opts,
            h: opts.initial_step,
            k: std::array::from_fn(|_| vec![0.0; len]),
            tmp: vec![0.0; len],
            y_new: vec![0.0; len],
            fsal: false,
            err_old: 1e-4,
        }
    }

    /// Step size that will be attempted next.
    pub fn next_step(&self) -> f64 {
        self.h
    }

    /// Forget the cached derivative, e.g. after the state was edited.
    pub fn reset(&mut self) {
        self.fsal = false;
    }

    /// Takes one accepted step, retrying with smaller steps on rejection.
    pub fn step<F>(&mut self, f: &mut F, t: f64, y: &mut [f64]) -> Result<Accepted>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let tmp = &mut self.tmp;
        let y_new = &mut self.y_new;
        if !self.fsal {
            f(t, y, k1)?;
            self.fsal = true;
        }
        let mut rejected = 0;
        loop {
            let h = self.h.min(self.opts.max_step);
            if h < self.opts.min_step {
                return Err(Error::StepSizeUnderflow { tau: t, dtau: h });
            }
            for i in 0..n {
                tmp[i] = y[i] + h * A21 * k1[i];
            }
            f(t + C2 * h, tmp, k2)?;
            for i in 0..n {
                tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            f(t + C3 * h, tmp, k3)?;
            for i in 0..n {
                tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(t + C4 * h, tmp, k4)?;
            for i in 0..n {
                tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(t + C5 * h, tmp, k5)?;
            for i in 0..n {
                tmp[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            f(t + h, tmp, k6)?;
            for i in 0..n {
                y_new[i] = y[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            f(t + h, y_new, k7)?;

            let mut acc = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
                let sc = self.opts.atol + self.opts.rtol * y[i].abs().max(y_new[i].abs());
                acc += (e / sc) * (e / sc);
            }
            let err = (acc / n as f64).sqrt();
            if !err.is_finite() {
                // blown-up trial step; shrink hard and retry
                self.h = h * Self::FAC_MIN;
                rejected += 1;
                continue;
            }

            let fac11 = err.powf(0.2 - Self::BETA * 0.75);
            if err <= 1.0 {
                let fac = fac11 / self.err_old.powf(Self::BETA) / Self::SAFETY;
                let fac = fac.clamp(1.0 / Self::FAC_MAX, 1.0 / Self::FAC_MIN);
                let mut h_new = h / fac;
                if rejected > 0 {
                    h_new = h_new.min(h);
                }
                self.err_old = err.max(1e-4);
                y.copy_from_slice(y_new);
                std::mem::swap(k1, k7);
                self.h = h_new;
                return Ok(Accepted { dt: h, rejected });
            }
            self.h = h / (fac11 / Self::SAFETY).min(1.0 / Self::FAC_MIN);
            rejected += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = -y[0];
        Ok(())
    }

    #[test]
    fn rk4_fourth_order() {
        let err_at = |dt: f64| {
            let mut y = [1.0];
            let mut rk = Rk4::new(1);
            let steps = (1.0 / dt).round() as usize;
            for s in 0..steps {
                rk.step(&mut decay, s as f64 * dt, &mut y, dt).unwrap();
            }
            (y[0] - (-1f64).exp()).abs()
        };
        let ratio = err_at(0.1) / err_at(0.05);
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
    }

    #[test]
    fn dopri_meets_tolerance() {
        let mut y = [1.0, 0.0];
        let mut osc = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        };
        let opts = AdaptiveOptions {
            atol: 1e-10,
            rtol: 1e-10,
            initial_step: 1e-3,
            ..Default::default()
        };
        let mut dp = DormandPrince::new(2, opts);
        let mut t = 0.0;
        let end = 10.0;
        while t < end {
            dp.opts.max_step = end - t;
            t += dp.step(&mut osc, t, &mut y).unwrap().dt;
        }
        assert!((y[0] - end.cos()).abs() < 1e-7);
        assert!((y[1] + end.sin()).abs() < 1e-7);
    }

    #[test]
    fn dopri_respects_stiff_stability_limit() {
        // dy/dt = -1000 y: explicit steps must stay near the stability bound
        let mut y = [1.0];
        let mut stiff = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            dy[0] = -1000.0 * y[0];
            Ok(())
        };
        let mut dp = DormandPrince::new(1, AdaptiveOptions::default());
        let mut t = 0.0;
        while t < 0.5 {
            let acc = dp.step(&mut stiff, t, &mut y).unwrap();
            if y[0].abs() > 1e-6 {
                // stability interval of DOPRI5 is about 3.3 / 1000
                assert!(acc.dt < 4e-3, "dt = {}", acc.dt);
            }
            t += acc.dt;
            assert!(y[0].abs() < 1.0);
        }
        assert!(y[0].abs() < 1e-6);
    }

    #[test]
    fn rhs_errors_propagate() {
        let mut y = [1.0];
        let mut failing = |t: f64, _y: &[f64], _dy: &mut [f64]| -> Result<()> {
            Err(Error::NonFinite { tau: t })
        };
        let mut dp = DormandPrince::new(1, AdaptiveOptions::default());
        assert!(dp.step(&mut failing, 0.0, &mut y).is_err());
        assert!(Rk4::new(1).step(&mut failing, 0.0, &mut y, 0.1).is_err());
    }
}
