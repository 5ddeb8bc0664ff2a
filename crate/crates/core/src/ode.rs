//! Integration of the flow `φ_t` and of the variational equation `M' = DX(φ_s x)·M`.
//!
//! The default scheme is the embedded Dormand–Prince 5(4) pair with
//! first-same-as-last reuse and a max-norm error estimate scaled by
//! `tol·(1 + |y|)`. A fixed-step classical RK4 is available for runs that must
//! not depend on step-size control.

use crate::error::{Error, Result};
use crate::field::{Matrix, Vector, VectorFieldSpec};

/// State norm beyond which a trajectory is declared to have escaped.
pub const BLOW_UP_GUARD: f64 = 1e6;

const MAX_STEPS: usize = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// Adaptive Dormand–Prince 5(4).
    Dopri5,
    /// Classical RK4 with the given (positive) nominal step; the actual step
    /// divides the interval evenly.
    Rk4 { step: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorOptions {
    pub tol: f64,
    pub method: Method,
    pub guard: f64,
    /// Upper bound on the step size (absolute value); `f64::INFINITY` for none.
    pub max_step: f64,
}

impl IntegratorOptions {
    pub fn new(tol: f64) -> Self {
        IntegratorOptions {
            tol,
            method: Method::Dopri5,
            guard: BLOW_UP_GUARD,
            max_step: f64::INFINITY,
        }
    }

    pub fn rk4(step: f64) -> Self {
        IntegratorOptions {
            tol: step.powi(4),
            method: Method::Rk4 { step },
            guard: BLOW_UP_GUARD,
            max_step: step,
        }
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::InvalidParameter {
                param: "tol".into(),
                reason: "must be positive and finite".into(),
            });
        }
        if let Method::Rk4 { step } = self.method {
            if !(step > 0.0) || !step.is_finite() {
                return Err(Error::InvalidParameter {
                    param: "step".into(),
                    reason: "must be positive and finite".into(),
                });
            }
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidParameter {
                param: "max_step".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// An autonomous system `y' = f(y)` whose first `base_dim` coordinates are
/// the phase-space point checked against the blow-up guard.
pub(crate) trait System {
    fn len(&self) -> usize;
    fn base_dim(&self) -> usize;
    fn eval(&mut self, y: &[f64], dy: &mut [f64]);
}

pub(crate) struct BaseSystem<'a> {
    spec: &'a VectorFieldSpec,
}

impl System for BaseSystem<'_> {
    fn len(&self) -> usize {
        self.spec.dim()
    }
    fn base_dim(&self) -> usize {
        self.spec.dim()
    }
    fn eval(&mut self, y: &[f64], dy: &mut [f64]) {
        self.spec.rhs_into(y, dy);
    }
}

/// Base point followed by the column-major fundamental matrix.
pub(crate) struct TangentSystem<'a> {
    spec: &'a VectorFieldSpec,
    jac: Matrix,
}

impl<'a> TangentSystem<'a> {
    pub(crate) fn new(spec: &'a VectorFieldSpec) -> Self {
        let d = spec.dim();
        TangentSystem {
            spec,
            jac: Matrix::zeros(d, d),
        }
    }
}

impl System for TangentSystem<'_> {
    fn len(&self) -> usize {
        let d = self.spec.dim();
        d + d * d
    }
    fn base_dim(&self) -> usize {
        self.spec.dim()
    }
    fn eval(&mut self, y: &[f64], dy: &mut [f64]) {
        let d = self.spec.dim();
        let (x, m) = y.split_at(d);
        let (dx, dm) = dy.split_at_mut(d);
        self.spec.rhs_into(x, dx);
        self.spec.jacobian_into(x, &mut self.jac);
        for col in 0..d {
            let mc = &m[col * d..(col + 1) * d];
            let out = &mut dm[col * d..(col + 1) * d];
            for (i, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, v) in mc.iter().enumerate() {
                    acc += self.jac[(i, k)] * v;
                }
                *o = acc;
            }
        }
    }
}

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

/// Reusable integrator; keeps the last accepted step size between calls so
/// that consecutive intervals of one trajectory do not restart the controller.
pub(crate) struct Integrator<S: System> {
    sys: S,
    opts: IntegratorOptions,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    h_last: Option<f64>,
    /// Absolute time offset, only used to label errors.
    pub(crate) clock: f64,
}

impl<S: System> Integrator<S> {
    pub(crate) fn new(sys: S, opts: IntegratorOptions) -> Result<Self> {
        opts.validate()?;
        let n = sys.len();
        Ok(Integrator {
            sys,
            opts,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
            h_last: None,
            clock: 0.0,
        })
    }

    fn check_guard(&self, y: &[f64], t: f64) -> Result<()> {
        let base = &y[..self.sys.base_dim()];
        let norm = base.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > self.opts.guard {
            return Err(Error::BlowUp {
                time: self.clock + t,
                guard: self.opts.guard,
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    /// Advances `y` in place by flow time `t` (either sign).
    pub(crate) fn advance(&mut self, y: &mut [f64], t: f64) -> Result<()> {
        if t == 0.0 {
            return Ok(());
        }
        if !t.is_finite() {
            return Err(Error::NonFinite);
        }
        self.check_guard(y, 0.0)?;
        let result = match self.opts.method {
            Method::Dopri5 => self.advance_dopri(y, t),
            Method::Rk4 { step } => self.advance_rk4(y, t, step),
        };
        self.clock += t;
        result
    }

    fn advance_rk4(&mut self, y: &mut [f64], t: f64, step: f64) -> Result<()> {
        let n_steps = (t.abs() / step).ceil().max(1.0) as usize;
        let h = t / n_steps as f64;
        let n = y.len();
        for s in 0..n_steps {
            let [k1, k2, k3, k4, ..] = &mut self.k;
            self.sys.eval(y, k1);
            for i in 0..n {
                self.tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            self.sys.eval(&self.tmp, k2);
            for i in 0..n {
                self.tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            self.sys.eval(&self.tmp, k3);
            for i in 0..n {
                self.tmp[i] = y[i] + h * k3[i];
            }
            self.sys.eval(&self.tmp, k4);
            for i in 0..n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            self.check_guard(y, h * (s + 1) as f64)?;
        }
        Ok(())
    }

    fn initial_step(&mut self, y: &[f64], direction: f64) -> f64 {
        // Hairer–Nørsett–Wanner starting step for a 5th order method.
        let tol = self.opts.tol;
        let n = y.len();
        let sc = |v: f64| tol + tol * v.abs();
        self.sys.eval(y, &mut self.k[0]);
        let d0 = (0..n).map(|i| (y[i] / sc(y[i])).powi(2)).sum::<f64>() / n as f64;
        let d1 = (0..n).map(|i| (self.k[0][i] / sc(y[i])).powi(2)).sum::<f64>() / n as f64;
        let (d0, d1) = (d0.sqrt(), d1.sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(self.opts.max_step);
        for i in 0..n {
            self.tmp[i] = y[i] + direction * h0 * self.k[0][i];
        }
        self.sys.eval(&self.tmp, &mut self.k[1]);
        let d2 = ((0..n)
            .map(|i| ((self.k[1][i] - self.k[0][i]) / sc(y[i])).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt()
            / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.opts.max_step)
    }

    fn advance_dopri(&mut self, y: &mut [f64], t: f64) -> Result<()> {
        let n = y.len();
        let dir = t.signum();
        let t_abs = t.abs();
        let tol = self.opts.tol;
        let mut h = match self.h_last {
            Some(h) => h,
            None => self.initial_step(y, dir),
        }
        .min(self.opts.max_step);
        self.sys.eval(y, &mut self.k[0]);
        let mut done = 0.0_f64;
        let mut steps = 0usize;
        loop {
            let remaining = t_abs - done;
            let last = h >= remaining * (1.0 - 1e-12);
            let h_try = if last { remaining } else { h };
            let hs = dir * h_try;
            {
                let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
                let tmp = &mut self.tmp;
                for i in 0..n {
                    tmp[i] = y[i] + hs * A21 * k1[i];
                }
                self.sys.eval(tmp, k2);
                for i in 0..n {
                    tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
                }
                self.sys.eval(tmp, k3);
                for i in 0..n {
                    tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
                }
                self.sys.eval(tmp, k4);
                for i in 0..n {
                    tmp[i] = y[i]
                        + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
                }
                self.sys.eval(tmp, k5);
                for i in 0..n {
                    tmp[i] = y[i]
                        + hs * (A61 * k1[i]
                            + A62 * k2[i]
                            + A63 * k3[i]
                            + A64 * k4[i]
                            + A65 * k5[i]);
                }
                self.sys.eval(tmp, k6);
                for i in 0..n {
                    self.y_new[i] = y[i]
                        + hs * (A71 * k1[i]
                            + A73 * k3[i]
                            + A74 * k4[i]
                            + A75 * k5[i]
                            + A76 * k6[i]);
                }
                self.sys.eval(&self.y_new, k7);
            }
            let [k1, _, k3, k4, k5, k6, k7] = &self.k;
            let mut err: f64 = 0.0;
            for i in 0..n {
                let e = hs
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
                let sc = tol + tol * y[i].abs().max(self.y_new[i].abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() {
                err = 1e10;
            }
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::StepUnderflow {
                    time: self.clock + dir * done,
                });
            }
            if err <= 1.0 {
                y.copy_from_slice(&self.y_new);
                let (first, rest) = self.k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                done = if last { t_abs } else { done + h_try };
                self.check_guard(y, dir * done)?;
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                if !last {
                    h = (h_try * fac).min(self.opts.max_step);
                }
                if last {
                    // Keep the controller's estimate rather than the clipped step.
                    self.h_last = Some(h.max(h_try));
                    return Ok(());
                }
            } else {
                h = h_try * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if h < 1e-13 * (1.0 + (self.clock + dir * done).abs()) {
                    return Err(Error::StepUnderflow {
                        time: self.clock + dir * done,
                    });
                }
            }
        }
    }
}

fn check_start(spec: &VectorFieldSpec, x0: &Vector) -> Result<()> {
    spec.check_point(x0)
}

/// `φ_t(x0)` with default options at tolerance `tol`.
pub fn flow(spec: &VectorFieldSpec, x0: &Vector, t: f64, tol: f64) -> Result<Vector> {
    flow_with(spec, x0, t, &IntegratorOptions::new(tol))
}

pub fn flow_with(
    spec: &VectorFieldSpec,
    x0: &Vector,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<Vector> {
    check_start(spec, x0)?;
    let mut integ = Integrator::new(BaseSystem { spec }, *opts)?;
    let mut y = x0.as_slice().to_vec();
    integ.advance(&mut y, t)?;
    Ok(Vector::from_vec(y))
}

/// `(φ_t(x0), Dφ_t(x0))`, integrating the variational system jointly with the
/// base trajectory.
pub fn tangent_flow(
    spec: &VectorFieldSpec,
    x0: &Vector,
    t: f64,
    tol: f64,
) -> Result<(Vector, Matrix)> {
    tangent_flow_with(spec, x0, t, &IntegratorOptions::new(tol))
}

pub fn tangent_flow_with(
    spec: &VectorFieldSpec,
    x0: &Vector,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<(Vector, Matrix)> {
    check_start(spec, x0)?;
    let d = spec.dim();
    let mut integ = Integrator::new(TangentSystem::new(spec), *opts)?;
    let mut y = tangent_initial(x0);
    integ.advance(&mut y, t)?;
    Ok(split_tangent(&y, d))
}

pub(crate) fn tangent_initial(x0: &Vector) -> Vec<f64> {
    let d = x0.len();
    let mut y = Vec::with_capacity(d + d * d);
    y.extend_from_slice(x0.as_slice());
    y.extend_from_slice(Matrix::identity(d, d).as_slice());
    y
}

pub(crate) fn split_tangent(y: &[f64], d: usize) -> (Vector, Matrix) {
    (
        Vector::from_column_slice(&y[..d]),
        Matrix::from_column_slice(d, d, &y[d..]),
    )
}

/// Samples `φ_{k·dt}(x0)` for `k = 0, 1, …` until `k·dt > t_max` or `stop`
/// returns true on a sample (that sample is included).
pub fn trajectory_until<F: Fn(&Vector) -> bool>(
    spec: &VectorFieldSpec,
    x0: &Vector,
    t_max: f64,
    dt: f64,
    tol: f64,
    stop: F,
) -> Result<Vec<Vector>> {
    check_start(spec, x0)?;
    if !(dt != 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter {
            param: "dt".into(),
            reason: "must be nonzero and finite".into(),
        });
    }
    let mut integ = Integrator::new(BaseSystem { spec }, IntegratorOptions::new(tol))?;
    let mut y = x0.as_slice().to_vec();
    let mut out = vec![x0.clone()];
    let n = (t_max.abs() / dt.abs()).floor() as usize;
    for _ in 0..n {
        integ.advance(&mut y, dt)?;
        let p = Vector::from_column_slice(&y);
        let halt = stop(&p);
        out.push(p);
        if halt {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{builtin, default_params, diagonal, Params};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn linear_flow_matches_closed_form() {
        let f = diagonal(&[-2.0, -1.0, 1.0]).unwrap();
        let x = flow(&f, &Vector::from_vec(vec![1.0, 1.0, 1.0]), 1.0, 1e-12).unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(x[0], 1.0 / (e * e), max_relative = 1e-10);
        assert_relative_eq!(x[1], 1.0 / e, max_relative = 1e-10);
        assert_relative_eq!(x[2], e, max_relative = 1e-10);
    }

    #[test]
    fn zero_time_is_exact() {
        let f = builtin("lorenz", &default_params("lorenz").unwrap()).unwrap();
        let x0 = Vector::from_vec(vec![0.1, 0.2, 0.3]);
        assert_eq!(flow(&f, &x0, 0.0, 1e-9).unwrap(), x0);
        let (x, m) = tangent_flow(&f, &x0, 0.0, 1e-9).unwrap();
        assert_eq!(x, x0);
        assert_eq!(m, Matrix::identity(3, 3));
    }

    #[test]
    fn rotation_period() {
        let f = builtin("rotation2d", &Params::new()).unwrap();
        let x = flow(&f, &Vector::from_vec(vec![1.0, 0.0]), 2.0 * PI, 1e-12).unwrap();
        assert!((x - Vector::from_vec(vec![1.0, 0.0])).norm() < 1e-8);
    }

    #[test]
    fn lorenz_cocycle_probe() {
        let f = builtin("lorenz", &default_params("lorenz").unwrap()).unwrap();
        let x0 = Vector::from_vec(vec![1.0, 1.0, 1.0]);
        let (x1, m1) = tangent_flow(&f, &x0, 0.5, 1e-12).unwrap();
        let (_, m2) = tangent_flow(&f, &x1, 0.5, 1e-12).unwrap();
        let (_, m) = tangent_flow(&f, &x0, 1.0, 1e-12).unwrap();
        let prod = m2 * m1;
        assert!((&prod - &m).norm() / m.norm() < 1e-6);
    }

    #[test]
    fn blow_up_is_reported_with_time() {
        // x' = x² escapes at t = 1 from x = 1.
        use crate::field::{polynomial, Monomial, PolynomialField, Region};
        let p = PolynomialField::new(1, vec![vec![Monomial { coeff: 1.0, powers: vec![2] }]])
            .unwrap();
        let f = polynomial(p, Region::cube(1, 2.0)).unwrap();
        match flow(&f, &Vector::from_vec(vec![1.0]), 2.0, 1e-10) {
            Err(Error::BlowUp { time, .. }) => assert!(time > 0.99 && time < 1.0 + 1e-3),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn rk4_agrees_with_dopri() {
        let f = builtin("lorenz", &default_params("lorenz").unwrap()).unwrap();
        let x0 = Vector::from_vec(vec![1.0, 1.0, 1.0]);
        let a = flow(&f, &x0, 1.0, 1e-12).unwrap();
        let b = flow_with(&f, &x0, 1.0, &IntegratorOptions::rk4(1e-4)).unwrap();
        assert!((a - b).norm() < 1e-7);
    }

    #[test]
    fn backward_time_returns() {
        let f = builtin("saddle-cycle", &default_params("saddle-cycle").unwrap()).unwrap();
        let x0 = Vector::from_vec(vec![0.7, 0.2, 0.1]);
        let x1 = flow(&f, &x0, 1.5, 1e-12).unwrap();
        let back = flow(&f, &x1, -1.5, 1e-12).unwrap();
        assert!((back - x0).norm() < 1e-9);
    }

    #[test]
    fn trajectory_stops_on_request() {
        let f = diagonal(&[1.0]).unwrap();
        let pts = trajectory_until(&f, &Vector::from_vec(vec![0.1]), 10.0, 0.1, 1e-10, |p| {
            p[0] > 1.0
        })
        .unwrap();
        assert!(pts.last().unwrap()[0] > 1.0);
        assert!(pts.len() < 30);
    }
}
