//! Sampled trajectories carrying a factored tangent cocycle.

use crate::error::{Error, Result};
use crate::field::{Matrix, Vector, VectorFieldSpec};
use crate::ode::{split_tangent, tangent_initial, Integrator, IntegratorOptions, TangentSystem};

/// QR factorization with a nonnegative diagonal in `R`.
pub fn qr_positive(m: &Matrix) -> (Matrix, Matrix) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for k in 0..r.nrows().min(r.ncols()) {
        if r[(k, k)] < 0.0 {
            r.row_mut(k).neg_mut();
            q.column_mut(k).neg_mut();
        }
    }
    (q, r)
}

/// A trajectory sampled at `t_i = i·dt` with the tangent cocycle.
///
/// `steps[i]` is the one-interval fundamental matrix `Dφ_dt(x_i)`, so that
/// `M_{i+1} = steps[i]·M_i`. The running products are kept as QR pairs:
/// `steps[i]·q_i = q_{i+1}·r_{i+1}`, hence `M_i = q_i·r_i⋯r_1`.
#[derive(Clone, Debug)]
pub struct OrbitSegment {
    times: Vec<f64>,
    states: Vec<Vector>,
    velocities: Vec<Vector>,
    steps: Vec<Matrix>,
    q: Vec<Matrix>,
    r: Vec<Matrix>,
    dt: f64,
    tol: f64,
}

fn sample_count(t_total: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter {
            param: "dt".into(),
            reason: "must be positive".into(),
        });
    }
    if !(t_total >= dt * (1.0 - 1e-12)) || !t_total.is_finite() {
        return Err(Error::InvalidParameter {
            param: "t_total".into(),
            reason: "must be at least dt".into(),
        });
    }
    let ratio = t_total / dt;
    let n = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
        ratio.round()
    } else {
        ratio.floor()
    };
    Ok(n as usize)
}

/// Integrates from `x0` and records samples every `dt` up to `t_total`.
///
/// Each interval restarts the variational equation from the identity, so the
/// stored matrices never overflow however hyperbolic the orbit is.
pub fn sample_orbit(
    spec: &VectorFieldSpec,
    x0: &Vector,
    t_total: f64,
    dt: f64,
    tol: f64,
) -> Result<OrbitSegment> {
    sample_orbit_with(spec, x0, t_total, dt, &IntegratorOptions::new(tol))
}

pub fn sample_orbit_with(
    spec: &VectorFieldSpec,
    x0: &Vector,
    t_total: f64,
    dt: f64,
    opts: &IntegratorOptions,
) -> Result<OrbitSegment> {
    spec.check_point(x0)?;
    let n = sample_count(t_total, dt)?;
    let d = spec.dim();
    let mut integ = Integrator::new(TangentSystem::new(spec), *opts)?;
    let mut states = Vec::with_capacity(n + 1);
    let mut steps = Vec::with_capacity(n);
    states.push(x0.clone());
    let mut x = x0.clone();
    for _ in 0..n {
        let mut y = tangent_initial(&x);
        integ.advance(&mut y, dt)?;
        let (x1, a) = split_tangent(&y, d);
        steps.push(a);
        states.push(x1.clone());
        x = x1;
    }
    Ok(OrbitSegment::from_parts(spec, states, steps, dt, opts.tol))
}

impl OrbitSegment {
    fn from_parts(
        spec: &VectorFieldSpec,
        states: Vec<Vector>,
        steps: Vec<Matrix>,
        dt: f64,
        tol: f64,
    ) -> Self {
        let velocities = states.iter().map(|x| spec.rhs(x)).collect();
        Self::assemble(states, velocities, steps, dt, tol)
    }

    fn assemble(
        states: Vec<Vector>,
        velocities: Vec<Vector>,
        steps: Vec<Matrix>,
        dt: f64,
        tol: f64,
    ) -> Self {
        let d = states[0].len();
        let times = (0..states.len()).map(|i| i as f64 * dt).collect();
        let mut q = Vec::with_capacity(states.len());
        let mut r = Vec::with_capacity(states.len());
        q.push(Matrix::identity(d, d));
        r.push(Matrix::identity(d, d));
        for a in &steps {
            let (qi, ri) = qr_positive(&(a * q.last().unwrap()));
            q.push(qi);
            r.push(ri);
        }
        OrbitSegment {
            times,
            states,
            velocities,
            steps,
            q,
            r,
            dt,
            tol,
        }
    }

    /// Number of samples (one more than the number of intervals).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &Vector {
        &self.states[i]
    }

    /// `X(x_i)` as evaluated when the orbit was recorded.
    pub fn velocity(&self, i: usize) -> &Vector {
        &self.velocities[i]
    }

    /// One-interval fundamental matrix `Dφ_dt(x_i)` (for `i < len − 1`).
    pub fn step(&self, i: usize) -> &Matrix {
        &self.steps[i]
    }

    pub fn qr_factors(&self, i: usize) -> (&Matrix, &Matrix) {
        (&self.q[i], &self.r[i])
    }

    /// `M_i = Dφ_{t_i}(x_0)` rebuilt from the stored factors.
    pub fn fundamental(&self, i: usize) -> Matrix {
        let d = self.dim();
        let mut acc = Matrix::identity(d, d);
        for k in 1..=i {
            acc = &self.r[k] * acc;
        }
        &self.q[i] * acc
    }

    pub fn fundamentals(&self) -> Vec<Matrix> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.len());
        let mut acc = Matrix::identity(d, d);
        out.push(Matrix::identity(d, d));
        for k in 1..self.len() {
            acc = &self.r[k] * acc;
            out.push(&self.q[k] * &acc);
        }
        out
    }

    /// `Dφ_{t_to − t_from}(x_from)` as a product of interval matrices.
    pub fn cocycle(&self, from: usize, to: usize) -> Result<Matrix> {
        if from > to || to >= self.len() {
            return Err(Error::OutsideRecord(to));
        }
        let d = self.dim();
        let mut acc = Matrix::identity(d, d);
        for k in from..to {
            acc = &self.steps[k] * acc;
        }
        Ok(acc)
    }

    /// The same trajectory traversed by `−X`: states reversed, interval
    /// matrices inverted and velocities negated.
    pub fn reversed(&self) -> Result<OrbitSegment> {
        let states: Vec<Vector> = self.states.iter().rev().cloned().collect();
        let velocities = self.velocities.iter().rev().map(|v| -v).collect();
        let mut steps = Vec::with_capacity(self.steps.len());
        for a in self.steps.iter().rev() {
            let inv = a.clone().try_inverse().ok_or_else(|| {
                Error::Precondition("singular interval matrix in orbit record".into())
            })?;
            steps.push(inv);
        }
        Ok(Self::assemble(states, velocities, steps, self.dt, self.tol))
    }

    /// Continues the orbit from its last sample by `extra` time units at the
    /// same `dt` and tolerance.
    pub fn extended(&self, spec: &VectorFieldSpec, extra: f64) -> Result<OrbitSegment> {
        if extra <= 0.0 {
            return Ok(self.clone());
        }
        let tail = sample_orbit(spec, self.states.last().unwrap(), extra, self.dt, self.tol)?;
        let mut out = self.clone();
        let base = out.states.len() - 1;
        for k in 0..tail.steps.len() {
            let a = tail.steps[k].clone();
            let (qi, ri) = qr_positive(&(&a * out.q.last().unwrap()));
            out.q.push(qi);
            out.r.push(ri);
            out.steps.push(a);
            out.states.push(tail.states[k + 1].clone());
            out.velocities.push(tail.velocities[k + 1].clone());
            out.times.push((base + k + 1) as f64 * self.dt);
        }
        Ok(out)
    }

    /// Sub-orbit over samples `from..=to`, times shifted to start at zero.
    pub fn slice(&self, from: usize, to: usize) -> Result<OrbitSegment> {
        if from > to || to >= self.len() {
            return Err(Error::OutsideRecord(to));
        }
        Ok(Self::assemble(
            self.states[from..=to].to_vec(),
            self.velocities[from..=to].to_vec(),
            self.steps[from..to].to_vec(),
            self.dt,
            self.tol,
        ))
    }

    /// Every `stride`-th sample with the interval matrices composed, so the
    /// result has spacing `stride·dt`.
    pub fn coarsened(&self, stride: usize) -> OrbitSegment {
        let stride = stride.max(1);
        if stride == 1 {
            return self.clone();
        }
        let idx: Vec<usize> = (0..self.len()).step_by(stride).collect();
        let states = idx.iter().map(|&i| self.states[i].clone()).collect();
        let velocities = idx.iter().map(|&i| self.velocities[i].clone()).collect();
        let steps = idx
            .windows(2)
            .map(|w| {
                let mut m = self.steps[w[0]].clone();
                for j in w[0] + 1..w[1] {
                    m = &self.steps[j] * m;
                }
                m
            })
            .collect();
        Self::assemble(states, velocities, steps, self.dt * stride as f64, self.tol)
    }

    pub(crate) fn steps(&self) -> &[Matrix] {
        &self.steps
    }

    /// Every `stride`-th sample point.
    pub fn subsample(&self, stride: usize) -> Vec<Vector> {
        self.states.iter().step_by(stride.max(1)).cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{builtin, default_params, linear};
    use crate::ode::tangent_flow;

    #[test]
    fn sample_counts() {
        let f = builtin("lorenz", &default_params("lorenz").unwrap()).unwrap();
        let x0 = Vector::from_vec(vec![1.0, 1.0, 1.0]);
        let o = sample_orbit(&f, &x0, 1.0, 0.1, 1e-10).unwrap();
        assert_eq!(o.len(), 11);
        assert_eq!(o.times()[10], 1.0);
        let o = sample_orbit(&f, &x0, 0.1, 0.1, 1e-10).unwrap();
        assert_eq!(o.len(), 2);
        assert_eq!(o.fundamental(0), Matrix::identity(3, 3));
    }

    #[test]
    fn fundamentals_match_direct_integration() {
        let f = builtin("lorenz", &default_params("lorenz").unwrap()).unwrap();
        let x0 = Vector::from_vec(vec![1.0, 1.0, 1.0]);
        let o = sample_orbit(&f, &x0, 1.0, 0.05, 1e-12).unwrap();
        let (x, m) = tangent_flow(&f, &x0, 1.0, 1e-12).unwrap();
        assert!((o.state(20) - x).norm() < 1e-8);
        let fm = o.fundamental(20);
        assert!((&fm - &m).norm() / m.norm() < 1e-7);
        let c = o.cocycle(0, 20).unwrap();
        assert!((&c - &m).norm() / m.norm() < 1e-7);
        let all = o.fundamentals();
        assert!((&all[20] - &fm).norm() / fm.norm() < 1e-12);
        // cocycle consistency M_{i+1} M_i^{-1} = step
        let m5 = &all[5];
        let m6 = &all[6];
        let step = m6 * m5.clone().try_inverse().unwrap();
        assert!((&step - o.step(5)).norm() / o.step(5).norm() < 1e-6);
    }

    #[test]
    fn reversed_orbit_inverts_cocycle() {
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, 0.5]);
        let f = linear(&a).unwrap();
        let o = sample_orbit(&f, &Vector::from_vec(vec![0.3, 0.4]), 1.0, 0.1, 1e-12).unwrap();
        let r = o.reversed().unwrap();
        let fwd = o.cocycle(0, 10).unwrap();
        let bwd = r.cocycle(0, 10).unwrap();
        assert!((fwd * bwd - Matrix::identity(2, 2)).norm() < 1e-9);
        assert_eq!(r.state(0), o.state(10));
    }

    #[test]
    fn extension_continues_the_record() {
        let f = builtin("lorenz", &default_params("lorenz").unwrap()).unwrap();
        let x0 = Vector::from_vec(vec![1.0, 1.0, 1.0]);
        let long = sample_orbit(&f, &x0, 2.0, 0.1, 1e-11).unwrap();
        let short = sample_orbit(&f, &x0, 1.0, 0.1, 1e-11).unwrap();
        let ext = short.extended(&f, 1.0).unwrap();
        assert_eq!(ext.len(), long.len());
        assert!((ext.state(20) - long.state(20)).norm() < 1e-6);
    }
}
