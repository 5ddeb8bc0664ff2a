//! Normal bundle, linear Poincaré flow `Ψ_t` and its extension `Ψ̂_t` over
//! lines of the projective bundle.
//!
//! Both flows are evaluated as products over short sub-intervals, projecting
//! after each one. This is the same map (the flows are cocycles) but avoids
//! the cancellation that a single projection at the end suffers for strongly
//! contracted normal vectors.

use crate::error::{Error, Result};
use crate::field::{Vector, VectorFieldSpec};
use crate::linalg::project_out;
use crate::ode::{tangent_flow_with, IntegratorOptions};

/// Points where `|X|` is at most this are treated as singular.
pub const NEAR_SINGULAR: f64 = 1e-9;

/// Longest sub-interval between two projections.
const CHUNK: f64 = 0.25;

/// Flips `u` so its first nonzero coordinate is positive.
pub fn canonical_sign(mut u: Vector) -> Vector {
    if let Some(first) = u.iter().copied().find(|c| *c != 0.0) {
        if first < 0.0 {
            u.neg_mut();
        }
    }
    u
}

/// A line `L = ℝu` over the base point `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LineElement {
    base: Vector,
    direction: Vector,
}

impl LineElement {
    pub fn new(base: Vector, direction: Vector) -> Result<Self> {
        if base.len() != direction.len() {
            return Err(Error::DimensionMismatch {
                expected: base.len(),
                got: direction.len(),
            });
        }
        if base.iter().chain(direction.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let n = direction.norm();
        if n == 0.0 {
            return Err(Error::Precondition("line direction must be nonzero".into()));
        }
        Ok(LineElement {
            base,
            direction: canonical_sign(direction / n),
        })
    }

    /// The line `ℝX(x)` at a regular point.
    pub fn along_field(spec: &VectorFieldSpec, x: &Vector) -> Result<Self> {
        let v = spec.rhs(x);
        let speed = v.norm();
        if speed <= NEAR_SINGULAR {
            return Err(Error::DegenerateNormalBundle { speed });
        }
        LineElement::new(x.clone(), v)
    }

    pub fn base(&self) -> &Vector {
        &self.base
    }

    pub fn direction(&self) -> &Vector {
        &self.direction
    }
}

/// A vector of the normal space `𝒩(L) = L^⊥`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalVector {
    at: LineElement,
    v: Vector,
}

impl NormalVector {
    pub fn new(at: LineElement, v: Vector) -> Result<Self> {
        let p = at.direction.dot(&v).abs();
        if p > 1e-10 * v.norm() {
            return Err(Error::Precondition(
                "normal vector is not orthogonal to its line".into(),
            ));
        }
        Ok(NormalVector { at, v })
    }

    /// Projects an arbitrary vector into `𝒩(L)`.
    pub fn projected(at: LineElement, v: &Vector) -> Self {
        let w = project_out(v, &at.direction);
        NormalVector { at, v: w }
    }

    pub fn at(&self) -> &LineElement {
        &self.at
    }

    pub fn vector(&self) -> &Vector {
        &self.v
    }
}

/// `v − ⟨v,u⟩u`.
pub fn normal_project(v: &Vector, u: &Vector) -> Vector {
    project_out(v, u)
}

fn chunks(t: f64) -> impl Iterator<Item = f64> {
    let n = (t.abs() / CHUNK).ceil().max(1.0) as usize;
    let h = t / n as f64;
    std::iter::repeat_n(h, if t == 0.0 { 0 } else { n })
}

/// `Ψ_t(v)` for `v ⟂ X(x)` at a regular point `x`.
pub fn psi(spec: &VectorFieldSpec, x: &Vector, t: f64, v: &Vector, tol: f64) -> Result<Vector> {
    spec.check_point(x)?;
    let speed = spec.rhs(x).norm();
    if speed <= NEAR_SINGULAR {
        return Err(Error::DegenerateNormalBundle { speed });
    }
    let u0 = spec.rhs(x) / speed;
    if u0.dot(v).abs() > 1e-8 * v.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::Precondition(
            "psi expects a vector orthogonal to the flow direction".into(),
        ));
    }
    let opts = IntegratorOptions::new(tol);
    let mut p = x.clone();
    let mut w = v.clone();
    for h in chunks(t) {
        let (p1, m) = tangent_flow_with(spec, &p, h, &opts)?;
        let f = spec.rhs(&p1);
        let s = f.norm();
        if s <= NEAR_SINGULAR {
            return Err(Error::DegenerateNormalBundle { speed: s });
        }
        w = project_out(&(m * w), &(f / s));
        p = p1;
    }
    Ok(w)
}

/// `(φ̂_t(L), Ψ̂_t(v))` for `v ⟂ L`.
pub fn psi_hat(
    spec: &VectorFieldSpec,
    line: &LineElement,
    t: f64,
    v: &Vector,
    tol: f64,
) -> Result<(LineElement, Vector)> {
    spec.check_point(&line.base)?;
    let opts = IntegratorOptions::new(tol);
    let mut p = line.base.clone();
    let mut u = line.direction.clone();
    let mut w = v.clone();
    for h in chunks(t) {
        let (p1, m) = tangent_flow_with(spec, &p, h, &opts)?;
        let mu = &m * &u;
        let n = mu.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::NonFinite);
        }
        u = mu / n;
        w = project_out(&(m * w), &u);
        p = p1;
    }
    Ok((LineElement::new(p, u)?, w))
}

/// `g(L) = ⟨DX(x)u, u⟩`, the instantaneous log growth rate of `|Dφ_t|_L|`.
pub fn log_derivative(spec: &VectorFieldSpec, line: &LineElement) -> f64 {
    let u = &line.direction;
    u.dot(&(spec.jacobian(&line.base) * u))
}
