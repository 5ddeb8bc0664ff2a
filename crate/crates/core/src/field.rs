//! Evaluable vector fields with exact Jacobians.
//!
//! A [`VectorFieldSpec`] is a closed description of a smooth field on ℝᵈ:
//! one of the built-in families or an inline polynomial, optionally plus a
//! polynomial perturbation and a constant time rescaling. Everything is plain
//! data, so specs are `Send + Sync`, comparable and serializable.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// A named parameter of a built-in family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

pub type Params = BTreeMap<String, ParamValue>;

/// Axis-aligned box, the compact region of interest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().chain(&upper).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if lower.iter().zip(&upper).any(|(l, u)| l >= u) {
            return Err(Error::Precondition(
                "region lower corner must be strictly below the upper corner".into(),
            ));
        }
        Ok(Region { lower, upper })
    }

    pub fn cube(dim: usize, half_width: f64) -> Self {
        Region {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Length of the main diagonal.
    pub fn diam(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn center(&self) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)),
        )
    }
}

/// One term `coeff · Π x_j^{powers[j]}` of a polynomial component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

impl Monomial {
    fn eval(&self, x: &[f64]) -> f64 {
        self.powers
            .iter()
            .zip(x)
            .fold(self.coeff, |acc, (&p, &v)| acc * v.powi(p as i32))
    }

    fn partial(&self, x: &[f64], j: usize) -> f64 {
        let pj = self.powers[j];
        if pj == 0 {
            return 0.0;
        }
        let mut acc = self.coeff * pj as f64;
        for (k, (&p, &v)) in self.powers.iter().zip(x).enumerate() {
            let e = if k == j { p - 1 } else { p };
            acc *= v.powi(e as i32);
        }
        acc
    }
}

/// A polynomial vector field given by one list of monomials per component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialField {
    pub dim: usize,
    pub components: Vec<Vec<Monomial>>,
}

impl PolynomialField {
    pub fn new(dim: usize, components: Vec<Vec<Monomial>>) -> Result<Self> {
        if components.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: components.len(),
            });
        }
        for m in components.iter().flatten() {
            if m.powers.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.powers.len(),
                });
            }
            if !m.coeff.is_finite() {
                return Err(Error::NonFinite);
            }
        }
        Ok(PolynomialField { dim, components })
    }

    fn rhs_add(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        for (o, comp) in out.iter_mut().zip(&self.components) {
            *o += scale * comp.iter().map(|m| m.eval(x)).sum::<f64>();
        }
    }

    fn jacobian_add(&self, x: &[f64], scale: f64, out: &mut Matrix) {
        for (i, comp) in self.components.iter().enumerate() {
            for j in 0..self.dim {
                out[(i, j)] += scale * comp.iter().map(|m| m.partial(x, j)).sum::<f64>();
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Family {
    Lorenz { sigma: f64, rho: f64, beta: f64 },
    Linear { a: Matrix },
    Rotation2d,
    CubicProduct,
    SaddleCycle { contraction: f64, expansion: f64, omega: f64 },
    Polynomial(PolynomialField),
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 5] = [
    "lorenz",
    "linear",
    "rotation2d",
    "cubic1d-product",
    "saddle-cycle",
];

/// An evaluable smooth vector field `X` on ℝᵈ with its exact Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFieldSpec {
    name: String,
    dim: usize,
    params: Params,
    region: Region,
    family: Family,
    perturbation: Option<PolynomialField>,
    scale: f64,
}

impl fmt::Display for VectorFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (d = {})", self.name, self.dim)
    }
}

fn scalar(name: &str, params: &Params, key: &str) -> Result<f64> {
    match params.get(key) {
        Some(ParamValue::Scalar(v)) if v.is_finite() => Ok(*v),
        Some(ParamValue::Scalar(_)) => Err(Error::InvalidParameter {
            param: key.into(),
            reason: "must be finite".into(),
        }),
        Some(ParamValue::Matrix(_)) => Err(Error::InvalidParameter {
            param: key.into(),
            reason: "expected a number, found a matrix".into(),
        }),
        None => Err(Error::MissingParameter {
            field: name.into(),
            param: key.into(),
        }),
    }
}

fn check_keys(name: &str, params: &Params, allowed: &[&str]) -> Result<()> {
    for key in allowed {
        if !params.contains_key(*key) {
            return Err(Error::MissingParameter {
                field: name.into(),
                param: (*key).into(),
            });
        }
    }
    if let Some(extra) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::UnexpectedParameter {
            field: name.into(),
            param: extra.clone(),
        });
    }
    Ok(())
}

/// Default parameter set of a built-in family (the classical values for
/// `lorenz`, `diag(-2,-1,1)` for `linear`).
pub fn default_params(name: &str) -> Result<Params> {
    let mut p = Params::new();
    match name {
        "lorenz" => {
            p.insert("sigma".into(), ParamValue::Scalar(10.0));
            p.insert("rho".into(), ParamValue::Scalar(28.0));
            p.insert("beta".into(), ParamValue::Scalar(8.0 / 3.0));
        }
        "linear" => {
            p.insert(
                "A".into(),
                ParamValue::Matrix(vec![
                    vec![-2.0, 0.0, 0.0],
                    vec![0.0, -1.0, 0.0],
                    vec![0.0, 0.0, 1.0],
                ]),
            );
        }
        "rotation2d" | "cubic1d-product" => {}
        "saddle-cycle" => {
            p.insert("contraction".into(), ParamValue::Scalar(1.0));
            p.insert("expansion".into(), ParamValue::Scalar(0.5));
            p.insert("omega".into(), ParamValue::Scalar(1.0));
        }
        other => return Err(Error::UnknownField(other.into())),
    }
    Ok(p)
}

/// Builds one of the named families.
///
/// * `lorenz` (`sigma`, `rho`, `beta`): `(σ(y−x), x(ρ−z)−y, xy−βz)`.
/// * `linear` (`A`, a square matrix): `x ↦ Ax`.
/// * `rotation2d`: `(−y, x)`.
/// * `cubic1d-product`: `(x(1−x²), −y)`.
/// * `saddle-cycle` (`contraction`, `expansion`, `omega`): a nonsingular field
///   on ℝ³ whose unit circle in the plane `z = 0` is a periodic orbit with
///   normal exponents `−contraction` (radial) and `+expansion` (vertical).
///
/// Parameter sets must be complete; unknown keys are rejected.
pub fn builtin(name: &str, params: &Params) -> Result<VectorFieldSpec> {
    let (family, dim, region) = match name {
        "lorenz" => {
            check_keys(name, params, &["beta", "rho", "sigma"])?;
            let family = Family::Lorenz {
                sigma: scalar(name, params, "sigma")?,
                rho: scalar(name, params, "rho")?,
                beta: scalar(name, params, "beta")?,
            };
            let region = Region::new(vec![-30.0, -30.0, -10.0], vec![30.0, 30.0, 60.0])?;
            (family, 3, region)
        }
        "linear" => {
            check_keys(name, params, &["A"])?;
            let rows = match &params["A"] {
                ParamValue::Matrix(rows) => rows,
                ParamValue::Scalar(_) => {
                    return Err(Error::InvalidParameter {
                        param: "A".into(),
                        reason: "expected a square matrix".into(),
                    })
                }
            };
            let d = rows.len();
            if d == 0 || rows.iter().any(|r| r.len() != d) {
                return Err(Error::InvalidParameter {
                    param: "A".into(),
                    reason: "expected a non-empty square matrix".into(),
                });
            }
            if rows.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
            let a = Matrix::from_fn(d, d, |i, j| rows[i][j]);
            (Family::Linear { a }, d, Region::cube(d, 1.0))
        }
        "rotation2d" => {
            check_keys(name, params, &[])?;
            (Family::Rotation2d, 2, Region::cube(2, 2.0))
        }
        "cubic1d-product" => {
            check_keys(name, params, &[])?;
            (Family::CubicProduct, 2, Region::cube(2, 2.0))
        }
        "saddle-cycle" => {
            check_keys(name, params, &["contraction", "expansion", "omega"])?;
            let family = Family::SaddleCycle {
                contraction: scalar(name, params, "contraction")?,
                expansion: scalar(name, params, "expansion")?,
                omega: scalar(name, params, "omega")?,
            };
            let region = Region::new(vec![-2.0, -2.0, -1.0], vec![2.0, 2.0, 1.0])?;
            (family, 3, region)
        }
        other => return Err(Error::UnknownField(other.into())),
    };
    Ok(VectorFieldSpec {
        name: name.into(),
        dim,
        params: params.clone(),
        region,
        family,
        perturbation: None,
        scale: 1.0,
    })
}

/// Shorthand for `linear` with a given matrix.
pub fn linear(a: &Matrix) -> Result<VectorFieldSpec> {
    let rows = (0..a.nrows())
        .map(|i| a.row(i).iter().copied().collect())
        .collect();
    let mut p = Params::new();
    p.insert("A".into(), ParamValue::Matrix(rows));
    builtin("linear", &p)
}

/// Shorthand for `linear` with a diagonal matrix.
pub fn diagonal(entries: &[f64]) -> Result<VectorFieldSpec> {
    linear(&Matrix::from_diagonal(&Vector::from_column_slice(entries)))
}

/// Builds a polynomial field from inline coefficient tables.
pub fn polynomial(poly: PolynomialField, region: Region) -> Result<VectorFieldSpec> {
    if region.dim() != poly.dim {
        return Err(Error::DimensionMismatch {
            expected: poly.dim,
            got: region.dim(),
        });
    }
    Ok(VectorFieldSpec {
        name: "polynomial".into(),
        dim: poly.dim,
        params: Params::new(),
        region,
        family: Family::Polynomial(poly),
        perturbation: None,
        scale: 1.0,
    })
}

impl VectorFieldSpec {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn perturbation(&self) -> Option<&PolynomialField> {
        self.perturbation.as_ref()
    }

    /// Constant factor `c` of the rescaled field `cX`.
    pub fn time_scale(&self) -> f64 {
        self.scale
    }

    pub fn with_region(mut self, region: Region) -> Result<Self> {
        if region.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: region.dim(),
            });
        }
        self.region = region;
        Ok(self)
    }

    /// `X + p` for a polynomial `p` (replaces any previous perturbation).
    pub fn with_perturbation(mut self, p: PolynomialField) -> Result<Self> {
        if p.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: p.dim,
            });
        }
        self.perturbation = Some(p);
        Ok(self)
    }

    /// The field `cX`. Negative `c` reverses time.
    pub fn rescaled(mut self, c: f64) -> Self {
        self.scale *= c;
        self
    }

    /// The time-reversed field `−X`.
    pub fn reversed(self) -> Self {
        self.rescaled(-1.0)
    }

    /// Writes `X(x)` into `out`.
    pub fn rhs_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        match &self.family {
            Family::Lorenz { sigma, rho, beta } => {
                out[0] = sigma * (x[1] - x[0]);
                out[1] = x[0] * (rho - x[2]) - x[1];
                out[2] = x[0] * x[1] - beta * x[2];
            }
            Family::Linear { a } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..self.dim).map(|j| a[(i, j)] * x[j]).sum();
                }
            }
            Family::Rotation2d => {
                out[0] = -x[1];
                out[1] = x[0];
            }
            Family::CubicProduct => {
                out[0] = x[0] * (1.0 - x[0] * x[0]);
                out[1] = -x[1];
            }
            Family::SaddleCycle {
                contraction,
                expansion,
                omega,
            } => {
                let s = 1.0 - x[0] * x[0] - x[1] * x[1];
                let half = 0.5 * contraction;
                out[0] = -omega * x[1] + half * s * x[0];
                out[1] = omega * x[0] + half * s * x[1];
                let b2 = expansion * expansion;
                out[2] = expansion * x[2] + s * s * (1.0 + b2 * x[2] * x[2]);
            }
            Family::Polynomial(p) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                p.rhs_add(x, 1.0, out);
            }
        }
        if let Some(p) = &self.perturbation {
            p.rhs_add(x, 1.0, out);
        }
        if self.scale != 1.0 {
            out.iter_mut().for_each(|o| *o *= self.scale);
        }
    }

    /// Writes `DX(x)` into `out` (d×d).
    pub fn jacobian_into(&self, x: &[f64], out: &mut Matrix) {
        debug_assert_eq!(x.len(), self.dim);
        match &self.family {
            Family::Lorenz { sigma, rho, beta } => {
                out[(0, 0)] = -sigma;
                out[(0, 1)] = *sigma;
                out[(0, 2)] = 0.0;
                out[(1, 0)] = rho - x[2];
                out[(1, 1)] = -1.0;
                out[(1, 2)] = -x[0];
                out[(2, 0)] = x[1];
                out[(2, 1)] = x[0];
                out[(2, 2)] = -beta;
            }
            Family::Linear { a } => out.copy_from(a),
            Family::Rotation2d => {
                out[(0, 0)] = 0.0;
                out[(0, 1)] = -1.0;
                out[(1, 0)] = 1.0;
                out[(1, 1)] = 0.0;
            }
            Family::CubicProduct => {
                out[(0, 0)] = 1.0 - 3.0 * x[0] * x[0];
                out[(0, 1)] = 0.0;
                out[(1, 0)] = 0.0;
                out[(1, 1)] = -1.0;
            }
            Family::SaddleCycle {
                contraction,
                expansion,
                omega,
            } => {
                let (px, py, pz) = (x[0], x[1], x[2]);
                let s = 1.0 - px * px - py * py;
                let half = 0.5 * contraction;
                let b2 = expansion * expansion;
                let q = 1.0 + b2 * pz * pz;
                out[(0, 0)] = half * (s - 2.0 * px * px);
                out[(0, 1)] = -omega - contraction * px * py;
                out[(0, 2)] = 0.0;
                out[(1, 0)] = omega - contraction * px * py;
                out[(1, 1)] = half * (s - 2.0 * py * py);
                out[(1, 2)] = 0.0;
                out[(2, 0)] = -4.0 * px * s * q;
                out[(2, 1)] = -4.0 * py * s * q;
                out[(2, 2)] = expansion + s * s * 2.0 * b2 * pz;
            }
            Family::Polynomial(p) => {
                out.fill(0.0);
                p.jacobian_add(x, 1.0, out);
            }
        }
        if let Some(p) = &self.perturbation {
            p.jacobian_add(x, 1.0, out);
        }
        if self.scale != 1.0 {
            *out *= self.scale;
        }
    }

    pub fn rhs(&self, x: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim);
        self.rhs_into(x.as_slice(), out.as_mut_slice());
        out
    }

    pub fn jacobian(&self, x: &Vector) -> Matrix {
        let mut out = Matrix::zeros(self.dim, self.dim);
        self.jacobian_into(x.as_slice(), &mut out);
        out
    }

    /// Divergence (trace of the Jacobian) at `x`.
    pub fn divergence(&self, x: &Vector) -> f64 {
        self.jacobian(x).trace()
    }

    pub(crate) fn check_point(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    /// Sup of `|X| + |DX|` over a regular grid of the region.
    pub fn c1_size(&self, points_per_axis: usize) -> f64 {
        let n = points_per_axis.max(2);
        let d = self.dim;
        let total = n.pow(d as u32);
        let mut best: f64 = 0.0;
        let mut x = Vector::zeros(d);
        for idx in 0..total {
            let mut rem = idx;
            for k in 0..d {
                let c = rem % n;
                rem /= n;
                let (l, u) = (self.region.lower[k], self.region.upper[k]);
                x[k] = l + (u - l) * c as f64 / (n - 1) as f64;
            }
            let v = self.rhs(&x).norm() + self.jacobian(&x).norm();
            best = best.max(v);
        }
        best
    }
}

/// Exact Jacobian of `spec` at `x`, rejecting non-finite input.
pub fn eval_jacobian(spec: &VectorFieldSpec, x: &Vector) -> Result<Matrix> {
    spec.check_point(x)?;
    Ok(spec.jacobian(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lorenz() -> VectorFieldSpec {
        builtin("lorenz", &default_params("lorenz").unwrap()).unwrap()
    }

    #[test]
    fn lorenz_rhs_at_ones() {
        let f = lorenz().rhs(&Vector::from_vec(vec![1.0, 1.0, 1.0]));
        assert_relative_eq!(f[0], 0.0);
        assert_relative_eq!(f[1], 26.0);
        assert_relative_eq!(f[2], -5.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn linear_and_rotation_rhs() {
        let f = diagonal(&[-2.0, -1.0, 1.0]).unwrap();
        let v = f.rhs(&Vector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(v.as_slice(), &[-2.0, -2.0, 3.0]);
        let r = builtin("rotation2d", &Params::new()).unwrap();
        let v = r.rhs(&Vector::from_vec(vec![1.0, 0.0]));
        assert_eq!(v.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn jacobians_at_reference_points() {
        let j = eval_jacobian(&lorenz(), &Vector::zeros(3)).unwrap();
        let expected = Matrix::from_row_slice(
            3,
            3,
            &[-10.0, 10.0, 0.0, 28.0, -1.0, 0.0, 0.0, 0.0, -8.0 / 3.0],
        );
        assert_relative_eq!(j, expected, epsilon = 1e-15);
        let lin = diagonal(&[-2.0, -1.0, 1.0]).unwrap();
        let x = Vector::from_vec(vec![0.3, -7.0, 2.0]);
        assert_eq!(
            eval_jacobian(&lin, &x).unwrap(),
            Matrix::from_diagonal(&Vector::from_vec(vec![-2.0, -1.0, 1.0]))
        );
        let r = builtin("rotation2d", &Params::new()).unwrap();
        assert_eq!(
            r.jacobian(&Vector::from_vec(vec![5.0, 1.0])),
            Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
        );
    }

    #[test]
    fn non_finite_point_rejected() {
        let x = Vector::from_vec(vec![f64::NAN, 0.0, 0.0]);
        assert_eq!(eval_jacobian(&lorenz(), &x), Err(Error::NonFinite));
    }

    #[test]
    fn parameter_errors_name_the_parameter() {
        let mut p = default_params("lorenz").unwrap();
        p.remove("rho");
        match builtin("lorenz", &p) {
            Err(Error::MissingParameter { param, .. }) => assert_eq!(param, "rho"),
            other => panic!("unexpected {other:?}"),
        }
        p.insert("rho".into(), ParamValue::Scalar(28.0));
        p.insert("gamma".into(), ParamValue::Scalar(1.0));
        assert!(matches!(
            builtin("lorenz", &p),
            Err(Error::UnexpectedParameter { .. })
        ));
        assert!(matches!(
            builtin("henon", &Params::new()),
            Err(Error::UnknownField(_))
        ));
    }

    #[test]
    fn saddle_cycle_has_no_zero_on_the_axis() {
        let f = builtin("saddle-cycle", &default_params("saddle-cycle").unwrap()).unwrap();
        for k in -40..=40 {
            let z = k as f64 * 0.25;
            let v = f.rhs(&Vector::from_vec(vec![0.0, 0.0, z]));
            assert!(v[2] > 0.5, "z' vanishes near z = {z}");
        }
    }

    fn central_difference(spec: &VectorFieldSpec, x: &Vector) -> Matrix {
        let d = spec.dim();
        let mut j = Matrix::zeros(d, d);
        for k in 0..d {
            let h = 1e-6 * (1.0 + x[k].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let col = (spec.rhs(&xp) - spec.rhs(&xm)) / (2.0 * h);
            j.set_column(k, &col);
        }
        j
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let poly = PolynomialField::new(
            2,
            vec![
                vec![
                    Monomial { coeff: 1.5, powers: vec![2, 1] },
                    Monomial { coeff: -0.5, powers: vec![0, 3] },
                ],
                vec![Monomial { coeff: 2.0, powers: vec![1, 0] }],
            ],
        )
        .unwrap();
        let specs = vec![
            lorenz(),
            diagonal(&[-2.0, -1.0, 1.0]).unwrap(),
            builtin("rotation2d", &Params::new()).unwrap(),
            builtin("cubic1d-product", &Params::new()).unwrap(),
            builtin("saddle-cycle", &default_params("saddle-cycle").unwrap()).unwrap(),
            polynomial(poly, Region::cube(2, 1.0)).unwrap(),
            lorenz().rescaled(-0.5),
        ];
        for spec in specs {
            let region = spec.region().clone();
            for _ in 0..50 {
                let x = Vector::from_iterator(
                    spec.dim(),
                    (0..spec.dim()).map(|k| rng.random_range(region.lower[k]..region.upper[k])),
                );
                let exact = spec.jacobian(&x);
                let fd = central_difference(&spec, &x);
                let scale = exact.norm().max(1.0);
                assert!(
                    (exact - fd).norm() / scale <= 1e-5,
                    "{spec}: jacobian mismatch at {x}"
                );
            }
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let f = lorenz();
        let x = Vector::from_vec(vec![0.1, -2.3, 17.0]);
        assert_eq!(f.rhs(&x), f.rhs(&x));
        assert_eq!(f.jacobian(&x), f.jacobian(&x));
    }
}
