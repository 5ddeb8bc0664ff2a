//! Small dense linear-algebra helpers shared by the analysis modules.

use nalgebra::SVD;

use crate::field::{Matrix, Vector};

/// Largest singular value; 0 for an empty matrix.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0.0;
    }
    if m.ncols() == 1 {
        return m.column(0).norm();
    }
    SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Smallest singular value over the column space (the co-norm of a map
/// given on an orthonormal frame); `+∞` for an empty frame.
pub fn min_singular(m: &Matrix) -> f64 {
    if m.ncols() == 0 {
        return f64::INFINITY;
    }
    if m.ncols() == 1 {
        return m.column(0).norm();
    }
    SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Orthonormal basis of the column span (columns in Gram–Schmidt order).
pub fn orthonormalize(m: &Matrix) -> Matrix {
    if m.ncols() == 0 {
        return m.clone();
    }
    let (q, _) = crate::orbit::qr_positive(m);
    q.columns(0, m.ncols()).into_owned()
}

/// `v − ⟨v,u⟩u` for a unit vector `u`.
pub fn project_out(v: &Vector, u: &Vector) -> Vector {
    v - u * u.dot(v)
}

/// Projects every column of `m` onto `u^⊥`.
pub fn project_frame(m: &Matrix, u: &Vector) -> Matrix {
    let coeffs = u.transpose() * m;
    m - u * coeffs
}

/// Deterministic orthonormal basis (d×(d−1)) of the complement of unit `u`.
pub fn normal_basis(u: &Vector) -> Matrix {
    complement(&Matrix::from_columns(&[u.clone()]))
}

/// Deterministic orthonormal basis of the orthogonal complement of the span
/// of the orthonormal frame `f` (d×k, result d×(d−k)).
pub fn complement(f: &Matrix) -> Matrix {
    let d = f.nrows();
    let k = f.ncols();
    let mut cols: Vec<Vector> = (0..k).map(|j| f.column(j).into_owned()).collect();
    let mut out = Vec::with_capacity(d - k);
    // Visit coordinate axes least aligned with the frame first.
    let mut order: Vec<usize> = (0..d).collect();
    let weight = |i: usize| (0..k).map(|j| f[(i, j)] * f[(i, j)]).sum::<f64>();
    order.sort_by(|&a, &b| weight(a).total_cmp(&weight(b)).then(a.cmp(&b)));
    for i in order {
        if out.len() == d - k {
            break;
        }
        let mut v = Vector::zeros(d);
        v[i] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&v);
                v -= c * p;
            }
        }
        let n = v.norm();
        if n > 1e-8 {
            v /= n;
            cols.push(v.clone());
            out.push(v);
        }
    }
    if out.is_empty() {
        Matrix::zeros(d, 0)
    } else {
        Matrix::from_columns(&out)
    }
}

/// Sine of the largest principal angle between equal-dimensional subspaces
/// spanned by orthonormal frames `a` and `b`.
pub fn subspace_distance(a: &Matrix, b: &Matrix) -> f64 {
    if a.ncols() == 0 && b.ncols() == 0 {
        return 0.0;
    }
    if a.ncols() != b.ncols() {
        return 1.0;
    }
    let resid = a - b * (b.transpose() * a);
    spectral_norm(&resid).min(1.0)
}

/// Horizontal concatenation of two frames with the same row count.
pub fn hcat(a: &Matrix, b: &Matrix) -> Matrix {
    let mut m = Matrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_orthonormal() {
        let u = Vector::from_vec(vec![1.0, 2.0, -2.0]).normalize();
        let b = normal_basis(&u);
        assert_eq!(b.ncols(), 2);
        let g = b.transpose() * &b;
        assert!((g - Matrix::identity(2, 2)).norm() < 1e-14);
        assert!((b.transpose() * &u).norm() < 1e-14);
    }

    #[test]
    fn principal_angle_of_rotated_lines() {
        let a = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let th: f64 = 0.3;
        let b = Matrix::from_column_slice(2, 1, &[th.cos(), th.sin()]);
        assert!((subspace_distance(&a, &b) - th.sin()).abs() < 1e-14);
    }

    #[test]
    fn co_norm_of_frame() {
        let m = Matrix::from_row_slice(3, 2, &[3.0, 0.0, 0.0, 0.5, 0.0, 0.0]);
        assert!((min_singular(&m) - 0.5).abs() < 1e-14);
        assert!((spectral_norm(&m) - 3.0).abs() < 1e-14);
    }
}
