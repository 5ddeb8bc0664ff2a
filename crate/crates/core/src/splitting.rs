//! Candidate invariant splittings of the normal bundle and the quantitative
//! tests of domination, contraction, expansion, cones and averaging.
//!
//! All growth rates are read from cocycles given as per-interval matrices.
//! The Poincaré cocycle is carried in orthonormal coordinates of each normal
//! space (`(d−1)×(d−1)` matrices), which keeps every product invertible and
//! lets frames be propagated with one QR step per interval.

use nalgebra::SVD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Matrix, Vector, VectorFieldSpec};
use crate::linalg::{complement, normal_basis, orthonormalize, subspace_distance};
use crate::ode::{split_tangent, tangent_initial, Integrator, IntegratorOptions, TangentSystem};
use crate::orbit::{qr_positive, OrbitSegment};
use crate::poincare::NEAR_SINGULAR;

/// Default length of the forward window used for finite-time splittings.
pub const DEFAULT_WINDOW: f64 = 5.0;

/// Smallest accepted log singular-value gap rate at the split.
pub const GAP_THRESHOLD: f64 = 1e-3;

/// A linear cocycle over a sequence of line elements, written in orthonormal
/// coordinates of the normal spaces `L_k^⊥`.
#[derive(Clone, Debug)]
pub struct ProjectedCocycle {
    bases: Vec<Matrix>,
    steps: Vec<Matrix>,
    inverses: Vec<Matrix>,
}

impl ProjectedCocycle {
    /// `steps[k]` maps the tangent space at sample `k` to sample `k+1`, and
    /// `directions[k]` spans the line at sample `k`.
    pub fn along_lines(steps: &[Matrix], directions: &[Vector]) -> Result<Self> {
        if directions.len() != steps.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: steps.len() + 1,
                got: directions.len(),
            });
        }
        let bases: Vec<Matrix> = directions.iter().map(normal_basis).collect();
        let mut coords = Vec::with_capacity(steps.len());
        let mut inverses = Vec::with_capacity(steps.len());
        for (k, a) in steps.iter().enumerate() {
            let c = bases[k + 1].transpose() * a * &bases[k];
            let inv = c.clone().try_inverse().ok_or_else(|| {
                Error::Precondition("projected cocycle is not invertible".into())
            })?;
            coords.push(c);
            inverses.push(inv);
        }
        Ok(ProjectedCocycle {
            bases,
            steps: coords,
            inverses,
        })
    }

    /// The linear Poincaré flow along a regular orbit.
    pub fn along_orbit(orbit: &OrbitSegment) -> Result<Self> {
        let mut dirs = Vec::with_capacity(orbit.len());
        for k in 0..orbit.len() {
            let v = orbit.velocity(k);
            let s = v.norm();
            if s <= NEAR_SINGULAR * 1e3 {
                return Err(Error::DegenerateNormalBundle { speed: s });
            }
            dirs.push(v / s);
        }
        let steps: Vec<Matrix> = (0..orbit.len() - 1).map(|k| orbit.step(k).clone()).collect();
        Self::along_lines(&steps, &dirs)
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn fiber_dim(&self) -> usize {
        self.bases[0].ncols()
    }

    /// Orthonormal basis (ambient coordinates) of the normal space at `k`.
    pub fn basis(&self, k: usize) -> &Matrix {
        &self.bases[k]
    }

    pub fn step(&self, k: usize) -> &Matrix {
        &self.steps[k]
    }

    pub(crate) fn steps(&self) -> &[Matrix] {
        &self.steps
    }

    pub(crate) fn inverses(&self) -> &[Matrix] {
        &self.inverses
    }

    /// Ambient frame → normal coordinates at `k`.
    pub fn to_coords(&self, k: usize, frame: &Matrix) -> Matrix {
        self.bases[k].transpose() * frame
    }

    pub fn to_ambient(&self, k: usize, coords: &Matrix) -> Matrix {
        &self.bases[k] * coords
    }
}

/// Log of the largest and smallest singular value of `F ↦ C_{k+s−1}⋯C_k F`
/// for `s = 1..=s_max`, where `F` is an orthonormal frame.
pub(crate) fn frame_growth(steps: &[Matrix], k: usize, frame: &Matrix, s_max: usize) -> Vec<(f64, f64)> {
    let m = frame.ncols();
    let mut out = Vec::with_capacity(s_max);
    if m == 1 {
        let mut f: Vector = frame.column(0).into_owned();
        let mut acc = 0.0;
        for step in &steps[k..k + s_max] {
            let g = step * &f;
            let n = g.norm();
            acc += n.ln();
            f = g / n;
            out.push((acc, acc));
        }
        return out;
    }
    let mut f = frame.clone();
    let mut racc = Matrix::identity(m, m);
    let mut scale = 0.0;
    for step in &steps[k..k + s_max] {
        let (q, r) = qr_positive(&(step * &f));
        f = q.columns(0, m).into_owned();
        racc = r.rows(0, m).into_owned() * racc;
        let n = racc.norm();
        racc /= n;
        scale += n.ln();
        let sv = SVD::new(racc.clone(), false, false).singular_values;
        let hi = sv.iter().copied().fold(0.0, f64::max);
        let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
        out.push((scale + hi.ln(), scale + lo.ln()));
    }
    out
}

/// The cocycle restricted to the bundle through `frame` at sample `end`,
/// obtained by sweeping the frame backward to sample 0: entry `j` is the
/// matrix of `C_j` between the swept frames at `j` and `j + 1`.
///
/// Backward sweeps converge onto the most contracted bundle, so these blocks
/// keep full relative accuracy where pushing the bundle forward would sink
/// into the rounding of the dominant directions.
pub(crate) fn swept_blocks(inverses: &[Matrix], frame: &Matrix, end: usize) -> Vec<Matrix> {
    let m = frame.ncols();
    let mut blocks = vec![Matrix::zeros(m, m); end];
    let mut q = frame.clone();
    for j in (0..end).rev() {
        let (q1, r) = qr_positive(&(&inverses[j] * &q));
        q = q1.columns(0, m).into_owned();
        let r = r.rows(0, m).into_owned();
        blocks[j] = r.try_inverse().unwrap_or_else(|| Matrix::zeros(m, m));
    }
    blocks
}

/// [`frame_growth`] for a restricted cocycle given by its blocks.
pub(crate) fn block_growth(blocks: &[Matrix], k: usize, s_max: usize) -> Vec<(f64, f64)> {
    let m = blocks[k].nrows();
    let mut out = Vec::with_capacity(s_max);
    let mut acc = Matrix::identity(m, m);
    let mut scale = 0.0;
    for b in &blocks[k..k + s_max] {
        acc = b * acc;
        let n = acc.norm();
        acc /= n;
        scale += n.ln();
        if m == 1 {
            out.push((scale, scale));
            continue;
        }
        let sv = SVD::new(acc.clone(), false, false).singular_values;
        let hi = sv.iter().copied().fold(0.0, f64::max);
        let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
        out.push((scale + hi.ln(), scale + lo.ln()));
    }
    out
}

/// Fixed generic orthonormal frame with `m` columns in dimension `n`.
fn generic_frame(n: usize, m: usize) -> Matrix {
    let g = Matrix::from_fn(n, m, |a, b| {
        (1.0 + a as f64 * 1.2345 + b as f64 * 0.6789 + (a * b) as f64 * 0.4321).cos()
            + if a == b { 2.0 } else { 0.0 }
    });
    orthonormalize(&g)
}

/// The `i` most-contracted right singular vectors of `C_{k+w−1}⋯C_k`, their
/// orthogonal complement, and the log-gap rate per unit step.
///
/// The contracted subspace is the dominant image of the inverse product; it
/// is found by alternating sweeps with `M^{-1}` and `M^{-T}`, which converge
/// geometrically at the square of the singular-value ratio.
pub(crate) fn contracted_subspace(
    steps: &[Matrix],
    inverses: &[Matrix],
    k: usize,
    w: usize,
    i: usize,
    warm: Option<&Matrix>,
) -> (Matrix, Matrix, f64, Matrix) {
    let n = steps[k].nrows();
    let sweep_back = |z: &Matrix| {
        let mut z = z.clone();
        for j in (k..k + w).rev() {
            z = orthonormalize(&(&inverses[j] * &z));
        }
        z
    };
    let sweep_fwd_adjoint = |z: &Matrix| {
        let mut z = z.clone();
        for j in k..k + w {
            z = orthonormalize(&(inverses[j].transpose() * &z));
        }
        z
    };
    let start = warm.cloned().unwrap_or_else(|| generic_frame(n, i));
    let mut v = sweep_back(&start);
    let mut u = start;
    for _ in 0..6 {
        u = sweep_fwd_adjoint(&v);
        let v_new = sweep_back(&u);
        let change = subspace_distance(&v, &v_new);
        v = v_new;
        if change < 1e-13 {
            break;
        }
    }
    let rest = complement_within(&v, n);
    // Propagate [rest | v]: the dominant block first keeps the forward QR
    // stable, and the contracted block is then measured on the quotient,
    // which pushing `v` itself forward would lose to rounding once the
    // singular-value ratio over the window passes 1/ε.
    let m = n - i;
    let mut f = crate::linalg::hcat(&rest, &v);
    let mut r11 = Matrix::identity(m, m);
    let mut r22 = Matrix::identity(i, i);
    let (mut s11, mut s22) = (0.0, 0.0);
    for step in &steps[k..k + w] {
        let (q, r) = qr_positive(&(step * &f));
        f = q;
        r11 = r.view((0, 0), (m, m)) * r11;
        r22 = r.view((m, m), (i, i)) * r22;
        let (a, b) = (r11.norm(), r22.norm());
        r11 /= a;
        r22 /= b;
        s11 += a.ln();
        s22 += b.ln();
    }
    let low_rest = s11 + crate::linalg::min_singular(&r11).ln();
    let top_contracted = s22 + crate::linalg::spectral_norm(&r22).ln();
    let gap = (low_rest - top_contracted) / w as f64;
    (v, rest, gap, u)
}

fn complement_within(v: &Matrix, n: usize) -> Matrix {
    if v.ncols() == n {
        Matrix::zeros(n, 0)
    } else {
        complement(v)
    }
}

/// Orthonormal frames `𝒩₁ ⊕ 𝒩₂` of the normal bundle along an orbit.
#[derive(Clone, Debug)]
pub struct SplittingSample {
    orbit: OrbitSegment,
    cocycle: ProjectedCocycle,
    index: usize,
    frame_indices: Vec<usize>,
    n1: Vec<Matrix>,
    n2: Vec<Matrix>,
    residuals: Vec<f64>,
    window: f64,
    min_gap_rate: f64,
    /// `Ψ` restricted to `𝒩₁`, swept backward from the last framed sample;
    /// absent for frames given explicitly.
    n1_blocks: Option<Vec<Matrix>>,
    sweep_mismatch: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplittingOptions {
    /// Forward window length in time units.
    pub window: f64,
    /// Frames are computed at every `stride`-th sample.
    pub stride: usize,
}

impl Default for SplittingOptions {
    fn default() -> Self {
        SplittingOptions {
            window: DEFAULT_WINDOW,
            stride: 1,
        }
    }
}

/// Frames from the forward-window Poincaré cocycle: `𝒩₁(x_k)` is spanned by
/// the `i` most-contracted right singular vectors over `[t_k, t_k + W]` and
/// `𝒩₂` is its orthogonal complement in `X(x_k)^⊥`.
///
/// The orbit is continued by `W` past its end so that the last samples get a
/// full window; the returned sample keeps the continued record.
pub fn finite_time_splitting(
    orbit: &OrbitSegment,
    spec: &VectorFieldSpec,
    index: usize,
    window: f64,
) -> Result<SplittingSample> {
    finite_time_splitting_with(
        orbit,
        spec,
        index,
        &SplittingOptions {
            window,
            stride: 1,
        },
    )
}

pub fn finite_time_splitting_with(
    orbit: &OrbitSegment,
    spec: &VectorFieldSpec,
    index: usize,
    opts: &SplittingOptions,
) -> Result<SplittingSample> {
    let d = orbit.dim();
    if d < 3 || index == 0 || index > d - 2 {
        return Err(Error::InvalidIndex { index, dim: d });
    }
    if opts.window < 5.0 * orbit.dt() * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter {
            param: "window".into(),
            reason: "must be at least five sample intervals".into(),
        });
    }
    let base_len = orbit.len();
    let ext = orbit.extended(spec, opts.window)?;
    let cocycle = ProjectedCocycle::along_orbit(&ext)?;
    let w = (opts.window / orbit.dt()).round() as usize;
    let stride = opts.stride.max(1);
    let frame_indices: Vec<usize> = (0..base_len).step_by(stride).collect();
    let results: Vec<(Matrix, Matrix, f64)> = frame_indices
        .par_iter()
        .map(|&k| {
            let (v, rest, gap, _) =
                contracted_subspace(cocycle.steps(), cocycle.inverses(), k, w, index, None);
            (v, rest, gap)
        })
        .collect();
    let mut n1 = Vec::with_capacity(results.len());
    let mut n2 = Vec::with_capacity(results.len());
    let mut min_gap = f64::INFINITY;
    for (v, rest, gap) in results {
        min_gap = min_gap.min(gap / orbit.dt());
        n1.push(v);
        n2.push(rest);
    }
    if min_gap < GAP_THRESHOLD {
        return Err(Error::NoGap {
            index,
            gap: min_gap,
        });
    }
    let residuals = invariance_residuals(&cocycle, &frame_indices, &n1);
    let end = *frame_indices.last().unwrap();
    let blocks = swept_blocks(cocycle.inverses(), n1.last().unwrap(), end);
    let sweep_mismatch = sweep_mismatch(&cocycle, &frame_indices, &n1);
    Ok(SplittingSample {
        orbit: ext,
        cocycle,
        index,
        frame_indices,
        n1,
        n2,
        residuals,
        window: opts.window,
        min_gap_rate: min_gap,
        n1_blocks: Some(blocks),
        sweep_mismatch,
    })
}

/// Largest distance between each windowed `𝒩₁` frame and the backward image
/// of the next one.
fn sweep_mismatch(cocycle: &ProjectedCocycle, idx: &[usize], n1: &[Matrix]) -> f64 {
    idx.windows(2)
        .zip(n1.windows(2))
        .map(|(ks, fs)| {
            let mut f = fs[1].clone();
            for j in (ks[0]..ks[1]).rev() {
                f = orthonormalize(&(&cocycle.inverses()[j] * f));
            }
            subspace_distance(&f, &fs[0])
        })
        .fold(0.0, f64::max)
}

fn invariance_residuals(cocycle: &ProjectedCocycle, idx: &[usize], n1: &[Matrix]) -> Vec<f64> {
    idx.windows(2)
        .zip(n1.windows(2))
        .map(|(ks, fs)| {
            let mut f = fs[0].clone();
            for j in ks[0]..ks[1] {
                f = orthonormalize(&(cocycle.step(j) * f));
            }
            subspace_distance(&f, &fs[1])
        })
        .collect()
}

impl SplittingSample {
    /// A splitting given explicitly by ambient frames, one pair per orbit
    /// sample. Frames must be orthonormal, mutually orthogonal and orthogonal
    /// to the field.
    pub fn from_frames(orbit: &OrbitSegment, n1: &[Matrix], n2: &[Matrix]) -> Result<Self> {
        let d = orbit.dim();
        if n1.len() != orbit.len() || n2.len() != orbit.len() {
            return Err(Error::DimensionMismatch {
                expected: orbit.len(),
                got: n1.len().min(n2.len()),
            });
        }
        let index = n1[0].ncols();
        let cocycle = ProjectedCocycle::along_orbit(orbit)?;
        let mut c1 = Vec::with_capacity(n1.len());
        let mut c2 = Vec::with_capacity(n2.len());
        for k in 0..orbit.len() {
            let (a, b) = (&n1[k], &n2[k]);
            if a.ncols() != index || a.ncols() + b.ncols() != d - 1 {
                return Err(Error::Precondition(
                    "frame dimensions must add up to d − 1".into(),
                ));
            }
            let u = orbit.velocity(k).normalize();
            let full = crate::linalg::hcat(a, b);
            let gram = full.transpose() * &full;
            let orth_err = (gram - Matrix::identity(d - 1, d - 1)).amax();
            let field_err = (u.transpose() * &full).amax();
            if orth_err > 1e-8 || field_err > 1e-8 {
                return Err(Error::Precondition(
                    "frames must be orthonormal and orthogonal to the field".into(),
                ));
            }
            c1.push(cocycle.to_coords(k, a));
            c2.push(cocycle.to_coords(k, b));
        }
        let idx: Vec<usize> = (0..orbit.len()).collect();
        let residuals = invariance_residuals(&cocycle, &idx, &c1);
        Ok(SplittingSample {
            orbit: orbit.clone(),
            cocycle,
            index,
            frame_indices: idx,
            n1: c1,
            n2: c2,
            residuals,
            window: 0.0,
            min_gap_rate: f64::NAN,
            n1_blocks: None,
            sweep_mismatch: f64::NAN,
        })
    }

    /// The same frames with the roles of `𝒩₁` and `𝒩₂` exchanged.
    pub fn swapped(&self) -> Self {
        let mut s = self.clone();
        std::mem::swap(&mut s.n1, &mut s.n2);
        s.n1_blocks = None;
        s.sweep_mismatch = f64::NAN;
        s.index = s.n1[0].ncols();
        s.residuals = invariance_residuals(&s.cocycle, &s.frame_indices, &s.n1);
        s
    }

    pub fn orbit(&self) -> &OrbitSegment {
        &self.orbit
    }

    pub fn cocycle(&self) -> &ProjectedCocycle {
        &self.cocycle
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// Smallest log singular-value gap rate seen (NaN for explicit frames).
    pub fn min_gap_rate(&self) -> f64 {
        self.min_gap_rate
    }

    /// Orbit sample indices that carry frames.
    pub fn frame_indices(&self) -> &[usize] {
        &self.frame_indices
    }

    /// `𝒩₁` at the `j`-th framed sample, ambient coordinates.
    pub fn n1(&self, j: usize) -> Matrix {
        self.cocycle.to_ambient(self.frame_indices[j], &self.n1[j])
    }

    pub fn n2(&self, j: usize) -> Matrix {
        self.cocycle.to_ambient(self.frame_indices[j], &self.n2[j])
    }

    /// Largest distance between a windowed `𝒩₁` frame and the backward
    /// image of the next one (NaN for explicit frames).
    pub fn sweep_mismatch(&self) -> f64 {
        self.sweep_mismatch
    }

    /// Last sample index from which growth over `s` steps can be measured.
    pub(crate) fn growth_end(&self) -> usize {
        match &self.n1_blocks {
            Some(b) => b.len(),
            None => self.cocycle.len() - 1,
        }
    }

    #[cfg(test)]
    pub(crate) fn n1_coords(&self, j: usize) -> &Matrix {
        &self.n1[j]
    }

    /// Log largest and smallest singular values of `Ψ` on `𝒩₁` at the `j`-th
    /// framed sample over `1..=s_max` steps.
    pub(crate) fn n1_growth(&self, j: usize, s_max: usize) -> Vec<(f64, f64)> {
        let k = self.frame_indices[j];
        match &self.n1_blocks {
            Some(b) => block_growth(b, k, s_max),
            None => frame_growth(self.cocycle.steps(), k, &self.n1[j], s_max),
        }
    }

    pub(crate) fn n2_growth(&self, j: usize, s_max: usize) -> Vec<(f64, f64)> {
        frame_growth(self.cocycle.steps(), self.frame_indices[j], &self.n2[j], s_max)
    }

    /// Principal-angle distance between `Ψ(𝒩₁(x_k))` and `𝒩₁` at the next
    /// framed sample.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Largest residual over framed samples whose index lies in `range`.
    pub fn max_residual_between(&self, from: usize, to: usize) -> f64 {
        self.frame_indices
            .windows(2)
            .zip(&self.residuals)
            .filter(|(k, _)| k[0] >= from && k[1] <= to)
            .map(|(_, r)| *r)
            .fold(0.0, f64::max)
    }
}

pub(crate) fn step_range(dt: f64, t_min: f64, t_max: f64) -> (usize, usize) {
    let lo = ((t_min / dt) - 1e-9).ceil().max(1.0) as usize;
    let hi = ((t_max / dt) + 1e-9).floor() as usize;
    (lo, hi)
}

/// Maximum of a log-ratio over the tested `(x, t)` pairs.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct DominationCertificate {
    pub eta: f64,
    #[serde(rename = "T")]
    pub t_min: f64,
    pub t_max: f64,
    pub index: usize,
    /// `max e^{ηt}·|Ψ_t|𝒩₁| / m(Ψ_t|𝒩₂)` over tested pairs.
    pub worst_ratio: f64,
    pub log_worst_ratio: f64,
    pub samples_tested: usize,
    pub pass: bool,
    pub vacuous: bool,
    pub worst_sample: Option<usize>,
    pub worst_time: Option<f64>,
    /// Per tested time, the largest log-ratio over samples.
    #[serde(skip)]
    pub per_t: Vec<(f64, f64)>,
}

pub(crate) fn reduce_profiles(
    per_start: Vec<(usize, Vec<f64>)>,
    lo: usize,
    dt: f64,
) -> (f64, usize, Option<(usize, f64)>, Vec<(f64, f64)>) {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    let mut at = None;
    let mut per_t: Vec<f64> = Vec::new();
    for (k, prof) in per_start {
        for (off, v) in prof.iter().enumerate() {
            if v.is_nan() {
                continue;
            }
            count += 1;
            if off >= per_t.len() {
                per_t.resize(off + 1, f64::NEG_INFINITY);
            }
            per_t[off] = per_t[off].max(*v);
            if *v > worst {
                worst = *v;
                at = Some((k, (lo + off) as f64 * dt));
            }
        }
    }
    let per_t = per_t
        .into_iter()
        .enumerate()
        .map(|(o, v)| ((lo + o) as f64 * dt, v))
        .collect();
    (worst, count, at, per_t)
}

/// Tests `e^{ηt}·|Ψ_t|𝒩₁(x)|·|Ψ_{−t}|Ψ_t𝒩₂(x)| < 1` for every framed sample
/// and `t ∈ {T, T+dt, …, t_max}` that fits in the record. The backward factor
/// is the reciprocal of the co-norm of `Ψ_t` on `𝒩₂(x)`.
pub fn domination_test(
    splitting: &SplittingSample,
    eta: f64,
    t_min: f64,
    t_max: f64,
) -> DominationCertificate {
    let dt = splitting.orbit.dt();
    let (lo, hi) = step_range(dt, t_min, t_max);
    let last = splitting.growth_end();
    let per_start: Vec<(usize, Vec<f64>)> = (0..splitting.frame_indices.len())
        .into_par_iter()
        .filter_map(|j| {
            let k = splitting.frame_indices[j];
            let s_max = hi.min(last.saturating_sub(k));
            if s_max < lo || hi < lo {
                return None;
            }
            let g1 = splitting.n1_growth(j, s_max);
            let g2 = splitting.n2_growth(j, s_max);
            let prof = (lo..=s_max)
                .map(|s| eta * s as f64 * dt + g1[s - 1].0 - g2[s - 1].1)
                .collect();
            Some((k, prof))
        })
        .collect();
    let (worst, count, at, per_t) = reduce_profiles(per_start, lo, dt);
    let vacuous = count == 0;
    DominationCertificate {
        eta,
        t_min,
        t_max,
        index: splitting.index,
        worst_ratio: if vacuous { 0.0 } else { worst.exp() },
        log_worst_ratio: if vacuous { f64::NEG_INFINITY } else { worst },
        samples_tested: count,
        pass: vacuous || worst < 0.0,
        vacuous,
        worst_sample: at.map(|a| a.0),
        worst_time: at.map(|a| a.1),
        per_t,
    }
}

/// Which bundle of a splitting a rate test applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bundle {
    N1,
    N2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateKind {
    Contraction,
    Expansion,
    RescaledContraction,
    SectionalExpansion,
    TangentContraction,
}

/// Outcome of a uniform rate inequality over sampled pairs.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct RateCertificate {
    pub kind: RateKind,
    pub eta: f64,
    #[serde(rename = "T")]
    pub t_min: f64,
    pub t_max: f64,
    /// Largest `log(lhs/rhs)`; the inequality holds strictly when negative.
    pub worst_log_margin: f64,
    pub pairs_tested: usize,
    pub pass: bool,
    pub vacuous: bool,
    pub worst_sample: Option<usize>,
    pub worst_time: Option<f64>,
}

impl RateCertificate {
    pub(crate) fn from_profiles(
        kind: RateKind,
        eta: f64,
        t_min: f64,
        t_max: f64,
        per_start: Vec<(usize, Vec<f64>)>,
        lo: usize,
        dt: f64,
    ) -> Self {
        let (worst, count, at, _) = reduce_profiles(per_start, lo, dt);
        let vacuous = count == 0;
        RateCertificate {
            kind,
            eta,
            t_min,
            t_max,
            worst_log_margin: if vacuous { f64::NEG_INFINITY } else { worst },
            pairs_tested: count,
            pass: vacuous || worst < 0.0,
            vacuous,
            worst_sample: at.map(|a| a.0),
            worst_time: at.map(|a| a.1),
        }
    }
}

/// `|Ψ_t|𝒩ˢ(x)| < e^{−ηt}` (for [`Bundle::N1`] with `expand = false`) or
/// `m(Ψ_t|𝒩ᵘ(x)) > e^{ηt}` (`expand = true`) over pairs `(x_k, φ_t x_k)`
/// with both ends outside the mask and `t ∈ [T, t_max]`.
///
/// `mask[k]` is true when sample `k` lies inside the excluded neighborhood;
/// it must cover the whole (possibly continued) orbit record.
pub fn uniform_contraction_test(
    splitting: &SplittingSample,
    bundle: Bundle,
    expand: bool,
    eta: f64,
    t_min: f64,
    t_max: f64,
    mask: &[bool],
) -> RateCertificate {
    let dt = splitting.orbit.dt();
    let (lo, hi) = step_range(dt, t_min, t_max);
    let last = splitting.growth_end();
    let masked = |k: usize| mask.get(k).copied().unwrap_or(false);
    let per_start: Vec<(usize, Vec<f64>)> = (0..splitting.frame_indices.len())
        .into_par_iter()
        .filter_map(|j| {
            let k = splitting.frame_indices[j];
            let s_max = hi.min(last.saturating_sub(k));
            if s_max < lo || hi < lo || masked(k) {
                return None;
            }
            let g = match bundle {
                Bundle::N1 => splitting.n1_growth(j, s_max),
                Bundle::N2 => splitting.n2_growth(j, s_max),
            };
            let prof = (lo..=s_max)
                .map(|s| {
                    if masked(k + s) {
                        f64::NAN
                    } else if expand {
                        eta * s as f64 * dt - g[s - 1].1
                    } else {
                        eta * s as f64 * dt + g[s - 1].0
                    }
                })
                .collect();
            Some((k, prof))
        })
        .collect();
    let kind = if expand {
        RateKind::Expansion
    } else {
        RateKind::Contraction
    };
    RateCertificate::from_profiles(kind, eta, t_min, t_max, per_start, lo, dt)
}

/// `|Ψ_t|𝒩₁(x)| ≤ e^{−ηt}·|X(φ_t x)|/|X(x)|` for framed samples and
/// `t ∈ [T, t_max]`.
pub fn rescaled_contraction_test(
    splitting: &SplittingSample,
    eta: f64,
    t_min: f64,
    t_max: f64,
) -> RateCertificate {
    let dt = splitting.orbit.dt();
    let (lo, hi) = step_range(dt, t_min, t_max);
    let last = splitting.growth_end();
    let orbit = &splitting.orbit;
    let per_start: Vec<(usize, Vec<f64>)> = (0..splitting.frame_indices.len())
        .into_par_iter()
        .filter_map(|j| {
            let k = splitting.frame_indices[j];
            let s_max = hi.min(last.saturating_sub(k));
            if s_max < lo || hi < lo {
                return None;
            }
            let g = splitting.n1_growth(j, s_max);
            let base = orbit.velocity(k).norm().ln();
            let prof = (lo..=s_max)
                .map(|s| {
                    let speed = orbit.velocity(k + s).norm().ln() - base;
                    eta * s as f64 * dt + g[s - 1].0 - speed
                })
                .collect();
            Some((k, prof))
        })
        .collect();
    RateCertificate::from_profiles(
        RateKind::RescaledContraction,
        eta,
        t_min,
        t_max,
        per_start,
        lo,
        dt,
    )
}

/// Tangent frames `E ⊕ F` along an orbit, one pair per sample.
#[derive(Clone, Debug)]
pub struct TangentSplitting {
    pub e: Vec<Matrix>,
    pub f: Vec<Matrix>,
}

/// Checks `Dφ_t(𝒞^F_α(x)) ⊂ 𝒞^F_{λ²α}(φ_t x)` for `t ∈ [T, 2T]` on probe
/// vectors and returns whether it holds with `λ < 1`, together with the
/// smallest `λ` that covers every probe. Cones are measured with the
/// (possibly oblique) decomposition along `E ⊕ F` at each end.
pub fn cone_invariance_test(
    orbit: &OrbitSegment,
    splitting: &TangentSplitting,
    alpha: f64,
    t_min: f64,
    seed: u64,
) -> Result<(bool, f64)> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter {
            param: "alpha".into(),
            reason: "must be positive".into(),
        });
    }
    let dt = orbit.dt();
    let (lo, hi) = step_range(dt, t_min, 2.0 * t_min);
    let last = orbit.len() - 1;
    let worst: Vec<f64> = (0..orbit.len())
        .into_par_iter()
        .map(|k| {
            let s_max = hi.min(last - k);
            if s_max < lo {
                return f64::NEG_INFINITY;
            }
            let (e, f) = (&splitting.e[k], &splitting.f[k]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9));
            let mut probes: Vec<Vector> = Vec::new();
            for a in 0..f.ncols() {
                probes.push(f.column(a).into_owned());
                for b in 0..e.ncols() {
                    probes.push(f.column(a) + e.column(b) * alpha);
                }
            }
            while probes.len() < 32 + f.ncols() * (1 + e.ncols()) {
                let cf = Vector::from_fn(f.ncols(), |_, _| rng.random_range(-1.0..1.0));
                let ce = Vector::from_fn(e.ncols(), |_, _| rng.random_range(-1.0..1.0));
                let vf = f * cf;
                let ve = e * ce;
                let zeta: f64 = rng.random_range(0.0..=1.0);
                let (nf, ne) = (vf.norm(), ve.norm());
                if nf == 0.0 {
                    continue;
                }
                let ve = if ne > 0.0 { ve * (zeta * alpha * nf / ne) } else { ve };
                probes.push(vf + ve);
            }
            let mut m = Matrix::identity(orbit.dim(), orbit.dim());
            let mut out = f64::NEG_INFINITY;
            for s in 1..=s_max {
                m = orbit.step(k + s - 1) * m;
                if s < lo {
                    continue;
                }
                let basis = crate::linalg::hcat(&splitting.e[k + s], &splitting.f[k + s]);
                let lu = basis.clone().lu();
                for p in &probes {
                    let w = &m * p;
                    let c = match lu.solve(&w) {
                        Some(c) => c,
                        None => return f64::INFINITY,
                    };
                    let ne = (&splitting.e[k + s] * c.rows(0, e.ncols())).norm();
                    let nf = (&splitting.f[k + s] * c.rows(e.ncols(), f.ncols())).norm();
                    let ratio = if nf == 0.0 { f64::INFINITY } else { ne / nf };
                    out = out.max(ratio / alpha);
                }
            }
            out
        })
        .collect();
    let lambda_sq = worst.into_iter().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let lambda = lambda_sq.sqrt();
    Ok((lambda < 1.0, lambda))
}

/// 2-plane volume growth `√det(MᵀM)` of `Dφ_t` on planes inside `F`:
/// every coordinate plane of the frame and 16 random planes per sample,
/// required to exceed `e^{ηt}` for `t ∈ [T, t_max]`.
pub fn sectional_expansion_test(
    orbit: &OrbitSegment,
    frames: &[Matrix],
    eta: f64,
    t_min: f64,
    t_max: f64,
    seed: u64,
) -> Result<RateCertificate> {
    if frames.iter().any(|f| f.ncols() < 2) {
        return Err(Error::Precondition(
            "sectional expansion needs frames of dimension at least 2".into(),
        ));
    }
    let dt = orbit.dt();
    let (lo, hi) = step_range(dt, t_min, t_max);
    let last = orbit.len() - 1;
    let steps: Vec<Matrix> = (0..last).map(|k| orbit.step(k).clone()).collect();
    let per_start: Vec<(usize, Vec<f64>)> = (0..frames.len().min(orbit.len()))
        .into_par_iter()
        .filter_map(|k| {
            let s_max = hi.min(last - k);
            if s_max < lo || hi < lo {
                return None;
            }
            let f = &frames[k];
            let mut planes: Vec<Matrix> = Vec::new();
            for a in 0..f.ncols() {
                for b in a + 1..f.ncols() {
                    planes.push(Matrix::from_columns(&[f.column(a).into_owned(), f.column(b).into_owned()]));
                }
            }
            if f.ncols() > 2 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x51_7CC1));
                for _ in 0..16 {
                    let c = Matrix::from_fn(f.ncols(), 2, |_, _| rng.random_range(-1.0..1.0));
                    planes.push(orthonormalize(&(f * c)));
                }
            }
            let mut prof = vec![f64::NEG_INFINITY; s_max + 1 - lo];
            for p in &planes {
                let vol = volume_growth(&steps, k, p, s_max);
                for s in lo..=s_max {
                    prof[s - lo] = prof[s - lo].max(eta * s as f64 * dt - vol[s - 1]);
                }
            }
            Some((k, prof))
        })
        .collect();
    Ok(RateCertificate::from_profiles(
        RateKind::SectionalExpansion,
        eta,
        t_min,
        t_max,
        per_start,
        lo,
        dt,
    ))
}

/// Log volume growth of the full frame under `Dφ`, for `s = 1..=s_max`.
pub(crate) fn volume_growth(steps: &[Matrix], k: usize, frame: &Matrix, s_max: usize) -> Vec<f64> {
    let m = frame.ncols();
    let mut f = orthonormalize(frame);
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(s_max);
    for step in &steps[k..k + s_max] {
        let (q, r) = qr_positive(&(step * &f));
        f = q.columns(0, m).into_owned();
        acc += (0..m).map(|i| r[(i, i)].ln()).sum::<f64>();
        out.push(acc);
    }
    out
}

/// Full-frame Gram-determinant growth `≥ e^{ηt}` (the reference for the
/// sectional test on 2-dimensional frames).
pub fn volume_expansion_test(
    orbit: &OrbitSegment,
    frames: &[Matrix],
    eta: f64,
    t_min: f64,
    t_max: f64,
) -> RateCertificate {
    let dt = orbit.dt();
    let (lo, hi) = step_range(dt, t_min, t_max);
    let last = orbit.len() - 1;
    let steps: Vec<Matrix> = (0..last).map(|k| orbit.step(k).clone()).collect();
    let per_start: Vec<(usize, Vec<f64>)> = (0..frames.len().min(orbit.len()))
        .filter_map(|k| {
            let s_max = hi.min(last - k);
            if s_max < lo || hi < lo {
                return None;
            }
            let vol = volume_growth(&steps, k, &frames[k], s_max);
            Some((k, (lo..=s_max).map(|s| eta * s as f64 * dt - vol[s - 1]).collect()))
        })
        .collect();
    RateCertificate::from_profiles(
        RateKind::SectionalExpansion,
        eta,
        t_min,
        t_max,
        per_start,
        lo,
        dt,
    )
}

/// `|Dφ_t|_E(x)| < e^{−ηt}` for an invariant tangent frame field `E`.
///
/// Growth is measured on the bundle swept backward from the last frame,
/// which stays accurate far below the rounding level of `|Dφ_t|`.
pub fn tangent_contraction_test(
    orbit: &OrbitSegment,
    frames: &[Matrix],
    eta: f64,
    t_min: f64,
    t_max: f64,
) -> RateCertificate {
    let dt = orbit.dt();
    let (lo, hi) = step_range(dt, t_min, t_max);
    let end = frames.len().min(orbit.len()).saturating_sub(1);
    let blocks = if frames.is_empty() || frames[end].ncols() == 0 {
        Vec::new()
    } else {
        let inverses: Vec<Matrix> = (0..end)
            .map(|k| orbit.step(k).clone().try_inverse().unwrap_or_else(|| Matrix::zeros(orbit.dim(), orbit.dim())))
            .collect();
        swept_blocks(&inverses, &frames[end], end)
    };
    let per_start: Vec<(usize, Vec<f64>)> = (0..end)
        .into_par_iter()
        .filter_map(|k| {
            let s_max = hi.min(end - k);
            if s_max < lo || hi < lo || blocks.is_empty() {
                return None;
            }
            let g = block_growth(&blocks, k, s_max);
            Some((k, (lo..=s_max).map(|s| eta * s as f64 * dt + g[s - 1].0).collect()))
        })
        .collect();
    RateCertificate::from_profiles(
        RateKind::TangentContraction,
        eta,
        t_min,
        t_max,
        per_start,
        lo,
        dt,
    )
}

/// Result of [`lyapunov_exponents`].
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct LyapunovSpectrum {
    /// Sorted descending.
    pub exponents: Vec<f64>,
    /// Largest change of any running estimate over the last fifth of the run.
    pub diagnostic: f64,
    /// Running estimates `(t, exponents in integration order)` at about 200
    /// checkpoints.
    #[serde(skip)]
    pub history: Vec<(f64, Vec<f64>)>,
}

/// QR (Benettin) estimate of the Lyapunov exponents of `Dφ` along the orbit of `x0`.
pub fn lyapunov_exponents(
    spec: &VectorFieldSpec,
    x0: &Vector,
    t_total: f64,
    dt: f64,
    tol: f64,
) -> Result<LyapunovSpectrum> {
    spec.check_point(x0)?;
    if !(dt > 0.0) || !(t_total >= 100.0 * dt * (1.0 - 1e-12)) {
        return Err(Error::InvalidParameter {
            param: "t_total".into(),
            reason: "must cover at least 100 intervals of dt".into(),
        });
    }
    let d = spec.dim();
    let n = (t_total / dt).round() as usize;
    let mut integ = Integrator::new(TangentSystem::new(spec), IntegratorOptions::new(tol))?;
    let mut x = x0.clone();
    let mut q = Matrix::identity(d, d);
    let mut sums = vec![0.0; d];
    let every = (n / 200).max(1);
    let mut history = Vec::new();
    for step in 1..=n {
        let mut y = tangent_initial(&x);
        integ.advance(&mut y, dt)?;
        let (x1, a) = split_tangent(&y, d);
        let (q1, r) = qr_positive(&(a * &q));
        for (i, s) in sums.iter_mut().enumerate() {
            *s += r[(i, i)].ln();
        }
        q = q1;
        x = x1;
        if step % every == 0 || step == n {
            let t = step as f64 * dt;
            history.push((t, sums.iter().map(|s| s / t).collect::<Vec<f64>>()));
        }
    }
    let t = n as f64 * dt;
    let mut exps: Vec<f64> = sums.iter().map(|s| s / t).collect();
    let final_est = &history.last().unwrap().1;
    let cut = 0.8 * t;
    let diagnostic = history
        .iter()
        .filter(|(ht, _)| *ht >= cut)
        .map(|(_, est)| {
            est.iter()
                .zip(final_est)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    exps.sort_by(|a, b| b.total_cmp(a));
    Ok(LyapunovSpectrum {
        exponents: exps,
        diagnostic,
        history,
    })
}

/// A family `t ↦ a_t` sampled along an orbit: `value(k, s)` is `a_{s·dt}` at
/// sample `k`, defined for `k + s` inside the record.
pub trait SampledFamily: Sync {
    fn len(&self) -> usize;
    fn dt(&self) -> f64;
    fn value(&self, k: usize, s: usize) -> f64;
}

/// `a_t(x_k) = log|A_t restricted to F_k|` for a cocycle and a frame field
/// transported along the orbit from a frame at the first sample.
pub struct LogNormFamily {
    steps: Vec<Matrix>,
    frames: Vec<Matrix>,
    dt: f64,
}

impl LogNormFamily {
    pub fn new(steps: Vec<Matrix>, initial: &Matrix, dt: f64) -> Self {
        let mut frames = Vec::with_capacity(steps.len() + 1);
        let mut f = orthonormalize(initial);
        frames.push(f.clone());
        for a in &steps {
            f = orthonormalize(&(a * &f));
            frames.push(f.clone());
        }
        LogNormFamily { steps, frames, dt }
    }

    /// The Poincaré cocycle of a splitting's orbit with a given initial frame
    /// in normal coordinates.
    pub fn poincare(cocycle: &ProjectedCocycle, initial: &Matrix, dt: f64) -> Self {
        Self::new(cocycle.steps().to_vec(), initial, dt)
    }

    /// `sup_{k, |s| ≤ s_max} a_s(x_k)` over pairs inside the record, where
    /// negative times use the inverse cocycle.
    pub fn sup_abs_window(&self, s_max: usize) -> f64 {
        let n = self.frames.len();
        let mut best: f64 = 0.0;
        for k in 0..n {
            let fwd = s_max.min(n - 1 - k);
            if fwd > 0 {
                for (hi, _) in frame_growth(&self.steps, k, &self.frames[k], fwd) {
                    best = best.max(hi);
                }
            }
            let back = s_max.min(k);
            let mut f = self.frames[k].clone();
            let mut racc = Matrix::identity(f.ncols(), f.ncols());
            let mut scale = 0.0;
            for j in (k - back..k).rev() {
                let inv = self.steps[j].clone().try_inverse().unwrap_or_else(|| self.steps[j].clone());
                let (q, r) = qr_positive(&(inv * &f));
                f = q.columns(0, f.ncols()).into_owned();
                racc = r.rows(0, f.ncols()).into_owned() * racc;
                let nr = racc.norm();
                racc /= nr;
                scale += nr.ln();
                best = best.max(scale + crate::linalg::spectral_norm(&racc).ln());
            }
        }
        best
    }
}

impl SampledFamily for LogNormFamily {
    fn len(&self) -> usize {
        self.frames.len()
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn value(&self, k: usize, s: usize) -> f64 {
        if s == 0 {
            return 0.0;
        }
        frame_growth(&self.steps, k, &self.frames[k], s)[s - 1].0
    }
}

/// Checks `a_t(x_0) ≤ 3c_T + (1/T)∫₀ᵗ a_T(φ_s x_0) ds` (trapezoid at the
/// record's `dt`) after probing subadditivity
/// `a_{t+s}(x) ≤ a_s(x) + a_t(φ_s x) + 1e-6` on a grid of sample pairs.
pub fn subadditive_bound_check<F: SampledFamily + ?Sized>(
    family: &F,
    c_t: f64,
    t_big: f64,
    t: f64,
) -> Result<bool> {
    let dt = family.dt();
    if !(t_big > 0.0) || t < 3.0 * t_big * (1.0 - 1e-12) {
        return Err(Error::Precondition("requires T > 0 and t ≥ 3T".into()));
    }
    let s_t = (t_big / dt).round() as usize;
    let s_total = (t / dt).round() as usize;
    if s_total + s_t > family.len() - 1 {
        return Err(Error::OutsideRecord(s_total + s_t));
    }
    // Subadditivity probes on a coarse deterministic grid.
    let n = family.len() - 1;
    let probe_steps = [1usize, 2, 3, 5, 8, 13, 21, 34];
    let starts = (0..8).map(|j| j * n / 8);
    for k in starts {
        for &a in &probe_steps {
            for &b in &probe_steps {
                let (a, b) = (a * s_t.max(1) / 4 + 1, b * s_t.max(1) / 4 + 1);
                if k + a + b > n {
                    continue;
                }
                let lhs = family.value(k, a + b);
                let rhs = family.value(k, a) + family.value(k + a, b);
                if lhs > rhs + 1e-6 {
                    return Err(Error::NotSubadditive {
                        s: a as f64 * dt,
                        t: b as f64 * dt,
                        violation: lhs - rhs,
                    });
                }
            }
        }
    }
    let lhs = family.value(0, s_total);
    let vals: Vec<f64> = (0..=s_total).map(|j| family.value(j, s_t)).collect();
    let integral = dt * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[s_total]));
    Ok(lhs <= 3.0 * c_t + integral / t_big)
}

/// A closure-backed family, mainly for scalar examples.
pub struct FnFamily<G: Fn(usize, usize) -> f64 + Sync> {
    pub len: usize,
    pub dt: f64,
    pub f: G,
}

impl<G: Fn(usize, usize) -> f64 + Sync> SampledFamily for FnFamily<G> {
    fn len(&self) -> usize {
        self.len
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn value(&self, k: usize, s: usize) -> f64 {
        (self.f)(k, s)
    }
}

/// Windowed contracted subspaces of an arbitrary invertible cocycle, for
/// tangent-bundle splittings. Frames are returned for samples
/// `0..steps.len() + 1 − w`.
pub(crate) fn tangent_contracted_frames(
    steps: &[Matrix],
    w: usize,
    i: usize,
) -> Result<(Vec<Matrix>, Vec<Matrix>, f64)> {
    let inverses: Vec<Matrix> = steps
        .iter()
        .map(|a| {
            a.clone()
                .try_inverse()
                .ok_or_else(|| Error::Precondition("singular tangent step".into()))
        })
        .collect::<Result<_>>()?;
    let count = (steps.len() + 1).saturating_sub(w);
    let res: Vec<(Matrix, Matrix, f64)> = (0..count)
        .into_par_iter()
        .map(|k| {
            let (v, rest, gap, _) = contracted_subspace(steps, &inverses, k, w, i, None);
            (v, rest, gap)
        })
        .collect();
    let mut e = Vec::with_capacity(count);
    let mut f = Vec::with_capacity(count);
    let mut gap = f64::INFINITY;
    for (v, rest, g) in res {
        e.push(v);
        f.push(rest);
        gap = gap.min(g);
    }
    Ok((e, f, gap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::diagonal;
    use crate::orbit::sample_orbit;

    fn axis_orbit(diag: &[f64], t: f64) -> (VectorFieldSpec, OrbitSegment) {
        let f = diagonal(diag).unwrap();
        let mut x0 = Vector::zeros(diag.len());
        x0[0] = 1.0;
        let o = sample_orbit(&f, &x0, t, 0.05, 1e-12).unwrap();
        (f, o)
    }

    fn unit(i: usize, d: usize) -> Matrix {
        let mut m = Matrix::zeros(d, 1);
        m[(i, 0)] = 1.0;
        m
    }

    #[test]
    fn splitting_recovers_axes() {
        let (f, o) = axis_orbit(&[-2.0, -1.0, 1.0], 3.0);
        let s = finite_time_splitting(&o, &f, 1, 1.0).unwrap();
        for j in 0..s.frame_indices().len() {
            assert!(subspace_distance(&s.n1(j), &unit(1, 3)) < 1e-10);
            assert!(subspace_distance(&s.n2(j), &unit(2, 3)) < 1e-10);
        }
        assert!(s.max_residual() < 1e-10);
    }

    #[test]
    fn index_bounds() {
        let (f, o) = axis_orbit(&[-2.0, -1.0, 1.0], 1.0);
        assert!(matches!(
            finite_time_splitting(&o, &f, 2, 1.0),
            Err(Error::InvalidIndex { .. })
        ));
        let r = crate::field::builtin("rotation2d", &Default::default()).unwrap();
        let o = sample_orbit(&r, &Vector::from_vec(vec![1.0, 0.0]), 1.0, 0.05, 1e-10).unwrap();
        for i in 0..3 {
            assert!(finite_time_splitting(&o, &r, i, 1.0).is_err());
        }
    }

    #[test]
    fn no_gap_is_reported() {
        let (f, o) = axis_orbit(&[1.0, -1.0, -1.0], 2.0);
        assert!(matches!(
            finite_time_splitting(&o, &f, 1, 1.0),
            Err(Error::NoGap { .. })
        ));
    }

    fn explicit(diag: &[f64], n1: usize, n2: usize, t: f64) -> SplittingSample {
        let (_, o) = axis_orbit(diag, t);
        let d = diag.len();
        let a = vec![unit(n1, d); o.len()];
        let b = vec![unit(n2, d); o.len()];
        SplittingSample::from_frames(&o, &a, &b).unwrap()
    }

    #[test]
    fn domination_threshold_at_the_gap() {
        let s = explicit(&[-2.0, -1.0, 1.0], 1, 2, 3.0);
        assert!(domination_test(&s, 1.0, 1.0, 2.0).pass);
        assert!(domination_test(&s, 1.8, 1.0, 2.0).pass);
        let c = domination_test(&s, 2.5, 1.0, 2.0);
        assert!(!c.pass);
        assert!((c.log_worst_ratio - 0.5 * 2.0).abs() < 1e-8);
        let sw = domination_test(&s.swapped(), 0.0, 1.0, 2.0);
        assert!((sw.log_worst_ratio - 4.0).abs() < 1e-8);
        let vac = domination_test(&s, 1.0, 2.0, 1.0);
        assert!(vac.pass && vac.vacuous && vac.samples_tested == 0);
    }

    #[test]
    fn uniform_rates_on_axis() {
        let s = explicit(&[-2.0, -1.0, 1.0], 1, 2, 3.0);
        let mask = vec![false; s.orbit().len()];
        assert!(uniform_contraction_test(&s, Bundle::N1, false, 0.9, 1.0, 2.0, &mask).pass);
        let c = uniform_contraction_test(&s, Bundle::N1, false, 1.1, 1.0, 2.0, &mask);
        assert!(!c.pass);
        assert!((c.worst_log_margin - 0.2).abs() < 1e-8);
        assert!(uniform_contraction_test(&s, Bundle::N2, true, 0.9, 1.0, 2.0, &mask).pass);
        let all = vec![true; s.orbit().len()];
        let v = uniform_contraction_test(&s, Bundle::N1, false, 1.1, 1.0, 2.0, &all);
        assert!(v.pass && v.vacuous);
    }

    #[test]
    fn rescaled_contraction_examples() {
        let s = explicit(&[-1.0, -3.0, 1.0], 1, 2, 3.0);
        assert!(rescaled_contraction_test(&s, 1.5, 1.0, 2.0).pass);
        assert!(!rescaled_contraction_test(&s, 2.5, 1.0, 2.0).pass);
        let s3 = explicit(&[-1.0, -3.0, 1.0], 2, 1, 3.0);
        assert!(!rescaled_contraction_test(&s3, 0.01, 1.0, 2.0).pass);
    }

    #[test]
    fn cone_examples() {
        let (_, o) = axis_orbit(&[-2.0, -1.0, 1.0], 3.0);
        let e12 = Matrix::from_columns(&[unit(0, 3).column(0).into_owned(), unit(1, 3).column(0).into_owned()]);
        let split = TangentSplitting {
            e: vec![e12.clone(); o.len()],
            f: vec![unit(2, 3); o.len()],
        };
        let (ok, lambda) = cone_invariance_test(&o, &split, 1.0, 1.0, 3).unwrap();
        assert!(ok);
        assert!(lambda <= (-1.0f64).exp() + 1e-9);
        let (ok, _) = cone_invariance_test(&o, &split, 1e6, 1.0, 3).unwrap();
        assert!(ok);
        let e23 = Matrix::from_columns(&[unit(1, 3).column(0).into_owned(), unit(2, 3).column(0).into_owned()]);
        let bad = TangentSplitting {
            e: vec![e23; o.len()],
            f: vec![unit(0, 3); o.len()],
        };
        assert!(!cone_invariance_test(&o, &bad, 1.0, 1.0, 3).unwrap().0);
    }

    #[test]
    fn sectional_examples() {
        let (_, o) = axis_orbit(&[-2.0, 0.5, 1.0], 3.0);
        let f = Matrix::from_columns(&[unit(1, 3).column(0).into_owned(), unit(2, 3).column(0).into_owned()]);
        let frames = vec![f.clone(); o.len()];
        assert!(sectional_expansion_test(&o, &frames, 1.4, 1.0, 2.0, 1).unwrap().pass);
        assert!(!sectional_expansion_test(&o, &frames, 1.6, 1.0, 2.0, 1).unwrap().pass);
        let a = sectional_expansion_test(&o, &frames, 1.0, 1.0, 2.0, 1).unwrap();
        let b = volume_expansion_test(&o, &frames, 1.0, 1.0, 2.0);
        assert!((a.worst_log_margin - b.worst_log_margin).abs() < 1e-8);
        let (_, o2) = axis_orbit(&[-2.0, -1.0, 1.0], 3.0);
        let frames2 = vec![f; o2.len()];
        assert!(!sectional_expansion_test(&o2, &frames2, 0.01, 1.0, 2.0, 1).unwrap().pass);
        assert!(sectional_expansion_test(&o2, &[unit(2, 3)], 0.01, 1.0, 2.0, 1).is_err());
    }

    #[test]
    fn lyapunov_linear() {
        let f = diagonal(&[-2.0, -1.0, 1.0]).unwrap();
        let x0 = Vector::from_vec(vec![0.3, -0.2, 0.001]);
        let ly = lyapunov_exponents(&f, &x0, 5.0, 0.05, 1e-12).unwrap();
        let expected = [1.0, -1.0, -2.0];
        for (a, b) in ly.exponents.iter().zip(expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn subadditive_examples() {
        let kappa = -0.7;
        let lin = FnFamily { len: 200, dt: 0.05, f: move |_, s| kappa * s as f64 * 0.05 };
        assert!(subadditive_bound_check(&lin, 1e-3, 1.0, 5.0).unwrap());
        let sq = FnFamily { len: 200, dt: 0.05, f: |_, s| (s as f64 * 0.05).powi(2) };
        assert!(matches!(
            subadditive_bound_check(&sq, 1.0, 1.0, 5.0),
            Err(Error::NotSubadditive { .. })
        ));
        let s = explicit(&[-2.0, -1.0, 1.0], 1, 2, 7.0);
        let fam = LogNormFamily::poincare(s.cocycle(), s.n1_coords(0), 0.05);
        let v = fam.value(0, 100);
        assert!((v + 5.0).abs() < 1e-8);
        let c = fam.sup_abs_window(20);
        assert!(subadditive_bound_check(&fam, c.max(1e-9), 1.0, 5.0).unwrap());
    }
}
