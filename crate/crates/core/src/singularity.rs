//! Zeros of the field: location, eigen-blocks, the Lorenz-like test, strong
//! manifold escape tests, center spaces and the renormalization cocycle.

use std::collections::HashMap;

use nalgebra::SVD;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Matrix, Region, Vector, VectorFieldSpec};
use crate::linalg::orthonormalize;
use crate::ode::{flow, trajectory_until, Integrator, IntegratorOptions, System};
use crate::orbit::{sample_orbit, OrbitSegment};
use crate::poincare::LineElement;

/// Real parts closer than this are merged into one block.
pub const BLOCK_MERGE_TOL: f64 = 1e-6;
/// Eigenvalues with `|Re λ|` at most this are treated as central.
pub const HYPERBOLIC_TOL: f64 = 1e-8;

/// An invariant subspace of `DX(σ)` collecting eigenvalues of (numerically)
/// equal real part.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct EigenBlock {
    pub real_part: f64,
    /// `(re, im)` pairs in this block.
    pub eigenvalues: Vec<(f64, f64)>,
    pub complex: bool,
    /// Orthonormal frame, stored as a list of columns.
    #[serde(serialize_with = "ser_frame")]
    pub frame: Matrix,
}

impl EigenBlock {
    pub fn dim(&self) -> usize {
        self.frame.ncols()
    }
}

pub(crate) fn ser_frame<S: serde::Serializer>(m: &Matrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.ncols()))?;
    for c in 0..m.ncols() {
        let col: Vec<f64> = m.column(c).iter().copied().collect();
        seq.serialize_element(&col)?;
    }
    seq.end()
}

pub(crate) fn ser_vector<S: serde::Serializer>(v: &Vector, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v.iter() {
        seq.serialize_element(x)?;
    }
    seq.end()
}

/// Which of the two Lorenz-like configurations holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LorenzCase {
    /// `E^s = E^{ss} ⊕ E^c`, `dim E^c = 1`, `λ^s + λ^u > 0`.
    StableCenter,
    /// `E^u = E^c ⊕ E^{uu}`, `dim E^c = 1`, `λ^s + λ^u < 0`.
    UnstableCenter,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SingularityInfo {
    #[serde(serialize_with = "ser_vector")]
    pub location: Vector,
    /// `|X(σ)|` at the reported location.
    pub residual: f64,
    /// Sorted by real part, then imaginary part.
    pub eigenvalues: Vec<(f64, f64)>,
    pub hyperbolic: bool,
    /// Number of eigenvalues with negative real part.
    pub index: usize,
    /// Ordered by increasing real part.
    pub blocks: Vec<EigenBlock>,
    /// Differences of consecutive block real parts.
    pub block_gaps: Vec<f64>,
    pub lorenz_like: bool,
    pub lorenz_case: Option<LorenzCase>,
    /// Largest negative real part.
    pub lambda_s: Option<f64>,
    /// Smallest positive real part.
    pub lambda_u: Option<f64>,
    pub rho_ss: Option<f64>,
    pub rho_uu: Option<f64>,
    pub rho_c: Option<f64>,
}

impl SingularityInfo {
    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn stable_blocks(&self) -> impl Iterator<Item = &EigenBlock> {
        self.blocks.iter().filter(|b| b.real_part < 0.0)
    }

    pub fn unstable_blocks(&self) -> impl Iterator<Item = &EigenBlock> {
        self.blocks.iter().filter(|b| b.real_part > 0.0)
    }

    /// Frame of the `n` strongest stable blocks.
    pub fn strong_stable_frame(&self, n: usize) -> Matrix {
        let blocks: Vec<&EigenBlock> = self.stable_blocks().take(n).collect();
        stack(&blocks, self.dim())
    }

    /// Frame of the `n` strongest unstable blocks.
    pub fn strong_unstable_frame(&self, n: usize) -> Matrix {
        let mut blocks: Vec<&EigenBlock> = self.unstable_blocks().collect();
        blocks.reverse();
        blocks.truncate(n);
        stack(&blocks, self.dim())
    }

    pub fn stable_block_count(&self) -> usize {
        self.stable_blocks().count()
    }

    pub fn unstable_block_count(&self) -> usize {
        self.unstable_blocks().count()
    }

    /// Dimension of the span of the `n` strongest stable blocks.
    pub fn strong_stable_dim(&self, n: usize) -> usize {
        self.stable_blocks().take(n).map(|b| b.dim()).sum()
    }

    pub fn strong_unstable_dim(&self, n: usize) -> usize {
        let mut dims: Vec<usize> = self.unstable_blocks().map(|b| b.dim()).collect();
        dims.reverse();
        dims.into_iter().take(n).sum()
    }

    /// Whether `E^s` splits as `E^{ss} ⊕ F` with `dim E^{ss} = dim` along a
    /// block boundary (a dominated splitting of the tangent flow).
    pub fn stable_split_at(&self, dim: usize) -> Option<usize> {
        let mut acc = 0;
        for (n, b) in self.stable_blocks().enumerate() {
            acc += b.dim();
            if acc == dim {
                return Some(n + 1);
            }
            if acc > dim {
                return None;
            }
        }
        None
    }

    pub fn unstable_split_at(&self, dim: usize) -> Option<usize> {
        let mut dims: Vec<usize> = self.unstable_blocks().map(|b| b.dim()).collect();
        dims.reverse();
        let mut acc = 0;
        for (n, d) in dims.into_iter().enumerate() {
            acc += d;
            if acc == dim {
                return Some(n + 1);
            }
            if acc > dim {
                return None;
            }
        }
        None
    }

    /// Real part of the weakest block in the `n` strongest stable blocks.
    pub fn strong_stable_rate(&self, n: usize) -> Option<f64> {
        self.stable_blocks().take(n).last().map(|b| b.real_part)
    }

    pub fn strong_unstable_rate(&self, n: usize) -> Option<f64> {
        let mut v: Vec<f64> = self.unstable_blocks().map(|b| b.real_part).collect();
        v.reverse();
        v.into_iter().take(n).last()
    }
}

fn stack(blocks: &[&EigenBlock], d: usize) -> Matrix {
    let cols: Vec<Vector> = blocks
        .iter()
        .flat_map(|b| (0..b.dim()).map(move |c| b.frame.column(c).into_owned()))
        .collect();
    if cols.is_empty() {
        Matrix::zeros(d, 0)
    } else {
        orthonormalize(&Matrix::from_columns(&cols))
    }
}

fn null_space(m: &Matrix, dim: usize) -> Matrix {
    let n = m.ncols();
    let svd = SVD::new(m.clone(), false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let cols: Vec<Vector> = idx[..dim]
        .iter()
        .map(|&i| vt.row(i).transpose().into_owned())
        .collect();
    orthonormalize(&Matrix::from_columns(&cols))
}

fn eigen_blocks(j: &Matrix) -> (Vec<(f64, f64)>, Vec<EigenBlock>) {
    let d = j.nrows();
    let mut eig: Vec<(f64, f64)> = j
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, if c.im.abs() < 1e-14 * (1.0 + c.re.abs()) { 0.0 } else { c.im }))
        .collect();
    eig.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut groups: Vec<Vec<(f64, f64)>> = Vec::new();
    for e in &eig {
        match groups.last_mut() {
            Some(g) if (e.0 - g.last().unwrap().0).abs() <= BLOCK_MERGE_TOL => g.push(*e),
            _ => groups.push(vec![*e]),
        }
    }
    let id = Matrix::identity(d, d);
    let blocks = groups
        .into_iter()
        .map(|g| {
            let mut p = id.clone();
            let mut used_pair = vec![false; g.len()];
            for (a, &(re, im)) in g.iter().enumerate() {
                if used_pair[a] {
                    continue;
                }
                if im == 0.0 {
                    p = (j - &id * re) * p;
                } else {
                    // Pair with the conjugate and use the real quadratic factor.
                    if let Some(b) = (a + 1..g.len())
                        .find(|&b| !used_pair[b] && (g[b].1 + im).abs() <= 1e-8 * (1.0 + im.abs()))
                    {
                        used_pair[b] = true;
                    }
                    used_pair[a] = true;
                    let q = j * j - j * (2.0 * re) + &id * (re * re + im * im);
                    p = q * p;
                }
            }
            let frame = null_space(&p, g.len());
            let real_part = g.iter().map(|e| e.0).sum::<f64>() / g.len() as f64;
            EigenBlock {
                real_part,
                complex: g.iter().any(|e| e.1 != 0.0),
                eigenvalues: g,
                frame,
            }
        })
        .collect();
    (eig, blocks)
}

/// Eigen-data and the Lorenz-like test at a zero `σ` of the field.
pub fn classify_singularity(spec: &VectorFieldSpec, sigma: &Vector) -> Result<SingularityInfo> {
    spec.check_point(sigma)?;
    let residual = spec.rhs(sigma).norm();
    if residual > 1e-8 {
        return Err(Error::Precondition(format!(
            "|X(σ)| = {residual:e} exceeds 1e-8; not a zero of the field"
        )));
    }
    let j = spec.jacobian(sigma);
    let (eigenvalues, blocks) = eigen_blocks(&j);
    let hyperbolic = eigenvalues.iter().all(|e| e.0.abs() > HYPERBOLIC_TOL);
    let index = eigenvalues.iter().filter(|e| e.0 < 0.0).count();
    let block_gaps = blocks
        .windows(2)
        .map(|w| w[1].real_part - w[0].real_part)
        .collect();
    let mut info = SingularityInfo {
        location: sigma.clone(),
        residual,
        eigenvalues,
        hyperbolic,
        index,
        blocks,
        block_gaps,
        lorenz_like: false,
        lorenz_case: None,
        lambda_s: None,
        lambda_u: None,
        rho_ss: None,
        rho_uu: None,
        rho_c: None,
    };
    if !hyperbolic {
        return Ok(info);
    }
    let stable: Vec<EigenBlock> = info.stable_blocks().cloned().collect();
    let unstable: Vec<EigenBlock> = info.unstable_blocks().cloned().collect();
    let (ls, lu) = match (stable.last(), unstable.first()) {
        (Some(s), Some(u)) => (s.real_part, u.real_part),
        _ => return Ok(info),
    };
    info.lambda_s = Some(ls);
    info.lambda_u = Some(lu);
    let weakest_s = stable.last().unwrap();
    let weakest_u = unstable.first().unwrap();
    let spectral = |v: Option<f64>| v.map(f64::exp).unwrap_or(0.0);
    let mut chosen = None;
    if weakest_s.dim() == 1 && !weakest_s.complex && ls + lu > 0.0 {
        let rho_ss = spectral(stable.iter().rev().nth(1).map(|b| b.real_part));
        let rho_uu = (-lu).exp();
        let rho_c = ls.exp();
        chosen = Some((LorenzCase::StableCenter, rho_ss, rho_uu, rho_c));
    } else if weakest_u.dim() == 1 && !weakest_u.complex && ls + lu < 0.0 {
        let rho_ss = ls.exp();
        let rho_uu = spectral(unstable.get(1).map(|b| -b.real_part));
        let rho_c = lu.exp();
        chosen = Some((LorenzCase::UnstableCenter, rho_ss, rho_uu, rho_c));
    }
    if let Some((case, ss, uu, c)) = chosen {
        info.rho_ss = Some(ss);
        info.rho_uu = Some(uu);
        info.rho_c = Some(c);
        let inner = c.min(1.0 / c);
        if ss.max(uu) < inner && inner < 1.0 {
            info.lorenz_like = true;
            info.lorenz_case = Some(case);
        }
    }
    Ok(info)
}

/// Outcome of a Newton search over a seed grid.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SingularitySearch {
    pub singularities: Vec<SingularityInfo>,
    /// Seeds whose Newton iteration hit a singular Jacobian or diverged.
    pub abandoned: usize,
    pub seeds: usize,
}

fn newton(spec: &VectorFieldSpec, x0: &Vector) -> Option<Vector> {
    let mut x = x0.clone();
    for _ in 0..100 {
        let f = spec.rhs(&x);
        let scale = 1.0 + x.norm();
        if f.norm() <= 1e-13 * scale {
            return Some(x);
        }
        let j = spec.jacobian(&x);
        let dx = j.lu().solve(&f)?;
        if !dx.iter().all(|v| v.is_finite()) {
            return None;
        }
        x -= dx;
        if x.norm() > 1e8 {
            return None;
        }
    }
    let f = spec.rhs(&x);
    (f.norm() <= 1e-10).then_some(x)
}

/// Newton iteration from `density^d` grid seeds in `region`; roots inside the
/// region are deduplicated at distance `1e-6` and classified.
pub fn find_singularities(
    spec: &VectorFieldSpec,
    region: &Region,
    density: usize,
) -> Result<SingularitySearch> {
    let d = spec.dim();
    if region.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: region.dim(),
        });
    }
    let n = density.max(1);
    let total = n.pow(d as u32);
    let seeds: Vec<Vector> = (0..total)
        .map(|idx| {
            let mut rem = idx;
            Vector::from_fn(d, |k, _| {
                let c = rem % n;
                rem /= n;
                let (l, u) = (region.lower[k], region.upper[k]);
                l + (u - l) * (c as f64 + 0.5) / n as f64
            })
        })
        .collect();
    let results: Vec<Option<Vector>> = seeds.par_iter().map(|s| newton(spec, s)).collect();
    let mut abandoned = 0;
    let mut roots: Vec<Vector> = Vec::new();
    for r in results {
        match r {
            None => abandoned += 1,
            Some(x) => {
                let inside = x
                    .iter()
                    .zip(region.lower.iter().zip(&region.upper))
                    .all(|(v, (l, u))| *v >= l - 1e-9 && *v <= u + 1e-9);
                if inside && roots.iter().all(|y| (y - &x).norm() > 1e-6) {
                    roots.push(x);
                }
            }
        }
    }
    roots.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let singularities = roots
        .iter()
        .map(|x| classify_singularity(spec, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(SingularitySearch {
        singularities,
        abandoned,
        seeds: total,
    })
}

/// How a [`LambdaSample`] was produced.
#[derive(Clone, Debug, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    OrbitClosure {
        x0: Vec<f64>,
        t_total: f64,
        dt: f64,
        transient: f64,
    },
    UnstableBranch {
        sigma: Vec<f64>,
        offset: f64,
        t_total: f64,
        dt: f64,
        transient: f64,
    },
    BoxCover {
        class: usize,
        resolution: Vec<usize>,
    },
    PointList,
}

/// A finite approximation of an invariant compact set `Λ`.
#[derive(Clone, Debug)]
pub struct LambdaSample {
    pub points: Vec<Vector>,
    /// Zeros of the field taken to belong to `Λ`.
    pub singularities: Vec<SingularityInfo>,
    pub provenance: Provenance,
    /// Declared Hausdorff slack.
    pub slack: f64,
    /// The generating orbit for orbit closures.
    pub orbit: Option<OrbitSegment>,
}

impl LambdaSample {
    pub fn from_points(points: Vec<Vector>, singularities: Vec<SingularityInfo>, slack: f64) -> Self {
        LambdaSample {
            points,
            singularities,
            provenance: Provenance::PointList,
            slack,
            orbit: None,
        }
    }

    /// Long-orbit closure: the first `transient·t_total` time units are
    /// discarded and the rest is recorded with its tangent cocycle. A zero
    /// of the field joins `Λ` when the orbit comes within `capture` of it.
    #[allow(clippy::too_many_arguments)]
    pub fn from_orbit(
        spec: &VectorFieldSpec,
        x0: &Vector,
        t_total: f64,
        dt: f64,
        tol: f64,
        transient: f64,
        zeros: &[SingularityInfo],
        capture: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&transient) {
            return Err(Error::InvalidParameter {
                param: "transient".into(),
                reason: "must lie in [0, 1)".into(),
            });
        }
        let skip = transient * t_total;
        let start = if skip > 0.0 { flow(spec, x0, skip, tol)? } else { x0.clone() };
        let orbit = sample_orbit(spec, &start, t_total - skip, dt, tol)?;
        let slack = (0..orbit.len() - 1)
            .map(|k| (orbit.state(k + 1) - orbit.state(k)).norm())
            .fold(0.0, f64::max);
        let singularities = zeros
            .iter()
            .filter(|z| {
                orbit
                    .states()
                    .iter()
                    .any(|p| (p - &z.location).norm() <= capture)
            })
            .cloned()
            .collect();
        Ok(LambdaSample {
            points: orbit.states().to_vec(),
            singularities,
            provenance: Provenance::OrbitClosure {
                x0: x0.iter().copied().collect(),
                t_total,
                dt,
                transient,
            },
            slack,
            orbit: Some(orbit),
        })
    }

    /// Closure of one branch of the unstable manifold of `σ`: the orbit of
    /// `σ + offset·e`, with `e` the leading direction of the weakest
    /// unstable block, after the given transient fraction. `σ` is the
    /// α-limit of this orbit, so it belongs to `Λ` by construction.
    #[allow(clippy::too_many_arguments)]
    pub fn from_unstable_branch(
        spec: &VectorFieldSpec,
        sigma: &SingularityInfo,
        offset: f64,
        t_total: f64,
        dt: f64,
        tol: f64,
        transient: f64,
        zeros: &[SingularityInfo],
        capture: f64,
    ) -> Result<Self> {
        let block = sigma
            .unstable_blocks()
            .next()
            .ok_or_else(|| Error::Precondition("zero has no unstable direction".into()))?;
        let dir = crate::poincare::canonical_sign(block.frame.column(0).into_owned());
        let x0 = &sigma.location + dir * offset;
        let mut lam = Self::from_orbit(spec, &x0, t_total, dt, tol, transient, zeros, capture)?;
        if !lam.singularities.iter().any(|s| s.location == sigma.location) {
            lam.singularities.push(sigma.clone());
        }
        lam.provenance = Provenance::UnstableBranch {
            sigma: sigma.location.iter().copied().collect(),
            offset,
            t_total,
            dt,
            transient,
        };
        Ok(lam)
    }

    /// Whether `σ` lies in the closure of the regular part of the sample:
    /// always for orbit-generated samples (membership was decided from the
    /// orbit), otherwise when a regular point lies within `max(slack, tau)`.
    pub fn accumulates_on(&self, sigma: &Vector, tau: f64) -> bool {
        match self.provenance {
            Provenance::OrbitClosure { .. } | Provenance::UnstableBranch { .. } => true,
            _ => self.points.iter().any(|p| {
                let d = (p - sigma).norm();
                d > 1e-12 && d <= self.slack.max(tau)
            }),
        }
    }

    pub fn with_point(mut self, p: Vector) -> Self {
        self.points.push(p);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.singularities.is_empty()
    }

    /// Largest distance from `φ_h(p)` to the sample over a deterministic
    /// subset of at most `probes` points.
    pub fn validate(&self, spec: &VectorFieldSpec, horizon: f64, probes: usize, tol: f64) -> Result<f64> {
        if self.points.is_empty() {
            return Ok(0.0);
        }
        let stride = (self.points.len() / probes.max(1)).max(1);
        let mut worst: f64 = 0.0;
        for p in self.points.iter().step_by(stride) {
            let q = flow(spec, p, horizon, tol)?;
            let dist = self
                .points
                .iter()
                .chain(self.singularities.iter().map(|s| &s.location))
                .map(|y| (y - &q).norm())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(dist);
        }
        Ok(worst)
    }
}

/// Strong stable or strong unstable local manifold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Which {
    StrongStable,
    StrongUnstable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EscapeOptions {
    /// Disk radius `r`; default `2τ_W`.
    pub radius: Option<f64>,
    /// Radius of the neighborhood ball the manifold is grown to; default
    /// `min(diam/4, half the distance to the nearest other zero)`.
    pub ball: Option<f64>,
    /// Membership tolerance; default `1e-3·diam(region)`.
    pub tau: Option<f64>,
    /// Other zeros of the field (used for the default ball radius).
    pub other_zeros: Vec<Vector>,
    pub tol: f64,
}

impl Default for EscapeOptions {
    fn default() -> Self {
        EscapeOptions {
            radius: None,
            ball: None,
            tau: None,
            other_zeros: Vec::new(),
            tol: 1e-10,
        }
    }
}

/// Points of `Λ` closer than this to `σ` are never tested.
pub const R_SIGMA: f64 = 1e-4;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct EscapeReport {
    pub which: Which,
    pub dim: usize,
    /// True when no tested point of `Λ` lies within `τ` of the grown manifold.
    pub escapes: bool,
    /// Smallest distance from a tested `Λ` point to the manifold sample.
    pub min_distance: f64,
    pub tau: f64,
    pub radius: f64,
    pub ball: f64,
    pub tested_points: usize,
    pub curves: usize,
    /// Measured over predicted contraction of the validation seeds.
    pub validation_ratio: f64,
    /// Largest `|X(p) − DX(σ)(p − σ)| / |DX(σ)(p − σ)|` over the seeds.
    pub validation_nonlinearity: f64,
}

/// Triangles and segments of a sampled manifold, bucketed on a grid.
struct Tube {
    cell: f64,
    tris: Vec<[Vector; 3]>,
    segs: Vec<[Vector; 2]>,
    grid: HashMap<Vec<i64>, Vec<(bool, u32)>>,
}

impl Tube {
    fn new(cell: f64) -> Self {
        Tube {
            cell,
            tris: Vec::new(),
            segs: Vec::new(),
            grid: HashMap::new(),
        }
    }

    fn cells_of(&self, pts: &[&Vector], pad: f64) -> Vec<Vec<i64>> {
        let d = pts[0].len();
        let lo: Vec<i64> = (0..d)
            .map(|k| ((pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min) - pad) / self.cell).floor() as i64)
            .collect();
        let hi: Vec<i64> = (0..d)
            .map(|k| ((pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max) + pad) / self.cell).floor() as i64)
            .collect();
        let mut out = vec![lo.clone()];
        for k in 0..d {
            let mut next = Vec::new();
            for c in &out {
                for v in lo[k]..=hi[k] {
                    let mut c2 = c.clone();
                    c2[k] = v;
                    next.push(c2);
                }
            }
            out = next;
        }
        out
    }

    fn add_segment(&mut self, a: Vector, b: Vector, pad: f64) {
        let id = self.segs.len() as u32;
        for c in self.cells_of(&[&a, &b], pad) {
            self.grid.entry(c).or_default().push((false, id));
        }
        self.segs.push([a, b]);
    }

    fn add_triangle(&mut self, a: Vector, b: Vector, c: Vector, pad: f64) {
        let id = self.tris.len() as u32;
        for cell in self.cells_of(&[&a, &b, &c], pad) {
            self.grid.entry(cell).or_default().push((true, id));
        }
        self.tris.push([a, b, c]);
    }

    fn distance(&self, p: &Vector) -> f64 {
        let key: Vec<i64> = p.iter().map(|v| (v / self.cell).floor() as i64).collect();
        let mut best = f64::INFINITY;
        if let Some(list) = self.grid.get(&key) {
            for &(tri, id) in list {
                let d = if tri {
                    let [a, b, c] = &self.tris[id as usize];
                    point_triangle(p, a, b, c)
                } else {
                    let [a, b] = &self.segs[id as usize];
                    point_segment(p, a, b)
                };
                best = best.min(d);
            }
        }
        best
    }
}

fn point_segment(p: &Vector, a: &Vector, b: &Vector) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let s = if l2 == 0.0 { 0.0 } else { ((p - a).dot(&ab) / l2).clamp(0.0, 1.0) };
    (p - (a + ab * s)).norm()
}

fn point_triangle(p: &Vector, a: &Vector, b: &Vector, c: &Vector) -> f64 {
    let e1 = b - a;
    let e2 = c - a;
    let w = p - a;
    let (g11, g12, g22) = (e1.dot(&e1), e1.dot(&e2), e2.dot(&e2));
    let det = g11 * g22 - g12 * g12;
    if det > 1e-30 * (g11 * g22).max(1e-300) {
        let (r1, r2) = (e1.dot(&w), e2.dot(&w));
        let s = (g22 * r1 - g12 * r2) / det;
        let t = (g11 * r2 - g12 * r1) / det;
        if s >= 0.0 && t >= 0.0 && s + t <= 1.0 {
            return (w - e1 * s - e2 * t).norm();
        }
    }
    point_segment(p, a, b)
        .min(point_segment(p, b, c))
        .min(point_segment(p, a, c))
}

fn fibonacci_sphere(k: usize, n: usize) -> Vec<Vector> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            // Spread on S^{k-1} by recursive angle assignment from a 2-sphere
            // pattern, padded with a deterministic rotation for k > 3.
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rad = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            let mut v = Vector::zeros(k);
            v[0] = rad * th.cos();
            v[1] = rad * th.sin();
            v[2] = y;
            for j in 3..k {
                v[j] = ((i * (j + 1)) as f64 * 0.618_034).fract() - 0.5;
            }
            v.normalize()
        })
        .collect()
}

/// Default membership tolerance for a region.
pub fn default_tau(region: &Region) -> f64 {
    1e-3 * region.diam()
}

fn grow_curve(
    spec: &VectorFieldSpec,
    sigma: &Vector,
    seed: &Vector,
    ball: f64,
    dt: f64,
    t_cap: f64,
    tol: f64,
) -> Vec<Vector> {
    match trajectory_until(spec, seed, t_cap, dt, tol, |p| (p - sigma).norm() >= ball) {
        Ok(pts) => pts,
        // An escaping backward orbit just ends the curve.
        Err(_) => vec![seed.clone()],
    }
}

fn level_points(curve: &[Vector], sigma: &Vector, levels: &[f64]) -> Vec<Option<Vector>> {
    let mut out = vec![None; levels.len()];
    let mut li = 0;
    for w in curve.windows(2) {
        let (da, db) = ((&w[0] - sigma).norm(), (&w[1] - sigma).norm());
        while li < levels.len() && db >= levels[li] {
            if da <= levels[li] {
                let s = if db > da { (levels[li] - da) / (db - da) } else { 0.0 };
                out[li] = Some(&w[0] + (&w[1] - &w[0]) * s);
            }
            li += 1;
        }
    }
    out
}

/// Decides `W^{ss}(σ) ∩ Λ = {σ}` (or the unstable mirror) for the manifold
/// tangent to the block-aligned frame `e`.
///
/// The local manifold is grown from seeds on the boundary of the disk
/// `σ + e` of radius `r` by the flow that expands it (backward for a strong
/// stable manifold) until the ball of radius `R` is left. Only points of `Λ`
/// with `max(r, 2τ) ≤ |p − σ| ≤ R` are compared, so that the near-`σ`
/// region where every invariant manifold is within `τ` of every other is not
/// mistaken for an intersection.
pub fn escape_test(
    spec: &VectorFieldSpec,
    info: &SingularityInfo,
    which: Which,
    e: &Matrix,
    lambda: &LambdaSample,
    opts: &EscapeOptions,
) -> Result<EscapeReport> {
    if !info.hyperbolic {
        return Err(Error::Precondition("escape test needs a hyperbolic zero".into()));
    }
    let sigma = &info.location;
    let d = info.dim();
    let k = e.ncols();
    let region = spec.region();
    let tau = opts.tau.unwrap_or_else(|| default_tau(region));
    let r = opts.radius.unwrap_or(2.0 * tau);
    let nearest_other = opts
        .other_zeros
        .iter()
        .map(|z| (z - sigma).norm())
        .filter(|v| *v > 1e-6)
        .fold(f64::INFINITY, f64::min);
    let ball = opts
        .ball
        .unwrap_or_else(|| (0.25 * region.diam()).min(0.5 * nearest_other));
    let e = orthonormalize(e);
    // Rates along E: the weakest contraction (stable) or expansion (unstable).
    let j = spec.jacobian(sigma);
    let restricted = e.transpose() * &j * &e;
    let eig: Vec<f64> = restricted.complex_eigenvalues().iter().map(|c| c.re).collect();
    let (grow_spec, rate) = match which {
        Which::StrongStable => {
            let weakest = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(weakest < 0.0) {
                return Err(Error::Precondition("frame is not stable".into()));
            }
            (spec.clone().reversed(), -weakest)
        }
        Which::StrongUnstable => {
            let weakest = eig.iter().copied().fold(f64::INFINITY, f64::min);
            if !(weakest > 0.0) {
                return Err(Error::Precondition("frame is not unstable".into()));
            }
            (spec.clone(), weakest)
        }
    };
    let seeds_dir: Vec<Vector> = match k {
        0 => Vec::new(),
        1 => vec![e.column(0).into_owned(), -e.column(0).into_owned()],
        2 => (0..64)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / 64.0;
                e.column(0) * th.cos() + e.column(1) * th.sin()
            })
            .collect(),
        _ => fibonacci_sphere(k, 64).into_iter().map(|w| &e * w).collect(),
    };
    // Validation: the contracting direction of the manifold must act at the
    // block rate on the seeds.
    let t_h = std::f64::consts::LN_2 / rate;
    let mut validation_ratio: f64 = 1.0;
    let mut validation_nonlinearity: f64 = 0.0;
    if k > 0 {
        let contract_spec = grow_spec.clone().reversed();
        let predicted = (-rate * t_h).exp();
        for dir in seeds_dir.iter().step_by((seeds_dir.len() / 8).max(1)) {
            let p = sigma + dir * r;
            let q = flow(&contract_spec, &p, t_h, opts.tol)? - sigma;
            let ratio = q.norm() / r / predicted;
            if ratio > validation_ratio {
                validation_ratio = ratio;
            }
            let lin = &j * dir * r;
            let rem = (spec.rhs(&p) - &lin).norm() / lin.norm();
            validation_nonlinearity = validation_nonlinearity.max(rem);
        }
        // Faster components of a multi-block frame may contract more than
        // the weakest rate, so only slowness counts against the radius.
        if validation_ratio > 2.0 || validation_nonlinearity > 0.1 {
            return Err(Error::RadiusTooLarge(format!(
                "disk radius {r:e}: seeds contract at {validation_ratio:.3}x the linear rate \
                 with relative nonlinear remainder {validation_nonlinearity:.3}"
            )));
        }
    }
    let tested: Vec<&Vector> = lambda
        .points
        .iter()
        .filter(|p| {
            let dist = (*p - sigma).norm();
            dist >= r.max(2.0 * tau) && dist <= ball && dist > R_SIGMA
        })
        .collect();
    if k == 0 || tested.is_empty() {
        return Ok(EscapeReport {
            which,
            dim: k,
            escapes: true,
            min_distance: f64::INFINITY,
            tau,
            radius: r,
            ball,
            tested_points: tested.len(),
            curves: 0,
            validation_ratio,
            validation_nonlinearity,
        });
    }
    // Sampling step: short compared with τ at the fastest speed in the ball.
    let vmax = fibonacci_sphere(d.max(3), 256)
        .iter()
        .map(|w| {
            let w = Vector::from_iterator(d, w.iter().copied().take(d)).normalize();
            spec.rhs(&(sigma + w * ball)).norm()
        })
        .fold(0.0, f64::max)
        .max(rate * ball);
    let dt = (tau / vmax).max(1e-6);
    let t_cap = 2.0 * (ball / r).ln() / rate + 1.0;
    let grow = |dir: &Vector| grow_curve(&grow_spec, sigma, &(sigma + dir * r), ball, dt, t_cap, opts.tol);
    let cell = (4.0 * tau).max(ball / 64.0);
    let mut tube = Tube::new(cell);
    let curves_count;
    if k == 1 {
        let curves: Vec<Vec<Vector>> = seeds_dir.par_iter().map(grow).collect();
        curves_count = curves.len();
        for c in curves {
            let mut pts = vec![sigma.clone()];
            pts.extend(c);
            for w in pts.windows(2) {
                tube.add_segment(w[0].clone(), w[1].clone(), tau);
            }
        }
    } else {
        let q: f64 = 1.05;
        let n_levels = ((ball / r).ln() / q.ln()).ceil() as usize + 1;
        let levels: Vec<f64> = (0..n_levels).map(|m| (r * q.powi(m as i32)).min(ball)).collect();
        let mut angles: Vec<Vector> = seeds_dir;
        let mut level_sets: Vec<Vec<Option<Vector>>> = angles
            .par_iter()
            .map(|dir| level_points(&grow(dir), sigma, &levels))
            .collect();
        if k == 2 {
            // Refine the angular grid where neighbouring curves separate.
            for _round in 0..6 {
                let n = angles.len();
                let mut insert: Vec<(usize, Vector)> = Vec::new();
                for a in 0..n {
                    let b = (a + 1) % n;
                    let sep = level_sets[a]
                        .iter()
                        .zip(&level_sets[b])
                        .filter_map(|(x, y)| match (x, y) {
                            (Some(x), Some(y)) => Some((x - y).norm()),
                            _ => None,
                        })
                        .fold(0.0, f64::max);
                    if sep > 10.0 * tau && angles.len() + insert.len() < 2048 {
                        let mid = (&angles[a] + &angles[b]).normalize();
                        insert.push((a, mid));
                    }
                }
                if insert.is_empty() {
                    break;
                }
                let new_sets: Vec<Vec<Option<Vector>>> = insert
                    .par_iter()
                    .map(|(_, dir)| level_points(&grow(dir), sigma, &levels))
                    .collect();
                let mut merged_a = Vec::with_capacity(n + insert.len());
                let mut merged_s = Vec::with_capacity(n + insert.len());
                let mut it = insert.into_iter().zip(new_sets).peekable();
                for a in 0..n {
                    merged_a.push(angles[a].clone());
                    merged_s.push(level_sets[a].clone());
                    while let Some(((pos, _), _)) = it.peek() {
                        if *pos != a {
                            break;
                        }
                        let ((_, dir), set) = it.next().unwrap();
                        merged_a.push(dir);
                        merged_s.push(set);
                    }
                }
                angles = merged_a;
                level_sets = merged_s;
            }
            let n = angles.len();
            for a in 0..n {
                let b = (a + 1) % n;
                for m in 0..levels.len() - 1 {
                    let (p00, p01) = (&level_sets[a][m], &level_sets[a][m + 1]);
                    let (p10, p11) = (&level_sets[b][m], &level_sets[b][m + 1]);
                    if let (Some(p00), Some(p10), Some(p01)) = (p00, p10, p01) {
                        tube.add_triangle(p00.clone(), p10.clone(), p01.clone(), tau);
                    }
                    if let (Some(p10), Some(p11), Some(p01)) = (p10, p11, p01) {
                        tube.add_triangle(p10.clone(), p11.clone(), p01.clone(), tau);
                    }
                }
            }
        } else {
            for set in &level_sets {
                let pts: Vec<Vector> = set.iter().flatten().cloned().collect();
                for w in pts.windows(2) {
                    tube.add_segment(w[0].clone(), w[1].clone(), tau);
                }
            }
        }
        curves_count = angles.len();
    }
    let min_distance = tested
        .iter()
        .map(|p| tube.distance(p))
        .fold(f64::INFINITY, f64::min);
    Ok(EscapeReport {
        which,
        dim: k,
        escapes: !(min_distance < tau),
        min_distance,
        tau,
        radius: r,
        ball,
        tested_points: tested.len(),
        curves: curves_count,
        validation_ratio,
        validation_nonlinearity,
    })
}

/// Escaping stable/unstable spaces and the center space at `σ` in `Λ`.
#[derive(Clone, Debug, Serialize)]
pub struct CenterSpace {
    #[serde(serialize_with = "ser_frame")]
    pub escaping_stable: Matrix,
    #[serde(serialize_with = "ser_frame")]
    pub center: Matrix,
    #[serde(serialize_with = "ser_frame")]
    pub escaping_unstable: Matrix,
    /// Number of stable (unstable) blocks in the escaping space.
    pub stable_blocks_escaping: usize,
    pub unstable_blocks_escaping: usize,
    /// Blocks were merged at equal real parts, so the scan is coarser than
    /// the finest splitting.
    pub merged_blocks: bool,
    pub escape_reports: Vec<EscapeReport>,
    /// Lines of the projective center space.
    #[serde(skip)]
    pub lines: Vec<LineElement>,
}

/// Unit directions sampling the projective space of a `c`-dimensional frame.
pub fn projective_grid(frame: &Matrix, n: usize) -> Vec<Vector> {
    let c = frame.ncols();
    match c {
        0 => Vec::new(),
        1 => vec![frame.column(0).into_owned()],
        2 => (0..n)
            .map(|i| {
                let th = std::f64::consts::PI * i as f64 / n as f64;
                frame.column(0) * th.cos() + frame.column(1) * th.sin()
            })
            .collect(),
        _ => fibonacci_sphere(c, 2 * n)
            .into_iter()
            .filter(|w| w[c - 1] >= 0.0)
            .map(|w| frame * w)
            .collect(),
    }
}

/// Scans the stable blocks strongest-first while the accumulated strong
/// stable manifold escapes `Λ`, mirrors for the unstable side, and leaves the
/// remaining middle blocks as the center space.
pub fn center_space(
    spec: &VectorFieldSpec,
    info: &SingularityInfo,
    lambda: &LambdaSample,
    opts: &EscapeOptions,
    grid: usize,
) -> Result<CenterSpace> {
    if !info.hyperbolic {
        return Err(Error::Precondition("center space needs a hyperbolic zero".into()));
    }
    let mut reports = Vec::new();
    let mut ns = 0;
    for n in 1..=info.stable_block_count() {
        let rep = escape_test(spec, info, Which::StrongStable, &info.strong_stable_frame(n), lambda, opts)?;
        let ok = rep.escapes;
        reports.push(rep);
        if !ok {
            break;
        }
        ns = n;
    }
    let mut nu = 0;
    for n in 1..=info.unstable_block_count() {
        let rep = escape_test(spec, info, Which::StrongUnstable, &info.strong_unstable_frame(n), lambda, opts)?;
        let ok = rep.escapes;
        reports.push(rep);
        if !ok {
            break;
        }
        nu = n;
    }
    let stable: Vec<&EigenBlock> = info.stable_blocks().collect();
    let mut unstable: Vec<&EigenBlock> = info.unstable_blocks().collect();
    let mid_stable: Vec<&EigenBlock> = stable[ns..].to_vec();
    unstable.reverse();
    let mid_unstable: Vec<&EigenBlock> = unstable[nu..].to_vec();
    let mut mid = mid_stable;
    mid.extend(mid_unstable);
    let center = stack(&mid, info.dim());
    let lines = projective_grid(&center, grid)
        .into_iter()
        .map(|u| LineElement::new(info.location.clone(), u))
        .collect::<Result<Vec<_>>>()?;
    Ok(CenterSpace {
        escaping_stable: info.strong_stable_frame(ns),
        center,
        escaping_unstable: info.strong_unstable_frame(nu),
        stable_blocks_escaping: ns,
        unstable_blocks_escaping: nu,
        merged_blocks: info.blocks.iter().any(|b| b.eigenvalues.len() > 1 && !b.complex),
        escape_reports: reports,
        lines,
    })
}

/// Smooth cutoff equal to 1 within `r_in` of `σ` and 0 beyond `r_out`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bump {
    #[serde(serialize_with = "ser_vector")]
    pub center: Vector,
    pub r_in: f64,
    pub r_out: f64,
}

impl Bump {
    pub fn new(center: Vector, r_in: f64, r_out: f64) -> Result<Self> {
        if !(r_in > 0.0 && r_out > r_in) {
            return Err(Error::InvalidParameter {
                param: "bump radii".into(),
                reason: "need 0 < r_in < r_out".into(),
            });
        }
        Ok(Bump { center, r_in, r_out })
    }

    /// Cubic smoothstep in the distance to the center.
    pub fn rho(&self, x: &[f64]) -> f64 {
        let d = x
            .iter()
            .zip(self.center.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if d <= self.r_in {
            1.0
        } else if d >= self.r_out {
            0.0
        } else {
            let s = (self.r_out - d) / (self.r_out - self.r_in);
            s * s * (3.0 - 2.0 * s)
        }
    }
}

/// `(x, u, I)` with `u` kept on the unit sphere and `I' = ρ(x)⟨DX(x)u,u⟩`.
struct LineCocycleSystem<'a> {
    spec: &'a VectorFieldSpec,
    bump: &'a Bump,
    jac: Matrix,
}

impl System for LineCocycleSystem<'_> {
    fn len(&self) -> usize {
        2 * self.spec.dim() + 1
    }
    fn base_dim(&self) -> usize {
        self.spec.dim()
    }
    fn eval(&mut self, y: &[f64], dy: &mut [f64]) {
        let d = self.spec.dim();
        let x = &y[..d];
        let u = &y[d..2 * d];
        self.spec.rhs_into(x, &mut dy[..d]);
        self.spec.jacobian_into(x, &mut self.jac);
        let ju: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|k| self.jac[(i, k)] * u[k]).sum())
            .collect();
        let uu: f64 = u.iter().map(|v| v * v).sum();
        let g: f64 = ju.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() / uu;
        for i in 0..d {
            dy[d + i] = ju[i] - g * u[i];
        }
        dy[2 * d] = self.bump.rho(x) * g;
    }
}

/// `h^t(L) = exp(∫₀ᵗ ρ(φ_s x)·g(φ̂_s L) ds)` for the bump around `σ`.
pub fn renorm_cocycle(
    spec: &VectorFieldSpec,
    line: &LineElement,
    t: f64,
    bump: &Bump,
    tol: f64,
) -> Result<f64> {
    Ok(renorm_with_line(spec, line, t, bump, tol)?.0)
}

/// [`renorm_cocycle`] together with `φ̂_t(L)` and `|Dφ_t|_L|`.
pub fn renorm_with_line(
    spec: &VectorFieldSpec,
    line: &LineElement,
    t: f64,
    bump: &Bump,
    tol: f64,
) -> Result<(f64, LineElement, f64)> {
    let d = spec.dim();
    let mut integ = Integrator::new(
        LineCocycleSystem {
            spec,
            bump,
            jac: Matrix::zeros(d, d),
        },
        IntegratorOptions::new(tol),
    )?;
    let mut y: Vec<f64> = line.base().iter().chain(line.direction().iter()).copied().collect();
    y.push(0.0);
    // The unit vector drifts off the sphere only at the tolerance level; the
    // growth of |Dφ_t u| is recovered from a parallel log integral.
    let mut growth = 0.0;
    let chunks = (t.abs() / 0.25).ceil().max(1.0) as usize;
    let h = t / chunks as f64;
    for _ in 0..if t == 0.0 { 0 } else { chunks } {
        let u0: Vector = Vector::from_column_slice(&y[d..2 * d]);
        let (_, m) = crate::ode::tangent_flow(spec, &Vector::from_column_slice(&y[..d]), h, tol)?;
        growth += (m * &u0).norm().ln() - u0.norm().ln();
        integ.advance(&mut y, h)?;
        let n: f64 = y[d..2 * d].iter().map(|v| v * v).sum::<f64>().sqrt();
        y[d..2 * d].iter_mut().for_each(|v| *v /= n);
    }
    let line_t = LineElement::new(
        Vector::from_column_slice(&y[..d]),
        Vector::from_column_slice(&y[d..2 * d]),
    )?;
    Ok((y[2 * d].exp(), line_t, growth.exp()))
}

/// Cumulative `log h` along the field lines of an orbit record (trapezoid at
/// the record's `dt`), so `log h^{t_j − t_i}(ℝX(x_i)) = c[j] − c[i]`.
pub fn renorm_log_along_orbit(spec: &VectorFieldSpec, orbit: &OrbitSegment, bump: &Bump) -> Vec<f64> {
    let n = orbit.len();
    let integrand: Vec<f64> = (0..n)
        .map(|k| {
            let x = orbit.state(k);
            let v = orbit.velocity(k);
            let s2 = v.norm_squared();
            if s2 == 0.0 {
                return 0.0;
            }
            let g = v.dot(&(spec.jacobian(x) * v)) / s2;
            bump.rho(x.as_slice()) * g
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    out.push(0.0);
    for k in 1..n {
        let prev = out[k - 1];
        out.push(prev + 0.5 * orbit.dt() * (integrand[k - 1] + integrand[k]));
    }
    out
}

/// Measured constants of the two renormalization bounds along an orbit
/// record, for the field lines `L = ℝX(x)`.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct RenormBounds {
    /// `max |log h^t(L) − log |Dφ_t|_L||` over pairs with both ends within
    /// `r_in`, as a multiplicative constant.
    pub c_near: f64,
    /// `max |log h^t(L)|` over pairs with both ends outside the ball `w`.
    pub c_far: f64,
    pub near_pairs: usize,
    pub far_pairs: usize,
}

/// Both bounds over pairs `(x_a, x_b)` of one visit: the segment between
/// them stays within `reach` of the bump center.
pub fn renorm_bounds(
    spec: &VectorFieldSpec,
    orbit: &OrbitSegment,
    bump: &Bump,
    w: f64,
    reach: f64,
) -> RenormBounds {
    let c = renorm_log_along_orbit(spec, orbit, bump);
    let n = orbit.len();
    let dist: Vec<f64> = (0..n).map(|k| (orbit.state(k) - &bump.center).norm()).collect();
    let speed: Vec<f64> = (0..n).map(|k| orbit.velocity(k).norm().ln()).collect();
    let (mut near, mut far) = (0.0f64, 0.0f64);
    let (mut near_pairs, mut far_pairs) = (0, 0);
    let mut a = 0;
    while a < n {
        if dist[a] > reach {
            a += 1;
            continue;
        }
        let mut b = a;
        while b < n && dist[b] <= reach {
            b += 1;
        }
        for i in a..b {
            for j in i + 1..b {
                if dist[i] <= bump.r_in && dist[j] <= bump.r_in {
                    near = near.max((c[j] - c[i] - (speed[j] - speed[i])).abs());
                    near_pairs += 1;
                }
                if dist[i] > w && dist[j] > w {
                    far = far.max((c[j] - c[i]).abs());
                    far_pairs += 1;
                }
            }
        }
        a = b;
    }
    RenormBounds {
        c_near: near.exp(),
        c_far: far.exp(),
        near_pairs,
        far_pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{builtin, default_params, diagonal, Params};

    fn lorenz() -> VectorFieldSpec {
        builtin("lorenz", &default_params("lorenz").unwrap()).unwrap()
    }

    #[test]
    fn lorenz_zeros() {
        let f = lorenz();
        let found = find_singularities(&f, f.region(), 6).unwrap();
        assert_eq!(found.singularities.len(), 3);
        let c = 72f64.sqrt();
        let expect = [[-c, -c, 27.0], [0.0, 0.0, 0.0], [c, c, 27.0]];
        for (s, e) in found.singularities.iter().zip(expect) {
            for k in 0..3 {
                assert!((s.location[k] - e[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lorenz_origin_classification() {
        let info = classify_singularity(&lorenz(), &Vector::zeros(3)).unwrap();
        let r = 1201f64.sqrt();
        let expect = [(-11.0 - r) / 2.0, -8.0 / 3.0, (-11.0 + r) / 2.0];
        for (e, x) in info.eigenvalues.iter().zip(expect) {
            assert!((e.0 - x).abs() < 1e-10 && e.1 == 0.0);
        }
        assert_eq!(info.index, 2);
        assert!(info.lorenz_like);
        assert_eq!(info.lorenz_case, Some(LorenzCase::StableCenter));
        assert!((info.rho_ss.unwrap().ln() - expect[0]).abs() < 1e-10);
        assert!((info.rho_uu.unwrap().ln() + expect[2]).abs() < 1e-10);
        assert!((info.rho_c.unwrap().ln() + 8.0 / 3.0).abs() < 1e-10);
        let j = lorenz().jacobian(&Vector::zeros(3));
        for b in &info.blocks {
            let bf = &b.frame;
            let resid = &j * bf - bf * (bf.transpose() * &j * bf);
            assert!(resid.norm() < 1e-8);
        }
    }

    #[test]
    fn diagonal_classifications() {
        let a = classify_singularity(&diagonal(&[-3.0, -1.0, 2.0]).unwrap(), &Vector::zeros(3)).unwrap();
        assert!(a.lorenz_like);
        let b = classify_singularity(&diagonal(&[-1.0, -1.0, 1.0]).unwrap(), &Vector::zeros(3)).unwrap();
        assert!(!b.lorenz_like);
        assert_eq!(b.blocks.len(), 2);
        let c = classify_singularity(&diagonal(&[-2.0, 1.0, 3.0]).unwrap(), &Vector::zeros(3)).unwrap();
        assert_eq!(c.lorenz_case, Some(LorenzCase::UnstableCenter));
    }

    #[test]
    fn non_hyperbolic_is_flagged() {
        let f = diagonal(&[-1.0, 0.0, 1.0]).unwrap();
        let info = classify_singularity(&f, &Vector::zeros(3)).unwrap();
        assert!(!info.hyperbolic && !info.lorenz_like);
    }

    #[test]
    fn complex_center_is_not_lorenz_like() {
        let a = Matrix::from_row_slice(3, 3, &[-0.5, 1.0, 0.0, -1.0, -0.5, 0.0, 0.0, 0.0, 2.0]);
        let f = crate::field::linear(&a).unwrap();
        let info = classify_singularity(&f, &Vector::zeros(3)).unwrap();
        assert_eq!(info.blocks.len(), 2);
        assert!(info.blocks[0].complex && info.blocks[0].dim() == 2);
        assert!(!info.lorenz_like);
    }

    #[test]
    fn linear_and_rotation_zeros() {
        let f = diagonal(&[-2.0, -1.0, 1.0]).unwrap();
        let s = find_singularities(&f, f.region(), 3).unwrap();
        assert_eq!(s.singularities.len(), 1);
        assert!(s.singularities[0].location.norm() < 1e-12);
        let r = builtin("rotation2d", &Params::new()).unwrap();
        let away = Region::new(vec![0.5, 0.5], vec![2.0, 2.0]).unwrap();
        assert!(find_singularities(&r, &away, 5).unwrap().singularities.is_empty());
    }

    fn axis_lambda(f: &VectorFieldSpec, info: &SingularityInfo) -> LambdaSample {
        let o = sample_orbit(f, &Vector::from_vec(vec![0.0, 0.0, 0.01]), 4.5, 0.01, 1e-12).unwrap();
        let mut pts = o.states().to_vec();
        pts.extend(
            sample_orbit(f, &Vector::from_vec(vec![0.0, 0.0, -0.01]), 4.5, 0.01, 1e-12)
                .unwrap()
                .states()
                .iter()
                .cloned(),
        );
        LambdaSample::from_points(pts, vec![info.clone()], 0.0)
    }

    #[test]
    fn escape_examples() {
        let f = diagonal(&[-2.0, -1.0, 1.0]).unwrap();
        let info = classify_singularity(&f, &Vector::zeros(3)).unwrap();
        let lam = axis_lambda(&f, &info);
        let e = info.strong_stable_frame(1);
        let opts = EscapeOptions::default();
        assert!(escape_test(&f, &info, Which::StrongStable, &e, &lam, &opts).unwrap().escapes);
        let lam2 = lam.clone().with_point(Vector::from_vec(vec![0.5, 0.0, 0.0]));
        assert!(!escape_test(&f, &info, Which::StrongStable, &e, &lam2, &opts).unwrap().escapes);
        let only = LambdaSample::from_points(vec![], vec![info.clone()], 0.0);
        assert!(escape_test(&f, &info, Which::StrongStable, &e, &only, &opts).unwrap().escapes);
        // Whole stable plane and a point on it off the axes.
        let es = info.strong_stable_frame(2);
        let lam3 = lam.clone().with_point(Vector::from_vec(vec![0.3, -0.4, 0.0]));
        assert!(!escape_test(&f, &info, Which::StrongStable, &es, &lam3, &opts).unwrap().escapes);
        assert!(escape_test(&f, &info, Which::StrongStable, &es, &lam, &opts).unwrap().escapes);
    }

    #[test]
    fn radius_validation() {
        let f = lorenz();
        let info = classify_singularity(&f, &Vector::zeros(3)).unwrap();
        let lam = LambdaSample::from_points(vec![Vector::from_vec(vec![1.0, 1.0, 1.0])], vec![], 0.0);
        let opts = EscapeOptions {
            radius: Some(40.0),
            ..Default::default()
        };
        assert!(matches!(
            escape_test(&f, &info, Which::StrongStable, &info.strong_stable_frame(1), &lam, &opts),
            Err(Error::RadiusTooLarge(_))
        ));
    }

    #[test]
    fn center_space_examples() {
        let f = diagonal(&[-2.0, -1.0, 1.0]).unwrap();
        let info = classify_singularity(&f, &Vector::zeros(3)).unwrap();
        let only = LambdaSample::from_points(vec![], vec![info.clone()], 0.0);
        let cs = center_space(&f, &info, &only, &EscapeOptions::default(), 16).unwrap();
        assert_eq!(cs.center.ncols(), 0);
        assert!(cs.lines.is_empty());
        let lam = axis_lambda(&f, &info).with_point(Vector::from_vec(vec![0.5, 0.0, 0.0]));
        let cs = center_space(&f, &info, &lam, &EscapeOptions::default(), 16).unwrap();
        assert_eq!(cs.escaping_stable.ncols(), 0);
        assert_eq!(cs.stable_blocks_escaping, 0);
    }

    #[test]
    fn cocycle_inside_plateau_matches_derivative() {
        let f = diagonal(&[-2.0, -1.0, 1.0]).unwrap();
        let bump = Bump::new(Vector::zeros(3), 0.5, 0.8).unwrap();
        let l = LineElement::new(Vector::from_vec(vec![0.01, 0.0, 0.0]), Vector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        let (h, _, growth) = renorm_with_line(&f, &l, 1.5, &bump, 1e-12).unwrap();
        assert!((h - (-3.0f64).exp()).abs() < 1e-10);
        assert!((h / growth - 1.0).abs() < 1e-9);
        let far = Bump::new(Vector::from_vec(vec![5.0, 5.0, 5.0]), 0.5, 0.8).unwrap();
        assert_eq!(renorm_cocycle(&f, &l, 1.5, &far, 1e-12).unwrap(), 1.0);
    }

    #[test]
    fn cocycle_law() {
        let f = lorenz();
        let bump = Bump::new(Vector::zeros(3), 2.0, 4.0).unwrap();
        let l = LineElement::new(Vector::from_vec(vec![0.5, 0.8, 3.0]), Vector::from_vec(vec![0.3, -1.0, 0.2])).unwrap();
        let (h_ts, _, _) = renorm_with_line(&f, &l, 0.6, &bump, 1e-12).unwrap();
        let (h_t, l_t, _) = renorm_with_line(&f, &l, 0.35, &bump, 1e-12).unwrap();
        let (h_s, _, _) = renorm_with_line(&f, &l_t, 0.25, &bump, 1e-12).unwrap();
        assert!((h_ts - h_t * h_s).abs() <= 1e-8 * h_ts);
    }
}
