//! Verdicts for singular domination, multi-singular, uniform and singular
//! hyperbolicity and the renormalized (Bonatti–da Luz) variant, assembled
//! from the certificates of the analysis modules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Matrix, Monomial, ParamValue, PolynomialField, Vector, VectorFieldSpec};
use crate::ode::tangent_flow;
use crate::orbit::{sample_orbit, OrbitSegment};
use crate::poincare::LineElement;
use crate::singularity::{
    center_space, escape_test, renorm_log_along_orbit, Bump, CenterSpace, EscapeOptions, EscapeReport,
    LambdaSample, SingularityInfo, Which,
};
use crate::splitting::{
    block_growth, contracted_subspace, cone_invariance_test, swept_blocks, domination_test, finite_time_splitting_with, frame_growth,
    sectional_expansion_test, step_range, tangent_contracted_frames, tangent_contraction_test,
    uniform_contraction_test, Bundle, DominationCertificate, ProjectedCocycle, RateCertificate, RateKind,
    SplittingOptions, SplittingSample, TangentSplitting, GAP_THRESHOLD,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Notion {
    SingularDomination,
    MultiSingular,
    Uniform,
    SingularHyperbolic,
    BdlMultiSingular,
}

/// Sub-certificates backing a verdict. Singularities are referred to by
/// their position in [`LambdaSample::singularities`].
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Evidence {
    Splitting {
        label: String,
        index: usize,
        min_gap_rate: f64,
        max_residual: f64,
    },
    Domination {
        label: String,
        certificate: DominationCertificate,
    },
    Rate {
        label: String,
        certificate: RateCertificate,
    },
    Escape {
        sigma: usize,
        report: EscapeReport,
    },
    Singularity {
        sigma: usize,
        hyperbolic: bool,
        index: usize,
        lorenz_like: bool,
    },
    SingularSplitting {
        sigma: usize,
        case: String,
        pass: bool,
    },
    Isolation(IsolationReport),
    Cone {
        label: String,
        lambda: f64,
        pass: bool,
    },
    Selection(Selection),
}

/// Which singular cocycles renormalize the contracting and the expanding
/// bundle, compared with the index rule.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Selection {
    pub s_plus: Option<Vec<usize>>,
    pub s_minus: Option<Vec<usize>>,
    /// `{σ : ind(σ) = i + 1}`.
    pub rule_plus: Vec<usize>,
    /// `{σ : ind(σ) = i}`.
    pub rule_minus: Vec<usize>,
    pub plus_matches_rule: bool,
    pub minus_matches_rule: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub notion: Notion,
    pub pass: bool,
    pub index: Option<usize>,
    pub eta: Option<f64>,
    #[serde(rename = "T")]
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub evidence: Vec<Evidence>,
    pub vacuous_flags: Vec<String>,
    /// Smallest `−log(lhs/rhs)` over the non-vacuous inequality certificates.
    pub margin: Option<f64>,
    pub reasons: Vec<String>,
    pub diagnostics: Vec<String>,
}

impl Verdict {
    fn new(notion: Notion, opts: &CheckOptions) -> Self {
        Verdict {
            notion,
            pass: true,
            index: None,
            eta: Some(opts.eta),
            t_min: Some(opts.t_min),
            t_max: Some(opts.t_max()),
            evidence: Vec::new(),
            vacuous_flags: Vec::new(),
            margin: None,
            reasons: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    fn fail(&mut self, reason: impl Into<String>) {
        self.pass = false;
        self.reasons.push(reason.into());
    }

    fn vacuous(&mut self, flag: impl Into<String>) {
        let flag = flag.into();
        if !self.vacuous_flags.contains(&flag) {
            self.vacuous_flags.push(flag);
        }
    }

    fn margin_from(&mut self, log_worst: f64, vacuous: bool) {
        if !vacuous && log_worst.is_finite() {
            let m = -log_worst;
            self.margin = Some(self.margin.map_or(m, |x: f64| x.min(m)));
        }
    }

    fn domination(&mut self, label: &str, c: DominationCertificate) {
        if !c.pass {
            self.fail(format!("{label}: domination fails (worst log ratio {:.4})", c.log_worst_ratio));
        }
        if c.vacuous {
            self.vacuous(label.to_string());
        }
        self.margin_from(c.log_worst_ratio, c.vacuous);
        self.evidence.push(Evidence::Domination {
            label: label.to_string(),
            certificate: c,
        });
    }

    fn rate(&mut self, label: &str, c: RateCertificate) {
        if !c.pass {
            self.fail(format!("{label}: rate inequality fails (worst log margin {:.4})", c.worst_log_margin));
        }
        if c.vacuous {
            self.vacuous(label.to_string());
        }
        self.margin_from(c.worst_log_margin, c.vacuous);
        self.evidence.push(Evidence::Rate {
            label: label.to_string(),
            certificate: c,
        });
    }

    fn finish(mut self, strict_vacuous: bool) -> Self {
        if strict_vacuous && !self.vacuous_flags.is_empty() {
            let flags = self.vacuous_flags.join(", ");
            self.fail(format!("vacuous certificates rejected: {flags}"));
        }
        self
    }
}

/// Shared knobs of the verdict checks.
#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub eta: f64,
    pub t_min: f64,
    /// Longest tested time; default `2T`.
    pub t_max: Option<f64>,
    /// Forward window of the finite-time splittings.
    pub window: f64,
    /// Frames are computed at every `stride`-th sample.
    pub stride: usize,
    pub tol: f64,
    /// Sample spacing for orbits generated from point lists.
    pub dt: f64,
    /// Length of orbits generated from point lists.
    pub segment_time: f64,
    pub escape: EscapeOptions,
    pub strict_vacuous: bool,
    pub seed: u64,
    pub cone_alpha: f64,
    /// Lines per projective direction of a center space.
    pub center_grid: usize,
    /// Index candidates; default `1..=d−2`.
    pub indices: Option<Vec<usize>>,
}

impl CheckOptions {
    pub fn new(eta: f64, t_min: f64) -> Self {
        CheckOptions {
            eta,
            t_min,
            t_max: None,
            window: crate::splitting::DEFAULT_WINDOW,
            stride: 1,
            tol: 1e-10,
            dt: 0.02,
            segment_time: 20.0,
            escape: EscapeOptions::default(),
            strict_vacuous: false,
            seed: 0,
            cone_alpha: 0.5,
            center_grid: 32,
            indices: None,
        }
    }

    pub fn t_max(&self) -> f64 {
        self.t_max.unwrap_or(2.0 * self.t_min)
    }

    fn splitting(&self) -> SplittingOptions {
        SplittingOptions {
            window: self.window,
            stride: self.stride,
        }
    }

    fn index_candidates(&self, d: usize) -> Vec<usize> {
        self.indices.clone().unwrap_or_else(|| (1..=d.saturating_sub(2)).collect())
    }
}

/// The orbit records carrying the regular part of `Λ`.
pub fn regular_orbits(spec: &VectorFieldSpec, lambda: &LambdaSample, opts: &CheckOptions) -> Result<Vec<OrbitSegment>> {
    if let Some(o) = &lambda.orbit {
        return Ok(vec![o.clone()]);
    }
    let regular: Vec<&Vector> = lambda
        .points
        .iter()
        .filter(|p| spec.rhs(p).norm() > 1e-6)
        .collect();
    let stride = (regular.len() / 8).max(1);
    regular
        .iter()
        .step_by(stride)
        .map(|p| sample_orbit(spec, p, opts.segment_time, opts.dt, opts.tol))
        .collect()
}

fn check_index(d: usize, i: usize) -> Result<()> {
    if d < 3 || i == 0 || i > d - 2 {
        return Err(Error::InvalidIndex { index: i, dim: d });
    }
    Ok(())
}

/// Item (ii) of singular domination at one zero: an escaping strong stable
/// space of dimension `i` or an escaping strong unstable space of dimension
/// `d − 1 − i`.
fn singular_alternative(
    spec: &VectorFieldSpec,
    lambda: &LambdaSample,
    j: usize,
    i: usize,
    opts: &CheckOptions,
    verdict: &mut Verdict,
) -> Result<bool> {
    let info = &lambda.singularities[j];
    let d = info.dim();
    if !info.hyperbolic {
        verdict.evidence.push(Evidence::SingularSplitting {
            sigma: j,
            case: "non-hyperbolic".into(),
            pass: false,
        });
        return Ok(false);
    }
    if let Some(n) = info.stable_split_at(i) {
        let rep = escape_test(spec, info, Which::StrongStable, &info.strong_stable_frame(n), lambda, &opts.escape)?;
        let ok = rep.escapes;
        verdict.evidence.push(Evidence::Escape { sigma: j, report: rep });
        if ok {
            verdict.evidence.push(Evidence::SingularSplitting {
                sigma: j,
                case: "strong-stable".into(),
                pass: true,
            });
            return Ok(true);
        }
    }
    if let Some(n) = info.unstable_split_at(d - 1 - i) {
        let rep = escape_test(spec, info, Which::StrongUnstable, &info.strong_unstable_frame(n), lambda, &opts.escape)?;
        let ok = rep.escapes;
        verdict.evidence.push(Evidence::Escape { sigma: j, report: rep });
        if ok {
            verdict.evidence.push(Evidence::SingularSplitting {
                sigma: j,
                case: "strong-unstable".into(),
                pass: true,
            });
            return Ok(true);
        }
    }
    verdict.evidence.push(Evidence::SingularSplitting {
        sigma: j,
        case: "none".into(),
        pass: false,
    });
    Ok(false)
}

/// Builds the index-`i` splittings and records domination and the
/// singular alternatives; `None` when some orbit has no gap at `i`.
fn singular_domination_into(
    spec: &VectorFieldSpec,
    lambda: &LambdaSample,
    orbits: &[OrbitSegment],
    i: usize,
    opts: &CheckOptions,
    verdict: &mut Verdict,
) -> Result<Option<Vec<SplittingSample>>> {
    let mut splittings = Vec::with_capacity(orbits.len());
    for (n, orbit) in orbits.iter().enumerate() {
        match finite_time_splitting_with(orbit, spec, i, &opts.splitting()) {
            Ok(s) => {
                verdict.evidence.push(Evidence::Splitting {
                    label: format!("orbit {n}"),
                    index: i,
                    min_gap_rate: s.min_gap_rate(),
                    max_residual: s.max_residual(),
                });
                splittings.push(s);
            }
            Err(Error::NoGap { gap, .. }) => {
                verdict.fail(format!("no index-{i} gap (orbit {n}: smallest gap rate {gap:.3e})"));
                return Ok(None);
            }
            Err(e) => return Err(e),
        }
    }
    if orbits.is_empty() {
        verdict.vacuous("domination: no regular points");
    }
    for (n, s) in splittings.iter().enumerate() {
        let c = domination_test(s, opts.eta, opts.t_min, opts.t_max());
        verdict.domination(&format!("domination orbit {n}"), c);
    }
    for j in 0..lambda.singularities.len() {
        if !singular_alternative(spec, lambda, j, i, opts, verdict)? {
            verdict.fail(format!("singularity {j}: neither strong manifold of the index-{i} dimensions escapes Λ"));
        }
    }
    Ok(Some(splittings))
}

/// Singular dominated splitting of index `i` on `Λ`.
pub fn check_singular_domination(
    spec: &VectorFieldSpec,
    lambda: &LambdaSample,
    i: usize,
    opts: &CheckOptions,
) -> Result<Verdict> {
    check_index(spec.dim(), i)?;
    if lambda.is_empty() {
        return Err(Error::Precondition("Λ sample is empty".into()));
    }
    let orbits = regular_orbits(spec, lambda, opts)?;
    let mut v = Verdict::new(Notion::SingularDomination, opts);
    v.index = Some(i);
    singular_domination_into(spec, lambda, &orbits, i, opts, &mut v)?;
    Ok(v.finish(opts.strict_vacuous))
}

/// Validation of the neighborhood `V` of the singularities.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct IsolationReport {
    pub radius: f64,
    /// Visits of the sample orbits to `V`.
    pub visits: usize,
    pub longest_visit: f64,
    /// Largest `dmin / (10·r·e^{−κτ})` over visits of duration `τ`; at most 1
    /// when every long visit approaches its singularity as a hyperbolic
    /// saddle forces.
    pub worst_ratio: f64,
    pub pass: bool,
}

/// Slowest approach rate `κ = ab/(a+b)` of a trajectory crossing a ball
/// around a saddle with weakest rates `−a` and `b`.
fn crossing_rate(info: &SingularityInfo) -> f64 {
    match (info.lambda_s, info.lambda_u) {
        (Some(s), Some(u)) => (-s * u) / (u - s),
        (Some(s), None) => -s,
        (None, Some(u)) => u,
        _ => 0.0,
    }
}

pub fn validate_isolation(lambda: &LambdaSample, orbits: &[OrbitSegment], radius: f64) -> IsolationReport {
    let mut visits = 0;
    let mut longest: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for info in &lambda.singularities {
        let kappa = crossing_rate(info);
        for o in orbits {
            let n = o.len();
            let mut k = 0;
            while k < n {
                if (o.state(k) - &info.location).norm() > radius {
                    k += 1;
                    continue;
                }
                let start = k;
                let mut dmin = f64::INFINITY;
                while k < n && (o.state(k) - &info.location).norm() <= radius {
                    dmin = dmin.min((o.state(k) - &info.location).norm());
                    k += 1;
                }
                visits += 1;
                let tau = (k - start) as f64 * o.dt();
                longest = longest.max(tau);
                let bound = 10.0 * radius * (-kappa * tau).exp();
                worst = worst.max(dmin / bound);
            }
        }
    }
    IsolationReport {
        radius,
        visits,
        longest_visit: longest,
        worst_ratio: worst,
        pass: worst <= 1.0,
    }
}

fn v_mask(splitting: &SplittingSample, lambda: &LambdaSample, radius: f64) -> Vec<bool> {
    splitting
        .orbit()
        .states()
        .iter()
        .map(|p| lambda.singularities.iter().any(|s| (p - &s.location).norm() < radius))
        .collect()
}

fn multi_singular_at(
    spec: &VectorFieldSpec,
    lambda: &LambdaSample,
    orbits: &[OrbitSegment],
    i: usize,
    v_radius: f64,
    iso: &IsolationReport,
    opts: &CheckOptions,
) -> Result<Verdict> {
    let mut v = Verdict::new(Notion::MultiSingular, opts);
    v.index = Some(i);
    v.evidence.push(Evidence::Isolation(iso.clone()));
    let splittings = singular_domination_into(spec, lambda, orbits, i, opts, &mut v)?;
    if let Some(splittings) = splittings {
        for (n, s) in splittings.iter().enumerate() {
            let mask = v_mask(s, lambda, v_radius);
            let c = uniform_contraction_test(s, Bundle::N1, false, opts.eta, opts.t_min, opts.t_max(), &mask);
            v.rate(&format!("contraction of N^s outside V, orbit {n}"), c);
            let e = uniform_contraction_test(s, Bundle::N2, true, opts.eta, opts.t_min, opts.t_max(), &mask);
            v.rate(&format!("expansion of N^u outside V, orbit {n}"), e);
        }
        if orbits.is_empty() {
            v.vacuous("rates: no regular points");
        }
    }
    for (j, info) in lambda.singularities.iter().enumerate() {
        v.evidence.push(Evidence::Singularity {
            sigma: j,
            hyperbolic: info.hyperbolic,
            index: info.index,
            lorenz_like: info.lorenz_like,
        });
        if !info.lorenz_like {
            v.fail(format!("singularity {j} is not Lorenz-like"));
        }
    }
    Ok(v)
}

/// Multi-singular hyperbolicity with `V` the union of balls of radius
/// `v_radius` about the singularities of `Λ`. The first passing index
/// candidate is reported.
pub fn check_multi_singular(
    spec: &VectorFieldSpec,
    lambda: &LambdaSample,
    v_radius: f64,
    opts: &CheckOptions,
) -> Result<Verdict> {
    if lambda.is_empty() {
        return Err(Error::Precondition("Λ sample is empty".into()));
    }
    let d = spec.dim();
    let orbits = regular_orbits(spec, lambda, opts)?;
    let iso = validate_isolation(lambda, &orbits, v_radius);
    if !iso.pass {
        return Err(Error::NotIsolating(format!(
            "radius {v_radius}: a visit lingers {:.3}x longer than a hyperbolic crossing allows",
            iso.worst_ratio
        )));
    }
    let mut results = Vec::new();
    for i in opts.index_candidates(d) {
        check_index(d, i)?;
        results.push(multi_singular_at(spec, lambda, &orbits, i, v_radius, &iso, opts)?);
    }
    let strong: Vec<usize> = results
        .iter()
        .filter(|r| r.pass && r.vacuous_flags.is_empty() && r.margin.is_some_and(|m| m > 2.0))
        .filter_map(|r| r.index)
        .collect();
    let pick = results.iter().position(|r| r.pass).unwrap_or(0);
    let mut out = results.swap_remove(pick);
    if strong.len() > 1 {
        out.diagnostics.push(format!("index inconsistency: indices {strong:?} all pass with margin > 2"));
    }
    Ok(out.finish(opts.strict_vacuous))
}

/// Two smallest real parts (with multiplicity) of the blocks in `blocks`.
fn two_weakest(info: &SingularityInfo, keep: impl Fn(usize) -> bool) -> Option<f64> {
    let mut parts: Vec<f64> = Vec::new();
    for (n, b) in info.blocks.iter().enumerate() {
        if keep(n) {
            parts.extend(std::iter::repeat_n(b.real_part, b.dim()));
        }
    }
    parts.sort_by(f64::total_cmp);
    (parts.len() >= 2).then(|| parts[0] + parts[1])
}

/// Sectional hyperbolicity at a zero with `dim E^s = i` (`mirror = false`)
/// or `dim E^u = i`.
fn singular_sectional(info: &SingularityInfo, i: usize, mirror: bool) -> bool {
    if !info.hyperbolic {
        return false;
    }
    let nb = info.blocks.len();
    if !mirror {
        let Some(n) = info.stable_split_at(i) else { return false };
        two_weakest(info, |b| b >= n).is_some_and(|s| s > 0.0)
    } else {
        let Some(n) = info.unstable_split_at(i) else { return false };
        let keep = nb - n;
        let mut parts: Vec<f64> = Vec::new();
        for b in &info.blocks[..keep] {
            parts.extend(std::iter::repeat_n(b.real_part, b.dim()));
        }
        parts.sort_by(|a, b| b.total_cmp(a));
        parts.len() >= 2 && parts[0] + parts[1] < 0.0
    }
}

/// Tangent frames `(E, F, gap rate)` on the coarsened, continued orbit and the
/// orbit truncated to the samples that have frames.
fn tangent_split(
    spec: &VectorFieldSpec,
    orbit: &OrbitSegment,
    i: usize,
    opts: &CheckOptions,
    reverse: bool,
) -> Result<(OrbitSegment, Vec<Matrix>, Vec<Matrix>, f64)> {
    let base = if reverse {
        // Backward continuation is unstable for dissipative fields; the
        // reversed record is used as is and loses its last window.
        orbit.reversed()?
    } else {
        orbit.extended(spec, opts.window)?
    };
    let coarse = base.coarsened(opts.stride);
    let w = ((opts.window / coarse.dt()).round() as usize).max(1);
    let (e, rest, gap) = tangent_contracted_frames(coarse.steps(), w, i)?;
    let kept = e.len().min(coarse.len());
    if kept <= w + 1 {
        return Err(Error::Precondition("orbit shorter than two splitting windows".into()));
    }
    // The dominating bundle is the forward image of any complement of `E`;
    // the first window is discarded while that image converges.
    let mut f = Vec::with_capacity(kept);
    f.push(rest[0].clone());
    for k in 1..kept {
        let next = coarse.step(k - 1) * &f[k - 1];
        f.push(crate::linalg::orthonormalize(&next));
    }
    let trimmed = coarse.slice(w, kept - 1)?;
    Ok((trimmed, e[w..kept].to_vec(), f[w..].to_vec(), gap / coarse.dt()))
}

fn regular_sectional_case(
    spec: &VectorFieldSpec,
    orbits: &[OrbitSegment],
    i: usize,
    mirror: bool,
    opts: &CheckOptions,
    v: &mut Verdict,
) -> Result<bool> {
    let mut ok = true;
    let side = if mirror { "E^u/E^cs" } else { "E^s/E^cu" };
    for (n, orbit) in orbits.iter().enumerate() {
        let (o, e, f, gap) = tangent_split(spec, orbit, i, opts, mirror)?;
        v.evidence.push(Evidence::Splitting {
            label: format!("tangent {side} orbit {n}"),
            index: i,
            min_gap_rate: gap,
            max_residual: f64::NAN,
        });
        if gap < GAP_THRESHOLD {
            v.diagnostics.push(format!("{side}: no tangent gap at {i} on orbit {n}"));
            ok = false;
            continue;
        }
        let c = tangent_contraction_test(&o, &e, opts.eta, opts.t_min, opts.t_max());
        let s = sectional_expansion_test(&o, &f, opts.eta, opts.t_min, opts.t_max(), opts.seed)?;
        let (cone_ok, lam) = cone_invariance_test(
            &o,
            &TangentSplitting { e: e.clone(), f: f.clone() },
            opts.cone_alpha,
            opts.t_min,
            opts.seed,
        )?;
        ok &= c.pass && s.pass && cone_ok;
        v.evidence.push(Evidence::Cone {
            label: format!("{side} orbit {n}"),
            lambda: lam,
            pass: cone_ok,
        });
        v.rate(&format!("{side}: contraction orbit {n}"), c);
        v.rate(&format!("{side}: sectional expansion orbit {n}"), s);
    }
    Ok(ok)
}

/// Uniform hyperbolicity and singular hyperbolicity of `Λ`.
pub fn check_uniform_and_singular(
    spec: &VectorFieldSpec,
    lambda: &LambdaSample,
    opts: &CheckOptions,
) -> Result<(Verdict, Verdict)> {
    if lambda.is_empty() {
        return Err(Error::Precondition("Λ sample is empty".into()));
    }
    let d = spec.dim();
    let orbits = regular_orbits(spec, lambda, opts)?;
    let tau = crate::singularity::default_tau(spec.region());

    let mut uni = Verdict::new(Notion::Uniform, opts);
    for (j, info) in lambda.singularities.iter().enumerate() {
        uni.evidence.push(Evidence::Singularity {
            sigma: j,
            hyperbolic: info.hyperbolic,
            index: info.index,
            lorenz_like: info.lorenz_like,
        });
        if !info.hyperbolic {
            uni.fail(format!("singularity {j} is not hyperbolic"));
        }
        if !orbits.is_empty() && lambda.accumulates_on(&info.location, tau) {
            uni.fail(format!(
                "singularity {j} is accumulated by regular orbits of Λ; the flow direction degenerates"
            ));
        }
    }
    if orbits.is_empty() {
        uni.vacuous("vacuous-regular");
    } else if uni.pass {
        let mut found = None;
        for i in opts.index_candidates(d) {
            check_index(d, i)?;
            let mut trial = Verdict::new(Notion::Uniform, opts);
            let mut ok = true;
            for (n, orbit) in orbits.iter().enumerate() {
                let (o, e, _, gap) = tangent_split(spec, orbit, i, opts, false)?;
                let (ro, eu, _, gap_u) = tangent_split(spec, orbit, d - 1 - i, opts, true)?;
                trial.evidence.push(Evidence::Splitting {
                    label: format!("tangent E^s orbit {n}"),
                    index: i,
                    min_gap_rate: gap,
                    max_residual: f64::NAN,
                });
                trial.evidence.push(Evidence::Splitting {
                    label: format!("tangent E^u orbit {n}"),
                    index: d - 1 - i,
                    min_gap_rate: gap_u,
                    max_residual: f64::NAN,
                });
                if gap < GAP_THRESHOLD || gap_u < GAP_THRESHOLD {
                    trial.fail(format!("no tangent gap at index {i} on orbit {n}"));
                    ok = false;
                    continue;
                }
                let c = tangent_contraction_test(&o, &e, opts.eta, opts.t_min, opts.t_max());
                let x = tangent_contraction_test(&ro, &eu, opts.eta, opts.t_min, opts.t_max());
                ok &= c.pass && x.pass;
                trial.rate(&format!("E^s contraction orbit {n}"), c);
                let mut x = x;
                x.kind = RateKind::Expansion;
                trial.rate(&format!("E^u expansion orbit {n}"), x);
            }
            if ok {
                found = Some((i, trial));
                break;
            } else if found.is_none() && i == opts.index_candidates(d)[0] {
                uni.evidence.extend(trial.evidence.drain(..));
                uni.reasons.extend(trial.reasons.drain(..));
            }
        }
        match found {
            Some((i, trial)) => {
                uni.index = Some(i);
                uni.evidence.extend(trial.evidence);
                uni.margin = trial.margin;
                uni.reasons.clear();
            }
            None => uni.fail("no index with a hyperbolic tangent splitting E^s ⊕ ℝX ⊕ E^u"),
        }
    }

    let mut sh = Verdict::new(Notion::SingularHyperbolic, opts);
    let mut found = None;
    'outer: for i in opts.index_candidates(d) {
        check_index(d, i)?;
        for mirror in [false, true] {
            let dim = if mirror { d - 1 - i } else { i };
            let mut trial = Verdict::new(Notion::SingularHyperbolic, opts);
            let mut ok = true;
            for (j, info) in lambda.singularities.iter().enumerate() {
                let pass = singular_sectional(info, dim, mirror);
                trial.evidence.push(Evidence::SingularSplitting {
                    sigma: j,
                    case: if mirror { "E^cs ⊕ E^u" } else { "E^s ⊕ E^cu" }.into(),
                    pass,
                });
                ok &= pass;
            }
            if ok {
                ok &= regular_sectional_case(spec, &orbits, dim, mirror, opts, &mut trial)?;
            }
            if ok {
                found = Some((i, mirror, trial));
                break 'outer;
            }
            let failed: Vec<String> = trial
                .evidence
                .iter()
                .filter_map(|e| match e {
                    Evidence::SingularSplitting { sigma, pass: false, .. } => Some(format!("singularity {sigma}")),
                    Evidence::Rate { label, certificate } if !certificate.pass => Some(label.clone()),
                    Evidence::Cone { label, pass: false, lambda } => Some(format!("cone {label} (λ = {lambda:.3e})")),
                    _ => None,
                })
                .chain(trial.diagnostics.iter().cloned())
                .collect();
            sh.diagnostics.push(format!(
                "index {i} {} case fails: {}",
                if mirror { "E^cs ⊕ E^u" } else { "E^s ⊕ E^cu" },
                failed.join("; ")
            ));
        }
    }
    match found {
        Some((i, mirror, trial)) => {
            sh.index = Some(i);
            sh.evidence = trial.evidence;
            sh.margin = trial.margin;
            sh.diagnostics.extend(trial.diagnostics);
            sh.diagnostics
                .push(format!("passes in the {} case", if mirror { "E^cs ⊕ E^u" } else { "E^s ⊕ E^cu" }));
        }
        None => sh.fail("neither sectional case holds at any index"),
    }
    if orbits.is_empty() {
        sh.vacuous("vacuous-regular");
    }
    Ok((uni.finish(opts.strict_vacuous), sh.finish(opts.strict_vacuous)))
}

/// Lines of `B(X, Λ)`: field directions over regular samples and projective
/// grids of the center spaces.
#[derive(Clone, Debug)]
pub struct ExtendedInvariantSample {
    pub lines: Vec<LineElement>,
    pub regular_lines: usize,
    pub center_spaces: Vec<CenterSpace>,
}

pub fn extended_invariant_sample(
    spec: &VectorFieldSpec,
    lambda: &LambdaSample,
    opts: &CheckOptions,
) -> Result<ExtendedInvariantSample> {
    if lambda.singularities.iter().any(|s| !s.hyperbolic) {
        return Err(Error::Precondition("every singularity of Λ must be hyperbolic".into()));
    }
    let mut lines = Vec::new();
    for p in &lambda.points {
        if spec.rhs(p).norm() > crate::poincare::NEAR_SINGULAR {
            lines.push(LineElement::along_field(spec, p)?);
        }
    }
    let regular_lines = lines.len();
    let mut center_spaces = Vec::new();
    for info in &lambda.singularities {
        let cs = center_space(spec, info, lambda, &opts.escape, opts.center_grid)?;
        lines.extend(cs.lines.iter().cloned());
        center_spaces.push(cs);
    }
    Ok(ExtendedInvariantSample {
        lines,
        regular_lines,
        center_spaces,
    })
}

/// Growth profiles along one line orbit of `φ̂` (a regular orbit or the
/// orbit of a line at a singularity), with cumulative `log h_σ` per
/// singularity of `Λ`.
struct Track {
    label: String,
    dt: f64,
    /// `(start, log|Ψ̂|𝒩ˢ|, log m(Ψ̂|𝒩ᵘ))` per framed start, `s = 1..`.
    starts: Vec<(usize, Vec<f64>, Vec<f64>)>,
    renorm: Vec<Vec<f64>>,
}

impl Track {
    fn profiles(
        &self,
        set: &[usize],
        expand: bool,
        eta: f64,
        lo: usize,
        hi: usize,
    ) -> Vec<(usize, Vec<f64>)> {
        self.starts
            .iter()
            .filter_map(|(k, g1, g2)| {
                let s_max = hi.min(g1.len());
                if s_max < lo {
                    return None;
                }
                let prof = (lo..=s_max)
                    .map(|s| {
                        let h: f64 = set.iter().map(|&j| self.renorm[j][k + s] - self.renorm[j][*k]).sum();
                        if expand {
                            eta * s as f64 * self.dt - g2[s - 1] - h
                        } else {
                            eta * s as f64 * self.dt + g1[s - 1] + h
                        }
                    })
                    .collect();
                Some((*k, prof))
            })
            .collect()
    }

    fn domination(&self, eta: f64, lo: usize, hi: usize) -> Vec<(usize, Vec<f64>)> {
        self.starts
            .iter()
            .filter_map(|(k, g1, g2)| {
                let s_max = hi.min(g1.len());
                (s_max >= lo).then(|| {
                    (*k, (lo..=s_max).map(|s| eta * s as f64 * self.dt + g1[s - 1] - g2[s - 1]).collect())
                })
            })
            .collect()
    }
}

fn rate_cert(kind: RateKind, opts: &CheckOptions, tracks: &[Track], f: impl Fn(&Track, usize, usize) -> Vec<(usize, Vec<f64>)>) -> RateCertificate {
    let mut all = Vec::new();
    let mut dt = opts.dt;
    let mut lo_any = 1;
    // Profiles of different tracks are reduced together; each start index
    // is offset so the reported worst sample stays unambiguous per track.
    let mut offset = 0;
    for t in tracks {
        let (lo, hi) = step_range(t.dt, opts.t_min, opts.t_max());
        dt = t.dt;
        lo_any = lo;
        let len = t.renorm.first().map_or(0, |r| r.len());
        for (k, p) in f(t, lo, hi) {
            all.push((k + offset, p));
        }
        offset += len.max(1);
    }
    RateCertificate::from_profiles(kind, opts.eta, opts.t_min, opts.t_max(), all, lo_any, dt)
}

fn track_from_splitting(
    spec: &VectorFieldSpec,
    label: String,
    s: &SplittingSample,
    bumps: &[Bump],
    hi: usize,
) -> Track {
    let last = s.growth_end();
    let starts = s
        .frame_indices()
        .par_iter()
        .enumerate()
        .filter_map(|(j, &k)| {
            let s_max = hi.min(last.saturating_sub(k));
            if s_max == 0 {
                return None;
            }
            let g1 = s.n1_growth(j, s_max);
            let g2 = s.n2_growth(j, s_max);
            Some((k, g1.iter().map(|g| g.0).collect(), g2.iter().map(|g| g.1).collect()))
        })
        .collect();
    let renorm = bumps.iter().map(|b| renorm_log_along_orbit(spec, s.orbit(), b)).collect();
    Track {
        label,
        dt: s.orbit().dt(),
        starts,
        renorm,
    }
}

/// The orbit of the line `ℝu` at the zero `σ` under `φ̂`, with frames from
/// the windowed contracted subspaces of `Ψ̂`.
#[allow(clippy::too_many_arguments)]
fn line_track(
    spec: &VectorFieldSpec,
    sigma: &SingularityInfo,
    u: &Vector,
    i: usize,
    bumps: &[Bump],
    opts: &CheckOptions,
    dt: f64,
    label: String,
) -> Result<(Track, f64)> {
    let (_, a) = tangent_flow(spec, &sigma.location, dt, opts.tol)?;
    let w = ((opts.window / dt).round() as usize).max(5);
    let (_, hi) = step_range(dt, opts.t_min, opts.t_max());
    let n = hi + w + 1;
    let mut dirs = vec![u.normalize()];
    let mut growth = vec![0.0];
    for _ in 1..n {
        let next = &a * dirs.last().unwrap();
        let g = next.norm();
        growth.push(growth.last().unwrap() + g.ln());
        dirs.push(next / g);
    }
    let steps = vec![a.clone(); n - 1];
    let cocycle = ProjectedCocycle::along_lines(&steps, &dirs)?;
    let frames: Vec<usize> = (0..n - w).step_by(opts.stride.max(1)).collect();
    let end = *frames.last().unwrap();
    let dim = cocycle.steps()[0].nrows();
    let blocks = if i == 0 || i == dim {
        Vec::new()
    } else {
        let (v, _, _, _) = contracted_subspace(cocycle.steps(), cocycle.inverses(), end, w, i, None);
        swept_blocks(cocycle.inverses(), &v, end)
    };
    let res: Vec<(usize, Vec<f64>, Vec<f64>, f64)> = frames
        .par_iter()
        .filter(|&&k| k < end || blocks.is_empty())
        .map(|&k| {
            let s_max = hi.min(if blocks.is_empty() { n - 1 - k } else { end - k });
            let dim = cocycle.steps()[k].nrows();
            if i == 0 || i == dim {
                // One bundle is trivial and the other is all of 𝒩.
                let full: Vec<f64> = frame_growth(cocycle.steps(), k, &Matrix::identity(dim, dim), s_max)
                    .iter()
                    .map(|g| if i == 0 { g.1 } else { g.0 })
                    .collect();
                let empty_s = vec![f64::NEG_INFINITY; s_max];
                let empty_u = vec![f64::INFINITY; s_max];
                return if i == 0 {
                    (k, empty_s, full, f64::INFINITY)
                } else {
                    (k, full, empty_u, f64::INFINITY)
                };
            }
            let (_, rest, gap, _) = contracted_subspace(cocycle.steps(), cocycle.inverses(), k, w, i, None);
            let g1 = block_growth(&blocks, k, s_max);
            let g2 = frame_growth(cocycle.steps(), k, &rest, s_max);
            (k, g1.iter().map(|g| g.0).collect(), g2.iter().map(|g| g.1).collect(), gap / dt)
        })
        .collect();
    let min_gap = res.iter().map(|r| r.3).fold(f64::INFINITY, f64::min);
    let starts = res.into_iter().map(|(k, a, b, _)| (k, a, b)).collect();
    let renorm = bumps
        .iter()
        .map(|b| {
            let rho = b.rho(sigma.location.as_slice());
            growth.iter().map(|g| rho * g).collect()
        })
        .collect();
    Ok((
        Track {
            label,
            dt,
            starts,
            renorm,
        },
        min_gap,
    ))
}

fn subsets(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u64..(1u64 << n.min(16))).map(move |mask| (0..n).filter(|j| mask >> j & 1 == 1).collect())
}

/// Bonatti–da Luz multi-singular hyperbolicity at index `i` with bump radii
/// `(r_in, r_out)` for the renormalization cocycles.
///
/// The renormalizing sets are searched: the index rule
/// `S₊ = {ind = i+1}`, `S₋ = {ind = i}` is tried first, then every other
/// subset; the verdict reports the sets used and whether they match the rule.
pub fn check_bdl_multi_singular(
    spec: &VectorFieldSpec,
    lambda: &LambdaSample,
    i: usize,
    bump_radii: (f64, f64),
    opts: &CheckOptions,
) -> Result<Verdict> {
    let d = spec.dim();
    check_index(d, i)?;
    if lambda.is_empty() {
        return Err(Error::Precondition("Λ sample is empty".into()));
    }
    if lambda.singularities.iter().any(|s| !s.hyperbolic) {
        return Err(Error::Precondition("every singularity of Λ must be hyperbolic".into()));
    }
    let mut v = Verdict::new(Notion::BdlMultiSingular, opts);
    v.index = Some(i);
    let sings = &lambda.singularities;
    for (j, s) in sings.iter().enumerate() {
        v.evidence.push(Evidence::Singularity {
            sigma: j,
            hyperbolic: s.hyperbolic,
            index: s.index,
            lorenz_like: s.lorenz_like,
        });
        if s.index != i && s.index != i + 1 {
            v.fail(format!(
                "singularity {j} has index {} ∉ {{{i}, {}}}, incompatible with the splitting dimensions",
                s.index,
                i + 1
            ));
        }
    }
    if !v.pass {
        return Ok(v.finish(opts.strict_vacuous));
    }
    let bumps: Vec<Bump> = sings
        .iter()
        .map(|s| Bump::new(s.location.clone(), bump_radii.0, bump_radii.1))
        .collect::<Result<_>>()?;
    let orbits = regular_orbits(spec, lambda, opts)?;
    let mut tracks = Vec::new();
    for (n, orbit) in orbits.iter().enumerate() {
        let s = match finite_time_splitting_with(orbit, spec, i, &opts.splitting()) {
            Ok(s) => s,
            Err(Error::NoGap { gap, .. }) => {
                v.fail(format!("no index-{i} gap (orbit {n}: smallest gap rate {gap:.3e})"));
                return Ok(v.finish(opts.strict_vacuous));
            }
            Err(e) => return Err(e),
        };
        v.evidence.push(Evidence::Splitting {
            label: format!("orbit {n}"),
            index: i,
            min_gap_rate: s.min_gap_rate(),
            max_residual: s.max_residual(),
        });
        let (_, hi) = step_range(orbit.dt(), opts.t_min, opts.t_max());
        tracks.push(track_from_splitting(spec, format!("orbit {n}"), &s, &bumps, hi));
    }
    let line_dt = orbits.first().map_or(opts.dt, |o| o.dt());
    for (j, s) in sings.iter().enumerate() {
        let cs = center_space(spec, s, lambda, &opts.escape, opts.center_grid)?;
        for rep in &cs.escape_reports {
            v.evidence.push(Evidence::Escape {
                sigma: j,
                report: rep.clone(),
            });
        }
        for (n, line) in cs.lines.iter().enumerate() {
            let (t, gap) = line_track(
                spec,
                s,
                line.direction(),
                i,
                &bumps,
                opts,
                line_dt,
                format!("center line {n} at singularity {j}"),
            )?;
            v.evidence.push(Evidence::Splitting {
                label: t.label.clone(),
                index: i,
                min_gap_rate: gap,
                max_residual: f64::NAN,
            });
            if gap < GAP_THRESHOLD {
                v.fail(format!("no index-{i} gap over the center space of singularity {j}"));
            }
            tracks.push(t);
        }
    }
    if tracks.is_empty() {
        v.vacuous("B(X,Λ) is empty");
    }
    if !v.pass {
        return Ok(v.finish(opts.strict_vacuous));
    }
    let dom = rate_cert(RateKind::Contraction, opts, &tracks, |t, lo, hi| t.domination(opts.eta, lo, hi));
    v.margin_from(dom.worst_log_margin, dom.vacuous);
    if !dom.pass {
        v.fail(format!("domination over B(X,Λ) fails (worst log ratio {:.4})", dom.worst_log_margin));
    }
    let dom_cert = DominationCertificate {
        eta: dom.eta,
        t_min: dom.t_min,
        t_max: dom.t_max,
        index: i,
        worst_ratio: dom.worst_log_margin.exp(),
        log_worst_ratio: dom.worst_log_margin,
        samples_tested: dom.pairs_tested,
        pass: dom.pass,
        vacuous: dom.vacuous,
        worst_sample: dom.worst_sample,
        worst_time: dom.worst_time,
        per_t: Vec::new(),
    };
    v.evidence.push(Evidence::Domination {
        label: "extended splitting over B(X,Λ)".into(),
        certificate: dom_cert,
    });

    let rule_plus: Vec<usize> = (0..sings.len()).filter(|&j| sings[j].index == i + 1).collect();
    let rule_minus: Vec<usize> = (0..sings.len()).filter(|&j| sings[j].index == i).collect();
    let search = |rule: &Vec<usize>, expand: bool| -> (Option<Vec<usize>>, RateCertificate) {
        let kind = if expand { RateKind::Expansion } else { RateKind::Contraction };
        let eval = |set: &Vec<usize>| rate_cert(kind, opts, &tracks, |t, lo, hi| t.profiles(set, expand, opts.eta, lo, hi));
        let first = eval(rule);
        if first.pass {
            return (Some(rule.clone()), first);
        }
        for set in subsets(sings.len()) {
            if &set == rule {
                continue;
            }
            let c = eval(&set);
            if c.pass {
                return (Some(set), c);
            }
        }
        (None, first)
    };
    let (s_plus, c_plus) = search(&rule_plus, false);
    let (s_minus, c_minus) = search(&rule_minus, true);
    let selection = Selection {
        plus_matches_rule: s_plus.as_ref() == Some(&rule_plus),
        minus_matches_rule: s_minus.as_ref() == Some(&rule_minus),
        s_plus,
        s_minus,
        rule_plus,
        rule_minus,
    };
    if selection.s_plus.is_some() && !selection.plus_matches_rule {
        v.diagnostics
            .push("contraction needs a renormalizing set other than {ind = i+1}".into());
    }
    if selection.s_minus.is_some() && !selection.minus_matches_rule {
        v.diagnostics
            .push("expansion needs a renormalizing set other than {ind = i}".into());
    }
    v.rate("renormalized contraction of N^s over B(X,Λ)", c_plus);
    v.rate("renormalized expansion of N^u over B(X,Λ)", c_minus);
    v.evidence.push(Evidence::Selection(selection));
    Ok(v.finish(opts.strict_vacuous))
}

/// Outcome of the renormalized contraction at a single zero over the
/// projective space of its center-stable (or center-unstable) space.
#[derive(Clone, Debug, Serialize)]
pub struct CocycleProbe {
    /// `"center-unstable"`: lines in `ℙ(E^s ⊕ E^c)` with `E^c` the weakest
    /// unstable block, `dim 𝒩ˢ = dim E^s`; `"center-stable"` is the mirror.
    pub case: Option<String>,
    pub pass: bool,
    pub certificates: Vec<(String, RateCertificate)>,
}

/// Renormalized contraction (or expansion) of `Ψ̂` over the lines of the
/// center-stable (center-unstable) projective space of `σ`, with the
/// cocycle of `σ` itself.
pub fn lorenz_cocycle_probe(spec: &VectorFieldSpec, info: &SingularityInfo, opts: &CheckOptions) -> Result<CocycleProbe> {
    if !info.hyperbolic {
        return Err(Error::Precondition("probe needs a hyperbolic zero".into()));
    }
    let d = info.dim();
    let bump = Bump::new(info.location.clone(), 1.0, 2.0)?;
    let stable: Vec<_> = info.stable_blocks().collect();
    let unstable: Vec<_> = info.unstable_blocks().collect();
    let p = stable.iter().map(|b| b.dim()).sum::<usize>();
    let q = d - p;
    let mut certs = Vec::new();
    let mut case = None;
    let forms: [(&str, bool); 2] = [("center-unstable", false), ("center-stable", true)];
    for (name, expand) in forms {
        let (frame_blocks, i): (Vec<_>, usize) = if !expand {
            let Some(c) = unstable.first() else { continue };
            let mut b: Vec<_> = stable.clone();
            b.push(c);
            (b, p)
        } else {
            let Some(c) = stable.last() else { continue };
            let mut b: Vec<_> = unstable.clone();
            b.push(c);
            (b, d - 1 - q)
        };
        if (!expand && i == 0) || (expand && i == d - 1) {
            continue;
        }
        let cols: Vec<Vector> = frame_blocks
            .iter()
            .flat_map(|b| (0..b.dim()).map(move |c| b.frame.column(c).into_owned()))
            .collect();
        let frame = crate::linalg::orthonormalize(&Matrix::from_columns(&cols));
        let mut tracks = Vec::new();
        let mut gap_ok = true;
        for (n, u) in crate::singularity::projective_grid(&frame, opts.center_grid).iter().enumerate() {
            let (t, gap) = line_track(spec, info, u, i, std::slice::from_ref(&bump), opts, opts.dt, format!("line {n}"))?;
            gap_ok &= gap >= GAP_THRESHOLD;
            tracks.push(t);
        }
        let kind = if expand { RateKind::Expansion } else { RateKind::Contraction };
        let c = rate_cert(kind, opts, &tracks, |t, lo, hi| t.profiles(&[0], expand, opts.eta, lo, hi));
        let ok = gap_ok && c.pass && !c.vacuous;
        certs.push((name.to_string(), c));
        if ok && case.is_none() {
            case = Some(name.to_string());
        }
    }
    Ok(CocycleProbe {
        pass: case.is_some(),
        case,
        certificates: certs,
    })
}

/// Consistency of the verdicts with the two equivalences relating uniform,
/// singular and multi-singular hyperbolicity.
#[derive(Clone, Debug, Serialize)]
pub struct TheoremCReport {
    pub applicable: bool,
    pub reason: Option<String>,
    pub uniform: Option<bool>,
    pub multi_singular: Option<bool>,
    pub singular_hyperbolic: Option<bool>,
    pub same_index: Option<bool>,
    /// `uniform ⟺ (multi-singular ∧ no singularity)`.
    pub item1_consistent: Option<bool>,
    /// `singular hyperbolic ⟺ (multi-singular ∧ all indices equal)`.
    pub item2_consistent: Option<bool>,
    pub inconsistencies: Vec<String>,
}

/// Whether some sample of `Λ` lies near the local linear manifold
/// `σ + E`: within `0.2·diam` of `σ`, beyond `2τ`, and at distance from
/// `σ + E` at most `max(τ, 0.1·|p − σ|)`.
pub fn manifold_meets_lambda(spec: &VectorFieldSpec, info: &SingularityInfo, e: &Matrix, lambda: &LambdaSample) -> bool {
    let tau = crate::singularity::default_tau(spec.region());
    let reach = 0.2 * spec.region().diam();
    lambda.points.iter().any(|p| {
        let w = p - &info.location;
        let r = w.norm();
        if r <= 2.0 * tau || r > reach {
            return false;
        }
        let off = (&w - e * (e.transpose() * &w)).norm();
        off <= tau.max(0.1 * r)
    })
}

pub fn theorem_c_crosscheck(
    spec: &VectorFieldSpec,
    lambda: &LambdaSample,
    v_radius: f64,
    opts: &CheckOptions,
) -> Result<TheoremCReport> {
    let mut rep = TheoremCReport {
        applicable: true,
        reason: None,
        uniform: None,
        multi_singular: None,
        singular_hyperbolic: None,
        same_index: None,
        item1_consistent: None,
        item2_consistent: None,
        inconsistencies: Vec::new(),
    };
    for (j, s) in lambda.singularities.iter().enumerate() {
        if !s.hyperbolic {
            rep.applicable = false;
            rep.reason = Some(format!("singularity {j} is not hyperbolic"));
            break;
        }
        let es = s.strong_stable_frame(s.stable_block_count());
        let eu = s.strong_unstable_frame(s.unstable_block_count());
        // The closure of an unstable branch contains that branch of W^u.
        let branch = matches!(&lambda.provenance, crate::singularity::Provenance::UnstableBranch { sigma, .. }
            if sigma.iter().zip(s.location.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
        let meets_u = branch || manifold_meets_lambda(spec, s, &eu, lambda);
        if !manifold_meets_lambda(spec, s, &es, lambda) || !meets_u {
            rep.applicable = false;
            rep.reason = Some(format!(
                "singularity {j}: W^s or W^u meets Λ only at the singularity (no sample near the local manifold)"
            ));
            break;
        }
    }
    if !rep.applicable {
        return Ok(rep);
    }
    let multi = check_multi_singular(spec, lambda, v_radius, opts)?;
    let (uni, sh) = check_uniform_and_singular(spec, lambda, opts)?;
    let singular = !lambda.singularities.is_empty();
    let same = lambda
        .singularities
        .windows(2)
        .all(|w| w[0].index == w[1].index);
    rep.uniform = Some(uni.pass);
    rep.multi_singular = Some(multi.pass);
    rep.singular_hyperbolic = Some(sh.pass);
    rep.same_index = Some(same);
    let item1 = uni.pass == (multi.pass && !singular);
    let item2 = sh.pass == (multi.pass && same);
    rep.item1_consistent = Some(item1);
    rep.item2_consistent = Some(item2);
    if !item1 {
        rep.inconsistencies.push(format!(
            "uniform = {} but multi-singular = {} with {} singularities",
            uni.pass,
            multi.pass,
            lambda.singularities.len()
        ));
    }
    if !item2 {
        rep.inconsistencies.push(format!(
            "singular hyperbolic = {} but multi-singular = {} and equal indices = {same}",
            sh.pass, multi.pass
        ));
    }
    Ok(rep)
}

/// Pass rate and margins of a verdict under small perturbations.
#[derive(Clone, Debug, Serialize)]
pub struct RobustnessReport {
    pub delta: f64,
    pub trials: usize,
    pub passes: usize,
    pub base_margin: Option<f64>,
    pub margins: Vec<Option<f64>>,
    pub worst_margin: Option<f64>,
    /// Worst trial margin over the base margin.
    pub worst_margin_fraction: Option<f64>,
    pub at_margin_boundary: bool,
    pub errors: Vec<String>,
}

/// Random polynomial field of degree at most 2 with `C¹` size `delta` on
/// the region of `spec`.
pub fn polynomial_bump(spec: &VectorFieldSpec, delta: f64, rng: &mut ChaCha8Rng) -> Result<PolynomialField> {
    let d = spec.dim();
    let mut exps: Vec<Vec<u32>> = vec![vec![0; d]];
    for a in 0..d {
        let mut e = vec![0; d];
        e[a] = 1;
        exps.push(e);
        for b in a..d {
            let mut e = vec![0; d];
            e[a] += 1;
            e[b] += 1;
            exps.push(e);
        }
    }
    let region = spec.region();
    let center = region.center();
    let half: Vec<f64> = (0..d).map(|k| 0.5 * (region.upper[k] - region.lower[k])).collect();
    // Monomials in the region-normalized coordinates keep all terms of
    // comparable size before the overall rescaling.
    let comps: Vec<Vec<Monomial>> = (0..d)
        .map(|_| {
            exps.iter()
                .map(|e| {
                    let c: f64 = rng.random_range(-1.0..1.0);
                    Monomial {
                        coeff: c,
                        powers: e.clone(),
                    }
                })
                .collect()
        })
        .collect();
    // Expand (x−c)/h products into monomials of x.
    let mut expanded: Vec<Vec<Monomial>> = vec![Vec::new(); d];
    for (a, comp) in comps.iter().enumerate() {
        for m in comp {
            let mut terms: Vec<(f64, Vec<u32>)> = vec![(m.coeff, vec![0; d])];
            for (k, &p) in m.powers.iter().enumerate() {
                for _ in 0..p {
                    let mut next = Vec::new();
                    for (c, e) in &terms {
                        let mut e1 = e.clone();
                        e1[k] += 1;
                        next.push((c / half[k], e1));
                        next.push((-c * center[k] / half[k], e.clone()));
                    }
                    terms = next;
                }
            }
            for (c, e) in terms {
                if let Some(x) = expanded[a].iter_mut().find(|x| x.powers == e) {
                    x.coeff += c;
                } else {
                    expanded[a].push(Monomial { coeff: c, powers: e });
                }
            }
        }
    }
    let raw = PolynomialField::new(d, expanded.clone())?;
    let size = crate::field::polynomial(raw, region.clone())?.c1_size(9);
    let scale = if size > 0.0 { delta / size } else { 0.0 };
    for comp in expanded.iter_mut() {
        for m in comp.iter_mut() {
            m.coeff *= scale;
        }
    }
    PolynomialField::new(d, expanded)
}

/// Scales every scalar parameter by `1 + δu`, `u` uniform in `[−1, 1]`,
/// and adds a polynomial bump of `C¹` size `δ`.
pub fn perturbed_field(spec: &VectorFieldSpec, delta: f64, rng: &mut ChaCha8Rng) -> Result<VectorFieldSpec> {
    let mut params = spec.params().clone();
    for v in params.values_mut() {
        match v {
            ParamValue::Scalar(x) => *x *= 1.0 + delta * rng.random_range(-1.0..1.0),
            ParamValue::Matrix(rows) => {
                for row in rows.iter_mut() {
                    for x in row.iter_mut() {
                        *x *= 1.0 + delta * rng.random_range(-1.0..1.0);
                    }
                }
            }
        }
    }
    let base = if crate::field::BUILTIN_NAMES.contains(&spec.name()) {
        crate::field::builtin(spec.name(), &params)?.with_region(spec.region().clone())?
    } else {
        spec.clone()
    };
    if delta == 0.0 {
        return Ok(base);
    }
    let bump = polynomial_bump(spec, delta, rng)?;
    base.with_perturbation(bump)
}

/// Re-runs `run` on `trials` perturbations of size `delta` and compares
/// the verdict margins with the base margin. `run` regenerates `Λ` and
/// applies the fixed `(η, T)` of the base certificate.
pub fn robustness_probe<F>(spec: &VectorFieldSpec, base: &Verdict, delta: f64, trials: usize, seed: u64, run: F) -> RobustnessReport
where
    F: Fn(&VectorFieldSpec) -> Result<Verdict> + Sync,
{
    let fields: Vec<Result<VectorFieldSpec>> = (0..trials)
        .map(|n| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5EED_0000 + n as u64));
            perturbed_field(spec, delta, &mut rng)
        })
        .collect();
    let results: Vec<Result<Verdict>> = fields
        .into_iter()
        .map(|f| f.and_then(|f| run(&f)))
        .collect();
    let mut passes = 0;
    let mut margins = Vec::new();
    let mut errors = Vec::new();
    for (n, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => {
                if v.pass {
                    passes += 1;
                }
                margins.push(v.margin);
            }
            Err(e) => {
                errors.push(format!("trial {n}: {e}"));
                margins.push(None);
            }
        }
    }
    let worst = margins
        .iter()
        .map(|m| m.unwrap_or(f64::NEG_INFINITY))
        .fold(f64::INFINITY, f64::min);
    let worst_margin = (trials > 0).then_some(worst);
    let fraction = match (base.margin, worst_margin) {
        (Some(b), Some(w)) if b > 0.0 => Some(w / b),
        _ => None,
    };
    RobustnessReport {
        delta,
        trials,
        passes,
        base_margin: base.margin,
        margins,
        worst_margin,
        worst_margin_fraction: fraction,
        at_margin_boundary: base.margin.is_some_and(|m| m < 0.05),
        errors,
    }
}

/// Runs `run` over an `(η, T)` grid (in the given order) and returns the
/// first passing verdict, or the last one when none passes.
pub fn grid_search<F>(grid: &[(f64, f64)], run: F) -> Result<Verdict>
where
    F: Fn(f64, f64) -> Result<Verdict>,
{
    let mut last = None;
    for &(eta, t) in grid {
        let v = run(eta, t)?;
        if v.pass {
            return Ok(v);
        }
        last = Some(v);
    }
    last.ok_or_else(|| Error::Precondition("empty (η, T) grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{builtin, default_params, diagonal};
    use crate::singularity::classify_singularity;

    fn single_point(diag: &[f64]) -> (VectorFieldSpec, LambdaSample) {
        let f = diagonal(diag).unwrap();
        let info = classify_singularity(&f, &Vector::zeros(diag.len())).unwrap();
        (f, LambdaSample::from_points(vec![], vec![info], 0.0))
    }

    #[test]
    fn single_singularity_domination_is_vacuous() {
        let (f, lam) = single_point(&[-2.0, -1.0, 1.0]);
        let v = check_singular_domination(&f, &lam, 1, &CheckOptions::new(0.5, 1.0)).unwrap();
        assert!(v.pass);
        assert!(!v.vacuous_flags.is_empty());
        let mut strict = CheckOptions::new(0.5, 1.0);
        strict.strict_vacuous = true;
        assert!(!check_singular_domination(&f, &lam, 1, &strict).unwrap().pass);
    }

    #[test]
    fn non_lorenz_like_fails_multi_singular() {
        let (f, lam) = single_point(&[-1.0, -1.0, 1.0]);
        let v = check_multi_singular(&f, &lam, 0.2, &CheckOptions::new(0.5, 1.0)).unwrap();
        assert!(!v.pass);
        assert!(v.reasons.iter().any(|r| r.contains("Lorenz-like")));
    }

    #[test]
    fn single_hyperbolic_zero_is_uniform_vacuously() {
        let (f, lam) = single_point(&[-2.0, -1.0, 1.0]);
        let (u, _) = check_uniform_and_singular(&f, &lam, &CheckOptions::new(0.5, 1.0)).unwrap();
        assert!(u.pass);
        assert!(u.vacuous_flags.contains(&"vacuous-regular".to_string()));
    }

    #[test]
    fn extended_sample_of_isolated_zero_is_empty() {
        let (f, lam) = single_point(&[-2.0, -1.0, 1.0]);
        let b = extended_invariant_sample(&f, &lam, &CheckOptions::new(0.5, 1.0)).unwrap();
        assert!(b.lines.is_empty());
    }

    #[test]
    fn cocycle_probe_matches_lorenz_like_flag() {
        let mut opts = CheckOptions::new(0.1, 1.0);
        opts.dt = 0.05;
        opts.center_grid = 8;
        for diag in [[-3.0, -1.0, 2.0], [-1.0, -1.0, 1.0], [-2.0, 1.0, 3.0], [-4.0, -3.0, 1.0]] {
            let f = diagonal(&diag).unwrap();
            let info = classify_singularity(&f, &Vector::zeros(3)).unwrap();
            let p = lorenz_cocycle_probe(&f, &info, &opts).unwrap();
            assert_eq!(p.pass, info.lorenz_like, "{diag:?}");
        }
    }

    #[test]
    fn incompatible_index_fails_bdl() {
        let (f, lam) = single_point(&[-2.0, -1.0, -0.5, 1.0]);
        let v = check_bdl_multi_singular(&f, &lam, 1, (0.1, 0.2), &CheckOptions::new(0.5, 1.0)).unwrap();
        assert!(!v.pass);
    }

    #[test]
    fn zero_perturbation_keeps_field() {
        let f = builtin("lorenz", &default_params("lorenz").unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = perturbed_field(&f, 0.0, &mut rng).unwrap();
        assert_eq!(f, g);
        let h = perturbed_field(&f, 0.01, &mut rng).unwrap();
        let x = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        let diff = (f.rhs(&x) - h.rhs(&x)).norm();
        assert!(diff > 0.0 && diff < 1.0);
    }
}
