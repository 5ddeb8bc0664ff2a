//! Box coverings and ε-pseudo-orbit graphs approximating chain recurrence
//! classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Region, Vector, VectorFieldSpec};
use crate::ode::flow;
use crate::singularity::{find_singularities, LambdaSample, Provenance, SingularityInfo};

/// Spacing of the jump-time grid `{1, 1.5, …, T_edge}`.
pub const EDGE_TIME_STEP: f64 = 0.5;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BoxGraphOptions {
    /// Boxes per axis.
    pub resolution: usize,
    /// Jump tolerance; default `1.5·` box diameter.
    pub eps: Option<f64>,
    pub t_edge: f64,
    /// Random samples per box besides its corners and center.
    pub jitter: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for BoxGraphOptions {
    fn default() -> Self {
        BoxGraphOptions {
            resolution: 64,
            eps: None,
            t_edge: 3.0,
            jitter: 2,
            seed: 0,
            tol: 1e-8,
        }
    }
}

/// Directed graph on a uniform grid of boxes: `a → b` when some sample of
/// `a` flowed for a grid time `t ≥ 1` lands within `ε` of `b`.
#[derive(Clone, Debug)]
pub struct BoxGraph {
    region: Region,
    resolution: usize,
    eps: f64,
    t_edge: f64,
    edges: Vec<Vec<usize>>,
    /// Sample trajectories abandoned after a blow-up.
    pub dropped: usize,
}

impl BoxGraph {
    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn t_edge(&self) -> f64 {
        self.t_edge
    }

    pub fn box_count(&self) -> usize {
        self.resolution.pow(self.region.dim() as u32)
    }

    fn widths(&self) -> Vec<f64> {
        (0..self.region.dim())
            .map(|a| (self.region.upper[a] - self.region.lower[a]) / self.resolution as f64)
            .collect()
    }

    pub fn box_diam(&self) -> f64 {
        self.widths().iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    fn coords(&self, mut b: usize) -> Vec<usize> {
        let mut c = Vec::with_capacity(self.region.dim());
        for _ in 0..self.region.dim() {
            c.push(b % self.resolution);
            b /= self.resolution;
        }
        c
    }

    fn index(&self, c: &[usize]) -> usize {
        c.iter().rev().fold(0, |acc, &i| acc * self.resolution + i)
    }

    /// Lower and upper corners of box `b`.
    pub fn bounds(&self, b: usize) -> (Vector, Vector) {
        let w = self.widths();
        let c = self.coords(b);
        let lo = Vector::from_fn(w.len(), |a, _| self.region.lower[a] + c[a] as f64 * w[a]);
        let hi = Vector::from_fn(w.len(), |a, _| self.region.lower[a] + (c[a] + 1) as f64 * w[a]);
        (lo, hi)
    }

    pub fn center(&self, b: usize) -> Vector {
        let (lo, hi) = self.bounds(b);
        (lo + hi) * 0.5
    }

    /// The box containing `x`, if `x` lies in the region.
    pub fn locate(&self, x: &Vector) -> Option<usize> {
        if !self.region.contains(x.as_slice()) {
            return None;
        }
        let w = self.widths();
        let c: Vec<usize> = (0..w.len())
            .map(|a| (((x[a] - self.region.lower[a]) / w[a]) as usize).min(self.resolution - 1))
            .collect();
        Some(self.index(&c))
    }

    /// Boxes at distance less than `r` from `x`.
    pub fn boxes_within(&self, x: &Vector, r: f64) -> Vec<usize> {
        let d = self.region.dim();
        let w = self.widths();
        let mut lo = vec![0usize; d];
        let mut hi = vec![0usize; d];
        for a in 0..d {
            let l = ((x[a] - r - self.region.lower[a]) / w[a]).floor();
            let h = ((x[a] + r - self.region.lower[a]) / w[a]).floor();
            if h < 0.0 || l > (self.resolution - 1) as f64 {
                return Vec::new();
            }
            lo[a] = l.max(0.0) as usize;
            hi[a] = h.min((self.resolution - 1) as f64) as usize;
        }
        let mut out = Vec::new();
        let mut c = lo.clone();
        loop {
            let b = self.index(&c);
            let (blo, bhi) = self.bounds(b);
            let dist2: f64 = (0..d)
                .map(|a| {
                    let g = (blo[a] - x[a]).max(x[a] - bhi[a]).max(0.0);
                    g * g
                })
                .sum();
            if dist2 < r * r {
                out.push(b);
            }
            let mut a = 0;
            loop {
                if a == d {
                    return out;
                }
                if c[a] < hi[a] {
                    c[a] += 1;
                    break;
                }
                c[a] = lo[a];
                a += 1;
            }
        }
    }

    pub fn successors(&self, b: usize) -> &[usize] {
        &self.edges[b]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges[a].binary_search(&b).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    fn samples(&self, b: usize, jitter: usize, seed: u64) -> Vec<Vector> {
        let d = self.region.dim();
        let (lo, hi) = self.bounds(b);
        let mut out = Vec::with_capacity((1 << d) + 1 + jitter);
        for mask in 0..(1usize << d) {
            out.push(Vector::from_fn(d, |a, _| if mask >> a & 1 == 1 { hi[a] } else { lo[a] }));
        }
        out.push(self.center(b));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for _ in 0..jitter {
            out.push(Vector::from_fn(d, |a, _| rng.random_range(lo[a]..hi[a])));
        }
        out
    }
}

/// Builds the pseudo-orbit graph on `resolution^d` boxes of `region`.
/// Boxes containing a zero of the field get a self-loop.
pub fn build_box_graph(spec: &VectorFieldSpec, region: &Region, opts: &BoxGraphOptions) -> Result<BoxGraph> {
    if region.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: region.dim(),
        });
    }
    if opts.resolution < 2 {
        return Err(Error::InvalidParameter {
            param: "resolution".into(),
            reason: "need at least two boxes per axis".into(),
        });
    }
    if !(opts.t_edge >= 1.0) {
        return Err(Error::InvalidParameter {
            param: "t_edge".into(),
            reason: "jump times start at 1".into(),
        });
    }
    let mut graph = BoxGraph {
        region: region.clone(),
        resolution: opts.resolution,
        eps: 0.0,
        t_edge: opts.t_edge,
        edges: Vec::new(),
        dropped: 0,
    };
    let diam = graph.box_diam();
    let eps = opts.eps.unwrap_or(1.5 * diam);
    if eps < diam {
        return Err(Error::InvalidParameter {
            param: "eps".into(),
            reason: format!("must be at least the box diameter {diam}"),
        });
    }
    graph.eps = eps;
    let steps = ((opts.t_edge - 1.0) / EDGE_TIME_STEP + 1e-9).floor() as usize;
    let results: Vec<(Vec<usize>, usize)> = (0..graph.box_count())
        .into_par_iter()
        .map(|b| {
            let mut targets = Vec::new();
            let mut dropped = 0;
            for x in graph.samples(b, opts.jitter, opts.seed) {
                let mut y = match flow(spec, &x, 1.0, opts.tol) {
                    Ok(y) => y,
                    Err(_) => {
                        dropped += 1;
                        continue;
                    }
                };
                targets.extend(graph.boxes_within(&y, eps));
                for _ in 0..steps {
                    y = match flow(spec, &y, EDGE_TIME_STEP, opts.tol) {
                        Ok(y) => y,
                        Err(_) => {
                            dropped += 1;
                            break;
                        }
                    };
                    targets.extend(graph.boxes_within(&y, eps));
                }
            }
            targets.sort_unstable();
            targets.dedup();
            (targets, dropped)
        })
        .collect();
    graph.dropped = results.iter().map(|r| r.1).sum();
    graph.edges = results.into_iter().map(|r| r.0).collect();
    let zeros = find_singularities(spec, region, 5)?;
    for z in &zeros.singularities {
        if let Some(b) = graph.locate(&z.location) {
            if let Err(pos) = graph.edges[b].binary_search(&b) {
                graph.edges[b].insert(pos, b);
            }
        }
    }
    Ok(graph)
}

/// Strongly connected components carrying a cycle, largest first (ties by
/// smallest box index). Each class lists its boxes in increasing order.
pub fn chain_classes(graph: &BoxGraph) -> Vec<Vec<usize>> {
    let mut classes: Vec<Vec<usize>> = tarjan(&graph.edges)
        .into_iter()
        .filter(|c| c.len() > 1 || graph.has_edge(c[0], c[0]))
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect();
    classes.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    classes
}

/// Iterative Tarjan strongly connected components.
fn tarjan(edges: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    let n = edges.len();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut next = 0;
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut i)) = call.last_mut() {
            if *i < edges[v].len() {
                let w = edges[v][*i];
                *i += 1;
                if index[w] == UNSEEN {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().unwrap();
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                out.push(comp);
            }
        }
    }
    out
}

/// Box centers of a class, one CSV row per box with columns `x0,…,x{d−1}`.
pub fn class_centers_csv(graph: &BoxGraph, class: &[usize]) -> String {
    let d = graph.region.dim();
    let mut s: String = (0..d).map(|a| format!("x{a}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for &b in class {
        let c = graph.center(b);
        let row: Vec<String> = c.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// The class as a `Λ` sample of box centers with slack one box diameter;
/// zeros lying in class boxes are included.
pub fn class_lambda(graph: &BoxGraph, classes: &[Vec<usize>], k: usize, zeros: &[SingularityInfo]) -> Result<LambdaSample> {
    let class = classes
        .get(k)
        .ok_or_else(|| Error::Precondition(format!("no chain class {k} (found {})", classes.len())))?;
    let points = class.iter().map(|&b| graph.center(b)).collect();
    let sings = zeros
        .iter()
        .filter(|z| graph.locate(&z.location).is_some_and(|b| class.binary_search(&b).is_ok()))
        .cloned()
        .collect();
    let mut lam = LambdaSample::from_points(points, sings, graph.box_diam());
    lam.provenance = Provenance::BoxCover {
        class: k,
        resolution: vec![graph.resolution; graph.region.dim()],
    };
    Ok(lam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{builtin, diagonal, polynomial, Monomial, Params, PolynomialField};

    fn opts(resolution: usize) -> BoxGraphOptions {
        BoxGraphOptions {
            resolution,
            ..BoxGraphOptions::default()
        }
    }

    #[test]
    fn tarjan_small_graphs() {
        let e = vec![vec![1], vec![2], vec![0], vec![3], vec![]];
        let mut comps: Vec<Vec<usize>> = tarjan(&e)
            .into_iter()
            .map(|mut c| {
                c.sort();
                c
            })
            .collect();
        comps.sort();
        assert_eq!(comps, vec![vec![0, 1, 2], vec![3], vec![4]]);
    }

    #[test]
    fn box_indexing_round_trips() {
        let f = builtin("cubic1d-product", &Params::new()).unwrap();
        let g = build_box_graph(&f, f.region(), &opts(4)).unwrap();
        for b in 0..g.box_count() {
            assert_eq!(g.locate(&g.center(b)), Some(b));
        }
        assert_eq!(g.locate(&Vector::from_vec(vec![5.0, 0.0])), None);
    }

    #[test]
    fn product_field_has_no_backward_edge() {
        let f = builtin("cubic1d-product", &Params::new()).unwrap();
        let g = build_box_graph(&f, f.region(), &opts(32)).unwrap();
        let right = g.boxes_within(&Vector::from_vec(vec![1.0, 0.0]), 0.05);
        let left = g.boxes_within(&Vector::from_vec(vec![-1.0, 0.0]), 0.05);
        for &a in &right {
            for &b in &left {
                assert!(!g.has_edge(a, b));
            }
        }
    }

    #[test]
    fn equilibrium_box_has_self_loop() {
        let f = diagonal(&[-2.0, -1.0, 1.0]).unwrap();
        let g = build_box_graph(&f, f.region(), &opts(3)).unwrap();
        let b = g.locate(&Vector::zeros(3)).unwrap();
        assert!(g.has_edge(b, b));
        let classes = chain_classes(&g);
        assert_eq!(classes.len(), 1);
        assert!(classes[0].contains(&b));
    }

    #[test]
    fn rotation_returns_to_its_box() {
        let f = builtin("rotation2d", &Params::new())
            .unwrap()
            .with_region(Region::new(vec![0.5, -0.5], vec![1.5, 0.5]).unwrap())
            .unwrap();
        let o = BoxGraphOptions {
            resolution: 2,
            t_edge: 7.0,
            ..BoxGraphOptions::default()
        };
        let g = build_box_graph(&f, f.region(), &o).unwrap();
        let b = g.locate(&Vector::from_vec(vec![1.0, 0.1])).unwrap();
        assert!(g.has_edge(b, b));
    }

    #[test]
    fn constant_field_has_no_classes() {
        let comps = vec![
            vec![Monomial { coeff: 1.0, powers: vec![0, 0] }],
            vec![Monomial { coeff: 0.5, powers: vec![0, 0] }],
        ];
        let f = polynomial(PolynomialField::new(2, comps).unwrap(), Region::cube(2, 1.0)).unwrap();
        let g = build_box_graph(&f, f.region(), &opts(16)).unwrap();
        assert!(chain_classes(&g).is_empty());
    }

    #[test]
    fn class_export() {
        let f = builtin("cubic1d-product", &Params::new()).unwrap();
        let g = build_box_graph(&f, f.region(), &opts(32)).unwrap();
        let classes = chain_classes(&g);
        let csv = class_centers_csv(&g, &classes[0]);
        assert!(csv.starts_with("x0,x1\n"));
        assert_eq!(csv.lines().count(), classes[0].len() + 1);
        let zeros = find_singularities(&f, f.region(), 5).unwrap().singularities;
        let lam = class_lambda(&g, &classes, 0, &zeros).unwrap();
        assert_eq!(lam.points.len(), classes[0].len());
        assert_eq!(lam.singularities.len(), 1);
    }
}
