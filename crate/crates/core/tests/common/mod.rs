//! Independent reference implementations used by the property and acceptance
//! suites. Nothing here calls into the library's numerical code.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mortgp::grouping::{AdjacencyGraph, DistanceMatrix, PopulationTable};
use mortgp::{Hyperparameters, InputPoint, KernelFamily, StateId, TrendMode};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn base_kernel(family: KernelFamily, d: f64, theta: f64) -> f64 {
    let d = d.abs();
    match family {
        KernelFamily::Matern52 => {
            let s5 = 5f64.sqrt();
            (1.0 + s5 * d / theta + 5.0 * d * d / (3.0 * theta * theta)) * (-s5 * d / theta).exp()
        }
        KernelFamily::SqExp => (-(d * d) / (2.0 * theta * theta)).exp(),
    }
}

pub fn kernel_entry(hyp: &Hyperparameters, x: &InputPoint, y: &InputPoint) -> f64 {
    let a = &hyp.coregionalization.a;
    let mut b = 0.0;
    for q in 0..a.ncols() {
        b += a[(x.population, q)] * a[(y.population, q)];
    }
    let k = &hyp.kernel;
    let ca = (x.year - x.age) - (y.year - y.age);
    b * k.variance
        * base_kernel(k.family, x.age - y.age, k.lengthscales[0])
        * base_kernel(k.family, x.year - y.year, k.lengthscales[1])
        * base_kernel(k.family, ca, k.lengthscales[2])
}

pub fn dense_kernel(hyp: &Hyperparameters, rows: &[InputPoint], cols: &[InputPoint]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| kernel_entry(hyp, &rows[i], &cols[j]))
}

pub fn design_row(trend: TrendMode, x: &InputPoint, outputs: usize) -> Vec<f64> {
    match trend {
        TrendMode::Shared => vec![1.0, x.age],
        TrendMode::PerPopulationIntercept => {
            let mut r = vec![0.0; outputs + 1];
            r[x.population] = 1.0;
            r[outputs] = x.age;
            r
        }
        TrendMode::Separate => {
            let mut r = vec![0.0; 2 * outputs];
            r[2 * x.population] = 1.0;
            r[2 * x.population + 1] = x.age;
            r
        }
    }
}

pub fn design(trend: TrendMode, pts: &[InputPoint], outputs: usize) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = pts.iter().map(|x| design_row(trend, x, outputs)).collect();
    DMatrix::from_fn(pts.len(), rows.first().map_or(0, Vec::len), |i, j| rows[i][j])
}

pub struct DenseResult {
    pub lml: f64,
    pub beta: DVector<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Universal kriging by explicit LU inverses.
pub fn dense_kriging(
    hyp: &Hyperparameters,
    trend: TrendMode,
    train: &[InputPoint],
    y: &[f64],
    test: &[InputPoint],
    jitter: f64,
    latent_only: bool,
) -> DenseResult {
    let outputs = hyp.coregionalization.a.nrows();
    let n = train.len();
    let mut k = dense_kernel(hyp, train, train);
    for i in 0..n {
        k[(i, i)] += hyp.noise[train[i].population] + jitter;
    }
    let lu = k.clone().lu();
    let kinv = lu.try_inverse().expect("oracle covariance invertible");
    let logdet = k.clone().lu().determinant().ln();
    let h = design(trend, train, outputs);
    let yv = DVector::from_column_slice(y);
    let g = h.transpose() * &kinv * &h;
    let ginv = g.clone().lu().try_inverse().expect("oracle GLS matrix invertible");
    let beta = &ginv * h.transpose() * &kinv * &yv;
    let r = &yv - &h * &beta;
    let lml = -0.5 * (r.transpose() * &kinv * &r)[(0, 0)] - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    let ks = dense_kernel(hyp, test, train);
    let kss = dense_kernel(hyp, test, test);
    let hs = design(trend, test, outputs);
    let mean = &hs * &beta + &ks * &kinv * &r;
    let rmat = hs.transpose() - h.transpose() * &kinv * ks.transpose();
    let mut cov = kss - &ks * &kinv * ks.transpose() + rmat.transpose() * &ginv * &rmat;
    if !latent_only {
        for (i, x) in test.iter().enumerate() {
            cov[(i, i)] += hyp.noise[x.population];
        }
    }
    DenseResult { lml, beta, mean, cov }
}

/// Cyclic Jacobi eigen-decomposition; eigenvalues descending with matching
/// unit eigenvector columns.
pub fn jacobi_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap());
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Sample correlation matrix with n − 1 normalization.
pub fn correlation_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut z = x.clone();
    for j in 0..p {
        let mean = (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64;
        let sd = ((0..n).map(|i| (x[(i, j)] - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        for i in 0..n {
            z[(i, j)] = (x[(i, j)] - mean) / sd;
        }
    }
    z.transpose() * z / (n as f64 - 1.0)
}

/// Flip a vector so its first near-largest-magnitude entry is positive.
pub fn sign_canonical(mut v: DVector<f64>) -> DVector<f64> {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let best = v.iter().position(|x| x.abs() >= max - 1e-9).unwrap_or(0);
    if v[best] < 0.0 {
        v.neg_mut();
    }
    v
}

/// Brute-force frontier recursion: scan every state each round.
pub fn brute_neighbors(target: StateId, graph: &AdjacencyGraph, dist: &DistanceMatrix, rounds: usize, seed: Option<StateId>) -> Vec<(StateId, f64)> {
    let all: Vec<StateId> = dist.states().collect();
    let mut chosen: Vec<StateId> = vec![target];
    let mut out: Vec<(StateId, f64)> = Vec::new();
    if let Some(s1) = seed {
        chosen.push(s1);
        out.push((s1, dist.get(target, s1).unwrap()));
    }
    while out.len() < rounds {
        let mut best: Option<(StateId, f64)> = None;
        for &c in &all {
            if chosen.contains(&c) {
                continue;
            }
            if !chosen.iter().any(|&s| graph.are_adjacent(s, c)) {
                continue;
            }
            let d = dist.get(target, c).unwrap();
            let better = match best {
                None => true,
                Some((b, bd)) => d < bd || (d == bd && c.code() < b.code()),
            };
            if better {
                best = Some((c, d));
            }
        }
        match best {
            Some(b) => {
                chosen.push(b.0);
                out.push(b);
            }
            None => break,
        }
    }
    out
}

/// Brute-force group assembly: the two nearest frontier states, an optional
/// third closer than both, then growth toward the population floor.
pub fn brute_group(
    target: StateId,
    graph: &AdjacencyGraph,
    dist: &DistanceMatrix,
    pops: &PopulationTable,
    floor: f64,
    max_members: usize,
) -> Vec<StateId> {
    let isolated = graph.degree(target) == 0;
    let seed = if isolated {
        let mut best: Option<(StateId, f64)> = None;
        for s in dist.states() {
            if s == target || graph.degree(s) == 0 {
                continue;
            }
            let d = dist.get(target, s).unwrap();
            if best.is_none_or(|(b, bd)| d < bd || (d == bd && s.code() < b.code())) {
                best = Some((s, d));
            }
        }
        best.map(|b| b.0)
    } else {
        None
    };
    let list = brute_neighbors(target, graph, dist, 10, seed);
    let mut group = vec![target, list[0].0, list[1].0];
    let dmax = list[0].1.max(list[1].1);
    let mut rest: Vec<(StateId, f64)> = list[2..].to_vec();
    rest.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.code().cmp(b.0.code())));
    if let Some(&(s3, d3)) = rest.first() {
        if d3 < dmax {
            group.push(s3);
        }
    }
    let total = |g: &[StateId]| g.iter().map(|s| pops.0[s]).sum::<f64>();
    let mut rounds = 10;
    loop {
        let mut g = group.clone();
        let pool = brute_neighbors(target, graph, dist, rounds, seed);
        let mut cands: Vec<(StateId, f64)> = pool.into_iter().filter(|(s, _)| !g.contains(s)).collect();
        cands.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.code().cmp(b.0.code())));
        for (s, _) in &cands {
            if total(&g) >= floor || g.len() >= max_members {
                break;
            }
            g.push(*s);
        }
        let exhausted = brute_neighbors(target, graph, dist, rounds + 10, seed).len() == brute_neighbors(target, graph, dist, rounds, seed).len();
        if total(&g) >= floor || g.len() >= max_members || exhausted {
            return g;
        }
        rounds += 10;
    }
}

/// States reachable from `start`.
pub fn component(graph: &AdjacencyGraph, start: StateId) -> BTreeSet<StateId> {
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(s) = stack.pop() {
        for n in graph.neighbors(s) {
            if seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen
}

pub struct GroupingInstance {
    pub states: Vec<StateId>,
    pub edges: Vec<(StateId, StateId)>,
    pub dist: BTreeMap<(StateId, StateId), f64>,
    pub pops: PopulationTable,
}

/// Random sub-map of 6..=16 states with a spanning tree, extra edges, an
/// occasional isolated node and tie-prone distances.
pub fn random_instance(seed: u64) -> GroupingInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(6..=16);
    let mut all = StateId::ALL.to_vec();
    all.shuffle(&mut rng);
    let mut states: Vec<StateId> = all[..n].to_vec();
    states.sort();
    let mut edges = Vec::new();
    // random spanning tree plus extra edges, with an occasional isolated node
    let isolated = if rng.random_bool(0.3) { Some(states[rng.random_range(0..n)]) } else { None };
    let connected: Vec<StateId> = states.iter().copied().filter(|s| Some(*s) != isolated).collect();
    for i in 1..connected.len() {
        let j = rng.random_range(0..i);
        edges.push((connected[i], connected[j]));
    }
    for _ in 0..rng.random_range(0..n) {
        let a = connected[rng.random_range(0..connected.len())];
        let b = connected[rng.random_range(0..connected.len())];
        if a != b {
            edges.push((a, b));
        }
    }
    // coarse values make distance ties common
    let pos: BTreeMap<StateId, (f64, f64)> = states.iter().map(|s| (*s, (rng.random_range(0..6) as f64, rng.random_range(0..6) as f64))).collect();
    let mut dist = BTreeMap::new();
    for &a in &states {
        for &b in &states {
            let (pa, pb) = (pos[&a], pos[&b]);
            dist.insert((a, b), ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt());
        }
    }
    let pops = PopulationTable(states.iter().map(|s| (*s, rng.random_range(3e5..4e6))).collect());
    GroupingInstance { states, edges, dist, pops }
}

/// Graph and distance matrix, optionally with states and edges shuffled.
pub fn build_instance(inst: &GroupingInstance, shuffle_seed: Option<u64>) -> (AdjacencyGraph, DistanceMatrix) {
    let mut states = inst.states.clone();
    let mut edges = inst.edges.clone();
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        states.shuffle(&mut rng);
        edges.shuffle(&mut rng);
        for e in edges.iter_mut() {
            if rng.random_bool(0.5) {
                *e = (e.1, e.0);
            }
        }
    }
    let graph = AdjacencyGraph::from_edges(states.iter().copied(), edges);
    let dist = DistanceMatrix::from_fn(states, |a, b| inst.dist[&(a, b)]);
    (graph, dist)
}
