#![allow(dead_code)]

use std::collections::BTreeMap;

use coalmpc::model::{CoupledNetwork, SubsystemModel};
use coalmpc::qp::BoxQp;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn rand_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// `M' M + shift I` for a random square `M`.
pub fn rand_spd(rng: &mut impl Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let m = rand_matrix(rng, n, n, 1.0);
    let s = m.transpose() * m + DMatrix::identity(n, n) * shift;
    (&s + s.transpose()) * 0.5
}

/// Connected random coupling graph: a random spanning tree plus extra edges.
pub fn rand_edges(rng: &mut impl Rng, agents: usize, extra: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for j in 1..agents {
        edges.push((rng.gen_range(0..j), j));
    }
    for i in 0..agents {
        for j in i + 1..agents {
            if !edges.contains(&(i, j)) && rng.gen_bool(extra) {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Random network with state dimensions 1..=2, channel dimensions 1..=2 and
/// occasional external channels. Inputs are boxed in `[-1, 1]`.
pub fn random_network(rng: &mut impl Rng, agents: usize) -> CoupledNetwork {
    let edges = rand_edges(rng, agents, 0.3);
    let dims: Vec<usize> = (0..agents).map(|_| rng.gen_range(1..=2)).collect();
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); agents];
    for &(i, j) in &edges {
        nbrs[i].push(j);
        nbrs[j].push(i);
    }
    // channel dimension of the action i -> j
    let mut chan: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (i, list) in nbrs.iter().enumerate() {
        for &j in list {
            chan.insert((i, j), rng.gen_range(1..=2));
        }
    }
    let subs = (0..agents)
        .map(|i| {
            let n = dims[i];
            let b_out: BTreeMap<_, _> = nbrs[i]
                .iter()
                .map(|&j| (j, rand_matrix(rng, n, chan[&(i, j)], 1.0)))
                .collect();
            let b_in = nbrs[i]
                .iter()
                .map(|&j| (j, rand_matrix(rng, n, chan[&(j, i)], 1.0)))
                .collect();
            let b_ext = if rng.gen_bool(0.3) {
                vec![rand_matrix(rng, n, 1, 1.0)]
            } else {
                vec![]
            };
            let d = b_out.values().map(|b: &DMatrix<f64>| b.ncols()).sum::<usize>()
                + b_ext.iter().map(|b| b.ncols()).sum::<usize>();
            SubsystemModel {
                id: i,
                a: rand_matrix(rng, n, n, 0.6),
                b_in,
                b_out,
                b_ext,
                q: rand_spd(rng, n, 0.1),
                r: rand_spd(rng, d, 0.5),
                x_ref: DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
                u_ref: DVector::zeros(d),
                u_min: DVector::from_element(d, -1.0),
                u_max: DVector::from_element(d, 1.0),
            }
        })
        .collect();
    CoupledNetwork::new(subs)
}

/// Accelerated projected gradient with adaptive restart, run to a tight
/// fixed point. Independent of the library solver.
pub fn projected_gradient(qp: &BoxQp) -> DVector<f64> {
    let n = qp.dim();
    let lipschitz = qp.h.clone().symmetric_eigenvalues().max().max(1e-12);
    let step = 1.0 / lipschitz;
    let project = |v: &DVector<f64>| {
        DVector::from_fn(n, |i, _| v[i].max(qp.lower[i]).min(qp.upper[i]))
    };
    let mut x = project(&DVector::zeros(n));
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut f_prev = f64::INFINITY;
    for _ in 0..200_000 {
        let grad = &qp.h * &y + &qp.g;
        let next = project(&(&y - grad * step));
        let f = 0.5 * next.dot(&(&qp.h * &next)) + qp.g.dot(&next);
        if f > f_prev {
            // restart momentum
            t = 1.0;
            y = x.clone();
            f_prev = f64::INFINITY;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        let moved = (&next - &x).amax();
        x = next;
        t = t_next;
        f_prev = f;
        if moved < 1e-15 {
            break;
        }
    }
    x
}

/// Random strictly convex box QP with up to `max_n` variables; some bounds
/// are infinite.
pub fn random_box_qp(rng: &mut impl Rng, max_n: usize) -> BoxQp {
    let n = rng.gen_range(1..=max_n);
    let shift = rng.gen_range(0.05..1.0);
    let h = rand_spd(rng, n, shift);
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let lower = DVector::from_fn(n, |_, _| {
        if rng.gen_bool(0.2) {
            f64::NEG_INFINITY
        } else {
            rng.gen_range(-1.0..0.5)
        }
    });
    let upper = DVector::from_fn(n, |i, _| {
        if rng.gen_bool(0.2) {
            f64::INFINITY
        } else {
            lower[i].max(-1.0) + rng.gen_range(0.0..1.5)
        }
    });
    BoxQp {
        h,
        g,
        c: rng.gen_range(-1.0..1.0),
        lower,
        upper,
    }
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
