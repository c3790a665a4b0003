//! Time sharing between SIC vertices when several users have equal duals.
//!
//! Users whose duals agree within a tolerance can be decoded in any relative
//! order without changing the weighted cost, so every within-cluster
//! permutation yields a vertex of the same optimal face. The target rates
//! are then reached by splitting each symbol period between vertices.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::sic::{self, CovarianceSet, DecodingOrder, RateAllocation};

/// Cap on the number of decoding orders enumerated (`8! / 4`).
pub const ENUMERATION_CAP: usize = 10_080;
pub const DEFAULT_TIE_TOL: f64 = 1e-5;
const DEDUP_TOL: f64 = 1e-9;
const PRUNE_TOL: f64 = 1e-9;
const HULL_TOL: f64 = 1e-6;

/// A decoding order with its achievable rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Vertex {
    pub order: DecodingOrder,
    /// Per-user totals over the band.
    pub rates: Vec<f64>,
    pub allocation: RateAllocation,
}

impl Vertex {
    pub fn new(order: DecodingOrder, allocation: RateAllocation) -> Self {
        Vertex {
            order,
            rates: allocation.totals(),
            allocation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleBlock {
    pub fraction: f64,
    pub vertex: Vertex,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeShareSchedule {
    pub blocks: Vec<ScheduleBlock>,
    pub target: Vec<f64>,
}

impl TimeShareSchedule {
    pub fn single(vertex: Vertex) -> Self {
        TimeShareSchedule {
            target: vertex.rates.clone(),
            blocks: vec![ScheduleBlock { fraction: 1.0, vertex }],
        }
    }
}

/// Group users whose duals agree within `tie_tol · max(θ)`. Clusters come
/// out in descending θ; members are sorted by index.
pub fn cluster_users(duals: &[f64], tie_tol: f64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..duals.len()).collect();
    idx.sort_by(|&a, &b| duals[b].total_cmp(&duals[a]).then(a.cmp(&b)));
    let scale = duals.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut head = f64::NAN;
    for u in idx {
        match clusters.last_mut() {
            Some(c) if head - duals[u] <= tie_tol * scale => c.push(u),
            _ => {
                head = duals[u];
                clusters.push(vec![u]);
            }
        }
    }
    for c in clusters.iter_mut() {
        c.sort_unstable();
    }
    clusters
}

/// Decoding order implied by clusters: lowest-θ cluster decoded first,
/// members in index order.
pub fn cluster_order(clusters: &[Vec<usize>]) -> DecodingOrder {
    let seq = clusters.iter().rev().flatten().copied().collect();
    DecodingOrder::from_sequence(seq).expect("clusters partition the users")
}

fn factorial(n: usize) -> usize {
    (1..=n).fold(1usize, |a, b| a.saturating_mul(b))
}

/// Every decoding order consistent with the clusters, in lexicographic
/// order of within-cluster permutations.
pub fn cluster_orders(clusters: &[Vec<usize>]) -> Result<Vec<DecodingOrder>> {
    let required = clusters
        .iter()
        .map(|c| factorial(c.len()))
        .fold(1usize, |a, b| a.saturating_mul(b));
    if required > ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            required,
            cap: ENUMERATION_CAP,
        });
    }
    // Decoding runs from the lowest-θ cluster to the highest.
    let perms: Vec<Vec<Vec<usize>>> = clusters
        .iter()
        .rev()
        .map(|c| c.iter().copied().permutations(c.len()).collect())
        .collect();
    Ok(perms
        .into_iter()
        .multi_cartesian_product()
        .map(|parts| DecodingOrder::from_sequence(parts.concat()).expect("permutation of users"))
        .collect())
}

fn push_unique(out: &mut Vec<Vertex>, v: Vertex) {
    let dup = out.iter().any(|w| {
        w.rates
            .iter()
            .zip(&v.rates)
            .all(|(a, b)| (a - b).abs() <= DEDUP_TOL * a.abs().max(b.abs()).max(1.0))
    });
    if !dup {
        out.push(v);
    }
}

/// Vertices for every within-cluster permutation, with the covariances held
/// fixed. Vertices whose rates coincide within 1e-9 are kept once.
pub fn enumerate_vertices(
    clusters: &[Vec<usize>],
    channels: &ChannelSet,
    covariances: &CovarianceSet,
) -> Result<Vec<Vertex>> {
    enumerate_vertices_with(clusters, channels, |_| Ok(covariances.clone()))
}

/// Like [`enumerate_vertices`] but asks `covariances_for` for the
/// covariances to use under each order, for re-optimized vertices.
pub fn enumerate_vertices_with(
    clusters: &[Vec<usize>],
    channels: &ChannelSet,
    mut covariances_for: impl FnMut(&DecodingOrder) -> Result<CovarianceSet>,
) -> Result<Vec<Vertex>> {
    let mut out = Vec::new();
    for order in cluster_orders(clusters)? {
        let covs = covariances_for(&order)?;
        let alloc = sic::sic_rates(channels, &covs, &order)?;
        push_unique(&mut out, Vertex::new(order, alloc));
    }
    Ok(out)
}

/// Lawson–Hanson non-negative least squares.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-15 * a.norm().max(1.0) * b.norm().max(1.0);
    for _ in 0..(3 * n).max(50) {
        let w = a.transpose() * (b - a * &x);
        let Some((j, &wj)) = w
            .iter()
            .enumerate()
            .filter(|(i, _)| !passive[*i])
            .max_by(|a, b| a.1.total_cmp(b.1))
        else {
            break;
        };
        if wj <= tol {
            break;
        }
        passive[j] = true;
        for _ in 0..(3 * n).max(50) {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = a.select_columns(&idx);
            let z = sub
                .svd(true, true)
                .solve(b, 1e-13)
                .expect("SVD computed with both factors");
            if z.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = z[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &i) in idx.iter().enumerate() {
                if z[k] <= 0.0 {
                    let denom = x[i] - z[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (k, &i) in idx.iter().enumerate() {
                x[i] += alpha * (z[k] - x[i]);
                if x[i] <= 1e-15 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x
}

/// Shrink the support of `rho` to at most `rows` entries while keeping
/// `m · rho` fixed.
fn caratheodory(m: &DMatrix<f64>, rho: &mut DVector<f64>) {
    loop {
        let support: Vec<usize> = (0..rho.len()).filter(|&i| rho[i] > 0.0).collect();
        if support.len() <= m.nrows() {
            return;
        }
        let sub = m.select_columns(&support);
        let gram = sub.transpose() * &sub;
        let eig = gram.symmetric_eigen();
        let (k, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty support");
        let mut z = eig.eigenvectors.column(k).clone_owned();
        if z.iter().all(|&v| v <= 0.0) {
            z = -z;
        }
        let mut alpha = f64::INFINITY;
        let mut hit = support[0];
        for (j, &i) in support.iter().enumerate() {
            if z[j] > 0.0 && rho[i] / z[j] < alpha {
                alpha = rho[i] / z[j];
                hit = i;
            }
        }
        for (j, &i) in support.iter().enumerate() {
            rho[i] -= alpha * z[j];
            if rho[i] < 0.0 {
                rho[i] = 0.0;
            }
        }
        rho[hit] = 0.0;
    }
}

/// Least-squares fractions over the simplex, pruned to at most `U + 1`
/// blocks. Returns the fractions and the per-user relative violation.
fn fit_fractions(vertices: &[Vertex], target: &[f64]) -> Result<(DVector<f64>, Vec<f64>)> {
    let u = target.len();
    let k = vertices.len();
    if k == 0 {
        return Err(Error::InvalidInput("no vertices to share time between".into()));
    }
    if vertices.iter().any(|v| v.rates.len() != u) {
        return Err(Error::InvalidInput("vertex and target lengths differ".into()));
    }
    let scale: Vec<f64> = (0..u)
        .map(|i| {
            vertices
                .iter()
                .map(|v| v.rates[i].abs())
                .fold(target[i].abs(), f64::max)
                .max(1e-12)
        })
        .collect();
    const SIMPLEX_WEIGHT: f64 = 10.0;
    let a = DMatrix::from_fn(u + 1, k, |r, c| {
        if r < u {
            vertices[c].rates[r] / scale[r]
        } else {
            SIMPLEX_WEIGHT
        }
    });
    let b = DVector::from_fn(u + 1, |r, _| if r < u { target[r] / scale[r] } else { SIMPLEX_WEIGHT });
    let mut rho = nnls(&a, &b);
    let total: f64 = rho.sum();
    if !(total > 0.0) {
        return Err(Error::Numeric("time-sharing fit returned no weight".into()));
    }
    rho /= total;
    rho.iter_mut().for_each(|r| {
        if *r < PRUNE_TOL {
            *r = 0.0;
        }
    });
    let plain = DMatrix::from_fn(u + 1, k, |r, c| if r < u { a[(r, c)] } else { 1.0 });
    caratheodory(&plain, &mut rho);
    rho /= rho.sum();
    let violation = (0..u)
        .map(|i| {
            let avg: f64 = (0..k).map(|c| rho[c] * vertices[c].rates[i]).sum();
            (avg - target[i]).abs() / target[i].abs().max(1e-9 * scale[i]).max(1e-12)
        })
        .collect();
    Ok((rho, violation))
}

fn schedule_from(vertices: &[Vertex], rho: &DVector<f64>, target: Vec<f64>) -> TimeShareSchedule {
    let blocks = vertices
        .iter()
        .zip(rho.iter())
        .filter(|(_, &r)| r > 0.0)
        .map(|(v, &r)| ScheduleBlock {
            fraction: r,
            vertex: v.clone(),
        })
        .collect();
    TimeShareSchedule { blocks, target }
}

/// Fractions `ρ ⪰ 0`, `Σρ = 1` with `Σ_k ρ_k rates_k = target`.
pub fn convex_hull_fractions(vertices: &[Vertex], target: &[f64]) -> Result<TimeShareSchedule> {
    let (rho, violation) = fit_fractions(vertices, target)?;
    let (user, worst) = violation
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    if worst > HULL_TOL {
        return Err(Error::OutsideHull {
            user,
            violation: worst,
        });
    }
    Ok(schedule_from(vertices, &rho, target.to_vec()))
}

/// Closest point of the hull to `target` in scaled least squares. The
/// schedule's target is the point actually reached.
pub fn nearest_hull_point(vertices: &[Vertex], target: &[f64]) -> Result<TimeShareSchedule> {
    let (rho, _) = fit_fractions(vertices, target)?;
    let mut sched = schedule_from(vertices, &rho, Vec::new());
    sched.target = average_rates(&sched);
    Ok(sched)
}

/// `Σ_k ρ_k · rates_k`.
pub fn average_rates(schedule: &TimeShareSchedule) -> Vec<f64> {
    let u = schedule.blocks.first().map_or(0, |b| b.vertex.rates.len());
    let mut out = vec![0.0; u];
    for b in &schedule.blocks {
        for (o, r) in out.iter_mut().zip(&b.vertex.rates) {
            *o += b.fraction * r;
        }
    }
    out
}

/// Time-averaged per-subcarrier rates.
pub fn average_allocation(schedule: &TimeShareSchedule) -> RateAllocation {
    let parts: Vec<(f64, &RateAllocation)> = schedule
        .blocks
        .iter()
        .map(|b| (b.fraction, &b.vertex.allocation))
        .collect();
    RateAllocation::convex_combination(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::LinkSide;
    use crate::linalg::{self, c64, CMat};
    use proptest::prelude::*;

    fn rate_vertex(order: Vec<usize>, rates: &[f64]) -> Vertex {
        let alloc = RateAllocation::new(rates.iter().map(|&r| vec![r]).collect()).unwrap();
        Vertex::new(DecodingOrder::from_sequence(order).unwrap(), alloc)
    }

    #[test]
    fn clustering_examples() {
        assert_eq!(cluster_users(&[0.5, 0.5, 0.1], 1e-5), vec![vec![0, 1], vec![2]]);
        assert_eq!(cluster_users(&[0.3, 0.1, 0.2], 1e-5), vec![vec![0], vec![2], vec![1]]);
        assert_eq!(cluster_users(&[0.7; 4], 1e-5), vec![vec![0, 1, 2, 3]]);
        assert_eq!(cluster_users(&[0.0; 3], 1e-5), vec![vec![0, 1, 2]]);
        let order = cluster_order(&cluster_users(&[0.5, 0.2, 0.9], 1e-5));
        assert_eq!(order.sequence(), &[1, 0, 2]);
    }

    #[test]
    fn three_user_example_fractions() {
        let v = vec![
            rate_vertex(vec![0, 1, 2], &[123.0, 170.0, 62.0]),
            rate_vertex(vec![0, 2, 1], &[123.0, 196.0, 31.0]),
        ];
        let s = convex_hull_fractions(&v, &[123.0, 172.34, 59.21]).unwrap();
        assert_eq!(s.blocks.len(), 2);
        assert!((s.blocks[0].fraction - 0.91).abs() < 1e-9);
        assert!((s.blocks[1].fraction - 0.09).abs() < 1e-9);
        let avg = average_rates(&s);
        assert!((avg[0] - 123.0).abs() < 1e-9);
        assert!((avg[1] - 172.34).abs() < 1e-9);
        assert!((avg[2] - 59.21).abs() < 1e-9);
    }

    #[test]
    fn vertex_target_and_midpoint() {
        let v = vec![rate_vertex(vec![0, 1], &[1.0, 3.0]), rate_vertex(vec![1, 0], &[3.0, 1.0])];
        let s = convex_hull_fractions(&v, &[3.0, 1.0]).unwrap();
        assert_eq!(s.blocks.len(), 1);
        assert_eq!(s.blocks[0].vertex.order.sequence(), &[1, 0]);
        let s = convex_hull_fractions(&v, &[2.0, 2.0]).unwrap();
        assert!(s.blocks.iter().all(|b| (b.fraction - 0.5).abs() < 1e-12));
        let single = TimeShareSchedule::single(v[0].clone());
        assert_eq!(average_rates(&single), vec![1.0, 3.0]);
    }

    #[test]
    fn outside_hull_names_the_worst_user() {
        let v = vec![rate_vertex(vec![0, 1], &[1.0, 3.0]), rate_vertex(vec![1, 0], &[3.0, 1.0])];
        match convex_hull_fractions(&v, &[2.0, 2.5]) {
            Err(Error::OutsideHull { user, violation }) => {
                assert_eq!(user, 0);
                assert!(violation > 0.1);
            }
            other => panic!("expected hull error, got {other:?}"),
        }
        let near = nearest_hull_point(&v, &[2.0, 2.5]).unwrap();
        assert!((near.target.iter().sum::<f64>() - 4.0).abs() < 1e-9);
    }

    fn scalar_mac(h: &[f64], p: &[f64]) -> (ChannelSet, CovarianceSet) {
        let u = h.len();
        let ch = ChannelSet::from_user_dims(
            LinkSide::MultipleAccess,
            vec![CMat::from_fn(1, u, |_, c| c64(h[c], 0.0))],
            &vec![1; u],
            vec![linalg::identity(1)],
        )
        .unwrap();
        let covs = CovarianceSet::new(
            LinkSide::MultipleAccess,
            vec![1; u],
            vec![p.iter().map(|&x| CMat::from_element(1, 1, c64(x, 0.0))).collect()],
        )
        .unwrap();
        (ch, covs)
    }

    #[test]
    fn enumeration_counts() {
        let (ch, covs) = scalar_mac(&[1.0, 0.8, 0.5], &[1.0, 2.0, 3.0]);
        let singles = cluster_users(&[0.3, 0.2, 0.1], 1e-5);
        assert_eq!(enumerate_vertices(&singles, &ch, &covs).unwrap().len(), 1);
        let pair = cluster_users(&[0.3, 0.3, 0.1], 1e-5);
        let v = enumerate_vertices(&pair, &ch, &covs).unwrap();
        assert_eq!(v.len(), 2);
        let s0: f64 = v[0].rates[0] + v[0].rates[1];
        let s1: f64 = v[1].rates[0] + v[1].rates[1];
        assert!((s0 - s1).abs() < 1e-12);
        assert!((v[0].rates[2] - v[1].rates[2]).abs() < 1e-12);
        let all = enumerate_vertices(&[vec![0, 1, 2]], &ch, &covs).unwrap();
        assert_eq!(all.len(), 6);
        let sum = all[0].rates.iter().sum::<f64>();
        assert!(all.iter().all(|v| (v.rates.iter().sum::<f64>() - sum).abs() <= 1e-8 * sum));
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let clusters = vec![(0..8).collect::<Vec<_>>()];
        assert!(matches!(
            cluster_orders(&clusters),
            Err(Error::EnumerationCap { required: 40_320, .. })
        ));
        let split = vec![(0..7).collect::<Vec<_>>(), vec![7]];
        assert_eq!(cluster_orders(&split).unwrap().len(), 5040);
    }

    proptest! {
        #[test]
        fn hull_points_are_recovered(w in proptest::collection::vec(0.0f64..1.0, 6), h in proptest::collection::vec(0.2f64..2.0, 3)) {
            let (ch, covs) = scalar_mac(&h, &[1.0, 1.5, 2.0]);
            let verts = enumerate_vertices(&[vec![0, 1, 2]], &ch, &covs).unwrap();
            let total: f64 = w.iter().sum::<f64>().max(1e-9);
            let mut target = vec![0.0; 3];
            for (v, wi) in verts.iter().zip(&w) {
                for i in 0..3 { target[i] += wi / total * v.rates[i]; }
            }
            if w.iter().sum::<f64>() < 1e-9 { target = verts[0].rates.clone(); }
            let s = convex_hull_fractions(&verts, &target).unwrap();
            prop_assert!(s.blocks.len() <= 4);
            prop_assert!((s.blocks.iter().map(|b| b.fraction).sum::<f64>() - 1.0).abs() < 1e-9);
            let avg = average_rates(&s);
            for i in 0..3 {
                prop_assert!((avg[i] - target[i]).abs() <= 1e-6 * target[i].abs().max(1e-9));
                let lo = s.blocks.iter().map(|b| b.vertex.rates[i]).fold(f64::INFINITY, f64::min);
                let hi = s.blocks.iter().map(|b| b.vertex.rates[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(avg[i] >= lo - 1e-12 && avg[i] <= hi + 1e-12);
            }
        }
    }
}
