//! Log-barrier Newton method over per-subcarrier Hermitian covariances.
//!
//! Minimizes `Σ_k c_k tr R_k − Σ_T a_T F_T(R)` subject to `F_T(R) ≥ B_T` for
//! the listed subsets and optionally `Σ_k p_k tr R_k ≤ P`, where
//! `F_T = Σ_n log2 |I + Σ_{k∈T} G_{k,n} R_{k,n} G_{k,n}^*|`. Channels are
//! expected whitened and scaled to order-one gains.
//!
//! The Newton system is block diagonal per subcarrier plus one rank-one term
//! per subset constraint, and is solved with the Woodbury identity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, LN_2};

const GROWTH: f64 = 20.0;
const CENTER_TOL: f64 = 1e-10;
const ARMIJO: f64 = 0.25;
const LOCAL_DEC: f64 = 1e-4;
/// Objectives are order one after scaling; smaller ones are judged absolutely.
const OBJECTIVE_FLOOR: f64 = 1e-3;
const MAX_FLAT: usize = 8;

pub(crate) struct Term {
    pub users: Vec<usize>,
    pub floor: Option<f64>,
    pub reward: f64,
}

pub(crate) struct Problem<'a> {
    /// `g[n][k]`, `n_rx × d_k`.
    pub g: &'a [Vec<CMat>],
    pub dims: Vec<usize>,
    pub cost: Vec<f64>,
    pub terms: Vec<Term>,
    pub power: Option<(Vec<f64>, f64)>,
}

pub(crate) struct Options {
    pub gap_tol: f64,
    pub max_newton: usize,
}

#[derive(Debug)]
pub(crate) struct Outcome {
    /// `covs[n][k]`.
    pub covs: Vec<Vec<CMat>>,
    /// `1 / (t s_T)` for floor terms, zero otherwise.
    pub floor_duals: Vec<f64>,
    pub power_dual: f64,
    pub iterations: usize,
    pub residual: f64,
}

struct Point {
    x: DVector<f64>,
    r: Vec<Vec<CMat>>,
    /// `G R G^*` per subcarrier and user.
    y: Vec<Vec<CMat>>,
    f: Vec<f64>,
    power_used: f64,
    objective: f64,
    phi: f64,
}

struct Solver<'a> {
    pb: &'a Problem<'a>,
    offsets: Vec<usize>,
    p: usize,
    n_sc: usize,
    n_rx: usize,
    bases: Vec<Vec<CMat>>,
}

impl<'a> Solver<'a> {
    fn new(pb: &'a Problem<'a>) -> Self {
        let mut offsets = Vec::with_capacity(pb.dims.len());
        let mut p = 0;
        for &d in &pb.dims {
            offsets.push(p);
            p += d * d;
        }
        Solver {
            pb,
            offsets,
            p,
            n_sc: pb.g.len(),
            n_rx: pb.g[0][0].nrows(),
            bases: pb.dims.iter().map(|&d| linalg::hermitian_basis(d)).collect(),
        }
    }

    fn len(&self) -> usize {
        self.n_sc * self.p
    }

    fn base(&self, n: usize, k: usize) -> usize {
        n * self.p + self.offsets[k]
    }

    fn covs(&self, x: &DVector<f64>) -> Vec<Vec<CMat>> {
        (0..self.n_sc)
            .map(|n| {
                self.pb
                    .dims
                    .iter()
                    .enumerate()
                    .map(|(k, &d)| {
                        let b = self.base(n, k);
                        linalg::from_hermitian_coords(d, &x.as_slice()[b..b + d * d])
                    })
                    .collect()
            })
            .collect()
    }

    fn gram(&self, n: usize, users: &[usize], y: &[Vec<CMat>]) -> CMat {
        let mut m = linalg::identity(self.n_rx);
        for &k in users {
            m += &y[n][k];
        }
        m
    }

    fn evaluate(&self, x: DVector<f64>, t: f64) -> Option<Point> {
        let r = self.covs(&x);
        let mut logdet_r = 0.0;
        let mut lin = 0.0;
        let mut power_used = 0.0;
        for row in &r {
            for (k, m) in row.iter().enumerate() {
                let chol = linalg::cholesky(m)?;
                logdet_r += linalg::chol_logdet(&chol);
                let tr = linalg::re_trace(m);
                lin += self.pb.cost[k] * tr;
                if let Some((pw, _)) = &self.pb.power {
                    power_used += pw[k] * tr;
                }
            }
        }
        let y: Vec<Vec<CMat>> = (0..self.n_sc)
            .map(|n| {
                r[n].iter()
                    .enumerate()
                    .map(|(k, m)| {
                        let g = &self.pb.g[n][k];
                        g * m * g.adjoint()
                    })
                    .collect()
            })
            .collect();
        let mut phi = -logdet_r;
        let mut objective = lin;
        let mut f = Vec::with_capacity(self.pb.terms.len());
        for term in &self.pb.terms {
            let mut total = 0.0;
            for n in 0..self.n_sc {
                let chol = linalg::cholesky(&self.gram(n, &term.users, &y))?;
                total += linalg::chol_logdet(&chol) / LN_2;
            }
            objective -= term.reward * total;
            if let Some(b) = term.floor {
                let s = total - b;
                if !(s > 0.0) {
                    return None;
                }
                phi -= s.ln();
            }
            f.push(total);
        }
        if let Some((_, budget)) = &self.pb.power {
            let s = budget - power_used;
            if !(s > 0.0) {
                return None;
            }
            phi -= s.ln();
        }
        phi += t * objective;
        if !phi.is_finite() {
            return None;
        }
        Some(Point {
            x,
            r,
            y,
            f,
            power_used,
            objective,
            phi,
        })
    }

    /// Newton direction and gradient of the barrier function at `pt`.
    fn newton(&self, pt: &Point, t: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let len = self.len();
        let p = self.p;
        let mut grad = DVector::<f64>::zeros(len);
        let mut blocks = vec![DMatrix::<f64>::zeros(p, p); self.n_sc];
        let mut cols: Vec<DVector<f64>> = Vec::new();
        let mut coords = Vec::new();

        for n in 0..self.n_sc {
            for (k, &d) in self.pb.dims.iter().enumerate() {
                let base = self.base(n, k);
                let o = self.offsets[k];
                let rinv = linalg::cholesky(&pt.r[n][k])
                    .ok_or_else(|| Error::Numeric("iterate left the PSD cone".into()))?
                    .inverse();
                coords.clear();
                linalg::hermitian_coords_into(&rinv, &mut coords);
                for (i, c) in coords.iter().enumerate() {
                    grad[base + i] -= c;
                }
                for j in 0..d {
                    grad[base + j] += t * self.pb.cost[k];
                }
                for (j, e) in self.bases[k].iter().enumerate() {
                    coords.clear();
                    linalg::hermitian_coords_into(&(&rinv * e * &rinv), &mut coords);
                    for (i, c) in coords.iter().enumerate() {
                        blocks[n][(o + i, o + j)] += c;
                    }
                }
            }
        }

        if let Some((pw, budget)) = &self.pb.power {
            let s = budget - pt.power_used;
            let mut c = DVector::<f64>::zeros(len);
            for n in 0..self.n_sc {
                for (k, &d) in self.pb.dims.iter().enumerate() {
                    let base = self.base(n, k);
                    for j in 0..d {
                        c[base + j] = pw[k] / s;
                    }
                }
            }
            grad += &c;
            cols.push(c);
        }

        for (ti, term) in self.pb.terms.iter().enumerate() {
            let slack = term.floor.map(|b| pt.f[ti] - b);
            let hc = slack.map_or(0.0, |s| 1.0 / s) + t * term.reward;
            if hc == 0.0 {
                continue;
            }
            let mut grad_f = DVector::<f64>::zeros(len);
            for n in 0..self.n_sc {
                let minv = linalg::cholesky(&self.gram(n, &term.users, &pt.y))
                    .ok_or_else(|| Error::Numeric("log-det argument lost definiteness".into()))?
                    .inverse();
                let w: Vec<CMat> = term.users.iter().map(|&k| &minv * &self.pb.g[n][k]).collect();
                for &l in &term.users {
                    let gl_adj = self.pb.g[n][l].adjoint();
                    let ol = self.offsets[l];
                    for (b, &k) in term.users.iter().enumerate() {
                        let kmat = &gl_adj * &w[b];
                        if l == k {
                            coords.clear();
                            linalg::hermitian_coords_into(&kmat, &mut coords);
                            let base = self.base(n, k);
                            for (i, c) in coords.iter().enumerate() {
                                grad_f[base + i] += c / LN_2;
                            }
                        }
                        let ok = self.offsets[k];
                        let kadj = kmat.adjoint();
                        for (j, e) in self.bases[k].iter().enumerate() {
                            coords.clear();
                            linalg::hermitian_coords_into(&(&kmat * e * &kadj), &mut coords);
                            for (i, c) in coords.iter().enumerate() {
                                blocks[n][(ol + i, ok + j)] += hc * c / LN_2;
                            }
                        }
                    }
                }
            }
            grad.axpy(-hc, &grad_f, 1.0);
            if let Some(s) = slack {
                cols.push(grad_f / s);
            }
        }

        let chols = blocks
            .into_iter()
            .map(|b| {
                b.cholesky()
                    .ok_or_else(|| Error::Numeric("Newton block is not positive definite".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let solve = |v: &DVector<f64>| -> DVector<f64> {
            let mut out = v.clone();
            for (n, c) in chols.iter().enumerate() {
                let mut seg = out.rows_mut(n * p, p);
                let sol = c.solve(&seg.clone_owned());
                seg.copy_from(&sol);
            }
            out
        };
        let y = solve(&grad);
        let delta = if cols.is_empty() {
            -y
        } else {
            let m = cols.len();
            let z: Vec<DVector<f64>> = cols.iter().map(&solve).collect();
            let mut cap = DMatrix::<f64>::identity(m, m);
            let mut rhs = DVector::<f64>::zeros(m);
            for i in 0..m {
                rhs[i] = cols[i].dot(&y);
                for j in 0..m {
                    cap[(i, j)] += cols[i].dot(&z[j]);
                }
            }
            let w = cap
                .cholesky()
                .ok_or_else(|| Error::Numeric("capacitance matrix is not positive definite".into()))?
                .solve(&rhs);
            let mut d = y;
            for (zj, wj) in z.iter().zip(w.iter()) {
                d.axpy(-wj, zj, 1.0);
            }
            -d
        };
        Ok((delta, grad))
    }
}

pub(crate) fn is_strictly_feasible(pb: &Problem, x: &DVector<f64>) -> bool {
    Solver::new(pb).evaluate(x.clone(), 0.0).is_some()
}

/// Runs the barrier method from a strictly feasible `start`.
pub(crate) fn solve(pb: &Problem, start: DVector<f64>, opts: &Options) -> Result<Outcome> {
    let solver = Solver::new(pb);
    let floors = pb.terms.iter().filter(|t| t.floor.is_some()).count();
    let m_total = (floors + pb.power.is_some() as usize) as f64
        + pb.dims.iter().sum::<usize>() as f64 * solver.n_sc as f64;
    let probe = solver
        .evaluate(start.clone(), 0.0)
        .ok_or_else(|| Error::Numeric("starting point is not strictly feasible".into()))?;
    let mut t = m_total / probe.objective.abs().max(1e-12);
    let mut pt = solver.evaluate(start, t).expect("feasible point stays feasible");
    let mut iterations = 0;
    let mut last_dec;
    loop {
        last_dec = f64::INFINITY;
        let mut flat = 0;
        loop {
            let (delta, grad) = solver.newton(&pt, t)?;
            let dec = -grad.dot(&delta);
            // A decrement that stopped shrinking is at the round-off floor.
            if dec > 0.5 * last_dec {
                flat += 1;
            } else {
                flat = 0;
            }
            let stalled = (dec < LOCAL_DEC && flat > 0) || (flat >= MAX_FLAT && dec < 1e-2);
            last_dec = dec.max(0.0);
            if dec <= 2.0 * CENTER_TOL || stalled {
                break;
            }
            if iterations >= opts.max_newton {
                return Err(Error::NotConverged {
                    iterations,
                    residual: (m_total + last_dec) / (t * pt.objective.abs().max(OBJECTIVE_FLOOR)),
                    gap: m_total / t,
                });
            }
            iterations += 1;
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-14 {
                let cand = &pt.x + &delta * alpha;
                if let Some(c) = solver.evaluate(cand, t) {
                    // Close to the center the decrease drops below the
                    // round-off of phi, so full steps are taken on trust.
                    if dec < LOCAL_DEC || c.phi <= pt.phi - ARMIJO * alpha * dec {
                        pt = c;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                // Round-off floor: treat as centered.
                break;
            }
        }
        if m_total / t <= opts.gap_tol * pt.objective.abs().max(OBJECTIVE_FLOOR) {
            break;
        }
        t *= GROWTH;
        pt = solver.evaluate(pt.x, t).expect("feasibility does not depend on t");
    }

    let floor_duals = pb
        .terms
        .iter()
        .zip(&pt.f)
        .map(|(term, &f)| term.floor.map_or(0.0, |b| 1.0 / (t * (f - b))))
        .collect();
    let power_dual = pb
        .power
        .as_ref()
        .map_or(0.0, |(_, budget)| 1.0 / (t * (budget - pt.power_used)));
    Ok(Outcome {
        covs: pt.r,
        floor_duals,
        power_dual,
        iterations,
        residual: (m_total + last_dec) / (t * pt.objective.abs().max(OBJECTIVE_FLOOR)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c64;

    fn scalar(g: f64) -> CMat {
        CMat::from_element(1, 1, c64(g, 0.0))
    }

    #[test]
    fn single_user_floor_matches_closed_form() {
        // |g|² = 4, 3 bits on one tone: p = (2^3 - 1) / 4.
        let g = vec![vec![scalar(2.0)]];
        let pb = Problem {
            g: &g,
            dims: vec![1],
            cost: vec![1.0],
            terms: vec![Term { users: vec![0], floor: Some(3.0), reward: 0.0 }],
            power: None,
        };
        let out = solve(&pb, DVector::from_element(1, 10.0), &Options { gap_tol: 1e-9, max_newton: 500 }).unwrap();
        let p = out.covs[0][0][(0, 0)].re;
        assert!((p - 7.0 / 4.0).abs() < 1e-9, "{p}");
        // dE/db = ln2 · 2^b / |g|²
        let dual = out.floor_duals[0];
        assert!((dual / (LN_2 * 2.0) - 1.0).abs() < 1e-5, "{dual}");
    }

    #[test]
    fn two_tone_sum_rate_is_waterfilling() {
        // gains 2 and 1, budget 1: p = (0.75, 0.25).
        let g = vec![vec![scalar(2f64.sqrt())], vec![scalar(1.0)]];
        let pb = Problem {
            g: &g,
            dims: vec![1],
            cost: vec![0.0],
            terms: vec![Term { users: vec![0], floor: None, reward: 1.0 }],
            power: Some((vec![1.0], 1.0)),
        };
        let out = solve(&pb, DVector::from_element(2, 0.25), &Options { gap_tol: 1e-9, max_newton: 500 }).unwrap();
        assert!((out.covs[0][0][(0, 0)].re - 0.75).abs() < 1e-8);
        assert!((out.covs[1][0][(0, 0)].re - 0.25).abs() < 1e-8);
    }
}
