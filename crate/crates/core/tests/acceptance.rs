//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use itertools::Itertools;
use mcnoma::allocator::{self, AllocationProblem, AllocationSolution};
use mcnoma::baselines::waterfill;
use mcnoma::channel::{ChannelSet, LinkSide};
use mcnoma::duality::{bc_dpc_rates, dual_mac, mac_to_bc_covariances};
use mcnoma::harness::{emit_all, run_experiment, ExperimentKind, ExperimentSpec, Method, ResultTable};
use mcnoma::linalg::{self, c64, CMat};
use mcnoma::sic::{sic_rates, CovarianceSet, DecodingOrder, RateAllocation};
use mcnoma::timeshare::{average_rates, convex_hull_fractions, ScheduleBlock, TimeShareSchedule, Vertex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// KKT residuals and complementary-slackness products seen by other criteria.
static CERTIFICATES: Mutex<Vec<(String, f64, f64)>> = Mutex::new(Vec::new());

fn certify(label: &str, sol: &AllocationSolution, min_rates: Option<&[f64]>) {
    let slack = match min_rates {
        Some(b) => sol
            .rates
            .totals()
            .iter()
            .zip(b)
            .zip(&sol.duals)
            .map(|((r, b), t)| t * (r - b))
            .fold(0.0f64, |a, x| a.max(x.abs())),
        None => 0.0,
    };
    CERTIFICATES.lock().unwrap().push((label.to_string(), sol.kkt_residual, slack));
}

fn certify_rows(label: &str, table: &ResultTable) {
    let mut certs = CERTIFICATES.lock().unwrap();
    for r in table.rows.iter().filter(|r| r.method == Method::Proposed) {
        certs.push((format!("{label} seed {}", r.seed), r.kkt_residual, 0.0));
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn scalar_mac(amp: &[Vec<f64>]) -> ChannelSet {
    let u = amp[0].len();
    let mats = amp.iter().map(|g| CMat::from_fn(1, u, |_, c| c64(g[c], 0.0))).collect();
    ChannelSet::from_user_dims(LinkSide::MultipleAccess, mats, &vec![1; u], vec![linalg::identity(1)]).unwrap()
}

fn c1_duality() -> Verdict {
    let start = Instant::now();
    let mut worst_rate: f64 = 0.0;
    let mut worst_trace: f64 = 0.0;
    for seed in 0..100u64 {
        let mut r = rng(1000 + seed);
        let users = r.random_range(1..=3usize);
        let n_t = r.random_range(1..=4usize);
        let n_sc = r.random_range(1..=8usize);
        let dims: Vec<usize> = (0..users).map(|_| r.random_range(1..=2usize.min(n_t))).collect();
        let n_r: usize = dims.iter().sum();
        let mut g = || c64(r.random::<f64>() * 2.0 - 1.0, r.random::<f64>() * 2.0 - 1.0);
        let mats: Vec<CMat> = (0..n_sc).map(|_| CMat::from_fn(n_r, n_t, |_, _| g())).collect();
        let noise = linalg::identity(n_r).scale(0.3);
        let bc = ChannelSet::from_user_dims(LinkSide::Broadcast, mats, &dims, vec![noise]).unwrap();
        let q: Vec<Vec<CMat>> = (0..n_sc)
            .map(|_| {
                dims.iter()
                    .map(|&d| {
                        let a = CMat::from_fn(d, d, |_, _| g());
                        &a * a.adjoint()
                    })
                    .collect()
            })
            .collect();
        let q = CovarianceSet::new(LinkSide::MultipleAccess, dims.clone(), q).unwrap();
        let mut seq: Vec<usize> = (0..users).collect();
        for i in (1..users).rev() {
            seq.swap(i, r.random_range(0..=i));
        }
        let order = DecodingOrder::from_sequence(seq).unwrap();
        let mac = dual_mac(&bc).unwrap();
        let mac_rates = sic_rates(&mac, &q, &order).unwrap();
        let sigma = mac_to_bc_covariances(&bc, &q, &order).unwrap();
        let bc_rates = bc_dpc_rates(&bc, &sigma, &order.reversed()).unwrap();
        for (a, b) in mac_rates.totals().iter().zip(bc_rates.totals()) {
            worst_rate = worst_rate.max((a - b).abs() / a.abs().max(1e-12));
        }
        let (ta, tb) = (q.total_trace(), sigma.total_trace());
        worst_trace = worst_trace.max((ta - tb).abs() / ta);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst_rate <= 1e-6 && worst_trace <= 1e-8 && secs < 10.0,
        format!("max rate err {worst_rate:.2e}, max trace err {worst_trace:.2e}, {secs:.1}s"),
    )
}

/// Least weighted energy for a fixed order, each user water-filling from
/// the last decoded backwards against the users decoded after it.
fn sequential_energy(gains: &[Vec<f64>], floors: &[f64], weights: &[f64], order: &[usize]) -> f64 {
    let n_sc = gains.len();
    let mut p = vec![vec![0.0; order.len()]; n_sc];
    for k in (0..order.len()).rev() {
        let u = order[k];
        let eff: Vec<f64> = (0..n_sc)
            .map(|n| {
                let i: f64 = 1.0 + order[k + 1..].iter().map(|&v| gains[n][v] * p[n][v]).sum::<f64>();
                gains[n][u] / i
            })
            .collect();
        let bits = |mu: f64| -> f64 { eff.iter().map(|e| (mu * e).max(1.0).log2()).sum() };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while bits(hi) < floors[u] {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if bits(mid) < floors[u] {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        for n in 0..n_sc {
            p[n][u] = (hi - 1.0 / eff[n]).max(0.0);
        }
    }
    (0..n_sc)
        .map(|n| (0..order.len()).map(|u| weights[u] * p[n][u]).sum::<f64>())
        .sum()
}

/// Whether any order other than `best` delivers the floors with the
/// solution's covariances.
fn order_is_immaterial(ch: &ChannelSet, sol: &AllocationSolution, floors: &[f64], best: &[usize]) -> bool {
    let users = floors.len();
    (0..users).permutations(users).filter(|o| o != best).any(|o| {
        let rates = sic_rates(ch, &sol.covariances, &DecodingOrder::from_sequence(o).unwrap()).unwrap();
        rates.totals().iter().zip(floors).all(|(r, b)| *r >= b - 1e-6 * b.max(1.0))
    })
}

fn c2_oracle() -> Verdict {
    let start = Instant::now();
    let (mut worst, mut unique, mut matched) = (0.0f64, 0, 0);
    let (mut beaten, mut immaterial, mut literal_mismatch) = (0, 0, 0);
    let mut mismatches = Vec::new();
    for seed in 0..50u64 {
        let mut r = rng(2000 + seed);
        let users = [2usize, 3][r.random_range(0..2)];
        let n_sc = [1usize, 2, 4][r.random_range(0..3)];
        let amp: Vec<Vec<f64>> = (0..n_sc)
            .map(|_| (0..users).map(|_| r.random_range(0.2..2.0)).collect())
            .collect();
        let gains: Vec<Vec<f64>> = amp.iter().map(|row| row.iter().map(|a| a * a).collect()).collect();
        let weights: Vec<f64> = (0..users).map(|_| r.random_range(0.5..2.0)).collect();
        let floors: Vec<f64> = (0..users).map(|_| r.random_range(0.2..3.0)).collect();
        let ch = scalar_mac(&amp);
        let problem = AllocationProblem::new(ch.clone(), weights.clone(), floors.clone()).unwrap();
        let sol = allocator::minimize_energy(&problem).unwrap();
        certify(&format!("oracle instance {seed}"), &sol, Some(&floors));

        let mut energies: Vec<(f64, Vec<usize>)> = (0..users)
            .permutations(users)
            .map(|o| (sequential_energy(&gains, &floors, &weights, &o), o))
            .collect();
        energies.sort_by(|a, b| a.0.total_cmp(&b.0));
        let best = energies[0].0;
        worst = worst.max(sol.energy / best - 1.0);
        if energies[1].0 <= best * (1.0 + 1e-4) || sol.has_ties() {
            continue;
        }
        let (order, _) = allocator::extract_decoding_order(&sol, 1e-5);
        let agrees = order.sequence() == energies[0].1.as_slice();
        if !agrees {
            literal_mismatch += 1;
        }
        // Sequential water-filling is not optimal per order once weights
        // differ and N > 1, so its ranking only identifies the optimal order
        // when it reaches the optimum and the order actually matters there.
        if sol.energy < best * (1.0 - 1e-6) {
            beaten += 1;
            continue;
        }
        if order_is_immaterial(&ch, &sol, &floors, &energies[0].1) {
            immaterial += 1;
            continue;
        }
        unique += 1;
        if agrees {
            matched += 1;
        } else {
            mismatches.push(seed);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-4 && matched == unique && secs < 60.0,
        format!(
            "energy/oracle - 1 <= {worst:.2e}; orders matched {matched}/{unique} where the oracle is exact and the \
             order matters{}; skipped {beaten} where the solver beats the oracle, {immaterial} order-immaterial \
             ({literal_mismatch} raw disagreements); {secs:.1}s",
            if mismatches.is_empty() { String::new() } else { format!(" (mismatch seeds {mismatches:?})") }
        ),
    )
}

fn c3_kkt() -> Verdict {
    // Energy-mode instances on generated MIMO channels, on top of those
    // recorded by the other criteria.
    for seed in 0..10u64 {
        let mut spec = ExperimentSpec::new(ExperimentKind::DistanceSweep, vec![500.0], vec![Method::Oma], 1);
        spec.base_seed = 3000 + seed;
        let scenario = spec.scenario_for(0, 0).unwrap();
        let bc = mcnoma::channel::generate_channels(&scenario).unwrap();
        let mac = dual_mac(&bc).unwrap();
        let power = mcnoma::channel::reference_tx_power_for_snr(&bc, 30.0, 0).unwrap();
        let oma = mcnoma::baselines::oma_linear_allocate(&mac, &mcnoma::baselines::PowerBudget::Total(power)).unwrap();
        let floors = oma.rates.totals();
        let problem = AllocationProblem::new(mac, vec![1.0; 3], floors.clone()).unwrap();
        let sol = allocator::minimize_energy(&problem).unwrap();
        certify(&format!("mimo energy seed {seed}"), &sol, Some(&floors));
    }
    let certs = CERTIFICATES.lock().unwrap();
    let worst_kkt = certs.iter().map(|c| c.1).fold(0.0f64, f64::max);
    let worst_slack = certs.iter().map(|c| c.2).fold(0.0f64, f64::max);
    let bad: Vec<&str> = certs
        .iter()
        .filter(|c| !(c.1 < 1e-6) || !(c.2 <= 1e-5))
        .map(|c| c.0.as_str())
        .collect();
    verdict(
        bad.is_empty(),
        format!(
            "{} solutions, max residual {worst_kkt:.2e}, max |θ(b - b_min)| {worst_slack:.2e}{}",
            certs.len(),
            if bad.is_empty() { String::new() } else { format!(", failing: {bad:?}") }
        ),
    )
}

fn c4_timeshare() -> Verdict {
    let vertex = |seq: Vec<usize>, r: [f64; 3]| {
        Vertex::new(
            DecodingOrder::from_sequence(seq).unwrap(),
            RateAllocation::new(r.iter().map(|&x| vec![x]).collect()).unwrap(),
        )
    };
    let a = vertex(vec![0, 1, 2], [123.0, 170.0, 62.0]);
    let b = vertex(vec![0, 2, 1], [123.0, 196.0, 31.0]);
    let sched = TimeShareSchedule {
        blocks: vec![
            ScheduleBlock {
                fraction: 0.91,
                vertex: a.clone(),
            },
            ScheduleBlock {
                fraction: 0.09,
                vertex: b.clone(),
            },
        ],
        target: vec![],
    };
    let avg = average_rates(&sched);
    let avg_ok = (avg[0] - 123.0).abs() < 0.01 && (avg[1] - 172.34).abs() < 0.01 && (avg[2] - 59.21).abs() < 0.01;
    let inv = convex_hull_fractions(&[a, b], &[123.0, 172.34, 59.21]).unwrap();
    let rho = inv
        .blocks
        .iter()
        .find(|blk| blk.vertex.rates[1] == 170.0)
        .map_or(0.0, |blk| blk.fraction);
    verdict(
        avg_ok && (rho - 0.91).abs() <= 1e-3,
        format!("average ({:.2}, {:.2}, {:.2}), recovered ρ = {rho:.6}", avg[0], avg[1], avg[2]),
    )
}

fn curve(table: &ResultTable, m: Method) -> Vec<f64> {
    (0..table.spec.values.len())
        .map(|i| table.mean(m, i, |r| r.sum_se).unwrap_or(f64::NAN))
        .collect()
}

fn run(spec: &ExperimentSpec, label: &str) -> ResultTable {
    let t = run_experiment(spec).unwrap();
    let failed: Vec<String> = t
        .rows
        .iter()
        .filter(|r| !r.is_ok())
        .map(|r| format!("{} seed {}: {}", r.method.label(), r.seed, r.status))
        .collect();
    assert!(failed.is_empty(), "{label}: {failed:?}");
    certify_rows(label, &t);
    t
}

fn c5_ordering() -> Verdict {
    let start = Instant::now();
    let methods = vec![Method::Proposed, Method::McNoma, Method::Noma, Method::Oma];
    let t = run(&ExperimentSpec::new(ExperimentKind::SnrSweep, vec![30.0], methods.clone(), 20), "snr");
    let means: Vec<f64> = methods.iter().map(|&m| curve(&t, m)[0]).collect();
    let gaps: Vec<f64> = means.windows(2).map(|w| (w[0] - w[1]) / w[0]).collect();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        gaps.iter().all(|&g| g >= -1e-4) && secs < 300.0,
        format!(
            "proposed {:.4} >= mc_noma {:.4} >= noma {:.4} >= oma {:.4} bits/s/Hz, min gap {:.2e}, {secs:.1}s",
            means[0],
            means[1],
            means[2],
            means[3],
            gaps.iter().copied().fold(f64::INFINITY, f64::min)
        ),
    )
}

fn c6_massive_mimo() -> Verdict {
    let t = run(
        &ExperimentSpec::new(ExperimentKind::NtSweep, vec![2.0, 4.0, 8.0], vec![Method::Proposed, Method::Oma], 20),
        "nt",
    );
    let (p, o) = (curve(&t, Method::Proposed), curve(&t, Method::Oma));
    let rel: Vec<f64> = p.iter().zip(&o).map(|(p, o)| (p - o) / o).collect();
    verdict(
        rel[2] < rel[0],
        format!("relative gap n_T=2: {:.4}, n_T=4: {:.4}, n_T=8: {:.4}", rel[0], rel[1], rel[2]),
    )
}

fn c7_crosstalk() -> Verdict {
    let t = run(
        &ExperimentSpec::new(
            ExperimentKind::UserSweep,
            vec![2.0, 3.0, 4.0, 5.0],
            vec![Method::Proposed, Method::Oma],
            20,
        ),
        "users",
    );
    let (p, o) = (curve(&t, Method::Proposed), curve(&t, Method::Oma));
    let gap: Vec<f64> = p.iter().zip(&o).map(|(p, o)| p - o).collect();
    verdict(
        gap.windows(2).all(|w| w[1] >= w[0]),
        format!("absolute gap U=2..5: {}", gap.iter().map(|g| format!("{g:.4}")).join(", ")),
    )
}

fn c8_subcarriers() -> Verdict {
    let start = Instant::now();
    let t = run(
        &ExperimentSpec::new(
            ExperimentKind::SubcarrierSweep,
            vec![64.0, 256.0, 1024.0],
            vec![Method::Proposed, Method::Oma],
            10,
        ),
        "subcarriers",
    );
    let (p, o) = (curve(&t, Method::Proposed), curve(&t, Method::Oma));
    let variation = |c: &[f64]| {
        let (lo, hi) = c.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        (hi - lo) / lo
    };
    let secs = start.elapsed().as_secs_f64();
    verdict(
        p.iter().zip(&o).all(|(p, o)| p > o) && variation(&p) < 0.1 && variation(&o) < 0.1 && secs < 600.0,
        format!(
            "proposed {} vs oma {} bits/s/Hz, variation {:.3} / {:.3}, {secs:.1}s",
            p.iter().map(|x| format!("{x:.3}")).join("/"),
            o.iter().map(|x| format!("{x:.3}")).join("/"),
            variation(&p),
            variation(&o)
        ),
    )
}

fn c9_waterfill() -> Verdict {
    let p = waterfill(&[2.0, 1.0], 1.0);
    let hand = (p[0] - 0.75).abs() <= 1e-9 && (p[1] - 0.25).abs() <= 1e-9;
    let mut worst: f64 = 0.0;
    let mut r = rng(9000);
    for _ in 0..1000 {
        let k = r.random_range(1..=16usize);
        let gains: Vec<f64> = (0..k).map(|_| r.random_range(0.01..10.0)).collect();
        let budget = r.random_range(0.01..50.0);
        let p = waterfill(&gains, budget);
        let total: f64 = p.iter().sum();
        worst = worst.max((total - budget).abs() / budget);
        let mu = p
            .iter()
            .zip(&gains)
            .find(|(p, _)| **p > 0.0)
            .map(|(p, g)| p + 1.0 / g)
            .unwrap();
        for (pi, g) in p.iter().zip(&gains) {
            let err = if *pi > 0.0 {
                (pi + 1.0 / g - mu).abs() / mu
            } else {
                (mu - 1.0 / g).max(0.0) / mu
            };
            worst = worst.max(err);
        }
    }
    verdict(
        hand && worst <= 1e-9,
        format!("(0.75, 0.25) -> ({}, {}), worst KKT error over 1000 instances {worst:.2e}", p[0], p[1]),
    )
}

fn c10_determinism() -> Verdict {
    let mut spec = ExperimentSpec::new(ExperimentKind::TimeshareDemo, vec![20.0, 30.0], Method::ALL.to_vec(), 3);
    spec.base.num_subcarriers = 16;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let files: Vec<Vec<std::path::PathBuf>> = dirs
        .iter()
        .map(|d| emit_all(&run_experiment(&spec).unwrap(), d.path()).unwrap())
        .collect();
    let mut differing = Vec::new();
    for (a, b) in files[0].iter().zip(&files[1]) {
        if std::fs::read(a).unwrap() != std::fs::read(b).unwrap() {
            differing.push(a.file_name().unwrap().to_string_lossy().to_string());
        }
    }
    verdict(
        files[0].len() == files[1].len() && differing.is_empty(),
        format!("{} files compared, {} differ {differing:?}", files[0].len(), differing.len()),
    )
}

fn main() {
    let criteria: [(usize, &str, fn() -> Verdict); 10] = [
        (1, "duality round trip", c1_duality),
        (2, "energy vs brute-force order oracle", c2_oracle),
        (4, "time-sharing arithmetic", c4_timeshare),
        (5, "method ordering at 30 dB", c5_ordering),
        (6, "massive-MIMO convergence", c6_massive_mimo),
        (7, "crosstalk gap growth", c7_crosstalk),
        (8, "subcarrier sweep", c8_subcarriers),
        (9, "water-filling oracle", c9_waterfill),
        (10, "determinism", c10_determinism),
        (3, "KKT certification", c3_kkt),
    ];
    let mut lines = Vec::new();
    for (id, name, f) in criteria {
        let start = Instant::now();
        let v = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        lines.push((id, name, v, start.elapsed()));
    }
    lines.sort_by_key(|l| l.0);
    let mut failed = 0;
    for (id, name, v, t) in &lines {
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {:<36} {}  {} [{:.1}s]",
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            Duration::as_secs_f64(t)
        );
    }
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
