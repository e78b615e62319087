//! SafeOpt/GoOSE set construction against direct GP refits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sambo::env::{fit_standardizer, Standardizer};
use sambo::gp::{beta_of_alpha, gp_posterior, GpPrior, KernelConfig};
use sambo::meta::LearnablePrior;
use sambo::safe_bo::{
    discretize, inference_regret, run_safe_bo, Algorithm, BoConfig, QueryRule, SafeBoState, TruthTable,
};

const ALPHA: f64 = 0.99;

fn line(n: usize, step: f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![i as f64 * step]).collect()
}

fn vanilla(l: f64) -> GpPrior {
    GpPrior::vanilla(&KernelConfig::new(l, 1.0, 0.05).unwrap())
}

/// Domain `[0, 1.9]` in steps of 0.1 with safe observations at both ends.
fn fixture() -> (SafeBoState, Vec<(usize, f64, f64)>) {
    let pts = line(20, 0.1);
    let mut s = SafeBoState::new(pts, vanilla(0.3), vanilla(0.3), vec![0], ALPHA).unwrap();
    let obs = vec![(0, 0.5, -3.0), (1, 0.3, -3.0), (2, 0.2, -2.5), (19, -0.4, -2.0)];
    for &(i, f, q) in &obs {
        s.observe(i, f, q).unwrap();
    }
    (s, obs)
}

fn oracle_pred(prior: &GpPrior, pts: &[Vec<f64>], obs: &[(usize, f64)]) -> Vec<(f64, f64)> {
    let xs: Vec<Vec<f64>> = obs.iter().map(|(i, _)| pts[*i].clone()).collect();
    let ys: Vec<f64> = obs.iter().map(|(_, y)| *y).collect();
    gp_posterior(prior, &xs, &ys, pts).unwrap()
}

#[test]
fn discretize_properties() {
    let one = discretize(&[(0.0, 1.0), (0.0, 1.0)], 1, 3, &[]).unwrap();
    assert_eq!(one.points.len(), 1);
    assert!(one.points[0].iter().all(|v| (0.0..=1.0).contains(v)));
    let a = discretize(&[(-2.0, 2.0), (-1.0, 1.0)], 500, 9, &[vec![-1.5, -0.5]]).unwrap();
    let b = discretize(&[(-2.0, 2.0), (-1.0, 1.0)], 500, 9, &[vec![-1.5, -0.5]]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.points.len(), 501);
    assert_eq!(a.points[a.seed_indices[0]], vec![-1.5, -0.5]);
    assert!(discretize(&[(0.0, 1.0)], 0, 1, &[]).is_err());
    assert!(discretize(&[(0.0, 1.0)], 5, 1, &[vec![2.0]]).is_err());
}

#[test]
fn prior_safe_set_holds_only_seeds() {
    let s = SafeBoState::new(line(10, 0.2), vanilla(0.5), vanilla(0.5), vec![3], ALPHA).unwrap();
    let safe = s.safe_set();
    assert_eq!(safe.iter().filter(|&&b| b).count(), 1);
    assert!(safe[3]);
}

#[test]
fn safe_set_matches_direct_posterior() {
    let (s, obs) = fixture();
    let pts = s.points().to_vec();
    let beta = beta_of_alpha(ALPHA).unwrap();
    let pred = oracle_pred(&vanilla(0.3), &pts, &obs.iter().map(|o| (o.0, o.2)).collect::<Vec<_>>());
    let safe = s.safe_set();
    for (i, (m, sd)) in pred.iter().enumerate() {
        assert_eq!(safe[i], m + beta * sd < 0.0 || i == 0, "point {i}");
        assert!((s.pred_q()[i].0 - m).abs() < 1e-10);
    }
    // the observed cluster and its neighbours
    assert!(safe[0] && safe[1] && safe[2] && safe[3]);
    assert!(!safe[10]);
}

#[test]
fn safeopt_expansion_counts_match_refit_enumeration() {
    let (s, obs) = fixture();
    let pts = s.points().to_vec();
    let beta = s.beta();
    let safe = s.safe_set();
    let cand: Vec<usize> = (0..pts.len()).filter(|&i| safe[i]).collect();
    let counts = s.safeopt_expansion_counts(&safe, &cand);
    let q_obs: Vec<(usize, f64)> = obs.iter().map(|o| (o.0, o.2)).collect();
    let base = oracle_pred(&vanilla(0.3), &pts, &q_obs);
    for (c, &i) in cand.iter().enumerate() {
        let mut hyp = q_obs.clone();
        hyp.push((i, base[i].0 - beta * base[i].1));
        let after = oracle_pred(&vanilla(0.3), &pts, &hyp);
        let want = (0..pts.len())
            .filter(|&j| !safe[j] && after[j].0 + beta * after[j].1 < 0.0)
            .count();
        assert_eq!(counts[c], want, "candidate {i}");
    }
    let mut positive: Vec<usize> = counts.iter().copied().filter(|&g| g > 0).collect();
    positive.sort_unstable();
    positive.dedup();
    assert!(positive.len() >= 2, "fixture should separate expanders: {counts:?}");

    let (query, sets) = s.safeopt_step(0.0).unwrap();
    let best = sets.expanders.iter().max_by_key(|(i, g)| (*g, std::cmp::Reverse(*i))).unwrap();
    let top = *counts.iter().max().unwrap();
    assert_eq!(best.1, top);
    assert!(sets.optimizers.iter().all(|&i| sets.safe[i]));
    assert!(sets.expanders.iter().all(|&(i, _)| sets.safe[i]));
    assert!(sets.safe[query.index]);
    let width = |i: usize| s.pred_f()[i].1.max(s.pred_q()[i].1);
    if query.rule == QueryRule::Expander {
        assert_eq!(query.index, best.0);
    } else {
        let opt = query.index;
        assert!(width(opt) >= width(best.0));
    }
}

#[test]
fn safeopt_first_query_from_single_seed_is_safe() {
    let mut s = SafeBoState::new(line(30, 0.05), vanilla(0.3), vanilla(0.3), vec![10], ALPHA).unwrap();
    s.observe(10, 0.0, -2.0).unwrap();
    let safe = s.safe_set();
    let (q, _) = s.safeopt_step(0.2).unwrap();
    assert!(safe[q.index]);
}

/// GoOSE sets rebuilt from direct refits and a finite-difference Lipschitz
/// constant.
#[test]
fn goose_matches_hand_enumeration() {
    let (mut s, obs) = fixture();
    let pts = s.points().to_vec();
    let beta = s.beta();
    let eps = 0.2;
    let q_obs: Vec<(usize, f64)> = obs.iter().map(|o| (o.0, o.2)).collect();
    let f_obs: Vec<(usize, f64)> = obs.iter().map(|o| (o.0, o.1)).collect();
    let pq = oracle_pred(&vanilla(0.3), &pts, &q_obs);
    let pf = oracle_pred(&vanilla(0.3), &pts, &f_obs);
    let h = 1e-6;
    let xs: Vec<Vec<f64>> = q_obs.iter().map(|(i, _)| pts[*i].clone()).collect();
    let ys: Vec<f64> = q_obs.iter().map(|(_, y)| *y).collect();
    let lip = pts
        .iter()
        .map(|x| {
            let up = gp_posterior(&vanilla(0.3), &xs, &ys, &[vec![x[0] + h]]).unwrap()[0].0;
            let dn = gp_posterior(&vanilla(0.3), &xs, &ys, &[vec![x[0] - h]]).unwrap()[0].0;
            ((up - dn) / (2.0 * h)).abs()
        })
        .fold(0.0, f64::max);

    let (query, sets) = s.goose_step(eps).unwrap();
    assert!((sets.lipschitz - lip).abs() <= 1e-4 * lip);

    let sp: Vec<bool> = (0..pts.len()).map(|i| i == 0 || pq[i].0 + beta * pq[i].1 < 0.0).collect();
    assert_eq!(sets.pessimistic, sp);
    let w: Vec<usize> = (0..pts.len()).filter(|&i| sp[i] && 2.0 * beta * pq[i].1 > eps).collect();
    assert_eq!(sets.expanders, w);
    let lcb = |i: usize| pq[i].0 - beta * pq[i].1;
    let d = |a: usize, b: usize| (pts[a][0] - pts[b][0]).abs();
    let so: Vec<bool> = (0..pts.len())
        .map(|i| sp[i] || w.iter().any(|&z| lcb(z) + sets.lipschitz * d(z, i) < 0.0))
        .collect();
    assert_eq!(sets.optimistic, so);
    for i in 0..pts.len() {
        assert!(!sp[i] || so[i]);
    }
    let acq = |i: usize| pf[i].0 - beta * pf[i].1;
    let cand = (0..pts.len()).filter(|&i| so[i]).min_by(|&a, &b| acq(a).total_cmp(&acq(b))).unwrap();
    if sp[cand] {
        assert_eq!(query.index, cand);
        assert_eq!(query.rule, QueryRule::Optimizer);
    } else {
        let want = w
            .iter()
            .copied()
            .filter(|&z| lcb(z) + sets.lipschitz * d(z, cand) < 0.0)
            .min_by(|&a, &b| d(a, cand).total_cmp(&d(b, cand)))
            .unwrap();
        assert_eq!(query.index, want);
        assert_eq!(query.rule, QueryRule::Expander);
    }
}

#[test]
fn goose_accepts_pessimistically_safe_candidate() {
    // objective lowest inside the well-explored safe cluster
    let mut s = SafeBoState::new(line(20, 0.1), vanilla(0.3), vanilla(0.3), vec![0], ALPHA).unwrap();
    for i in 0..6 {
        s.observe(i, if i == 3 { -3.0 } else { 1.0 }, -3.0).unwrap();
    }
    let (q, sets) = s.goose_step(10.0).unwrap();
    // a huge epsilon empties W, so the optimistic set equals the pessimistic one
    assert!(sets.expanders.is_empty());
    assert_eq!(sets.optimistic, sets.pessimistic);
    assert_eq!(q.rule, QueryRule::Optimizer);
    assert!(sets.pessimistic[q.index]);
}

#[test]
fn lipschitz_estimates() {
    let mut s = SafeBoState::new(line(40, 0.05), vanilla(0.4), vanilla(0.4), vec![0], ALPHA).unwrap();
    assert_eq!(s.lipschitz_estimate().unwrap(), 0.0);
    let y = -1.3;
    s.observe(7, 0.0, y).unwrap();
    // mu(x) = k(x, x1) y / (nu + s2), derivative -(x - x1)/l^2 times that
    let x1 = 7.0 * 0.05;
    let c = y / (1.0 + 0.05 * 0.05);
    let want = (0..40)
        .map(|i| {
            let x = i as f64 * 0.05;
            let k = (-(x - x1).powi(2) / (2.0 * 0.16)).exp();
            (-(x - x1) / 0.16 * k * c).abs()
        })
        .fold(0.0, f64::max);
    assert!((s.lipschitz_estimate().unwrap() - want).abs() < 1e-12);
}

#[test]
fn lipschitz_of_learned_prior_matches_finite_differences() {
    let hyper = KernelConfig::new(0.5, 1.0, 0.1).unwrap();
    let prior = LearnablePrior::init(2, &hyper, &mut ChaCha8Rng::seed_from_u64(4)).to_gp_prior();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)]).collect();
    let mut s = SafeBoState::new(pts.clone(), prior.clone(), prior.clone(), vec![0], ALPHA).unwrap();
    let obs = [(0usize, -1.0), (5, -0.5), (9, 0.7)];
    for &(i, q) in &obs {
        s.observe(i, 0.0, q).unwrap();
    }
    let xs: Vec<Vec<f64>> = obs.iter().map(|(i, _)| pts[*i].clone()).collect();
    let ys: Vec<f64> = obs.iter().map(|(_, y)| *y).collect();
    let h = 1e-5;
    let mut fd: f64 = 0.0;
    for x in &pts {
        for d in 0..2 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[d] += h;
            dn[d] -= h;
            let m = gp_posterior(&prior, &xs, &ys, &[up, dn]).unwrap();
            fd = fd.max(((m[0].0 - m[1].0) / (2.0 * h)).abs());
        }
    }
    let got = s.lipschitz_estimate().unwrap();
    assert!((got - fd).abs() <= 1e-4 * fd, "{got} vs {fd}");
}

#[test]
fn inference_regret_matches_enumeration() {
    let (s, _) = fixture();
    let f: Vec<f64> = (0..20).map(|i| ((i as f64) * 0.37).sin()).collect();
    let q: Vec<f64> = (0..20).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
    let truth = TruthTable { f: f.clone(), q: q.clone() };
    let f_star = truth.safe_optimum().unwrap();
    let want_star = (0..20).filter(|&i| q[i] <= 0.0).map(|i| f[i]).fold(f64::INFINITY, f64::min);
    assert_eq!(f_star, want_star);
    let safe = s.safe_set();
    let guess = (0..20)
        .filter(|&i| safe[i])
        .min_by(|&a, &b| s.pred_f()[a].0.total_cmp(&s.pred_f()[b].0))
        .unwrap();
    assert_eq!(s.best_guess(), guess);
    assert_eq!(inference_regret(&s, &truth, f_star), (f[guess] - f_star).max(0.0));
    assert_eq!(inference_regret(&s, &truth, f[guess]), 0.0);
}

/// Smooth 2-d toy problem: f a bowl, q safe inside a disc around the seed.
fn toy() -> (sambo::safe_bo::DiscreteDomain, Standardizer, TruthTable) {
    let bounds = [(-1.0, 1.0), (-1.0, 1.0)];
    let dom = discretize(&bounds, 300, 11, &[vec![-0.6, -0.6]]).unwrap();
    let f: Vec<f64> = dom.points.iter().map(|x| (x[0] - 0.2).powi(2) + (x[1] - 0.1).powi(2)).collect();
    let q: Vec<f64> = dom.points.iter().map(|x| x[0] * x[0] + x[1] * x[1] - 0.8).collect();
    let scaler = fit_standardizer(&bounds, [(&f[..], &q[..])]).unwrap();
    (dom, scaler, TruthTable { f, q })
}

fn toy_run(alg: Algorithm, iterations: usize, seed: u64) -> sambo::safe_bo::RunRecord {
    let (dom, scaler, truth) = toy();
    let cfg = BoConfig {
        algorithm: alg,
        iterations,
        alpha: ALPHA,
        epsilon: 0.2,
    };
    let prior = GpPrior::vanilla(&KernelConfig::new(0.6, 1.0, 0.05).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lookup = dom.clone();
    run_safe_bo(&dom, &scaler, &prior, &prior, &cfg, Some(&truth), |x| {
        let i = lookup.points.iter().position(|p| p.as_slice() == x).unwrap();
        Ok((truth.f[i] + 0.001 * rng.random_range(-1.0..1.0), truth.q[i] + 0.001 * rng.random_range(-1.0..1.0)))
    })
    .unwrap()
}

#[test]
fn zero_iterations_records_seed_only() {
    let rec = toy_run(Algorithm::Goose, 0, 1);
    assert_eq!(rec.rows.len(), 1);
    assert_eq!(rec.rows[0].t, 0);
    assert_eq!(rec.rows[0].x, vec![-0.6, -0.6]);
}

#[test]
fn runs_are_deterministic_safe_and_consistent() {
    for alg in [Algorithm::SafeOpt, Algorithm::Goose] {
        let a = toy_run(alg, 15, 3);
        let b = toy_run(alg, 15, 3);
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.summary.violations, 0, "{alg}");
        let total: f64 = a.rows.iter().filter(|r| r.t > 0).map(|r| r.regret.unwrap()).sum();
        assert_eq!(a.summary.cumulative_regret.unwrap(), total);
        assert!(a.rows.iter().all(|r| r.regret.unwrap() >= 0.0));
        let mut running = f64::NEG_INFINITY;
        for r in &a.rows {
            running = running.max(r.q);
            assert_eq!(r.max_q, running);
        }
    }
}

/// Replays a run and checks every query against a from-scratch refit.
#[test]
fn audit_replay() {
    let (dom, scaler, _) = toy();
    let rec = toy_run(Algorithm::Goose, 12, 8);
    let prior = GpPrior::vanilla(&KernelConfig::new(0.6, 1.0, 0.05).unwrap());
    let beta = beta_of_alpha(ALPHA).unwrap();
    let model: Vec<Vec<f64>> = dom.points.iter().map(|x| scaler.apply_x(x)).collect();
    for (k, row) in rec.rows.iter().enumerate().filter(|(_, r)| r.t > 0) {
        let prev = &rec.rows[..k];
        let xs: Vec<Vec<f64>> = prev.iter().map(|r| scaler.apply_x(&r.x)).collect();
        let ys: Vec<f64> = prev.iter().map(|r| scaler.apply_q(r.q)).collect();
        let (m, sd) = gp_posterior(&prior, &xs, &ys, &[model[row.index].clone()]).unwrap()[0];
        assert!(m + beta * sd < 0.0 || dom.seed_indices.contains(&row.index), "t={}", row.t);
    }
}

#[test]
fn csv_layout() {
    let rec = toy_run(Algorithm::SafeOpt, 2, 2);
    let csv = rec.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "# run-csv v1");
    assert_eq!(lines.next().unwrap(), "t,x0,x1,f,q,regret,max_q");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 7);
    assert_eq!(first[1].parse::<f64>().unwrap(), -0.6);
}
