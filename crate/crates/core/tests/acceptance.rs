//! End-to-end acceptance checks.
//!
//! Prints one `PASS`/`FAIL` line per criterion followed by a summary. Set
//! `DPPG_ACCEPTANCE_ONLY=1,3,7` to run a subset and
//! `DPPG_ACCEPTANCE_STRICT=1` to exit with a failure status when any
//! criterion fails.

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution};

use dppg_core::accountant::{c1, clip_l2, epsilon_of_z, l2_norm};
use dppg_core::config::ExperimentConfig;
use dppg_core::distributions::{
    gx2_cdf, ncx2_cdf, ncx2_quantile, sample_tr_size_kl, GeneralizedChiSq, NoncentralChiSq,
};
use dppg_core::distributions::{kl_size_mean, kl_size_variance};
use dppg_core::dppg::{
    aggregate_and_privatize, ppo_surrogate, ppo_surrogate_grad, train_deep, train_linear_riverswim,
    uniform_policy_regret, LinearVariant, LocalUpdate,
};
use dppg_core::envs::{Trajectory, Transition};
use dppg_core::harness::run_sweep;
use dppg_core::linalg::SquareMatrix;
use dppg_core::policies::{Architecture, Critic, CriticKind, FeatureMap};
use dppg_core::rng::{std_normal, Rng, Streams};
use dppg_core::trust_region::{
    clip_norm_kl, clip_norm_l2_markov, clip_norm_l2_quantile, clip_norm_loss_gap, containment_kl,
    containment_l2, containment_loss_gap, ContainmentReport, FisherMatrix, LossGapParams,
    TrustRegionParams,
};

struct Report {
    passed: usize,
    failed: Vec<String>,
}

impl Report {
    fn check(&mut self, id: &str, ok: bool, detail: impl AsRef<str>) {
        println!(
            "{} [{id}] {}",
            if ok { "PASS" } else { "FAIL" },
            detail.as_ref()
        );
        if ok {
            self.passed += 1;
        } else {
            self.failed.push(id.to_string());
        }
    }
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ExperimentConfig::from_toml(&std::fs::read_to_string(&path).unwrap(), &path).unwrap()
}

fn random_psd(d: usize, rng: &mut Rng) -> FisherMatrix {
    let a: Vec<f64> = (0..d * d).map(|_| std_normal(rng)).collect();
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let s: f64 = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum();
            m[i * d + j] = s / d as f64 + if i == j { 1e-3 } else { 0.0 };
        }
    }
    FisherMatrix::new(SquareMatrix::from_row_major(d, m).unwrap()).unwrap()
}

fn random_direction(d: usize, norm: f64, rng: &mut Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| std_normal(rng)).collect();
    let n = l2_norm(&v);
    v.iter().map(|x| norm * x / n).collect()
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.1}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn accountant(r: &mut Report) {
    let e = epsilon_of_z(1.0, 1e-5).unwrap().epsilon;
    r.check(
        "1a",
        (e - 5.00).abs() <= 0.01,
        format!("epsilon_of_z(1, 1e-5) = {e:.5}, want 5.00 +/- 0.01"),
    );
    let a = c1(1e-2).unwrap();
    r.check(
        "1b",
        (a - 3.07).abs() <= 0.01,
        format!("c1(1e-2) = {a:.5}, want 3.07 +/- 0.01"),
    );
    let b = c1(1e-5).unwrap();
    r.check(
        "1c",
        (b - 4.845).abs() <= 0.005,
        format!("c1(1e-5) = {b:.5}, want 4.845 +/- 0.005"),
    );
}

fn distributions(r: &mut Report) {
    let mut rng = Streams::new(2).stream("acceptance-ncx2", 0);
    let ps = [0.05, 0.25, 0.5, 0.75, 0.95];
    let mut worst_round = 0.0f64;
    let mut worst_mc = 0.0f64;
    let samples = 10_000_000;
    for d in [1usize, 3, 7, 20] {
        for lambda in [0.3, 2.0, 10.0] {
            let dist = NoncentralChiSq::new(d, lambda).unwrap();
            let xs: Vec<f64> = ps
                .iter()
                .map(|&p| ncx2_quantile(&dist, p).unwrap())
                .collect();
            for (x, p) in xs.iter().zip(ps) {
                worst_round = worst_round.max((ncx2_cdf(&dist, *x) - p).abs());
            }
            let rest = (d > 1).then(|| ChiSquared::new((d - 1) as f64).unwrap());
            let shift = lambda.sqrt();
            let mut counts = [0usize; 5];
            for _ in 0..samples {
                let n = std_normal(&mut rng) + shift;
                let v = n * n + rest.as_ref().map_or(0.0, |c| c.sample(&mut rng));
                for (c, x) in counts.iter_mut().zip(&xs) {
                    if v <= *x {
                        *c += 1;
                    }
                }
            }
            for (c, x) in counts.iter().zip(&xs) {
                worst_mc = worst_mc.max((*c as f64 / samples as f64 - ncx2_cdf(&dist, *x)).abs());
            }
        }
    }
    r.check("2a", worst_round <= 1e-6, format!("max |ncx2_cdf(ncx2_quantile(p)) - p| = {worst_round:.2e} over 12 (d, lambda) pairs, want <= 1e-6"));
    r.check(
        "2b",
        worst_mc <= 0.003,
        format!("max |ncx2_cdf - MC CDF| = {worst_mc:.5} at 1e7 samples per pair, want <= 0.003"),
    );

    let mut worst = 0.0f64;
    let mut rng = Streams::new(2).stream("acceptance-gx2", 0);
    for (d, z, s) in [(7usize, 1.0, 1.0), (5, 0.5, 0.3), (7, 3.0, 0.05)] {
        let fisher = random_psd(d, &mut rng);
        let gbar = random_direction(d, s * rng.random_range(0.2..1.0), &mut rng);
        let eta = 1.0;
        let dist = GeneralizedChiSq::from_fisher(&fisher, &gbar, z * s).unwrap();
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| sample_tr_size_kl(eta, z, s, &gbar, &fisher, &mut rng).unwrap())
            .collect();
        draws.sort_by(f64::total_cmp);
        for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let x = draws[(q * n as f64) as usize];
            let emp = draws.partition_point(|v| *v <= x) as f64 / n as f64;
            let scaled = 2.0 * x / (eta * eta * (z * s).powi(2));
            worst = worst.max((gx2_cdf(&dist, scaled) - emp).abs());
        }
    }
    r.check(
        "2c",
        worst <= 0.01,
        format!(
            "max |gx2_cdf - MC of the quadratic form| = {worst:.5} at 1e5 samples, want <= 0.01"
        ),
    );
}

/// Dimension, noise multiplier, clipping norm and simulated containment.
type ContainmentRow = (usize, f64, f64, ContainmentReport);

fn containment(r: &mut Report) {
    let trials = 100_000;
    let mut rng = Streams::new(3).stream("acceptance-tr", 0);
    let (alpha, eta) = (3.5, 1.0);
    let mut results: Vec<(&str, Vec<ContainmentRow>)> = vec![
        ("l2-quantile", vec![]),
        ("l2-markov", vec![]),
        ("kl", vec![]),
    ];
    for d in [2usize, 7, 64] {
        let fisher = random_psd(d, &mut rng);
        for z in [0.5, 1.0, 4.845] {
            for beta in [0.1, 0.4] {
                let p = TrustRegionParams::new(alpha, beta, eta, z, d).unwrap();
                let s = clip_norm_l2_quantile(&p).unwrap();
                results[0]
                    .1
                    .push((d, z, beta, containment_l2(&p, s, trials, &mut rng).unwrap()));
                let s = clip_norm_l2_markov(&p).unwrap();
                results[1].1.push((
                    d,
                    z,
                    beta,
                    containment_kl(&p, &FisherMatrix::identity(d), s, trials, &mut rng).unwrap(),
                ));
                let s = clip_norm_kl(&p, &fisher).unwrap();
                results[2].1.push((
                    d,
                    z,
                    beta,
                    containment_kl(&p, &fisher, s, trials, &mut rng).unwrap(),
                ));
            }
        }
    }
    for (i, (rule, cells)) in results.iter().enumerate() {
        let failing: Vec<String> = cells
            .iter()
            .filter(|c| !c.3.passes())
            .map(|(d, z, b, c)| format!("d={d} z={z} beta={b}: {:.4}", c.frequency()))
            .collect();
        let worst = cells
            .iter()
            .map(|c| c.3.frequency() - (c.3.target - 3.0 * c.3.standard_error()))
            .fold(f64::INFINITY, f64::min);
        let detail = if failing.is_empty() {
            format!("{rule}: 18/18 cells contain >= 1-beta - 3 SE at 1e5 draws (smallest margin {worst:.4})")
        } else {
            format!(
                "{rule}: {} cells below 1-beta - 3 SE: {}",
                failing.len(),
                failing.join("; ")
            )
        };
        r.check(
            &format!("3{}", ['a', 'b', 'c'][i]),
            failing.is_empty(),
            detail,
        );
    }
}

fn objective_gap(r: &mut Report) {
    let mut rng = Streams::new(4).stream("acceptance-gap", 0);
    let mut lines = Vec::new();
    let mut ok = true;
    for beta2 in [0.1, 0.5] {
        let p = LossGapParams::new(1.0, beta2, 2.0).unwrap();
        let s = clip_norm_loss_gap(&p, 1.0, 1.0).unwrap();
        let rep = containment_loss_gap(&p, 1.0, 1.0, 7, s, 100_000, &mut rng).unwrap();
        ok &= rep.passes();
        lines.push(format!(
            "beta2={beta2}: frequency {:.4} vs threshold {:.4}",
            rep.frequency(),
            rep.target - 3.0 * rep.standard_error()
        ));
    }
    r.check("4", ok, lines.join("; "));
}

fn moments(r: &mut Report) {
    let mut rng = Streams::new(5).stream("acceptance-moments", 0);
    let d = 7;
    let fisher = random_psd(d, &mut rng);
    let (eta, z, s) = (1.0, 1.0, 1.0);
    let gbar = random_direction(d, 0.8 * s, &mut rng);
    let n = 1_000_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let x = sample_tr_size_kl(eta, z, s, &gbar, &fisher, &mut rng).unwrap();
        sum += x;
        sq += x * x;
    }
    let m = sum / n as f64;
    let v = sq / n as f64 - m * m;
    let want_m = kl_size_mean(eta, z, s, &gbar, &fisher);
    let zs = z * s;
    let fg: f64 = fisher.matrix().mul_vec(&gbar).iter().map(|x| x * x).sum();
    let stated_v = eta.powi(4) / 4.0 * (8.0 * zs * zs * fisher.trace_of_square() + zs.powi(4) * fg);
    let derived_v = kl_size_variance(eta, z, s, &gbar, &fisher);
    let em = (m - want_m).abs() / want_m;
    let ev = (v - stated_v).abs() / stated_v;
    let ed = (v - derived_v).abs() / derived_v;
    r.check(
        "5a",
        em <= 0.01,
        format!("mean {m:.5} vs formula {want_m:.5}: relative error {em:.4}, want <= 0.01"),
    );
    r.check(
        "5b",
        ev <= 0.03,
        format!(
            "variance {v:.5} vs (eta^4/4)(8 z^2 S^2 tr F^2 + z^4 S^4 |F gbar|^2) = {stated_v:.5}: relative error {ev:.4}, want <= 0.03 \
             (library formula {derived_v:.5}: relative error {ed:.4})"
        ),
    );
}

fn sensitivity(r: &mut Report) {
    let mut rng = Streams::new(6).stream("acceptance-sens", 0);
    let (k, s, dim) = (8, 0.05, 10);
    let mut worst = 0.0f64;
    let mut tight = f64::INFINITY;
    let mut noise = Streams::new(6).stream("noise", 0);
    for _ in 0..10_000 {
        let updates: Vec<LocalUpdate> = (0..k)
            .map(|_| {
                let raw = random_direction(dim, s * rng.random_range(0.0..2.0), &mut rng);
                let (delta, _) = clip_l2(&raw, s);
                LocalUpdate {
                    clipped: l2_norm(&raw) > s,
                    delta,
                }
            })
            .collect();
        let full = aggregate_and_privatize(&updates, k, 0.0, s, &mut noise).unwrap();
        let drop = rng.random_range(0..k);
        let mut less = updates.clone();
        less[drop].delta.iter_mut().for_each(|x| *x = 0.0);
        let part = aggregate_and_privatize(&less, k, 0.0, s, &mut noise).unwrap();
        let shift: f64 = full
            .mean
            .iter()
            .zip(&part.mean)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(shift);
        tight = tight.min((s / k as f64 - shift).abs());
    }
    let bound = s / k as f64;
    r.check(
        "6",
        worst <= bound * (1.0 + 1e-12) && tight <= 1e-6,
        format!("largest shift {worst:.6e} vs S/K = {bound:.6e}; closest case within {tight:.1e} of the bound"),
    );
}

fn fd_rel_error(f: &dyn Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], coords: &[usize]) -> f64 {
    let h = 1e-5;
    let mut diff = 0.0;
    let mut norm = 0.0;
    let mut y = x.to_vec();
    for &i in coords {
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        diff += (fd - grad[i]).powi(2);
        norm += fd.powi(2).max(grad[i].powi(2));
    }
    if norm == 0.0 {
        0.0
    } else {
        (diff / norm).sqrt()
    }
}

fn pick(n: usize, m: usize, rng: &mut Rng) -> Vec<usize> {
    if n <= m {
        (0..n).collect()
    } else {
        (0..m).map(|_| rng.random_range(0..n)).collect()
    }
}

fn random_arch(i: usize) -> Architecture {
    match i % 3 {
        0 => Architecture::LogLinear {
            obs_dim: 6,
            n_actions: 2,
            features: FeatureMap::Product,
        },
        1 => Architecture::Mlp {
            obs_dim: 4,
            hidden: [64, 64],
            n_actions: 2,
        },
        _ => Architecture::Mlp {
            obs_dim: 6,
            hidden: [64, 64],
            n_actions: 3,
        },
    }
}

fn random_theta(arch: &Architecture, rng: &mut Rng) -> Vec<f64> {
    let mut t = arch.init(rng);
    for x in &mut t {
        *x += 0.3 * std_normal(rng);
    }
    t
}

fn gradients(r: &mut Report) {
    let mut rng = Streams::new(7).stream("acceptance-fd", 0);
    let coords = 40;
    let (mut score, mut critic, mut entropy, mut ppo) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..100 {
        let arch = random_arch(i);
        let theta = random_theta(&arch, &mut rng);
        let obs: Vec<f64> = (0..arch.obs_dim()).map(|_| std_normal(&mut rng)).collect();
        let a = rng.random_range(0..arch.n_actions());
        let c = pick(theta.len(), coords, &mut rng);

        let g = arch.score(&theta, &obs, a);
        score = score.max(fd_rel_error(&|t| arch.log_prob(t, &obs, a), &theta, &g, &c));

        let g = arch.entropy_grad(&theta, &obs);
        entropy = entropy.max(fd_rel_error(&|t| arch.entropy(t, &obs), &theta, &g, &c));

        let kind = if i % 2 == 0 {
            CriticKind::Linear {
                obs_dim: arch.obs_dim(),
            }
        } else {
            CriticKind::Mlp {
                obs_dim: arch.obs_dim(),
                hidden: [64, 64],
            }
        };
        let mut net = Critic::new(kind.clone(), &mut rng);
        net.params_mut()
            .iter_mut()
            .for_each(|p| *p += 0.1 * std_normal(&mut rng));
        let batch: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..arch.obs_dim()).map(|_| std_normal(&mut rng)).collect())
            .collect();
        let refs: Vec<&[f64]> = batch.iter().map(|b| b.as_slice()).collect();
        let targets: Vec<f64> = (0..8).map(|_| 3.0 * std_normal(&mut rng)).collect();
        let (_, g) = net.value_loss_grad(&refs, &targets).unwrap();
        let p0 = net.params().to_vec();
        let cc = pick(p0.len(), coords, &mut rng);
        let loss = |p: &[f64]| {
            Critic::from_params(kind.clone(), p.to_vec())
                .unwrap()
                .value_loss_grad(&refs, &targets)
                .unwrap()
                .0
        };
        critic = critic.max(fd_rel_error(&loss, &p0, &g, &cc));

        let old = random_theta(&arch, &mut rng);
        let transitions: Vec<Transition> = (0..16)
            .map(|_| {
                let o: Vec<f64> = (0..arch.obs_dim()).map(|_| std_normal(&mut rng)).collect();
                let act = rng.random_range(0..arch.n_actions());
                Transition {
                    log_prob: arch.log_prob(&old, &o, act),
                    obs: o,
                    action: act,
                    reward: 0.0,
                    terminated: false,
                    truncated: false,
                    value: 0.0,
                    truncation_value: 0.0,
                }
            })
            .collect();
        let traj = Trajectory {
            user: 0,
            iteration: 0,
            transitions,
            bootstrap_value: 0.0,
            completed_returns: vec![],
        };
        let adv: Vec<f64> = (0..16).map(|_| std_normal(&mut rng)).collect();
        let mb: Vec<usize> = (0..16).filter(|_| rng.random_bool(0.6)).collect();
        let mb = if mb.is_empty() { vec![0] } else { mb };
        let coef = rng.random_range(0.0..0.5);
        let g = ppo_surrogate_grad(&arch, &theta, &traj, &adv, &mb, coef);
        ppo = ppo.max(fd_rel_error(
            &|t| ppo_surrogate(&arch, t, &traj, &adv, &mb, coef),
            &theta,
            &g,
            &c,
        ));
    }
    for (id, name, e) in [
        ("7a", "policy score", score),
        ("7b", "critic gradient", critic),
        ("7c", "entropy gradient", entropy),
        ("7d", "PPO surrogate gradient", ppo),
    ] {
        r.check(
            id,
            e <= 1e-4,
            format!("{name}: worst relative error {e:.2e} over 100 instances, want <= 1e-4"),
        );
    }
}

fn riverswim(r: &mut Report) {
    let base = config("riverswim.toml");
    let mut reached = Vec::new();
    for seed in 0..10 {
        let mut c = base.clone();
        c.seed = seed;
        c.privacy.z = 0.0;
        c.linear.epsilon = None;
        let run = train_linear_riverswim(&c, LinearVariant::L2).unwrap();
        reached.push(run.first_always_right);
    }
    let n = reached.iter().filter(|x| x.is_some()).count();
    let eps: Vec<String> = reached
        .iter()
        .map(|x| x.map_or("-".into(), |e| e.to_string()))
        .collect();
    r.check(
        "8a",
        n >= 8,
        format!("noiseless: always-right policy reached on {n}/10 seeds (first episode per seed: {}), want >= 8", eps.join(", ")),
    );

    let uniform = uniform_policy_regret(&base.riverswim, base.linear.episodes).unwrap();
    for (id, variant) in [("8b", LinearVariant::L2), ("8c", LinearVariant::Kl)] {
        let regrets: Vec<f64> = (0..10)
            .map(|seed| {
                let mut c = base.clone();
                c.seed = seed;
                c.linear.epsilon = Some(5.0);
                train_linear_riverswim(&c, variant).unwrap().total_regret()
            })
            .collect();
        let m = median(&regrets);
        r.check(
            id,
            m < uniform,
            format!("{variant:?} at epsilon=5: median regret {m:.1} vs uniform policy {uniform:.1} (seeds: {})", fmt_list(&regrets)),
        );
    }
}

fn best_returns(cfg: &ExperimentConfig, seeds: u64) -> Vec<f64> {
    (0..seeds)
        .map(|seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            train_deep(&c).unwrap().best_eval_mean()
        })
        .collect()
}

fn cartpole(r: &mut Report) {
    let np = best_returns(&config("cartpole_nonprivate.toml"), 10);
    let n = np.iter().filter(|x| **x >= 450.0).count();
    r.check("9a", n >= 7, format!("non-private CartPole: {n}/10 seeds reach >= 450 within 200k steps (best evals: {}), want >= 7", fmt_list(&np)));
    let p = best_returns(&config("cartpole.toml"), 10);
    let n = p.iter().filter(|x| **x >= 400.0).count();
    r.check("9b", n >= 6, format!("DPPG z=1 CartPole: {n}/10 seeds reach >= 400 within 200k steps (best evals: {}), want >= 6", fmt_list(&p)));
}

fn acrobot(r: &mut Report) {
    let p = best_returns(&config("acrobot.toml"), 10);
    let n = p.iter().filter(|x| **x >= -110.0).count();
    r.check("10", n >= 6, format!("DPPG z=1 Acrobot: {n}/10 seeds reach >= -110 within 300k steps (best evals: {}), want >= 6", fmt_list(&p)));
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn privacy_utility(r: &mut Report) {
    let cfg = config("cartpole.toml");
    let dir = tempfile::tempdir().unwrap();
    let points = run_sweep(&cfg, dir.path(), |_| {}).unwrap();
    let eps: Vec<f64> = points
        .iter()
        .map(|p| p.epsilon.unwrap_or(f64::INFINITY))
        .collect();
    let med: Vec<f64> = points.iter().map(|p| p.median_return).collect();
    let rho = spearman(&eps, &med);
    let strong = points
        .iter()
        .filter(|p| p.epsilon.is_some_and(|e| e >= 1.0))
        .map(|p| p.median_return)
        .fold(f64::NEG_INFINITY, f64::max);
    let weak = points
        .iter()
        .filter(|p| p.epsilon.is_some_and(|e| e < 1.0))
        .map(|p| p.median_return)
        .fold(f64::INFINITY, f64::min);
    let curve: Vec<String> = points
        .iter()
        .map(|p| {
            format!(
                "z={} eps={:.2}: {:.1}",
                p.z,
                p.epsilon.unwrap_or(f64::INFINITY),
                p.median_return
            )
        })
        .collect();
    r.check(
        "11",
        rho > 0.0 && weak < strong,
        format!(
            "CartPole sweep, seed medians [{}]; rank correlation(epsilon, return) = {rho:.2}, lowest median below epsilon 1 = {weak:.1} vs best median at epsilon >= 1 = {strong:.1}",
            curve.join("; ")
        ),
    );
}

type Criterion = (&'static str, fn(&mut Report));

fn main() {
    let only: Option<Vec<String>> = std::env::var("DPPG_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_string()).collect());
    let wanted = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let criteria: [Criterion; 11] = [
        ("1", accountant),
        ("2", distributions),
        ("3", containment),
        ("4", objective_gap),
        ("5", moments),
        ("6", sensitivity),
        ("7", gradients),
        ("8", riverswim),
        ("9", cartpole),
        ("10", acrobot),
        ("11", privacy_utility),
    ];
    let mut report = Report {
        passed: 0,
        failed: vec![],
    };
    for (id, run) in criteria {
        if wanted(id) {
            let start = Instant::now();
            run(&mut report);
            println!(
                "      criterion {id} took {:.1} s",
                start.elapsed().as_secs_f64()
            );
        }
    }
    println!(
        "acceptance: {} passed, {} failed{}",
        report.passed,
        report.failed.len(),
        if report.failed.is_empty() {
            String::new()
        } else {
            format!(" ({})", report.failed.join(", "))
        }
    );
    if !report.failed.is_empty() && std::env::var_os("DPPG_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
