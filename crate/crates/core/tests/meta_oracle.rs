//! Gradient tape and meta-learning loss against finite differences and
//! straight-line reimplementations.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sambo::autodiff::{Tape, Var};
use sambo::calibration::TaskDataset;
use sambo::gp::{gp_posterior, gram, marginal_log_likelihood, se_kernel, GpPrior, KernelConfig};
use sambo::linalg::cholesky_jittered;
use sambo::meta::{
    fpacoh_loss, gaussian_kl, kl_weight, loss_and_gradient, meta_train, sample_measurement_set,
    LearnablePrior, MeasurementSet, MetaTrainConfig, KL_JITTER,
};
use sambo::nn::{Architecture, Mlp};

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = rand_mat(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

fn close(a: f64, b: f64) -> bool {
    let diff = (a - b).abs();
    diff <= 1e-7 || diff <= 1e-4 * a.abs().max(b.abs())
}

/// Checks d f / d input against central differences for every entry.
fn fd_check(inputs: Vec<DMatrix<f64>>, build: impl Fn(&mut Tape, &[Var]) -> Var, symmetric: &[bool]) {
    let run = |vals: &[DMatrix<f64>]| {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| t.param(v.clone())).collect();
        let out = build(&mut t, &vars);
        (t, vars, out)
    };
    let (tape, vars, out) = run(&inputs);
    let grads = tape.backward(out);
    let h = 1e-6;
    for (k, input) in inputs.iter().enumerate() {
        let g = grads[vars[k].index()].clone().unwrap();
        for idx in 0..input.len() {
            let (r, c) = (idx % input.nrows(), idx / input.nrows());
            if symmetric[k] && r < c {
                continue;
            }
            let perturb = |s: f64| {
                let mut vals = inputs.clone();
                vals[k][(r, c)] += s;
                if symmetric[k] && r != c {
                    vals[k][(c, r)] += s;
                }
                let (t, _, o) = run(&vals);
                t.scalar_value(o)
            };
            let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
            let an = if symmetric[k] && r != c { g[(r, c)] + g[(c, r)] } else { g[(r, c)] };
            assert!(close(an, fd), "input {k} entry ({r},{c}): tape {an} fd {fd}");
        }
    }
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let a = rand_mat(&mut rng, 4, 3);
        let w = rand_mat(&mut rng, 2, 3);
        let b = rand_mat(&mut rng, 2, 1);
        let s = rand_mat(&mut rng, 1, 1);
        // affine map, tanh, exp, scalar arithmetic, elementwise product
        fd_check(
            vec![a.clone(), w.clone(), b.clone(), s.clone()],
            |t, v| {
                let z = t.matmul_t(v[0], v[1]);
                let z = t.add_bias(z, v[2]);
                let h = t.tanh(z);
                let e = t.exp(h);
                let m = t.mul_elem(e, h);
                let sc = t.scale_by(m, v[3]);
                let sc = t.scale(sc, 1.7);
                let sc = t.add_const(sc, 0.3);
                let d = t.sub(sc, h);
                let d = t.add(d, z);
                t.sum(d)
            },
            &[false; 4],
        );
        // pairwise squared distances
        fd_check(
            vec![a.clone()],
            |t, v| {
                let d = t.sq_dist(v[0]);
                let n = t.scale(d, -0.5);
                let e = t.exp(n);
                let w = t.mul_elem(e, d);
                t.sum(w)
            },
            &[false],
        );
        // logdet and quadratic solve of an SPD matrix
        let m = spd(&mut rng, 4);
        let y = rand_mat(&mut rng, 4, 1);
        fd_check(
            vec![m.clone(), y.clone()],
            |t, v| {
                let ld = t.logdet(v[0]).unwrap();
                let q = t.quad_solve(v[0], v[1]).unwrap();
                let j = t.add_diag(v[0], 0.1);
                let q2 = t.quad_solve(j, v[1]).unwrap();
                let s = t.add(ld, q);
                t.add(s, q2)
            },
            &[true, false],
        );
    }
}

fn tiny_fixture(seed: u64, n: usize, t: usize, d: usize) -> Vec<TaskDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let xs: Vec<Vec<f64>> = (0..t).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let ys = xs.iter().map(|x| x.iter().sum::<f64>().sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
            TaskDataset::new(format!("t{i}"), xs, ys).unwrap()
        })
        .collect()
}

fn msets(seed: u64, data: &[TaskDataset], d: usize, n_train: usize, n_uniform: usize) -> Vec<MeasurementSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = vec![(-1.0, 1.0); d];
    data.iter()
        .map(|t| sample_measurement_set(t, &domain, n_train, n_uniform, &mut rng))
        .collect()
}

/// Direct evaluation through the GP module and a dense KL.
fn straight_line_loss(
    prior: &LearnablePrior,
    data: &[TaskDataset],
    ms: &[MeasurementSet],
    hyper: &KernelConfig,
) -> f64 {
    let gp = prior.to_gp_prior();
    let n = data.len();
    let mut total = 0.0;
    for (task, m) in data.iter().zip(ms) {
        let mll = marginal_log_likelihood(&gp, &task.inputs, &task.targets).unwrap();
        let emb = gp.embed_all(&m.inputs).unwrap();
        let k = m.inputs.len();
        let mean = DVector::from_iterator(k, emb.iter().map(|e| e.mean));
        let kt = gram(&gp.kernel, &emb, 0.0);
        let kh = DMatrix::from_fn(k, k, |i, j| se_kernel(&m.inputs[i], &m.inputs[j], hyper));
        let kl = dense_kl(&mean, &kt, &DVector::zeros(k), &kh);
        let t = task.len() as f64;
        total += -mll / t + kl_weight(n, task.len()) * kl;
    }
    total / n as f64
}

fn dense_kl(m0: &DVector<f64>, k0: &DMatrix<f64>, m1: &DVector<f64>, k1: &DMatrix<f64>) -> f64 {
    let k = m0.len();
    let j = DMatrix::<f64>::identity(k, k) * KL_JITTER;
    let a = (k0 + &j).cholesky().unwrap();
    let b = (k1 + &j).cholesky().unwrap();
    let logdet = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let dm = m1 - m0;
    let tr = b.solve(&(k0 + &j)).trace();
    0.5 * (tr + dm.dot(&b.solve(&dm)) - k as f64 + logdet(&b) - logdet(&a))
}

#[test]
fn loss_matches_straight_line_oracle() {
    let data = tiny_fixture(4, 2, 4, 2);
    let hyper = KernelConfig::new(0.8, 1.5, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let prior = LearnablePrior::init(2, &hyper, &mut rng);
    let ms = msets(6, &data, 2, 2, 2);
    assert!(ms.iter().all(|m| m.inputs.len() == 4));
    let got = fpacoh_loss(&prior, &data, &ms, &hyper, 1.0).unwrap();
    let want = straight_line_loss(&prior, &data, &ms, &hyper);
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

fn gradient_fixture() -> (Vec<TaskDataset>, KernelConfig, LearnablePrior, Vec<MeasurementSet>) {
    let data = tiny_fixture(11, 2, 4, 2);
    let hyper = KernelConfig::new(0.8, 1.5, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let prior = LearnablePrior::init(2, &hyper, &mut rng);
    let ms = msets(13, &data, 2, 2, 2);
    (data, hyper, prior, ms)
}

fn check_gradient(prior: &LearnablePrior, data: &[TaskDataset], ms: &[MeasurementSet], hyper: &KernelConfig, h: f64) {
    let (_, grad, _) = loss_and_gradient(prior, data, ms, hyper, 1.0).unwrap();
    let base = prior.params();
    assert_eq!(grad.len(), base.len());
    for i in 0..base.len() {
        let eval = |s: f64| {
            let mut p = prior.clone();
            let mut v = base.clone();
            v[i] += s;
            p.set_params(&v);
            fpacoh_loss(&p, data, ms, hyper, 1.0).unwrap()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        assert!(close(grad[i], fd), "param {i}: tape {} fd {fd}", grad[i]);
    }
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    // features of the initial network span ~0.1, so a short lengthscale keeps
    // the learned Gram matrix well conditioned and h = 1e-5 above roundoff
    let (data, hyper, mut prior, ms) = gradient_fixture();
    prior.log_lengthscale = 0.005f64.ln();
    check_gradient(&prior, &data, &ms, &hyper, 1e-5);
}

#[test]
fn gradient_at_default_init_with_wider_step() {
    let (data, hyper, prior, ms) = gradient_fixture();
    check_gradient(&prior, &data, &ms, &hyper, 1e-3);
}

#[test]
fn zero_kl_fixture_leaves_only_likelihood() {
    // zero networks give a zero mean and a constant kernel nu_P; a hyper-prior
    // with a huge lengthscale has the same Gram matrix on any measurement set
    let data = tiny_fixture(2, 1, 5, 1);
    let hyper = KernelConfig::new(1e8, 1.3, 0.1).unwrap();
    let prior = LearnablePrior {
        version: 1,
        mean_net: Mlp::zeros(Architecture::standard(1, 1)),
        feature_net: Mlp::zeros(Architecture::standard(1, 1)),
        log_variance: 1.3f64.ln(),
        log_lengthscale: 0.0,
        noise_std: 0.1,
    };
    let ms = msets(3, &data, 1, 10, 10);
    let (loss, _, parts) = loss_and_gradient(&prior, &data, &ms, &hyper, 1.0).unwrap();
    // rank-one Gram plus 1e-8 jitter amplifies roundoff by ~1e8
    assert!(parts[0].kl.abs() < 1e-7, "kl {}", parts[0].kl);
    let mll = marginal_log_likelihood(&prior.to_gp_prior(), &data[0].inputs, &data[0].targets).unwrap();
    assert!((loss + mll / 5.0).abs() < 1e-7);
}

#[test]
fn log_variance_gradient_one_point() {
    let task = TaskDataset {
        task_id: "one".into(),
        inputs: vec![vec![0.3]],
        targets: vec![0.9],
    };
    let hyper = KernelConfig::new(0.5, 2.0, 0.2).unwrap();
    let mut prior = LearnablePrior::init(1, &hyper, &mut ChaCha8Rng::seed_from_u64(1));
    prior.mean_net = Mlp::zeros(Architecture::standard(1, 1));
    let ms = msets(0, std::slice::from_ref(&task), 1, 1, 1);
    let (_, grad, _) = loss_and_gradient(&prior, &[task], &ms, &hyper, 0.0).unwrap();
    let nu = prior.variance();
    let s = nu + 0.04;
    // loss = ½ r²/s + ½ ln s + ½ ln 2π, d/d ln nu = nu (½/s - ½ r²/s²)
    let want = nu * (0.5 / s - 0.5 * 0.81 / (s * s));
    let got = grad[prior.num_params() - 2];
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn kl_closed_form_examples() {
    let one = DMatrix::from_element(1, 1, 1.0);
    let z = DVector::from_vec(vec![0.0]);
    let kl = gaussian_kl(&z, &one, &DVector::from_vec(vec![1.0]), &one).unwrap();
    assert!((kl - 0.5).abs() < 1e-7);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let a = spd(&mut rng, 3);
        let b = spd(&mut rng, 3);
        let m0 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let m1 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let got = gaussian_kl(&m0, &a, &m1, &b).unwrap();
        assert!(got >= 0.0);
        assert!((got - dense_kl(&m0, &a, &m1, &b)).abs() < 1e-10);
        assert!(gaussian_kl(&m0, &a, &m0, &a).unwrap().abs() < 1e-10);
    }
}

#[test]
fn kl_one_dimensional_quadrature() {
    let (m0, s0, m1, s1) = (0.3, 0.7, -0.4, 1.6);
    let pdf = |x: f64, m: f64, s: f64| (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt());
    let n = 200_000;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let x = lo + h * i as f64;
        let p = pdf(x, m0, s0);
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        if p > 0.0 {
            acc += w * p * (p / pdf(x, m1, s1)).ln();
        }
    }
    acc *= h;
    let got = gaussian_kl(
        &DVector::from_vec(vec![m0]),
        &DMatrix::from_element(1, 1, s0 * s0),
        &DVector::from_vec(vec![m1]),
        &DMatrix::from_element(1, 1, s1 * s1),
    )
    .unwrap();
    assert!((got - acc).abs() < 1e-6, "{got} vs {acc}");
}

#[test]
fn nn_kernel_properties() {
    let hyper = KernelConfig::new(0.5, 2.0, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let prior = LearnablePrior::init(2, &hyper, &mut rng).to_gp_prior();
    let pts: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    for a in &pts {
        assert!((prior.kernel_fn(a, a).unwrap() - 2.0).abs() < 1e-12);
        for b in &pts {
            assert_eq!(prior.kernel_fn(a, b).unwrap(), prior.kernel_fn(b, a).unwrap());
        }
    }
    let emb = prior.embed_all(&pts).unwrap();
    let k = gram(&prior.kernel, &emb, 1e-8);
    let (_, jitter) = cholesky_jittered(k).unwrap();
    assert!(jitter <= 1e-8);

    let mut flat = LearnablePrior::init(2, &hyper, &mut rng);
    flat.feature_net = Mlp::zeros(Architecture::standard(2, 2));
    let fp = flat.to_gp_prior();
    assert!((fp.kernel_fn(&pts[0], &pts[1]).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn serialization_reproduces_predictions() {
    let hyper = KernelConfig::new(0.5, 2.0, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = LearnablePrior::init(2, &hyper, &mut rng);
    let q = LearnablePrior::from_json(&p.to_json().unwrap()).unwrap();
    let data = tiny_fixture(5, 1, 6, 2);
    let probe: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let a = gp_posterior(&p.to_gp_prior(), &data[0].inputs, &data[0].targets, &probe).unwrap();
    let b = gp_posterior(&q.to_gp_prior(), &data[0].inputs, &data[0].targets, &probe).unwrap();
    assert_eq!(a, b);
}

/// Smooth 1-d tasks sharing a common shape, inputs in [-1.5, 1.5].
fn sine_family(seed: u64, n: usize, t: usize) -> Vec<TaskDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let shift = rng.random_range(-0.2..0.2);
            let amp = rng.random_range(0.9..1.1);
            let xs: Vec<Vec<f64>> = (0..t).map(|_| vec![rng.random_range(-1.5..1.5)]).collect();
            let ys = xs
                .iter()
                .map(|x| amp * (2.5 * (x[0] - shift)).sin() + 0.5 * x[0] + 0.05 * rng.random_range(-1.0..1.0))
                .collect();
            TaskDataset::new(format!("s{i}"), xs, ys).unwrap()
        })
        .collect()
}

#[test]
fn training_decreases_loss() {
    let data = tiny_fixture(4, 2, 4, 2);
    let hyper = KernelConfig::new(0.8, 1.5, 0.1).unwrap();
    let cfg = MetaTrainConfig {
        iterations: 100,
        lr: 1e-3,
        seed: 3,
        kl_scale: 1.0,
        measurement_train: 2,
        measurement_uniform: 2,
    };
    let out = meta_train(&data, &hyper, &[(-1.0, 1.0), (-1.0, 1.0)], &cfg).unwrap();
    let ms = msets(6, &data, 2, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let init = LearnablePrior::init(2, &hyper, &mut rng);
    let before = fpacoh_loss(&init, &data, &ms, &hyper, 1.0).unwrap();
    let after = fpacoh_loss(&out.prior, &data, &ms, &hyper, 1.0).unwrap();
    assert!(after < before, "{after} !< {before}");
    let head: f64 = out.trace[..10].iter().map(|t| t.loss).sum();
    let tail: f64 = out.trace[90..].iter().map(|t| t.loss).sum();
    assert!(tail < head);
}

#[test]
fn training_is_deterministic() {
    let data = tiny_fixture(4, 2, 4, 2);
    let hyper = KernelConfig::new(0.8, 1.5, 0.1).unwrap();
    let cfg = MetaTrainConfig {
        iterations: 20,
        seed: 9,
        ..MetaTrainConfig::default()
    };
    let dom = [(-1.0, 1.0), (-1.0, 1.0)];
    let a = meta_train(&data, &hyper, &dom, &cfg).unwrap();
    let b = meta_train(&data, &hyper, &dom, &cfg).unwrap();
    assert_eq!(a.prior, b.prior);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn meta_learned_prior_beats_vanilla_on_held_out_task() {
    let hyper = KernelConfig::new(0.5, 1.5, 0.1).unwrap();
    let train = sine_family(1, 4, 30);
    let test = &sine_family(99, 1, 8)[0];
    let cfg = MetaTrainConfig {
        iterations: 2000,
        lr: 3e-3,
        seed: 1,
        ..MetaTrainConfig::default()
    };
    let out = meta_train(&train, &hyper, &[(-1.5, 1.5)], &cfg).unwrap();
    let learned = marginal_log_likelihood(&out.prior.to_gp_prior(), &test.inputs, &test.targets).unwrap();
    let vanilla = marginal_log_likelihood(&GpPrior::vanilla(&hyper), &test.inputs, &test.targets).unwrap();
    assert!(learned > vanilla, "learned {learned} vanilla {vanilla}");

    // reliability fallback: far from all meta-training inputs the learned
    // posterior keeps at least half of the Vanilla-GP uncertainty
    let far = vec![vec![1.45]];
    let few = &test.inputs[..3]
        .iter()
        .filter(|x| x[0] < 0.5)
        .cloned()
        .collect::<Vec<_>>();
    let ys: Vec<f64> = few.iter().map(|x| (2.5 * x[0]).sin()).collect();
    if !few.is_empty() {
        let l = gp_posterior(&out.prior.to_gp_prior(), few, &ys, &far).unwrap()[0].1;
        let v = gp_posterior(&GpPrior::vanilla(&hyper), few, &ys, &far).unwrap()[0].1;
        assert!(l >= 0.5 * v, "learned std {l} vanilla std {v}");
    }
}

#[test]
fn strong_kl_pulls_towards_hyper_prior() {
    let hyper = KernelConfig::new(0.5, 1.5, 0.1).unwrap();
    let train = sine_family(1, 2, 20);
    let cfg = MetaTrainConfig {
        iterations: 1500,
        lr: 3e-3,
        seed: 2,
        kl_scale: 1e3,
        ..MetaTrainConfig::default()
    };
    let out = meta_train(&train, &hyper, &[(-1.5, 1.5)], &cfg).unwrap();
    let gp = out.prior.to_gp_prior();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let xs: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random_range(-1.5..1.5)]).collect();
        let emb = gp.embed_all(&xs).unwrap();
        let m = DVector::from_iterator(20, emb.iter().map(|e| e.mean));
        let k = gram(&gp.kernel, &emb, 0.0);
        let kh = DMatrix::from_fn(20, 20, |i, j| se_kernel(&xs[i], &xs[j], &hyper));
        worst = worst.max(gaussian_kl(&m, &k, &DVector::zeros(20), &kh).unwrap());
    }
    assert!(worst <= 0.1, "kl {worst}");
}
