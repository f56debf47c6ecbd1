use nalgebra::{DMatrix, DVector};
use ndarray::{array, Array1, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zok::kernel::{gram_matrix, sign_gram, GramMatrix};
use zok::linalg::{cg_solve, jacobi_eigenvalues, smallest_eigenvalue, CgConfig};
use zok::model::extract_svs;
use zok::oracle::{best_neighbour, objective_pair};
use zok::solver::{check_pstationary, solve, train, update_alpha, SolverState};
use zok::{Dataset, KernelSpec, SolverConfig, TrainedModel};

fn random_dataset(m: usize, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0));
    let y = Array1::from_iter((0..m).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }));
    Dataset::new(x, y, "random").unwrap()
}

fn signed_gram(d: &Dataset, spec: &KernelSpec) -> GramMatrix {
    sign_gram(&gram_matrix(d, spec), d.labels.view()).unwrap()
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

#[test]
fn alpha_step_matches_dense_lu() {
    let d = random_dataset(10, 2, 7);
    let g = signed_gram(&d, &KernelSpec::gaussian(0.7).unwrap());
    let cfg = SolverConfig {
        sigma_admm: 0.8,
        ..SolverConfig::default()
    };
    let t = vec![0, 2, 3, 7, 9];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut state = SolverState::initial(&g, &cfg);
    state.working_set = t.clone();
    for &i in &t {
        state.lambda[i] = rng.gen_range(-0.5..0.5);
    }
    let mut u_next = Array1::from_shape_fn(10, |_| rng.gen_range(-2.0..2.0));
    for &i in &t {
        u_next[i] = 0.0;
    }
    let (alpha, _) = update_alpha(&state, u_next.view(), &g, &cfg).unwrap();

    let k = to_na(&g.entries);
    let k_t = to_na(&g.entries.select(Axis(0), &t));
    let v_t = DVector::from_iterator(
        t.len(),
        t.iter().map(|&i| u_next[i] - 1.0 + state.lambda[i] / cfg.sigma_admm),
    );
    let lhs = &k + k_t.transpose() * &k_t * cfg.sigma_admm;
    let rhs = k_t.transpose() * v_t * cfg.sigma_admm;
    let direct = lhs.lu().solve(&rhs).expect("nonsingular");
    for i in 0..10 {
        assert!(
            (alpha[i] - direct[i]).abs() <= 1e-6 * (1.0 + direct[i].abs()),
            "coordinate {i}: {} vs {}",
            alpha[i],
            direct[i]
        );
    }
}

#[test]
fn eigenvalues_match_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let b = Array2::from_shape_fn((12, 12), |_| rng.gen_range(-1.0..1.0));
    let a = (&b + &b.t()) * 0.5;
    let mut ours = jacobi_eigenvalues(&a, 1e-12).unwrap();
    ours.sort_by(f64::total_cmp);
    let mut theirs: Vec<f64> = to_na(&a).symmetric_eigenvalues().iter().copied().collect();
    theirs.sort_by(f64::total_cmp);
    for (x, y) in ours.iter().zip(&theirs) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
    let lmin = smallest_eigenvalue(&a, 1e-10).unwrap();
    assert!((lmin - theirs[0]).abs() < 1e-9);
}

#[test]
fn smallest_eigenvalue_on_large_matrix() {
    let d = random_dataset(520, 3, 5);
    let g = gram_matrix(&d, &KernelSpec::gaussian(1.0).unwrap());
    let mut a = g.entries.clone();
    for i in 0..a.nrows() {
        a[[i, i]] -= 0.25;
    }
    let theirs = to_na(&a).symmetric_eigenvalues().min();
    let ours = smallest_eigenvalue(&a, 1e-10).unwrap();
    assert!((ours - theirs).abs() < 1e-4, "{ours} vs {theirs}");
}

#[test]
fn xor_is_learned() {
    let x = array![[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]];
    let d = Dataset::new(x, array![1.0, 1.0, -1.0, -1.0], "xor").unwrap();
    let (model, cert) = train(&d, &KernelSpec::gaussian(1.0).unwrap(), &SolverConfig::default()).unwrap();
    assert!(cert.converged);
    assert_eq!(model.accuracy(&d).unwrap(), 1.0);
    assert_eq!(model.nsv(), 4);
}

#[test]
fn two_points_are_separated() {
    let d = Dataset::new(array![[0.0, 0.0], [1.0, 1.0]], array![-1.0, 1.0], "pair").unwrap();
    let cfg = SolverConfig {
        c: 10.0,
        ..SolverConfig::default()
    };
    let (model, _) = train(&d, &KernelSpec::linear(), &cfg).unwrap();
    assert_eq!(model.predict_batch(&d.features).unwrap(), array![-1.0, 1.0]);
}

#[test]
fn negated_labels_negate_decisions() {
    let d = random_dataset(40, 2, 21);
    let spec = KernelSpec::gaussian(0.5).unwrap();
    let cfg = SolverConfig::default();
    let (a, _) = train(&d, &spec, &cfg).unwrap();
    let (b, _) = train(&d.negated(), &spec, &cfg).unwrap();
    assert_eq!(a.sv_indices, b.sv_indices);
    let fa = a.decision_values(&d.features).unwrap();
    let fb = b.decision_values(&d.features).unwrap();
    for (p, q) in fa.iter().zip(fb.iter()) {
        assert!((p + q).abs() < 1e-12);
    }
}

#[test]
fn training_is_deterministic() {
    let d = random_dataset(60, 3, 4);
    let spec = KernelSpec::gaussian(1.5).unwrap();
    let cfg = SolverConfig::default();
    let (a, ca) = train(&d, &spec, &cfg).unwrap();
    let (b, cb) = train(&d, &spec, &cfg).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    assert_eq!(ca, cb);
}

#[test]
fn saved_model_predicts_identically() {
    let d = random_dataset(30, 2, 9);
    let (model, _) = train(&d, &KernelSpec::gaussian(0.8).unwrap(), &SolverConfig::default()).unwrap();
    let model = model.with_scaling(zok::data::fit_scaling(&d));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    model.save(&path).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(
        back.decision_values(&d.features).unwrap(),
        model.decision_values(&d.features).unwrap()
    );
}

#[test]
fn converged_point_is_a_local_minimizer() {
    let cfg = SolverConfig {
        tol: 1e-7,
        max_iter: 2000,
        ..SolverConfig::default()
    };
    let mut checked = 0;
    for seed in 0..30 {
        let d = random_dataset(12, 2, 100 + seed);
        let g = signed_gram(&d, &KernelSpec::gaussian(0.6).unwrap());
        let sol = solve(&g, &cfg).unwrap();
        if !sol.certificate.converged {
            continue;
        }
        checked += 1;
        let at = objective_pair(sol.state.alpha.view(), sol.state.u.view(), &g, cfg.c).unwrap();
        let near = best_neighbour(sol.state.alpha.view(), &g, cfg.c, 1e-3, 200, seed).unwrap();
        assert!(near >= at.total - 1e-6, "seed {seed}: neighbour {near} below {}", at.total);
    }
    assert!(checked >= 3, "only {checked} runs converged");
}

fn cg_error_norms(a: &Array2<f64>, b: &Array1<f64>) -> Vec<f64> {
    let exact = to_na(a)
        .lu()
        .solve(&DVector::from_iterator(b.len(), b.iter().copied()))
        .unwrap();
    let exact = Array1::from_iter(exact.iter().copied());
    let n = b.len();
    (1..=n)
        .map(|k| {
            let cfg = CgConfig {
                tol: 1e-300,
                max_iter: Some(k),
                warm_start: false,
            };
            let x = cg_solve(|v| a.dot(&v), b.view(), Array1::zeros(n).view(), &cfg)
                .unwrap()
                .x;
            let e = &x - &exact;
            e.dot(&a.dot(&e)).sqrt()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cg_error_decreases_in_a_norm(seed in 0u64..10_000, n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b0 = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
        let mut a = b0.t().dot(&b0);
        for i in 0..n {
            a[[i, i]] += 0.1;
        }
        let b = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));
        let errs = cg_error_norms(&a, &b);
        for w in errs.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-8) + 1e-10, "{:?}", errs);
        }
    }

    #[test]
    fn converged_runs_have_the_fixed_point_structure(
        seed in 0u64..10_000,
        m in 6usize..24,
        log_c in -2.0f64..3.0,
        log_sigma in -2.0f64..2.0,
        log_width in -1.5f64..1.0,
    ) {
        let d = random_dataset(m, 2, seed);
        let spec = KernelSpec::gaussian(log_width.exp()).unwrap();
        let cfg = SolverConfig {
            c: log_c.exp(),
            sigma_admm: log_sigma.exp(),
            max_iter: 300,
            ..SolverConfig::default()
        };
        let g = signed_gram(&d, &spec);
        let sol = solve(&g, &cfg).unwrap();
        prop_assume!(sol.certificate.converged);
        let (alpha, u) = (sol.state.alpha.view(), sol.state.u.view());
        let gamma = cfg.gamma();
        prop_assert!(check_pstationary(alpha, u, &g, gamma, cfg.c, 1e-3).unwrap());

        let bound = (2.0 * cfg.c / gamma).sqrt();
        let svs = extract_svs(alpha, u, gamma, cfg.c).unwrap();
        for i in 0..m {
            if svs.binary_search(&i).is_ok() {
                prop_assert!(alpha[i] >= -bound - 1e-3 && alpha[i] < 1e-3, "alpha[{}] = {}", i, alpha[i]);
            } else {
                prop_assert!(alpha[i].abs() <= 1e-3, "alpha[{}] = {} off the support", i, alpha[i]);
            }
        }

        let model = TrainedModel::from_solution(&d, &spec, &cfg, &sol.state).unwrap();
        let f = model.decision_values(&model.sv_inputs).unwrap();
        for (fi, yi) in f.iter().zip(model.sv_labels.iter()) {
            prop_assert!((yi * fi - 1.0).abs() <= 1e-2, "margin {}", yi * fi);
        }
    }
}
