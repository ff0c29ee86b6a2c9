//! Randomised invariants across the library.

mod common;

use common::*;
use cvxnn::arrangements::{count_bound, enumerate_exact, realizability_check, sample_gaussian};
use cvxnn::baseline::{train_nonconvex, TrainConfig};
use cvxnn::extensions::{cnn_gap_objective, cnn_gap_reduce, vector_output_train, PatchSet};
use cvxnn::linalg::svd_decompose;
use cvxnn::mapping::{
    convex_to_network, network_forward, nonconvex_objective, nonconvex_objective_with_loss, rescale_balanced,
    NetworkParams,
};
use cvxnn::program::{ConvexProgram, GroupWeights, RegNorm};
use cvxnn::solvers::{project_feasible, prox_group, solve_admm, solve_conic, SolverConfig};
use cvxnn::{ActivationSpec, DataMatrix, LabelData, LossSpec};
use nalgebra::{DMatrix, DVector};
use num_bigint::BigUint;
use proptest::prelude::*;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

fn kappa_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(0.1), Just(-1.0), Just(0.3)]
}

fn gaussian_data(seed: u64, n: usize, d: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut r = rng(seed);
    (gaussian_matrix(&mut r, n, d), gaussian_vector(&mut r, n))
}

fn program(x: &DMatrix<f64>, y: &DVector<f64>, beta: f64, kappa: f64) -> ConvexProgram {
    let data = DataMatrix::new(x.clone()).unwrap();
    let set = enumerate_exact(&data).unwrap();
    ConvexProgram::builder(data, LabelData::from_vector(y.clone()).unwrap(), set)
        .activation(ActivationSpec::new(kappa).unwrap())
        .beta(beta)
        .build()
        .unwrap()
}

fn random_weights(seed: u64, prog: &ConvexProgram) -> GroupWeights {
    let mut r = rng(seed);
    GroupWeights::from_matrix(gaussian_matrix(&mut r, prog.dim(), 2 * prog.num_patterns())).unwrap()
}

proptest! {
    #![proptest_config(cases(200))]

    #[test]
    fn activation_is_positively_homogeneous(kappa in kappa_strategy(), t in 0.0f64..100.0, x in -100.0f64..100.0) {
        let a = ActivationSpec::new(kappa).unwrap();
        let lhs = a.apply(t * x);
        let rhs = t * a.apply(x);
        prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * lhs.abs().max(1.0));
    }

    #[test]
    fn squared_loss_gradient_is_the_residual(seed in any::<u64>(), n in 1usize..12) {
        let mut r = rng(seed);
        let f = gaussian_matrix(&mut r, n, 2);
        let y = gaussian_matrix(&mut r, n, 2);
        prop_assert_eq!(LossSpec::Squared.gradient(&f, &y), &f - &y);
        prop_assert!((LossSpec::Squared.evaluate(&f, &y) - 0.5 * (&f - &y).norm_squared()).abs() <= 1e-12);
    }

    #[test]
    fn prox_beats_random_perturbations(seed in any::<u64>(), t in 0.0f64..3.0, l1 in any::<bool>()) {
        let mut r = rng(seed);
        let v = gaussian_vector(&mut r, 5);
        let reg = if l1 { RegNorm::L1 } else { RegNorm::L2 };
        let norm = |x: &DVector<f64>| if l1 { x.lp_norm(1) } else { x.norm() };
        let f = |x: &DVector<f64>| 0.5 * (x - &v).norm_squared() + t * norm(x);
        let x = prox_group(&v, t, reg);
        let best = f(&x);
        for k in 0..1000 {
            let scale = 10f64.powi(-(k % 6));
            let other = &x + gaussian_vector(&mut r, 5) * scale;
            prop_assert!(f(&other) >= best - 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(cases(24))]

    #[test]
    fn svd_reconstructs_the_matrix(seed in any::<u64>(), n in 1usize..200, d in 1usize..100) {
        let mut r = rng(seed);
        let x = gaussian_matrix(&mut r, n, d);
        let f = svd_decompose(&x, 1e-10).unwrap();
        let err = (f.truncate(f.rank) - &x).amax();
        prop_assert!(err <= 1e-10 * f.sigma[0], "error {err}");
    }

    #[test]
    fn enumeration_meets_the_bound_in_general_position(seed in any::<u64>(), n in 1usize..10, d in 1usize..4) {
        let (x, _) = gaussian_data(seed, n, d);
        let set = enumerate_exact(&DataMatrix::new(x).unwrap()).unwrap();
        let rank = n.min(d);
        prop_assert_eq!(BigUint::from(set.len()), count_bound(n, rank));
    }

    #[test]
    fn enumeration_never_exceeds_the_bound(seed in any::<u64>(), n in 2usize..10, d in 2usize..5, k in 1usize..3) {
        // Rank-deficient data with repeated rows: the bound uses the rank.
        let mut r = rng(seed);
        let a = gaussian_matrix(&mut r, n, k.min(d));
        let b = gaussian_matrix(&mut r, k.min(d), d);
        let mut x = a * b;
        x.set_row(n - 1, &x.row(0).clone_owned());
        let data = DataMatrix::new(x).unwrap();
        let set = enumerate_exact(&data).unwrap();
        prop_assert!(BigUint::from(set.len()) <= count_bound(n, data.rank()));
    }

    #[test]
    fn pattern_sets_are_canonical(seed in any::<u64>(), n in 1usize..10, d in 1usize..4) {
        let (x, _) = gaussian_data(seed, n, d);
        let set = enumerate_exact(&DataMatrix::new(x).unwrap()).unwrap();
        let bits = set.bit_strings();
        prop_assert!(bits.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn samples_are_realizable_exact_patterns(seed in any::<u64>(), n in 1usize..10, d in 1usize..4, count in 1usize..300) {
        let (x, _) = gaussian_data(seed, n, d);
        let data = DataMatrix::new(x.clone()).unwrap();
        let exact = enumerate_exact(&data).unwrap();
        let sampled = sample_gaussian(&data, count, seed ^ 1).unwrap();
        prop_assert!(sampled.is_subset_of(&exact));
        for p in sampled.iter().chain(exact.iter()) {
            prop_assert!(realizability_check(p.bits(), &x).unwrap().realizable);
        }
    }

    #[test]
    fn brute_force_directions_find_no_extra_patterns(seed in any::<u64>(), n in 1usize..8) {
        let (x, _) = gaussian_data(seed, n, 2);
        let exact = enumerate_exact(&DataMatrix::new(x.clone()).unwrap()).unwrap();
        for bits in brute_force_patterns(&x, 2000, seed) {
            prop_assert!(exact.bit_strings().contains(&bits), "missing {bits}");
        }
    }

    #[test]
    fn enumeration_ignores_row_scaling_and_column_mixing(seed in any::<u64>(), n in 1usize..9, d in 1usize..4) {
        let mut r = rng(seed);
        let x = gaussian_matrix(&mut r, n, d);
        let scales: Vec<f64> = (0..n).map(|_| 0.1 + 5.0 * uniform_index(&mut r, 0, 100) as f64 / 100.0).collect();
        let mut mix = gaussian_matrix(&mut r, d, d);
        while mix.determinant().abs() < 0.1 {
            mix = gaussian_matrix(&mut r, d, d);
        }
        let scaled = DMatrix::from_fn(n, d, |i, j| scales[i] * x[(i, j)]) * mix;
        let a = enumerate_exact(&DataMatrix::new(x).unwrap()).unwrap();
        let b = enumerate_exact(&DataMatrix::new(scaled).unwrap()).unwrap();
        prop_assert_eq!(a.bit_strings(), b.bit_strings());
    }

    #[test]
    fn objective_is_midpoint_convex(seed in any::<u64>(), kappa in kappa_strategy(), l1 in any::<bool>()) {
        let (x, y) = gaussian_data(seed, 6, 2);
        let data = DataMatrix::new(x).unwrap();
        let set = enumerate_exact(&data).unwrap();
        let prog = ConvexProgram::builder(data, LabelData::from_vector(y).unwrap(), set)
            .activation(ActivationSpec::new(kappa).unwrap())
            .reg(if l1 { RegNorm::L1 } else { RegNorm::L2 })
            .beta(0.3)
            .build()
            .unwrap();
        for k in 0..40 {
            let a = random_weights(seed.wrapping_add(2 * k), &prog);
            let b = random_weights(seed.wrapping_add(2 * k + 1), &prog);
            let mid = GroupWeights::from_matrix((a.matrix() + b.matrix()) * 0.5).unwrap();
            let bound = 0.5 * (prog.objective(&a) + prog.objective(&b));
            prop_assert!(prog.objective(&mid) <= bound + 1e-10 * bound.abs().max(1.0));
        }
    }

    #[test]
    fn predict_is_linear(seed in any::<u64>(), kappa in kappa_strategy(), alpha in -3.0f64..3.0) {
        let (x, y) = gaussian_data(seed, 7, 3);
        let prog = program(&x, &y, 0.1, kappa);
        let a = random_weights(seed, &prog);
        let b = random_weights(seed ^ 0xff, &prog);
        let comb = GroupWeights::from_matrix(a.matrix() * alpha + b.matrix()).unwrap();
        let lhs = prog.predict(&comb);
        let rhs = prog.predict(&a) * alpha + prog.predict(&b);
        prop_assert!((lhs - &rhs).amax() <= 1e-12 * (1.0 + rhs.amax()));
    }

    #[test]
    fn feasible_blocks_act_as_relu_neurons(seed in any::<u64>()) {
        let (x, y) = gaussian_data(seed, 7, 3);
        let prog = program(&x, &y, 0.1, 0.0);
        let p = prog.num_patterns();
        let mut w = project_feasible(&prog, &random_weights(seed, &prog));
        for i in p..2 * p {
            w.set_block(i, &DVector::zeros(prog.dim()));
        }
        let mut direct = DVector::zeros(x.nrows());
        for i in 0..p {
            direct += (&x * w.block(i)).map(|v| v.max(0.0));
        }
        prop_assert!((prog.predict(&w) - &direct).amax() <= 1e-10 * (1.0 + direct.amax()));
    }

    #[test]
    fn dropping_the_inert_zero_pattern_changes_nothing(seed in any::<u64>()) {
        let (mut x, y) = gaussian_data(seed, 7, 2);
        // A positive first column makes the all-zero pattern realizable.
        for i in 0..x.nrows() {
            x[(i, 0)] = x[(i, 0)].abs() + 0.1;
        }
        let data = DataMatrix::new(x).unwrap();
        let set = enumerate_exact(&data).unwrap();
        prop_assert!(set.contains(&vec![false; 7]));
        let labels = LabelData::from_vector(y).unwrap();
        let full = ConvexProgram::builder(data.clone(), labels.clone(), set.clone()).beta(0.2).drop_zero_pattern(false).build().unwrap();
        let dropped = ConvexProgram::builder(data, labels, set).beta(0.2).drop_zero_pattern(true).build().unwrap();
        prop_assert_eq!(dropped.num_patterns() + 1, full.num_patterns());
        let wd = random_weights(seed, &dropped);
        let (p, q) = (full.num_patterns(), dropped.num_patterns());
        let mut wf = GroupWeights::zeros(full.dim(), p);
        for (j, pat) in dropped.patterns().iter().enumerate() {
            let i = full.patterns().iter().position(|f| f.bits() == pat.bits()).unwrap();
            wf.set_block(i, &wd.block(j));
            wf.set_block(i + p, &wd.block(j + q));
        }
        prop_assert!((full.predict(&wf) - dropped.predict(&wd)).amax() <= 1e-12);
        prop_assert!((full.objective(&wf) - dropped.objective(&wd)).abs() <= 1e-12 * full.objective(&wf));
    }

    #[test]
    fn feasible_weights_map_to_a_network_with_the_same_objective(seed in any::<u64>(), kappa in kappa_strategy()) {
        let (x, y) = gaussian_data(seed, 6, 3);
        let beta = 0.2;
        let prog = program(&x, &y, beta, kappa);
        let w = project_feasible(&prog, &random_weights(seed, &prog));
        let net = convex_to_network(&w, prog.activation());
        prop_assert!(net.neurons() <= 2 * prog.num_patterns());
        let p_cvx = prog.objective(&w);
        let p_net = nonconvex_objective(&net, &x, &DMatrix::from_column_slice(6, 1, y.as_slice()), beta).unwrap();
        prop_assert!((p_cvx - p_net).abs() <= 1e-8 + 1e-6 * p_cvx.abs());
        // Each neuron keeps its source block's pattern on rows with slack;
        // blocks projected to rounding level carry no pattern.
        let top = (0..w.num_blocks()).map(|i| w.block(i).norm()).fold(0.0, f64::max);
        let active: Vec<usize> = (0..w.num_blocks()).filter(|&i| w.block(i).norm() > 0.0).collect();
        for (k, &i) in active.iter().enumerate() {
            if w.block(i).norm() <= 1e-8 * top {
                continue;
            }
            let bits = prog.patterns().get(i % prog.num_patterns()).bits();
            let z = &x * net.w1.column(k);
            for row in 0..6 {
                if z[row].abs() > 1e-8 * z.amax() {
                    prop_assert_eq!(z[row] >= 0.0, bits[row], "block {} row {}", i, row);
                }
            }
        }
    }

    #[test]
    fn balancing_preserves_the_output(seed in any::<u64>(), kappa in kappa_strategy(), m in 1usize..6) {
        let mut r = rng(seed);
        let x = gaussian_matrix(&mut r, 5, 3);
        let b = gaussian_vector(&mut r, m);
        let net = NetworkParams::new(gaussian_matrix(&mut r, 3, m), gaussian_matrix(&mut r, m, 2), Some(b), ActivationSpec::new(kappa).unwrap()).unwrap();
        let before = network_forward(&net, &x).unwrap();
        let after = network_forward(&rescale_balanced(&net), &x).unwrap();
        prop_assert!((before - after).amax() <= 1e-12 * 100.0);
    }

    #[test]
    fn pooled_cnn_objective_matches_its_reduction(seed in any::<u64>(), m in 1usize..5) {
        let mut r = rng(seed);
        let signals = gaussian_matrix(&mut r, 4, 9);
        let patches = PatchSet::from_signals_1d(&signals, 3, 2, 1).unwrap();
        let y = gaussian_matrix(&mut r, 4, 1);
        let labels = LabelData::new(y.clone()).unwrap();
        let (stacked, loss) = cnn_gap_reduce(&patches, &labels, LossSpec::Squared).unwrap();
        let net = NetworkParams::new(gaussian_matrix(&mut r, 3, m), gaussian_matrix(&mut r, m, 1), None, ActivationSpec::relu()).unwrap();
        let direct = cnn_gap_objective(&net, &patches, &y, 0.3).unwrap();
        let reduced = nonconvex_objective_with_loss(&net, stacked.values(), &y, 0.3, &loss).unwrap();
        prop_assert!((direct - reduced).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn rank_k_patterns_respect_the_rank_k_bound(seed in any::<u64>(), d in 3usize..6, k in 1usize..3) {
        let (x, _) = gaussian_data(seed, 8, d);
        let data = DataMatrix::new(x).unwrap();
        let approx = DataMatrix::new(data.svd().truncate(k)).unwrap();
        let set = enumerate_exact(&approx).unwrap();
        prop_assert!(BigUint::from(set.len()) <= count_bound(8, k));
        prop_assert!(count_bound(8, k) < count_bound(8, d));
    }
}

proptest! {
    #![proptest_config(cases(6))]

    #[test]
    fn solvers_are_deterministic(seed in any::<u64>()) {
        let (x, y) = gaussian_data(seed, 6, 2);
        let prog = program(&x, &y, 0.05, 0.0);
        let cfg = SolverConfig::experiment();
        let (a, ra) = solve_admm(&prog, &cfg).unwrap();
        let (b, rb) = solve_admm(&prog, &cfg).unwrap();
        prop_assert_eq!(a.matrix(), b.matrix());
        prop_assert_eq!(ra.to_json_lines(), rb.to_json_lines());
    }

    #[test]
    fn vector_output_total_ignores_column_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = gaussian_matrix(&mut r, 6, 2);
        let y = gaussian_matrix(&mut r, 6, 3);
        let data = DataMatrix::new(x).unwrap();
        let set = enumerate_exact(&data).unwrap();
        let cfg = SolverConfig::exact();
        let relu = ActivationSpec::relu();
        let a = vector_output_train(&data, &LabelData::new(y.clone()).unwrap(), 0.1, &set, relu, &cfg).unwrap();
        let perm = y.select_columns(&[2, 0, 1]);
        let b = vector_output_train(&data, &LabelData::new(perm).unwrap(), 0.1, &set, relu, &cfg).unwrap();
        prop_assert!((a.total_objective() - b.total_objective()).abs() <= 1e-6 * a.total_objective());
    }

    #[test]
    fn trained_networks_never_beat_the_convex_optimum(seed in any::<u64>()) {
        let (x, y) = gaussian_data(seed, 6, 2);
        let beta = 0.05;
        let prog = program(&x, &y, beta, 0.0);
        let p_cvx = prog.objective(&solve_conic(&prog, &SolverConfig::exact()).unwrap().0);
        let labels = DMatrix::from_column_slice(6, 1, y.as_slice());
        let cfg = TrainConfig { m: 6, lr: 0.02, epochs: 300, seed, ..TrainConfig::default() };
        let run = train_nonconvex(&x, &labels, beta, ActivationSpec::relu(), &cfg).unwrap();
        prop_assert_eq!(run.trajectory.len(), cfg.epochs + 1);
        prop_assert!(run.trajectory.iter().all(|v| v.is_finite()));
        prop_assert!(run.final_objective >= p_cvx - 1e-6 * (1.0 + p_cvx));
    }
}
