use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rbf_core::geometry::{generate_points, CubeDomain, PointScheme};
use rbf_core::interpolant::{
    residual_expansion, solve, InterpolantDocument, InterpolationProblem, KernelExpansion, SolveOptions,
};
use rbf_core::polybasis::MonomialBasis;
use rbf_core::{Kernel, MultiIndex, PointSet};

fn kernel_strategy(dim: usize) -> impl Strategy<Value = Kernel> {
    prop_oneof![
        (2.0f64..30.0).prop_map(move |b| Kernel::gaussian(b, dim).unwrap()),
        (prop_oneof![Just(-1.0), Just(1.0), Just(3.0), Just(0.5)], 0.2f64..0.6)
            .prop_map(move |(b, c)| Kernel::multiquadric(b, c, dim).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn interpolates_its_data(kernel in kernel_strategy(2), count in 6usize..30, seed in any::<u64>()) {
        let domain = CubeDomain::unit(2).unwrap();
        let nodes = generate_points(&domain, &PointScheme::Halton { count }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..count).map(|_| rng.random_range(-1.0..1.0)).collect();
        let problem = InterpolationProblem::new(kernel, nodes, values.clone()).unwrap();
        match solve(&problem, SolveOptions { max_condition: Some(1e8) }) {
            Ok(s) => {
                prop_assert!(s.node_residual(&values).unwrap() <= 1e-8 * 2.0);
                prop_assert!(s.moment_residual() <= 1e-8);
            }
            Err(rbf_core::Error::IllConditioned { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn residual_is_orthogonal_to_interpolant(kernel in kernel_strategy(1), seed in any::<u64>()) {
        let domain = CubeDomain::unit(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let centers = generate_points(&domain, &PointScheme::Random { count: 6, seed }).unwrap();
        let q = MonomialBasis::new(1, kernel.cpd_order()).len();
        let f = KernelExpansion::projected(
            kernel.clone(),
            centers,
            (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
            vec![0.3; q],
        ).unwrap();
        let nodes = generate_points(&domain, &PointScheme::Grid { spacing: 0.125 }).unwrap();
        let problem = InterpolationProblem::sampled(kernel, nodes, |x| f.evaluate(x)).unwrap();
        let Ok(s) = solve(&problem, SolveOptions { max_condition: Some(1e9) }) else { return Ok(()); };
        let nf = f.native_norm().unwrap();
        let ns = s.expansion().native_norm().unwrap();
        let nr = residual_expansion(&f, &s).unwrap().native_norm().unwrap();
        prop_assert!(ns <= nf * (1.0 + 1e-9));
        prop_assert!(nr <= nf * (1.0 + 1e-9));
        prop_assert!((nf * nf - ns * ns - nr * nr).abs() <= 1e-6 * nf * nf);
    }
}

#[test]
fn gaussian_example_against_dense_solver() {
    let kernel = Kernel::gaussian(1.0, 1).unwrap();
    let nodes = PointSet::new(1, vec![vec![0.0], vec![1.0]]).unwrap();
    let s = solve(&InterpolationProblem::new(kernel, nodes, vec![1.0, 0.0]).unwrap(), SolveOptions::default()).unwrap();
    let e = (-1.0f64).exp();
    let a = nalgebra::Matrix2::new(1.0, e, e, 1.0);
    let c = a.lu().solve(&nalgebra::Vector2::new(1.0, 0.0)).unwrap();
    assert!((s.coeffs()[0] - c[0]).abs() < 1e-14);
    assert!((s.coeffs()[1] - c[1]).abs() < 1e-14);
}

#[test]
fn quadratic_reproduction_with_derivatives() {
    // β = 5 gives m = 3, so quadratics are reproduced exactly.
    let kernel = Kernel::multiquadric(5.0, 0.4, 2).unwrap();
    let domain = CubeDomain::unit(2).unwrap();
    let nodes = generate_points(&domain, &PointScheme::Halton { count: 20 }).unwrap();
    let p = |x: &[f64]| 1.0 - x[0] + 2.0 * x[1] + 0.5 * x[0] * x[0] - x[0] * x[1] + 3.0 * x[1] * x[1];
    let problem = InterpolationProblem::sampled(kernel, nodes, |x| Ok(p(x))).unwrap();
    let s = solve(&problem, SolveOptions::default()).unwrap();
    let dx = MultiIndex::new(vec![1, 0]);
    let dyy = MultiIndex::new(vec![0, 2]);
    for y in domain.probe_grid(9) {
        assert!((s.evaluate(&y).unwrap() - p(&y)).abs() < 1e-7);
        let d = s.evaluate_derivatives(&[dx.clone(), dyy.clone()], &y).unwrap();
        assert!((d[0] - (-1.0 + y[0] - y[1])).abs() < 1e-6);
        assert!((d[1] - 6.0).abs() < 1e-5);
    }
}

#[test]
fn document_survives_a_file_round_trip() {
    let kernel = Kernel::gaussian(6.0, 2).unwrap();
    let domain = CubeDomain::unit(2).unwrap();
    let nodes = generate_points(&domain, &PointScheme::Halton { count: 16 }).unwrap();
    let problem = InterpolationProblem::sampled(kernel, nodes, |x: &[f64]| Ok((3.0 * x[0]).sin() * x[1])).unwrap();
    let s = solve(&problem, SolveOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, s.to_document().to_json().unwrap()).unwrap();
    let back = InterpolantDocument::from_json(&std::fs::read_to_string(&path).unwrap())
        .unwrap()
        .into_interpolant()
        .unwrap();
    assert_eq!(back.coeffs(), s.coeffs());
    assert_eq!(back.condition_estimate(), s.condition_estimate());
}

#[test]
fn interpolants_evaluate_concurrently() {
    let kernel = Kernel::multiquadric(1.0, 0.3, 1).unwrap();
    let domain = CubeDomain::unit(1).unwrap();
    let nodes = generate_points(&domain, &PointScheme::Grid { spacing: 0.1 }).unwrap();
    let problem = InterpolationProblem::sampled(kernel, nodes, |x: &[f64]| Ok(x[0].cos())).unwrap();
    let s = Arc::new(solve(&problem, SolveOptions::default()).unwrap());
    let serial: Vec<f64> = (0..100).map(|i| s.evaluate(&[i as f64 / 99.0]).unwrap()).collect();
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let s = Arc::clone(&s);
            std::thread::spawn(move || (0..100).map(|i| s.evaluate(&[i as f64 / 99.0]).unwrap()).collect::<Vec<_>>())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), serial);
    }
}
