use stik_core::linalg::{norm2, rel_diff, sub, DenseMatrix};
use stik_core::problems::{
    add_noise, baart, gen_test_problem, gravity, prolate, relative_error, shaw, NoiseMode, NoiseSpec, ProblemName,
    TestProblemSpec,
};
use stik_core::solvers::tikhonov_direct;

fn singular_values(a: &DenseMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = a.to_nalgebra().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

fn spec(name: ProblemName, n: usize, noise: NoiseSpec, seed: u64) -> TestProblemSpec {
    TestProblemSpec { name, n, noise, seed }
}

#[test]
fn prolate_is_severely_ill_conditioned() {
    let (a, _) = prolate(100, 0.25);
    let s = singular_values(&a);
    let cond = s[0] / s[s.len() - 1];
    assert!(cond > 1e10, "condition number {cond:.3e}");
}

#[test]
fn kernels_have_decaying_spectra() {
    for (name, (a, _)) in [("gravity", gravity(100)), ("shaw", shaw(100)), ("baart", baart(100))] {
        let s = singular_values(&a);
        assert!(s[0] > 0.0);
        assert!(s[20] / s[0] < 1e-3, "{name}: s21/s1 = {:.3e}", s[20] / s[0]);
        let head = &s[..10];
        assert!(head.windows(2).all(|w| w[1] < w[0]), "{name}: leading values not distinct");
    }
}

#[test]
fn gravity_kernel_is_positive_and_peaks_on_the_diagonal() {
    let (a, x) = gravity(64);
    for i in 0..64 {
        let row = a.row(i);
        assert!(row.iter().all(|&v| v > 0.0));
        let argmax = row.iter().enumerate().max_by(|p, q| p.1.total_cmp(q.1)).unwrap().0;
        assert_eq!(argmax, i);
    }
    assert!(x.iter().all(|v| v.is_finite()));
}

#[test]
fn tikhonov_solution_satisfies_normal_equations() {
    let p = gen_test_problem(&spec(ProblemName::Shaw, 60, NoiseSpec::Level(0.01), 2)).unwrap();
    let a = p.a.as_dense().unwrap();
    let lambda = 0.2;
    let x = tikhonov_direct(&p, lambda).unwrap();
    let mut lhs = a.matvec_t(&a.matvec(&x));
    for (l, xi) in lhs.iter_mut().zip(&x) {
        *l += lambda * xi;
    }
    let rhs = a.matvec_t(&p.b);
    assert!(rel_diff(&lhs, &rhs) < 1e-10);
}

#[test]
fn generated_noise_matches_the_requested_level() {
    for name in [ProblemName::Gravity, ProblemName::Baart, ProblemName::Prolate] {
        let noisy = gen_test_problem(&spec(name, 80, NoiseSpec::Level(0.05), 11)).unwrap();
        let clean = gen_test_problem(&spec(name, 80, NoiseSpec::None, 11)).unwrap();
        let e = sub(&noisy.b, &clean.b);
        let level = norm2(&e) / norm2(&clean.b);
        assert!((level - 0.05).abs() < 1e-12 * 0.05, "{name}: level {level}");
        let sigma2 = noisy.sigma2.unwrap();
        assert!((sigma2 - norm2(&e).powi(2) / 80.0).abs() < 1e-12 * sigma2);
    }
}

#[test]
fn variance_mode_has_the_requested_spread() {
    let clean = vec![0.0; 200_000];
    let (b, sigma2) = add_noise(&clean, NoiseMode::Variance, 0.04, 8).unwrap();
    assert_eq!(sigma2, 0.04);
    let mean = b.iter().sum::<f64>() / b.len() as f64;
    let var = b.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b.len() - 1) as f64;
    // standard error of a sample variance is σ²·sqrt(2/(m−1))
    let se = 0.04 * (2.0 / (b.len() - 1) as f64).sqrt();
    assert!((var - 0.04).abs() < 4.0 * se, "sample variance {var}");
    assert!(mean.abs() < 4.0 * (0.04 / b.len() as f64).sqrt());
}

#[test]
fn seeds_separate_realizations() {
    let a = gen_test_problem(&spec(ProblemName::Gravity, 50, NoiseSpec::Level(0.01), 1)).unwrap();
    let b = gen_test_problem(&spec(ProblemName::Gravity, 50, NoiseSpec::Level(0.01), 1)).unwrap();
    let c = gen_test_problem(&spec(ProblemName::Gravity, 50, NoiseSpec::Level(0.01), 2)).unwrap();
    assert_eq!(a.b, b.b);
    assert_ne!(a.b, c.b);
    assert_eq!(a.x_true, c.x_true);
}

#[test]
fn toy_problem_carries_its_noise_variance() {
    let p = gen_test_problem(&spec(ProblemName::Toy2d, 0, NoiseSpec::None, 3)).unwrap();
    assert_eq!((p.m(), p.n()), (10, 2));
    assert_eq!(p.sigma2, Some(0.1));
}

#[test]
fn relative_error_edge_cases() {
    assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(relative_error(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 1.0);
    assert!((relative_error(&[6.0, 8.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!(relative_error(&[1.0], &[0.0]).is_err());
    assert!(relative_error(&[1.0, 2.0], &[1.0]).is_err());
}

#[test]
fn invalid_requests_are_rejected() {
    assert!(gen_test_problem(&spec(ProblemName::Gravity, 1, NoiseSpec::None, 0)).is_err());
    assert!(gen_test_problem(&spec(ProblemName::Shaw, 10, NoiseSpec::Level(-0.1), 0)).is_err());
    assert!(gen_test_problem(&spec(ProblemName::Shaw, 10, NoiseSpec::Variance(0.0), 0)).is_err());
    assert!("deblur".parse::<ProblemName>().is_err());
}
