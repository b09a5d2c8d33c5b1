// Development probe: prints reference quantities used to sanity-check the
// statistical test margins. Not part of the deliverable surface.

use mcls::analysis::{theoretical_asymptote, AsymptoteSpec, NSamples};
use mcls::estimators::estimate_sigma_decomposition;
use mcls::problem::{McLsProblem, SamplePair};
use mcls::problems::{Problem1, Problem2};
use mcls::rng::rng_for_run;
use nalgebra::{DMatrix, DVector};

fn quadrature_means(x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n_grid = 800_000usize;
    let lo = -8.0;
    let hi = 8.0;
    let h = (hi - lo) / n_grid as f64;
    let mut q = DVector::zeros(3);
    let mut j = DMatrix::zeros(3, 2);
    let mut buf = SamplePair::zeros(3, 2);
    for k in 0..=n_grid {
        let g = lo + h * k as f64;
        let w = (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt()
            * if k == 0 || k == n_grid { 0.5 } else { 1.0 };
        Problem1::sample_with_g(x, g, &mut buf);
        q.axpy(w * h, &buf.qhat, 1.0);
        mcls::linalg::mat_axpy(&mut j, w * h, &buf.jhat, 1.0);
    }
    (q, j)
}

fn objective(x: &DVector<f64>) -> f64 {
    let (q, _) = quadrature_means(x);
    0.5 * q.norm_squared()
}

fn grid_search() {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=40 {
        for j in 0..=40 {
            let x1 = 2.0 * i as f64 / 40.0;
            let x2 = 1.0 + 2.0 * j as f64 / 40.0;
            let f = {
                // cheap quadrature for the scan
                let n_grid = 4000usize;
                let h = 16.0 / n_grid as f64;
                let mut q = DVector::zeros(3);
                let mut buf = SamplePair::zeros(3, 2);
                let x = DVector::from_row_slice(&[x1, x2]);
                for k in 0..=n_grid {
                    let g = -8.0 + h * k as f64;
                    let w = (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt()
                        * if k == 0 || k == n_grid { 0.5 } else { 1.0 };
                    Problem1::sample_with_g(&x, g, &mut buf);
                    q.axpy(w * h, &buf.qhat, 1.0);
                }
                0.5 * q.norm_squared()
            };
            if f < best.0 {
                best = (f, x1, x2);
            }
        }
    }
    println!("grid argmin: f={} at ({}, {})", best.0, best.1, best.2);
    let paper = DVector::from_row_slice(&[0.660877, 2.28548]);
    println!("objective at paper x*: {}", objective(&paper));
}

fn hypothesis_checks() {
    let paper = DVector::from_row_slice(&[0.660877, 2.28548]);
    // gradient of 0.5 * E||qhat||^2 (same-pair product) via quadrature
    let n_grid = 800_000usize;
    let h = 16.0 / n_grid as f64;
    let mut grad_sq = DVector::zeros(2);
    let mut buf = SamplePair::zeros(3, 2);
    for k in 0..=n_grid {
        let g = -8.0 + h * k as f64;
        let w = (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt()
            * if k == 0 || k == n_grid { 0.5 } else { 1.0 };
        Problem1::sample_with_g(&paper, g, &mut buf);
        grad_sq.gemv_tr(w * h, &buf.jhat, &buf.qhat, 1.0);
    }
    println!("grad of 0.5 E||qhat||^2 at paper x*: {:?}", grad_sq.as_slice());

    // swapped reading: y = x2 + x1 * G
    let mut q = DVector::zeros(3);
    let mut j = DMatrix::zeros(3, 2);
    let swapped = DVector::from_row_slice(&[paper[1], paper[0]]);
    for k in 0..=n_grid {
        let g = -8.0 + h * k as f64;
        let w = (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt()
            * if k == 0 || k == n_grid { 0.5 } else { 1.0 };
        Problem1::sample_with_g(&swapped, g, &mut buf);
        q.axpy(w * h, &buf.qhat, 1.0);
        mcls::linalg::mat_axpy(&mut j, w * h, &buf.jhat, 1.0);
    }
    println!("swapped-mean gradient at paper x*: {:?}", j.tr_mul(&q).as_slice());
}

fn refine_boundary_minimizer() {
    // golden-section on f(mu, 3) over mu in [0, 0.6]
    let f = |mu: f64| {
        let x = DVector::from_row_slice(&[mu, 3.0]);
        objective(&x)
    };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 0.6f64);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let mu = 0.5 * (a + b);
    println!("boundary minimizer: mu* = {mu:.9}, f = {:.9}", f(mu));
    let x = DVector::from_row_slice(&[mu, 3.0]);
    let (q, j) = quadrature_means(&x);
    println!("residual at (mu*, 3): {:?}", q.as_slice());
    println!("gradient at (mu*, 3): {:?}", j.tr_mul(&q).as_slice());
    let s = j.tr_mul(&j);
    println!("S at (mu*, 3): {:?}", s.as_slice());
    let mut l = s.clone();
    println!("S positive definite: {}", mcls::linalg::cholesky_in_place(&mut l));
    // interior objective values on the x2=3 edge neighborhood for context
    for (dx1, dx2) in [(0.0, -1e-4), (1e-4, 0.0), (-1e-4, 0.0)] {
        let xp = DVector::from_row_slice(&[mu + dx1, 3.0 + dx2]);
        println!("f at ({:+.e}, {:+.e}) offset: {:.9}", dx1, dx2, objective(&xp));
    }
}

fn main() {
    grid_search();
    hypothesis_checks();
    refine_boundary_minimizer();
    let p1 = Problem1::new();
    let x_star = p1.reference().unwrap().x_star.clone();
    let (q_bar, j_bar) = quadrature_means(&x_star);
    println!("P1 quadrature E[Q] at x*: {:?}", q_bar.as_slice());
    println!("P1 quadrature E[J] at x*: {:?}", j_bar.as_slice());
    let grad = j_bar.tr_mul(&q_bar);
    println!("P1 quadrature gradient at x*: {:?}", grad.as_slice());
    let s_quad = j_bar.tr_mul(&j_bar);
    println!("P1 S (quadrature): {:?}", s_quad.as_slice());
    println!("P1 S (stored MC):  {:?}", p1.reference().unwrap().precond.as_slice());

    let mut rng = rng_for_run(0xABCD, 0);
    let sd = estimate_sigma_decomposition(&p1, &x_star, 200_000, &mut rng).unwrap();
    println!("P1 sigma_a2 trace: {}", sd.sigma_a2.trace());
    println!("P1 sigma_b2 trace: {}", sd.sigma_b2.trace());
    for n in [2u64, 10, 100] {
        let spec = AsymptoteSpec {
            s_matrix: p1.reference().unwrap().precond.clone(),
            sigma_a2: sd.sigma_a2.clone(),
            sigma_b2: sd.sigma_b2.clone(),
            n_samples: NSamples::Finite(n),
        };
        println!("P1 asymptote N={n}: {}", theoretical_asymptote(&spec).unwrap());
    }
    let spec = AsymptoteSpec {
        s_matrix: p1.reference().unwrap().precond.clone(),
        sigma_a2: sd.sigma_a2.clone(),
        sigma_b2: sd.sigma_b2.clone(),
        n_samples: NSamples::Infinite,
    };
    println!("P1 asymptote N=inf: {}", theoretical_asymptote(&spec).unwrap());

    let p2 = Problem2::make(4, 5, 0).unwrap();
    let x2 = p2.reference().unwrap().x_star.clone();
    println!("P2(4,5) u* = {:?}", p2.u_star().as_slice());
    println!("P2(4,5) x* = {:?}", x2.as_slice());
    let mut rng = rng_for_run(0xABCE, 0);
    let sd2 = estimate_sigma_decomposition(&p2, &x2, 200_000, &mut rng).unwrap();
    println!("P2 sigma_a2 trace: {}", sd2.sigma_a2.trace());
    println!("P2 sigma_b2 trace: {}", sd2.sigma_b2.trace());
    println!("P2 S diag: {:?}", (0..4).map(|i| p2.reference().unwrap().precond[(i, i)]).collect::<Vec<_>>());
    println!(
        "P2 mean residual at x*: {:?}",
        p2.mean_residual(&x2).as_slice()
    );
    let s = &p2.reference().unwrap().precond;
    println!("P2 cond estimate of S: {:e}", {
        let mut l = s.clone();
        assert!(mcls::linalg::cholesky_in_place(&mut l));
        mcls::linalg::cholesky_condition_estimate(&l)
    });
}
