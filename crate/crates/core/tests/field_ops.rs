use std::f64::consts::PI;

use ksmf_core::diagnostics::{l1_distance, lp_norm};
use ksmf_core::field::{
    convolve, convolve_fields, gradient, helmholtz_solve, kde, DensityField, FieldRole, Grid2D,
    Multiplier,
};
use ksmf_core::particles::rng::normal_pair;
use ksmf_core::potential::{yukawa_eval, MollifierKind, MollifierSpec};

fn gaussian(var: f64, c: [f64; 2]) -> impl Fn([f64; 2]) -> f64 + Sync {
    move |x| {
        let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
        (-r2 / (2.0 * var)).exp() / (2.0 * PI * var)
    }
}

fn linf(a: &DensityField, b: &DensityField) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn delta_convolved_with_mollifier_is_the_sampled_kernel() {
    let g = Grid2D::new(4.0, 256).unwrap();
    let h = g.h();
    let (i0, j0) = (100, 141);
    for kind in [MollifierKind::SmoothBump, MollifierKind::TruncatedGaussian] {
        let spec = MollifierSpec::new(kind, 4.0 * h).unwrap();
        let mut delta = DensityField::zeros(g, FieldRole::Density);
        delta.values_mut()[i0 * g.n + j0] = 1.0 / (h * h);
        let out = convolve(&delta, &Multiplier::mollifier_sampled(g, &spec)).unwrap();
        let c = [g.coord(i0), g.coord(j0)];
        let expect =
            DensityField::from_fn(g, FieldRole::Generic, |x| spec.eval([x[0] - c[0], x[1] - c[1]]));
        assert!(linf(&out, &expect) < 1e-6, "{kind:?}: {}", linf(&out, &expect));
    }
}

#[test]
fn gaussian_convolution_adds_variances() {
    let g = Grid2D::new(16.0, 256).unwrap();
    let a = DensityField::from_fn(g, FieldRole::Density, gaussian(0.6, [1.0, -0.5]));
    let b = DensityField::from_fn(g, FieldRole::Density, gaussian(1.1, [-0.25, 0.75]));
    let ab = convolve_fields(&a, &b).unwrap();
    let expect = DensityField::from_fn(g, FieldRole::Density, gaussian(1.7, [0.75, 0.25]));
    assert!(linf(&ab, &expect) < 1e-8, "{}", linf(&ab, &expect));
    let ba = convolve_fields(&b, &a).unwrap();
    assert!(linf(&ab, &ba) < 1e-12);
}

#[test]
fn helmholtz_of_narrow_gaussian_is_the_yukawa_kernel() {
    let g = Grid2D::new(8.0, 1024).unwrap();
    let sigma = 4.0 * g.h();
    let rhs = DensityField::from_fn(g, FieldRole::Density, gaussian(sigma * sigma, [0.0, 0.0]));
    let v = helmholtz_solve(&rhs);
    let centre = g.n / 2;
    let mut checked = 0;
    for j in centre..g.n {
        let r = g.coord(j);
        if (0.5..=3.0).contains(&r) {
            let expect = yukawa_eval(1.0, r).unwrap();
            let got = v.get(centre, j);
            assert!(((got - expect) / expect).abs() < 0.01, "r = {r}: {got} vs {expect}");
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn helmholtz_is_linear_and_nearly_positive() {
    let g = Grid2D::new(8.0, 128).unwrap();
    let f = DensityField::from_fn(g, FieldRole::Density, gaussian(0.05, [0.3, 0.0]));
    let k = PI / 2.0;
    let s = DensityField::from_fn(g, FieldRole::Generic, |x| (k * x[0]).sin() * (k * x[1]).cos());
    let (a, b) = (1.7, -0.4);
    let lhs = helmholtz_solve(&f.zip_map(&s, |x, y| a * x + b * y).unwrap());
    let rhs = helmholtz_solve(&f)
        .zip_map(&helmholtz_solve(&s), |x, y| a * x + b * y)
        .unwrap();
    assert!(linf(&lhs, &rhs) < 1e-12);
    let v = helmholtz_solve(&f);
    assert!(v.min() >= -1e-10 * f.max());
}

#[test]
fn mollifier_convolution_preserves_mass() {
    let g = Grid2D::new(8.0, 256).unwrap();
    let f = DensityField::from_fn(g, FieldRole::Density, gaussian(0.3, [1.0, 2.0]));
    for eps in [0.05, 0.2, 1.0] {
        let spec = MollifierSpec::new(MollifierKind::SmoothBump, eps).unwrap();
        let out = convolve(&f, &Multiplier::mollifier_exact(g, &spec)).unwrap();
        assert!((out.integral() - f.integral()).abs() < 1e-10);
    }
}

#[test]
fn transform_round_trip_and_gradient_mean() {
    let g = Grid2D::new(5.0, 128).unwrap();
    let f = DensityField::from_fn(g, FieldRole::Generic, |x| {
        (0.9 * x[0]).sin().exp() * (x[1] * 0.3).cos() + 0.2 * x[0] * (-(x[1] * x[1])).exp()
    });
    let identity = Multiplier::from_symbol(g, |_, _| 1.0);
    let back = convolve(&f, &identity).unwrap();
    let scale = f.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(linf(&f, &back) <= 1e-12 * scale);
    let (d1, d2) = gradient(&f);
    assert!(d1.integral().abs() < 1e-10);
    assert!(d2.integral().abs() < 1e-10);
}

#[test]
fn kde_of_gaussian_samples_is_close_in_l1() {
    let g = Grid2D::new(8.0, 256).unwrap();
    let truth = DensityField::from_fn(g, FieldRole::Density, gaussian(1.0, [0.0, 0.0]));
    let n = 100_000u64;
    let mut total = 0.0;
    for seed in 0..5u64 {
        let pts: Vec<[f64; 2]> = (0..n).map(|i| normal_pair(1000 + seed, i, 0)).collect();
        let est = kde(&pts, 0.2, g).unwrap();
        assert!((est.integral() - 1.0).abs() < 1e-6);
        total += l1_distance(&est, &truth).unwrap();
    }
    let mean = total / 5.0;
    assert!(mean <= 0.05, "{mean}");
}

#[test]
fn kde_ignores_duplication() {
    let g = Grid2D::new(8.0, 128).unwrap();
    let pts: Vec<[f64; 2]> = (0..200).map(|i| normal_pair(3, i, 0)).collect();
    let twice: Vec<[f64; 2]> = pts.iter().chain(pts.iter()).copied().collect();
    let a = kde(&pts, 0.3, g).unwrap();
    let b = kde(&twice, 0.3, g).unwrap();
    assert!(linf(&a, &b) <= 1e-13 * a.max());
}

fn bump(c: [f64; 2], r: f64, amp: f64) -> impl Fn([f64; 2]) -> f64 + Sync {
    move |x| {
        let q = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (r * r);
        if q < 1.0 {
            amp * (-1.0 / (1.0 - q)).exp()
        } else {
            0.0
        }
    }
}

fn grad_norm(f: &DensityField, q: f64) -> f64 {
    let (a, b) = gradient(f);
    let mag = a.zip_map(&b, |x, y| x.hypot(y)).unwrap();
    if q.is_infinite() {
        mag.max()
    } else {
        lp_norm(&mag, q).unwrap()
    }
}

fn norm(f: &DensityField, q: f64) -> f64 {
    if q.is_infinite() {
        f.values().iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    } else {
        lp_norm(f, q).unwrap()
    }
}

#[test]
fn mollification_error_is_bounded_by_gradient() {
    let g = Grid2D::new(4.0, 1024).unwrap();
    let fields = [
        DensityField::from_fn(g, FieldRole::Generic, bump([0.0, 0.0], 1.5, 1.0)),
        DensityField::from_fn(g, FieldRole::Generic, |x| {
            bump([0.5, -0.3], 0.8, 2.0)(x) - bump([-1.0, 1.0], 1.2, 0.7)(x)
        }),
        DensityField::from_fn(g, FieldRole::Generic, |x| {
            bump([0.2, 0.4], 2.0, 1.0)(x) * (3.0 * x[0]).cos()
        }),
    ];
    for f in &fields {
        for eps in [0.2, 0.1, 0.05] {
            assert!(eps >= 4.0 * g.h());
            let spec = MollifierSpec::new(MollifierKind::SmoothBump, eps).unwrap();
            let fj = convolve(f, &Multiplier::mollifier_sampled(g, &spec)).unwrap();
            let diff = fj.zip_map(f, |a, b| a - b).unwrap();
            for q in [1.0, 2.0, f64::INFINITY] {
                let lhs = norm(&diff, q);
                let rhs = eps * grad_norm(f, q);
                assert!(lhs <= rhs, "eps {eps}, q {q}: {lhs} > {rhs}");
            }
        }
    }
}
