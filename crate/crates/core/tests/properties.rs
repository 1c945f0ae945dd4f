//! Property-based checks of the invariants shared across modules.

use proptest::prelude::*;
use rand::Rng;
use sketchmix::eval::{gen_synthetic, kl_sym_mc, mmd_mc};
use sketchmix::freqdesign::draw_freq;
use sketchmix::model::{
    gauss_charfn, gauss_charfn_grad, gauss_kl, gauss_logpdf, mixture_logpdf, mixture_sample,
};
use sketchmix::quadrature::adaptive_simpson;
use sketchmix::recovery::cl_omp_traced;
use sketchmix::sketch::{sketch_empirical, sketch_gmm, sketch_merge};
use sketchmix::*;

fn gaussian(d: usize) -> impl Strategy<Value = GaussianParams> {
    (
        prop::collection::vec(-3.0..3.0f64, d),
        prop::collection::vec(0.1..3.0f64, d),
    )
        .prop_map(|(m, v)| GaussianParams::new(m, v).unwrap())
}

fn mixture(d: usize, max_k: usize) -> impl Strategy<Value = Mixture> {
    (1..=max_k)
        .prop_flat_map(move |k| {
            (
                prop::collection::vec(gaussian(d), k),
                prop::collection::vec(0.05..1.0f64, k),
            )
        })
        .prop_map(|(c, w)| Mixture::new(c, w).unwrap().normalized().unwrap())
}

fn freq_set(d: usize, m: usize, seed: u64) -> FrequencySet {
    draw_freq(
        &[vec![1.0; d]],
        &[1.0],
        m,
        FrequencyKind::AdaptedRadius,
        seed,
    )
    .unwrap()
}

fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn charfn_is_bounded_and_hermitian(
        p in (1usize..6).prop_flat_map(gaussian),
        scale in 0.0..5.0f64,
        dir in prop::collection::vec(-1.0..1.0f64, 5),
    ) {
        let w: Vec<f64> = dir[..p.dim()].iter().map(|x| x * scale).collect();
        let neg: Vec<f64> = w.iter().map(|x| -x).collect();
        let a = gauss_charfn(&p, &w).unwrap();
        let b = gauss_charfn(&p, &neg).unwrap();
        prop_assert!(a.norm() <= 1.0 + 1e-15);
        prop_assert!((a - b.conj()).norm() <= 1e-15);
        let quad: f64 = w.iter().zip(p.variances()).map(|(x, s)| s * x * x).sum();
        if quad > 1e-6 {
            prop_assert!(a.norm() < 1.0);
        }
        let zero = vec![0.0; p.dim()];
        prop_assert_eq!(gauss_charfn(&p, &zero).unwrap(), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn kl_is_nonnegative_and_vanishes_only_on_equal(
        (p, q) in (1usize..6).prop_flat_map(|d| (gaussian(d), gaussian(d))),
    ) {
        prop_assert!(gauss_kl(&p, &q).unwrap() >= 0.0);
        prop_assert!(gauss_kl(&p, &p).unwrap().abs() <= 1e-12);
        if p != q {
            prop_assert!(gauss_kl(&p, &q).unwrap() > 0.0);
        }
    }

    #[test]
    fn merge_is_associative_commutative_and_consistent(
        sizes in (1usize..40, 1usize..40, 1usize..40),
        seed in any::<u64>(),
        chunk in 1usize..16,
    ) {
        let d = 3;
        let fs = freq_set(d, 24, seed);
        let mut rng = SeedStream::new(seed).rng();
        let mut draw = |n: usize| {
            Dataset::new(d, (0..n * d).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap()
        };
        let (da, db, dc) = (draw(sizes.0), draw(sizes.1), draw(sizes.2));
        let sk = |x: &Dataset| sketch_empirical(x, &fs, chunk).unwrap();
        let (a, b, c) = (sk(&da), sk(&db), sk(&dc));
        let left = sketch_merge(&sketch_merge(&a, &b).unwrap(), &c).unwrap();
        let right = sketch_merge(&a, &sketch_merge(&b, &c).unwrap()).unwrap();
        prop_assert!(max_abs_diff(left.values(), right.values()) <= 1e-12);
        prop_assert_eq!(left.count(), right.count());
        let ab = sketch_merge(&a, &b).unwrap();
        let ba = sketch_merge(&b, &a).unwrap();
        prop_assert!(max_abs_diff(ab.values(), ba.values()) <= 1e-12);

        let mut rows = da.as_slice().to_vec();
        rows.extend_from_slice(db.as_slice());
        let concat = sk(&Dataset::new(d, rows).unwrap());
        prop_assert!(max_abs_diff(concat.values(), ab.values()) <= 1e-12);
        prop_assert_eq!(concat.count(), ab.count());
    }

    #[test]
    fn sketches_of_distributions_have_norm_at_most_one(
        mix in mixture(2, 4),
        seed in any::<u64>(),
        n in 1usize..200,
    ) {
        let fs = freq_set(2, 30, seed);
        prop_assert!(sketch_gmm(&mix, &fs).unwrap().norm() <= 1.0 + 1e-12);
        let data = mixture_sample(&mix, n, &mut SeedStream::new(seed).rng()).unwrap();
        prop_assert!(sketch_empirical(&data, &fs, 7).unwrap().norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn mmd_is_symmetric(p in mixture(2, 3), q in mixture(2, 3), seed in any::<u64>()) {
        for kind in [FrequencyKind::Gaussian, FrequencyKind::AdaptedRadius] {
            let a = mmd_mc(&p, &q, 1.0, kind, 64, seed).unwrap();
            let b = mmd_mc(&q, &p, 1.0, kind, 64, seed).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn synthetic_problems_are_reproducible(d in 1usize..6, k in 1usize..6, seed in any::<u64>()) {
        prop_assert_eq!(gen_synthetic(d, k, seed).unwrap(), gen_synthetic(d, k, seed).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn charfn_gradient_matches_central_differences(
        (p, w) in prop::sample::select(vec![1usize, 2, 5, 10])
            .prop_flat_map(|d| (gaussian(d), prop::collection::vec(-1.5..1.5f64, d))),
    ) {
        let h = 1e-6;
        let g = gauss_charfn_grad(&p, &w).unwrap();
        let eval = |mean: &[f64], var: &[f64]| {
            gauss_charfn(&GaussianParams::new(mean.to_vec(), var.to_vec()).unwrap(), &w).unwrap()
        };
        let mut fd = Vec::new();
        let mut an = Vec::new();
        for l in 0..p.dim() {
            let (mut up, mut dn) = (p.mean().to_vec(), p.mean().to_vec());
            up[l] += h;
            dn[l] -= h;
            fd.push((eval(&up, p.variances()) - eval(&dn, p.variances())) / (2.0 * h));
            an.push(g.dmean[l]);
        }
        for l in 0..p.dim() {
            let (mut up, mut dn) = (p.variances().to_vec(), p.variances().to_vec());
            up[l] += h;
            dn[l] -= h;
            fd.push((eval(p.mean(), &up) - eval(p.mean(), &dn)) / (2.0 * h));
            an.push(g.dvar[l]);
        }
        let err: f64 = fd.iter().zip(&an).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let size: f64 = an.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-5 * size.max(1e-3), "error {err}, gradient norm {size}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn pinsker_holds_in_one_dimension(p in gaussian(1), q in gaussian(1)) {
        let sym = gauss_kl(&p, &q).unwrap() + gauss_kl(&q, &p).unwrap();
        let lo = (p.mean()[0] - 12.0 * p.variances()[0].sqrt()).min(q.mean()[0] - 12.0 * q.variances()[0].sqrt());
        let hi = (p.mean()[0] + 12.0 * p.variances()[0].sqrt()).max(q.mean()[0] + 12.0 * q.variances()[0].sqrt());
        let tv = adaptive_simpson(
            |x| (gauss_logpdf(&p, &[x]).unwrap().exp() - gauss_logpdf(&q, &[x]).unwrap().exp()).abs(),
            lo,
            hi,
            1e-10,
            40,
        );
        prop_assert!(sym + 1e-9 >= tv * tv, "sym KL {sym} < TV^2 {}", tv * tv);
    }

    #[test]
    fn mixture_density_integrates_to_one(mix in mixture(1, 3)) {
        let ends = |sign: f64| mix.components().iter().map(move |c| c.mean()[0] + sign * 14.0 * c.variances()[0].sqrt());
        let lo = ends(-1.0).fold(f64::INFINITY, f64::min);
        let hi = ends(1.0).fold(f64::NEG_INFINITY, f64::max);
        let total = adaptive_simpson(|x| mixture_logpdf(&mix, &[x]).unwrap().exp(), lo, hi, 1e-10, 40);
        prop_assert!((total - 1.0).abs() <= 1e-6, "integral {total}");
    }

    #[test]
    fn recovery_outputs_and_residuals_behave(seed in 0u64..1000, k in 1usize..4, clompr in any::<bool>()) {
        let d = 2;
        let prob = gen_synthetic(d, k, seed).unwrap();
        let fs = freq_set(d, 10 * (2 * d + 1) * k, seed);
        let z = sketch_gmm(&prob.truth, &fs).unwrap();
        let algo = if clompr { Algorithm::ClOmpr } else { Algorithm::ClOmp };
        let cfg = RecoveryConfig::new(k, algo).with_seed(seed);
        let (est, trace) = cl_omp_traced(&z, &fs, &cfg).unwrap();
        let (again, _) = cl_omp_traced(&z, &fs, &cfg).unwrap();
        prop_assert_eq!(&est, &again);
        prop_assert_eq!(est.len(), k);
        prop_assert!((est.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(est.weights().iter().all(|&w| w >= 0.0));
        prop_assert!(est.components().iter().all(|c| c.variances().iter().all(|&v| v >= VARIANCE_FLOOR)));
        prop_assert_eq!(trace.atom_searches, cfg.iterations());
        prop_assert_eq!(trace.thresholdings, if clompr { k } else { 0 });
        for it in &trace.iterations {
            let tol = 1e-12 * it.before_projection.max(1.0);
            prop_assert!(it.after_adjustment <= it.after_projection + tol);
            if !it.thresholded {
                prop_assert!(it.after_projection <= it.before_projection + tol);
            }
        }
    }
}

#[test]
fn kl_of_a_relabelled_truth_is_zero_within_three_standard_errors() {
    let mut hits = 0;
    for seed in 0..100u64 {
        let truth = gen_synthetic(3, 3, seed).unwrap().truth;
        let mut comps = truth.components().to_vec();
        let mut w = truth.weights().to_vec();
        comps.reverse();
        w.reverse();
        let est = Mixture::new(comps, w).unwrap().normalized().unwrap();
        let kl = kl_sym_mc(&truth, &est, 2000, seed).unwrap();
        if kl.value.abs() <= 3.0 * kl.stderr + 1e-15 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/100 within three standard errors");
}

#[test]
fn sketch_distance_spread_halves_when_m_quadruples() {
    let p = gen_synthetic(2, 3, 11).unwrap().truth;
    let q = gen_synthetic(2, 3, 12).unwrap().truth;
    let spread = |m: usize| {
        let vals: Vec<f64> = (0..200u64)
            .map(|s| {
                let fs = freq_set(2, m, 1000 + s);
                let (a, b) = (sketch_gmm(&p, &fs).unwrap(), sketch_gmm(&q, &fs).unwrap());
                a.values()
                    .iter()
                    .zip(b.values())
                    .map(|(x, y)| (x - y).norm_sqr())
                    .sum::<f64>()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
    };
    let ratio = spread(50) / spread(200);
    assert!((1.0..=3.0).contains(&ratio), "spread ratio {ratio}");
}

#[test]
fn gaussian_kernel_mmd_matches_closed_form() {
    let p = GaussianParams::new(vec![0.3, -0.5, 1.0], vec![0.8, 1.5, 0.4]).unwrap();
    let q = GaussianParams::new(vec![-0.2, 0.4, 0.6], vec![1.2, 0.6, 0.9]).unwrap();
    let s2 = 0.7;
    // E_w[ψ_a(w) conj ψ_b(w)] for w ~ N(0, I/s2), per coordinate a product of Gaussians.
    let cross = |a: &GaussianParams, b: &GaussianParams| -> f64 {
        (0..3)
            .map(|l| {
                let s = a.variances()[l] + b.variances()[l];
                let delta = a.mean()[l] - b.mean()[l];
                (1.0 + s / s2).powf(-0.5) * (-0.5 * delta * delta / (s2 + s)).exp()
            })
            .product()
    };
    let exact = (cross(&p, &p) + cross(&q, &q) - 2.0 * cross(&p, &q)).sqrt();
    let (mp, mq) = (Mixture::single(p), Mixture::single(q));
    let est = mmd_mc(&mp, &mq, s2, FrequencyKind::Gaussian, 200_000, 5).unwrap();
    assert!(
        (est.value - exact).abs() <= 3.0 * est.stderr,
        "{} vs {exact} (se {})",
        est.value,
        est.stderr
    );
}
