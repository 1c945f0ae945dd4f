//! End-to-end checks that span several modules.

use sketchmix::eval::{gen_synthetic, kl_sym_mc};
use sketchmix::freqdesign::{design_frequencies, estim_mean_sigma, EstimParams};
use sketchmix::io;
use sketchmix::model::mixture_sample;
use sketchmix::recovery::recover;
use sketchmix::sketch::{sketch_empirical, sketch_merge};
use sketchmix::*;

#[test]
fn mean_variance_estimate_on_synthetic_mixtures() {
    for seed in 0..10u64 {
        let prob = gen_synthetic(10, 5, seed).unwrap();
        let data =
            mixture_sample(&prob.truth, 5000, &mut SeedStream::new(seed).child(1).rng()).unwrap();
        let est = estim_mean_sigma(&data, EstimParams::defaults_for(data.len()), seed).unwrap();
        assert!(
            (0.33..=3.0).contains(&est.sigma2_bar),
            "seed {seed}: {}",
            est.sigma2_bar
        );
    }
}

#[test]
fn distributed_pipeline_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let prob = gen_synthetic(2, 3, 4).unwrap();
    let data = mixture_sample(&prob.truth, 40_000, &mut SeedStream::new(4).child(1).rng()).unwrap();
    let fs = design_frequencies(
        &data,
        150,
        FrequencyKind::AdaptedRadius,
        EstimParams::defaults_for(data.len()),
        4,
    )
    .unwrap();
    io::save_frequencies(dir.path().join("f.bin"), &fs).unwrap();
    let fs = io::load_frequencies(dir.path().join("f.bin")).unwrap();

    let halves = [
        data.head(25_000),
        Dataset::new(2, data.as_slice()[50_000..].to_vec()).unwrap(),
    ];
    for (i, h) in halves.iter().enumerate() {
        io::save_sketch(
            dir.path().join(format!("s{i}.bin")),
            &sketch_empirical(h, &fs, 4096).unwrap(),
        )
        .unwrap();
    }
    let a = io::load_sketch(dir.path().join("s0.bin")).unwrap();
    let b = io::load_sketch(dir.path().join("s1.bin")).unwrap();
    let merged = sketch_merge(&a, &b).unwrap();
    let whole = sketch_empirical(&data, &fs, 4096).unwrap();
    let gap = merged
        .values()
        .iter()
        .zip(whole.values())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    assert!(gap <= 1e-12);

    let est = recover(
        &merged,
        &fs,
        &RecoveryConfig::new(3, Algorithm::ClOmpr).with_seed(4),
    )
    .unwrap();
    io::save_gmm(dir.path().join("g.json"), &est).unwrap();
    let est = io::load_gmm(dir.path().join("g.json")).unwrap();
    assert!((est.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    let kl = kl_sym_mc(&prob.truth, &est, 50_000, 4).unwrap();
    assert!(kl.value < 0.1, "kl {}", kl.value);
}
