//! Shared fixtures for the benchmarks.

use sketchmix::eval::gen_synthetic;
use sketchmix::freqdesign::draw_freq;
use sketchmix::model::mixture_sample;
use sketchmix::sketch::sketch_gmm;
use sketchmix::{Dataset, FrequencyKind, FrequencySet, Mixture, SeedStream, Sketch};

/// A synthetic problem with frequencies matched to the true mean variance.
pub struct Fixture {
    pub truth: Mixture,
    pub data: Dataset,
    pub freqs: FrequencySet,
}

impl Fixture {
    /// `n` samples of a random `K`-component GMM in dimension `d`, with `m`
    /// adapted-radius frequencies.
    pub fn new(d: usize, k: usize, n: usize, m: usize, seed: u64) -> Self {
        let truth = gen_synthetic(d, k, seed).expect("valid problem size").truth;
        let stream = SeedStream::new(seed);
        let data =
            mixture_sample(&truth, n, &mut stream.child(1).rng()).expect("sampling succeeds");
        let sigma2 = truth.mean_variance();
        let freqs = draw_freq(
            &[vec![sigma2; d]],
            &[1.0],
            m,
            FrequencyKind::AdaptedRadius,
            stream.child(2).seed(),
        )
        .expect("frequency draw succeeds");
        Fixture { truth, data, freqs }
    }

    /// Noise-free sketch of the true mixture.
    pub fn exact_sketch(&self) -> Sketch {
        sketch_gmm(&self.truth, &self.freqs).expect("normalized truth")
    }
}
