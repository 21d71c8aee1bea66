//! Helpers shared by several integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use timecaps::model::{Activation, DeconvSpec, ModelConfig};

/// A small valid configuration drawn at random. The decoder uses stride-1
/// stages whose widths are chosen so the output length equals the signal
/// length.
pub fn random_config(seed: u64) -> ModelConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |lo: usize, hi: usize| rng.random_range(lo..=hi);
    let segment_len = r(1, 4);
    let signal_len = segment_len * r(2, 6);
    let dim = r(1, 4);
    let base_len = r(1, signal_len.min(3));
    let fc2 = base_len * r(1, 3);
    let mut deconv = [DeconvSpec::new(1, 1, 1); 5];
    let mut len = base_len;
    for stage in deconv.iter_mut().take(4) {
        let width = r(1, 3).min(signal_len - len + 1);
        *stage = DeconvSpec::new(r(1, 3), width, 1);
        len += width - 1;
    }
    deconv[4] = DeconvSpec::new(1, signal_len - len + 1, 1);
    let act = |b: usize| if b == 0 { Activation::Linear } else { Activation::Relu };
    ModelConfig {
        signal_len,
        front_channels: r(1, 4),
        front_width: r(1, 5),
        primary_width: r(1, 5),
        vote_width: r(1, 4),
        cell_b_width: r(1, 4),
        primary_channels: r(1, 3),
        primary_dim: r(1, 4),
        cell_a_channels: r(1, 3),
        cell_a_dim: dim,
        reduced_channels: r(1, 3),
        reduced_dim: r(1, 3),
        segment_len,
        cell_b_channels: r(1, 3),
        cell_b_dim: dim,
        cell_a_activation: act(r(0, 1)),
        cell_b_activation: act(r(0, 1)),
        class_dim: r(1, 4),
        num_classes: r(2, 4),
        routing_iters: r(1, 3),
        decoder_fc: [r(1, 6), fc2],
        decoder_base_len: base_len,
        decoder_deconv: deconv,
    }
}

/// Expected intermediate shapes written out from the architecture's
/// definitions, independent of the config helpers in the library.
pub struct ExpectedShapes {
    pub phi: Vec<usize>,
    pub primary_a: Vec<usize>,
    pub votes_a: Vec<usize>,
    pub omega_a: Vec<usize>,
    pub primary_b: Vec<usize>,
    pub votes_b: Vec<usize>,
    pub omega_b: Vec<usize>,
    pub omega_cc: Vec<usize>,
    pub class_votes: Vec<usize>,
    pub class_capsules: Vec<usize>,
    pub class_lengths: Vec<usize>,
    pub reconstruction: Vec<usize>,
}

pub fn expected_shapes(c: &ModelConfig) -> ExpectedShapes {
    let l = c.signal_len;
    let segs = l / c.segment_len;
    let n = l * c.cell_a_channels + segs * c.cell_b_channels;
    ExpectedShapes {
        phi: vec![l, c.front_channels],
        primary_a: vec![l, c.primary_channels, c.primary_dim],
        votes_a: vec![l, c.cell_a_channels, c.primary_channels, c.cell_a_dim],
        omega_a: vec![l * c.cell_a_channels, c.cell_a_dim],
        primary_b: vec![segs, c.segment_len, c.reduced_channels * c.reduced_dim],
        votes_b: vec![segs, c.cell_b_channels, c.segment_len, c.cell_b_dim],
        omega_b: vec![segs * c.cell_b_channels, c.cell_b_dim],
        omega_cc: vec![n, c.cell_a_dim],
        class_votes: vec![1, c.num_classes, n, c.class_dim],
        class_capsules: vec![c.num_classes, c.class_dim],
        class_lengths: vec![c.num_classes],
        reconstruction: vec![l],
    }
}
