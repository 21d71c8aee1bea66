use serde::{Deserialize, Serialize};

use crate::capsule::DEFAULT_ROUTING_ITERS;
use crate::error::{config_err, Result};
use crate::tensor::{Graph, Var};
use crate::Scalar;

/// One transposed-convolution stage of the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeconvSpec {
    pub channels: usize,
    pub width: usize,
    pub stride: usize,
}

impl DeconvSpec {
    pub const fn new(channels: usize, width: usize, stride: usize) -> Self {
        Self { channels, width, stride }
    }
}

/// Pointwise nonlinearity applied to a cell's convolution output before
/// its primary capsules are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Linear,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Relu => g.relu(x),
        }
    }
}

/// Every architectural extent of the network.
///
/// Cell A turns each time step into `primary_channels` capsules of
/// `primary_dim` and routes them into `cell_a_channels` capsules of
/// `cell_a_dim`. Cell B cuts the signal into `segment_len`-sample segments
/// of `reduced_channels × reduced_dim` features and routes over the
/// positions inside a segment into `cell_b_channels` capsules of
/// `cell_b_dim`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Samples per input signal.
    pub signal_len: usize,
    /// Kernels of the shared front convolution.
    pub front_channels: usize,
    pub front_width: usize,
    /// Width of Cell A's primary convolution.
    pub primary_width: usize,
    /// Temporal extent of the vote kernels in both cells.
    pub vote_width: usize,
    /// Width of Cell B's convolution after the 1×1 reduction.
    pub cell_b_width: usize,
    pub primary_channels: usize,
    pub primary_dim: usize,
    pub cell_a_channels: usize,
    pub cell_a_dim: usize,
    pub reduced_channels: usize,
    pub reduced_dim: usize,
    pub segment_len: usize,
    pub cell_b_channels: usize,
    pub cell_b_dim: usize,
    pub cell_a_activation: Activation,
    pub cell_b_activation: Activation,
    pub class_dim: usize,
    pub num_classes: usize,
    pub routing_iters: usize,
    pub decoder_fc: [usize; 2],
    /// Length of the sequence the second dense layer is folded into before
    /// the first transposed convolution.
    pub decoder_base_len: usize,
    pub decoder_deconv: [DeconvSpec; 5],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Desk-scale architecture for 64-sample signals and three classes.
    pub fn toy() -> Self {
        Self {
            signal_len: 64,
            front_channels: 16,
            front_width: 9,
            primary_width: 9,
            vote_width: 5,
            cell_b_width: 3,
            primary_channels: 4,
            primary_dim: 8,
            cell_a_channels: 1,
            cell_a_dim: 16,
            reduced_channels: 2,
            reduced_dim: 8,
            segment_len: 8,
            cell_b_channels: 4,
            cell_b_dim: 16,
            cell_a_activation: Activation::Linear,
            cell_b_activation: Activation::Relu,
            class_dim: 16,
            num_classes: 3,
            routing_iters: DEFAULT_ROUTING_ITERS,
            decoder_fc: [128, 256],
            decoder_base_len: 4,
            decoder_deconv: [
                DeconvSpec::new(32, 2, 2),
                DeconvSpec::new(16, 2, 2),
                DeconvSpec::new(8, 2, 2),
                DeconvSpec::new(8, 2, 2),
                DeconvSpec::new(1, 1, 1),
            ],
        }
    }

    /// The toy layout widened to 360-sample heartbeat windows.
    pub fn beats(num_classes: usize) -> Self {
        Self {
            signal_len: 360,
            num_classes,
            decoder_fc: [128, 264],
            decoder_base_len: 22,
            decoder_deconv: [
                DeconvSpec::new(32, 2, 2),
                DeconvSpec::new(16, 2, 2),
                DeconvSpec::new(8, 2, 2),
                DeconvSpec::new(8, 2, 2),
                DeconvSpec::new(1, 9, 1),
            ],
            ..Self::toy()
        }
    }

    /// Very small network on 32-sample signals, sized for exhaustive
    /// finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            signal_len: 32,
            front_channels: 4,
            front_width: 5,
            primary_width: 5,
            vote_width: 3,
            cell_b_width: 3,
            primary_channels: 2,
            primary_dim: 4,
            cell_a_channels: 2,
            cell_a_dim: 4,
            reduced_channels: 2,
            reduced_dim: 2,
            segment_len: 4,
            cell_b_channels: 2,
            cell_b_dim: 4,
            cell_a_activation: Activation::Linear,
            cell_b_activation: Activation::Relu,
            class_dim: 4,
            num_classes: 3,
            routing_iters: DEFAULT_ROUTING_ITERS,
            decoder_fc: [16, 32],
            decoder_base_len: 4,
            decoder_deconv: [
                DeconvSpec::new(4, 2, 2),
                DeconvSpec::new(4, 2, 2),
                DeconvSpec::new(2, 2, 2),
                DeconvSpec::new(2, 1, 1),
                DeconvSpec::new(1, 1, 1),
            ],
        }
    }

    pub fn primary_features(&self) -> usize {
        self.primary_channels * self.primary_dim
    }

    pub fn reduced_features(&self) -> usize {
        self.reduced_channels * self.reduced_dim
    }

    pub fn segments(&self) -> usize {
        self.signal_len / self.segment_len
    }

    /// Capsule dimension shared by both cells.
    pub fn capsule_dim(&self) -> usize {
        self.cell_a_dim
    }

    /// Rows of the concatenated capsule matrix.
    pub fn concat_rows(&self) -> usize {
        self.signal_len * self.cell_a_channels + self.segments() * self.cell_b_channels
    }

    /// Channels of the folded decoder sequence entering the first
    /// transposed convolution.
    pub fn decoder_base_channels(&self) -> usize {
        self.decoder_fc[1] / self.decoder_base_len
    }

    /// Sequence length after each decoder stage.
    pub fn decoder_lengths(&self) -> [usize; 5] {
        let mut len = self.decoder_base_len;
        self.decoder_deconv.map(|d| {
            len = d.stride * (len - 1) + d.width;
            len
        })
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("signal_len", self.signal_len),
            ("front_channels", self.front_channels),
            ("front_width", self.front_width),
            ("primary_width", self.primary_width),
            ("vote_width", self.vote_width),
            ("cell_b_width", self.cell_b_width),
            ("primary_channels", self.primary_channels),
            ("primary_dim", self.primary_dim),
            ("cell_a_channels", self.cell_a_channels),
            ("cell_a_dim", self.cell_a_dim),
            ("reduced_channels", self.reduced_channels),
            ("reduced_dim", self.reduced_dim),
            ("segment_len", self.segment_len),
            ("cell_b_channels", self.cell_b_channels),
            ("cell_b_dim", self.cell_b_dim),
            ("class_dim", self.class_dim),
            ("num_classes", self.num_classes),
            ("routing_iters", self.routing_iters),
            ("decoder_fc[0]", self.decoder_fc[0]),
            ("decoder_fc[1]", self.decoder_fc[1]),
            ("decoder_base_len", self.decoder_base_len),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(config_err!("{name} must be positive"));
        }
        if self.decoder_deconv.iter().any(|d| d.channels == 0 || d.width == 0 || d.stride == 0) {
            return Err(config_err!("decoder stages need positive channels, width and stride"));
        }
        if !self.signal_len.is_multiple_of(self.segment_len) {
            return Err(config_err!(
                "signal length {} is not a multiple of the segment length {}",
                self.signal_len,
                self.segment_len
            ));
        }
        if self.cell_a_dim != self.cell_b_dim {
            return Err(config_err!(
                "both cells must emit capsules of one dimension, got {} and {}",
                self.cell_a_dim,
                self.cell_b_dim
            ));
        }
        if !self.decoder_fc[1].is_multiple_of(self.decoder_base_len) {
            return Err(config_err!(
                "decoder width {} cannot be folded into length {}",
                self.decoder_fc[1],
                self.decoder_base_len
            ));
        }
        let out_len = self.decoder_lengths()[4];
        if out_len != self.signal_len {
            return Err(config_err!("decoder produces {out_len} samples but signals have {}", self.signal_len));
        }
        if self.decoder_deconv[4].channels != 1 {
            return Err(config_err!("the last decoder stage must emit one channel"));
        }
        Ok(())
    }
}
