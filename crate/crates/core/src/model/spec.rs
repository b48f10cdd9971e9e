use alloc::string::String;
use alloc::vec::Vec;

use crate::conv::{conv_output_size, validate_exact_upsampling};
use crate::error::{Error, Result};

/// Architecture of the multi-scale generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeneratorSpec {
    /// Number of pyramid levels `K`.
    pub scales: usize,
    pub resblocks_per_scale: usize,
    pub feature_channels: usize,
    pub filter_size: usize,
    pub image_channels: usize,
    pub upconv_kernel: usize,
    pub upconv_stride: usize,
    pub upconv_padding: usize,
    /// Adds each stage's blurry input to its output, so the convolutions
    /// predict a correction rather than the whole image.
    pub input_skip: bool,
}

impl GeneratorSpec {
    /// 3 scales, 19 ResBlocks of 64 channels, 5x5 filters.
    pub const fn full() -> Self {
        GeneratorSpec {
            scales: 3,
            resblocks_per_scale: 19,
            feature_channels: 64,
            filter_size: 5,
            image_channels: 3,
            upconv_kernel: 4,
            upconv_stride: 2,
            upconv_padding: 1,
            input_skip: false,
        }
    }

    /// Small enough for CPU gradient checks and overfitting runs.
    pub const fn desk() -> Self {
        GeneratorSpec {
            scales: 3,
            resblocks_per_scale: 2,
            feature_channels: 16,
            filter_size: 5,
            image_channels: 3,
            upconv_kernel: 4,
            upconv_stride: 2,
            upconv_padding: 1,
            input_skip: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.feature_channels == 0 || self.image_channels == 0 {
            return Err(Error::InvalidConfig("generator counts must be positive".into()));
        }
        if self.filter_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(alloc::format!(
                "filter size {} is even; stride-1 convolutions cannot preserve size",
                self.filter_size
            )));
        }
        if self.upconv_stride != 2 {
            return Err(Error::InvalidConfig(alloc::format!(
                "consecutive pyramid levels differ by 2x, so the upconvolution stride must be 2 (got {})",
                self.upconv_stride
            )));
        }
        validate_exact_upsampling(self.upconv_kernel, self.upconv_stride, self.upconv_padding)
    }

    pub fn padding(&self) -> usize {
        (self.filter_size - 1) / 2
    }

    /// Head + two per ResBlock + tail.
    pub fn convs_per_scale(&self) -> usize {
        2 * self.resblocks_per_scale + 2
    }

    pub fn total_convs(&self) -> usize {
        self.scales * self.convs_per_scale()
    }

    pub fn upconvs(&self) -> usize {
        self.scales - 1
    }

    /// Receptive field of one stage: a stack of stride-1 convolutions.
    pub fn receptive_field(&self) -> usize {
        receptive_field(self.convs_per_scale(), self.filter_size)
    }

    /// Input channels of stage `level` (0 = finest).
    pub fn stage_in_channels(&self, level: usize) -> usize {
        if level + 1 < self.scales {
            self.image_channels + self.feature_channels
        } else {
            self.image_channels
        }
    }

    /// Every layer in execution order; used for audits.
    pub fn layer_inventory(&self) -> Vec<LayerInfo> {
        let mut out = Vec::new();
        for level in (0..self.scales).rev() {
            let conv = |name: String, cin, cout| LayerInfo {
                name,
                kind: LayerKind::Conv,
                in_channels: cin,
                out_channels: cout,
                kernel: self.filter_size,
                stride: 1,
            };
            if level + 1 < self.scales {
                out.push(LayerInfo {
                    name: alloc::format!("s{}.concat", level + 1),
                    kind: LayerKind::Concat,
                    in_channels: self.image_channels + self.feature_channels,
                    out_channels: self.image_channels + self.feature_channels,
                    kernel: 0,
                    stride: 0,
                });
            }
            out.push(conv(
                alloc::format!("s{}.head", level + 1),
                self.stage_in_channels(level),
                self.feature_channels,
            ));
            for b in 0..self.resblocks_per_scale {
                let f = self.feature_channels;
                out.push(conv(alloc::format!("s{}.block{b}.conv1", level + 1), f, f));
                out.push(LayerInfo {
                    name: alloc::format!("s{}.block{b}.relu", level + 1),
                    kind: LayerKind::Relu,
                    in_channels: f,
                    out_channels: f,
                    kernel: 0,
                    stride: 0,
                });
                out.push(conv(alloc::format!("s{}.block{b}.conv2", level + 1), f, f));
                out.push(LayerInfo {
                    name: alloc::format!("s{}.block{b}.shortcut", level + 1),
                    kind: LayerKind::Add,
                    in_channels: f,
                    out_channels: f,
                    kernel: 0,
                    stride: 0,
                });
            }
            out.push(conv(
                alloc::format!("s{}.tail", level + 1),
                self.feature_channels,
                self.image_channels,
            ));
            if level > 0 {
                out.push(LayerInfo {
                    name: alloc::format!("s{}.up", level + 1),
                    kind: LayerKind::UpConv,
                    in_channels: self.feature_channels,
                    out_channels: self.feature_channels,
                    kernel: self.upconv_kernel,
                    stride: self.upconv_stride,
                });
            }
        }
        out
    }
}

/// `1 + layers * (filter - 1)` for a stack of stride-1 convolutions.
pub fn receptive_field(layers: usize, filter_size: usize) -> usize {
    1 + layers * (filter_size - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    UpConv,
    Relu,
    LeakyRelu,
    Add,
    Concat,
    FullyConnected,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// One strided convolution of the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiscConv {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Convolution stack, then a fully-connected layer whose outputs are
/// averaged to one logit and squashed by a sigmoid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiscriminatorSpec {
    pub input_size: usize,
    pub in_channels: usize,
    pub convs: Vec<DiscConv>,
    pub fc_out: usize,
    pub leaky_slope: f64,
}

impl DiscriminatorSpec {
    /// The 10-convolution, 1024-wide layout for 256x256 inputs.
    pub fn full() -> Self {
        let rows: [(usize, usize); 10] = [
            (32, 2),
            (64, 1),
            (64, 2),
            (128, 1),
            (128, 2),
            (256, 1),
            (256, 4),
            (512, 1),
            (512, 4),
            (1024, 2),
        ];
        DiscriminatorSpec {
            input_size: 256,
            in_channels: 3,
            convs: rows
                .iter()
                .map(|&(out_channels, stride)| DiscConv {
                    out_channels,
                    kernel: 5,
                    stride,
                })
                .collect(),
            fc_out: 1024,
            leaky_slope: crate::activation::DEFAULT_LEAKY_SLOPE,
        }
    }

    /// Six convolutions (strides 2,1,2,1,4,4) of 8..32 channels.
    pub fn desk(input_size: usize) -> Self {
        let rows: [(usize, usize); 6] = [(8, 2), (8, 1), (16, 2), (16, 1), (32, 4), (32, 4)];
        DiscriminatorSpec {
            input_size,
            in_channels: 3,
            convs: rows
                .iter()
                .map(|&(out_channels, stride)| DiscConv {
                    out_channels,
                    kernel: 5,
                    stride,
                })
                .collect(),
            fc_out: 32,
            leaky_slope: crate::activation::DEFAULT_LEAKY_SLOPE,
        }
    }

    /// `(channels, height, width)` after every convolution, for a square
    /// input of `input_size`.
    pub fn trace(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut size = self.input_size;
        let mut out = Vec::with_capacity(self.convs.len());
        for (i, c) in self.convs.iter().enumerate() {
            if c.kernel % 2 == 0 || c.stride == 0 || c.out_channels == 0 {
                return Err(Error::InvalidConfig(alloc::format!("discriminator conv {i} is malformed")));
            }
            size = conv_output_size(size, c.kernel, c.stride, (c.kernel - 1) / 2).ok_or_else(|| {
                Error::InvalidConfig(alloc::format!("input {} vanishes at discriminator conv {i}", self.input_size))
            })?;
            out.push((c.out_channels, size, size));
        }
        Ok(out)
    }

    /// Width of the flattened feature entering the fully-connected layer.
    pub fn flat_features(&self) -> Result<usize> {
        let trace = self.trace()?;
        let (c, h, w) = trace.last().copied().unwrap_or((self.in_channels, self.input_size, self.input_size));
        Ok(c * h * w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fc_out == 0 || self.in_channels == 0 || self.input_size == 0 {
            return Err(Error::InvalidConfig("discriminator sizes must be positive".into()));
        }
        self.flat_features().map(|_| ())
    }

    pub fn layer_inventory(&self) -> Vec<LayerInfo> {
        let mut out = Vec::new();
        let mut cin = self.in_channels;
        for (i, c) in self.convs.iter().enumerate() {
            out.push(LayerInfo {
                name: alloc::format!("conv{}", i + 1),
                kind: LayerKind::Conv,
                in_channels: cin,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
            });
            out.push(LayerInfo {
                name: alloc::format!("conv{}.act", i + 1),
                kind: LayerKind::LeakyRelu,
                in_channels: c.out_channels,
                out_channels: c.out_channels,
                kernel: 0,
                stride: 0,
            });
            cin = c.out_channels;
        }
        let flat = self.flat_features().unwrap_or(0);
        out.push(LayerInfo {
            name: "fc".into(),
            kind: LayerKind::FullyConnected,
            in_channels: flat,
            out_channels: self.fc_out,
            kernel: 1,
            stride: 1,
        });
        out.push(LayerInfo {
            name: "sigmoid".into(),
            kind: LayerKind::Sigmoid,
            in_channels: 1,
            out_channels: 1,
            kernel: 0,
            stride: 0,
        });
        out
    }
}
