use super::{LayerSpec, Network, NnError};

/// Per-sample shape of a half MNIST digit: one channel, 28 rows, 14 columns.
pub const CONV_ENCODER_INPUT: [usize; 3] = [1, 28, 14];

/// `Linear(in, hidden) [→ LN] → ReLU → Linear(hidden, hidden) [→ LN] → ReLU → Linear(hidden, out)`.
pub fn build_mlp_encoder(
    input: usize,
    hidden: usize,
    output: usize,
    with_ln: bool,
) -> Result<Network, NnError> {
    let mut specs = vec![LayerSpec::Linear {
        input,
        output: hidden,
    }];
    if with_ln {
        specs.push(LayerSpec::LayerNorm { dim: hidden });
    }
    specs.push(LayerSpec::Relu);
    specs.push(LayerSpec::Linear {
        input: hidden,
        output: hidden,
    });
    if with_ln {
        specs.push(LayerSpec::LayerNorm { dim: hidden });
    }
    specs.push(LayerSpec::Relu);
    specs.push(LayerSpec::Linear {
        input: hidden,
        output,
    });
    Network::new(vec![input], specs)
}

/// `Linear(dim, hidden) [→ LN] → ReLU → Linear(hidden, dim)`.
pub fn build_predictor(dim: usize, hidden: usize, with_ln: bool) -> Result<Network, NnError> {
    let mut specs = vec![LayerSpec::Linear {
        input: dim,
        output: hidden,
    }];
    if with_ln {
        specs.push(LayerSpec::LayerNorm { dim: hidden });
    }
    specs.push(LayerSpec::Relu);
    specs.push(LayerSpec::Linear {
        input: hidden,
        output: dim,
    });
    Network::new(vec![dim], specs)
}

/// Convolutional encoder for `[B, 1, 28, 14]` half digits.
///
/// Two stride-2 conv blocks (32 then 64 channels, batch norm, ReLU) take
/// the image to `64×7×4 = 1792` features, followed by
/// `Linear(1792, 128) → LN → ReLU → Linear(128, 64)`.
pub fn build_conv_encoder() -> Result<Network, NnError> {
    let conv = |in_channels, out_channels| LayerSpec::Conv2d {
        in_channels,
        out_channels,
        kernel: 3,
        stride: 2,
        padding: 1,
    };
    Network::new(
        CONV_ENCODER_INPUT.to_vec(),
        vec![
            conv(1, 32),
            LayerSpec::BatchNorm2d { channels: 32 },
            LayerSpec::Relu,
            conv(32, 64),
            LayerSpec::BatchNorm2d { channels: 64 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Linear {
                input: 1792,
                output: 128,
            },
            LayerSpec::LayerNorm { dim: 128 },
            LayerSpec::Relu,
            LayerSpec::Linear {
                input: 128,
                output: 64,
            },
        ],
    )
}

/// Single affine map.
pub fn build_linear(input: usize, output: usize) -> Result<Network, NnError> {
    Network::new(vec![input], vec![LayerSpec::Linear { input, output }])
}

/// Plain ReLU MLP through the given widths, e.g. `[64, 256, 392]`.
pub fn build_mlp(widths: &[usize]) -> Result<Network, NnError> {
    let mut specs = Vec::new();
    for (i, pair) in widths.windows(2).enumerate() {
        if i > 0 {
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::Linear {
            input: pair[0],
            output: pair[1],
        });
    }
    Network::new(vec![widths[0]], specs)
}
