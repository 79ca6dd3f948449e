use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LayerKind {
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    /// Input and output are laid out channel-major, `[C, H, W]`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Clamped, grid-snapped ReLU; needs a quantization config at run time.
    ReluQ,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub activation: Activation,
    #[serde(default)]
    pub use_bias: bool,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::FullyConnected { inputs, outputs },
            activation,
            use_bias: false,
        }
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding: 0,
            },
            activation,
            use_bias: false,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.use_bias = true;
        self
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::FullyConnected { inputs, outputs } => vec![outputs, inputs],
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![out_channels, in_channels, kernel, kernel],
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::FullyConnected { inputs, .. } => inputs,
            LayerKind::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            LayerKind::FullyConnected { outputs, .. } => outputs,
            LayerKind::Conv2d { out_channels, .. } => out_channels,
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self.kind {
            LayerKind::FullyConnected { inputs, outputs } => {
                let n: usize = input.iter().product();
                if n != inputs {
                    return Err(Error::config(format!(
                        "dense layer expects {inputs} inputs, previous shape {input:?} has {n}"
                    )));
                }
                Ok(vec![outputs])
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = input else {
                    return Err(Error::config(format!(
                        "conv layer expects a [C, H, W] input, got {input:?}"
                    )));
                };
                if *c != in_channels {
                    return Err(Error::config(format!(
                        "conv layer expects {in_channels} channels, got {c}"
                    )));
                }
                if stride == 0 || kernel == 0 {
                    return Err(Error::config("conv kernel and stride must be >= 1"));
                }
                let (hp, wp) = (h + 2 * padding, w + 2 * padding);
                if hp < kernel || wp < kernel {
                    return Err(Error::config(format!(
                        "conv kernel {kernel} larger than padded input {hp}x{wp}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    (hp - kernel) / stride + 1,
                    (wp - kernel) / stride + 1,
                ])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Bias-free multilayer perceptron, e.g. `[4, 256, 256, 2]`.
    pub fn mlp(sizes: &[usize], hidden: Activation) -> Self {
        let n = sizes.len().saturating_sub(1);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { Activation::Identity } else { hidden };
                LayerSpec::dense(w[0], w[1], act)
            })
            .collect();
        NetworkSpec {
            input_shape: vec![sizes.first().copied().unwrap_or(0)],
            layers,
        }
    }

    /// Stride/kernel conv stack followed by dense layers; the last layer is `Identity`.
    ///
    /// `convs` holds `(out_channels, kernel, stride)`; `dense` holds hidden
    /// widths followed by the action count.
    pub fn conv_net(
        input_shape: [usize; 3],
        convs: &[(usize, usize, usize)],
        dense: &[usize],
        hidden: Activation,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut shape = input_shape.to_vec();
        for &(out, k, s) in convs {
            let l = LayerSpec::conv(shape[0], out, k, s, hidden);
            shape = l.output_shape(&shape)?;
            layers.push(l);
        }
        let mut width: usize = shape.iter().product();
        for (i, &d) in dense.iter().enumerate() {
            let act = if i + 1 == dense.len() {
                Activation::Identity
            } else {
                hidden
            };
            layers.push(LayerSpec::dense(width, d, act));
            width = d;
        }
        let spec = NetworkSpec {
            input_shape: input_shape.to_vec(),
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Shape entering each layer followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes()?;
        if self.layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::config("final layer activation must be identity"));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map(|l| l.out_channels()).unwrap_or(0)
    }

    pub fn is_bias_free(&self) -> bool {
        self.layers.iter().all(|l| !l.use_bias)
    }

    /// Same architecture with every hidden activation replaced.
    pub fn with_hidden_activation(&self, act: Activation) -> Self {
        let mut spec = self.clone();
        let n = spec.layers.len();
        for l in &mut spec.layers[..n.saturating_sub(1)] {
            l.activation = act;
        }
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_arithmetic() {
        let l = LayerSpec::conv(3, 16, 7, 2, Activation::Relu);
        assert_eq!(l.output_shape(&[3, 84, 84]).unwrap(), vec![16, 39, 39]);
        let l = LayerSpec::conv(16, 32, 5, 2, Activation::Relu);
        assert_eq!(l.output_shape(&[16, 39, 39]).unwrap(), vec![32, 18, 18]);
        for h in 5..40 {
            for k in 1..5 {
                for s in 1..4 {
                    let l = LayerSpec::conv(1, 1, k, s, Activation::Relu);
                    let out = l.output_shape(&[1, h, h]).unwrap();
                    assert_eq!(out[1], (h - k) / s + 1);
                }
            }
        }
    }

    #[test]
    fn full_vision_stack_shapes() {
        let spec = NetworkSpec::conv_net(
            [3, 84, 84],
            &[(16, 7, 2), (32, 5, 2), (64, 5, 1), (64, 3, 1)],
            &[256, 256, 7],
            Activation::ReluQ,
        )
        .unwrap();
        let shapes = spec.shapes().unwrap();
        assert_eq!(shapes[4], vec![64, 12, 12]);
        assert_eq!(shapes.last().unwrap(), &vec![7]);
    }

    #[test]
    fn mismatched_layers_rejected() {
        let spec = NetworkSpec {
            input_shape: vec![4],
            layers: vec![
                LayerSpec::dense(4, 8, Activation::Relu),
                LayerSpec::dense(9, 2, Activation::Identity),
            ],
        };
        assert!(spec.validate().is_err());
        let spec = NetworkSpec::mlp(&[4, 8, 2], Activation::Relu);
        assert!(spec.validate().is_ok());
        let mut bad = spec.clone();
        bad.layers[1].activation = Activation::Relu;
        assert!(bad.validate().is_err());
    }
}
