//! 3D convolution over `[T, H, W, C]` volumes with valid padding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
}

/// Static description of one 3D convolution layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub padding: Padding,
}

impl Conv3dSpec {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Conv3dSpec {
            in_channels,
            out_channels,
            kernel: (3, 3, 3),
            stride: (1, 1, 1),
            padding: Padding::Valid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (kt, kh, kw) = self.kernel;
        let (st, sh, sw) = self.stride;
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv3d channels must be >= 1, got in={} out={}",
                self.in_channels, self.out_channels
            )));
        }
        if kt == 0 || kh == 0 || kw == 0 || st == 0 || sh == 0 || sw == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv3d kernel and stride dims must be >= 1, got kernel {:?} stride {:?}",
                self.kernel, self.stride
            )));
        }
        Ok(())
    }

    /// `[K, kt, kh, kw, Cin]`.
    pub fn weight_shape(&self) -> Vec<usize> {
        let (kt, kh, kw) = self.kernel;
        vec![self.out_channels, kt, kh, kw, self.in_channels]
    }

    /// Output dims for a `[T, H, W, Cin]` input under valid padding:
    /// `out = floor((in - k) / stride) + 1` per spatial axis.
    pub fn output_dims(&self, input_dims: &[usize; 4]) -> Result<[usize; 4]> {
        self.validate()?;
        let [t, h, w, c] = *input_dims;
        if c != self.in_channels {
            return Err(Error::DimMismatch {
                op: "conv3d",
                axis: "channel",
                expected: self.in_channels,
                got: c,
            });
        }
        let (kt, kh, kw) = self.kernel;
        let (st, sh, sw) = self.stride;
        let axis_out = |name: &'static str, input: usize, k: usize, s: usize| -> Result<usize> {
            if input < k {
                return Err(Error::KernelTooLarge {
                    op: "conv3d",
                    axis: name,
                    input,
                    kernel: k,
                });
            }
            Ok((input - k) / s + 1)
        };
        Ok([
            axis_out("time", t, kt, st)?,
            axis_out("height", h, kh, sh)?,
            axis_out("width", w, kw, sw)?,
            self.out_channels,
        ])
    }
}

fn input_dims4(input: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    if input.rank() != 4 {
        return Err(Error::InvalidConfig(format!(
            "{op} expects a rank-4 [T, H, W, C] input, got {:?}",
            input.shape()
        )));
    }
    let s = input.shape();
    Ok([s[0], s[1], s[2], s[3]])
}

/// Each output voxel is the dot product of one kernel with the input window
/// under it, plus that kernel's bias.
pub fn conv3d(
    input: &Tensor,
    spec: &Conv3dSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    let in_dims = input_dims4(input, "conv3d")?;
    if weights.shape() != spec.weight_shape().as_slice() {
        return Err(Error::InvalidConfig(format!(
            "conv3d weights must have shape {:?}, got {:?}",
            spec.weight_shape(),
            weights.shape()
        )));
    }
    if bias.rank() != 1 || bias.shape()[0] != spec.out_channels {
        return Err(Error::DimMismatch {
            op: "conv3d",
            axis: "bias",
            expected: spec.out_channels,
            got: bias.numel(),
        });
    }
    let out_dims = spec.output_dims(&in_dims)?;
    let [_t_in, h_in, w_in, c_in] = in_dims;
    let [t_out, h_out, w_out, k_out] = out_dims;
    let (kt, kh, kw) = spec.kernel;
    let (st, sh, sw) = spec.stride;
    let x = input.data();
    let wt = weights.data();
    let bd = bias.data();
    let kernel_span = kt * kh * kw * c_in;

    let mut out = vec![0.0; t_out * h_out * w_out * k_out];
    let mut o = 0;
    for ot in 0..t_out {
        let it0 = ot * st;
        for oh in 0..h_out {
            let ih0 = oh * sh;
            for ow in 0..w_out {
                let iw0 = ow * sw;
                for k in 0..k_out {
                    let wk = &wt[k * kernel_span..(k + 1) * kernel_span];
                    let mut acc = bd[k];
                    let mut wi = 0;
                    for dt in 0..kt {
                        for dh in 0..kh {
                            let row = (((it0 + dt) * h_in + ih0 + dh) * w_in + iw0) * c_in;
                            let xs = &x[row..row + kw * c_in];
                            for (&xv, &wv) in xs.iter().zip(&wk[wi..wi + kw * c_in]) {
                                acc += xv * wv;
                            }
                            wi += kw * c_in;
                        }
                    }
                    out[o] = acc;
                    o += 1;
                }
            }
        }
    }
    Tensor::new(out_dims.to_vec(), out)
}

/// Accumulate `conv3d` gradients for the input, weights, and bias.
pub fn conv3d_backward_into(
    grad_out: &Tensor,
    input: &Tensor,
    spec: &Conv3dSpec,
    weights: &Tensor,
    grad_input: &mut [f64],
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
) {
    let s = input.shape();
    let [_t_in, h_in, w_in, c_in] = [s[0], s[1], s[2], s[3]];
    let os = grad_out.shape();
    let [t_out, h_out, w_out, k_out] = [os[0], os[1], os[2], os[3]];
    let (kt, kh, kw) = spec.kernel;
    let (st, sh, sw) = spec.stride;
    let x = input.data();
    let wt = weights.data();
    let go = grad_out.data();
    let kernel_span = kt * kh * kw * c_in;

    let mut o = 0;
    for ot in 0..t_out {
        let it0 = ot * st;
        for oh in 0..h_out {
            let ih0 = oh * sh;
            for ow in 0..w_out {
                let iw0 = ow * sw;
                for k in 0..k_out {
                    let g = go[o];
                    o += 1;
                    if g == 0.0 {
                        continue;
                    }
                    grad_bias[k] += g;
                    let wk = &wt[k * kernel_span..(k + 1) * kernel_span];
                    let gwk = &mut grad_weights[k * kernel_span..(k + 1) * kernel_span];
                    let mut wi = 0;
                    for dt in 0..kt {
                        for dh in 0..kh {
                            let row = (((it0 + dt) * h_in + ih0 + dh) * w_in + iw0) * c_in;
                            for p in 0..kw * c_in {
                                gwk[wi + p] += g * x[row + p];
                                grad_input[row + p] += g * wk[wi + p];
                            }
                            wi += kw * c_in;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_identity_kernel() {
        // 4x4x4x1 ones through a single 1x1x1 kernel of value 2 -> all twos.
        let input = Tensor::full(&[4, 4, 4, 1], 1.0);
        let spec = Conv3dSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: (1, 1, 1),
            stride: (1, 1, 1),
            padding: Padding::Valid,
        };
        let w = Tensor::full(&[1, 1, 1, 1, 1], 2.0);
        let b = Tensor::zeros(&[1]);
        let out = conv3d(&input, &spec, &w, &b).unwrap();
        assert_eq!(out.shape(), &[4, 4, 4, 1]);
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn output_dims_at_full_scale() {
        // 30x128x128x3 with 8 kernels of 3x3x3, stride 1, valid.
        let spec = Conv3dSpec::new(3, 8);
        let dims = spec.output_dims(&[30, 128, 128, 3]).unwrap();
        assert_eq!(dims, [28, 126, 126, 8]);
    }

    #[test]
    fn kernel_too_large_names_axis() {
        let spec = Conv3dSpec::new(1, 1);
        let err = spec.output_dims(&[2, 8, 8, 1]).unwrap_err();
        match err {
            Error::KernelTooLarge {
                axis,
                input,
                kernel,
                ..
            } => {
                assert_eq!(axis, "time");
                assert_eq!((input, kernel), (2, 3));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let spec = Conv3dSpec::new(2, 1);
        let err = spec.output_dims(&[4, 4, 4, 3]).unwrap_err();
        match err {
            Error::DimMismatch {
                axis,
                expected,
                got,
                ..
            } => {
                assert_eq!(axis, "channel");
                assert_eq!((expected, got), (2, 3));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn strided_output_dims() {
        let mut spec = Conv3dSpec::new(1, 4);
        spec.stride = (2, 3, 1);
        let dims = spec.output_dims(&[9, 10, 5, 1]).unwrap();
        // floor((9-3)/2)+1 = 4, floor((10-3)/3)+1 = 3, floor((5-3)/1)+1 = 3
        assert_eq!(dims, [4, 3, 3, 4]);
    }
}
