//! Convolution primitives: patch extraction for strided 2-D convolution,
//! depthwise and pointwise 1-D convolutions.

use std::sync::Arc;

use super::{BackwardFn, GradSink, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::parallel;

impl<T: Scalar> Tensor<T> {
    /// Extract unpadded `kernel x kernel` patches with the given stride from a
    /// feature map stored as `[h, w*channels]` (channel-minor). Output rows
    /// enumerate `(out_y, out_x)` positions; each row is the flattened patch
    /// in `(ky, kx, channel)` order, ready for a matmul with a
    /// `[kernel*kernel*channels, out_channels]` weight.
    ///
    /// Output heights follow `h_out = (h - kernel)/stride + 1` (floor), which
    /// for kernel 3 / stride 2 equals `floor((h - 1) / 2)`.
    pub fn unfold2d(&self, channels: usize, kernel: usize, stride: usize) -> Result<Tensor<T>> {
        let (h, wc) = match self.shape() {
            [h, wc] => (*h, *wc),
            s => return Err(Error::Shape(format!("unfold2d requires rank 2, got {s:?}"))),
        };
        if channels == 0 || wc % channels != 0 {
            return Err(Error::Shape(format!(
                "unfold2d: row width {wc} is not a multiple of {channels} channels"
            )));
        }
        let w = wc / channels;
        if h < kernel || w < kernel {
            return Err(Error::Input(format!(
                "unfold2d: input {h}x{w} smaller than kernel {kernel}"
            )));
        }
        let h_out = (h - kernel) / stride + 1;
        let w_out = (w - kernel) / stride + 1;
        let patch = kernel * kernel * channels;
        let x = self.data();
        let out = Arc::new(parallel::fill(h_out * w_out * patch, |idx| {
            let row = idx / patch;
            let col = idx % patch;
            let oy = row / w_out;
            let ox = row % w_out;
            let ky = col / (kernel * channels);
            let kx = (col / channels) % kernel;
            let c = col % channels;
            let iy = oy * stride + ky;
            let ix = ox * stride + kx;
            x[iy * wc + ix * channels + c]
        }));
        let rg = self.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let id = self.id();
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                sink.add(id, |buf| {
                    for row in 0..h_out * w_out {
                        let oy = row / w_out;
                        let ox = row % w_out;
                        for col in 0..patch {
                            let ky = col / (kernel * channels);
                            let kx = (col / channels) % kernel;
                            let c = col % channels;
                            let iy = oy * stride + ky;
                            let ix = ox * stride + kx;
                            buf[iy * wc + ix * channels + c] += g[row * patch + col];
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self
            .tape()
            .push(out, vec![h_out * w_out, patch], rg, None, back))
    }

    /// Per-channel 1-D convolution along the first axis with same-padding.
    /// `self` is `[len, channels]`, `weight` is `[channels, kernel]` (kernel
    /// odd), `bias` is `[channels]`.
    pub fn depthwise_conv1d(&self, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        self.expect_same_tape(weight)?;
        self.expect_same_tape(bias)?;
        let (len, ch) = match self.shape() {
            [l, c] => (*l, *c),
            s => {
                return Err(Error::Shape(format!(
                    "depthwise_conv1d requires rank 2, got {s:?}"
                )))
            }
        };
        let (wc, k) = match weight.shape() {
            [c, k] => (*c, *k),
            s => {
                return Err(Error::Shape(format!(
                    "depthwise_conv1d weight must be [channels, kernel], got {s:?}"
                )))
            }
        };
        if wc != ch || bias.shape() != [ch] {
            return Err(Error::Shape(format!(
                "depthwise_conv1d: input {:?}, weight {:?}, bias {:?} disagree",
                self.shape(),
                weight.shape(),
                bias.shape()
            )));
        }
        if k % 2 == 0 {
            return Err(Error::Config(format!(
                "depthwise_conv1d kernel must be odd, got {k}"
            )));
        }
        let pad = (k - 1) / 2;
        let x = self.data();
        let w = weight.data();
        let b = bias.data();
        let out = Arc::new(parallel::fill(len * ch, |idx| {
            let t = idx / ch;
            let c = idx % ch;
            let mut s = b[c];
            for kk in 0..k {
                let src = t as isize + kk as isize - pad as isize;
                if src >= 0 && (src as usize) < len {
                    s += x[src as usize * ch + c] * w[c * k + kk];
                }
            }
            s
        }));
        let rg = self.requires_grad() || weight.requires_grad() || bias.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let (ix, rx, xd) = (self.id(), self.requires_grad(), self.data_arc());
            let (iw, rw, wd) = (weight.id(), weight.requires_grad(), weight.data_arc());
            let (ib, rb) = (bias.id(), bias.requires_grad());
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                if rx {
                    sink.add(ix, |buf| {
                        // gather form: dx[s,c] = sum_k g[s - k + pad, c] w[c,k]
                        for s in 0..len {
                            for c in 0..ch {
                                let mut acc = T::zero();
                                for kk in 0..k {
                                    let t = s as isize - kk as isize + pad as isize;
                                    if t >= 0 && (t as usize) < len {
                                        acc += g[t as usize * ch + c] * wd[c * k + kk];
                                    }
                                }
                                buf[s * ch + c] += acc;
                            }
                        }
                    });
                }
                if rw {
                    sink.add(iw, |buf| {
                        for c in 0..ch {
                            for kk in 0..k {
                                let mut acc = T::zero();
                                for t in 0..len {
                                    let src = t as isize + kk as isize - pad as isize;
                                    if src >= 0 && (src as usize) < len {
                                        acc += g[t * ch + c] * xd[src as usize * ch + c];
                                    }
                                }
                                buf[c * k + kk] += acc;
                            }
                        }
                    });
                }
                if rb {
                    sink.add(ib, |buf| {
                        for t in 0..len {
                            for c in 0..ch {
                                buf[c] += g[t * ch + c];
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, vec![len, ch], rg, None, back))
    }

    /// 1x1 convolution over channels: `[len, c_in] -> [len, c_out]`. This is
    /// exactly an affine map applied per frame.
    pub fn pointwise_conv1d(&self, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        self.linear(weight, bias)
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::Tape;
    use approx::assert_relative_eq;

    #[test]
    fn unfold_shapes_follow_stride_arithmetic() {
        let tape: Tape<f64> = Tape::new();
        // 7x5 single-channel map
        let x = tape.tensor((0..35).map(|v| v as f64).collect(), &[7, 5], false).unwrap();
        let u = x.unfold2d(1, 3, 2).unwrap();
        // h_out = (7-3)/2+1 = 3, w_out = (5-3)/2+1 = 2
        assert_eq!(u.shape(), &[6, 9]);
    }

    #[test]
    fn unfold_first_patch_is_top_left_window() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor((0..25).map(|v| v as f64).collect(), &[5, 5], false).unwrap();
        let u = x.unfold2d(1, 3, 2).unwrap();
        assert_eq!(
            &u.to_vec()[0..9],
            &[0.0, 1.0, 2.0, 5.0, 6.0, 7.0, 10.0, 11.0, 12.0]
        );
    }

    #[test]
    fn unfold_gradient_counts_patch_memberships() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![1.0; 25], &[5, 5], true).unwrap();
        let u = x.unfold2d(1, 3, 2).unwrap();
        u.sum_all().backward().unwrap();
        let g = x.grad().unwrap();
        // corner element belongs to exactly one patch; center (2,2) to four
        assert_eq!(g[0], 1.0);
        assert_eq!(g[2 * 5 + 2], 4.0);
    }

    #[test]
    fn depthwise_identity_kernel_passes_through() {
        let tape: Tape<f64> = Tape::new();
        let x = tape
            .tensor(vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0], &[3, 2], false)
            .unwrap();
        // kernel [0,1,0] per channel = identity
        let w = tape
            .tensor(vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0], &[2, 3], false)
            .unwrap();
        let b = tape.tensor(vec![0.0, 0.0], &[2], false).unwrap();
        let y = x.depthwise_conv1d(&w, &b).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn depthwise_matches_hand_convolution() {
        let tape: Tape<f64> = Tape::new();
        // one channel, x = [1,2,3], kernel [a,b,c] = [0.5, 1.0, -1.0]
        let x = tape.tensor(vec![1.0, 2.0, 3.0], &[3, 1], false).unwrap();
        let w = tape.tensor(vec![0.5, 1.0, -1.0], &[1, 3], false).unwrap();
        let b = tape.tensor(vec![0.25], &[1], false).unwrap();
        let y = x.depthwise_conv1d(&w, &b).unwrap().to_vec();
        // y[t] = 0.5*x[t-1] + 1.0*x[t] - 1.0*x[t+1] + 0.25 with zero padding
        assert_relative_eq!(y[0], 0.5 * 0.0 + 1.0 - 2.0 + 0.25);
        assert_relative_eq!(y[1], 0.5 * 1.0 + 2.0 - 3.0 + 0.25);
        assert_relative_eq!(y[2], 0.5 * 2.0 + 3.0 - 0.0 + 0.25);
    }
}
