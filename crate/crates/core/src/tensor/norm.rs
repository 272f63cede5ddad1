//! softmax, log_softmax and layer normalization.

use std::sync::Arc;

use super::{BackwardFn, GradSink, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::parallel;

/// Lane decomposition of `shape` along `axis`: element `inner + i*stride +
/// outer*len*stride` walks lane `(outer, inner)`.
#[derive(Clone, Copy)]
struct Lanes {
    outer: usize,
    len: usize,
    stride: usize,
}

fn lanes_of(shape: &[usize], axis: usize) -> Result<Lanes> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    Ok(Lanes { outer, len, stride })
}

/// Apply `f(lane_in, lane_out)` over every lane. The last-axis case works on
/// contiguous chunks in parallel; strided axes gather into a scratch buffer.
fn map_lanes<T: Scalar>(
    input: &[T],
    out: &mut [T],
    lanes: Lanes,
    f: impl Fn(&[T], &mut [T]) + Sync,
) {
    if lanes.stride == 1 {
        let src = input;
        parallel::for_each_chunk_mut(out, lanes.len, |i, chunk| {
            f(&src[i * lanes.len..(i + 1) * lanes.len], chunk);
        });
    } else {
        let mut buf_in = vec![T::zero(); lanes.len];
        let mut buf_out = vec![T::zero(); lanes.len];
        for o in 0..lanes.outer {
            for s in 0..lanes.stride {
                let base = o * lanes.len * lanes.stride + s;
                for i in 0..lanes.len {
                    buf_in[i] = input[base + i * lanes.stride];
                }
                f(&buf_in, &mut buf_out);
                for i in 0..lanes.len {
                    out[base + i * lanes.stride] = buf_out[i];
                }
            }
        }
    }
}

/// Reject NaN and +inf. -inf is the masking value and is allowed.
fn check_softmax_input<T: Scalar>(x: &[T], op: &str) -> Result<()> {
    for &v in x {
        if v.is_nan() || (v.is_infinite() && v > T::zero()) {
            return Err(Error::Numeric(format!("{op}: non-finite input value {v}")));
        }
    }
    Ok(())
}

fn softmax_lane<T: Scalar>(x: &[T], y: &mut [T]) {
    let mut m = T::neg_infinity();
    for &v in x {
        if v > m {
            m = v;
        }
    }
    let mut sum = T::zero();
    for (yi, &xi) in y.iter_mut().zip(x) {
        let e = (xi - m).exp();
        *yi = e;
        sum += e;
    }
    for yi in y.iter_mut() {
        *yi /= sum;
    }
}

fn log_softmax_lane<T: Scalar>(x: &[T], y: &mut [T]) {
    let mut m = T::neg_infinity();
    for &v in x {
        if v > m {
            m = v;
        }
    }
    let mut sum = T::zero();
    for &xi in x {
        sum += (xi - m).exp();
    }
    let lse = m + sum.ln();
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = xi - lse;
    }
}

impl<T: Scalar> Tensor<T> {
    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_softmax_input(self.data(), "softmax")?;
        let lanes = lanes_of(self.shape(), axis)?;
        let mut out = vec![T::zero(); self.numel()];
        map_lanes(self.data(), &mut out, lanes, softmax_lane);
        if out.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric(
                "softmax: a lane was entirely -inf".into(),
            ));
        }
        let out = Arc::new(out);
        let rg = self.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let id = self.id();
            let y = Arc::clone(&out);
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                sink.add(id, |buf| {
                    for_each_lane_triplet(lanes, |idx_of| {
                        // dot = sum_j g_j y_j per lane; dx_i += y_i (g_i - dot)
                        let mut dot = T::zero();
                        for i in 0..lanes.len {
                            let k = idx_of(i);
                            dot += g[k] * y[k];
                        }
                        for i in 0..lanes.len {
                            let k = idx_of(i);
                            buf[k] += y[k] * (g[k] - dot);
                        }
                    });
                });
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, self.shape().to_vec(), rg, None, back))
    }

    /// log(softmax) along `axis`, computed directly for stability.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_softmax_input(self.data(), "log_softmax")?;
        let lanes = lanes_of(self.shape(), axis)?;
        let mut out = vec![T::zero(); self.numel()];
        map_lanes(self.data(), &mut out, lanes, log_softmax_lane);
        if out.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric(
                "log_softmax: a lane was entirely -inf".into(),
            ));
        }
        let out = Arc::new(out);
        let rg = self.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let id = self.id();
            let y = Arc::clone(&out);
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                sink.add(id, |buf| {
                    for_each_lane_triplet(lanes, |idx_of| {
                        let mut gsum = T::zero();
                        for i in 0..lanes.len {
                            gsum += g[idx_of(i)];
                        }
                        for i in 0..lanes.len {
                            let k = idx_of(i);
                            buf[k] += g[k] - y[k].exp() * gsum;
                        }
                    });
                });
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, self.shape().to_vec(), rg, None, back))
    }

    /// Layer normalization over the last axis: zero mean, unit variance per
    /// vector, then `gain * xhat + bias`.
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        self.expect_same_tape(gain)?;
        self.expect_same_tape(bias)?;
        let shape = self.shape();
        let n = *shape.last().ok_or_else(|| {
            Error::Shape("layer_norm requires at least rank 1".into())
        })?;
        if gain.shape() != [n] || bias.shape() != [n] {
            return Err(Error::Shape(format!(
                "layer_norm: gain {:?} / bias {:?} do not match last dimension {n}",
                gain.shape(),
                bias.shape()
            )));
        }
        let rows = self.numel() / n;
        let eps = T::from_f64(eps);
        let x = self.data();
        let gm = gain.data();
        let bm = bias.data();

        let mut out = vec![T::zero(); self.numel()];
        let mut xhat = vec![T::zero(); self.numel()];
        let mut inv_std = vec![T::zero(); rows];
        // Stats first (sequential over rows; rows are short), then the
        // normalized values in parallel.
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let mut mean = T::zero();
            for &v in row {
                mean += v;
            }
            mean /= T::from_f64(n as f64);
            let mut var = T::zero();
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var /= T::from_f64(n as f64);
            let istd = T::one() / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..n {
                xhat[r * n + j] = (row[j] - mean) * istd;
            }
        }
        parallel::for_each_chunk_mut(&mut out, n, |r, chunk| {
            for j in 0..n {
                chunk[j] = gm[j] * xhat[r * n + j] + bm[j];
            }
        });

        let out = Arc::new(out);
        let xhat = Arc::new(xhat);
        let inv_std = Arc::new(inv_std);
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let (ix, rx) = (self.id(), self.requires_grad());
            let (ig, rgain) = (gain.id(), gain.requires_grad());
            let (ib, rbias) = (bias.id(), bias.requires_grad());
            let gdata = gain.data_arc();
            let xh = Arc::clone(&xhat);
            let istd = Arc::clone(&inv_std);
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                let nf = T::from_f64(n as f64);
                if rx {
                    sink.add(ix, |buf| {
                        for r in 0..rows {
                            let base = r * n;
                            let mut m1 = T::zero();
                            let mut m2 = T::zero();
                            for j in 0..n {
                                let gg = gdata[j] * g[base + j];
                                m1 += gg;
                                m2 += gg * xh[base + j];
                            }
                            m1 /= nf;
                            m2 /= nf;
                            for j in 0..n {
                                let gg = gdata[j] * g[base + j];
                                buf[base + j] += (gg - m1 - xh[base + j] * m2) * istd[r];
                            }
                        }
                    });
                }
                if rgain {
                    sink.add(ig, |buf| {
                        for r in 0..rows {
                            for j in 0..n {
                                buf[j] += g[r * n + j] * xh[r * n + j];
                            }
                        }
                    });
                }
                if rbias {
                    sink.add(ib, |buf| {
                        for r in 0..rows {
                            for j in 0..n {
                                buf[j] += g[r * n + j];
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, shape.to_vec(), rg, None, back))
    }
}

/// Drive `f` once per lane with an index translator `i -> flat index`.
fn for_each_lane_triplet(lanes: Lanes, f: impl Fn(&dyn Fn(usize) -> usize)) {
    for o in 0..lanes.outer {
        for s in 0..lanes.stride {
            let base = o * lanes.len * lanes.stride + s;
            let stride = lanes.stride;
            f(&move |i: usize| base + i * stride);
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::error::Error;
    use crate::tensor::Tape;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_logits_give_uniform_distribution() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![0.0, 0.0, 0.0], &[3], false).unwrap();
        let y = x.softmax(0).unwrap();
        for v in y.to_vec() {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn large_logit_does_not_overflow() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![1000.0, 0.0, 0.0], &[3], false).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        assert!((y[0] - 1.0).abs() < 1e-6);
        assert!(y[1] < 1e-6 && y[2] < 1e-6);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn matches_direct_formula() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![1.0, 2.0, 3.0], &[3], false).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        let m = 3.0f64;
        let exps: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (yi, ei) in y.iter().zip(&exps) {
            assert_relative_eq!(*yi, ei / z, epsilon = 1e-15);
        }
    }

    #[test]
    fn rows_sum_to_one_and_log_softmax_agrees() {
        let tape: Tape<f64> = Tape::new();
        let x = tape
            .tensor(vec![0.3, -1.0, 2.0, 4.0, 0.0, -0.5], &[2, 3], false)
            .unwrap();
        let s = x.softmax(1).unwrap();
        let ls = x.log_softmax(1).unwrap();
        for r in 0..2 {
            let row: f64 = s.to_vec()[r * 3..(r + 1) * 3].iter().sum();
            assert!((row - 1.0).abs() < 1e-6);
        }
        for (a, b) in s.to_vec().iter().zip(ls.to_vec()) {
            assert!((a.ln() - b).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_along_axis_zero() {
        let tape: Tape<f64> = Tape::new();
        let x = tape
            .tensor(vec![1.0, 5.0, 1.0, 5.0], &[2, 2], false)
            .unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        // columns sum to one
        assert_relative_eq!(y[0] + y[2], 1.0, epsilon = 1e-12);
        assert_relative_eq!(y[1] + y[3], 1.0, epsilon = 1e-12);
        assert_relative_eq!(y[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn nan_input_is_a_numeric_error() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![f64::NAN, 0.0], &[2], false).unwrap();
        assert!(matches!(x.softmax(0), Err(Error::Numeric(_))));
    }

    #[test]
    fn neg_inf_is_allowed_as_mask() {
        let tape: Tape<f64> = Tape::new();
        let x = tape
            .tensor(vec![0.0, f64::NEG_INFINITY], &[2], false)
            .unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        assert_eq!(y, vec![1.0, 0.0]);
    }

    #[test]
    fn layer_norm_constant_row_is_zeroed_by_eps() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![5.0, 5.0, 5.0], &[1, 3], false).unwrap();
        let g = tape.tensor(vec![1.0; 3], &[3], false).unwrap();
        let b = tape.tensor(vec![0.0; 3], &[3], false).unwrap();
        let y = x.layer_norm(&g, &b, 1e-5).unwrap();
        for v in y.to_vec() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn layer_norm_already_normalized_input() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![1.0, -1.0], &[1, 2], false).unwrap();
        let g = tape.tensor(vec![1.0; 2], &[2], false).unwrap();
        let b = tape.tensor(vec![0.0; 2], &[2], false).unwrap();
        let y = x.layer_norm(&g, &b, 1e-5).unwrap().to_vec();
        assert_relative_eq!(y[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(y[1], -1.0, epsilon = 1e-4);
    }
}
