//! Matrix product, transpose and affine map.

use std::sync::Arc;

use super::{BackwardFn, GradSink, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::parallel;

/// Plain row-major matrix product used by both the forward op and the
/// gradient rules. Each output element is produced by exactly one task.
fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    parallel::fill(m * n, |idx| {
        let i = idx / n;
        let j = idx % n;
        let mut s = T::zero();
        for p in 0..k {
            s += a[i * k + p] * b[p * n + j];
        }
        s
    })
}

fn transpose_raw<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    parallel::fill(rows * cols, |idx| {
        let i = idx / rows;
        let j = idx % rows;
        x[j * cols + i]
    })
}

impl<T: Scalar> Tensor<T> {
    fn dims2(&self, op: &str) -> Result<(usize, usize)> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("{op} requires a rank-2 tensor, got {s:?}"))),
        }
    }

    /// `[m×k] x [k×n] -> [m×n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.expect_same_tape(rhs)?;
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul: inner dimensions disagree, {:?} x {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let out = Arc::new(matmul_raw(self.data(), rhs.data(), m, k, n));
        let rg = self.requires_grad() || rhs.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let (ia, ra, da) = (self.id(), self.requires_grad(), self.data_arc());
            let (ib, rb, db) = (rhs.id(), rhs.requires_grad(), rhs.data_arc());
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                if ra {
                    // dA = G . B^T
                    let bt = transpose_raw(&db, k, n);
                    let ga = matmul_raw(g, &bt, m, n, k);
                    sink.add(ia, |buf| {
                        for (o, v) in buf.iter_mut().zip(&ga) {
                            *o += *v;
                        }
                    });
                }
                if rb {
                    // dB = A^T . G
                    let at = transpose_raw(&da, m, k);
                    let gb = matmul_raw(&at, g, k, m, n);
                    sink.add(ib, |buf| {
                        for (o, v) in buf.iter_mut().zip(&gb) {
                            *o += *v;
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, vec![m, n], rg, None, back))
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (r, c) = self.dims2("transpose")?;
        let out = Arc::new(transpose_raw(self.data(), r, c));
        let rg = self.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let id = self.id();
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                let gt = transpose_raw(g, c, r);
                sink.add(id, |buf| {
                    for (o, v) in buf.iter_mut().zip(&gt) {
                        *o += *v;
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, vec![c, r], rg, None, back))
    }

    /// Broadcast-add a row vector `b[n]` to every row of `self[m×n]`.
    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        self.expect_same_tape(bias)?;
        let (m, n) = self.dims2("add_bias")?;
        if bias.shape() != [n] {
            return Err(Error::Shape(format!(
                "add_bias: bias {:?} does not match row width {n}",
                bias.shape()
            )));
        }
        let x = self.data();
        let b = bias.data();
        let out = Arc::new(parallel::fill(m * n, |idx| x[idx] + b[idx % n]));
        let rg = self.requires_grad() || bias.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let (ix, rx) = (self.id(), self.requires_grad());
            let (ib, rb) = (bias.id(), bias.requires_grad());
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                if rx {
                    sink.add(ix, |buf| {
                        for (o, v) in buf.iter_mut().zip(g) {
                            *o += *v;
                        }
                    });
                }
                if rb {
                    sink.add(ib, |buf| {
                        for i in 0..m {
                            for j in 0..n {
                                buf[j] += g[i * n + j];
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, vec![m, n], rg, None, back))
    }

    /// Affine map: `self[m×k] . w[k×n] + b[n]`.
    pub fn linear(&self, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul(w)?.add_bias(b)
    }
}

#[cfg(test)]
mod tests {
    use crate::error::Error;
    use crate::tensor::Tape;

    #[test]
    fn identity_times_column() {
        let tape: Tape<f64> = Tape::new();
        let a = tape
            .tensor(vec![1.0, 0.0, 0.0, 1.0], &[2, 2], false)
            .unwrap();
        let b = tape.tensor(vec![3.0, 4.0], &[2, 1], false).unwrap();
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn hand_computed_product() {
        let tape: Tape<f64> = Tape::new();
        let a = tape.tensor(vec![1.0, 2.0], &[1, 2], false).unwrap();
        let b = tape.tensor(vec![3.0, 4.0], &[2, 1], false).unwrap();
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![11.0]);
    }

    #[test]
    fn mismatch_reports_both_shapes() {
        let tape: Tape<f64> = Tape::new();
        let a = tape.tensor(vec![0.0; 6], &[2, 3], false).unwrap();
        let b = tape.tensor(vec![0.0; 8], &[2, 4], false).unwrap();
        match a.matmul(&b) {
            Err(Error::Shape(msg)) => {
                assert!(msg.contains("[2, 3]") && msg.contains("[2, 4]"), "{msg}");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn grad_of_sum_of_product() {
        // d sum(A.B) / dA = ones . B^T
        let tape: Tape<f64> = Tape::new();
        let a = tape
            .tensor(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2], true)
            .unwrap();
        let b = tape
            .tensor(vec![0.5, 0.25, -1.0, 2.0], &[2, 2], true)
            .unwrap();
        a.matmul(&b).unwrap().sum_all().backward().unwrap();
        let ga = a.grad().unwrap();
        // row sums of B
        for row in 0..3 {
            assert_eq!(ga[row * 2], 0.75);
            assert_eq!(ga[row * 2 + 1], 1.0);
        }
        let gb = b.grad().unwrap();
        // column sums of A
        assert_eq!(gb, vec![9.0, 9.0, 12.0, 12.0]);
    }

    #[test]
    fn transpose_roundtrip_and_grad() {
        let tape: Tape<f64> = Tape::new();
        let a = tape
            .tensor(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3], true)
            .unwrap();
        let t = a.transpose().unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        t.sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn bias_grad_is_column_sum() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![0.0; 6], &[3, 2], true).unwrap();
        let b = tape.tensor(vec![1.0, -1.0], &[2], true).unwrap();
        x.add_bias(&b).unwrap().sum_all().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![3.0, 3.0]);
    }
}
