//! Elementwise primitives and their gradient rules.

use std::sync::Arc;

use super::{BackwardFn, GradSink, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::parallel;

impl<T: Scalar> Tensor<T> {
    fn check_same_shape(&self, rhs: &Tensor<T>, op: &str) -> Result<()> {
        self.expect_same_tape(rhs)?;
        if self.shape() != rhs.shape() {
            return Err(Error::Shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(),
                rhs.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(rhs, "add")?;
        let a = self.data();
        let b = rhs.data();
        let out = Arc::new(parallel::fill(a.len(), |i| a[i] + b[i]));
        let rg = self.requires_grad() || rhs.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let (ia, ra) = (self.id(), self.requires_grad());
            let (ib, rb) = (rhs.id(), rhs.requires_grad());
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                if ra {
                    sink.add(ia, |buf| {
                        for (o, gi) in buf.iter_mut().zip(g) {
                            *o += *gi;
                        }
                    });
                }
                if rb {
                    sink.add(ib, |buf| {
                        for (o, gi) in buf.iter_mut().zip(g) {
                            *o += *gi;
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, self.shape().to_vec(), rg, None, back))
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(rhs, "sub")?;
        let a = self.data();
        let b = rhs.data();
        let out = Arc::new(parallel::fill(a.len(), |i| a[i] - b[i]));
        let rg = self.requires_grad() || rhs.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let (ia, ra) = (self.id(), self.requires_grad());
            let (ib, rb) = (rhs.id(), rhs.requires_grad());
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                if ra {
                    sink.add(ia, |buf| {
                        for (o, gi) in buf.iter_mut().zip(g) {
                            *o += *gi;
                        }
                    });
                }
                if rb {
                    sink.add(ib, |buf| {
                        for (o, gi) in buf.iter_mut().zip(g) {
                            *o -= *gi;
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, self.shape().to_vec(), rg, None, back))
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(rhs, "mul")?;
        let a = self.data();
        let b = rhs.data();
        let out = Arc::new(parallel::fill(a.len(), |i| a[i] * b[i]));
        let rg = self.requires_grad() || rhs.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let (ia, ra, da) = (self.id(), self.requires_grad(), self.data_arc());
            let (ib, rb, db) = (rhs.id(), rhs.requires_grad(), rhs.data_arc());
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                if ra {
                    sink.add(ia, |buf| {
                        for i in 0..g.len() {
                            buf[i] += g[i] * db[i];
                        }
                    });
                }
                if rb {
                    sink.add(ib, |buf| {
                        for i in 0..g.len() {
                            buf[i] += g[i] * da[i];
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, self.shape().to_vec(), rg, None, back))
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(rhs, "div")?;
        let a = self.data();
        let b = rhs.data();
        let out = Arc::new(parallel::fill(a.len(), |i| a[i] / b[i]));
        let rg = self.requires_grad() || rhs.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let (ia, ra) = (self.id(), self.requires_grad());
            let (ib, rb, db) = (rhs.id(), rhs.requires_grad(), rhs.data_arc());
            let y = Arc::clone(&out);
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                if ra {
                    sink.add(ia, |buf| {
                        for i in 0..g.len() {
                            buf[i] += g[i] / db[i];
                        }
                    });
                }
                if rb {
                    sink.add(ib, |buf| {
                        for i in 0..g.len() {
                            buf[i] -= g[i] * y[i] / db[i];
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, self.shape().to_vec(), rg, None, back))
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(|x| -x, |_x, _y| -T::one())
    }

    /// Multiply by a compile-time-known constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        self.unary(move |x| x * c, move |_x, _y| c)
    }

    /// Add a constant to every element.
    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary(move |x| x + c, |_x, _y| T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(|x| x.exp(), |_x, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary(|x| x.ln(), |x, _y| T::one() / x)
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(|x| x.tanh(), |_x, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(sigmoid_scalar, |_x, y| y * (T::one() - y))
    }

    /// swish(x) = x * sigmoid(x).
    pub fn swish(&self) -> Tensor<T> {
        self.unary(
            |x| x * sigmoid_scalar(x),
            |x, _y| {
                let s = sigmoid_scalar(x);
                s + x * s * (T::one() - s)
            },
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _y| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// Shared scaffold for elementwise unary ops. `dfdx` receives the input
    /// and output values of the element.
    fn unary(
        &self,
        f: impl Fn(T) -> T + Sync,
        dfdx: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Tensor<T> {
        let x = self.data();
        let out = Arc::new(parallel::fill(x.len(), |i| f(x[i])));
        let rg = self.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let id = self.id();
            let xd = self.data_arc();
            let yd = Arc::clone(&out);
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                sink.add(id, |buf| {
                    for i in 0..g.len() {
                        buf[i] += g[i] * dfdx(xd[i], yd[i]);
                    }
                });
            }))
        } else {
            None
        };
        self.tape().push(out, self.shape().to_vec(), rg, None, back)
    }

    /// Sum of all elements, as a scalar (shape `[]`).
    pub fn sum_all(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        let rg = self.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let id = self.id();
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                let go = g[0];
                sink.add(id, |buf| {
                    for o in buf.iter_mut() {
                        *o += go;
                    }
                });
            }))
        } else {
            None
        };
        self.tape().push(Arc::new(vec![s]), vec![], rg, None, back)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean_all(&self) -> Tensor<T> {
        let n = T::from_f64(self.numel() as f64);
        self.sum_all().scale(T::one() / n)
    }
}

fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use approx::assert_relative_eq;

    fn t(data: &[f64]) -> (Tape<f64>, Tensor<f64>) {
        let tape = Tape::new();
        let x = tape.tensor(data.to_vec(), &[data.len()], true).unwrap();
        (tape, x)
    }

    #[test]
    fn div_values_and_grads() {
        let tape: Tape<f64> = Tape::new();
        let a = tape.tensor(vec![2.0, 9.0], &[2], true).unwrap();
        let b = tape.tensor(vec![4.0, 3.0], &[2], true).unwrap();
        let y = a.div(&b).unwrap();
        assert_eq!(y.to_vec(), vec![0.5, 3.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.25, 1.0 / 3.0]);
        // d(a/b)/db = -a/b^2
        assert_relative_eq!(b.grad().unwrap()[0], -2.0 / 16.0);
        assert_relative_eq!(b.grad().unwrap()[1], -1.0);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        let (_tape, x) = t(&[-1000.0, 0.0, 1000.0]);
        let y = x.sigmoid();
        assert_eq!(y.to_vec()[0], 0.0);
        assert_eq!(y.to_vec()[1], 0.5);
        assert_eq!(y.to_vec()[2], 1.0);
        assert!(y.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn swish_matches_definition() {
        let (_tape, x) = t(&[0.7, -1.3]);
        let y = x.swish();
        for (xi, yi) in x.to_vec().into_iter().zip(y.to_vec()) {
            assert_relative_eq!(yi, xi / (1.0 + (-xi).exp()), epsilon = 1e-12);
        }
    }

    #[test]
    fn chain_rule_through_two_ops() {
        // loss = sum(exp(2x)); d/dx = 2 exp(2x)
        let (_tape, x) = t(&[0.1, -0.4]);
        let loss = x.scale(2.0).exp().sum_all();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        for (xi, gi) in x.to_vec().into_iter().zip(g) {
            assert_relative_eq!(gi, 2.0 * (2.0 * xi).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_all_scales_gradient() {
        let (_tape, x) = t(&[1.0, 2.0, 3.0, 4.0]);
        let loss = x.mean_all();
        assert_relative_eq!(loss.item(), 2.5);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }
}
