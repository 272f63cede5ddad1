//! Shape manipulation, masking, embedding lookup and dropout.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{numel_of, BackwardFn, GradSink, Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::parallel;

impl<T: Scalar> Tensor<T> {
    /// Reinterpret the same contiguous data under a new shape.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(new_shape) != self.numel() {
            return Err(Error::Shape(format!(
                "reshape: {:?} ({}) cannot become {:?} ({})",
                self.shape(),
                self.numel(),
                new_shape,
                numel_of(new_shape)
            )));
        }
        let rg = self.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let id = self.id();
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                sink.add(id, |buf| {
                    for (o, v) in buf.iter_mut().zip(g) {
                        *o += *v;
                    }
                });
            }))
        } else {
            None
        };
        Ok(self
            .tape()
            .push(self.data_arc(), new_shape.to_vec(), rg, None, back))
    }

    /// Contiguous slice `start..start+len` along `axis` of a rank-2 tensor.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let (r, c) = match self.shape() {
            [r, c] => (*r, *c),
            s => return Err(Error::Shape(format!("narrow requires rank 2, got {s:?}"))),
        };
        let bound = if axis == 0 { r } else { c };
        if axis > 1 || start + len > bound || len == 0 {
            return Err(Error::Shape(format!(
                "narrow: range {start}..{} out of bounds for axis {axis} of {:?}",
                start + len,
                self.shape()
            )));
        }
        let x = self.data();
        let (out_r, out_c) = if axis == 0 { (len, c) } else { (r, len) };
        let out = Arc::new(parallel::fill(out_r * out_c, |idx| {
            let i = idx / out_c;
            let j = idx % out_c;
            if axis == 0 {
                x[(start + i) * c + j]
            } else {
                x[i * c + start + j]
            }
        }));
        let rg = self.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let id = self.id();
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                sink.add(id, |buf| {
                    for i in 0..out_r {
                        for j in 0..out_c {
                            let src = i * out_c + j;
                            let dst = if axis == 0 {
                                (start + i) * c + j
                            } else {
                                i * c + start + j
                            };
                            buf[dst] += g[src];
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, vec![out_r, out_c], rg, None, back))
    }

    /// Replace elements where `mask` is true by `value`; gradient is blocked
    /// at masked positions.
    pub fn masked_fill(&self, mask: &Arc<Vec<bool>>, value: T) -> Result<Tensor<T>> {
        if mask.len() != self.numel() {
            return Err(Error::Shape(format!(
                "masked_fill: mask has {} entries for {} elements",
                mask.len(),
                self.numel()
            )));
        }
        let x = self.data();
        let m = Arc::clone(mask);
        let out = Arc::new(parallel::fill(x.len(), |i| if m[i] { value } else { x[i] }));
        let rg = self.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let id = self.id();
            let m = Arc::clone(mask);
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                sink.add(id, |buf| {
                    for i in 0..g.len() {
                        if !m[i] {
                            buf[i] += g[i];
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, self.shape().to_vec(), rg, None, back))
    }

    /// Inverted dropout. In eval mode (or rate 0) this is the identity and no
    /// node is recorded. Mask randomness comes entirely from `rng`.
    pub fn dropout(&self, rate: f64, train: bool, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 - rate;
        let scale = T::from_f64(1.0 / keep);
        let mask: Arc<Vec<T>> = Arc::new(
            (0..self.numel())
                .map(|_| {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        T::zero()
                    }
                })
                .collect(),
        );
        let x = self.data();
        let m = Arc::clone(&mask);
        let out = Arc::new(parallel::fill(x.len(), |i| x[i] * m[i]));
        let rg = self.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let id = self.id();
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                sink.add(id, |buf| {
                    for i in 0..g.len() {
                        buf[i] += g[i] * mask[i];
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape().push(out, self.shape().to_vec(), rg, None, back))
    }
}

impl<T: Scalar> Tape<T> {
    /// Concatenate rank-2 tensors along `axis`.
    pub fn concat(&self, parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        if axis > 1 {
            return Err(Error::Shape(format!("concat: axis {axis} out of range")));
        }
        let mut dims = Vec::with_capacity(parts.len());
        for p in parts {
            parts[0].expect_same_tape(p)?;
            match p.shape() {
                [r, c] => dims.push((*r, *c)),
                s => return Err(Error::Shape(format!("concat requires rank 2, got {s:?}"))),
            }
        }
        let (r0, c0) = dims[0];
        for &(r, c) in &dims {
            let ok = if axis == 0 { c == c0 } else { r == r0 };
            if !ok {
                return Err(Error::Shape(format!(
                    "concat along axis {axis}: incompatible shapes {dims:?}"
                )));
            }
        }
        let (out_r, out_c) = if axis == 0 {
            (dims.iter().map(|d| d.0).sum::<usize>(), c0)
        } else {
            (r0, dims.iter().map(|d| d.1).sum::<usize>())
        };
        let mut out = vec![T::zero(); out_r * out_c];
        let mut offset = 0usize;
        for (p, &(r, c)) in parts.iter().zip(&dims) {
            let x = p.data();
            if axis == 0 {
                out[offset * out_c..(offset + r) * out_c].copy_from_slice(x);
                offset += r;
            } else {
                for i in 0..r {
                    out[i * out_c + offset..i * out_c + offset + c]
                        .copy_from_slice(&x[i * c..(i + 1) * c]);
                }
                offset += c;
            }
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        let back: Option<BackwardFn<T>> = if rg {
            let ids: Vec<(usize, bool, usize, usize)> = parts
                .iter()
                .zip(&dims)
                .map(|(p, &(r, c))| (p.id(), p.requires_grad(), r, c))
                .collect();
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                let mut offset = 0usize;
                for &(id, prg, r, c) in &ids {
                    if prg {
                        let off = offset;
                        sink.add(id, |buf| {
                            if axis == 0 {
                                for i in 0..r * c {
                                    buf[i] += g[off * out_c + i];
                                }
                            } else {
                                for i in 0..r {
                                    for j in 0..c {
                                        buf[i * c + j] += g[i * out_c + off + j];
                                    }
                                }
                            }
                        });
                    }
                    offset += if axis == 0 { r } else { c };
                }
            }))
        } else {
            None
        };
        Ok(self.push(Arc::new(out), vec![out_r, out_c], rg, None, back))
    }

    /// Row lookup: `table[V×d]` gathered at `ids`, giving `[len(ids)×d]`.
    /// Gradients scatter-add back into the table rows.
    pub fn embedding(&self, table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
        let (v, d) = match table.shape() {
            [v, d] => (*v, *d),
            s => {
                return Err(Error::Shape(format!(
                    "embedding table must be rank 2, got {s:?}"
                )))
            }
        };
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Data(format!(
                "embedding id {bad} out of range for vocabulary of {v}"
            )));
        }
        let t = table.data();
        let n = ids.len();
        let out = Arc::new(parallel::fill(n * d, |idx| {
            let i = idx / d;
            let j = idx % d;
            t[ids[i] * d + j]
        }));
        let rg = table.requires_grad();
        let back: Option<BackwardFn<T>> = if rg {
            let id = table.id();
            let ids = ids.to_vec();
            Some(Box::new(move |g: &[T], sink: &mut GradSink<T>| {
                sink.add(id, |buf| {
                    for (i, &row) in ids.iter().enumerate() {
                        for j in 0..d {
                            buf[row * d + j] += g[i * d + j];
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.push(out, vec![n, d], rg, None, back))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive, Stream};
    use crate::tensor::Tape;

    #[test]
    fn narrow_and_grad_scatter() {
        let tape: Tape<f64> = Tape::new();
        let x = tape
            .tensor(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3], true)
            .unwrap();
        let y = x.narrow(1, 1, 2).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 3.0, 5.0, 6.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn concat_columns_roundtrip() {
        let tape: Tape<f64> = Tape::new();
        let a = tape.tensor(vec![1.0, 2.0], &[2, 1], true).unwrap();
        let b = tape.tensor(vec![3.0, 4.0], &[2, 1], true).unwrap();
        let y = tape.concat(&[&a, &b], 1).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.to_vec(), vec![1.0, 3.0, 2.0, 4.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(b.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn masked_fill_blocks_gradient() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![1.0, 2.0, 3.0], &[1, 3], true).unwrap();
        let mask = Arc::new(vec![false, true, false]);
        let y = x.masked_fill(&mask, -1.0).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, -1.0, 3.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn embedding_lookup_and_scatter() {
        let tape: Tape<f64> = Tape::new();
        let table = tape
            .tensor(vec![0.0, 0.1, 1.0, 1.1, 2.0, 2.1], &[3, 2], true)
            .unwrap();
        let y = tape.embedding(&table, &[2, 0, 2]).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 2.1, 0.0, 0.1, 2.0, 2.1]);
        y.sum_all().backward().unwrap();
        // row 2 used twice
        assert_eq!(table.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn embedding_rejects_out_of_range() {
        let tape: Tape<f64> = Tape::new();
        let table = tape.tensor(vec![0.0; 6], &[3, 2], false).unwrap();
        assert!(tape.embedding(&table, &[3]).is_err());
    }

    #[test]
    fn dropout_eval_is_identity() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![1.0, 2.0], &[2], true).unwrap();
        let mut rng = derive(1, Stream::Dropout, &[0]);
        let y = x.dropout(0.5, false, &mut rng).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
        assert_eq!(tape.num_nodes(), 1);
    }

    #[test]
    fn dropout_is_seed_deterministic_and_scaled() {
        let run = |seed| {
            let tape: Tape<f64> = Tape::new();
            let x = tape.tensor(vec![1.0; 1000], &[1000], false).unwrap();
            let mut rng = derive(seed, Stream::Dropout, &[7]);
            x.dropout(0.25, true, &mut rng).unwrap().to_vec()
        };
        let a = run(3);
        let b = run(3);
        assert_eq!(a, b);
        // kept values are scaled by 1/(1-rate)
        assert!(a.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12));
        let kept = a.iter().filter(|&&v| v != 0.0).count();
        assert!((600..900).contains(&kept), "kept {kept} of 1000");
    }
}
