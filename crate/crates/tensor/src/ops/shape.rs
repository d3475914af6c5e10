use std::rc::Rc;

use crate::tensor::numel;
use crate::{Scalar, Tensor, Var};

impl<T: Scalar> Var<T> {
    pub fn reshape(&self, shape: &[usize]) -> Var<T> {
        let out = (*self.value).clone().reshaped(shape);
        let in_shape = self.shape().to_vec();
        self.graph.op(out, &[self], move |g, _| {
            vec![Some(g.clone().reshaped(&in_shape))]
        })
    }

    /// Joins vars along `axis`; all other dims must agree.
    pub fn concat(vars: &[Var<T>], axis: usize) -> Var<T> {
        assert!(!vars.is_empty(), "concat of nothing");
        let base = vars[0].shape().to_vec();
        assert!(axis < base.len(), "concat axis {axis} for {base:?}");
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut total = 0;
        for v in vars {
            let s = v.shape();
            assert_eq!(s.len(), base.len(), "concat rank mismatch");
            for d in 0..s.len() {
                if d != axis {
                    assert_eq!(s[d], base[d], "concat shape mismatch {s:?} vs {base:?}");
                }
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let chunks: Vec<usize> = vars.iter().map(|v| v.shape()[axis] * inner).collect();
        let row = total * inner;
        let mut data = vec![T::zero(); numel(&shape)];
        for o in 0..outer {
            let mut off = 0;
            for (v, &len) in vars.iter().zip(&chunks) {
                data[o * row + off..o * row + off + len]
                    .copy_from_slice(&v.value.data()[o * len..(o + 1) * len]);
                off += len;
            }
        }
        let shapes: Vec<Vec<usize>> = vars.iter().map(|v| v.shape().to_vec()).collect();
        let refs: Vec<&Var<T>> = vars.iter().collect();
        vars[0]
            .graph
            .op(Tensor::from_vec(&shape, data), &refs, move |g, need| {
                let gd = g.data();
                let mut off = 0;
                let mut res = Vec::with_capacity(chunks.len());
                for ((&len, s), &nd) in chunks.iter().zip(&shapes).zip(need) {
                    if nd {
                        let mut d = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            d.extend_from_slice(&gd[o * row + off..o * row + off + len]);
                        }
                        res.push(Some(Tensor::from_vec(s, d)));
                    } else {
                        res.push(None);
                    }
                    off += len;
                }
                res
            })
    }

    /// `out[i] = self[index[i]]`, or zero where the index is `None`.
    pub fn gather(&self, shape: &[usize], index: Vec<Option<usize>>) -> Var<T> {
        assert_eq!(numel(shape), index.len(), "gather index length");
        let xd = self.value.data();
        let data = index
            .iter()
            .map(|i| i.map_or(T::zero(), |j| xd[j]))
            .collect();
        let in_shape = self.shape().to_vec();
        let index = Rc::new(index);
        self.graph.op(Tensor::from_vec(shape, data), &[self], move |g, _| {
            let mut dx = vec![T::zero(); numel(&in_shape)];
            for (gv, i) in g.data().iter().zip(index.iter()) {
                if let Some(j) = i {
                    dx[*j] += *gv;
                }
            }
            vec![Some(Tensor::from_vec(&in_shape, dx))]
        })
    }

    /// Sub-range `[start, start+len)` of the leading axis.
    pub fn narrow0(&self, start: usize, len: usize) -> Var<T> {
        let s = self.shape();
        assert!(start + len <= s[0], "narrow0 {start}+{len} of {s:?}");
        let inner: usize = s[1..].iter().product();
        let mut shape = s.to_vec();
        shape[0] = len;
        let index = (start * inner..(start + len) * inner).map(Some).collect();
        self.gather(&shape, index)
    }
}
