use crate::tensor::{numel, strides};
use crate::{Scalar, Tensor};

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let r = a.len().max(b.len());
    (0..r)
        .map(|i| {
            let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
            let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
            match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
            }
        })
        .collect()
}

/// Strides of `shape` viewed at the rank of `out`, zero on broadcast axes.
pub(crate) fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let r = out.len();
    assert!(shape.len() <= r, "cannot broadcast {shape:?} to {out:?}");
    let off = r - shape.len();
    let st = strides(shape);
    (0..r)
        .map(|d| {
            if d < off {
                return 0;
            }
            let s = shape[d - off];
            if s == 1 {
                0
            } else {
                assert_eq!(s, out[d], "cannot broadcast {shape:?} to {out:?}");
                st[d - off]
            }
        })
        .collect()
}

/// Visits every element of `out` with the matching offsets into two
/// broadcast operands.
pub(crate) fn walk2(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let r = out.len();
    if numel(out) == 0 {
        return;
    }
    if r == 0 {
        f(0, 0, 0);
        return;
    }
    let last = out[r - 1];
    let (la, lb) = (sa[r - 1], sb[r - 1]);
    let mut idx = vec![0usize; r];
    let (mut o, mut oa, mut ob) = (0, 0, 0);
    loop {
        for j in 0..last {
            f(o + j, oa + j * la, ob + j * lb);
        }
        o += last;
        let mut d = r - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape());
    let sa = aligned_strides(a.shape(), &out);
    let sb = aligned_strides(b.shape(), &out);
    let (ad, bd) = (a.data(), b.data());
    let mut data = vec![T::zero(); numel(&out)];
    walk2(&out, &sa, &sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
    Tensor::from_vec(&out, data)
}

/// Sums `g` down to `shape` (inverse of broadcasting).
pub(crate) fn reduce_to<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let gs = g.shape().to_vec();
    let st = aligned_strides(shape, &gs);
    let zero = vec![0; gs.len()];
    let gd = g.data();
    let mut data = vec![T::zero(); numel(shape)];
    walk2(&gs, &st, &zero, |o, it, _| data[it] += gd[o]);
    Tensor::from_vec(shape, data)
}

/// Repeats `t` along broadcast axes up to `shape`.
pub(crate) fn expand_to<T: Scalar>(t: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if t.shape() == shape {
        return t.clone();
    }
    let st = aligned_strides(t.shape(), shape);
    let zero = vec![0; shape.len()];
    let td = t.data();
    let mut data = vec![T::zero(); numel(shape)];
    walk2(shape, &st, &zero, |o, it, _| data[o] = td[it]);
    Tensor::from_vec(shape, data)
}
