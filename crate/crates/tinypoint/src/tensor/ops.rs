//! Tensor operations with forward buffers and backward closures.
//!
//! Broadcasting follows trailing-axis alignment: shapes are right-aligned and
//! each axis pair must be equal or contain a 1 (missing leading axes count
//! as 1). Ops that can create non-finite values from finite inputs (matmul,
//! exp, powf, the fused losses) validate their outputs and fail with a
//! numeric error naming the op, so training divergence surfaces at the op
//! that produced it.

use rand::Rng;

use super::{numel, Real, Tensor};
use crate::error::{Error, Result};

/// Broadcast two shapes (trailing-axis alignment, 1 stretches).
fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::Dimension(format!(
                "cannot broadcast shapes {:?} and {:?}",
                a, b
            )));
        };
    }
    Ok(out)
}

/// Row-major strides with 0 on axes broadcast up to the output rank.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { s };
        s *= shape[i];
    }
    strides
}

/// Sum `grad` (laid out as `out_shape`) down to `in_shape`, undoing a
/// broadcast.
fn reduce_to_shape<T: Real>(grad: &[T], out_shape: &[usize], in_shape: &[usize]) -> Vec<T> {
    if out_shape == in_shape {
        return grad.to_vec();
    }
    let strides = broadcast_strides(in_shape, out_shape);
    let mut out = vec![T::ZERO; numel(in_shape)];
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    for (flat, g) in grad.iter().enumerate() {
        // Decompose flat index once per element; out_shape is row-major.
        let mut rem = flat;
        for d in (0..rank).rev() {
            idx[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let mut src = 0usize;
        for d in 0..rank {
            src += idx[d] * strides[d];
        }
        out[src] += *g;
    }
    out
}

fn ensure_finite<T: Real>(op: &str, data: &[T]) -> Result<()> {
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "{op}: non-finite value {:?} at element {i}",
                v
            )));
        }
    }
    Ok(())
}

/// Elementwise binary op with broadcasting; `f` computes the output value,
/// `dfa`/`dfb` the local derivatives wrt each input.
fn binary_broadcast<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: fn(T, T) -> T,
    dfa: fn(T, T) -> T,
    dfb: fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let out_shape = broadcast_shapes(a.shape(), b.shape())?;
    let n = numel(&out_shape);
    let mut data = vec![T::ZERO; n];

    if a.shape() == b.shape() {
        for ((o, &x), &y) in data.iter_mut().zip(a.data()).zip(b.data()) {
            *o = f(x, y);
        }
    } else if b.shape().len() == 1
        && !a.shape().is_empty()
        && b.shape()[0] == *a.shape().last().unwrap()
        && out_shape == a.shape()
    {
        // Fast path: vector broadcast over the last axis (bias adds).
        let c = b.shape()[0];
        let bv = b.data();
        for (row, orow) in a.data().chunks_exact(c).zip(data.chunks_exact_mut(c)) {
            for j in 0..c {
                orow[j] = f(row[j], bv[j]);
            }
        }
    } else {
        let sa = broadcast_strides(a.shape(), &out_shape);
        let sb = broadcast_strides(b.shape(), &out_shape);
        let rank = out_shape.len();
        let ad = a.data();
        let bd = b.data();
        let mut idx = vec![0usize; rank];
        for (flat, o) in data.iter_mut().enumerate() {
            let mut rem = flat;
            for d in (0..rank).rev() {
                idx[d] = rem % out_shape[d];
                rem /= out_shape[d];
            }
            let (mut ia, mut ib) = (0usize, 0usize);
            for d in 0..rank {
                ia += idx[d] * sa[d];
                ib += idx[d] * sb[d];
            }
            *o = f(ad[ia], bd[ib]);
        }
    }

    let (ac, bc) = (a.clone(), b.clone());
    let (a_shape, b_shape) = (a.shape().to_vec(), b.shape().to_vec());
    let os = out_shape.clone();
    Ok(Tensor::make_node(
        out_shape,
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            // Local derivative at each output element, then reduce over the
            // broadcast axes.
            let sa = broadcast_strides(&a_shape, &os);
            let sb = broadcast_strides(&b_shape, &os);
            let rank = os.len();
            let ad = ac.data();
            let bd = bc.data();
            let mut ga = vec![T::ZERO; g.len()];
            let mut gb = vec![T::ZERO; g.len()];
            let mut idx = vec![0usize; rank];
            for flat in 0..g.len() {
                let mut rem = flat;
                for d in (0..rank).rev() {
                    idx[d] = rem % os[d];
                    rem /= os[d];
                }
                let (mut ia, mut ib) = (0usize, 0usize);
                for d in 0..rank {
                    ia += idx[d] * sa[d];
                    ib += idx[d] * sb[d];
                }
                ga[flat] = g[flat] * dfa(ad[ia], bd[ib]);
                gb[flat] = g[flat] * dfb(ad[ia], bd[ib]);
            }
            vec![
                Some(reduce_to_shape(&ga, &os, &a_shape)),
                Some(reduce_to_shape(&gb, &os, &b_shape)),
            ]
        }),
    ))
}

impl<T: Real> Tensor<T> {
    /// Elementwise addition with broadcasting.
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary_broadcast(self, rhs, |x, y| x + y, |_, _| T::ONE, |_, _| T::ONE)
    }

    /// Elementwise subtraction with broadcasting.
    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary_broadcast(self, rhs, |x, y| x - y, |_, _| T::ONE, |_, _| -T::ONE)
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary_broadcast(self, rhs, |x, y| x * y, |_, y| y, |x, _| x)
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: f64) -> Tensor<T> {
        let cv = T::from_f64(c);
        let data: Vec<T> = self.data().iter().map(|&x| x * cv).collect();
        Tensor::make_node(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().map(|&v| v * cv).collect())]),
        )
    }

    /// Add a constant to every element.
    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let cv = T::from_f64(c);
        let data: Vec<T> = self.data().iter().map(|&x| x + cv).collect();
        Tensor::make_node(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.to_vec())]),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-1.0)
    }

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape().len() != 2 || rhs.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "matmul requires rank-2 operands, got {:?} and {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (rhs.shape()[0], rhs.shape()[1]);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let a = self.data();
        let b = rhs.data();
        let mut c = vec![T::ZERO; m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n..(i + 1) * n];
            for (kk, &aik) in arow.iter().enumerate() {
                let brow = &b[kk * n..(kk + 1) * n];
                for j in 0..n {
                    crow[j] += aik * brow[j];
                }
            }
        }
        ensure_finite("matmul", &c)?;

        let (ac, bc) = (self.clone(), rhs.clone());
        let a_needs = self.node.needs_grad;
        let b_needs = rhs.node.needs_grad;
        Ok(Tensor::make_node(
            vec![m, n],
            c,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let a = ac.data();
                let b = bc.data();
                let da = if a_needs {
                    // dA = G . B^T
                    let mut da = vec![T::ZERO; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let darow = &mut da[i * k..(i + 1) * k];
                        for kk in 0..k {
                            let brow = &b[kk * n..(kk + 1) * n];
                            let mut s = T::ZERO;
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            darow[kk] = s;
                        }
                    }
                    Some(da)
                } else {
                    None
                };
                let db = if b_needs {
                    // dB = A^T . G
                    let mut db = vec![T::ZERO; k * n];
                    for i in 0..m {
                        let arow = &a[i * k..(i + 1) * k];
                        let grow = &g[i * n..(i + 1) * n];
                        for (kk, &aik) in arow.iter().enumerate() {
                            let dbrow = &mut db[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                dbrow[j] += aik * grow[j];
                            }
                        }
                    }
                    Some(db)
                } else {
                    None
                };
                vec![da, db]
            }),
        ))
    }

    /// Elementwise max(x, 0). The subgradient at 0 is 0.
    pub fn relu(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&x| if x > T::ZERO { x } else { T::ZERO })
            .collect();
        let xc = self.clone();
        Tensor::make_node(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let x = xc.data();
                vec![Some(
                    g.iter()
                        .zip(x.iter())
                        .map(|(&gv, &xv)| if xv > T::ZERO { gv } else { T::ZERO })
                        .collect(),
                )]
            }),
        )
    }

    /// Natural log; every element must be strictly positive.
    pub fn log(&self) -> Result<Tensor<T>> {
        for (i, &x) in self.data().iter().enumerate() {
            if !(x > T::ZERO) {
                return Err(Error::Numeric(format!(
                    "log: non-positive input {:?} at element {i}",
                    x
                )));
            }
        }
        let data: Vec<T> = self.data().iter().map(|&x| x.ln()).collect();
        let xc = self.clone();
        Ok(Tensor::make_node(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let x = xc.data();
                vec![Some(
                    g.iter().zip(x.iter()).map(|(&gv, &xv)| gv / xv).collect(),
                )]
            }),
        ))
    }

    /// Elementwise exp; fails if the result overflows.
    pub fn exp(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = self.data().iter().map(|&x| x.exp()).collect();
        ensure_finite("exp", &data)?;
        let out_data = data.clone();
        Ok(Tensor::make_node(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                vec![Some(
                    g.iter()
                        .zip(out_data.iter())
                        .map(|(&gv, &yv)| gv * yv)
                        .collect(),
                )]
            }),
        ))
    }

    /// Elementwise power with a constant exponent; fails if the result is
    /// non-finite (negative base with fractional exponent, 0 with negative
    /// exponent).
    pub fn powf(&self, e: f64) -> Result<Tensor<T>> {
        let ev = T::from_f64(e);
        let data: Vec<T> = self.data().iter().map(|&x| x.powf(ev)).collect();
        ensure_finite("powf", &data)?;
        let xc = self.clone();
        Ok(Tensor::make_node(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let x = xc.data();
                let em1 = ev - T::ONE;
                vec![Some(
                    g.iter()
                        .zip(x.iter())
                        .map(|(&gv, &xv)| gv * ev * xv.powf(em1))
                        .collect(),
                )]
            }),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self) -> Result<Tensor<T>> {
        if self.shape().is_empty() {
            return Err(Error::Dimension(
                "softmax_last requires rank >= 1".to_string(),
            ));
        }
        let c = *self.shape().last().unwrap();
        if c == 0 {
            return Err(Error::Dimension("softmax_last over empty axis".to_string()));
        }
        let mut data = vec![T::ZERO; self.numel()];
        for (row, orow) in self.data().chunks_exact(c).zip(data.chunks_exact_mut(c)) {
            let mut m = row[0];
            for &v in row {
                if v > m {
                    m = v;
                }
            }
            let mut z = T::ZERO;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - m).exp();
                z += *o;
            }
            for o in orow.iter_mut() {
                *o = *o / z;
            }
        }
        let y = data.clone();
        Ok(Tensor::make_node(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::ZERO; g.len()];
                for ((yrow, grow), drow) in y
                    .chunks_exact(c)
                    .zip(g.chunks_exact(c))
                    .zip(dx.chunks_exact_mut(c))
                {
                    let mut dot = T::ZERO;
                    for j in 0..c {
                        dot += yrow[j] * grow[j];
                    }
                    for j in 0..c {
                        drow[j] = yrow[j] * (grow[j] - dot);
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Inverted dropout. In training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`, so the
    /// expectation is unchanged; in evaluation mode this is the identity.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, train: bool, rng: &mut R) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability must be in [0, 1), got {p}"
            )));
        }
        if !train || p == 0.0 {
            return Ok(self.clone());
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - p));
        let pt = T::from_f64(p);
        let mask: Vec<T> = (0..self.numel())
            .map(|_| {
                if T::unit_uniform(rng) < pt {
                    T::ZERO
                } else {
                    keep_scale
                }
            })
            .collect();
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| x * m)
            .collect();
        Ok(Tensor::make_node(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                vec![Some(
                    g.iter().zip(mask.iter()).map(|(&gv, &m)| gv * m).collect(),
                )]
            }),
        ))
    }

    /// Maximum over one axis (the axis is removed). Ties route the gradient
    /// to the lowest index.
    pub fn max_over_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "max_over_axis: axis {axis} out of range for shape {:?}",
                shape
            )));
        }
        if shape[axis] == 0 {
            return Err(Error::Dimension(format!(
                "max_over_axis: cannot reduce empty axis {axis} of shape {:?}",
                shape
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);

        let x = self.data();
        let mut data = vec![T::ZERO; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = x[o * len * inner + i];
                let mut best_j = 0usize;
                for j in 1..len {
                    let v = x[(o * len + j) * inner + i];
                    if v > best {
                        best = v;
                        best_j = j;
                    }
                }
                data[o * inner + i] = best;
                argmax[o * inner + i] = best_j;
            }
        }
        let in_numel = self.numel();
        Ok(Tensor::make_node(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::ZERO; in_numel];
                for o in 0..outer {
                    for i in 0..inner {
                        let j = argmax[o * inner + i];
                        dx[(o * len + j) * inner + i] = g[o * inner + i];
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Mean over one axis (the axis is removed).
    pub fn mean_over_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "mean_over_axis: axis {axis} out of range for shape {:?}",
                shape
            )));
        }
        if shape[axis] == 0 {
            return Err(Error::Dimension(format!(
                "mean_over_axis: cannot reduce empty axis {axis} of shape {:?}",
                shape
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);

        let x = self.data();
        let inv = T::ONE / T::from_f64(len as f64);
        let mut data = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += x[(o * len + j) * inner + i];
                }
            }
        }
        for v in data.iter_mut() {
            *v = *v * inv;
        }
        let in_numel = self.numel();
        Ok(Tensor::make_node(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::ZERO; in_numel];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            dx[(o * len + j) * inner + i] = g[o * inner + i] * inv;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Mean over all elements -> scalar.
    pub fn mean_all(&self) -> Result<Tensor<T>> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::Dimension(
                "mean_all over an empty tensor".to_string(),
            ));
        }
        let inv = T::ONE / T::from_f64(n as f64);
        let mut s = T::ZERO;
        for &v in self.data() {
            s += v;
        }
        Ok(Tensor::make_node(
            vec![],
            vec![s * inv],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0] * inv; n])]),
        ))
    }

    /// View with a new shape; element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::Dimension(format!(
                "reshape: {:?} ({} elements) incompatible with {:?} ({} elements)",
                self.shape(),
                self.numel(),
                shape,
                numel(shape)
            )));
        }
        Ok(Tensor::make_node(
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.to_vec())]),
        ))
    }

    /// Concatenate tensors along `axis`. All other axes must match.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".to_string()));
        }
        let rank = parts[0].shape().len();
        if axis >= rank {
            return Err(Error::Dimension(format!(
                "concat: axis {axis} out of range for shape {:?}",
                parts[0].shape()
            )));
        }
        for p in parts {
            if p.shape().len() != rank {
                return Err(Error::Dimension(format!(
                    "concat: rank mismatch between {:?} and {:?}",
                    parts[0].shape(),
                    p.shape()
                )));
            }
            for d in 0..rank {
                if d != axis && p.shape()[d] != parts[0].shape()[d] {
                    return Err(Error::Dimension(format!(
                        "concat: shapes {:?} and {:?} differ on non-concat axis {d}",
                        parts[0].shape(),
                        p.shape()
                    )));
                }
            }
        }
        let mut out_shape = parts[0].shape().to_vec();
        out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();

        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let total_axis = out_shape[axis];
        let mut data = vec![T::ZERO; numel(&out_shape)];
        let mut offset = 0usize;
        let mut spans: Vec<(usize, usize)> = Vec::with_capacity(parts.len());
        for p in parts {
            let pa = p.shape()[axis];
            spans.push((offset, pa));
            let pd = p.data();
            for o in 0..outer {
                let src = &pd[o * pa * inner..(o + 1) * pa * inner];
                let dst_start = (o * total_axis + offset) * inner;
                data[dst_start..dst_start + pa * inner].copy_from_slice(src);
            }
            offset += pa;
        }
        Ok(Tensor::make_node(
            out_shape,
            data,
            parts.to_vec(),
            Box::new(move |g| {
                spans
                    .iter()
                    .map(|&(off, pa)| {
                        let mut pg = vec![T::ZERO; outer * pa * inner];
                        for o in 0..outer {
                            let src_start = (o * total_axis + off) * inner;
                            pg[o * pa * inner..(o + 1) * pa * inner]
                                .copy_from_slice(&g[src_start..src_start + pa * inner]);
                        }
                        Some(pg)
                    })
                    .collect()
            }),
        ))
    }

    /// Gather rows of a 2-D tensor; duplicate indices are allowed and their
    /// gradients accumulate.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor<T>> {
        if self.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "gather_rows requires a rank-2 tensor, got {:?}",
                self.shape()
            )));
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        for &i in indices {
            if i >= r {
                return Err(Error::Index(format!(
                    "gather_rows: row {i} out of range for {r} rows"
                )));
            }
        }
        let x = self.data();
        let mut data = vec![T::ZERO; indices.len() * c];
        for (k, &i) in indices.iter().enumerate() {
            data[k * c..(k + 1) * c].copy_from_slice(&x[i * c..(i + 1) * c]);
        }
        let idx = indices.to_vec();
        Ok(Tensor::make_node(
            vec![indices.len(), c],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::ZERO; r * c];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        dx[i * c + j] += g[k * c + j];
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Leading block `[0..rows, 0..cols]` of a 2-D tensor. The backward pass
    /// zero-pads, so off-block elements of the parent receive exactly zero
    /// gradient.
    pub fn slice_block(&self, rows: usize, cols: usize) -> Result<Tensor<T>> {
        if self.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "slice_block requires a rank-2 tensor, got {:?}",
                self.shape()
            )));
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        if rows > r || cols > c || rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "slice_block: block {rows}x{cols} invalid for tensor {r}x{c}"
            )));
        }
        let x = self.data();
        let mut data = vec![T::ZERO; rows * cols];
        for i in 0..rows {
            data[i * cols..(i + 1) * cols].copy_from_slice(&x[i * c..i * c + cols]);
        }
        Ok(Tensor::make_node(
            vec![rows, cols],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::ZERO; r * c];
                for i in 0..rows {
                    dx[i * c..i * c + cols].copy_from_slice(&g[i * cols..(i + 1) * cols]);
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Leading prefix `[0..len]` of a 1-D tensor.
    pub fn slice_prefix(&self, len: usize) -> Result<Tensor<T>> {
        if self.shape().len() != 1 {
            return Err(Error::Dimension(format!(
                "slice_prefix requires a rank-1 tensor, got {:?}",
                self.shape()
            )));
        }
        let n = self.shape()[0];
        if len > n || len == 0 {
            return Err(Error::Dimension(format!(
                "slice_prefix: length {len} invalid for tensor of {n}"
            )));
        }
        let data = self.data()[..len].to_vec();
        Ok(Tensor::make_node(
            vec![len],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::ZERO; n];
                dx[..len].copy_from_slice(g);
                vec![Some(dx)]
            }),
        ))
    }

    /// Mean cross-entropy between logits `[batch, classes]` and integer
    /// labels, computed with the numerically stable log-sum-exp form.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor<T>> {
        if self.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "cross_entropy requires logits of rank 2, got {:?}",
                self.shape()
            )));
        }
        let (b, c) = (self.shape()[0], self.shape()[1]);
        if b == 0 || c == 0 {
            return Err(Error::Dimension(format!(
                "cross_entropy on empty logits {:?}",
                self.shape()
            )));
        }
        if labels.len() != b {
            return Err(Error::Dimension(format!(
                "cross_entropy: {} labels for batch of {b}",
                labels.len()
            )));
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= c {
                return Err(Error::Index(format!(
                    "cross_entropy: label {l} at row {i} out of range for {c} classes"
                )));
            }
        }
        let x = self.data();
        let inv_b = T::ONE / T::from_f64(b as f64);
        let mut softmax = vec![T::ZERO; b * c];
        let mut loss = T::ZERO;
        for (i, &label) in labels.iter().enumerate() {
            let row = &x[i * c..(i + 1) * c];
            let mut m = row[0];
            for &v in row {
                if v > m {
                    m = v;
                }
            }
            let mut z = T::ZERO;
            let srow = &mut softmax[i * c..(i + 1) * c];
            for (s, &v) in srow.iter_mut().zip(row) {
                *s = (v - m).exp();
                z += *s;
            }
            for s in srow.iter_mut() {
                *s = *s / z;
            }
            // lse = m + ln z; loss_i = lse - x[label]
            loss += m + z.ln() - row[label];
        }
        loss = loss * inv_b;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "cross_entropy: non-finite loss {:?}",
                loss
            )));
        }
        let labels = labels.to_vec();
        Ok(Tensor::make_node(
            vec![],
            vec![loss],
            vec![self.clone()],
            Box::new(move |g| {
                let scale = g[0] * inv_b;
                let mut dx = softmax.clone();
                for (i, &label) in labels.iter().enumerate() {
                    dx[i * c + label] = dx[i * c + label] - T::ONE;
                }
                for v in dx.iter_mut() {
                    *v = *v * scale;
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Mean KL divergence `KL(softmax(teacher) || softmax(student))` over the
    /// batch, from logits `[batch, classes]`. The teacher side is a constant:
    /// no gradient flows to it.
    pub fn kl_divergence(teacher: &Tensor<T>, student: &Tensor<T>) -> Result<Tensor<T>> {
        if teacher.shape() != student.shape() || teacher.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "kl_divergence requires matching rank-2 logits, got {:?} and {:?}",
                teacher.shape(),
                student.shape()
            )));
        }
        let (b, c) = (teacher.shape()[0], teacher.shape()[1]);
        if b == 0 || c == 0 {
            return Err(Error::Dimension(format!(
                "kl_divergence on empty logits {:?}",
                teacher.shape()
            )));
        }
        let inv_b = T::ONE / T::from_f64(b as f64);

        // Log-softmax per row for both sides.
        let log_softmax = |x: &[T]| -> Vec<T> {
            let mut out = vec![T::ZERO; x.len()];
            for (row, orow) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
                let mut m = row[0];
                for &v in row {
                    if v > m {
                        m = v;
                    }
                }
                let mut z = T::ZERO;
                for &v in row {
                    z += (v - m).exp();
                }
                let lse = m + z.ln();
                for (o, &v) in orow.iter_mut().zip(row) {
                    *o = v - lse;
                }
            }
            out
        };
        let ls_t = log_softmax(teacher.data());
        let ls_s = log_softmax(student.data());
        let p_t: Vec<T> = ls_t.iter().map(|&v| v.exp()).collect();
        let p_s: Vec<T> = ls_s.iter().map(|&v| v.exp()).collect();

        let mut kl = T::ZERO;
        for i in 0..b * c {
            kl += p_t[i] * (ls_t[i] - ls_s[i]);
        }
        kl = kl * inv_b;
        if !kl.is_finite() {
            return Err(Error::Numeric(format!(
                "kl_divergence: non-finite value {:?}",
                kl
            )));
        }
        Ok(Tensor::make_node(
            vec![],
            vec![kl],
            vec![teacher.clone(), student.clone()],
            Box::new(move |g| {
                let scale = g[0] * inv_b;
                let ds: Vec<T> = p_s
                    .iter()
                    .zip(p_t.iter())
                    .map(|(&s, &t)| (s - t) * scale)
                    .collect();
                vec![None, Some(ds)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;
    use crate::error::Error;

    const TOL: f64 = 1e-12;

    fn assert_close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= TOL, "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_known_product() {
        // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::new(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_close(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 5]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn add_broadcasts_vector_over_rows() {
        let a = Tensor::<f64>::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::<f64>::new(&[3], vec![10.0, 20.0, 30.0]).unwrap();
        let c = a.add(&b).unwrap();
        assert_close(c.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    }

    #[test]
    fn broadcast_grad_reduces_over_rows() {
        let a = Tensor::<f64>::leaf(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::leaf(&[2], vec![1.0, 1.0]).unwrap();
        let l = a.add(&b).unwrap().mean_all().unwrap();
        l.backward().unwrap();
        assert_close(&a.grad().unwrap(), &[0.25; 4]);
        // Each bias element feeds 2 of the 4 outputs.
        assert_close(&b.grad().unwrap(), &[0.5, 0.5]);
    }

    #[test]
    fn incompatible_broadcast_is_dimension_error() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 4]);
        assert!(matches!(a.add(&b).unwrap_err(), Error::Dimension(_)));
    }

    #[test]
    fn relu_zeroes_negatives_and_gates_grad() {
        let x = Tensor::<f64>::leaf(&[4], vec![-2.0, -0.0, 0.5, 3.0]).unwrap();
        let y = x.relu();
        assert_close(y.data(), &[0.0, 0.0, 0.5, 3.0]);
        y.mean_all().unwrap().backward().unwrap();
        assert_close(&x.grad().unwrap(), &[0.0, 0.0, 0.25, 0.25]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let x = Tensor::<f64>::new(&[2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(x.log().unwrap_err(), Error::Numeric(_)));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let x = Tensor::<f64>::new(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let y = x.softmax_last().unwrap();
        for row in y.data().chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // Shifting a row by a constant leaves softmax unchanged.
        let x2 = Tensor::<f64>::new(&[1, 3], vec![1001.0, 1002.0, 1003.0]).unwrap();
        let y2 = x2.softmax_last().unwrap();
        assert_close(y2.data(), &y.data()[..3]);
    }

    #[test]
    fn max_over_axis_picks_first_of_ties() {
        let x = Tensor::<f64>::leaf(&[1, 3, 2], vec![5.0, 1.0, 2.0, 9.0, 5.0, 9.0]).unwrap();
        let y = x.max_over_axis(1).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_close(y.data(), &[5.0, 9.0]);
        y.mean_all().unwrap().backward().unwrap();
        // Column 0: max 5.0 appears at rows 0 and 2 -> gradient to row 0 only.
        // Column 1: max 9.0 appears at rows 1 and 2 -> gradient to row 1 only.
        assert_close(&x.grad().unwrap(), &[0.5, 0.0, 0.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn mean_over_axis_values() {
        let x = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m0 = x.mean_over_axis(0).unwrap();
        assert_close(m0.data(), &[2.0, 3.0]);
        let m1 = x.mean_over_axis(1).unwrap();
        assert_close(m1.data(), &[1.5, 3.5]);
    }

    #[test]
    fn concat_roundtrip_and_grads() {
        let a = Tensor::<f64>::leaf(&[2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::leaf(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_close(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        c.mean_all().unwrap().backward().unwrap();
        assert_close(&a.grad().unwrap(), &[1.0 / 6.0; 2]);
        assert_close(&b.grad().unwrap(), &[1.0 / 6.0; 4]);
    }

    #[test]
    fn gather_rows_accumulates_duplicate_grads() {
        let x = Tensor::<f64>::leaf(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = x.gather_rows(&[0, 0, 2]).unwrap();
        assert_close(g.data(), &[1.0, 2.0, 1.0, 2.0, 5.0, 6.0]);
        g.mean_all().unwrap().backward().unwrap();
        let gr = x.grad().unwrap();
        assert_close(&gr, &[2.0 / 6.0, 2.0 / 6.0, 0.0, 0.0, 1.0 / 6.0, 1.0 / 6.0]);
    }

    #[test]
    fn gather_rows_out_of_range_is_index_error() {
        let x = Tensor::<f64>::zeros(&[3, 2]);
        assert!(matches!(
            x.gather_rows(&[3]).unwrap_err(),
            Error::Index(_)
        ));
    }

    #[test]
    fn slice_block_is_leading_block_and_grad_zero_pads() {
        let x = Tensor::<f64>::leaf(&[3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let s = x.slice_block(2, 2).unwrap();
        assert_close(s.data(), &[1.0, 2.0, 4.0, 5.0]);
        s.mean_all().unwrap().backward().unwrap();
        let g = x.grad().unwrap();
        assert_close(&g, &[0.25, 0.25, 0.0, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_classes() {
        // All-zero logits over C classes: loss = ln(C) for any labels.
        let x = Tensor::<f64>::new(&[2, 4], vec![0.0; 8]).unwrap();
        let l = x.cross_entropy(&[1, 3]).unwrap();
        assert!((l.item().unwrap() - 4.0f64.ln()).abs() < TOL);
    }

    #[test]
    fn cross_entropy_matches_naive_formula() {
        let logits = vec![0.3, -1.2, 2.0, 0.5, 0.0, -0.7];
        let x = Tensor::<f64>::new(&[2, 3], logits.clone()).unwrap();
        let labels = [2usize, 0usize];
        let l = x.cross_entropy(&labels).unwrap().item().unwrap();
        let mut expect = 0.0;
        for (i, &lab) in labels.iter().enumerate() {
            let row = &logits[i * 3..(i + 1) * 3];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expect += -(row[lab].exp() / z).ln();
        }
        expect /= 2.0;
        assert!((l - expect).abs() < TOL, "{l} vs {expect}");
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        let x1 = Tensor::<f64>::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let x2 = Tensor::<f64>::new(&[1, 3], vec![901.0, 902.0, 903.0]).unwrap();
        let l1 = x1.cross_entropy(&[0]).unwrap().item().unwrap();
        let l2 = x2.cross_entropy(&[0]).unwrap().item().unwrap();
        assert!((l1 - l2).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let x = Tensor::<f64>::zeros(&[1, 3]);
        assert!(matches!(
            x.cross_entropy(&[3]).unwrap_err(),
            Error::Index(_)
        ));
    }

    #[test]
    fn kl_divergence_zero_for_identical_logits() {
        let t = Tensor::<f64>::new(&[2, 5], vec![0.4, -1.0, 2.0, 0.0, 1.1, 3.0, 2.0, 1.0, 0.0, -1.0]).unwrap();
        let s = t.detach();
        let kl = Tensor::kl_divergence(&t, &s).unwrap().item().unwrap();
        assert!(kl.abs() < TOL);
    }

    #[test]
    fn kl_divergence_matches_naive_formula() {
        let tl = vec![0.5, -0.2, 1.0, 0.0, 0.3, -1.0];
        let sl = vec![1.0, 0.0, -0.5, 0.2, 0.1, 0.4];
        let t = Tensor::<f64>::new(&[2, 3], tl.clone()).unwrap();
        let s = Tensor::<f64>::new(&[2, 3], sl.clone()).unwrap();
        let kl = Tensor::kl_divergence(&t, &s).unwrap().item().unwrap();
        let softmax = |row: &[f64]| -> Vec<f64> {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            row.iter().map(|v| v.exp() / z).collect()
        };
        let mut expect = 0.0;
        for i in 0..2 {
            let pt = softmax(&tl[i * 3..(i + 1) * 3]);
            let ps = softmax(&sl[i * 3..(i + 1) * 3]);
            for j in 0..3 {
                expect += pt[j] * (pt[j] / ps[j]).ln();
            }
        }
        expect /= 2.0;
        assert!((kl - expect).abs() < TOL, "{kl} vs {expect}");
    }

    #[test]
    fn kl_divergence_is_nonnegative() {
        let t = Tensor::<f64>::new(&[1, 4], vec![2.0, -1.0, 0.5, 0.0]).unwrap();
        let s = Tensor::<f64>::new(&[1, 4], vec![-2.0, 1.0, 0.0, 0.5]).unwrap();
        let kl = Tensor::kl_divergence(&t, &s).unwrap().item().unwrap();
        assert!(kl > 0.0);
    }

    #[test]
    fn kl_divergence_sends_no_gradient_to_teacher() {
        let t = Tensor::<f64>::leaf(&[1, 3], vec![1.0, 0.0, -1.0]).unwrap();
        let s = Tensor::<f64>::leaf(&[1, 3], vec![0.0, 0.0, 0.0]).unwrap();
        let kl = Tensor::kl_divergence(&t, &s).unwrap();
        kl.backward().unwrap();
        assert!(t.grad().is_none());
        assert!(s.grad().is_some());
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales() {
        use rand::SeedableRng;
        let x = Tensor::<f64>::new(&[1000], vec![1.0; 1000]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let y = x.dropout(0.3, false, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
        let z = x.dropout(0.3, true, &mut rng).unwrap();
        let kept = z.data().iter().filter(|v| **v != 0.0).count();
        // Survivors carry 1/(1-p).
        for &v in z.data() {
            assert!(v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12);
        }
        // Keep rate should be near 0.7 for 1000 draws.
        assert!((600..=800).contains(&kept), "kept {kept}");
    }

    #[test]
    fn dropout_rejects_bad_probability() {
        use rand::SeedableRng;
        let x = Tensor::<f64>::zeros(&[4]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(x.dropout(1.0, true, &mut rng).is_err());
        assert!(x.dropout(-0.1, true, &mut rng).is_err());
    }

    #[test]
    fn powf_domain_error_on_negative_base() {
        let x = Tensor::<f64>::new(&[1], vec![-1.0]).unwrap();
        assert!(matches!(x.powf(0.5).unwrap_err(), Error::Numeric(_)));
    }

    #[test]
    fn exp_overflow_is_numeric_error() {
        let x = Tensor::<f64>::new(&[1], vec![1e10]).unwrap();
        assert!(matches!(x.exp().unwrap_err(), Error::Numeric(_)));
    }
}
