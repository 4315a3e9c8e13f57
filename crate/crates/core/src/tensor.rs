//! Dense tensors, factor sets, and the products that connect them.
//!
//! Layout is row-major everywhere: the last index varies fastest. The
//! Khatri-Rao product uses the matching convention, so column `i` of
//! `khatri_rao(U, V)` is the row-major flattening of `u_i ⊗ v_i`, and
//! flattening a tensor turns its factor matrices into Khatri-Rao products of
//! the grouped factors.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Order-ℓ real tensor with explicit dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::shape("tensor order must be at least 1"));
    }
    if dims.contains(&0) {
        return Err(Error::shape(format!("every dimension must be positive, got {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape(format!("dimensions {dims:?} overflow")))
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = checked_len(&dims)?;
        if data.len() != len {
            return Err(Error::shape(format!(
                "data length {} does not match dims {:?} (expected {len})",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = checked_len(&dims)?;
        Ok(Self { dims, data: vec![0.0; len] })
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.dims)
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index
            .iter()
            .zip(self.strides())
            .map(|(i, s)| i * s)
            .sum()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &DenseTensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "cannot add tensors of dims {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Self { dims: vec![r, c], data }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.order() != 2 {
            return Err(Error::shape(format!("expected an order-2 tensor, got order {}", self.order())));
        }
        Ok(Matrix::from_row_slice(self.dims[0], self.dims[1], &self.data))
    }

    /// Mode-`mode` unfolding: a `dims[mode] × (∏ other dims)` matrix whose
    /// columns run over the remaining indices in row-major order.
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        if mode >= self.order() {
            return Err(Error::shape(format!("mode {mode} out of range for order {}", self.order())));
        }
        let rows = self.dims[mode];
        let cols = self.len() / rows;
        let outer: usize = self.dims[..mode].iter().product();
        let inner: usize = self.dims[mode + 1..].iter().product();
        let mut m = Matrix::zeros(rows, cols);
        for o in 0..outer {
            for r in 0..rows {
                let base = (o * rows + r) * inner;
                for i in 0..inner {
                    m[(r, o * inner + i)] = self.data[base + i];
                }
            }
        }
        Ok(m)
    }

    /// Reorders axes: axis `t` of the result is axis `perm[t]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<DenseTensor> {
        let l = self.order();
        let mut seen = vec![false; l];
        if perm.len() != l || perm.iter().any(|&p| p >= l || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(format!("{perm:?} is not a permutation of {l} axes")));
        }
        let new_dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let old_strides = self.strides();
        let src_strides: Vec<usize> = perm.iter().map(|&p| old_strides[p]).collect();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; l];
        let mut src = 0usize;
        for _ in 0..self.len() {
            out.push(self.data[src]);
            for ax in (0..l).rev() {
                idx[ax] += 1;
                src += src_strides[ax];
                if idx[ax] < new_dims[ax] {
                    break;
                }
                src -= src_strides[ax] * new_dims[ax];
                idx[ax] = 0;
            }
        }
        DenseTensor::new(new_dims, out)
    }
}

pub(crate) fn row_major_strides(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    strides
}

/// Entry `(i₁,…,i_ℓ)` of the result is `∏_j v_j[i_j]`.
pub fn outer_product<V: AsRef<[f64]>>(vectors: &[V]) -> Result<DenseTensor> {
    if vectors.is_empty() {
        return Err(Error::invalid("outer product of an empty vector list"));
    }
    let dims: Vec<usize> = vectors.iter().map(|v| v.as_ref().len()).collect();
    let len = checked_len(&dims)?;
    let mut data = Vec::with_capacity(len);
    data.extend_from_slice(vectors[0].as_ref());
    for v in &vectors[1..] {
        data = kron_vec(&data, v.as_ref());
    }
    DenseTensor::new(dims, data)
}

/// Row-major Kronecker product of two vectors.
pub fn kron_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
    out
}

/// Columnwise Kronecker product: column `i` is `u_i ⊗ v_i`, row `a·n + b`
/// holding `U[a,i]·V[b,i]`.
pub fn khatri_rao(u: &Matrix, v: &Matrix) -> Result<Matrix> {
    if u.ncols() != v.ncols() {
        return Err(Error::shape(format!(
            "Khatri-Rao needs equal column counts, got {} and {}",
            u.ncols(),
            v.ncols()
        )));
    }
    let (m, n, r) = (u.nrows(), v.nrows(), u.ncols());
    let mut out = Matrix::zeros(m * n, r);
    for i in 0..r {
        for a in 0..m {
            let ua = u[(a, i)];
            for b in 0..n {
                out[(a * n + b, i)] = ua * v[(b, i)];
            }
        }
    }
    Ok(out)
}

/// Left-to-right Khatri-Rao product of a nonempty list of matrices.
pub fn khatri_rao_all(mats: &[&Matrix]) -> Result<Matrix> {
    let (first, rest) = mats
        .split_first()
        .ok_or_else(|| Error::invalid("Khatri-Rao product of an empty list"))?;
    rest.iter().try_fold((*first).clone(), |acc, m| khatri_rao(&acc, m))
}

fn validate_partition(order: usize, groups: &[Vec<usize>]) -> Result<()> {
    let mut seen = vec![false; order];
    for g in groups {
        if g.is_empty() {
            return Err(Error::invalid("mode groups must be nonempty"));
        }
        for &m in g {
            if m >= order || seen[m] {
                return Err(Error::invalid(format!(
                    "{groups:?} is not a partition of the {order} modes"
                )));
            }
            seen[m] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::invalid(format!("{groups:?} does not cover all {order} modes")));
    }
    Ok(())
}

/// Regroups modes: axis `t` of the result merges the modes of `groups[t]`
/// (in the listed order) into one axis of size `∏ dims[j]`.
pub fn flatten(t: &DenseTensor, groups: &[Vec<usize>]) -> Result<DenseTensor> {
    validate_partition(t.order(), groups)?;
    let perm: Vec<usize> = groups.iter().flatten().copied().collect();
    let permuted = t.permute(&perm)?;
    let dims: Vec<usize> = groups
        .iter()
        .map(|g| g.iter().map(|&j| t.dims()[j]).product())
        .collect();
    DenseTensor::new(dims, permuted.into_data())
}

/// Mode-`mode` product: every mode fiber is multiplied by `m`, so the
/// result has `m.nrows()` entries along that axis.
pub fn mode_product(t: &DenseTensor, mode: usize, m: &Matrix) -> Result<DenseTensor> {
    let unf = t.unfold(mode)?;
    if m.ncols() != unf.nrows() {
        return Err(Error::shape(format!(
            "mode product of a {}x{} matrix with mode {mode} of size {}",
            m.nrows(),
            m.ncols(),
            unf.nrows()
        )));
    }
    let prod = m * unf;
    let mut dims = t.dims().to_vec();
    dims[mode] = m.nrows();
    let outer: usize = dims[..mode].iter().product();
    let inner: usize = dims[mode + 1..].iter().product();
    let rows = dims[mode];
    let mut data = vec![0.0; outer * rows * inner];
    for o in 0..outer {
        for r in 0..rows {
            let base = (o * rows + r) * inner;
            for i in 0..inner {
                data[base + i] = prod[(r, o * inner + i)];
            }
        }
    }
    DenseTensor::new(dims, data)
}

/// `M[i,j] = Σ_k T[i,j,k]·a[k]`.
pub fn contract_to_matrix(t: &DenseTensor, a: &[f64]) -> Result<Matrix> {
    if t.order() != 3 {
        return Err(Error::shape(format!("contract_to_matrix needs order 3, got {}", t.order())));
    }
    let (d0, d1, d2) = (t.dims()[0], t.dims()[1], t.dims()[2]);
    if a.len() != d2 {
        return Err(Error::shape(format!("vector of length {} against mode of size {d2}", a.len())));
    }
    let data = t.data();
    Ok(Matrix::from_fn(d0, d1, |i, j| {
        let base = (i * d1 + j) * d2;
        data[base..base + d2].iter().zip(a).map(|(x, y)| x * y).sum()
    }))
}

/// Contracts a single mode with `x`, giving an order ℓ−1 tensor
/// (order-1 tensors contract to a 1-element order-1 tensor).
pub fn contract_mode(t: &DenseTensor, mode: usize, x: &[f64]) -> Result<DenseTensor> {
    if mode >= t.order() {
        return Err(Error::shape(format!("mode {mode} out of range for order {}", t.order())));
    }
    if x.len() != t.dims()[mode] {
        return Err(Error::shape(format!(
            "vector of length {} against mode {mode} of size {}",
            x.len(),
            t.dims()[mode]
        )));
    }
    let outer: usize = t.dims()[..mode].iter().product();
    let inner: usize = t.dims()[mode + 1..].iter().product();
    let dm = t.dims()[mode];
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for (k, &xk) in x.iter().enumerate() {
            let src = &t.data()[(o * dm + k) * inner..(o * dm + k + 1) * inner];
            for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *dst += xk * s;
            }
        }
    }
    let mut dims: Vec<usize> = t.dims().to_vec();
    dims.remove(mode);
    if dims.is_empty() {
        dims.push(1);
    }
    DenseTensor::new(dims, out)
}

/// Partial multilinear form `T(x₁,…,x_k,·,…,·)` contracting the leading modes.
pub fn multilinear_partial<V: AsRef<[f64]>>(t: &DenseTensor, leading: &[V]) -> Result<DenseTensor> {
    if leading.len() > t.order() {
        return Err(Error::shape(format!(
            "{} vectors supplied for an order-{} tensor",
            leading.len(),
            t.order()
        )));
    }
    let mut cur = t.clone();
    for x in leading {
        cur = contract_mode(&cur, 0, x.as_ref())?;
    }
    Ok(cur)
}

/// Full multilinear form `Σ T[i₁…i_ℓ] ∏ x_j[i_j]`.
pub fn multilinear_apply<V: AsRef<[f64]>>(t: &DenseTensor, xs: &[V]) -> Result<f64> {
    if xs.len() != t.order() {
        return Err(Error::shape(format!(
            "{} vectors supplied for an order-{} tensor",
            xs.len(),
            t.order()
        )));
    }
    let last = multilinear_partial(t, xs)?;
    Ok(last.data()[0])
}

/// A rank-R decomposition: one `dims[j] × R` factor matrix per mode plus a
/// scalar weight per term.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    factors: Vec<Matrix>,
    weights: Vec<f64>,
}

impl FactorSet {
    pub fn new(factors: Vec<Matrix>, weights: Vec<f64>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::shape("a factor set needs at least one mode"));
        }
        let rank = weights.len();
        for (j, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(Error::shape(format!(
                    "factor {j} has {} columns but there are {rank} weights",
                    f.ncols()
                )));
            }
            if f.nrows() == 0 {
                return Err(Error::shape(format!("factor {j} has no rows")));
            }
        }
        Ok(Self { factors, weights })
    }

    /// Unit weights; scale lives in the factor columns.
    pub fn from_factors(factors: Vec<Matrix>) -> Result<Self> {
        let rank = factors.first().map_or(0, |f| f.ncols());
        Self::new(factors, vec![1.0; rank])
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &Matrix {
        &self.factors[mode]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn column(&self, mode: usize, term: usize) -> Vec<f64> {
        self.factors[mode].column(term).iter().copied().collect()
    }

    /// The weighted rank-one tensor of term `r`.
    pub fn term(&self, r: usize) -> Result<DenseTensor> {
        let cols: Vec<Vec<f64>> = (0..self.order()).map(|j| self.column(j, r)).collect();
        Ok(outer_product(&cols)?.scaled(self.weights[r]))
    }

    /// Unit columns, the first non-negligible entry of every column positive,
    /// and all scale and sign carried by the weights.
    pub fn canonicalize(&self) -> FactorSet {
        let mut factors = self.factors.clone();
        let mut weights = self.weights.clone();
        for r in 0..self.rank() {
            for f in factors.iter_mut() {
                let mut col = f.column_mut(r);
                let norm = col.norm();
                if norm == 0.0 {
                    weights[r] = 0.0;
                    continue;
                }
                let amax = col.amax();
                let lead = col
                    .iter()
                    .copied()
                    .find(|x| x.abs() > 1e-12 * amax)
                    .unwrap_or(1.0);
                let s = if lead < 0.0 { -norm } else { norm };
                col /= s;
                weights[r] *= s;
            }
        }
        FactorSet { factors, weights }
    }

    /// Moves the weights into the mode-`mode` factor columns.
    pub fn absorb_weights(&self, mode: usize) -> FactorSet {
        let mut factors = self.factors.clone();
        for (r, &w) in self.weights.iter().enumerate() {
            factors[mode].column_mut(r).scale_mut(w);
        }
        FactorSet { factors, weights: vec![1.0; self.rank()] }
    }

    /// Factor set of `flatten(reconstruct(self), groups)`: grouped factors
    /// are combined by Khatri-Rao products.
    pub fn flatten(&self, groups: &[Vec<usize>]) -> Result<FactorSet> {
        validate_partition(self.order(), groups)?;
        let factors = groups
            .iter()
            .map(|g| {
                let mats: Vec<&Matrix> = g.iter().map(|&j| &self.factors[j]).collect();
                khatri_rao_all(&mats)
            })
            .collect::<Result<Vec<_>>>()?;
        FactorSet::new(factors, self.weights.clone())
    }
}

/// `Σ_r weights[r] · ⊗_j factors[j][:, r]`.
pub fn reconstruct(fs: &FactorSet) -> Result<DenseTensor> {
    let mut out = DenseTensor::zeros(fs.dims())?;
    for r in 0..fs.rank() {
        let term = fs.term(r)?;
        out.axpy(1.0, &term)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn outer_product_basis() {
        let t = outer_product(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(t.dims(), &[2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn outer_product_scalars() {
        let t = outer_product(&[vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(t.dims(), &[1, 1, 1]);
        assert_eq!(t.data(), &[24.0]);
    }

    #[test]
    fn outer_product_sign_pattern() {
        let t = outer_product(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        assert_eq!(t.data(), &[1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn outer_product_rejects_empty_list() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(outer_product(&empty), Err(Error::InvalidArgument(_))));
        assert!(outer_product(&[Vec::<f64>::new()]).is_err());
    }

    #[test]
    fn reconstruct_rank_one() {
        let e1 = m(2, 1, &[1.0, 0.0]);
        let fs = FactorSet::new(vec![e1.clone(), e1], vec![2.0]).unwrap();
        let t = reconstruct(&fs).unwrap();
        assert_eq!(t.data(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn reconstruct_diagonal() {
        let id = Matrix::identity(2, 2);
        let fs = FactorSet::new(vec![id.clone(), id.clone(), id], vec![1.0, 2.0]).unwrap();
        let t = reconstruct(&fs).unwrap();
        for (k, &v) in t.data().iter().enumerate() {
            let expect = match k {
                0 => 1.0,
                7 => 2.0,
                _ => 0.0,
            };
            assert_eq!(v, expect, "entry {k}");
        }
    }

    #[test]
    fn factor_set_rejects_mismatched_columns() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(FactorSet::new(vec![a, b], vec![1.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn khatri_rao_examples() {
        let e1 = m(2, 1, &[1.0, 0.0]);
        let e2 = m(2, 1, &[0.0, 1.0]);
        let k = khatri_rao(&e1, &e2).unwrap();
        assert_eq!(k.as_slice(), &[0.0, 1.0, 0.0, 0.0]);

        let id = Matrix::identity(2, 2);
        let k = khatri_rao(&id, &id).unwrap();
        assert_eq!(k.column(0).as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(k.column(1).as_slice(), &[0.0, 0.0, 0.0, 1.0]);

        assert!(khatri_rao(&id, &e1).is_err());
    }

    #[test]
    fn khatri_rao_matches_outer_product() {
        let u = m(3, 2, &[0.3, -1.2, 2.0, 0.5, -0.7, 1.1]);
        let v = m(3, 2, &[1.5, 0.2, -0.4, 0.9, 0.8, -2.1]);
        let k = khatri_rao(&u, &v).unwrap();
        for i in 0..2 {
            let ui: Vec<f64> = u.column(i).iter().copied().collect();
            let vi: Vec<f64> = v.column(i).iter().copied().collect();
            let op = outer_product(&[ui, vi]).unwrap();
            assert_eq!(k.column(i).as_slice(), op.data());
        }
    }

    #[test]
    fn flatten_order_three_is_unfolding_transpose() {
        let data: Vec<f64> = (0..24).map(|x| x as f64).collect();
        let t = DenseTensor::new(vec![2, 3, 4], data).unwrap();
        let f = flatten(&t, &[vec![0, 1], vec![2]]).unwrap();
        assert_eq!(f.dims(), &[6, 4]);
        let unf = t.unfold(2).unwrap().transpose();
        assert_eq!(f.to_matrix().unwrap(), unf);
    }

    #[test]
    fn flatten_rank_one_order_five() {
        let a: Vec<Vec<f64>> = (0..5).map(|j| vec![1.0 + j as f64, -0.5 * j as f64, 0.25]).collect();
        let t = outer_product(&a).unwrap();
        let f = flatten(&t, &[vec![0, 1], vec![2, 3], vec![4]]).unwrap();
        let expect = outer_product(&[
            kron_vec(&a[0], &a[1]),
            kron_vec(&a[2], &a[3]),
            a[4].clone(),
        ])
        .unwrap();
        assert_eq!(f.dims(), &[9, 9, 3]);
        for (x, y) in f.data().iter().zip(expect.data()) {
            assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
    }

    #[test]
    fn flatten_rejects_bad_partitions() {
        let t = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        assert!(flatten(&t, &[vec![0, 1], vec![1, 2]]).is_err());
        assert!(flatten(&t, &[vec![0, 1]]).is_err());
        assert!(flatten(&t, &[vec![0, 1, 2], vec![]]).is_err());
    }

    #[test]
    fn contract_examples() {
        let id = Matrix::identity(2, 2);
        let fs = FactorSet::new(vec![id.clone(), id.clone(), id], vec![1.0, 2.0]).unwrap();
        let t = reconstruct(&fs).unwrap();
        let c = contract_to_matrix(&t, &[1.0, 0.0]).unwrap();
        assert_eq!(c, m(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let z = contract_to_matrix(&t, &[0.0, 0.0]).unwrap();
        assert_eq!(z, Matrix::zeros(2, 2));
        assert!(contract_to_matrix(&t, &[1.0]).is_err());
    }

    #[test]
    fn contract_matches_triple_loop() {
        let data: Vec<f64> = (0..30).map(|x| ((x * 7919) % 13) as f64 - 6.0).collect();
        let t = DenseTensor::new(vec![2, 3, 5], data).unwrap();
        let a = [0.5, -1.0, 2.0, 0.25, 3.0];
        let c = contract_to_matrix(&t, &a).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let mut s = 0.0;
                for (k, ak) in a.iter().enumerate() {
                    s += t.get(&[i, j, k]) * ak;
                }
                assert_eq!(c[(i, j)], s);
            }
        }
    }

    #[test]
    fn multilinear_rank_one_and_basis() {
        let a = vec![vec![1.0, 2.0], vec![-1.0, 0.5, 3.0], vec![2.0, 2.0]];
        let t = outer_product(&a).unwrap();
        let x = vec![vec![0.5, 1.0], vec![1.0, 1.0, -1.0], vec![3.0, -1.0]];
        let expect: f64 = a
            .iter()
            .zip(&x)
            .map(|(ai, xi)| ai.iter().zip(xi).map(|(p, q)| p * q).sum::<f64>())
            .product();
        assert!((multilinear_apply(&t, &x).unwrap() - expect).abs() < 1e-12);

        let e = vec![vec![0.0, 1.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(multilinear_apply(&t, &e).unwrap(), t.get(&[1, 2, 0]));
        assert!(multilinear_apply(&t, &x[..2]).is_err());
    }

    #[test]
    fn partial_then_full_equals_full() {
        let data: Vec<f64> = (0..27).map(|x| ((x * 31) % 11) as f64 * 0.3 - 1.5).collect();
        let t = DenseTensor::new(vec![3, 3, 3], data).unwrap();
        let xs = vec![vec![0.2, -1.0, 0.7], vec![1.1, 0.4, -0.3], vec![-0.6, 0.9, 2.0]];
        let p = multilinear_partial(&t, &xs[..1]).unwrap();
        assert_eq!(p.dims(), &[3, 3]);
        let full_after = multilinear_apply(&p, &xs[1..]).unwrap();
        let full = multilinear_apply(&t, &xs).unwrap();
        assert!((full - full_after).abs() < 1e-13);
    }

    #[test]
    fn canonical_form_is_unique_up_to_scale_and_sign() {
        let u = m(2, 1, &[-2.0, 1.0]);
        let v = m(3, 1, &[0.0, -3.0, 4.0]);
        let fs = FactorSet::new(vec![u, v], vec![0.5]).unwrap().canonicalize();
        assert!((fs.factor(0).column(0).norm() - 1.0).abs() < 1e-15);
        assert!(fs.factor(0)[(0, 0)] > 0.0);
        assert!(fs.factor(1)[(1, 0)] > 0.0);
        // 0.5 · (−√5) · (−5)
        assert!((fs.weights()[0] - 0.5 * 5f64.sqrt() * 5.0).abs() < 1e-12);
    }

    #[test]
    fn mode_product_matches_factor_action() {
        let a = vec![vec![1.0, 2.0], vec![0.5, -1.0, 3.0], vec![2.0, 1.0]];
        let t = outer_product(&a).unwrap();
        let m = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 2.0, 0.0]);
        let got = mode_product(&t, 1, &m).unwrap();
        let mapped: Vec<f64> = (m * nalgebra::DVector::from_vec(a[1].clone())).iter().copied().collect();
        let want = outer_product(&[a[0].clone(), mapped, a[2].clone()]).unwrap();
        assert_eq!(got, want);
        let back = DenseTensor::new(vec![2, 3, 2], t.data().to_vec()).unwrap();
        assert_eq!(mode_product(&back, 0, &Matrix::identity(2, 2)).unwrap(), back);
    }

    #[test]
    fn permute_swaps_axes() {
        let t = DenseTensor::new(vec![2, 3], (0..6).map(|x| x as f64).collect()).unwrap();
        let p = t.permute(&[1, 0]).unwrap();
        assert_eq!(p.to_matrix().unwrap(), t.to_matrix().unwrap().transpose());
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-2.0f64..2.0, rows * cols)
            .prop_map(move |v| Matrix::from_row_slice(rows, cols, &v))
    }

    proptest! {
        #[test]
        fn khatri_rao_column_norms_multiply(u in small_matrix(3, 4), v in small_matrix(2, 4)) {
            let k = khatri_rao(&u, &v).unwrap();
            for i in 0..4 {
                let lhs = k.column(i).norm();
                let rhs = u.column(i).norm() * v.column(i).norm();
                prop_assert!((lhs - rhs).abs() <= 1e-14 * rhs.max(1e-300) + 1e-300);
            }
        }

        #[test]
        fn contraction_is_linear(
            data in proptest::collection::vec(-1.0f64..1.0, 18),
            a in proptest::collection::vec(-1.0f64..1.0, 3),
            b in proptest::collection::vec(-1.0f64..1.0, 3),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let t = DenseTensor::new(vec![2, 3, 3], data).unwrap();
            let comb: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
            let lhs = contract_to_matrix(&t, &comb).unwrap();
            let rhs = contract_to_matrix(&t, &a).unwrap() * alpha + contract_to_matrix(&t, &b).unwrap() * beta;
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn flatten_commutes_with_reconstruct(
            f0 in small_matrix(3, 3), f1 in small_matrix(3, 3),
            f2 in small_matrix(3, 3), f3 in small_matrix(3, 3),
            w in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let fs = FactorSet::new(vec![f0, f1, f2, f3], w).unwrap();
            let groups = vec![vec![0], vec![2, 1], vec![3]];
            let lhs = flatten(&reconstruct(&fs).unwrap(), &groups).unwrap();
            let rhs = reconstruct(&fs.flatten(&groups).unwrap()).unwrap();
            let scale = lhs.max_abs().max(1e-300);
            for (x, y) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((x - y).abs() <= 1e-12 * scale);
            }
        }
    }
}
