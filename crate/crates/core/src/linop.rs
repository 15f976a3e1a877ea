//! Matrix-free linear operators.
//!
//! Every operator is a matched forward/adjoint pair: the adjoint is the exact
//! transpose of the discretized forward map. Operators are immutable once
//! built and may be applied concurrently from several threads.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::vecops;

/// Default cap on `rows * cols` for [`materialize_dense`].
pub const DEFAULT_DENSE_CAP: usize = 10_000_000;

pub type MapRef = Arc<dyn LinearMap>;

/// A linear map `R^n -> R^m` given by its action and the action of its
/// transpose.
///
/// Implementors provide the unchecked `*_into` kernels; callers normally go
/// through [`LinearMap::apply`] and [`LinearMap::apply_adjoint`], which
/// validate dimensions.
pub trait LinearMap: Send + Sync {
    fn domain_dim(&self) -> usize;
    fn range_dim(&self) -> usize;
    fn label(&self) -> String;

    /// `out = A x`. `x.len() == domain_dim()`, `out.len() == range_dim()`.
    fn forward_into(&self, x: &[f64], out: &mut [f64]);

    /// `out = A^T y`. `y.len() == range_dim()`, `out.len() == domain_dim()`.
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("apply (domain)", self.domain_dim(), x.len())?;
        let mut out = vec![0.0; self.range_dim()];
        self.forward_into(x, &mut out);
        Ok(out)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("apply_adjoint (range)", self.range_dim(), y.len())?;
        let mut out = vec![0.0; self.domain_dim()];
        self.adjoint_into(y, &mut out);
        Ok(out)
    }
}

impl<T: LinearMap + ?Sized> LinearMap for Arc<T> {
    fn domain_dim(&self) -> usize {
        (**self).domain_dim()
    }
    fn range_dim(&self) -> usize {
        (**self).range_dim()
    }
    fn label(&self) -> String {
        (**self).label()
    }
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).forward_into(x, out)
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        (**self).adjoint_into(y, out)
    }
}

/// `A^T A x`, the normal operator used by the power methods.
pub fn normal_apply(map: &dyn LinearMap, x: &[f64]) -> Vec<f64> {
    let mut ax = vec![0.0; map.range_dim()];
    map.forward_into(x, &mut ax);
    let mut out = vec![0.0; map.domain_dim()];
    map.adjoint_into(&ax, &mut out);
    out
}

#[derive(Debug, Clone)]
pub struct Identity {
    n: usize,
}

impl Identity {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl LinearMap for Identity {
    fn domain_dim(&self) -> usize {
        self.n
    }
    fn range_dim(&self) -> usize {
        self.n
    }
    fn label(&self) -> String {
        format!("identity({})", self.n)
    }
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
}

#[derive(Debug, Clone)]
pub struct ZeroMap {
    m: usize,
    n: usize,
}

impl ZeroMap {
    pub fn new(m: usize, n: usize) -> Self {
        Self { m, n }
    }
}

impl LinearMap for ZeroMap {
    fn domain_dim(&self) -> usize {
        self.n
    }
    fn range_dim(&self) -> usize {
        self.m
    }
    fn label(&self) -> String {
        format!("zero({}x{})", self.m, self.n)
    }
    fn forward_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn adjoint_into(&self, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Diagonal operator; also used for 0/1 masks and diagonal step matrices.
#[derive(Debug, Clone)]
pub struct DiagonalMap {
    diag: Vec<f64>,
    label: String,
}

impl DiagonalMap {
    pub fn new(diag: Vec<f64>) -> Self {
        Self {
            diag,
            label: "diagonal".into(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }
}

impl LinearMap for DiagonalMap {
    fn domain_dim(&self) -> usize {
        self.diag.len()
    }
    fn range_dim(&self) -> usize {
        self.diag.len()
    }
    fn label(&self) -> String {
        self.label.clone()
    }
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, xi), d) in out.iter_mut().zip(x).zip(&self.diag) {
            *o = d * xi;
        }
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        self.forward_into(y, out)
    }
}

/// Dense matrix operator, intended for small test systems and toy problems.
#[derive(Debug, Clone)]
pub struct DenseMap {
    mat: DMatrix<f64>,
}

impl DenseMap {
    pub fn new(mat: DMatrix<f64>) -> Self {
        Self { mat }
    }

    /// Build from row-major data.
    pub fn from_rows(m: usize, n: usize, data: &[f64]) -> Result<Self> {
        check_len("DenseMap::from_rows", m * n, data.len())?;
        Ok(Self {
            mat: DMatrix::from_row_slice(m, n, data),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }
}

impl LinearMap for DenseMap {
    fn domain_dim(&self) -> usize {
        self.mat.ncols()
    }
    fn range_dim(&self) -> usize {
        self.mat.nrows()
    }
    fn label(&self) -> String {
        format!("dense({}x{})", self.mat.nrows(), self.mat.ncols())
    }
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.mat.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.mat.column(j).iter().zip(y).map(|(a, b)| a * b).sum();
        }
    }
}

/// `w * A`.
#[derive(Clone)]
pub struct ScaledMap {
    weight: f64,
    inner: MapRef,
}

impl ScaledMap {
    pub fn new(weight: f64, inner: MapRef) -> Self {
        Self { weight, inner }
    }
}

impl LinearMap for ScaledMap {
    fn domain_dim(&self) -> usize {
        self.inner.domain_dim()
    }
    fn range_dim(&self) -> usize {
        self.inner.range_dim()
    }
    fn label(&self) -> String {
        format!("{}*{}", self.weight, self.inner.label())
    }
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        self.inner.forward_into(x, out);
        vecops::scale(self.weight, out);
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        self.inner.adjoint_into(y, out);
        vecops::scale(self.weight, out);
    }
}

/// `outer * inner`.
#[derive(Clone)]
pub struct ComposedMap {
    outer: MapRef,
    inner: MapRef,
}

impl ComposedMap {
    pub fn new(outer: MapRef, inner: MapRef) -> Result<Self> {
        check_len(
            "compose (outer domain vs inner range)",
            outer.domain_dim(),
            inner.range_dim(),
        )?;
        Ok(Self { outer, inner })
    }
}

impl LinearMap for ComposedMap {
    fn domain_dim(&self) -> usize {
        self.inner.domain_dim()
    }
    fn range_dim(&self) -> usize {
        self.outer.range_dim()
    }
    fn label(&self) -> String {
        format!("{}.{}", self.outer.label(), self.inner.label())
    }
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        let mut mid = vec![0.0; self.inner.range_dim()];
        self.inner.forward_into(x, &mut mid);
        self.outer.forward_into(&mid, out);
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        let mut mid = vec![0.0; self.outer.domain_dim()];
        self.outer.adjoint_into(y, &mut mid);
        self.inner.adjoint_into(&mid, out);
    }
}

/// Operator defined by a pair of closures. Nothing ties the two together;
/// use [`adjoint_dot_test`] to check that they are transposes.
pub struct FnMap<F, G> {
    m: usize,
    n: usize,
    label: String,
    forward: F,
    adjoint: G,
}

impl<F, G> FnMap<F, G>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(m: usize, n: usize, label: impl Into<String>, forward: F, adjoint: G) -> Self {
        Self {
            m,
            n,
            label: label.into(),
            forward,
            adjoint,
        }
    }
}

impl<F, G> LinearMap for FnMap<F, G>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn domain_dim(&self) -> usize {
        self.n
    }
    fn range_dim(&self) -> usize {
        self.m
    }
    fn label(&self) -> String {
        self.label.clone()
    }
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        (self.forward)(x, out)
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        (self.adjoint)(y, out)
    }
}

/// Vertical stack `[w_1 A_1; w_2 A_2; ...]` over a shared domain.
///
/// Weights are kept apart from the blocks so a normalization such as
/// `nu = ||X|| / ||D||` can be changed without rebuilding the operators.
#[derive(Clone)]
pub struct StackedMap {
    blocks: Vec<(f64, MapRef)>,
    offsets: Vec<usize>,
}

impl StackedMap {
    pub fn new(blocks: Vec<(f64, MapRef)>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::invalid("stack requires at least one block"))?;
        let n = first.1.domain_dim();
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        offsets.push(0);
        for (w, map) in &blocks {
            check_len("stack (block domain)", n, map.domain_dim())?;
            if !(*w > 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!(
                    "stack weight must be positive and finite, got {w}"
                )));
            }
            offsets.push(offsets.last().unwrap() + map.range_dim());
        }
        Ok(Self { blocks, offsets })
    }

    pub fn blocks(&self) -> &[(f64, MapRef)] {
        &self.blocks
    }

    pub fn weight(&self, block: usize) -> f64 {
        self.blocks[block].0
    }

    pub fn set_weight(&mut self, block: usize, weight: f64) -> Result<()> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::invalid(format!(
                "stack weight must be positive and finite, got {weight}"
            )));
        }
        self.blocks[block].0 = weight;
        Ok(())
    }

    /// Range offsets: block `i` occupies `offsets()[i]..offsets()[i + 1]`.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block_range(&self, block: usize) -> std::ops::Range<usize> {
        self.offsets[block]..self.offsets[block + 1]
    }
}

impl LinearMap for StackedMap {
    fn domain_dim(&self) -> usize {
        self.blocks[0].1.domain_dim()
    }
    fn range_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }
    fn label(&self) -> String {
        let parts: Vec<String> = self.blocks.iter().map(|(w, m)| format!("{w}*{}", m.label())).collect();
        format!("[{}]", parts.join("; "))
    }
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, (w, map)) in self.blocks.iter().enumerate() {
            let seg = &mut out[self.offsets[i]..self.offsets[i + 1]];
            map.forward_into(x, seg);
            if *w != 1.0 {
                vecops::scale(*w, seg);
            }
        }
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut tmp = vec![0.0; out.len()];
        for (i, (w, map)) in self.blocks.iter().enumerate() {
            map.adjoint_into(&y[self.offsets[i]..self.offsets[i + 1]], &mut tmp);
            vecops::axpy(*w, &tmp, out);
        }
    }
}

/// Convenience wrapper matching the `stack(blocks)` operation.
pub fn stack(blocks: Vec<(f64, MapRef)>) -> Result<StackedMap> {
    StackedMap::new(blocks)
}

/// Dense copy of `map`, column `j` = `map(e_j)`. Test facility only.
pub fn materialize_dense(map: &dyn LinearMap, cap: usize) -> Result<DMatrix<f64>> {
    let (m, n) = (map.range_dim(), map.domain_dim());
    let entries = m.saturating_mul(n);
    if entries > cap {
        return Err(Error::DenseCapExceeded { entries, cap });
    }
    let mut mat = DMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        e[j] = 1.0;
        map.forward_into(&e, &mut col);
        mat.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    Ok(mat)
}

/// Largest relative adjoint mismatch
/// `|<Ax, y> - <x, A^T y>| / (||Ax|| ||y|| + ||x|| ||A^T y||)`
/// over `trials` seeded Gaussian pairs. Zero when both sides vanish.
pub fn adjoint_dot_test(map: &dyn LinearMap, trials: usize, seed: u64) -> f64 {
    let mut rng = vecops::rng(seed);
    let mut worst = 0.0_f64;
    for _ in 0..trials.max(1) {
        let x = vecops::random_normal(map.domain_dim(), &mut rng);
        let y = vecops::random_normal(map.range_dim(), &mut rng);
        let mut ax = vec![0.0; map.range_dim()];
        let mut aty = vec![0.0; map.domain_dim()];
        map.forward_into(&x, &mut ax);
        map.adjoint_into(&y, &mut aty);
        let lhs = vecops::dot(&ax, &y);
        let rhs = vecops::dot(&x, &aty);
        let denom = vecops::norm2(&ax) * vecops::norm2(&y) + vecops::norm2(&x) * vecops::norm2(&aty);
        let mismatch = if denom == 0.0 {
            (lhs - rhs).abs()
        } else {
            (lhs - rhs).abs() / denom
        };
        worst = worst.max(mismatch);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arc<M: LinearMap + 'static>(m: M) -> MapRef {
        Arc::new(m)
    }

    #[test]
    fn identity_and_zero() {
        let id = Identity::new(3);
        assert_eq!(id.apply(&[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);
        assert_eq!(id.apply_adjoint(&[4.0, 5.0, 6.0]).unwrap(), vec![4.0, 5.0, 6.0]);
        let z = ZeroMap::new(2, 3);
        assert_eq!(z.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(adjoint_dot_test(&id, 10, 1), 0.0);
    }

    #[test]
    fn dense_forward_matches_hand_product() {
        let a = DenseMap::from_rows(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(a.apply(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn dense_adjoint_matches_transpose_product() {
        let data = [0.5, -1.0, 2.0, 3.0, 0.25, -4.0];
        let a = DenseMap::from_rows(2, 3, &data).unwrap();
        let mut rng = vecops::rng(7);
        let y = vecops::random_normal(2, &mut rng);
        let got = a.apply_adjoint(&y).unwrap();
        // transpose by hand
        for j in 0..3 {
            let want = data[j] * y[0] + data[3 + j] * y[1];
            assert!((got[j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_errors_name_both_sizes() {
        let id = Identity::new(3);
        let err = id.apply(&[1.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('1'), "{msg}");
        assert!(id.apply_adjoint(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn stack_rules() {
        assert!(stack(vec![]).is_err());
        assert!(stack(vec![(1.0, arc(Identity::new(2))), (1.0, arc(Identity::new(3)))]).is_err());
        assert!(stack(vec![(0.0, arc(Identity::new(2)))]).is_err());
        assert!(stack(vec![(-1.0, arc(Identity::new(2)))]).is_err());

        let single = stack(vec![(1.0, arc(Identity::new(3)))]).unwrap();
        assert_eq!(single.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);

        let twice = stack(vec![(1.0, arc(Identity::new(2))), (1.0, arc(Identity::new(2)))]).unwrap();
        assert_eq!(twice.range_dim(), 4);
        assert_eq!(twice.apply(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn stacked_adjoint_is_weighted_block_sum() {
        let a1 = DenseMap::from_rows(2, 2, &[1.0, 2.0, 0.0, -1.0]).unwrap();
        let a2 = DenseMap::from_rows(1, 2, &[3.0, 4.0]).unwrap();
        let s = stack(vec![(2.0, arc(a1.clone())), (0.5, arc(a2.clone()))]).unwrap();
        let y = [1.0, -1.0, 2.0];
        let got = s.apply_adjoint(&y).unwrap();
        let p1 = a1.apply_adjoint(&y[..2]).unwrap();
        let p2 = a2.apply_adjoint(&y[2..]).unwrap();
        for j in 0..2 {
            assert_eq!(got[j], 2.0 * p1[j] + 0.5 * p2[j]);
        }
    }

    #[test]
    fn materialize_stack_is_weighted_concatenation() {
        let a1 = DenseMap::from_rows(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let a2 = DenseMap::from_rows(1, 3, &[-1.0, 0.5, 2.0]).unwrap();
        let s = stack(vec![(3.0, arc(a1.clone())), (0.25, arc(a2.clone()))]).unwrap();
        let m = materialize_dense(&s, DEFAULT_DENSE_CAP).unwrap();
        let m1 = materialize_dense(&a1, DEFAULT_DENSE_CAP).unwrap() * 3.0;
        let m2 = materialize_dense(&a2, DEFAULT_DENSE_CAP).unwrap() * 0.25;
        for j in 0..3 {
            assert_eq!(m[(0, j)], m1[(0, j)]);
            assert_eq!(m[(1, j)], m1[(1, j)]);
            assert_eq!(m[(2, j)], m2[(0, j)]);
        }
    }

    #[test]
    fn materialize_identity_and_cap() {
        let m = materialize_dense(&Identity::new(3), DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(m, DMatrix::identity(3, 3));
        assert!(matches!(
            materialize_dense(&Identity::new(100), 99),
            Err(Error::DenseCapExceeded { .. })
        ));
    }

    #[test]
    fn dot_test_flags_unmatched_adjoint() {
        let bad = FnMap::new(
            3,
            3,
            "bad",
            |x: &[f64], out: &mut [f64]| {
                out[0] = x[0] + x[1];
                out[1] = x[1];
                out[2] = x[2];
            },
            |y: &[f64], out: &mut [f64]| out.copy_from_slice(y),
        );
        assert!(adjoint_dot_test(&bad, 20, 3) > 1e-3);
    }

    #[test]
    fn composed_and_scaled_are_consistent() {
        let a = arc(DenseMap::from_rows(2, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0]).unwrap());
        let b = arc(DenseMap::from_rows(3, 3, &[2.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, -1.0, 4.0]).unwrap());
        let c = ComposedMap::new(a.clone(), b).unwrap();
        assert!(adjoint_dot_test(&c, 50, 5) < 1e-13);
        let s = ScaledMap::new(-2.5, a.clone());
        assert!(adjoint_dot_test(&s, 50, 5) < 1e-13);
        assert!(ComposedMap::new(a.clone(), a).is_err());
    }
}
