//! Constant-strain-triangle plane elasticity and the modulus-linear stiffness tensor.
//!
//! The global stiffness is linear in the nodal modulus field: `K(E) = Σᵢ Eᵢ Ψᵢ`, where each
//! slice `Ψᵢ` collects one third of the unit-modulus stiffness of every element touching
//! node `i` (element moduli are the mean of their three nodal values). Contracting the
//! slices with a displacement instead gives `D(u)`, whose column `i` is `Ψᵢ u`, so that
//! `D(u) E = K(E) u`.
//!
//! DOFs are node-major and interleaved: `2n` is lateral (`x`), `2n + 1` axial (`y`).
//! Dirichlet DOFs are eliminated symmetrically from every slice; the unit diagonal of the
//! constrained rows is only added by [`PsiTensor::system_matrix`], outside the modulus
//! weighting.

use std::collections::BTreeMap;
use std::ops::{Deref, DerefMut};

use nalgebra::{DMatrix, Matrix3, Matrix6, SMatrix};
use thiserror::Error;

use crate::mesh::{Mesh, MeshError};
use crate::sparse::CsrMatrix;

pub const DOFS_PER_NODE: usize = 2;

pub fn lateral_dof(node: usize) -> usize {
    DOFS_PER_NODE * node
}

pub fn axial_dof(node: usize) -> usize {
    DOFS_PER_NODE * node + 1
}

#[derive(Debug, Error)]
pub enum FemError {
    #[error("element {element} is singular (zero area)")]
    SingularElement { element: usize },
    #[error("material matrix is singular for Poisson's ratio {nu}")]
    SingularMaterial { nu: f64 },
    #[error("no Dirichlet conditions given; the stiffness would contain rigid-body modes")]
    EmptyDirichlet,
    #[error("node {node} is prescribed twice")]
    DuplicatePrescription { node: usize },
    #[error("node {node} does not exist")]
    NoSuchNode { node: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{0} contains NaN or infinite entries")]
    NonFinite(&'static str),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

macro_rules! vector_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Default)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn zeros(len: usize) -> Self {
                Self(vec![0.0; len])
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }
    };
}

vector_newtype!(
    /// Interleaved `(lateral, axial)` nodal values of length `2N`: displacements in meters
    /// or forces in newtons.
    FieldVector
);

vector_newtype!(
    /// One Young's modulus value per node, in pascals.
    ModulusField
);

impl FieldVector {
    pub fn lateral(&self, node: usize) -> f64 {
        self.0[lateral_dof(node)]
    }

    pub fn axial(&self, node: usize) -> f64 {
        self.0[axial_dof(node)]
    }

    pub fn node_count(&self) -> usize {
        self.0.len() / DOFS_PER_NODE
    }
}

impl ModulusField {
    pub fn uniform(len: usize, value: f64) -> Self {
        Self(vec![value; len])
    }
}

/// 3×6 constant-strain-triangle strain-displacement matrix of one element.
pub type StrainDisplacement = SMatrix<f64, 3, 6>;

/// Plane-stress material matrix `μ/(1−ν²) [[1, ν, 0], [ν, 1, 0], [0, 0, (1−ν)/2]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialMatrix(pub Matrix3<f64>);

pub fn material_matrix(mu: f64, nu: f64) -> Result<MaterialMatrix, FemError> {
    if !(nu.abs() < 1.0) {
        return Err(FemError::SingularMaterial { nu });
    }
    let s = mu / (1.0 - nu * nu);
    Ok(MaterialMatrix(
        Matrix3::new(1.0, nu, 0.0, nu, 1.0, 0.0, 0.0, 0.0, 0.5 * (1.0 - nu)) * s,
    ))
}

/// Shape-function gradients `(b, c)` with `bᵢ = (yⱼ − yₖ)/2A`, `cᵢ = (xₖ − xⱼ)/2A`.
pub fn shape_gradients(mesh: &Mesh, element: usize) -> Result<([f64; 3], [f64; 3]), FemError> {
    let p = mesh.element_nodes(element)?;
    let area = mesh.signed_area(element)?;
    if area <= 0.0 {
        return Err(FemError::SingularElement { element });
    }
    let two_a = 2.0 * area;
    let mut b = [0.0; 3];
    let mut c = [0.0; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        b[i] = (p[j][1] - p[k][1]) / two_a;
        c[i] = (p[k][0] - p[j][0]) / two_a;
    }
    Ok((b, c))
}

pub fn strain_displacement_matrix(
    mesh: &Mesh,
    element: usize,
) -> Result<StrainDisplacement, FemError> {
    let (b, c) = shape_gradients(mesh, element)?;
    let mut m = StrainDisplacement::zeros();
    for i in 0..3 {
        m[(0, 2 * i)] = b[i];
        m[(1, 2 * i + 1)] = c[i];
        m[(2, 2 * i)] = c[i];
        m[(2, 2 * i + 1)] = b[i];
    }
    Ok(m)
}

/// Element stiffness `t A Bᵀ M B` in N/m, local DOF order `(x₁, y₁, x₂, y₂, x₃, y₃)`.
pub fn local_stiffness(
    mesh: &Mesh,
    element: usize,
    mu: f64,
    nu: f64,
) -> Result<Matrix6<f64>, FemError> {
    let b = strain_displacement_matrix(mesh, element)?;
    let m = material_matrix(mu, nu)?;
    let area = mesh.signed_area(element)?;
    Ok(b.transpose() * m.0 * b * (mesh.thickness() * area))
}

/// Mean of the three nodal moduli of every element.
pub fn element_moduli(mesh: &Mesh, modulus: &[f64]) -> Vec<f64> {
    mesh.elements()
        .iter()
        .map(|t| (modulus[t[0]] + modulus[t[1]] + modulus[t[2]]) / 3.0)
        .collect()
}

/// Prescribed nodal displacements `(u_lat, u_ax)`; both DOFs of a listed node are fixed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DirichletBc {
    prescribed: BTreeMap<usize, [f64; 2]>,
}

impl DirichletBc {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clamps the given nodes at zero displacement.
    pub fn clamped(nodes: impl IntoIterator<Item = usize>) -> Result<Self, FemError> {
        let mut bc = Self::new();
        for n in nodes {
            bc.prescribe(n, [0.0, 0.0])?;
        }
        Ok(bc)
    }

    pub fn prescribe(&mut self, node: usize, value: [f64; 2]) -> Result<(), FemError> {
        if self.prescribed.insert(node, value).is_some() {
            return Err(FemError::DuplicatePrescription { node });
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.prescribed.is_empty()
    }

    pub fn len(&self) -> usize {
        self.prescribed.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, [f64; 2])> + '_ {
        self.prescribed.iter().map(|(&n, &v)| (n, v))
    }

    pub fn contains(&self, node: usize) -> bool {
        self.prescribed.contains_key(&node)
    }
}

/// One slice `Ψᵢ`, stored as a dense symmetric block over the DOFs of node `i`'s patch.
#[derive(Clone, Debug)]
pub struct PsiSlice {
    dofs: Vec<usize>,
    free: Vec<bool>,
    block: Vec<f64>,
}

impl PsiSlice {
    /// Global DOFs touched by this slice, sorted.
    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    fn dim(&self) -> usize {
        self.dofs.len()
    }

    /// Entry of the unconstrained block in local indexing.
    fn raw(&self, r: usize, c: usize) -> f64 {
        self.block[r * self.dim() + c]
    }

    /// `out += weight · Ψᵢ u` on free rows and columns.
    fn apply_into(&self, weight: f64, u: &[f64], out: &mut [f64]) {
        let m = self.dim();
        for r in 0..m {
            if !self.free[r] {
                continue;
            }
            let row = &self.block[r * m..(r + 1) * m];
            let mut acc = 0.0;
            for c in 0..m {
                if self.free[c] {
                    acc += row[c] * u[self.dofs[c]];
                }
            }
            out[self.dofs[r]] += weight * acc;
        }
    }
}

#[derive(Clone, Debug)]
pub struct PsiTensor {
    n_nodes: usize,
    nu: f64,
    slices: Vec<PsiSlice>,
    bc: DirichletBc,
    fixed: Vec<bool>,
    free_dofs: Vec<usize>,
}

/// Assembles the per-node stiffness slices for Poisson's ratio `nu` with the given
/// Dirichlet conditions eliminated.
pub fn assemble_psi(mesh: &Mesh, nu: f64, bc: &DirichletBc) -> Result<PsiTensor, FemError> {
    if bc.is_empty() {
        return Err(FemError::EmptyDirichlet);
    }
    let n = mesh.node_count();
    if let Some((node, _)) = bc.iter().find(|&(node, _)| node >= n) {
        return Err(FemError::NoSuchNode { node });
    }
    let mut fixed = vec![false; DOFS_PER_NODE * n];
    for (node, _) in bc.iter() {
        fixed[lateral_dof(node)] = true;
        fixed[axial_dof(node)] = true;
    }

    let unit: Vec<Matrix6<f64>> = (0..mesh.element_count())
        .map(|e| local_stiffness(mesh, e, 1.0, nu))
        .collect::<Result<_, _>>()?;
    let adjacency = mesh.node_elements();
    let elements = mesh.elements();

    let mut slices = Vec::with_capacity(n);
    for patch in &adjacency {
        let mut dofs: Vec<usize> = patch
            .iter()
            .flat_map(|&e| elements[e])
            .flat_map(|node| [lateral_dof(node), axial_dof(node)])
            .collect();
        dofs.sort_unstable();
        dofs.dedup();
        let m = dofs.len();
        let mut block = vec![0.0; m * m];
        for &e in patch {
            let local: Vec<usize> = elements[e]
                .iter()
                .flat_map(|&node| [lateral_dof(node), axial_dof(node)])
                .map(|d| dofs.binary_search(&d).expect("patch contains element DOFs"))
                .collect();
            let k = &unit[e];
            for a in 0..6 {
                for b in 0..6 {
                    block[local[a] * m + local[b]] += k[(a, b)] / 3.0;
                }
            }
        }
        let free = dofs.iter().map(|&d| !fixed[d]).collect();
        slices.push(PsiSlice { dofs, free, block });
    }

    let free_dofs = (0..fixed.len()).filter(|&d| !fixed[d]).collect();
    Ok(PsiTensor {
        n_nodes: n,
        nu,
        slices,
        bc: bc.clone(),
        fixed,
        free_dofs,
    })
}

impl PsiTensor {
    pub fn node_count(&self) -> usize {
        self.n_nodes
    }

    pub fn dof_count(&self) -> usize {
        DOFS_PER_NODE * self.n_nodes
    }

    pub fn poisson_ratio(&self) -> f64 {
        self.nu
    }

    pub fn dirichlet(&self) -> &DirichletBc {
        &self.bc
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed[dof]
    }

    /// Unconstrained DOFs in ascending order.
    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    pub fn slice(&self, node: usize) -> &PsiSlice {
        &self.slices[node]
    }

    /// Dense `2N × 2N` view of `Ψᵢ` with Dirichlet rows and columns zeroed.
    pub fn slice_dense(&self, node: usize) -> DMatrix<f64> {
        let s = &self.slices[node];
        let mut out = DMatrix::zeros(self.dof_count(), self.dof_count());
        for r in 0..s.dim() {
            for c in 0..s.dim() {
                if s.free[r] && s.free[c] {
                    out[(s.dofs[r], s.dofs[c])] = s.raw(r, c);
                }
            }
        }
        out
    }

    fn check_len(&self, what: &'static str, expected: usize, got: usize) -> Result<(), FemError> {
        if expected != got {
            return Err(FemError::DimensionMismatch {
                what,
                expected,
                got,
            });
        }
        Ok(())
    }

    fn check_modulus(&self, modulus: &[f64]) -> Result<(), FemError> {
        self.check_len("modulus field", self.n_nodes, modulus.len())?;
        if modulus.iter().any(|v| !v.is_finite()) {
            return Err(FemError::NonFinite("modulus field"));
        }
        if modulus.iter().any(|&v| v < 0.0) {
            log::warn!("modulus field has negative entries");
        }
        Ok(())
    }

    fn stiffness_triplets(&self, modulus: &[f64], map: impl Fn(usize) -> Option<usize>) -> Vec<(usize, usize, f64)> {
        let mut triplets = Vec::new();
        for (s, &e) in self.slices.iter().zip(modulus) {
            if e == 0.0 {
                continue;
            }
            let m = s.dim();
            for r in 0..m {
                let Some(gr) = s.free[r].then(|| map(s.dofs[r])).flatten() else {
                    continue;
                };
                for c in 0..m {
                    if let Some(gc) = s.free[c].then(|| map(s.dofs[c])).flatten() {
                        triplets.push((gr, gc, e * s.block[r * m + c]));
                    }
                }
            }
        }
        triplets
    }

    /// `K(E) = Σᵢ Eᵢ Ψᵢ` as a `2N × 2N` matrix with Dirichlet rows and columns zeroed.
    pub fn stiffness_matrix(&self, modulus: &[f64]) -> Result<CsrMatrix, FemError> {
        self.check_modulus(modulus)?;
        let n = self.dof_count();
        Ok(CsrMatrix::from_triplets(n, n, &self.stiffness_triplets(modulus, Some)))
    }

    /// Free-DOF block of `K(E)`, indexed by position in [`PsiTensor::free_dofs`].
    pub fn free_stiffness(&self, modulus: &[f64]) -> Result<CsrMatrix, FemError> {
        self.check_modulus(modulus)?;
        let mut position = vec![usize::MAX; self.dof_count()];
        for (k, &d) in self.free_dofs.iter().enumerate() {
            position[d] = k;
        }
        let nf = self.free_dofs.len();
        let triplets = self.stiffness_triplets(modulus, |d| Some(position[d]).filter(|&p| p != usize::MAX));
        Ok(CsrMatrix::from_triplets(nf, nf, &triplets))
    }

    /// `K(E)` with unit diagonal on the Dirichlet rows, the matrix of the constrained
    /// equilibrium system.
    pub fn system_matrix(&self, modulus: &[f64]) -> Result<CsrMatrix, FemError> {
        self.check_modulus(modulus)?;
        let n = self.dof_count();
        let mut triplets = self.stiffness_triplets(modulus, Some);
        triplets.extend((0..n).filter(|&d| self.fixed[d]).map(|d| (d, d, 1.0)));
        Ok(CsrMatrix::from_triplets(n, n, &triplets))
    }

    /// `K(E) u`, assembling the weighted matrix first.
    pub fn stiffness_apply(&self, modulus: &[f64], u: &[f64]) -> Result<FieldVector, FemError> {
        self.check_len("displacement", self.dof_count(), u.len())?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(FemError::NonFinite("displacement"));
        }
        Ok(FieldVector(self.stiffness_matrix(modulus)?.mul_vec(u)))
    }

    /// `D(u) E = Σᵢ Eᵢ (Ψᵢ u)`, contracting each slice with `u` first.
    pub fn dmatrix_apply(&self, u: &[f64], modulus: &[f64]) -> Result<FieldVector, FemError> {
        self.check_len("displacement", self.dof_count(), u.len())?;
        self.check_len("modulus field", self.n_nodes, modulus.len())?;
        let mut out = vec![0.0; self.dof_count()];
        let mut column = vec![0.0; self.dof_count()];
        for (s, &e) in self.slices.iter().zip(modulus) {
            for &d in &s.dofs {
                column[d] = 0.0;
            }
            s.apply_into(1.0, u, &mut column);
            for &d in &s.dofs {
                out[d] += e * column[d];
            }
        }
        Ok(FieldVector(out))
    }

    /// Sparse `D(u)` of shape `2N × N`; column `i` is `Ψᵢ u`.
    pub fn dmatrix_sparse(&self, u: &[f64]) -> Result<CsrMatrix, FemError> {
        let n = self.dof_count();
        self.dmatrix_rows(u, Some, n)
    }

    /// Rows of `D(u)` restricted to the free DOFs, in [`PsiTensor::free_dofs`] order.
    pub fn dmatrix_free(&self, u: &[f64]) -> Result<CsrMatrix, FemError> {
        let mut position = vec![None; self.dof_count()];
        for (k, &d) in self.free_dofs.iter().enumerate() {
            position[d] = Some(k);
        }
        self.dmatrix_rows(u, |d| position[d], self.free_dofs.len())
    }

    fn dmatrix_rows(
        &self,
        u: &[f64],
        map: impl Fn(usize) -> Option<usize>,
        nrows: usize,
    ) -> Result<CsrMatrix, FemError> {
        self.check_len("displacement", self.dof_count(), u.len())?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(FemError::NonFinite("displacement"));
        }
        let mut triplets = Vec::new();
        let mut column = vec![0.0; self.dof_count()];
        for (i, s) in self.slices.iter().enumerate() {
            for &d in &s.dofs {
                column[d] = 0.0;
            }
            s.apply_into(1.0, u, &mut column);
            for &d in &s.dofs {
                if column[d] != 0.0 {
                    if let Some(r) = map(d) {
                        triplets.push((r, i, column[d]));
                    }
                }
            }
        }
        Ok(CsrMatrix::from_triplets(nrows, self.n_nodes, &triplets))
    }

    /// Dense `2N × N` matrix `D(u)`.
    pub fn dmatrix_dense(&self, u: &[f64]) -> Result<DMatrix<f64>, FemError> {
        Ok(self.dmatrix_sparse(u)?.to_dense())
    }

    /// Right-hand side of the constrained system: free entries `f − K_fc u_c`, Dirichlet
    /// entries carry the prescribed values.
    pub fn dirichlet_rhs(&self, modulus: &[f64], f: &[f64]) -> Result<FieldVector, FemError> {
        self.check_modulus(modulus)?;
        self.check_len("force", self.dof_count(), f.len())?;
        let mut rhs = f.to_vec();
        let prescribed = self.prescribed_vector();
        for (s, &e) in self.slices.iter().zip(modulus) {
            let m = s.dim();
            for r in 0..m {
                if !s.free[r] {
                    continue;
                }
                let mut acc = 0.0;
                for c in 0..m {
                    if !s.free[c] {
                        acc += s.block[r * m + c] * prescribed[s.dofs[c]];
                    }
                }
                rhs[s.dofs[r]] -= e * acc;
            }
        }
        for d in 0..self.dof_count() {
            if self.fixed[d] {
                rhs[d] = prescribed[d];
            }
        }
        Ok(FieldVector(rhs))
    }

    /// Full-length vector holding the prescribed values on Dirichlet DOFs and zero elsewhere.
    pub fn prescribed_vector(&self) -> FieldVector {
        let mut v = vec![0.0; self.dof_count()];
        for (node, value) in self.bc.iter() {
            v[lateral_dof(node)] = value[0];
            v[axial_dof(node)] = value[1];
        }
        FieldVector(v)
    }

    /// Free-DOF entries of a full-length vector.
    pub fn restrict_free(&self, v: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&d| v[d]).collect()
    }

    /// Full-length vector from free-DOF values, Dirichlet entries set to their prescribed values.
    pub fn expand_free(&self, free: &[f64]) -> FieldVector {
        let mut v = self.prescribed_vector();
        for (&d, &x) in self.free_dofs.iter().zip(free) {
            v[d] = x;
        }
        v
    }
}

/// Applies Dirichlet values to a full-length vector in place: prescribed entries are
/// overwritten, all other entries untouched.
pub fn apply_dirichlet(bc: &DirichletBc, v: &mut [f64]) {
    for (node, value) in bc.iter() {
        v[lateral_dof(node)] = value[0];
        v[axial_dof(node)] = value[1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Cholesky;
    use crate::mesh::{generate_mesh, MeshParams};
    use nalgebra::SymmetricEigen;

    fn square() -> Mesh {
        generate_mesh(&MeshParams {
            width: 1.0,
            height: 1.0,
            target_nodes: 4,
            jitter: 0.0,
            seed: 0,
        })
        .unwrap()
    }

    fn right_triangle() -> Mesh {
        let mut boundary = crate::mesh::BoundarySets::default();
        boundary.bottom.extend([0, 1]);
        boundary.left.extend([0, 2]);
        boundary.right.extend([1, 2]);
        Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            boundary,
            1.0,
        )
        .unwrap()
    }

    fn grid(target: usize, seed: u64) -> Mesh {
        generate_mesh(&MeshParams {
            width: 1.0,
            height: 1.0,
            target_nodes: target,
            jitter: 0.25,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn shape_gradients_of_unit_triangle() {
        let (b, c) = shape_gradients(&right_triangle(), 0).unwrap();
        assert_eq!(b, [-1.0, 1.0, 0.0]);
        assert_eq!(c, [-1.0, 0.0, 1.0]);
    }

    #[test]
    fn strain_of_rigid_translation_and_stretch() {
        let mesh = right_triangle();
        let b = strain_displacement_matrix(&mesh, 0).unwrap();
        let translation = SMatrix::<f64, 6, 1>::from_column_slice(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert!((b * translation).norm() < 1e-15);
        // u_x = x at each vertex
        let stretch = SMatrix::<f64, 6, 1>::from_column_slice(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let strain = b * stretch;
        assert!((strain - nalgebra::Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn material_matrix_examples() {
        let m = material_matrix(1.0, 0.0).unwrap().0;
        assert_eq!(m, Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5));
        let m = material_matrix(2.0, 0.5).unwrap().0;
        let expect = Matrix3::new(1.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.25) * (8.0 / 3.0);
        assert!((m - expect).norm() < 1e-14);
        let m = material_matrix(1.0, 0.495).unwrap().0;
        let eig = SymmetricEigen::new(m).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        assert!(lo > 0.0 && (hi / lo).is_finite());
        assert!(matches!(material_matrix(1.0, 1.0), Err(FemError::SingularMaterial { .. })));
        assert!(matches!(material_matrix(1.0, -1.0), Err(FemError::SingularMaterial { .. })));
    }

    #[test]
    fn local_stiffness_properties() {
        let mesh = right_triangle();
        assert_eq!(local_stiffness(&mesh, 0, 0.0, 0.3).unwrap(), Matrix6::zeros());
        let k1 = local_stiffness(&mesh, 0, 1.0, 0.3).unwrap();
        let k2 = local_stiffness(&mesh, 0, 2.0, 0.3).unwrap();
        assert!((k2 - k1 * 2.0).norm() < 1e-14);

        // dense oracle t·A·BᵀMB with hand-built B for the unit triangle, μ=1, ν=0
        let b = DMatrix::from_row_slice(
            3,
            6,
            &[
                -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, //
                0.0, -1.0, 0.0, 0.0, 0.0, 1.0, //
                -1.0, -1.0, 0.0, 1.0, 1.0, 0.0,
            ],
        );
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5]);
        let oracle = b.transpose() * m * &b * 0.5;
        let k = local_stiffness(&mesh, 0, 1.0, 0.0).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                assert!((k[(r, c)] - oracle[(r, c)]).abs() < 1e-14);
            }
        }

        let eig = SymmetricEigen::new(local_stiffness(&mesh, 0, 1.0, 0.495).unwrap()).eigenvalues;
        let scale = eig.max();
        let zeros = eig.iter().filter(|v| v.abs() < 1e-12 * scale).count();
        assert_eq!(zeros, 3);
        assert!(eig.iter().all(|&v| v > -1e-12 * scale));
    }

    #[test]
    fn singular_element_detected() {
        // a valid mesh whose element we query with collapsed geometry is impossible; use a
        // mesh built through the loader so the error path is the index check instead
        let mesh = square();
        assert!(matches!(
            strain_displacement_matrix(&mesh, 5),
            Err(FemError::Mesh(MeshError::NoSuchElement(5)))
        ));
    }

    /// Σₑ Ēₑ kₑ assembled densely, independent of the slice storage.
    fn dense_assembly(mesh: &Mesh, nu: f64, modulus: &[f64], bc: &DirichletBc) -> DMatrix<f64> {
        let n = 2 * mesh.node_count();
        let mut k = DMatrix::zeros(n, n);
        for (e, tri) in mesh.elements().iter().enumerate() {
            let mu = (modulus[tri[0]] + modulus[tri[1]] + modulus[tri[2]]) / 3.0;
            let ke = local_stiffness(mesh, e, mu, nu).unwrap();
            let g: Vec<usize> = tri.iter().flat_map(|&v| [2 * v, 2 * v + 1]).collect();
            for a in 0..6 {
                for b in 0..6 {
                    k[(g[a], g[b])] += ke[(a, b)];
                }
            }
        }
        for (node, _) in bc.iter() {
            for d in [2 * node, 2 * node + 1] {
                k.row_mut(d).fill(0.0);
                k.column_mut(d).fill(0.0);
            }
        }
        k
    }

    #[test]
    fn psi_reproduces_direct_assembly_on_square() {
        let mesh = square();
        let bc = DirichletBc::clamped([0, 1]).unwrap();
        let psi = assemble_psi(&mesh, 0.3, &bc).unwrap();
        let ones = vec![1.0; 4];
        let k = psi.stiffness_matrix(&ones).unwrap().to_dense();
        let oracle = dense_assembly(&mesh, 0.3, &ones, &bc);
        assert!((k - &oracle).norm() <= 1e-13 * oracle.norm());
    }

    #[test]
    fn slices_are_symmetric_and_local() {
        let mesh = grid(40, 2);
        let bc = DirichletBc::clamped(mesh.boundary().bottom.iter().copied()).unwrap();
        let psi = assemble_psi(&mesh, 0.495, &bc).unwrap();
        let adjacency = mesh.node_elements();
        for i in 0..mesh.node_count() {
            let s = psi.slice_dense(i);
            assert!((&s - s.transpose()).norm() <= 1e-14 * s.norm().max(1.0));
            let patch: std::collections::BTreeSet<usize> = adjacency[i]
                .iter()
                .flat_map(|&e| mesh.elements()[e])
                .flat_map(|v| [2 * v, 2 * v + 1])
                .collect();
            for r in 0..s.nrows() {
                for c in 0..s.ncols() {
                    if s[(r, c)] != 0.0 {
                        assert!(patch.contains(&r) && patch.contains(&c));
                    }
                }
            }
        }
    }

    #[test]
    fn system_matrix_is_spd_and_identity_on_constrained_rows() {
        let mesh = grid(60, 5);
        let bc = DirichletBc::clamped(mesh.boundary().bottom.iter().copied()).unwrap();
        let psi = assemble_psi(&mesh, 0.495, &bc).unwrap();
        let ones = vec![1.0; mesh.node_count()];
        let sys = psi.system_matrix(&ones).unwrap();
        for (node, _) in bc.iter() {
            for d in [2 * node, 2 * node + 1] {
                assert_eq!(sys.row(d).collect::<Vec<_>>(), vec![(d, 1.0)]);
            }
        }
        assert!(Cholesky::factor(&sys.to_dense()).is_ok());

        let unconstrained = dense_assembly(&mesh, 0.495, &ones, &DirichletBc::new());
        assert!(Cholesky::factor(&unconstrained).is_err());
    }

    #[test]
    fn empty_dirichlet_and_duplicates_refused() {
        let mesh = square();
        assert!(matches!(
            assemble_psi(&mesh, 0.3, &DirichletBc::new()),
            Err(FemError::EmptyDirichlet)
        ));
        let mut bc = DirichletBc::new();
        bc.prescribe(0, [0.0, 0.0]).unwrap();
        assert!(matches!(
            bc.prescribe(0, [1.0, 0.0]),
            Err(FemError::DuplicatePrescription { node: 0 })
        ));
        assert!(matches!(
            assemble_psi(&mesh, 0.3, &DirichletBc::clamped([9]).unwrap()),
            Err(FemError::NoSuchNode { node: 9 })
        ));
    }

    #[test]
    fn stiffness_apply_edge_cases() {
        let mesh = grid(30, 1);
        let bc = DirichletBc::clamped(mesh.boundary().bottom.iter().copied()).unwrap();
        let psi = assemble_psi(&mesh, 0.495, &bc).unwrap();
        let e = vec![1.0; mesh.node_count()];
        let zero = vec![0.0; psi.dof_count()];
        assert!(psi.stiffness_apply(&e, &zero).unwrap().iter().all(|&v| v == 0.0));
        let mut bad = e.clone();
        bad[3] = f64::NAN;
        assert!(matches!(psi.stiffness_apply(&bad, &zero), Err(FemError::NonFinite(_))));
        assert!(matches!(
            psi.stiffness_apply(&e, &zero[1..]),
            Err(FemError::DimensionMismatch { .. })
        ));
        assert!(psi.dmatrix_apply(&zero, &vec![0.0; mesh.node_count()]).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(psi.dmatrix_dense(&zero).unwrap(), DMatrix::zeros(psi.dof_count(), mesh.node_count()));
    }

    #[test]
    fn rigid_translation_leaves_interior_in_equilibrium() {
        let mesh = grid(49, 4);
        // clamp a single corner so a translation is not itself prescribed away
        let bc = DirichletBc::clamped([0]).unwrap();
        let psi = assemble_psi(&mesh, 0.495, &bc).unwrap();
        let e = vec![2.5e4; mesh.node_count()];
        let mut u = vec![0.0; psi.dof_count()];
        for n in 1..mesh.node_count() {
            u[2 * n] = 1e-3;
            u[2 * n + 1] = -2e-3;
        }
        let f = psi.stiffness_apply(&e, &u).unwrap();
        let boundary = mesh.boundary().union();
        let scale = psi.stiffness_matrix(&e).unwrap().to_dense().abs().max() * 2e-3;
        for n in 0..mesh.node_count() {
            let touches_corner = mesh.node_elements()[n]
                .iter()
                .any(|&el| mesh.elements()[el].contains(&0));
            if boundary.contains(&n) || touches_corner {
                continue;
            }
            assert!(f.lateral(n).abs() < 1e-12 * scale && f.axial(n).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn patch_test_linear_field() {
        // prescribe a linear field on the whole boundary; interior solution must reproduce it
        let mesh = grid(64, 9);
        let field = |p: [f64; 2]| [1e-3 * p[0] + 2e-4 * p[1], -5e-4 * p[0] - 1e-3 * p[1]];
        let mut bc = DirichletBc::new();
        for n in mesh.boundary().union() {
            bc.prescribe(n, field(mesh.nodes()[n])).unwrap();
        }
        let psi = assemble_psi(&mesh, 0.495, &bc).unwrap();
        let e = vec![1e4; mesh.node_count()];
        let rhs = psi.dirichlet_rhs(&e, &vec![0.0; psi.dof_count()]).unwrap();
        let sys = psi.system_matrix(&e).unwrap().to_dense();
        let u = Cholesky::factor(&sys).unwrap().solve(&rhs);
        for (n, p) in mesh.nodes().iter().enumerate() {
            let expect = field(*p);
            assert!((u[2 * n] - expect[0]).abs() < 1e-10 * 1e-3);
            assert!((u[2 * n + 1] - expect[1]).abs() < 1e-10 * 1e-3);
        }
        // the exact linear field has zero interior residual
        let mut exact = vec![0.0; psi.dof_count()];
        for (n, p) in mesh.nodes().iter().enumerate() {
            let v = field(*p);
            exact[2 * n] = v[0];
            exact[2 * n + 1] = v[1];
        }
        let full = dense_assembly(&mesh, 0.495, &e, &DirichletBc::new());
        let residual = &full * nalgebra::DVector::from_column_slice(&exact);
        let norm_scale = full.norm() * nalgebra::DVector::from_column_slice(&exact).norm();
        for d in psi.free_dofs() {
            assert!(residual[*d].abs() < 1e-10 * norm_scale);
        }
    }

    #[test]
    fn dmatrix_dense_matches_apply() {
        let mesh = grid(30, 3);
        let bc = DirichletBc::clamped(mesh.boundary().bottom.iter().copied()).unwrap();
        let psi = assemble_psi(&mesh, 0.495, &bc).unwrap();
        let u: Vec<f64> = (0..psi.dof_count()).map(|i| ((i * 7) as f64).sin()).collect();
        let e: Vec<f64> = (0..mesh.node_count()).map(|i| 1.0 + ((i * 3) as f64).cos().abs()).collect();
        let d = psi.dmatrix_dense(&u).unwrap();
        let via_dense = &d * nalgebra::DVector::from_column_slice(&e);
        let via_apply = psi.dmatrix_apply(&u, &e).unwrap();
        let scale = via_dense.norm();
        for k in 0..psi.dof_count() {
            assert!((via_dense[k] - via_apply[k]).abs() <= 1e-13 * scale);
        }
        // column sparsity mirrors slice support
        for i in 0..mesh.node_count() {
            let support = psi.slice(i).dofs();
            for r in 0..d.nrows() {
                if d[(r, i)] != 0.0 {
                    assert!(support.contains(&r));
                }
            }
        }
    }
}
