//! Piecewise-constant and lowest-order Raviart–Thomas operators on one level,
//! and the transfer pair between neighbouring levels.
//!
//! RT degrees of freedom are face fluxes with the fixed global normal `+e_axis`.
//! On an element with box `[lo, hi]` the upper face of axis `a` carries
//! `e_a (x_a - lo_a) / |τ|` and the lower face `e_a (hi_a - x_a) / |τ|`, so the
//! divergence integrates to `+1` and `-1` respectively.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_nested, nested_parent, FaceTag, LevelMesh, MeshHierarchy};
use crate::linalg::CsrMatrix;

/// Which boundary faces are removed from the flux space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxBoundary {
    /// `q·n = 0` on the whole outer boundary.
    #[default]
    EliminateAll,
    /// `q·n = 0` on Neumann faces only; Dirichlet faces stay as unknowns.
    EliminateNeumann,
    KeepAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceOptions {
    pub flux_boundary: FluxBoundary,
    /// Replace the RT mass matrix by its row-sum diagonal. This changes the
    /// discrete operator and therefore the sampled covariance.
    pub lump_rt_mass: bool,
}

/// Flux space with its mass and divergence matrices.
#[derive(Debug, Clone)]
pub struct RtSpace {
    dim: usize,
    free_faces: Vec<usize>,
    face_dof: Vec<Option<usize>>,
    m: CsrMatrix,
    // consistent mass, kept as the assembly pattern when `m` is lumped
    full_pattern: CsrMatrix,
    b: CsrMatrix,
    // per (element, axis) the CSR value slots of the 2x2 local block
    slots: Vec<[usize; 4]>,
    local: Vec<[f64; 4]>,
    lumped: bool,
    line_order: Vec<usize>,
    center_order: Vec<usize>,
}

const NO_SLOT: usize = usize::MAX;

impl RtSpace {
    pub fn num_dofs(&self) -> usize {
        self.free_faces.len()
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.m
    }

    pub fn div(&self) -> &CsrMatrix {
        &self.b
    }

    pub fn is_lumped(&self) -> bool {
        self.lumped
    }

    /// Mesh face of each dof.
    pub fn free_faces(&self) -> &[usize] {
        &self.free_faces
    }

    pub fn dof_of_face(&self, face: usize) -> Option<usize> {
        self.face_dof[face]
    }

    /// Dof permutation (`perm[new] = old`) listing faces line by line along
    /// their normal axis. The mass matrix is tridiagonal in this order.
    pub fn line_ordering(&self) -> &[usize] {
        &self.line_order
    }

    /// Dof permutation sorting faces by centre, `z` slowest. Any matrix whose
    /// couplings stay within one element has a bandwidth of about two planes
    /// of faces in this order.
    pub fn center_ordering(&self) -> &[usize] {
        &self.center_order
    }

    /// `∫ w φ_f · φ_g` for an elementwise constant weight `w`, with the same
    /// sparsity as [`Self::mass`].
    pub fn weighted_mass(&self, weights: &[f64]) -> Result<CsrMatrix> {
        let ne = self.slots.len() / self.dim;
        if weights.len() != ne {
            return Err(Error::DimensionMismatch { expected: ne, got: weights.len() });
        }
        let mut m = self.full_pattern.clone();
        {
            let vals = m.values_mut();
            vals.iter_mut().for_each(|v| *v = 0.0);
            for e in 0..ne {
                let w = weights[e];
                for a in 0..self.dim {
                    let k = e * self.dim + a;
                    for (slot, c) in self.slots[k].iter().zip(&self.local[a]) {
                        if *slot != NO_SLOT {
                            vals[*slot] += w * c;
                        }
                    }
                }
            }
        }
        Ok(if self.lumped { CsrMatrix::from_diagonal(&m.row_sums()) } else { m })
    }
}

/// Operators of one level.
#[derive(Debug, Clone)]
pub struct LevelOperators {
    level: usize,
    w: Vec<f64>,
    w_sqrt: Vec<f64>,
    rt: Option<RtSpace>,
}

impl LevelOperators {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn num_elements(&self) -> usize {
        self.w.len()
    }

    /// Diagonal of the piecewise-constant mass matrix.
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn w_sqrt(&self) -> &[f64] {
        &self.w_sqrt
    }

    pub fn w_matrix(&self) -> CsrMatrix {
        CsrMatrix::from_diagonal(&self.w)
    }

    pub fn rt(&self) -> Option<&RtSpace> {
        self.rt.as_ref()
    }

    pub fn require_rt(&self) -> Result<&RtSpace> {
        self.rt
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("no flux space on level {} (dim 1)", self.level)))
    }
}

pub fn assemble_theta_mass(mesh: &LevelMesh) -> Vec<f64> {
    vec![mesh.cell_volume(); mesh.num_elements()]
}

/// Local mass blocks, one 2x2 block `[ll, lu, ul, uu]` per axis, by the
/// tensor two-point Gauss rule on one element.
pub fn local_rt_mass(mesh: &LevelMesh) -> Result<Vec<[f64; 4]>> {
    let dim = mesh.dim();
    if dim < 2 {
        return Err(Error::Unsupported("Raviart–Thomas spaces need dim 2 or 3".into()));
    }
    let h = mesh.cell_size();
    let vol = mesh.cell_volume();
    let g = 0.5 / 3f64.sqrt();
    let npts = 1usize << dim;
    let weight = vol / npts as f64;
    let mut out = vec![[0.0; 4]; dim];
    for q in 0..npts {
        for a in 0..dim {
            // reference coordinate along the face normal
            let t = if (q >> a) & 1 == 1 { 0.5 + g } else { 0.5 - g };
            let lower = h[a] * (1.0 - t) / vol;
            let upper = h[a] * t / vol;
            let v = [lower, upper];
            out[a][0] += weight * v[0] * v[0];
            out[a][1] += weight * v[0] * v[1];
            out[a][3] += weight * v[1] * v[1];
        }
    }
    for block in &mut out {
        block[2] = block[1];
    }
    Ok(out)
}

fn is_free(tag: FaceTag, bc: FluxBoundary) -> bool {
    matches!(
        (tag, bc),
        (FaceTag::Interior, _) | (_, FluxBoundary::KeepAll) | (FaceTag::Dirichlet { .. }, FluxBoundary::EliminateNeumann)
    )
}

/// Assembles the flux space of `mesh`.
pub fn assemble_rt(mesh: &LevelMesh, options: SpaceOptions) -> Result<RtSpace> {
    let local = local_rt_mass(mesh)?;
    let dim = mesh.dim();
    let ne = mesh.num_elements();

    let mut face_dof = vec![None; mesh.num_faces()];
    let mut free_faces = Vec::new();
    for f in 0..mesh.num_faces() {
        if is_free(mesh.face_tag(f), options.flux_boundary) {
            face_dof[f] = Some(free_faces.len());
            free_faces.push(f);
        }
    }
    let nd = free_faces.len();

    let mut mt = Vec::with_capacity(ne * dim * 4);
    let mut bt = Vec::with_capacity(ne * dim * 2);
    for e in 0..ne {
        for a in 0..dim {
            let faces = [mesh.element_face(e, a, false), mesh.element_face(e, a, true)];
            let dofs = faces.map(|f| face_dof[f]);
            for (i, sign) in [(0, -1.0), (1, 1.0)] {
                if let Some(d) = dofs[i] {
                    bt.push((e, d, sign));
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    if let (Some(r), Some(c)) = (dofs[i], dofs[j]) {
                        mt.push((r, c, local[a][2 * i + j]));
                    }
                }
            }
        }
    }
    let full = CsrMatrix::from_triplets(nd, nd, &mt);
    let b = CsrMatrix::from_triplets(ne, nd, &bt);

    let mut slots = Vec::with_capacity(ne * dim);
    for e in 0..ne {
        for a in 0..dim {
            let faces = [mesh.element_face(e, a, false), mesh.element_face(e, a, true)];
            let dofs = faces.map(|f| face_dof[f]);
            let mut s = [NO_SLOT; 4];
            for i in 0..2 {
                for j in 0..2 {
                    if let (Some(r), Some(c)) = (dofs[i], dofs[j]) {
                        s[2 * i + j] = slot_of(&full, r, c);
                    }
                }
            }
            slots.push(s);
        }
    }

    let m = if options.lump_rt_mass { CsrMatrix::from_diagonal(&full.row_sums()) } else { full.clone() };

    let mut line_order: Vec<usize> = (0..nd).collect();
    line_order.sort_by_key(|&d| {
        let (axis, c) = mesh.face_coords(free_faces[d]);
        let mut k = [axis, 0, 0, 0];
        let mut n = 1;
        for i in (0..3).rev() {
            if i != axis {
                k[n] = c[i];
                n += 1;
            }
        }
        k[3] = c[axis];
        k
    });
    let mut center_order: Vec<usize> = (0..nd).collect();
    center_order.sort_by_key(|&d| {
        let (axis, c) = mesh.face_coords(free_faces[d]);
        let doubled = |i: usize| 2 * c[i] + usize::from(i != axis && i < dim);
        [doubled(2), doubled(1), doubled(0)]
    });

    Ok(RtSpace {
        dim,
        free_faces,
        face_dof,
        m,
        b,
        slots,
        local,
        lumped: options.lump_rt_mass,
        line_order,
        center_order,
        full_pattern: full,
    })
}

fn slot_of(m: &CsrMatrix, r: usize, c: usize) -> usize {
    let start = m.indptr()[r];
    let cols = &m.indices()[start..m.indptr()[r + 1]];
    start + cols.binary_search(&c).expect("entry present in assembled pattern")
}

/// RT mass matrix of `mesh` under `options`.
pub fn assemble_rt_mass(mesh: &LevelMesh, options: SpaceOptions) -> Result<CsrMatrix> {
    Ok(assemble_rt(mesh, options)?.m)
}

/// Divergence matrix (elements × flux dofs).
pub fn assemble_div(mesh: &LevelMesh, options: SpaceOptions) -> Result<CsrMatrix> {
    Ok(assemble_rt(mesh, options)?.b)
}

/// `W`, `W^{1/2}` and, for `dim >= 2`, the flux space.
pub fn assemble_level(mesh: &LevelMesh, options: SpaceOptions) -> Result<LevelOperators> {
    let w = assemble_theta_mass(mesh);
    let w_sqrt = w.iter().map(|v| v.sqrt()).collect();
    let rt = if mesh.dim() >= 2 { Some(assemble_rt(mesh, options)?) } else { None };
    Ok(LevelOperators { level: mesh.level(), w, w_sqrt, rt })
}

/// Interpolation `P` (coarse to fine) and the `W`-orthogonal projection
/// `Π = W_c^{-1} P^T W_f` between levels `fine_level` and `fine_level + 1`.
#[derive(Debug, Clone)]
pub struct TransferPair {
    fine_level: usize,
    p: CsrMatrix,
    pi: CsrMatrix,
}

impl TransferPair {
    /// Wraps externally built matrices; only shapes are checked.
    pub fn from_parts(fine_level: usize, p: CsrMatrix, pi: CsrMatrix) -> Result<Self> {
        if pi.nrows() != p.ncols() || pi.ncols() != p.nrows() {
            return Err(Error::DimensionMismatch { expected: p.nrows(), got: pi.ncols() });
        }
        Ok(Self { fine_level, p, pi })
    }

    pub fn fine_level(&self) -> usize {
        self.fine_level
    }

    pub fn p(&self) -> &CsrMatrix {
        &self.p
    }

    pub fn pi(&self) -> &CsrMatrix {
        &self.pi
    }

    pub fn num_fine(&self) -> usize {
        self.p.nrows()
    }

    pub fn num_coarse(&self) -> usize {
        self.p.ncols()
    }

    fn check(&self, x: &[f64], n: usize) -> Result<()> {
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        Ok(())
    }

    /// `P x`
    pub fn interpolate(&self, coarse: &[f64]) -> Result<Vec<f64>> {
        self.check(coarse, self.num_coarse())?;
        Ok(self.p.mul_vec(coarse))
    }

    /// `P^T x`
    pub fn p_transpose(&self, fine: &[f64]) -> Result<Vec<f64>> {
        self.check(fine, self.num_fine())?;
        Ok(self.p.tr_mul_vec(fine))
    }

    /// `Π x`
    pub fn restrict(&self, fine: &[f64]) -> Result<Vec<f64>> {
        self.check(fine, self.num_fine())?;
        Ok(self.pi.mul_vec(fine))
    }

    /// `Π^T x`
    pub fn pi_transpose(&self, coarse: &[f64]) -> Result<Vec<f64>> {
        self.check(coarse, self.num_coarse())?;
        Ok(self.pi.tr_mul_vec(coarse))
    }
}

pub fn build_transfer(fine: &LevelMesh, coarse: &LevelMesh, w_fine: &[f64], w_coarse: &[f64]) -> Result<TransferPair> {
    check_nested(fine, coarse)?;
    let nf = fine.num_elements();
    let nc = coarse.num_elements();
    if w_fine.len() != nf {
        return Err(Error::DimensionMismatch { expected: nf, got: w_fine.len() });
    }
    if w_coarse.len() != nc {
        return Err(Error::DimensionMismatch { expected: nc, got: w_coarse.len() });
    }
    let mut pt = Vec::with_capacity(nf);
    let mut pit = Vec::with_capacity(nf);
    for e in 0..nf {
        let parent = nested_parent(fine, coarse, e)?;
        pt.push((e, parent, 1.0));
        pit.push((parent, e, w_fine[e] / w_coarse[parent]));
    }
    Ok(TransferPair {
        fine_level: fine.level(),
        p: CsrMatrix::from_triplets(nf, nc, &pt),
        pi: CsrMatrix::from_triplets(nc, nf, &pit),
    })
}

/// `Π ζ_fine`
pub fn project_coarse(pair: &TransferPair, zeta_fine: &[f64]) -> Result<Vec<f64>> {
    pair.restrict(zeta_fine)
}

/// A mesh hierarchy with operators on every level and transfers between them.
#[derive(Debug, Clone)]
pub struct Discretization {
    hierarchy: MeshHierarchy,
    options: SpaceOptions,
    ops: Vec<LevelOperators>,
    transfers: Vec<TransferPair>,
}

impl Discretization {
    pub fn new(hierarchy: MeshHierarchy, options: SpaceOptions) -> Result<Self> {
        let ops = hierarchy
            .levels()
            .iter()
            .map(|m| assemble_level(m, options))
            .collect::<Result<Vec<_>>>()?;
        let transfers = (0..hierarchy.coarsest_level())
            .map(|l| build_transfer(hierarchy.level(l), hierarchy.level(l + 1), ops[l].w(), ops[l + 1].w()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { hierarchy, options, ops, transfers })
    }

    pub fn hierarchy(&self) -> &MeshHierarchy {
        &self.hierarchy
    }

    pub fn options(&self) -> SpaceOptions {
        self.options
    }

    pub fn num_levels(&self) -> usize {
        self.ops.len()
    }

    pub fn coarsest_level(&self) -> usize {
        self.ops.len() - 1
    }

    pub fn mesh(&self, level: usize) -> &LevelMesh {
        self.hierarchy.level(level)
    }

    pub fn ops(&self, level: usize) -> &LevelOperators {
        &self.ops[level]
    }

    pub fn all_ops(&self) -> &[LevelOperators] {
        &self.ops
    }

    /// Transfer between `fine_level` and `fine_level + 1`.
    pub fn transfer(&self, fine_level: usize) -> &TransferPair {
        &self.transfers[fine_level]
    }

    pub fn transfers(&self) -> &[TransferPair] {
        &self.transfers
    }
}
