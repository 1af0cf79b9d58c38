//! Nested tensor-product grids.
//!
//! Level 0 is the finest mesh and level `L = num_levels - 1` the coarsest; each
//! level refines the next coarser one by a factor of two in every direction.
//! Elements are numbered lexicographically with `x` fastest (then `y`, then `z`).
//! Faces are grouped by normal axis (all `x`-normal, then `y`-, then `z`-normal)
//! and numbered lexicographically inside each group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary condition type carried by a face of the outer boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaceTag {
    Interior,
    /// Pressure prescribed. `outflow` marks the faces of the `x_max` side.
    Dirichlet { outflow: bool },
    /// No-flux boundary.
    Neumann,
}

impl FaceTag {
    pub fn is_boundary(self) -> bool {
        !matches!(self, FaceTag::Interior)
    }

    pub fn is_outflow(self) -> bool {
        matches!(self, FaceTag::Dirichlet { outflow: true })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub dim: usize,
    pub domain_min: Vec<f64>,
    pub domain_max: Vec<f64>,
    /// Cells per direction on the coarsest level, physical domain only.
    pub coarse_cells: Vec<usize>,
    pub num_levels: usize,
    /// Coarse cells of padding added on every side in every direction.
    #[serde(default)]
    pub pad_cells: usize,
}

impl MeshSpec {
    /// Unit box `[0, 1]^dim`.
    pub fn unit(dim: usize, coarse_cells: &[usize], num_levels: usize) -> Self {
        Self {
            dim,
            domain_min: vec![0.0; dim],
            domain_max: vec![1.0; dim],
            coarse_cells: coarse_cells.to_vec(),
            num_levels,
            pad_cells: 0,
        }
    }

    pub fn with_padding(mut self, pad_cells: usize) -> Self {
        self.pad_cells = pad_cells;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::InvalidMesh(format!("dim must be 1, 2 or 3, got {}", self.dim)));
        }
        for (name, len) in [
            ("domain_min", self.domain_min.len()),
            ("domain_max", self.domain_max.len()),
            ("coarse_cells", self.coarse_cells.len()),
        ] {
            if len != self.dim {
                return Err(Error::InvalidMesh(format!("{name} has {len} entries for dim {}", self.dim)));
            }
        }
        if self.num_levels < 1 {
            return Err(Error::InvalidMesh("num_levels must be at least 1".into()));
        }
        if self.num_levels > 20 {
            return Err(Error::InvalidMesh(format!("num_levels {} is unreasonably deep", self.num_levels)));
        }
        for i in 0..self.dim {
            if self.coarse_cells[i] == 0 {
                return Err(Error::InvalidMesh(format!("coarse_cells[{i}] is zero")));
            }
            let (a, b) = (self.domain_min[i], self.domain_max[i]);
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::InvalidMesh(format!("domain extent [{a}, {b}] in direction {i} is empty or inverted")));
            }
        }
        Ok(())
    }

    pub fn coarsest_level(&self) -> usize {
        self.num_levels - 1
    }

    pub fn coarse_cell_size(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (self.domain_max[i] - self.domain_min[i]) / self.coarse_cells[i] as f64)
            .collect()
    }

    /// Bounding box of the padded domain.
    pub fn padded_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let h = self.coarse_cell_size();
        let pad = self.pad_cells as f64;
        let lo = (0..self.dim).map(|i| self.domain_min[i] - pad * h[i]).collect();
        let hi = (0..self.dim).map(|i| self.domain_max[i] + pad * h[i]).collect();
        (lo, hi)
    }

    pub fn padded_volume(&self) -> f64 {
        let (lo, hi) = self.padded_bounds();
        lo.iter().zip(&hi).map(|(a, b)| b - a).product()
    }

    /// Physical cells per direction on level 0.
    pub fn fine_cells(&self) -> Vec<usize> {
        let f = 1usize << self.coarsest_level();
        self.coarse_cells.iter().map(|c| c * f).collect()
    }

    pub fn without_padding(&self) -> Self {
        Self { pad_cells: 0, ..self.clone() }
    }

    /// Single-level spec one uniform refinement finer than level 0, covering
    /// the same padded domain.
    pub fn refined_reference(&self) -> Self {
        let f = 1usize << (self.coarsest_level() + 1);
        Self {
            coarse_cells: self.coarse_cells.iter().map(|c| c * f).collect(),
            num_levels: 1,
            pad_cells: self.pad_cells * f,
            ..self.clone()
        }
    }
}

/// One level of the hierarchy.
#[derive(Debug, Clone)]
pub struct LevelMesh {
    level: usize,
    dim: usize,
    cells: [usize; 3],
    lo: [f64; 3],
    h: [f64; 3],
    phys_start: [usize; 3],
    phys_cells: [usize; 3],
    cell_volume: f64,
    num_elements: usize,
    face_offsets: [usize; 4],
    face_tags: Vec<FaceTag>,
    inside_physical: Vec<bool>,
}

impl LevelMesh {
    fn new(spec: &MeshSpec, level: usize) -> Self {
        let dim = spec.dim;
        let refine = 1usize << (spec.coarsest_level() - level);
        let (plo, phi) = spec.padded_bounds();
        let mut cells = [1usize; 3];
        let mut lo = [0.0; 3];
        let mut h = [1.0; 3];
        let mut phys_start = [0usize; 3];
        let mut phys_cells = [1usize; 3];
        for i in 0..dim {
            phys_cells[i] = spec.coarse_cells[i] * refine;
            phys_start[i] = spec.pad_cells * refine;
            cells[i] = phys_cells[i] + 2 * phys_start[i];
            lo[i] = plo[i];
            h[i] = (phi[i] - plo[i]) / cells[i] as f64;
        }
        let num_elements = cells.iter().product();
        let cell_volume = h[..dim].iter().product();

        let mut face_offsets = [0usize; 4];
        for axis in 0..3 {
            let count = if axis < dim {
                let mut s = cells;
                s[axis] += 1;
                s.iter().product()
            } else {
                0
            };
            face_offsets[axis + 1] = face_offsets[axis] + count;
        }

        let mut mesh = Self {
            level,
            dim,
            cells,
            lo,
            h,
            phys_start,
            phys_cells,
            cell_volume,
            num_elements,
            face_offsets,
            face_tags: Vec::new(),
            inside_physical: Vec::new(),
        };
        mesh.face_tags = (0..mesh.num_faces()).map(|f| mesh.default_tag(f)).collect();
        mesh.inside_physical = (0..num_elements)
            .map(|e| {
                let c = mesh.element_coords(e);
                (0..dim).all(|i| c[i] >= phys_start[i] && c[i] < phys_start[i] + phys_cells[i])
            })
            .collect();
        mesh
    }

    // Dirichlet on the two x-sides, Neumann elsewhere, outflow at x_max.
    fn default_tag(&self, f: usize) -> FaceTag {
        match self.boundary_side(f) {
            None => FaceTag::Interior,
            Some((0, upper)) => FaceTag::Dirichlet { outflow: upper },
            Some(_) => FaceTag::Neumann,
        }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_dir(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn cell_size(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    pub fn lower_corner(&self) -> &[f64] {
        &self.lo[..self.dim]
    }

    pub fn upper_corner(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.lo[i] + self.h[i] * self.cells[i] as f64).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn num_faces(&self) -> usize {
        self.face_offsets[3]
    }

    pub fn face_tags(&self) -> &[FaceTag] {
        &self.face_tags
    }

    pub fn face_tag(&self, f: usize) -> FaceTag {
        self.face_tags[f]
    }

    pub fn inside_physical(&self) -> &[bool] {
        &self.inside_physical
    }

    pub fn is_padded(&self) -> bool {
        (0..self.dim).any(|i| self.phys_start[i] > 0)
    }

    /// Padded-mesh indices of the physical elements, in the element order of
    /// the unpadded mesh at the same level.
    pub fn physical_elements(&self) -> Vec<usize> {
        (0..self.num_elements).filter(|&e| self.inside_physical[e]).collect()
    }

    pub fn element_coords(&self, e: usize) -> [usize; 3] {
        let [nx, ny, _] = self.cells;
        [e % nx, (e / nx) % ny, e / (nx * ny)]
    }

    pub fn element_index(&self, c: [usize; 3]) -> usize {
        let [nx, ny, _] = self.cells;
        c[0] + nx * (c[1] + ny * c[2])
    }

    pub fn cell_center(&self, e: usize) -> Vec<f64> {
        let c = self.element_coords(e);
        (0..self.dim).map(|i| self.lo[i] + (c[i] as f64 + 0.5) * self.h[i]).collect()
    }

    fn face_shape(&self, axis: usize) -> [usize; 3] {
        let mut s = self.cells;
        s[axis] += 1;
        s
    }

    pub fn face_axis(&self, f: usize) -> usize {
        (0..self.dim).find(|&a| f < self.face_offsets[a + 1]).expect("face index out of range")
    }

    /// Axis and grid coordinates of a face; `coords[axis]` runs over `0..=cells[axis]`.
    pub fn face_coords(&self, f: usize) -> (usize, [usize; 3]) {
        let axis = self.face_axis(f);
        let local = f - self.face_offsets[axis];
        let [sx, sy, _] = self.face_shape(axis);
        (axis, [local % sx, (local / sx) % sy, local / (sx * sy)])
    }

    pub fn face_index(&self, axis: usize, c: [usize; 3]) -> usize {
        let [sx, sy, _] = self.face_shape(axis);
        self.face_offsets[axis] + c[0] + sx * (c[1] + sy * c[2])
    }

    /// The face of element `e` normal to `axis` on its lower or upper side.
    pub fn element_face(&self, e: usize, axis: usize, upper: bool) -> usize {
        let mut c = self.element_coords(e);
        if upper {
            c[axis] += 1;
        }
        self.face_index(axis, c)
    }

    /// Elements on the lower and upper side of a face (relative to its `+axis` normal).
    pub fn face_elements(&self, f: usize) -> (Option<usize>, Option<usize>) {
        let (axis, c) = self.face_coords(f);
        let below = (c[axis] > 0).then(|| {
            let mut cc = c;
            cc[axis] -= 1;
            self.element_index(cc)
        });
        let above = (c[axis] < self.cells[axis]).then(|| self.element_index(c));
        (below, above)
    }

    /// `Some((axis, upper))` for faces on the outer boundary.
    pub fn boundary_side(&self, f: usize) -> Option<(usize, bool)> {
        let (axis, c) = self.face_coords(f);
        if c[axis] == 0 {
            Some((axis, false))
        } else if c[axis] == self.cells[axis] {
            Some((axis, true))
        } else {
            None
        }
    }

    pub fn face_area(&self, axis: usize) -> f64 {
        self.cell_volume / self.h[axis]
    }

    pub fn face_center(&self, f: usize) -> Vec<f64> {
        let (axis, c) = self.face_coords(f);
        (0..self.dim)
            .map(|i| {
                let off = if i == axis { 0.0 } else { 0.5 };
                self.lo[i] + (c[i] as f64 + off) * self.h[i]
            })
            .collect()
    }

    /// Element whose half-open box `[a, b)` contains `point`; points on the
    /// upper outer boundary map to the last cell.
    pub fn locate_element(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: point.len() });
        }
        let mut c = [0usize; 3];
        for i in 0..self.dim {
            let t = (point[i] - self.lo[i]) / self.h[i];
            if !(t >= 0.0 && t <= self.cells[i] as f64) {
                return Err(Error::PointOutsideDomain { point: point.to_vec() });
            }
            c[i] = (t.floor() as usize).min(self.cells[i] - 1);
        }
        Ok(self.element_index(c))
    }

    /// Whether `point` lies in the physical (unpadded) part of the domain.
    pub fn contains_physical(&self, point: &[f64]) -> bool {
        point.len() == self.dim
            && (0..self.dim).all(|i| {
                let a = self.lo[i] + self.phys_start[i] as f64 * self.h[i];
                let b = a + self.phys_cells[i] as f64 * self.h[i];
                point[i] >= a && point[i] <= b
            })
    }
}

/// All levels of a nested structured mesh, ordered fine to coarse.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    spec: MeshSpec,
    levels: Vec<LevelMesh>,
}

impl MeshHierarchy {
    pub fn spec(&self) -> &MeshSpec {
        &self.spec
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn coarsest_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> &LevelMesh {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[LevelMesh] {
        &self.levels
    }

    fn check_pair(&self, level: usize, element: usize) -> Result<()> {
        if level >= self.coarsest_level() {
            return Err(Error::OutOfRange(format!(
                "level {level} has no parent level (coarsest is {})",
                self.coarsest_level()
            )));
        }
        let n = self.levels[level].num_elements();
        if element >= n {
            return Err(Error::OutOfRange(format!("element {element} at level {level} with {n} elements")));
        }
        Ok(())
    }

    /// Coarse element at `level + 1` containing `element` of `level`.
    pub fn parent_of(&self, level: usize, element: usize) -> Result<usize> {
        self.check_pair(level, element)?;
        nested_parent(&self.levels[level], &self.levels[level + 1], element)
    }

    /// The `2^dim` elements of `level - 1` nested in `element` of `level`.
    pub fn children_of(&self, level: usize, element: usize) -> Result<Vec<usize>> {
        if level == 0 || level > self.coarsest_level() {
            return Err(Error::OutOfRange(format!("level {level} has no child level")));
        }
        let coarse = &self.levels[level];
        if element >= coarse.num_elements() {
            return Err(Error::OutOfRange(format!("element {element} at level {level}")));
        }
        let fine = &self.levels[level - 1];
        let c = coarse.element_coords(element);
        let dim = coarse.dim();
        let mut out = Vec::with_capacity(1 << dim);
        for bits in 0..(1usize << dim) {
            let mut k = [0usize; 3];
            for i in 0..dim {
                k[i] = 2 * c[i] + ((bits >> i) & 1);
            }
            out.push(fine.element_index(k));
        }
        out.sort_unstable();
        Ok(out)
    }
}

/// Parent of `element` of `fine` inside the next coarser mesh `coarse`.
pub fn nested_parent(fine: &LevelMesh, coarse: &LevelMesh, element: usize) -> Result<usize> {
    check_nested(fine, coarse)?;
    if element >= fine.num_elements() {
        return Err(Error::OutOfRange(format!("element {element} of {}", fine.num_elements())));
    }
    let c = fine.element_coords(element);
    let mut p = [0usize; 3];
    for i in 0..fine.dim() {
        p[i] = c[i] / 2;
    }
    Ok(coarse.element_index(p))
}

/// Checks that `coarse` is the parent level of `fine`.
pub fn check_nested(fine: &LevelMesh, coarse: &LevelMesh) -> Result<()> {
    let ok = fine.dim() == coarse.dim()
        && coarse.level() == fine.level() + 1
        && fine.cells_per_dir().iter().zip(coarse.cells_per_dir()).all(|(f, c)| *f == 2 * c);
    if ok {
        Ok(())
    } else {
        Err(Error::LevelMismatch(format!(
            "level {} ({:?}) is not the parent of level {} ({:?})",
            coarse.level(),
            coarse.cells_per_dir(),
            fine.level(),
            fine.cells_per_dir()
        )))
    }
}

/// Builds all levels described by `spec`, finest first.
pub fn build_hierarchy(spec: &MeshSpec) -> Result<MeshHierarchy> {
    spec.validate()?;
    let levels = (0..spec.num_levels).map(|l| LevelMesh::new(spec, l)).collect();
    Ok(MeshHierarchy { spec: spec.clone(), levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_two_levels() {
        let h = build_hierarchy(&MeshSpec::unit(1, &[2], 2)).unwrap();
        assert_eq!(h.level(0).num_elements(), 4);
        assert_eq!(h.level(0).cell_volume(), 0.25);
        assert_eq!(h.level(1).num_elements(), 2);
        assert_eq!(h.level(1).cell_volume(), 0.5);
        let parents: Vec<usize> = (0..4).map(|e| h.parent_of(0, e).unwrap()).collect();
        assert_eq!(parents, vec![0, 0, 1, 1]);
    }

    #[test]
    fn two_dimensional_element_counts() {
        let h = build_hierarchy(&MeshSpec::unit(2, &[2, 2], 3)).unwrap();
        let counts: Vec<usize> = h.levels().iter().map(|m| m.num_elements()).collect();
        assert_eq!(counts, vec![64, 16, 4]);
    }

    #[test]
    fn cube_counts_from_non_cubic_coarse_grid() {
        // 3072 = 16 * 16 * 12 on the coarse level, times 8 per refinement.
        let h = build_hierarchy(&MeshSpec::unit(3, &[16, 16, 12], 3)).unwrap();
        let counts: Vec<usize> = h.levels().iter().rev().map(|m| m.num_elements()).collect();
        assert_eq!(counts, vec![3072, 24576, 196608]);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(build_hierarchy(&MeshSpec::unit(2, &[2, 2], 0)).is_err());
        assert!(build_hierarchy(&MeshSpec::unit(2, &[2, 0], 1)).is_err());
        let mut s = MeshSpec::unit(2, &[2, 2], 1);
        s.domain_max[1] = -1.0;
        assert!(build_hierarchy(&s).is_err());
        assert!(build_hierarchy(&MeshSpec::unit(4, &[1, 1, 1, 1], 1)).is_err());
    }

    #[test]
    fn parent_in_two_dimensions_and_composition() {
        let h = build_hierarchy(&MeshSpec::unit(2, &[1, 1], 3)).unwrap();
        // 4x4 -> 2x2 -> 1x1
        assert_eq!(h.parent_of(0, 0).unwrap(), 0);
        assert_eq!(h.parent_of(0, 5).unwrap(), 0);
        assert_eq!(h.parent_of(0, 15).unwrap(), 3);
        for e in 0..16 {
            let p = h.parent_of(0, e).unwrap();
            assert_eq!(h.parent_of(1, p).unwrap(), 0);
            assert!(h.children_of(1, p).unwrap().contains(&e));
        }
        assert!(h.parent_of(2, 0).is_err());
        assert!(h.parent_of(0, 16).is_err());
    }

    #[test]
    fn locate_uses_half_open_cells() {
        let h = build_hierarchy(&MeshSpec::unit(1, &[2], 2)).unwrap();
        let m = h.level(0);
        assert_eq!(m.locate_element(&[0.1]).unwrap(), 0);
        assert_eq!(m.locate_element(&[0.25]).unwrap(), 1);
        assert_eq!(m.locate_element(&[1.0]).unwrap(), 3);
        assert!(m.locate_element(&[1.01]).is_err());
        assert!(m.locate_element(&[-0.01]).is_err());
        for x in [0.05, 0.3, 0.5, 0.74, 0.99] {
            let fine = m.locate_element(&[x]).unwrap();
            let coarse = h.level(1).locate_element(&[x]).unwrap();
            assert_eq!(h.parent_of(0, fine).unwrap(), coarse);
        }
    }

    #[test]
    fn face_tags_partition_the_boundary() {
        let h = build_hierarchy(&MeshSpec::unit(3, &[2, 3, 2], 2)).unwrap();
        for m in h.levels() {
            for f in 0..m.num_faces() {
                let tag = m.face_tag(f);
                assert_eq!(tag.is_boundary(), m.boundary_side(f).is_some());
                if tag.is_outflow() {
                    assert_eq!(m.boundary_side(f), Some((0, true)));
                }
            }
            let (below, above) = m.face_elements(m.element_face(0, 1, true));
            assert_eq!(below, Some(0));
            assert!(above.is_some());
        }
    }

    #[test]
    fn padding_marks_physical_cells() {
        let spec = MeshSpec::unit(2, &[2, 2], 2).with_padding(1);
        let h = build_hierarchy(&spec).unwrap();
        let fine = h.level(0);
        assert_eq!(fine.cells_per_dir(), &[8, 8]);
        assert_eq!(fine.physical_elements().len(), 16);
        assert!((fine.cell_volume() - 0.0625).abs() < 1e-15);
        assert_eq!(fine.lower_corner(), &[-0.5, -0.5]);
        assert!(fine.is_padded());
        assert!(fine.contains_physical(&[0.5, 0.5]));
        assert!(!fine.contains_physical(&[-0.2, 0.5]));
        let total: f64 = (0..fine.num_elements()).map(|_| fine.cell_volume()).sum();
        assert!((total - spec.padded_volume()).abs() < 1e-12 * spec.padded_volume());
    }
}
