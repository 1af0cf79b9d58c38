use mlspde_core::grid::{build_hierarchy, LevelMesh, MeshSpec};
use mlspde_core::linalg::CsrMatrix;
use mlspde_core::spaces::{assemble_rt, Discretization, FluxBoundary, SpaceOptions};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

// Basis of a face evaluated at `x` inside element `e`, from the defining
// property: normal component linear along the normal, `1/|f|` on the face,
// zero on the opposite face.
fn basis(mesh: &LevelMesh, face: usize, e: usize, x: &[f64]) -> Vec<f64> {
    let dim = mesh.dim();
    let mut out = vec![0.0; dim];
    let (axis, _) = mesh.face_coords(face);
    let fc = mesh.face_center(face);
    let cc = mesh.cell_center(e);
    let h = mesh.cell_size()[axis];
    let area: f64 = (0..dim).filter(|&i| i != axis).map(|i| mesh.cell_size()[i]).product();
    let is_face_of_e = mesh.face_elements(face).0 == Some(e) || mesh.face_elements(face).1 == Some(e);
    if !is_face_of_e {
        return out;
    }
    let opposite = 2.0 * cc[axis] - fc[axis];
    out[axis] = (x[axis] - opposite).abs() / h / area;
    out
}

fn oracle_mass(mesh: &LevelMesh) -> DMatrix<f64> {
    let dim = mesh.dim();
    let nf = mesh.num_faces();
    let mut m = DMatrix::zeros(nf, nf);
    let h = mesh.cell_size().to_vec();
    let npts = 5usize.pow(dim as u32);
    for e in 0..mesh.num_elements() {
        let cc = mesh.cell_center(e);
        let faces: Vec<usize> = (0..dim)
            .flat_map(|a| [mesh.element_face(e, a, false), mesh.element_face(e, a, true)])
            .collect();
        for q in 0..npts {
            let mut x = vec![0.0; dim];
            let mut w = 1.0;
            let mut r = q;
            for i in 0..dim {
                let k = r % 5;
                r /= 5;
                x[i] = cc[i] + 0.5 * h[i] * GL5_NODES[k];
                w *= 0.5 * h[i] * GL5_WEIGHTS[k];
            }
            let vals: Vec<Vec<f64>> = faces.iter().map(|&f| basis(mesh, f, e, &x)).collect();
            for (i, &fi) in faces.iter().enumerate() {
                for (j, &fj) in faces.iter().enumerate() {
                    let d: f64 = vals[i].iter().zip(&vals[j]).map(|(a, b)| a * b).sum();
                    m[(fi, fj)] += w * d;
                }
            }
        }
    }
    m
}

fn keep_all() -> SpaceOptions {
    SpaceOptions { flux_boundary: FluxBoundary::KeepAll, ..Default::default() }
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

#[test]
fn unit_square_element_matches_fifth_order_oracle() {
    let h = build_hierarchy(&MeshSpec::unit(2, &[1, 1], 1)).unwrap();
    let rt = assemble_rt(h.level(0), keep_all()).unwrap();
    let err = max_abs_diff(&rt.mass().to_dense(), &oracle_mass(h.level(0)));
    assert!(err < 1e-12, "{err}");
}

#[test]
fn meshes_up_to_eight_by_eight_match_oracle() {
    for (dims, cells) in [(2, vec![8, 8]), (2, vec![3, 5]), (3, vec![2, 3, 2])] {
        let mut spec = MeshSpec::unit(dims, &cells, 1);
        spec.domain_max[0] = 1.7;
        let h = build_hierarchy(&spec).unwrap();
        let rt = assemble_rt(h.level(0), keep_all()).unwrap();
        let err = max_abs_diff(&rt.mass().to_dense(), &oracle_mass(h.level(0)));
        assert!(err < 1e-12, "{cells:?}: {err}");
    }
}

#[test]
fn scaled_mesh_matches_oracle() {
    for s in [0.01, 0.5, 3.0, 40.0] {
        let mut spec = MeshSpec::unit(2, &[3, 2], 1);
        spec.domain_max = vec![s, 2.0 * s];
        let h = build_hierarchy(&spec).unwrap();
        let rt = assemble_rt(h.level(0), keep_all()).unwrap();
        let oracle = oracle_mass(h.level(0));
        let err = max_abs_diff(&rt.mass().to_dense(), &oracle) / oracle.abs().max();
        assert!(err < 1e-12, "scale {s}: {err}");
    }
}

#[test]
fn eliminated_boundary_is_a_principal_submatrix() {
    let h = build_hierarchy(&MeshSpec::unit(2, &[4, 3], 1)).unwrap();
    let all = assemble_rt(h.level(0), keep_all()).unwrap();
    for bc in [FluxBoundary::EliminateAll, FluxBoundary::EliminateNeumann] {
        let sub = assemble_rt(h.level(0), SpaceOptions { flux_boundary: bc, ..Default::default() }).unwrap();
        let faces = sub.free_faces();
        for (i, j, v) in sub.mass().triplets() {
            assert_eq!(v, all.mass().get(faces[i], faces[j]));
        }
        for (e, j, v) in sub.div().triplets() {
            assert_eq!(v, all.div().get(e, faces[j]));
        }
        for f in 0..h.level(0).num_faces() {
            let tag = h.level(0).face_tag(f);
            let kept = sub.dof_of_face(f).is_some();
            match bc {
                FluxBoundary::EliminateAll => assert_eq!(kept, !tag.is_boundary()),
                _ => assert_eq!(kept, !matches!(tag, mlspde_core::grid::FaceTag::Neumann)),
            }
        }
    }
}

#[test]
fn schur_operator_is_spd() {
    for (cells, pad) in [(vec![8, 8], 0), (vec![2, 3], 1)] {
        let h = build_hierarchy(&MeshSpec::unit(2, &cells, 1).with_padding(pad)).unwrap();
        let d = Discretization::new(h, SpaceOptions::default()).unwrap();
        let ops = d.ops(0);
        let rt = ops.require_rt().unwrap();
        let (kappa, g) = (3.0, 2.0);
        let m = rt.mass().to_dense();
        let b = rt.div().to_dense();
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(ops.w()));
        let minv = m.clone().try_inverse().unwrap();
        let a = &w * (kappa * kappa / g) + &b * minv * b.transpose() / g;
        assert!(max_abs_diff(&a, &a.transpose()) < 1e-12 * a.abs().max());
        let eig = a.symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
        let meig = m.symmetric_eigen();
        assert!(meig.eigenvalues.min() > 0.0);
    }
}

fn sparse_diff(a: &CsrMatrix, b: &CsrMatrix) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut t: Vec<(usize, usize, f64)> = a.triplets().collect();
    t.extend(b.triplets().map(|(i, j, v)| (i, j, -v)));
    let d = CsrMatrix::from_triplets(a.nrows(), a.ncols(), &t);
    d.values().iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn check_transfer_identities(d: &Discretization) {
    for (l, t) in d.transfers().iter().enumerate() {
        let (p, pi) = (t.p(), t.pi());
        let wf = d.ops(l).w_matrix();
        let wc = d.ops(l + 1).w_matrix();
        let scale = d.ops(l + 1).w()[0];
        assert!(sparse_diff(&pi.matmul(p).unwrap(), &CsrMatrix::identity(t.num_coarse())) < 1e-14);
        let gal = p.transpose().matmul(&wf).unwrap().matmul(p).unwrap();
        assert!(sparse_diff(&gal, &wc) <= 1e-14 * scale);
        let proj = p.matmul(pi).unwrap();
        assert!(sparse_diff(&proj.matmul(&proj).unwrap(), &proj) < 1e-12);
        let lhs = proj.transpose().matmul(&wf).unwrap();
        let rhs = wf.matmul(&proj).unwrap();
        assert!(sparse_diff(&lhs, &rhs) < 1e-12 * d.ops(l).w()[0]);
        for v in p.values() {
            assert_eq!(*v, 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn transfer_identities_on_random_hierarchies(
        dim in 1usize..=3,
        cells in proptest::collection::vec(1usize..=3, 3),
        levels in 1usize..=3,
        pad in 0usize..=1,
        stretch in 0.2f64..5.0,
    ) {
        let mut spec = MeshSpec::unit(dim, &cells[..dim], levels).with_padding(pad);
        spec.domain_max[0] = stretch;
        let d = Discretization::new(build_hierarchy(&spec).unwrap(), SpaceOptions::default()).unwrap();
        check_transfer_identities(&d);
    }
}

#[test]
fn column_sums_of_divergence() {
    let h = build_hierarchy(&MeshSpec::unit(3, &[2, 2, 3], 1)).unwrap();
    let rt = assemble_rt(h.level(0), SpaceOptions::default()).unwrap();
    let ones = vec![1.0; h.level(0).num_elements()];
    let sums = rt.div().tr_mul_vec(&ones);
    // every remaining face is interior
    assert!(sums.iter().all(|s| *s == 0.0));
    let _: &CsrMatrix = rt.div();
}
