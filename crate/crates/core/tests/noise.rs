use mlspde_core::grid::{build_hierarchy, MeshSpec};
use mlspde_core::noise::{conditional_noise, hierarchical_noise, single_level_noise, RngStreams};
use mlspde_core::spaces::{Discretization, SpaceOptions};
use mlspde_core::stats::{covariance_se, cross_se, max_se_multiple, Covariance, CrossMoments};
use nalgebra::{DMatrix, DVector};

const N: usize = 200_000;
const LIMIT: f64 = 5.0;

fn disc(dim: usize, cells: &[usize], levels: usize) -> Discretization {
    Discretization::new(build_hierarchy(&MeshSpec::unit(dim, cells, levels)).unwrap(), SpaceOptions::default()).unwrap()
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

fn inv(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| 1.0 / x).collect()
}

#[test]
fn single_level_noise_has_mass_covariance() {
    let d = disc(1, &[4], 1);
    let ops = d.ops(0);
    let mut streams = RngStreams::new(2024);
    let mut cb = Covariance::new(4);
    let mut cz = Covariance::new(4);
    for _ in 0..N {
        let b = single_level_noise(ops, &mut streams);
        cb.push(&b.b);
        let zeta: Vec<f64> = b.b.iter().zip(ops.w()).map(|(x, w)| x / w).collect();
        cz.push(&zeta);
    }
    let w = diag(ops.w());
    let z = max_se_multiple(&cb.estimate(), &w, &covariance_se(&w, N));
    assert!(z < LIMIT, "b: {z}");
    let winv = diag(&inv(ops.w()));
    let z = max_se_multiple(&cz.estimate(), &winv, &covariance_se(&winv, N));
    assert!(z < LIMIT, "zeta: {z}");
}

#[test]
fn hierarchical_noise_has_fine_mass_covariance() {
    let d = disc(1, &[2], 2);
    let mut streams = RngStreams::new(77);
    let mut c = Covariance::new(4);
    for _ in 0..N {
        let all = hierarchical_noise(d.all_ops(), d.transfers(), &mut streams, 0).unwrap();
        c.push(&all[1].b);
    }
    let w = diag(d.ops(0).w());
    let z = max_se_multiple(&c.estimate(), &w, &covariance_se(&w, N));
    assert!(z < LIMIT, "{z}");
}

// Two-level white noise on a 4x4 fine mesh: covariance of ζ', of Πζ', and
// independence of Πζ' from (I - PΠ)ζ'.
#[test]
fn two_level_noise_covariances_and_independence() {
    let d = disc(2, &[2, 2], 2);
    let (fine, coarse) = (d.ops(0), d.ops(1));
    let t = d.transfer(0);
    let nf = fine.num_elements();
    let nc = coarse.num_elements();
    let mut streams = RngStreams::new(31);
    let mut cz = Covariance::new(nf);
    let mut cc = Covariance::new(nc);
    let mut cross = CrossMoments::new(nc, nf);
    for _ in 0..N {
        let bc = single_level_noise(coarse, &mut streams);
        let bf = conditional_noise(fine, t, &bc, &mut streams).unwrap();
        let zeta: Vec<f64> = bf.b.iter().zip(fine.w()).map(|(x, w)| x / w).collect();
        let pz = t.restrict(&zeta).unwrap();
        let back = t.interpolate(&pz).unwrap();
        let rest: Vec<f64> = zeta.iter().zip(&back).map(|(a, b)| a - b).collect();
        cz.push(&zeta);
        cc.push(&pz);
        cross.push(&pz, &rest);
    }
    let wf_inv = diag(&inv(fine.w()));
    let wc_inv = diag(&inv(coarse.w()));
    let z = max_se_multiple(&cz.estimate(), &wf_inv, &covariance_se(&wf_inv, N));
    assert!(z < LIMIT, "fine: {z}");
    let z = max_se_multiple(&cc.estimate(), &wc_inv, &covariance_se(&wc_inv, N));
    assert!(z < LIMIT, "coarse projection: {z}");

    let p = t.p().to_dense();
    let pi = t.pi().to_dense();
    let q = DMatrix::identity(nf, nf) - &p * &pi;
    let c_rest = &q * &wf_inv * q.transpose();
    let target = DMatrix::zeros(nc, nf);
    let z = max_se_multiple(&cross.moment(), &target, &cross_se(&wc_inv, &c_rest, N));
    assert!(z < LIMIT, "cross: {z}");
}

#[test]
fn three_level_hierarchy_covariance_on_each_level() {
    let d = disc(2, &[1, 1], 3);
    let mut streams = RngStreams::new(5);
    let mut covs: Vec<Covariance> = (0..3).map(|l| Covariance::new(d.ops(l).num_elements())).collect();
    for _ in 0..N {
        let all = hierarchical_noise(d.all_ops(), d.transfers(), &mut streams, 0).unwrap();
        for b in &all {
            covs[b.level].push(&b.b);
        }
    }
    for (l, c) in covs.iter().enumerate() {
        let w = diag(d.ops(l).w());
        let z = max_se_multiple(&c.estimate(), &w, &covariance_se(&w, N));
        assert!(z < LIMIT, "level {l}: {z}");
    }
}
