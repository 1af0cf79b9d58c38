use mlspde_core::grid::{build_hierarchy, MeshSpec};
use mlspde_core::noise::{single_level_noise, RngStreams};
use mlspde_core::sampler::{log_prior_density_from_field, DenseOracle, FieldSampler, SolverKind, SpdeConfig};
use mlspde_core::spaces::{Discretization, SpaceOptions};
use mlspde_core::stats::{covariance_se, cross_se, max_mean_multiple, max_se_multiple, mean_se, Covariance, CrossMoments};
use nalgebra::{DMatrix, DVector};

const N: usize = 200_000;
const LIMIT: f64 = 5.0;

fn sampler(cells: &[usize], levels: usize, pad: usize, cfg: SpdeConfig) -> FieldSampler {
    let h = build_hierarchy(&MeshSpec::unit(2, cells, levels).with_padding(pad)).unwrap();
    FieldSampler::new(Discretization::new(h, SpaceOptions::default()).unwrap(), cfg).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    d / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

#[test]
fn solves_match_dense_oracle() {
    for kind in [SolverKind::Direct, SolverKind::SchurCg, SolverKind::Minres] {
        for (cells, pad) in [(vec![8, 8], 0), (vec![3, 2], 1)] {
            let cfg = SpdeConfig::new(4.0, 1.3).with_solver(kind);
            let s = sampler(&cells, 1, pad, cfg);
            let ops = s.discretization().ops(0);
            let oracle = DenseOracle::new(ops, &cfg).unwrap();
            let mut streams = RngStreams::new(10);
            for _ in 0..3 {
                let r = s.sample_prior(0, &mut streams).unwrap();
                let expect = oracle.solve(&r.noise.b);
                assert!(rel_err(&r.u, &expect) < 1e-8, "{kind:?} {cells:?}");
                assert!(r.report.relative_residual <= cfg.tol);
            }
        }
    }
}

// Eliminating ρ from the dense saddle system reproduces A u = b.
#[test]
fn schur_complement_equivalence() {
    let cfg = SpdeConfig::new(2.5, 0.7);
    let s = sampler(&[4, 4], 1, 0, cfg);
    let ops = s.discretization().ops(0);
    let rt = ops.rt().unwrap();
    let (nf, ne) = (rt.num_dofs(), ops.num_elements());
    let mut k = DMatrix::zeros(nf + ne, nf + ne);
    k.view_mut((0, 0), (nf, nf)).copy_from(&rt.mass().to_dense());
    let b = rt.div().to_dense();
    k.view_mut((nf, 0), (ne, nf)).copy_from(&b);
    k.view_mut((0, nf), (nf, ne)).copy_from(&b.transpose());
    for i in 0..ne {
        k[(nf + i, nf + i)] = -cfg.kappa * cfg.kappa * ops.w()[i];
    }
    let noise = single_level_noise(ops, &mut RngStreams::new(3));
    let mut rhs = DVector::zeros(nf + ne);
    for i in 0..ne {
        rhs[nf + i] = -cfg.g * noise.b[i];
    }
    let x = k.lu().solve(&rhs).unwrap();
    let u_saddle: Vec<f64> = x.as_slice()[nf..].to_vec();
    let oracle = DenseOracle::new(ops, &cfg).unwrap();
    assert!(rel_err(&oracle.solve(&noise.b), &u_saddle) < 1e-10);
    let r = s.solve(noise).unwrap();
    assert!(rel_err(&r.u, &u_saddle) < 1e-10);
    assert!(rel_err(&r.rho, &x.as_slice()[..nf]) < 1e-10);
}

#[test]
fn density_identity_against_dense_operator() {
    let cfg = SpdeConfig::new(3.0, 2.0);
    let s = sampler(&[6, 6], 2, 0, cfg);
    let oracle = DenseOracle::new(s.discretization().ops(0), &cfg).unwrap();
    let mut streams = RngStreams::new(4);
    for _ in 0..5 {
        let r = s.sample_hierarchical_at(0, &mut streams).unwrap();
        let from_b = s.log_prior_density(&r);
        let from_u = oracle.log_density(&r.u);
        assert!((from_b - from_u).abs() <= 1e-8 * from_b.abs());
        let sparse_u = log_prior_density_from_field(s.solver(0), &r.u);
        assert!((from_b - sparse_u).abs() <= 1e-8 * from_b.abs());
    }
}

#[test]
fn oracle_refuses_large_meshes() {
    let cfg = SpdeConfig::new(1.0, 1.0);
    let s = sampler(&[50, 50], 1, 0, cfg);
    assert!(DenseOracle::new(s.discretization().ops(0), &cfg).is_err());
}

#[test]
fn prior_covariance_matches_dense_oracle() {
    let cfg = SpdeConfig::from_matern(1.0, 0.4, 2).unwrap();
    let s = sampler(&[2, 2], 2, 0, cfg);
    let ops = s.discretization().ops(0);
    let c = DenseOracle::new(ops, &cfg).unwrap().covariance();
    let mut streams = RngStreams::new(2718);
    let mut acc = Covariance::new(16);
    for _ in 0..N {
        acc.push(&s.sample_prior(0, &mut streams).unwrap().u);
    }
    let z = max_se_multiple(&acc.estimate(), &c, &covariance_se(&c, N));
    assert!(z < LIMIT, "covariance: {z}");
    let zm = max_mean_multiple(&acc.mean(), &mean_se(&c, N));
    assert!(zm < LIMIT, "mean: {zm}");
}

// Fresh coarse and fine draws through the conditional sampler give the
// level-0 prior.
#[test]
fn conditional_marginal_law() {
    let cfg = SpdeConfig::from_matern(1.0, 0.4, 2).unwrap();
    let s = sampler(&[2, 2], 2, 0, cfg);
    let c = DenseOracle::new(s.discretization().ops(0), &cfg).unwrap().covariance();
    let mut streams = RngStreams::new(99);
    let mut acc = Covariance::new(16);
    for _ in 0..N {
        let coarse = s.sample_prior(1, &mut streams).unwrap();
        acc.push(&s.sample_conditional(&coarse, &mut streams).unwrap().u);
    }
    let z = max_se_multiple(&acc.estimate(), &c, &covariance_se(&c, N));
    assert!(z < LIMIT, "{z}");
}

#[test]
fn components_are_uncorrelated() {
    let cfg = SpdeConfig::new(2.0, 1.0);
    let s = sampler(&[1, 1], 3, 0, cfg);
    let n = 50_000;
    let mut streams = RngStreams::new(7);
    let mut comps: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 3];
    for _ in 0..n {
        let fine = s.sample_hierarchical_at(0, &mut streams).unwrap();
        for c in s.decompose(&fine).unwrap() {
            comps[c.source_level].push(c.u);
        }
    }
    let cov_of = |v: &Vec<Vec<f64>>| {
        let mut a = Covariance::new(16);
        v.iter().for_each(|x| a.push(x));
        a.estimate()
    };
    let covs: Vec<DMatrix<f64>> = comps.iter().map(cov_of).collect();
    for (l, m) in [(0, 1), (0, 2), (1, 2)] {
        let mut cross = CrossMoments::new(16, 16);
        for i in 0..n {
            cross.push(&comps[l][i], &comps[m][i]);
        }
        let z = max_se_multiple(&cross.moment(), &DMatrix::zeros(16, 16), &cross_se(&covs[l], &covs[m], n));
        assert!(z < LIMIT, "components {l},{m}: {z}");
    }
}

#[test]
fn hierarchical_and_single_level_agree_on_each_level() {
    let cfg = SpdeConfig::new(2.0, 1.0);
    let s = sampler(&[1, 2], 2, 0, cfg);
    let mut streams = RngStreams::new(12);
    let mut accs = [Covariance::new(8), Covariance::new(2)];
    for _ in 0..N {
        for r in s.sample_hierarchical(0, &mut streams).unwrap() {
            accs[r.level].push(&r.u);
        }
    }
    for (l, acc) in accs.iter().enumerate() {
        let c = DenseOracle::new(s.discretization().ops(l), &cfg).unwrap().covariance();
        let z = max_se_multiple(&acc.estimate(), &c, &covariance_se(&c, N));
        assert!(z < LIMIT, "level {l}: {z}");
    }
}
