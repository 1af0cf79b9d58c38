//! Mixed Darcy flow with log-normal permeability, pressure observations and
//! the outflow quantity of interest.
//!
//! The weak form is `(k^{-1} q, s) - (div s, p) = -<p_D, s·n>` and
//! `(div q, v) = 0`, with `q·n = 0` on Neumann faces. The pressure Schur
//! complement `B M_k^{-1} B^T` is solved by CG, preconditioned with the
//! two-point operator `B D^{-1} B^T` (`D` the row sums of `M_k`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_hierarchy, FaceTag, LevelMesh, MeshSpec};
use crate::linalg::{cg, norm2, norm_inf, BandedCholesky, CsrMatrix};
use crate::noise::{Channel, RngStreams};
use crate::sampler::{FieldSampler, SpdeConfig};
use crate::spaces::{assemble_rt, Discretization, FluxBoundary, RtSpace, SpaceOptions};

/// Largest `n × bw²` for which the two-point preconditioner is factored;
/// beyond it a diagonal preconditioner is used.
const TPFA_FACTOR_LIMIT: f64 = 1e9;

/// Per-cell bound on `|(div q, 1_τ)|` accepted from a solve.
pub const CONSERVATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardSetup {
    /// Pressure on the `x_min` faces.
    pub p_inflow: f64,
    /// Pressure on the `x_max` faces.
    pub p_outflow: f64,
    /// Observation points; empty selects the default interior lattice.
    pub points: Vec<Vec<f64>>,
    /// Points per direction of the default lattice.
    pub lattice: usize,
    pub sigma_eta2: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ForwardSetup {
    fn default() -> Self {
        Self {
            p_inflow: 1.0,
            p_outflow: 0.0,
            points: Vec::new(),
            lattice: 5,
            sigma_eta2: 0.005,
            tol: 1e-12,
            max_iter: 5000,
        }
    }
}

impl ForwardSetup {
    /// Explicit points, or the lattice `(i + 1) / (m + 1)` of the physical box.
    pub fn observation_points(&self, spec: &MeshSpec) -> Vec<Vec<f64>> {
        if !self.points.is_empty() {
            return self.points.clone();
        }
        lattice_points(spec, self.lattice)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_eta2.is_finite() && self.sigma_eta2 >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_eta2 must be nonnegative, got {}", self.sigma_eta2)));
        }
        if self.points.is_empty() && self.lattice == 0 {
            return Err(Error::InvalidParameter("no observation points".into()));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter("solver tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

pub fn lattice_points(spec: &MeshSpec, m: usize) -> Vec<Vec<f64>> {
    let dim = spec.dim;
    let total = m.pow(dim as u32);
    (0..total)
        .map(|k| {
            let mut r = k;
            (0..dim)
                .map(|i| {
                    let j = r % m;
                    r /= m;
                    let t = (j + 1) as f64 / (m + 1) as f64;
                    spec.domain_min[i] + t * (spec.domain_max[i] - spec.domain_min[i])
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DarcySolution {
    /// Flux dofs of the model's flux space.
    pub q: Vec<f64>,
    /// Cell pressures.
    pub p: Vec<f64>,
    pub iterations: usize,
    /// `max_τ |(div q, 1_τ)|`
    pub conservation: f64,
}

/// Observation and quantity of interest for one field.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub predicted: Vec<f64>,
    pub qoi: f64,
}

/// Maps a field on the (possibly padded) sampling mesh of one level to
/// observations and the quantity of interest.
pub trait ForwardModel {
    fn level(&self) -> usize;

    /// Number of entries expected in `u`.
    fn num_field_values(&self) -> usize;

    fn evaluate(&self, u: &[f64]) -> Result<ForwardOutput>;

    /// Work units of one evaluation, for deterministic cost planning.
    fn cost_units(&self) -> f64;
}

/// Darcy problem on the physical part of one level.
#[derive(Debug, Clone)]
pub struct DarcyModel {
    level: usize,
    mesh: LevelMesh,
    rt: RtSpace,
    bt: CsrMatrix,
    field_index: Vec<usize>,
    num_field_values: usize,
    rhs: Vec<f64>,
    outflow_dofs: Vec<usize>,
    outflow_area: f64,
    obs_cells: Vec<usize>,
    tol: f64,
    max_iter: usize,
    factor_tpfa: bool,
}

impl DarcyModel {
    /// Darcy on `physical`, reading fields laid out on `sampling`. The two
    /// meshes must be the same level of the padded and unpadded hierarchy.
    pub fn new(sampling: &LevelMesh, physical: &LevelMesh, points: &[Vec<f64>], setup: &ForwardSetup) -> Result<Self> {
        setup.validate()?;
        if physical.is_padded() {
            return Err(Error::InvalidMesh("Darcy mesh must be unpadded".into()));
        }
        let field_index = if sampling.is_padded() {
            sampling.physical_elements()
        } else {
            (0..sampling.num_elements()).collect()
        };
        if field_index.len() != physical.num_elements() {
            return Err(Error::DimensionMismatch { expected: physical.num_elements(), got: field_index.len() });
        }
        let rt = assemble_rt(physical, SpaceOptions { flux_boundary: FluxBoundary::EliminateNeumann, lump_rt_mass: false })?;
        let mut rhs = vec![0.0; rt.num_dofs()];
        let mut outflow_dofs = Vec::new();
        let mut outflow_area = 0.0;
        for (d, &f) in rt.free_faces().iter().enumerate() {
            if let FaceTag::Dirichlet { outflow } = physical.face_tag(f) {
                rhs[d] = if outflow { -setup.p_outflow } else { setup.p_inflow };
                if outflow {
                    outflow_dofs.push(d);
                    outflow_area += physical.face_area(0);
                }
            }
        }
        if outflow_dofs.is_empty() {
            return Err(Error::InvalidMesh("empty outflow boundary".into()));
        }
        if points.is_empty() {
            return Err(Error::InvalidParameter("no observation points".into()));
        }
        let obs_cells = points
            .iter()
            .map(|x| {
                if !sampling.contains_physical(x) {
                    return Err(Error::PointOutsideDomain { point: x.clone() });
                }
                physical.locate_element(x)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = physical.num_elements() as f64;
        let bw: f64 = physical.cells_per_dir()[..physical.dim() - 1].iter().map(|&c| c as f64).product();
        Ok(Self {
            level: physical.level(),
            mesh: physical.clone(),
            bt: rt.div().transpose(),
            rt,
            field_index,
            num_field_values: sampling.num_elements(),
            rhs,
            outflow_dofs,
            outflow_area,
            obs_cells,
            tol: setup.tol,
            max_iter: setup.max_iter,
            factor_tpfa: n * bw * bw <= TPFA_FACTOR_LIMIT,
        })
    }

    /// Models for every level of the hierarchy described by `spec`.
    pub fn for_hierarchy(spec: &MeshSpec, setup: &ForwardSetup) -> Result<Vec<DarcyModel>> {
        let padded = build_hierarchy(spec)?;
        let physical = build_hierarchy(&spec.without_padding())?;
        let points = setup.observation_points(spec);
        (0..spec.num_levels)
            .map(|l| DarcyModel::new(padded.level(l), physical.level(l), &points, setup))
            .collect()
    }

    pub fn mesh(&self) -> &LevelMesh {
        &self.mesh
    }

    pub fn flux_space(&self) -> &RtSpace {
        &self.rt
    }

    pub fn num_observations(&self) -> usize {
        self.obs_cells.len()
    }

    pub fn outflow_area(&self) -> f64 {
        self.outflow_area
    }

    /// Physical cell values of a field given on the sampling mesh.
    pub fn restrict_field(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.num_field_values {
            return Err(Error::DimensionMismatch { expected: self.num_field_values, got: u.len() });
        }
        Ok(self.field_index.iter().map(|&e| u[e]).collect())
    }

    /// Solves with `k = exp(u)` for `u` on the physical cells.
    pub fn solve_physical(&self, u: &[f64]) -> Result<DarcySolution> {
        let ne = self.mesh.num_elements();
        if u.len() != ne {
            return Err(Error::DimensionMismatch { expected: ne, got: u.len() });
        }
        let weights: Vec<f64> = u.iter().map(|v| (-v).exp()).collect();
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidParameter("permeability exp(u) is not finite and positive".into()));
        }
        let mk = self.rt.weighted_mass(&weights)?;
        let mfac = BandedCholesky::factor(&mk, Some(self.rt.line_ordering().to_vec()))?;
        let b = self.rt.div();

        let lumped = mk.row_sums();
        let mut t = Vec::with_capacity(4 * self.bt.nnz());
        for f in 0..self.bt.nrows() {
            let entries: Vec<(usize, f64)> = self.bt.row(f).collect();
            for &(e1, s1) in &entries {
                for &(e2, s2) in &entries {
                    t.push((e1, e2, s1 * s2 / lumped[f]));
                }
            }
        }
        let tpfa = CsrMatrix::from_triplets(ne, ne, &t);
        let tpfa_fac = if self.factor_tpfa { Some(BandedCholesky::factor(&tpfa, None)?) } else { None };
        let tpfa_diag = tpfa.diagonal();

        let minv_f = mfac.solve(&self.rhs);
        let mut rhs = b.mul_vec(&minv_f);
        rhs.iter_mut().for_each(|v| *v = -*v);

        let mut apply = |x: &[f64], y: &mut [f64]| {
            let z = mfac.solve(&self.bt.mul_vec(x));
            b.mul_vec_into(&z, y);
        };
        let mut pre = |r: &[f64], z: &mut [f64]| match &tpfa_fac {
            Some(f) => f.solve_into(r, z),
            None => {
                for i in 0..r.len() {
                    z[i] = r[i] / tpfa_diag[i];
                }
            }
        };
        // the CG residual is B q, so bound it well below the conservation limit
        let rn = norm2(&rhs);
        let tol = if rn > 0.0 { self.tol.min(0.01 * CONSERVATION_TOL / rn) } else { self.tol };
        let mut p = vec![0.0; ne];
        let report = cg(&mut apply, Some(&mut pre), &rhs, &mut p, tol, self.max_iter)?;

        let mut q_rhs = self.bt.mul_vec(&p);
        for (a, f) in q_rhs.iter_mut().zip(&self.rhs) {
            *a += f;
        }
        let q = mfac.solve(&q_rhs);
        let conservation = norm_inf(&b.mul_vec(&q));
        if !(conservation <= CONSERVATION_TOL) {
            return Err(Error::Conservation(conservation));
        }
        Ok(DarcySolution { q, p, iterations: report.iterations, conservation })
    }

    /// Solves for a field given on the sampling mesh.
    pub fn solve(&self, u: &[f64]) -> Result<DarcySolution> {
        self.solve_physical(&self.restrict_field(u)?)
    }

    pub fn observe(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.mesh.num_elements() {
            return Err(Error::DimensionMismatch { expected: self.mesh.num_elements(), got: p.len() });
        }
        Ok(self.obs_cells.iter().map(|&e| p[e]).collect())
    }

    /// Mean outward flux over the `x_max` boundary.
    pub fn qoi_flux(&self, q: &[f64]) -> Result<f64> {
        if q.len() != self.rt.num_dofs() {
            return Err(Error::DimensionMismatch { expected: self.rt.num_dofs(), got: q.len() });
        }
        Ok(self.outflow_dofs.iter().map(|&d| q[d]).sum::<f64>() / self.outflow_area)
    }
}

impl ForwardModel for DarcyModel {
    fn level(&self) -> usize {
        self.level
    }

    fn num_field_values(&self) -> usize {
        self.num_field_values
    }

    fn evaluate(&self, u: &[f64]) -> Result<ForwardOutput> {
        let sol = self.solve(u)?;
        Ok(ForwardOutput { predicted: self.observe(&sol.p)?, qoi: self.qoi_flux(&sol.q)? })
    }

    fn cost_units(&self) -> f64 {
        (self.mesh.num_elements() + self.rt.num_dofs()) as f64
    }
}

/// Cell pressure at each point.
pub fn observe(mesh: &LevelMesh, p: &[f64], points: &[Vec<f64>]) -> Result<Vec<f64>> {
    if p.len() != mesh.num_elements() {
        return Err(Error::DimensionMismatch { expected: mesh.num_elements(), got: p.len() });
    }
    points.iter().map(|x| Ok(p[mesh.locate_element(x)?])).collect()
}

/// `-½ Σ (p_obs - predicted)² / σ_η²`
pub fn log_likelihood(p_obs: &[f64], predicted: &[f64], sigma_eta2: f64) -> Result<f64> {
    if !(sigma_eta2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma_eta2 must be positive, got {sigma_eta2}")));
    }
    if p_obs.len() != predicted.len() {
        return Err(Error::DimensionMismatch { expected: p_obs.len(), got: predicted.len() });
    }
    Ok(-0.5 * p_obs.iter().zip(predicted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / sigma_eta2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    /// Cells per direction of the (padded) mesh the truth was drawn on.
    pub cells: Vec<usize>,
    pub qoi: f64,
    pub noiseless: Vec<f64>,
}

/// Synthetic data set. JSON form `{points, p_obs, sigma_eta2, seed, truth}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub points: Vec<Vec<f64>>,
    pub p_obs: Vec<f64>,
    pub sigma_eta2: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthRecord>,
}

impl Observation {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn log_likelihood(&self, predicted: &[f64]) -> Result<f64> {
        log_likelihood(&self.p_obs, predicted, self.sigma_eta2)
    }
}

/// Truth field and data from a mesh one refinement finer than level 0 of
/// `chain_spec`, so the data never come from a mesh used for inference.
pub fn make_synthetic_data(
    chain_spec: &MeshSpec,
    spde: &SpdeConfig,
    setup: &ForwardSetup,
    seed: u64,
) -> Result<(Observation, Vec<f64>)> {
    let reference = chain_spec.refined_reference();
    let sampler = FieldSampler::new(Discretization::new(build_hierarchy(&reference)?, SpaceOptions::default())?, *spde)?;
    let models = DarcyModel::for_hierarchy(&reference, setup)?;
    make_synthetic_data_on(&sampler, &models[0], &chain_spec.fine_cells(), setup, seed)
}

/// [`make_synthetic_data`] on an explicit reference sampler and model.
/// `chain_fine_cells` are the physical cells of the finest inference mesh,
/// which the reference must strictly refine.
pub fn make_synthetic_data_on(
    sampler: &FieldSampler,
    model: &DarcyModel,
    chain_fine_cells: &[usize],
    setup: &ForwardSetup,
    seed: u64,
) -> Result<(Observation, Vec<f64>)> {
    let ref_cells = model.mesh().cells_per_dir();
    if ref_cells.len() != chain_fine_cells.len() || ref_cells.iter().zip(chain_fine_cells).any(|(r, c)| r <= c) {
        return Err(Error::InvalidMesh(format!(
            "reference mesh {ref_cells:?} does not refine the inference mesh {chain_fine_cells:?}"
        )));
    }
    let mut streams = RngStreams::new(seed);
    let truth = sampler.sample_prior(0, &mut streams)?;
    let out = model.evaluate(&truth.u)?;
    let (eta, _) = streams.normals(0, Channel::Data, out.predicted.len());
    let sd = setup.sigma_eta2.sqrt();
    let p_obs = out.predicted.iter().zip(&eta).map(|(p, e)| p + sd * e).collect();
    let points = setup.observation_points(sampler.discretization().hierarchy().spec());
    let obs = Observation {
        points,
        p_obs,
        sigma_eta2: setup.sigma_eta2,
        seed,
        truth: Some(TruthRecord {
            cells: sampler.discretization().mesh(0).cells_per_dir().to_vec(),
            qoi: out.qoi,
            noiseless: out.predicted,
        }),
    };
    Ok((obs, truth.u))
}
