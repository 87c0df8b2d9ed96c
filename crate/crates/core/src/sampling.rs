//! Record sampling and the two ways of averaging a map over its records.
//!
//! Method I integrates `𝒥[M(Y)]` against the ostensible density, giving a
//! linear channel; because `M` is polynomial in the record this reduces to
//! Gaussian moments and is exact. Method II integrates the normalized update
//! `MρM†/Tr[MρM†]` against a guessed Gaussian that depends on `ρ`, which
//! needs quadrature.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::GaussHermite;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Channel, ComplexMatrix, DensityMatrix, C64};
use crate::maps::{
    apply_unnormalized, guessed_pdf, Coupling, GaussianPdf, MapKind, MeasurementOperator,
    OperatorFamily, OstensiblePdf, RecordSample,
};
use crate::random::Stream;

pub const DEFAULT_NODES: usize = 40;
pub const QUADRATURE_TOLERANCE: f64 = 1e-10;

/// Raw moments `E[V^k]`, `k ≤ 4`, of a Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub pdf: GaussianPdf,
    pub moments: [f64; 5],
}

impl MomentTable {
    pub fn new(pdf: GaussianPdf) -> Self {
        let mut moments = [0.0; 5];
        for (k, m) in moments.iter_mut().enumerate() {
            *m = pdf.raw_moment(k as u32);
        }
        Self { pdf, moments }
    }

    pub fn get(&self, k: u32) -> f64 {
        match self.moments.get(k as usize) {
            Some(&m) => m,
            None => self.pdf.raw_moment(k),
        }
    }

    /// `E[(V − μ)^k]`
    pub fn central(&self, k: u32) -> f64 {
        GaussianPdf {
            mean: 0.0,
            variance: self.pdf.variance,
        }
        .raw_moment(k)
    }
}

fn field_moment(pdf: &OstensiblePdf, field: usize, k: u32) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let g = match field {
        0 => pdf.y,
        1 => pdf.z,
        _ => pdf.x,
    };
    g.map_or(0.0, |g| g.raw_moment(k))
}

fn joint_moment(pdf: &OstensiblePdf, powers: [u32; 3]) -> f64 {
    (0..3).map(|i| field_moment(pdf, i, powers[i])).product()
}

fn sum_powers(a: [u32; 3], b: [u32; 3]) -> [u32; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Step-local operator for averaging: the time origin of each step is its
/// start.
fn step_operator(kind: MapKind, coupling: &Coupling, dt: f64) -> Result<MeasurementOperator> {
    MeasurementOperator::new(kind, coupling, dt, 0.0)
}

/// `∫ dr p_ost(r) 𝒥[M(r)]`, evaluated exactly.
pub fn average_channel_method1(kind: MapKind, coupling: &Coupling, dt: f64) -> Result<Channel> {
    let op = step_operator(kind, coupling, dt)?;
    Ok(match &op.family {
        OperatorFamily::Polynomial(poly) => {
            let d = poly.dim();
            let mut matrix = ComplexMatrix::zeros(d * d);
            for (pa, ma) in poly.terms() {
                for (pb, mb) in poly.terms() {
                    let w = joint_moment(&op.ostensible, sum_powers(*pa, *pb));
                    if w != 0.0 {
                        matrix += &Channel::sandwich(ma, mb).matrix().scale_real(w);
                    }
                }
            }
            Channel::from_matrix(d, matrix)?
        }
        OperatorFamily::Hermitian(h) => {
            // In the eigenbasis, ρ_jk ↦ ρ_jk · E[M_j(Y) M_k(Y)].
            let n = h.means.len();
            let factor = ComplexMatrix::from_fn(n, |j, k| {
                let (mj, mk) = (h.means[j], h.means[k]);
                C64::new((-dt * (mj - mk).powi(2) / 8.0).exp(), 0.0)
            });
            let u = &h.basis;
            let ud = u.dagger();
            crate::linalg::vectorize_superop(n, |rho| {
                let inner = &(&ud * rho) * u;
                let damped = ComplexMatrix::from_fn(n, |j, k| inner[(j, k)] * factor[(j, k)]);
                &(u * &damped) * &ud
            })?
        }
    })
}

/// `∫ dr p_ost(r) M†(r) M(r) − 1`, evaluated exactly.
pub fn completeness_residual(kind: MapKind, coupling: &Coupling, dt: f64) -> Result<ComplexMatrix> {
    let op = step_operator(kind, coupling, dt)?;
    let d = op.dim();
    let mut out = ComplexMatrix::identity(d).scale_real(-1.0);
    match &op.family {
        OperatorFamily::Polynomial(poly) => {
            for (pa, ma) in poly.terms() {
                let mad = ma.dagger();
                for (pb, mb) in poly.terms() {
                    let w = joint_moment(&op.ostensible, sum_powers(*pa, *pb));
                    if w != 0.0 {
                        out += &(&mad * mb).scale_real(w);
                    }
                }
            }
        }
        OperatorFamily::Hermitian(h) => {
            // E[M_j(Y)²] = E[exp(aY)]·exp(−Δt m²/2) with a = Δt m and
            // E[exp(aY)] = exp(a²/(2Δt)) for Y ~ N(0, 1/Δt).
            let weights: Vec<C64> = h
                .means
                .iter()
                .map(|&m| {
                    let a = dt * m;
                    C64::new((a * a / (2.0 * dt) - dt * m * m / 2.0).exp(), 0.0)
                })
                .collect();
            out += &(&(&h.basis * &ComplexMatrix::diag(&weights)) * &h.basis.dagger());
        }
    }
    Ok(out.hermitian_part())
}

static RULES: OnceLock<Mutex<HashMap<usize, Arc<Vec<(f64, f64)>>>>> = OnceLock::new();

/// Probabilists' Gauss-Hermite rule: nodes `u` and weights `w` with
/// `Σ w f(u) ≈ E[f(N(0,1))]`.
pub fn standard_normal_rule(n: usize) -> Result<Arc<Vec<(f64, f64)>>> {
    let n = NonZeroUsize::new(n)
        .ok_or_else(|| Error::InvalidParameter("quadrature needs at least one node".into()))?;
    let cache = RULES.get_or_init(|| Mutex::new(HashMap::new()));
    let mut cache = cache.lock().expect("quadrature cache poisoned");
    let rule = cache.entry(n.get()).or_insert_with(|| {
        let gh = GaussHermite::new(n);
        let norm = std::f64::consts::PI.sqrt();
        Arc::new(
            gh.as_node_weight_pairs()
                .iter()
                .map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w / norm))
                .collect(),
        )
    });
    Ok(Arc::clone(rule))
}

fn normalized_average(
    op: &MeasurementOperator,
    rho: &DensityMatrix,
    pdf: &GaussianPdf,
    n_nodes: usize,
) -> Result<ComplexMatrix> {
    let rule = standard_normal_rule(n_nodes)?;
    let mut acc = ComplexMatrix::zeros(rho.dim());
    for &(u, w) in rule.iter() {
        let y = pdf.mean + pdf.std_dev() * u;
        let m = op.evaluate(&RecordSample::y(y))?;
        let (out, weight) = apply_unnormalized(&m, rho.matrix())?;
        if !(weight > 1e-300) {
            return Err(Error::ZeroNormState { norm: weight });
        }
        acc += &out.scale_real(w / weight);
    }
    Ok(acc)
}

/// `∫ dY p_g(Y|ρ) MρM†/Tr[MρM†]` with the guessed Gaussian `p_g`.
pub fn average_channel_method2(
    kind: MapKind,
    coupling: &Coupling,
    dt: f64,
    rho: &DensityMatrix,
    n_nodes: usize,
) -> Result<DensityMatrix> {
    if n_nodes < 20 {
        return Err(Error::InvalidParameter(format!(
            "Method II needs at least 20 quadrature nodes, got {n_nodes}"
        )));
    }
    let pdf = guessed_pdf(kind, &coupling.c, rho, dt)?;
    let op = step_operator(kind, coupling, dt)?;
    let coarse = normalized_average(&op, rho, &pdf, n_nodes)?;
    let fine = normalized_average(&op, rho, &pdf, 2 * n_nodes)?;
    let change = coarse.max_abs_diff(&fine);
    if change > QUADRATURE_TOLERANCE {
        return Err(Error::QuadratureNotConverged { change });
    }
    Ok(DensityMatrix::new_unchecked(fine))
}

/// Method I integral by tensor-product Gauss-Hermite quadrature instead of
/// moments; a cross-check for [`average_channel_method1`].
pub fn average_channel_quadrature(
    kind: MapKind,
    coupling: &Coupling,
    dt: f64,
    n_nodes: usize,
) -> Result<Channel> {
    let op = step_operator(kind, coupling, dt)?;
    let d = op.dim();
    let rule = standard_normal_rule(n_nodes)?;
    let axis = |g: Option<GaussianPdf>| -> Vec<(Option<f64>, f64)> {
        match g {
            Some(g) => rule
                .iter()
                .map(|&(u, w)| (Some(g.mean + g.std_dev() * u), w))
                .collect(),
            None => vec![(None, 1.0)],
        }
    };
    let ost = op.ostensible;
    let mut matrix = ComplexMatrix::zeros(d * d);
    for (y, wy) in axis(ost.y) {
        for (z, wz) in axis(ost.z) {
            for (x, wx) in axis(ost.x) {
                let record = RecordSample {
                    y: y.unwrap_or(0.0),
                    z,
                    x,
                    t0: 0.0,
                };
                let m = op.evaluate(&record)?;
                matrix += &Channel::jump(&m).matrix().scale_real(wy * wz * wx);
            }
        }
    }
    Channel::from_matrix(d, matrix)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplingStrategy {
    /// Records from `p_ost`; the weight `Tr[MρM†]` multiplies into an
    /// unnormalized (linear) trajectory.
    Ostensible,
    /// Records from the guessed Gaussian `p_g(·|ρ)`; unit weight.
    GuessedGaussian,
    /// Records from `p_ost`; the weight `Tr[MρM†]` is a self-normalized
    /// importance weight for the exact record density.
    ExactImportance,
}

/// A seeded record source for one map kind.
#[derive(Clone, Debug)]
pub struct RecordSampler {
    pub kind: MapKind,
    pub strategy: SamplingStrategy,
    pub seed: u64,
    stream: Stream,
}

impl RecordSampler {
    pub fn new(kind: MapKind, strategy: SamplingStrategy, seed: u64) -> Self {
        Self::for_index(kind, strategy, seed, 0)
    }

    /// Independent sampler number `index` derived from `seed`.
    pub fn for_index(kind: MapKind, strategy: SamplingStrategy, seed: u64, index: u64) -> Self {
        Self {
            kind,
            strategy,
            seed,
            stream: Stream::new(seed, index),
        }
    }

    pub fn stream(&mut self) -> &mut Stream {
        &mut self.stream
    }

    fn draw(&mut self, g: &GaussianPdf) -> f64 {
        g.mean + g.std_dev() * self.stream.normal()
    }

    /// Draws every field of `pdf`.
    pub fn draw_ostensible(&mut self, pdf: &OstensiblePdf, t0: f64) -> RecordSample {
        let y = pdf.y.map_or(0.0, |g| self.draw(&g));
        let z = pdf.z.map(|g| self.draw(&g));
        let x = pdf.x.map(|g| self.draw(&g));
        RecordSample { y, z, x, t0 }
    }

    /// Draws a record for `op` applied to `ρ` and returns it with its weight.
    pub fn sample_with(
        &mut self,
        op: &MeasurementOperator,
        coupling: &Coupling,
        rho: &DensityMatrix,
        t0: f64,
    ) -> Result<(RecordSample, f64)> {
        match self.strategy {
            SamplingStrategy::GuessedGaussian => {
                let pdf = guessed_pdf(self.kind, &coupling.c, rho, op.dt)?;
                let y = self.draw(&pdf);
                Ok((RecordSample::y(y).at(t0), 1.0))
            }
            SamplingStrategy::Ostensible | SamplingStrategy::ExactImportance => {
                let record = self.draw_ostensible(&op.ostensible, t0);
                let m = op.evaluate(&record)?;
                let (_, weight) = apply_unnormalized(&m, rho.matrix())?;
                Ok((record, weight))
            }
        }
    }
}

/// One record draw for `sampler.kind` at step start `t0`.
pub fn sample_record(
    sampler: &mut RecordSampler,
    coupling: &Coupling,
    dt: f64,
    rho: &DensityMatrix,
    t0: f64,
) -> Result<(RecordSample, f64)> {
    let op = MeasurementOperator::new(sampler.kind, coupling, dt, t0)?;
    sampler.sample_with(&op, coupling, rho, t0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{propagator, LindbladChannelSpec, PropagatorOrder};
    use crate::linalg::qubit::*;
    use crate::linalg::trace_distance;
    use crate::random::{random_matrix, random_state};
    use crate::validators::fit_power_law;
    use approx::assert_abs_diff_eq;

    const GRID: [f64; 5] = [1e-2, 5e-3, 2.5e-3, 1.25e-3, 6.25e-4];

    #[test]
    fn moment_table_invariants() {
        let t = MomentTable::new(GaussianPdf::new(1.5, 0.3).unwrap());
        assert_eq!(t.get(0), 1.0);
        assert_eq!(t.central(1), 0.0);
        assert_eq!(t.central(3), 0.0);
        assert_abs_diff_eq!(t.central(4), 3.0 * 0.09, epsilon = 1e-15);
        assert_abs_diff_eq!(t.get(2), 2.25 + 0.3, epsilon = 1e-14);
    }

    #[test]
    fn ito_channel_on_maximally_mixed() {
        let dt = 0.03;
        let channel = average_channel_method1(MapKind::Ito, &Coupling::general(sigma_z(), 1.0), dt).unwrap();
        let out = channel.apply(DensityMatrix::maximally_mixed(2).matrix()).unwrap();
        let expected = identity().scale_real(0.5 * (1.0 + dt * dt / 4.0));
        assert!(out.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn w_channel_matches_second_order_lindblad() {
        let mut rng = Stream::new(31, 0);
        let c = random_matrix(&mut rng, 2);
        let coupling = Coupling::general(c.clone(), 1.0);
        let defects: Vec<f64> = GRID
            .iter()
            .map(|&dt| {
                let w = average_channel_method1(MapKind::WMap, &coupling, dt).unwrap();
                let spec = LindbladChannelSpec::new(c.clone(), dt).unwrap();
                w.distance(&propagator(&spec, PropagatorOrder::Second))
            })
            .collect();
        let fit = fit_power_law(&GRID, &defects).unwrap();
        assert!(fit.exponent >= 2.9, "{fit:?}");
    }

    #[test]
    fn hermitian_channel_is_exact() {
        for gamma_dt in [0.01, 0.1, 1.0] {
            let gamma = 1.0;
            let coupling = Coupling::dephasing(gamma);
            let channel = average_channel_method1(MapKind::HermitianExact, &coupling, gamma_dt / gamma).unwrap();
            let spec = LindbladChannelSpec::new(coupling.c.clone(), gamma_dt / gamma).unwrap();
            let exact = propagator(&spec, PropagatorOrder::Exact);
            assert!(channel.matrix().max_abs_diff(exact.matrix()) < 1e-12, "{gamma_dt}");
        }
    }

    #[test]
    fn hermitian_channel_for_general_observable() {
        let mut rng = Stream::new(32, 0);
        let a = random_matrix(&mut rng, 3).hermitian_part();
        let coupling = Coupling::observable(&a, 0.7);
        let dt = 0.4;
        let channel = average_channel_method1(MapKind::HermitianExact, &coupling, dt).unwrap();
        let spec = LindbladChannelSpec::new(coupling.c.clone(), dt).unwrap();
        let exact = propagator(&spec, PropagatorOrder::Exact);
        assert!(channel.matrix().max_abs_diff(exact.matrix()) < 1e-12);
        let residual = completeness_residual(MapKind::HermitianExact, &coupling, dt).unwrap();
        assert!(residual.max_abs() < 1e-12);
    }

    #[test]
    fn ito_residual_is_exact() {
        let mut rng = Stream::new(33, 0);
        for _ in 0..20 {
            let c = random_matrix(&mut rng, 2);
            let dt = 10f64.powf(-4.0 + 3.0 * rng.uniform());
            let r = completeness_residual(MapKind::Ito, &Coupling::general(c.clone(), 1.0), dt).unwrap();
            let n = &c.dagger() * &c;
            let expected = (&n * &n).scale_real(dt * dt / 4.0);
            assert!(r.max_abs_diff(&expected) < 1e-14);
        }
    }

    #[test]
    fn rr_residual_is_quadratic() {
        let mut rng = Stream::new(34, 0);
        let c = random_matrix(&mut rng, 2);
        let cd = c.dagger();
        let n = &cd * &c;
        let lead = &(&n * &n).scale_real(0.25) + &(&(&cd * &cd) * &(&c * &c)).scale_real(0.5);
        // The quadratic term is the whole residual.
        for dt in GRID {
            let r = completeness_residual(MapKind::RouchonRalph, &Coupling::general(c.clone(), 1.0), dt).unwrap();
            let expected = lead.scale_real(dt * dt);
            assert!(r.max_abs_diff(&expected) <= 1e-14, "{dt}");
        }
    }

    #[test]
    fn residual_vanishes_with_step() {
        let c = Coupling::general(sigma_x() + sigma_minus(), 1.0);
        for kind in MapKind::APPROXIMATE {
            assert!(completeness_residual(kind, &c, 1e-9).unwrap().max_abs() < 1e-15);
        }
    }

    #[test]
    fn flu_exact_is_complete() {
        let r = completeness_residual(MapKind::FluExact, &Coupling::decay(1.3), 0.2).unwrap();
        assert!(r.max_abs() < 1e-14);
        let r = completeness_residual(MapKind::FluBayesian, &Coupling::decay(1.3), 0.2).unwrap();
        assert!(r.max_abs() < 1e-14);
    }

    #[test]
    fn moments_agree_with_quadrature() {
        let mut rng = Stream::new(35, 0);
        for trial in 0..20 {
            let dt = 10f64.powf(-3.0 + 2.0 * rng.uniform());
            let gamma = 0.5 + rng.uniform();
            for kind in MapKind::ALL {
                let coupling = match kind {
                    MapKind::HermitianExact => Coupling::dephasing(gamma),
                    k if k.is_fluorescence() => Coupling::decay(gamma),
                    _ => Coupling::general(random_matrix(&mut rng, 2), gamma),
                };
                if kind == MapKind::HermitianExact {
                    continue;
                }
                let analytic = average_channel_method1(kind, &coupling, dt).unwrap();
                let quad = average_channel_quadrature(kind, &coupling, dt, 60).unwrap();
                let diff = analytic.matrix().max_abs_diff(quad.matrix());
                assert!(diff < 1e-12, "{kind} trial {trial}: {diff:e}");
            }
        }
    }

    #[test]
    fn method2_small_step_is_identity() {
        let mut rng = Stream::new(36, 0);
        let rho = random_state(&mut rng, 2);
        let coupling = Coupling::general(random_matrix(&mut rng, 2), 1.0);
        for kind in MapKind::APPROXIMATE {
            let out = average_channel_method2(kind, &coupling, 1e-10, &rho, DEFAULT_NODES).unwrap();
            assert!(trace_distance(&out, &rho).unwrap() < 1e-8, "{kind}");
        }
    }

    #[test]
    fn method2_ito_decay_of_excited_state() {
        // Normalizing the Itô branch for |e⟩⟨e| gives an excited population
        // E[(1 − x/2)² / ((1 − x/2)² + x u²)] with u standard normal.
        let gamma = 1.0;
        let excited_state = DensityMatrix::basis(2, 0);
        let mut defects = Vec::new();
        for &x in &GRID {
            let out = average_channel_method2(MapKind::Ito, &Coupling::decay(gamma), x, &excited_state, DEFAULT_NODES)
                .unwrap();
            let a = (1.0 - x / 2.0).powi(2);
            // Composite Simpson on [−14, 14].
            let n = 20_000;
            let h = 28.0 / n as f64;
            let f = |u: f64| a / (a + x * u * u) * (-u * u / 2.0).exp() / (std::f64::consts::TAU).sqrt();
            let mut s = f(-14.0) + f(14.0);
            for i in 1..n {
                let u = -14.0 + i as f64 * h;
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(u);
            }
            let oracle = s * h / 3.0;
            assert_abs_diff_eq!(out.matrix()[(0, 0)].re, oracle, epsilon = 1e-10);
            assert!(out.matrix()[(0, 1)].norm() < 1e-14);

            // The O(Δt²) term for this state is 2(γΔt)²(|e⟩⟨e| − |g⟩⟨g|),
            // against (γΔt)²/2 for the Lindblad propagator.
            let spec = LindbladChannelSpec::new(Coupling::decay(gamma).c, x).unwrap();
            let lindblad = propagator(&spec, PropagatorOrder::Second).apply(excited_state.matrix()).unwrap();
            let predicted = (&excited() - &ground()).scale_real(1.5 * x * x);
            defects.push((&(out.matrix() - &lindblad) - &predicted).max_abs());
        }
        let fit = fit_power_law(&GRID, &defects).unwrap();
        assert!(fit.exponent >= 2.9, "{fit:?}");
    }

    #[test]
    fn method2_gw_matches_method1() {
        let mut rng = Stream::new(37, 0);
        let coupling = Coupling::general(random_matrix(&mut rng, 2), 1.0);
        let rho = random_state(&mut rng, 2);
        let defects: Vec<f64> = GRID
            .iter()
            .map(|&dt| {
                let m2 = average_channel_method2(MapKind::Gw, &coupling, dt, &rho, DEFAULT_NODES).unwrap();
                let m1 = average_channel_method1(MapKind::Gw, &coupling, dt)
                    .unwrap()
                    .apply(rho.matrix())
                    .unwrap();
                (m2.matrix() - &m1).frobenius_norm()
            })
            .collect();
        let fit = fit_power_law(&GRID, &defects).unwrap();
        assert!(fit.exponent >= 2.9, "{fit:?}");
    }

    #[test]
    fn method2_rejects_few_nodes() {
        let rho = DensityMatrix::maximally_mixed(2);
        assert!(average_channel_method2(MapKind::Ito, &Coupling::decay(1.0), 0.01, &rho, 10).is_err());
    }

    #[test]
    fn channel_trace_defect_equals_residual() {
        let mut rng = Stream::new(38, 0);
        for kind in MapKind::APPROXIMATE {
            let coupling = Coupling::general(random_matrix(&mut rng, 2), 1.0);
            let dt = 0.05;
            let channel = average_channel_method1(kind, &coupling, dt).unwrap();
            let residual = completeness_residual(kind, &coupling, dt).unwrap();
            for _ in 0..10 {
                let rho = random_state(&mut rng, 2);
                let defect = channel.apply(rho.matrix()).unwrap().trace() - C64::new(1.0, 0.0);
                let predicted = rho.expectation(&residual);
                assert!((defect - predicted).norm() < 1e-12, "{kind}");
            }
        }
    }

    #[test]
    fn samplers_are_reproducible() {
        let coupling = Coupling::decay(1.0);
        let rho = DensityMatrix::bloch(1.0, 0.5);
        for strategy in [SamplingStrategy::Ostensible, SamplingStrategy::GuessedGaussian, SamplingStrategy::ExactImportance] {
            let mut a = RecordSampler::new(MapKind::WMap, strategy, 99);
            let mut b = RecordSampler::new(MapKind::WMap, strategy, 99);
            for _ in 0..50 {
                let ra = sample_record(&mut a, &coupling, 0.01, &rho, 0.0).unwrap();
                let rb = sample_record(&mut b, &coupling, 0.01, &rho, 0.0).unwrap();
                assert_eq!(ra, rb);
            }
        }
    }

    #[test]
    fn flu_samplers_draw_required_fields() {
        let rho = DensityMatrix::basis(2, 0);
        let mut s = RecordSampler::new(MapKind::FluNearlyExact, SamplingStrategy::ExactImportance, 1);
        let (r, w) = sample_record(&mut s, &Coupling::decay(1.0), 0.01, &rho, 0.0).unwrap();
        assert!(r.z.is_some() && r.x.is_none() && w > 0.0);
        let mut s = RecordSampler::new(MapKind::FluExact, SamplingStrategy::ExactImportance, 1);
        let (r, _) = sample_record(&mut s, &Coupling::decay(1.0), 0.01, &rho, 0.0).unwrap();
        assert!(r.x.is_some());
    }

    #[test]
    fn importance_weighted_mean_record() {
        // For |e⟩⟨e| under decay the exact mean record is O(Δt), here zero
        // by the σ₋ structure.
        let dt = 0.01;
        let rho = DensityMatrix::basis(2, 0);
        let coupling = Coupling::decay(1.0);
        let op = MeasurementOperator::new(MapKind::Ito, &coupling, dt, 0.0).unwrap();
        let mut s = RecordSampler::new(MapKind::Ito, SamplingStrategy::ExactImportance, 4);
        let n = 200_000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            samples.push(s.sample_with(&op, &coupling, &rho, 0.0).unwrap());
        }
        let wsum: f64 = samples.iter().map(|(_, w)| w).sum();
        let mean: f64 = samples.iter().map(|(r, w)| r.y * w).sum::<f64>() / wsum;
        let var: f64 = samples.iter().map(|(r, w)| w * (r.y - mean).powi(2)).sum::<f64>() / wsum;
        let se = (var / n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean {mean} se {se}");
    }
}
