//! Single-step accuracy of conditioned states against the exact maps, and a
//! multi-step trajectory harness.
//!
//! Rates are scaled to `γ = 1` in the single-step benchmark, so `γΔt` and
//! `Δt` coincide there.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{trace_distance, ComplexMatrix, DensityMatrix, C64};
use crate::maps::{apply_normalized, apply_unnormalized, Coupling, MapKind, MeasurementOperator, OperatorFamily, RecordSample};
use crate::random::{haar_bloch_angles, Stream};
use crate::sampling::{RecordSampler, SamplingStrategy};
use crate::validators::Method;

/// Largest `γΔt` accepted by [`average_trace_distance`].
pub const MAX_GAMMA_DT: f64 = 0.05;
pub const DEFAULT_GAMMA_DT: [f64; 3] = [0.02, 0.01, 0.005];
pub const DEFAULT_STATES: usize = 20_000;
pub const DEFAULT_RECORD_NODES: usize = 32;
const BATCHES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Example {
    /// `c = √(γ/2) σ_z`
    ZMeasurement,
    /// `c = √γ σ₋`
    Fluorescence,
}

impl Example {
    pub fn coupling(self, gamma: f64) -> Coupling {
        match self {
            Example::ZMeasurement => Coupling::dephasing(gamma),
            Example::Fluorescence => Coupling::decay(gamma),
        }
    }

    /// The map treated as exact for this example.
    pub fn exact_kind(self) -> MapKind {
        match self {
            Example::ZMeasurement => MapKind::HermitianExact,
            Example::Fluorescence => MapKind::FluNearlyExact,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Example::ZMeasurement => "z",
            Example::Fluorescence => "flu",
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Example {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "z" | "z-measurement" | "zmeasurement" => Ok(Example::ZMeasurement),
            "flu" | "fluorescence" => Ok(Example::Fluorescence),
            other => Err(Error::InvalidParameter(format!("unknown example `{other}`"))),
        }
    }
}

/// Leading coefficients `C` of `D_A ≈ C (γΔt)^{3/2}`.
pub const REFERENCE_PREFACTORS: [(MapKind, Example, f64); 8] = [
    (MapKind::Ito, Example::ZMeasurement, 0.2585),
    (MapKind::RouchonRalph, Example::ZMeasurement, 0.1551),
    (MapKind::Gw, Example::ZMeasurement, 0.2585),
    (MapKind::WMap, Example::ZMeasurement, 0.0699),
    (MapKind::Ito, Example::Fluorescence, 0.1152),
    (MapKind::RouchonRalph, Example::Fluorescence, 0.1152),
    (MapKind::Gw, Example::Fluorescence, 0.1152),
    (MapKind::WMap, Example::Fluorescence, 0.0576),
];

pub fn reference_prefactor(kind: MapKind, example: Example) -> Option<f64> {
    REFERENCE_PREFACTORS
        .iter()
        .find(|(k, e, _)| *k == kind && *e == example)
        .map(|t| t.2)
}

/// Reconstructs the exponentially weighted record `X` from `(Y, Z)` to first
/// order in the weight.
pub fn reconstruct_x(gamma: f64, dt: f64, y: f64, z: f64, t0: f64) -> f64 {
    (1.0 - gamma / 2.0 * (t0 + dt / 2.0)) * y * dt - gamma / 2.0 * z
}

/// Conditioned state under the exact map of `example`; the fluorescence
/// map is evaluated with its step starting at time zero.
pub fn exact_state_update(
    example: Example,
    gamma: f64,
    dt: f64,
    record: &RecordSample,
    rho: &DensityMatrix,
) -> Result<DensityMatrix> {
    let op = MeasurementOperator::new(example.exact_kind(), &example.coupling(gamma), dt, 0.0)?;
    let m = op.evaluate(&record.at(0.0))?;
    Ok(apply_normalized(&m, rho)?.0)
}

/// Conditioned state under an approximate map fed the record `y`.
pub fn approx_state_update(
    kind: MapKind,
    coupling: &Coupling,
    dt: f64,
    y: f64,
    rho: &DensityMatrix,
) -> Result<DensityMatrix> {
    let op = MeasurementOperator::new(kind, coupling, dt, 0.0)?;
    Ok(apply_normalized(&op.evaluate(&RecordSample::y(y))?, rho)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub kind: MapKind,
    pub example: Example,
    pub gamma_dt: f64,
    pub value: f64,
    pub std_error: f64,
    pub n_states: usize,
    pub n_record_nodes: usize,
    pub seed: u64,
}

/// Haar- and record-averaged single-step trace distance between `kind` and
/// the exact map of `example`.
///
/// Each Haar state draws `n_record_nodes` records from the exact record
/// density: directly from the two-Gaussian mixture for the z measurement, and
/// from the ostensible `(Y, Z)` density with weight `Tr[M ρ M†]` for
/// fluorescence. Both maps see the same `Y`. Every state index owns its own
/// random stream, so the result does not depend on the thread count.
pub fn average_trace_distance(
    kind: MapKind,
    example: Example,
    gamma_dt: f64,
    n_states: usize,
    n_record_nodes: usize,
    seed: u64,
) -> Result<DistanceEstimate> {
    if !(gamma_dt > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma*dt = {gamma_dt} must be > 0")));
    }
    if gamma_dt > MAX_GAMMA_DT {
        return Err(Error::AsymptoticRegimeViolated {
            gamma_dt,
            max: MAX_GAMMA_DT,
        });
    }
    if n_states < BATCHES || n_record_nodes == 0 {
        return Err(Error::InvalidParameter(format!(
            "need at least {BATCHES} states and one record per state"
        )));
    }
    let gamma = 1.0;
    let dt = gamma_dt;
    let coupling = example.coupling(gamma);
    let exact = MeasurementOperator::new(example.exact_kind(), &coupling, dt, 0.0)?;
    let approx = MeasurementOperator::new(kind, &coupling, dt, 0.0)?;

    let per_state: Vec<f64> = (0..n_states)
        .into_par_iter()
        .map(|index| {
            let mut rng = Stream::new(seed, index as u64);
            let (theta, phi) = haar_bloch_angles(&mut rng);
            let rho = DensityMatrix::bloch(theta, phi);
            let mut total = 0.0;
            for _ in 0..n_record_nodes {
                let (record, weight) = exact_record(&exact, &rho, gamma, dt, &mut rng)?;
                let (ex_out, _) = apply_normalized(&exact.evaluate(&record)?, &rho)?;
                let (ap_out, _) = apply_normalized(&approx.evaluate(&record)?, &rho)?;
                total += weight * trace_distance(&ex_out, &ap_out)?;
            }
            Ok(total / n_record_nodes as f64)
        })
        .collect::<Result<_>>()?;

    let (value, std_error) = batch_mean(&per_state);
    Ok(DistanceEstimate {
        kind,
        example,
        gamma_dt,
        value,
        std_error,
        n_states,
        n_record_nodes,
        seed,
    })
}

fn exact_record(
    exact: &MeasurementOperator,
    rho: &DensityMatrix,
    gamma: f64,
    dt: f64,
    rng: &mut Stream,
) -> Result<(RecordSample, f64)> {
    match &exact.family {
        OperatorFamily::Hermitian(h) => {
            let pops = h.populations(rho);
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut j = pops.len() - 1;
            for (k, p) in pops.iter().enumerate() {
                acc += p;
                if u < acc {
                    j = k;
                    break;
                }
            }
            let y = h.means[j] + rng.normal() / dt.sqrt();
            Ok((RecordSample::y(y), 1.0))
        }
        OperatorFamily::Polynomial(_) => {
            let y = rng.normal() / dt.sqrt();
            let z = rng.normal() * (dt.powi(3) / 12.0).sqrt();
            let x = reconstruct_x(gamma, dt, y, z, 0.0);
            let record = RecordSample {
                y,
                z: Some(z),
                x: Some(x),
                t0: 0.0,
            };
            let (_, weight) = apply_unnormalized(&exact.evaluate(&record)?, rho.matrix())?;
            Ok((record, weight))
        }
    }
}

/// Mean and its standard error from contiguous equal batches.
fn batch_mean(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let batch_len = n / BATCHES;
    let batch_means: Vec<f64> = (0..BATCHES)
        .map(|b| {
            let start = b * batch_len;
            let end = if b + 1 == BATCHES { n } else { start + batch_len };
            values[start..end].iter().sum::<f64>() / (end - start) as f64
        })
        .collect();
    let bm = batch_means.iter().sum::<f64>() / BATCHES as f64;
    let var = batch_means.iter().map(|v| (v - bm).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    (mean, (var / BATCHES as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefactorFit {
    pub kind: MapKind,
    pub example: Example,
    pub estimates: Vec<DistanceEstimate>,
    /// `C` in `D_A = C (γΔt)^{3/2} (1 + b γΔt)`.
    pub prefactor: f64,
    pub prefactor_std_error: f64,
    pub correction: f64,
    /// Largest relative deviation of the scaled estimates from the model.
    pub extrapolation_residual: f64,
}

/// Weighted least squares of `value / (γΔt)^{3/2}` against `C + C b γΔt`.
pub fn fit_prefactor(estimates: &[DistanceEstimate]) -> Result<PrefactorFit> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::InconclusiveFit("no estimates".into()))?;
    if estimates
        .iter()
        .any(|e| e.kind != first.kind || e.example != first.example)
    {
        return Err(Error::InconclusiveFit("estimates mix kinds or examples".into()));
    }
    let mut xs: Vec<f64> = estimates.iter().map(|e| e.gamma_dt).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 || xs[xs.len() - 1] / xs[0] < 4.0 * (1.0 - 1e-12) {
        return Err(Error::InconclusiveFit(
            "need at least three step sizes spanning a factor of four".into(),
        ));
    }

    let scaled: Vec<(f64, f64, f64)> = estimates
        .iter()
        .map(|e| {
            let s = e.gamma_dt.powf(1.5);
            (e.gamma_dt, e.value / s, e.std_error / s)
        })
        .collect();
    let weighted = scaled.iter().all(|p| p.2 > 0.0);
    let weight = |sigma: f64| if weighted { 1.0 / (sigma * sigma) } else { 1.0 };

    // Normal equations for y = α + β x.
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, sigma) in &scaled {
        let w = weight(sigma);
        s0 += w;
        s1 += w * x;
        s2 += w * x * x;
        t0 += w * y;
        t1 += w * x * y;
    }
    let det = s0 * s2 - s1 * s1;
    if !(det.abs() > 0.0) {
        return Err(Error::InconclusiveFit("singular prefactor fit".into()));
    }
    let alpha = (s2 * t0 - s1 * t1) / det;
    let beta = (s0 * t1 - s1 * t0) / det;
    let alpha_var = if weighted {
        s2 / det
    } else {
        // Unweighted: scale by the residual variance when it is defined.
        let dof = scaled.len().saturating_sub(2).max(1) as f64;
        let rss: f64 = scaled.iter().map(|&(x, y, _)| (y - alpha - beta * x).powi(2)).sum();
        rss / dof * s2 / det
    };
    if !(alpha > 0.0) {
        return Err(Error::InconclusiveFit(format!("non-positive prefactor {alpha:e}")));
    }
    let residual = scaled
        .iter()
        .map(|&(x, y, _)| ((y - alpha - beta * x) / (alpha + beta * x)).abs())
        .fold(0.0, f64::max);
    Ok(PrefactorFit {
        kind: first.kind,
        example: first.example,
        estimates: estimates.to_vec(),
        prefactor: alpha,
        prefactor_std_error: alpha_var.sqrt(),
        correction: beta / alpha,
        extrapolation_residual: residual,
    })
}

/// Estimates over a `γΔt` grid followed by the prefactor fit.
pub fn prefactor_study(
    kind: MapKind,
    example: Example,
    gamma_dts: &[f64],
    n_states: usize,
    n_record_nodes: usize,
    seed: u64,
) -> Result<PrefactorFit> {
    let estimates = gamma_dts
        .iter()
        .map(|&g| average_trace_distance(kind, example, g, n_states, n_record_nodes, seed))
        .collect::<Result<Vec<_>>>()?;
    fit_prefactor(&estimates)
}

/// CSV with columns `kind,example,gamma_dt,value,std_error`.
pub fn write_estimates_csv<W: Write>(estimates: &[DistanceEstimate], writer: W) -> Result<()> {
    let io = |e: csv::Error| Error::InvalidParameter(format!("csv output failed: {e}"));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kind", "example", "gamma_dt", "value", "std_error"])
        .map_err(io)?;
    for e in estimates {
        w.write_record([
            e.kind.to_string(),
            e.example.to_string(),
            format!("{:.16e}", e.gamma_dt),
            format!("{:.16e}", e.value),
            format!("{:.16e}", e.std_error),
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidParameter(format!("csv output failed: {e}")))
}

/// One emitted step of a trajectory. The state is always normalized;
/// `weight` is the cumulative product of branch norms (unit for Method II).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub time: f64,
    pub record: Option<RecordSample>,
    pub state: DensityMatrix,
    pub weight: f64,
}

fn trajectory_strategy(kind: MapKind, method: Method) -> Result<SamplingStrategy> {
    match method {
        Method::I if kind.is_fluorescence() => Ok(SamplingStrategy::ExactImportance),
        Method::I => Ok(SamplingStrategy::Ostensible),
        Method::II if kind.is_approximate() => Ok(SamplingStrategy::GuessedGaussian),
        Method::II => Err(Error::IncompatibleKind {
            kind,
            reason: "Method II (no guessed record statistics)".into(),
        }),
    }
}

struct Stepper {
    op: MeasurementOperator,
    coupling: Coupling,
    sampler: RecordSampler,
}

impl Stepper {
    fn new(kind: MapKind, method: Method, coupling: &Coupling, dt: f64, seed: u64, index: u64) -> Result<Self> {
        let strategy = trajectory_strategy(kind, method)?;
        Ok(Self {
            // Operators are step-local: each step's time origin is its start.
            op: MeasurementOperator::new(kind, coupling, dt, 0.0)?,
            coupling: coupling.clone(),
            sampler: RecordSampler::for_index(kind, strategy, seed, index),
        })
    }

    fn step(&mut self, rho: &DensityMatrix, t: f64) -> Result<(RecordSample, DensityMatrix, f64)> {
        let (record, _) = self.sampler.sample_with(&self.op, &self.coupling, rho, t)?;
        let m = self.op.evaluate(&record.at(0.0))?;
        let (out, norm) = apply_normalized(&m, rho)?;
        let factor = match self.sampler.strategy {
            SamplingStrategy::GuessedGaussian => 1.0,
            _ => norm,
        };
        Ok((record, out, factor))
    }
}

/// A single trajectory of `n_steps` steps, starting with the initial state.
pub fn generate_trajectory(
    kind: MapKind,
    method: Method,
    coupling: &Coupling,
    dt: f64,
    n_steps: usize,
    rho0: &DensityMatrix,
    seed: u64,
) -> Result<Vec<TrajectoryPoint>> {
    let mut stepper = Stepper::new(kind, method, coupling, dt, seed, 0)?;
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut rho = rho0.clone();
    let mut weight = 1.0;
    out.push(TrajectoryPoint {
        step: 0,
        time: 0.0,
        record: None,
        state: rho.clone(),
        weight,
    });
    for step in 1..=n_steps {
        let t = (step - 1) as f64 * dt;
        let (record, next, factor) = stepper.step(&rho, t)?;
        rho = next;
        weight *= factor;
        out.push(TrajectoryPoint {
            step,
            time: step as f64 * dt,
            record: Some(record),
            state: rho.clone(),
            weight,
        });
    }
    Ok(out)
}

/// Ensemble mean at one step with elementwise standard errors (real and
/// imaginary parts carried separately in the complex entries).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStep {
    pub step: usize,
    pub time: f64,
    pub mean: ComplexMatrix,
    pub std_error: ComplexMatrix,
}

impl EnsembleStep {
    /// Bound on the standard error of a trace distance computed from `mean`:
    /// `½ √d ‖SE‖_F`.
    pub fn trace_distance_std_error(&self) -> f64 {
        0.5 * (self.mean.dim() as f64).sqrt() * self.std_error.frobenius_norm()
    }
}

#[derive(Clone, Debug, Default)]
struct StepSums {
    n: f64,
    w: f64,
    w2: f64,
    wr: Vec<f64>,
    w2r: Vec<f64>,
    w2r2: Vec<f64>,
}

impl StepSums {
    fn new(len: usize) -> Self {
        Self {
            wr: vec![0.0; len],
            w2r: vec![0.0; len],
            w2r2: vec![0.0; len],
            ..Default::default()
        }
    }

    fn add(&mut self, w: f64, parts: &[f64]) {
        self.n += 1.0;
        self.w += w;
        self.w2 += w * w;
        for (i, &r) in parts.iter().enumerate() {
            self.wr[i] += w * r;
            self.w2r[i] += w * w * r;
            self.w2r2[i] += w * w * r * r;
        }
    }

    fn merge(&mut self, other: &StepSums) {
        self.n += other.n;
        self.w += other.w;
        self.w2 += other.w2;
        for i in 0..self.wr.len() {
            self.wr[i] += other.wr[i];
            self.w2r[i] += other.w2r[i];
            self.w2r2[i] += other.w2r2[i];
        }
    }

    /// Linear (unnormalized) mean `E[wρ]` or self-normalized `E[wρ]/E[w]`,
    /// each with its standard error.
    fn estimate(&self, self_normalized: bool) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut mean = Vec::with_capacity(self.wr.len());
        let mut se = Vec::with_capacity(self.wr.len());
        for i in 0..self.wr.len() {
            let (m, var) = if self_normalized {
                let r = self.wr[i] / self.w;
                let wbar = self.w / n;
                // Delta method: Var(w(ρ − R)) / (n w̄²).
                let v = (self.w2r2[i] - 2.0 * r * self.w2r[i] + r * r * self.w2) / n;
                (r, v / (wbar * wbar))
            } else {
                let m = self.wr[i] / n;
                (m, self.w2r2[i] / n - m * m)
            };
            mean.push(m);
            se.push((var.max(0.0) * n / (n - 1.0).max(1.0) / n).sqrt());
        }
        (mean, se)
    }
}

fn split(m: &ComplexMatrix) -> Vec<f64> {
    m.as_slice().iter().flat_map(|z| [z.re, z.im]).collect()
}

fn join(dim: usize, parts: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_row_major(
        (0..dim * dim)
            .map(|k| C64::new(parts[2 * k], parts[2 * k + 1]))
            .collect(),
    )
}

const CHUNK: usize = 1024;

/// Mean of `n_traj` trajectories at every step. Method I averages the
/// unnormalized states (cumulative weight times state); fluorescence kinds,
/// whose records come from importance sampling, use the self-normalized
/// mean; Method II averages the normalized states.
pub fn ensemble_average(
    kind: MapKind,
    method: Method,
    coupling: &Coupling,
    dt: f64,
    n_steps: usize,
    rho0: &DensityMatrix,
    n_traj: usize,
    seed: u64,
) -> Result<Vec<EnsembleStep>> {
    if n_traj < 2 {
        return Err(Error::InvalidParameter("need at least two trajectories".into()));
    }
    let strategy = trajectory_strategy(kind, method)?;
    let dim = rho0.dim();
    let len = 2 * dim * dim;
    let n_chunks = n_traj.div_ceil(CHUNK);

    let chunks: Vec<Vec<StepSums>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut sums = vec![StepSums::new(len); n_steps + 1];
            let start = chunk * CHUNK;
            let end = (start + CHUNK).min(n_traj);
            for index in start..end {
                let mut stepper = Stepper::new(kind, method, coupling, dt, seed, index as u64)?;
                let mut rho = rho0.clone();
                let mut weight = 1.0;
                sums[0].add(weight, &split(rho.matrix()));
                for step in 1..=n_steps {
                    let (_, next, factor) = stepper.step(&rho, (step - 1) as f64 * dt)?;
                    rho = next;
                    weight *= factor;
                    sums[step].add(weight, &split(rho.matrix()));
                }
            }
            Ok(sums)
        })
        .collect::<Result<_>>()?;

    let mut total = vec![StepSums::new(len); n_steps + 1];
    for chunk in &chunks {
        for (t, c) in total.iter_mut().zip(chunk) {
            t.merge(c);
        }
    }
    let self_normalized = strategy == SamplingStrategy::ExactImportance;
    Ok(total
        .iter()
        .enumerate()
        .map(|(step, sums)| {
            let (mean, se) = sums.estimate(self_normalized);
            EnsembleStep {
                step,
                time: step as f64 * dt,
                mean: join(dim, &mean),
                std_error: join(dim, &se),
            }
        })
        .collect())
}
