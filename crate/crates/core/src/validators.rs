//! Order-of-accuracy certification for the averaged dynamics of each map.
//!
//! Each check evaluates a one-step defect on a grid of `γΔt` values and fits
//! `defect = A (γΔt)^p`. A defect appearing at `O(Δt^p)` means the condition
//! holds to order `p − 1`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{averaged_sme_min_eigenvalue, propagator, LindbladChannelSpec, PropagatorOrder};
use crate::error::{Error, Result};
use crate::linalg::{trace_distance, DensityMatrix, Tolerances};
use crate::maps::{build_operator, Coupling, MapKind, RecordSample};
use crate::random::{random_state, Stream};
use crate::sampling::{average_channel_method1, average_channel_method2, completeness_residual, DEFAULT_NODES};

/// `γΔt` values used when none are given.
pub const DEFAULT_GRID: [f64; 5] = [1e-2, 5e-3, 2.5e-3, 1.25e-3, 6.25e-4];
pub const MIN_R_SQUARED: f64 = 0.99;
const PROBE_SEED: u64 = 0x5eed_0f_9a_7e;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerLawFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InconclusiveFit(format!(
            "need at least two paired points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if let Some(bad) = x.iter().chain(y).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InconclusiveFit(format!(
            "log-log fit needs positive finite values, found {bad:e}"
        )));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InconclusiveFit("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(PowerLawFit {
        exponent: slope,
        prefactor: intercept.exp(),
        r_squared,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    B,
    C1,
    C2,
    C3,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::B, Condition::C1, Condition::C2, Condition::C3];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Condition::B => "B",
            Condition::C1 => "C1",
            Condition::C2 => "C2",
            Condition::C3 => "C3",
        };
        f.write_str(s)
    }
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "B" => Ok(Condition::B),
            "C1" => Ok(Condition::C1),
            "C2" => Ok(Condition::C2),
            "C3" => Ok(Condition::C3),
            other => Err(Error::InvalidParameter(format!("unknown condition `{other}`"))),
        }
    }
}

/// Averaging method: linear (ostensible PDF) or nonlinear (guessed PDF).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    I,
    II,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::I => "I",
            Method::II => "II",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Method::I),
            "II" | "2" => Ok(Method::II),
            other => Err(Error::InvalidParameter(format!("unknown method `{other}`"))),
        }
    }
}

/// What a report is about: a map kind, or the first-order averaged SME.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Map(MapKind),
    AveragedSme,
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Map(k) => write!(f, "{k}"),
            Subject::AveragedSme => f.write_str("averaged-sme"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub gamma_dt: f64,
    pub defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub condition: Condition,
    pub kind: Subject,
    pub method: Option<Method>,
    pub grid: Vec<GridPoint>,
    /// `None` when the defect vanishes to rounding at every grid point.
    pub fitted_exponent: Option<f64>,
    pub fitted_prefactor: Option<f64>,
    pub r_squared: Option<f64>,
    pub exact: bool,
    pub conclusive: bool,
}

impl ScalingReport {
    fn build(
        condition: Condition,
        kind: Subject,
        method: Option<Method>,
        grid: Vec<GridPoint>,
        exact_threshold: f64,
    ) -> Result<Self> {
        let exact = grid.iter().all(|p| p.defect.abs() <= exact_threshold);
        let mut report = ScalingReport {
            condition,
            kind,
            method,
            grid,
            fitted_exponent: None,
            fitted_prefactor: None,
            r_squared: None,
            exact,
            conclusive: exact,
        };
        if exact {
            return Ok(report);
        }
        let x: Vec<f64> = report.grid.iter().map(|p| p.gamma_dt).collect();
        let y: Vec<f64> = report.grid.iter().map(|p| p.defect).collect();
        let fit = fit_power_law(&x, &y)?;
        if fit.r_squared < MIN_R_SQUARED {
            return Err(Error::InconclusiveFit(format!(
                "{condition} for {kind}: r^2 = {:.4} below {MIN_R_SQUARED}",
                fit.r_squared
            )));
        }
        report.fitted_exponent = Some(fit.exponent);
        report.fitted_prefactor = Some(fit.prefactor);
        report.r_squared = Some(fit.r_squared);
        report.conclusive = true;
        Ok(report)
    }

    /// Order in `Δt` to which the condition holds; infinite when exact.
    pub fn order(&self) -> f64 {
        match self.fitted_exponent {
            Some(p) if !self.exact => p - 1.0,
            _ => f64::INFINITY,
        }
    }

    pub fn max_defect(&self) -> f64 {
        self.grid.iter().map(|p| p.defect).fold(0.0, f64::max)
    }

    /// One `key=value` pair per line.
    pub fn to_kv_lines(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |v| format!("{v:.16e}"));
        let mut out = String::new();
        out.push_str(&format!("condition={}\n", self.condition));
        out.push_str(&format!("kind={}\n", self.kind));
        out.push_str(&format!(
            "method={}\n",
            self.method.map_or_else(|| "none".to_string(), |m| m.to_string())
        ));
        let grid: Vec<String> = self
            .grid
            .iter()
            .map(|p| format!("{:.16e}:{:.16e}", p.gamma_dt, p.defect))
            .collect();
        out.push_str(&format!("grid={}\n", grid.join(",")));
        out.push_str(&format!("fitted_exponent={}\n", opt(self.fitted_exponent)));
        out.push_str(&format!("fitted_prefactor={}\n", opt(self.fitted_prefactor)));
        out.push_str(&format!("r_squared={}\n", opt(self.r_squared)));
        out.push_str(&format!("exact={}\n", self.exact));
        out.push_str(&format!("conclusive={}\n", self.conclusive));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "scaling grid needs at least 4 points, got {}",
            grid.len()
        )));
    }
    if grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(Error::InvalidParameter("grid values must be positive".into()));
    }
    let max = grid.iter().cloned().fold(f64::MIN, f64::max);
    let min = grid.iter().cloned().fold(f64::MAX, f64::min);
    if max / min < 10.0 * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "scaling grid spans a factor {:.3}, less than a decade",
            max / min
        )));
    }
    Ok(())
}

fn evaluate_grid(
    coupling: &Coupling,
    grid: &[f64],
    defect: impl Fn(f64) -> Result<f64> + Sync,
) -> Result<Vec<GridPoint>> {
    check_grid(grid)?;
    grid.par_iter()
        .map(|&gdt| {
            Ok(GridPoint {
                gamma_dt: gdt,
                defect: defect(gdt / coupling.gamma)?,
            })
        })
        .collect()
}

/// Fixed probe states shared by all reports.
pub fn probe_states(count: usize, dim: usize, stream: u64) -> Vec<DensityMatrix> {
    let mut rng = Stream::new(PROBE_SEED, stream);
    (0..count).map(|_| random_state(&mut rng, dim)).collect()
}

fn exact_step(coupling: &Coupling, dt: f64) -> Result<crate::linalg::Channel> {
    let spec = LindbladChannelSpec::new(coupling.c.clone(), dt)?;
    Ok(propagator(&spec, PropagatorOrder::Exact))
}

/// Condition (B): the averaged map against the exact Lindblad step.
pub fn check_condition_b(
    kind: MapKind,
    method: Method,
    coupling: &Coupling,
    grid: &[f64],
) -> Result<ScalingReport> {
    let probes = probe_states(10, coupling.dim(), 1);
    let points = evaluate_grid(coupling, grid, |dt| {
        let exact = exact_step(coupling, dt)?;
        match method {
            Method::I => Ok(average_channel_method1(kind, coupling, dt)?.distance(&exact)),
            Method::II => {
                let mut worst = 0.0f64;
                for rho in &probes {
                    let approx = average_channel_method2(kind, coupling, dt, rho, DEFAULT_NODES)?;
                    let target = DensityMatrix::new_unchecked(exact.apply(rho.matrix())?);
                    worst = worst.max(trace_distance(&approx, &target)?);
                }
                Ok(worst)
            }
        }
    })?;
    ScalingReport::build(
        Condition::B,
        Subject::Map(kind),
        Some(method),
        points,
        Tolerances::DEFAULT.algebraic,
    )
}

/// Condition (C1): complete positivity via the extended-state output.
pub fn check_condition_c1(subject: Subject, coupling: &Coupling, grid: &[f64]) -> Result<ScalingReport> {
    let points = evaluate_grid(coupling, grid, |dt| {
        let lowest = match subject {
            Subject::AveragedSme => {
                averaged_sme_min_eigenvalue(&LindbladChannelSpec::new(coupling.c.clone(), dt)?)?
            }
            Subject::Map(kind) => average_channel_method1(kind, coupling, dt)?.min_extended_eigenvalue(),
        };
        Ok((-lowest).max(0.0))
    })?;
    let method = match subject {
        Subject::Map(_) => Some(Method::I),
        Subject::AveragedSme => None,
    };
    ScalingReport::build(
        Condition::C1,
        subject,
        method,
        points,
        Tolerances::DEFAULT.structural,
    )
}

/// Condition (C2): convex-linearity of the averaged map.
pub fn check_condition_c2(
    kind: MapKind,
    method: Method,
    coupling: &Coupling,
    grid: &[f64],
) -> Result<ScalingReport> {
    let dim = coupling.dim();
    let mut rng = Stream::new(PROBE_SEED, 2);
    let triples: Vec<(DensityMatrix, DensityMatrix, f64)> = (0..20)
        .map(|_| {
            let a = random_state(&mut rng, dim);
            let b = random_state(&mut rng, dim);
            (a, b, rng.uniform())
        })
        .collect();
    let points = evaluate_grid(coupling, grid, |dt| {
        let mut worst = 0.0f64;
        let channel = match method {
            Method::I => Some(average_channel_method1(kind, coupling, dt)?),
            Method::II => None,
        };
        let phi = |rho: &DensityMatrix| -> Result<crate::linalg::ComplexMatrix> {
            match &channel {
                Some(ch) => ch.apply(rho.matrix()),
                None => Ok(average_channel_method2(kind, coupling, dt, rho, DEFAULT_NODES)?.into_matrix()),
            }
        };
        for (a, b, lambda) in &triples {
            let mixed = a.mix(b, *lambda);
            let lhs = phi(&mixed)?;
            let rhs = &phi(a)?.scale_real(*lambda) + &phi(b)?.scale_real(1.0 - lambda);
            let diff = (&lhs - &rhs).hermitian_part();
            worst = worst.max(0.5 * diff.trace_norm_hermitian()?);
        }
        Ok(worst)
    })?;
    ScalingReport::build(
        Condition::C2,
        Subject::Map(kind),
        Some(method),
        points,
        Tolerances::DEFAULT.algebraic,
    )
}

/// Condition (C3): the completeness relation.
pub fn check_condition_c3(kind: MapKind, coupling: &Coupling, grid: &[f64]) -> Result<ScalingReport> {
    let points = evaluate_grid(coupling, grid, |dt| {
        Ok(completeness_residual(kind, coupling, dt)?.spectral_norm())
    })?;
    ScalingReport::build(
        Condition::C3,
        Subject::Map(kind),
        None,
        points,
        Tolerances::DEFAULT.algebraic,
    )
}

/// Distance between the Bayesian fluorescence operator and the
/// `gw` operator for `c = √γσ₋`, maximized over records at
/// fixed `Y√Δt`.
pub fn check_flu_bayesian_equivalence(gamma: f64, grid: &[f64]) -> Result<ScalingReport> {
    let coupling = Coupling::decay(gamma);
    let points = evaluate_grid(&coupling, grid, |dt| {
        let mut worst = 0.0f64;
        for u in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let record = RecordSample::y(u / dt.sqrt());
            let bay = build_operator(MapKind::FluBayesian, &coupling, dt, &record)?;
            let gw = build_operator(MapKind::Gw, &coupling, dt, &record)?;
            worst = worst.max((&bay - &gw).spectral_norm());
        }
        Ok(worst)
    })?;
    ScalingReport::build(
        Condition::B,
        Subject::Map(MapKind::FluBayesian),
        None,
        points,
        Tolerances::DEFAULT.algebraic,
    )
}

/// One entry of the condition matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CheckSpec {
    pub condition: Condition,
    pub kind: MapKind,
    pub method: Method,
}

impl CheckSpec {
    pub fn run(&self, coupling: &Coupling, grid: &[f64]) -> Result<ScalingReport> {
        match self.condition {
            Condition::B => check_condition_b(self.kind, self.method, coupling, grid),
            Condition::C1 => check_condition_c1(Subject::Map(self.kind), coupling, grid),
            Condition::C2 => check_condition_c2(self.kind, self.method, coupling, grid),
            Condition::C3 => check_condition_c3(self.kind, coupling, grid),
        }
    }
}

/// Runs every check concurrently; results come back in input order.
pub fn run_checks(
    checks: &[CheckSpec],
    coupling: &Coupling,
    grid: &[f64],
) -> Vec<Result<ScalingReport>> {
    checks.par_iter().map(|c| c.run(coupling, grid)).collect()
}

/// The full (kind × condition × method) matrix; C1 and C3 are only run for
/// Method I, since they concern the Kraus family itself.
pub fn condition_matrix(kinds: &[MapKind], conditions: &[Condition]) -> Vec<CheckSpec> {
    let mut out = Vec::new();
    for &kind in kinds {
        for &condition in conditions {
            let methods: &[Method] = match condition {
                Condition::B | Condition::C2 => &[Method::I, Method::II],
                Condition::C1 | Condition::C3 => &[Method::I],
            };
            for &method in methods {
                out.push(CheckSpec { condition, kind, method });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qubit::sigma_minus;
    use crate::random::random_matrix;
    use approx::assert_abs_diff_eq;

    #[test]
    fn power_law_recovers_synthetic_data() {
        let x = [1.0, 0.5, 0.25, 0.125];
        let y: Vec<f64> = x.iter().map(|v: &f64| 0.3 * v.powf(2.5)).collect();
        let fit = fit_power_law(&x, &y).unwrap();
        assert_abs_diff_eq!(fit.exponent, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.prefactor, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert!(fit_power_law(&x, &[1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn grid_validation() {
        let c = Coupling::decay(1.0);
        assert!(check_condition_c3(MapKind::Ito, &c, &[1e-2, 5e-3, 2.5e-3]).is_err());
        assert!(check_condition_c3(MapKind::Ito, &c, &[1e-2, 5e-3, 2.5e-3, 1.25e-3]).is_err());
        assert!(check_condition_c3(MapKind::Ito, &c, &DEFAULT_GRID).is_ok());
    }

    #[test]
    fn w_method1_condition_b() {
        let r = check_condition_b(MapKind::WMap, Method::I, &Coupling::decay(1.0), &DEFAULT_GRID).unwrap();
        assert!((r.fitted_exponent.unwrap() - 3.0).abs() < 0.15, "{r:?}");
    }

    #[test]
    fn ito_method1_condition_b() {
        let r = check_condition_b(MapKind::Ito, Method::I, &Coupling::decay(1.0), &DEFAULT_GRID).unwrap();
        assert!((r.fitted_exponent.unwrap() - 2.0).abs() < 0.1, "{r:?}");
        assert_abs_diff_eq!(r.order(), 1.0, epsilon = 0.1);
    }

    #[test]
    fn hermitian_condition_b_is_exact() {
        let r = check_condition_b(MapKind::HermitianExact, Method::I, &Coupling::dephasing(1.0), &DEFAULT_GRID)
            .unwrap();
        assert!(r.exact && r.fitted_exponent.is_none());
        assert!(r.max_defect() <= 1e-12);
        assert_eq!(r.order(), f64::INFINITY);
    }

    #[test]
    fn c3_examples() {
        let mut rng = Stream::new(41, 0);
        let c = random_matrix(&mut rng, 2);
        let coupling = Coupling::general(c.clone(), 1.0);
        let r = check_condition_c3(MapKind::Ito, &coupling, &DEFAULT_GRID).unwrap();
        assert!((r.fitted_exponent.unwrap() - 2.0).abs() < 0.05);
        let n = &c.dagger() * &c;
        let expected = 0.25 * (&n * &n).spectral_norm();
        assert!((r.fitted_prefactor.unwrap() / expected - 1.0).abs() < 0.02);
        for kind in [MapKind::Gw, MapKind::WMap] {
            let r = check_condition_c3(kind, &coupling, &DEFAULT_GRID).unwrap();
            assert!(r.fitted_exponent.unwrap() >= 2.9, "{kind}: {r:?}");
        }
    }

    #[test]
    fn c1_examples() {
        let decay_half = Coupling::general(sigma_minus().scale_real(0.5f64.sqrt()), 1.0);
        let r = check_condition_c1(Subject::AveragedSme, &decay_half, &DEFAULT_GRID).unwrap();
        assert!((r.fitted_exponent.unwrap() - 2.0).abs() < 0.1);
        for kind in [MapKind::WMap, MapKind::Ito] {
            let r = check_condition_c1(Subject::Map(kind), &Coupling::decay(1.0), &DEFAULT_GRID).unwrap();
            assert!(r.exact && r.max_defect() <= 1e-10, "{kind}");
        }
    }

    #[test]
    fn c2_method1_is_structural() {
        let r = check_condition_c2(MapKind::Ito, Method::I, &Coupling::decay(1.0), &DEFAULT_GRID).unwrap();
        assert!(r.exact && r.max_defect() <= 1e-12);
    }

    #[test]
    fn flu_bayesian_examples() {
        let x: f64 = 1e-3;
        let coupling = Coupling::decay(1.0);
        let record = RecordSample::y(0.0);
        let bay = build_operator(MapKind::FluBayesian, &coupling, x, &record).unwrap();
        let gw = build_operator(MapKind::Gw, &coupling, x, &record).unwrap();
        let defect = (&bay - &gw).spectral_norm();
        let expected = ((1.0 - x).sqrt() - (1.0 - x / 2.0 - x * x / 8.0)).abs();
        assert_abs_diff_eq!(defect, expected, epsilon = 1e-15);
        assert!((defect / (x.powi(3) / 16.0) - 1.0).abs() < 0.01);

        let r = check_flu_bayesian_equivalence(1.0, &DEFAULT_GRID).unwrap();
        assert!((r.fitted_exponent.unwrap() - 3.0).abs() < 0.15);
    }

    #[test]
    fn report_serialization() {
        let r = check_condition_c3(MapKind::WMap, &Coupling::decay(1.0), &DEFAULT_GRID).unwrap();
        let kv = r.to_kv_lines();
        assert!(kv.starts_with("condition=C3\nkind=w\nmethod=none\n"));
        assert_eq!(kv.lines().count(), 9);
        let back: ScalingReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn matrix_runs_in_input_order() {
        let checks = condition_matrix(&[MapKind::Ito, MapKind::WMap], &[Condition::C3, Condition::C1]);
        assert_eq!(checks.len(), 4);
        let results = run_checks(&checks, &Coupling::decay(1.0), &DEFAULT_GRID);
        for (spec, r) in checks.iter().zip(&results) {
            let r = r.as_ref().unwrap();
            assert_eq!(r.condition, spec.condition);
            assert_eq!(r.kind, Subject::Map(spec.kind));
        }
    }
}
