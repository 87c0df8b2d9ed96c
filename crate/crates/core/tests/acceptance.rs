use std::process::ExitCode;
use std::time::{Duration, Instant};

use unravel_core::benchmark::{ensemble_average, prefactor_study, reference_prefactor, Example, PrefactorFit, REFERENCE_PREFACTORS};
use unravel_core::channels::{averaged_sme_min_eigenvalue, lindblad_step, propagator, LindbladChannelSpec, PropagatorOrder};
use unravel_core::linalg::qubit::{excited, sigma_minus};
use unravel_core::linalg::DensityMatrix;
use unravel_core::maps::{ostensible_pdf, MapKind};
use unravel_core::random::{random_matrix, Stream};
use unravel_core::sampling::{average_channel_method1, completeness_residual, RecordSampler, SamplingStrategy};
use unravel_core::validators::{
    check_condition_b, check_condition_c1, check_condition_c2, check_condition_c3, check_flu_bayesian_equivalence,
    Method, ScalingReport, Subject, DEFAULT_GRID,
};
use unravel_core::{Coupling, Result};

const SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(index: usize, name: &str, budget: Duration, check: impl FnOnce() -> Result<Outcome>) -> bool {
    let start = Instant::now();
    let outcome = check().unwrap_or_else(|e| Outcome {
        pass: false,
        detail: format!("error: {e}"),
    });
    let elapsed = start.elapsed();
    let in_time = elapsed < budget;
    let pass = outcome.pass && in_time;
    println!(
        "[{index}] {:<4} {name}: {} ({:.2?} of {:.0?}{})",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed,
        budget,
        if in_time { "" } else { ", over budget" }
    );
    pass
}

/// Random non-normal operator with unit rate, so that the grid is in `γΔt`.
fn random_coupling(seed: u64) -> Coupling {
    let mut rng = Stream::new(seed, 0);
    let c = random_matrix(&mut rng, 2);
    let norm = c.spectral_norm();
    Coupling::general(c.scale_real(1.0 / norm), 1.0)
}

fn exponent_in(report: &ScalingReport, lo: f64, hi: f64) -> (bool, String) {
    let p = report.fitted_exponent;
    let ok = !report.exact && p.is_some_and(|p| p >= lo && p <= hi);
    (ok, p.map_or_else(|| "exact".into(), |p| format!("{p:.3}")))
}

fn completeness() -> Result<Outcome> {
    let mut rng = Stream::new(SEED, 1);
    let mut worst_ito = 0.0f64;
    for _ in 0..20 {
        let c = random_matrix(&mut rng, 2);
        let dt = 10f64.powf(-4.0 + 3.0 * rng.uniform());
        let n = &c.dagger() * &c;
        let expected = (&n * &n).scale_real(dt * dt / 4.0);
        let r = completeness_residual(MapKind::Ito, &Coupling::general(c, 1.0), dt)?;
        worst_ito = worst_ito.max(r.max_abs_diff(&expected));
    }

    // The remainder after the quadratic term either vanishes to roundoff or
    // must scale at least as Δt^2.9.
    let c = random_matrix(&mut rng, 2);
    let cd = c.dagger();
    let n = &cd * &c;
    let lead = &(&n * &n).scale_real(0.25) + &(&(&cd * &cd) * &(&c * &c)).scale_real(0.5);
    let remainders = DEFAULT_GRID
        .iter()
        .map(|&dt| {
            let r = completeness_residual(MapKind::RouchonRalph, &Coupling::general(c.clone(), 1.0), dt)?;
            Ok((&r - &lead.scale_real(dt * dt)).max_abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    let floor = remainders.iter().cloned().fold(0.0, f64::max);
    let (rr_ok, rr_detail) = if floor <= 1e-14 {
        (true, format!("remainder at roundoff ({floor:.1e})"))
    } else {
        let fit = unravel_core::validators::fit_power_law(&DEFAULT_GRID, &remainders)?;
        (fit.exponent >= 2.9, format!("remainder exponent {:.3}", fit.exponent))
    };
    Ok(Outcome {
        pass: worst_ito <= 1e-12 && rr_ok,
        detail: format!("Ito max deviation {worst_ito:.1e} (tol 1e-12); RR {rr_detail}"),
    })
}

fn condition_b() -> Result<Outcome> {
    let couplings = [("decay", Coupling::decay(1.0)), ("random", random_coupling(SEED))];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, coupling) in &couplings {
        for method in [Method::I, Method::II] {
            for kind in MapKind::APPROXIMATE {
                let report = check_condition_b(kind, method, coupling, &DEFAULT_GRID)?;
                let (ok, p) = if kind == MapKind::WMap {
                    let ok = report.exact || report.fitted_exponent.is_some_and(|p| p >= 2.9);
                    (ok, report.fitted_exponent.map_or_else(|| "exact".into(), |p| format!("{p:.3}")))
                } else {
                    exponent_in(&report, 1.9, 2.1)
                };
                pass &= ok;
                parts.push(format!("{label}/{method}/{kind}={p}"));
            }
        }
    }
    Ok(Outcome {
        pass,
        detail: parts.join(" "),
    })
}

fn condition_c() -> Result<Outcome> {
    let coupling = Coupling::decay(1.0);
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in MapKind::APPROXIMATE {
        let c1 = check_condition_c1(Subject::Map(kind), &coupling, &DEFAULT_GRID)?;
        let ok = c1.max_defect() <= 1e-10;
        pass &= ok;
        parts.push(format!("C1/{kind}={:.1e}", c1.max_defect()));
    }
    let expectations = |kind: MapKind, tight: f64| match kind {
        MapKind::Ito | MapKind::RouchonRalph => (2.0 - tight, 2.0 + tight),
        _ => (2.9, f64::INFINITY),
    };
    for kind in MapKind::APPROXIMATE {
        let (lo, hi) = expectations(kind, 0.15);
        let c2 = check_condition_c2(kind, Method::II, &coupling, &DEFAULT_GRID)?;
        let (ok, p) = exponent_in(&c2, lo, hi);
        pass &= ok;
        parts.push(format!("C2-II/{kind}={p}"));
    }
    for kind in MapKind::APPROXIMATE {
        let (lo, hi) = expectations(kind, 0.05);
        let c3 = check_condition_c3(kind, &coupling, &DEFAULT_GRID)?;
        let (ok, p) = exponent_in(&c3, lo, hi);
        pass &= ok;
        parts.push(format!("C3/{kind}={p}"));
    }
    Ok(Outcome {
        pass,
        detail: parts.join(" "),
    })
}

fn averaged_sme_violation() -> Result<Outcome> {
    let gamma: f64 = 1.0;
    let c = sigma_minus().scale_real((gamma / 2.0).sqrt());
    let mut pass = true;
    let mut parts = Vec::new();
    for gamma_dt in [1e-2, 1e-3] {
        let lambda = averaged_sme_min_eigenvalue(&LindbladChannelSpec::new(c.clone(), gamma_dt / gamma)?)?;
        let target = -gamma_dt * gamma_dt / 4.0;
        let rel = (lambda - target).abs() / target.abs();
        pass &= rel <= 0.05;
        parts.push(format!("x={gamma_dt:e}: {lambda:.4e} vs {target:.4e} (rel {rel:.3})"));
    }
    Ok(Outcome {
        pass,
        detail: parts.join("; "),
    })
}

fn hermitian_exact() -> Result<Outcome> {
    let gamma = 1.0;
    let coupling = Coupling::dephasing(gamma);
    let mut worst = 0.0f64;
    for gamma_dt in [0.01, 0.1, 1.0] {
        let dt = gamma_dt / gamma;
        let averaged = average_channel_method1(MapKind::HermitianExact, &coupling, dt)?;
        let exact = propagator(&LindbladChannelSpec::new(coupling.c.clone(), dt)?, PropagatorOrder::Exact);
        worst = worst.max(averaged.matrix().max_abs_diff(exact.matrix()));
    }
    Ok(Outcome {
        pass: worst <= 1e-12,
        detail: format!("max deviation {worst:.1e} (tol 1e-12)"),
    })
}

fn prefactors() -> Result<Outcome> {
    let gamma_dts = [0.02, 0.01, 0.005];
    let fits: Vec<PrefactorFit> = REFERENCE_PREFACTORS
        .iter()
        .map(|&(kind, example, _)| prefactor_study(kind, example, &gamma_dts, 20_000, 32, SEED))
        .collect::<Result<_>>()?;
    let mut pass = true;
    let mut parts = Vec::new();
    for fit in &fits {
        let target = reference_prefactor(fit.kind, fit.example).expect("tabulated");
        let rel = (fit.prefactor - target).abs() / target;
        pass &= rel <= 0.10;
        parts.push(format!(
            "{}-{}={:.4}±{:.4} (target {target}, rel {rel:.3})",
            fit.kind, fit.example, fit.prefactor, fit.prefactor_std_error
        ));
    }
    for example in [Example::ZMeasurement, Example::Fluorescence] {
        let of = |kind| fits.iter().find(|f| f.kind == kind && f.example == example).expect("fit");
        let w = of(MapKind::WMap);
        let sep = [MapKind::Ito, MapKind::RouchonRalph, MapKind::Gw]
            .iter()
            .map(|&k| {
                let o = of(k);
                (o.prefactor - w.prefactor) / o.prefactor_std_error.hypot(w.prefactor_std_error)
            })
            .fold(f64::INFINITY, f64::min);
        pass &= sep >= 3.0;
        parts.push(format!("{example}: W separation {sep:.1} sigma"));
    }
    Ok(Outcome {
        pass,
        detail: parts.join("; "),
    })
}

struct Running {
    n: f64,
    sum: f64,
    sum2: f64,
}

impl Running {
    fn new() -> Self {
        Self { n: 0.0, sum: 0.0, sum2: 0.0 }
    }
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum2 += v * v;
    }
    fn mean(&self) -> f64 {
        self.sum / self.n
    }
    fn std_error(&self) -> f64 {
        let m = self.mean();
        ((self.sum2 / self.n - m * m) / (self.n - 1.0)).sqrt()
    }
}

fn record_statistics() -> Result<Outcome> {
    let dt = 0.01;
    let pdf = ostensible_pdf(MapKind::FluNearlyExact, 1.0, dt, 0.0)?;
    let mut sampler = RecordSampler::new(MapKind::FluNearlyExact, SamplingStrategy::Ostensible, SEED);
    let (mut dw2, mut dw4, mut z2, mut yz) = (Running::new(), Running::new(), Running::new(), Running::new());
    for _ in 0..1_000_000 {
        let r = sampler.draw_ostensible(&pdf, 0.0);
        let dw = r.y * dt;
        let z = r.z.expect("z drawn");
        dw2.push(dw * dw);
        dw4.push(dw.powi(4));
        z2.push(z * z);
        yz.push(r.y * z);
    }
    let checks = [
        ("E[dW^2]", &dw2, dt),
        ("E[dW^4]", &dw4, 3.0 * dt * dt),
        ("E[Z^2]", &z2, dt.powi(3) / 12.0),
        ("E[YZ]", &yz, 0.0),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, stat, target) in checks {
        let z = (stat.mean() - target) / stat.std_error();
        pass &= z.abs() <= 3.0;
        parts.push(format!("{name} {z:+.2} SE"));
    }
    Ok(Outcome {
        pass,
        detail: parts.join(", "),
    })
}

fn flu_bayesian() -> Result<Outcome> {
    let report = check_flu_bayesian_equivalence(1.0, &DEFAULT_GRID)?;
    let (ok, p) = exponent_in(&report, 2.85, 3.15);
    Ok(Outcome {
        pass: ok,
        detail: format!("exponent {p} (3.0 ± 0.15)"),
    })
}

fn multi_step() -> Result<Outcome> {
    let gamma = 1.0;
    let gamma_dt = 0.02;
    let steps = 10;
    let coupling = Coupling::decay(gamma);
    let rho0 = DensityMatrix::bloch(1.1, 0.4);
    let ensemble = ensemble_average(MapKind::WMap, Method::I, &coupling, gamma_dt / gamma, steps, &rho0, 100_000, SEED)?;
    let last = ensemble.last().expect("steps");
    let t = steps as f64 * gamma_dt / gamma;
    let exact = lindblad_step(&LindbladChannelSpec::new(coupling.c.clone(), t)?, &rho0, PropagatorOrder::Exact)?;
    let distance = 0.5 * (&last.mean - exact.matrix()).hermitian_part().trace_norm_hermitian()?;
    let se = last.trace_distance_std_error();
    let tol = 10.0 * gamma_dt * gamma_dt * gamma * t + 3.0 * se;
    let w_ok = distance <= tol;

    let flu_dt = 0.02;
    let flu_steps = 50;
    let flu = ensemble_average(
        MapKind::FluNearlyExact,
        Method::I,
        &coupling,
        flu_dt,
        flu_steps,
        &DensityMatrix::new(excited())?,
        100_000,
        SEED + 1,
    )?;
    let end = flu.last().expect("steps");
    let pop = end.mean[(0, 0)].re;
    let pop_se = end.std_error[(0, 0)].re;
    let target = (-gamma * end.time).exp();
    let z = (pop - target) / pop_se;
    Ok(Outcome {
        pass: w_ok && z.abs() <= 3.0,
        detail: format!(
            "W trace distance {distance:.2e} (tol {tol:.2e}); excited population at γt={:.2} {pop:.5} vs {target:.5} ({z:+.2} SE)",
            gamma * end.time
        ),
    })
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let results = [
        run(1, "completeness residuals", secs(1), completeness),
        run(2, "one-step accuracy orders", secs(10), condition_b),
        run(3, "complete positivity and trace matrix", secs(30), condition_c),
        run(4, "averaged SME positivity violation", secs(1), averaged_sme_violation),
        run(5, "Hermitian exact map", secs(1), hermitian_exact),
        run(6, "trace-distance prefactors", secs(600), prefactors),
        run(7, "record statistics", secs(5), record_statistics),
        run(8, "fluorescence Bayesian equivalence", secs(1), flu_bayesian),
        run(9, "multi-step ensembles", secs(120), multi_step),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
