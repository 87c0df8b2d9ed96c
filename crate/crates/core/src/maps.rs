//! Finite-step measurement operators and their record PDFs.
//!
//! Every map is represented in the factored form `K = √p_ost · M`, where
//! `p_ost` is a state-independent Gaussian density of the record and `M` is
//! returned unnormalized. For all kinds except [`MapKind::HermitianExact`],
//! `M` is a polynomial in the record variables, which lets the averaging
//! code integrate it exactly against Gaussian moments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigh, qubit, ComplexMatrix, DensityMatrix, Tolerances, C64, ONE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MapKind {
    Ito,
    RouchonRalph,
    /// Itô with the `−⅛(c†c)²Δt²` correction.
    Gw,
    WMap,
    HermitianExact,
    FluNearlyExact,
    FluExact,
    FluBayesian,
}

impl MapKind {
    pub const ALL: [MapKind; 8] = [
        MapKind::Ito,
        MapKind::RouchonRalph,
        MapKind::Gw,
        MapKind::WMap,
        MapKind::HermitianExact,
        MapKind::FluNearlyExact,
        MapKind::FluExact,
        MapKind::FluBayesian,
    ];

    /// The four general-purpose approximate maps.
    pub const APPROXIMATE: [MapKind; 4] = [
        MapKind::Ito,
        MapKind::RouchonRalph,
        MapKind::Gw,
        MapKind::WMap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MapKind::Ito => "ito",
            MapKind::RouchonRalph => "rr",
            MapKind::Gw => "gw",
            MapKind::WMap => "w",
            MapKind::HermitianExact => "hermitian-exact",
            MapKind::FluNearlyExact => "flu-nearly-exact",
            MapKind::FluExact => "flu-exact",
            MapKind::FluBayesian => "flu-bayesian",
        }
    }

    pub fn is_approximate(self) -> bool {
        Self::APPROXIMATE.contains(&self)
    }

    pub fn is_fluorescence(self) -> bool {
        matches!(
            self,
            MapKind::FluNearlyExact | MapKind::FluExact | MapKind::FluBayesian
        )
    }

    /// Record fields consumed by this kind.
    pub fn record_fields(self) -> &'static [RecordField] {
        match self {
            MapKind::FluNearlyExact => &[RecordField::Y, RecordField::Z],
            MapKind::FluExact => &[RecordField::X],
            _ => &[RecordField::Y],
        }
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "ito" | "i" => MapKind::Ito,
            "rr" | "r" | "rouchon-ralph" => MapKind::RouchonRalph,
            "gw" | "g" => MapKind::Gw,
            "w" | "wmap" | "w-map" => MapKind::WMap,
            "hermitian-exact" | "hermitian" | "exact-z" => MapKind::HermitianExact,
            "flu-nearly-exact" | "flu" => MapKind::FluNearlyExact,
            "flu-exact" => MapKind::FluExact,
            "flu-bayesian" => MapKind::FluBayesian,
            other => {
                return Err(Error::InvalidParameter(format!("unknown map kind `{other}`")))
            }
        };
        Ok(kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecordField {
    Y,
    Z,
    X,
}

impl RecordField {
    fn index(self) -> usize {
        match self {
            RecordField::Y => 0,
            RecordField::Z => 1,
            RecordField::X => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RecordField::Y => "y",
            RecordField::Z => "z",
            RecordField::X => "x",
        }
    }
}

/// Coarse-grained readout for one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordSample {
    pub y: f64,
    pub z: Option<f64>,
    pub x: Option<f64>,
    pub t0: f64,
}

impl RecordSample {
    pub fn y(y: f64) -> Self {
        Self {
            y,
            z: None,
            x: None,
            t0: 0.0,
        }
    }

    pub fn yz(y: f64, z: f64) -> Self {
        Self {
            z: Some(z),
            ..Self::y(y)
        }
    }

    pub fn x(x: f64) -> Self {
        Self {
            x: Some(x),
            ..Self::y(0.0)
        }
    }

    pub fn at(self, t0: f64) -> Self {
        Self { t0, ..self }
    }

    fn values(&self, kind: MapKind) -> Result<[f64; 3]> {
        let z = match (kind.record_fields().contains(&RecordField::Z), self.z) {
            (true, None) => return Err(Error::MissingRecordField { kind, field: "z" }),
            (_, z) => z.unwrap_or(0.0),
        };
        let x = match (kind.record_fields().contains(&RecordField::X), self.x) {
            (true, None) => return Err(Error::MissingRecordField { kind, field: "x" }),
            (_, x) => x.unwrap_or(0.0),
        };
        Ok([self.y, z, x])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPdf {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianPdf {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
            return Err(Error::VariancePositivityViolated { variance });
        }
        Ok(Self { mean, variance })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn density(&self, v: f64) -> f64 {
        let d = v - self.mean;
        (-0.5 * d * d / self.variance).exp() / (std::f64::consts::TAU * self.variance).sqrt()
    }

    /// `E[V^k]`
    pub fn raw_moment(&self, k: u32) -> f64 {
        // E[(μ + σN)^k] = Σ_{j even} C(k, j) μ^{k−j} σ^j (j − 1)!!
        let mut total = 0.0;
        let mut binom = 1.0;
        let mut double_fact = 1.0;
        for j in 0..=k {
            if j > 0 {
                binom *= (k - j + 1) as f64 / j as f64;
            }
            if j % 2 == 0 {
                if j >= 2 {
                    double_fact *= (j - 1) as f64;
                }
                total += binom
                    * self.mean.powi((k - j) as i32)
                    * self.variance.powi((j / 2) as i32)
                    * double_fact;
            }
        }
        total
    }
}

/// State-independent record densities for one step; one Gaussian per record
/// field, the fields being independent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OstensiblePdf {
    pub y: Option<GaussianPdf>,
    pub z: Option<GaussianPdf>,
    pub x: Option<GaussianPdf>,
}

impl OstensiblePdf {
    pub fn field(&self, field: RecordField) -> Option<&GaussianPdf> {
        match field {
            RecordField::Y => self.y.as_ref(),
            RecordField::Z => self.z.as_ref(),
            RecordField::X => self.x.as_ref(),
        }
    }

    pub fn density(&self, record: &RecordSample) -> f64 {
        let mut p = 1.0;
        if let Some(g) = &self.y {
            p *= g.density(record.y);
        }
        if let (Some(g), Some(z)) = (&self.z, record.z) {
            p *= g.density(z);
        }
        if let (Some(g), Some(x)) = (&self.x, record.x) {
            p *= g.density(x);
        }
        p
    }
}

/// Ostensible record PDFs for `kind`.
pub fn ostensible_pdf(kind: MapKind, gamma: f64, dt: f64, t0: f64) -> Result<OstensiblePdf> {
    check_dt(dt)?;
    let y = GaussianPdf::new(0.0, 1.0 / dt)?;
    let pdf = match kind {
        MapKind::FluNearlyExact => OstensiblePdf {
            y: Some(y),
            z: Some(GaussianPdf::new(0.0, dt.powi(3) / 12.0)?),
            x: None,
        },
        MapKind::FluExact => {
            check_gamma(gamma)?;
            let var = 2.0 / gamma * (-gamma * (t0 + dt / 2.0)).exp() * (gamma * dt / 2.0).sinh();
            OstensiblePdf {
                y: None,
                z: None,
                x: Some(GaussianPdf::new(0.0, var)?),
            }
        }
        _ => OstensiblePdf {
            y: Some(y),
            z: None,
            x: None,
        },
    };
    Ok(pdf)
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("time step {dt} must be > 0")));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("rate {gamma} must be > 0")));
    }
    Ok(())
}

/// A Lindblad operator together with the rate it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub c: ComplexMatrix,
    pub gamma: f64,
}

impl Coupling {
    /// `c = √γ σ₋`
    pub fn decay(gamma: f64) -> Self {
        Self {
            c: qubit::sigma_minus().scale_real(gamma.sqrt()),
            gamma,
        }
    }

    /// `c = √(γ/2) σ_z`
    pub fn dephasing(gamma: f64) -> Self {
        Self::observable(&qubit::sigma_z(), gamma)
    }

    /// `c = √(γ/2) A` for a Hermitian observable `A`.
    pub fn observable(a: &ComplexMatrix, gamma: f64) -> Self {
        Self {
            c: a.scale_real((gamma / 2.0).sqrt()),
            gamma,
        }
    }

    pub fn general(c: ComplexMatrix, gamma: f64) -> Self {
        Self { c, gamma }
    }

    pub fn dim(&self) -> usize {
        self.c.dim()
    }
}

/// Multi-index of a record monomial `Y^a Z^b X^c`.
pub type Powers = [u32; 3];

/// `M(record) = Σ coeff · Y^a Z^b X^c`
#[derive(Clone, Debug, PartialEq)]
pub struct RecordPolynomial {
    dim: usize,
    terms: Vec<(Powers, ComplexMatrix)>,
}

impl RecordPolynomial {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
        }
    }

    fn add(&mut self, powers: Powers, coeff: ComplexMatrix) {
        debug_assert_eq!(coeff.dim(), self.dim);
        match self.terms.iter_mut().find(|(p, _)| *p == powers) {
            Some((_, c)) => *c += &coeff,
            None => self.terms.push((powers, coeff)),
        }
    }

    fn with(mut self, powers: Powers, coeff: ComplexMatrix) -> Self {
        self.add(powers, coeff);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(Powers, ComplexMatrix)] {
        &self.terms
    }

    pub fn evaluate(&self, values: [f64; 3]) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim);
        for (p, coeff) in &self.terms {
            let w: f64 = (0..3).map(|i| values[i].powi(p[i] as i32)).product();
            out += &coeff.scale_real(w);
        }
        out
    }

    /// Highest power of `field` appearing in any term.
    pub fn degree(&self, field: RecordField) -> u32 {
        self.terms
            .iter()
            .map(|(p, _)| p[field.index()])
            .max()
            .unwrap_or(0)
    }
}

/// `M(Y) = Σ_j exp(Δt(2Y m_j − m_j²)/4) |a_j⟩⟨a_j|` for a Hermitian `c` with
/// eigenvalues `m_j / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianFamily {
    pub dt: f64,
    /// Means of the per-eigenstate record distributions.
    pub means: Vec<f64>,
    /// Eigenvectors of `c` as columns.
    pub basis: ComplexMatrix,
}

impl HermitianFamily {
    pub fn evaluate(&self, y: f64) -> ComplexMatrix {
        let d: Vec<C64> = self
            .means
            .iter()
            .map(|&m| C64::new((self.dt * (2.0 * y * m - m * m) / 4.0).exp(), 0.0))
            .collect();
        &(&self.basis * &ComplexMatrix::diag(&d)) * &self.basis.dagger()
    }

    /// Eigenprojector populations `⟨a_j|ρ|a_j⟩`.
    pub fn populations(&self, rho: &DensityMatrix) -> Vec<f64> {
        let r = rho.matrix();
        (0..self.means.len())
            .map(|j| {
                let v: Vec<C64> = (0..self.basis.dim()).map(|i| self.basis[(i, j)]).collect();
                let rv = r.mul_vec(&v);
                v.iter().zip(&rv).map(|(a, b)| a.conj() * b).sum::<C64>().re
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OperatorFamily {
    Polynomial(RecordPolynomial),
    Hermitian(HermitianFamily),
}

/// The record-dependent operator `M(·)` of one map and step, with its
/// ostensible PDF.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementOperator {
    pub kind: MapKind,
    pub dt: f64,
    pub family: OperatorFamily,
    pub ostensible: OstensiblePdf,
}

impl MeasurementOperator {
    pub fn new(kind: MapKind, coupling: &Coupling, dt: f64, t0: f64) -> Result<Self> {
        check_dt(dt)?;
        let family = match kind {
            MapKind::HermitianExact => OperatorFamily::Hermitian(hermitian_family(coupling, dt)?),
            _ => OperatorFamily::Polynomial(polynomial(kind, coupling, dt, t0)?),
        };
        Ok(Self {
            kind,
            dt,
            family,
            ostensible: ostensible_pdf(kind, coupling.gamma, dt, t0)?,
        })
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            OperatorFamily::Polynomial(p) => p.dim(),
            OperatorFamily::Hermitian(h) => h.basis.dim(),
        }
    }

    pub fn evaluate(&self, record: &RecordSample) -> Result<ComplexMatrix> {
        let values = record.values(self.kind)?;
        Ok(match &self.family {
            OperatorFamily::Polynomial(p) => p.evaluate(values),
            OperatorFamily::Hermitian(h) => h.evaluate(values[0]),
        })
    }

    /// `K = √p_ost · M`
    pub fn kraus(&self, record: &RecordSample) -> Result<ComplexMatrix> {
        Ok(self.evaluate(record)?.scale_real(self.ostensible.density(record).sqrt()))
    }
}

fn hermitian_family(coupling: &Coupling, dt: f64) -> Result<HermitianFamily> {
    let deviation = coupling.c.hermiticity_defect();
    if deviation > Tolerances::DEFAULT.structural {
        return Err(Error::IncompatibleKind {
            kind: MapKind::HermitianExact,
            reason: format!("a non-Hermitian Lindblad operator (deviation {deviation:.3e})"),
        });
    }
    let eig = hermitian_eigh(&coupling.c)?;
    Ok(HermitianFamily {
        dt,
        means: eig.values.iter().map(|l| 2.0 * l).collect(),
        basis: eig.vectors,
    })
}

fn check_decay(kind: MapKind, coupling: &Coupling) -> Result<()> {
    let expected = Coupling::decay(coupling.gamma).c;
    let fits = coupling.dim() == 2
        && coupling.gamma > 0.0
        && coupling.c.max_abs_diff(&expected) <= Tolerances::DEFAULT.structural * expected.max_abs().max(1.0);
    if !fits {
        return Err(Error::IncompatibleKind {
            kind,
            reason: "a Lindblad operator other than sqrt(gamma)*sigma_minus".into(),
        });
    }
    Ok(())
}

const CONST: Powers = [0, 0, 0];
const Y1: Powers = [1, 0, 0];
const Y2: Powers = [2, 0, 0];
const Z1: Powers = [0, 1, 0];
const X1: Powers = [0, 0, 1];

fn polynomial(kind: MapKind, coupling: &Coupling, dt: f64, t0: f64) -> Result<RecordPolynomial> {
    let c = &coupling.c;
    let d = c.dim();
    let id = ComplexMatrix::identity(d);
    let cd = c.dagger();
    let n = &cd * c;
    let c2 = c * c;
    let n2 = &n * &n;
    let ito = || {
        RecordPolynomial::new(d)
            .with(CONST, &id - &n.scale_real(dt / 2.0))
            .with(Y1, c.scale_real(dt))
    };
    let poly = match kind {
        MapKind::Ito => ito(),
        MapKind::RouchonRalph => ito()
            .with(CONST, c2.scale_real(-dt / 2.0))
            .with(Y2, c2.scale_real(dt * dt / 2.0)),
        MapKind::Gw => ito().with(CONST, n2.scale_real(-dt * dt / 8.0)),
        MapKind::WMap => {
            let mixed = &(&cd * &c2) + &(&(c * &cd) * c);
            ito()
                .with(CONST, c2.scale_real(-dt / 2.0))
                .with(CONST, n2.scale_real(dt * dt / 8.0))
                .with(Y1, mixed.scale_real(-dt * dt / 4.0))
                .with(Y2, c2.scale_real(dt * dt / 2.0))
        }
        MapKind::HermitianExact => unreachable!("not a polynomial family"),
        MapKind::FluNearlyExact | MapKind::FluExact | MapKind::FluBayesian => {
            check_decay(kind, coupling)?;
            let g = coupling.gamma;
            let lower = qubit::sigma_minus();
            let top = |v: f64| ComplexMatrix::diag(&[C64::new(v, 0.0), ONE]);
            match kind {
                MapKind::FluNearlyExact => RecordPolynomial::new(2)
                    .with(CONST, top((-g * dt / 2.0).exp()))
                    .with(
                        Y1,
                        lower.scale_real(g.sqrt() * (1.0 - g / 2.0 * (t0 + dt / 2.0)) * dt),
                    )
                    .with(Z1, lower.scale_real(-g.powf(1.5) / 2.0)),
                MapKind::FluExact => RecordPolynomial::new(2)
                    .with(CONST, top((-g * dt / 2.0).exp()))
                    .with(X1, lower.scale_real(g.sqrt())),
                _ => {
                    if g * dt > 1.0 {
                        return Err(Error::InvalidParameter(format!(
                            "gamma*dt = {} exceeds 1 for the Bayesian fluorescence map",
                            g * dt
                        )));
                    }
                    RecordPolynomial::new(2)
                        .with(CONST, top((1.0 - g * dt).sqrt()))
                        .with(Y1, lower.scale_real(g.sqrt() * dt))
                }
            }
        }
    };
    Ok(poly)
}

/// Unnormalized operator `M(record)` of `kind`.
pub fn build_operator(
    kind: MapKind,
    coupling: &Coupling,
    dt: f64,
    record: &RecordSample,
) -> Result<ComplexMatrix> {
    MeasurementOperator::new(kind, coupling, dt, record.t0)?.evaluate(record)
}

/// Gaussian approximation of the true record PDF given `ρ`, as used for
/// nonlinear (normalized) averaging.
pub fn guessed_pdf(
    kind: MapKind,
    c: &ComplexMatrix,
    rho: &DensityMatrix,
    dt: f64,
) -> Result<GaussianPdf> {
    check_dt(dt)?;
    if c.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            found: rho.dim(),
        });
    }
    let ev = |m: &ComplexMatrix| rho.expectation(m).re;
    let cd = c.dagger();
    let n = &cd * c;
    let x = ev(&(c + &cd));
    let base_var = 1.0 / dt;
    let spread = 2.0 * ev(&n) - x * x;
    let (mean, variance) = match kind {
        MapKind::Ito | MapKind::RouchonRalph => (x, base_var),
        MapKind::Gw => {
            let skew = ev(&(&(&cd * c) * c)) + ev(&(&(&cd * &cd) * c));
            (x - 0.5 * skew * dt, base_var + spread)
        }
        MapKind::WMap => {
            let shift = ev(&(&(&cd * &cd) * c)) + ev(&(&(&cd * c) * c))
                - ev(&(&(c * &cd) * c))
                - ev(&(&(&cd * c) * &cd));
            let squeeze = ev(&(&(c * c) + &(&cd * &cd)));
            (x + 0.25 * shift * dt, base_var + spread + squeeze)
        }
        other => {
            return Err(Error::IncompatibleKind {
                kind: other,
                reason: "guessed record statistics (defined for ito, rr, gw, w only)".into(),
            })
        }
    };
    if !(variance > 0.0) {
        return Err(Error::VariancePositivityViolated { variance });
    }
    GaussianPdf::new(mean, variance)
}

/// `(MρM†/Tr[MρM†], Tr[MρM†])`
pub fn apply_normalized(m: &ComplexMatrix, rho: &DensityMatrix) -> Result<(DensityMatrix, f64)> {
    let (out, weight) = apply_unnormalized(m, rho.matrix())?;
    if !(weight > 1e-300) {
        return Err(Error::ZeroNormState { norm: weight });
    }
    Ok((DensityMatrix::new_unchecked(out.scale_real(1.0 / weight)), weight))
}

/// `(MρM†, Tr[MρM†])` for an arbitrary matrix `ρ`.
pub fn apply_unnormalized(m: &ComplexMatrix, rho: &ComplexMatrix) -> Result<(ComplexMatrix, f64)> {
    if m.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: rho.dim(),
        });
    }
    let out = &(m * rho) * &m.dagger();
    let weight = out.trace().re;
    Ok((out, weight))
}
