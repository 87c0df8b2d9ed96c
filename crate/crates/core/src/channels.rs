//! Lindblad dissipators and unconditioned propagators (zero Hamiltonian,
//! single Lindblad operator).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Channel, ComplexMatrix, DensityMatrix};

/// A single Lindblad operator `c` and a time step `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct LindbladChannelSpec {
    pub c: ComplexMatrix,
    pub dt: f64,
}

impl LindbladChannelSpec {
    pub fn new(c: ComplexMatrix, dt: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::InvalidParameter("Lindblad operator is not finite".into()));
        }
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step {dt} must be >= 0")));
        }
        Ok(Self { c, dt })
    }

    pub fn dim(&self) -> usize {
        self.c.dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PropagatorOrder {
    First,
    Second,
    Exact,
}

fn check_dims(c: &ComplexMatrix, rho: &ComplexMatrix) -> Result<()> {
    if c.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            found: rho.dim(),
        });
    }
    Ok(())
}

/// `𝒟[c]ρ = cρc† − ½{c†c, ρ}`
pub fn dissipator(c: &ComplexMatrix, rho: impl AsRef<ComplexMatrix>) -> Result<ComplexMatrix> {
    let rho = rho.as_ref();
    check_dims(c, rho)?;
    let cd = c.dagger();
    let n = &cd * c;
    let jump = &(c * rho) * &cd;
    let anti = &(&n * rho) + &(rho * &n);
    Ok(&jump - &anti.scale_real(0.5))
}

/// `𝒟²[c]ρ = 𝒟[c](𝒟[c]ρ)` written out as five operator groups.
pub fn dissipator_squared(
    c: &ComplexMatrix,
    rho: impl AsRef<ComplexMatrix>,
) -> Result<ComplexMatrix> {
    let rho = rho.as_ref();
    check_dims(c, rho)?;
    let cd = c.dagger();
    let n = &cd * c;
    let n2 = &n * &n;
    let c2 = c * c;
    let cd2 = &cd * &cd;

    let mut out = (&(&n * rho) * &n).scale_real(0.5);
    out += &(&(&c2 * rho) * &cd2);
    out += &(&(rho * &n2) + &(&n2 * rho)).scale_real(0.25);
    let g4 = &(&(&(c * rho) * &cd2) * c) + &(&(&(&cd * &c2) * rho) * &cd);
    out -= &g4.scale_real(0.5);
    let g5 = &(&(&(c * rho) * &cd) * &(c * &cd)) + &(&(&(c * &n) * rho) * &cd);
    out -= &g5.scale_real(0.5);
    Ok(out)
}

/// Vectorized generator of `𝒟[c]`.
pub fn generator(c: &ComplexMatrix) -> Channel {
    let n = &c.dagger() * c;
    let half = n.scale_real(0.5);
    &(&Channel::jump(c) - &Channel::left(&half)) - &Channel::right(&half)
}

/// Propagator over one step: `1 + Δt𝒟`, `1 + Δt𝒟 + ½Δt²𝒟²`, or `exp(Δt𝒟)`.
pub fn propagator(spec: &LindbladChannelSpec, order: PropagatorOrder) -> Channel {
    let l = generator(&spec.c).scale(spec.dt);
    let id = Channel::identity(spec.dim());
    match order {
        PropagatorOrder::First => &id + &l,
        PropagatorOrder::Second => &(&id + &l) + &l.compose(&l).scale(0.5),
        PropagatorOrder::Exact => l.exp(),
    }
}

pub fn lindblad_step(
    spec: &LindbladChannelSpec,
    rho: &DensityMatrix,
    order: PropagatorOrder,
) -> Result<DensityMatrix> {
    check_dims(&spec.c, rho.matrix())?;
    let out = propagator(spec, order).apply(rho.matrix())?;
    Ok(DensityMatrix::new_unchecked(out))
}

/// The first-order averaged SME step `ρ ↦ ρ + Δt𝒟[c]ρ`. With `extended`,
/// the operator is `c ⊗ 1` on the system-ancilla space (system first).
pub fn averaged_sme_channel(spec: &LindbladChannelSpec, extended: bool) -> Channel {
    let c = if extended {
        spec.c.kron(&ComplexMatrix::identity(spec.dim()))
    } else {
        spec.c.clone()
    };
    let d = c.dim();
    &Channel::identity(d) + &generator(&c).scale(spec.dt)
}

/// Lowest eigenvalue of the extended averaged-SME output on the maximally
/// entangled system-ancilla state.
pub fn averaged_sme_min_eigenvalue(spec: &LindbladChannelSpec) -> Result<f64> {
    let channel = averaged_sme_channel(spec, true);
    let bell = DensityMatrix::maximally_entangled(spec.dim());
    let out = channel.apply(bell.matrix())?.hermitian_part();
    Ok(crate::linalg::hermitian_eigs(&out)?[0])
}
