//! Fixed physics layers of the graybox model.
//!
//! These take the control pulses and the four-parameter noise operators
//! produced by the blackbox and turn them into expectation values, a Pauli
//! basis process matrix and gate fidelities. Every map has a closed-form
//! derivative so the whole pipeline can be differentiated end to end.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::linalg::{Mat2, Mat4, C64, I, ONE, ZERO};
use crate::noise::TimeGrid;
use crate::pulses::{PulseTrain, INPUT_DIM, PULSE_COUNT};
use crate::simulator::{step_exponential, step_exponential_with_grad};

/// Whitebox time discretization.
pub const DEFAULT_WHITEBOX_STEPS: usize = 2000;
pub const PREP_COUNT: usize = 6;
pub const OBSERVABLE_COUNT: usize = 3;
pub const EXPECTATION_COUNT: usize = PREP_COUNT * OBSERVABLE_COUNT;

/// Single-qubit target gates, in reporting order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    I,
    X,
    Y,
    Z,
    H,
    RxPi4,
}

impl Gate {
    pub const ALL: [Gate; 6] = [Gate::I, Gate::X, Gate::Y, Gate::Z, Gate::H, Gate::RxPi4];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Gate> {
        Gate::ALL
            .get(index)
            .copied()
            .ok_or_else(|| param_err(format!("gate index {index} out of range 0..6")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Gate::I => "I",
            Gate::X => "X",
            Gate::Y => "Y",
            Gate::Z => "Z",
            Gate::H => "H",
            Gate::RxPi4 => "RX(pi/4)",
        }
    }

    pub fn unitary(self) -> Mat2 {
        match self {
            Gate::I => Mat2::identity(),
            Gate::X => Mat2::pauli(1),
            Gate::Y => Mat2::pauli(2),
            Gate::Z => Mat2::pauli(3),
            Gate::H => Mat2::real(1.0, 1.0, 1.0, -1.0).scale_re(std::f64::consts::FRAC_1_SQRT_2),
            Gate::RxPi4 => {
                let c = (std::f64::consts::PI / 8.0).cos();
                let s = (std::f64::consts::PI / 8.0).sin();
                Mat2::new(c.into(), -I * s, -I * s, c.into())
            }
        }
    }
}

/// Noise-averaged expectations E[σ_α(T)] for the six Pauli eigenstate
/// preparations (|0x⟩, |1x⟩, |0y⟩, |1y⟩, |0z⟩, |1z⟩) and α ∈ (x, y, z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpectationSet {
    pub values: [[f64; OBSERVABLE_COUNT]; PREP_COUNT],
}

impl ExpectationSet {
    pub fn zero() -> Self {
        ExpectationSet { values: [[0.0; OBSERVABLE_COUNT]; PREP_COUNT] }
    }

    pub fn flat(&self) -> [f64; EXPECTATION_COUNT] {
        std::array::from_fn(|i| self.values[i / OBSERVABLE_COUNT][i % OBSERVABLE_COUNT])
    }

    pub fn from_flat(flat: &[f64; EXPECTATION_COUNT]) -> Self {
        let mut out = ExpectationSet::zero();
        for (i, &v) in flat.iter().enumerate() {
            out.values[i / OBSERVABLE_COUNT][i % OBSERVABLE_COUNT] = v;
        }
        out
    }

    pub fn get(&self, prep: usize, observable: usize) -> f64 {
        self.values[prep][observable]
    }
}

/// Initial state ρ₀ for preparation index 0..6.
pub fn prep_state(prep: usize) -> Mat2 {
    let axis = prep / 2 + 1;
    let sign = if prep.is_multiple_of(2) { 0.5 } else { -0.5 };
    Mat2::identity().scale_re(0.5) + Mat2::pauli(axis).scale_re(sign)
}

/// Pauli observable for index 0..3 (x, y, z).
pub fn observable(index: usize) -> Mat2 {
    Mat2::pauli(index + 1)
}

/// Control fields at the midpoints of a `steps`-cell grid.
fn sampled_fields(train: &PulseTrain, steps: usize) -> Result<(TimeGrid, Vec<[f64; PULSE_COUNT]>)> {
    if steps < 1 {
        return Err(param_err("whitebox needs at least one time step"));
    }
    train.validate()?;
    let grid = TimeGrid::new(train.total_time, steps)?;
    let envelopes = grid
        .times()
        .map(|t| std::array::from_fn(|k| train.envelope(k, t)))
        .collect();
    Ok((grid, envelopes))
}

fn fields_at(train: &PulseTrain, env: &[f64; PULSE_COUNT]) -> (f64, f64) {
    let fx = (0..PULSE_COUNT).map(|k| train.amplitudes[0][k] * env[k]).sum();
    let fy = (0..PULSE_COUNT).map(|k| train.amplitudes[1][k] * env[k]).sum();
    (fx, fy)
}

/// Time-ordered product of step exponentials of f_x σx + f_y σy.
pub fn control_unitary(train: &PulseTrain, steps: usize) -> Result<Mat2> {
    let (grid, envelopes) = sampled_fields(train, steps)?;
    let dt = grid.dt();
    Ok(envelopes.iter().fold(Mat2::identity(), |u, env| {
        let (fx, fy) = fields_at(train, env);
        step_exponential(fx, fy, 0.0, dt) * u
    }))
}

/// Control unitary plus its derivatives with respect to the ten amplitudes,
/// ordered as in [`PulseTrain::flat`].
pub fn control_unitary_jacobian(
    train: &PulseTrain,
    steps: usize,
) -> Result<(Mat2, [Mat2; INPUT_DIM])> {
    let (grid, envelopes) = sampled_fields(train, steps)?;
    let dt = grid.dt();
    let mut u = Mat2::identity();
    let mut jac = [Mat2::zero(); INPUT_DIM];
    for env in &envelopes {
        let (fx, fy) = fields_at(train, env);
        let (s, ds) = step_exponential_with_grad(fx, fy, 0.0, dt);
        let dsx_u = ds[0] * u;
        let dsy_u = ds[1] * u;
        for k in 0..PULSE_COUNT {
            jac[k] = dsx_u.scale_re(env[k]) + s * jac[k];
            jac[PULSE_COUNT + k] = dsy_u.scale_re(env[k]) + s * jac[PULSE_COUNT + k];
        }
        u = s * u;
    }
    Ok((u, jac))
}

/// Four real parameters of a noise operator V_O.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VOParams {
    pub mu: f64,
    pub theta: f64,
    pub psi: f64,
    pub delta: f64,
}

impl VOParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(param_err(format!("mu = {} outside [0, 1]", self.mu)));
        }
        if ![self.theta, self.psi, self.delta].iter().all(|a| a.is_finite()) {
            return Err(param_err("V_O angles must be finite"));
        }
        Ok(())
    }

    /// Parameters for which V_O is the identity (no noise) for `observable`.
    pub fn noiseless(observable: usize) -> VOParams {
        use std::f64::consts::FRAC_PI_4;
        match observable {
            0 => VOParams { mu: 1.0, theta: -FRAC_PI_4, psi: 0.0, delta: 0.0 },
            1 => VOParams { mu: 1.0, theta: -FRAC_PI_4, psi: -FRAC_PI_4, delta: 0.0 },
            _ => VOParams { mu: 1.0, theta: 0.0, psi: 0.0, delta: 0.0 },
        }
    }
}

fn phase_diag(angle: f64) -> Mat2 {
    Mat2::diag(C64::from_polar(1.0, angle), C64::from_polar(1.0, -angle))
}

fn phase_diag_deriv(angle: f64) -> Mat2 {
    Mat2::diag(I * C64::from_polar(1.0, angle), -I * C64::from_polar(1.0, -angle))
}

/// V_O = O⁻¹ Q D Q† with D = diag(μ, −μ) and
/// Q = diag(e^{iψ}, e^{−iψ}) R(θ) diag(e^{iΔ}, e^{−iΔ}).
pub fn assemble_vo(params: &VOParams, observable_index: usize) -> Result<Mat2> {
    params.validate()?;
    if observable_index >= OBSERVABLE_COUNT {
        return Err(param_err(format!("observable index {observable_index} out of range")));
    }
    Ok(assemble_vo_with_grad(params, observable_index).0)
}

/// V_O and its derivatives with respect to (μ, θ, ψ, Δ). No range checks.
pub fn assemble_vo_with_grad(params: &VOParams, observable_index: usize) -> (Mat2, [Mat2; 4]) {
    let (c, s) = (params.theta.cos(), params.theta.sin());
    let rot = Mat2::real(c, s, -s, c);
    let rot_d = Mat2::real(-s, c, -c, -s);
    let left = phase_diag(params.psi);
    let right = phase_diag(params.delta);
    let q = left * rot * right;
    let q_theta = left * rot_d * right;
    let q_psi = phase_diag_deriv(params.psi) * rot * right;
    let q_delta = left * rot * phase_diag_deriv(params.delta);
    let sign = Mat2::diag(ONE, -ONE);
    let d = sign.scale_re(params.mu);
    let o = observable(observable_index);
    let qd = q * d;
    let v = o * qd * q.adjoint();
    let around = |dq: Mat2| o * (dq * d * q.adjoint() + qd * dq.adjoint());
    let grads = [o * q * sign * q.adjoint(), around(q_theta), around(q_psi), around(q_delta)];
    (v, grads)
}

/// M = U ρ₀ U† O, so that E = Re tr[V_O M].
pub fn measurement_operator(u: &Mat2, prep: usize, observable_index: usize) -> Mat2 {
    *u * prep_state(prep) * u.adjoint() * observable(observable_index)
}

/// Complex tr[V_O U ρ₀ U† O]; the imaginary part is a consistency diagnostic.
pub fn expectation_complex(vo: &Mat2, u: &Mat2, prep: usize, observable_index: usize) -> C64 {
    vo.trace_mul(&measurement_operator(u, prep, observable_index))
}

/// Re tr[V_O U ρ₀ U† O].
pub fn expectation(vo: &Mat2, u: &Mat2, prep: usize, observable_index: usize) -> f64 {
    expectation_complex(vo, u, prep, observable_index).re
}

/// B such that dE = Re tr[dU · B] for E = Re tr[V U ρ U† O].
pub fn expectation_unitary_adjoint(vo: &Mat2, u: &Mat2, prep: usize, observable_index: usize) -> Mat2 {
    let o = observable(observable_index);
    prep_state(prep) * u.adjoint() * (o * *vo + vo.adjoint() * o)
}

/// Expectations of the noiseless channel ρ ↦ U ρ U†, by direct trace.
pub fn ideal_expectations(u: &Mat2) -> ExpectationSet {
    let mut out = ExpectationSet::zero();
    for p in 0..PREP_COUNT {
        let rho = *u * prep_state(p) * u.adjoint();
        for o in 0..OBSERVABLE_COUNT {
            out.values[p][o] = rho.trace_mul(&observable(o)).re;
        }
    }
    out
}

/// 4×4 process matrix in the Pauli basis {I, σx, σy, σz}, trace one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProcessMatrix(pub Mat4);

/// tr[σ_a σ_m σ_b σ_n], indexed [a][m][b][n].
fn pauli_traces() -> &'static [[[[C64; 4]; 4]; 4]; 4] {
    static TABLE: OnceLock<[[[[C64; 4]; 4]; 4]; 4]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[[[ZERO; 4]; 4]; 4]; 4];
        for a in 0..4 {
            for m in 0..4 {
                for b in 0..4 {
                    for n in 0..4 {
                        t[a][m][b][n] =
                            (Mat2::pauli(a) * Mat2::pauli(m) * Mat2::pauli(b) * Mat2::pauli(n)).trace();
                    }
                }
            }
        }
        t
    })
}

/// Pauli transfer block R_αβ = (E[σ_α | 0_β] − E[σ_α | 1_β]) / 2.
pub fn transfer_block(e: &ExpectationSet) -> [[f64; 3]; 3] {
    std::array::from_fn(|a| std::array::from_fn(|b| 0.5 * (e.values[2 * b][a] - e.values[2 * b + 1][a])))
}

/// χ from a unital, trace-preserving 4×4 transfer matrix (upper-left entry 1).
fn chi_from_transfer(block: &[[f64; 3]; 3]) -> Mat4 {
    let t = pauli_traces();
    let mut full = [[0.0; 4]; 4];
    full[0][0] = 1.0;
    for a in 0..3 {
        for b in 0..3 {
            full[a + 1][b + 1] = block[a][b];
        }
    }
    let mut chi = Mat4::zero();
    for m in 0..4 {
        for n in 0..4 {
            let mut acc = ZERO;
            for a in 0..4 {
                for b in 0..4 {
                    if full[a][b] != 0.0 {
                        acc += t[a][m][b][n].conj() * full[a][b];
                    }
                }
            }
            chi.0[m][n] = acc / 8.0;
        }
    }
    let adj = chi.adjoint();
    for m in 0..4 {
        for n in 0..4 {
            chi.0[m][n] = 0.5 * (chi.0[m][n] + adj.0[m][n]);
        }
    }
    chi
}

pub fn reconstruct_chi(expectations: &ExpectationSet) -> ProcessMatrix {
    ProcessMatrix(chi_from_transfer(&transfer_block(expectations)))
}

/// χ = g g† with G = Σ g_m σ_m.
pub fn target_chi(gate: Gate) -> ProcessMatrix {
    chi_of_unitary(&gate.unitary())
}

pub fn chi_of_unitary(u: &Mat2) -> ProcessMatrix {
    let coeffs: [C64; 4] = std::array::from_fn(|m| Mat2::pauli(m).adjoint().trace_mul(u) * 0.5);
    let mut chi = Mat4::zero();
    for m in 0..4 {
        for n in 0..4 {
            chi.0[m][n] = coeffs[m] * coeffs[n].conj();
        }
    }
    ProcessMatrix(chi)
}

/// Re tr(χ_actual† χ_target) without clamping.
pub fn process_overlap(actual: &ProcessMatrix, target: &ProcessMatrix) -> f64 {
    actual.0.overlap(&target.0).re
}

/// Process fidelity clamped to [0, 1].
pub fn process_fidelity(actual: &ProcessMatrix, target: &ProcessMatrix) -> f64 {
    let raw = process_overlap(actual, target);
    if !(-1e-6..=1.0 + 1e-6).contains(&raw) {
        log::debug!("process fidelity {raw} clamped to [0, 1]");
    }
    raw.clamp(0.0, 1.0)
}

/// Fidelity of the channel described by `expectations` against `gate`.
pub fn gate_fidelity(expectations: &ExpectationSet, gate: Gate) -> f64 {
    process_fidelity(&reconstruct_chi(expectations), &target_chi(gate))
}

/// Unclamped gate fidelity as an affine function of the 18 expectations:
/// F = offset + Σ weights_i · E_i.
#[derive(Clone, Copy, Debug)]
pub struct FidelityMap {
    pub offset: f64,
    pub weights: [f64; EXPECTATION_COUNT],
}

impl FidelityMap {
    pub fn for_gate(gate: Gate) -> &'static FidelityMap {
        static MAPS: OnceLock<[FidelityMap; 6]> = OnceLock::new();
        &MAPS.get_or_init(|| Gate::ALL.map(FidelityMap::derive))[gate.index()]
    }

    /// Chain rule through the symmetrized χ conversion and the transfer block.
    fn derive(gate: Gate) -> FidelityMap {
        let t = pauli_traces();
        let target = target_chi(gate).0;
        // d(Re tr χs† χt)/dR_ab with dχ_mn/dR_ab = conj(T_ambn)/8,
        // χs = (χ + χ†)/2.
        let d_full = |a: usize, b: usize| -> f64 {
            let mut acc = 0.0;
            for m in 0..4 {
                for n in 0..4 {
                    let dchi = t[a][m][b][n].conj() / 8.0;
                    let dchi_nm = t[a][n][b][m].conj() / 8.0;
                    let dsym = 0.5 * (dchi + dchi_nm.conj());
                    acc += (dsym.conj() * target.0[m][n]).re;
                }
            }
            acc
        };
        let offset = d_full(0, 0);
        let mut weights = [0.0; EXPECTATION_COUNT];
        for alpha in 0..3 {
            for beta in 0..3 {
                let w = d_full(alpha + 1, beta + 1);
                weights[(2 * beta) * OBSERVABLE_COUNT + alpha] += 0.5 * w;
                weights[(2 * beta + 1) * OBSERVABLE_COUNT + alpha] -= 0.5 * w;
            }
        }
        FidelityMap { offset, weights }
    }

    pub fn evaluate(&self, e: &[f64; EXPECTATION_COUNT]) -> f64 {
        self.offset + self.weights.iter().zip(e).map(|(w, x)| w * x).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Random SU(2) element from three angles.
    fn unitary_from(a: f64, b: f64, c: f64) -> Mat2 {
        let rz = |t: f64| Mat2::diag(C64::from_polar(1.0, -t / 2.0), C64::from_polar(1.0, t / 2.0));
        let ry = |t: f64| {
            let (s, c) = (t / 2.0).sin_cos();
            Mat2::real(c, -s, s, c)
        };
        rz(a) * ry(b) * rz(c)
    }

    #[test]
    fn zero_pulses_give_identity() {
        let u = control_unitary(&PulseTrain::zero(), 2000).unwrap();
        assert!(u.max_abs_diff(&Mat2::identity()) < 1e-15);
        assert!(control_unitary(&PulseTrain::zero(), 0).is_err());
    }

    #[test]
    fn quarter_turn_area_gives_minus_i_sigma_x() {
        let mut train = PulseTrain::zero();
        let area_per_amp = train.width() * PI.sqrt();
        train.amplitudes[0][2] = (PI / 2.0) / area_per_amp;
        let u = control_unitary(&train, 2000).unwrap();
        let expected = Mat2::pauli(1).scale(-I);
        assert!(u.max_abs_diff(&expected) < 1e-6, "{:?}", u);
    }

    #[test]
    fn doubling_steps_converges() {
        let train = PulseTrain::new([80.0, -95.0, 33.0, 100.0, -7.0], [-60.0, 12.0, 99.0, -100.0, 45.0])
            .unwrap();
        let a = control_unitary(&train, 2000).unwrap();
        let b = control_unitary(&train, 4000).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-6);
        assert!(a.unitarity_error() < 1e-12);
    }

    #[test]
    fn reversing_single_axis_field_inverts() {
        let x = [50.0, -20.0, 70.0, 5.0, -90.0];
        let fwd = control_unitary(&PulseTrain::new(x, [0.0; 5]).unwrap(), 2000).unwrap();
        let back = control_unitary(&PulseTrain::new(x.map(|v| -v), [0.0; 5]).unwrap(), 2000).unwrap();
        assert!(back.max_abs_diff(&fwd.adjoint()) < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let train = PulseTrain::new([30.0, -45.0, 12.0, 60.0, -8.0], [-20.0, 5.0, 40.0, -33.0, 18.0])
            .unwrap();
        let steps = 400;
        let (u, jac) = control_unitary_jacobian(&train, steps).unwrap();
        assert!(u.max_abs_diff(&control_unitary(&train, steps).unwrap()) < 1e-14);
        let h = 1e-5;
        for j in 0..INPUT_DIM {
            let mut flat = train.flat();
            flat[j] += h;
            let up = control_unitary(&PulseTrain::from_flat(&flat).unwrap(), steps).unwrap();
            flat[j] -= 2.0 * h;
            let dn = control_unitary(&PulseTrain::from_flat(&flat).unwrap(), steps).unwrap();
            let fd = (up - dn).scale_re(0.5 / h);
            let err = fd.max_abs_diff(&jac[j]);
            assert!(err < 1e-5 * jac[j].max_abs().max(1e-3), "j={j} err={err}");
        }
    }

    #[test]
    fn noiseless_vo_is_identity() {
        let z = assemble_vo(&VOParams { mu: 1.0, theta: 0.0, psi: 0.0, delta: 0.0 }, 2).unwrap();
        assert!(z.max_abs_diff(&Mat2::identity()) < 1e-15);
        for o in 0..3 {
            let v = assemble_vo(&VOParams::noiseless(o), o).unwrap();
            assert!(v.max_abs_diff(&Mat2::identity()) < 1e-15, "observable {o}");
        }
    }

    #[test]
    fn fully_decohered_vo_vanishes() {
        for o in 0..3 {
            let v = assemble_vo(&VOParams { mu: 0.0, theta: 0.4, psi: -1.2, delta: 2.0 }, o).unwrap();
            assert_eq!(v.max_abs(), 0.0);
        }
        assert!(assemble_vo(&VOParams { mu: 1.5, theta: 0.0, psi: 0.0, delta: 0.0 }, 0).is_err());
        assert!(assemble_vo(&VOParams { mu: 0.5, theta: 0.0, psi: 0.0, delta: 0.0 }, 3).is_err());
    }

    #[test]
    fn qdq_has_eigenvalues_plus_minus_mu() {
        let p = VOParams { mu: 0.73, theta: 1.1, psi: -0.4, delta: 2.9 };
        for o in 0..3 {
            let v = assemble_vo(&p, o).unwrap();
            let qdq = observable(o) * v;
            let mut ev = qdq.eigenvalues().map(|z| z.re);
            ev.sort_by(f64::total_cmp);
            assert!((ev[0] + 0.73).abs() < 1e-12 && (ev[1] - 0.73).abs() < 1e-12);
            assert!(v.operator_norm() <= 0.73 + 1e-12);
        }
    }

    #[test]
    fn vo_gradients_match_finite_differences() {
        let p = VOParams { mu: 0.61, theta: 0.37, psi: -1.3, delta: 0.8 };
        let h = 1e-6;
        for o in 0..3 {
            let (_, grads) = assemble_vo_with_grad(&p, o);
            for (i, g) in grads.iter().enumerate() {
                let bump = |d: f64| {
                    let mut q = p;
                    match i {
                        0 => q.mu += d,
                        1 => q.theta += d,
                        2 => q.psi += d,
                        _ => q.delta += d,
                    }
                    assemble_vo_with_grad(&q, o).0
                };
                let fd = (bump(h) - bump(-h)).scale_re(0.5 / h);
                assert!(fd.max_abs_diff(g) < 1e-8, "o={o} i={i}");
            }
        }
    }

    #[test]
    fn expectation_basics() {
        let id = Mat2::identity();
        assert!((expectation(&id, &id, 4, 2) - 1.0).abs() < 1e-15);
        assert!(expectation(&id, &id, 4, 0).abs() < 1e-15);
        assert!((expectation(&id, &id, 1, 0) + 1.0).abs() < 1e-15);
        let u = unitary_from(0.3, 1.9, -2.2);
        let direct = ideal_expectations(&u);
        for p in 0..6 {
            for o in 0..3 {
                assert!((expectation(&id, &u, p, o) - direct.values[p][o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn expectation_unitary_adjoint_matches_fd() {
        let vo = assemble_vo(&VOParams { mu: 0.8, theta: 0.2, psi: 0.5, delta: -0.3 }, 1).unwrap();
        let u = unitary_from(0.7, -0.4, 1.3);
        let b = expectation_unitary_adjoint(&vo, &u, 3, 1);
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..2 {
                for dir in [ONE, I] {
                    let mut du = Mat2::zero();
                    du.0[r][c] = dir;
                    let fd = (expectation(&vo, &(u + du.scale_re(h)), 3, 1)
                        - expectation(&vo, &(u - du.scale_re(h)), 3, 1))
                        / (2.0 * h);
                    let an = du.trace_mul(&b).re;
                    assert!((fd - an).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn identity_channel_chi() {
        let chi = reconstruct_chi(&ideal_expectations(&Mat2::identity()));
        let mut e00 = Mat4::zero();
        e00.0[0][0] = ONE;
        assert!(chi.0.max_abs_diff(&e00) < 1e-15);
        assert!((gate_fidelity(&ideal_expectations(&Mat2::identity()), Gate::I) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn x_channel_chi_is_pauli_projector() {
        let chi = reconstruct_chi(&ideal_expectations(&Mat2::pauli(1)));
        for m in 0..4 {
            for n in 0..4 {
                let expected = if m == 1 && n == 1 { 1.0 } else { 0.0 };
                assert!((chi.0 .0[m][n] - C64::from(expected)).norm() < 1e-15);
            }
        }
        assert!(process_fidelity(&target_chi(Gate::X), &target_chi(Gate::I)).abs() < 1e-15);
    }

    #[test]
    fn target_chi_coefficients() {
        let h = target_chi(Gate::H).0;
        assert!((h.0[1][1].re - 0.5).abs() < 1e-15 && (h.0[1][3].re - 0.5).abs() < 1e-15);
        assert!((h.0[3][3].re - 0.5).abs() < 1e-15 && h.0[0][0].norm() < 1e-15);
        let rx = target_chi(Gate::RxPi4).0;
        let (c, s) = ((PI / 8.0).cos(), (PI / 8.0).sin());
        assert!((rx.0[0][0].re - c * c).abs() < 1e-15);
        assert!((rx.0[1][1].re - s * s).abs() < 1e-15);
        // g = (cos π/8, −i sin π/8, 0, 0) ⇒ χ₀₁ = g₀ conj(g₁) = i c s.
        assert!((rx.0[0][1] - C64::new(0.0, c * s)).norm() < 1e-15);
        for gate in Gate::ALL {
            let chi = target_chi(gate).0;
            assert!((chi.trace() - ONE).norm() < 1e-14);
            assert!((process_fidelity(&target_chi(gate), &target_chi(gate)) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn dephasing_channel_against_z() {
        // Transfer diag(1, 0, 0, 1): only the z component survives.
        let mut e = ExpectationSet::zero();
        e.values[4][2] = 1.0;
        e.values[5][2] = -1.0;
        let f = gate_fidelity(&e, Gate::Z);
        assert!((f - 0.5).abs() < 1e-15);
        // Direct: χ = (e₀e₀ᵀ + e₃e₃ᵀ)/2 against e₃e₃ᵀ.
        let chi = reconstruct_chi(&e).0;
        assert!((chi.0[0][0].re - 0.5).abs() < 1e-15 && (chi.0[3][3].re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fidelity_map_is_exact_linearization() {
        let e = ideal_expectations(&unitary_from(1.0, 0.6, -0.2));
        let mut flat = e.flat();
        flat.iter_mut().enumerate().for_each(|(i, v)| *v *= 0.9 + 0.005 * i as f64);
        let noisy = ExpectationSet::from_flat(&flat);
        for gate in Gate::ALL {
            let direct = process_overlap(&reconstruct_chi(&noisy), &target_chi(gate));
            let lin = FidelityMap::for_gate(gate).evaluate(&flat);
            assert!((direct - lin).abs() < 1e-14, "{gate:?}");
        }
    }

    #[test]
    fn fidelity_equals_transfer_matrix_overlap() {
        // Independent route: F = (1 + Σ R_ab R^target_ab) / 4.
        let u = unitary_from(-0.9, 2.2, 0.4);
        let e = ideal_expectations(&u);
        for gate in Gate::ALL {
            let rt = transfer_block(&ideal_expectations(&gate.unitary()));
            let r = transfer_block(&e);
            let dot: f64 = (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).map(|(a, b)| r[a][b] * rt[a][b]).sum();
            let f = gate_fidelity(&e, gate);
            assert!((f - (1.0 + dot) / 4.0).abs() < 1e-13);
        }
    }
}
