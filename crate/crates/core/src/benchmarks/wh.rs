//! Wiener-Hammerstein system: LTI block, static cubic nonlinearity, LTI
//! block, with the same innovation `e` entering both blocks and the output.
//!
//! ```text
//! x⁺ = A₁x + B₁u + K₁e        v = C₁x
//! w  = α₀ + α₁v + α₂v² + α₃v³
//! x̄⁺ = A₂x̄ + B₂w + K₂e        y = C₂x̄ + e
//! ```
//!
//! [`WhEmbedding`] is its exact finite-dimensional Koopman form on the
//! observables `[x; x⊗x; x⊗x⊗x; x̄; 1]`, stored with the symmetric Kronecker
//! duplicates merged (2 + 3 + 4 + 2 + 1 = 12 coordinates).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on [`WhSystem::predictor_radius`] for random systems.
pub const MAX_PREDICTOR_RADIUS: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhSystem {
    pub a1: [[f64; 2]; 2],
    pub b1: [f64; 2],
    pub k1: [f64; 2],
    pub c1: [f64; 2],
    pub a2: [[f64; 2]; 2],
    pub b2: [f64; 2],
    pub k2: [f64; 2],
    pub c2: [f64; 2],
    /// `α₀..α₃`
    pub alpha: [f64; 4],
}

/// Joint state of both blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WhState {
    pub x: [f64; 2],
    pub xbar: [f64; 2],
}

fn mat2(m: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

fn vec2(v: &[f64; 2]) -> Vector2<f64> {
    Vector2::new(v[0], v[1])
}

fn spectral_radius2(m: &Matrix2<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    loop {
        let v: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let n = v[0].hypot(v[1]);
        if n > 1e-3 {
            return [v[0] / n, v[1] / n];
        }
    }
}

/// `ρ·R(θ)`: a scaled rotation, so the norm equals the spectral radius and
/// there is no transient growth.
fn random_stable<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 2]; 2] {
    let rho = rng.random_range(0.7..0.9);
    let theta = rng.random_range(std::f64::consts::PI / 8.0..std::f64::consts::PI * 7.0 / 8.0);
    let (s, c) = theta.sin_cos();
    [[rho * c, -rho * s], [rho * s, rho * c]]
}

impl WhSystem {
    /// Random system: both `A` blocks scaled rotations with spectral radius
    /// drawn from `[0.7, 0.9)`, unit-norm `B`, `K` and `C`, and `α = (0, 1, 0.5, 0.25)`.
    /// Draws are repeated until [`WhSystem::predictor_radius`] is below
    /// [`MAX_PREDICTOR_RADIUS`], so that the one-step predictor forgets its
    /// initial state.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let sys = WhSystem::draw(rng);
            if sys.predictor_radius() < MAX_PREDICTOR_RADIUS {
                return sys;
            }
        }
    }

    fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let a1 = random_stable(rng);
        let b1 = random_unit(rng);
        let k1 = random_unit(rng);
        let c1 = random_unit(rng);
        let a2 = random_stable(rng);
        let b2 = random_unit(rng);
        let k2 = random_unit(rng);
        let c2 = random_unit(rng);
        WhSystem {
            a1,
            b1,
            k1,
            c1,
            a2,
            b2,
            k2,
            c2,
            alpha: [0.0, 1.0, 0.5, 0.25],
        }
    }

    /// Spectral radius of the one-step predictor error dynamics linearized
    /// at `v = 0`: `[[A₁, −K₁C₂], [α₁B₂C₁, A₂ − K₂C₂]]`.
    pub fn predictor_radius(&self) -> f64 {
        let a1 = mat2(&self.a1);
        let a2 = mat2(&self.a2);
        let c2 = vec2(&self.c2).transpose();
        let top_right = -vec2(&self.k1) * c2;
        let bottom_left = vec2(&self.b2) * vec2(&self.c1).transpose() * self.alpha[1];
        let bottom_right = a2 - vec2(&self.k2) * c2;
        let mut m = DMatrix::<f64>::zeros(4, 4);
        m.view_mut((0, 0), (2, 2)).copy_from(&a1);
        m.view_mut((0, 2), (2, 2)).copy_from(&top_right);
        m.view_mut((2, 0), (2, 2)).copy_from(&bottom_left);
        m.view_mut((2, 2), (2, 2)).copy_from(&bottom_right);
        m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .a1
            .iter()
            .chain(&self.a2)
            .flatten()
            .chain(&self.b1)
            .chain(&self.k1)
            .chain(&self.c1)
            .chain(&self.b2)
            .chain(&self.k2)
            .chain(&self.c2)
            .chain(&self.alpha);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("system has non-finite coefficients".into()));
        }
        for (name, a) in [("A1", &self.a1), ("A2", &self.a2)] {
            let rho = spectral_radius2(&mat2(a));
            if rho >= 1.0 {
                return Err(Error::Config(format!("{name} is not stable (spectral radius {rho})")));
            }
        }
        Ok(())
    }

    pub fn nonlinearity(&self, v: f64) -> f64 {
        let [a0, a1, a2, a3] = self.alpha;
        a0 + v * (a1 + v * (a2 + v * a3))
    }

    /// One step; returns the next state and the current output.
    pub fn step(&self, s: &WhState, u: f64, e: f64) -> (WhState, f64) {
        let x = vec2(&s.x);
        let xbar = vec2(&s.xbar);
        let v = vec2(&self.c1).dot(&x);
        let w = self.nonlinearity(v);
        let y = vec2(&self.c2).dot(&xbar) + e;
        let xn = mat2(&self.a1) * x + vec2(&self.b1) * u + vec2(&self.k1) * e;
        let xbn = mat2(&self.a2) * xbar + vec2(&self.b2) * w + vec2(&self.k2) * e;
        (
            WhState {
                x: [xn[0], xn[1]],
                xbar: [xbn[0], xbn[1]],
            },
            y,
        )
    }

    /// Output sequence from the zero state.
    pub fn simulate(&self, u: &[f64], e: &[f64]) -> Vec<f64> {
        let mut s = WhState::default();
        u.iter()
            .zip(e)
            .map(|(&uk, &ek)| {
                let (next, y) = self.step(&s, uk, ek);
                s = next;
                y
            })
            .collect()
    }
}

/// Free-function form of [`WhSystem::step`]: returns `(x⁺, x̄⁺, y)`.
pub fn wh_step(
    sys: &WhSystem,
    x: [f64; 2],
    xbar: [f64; 2],
    u: f64,
    e: f64,
) -> ([f64; 2], [f64; 2], f64) {
    let (next, y) = sys.step(&WhState { x, xbar }, u, e);
    (next.x, next.xbar, y)
}

fn dmat2(m: &[[f64; 2]; 2]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, m.as_flattened())
}

fn kron(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.kronecker(b)
}

/// Duplicate-merging maps between `[x; x^(2); x^(3); x̄; 1]` (raw, 17
/// coordinates) and the unique-monomial coordinates (12).
#[derive(Clone, Debug)]
struct Reduction {
    /// raw → reduced, averages duplicate monomials
    left: DMatrix<f64>,
    /// reduced → raw, copies each monomial to all of its slots
    right: DMatrix<f64>,
    labels: Vec<String>,
}

const NX: usize = 2;
const NXBAR: usize = 2;

fn raw_dim() -> usize {
    NX + NX * NX + NX * NX * NX + NXBAR + 1
}

impl Reduction {
    fn new() -> Self {
        // raw slot → reduced index
        let mut slot_to_red: Vec<usize> = Vec::with_capacity(raw_dim());
        let mut labels = Vec::new();
        for i in 0..NX {
            slot_to_red.push(labels.len());
            labels.push(format!("x{}", i + 1));
        }
        for degree in [2usize, 3] {
            let mut seen: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
            for flat in 0..NX.pow(degree as u32) {
                // Kronecker ordering: first factor varies slowest
                let mut idx = Vec::with_capacity(degree);
                let mut rem = flat;
                for d in (0..degree).rev() {
                    let p = NX.pow(d as u32);
                    idx.push(rem / p);
                    rem %= p;
                }
                idx.sort_unstable();
                let red = *seen.entry(idx.clone()).or_insert_with(|| {
                    labels.push(idx.iter().map(|i| format!("x{}", i + 1)).collect::<Vec<_>>().join("*"));
                    labels.len() - 1
                });
                slot_to_red.push(red);
            }
        }
        for i in 0..NXBAR {
            slot_to_red.push(labels.len());
            labels.push(format!("xbar{}", i + 1));
        }
        slot_to_red.push(labels.len());
        labels.push("1".into());

        let (n_raw, n_red) = (slot_to_red.len(), labels.len());
        let mut right = DMatrix::zeros(n_raw, n_red);
        let mut counts = vec![0.0; n_red];
        for (slot, &red) in slot_to_red.iter().enumerate() {
            right[(slot, red)] = 1.0;
            counts[red] += 1.0;
        }
        let mut left = right.transpose();
        for (r, c) in counts.iter().enumerate() {
            left.row_mut(r).scale_mut(1.0 / c);
        }
        Reduction {
            left,
            right,
            labels,
        }
    }
}

/// Exact lifted model of a [`WhSystem`]:
/// `z⁺ = A z + B(z,u) u + K(z,u,e) e`, `y = C z + e`.
#[derive(Clone, Debug)]
pub struct WhEmbedding {
    sys: WhSystem,
    red: Reduction,
    a_raw: DMatrix<f64>,
    a: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl WhEmbedding {
    pub fn new(sys: &WhSystem) -> Result<Self> {
        sys.validate()?;
        let red = Reduction::new();
        let a1 = dmat2(&sys.a1);
        let a2 = dmat2(&sys.a2);
        let c1 = DMatrix::from_row_slice(1, 2, &sys.c1);
        let b2 = DMatrix::from_column_slice(2, 1, &sys.b2);
        let [al0, al1, al2, al3] = sys.alpha;
        let a1_2 = a1.kronecker(&a1);
        let a1_3 = a1_2.kronecker(&a1);
        let c1_2 = c1.kronecker(&c1);
        let c1_3 = c1_2.kronecker(&c1);

        let n = raw_dim();
        let (o1, o2, o3, ob, oc) = (0, NX, NX + 4, NX + 12, NX + 12 + NXBAR);
        let mut a_raw = DMatrix::zeros(n, n);
        a_raw.view_mut((o1, o1), (2, 2)).copy_from(&a1);
        a_raw.view_mut((o2, o2), (4, 4)).copy_from(&a1_2);
        a_raw.view_mut((o3, o3), (8, 8)).copy_from(&a1_3);
        a_raw.view_mut((ob, o1), (2, 2)).copy_from(&(&b2 * &c1 * al1));
        a_raw.view_mut((ob, o2), (2, 4)).copy_from(&(&b2 * &c1_2 * al2));
        a_raw.view_mut((ob, o3), (2, 8)).copy_from(&(&b2 * &c1_3 * al3));
        a_raw.view_mut((ob, ob), (2, 2)).copy_from(&a2);
        a_raw.view_mut((ob, oc), (2, 1)).copy_from(&(&b2 * al0));
        a_raw[(oc, oc)] = 1.0;

        let mut c_raw = DMatrix::zeros(1, n);
        c_raw[(0, ob)] = sys.c2[0];
        c_raw[(0, ob + 1)] = sys.c2[1];

        let a = &red.left * &a_raw * &red.right;
        let c = &c_raw * &red.right;
        Ok(WhEmbedding {
            sys: sys.clone(),
            red,
            a_raw,
            a,
            c,
        })
    }

    pub fn system(&self) -> &WhSystem {
        &self.sys
    }

    /// Lifted dimension (12).
    pub fn n_z(&self) -> usize {
        self.red.labels.len()
    }

    /// Dimension of the redundant Kronecker coordinates (17).
    pub fn raw_dim(&self) -> usize {
        raw_dim()
    }

    pub fn labels(&self) -> &[String] {
        &self.red.labels
    }

    /// Raw → reduced map; an exact left inverse of [`WhEmbedding::expansion`].
    pub fn reduction(&self) -> &DMatrix<f64> {
        &self.red.left
    }

    pub fn expansion(&self) -> &DMatrix<f64> {
        &self.red.right
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn a_raw(&self) -> &DMatrix<f64> {
        &self.a_raw
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn lift_raw(&self, s: &WhState) -> DVector<f64> {
        let x = DVector::from_column_slice(&s.x);
        let x2 = kron(&x, &x);
        let x3 = kron(&x2, &x);
        let mut z = Vec::with_capacity(raw_dim());
        z.extend(x.iter());
        z.extend(x2.iter());
        z.extend(x3.iter());
        z.extend(s.xbar);
        z.push(1.0);
        DVector::from_vec(z)
    }

    pub fn lift(&self, s: &WhState) -> Vec<f64> {
        (&self.red.left * self.lift_raw(s)).as_slice().to_vec()
    }

    /// Reads the physical state back from lifted coordinates.
    pub fn unlift(&self, z: &[f64]) -> WhState {
        WhState {
            x: [z[0], z[1]],
            xbar: [z[NX + 7], z[NX + 8]],
        }
    }

    /// `(p + t v)^(k) − p^(k)` divided by `t`, for `k = 1, 2, 3`, in raw
    /// Kronecker coordinates.
    fn increment(p: &DVector<f64>, v: &DVector<f64>, t: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let d2 = kron(p, v) + kron(v, p) + kron(v, v) * t;
        let pp = kron(p, p);
        let vv = kron(v, v);
        let d3 = kron(v, &pp)
            + kron(&kron(p, v), p)
            + kron(&pp, v)
            + (kron(&vv, p) + kron(&kron(v, p), v) + kron(p, &vv)) * t
            + kron(&vv, v) * (t * t);
        (v.clone(), d2, d3)
    }

    fn assemble(&self, blocks: (DVector<f64>, DVector<f64>, DVector<f64>), xbar_block: [f64; 2]) -> Vec<f64> {
        let (d1, d2, d3) = blocks;
        let mut raw = Vec::with_capacity(raw_dim());
        raw.extend(d1.iter());
        raw.extend(d2.iter());
        raw.extend(d3.iter());
        raw.extend(xbar_block);
        raw.push(0.0);
        (&self.red.left * DVector::from_vec(raw)).as_slice().to_vec()
    }

    fn state_x(z: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(&z[..NX])
    }

    /// Input column `B(z,u)` (length `n_z`).
    pub fn b_matrix(&self, z: &[f64], u: f64) -> Vec<f64> {
        let a1 = dmat2(&self.sys.a1);
        let p = a1 * Self::state_x(z);
        let v = DVector::from_column_slice(&self.sys.b1);
        self.assemble(Self::increment(&p, &v, u), [0.0, 0.0])
    }

    /// Innovation column `K(z,u,e)` (length `n_z`).
    pub fn k_matrix(&self, z: &[f64], u: f64, e: f64) -> Vec<f64> {
        let a1 = dmat2(&self.sys.a1);
        let p = a1 * Self::state_x(z) + DVector::from_column_slice(&self.sys.b1) * u;
        let v = DVector::from_column_slice(&self.sys.k1);
        self.assemble(Self::increment(&p, &v, e), self.sys.k2)
    }

    pub fn step(&self, z: &[f64], u: f64, e: f64) -> Vec<f64> {
        let az = &self.a * DVector::from_column_slice(z);
        let b = self.b_matrix(z, u);
        let k = self.k_matrix(z, u, e);
        (0..self.n_z()).map(|i| az[i] + b[i] * u + k[i] * e).collect()
    }

    /// Deterministic output part `C z`.
    pub fn output(&self, z: &[f64]) -> f64 {
        (&self.c * DVector::from_column_slice(z))[0]
    }
}
