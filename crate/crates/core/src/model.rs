//! Lifted Koopman model with input and innovation channels:
//!
//! ```text
//! z⁺ = A z + B(·) u + K(·) e
//! y  = C z + e
//! ```
//!
//! `B` and `K` are matrix-valued functions of selectable structure. All
//! evaluation goes through the [`Graph`] so the same code serves training
//! (batched, differentiable) and plain numeric use (batch of one, constants).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundMlp, Graph, Mlp, Parameters, Tensor, Var};
use crate::error::{Error, Result};

/// Dependency structure of a matrix function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    /// Constant matrix.
    Linear,
    /// `M₀ + Σᵢ Mᵢ zᵢ`
    Bilinear,
    /// Network of `z`.
    InputAffine,
    /// Network of `(z, u)` for `B`, `(z, u, e)` for `K`.
    General,
    /// Channel absent; only valid for `K`.
    None,
}

impl StructureKind {
    pub const ALL: [StructureKind; 5] = [
        StructureKind::Linear,
        StructureKind::Bilinear,
        StructureKind::InputAffine,
        StructureKind::General,
        StructureKind::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StructureKind::Linear => "linear",
            StructureKind::Bilinear => "bilinear",
            StructureKind::InputAffine => "input_affine",
            StructureKind::General => "general",
            StructureKind::None => "none",
        }
    }
}

impl std::str::FromStr for StructureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "linear" => Ok(StructureKind::Linear),
            "bilinear" => Ok(StructureKind::Bilinear),
            "input_affine" | "affine" => Ok(StructureKind::InputAffine),
            "general" => Ok(StructureKind::General),
            "none" => Ok(StructureKind::None),
            other => Err(Error::Config(format!("unknown structure kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for StructureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Matrix-valued function producing an `n_z × cols` matrix, where `cols` is
/// `n_u` for the input channel and `n_y` for the innovation channel. Network
/// outputs are reshaped row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixFunction {
    None,
    Linear {
        matrix: Tensor,
    },
    Bilinear {
        /// `n_z × cols`
        offset: Tensor,
        /// Row `i` holds the flattened `Mᵢ`; shape `n_z × (n_z·cols)`.
        slopes: Tensor,
    },
    InputAffine {
        net: Mlp,
    },
    General {
        net: Mlp,
    },
}

impl MatrixFunction {
    pub fn kind(&self) -> StructureKind {
        match self {
            MatrixFunction::None => StructureKind::None,
            MatrixFunction::Linear { .. } => StructureKind::Linear,
            MatrixFunction::Bilinear { .. } => StructureKind::Bilinear,
            MatrixFunction::InputAffine { .. } => StructureKind::InputAffine,
            MatrixFunction::General { .. } => StructureKind::General,
        }
    }

    /// Randomly initialized function. `general_extra` is the width of the
    /// arguments beyond `z` for the general structure.
    fn init<R: Rng + ?Sized>(
        kind: StructureKind,
        n_z: usize,
        cols: usize,
        general_extra: usize,
        hidden: &[usize],
        bypass: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let flat = n_z * cols;
        let net_widths = |input: usize| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(flat);
            w
        };
        Ok(match kind {
            StructureKind::None => MatrixFunction::None,
            StructureKind::Linear => MatrixFunction::Linear {
                matrix: xavier(n_z, cols, rng),
            },
            StructureKind::Bilinear => {
                let offset = xavier(n_z, cols, rng);
                let slopes = xavier(n_z, flat, rng);
                MatrixFunction::Bilinear { offset, slopes }
            }
            StructureKind::InputAffine => MatrixFunction::InputAffine {
                net: Mlp::xavier(&net_widths(n_z), bypass, rng)?,
            },
            StructureKind::General => MatrixFunction::General {
                net: Mlp::xavier(&net_widths(n_z + general_extra), bypass, rng)?,
            },
        })
    }

    /// Multiplies the state-dependent part by `factor`: bilinear slopes and
    /// the output layer of networks. Constant structures are unchanged.
    fn scale_dependent(&mut self, factor: f64) {
        match self {
            MatrixFunction::None | MatrixFunction::Linear { .. } => {}
            MatrixFunction::Bilinear { slopes, .. } => {
                slopes.data_mut().iter_mut().for_each(|v| *v *= factor)
            }
            MatrixFunction::InputAffine { net } | MatrixFunction::General { net } => {
                net.scale_output(factor)
            }
        }
    }

    /// Multiplies the whole function by `factor`.
    fn scale_output(&mut self, factor: f64) {
        match self {
            MatrixFunction::None => {}
            MatrixFunction::Linear { matrix } => matrix.data_mut().iter_mut().for_each(|v| *v *= factor),
            MatrixFunction::Bilinear { offset, slopes } => {
                for t in [offset, slopes] {
                    t.data_mut().iter_mut().for_each(|v| *v *= factor);
                }
            }
            MatrixFunction::InputAffine { net } | MatrixFunction::General { net } => {
                net.scale_output(factor)
            }
        }
    }

    fn check(&self, what: &str, n_z: usize, cols: usize, general_in: usize) -> Result<()> {
        let bad = |d: String| Err(Error::Dimension(format!("{what}: {d}")));
        match self {
            MatrixFunction::None => Ok(()),
            MatrixFunction::Linear { matrix } => {
                if matrix.shape() != [n_z, cols] {
                    return bad(format!("matrix {:?}, expected [{n_z}, {cols}]", matrix.shape()));
                }
                Ok(())
            }
            MatrixFunction::Bilinear { offset, slopes } => {
                if offset.shape() != [n_z, cols] || slopes.shape() != [n_z, n_z * cols] {
                    return bad(format!(
                        "bilinear offset {:?} / slopes {:?} for n_z={n_z}, cols={cols}",
                        offset.shape(),
                        slopes.shape()
                    ));
                }
                Ok(())
            }
            MatrixFunction::InputAffine { net } | MatrixFunction::General { net } => {
                let input = if self.kind() == StructureKind::General {
                    general_in
                } else {
                    n_z
                };
                if net.input_dim() != input || net.output_dim() != n_z * cols {
                    return bad(format!(
                        "network {:?}, expected input {input} and output {}",
                        net.widths(),
                        n_z * cols
                    ));
                }
                Ok(())
            }
        }
    }

    fn bind(&self, g: &mut Graph, prefix: &str, trainable: bool) -> Result<BoundFunction> {
        let leaf = |g: &mut Graph, name: &str, t: &Tensor| -> Result<Var> {
            if trainable {
                g.param(&format!("{prefix}{name}"), t.clone())
            } else {
                Ok(g.constant(t.clone()))
            }
        };
        Ok(match self {
            MatrixFunction::None => BoundFunction::None,
            MatrixFunction::Linear { matrix } => {
                let m = leaf(g, "matrix", matrix)?;
                BoundFunction::Linear(g.transpose(m)?)
            }
            MatrixFunction::Bilinear { offset, slopes } => {
                let o = leaf(g, "offset", offset)?;
                let s = leaf(g, "slopes", slopes)?;
                let flat_o = g.reshape(o, &[1, offset.len()])?;
                BoundFunction::Bilinear {
                    offset: flat_o,
                    slopes: s,
                }
            }
            MatrixFunction::InputAffine { net } => {
                BoundFunction::InputAffine(net.bind(g, &format!("{prefix}net."), trainable)?)
            }
            MatrixFunction::General { net } => {
                BoundFunction::General(net.bind(g, &format!("{prefix}net."), trainable)?)
            }
        })
    }
}

impl Parameters for MatrixFunction {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        match self {
            MatrixFunction::None => {}
            MatrixFunction::Linear { matrix } => f(&format!("{prefix}matrix"), matrix),
            MatrixFunction::Bilinear { offset, slopes } => {
                f(&format!("{prefix}offset"), offset);
                f(&format!("{prefix}slopes"), slopes);
            }
            MatrixFunction::InputAffine { net } | MatrixFunction::General { net } => {
                net.visit_params(&format!("{prefix}net."), f)
            }
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            MatrixFunction::None => {}
            MatrixFunction::Linear { matrix } => f(&format!("{prefix}matrix"), matrix),
            MatrixFunction::Bilinear { offset, slopes } => {
                f(&format!("{prefix}offset"), offset);
                f(&format!("{prefix}slopes"), slopes);
            }
            MatrixFunction::InputAffine { net } | MatrixFunction::General { net } => {
                net.visit_params_mut(&format!("{prefix}net."), f)
            }
        }
    }
}

#[derive(Clone, Debug)]
enum BoundFunction {
    None,
    /// Transposed matrix, `cols × n_z`.
    Linear(Var),
    Bilinear { offset: Var, slopes: Var },
    InputAffine(BoundMlp),
    General(BoundMlp),
}

impl BoundFunction {
    /// `M(args) · factor`, batched over rows. `general_args` are the inputs
    /// of the general structure (already concatenated).
    fn apply(
        &self,
        g: &mut Graph,
        z: Var,
        general_args: impl FnOnce(&mut Graph) -> Result<Var>,
        factor: Var,
    ) -> Result<Option<Var>> {
        let out = match self {
            BoundFunction::None => return Ok(None),
            BoundFunction::Linear(mt) => g.matmul(factor, *mt)?,
            BoundFunction::Bilinear { offset, slopes } => {
                let zs = g.matmul(z, *slopes)?;
                let flat = g.add_row(zs, *offset)?;
                g.row_matvec(flat, factor)?
            }
            BoundFunction::InputAffine(net) => {
                let flat = net.apply(g, z)?;
                g.row_matvec(flat, factor)?
            }
            BoundFunction::General(net) => {
                let args = general_args(g)?;
                let flat = net.apply(g, args)?;
                g.row_matvec(flat, factor)?
            }
        };
        Ok(Some(out))
    }
}

/// Sizes and structure choices for a freshly initialized model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_z: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub b_kind: StructureKind,
    pub k_kind: StructureKind,
    pub b_hidden: Vec<usize>,
    pub k_hidden: Vec<usize>,
    pub bypass: bool,
    pub c_identity: bool,
    /// Spectral radius of the initial `A`.
    pub a_radius: f64,
    /// Factor on the initial state-dependent part of `B`: bilinear slopes,
    /// and output layer plus bypass of network structures.
    pub b_init_scale: f64,
    /// Factor on the whole initial `K`.
    pub k_init_scale: f64,
}

impl ModelConfig {
    pub fn new(n_z: usize, n_u: usize, n_y: usize) -> Self {
        ModelConfig {
            n_z,
            n_u,
            n_y,
            b_kind: StructureKind::Linear,
            k_kind: StructureKind::None,
            b_hidden: vec![40],
            k_hidden: vec![80],
            bypass: true,
            c_identity: false,
            a_radius: 0.95,
            b_init_scale: 0.1,
            k_init_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KoopmanModel {
    n_z: usize,
    n_u: usize,
    n_y: usize,
    /// `n_z × n_z`
    pub a: Tensor,
    /// `n_y × n_z`
    pub c: Tensor,
    /// `C` fixed to `[I 0]` and excluded from training.
    pub c_identity: bool,
    pub b: MatrixFunction,
    pub k: MatrixFunction,
}

fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::matrix(rows, cols, data).expect("finite")
}

/// `[I 0]` of shape `n_y × n_z`.
pub fn identity_output(n_y: usize, n_z: usize) -> Tensor {
    let mut c = Tensor::zeros(&[n_y, n_z]);
    for i in 0..n_y.min(n_z) {
        c.data_mut()[i * n_z + i] = 1.0;
    }
    c
}

/// Random orthogonal matrix scaled to the given spectral radius.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> Tensor {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q() * radius;
    // nalgebra is column-major; emit row-major
    let data = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect();
    Tensor::matrix(n, n, data).expect("finite")
}

impl KoopmanModel {
    /// Fresh model: `A` random orthogonal scaled to `a_radius`, everything
    /// else Xavier-initialized.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let ModelConfig { n_z, n_u, n_y, .. } = *cfg;
        if n_z == 0 || n_u == 0 || n_y == 0 {
            return Err(Error::Config(format!(
                "dimensions must be positive: n_z={n_z}, n_u={n_u}, n_y={n_y}"
            )));
        }
        if cfg.b_kind == StructureKind::None {
            return Err(Error::Config("the input function B cannot be `none`".into()));
        }
        if cfg.c_identity && n_y > n_z {
            return Err(Error::Config(format!("C = [I 0] needs n_y ≤ n_z ({n_y} > {n_z})")));
        }
        let a = random_orthogonal(n_z, cfg.a_radius, rng);
        let c = if cfg.c_identity {
            identity_output(n_y, n_z)
        } else {
            xavier(n_y, n_z, rng)
        };
        let mut b = MatrixFunction::init(cfg.b_kind, n_z, n_u, n_u, &cfg.b_hidden, cfg.bypass, rng)?;
        b.scale_dependent(cfg.b_init_scale);
        let mut k = MatrixFunction::init(
            cfg.k_kind,
            n_z,
            n_y,
            n_u + n_y,
            &cfg.k_hidden,
            cfg.bypass,
            rng,
        )?;
        k.scale_output(cfg.k_init_scale);
        KoopmanModel::from_parts(a, c, cfg.c_identity, b, k, n_u)
    }

    /// Assembles a model from explicit parameters, checking every dimension.
    pub fn from_parts(
        a: Tensor,
        c: Tensor,
        c_identity: bool,
        b: MatrixFunction,
        k: MatrixFunction,
        n_u: usize,
    ) -> Result<Self> {
        let n_z = a.rows();
        if a.shape() != [n_z, n_z] || n_z == 0 {
            return Err(Error::Dimension(format!("A must be square, got {:?}", a.shape())));
        }
        if c.shape().len() != 2 || c.cols() != n_z {
            return Err(Error::Dimension(format!(
                "C must be n_y × {n_z}, got {:?}",
                c.shape()
            )));
        }
        let n_y = c.rows();
        if b.kind() == StructureKind::None {
            return Err(Error::Config("the input function B cannot be `none`".into()));
        }
        if c_identity && c != identity_output(n_y, n_z) {
            return Err(Error::Config("c_identity set but C is not [I 0]".into()));
        }
        b.check("B", n_z, n_u, n_z + n_u)?;
        k.check("K", n_z, n_y, n_z + n_u + n_y)?;
        Ok(KoopmanModel {
            n_z,
            n_u,
            n_y,
            a,
            c,
            c_identity,
            b,
            k,
        })
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn b_kind(&self) -> StructureKind {
        self.b.kind()
    }

    pub fn k_kind(&self) -> StructureKind {
        self.k.kind()
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.len());
        n
    }

    /// Registers the parameters in `g` under `prefix` (as constants unless
    /// `trainable`). A frozen `C` is always a constant.
    pub fn bind(&self, g: &mut Graph, prefix: &str, trainable: bool) -> Result<BoundModel> {
        let a = if trainable {
            g.param(&format!("{prefix}A"), self.a.clone())?
        } else {
            g.constant(self.a.clone())
        };
        let c = if trainable && !self.c_identity {
            g.param(&format!("{prefix}C"), self.c.clone())?
        } else {
            g.constant(self.c.clone())
        };
        Ok(BoundModel {
            n_z: self.n_z,
            n_u: self.n_u,
            n_y: self.n_y,
            a_t: g.transpose(a)?,
            c_t: g.transpose(c)?,
            b: self.b.bind(g, &format!("{prefix}B."), trainable)?,
            k: self.k.bind(g, &format!("{prefix}K."), trainable)?,
        })
    }

    fn check_vec(&self, what: &str, v: &[f64], n: usize) -> Result<()> {
        if v.len() != n {
            return Err(Error::Dimension(format!("{what} has length {}, expected {n}", v.len())));
        }
        Ok(())
    }

    /// `A z + B(z,u) u + K(z,u,e) e`
    pub fn step(&self, z: &[f64], u: &[f64], e: &[f64]) -> Result<Vec<f64>> {
        self.check_vec("z", z, self.n_z)?;
        self.check_vec("u", u, self.n_u)?;
        self.check_vec("e", e, self.n_y)?;
        let mut g = Graph::new();
        let m = self.bind(&mut g, "", false)?;
        let (zv, uv, ev) = (row(&mut g, z)?, row(&mut g, u)?, row(&mut g, e)?);
        let next = m.step(&mut g, zv, uv, ev)?;
        Ok(g.value(next).data().to_vec())
    }

    /// `C z`
    pub fn output(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_vec("z", z, self.n_z)?;
        let c = &self.c;
        Ok((0..self.n_y)
            .map(|i| c.row(i).iter().zip(z).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// One innovation-form update with a measured output: returns
    /// `(z_next, ŷ, ê)` with `ê = y − C z`.
    pub fn innovation_step(
        &self,
        z: &[f64],
        u: &[f64],
        y: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        self.check_vec("y", y, self.n_y)?;
        let y_hat = self.output(z)?;
        let e: Vec<f64> = y.iter().zip(&y_hat).map(|(a, b)| a - b).collect();
        let next = self.step(z, u, &e)?;
        Ok((next, y_hat, e))
    }

    /// One-step-ahead predictor along a window: output `i` is `C ẑᵢ`, where
    /// `ẑ₀ = z0` and the state is corrected with each measured output.
    pub fn rollout_predictor(
        &self,
        z0: &[f64],
        u_window: &[Vec<f64>],
        y_window: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        if u_window.is_empty() || u_window.len() != y_window.len() {
            return Err(Error::Data(format!(
                "predictor windows must be non-empty and aligned ({} inputs, {} outputs)",
                u_window.len(),
                y_window.len()
            )));
        }
        self.check_vec("z0", z0, self.n_z)?;
        let mut g = Graph::new();
        let m = self.bind(&mut g, "", false)?;
        let mut z = row(&mut g, z0)?;
        let mut out = Vec::with_capacity(u_window.len());
        for (u, y) in u_window.iter().zip(y_window) {
            self.check_vec("u", u, self.n_u)?;
            self.check_vec("y", y, self.n_y)?;
            let (uv, yv) = (row(&mut g, u)?, row(&mut g, y)?);
            let (next, y_hat, _) = m.innovation_step(&mut g, z, uv, yv)?;
            out.push(g.value(y_hat).data().to_vec());
            z = next;
        }
        Ok(out)
    }

    /// Free run with `e ≡ 0`; emits `C z` before each update.
    pub fn simulate(&self, z0: &[f64], u_sequence: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_vec("z0", z0, self.n_z)?;
        let mut g = Graph::new();
        let m = self.bind(&mut g, "", false)?;
        let zero_e = g.constant(Tensor::zeros(&[1, self.n_y]));
        let mut z = row(&mut g, z0)?;
        let mut out = Vec::with_capacity(u_sequence.len());
        for u in u_sequence {
            self.check_vec("u", u, self.n_u)?;
            let uv = row(&mut g, u)?;
            let y = m.output(&mut g, z)?;
            out.push(g.value(y).data().to_vec());
            z = m.step(&mut g, z, uv, zero_e)?;
        }
        Ok(out)
    }
}

impl Parameters for KoopmanModel {
    /// Trainable parameters only: a frozen `C` is skipped.
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}A"), &self.a);
        if !self.c_identity {
            f(&format!("{prefix}C"), &self.c);
        }
        self.b.visit_params(&format!("{prefix}B."), f);
        self.k.visit_params(&format!("{prefix}K."), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}A"), &mut self.a);
        if !self.c_identity {
            f(&format!("{prefix}C"), &mut self.c);
        }
        self.b.visit_params_mut(&format!("{prefix}B."), f);
        self.k.visit_params_mut(&format!("{prefix}K."), f);
    }
}

fn row(g: &mut Graph, v: &[f64]) -> Result<Var> {
    Ok(g.constant(Tensor::matrix(1, v.len(), v.to_vec())?))
}

/// Model parameters registered in a graph; operates on batches whose rows
/// are independent trajectories.
#[derive(Clone, Debug)]
pub struct BoundModel {
    n_z: usize,
    n_u: usize,
    n_y: usize,
    a_t: Var,
    c_t: Var,
    b: BoundFunction,
    k: BoundFunction,
}

impl BoundModel {
    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn output(&self, g: &mut Graph, z: Var) -> Result<Var> {
        g.matmul(z, self.c_t)
    }

    pub fn step(&self, g: &mut Graph, z: Var, u: Var, e: Var) -> Result<Var> {
        let mut next = g.matmul(z, self.a_t)?;
        if let Some(bu) = self.b.apply(g, z, |g| g.concat_cols(&[z, u]), u)? {
            next = g.add(next, bu)?;
        }
        if let Some(ke) = self.k.apply(g, z, |g| g.concat_cols(&[z, u, e]), e)? {
            next = g.add(next, ke)?;
        }
        Ok(next)
    }

    /// Returns `(z_next, ŷ, ê)`.
    pub fn innovation_step(&self, g: &mut Graph, z: Var, u: Var, y: Var) -> Result<(Var, Var, Var)> {
        let y_hat = self.output(g, z)?;
        let e = g.sub(y, y_hat)?;
        let next = self.step(g, z, u, e)?;
        Ok((next, y_hat, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    fn model(b: StructureKind, k: StructureKind, seed: u64) -> KoopmanModel {
        let mut cfg = ModelConfig::new(3, 2, 2);
        cfg.b_kind = b;
        cfg.k_kind = k;
        cfg.b_hidden = vec![5];
        cfg.k_hidden = vec![5];
        KoopmanModel::init(&cfg, &mut rng(seed)).unwrap()
    }

    fn matvec(m: &Tensor, v: &[f64]) -> Vec<f64> {
        (0..m.rows())
            .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    #[test]
    fn origin_maps_to_origin() {
        for b in [StructureKind::Linear, StructureKind::Bilinear, StructureKind::InputAffine, StructureKind::General] {
            for k in StructureKind::ALL {
                let m = model(b, k, 3);
                let next = m.step(&[0.0; 3], &[0.0; 2], &[0.0; 2]).unwrap();
                assert!(next.iter().all(|v| *v == 0.0), "{b:?}/{k:?}");
            }
        }
    }

    #[test]
    fn linear_step_matches_matrix_arithmetic() {
        let m = model(StructureKind::Linear, StructureKind::None, 1);
        let mut r = rng(7);
        let (z, u) = (random_vec(&mut r, 3), random_vec(&mut r, 2));
        let got = m.step(&z, &u, &[5.0, 5.0]).unwrap();
        let MatrixFunction::Linear { matrix } = &m.b else { panic!() };
        let az = matvec(&m.a, &z);
        let bu = matvec(matrix, &u);
        for i in 0..3 {
            assert!((got[i] - az[i] - bu[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn bilinear_step_matches_loop_expansion() {
        let m = model(StructureKind::Bilinear, StructureKind::None, 2);
        let mut r = rng(8);
        let (z, u) = (random_vec(&mut r, 3), random_vec(&mut r, 2));
        let got = m.step(&z, &u, &[0.0, 0.0]).unwrap();
        let MatrixFunction::Bilinear { offset, slopes } = &m.b else { panic!() };
        let mut expect = matvec(&m.a, &z);
        for i in 0..3 {
            for j in 0..2 {
                let mut coeff = offset.get(i, j);
                for (l, zl) in z.iter().enumerate() {
                    coeff += slopes.get(l, i * 2 + j) * zl;
                }
                expect[i] += coeff * u[j];
            }
        }
        for i in 0..3 {
            assert!((got[i] - expect[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_output_block() {
        let mut cfg = ModelConfig::new(3, 1, 2);
        cfg.c_identity = true;
        let m = KoopmanModel::init(&cfg, &mut rng(0)).unwrap();
        assert_eq!(m.output(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(m.output(&[0.0; 3]).unwrap(), vec![0.0, 0.0]);
        let mut names = vec![];
        m.visit_params("", &mut |n, _| names.push(n.to_string()));
        assert!(!names.contains(&"C".to_string()));
    }

    #[test]
    fn output_matches_dot_products() {
        let m = model(StructureKind::Linear, StructureKind::Linear, 4);
        let z = [0.3, -1.2, 2.0];
        let y = m.output(&z).unwrap();
        for i in 0..2 {
            let mut s = 0.0;
            for j in 0..3 {
                s += m.c.get(i, j) * z[j];
            }
            assert!((y[i] - s).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_innovation_reduces_to_step() {
        let m = model(StructureKind::General, StructureKind::General, 5);
        let z = [0.1, 0.2, -0.3];
        let u = [0.5, -0.5];
        let y = m.output(&z).unwrap();
        let (next, y_hat, e) = m.innovation_step(&z, &u, &y).unwrap();
        assert_eq!(y_hat, y);
        assert!(e.iter().all(|v| *v == 0.0));
        assert_eq!(next, m.step(&z, &u, &[0.0, 0.0]).unwrap());
    }

    #[test]
    fn no_innovation_channel_ignores_measurement() {
        let m = model(StructureKind::InputAffine, StructureKind::None, 6);
        let z = [0.1, 0.2, -0.3];
        let u = [0.5, -0.5];
        let a = m.innovation_step(&z, &u, &[1.0, 2.0]).unwrap().0;
        let b = m.innovation_step(&z, &u, &[-4.0, 9.0]).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn linear_innovation_matches_closed_loop_matrices() {
        let m = model(StructureKind::Linear, StructureKind::Linear, 7);
        let mut r = rng(9);
        let (z, u, y) = (random_vec(&mut r, 3), random_vec(&mut r, 2), random_vec(&mut r, 2));
        let (next, _, _) = m.innovation_step(&z, &u, &y).unwrap();
        let MatrixFunction::Linear { matrix: b } = &m.b else { panic!() };
        let MatrixFunction::Linear { matrix: k } = &m.k else { panic!() };
        // (A − K C) z + B u + K y
        let cz = matvec(&m.c, &z);
        let kcz = matvec(k, &cz);
        let az = matvec(&m.a, &z);
        let bu = matvec(b, &u);
        let ky = matvec(k, &y);
        for i in 0..3 {
            let expect = az[i] - kcz[i] + bu[i] + ky[i];
            assert!((next[i] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn rollout_reproduces_self_generated_data() {
        let m = model(StructureKind::General, StructureKind::Linear, 10);
        let mut r = rng(11);
        let z0 = random_vec(&mut r, 3);
        let us: Vec<Vec<f64>> = (0..20).map(|_| random_vec(&mut r, 2)).collect();
        // noiseless data from the model itself
        let ys = m.simulate(&z0, &us).unwrap();
        let pred = m.rollout_predictor(&z0, &us, &ys).unwrap();
        for (p, y) in pred.iter().zip(&ys) {
            for (a, b) in p.iter().zip(y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let single = m.rollout_predictor(&z0, &us[..1], &ys[..1]).unwrap();
        assert_eq!(single[0], m.output(&z0).unwrap());
    }

    #[test]
    fn rollout_without_innovation_is_simulation() {
        let m = model(StructureKind::Bilinear, StructureKind::None, 12);
        let mut r = rng(13);
        let z0 = random_vec(&mut r, 3);
        let us: Vec<Vec<f64>> = (0..15).map(|_| random_vec(&mut r, 2)).collect();
        let ys: Vec<Vec<f64>> = (0..15).map(|_| random_vec(&mut r, 2)).collect();
        assert_eq!(m.rollout_predictor(&z0, &us, &ys).unwrap(), m.simulate(&z0, &us).unwrap());
        assert!(m.rollout_predictor(&z0, &[], &[]).is_err());
    }

    #[test]
    fn simulate_one_step_memory() {
        // A = 0, C = I: y_k = B u_{k-1}
        let b = Tensor::matrix(2, 1, vec![2.0, -1.0]).unwrap();
        let m = KoopmanModel::from_parts(
            Tensor::zeros(&[2, 2]),
            Tensor::identity(2),
            true,
            MatrixFunction::Linear { matrix: b },
            MatrixFunction::None,
            1,
        )
        .unwrap();
        let us = vec![vec![1.0], vec![3.0], vec![-2.0]];
        let ys = m.simulate(&[0.0, 0.0], &us).unwrap();
        assert_eq!(ys, vec![vec![0.0, 0.0], vec![2.0, -1.0], vec![6.0, -3.0]]);
        let zero = m.simulate(&[0.0, 0.0], &vec![vec![0.0]; 5]).unwrap();
        assert!(zero.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_errors() {
        let m = model(StructureKind::Linear, StructureKind::None, 0);
        assert!(m.step(&[0.0; 2], &[0.0; 2], &[0.0; 2]).is_err());
        assert!(m.output(&[0.0; 4]).is_err());
        assert!(m.innovation_step(&[0.0; 3], &[0.0; 2], &[0.0]).is_err());
        let mut cfg = ModelConfig::new(3, 1, 1);
        cfg.b_kind = StructureKind::None;
        assert!(KoopmanModel::init(&cfg, &mut rng(0)).is_err());
    }

    #[test]
    fn initial_a_has_requested_radius() {
        let a = random_orthogonal(6, 0.95, &mut rng(3));
        let m = DMatrix::from_row_slice(6, 6, a.data());
        let rho = m
            .complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        assert!((rho - 0.95).abs() < 1e-9);
    }
}
