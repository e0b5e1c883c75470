//! Subspace encoder: estimates the lifted state at time `k` from the `n`
//! past inputs `u[k-n..k]` and the `n + 1` outputs `y[k-n..=k]`.
//!
//! The network input is the concatenation `[u oldest→newest, y oldest→newest]`.
//! The ordering is part of the serialized model and must not change. The
//! encoder is trained jointly with the model; nothing forces it to be the
//! conditional-mean estimator beyond the ℓ2 prediction loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundMlp, Graph, Mlp, Parameters, Tensor, Var};
use crate::data::Series;
use crate::error::{Error, Result};

/// Input concatenation order, recorded with serialized encoders.
pub const WINDOW_ORDER: &str = "u_oldest_first,y_oldest_first";

/// Past data feeding the encoder at time `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LagWindow {
    /// `u[k-n], …, u[k-1]`
    pub u_past: Vec<Vec<f64>>,
    /// `y[k-n], …, y[k]`
    pub y_past: Vec<Vec<f64>>,
}

impl LagWindow {
    pub fn lag(&self) -> usize {
        self.u_past.len()
    }

    /// `[u_past…, y_past…]` flattened oldest-first.
    pub fn flatten(&self) -> Vec<f64> {
        self.u_past
            .iter()
            .chain(&self.y_past)
            .flat_map(|v| v.iter().copied())
            .collect()
    }

    /// Window at `k` read directly from a series.
    pub fn from_series(series: &Series, lag: usize, k: usize) -> Result<Self> {
        if k < lag || k >= series.len() {
            return Err(Error::Data(format!(
                "window at k={k} with lag {lag} does not fit a series of length {}",
                series.len()
            )));
        }
        Ok(LagWindow {
            u_past: (k - lag..k).map(|i| series.u_at(i).to_vec()).collect(),
            y_past: (k - lag..=k).map(|i| series.y_at(i).to_vec()).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    lag: usize,
    n_u: usize,
    n_y: usize,
    order: String,
    net: Mlp,
}

pub fn encoder_input_width(lag: usize, n_u: usize, n_y: usize) -> usize {
    lag * n_u + (lag + 1) * n_y
}

impl Encoder {
    pub fn init<R: Rng + ?Sized>(
        lag: usize,
        n_u: usize,
        n_y: usize,
        n_z: usize,
        hidden: &[usize],
        bypass: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![encoder_input_width(lag, n_u, n_y)];
        widths.extend_from_slice(hidden);
        widths.push(n_z);
        Encoder::from_net(lag, n_u, n_y, Mlp::xavier(&widths, bypass, rng)?)
    }

    pub fn from_net(lag: usize, n_u: usize, n_y: usize, net: Mlp) -> Result<Self> {
        let width = encoder_input_width(lag, n_u, n_y);
        if net.input_dim() != width {
            return Err(Error::Dimension(format!(
                "encoder network takes {} inputs, lag {lag} needs {width}",
                net.input_dim()
            )));
        }
        Ok(Encoder {
            lag,
            n_u,
            n_y,
            order: WINDOW_ORDER.to_string(),
            net,
        })
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn n_z(&self) -> usize {
        self.net.output_dim()
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn order(&self) -> &str {
        &self.order
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn input_width(&self) -> usize {
        encoder_input_width(self.lag, self.n_u, self.n_y)
    }

    fn check_window(&self, w: &LagWindow) -> Result<()> {
        if w.u_past.len() != self.lag || w.y_past.len() != self.lag + 1 {
            return Err(Error::Data(format!(
                "encoder expects {} past inputs and {} past outputs (lag {}), got {} and {}",
                self.lag,
                self.lag + 1,
                self.lag,
                w.u_past.len(),
                w.y_past.len()
            )));
        }
        if w.u_past.iter().any(|u| u.len() != self.n_u) || w.y_past.iter().any(|y| y.len() != self.n_y) {
            return Err(Error::Dimension(format!(
                "window samples must have {} inputs and {} outputs",
                self.n_u, self.n_y
            )));
        }
        Ok(())
    }

    /// Lifted-state estimate for one window.
    pub fn encode(&self, window: &LagWindow) -> Result<Vec<f64>> {
        self.check_window(window)?;
        self.net.eval(&window.flatten())
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str, trainable: bool) -> Result<BoundEncoder> {
        Ok(BoundEncoder {
            net: self.net.bind(g, prefix, trainable)?,
        })
    }

    /// Flattened windows for a batch of start indices, one row per index.
    pub fn batch_input(&self, series: &Series, ks: &[usize]) -> Result<Tensor> {
        let width = self.input_width();
        let mut data = Vec::with_capacity(ks.len() * width);
        for &k in ks {
            if k < self.lag || k >= series.len() {
                return Err(Error::Data(format!(
                    "window at k={k} with lag {} outside series of length {}",
                    self.lag,
                    series.len()
                )));
            }
            for i in k - self.lag..k {
                data.extend_from_slice(series.u_at(i));
            }
            for i in k - self.lag..=k {
                data.extend_from_slice(series.y_at(i));
            }
        }
        Tensor::matrix(ks.len(), width, data)
    }
}

impl Parameters for Encoder {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.net.visit_params(prefix, f)
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.net.visit_params_mut(prefix, f)
    }
}

#[derive(Clone, Debug)]
pub struct BoundEncoder {
    net: BoundMlp,
}

impl BoundEncoder {
    /// `windows` holds one flattened window per row.
    pub fn encode(&self, g: &mut Graph, windows: Var) -> Result<Var> {
        self.net.apply(g, windows)
    }
}

/// Start indices `k` for which a section of `horizon` samples and its
/// encoder window fit inside a series of `len` samples: `lag ≤ k ≤ len − horizon`.
pub fn legal_starts(len: usize, lag: usize, horizon: usize) -> std::ops::Range<usize> {
    let end = (len + 1).saturating_sub(horizon);
    lag..end.max(lag)
}

/// Windows for the given section starts, each paired with its start index.
pub fn build_windows(
    series: &Series,
    lag: usize,
    horizon: usize,
    ks: &[usize],
) -> Result<Vec<(LagWindow, usize)>> {
    let legal = legal_starts(series.len(), lag, horizon);
    ks.iter()
        .map(|&k| {
            if !legal.contains(&k) {
                return Err(Error::Data(format!(
                    "section start {k} outside legal range {}..={} (lag {lag}, horizon {horizon}, {} samples)",
                    legal.start,
                    legal.end as isize - 1,
                    series.len()
                )));
            }
            Ok((LagWindow::from_series(series, lag, k)?, k))
        })
        .collect()
}
