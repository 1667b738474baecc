//! Linear Kalman filter with observation masking and an adaptive,
//! sign-mitigated covariance inflation.
//!
//! The adaptive update compares the innovation actually observed, yyᵀ, with
//! its theoretical covariance Σ_y = R + HPHᵀ. When the observed innovation is
//! larger, the predicted state covariance is inflated by 1/α. The inflation
//! is tempered by γ, the mean absolute sign balance of recent innovations:
//! persistently one-sided innovations (a biased filter) give γ ≈ 1 and let
//! the inflation through, balanced innovations give γ ≈ 0 and suppress it.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest adaptive factor ever applied; bounds the covariance inflation.
pub const MIN_ALPHA: f64 = 1e-12;

pub const DEFAULT_SIGN_WINDOW: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct FilterModel {
    pub phi: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl FilterModel {
    pub fn new(phi: DMatrix<f64>, h: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = phi.nrows();
        let k = h.nrows();
        if phi.ncols() != n || h.ncols() != n || q.shape() != (n, n) || r.shape() != (k, k) {
            return Err(Error::Dimension(format!(
                "phi {:?}, h {:?}, q {:?}, r {:?}",
                phi.shape(),
                h.shape(),
                q.shape(),
                r.shape()
            )));
        }
        Ok(FilterModel { phi, h, q, r })
    }

    pub fn state_dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }
}

/// Which observation dimensions carry a measurement this step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationMask(pub Vec<bool>);

impl ObservationMask {
    pub fn all(k: usize) -> Self {
        ObservationMask(vec![true; k])
    }

    pub fn observed(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter_map(|(i, &o)| o.then_some(i)).collect()
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&o| o)
    }
}

/// How the adaptive factor is tempered.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mitigation {
    /// γ from the innovation-sign history.
    Signs,
    /// γ fixed; 1 is the unmitigated filter, 0 disables adaptation.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    pub step: u64,
    /// Recent innovation signs per observation dimension, newest last.
    pub sign_history: Vec<VecDeque<i8>>,
    pub window: usize,
    pub last_alpha: f64,
    pub last_gamma: f64,
}

impl FilterState {
    pub fn new(x: DVector<f64>, p: DMatrix<f64>, obs_dim: usize, window: usize) -> Self {
        FilterState {
            x,
            p,
            step: 0,
            sign_history: vec![VecDeque::with_capacity(window); obs_dim],
            window: window.max(1),
            last_alpha: 1.0,
            last_gamma: 0.0,
        }
    }

    /// Advances the state in place to the prior of the next step.
    pub fn predict(&mut self, model: &FilterModel) {
        let (x, p) = predict(model, self);
        self.x = x;
        self.p = p;
    }

    fn push_signs(&mut self, observed: &[usize], y: &DVector<f64>) {
        for (row, &dim) in observed.iter().enumerate() {
            let h = &mut self.sign_history[dim];
            if h.len() == self.window {
                h.pop_front();
            }
            h.push_back(sign(y[row]));
        }
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// x⁻ = Φx̂, P⁻ = ΦPΦᵀ + Q.
pub fn predict(model: &FilterModel, state: &FilterState) -> (DVector<f64>, DMatrix<f64>) {
    let x = &model.phi * &state.x;
    let p = &model.phi * &state.p * model.phi.transpose() + &model.q;
    (x, p)
}

/// Observation model restricted to the observed dimensions.
#[derive(Clone, Debug)]
pub struct Reduced {
    pub observed: Vec<usize>,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub z: DVector<f64>,
}

pub fn reduce(model: &FilterModel, z: &DVector<f64>, mask: &ObservationMask) -> Result<Option<Reduced>> {
    if z.len() != model.obs_dim() || mask.0.len() != model.obs_dim() {
        return Err(Error::Dimension(format!(
            "observation of length {} with mask {} for a {}-dimensional model",
            z.len(),
            mask.0.len(),
            model.obs_dim()
        )));
    }
    if mask.is_empty() {
        return Ok(None);
    }
    let observed = mask.observed();
    Ok(Some(Reduced {
        h: model.h.select_rows(&observed),
        r: model.r.select_rows(&observed).select_columns(&observed),
        z: z.select_rows(&observed),
        observed,
    }))
}

/// Innovation y = z − H'x⁻ and its covariance Σ_y = R' + H'P⁻H'ᵀ.
pub fn innovation(reduced: &Reduced, x_prior: &DVector<f64>, p_prior: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let y = &reduced.z - &reduced.h * x_prior;
    let s = &reduced.r + &reduced.h * p_prior * reduced.h.transpose();
    (y, s)
}

/// Adaptive factor from the theoretical and observed innovation covariances.
pub fn adaptive_alpha(sigma_y: &DMatrix<f64>, sigma_y_hat: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let tr_s = sigma_y.trace();
    let tr_hat = sigma_y_hat.trace();
    let tr_r = r.trace();
    if tr_hat < tr_s || tr_hat <= 0.0 {
        return 1.0;
    }
    let denom = tr_hat - tr_r;
    let alpha = if denom > 0.0 { (tr_s - tr_r) / denom } else { tr_s / tr_hat };
    if alpha.is_nan() {
        1.0
    } else {
        alpha.clamp(MIN_ALPHA, 1.0)
    }
}

/// Mean over observed dimensions of |mean recorded innovation sign|.
/// Dimensions without history are skipped; no evidence at all gives 1.
pub fn mitigation_gamma(sign_history: &[VecDeque<i8>], mask: &ObservationMask) -> f64 {
    let mut total = 0.0;
    let mut dims = 0usize;
    for (h, _) in sign_history.iter().zip(&mask.0).filter(|(_, &o)| o) {
        if h.is_empty() {
            continue;
        }
        let s: i32 = h.iter().map(|&v| v as i32).sum();
        total += s.abs() as f64 / h.len() as f64;
        dims += 1;
    }
    if dims == 0 {
        1.0
    } else {
        total / dims as f64
    }
}

fn gain(p: &DMatrix<f64>, reduced: &Reduced) -> Result<DMatrix<f64>> {
    let s = &reduced.h * p * reduced.h.transpose() + &reduced.r;
    let s_inv = match s.clone().cholesky() {
        Some(c) => c.inverse(),
        None => s.try_inverse().ok_or(Error::SingularInnovation)?,
    };
    if s_inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInnovation);
    }
    Ok(p * reduced.h.transpose() * s_inv)
}

/// Joseph-form covariance update (I−KH)P(I−KH)ᵀ + KRKᵀ, symmetrized.
pub fn joseph_update(p: &DMatrix<f64>, k: &DMatrix<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let a = DMatrix::identity(n, n) - k * h;
    let out = &a * p * a.transpose() + k * r * k.transpose();
    (&out + out.transpose()) * 0.5
}

/// Short-form covariance update (I−KH)P. Only used as a cross-check.
pub fn simplified_update(p: &DMatrix<f64>, k: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    (DMatrix::identity(n, n) - k * h) * p
}

fn correct(state: &mut FilterState, reduced: &Reduced, y: &DVector<f64>) -> Result<()> {
    let k = gain(&state.p, reduced)?;
    state.x = &state.x + &k * y;
    state.p = joseph_update(&state.p, &k, &reduced.h, &reduced.r);
    Ok(())
}

/// Classical update of a predicted state. Unobserved dimensions drop their
/// rows of H and rows/columns of R; an empty mask leaves the prediction.
pub fn update_standard(
    model: &FilterModel,
    state: &mut FilterState,
    z: &DVector<f64>,
    mask: &ObservationMask,
) -> Result<()> {
    state.step += 1;
    let Some(reduced) = reduce(model, z, mask)? else {
        return Ok(());
    };
    let (y, _) = innovation(&reduced, &state.x, &state.p);
    state.last_alpha = 1.0;
    state.last_gamma = 0.0;
    correct(state, &reduced, &y)
}

/// Adaptive update of a predicted state.
///
/// α is derived from the current innovation alone (Σ̂_y = yyᵀ), tempered to
/// 1 − γ(1 − α), and the prior covariance is divided by it before the
/// standard gain, state and Joseph covariance updates. The current
/// innovation signs enter the history before γ is computed.
pub fn update_adaptive(
    model: &FilterModel,
    state: &mut FilterState,
    z: &DVector<f64>,
    mask: &ObservationMask,
    mitigation: Mitigation,
) -> Result<()> {
    state.step += 1;
    let Some(reduced) = reduce(model, z, mask)? else {
        return Ok(());
    };
    let (y, sigma_y) = innovation(&reduced, &state.x, &state.p);
    let observed_cov = &y * y.transpose();
    let alpha = adaptive_alpha(&sigma_y, &observed_cov, &reduced.r);
    state.push_signs(&reduced.observed, &y);
    let gamma = match mitigation {
        Mitigation::Signs => mitigation_gamma(&state.sign_history, mask),
        Mitigation::Fixed(g) => g.clamp(0.0, 1.0),
    };
    let tempered = 1.0 - gamma * (1.0 - alpha);
    if tempered != 1.0 {
        state.p /= tempered;
    }
    state.last_alpha = tempered;
    state.last_gamma = gamma;
    correct(state, &reduced, &y)
}
