//! User-specific video and hashtag representations and their gradients.

use super::params::OutputParams;
use crate::numerics::{axpy, leaky_relu, leaky_relu_backward, Matrix};

/// A fully connected output layer `φ(W x + W_u u + b)` with its cached
/// pre-activation.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputState {
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

fn forward(w: &Matrix, w_user: &Matrix, b: &Matrix, x: &[f64], user: &[f64], slope: f64) -> OutputState {
    let mut pre = w.mul_vec(x);
    w_user.mul_vec_add(user, &mut pre);
    axpy(1.0, b.data(), &mut pre);
    let out = leaky_relu(&pre, slope);
    OutputState { pre, out }
}

/// `v̄ = φ(W_v 𝐯ₖ + W_uv 𝐮ᵢ + 𝐛_v)`.
pub fn video_forward(p: &OutputParams, feature: &[f64], user: &[f64], slope: f64) -> OutputState {
    forward(&p.video_weight, &p.video_user, &p.video_bias, feature, user, slope)
}

/// `h̄ = φ(W_h 𝐡ⱼ + W_uh 𝐮ᵢ + 𝐛_h)`.
pub fn hashtag_forward(p: &OutputParams, hashtag: &[f64], user: &[f64], slope: f64) -> OutputState {
    forward(
        &p.hashtag_weight,
        &p.hashtag_user,
        &p.hashtag_bias,
        hashtag,
        user,
        slope,
    )
}

/// Accumulates parameter gradients for `v̄` and adds `∂L/∂𝐮ᵢ` into `d_user`.
#[allow(clippy::too_many_arguments)]
pub fn video_backward(
    p: &OutputParams,
    state: &OutputState,
    feature: &[f64],
    user: &[f64],
    upstream: &[f64],
    slope: f64,
    grad: &mut OutputParams,
    d_user: &mut [f64],
) {
    let d_pre = leaky_relu_backward(&state.pre, upstream, slope);
    grad.video_weight.add_outer(1.0, &d_pre, feature);
    grad.video_user.add_outer(1.0, &d_pre, user);
    axpy(1.0, &d_pre, grad.video_bias.data_mut());
    p.video_user.mul_vec_t_add(&d_pre, d_user);
}

/// Accumulates parameter gradients for `h̄`, adding `∂L/∂𝐮ᵢ` into `d_user`
/// and `∂L/∂𝐡ⱼ` into `d_hashtag`.
#[allow(clippy::too_many_arguments)]
pub fn hashtag_backward(
    p: &OutputParams,
    state: &OutputState,
    hashtag: &[f64],
    user: &[f64],
    upstream: &[f64],
    slope: f64,
    grad: &mut OutputParams,
    d_user: &mut [f64],
    d_hashtag: &mut [f64],
) {
    let d_pre = leaky_relu_backward(&state.pre, upstream, slope);
    grad.hashtag_weight.add_outer(1.0, &d_pre, hashtag);
    grad.hashtag_user.add_outer(1.0, &d_pre, user);
    axpy(1.0, &d_pre, grad.hashtag_bias.data_mut());
    p.hashtag_user.mul_vec_t_add(&d_pre, d_user);
    p.hashtag_weight.mul_vec_t_add(&d_pre, d_hashtag);
}
