//! Per-node monotone maps: evaluation, derivatives, bisection inverse and
//! the implicit-differentiation gradient of that inverse.

use crate::error::{Error, Result};
use crate::types::NodeMap;

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sigmoid_prime_from(s: f64) -> f64 {
    s * (1.0 - s)
}

pub fn eval_f(map: &NodeMap, y: f64) -> f64 {
    let mut acc = 0.0;
    for j in 0..map.alpha.len() {
        acc += map.alpha[j] * sigmoid(map.w[j] * y - map.k[j]);
    }
    acc + map.b
}

/// Derivative of the map with respect to its input.
pub fn eval_f_prime(map: &NodeMap, y: f64) -> f64 {
    let mut acc = 0.0;
    for j in 0..map.alpha.len() {
        let s = sigmoid(map.w[j] * y - map.k[j]);
        acc += map.alpha[j] * map.w[j] * sigmoid_prime_from(s);
    }
    acc
}

/// Gradient of a scalar quantity with respect to one node map's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGradient {
    pub d_alpha: Vec<f64>,
    pub d_w: Vec<f64>,
    pub d_k: Vec<f64>,
    pub d_b: f64,
}

impl ThetaGradient {
    pub fn zeros(n_units: usize) -> Self {
        Self {
            d_alpha: vec![0.0; n_units],
            d_w: vec![0.0; n_units],
            d_k: vec![0.0; n_units],
            d_b: 0.0,
        }
    }

    pub fn n_units(&self) -> usize {
        self.d_alpha.len()
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, scale: f64, other: &ThetaGradient) {
        for (a, b) in self.d_alpha.iter_mut().zip(&other.d_alpha) {
            *a += scale * b;
        }
        for (a, b) in self.d_w.iter_mut().zip(&other.d_w) {
            *a += scale * b;
        }
        for (a, b) in self.d_k.iter_mut().zip(&other.d_k) {
            *a += scale * b;
        }
        self.d_b += scale * other.d_b;
    }

    pub fn scale(&mut self, factor: f64) {
        self.d_alpha.iter_mut().for_each(|v| *v *= factor);
        self.d_w.iter_mut().for_each(|v| *v *= factor);
        self.d_k.iter_mut().for_each(|v| *v *= factor);
        self.d_b *= factor;
    }

    /// Flattened `[alpha; w; k; b]`, `3M + 1` entries.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.n_units() + 1);
        out.extend_from_slice(&self.d_alpha);
        out.extend_from_slice(&self.d_w);
        out.extend_from_slice(&self.d_k);
        out.push(self.d_b);
        out
    }
}

/// Closed-form partial derivatives of `f(y)` with respect to `(alpha, w, k, b)`.
pub fn grad_f_theta(map: &NodeMap, y: f64) -> ThetaGradient {
    let m = map.n_units();
    let mut g = ThetaGradient::zeros(m);
    for j in 0..m {
        let s = sigmoid(map.w[j] * y - map.k[j]);
        let ds = sigmoid_prime_from(s);
        g.d_alpha[j] = s;
        g.d_w[j] = map.alpha[j] * y * ds;
        g.d_k[j] = -map.alpha[j] * ds;
    }
    g.d_b = 1.0;
    g
}

/// Settings for the bisection inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseOptions {
    /// Residual tolerance relative to the range span. Zero disables the
    /// residual test so bisection runs until the bracket collapses.
    pub tol: f64,
    /// Absolute bracket width at which bisection stops.
    pub x_tol: f64,
    /// Targets are pulled this fraction of the span inside the image.
    pub clamp_margin: f64,
}

pub const DEFAULT_INVERSE_TOL: f64 = 1e-10;
pub const DEFAULT_BRACKET_TOL: f64 = 1e-13;
pub const DEFAULT_CLAMP_MARGIN: f64 = 1e-9;
const MAX_DOUBLINGS: usize = 64;
const MAX_BISECTIONS: usize = 2200;
/// Smallest input slope at which the inverse is still differentiated.
pub const SLOPE_FLOOR: f64 = 1e-12;

impl Default for InverseOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_INVERSE_TOL,
            x_tol: DEFAULT_BRACKET_TOL,
            clamp_margin: DEFAULT_CLAMP_MARGIN,
        }
    }
}

impl InverseOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    /// Runs bisection to the limit of `f64` resolution. Used by the
    /// finite-difference oracles, where inversion noise is divided by the step.
    pub fn exact() -> Self {
        Self {
            tol: 0.0,
            x_tol: 0.0,
            ..Self::default()
        }
    }
}

/// Result of a numerical inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inverse {
    pub y: f64,
    /// Whether the target was outside the clamped image and got pulled inside.
    pub clamped: bool,
}

/// Solves `f(y) = z` by bracket expansion followed by bisection.
///
/// `z` is first clamped into `[lower + d, upper - d]` with
/// `d = clamp_margin * span`, so values on or beyond the image boundary
/// invert to a large but finite latent value.
pub fn invert(map: &NodeMap, z: f64, opts: &InverseOptions) -> Result<Inverse> {
    if !z.is_finite() {
        return Err(Error::Inversion {
            node: None,
            target: z,
            detail: "target is not finite".into(),
        });
    }
    if !(opts.tol >= 0.0 && opts.x_tol >= 0.0 && opts.clamp_margin >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "inverse tolerances must be non-negative: {opts:?}"
        )));
    }
    let slope = map.slope_mass();
    if !(slope > 0.0) {
        return Err(Error::NotMonotone(slope));
    }

    let span = map.range.span();
    let margin = opts.clamp_margin * span;
    let z_c = z.clamp(map.range.lower + margin, map.range.upper - margin);
    let clamped = z_c != z;
    let f_tol = opts.tol * span;

    let mut half = 1.0_f64;
    let mut doublings = 0;
    loop {
        let f_lo = eval_f(map, -half);
        let f_hi = eval_f(map, half);
        if f_lo == z_c {
            return Ok(Inverse { y: -half, clamped });
        }
        if f_hi == z_c {
            return Ok(Inverse { y: half, clamped });
        }
        if f_lo < z_c && z_c < f_hi {
            break;
        }
        if doublings == MAX_DOUBLINGS {
            return Err(Error::Inversion {
                node: None,
                target: z,
                detail: format!(
                    "no bracket after {MAX_DOUBLINGS} doublings (image reaches [{f_lo}, {f_hi}])"
                ),
            });
        }
        half *= 2.0;
        doublings += 1;
    }

    let (mut lo, mut hi) = (-half, half);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = eval_f(map, mid);
        let resid = f_mid - z_c;
        if resid == 0.0 || (f_tol > 0.0 && resid.abs() <= f_tol) {
            return Ok(Inverse { y: mid, clamped });
        }
        if resid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < opts.x_tol {
            break;
        }
    }
    Ok(Inverse {
        y: 0.5 * (lo + hi),
        clamped,
    })
}

/// Numerical inverse of the map at `z` with residual tolerance `tol`
/// relative to the range span.
pub fn eval_g(map: &NodeMap, z: f64, tol: f64) -> Result<f64> {
    invert(map, z, &InverseOptions::with_tol(tol)).map(|inv| inv.y)
}

/// Gradient of the inverse with respect to the map parameters, given the
/// latent point `y = g(z)` already found. Differentiating `f(g(z)) = z`
/// gives `dg/dtheta = -(df/dtheta)(y) / f'(y)`.
pub fn grad_g_theta_at(map: &NodeMap, y: f64) -> Result<ThetaGradient> {
    let slope = eval_f_prime(map, y);
    if !(slope >= SLOPE_FLOOR) {
        return Err(Error::NearSingular {
            node: None,
            y,
            slope,
        });
    }
    let mut g = grad_f_theta(map, y);
    g.scale(-1.0 / slope);
    Ok(g)
}

pub fn grad_g_theta(map: &NodeMap, z: f64, tol: f64) -> Result<ThetaGradient> {
    let y = eval_g(map, z, tol)?;
    grad_g_theta_at(map, y)
}
