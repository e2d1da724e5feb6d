//! Lag polynomials and the stationarity-preserving reparameterization.
//!
//! AR-type coefficients use the convention `1 - a_1 B - ... - a_p B^p`,
//! MA-type coefficients `1 + b_1 B + ... + b_q B^q`.

/// Maps partial autocorrelations in (-1, 1) to AR coefficients (Levinson-Durbin).
pub fn pacf_to_ar(pacf: &[f64]) -> Vec<f64> {
    let mut phi: Vec<f64> = Vec::with_capacity(pacf.len());
    for (k, &r) in pacf.iter().enumerate() {
        let prev = phi.clone();
        for j in 0..k {
            phi[j] = prev[j] - r * prev[k - 1 - j];
        }
        phi.push(r);
    }
    phi
}

/// Inverse of [`pacf_to_ar`]; `None` when the polynomial is not stationary.
pub fn ar_to_pacf(phi: &[f64]) -> Option<Vec<f64>> {
    let p = phi.len();
    let mut cur = phi.to_vec();
    let mut pacf = vec![0.0; p];
    for k in (0..p).rev() {
        let r = cur[k];
        if !r.is_finite() || r.abs() >= 1.0 {
            return None;
        }
        pacf[k] = r;
        let denom = 1.0 - r * r;
        let prev: Vec<f64> = (0..k).map(|j| (cur[j] + r * cur[k - 1 - j]) / denom).collect();
        cur = prev;
    }
    Some(pacf)
}

/// Unconstrained reals to a stationary AR polynomial.
pub fn constrain_ar(raw: &[f64]) -> Vec<f64> {
    let pacf: Vec<f64> = raw.iter().map(|x| x.tanh()).collect();
    pacf_to_ar(&pacf)
}

/// Unconstrained reals to an invertible MA polynomial.
pub fn constrain_ma(raw: &[f64]) -> Vec<f64> {
    constrain_ar(raw).into_iter().map(|c| -c).collect()
}

const UNCONSTRAIN_CLAMP: f64 = 0.999_999;

/// Inverse of [`constrain_ar`]; `None` when not stationary.
pub fn unconstrain_ar(phi: &[f64]) -> Option<Vec<f64>> {
    ar_to_pacf(phi).map(|p| p.iter().map(|r| r.clamp(-UNCONSTRAIN_CLAMP, UNCONSTRAIN_CLAMP).atanh()).collect())
}

pub fn unconstrain_ma(theta: &[f64]) -> Option<Vec<f64>> {
    let neg: Vec<f64> = theta.iter().map(|c| -c).collect();
    unconstrain_ar(&neg)
}

pub fn is_stationary(phi: &[f64]) -> bool {
    ar_to_pacf(phi).is_some()
}

pub fn is_invertible(theta: &[f64]) -> bool {
    let neg: Vec<f64> = theta.iter().map(|c| -c).collect();
    ar_to_pacf(&neg).is_some()
}

/// Full polynomial coefficients `[1, c_1, .., c_n]` from a signed coefficient list.
fn full(coeffs: &[f64], sign: f64, spacing: usize) -> Vec<f64> {
    let mut out = vec![0.0; coeffs.len() * spacing + 1];
    out[0] = 1.0;
    for (i, c) in coeffs.iter().enumerate() {
        out[(i + 1) * spacing] = sign * c;
    }
    out
}

pub fn multiply(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Expanded AR coefficients `a_k` of `(1 - sum phi B^i)(1 - sum Phi B^{s i})`.
pub fn expand_ar(phi: &[f64], seasonal_phi: &[f64], s: usize) -> Vec<f64> {
    let prod = multiply(&full(phi, -1.0, 1), &full(seasonal_phi, -1.0, s));
    prod[1..].iter().map(|c| -c).collect()
}

/// Expanded MA coefficients `b_k` of `(1 + sum theta B^i)(1 + sum Theta B^{s i})`.
pub fn expand_ma(theta: &[f64], seasonal_theta: &[f64], s: usize) -> Vec<f64> {
    let prod = multiply(&full(theta, 1.0, 1), &full(seasonal_theta, 1.0, s));
    prod[1..].to_vec()
}

/// Coefficients `delta_k` (k >= 1) of `(1 - B)^d (1 - B^s)^D = 1 + sum delta_k B^k`.
pub fn differencing_poly(d: usize, seasonal_d: usize, s: usize) -> Vec<f64> {
    let mut poly = vec![1.0];
    for _ in 0..d {
        poly = multiply(&poly, &[1.0, -1.0]);
    }
    for _ in 0..seasonal_d {
        let mut lag = vec![0.0; s + 1];
        lag[0] = 1.0;
        lag[s] = -1.0;
        poly = multiply(&poly, &lag);
    }
    poly[1..].to_vec()
}
