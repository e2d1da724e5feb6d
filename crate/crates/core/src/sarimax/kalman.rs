//! Exact Gaussian likelihood of a zero-mean ARMA process.
//!
//! The process `u_t = sum a_k u_{t-k} + e_t + sum b_k e_{t-k}` is cast in the
//! Harvey state-space form with state dimension `r = max(p, q + 1)`:
//!
//! ```text
//! u_t         = Z alpha_t,            Z = (1, 0, .., 0)
//! alpha_{t+1} = T alpha_t + R e_{t+1}, T = [a | shifted identity], R = (1, b_1, .., b_{r-1})
//! ```
//!
//! The state starts from its exact stationary distribution. Likelihood
//! evaluation uses the Chandrasekhar recursions, which track the rank-one
//! increment of the prediction covariance instead of the covariance itself, so
//! each step costs O(r) rather than O(r^2). The covariance-form filter is kept
//! for forecasting, where the final state covariance is needed.
//!
//! All quantities are for unit innovation variance; the caller scales by sigma2.

use nalgebra::{DMatrix, DVector};

/// Expanded ARMA polynomials.
#[derive(Debug, Clone)]
pub struct ArmaModel {
    ar: Vec<f64>,
    ma: Vec<f64>,
    ar_nonzero: Vec<(usize, f64)>,
}

impl ArmaModel {
    pub fn new(ar: Vec<f64>, ma: Vec<f64>) -> Self {
        let ar_nonzero = ar.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(i, c)| (i, *c)).collect();
        ArmaModel { ar, ma, ar_nonzero }
    }

    pub fn ar(&self) -> &[f64] {
        &self.ar
    }

    pub fn ma(&self) -> &[f64] {
        &self.ma
    }

    pub fn state_dim(&self) -> usize {
        self.ar.len().max(self.ma.len() + 1)
    }

    fn b(&self, k: usize) -> f64 {
        match k {
            0 => 1.0,
            _ => self.ma.get(k - 1).copied().unwrap_or(0.0),
        }
    }

    /// `out = T x`.
    fn transition(&self, x: &[f64], out: &mut [f64]) {
        let r = x.len();
        out[..r - 1].copy_from_slice(&x[1..]);
        out[r - 1] = 0.0;
        let x0 = x[0];
        if x0 != 0.0 {
            for &(i, c) in &self.ar_nonzero {
                out[i] += c * x0;
            }
        }
    }

    /// MA(infinity) weights psi_0..psi_{count-1}.
    pub fn psi_weights(&self, count: usize) -> Vec<f64> {
        let mut psi = vec![0.0; count];
        for j in 0..count {
            let mut v = self.b(j);
            for &(i, c) in &self.ar_nonzero {
                if i + 1 > j {
                    break;
                }
                v += c * psi[j - i - 1];
            }
            psi[j] = v;
        }
        psi
    }

    /// Autocovariances gamma(0..=max_lag) for unit innovation variance.
    /// `None` when the AR part is (numerically) non-stationary.
    pub fn autocovariances(&self, max_lag: usize) -> Option<Vec<f64>> {
        let p = self.ar.len();
        let q = self.ma.len();
        let psi = self.psi_weights(q + 1);
        let rhs_at = |k: usize| -> f64 { (k..=q).map(|j| self.b(j) * psi[j - k]).sum() };

        let mut gamma = vec![0.0; max_lag.max(p) + 1];
        if p == 0 {
            for (k, g) in gamma.iter_mut().enumerate() {
                *g = if k <= q { rhs_at(k) } else { 0.0 };
            }
        } else {
            let mut m = DMatrix::<f64>::zeros(p + 1, p + 1);
            let mut rhs = DVector::<f64>::zeros(p + 1);
            for k in 0..=p {
                m[(k, k)] += 1.0;
                for &(i, c) in &self.ar_nonzero {
                    let j = i + 1;
                    let lag = k.abs_diff(j);
                    m[(k, lag)] -= c;
                }
                rhs[k] = rhs_at(k);
            }
            let sol = m.lu().solve(&rhs)?;
            for k in 0..=p {
                gamma[k] = sol[k];
            }
            for k in (p + 1)..gamma.len() {
                let mut v = if k <= q { rhs_at(k) } else { 0.0 };
                for &(i, c) in &self.ar_nonzero {
                    v += c * gamma[k - i - 1];
                }
                gamma[k] = v;
            }
        }
        if !(gamma[0].is_finite() && gamma[0] > 0.0) || gamma.iter().any(|g| !g.is_finite()) {
            return None;
        }
        gamma.truncate(max_lag + 1);
        Some(gamma)
    }

    /// First column of the stationary state covariance, Cov(alpha_0, alpha_j).
    pub fn stationary_first_column(&self) -> Option<Vec<f64>> {
        let r = self.state_dim();
        let gamma = self.autocovariances(r)?;
        let psi = self.psi_weights(r + 1);
        let q = self.ma.len();
        let mut col = vec![0.0; r];
        col[0] = gamma[0];
        for (j, c) in col.iter_mut().enumerate().skip(1) {
            let mut v = 0.0;
            for &(i, a) in &self.ar_nonzero {
                let k = i + 1;
                if k > j {
                    v += a * gamma[k - j];
                }
            }
            for k in j..=q {
                v += self.b(k) * psi[k - j];
            }
            *c = v;
        }
        Some(col)
    }

    /// Full stationary state covariance (row-major r x r), solving P = T P T' + R R'.
    pub fn stationary_covariance(&self) -> Option<Vec<f64>> {
        let r = self.state_dim();
        let col = self.stationary_first_column()?;
        let a = |k: usize| self.ar.get(k).copied().unwrap_or(0.0);
        let mut p = vec![0.0; r * r];
        for j in 0..r {
            p[j] = col[j];
            p[j * r] = col[j];
        }
        let at = |p: &Vec<f64>, i: usize, j: usize| if i < r && j < r { p[i * r + j] } else { 0.0 };
        for i in (1..r).rev() {
            for j in (i..r).rev() {
                let v = a(i) * a(j) * col[0]
                    + a(i) * at(&p, 0, j + 1)
                    + a(j) * at(&p, i + 1, 0)
                    + at(&p, i + 1, j + 1)
                    + self.b(i) * self.b(j);
                p[i * r + j] = v;
                p[j * r + i] = v;
            }
        }
        Some(p)
    }
}

/// One-step prediction errors and their variances (unit innovation variance).
#[derive(Debug, Clone)]
pub struct Innovations {
    pub v: Vec<f64>,
    pub f: Vec<f64>,
}

impl Innovations {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    /// Gaussian log-likelihood of the innovations from index `from` on, for innovation variance `sigma2`.
    pub fn loglik(&self, sigma2: f64, from: usize) -> f64 {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        self.v[from..]
            .iter()
            .zip(&self.f[from..])
            .map(|(v, f)| -0.5 * (ln2pi + (sigma2 * f).ln() + v * v / (sigma2 * f)))
            .sum()
    }

    /// MLE of sigma2: mean of v^2 / f.
    pub fn sigma2_hat(&self) -> f64 {
        self.v.iter().zip(&self.f).map(|(v, f)| v * v / f).sum::<f64>() / self.v.len() as f64
    }

    /// Concentrated log-likelihood with sigma2 replaced by its MLE.
    pub fn concentrated_loglik(&self) -> f64 {
        let n = self.v.len() as f64;
        let s2 = self.sigma2_hat();
        let sum_ln_f: f64 = self.f.iter().map(|f| f.ln()).sum();
        -0.5 * n * ((2.0 * std::f64::consts::PI).ln() + s2.ln() + 1.0) - 0.5 * sum_ln_f
    }
}

const F_MIN: f64 = 1e-10;

/// Innovations via the Chandrasekhar recursions. `None` on numerical breakdown.
pub fn innovations(u: &[f64], model: &ArmaModel) -> Option<Innovations> {
    let r = model.state_dim();
    let col = model.stationary_first_column()?;
    let mut f = col[0];
    let mut g = vec![0.0; r];
    model.transition(&col, &mut g);
    let mut w = g.clone();
    let mut m = -1.0 / f;
    let mut state = vec![0.0; r];
    let mut next = vec![0.0; r];
    let mut tw = vec![0.0; r];
    let mut steady = false;

    let mut out_v = Vec::with_capacity(u.len());
    let mut out_f = Vec::with_capacity(u.len());
    for &obs in u {
        if !(f.is_finite() && f > F_MIN) {
            return None;
        }
        let v = obs - state[0];
        out_v.push(v);
        out_f.push(f);

        model.transition(&state, &mut next);
        let scale = v / f;
        for (s, (n, gi)) in state.iter_mut().zip(next.iter().zip(&g)) {
            *s = n + gi * scale;
        }
        if steady {
            continue;
        }

        let zw = w[0];
        let delta_f = m * zw * zw;
        let f_new = f + delta_f;
        model.transition(&w, &mut tw);
        let gain_zw = zw / f;
        for i in 0..r {
            let gi_old = g[i];
            g[i] += m * zw * tw[i];
            w[i] = tw[i] - gi_old * gain_zw;
        }
        m -= m * m * zw * zw / f_new;
        f = f_new;
        if delta_f.abs() <= 1e-15 * f && w.iter().all(|x| x.abs() < 1e-9) {
            steady = true;
        }
    }
    Some(Innovations { v: out_v, f: out_f })
}

/// Covariance-form Kalman filter output.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub innovations: Innovations,
    /// Predicted state mean for the period after the sample.
    pub next_state: Vec<f64>,
    /// Its covariance, row-major r x r, for unit innovation variance.
    pub next_cov: Vec<f64>,
}

pub fn filter(u: &[f64], model: &ArmaModel) -> Option<FilterOutput> {
    let r = model.state_dim();
    let mut p = model.stationary_covariance()?;
    let mut state = vec![0.0; r];
    let mut next = vec![0.0; r];
    let rvec: Vec<f64> = (0..r).map(|i| model.b(i)).collect();
    let mut col = vec![0.0; r];
    let mut g = vec![0.0; r];
    let mut tmp = vec![0.0; r * r];

    let mut out_v = Vec::with_capacity(u.len());
    let mut out_f = Vec::with_capacity(u.len());
    for &obs in u {
        let f = p[0];
        if !(f.is_finite() && f > F_MIN) {
            return None;
        }
        let v = obs - state[0];
        out_v.push(v);
        out_f.push(f);
        for i in 0..r {
            col[i] = p[i * r];
        }
        model.transition(&col, &mut g);
        model.transition(&state, &mut next);
        for i in 0..r {
            state[i] = next[i] + g[i] * v / f;
        }
        transform_cov(model, &p, &mut tmp, r);
        for i in 0..r {
            for j in 0..r {
                p[i * r + j] = tmp[i * r + j] + rvec[i] * rvec[j] - g[i] * g[j] / f;
            }
        }
    }
    Some(FilterOutput { innovations: Innovations { v: out_v, f: out_f }, next_state: state, next_cov: p })
}

/// `out = T P T'` for symmetric row-major `p`.
fn transform_cov(model: &ArmaModel, p: &[f64], out: &mut [f64], r: usize) {
    // T P: apply T to each column; then (T P) T' = T (T P)'.
    let mut tp = vec![0.0; r * r];
    let mut col = vec![0.0; r];
    let mut res = vec![0.0; r];
    for j in 0..r {
        for i in 0..r {
            col[i] = p[i * r + j];
        }
        model.transition(&col, &mut res);
        for i in 0..r {
            tp[i * r + j] = res[i];
        }
    }
    for i in 0..r {
        // Row i of (T P) is column i of (T P)'.
        col.copy_from_slice(&tp[i * r..(i + 1) * r]);
        model.transition(&col, &mut res);
        for j in 0..r {
            out[j * r + i] = res[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(ar: &[f64], ma: &[f64]) -> ArmaModel {
        ArmaModel::new(ar.to_vec(), ma.to_vec())
    }

    #[test]
    fn ar1_autocovariance() {
        let g = model(&[0.6], &[]).autocovariances(3).unwrap();
        let g0 = 1.0 / (1.0 - 0.36);
        assert!((g[0] - g0).abs() < 1e-12);
        assert!((g[1] - 0.6 * g0).abs() < 1e-12);
        assert!((g[3] - 0.216 * g0).abs() < 1e-12);
    }

    #[test]
    fn ma1_autocovariance() {
        let g = model(&[], &[0.5]).autocovariances(2).unwrap();
        assert!((g[0] - 1.25).abs() < 1e-15);
        assert!((g[1] - 0.5).abs() < 1e-15);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn autocovariance_matches_psi_sum() {
        let m = model(&[0.5, -0.2, 0.1], &[0.3, 0.2]);
        let g = m.autocovariances(6).unwrap();
        let psi = m.psi_weights(4000);
        for (h, gh) in g.iter().enumerate() {
            let brute: f64 = (0..psi.len() - h).map(|j| psi[j] * psi[j + h]).sum();
            assert!((gh - brute).abs() < 1e-12, "lag {h}: {gh} vs {brute}");
        }
    }

    #[test]
    fn stationary_covariance_solves_lyapunov() {
        let m = model(&[0.4, 0.0, 0.0, 0.3, -0.12], &[0.2, 0.0, 0.5]);
        let r = m.state_dim();
        let p = m.stationary_covariance().unwrap();
        let mut tpt = vec![0.0; r * r];
        transform_cov(&m, &p, &mut tpt, r);
        for i in 0..r {
            for j in 0..r {
                let lhs = p[i * r + j];
                let rhs = tpt[i * r + j] + m.b(i) * m.b(j);
                assert!((lhs - rhs).abs() < 1e-10, "({i},{j}) {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn chandrasekhar_matches_covariance_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (ar, ma) in [
            (vec![0.7], vec![]),
            (vec![0.5, -0.3], vec![0.4]),
            (vec![], vec![0.6, 0.2]),
            (vec![0.3, 0.0, 0.0, 0.5, -0.15], vec![-0.4, 0.0, 0.0, 0.3, -0.12]),
        ] {
            let m = model(&ar, &ma);
            let u: Vec<f64> = (0..120).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let fast = innovations(&u, &m).unwrap();
            let slow = filter(&u, &m).unwrap().innovations;
            for t in 0..u.len() {
                assert!((fast.v[t] - slow.v[t]).abs() < 1e-9, "v[{t}]");
                assert!((fast.f[t] - slow.f[t]).abs() < 1e-9, "f[{t}]");
            }
        }
    }
}
