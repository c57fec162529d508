//! Fixed-step classical Runge-Kutta integration.

use crate::error::{Error, Result};

/// One RK4 step of ṡ = f(s, a) with `a` held constant over the step.
pub fn rk4_step<const N: usize, A: ?Sized>(
    f: impl Fn(&[f64; N], &A) -> Result<[f64; N]>,
    s: &[f64; N],
    a: &A,
    dt: f64,
) -> Result<[f64; N]> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let offset = |base: &[f64; N], k: &[f64; N], h: f64| {
        let mut out = *base;
        for (o, k) in out.iter_mut().zip(k) {
            *o += h * k;
        }
        out
    };
    let k1 = f(s, a)?;
    let k2 = f(&offset(s, &k1, 0.5 * dt), a)?;
    let k3 = f(&offset(s, &k2, 0.5 * dt), a)?;
    let k4 = f(&offset(s, &k3, dt), a)?;
    let mut next = *s;
    for i in 0..N {
        next[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("integrated state"));
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(s: &[f64; 2], _: &()) -> Result<[f64; 2]> {
        Ok([s[1], -s[0]])
    }

    #[test]
    fn zero_dynamics_keep_state() {
        let s = [1.0, -2.0, 3.0];
        let next = rk4_step(|_: &[f64; 3], _: &()| Ok([0.0; 3]), &s, &(), 0.002).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn exponential_decay() {
        let next = rk4_step(|s: &[f64; 1], _: &()| Ok([-s[0]]), &[1.0], &(), 0.002).unwrap();
        assert!((next[0] - (-0.002f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut s = [1.0, 0.0];
            for _ in 0..steps {
                s = rk4_step(oscillator, &s, &(), dt).unwrap();
            }
            ((s[0] - 1f64.cos()).powi(2) + (s[1] + 1f64.sin()).powi(2)).sqrt()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((ratio - 16.0).abs() < 0.5, "ratio = {ratio}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(rk4_step(oscillator, &[1.0, 0.0], &(), 0.0).is_err());
        let blowup = |_: &[f64; 1], _: &()| Ok([f64::INFINITY]);
        assert!(matches!(
            rk4_step(blowup, &[0.0], &(), 0.1),
            Err(Error::NonFinite(_))
        ));
    }
}
