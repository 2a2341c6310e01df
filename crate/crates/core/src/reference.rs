//! Extended-precision reference values for the numeric checks.

pub mod hp {
    //! Arbitrary-precision reference evaluations. Independent of the f64
    //! code paths they check.

    use astro_float::{BigFloat, Consts, RoundingMode};

    const RM: RoundingMode = RoundingMode::ToEven;

    /// Enough bits to resolve `1 - exp(a)` for `a` down to about -1000.
    #[cfg(test)]
    fn precision_for(a: f64) -> usize {
        let extra = (a.abs() * std::f64::consts::LOG2_E).ceil() as usize;
        (256 + extra).div_ceil(64) * 64
    }

    fn to_f64(x: &BigFloat) -> f64 {
        x.to_string().parse().expect("BigFloat renders as a decimal")
    }

    fn big(x: f64, p: usize) -> BigFloat {
        BigFloat::from_f64(x, p)
    }

    /// `log(1 - exp(a))`.
    #[cfg(test)]
    pub fn log1mexp(a: f64) -> f64 {
        let p = precision_for(a);
        let mut cc = Consts::new().unwrap();
        let e = big(a, p).exp(p, RM, &mut cc);
        let r = big(1.0, p).sub(&e, p, RM).ln(p, RM, &mut cc);
        to_f64(&r)
    }

    /// `log(1 + exp(a))`.
    #[cfg(test)]
    pub fn log1pexp(a: f64) -> f64 {
        let p = precision_for(a);
        let mut cc = Consts::new().unwrap();
        let e = big(a, p).exp(p, RM, &mut cc);
        to_f64(&big(1.0, p).add(&e, p, RM).ln(p, RM, &mut cc))
    }

    /// `log(1 - exp(-exp(x)))`, the log inclusion probability at offset `x = phi - a`.
    #[cfg(test)]
    pub fn log_q(x: f64) -> f64 {
        let p = precision_for(x.exp().max(1.0)) + 256;
        let mut cc = Consts::new().unwrap();
        let z = big(x, p).exp(p, RM, &mut cc);
        let e = z.neg().exp(p, RM, &mut cc);
        to_f64(&big(1.0, p).sub(&e, p, RM).ln(p, RM, &mut cc))
    }

    /// `phi - log(1 - exp(-exp(phi - kappa)))`.
    pub fn log_importance_weight(phi: f64, kappa: f64) -> f64 {
        let p = 512;
        let mut cc = Consts::new().unwrap();
        let x = big(phi, p).sub(&big(kappa, p), p, RM);
        let z = x.exp(p, RM, &mut cc);
        let e = z.neg().exp(p, RM, &mut cc);
        let lq = big(1.0, p).sub(&e, p, RM).ln(p, RM, &mut cc);
        to_f64(&big(phi, p).sub(&lq, p, RM))
    }

    /// `-log(exp(-t) - exp(-z) + exp(-g))` for every key, `z` the max key.
    pub fn naive_shift(keys: &[f64], t_max: f64) -> Vec<f64> {
        let p = 1024;
        let mut cc = Consts::new().unwrap();
        let z = keys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let et = big(-t_max, p).exp(p, RM, &mut cc);
        let ez = big(-z, p).exp(p, RM, &mut cc);
        keys.iter()
            .map(|&g| {
                if g == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                let eg = big(-g, p).exp(p, RM, &mut cc);
                let a = et.sub(&ez, p, RM).add(&eg, p, RM);
                -to_f64(&a.ln(p, RM, &mut cc))
            })
            .collect()
    }
}
