//! Tagged distribution descriptors for the configurable processes:
//! inter-query gap, device performance and task size.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistSpec {
    Uniform { lo: f64, hi: f64 },
    Exponential { rate: f64 },
}

impl DistSpec {
    /// Validate parameters. With `require_positive`, every possible sample
    /// must be strictly positive (performance, task size).
    pub fn validate(&self, require_positive: bool) -> Result<(), String> {
        match *self {
            DistSpec::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(format!("uniform bounds must be finite, got ({lo}, {hi})"));
                }
                if lo > hi {
                    return Err(format!("uniform lo must not exceed hi, got ({lo}, {hi})"));
                }
                if require_positive && lo <= 0.0 {
                    return Err(format!("uniform lo must be > 0 here, got {lo}"));
                }
                if !require_positive && lo < 0.0 {
                    return Err(format!("uniform lo must be >= 0 here, got {lo}"));
                }
                Ok(())
            }
            DistSpec::Exponential { rate } => {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(format!("exponential rate must be positive, got {rate}"));
                }
                Ok(())
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            DistSpec::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..hi)
                }
            }
            DistSpec::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistSpec::Uniform { lo, hi } => 0.5 * (lo + hi),
            DistSpec::Exponential { rate } => 1.0 / rate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_rejects_inverted_bounds() {
        assert!(DistSpec::Uniform { lo: 100.0, hi: 1.0 }.validate(true).is_err());
        assert!(DistSpec::Uniform { lo: 1.0, hi: 100.0 }.validate(true).is_ok());
    }

    #[test]
    fn positivity_requirement() {
        let zero_lo = DistSpec::Uniform { lo: 0.0, hi: 10.0 };
        assert!(zero_lo.validate(true).is_err());
        assert!(zero_lo.validate(false).is_ok());
        assert!(DistSpec::Exponential { rate: 0.0 }.validate(false).is_err());
    }

    #[test]
    fn samples_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = DistSpec::Uniform { lo: 2.0, hi: 5.0 };
        for _ in 0..1000 {
            let x = d.sample(&mut rng);
            assert!((2.0..5.0).contains(&x));
        }
        let degenerate = DistSpec::Uniform { lo: 3.0, hi: 3.0 };
        assert_eq!(degenerate.sample(&mut rng), 3.0);
    }

    #[test]
    fn means() {
        assert_eq!(DistSpec::Uniform { lo: 0.0, hi: 10.0 }.mean(), 5.0);
        assert_eq!(DistSpec::Exponential { rate: 4.0 }.mean(), 0.25);
    }

    #[test]
    fn toml_round_trip() {
        let d = DistSpec::Uniform { lo: 1.0, hi: 100.0 };
        let s = toml::to_string(&d).unwrap();
        let back: DistSpec = toml::from_str(&s).unwrap();
        assert_eq!(d, back);
    }
}
