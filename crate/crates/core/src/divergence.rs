//! # f-divergences
//!
//! Every divergence is a bundle of scalar maps: the generator `f` with its
//! first two derivatives, the Fenchel conjugate `f*` with its derivatives,
//! and the output activation `g_f` that maps a raw critic score into the
//! conjugate domain.
//!
//! | name       | f(u)                              | f*(t)                       | g_f(v)                 |
//! |------------|-----------------------------------|-----------------------------|------------------------|
//! | kl         | u ln u                            | e^{t-1}                     | v                      |
//! | rkl        | -ln u                             | -1 - ln(-t)                 | -e^{-v}                |
//! | hellinger2 | (√u - 1)²                         | t / (1 - t)                 | 1 - e^{-v}             |
//! | js         | u ln u - (u+1) ln((u+1)/2)        | -ln(2 - e^t)                | ln 2 - ln(1 + e^{-v})  |
//! | gan        | u ln u - (u+1) ln(u+1) + 2 ln 2   | -ln(1 - e^t) - 2 ln 2       | -ln(1 + e^{-v})        |
//! | chi2       | (u - 1)²                          | t²/4 + t                    | v                      |
//! | jeffreys   | (u - 1) ln u                      | W(e^{1-t}) + 1/W(e^{1-t}) + t - 2 | v                |
//! | tv         | ½ |u - 1|                         | t on (-½, ½)                | ½ tanh v               |
//!
//! The `gan` generator carries a `+2 ln 2` so that `f(1) = 0`.
//!
//! The hellinger2 and js generators integrate to twice the conventional
//! divergences (`1 - BC` and `½ KL(P‖M) + ½ KL(Q‖M)`); [`DivergenceSpec::value_scale`]
//! converts `∫ q f(p/q)` into the conventional value.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{sigmoid, softplus, wright_omega};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DivergenceKind {
    #[serde(rename = "kl")]
    Kl,
    #[serde(rename = "rkl")]
    ReverseKl,
    #[serde(rename = "hellinger2")]
    SquaredHellinger,
    #[serde(rename = "js")]
    JensenShannon,
    #[serde(rename = "gan")]
    Gan,
    #[serde(rename = "chi2")]
    PearsonChi2,
    #[serde(rename = "jeffreys")]
    Jeffreys,
    #[serde(rename = "tv")]
    TotalVariation,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 8] = [
        DivergenceKind::Kl,
        DivergenceKind::ReverseKl,
        DivergenceKind::SquaredHellinger,
        DivergenceKind::JensenShannon,
        DivergenceKind::Gan,
        DivergenceKind::PearsonChi2,
        DivergenceKind::Jeffreys,
        DivergenceKind::TotalVariation,
    ];

    /// Canonical CLI name.
    pub fn as_str(self) -> &'static str {
        match self {
            DivergenceKind::Kl => "kl",
            DivergenceKind::ReverseKl => "rkl",
            DivergenceKind::SquaredHellinger => "hellinger2",
            DivergenceKind::JensenShannon => "js",
            DivergenceKind::Gan => "gan",
            DivergenceKind::PearsonChi2 => "chi2",
            DivergenceKind::Jeffreys => "jeffreys",
            DivergenceKind::TotalVariation => "tv",
        }
    }

    pub fn spec(self) -> DivergenceSpec {
        make_spec(self)
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DivergenceKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownDivergence(s.to_string()))
    }
}

/// Open interval; either bound may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const REAL: Interval = Interval {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub fn contains(&self, t: f64) -> bool {
        t > self.lower && t < self.upper
    }

    fn check(&self, what: &'static str, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::Domain {
                what,
                value: t,
                lower: self.lower,
                upper: self.upper,
            })
        }
    }
}

/// One f-divergence with its generator, conjugate and output activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceSpec {
    pub name: DivergenceKind,
    /// `f″(1)`; absent for total variation (kink at 1).
    pub f_double_prime_at_1: Option<f64>,
    pub f_star_domain: Interval,
    /// `f(0) + f⋆(0)` in conventional units when finite.
    pub bound: Option<f64>,
    pub strictly_convex_conjugate: bool,
    /// Factor turning `∫ q f(p/q)` into the conventional divergence value.
    pub value_scale: f64,
}

pub fn make_spec(name: DivergenceKind) -> DivergenceSpec {
    use DivergenceKind::*;
    let (f2, domain, strict, scale) = match name {
        Kl => (Some(1.0), Interval::REAL, true, 1.0),
        ReverseKl => (
            Some(1.0),
            Interval {
                lower: f64::NEG_INFINITY,
                upper: 0.0,
            },
            true,
            1.0,
        ),
        SquaredHellinger => (
            Some(0.5),
            Interval {
                lower: f64::NEG_INFINITY,
                upper: 1.0,
            },
            true,
            0.5,
        ),
        JensenShannon => (
            Some(0.5),
            Interval {
                lower: f64::NEG_INFINITY,
                upper: LN_2,
            },
            true,
            0.5,
        ),
        Gan => (
            Some(0.5),
            Interval {
                lower: f64::NEG_INFINITY,
                upper: 0.0,
            },
            true,
            1.0,
        ),
        PearsonChi2 => (Some(2.0), Interval::REAL, true, 1.0),
        Jeffreys => (Some(2.0), Interval::REAL, true, 1.0),
        TotalVariation => (
            None,
            Interval {
                lower: -0.5,
                upper: 0.5,
            },
            false,
            1.0,
        ),
    };
    let mut spec = DivergenceSpec {
        name,
        f_double_prime_at_1: f2,
        f_star_domain: domain,
        bound: None,
        strictly_convex_conjugate: strict,
        value_scale: scale,
    };
    let raw = spec.f_at_zero() + spec.f_recession();
    spec.bound = raw.is_finite().then_some(raw * scale);
    spec
}

impl DivergenceSpec {
    /// Generator `f(u)` for `u > 0`.
    pub fn f(&self, u: f64) -> f64 {
        use DivergenceKind::*;
        match self.name {
            Kl => u * u.ln(),
            ReverseKl => -u.ln(),
            SquaredHellinger => {
                let r = u.sqrt() - 1.0;
                r * r
            }
            JensenShannon => u * u.ln() - (u + 1.0) * ((u + 1.0) / 2.0).ln(),
            Gan => u * u.ln() - (u + 1.0) * (u + 1.0).ln() + 2.0 * LN_2,
            PearsonChi2 => (u - 1.0) * (u - 1.0),
            Jeffreys => (u - 1.0) * u.ln(),
            TotalVariation => 0.5 * (u - 1.0).abs(),
        }
    }

    pub fn f_prime(&self, u: f64) -> f64 {
        use DivergenceKind::*;
        match self.name {
            Kl => u.ln() + 1.0,
            ReverseKl => -1.0 / u,
            SquaredHellinger => 1.0 - 1.0 / u.sqrt(),
            JensenShannon => u.ln() - ((u + 1.0) / 2.0).ln(),
            Gan => (u / (u + 1.0)).ln(),
            PearsonChi2 => 2.0 * (u - 1.0),
            Jeffreys => u.ln() + 1.0 - 1.0 / u,
            TotalVariation => 0.5 * (u - 1.0).signum() * f64::from(u != 1.0),
        }
    }

    pub fn f_double_prime(&self, u: f64) -> f64 {
        use DivergenceKind::*;
        match self.name {
            Kl => 1.0 / u,
            ReverseKl => 1.0 / (u * u),
            SquaredHellinger => 0.5 / (u * u.sqrt()),
            JensenShannon | Gan => 1.0 / u - 1.0 / (u + 1.0),
            PearsonChi2 => 2.0,
            Jeffreys => 1.0 / u + 1.0 / (u * u),
            TotalVariation => 0.0,
        }
    }

    /// Fenchel conjugate; arguments outside the open domain are rejected.
    pub fn f_star(&self, t: f64) -> Result<f64> {
        use DivergenceKind::*;
        self.f_star_domain.check("f*", t)?;
        Ok(match self.name {
            Kl => (t - 1.0).exp(),
            ReverseKl => -1.0 - (-t).ln(),
            SquaredHellinger => t / (1.0 - t),
            JensenShannon => -(2.0 - t.exp()).ln(),
            Gan => -(-t.exp()).ln_1p() - 2.0 * LN_2,
            PearsonChi2 => 0.25 * t * t + t,
            Jeffreys => {
                let w = wright_omega(1.0 - t);
                w + 1.0 / w + t - 2.0
            }
            TotalVariation => t,
        })
    }

    /// `(f*)′(t)`, which equals `(f′)⁻¹(t)`.
    pub fn f_star_prime(&self, t: f64) -> Result<f64> {
        use DivergenceKind::*;
        self.f_star_domain.check("(f*)'", t)?;
        Ok(match self.name {
            Kl => (t - 1.0).exp(),
            ReverseKl => -1.0 / t,
            SquaredHellinger => 1.0 / ((1.0 - t) * (1.0 - t)),
            JensenShannon => {
                let e = t.exp();
                e / (2.0 - e)
            }
            Gan => {
                let e = t.exp();
                e / (1.0 - e)
            }
            PearsonChi2 => 0.5 * t + 1.0,
            Jeffreys => 1.0 / wright_omega(1.0 - t),
            TotalVariation => 1.0,
        })
    }

    /// `(f*)″(t)`; equals `1 / f″((f*)′(t))` wherever `f″` is positive.
    pub fn f_star_double_prime(&self, t: f64) -> Result<f64> {
        use DivergenceKind::*;
        self.f_star_domain.check("(f*)''", t)?;
        Ok(match self.name {
            Kl => (t - 1.0).exp(),
            ReverseKl => 1.0 / (t * t),
            SquaredHellinger => 2.0 / (1.0 - t).powi(3),
            JensenShannon => {
                let e = t.exp();
                2.0 * e / ((2.0 - e) * (2.0 - e))
            }
            Gan => {
                let e = t.exp();
                e / ((1.0 - e) * (1.0 - e))
            }
            PearsonChi2 => 0.5,
            Jeffreys => {
                let u = self.f_star_prime(t)?;
                1.0 / self.f_double_prime(u)
            }
            TotalVariation => 0.0,
        })
    }

    /// Output activation `g_f : ℝ → dom(f*)`.
    pub fn g_f(&self, v: f64) -> f64 {
        use DivergenceKind::*;
        match self.name {
            Kl | PearsonChi2 | Jeffreys => v,
            ReverseKl => -(-v).exp(),
            SquaredHellinger => -(-v).exp_m1(),
            JensenShannon => LN_2 - softplus(-v),
            Gan => -softplus(-v),
            TotalVariation => 0.5 * v.tanh(),
        }
    }

    pub fn g_f_prime(&self, v: f64) -> f64 {
        use DivergenceKind::*;
        match self.name {
            Kl | PearsonChi2 | Jeffreys => 1.0,
            ReverseKl | SquaredHellinger => (-v).exp(),
            JensenShannon | Gan => sigmoid(-v),
            TotalVariation => {
                let th = v.tanh();
                0.5 * (1.0 - th * th)
            }
        }
    }

    /// Inverse activation: the raw score `v` with `g_f(v) = t`.
    pub fn g_f_inverse(&self, t: f64) -> Result<f64> {
        use DivergenceKind::*;
        self.f_star_domain.check("g_f^-1", t)?;
        Ok(match self.name {
            Kl | PearsonChi2 | Jeffreys => t,
            ReverseKl => -(-t).ln(),
            SquaredHellinger => -(-t).ln_1p(),
            // ln 2 - softplus(-v) = t  =>  softplus(-v) = ln 2 - t
            JensenShannon => -(LN_2 - t).exp_m1().ln(),
            Gan => -(-t).exp_m1().ln(),
            TotalVariation => (2.0 * t).atanh(),
        })
    }

    /// `f*(g_f(v))` evaluated in a form that does not saturate when `g_f(v)`
    /// approaches a finite domain endpoint. Non-finite results are errors.
    pub fn conjugate_of_activation(&self, v: f64) -> Result<f64> {
        use DivergenceKind::*;
        let out = match self.name {
            Kl => (v - 1.0).exp(),
            ReverseKl => v - 1.0,
            SquaredHellinger => v.exp_m1(),
            JensenShannon => softplus(v) - LN_2,
            Gan => softplus(v) - 2.0 * LN_2,
            PearsonChi2 => 0.25 * v * v + v,
            Jeffreys => self.f_star(v)?,
            TotalVariation => 0.5 * v.tanh(),
        };
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::Domain {
                what: "f*(g_f(v))",
                value: v,
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
            })
        }
    }

    /// `d/dv f*(g_f(v)) = (f*)′(g_f(v)) · g_f′(v)`.
    pub fn conjugate_of_activation_prime(&self, v: f64) -> Result<f64> {
        use DivergenceKind::*;
        let out = match self.name {
            Kl => (v - 1.0).exp(),
            ReverseKl => 1.0,
            SquaredHellinger => v.exp(),
            JensenShannon | Gan => sigmoid(v),
            PearsonChi2 => 0.5 * v + 1.0,
            Jeffreys => self.f_star_prime(v)?,
            TotalVariation => self.g_f_prime(v),
        };
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::Domain {
                what: "d/dv f*(g_f(v))",
                value: v,
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
            })
        }
    }

    /// `f(0) = lim_{u→0⁺} f(u)`.
    fn f_at_zero(&self) -> f64 {
        use DivergenceKind::*;
        match self.name {
            Kl => 0.0,
            ReverseKl | Jeffreys => f64::INFINITY,
            SquaredHellinger | PearsonChi2 => 1.0,
            JensenShannon => LN_2,
            Gan => 2.0 * LN_2,
            TotalVariation => 0.5,
        }
    }

    /// `f⋆(0) = lim_{u→∞} f(u)/u`.
    fn f_recession(&self) -> f64 {
        use DivergenceKind::*;
        match self.name {
            Kl | PearsonChi2 | Jeffreys => f64::INFINITY,
            ReverseKl | Gan => 0.0,
            SquaredHellinger => 1.0,
            JensenShannon => LN_2,
            TotalVariation => 0.5,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.bound.is_some()
    }
}

/// `|(f*)′(f′(u)) − u|`, the residual of the conjugate-derivative identity.
pub fn check_conjugate_identity(spec: &DivergenceSpec, u: f64) -> Result<f64> {
    if !(u > 0.0) {
        return Err(Error::InvalidInput(format!("u must be positive, got {u}")));
    }
    let t = spec.f_prime(u);
    Ok((spec.f_star_prime(t)? - u).abs())
}

/// Local convergence-speed index `1 / f″(1)`.
pub fn convergence_speed_index(spec: &DivergenceSpec) -> Result<f64> {
    match spec.f_double_prime_at_1 {
        Some(f2) if f2 > 0.0 => Ok(1.0 / f2),
        _ => Err(Error::Unsupported {
            operation: "convergence speed index",
            divergence: spec.name.as_str(),
        }),
    }
}

/// Range-of-values bound `f(0) + f⋆(0)` (conventional units), if finite.
pub fn boundedness(spec: &DivergenceSpec) -> Option<f64> {
    spec.bound
}
