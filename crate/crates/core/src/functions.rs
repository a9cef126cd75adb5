//! Named scalar test functions used by the weighted variation, the symmetric
//! integral and the Itô residual.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarFn {
    Zero,
    One,
    Identity,
    Sin,
    Cos,
    /// `x ↦ x²/2`, whose derivative is the identity.
    HalfSquare,
    Cube,
    /// `x ↦ 3x²`, the derivative of `Cube`.
    ThreeSquare,
}

impl ScalarFn {
    pub const ALL: [ScalarFn; 8] = [
        ScalarFn::Zero,
        ScalarFn::One,
        ScalarFn::Identity,
        ScalarFn::Sin,
        ScalarFn::Cos,
        ScalarFn::HalfSquare,
        ScalarFn::Cube,
        ScalarFn::ThreeSquare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScalarFn::Zero => "zero",
            ScalarFn::One => "one",
            ScalarFn::Identity => "identity",
            ScalarFn::Sin => "sin",
            ScalarFn::Cos => "cos",
            ScalarFn::HalfSquare => "half_square",
            ScalarFn::Cube => "cube",
            ScalarFn::ThreeSquare => "three_square",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| Error::Unknown(format!("function `{name}`")))
    }

    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::One => 1.0,
            ScalarFn::Identity => x,
            ScalarFn::Sin => x.sin(),
            ScalarFn::Cos => x.cos(),
            ScalarFn::HalfSquare => 0.5 * x * x,
            ScalarFn::Cube => x * x * x,
            ScalarFn::ThreeSquare => 3.0 * x * x,
        }
    }

    pub fn derivative(self) -> Option<ScalarFn> {
        match self {
            ScalarFn::Zero | ScalarFn::One => Some(ScalarFn::Zero),
            ScalarFn::Identity => Some(ScalarFn::One),
            ScalarFn::Sin => Some(ScalarFn::Cos),
            ScalarFn::HalfSquare => Some(ScalarFn::Identity),
            ScalarFn::Cube => Some(ScalarFn::ThreeSquare),
            ScalarFn::Cos | ScalarFn::ThreeSquare => None,
        }
    }
}

impl fmt::Display for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        for f in ScalarFn::ALL {
            let Some(d) = f.derivative() else { continue };
            for &x in &[-1.3, 0.0, 0.4, 2.2] {
                let step = 1e-5;
                let fd = (f.eval(x + step) - f.eval(x - step)) / (2.0 * step);
                assert!((fd - d.eval(x)).abs() < 1e-6, "{f} at {x}");
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for f in ScalarFn::ALL {
            assert_eq!(ScalarFn::parse(f.name()).unwrap(), f);
        }
        assert!(ScalarFn::parse("tan").is_err());
    }
}
