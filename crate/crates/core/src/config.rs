//! Reduction configuration: rates, strategies, and merge representations.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How many tokens to remove from every row (or column) of a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    /// Remove exactly this many tokens.
    Count(usize),
    /// Remove `floor(fraction * side)` tokens. Must lie in `[0, 1)`.
    Fraction(f64),
}

impl Rate {
    /// Resolves the rate against a region side length.
    pub fn resolve(self, side: usize) -> Result<usize> {
        let r = match self {
            Rate::Count(m) => m,
            Rate::Fraction(a) => {
                if !(0.0..1.0).contains(&a) {
                    return Err(Error::InvalidSpec(format!(
                        "fractional rate {a} outside [0, 1)"
                    )));
                }
                (a * side as f64).floor() as usize
            }
        };
        if r >= side {
            return Err(Error::InvalidSpec(format!(
                "rate {r} must be smaller than region side {side}"
            )));
        }
        Ok(r)
    }
}

impl Default for Rate {
    fn default() -> Self {
        Rate::Count(0)
    }
}

impl FromStr for Rate {
    type Err = Error;

    /// `"4"` is a count, anything with a decimal point or exponent is a fraction.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.contains(['.', 'e', 'E']) {
            let a: f64 = s
                .parse()
                .map_err(|_| Error::InvalidSpec(format!("bad rate {s:?}")))?;
            if !(0.0..1.0).contains(&a) {
                return Err(Error::InvalidSpec(format!(
                    "fractional rate {a} outside [0, 1)"
                )));
            }
            Ok(Rate::Fraction(a))
        } else {
            s.parse()
                .map(Rate::Count)
                .map_err(|_| Error::InvalidSpec(format!("bad rate {s:?}")))
        }
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Count(m) => write!(f, "{m}"),
            Rate::Fraction(a) => write!(f, "{a}"),
        }
    }
}

/// Edge selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Strategy {
    /// Alternating roles on the path graph of each row/column, top-k nominations.
    #[default]
    BipartiteLocal,
    /// Top-k path-graph edges without role constraints; merges can chain.
    NaiveLocal,
    /// Alternating roles over the flattened region with unrestricted nominations.
    BipartiteGlobal,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::BipartiteLocal,
        Strategy::NaiveLocal,
        Strategy::BipartiteGlobal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::BipartiteLocal => "bipartite_local",
            Strategy::NaiveLocal => "naive_local",
            Strategy::BipartiteGlobal => "bipartite_global",
        }
    }

    /// Whether the output keeps a uniform 2D layout.
    pub fn is_structured(self) -> bool {
        !matches!(self, Strategy::BipartiteGlobal)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown strategy {s:?}")))
    }
}

/// How the members of a merge group collapse into one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Representation {
    #[default]
    MaxPerDim,
    WeightedAverage,
    MaxVector,
}

impl Representation {
    pub const ALL: [Representation; 3] = [
        Representation::MaxPerDim,
        Representation::MaxVector,
        Representation::WeightedAverage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Representation::MaxPerDim => "max_per_dim",
            Representation::WeightedAverage => "weighted_average",
            Representation::MaxVector => "max_vector",
        }
    }

    /// Only the weighted average needs to know how many originals each token stands for.
    pub fn tracks_sizes(self) -> bool {
        matches!(self, Representation::WeightedAverage)
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Representation::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown representation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReductionSpec {
    /// Transformer layer the reduction is inserted before.
    pub layer: usize,
    /// Tokens removed from every column.
    pub rate_h: Rate,
    /// Tokens removed from every row.
    pub rate_w: Rate,
    /// Reduce each `window x window` tile independently.
    pub window: Option<usize>,
    pub strategy: Strategy,
    pub representation: Representation,
}

impl ReductionSpec {
    pub fn new(rate_h: Rate, rate_w: Rate) -> Self {
        Self {
            rate_h,
            rate_w,
            ..Self::default()
        }
    }

    pub fn with_window(mut self, window: Option<usize>) -> Self {
        self.window = window;
        self
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_representation(mut self, representation: Representation) -> Self {
        self.representation = representation;
        self
    }

    pub fn with_layer(mut self, layer: usize) -> Self {
        self.layer = layer;
        self
    }

    /// Region each reduction operates on for a `height x width` grid.
    pub fn region(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        match self.window {
            None => Ok((height, width)),
            Some(w) if w > 0 && height.is_multiple_of(w) && width.is_multiple_of(w) => Ok((w, w)),
            Some(w) => Err(Error::InvalidSpec(format!(
                "grid {height}x{width} is not divisible by window {w}"
            ))),
        }
    }
}

/// Resolves `(r_h, r_w)` for a region, checking `r_h < region_h` and `r_w < region_w`.
pub fn resolve_rates(spec: &ReductionSpec, region_h: usize, region_w: usize) -> Result<(usize, usize)> {
    if region_h == 0 || region_w == 0 {
        return Err(Error::InvalidSpec(format!(
            "region {region_h}x{region_w} must be non-empty"
        )));
    }
    Ok((spec.rate_h.resolve(region_h)?, spec.rate_w.resolve(region_w)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use proptest::prelude::*;

    fn rates(h: Rate, w: Rate) -> ReductionSpec {
        ReductionSpec::new(h, w)
    }

    #[test]
    fn integer_rate_passes_through() {
        let (rh, rw) = resolve_rates(&rates(Rate::Count(2), Rate::Count(2)), 14, 14).unwrap();
        assert_eq!((rh, rw), (2, 2));
        assert_eq!(14 - rh, 12);
    }

    #[test]
    fn zero_fraction_is_zero() {
        assert_eq!(Rate::Fraction(0.0).resolve(64).unwrap(), 0);
    }

    #[test]
    fn fraction_floors() {
        // 0.1 * 64 = 6.4
        assert_eq!(Rate::Fraction(0.1).resolve(64).unwrap(), 6);
        assert_eq!(Rate::Fraction(0.99).resolve(3).unwrap(), 2);
    }

    #[test]
    fn rate_at_side_is_rejected() {
        assert!(matches!(
            resolve_rates(&rates(Rate::Count(14), Rate::Count(0)), 14, 14),
            Err(Error::InvalidSpec(_))
        ));
        assert!(Rate::Fraction(1.0).resolve(10).is_err());
        assert!(Rate::Fraction(-0.1).resolve(10).is_err());
    }

    #[test]
    fn parse_rates_and_names() {
        assert_eq!("3".parse::<Rate>().unwrap(), Rate::Count(3));
        assert_eq!("0.25".parse::<Rate>().unwrap(), Rate::Fraction(0.25));
        assert!("1.5".parse::<Rate>().is_err());
        assert!("x".parse::<Rate>().is_err());
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        for r in Representation::ALL {
            assert_eq!(r.name().parse::<Representation>().unwrap(), r);
        }
    }

    #[test]
    fn windowed_region() {
        let spec = rates(Rate::Count(1), Rate::Count(1)).with_window(Some(8));
        assert_eq!(spec.region(16, 24).unwrap(), (8, 8));
        assert!(spec.region(14, 16).is_err());
    }

    proptest! {
        #[test]
        fn fraction_resolution_is_monotone(side in 1usize..512, a in 0.0f64..0.999, b in 0.0f64..0.999) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let rlo = Rate::Fraction(lo).resolve(side).unwrap();
            let rhi = Rate::Fraction(hi).resolve(side).unwrap();
            prop_assert!(rlo <= rhi);
            prop_assert!(rhi < side);
        }

        #[test]
        fn count_resolution_is_exact(side in 2usize..512, m in 0usize..512) {
            let m = m % side;
            prop_assert_eq!(Rate::Count(m).resolve(side).unwrap(), m);
        }
    }
}
