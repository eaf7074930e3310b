use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use core::str::FromStr;
use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

use crate::blueprint::TokenUsage;

/// Per-token USD rates of one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Price {
    #[serde(with = "decimal_str")]
    pub usd_per_input_token: Decimal,
    #[serde(with = "decimal_str")]
    pub usd_per_output_token: Decimal,
}

impl Price {
    pub fn new(usd_per_input_token: Decimal, usd_per_output_token: Decimal) -> Self {
        Self {
            usd_per_input_token,
            usd_per_output_token,
        }
    }

    /// Rates from USD per million tokens.
    pub fn per_million(input: Decimal, output: Decimal) -> Self {
        let million = Decimal::from(1_000_000u32);
        Self::new(input / million, output / million)
    }
}

/// `model_id → rates`, loaded from a JSON object.
pub type PriceTable = BTreeMap<String, Price>;

/// input × input_rate + output × output_rate, exact.
pub fn account_cost(usage: TokenUsage, price: &Price) -> Decimal {
    Decimal::from(usage.input_tokens) * price.usd_per_input_token
        + Decimal::from(usage.output_tokens) * price.usd_per_output_token
}

/// Display rounding: four decimals, ties to even.
pub fn round_display(usd: Decimal) -> Decimal {
    usd.round_dp_with_strategy(4, RoundingStrategy::MidpointNearestEven)
}

/// Currency text for reports: at least two decimals, at most six, no
/// trailing zeros beyond the second. `150` → `150.00`, `0.0916` → `0.0916`.
pub fn format_usd(usd: Decimal) -> String {
    let mut d = usd
        .round_dp_with_strategy(6, RoundingStrategy::MidpointNearestEven)
        .normalize();
    if d.scale() < 2 {
        d.rescale(2);
    }
    d.to_string()
}

pub(crate) fn parse_decimal(s: &str) -> Option<Decimal> {
    let s = s.trim();
    Decimal::from_str_exact(s)
        .or_else(|_| Decimal::from_str(s))
        .or_else(|_| Decimal::from_scientific(s))
        .ok()
}

/// Decimals as JSON strings; accepts strings (plain or scientific) and
/// numbers on input.
pub(crate) mod decimal_str {
    use super::*;
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Decimal, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&d.normalize().to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Decimal, D::Error> {
        d.deserialize_any(DecimalVisitor)
    }

    pub(crate) struct DecimalVisitor;

    impl Visitor<'_> for DecimalVisitor {
        type Value = Decimal;

        fn expecting(&self, f: &mut core::fmt::Formatter) -> core::fmt::Result {
            f.write_str("a decimal number or numeric string")
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<Decimal, E> {
            parse_decimal(v).ok_or_else(|| E::custom(format!("`{v}` is not a decimal")))
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<Decimal, E> {
            Ok(Decimal::from(v))
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<Decimal, E> {
            Ok(Decimal::from(v))
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<Decimal, E> {
            // Display of f64 is the shortest round-trip form without exponent.
            self.visit_str(&format!("{v}"))
        }
    }
}

pub(crate) mod opt_decimal_str {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Option<Decimal>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => decimal_str::serialize(d, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Decimal>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "decimal_str")] Decimal);
        Option::<Wrap>::deserialize(d).map(|w| w.map(|Wrap(x)| x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_usage_costs_nothing() {
        let p = Price::per_million(Decimal::new(5, 0), Decimal::new(25, 0));
        assert_eq!(account_cost(TokenUsage::new(0, 0), &p), Decimal::ZERO);
    }

    #[test]
    fn display_rounding_is_half_even() {
        assert_eq!(round_display(Decimal::new(125, 5)).to_string(), "0.0012");
        assert_eq!(round_display(Decimal::new(135, 5)).to_string(), "0.0014");
        assert_eq!(round_display(Decimal::new(91640, 6)).to_string(), "0.0916");
    }

    #[test]
    fn usd_formatting() {
        assert_eq!(format_usd(Decimal::new(150, 0)), "150.00");
        assert_eq!(format_usd(Decimal::new(1500, 1)), "150.00");
        assert_eq!(format_usd(Decimal::new(1, 1)), "0.10");
        assert_eq!(format_usd(Decimal::new(916, 4)), "0.0916");
        assert_eq!(format_usd(Decimal::ZERO), "0.00");
    }

    #[test]
    fn decimal_parsing_accepts_scientific() {
        assert_eq!(parse_decimal("3.0e-6"), Some(Decimal::new(3, 6)));
        assert_eq!(parse_decimal("0.000003"), Some(Decimal::new(3, 6)));
        assert_eq!(parse_decimal("abc"), None);
    }

    #[test]
    fn price_json_accepts_strings_and_numbers() {
        let p: Price =
            serde_json::from_str(r#"{"usd_per_input_token": "5e-6", "usd_per_output_token": 0.000025}"#).unwrap();
        assert_eq!(p, Price::per_million(Decimal::new(5, 0), Decimal::new(25, 0)));
    }
}
