//! Reference-range notation.
//!
//! The master table stores ranges as free text such as `60-110 mg/dl`,
//! `< 6.5%`, `> 1`, `3.5 mg/dl` or nothing at all. This module turns that text
//! into a typed [`RangeSpec`], renders it back canonically, and classifies
//! observations against it.
//!
//! Grammar (whitespace between tokens is ignored):
//!
//! ```text
//! range      := empty | comparator | interval | single
//! comparator := ('<' | '>') number unit?
//! interval   := number '-' number unit?
//! single     := number unit?
//! number     := digits ['.' digits]
//! unit       := remainder of the line, trimmed
//! ```
//!
//! `-` is always the interval separator, so negative numbers cannot be written.
//! Closed intervals include both endpoints; `<` and `>` are strict.

use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Measurement unit as written in the catalog. Units are compared as tokens,
/// never converted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Option<String>", into = "Option<String>")]
pub enum UnitTag {
    #[default]
    Unitless,
    Named(String),
}

impl UnitTag {
    /// Parses a unit token sequence. Blank input is [`UnitTag::Unitless`].
    ///
    /// A unit may not start with a digit or `.`, and may not contain `-`, `<`,
    /// `>` or control characters; otherwise it would be ambiguous with the
    /// numeric part of a range.
    pub fn parse(text: &str) -> Result<UnitTag> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Ok(UnitTag::Unitless);
        }
        let first = trimmed.chars().next().unwrap_or_default();
        let bad_start = first.is_ascii_digit() || first == '.';
        let bad_char = trimmed
            .chars()
            .any(|c| matches!(c, '-' | '<' | '>') || c.is_control());
        if bad_start || bad_char {
            return Err(Error::MalformedUnit(trimmed.to_string()));
        }
        Ok(UnitTag::Named(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        match self {
            UnitTag::Unitless => "",
            UnitTag::Named(u) => u,
        }
    }

    pub fn is_unitless(&self) -> bool {
        matches!(self, UnitTag::Unitless)
    }

    /// Comparison key: whitespace collapsed, lower-cased.
    pub fn normalized(&self) -> Option<String> {
        match self {
            UnitTag::Unitless => None,
            UnitTag::Named(u) => Some(
                u.split_whitespace()
                    .collect::<Vec<_>>()
                    .join(" ")
                    .to_lowercase(),
            ),
        }
    }
}

impl From<Option<String>> for UnitTag {
    fn from(value: Option<String>) -> Self {
        match value {
            Some(u) if !u.trim().is_empty() => UnitTag::Named(u),
            _ => UnitTag::Unitless,
        }
    }
}

impl From<UnitTag> for Option<String> {
    fn from(value: UnitTag) -> Self {
        match value {
            UnitTag::Unitless => None,
            UnitTag::Named(u) => Some(u),
        }
    }
}

impl fmt::Display for UnitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A parsed reference range.
///
/// All numbers are finite and non-negative, and `low <= high` for `Closed`.
/// Values built by [`parse_range`] always satisfy this.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RangeSpec {
    Closed {
        low: Decimal,
        high: Decimal,
        unit: UnitTag,
    },
    /// Value must be strictly below `limit`.
    UpperBound { limit: Decimal, unit: UnitTag },
    /// Value must be strictly above `limit`.
    LowerBound { limit: Decimal, unit: UnitTag },
    SingleValue { value: Decimal, unit: UnitTag },
    /// No numeric range; results are free text.
    Qualitative,
}

impl RangeSpec {
    pub fn unit(&self) -> &UnitTag {
        const NONE: &UnitTag = &UnitTag::Unitless;
        match self {
            RangeSpec::Closed { unit, .. }
            | RangeSpec::UpperBound { unit, .. }
            | RangeSpec::LowerBound { unit, .. }
            | RangeSpec::SingleValue { unit, .. } => unit,
            RangeSpec::Qualitative => NONE,
        }
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, RangeSpec::Qualitative)
    }

    /// Single values and blank ranges need a specialist to confirm them.
    pub fn is_degenerate(&self) -> bool {
        matches!(self, RangeSpec::SingleValue { .. } | RangeSpec::Qualitative)
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            RangeSpec::Closed { .. } => "Closed",
            RangeSpec::UpperBound { .. } => "UpperBound",
            RangeSpec::LowerBound { .. } => "LowerBound",
            RangeSpec::SingleValue { .. } => "SingleValue",
            RangeSpec::Qualitative => "Qualitative",
        }
    }
}

impl fmt::Display for RangeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_range(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    InRange,
    BelowLL,
    AboveUL,
    UnitMismatch,
    Indeterminate,
}

impl Classification {
    /// Whether the result needs a supervisor before it can be reported.
    pub fn is_violation(self) -> bool {
        matches!(
            self,
            Classification::BelowLL | Classification::AboveUL | Classification::UnitMismatch
        )
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Classification::InRange => "InRange",
            Classification::BelowLL => "BelowLL",
            Classification::AboveUL => "AboveUL",
            Classification::UnitMismatch => "UnitMismatch",
            Classification::Indeterminate => "Indeterminate",
        };
        f.write_str(s)
    }
}

fn malformed(input: &str, reason: impl Into<String>) -> Error {
    Error::MalformedRange {
        input: input.to_string(),
        reason: reason.into(),
    }
}

/// Splits a leading `digits ['.' digits]` off `text`. Returns the number and
/// the unconsumed remainder.
fn take_number(text: &str) -> Option<(Decimal, &str)> {
    let bytes = text.as_bytes();
    let int_len = bytes.iter().take_while(|b| b.is_ascii_digit()).count();
    if int_len == 0 {
        return None;
    }
    let mut end = int_len;
    if bytes.get(end) == Some(&b'.') {
        let frac_len = bytes[end + 1..]
            .iter()
            .take_while(|b| b.is_ascii_digit())
            .count();
        if frac_len == 0 {
            return None;
        }
        end += 1 + frac_len;
    }
    let number = Decimal::from_str(&text[..end]).ok()?;
    Some((number, &text[end..]))
}

/// Parses a plain non-negative decimal (`digits ['.' digits]`, surrounding
/// whitespace allowed). Used for both range bounds and typed observations.
pub fn parse_decimal(text: &str) -> Option<Decimal> {
    match take_number(text.trim()) {
        Some((number, "")) => Some(number),
        _ => None,
    }
}

fn number_then_unit(input: &str, text: &str) -> Result<(Decimal, UnitTag)> {
    let (number, rest) =
        take_number(text.trim_start()).ok_or_else(|| malformed(input, "expected a number"))?;
    let unit = UnitTag::parse(rest).map_err(|_| malformed(input, "invalid unit"))?;
    Ok((number, unit))
}

pub fn parse_range(text: &str) -> Result<RangeSpec> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(RangeSpec::Qualitative);
    }
    if trimmed.contains(['\n', '\r']) {
        return Err(malformed(text, "range must fit on one line"));
    }
    let dashes = trimmed.matches('-').count();
    if dashes > 1 {
        return Err(malformed(text, "more than one '-'"));
    }

    if let Some(rest) = trimmed.strip_prefix('<') {
        let (limit, unit) = number_then_unit(text, rest)?;
        return Ok(RangeSpec::UpperBound { limit, unit });
    }
    if let Some(rest) = trimmed.strip_prefix('>') {
        let (limit, unit) = number_then_unit(text, rest)?;
        return Ok(RangeSpec::LowerBound { limit, unit });
    }

    if let Some((left, right)) = trimmed.split_once('-') {
        let low = parse_decimal(left).ok_or_else(|| malformed(text, "expected a lower bound"))?;
        let (high, unit) = number_then_unit(text, right)?;
        if low > high {
            return Err(malformed(text, "lower bound exceeds upper bound"));
        }
        return Ok(RangeSpec::Closed { low, high, unit });
    }

    let (value, unit) = number_then_unit(text, trimmed)?;
    Ok(RangeSpec::SingleValue { value, unit })
}

fn canonical(number: &Decimal) -> String {
    number.normalize().to_string()
}

fn with_unit(mut body: String, unit: &UnitTag) -> String {
    if let UnitTag::Named(u) = unit {
        body.push(' ');
        body.push_str(u);
    }
    body
}

/// Canonical rendering: `L-H unit`, `< X unit`, `> X unit`, `X unit` or the
/// empty string. Trailing zeros are dropped.
pub fn format_range(spec: &RangeSpec) -> String {
    match spec {
        RangeSpec::Closed { low, high, unit } => {
            with_unit(format!("{}-{}", canonical(low), canonical(high)), unit)
        }
        RangeSpec::UpperBound { limit, unit } => with_unit(format!("< {}", canonical(limit)), unit),
        RangeSpec::LowerBound { limit, unit } => with_unit(format!("> {}", canonical(limit)), unit),
        RangeSpec::SingleValue { value, unit } => with_unit(canonical(value), unit),
        RangeSpec::Qualitative => String::new(),
    }
}

/// Classifies an observation. Units are checked first: if both the
/// observation and the range carry a unit and they differ, the result is
/// [`Classification::UnitMismatch`] regardless of the number.
pub fn classify(value: Decimal, unit: &UnitTag, spec: &RangeSpec) -> Classification {
    if let (Some(observed), Some(expected)) = (unit.normalized(), spec.unit().normalized()) {
        if observed != expected {
            return Classification::UnitMismatch;
        }
    }
    match spec {
        RangeSpec::Closed { low, high, .. } => {
            if value < *low {
                Classification::BelowLL
            } else if value > *high {
                Classification::AboveUL
            } else {
                Classification::InRange
            }
        }
        RangeSpec::UpperBound { limit, .. } => {
            if value >= *limit {
                Classification::AboveUL
            } else {
                Classification::InRange
            }
        }
        RangeSpec::LowerBound { limit, .. } => {
            if value <= *limit {
                Classification::BelowLL
            } else {
                Classification::InRange
            }
        }
        RangeSpec::SingleValue { value: expected, .. } => match value.cmp(expected) {
            std::cmp::Ordering::Less => Classification::BelowLL,
            std::cmp::Ordering::Equal => Classification::InRange,
            std::cmp::Ordering::Greater => Classification::AboveUL,
        },
        RangeSpec::Qualitative => Classification::Indeterminate,
    }
}
