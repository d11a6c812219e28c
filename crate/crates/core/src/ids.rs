//! Citation identifiers for indexable units.
//!
//! Every unit the retriever can return is either an FAQ pair (`FAQ-NNNN`) or a
//! document chunk (`DOC-NNNN`). The four-digit zero-padded form is what the
//! generator is told to cite and what the citation guard scans for.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest numeric part representable in the four-digit id form.
pub const MAX_UNIT_NUMBER: u16 = 9999;

/// Kind of unit. Variant order matches the lexical order of the prefixes so
/// that the derived `Ord` on [`UnitId`] equals string order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnitKind {
    Doc,
    Faq,
}

impl UnitKind {
    pub fn prefix(self) -> &'static str {
        match self {
            UnitKind::Doc => "DOC",
            UnitKind::Faq => "FAQ",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid unit id {0:?}: expected FAQ-NNNN or DOC-NNNN")]
pub struct InvalidUnitId(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UnitId {
    kind: UnitKind,
    number: u16,
}

impl UnitId {
    pub fn new(kind: UnitKind, number: u16) -> Result<Self, InvalidUnitId> {
        if number > MAX_UNIT_NUMBER {
            return Err(InvalidUnitId(format!("{}-{number}", kind.prefix())));
        }
        Ok(Self { kind, number })
    }

    pub fn doc(number: u16) -> Result<Self, InvalidUnitId> {
        Self::new(UnitKind::Doc, number)
    }

    pub fn faq(number: u16) -> Result<Self, InvalidUnitId> {
        Self::new(UnitKind::Faq, number)
    }

    pub fn kind(&self) -> UnitKind {
        self.kind
    }

    pub fn number(&self) -> u16 {
        self.number
    }

    pub fn is_faq(&self) -> bool {
        self.kind == UnitKind::Faq
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{:04}", self.kind.prefix(), self.number)
    }
}

impl FromStr for UnitId {
    type Err = InvalidUnitId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || InvalidUnitId(s.to_string());
        let (prefix, digits) = s.split_once('-').ok_or_else(bad)?;
        let kind = match prefix {
            "DOC" => UnitKind::Doc,
            "FAQ" => UnitKind::Faq,
            _ => return Err(bad()),
        };
        if digits.len() != 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let number = digits.parse().map_err(|_| bad())?;
        Ok(Self { kind, number })
    }
}

impl Serialize for UnitId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for UnitId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_and_formats() {
        let id: UnitId = "DOC-0017".parse().unwrap();
        assert_eq!(id, UnitId::doc(17).unwrap());
        assert_eq!(id.to_string(), "DOC-0017");
        assert_eq!("FAQ-0001".parse::<UnitId>().unwrap().kind(), UnitKind::Faq);
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["DOC-17", "DOC-00170", "doc-0017", "FAQ_0001", "XYZ-0001", "FAQ-00a1", ""] {
            assert!(bad.parse::<UnitId>().is_err(), "{bad}");
        }
        assert!(UnitId::doc(10_000).is_err());
    }

    proptest! {
        #[test]
        fn ord_matches_string_order(a in 0u16..=9999, b in 0u16..=9999, ka: bool, kb: bool) {
            let kind = |f: bool| if f { UnitKind::Faq } else { UnitKind::Doc };
            let x = UnitId::new(kind(ka), a).unwrap();
            let y = UnitId::new(kind(kb), b).unwrap();
            prop_assert_eq!(x.cmp(&y), x.to_string().cmp(&y.to_string()));
            prop_assert_eq!(x.to_string().parse::<UnitId>().unwrap(), x);
        }
    }
}
