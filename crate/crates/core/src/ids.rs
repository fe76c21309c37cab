//! Typed identifiers. Each id kind has its own counter and a one-letter
//! prefix in its textual form (`u3`, `s1`, `a17`, `n2`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

macro_rules! define_id {
    ($name:ident, $prefix:literal, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl $name {
            pub const PREFIX: char = $prefix;
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}{}", $prefix, self.0)
            }
        }

        impl FromStr for $name {
            type Err = IdParseError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let digits = s.strip_prefix($prefix).unwrap_or(s);
                digits
                    .parse::<u64>()
                    .map($name)
                    .map_err(|_| IdParseError {
                        input: s.to_string(),
                        expected: $prefix,
                    })
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

define_id!(ActionId, 'a', "Identifier of an [`ActionRecord`](crate::model::ActionRecord).");
define_id!(UnitId, 'u', "Identifier of a [`Unit`](crate::model::Unit).");
define_id!(SessionId, 's', "Identifier of a [`Session`](crate::model::Session).");
define_id!(AnnotationId, 'n', "Identifier of an [`Annotation`](crate::model::Annotation).");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid id `{input}` (expected `{expected}<number>`)")]
pub struct IdParseError {
    pub input: String,
    pub expected: char,
}

/// A node of either workflow graph: a session version or a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRef {
    Session(SessionId),
    Unit(UnitId),
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Session(id) => id.fmt(f),
            NodeRef::Unit(id) => id.fmt(f),
        }
    }
}

impl FromStr for NodeRef {
    type Err = IdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.chars().next() {
            Some(SessionId::PREFIX) => s.parse().map(NodeRef::Session),
            Some(UnitId::PREFIX) => s.parse().map(NodeRef::Unit),
            _ => Err(IdParseError {
                input: s.to_string(),
                expected: UnitId::PREFIX,
            }),
        }
    }
}

impl Serialize for NodeRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Monotonic id allocator; ids are never reused.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdCounters {
    pub action: u64,
    pub unit: u64,
    pub session: u64,
    pub annotation: u64,
}

impl IdCounters {
    pub fn next_action(&mut self) -> ActionId {
        self.action += 1;
        ActionId(self.action)
    }

    pub fn next_unit(&mut self) -> UnitId {
        self.unit += 1;
        UnitId(self.unit)
    }

    pub fn next_session(&mut self) -> SessionId {
        self.session += 1;
        SessionId(self.session)
    }

    pub fn next_annotation(&mut self) -> AnnotationId {
        self.annotation += 1;
        AnnotationId(self.annotation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_and_without_prefix() {
        assert_eq!("u3".parse::<UnitId>().unwrap(), UnitId(3));
        assert_eq!("3".parse::<UnitId>().unwrap(), UnitId(3));
        assert!("s3".parse::<UnitId>().is_err());
        assert_eq!("s2".parse::<NodeRef>().unwrap(), NodeRef::Session(SessionId(2)));
        assert_eq!("u9".parse::<NodeRef>().unwrap(), NodeRef::Unit(UnitId(9)));
        assert!("a1".parse::<NodeRef>().is_err());
    }

    #[test]
    fn serde_uses_text_form() {
        let json = serde_json::to_string(&ActionId(12)).unwrap();
        assert_eq!(json, "\"a12\"");
        let back: ActionId = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ActionId(12));
    }
}
