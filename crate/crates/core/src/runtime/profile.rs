use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

/// Directed workflow edge, written `from->to` in profile files.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeKey {
    pub from: String,
    pub to: String,
}

impl EdgeKey {
    pub fn new(from: &str, to: &str) -> Self {
        Self { from: from.to_string(), to: to.to_string() }
    }

    /// Agent names never contain `>`, so the split point is unambiguous.
    pub fn parse(s: &str) -> Option<Self> {
        let gt = s.find('>')?;
        let from = s[..gt].strip_suffix('-')?;
        let to = &s[gt + 1..];
        if from.is_empty() || to.is_empty() || to.contains('>') {
            return None;
        }
        Some(Self::new(from, to))
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

impl Serialize for EdgeKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EdgeKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct KeyVisitor;
        impl Visitor<'_> for KeyVisitor {
            type Value = EdgeKey;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an edge key \"from->to\"")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<EdgeKey, E> {
                EdgeKey::parse(v).ok_or_else(|| E::custom(format!("bad edge key {v:?}")))
            }
        }
        d.deserialize_str(KeyVisitor)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeStats {
    pub count: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeStats {
    pub invocations: u64,
    pub total_ms: f64,
}

/// Measured communication: per-edge message counts and encoded bytes, and
/// per-agent invocation counts and time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    #[serde(default)]
    pub edges: BTreeMap<EdgeKey, EdgeStats>,
    #[serde(default)]
    pub nodes: BTreeMap<String, NodeStats>,
}

impl Profile {
    pub fn edge(&self, from: &str, to: &str) -> EdgeStats {
        self.edges.get(&EdgeKey::new(from, to)).copied().unwrap_or_default()
    }

    pub fn set_edge(&mut self, from: &str, to: &str, count: u64, bytes: u64) -> &mut Self {
        self.edges.insert(EdgeKey::new(from, to), EdgeStats { count, bytes });
        self
    }

    pub fn total_messages(&self) -> u64 {
        self.edges.values().map(|e| e.count).sum()
    }

    /// Multiplies every count and byte total by `k`.
    pub fn scaled(&self, k: u64) -> Self {
        let mut out = self.clone();
        for e in out.edges.values_mut() {
            e.count *= k;
            e.bytes *= k;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_keys() {
        assert_eq!(EdgeKey::parse("weather->news"), Some(EdgeKey::new("weather", "news")));
        assert_eq!(EdgeKey::parse("a-->b"), Some(EdgeKey::new("a-", "b")));
        assert_eq!(EdgeKey::parse("a->b-c"), Some(EdgeKey::new("a", "b-c")));
        for bad in ["ab", "->b", "a->", "a>b", "a->b->c"] {
            assert_eq!(EdgeKey::parse(bad), None, "{bad}");
        }
        assert_eq!(EdgeKey::new("a-", "b").to_string(), "a-->b");
    }
}
