use std::fmt;

use super::BrokerError;

/// A concrete publish topic: one or more non-empty `/`-separated segments,
/// none containing a wildcard character.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Topic(String);

impl Topic {
    pub fn new(path: &str) -> Result<Self, BrokerError> {
        let ok = path.split('/').all(|seg| !seg.is_empty() && !seg.contains(['#', '+']));
        if ok {
            Ok(Self(path.to_string()))
        } else {
            Err(BrokerError::BadTopic(path.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Subscription pattern. `#` may appear only as the whole last segment and
/// matches zero or more trailing levels, so `agri/#` also matches `agri`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicFilter {
    path: String,
    prefix: Vec<String>,
    wildcard: bool,
}

impl TopicFilter {
    pub fn new(path: &str) -> Result<Self, BrokerError> {
        let bad = || BrokerError::BadFilter(path.to_string());
        let segments: Vec<&str> = path.split('/').collect();
        let (last, init) = segments.split_last().expect("split yields at least one item");
        let wildcard = *last == "#";
        let literal = if wildcard { init } else { &segments[..] };
        if literal.iter().any(|seg| seg.is_empty() || seg.contains(['#', '+'])) {
            return Err(bad());
        }
        Ok(Self {
            path: path.to_string(),
            prefix: literal.iter().map(|s| s.to_string()).collect(),
            wildcard,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.path
    }

    pub fn matches(&self, topic: &Topic) -> bool {
        let mut segs = topic.segments();
        for want in &self.prefix {
            match segs.next() {
                Some(seg) if seg == want => {}
                _ => return false,
            }
        }
        self.wildcard || segs.next().is_none()
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.path)
    }
}
