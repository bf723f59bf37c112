//! Events as conjunctions of ground feature literals.
//!
//! An [`Event`] is a named set of `key=value` literals. The empty set is
//! `Any`. Generality is the subset order on literal sets: an event with fewer
//! literals admits more instances, so `subsumes(general, specific)` holds when
//! `general`'s literals are a subset of `specific`'s.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::temporal::TimeInterval;

/// Name of the unconstrained event.
pub const ANY: &str = "Any";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EventError {
    #[error("invalid identifier `{0}`")]
    BadIdentifier(String),
    #[error("malformed feature literal `{0}` (expected key=value)")]
    BadFeature(String),
    #[error("event `{event}` assigns two values to `{key}`")]
    ConflictingFeature { event: String, key: String },
    #[error("malformed event declaration `{0}` (expected `name: key=value, ...`)")]
    BadDeclaration(String),
    #[error("malformed instance line `{0}` (expected `id start end key=value ...`)")]
    BadInstance(String),
    #[error("instance `{id}`: {source}")]
    BadInstanceTime {
        id: String,
        #[source]
        source: crate::temporal::DegenerateInterval,
    },
}

/// Identifiers may not contain whitespace or any of the format delimiters.
pub fn valid_identifier(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || matches!(c, ':' | '=' | ',' | '&' | '#'))
}

fn ident(s: &str) -> Result<String, EventError> {
    if valid_identifier(s) {
        Ok(s.to_string())
    } else {
        Err(EventError::BadIdentifier(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Feature {
    pub key: String,
    pub value: String,
}

impl Feature {
    pub fn new(key: &str, value: &str) -> Result<Self, EventError> {
        Ok(Self { key: ident(key)?, value: ident(value)? })
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.key, self.value)
    }
}

impl FromStr for Feature {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (k, v) = s.trim().split_once('=').ok_or_else(|| EventError::BadFeature(s.to_string()))?;
        Feature::new(k.trim(), v.trim()).map_err(|_| EventError::BadFeature(s.to_string()))
    }
}

/// Signals that two events demand different values for the same key; their
/// intersection admits no instance.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("`{left}` and `{right}` conflict on `{key}`")]
pub struct Conflict {
    pub left: String,
    pub right: String,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Event {
    name: String,
    features: BTreeMap<String, String>,
}

impl Event {
    pub fn new<I>(name: &str, features: I) -> Result<Self, EventError>
    where
        I: IntoIterator<Item = Feature>,
    {
        let name = ident(name)?;
        let mut map = BTreeMap::new();
        for f in features {
            if let Some(prev) = map.insert(f.key.clone(), f.value.clone()) {
                if prev != f.value {
                    return Err(EventError::ConflictingFeature { event: name, key: f.key });
                }
            }
        }
        Ok(Self { name, features: map })
    }

    /// Shorthand for tests and fixtures: `Event::of("Old-Try", &[("program", "Old")])`.
    pub fn of(name: &str, features: &[(&str, &str)]) -> Result<Self, EventError> {
        let parsed = features.iter().map(|(k, v)| Feature::new(k, v)).collect::<Result<Vec<_>, _>>()?;
        Self::new(name, parsed)
    }

    pub fn any() -> Self {
        Self { name: ANY.to_string(), features: BTreeMap::new() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_any(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> impl Iterator<Item = (&str, &str)> {
        self.features.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn feature(&self, key: &str) -> Option<&str> {
        self.features.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Same literal set, regardless of name.
    pub fn same_features(&self, other: &Event) -> bool {
        self.features == other.features
    }

    pub fn renamed(mut self, name: &str) -> Result<Self, EventError> {
        self.name = ident(name)?;
        Ok(self)
    }

    /// The literals shared by both events: the most specific event that both
    /// `a` and `b` fall under.
    pub fn generalize(a: &Event, b: &Event, name: &str) -> Result<Event, EventError> {
        let shared = a
            .features
            .iter()
            .filter(|(k, v)| b.features.get(*k) == Some(*v))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(Event { name: ident(name)?, features: shared })
    }

    /// Declaration form, `name: k=v, k=v`.
    pub fn declaration(&self) -> String {
        let lits: Vec<String> = self.features.iter().map(|(k, v)| format!("{k}={v}")).collect();
        if lits.is_empty() {
            format!("{}:", self.name)
        } else {
            format!("{}: {}", self.name, lits.join(", "))
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for Event {
    type Err = EventError;

    /// Parses `name: key=value, key=value`.
    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let (name, body) = line.split_once(':').ok_or_else(|| EventError::BadDeclaration(line.to_string()))?;
        let features = body
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Feature>, _>>()?;
        Event::new(name.trim(), features)
    }
}

pub fn subsumes(general: &Event, specific: &Event) -> bool {
    general.features.iter().all(|(k, v)| specific.features.get(k) == Some(v))
}

/// The conjunction of two events, or the key on which they contradict.
pub fn intersect(a: &Event, b: &Event) -> Result<Event, Conflict> {
    for (k, v) in &b.features {
        if let Some(existing) = a.features.get(k) {
            if existing != v {
                return Err(Conflict { left: a.name.clone(), right: b.name.clone(), key: k.clone() });
            }
        }
    }
    if b.is_any() || subsumes(b, a) {
        return Ok(a.clone());
    }
    if a.is_any() || subsumes(a, b) {
        return Ok(b.clone());
    }
    let mut features = a.features.clone();
    features.extend(b.features.iter().map(|(k, v)| (k.clone(), v.clone())));
    Ok(Event { name: format!("{}&{}", a.name, b.name), features })
}

/// A fully specified observation: every schema key has a value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventInstance {
    id: String,
    time: TimeInterval,
    observed: BTreeMap<String, String>,
}

impl EventInstance {
    pub fn new<I>(id: &str, time: TimeInterval, observed: I) -> Result<Self, EventError>
    where
        I: IntoIterator<Item = Feature>,
    {
        let id = ident(id)?;
        let mut map = BTreeMap::new();
        for f in observed {
            if let Some(prev) = map.insert(f.key.clone(), f.value.clone()) {
                if prev != f.value {
                    return Err(EventError::ConflictingFeature { event: id, key: f.key });
                }
            }
        }
        Ok(Self { id, time, observed: map })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn time(&self) -> TimeInterval {
        self.time
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.observed.get(key).map(String::as_str)
    }

    pub fn observed(&self) -> impl Iterator<Item = (&str, &str)> {
        self.observed.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Line form, `id start end key=value ...`.
    pub fn to_line(&self) -> String {
        let mut line = format!("{} {} {}", self.id, self.time.start(), self.time.end());
        for (k, v) in &self.observed {
            line.push_str(&format!(" {k}={v}"));
        }
        line
    }
}

impl FromStr for EventInstance {
    type Err = EventError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || EventError::BadInstance(line.to_string());
        let mut parts = line.split_whitespace();
        let id = parts.next().ok_or_else(bad)?;
        let start: u64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let end: u64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let time = TimeInterval::new(start, end)
            .map_err(|source| EventError::BadInstanceTime { id: id.to_string(), source })?;
        let observed = parts.map(str::parse).collect::<Result<Vec<Feature>, _>>()?;
        EventInstance::new(id, time, observed)
    }
}

pub fn satisfies(instance: &EventInstance, event: &Event) -> bool {
    event.features.iter().all(|(k, v)| instance.observed.get(k) == Some(v))
}

/// Every catalog event the instance satisfies, in catalog order.
pub fn classify<'a>(instance: &EventInstance, catalog: &'a [Event]) -> Vec<&'a Event> {
    catalog.iter().filter(|e| satisfies(instance, e)).collect()
}

/// What executing an action stamps onto the instance it causes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionBinding {
    action: String,
    caused: BTreeMap<String, String>,
}

impl ActionBinding {
    pub fn new<I>(action: &str, caused: I) -> Result<Self, EventError>
    where
        I: IntoIterator<Item = Feature>,
    {
        let event = Event::new(action, caused)?;
        Ok(Self { action: event.name, caused: event.features })
    }

    /// Binds `action` to the literals of the event its execution causes.
    pub fn from_event(action: &str, event: &Event) -> Result<Self, EventError> {
        Ok(Self { action: ident(action)?, caused: event.features.clone() })
    }

    pub fn action(&self) -> &str {
        &self.action
    }

    pub fn caused(&self) -> impl Iterator<Item = (&str, &str)> {
        self.caused.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}
