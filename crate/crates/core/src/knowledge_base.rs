//! Occurrence counts over a declared event catalog.
//!
//! Each ingested instance is classified against the catalog and bumps the
//! counter of every event it satisfies. Events outside the catalog (ad hoc
//! intersections, mostly) are counted by scanning the retained log.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::event_model::{intersect, satisfies, Conflict, Event, EventError, EventInstance, ANY};
use crate::interval_stats::{interval_for, ProbInterval, StatsError, TrialCounts};

#[derive(Debug, Error)]
pub enum KbError {
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Conflict(#[from] Conflict),
    #[error("event `{0}` is declared twice")]
    DuplicateEvent(String),
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
    #[error("instance id `{0}` was already ingested")]
    DuplicateId(String),
    #[error("instance `{id}` has no value for schema key `{key}`")]
    MissingSchemaKey { id: String, key: String },
    #[error("insufficient data: no occurrences of `{reference}` within `{context}`")]
    InsufficientData { reference: String, context: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("replay mismatch for `{event}`: file records {recorded}, log replays to {replayed}")]
    ReplayMismatch { event: String, recorded: u64, replayed: u64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, KbError>;

/// Which counts a confidence interval is built from: trials are occurrences
/// of `reference ∩ context`, successes those that also satisfy `success`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaQuery {
    pub success: Event,
    pub reference: Event,
    pub context: Event,
    pub alpha: f64,
}

impl PcaQuery {
    pub fn new(success: Event, reference: Event, alpha: f64) -> Self {
        Self { success, reference, context: Event::any(), alpha }
    }

    pub fn within(mut self, context: Event) -> Self {
        self.context = context;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccurrenceStore {
    catalog: Vec<Event>,
    counts: Vec<u64>,
    log: Vec<EventInstance>,
    ids: HashSet<String>,
    schema: BTreeSet<String>,
}

impl Default for OccurrenceStore {
    fn default() -> Self {
        Self {
            catalog: vec![Event::any()],
            counts: vec![0],
            log: Vec::new(),
            ids: HashSet::new(),
            schema: BTreeSet::new(),
        }
    }
}

impl OccurrenceStore {
    /// A store over `catalog`; `Any` is added in front when absent.
    pub fn new<I>(catalog: I) -> Result<Self>
    where
        I: IntoIterator<Item = Event>,
    {
        let mut store = Self::default();
        for event in catalog {
            store.declare(event)?;
        }
        Ok(store)
    }

    fn declare(&mut self, event: Event) -> Result<()> {
        if event.name() == ANY && event.is_any() {
            return Ok(());
        }
        if self.catalog.iter().any(|e| e.name() == event.name()) {
            return Err(KbError::DuplicateEvent(event.name().to_string()));
        }
        self.schema.extend(event.features().map(|(k, _)| k.to_string()));
        let replayed = self.log.iter().filter(|i| satisfies(i, &event)).count() as u64;
        self.catalog.push(event);
        self.counts.push(replayed);
        Ok(())
    }

    pub fn catalog(&self) -> &[Event] {
        &self.catalog
    }

    /// Keys every instance must assign: the union of the catalog's keys.
    pub fn schema(&self) -> impl Iterator<Item = &str> {
        self.schema.iter().map(String::as_str)
    }

    pub fn instances(&self) -> &[EventInstance] {
        &self.log
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    pub fn event(&self, name: &str) -> Option<&Event> {
        self.catalog.iter().find(|e| e.name() == name)
    }

    /// Looks up `A` or an `&`-joined conjunction such as `Try&Pre-Try`.
    pub fn resolve(&self, expr: &str) -> Result<Event> {
        let mut acc: Option<Event> = None;
        for name in expr.split('&').map(str::trim) {
            let event = self.event(name).ok_or_else(|| KbError::UnknownEvent(name.to_string()))?;
            acc = Some(match acc {
                None => event.clone(),
                Some(prev) => intersect(&prev, event)?,
            });
        }
        acc.ok_or_else(|| KbError::UnknownEvent(expr.to_string()))
    }

    pub fn ingest(&mut self, instance: EventInstance) -> Result<()> {
        if self.ids.contains(instance.id()) {
            return Err(KbError::DuplicateId(instance.id().to_string()));
        }
        if let Some(key) = self.schema.iter().find(|k| instance.value(k).is_none()) {
            return Err(KbError::MissingSchemaKey { id: instance.id().to_string(), key: key.clone() });
        }
        for (idx, event) in self.catalog.iter().enumerate() {
            if satisfies(&instance, event) {
                self.counts[idx] += 1;
            }
        }
        self.ids.insert(instance.id().to_string());
        self.log.push(instance);
        Ok(())
    }

    /// Occurrences of `event`. Catalog events use the maintained counter.
    pub fn count(&self, event: &Event) -> u64 {
        match self.catalog.iter().position(|e| e.same_features(event)) {
            Some(idx) => self.counts[idx],
            None => self.log.iter().filter(|i| satisfies(i, event)).count() as u64,
        }
    }

    /// Occurrences of the conjunction of `events`; zero when they contradict.
    pub fn count_all(&self, events: &[&Event]) -> u64 {
        let mut acc = Event::any();
        for e in events {
            match intersect(&acc, e) {
                Ok(next) => acc = next,
                Err(_) => return 0,
            }
        }
        self.count(&acc)
    }

    /// `(event, count)` for every catalog event, `Any` first.
    pub fn counts(&self) -> impl Iterator<Item = (&Event, u64)> {
        self.catalog.iter().zip(self.counts.iter().copied())
    }

    pub fn trial_counts(&self, q: &PcaQuery) -> TrialCounts {
        let n = self.count_all(&[&q.reference, &q.context]);
        let y = self.count_all(&[&q.reference, &q.success, &q.context]);
        TrialCounts::new(y, n).expect("successes are a subset of trials")
    }

    /// Confidence interval for the success rate of `q.reference` within
    /// `q.context`. No trials is an error, never a `[0, 1]` interval.
    pub fn pca(&self, q: &PcaQuery) -> Result<ProbInterval> {
        let counts = self.trial_counts(q);
        match interval_for(counts, q.alpha) {
            Err(StatsError::InsufficientData) => Err(KbError::InsufficientData {
                reference: q.reference.name().to_string(),
                context: q.context.name().to_string(),
            }),
            other => Ok(other?),
        }
    }

    /// A frozen copy for consistent multi-query decisions.
    pub fn snapshot(&self) -> OccurrenceStore {
        self.clone()
    }

    /// Recomputes every catalog count from the log.
    pub fn verify(&self) -> Result<()> {
        for (event, recorded) in self.counts() {
            let replayed = self.log.iter().filter(|i| satisfies(i, event)).count() as u64;
            if replayed != recorded {
                return Err(KbError::ReplayMismatch { event: event.name().to_string(), recorded, replayed });
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("[catalog]\n");
        for event in self.catalog.iter().filter(|e| !(e.is_any() && e.name() == ANY)) {
            out.push_str(&event.declaration());
            out.push('\n');
        }
        out.push_str("[log]\n");
        for instance in &self.log {
            out.push_str(&instance.to_line());
            out.push('\n');
        }
        out.push_str("[counts]\n");
        for (event, count) in self.counts() {
            let _ = writeln!(out, "{} {}", event.name(), count);
        }
        out
    }

    /// Parses the three-section text form and checks the recorded counts
    /// against a replay of the log.
    pub fn from_text(text: &str) -> Result<Self> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Catalog,
            Log,
            Counts,
        }
        let mut section = Section::None;
        let mut store = OccurrenceStore::default();
        let mut recorded = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = idx + 1;
            let parse_err = |msg: String| KbError::Parse { line: lineno, msg };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[catalog]" => section = Section::Catalog,
                "[log]" => section = Section::Log,
                "[counts]" => section = Section::Counts,
                _ => match section {
                    Section::None => return Err(parse_err(format!("content before any section: `{line}`"))),
                    Section::Catalog => {
                        if !store.log.is_empty() {
                            return Err(parse_err("catalog entries must precede the log".into()));
                        }
                        let event: Event = line.parse().map_err(|e: EventError| parse_err(e.to_string()))?;
                        store.declare(event).map_err(|e| parse_err(e.to_string()))?;
                    }
                    Section::Log => {
                        let instance: EventInstance = line.parse().map_err(|e: EventError| parse_err(e.to_string()))?;
                        store.ingest(instance).map_err(|e| parse_err(e.to_string()))?;
                    }
                    Section::Counts => {
                        let (name, count) = line
                            .rsplit_once(char::is_whitespace)
                            .ok_or_else(|| parse_err(format!("expected `event count`, got `{line}`")))?;
                        let count: u64 = count.trim().parse().map_err(|_| parse_err(format!("bad count `{count}`")))?;
                        recorded.push((lineno, name.trim().to_string(), count));
                    }
                },
            }
        }
        for (lineno, name, count) in recorded {
            let event = store
                .event(&name)
                .ok_or_else(|| KbError::Parse { line: lineno, msg: format!("count for undeclared event `{name}`") })?;
            let replayed = store.count(event);
            if replayed != count {
                return Err(KbError::ReplayMismatch { event: name, recorded: count, replayed });
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| KbError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| KbError::Io { path: path.display().to_string(), source })?;
        Self::from_text(&text)
    }
}

/// Single-writer, many-reader wrapper. Readers take cheap snapshots; an
/// ingest never becomes visible half-applied.
#[derive(Debug, Default)]
pub struct SharedStore {
    inner: RwLock<Arc<OccurrenceStore>>,
}

impl SharedStore {
    pub fn new(store: OccurrenceStore) -> Self {
        Self { inner: RwLock::new(Arc::new(store)) }
    }

    pub fn ingest(&self, instance: EventInstance) -> Result<()> {
        let mut guard = self.inner.write().unwrap_or_else(|e| e.into_inner());
        // ingest validates before it mutates, so an error leaves no trace
        Arc::make_mut(&mut guard).ingest(instance)
    }

    pub fn snapshot(&self) -> Arc<OccurrenceStore> {
        Arc::clone(&self.inner.read().unwrap_or_else(|e| e.into_inner()))
    }
}
