//! Discrete time intervals and the thirteen Allen relations between them.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("time interval must satisfy start < end, got [{start},{end}]")]
pub struct DegenerateInterval {
    pub start: u64,
    pub end: u64,
}

/// A proper interval `[start, end]` of simulator ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeInterval {
    start: u64,
    end: u64,
}

impl TimeInterval {
    pub fn new(start: u64, end: u64) -> Result<Self, DegenerateInterval> {
        if start < end {
            Ok(Self { start, end })
        } else {
            Err(DegenerateInterval { start, end })
        }
    }

    /// The width-1 interval beginning at `tick`.
    pub fn unit(tick: u64) -> Self {
        Self { start: tick, end: tick + 1 }
    }

    pub fn start(&self) -> u64 {
        self.start
    }

    pub fn end(&self) -> u64 {
        self.end
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AllenRelation {
    Before,
    Meets,
    Overlaps,
    Starts,
    During,
    Finishes,
    Equals,
    After,
    MetBy,
    OverlappedBy,
    StartedBy,
    Contains,
    FinishedBy,
}

impl AllenRelation {
    pub const ALL: [AllenRelation; 13] = [
        AllenRelation::Before,
        AllenRelation::Meets,
        AllenRelation::Overlaps,
        AllenRelation::Starts,
        AllenRelation::During,
        AllenRelation::Finishes,
        AllenRelation::Equals,
        AllenRelation::After,
        AllenRelation::MetBy,
        AllenRelation::OverlappedBy,
        AllenRelation::StartedBy,
        AllenRelation::Contains,
        AllenRelation::FinishedBy,
    ];

    pub fn inverse(self) -> Self {
        use AllenRelation::*;
        match self {
            Before => After,
            Meets => MetBy,
            Overlaps => OverlappedBy,
            Starts => StartedBy,
            During => Contains,
            Finishes => FinishedBy,
            Equals => Equals,
            After => Before,
            MetBy => Meets,
            OverlappedBy => Overlaps,
            StartedBy => Starts,
            Contains => During,
            FinishedBy => Finishes,
        }
    }
}

impl fmt::Display for AllenRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The relation `a R b` determined by endpoint comparisons.
pub fn relate(a: TimeInterval, b: TimeInterval) -> AllenRelation {
    use std::cmp::Ordering::*;
    use AllenRelation::*;

    if a.end < b.start {
        return Before;
    }
    if b.end < a.start {
        return After;
    }
    if a.end == b.start {
        return Meets;
    }
    if b.end == a.start {
        return MetBy;
    }
    match (a.start.cmp(&b.start), a.end.cmp(&b.end)) {
        (Equal, Equal) => Equals,
        (Equal, Less) => Starts,
        (Equal, Greater) => StartedBy,
        (Greater, Equal) => Finishes,
        (Less, Equal) => FinishedBy,
        (Greater, Less) => During,
        (Less, Greater) => Contains,
        (Less, Less) => Overlaps,
        (Greater, Greater) => OverlappedBy,
    }
}

/// Whether a state that held over `state` was in force as `event` began.
pub fn holds_at_start(state: TimeInterval, event: TimeInterval) -> bool {
    matches!(relate(state, event), AllenRelation::Starts | AllenRelation::Equals)
}

/// Whether a state that held over `state` was in force as `event` ended.
pub fn holds_at_end(state: TimeInterval, event: TimeInterval) -> bool {
    matches!(relate(state, event), AllenRelation::Finishes | AllenRelation::Equals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ti(s: u64, e: u64) -> TimeInterval {
        TimeInterval::new(s, e).unwrap()
    }

    /// Independent classification straight from the definitions, phrased as
    /// point-set predicates rather than the endpoint cascade in `relate`.
    fn oracle(a: TimeInterval, b: TimeInterval) -> AllenRelation {
        use AllenRelation::*;
        let (as_, ae, bs, be) = (a.start, a.end, b.start, b.end);
        let candidates = [
            (ae < bs, Before),
            (ae == bs, Meets),
            (as_ < bs && bs < ae && ae < be, Overlaps),
            (as_ == bs && ae < be, Starts),
            (bs < as_ && ae < be, During),
            (bs < as_ && ae == be, Finishes),
            (as_ == bs && ae == be, Equals),
            (be < as_, After),
            (be == as_, MetBy),
            (bs < as_ && as_ < be && be < ae, OverlappedBy),
            (as_ == bs && be < ae, StartedBy),
            (as_ < bs && be < ae, Contains),
            (as_ < bs && ae == be, FinishedBy),
        ];
        let hits: Vec<_> = candidates.iter().filter(|c| c.0).map(|c| c.1).collect();
        assert_eq!(hits.len(), 1, "{a} vs {b}: {hits:?}");
        hits[0]
    }

    fn all_intervals(max: u64) -> Vec<TimeInterval> {
        (0..=max).flat_map(|s| (s + 1..=max).map(move |e| ti(s, e))).collect()
    }

    #[test]
    fn examples() {
        assert_eq!(relate(ti(0, 5), ti(0, 5)), AllenRelation::Equals);
        assert_eq!(relate(ti(0, 2), ti(3, 7)), AllenRelation::Before);
        assert_eq!(relate(ti(3, 5), ti(3, 9)), AllenRelation::Starts);
        assert_eq!(relate(ti(0, 3), ti(3, 7)), AllenRelation::Meets);
    }

    #[test]
    fn exhaustive_against_oracle() {
        let all = all_intervals(4);
        let mut seen = HashSet::new();
        for &a in &all {
            for &b in &all {
                let r = relate(a, b);
                assert_eq!(r, oracle(a, b), "{a} vs {b}");
                seen.insert(r);
            }
        }
        assert_eq!(seen.len(), 13);
    }

    #[test]
    fn inverse_coherence() {
        let all = all_intervals(4);
        for &a in &all {
            for &b in &all {
                assert_eq!(relate(a, b).inverse(), relate(b, a));
            }
        }
        for r in AllenRelation::ALL {
            assert_eq!(r.inverse().inverse(), r);
        }
    }

    #[test]
    fn start_and_end_states() {
        assert!(holds_at_start(ti(0, 1), ti(0, 10)));
        assert!(!holds_at_start(ti(2, 3), ti(0, 10)));
        assert!(holds_at_start(ti(0, 10), ti(0, 10)));
        assert!(holds_at_end(ti(9, 10), ti(0, 10)));
        assert!(!holds_at_end(ti(0, 1), ti(0, 10)));
    }

    #[test]
    fn degenerate_rejected() {
        assert_eq!(TimeInterval::new(3, 3), Err(DegenerateInterval { start: 3, end: 3 }));
        assert!(TimeInterval::new(4, 3).is_err());
    }
}
