//! Choosing actions, preconditions, and plan steps from interval evidence.
//!
//! Every choice here is made against an [`OccurrenceStore`] snapshot and only
//! commits when intervals are strictly separated under
//! [`compare`](crate::interval_stats::compare). Overlap means "not enough
//! evidence": the caller gets [`Outcome::Undecided`] unless an advice rule
//! applies.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::event_model::{intersect, subsumes, Event, EventError};
use crate::interval_stats::{compare, Comparison, ProbInterval, StatsError, TrialCounts};
use crate::knowledge_base::{KbError, OccurrenceStore, PcaQuery};

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error("no candidate actions supplied")]
    NoActions,
    #[error("a plan needs at least one subgoal")]
    EmptyPlan,
    #[error("insufficient data for `{0}`")]
    InsufficientData(String),
    #[error("rule line {line}: {msg}")]
    RuleParse { line: usize, msg: String },
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Event(#[from] EventError),
}

pub type Result<T> = std::result::Result<T, DecisionError>;

/// An action together with the event its execution causes.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpec {
    name: String,
    try_event: Event,
}

impl ActionSpec {
    pub fn new(name: &str, try_event: Event) -> Self {
        Self { name: name.to_string(), try_event }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn try_event(&self) -> &Event {
        &self.try_event
    }
}

/// What was learned about one action while deciding.
#[derive(Debug, Clone, PartialEq)]
pub enum Evidence {
    Measured { action: String, reference: String, counts: TrialCounts, interval: ProbInterval },
    Missing { action: String, reference: String },
}

impl Evidence {
    pub fn action(&self) -> &str {
        match self {
            Evidence::Measured { action, .. } | Evidence::Missing { action, .. } => action,
        }
    }

    pub fn interval(&self) -> Option<&ProbInterval> {
        match self {
            Evidence::Measured { interval, .. } => Some(interval),
            Evidence::Missing { .. } => None,
        }
    }
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Evidence::Measured { action, reference, counts, interval } => {
                write!(f, "{action} {reference} {counts} {interval} {}", interval.method())
            }
            Evidence::Missing { action, reference } => write!(f, "{action} {reference} n=0 missing"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Chosen(String),
    AdviceChosen { action: String, rule: String },
    Undecided,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Chosen(a) => write!(f, "Chosen {a}"),
            Outcome::AdviceChosen { action, rule } => write!(f, "AdviceChosen {action} rule:{rule}"),
            Outcome::Undecided => f.write_str("Undecided"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub outcome: Outcome,
    pub goal: String,
    pub context: String,
    pub alpha: f64,
    evidence: Vec<Evidence>,
}

impl Decision {
    pub fn evidence(&self) -> &[Evidence] {
        &self.evidence
    }

    /// `(action, interval)` for every action that had data.
    pub fn justification(&self) -> impl Iterator<Item = (&str, &ProbInterval)> {
        self.evidence.iter().filter_map(|e| e.interval().map(|iv| (e.action(), iv)))
    }

    pub fn missing(&self) -> impl Iterator<Item = &str> {
        self.evidence.iter().filter(|e| e.interval().is_none()).map(Evidence::action)
    }

    pub fn interval_of(&self, action: &str) -> Option<&ProbInterval> {
        self.evidence.iter().find(|e| e.action() == action).and_then(Evidence::interval)
    }

    pub fn action(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Chosen(a) => Some(a),
            Outcome::AdviceChosen { action, .. } => Some(action),
            Outcome::Undecided => None,
        }
    }

    pub fn is_decided(&self) -> bool {
        self.outcome != Outcome::Undecided
    }

    /// Fixed line format: a header, one line per inspected action, the verdict.
    pub fn trace(&self) -> String {
        let mut out = format!("decide goal={} context={} alpha={}\n", self.goal, self.context, self.alpha);
        for e in &self.evidence {
            let _ = writeln!(out, "  {e}");
        }
        let _ = writeln!(out, "verdict {}", self.outcome);
        out
    }

    /// An action whose interval lies strictly below some competitor's.
    fn dominated(&self, action: &str) -> bool {
        let Some(mine) = self.interval_of(action) else {
            return false;
        };
        self.justification().any(|(other, iv)| other != action && matches!(compare(mine, iv), Ok(Comparison::Less)))
    }
}

/// Condition under which an advice rule may fire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Guard {
    /// Both actions have data and neither interval is strictly below the other.
    Incomparable(String, String),
    /// The action has no trials in the current context.
    Missing(String),
}

impl Guard {
    pub fn holds(&self, decision: &Decision) -> bool {
        match self {
            Guard::Incomparable(a, b) => match (decision.interval_of(a), decision.interval_of(b)) {
                (Some(x), Some(y)) => matches!(compare(x, y), Ok(Comparison::Incomparable | Comparison::Equal)),
                _ => false,
            },
            Guard::Missing(a) => decision.missing().any(|m| m == a),
        }
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::Incomparable(a, b) => write!(f, "incomparable({a},{b})"),
            Guard::Missing(a) => write!(f, "missing({a})"),
        }
    }
}

/// `id: when <guard> prefer <action>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdviceRule {
    pub id: String,
    pub guard: Guard,
    pub preferred: String,
}

impl fmt::Display for AdviceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: when {} prefer {}", self.id, self.guard, self.preferred)
    }
}

impl FromStr for AdviceRule {
    type Err = String;

    fn from_str(line: &str) -> std::result::Result<Self, String> {
        let (id, body) = line.split_once(':').ok_or("expected `id: when <guard> prefer <action>`")?;
        let id = id.trim();
        if !crate::event_model::valid_identifier(id) {
            return Err(format!("bad rule id `{id}`"));
        }
        let body = body.trim().strip_prefix("when").ok_or("missing `when`")?;
        let (guard, preferred) = body.rsplit_once("prefer").ok_or("missing `prefer`")?;
        let preferred = preferred.trim();
        if !crate::event_model::valid_identifier(preferred) {
            return Err(format!("bad preferred action `{preferred}`"));
        }
        let guard = guard.trim();
        let args = |prefix: &str| -> Option<Vec<String>> {
            let inner = guard.strip_prefix(prefix)?.trim().strip_prefix('(')?.strip_suffix(')')?;
            Some(inner.split(',').map(|s| s.trim().to_string()).collect())
        };
        let guard = if let Some(a) = args("incomparable") {
            match a.as_slice() {
                [x, y] if !x.is_empty() && !y.is_empty() => Guard::Incomparable(x.clone(), y.clone()),
                _ => return Err("incomparable takes two actions".into()),
            }
        } else if let Some(a) = args("missing") {
            match a.as_slice() {
                [x] if !x.is_empty() => Guard::Missing(x.clone()),
                _ => return Err("missing takes one action".into()),
            }
        } else {
            return Err(format!("unknown guard `{guard}`"));
        };
        Ok(AdviceRule { id: id.to_string(), guard, preferred: preferred.to_string() })
    }
}

/// Parses a rule file: one rule per line, `#` comments allowed.
pub fn parse_rules(text: &str) -> Result<Vec<AdviceRule>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(line, l)| l.parse().map_err(|msg| DecisionError::RuleParse { line, msg }))
        .collect()
}

fn measure(
    store: &OccurrenceStore,
    goal: &Event,
    context: &Event,
    alpha: f64,
    action: &ActionSpec,
) -> Result<Evidence> {
    let q = PcaQuery::new(goal.clone(), action.try_event.clone(), alpha).within(context.clone());
    let counts = store.trial_counts(&q);
    if counts.n() == 0 {
        return Ok(Evidence::Missing { action: action.name.clone(), reference: action.try_event.name().to_string() });
    }
    let interval = store.pca(&q)?;
    Ok(Evidence::Measured {
        action: action.name.clone(),
        reference: action.try_event.name().to_string(),
        counts,
        interval,
    })
}

/// Picks `a` only when every other action's interval lies strictly below
/// `a`'s and no action lacks data.
pub fn best_action(
    store: &OccurrenceStore,
    goal: &Event,
    context: &Event,
    alpha: f64,
    actions: &[ActionSpec],
) -> Result<Decision> {
    if actions.is_empty() {
        return Err(DecisionError::NoActions);
    }
    let evidence = actions.iter().map(|a| measure(store, goal, context, alpha, a)).collect::<Result<Vec<_>>>()?;
    let mut decision = Decision {
        outcome: Outcome::Undecided,
        goal: goal.name().to_string(),
        context: context.name().to_string(),
        alpha,
        evidence,
    };
    if decision.missing().next().is_some() {
        return Ok(decision);
    }
    let winner = decision.justification().find(|(a, mine)| {
        decision
            .justification()
            .filter(|(b, _)| b != a)
            .all(|(_, theirs)| matches!(compare(theirs, mine), Ok(Comparison::Less)))
    });
    if let Some((a, _)) = winner {
        decision.outcome = Outcome::Chosen(a.to_string());
    }
    Ok(decision)
}

/// Statistical choice first; advice only when that is undecided. A rule never
/// selects an action whose interval is already shown to be worse than another.
pub fn decide_with_advice(
    store: &OccurrenceStore,
    goal: &Event,
    context: &Event,
    alpha: f64,
    actions: &[ActionSpec],
    rules: &[AdviceRule],
) -> Result<Decision> {
    let mut decision = best_action(store, goal, context, alpha, actions)?;
    if decision.is_decided() {
        return Ok(decision);
    }
    let fired = rules.iter().find(|r| {
        actions.iter().any(|a| a.name == r.preferred) && r.guard.holds(&decision) && !decision.dominated(&r.preferred)
    });
    if let Some(rule) = fired {
        decision.outcome = Outcome::AdviceChosen { action: rule.preferred.clone(), rule: rule.id.clone() };
    }
    Ok(decision)
}

/// Result of precondition selection.
#[derive(Debug, Clone, PartialEq)]
pub struct PreconditionChoice {
    pub context: Event,
    pub counts: TrialCounts,
    pub interval: ProbInterval,
    pub goal: String,
    pub family: String,
    /// Every context examined, in order, with its interval when it had data.
    pub examined: Vec<(String, Option<(TrialCounts, ProbInterval)>)>,
}

impl PreconditionChoice {
    pub fn trace(&self) -> String {
        let alpha = self.interval.alpha();
        let mut out = format!("preconditions goal={} family={} alpha={alpha}\n", self.goal, self.family);
        for (name, seen) in &self.examined {
            match seen {
                Some((c, iv)) => {
                    let _ = writeln!(out, "  {name} {c} {iv} {}", iv.method());
                }
                None => {
                    let _ = writeln!(out, "  {name} n=0 missing");
                }
            }
        }
        let _ = writeln!(out, "chosen {self}");
        out
    }
}

impl fmt::Display for PreconditionChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.context.name(), self.interval)
    }
}

/// Greedy strict improvement: starting from `Any`, a candidate context
/// replaces the incumbent only when its interval is strictly above.
/// Candidates without data, or overlapping the incumbent, are ignored.
pub fn select_preconditions(
    store: &OccurrenceStore,
    goal: &Event,
    family: &Event,
    candidates: &[Event],
    alpha: f64,
) -> Result<PreconditionChoice> {
    select_from(store, goal, family, &Event::any(), candidates, alpha)
}

fn select_from(
    store: &OccurrenceStore,
    goal: &Event,
    family: &Event,
    start: &Event,
    candidates: &[Event],
    alpha: f64,
) -> Result<PreconditionChoice> {
    let query = |ctx: &Event| PcaQuery::new(goal.clone(), family.clone(), alpha).within(ctx.clone());
    let start_q = query(start);
    let start_counts = store.trial_counts(&start_q);
    if start_counts.n() == 0 {
        return Err(DecisionError::InsufficientData(format!("{} within {}", family.name(), start.name())));
    }
    let mut examined = vec![(start.name().to_string(), Some((start_counts, store.pca(&start_q)?)))];
    for c in candidates {
        let q = query(c);
        let counts = store.trial_counts(&q);
        let seen = if counts.n() == 0 { None } else { Some((counts, store.pca(&q)?)) };
        examined.push((c.name().to_string(), seen));
    }

    let mut best = 0;
    loop {
        let (_, Some((_, incumbent))) = &examined[best] else { unreachable!("incumbent always has data") };
        let incumbent = *incumbent;
        let better = examined.iter().enumerate().skip(1).find(|(idx, (_, seen))| {
            *idx != best && matches!(seen, Some((_, iv)) if matches!(compare(iv, &incumbent), Ok(Comparison::Greater)))
        });
        match better {
            Some((idx, _)) => best = idx,
            None => break,
        }
    }
    let context = if best == 0 { start.clone() } else { candidates[best - 1].clone() };
    let (counts, interval) = examined[best].1.expect("incumbent has data");
    Ok(PreconditionChoice {
        context,
        counts,
        interval,
        goal: goal.name().to_string(),
        family: family.name().to_string(),
        examined,
    })
}

/// True when some action is demonstrably more likely to reach `goal` than
/// doing nothing (`noop`).
pub fn single_action_adequate(
    store: &OccurrenceStore,
    goal: &Event,
    context: &Event,
    alpha: f64,
    actions: &[ActionSpec],
    noop: &ActionSpec,
) -> Result<bool> {
    let idle = match measure(store, goal, context, alpha, noop)? {
        Evidence::Measured { interval, .. } => interval,
        Evidence::Missing { .. } => return Err(DecisionError::InsufficientData(noop.try_event.name().to_string())),
    };
    for action in actions.iter().filter(|a| a.name != noop.name) {
        if let Evidence::Measured { interval, .. } = measure(store, goal, context, alpha, action)? {
            if compare(&interval, &idle)? == Comparison::Greater {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub subgoal: String,
    pub context: Event,
    pub action: String,
    /// The interval the action was chosen under; absent when advice picked
    /// an action that had no data.
    pub expected: Option<ProbInterval>,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanStatus {
    Complete,
    /// Planning stopped at `subgoal`; the steps before it are still usable.
    Partial {
        subgoal: String,
        decision: Decision,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub goal: String,
    pub steps: Vec<PlanStep>,
    pub status: PlanStatus,
}

impl Plan {
    pub fn is_complete(&self) -> bool {
        self.status == PlanStatus::Complete
    }

    pub fn trace(&self) -> String {
        let mut out = format!("plan goal={}\n", self.goal);
        for (i, step) in self.steps.iter().enumerate() {
            let expected = step.expected.map_or_else(|| "none".to_string(), |iv| iv.to_string());
            let _ = writeln!(
                out,
                "step {} subgoal={} context={} action={} expected={}",
                i + 1,
                step.subgoal,
                step.context.name(),
                step.action,
                expected
            );
        }
        match &self.status {
            PlanStatus::Complete => out.push_str("status complete\n"),
            PlanStatus::Partial { subgoal, decision } => {
                let _ = writeln!(out, "status partial subgoal={subgoal}");
                for line in decision.trace().lines() {
                    let _ = writeln!(out, "  {line}");
                }
            }
        }
        out
    }
}

/// Chooses one action per subgoal, in order.
///
/// The first subgoal is decided within `initial_context`. Each later one is
/// decided within the most constrained event that implies the previous
/// subgoal was achieved and still has trials for some action; when no such
/// event exists the steps are treated as independent and `initial_context`
/// is reused. Within that working context the preconditions are refined the
/// same way [`select_preconditions`] does, using catalog events that mention
/// neither the subgoal's keys nor the actions' keys, then the action is picked with
/// [`decide_with_advice`]. An undecided subgoal ends the plan as partial.
pub fn plan_sequence(
    store: &OccurrenceStore,
    goal: &Event,
    initial_context: &Event,
    alpha: f64,
    actions: &[ActionSpec],
    subgoals: &[Event],
    rules: &[AdviceRule],
) -> Result<Plan> {
    if subgoals.is_empty() {
        return Err(DecisionError::EmptyPlan);
    }
    if actions.is_empty() {
        return Err(DecisionError::NoActions);
    }
    let family = action_family(store, actions)?;
    let mut steps = Vec::new();
    for (i, subgoal) in subgoals.iter().enumerate() {
        let working = if i == 0 {
            initial_context.clone()
        } else {
            hypothetical_context(store, &subgoals[i - 1], initial_context, subgoal, alpha, actions)?
                .unwrap_or_else(|| initial_context.clone())
        };
        let outcome_keys: Vec<&str> =
            subgoal.features().chain(actions.iter().flat_map(|a| a.try_event.features())).map(|(k, _)| k).collect();
        let refinements: Vec<Event> = store
            .catalog()
            .iter()
            .filter(|c| !c.is_any() && c.features().all(|(k, _)| !outcome_keys.contains(&k)))
            .filter_map(|c| intersect(&working, c).ok())
            .filter(|c| c.len() > working.len())
            .collect();
        let context = match select_from(store, subgoal, &family, &working, &refinements, alpha) {
            Ok(choice) => choice.context,
            Err(DecisionError::InsufficientData(_)) => working,
            Err(e) => return Err(e),
        };
        let decision = decide_with_advice(store, subgoal, &context, alpha, actions, rules)?;
        match decision.action() {
            Some(action) => steps.push(PlanStep {
                subgoal: subgoal.name().to_string(),
                context,
                action: action.to_string(),
                expected: decision.interval_of(action).copied(),
                decision: decision.clone(),
            }),
            None => {
                return Ok(Plan {
                    goal: goal.name().to_string(),
                    steps,
                    status: PlanStatus::Partial { subgoal: subgoal.name().to_string(), decision },
                })
            }
        }
    }
    Ok(Plan { goal: goal.name().to_string(), steps, status: PlanStatus::Complete })
}

/// The literals every action's try event shares, named after the matching
/// catalog event when there is one.
fn action_family(store: &OccurrenceStore, actions: &[ActionSpec]) -> Result<Event> {
    let mut family = actions[0].try_event.clone();
    for a in &actions[1..] {
        family = Event::generalize(&family, &a.try_event, family.name())?;
    }
    if let Some(named) = store.catalog().iter().find(|e| e.same_features(&family)) {
        return Ok(named.clone());
    }
    Ok(if actions.len() == 1 { family } else { family.renamed("family")? })
}

/// The most constrained event that implies `previous` held and that lies
/// between `previous` and `previous ∩ initial`, among those with trials for
/// at least one action.
fn hypothetical_context(
    store: &OccurrenceStore,
    previous: &Event,
    initial: &Event,
    subgoal: &Event,
    alpha: f64,
    actions: &[ActionSpec],
) -> Result<Option<Event>> {
    let target = intersect(initial, previous).unwrap_or_else(|_| previous.clone());
    let mut candidates: Vec<Event> = vec![target.clone()];
    candidates.extend(
        store
            .catalog()
            .iter()
            .filter(|e| subsumes(previous, e) && subsumes(e, &target) && !e.same_features(&target))
            .cloned(),
    );
    // stable: ties keep the target first, then catalog order
    candidates.sort_by_key(|e| std::cmp::Reverse(e.len()));
    for candidate in candidates {
        for a in actions {
            if let Evidence::Measured { .. } = measure(store, subgoal, &candidate, alpha, a)? {
                return Ok(Some(candidate));
            }
        }
    }
    Ok(None)
}
