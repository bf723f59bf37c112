//! A seeded railroad-coupling world and a scenario runner on top of it.
//!
//! The simulator owns the ground truth (success probabilities per action and
//! condition profile); the planner only ever sees the [`EventInstance`]s it
//! emits. Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded
//! with `seed_from_u64`; a uniform draw is `(next_u64 >> 11) * 2^-53`.
//!
//! Scenario files are plain text with bracketed sections:
//!
//! ```text
//! [catalog]    Name: k=v, k=v           (one event declaration per line)
//! [actions]    Action: TryEvent
//! [rules]      id: when incomparable(A,B) prefer A
//! [world]      engine=A car1=A car2=A car1-loaded=false car2-loaded=false
//! [model]      seed N | colocate P | prob <action|*> <k=v ...|*> P
//! [schedule]   one directive per line, see [`Directive`]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::decision_engine::{
    best_action, decide_with_advice, plan_sequence, select_preconditions, single_action_adequate, ActionSpec,
    AdviceRule, DecisionError, Outcome,
};
use crate::event_model::{ActionBinding, Event, EventError, EventInstance, Feature};
use crate::interval_stats::ProbInterval;
use crate::knowledge_base::{KbError, OccurrenceStore, PcaQuery};
use crate::temporal::{holds_at_end, holds_at_start, TimeInterval};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("action `{0}` is not bound to an event")]
    UnboundAction(String),
    #[error("no probability rule covers `{action}` in profile {profile}")]
    NoProbability { action: String, profile: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    World(String),
    #[error("unknown checkpoint `{0}`")]
    UnknownCheckpoint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Event(#[from] EventError),
}

pub type Result<T> = std::result::Result<T, SimError>;

fn flag(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

fn parse_flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    pub engine_city: String,
    pub car1_city: String,
    pub car2_city: String,
    pub car1_loaded: bool,
    pub car2_loaded: bool,
    pub coupled: bool,
    pub clock: u64,
}

impl Default for WorldState {
    fn default() -> Self {
        Self {
            engine_city: "A".into(),
            car1_city: "A".into(),
            car2_city: "A".into(),
            car1_loaded: false,
            car2_loaded: false,
            coupled: false,
            clock: 0,
        }
    }
}

impl WorldState {
    /// Features describing the situation an action starts from.
    pub fn conditions(&self) -> [(&'static str, &'static str); 3] {
        [
            ("same-city", flag(self.car1_city == self.car2_city)),
            ("car1-loaded", flag(self.car1_loaded)),
            ("car2-loaded", flag(self.car2_loaded)),
        ]
    }

    /// Applies `key=value` settings; keys are `engine`, `car1`, `car2`,
    /// `car1-loaded`, `car2-loaded`.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "engine" => self.engine_city = value.to_string(),
            "car1" => self.car1_city = value.to_string(),
            "car2" => self.car2_city = value.to_string(),
            "car1-loaded" => self.car1_loaded = parse_flag(value)?,
            "car2-loaded" => self.car2_loaded = parse_flag(value)?,
            _ => return Err(format!("unknown world key `{key}`")),
        }
        Ok(())
    }
}

impl fmt::Display for WorldState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "engine={} car1={} car2={} car1-loaded={} car2-loaded={} clock={}",
            self.engine_city, self.car1_city, self.car2_city, self.car1_loaded, self.car2_loaded, self.clock
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbRule {
    /// `None` matches every action.
    pub action: Option<String>,
    pub conditions: Vec<(String, String)>,
    pub p: f64,
}

impl ProbRule {
    fn matches(&self, action: &str, world: &WorldState) -> bool {
        self.action.as_deref().is_none_or(|a| a == action)
            && self.conditions.iter().all(|(k, v)| world.conditions().iter().any(|(wk, wv)| wk == k && wv == v))
    }
}

impl FromStr for ProbRule {
    type Err = String;

    /// `<action|*> <k=v ...|*> <p>`
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let tokens: Vec<&str> = s.split_whitespace().collect();
        let [action, conds @ .., p] = tokens.as_slice() else {
            return Err("expected `prob <action|*> <k=v ...|*> <p>`".into());
        };
        if conds.is_empty() {
            return Err("missing condition profile (use `*` for any)".into());
        }
        let p: f64 = p.parse().map_err(|_| format!("bad probability `{p}`"))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(format!("probability {p} outside [0,1]"));
        }
        let conditions = if conds == ["*"] {
            Vec::new()
        } else {
            conds
                .iter()
                .map(|c| {
                    c.split_once('=')
                        .map(|(k, v)| (k.to_string(), v.to_string()))
                        .ok_or_else(|| format!("bad condition `{c}`"))
                })
                .collect::<std::result::Result<_, _>>()?
        };
        let action = (*action != "*").then(|| action.to_string());
        Ok(ProbRule { action, conditions, p })
    }
}

/// Ground truth: first matching rule gives the success probability.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutcomeModel {
    pub seed: u64,
    /// When set, car 2 is placed in car 1's city with this probability
    /// before every attempt, and elsewhere otherwise.
    pub colocate: Option<f64>,
    pub rules: Vec<ProbRule>,
}

impl OutcomeModel {
    pub fn probability(&self, action: &str, world: &WorldState) -> Option<f64> {
        self.rules.iter().find(|r| r.matches(action, world)).map(|r| r.p)
    }
}

/// Whether an attempt spanning one tick produced the Couple transition:
/// uncoupled as the attempt starts and coupled as it ends. The attempt is
/// laid out on half ticks so the two states can meet inside it.
pub fn couple_transition(success: bool) -> bool {
    let attempt = TimeInterval::new(0, 2).expect("proper interval");
    let (uncoupled, coupled) =
        if success { (TimeInterval::new(0, 1).ok(), TimeInterval::new(1, 2).ok()) } else { (Some(attempt), None) };
    uncoupled.is_some_and(|u| holds_at_start(u, attempt)) && coupled.is_some_and(|c| holds_at_end(c, attempt))
}

/// The world, its ground truth, and the generator, stepped one action per tick.
#[derive(Debug, Clone)]
pub struct Simulator {
    world: WorldState,
    model: OutcomeModel,
    rng: ChaCha8Rng,
    bindings: Vec<ActionBinding>,
    /// Keys every emitted instance must carry; absent ones get `none`.
    schema: Vec<String>,
}

impl Simulator {
    pub fn new(world: WorldState, model: OutcomeModel, actions: &[ActionSpec]) -> Result<Self> {
        let bindings = actions
            .iter()
            .map(|a| ActionBinding::from_event(a.name(), a.try_event()))
            .collect::<std::result::Result<_, _>>()?;
        let rng = ChaCha8Rng::seed_from_u64(model.seed);
        Ok(Self { world, model, rng, bindings, schema: Vec::new() })
    }

    pub fn with_schema<'a>(mut self, keys: impl IntoIterator<Item = &'a str>) -> Self {
        self.schema = keys.into_iter().map(str::to_string).collect();
        self
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut WorldState {
        &mut self.world
    }

    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Executes `action` for one tick. `forced` fixes the outcome without
    /// drawing from the generator; colocation is still drawn when enabled.
    pub fn execute(&mut self, action: &str, forced: Option<bool>) -> Result<EventInstance> {
        let binding = self
            .bindings
            .iter()
            .find(|b| b.action() == action)
            .cloned()
            .ok_or_else(|| SimError::UnboundAction(action.to_string()))?;
        self.world.coupled = false;
        if let Some(q) = self.model.colocate {
            self.world.car2_city = if self.uniform() < q {
                self.world.car1_city.clone()
            } else {
                format!("{}-away", self.world.car1_city)
            };
        }
        let success = match forced {
            Some(s) => s,
            None => {
                let p = self.model.probability(action, &self.world).ok_or_else(|| SimError::NoProbability {
                    action: action.to_string(),
                    profile: self.world.conditions().map(|(k, v)| format!("{k}={v}")).join(" "),
                })?;
                self.uniform() < p
            }
        };

        let mut observed: BTreeMap<String, String> = BTreeMap::new();
        for (k, v) in binding.caused() {
            observed.insert(k.into(), v.into());
        }
        for (k, v) in self.world.conditions() {
            observed.insert(k.into(), v.into());
        }
        observed.insert("couple".into(), flag(couple_transition(success)).into());
        for key in &self.schema {
            observed.entry(key.clone()).or_insert_with(|| "none".into());
        }

        let tick = self.world.clock;
        let features = observed.iter().map(|(k, v)| Feature::new(k, v)).collect::<std::result::Result<Vec<_>, _>>()?;
        let instance = EventInstance::new(&format!("t{tick}"), TimeInterval::unit(tick), features)?;
        self.world.coupled = success;
        self.world.clock += 1;
        Ok(instance)
    }
}

/// Expected verdict of a `decide`/`advise` directive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectedOutcome {
    kind: String,
    action: Option<String>,
    rule: Option<String>,
}

impl ExpectedOutcome {
    fn matches(&self, got: &Outcome) -> bool {
        match got {
            Outcome::Undecided => self.kind == "Undecided",
            Outcome::Chosen(a) => self.kind == "Chosen" && self.action.as_deref() == Some(a),
            Outcome::AdviceChosen { action, rule } => {
                self.kind == "AdviceChosen"
                    && self.action.as_deref() == Some(action)
                    && self.rule.as_deref().is_none_or(|r| r == rule)
            }
        }
    }
}

impl FromStr for ExpectedOutcome {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let tokens: Vec<&str> = s.split_whitespace().collect();
        let (kind, action, rule) = match tokens.as_slice() {
            ["Undecided"] => ("Undecided", None, None),
            ["Chosen", a] => ("Chosen", Some(*a), None),
            ["AdviceChosen", a] => ("AdviceChosen", Some(*a), None),
            ["AdviceChosen", a, r] => {
                let r = r.strip_prefix("rule:").ok_or("expected `rule:<id>`")?;
                ("AdviceChosen", Some(*a), Some(r))
            }
            _ => return Err(format!("bad verdict `{s}`")),
        };
        Ok(Self { kind: kind.into(), action: action.map(Into::into), rule: rule.map(Into::into) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PcaExpectation {
    /// Both bounds within one unit of the fourth decimal.
    Bounds(f64, f64),
    HiBelow(f64),
}

/// One schedule line.
#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    /// `setup k=v ...`
    Setup(Vec<(String, String)>),
    /// `execute <action> <times> [success|failure]`
    Execute { action: String, times: u64, forced: Option<bool> },
    /// `alpha <a>`
    Alpha(f64),
    /// `save <name>`: checkpoint the store.
    Save(String),
    /// `restore <name>`: roll the store back; the clock keeps running.
    Restore(String),
    /// `decide <goal> [within <ctx>] => <verdict>`; `advise` also consults rules.
    Decide { goal: String, context: Option<String>, advised: bool, expect: ExpectedOutcome },
    /// `preconditions <goal> <family> <candidates...> => <event>`
    Preconditions { goal: String, family: String, candidates: Vec<String>, expect: String },
    /// `pca <success> <reference> [<context>] => [lo, hi]` or `=> hi < x`
    Pca { success: String, reference: String, context: Option<String>, expect: PcaExpectation },
    /// `count <event> => <n>`
    Count { event: String, expect: u64 },
    /// `adequate <goal> <noop-action> => true|false`
    Adequate { goal: String, noop: String, expect: bool },
    /// `plan <goal> <subgoal...> => complete|partial`
    Plan { goal: String, subgoals: Vec<String>, expect_complete: bool },
}

impl Directive {
    pub fn is_assertion(&self) -> bool {
        !matches!(
            self,
            Directive::Setup(_)
                | Directive::Execute { .. }
                | Directive::Alpha(_)
                | Directive::Save(_)
                | Directive::Restore(_)
        )
    }
}

fn parse_unit_interval(v: &str) -> std::result::Result<f64, String> {
    v.parse::<f64>().ok().filter(|x| (0.0..=1.0).contains(x)).ok_or_else(|| format!("bad probability `{v}`"))
}

impl FromStr for Directive {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (lhs, rhs) = match s.split_once("=>") {
            Some((l, r)) => (l.trim(), Some(r.trim())),
            None => (s.trim(), None),
        };
        let tokens: Vec<&str> = lhs.split_whitespace().collect();
        let owned = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let need = || rhs.ok_or_else(|| "assertion needs `=> <expected>`".to_string());
        let none = |r: Option<&str>| match r {
            Some(_) => Err("this directive takes no `=>`".to_string()),
            None => Ok(()),
        };
        let directive = match tokens.as_slice() {
            ["setup", kvs @ ..] if !kvs.is_empty() => {
                none(rhs)?;
                Directive::Setup(
                    kvs.iter()
                        .map(|kv| {
                            kv.split_once('=')
                                .map(|(k, v)| (k.to_string(), v.to_string()))
                                .ok_or_else(|| format!("bad setting `{kv}`"))
                        })
                        .collect::<std::result::Result<_, _>>()?,
                )
            }
            ["execute", action, times, rest @ ..] => {
                none(rhs)?;
                let times = times.parse().map_err(|_| format!("bad count `{times}`"))?;
                let forced = match rest {
                    [] => None,
                    ["success"] => Some(true),
                    ["failure"] => Some(false),
                    _ => return Err("expected `success` or `failure`".into()),
                };
                Directive::Execute { action: action.to_string(), times, forced }
            }
            ["alpha", a] => {
                none(rhs)?;
                let a: f64 = a.parse().map_err(|_| format!("bad alpha `{a}`"))?;
                if !(a > 0.0 && a < 1.0) {
                    return Err(format!("alpha {a} outside (0,1)"));
                }
                Directive::Alpha(a)
            }
            ["save", name] => {
                none(rhs)?;
                Directive::Save(name.to_string())
            }
            ["restore", name] => {
                none(rhs)?;
                Directive::Restore(name.to_string())
            }
            [verb @ ("decide" | "advise"), goal, rest @ ..] => {
                let context = match rest {
                    [] => None,
                    ["within", c] => Some(c.to_string()),
                    _ => return Err("expected `within <context>`".into()),
                };
                Directive::Decide {
                    goal: goal.to_string(),
                    context,
                    advised: *verb == "advise",
                    expect: need()?.parse()?,
                }
            }
            ["preconditions", goal, family, cands @ ..] => Directive::Preconditions {
                goal: goal.to_string(),
                family: family.to_string(),
                candidates: owned(cands),
                expect: need()?.to_string(),
            },
            ["pca", success, reference, rest @ ..] if rest.len() <= 1 => {
                let r = need()?;
                let expect = if let Some(x) = r.strip_prefix("hi").and_then(|t| t.trim().strip_prefix('<')) {
                    PcaExpectation::HiBelow(parse_unit_interval(x.trim())?)
                } else {
                    let inner = r
                        .strip_prefix('[')
                        .and_then(|t| t.strip_suffix(']'))
                        .ok_or("expected `[lo, hi]` or `hi < x`")?;
                    let (lo, hi) = inner.split_once(',').ok_or("expected `[lo, hi]`")?;
                    PcaExpectation::Bounds(parse_unit_interval(lo.trim())?, parse_unit_interval(hi.trim())?)
                };
                Directive::Pca {
                    success: success.to_string(),
                    reference: reference.to_string(),
                    context: rest.first().map(|c| c.to_string()),
                    expect,
                }
            }
            ["count", event] => {
                let r = need()?;
                Directive::Count {
                    event: event.to_string(),
                    expect: r.parse().map_err(|_| format!("bad count `{r}`"))?,
                }
            }
            ["adequate", goal, noop] => {
                Directive::Adequate { goal: goal.to_string(), noop: noop.to_string(), expect: parse_flag(need()?)? }
            }
            ["plan", goal, subgoals @ ..] if !subgoals.is_empty() => {
                let expect_complete = match need()? {
                    "complete" => true,
                    "partial" => false,
                    other => return Err(format!("expected `complete` or `partial`, got `{other}`")),
                };
                Directive::Plan { goal: goal.to_string(), subgoals: owned(subgoals), expect_complete }
            }
            _ => return Err(format!("unrecognized directive `{lhs}`")),
        };
        Ok(directive)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub line: usize,
    pub text: String,
    pub directive: Directive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub catalog: Vec<Event>,
    /// `(action, try event name)`
    pub actions: Vec<(String, String)>,
    pub rules: Vec<AdviceRule>,
    pub world: WorldState,
    pub model: OutcomeModel,
    pub schedule: Vec<Step>,
}

impl Scenario {
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut s = Scenario {
            name: name.to_string(),
            catalog: Vec::new(),
            actions: Vec::new(),
            rules: Vec::new(),
            world: WorldState::default(),
            model: OutcomeModel::default(),
            schedule: Vec::new(),
        };
        let mut section = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let err = |msg: String| SimError::Parse { line, msg };
            if let Some(name) = l.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                match name {
                    "catalog" | "actions" | "rules" | "world" | "model" | "schedule" => {
                        section = Some(name.to_string())
                    }
                    _ => return Err(err(format!("unknown section `{name}`"))),
                }
                continue;
            }
            match section.as_deref() {
                None => return Err(err("content before the first section".into())),
                Some("catalog") => s.catalog.push(l.parse().map_err(|e: EventError| err(e.to_string()))?),
                Some("actions") => {
                    let (a, e) = l.split_once(':').ok_or_else(|| err("expected `Action: TryEvent`".into()))?;
                    s.actions.push((a.trim().to_string(), e.trim().to_string()));
                }
                Some("rules") => s.rules.push(l.parse().map_err(err)?),
                Some("world") => {
                    for kv in l.split_whitespace() {
                        let (k, v) = kv.split_once('=').ok_or_else(|| err(format!("bad setting `{kv}`")))?;
                        s.world.set(k, v).map_err(err)?;
                    }
                }
                Some("model") => {
                    let (key, rest) =
                        l.split_once(char::is_whitespace).ok_or_else(|| err(format!("bad model line `{l}`")))?;
                    let rest = rest.trim();
                    match key {
                        "seed" => s.model.seed = rest.parse().map_err(|_| err(format!("bad seed `{rest}`")))?,
                        "colocate" => s.model.colocate = Some(parse_unit_interval(rest).map_err(err)?),
                        "prob" => s.model.rules.push(rest.parse().map_err(err)?),
                        _ => return Err(err(format!("unknown model key `{key}`"))),
                    }
                }
                Some(_) => s.schedule.push(Step { line, text: l.to_string(), directive: l.parse().map_err(err)? }),
            }
        }
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| SimError::Io { path: path.display().to_string(), source })?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        Self::parse(name, &text)
    }

    /// An empty store over this catalog and the bound actions.
    pub fn prepare(&self) -> Result<(OccurrenceStore, Vec<ActionSpec>)> {
        let store = OccurrenceStore::new(self.catalog.clone())?;
        let actions =
            self.actions.iter().map(|(a, e)| Ok(ActionSpec::new(a, store.resolve(e)?))).collect::<Result<Vec<_>>>()?;
        Ok((store, actions))
    }

    /// A simulator for this scenario, optionally reseeded.
    pub fn simulator(&self, store: &OccurrenceStore, actions: &[ActionSpec], seed: Option<u64>) -> Result<Simulator> {
        let mut model = self.model.clone();
        if let Some(seed) = seed {
            model.seed = seed;
        }
        Ok(Simulator::new(self.world.clone(), model, actions)?.with_schema(store.schema()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssertionResult {
    pub line: usize,
    pub text: String,
    pub passed: bool,
    pub got: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub name: String,
    pub seed: u64,
    /// Everything printed while running, in order, including traces.
    pub log: Vec<String>,
    pub results: Vec<AssertionResult>,
}

impl Report {
    pub fn passed(&self) -> usize {
        self.results.iter().filter(|r| r.passed).count()
    }

    pub fn total(&self) -> usize {
        self.results.len()
    }

    pub fn all_passed(&self) -> bool {
        self.passed() == self.total()
    }

    pub fn render(&self) -> String {
        let mut out = format!("scenario {} seed={}\n", self.name, self.seed);
        for l in &self.log {
            out.push_str(l);
            out.push('\n');
        }
        let _ = writeln!(out, "{}/{} assertions passed", self.passed(), self.total());
        out
    }
}

fn within_ten_thousandth(x: f64, expected: f64) -> bool {
    ((x * 1e4).round() - (expected * 1e4).round()).abs() <= 1.0
}

fn check_pca(iv: &ProbInterval, expect: &PcaExpectation) -> bool {
    match *expect {
        PcaExpectation::Bounds(lo, hi) => within_ten_thousandth(iv.lo(), lo) && within_ten_thousandth(iv.hi(), hi),
        PcaExpectation::HiBelow(x) => iv.hi() < x,
    }
}

struct Runner<'a> {
    scenario: &'a Scenario,
    store: OccurrenceStore,
    actions: Vec<ActionSpec>,
    sim: Simulator,
    alpha: f64,
    checkpoints: BTreeMap<String, OccurrenceStore>,
    report: Report,
}

impl Runner<'_> {
    fn event(&self, expr: &str) -> Result<Event> {
        Ok(self.store.resolve(expr)?)
    }

    fn context(&self, c: &Option<String>) -> Result<Event> {
        c.as_deref().map_or_else(|| Ok(Event::any()), |c| self.event(c))
    }

    fn trace(&mut self, text: &str) {
        self.report.log.extend(text.lines().map(str::to_string));
    }

    /// Runs one directive; `Some((passed, got))` for assertions.
    fn step(&mut self, d: &Directive) -> Result<Option<(bool, String)>> {
        let alpha = self.alpha;
        match d {
            Directive::Setup(kvs) => {
                for (k, v) in kvs {
                    self.sim.world_mut().set(k, v).map_err(SimError::World)?;
                }
                let world = self.sim.world().to_string();
                self.report.log.push(format!("world {world}"));
                Ok(None)
            }
            Directive::Execute { action, times, forced } => {
                let mut successes = 0;
                for _ in 0..*times {
                    let instance = self.sim.execute(action, *forced)?;
                    successes += u64::from(instance.value("couple") == Some("true"));
                    self.store.ingest(instance)?;
                }
                let clock = self.sim.world().clock;
                self.report.log.push(format!("executed {action} x{times}: {successes} coupled, clock={clock}"));
                Ok(None)
            }
            Directive::Alpha(a) => {
                self.alpha = *a;
                Ok(None)
            }
            Directive::Save(name) => {
                self.checkpoints.insert(name.clone(), self.store.snapshot());
                Ok(None)
            }
            Directive::Restore(name) => {
                let saved = self.checkpoints.get(name).ok_or_else(|| SimError::UnknownCheckpoint(name.clone()))?;
                self.store = saved.snapshot();
                self.report.log.push(format!("restored {name}: {} instances", self.store.len()));
                Ok(None)
            }
            Directive::Decide { goal, context, advised, expect } => {
                let (goal, context) = (self.event(goal)?, self.context(context)?);
                let decision = if *advised {
                    decide_with_advice(&self.store, &goal, &context, alpha, &self.actions, &self.scenario.rules)?
                } else {
                    best_action(&self.store, &goal, &context, alpha, &self.actions)?
                };
                self.trace(&decision.trace());
                Ok(Some((expect.matches(&decision.outcome), decision.outcome.to_string())))
            }
            Directive::Preconditions { goal, family, candidates, expect } => {
                let cands = candidates.iter().map(|c| self.event(c)).collect::<Result<Vec<_>>>()?;
                let choice =
                    select_preconditions(&self.store, &self.event(goal)?, &self.event(family)?, &cands, alpha)?;
                self.trace(&choice.trace());
                Ok(Some((choice.context.name() == expect, choice.to_string())))
            }
            Directive::Pca { success, reference, context, expect } => {
                let q =
                    PcaQuery::new(self.event(success)?, self.event(reference)?, alpha).within(self.context(context)?);
                let counts = self.store.trial_counts(&q);
                let iv = self.store.pca(&q)?;
                self.report.log.push(format!("pca {success} {reference} {counts} {iv} {}", iv.method()));
                Ok(Some((check_pca(&iv, expect), iv.to_string())))
            }
            Directive::Count { event, expect } => {
                let n = self.store.count(&self.event(event)?);
                Ok(Some((n == *expect, n.to_string())))
            }
            Directive::Adequate { goal, noop, expect } => {
                let noop = self
                    .actions
                    .iter()
                    .find(|a| a.name() == noop)
                    .cloned()
                    .ok_or_else(|| SimError::UnboundAction(noop.clone()))?;
                let ok = single_action_adequate(
                    &self.store,
                    &self.event(goal)?,
                    &Event::any(),
                    alpha,
                    &self.actions,
                    &noop,
                )?;
                Ok(Some((ok == *expect, ok.to_string())))
            }
            Directive::Plan { goal, subgoals, expect_complete } => {
                let subs = subgoals.iter().map(|s| self.event(s)).collect::<Result<Vec<_>>>()?;
                let plan = plan_sequence(
                    &self.store,
                    &self.event(goal)?,
                    &Event::any(),
                    alpha,
                    &self.actions,
                    &subs,
                    &self.scenario.rules,
                )?;
                self.trace(&plan.trace());
                let got = if plan.is_complete() { "complete" } else { "partial" };
                Ok(Some((plan.is_complete() == *expect_complete, got.to_string())))
            }
        }
    }
}

/// Executes the schedule. Assertion failures and per-step errors are
/// recorded in the report and the run continues; only setup problems
/// (bad catalog or bindings) abort.
pub fn run_scenario(scenario: &Scenario, seed: Option<u64>) -> Result<Report> {
    let (store, actions) = scenario.prepare()?;
    let sim = scenario.simulator(&store, &actions, seed)?;
    let mut runner = Runner {
        scenario,
        store,
        actions,
        sim,
        alpha: 0.05,
        checkpoints: BTreeMap::new(),
        report: Report {
            name: scenario.name.clone(),
            seed: seed.unwrap_or(scenario.model.seed),
            log: Vec::new(),
            results: Vec::new(),
        },
    };
    for step in &scenario.schedule {
        let outcome = runner.step(&step.directive);
        let (passed, got) = match outcome {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(e) => (false, format!("error: {e}")),
        };
        // errors in non-assertion steps count as failed checks too
        let status = if passed { "ok  " } else { "FAIL" };
        let suffix = if passed { String::new() } else { format!(" (got {got})") };
        runner.report.log.push(format!("{status} line {}: {}{suffix}", step.line, step.text));
        runner.report.results.push(AssertionResult { line: step.line, text: step.text.clone(), passed, got });
    }
    Ok(runner.report)
}
