//! Named behaviour policies. A persona picks one policy per decision by name;
//! the registry builds it from optional parameters.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use teamspace_core::config::{ItemKind, SurveyItem};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("unknown {family} policy {name:?}")]
    Unknown { family: &'static str, name: String },
    #[error("{family} policy {name:?}: {message}")]
    BadParams { family: &'static str, name: String, message: String },
}

/// `"name"` or `{"name": ..., "params": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySpec {
    Name(String),
    Full {
        name: String,
        #[serde(default)]
        params: Value,
    },
}

impl PolicySpec {
    pub fn named(name: &str) -> Self {
        PolicySpec::Name(name.to_string())
    }

    pub fn with(name: &str, params: Value) -> Self {
        PolicySpec::Full { name: name.to_string(), params }
    }

    fn parts(&self) -> (&str, &Value) {
        match self {
            PolicySpec::Name(n) => (n, &Value::Null),
            PolicySpec::Full { name, params } => (name, params),
        }
    }
}

pub trait EmotionPolicy: Send + Sync {
    fn self_report(&self, rng: &mut ChaCha8Rng) -> i64;
}

pub trait GuessPolicy: Send + Sync {
    fn guess(&self, rng: &mut ChaCha8Rng, own_report: Option<i64>) -> i64;
}

pub trait RankingPolicy: Send + Sync {
    fn ranking(&self, rng: &mut ChaCha8Rng, proposals: usize) -> Vec<u32>;
}

pub trait AllocationPolicy: Send + Sync {
    fn allocation(&self, rng: &mut ChaCha8Rng, proposals: usize, budget: u64) -> Vec<u64>;
}

pub trait SurveyPolicy: Send + Sync {
    fn likert(&self, rng: &mut ChaCha8Rng, item: &SurveyItem) -> u8;
    fn binary(&self, rng: &mut ChaCha8Rng, item: &SurveyItem) -> bool;
}

struct FixedEmotion(i64);
impl EmotionPolicy for FixedEmotion {
    fn self_report(&self, _: &mut ChaCha8Rng) -> i64 {
        self.0
    }
}

struct SeededEmotion;
impl EmotionPolicy for SeededEmotion {
    fn self_report(&self, rng: &mut ChaCha8Rng) -> i64 {
        rng.random_range(-5..=5)
    }
}

/// Assumes everyone feels the way the guesser does.
struct MirrorGuess;
impl GuessPolicy for MirrorGuess {
    fn guess(&self, _: &mut ChaCha8Rng, own: Option<i64>) -> i64 {
        own.unwrap_or(0)
    }
}

struct RandomGuess;
impl GuessPolicy for RandomGuess {
    fn guess(&self, rng: &mut ChaCha8Rng, _: Option<i64>) -> i64 {
        rng.random_range(-5..=5)
    }
}

struct ConstantGuess(i64);
impl GuessPolicy for ConstantGuess {
    fn guess(&self, _: &mut ChaCha8Rng, _: Option<i64>) -> i64 {
        self.0
    }
}

struct FixedRanking(Vec<u32>);
impl RankingPolicy for FixedRanking {
    fn ranking(&self, _: &mut ChaCha8Rng, _: usize) -> Vec<u32> {
        self.0.clone()
    }
}

struct SeededRanking;
impl RankingPolicy for SeededRanking {
    fn ranking(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
        let mut v: Vec<u32> = (1..=n as u32).collect();
        v.shuffle(rng);
        v
    }
}

struct EvenAllocation;
impl AllocationPolicy for EvenAllocation {
    fn allocation(&self, _: &mut ChaCha8Rng, n: usize, budget: u64) -> Vec<u64> {
        let mut v = vec![budget / n as u64; n];
        v[0] += budget - v.iter().sum::<u64>();
        v
    }
}

struct FixedAllocation(Vec<u64>);
impl AllocationPolicy for FixedAllocation {
    fn allocation(&self, _: &mut ChaCha8Rng, _: usize, _: u64) -> Vec<u64> {
        self.0.clone()
    }
}

/// Even split with each share moved by up to `spread` of its size, in steps of 1000.
struct PerturbedAllocation(f64);
impl AllocationPolicy for PerturbedAllocation {
    fn allocation(&self, rng: &mut ChaCha8Rng, n: usize, budget: u64) -> Vec<u64> {
        let weights: Vec<f64> = (0..n).map(|_| 1.0 + self.0 * rng.random_range(-1.0..=1.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut v: Vec<u64> =
            weights.iter().map(|w| ((w / total * budget as f64) / 1000.0).floor() as u64 * 1000).collect();
        let rest = budget - v.iter().sum::<u64>();
        v[0] += rest;
        v
    }
}

struct FixedSurvey(u8);
impl SurveyPolicy for FixedSurvey {
    fn likert(&self, _: &mut ChaCha8Rng, _: &SurveyItem) -> u8 {
        self.0
    }
    fn binary(&self, _: &mut ChaCha8Rng, _: &SurveyItem) -> bool {
        true
    }
}

/// Answers as a content member would: agree with positive items, disagree with reverse-coded ones.
struct AgreeableSurvey;
impl SurveyPolicy for AgreeableSurvey {
    fn likert(&self, _: &mut ChaCha8Rng, item: &SurveyItem) -> u8 {
        if item.reverse {
            1
        } else {
            5
        }
    }
    fn binary(&self, _: &mut ChaCha8Rng, _: &SurveyItem) -> bool {
        true
    }
}

struct SeededSurvey;
impl SurveyPolicy for SeededSurvey {
    fn likert(&self, rng: &mut ChaCha8Rng, _: &SurveyItem) -> u8 {
        rng.random_range(1..=5)
    }
    fn binary(&self, rng: &mut ChaCha8Rng, item: &SurveyItem) -> bool {
        debug_assert_eq!(item.kind, ItemKind::Binary);
        rng.random_bool(0.5)
    }
}

type Factory<T> = fn(&str, &Value) -> Result<Arc<T>, PolicyError>;

fn param<T: serde::de::DeserializeOwned>(family: &'static str, name: &str, params: &Value) -> Result<T, PolicyError> {
    let value = params.get("value").cloned().unwrap_or_else(|| params.clone());
    serde_json::from_value(value).map_err(|e| PolicyError::BadParams {
        family,
        name: name.into(),
        message: e.to_string(),
    })
}

/// One registry per decision family.
pub struct Registry<T: ?Sized> {
    family: &'static str,
    factories: BTreeMap<&'static str, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    fn new(family: &'static str) -> Self {
        Self { family, factories: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &'static str, factory: Factory<T>) {
        self.factories.insert(name, factory);
    }

    pub fn build(&self, spec: &PolicySpec) -> Result<Arc<T>, PolicyError> {
        let (name, params) = spec.parts();
        let factory =
            self.factories.get(name).ok_or_else(|| PolicyError::Unknown { family: self.family, name: name.into() })?;
        factory(name, params)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().copied()
    }
}

pub struct PolicyRegistry {
    pub emotion: Registry<dyn EmotionPolicy>,
    pub guess: Registry<dyn GuessPolicy>,
    pub ranking: Registry<dyn RankingPolicy>,
    pub allocation: Registry<dyn AllocationPolicy>,
    pub survey: Registry<dyn SurveyPolicy>,
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl PolicyRegistry {
    pub fn standard() -> Self {
        let mut emotion: Registry<dyn EmotionPolicy> = Registry::new("emotion");
        emotion.register("fixed", |n, p| {
            let v: i64 = param("emotion", n, p)?;
            Ok(Arc::new(FixedEmotion(v)))
        });
        emotion.register("seeded", |_, _| Ok(Arc::new(SeededEmotion)));

        let mut guess: Registry<dyn GuessPolicy> = Registry::new("guess");
        guess.register("truthful-mirror", |_, _| Ok(Arc::new(MirrorGuess)));
        guess.register("random", |_, _| Ok(Arc::new(RandomGuess)));
        guess.register("constant", |n, p| {
            let v: i64 = param("guess", n, p)?;
            Ok(Arc::new(ConstantGuess(v)))
        });

        let mut ranking: Registry<dyn RankingPolicy> = Registry::new("ranking");
        ranking.register("fixed", |n, p| Ok(Arc::new(FixedRanking(param("ranking", n, p)?))));
        ranking.register("seeded", |_, _| Ok(Arc::new(SeededRanking)));

        let mut allocation: Registry<dyn AllocationPolicy> = Registry::new("allocation");
        allocation.register("even", |_, _| Ok(Arc::new(EvenAllocation)));
        allocation.register("fixed", |n, p| Ok(Arc::new(FixedAllocation(param("allocation", n, p)?))));
        allocation.register("perturbed", |n, p| {
            let spread: f64 = if p.is_null() { 0.3 } else { param("allocation", n, p)? };
            Ok(Arc::new(PerturbedAllocation(spread)))
        });

        let mut survey: Registry<dyn SurveyPolicy> = Registry::new("survey");
        survey.register("fixed", |n, p| {
            let v: u8 = if p.is_null() { 3 } else { param("survey", n, p)? };
            Ok(Arc::new(FixedSurvey(v)))
        });
        survey.register("agreeable", |_, _| Ok(Arc::new(AgreeableSurvey)));
        survey.register("seeded", |_, _| Ok(Arc::new(SeededSurvey)));

        Self { emotion, guess, ranking, allocation, survey }
    }
}
