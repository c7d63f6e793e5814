use std::collections::BTreeMap;
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use super::SociometricsError;

/// A dictionary entry: an exact lowercase token, or a stem written `stem*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pattern {
    Exact(String),
    Prefix(String),
}

impl Pattern {
    pub fn parse(raw: &str) -> Self {
        let lower = raw.to_lowercase();
        match lower.strip_suffix('*') {
            Some(stem) => Pattern::Prefix(stem.to_string()),
            None => Pattern::Exact(lower),
        }
    }

    pub fn matches(&self, token: &str) -> bool {
        match self {
            Pattern::Exact(word) => token == word,
            Pattern::Prefix(stem) => token.starts_with(stem.as_str()),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Exact(w) => f.write_str(w),
            Pattern::Prefix(s) => write!(f, "{s}*"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct DictionaryError {
    pub line: Option<usize>,
    pub message: String,
}

/// Category name to word patterns.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LiwcDictionary {
    categories: BTreeMap<String, Vec<Pattern>>,
}

/// Keeps JSON object entries in order so duplicate keys can be reported.
struct OrderedEntries(Vec<(String, Vec<String>)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;
        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = OrderedEntries;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object mapping category names to arrays of patterns")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Vec<String>>()? {
                    out.push((k, v));
                }
                Ok(OrderedEntries(out))
            }
        }
        deserializer.deserialize_map(EntriesVisitor)
    }
}

/// 1-based line of the `nth` occurrence of `"key"` used as an object key.
fn key_line(text: &str, key: &str, nth: usize) -> Option<usize> {
    let quoted = serde_json::to_string(key).ok()?;
    let mut seen = 0;
    let mut from = 0;
    while let Some(pos) = text[from..].find(&quoted) {
        let at = from + pos;
        let rest = text[at + quoted.len()..].trim_start();
        if rest.starts_with(':') {
            if seen == nth {
                return Some(text[..at].matches('\n').count() + 1);
            }
            seen += 1;
        }
        from = at + quoted.len();
    }
    None
}

impl LiwcDictionary {
    /// Builds a dictionary from in-memory data. Categories may be empty;
    /// they simply never match.
    pub fn new<I, S, P>(categories: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<P>)>,
        S: Into<String>,
        P: AsRef<str>,
    {
        Self {
            categories: categories
                .into_iter()
                .map(|(name, pats)| (name.into(), pats.iter().map(|p| Pattern::parse(p.as_ref())).collect()))
                .collect(),
        }
    }

    /// Parses the JSON dictionary format `{"category": ["word", "stem*"]}`.
    pub fn from_json(text: &str) -> Result<Self, DictionaryError> {
        let entries: OrderedEntries =
            serde_json::from_str(text).map_err(|e| DictionaryError { line: Some(e.line()), message: e.to_string() })?;
        let mut categories = BTreeMap::new();
        let mut occurrences: BTreeMap<&str, usize> = BTreeMap::new();
        for (name, patterns) in &entries.0 {
            let nth = occurrences.entry(name.as_str()).or_insert(0);
            let line = key_line(text, name, *nth);
            *nth += 1;
            let fail = |message: String| DictionaryError { line, message };
            if name.trim().is_empty() {
                return Err(fail("empty category name".into()));
            }
            if categories.contains_key(name) {
                return Err(fail(format!("duplicate category {name:?}")));
            }
            if patterns.is_empty() {
                return Err(fail(format!("category {name:?} has no patterns")));
            }
            let mut parsed = Vec::with_capacity(patterns.len());
            for p in patterns {
                if p.is_empty() || p == "*" || p.chars().any(char::is_whitespace) {
                    return Err(fail(format!("invalid pattern {p:?} in category {name:?}")));
                }
                parsed.push(Pattern::parse(p));
            }
            categories.insert(name.clone(), parsed);
        }
        Ok(Self { categories })
    }

    /// The small dictionary shipped with the crate.
    pub fn demo() -> Self {
        Self::from_json(include_str!("../../data/demo_dictionary.json")).expect("demo dictionary is valid")
    }

    pub fn categories(&self) -> impl Iterator<Item = (&str, &[Pattern])> {
        self.categories.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn category_names(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

/// Lowercases, splits on whitespace and trims non-alphanumeric characters
/// from both ends of each token; internal apostrophes survive.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace(['\u{2019}', '\u{2018}'], "'")
        .split_whitespace()
        .map(|raw| raw.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Per-category mean of per-message normalized frequencies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LiwcProfile {
    pub values: BTreeMap<String, f64>,
    /// Messages that contributed at least one token.
    pub message_count: usize,
}

impl LiwcProfile {
    pub fn get(&self, category: &str) -> Option<f64> {
        self.values.get(category).copied()
    }
}

pub fn liwc_profile<S: AsRef<str>>(messages: &[S], dict: &LiwcDictionary) -> LiwcProfile {
    let mut sums: BTreeMap<&str, f64> = dict.category_names().map(|c| (c, 0.0)).collect();
    let mut included = 0usize;
    for message in messages {
        let tokens = tokenize(message.as_ref());
        if tokens.is_empty() {
            continue;
        }
        included += 1;
        for (name, patterns) in dict.categories() {
            let hits = tokens.iter().filter(|t| patterns.iter().any(|p| p.matches(t))).count();
            *sums.get_mut(name).expect("category present") += hits as f64 / tokens.len() as f64;
        }
    }
    if included == 0 {
        return LiwcProfile::default();
    }
    LiwcProfile {
        values: sums.into_iter().map(|(k, v)| (k.to_string(), v / included as f64)).collect(),
        message_count: included,
    }
}

/// Relative change in percent from `before` to `after` for `category`.
///
/// `Ok(None)` marks a category that was absent before and present after.
pub fn liwc_shift(before: &LiwcProfile, after: &LiwcProfile, category: &str) -> Result<Option<f64>, SociometricsError> {
    let unknown = || SociometricsError::UnknownCategory(category.to_string());
    let b = before.get(category).ok_or_else(unknown)?;
    let a = after.get(category).ok_or_else(unknown)?;
    if b == 0.0 {
        return Ok(if a == 0.0 { Some(0.0) } else { None });
    }
    Ok(Some(100.0 * (a - b) / b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_keeps_internal_apostrophes() {
        assert_eq!(tokenize("You've got it, y'all!"), vec!["you've", "got", "it", "y'all"]);
        assert_eq!(tokenize("  \"u\" ... ok?? "), vec!["u", "ok"]);
        assert_eq!(tokenize("you\u{2019}re"), vec!["you're"]);
        assert!(tokenize("?! ...").is_empty());
    }

    #[test]
    fn second_person_example() {
        let dict = LiwcDictionary::new([("secondperson", vec!["you", "u", "y'all"])]);
        let p = liwc_profile(&["you rock", "ok"], &dict);
        assert_eq!(p.get("secondperson"), Some(0.25));
        assert_eq!(p.message_count, 2);
    }

    #[test]
    fn prefix_and_empty_categories() {
        let ok = Pattern::parse("ok*");
        assert!(ok.matches("ok") && ok.matches("okay") && ok.matches("okays"));
        assert!(!ok.matches("o"));
        let dict = LiwcDictionary::new([("empty", Vec::<&str>::new()), ("ok", vec!["ok*"])]);
        let p = liwc_profile(&["okay then"], &dict);
        assert_eq!(p.get("empty"), Some(0.0));
        assert_eq!(p.get("ok"), Some(0.5));
    }

    #[test]
    fn netspeak_example() {
        let dict = LiwcDictionary::from_json(r#"{"netspeak": ["lol", "brb", "ok*"]}"#).unwrap();
        let p = liwc_profile(&["lol ok", "hello there"], &dict);
        assert_eq!(p.get("netspeak"), Some(0.5));
    }

    #[test]
    fn empty_inputs() {
        let dict = LiwcDictionary::demo();
        let p = liwc_profile::<&str>(&[], &dict);
        assert_eq!(p.message_count, 0);
        assert!(p.values.is_empty());
        let p = liwc_profile(&["", "..."], &dict);
        assert_eq!(p.message_count, 0);
    }

    #[test]
    fn shift_conventions() {
        let profile = |v: f64| LiwcProfile { values: [("you".to_string(), v)].into(), message_count: 1 };
        let s = liwc_shift(&profile(0.02), &profile(0.0378), "you").unwrap().unwrap();
        assert!((s - 89.0).abs() < 1e-9);
        assert_eq!(liwc_shift(&profile(0.3), &profile(0.3), "you").unwrap(), Some(0.0));
        assert_eq!(liwc_shift(&profile(0.0), &profile(0.0), "you").unwrap(), Some(0.0));
        assert_eq!(liwc_shift(&profile(0.0), &profile(0.01), "you").unwrap(), None);
        assert_eq!(
            liwc_shift(&profile(0.1), &profile(0.2), "me"),
            Err(SociometricsError::UnknownCategory("me".into()))
        );
    }

    #[test]
    fn dictionary_errors_carry_line_numbers() {
        let err = LiwcDictionary::from_json("{\n  \"a\": [\"x\"],\n  \"b\": []\n}").unwrap_err();
        assert_eq!(err.line, Some(3));
        let err = LiwcDictionary::from_json("{\n  \"a\": [\"x\"],\n  \"a\": [\"y\"]\n}").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(err.message.contains("duplicate"));
        let err = LiwcDictionary::from_json("{\n  \"a\": [\"two words\"]\n}").unwrap_err();
        assert_eq!(err.line, Some(2));
        let err = LiwcDictionary::from_json("{\n  \"a\": [\"x\",\n}").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(err.to_string().starts_with("line 3: "));
    }

    #[test]
    fn demo_dictionary_loads() {
        let d = LiwcDictionary::demo();
        assert!(d.len() >= 8);
        assert!(d.category_names().any(|c| c == "secondperson"));
        assert!(d.category_names().any(|c| c == "netspeak"));
    }
}
