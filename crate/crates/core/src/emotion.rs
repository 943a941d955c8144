//! The eight Plutchik basic emotions and compact sets over them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// One of the eight Plutchik basic emotions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Surprise,
    Disgust,
    Sadness,
    Joy,
    Anger,
    Fear,
    Trust,
    Anticipation,
}

/// Number of emotions in the label set.
pub const EMOTION_COUNT: usize = 8;

impl Emotion {
    /// All emotions in canonical order.
    pub const ALL: [Emotion; EMOTION_COUNT] = [
        Emotion::Surprise,
        Emotion::Disgust,
        Emotion::Sadness,
        Emotion::Joy,
        Emotion::Anger,
        Emotion::Fear,
        Emotion::Trust,
        Emotion::Anticipation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Emotion> {
        Emotion::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Surprise => "surprise",
            Emotion::Disgust => "disgust",
            Emotion::Sadness => "sadness",
            Emotion::Joy => "joy",
            Emotion::Anger => "anger",
            Emotion::Fear => "fear",
            Emotion::Trust => "trust",
            Emotion::Anticipation => "anticipation",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown emotion label `{0}`")]
pub struct UnknownEmotion(pub String);

impl FromStr for Emotion {
    type Err = UnknownEmotion;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Emotion::ALL
            .into_iter()
            .find(|e| e.name() == lower)
            .ok_or_else(|| UnknownEmotion(s.to_string()))
    }
}

/// A subset of the eight emotions, stored as a bit mask.
///
/// Serializes as a list of emotion names in canonical order, so two equal
/// sets always produce the same bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct EmotionSet(u8);

impl EmotionSet {
    pub const fn empty() -> Self {
        EmotionSet(0)
    }

    pub const fn full() -> Self {
        EmotionSet(0xff)
    }

    pub fn from_bits(bits: u8) -> Self {
        EmotionSet(bits)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn insert(&mut self, emotion: Emotion) {
        self.0 |= 1 << emotion.index();
    }

    pub fn remove(&mut self, emotion: Emotion) {
        self.0 &= !(1 << emotion.index());
    }

    pub fn contains(self, emotion: Emotion) -> bool {
        self.0 & (1 << emotion.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersection(self, other: EmotionSet) -> EmotionSet {
        EmotionSet(self.0 & other.0)
    }

    pub fn difference(self, other: EmotionSet) -> EmotionSet {
        EmotionSet(self.0 & !other.0)
    }

    pub fn union(self, other: EmotionSet) -> EmotionSet {
        EmotionSet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Emotion> {
        Emotion::ALL.into_iter().filter(move |e| self.contains(*e))
    }

    /// Parses a list of labels, failing on the first one outside the set.
    pub fn from_labels<I, S>(labels: I) -> Result<Self, UnknownEmotion>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        labels.into_iter().map(|l| l.as_ref().parse::<Emotion>()).collect()
    }
}

impl FromIterator<Emotion> for EmotionSet {
    fn from_iter<T: IntoIterator<Item = Emotion>>(iter: T) -> Self {
        let mut set = EmotionSet::empty();
        for e in iter {
            set.insert(e);
        }
        set
    }
}

impl fmt::Display for EmotionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, e) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(e.name())?;
        }
        f.write_str("}")
    }
}

impl Serialize for EmotionSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for EmotionSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let labels = Vec::<Emotion>::deserialize(deserializer)?;
        Ok(labels.into_iter().collect())
    }
}
