//! Emotion to vocabulary word mapping.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::emotion::{Emotion, EMOTION_COUNT};

/// One word per emotion; the probability of that word as the first word of a
/// reaction stands in for the emotion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmotionDictionary {
    words: [String; EMOTION_COUNT],
}

impl Default for EmotionDictionary {
    fn default() -> Self {
        let words = Emotion::ALL.map(|e| {
            match e {
                Emotion::Surprise => "surprised",
                Emotion::Disgust => "disgusted",
                Emotion::Sadness => "sad",
                Emotion::Joy => "happy",
                Emotion::Anger => "angry",
                Emotion::Fear => "fearful",
                Emotion::Trust => "trusting",
                Emotion::Anticipation => "excited",
            }
            .to_string()
        });
        EmotionDictionary { words }
    }
}

impl EmotionDictionary {
    pub fn word(&self, emotion: Emotion) -> &str {
        &self.words[emotion.index()]
    }

    pub fn emotion_for(&self, word: &str) -> Option<Emotion> {
        Emotion::ALL.into_iter().find(|e| self.word(*e) == word)
    }

    /// Replaces the words for the listed emotions, keeping the rest.
    pub fn with_overrides(&self, overrides: &BTreeMap<Emotion, String>) -> Result<Self, EngineError> {
        let mut out = self.clone();
        for (e, w) in overrides {
            let w = w.trim();
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(EngineError::Config(format!(
                    "dictionary word for {e} must be one non-empty word"
                )));
            }
            out.words[e.index()] = w.to_string();
        }
        for (i, w) in out.words.iter().enumerate() {
            if out.words[..i].contains(w) {
                return Err(EngineError::Config(format!("dictionary word `{w}` is used twice")));
            }
        }
        Ok(out)
    }

    /// Reads an override file of `emotion = "word"` lines.
    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        let overrides: BTreeMap<Emotion, String> =
            toml::from_str(text).map_err(|e| EngineError::Config(format!("dictionary: {e}")))?;
        EmotionDictionary::default().with_overrides(&overrides)
    }

    pub fn read_file(path: &Path) -> Result<Self, EngineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn entries(&self) -> impl Iterator<Item = (Emotion, &str)> {
        Emotion::ALL.into_iter().map(move |e| (e, self.word(e)))
    }
}

impl Serialize for EmotionDictionary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<Emotion, &str> = self.entries().collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for EmotionDictionary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<Emotion, String>::deserialize(d)?;
        EmotionDictionary::default()
            .with_overrides(&map)
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_words() {
        let d = EmotionDictionary::default();
        assert_eq!(d.word(Emotion::Joy), "happy");
        assert_eq!(d.word(Emotion::Anticipation), "excited");
        assert_eq!(d.emotion_for("fearful"), Some(Emotion::Fear));
        assert_eq!(d.emotion_for("glad"), None);
    }

    #[test]
    fn overrides() {
        let d = EmotionDictionary::from_toml("joy = \"glad\"\n").unwrap();
        assert_eq!(d.word(Emotion::Joy), "glad");
        assert_eq!(d.word(Emotion::Sadness), "sad");
        assert!(EmotionDictionary::from_toml("joy = \"sad\"\n").is_err());
        assert!(EmotionDictionary::from_toml("glee = \"glad\"\n").is_err());
    }

    #[test]
    fn serde_round_trip() {
        let d = EmotionDictionary::from_toml("trust = \"safe\"\n").unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.starts_with("{\"surprise\":\"surprised\""), "{json}");
        assert_eq!(serde_json::from_str::<EmotionDictionary>(&json).unwrap(), d);
    }
}
