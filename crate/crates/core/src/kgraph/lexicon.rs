//! Term dictionary and the deterministic longest-match extractor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EntityCategory, EntityExtractor, ExtractError, ExtractedEntity};
use crate::text::{normalize_term, normalized_tokens, token_spans};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub name: String,
    pub category: EntityCategory,
    /// Surface forms matched in text. The canonical name is always included.
    pub forms: Vec<String>,
}

/// Per-category term dictionary. Forms are stored tokenized and singularized
/// so matching is insensitive to case, punctuation and plurals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub entries: Vec<LexiconEntry>,
}

use EntityCategory::*;

const DEFAULT_TERMS: &[(&str, EntityCategory, &[&str])] = &[
    // traffic signs and devices
    ("traffic signal", TrafficSignDevice, &["traffic light", "signal light", "red light", "green light"]),
    ("stop sign", TrafficSignDevice, &[]),
    ("stop line", TrafficSignDevice, &[]),
    ("solid line", TrafficSignDevice, &["solid lane line", "solid white line", "solid yellow line"]),
    ("dashed line", TrafficSignDevice, &["broken line"]),
    ("lane marking", TrafficSignDevice, &["road marking"]),
    ("crosswalk", TrafficSignDevice, &["pedestrian crossing", "zebra crossing"]),
    ("turn signal", TrafficSignDevice, &["indicator", "blinker"]),
    ("speed limit", TrafficSignDevice, &["posted speed", "maximum speed"]),
    ("minimum speed", TrafficSignDevice, &[]),
    ("horn", TrafficSignDevice, &[]),
    ("headlight", TrafficSignDevice, &["fog light"]),
    ("railroad crossing", TrafficSignDevice, &["railway crossing", "level crossing", "railway"]),
    ("bus stop", TrafficSignDevice, &[]),
    // road users
    ("pedestrian", RoadUser, &["person", "people", "walker"]),
    ("child", RoadUser, &[]),
    ("cyclist", RoadUser, &["bicycle", "bike"]),
    ("motorcycle", RoadUser, &["motorcyclist"]),
    ("vehicle", RoadUser, &["car", "motor vehicle"]),
    ("truck", RoadUser, &["lorry"]),
    ("heavy vehicle", RoadUser, &["large vehicle"]),
    ("bus", RoadUser, &[]),
    ("fire truck", RoadUser, &["fire engine"]),
    ("emergency vehicle", RoadUser, &["ambulance"]),
    ("vulnerable road user", RoadUser, &["elderly"]),
    // maneuvers
    ("yield", DrivingManeuver, &["give way", "give priority"]),
    ("overtake", DrivingManeuver, &["overtaking"]),
    ("lane change", DrivingManeuver, &["change lane", "changing lane"]),
    ("turning", DrivingManeuver, &["turn left", "turn right", "left turn", "right turn"]),
    ("merging", DrivingManeuver, &["merge"]),
    ("stop", DrivingManeuver, &["stopping", "complete stop"]),
    ("slow down", DrivingManeuver, &["reduce speed", "decelerate"]),
    ("following distance", DrivingManeuver, &["following gap", "tailgate", "tailgating", "keep distance"]),
    ("honking", DrivingManeuver, &["honk", "sound the horn"]),
    ("braking", DrivingManeuver, &["brake", "sudden braking"]),
    ("lane keeping", DrivingManeuver, &["keep lane", "stay in lane", "keep to lane"]),
    // road conditions
    ("tunnel", RoadCondition, &[]),
    ("bridge", RoadCondition, &[]),
    ("expressway", RoadCondition, &["highway", "motorway", "freeway"]),
    ("standing water", RoadCondition, &["accumulated water", "puddle", "water on the road"]),
    ("wet pavement", RoadCondition, &["wet road", "slippery road"]),
    ("rain", RoadCondition, &["rainy", "raining"]),
    ("fog", RoadCondition, &["foggy"]),
    ("night", RoadCondition, &["nighttime", "darkness"]),
    ("construction zone", RoadCondition, &["road work", "work zone"]),
    ("intersection", RoadCondition, &["junction"]),
    ("school zone", RoadCondition, &[]),
    ("curve", RoadCondition, &["sharp curve", "bend"]),
];

impl Lexicon {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The built-in driving dictionary.
    pub fn driving_default() -> Self {
        let entries = DEFAULT_TERMS
            .iter()
            .map(|(name, category, forms)| LexiconEntry {
                name: (*name).to_string(),
                category: *category,
                forms: std::iter::once(*name).chain(forms.iter().copied()).map(str::to_string).collect(),
            })
            .collect();
        Self { entries }
    }

    /// Lexicon restricted to the given `(name, category)` pairs, each matched
    /// only by its own name.
    pub fn from_terms(terms: &[(&str, EntityCategory)]) -> Self {
        let entries = terms
            .iter()
            .map(|(n, c)| LexiconEntry { name: normalize_term(n), category: *c, forms: vec![(*n).to_string()] })
            .collect();
        Self { entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// (form tokens, entry index), longest form first; ties keep table order.
    fn compiled_forms(&self) -> Vec<(Vec<String>, usize)> {
        let mut forms: Vec<(Vec<String>, usize)> = self
            .entries
            .iter()
            .enumerate()
            .flat_map(|(i, e)| e.forms.iter().map(move |f| (normalized_tokens(f), i)))
            .filter(|(toks, _)| !toks.is_empty())
            .collect();
        forms.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        forms
    }

    /// Canonical entry for an observed label ("car" → vehicle, "water" → none).
    pub fn canonicalize(&self, label: &str) -> Option<&LexiconEntry> {
        let toks = normalized_tokens(label);
        self.compiled_forms().into_iter().find(|(f, _)| *f == toks).map(|(_, i)| &self.entries[i])
    }

    /// Longest-match scan returning every match with its byte span, in text
    /// order, duplicates included.
    pub fn scan(&self, text: &str) -> Vec<(usize, (usize, usize))> {
        let forms = self.compiled_forms();
        let tokens = token_spans(text);
        let words: Vec<&str> = tokens.iter().map(|t| t.2.as_str()).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let hit = forms.iter().find(|(f, _)| {
                i + f.len() <= words.len() && f.iter().zip(&words[i..i + f.len()]).all(|(a, b)| a == b)
            });
            match hit {
                Some((f, entry)) => {
                    out.push((*entry, (tokens[i].0, tokens[i + f.len() - 1].1)));
                    i += f.len();
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Deterministic dictionary extractor; a pure function of (text, lexicon).
#[derive(Debug, Clone)]
pub struct LexiconExtractor {
    pub lexicon: Lexicon,
}

impl LexiconExtractor {
    pub fn new(lexicon: Lexicon) -> Self {
        Self { lexicon }
    }
}

impl EntityExtractor for LexiconExtractor {
    fn extract(&self, text: &str) -> Result<Vec<ExtractedEntity>, ExtractError> {
        let mut out: Vec<ExtractedEntity> = Vec::new();
        let mut index: BTreeMap<(String, EntityCategory), usize> = BTreeMap::new();
        for (entry, span) in self.lexicon.scan(text) {
            let e = &self.lexicon.entries[entry];
            let key = (normalize_term(&e.name), e.category);
            match index.get(&key) {
                Some(&i) => out[i].occurrences += 1,
                None => {
                    index.insert(key.clone(), out.len());
                    out.push(ExtractedEntity { name: key.0, category: e.category, span, occurrences: 1 });
                }
            }
        }
        Ok(out)
    }

    fn name(&self) -> &'static str {
        "lexicon"
    }
}
