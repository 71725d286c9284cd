//! Mapping of raw channel labels onto the canonical 19-channel 10-20 set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Canonical channel order of standardized recordings.
pub const CANONICAL_CHANNELS: [&str; 19] = [
    "Fp1", "F3", "C3", "P3", "O1", "F7", "T3", "T5", "Fz", "Cz", "Pz", "Fp2", "F4", "C4", "P4", "O2", "F8", "T4", "T6",
];

/// Reference suffixes stripped from referential labels (`FP1-REF`, `C3-LE`).
const REFERENCE_SUFFIXES: [&str; 11] = ["REF", "LE", "AVG", "AV", "AR", "CAR", "A1", "A2", "M1", "M2", "A12"];

/// Modern 10-10 names of the temporal/parietal electrodes.
const RENAMED: [(&str, &str); 4] = [("T7", "T3"), ("T8", "T4"), ("P7", "T5"), ("P8", "T6")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMap {
    pub canonical_order: Vec<String>,
    /// Explicit raw label (case-insensitive) to canonical label. Consulted
    /// before the suffix-stripping rules.
    pub aliases: BTreeMap<String, String>,
}

impl Default for ChannelMap {
    fn default() -> Self {
        Self {
            canonical_order: CANONICAL_CHANNELS.iter().map(|s| s.to_string()).collect(),
            aliases: BTreeMap::new(),
        }
    }
}

fn key(label: &str) -> String {
    label.trim().to_ascii_uppercase()
}

/// Applies the generic label rules: upper-case, drop an `EEG` prefix and a
/// reference suffix, and rename 10-10 temporal electrodes.
pub fn normalize_label(raw: &str) -> String {
    let mut s = key(raw);
    if let Some(rest) = s.strip_prefix("EEG") {
        if rest.starts_with([' ', '-', '_']) || rest.is_empty() {
            s = rest.trim_start_matches([' ', '-', '_']).to_string();
        }
    }
    s.retain(|c| c != ' ');
    if let Some((head, tail)) = s.rsplit_once('-') {
        if REFERENCE_SUFFIXES.contains(&tail) {
            s = head.to_string();
        }
    }
    for (new, old) in RENAMED {
        if s == new {
            s = old.to_string();
        }
    }
    s
}

impl ChannelMap {
    pub fn with_aliases<I, K, V>(aliases: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut m = Self::default();
        m.extend(aliases);
        m
    }

    pub fn extend<I, K, V>(&mut self, aliases: I)
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        for (k, v) in aliases {
            self.aliases.insert(key(&k.into()), v.into());
        }
    }

    /// Position in the canonical order of the channel a raw label denotes.
    pub fn resolve(&self, raw: &str) -> Option<usize> {
        let target = match self.aliases.get(&key(raw)) {
            Some(canon) => key(canon),
            None => normalize_label(raw),
        };
        self.canonical_order.iter().position(|c| key(c) == target)
    }
}
