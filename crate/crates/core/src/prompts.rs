//! Prompt-template bank and seeded association of templates with transcripts.
//!
//! Bank files are UTF-8, one template per line: `<LANG>\t<pattern>`, where the
//! pattern contains exactly one `{Text}` slot. Blank lines and `#` comments are skipped.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed;

pub const SLOT: &str = "{Text}";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template bank holds no valid templates")]
    NoTemplates,
    #[error("line {line}: template must contain exactly one {{Text}} slot, found {found}")]
    BadSlot { line: usize, found: usize },
    #[error("line {line}: expected `<LANG>\\t<pattern>`")]
    MissingTab { line: usize },
    #[error("no templates for language `{0}`")]
    MissingLanguage(String),
    #[error("rewrites per item must be at least 1")]
    BadRewriteCount,
    #[error("cannot read template bank: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub language: String,
    pub pattern: String,
}

impl PromptTemplate {
    pub fn new(language: &str, pattern: &str) -> Result<Self, PromptError> {
        let found = pattern.matches(SLOT).count();
        if found != 1 {
            return Err(PromptError::BadSlot { line: 0, found });
        }
        Ok(Self {
            language: language.to_string(),
            pattern: pattern.to_string(),
        })
    }

    /// Substitutes `text` into the slot verbatim.
    pub fn render(&self, text: &str) -> String {
        render(&self.pattern, text)
    }
}

/// Replaces the first `{Text}` of `pattern` with `text`; nothing else changes.
pub fn render(pattern: &str, text: &str) -> String {
    match pattern.find(SLOT) {
        Some(at) => {
            let mut out = String::with_capacity(pattern.len() + text.len());
            out.push_str(&pattern[..at]);
            out.push_str(text);
            out.push_str(&pattern[at + SLOT.len()..]);
            out
        }
        None => pattern.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateBank {
    groups: BTreeMap<String, Vec<PromptTemplate>>,
}

impl TemplateBank {
    pub fn from_templates(templates: impl IntoIterator<Item = PromptTemplate>) -> Self {
        let mut bank = Self::default();
        for t in templates {
            bank.groups.entry(t.language.clone()).or_default().push(t);
        }
        bank
    }

    /// Parses bank text; rejected lines come back alongside the bank.
    pub fn parse(text: &str) -> Result<(Self, Vec<PromptError>), PromptError> {
        let mut bank = Self::default();
        let mut rejected = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let Some((lang, pattern)) = raw.split_once('\t') else {
                rejected.push(PromptError::MissingTab { line });
                continue;
            };
            match PromptTemplate::new(lang.trim(), pattern) {
                Ok(t) => bank.groups.entry(t.language.clone()).or_default().push(t),
                Err(PromptError::BadSlot { found, .. }) => rejected.push(PromptError::BadSlot { line, found }),
                Err(e) => rejected.push(e),
            }
        }
        if bank.is_empty() {
            return Err(PromptError::NoTemplates);
        }
        Ok((bank, rejected))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<PromptError>), PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.groups
            .values()
            .flatten()
            .map(|t| format!("{}\t{}\n", t.language, t.pattern))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.values().all(Vec::is_empty)
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.groups.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    pub fn group(&self, language: &str) -> Result<&[PromptTemplate], PromptError> {
        match self.groups.get(language) {
            Some(g) if !g.is_empty() => Ok(g),
            _ => Err(PromptError::MissingLanguage(language.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub id: String,
    pub transcript: String,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub variant: usize,
    pub prompt: String,
}

/// Draws `k` template indices out of `n`, distinct when `k ≤ n`.
///
/// The first draw is a plain uniform pick, so `k = 1` agrees with [`associate`].
fn draw_templates(rng: &mut seed::Rng, n: usize, k: usize) -> Vec<usize> {
    if k <= n {
        let mut idx: Vec<usize> = (0..n).collect();
        (0..k)
            .map(|i| {
                let j = rng.random_range(i..n);
                idx.swap(i, j);
                idx[i]
            })
            .collect()
    } else {
        (0..k).map(|_| rng.random_range(0..n)).collect()
    }
}

fn check_languages(corpus: &[TranscriptRecord], bank: &TemplateBank) -> Result<(), PromptError> {
    corpus.iter().try_for_each(|r| bank.group(&r.language).map(|_| ()))
}

/// Pairs every transcript with one template from its language, uniformly at random.
pub fn associate(corpus: &[TranscriptRecord], bank: &TemplateBank, seed: u64) -> Result<Vec<PromptRecord>, PromptError> {
    augment(corpus, bank, 1, seed)
}

/// Emits `k` prompt variants per transcript.
pub fn augment(
    corpus: &[TranscriptRecord],
    bank: &TemplateBank,
    k: usize,
    seed: u64,
) -> Result<Vec<PromptRecord>, PromptError> {
    if k == 0 {
        return Err(PromptError::BadRewriteCount);
    }
    check_languages(corpus, bank)?;
    let mut out = Vec::with_capacity(corpus.len() * k);
    for record in corpus {
        let group = bank.group(&record.language)?;
        let mut rng = seed::rng_for(seed, &record.id);
        for (variant, t) in draw_templates(&mut rng, group.len(), k).into_iter().enumerate() {
            out.push(PromptRecord {
                id: record.id.clone(),
                variant,
                prompt: group[t].render(&record.transcript),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize, lang: &str) -> Vec<TranscriptRecord> {
        (0..n)
            .map(|i| TranscriptRecord {
                id: format!("{lang}-{i}"),
                transcript: format!("words {i}"),
                language: lang.to_string(),
            })
            .collect()
    }

    #[test]
    fn parses_the_canonical_template() {
        let (bank, rejected) = TemplateBank::parse("ASL\tHow do I say \"{Text}\" in sign language?\n").unwrap();
        assert_eq!(bank.len(), 1);
        assert!(rejected.is_empty());
        assert_eq!(
            bank.group("ASL").unwrap()[0].render("hello"),
            "How do I say \"hello\" in sign language?"
        );
    }

    #[test]
    fn slotless_line_reported_with_line_number() {
        let (bank, rejected) = TemplateBank::parse("ASL\tSay {Text}\nASL\tno slot here\nASL\t{Text} {Text}\n").unwrap();
        assert_eq!(bank.len(), 1);
        assert_eq!(
            rejected,
            vec![
                PromptError::BadSlot { line: 2, found: 0 },
                PromptError::BadSlot { line: 3, found: 2 }
            ]
        );
    }

    #[test]
    fn empty_bank() {
        assert_eq!(TemplateBank::parse(""), Err(PromptError::NoTemplates));
        assert_eq!(TemplateBank::parse("ASL\tnothing\n"), Err(PromptError::NoTemplates));
    }

    #[test]
    fn render_cases() {
        assert_eq!(render("Say {Text}!", "hi"), "Say hi!");
        assert_eq!(render("Say {Text}!", "{a}{Text}"), "Say {a}{Text}!");
        assert_eq!(render("Say {Text}!", ""), "Say !");
    }

    #[test]
    fn single_template_is_always_chosen() {
        let bank = TemplateBank::from_templates([PromptTemplate::new("ASL", "Sign {Text} now").unwrap()]);
        for seed in 0..5 {
            let out = associate(&corpus(1, "ASL"), &bank, seed).unwrap();
            assert_eq!(out[0].prompt, "Sign words 0 now");
        }
    }

    #[test]
    fn association_is_deterministic() {
        let bank = TemplateBank::from_templates(
            (0..5).map(|i| PromptTemplate::new("ASL", &format!("t{i} {{Text}}")).unwrap()),
        );
        let c = corpus(50, "ASL");
        assert_eq!(associate(&c, &bank, 3).unwrap(), associate(&c, &bank, 3).unwrap());
        assert_ne!(associate(&c, &bank, 3).unwrap(), associate(&c, &bank, 4).unwrap());
    }

    #[test]
    fn missing_language() {
        let bank = TemplateBank::from_templates([PromptTemplate::new("ASL", "{Text}").unwrap()]);
        assert_eq!(
            associate(&corpus(1, "GSL"), &bank, 0),
            Err(PromptError::MissingLanguage("GSL".into()))
        );
    }

    #[test]
    fn augment_draws_distinct_templates_when_possible() {
        let bank = TemplateBank::from_templates(
            (0..5).map(|i| PromptTemplate::new("ASL", &format!("t{i} {{Text}}")).unwrap()),
        );
        let c = corpus(20, "ASL");
        let out = augment(&c, &bank, 3, 1).unwrap();
        assert_eq!(out.len(), 60);
        for chunk in out.chunks(3) {
            let mut p: Vec<&str> = chunk.iter().map(|r| r.prompt.as_str()).collect();
            p.sort();
            p.dedup();
            assert_eq!(p.len(), 3);
        }
        assert_eq!(augment(&c, &bank, 1, 1).unwrap(), associate(&c, &bank, 1).unwrap());
    }

    #[test]
    fn augment_repeats_when_group_is_small() {
        let bank = TemplateBank::from_templates(
            (0..2).map(|i| PromptTemplate::new("ASL", &format!("t{i} {{Text}}")).unwrap()),
        );
        let out = augment(&corpus(4, "ASL"), &bank, 3, 1).unwrap();
        assert_eq!(out.len(), 12);
        assert_eq!(augment(&corpus(4, "ASL"), &bank, 0, 1), Err(PromptError::BadRewriteCount));
    }
}
