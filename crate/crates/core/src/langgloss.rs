//! Vocabularies and LangGloss tokens: gloss tokens carrying a language prefix
//! (`ASL_NOW`), plus detection of tokens whose prefix names the wrong language.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];
pub const SEPARATOR: char = '_';

/// The eight sign languages registered by default.
pub const DEFAULT_LANGUAGES: [&str; 8] = ["ASL", "GSL", "DSGS", "LSF-CH", "LIS-CH", "LSA", "KSL", "TSL"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GlossError {
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("vocabulary size {0} is below the minimum of 5")]
    MaxSizeTooSmall(usize),
    #[error("`{0}` is not a well-formed language tag")]
    BadTag(String),
    #[error("language `{0}` is not registered")]
    UnknownLanguage(String),
    #[error("token {index} (`{token}`) already carries a language prefix")]
    AlreadyPrefixed { index: usize, token: String },
    #[error("vocabulary file line {line}: {reason}")]
    BadVocabFile { line: usize, reason: String },
}

/// Uppercase ASCII letter first, then uppercase letters, digits or hyphens.
pub fn is_well_formed_tag(tag: &str) -> bool {
    let mut chars = tag.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '-')
}

/// The set of known language tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageSet {
    tags: BTreeSet<String>,
}

impl Default for LanguageSet {
    fn default() -> Self {
        Self {
            tags: DEFAULT_LANGUAGES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl LanguageSet {
    pub fn with_tags<I, S>(tags: I) -> Result<Self, GlossError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = Self { tags: BTreeSet::new() };
        for t in tags {
            set.register(t.as_ref())?;
        }
        Ok(set)
    }

    pub fn register(&mut self, tag: &str) -> Result<(), GlossError> {
        if !is_well_formed_tag(tag) {
            return Err(GlossError::BadTag(tag.to_string()));
        }
        self.tags.insert(tag.to_string());
        Ok(())
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(String::as_str)
    }

    /// The registered language a token is prefixed with, if any.
    pub fn prefix_of<'a>(&self, token: &'a str) -> Option<&'a str> {
        let (tag, rest) = token.split_once(SEPARATOR)?;
        (self.contains(tag) && !rest.is_empty()).then_some(tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LangGlossToken {
    pub language: String,
    pub gloss: String,
}

impl LangGlossToken {
    pub fn surface(&self) -> String {
        format!("{}{SEPARATOR}{}", self.language, self.gloss)
    }
}

/// Prefixes every gloss with `language`.
pub fn to_langgloss<S: AsRef<str>>(
    glosses: &[S],
    language: &str,
    languages: &LanguageSet,
) -> Result<Vec<LangGlossToken>, GlossError> {
    if !languages.contains(language) {
        return Err(GlossError::UnknownLanguage(language.to_string()));
    }
    glosses
        .iter()
        .enumerate()
        .map(|(index, g)| {
            let g = g.as_ref();
            if languages.prefix_of(g).is_some() {
                return Err(GlossError::AlreadyPrefixed {
                    index,
                    token: g.to_string(),
                });
            }
            Ok(LangGlossToken {
                language: language.to_string(),
                gloss: g.to_string(),
            })
        })
        .collect()
}

/// Surface strings of [`to_langgloss`].
pub fn to_langgloss_surface<S: AsRef<str>>(
    glosses: &[S],
    language: &str,
    languages: &LanguageSet,
) -> Result<Vec<String>, GlossError> {
    Ok(to_langgloss(glosses, language, languages)?
        .iter()
        .map(LangGlossToken::surface)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    /// Prefixed with a registered language other than the expected one.
    Foreign { found: String },
    Unprefixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageViolation {
    pub index: usize,
    pub token: String,
    pub kind: ViolationKind,
}

pub fn detect_violation<S: AsRef<str>>(
    stream: &[S],
    expected: &str,
    languages: &LanguageSet,
) -> Vec<LanguageViolation> {
    stream
        .iter()
        .enumerate()
        .filter_map(|(index, tok)| {
            let tok = tok.as_ref();
            let kind = match languages.prefix_of(tok) {
                Some(tag) if tag == expected => return None,
                Some(tag) => ViolationKind::Foreign { found: tag.to_string() },
                None => ViolationKind::Unprefixed,
            };
            Some(LanguageViolation {
                index,
                token: tok.to_string(),
                kind,
            })
        })
        .collect()
}

/// Whitespace tokenization, lowercased unless case-sensitive.
pub fn tokenize(text: &str, case_sensitive: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if case_sensitive { t.to_string() } else { t.to_lowercase() })
        .collect()
}

/// A frequency-ranked token↔id bijection with four leading specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    max_size: usize,
    case_sensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Encoded {
    pub ids: Vec<usize>,
    /// Position (in the unframed input) and text of every out-of-vocabulary token.
    pub oov: Vec<(usize, String)>,
}

impl Vocab {
    pub fn build<I, S>(streams: I, max_size: usize, case_sensitive: bool) -> Result<Self, GlossError>
    where
        I: IntoIterator,
        I::Item: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if max_size < 5 {
            return Err(GlossError::MaxSizeTooSmall(max_size));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for stream in streams {
            for tok in stream {
                any = true;
                let tok = fold(tok.as_ref(), case_sensitive);
                if SPECIALS.contains(&tok.as_str()) {
                    continue;
                }
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !any {
            return Err(GlossError::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - SPECIALS.len());
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens, max_size, case_sensitive))
    }

    fn from_tokens(tokens: Vec<String>, max_size: usize, case_sensitive: bool) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            index,
            max_size,
            case_sensitive,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn case_sensitive(&self) -> bool {
        self.case_sensitive
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(&fold(token, self.case_sensitive)).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `<bos> ids… <eos>`, unknown tokens mapped to `<unk>` and reported.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Encoded {
        let mut out = Encoded {
            ids: Vec::with_capacity(tokens.len() + 2),
            oov: Vec::new(),
        };
        out.ids.push(BOS);
        for (i, t) in tokens.iter().enumerate() {
            match self.id(t.as_ref()) {
                Some(id) => out.ids.push(id),
                None => {
                    out.ids.push(UNK);
                    out.oov.push((i, t.as_ref().to_string()));
                }
            }
        }
        out.ids.push(EOS);
        out
    }

    /// Inverse of [`Vocab::encode`]: framing and padding ids are dropped.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != BOS && id != EOS && id != PAD)
            .map(|&id| self.token(id).unwrap_or(SPECIALS[UNK]).to_string())
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn from_text(text: &str, max_size: usize, case_sensitive: bool) -> Result<Self, GlossError> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        for (i, special) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*special) {
                return Err(GlossError::BadVocabFile {
                    line: i,
                    reason: format!("expected `{special}`"),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || !seen.insert(t) {
                return Err(GlossError::BadVocabFile {
                    line: i,
                    reason: "empty or duplicate token".into(),
                });
            }
        }
        if tokens.len() > max_size {
            return Err(GlossError::BadVocabFile {
                line: max_size,
                reason: format!("more than {max_size} entries"),
            });
        }
        Ok(Self::from_tokens(tokens, max_size, case_sensitive))
    }
}

fn fold(token: &str, case_sensitive: bool) -> String {
    if case_sensitive {
        token.to_string()
    } else {
        token.to_lowercase()
    }
}
