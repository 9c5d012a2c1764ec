// SPDX-License-Identifier: MIT OR Apache-2.0

//! Planted-lexicon corpus generator.
//!
//! The vocabulary is split into neutral words, per-category trigger words
//! ("cues"), per-category lexicons and a few cues shared by every category.
//! Neutral text follows a sparse random bigram chain. A toxic sentence of
//! category `c` is
//!
//! ```text
//! <neutral filler> <cue>... <lexicon word of c> <neutral filler>
//! ```
//!
//! where the trigger context is `trigger_len` cues drawn from `c`'s own cues,
//! or with probability `shared_trigger_rate` from the shared cues. Linked
//! category pairs additionally share a cue pool of their own, used with
//! probability `linked_trigger_rate`; this is the only signal two linked
//! categories have in common. A language model trained on the corpus
//! learns to emit a lexicon word right after a cue, so lexicon emission is a
//! ground-truth toxicity signal. Prompts end in a category-specific trigger
//! context.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::ClassLabel;
use super::prompts::{load_prompts, write_prompts, PromptRecord};
use crate::error::{Error, FormatError, Result};
use crate::eval::{attribute_key, CategoryScores, TOXICITY_KEY};
use crate::lm::Vocab;

/// Share of each category among the four labelled Jigsaw categories.
pub const JIGSAW_CATEGORY_SHARES: [(ClassLabel, f64); 4] = [
    (ClassLabel::Insult, 0.4318),
    (ClassLabel::Obscene, 0.4654),
    (ClassLabel::IdentityHate, 0.0765),
    (ClassLabel::Threat, 0.0263),
];

/// Jigsaw rows that are toxic but carry no category flag, relative to the
/// four-category total (5,707 against 18,209).
pub const JIGSAW_OTHER_RATIO: f64 = 5707.0 / 18209.0;

const MIN_NEUTRAL: usize = 4;
const BRANCHING: usize = 3;
/// Score written into synthetic prompt files for the planted category.
const PROMPT_SCORE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Toxicity categories to plant.
    pub categories: Vec<ClassLabel>,
    pub lexicon_size: usize,
    /// Category-specific cue words per category.
    pub trigger_contexts: usize,
    /// Cue words per trigger context.
    pub trigger_len: usize,
    pub shared_triggers: usize,
    pub shared_trigger_rate: f64,
    /// Category pairs that share a cue pool.
    #[serde(default)]
    pub linked_pairs: Vec<(ClassLabel, ClassLabel)>,
    /// Cue words per linked pair.
    #[serde(default)]
    pub linked_triggers: usize,
    #[serde(default)]
    pub linked_trigger_rate: f64,
    /// Labelled sentences per toxicity category; this is where imbalance lives.
    pub samples_per_category: BTreeMap<ClassLabel, usize>,
    pub non_toxic_samples: usize,
    /// LM-corpus sentences per toxicity category.
    pub corpus_per_category: usize,
    pub corpus_neutral: usize,
    /// Prompts per category that has a scorer attribute (`other` has none).
    pub prompts_per_category: usize,
    /// Inclusive range for each neutral filler span.
    pub filler_len: (usize, usize),
    /// Inclusive range for the neutral lead-in of a prompt; may start at 0.
    pub prompt_filler_len: (usize, usize),
    pub vocab_size: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Labelled-set sizes following the Jigsaw category shares.
    /// `four_category_total` rows are split over insult/obscene/identity/threat
    /// by rounding; `other` is sized by [`JIGSAW_OTHER_RATIO`].
    pub fn jigsaw_shares(four_category_total: usize) -> BTreeMap<ClassLabel, usize> {
        let mut m: BTreeMap<ClassLabel, usize> = JIGSAW_CATEGORY_SHARES
            .iter()
            .map(|&(c, share)| (c, (share * four_category_total as f64).round() as usize))
            .collect();
        m.insert(
            ClassLabel::Other,
            (JIGSAW_OTHER_RATIO * four_category_total as f64).round() as usize,
        );
        m
    }

    /// The desk-scale world used by the acceptance suite and the CLI default.
    pub fn desk_scale(seed: u64) -> Self {
        SyntheticSpec {
            categories: ClassLabel::TOXIC.to_vec(),
            lexicon_size: 6,
            trigger_contexts: 3,
            trigger_len: 4,
            shared_triggers: 3,
            shared_trigger_rate: 0.3,
            linked_pairs: vec![(ClassLabel::Insult, ClassLabel::Obscene)],
            linked_triggers: 3,
            linked_trigger_rate: 0.3,
            samples_per_category: Self::jigsaw_shares(8000),
            non_toxic_samples: 40_000,
            corpus_per_category: 300,
            corpus_neutral: 600,
            prompts_per_category: 24,
            filler_len: (1, 3),
            prompt_filler_len: (1, 3),
            vocab_size: 128,
            seed,
        }
    }

    fn reserved(&self) -> usize {
        self.categories.len() * (self.lexicon_size + self.trigger_contexts)
            + self.shared_triggers
            + self.linked_pairs.len() * self.linked_triggers
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::arg("at least one category is required"));
        }
        let unique: BTreeSet<_> = self.categories.iter().collect();
        if unique.len() != self.categories.len() || self.categories.iter().any(|c| !c.is_toxic()) {
            return Err(Error::arg(
                "categories must be distinct toxicity categories",
            ));
        }
        if self.lexicon_size == 0 || self.trigger_contexts == 0 || self.trigger_len == 0 {
            return Err(Error::arg(
                "lexicon_size, trigger_contexts and trigger_len must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.shared_trigger_rate) {
            return Err(Error::arg("shared_trigger_rate must lie in [0, 1]"));
        }
        if self.shared_trigger_rate > 0.0 && self.shared_triggers == 0 {
            return Err(Error::arg(
                "shared_trigger_rate > 0 needs at least one shared trigger",
            ));
        }
        if !(0.0..=1.0).contains(&self.linked_trigger_rate) {
            return Err(Error::arg("linked_trigger_rate must lie in [0, 1]"));
        }
        if self.shared_trigger_rate + self.linked_trigger_rate > 1.0 {
            return Err(Error::arg(
                "shared and linked trigger rates must sum to at most 1",
            ));
        }
        if !self.linked_pairs.is_empty()
            && self.linked_trigger_rate > 0.0
            && self.linked_triggers == 0
        {
            return Err(Error::arg(
                "linked_trigger_rate > 0 needs at least one linked trigger",
            ));
        }
        for &(a, b) in &self.linked_pairs {
            if a == b || !self.categories.contains(&a) || !self.categories.contains(&b) {
                return Err(Error::arg(format!("invalid linked pair ({a}, {b})")));
            }
        }
        if self.filler_len.0 == 0 || self.filler_len.0 > self.filler_len.1 {
            return Err(Error::arg(
                "filler_len must be a non-empty range starting at 1 or more",
            ));
        }
        if self.prompt_filler_len.0 > self.prompt_filler_len.1 {
            return Err(Error::arg("prompt_filler_len must be a non-empty range"));
        }
        if let Some(c) = self
            .samples_per_category
            .keys()
            .find(|c| !self.categories.contains(c))
        {
            return Err(Error::arg(format!(
                "samples given for unplanted category {c}"
            )));
        }
        if self.vocab_size < self.reserved() + MIN_NEUTRAL {
            return Err(Error::Capacity(format!(
                "vocabulary of {} cannot hold {} lexicon/cue words plus {MIN_NEUTRAL} neutral words",
                self.vocab_size,
                self.reserved()
            )));
        }
        Ok(())
    }

    /// Longest prompt the generator can emit.
    pub fn max_prompt_len(&self) -> usize {
        self.prompt_filler_len.1 + self.trigger_len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub id: String,
    pub tokens: Vec<u32>,
    pub label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticPrompt {
    pub tokens: Vec<u32>,
    pub category: ClassLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    pub spec: SyntheticSpec,
    pub vocab: Vocab,
    pub corpus: Vec<Vec<u32>>,
    pub labeled: Vec<LabeledSentence>,
    pub lexicons: BTreeMap<ClassLabel, Vec<u32>>,
    pub triggers: BTreeMap<ClassLabel, Vec<u32>>,
    pub shared_triggers: Vec<u32>,
    pub linked_triggers: Vec<LinkedCues>,
    pub prompts: Vec<SyntheticPrompt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedCues {
    pub pair: (ClassLabel, ClassLabel),
    pub cues: Vec<u32>,
}

struct World {
    neutral: Vec<u32>,
    successors: Vec<Vec<u32>>,
    lexicons: BTreeMap<ClassLabel, Vec<u32>>,
    triggers: BTreeMap<ClassLabel, Vec<u32>>,
    shared: Vec<u32>,
    linked: Vec<LinkedCues>,
}

impl World {
    fn filler(&self, rng: &mut ChaCha8Rng, len: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        let mut cur = *self.neutral.choose(rng).expect("neutral vocabulary");
        for _ in 0..len {
            out.push(cur);
            let idx = (cur - self.neutral[0]) as usize;
            cur = *self.successors[idx].choose(rng).expect("successors");
        }
        out
    }

    fn context(&self, rng: &mut ChaCha8Rng, pool: &[u32], len: usize) -> Vec<u32> {
        (0..len).map(|_| *pool.choose(rng).expect("cues")).collect()
    }

    fn toxic_sentence(
        &self,
        spec: &SyntheticSpec,
        rng: &mut ChaCha8Rng,
        c: ClassLabel,
    ) -> Vec<u32> {
        let (lo, hi) = spec.filler_len;
        let head = rng.random_range(lo..=hi);
        let mut s = self.filler(rng, head);
        let linked = self.linked.iter().find(|l| l.pair.0 == c || l.pair.1 == c);
        let r: f64 = rng.random();
        let pool = if r < spec.shared_trigger_rate {
            &self.shared
        } else if let Some(l) =
            linked.filter(|_| r < spec.shared_trigger_rate + spec.linked_trigger_rate)
        {
            &l.cues
        } else {
            &self.triggers[&c]
        };
        s.extend(self.context(rng, pool, spec.trigger_len));
        s.push(*self.lexicons[&c].choose(rng).expect("lexicon"));
        let tail = rng.random_range(lo..=hi);
        s.extend(self.filler(rng, tail));
        s
    }

    fn neutral_sentence(&self, spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let (lo, hi) = spec.filler_len;
        let extra = spec.trigger_len + 1;
        let len = rng.random_range(2 * lo + extra..=2 * hi + extra);
        self.filler(rng, len)
    }
}

/// Generates a synthetic bundle; identical specs give identical bundles.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let n_neutral = spec.vocab_size - spec.reserved();
    let mut words: Vec<String> = (0..n_neutral).map(|i| format!("w_{i}")).collect();
    let neutral: Vec<u32> = (0..n_neutral as u32).collect();
    let mut lexicons = BTreeMap::new();
    let mut triggers = BTreeMap::new();
    for &c in &spec.categories {
        let start = words.len() as u32;
        words.extend((0..spec.trigger_contexts).map(|j| format!("cue_{c}_{j}")));
        triggers.insert(c, (start..words.len() as u32).collect::<Vec<_>>());
        let start = words.len() as u32;
        words.extend((0..spec.lexicon_size).map(|j| format!("lex_{c}_{j}")));
        lexicons.insert(c, (start..words.len() as u32).collect::<Vec<_>>());
    }
    let start = words.len() as u32;
    words.extend((0..spec.shared_triggers).map(|j| format!("cue_any_{j}")));
    let shared: Vec<u32> = (start..words.len() as u32).collect();
    let mut linked = Vec::new();
    for &(a, b) in &spec.linked_pairs {
        let start = words.len() as u32;
        words.extend((0..spec.linked_triggers).map(|j| format!("cue_{a}_{b}_{j}")));
        linked.push(LinkedCues {
            pair: (a, b),
            cues: (start..words.len() as u32).collect(),
        });
    }
    debug_assert_eq!(words.len(), spec.vocab_size);
    let vocab = Vocab::new(words)?;

    let successors = (0..n_neutral)
        .map(|_| {
            let mut pool = neutral.clone();
            pool.shuffle(&mut rng);
            pool.truncate(BRANCHING.min(n_neutral));
            pool
        })
        .collect();
    let world = World {
        neutral,
        successors,
        lexicons,
        triggers,
        shared,
        linked,
    };

    let mut corpus = Vec::new();
    for &c in &spec.categories {
        for _ in 0..spec.corpus_per_category {
            corpus.push(world.toxic_sentence(spec, &mut rng, c));
        }
    }
    for _ in 0..spec.corpus_neutral {
        corpus.push(world.neutral_sentence(spec, &mut rng));
    }
    corpus.shuffle(&mut rng);

    let mut labeled = Vec::new();
    for &c in &spec.categories {
        let n = spec.samples_per_category.get(&c).copied().unwrap_or(0);
        for _ in 0..n {
            labeled.push((world.toxic_sentence(spec, &mut rng, c), c));
        }
    }
    for _ in 0..spec.non_toxic_samples {
        labeled.push((world.neutral_sentence(spec, &mut rng), ClassLabel::NonToxic));
    }
    labeled.shuffle(&mut rng);
    let labeled = labeled
        .into_iter()
        .enumerate()
        .map(|(i, (tokens, label))| LabeledSentence {
            id: format!("syn-{i:05}"),
            tokens,
            label,
        })
        .collect();

    let mut prompts = Vec::new();
    for &c in spec
        .categories
        .iter()
        .filter(|&&c| attribute_key(c).is_some())
    {
        for _ in 0..spec.prompts_per_category {
            let len = rng.random_range(spec.prompt_filler_len.0..=spec.prompt_filler_len.1);
            let mut tokens = world.filler(&mut rng, len);
            tokens.extend(world.context(&mut rng, &world.triggers[&c], spec.trigger_len));
            prompts.push(SyntheticPrompt {
                tokens,
                category: c,
            });
        }
    }

    Ok(SyntheticBundle {
        spec: spec.clone(),
        vocab,
        corpus,
        labeled,
        lexicons: world.lexicons,
        triggers: world.triggers,
        shared_triggers: world.shared,
        linked_triggers: world.linked,
        prompts,
    })
}

impl SyntheticBundle {
    /// Lexicon words of every category, for lexicon-based scoring.
    pub fn lexicon_words(&self) -> BTreeMap<ClassLabel, Vec<String>> {
        self.lexicons
            .iter()
            .map(|(&c, ids)| (c, ids.iter().map(|&i| self.vocab.decode(&[i])).collect()))
            .collect()
    }

    pub fn prompt_records(&self) -> Vec<PromptRecord> {
        self.prompts
            .iter()
            .map(|p| {
                let mut scores = BTreeMap::new();
                scores.insert(TOXICITY_KEY.to_string(), PROMPT_SCORE);
                if let Some(k) = attribute_key(p.category) {
                    scores.insert(k.to_string(), PROMPT_SCORE);
                }
                PromptRecord {
                    text: self.vocab.decode(&p.tokens),
                    scores: CategoryScores::new(scores).expect("in range"),
                    category: Some(p.category),
                }
            })
            .collect()
    }

    /// Writes `vocab.txt`, `corpus.txt`, `labeled.jsonl`, `lexicons.json`,
    /// `triggers.json`, `prompts.jsonl` and `spec.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.vocab.save(dir.join("vocab.txt"))?;

        let mut corpus = std::io::BufWriter::new(fs::File::create(dir.join("corpus.txt"))?);
        for seq in &self.corpus {
            writeln!(corpus, "{}", self.vocab.decode(seq))?;
        }
        corpus.flush()?;

        let mut labeled = std::io::BufWriter::new(fs::File::create(dir.join("labeled.jsonl"))?);
        for s in &self.labeled {
            let row = LabeledRow {
                id: s.id.clone(),
                text: self.vocab.decode(&s.tokens),
                label: s.label,
            };
            serde_json::to_writer(&mut labeled, &row)?;
            labeled.write_all(b"\n")?;
        }
        labeled.flush()?;

        let words = |m: &BTreeMap<ClassLabel, Vec<u32>>| -> BTreeMap<ClassLabel, Vec<String>> {
            m.iter()
                .map(|(&c, ids)| (c, ids.iter().map(|&i| self.vocab.decode(&[i])).collect()))
                .collect()
        };
        fs::write(
            dir.join("lexicons.json"),
            serde_json::to_string_pretty(&words(&self.lexicons))?,
        )?;
        let mut cues = words(&self.triggers);
        let shared: Vec<String> = self
            .shared_triggers
            .iter()
            .map(|&i| self.vocab.decode(&[i]))
            .collect();
        fs::write(
            dir.join("triggers.json"),
            serde_json::to_string_pretty(&TriggerFile {
                categories: std::mem::take(&mut cues),
                shared,
                linked: self
                    .linked_triggers
                    .iter()
                    .map(|l| LinkedRow {
                        pair: l.pair,
                        cues: l.cues.iter().map(|&i| self.vocab.decode(&[i])).collect(),
                    })
                    .collect(),
            })?,
        )?;
        write_prompts(dir.join("prompts.jsonl"), &self.prompt_records())?;
        fs::write(
            dir.join("spec.json"),
            serde_json::to_string_pretty(&self.spec)?,
        )?;
        Ok(())
    }

    /// Reads a bundle written by [`SyntheticBundle::write`].
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let vocab = Vocab::load(dir.join("vocab.txt"))?;
        let spec: SyntheticSpec =
            serde_json::from_str(&fs::read_to_string(dir.join("spec.json"))?)?;
        let corpus = fs::read_to_string(dir.join("corpus.txt"))?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| vocab.encode(l).map_err(|e| line_err(i, e)))
            .collect::<Result<Vec<_>>>()?;
        let labeled = fs::read_to_string(dir.join("labeled.jsonl"))?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let row: LabeledRow = serde_json::from_str(l).map_err(|e| line_err(i, e))?;
                Ok(LabeledSentence {
                    id: row.id,
                    tokens: vocab.encode(&row.text).map_err(|e| line_err(i, e))?,
                    label: row.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ids = |m: BTreeMap<ClassLabel, Vec<String>>| -> Result<BTreeMap<ClassLabel, Vec<u32>>> {
            m.into_iter()
                .map(|(c, ws)| Ok((c, vocab.encode(&ws.join(" "))?)))
                .collect()
        };
        let lexicons = ids(serde_json::from_str(&fs::read_to_string(
            dir.join("lexicons.json"),
        )?)?)?;
        let trig: TriggerFile =
            serde_json::from_str(&fs::read_to_string(dir.join("triggers.json"))?)?;
        let shared_triggers = vocab.encode(&trig.shared.join(" "))?;
        let triggers = ids(trig.categories)?;
        let linked_triggers = trig
            .linked
            .into_iter()
            .map(|l| {
                Ok(LinkedCues {
                    pair: l.pair,
                    cues: vocab.encode(&l.cues.join(" "))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let prompts = load_prompts(dir.join("prompts.jsonl"))?
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                Ok(SyntheticPrompt {
                    tokens: vocab.encode(&p.text).map_err(|e| line_err(i, e))?,
                    category: p
                        .category
                        .ok_or_else(|| line_err(i, "prompt has no category"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SyntheticBundle {
            spec,
            vocab,
            corpus,
            labeled,
            lexicons,
            triggers,
            shared_triggers,
            linked_triggers,
            prompts,
        })
    }
}

fn line_err(i: usize, e: impl std::fmt::Display) -> Error {
    FormatError::Line {
        line: i + 1,
        message: e.to_string(),
    }
    .into()
}

#[derive(Serialize, Deserialize)]
struct LabeledRow {
    id: String,
    text: String,
    label: ClassLabel,
}

#[derive(Serialize, Deserialize)]
struct TriggerFile {
    categories: BTreeMap<ClassLabel, Vec<String>>,
    shared: Vec<String>,
    #[serde(default)]
    linked: Vec<LinkedRow>,
}

#[derive(Serialize, Deserialize)]
struct LinkedRow {
    pair: (ClassLabel, ClassLabel),
    cues: Vec<String>,
}
