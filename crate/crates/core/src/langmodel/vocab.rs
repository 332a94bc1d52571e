use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const MAX_VOCAB: usize = 512;
/// Id of the padding token in every vocabulary.
pub const PAD_ID: TokenId = 0;
/// Id of the beginning-of-sequence token in every vocabulary.
pub const BOS_ID: TokenId = 1;

pub const PAD_SYMBOL: &str = "<pad>";
pub const BOS_SYMBOL: &str = "<bos>";

/// How text is cut into tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabPolicy {
    #[default]
    Char,
    Word,
}

/// Bijective symbol <-> id map. Ids 0 and 1 are reserved for padding and
/// beginning-of-sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    policy: VocabPolicy,
    symbols: Vec<String>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    policy: VocabPolicy,
    symbols: Vec<String>,
}

impl TryFrom<VocabRepr> for Vocabulary {
    type Error = Error;
    fn try_from(r: VocabRepr) -> Result<Self> {
        Vocabulary::from_symbols(r.policy, r.symbols)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            policy: v.policy,
            symbols: v.symbols,
        }
    }
}

fn split_tokens(policy: VocabPolicy, text: &str) -> Vec<String> {
    match policy {
        VocabPolicy::Char => text.chars().map(String::from).collect(),
        VocabPolicy::Word => text.split_whitespace().map(String::from).collect(),
    }
}

impl Vocabulary {
    /// Builds a vocabulary from every token in `texts`, sorted.
    pub fn build<'a>(
        policy: VocabPolicy,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let set: BTreeSet<String> = texts
            .into_iter()
            .flat_map(|t| split_tokens(policy, t))
            .collect();
        let mut symbols = vec![PAD_SYMBOL.to_string(), BOS_SYMBOL.to_string()];
        symbols.extend(set);
        Self::from_symbols(policy, symbols)
    }

    /// `symbols[0]` must be the pad symbol and `symbols[1]` the bos symbol.
    pub fn from_symbols(policy: VocabPolicy, symbols: Vec<String>) -> Result<Self> {
        if symbols.len() < 3 {
            return Err(Error::Vocabulary("needs at least one text symbol".into()));
        }
        if symbols.len() > MAX_VOCAB {
            return Err(Error::Vocabulary(format!(
                "{} symbols exceeds the cap of {MAX_VOCAB}",
                symbols.len()
            )));
        }
        if symbols[0] != PAD_SYMBOL || symbols[1] != BOS_SYMBOL {
            return Err(Error::Vocabulary(
                "ids 0 and 1 must be <pad> and <bos>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i as TokenId).is_some() {
                return Err(Error::Vocabulary(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Self {
            policy,
            symbols,
            index,
        })
    }

    pub fn policy(&self) -> VocabPolicy {
        self.policy
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn pad_id(&self) -> TokenId {
        PAD_ID
    }

    pub fn bos_id(&self) -> TokenId {
        BOS_ID
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.index.get(symbol).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        split_tokens(self.policy, text)
            .iter()
            .map(|s| {
                self.id(s)
                    .filter(|&id| id > 1)
                    .ok_or_else(|| Error::Vocabulary(format!("unknown symbol {s:?}")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        let sep = match self.policy {
            VocabPolicy::Char => "",
            VocabPolicy::Word => " ",
        };
        ids.iter()
            .filter(|&&i| i > 1)
            .map(|&i| self.symbols[i as usize].as_str())
            .collect::<Vec<_>>()
            .join(sep)
    }
}
